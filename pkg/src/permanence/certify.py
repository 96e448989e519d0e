"""Permanence certificates from boundary growth rates.

A certificate is a vector of positive weights ``p`` with
``sum_i p_i r_i > 0`` for every checked boundary object (equilibrium or
sampled boundary measure), where ``r`` collects the species' growth rates
at that object.  Weights are found by a small linear program solved two
ways: exact vertex enumeration (``m <= 3``) and a generic LP solver.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from importlib import metadata

import numpy as np
import scipy
from scipy.optimize import linprog

from .dynamics import ContractError, boundary_sample, default_threads
from .invasion import InvasionEstimate, invasion_rate_measure, rate_at_state
from .model import ExtinctionFace, StructuredModel, proper_faces
from .zoo import MetacommunitySpec, SirSpec

P_MAX = 1e6
RESIDUAL_TOL = 1e-10
CERTIFY_TOL = 1e-9
AGREEMENT_TOL = 1e-9
VERTEX_MAX_M = 3

CERTIFIED = "certified"
INFEASIBLE = "infeasible"
INCOMPLETE = "equilibria-incomplete"

PASSES = "passes"
FAILS = "fails"
UNDECIDED = "inconclusive"
VACUOUS = "vacuous"


@dataclass(frozen=True, eq=False)
class BoundaryEquilibrium:
    """Equilibrium in the relative interior of a face, with its growth vector.

    ``degenerate`` marks a face whose linear system is singular; ``state``
    and ``growth`` are then ``None``.
    """

    face: ExtinctionFace
    state: np.ndarray | None
    growth: np.ndarray | None
    residual: float = 0.0
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "face": sorted(self.face.present),
            "state": None if self.state is None else self.state.tolist(),
            "growth": None if self.growth is None else self.growth.tolist(),
            "residual": self.residual,
            "degenerate": self.degenerate,
        }


def lv_boundary_equilibria(B, c, tol: float = RESIDUAL_TOL) -> list[BoundaryEquilibrium]:
    """Equilibria ``x`` with ``(B x + c)_I = 0``, ``x_I > 0`` on every proper face ``I``.

    Faces whose system is singular are returned as degenerate entries.
    """
    B = np.asarray(B, dtype=float)
    c = np.asarray(c, dtype=float).reshape(-1)
    m = len(c)
    if B.shape != (m, m):
        raise ValueError(f"B must be {m}x{m}")
    if m > 20:
        raise ValueError("face enumeration is limited to m <= 20")
    out = []
    for face in proper_faces(m):
        idx = sorted(face.present)
        x = np.zeros(m)
        if idx:
            sub = B[np.ix_(idx, idx)]
            if np.linalg.matrix_rank(sub) < len(idx):
                out.append(BoundaryEquilibrium(face, None, None, degenerate=True))
                continue
            xi = np.linalg.solve(sub, -c[idx])
            if not np.all(xi > 0):
                continue
            x[idx] = xi
        growth = B @ x + c
        residual = float(np.max(np.abs(growth[idx]))) if idx else 0.0
        if residual > tol:
            out.append(BoundaryEquilibrium(face, None, None, residual, degenerate=True))
            continue
        out.append(BoundaryEquilibrium(face, x, growth, residual))
    return out


@dataclass(frozen=True, eq=False)
class BoundaryObject:
    """A boundary equilibrium or sampled measure with its growth vector."""

    face: ExtinctionFace
    growth: np.ndarray
    label: str = ""
    uncertainty: np.ndarray | None = None
    kind: str = "equilibrium"

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "kind": self.kind,
            "face": sorted(self.face.present),
            "growth": self.growth.tolist(),
            "uncertainty": None if self.uncertainty is None else self.uncertainty.tolist(),
        }


def _as_objects(objects) -> list[BoundaryObject]:
    out = []
    for k, ob in enumerate(objects):
        if isinstance(ob, BoundaryObject):
            out.append(ob)
        elif isinstance(ob, BoundaryEquilibrium):
            out.append(BoundaryObject(ob.face, np.asarray(ob.growth, float), f"equilibrium {ob.face}"))
        else:
            face, r = ob
            r = np.asarray(r, dtype=float)
            if not isinstance(face, ExtinctionFace):
                face = ExtinctionFace(frozenset(face), len(r))
            out.append(BoundaryObject(face, r, f"object {k}"))
    return out


def margin_of(growths, p) -> float:
    """``min_k sum_i p_i r^k_i`` over the objects' growth vectors."""
    return float(np.min(np.asarray(growths, dtype=float) @ np.asarray(p, dtype=float)))


def _lp_linprog(R: np.ndarray, p_max: float) -> tuple[np.ndarray, float] | None:
    K, m = R.shape
    # variables (p, delta); maximise delta  <=>  minimise -delta
    cost = np.zeros(m + 1)
    cost[-1] = -1.0
    A = np.hstack([-R, np.ones((K, 1))])
    bounds = [(1.0, p_max)] * m + [(None, None)]
    res = linprog(cost, A_ub=A, b_ub=np.zeros(K), bounds=bounds, method="highs")
    if res.status != 0:
        return None
    return res.x[:m], float(res.x[-1])


def _lp_vertices(R: np.ndarray, p_max: float) -> tuple[np.ndarray, float] | None:
    """Best vertex of ``{(p, d): d <= R p, 1 <= p <= p_max}`` by enumeration.

    Works in ``q = p / p_max`` for conditioning; ties in ``d`` go to the
    vertex with the largest ``sum p``.
    """
    K, m = R.shape
    G = np.vstack([
        np.hstack([-R, np.ones((K, 1))]),
        np.hstack([-np.eye(m), np.zeros((m, 1))]),
        np.hstack([np.eye(m), np.zeros((m, 1))]),
    ])
    h = np.concatenate([np.zeros(K), np.full(m, -1.0 / p_max), np.ones(m)])
    scale = max(1.0, float(np.abs(R).max(initial=1.0)))
    tol = 1e-12 * scale
    best = None
    for rows in itertools.combinations(range(len(G)), m + 1):
        sub, rhs = G[list(rows)], h[list(rows)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        z = np.linalg.solve(sub, rhs)
        z += np.linalg.solve(sub, rhs - sub @ z)
        if np.all(G @ z <= h + tol):
            key = (z[-1], z[:m].sum())
            if best is None or key[0] > best[0][0] + tol or (
                    abs(key[0] - best[0][0]) <= tol and key[1] > best[0][1]):
                best = (key, z)
    if best is None:
        return None
    z = best[1]
    return np.clip(z[:m] * p_max, 1.0, p_max), float(z[-1] * p_max)


@dataclass(frozen=True, eq=False)
class PermanenceCertificate:
    """Weights normalised to ``min p = 1`` and the margin they achieve.

    ``lp_objective`` is the optimum of the scaled program
    (``1 <= p <= p_max``); ``paths`` records each solution route's
    normalised margin.
    """

    status: str
    weights: np.ndarray | None
    margin: float | None
    objects: list[BoundaryObject]
    lp_objective: float | None = None
    method: str = ""
    paths: dict = field(default_factory=dict)
    kind: str = "equilibria"
    margin_lower: float | None = None
    equilibria: list[BoundaryEquilibrium] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def certified(self) -> bool:
        return self.status == CERTIFIED

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "kind": self.kind,
            "weights": None if self.weights is None else self.weights.tolist(),
            "margin": self.margin,
            "margin_lower": self.margin_lower,
            "lp_objective": self.lp_objective,
            "method": self.method,
            "paths": dict(self.paths),
            "objects": [o.to_dict() for o in self.objects],
            "equilibria": [e.to_dict() for e in self.equilibria],
            "notes": list(self.notes),
            "versions": tool_versions(),
        }


def tool_versions() -> dict:
    try:
        own = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {"permanence": own, "numpy": np.__version__, "scipy": scipy.__version__}


def certificate_search(objects, p_max: float = P_MAX, method: str = "auto") -> PermanenceCertificate:
    """Maximise ``d`` subject to ``p . r^k >= d`` for all objects and ``1 <= p <= p_max``.

    ``method`` is ``"vertex"``, ``"linprog"`` or ``"auto"`` (both when
    ``m <= 3``, cross-checked; linprog otherwise).  The program is always
    feasible; a nonpositive optimum means no certificate exists.
    """
    objs = _as_objects(objects)
    if not objs:
        raise ContractError("no boundary objects to certify against")
    R = np.stack([o.growth for o in objs])
    if not np.all(np.isfinite(R)):
        raise ContractError("growth vectors must be finite")
    m = R.shape[1]
    if method not in ("auto", "vertex", "linprog"):
        raise ValueError(f"unknown method {method!r}")
    routes = {}
    if method in ("auto", "vertex"):
        if m > VERTEX_MAX_M:
            if method == "vertex":
                raise ValueError(f"vertex enumeration is limited to m <= {VERTEX_MAX_M}")
        else:
            routes["vertex"] = _lp_vertices(R, p_max)
    if method in ("auto", "linprog"):
        routes["linprog"] = _lp_linprog(R, p_max)

    notes = []
    paths = {}
    chosen = None
    for name, sol in routes.items():
        if sol is None:
            paths[name] = None
            continue
        p, obj = sol
        pn = p / p.min()
        paths[name] = {"margin": margin_of(R, pn), "objective": obj, "weights": pn.tolist()}
        if chosen is None:
            chosen = (name, pn, obj)
    if chosen is None:
        return PermanenceCertificate(INFEASIBLE, None, None, objs, method=method, paths=paths,
                                     notes=["linear program reported no optimum"])
    if len([v for v in paths.values() if v]) == 2:
        gap = abs(paths["vertex"]["margin"] - paths["linprog"]["margin"])
        paths["margin_gap"] = gap
        if gap > AGREEMENT_TOL * max(1.0, abs(paths["vertex"]["margin"])):
            notes.append(f"solution routes disagree on the margin by {gap:.3g}")
    name, pn, obj = chosen
    margin = margin_of(R, pn)
    lower = margin
    if any(o.uncertainty is not None for o in objs):
        U = np.stack([np.zeros(m) if o.uncertainty is None else o.uncertainty for o in objs])
        lower = float(np.min(R @ pn - U @ pn))
    status = CERTIFIED if lower > CERTIFY_TOL else INFEASIBLE
    return PermanenceCertificate(status, pn, margin, objs, obj, name, paths, margin_lower=lower, notes=notes)


def certify_lv(B, c, p_max: float = P_MAX, method: str = "auto") -> PermanenceCertificate:
    """Certificate over all boundary equilibria of an LV map.

    A singular face makes the search incomplete: its equilibria cannot be
    enumerated, so no positive verdict is issued.
    """
    eqs = lv_boundary_equilibria(B, c)
    good = [e for e in eqs if not e.degenerate]
    cert = certificate_search(good, p_max, method)
    degenerate = [e for e in eqs if e.degenerate]
    notes = list(cert.notes)
    status = cert.status
    if degenerate:
        notes.append("degenerate faces: " + ", ".join(str(e.face) for e in degenerate))
        if status == CERTIFIED:
            status = INCOMPLETE
    return PermanenceCertificate(status, cert.weights, cert.margin, cert.objects, cert.lp_objective,
                                 cert.method, cert.paths, "equilibria", cert.margin_lower, eqs, notes)


def _growth_vector(model: StructuredModel, mu, face) -> tuple[np.ndarray, np.ndarray, list[InvasionEstimate]]:
    ests = [invasion_rate_measure(model, i, mu, face) for i in range(model.m)]
    r = np.array([e.value for e in ests])
    u = np.array([e.uncertainty for e in ests])
    return r, u, ests


def certify_sampled(model: StructuredModel, n_starts: int = 4, horizon: int = 20_000,
                    faces=None, p_max: float = P_MAX, method: str = "auto",
                    threads: int | None = None) -> PermanenceCertificate:
    """Certificate over sampled boundary measures of a general model.

    ``faces`` restricts the search to user-declared faces (Morse sets);
    all proper faces are used otherwise.  Faces with no admissible state
    are skipped with a note.  The certificate is labelled ``sampled`` and
    its lower margin subtracts the weighted estimation uncertainties.
    """
    faces = proper_faces(model.m) if faces is None else list(faces)
    threads = default_threads() if threads is None else threads
    objs, notes = [], []
    for face in faces:
        try:
            mus = boundary_sample(model, face, n_starts, horizon, threads=threads)
        except ContractError as err:
            notes.append(str(err))
            continue
        for k, mu in enumerate(mus):
            r, u, _ = _growth_vector(model, mu, face)
            objs.append(BoundaryObject(face, r, f"face {face} start {k}", u, "sampled"))
    if any(not np.all(np.isfinite(o.growth)) for o in objs):
        # a rate of -inf makes every weighted sum -inf
        return PermanenceCertificate(INFEASIBLE, None, None, objs, kind="sampled",
                                     notes=notes + ["some species has rate -inf on a boundary measure"])
    cert = certificate_search(objs, p_max, method)
    return PermanenceCertificate(cert.status, cert.weights, cert.margin, cert.objects, cert.lp_objective,
                                 cert.method, cert.paths, "sampled", cert.margin_lower,
                                 notes=cert.notes + notes)


@dataclass(frozen=True, eq=False)
class ConditionResult:
    name: str
    value: float | None
    verdict: str

    def to_dict(self) -> dict:
        return {"condition": self.name, "value": self.value, "verdict": self.verdict}


@dataclass(frozen=True, eq=False)
class TwoSpeciesReport:
    conditions: list[ConditionResult]

    @property
    def verdict(self) -> str:
        kinds = {c.verdict for c in self.conditions}
        if FAILS in kinds:
            return FAILS
        if UNDECIDED in kinds:
            return UNDECIDED
        return PASSES

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "conditions": [c.to_dict() for c in self.conditions]}


def _classify(value: float | None, tol: float) -> str:
    if value is None:
        return VACUOUS
    if value > tol:
        return PASSES
    if value < -tol:
        return FAILS
    return UNDECIDED


def two_species_check(model: StructuredModel, n_starts: int = 4, horizon: int = 20_000,
                      tol: float = 1e-3, threads: int | None = None) -> TwoSpeciesReport:
    """Mutual invasibility test for two species.

    Checks that some species grows at the origin and that each species
    invades every sampled measure on the other's face; the worst sampled
    rate is reported.  A face with no admissible state is vacuous.
    """
    if model.m != 2:
        raise ContractError("two_species_check needs exactly two species")
    origin = np.zeros(model.n)
    r0 = float(max(rate_at_state(model, i, origin).value for i in range(2)))
    conds = [ConditionResult("max_i r_i(0) > 0", r0, _classify(r0, tol))]
    for resident, invader in ((0, 1), (1, 0)):
        face = ExtinctionFace(frozenset({resident}), 2)
        try:
            mus = boundary_sample(model, face, n_starts, horizon, threads=threads)
            worst = float(min(invasion_rate_measure(model, invader, mu, face).value for mu in mus))
        except ContractError:
            worst = None
        conds.append(ConditionResult(f"r_{invader} > 0 on face {face}", worst, _classify(worst, tol)))
    return TwoSpeciesReport(conds)


@dataclass(frozen=True, eq=False)
class SirThreshold:
    """Endemic threshold of the SIR map with rational recruitment.

    ``value = e^{-m} beta x_bar`` uses the closed form
    ``x_bar = (1/c)(1/sqrt(1 - e^{-m}) - 1)``, which lies below the true
    disease-free equilibrium ``(1/c)(1/(1 - e^{-m}) - 1)``.  Since the
    infection rate at the equilibrium increases with ``x``, ``value > 1``
    implies ``exact_value > 1``.
    """

    value: float
    certified: bool
    x_bar: float
    equilibrium: float
    exact_value: float
    r1_origin: float
    printed_value: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def sir_threshold(spec: SirSpec) -> SirThreshold:
    if spec.c is None:
        raise ContractError("the closed-form threshold needs rational recruitment")
    m, beta, c = spec.m, spec.beta, spec.c
    q = math.exp(-m)
    x_bar = (1.0 / math.sqrt(1.0 - q) - 1.0) / c
    x_eq = spec.disease_free_equilibrium()
    value = q * beta * x_bar
    r1 = math.log(1.0 + q)  # f(0) = 1
    return SirThreshold(
        value=value,
        certified=bool(value > 1.0 and r1 > 0.0),
        x_bar=x_bar,
        equilibrium=x_eq,
        exact_value=q * beta * x_eq,
        r1_origin=r1,
        printed_value=math.exp(-m * beta) * x_bar,
    )


@dataclass(frozen=True, eq=False)
class MetaCondition:
    v1: float
    v2: float
    certified: bool
    caveat: str = ("holds for dispersal close enough to the identity; the distance is not "
                   "quantified, probe it with a robustness sweep")

    def to_dict(self) -> dict:
        return {"v1": self.v1, "v2": self.v2, "certified": self.certified, "caveat": self.caveat}


def meta_condition(spec: MetacommunitySpec) -> MetaCondition:
    """Best-patch invasion rates of each species against the other alone.

    ``v1 = max_j c^j_0 - B^j_01 c^j_1 / B^j_11`` and symmetrically for
    ``v2``; both positive certifies coexistence for near-identity dispersal.
    """
    B, c = spec.B, spec.c
    v1 = float(np.max(c[:, 0] - B[:, 0, 1] * c[:, 1] / B[:, 1, 1]))
    v2 = float(np.max(c[:, 1] - B[:, 1, 0] * c[:, 0] / B[:, 0, 0]))
    return MetaCondition(v1, v2, bool(v1 > 0 and v2 > 0))
