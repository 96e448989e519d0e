"""Orbits, empirical occupation measures and the empirical permanence test."""
from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from . import _kernels as K
from .model import (
    EXTINCTION_TOL,
    ExtinctionFace,
    StructuredModel,
    StructuredState,
    pattern_mismatches,
)

DIVERGENCE_FACTOR = 1e3
MAX_ATOMS = 10 ** 6
MAX_CYCLE = 64
THREADS_ENV = "PERMANENCE_THREADS"

PERMANENT = "permanent-empirically"
WITNESS = "extinction-witness"
INCONCLUSIVE = "inconclusive"


class ContractError(ValueError):
    """Inputs violate an operation's precondition."""


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def default_burn_in(horizon: int) -> int:
    return horizon // 10


@dataclass(frozen=True, eq=False)
class OrbitStats:
    """Per-start summaries of a batch of orbits.

    ``min_norm`` and ``window_max`` cover the post-burn-in states
    ``burn_in <= k < horizon``; ``late_max`` covers the last half.
    ``stop[s]`` is the index of the last valid state when ``status[s]`` is
    not ``OK``.
    """

    starts: np.ndarray
    horizon: int
    burn_in: int
    min_norm: np.ndarray
    window_max: np.ndarray
    late_max: np.ndarray
    final: np.ndarray
    status: np.ndarray
    stop: np.ndarray
    bad_species: np.ndarray
    diverged: np.ndarray
    underflow: np.ndarray
    states: np.ndarray | None = None


def _kernel_args(model: StructuredModel):
    ks = model.kernel
    n = model.n
    sign = np.zeros(n) if ks.coord_sign is None else np.asarray(ks.coord_sign, dtype=float)
    inner = ks.psi_inner or (np.full(n, -np.inf), np.full(n, np.inf))
    outer = ks.psi_outer or (np.full(n, -np.inf), np.full(n, np.inf))
    return (ks.code, np.asarray(ks.fp, dtype=float), np.asarray(ks.ip, dtype=np.int64),
            float(ks.delta), sign, np.asarray(inner[0], float), np.asarray(inner[1], float),
            np.asarray(outer[0], float), np.asarray(outer[1], float))


def _alloc(n_starts, n, m, horizon, nwin, record):
    return dict(
        states=np.zeros((n_starts, horizon + 1, n) if record else (1, 1, 1)),
        min_norm=np.zeros((n_starts, m)),
        window_max=np.zeros((n_starts, m, nwin)),
        late_max=np.zeros((n_starts, m)),
        final=np.zeros((n_starts, n)),
        status=np.zeros(n_starts, dtype=np.int64),
        stop=np.zeros(n_starts, dtype=np.int64),
        bad_species=np.zeros(n_starts, dtype=np.int64),
        diverged=np.zeros(n_starts, dtype=np.bool_),
        underflow=np.zeros((n_starts, m), dtype=np.bool_),
    )


def _run_kernel(model, starts, horizon, burn_in, nwin, record):
    out = _alloc(len(starts), model.n, model.m, horizon, nwin, record)
    K.run(*_kernel_args(model), model.offsets, model.box_heights(),
          np.ascontiguousarray(starts, dtype=float), horizon, burn_in,
          horizon - horizon // 2, nwin, record, out["states"], out["min_norm"],
          out["window_max"], out["late_max"], out["final"], out["status"], out["stop"],
          out["bad_species"], out["diverged"], out["underflow"], EXTINCTION_TOL)
    return out


def _run_numpy(model, starts, horizon, burn_in, nwin, record):
    n_starts, n, m = len(starts), model.n, model.m
    out = _alloc(n_starts, n, m, horizon, nwin, record)
    out["min_norm"][:] = np.inf
    out["stop"][:] = horizon
    out["bad_species"][:] = -1
    heights = DIVERGENCE_FACTOR * model.box_heights()
    post = horizon - burn_in
    late_start = horizon - horizon // 2
    off = model.offsets
    x = np.array(starts, dtype=float)
    alive = np.arange(n_starts)
    if record:
        out["states"][:, 0] = x
    for k in range(horizon):
        xa = x[alive]
        norms = model.block_norms(xa)
        out["diverged"][alive] |= np.any(norms > heights, axis=1)
        if k >= burn_in:
            w = ((k - burn_in) * nwin) // post
            out["min_norm"][alive] = np.minimum(out["min_norm"][alive], norms)
            out["window_max"][alive, :, w] = np.maximum(out["window_max"][alive, :, w], norms)
            if k >= late_start:
                out["late_max"][alive] = np.maximum(out["late_max"][alive], norms)
        bad_dom = ~model.in_domain(xa)
        if bad_dom.any():
            out["status"][alive[bad_dom]] = K.OUT_OF_DOMAIN
            out["stop"][alive[bad_dom]] = k
        keep = ~bad_dom
        y = np.full_like(xa, np.nan)
        if keep.any():
            with np.errstate(over="ignore", invalid="ignore"):
                mats = model.matrices(xa[keep])
                yk = np.empty_like(xa[keep])
                for i, a in enumerate(mats):
                    yk[:, off[i]:off[i + 1]] = np.einsum("sj,sjk->sk", xa[keep][:, off[i]:off[i + 1]], a)
            y[keep] = yk
        finite = np.isfinite(y)
        bad_num = keep & ~finite.all(axis=1)
        if bad_num.any():
            for r in np.flatnonzero(bad_num):
                first = int(np.flatnonzero(~finite[r])[0])
                out["bad_species"][alive[r]] = int(np.searchsorted(off, first, side="right") - 1)
            out["status"][alive[bad_num]] = K.NONFINITE
            out["stop"][alive[bad_num]] = k
        good = keep & ~bad_num
        ynorms = model.block_norms(y[good])
        out["underflow"][alive[good]] |= (norms[good] > EXTINCTION_TOL) & (ynorms <= EXTINCTION_TOL)
        x[alive[good]] = y[good]
        out["final"][alive[~good]] = xa[~good]
        alive = alive[good]
        if record:
            out["states"][alive, k + 1] = x[alive]
        if alive.size == 0:
            break
    out["final"][alive] = x[alive]
    return out


def run_orbits(model: StructuredModel, starts, horizon: int, burn_in: int | None = None,
               record: bool = False, nwin: int = 16, threads: int | None = None) -> OrbitStats:
    """Iterate many starts; the compiled path is used when the model has one."""
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    if starts.shape[1] != model.n:
        raise ContractError(f"starts have dimension {starts.shape[1]}, model needs {model.n}")
    if np.any(starts < 0):
        raise ContractError("starts must be nonnegative")
    burn_in = default_burn_in(horizon) if burn_in is None else int(burn_in)
    if not horizon > burn_in >= 0:
        raise ContractError(f"need horizon > burn_in >= 0, got {horizon}, {burn_in}")
    runner = _run_kernel if model.kernel is not None else _run_numpy
    threads = default_threads() if threads is None else threads
    chunks = np.array_split(np.arange(len(starts)), min(max(threads, 1), len(starts)))
    if len(chunks) == 1:
        parts = [runner(model, starts, horizon, burn_in, nwin, record)]
    else:
        with ThreadPoolExecutor(len(chunks)) as pool:
            parts = list(pool.map(lambda idx: runner(model, starts[idx], horizon, burn_in, nwin, record),
                                  chunks))
    merged = {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}
    states = merged.pop("states")
    return OrbitStats(starts=starts, horizon=horizon, burn_in=burn_in,
                      states=states if record else None, **merged)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States ``X_0, ..., X_t`` of one orbit (truncated on numeric failure)."""

    model: StructuredModel
    states: np.ndarray
    horizon: int
    burn_in: int
    diverged: bool = False
    underflow: tuple[int, ...] = ()
    error: str | None = None
    error_step: int | None = None
    pattern_violations: int = 0

    @property
    def x0(self) -> StructuredState:
        return self.model.state(self.states[0])

    @property
    def tail(self) -> np.ndarray:
        """Post-burn-in states ``X_burn, ..., X_{t-1}``."""
        end = min(self.horizon, len(self.states))
        return self.states[self.burn_in:end]

    def norms(self) -> np.ndarray:
        return self.model.block_norms(self.states)

    def summary(self) -> dict:
        tail_norms = self.model.block_norms(self.tail) if len(self.tail) else np.zeros((0, self.model.m))
        return {
            "model": self.model.name,
            "horizon": self.horizon,
            "burn_in": self.burn_in,
            "steps": len(self.states) - 1,
            "mean": self.tail.mean(axis=0).tolist() if len(self.tail) else None,
            "min_norms": tail_norms.min(axis=0).tolist() if len(tail_norms) else None,
            "max_norms": tail_norms.max(axis=0).tolist() if len(tail_norms) else None,
            "final": self.states[-1].tolist(),
            "diverged": self.diverged,
            "underflow": list(self.underflow),
            "error": self.error,
            "error_step": self.error_step,
            "pattern_violations": self.pattern_violations,
        }


def _count_pattern_violations(model, states) -> int:
    if len(states) == 0:
        return 0
    mats = model.matrices(states)
    bad = np.zeros(len(states), dtype=bool)
    for a, pat in zip(mats, model.patterns):
        bad |= np.any((a > 0) != pat.entries, axis=(-2, -1))
    return int(bad.sum())


_STATUS_TEXT = {K.NONFINITE: "numeric overflow", K.OUT_OF_DOMAIN: "state left the model domain"}


def _trajectories(model, stats: OrbitStats, check_patterns: bool) -> list[Trajectory]:
    out = []
    for s in range(len(stats.starts)):
        status = int(stats.status[s])
        stop = int(stats.stop[s])
        states = stats.states[s, :stop + 1] if status != K.OK else stats.states[s]
        states.setflags(write=False)
        error = None
        if status != K.OK:
            error = _STATUS_TEXT[status]
            if status == K.NONFINITE:
                error += f" in species {int(stats.bad_species[s])}"
        out.append(Trajectory(
            model=model, states=states, horizon=stats.horizon, burn_in=stats.burn_in,
            diverged=bool(stats.diverged[s]),
            underflow=tuple(np.flatnonzero(stats.underflow[s]).tolist()),
            error=error, error_step=None if status == K.OK else stop + 1,
            pattern_violations=_count_pattern_violations(model, states) if check_patterns else 0,
        ))
    return out


def simulate(model: StructuredModel, x0, horizon: int, burn_in: int | None = None,
             check_patterns: bool = True) -> Trajectory:
    """Iterate ``x0`` for ``horizon`` steps and keep every state.

    Visited states are checked against the sign patterns unless
    ``check_patterns`` is off.
    """
    x0 = model.state(x0).values
    stats = run_orbits(model, x0[None, :], horizon, burn_in, record=True, threads=1)
    return _trajectories(model, stats, check_patterns)[0]


def simulate_many(model, starts, horizon, burn_in=None, check_patterns=False, threads=None):
    stats = run_orbits(model, starts, horizon, burn_in, record=True, threads=threads)
    return _trajectories(model, stats, check_patterns)


@dataclass(frozen=True, eq=False)
class OccupationMeasure:
    """Uniform measure on the post-burn-in states of one orbit.

    Atoms are deduplicated; above ``MAX_ATOMS`` states only moments are kept.
    ``cycle`` holds the orbit in order when the sampled states form an exact
    periodic orbit.
    """

    atoms: np.ndarray | None
    weights: np.ndarray | None
    horizon: int
    mean: np.ndarray
    second_moment: np.ndarray
    trajectory: Trajectory | None = None
    cycle: np.ndarray | None = None

    @property
    def is_streaming(self) -> bool:
        return self.atoms is None

    def face(self, model: StructuredModel | None = None, tol: float = EXTINCTION_TOL) -> ExtinctionFace:
        """Species carrying positive mass on the support."""
        model = model or self.trajectory.model
        if self.atoms is not None:
            norms = model.block_norms(self.atoms).max(axis=0)
        else:
            norms = model.block_norms(self.mean)
        return ExtinctionFace.of_norms(norms, tol)

    def supported_on(self, face: ExtinctionFace, model: StructuredModel, tol: float = EXTINCTION_TOL) -> bool:
        if self.atoms is None:
            norms = model.block_norms(self.mean)[None, :]
        else:
            norms = model.block_norms(self.atoms)
        absent = sorted(face.absent)
        return bool(np.all(norms[:, absent] <= tol)) if absent else True

    def expect(self, fn) -> np.ndarray:
        if self.atoms is None:
            raise ValueError("streaming measure keeps moments only")
        vals = np.asarray(fn(self.atoms), dtype=float)
        return np.tensordot(self.weights, vals, axes=(0, 0))

    def to_rows(self) -> np.ndarray:
        """``(weight, coordinates...)`` per atom."""
        if self.atoms is None:
            raise ValueError("streaming measure keeps moments only")
        return np.column_stack([self.weights, self.atoms])


def occupation_measure(traj: Trajectory, shift: int = 0, dedupe: bool = True,
                       max_atoms: int = MAX_ATOMS) -> OccupationMeasure:
    """Empirical measure ``(1/t) sum_s delta_{X_s}`` over the post-burn-in window.

    ``shift`` moves the window forward by that many steps.
    """
    start = traj.burn_in + shift
    stop = min(traj.horizon + shift, len(traj.states))
    tail = traj.states[start:stop]
    if len(tail) == 0:
        raise ContractError("trajectory has no post-burn-in states")
    mean = tail.mean(axis=0)
    second = (tail * tail).mean(axis=0)
    if len(tail) > max_atoms:
        return OccupationMeasure(None, None, len(tail), mean, second, trajectory=traj)
    if dedupe:
        atoms, counts = np.unique(tail, axis=0, return_counts=True)
    else:
        atoms, counts = tail, np.ones(len(tail))
    weights = counts / counts.sum()
    cycle = None
    p = len(atoms)
    if dedupe and p <= MAX_CYCLE and len(tail) >= 2 * p and np.array_equal(tail[p:], tail[:-p]):
        cycle = tail[:p].copy()
    return OccupationMeasure(atoms, weights, len(tail), mean, second, trajectory=traj, cycle=cycle)


def total_variation(mu: OccupationMeasure, nu: OccupationMeasure) -> float:
    """``sup_A |mu(A) - nu(A)|`` for atomic measures."""
    atoms = np.concatenate([mu.atoms, nu.atoms])
    w = np.concatenate([mu.weights, -nu.weights])
    _, inverse = np.unique(atoms, axis=0, return_inverse=True)
    diff = np.zeros(inverse.max() + 1)
    np.add.at(diff, inverse.reshape(-1), w)
    return 0.5 * float(np.abs(diff).sum())


def face_starts(model: StructuredModel, face: ExtinctionFace, n_starts: int) -> np.ndarray:
    """Deterministic Halton points in the box slice of a face.

    Absent species are zero; present coordinates lie in ``(0, upper]``.
    """
    n = model.n
    if not face.present:
        return np.zeros((1, n))
    off = model.offsets
    coords = np.concatenate([np.arange(off[i], off[i + 1]) for i in sorted(face.present)])
    pts = qmc.Halton(d=len(coords), scramble=False).random(n_starts + 1)[1:]
    starts = np.zeros((n_starts, n))
    lo, hi = model.box_lower[coords], model.box_upper[coords]
    starts[:, coords] = lo + pts * (hi - lo)
    return starts


def boundary_sample(model: StructuredModel, face: ExtinctionFace, n_starts: int = 8,
                    horizon: int = 10_000, burn_in: int | None = None,
                    threads: int | None = None) -> list[OccupationMeasure]:
    """Occupation measures of orbits started inside a boundary face."""
    if face.is_interior:
        raise ContractError("boundary sampling needs a proper face")
    starts = face_starts(model, face, n_starts)
    starts = starts[model.in_domain(starts)]
    if len(starts) == 0:
        raise ContractError(f"face {face} has no admissible states for model {model.name}")
    trajs = simulate_many(model, starts, horizon, burn_in, threads=threads)
    return [occupation_measure(t) for t in trajs]


def interior_starts(model: StructuredModel, per_axis: int) -> np.ndarray:
    """Interior lattice of the trapping box, ``per_axis`` ticks per coordinate.

    Points outside the model domain, or where some ``A_i`` breaks its sign
    pattern (e.g. no susceptibles left in the SIR map), are dropped.
    """
    from .model import lattice
    pts = lattice(model.box_lower, model.box_upper, per_axis, interior=True)
    pts = pts[model.in_domain(pts)]
    keep = np.ones(len(pts), dtype=bool)
    for a, pat in zip(model.matrices(pts), model.patterns):
        keep &= np.all((a > 0) == pat.entries, axis=(-2, -1))
    return pts[keep]


@dataclass(frozen=True, eq=False)
class PermanenceVerdict:
    verdict: str
    eta: float | None
    floor: float
    floors: np.ndarray
    witness_state: np.ndarray | None = None
    witness_species: int | None = None
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "eta": self.eta,
            "floor": self.floor,
            "witness_state": None if self.witness_state is None else self.witness_state.tolist(),
            "witness_species": self.witness_species,
            "notes": list(self.notes),
        }


def permanence_test(model: StructuredModel, eta_grid, starts, horizon: int,
                    burn_in: int | None = None, threads: int | None = None,
                    nwin: int = 16) -> PermanenceVerdict:
    """Finite-horizon check of uniform repulsion from the extinction set.

    A species is an extinction witness when, along some orbit, its windowed
    maxima never increase after burn-in, are still falling in the last
    window (or are below the extinction tolerance), and it stays at or below the smallest
    ``eta`` for the whole second half of the horizon.  Otherwise
    the verdict is permanent when the post-burn-in floor over all starts and
    species exceeds some ``eta`` of the grid.
    """
    eta_grid = np.asarray(eta_grid, dtype=float)
    if eta_grid.ndim != 1 or eta_grid.size == 0 or np.any(np.diff(eta_grid) >= 0):
        raise ContractError("eta grid must be nonempty and strictly decreasing")
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    if np.any(model.block_norms(starts) <= 0):
        raise ContractError("every start must have all species present")
    stats = run_orbits(model, starts, horizon, burn_in, nwin=nwin, threads=threads)
    eta_min = float(eta_grid[-1])
    notes = []
    ok = stats.status == K.OK
    if not ok.all():
        notes.append(f"{int((~ok).sum())} orbit(s) stopped early: "
                     + ", ".join(sorted({_STATUS_TEXT[int(s)] for s in stats.status[~ok]})))
    if stats.diverged.any():
        notes.append("some orbit exceeded 1e3 times the box height")

    wm = stats.window_max
    monotone = np.all(np.diff(wm, axis=-1) <= 0, axis=-1)
    # a settled orbit is not decaying: demand a strict drop at the end or extinction
    decaying = (wm[..., -1] < wm[..., -2]) | (wm[..., -1] <= EXTINCTION_TOL)
    witness = ok[:, None] & monotone & decaying & (stats.late_max <= eta_min)
    floors = np.where(ok[:, None], stats.min_norm, np.nan)
    floor = float(np.nanmin(floors)) if ok.any() else float("nan")
    if witness.any():
        s, i = (int(v) for v in np.argwhere(witness)[0])
        return PermanenceVerdict(WITNESS, None, floor, floors, starts[s].copy(), i, notes)
    passing = eta_grid[eta_grid < floor] if ok.all() else np.array([])
    if passing.size:
        return PermanenceVerdict(PERMANENT, float(passing.max()), floor, floors, notes=notes)
    return PermanenceVerdict(INCONCLUSIVE, None, floor, floors, notes=notes)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def trajectory_csv(traj: Trajectory) -> str:
    """One row per step; columns are the flattened blocks."""
    return _csv(["step", *traj.model.labels],
                ([k, *row] for k, row in enumerate(traj.states.tolist())))


def measure_csv(mu: OccupationMeasure, model: StructuredModel) -> str:
    """One row per atom: weight then coordinates."""
    return _csv(["weight", *model.labels], mu.to_rows().tolist())
