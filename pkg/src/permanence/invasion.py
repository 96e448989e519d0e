"""Long-term growth rates of species blocks along orbits and measures.

The rate of species ``i`` is the dominant Lyapunov exponent of the cocycle
``A_i(X_0) A_i(X_1) ...`` acting on nonnegative row vectors.  Two estimators
are provided: pushing an arbitrary positive vector and averaging its log
growth, and tracking the dominant direction ``u`` to average
``zeta = ln |u A_i|``.  They agree in the limit and serve as each other's
oracle.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .dynamics import (
    ContractError,
    OccupationMeasure,
    Trajectory,
    face_starts,
    run_orbits,
)
from .model import (
    IRREDUCIBLE,
    ExtinctionFace,
    StructuredModel,
    irreducible_components,
    lattice,
)

log = logging.getLogger(__name__)

NORM = "vector-norm"
BIRKHOFF = "birkhoff"
ANALYTIC = "analytic"

MIN_WINDOW = 1000
PRE_ROLL = 200
N_DYADIC = 4
START_AGREEMENT = 10.0


@dataclass(frozen=True, eq=False)
class InvasionEstimate:
    """Estimated exponent of one species (or one irreducible component).

    ``window_means`` are averages over the dyadic prefixes of the window,
    longest last; ``uncertainty`` is half the spread of the last four.
    ``limsup`` is the largest window mean.  In the irreducible-components
    mode ``components`` holds the per-component estimates and ``value`` is
    their maximum.
    """

    species: int
    value: float
    method: str
    component: int | None = None
    indices: tuple[int, ...] | None = None
    uncertainty: float = 0.0
    window_means: tuple[float, ...] = ()
    direction: np.ndarray | None = None
    steps: int = 0
    nilpotent_step: int | None = None
    start_gap: float | None = None
    components: tuple["InvasionEstimate", ...] = ()

    @property
    def limsup(self) -> float:
        return max(self.window_means) if self.window_means else self.value

    @property
    def start_independent(self) -> bool | None:
        """Whether two starting vectors agreed within ten uncertainties."""
        if self.start_gap is None:
            return None
        if not np.isfinite(self.value):
            return self.start_gap == 0.0
        return self.start_gap <= max(START_AGREEMENT * self.uncertainty, 1e-10 * max(1.0, abs(self.value)))

    def to_dict(self) -> dict:
        return {
            "species": self.species,
            "component": self.component,
            "indices": None if self.indices is None else list(self.indices),
            "value": _jsonable(self.value),
            "uncertainty": _jsonable(self.uncertainty),
            "limsup": _jsonable(self.limsup),
            "window_means": [_jsonable(v) for v in self.window_means],
            "method": self.method,
            "steps": self.steps,
            "nilpotent_step": self.nilpotent_step,
            "start_gap": self.start_gap,
            "direction": None if self.direction is None else self.direction.tolist(),
            "components": [c.to_dict() for c in self.components],
        }


def _jsonable(v: float):
    v = float(v)
    if np.isfinite(v):
        return v
    return "-inf" if v < 0 else ("inf" if v > 0 else "nan")


def dyadic_means(incs: np.ndarray) -> tuple[float, ...]:
    """Means over prefixes of length ``T / 2^k``, shortest first, down to ``MIN_WINDOW / 8``."""
    t = len(incs)
    csum = np.cumsum(incs)
    lengths = []
    L = t
    while L >= 1 and (len(lengths) < N_DYADIC or L >= MIN_WINDOW // 8):
        lengths.append(L)
        L //= 2
    return tuple(float(csum[L - 1] / L) for L in reversed(lengths))


def _uncertainty(means: tuple[float, ...]) -> float:
    last = np.asarray(means[-N_DYADIC:])
    if not np.all(np.isfinite(last)):
        return 0.0
    return 0.5 * float(last.max() - last.min())


def _components(model: StructuredModel, i: int) -> list[tuple[int, ...]]:
    if model.mode == IRREDUCIBLE:
        return irreducible_components(model.patterns[i])
    return [tuple(range(model.dims[i]))]


def _block_mats(model: StructuredModel, i: int, states: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(model.matrices(states)[i])


def _window(traj: Trajectory) -> np.ndarray:
    tail = traj.tail
    if len(tail) < MIN_WINDOW:
        raise ContractError(f"need at least {MIN_WINDOW} post-burn-in states, got {len(tail)}")
    return tail


def _estimate(species, comp, idx, incs, direction, method, nil, start_gap=None):
    steps = len(incs)
    if nil >= 0:
        return InvasionEstimate(species, -np.inf, method, comp, idx, 0.0, (-np.inf,), direction,
                                steps, nilpotent_step=int(nil), start_gap=start_gap)
    means = dyadic_means(incs)
    return InvasionEstimate(species, float(incs.mean()), method, comp, idx, _uncertainty(means),
                            means, direction, steps, start_gap=start_gap)


def _combine(species, method, parts: list[InvasionEstimate]) -> InvasionEstimate:
    if len(parts) == 1:
        return parts[0]
    best = max(parts, key=lambda e: e.value)
    gaps = [p.start_gap for p in parts if p.start_gap is not None]
    return InvasionEstimate(species, best.value, method, best.component, best.indices, best.uncertainty,
                            best.window_means, best.direction, best.steps, best.nilpotent_step,
                            max(gaps) if gaps else None, tuple(parts))


def _second_start(d: int) -> np.ndarray:
    v = np.arange(1.0, d + 1.0)
    return v / v.sum()


def invasion_rate_norm(model: StructuredModel, i: int, traj: Trajectory) -> InvasionEstimate:
    """Average log growth of a positive vector pushed through the cocycle.

    The post-burn-in window is used.  The estimate is repeated from a second
    positive vector and the gap is recorded; by the independence of the limit
    from the starting vector the two must agree.
    """
    mats = _block_mats(model, i, _window(traj))
    parts = []
    for j, idx in enumerate(_components(model, i)):
        sub = np.ascontiguousarray(mats[:, idx][:, :, idx])
        d = len(idx)
        incs, v, nil = K.propagate(sub, np.full(d, 1.0 / d))
        gap = 0.0
        if d > 1:
            incs2, _, nil2 = K.propagate(sub, _second_start(d))
            if nil < 0 and nil2 < 0:
                gap = abs(float(incs.mean() - incs2.mean()))
            elif (nil < 0) != (nil2 < 0):
                gap = np.inf
        est = _estimate(i, j, idx, incs, v, NORM, nil, gap)
        if est.start_independent is False:
            log.warning("species %d component %d: starting vectors disagree by %.3g", i, j, gap)
        parts.append(est)
    return _combine(i, NORM, parts)


def invasion_rate_birkhoff(model: StructuredModel, i: int, traj: Trajectory,
                           pre_roll: int = PRE_ROLL) -> InvasionEstimate:
    """Average of ``zeta = ln |u A_i|`` along the tracked dominant direction.

    The direction is first rolled over ``pre_roll`` states preceding the
    window (taken from inside the window when the burn-in is shorter).
    """
    tail = _window(traj)
    if traj.burn_in >= pre_roll:
        lead = traj.states[traj.burn_in - pre_roll:traj.burn_in]
        window = tail
    else:
        if len(tail) - pre_roll < MIN_WINDOW // 2:
            raise ContractError("window too short for the direction pre-roll")
        lead, window = tail[:pre_roll], tail[pre_roll:]
    lead_mats = _block_mats(model, i, lead) if len(lead) else None
    mats = _block_mats(model, i, window)
    parts = []
    for j, idx in enumerate(_components(model, i)):
        d = len(idx)
        u = np.full(d, 1.0 / d)
        if lead_mats is not None and d > 1:
            _, u, nil = K.propagate(np.ascontiguousarray(lead_mats[:, idx][:, :, idx]), u)
            if nil >= 0:
                u = np.full(d, 1.0 / d)
        zeta, u, nil = K.propagate(np.ascontiguousarray(mats[:, idx][:, :, idx]), u)
        parts.append(_estimate(i, j, idx, zeta, u, BIRKHOFF, nil))
    return _combine(i, BIRKHOFF, parts)


def _log_spectral_radius(P: np.ndarray) -> tuple[float, np.ndarray]:
    """``ln rho(P)`` and the left Perron vector (l1-normalised) of a nonnegative matrix."""
    if P.shape == (1, 1):
        with np.errstate(divide="ignore"):
            return float(np.log(P[0, 0])), np.ones(1)
    w, vecs = np.linalg.eig(P.T)
    k = int(np.argmax(np.abs(w)))
    rho = float(np.abs(w[k]))
    v = np.abs(np.real(vecs[:, k]))
    s = v.sum()
    v = v / s if s > 0 else np.full(len(v), 1.0 / len(v))
    with np.errstate(divide="ignore"):
        return float(np.log(rho)), v


def _cycle_rate(model: StructuredModel, i: int, cycle: np.ndarray) -> InvasionEstimate:
    mats = model.matrices(cycle)[i]
    parts = []
    for j, idx in enumerate(_components(model, i)):
        sub = mats[:, idx][:, :, idx]
        if len(idx) == 1:
            with np.errstate(divide="ignore"):
                value = float(np.log(sub[:, 0, 0]).sum() / len(cycle))
            vec = np.ones(1)
        else:
            P = np.eye(len(idx))
            logscale = 0.0
            for a in sub:
                P = P @ a
                s = P.sum()
                if s == 0:
                    break
                P /= s
                logscale += np.log(s)
            lr, vec = _log_spectral_radius(P) if P.sum() > 0 else (-np.inf, np.full(len(idx), 1.0 / len(idx)))
            value = (lr + logscale) / len(cycle)
        parts.append(InvasionEstimate(i, value, ANALYTIC, j, idx, 0.0, (value,), vec, len(cycle)))
    return _combine(i, ANALYTIC, parts)


def rate_at_state(model: StructuredModel, i: int, x) -> InvasionEstimate:
    """Exact rate at a fixed point: ``ln`` of the spectral radius of ``A_i(x)``."""
    x = model.state(x).values
    return _cycle_rate(model, i, x[None, :])


def invasion_rate_measure(model: StructuredModel, i: int, mu: OccupationMeasure,
                          face: ExtinctionFace | None = None, method: str = BIRKHOFF) -> InvasionEstimate:
    """Rate of species ``i`` averaged against an occupation measure.

    Measures sitting on a fixed point or periodic orbit are handled exactly
    through the matrix product over the cycle; otherwise the generating
    trajectory is fed to the chosen estimator.
    """
    if face is not None and not mu.supported_on(face, model):
        raise ContractError(f"measure is not supported on face {face}")
    if mu.cycle is not None:
        return _cycle_rate(model, i, mu.cycle)
    if mu.trajectory is None:
        raise ContractError("measure carries no generating trajectory")
    if method == NORM:
        return invasion_rate_norm(model, i, mu.trajectory)
    return invasion_rate_birkhoff(model, i, mu.trajectory)


def face_lattice(model: StructuredModel, face: ExtinctionFace, per_axis: int) -> np.ndarray:
    """Interior lattice of the box slice of a face (absent species zero)."""
    n = model.n
    off = model.offsets
    coords = np.concatenate([np.arange(off[i], off[i + 1]) for i in sorted(face.present)])
    pts = lattice(model.box_lower[coords], model.box_upper[coords], per_axis, interior=True)
    out = np.zeros((len(pts), n))
    out[:, coords] = pts
    return out[model.in_domain(out)]


@dataclass(frozen=True, eq=False)
class UniformBound:
    value: float
    per_component: tuple[float, ...]
    best_t: tuple[int, ...]
    grid_size: int
    t_max: int
    refined: "UniformBound | None" = None
    notes: list[str] = field(default_factory=list)

    @property
    def refinement_change(self) -> float | None:
        return None if self.refined is None else abs(self.refined.value - self.value)

    def to_dict(self) -> dict:
        out = {"value": self.value, "per_component": list(self.per_component),
               "best_t": list(self.best_t), "grid_size": self.grid_size, "t_max": self.t_max}
        if self.refined is not None:
            out["refined"] = self.refined.to_dict()
            out["refinement_change"] = self.refinement_change
        return out


def uniform_invasion_lower_bound(model: StructuredModel, i: int, face: ExtinctionFace, grid,
                                 t_max: int, chunk: int = 64, threads: int | None = None) -> UniformBound:
    """``max_j sup_{t <= t_max} (1/t) min_{x in grid} sum_{s<t} log f^i_j(X_s(x))``.

    ``log f^i_j`` is the log growth factor of species ``i`` in its ``j``-th
    diagonal slot (patch).  Each term bounds from below the integral of
    ``log f^i_j`` against every invariant measure on the face, up to grid
    resolution.
    """
    if i in face.present:
        raise ContractError(f"face {face} must exclude species {i}")
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise ContractError("empty grid")
    if not np.all(model.block_norms(grid)[:, i] == 0):
        raise ContractError("grid states must lie on the face")
    if t_max < 1:
        raise ContractError("t_max must be at least 1")
    d = model.dims[i]
    worst = np.full((t_max, d), np.inf)
    steps = np.arange(1, t_max + 1)[:, None]
    for lo in range(0, len(grid), chunk):
        part = grid[lo:lo + chunk]
        # horizon t_max records states X_0..X_{t_max}; only the first t_max are summed
        stats = run_orbits(model, part, t_max, burn_in=0, record=True, threads=threads)
        if np.any(stats.status != K.OK):
            raise ContractError("an orbit on the face failed numerically")
        lf = model.fitness(stats.states[:, :t_max])[i]  # (chunk, t_max, d)
        avg = np.cumsum(lf, axis=1) / steps
        worst = np.minimum(worst, avg.min(axis=0))
    best_t = np.argmax(worst, axis=0)
    per = worst[best_t, np.arange(d)]
    return UniformBound(float(per.max()), tuple(float(v) for v in per),
                        tuple(int(t) + 1 for t in best_t), len(grid), t_max)


def refined_lower_bound(model: StructuredModel, i: int, face: ExtinctionFace, per_axis: int,
                        t_max: int, threads: int | None = None) -> UniformBound:
    """Lower bound on a face lattice and on the lattice with half the spacing."""
    coarse = uniform_invasion_lower_bound(model, i, face, face_lattice(model, face, per_axis), t_max,
                                          threads=threads)
    fine = uniform_invasion_lower_bound(model, i, face, face_lattice(model, face, 2 * per_axis + 1),
                                        t_max, threads=threads)
    return UniformBound(coarse.value, coarse.per_component, coarse.best_t, coarse.grid_size,
                        coarse.t_max, refined=fine)


__all__ = [
    "ANALYTIC", "BIRKHOFF", "NORM", "InvasionEstimate", "UniformBound", "dyadic_means",
    "face_lattice", "face_starts", "invasion_rate_birkhoff", "invasion_rate_measure",
    "invasion_rate_norm", "rate_at_state", "refined_lower_bound", "uniform_invasion_lower_bound",
]
