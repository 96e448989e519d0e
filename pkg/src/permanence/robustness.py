"""Delta-perturbations of a model and sweeps over perturbation size.

A perturbation multiplies the matrices of target species by
``exp(sign * psi(x) * delta / 2)``, where ``psi`` is a smoothstep bump equal
to one on an inner box and zero outside an outer box (or identically one).
Its deviation ``|A(x) - A^delta(x)|`` is sampled on the inflated trapping
box and must not exceed ``delta``.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .certify import PASSES, two_species_check
from .dynamics import (
    PERMANENT,
    ContractError,
    boundary_sample,
    interior_starts,
    permanence_test,
)
from .model import ExtinctionFace, KernelSpec, StructuralError, StructuredModel, lattice

log = logging.getLogger(__name__)

SUPPRESS = "suppress"
INFLATE = "inflate"
CUSTOM = "custom"
MODES = (SUPPRESS, INFLATE, CUSTOM)

GRID_POINTS = 20_000
LOCAL_PAD = 0.1

VALID = "ok"
INVALID = "spec-too-large"


class PerturbationTooLarge(ValueError):
    """Sampled deviation exceeds delta; ``state`` is the worst sampled point."""

    def __init__(self, deviation: float, delta: float, state: np.ndarray):
        self.deviation = deviation
        self.delta = delta
        self.state = state
        super().__init__(f"sampled deviation {deviation:.6g} exceeds delta {delta:.6g} "
                         f"at state {np.array2string(state, precision=6)}")


@dataclass(frozen=True, eq=False)
class Bump:
    """Product of cubic smoothsteps: one on ``inner``, zero outside ``outer``."""

    inner_lo: np.ndarray
    inner_hi: np.ndarray
    outer_lo: np.ndarray
    outer_hi: np.ndarray

    def __post_init__(self):
        for name in ("inner_lo", "inner_hi", "outer_lo", "outer_hi"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not (np.all(self.outer_lo < self.inner_lo) and np.all(self.inner_lo <= self.inner_hi)
                and np.all(self.inner_hi < self.outer_hi)):
            raise ValueError("bump boxes must be strictly nested")

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lo = np.clip((x - self.outer_lo) / (self.inner_lo - self.outer_lo), 0.0, 1.0)
        hi = np.clip((self.outer_hi - x) / (self.outer_hi - self.inner_hi), 0.0, 1.0)
        t = np.minimum(lo, hi)
        return np.prod(t * t * (3.0 - 2.0 * t), axis=-1)


@dataclass(frozen=True, eq=False)
class PerturbationSpec:
    """Which species to perturb, how, by how much and where.

    ``bump=None`` means ``psi`` is identically one.  In the custom mode
    ``additive(x)`` returns per-species matrices added to ``A_i(x)``.
    """

    delta: float
    species: tuple[int, ...]
    mode: str = SUPPRESS
    bump: Bump | None = None
    additive: Callable[[np.ndarray], Sequence[np.ndarray]] | None = None
    label: str = ""

    def __post_init__(self):
        if not self.delta >= 0:
            raise ValueError("delta must be nonnegative")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if (self.mode == CUSTOM) != (self.additive is not None):
            raise ValueError("the custom mode needs an additive term, and only it")
        object.__setattr__(self, "species", tuple(int(i) for i in self.species))

    def with_delta(self, delta: float) -> "PerturbationSpec":
        return dataclasses.replace(self, delta=delta)

    def psi(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.ones(x.shape[:-1]) if self.bump is None else self.bump(x)


def _deviation_grid(model: StructuredModel, spec: PerturbationSpec, inflate: float) -> np.ndarray:
    lo = np.maximum(model.box_lower - inflate, 0.0)
    hi = model.box_upper + inflate
    per_axis = int(min(101, max(3, np.floor(GRID_POINTS ** (1.0 / model.n)))))
    pts = [lattice(lo, hi, per_axis)]
    if spec.bump is not None:
        # the bump's support can fall between coarse ticks
        blo = np.clip(spec.bump.outer_lo, lo, hi)
        bhi = np.clip(spec.bump.outer_hi, lo, hi)
        if np.all(bhi > blo):
            pts.append(lattice(blo, bhi, per_axis))
    grid = np.concatenate(pts)
    return grid[model.in_domain(grid)]


def _row_sum_norm(a: np.ndarray) -> np.ndarray:
    """Operator norm for row vectors under l1: the maximal row sum."""
    return np.abs(a).sum(axis=-1).max(axis=-1)


def perturb(model: StructuredModel, spec: PerturbationSpec, inflate: float = 1.0) -> StructuredModel:
    """Model with ``A^delta_i = A_i exp(sign psi delta / 2)`` on target species.

    The deviation is sampled on the trapping box inflated by ``inflate``
    (and on the bump's support); ``PerturbationTooLarge`` carries the worst
    state when it exceeds ``delta``.
    """
    for i in spec.species:
        if not 0 <= i < model.m:
            raise ContractError(f"no species {i} in a {model.m}-species model")
    sign = {SUPPRESS: -1.0, INFLATE: 1.0, CUSTOM: 0.0}[spec.mode]
    base = model.evaluator
    targets = set(spec.species)
    delta = float(spec.delta)

    def evaluator(x):
        mats = [np.asarray(a, dtype=float) for a in base(x)]
        if delta == 0.0:
            return mats
        if spec.mode == CUSTOM:
            extra = spec.additive(x)
            return [a + np.asarray(e) if i in targets else a for i, (a, e) in enumerate(zip(mats, extra))]
        factor = np.exp(sign * spec.psi(x) * delta / 2.0)[..., None, None]
        return [a * factor if i in targets else a for i, a in enumerate(mats)]

    def log_fitness(x):
        lf = model.fitness(x)
        if delta == 0.0 or spec.mode == CUSTOM:
            return lf
        shift = sign * spec.psi(x) * delta / 2.0
        return [f + shift[..., None] if i in targets else f for i, f in enumerate(lf)]

    grid = _deviation_grid(model, spec, inflate)
    deviation, witness = 0.0, None
    if delta > 0 and len(grid):
        old = model.matrices(grid)
        new = evaluator(grid)
        dev = np.max(np.stack([_row_sum_norm(a - b) for a, b in zip(old, new)], axis=-1), axis=-1)
        k = int(np.argmax(dev))
        deviation, witness = float(dev[k]), grid[k]
        for i, (a, pat) in enumerate(zip(new, model.patterns)):
            if np.any(a < 0) or np.any((a > 0) != pat.entries):
                raise StructuralError(f"perturbation breaks nonnegativity or the sign pattern of species {i}")
        if deviation > delta * (1.0 + 1e-12):
            raise PerturbationTooLarge(deviation, delta, witness)

    kernel = None
    if model.kernel is not None and spec.mode != CUSTOM and model.kernel.delta == 0.0:
        coord = np.zeros(model.n)
        off = model.offsets
        for i in targets:
            coord[off[i]:off[i + 1]] = sign
        inner = outer = None
        if spec.bump is not None:
            inner = (spec.bump.inner_lo, spec.bump.inner_hi)
            outer = (spec.bump.outer_lo, spec.bump.outer_hi)
        kernel = dataclasses.replace(model.kernel, delta=delta, coord_sign=coord,
                                     psi_inner=inner, psi_outer=outer)
    elif model.kernel is not None and delta == 0.0:
        kernel = model.kernel

    upper = model.box_upper.copy()
    if spec.mode == INFLATE and delta > 0:
        off = model.offsets
        for i in targets:
            upper[off[i]:off[i + 1]] *= np.exp(delta / 2.0)
    info = dict(model.info)
    info["perturbation"] = {"delta": delta, "mode": spec.mode, "species": list(spec.species),
                            "label": spec.label, "deviation": deviation,
                            "witness": None if witness is None else witness.tolist()}
    return model.replace(evaluator=evaluator, log_fitness=log_fitness, kernel=kernel, box_upper=upper,
                         name=f"{model.name}+{spec.label or spec.mode}", info=info)


def boundary_bump(model: StructuredModel, species: int, n_starts: int = 4, horizon: int = 5_000,
                  pad: float = LOCAL_PAD) -> Bump | None:
    """Bump around the attractor of the face that lacks ``species``.

    The inner box is the bounding box of the sampled post-burn-in states
    widened by ``pad`` box heights per coordinate; the outer box by twice
    that.  Returns ``None`` when the face has no admissible state.
    """
    face = ExtinctionFace(frozenset(set(range(model.m)) - {species}), model.m)
    try:
        mus = boundary_sample(model, face, n_starts, horizon)
    except ContractError:
        return None
    atoms = np.concatenate([mu.atoms if mu.atoms is not None else mu.mean[None, :] for mu in mus])
    width = pad * np.maximum(model.box_upper - model.box_lower, 1e-12)
    lo, hi = atoms.min(axis=0), atoms.max(axis=0)
    return Bump(lo - width, hi + width, lo - 2 * width, hi + 2 * width)


def canonical_directions(model: StructuredModel, delta: float = 0.0, n_starts: int = 4,
                         horizon: int = 5_000) -> list[PerturbationSpec]:
    """Suppress and inflate each species, with ``psi = 1`` and with ``psi``
    localised at the attractor of the face lacking that species."""
    out = []
    for i in range(model.m):
        out.append(PerturbationSpec(delta, (i,), SUPPRESS, label=f"suppress-{i}-global"))
        out.append(PerturbationSpec(delta, (i,), INFLATE, label=f"inflate-{i}-global"))
        bump = boundary_bump(model, i, n_starts, horizon)
        if bump is None:
            log.info("species %d: face without it has no admissible state; no localised directions", i)
            continue
        out.append(PerturbationSpec(delta, (i,), SUPPRESS, bump, label=f"suppress-{i}-boundary"))
        out.append(PerturbationSpec(delta, (i,), INFLATE, bump, label=f"inflate-{i}-boundary"))
    return out


@dataclass(frozen=True)
class SweepCell:
    delta: float
    direction: str
    status: str
    verdict: str | None
    floor: float | None
    deviation: float | None
    eta: float | None = None
    note: str = ""

    @property
    def passing(self) -> bool:
        return self.verdict in (PERMANENT, PASSES)


@dataclass(frozen=True, eq=False)
class SweepReport:
    """Cells ordered by (delta, direction).

    ``delta_star`` is the largest tested delta such that at every tested
    delta up to it, all valid cells pass and at least one cell was valid.
    """

    analysis: str
    deltas: tuple[float, ...]
    cells: list[SweepCell]
    notes: list[str] = field(default_factory=list)

    def passing_deltas(self) -> list[float]:
        out = []
        for d in self.deltas:
            valid = [c for c in self.cells if c.delta == d and c.status == VALID]
            if valid and all(c.passing for c in valid):
                out.append(d)
        return out

    @property
    def delta_star(self) -> float | None:
        passing = set(self.passing_deltas())
        best = None
        for d in self.deltas:
            if d not in passing:
                break
            best = d
        return best

    @property
    def monotone(self) -> bool:
        """Whether the passing set is downward closed in the tested deltas."""
        passing = set(self.passing_deltas())
        flags = [d in passing for d in self.deltas]
        return all(not later or earlier for earlier, later in zip(flags, flags[1:]))

    def summary(self) -> str:
        ds = self.delta_star
        if ds is None:
            return "a failure was found at the smallest tested delta"
        return f"no failure found up to delta* = {ds:g}"

    def to_dict(self) -> dict:
        return {
            "analysis": self.analysis,
            "deltas": list(self.deltas),
            "delta_star": self.delta_star,
            "monotone": self.monotone,
            "summary": self.summary(),
            "cells": [dataclasses.asdict(c) for c in self.cells],
            "notes": list(self.notes),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["delta", "direction", "status", "verdict", "floor", "deviation", "eta"])
        for c in self.cells:
            w.writerow([repr(c.delta), c.direction, c.status, c.verdict or "",
                        "" if c.floor is None else repr(c.floor),
                        "" if c.deviation is None else repr(c.deviation),
                        "" if c.eta is None else repr(c.eta)])
        return buf.getvalue()


def robustness_sweep(model: StructuredModel, deltas, analysis: str = "permanence_test",
                     directions: Sequence[PerturbationSpec] | None = None,
                     eta_grid=(0.1, 0.05, 0.01, 1e-3), starts=None, horizon: int = 20_000,
                     burn_in: int | None = None, inflate: float = 1.0, threads: int | None = None,
                     n_boundary_starts: int = 4, boundary_horizon: int = 5_000,
                     tol: float = 1e-3) -> SweepReport:
    """Re-run an analysis on every (delta, direction) cell.

    ``directions`` are templates whose delta is replaced by each tested
    value; the canonical family is used by default.  Cells whose sampled
    deviation exceeds delta are marked invalid and excluded from the
    verdict.  ``tol`` is the band around zero that ``two_species_check``
    reports as inconclusive.
    """
    deltas = tuple(float(d) for d in deltas)
    if not deltas or any(b <= a for a, b in zip(deltas, deltas[1:])) or deltas[0] < 0:
        raise ContractError("deltas must be a nonempty increasing list of nonnegative numbers")
    if analysis not in ("permanence_test", "two_species_check"):
        raise ValueError(f"unknown analysis {analysis!r}")
    if directions is None:
        directions = canonical_directions(model, 0.0, n_boundary_starts, boundary_horizon)
    if starts is None and analysis == "permanence_test":
        starts = interior_starts(model, 5 if model.n <= 2 else 3)
    cells = []
    for d in deltas:
        for spec in directions:
            label = spec.label or spec.mode
            try:
                pm = perturb(model, spec.with_delta(d), inflate)
            except PerturbationTooLarge as err:
                cells.append(SweepCell(d, label, INVALID, None, None, err.deviation,
                                       note=f"witness {err.state.tolist()}"))
                continue
            dev = pm.info["perturbation"]["deviation"]
            if analysis == "permanence_test":
                v = permanence_test(pm, eta_grid, starts, horizon, burn_in, threads=threads)
                cells.append(SweepCell(d, label, VALID, v.verdict, v.floor, dev, v.eta, "; ".join(v.notes)))
            else:
                rep = two_species_check(pm, tol=tol, threads=threads)
                vals = [c.value for c in rep.conditions if c.value is not None]
                cells.append(SweepCell(d, label, VALID, rep.verdict, min(vals) if vals else None, dev))
    return SweepReport(analysis, deltas, cells)
