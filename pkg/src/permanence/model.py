"""Block-structured population maps ``X_{t+1}^i = X_t^i A_i(X_t)``.

States are row vectors split into one block per species.  A model maps a
state to one nonnegative square matrix per species; the update multiplies
each block on the right by its own matrix, so a species that is absent
stays absent.

Evaluators are batched: they take an array of shape ``(..., n)`` and
return a list with one ``(..., n_i, n_i)`` array per species.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

EXTINCTION_TOL = 1e-15
PRIMITIVE = "primitive"
IRREDUCIBLE = "irreducible-components"
MODES = (PRIMITIVE, IRREDUCIBLE)

# relative slack when checking that a step lands inside the trapping box
BOX_RTOL = 1e-12


class StructuralError(ValueError):
    """Shapes or block structure do not fit together."""


class DomainError(ValueError):
    """A state lies outside the model's admissible state space."""


class NumericOverflowError(ArithmeticError):
    """The evaluator produced a non-finite value."""

    def __init__(self, species: int, step: int | None = None):
        self.species = species
        self.step = step
        where = "" if step is None else f" at step {step}"
        super().__init__(f"non-finite value in species {species}{where}")


def _readonly(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


def block_offsets(dims: Sequence[int]) -> np.ndarray:
    return np.concatenate([[0], np.cumsum(dims)]).astype(np.int64)


@dataclass(frozen=True, eq=False)
class StructuredState:
    """A nonnegative state ``x = (x^1, ..., x^m)`` stored flat."""

    values: np.ndarray
    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims or min(dims) < 1:
            raise StructuralError(f"block dimensions must be positive, got {dims}")
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.size != sum(dims):
            raise StructuralError(f"state has {v.size} entries, blocks need {sum(dims)}")
        if not np.all(np.isfinite(v)):
            raise ValueError("state has non-finite entries")
        if np.any(v < 0):
            raise ValueError("state has negative entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "dims", dims)

    @classmethod
    def from_blocks(cls, blocks: Iterable[Sequence[float]]) -> "StructuredState":
        blocks = [np.atleast_1d(np.asarray(b, dtype=float)) for b in blocks]
        return cls(np.concatenate(blocks), tuple(b.size for b in blocks))

    @property
    def blocks(self) -> list[np.ndarray]:
        off = block_offsets(self.dims)
        return [self.values[off[i]:off[i + 1]] for i in range(len(self.dims))]

    def norms(self) -> np.ndarray:
        """l1 norm of every block."""
        return np.array([b.sum() for b in self.blocks])

    def face(self, tol: float = EXTINCTION_TOL) -> "ExtinctionFace":
        return ExtinctionFace.of_norms(self.norms(), tol)

    def __repr__(self):
        return f"StructuredState({[b.tolist() for b in self.blocks]})"


@dataclass(frozen=True)
class ExtinctionFace:
    """The set of species with positive total density (0-based indices)."""

    present: frozenset[int]
    m: int

    def __post_init__(self):
        present = frozenset(int(i) for i in self.present)
        if any(i < 0 or i >= self.m for i in present):
            raise ValueError(f"species index out of range for m={self.m}: {sorted(present)}")
        object.__setattr__(self, "present", present)

    @classmethod
    def of_norms(cls, norms, tol: float = EXTINCTION_TOL) -> "ExtinctionFace":
        norms = np.asarray(norms)
        return cls(frozenset(np.flatnonzero(norms > tol).tolist()), norms.size)

    @property
    def absent(self) -> frozenset[int]:
        return frozenset(range(self.m)) - self.present

    @property
    def is_interior(self) -> bool:
        return len(self.present) == self.m

    def __str__(self):
        return "{" + ",".join(str(i) for i in sorted(self.present)) + "}"


def proper_faces(m: int) -> list[ExtinctionFace]:
    """Every face except the interior, smallest first."""
    out = []
    for mask in range(2 ** m - 1):
        out.append(ExtinctionFace(frozenset(i for i in range(m) if mask >> i & 1), m))
    return sorted(out, key=lambda f: (len(f.present), sorted(f.present)))


def _strong_components(adj: np.ndarray) -> list[list[int]]:
    # iterative Tarjan; emits components sinks-first
    n = adj.shape[0]
    succ = [np.flatnonzero(adj[v]).tolist() for v in range(n)]
    index = [-1] * n
    low = [0] * n
    on_stack = [False] * n
    stack: list[int] = []
    out: list[list[int]] = []
    counter = 0
    for root in range(n):
        if index[root] >= 0:
            continue
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack[root] = True
        work = [(root, 0)]
        while work:
            v, k = work[-1]
            if k < len(succ[v]):
                work[-1] = (v, k + 1)
                w = succ[v][k]
                if index[w] < 0:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack[w] = True
                    work.append((w, 0))
                elif on_stack[w]:
                    low[v] = min(low[v], index[w])
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp.append(w)
                    if w == v:
                        break
                out.append(sorted(comp))
    return out


@dataclass(frozen=True, eq=False)
class SignPattern:
    """Zero/positive structure of one species' projection matrix."""

    entries: np.ndarray

    def __post_init__(self):
        e = np.array(self.entries, dtype=bool)
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise StructuralError(f"sign pattern must be square, got shape {e.shape}")
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    @classmethod
    def of(cls, matrix) -> "SignPattern":
        return cls(np.asarray(matrix) > 0)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    def components(self) -> list[tuple[int, ...]]:
        return irreducible_components(self)

    def is_irreducible(self) -> bool:
        return len(self.components()) == 1

    def is_primitive(self) -> bool:
        if not self.is_irreducible():
            return False
        n = self.size
        # Wielandt: a primitive n x n pattern has a positive power n^2 - 2n + 2
        k = n * n - 2 * n + 2
        base = self.entries.astype(np.int64)
        acc = np.eye(n, dtype=np.int64)
        while k:
            if k & 1:
                acc = np.minimum(acc @ base, 1)
            base = np.minimum(base @ base, 1)
            k >>= 1
        return bool(acc.all())

    def __eq__(self, other):
        return isinstance(other, SignPattern) and np.array_equal(self.entries, other.entries)

    __hash__ = None


def irreducible_components(pattern: SignPattern) -> list[tuple[int, ...]]:
    """Strongly connected components of the pattern's graph.

    Entry ``(j, k) > 0`` is an edge ``j -> k``.  Components come back in a
    topological order of the condensation, each sorted.
    """
    if not isinstance(pattern, SignPattern):
        pattern = SignPattern(pattern)
    return [tuple(c) for c in reversed(_strong_components(pattern.entries))]


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """Parameters for the compiled step of a zoo family."""

    code: int
    fp: np.ndarray
    ip: np.ndarray
    delta: float = 0.0
    coord_sign: np.ndarray | None = None
    psi_inner: tuple[np.ndarray, np.ndarray] | None = None
    psi_outer: tuple[np.ndarray, np.ndarray] | None = None


@dataclass(frozen=True, eq=False)
class StructuredModel:
    """The map ``x -> x A(x)`` with its side information.

    ``box_upper`` (with ``box_lower``, default zero) is the declared trapping
    box.  ``log_fitness`` optionally returns, per species, the log of the
    scalar growth factors that sit on the diagonal before any redistribution
    (metacommunities); by default the log of the diagonal of ``A_i`` is used.
    ``domain`` returns a boolean mask of admissible states.
    """

    dims: tuple[int, ...]
    evaluator: Callable[[np.ndarray], Sequence[np.ndarray]]
    patterns: tuple[SignPattern, ...]
    box_upper: np.ndarray
    box_lower: np.ndarray | None = None
    mode: str = PRIMITIVE
    name: str = "custom"
    labels: tuple[str, ...] | None = None
    log_fitness: Callable[[np.ndarray], Sequence[np.ndarray]] | None = None
    domain: Callable[[np.ndarray], np.ndarray] | None = None
    kernel: KernelSpec | None = None
    info: Mapping = field(default_factory=dict)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        n = sum(dims)
        upper = _readonly(self.box_upper)
        lower = _readonly(np.zeros(n) if self.box_lower is None else self.box_lower)
        if upper.shape != (n,) or lower.shape != (n,):
            raise StructuralError(f"trapping box must have {n} coordinates")
        if np.any(lower < 0) or np.any(upper < lower):
            raise StructuralError("trapping box must satisfy 0 <= lower <= upper")
        object.__setattr__(self, "box_upper", upper)
        object.__setattr__(self, "box_lower", lower)
        patterns = tuple(p if isinstance(p, SignPattern) else SignPattern(p) for p in self.patterns)
        if len(patterns) != len(dims) or any(p.size != d for p, d in zip(patterns, dims)):
            raise StructuralError("one sign pattern of size n_i per species is required")
        object.__setattr__(self, "patterns", patterns)
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        labels = self.labels or tuple(f"x{k}" for k in range(n))
        if len(labels) != n:
            raise StructuralError("one label per coordinate is required")
        object.__setattr__(self, "labels", tuple(labels))
        object.__setattr__(self, "info", dict(self.info))

    @property
    def m(self) -> int:
        return len(self.dims)

    @property
    def n(self) -> int:
        return sum(self.dims)

    @property
    def offsets(self) -> np.ndarray:
        return block_offsets(self.dims)

    def block(self, x: np.ndarray, i: int) -> np.ndarray:
        off = self.offsets
        return x[..., off[i]:off[i + 1]]

    def block_norms(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        off = self.offsets
        return np.stack([x[..., off[i]:off[i + 1]].sum(axis=-1) for i in range(self.m)], axis=-1)

    def box_heights(self) -> np.ndarray:
        """l1 norm of each species block of the box's upper corner."""
        return self.block_norms(self.box_upper)

    def state(self, x) -> StructuredState:
        if isinstance(x, StructuredState):
            if x.dims != self.dims:
                raise StructuralError(f"state blocks {x.dims} do not match model blocks {self.dims}")
            return x
        return StructuredState(x, self.dims)

    def matrices(self, x) -> list[np.ndarray]:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n:
            raise StructuralError(f"state dimension {x.shape[-1]} != model dimension {self.n}")
        mats = [np.asarray(a, dtype=float) for a in self.evaluator(x)]
        lead = x.shape[:-1]
        for i, (a, d) in enumerate(zip(mats, self.dims)):
            if a.shape != lead + (d, d):
                raise StructuralError(f"A_{i} has shape {a.shape}, expected {lead + (d, d)}")
        return mats

    def fitness(self, x) -> list[np.ndarray]:
        """Per species, log growth factors along the diagonal, shape (..., n_i)."""
        if self.log_fitness is not None:
            return [np.asarray(f, dtype=float) for f in self.log_fitness(np.asarray(x, dtype=float))]
        with np.errstate(divide="ignore"):
            return [np.log(np.diagonal(a, axis1=-2, axis2=-1)) for a in self.matrices(x)]

    def in_domain(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.domain is None:
            return np.ones(x.shape[:-1], dtype=bool)
        return np.asarray(self.domain(x), dtype=bool)

    def apply(self, x, mats: Sequence[np.ndarray] | None = None) -> np.ndarray:
        """Batched update ``y^i = x^i A_i(x)`` on raw arrays."""
        x = np.asarray(x, dtype=float)
        if not np.all(self.in_domain(x)):
            raise DomainError(f"state outside the {self.name} state space")
        if mats is None:
            mats = self.matrices(x)
        off = self.offsets
        out = np.empty_like(x)
        for i, a in enumerate(mats):
            yi = np.einsum("...j,...jk->...k", x[..., off[i]:off[i + 1]], a)
            if not np.all(np.isfinite(yi)):
                raise NumericOverflowError(i)
            out[..., off[i]:off[i + 1]] = yi
        return out

    def contains(self, x, rtol: float = BOX_RTOL) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        slack = rtol * np.maximum(self.box_upper, 1.0)
        return np.all((x >= self.box_lower - slack) & (x <= self.box_upper + slack), axis=-1)

    def replace(self, **changes) -> "StructuredModel":
        return dataclasses.replace(self, **changes)


def step(model: StructuredModel, x) -> StructuredState:
    """One application of the map to a single state."""
    x = model.state(x)
    return StructuredState(model.apply(x.values), model.dims)


@dataclass
class ValidationReport:
    """Assumption violations found on a sample of states; empty lists pass."""

    h1: list[dict] = field(default_factory=list)
    h2: list[dict] = field(default_factory=list)
    h3: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not (self.h1 or self.h2 or self.h3)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "h1": self.h1, "h2": self.h2, "h3": self.h3}


def _as_grid(model: StructuredModel, grid) -> np.ndarray:
    if isinstance(grid, StructuredState):
        grid = [grid]
    if isinstance(grid, (list, tuple)) and grid and isinstance(grid[0], StructuredState):
        arr = np.stack([model.state(g).values for g in grid])
    else:
        arr = np.atleast_2d(np.asarray(grid, dtype=float))
    if arr.size == 0:
        raise ValueError("sample grid is empty")
    if arr.shape[-1] != model.n:
        raise StructuralError(f"grid states have dimension {arr.shape[-1]}, model needs {model.n}")
    if np.any(arr < 0):
        raise ValueError("sample grid leaves the nonnegative cone")
    return arr


def pattern_mismatches(model: StructuredModel, x, mats=None, limit: int | None = None) -> list[dict]:
    """Entries where ``A_i(x)`` disagrees with the declared sign pattern."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if mats is None:
        mats = model.matrices(x)
    out = []
    for i, (a, pat) in enumerate(zip(mats, model.patterns)):
        bad = (a > 0) != pat.entries
        for s, j, k in zip(*np.nonzero(bad)):
            out.append({"state": int(s), "species": i, "entry": [int(j), int(k)],
                        "expected": "positive" if pat.entries[j, k] else "zero",
                        "value": float(a[s, j, k])})
            if limit is not None and len(out) >= limit:
                return out
    return out


def validate(model: StructuredModel, sample_grid, mode: str | None = None,
             entry_horizon: int = 1000, limit: int = 100) -> ValidationReport:
    """Check nonnegativity, sign structure and trapping on sampled states.

    Grid states outside the box must enter it within ``entry_horizon`` steps.
    At most ``limit`` entries are kept per assumption.
    """
    mode = mode or model.mode
    grid = _as_grid(model, sample_grid)
    report = ValidationReport()
    ok = model.in_domain(grid)
    grid = grid[ok]
    if grid.size == 0:
        raise ValueError("no sample state lies in the model's state space")

    mats = model.matrices(grid)
    for i, a in enumerate(mats):
        for s, j, k in zip(*np.nonzero(a < 0)):
            if len(report.h1) < limit:
                report.h1.append({"state": grid[s].tolist(), "species": i, "entry": [int(j), int(k)],
                                  "value": float(a[s, j, k])})

    for i, pat in enumerate(model.patterns):
        if mode == PRIMITIVE and not pat.is_primitive():
            report.h2.append({"species": i, "structure": "pattern is not primitive",
                              "components": [list(c) for c in pat.components()]})
    for miss in pattern_mismatches(model, grid, mats, limit=limit):
        miss["state"] = grid[miss["state"]].tolist()
        report.h2.append(miss)

    inside = model.contains(grid)
    if np.any(inside):
        y = model.apply(grid[inside], [a[inside] for a in mats])
        for x0, y0 in zip(grid[inside][~model.contains(y)], y[~model.contains(y)]):
            if len(report.h3) < limit:
                report.h3.append({"state": x0.tolist(), "image": y0.tolist(), "kind": "escape"})
    if np.any(~inside):
        x = grid[~inside]
        entered = np.zeros(len(x), dtype=bool)
        for _ in range(entry_horizon):
            entered |= model.contains(x)
            if entered.all():
                break
            x = model.apply(x)
        for x0 in grid[~inside][~entered]:
            if len(report.h3) < limit:
                report.h3.append({"state": x0.tolist(), "kind": f"no entry within {entry_horizon} steps"})
    return report


def lattice(lower, upper, per_axis: int, interior: bool = False) -> np.ndarray:
    """Regular grid over a box.

    With ``interior`` the points sit at ``k/(per_axis+1)`` of each side so no
    coordinate is zero; otherwise both ends are included.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if interior:
        ticks = np.arange(1, per_axis + 1) / (per_axis + 1)
    else:
        ticks = np.linspace(0.0, 1.0, per_axis) if per_axis > 1 else np.array([0.5])
    axes = [lo + ticks * (hi - lo) for lo, hi in zip(lower, upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.reshape(-1) for g in mesh], axis=-1)
