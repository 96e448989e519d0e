"""Constructors for the Lotka-Volterra, annual plant, metacommunity and SIR maps.

Each constructor attaches an analytic trapping box and, where the family has
one, the compiled step used for long orbits.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels as K
from .model import (
    IRREDUCIBLE,
    PRIMITIVE,
    KernelSpec,
    SignPattern,
    StructuralError,
    StructuredModel,
)

log = logging.getLogger(__name__)


def _matrix(a, shape=None, name="matrix") -> np.ndarray:
    a = np.array(a, dtype=float)
    if a.ndim == 1 and shape is not None and len(shape) == 2:
        a = a.reshape(shape)
    if shape is not None and a.shape != tuple(shape):
        raise StructuralError(f"{name} has shape {a.shape}, expected {tuple(shape)}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    a.setflags(write=False)
    return a


def _override_box(name: str, analytic, box):
    if box is None:
        return analytic
    log.warning("%s: trapping box overridden by user (analytic box %s)", name,
                None if analytic is None else np.asarray(analytic).tolist())
    return np.asarray(box, dtype=float)


@dataclass(frozen=True, eq=False)
class LotkaVolterraSpec:
    """``x_{t+1} = x_t * exp(B x_t + c)`` componentwise."""

    B: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        c = _matrix(self.c, name="c").reshape(-1)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "B", _matrix(self.B, (c.size, c.size), "B"))

    @property
    def m(self) -> int:
        return self.c.size


@dataclass(frozen=True, eq=False)
class AnnualPlantSpec:
    """Competing annual plants with a seed bank."""

    g: np.ndarray
    Y: np.ndarray
    s: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        g = _matrix(self.g, name="g").reshape(-1)
        m = g.size
        Y = _matrix(self.Y, name="Y").reshape(-1)
        s = _matrix(self.s, name="s").reshape(-1)
        C = _matrix(self.C, (m, m), "C")
        if Y.size != m or s.size != m:
            raise StructuralError("g, Y and s must have one entry per species")
        if np.any(g <= 0) or np.any(g > 1):
            raise ValueError("germination fractions must lie in (0, 1]")
        if np.any(Y <= 0):
            raise ValueError("yield exponents must be positive")
        if np.any(s < 0) or np.any(s >= 1):
            raise ValueError("seed survival must lie in [0, 1)")
        if np.any(C <= 0):
            raise ValueError("competition coefficients must be positive")
        for k, v in dict(g=g, Y=Y, s=s, C=C).items():
            object.__setattr__(self, k, v)

    @property
    def m(self) -> int:
        return self.g.size

    def dissipativity_box(self) -> float:
        """Height ``a / (1 - b)`` of the absorbing cube.

        ``a = exp(max Y - 1) / min C_ii`` bounds the germinated part; ``b``
        bounds the surviving seed fraction by ``max_i (1 - g_i)``.
        """
        a = math.exp(self.Y.max() - 1.0) / np.diag(self.C).min()
        b = float(np.max(1.0 - self.g))
        return a / (1.0 - b)


@dataclass(frozen=True, eq=False)
class MetacommunitySpec:
    """Two Lotka-Volterra competitors on ``k`` patches coupled by dispersal.

    ``B[j]`` and ``c[j]`` are the 2x2 competition matrix and growth vector of
    patch ``j``; ``D[i]`` is the column-stochastic dispersal matrix of
    species ``i``.
    """

    B: np.ndarray
    c: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        c = _matrix(self.c, name="c")
        if c.ndim != 2 or c.shape[1] != 2:
            raise StructuralError("c must have shape (k, 2)")
        k = c.shape[0]
        B = _matrix(self.B, (k, 2, 2), "B")
        D = _matrix(self.D, (2, k, k), "D")
        if np.any(B <= 0):
            raise ValueError("competition coefficients must be positive")
        if np.any(c <= 0):
            raise ValueError("patch growth rates must be positive")
        if np.any(D < 0):
            raise ValueError("dispersal fractions must be nonnegative")
        if not np.allclose(D.sum(axis=1), 1.0, rtol=0, atol=1e-12):
            raise StructuralError("every dispersal matrix must be column stochastic")
        for name, v in dict(B=B, c=c, D=D).items():
            object.__setattr__(self, name, v)

    @property
    def k(self) -> int:
        return self.c.shape[0]


def rational_recruitment(c: float) -> Callable[[np.ndarray], np.ndarray]:
    def f(x):
        return 1.0 / (1.0 + c * np.asarray(x, dtype=float))
    return f


@dataclass(frozen=True, eq=False)
class SirSpec:
    """SIR map with mortality ``m``, contact rate ``beta`` and recruitment ``f``.

    Give either ``c`` (for ``f(x) = 1 / (1 + c x)``) or a vectorised ``f``.
    """

    m: float
    beta: float
    c: float | None = None
    f: Callable[[np.ndarray], np.ndarray] | None = None
    probe: float = 1e8

    def __post_init__(self):
        if not self.m > 0 or not self.beta > 0:
            raise ValueError("mortality and contact rate must be positive")
        if (self.c is None) == (self.f is None):
            raise ValueError("give exactly one of c (rational recruitment) or f")
        if self.c is not None:
            if not self.c > 0:
                raise ValueError("recruitment constant c must be positive")
            return
        tail = float(np.asarray(self.f(np.array([self.probe]))).reshape(-1)[0])
        if not tail < 1.0 - math.exp(-self.m):
            raise ValueError(f"recruitment f({self.probe:g}) = {tail:g} is not below 1 - exp(-m)")

    @property
    def recruitment(self) -> Callable[[np.ndarray], np.ndarray]:
        return rational_recruitment(self.c) if self.f is None else self.f

    def u(self, y):
        """``(1 - exp(-beta y)) / y`` with its limit ``beta`` at zero."""
        y = np.asarray(y, dtype=float)
        z = self.beta * y
        small = z < K.SERIES_CUTOFF
        safe = np.where(small, 1.0, y)
        exact = -np.expm1(-self.beta * safe) / safe
        series = self.beta * (1.0 - 0.5 * z + z * z / 6.0)
        return np.where(small, series, exact)

    def disease_free_equilibrium(self) -> float:
        """Positive fixed point of ``N -> (f(N) + exp(-m)) N`` for rational f."""
        if self.c is None:
            raise ValueError("closed form needs rational recruitment")
        return (1.0 / (1.0 - math.exp(-self.m)) - 1.0) / self.c


def build_lv(spec: LotkaVolterraSpec, box=None) -> StructuredModel:
    """Scalar-block model with ``A_i(x) = exp(sum_j B_ij x_j + c_i)``.

    The analytic box bounds each coordinate by ``exp(c_i - 1) / |B_ii|``,
    the maximum of ``z exp(c_i + B_ii z)``; it needs ``B_ii < 0`` and is
    exact only when interactions are nonpositive.
    """
    B, c, m = spec.B, spec.c, spec.m
    diag = np.diag(B)
    analytic = None
    if np.all(diag < 0):
        analytic = np.exp(c - 1.0) / np.abs(diag)
        if np.any(B[~np.eye(m, dtype=bool)] > 0):
            log.warning("lv: positive interactions; the analytic box may not trap orbits")
    upper = _override_box("lv", analytic, box)
    if upper is None:
        raise StructuralError("B has a nonnegative diagonal entry: no analytic box, supply one")

    def evaluator(x):
        # overflow surfaces as inf and is reported by the caller
        with np.errstate(over="ignore"):
            g = np.exp(x @ B.T + c)
        return [g[..., i, None, None] for i in range(m)]

    def log_fitness(x):
        g = x @ B.T + c
        return [g[..., i, None] for i in range(m)]

    return StructuredModel(
        dims=(1,) * m,
        evaluator=evaluator,
        patterns=tuple(SignPattern(np.ones((1, 1))) for _ in range(m)),
        box_upper=upper,
        name="lv",
        labels=tuple(f"x{i}" for i in range(m)),
        log_fitness=log_fitness,
        kernel=KernelSpec(K.LV, np.concatenate([B.reshape(-1), c]), np.zeros(1, np.int64)),
        info={"B": B.tolist(), "c": c.tolist()},
    )


def build_annual(spec: AnnualPlantSpec, box=None) -> StructuredModel:
    """``A_i(x) = g_i exp(Y_i - sum_j C_ij g_j x_j) + (1 - g_i) s_i``."""
    g, Y, s, C, m = spec.g, spec.Y, spec.s, spec.C, spec.m
    upper = _override_box("annual", np.full(m, spec.dissipativity_box()), box)

    def evaluator(x):
        a = g * np.exp(Y - (x * g) @ C.T) + (1.0 - g) * s
        return [a[..., i, None, None] for i in range(m)]

    return StructuredModel(
        dims=(1,) * m,
        evaluator=evaluator,
        patterns=tuple(SignPattern(np.ones((1, 1))) for _ in range(m)),
        box_upper=upper,
        name="annual",
        labels=tuple(f"x{i}" for i in range(m)),
        kernel=KernelSpec(K.ANNUAL, np.concatenate([g, Y, s, C.reshape(-1)]), np.zeros(1, np.int64)),
        info={"g": g.tolist(), "Y": Y.tolist(), "s": s.tolist(), "C": C.tolist()},
    )


def build_meta(spec: MetacommunitySpec, mode: str = PRIMITIVE, box=None) -> StructuredModel:
    """``A_i(x) = diag(f^i_1(x), ..., f^i_k(x)) D^i`` on ``k`` patches.

    ``f^i_j(x) = exp(c^j_i - sum_h B^j_ih x^{hj})``.  Under the primitive
    mode every dispersal matrix must be primitive.
    """
    B, c, D, k = spec.B, spec.c, spec.D, spec.k
    patterns = tuple(SignPattern(D[i] > 0) for i in range(2))
    if mode == PRIMITIVE:
        for i, p in enumerate(patterns):
            if not p.is_primitive():
                raise StructuralError(f"dispersal matrix of species {i} is not primitive")
    # patch j caps species i at exp(c^j_i - 1) / B^j_ii; columns of D sum to 1
    heights = [max(math.exp(c[j, i] - 1.0) / B[j, i, i] for j in range(k)) for i in range(2)]
    upper = _override_box("meta", np.repeat(heights, k), box)

    def log_fitness(x):
        dens = np.stack([x[..., :k], x[..., k:]], axis=-1)  # (..., k, h)
        out = []
        for i in range(2):
            out.append(c[:, i] - np.einsum("...jh,jh->...j", dens, B[:, i, :]))
        return out

    def evaluator(x):
        return [np.exp(lf)[..., :, None] * D[i] for i, lf in enumerate(log_fitness(x))]

    fp = np.concatenate([B.reshape(-1), c.reshape(-1), D[0].reshape(-1), D[1].reshape(-1)])
    return StructuredModel(
        dims=(k, k),
        evaluator=evaluator,
        patterns=patterns,
        box_upper=upper,
        mode=mode,
        name="meta",
        labels=tuple(f"x{i}_p{j}" for i in range(2) for j in range(k)),
        log_fitness=log_fitness,
        kernel=KernelSpec(K.META, fp, np.array([k], np.int64)),
        info={"B": B.tolist(), "c": c.tolist(), "D": D.tolist()},
    )


def build_sir(spec: SirSpec, box=None) -> StructuredModel:
    """SIR map with ``X^1 = N`` and ``X^2 = (I, R)``.

    ``A_1 = f(N) + e^{-m}``;
    ``A_2 = [[e^{-m} (N - I - R) u(I), e^{-m}], [0, e^{-m}]]``.
    The second block is reducible, so the model runs in the
    irreducible-components mode.  States need ``N >= I + R``.
    """
    q = math.exp(-spec.m)
    f = spec.recruitment
    analytic = None
    if spec.c is not None:
        # N' <= 1/c + e^{-m} N, so N settles below 1 / (c (1 - e^{-m}))
        analytic = np.full(3, 1.0 / (spec.c * (1.0 - q)))
    upper = _override_box("sir", analytic, box)
    if upper is None:
        raise StructuralError("general recruitment needs a user-supplied trapping box")

    def evaluator(x):
        n_, i_, r_ = x[..., 0], x[..., 1], x[..., 2]
        a1 = (np.asarray(f(n_), dtype=float) + q)[..., None, None]
        a2 = np.zeros(x.shape[:-1] + (2, 2))
        a2[..., 0, 0] = q * np.maximum(n_ - i_ - r_, 0.0) * spec.u(i_)
        a2[..., 0, 1] = q
        a2[..., 1, 1] = q
        return [a1, a2]

    def domain(x):
        return x[..., 0] - x[..., 1] - x[..., 2] >= -K.SIR_DOMAIN_RTOL * x[..., 0]

    kernel = None
    if spec.c is not None:
        kernel = KernelSpec(K.SIR, np.array([spec.m, spec.beta, spec.c]), np.zeros(1, np.int64))
    return StructuredModel(
        dims=(1, 2),
        evaluator=evaluator,
        patterns=(SignPattern([[1]]), SignPattern([[1, 1], [0, 1]])),
        box_upper=upper,
        mode=IRREDUCIBLE,
        name="sir",
        labels=("N", "I", "R"),
        domain=domain,
        kernel=kernel,
        info={"m": spec.m, "beta": spec.beta, "c": spec.c},
    )
