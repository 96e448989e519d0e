"""Standing example models used by the tests, the docs and the CLI."""
from __future__ import annotations

import numpy as np

from .zoo import (
    AnnualPlantSpec,
    LotkaVolterraSpec,
    MetacommunitySpec,
    SirSpec,
    build_annual,
    build_lv,
    build_meta,
    build_sir,
)

SYMMETRIC_LV = LotkaVolterraSpec(B=[[-1.0, -0.5], [-0.5, -1.0]], c=[1.0, 1.0])
DOMINANCE_LV = LotkaVolterraSpec(B=[[-1.0, -2.0], [-0.5, -1.0]], c=[1.0, 1.0])
# species 1 invades species 0's equilibrium (1, 0) at rate exactly zero
MARGINAL_LV = LotkaVolterraSpec(B=[[-1.0, -0.5], [-1.0, -1.0]], c=[1.0, 1.0])

SIR_ENDEMIC = SirSpec(m=0.2, beta=3.0, c=1.0)
SIR_DISEASE_FREE = SirSpec(m=2.0, beta=0.1, c=1.0)


def ricker_spec(c: float = 1.0) -> LotkaVolterraSpec:
    return LotkaVolterraSpec(B=[[-1.0]], c=[c])


def annual_spec(g: float = 0.9, s: float = 0.5) -> AnnualPlantSpec:
    return AnnualPlantSpec(g=[g, g], Y=[1.0, 1.0], s=[s, s], C=[[1.0, 0.5], [0.5, 1.0]])


def dispersal(d: float = 0.95, k: int = 2) -> np.ndarray:
    """Symmetric dispersal keeping a fraction ``d`` in place."""
    off = (1.0 - d) / (k - 1) if k > 1 else 0.0
    D = np.full((k, k), off)
    np.fill_diagonal(D, d if k > 1 else 1.0)
    return D


def mirrored_meta_spec(d: float = 0.95) -> MetacommunitySpec:
    """Each species is favoured in one of two patches."""
    B = np.array([[[1.0, 1.5], [1.5, 1.0]], [[1.0, 1.5], [1.5, 1.0]]])
    c = np.array([[2.0, 1.0], [1.0, 2.0]])
    D = dispersal(d)
    return MetacommunitySpec(B=B, c=c, D=np.stack([D, D]))


def dominance_meta_spec(d: float = 0.95) -> MetacommunitySpec:
    """Identical patches where species 0 excludes species 1."""
    B = np.array([[[1.0, 0.5], [2.0, 1.0]]] * 2)
    c = np.array([[1.0, 1.0], [1.0, 1.0]])
    D = dispersal(d)
    return MetacommunitySpec(B=B, c=c, D=np.stack([D, D]))


def symmetric_lv():
    return build_lv(SYMMETRIC_LV)


def dominance_lv():
    return build_lv(DOMINANCE_LV)


def marginal_lv():
    return build_lv(MARGINAL_LV)


def ricker(c: float = 1.0):
    return build_lv(ricker_spec(c))


def annual(g: float = 0.9):
    return build_annual(annual_spec(g))


def mirrored_meta(d: float = 0.95):
    return build_meta(mirrored_meta_spec(d))


def dominance_meta(d: float = 0.95):
    return build_meta(dominance_meta_spec(d))


def sir_endemic():
    return build_sir(SIR_ENDEMIC)


def sir_disease_free():
    return build_sir(SIR_DISEASE_FREE)


FIXTURES = {
    "symmetric-lv": symmetric_lv,
    "dominance-lv": dominance_lv,
    "marginal-lv": marginal_lv,
    "ricker": ricker,
    "annual": annual,
    "mirrored-meta": mirrored_meta,
    "dominance-meta": dominance_meta,
    "sir-endemic": sir_endemic,
    "sir-disease-free": sir_disease_free,
}
