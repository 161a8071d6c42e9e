"""Wavelet filter families: plain-DWT baselines and dual-tree biorthogonal sets.

All filter pairs follow one correlation convention used throughout the
package: the analysis outputs are

    approx[k] = sum_j lowpass[j]  * ext(x)[2k + j - origin_low]
    detail[k] = sum_j highpass[j] * ext(x)[2k + j - origin_high]

so the lowpass branch of an ``a`` tree anchors on even samples and its
highpass on odd samples (the detail branch must sit on the opposite
decimation parity for symmetric-extension perfect reconstruction). The
``b`` tree delays the lowpass by exactly one sample, which realises the
half-sample offset between the two trees after decimation.

Every family is normalised so the analysis and synthesis lowpasses have
DC gain sqrt(2) and the analysis highpass has Nyquist gain sqrt(2).
Highpasses are built from the opposite lowpass by modulation:
h1[n] = (-1)^n g0[n], g1[n] = -(-1)^n h0[n] (rescaled).
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

SQRT2 = float(np.sqrt(2.0))

DTCWT_FAMILIES = ("antonini", "legall", "nearsyma", "nearsymb")
DWT_FAMILIES = ("haar", "coif1", "bior44", "daub4")


class UnknownFilterError(ValueError):
    """Requested filter family id does not exist."""


@dataclass(frozen=True)
class FilterPair:
    """One analysis or synthesis lowpass/highpass pair.

    ``origin_low``/``origin_high`` give the zero-delay tap index of each
    filter under the package-wide correlation convention. ``extension``
    selects the boundary rule ("symmetric" whole-sample reflection for
    linear-phase families, "periodic" for the orthogonal ones, where
    symmetric extension cannot be perfectly reconstructing).
    """

    lowpass: np.ndarray
    highpass: np.ndarray
    origin_low: int
    origin_high: int
    extension: str
    key: str

    def __post_init__(self):
        object.__setattr__(self, "lowpass", np.asarray(self.lowpass, float))
        object.__setattr__(self, "highpass", np.asarray(self.highpass, float))
        self.lowpass.setflags(write=False)
        self.highpass.setflags(write=False)

    def __hash__(self):
        return hash((self.key, len(self.lowpass), len(self.highpass)))


@dataclass(frozen=True)
class DualTreeFilterSet:
    id: str
    tree_a_analysis: FilterPair
    tree_a_synthesis: FilterPair
    tree_b_analysis: FilterPair
    tree_b_synthesis: FilterPair


@dataclass(frozen=True)
class DwtFilterSet:
    id: str
    analysis: FilterPair
    synthesis: FilterPair


# ---------------------------------------------------------------------------
# Tap tables. Antonini/LeGall are the published 9/7 and 5/3 pairs. NearSymA is
# the unique (5,7) half-band complement of [-1,5,12,5,-1]/20 with a double
# Nyquist zero; NearSymB is a (13,19) factorisation of the exact degree-30
# maximally flat half-band product (6/10 zeros at z=-1). db4 comes from
# spectral factorisation of the K=4 maxflat half-band, coif1 from its sqrt(7)
# closed form. Each table is validated by round-trip tests, not trusted.
# ---------------------------------------------------------------------------

_ANTONINI_H0 = (
    0.0267487574108101, -0.0168641184428747, -0.0782232665289905,
    0.2668641184428729, 0.6029490182363593, 0.2668641184428769,
    -0.0782232665289884, -0.0168641184428753, 0.0267487574108096,
)
_ANTONINI_G0 = (
    -0.0456358815571251, -0.0287717631142493, 0.2956358815571280,
    0.5575435262285023, 0.2956358815571233, -0.0287717631142531,
    -0.0456358815571261,
)

_LEGALL_H0 = (-0.125, 0.25, 0.75, 0.25, -0.125)
_LEGALL_G0 = (0.25, 0.5, 0.25)

_NEARSYMA_H0 = (-0.05, 0.25, 0.6, 0.25, -0.05)
_NEARSYMA_G0 = (
    -2.1428571428571297e-02, -1.0714285714285715e-01, 5.2142857142857135e-01,
    1.2142857142857144e+00, 5.2142857142857135e-01, -1.0714285714285715e-01,
    -2.1428571428571297e-02,
)

_NEARSYMB_H0 = (
    -6.4319603334935561e-03, -2.0075285537743057e-03, 3.0424257188954779e-02,
    5.0377948434911345e-03, -3.2789673900406623e-03, 2.4696973371028319e-01,
    4.5857334106915898e-01, 2.4696973371028319e-01, -3.2789673900406623e-03,
    5.0377948434911345e-03, 3.0424257188954779e-02, -2.0075285537743057e-03,
    -6.4319603334935561e-03,
)
_NEARSYMB_G0 = (
    4.9694011006798876e-04, -1.5510379553854771e-04, -6.2018653488676873e-03,
    1.5912701262790550e-03, 4.0945435194450833e-02, 9.0498230598228015e-03,
    -1.5210972377297971e-01, -1.0856948101149230e-01, 3.6686921381732901e-01,
    6.9616698324185711e-01, 3.6686921381732901e-01, -1.0856948101149230e-01,
    -1.5210972377297971e-01, 9.0498230598228015e-03, 4.0945435194450833e-02,
    1.5912701262790550e-03, -6.2018653488676873e-03, -1.5510379553854771e-04,
    4.9694011006798876e-04,
)

_DB4_H0 = (
    2.3037781330889653e-01, 7.1484657055291578e-01, 6.3088076792985892e-01,
    -2.7983769416859906e-02, -1.8703481171909309e-01, 3.0841381835560754e-02,
    3.2883011666885190e-02, -1.0597401785069042e-02,
)
_COIF1_H0 = (
    -7.2732619512526450e-02, 3.3789766245748176e-01, 8.5257202021160028e-01,
    3.8486484686485772e-01, -7.2732619512526450e-02, -1.5655728135791986e-02,
)

_BIORTH_TABLES = {
    "antonini": (_ANTONINI_H0, _ANTONINI_G0),
    "legall": (_LEGALL_H0, _LEGALL_G0),
    "nearsyma": (_NEARSYMA_H0, _NEARSYMA_G0),
    "nearsymb": (_NEARSYMB_H0, _NEARSYMB_G0),
    "bior44": (_ANTONINI_H0, _ANTONINI_G0),
}

_ORTHO_TABLES = {
    "haar": (1.0 / SQRT2, 1.0 / SQRT2),
    "daub4": _DB4_H0,
    "coif1": _COIF1_H0,
}


def _modulated_quad(h0_raw, g0_raw) -> Tuple[np.ndarray, ...]:
    """Normalised (h0, h1, g0, g1) for a symmetric biorthogonal pair."""
    h0 = np.asarray(h0_raw, float)
    g0 = np.asarray(g0_raw, float)
    h0 = h0 * (SQRT2 / h0.sum())
    g0 = g0 * (SQRT2 / g0.sum())
    alt_g = np.array([(-1.0) ** n for n in range(len(g0))])
    alt_h = np.array([(-1.0) ** n for n in range(len(h0))])
    h1 = alt_g * g0
    g1 = -alt_h * h0
    nyquist = float(np.sum(alt_g * h1))
    h1 *= SQRT2 / nyquist
    g1 *= nyquist / SQRT2
    return h0, h1, g0, g1


def _biorth_pairs(family: str, delay: int, key_prefix: str):
    h0, h1, g0, g1 = _modulated_quad(*_BIORTH_TABLES[family])
    c_h0, c_h1 = len(h0) // 2, len(h1) // 2
    c_g0, c_g1 = len(g0) // 2, len(g1) // 2
    # delay=0 is the "a" tree (lowpass even / highpass odd anchors); delay=1
    # shifts the lowpass to odd anchors and the highpass back to even.
    analysis = FilterPair(h0, h1, c_h0 - delay, c_h1 - 1 + delay,
                          "symmetric", f"{key_prefix}/ana")
    synthesis = FilterPair(g0, g1, c_g0 - delay, c_g1 - 1 + delay,
                           "symmetric", f"{key_prefix}/syn")
    return analysis, synthesis


def _ortho_pairs(family: str, key_prefix: str):
    h0 = np.asarray(_ORTHO_TABLES[family], float)
    h1 = np.array([(-1.0) ** n * h0[len(h0) - 1 - n] for n in range(len(h0))])
    # self-dual under the correlation convention: the periodised analysis map
    # is orthogonal, so synthesis reuses the same taps and anchors
    analysis = FilterPair(h0, h1, 0, 0, "periodic", f"{key_prefix}/ana")
    synthesis = FilterPair(h0, h1, 0, 0, "periodic", f"{key_prefix}/syn")
    return analysis, synthesis


def get_dual_tree_set(family: str) -> DualTreeFilterSet:
    """Level-1 dual-tree set: tree b is tree a with the lowpass delayed one sample."""
    fam = str(family).lower()
    if fam not in DTCWT_FAMILIES:
        raise UnknownFilterError(
            f"unknown dual-tree family {family!r}; choose from {DTCWT_FAMILIES}")
    ana_a, syn_a = _biorth_pairs(fam, 0, f"{fam}/a")
    ana_b, syn_b = _biorth_pairs(fam, 1, f"{fam}/b")
    return DualTreeFilterSet(fam, ana_a, syn_a, ana_b, syn_b)


def get_dwt_set(family: str) -> DwtFilterSet:
    fam = str(family).lower()
    if fam not in DWT_FAMILIES:
        raise UnknownFilterError(
            f"unknown DWT family {family!r}; choose from {DWT_FAMILIES}")
    if fam == "bior44":
        ana, syn = _biorth_pairs(fam, 0, fam)
    else:
        ana, syn = _ortho_pairs(fam, fam)
    return DwtFilterSet(fam, ana, syn)


def lowpass_group_delay_difference(tree_a: FilterPair, tree_b: FilterPair) -> float:
    """Delay of tree b's lowpass relative to tree a's, in samples."""
    if not np.array_equal(tree_a.lowpass, tree_b.lowpass):
        raise ValueError("trees carry different lowpass taps")
    return float(tree_a.origin_low - tree_b.origin_low)


def check_perfect_reconstruction(filter_set, length: int, seed: int = 0) -> float:
    """Max-abs round-trip error on a fixed-seed random signal of even length."""
    from . import transform1d

    longest = _longest_tap(filter_set)
    if length % 2 != 0:
        raise ValueError(f"length must be even, got {length}")
    if length < 2 * longest:
        raise ValueError(
            f"length {length} shorter than twice the longest filter ({longest})")
    x = np.random.default_rng(seed).standard_normal(length)
    worst = 0.0
    for ana, syn in _tree_pairs(filter_set):
        a, d = transform1d.analyze1d(x, ana)
        y = transform1d.synthesize1d(a, d, syn)
        worst = max(worst, float(np.max(np.abs(x - y))))
    return worst


def _tree_pairs(filter_set):
    if isinstance(filter_set, DualTreeFilterSet):
        return ((filter_set.tree_a_analysis, filter_set.tree_a_synthesis),
                (filter_set.tree_b_analysis, filter_set.tree_b_synthesis))
    if isinstance(filter_set, DwtFilterSet):
        return ((filter_set.analysis, filter_set.synthesis),)
    raise TypeError(f"not a filter set: {type(filter_set).__name__}")


def _longest_tap(filter_set) -> int:
    return max(max(len(p.lowpass), len(p.highpass))
               for pair in _tree_pairs(filter_set) for p in pair)
