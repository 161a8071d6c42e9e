"""Single-level 1D analysis/synthesis with boundary extension, plus exact adjoints.

Forward: correlate with the pair's filters against the extended signal and
keep even-indexed outputs (the pair's origins encode the branch anchors).
Inverse: scatter the subbands back onto their anchor positions, extend by
folding positions with the same boundary rule, correlate with the synthesis
taps and sum both branches.

Everything here is a linear map of modest size, so the adjoints are taken
from cached operator matrices built column-by-column from the structural
implementations; the dot-product identity then holds to machine precision.
"""

import numpy as np

from .filters import FilterPair

_matrix_cache: dict = {}


def _fold(idx: np.ndarray, n: int, mode: str) -> np.ndarray:
    """Map arbitrary sample indices into [0, n) by reflection or wrap-around."""
    if mode == "periodic":
        return np.mod(idx, n)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * n - 2
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


def _validate_signal(x: np.ndarray):
    n = x.shape[-1]
    if n < 2 or n % 2 != 0:
        raise ValueError(f"signal length must be even and >= 2, got {n}")


def _corr_decimate(x, taps, origin, mode):
    n = x.shape[-1]
    k = np.arange(n // 2)
    idx = _fold(2 * k[:, None] + np.arange(len(taps))[None, :] - origin, n, mode)
    return x[..., idx] @ taps


def analyze1d(signal: np.ndarray, pair: FilterPair):
    """Split a (..., n) signal into (approx, detail), each (..., n/2)."""
    signal = np.asarray(signal, float)
    _validate_signal(signal)
    approx = _corr_decimate(signal, pair.lowpass, pair.origin_low, pair.extension)
    detail = _corr_decimate(signal, pair.highpass, pair.origin_high, pair.extension)
    return approx, detail


def _branch_matrix(taps, origin, n, mode):
    """(n, n/2) matrix scattering one subband back to the signal grid."""
    half = n // 2
    L = len(taps)
    # subband sample k anchors at position 2k + phi (phi from the origin)
    phi = L // 2 - origin
    kmin = -(L // 2) - 2
    kmax = half + L // 2 + 2
    kk = np.arange(kmin, kmax)
    if mode == "periodic":
        src = np.mod(kk, half)
    else:
        pos = _fold(2 * kk + phi, n, "symmetric")
        src = (pos - phi) // 2
        if np.any((pos - phi) % 2) or src.min() < 0 or src.max() >= half:
            raise ValueError("unsupported branch anchoring for symmetric extension")
    m = np.arange(n)
    j = m[:, None] - 2 * kk[None, :] + origin        # tap index per (m, k)
    valid = (j >= 0) & (j < L)
    weights = np.where(valid, taps[np.clip(j, 0, L - 1)], 0.0)   # (n, K)
    mat = np.zeros((n, half))
    np.add.at(mat.T, src, weights.T)
    return mat


def _synthesis_matrices(pair: FilterPair, n: int):
    key = (pair.key, n, "syn")
    if key not in _matrix_cache:
        _matrix_cache[key] = (
            _branch_matrix(pair.lowpass, pair.origin_low, n, pair.extension),
            _branch_matrix(pair.highpass, pair.origin_high, n, pair.extension),
        )
    return _matrix_cache[key]


def synthesize1d(approx: np.ndarray, detail: np.ndarray, pair: FilterPair):
    """Upsample both (..., n/2) subbands, convolve and sum to a (..., n) signal."""
    approx = np.asarray(approx, float)
    detail = np.asarray(detail, float)
    if approx.shape != detail.shape:
        raise ValueError(
            f"approx/detail shapes differ: {approx.shape} vs {detail.shape}")
    n = 2 * approx.shape[-1]
    low_mat, high_mat = _synthesis_matrices(pair, n)
    return approx @ low_mat.T + detail @ high_mat.T


def analysis_matrix(pair: FilterPair, n: int) -> np.ndarray:
    """(n, n) matrix of analyze1d with [approx; detail] stacking."""
    key = (pair.key, n, "ana")
    if key not in _matrix_cache:
        a, d = analyze1d(np.eye(n), pair)
        _matrix_cache[key] = np.concatenate([a.T, d.T], axis=0).copy()
    return _matrix_cache[key]


def synthesis_matrix(pair: FilterPair, n: int) -> np.ndarray:
    """(n, n) matrix mapping stacked [approx; detail] to the signal."""
    low_mat, high_mat = _synthesis_matrices(pair, n)
    return np.concatenate([low_mat, high_mat], axis=1)


def analyze1d_adjoint(d_approx: np.ndarray, d_detail: np.ndarray,
                      pair: FilterPair) -> np.ndarray:
    """Exact adjoint of analyze1d (gradient wrt the input signal)."""
    d_approx = np.asarray(d_approx, float)
    d_detail = np.asarray(d_detail, float)
    if d_approx.shape != d_detail.shape:
        raise ValueError(
            f"approx/detail shapes differ: {d_approx.shape} vs {d_detail.shape}")
    n = 2 * d_approx.shape[-1]
    mat = analysis_matrix(pair, n)
    stacked = np.concatenate([d_approx, d_detail], axis=-1)
    return stacked @ mat


def synthesize1d_adjoint(d_signal: np.ndarray, pair: FilterPair):
    """Exact adjoint of synthesize1d, returning (d_approx, d_detail)."""
    d_signal = np.asarray(d_signal, float)
    _validate_signal(d_signal)
    n = d_signal.shape[-1]
    low_mat, high_mat = _synthesis_matrices(pair, n)
    return d_signal @ low_mat, d_signal @ high_mat
