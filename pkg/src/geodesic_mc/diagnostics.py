"""Effective sample size, autocorrelation and split-chain R-hat."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


class DiagnosticsError(ValueError):
    """Raised for degenerate or malformed chains."""


def _centered(series):
    x = np.asarray(series, dtype=float).ravel()
    xc = x - x.mean()
    var = float(xc @ xc) / x.size
    if not var > 0.0:
        raise DiagnosticsError("series has zero variance")
    return xc, var


def autocorr(series, k: int) -> float:
    """Sample autocorrelation at lag ``k`` with the biased (1/N) normalisation."""
    xc, var = _centered(series)
    n = xc.size
    if not 0 <= k < n:
        raise DiagnosticsError(f"lag {k} out of range for length {n}")
    return float(xc[: n - k] @ xc[k:]) / n / var


def autocorr_fft(series, max_lag: int | None = None) -> np.ndarray:
    """All autocorrelations up to ``max_lag`` (default ``N/2``) via FFT."""
    xc, var = _centered(series)
    n = xc.size
    max_lag = n // 2 if max_lag is None else min(max_lag, n - 1)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conj(f), size)[: max_lag + 1] / n
    return acov / var


def autocorr_direct(series, max_lag: int | None = None) -> np.ndarray:
    xc, var = _centered(series)
    n = xc.size
    max_lag = n // 2 if max_lag is None else min(max_lag, n - 1)
    return np.array([xc[: n - k] @ xc[k:] for k in range(max_lag + 1)]) / n / var


def ess(series) -> float:
    """Effective sample size from Geyer's initial monotone sequence.

    Pair sums ``Gamma_m = rho(2m) + rho(2m+1)`` are kept up to the first
    non-positive one, then made non-increasing, and
    ``ESS = N / (-1 + 2 sum_m Gamma_m)``, which equals ``N / (1 + 2 sum_k rho(k))``.
    Antithetic chains can give ESS above ``N``; the denominator is bounded
    below by ``1 / log10(N)`` so that near-alternating chains do not report
    absurd values.
    """
    x = np.asarray(series, dtype=float).ravel()
    n = x.size
    if n < 4:
        raise DiagnosticsError("need at least 4 samples")
    rho = autocorr_fft(x, n - 1)
    n_pairs = rho.size // 2
    pairs = rho[: 2 * n_pairs : 2] + rho[1 : 2 * n_pairs : 2]
    nonpos = np.flatnonzero(pairs <= 0.0)
    m = nonpos[0] if nonpos.size else pairs.size
    gammas = np.minimum.accumulate(pairs[:m]) if m else pairs[:1].clip(min=0.0)
    tau = -1.0 + 2.0 * float(np.sum(gammas))
    return n / max(tau, 1.0 / np.log10(n))


def split_rhat(chains) -> float:
    """Potential scale reduction computed on first and second halves of each chain."""
    if isinstance(chains, np.ndarray) and chains.ndim == 2:
        arrs = list(chains)
    else:
        arrs = [np.asarray(c, dtype=float).ravel() for c in chains]
    if len(arrs) < 2:
        raise DiagnosticsError("split R-hat needs at least two chains")
    lengths = {a.size for a in arrs}
    if len(lengths) != 1:
        raise DiagnosticsError("chains must have equal lengths")
    n = lengths.pop()
    if n < 4:
        raise DiagnosticsError("chains must have at least 4 draws")
    half = n // 2
    parts = np.array([a[s] for a in arrs for s in (slice(0, half), slice(n - half, n))])
    means = parts.mean(axis=1)
    within = float(np.mean(parts.var(axis=1, ddof=1)))
    between = half * float(np.var(means, ddof=1))
    if within == 0.0:
        return 1.0 if between == 0.0 else float("inf")
    var_plus = (half - 1) / half * within + between / half
    return float(np.sqrt(var_plus / within))


@dataclass
class EssReport:
    ess: list[float]
    min: float
    median: float
    max: float
    sampling_time: float
    seconds_per_min_ess: float
    acceptance_rate: float

    def to_dict(self):
        return asdict(self)


def ess_report(samples, sampling_time=0.0, acceptance_rate=float("nan")) -> EssReport:
    """Per-coordinate ESS plus the time-normalised summary used in comparisons.

    Each coordinate's ESS is capped at the number of samples, so antithetic
    chains are reported as fully efficient rather than super-efficient.
    Coordinates with zero variance get ESS 0, and an empty chain reports NaNs.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    if samples.shape[0] < 4:
        values = [float("nan")] * samples.shape[1]
    else:
        values = []
        for col in samples.T:
            try:
                values.append(min(ess(col), float(col.size)))
            except DiagnosticsError:
                values.append(0.0)
    arr = np.asarray(values, dtype=float)
    lo = float(np.min(arr)) if arr.size else float("nan")
    per = sampling_time / lo if lo and np.isfinite(lo) and lo > 0 else float("inf")
    return EssReport(
        ess=[float(v) for v in arr],
        min=lo,
        median=float(np.median(arr)) if arr.size else float("nan"),
        max=float(np.max(arr)) if arr.size else float("nan"),
        sampling_time=float(sampling_time),
        seconds_per_min_ess=per,
        acceptance_rate=float(acceptance_rate),
    )
