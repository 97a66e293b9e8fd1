"""Belief-propagation decoding of sparse sign measurements with copula priors.

Messages are probability vectors over a uniform bin grid. Measurement factors
constrain y_j = sum_k theta_jk s_k (exactly, or through white Gaussian noise);
their outgoing messages are computed by convolving the incoming messages of
the other neighbors (sign-flipped where theta is -1) and reading the result
against the factor's residual kernel. Prior factors contribute a fixed
discretized marginal, optionally corrected by the copula conditioned on the
modalities already recovered.

Scheduling is fully synchronous: iteration-l messages on both update rules
are functions of the iteration-(l-1) snapshot. Written that way, the beliefs
after `iterations` updates depend only on every second sweep, so the
implementation runs ceil(iterations/2) factor+variable sweeps and produces
the identical result at half the cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from .copulas import GaussianCopula, StudentTCopula, clamp_unit
from .errors import DimensionError, ParameterError
from .sensing import SparseSignMatrix

DEFAULT_N_BINS = 243
DEFAULT_ITERATIONS = 50
GRID_EXPANSION = 1.25
GRID_TAIL = 1e-4

# Relative level below which message entries are treated as structural zeros
# when sizing factor convolutions. This is a bounded value-domain truncation
# (error orders below FFT roundoff), never a circular-aliasing shortcut.
SUPPORT_TRUNCATION = 1e-30

# The noisy residual kernel is cut at this many standard deviations; beyond
# it the Gaussian is below double-precision resolution of the peak.
KERNEL_CUTOFF_SIGMAS = 9.0


class BinGrid:
    """Uniform symmetric grid of n_bins over [-half_range, half_range].

    Mid values are built antisymmetrically so that -mids[t] equals
    mids[n_bins-1-t] exactly, which the sign-flip reversal in the factor
    updates relies on. The two end bins absorb out-of-range values.
    """

    def __init__(self, half_range: float, n_bins: int = DEFAULT_N_BINS):
        if not (half_range > 0.0 and np.isfinite(half_range)):
            raise ParameterError("half_range must be positive and finite")
        if n_bins < 3:
            raise ParameterError("need at least 3 bins")
        self.half_range = float(half_range)
        self.n_bins = int(n_bins)
        self.width = 2.0 * self.half_range / self.n_bins
        if n_bins % 2 == 1:
            upper = np.arange(1, (n_bins - 1) // 2 + 1) * self.width
            self.mids = np.concatenate([-upper[::-1], [0.0], upper])
        else:
            upper = (np.arange(n_bins // 2) + 0.5) * self.width
            self.mids = np.concatenate([-upper[::-1], upper])

    def bin_of(self, values) -> np.ndarray:
        """Bin index per value; outside mass lands in the end bins."""
        v = np.asarray(values, dtype=float)
        idx = np.floor((v + self.half_range) / self.width).astype(np.int64)
        return np.clip(idx, 0, self.n_bins - 1)

    @classmethod
    def for_marginal(cls, marginal, n_bins: int = DEFAULT_N_BINS,
                     side_info=None, expansion: float = GRID_EXPANSION,
                     tail: float = GRID_TAIL) -> "BinGrid":
        """Grid wide enough for the marginal's 1e-4 tails and any side info."""
        reach = max(abs(float(marginal.quantile(tail))),
                    abs(float(marginal.quantile(1.0 - tail))))
        if side_info is not None and np.size(side_info) > 0:
            reach = max(reach, float(np.max(np.abs(side_info))))
        if reach <= 0.0:
            reach = 1.0
        return cls(expansion * reach, n_bins)


@dataclass
class DecoderConfig:
    n_bins: int = DEFAULT_N_BINS
    iterations: int = DEFAULT_ITERATIONS
    damping: float = 0.0
    grid_expansion: float = GRID_EXPANSION
    support_truncation: float = SUPPORT_TRUNCATION

    def __post_init__(self):
        if self.iterations < 1:
            raise ParameterError("need at least one iteration")
        if not (0.0 <= self.damping < 1.0):
            raise ParameterError("damping must lie in [0, 1)")


@dataclass
class DecodeDiagnostics:
    underflow_count: int = 0
    sweeps: int = 0
    iterations: int = 0
    message_entropy: list = field(default_factory=list)

    def dump_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("sweep,mean_message_entropy\n")
            for i, h in enumerate(self.message_entropy, start=1):
                fh.write(f"{i},{h:.10g}\n")
            fh.write(f"# underflow_count={self.underflow_count}\n")


@dataclass
class DecodeResult:
    estimate: np.ndarray
    beliefs: np.ndarray
    grid: BinGrid
    diagnostics: DecodeDiagnostics


def build_prior(grid: BinGrid, marginal, copula=None, history_u=None) -> np.ndarray:
    """Per-variable prior pmfs on the grid.

    Evaluates the marginal pdf at the bin mids, multiplies by the copula
    correction at u = cdf(mid) conditioned on each variable's history of
    already-recovered transforms (shape (k, n)), and normalizes each row.
    """
    mids = grid.mids
    base = np.asarray(marginal.pdf(mids), dtype=float)
    if not np.all(np.isfinite(base)) or np.any(base < 0.0):
        raise ParameterError("marginal pdf must be finite and nonnegative on the grid")
    if copula is None or history_u is None or np.size(history_u) == 0:
        row = _normalize_or_uniform(base)
        return np.tile(row, (1, 1)) if False else np.broadcast_to(row, (1, grid.n_bins)).copy()
    hist = np.atleast_2d(np.asarray(history_u, dtype=float))  # (k, n)
    k, n = hist.shape
    u_grid = clamp_unit(np.asarray(marginal.cdf(mids), dtype=float))
    correction = _batched_correction(copula, hist.T, u_grid)  # (n, N)
    priors = correction * base[None, :]
    out = np.empty_like(priors)
    for i in range(n):
        out[i] = _normalize_or_uniform(priors[i])
    return out


def _batched_correction(copula, hist_rows: np.ndarray, u_grid: np.ndarray) -> np.ndarray:
    """conditional_correction for every variable at once: (n, N) ratios."""
    n, k = hist_rows.shape
    big = np.empty((n, u_grid.size, k + 1), dtype=float)
    big[:, :, :k] = clamp_unit(hist_rows)[:, None, :]
    big[:, :, k] = u_grid[None, :]
    flat = big.reshape(-1, k + 1)
    if isinstance(copula, (GaussianCopula, StudentTCopula)):
        num_model = copula.marginal(np.arange(k + 1))
        log_num = num_model.log_density(flat).reshape(n, u_grid.size)
        if k == 1:
            log_den = np.zeros(n)
        else:
            log_den = copula.marginal(np.arange(k)).log_density(clamp_unit(hist_rows))
    else:
        if k != 1:
            raise DimensionError("archimedean correction supports a single side modality")
        log_num = copula.log_density(flat).reshape(n, u_grid.size)
        log_den = np.zeros(n)
    # subtract the per-variable max before exponentiation; rows get normalized
    log_ratio = log_num - log_den[:, None]
    log_ratio -= log_ratio.max(axis=1, keepdims=True)
    return np.exp(log_ratio)


def _normalize_or_uniform(row: np.ndarray, counter: list | None = None) -> np.ndarray:
    total = row.sum()
    if total <= 0.0 or not np.isfinite(total):
        if counter is not None:
            counter[0] += 1
        return np.full(row.shape, 1.0 / row.size)
    return row / total


class _FactorGraph:
    """Edge bookkeeping between measurement rows and variables."""

    def __init__(self, theta: SparseSignMatrix):
        rows = []
        edge_var = []
        edge_sign = []
        factor_slices = []
        pos = 0
        for j in range(theta.m):
            cols, signs = theta.row_support(j)
            factor_slices.append((pos, pos + cols.size))
            rows.append((cols, signs))
            edge_var.extend(cols.tolist())
            edge_sign.extend(signs.tolist())
            pos += cols.size
        self.n_edges = pos
        self.rows = rows
        self.factor_slices = factor_slices
        self.edge_var = np.asarray(edge_var, dtype=np.int64)
        self.edge_sign = np.asarray(edge_sign, dtype=np.int64)
        var_edges = [[] for _ in range(theta.n)]
        for e, i in enumerate(self.edge_var):
            var_edges[i].append(e)
        self.var_edges = [np.asarray(v, dtype=np.int64) for v in var_edges]


def decode(theta: SparseSignMatrix, y, grid: BinGrid, priors,
           config: DecoderConfig | None = None, noise_std: float = 0.0) -> DecodeResult:
    """Run synchronous BP and return mid-value estimates plus beliefs."""
    config = config or DecoderConfig()
    y = np.asarray(y, dtype=float)
    if y.shape != (theta.m,):
        raise DimensionError(f"y must have shape ({theta.m},)")
    if noise_std < 0.0:
        raise ParameterError("noise_std must be nonnegative")
    n, nbins = theta.n, grid.n_bins
    priors = np.asarray(priors, dtype=float)
    if priors.ndim == 1:
        priors = np.broadcast_to(priors, (n, nbins))
    if priors.shape == (1, nbins):
        priors = np.broadcast_to(priors, (n, nbins))
    if priors.shape != (n, nbins):
        raise DimensionError(f"priors must have shape ({n}, {nbins})")

    graph = _FactorGraph(theta)
    diag = DecodeDiagnostics()
    counter = [0]

    # messages, factor-major edge layout
    q_msgs = np.empty((graph.n_edges, nbins))
    for i in range(n):
        q_msgs[graph.var_edges[i]] = priors[i]
    r_msgs = np.full((graph.n_edges, nbins), 1.0 / nbins)

    sweeps = (config.iterations + 1) // 2
    for _ in range(sweeps):
        r_new = _factor_sweep(graph, y, grid, q_msgs, noise_std, config, counter)
        if config.damping > 0.0:
            r_new = config.damping * r_msgs + (1.0 - config.damping) * r_new
            r_new /= r_new.sum(axis=1, keepdims=True)
        r_msgs = r_new
        q_msgs = _variable_sweep(graph, priors, r_msgs, counter)
        with np.errstate(divide="ignore", invalid="ignore"):
            ent = -np.sum(np.where(r_msgs > 0.0, r_msgs * np.log(r_msgs), 0.0), axis=1)
        diag.message_entropy.append(float(ent.mean()))

    beliefs = priors.copy()
    for i in range(n):
        for e in graph.var_edges[i]:
            beliefs[i] *= r_msgs[e]
        beliefs[i] = _normalize_or_uniform(beliefs[i], counter)
    estimate = grid.mids[np.argmax(beliefs, axis=1)]

    diag.underflow_count = counter[0]
    diag.sweeps = sweeps
    diag.iterations = config.iterations
    return DecodeResult(estimate=estimate, beliefs=beliefs, grid=grid, diagnostics=diag)


def _variable_sweep(graph: _FactorGraph, priors: np.ndarray, r_msgs: np.ndarray,
                    counter: list) -> np.ndarray:
    """q_{i->j} = prior_i * prod of r from the other factors, normalized."""
    q_new = np.empty_like(r_msgs)
    for i in range(priors.shape[0]):
        edges = graph.var_edges[i]
        d = edges.size
        if d == 0:
            continue
        if d == 1:
            q_new[edges[0]] = _normalize_or_uniform(priors[i], counter)
            continue
        incoming = r_msgs[edges]
        pre = np.empty_like(incoming)
        suf = np.empty_like(incoming)
        pre[0] = priors[i]
        for a in range(1, d):
            pre[a] = pre[a - 1] * incoming[a - 1]
        suf[d - 1] = incoming[d - 1] if False else np.ones_like(priors[i])
        suf[d - 1][:] = 1.0
        for a in range(d - 2, -1, -1):
            suf[a] = suf[a + 1] * incoming[a + 1]
        for a in range(d):
            q_new[edges[a]] = _normalize_or_uniform(pre[a] * suf[a], counter)
    return q_new


def _truncated_support(msg: np.ndarray, threshold: float) -> tuple[int, int]:
    """[lo, hi) bounds of entries above threshold * max."""
    cut = threshold * msg.max()
    nz = np.nonzero(msg > cut)[0]
    if nz.size == 0:
        return 0, msg.size
    return int(nz[0]), int(nz[-1]) + 1


def _factor_sweep(graph: _FactorGraph, y: np.ndarray, grid: BinGrid,
                  q_msgs: np.ndarray, noise_std: float, config: DecoderConfig,
                  counter: list) -> np.ndarray:
    nbins, w = grid.n_bins, grid.width
    r_new = np.empty_like(q_msgs)
    taps = None
    if noise_std > 0.0:
        half_taps = int(math.ceil(KERNEL_CUTOFF_SIGMAS * noise_std / w))
        delta = np.arange(-half_taps, half_taps + 1) * w

    for j, (cols, signs) in enumerate(graph.rows):
        d = cols.size
        if d == 0:
            continue
        sl = slice(*graph.factor_slices[j])
        incoming = q_msgs[sl]
        # pmf of theta_jk * s_k on the shared grid: reverse where the sign is -1
        adjusted = incoming.copy()
        flip = signs < 0
        adjusted[flip] = adjusted[flip, ::-1]

        # offset of the box/kernel center in summed-index coordinates:
        # residual = C - w * (t + j_tot) with C = y_j + d*(G - w/2)
        c_over_w = (y[j] + d * (grid.half_range - 0.5 * w)) / w

        if d == 1:
            loo = [(np.ones(1), 0)]
        else:
            loo = _leave_one_out(adjusted, config.support_truncation)

        for a in range(d):
            part, lo = loo[a]
            if noise_std == 0.0:
                # unique kernel tap: t + j_tot = floor(C/w + 1/2) (left-closed box)
                u_star = math.floor(c_over_w + 0.5)
                out = np.zeros(nbins)
                # r(t) = part[u_star - lo - t] where in range
                src = u_star - lo - np.arange(nbins)
                ok = (src >= 0) & (src < part.size)
                out[ok] = part[src[ok]]
            else:
                out = _gaussian_readout(part, lo, c_over_w, delta, noise_std, w, nbins)
            if signs[a] < 0:
                out = out[::-1]
            r_new[sl.start + a] = _normalize_or_uniform(np.maximum(out, 0.0), counter)
    return r_new


def _leave_one_out(adjusted: np.ndarray, threshold: float) -> list:
    """Convolutions of all-but-one rows of `adjusted`, with index offsets.

    Returns per row a pair (pmf, lo) where pmf[a] is the probability of the
    partial sum at summed-index lo + a. Uses prefix/suffix spectrum products
    at a zero-padded length covering the full linear support, so there is no
    wrap-around.
    """
    d, nbins = adjusted.shape
    los = np.empty(d, dtype=np.int64)
    his = np.empty(d, dtype=np.int64)
    chunks = []
    for a in range(d):
        lo, hi = _truncated_support(adjusted[a], threshold)
        los[a], his[a] = lo, hi
        chunks.append(adjusted[a, lo:hi])
    widths = his - los
    total_width = int(widths.sum())
    max_len = total_width - int(widths.min()) - (d - 2)  # support of the widest leave-one-out
    L = sfft.next_fast_len(max(max_len, 1), real=True)

    spectra = np.empty((d, L // 2 + 1), dtype=np.complex128)
    for a in range(d):
        spectra[a] = sfft.rfft(chunks[a], n=L)
    pre = np.empty_like(spectra)
    suf = np.empty_like(spectra)
    pre[0] = spectra[0]
    for a in range(1, d):
        pre[a] = pre[a - 1] * spectra[a]
    suf[d - 1] = spectra[d - 1]
    for a in range(d - 2, -1, -1):
        suf[a] = suf[a + 1] * spectra[a]

    lo_all = int(los.sum())
    out = []
    spec = np.empty(L // 2 + 1, dtype=np.complex128)
    for a in range(d):
        if a == 0:
            spec[:] = suf[1]
        elif a == d - 1:
            spec[:] = pre[d - 2]
        else:
            np.multiply(pre[a - 1], suf[a + 1], out=spec)
        full = sfft.irfft(spec, n=L)
        length = total_width - int(widths[a]) - (d - 2)
        out.append((full[:length], lo_all - int(los[a])))
    return out


def _gaussian_readout(part: np.ndarray, lo: int, c_over_w: float,
                      delta: np.ndarray, noise_std: float, w: float,
                      nbins: int) -> np.ndarray:
    """r(t) = sum_a part[a] * N(C - w(t + a + lo); sigma^2) via a sliding dot.

    The kernel support covers summed indices u in [u_lo, u_hi]; for output
    bin t the relevant slice of `part` starts at u_lo - lo - t and the kernel
    is sampled at the exact residuals.
    """
    ktaps = delta.size
    # residual at summed index u is C - w*u; kernel centered at u = C/w
    u_center = int(math.floor(c_over_w + 0.5))
    u_vals = u_center + np.arange(-(ktaps // 2), ktaps - ktaps // 2)
    resid = (c_over_w - u_vals) * w
    kern = np.exp(-0.5 * (resid / noise_std) ** 2)
    # r(t) = sum_k kern[k] * part[u_vals[k] - lo - t]
    pad = ktaps + nbins
    padded = np.zeros(part.size + 2 * pad)
    padded[pad : pad + part.size] = part
    start0 = u_vals[0] - lo  # part-index for t=0, k=0
    windows = np.lib.stride_tricks.sliding_window_view(padded, ktaps)
    starts = start0 - np.arange(nbins) + pad
    starts = np.clip(starts, 0, windows.shape[0] - 1)
    return windows[starts] @ kern


def sequential_decode(order, thetas, measurements, marginals, copula,
                      config: DecoderConfig | None = None, noise_std: float = 0.0,
                      side_info=None) -> dict:
    """Decode modalities one after another, feeding transforms forward.

    `order` lists modality names; `thetas`, `measurements`, `marginals` are
    dicts keyed by those names. The copula's modality order must match
    `order`. `side_info` optionally maps a modality name to known coefficient
    values that stand in for decoding it (its measurements may then be
    omitted).
    """
    config = config or DecoderConfig()
    side_info = side_info or {}
    results: dict = {}
    history_u: list[np.ndarray] = []
    history_vals: list[np.ndarray] = []

    for idx, name in enumerate(order):
        marginal = marginals[name]
        if name in side_info:
            shat = np.asarray(side_info[name], dtype=float)
        else:
            side_flat = np.concatenate(history_vals) if history_vals else None
            grid = BinGrid.for_marginal(marginal, n_bins=config.n_bins,
                                        side_info=side_flat,
                                        expansion=config.grid_expansion)
            hist = np.vstack(history_u) if history_u else None
            use_copula = copula if (hist is not None) else None
            priors = build_prior(grid, marginal, copula=use_copula, history_u=hist)
            result = decode(thetas[name], measurements[name], grid, priors,
                            config=config, noise_std=noise_std)
            results[name] = result
            shat = result.estimate
        history_vals.append(shat)
        history_u.append(clamp_unit(np.asarray(marginal.cdf(shat), dtype=float)))
    return results
