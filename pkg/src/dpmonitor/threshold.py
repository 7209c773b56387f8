"""Monte Carlo calibration of the detector threshold.

The threshold ``q(alpha)`` is the upper ``alpha`` quantile of

    D = sup_{0 <= u < v <= 1} (B(v) - B(u)) / (v - u)^beta

for a standard Brownian motion ``B``. Each draw simulates ``B`` on the grid
``k/G`` and scans all grid pairs. The scan is exact but skips blocks of
right endpoints whose best attainable value (block maximum of ``B`` times the
largest weight in the block) cannot beat the running maximum.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import os
import tempfile
import warnings
from pathlib import Path

import numba
import numpy as np

from ._validation import (
    check_beta,
    check_open_unit,
    check_positive_int,
    derive_rng,
)

__all__ = [
    "DEFAULT_GRID",
    "DEFAULT_REPS",
    "DEFAULT_SEED",
    "ThresholdRequest",
    "UnreliableQuantileWarning",
    "sup_weighted_increment",
    "simulate_sup_increment",
    "sup_increment_draws",
    "brownian_increments",
    "quantile",
    "cached_quantile",
    "default_cache_path",
]

log = logging.getLogger(__name__)

DEFAULT_GRID = 2000
DEFAULT_REPS = 200_000
DEFAULT_SEED = 20240917

_BLOCK = 32
_CHUNK = 2048


class UnreliableQuantileWarning(UserWarning):
    """Fewer than ten draws lie beyond the requested quantile."""


@dataclasses.dataclass(frozen=True)
class ThresholdRequest:
    alpha: float
    beta: float
    grid: int = DEFAULT_GRID
    reps: int = DEFAULT_REPS
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        object.__setattr__(self, "alpha", check_open_unit(self.alpha, "alpha"))
        object.__setattr__(self, "beta", check_beta(self.beta))
        object.__setattr__(self, "grid", check_positive_int(self.grid, "grid"))
        object.__setattr__(self, "reps", check_positive_int(self.reps, "reps"))
        object.__setattr__(self, "seed", int(self.seed))


def _pair_weights(grid: int, beta: float) -> np.ndarray:
    w = np.empty(grid + 1)
    w[0] = np.inf
    w[1:] = (np.arange(1, grid + 1) / grid) ** (-beta)
    return w


@numba.njit(cache=True)
def _sup_scan(B, w, block):
    G = B.shape[0] - 1
    nb = G // block + 1
    bmax = np.full(nb, -np.inf)
    for i in range(G + 1):
        k = i // block
        if B[i] > bmax[k]:
            bmax[k] = B[i]
    tail = np.empty(nb + 1)
    tail[nb] = -np.inf
    for k in range(nb - 1, -1, -1):
        tail[k] = max(tail[k + 1], bmax[k])

    # Seed the running maximum with the best unweighted increment and the best
    # single step; both are valid pairs.
    best = -np.inf
    lo = 0
    for v in range(1, G + 1):
        if B[v - 1] < B[lo]:
            lo = v - 1
        val = (B[v] - B[lo]) * w[v - lo]
        if val > best:
            best = val
        val = (B[v] - B[v - 1]) * w[1]
        if val > best:
            best = val

    for u in range(G):
        bu = B[u]
        k = (u + 1) // block
        while k < nb:
            start = max(k * block, u + 1)
            # Weights decrease with the lag, so w[start-u] bounds the block and
            # everything after it. Only sound once best >= 0.
            if best >= 0.0:
                if (tail[k] - bu) * w[start - u] <= best:
                    break
                if (bmax[k] - bu) * w[start - u] <= best:
                    k += 1
                    continue
            end = min((k + 1) * block, G + 1)
            for v in range(start, end):
                val = (B[v] - bu) * w[v - u]
                if val > best:
                    best = val
            k += 1
    return best


@numba.njit(cache=True)
def _sup_scan_rows(increments, w, block):
    R, G = increments.shape
    out = np.empty(R)
    B = np.empty(G + 1)
    for r in range(R):
        B[0] = 0.0
        acc = 0.0
        for k in range(G):
            acc += increments[r, k]
            B[k + 1] = acc
        out[r] = _sup_scan(B, w, block)
    return out


def sup_weighted_increment(path, beta: float) -> float:
    """Largest ``(B[v] - B[u]) / ((v-u)/G)^beta`` over grid pairs ``u < v``.

    ``path`` holds ``B`` at ``k/G`` for ``k = 0..G``.
    """
    B = np.ascontiguousarray(path, dtype=float)
    if B.ndim != 1 or B.shape[0] < 3:
        raise ValueError("path needs at least three grid values (G >= 2)")
    beta = check_beta(beta)
    return float(_sup_scan(B, _pair_weights(B.shape[0] - 1, beta), _BLOCK))


def simulate_sup_increment(beta: float, grid: int, rng) -> float:
    """One draw of the discretized supremum on a fresh Brownian path."""
    if grid < 2:
        raise ValueError(f"grid must be >= 2, got {grid}")
    steps = rng.standard_normal(grid) * math.sqrt(1.0 / grid)
    return sup_weighted_increment(np.concatenate(([0.0], np.cumsum(steps))), beta)


def brownian_increments(grid: int, seed: int, start: int, stop: int) -> np.ndarray:
    """Normal(0, 1/G) steps of the paths for replications ``start..stop-1``."""
    inc = np.empty((stop - start, grid))
    for r in range(start, stop):
        inc[r - start] = derive_rng(seed, r).standard_normal(grid)
    inc *= math.sqrt(1.0 / grid)
    return inc


def _draw_range(beta, grid, seed, start, stop):
    w = _pair_weights(grid, beta)
    out = np.empty(stop - start)
    for c0 in range(start, stop, _CHUNK):
        c1 = min(c0 + _CHUNK, stop)
        out[c0 - start : c1 - start] = _sup_scan_rows(brownian_increments(grid, seed, c0, c1), w, _BLOCK)
    return out


# (beta, grid, seed) -> draws; replication r always uses stream (seed, r), so
# a shorter request is a prefix of a longer one.
_DRAWS: dict[tuple[float, int, int], np.ndarray] = {}


def sup_increment_draws(beta: float, grid: int, reps: int, seed: int) -> np.ndarray:
    """``reps`` independent draws; replication ``r`` uses the stream ``(seed, r)``."""
    beta = check_beta(beta)
    grid = check_positive_int(grid, "grid")
    reps = check_positive_int(reps, "reps")
    if grid < 2:
        raise ValueError(f"grid must be >= 2, got {grid}")
    key = (beta, grid, int(seed))
    have = _DRAWS.get(key, np.empty(0))
    if have.shape[0] < reps:
        log.info("simulating %d Brownian paths (beta=%g, grid=%d)", reps - have.shape[0], beta, grid)
        have = np.concatenate([have, _draw_range(beta, grid, seed, have.shape[0], reps)])
        _DRAWS[key] = have
    return have[:reps].copy()


def _order_statistic(draws: np.ndarray, alpha: float) -> float:
    R = draws.shape[0]
    rank = math.ceil(round((1.0 - alpha) * R, 9))
    rank = min(max(rank, 1), R)
    return float(np.partition(draws, rank - 1)[rank - 1])


def quantile(req: ThresholdRequest) -> float:
    """Upper ``alpha`` quantile: the order statistic of rank ``ceil((1-alpha) R)``."""
    if req.reps * req.alpha < 10:
        warnings.warn(
            f"only {req.reps * req.alpha:g} expected draws above the {1 - req.alpha:g} quantile",
            UnreliableQuantileWarning,
            stacklevel=2,
        )
    draws = sup_increment_draws(req.beta, req.grid, req.reps, req.seed)
    return _order_statistic(draws, req.alpha)


# --------------------------------------------------------------------------
# On-disk cache: one "alpha beta grid reps seed q" record per line.


def default_cache_path() -> Path:
    env = os.environ.get("DPMONITOR_CACHE")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "dpmonitor" / "thresholds.txt"


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _record(req: ThresholdRequest, q: float) -> str:
    return " ".join([_fmt(req.alpha), _fmt(req.beta), str(req.grid), str(req.reps), str(req.seed), _fmt(q)])


def _read_cache(path: Path):
    records, corrupt = [], False
    try:
        lines = path.read_text().splitlines()
    except FileNotFoundError:
        return records, False
    except (OSError, UnicodeDecodeError):
        return records, True
    for line in lines:
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split(" ")
        try:
            if len(parts) != 6:
                raise ValueError(line)
            alpha, beta = float(parts[0]), float(parts[1])
            grid, reps, seed = int(parts[2]), int(parts[3]), int(parts[4])
            q = float(parts[5])
        except ValueError:
            corrupt = True
            continue
        records.append(((alpha, beta, grid, reps, seed), q, line))
    return records, corrupt


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def cached_quantile(req: ThresholdRequest, cache_path=None) -> float:
    """:func:`quantile` backed by a plain-text cache keyed by all request fields.

    With ``cache_path=None`` nothing is read or written. Corrupt lines are
    dropped with a warning and the file is rewritten.
    """
    if cache_path is None:
        return quantile(req)
    path = Path(cache_path)
    key = (req.alpha, req.beta, req.grid, req.reps, req.seed)
    records, corrupt = _read_cache(path)
    if corrupt:
        warnings.warn(f"threshold cache {path} is corrupt; rebuilding it", RuntimeWarning, stacklevel=2)
    for rkey, q, _ in records:
        if rkey == key:
            if corrupt:
                _atomic_write(path, "".join(line + "\n" for _, _, line in records))
            return q
    q = quantile(req)
    lines = [line for _, _, line in records] + [_record(req, q)]
    _atomic_write(path, "".join(line + "\n" for line in lines))
    return q
