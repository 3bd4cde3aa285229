"""Low-rank compression of matrix blocks sampled from an entry oracle.

A block ``A(rows, cols)`` is approximated as ``u @ v.conj().T`` either by
adaptive cross approximation (partial or rook pivoting, touching only O(k)
rows and columns of the block) or by a dense SVD that materializes the block
and serves as the exact in-repo reference method.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tree import IndexRange

METHODS = ("aca_partial_pivot", "aca_rook_pivot", "dense_svd")

# rook pivoting: bound on alternating row/column argmax sweeps per pivot
_ROOK_SWEEPS = 4


@dataclass
class CompressionConfig:
    """Tolerance / rank budget and method selection for block compression.

    ``tol`` is relative in the Frobenius norm.  ``max_rank`` of ``None``
    means unbounded.  ACA estimates the block norm from the sampled crosses,
    so its tolerance is honored within that sampling model.
    """

    tol: float = 1e-12
    max_rank: int | None = None
    method: str = "aca_rook_pivot"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown compression method {self.method!r}")
        if self.tol <= 0 and self.max_rank is None:
            raise ValueError("need tol > 0 or a max_rank cap")
        if self.max_rank is not None and self.max_rank < 0:
            raise ValueError("max_rank must be >= 0")


@dataclass
class LowRankFactor:
    """Factor pair with ``block ~= u @ v.conj().T``.

    ``v`` stores unconjugated columns; the conjugate transpose is applied in
    products.  ``truncated`` marks a best-effort result that hit the rank
    cap before reaching the tolerance.
    """

    u: np.ndarray
    v: np.ndarray
    truncated: bool = False

    @property
    def rank(self) -> int:
        return self.u.shape[1]

    def expand(self) -> np.ndarray:
        return self.u @ self.v.conj().T


def _fetch(entry_oracle, i, j, dtype):
    vals = np.asarray(entry_oracle(i, j), dtype=dtype)
    if not np.all(np.isfinite(vals)):
        raise ValueError("entry oracle produced a non-finite value")
    return vals


def _svd_factor(block: np.ndarray, tol: float, max_rank: int | None) -> LowRankFactor:
    u, s, vh = np.linalg.svd(block, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        k_tol = 0
    else:
        k_tol = int(np.sum(s > tol * s[0])) if tol > 0 else s.size
    k = k_tol if max_rank is None else min(k_tol, max_rank)
    return LowRankFactor(
        u=np.ascontiguousarray(u[:, :k] * s[:k]),
        v=np.ascontiguousarray(vh[:k].conj().T),
        truncated=k < k_tol,
    )


def _aca(entry_oracle, rows, cols, tol, max_rank, rook, dtype):
    m, n = len(rows), len(cols)
    ii = np.arange(rows.start, rows.end)
    jj = np.arange(cols.start, cols.end)
    kmax = min(m, n) if max_rank is None else min(m, n, max_rank)
    us: list[np.ndarray] = []
    ws: list[np.ndarray] = []  # residual pivot rows; v column k is conj(ws[k])
    used_rows = np.zeros(m, dtype=bool)
    used_cols = np.zeros(n, dtype=bool)
    norm2 = 0.0  # running ||U W||_F^2 estimate

    def residual_row(i):
        r = _fetch(entry_oracle, ii[i], jj, dtype)
        for u, w in zip(us, ws):
            r -= u[i] * w
        return r

    def residual_col(j):
        c = _fetch(entry_oracle, ii, jj[j], dtype)
        for u, w in zip(us, ws):
            c -= w[j] * u
        return c

    last_step2 = np.inf
    converged = False
    next_i = None  # row proposed by the previous residual column
    while len(us) < kmax:
        row = None
        if next_i is not None and not used_rows[next_i]:
            r = residual_row(next_i)
            if np.where(used_cols, 0.0, np.abs(r)).max() > 0.0:
                i, row = next_i, r
        if row is None:
            # fall back to scanning; skip rows whose residual is exactly zero
            for cand in np.flatnonzero(~used_rows):
                r = residual_row(cand)
                masked = np.where(used_cols, 0.0, np.abs(r))
                if masked.max() > 0.0:
                    i, row = int(cand), r
                    break
                used_rows[cand] = True
        if row is None:
            converged = True  # residual exhausted: exact rank found
            break
        masked = np.where(used_cols, 0.0, np.abs(row))
        j = int(masked.argmax())
        col = residual_col(j)
        if rook:
            for _ in range(_ROOK_SWEEPS):
                cmask = np.where(used_rows, 0.0, np.abs(col))
                i2 = int(cmask.argmax())
                if cmask[i2] <= np.abs(row[j]):
                    break  # pivot already maximal in its column
                i = i2
                row = residual_row(i)
                masked = np.where(used_cols, 0.0, np.abs(row))
                j2 = int(masked.argmax())
                if j2 == j:
                    break  # rook condition met
                j = j2
                col = residual_col(j)
        pivot = row[j]
        if pivot == 0:
            used_rows[i] = True
            continue
        u = col / pivot
        step2 = float(np.vdot(u, u).real) * float(np.vdot(row, row).real)
        if tol > 0 and us and step2 <= tol * tol * norm2:
            converged = True  # new cross is below tolerance: drop it and stop
            break
        cross = 0.0
        for ul, wl in zip(us, ws):
            cross += (np.vdot(ul, u) * np.vdot(wl, row)).real
        us.append(u)
        ws.append(row)
        used_rows[i] = True
        used_cols[j] = True
        cmask = np.where(used_rows, 0.0, np.abs(col))
        next_i = int(cmask.argmax()) if cmask.max() > 0.0 else None
        norm2 += step2 + 2.0 * cross
        norm2 = max(norm2, step2)  # guard against cancellation in the estimate
        last_step2 = step2
    k = len(us)
    truncated = (
        not converged and tol > 0 and k < min(m, n) and last_step2 > tol * tol * norm2
    )
    u = np.empty((m, k), dtype=dtype)
    v = np.empty((n, k), dtype=dtype)
    for l in range(k):
        u[:, l] = us[l]
        v[:, l] = np.conj(ws[l])
    return LowRankFactor(u=u, v=v, truncated=truncated)


def compress(
    entry_oracle,
    rows: IndexRange,
    cols: IndexRange,
    config: CompressionConfig,
    dtype=np.float64,
) -> LowRankFactor:
    """Compress the block ``A(rows, cols)`` of the oracle to a factor pair.

    ``dense_svd`` materializes the block; the ACA methods sample rows and
    columns.  Non-finite oracle values raise ``ValueError``.
    """
    dtype = np.dtype(dtype)
    if config.method == "dense_svd":
        ii = np.arange(rows.start, rows.end)
        jj = np.arange(cols.start, cols.end)
        block = _fetch(entry_oracle, ii[:, None], jj[None, :], dtype)
        return _svd_factor(block, config.tol, config.max_rank)
    rook = config.method == "aca_rook_pivot"
    return _aca(entry_oracle, rows, cols, config.tol, config.max_rank, rook, dtype)


def recompress(factor: LowRankFactor, tol: float) -> LowRankFactor:
    """SVD-reduce an existing factor to the smallest rank meeting ``tol``."""
    if factor.rank == 0:
        return LowRankFactor(factor.u.copy(), factor.v.copy())
    qu, ru = np.linalg.qr(factor.u)
    qv, rv = np.linalg.qr(factor.v)
    core = ru @ rv.conj().T
    p, s, qh = np.linalg.svd(core)
    if s[0] == 0.0:
        k = 0
    else:
        k = int(np.sum(s > tol * s[0]))
    return LowRankFactor(
        u=np.ascontiguousarray(qu @ (p[:, :k] * s[:k])),
        v=np.ascontiguousarray(qv @ qh[:k].conj().T),
        truncated=factor.truncated,
    )
