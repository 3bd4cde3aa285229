"""Batched dense kernels: GEMM and pivoted LU factor/solve over block sets.

This is the kernel layer the level-wise factorization and solve are written
against.  Its shape mirrors vendor batched-BLAS APIs (one dispatch runs the
same small dense operation over many independent blocks) so an accelerator
executor could be slotted in without touching callers; the executors here
are CPU ones (serial, or a thread pool parallelizing across blocks).

Determinism contract
--------------------
Every operation produces bit-identical buffers regardless of executor and
regardless of whether the uniform constant-stride fast path or the generic
per-block path dispatched it.  Parallelism is only ever across disjoint
blocks (or across whole output rows in :func:`grouped_gemm_large`); the
arithmetic order within one output element is fixed.  This property is what
lets the test suite compare executors bit-for-bit.

Flop accounting: a GEMM of shapes ``(m, k) @ (k, n)`` counts ``2*m*k*n``
operations; applying a stored size-``s`` LU factor to one column counts
``2*s*s`` (each stored entry enters one multiply-add).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import as_strided


class SingularBlockError(RuntimeError):
    """A block in a batch is singular to working precision."""

    def __init__(self, indices, context: str = ""):
        self.indices = list(indices)
        msg = f"singular block(s) at batch index {self.indices}"
        if context:
            msg += f" ({context})"
        super().__init__(msg)


# ---------------------------------------------------------------------------
# Block descriptors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BlockRef:
    """A dense sub-block inside a flat buffer.

    Entry ``(i, j)`` of the block lives at ``buf[offset + i + j * ld]``
    (column-major within the block).  ``ld`` is the stride between
    consecutive columns.
    """

    buf: np.ndarray
    offset: int
    rows: int
    cols: int
    ld: int

    def __post_init__(self):
        if self.buf.ndim != 1:
            raise ValueError("BlockRef buffer must be a flat 1-d array")
        if self.rows < 0 or self.cols < 0:
            raise ValueError("negative block shape")
        if self.rows > 0 and self.cols > 0:
            need = self.offset + (self.cols - 1) * self.ld + self.rows
            if self.offset < 0 or need > self.buf.size:
                raise ValueError(
                    f"block [{self.rows}x{self.cols}, ld={self.ld}] at offset "
                    f"{self.offset} exceeds buffer of size {self.buf.size}"
                )

    def view(self) -> np.ndarray:
        """Writable 2-d view of the block (no copy)."""
        it = self.buf.itemsize
        return as_strided(
            self.buf[self.offset :],
            shape=(self.rows, self.cols),
            strides=(it, self.ld * it),
        )

    def footprint(self) -> tuple[int, int]:
        """Half-open index interval of buffer elements this block can touch."""
        if self.rows == 0 or self.cols == 0:
            return (self.offset, self.offset)
        return (self.offset, self.offset + (self.cols - 1) * self.ld + self.rows)


def blocks_overlap(a: BlockRef, b: BlockRef) -> bool:
    """Whether two blocks share any buffer element.

    Exact for blocks with equal ``ld`` (the common case: sub-blocks of one
    panel); conservative (footprint intervals) otherwise.
    """
    if a.buf is not b.buf:
        return False
    if a.rows == 0 or a.cols == 0 or b.rows == 0 or b.cols == 0:
        return False
    fa, fb = a.footprint(), b.footprint()
    if fa[1] <= fb[0] or fb[1] <= fa[0]:
        return False
    if a.ld == b.ld and a.ld >= a.rows and a.ld >= b.rows:
        ra, ca = a.offset % a.ld, a.offset // a.ld
        rb, cb = b.offset % b.ld, b.offset // b.ld
        rows_disjoint = ra + a.rows <= rb or rb + b.rows <= ra
        cols_disjoint = ca + a.cols <= cb or cb + b.cols <= ca
        return not (rows_disjoint or cols_disjoint)
    return True


def as_stack(refs: list[BlockRef]) -> np.ndarray | None:
    """Zero-copy 3-d stack over uniform constant-stride blocks, else None.

    Requires identical shapes and leading dimension, one shared buffer, and
    a constant offset stride between consecutive blocks.
    """
    r0 = refs[0]
    if any(
        r.buf is not r0.buf or r.rows != r0.rows or r.cols != r0.cols or r.ld != r0.ld
        for r in refs
    ):
        return None
    it = r0.buf.itemsize
    if len(refs) == 1:
        return as_strided(
            r0.buf[r0.offset :],
            shape=(1, r0.rows, r0.cols),
            strides=(0, it, r0.ld * it),
        )
    step = refs[1].offset - r0.offset
    if any(refs[i + 1].offset - refs[i].offset != step for i in range(len(refs) - 1)):
        return None
    lo = min(r0.offset, refs[-1].offset)
    hi = max(refs[-1].footprint()[1], r0.footprint()[1])
    if lo < 0 or hi > r0.buf.size:
        return None
    return as_strided(
        r0.buf[r0.offset :],
        shape=(len(refs), r0.rows, r0.cols),
        strides=(step * it, it, r0.ld * it),
    )


@dataclass
class BlockBatch:
    """A set of same-operation block tuples plus an optional uniform view.

    ``items`` holds per-block operand tuples of :class:`BlockRef`.  When
    every operand position is uniform (see :func:`as_stack`) the batch can
    be dispatched as single stacked kernels; ``uniform()`` reports this.
    """

    items: list[tuple[BlockRef, ...]]

    def uniform(self) -> tuple[np.ndarray, ...] | None:
        if not self.items:
            return None
        stacks = []
        for pos in range(len(self.items[0])):
            s = as_stack([it[pos] for it in self.items])
            if s is None:
                return None
            stacks.append(s)
        return tuple(stacks)


# ---------------------------------------------------------------------------
# Executors
# ---------------------------------------------------------------------------


class SerialExecutor:
    """Runs batch bodies in one chunk on the calling thread."""

    threads = 1

    def run(self, nitems: int, body) -> None:
        if nitems > 0:
            body(0, nitems)

    def __repr__(self) -> str:
        return "serial"


class ThreadedExecutor:
    """Splits a batch into contiguous chunks processed by a thread pool.

    Chunking never changes per-item arithmetic, so results are bit-identical
    to :class:`SerialExecutor`.
    """

    def __init__(self, threads: int):
        if threads < 1:
            raise ValueError("thread count must be >= 1")
        self.threads = threads
        self._pool = ThreadPoolExecutor(max_workers=threads)

    def run(self, nitems: int, body) -> None:
        if nitems <= 0:
            return
        k = min(self.threads, nitems)
        if k == 1:
            body(0, nitems)
            return
        bounds = [nitems * i // k for i in range(k + 1)]
        futs = [
            self._pool.submit(body, bounds[i], bounds[i + 1])
            for i in range(k)
            if bounds[i] < bounds[i + 1]
        ]
        for f in futs:
            f.result()

    def __repr__(self) -> str:
        return f"threads({self.threads})"


SERIAL = SerialExecutor()


def parse_executor(spec: str):
    """Parse an executor config value: ``serial`` or ``threads:<k>``."""
    spec = spec.strip()
    if spec == "serial":
        return SERIAL
    if spec.startswith("threads"):
        _, _, arg = spec.partition(":")
        return ThreadedExecutor(int(arg) if arg else 2)
    raise ValueError(f"unknown executor {spec!r} (expected serial or threads:<k>)")


# ---------------------------------------------------------------------------
# Flop conventions (shared with the factorization / solve instrumentation)
# ---------------------------------------------------------------------------


def gemm_flops(m: int, k: int, n: int) -> int:
    return 2 * m * k * n


def lu_factor_flops(s: int) -> int:
    # divisions plus multiply-add pairs of right-looking elimination
    return s * (s - 1) // 2 + s * (s - 1) * (2 * s - 1) // 3


def lu_solve_flops(s: int, ncols: int) -> int:
    # forward + backward substitution touch each stored factor entry once
    return 2 * s * s * ncols


# ---------------------------------------------------------------------------
# Batched GEMM
# ---------------------------------------------------------------------------


def _op_a(a: np.ndarray, conj_a: bool) -> np.ndarray:
    if not conj_a:
        return a
    at = a.swapaxes(-1, -2)
    return at.conj() if np.issubdtype(a.dtype, np.complexfloating) else at


def gemm_stacks(a, b, c, alpha=1.0, beta=0.0, transpose_a="none", scratch=None) -> int:
    """``c <- alpha * op(a) @ b + beta * c`` on stacked (broadcastable) operands.

    Operands carry trailing ``(rows, cols)`` axes; leading axes are batch
    dimensions and may broadcast against each other.  This is the zero-copy
    entry point the factorization and solve drivers use; the
    :class:`BlockRef` dispatches below funnel into the same arithmetic.
    Returns the flop count.
    """
    if transpose_a not in ("none", "conj_transpose"):
        raise ValueError(f"unsupported transpose_a {transpose_a!r}")
    _gemm_into(a, b, c, alpha, beta, transpose_a == "conj_transpose", scratch)
    nitems = int(np.prod(c.shape[:-2], dtype=np.int64)) if c.ndim > 2 else 1
    return nitems * gemm_flops(c.shape[-2], b.shape[-2], c.shape[-1])


def _gemm_into(a, b, c, alpha, beta, conj_a, scratch=None):
    op = _op_a(a, conj_a)
    if beta == 0 and alpha == 1:
        np.matmul(op, b, out=c)
        return
    if scratch is not None:
        tmp = scratch.ravel()[: c.size].reshape(c.shape)
        np.matmul(op, b, out=tmp)
    else:
        tmp = np.matmul(op, b)
    if beta == 0:
        np.multiply(tmp, alpha, out=c)
    else:
        if beta != 1:
            np.multiply(c, beta, out=c)
        if alpha == 1:
            np.add(c, tmp, out=c)
        elif alpha == -1:
            np.subtract(c, tmp, out=c)
        else:
            tmp *= alpha
            np.add(c, tmp, out=c)


def _check_gemm_batch(items, conj_a):
    for idx, (a, b, c) in enumerate(items):
        am, ak = (a.cols, a.rows) if conj_a else (a.rows, a.cols)
        if ak != b.rows or c.rows != am or c.cols != b.cols:
            raise ValueError(
                f"gemm shape mismatch at batch index {idx}: "
                f"op(a)=({am}x{ak}), b=({b.rows}x{b.cols}), c=({c.rows}x{c.cols})"
            )
    outs = sorted(enumerate(items), key=lambda t: t[1][2].offset)
    for (i, x), (j, y) in zip(outs, outs[1:]):
        if blocks_overlap(x[2], y[2]):
            raise ValueError(f"gemm output blocks overlap at batch indices {i} and {j}")


def batched_gemm(
    batch: BlockBatch | list,
    alpha=1.0,
    beta=0.0,
    transpose_a: str = "none",
    executor=SERIAL,
    scratch: np.ndarray | None = None,
) -> int:
    """Run ``c <- alpha * op(a) @ b + beta * c`` over every (a, b, c) item.

    ``transpose_a`` is ``"none"`` or ``"conj_transpose"``.  Returns the flop
    count of the dispatch.  ``scratch`` optionally provides workspace for the
    accumulating forms so no per-call product buffer is allocated.
    """
    if transpose_a not in ("none", "conj_transpose"):
        raise ValueError(f"unsupported transpose_a {transpose_a!r}")
    conj_a = transpose_a == "conj_transpose"
    if isinstance(batch, list):
        batch = BlockBatch(batch)
    if not batch.items:
        return 0
    _check_gemm_batch(batch.items, conj_a)
    stacks = batch.uniform()
    flops = sum(
        gemm_flops(c.rows, b.rows, b.cols) for (_, b, c) in batch.items
    )
    if stacks is not None:
        sa, sb, sc = stacks

        def body(lo, hi):
            _gemm_into(sa[lo:hi], sb[lo:hi], sc[lo:hi], alpha, beta, conj_a, scratch)

        executor.run(len(batch.items), body)
    else:
        items = batch.items

        def body(lo, hi):
            for a, b, c in items[lo:hi]:
                _gemm_into(
                    a.view()[None], b.view()[None], c.view()[None],
                    alpha, beta, conj_a, scratch,
                )

        executor.run(len(items), body)
    return flops


def grouped_gemm_large(
    items: list,
    alpha=1.0,
    beta=0.0,
    transpose_a: str = "none",
    inner_threads: int = 0,
) -> int:
    """GEMM dispatch for batches of few large items (top tree levels).

    Same contract and arithmetic as :func:`batched_gemm`.  With
    ``inner_threads > 1`` each item's output rows are partitioned across a
    thread pool; the partition never splits a reduction, so results stay
    bit-identical.  Inner parallelism is off by default.
    """
    if transpose_a not in ("none", "conj_transpose"):
        raise ValueError(f"unsupported transpose_a {transpose_a!r}")
    conj_a = transpose_a == "conj_transpose"
    if not items:
        return 0
    _check_gemm_batch(items, conj_a)
    flops = sum(gemm_flops(c.rows, b.rows, b.cols) for (_, b, c) in items)
    for a, b, c in items:
        av, bv, cv = a.view(), b.view(), c.view()
        opa = _op_a(av, conj_a)
        m = cv.shape[0]
        if inner_threads > 1 and m >= 2 * inner_threads:
            bounds = [m * i // inner_threads for i in range(inner_threads + 1)]
            with ThreadPoolExecutor(max_workers=inner_threads) as pool:
                futs = [
                    pool.submit(
                        _gemm_into,
                        opa[bounds[i] : bounds[i + 1]],
                        bv,
                        cv[bounds[i] : bounds[i + 1]],
                        alpha,
                        beta,
                        False,
                    )
                    for i in range(inner_threads)
                ]
                for f in futs:
                    f.result()
        else:
            _gemm_into(opa, bv, cv, alpha, beta, False)
    return flops


# ---------------------------------------------------------------------------
# Batched LU with partial pivoting
# ---------------------------------------------------------------------------


@dataclass
class LuPivots:
    """Pivoting data of a batched in-place LU factorization.

    ``swaps[b, k]`` is the row exchanged with row ``k`` at step ``k`` of
    block ``b`` (LAPACK-style); ``perm[b]`` is the resulting final row
    permutation; ``singular`` lists indices of blocks whose pivot fell below
    the working-precision guard.
    """

    swaps: np.ndarray
    perm: np.ndarray
    singular: list[int] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.swaps.shape[1]

    def sign(self) -> np.ndarray:
        """Permutation signs, one per block."""
        k = np.arange(self.size)
        nswap = (self.swaps != k).sum(axis=1)
        return np.where(nswap % 2 == 0, 1.0, -1.0)


def _lu_factor_stack(a: np.ndarray) -> LuPivots:
    """Right-looking partial-pivoted LU, in place, over a (B, s, s) stack.

    The singularity guard flags a block when the step-``k`` pivot magnitude
    is at most ``eps * s * max|original column k|``; elimination continues
    deterministically on flagged blocks (their content is unusable and the
    caller must treat the flag as an error before solving).
    """
    nb, s = a.shape[0], a.shape[1]
    swaps = np.zeros((nb, s), dtype=np.int64)
    singular = np.zeros(nb, dtype=bool)
    if s == 0 or nb == 0:
        return LuPivots(swaps, swaps.copy())
    eps = np.finfo(a.dtype).eps
    colscale = np.abs(a).max(axis=1)  # original per-column magnitudes
    bi = np.arange(nb)
    perm = np.tile(np.arange(s, dtype=np.int64), (nb, 1))
    for k in range(s):
        seg = np.abs(a[:, k:, k])
        p = k + seg.argmax(axis=1)
        swaps[:, k] = p
        rk = a[bi, k, :].copy()
        rp = a[bi, p, :].copy()
        a[bi, k, :] = rp
        a[bi, p, :] = rk
        tk = perm[bi, k].copy()
        perm[bi, k] = perm[bi, p]
        perm[bi, p] = tk
        piv = a[:, k, k]
        singular |= np.abs(piv) <= eps * s * colscale[:, k]
        if k < s - 1:
            safe = np.where(piv == 0, np.ones((), dtype=a.dtype), piv)
            a[:, k + 1 :, k] /= safe[:, None]
            a[:, k + 1 :, k + 1 :] -= a[:, k + 1 :, k : k + 1] * a[:, k : k + 1, k + 1 :]
    return LuPivots(swaps, perm, [int(i) for i in np.flatnonzero(singular)])


def batched_lu_factor_inplace(
    batch: BlockBatch | list, executor=SERIAL
) -> tuple[LuPivots, int]:
    """Factor every square block of the batch in place; returns pivots, flops.

    Singular-to-working-precision blocks are reported in the pivot object
    rather than raised, so callers can attribute them to their own block
    numbering.
    """
    if isinstance(batch, BlockBatch):
        refs = [it[0] if isinstance(it, tuple) else it for it in batch.items]
    else:
        refs = list(batch)
    if not refs:
        return LuPivots(np.zeros((0, 0), np.int64), np.zeros((0, 0), np.int64)), 0
    for idx, r in enumerate(refs):
        if r.rows != r.cols:
            raise ValueError(f"LU block at batch index {idx} is not square")
    s = refs[0].rows
    if any(r.rows != s for r in refs):
        raise ValueError("LU batch blocks must share one size")
    flops = lu_factor_flops(s) * len(refs)
    stack = as_stack(refs)
    nb = len(refs)
    swaps = np.zeros((nb, s), dtype=np.int64)
    perm = np.zeros((nb, s), dtype=np.int64)
    bad = np.zeros(nb, dtype=bool)

    if stack is not None:

        def body(lo, hi):
            pv = _lu_factor_stack(stack[lo:hi])
            swaps[lo:hi] = pv.swaps
            perm[lo:hi] = pv.perm
            for i in pv.singular:
                bad[lo + i] = True

    else:

        def body(lo, hi):
            for i in range(lo, hi):
                pv = _lu_factor_stack(refs[i].view()[None])
                swaps[i] = pv.swaps[0]
                perm[i] = pv.perm[0]
                if pv.singular:
                    bad[i] = True

    executor.run(nb, body)
    return LuPivots(swaps, perm, [int(i) for i in np.flatnonzero(bad)]), flops


def lu_solve_stacks(lu: np.ndarray, perm: np.ndarray, rhs: np.ndarray) -> int:
    """Apply stored LU factors to stacked right-hand sides in place; returns flops.

    ``lu``: (B, s, s); ``perm``: (B, s); ``rhs``: (..., B, s, c) where extra
    leading axes broadcast against ``lu``.  Right-hand-side columns that ride
    in batch axes keep their arithmetic independent of how many columns are
    solved together (the bit-for-bit multi-column guarantee of the solver).
    """
    _lu_solve_stack(lu, perm, rhs)
    s = lu.shape[-1]
    nblockcols = int(np.prod(rhs.shape[:-2], dtype=np.int64)) * rhs.shape[-1]
    return lu_solve_flops(s, nblockcols)


def _lu_solve_stack(lu: np.ndarray, perm: np.ndarray, rhs: np.ndarray) -> None:
    """Apply stored LU factors to stacked right-hand sides, in place.

    ``lu``: (B, s, s); ``perm``: (B, s); ``rhs``: (..., B, s, c) where the
    leading axes broadcast (extra right-hand-side columns ride in the batch
    dimensions, which keeps per-column arithmetic independent of how many
    columns are solved together).
    """
    s = lu.shape[-1]
    if s == 0 or rhs.size == 0:
        return
    gather = perm.reshape((1,) * (rhs.ndim - 3) + perm.shape + (1,))
    gather = np.broadcast_to(gather, rhs.shape[:-2] + (s, rhs.shape[-1]))
    rhs[...] = np.take_along_axis(rhs, gather, axis=-2)
    for i in range(1, s):  # unit lower triangle
        rhs[..., i, :] -= np.matmul(lu[..., i : i + 1, :i], rhs[..., :i, :])[..., 0, :]
    for i in range(s - 1, -1, -1):  # upper triangle
        if i < s - 1:
            rhs[..., i, :] -= np.matmul(
                lu[..., i : i + 1, i + 1 :], rhs[..., i + 1 :, :]
            )[..., 0, :]
        rhs[..., i, :] /= lu[..., i, i][..., None]


def batched_lu_solve_inplace(
    lu_refs: list,
    pivots: LuPivots,
    rhs_refs: list,
    executor=SERIAL,
) -> int:
    """Overwrite each rhs block with its block's LU solution; returns flops.

    ``lu_refs[i]`` must hold the in-place factors produced by
    :func:`batched_lu_factor_inplace`; raises :class:`SingularBlockError`
    when the pivot data carries singular flags.
    """
    if pivots.singular:
        raise SingularBlockError(pivots.singular, "refusing to solve")
    if not lu_refs:
        return 0
    if len(lu_refs) != len(rhs_refs):
        raise ValueError("LU and rhs batches differ in length")
    s = pivots.size
    for idx, (l, r) in enumerate(zip(lu_refs, rhs_refs)):
        if l.rows != s or l.cols != s or r.rows != s:
            raise ValueError(f"solve shape mismatch at batch index {idx}")
    flops = sum(lu_solve_flops(s, r.cols) for r in rhs_refs)
    lu_stack = as_stack(lu_refs)
    rhs_stack = as_stack(rhs_refs)
    nb = len(lu_refs)
    if lu_stack is not None and rhs_stack is not None:

        def body(lo, hi):
            _lu_solve_stack(lu_stack[lo:hi], pivots.perm[lo:hi], rhs_stack[lo:hi])

    else:

        def body(lo, hi):
            for i in range(lo, hi):
                _lu_solve_stack(
                    lu_refs[i].view()[None], pivots.perm[i : i + 1], rhs_refs[i].view()[None]
                )

    executor.run(nb, body)
    return flops
