import numpy as np
import pytest

from hodlr.backend import (
    SERIAL,
    BlockBatch,
    BlockRef,
    SingularBlockError,
    ThreadedExecutor,
    as_stack,
    batched_gemm,
    batched_lu_factor_inplace,
    batched_lu_solve_inplace,
    gemm_stacks,
    grouped_gemm_large,
    lu_solve_stacks,
    parse_executor,
)


def make_block(arr, order="F"):
    """Wrap a 2-d array into a fresh buffer + BlockRef (column-major)."""
    a = np.asarray(arr)
    buf = np.asfortranarray(a).ravel(order="F").copy()
    return BlockRef(buf, 0, a.shape[0], a.shape[1], a.shape[0])


def rand(rng, shape, dtype):
    a = rng.standard_normal(shape)
    if np.issubdtype(dtype, np.complexfloating):
        a = a + 1j * rng.standard_normal(shape)
    return a.astype(dtype)


# ---------------------------------------------------------------------------
# BlockRef / stacking
# ---------------------------------------------------------------------------


def test_blockref_view_roundtrip():
    buf = np.arange(12, dtype=float)
    b = BlockRef(buf, 2, 3, 2, 5)  # cols at offsets 2 and 7
    v = b.view()
    assert v.shape == (3, 2)
    assert v[0, 0] == 2 and v[0, 1] == 7 and v[2, 1] == 9
    v[1, 1] = -1.0
    assert buf[8] == -1.0


def test_blockref_bounds_checked():
    buf = np.zeros(10)
    with pytest.raises(ValueError):
        BlockRef(buf, 4, 3, 2, 5)  # needs offset 4 + 5 + 3 = 12 > 10


def test_as_stack_uniform_and_not():
    buf = np.arange(3 * 4 * 4, dtype=float)
    refs = [BlockRef(buf, 16 * i, 4, 4, 4) for i in range(3)]
    st = as_stack(refs)
    assert st is not None and st.shape == (3, 4, 4)
    assert st[1, 0, 0] == 16.0 and st[2, 1, 2] == 41.0
    ragged = [BlockRef(buf, 0, 4, 4, 4), BlockRef(buf, 16, 4, 3, 4)]
    assert as_stack(ragged) is None
    uneven = [BlockRef(buf, 0, 4, 4, 4), BlockRef(buf, 16, 4, 4, 4), BlockRef(buf, 31, 4, 4, 4)]
    assert as_stack(uneven) is None


# ---------------------------------------------------------------------------
# batched_gemm
# ---------------------------------------------------------------------------


def test_gemm_one_by_one():
    a, b, c = make_block([[2.0]]), make_block([[3.0]]), make_block([[0.0]])
    batched_gemm([(a, b, c)], alpha=1.0, beta=0.0)
    assert c.view()[0, 0] == 6.0


def test_gemm_conj_transpose_scalar():
    a = make_block(np.array([[1j]], dtype=complex))
    b = make_block(np.array([[1.0 + 0j]], dtype=complex))
    c = make_block(np.array([[0j]], dtype=complex))
    batched_gemm([(a, b, c)], transpose_a="conj_transpose")
    assert c.view()[0, 0] == -1j


@pytest.mark.parametrize("dtype", [np.float64, np.float32, np.complex128])
def test_gemm_batch_matches_sequential_reference(dtype):
    rng = np.random.default_rng(7)
    items, refs = [], []
    for _ in range(8):
        a, b = rand(rng, (16, 16), dtype), rand(rng, (16, 16), dtype)
        c = np.zeros((16, 16), dtype=dtype)
        items.append((make_block(a), make_block(b), make_block(c)))
        refs.append(np.matmul(a, b))
    batched_gemm(items)
    for (ra, rb, rc), want in zip(items, refs):
        assert rc.view().tobytes() == np.asfortranarray(want).tobytes()


def test_gemm_accumulate_and_alpha_beta():
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal((5, 4)), rng.standard_normal((4, 6))
    c0 = rng.standard_normal((5, 6))
    c = make_block(c0)
    batched_gemm([(make_block(a), make_block(b), c)], alpha=-1.0, beta=1.0)
    assert np.allclose(c.view(), c0 - a @ b, atol=1e-14)
    c2 = make_block(c0)
    batched_gemm([(make_block(a), make_block(b), c2)], alpha=0.5, beta=2.0)
    assert np.allclose(c2.view(), 2.0 * c0 + 0.5 * (a @ b), atol=1e-14)


def test_gemm_shape_mismatch_names_index():
    a, b = make_block(np.zeros((3, 2))), make_block(np.zeros((2, 2)))
    good = (a, b, make_block(np.zeros((3, 2))))
    bad = (a, b, make_block(np.zeros((2, 2))))
    with pytest.raises(ValueError, match="batch index 1"):
        batched_gemm([good, bad])


def test_gemm_output_overlap_rejected():
    buf = np.zeros(64)
    a = make_block(np.eye(4))
    b = make_block(np.ones((4, 4)))
    c1 = BlockRef(buf, 0, 4, 4, 8)
    c2 = BlockRef(buf, 2, 4, 4, 8)  # rows overlap c1
    with pytest.raises(ValueError, match="overlap"):
        batched_gemm([(a, b, c1), (a, b, c2)])
    # disjoint row ranges in one panel are fine
    c3 = BlockRef(buf, 4, 4, 4, 8)
    batched_gemm([(a, b, c1), (a, b, c3)])


def test_gemm_strided_fast_path_bit_identical_to_generic():
    rng = np.random.default_rng(11)
    for dtype in (np.float64, np.complex128):
        B, m, k, n = 6, 9, 5, 7
        abuf = rand(rng, (B * m * k,), dtype)
        bbuf = rand(rng, (B * k * n,), dtype)
        cbuf1 = np.zeros(B * m * n, dtype=dtype)
        cbuf2 = np.zeros(B * m * n, dtype=dtype)
        mk_items = lambda cb: [
            (
                BlockRef(abuf, i * m * k, m, k, m),
                BlockRef(bbuf, i * k * n, k, n, k),
                BlockRef(cb, i * m * n, m, n, m),
            )
            for i in range(B)
        ]
        uniform = BlockBatch(mk_items(cbuf1))
        assert uniform.uniform() is not None
        batched_gemm(uniform)
        # shuffled item order defeats constant-stride detection -> generic path
        shuffled = mk_items(cbuf2)
        shuffled = [shuffled[i] for i in (3, 0, 5, 1, 4, 2)]
        assert BlockBatch(shuffled).uniform() is None
        batched_gemm(shuffled)
        assert cbuf1.tobytes() == cbuf2.tobytes()


def test_gemm_serial_and_threaded_bit_identical():
    rng = np.random.default_rng(13)
    B, m = 16, 12
    abuf = rng.standard_normal(B * m * m)
    bbuf = rng.standard_normal(B * m * m)
    out = []
    for ex in (SERIAL, ThreadedExecutor(4)):
        cbuf = np.zeros(B * m * m)
        items = [
            (
                BlockRef(abuf, i * m * m, m, m, m),
                BlockRef(bbuf, i * m * m, m, m, m),
                BlockRef(cbuf, i * m * m, m, m, m),
            )
            for i in range(B)
        ]
        batched_gemm(items, executor=ex)
        out.append(cbuf.tobytes())
    assert out[0] == out[1]


def test_gemm_stacks_matches_blockref_path():
    rng = np.random.default_rng(17)
    B, m, k, n = 5, 8, 3, 4
    a = rng.standard_normal((B, m, k))
    b = rng.standard_normal((B, k, n))
    c_stack = np.zeros((B, m, n))
    gemm_stacks(a, b, c_stack)
    cbuf = np.zeros(B * m * n)
    items = []
    for i in range(B):
        items.append(
            (
                make_block(a[i]),
                make_block(b[i]),
                BlockRef(cbuf, i * m * n, m, n, m),
            )
        )
    batched_gemm(items)
    got = np.stack([items[i][2].view().copy() for i in range(B)])
    assert got.tobytes() == c_stack.tobytes()


def test_gemm_empty_batch_is_noop():
    assert batched_gemm([]) == 0
    assert grouped_gemm_large([]) == 0


def test_gemm_flop_count():
    rng = np.random.default_rng(5)
    items = [
        (
            make_block(rng.standard_normal((6, 3))),
            make_block(rng.standard_normal((3, 2))),
            make_block(np.zeros((6, 2))),
        )
        for _ in range(4)
    ]
    assert batched_gemm(items) == 4 * 2 * 6 * 3 * 2


# ---------------------------------------------------------------------------
# grouped_gemm_large
# ---------------------------------------------------------------------------


def test_grouped_gemm_matches_batched_bitwise():
    rng = np.random.default_rng(23)
    a = rng.standard_normal((512, 8))
    b = rng.standard_normal((8, 512))
    c1, c2 = make_block(np.zeros((512, 512))), make_block(np.zeros((512, 512)))
    batched_gemm([(make_block(a), make_block(b), c1)])
    grouped_gemm_large([(make_block(a), make_block(b), c2)])
    assert c1.view().tobytes() == c2.view().tobytes()


def test_grouped_gemm_inner_parallel_bit_identical():
    rng = np.random.default_rng(29)
    a = rng.standard_normal((256, 16))
    b = rng.standard_normal((16, 128))
    c1, c2 = make_block(np.zeros((256, 128))), make_block(np.zeros((256, 128)))
    grouped_gemm_large([(make_block(a), make_block(b), c1)], inner_threads=0)
    grouped_gemm_large([(make_block(a), make_block(b), c2)], inner_threads=4)
    assert c1.view().tobytes() == c2.view().tobytes()


def test_grouped_gemm_two_items_sequential_reference():
    rng = np.random.default_rng(31)
    pairs = [(rng.standard_normal((40, 6)), rng.standard_normal((6, 30))) for _ in range(2)]
    outs = [make_block(np.zeros((40, 30))) for _ in range(2)]
    grouped_gemm_large([(make_block(a), make_block(b), c) for (a, b), c in zip(pairs, outs)])
    for (a, b), c in zip(pairs, outs):
        assert c.view().tobytes() == np.asfortranarray(a @ b).tobytes()


# ---------------------------------------------------------------------------
# batched LU
# ---------------------------------------------------------------------------


def test_lu_scalar_block():
    b = make_block([[2.0]])
    piv, _ = batched_lu_factor_inplace([b])
    assert b.view()[0, 0] == 2.0
    assert piv.swaps.tolist() == [[0]]
    assert not piv.singular


def test_lu_permutation_block_exact():
    b = make_block(np.array([[0.0, 1.0], [1.0, 0.0]]))
    piv, _ = batched_lu_factor_inplace([b])
    # rows swapped: factors are exactly the identity-like U with unit L
    assert piv.swaps[0].tolist() == [1, 1]
    assert np.array_equal(b.view(), np.eye(2))
    assert piv.sign()[0] == -1.0


@pytest.mark.parametrize("dtype", [np.float64, np.complex128])
def test_lu_reconstruction_random_blocks(dtype):
    rng = np.random.default_rng(37)
    mats = [rand(rng, (32, 32), dtype) for _ in range(6)]
    blocks = [make_block(m) for m in mats]
    piv, _ = batched_lu_factor_inplace(blocks)
    assert not piv.singular
    for i, (blk, orig) in enumerate(zip(blocks, mats)):
        lu = blk.view()
        lo = np.tril(lu, -1) + np.eye(32)
        up = np.triu(lu)
        pa = orig[piv.perm[i]]
        err = np.linalg.norm(pa - lo @ up) / np.linalg.norm(orig)
        assert err <= 1e-13


def test_lu_singular_flagged_and_solve_refuses():
    good = make_block(np.array([[1.0, 0.0], [0.0, 1.0]]))
    bad = make_block(np.array([[1.0, 2.0], [2.0, 4.0]]))  # rank 1
    piv, _ = batched_lu_factor_inplace([good, bad])
    assert piv.singular == [1]
    rhs = [make_block(np.ones((2, 1))), make_block(np.ones((2, 1)))]
    with pytest.raises(SingularBlockError, match="index \\[1\\]"):
        batched_lu_solve_inplace([good, bad], piv, rhs)


def test_lu_solve_identity_and_diagonal():
    ident = make_block(np.eye(3))
    pivi, _ = batched_lu_factor_inplace([ident])
    rhs = make_block(np.array([[1.0], [2.0], [3.0]]))
    batched_lu_solve_inplace([ident], pivi, [rhs])
    assert rhs.view()[:, 0].tolist() == [1.0, 2.0, 3.0]

    diag = make_block(np.diag([2.0, 4.0]))
    pivd, _ = batched_lu_factor_inplace([diag])
    r2 = make_block(np.array([[2.0], [4.0]]))
    batched_lu_solve_inplace([diag], pivd, [r2])
    assert r2.view()[:, 0].tolist() == [1.0, 1.0]


@pytest.mark.parametrize("dtype", [np.float64, np.complex128])
def test_lu_solve_matches_dense_oracle(dtype):
    rng = np.random.default_rng(41)
    flops_expected = 0
    for trial in range(4):
        mats = [rand(rng, (24, 24), dtype) + 24 * np.eye(24, dtype=dtype) for _ in range(5)]
        rhss = [rand(rng, (24, 3), dtype) for _ in range(5)]
        blocks = [make_block(m) for m in mats]
        rblocks = [make_block(r) for r in rhss]
        piv, _ = batched_lu_factor_inplace(blocks)
        fl = batched_lu_solve_inplace(blocks, piv, rblocks)
        assert fl == 5 * 2 * 24 * 24 * 3
        for m, r, rb in zip(mats, rhss, rblocks):
            want = np.linalg.solve(m, r)
            err = np.linalg.norm(rb.view() - want) / np.linalg.norm(want)
            assert err <= 1e-13


def test_lu_fast_path_bit_identical_to_generic():
    rng = np.random.default_rng(43)
    B, s = 7, 10
    base = rng.standard_normal(B * s * s)
    buf1, buf2 = base.copy(), base.copy()
    uniform = [BlockRef(buf1, i * s * s, s, s, s) for i in range(B)]
    scattered = [BlockRef(buf2, i * s * s, s, s, s) for i in range(B)]
    scattered = [scattered[i] for i in (2, 0, 1, 6, 3, 5, 4)]
    piv1, _ = batched_lu_factor_inplace(uniform)
    piv2, _ = batched_lu_factor_inplace(scattered)
    assert buf1.tobytes() == buf2.tobytes()
    # rhs solves agree bitwise too
    rhs = rng.standard_normal(B * s)
    r1, r2 = rhs.copy(), rhs.copy()
    batched_lu_solve_inplace(
        uniform, piv1, [BlockRef(r1, i * s, s, 1, s) for i in range(B)]
    )
    order = (2, 0, 1, 6, 3, 5, 4)
    batched_lu_solve_inplace(
        scattered, piv2, [BlockRef(r2, i * s, s, 1, s) for i in order]
    )
    assert r1.tobytes() == r2.tobytes()


def test_lu_serial_vs_threaded_bit_identical():
    rng = np.random.default_rng(47)
    B, s = 12, 16
    base = rng.standard_normal(B * s * s)
    outs = []
    for ex in (SERIAL, ThreadedExecutor(3)):
        buf = base.copy()
        blocks = [BlockRef(buf, i * s * s, s, s, s) for i in range(B)]
        piv, _ = batched_lu_factor_inplace(blocks, executor=ex)
        outs.append((buf.tobytes(), piv.swaps.tobytes()))
    assert outs[0] == outs[1]


def test_lu_solve_stacks_multicolumn_broadcast():
    rng = np.random.default_rng(53)
    B, s, c = 4, 8, 3
    mats = rng.standard_normal((B, s, s)) + s * np.eye(s)
    lu = mats.copy()
    blocks = [make_block(lu[i]) for i in range(B)]
    piv, _ = batched_lu_factor_inplace(blocks)
    lu_stack = np.stack([blocks[i].view().copy() for i in range(B)])
    rhs = rng.standard_normal((c, B, s, 1))
    got = rhs.copy()
    lu_solve_stacks(lu_stack, piv.perm, got)
    single = rhs.copy()
    for j in range(c):
        lu_solve_stacks(lu_stack, piv.perm, single[j])
    assert got.tobytes() == single.tobytes()
    for j in range(c):
        for b in range(B):
            want = np.linalg.solve(mats[b], rhs[j, b])
            assert np.linalg.norm(got[j, b] - want) <= 1e-12 * np.linalg.norm(want)


def test_parse_executor():
    assert parse_executor("serial") is SERIAL
    ex = parse_executor("threads:3")
    assert ex.threads == 3
    with pytest.raises(ValueError):
        parse_executor("gpu")
