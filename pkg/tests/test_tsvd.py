import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alpdsn.tsvd import (
    TensorSpectralJacobian,
    bcirc,
    d2_action,
    from_spectral,
    identity_tensor,
    read_tensor,
    spectral,
    t_opball_project,
    t_svt,
    tensor_opnorm,
    tnn,
    tprod,
    tsvd,
    ttranspose,
    write_tensor,
)


def _rand(shape, seed=0):
    return np.random.default_rng(seed).standard_normal(shape)


def _unfold(X):
    return np.concatenate([X[:, :, k] for k in range(X.shape[2])], axis=0)


def _fold(M, n3):
    n1 = M.shape[0] // n3
    return np.stack([M[k * n1:(k + 1) * n1] for k in range(n3)], axis=2)


# t-product


def test_tprod_identity():
    X = _rand((3, 4, 5))
    np.testing.assert_allclose(tprod(X, identity_tensor(4, 5)), X, atol=1e-12)
    np.testing.assert_allclose(tprod(identity_tensor(3, 5), X), X, atol=1e-12)


def test_tprod_single_slice_is_matmul():
    A = _rand((3, 4, 1), 1)
    B = _rand((4, 2, 1), 2)
    np.testing.assert_allclose(tprod(A, B)[:, :, 0], A[:, :, 0] @ B[:, :, 0], atol=1e-12)


@pytest.mark.parametrize("n3", [2, 3, 4])
def test_tprod_matches_block_circulant(n3):
    X = _rand((2, 2, n3), 3)
    Y = _rand((2, 2, n3), 4)
    ref = _fold(bcirc(X) @ _unfold(Y), n3)
    np.testing.assert_allclose(tprod(X, Y), ref, atol=1e-10)


def test_tprod_shape_mismatch():
    with pytest.raises(ValueError):
        tprod(_rand((2, 3, 4)), _rand((2, 3, 4)))
    with pytest.raises(ValueError):
        tprod(_rand((2, 3, 4)), _rand((3, 3, 5)))
    with pytest.raises(ValueError):
        tprod(np.zeros((2, 2)), np.zeros((2, 2, 1)))


def test_ttranspose_reverses_products():
    X = _rand((3, 4, 5), 5)
    Y = _rand((4, 2, 5), 6)
    np.testing.assert_allclose(ttranspose(tprod(X, Y)), tprod(ttranspose(Y), ttranspose(X)), atol=1e-12)
    np.testing.assert_allclose(bcirc(ttranspose(X)), bcirc(X).T, atol=0)


# spectral domain


@pytest.mark.parametrize("n3", [1, 4, 5])
def test_spectral_round_trip_is_real(n3):
    X = _rand((3, 2, n3), 7)
    back = from_spectral(spectral(X), n3)
    assert np.isrealobj(back)
    np.testing.assert_allclose(back, X, atol=1e-10)


@pytest.mark.parametrize("n3", [1, 4, 5])
def test_spectral_unitarity(n3):
    X = _rand((4, 3, n3), 8)
    full = np.fft.fft(X, axis=2)
    assert abs(np.linalg.norm(X) - np.linalg.norm(full) / np.sqrt(n3)) <= 1e-10


# t-SVD


def test_tsvd_zero_tensor():
    f = tsvd(np.zeros((3, 4, 2)))
    assert np.all(f.S == 0.0)
    assert f.tubal_rank() == 0


def test_tsvd_matrix_case():
    X = np.diag([3.0, 1.0])[:, :, None]
    np.testing.assert_allclose(tsvd(X).S[0], [3.0, 1.0], atol=1e-14)
    assert abs(tnn(X) - 4.0) <= 1e-12


@pytest.mark.parametrize("shape", [(8, 6, 4), (6, 8, 5), (5, 5, 1)])
def test_tsvd_reconstruction_and_tnn(shape):
    X = _rand(shape, 9)
    f = tsvd(X)
    Xh = spectral(X)
    for k in range(Xh.shape[2]):
        U, s, Vh = f.U_hat[k], f.s_hat[k], f.Vh_hat[k]
        M = (U[:, : s.size] * s) @ Vh[: s.size]
        assert np.linalg.norm(M - Xh[:, :, k]) <= 1e-8
        assert np.all(s >= 0) and np.all(np.diff(s) <= 0)
    tnn_ref = np.linalg.svd(np.moveaxis(np.fft.fft(X, axis=2), 2, 0), compute_uv=False).sum() / shape[2]
    assert abs(f.tnn() - tnn_ref) <= 1e-10 * tnn_ref
    assert abs(tnn(X) - tnn_ref) <= 1e-10 * tnn_ref
    # the full S mirrors conjugate slices
    assert f.S.shape == (shape[2], min(shape[:2]))


def test_tsvd_tensor_factors_reconstruct():
    X = _rand((4, 3, 5), 10)
    f = tsvd(X)
    np.testing.assert_allclose(tprod(tprod(f.U, f.s_tensor()), ttranspose(f.V)), X, atol=1e-10)
    np.testing.assert_allclose(tprod(ttranspose(f.U), f.U), identity_tensor(4, 5), atol=1e-10)


def test_tubal_rank_of_low_rank_tensor():
    A = _rand((6, 2, 4), 11)
    B = _rand((2, 5, 4), 12)
    assert tsvd(tprod(A, B)).tubal_rank(1e-9) == 2


def test_tnn_and_opnorm_are_dual():
    # <X, Y> <= TNN(X) * opnorm(Y); equality at Y = t_svt direction of X
    X = _rand((4, 3, 5), 13)
    Y = _rand((4, 3, 5), 14)
    assert np.vdot(X, Y) <= tnn(X) * tensor_opnorm(Y) + 1e-10
    f = tsvd(X)
    P = tprod(f.U[:, :3], ttranspose(f.V))
    assert abs(np.vdot(X, P) - tnn(X)) <= 1e-9 * tnn(X)
    assert abs(tensor_opnorm(P) - 1.0) <= 1e-9


# thresholding


def test_svt_large_mu_gives_zero():
    X = _rand((4, 3, 3), 15)
    mu = 2.0 * tsvd(X).S.max()
    assert np.abs(t_svt(X, mu)).max() <= 1e-12


def test_svt_matrix_case():
    X = np.diag([3.0, 1.0])[:, :, None]
    np.testing.assert_allclose(t_svt(X, 2.0)[:, :, 0], np.diag([1.0, 0.0]), atol=1e-14)


def test_svt_negative_mu():
    with pytest.raises(ValueError):
        t_svt(np.zeros((2, 2, 2)), -1.0)
    with pytest.raises(ValueError):
        t_opball_project(np.zeros((2, 2, 2)), -1.0)


def test_svt_prox_optimality_by_sampling():
    rng = np.random.default_rng(16)
    X = rng.standard_normal((5, 4, 3))
    mu = 0.8
    Y = t_svt(X, mu)

    def obj(Z):
        return mu * tnn(Z) + 0.5 * np.linalg.norm(Z - X) ** 2

    best = obj(Y)
    for scale in (1e-1, 1e-3):
        for _ in range(500):
            assert obj(Y + scale * rng.standard_normal(X.shape)) >= best - 1e-12


def test_moreau_split_of_tensor_norms():
    X = _rand((4, 5, 4), 17)
    mu = 1.3
    np.testing.assert_allclose(t_svt(X, mu) + t_opball_project(X, mu), X, atol=1e-10)
    assert tensor_opnorm(t_opball_project(X, mu)) <= mu + 1e-10


# D2 action


def _factors(shape, seed):
    X = _rand(shape, seed)
    return X, tsvd(X)


def test_d2_zero_direction():
    X, f = _factors((4, 3, 3), 18)
    np.testing.assert_array_equal(d2_action(f, 0.5, np.zeros(X.shape)), np.zeros(X.shape))


def test_d2_zero_threshold_is_identity():
    X, f = _factors((4, 3, 3), 19)
    G = _rand(X.shape, 20)
    np.testing.assert_allclose(d2_action(f, 0.0, G), G, atol=1e-10)


def test_d2_matches_finite_differences_matrix_case():
    rng = np.random.default_rng(21)
    U, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    V, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    s = np.array([4.0, 3.1, 0.6, 0.2])
    X = ((U[:, :4] * s) @ V.T)[:, :, None]
    mu = 1.5
    G = rng.standard_normal(X.shape)
    h = 1e-5
    fd = (t_svt(X + h * G, mu) - t_svt(X - h * G, mu)) / (2 * h)
    out = d2_action(tsvd(X), mu, G)
    assert np.linalg.norm(out - fd) <= 1e-6 * np.linalg.norm(fd)


def test_d2_matches_finite_differences_tensor():
    X = 2.0 * _rand((5, 4, 4), 22)
    mu = 0.7
    G = _rand(X.shape, 23)
    h = 1e-6
    fd = (t_svt(X + h * G, mu) - t_svt(X - h * G, mu)) / (2 * h)
    out = d2_action(tsvd(X), mu, G)
    assert np.linalg.norm(out - fd) <= 1e-6 * np.linalg.norm(fd)


@pytest.mark.parametrize("shape", [(6, 4, 3), (4, 6, 4), (5, 5, 2)])
def test_d2_symmetric(shape):
    X, f = _factors(shape, 24)
    G = _rand(shape, 25)
    H = _rand(shape, 26)
    a = np.vdot(d2_action(f, 0.9, G), H)
    b = np.vdot(G, d2_action(f, 0.9, H))
    assert abs(a - b) <= 1e-8 * (1 + abs(a))


@pytest.mark.parametrize("shape", [(20, 20, 5), (20, 12, 4), (8, 15, 3)])
def test_d2_lowrank_path_equals_dense(shape):
    # low tubal rank plus small noise: few singular values exceed mu
    A = _rand((shape[0], 3, shape[2]), 27)
    B = _rand((3, shape[1], shape[2]), 28)
    X = tprod(A, B) + 0.01 * _rand(shape, 29)
    f = tsvd(X)
    G = _rand(shape, 30)
    mu = 0.5
    dense = d2_action(f, mu, G, path="dense")
    low = d2_action(f, mu, G, path="lowrank")
    assert np.abs(low - dense).max() <= 1e-10 * max(1.0, np.abs(dense).max())


def test_d2_semismooth_ratio_decreases():
    X = 2.0 * _rand((5, 4, 3), 31)
    mu = 0.6
    G = _rand(X.shape, 32)
    G /= np.linalg.norm(G)
    base = t_svt(X, mu)
    ratios = []
    for t in (1e-1, 1e-2, 1e-3, 1e-4):
        step = t * G
        err = t_svt(X + step, mu) - base - d2_action(tsvd(X + step), mu, step)
        ratios.append(np.linalg.norm(err) / t)
    assert ratios[-1] <= 1e-3
    assert ratios[-1] < ratios[0]


def test_d2_shape_mismatch():
    X, f = _factors((4, 3, 2), 33)
    with pytest.raises(ValueError):
        d2_action(f, 0.5, np.zeros((3, 4, 2)))


def test_tensor_jacobian_complement():
    X, f = _factors((4, 3, 3), 34)
    from alpdsn.prox import _soft_pair

    J = TensorSpectralJacobian.from_factors(f, *_soft_pair(0.8, 0.0))
    G = _rand(X.shape, 35)
    np.testing.assert_allclose(J.apply(G) + J.complement().apply(G), G, atol=1e-10)


def test_repeated_singular_values_use_tie_rule():
    X = np.eye(3)[:, :, None] * 2.0
    f = tsvd(X)
    G = _rand(X.shape, 36)
    # coinciding singular values 2 > mu = 1: the symmetric part passes through,
    # the skew part is damped by (sigma - mu) / sigma
    np.testing.assert_allclose(d2_action(f, 1.0, G), G - _skew_part(G) / 2.0, atol=1e-10)


def _skew_part(G):
    M = G[:, :, 0]
    return ((M - M.T) / 2.0)[:, :, None]


# binary I/O


def test_tensor_round_trip(tmp_path):
    X = _rand((3, 4, 2), 37)
    p = tmp_path / "x.bin"
    write_tensor(p, X)
    assert p.stat().st_size == 24 + 8 * X.size
    np.testing.assert_array_equal(read_tensor(p), X)


def test_tensor_truncated(tmp_path):
    p = tmp_path / "x.bin"
    write_tensor(p, _rand((2, 2, 2), 38))
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(ValueError):
        read_tensor(p)
    p.write_bytes(b"\x00" * 10)
    with pytest.raises(ValueError):
        read_tensor(p)


@settings(max_examples=25, deadline=None)
@given(
    n1=st.integers(1, 5),
    n2=st.integers(1, 5),
    n3=st.integers(1, 5),
    seed=st.integers(0, 2**31 - 1),
)
def test_property_svt_invariants(n1, n2, n3, seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n1, n2, n3))
    Y = _rand((n1, n2, n3), seed + 1)
    mu = float(rng.uniform(0.05, 2.0))
    # nonexpansive and real
    a, b = t_svt(X, mu), t_svt(Y, mu)
    assert np.isrealobj(a)
    assert np.linalg.norm(a - b) <= np.linalg.norm(X - Y) + 1e-10
    # TNN recomputed from factors
    assert abs(tsvd(X).tnn() - tnn(X)) <= 1e-10 * max(1.0, tnn(X))
    # D2 is symmetric and between 0 and I
    f = tsvd(X)
    G = rng.standard_normal(X.shape)
    DG = d2_action(f, mu, G)
    q = np.vdot(G, DG)
    assert -1e-10 <= q <= np.vdot(G, G) + 1e-10
