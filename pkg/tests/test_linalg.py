import numpy as np
import pytest

from specformer import kernels
from specformer.graph import SparseGraph, normalized_laplacian
from specformer.linalg import (
    ConvergenceError,
    EigenSystem,
    matmul,
    spectral_apply,
    symmetric_eig,
    truncate_spectrum,
)

from conftest import random_laplacian


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for k in range(a.shape[1]):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


def check_system(e, m, tol=1e-8):
    u, lam = e.eigenvectors, e.eigenvalues
    n = m.shape[0]
    assert np.all(np.diff(lam) >= 0)
    assert np.abs(u.T @ u - np.eye(n)).max() <= tol
    assert np.abs(u @ np.diag(lam) @ u.T - m).max() <= tol * max(1.0, np.abs(m).max())


# -- matmul -----------------------------------------------------------------


def test_matmul_identity(rng):
    m = rng.standard_normal((2, 2))
    np.testing.assert_array_equal(matmul(np.eye(2), m), m)


def test_matmul_hand_example():
    np.testing.assert_array_equal(matmul([[1, 2], [3, 4]], [[0], [1]]), [[2], [4]])


def test_matmul_matches_triple_loop(rng):
    a, b = rng.standard_normal((5, 7)), rng.standard_normal((7, 3))
    np.testing.assert_allclose(matmul(a, b), naive_matmul(a, b), rtol=0, atol=1e-12)


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_rejects_nonfinite():
    with pytest.raises(ValueError, match="NaN"):
        matmul(np.array([[np.nan]]), np.ones((1, 1)))


# -- symmetric_eig ----------------------------------------------------------


def test_eig_2x2_analytic():
    e = symmetric_eig(np.array([[1.0, -1.0], [-1.0, 1.0]]))
    np.testing.assert_allclose(e.eigenvalues, [0.0, 2.0], atol=1e-14)
    s = 1 / np.sqrt(2)
    np.testing.assert_allclose(e.eigenvectors, [[s, s], [s, -s]], atol=1e-14)


def test_eig_diagonal():
    e = symmetric_eig(np.diag([3.0, 1.0, 2.0]))
    np.testing.assert_array_equal(e.eigenvalues, [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(np.abs(e.eigenvectors), np.eye(3)[:, [1, 2, 0]])


def test_eig_triangle_graph():
    k3 = SparseGraph.from_edges(3, [(0, 1), (1, 2), (0, 2)])
    e = symmetric_eig(normalized_laplacian(k3))
    np.testing.assert_allclose(e.eigenvalues, [0.0, 1.5, 1.5], atol=1e-12)


@pytest.mark.parametrize("n", [1, 2, 3, 7, 20, 64])
def test_eig_random_symmetric(rng, n):
    a = rng.standard_normal((n, n))
    a = a + a.T
    e = symmetric_eig(a)
    check_system(e, a)
    assert abs(e.eigenvalues.sum() - np.trace(a)) <= 1e-8 * n


def test_eig_matches_reference_values(rng):
    a = rng.standard_normal((30, 30))
    a = a + a.T
    np.testing.assert_allclose(symmetric_eig(a).eigenvalues, np.linalg.eigvalsh(a), atol=1e-10)


def test_eig_sign_convention(rng):
    e = symmetric_eig(random_laplacian(rng, 15))
    u = e.eigenvectors
    for j in range(u.shape[1]):
        first = u[np.flatnonzero(np.abs(u[:, j]) > 1e-12)[0], j]
        assert first > 0


def test_eig_is_bitwise_deterministic(rng):
    lap = random_laplacian(rng, 40)
    a, b = symmetric_eig(lap), symmetric_eig(lap.copy())
    assert a.eigenvalues.tobytes() == b.eigenvalues.tobytes()
    assert a.eigenvectors.tobytes() == b.eigenvectors.tobytes()


def test_eig_degenerate_subspace(rng):
    # grid Laplacians have repeated eigenvalues; check reconstruction only
    from specformer.graph import grid_graph

    lap = normalized_laplacian(grid_graph(4, 4))
    check_system(symmetric_eig(lap), lap)


def test_eig_rejects_non_square_and_asymmetric():
    with pytest.raises(ValueError, match="square"):
        symmetric_eig(np.ones((2, 3)))
    with pytest.raises(ValueError, match="symmetric"):
        symmetric_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_eig_symmetrizes_tiny_asymmetry():
    a = np.array([[2.0, 1.0], [1.0 + 1e-12, 2.0]])
    np.testing.assert_allclose(symmetric_eig(a).eigenvalues, [1.0, 3.0], atol=1e-11)


def test_ql_reports_stuck_index(rng):
    a = rng.standard_normal((6, 6))
    a = a + a.T
    d, e, q = kernels.tridiagonalize(a)
    zt = np.ascontiguousarray(q.T)
    assert kernels.ql_implicit(d.copy(), e, zt, 0) == 0


def test_convergence_error_message():
    err = ConvergenceError(3, 128)
    assert "index 3" in str(err) and err.index == 3


@pytest.mark.parametrize("n", [1, 2, 5, 17])
def test_numba_and_numpy_kernels_agree(rng, n):
    a = rng.standard_normal((n, n))
    a = a + a.T
    out = []
    for tri, ql in [
        (kernels.tridiagonalize_numba, kernels.ql_implicit_numba),
        (kernels.tridiagonalize_numpy, kernels.ql_implicit_numpy),
    ]:
        d, e, q = tri(a)
        zt = np.ascontiguousarray(q.T)
        assert ql(d, e, zt, 64 * n) == -1
        check_system(EigenSystem(np.sort(d), zt[np.argsort(d, kind="stable")].T.copy()), a, 1e-10)
        out.append(np.sort(d))
    np.testing.assert_allclose(out[0], out[1], atol=1e-12)


# -- truncate_spectrum ------------------------------------------------------


def small_system():
    return symmetric_eig(np.diag([0.0, 1.0, 2.0]))


def test_truncate_full_selection():
    e = small_system()
    t = truncate_spectrum(e, 3, 0)
    np.testing.assert_array_equal(t.eigenvalues, e.eigenvalues)
    np.testing.assert_array_equal(t.eigenvectors, e.eigenvectors)


def test_truncate_endpoints():
    t = truncate_spectrum(small_system(), 1, 1)
    np.testing.assert_array_equal(t.eigenvalues, [0.0, 2.0])
    assert (t.num_smallest, t.num_largest) == (1, 1)


def test_truncate_random_laplacian_extremes(rng):
    lap = random_laplacian(rng, 10, p=0.5)
    full = symmetric_eig(lap)
    t = truncate_spectrum(full, 3, 3)
    np.testing.assert_array_equal(t.eigenvalues, np.concatenate([full.eigenvalues[:3], full.eigenvalues[-3:]]))
    np.testing.assert_array_equal(t.eigenvectors[:, :3], full.eigenvectors[:, :3])
    np.testing.assert_array_equal(t.eigenvectors[:, 3:], full.eigenvectors[:, -3:])


def test_truncate_over_selection():
    with pytest.raises(ValueError):
        truncate_spectrum(small_system(), 2, 2)


# -- spectral_apply ---------------------------------------------------------


def test_spectral_apply_identity_filter_gives_laplacian_product(rng):
    lap = random_laplacian(rng, 12)
    e = symmetric_eig(lap)
    x = rng.standard_normal((12, 3))
    np.testing.assert_allclose(spectral_apply(e, e.eigenvalues, x), lap @ x, atol=1e-8)


def test_spectral_apply_all_ones_is_identity(rng):
    e = symmetric_eig(random_laplacian(rng, 9))
    x = rng.standard_normal(9)
    np.testing.assert_allclose(spectral_apply(e, np.ones(9), x), x, atol=1e-12)


def test_spectral_apply_p2_lowpass():
    p2 = SparseGraph.from_edges(2, [(0, 1)])
    e = symmetric_eig(normalized_laplacian(p2))
    g = np.exp(-10 * e.eigenvalues**2)
    u = e.eigenvectors
    explicit = u @ np.diag(g) @ u.T
    np.testing.assert_allclose(explicit, [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)
    np.testing.assert_allclose(spectral_apply(e, g, np.eye(2)), explicit, atol=1e-15)


def test_truncated_apply_matches_full_when_filter_vanishes_outside(rng):
    e = symmetric_eig(random_laplacian(rng, 14, p=0.4))
    t = truncate_spectrum(e, 4, 3)
    g_sel = rng.standard_normal(7)
    g_full = np.zeros(14)
    g_full[:4] = g_sel[:4]
    g_full[-3:] = g_sel[4:]
    x = rng.standard_normal((14, 2))
    np.testing.assert_allclose(spectral_apply(t, g_sel, x), spectral_apply(e, g_full, x), atol=1e-8)


def test_spectral_apply_shape_errors():
    e = small_system()
    with pytest.raises(ValueError):
        spectral_apply(e, np.ones(2), np.ones(3))
    with pytest.raises(ValueError):
        spectral_apply(e, np.ones(3), np.ones(4))


def test_eigensystem_is_read_only():
    e = small_system()
    with pytest.raises(ValueError):
        e.eigenvalues[0] = 5.0
