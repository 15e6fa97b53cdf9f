import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gluq.errors import ConfigError, ShapeError
from gluq.random_field import (
    ExpKernel,
    Grid2D,
    KLEBasis,
    draw_z,
    draw_z_batch,
    exp_kernel_eval,
    kle_decompose,
    log_permeability,
    sample_log_permeability,
)

coords = st.tuples(st.floats(0, 1), st.floats(0, 1))


class TestGrid:
    def test_endpoints_and_size(self):
        g = Grid2D(5)
        pts = g.points()
        assert pts.shape == (25, 2) and g.n_s == 25
        assert pts.min() == 0.0 and pts.max() == 1.0
        # row-major: x varies fastest
        np.testing.assert_allclose(pts[:5, 0], np.linspace(0, 1, 5))
        np.testing.assert_allclose(pts[:5, 1], 0.0)

    def test_nearest_index_of_pdf_probe(self):
        assert Grid2D(65).nearest_index(0.77, 0.6) == (38, 49)


class TestKernel:
    def test_zero_distance(self):
        assert exp_kernel_eval(ExpKernel(), (0.3, 0.4), (0.3, 0.4)) == 1.0

    def test_distance_equal_length_scale(self):
        k = ExpKernel(0.1)
        assert k((0.2, 0.2), (0.2, 0.3)) == pytest.approx(np.exp(-1.0), rel=1e-12)

    def test_symmetry_exact(self):
        rng = np.random.default_rng(0)
        k = ExpKernel()
        for s, t in rng.random((1000, 2, 2)):
            assert k(s, t) == k(t, s)

    @given(coords, coords)
    def test_range(self, s, t):
        v = ExpKernel(0.1)(s, t)
        assert 0.0 <= v <= 1.0

    def test_non_positive_length_scale(self):
        with pytest.raises(ConfigError):
            ExpKernel(0.0)


@pytest.fixture(scope="module")
def full8():
    return kle_decompose(Grid2D(8), ExpKernel(), 64)


class TestDecompose:
    def test_full_reconstruction(self, full8):
        g = Grid2D(8)
        cov = ExpKernel().matrix(g.points())
        recon = (full8.eigenvectors * full8.eigenvalues) @ full8.eigenvectors.T
        assert np.linalg.norm(recon - cov) / np.linalg.norm(cov) < 1e-8

    def test_trace_identity(self, full8):
        assert full8.eigenvalues.sum() == pytest.approx(64.0, abs=1e-6)

    def test_sorted_and_orthonormal(self, full8):
        assert np.all(np.diff(full8.eigenvalues) <= 0)
        gram = full8.eigenvectors.T @ full8.eigenvectors
        assert np.abs(gram - np.eye(64)).max() < 1e-8

    def test_sign_convention(self, full8):
        for col in full8.eigenvectors.T:
            first = col[np.flatnonzero(np.abs(col) > 1e-12 * np.abs(col).max())[0]]
            assert first > 0

    def test_iterative_matches_dense(self):
        g = Grid2D(33)
        dense = kle_decompose(g, ExpKernel(), 40, method="dense")
        lanczos = kle_decompose(g, ExpKernel(), 40, method="iterative")
        np.testing.assert_allclose(lanczos.eigenvalues, dense.eigenvalues, atol=1e-6)
        # eigenvectors are compared through spectral projectors, which are
        # unique even inside degenerate (symmetry-induced) eigenspaces; cut
        # at a gap so no eigenspace is split
        gaps = np.flatnonzero(np.abs(np.diff(dense.eigenvalues)) > 1e-6)
        k = gaps[-1] + 1
        pd = dense.eigenvectors[:, :k] @ dense.eigenvectors[:, :k].T
        pl = lanczos.eigenvectors[:, :k] @ lanczos.eigenvectors[:, :k].T
        assert np.abs(pd - pl).max() < 1e-6

    def test_q_bounds(self):
        with pytest.raises(ConfigError):
            kle_decompose(Grid2D(4), ExpKernel(), 17)
        with pytest.raises(ConfigError):
            kle_decompose(Grid2D(4), ExpKernel(), 0)

    def test_energy_monotone_in_q(self):
        b = kle_decompose(Grid2D(10), ExpKernel(), 100)
        energy = b.energy()
        assert np.all(np.diff(energy) >= 0)
        for q in (5, 20, 50):
            assert kle_decompose(Grid2D(10), ExpKernel(), q).energy()[-1] == pytest.approx(energy[q - 1])

    def test_grid_refinement(self):
        lead16 = kle_decompose(Grid2D(16), ExpKernel(), 1).eigenvalues[0] / 256
        lead32 = kle_decompose(Grid2D(32), ExpKernel(), 1).eigenvalues[0] / 1024
        assert abs(lead32 - lead16) / lead32 < 0.05


class TestSampling:
    def test_zero_z_gives_unit_field(self):
        b = kle_decompose(Grid2D(6), ExpKernel(), 10)
        field = sample_log_permeability(b, np.zeros(10))
        np.testing.assert_array_equal(field.values, np.ones((6, 6)))

    def test_length_mismatch(self):
        b = kle_decompose(Grid2D(6), ExpKernel(), 10)
        with pytest.raises(ShapeError):
            sample_log_permeability(b, np.zeros(9))

    def test_positivity(self):
        b = kle_decompose(Grid2D(12), ExpKernel(), 144)
        k = sample_log_permeability(b, draw_z(1, 0, 144) * 3).values
        assert np.all(k > 0)

    def test_monte_carlo_moments(self):
        g = Grid2D(8)
        b = kle_decompose(g, ExpKernel(), 64)
        z = np.random.default_rng(42).standard_normal((20000, 64))
        logk = log_permeability(b, z).reshape(20000, -1)
        var = logk.var(axis=0)
        assert np.abs(var - 1.0).max() < 0.05
        i, j = 9, 27
        pts = g.points()
        emp = np.mean((logk[:, i] - logk[:, i].mean()) * (logk[:, j] - logk[:, j].mean()))
        assert emp == pytest.approx(ExpKernel()(pts[i], pts[j]), abs=0.05)

    def test_reproducible_draws(self):
        np.testing.assert_array_equal(draw_z(7, 3, 5), draw_z(7, 3, 5))
        assert not np.array_equal(draw_z(7, 3, 5), draw_z(7, 4, 5))
        np.testing.assert_array_equal(draw_z_batch(7, 4, 5)[3], draw_z(7, 3, 5))

    def test_constant_basis(self):
        b = KLEBasis.constant(Grid2D(5))
        assert b.q == 0
        np.testing.assert_array_equal(sample_log_permeability(b, np.zeros(0)).values, 1.0)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31))
    def test_batch_matches_single(self, seed):
        b = kle_decompose(Grid2D(5), ExpKernel(), 7)
        z = draw_z_batch(seed, 3, 7)
        batch = log_permeability(b, z)
        for i in range(3):
            np.testing.assert_allclose(batch[i], sample_log_permeability(b, z[i]).log_values,
                                       rtol=0, atol=1e-12)
