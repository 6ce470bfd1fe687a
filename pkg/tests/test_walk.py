import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qwrbf.walk import (
    DOWN,
    UP,
    BandOverflowError,
    CoinAngles,
    TargetState,
    WalkParams,
    WalkState,
    apply_shift,
    coin_matrices,
    coin_matrix,
    default_input,
    evolve,
    fidelity,
    gram_schmidt_basis,
    param_count,
    project_coin,
    random_target,
)

angle = st.floats(-10.0, 10.0, allow_nan=False)


def ket(n, k, coin):
    return WalkState.localized(n, coin, position=k)


def random_params(rng, steps):
    return WalkParams.from_vector(rng.uniform(0, np.pi, param_count(steps)), steps)


class TestCoin:
    def test_identity(self):
        np.testing.assert_allclose(coin_matrix(CoinAngles(0, 0, 0)), np.eye(2), atol=1e-15)

    def test_hwp_like(self):
        np.testing.assert_allclose(coin_matrix(CoinAngles(0, np.pi / 4, 0)), [[0, -1], [1, 0]], atol=1e-15)

    def test_all_pi_half(self):
        np.testing.assert_allclose(coin_matrix(CoinAngles(np.pi / 2, 0, 0)), [[0, 1j], [1j, 0]], atol=1e-15)

    @given(angle, angle, angle)
    def test_unitary(self, t1, t2, t3):
        c = coin_matrix(CoinAngles(t1, t2, t3))
        np.testing.assert_allclose(c.conj().T @ c, np.eye(2), atol=1e-12)

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(3)
        angles = rng.uniform(-7, 7, (20, 3))
        batch = coin_matrices(angles)
        for a, c in zip(angles, batch):
            np.testing.assert_allclose(c, coin_matrix(CoinAngles(*a)), atol=1e-15)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            CoinAngles(np.nan, 0, 0)

    def test_reduced_range(self):
        r = CoinAngles(-1.0, 7.0, 2 * np.pi).reduced()
        assert all(0 <= t < 2 * np.pi for t in (r.theta1, r.theta2, r.theta3))


class TestShift:
    def test_up_moves_left_and_flips(self):
        out = apply_shift(ket(1, 0, UP))
        np.testing.assert_array_equal(out.amplitudes, ket(1, -1, DOWN).amplitudes)

    def test_down_moves_right_and_flips(self):
        out = apply_shift(ket(1, 0, DOWN))
        np.testing.assert_array_equal(out.amplitudes, ket(1, 1, UP).amplitudes)

    def test_linear_superposition(self):
        out = apply_shift(default_input(1))
        expected = (ket(1, -1, DOWN).amplitudes + ket(1, 1, UP).amplitudes) / np.sqrt(2)
        np.testing.assert_allclose(out.amplitudes, expected, atol=1e-15)

    def test_overflow_reported(self):
        with pytest.raises(BandOverflowError):
            apply_shift(ket(1, -1, UP))

    def test_evolve_needs_headroom(self):
        params = WalkParams.from_vector(np.zeros(param_count(3)), 3)
        with pytest.raises(BandOverflowError):
            evolve(params, default_input(2))


class TestEvolve:
    def test_identity_coins_three_steps(self):
        # hand evolution: (0,up) -> (-1,down) -> (0,up) -> (-1,down), (0,down) -> (1,up) -> (0,down) -> (1,up)
        params = WalkParams.from_vector(np.zeros(8), 3)
        out = evolve(params, default_input(3))
        expected = (ket(3, -1, DOWN).amplitudes + ket(3, 1, UP).amplitudes) / np.sqrt(2)
        np.testing.assert_allclose(out.amplitudes, expected, atol=1e-15)

    def test_single_step_composition(self):
        coin = CoinAngles(0, np.pi / 4, 0)
        params = WalkParams((coin,))
        out = evolve(params, ket(1, 0, UP))
        manual = apply_shift(WalkState.localized(1, coin_matrix(coin) @ UP))
        np.testing.assert_allclose(out.amplitudes, manual.amplitudes, atol=1e-15)

    @settings(max_examples=50)
    @given(st.integers(1, 8), st.integers(0, 2**32 - 1))
    def test_norm_and_parity(self, steps, seed):
        rng = np.random.default_rng(seed)
        params = random_params(rng, steps)
        coin = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        out = evolve(params, WalkState.localized(steps, coin / np.linalg.norm(coin)))
        assert abs(out.norm_sq() - 1) < 1e-12
        wrong_parity = (out.positions - steps) % 2 == 1
        assert np.all(out.amplitudes[wrong_parity] == 0)

    def test_param_vector_round_trip(self):
        theta = np.arange(8, dtype=float) / 10
        assert np.array_equal(WalkParams.from_vector(theta, 3).to_vector(), theta)

    def test_wrong_length(self):
        with pytest.raises(ValueError):
            WalkParams.from_vector(np.zeros(9), 3)


class TestProjection:
    def test_half_probability(self):
        state = (ket(3, -1, DOWN).amplitudes + ket(3, 1, UP).amplitudes) / np.sqrt(2)
        out, p = project_coin(WalkState(state, 3), UP)
        assert p == pytest.approx(0.5, abs=1e-15)
        np.testing.assert_allclose(out.amplitudes, TargetState.basis(1, 3).amplitudes, atol=1e-15)

    def test_orthogonal_coin_is_null(self):
        out, p = project_coin(ket(0, 0, UP), DOWN)
        assert out is None and p == 0.0

    @pytest.mark.parametrize("k", [-2, 0, 2])
    def test_aligned_coin(self, k):
        out, p = project_coin(ket(2, k, UP), UP)
        assert p == pytest.approx(1.0)
        np.testing.assert_allclose(out.amplitudes, TargetState.basis(k, 2).amplitudes)

    def test_complementary_axes_sum_to_one(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            out = evolve(random_params(rng, 4), default_input(4))
            z = rng.standard_normal(2) + 1j * rng.standard_normal(2)
            a = z / np.linalg.norm(z)
            b = np.array([-a[1].conj(), a[0].conj()])
            assert abs(project_coin(out, a)[1] + project_coin(out, b)[1] - 1) < 1e-12


class TestFidelity:
    def test_identical(self):
        t = random_target(4, 0)
        assert fidelity(t, t) == pytest.approx(1.0, abs=1e-14)

    def test_orthogonal(self):
        assert fidelity(TargetState.basis(-1, 1), TargetState.basis(1, 1)) == 0.0

    def test_half(self):
        sup = TargetState(np.array([1, 1]) / np.sqrt(2))
        assert fidelity(TargetState.basis(-1, 1), sup) == pytest.approx(0.5)

    def test_symmetric_and_phase_invariant(self):
        a, b = random_target(5, 1), random_target(5, 2)
        assert fidelity(a, b) == pytest.approx(fidelity(b, a), abs=1e-15)
        rotated = TargetState(np.exp(0.7j) * b.amplitudes)
        assert fidelity(a, rotated) == pytest.approx(fidelity(a, b), abs=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            fidelity(random_target(3, 0), random_target(4, 0))


class TestGramSchmidt:
    def test_target_already_a_seed(self):
        basis = gram_schmidt_basis(TargetState.basis(-3, 3))
        np.testing.assert_allclose(basis.matrix(), np.eye(4), atol=1e-15)

    def test_second_direction_by_hand(self):
        # seed |-1> minus its projection on (|-1>+|1>)/sqrt2 leaves (|-1>-|1>)/2, normalized
        target = TargetState(np.array([1, 1]) / np.sqrt(2))
        second = gram_schmidt_basis(target).vectors[1].amplitudes
        assert abs(abs(np.vdot(second, np.array([1, -1]) / np.sqrt(2))) - 1) < 1e-12

    @pytest.mark.parametrize("dim", [2, 4, 7, 10])
    def test_orthonormal(self, dim):
        for seed in range(20):
            basis = gram_schmidt_basis(random_target(dim, seed))
            m = basis.matrix()
            assert m.shape == (dim, dim)
            np.testing.assert_allclose(m.conj() @ m.T, np.eye(dim), atol=1e-10)

    def test_first_element_is_target(self):
        t = random_target(4, 9)
        assert gram_schmidt_basis(t).vectors[0] is t


class TestRandomTarget:
    def test_normalized(self):
        assert abs(np.linalg.norm(random_target(4, 5).amplitudes) - 1) < 1e-12

    def test_deterministic(self):
        np.testing.assert_array_equal(random_target(4, 11).amplitudes, random_target(4, 11).amplitudes)

    def test_haar_marginals(self):
        # each |a_j|^2 is Beta(1, d-1): mean 1/d, variance (d-1)/(d^2 (d+1))
        d, n = 4, 10_000
        rng = np.random.default_rng(2024)
        probs = np.array([np.abs(random_target(d, rng).amplitudes) ** 2 for _ in range(n)])
        se = np.sqrt((d - 1) / (d**2 * (d + 1)) / n)
        assert np.all(np.abs(probs.mean(axis=0) - 0.25) < 3 * se)

    def test_rejects_small_band(self):
        with pytest.raises(ValueError):
            random_target(1, 0)


@pytest.mark.parametrize("steps,count", [(3, 8), (17, 50), (1, 2)])
def test_param_count(steps, count):
    assert param_count(steps) == count
