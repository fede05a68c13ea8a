import numpy as np
import pytest

from panelhmm.expm import matrix_exponential

from oracles import taylor_expm


def random_generator(rng, n):
    Q = rng.uniform(0.0, 1.0, size=(n, n))
    Q[rng.uniform(size=(n, n)) < 0.4] = 0.0
    np.fill_diagonal(Q, 0.0)
    np.fill_diagonal(Q, -Q.sum(axis=1))
    return Q


def test_zero_matrix_gives_identity():
    assert np.array_equal(matrix_exponential(np.zeros((4, 4))), np.eye(4))


def test_two_state_absorbing_closed_form():
    A = np.array([[-1.0, 1.0], [0.0, 0.0]])
    expected = np.array([[np.exp(-1.0), 1.0 - np.exp(-1.0)], [0.0, 1.0]])
    assert np.allclose(matrix_exponential(A), expected, atol=1e-14)


def test_matches_taylor_oracle_on_generators():
    rng = np.random.default_rng(7)
    for _ in range(25):
        Q = random_generator(rng, 7) * 0.7
        E = matrix_exponential(Q)
        T = taylor_expm(Q)
        assert np.abs(E - T).max() < 1e-10


def test_matches_taylor_oracle_on_larger_norms():
    rng = np.random.default_rng(11)
    for scale in (3.0, 12.0, 40.0):
        Q = random_generator(rng, 7) * scale
        rel = np.abs(matrix_exponential(Q) - taylor_expm(Q))
        assert rel.max() < 1e-10


def test_batch_result_independent_of_batch_composition():
    # per-matrix scaling makes each slice bitwise equal to a solo evaluation
    rng = np.random.default_rng(3)
    batch = np.stack([random_generator(rng, 5) * s for s in (0.1, 1.0, 8.0, 30.0)])
    together = matrix_exponential(batch)
    for i in range(batch.shape[0]):
        alone = matrix_exponential(batch[i])
        assert np.array_equal(together[i], alone)


def test_non_finite_input_rejected():
    A = np.zeros((3, 3))
    A[0, 0] = np.nan
    with pytest.raises(ValueError):
        matrix_exponential(A)


def test_non_square_rejected():
    with pytest.raises(ValueError):
        matrix_exponential(np.zeros((3, 4)))
