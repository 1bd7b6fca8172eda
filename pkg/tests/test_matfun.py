import numpy as np
import pytest
from numpy.testing import assert_allclose

from covsteer.errors import DimensionError
from covsteer.matfun import (
    BoundaryData,
    MatrixPoly,
    evaluate,
    kron,
    unvec,
    validate_system,
    vec,
)

from helpers import const, make_system, example_system


def test_evaluate_constant():
    f = const([[1.0]])
    assert_allclose(evaluate(f, 0.7, 0), [[1.0]])


def test_evaluate_affine_derivative():
    f = MatrixPoly.from_entries([[[3.0, 1.0]]])  # 3 + t
    assert_allclose(evaluate(f, 0.5, 1), [[1.0]])
    assert_allclose(evaluate(f, 0.2, 0), [[3.2]])
    assert_allclose(evaluate(f, 0.9, 2), [[0.0]])


def test_evaluate_matches_finite_differences():
    rng = np.random.default_rng(7)
    h = 1e-5
    for _ in range(20):
        coeffs = list(rng.uniform(-2.0, 2.0, size=5))
        f = MatrixPoly.from_entries([[coeffs]])
        t = rng.uniform(0.1, 0.9)
        fd = (f.eval(t + h)[0, 0] - f.eval(t - h)[0, 0]) / (2.0 * h)
        exact = f.eval(t, 1)[0, 0]
        assert abs(fd - exact) <= 1e-8 * max(1.0, abs(exact))


def test_kron_identity():
    assert_allclose(kron(np.eye(2), np.eye(2)), np.eye(4))


def test_kron_hand_example():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    y = np.array([[0.0, 1.0], [1.0, 0.0]])
    expected = np.array([
        [0.0, 1.0, 0.0, 2.0],
        [1.0, 0.0, 2.0, 0.0],
        [0.0, 3.0, 0.0, 4.0],
        [3.0, 0.0, 4.0, 0.0],
    ])
    assert_allclose(kron(x, y), expected)


@pytest.mark.parametrize("n", [2, 3])
def test_kron_vec_identity(n):
    rng = np.random.default_rng(n)
    for _ in range(5):
        x = rng.standard_normal((n, n))
        y = rng.standard_normal((n, n))
        h = rng.standard_normal((n, n))
        lhs = kron(x, y) @ vec(h)
        rhs = vec(y @ h @ x.T)
        assert np.max(np.abs(lhs - rhs)) <= 1e-12


def test_vec_column_major():
    assert_allclose(vec(np.array([[1.0, 3.0], [2.0, 4.0]])), [1.0, 2.0, 3.0, 4.0])
    assert_allclose(vec(np.zeros((2, 2))), np.zeros(4))


def test_vec_unvec_round_trip():
    rng = np.random.default_rng(3)
    h = rng.standard_normal((3, 3))
    assert_allclose(unvec(vec(h)), h)


def test_matrix_poly_product_is_exact():
    a = MatrixPoly.from_entries([[[1.0, 2.0], [0.0, 1.0]], [[3.0], [1.0, 0.0, 1.0]]])
    b = MatrixPoly.from_entries([[[0.0, 1.0]], [[2.0]]])
    prod = a @ b
    for t in np.linspace(0.0, 1.0, 7):
        assert_allclose(prod.eval(t), a.eval(t) @ b.eval(t), atol=1e-14)


def test_matrix_poly_requires_nonempty_coeffs():
    with pytest.raises(ValueError):
        MatrixPoly(1, 1, (((),),))


def test_validate_example_system_passes():
    assert validate_system(example_system()).passed


def test_validate_rejects_zero_r():
    sys = make_system(1, 1, 1, [[0.0]], [[1.0]], [[1.0]], [[1.0]],
                      [[0.0]], [[0.0]], [[0.0]])
    report = validate_system(sys)
    assert not report.passed
    failure = report.failures()[0]
    assert failure.name == "R"
    assert failure.time == 0.0
    assert "not positive definite" in failure.detail


@pytest.mark.parametrize("field,value", [
    ("R", [[-1.0]]),
    ("Q", [[-1.0, 0.0], [0.0, 0.0]]),
    ("nu", [[-0.5]]),
])
def test_validate_flags_each_corruption(field, value):
    base = dict(a=[[-2.0, 1.0], [0.0, 0.0]], b=[[0.0], [1.0]], c=[[1.0], [0.0]],
                d=[[1.0]], nu=[[0.5]], q_mat=[[1.0, 0.0], [0.0, 0.0]], r=[[1.0]])
    key = {"R": "r", "Q": "q_mat", "nu": "nu"}[field]
    base[key] = value
    sys = make_system(2, 1, 1, **base)
    report = validate_system(sys)
    assert not report.passed
    assert any(c.name == field for c in report.failures())


def test_dimension_mismatch_raises():
    with pytest.raises(DimensionError, match="B declared 2x1"):
        make_system(2, 1, 1, np.zeros((2, 2)), [[0.0, 1.0]], [[1.0], [0.0]],
                    [[1.0]], [[0.0]], np.zeros((2, 2)), [[1.0]])


def test_boundary_data_requires_positive_definite():
    with pytest.raises(ValueError, match="positive definite"):
        BoundaryData(sigma0=np.zeros((2, 2)), sigma1=np.eye(2))
    bd = BoundaryData(sigma0=np.eye(2), sigma1=np.diag([0.3, 0.2]))
    assert_allclose(bd.sigma1, np.diag([0.3, 0.2]))
