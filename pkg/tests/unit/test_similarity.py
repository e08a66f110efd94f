import numpy as np
import pytest
from scipy.stats import ortho_group

from sublab.exceptions import ContractError, ShapeError, UndefinedSimilarityError
from sublab.services.similarity import (
    TraitBasis,
    cca_rho_max,
    linear_cka,
    similarity_report,
    subspace_cka,
    trait_basis,
)
from tests.helpers import hsic_cka, planted_trait


@pytest.fixture
def x() -> np.ndarray:
    return np.random.default_rng(0).normal(size=(120, 6))


def test_cka_self_similarity(x) -> None:
    assert linear_cka(x, x) == pytest.approx(1.0, abs=1e-10)


def test_cka_invariances(x) -> None:
    q = ortho_group.rvs(6, random_state=1)
    y = np.random.default_rng(2).normal(size=(120, 4)) + x[:, :4]
    assert linear_cka(x, 3.7 * x) == pytest.approx(1.0, abs=1e-10)
    assert linear_cka(x @ q, y) == pytest.approx(linear_cka(x, y), abs=1e-8)
    assert linear_cka(x, y) == pytest.approx(linear_cka(y, x), abs=1e-12)


def test_cka_matches_gram_form(x) -> None:
    y = np.random.default_rng(3).normal(size=(120, 9))
    assert linear_cka(x, y) == pytest.approx(hsic_cka(x, y), abs=1e-10)


def test_cka_of_constant_input_is_undefined(x) -> None:
    with pytest.raises(UndefinedSimilarityError):
        linear_cka(x, np.ones((120, 2)))


def test_cka_input_checks(x) -> None:
    with pytest.raises(ShapeError):
        linear_cka(x, x[:10])
    with pytest.raises(ContractError):
        linear_cka(x[:1], x[:1])


def test_k1_subspace_cka_is_squared_cosine() -> None:
    rng = np.random.default_rng(4)
    zt, zs = rng.normal(size=(50, 5)), rng.normal(size=(50, 5))
    u = rng.normal(size=(5, 1))
    basis = TraitBasis(U=u / np.linalg.norm(u))
    a, b = (zt @ basis.U)[:, 0], (zs @ basis.U)[:, 0]
    a, b = a - a.mean(), b - b.mean()
    cos2 = (a @ b) ** 2 / ((a @ a) * (b @ b))
    assert subspace_cka(zt, zs, basis) == pytest.approx(cos2, abs=1e-10)
    assert subspace_cka(zt, zt, basis) == pytest.approx(1.0, abs=1e-10)


def test_orthogonal_projections_have_zero_subspace_cka() -> None:
    basis = TraitBasis(U=np.eye(3)[:, :1])
    zt = np.zeros((4, 3))
    zs = np.zeros((4, 3))
    zt[:, 0] = [1.0, -1.0, 1.0, -1.0]
    zs[:, 0] = [1.0, 1.0, -1.0, -1.0]
    assert subspace_cka(zt, zs, basis) == pytest.approx(0.0, abs=1e-10)


def test_basis_must_be_orthonormal() -> None:
    with pytest.raises(ContractError):
        TraitBasis(U=np.array([[1.0], [1.0]]))
    with pytest.raises(ShapeError):
        TraitBasis(U=np.eye(2)[:, :0])


def test_k1_basis_is_the_unit_probe_direction() -> None:
    x, y = planted_trait(n=500, d=6, strength=1.5, seed=5)
    basis = trait_basis(x, y)
    assert basis.k == 1 and basis.d == 6
    assert np.abs(basis.U.T @ basis.U - np.eye(1)).max() < 1e-10
    assert basis.U[0, 0] > 0.9
    assert basis.probe_norm > 0


def test_thresholded_projection_reproduces_probe_accuracy() -> None:
    x, y = planted_trait(n=500, d=6, strength=1.0, seed=6)
    basis = trait_basis(x, y)
    coords = basis.project(x)[:, 0]
    predicted = (coords * basis.probe_norm + basis.probe_bias > 0).astype(int)
    assert basis.probe_accuracy is not None
    assert np.mean(predicted == y) == pytest.approx(basis.probe_accuracy, abs=0.01)


def test_higher_rank_basis_is_orthonormal() -> None:
    x, y = planted_trait(n=400, d=8, strength=1.0, seed=7)
    basis = trait_basis(x, y, k=3)
    assert basis.U.shape == (8, 3)
    np.testing.assert_allclose(basis.U.T @ basis.U, np.eye(3), atol=1e-10)


def test_trait_basis_rejects_bad_rank() -> None:
    x, y = planted_trait(n=40, d=3)
    with pytest.raises(ContractError):
        trait_basis(x, y, k=4)


def test_cca_of_a_linear_relation() -> None:
    rng = np.random.default_rng(8)
    x = rng.normal(size=(300, 4))
    a = rng.normal(size=(4, 4)) + 4 * np.eye(4)
    assert cca_rho_max(x, x @ a) >= 0.999


def test_cca_of_independent_data() -> None:
    rng = np.random.default_rng(9)
    assert cca_rho_max(rng.normal(size=(2000, 4)), rng.normal(size=(2000, 4))) < 0.15


def test_scalar_cca_is_absolute_pearson() -> None:
    rng = np.random.default_rng(10)
    a = rng.normal(size=200)
    b = -0.4 * a + rng.normal(size=200)
    expected = abs(np.corrcoef(a, b)[0, 1])
    assert cca_rho_max(a[:, None], b[:, None], ridge=0.0) == pytest.approx(expected, abs=1e-8)


def test_cca_needs_more_rows_than_columns() -> None:
    with pytest.raises(ContractError):
        cca_rho_max(np.ones((4, 4)), np.ones((4, 2)))


def test_similarity_report_ranges(x) -> None:
    y = x @ np.random.default_rng(11).normal(size=(6, 6)) + 0.1
    report = similarity_report(x, y, TraitBasis(U=np.eye(6)[:, :1]))
    for value in (report.global_cka, report.subspace_cka, report.rho_max):
        assert 0.0 <= value <= 1.0
    assert report.k == 1
