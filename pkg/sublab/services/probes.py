"""Linear-probe leakage: tau, residualized tau and bootstrap intervals.

tau is held-out probe accuracy on the private label minus the 0.5 chance
baseline. The residualized variant first removes from the features everything
linearly predictable from covariates (the teacher's public logits).
"""

import warnings
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
import scipy.linalg
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import LogisticRegression

from sublab.exceptions import ContractError, DegenerateInputError, ShapeError
from sublab.log import get_logger
from sublab.rng import numpy_generator
from sublab.schemas.reports import Interval, LeakageReport
from sublab.tensor import Array, IntArray

log = get_logger(__name__)

CHANCE = 0.5
DEFAULT_L2 = 1e-3
MAX_ITER = 2000
TOL = 1e-6


@dataclass(frozen=True)
class ProbeModel:
    weights: Array
    bias: float
    l2: float
    n_iter: int = 0

    def decision(self, features: npt.ArrayLike) -> Array:
        out: Array = np.asarray(features, dtype=np.float64) @ self.weights + self.bias
        return out

    def predict(self, features: npt.ArrayLike) -> IntArray:
        return (self.decision(features) > 0).astype(np.int64)

    def accuracy(self, features: npt.ArrayLike, labels: npt.ArrayLike) -> float:
        y = np.asarray(labels, dtype=np.int64)
        if y.size == 0:
            raise ContractError("accuracy of an empty evaluation set is undefined")
        return float(np.mean(self.predict(features) == y))


def _as_matrix(features: npt.ArrayLike, name: str = "features") -> Array:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ShapeError(f"{name} must be an (n, d) matrix, got shape {x.shape}")
    return x


def _as_labels(labels: npt.ArrayLike, n: int) -> IntArray:
    y = np.asarray(labels).reshape(-1).astype(np.int64)
    if y.shape != (n,):
        raise ShapeError(f"{y.size} labels for {n} rows")
    if not np.isin(y, (0, 1)).all():
        raise ContractError("probe labels must be bits")
    return y


def fit_logistic(features: npt.ArrayLike, labels: npt.ArrayLike, l2: float = DEFAULT_L2) -> ProbeModel:
    """Minimise ``mean logistic loss + l2 * ||w||^2 / 2`` from zero.

    scikit-learn's objective is ``C * sum loss + ||w||^2 / 2``; dividing by
    ``C * n`` gives ours with ``C = 1 / (n * l2)``. The intercept is not
    penalised.
    """
    x = _as_matrix(features)
    n = x.shape[0]
    y = _as_labels(labels, n)
    if n < 2:
        raise ContractError(f"a probe needs at least 2 examples, got {n}")
    if np.unique(y).size < 2:
        raise DegenerateInputError("probe labels contain a single class")
    if l2 <= 0:
        raise ContractError(f"l2 must be positive, got {l2}")

    clf = LogisticRegression(C=1.0 / (n * l2), solver="lbfgs", tol=TOL, max_iter=MAX_ITER)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        clf.fit(x, y)
    return ProbeModel(
        weights=clf.coef_[0].astype(np.float64),
        bias=float(clf.intercept_[0]),
        l2=l2,
        n_iter=int(clf.n_iter_[0]),
    )


def probe_folds(n: int, fold_seed: int) -> tuple[IntArray, IntArray]:
    """Seeded 50/50 split of ``range(n)`` into probe-train and probe-test."""
    if n < 4:
        raise ContractError(f"need at least 4 examples to fold, got {n}")
    order = numpy_generator(fold_seed).permutation(n)
    half = n // 2
    return np.sort(order[:half]), np.sort(order[half:])


@dataclass(frozen=True)
class TauEstimate:
    probe: ProbeModel
    probe_acc: float
    train_idx: IntArray
    test_idx: IntArray

    @property
    def tau(self) -> float:
        return self.probe_acc - CHANCE


def leakage_tau(
    cls: npt.ArrayLike, y_priv: npt.ArrayLike, fold_seed: int, l2: float = DEFAULT_L2
) -> TauEstimate:
    """Fit on the probe-train fold, score on the probe-test fold."""
    x = _as_matrix(cls, "cls")
    y = _as_labels(y_priv, x.shape[0])
    train_idx, test_idx = probe_folds(x.shape[0], fold_seed)
    probe = fit_logistic(x[train_idx], y[train_idx], l2)
    return TauEstimate(
        probe=probe,
        probe_acc=probe.accuracy(x[test_idx], y[test_idx]),
        train_idx=train_idx,
        test_idx=test_idx,
    )


def residualize(
    features: npt.ArrayLike, covariates: npt.ArrayLike, ridge: float = 1e-8
) -> Array:
    """Remove the least-squares fit of every column on ``[covariates, 1]``."""
    f = _as_matrix(features)
    c = _as_matrix(covariates, "covariates")
    if c.shape[0] != f.shape[0]:
        raise ShapeError(f"{c.shape[0]} covariate rows for {f.shape[0]} feature rows")
    if c.shape[1] < 1:
        raise ContractError("residualize needs at least one covariate")
    design = np.hstack([c, np.ones((c.shape[0], 1))])
    gram = design.T @ design + ridge * np.eye(design.shape[1])
    beta = scipy.linalg.cho_solve(scipy.linalg.cho_factor(gram), design.T @ f)
    out: Array = f - design @ beta
    return out


def bootstrap_ci(
    metric: Callable[[IntArray], float],
    n: int,
    n_boot: int = 200,
    seed: int = 0,
    alpha: float = 0.05,
) -> Interval:
    """Percentile interval of ``metric`` over resamples of ``range(n)``.

    ``metric`` receives the resampled row indices of the evaluation set.
    """
    if n < 1:
        raise ContractError("bootstrap needs a non-empty evaluation set")
    if n_boot < 1:
        raise ContractError(f"n_boot must be >= 1, got {n_boot}")
    rng = numpy_generator(seed)
    draws = rng.integers(0, n, size=(n_boot, n))
    values = np.array([metric(idx) for idx in draws])
    lo, hi = np.percentile(values, [100 * alpha / 2, 100 * (1 - alpha / 2)])
    return float(lo), float(hi)


def _tau_interval(
    estimate: TauEstimate, x: Array, y: IntArray, n_boot: int, seed: int
) -> Interval:
    # Refitting on the fixed probe-train fold is deterministic, so one fit serves
    # every resample of the probe-test fold.
    correct = (estimate.probe.predict(x[estimate.test_idx]) == y[estimate.test_idx]).astype(
        np.float64
    )
    return bootstrap_ci(
        lambda idx: float(correct[idx].mean()) - CHANCE, correct.size, n_boot, seed
    )


def measure_leakage(
    cls: npt.ArrayLike,
    y_priv: npt.ArrayLike,
    teacher_logits: npt.ArrayLike | None,
    *,
    fold_seed: int,
    bootstrap_seed: int,
    n_boot: int = 200,
    l2: float = DEFAULT_L2,
) -> LeakageReport:
    """tau and tau_resid with intervals, all on the same probe folds.

    Without covariates there is nothing to regress out and tau_resid equals tau.
    """
    x = _as_matrix(cls, "cls")
    y = _as_labels(y_priv, x.shape[0])
    raw = leakage_tau(x, y, fold_seed, l2)
    if teacher_logits is None:
        x_resid, resid = x, raw
    else:
        x_resid = residualize(x, teacher_logits)
        resid = leakage_tau(x_resid, y, fold_seed, l2)
    report = LeakageReport(
        probe_acc=raw.probe_acc,
        tau=raw.tau,
        tau_ci=_tau_interval(raw, x, y, n_boot, bootstrap_seed),
        resid_probe_acc=resid.probe_acc,
        tau_resid=resid.tau,
        tau_resid_ci=_tau_interval(resid, x_resid, y, n_boot, bootstrap_seed),
        l2=l2,
        fold_seed=fold_seed,
        bootstrap_seed=bootstrap_seed,
        n_boot=n_boot,
        n_probe_train=int(raw.train_idx.size),
        n_probe_test=int(raw.test_idx.size),
    )
    log.debug("leakage", extra={"tau": report.tau, "tau_resid": report.tau_resid})
    return report
