import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy.special import expit

from model_gate_audit.cohort import Cohort, FeatureMatrix
from model_gate_audit.errors import FitError, ShapeError


logger = logging.getLogger("model_gate_audit")

CHECKPOINT_EVERY = 100


@dataclass(frozen=True)
class LogisticFitConfig:
    learning_rate: float = 1.0
    max_iterations: int = 5000
    l2: float = 1e-3
    tolerance: float = 1e-8
    seed: int = 42


@dataclass(frozen=True)
class LogisticBaseline:
    weights: np.ndarray
    bias: float
    means: np.ndarray
    sds: np.ndarray
    layout: Tuple[Tuple[str, str], ...]
    fit_config: LogisticFitConfig = field(default_factory=LogisticFitConfig)
    iterations: int = 0
    loss_history: Tuple[float, ...] = ()

    @property
    def descriptor(self) -> str:
        return (
            f"logistic-baseline d={len(self.layout)} l2={self.fit_config.l2:g} "
            f"iterations={self.iterations} seed={self.fit_config.seed}"
        )

    @property
    def feature_names(self) -> List[str]:
        return [name for name, _ in self.layout]

    def check_layout(self, X: FeatureMatrix) -> None:
        if X.layout() != self.layout:
            raise ShapeError(
                f"feature layout {list(X.column_names)} does not match fit-time layout "
                f"{self.feature_names}"
            )

    def standardize(self, X: FeatureMatrix) -> np.ndarray:
        self.check_layout(X)
        return (X.values - self.means) / self.sds

    def decision_function(self, X: FeatureMatrix) -> np.ndarray:
        return self.standardize(X) @ self.weights + self.bias

    def score(self, X: FeatureMatrix) -> np.ndarray:
        return expit(self.decision_function(X))

    def dump(self, path: Optional[Union[str, Path]] = None) -> str:
        lines = [
            f"# {self.descriptor}",
            f"bias\t{self.bias!r}",
            "# column\tkind\tmean\tsd\tweight",
        ]
        for (name, kind), mean, sd, weight in zip(self.layout, self.means, self.sds, self.weights):
            lines.append(f"{name}\t{kind}\t{float(mean)!r}\t{float(sd)!r}\t{float(weight)!r}")
        text = "\n".join(lines) + "\n"
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


def _log_loss(z: np.ndarray, y: np.ndarray, weights: np.ndarray, l2: float) -> float:
    # log(1 + e^z) - y z, computed stably.
    data = np.mean(np.logaddexp(0.0, z) - y * z)
    return float(data + 0.5 * l2 * np.dot(weights, weights))


def fit_logistic(train: Cohort, fit_config: Optional[LogisticFitConfig] = None) -> LogisticBaseline:
    config = fit_config or LogisticFitConfig()
    y = train.labels.astype(float)
    if len(np.unique(y)) < 2:
        raise FitError("training data holds a single class")
    X = train.features
    means = X.values.mean(axis=0)
    sds = X.values.std(axis=0)
    sds = np.where(sds > 0.0, sds, 1.0)
    Z = (X.values - means) / sds
    n, d = Z.shape

    # Lipschitz constant of the gradient bounds the fixed step.
    gram = Z.T @ Z / n
    curvature = 0.25 * max(float(np.linalg.eigvalsh(gram)[-1]), 1.0) + config.l2
    step = min(config.learning_rate, 1.0 / curvature)

    weights = np.zeros(d)
    bias = 0.0
    history: List[float] = []
    iterations = 0
    for iterations in range(1, config.max_iterations + 1):
        z = Z @ weights + bias
        residual = expit(z) - y
        grad_w = Z.T @ residual / n + config.l2 * weights
        grad_b = float(np.mean(residual))
        if iterations == 1 or iterations % CHECKPOINT_EVERY == 0:
            history.append(_log_loss(z, y, weights, config.l2))
        if max(float(np.max(np.abs(grad_w))), abs(grad_b)) < config.tolerance:
            break
        weights = weights - step * grad_w
        bias = bias - step * grad_b
    history.append(_log_loss(Z @ weights + bias, y, weights, config.l2))

    logger.info(
        "Logistic fit finished: n=%s d=%s iterations=%s step=%.4g loss=%.6f",
        n,
        d,
        iterations,
        step,
        history[-1],
    )
    return LogisticBaseline(
        weights=weights,
        bias=bias,
        means=means,
        sds=sds,
        layout=X.layout(),
        fit_config=config,
        iterations=iterations,
        loss_history=tuple(history),
    )
