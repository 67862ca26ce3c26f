"""Driver identification from ordinal-pattern features.

Each sensor channel of a 30-sample window is symbolised into ordinal
patterns (Bandt-Pompe), and summarised by normalised permutation entropy H
and MPR statistical complexity C. Nine channels give 18 features per window,
which feed a k-nearest-neighbours or a One-vs-Rest Gaussian naive Bayes model.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

import numpy as np

from .rng import make_rng

CHANNELS = (
    "accelerator_pedal",
    "intake_air_pressure",
    "throttle_position",
    "long_term_fuel",
    "engine_speed",
    "friction_torque",
    "coolant_temperature",
    "engine_torque",
    "vehicle_speed",
)
WINDOW = 30
N_DRIVERS = 4
PRESETS = {"small": 300, "large": 9700}


@dataclass(frozen=True)
class OrdinalConfig:
    dimension: int = 3
    delay: int = 1

    def __post_init__(self):
        if not 2 <= self.dimension <= 7:
            raise ValueError("embedding dimension must be in [2, 7]")
        if self.delay < 1:
            raise ValueError("delay must be >= 1")

    @property
    def span(self) -> int:
        return (self.dimension - 1) * self.delay + 1

    @property
    def n_patterns(self) -> int:
        return math.factorial(self.dimension)


@dataclass
class OrdinalDistribution:
    probabilities: np.ndarray
    counts: np.ndarray
    config: OrdinalConfig = field(default_factory=OrdinalConfig)

    @classmethod
    def from_probabilities(cls, p, config: OrdinalConfig | None = None):
        p = np.asarray(p, dtype=float)
        if config is None:
            d = next(d for d in range(2, 8) if math.factorial(d) == len(p))
            config = OrdinalConfig(d)
        if len(p) != config.n_patterns:
            raise ValueError("probability vector length must be D!")
        if (p < 0).any() or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("not a probability vector")
        return cls(p, np.zeros(len(p), dtype=int), config)


@dataclass(frozen=True)
class EntropyComplexity:
    H: float
    C: float


@dataclass
class SensorWindow:
    driver: int
    data: np.ndarray  # (9, 30)
    window_id: int = 0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.shape != (len(CHANNELS), WINDOW):
            raise ValueError(f"window must be {len(CHANNELS)}x{WINDOW}, got {self.data.shape}")


@dataclass
class FeatureVector:
    driver: int
    values: np.ndarray  # (18,) H1, C1, ..., H9, C9
    window_id: int = 0


def _pattern_codes(series: np.ndarray, config: OrdinalConfig) -> np.ndarray:
    """Lexicographic pattern index of every embedded vector along the last axis."""
    d, tau = config.dimension, config.delay
    n = series.shape[-1] - (d - 1) * tau
    emb = np.stack([series[..., i * tau: i * tau + n] for i in range(d)], axis=-1)
    # stable argsort: equal values rank by order of appearance
    perms = np.argsort(emb, axis=-1, kind="stable")
    # Lehmer code of each permutation gives its lexicographic rank
    code = np.zeros(perms.shape[:-1], dtype=np.int64)
    for i in range(d):
        smaller_after = (perms[..., i + 1:] < perms[..., i:i + 1]).sum(axis=-1)
        code = code * (d - i) + smaller_after
    return code


def ordinal_distribution(series, config: OrdinalConfig | None = None) -> OrdinalDistribution:
    config = config or OrdinalConfig()
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ValueError("series must be one-dimensional")
    if len(x) < config.span:
        raise ValueError(f"series of length {len(x)} shorter than embedding span {config.span}")
    if not np.isfinite(x).all():
        raise ValueError("series contains non-finite values")
    counts = np.bincount(_pattern_codes(x, config), minlength=config.n_patterns)
    return OrdinalDistribution(counts / counts.sum(), counts, config)


def _shannon(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def permutation_entropy(dist: OrdinalDistribution) -> float:
    n = len(dist.probabilities)
    return _shannon(dist.probabilities) / math.log(n)


def jensen_shannon(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return _shannon((p + q) / 2) - _shannon(p) / 2 - _shannon(q) / 2


def _js_max(n: int) -> float:
    degenerate = np.zeros(n)
    degenerate[0] = 1.0
    return jensen_shannon(degenerate, np.full(n, 1.0 / n))


def statistical_complexity(dist: OrdinalDistribution) -> float:
    """MPR complexity: normalised JS disequilibrium to uniform times H."""
    p = dist.probabilities
    n = len(p)
    q_j = jensen_shannon(p, np.full(n, 1.0 / n)) / _js_max(n)
    c = q_j * permutation_entropy(dist)
    return min(max(c, 0.0), 1.0)


def entropy_complexity(series, config: OrdinalConfig | None = None) -> EntropyComplexity:
    dist = ordinal_distribution(series, config)
    return EntropyComplexity(permutation_entropy(dist), statistical_complexity(dist))


def batch_entropy_complexity(series: np.ndarray, config: OrdinalConfig | None = None):
    """Vectorised (H, C) over the last axis of ``series``; returns two arrays."""
    config = config or OrdinalConfig()
    series = np.asarray(series, dtype=float)
    if series.shape[-1] < config.span:
        raise ValueError(f"series of length {series.shape[-1]} shorter than embedding span {config.span}")
    m = config.n_patterns
    codes = _pattern_codes(series, config)
    flat = codes.reshape(-1, codes.shape[-1])
    offsets = np.arange(len(flat))[:, None] * m
    counts = np.bincount((flat + offsets).ravel(), minlength=len(flat) * m).reshape(-1, m)
    p = counts / counts.sum(axis=1, keepdims=True)

    def shannon(q):
        with np.errstate(divide="ignore", invalid="ignore"):
            return -np.where(q > 0, q * np.log(q), 0.0).sum(axis=-1)

    u = 1.0 / m
    h = shannon(p) / math.log(m)
    js = shannon((p + u) / 2) - shannon(p) / 2 - math.log(m) / 2
    c = np.clip(js / _js_max(m) * h, 0.0, 1.0)
    shape = codes.shape[:-1]
    return h.reshape(shape), c.reshape(shape)


def window_features(data: np.ndarray, config: OrdinalConfig) -> np.ndarray:
    h, c = batch_entropy_complexity(data, config)
    return np.column_stack([h, c]).ravel()


def extract_features(
    windows: Sequence[SensorWindow], config: OrdinalConfig | None = None
) -> list[FeatureVector]:
    """(H, C) per channel for every window, channel-major: H1, C1, ..., H9, C9."""
    config = config or OrdinalConfig()
    if WINDOW < config.span:
        raise ValueError(f"{WINDOW}-sample windows too short for span {config.span}")
    if not windows:
        return []
    stack = np.stack([w.data for w in windows])
    bad = ~np.isfinite(stack).all(axis=(1, 2))
    if bad.any():
        raise ValueError(f"window {int(np.argmax(bad))}: series contains non-finite values")
    h, c = batch_entropy_complexity(stack, config)
    vals = np.stack([h, c], axis=-1).reshape(len(windows), -1)
    return [FeatureVector(w.driver, vals[i], w.window_id) for i, w in enumerate(windows)]


def feature_matrix(features: Sequence[FeatureVector]) -> tuple[np.ndarray, np.ndarray]:
    X = np.array([f.values for f in features], dtype=float)
    y = np.array([f.driver for f in features], dtype=int)
    return X, y


# -- classifiers --------------------------------------------------------------


class Classifier(Protocol):
    def fit(self, X: np.ndarray, y: np.ndarray) -> "Classifier": ...

    def predict(self, X: np.ndarray) -> np.ndarray: ...


def _check_training(X, y, classes=None):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if len(X) == 0 or len(X) != len(y):
        raise ValueError("need a non-empty training set with one label per row")
    if classes is not None:
        empty = [c for c in classes if not (y == c).any()]
        if empty:
            raise ValueError(f"no training samples for class(es) {empty}")
    return X, y


class KNN:
    """Euclidean k-nearest-neighbours. Vote ties go to the smaller label."""

    def __init__(self, k: int = 1, chunk: int = 2048):
        if k < 1 or k % 2 == 0:
            raise ValueError("k must be a positive odd integer")
        self.k = k
        self.chunk = chunk

    def fit(self, X, y, classes=None):
        self.X_, self.y_ = _check_training(X, y, classes)
        self.classes_ = np.unique(self.y_)
        if self.k > len(self.X_):
            raise ValueError(f"k={self.k} exceeds {len(self.X_)} training samples")
        return self

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        train_sq = (self.X_ ** 2).sum(axis=1)
        label_idx = np.searchsorted(self.classes_, self.y_)
        out = np.empty(len(X), dtype=self.y_.dtype)
        for start in range(0, len(X), self.chunk):
            q = X[start:start + self.chunk]
            d2 = (q ** 2).sum(axis=1)[:, None] + train_sq[None, :] - 2.0 * q @ self.X_.T
            # k passes of argmin; equal distances resolve by training order
            nn = np.empty((len(q), self.k), dtype=int)
            rows = np.arange(len(q))
            for j in range(self.k):
                nn[:, j] = np.argmin(d2, axis=1)
                d2[rows, nn[:, j]] = np.inf
            votes = np.zeros((len(q), len(self.classes_)), dtype=int)
            np.add.at(votes, (np.repeat(np.arange(len(q)), self.k), label_idx[nn].ravel()), 1)
            out[start:start + len(q)] = self.classes_[np.argmax(votes, axis=1)]
        return out


class GaussianNBOvR:
    """Gaussian naive Bayes, one binary model per class (One-vs-Rest).

    Each binary model fits per-feature mean/variance for "class" and "rest"
    (variance floored at 1e-9). Its score is the log posterior odds of
    "class"; the prediction is the class with the highest score.
    """

    var_floor = 1e-9

    def fit(self, X, y, classes=None):
        X, y = _check_training(X, y, classes)
        self.classes_ = np.unique(y)
        if len(self.classes_) < 2:
            raise ValueError("One-vs-Rest needs at least two classes")
        self.models_ = []
        for c in self.classes_:
            pos, neg = X[y == c], X[y != c]
            self.models_.append((
                pos.mean(0), np.maximum(pos.var(0), self.var_floor),
                neg.mean(0), np.maximum(neg.var(0), self.var_floor),
                math.log(len(pos) / len(X)), math.log(len(neg) / len(X)),
            ))
        return self

    @staticmethod
    def _loglik(X, mu, var):
        return -0.5 * (np.log(2 * np.pi * var) + (X - mu) ** 2 / var).sum(axis=1)

    def decision_function(self, X):
        X = np.asarray(X, dtype=float)
        scores = np.empty((len(X), len(self.classes_)))
        for j, (mp, vp, mn, vn, lp, ln) in enumerate(self.models_):
            scores[:, j] = (self._loglik(X, mp, vp) + lp) - (self._loglik(X, mn, vn) + ln)
        return scores

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


def train_knn(features: Sequence[FeatureVector], k: int = 1, classes=None) -> KNN:
    X, y = feature_matrix(features)
    return KNN(k).fit(X, y, classes)


def train_gnb_ovr(features: Sequence[FeatureVector], classes=None) -> GaussianNBOvR:
    X, y = feature_matrix(features)
    return GaussianNBOvR().fit(X, y, classes)


# -- evaluation ---------------------------------------------------------------


@dataclass
class ModelResult:
    accuracy: float
    confusion: np.ndarray


@dataclass
class EvalReport:
    labels: list[int]
    results: dict[str, ModelResult]
    n_train: int
    n_test: int
    train_per_class: dict[int, int]
    test_per_class: dict[int, int]

    def metrics_rows(self):
        for name in sorted(self.results):
            yield (name, f"{self.results[name].accuracy:.6f}", self.n_train, self.n_test)


def stratified_split(y, train_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0 < train_fraction < 1:
        raise ValueError("split fraction must be in (0, 1)")
    y = np.asarray(y)
    rng = make_rng(seed)
    train, test = [], []
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        if len(idx) < 2:
            raise ValueError(f"class {c} has fewer than 2 samples")
        idx = idx[rng.permutation(len(idx))]
        n_train = min(max(int(round(train_fraction * len(idx))), 1), len(idx) - 1)
        train.append(idx[:n_train])
        test.append(idx[n_train:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def confusion_matrix(y_true, y_pred, labels) -> np.ndarray:
    pos = {c: i for i, c in enumerate(labels)}
    m = np.zeros((len(labels), len(labels)), dtype=int)
    for t, p in zip(y_true, y_pred):
        m[pos[t], pos[p]] += 1
    return m


def evaluate(
    models: Mapping[str, Classifier],
    dataset: Sequence[FeatureVector] | tuple[np.ndarray, np.ndarray],
    split_fraction: float = 0.75,
    seed: int = 0,
) -> EvalReport:
    """Fit each model on a seeded stratified split and score it on the rest."""
    X, y = dataset if isinstance(dataset, tuple) else feature_matrix(dataset)
    tr, te = stratified_split(y, split_fraction, seed)
    labels = [int(c) for c in np.unique(y)]
    results = {}
    for name, model in models.items():
        model.fit(X[tr], y[tr])
        pred = model.predict(X[te])
        cm = confusion_matrix(y[te], pred, labels)
        results[name] = ModelResult(float(np.trace(cm) / cm.sum()), cm)
    return EvalReport(
        labels,
        results,
        len(tr),
        len(te),
        {c: int((y[tr] == c).sum()) for c in labels},
        {c: int((y[te] == c).sum()) for c in labels},
    )


# -- synthetic drivers ----------------------------------------------------------

# Channel regimes: (phi1, phi2, logistic weight). Each regime has a distinct
# ordinal signature at 30 samples:
#   smooth    AR(2) near a unit root  H ~ 0.60, C ~ 0.25
#   chaotic   logistic map r=3.99     H ~ 0.82, C ~ 0.18
#   zigzag    AR(1) phi=-0.9          H ~ 0.88, C ~ 0.12
#   white     i.i.d. Gaussian         H ~ 0.96, C ~ 0.03
_REGIMES = (
    (1.9, -0.95, 0.0),
    (0.0, 0.0, 1.0),
    (-0.9, 0.0, 0.0),
    (0.0, 0.0, 0.0),
)
# Driver d uses regime (d + c) % 4 on channel c, so any two drivers differ on
# every channel.
_BASE = np.array([20.0, 60.0, 15.0, 2.0, 1800.0, 40.0, 85.0, 120.0, 50.0])
_SCALE = np.array([8.0, 10.0, 6.0, 1.0, 300.0, 8.0, 4.0, 30.0, 15.0])
_DRIVER_OFFSET = np.array([-0.30, -0.10, 0.10, 0.30])
_DRIVER_GAIN = np.array([0.8, 1.0, 1.25, 1.5])
_BURN_IN = 50
_LOGISTIC_R = 3.99


def regime_of(driver: int, channel: int) -> int:
    return (driver + channel) % len(_REGIMES)


def _regime_series(regime: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """(n, 30) standardised series for one regime."""
    phi1, phi2, mix = _REGIMES[regime]
    length = WINDOW + _BURN_IN
    eps = rng.standard_normal((n, length))
    x = np.zeros_like(eps)
    for t in range(2, length):
        x[:, t] = phi1 * x[:, t - 1] + phi2 * x[:, t - 2] + eps[:, t]
    x = x[:, _BURN_IN:]
    z = rng.uniform(0.1, 0.9, n)
    logi = np.empty((n, WINDOW))
    for t in range(WINDOW):
        z = _LOGISTIC_R * z * (1 - z)
        logi[:, t] = z
    x = (1 - mix) * x + mix * logi
    sd = x.std(axis=1, keepdims=True)
    return (x - x.mean(axis=1, keepdims=True)) / np.where(sd > 0, sd, 1.0)


def _driver_channels(driver: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """(n, 9, 30) windows for one driver."""
    x = np.stack(
        [_regime_series(regime_of(driver, c), n, rng) for c in range(len(CHANNELS))], axis=1
    )
    base = _BASE * (1 + _DRIVER_OFFSET[driver])
    scale = _SCALE * _DRIVER_GAIN[driver]
    return base[None, :, None] + scale[None, :, None] * x


def generate_synthetic_drivers(n_per_driver: int, seed: int) -> list[SensorWindow]:
    """Four synthetic drivers with distinct per-channel stochastic regimes.

    Each channel follows one of four regimes (AR(2) with driver-specific
    coefficients, or a logistic map), rescaled to a channel baseline that is
    shifted and stretched per driver. Windows
    are ordered driver-major; ``window_id`` counts within a driver.
    """
    if n_per_driver < 1:
        raise ValueError("need at least one window per driver")
    rng = make_rng(seed)
    windows = []
    for d in range(N_DRIVERS):
        block = _driver_channels(d, n_per_driver, rng)
        windows.extend(SensorWindow(d, block[i], i) for i in range(n_per_driver))
    return windows


# -- CSV ----------------------------------------------------------------------

DATASET_HEADER = ("driver", "window_id", "sample_idx") + tuple(f"ch{i + 1}" for i in range(len(CHANNELS)))
FEATURES_HEADER = ("driver", "window_id") + tuple(
    f"{m}{i + 1}" for i in range(len(CHANNELS)) for m in ("H", "C")
)


def write_dataset(windows: Sequence[SensorWindow], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(DATASET_HEADER)
    for win in windows:
        for s in range(WINDOW):
            w.writerow((win.driver, win.window_id, s, *(repr(float(v)) for v in win.data[:, s])))


def read_dataset(fh) -> list[SensorWindow]:
    rows: dict[tuple[int, int], dict[int, list[float]]] = {}
    for r in csv.DictReader(fh):
        key = (int(r["driver"]), int(r["window_id"]))
        rows.setdefault(key, {})[int(r["sample_idx"])] = [
            float(r[f"ch{i + 1}"]) for i in range(len(CHANNELS))
        ]
    out = []
    for (driver, wid), samples in rows.items():
        if sorted(samples) != list(range(WINDOW)):
            raise ValueError(f"window ({driver}, {wid}) needs samples 0..{WINDOW - 1}")
        data = np.array([samples[s] for s in range(WINDOW)]).T
        out.append(SensorWindow(driver, data, wid))
    return out


def write_features(features: Sequence[FeatureVector], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(FEATURES_HEADER)
    for f in features:
        w.writerow((f.driver, f.window_id, *(f"{v:.12g}" for v in f.values)))


def features_csv(features: Sequence[FeatureVector]) -> str:
    buf = io.StringIO()
    write_features(features, buf)
    return buf.getvalue()
