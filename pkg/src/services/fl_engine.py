"""
Federated logistic regression with optional DP-SGD and secure aggregation
"""

import hashlib
import logging
import struct
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from ..core.errors import DimensionMismatch, EmptyData
from ..models.schemas import DataConfig, PrivacyParams, TrainConfig
from . import secure_agg
from .privacy_accounting import PrivacyAccountant, calibrate_sigma

logger = logging.getLogger(__name__)

SeedLike = Union[int, Sequence[int], np.random.SeedSequence]


@dataclass
class Model:
    weights: np.ndarray
    bias: float = 0.0

    @classmethod
    def zeros(cls, dim: int) -> "Model":
        return cls(weights=np.zeros(dim), bias=0.0)

    @property
    def dim(self) -> int:
        return int(self.weights.shape[0])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.weights, [self.bias]])

    @classmethod
    def from_vector(cls, vector: np.ndarray) -> "Model":
        return cls(weights=np.array(vector[:-1], dtype=np.float64), bias=float(vector[-1]))

    def apply(self, update: "ModelUpdate") -> "Model":
        if update.dim != self.dim:
            raise DimensionMismatch(f"update dim {update.dim} != model dim {self.dim}")
        return Model(
            weights=self.weights + update.delta_weights, bias=self.bias + update.delta_bias
        )


@dataclass
class ModelUpdate:
    delta_weights: np.ndarray
    delta_bias: float = 0.0

    @property
    def dim(self) -> int:
        return int(self.delta_weights.shape[0])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.delta_weights, [self.delta_bias]])

    @classmethod
    def from_vector(cls, vector: np.ndarray) -> "ModelUpdate":
        return cls(
            delta_weights=np.array(vector[:-1], dtype=np.float64),
            delta_bias=float(vector[-1]),
        )

    def scaled(self, factor: float) -> "ModelUpdate":
        return ModelUpdate(self.delta_weights * factor, self.delta_bias * factor)


@dataclass(frozen=True)
class Example:
    features: np.ndarray
    # 0 = non-compromised, 1 = compromised
    label: int


class Dataset(Sequence[Example]):
    """Examples stored column-wise as a feature matrix and label vector"""

    def __init__(self, X: np.ndarray, y: np.ndarray):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise DimensionMismatch(f"features {X.shape} do not match labels {y.shape}")
        self.X = X
        self.y = y

    def __len__(self) -> int:
        return int(self.y.shape[0])

    def __getitem__(self, index):
        if isinstance(index, slice):
            return Dataset(self.X[index], self.y[index])
        return Example(features=self.X[index], label=int(self.y[index]))

    def __iter__(self) -> Iterator[Example]:
        for i in range(len(self)):
            yield self[i]

    @property
    def dim(self) -> int:
        return int(self.X.shape[1])

    def subset(self, indices) -> "Dataset":
        return Dataset(self.X[indices], self.y[indices])

    @classmethod
    def from_examples(cls, examples: Sequence[Example]) -> "Dataset":
        if not examples:
            raise EmptyData("no examples")
        return cls(
            np.stack([e.features for e in examples]), np.array([e.label for e in examples])
        )


@dataclass
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int
    precision_undefined: bool = False
    recall_undefined: bool = False

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int, tn: int) -> "Metrics":
        total = tp + fp + fn + tn
        if total == 0:
            raise EmptyData("no predictions to score")
        precision_undefined = tp + fp == 0
        recall_undefined = tp + fn == 0
        precision = 0.0 if precision_undefined else tp / (tp + fp)
        recall = 0.0 if recall_undefined else tp / (tp + fn)
        f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
        return cls(
            accuracy=(tp + tn) / total,
            precision=precision,
            recall=recall,
            f1=f1,
            tp=tp,
            fp=fp,
            fn=fn,
            tn=tn,
            precision_undefined=precision_undefined,
            recall_undefined=recall_undefined,
        )


def synth_dataset(
    seed: SeedLike, n: int, d: int, class_sep: float, label_noise: float
) -> Dataset:
    """Two unit-covariance Gaussian clusters class_sep apart along the diagonal"""
    if n <= 0:
        raise ValueError("n must be positive")
    if d < 2:
        raise ValueError("d must be at least 2")
    if class_sep < 0:
        raise ValueError("class_sep must be non-negative")
    if not 0 <= label_noise < 0.5:
        raise ValueError("label_noise must lie in [0, 0.5)")
    rng = np.random.default_rng(seed)
    direction = np.ones(d) / np.sqrt(d)
    true_labels = rng.integers(0, 2, size=n)
    offsets = (2 * true_labels - 1) * (class_sep / 2.0)
    X = rng.standard_normal((n, d)) + offsets[:, None] * direction
    flips = rng.random(n) < label_noise
    y = np.where(flips, 1 - true_labels, true_labels)
    return Dataset(X, y)


def train_test_split(data: Dataset, n_train: int) -> Tuple[Dataset, Dataset]:
    return data[:n_train], data[n_train:]


def _check_dim(model: Model, dim: int) -> None:
    if dim != model.dim:
        raise DimensionMismatch(f"features have dim {dim}, model has {model.dim}")


def predict(model: Model, features) -> Union[float, np.ndarray]:
    """sigmoid(w.x + b) for one vector or a matrix of rows"""
    x = np.asarray(features, dtype=np.float64)
    _check_dim(model, x.shape[-1])
    probability = expit(x @ model.weights + model.bias)
    return float(probability) if x.ndim == 1 else probability


def grad(model: Model, example: Example) -> Tuple[np.ndarray, float]:
    residual = predict(model, example.features) - example.label
    return residual * np.asarray(example.features, dtype=np.float64), residual


def log_loss(model: Model, data: Dataset) -> float:
    if len(data) == 0:
        raise EmptyData("no data")
    _check_dim(model, data.dim)
    logits = data.X @ model.weights + model.bias
    return float(np.mean(np.logaddexp(0.0, logits) - data.y * logits))


def _per_example_grads(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    residual = expit(X @ w + b) - y
    return np.column_stack([residual[:, None] * X, residual])


def _child_seeds(seed: SeedLike, count: int) -> List[np.random.SeedSequence]:
    """Children derived from the seed alone, so repeated calls agree"""
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [
        np.random.SeedSequence(root.entropy, spawn_key=root.spawn_key + (i,))
        for i in range(count)
    ]


def sgd_steps(
    model: Model,
    data: Dataset,
    *,
    learning_rate: float,
    local_steps: int,
    seed: SeedLike,
    batch_size: Optional[int] = None,
    sample_rate: Optional[float] = None,
    clip_norm: Optional[float] = None,
    noise_multiplier: float = 0.0,
) -> ModelUpdate:
    """Local SGD. Batches are fixed-size without replacement, or Poisson at
    sample_rate with the sum / (q * n) estimator. clip_norm switches on
    per-example clipping and noise_multiplier the Gaussian noise."""
    n = len(data)
    if n == 0:
        raise EmptyData("local training needs data")
    _check_dim(model, data.dim)
    batch_rng, noise_rng = (np.random.default_rng(s) for s in _child_seeds(seed, 2))
    params = model.as_vector().copy()
    start = params.copy()
    for _ in range(local_steps):
        if sample_rate is None:
            size = min(batch_size or n, n)
            batch = batch_rng.choice(n, size=size, replace=False)
        else:
            batch = np.flatnonzero(batch_rng.random(n) < sample_rate)
        grads = _per_example_grads(params[:-1], params[-1], data.X[batch], data.y[batch])
        if clip_norm is not None:
            norms = np.linalg.norm(grads, axis=1)
            factors = np.ones_like(norms)
            over = norms > clip_norm
            np.divide(clip_norm, norms, out=factors, where=over)
            grads = grads * factors[:, None]
        if sample_rate is None:
            step = grads.sum(axis=0) / len(batch)
        else:
            step = grads.sum(axis=0) / (sample_rate * n)
        if noise_multiplier > 0:
            scale = noise_multiplier * clip_norm / (sample_rate * n)
            step = step + noise_rng.normal(0.0, scale, size=step.shape)
        params = params - learning_rate * step
    return ModelUpdate.from_vector(params - start)


def local_train(model: Model, data: Dataset, cfg: TrainConfig, seed: SeedLike) -> ModelUpdate:
    if cfg.dp is None:
        return sgd_steps(
            model,
            data,
            learning_rate=cfg.learning_rate,
            local_steps=cfg.local_steps,
            seed=seed,
            batch_size=cfg.batch_size,
        )
    return sgd_steps(
        model,
        data,
        learning_rate=cfg.learning_rate,
        local_steps=cfg.local_steps,
        seed=seed,
        sample_rate=cfg.dp.sample_rate,
        clip_norm=cfg.dp.clip_norm,
        noise_multiplier=cfg.dp.noise_multiplier,
    )


def fedavg(updates: Sequence[ModelUpdate], weights: Sequence[float]) -> ModelUpdate:
    if not updates:
        raise EmptyData("no updates to average")
    if len(weights) != len(updates):
        raise ValueError("one weight per update required")
    if any(w <= 0 for w in weights):
        raise ValueError("weights must be positive")
    dim = updates[0].dim
    weighted_sum = np.zeros(dim + 1)
    total_weight = 0.0
    for update, weight in zip(updates, weights):
        if update.dim != dim:
            raise DimensionMismatch(f"update dim {update.dim} != {dim}")
        weighted_sum += update.as_vector() * weight
        total_weight += weight
    return ModelUpdate.from_vector(weighted_sum / total_weight)


def evaluate(model: Model, data: Dataset, threshold: float = 0.5) -> Metrics:
    if len(data) == 0:
        raise EmptyData("evaluation needs data")
    predicted = (predict(model, data.X) >= threshold).astype(np.int64)
    actual = data.y
    tp = int(np.sum((predicted == 1) & (actual == 1)))
    fp = int(np.sum((predicted == 1) & (actual == 0)))
    fn = int(np.sum((predicted == 0) & (actual == 1)))
    tn = int(np.sum((predicted == 0) & (actual == 0)))
    return Metrics.from_counts(tp, fp, fn, tn)


def shard_iid(data: Dataset, clients: int, seed: SeedLike) -> List[Dataset]:
    if clients < 1:
        raise ValueError("clients must be positive")
    order = np.random.default_rng(seed).permutation(len(data))
    return [data.subset(part) for part in np.array_split(order, clients)]


def shard_label_skew(data: Dataset, clients: int, skew: float, seed: SeedLike) -> List[Dataset]:
    """Each client prefers label client % 2; with probability skew an
    example goes to a client preferring its label, else to any client."""
    if clients < 1:
        raise ValueError("clients must be positive")
    if not 0 <= skew <= 1:
        raise ValueError("skew must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    preferring = {
        label: [c for c in range(clients) if c % 2 == label] or list(range(clients))
        for label in (0, 1)
    }
    owners = np.empty(len(data), dtype=np.int64)
    for i, label in enumerate(data.y):
        pool = preferring[int(label)] if rng.random() < skew else range(clients)
        owners[i] = rng.choice(list(pool))
    return [data.subset(np.flatnonzero(owners == c)) for c in range(clients)]


@dataclass
class RoundResult:
    round: int
    metrics: Metrics
    epsilon: Optional[float] = None
    transcript: Optional[secure_agg.RoundTranscript] = None


def client_seed(seed: int, client: int, round_no: int) -> np.random.SeedSequence:
    """Independent stream per (master seed, client, round)"""
    return np.random.SeedSequence([seed, client, round_no])


def _round_master_seed(seed: int, round_no: int) -> bytes:
    return hashlib.sha256(b"legion-fl-round" + struct.pack("<qq", seed, round_no)).digest()


class FederatedTrainer:
    """Round-at-a-time FedAvg over sharded clients"""

    def __init__(
        self,
        train: Dataset,
        test: Dataset,
        cfg: TrainConfig,
        malicious: Optional[Dict[int, float]] = None,
    ):
        self.cfg = cfg
        self.test = test
        if cfg.data.label_skew > 0:
            self.shards = shard_label_skew(train, cfg.clients, cfg.data.label_skew, cfg.seed)
        else:
            self.shards = shard_iid(train, cfg.clients, cfg.seed)
        # client id -> poison scale for compromised clients
        self.malicious: Dict[int, float] = dict(malicious or {})
        self.model = Model.zeros(train.dim)
        self.round = 0
        self.accountant: Optional[PrivacyAccountant] = None
        self.history: List[RoundResult] = []
        if cfg.dp is not None:
            self.cfg = cfg.model_copy(update={"dp": self._resolve_dp(cfg)})
            self.accountant = PrivacyAccountant(delta=cfg.dp.delta)

    def _resolve_dp(self, cfg: TrainConfig) -> PrivacyParams:
        dp = cfg.dp
        if dp.target_epsilon is None:
            return dp
        sigma = calibrate_sigma(
            dp.sample_rate, cfg.local_steps * cfg.rounds, dp.delta, dp.target_epsilon
        )
        logger.info(f"🔒 Calibrated noise multiplier {sigma:.3f} for epsilon {dp.target_epsilon}")
        return dp.model_copy(update={"noise_multiplier": sigma})

    @property
    def sigma(self) -> Optional[float]:
        return None if self.cfg.dp is None else self.cfg.dp.noise_multiplier

    def _client_update(self, client: int) -> ModelUpdate:
        update = local_train(
            self.model, self.shards[client], self.cfg, client_seed(self.cfg.seed, client, self.round)
        )
        if client in self.malicious:
            update = update.scaled(-self.malicious[client])
        return update

    def _secure_average(self, updates: List[ModelUpdate]) -> Tuple[ModelUpdate, secure_agg.RoundTranscript]:
        roster = list(range(len(updates)))
        seeds = secure_agg.provision_pair_seeds(roster, _round_master_seed(self.cfg.seed, self.round))
        masked = [
            secure_agg.mask_update(
                secure_agg.quantize_update(client, self.round, update.as_vector()),
                secure_agg.peers_for(client, seeds),
            )
            for client, update in zip(roster, updates)
        ]
        total = secure_agg.aggregate(masked, roster)
        transcript = secure_agg.RoundTranscript.from_updates(self.round, masked)
        return ModelUpdate.from_vector(total / len(updates)), transcript

    def run_round(self) -> RoundResult:
        updates = [self._client_update(client) for client in range(self.cfg.clients)]
        transcript = None
        if self.cfg.secure_aggregation:
            averaged, transcript = self._secure_average(updates)
        else:
            averaged = fedavg(updates, [1.0] * len(updates))
        self.model = self.model.apply(averaged)

        epsilon = None
        if self.accountant is not None:
            dp = self.cfg.dp
            epsilon = self.accountant.record(dp.sample_rate, dp.noise_multiplier, self.cfg.local_steps)
        metrics = evaluate(self.model, self.test)
        result = RoundResult(
            round=self.round + 1, metrics=metrics, epsilon=epsilon, transcript=transcript
        )
        self.history.append(result)
        logger.info(
            f"✅ FL round {result.round} accuracy={metrics.accuracy:.4f} f1={metrics.f1:.4f}"
        )
        self.round += 1
        return result

    def run(self) -> List[RoundResult]:
        while self.round < self.cfg.rounds:
            self.run_round()
        return self.history


def build_datasets(data_cfg: DataConfig, seed: int) -> Tuple[Dataset, Dataset]:
    full = synth_dataset(
        seed,
        data_cfg.n_train + data_cfg.n_test,
        data_cfg.dim,
        data_cfg.class_sep,
        data_cfg.label_noise,
    )
    return train_test_split(full, data_cfg.n_train)


def run_federated(
    cfg: TrainConfig,
    malicious: Optional[Dict[int, float]] = None,
    datasets: Optional[Tuple[Dataset, Dataset]] = None,
) -> Tuple[Model, List[RoundResult]]:
    train, test = datasets or build_datasets(cfg.data, cfg.seed)
    trainer = FederatedTrainer(train, test, cfg, malicious)
    trainer.run()
    return trainer.model, trainer.history


def compare_dp(
    clients: int,
    rounds: int,
    class_sep: float,
    target_epsilon: float,
    delta: float,
    seed: int,
    base: Optional[TrainConfig] = None,
) -> List[Dict[str, object]]:
    """Paired non-DP and DP runs on the same data; one row per (round, setting)"""
    base = base or TrainConfig()
    data_cfg = base.data.model_copy(update={"class_sep": class_sep})
    cfg = base.model_copy(update={"clients": clients, "rounds": rounds, "seed": seed, "data": data_cfg})
    datasets = build_datasets(data_cfg, seed)
    dp = (base.dp or PrivacyParams()).model_copy(
        update={"target_epsilon": target_epsilon, "delta": delta}
    )
    settings: List[Tuple[str, TrainConfig]] = [
        ("nodp", cfg.model_copy(update={"dp": None})),
        ("dp", cfg.model_copy(update={"dp": dp})),
    ]
    rows: List[Dict[str, object]] = []
    for name, setting_cfg in settings:
        _, history = run_federated(setting_cfg, datasets=datasets)
        for result in history:
            rows.append(
                {
                    "round": result.round,
                    "setting": name,
                    "accuracy": result.metrics.accuracy,
                    "f1": result.metrics.f1,
                    "recall": result.metrics.recall,
                    "precision": result.metrics.precision,
                }
            )
    rows.sort(key=lambda row: (row["round"], row["setting"] != "nodp"))
    return rows
