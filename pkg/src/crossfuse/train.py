"""Contrastive training of per-channel linear adapters and fusion weights.

Stands in for full dual-encoder fine-tuning at desk scale: one square
adapter per role (query image, passage image, entity name), initialized to
identity so step 0 reproduces zero-shot retrieval. The objective is the
in-batch softmax over passages given the query image: every anchor's score
row mixes the mono cosine (adapted query image vs adapted passage image) and
the cross cosine (adapted query image vs adapted entity name), weighted by
the fusion weights and scaled by exp(logit_scale).

Gradients are analytic and verified against central finite differences in
the test suite. AdamW with decoupled weight decay, linear warmup then linear
decay, early stopping on validation in-batch MRR.
"""

from __future__ import annotations

import copy
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embedstore import ChannelRole, EmbeddingMatrix
from .errors import ConfigError, FormatError, TrainingDiverged, ValidationError

logger = logging.getLogger(__name__)

STRATEGIES = ("mono", "cross", "joint")

ADAPTER_ROLES = {
    "query_image_adapter": ChannelRole.QUERY_IMAGE,
    "passage_image_adapter": ChannelRole.PASSAGE_IMAGE,
    "entity_name_adapter": ChannelRole.ENTITY_NAME,
}

PARAM_NAMES = (
    "query_image_adapter",
    "passage_image_adapter",
    "entity_name_adapter",
    "weight_mono",
    "weight_cross",
    "logit_scale",
)


@dataclass
class AdapterSet:
    """One square linear map per embedded role, identity at init."""

    query_image: np.ndarray
    passage_image: np.ndarray
    entity_name: np.ndarray

    @classmethod
    def identity(cls, dim: int) -> "AdapterSet":
        return cls(*(np.eye(dim, dtype=np.float64) for _ in range(3)))

    @property
    def dim(self) -> int:
        return self.query_image.shape[0]

    def validate(self) -> None:
        for name in ("query_image", "passage_image", "entity_name"):
            a = getattr(self, name)
            if a.shape != (self.dim, self.dim):
                raise ValidationError(f"{name} adapter is {a.shape}, expected square dim {self.dim}")
            if not np.all(np.isfinite(a)):
                raise ValidationError(f"{name} adapter has non-finite entries")


@dataclass
class TrainConfig:
    strategy: str = "joint"
    batch_size: int = 3072
    lr: float = 2e-6
    alpha_lr: float = 0.02
    weight_decay: float = 0.1
    warmup_steps: int = 4
    decay_steps: int = 50  # 1000 for the larger datasets
    logit_scale_init: float = 4.6  # score multiplier is exp(logit_scale)
    alpha_init: float = 0.5
    seed: int = 0
    patience: int = 3
    max_epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    mask_duplicate_entities: bool = False

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        # lr = 0 is allowed (no-op optimizer); negative rates are not
        if self.lr < 0 or self.alpha_lr < 0 or self.weight_decay < 0:
            raise ConfigError("learning rates and weight decay must be >= 0")
        if self.warmup_steps < 0 or self.decay_steps < 1:
            raise ConfigError("warmup_steps must be >= 0 and decay_steps >= 1")
        if self.warmup_steps >= self.decay_steps:
            raise ConfigError("warmup_steps must be < decay_steps")
        if self.patience < 1 or self.max_epochs < 1:
            raise ConfigError("patience and max_epochs must be >= 1")


def load_train_config(path) -> TrainConfig:
    import yaml

    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping")
    known = {f.name for f in TrainConfig.__dataclass_fields__.values()}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    config = TrainConfig(**raw)
    config.validate()
    return config


@dataclass
class TripleSet:
    """Row-aligned (query image, entity name, passage image) triples.

    Rows must be unit-norm: adapters are applied to pre-normalized inputs.
    entity_ids enable duplicate-entity collision logging and masking.
    """

    query_images: np.ndarray
    entity_names: np.ndarray
    passage_images: np.ndarray
    entity_ids: list[str] | None = None

    def __post_init__(self):
        self.query_images = np.asarray(self.query_images, dtype=np.float64)
        self.entity_names = np.asarray(self.entity_names, dtype=np.float64)
        self.passage_images = np.asarray(self.passage_images, dtype=np.float64)

    def __len__(self) -> int:
        return self.query_images.shape[0]

    def validate(self) -> None:
        shapes = {self.query_images.shape, self.entity_names.shape, self.passage_images.shape}
        if len(shapes) != 1:
            raise ValidationError(f"triple arrays must be row-aligned, got shapes {shapes}")
        if self.query_images.ndim != 2 or len(self) < 1:
            raise ValidationError("triples must be a non-empty 2-D row set")
        if self.entity_ids is not None and len(self.entity_ids) != len(self):
            raise ValidationError("entity_ids not aligned with triple rows")
        for name in ("query_images", "entity_names", "passage_images"):
            rows = getattr(self, name)
            if not np.all(np.isfinite(rows)):
                raise ValidationError(f"{name} contains non-finite values")
            norms = np.linalg.norm(rows, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-5):
                raise ValidationError(f"{name} rows must be L2-normalized before training")

    def slice(self, index: np.ndarray) -> "TripleSet":
        return TripleSet(
            self.query_images[index],
            self.entity_names[index],
            self.passage_images[index],
            [self.entity_ids[i] for i in index] if self.entity_ids is not None else None,
        )


@dataclass
class TrainState:
    adapters: AdapterSet
    weight_mono: float
    weight_cross: float
    logit_scale: float
    strategy: str
    step: int = 0
    moments: dict = field(default_factory=dict)  # name -> [m, v]
    best_val_mrr: float = -1.0
    best_checkpoint: "Checkpoint | None" = None
    history: list = field(default_factory=list)  # (epoch, mean loss, val MRR)

    @classmethod
    def initial(cls, dim: int, config: TrainConfig) -> "TrainState":
        moments = {
            name: [np.zeros((dim, dim)), np.zeros((dim, dim))] for name in ADAPTER_ROLES
        }
        for scalar in ("weight_mono", "weight_cross", "logit_scale"):
            moments[scalar] = [0.0, 0.0]
        return cls(
            adapters=AdapterSet.identity(dim),
            weight_mono=config.alpha_init,
            weight_cross=config.alpha_init,
            logit_scale=config.logit_scale_init,
            strategy=config.strategy,
            moments=moments,
        )

    def effective_weights(self) -> tuple[float, float]:
        """Fusion weights after the strategy mask."""
        if self.strategy == "mono":
            return 1.0, 0.0
        if self.strategy == "cross":
            return 0.0, 1.0
        return self.weight_mono, self.weight_cross


@dataclass
class Checkpoint:
    """Best-model snapshot: adapters plus the scalar parameters."""

    adapters: AdapterSet
    weight_mono: float
    weight_cross: float
    logit_scale: float
    strategy: str
    step: int
    val_mrr: float


def _normalize_rows(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValidationError("adapter collapsed a row to zero; cannot normalize")
    return rows / norms, norms


def softmax_loss_from_logits(logits: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean -log softmax of the diagonal, plus the gradient wrt the logits.

    Invariant to adding a constant to any single row (softmax shift
    invariance). -inf entries are treated as masked-out columns.
    """
    row_max = logits.max(axis=1, keepdims=True)
    exp_shift = np.exp(logits - row_max)
    denom = exp_shift.sum(axis=1, keepdims=True)
    log_softmax = (logits - row_max) - np.log(denom)
    loss = -float(np.mean(np.diagonal(log_softmax)))
    grad = exp_shift / denom
    np.fill_diagonal(grad, np.diagonal(grad) - 1.0)
    grad /= logits.shape[0]
    return loss, grad


def _duplicate_mask(entity_ids: list[str] | None, size: int) -> np.ndarray | None:
    """True where column j is a same-entity duplicate of anchor a (j != a)."""
    if entity_ids is None:
        return None
    ids = np.asarray(entity_ids, dtype=object)
    same = ids[:, None] == ids[None, :]
    np.fill_diagonal(same, False)
    if not same.any():
        return None
    return same


def batch_loss(
    batch: TripleSet,
    state: TrainState,
    strategy: str | None = None,
    mask_duplicates: bool = False,
) -> tuple[float, dict[str, np.ndarray | float]]:
    """In-batch contrastive loss and analytic gradients.

    For each anchor query image, scores against every batch column j are
      s[a, j] = w_mono * cos(adapted q_a, adapted p_j)
              + w_cross * cos(adapted q_a, adapted t_j)
    scaled by exp(logit_scale); the loss is the mean negative log-softmax of
    the positive column (softmax over passages given the query image).
    Gradients for parameters fixed by the strategy mask are exactly zero.
    """
    if strategy is None:
        strategy = state.strategy
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}")
    size = len(batch)
    if size < 2:
        raise ValidationError(f"batch must have >= 2 triples, got {size}")

    if strategy == "mono":
        w_mono, w_cross = 1.0, 0.0
    elif strategy == "cross":
        w_mono, w_cross = 0.0, 1.0
    else:
        w_mono, w_cross = state.weight_mono, state.weight_cross

    a_q = state.adapters.query_image
    a_p = state.adapters.passage_image
    a_t = state.adapters.entity_name

    raw_q = batch.query_images @ a_q.T
    raw_p = batch.passage_images @ a_p.T
    raw_t = batch.entity_names @ a_t.T
    unit_q, norm_q = _normalize_rows(raw_q)
    unit_p, norm_p = _normalize_rows(raw_p)
    unit_t, norm_t = _normalize_rows(raw_t)

    cos_mono = unit_q @ unit_p.T
    cos_cross = unit_q @ unit_t.T
    scores = w_mono * cos_mono + w_cross * cos_cross

    scale = np.exp(state.logit_scale)
    logits = scores * scale
    dup = _duplicate_mask(batch.entity_ids, size) if mask_duplicates else None
    if batch.entity_ids is not None:
        collisions = _duplicate_mask(batch.entity_ids, size)
        if collisions is not None:
            logger.info(
                "batch has %d duplicate-entity pairs%s",
                int(collisions.sum()) // 2,
                " (masked)" if mask_duplicates else "",
            )
    if dup is not None:
        logits = np.where(dup, -np.inf, logits)

    loss, grad_logits = softmax_loss_from_logits(logits)
    if dup is not None:
        grad_logits = np.where(dup, 0.0, grad_logits)

    grad_scores = grad_logits * scale
    grad_logit_scale = float(np.sum(grad_logits * scores) * scale)

    grad_w_mono = float(np.sum(grad_scores * cos_mono))
    grad_w_cross = float(np.sum(grad_scores * cos_cross))

    dim = a_q.shape[0]

    # backprop through the cosine factors that are active
    grad_unit_q = np.zeros_like(unit_q)
    if w_mono != 0.0:
        grad_unit_q += w_mono * (grad_scores @ unit_p)
    if w_cross != 0.0:
        grad_unit_q += w_cross * (grad_scores @ unit_t)

    def through_norm(grad_unit, unit, norm):
        # unit = raw / |raw|: project out the radial component, divide by |raw|
        radial = np.sum(grad_unit * unit, axis=1, keepdims=True)
        return (grad_unit - radial * unit) / norm

    grad_raw_q = through_norm(grad_unit_q, unit_q, norm_q)
    grad_a_q = grad_raw_q.T @ batch.query_images

    if w_mono != 0.0:
        grad_unit_p = w_mono * (grad_scores.T @ unit_q)
        grad_raw_p = through_norm(grad_unit_p, unit_p, norm_p)
        grad_a_p = grad_raw_p.T @ batch.passage_images
    else:
        grad_a_p = np.zeros((dim, dim))

    if w_cross != 0.0:
        grad_unit_t = w_cross * (grad_scores.T @ unit_q)
        grad_raw_t = through_norm(grad_unit_t, unit_t, norm_t)
        grad_a_t = grad_raw_t.T @ batch.entity_names
    else:
        grad_a_t = np.zeros((dim, dim))

    if strategy != "joint":
        grad_w_mono = 0.0
        grad_w_cross = 0.0

    grads = {
        "query_image_adapter": grad_a_q,
        "passage_image_adapter": grad_a_p,
        "entity_name_adapter": grad_a_t,
        "weight_mono": grad_w_mono,
        "weight_cross": grad_w_cross,
        "logit_scale": grad_logit_scale,
    }
    if not np.isfinite(loss):
        raise TrainingDiverged(f"non-finite loss {loss}", state=state, step=state.step)
    return loss, grads


def in_batch_mrr(batch: TripleSet, state: TrainState, strategy: str | None = None) -> float:
    """Mean reciprocal rank of each anchor's own column under the batch scores.

    Ties rank pessimistically: the positive is placed after all equal-scored
    negatives.
    """
    if strategy is None:
        strategy = state.strategy
    size = len(batch)
    if size < 2:
        raise ValidationError(f"batch must have >= 2 triples, got {size}")

    if strategy == "mono":
        w_mono, w_cross = 1.0, 0.0
    elif strategy == "cross":
        w_mono, w_cross = 0.0, 1.0
    else:
        w_mono, w_cross = state.weight_mono, state.weight_cross

    unit_q, _ = _normalize_rows(batch.query_images @ state.adapters.query_image.T)
    unit_p, _ = _normalize_rows(batch.passage_images @ state.adapters.passage_image.T)
    unit_t, _ = _normalize_rows(batch.entity_names @ state.adapters.entity_name.T)
    scores = w_mono * (unit_q @ unit_p.T) + w_cross * (unit_q @ unit_t.T)

    positives = np.diagonal(scores)
    better_or_equal = (scores >= positives[:, None]).sum(axis=1)  # includes self
    ranks = better_or_equal  # pessimistic: equal-scored negatives rank ahead
    return float(np.mean(1.0 / ranks))


def _schedule(step: int, config: TrainConfig) -> float:
    """Linear warmup to 1 over warmup_steps, then linear decay to 0."""
    if config.warmup_steps > 0 and step <= config.warmup_steps:
        return step / config.warmup_steps
    return max(0.0, 1.0 - (step - config.warmup_steps) / config.decay_steps)


def _trainable(strategy: str) -> list[str]:
    names = ["query_image_adapter", "logit_scale"]
    if strategy in ("mono", "joint"):
        names.append("passage_image_adapter")
    if strategy in ("cross", "joint"):
        names.append("entity_name_adapter")
    if strategy == "joint":
        names.extend(["weight_mono", "weight_cross"])
    return names


def _get_param(state: TrainState, name: str):
    if name in ADAPTER_ROLES:
        return getattr(state.adapters, name.removesuffix("_adapter"))
    return getattr(state, name)


def _set_param(state: TrainState, name: str, value) -> None:
    if name in ADAPTER_ROLES:
        setattr(state.adapters, name.removesuffix("_adapter"), value)
    else:
        setattr(state, name, value)


def adamw_step(state: TrainState, grads: dict, config: TrainConfig) -> None:
    """One decoupled-weight-decay adaptive-moment update on the trainable set.

    Weight decay applies to the adapter matrices only; the fusion weights and
    logit scale are decay-free. The warmup/decay multiplier scales every
    group's rate.
    """
    state.step += 1
    mult = _schedule(state.step, config)
    correction1 = 1.0 - config.beta1 ** state.step
    correction2 = 1.0 - config.beta2 ** state.step

    for name in _trainable(config.strategy):
        grad = grads[name]
        m, v = state.moments[name]
        m = config.beta1 * m + (1.0 - config.beta1) * grad
        v = config.beta2 * v + (1.0 - config.beta2) * (grad * grad if isinstance(grad, np.ndarray) else grad ** 2)
        state.moments[name] = [m, v]
        m_hat = m / correction1
        v_hat = v / correction2
        if name in ("weight_mono", "weight_cross"):
            lr = config.alpha_lr * mult
            decay = 0.0
        elif name == "logit_scale":
            lr = config.lr * mult
            decay = 0.0
        else:
            lr = config.lr * mult
            decay = config.weight_decay
        theta = _get_param(state, name)
        update = m_hat / (np.sqrt(v_hat) + config.eps) if isinstance(m_hat, np.ndarray) else m_hat / (v_hat ** 0.5 + config.eps)
        theta = theta - lr * update - lr * decay * theta
        _set_param(state, name, theta)


def _epoch_batches(n: int, batch_size: int, order: np.ndarray):
    for start in range(0, n, batch_size):
        index = order[start : start + batch_size]
        if index.size >= 2:
            yield index


def validation_mrr(val: TripleSet, state: TrainState, config: TrainConfig) -> float:
    """Mean in-batch MRR over validation batches (fixed order, no shuffle)."""
    order = np.arange(len(val))
    values = [
        in_batch_mrr(val.slice(index), state, config.strategy)
        for index in _epoch_batches(len(val), config.batch_size, order)
    ]
    if not values:
        raise ValidationError("validation set yields no batch of size >= 2")
    return float(np.mean(values))


def _snapshot(state: TrainState, val_mrr: float) -> Checkpoint:
    return Checkpoint(
        adapters=copy.deepcopy(state.adapters),
        weight_mono=state.weight_mono,
        weight_cross=state.weight_cross,
        logit_scale=state.logit_scale,
        strategy=state.strategy,
        step=state.step,
        val_mrr=val_mrr,
    )


def train(triples: TripleSet, val: TripleSet, config: TrainConfig) -> TrainState:
    """Full training loop with early stopping on validation in-batch MRR.

    The best checkpoint (strict improvements only) is kept on the returned
    state; step 0 is evaluated first so an unhelpful run returns the initial
    parameters.
    """
    config.validate()
    triples.validate()
    val.validate()

    dim = triples.query_images.shape[1]
    state = TrainState.initial(dim, config)
    rng = np.random.default_rng(config.seed)

    state.best_val_mrr = validation_mrr(val, state, config)
    state.best_checkpoint = _snapshot(state, state.best_val_mrr)
    history = [(0, None, state.best_val_mrr)]
    epochs_without_improvement = 0

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(triples))
        losses = []
        for index in _epoch_batches(len(triples), config.batch_size, order):
            batch = triples.slice(index)
            loss, grads = batch_loss(batch, state, config.strategy, config.mask_duplicate_entities)
            losses.append(loss)
            adamw_step(state, grads, config)

        val_mrr = validation_mrr(val, state, config)
        history.append((epoch, float(np.mean(losses)), val_mrr))
        if val_mrr > state.best_val_mrr:
            state.best_val_mrr = val_mrr
            state.best_checkpoint = _snapshot(state, val_mrr)
            epochs_without_improvement = 0
        else:
            epochs_without_improvement += 1
        if epochs_without_improvement >= config.patience:
            break
        if state.step >= config.warmup_steps + config.decay_steps:
            break  # learning rate fully decayed

    state.history = history
    return state


def state_from_checkpoint(checkpoint: Checkpoint) -> TrainState:
    dim = checkpoint.adapters.dim
    state = TrainState.initial(dim, TrainConfig(strategy=checkpoint.strategy))
    state.adapters = copy.deepcopy(checkpoint.adapters)
    state.weight_mono = checkpoint.weight_mono
    state.weight_cross = checkpoint.weight_cross
    state.logit_scale = checkpoint.logit_scale
    state.step = checkpoint.step
    state.best_val_mrr = checkpoint.val_mrr
    state.best_checkpoint = checkpoint
    return state


def export_channels(
    state_or_checkpoint,
    matrices: dict[ChannelRole, EmbeddingMatrix],
) -> tuple[dict[ChannelRole, EmbeddingMatrix], dict[str, float]]:
    """Apply the adapters to stored matrices and re-normalize.

    Emits per-role matrices ready for search, so channels from different
    checkpoints can be fused downstream (the disjoint combination). Returns
    the matrices plus the checkpoint's fusion weights.
    """
    ckpt = state_or_checkpoint
    if isinstance(ckpt, TrainState):
        w_mono, w_cross = ckpt.effective_weights()
        adapters, strategy = ckpt.adapters, ckpt.strategy
    else:
        state = state_from_checkpoint(ckpt)
        w_mono, w_cross = state.effective_weights()
        adapters, strategy = ckpt.adapters, ckpt.strategy

    by_role = {role: getattr(adapters, name.removesuffix("_adapter")) for name, role in ADAPTER_ROLES.items()}
    out: dict[ChannelRole, EmbeddingMatrix] = {}
    for role, matrix in matrices.items():
        if role not in by_role:
            raise ValidationError(f"no adapter for role {role.value}")
        adapter = by_role[role]
        if matrix.dim != adapter.shape[0]:
            raise ValidationError(
                f"{role.value}: matrix dim {matrix.dim} != adapter dim {adapter.shape[0]}"
            )
        adapted = matrix.data.astype(np.float64) @ adapter.T
        unit, _ = _normalize_rows(adapted)
        out[role] = EmbeddingMatrix(
            ids=list(matrix.ids), data=unit.astype(np.float32), role=role, normalized=True
        )
    weights = {"mono_image": w_mono, "cross_image_text": w_cross, "strategy": strategy}
    return out, weights


# --- checkpoint container -------------------------------------------------
#
# Same style as the embedding container, with a float64 payload:
#   magic b"ACK1" | version u8 | strategy u8 | dim u32 | step u64
#   | weight_mono f64 | weight_cross f64 | logit_scale f64 | val_mrr f64
#   | 3 * dim*dim float64 row-major (query_image, passage_image, entity_name)

CKPT_MAGIC = b"ACK1"
_CKPT_HEADER = struct.Struct("<4sBBIQdddd")
_STRATEGY_BYTES = {"mono": 0, "cross": 1, "joint": 2}
_BYTE_STRATEGIES = {b: s for s, b in _STRATEGY_BYTES.items()}


def save_checkpoint(checkpoint: Checkpoint, path) -> None:
    checkpoint.adapters.validate()
    dim = checkpoint.adapters.dim
    header = _CKPT_HEADER.pack(
        CKPT_MAGIC,
        1,
        _STRATEGY_BYTES[checkpoint.strategy],
        dim,
        checkpoint.step,
        checkpoint.weight_mono,
        checkpoint.weight_cross,
        checkpoint.logit_scale,
        checkpoint.val_mrr,
    )
    payload = b"".join(
        np.ascontiguousarray(a, dtype="<f8").tobytes()
        for a in (
            checkpoint.adapters.query_image,
            checkpoint.adapters.passage_image,
            checkpoint.adapters.entity_name,
        )
    )
    Path(path).write_bytes(header + payload)


def load_checkpoint(path) -> Checkpoint:
    blob = Path(path).read_bytes()
    if len(blob) < _CKPT_HEADER.size:
        raise FormatError(f"{path}: file shorter than checkpoint header")
    magic, version, strategy_byte, dim, step, w_mono, w_cross, scale, val_mrr = _CKPT_HEADER.unpack_from(blob)
    if magic != CKPT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != 1:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    if strategy_byte not in _BYTE_STRATEGIES:
        raise FormatError(f"{path}: unknown strategy byte {strategy_byte}")
    expected = _CKPT_HEADER.size + 3 * 8 * dim * dim
    if len(blob) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, got {len(blob)}")
    arrays = []
    offset = _CKPT_HEADER.size
    for _ in range(3):
        a = np.frombuffer(blob, dtype="<f8", count=dim * dim, offset=offset).reshape(dim, dim)
        arrays.append(a.copy())
        offset += 8 * dim * dim
    checkpoint = Checkpoint(
        adapters=AdapterSet(*arrays),
        weight_mono=w_mono,
        weight_cross=w_cross,
        logit_scale=scale,
        strategy=_BYTE_STRATEGIES[strategy_byte],
        step=step,
        val_mrr=val_mrr,
    )
    checkpoint.adapters.validate()
    return checkpoint
