# src/training/trainer.py
"""
两阶段训练。

第一阶段：码本固定，表示只算一次，只训线性分类器（默认 lr 0.01）。
第二阶段：分类器、残差锚点、分配锚点一起微调（默认 lr 1e-4），梯度经 actionvlad_backward 回传到锚点。
每次更新都是：micro-batch 梯度平均 → 全局范数裁剪 → Adam。
"""

from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np

from src.aggregation.actionvlad_layer import (
    actionvlad_backward,
    actionvlad_forward,
    flatten_l2_normalize,
    intra_normalize,
)
from src.aggregation.feature_map import FeatureMap
from src.aggregation.pooling import pool_videos, representation_dim
from src.codebook.codebook import Codebook
from src.common.custom_logging.logging_config import get_logger
from src.common.errors import EmptyInputError, InvalidParameterError, ShapeMismatchError
from src.config.avlad_configs import TrainConfig

from .classifier import (
    ClassifierModel,
    classifier_forward_batch,
    dropout_mask,
    label_target,
    softmax_cross_entropy_soft,
)
from .optimizer import AdamState, Tensors, optimizer_update

logger = get_logger(__name__)


@dataclass(frozen=True)
class TrainingExample:
    """一个训练样本：待聚合的 FeatureMap（已经做完流融合 / 多裁剪）和它的标签。"""

    features: FeatureMap
    labels: tuple[int, ...]


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    stage: int
    train_loss: float
    val_acc: float

    def to_line(self) -> str:
        """指标日志的一行：epoch<TAB>stage<TAB>train_loss<TAB>val_acc。"""
        return f"{self.epoch}\t{self.stage}\t{self.train_loss:.6f}\t{self.val_acc:.6f}"


@dataclass
class TrainingResult:
    model: ClassifierModel
    codebook: Codebook | None
    stage: int
    history: list[EpochMetrics] = field(default_factory=list)
    best_epoch: int = 0
    """被保留下来的模型来自第几个 epoch；0 表示训练前的模型（只在第二阶段可能出现）。"""
    best_val_acc: float = float("nan")
    adam_state: AdamState | None = None


EpochCallback = Callable[[EpochMetrics], None]


def _infer_num_classes(examples: Sequence[TrainingExample]) -> int:
    return max(max(example.labels) for example in examples) + 1


def _targets(examples: Sequence[TrainingExample], num_classes: int) -> np.ndarray:
    return np.stack([label_target(example.labels, num_classes) for example in examples])


def accuracy(logits: np.ndarray, examples: Sequence[TrainingExample]) -> float:
    """预测类别落在视频标签里就算对（单标签时就是普通准确率）。"""
    if len(examples) == 0:
        return float("nan")
    predictions = np.argmax(logits, axis=1)
    hits = sum(int(pred) in example.labels for pred, example in zip(predictions, examples, strict=True))
    return hits / len(examples)


def _update_groups(num_examples: int, cfg: TrainConfig, rng: np.random.Generator) -> list[list[np.ndarray]]:
    """打乱后切成 micro-batch，每 accumulation_steps 个 micro-batch 组成一次更新。"""
    order = rng.permutation(num_examples)
    micro_batches = [order[i : i + cfg.batch_size] for i in range(0, num_examples, cfg.batch_size)]
    return [
        micro_batches[i : i + cfg.accumulation_steps] for i in range(0, len(micro_batches), cfg.accumulation_steps)
    ]


def _classifier_grads(
    representations: np.ndarray,
    targets: np.ndarray,
    params: Tensors,
    mask: np.ndarray | None,
) -> tuple[float, Tensors, np.ndarray]:
    """一个 micro-batch 的平均损失、W/b 梯度，以及对（dropout 之前的）表示的梯度。"""
    inputs = representations if mask is None else representations * mask
    logits = inputs @ params["W"].T + params["b"]
    batch = representations.shape[0]
    total_loss, grad_logits = softmax_cross_entropy_soft(logits, targets)
    grad_logits = grad_logits / batch
    grads = {"W": grad_logits.T @ inputs, "b": grad_logits.sum(axis=0)}
    grad_inputs = grad_logits @ params["W"]
    if mask is not None:
        grad_inputs = grad_inputs * mask
    return total_loss / batch, grads, grad_inputs


def _step(
    params: Tensors, micro_grads: list[Tensors], state: AdamState, lr: float, cfg: TrainConfig
) -> tuple[Tensors, AdamState]:
    params, state, norm = optimizer_update(
        params, micro_grads, state, lr, cfg.clip_norm, cfg.adam_epsilon, cfg.adam_beta1, cfg.adam_beta2
    )
    if norm > cfg.clip_norm:
        logger.debug(f"梯度范数 {norm:.3f} 超过 {cfg.clip_norm}，已裁剪")
    return params, state


def _log_epoch(metrics: EpochMetrics, total_epochs: int) -> None:
    stage_name = "第一阶段" if metrics.stage == 1 else "第二阶段"
    logger.info(
        f"{stage_name} epoch {metrics.epoch}/{total_epochs}: "
        f"train_loss={metrics.train_loss:.4f}, val_acc={metrics.val_acc:.4f}"
    )


def train_stage1(
    train_set: Sequence[TrainingExample],
    cb: Codebook | None,
    cfg: TrainConfig,
    val_set: Sequence[TrainingExample] = (),
    num_classes: int | None = None,
    workers: int = 1,
    on_epoch: EpochCallback | None = None,
) -> TrainingResult:
    """
    码本固定，只训线性分类器。池化方式取 cfg.pooling；avg / max 时 cb 可以为 None。

    表示只编码一次。keep_best 时返回验证集准确率最高的那个 epoch 的模型，并列取更早的。
    """
    if not train_set:
        raise EmptyInputError("训练集为空")
    if cfg.pooling == "vlad" and cb is None:
        raise InvalidParameterError("vlad 池化的第一阶段训练需要码本")
    num_classes = num_classes or _infer_num_classes(train_set)

    train_repr = pool_videos([ex.features for ex in train_set], cfg.pooling, cb, workers=workers)
    val_repr = pool_videos([ex.features for ex in val_set], cfg.pooling, cb, workers=workers) if val_set else None
    targets = _targets(train_set, num_classes)

    feature_dim = train_repr.shape[1]
    model = ClassifierModel.initialize(num_classes, feature_dim, cfg.dropout, cfg.seed)
    params: Tensors = {"W": np.array(model.W), "b": np.array(model.b)}
    state = AdamState.zeros_like(params)
    rng = np.random.default_rng([cfg.seed, 1])

    result = TrainingResult(model=model, codebook=cb, stage=1, adam_state=state)
    best_acc = -np.inf
    logger.info(
        f"第一阶段开始: {len(train_set)} 个训练视频, {num_classes} 类, 池化 {cfg.pooling}, "
        f"表示维度 {feature_dim}, lr={cfg.stage1_lr}, {cfg.stage1_epochs} 个 epoch"
    )

    for epoch in range(1, cfg.stage1_epochs + 1):
        loss_sum = 0.0
        for group in _update_groups(len(train_set), cfg, rng):
            micro_grads = []
            for batch in group:
                mask = dropout_mask((len(batch), feature_dim), cfg.dropout, rng) if cfg.dropout > 0 else None
                loss, grads, _ = _classifier_grads(train_repr[batch], targets[batch], params, mask)
                loss_sum += loss * len(batch)
                micro_grads.append(grads)
            params, state = _step(params, micro_grads, state, cfg.stage1_lr, cfg)

        current = model.with_params(params["W"], params["b"])
        val_acc = float("nan")
        if val_repr is not None:
            val_acc = accuracy(classifier_forward_batch(val_repr, current), val_set)
        metrics = EpochMetrics(epoch=epoch, stage=1, train_loss=loss_sum / len(train_set), val_acc=val_acc)
        result.history.append(metrics)
        _log_epoch(metrics, cfg.stage1_epochs)
        if on_epoch is not None:
            on_epoch(metrics)

        selectable = cfg.keep_best and val_repr is not None
        if not selectable or val_acc > best_acc:
            best_acc = val_acc if selectable else best_acc
            result.model, result.best_epoch, result.best_val_acc = current, epoch, val_acc
            result.adam_state = state

    return result


def _stage2_params(cb: Codebook, model: ClassifierModel, tie_anchors: bool) -> Tensors:
    params: Tensors = {"W": np.array(model.W), "b": np.array(model.b)}
    if tie_anchors:
        params["anchors"] = np.array(cb.residual_anchors)
    else:
        params["residual_anchors"] = np.array(cb.residual_anchors)
        params["assign_anchors"] = np.array(cb.assign_anchors)
    return params


def _unpack_stage2(params: Tensors, cb: Codebook, model: ClassifierModel) -> tuple[Codebook, ClassifierModel]:
    if "anchors" in params:
        new_cb = cb.with_anchors(params["anchors"], params["anchors"])
    else:
        new_cb = cb.with_anchors(params["residual_anchors"], params["assign_anchors"])
    return new_cb, model.with_params(params["W"], params["b"])


def _stage2_micro_batch(
    examples: Sequence[TrainingExample],
    targets: np.ndarray,
    params: Tensors,
    cb: Codebook,
    dropout: float,
    rng: np.random.Generator,
) -> tuple[float, Tensors]:
    """一个 micro-batch 的损失和全部参数（W、b、锚点）的梯度。"""
    raws = [actionvlad_forward(ex.features, cb) for ex in examples]
    representations = np.stack([flatten_l2_normalize(intra_normalize(raw)).values for raw in raws])
    mask = dropout_mask(representations.shape, dropout, rng) if dropout > 0 else None
    loss, grads, grad_repr = _classifier_grads(representations, targets, params, mask)

    grad_c = np.zeros_like(cb.residual_anchors)
    grad_a = np.zeros_like(cb.assign_anchors)
    for example, raw, upstream in zip(examples, raws, grad_repr, strict=True):
        anchor_grads = actionvlad_backward(example.features, cb, upstream, raw=raw)
        grad_c += anchor_grads.residual_anchors
        grad_a += anchor_grads.assign_anchors

    if "anchors" in params:
        grads["anchors"] = grad_c + grad_a
    else:
        grads["residual_anchors"] = grad_c
        grads["assign_anchors"] = grad_a
    return loss, grads


def _evaluate_vlad(
    examples: Sequence[TrainingExample], cb: Codebook, model: ClassifierModel, workers: int
) -> float:
    if not examples:
        return float("nan")
    representations = pool_videos([ex.features for ex in examples], "vlad", cb, workers=workers)
    return accuracy(classifier_forward_batch(representations, model), examples)


def train_stage2(
    train_set: Sequence[TrainingExample],
    cb: Codebook,
    model: ClassifierModel,
    cfg: TrainConfig,
    val_set: Sequence[TrainingExample] = (),
    workers: int = 1,
    on_epoch: EpochCallback | None = None,
) -> TrainingResult:
    """
    分类器和锚点联合微调，只对 vlad 池化有意义。

    tie_anchors 时两套锚点当成同一个参数（梯度相加），否则分别更新。
    keep_best 时传进来的模型也算一个候选（epoch 0），所以验证准确率不会比第一阶段差。
    """
    if not train_set:
        raise EmptyInputError("训练集为空")
    if cfg.pooling != "vlad":
        raise InvalidParameterError(f"第二阶段只训练 vlad 池化的锚点，当前池化是 '{cfg.pooling}'")
    if model.feature_dim != representation_dim("vlad", cb.D, cb.K):
        raise ShapeMismatchError(f"分类器输入维度 {model.feature_dim} 和码本的 K·D={cb.K * cb.D} 不一致")
    targets = _targets(train_set, model.C)

    params = _stage2_params(cb, model, cfg.tie_anchors)
    state = AdamState.zeros_like(params)
    rng = np.random.default_rng([cfg.seed, 2])
    current_cb, current_model = _unpack_stage2(params, cb, model)

    result = TrainingResult(model=current_model, codebook=current_cb, stage=2, adam_state=state)
    selectable = cfg.keep_best and bool(val_set)
    best_acc = _evaluate_vlad(val_set, current_cb, current_model, workers) if selectable else -np.inf
    result.best_val_acc = best_acc if selectable else float("nan")
    logger.info(
        f"第二阶段开始: {len(train_set)} 个训练视频, K={cb.K}, lr={cfg.stage2_lr}, "
        f"{cfg.stage2_epochs} 个 epoch, 锚点{'绑定' if cfg.tie_anchors else '解耦'}"
    )

    for epoch in range(1, cfg.stage2_epochs + 1):
        loss_sum = 0.0
        for group in _update_groups(len(train_set), cfg, rng):
            micro_grads = []
            for batch in group:
                batch_examples = [train_set[i] for i in batch]
                loss, grads = _stage2_micro_batch(
                    batch_examples, targets[batch], params, current_cb, cfg.dropout, rng
                )
                loss_sum += loss * len(batch)
                micro_grads.append(grads)
            params, state = _step(params, micro_grads, state, cfg.stage2_lr, cfg)
            current_cb, current_model = _unpack_stage2(params, cb, model)

        val_acc = _evaluate_vlad(val_set, current_cb, current_model, workers)
        metrics = EpochMetrics(epoch=epoch, stage=2, train_loss=loss_sum / len(train_set), val_acc=val_acc)
        result.history.append(metrics)
        _log_epoch(metrics, cfg.stage2_epochs)
        if on_epoch is not None:
            on_epoch(metrics)

        if not selectable or val_acc > best_acc:
            best_acc = val_acc if selectable else best_acc
            result.model, result.codebook = current_model, current_cb
            result.best_epoch, result.best_val_acc = epoch, val_acc
            result.adam_state = state

    return result
