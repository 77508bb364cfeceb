# src/training/optimizer.py
"""
Adam、梯度全局范数裁剪、micro-batch 梯度平均。

参数和梯度都用 {名字: ndarray} 的字典表示；函数都不改输入，返回新的字典。
一次更新的固定顺序是：先平均各 micro-batch 的梯度，再裁剪，最后 Adam 一步。
"""

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from src.common.errors import EmptyInputError, InvalidParameterError, ShapeMismatchError

Tensors = dict[str, np.ndarray]


@dataclass
class AdamState:
    """每个参数张量一份一阶 / 二阶矩，t 是已经走过的步数。"""

    m: Tensors = field(default_factory=dict)
    v: Tensors = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray]) -> "AdamState":
        return cls(
            m={name: np.zeros_like(value, dtype=np.float64) for name, value in params.items()},
            v={name: np.zeros_like(value, dtype=np.float64) for name, value in params.items()},
            t=0,
        )


def _check_same_layout(reference: Mapping[str, np.ndarray], other: Mapping[str, np.ndarray], what: str) -> None:
    if set(reference) != set(other):
        raise ShapeMismatchError(f"{what} 的张量名不一致: {sorted(reference)} vs {sorted(other)}")
    for name, value in reference.items():
        if np.shape(value) != np.shape(other[name]):
            raise ShapeMismatchError(f"{what} 中 '{name}' 的形状不一致: {np.shape(value)} vs {np.shape(other[name])}")


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g))) for g in grads.values())))


def clip_gradients(grads: Mapping[str, np.ndarray], max_norm: float) -> Tensors:
    """全局 L2 范数超过 max_norm 时整体按 max_norm/范数 缩放，否则原样返回。"""
    if max_norm <= 0:
        raise InvalidParameterError(f"max_norm 必须大于 0，收到 {max_norm}")
    norm = global_norm(grads)
    if norm <= max_norm:
        return {name: np.array(g, dtype=np.float64) for name, g in grads.items()}
    scale = max_norm / norm
    return {name: np.asarray(g, dtype=np.float64) * scale for name, g in grads.items()}


def accumulate_gradients(micro_grads: Sequence[Mapping[str, np.ndarray]]) -> Tensors:
    """各 micro-batch 梯度的逐元素平均。"""
    if not micro_grads:
        raise EmptyInputError("没有可平均的梯度")
    first = micro_grads[0]
    for grads in micro_grads[1:]:
        _check_same_layout(first, grads, "micro-batch 梯度")
    count = len(micro_grads)
    return {name: sum(np.asarray(g[name], dtype=np.float64) for g in micro_grads) / count for name in first}


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    epsilon: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
) -> tuple[Tensors, AdamState]:
    """带偏差修正的 Adam：p ← p − lr · m̂ / (√v̂ + ε)。"""
    _check_same_layout(params, grads, "参数和梯度")
    if state.t > 0:
        _check_same_layout(params, state.m, "参数和 Adam 状态")
    t = state.t + 1
    bias1 = 1.0 - beta1**t
    bias2 = 1.0 - beta2**t

    new_params: Tensors = {}
    new_m: Tensors = {}
    new_v: Tensors = {}
    for name, value in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        m = state.m.get(name, np.zeros_like(g))
        v = state.v.get(name, np.zeros_like(g))
        new_m[name] = beta1 * m + (1.0 - beta1) * g
        new_v[name] = beta2 * v + (1.0 - beta2) * g * g
        m_hat = new_m[name] / bias1
        v_hat = new_v[name] / bias2
        new_params[name] = np.asarray(value, dtype=np.float64) - lr * m_hat / (np.sqrt(v_hat) + epsilon)
    return new_params, AdamState(m=new_m, v=new_v, t=t)


def optimizer_update(
    params: Mapping[str, np.ndarray],
    micro_grads: Sequence[Mapping[str, np.ndarray]],
    state: AdamState,
    lr: float,
    clip_norm: float,
    epsilon: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
) -> tuple[Tensors, AdamState, float]:
    """平均 → 裁剪 → Adam。额外返回裁剪前的全局范数，方便记日志。"""
    averaged = accumulate_gradients(micro_grads)
    norm = global_norm(averaged)
    clipped = clip_gradients(averaged, clip_norm)
    new_params, new_state = adam_step(params, clipped, state, lr, epsilon, beta1, beta2)
    return new_params, new_state, norm
