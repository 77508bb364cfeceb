# src/aggregation/actionvlad_layer.py
"""
ActionVLAD 层的前向和反向。

    V[j, k] = Σ_t Σ_i p_k(x_it) · (x_it[j] − c_k[j])
    p_k(x)  = softmax_k(−α‖x − a_k‖²)

之后逐列 intra-normalize、按 k 顺序拼接、整体 L2 归一化。
所有函数都是纯函数，码本只读，可以跨视频并发调用。
"""

from dataclasses import dataclass

import numpy as np

from src.codebook.codebook import Codebook
from src.common.errors import ShapeMismatchError
from src.common.numerics import (
    EPS_NORM,
    ensure_finite,
    l2_normalize,
    l2_normalize_backward,
    softmax,
    squared_distances,
)

from .feature_map import FeatureMap, RawVlad, VladDescriptor


def _check_dim(D: int, cb: Codebook) -> None:  # noqa: N803
    if D != cb.D:
        raise ShapeMismatchError(f"描述子维度 {D} 和码本维度 {cb.D} 不一致")


def soft_assign_batch(X: np.ndarray, cb: Codebook) -> np.ndarray:  # noqa: N803
    """每一行描述子对 K 个分配锚点的软分配，返回 (M, K)，每行和为 1。"""
    X = np.asarray(X, dtype=np.float64)  # noqa: N806
    if X.ndim != 2:
        raise ShapeMismatchError(f"soft_assign_batch 需要 (M, D) 二维输入，收到 {X.ndim} 维")
    _check_dim(X.shape[1], cb)
    ensure_finite(X, "描述子")
    if X.shape[0] == 0:
        return np.zeros((0, cb.K), dtype=np.float64)
    return softmax(-cb.alpha * squared_distances(X, cb.assign_anchors), axis=1)


def soft_assign(x: np.ndarray, cb: Codebook) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeMismatchError(f"soft_assign 需要一维描述子，收到 {x.ndim} 维")
    return soft_assign_batch(x[None, :], cb)[0]


def actionvlad_forward(f: FeatureMap, cb: Codebook) -> RawVlad:
    """
    按帧累加：V += X_tᵀ P_t − Cᵀ · diag(Σ_i P_t)。

    帧按 t 从小到大累加，同样的输入和精度下结果逐位可复现。
    """
    _check_dim(f.D, cb)
    residual_t = cb.residual_anchors.T
    V = np.zeros((cb.D, cb.K), dtype=np.float64)  # noqa: N806
    for t in range(f.T):
        frame = f.frame(t)
        if frame.shape[0] == 0:
            continue
        P = soft_assign_batch(frame, cb)  # noqa: N806
        V += frame.T @ P - residual_t * P.sum(axis=0)
    return RawVlad(V)


def intra_normalize(v: RawVlad) -> RawVlad:
    """逐列 L2 归一化；范数 < EPS_NORM 的列直接置零。"""
    norms = v.column_norms()
    nonzero = norms >= EPS_NORM
    safe_norms = np.where(nonzero, norms, 1.0)
    return RawVlad(np.where(nonzero, v.matrix / safe_norms, 0.0))


def flatten_l2_normalize(v: RawVlad) -> VladDescriptor:
    """按 k 顺序把列拼起来，再整体 L2 归一化；全零输入得到全零输出。"""
    stacked = v.matrix.T.reshape(-1)
    normalized, _ = l2_normalize(stacked)
    return VladDescriptor(normalized, K=v.K, D=v.D)


def actionvlad_encode(f: FeatureMap, cb: Codebook) -> VladDescriptor:
    return flatten_l2_normalize(intra_normalize(actionvlad_forward(f, cb)))


def hard_vlad(f: FeatureMap, anchors: np.ndarray) -> RawVlad:
    """经典硬分配 VLAD：每个描述子只累加到最近的锚点（并列时取下标最小的）。"""
    anchors = np.asarray(anchors, dtype=np.float64)
    if anchors.ndim != 2 or anchors.shape[1] != f.D:
        raise ShapeMismatchError(f"锚点形状 {anchors.shape} 和描述子维度 {f.D} 不匹配")
    X = f.descriptors()  # noqa: N806
    V = np.zeros((f.D, anchors.shape[0]), dtype=np.float64)  # noqa: N806
    if X.shape[0] == 0:
        return RawVlad(V)
    nearest = np.argmin(squared_distances(X, anchors), axis=1)
    for k in range(anchors.shape[0]):
        members = X[nearest == k]
        if members.shape[0]:
            V[:, k] = (members - anchors[k]).sum(axis=0)
    return RawVlad(V)


@dataclass(frozen=True)
class ActionVladGradients:
    """对输入描述子 (T, N, D)、残差锚点 (K, D)、分配锚点 (K, D) 的梯度。"""

    features: np.ndarray
    residual_anchors: np.ndarray
    assign_anchors: np.ndarray


def intra_normalize_backward(raw: RawVlad, grad_normalized: np.ndarray) -> np.ndarray:
    """逐列 w = u/‖u‖ 的反向，零范数列梯度为零。grad_normalized 形状 (D, K)。"""
    norms = raw.column_norms()
    nonzero = norms >= EPS_NORM
    safe_norms = np.where(nonzero, norms, 1.0)
    W = raw.matrix / safe_norms  # noqa: N806
    projection = np.sum(W * grad_normalized, axis=0)
    grad_raw = (grad_normalized - W * projection) / safe_norms
    return np.where(nonzero, grad_raw, 0.0)


def descriptor_backward(raw: RawVlad, upstream: np.ndarray) -> np.ndarray:
    """从最终 VladDescriptor 的梯度一路反推到未归一化的 V，返回 (D, K)。"""
    upstream = np.asarray(upstream, dtype=np.float64).reshape(-1)
    if upstream.shape[0] != raw.K * raw.D:
        raise ShapeMismatchError(f"上游梯度长度应为 K·D={raw.K * raw.D}，收到 {upstream.shape[0]}")
    intra = intra_normalize(raw)
    stacked = intra.matrix.T.reshape(-1)
    normalized, norm = l2_normalize(stacked)
    grad_stacked = l2_normalize_backward(normalized, norm, upstream)
    return intra_normalize_backward(raw, grad_stacked.reshape(raw.K, raw.D).T)


def actionvlad_backward(
    f: FeatureMap,
    cb: Codebook,
    upstream: np.ndarray,
    raw: RawVlad | None = None,
) -> ActionVladGradients:
    """
    整条链（累加 → intra-normalize → 拼接+L2）的解析梯度。
    raw 是同一 (f, cb) 的前向结果，调用方已经算过就传进来，否则在这里重算。

    记 G = ∂L/∂V (D×K)，Q[s,k] = G[:,k]·(x_s − c_k)，R = P ⊙ (Q − Σ_k P⊙Q)：
      ∂L/∂c_k = −G[:,k] · Σ_s P[s,k]
      ∂L/∂x_s = Σ_k P[s,k] G[:,k] − 2α (x_s Σ_k R[s,k] − Σ_k R[s,k] a_k)
      ∂L/∂a_k = 2α (Σ_s R[s,k] x_s − a_k Σ_s R[s,k])
    """
    _check_dim(f.D, cb)
    if raw is None:
        raw = actionvlad_forward(f, cb)
    G = descriptor_backward(raw, upstream)  # noqa: N806

    X = f.descriptors()  # noqa: N806
    C, A = cb.residual_anchors, cb.assign_anchors  # noqa: N806
    P = soft_assign_batch(X, cb)  # noqa: N806

    Q = X @ G - np.sum(C * G.T, axis=1)  # noqa: N806
    R = P * (Q - np.sum(P * Q, axis=1, keepdims=True))  # noqa: N806
    two_alpha = 2.0 * cb.alpha

    grad_x = P @ G.T - two_alpha * (X * R.sum(axis=1, keepdims=True) - R @ A)
    grad_c = -(G * P.sum(axis=0)).T
    grad_a = two_alpha * (R.T @ X - A * R.sum(axis=0)[:, None])
    return ActionVladGradients(
        features=grad_x.reshape(f.T, f.N, f.D),
        residual_anchors=grad_c,
        assign_anchors=grad_a,
    )
