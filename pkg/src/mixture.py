"""
有限数据集上的 OU 桥混合：闭式图混合、漂移、反向混合、得分与概率流

先验固定为 N(0, I)（邻接通道只在上三角自由坐标上取高斯），
因此 G_t 在给定终点 g 时的边缘分布为 N(a_t·g, total_var·I)。
批量接口在 (B, n, F) / (B, n, n) 的数组上工作，供采样器直接调用；
单图接口是它们在 B=1 时的封装。
"""
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from bridge import (BridgeParams, GraphBridge, bridge_coefficients, regularizer_weight, uv,
                    uv_from_start)
from models import Dataset, GraphState, MixturePrediction
from utils import from_free, to_free

WEIGHT_FLOOR = 1e-300
DRIFT_EPS = 1e-6

Force = Callable[[GraphState, float], GraphState]


@dataclass(frozen=True)
class EndpointMarginal:
    """p(G_t | G_T = g) = N(a·g, total_var·I)，其中 G_0 ~ N(0, I)"""
    a: float
    b: float
    total_var: float


def endpoint_marginal(params: BridgeParams, t: float) -> EndpointMarginal:
    b, a, s = bridge_coefficients(params, t)
    return EndpointMarginal(a=a, b=b, total_var=b * b + s)


def _check_open_end(params: BridgeParams, t: float, name: str) -> None:
    if not (0.0 <= t < params.T):
        raise ValueError(f"{name} 要求 0 <= t < T，当前 t={t}")


# ---------------------------------------------------------------------------
# 批量内部实现
# ---------------------------------------------------------------------------

def mixture_weights(bridge: GraphBridge, t: float, X: np.ndarray, A_free: np.ndarray,
                    gX: np.ndarray, gA: np.ndarray) -> np.ndarray:
    """
    每条轨迹对数据集各图的后验权重
    :param X: (B, n, F) 当前节点特征
    :param A_free: (B, d) 当前邻接的自由坐标
    :param gX: (M, n, F) 数据集同节点数分组
    :param gA: (M, d)
    :return: (B, M)，行和为 1
    """
    B, M = X.shape[0], gX.shape[0]
    log_w = np.zeros((B, M))
    channels = [(bridge.a, A_free, gA)]
    if X.shape[-1] > 0:
        channels.append((bridge.x, X.reshape(B, -1), gX.reshape(M, -1)))
    for params, cur, ref in channels:
        m = endpoint_marginal(params, t)
        # ‖x - a g‖² = ‖x‖² - 2a x·g + a²‖g‖²
        sq = (np.sum(cur ** 2, axis=1)[:, None]
              - 2.0 * m.a * (cur @ ref.T)
              + (m.a ** 2) * np.sum(ref ** 2, axis=1)[None, :])
        log_w -= np.maximum(sq, 0.0) / (2.0 * m.total_var)
    w = np.exp(log_w - logsumexp(log_w, axis=1, keepdims=True))
    w[w < WEIGHT_FLOOR] = 0.0
    return w


def batch_mixture(bridge: GraphBridge, t: float, X: np.ndarray, A: np.ndarray,
                  data: Dataset) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """返回 (D_X, D_A, weights)，D_A 为对称满矩阵"""
    _check_open_end(bridge.a, t, "exact_graph_mixture")
    n = A.shape[-1]
    gX, gA = data.group_arrays(n)
    w = mixture_weights(bridge, t, X, to_free(A), gX, gA)
    DX = np.einsum('bm,mnf->bnf', w, gX)
    DA = from_free(w @ gA, n)
    return DX, DA, w


def _channel_drift(params: BridgeParams, t: float, G: np.ndarray, D: np.ndarray) -> np.ndarray:
    """η = α σ² G + (σ²/v)(D/u - G)"""
    if t >= params.T - DRIFT_EPS:
        raise ValueError(f"漂移在 t={t} 处无定义（需 t < T - {DRIFT_EPS}）")
    u, v = uv(params, t)
    sigma_sq = params.schedule.sigma_sq(t)
    return params.alpha * sigma_sq * G + (sigma_sq / v) * (D / u - G)


def batch_drift(bridge: GraphBridge, t: float, X: np.ndarray, A: np.ndarray,
                DX: np.ndarray, DA: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    return _channel_drift(bridge.x, t, X, DX), _channel_drift(bridge.a, t, A, DA)


def _channel_reverse(params: BridgeParams, t: float, G: np.ndarray, D: np.ndarray) -> np.ndarray:
    if t == 0.0:
        return G.copy()
    m = endpoint_marginal(params, t)
    return (m.b / m.total_var) * (G - m.a * D)


def _channel_score(params: BridgeParams, t: float, G: np.ndarray, D: np.ndarray) -> np.ndarray:
    """前向混合项 + 反向混合项；t=0 时边缘分布即先验，得分为 -G"""
    if not (0.0 <= t < params.T):
        raise ValueError(f"得分要求 0 <= t < T，当前 t={t}")
    if t == 0.0:
        return -G
    u, v = uv(params, t)
    u0, v0 = uv_from_start(params, t)
    D_rev = _channel_reverse(params, t, G, D)
    return (D / u - G) / v + (u0 * D_rev - G) / (u0 * u0 * v0)


def batch_score(bridge: GraphBridge, t: float, X: np.ndarray, A: np.ndarray,
                DX: np.ndarray, DA: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    return _channel_score(bridge.x, t, X, DX), _channel_score(bridge.a, t, A, DA)


def batch_prob_flow(bridge: GraphBridge, t: float, X: np.ndarray, A: np.ndarray,
                    DX: np.ndarray, DA: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    eX, eA = batch_drift(bridge, t, X, A, DX, DA)
    sX, sA = batch_score(bridge, t, X, A, DX, DA)
    return (eX - 0.5 * bridge.x.schedule.sigma_sq(t) * sX,
            eA - 0.5 * bridge.a.schedule.sigma_sq(t) * sA)


# ---------------------------------------------------------------------------
# 单图接口
# ---------------------------------------------------------------------------

def exact_graph_mixture(G_t: GraphState, t: float, data: Dataset, bridge: GraphBridge) -> MixturePrediction:
    DX, DA, w = batch_mixture(bridge, t, G_t.X[None], G_t.A[None], data)
    return MixturePrediction(DX[0], DA[0], w[0])


def mixture_drift(G_t: GraphState, t: float, D: MixturePrediction,
                  bridge: GraphBridge) -> Tuple[np.ndarray, np.ndarray]:
    return batch_drift(bridge, t, G_t.X, G_t.A, D.D_X, D.D_A)


def reverse_graph_mixture(G_t: GraphState, t: float, data: Dataset, bridge: GraphBridge) -> GraphState:
    """E[G_0 | G_t]"""
    if t == 0.0:
        return GraphState(G_t.X.copy(), G_t.A.copy())
    D = exact_graph_mixture(G_t, t, data, bridge)
    return GraphState(_channel_reverse(bridge.x, t, G_t.X, D.D_X),
                      _channel_reverse(bridge.a, t, G_t.A, D.D_A))


def exact_score(G_t: GraphState, t: float, data: Dataset, bridge: GraphBridge) -> GraphState:
    """∇ log p_t(G_t)，邻接通道对自由坐标求导后镜像"""
    if not (0.0 < t < bridge.T):
        raise ValueError(f"得分要求 0 < t < T，当前 t={t}")
    D = exact_graph_mixture(G_t, t, data, bridge)
    sX, sA = batch_score(bridge, t, G_t.X, G_t.A, D.D_X, D.D_A)
    return GraphState(sX, sA)


def prob_flow_rhs(G_t: GraphState, t: float, data: Dataset, bridge: GraphBridge) -> GraphState:
    """概率流 ODE 右端：漂移 - ½σ²·得分"""
    if not (0.0 < t < bridge.T):
        raise ValueError(f"概率流要求 0 < t < T，当前 t={t}")
    D = exact_graph_mixture(G_t, t, data, bridge)
    fX, fA = batch_prob_flow(bridge, t, G_t.X, G_t.A, D.D_X, D.D_A)
    return GraphState(fX, fA)


def regularized_mixture(D: MixturePrediction, G_t: GraphState, t: float, force: Optional[Force],
                        bridge: GraphBridge) -> MixturePrediction:
    """
    D_R = D + (u_t v_t / σ_t)·f(G_t, t)，外力的影响在 t→T 时消失
    :param force: 返回与 G_t 同形状状态的函数，None 视为零外力
    """
    if force is None:
        return D
    f = force(G_t, t)
    if not (np.all(np.isfinite(f.X)) and np.all(np.isfinite(f.A))):
        raise ValueError("外力返回了非有限值")
    cx = regularizer_weight(bridge.x, t)
    ca = regularizer_weight(bridge.a, t)
    return MixturePrediction(D.D_X + cx * f.X, D.D_A + ca * f.A, D.weights)
