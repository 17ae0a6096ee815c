"""
OU 过程及其桥过程的闭式标量函数与高斯分布

dG = α σ_t² G dt + σ_t dW，σ_t² 为线性递减调度。
所有方差都是各向同性的（标量乘单位阵）；|α·β_T| 很小时走布朗桥分支。
"""
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Tuple

import numpy as np

from models import GraphState
from utils import symmetric_noise

BROWNIAN_TOL = 1e-6


@dataclass(frozen=True)
class NoiseSchedule:
    """σ²(t) = (1 - t/T)·σ0² + (t/T)·σ1²"""
    sigma0_sq: float = 1.0
    sigma1_sq: float = 0.04
    T: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.sigma1_sq <= self.sigma0_sq <= 1.0):
            raise ValueError(
                f"噪声调度需满足 0 < sigma1_sq <= sigma0_sq <= 1，当前为 "
                f"sigma0_sq={self.sigma0_sq}, sigma1_sq={self.sigma1_sq}")
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError(f"终止时间 T 必须为正数: {self.T}")

    def sigma_sq(self, t: float) -> float:
        s = t / self.T
        return (1.0 - s) * self.sigma0_sq + s * self.sigma1_sq

    def sigma(self, t: float) -> float:
        return math.sqrt(self.sigma_sq(t))

    def integral(self, a: float, b: float) -> float:
        """∫_a^b σ²(τ) dτ，直接由区间端点计算，避免 β_b - β_a 的相消误差"""
        return (b - a) * (self.sigma0_sq + (self.sigma1_sq - self.sigma0_sq) * (a + b) / (2.0 * self.T))


@dataclass(frozen=True)
class BridgeParams:
    """单个通道的 OU 桥参数 (α, 调度)"""
    alpha: float = -0.5
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)

    def __post_init__(self):
        if not math.isfinite(self.alpha):
            raise ValueError(f"alpha 必须有限: {self.alpha}")

    @property
    def T(self) -> float:
        return self.schedule.T

    @property
    def is_brownian(self) -> bool:
        return abs(self.alpha * self.schedule.integral(0.0, self.T)) < BROWNIAN_TOL


@dataclass(frozen=True)
class GraphBridge:
    """X 与 A 两个通道各自的桥参数"""
    x: BridgeParams = field(default_factory=BridgeParams)
    a: BridgeParams = field(default_factory=BridgeParams)

    def __post_init__(self):
        if self.x.T != self.a.T:
            raise ValueError("两个通道的终止时间 T 必须相同")

    @property
    def T(self) -> float:
        return self.x.T

    @classmethod
    def from_config(cls, cfg: Dict[str, Any]) -> "GraphBridge":
        T = cfg.get("T", 1.0)
        return cls(
            x=BridgeParams(cfg["alpha_x"], NoiseSchedule(cfg["sigma0_sq_x"], cfg["sigma1_sq_x"], T)),
            a=BridgeParams(cfg["alpha_a"], NoiseSchedule(cfg["sigma0_sq_a"], cfg["sigma1_sq_a"], T)),
        )

    def to_config(self) -> Dict[str, float]:
        return {
            "alpha_x": self.x.alpha, "alpha_a": self.a.alpha,
            "sigma0_sq_x": self.x.schedule.sigma0_sq, "sigma0_sq_a": self.a.schedule.sigma0_sq,
            "sigma1_sq_x": self.x.schedule.sigma1_sq, "sigma1_sq_a": self.a.schedule.sigma1_sq,
            "T": self.T,
        }


@dataclass
class GaussianLaw:
    mean: np.ndarray
    var: float


def _check_time(params: BridgeParams, t: float) -> None:
    if not (0.0 <= t <= params.T):
        raise ValueError(f"时间 t={t} 超出 [0, {params.T}]")


def beta(params: BridgeParams, t: float) -> float:
    """β_t = ∫_0^t σ²"""
    _check_time(params, t)
    return params.schedule.integral(0.0, t)


def _transition_scalars(params: BridgeParams, dbeta: float) -> Tuple[float, float]:
    """时长为 dbeta（β 尺度）的转移：均值系数 u 与方差 u²v"""
    if params.is_brownian:
        return 1.0, dbeta
    a = params.alpha
    return math.exp(a * dbeta), math.expm1(2.0 * a * dbeta) / (2.0 * a)


def uv(params: BridgeParams, t: float) -> Tuple[float, float]:
    """u_t = exp(α∫_t^T σ²)，v_t = (1 - u_t^{-2}) / 2α"""
    _check_time(params, t)
    rest = params.schedule.integral(t, params.T)
    if params.is_brownian:
        return 1.0, rest
    a = params.alpha
    return math.exp(a * rest), -math.expm1(-2.0 * a * rest) / (2.0 * a)


def uv_from_start(params: BridgeParams, t: float) -> Tuple[float, float]:
    """从 0 到 t 的转移标量 (u_{t|0}, v_{t|0})，即反向时间的 ū_{T-t}, v̄_{T-t}"""
    _check_time(params, t)
    elapsed = params.schedule.integral(0.0, t)
    if params.is_brownian:
        return 1.0, elapsed
    a = params.alpha
    return math.exp(a * elapsed), -math.expm1(-2.0 * a * elapsed) / (2.0 * a)


def transition(params: BridgeParams, a: float, b: float, G_a: np.ndarray) -> GaussianLaw:
    """参考 OU 过程从 a 到 b 的转移分布"""
    _check_time(params, a)
    _check_time(params, b)
    if a > b:
        raise ValueError(f"转移要求 a <= b，当前 a={a}, b={b}")
    u, var = _transition_scalars(params, params.schedule.integral(a, b))
    return GaussianLaw(u * np.asarray(G_a, dtype=float), var)


def bridge_coefficients(params: BridgeParams, t: float) -> Tuple[float, float, float]:
    """桥后验 p(G_t | G_0, G_T) 的 (G_0 系数, G_T 系数, 方差)"""
    _check_time(params, t)
    sched = params.schedule
    elapsed = sched.integral(0.0, t)
    rest = sched.integral(t, params.T)
    total = sched.integral(0.0, params.T)
    if params.is_brownian:
        return rest / total, elapsed / total, elapsed * rest / total
    a = params.alpha
    s_rest = math.sinh(a * rest)
    s_elapsed = math.sinh(a * elapsed)
    s_total = math.sinh(a * total)
    return s_rest / s_total, s_elapsed / s_total, s_rest * s_elapsed / (a * s_total)


def bridge_posterior(params: BridgeParams, t: float, G0: np.ndarray, GT: np.ndarray) -> GaussianLaw:
    G0 = np.asarray(G0, dtype=float)
    GT = np.asarray(GT, dtype=float)
    if G0.shape != GT.shape:
        raise ValueError(f"端点形状不一致: {G0.shape} vs {GT.shape}")
    c0, c1, var = bridge_coefficients(params, t)
    return GaussianLaw(c0 * G0 + c1 * GT, var)


def sample_interpolant(params: BridgeParams, t: float, G0: np.ndarray, GT: np.ndarray,
                       rng: np.random.Generator, symmetric: bool = False) -> np.ndarray:
    """
    随机插值：从桥后验中采样 G_t
    :param symmetric: 邻接通道时为 True，噪声只在上三角采样后镜像，对角线为 0
    """
    law = bridge_posterior(params, t, G0, GT)
    if law.var == 0.0:
        return law.mean
    if symmetric:
        noise = symmetric_noise(rng, law.mean.shape[:-2], law.mean.shape[-1])
    else:
        noise = rng.standard_normal(law.mean.shape)
    return law.mean + math.sqrt(law.var) * noise


def loss_weight(params: BridgeParams, t: float) -> float:
    """γ_t = σ_t / (u_t v_t)"""
    u, v = uv(params, t)
    if v <= 0.0:
        raise ValueError(f"t={t} 处 v_t=0，γ_t 无定义")
    return params.schedule.sigma(t) / (u * v)


def regularizer_weight(params: BridgeParams, t: float) -> float:
    """正则化混合中外力的系数 u_t v_t / σ_t，t→T 时趋于 0"""
    u, v = uv(params, t)
    return u * v / params.schedule.sigma(t)


def sample_prior(n: int, num_features: int, rng: np.random.Generator) -> GraphState:
    """先验 Γ = N(0, I)，邻接通道对称化"""
    return GraphState(rng.standard_normal((n, num_features)), symmetric_noise(rng, (), n))


def sample_graph_interpolant(bridge: GraphBridge, t: float, G0: GraphState, GT: GraphState,
                             rng: np.random.Generator) -> GraphState:
    X = sample_interpolant(bridge.x, t, G0.X, GT.X, rng)
    A = sample_interpolant(bridge.a, t, G0.A, GT.A, rng, symmetric=True)
    return GraphState(X, A)
