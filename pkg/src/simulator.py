import math
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy.integrate import solve_ivp

from bridge import GraphBridge
from mixture import Force, batch_drift, batch_mixture, batch_prob_flow, batch_score, regularized_mixture
from models import Dataset, FeatureKind, GraphState, LabeledGraph, MixturePrediction
from predictor import MixtureNet
from utils import free_sq_norm, from_free, mean_abs_free, sq_norm, symmetric_noise, to_free

logger = logging.getLogger(__name__)

SCORE_EPS = 1e-6


class PredictorKind(str, Enum):
    EULER_MARUYAMA = "euler_maruyama"


@dataclass
class SamplerConfig:
    """采样器参数"""
    steps: int = 1000                 # 预测步数 K
    predictor: PredictorKind = PredictorKind.EULER_MARUYAMA
    corrector_steps: int = 0          # 每个预测步之后的 Langevin 校正步数 M
    snr: float = 0.1                  # 校正步的信噪比 r
    early_stop_fraction: float = 1.0  # 只跑 round(f·K) 步，返回图混合预测的量化结果
    ode_eps: float = 1e-3             # 概率流 ODE 在 T - ode_eps 处停止
    chunk_size: int = 64              # 每个随机流负责的轨迹数

    def __post_init__(self):
        self.predictor = PredictorKind(self.predictor)
        if self.steps < 1:
            raise ValueError(f"步数 K 必须至少为 1: {self.steps}")
        if self.corrector_steps < 0:
            raise ValueError(f"校正步数 M 不能为负: {self.corrector_steps}")
        if self.snr <= 0:
            raise ValueError(f"snr 必须为正数: {self.snr}")
        if not (0.0 < self.early_stop_fraction <= 1.0):
            raise ValueError(f"early_stop_fraction 必须在 (0, 1] 内: {self.early_stop_fraction}")
        if self.chunk_size < 1:
            raise ValueError("chunk_size 必须至少为 1")

    def dt(self, T: float) -> float:
        dt = T / self.steps
        if dt < 1e-6:
            raise ValueError(f"时间步长 dt={dt} 小于 1e-6")
        return dt

    @property
    def active_steps(self) -> int:
        return max(1, int(round(self.early_stop_fraction * self.steps)))


@dataclass
class Trajectory:
    """一条轨迹：states[k] 为 t_k 时刻的状态，predictions[k] 为在 t_k 处的图混合预测"""
    times: List[float] = field(default_factory=list)
    states: List[GraphState] = field(default_factory=list)
    predictions: List[MixturePrediction] = field(default_factory=list)
    convergence_step: Optional[int] = None


# ---------------------------------------------------------------------------
# 图混合的来源：精确 oracle 或训练好的网络
# ---------------------------------------------------------------------------

class OracleSource:
    """由数据集闭式计算的图混合"""
    supports_score = True

    def __init__(self, data: Dataset, bridge: GraphBridge, force: Optional[Force] = None):
        self.data = data
        self.bridge = bridge
        self.force = force

    @property
    def feature_kind(self) -> FeatureKind:
        return self.data.feature_kind

    @property
    def num_features(self) -> int:
        return self.data.num_categories

    def predict(self, X: np.ndarray, A: np.ndarray, t: float) -> Tuple[np.ndarray, np.ndarray]:
        DX, DA, _ = batch_mixture(self.bridge, t, X, A, self.data)
        if self.force is not None:
            for b in range(X.shape[0]):
                reg = regularized_mixture(MixturePrediction(DX[b], DA[b]), GraphState(X[b], A[b]), t,
                                          self.force, self.bridge)
                DX[b], DA[b] = reg.D_X, reg.D_A
        return DX, DA

    def score(self, X: np.ndarray, A: np.ndarray, t: float) -> Tuple[np.ndarray, np.ndarray]:
        DX, DA, _ = batch_mixture(self.bridge, t, X, A, self.data)
        return batch_score(self.bridge, t, X, A, DX, DA)

    def prob_flow(self, X: np.ndarray, A: np.ndarray, t: float) -> Tuple[np.ndarray, np.ndarray]:
        DX, DA, _ = batch_mixture(self.bridge, t, X, A, self.data)
        return batch_prob_flow(self.bridge, t, X, A, DX, DA)


class LearnedSource:
    """由 MixtureNet 预测的图混合"""
    supports_score = False

    def __init__(self, net: MixtureNet):
        self.net = net
        self.bridge = net.bridge

    @property
    def feature_kind(self) -> FeatureKind:
        return self.net.feature_kind

    @property
    def num_features(self) -> int:
        return self.net.num_features

    def predict(self, X: np.ndarray, A: np.ndarray, t: float) -> Tuple[np.ndarray, np.ndarray]:
        return self.net.predict(X, A, t)


# ---------------------------------------------------------------------------
# 量化
# ---------------------------------------------------------------------------

def quantize_arrays(X: np.ndarray, A: np.ndarray, kind: FeatureKind) -> Tuple[np.ndarray, np.ndarray]:
    """批量或单图量化：邻接阈值化/取整，节点特征取 argmax one-hot"""
    kind = FeatureKind(kind)
    if kind is FeatureKind.BOND_TYPE:
        scale = kind.adjacency_scale
        qA = np.clip(np.rint(A * scale), 0, scale) / scale
    else:
        qA = (A > 0.5).astype(float)
    n = A.shape[-1]
    qA = qA * (1.0 - np.eye(n))
    qX = np.zeros_like(X)
    if X.shape[-1] > 0:
        np.put_along_axis(qX, np.argmax(X, axis=-1)[..., None], 1.0, axis=-1)
    return qX, qA


def quantize(G: GraphState, feature_kind: FeatureKind) -> GraphState:
    qX, qA = quantize_arrays(G.X, G.A, feature_kind)
    return GraphState(qX, qA)


def _same_graph(X1, A1, X2, A2) -> bool:
    return np.array_equal(X1, X2) and np.array_equal(A1, A2)


# ---------------------------------------------------------------------------
# 模拟
# ---------------------------------------------------------------------------

def langevin_correct(source: OracleSource, X: np.ndarray, A: np.ndarray, t: float, snr: float,
                     rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """
    一步 Langevin 校正：G += ε·s + sqrt(2ε)·w，ε = 2(r‖w‖/‖s‖)²
    每条轨迹、每个通道单独计算步长，得分范数为 0 时跳过该通道
    """
    sX, sA = source.score(X, A, t)
    B, n = A.shape[:2]
    wX = rng.standard_normal(X.shape)
    wA = symmetric_noise(rng, (B,), n)

    def step_size(w_sq, s_sq):
        eps = np.zeros(B)
        ok = s_sq > 0
        eps[ok] = 2.0 * snr ** 2 * w_sq[ok] / s_sq[ok]
        return eps

    if X.shape[-1] > 0:
        eX = step_size(sq_norm(wX), sq_norm(sX))[:, None, None]
        X = X + eX * sX + np.sqrt(2.0 * eX) * wX
    eA = step_size(free_sq_norm(wA), free_sq_norm(sA))[:, None, None]
    A = A + eA * sA + np.sqrt(2.0 * eA) * wA
    return X, A


def _check_finite(X: np.ndarray, A: np.ndarray, step: int, t: float) -> None:
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(A))):
        raise FloatingPointError(f"第 {step} 步 (t={t:.6f}) 出现 NaN/Inf，模拟中止")


def simulate_batch(source, cfg: SamplerConfig, n: int, batch: int, rng: np.random.Generator,
                   record: bool = False) -> Tuple[np.ndarray, np.ndarray, List[Trajectory]]:
    """
    从先验出发对 batch 条节点数为 n 的轨迹做 Euler-Maruyama 积分（可带 PC 校正）
    :return: (X, A, trajectories)，提前停止时返回最后一次的图混合预测而不是状态
    """
    bridge = source.bridge
    T = bridge.T
    dt = cfg.dt(T)
    F = source.num_features
    use_corrector = cfg.corrector_steps > 0
    if use_corrector and not source.supports_score:
        raise ValueError("PC 采样只支持 oracle 来源（需要精确得分）")

    X = rng.standard_normal((batch, n, F))
    A = symmetric_noise(rng, (batch,), n)
    trajectories = [Trajectory() for _ in range(batch)] if record else []
    if record:
        for b, traj in enumerate(trajectories):
            traj.times.append(0.0)
            traj.states.append(GraphState(X[b], A[b]))

    sqrt_dt = math.sqrt(dt)
    DX = DA = None
    for k in range(cfg.active_steps):
        t = k * dt
        DX, DA = source.predict(X, A, t)
        eX, eA = batch_drift(bridge, t, X, A, DX, DA)
        X = X + eX * dt + bridge.x.schedule.sigma(t) * sqrt_dt * rng.standard_normal(X.shape)
        A = A + eA * dt + bridge.a.schedule.sigma(t) * sqrt_dt * symmetric_noise(rng, (batch,), n)
        _check_finite(X, A, k, t)

        t_next = (k + 1) * dt
        if use_corrector and t_next < T - SCORE_EPS:
            for _ in range(cfg.corrector_steps):
                X, A = langevin_correct(source, X, A, t_next, cfg.snr, rng)
            _check_finite(X, A, k, t_next)

        if record:
            for b, traj in enumerate(trajectories):
                traj.predictions.append(MixturePrediction(DX[b].copy(), DA[b].copy()))
                traj.times.append(t_next)
                traj.states.append(GraphState(X[b], A[b]))
        if k % max(1, cfg.steps // 10) == 0:
            logger.debug(f"step {k}/{cfg.steps}, t={t:.4f}")

    if cfg.active_steps < cfg.steps:
        return DX, DA, trajectories
    return X, A, trajectories


def ode_batch(source: OracleSource, cfg: SamplerConfig, n: int, batch: int,
              rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """概率流 ODE：从先验样本积分到 T - ode_eps（RK45），整批作为一个系统求解"""
    if not source.supports_score:
        raise ValueError("概率流 ODE 只支持 oracle 来源")
    bridge = source.bridge
    F = source.num_features
    d = n * (n - 1) // 2
    X0 = rng.standard_normal((batch, n, F))
    A0 = symmetric_noise(rng, (batch,), n)
    size_x = batch * n * F

    def unpack(y):
        return y[:size_x].reshape(batch, n, F), from_free(y[size_x:].reshape(batch, d), n)

    def rhs(t, y):
        X, A = unpack(y)
        fX, fA = source.prob_flow(X, A, float(t))
        return np.concatenate([fX.reshape(-1), to_free(fA).reshape(-1)])

    y0 = np.concatenate([X0.reshape(-1), to_free(A0).reshape(-1)])
    sol = solve_ivp(rhs, (0.0, bridge.T - cfg.ode_eps), y0, method="RK45", rtol=1e-5, atol=1e-5)
    if not sol.success:
        raise FloatingPointError(f"概率流 ODE 求解失败: {sol.message}")
    X, A = unpack(sol.y[:, -1])
    _check_finite(X, A, len(sol.t), float(sol.t[-1]))
    return X, A


# ---------------------------------------------------------------------------
# 单条轨迹接口
# ---------------------------------------------------------------------------

def sample(source, cfg: SamplerConfig, n: int, rng: np.random.Generator,
           record: bool = False) -> Tuple[GraphState, Optional[Trajectory]]:
    """Euler-Maruyama 采样一条轨迹，返回量化后的终态（以及可选的轨迹记录）"""
    X, A, trajs = simulate_batch(source, cfg, n, 1, rng, record)
    final = quantize(GraphState(X[0], A[0]), source.feature_kind)
    traj = None
    if record:
        traj = trajs[0]
        _, traj.convergence_step = convergence_profile(traj, final, source.feature_kind)
    return final, traj


def pc_sample(source: OracleSource, cfg: SamplerConfig, n: int, rng: np.random.Generator) -> GraphState:
    """预测-校正采样：每个 Euler-Maruyama 步之后接 M 步 Langevin 校正"""
    if cfg.corrector_steps < 1:
        raise ValueError("pc_sample 需要 corrector_steps >= 1")
    final, _ = sample(source, cfg, n, rng)
    return final


def ode_sample(source: OracleSource, cfg: SamplerConfig, n: int, rng: np.random.Generator) -> GraphState:
    X, A = ode_batch(source, cfg, n, 1, rng)
    return quantize(GraphState(X[0], A[0]), source.feature_kind)


def convergence_profile(traj: Trajectory, ref: GraphState, feature_kind: FeatureKind) -> Tuple[List[float], int]:
    """
    逐步图混合预测到最终图的 L2 距离，以及量化预测从此不再变化的第一个步号
    （只看预测本身；最后一步的量化预测即使与最终图不同，收敛步也不超过 K-1）
    """
    if not traj.predictions:
        raise ValueError("轨迹没有记录图混合预测")
    rX, rA = quantize_arrays(ref.X, ref.A, feature_kind)
    last = traj.predictions[-1]
    lX, lA = quantize_arrays(last.D_X, last.D_A, feature_kind)
    distances = []
    convergence_step = len(traj.predictions)
    stable = True
    for k in reversed(range(len(traj.predictions))):
        p = traj.predictions[k]
        qX, qA = quantize_arrays(p.D_X, p.D_A, feature_kind)
        stable = stable and _same_graph(qX, qA, lX, lA)
        if stable:
            convergence_step = k
        distances.append(float(np.sqrt(sq_norm(p.D_X - rX) + free_sq_norm(p.D_A - rA))))
    distances.reverse()
    return distances, convergence_step


def trajectory_records(traj: Trajectory, index: int, ref: GraphState,
                       feature_kind: FeatureKind) -> List[Dict]:
    """
    轨迹的逐步记录：{trajectory, step, t, l2_to_final_prediction, changed, matches_final}
    matches_final 与最后一步的量化预测比较，l2_to_final_prediction 是到最终图的距离
    """
    distances, _ = convergence_profile(traj, ref, feature_kind)
    last = traj.predictions[-1]
    lX, lA = quantize_arrays(last.D_X, last.D_A, feature_kind)
    records = []
    prev = None
    for k, p in enumerate(traj.predictions):
        q = quantize_arrays(p.D_X, p.D_A, feature_kind)
        records.append({
            "trajectory": index,
            "step": k,
            "t": traj.times[k],
            "l2_to_final_prediction": distances[k],
            "changed": bool(prev is not None and not _same_graph(*q, *prev)),
            "matches_final": bool(_same_graph(*q, lX, lA)),
        })
        prev = q
    return records


# ---------------------------------------------------------------------------
# 批量生成
# ---------------------------------------------------------------------------

@dataclass
class SampleResult:
    graphs: List[LabeledGraph]
    states: List[GraphState]            # 量化前的终态
    l1_distances: np.ndarray            # 量化前后自由坐标上的平均绝对差
    trajectories: List[Trajectory] = field(default_factory=list)
    records: List[Dict] = field(default_factory=list)


class GraphSampler:
    """
    把多条轨迹按固定大小分块，每块使用 SeedSequence 派生的独立随机流，
    因此结果只取决于 seed，与并行度无关
    """

    def __init__(self, source, cfg: SamplerConfig, mode: str = "sde"):
        if mode not in ("sde", "ode"):
            raise ValueError(f"未知的采样模式: {mode}")
        if cfg.corrector_steps > 0 and mode == "ode":
            raise ValueError("概率流 ODE 不使用校正步")
        self.source = source
        self.cfg = cfg
        self.mode = mode

    def _run_chunk(self, node_counts: np.ndarray, seed_seq: np.random.SeedSequence,
                   record: bool) -> List[Tuple[GraphState, Optional[Trajectory]]]:
        rng = np.random.default_rng(seed_seq)
        out: List[Optional[Tuple[GraphState, Optional[Trajectory]]]] = [None] * len(node_counts)
        for n in sorted(set(int(v) for v in node_counts)):
            idx = np.flatnonzero(node_counts == n)
            if self.mode == "ode":
                X, A = ode_batch(self.source, self.cfg, n, len(idx), rng)
                trajs = []
            else:
                X, A, trajs = simulate_batch(self.source, self.cfg, n, len(idx), rng, record)
            for j, i in enumerate(idx):
                out[i] = (GraphState(X[j], A[j]), trajs[j] if record else None)
        return out

    def generate(self, node_counts: np.ndarray, seed: int, jobs: int = 1, record: bool = False) -> SampleResult:
        node_counts = np.asarray(node_counts, dtype=int)
        num = len(node_counts)
        cs = self.cfg.chunk_size
        chunks = [node_counts[i:i + cs] for i in range(0, num, cs)]
        seeds = np.random.SeedSequence(seed).spawn(len(chunks))
        logger.info(f"开始采样 {num} 个图 ({self.mode}, K={self.cfg.steps}, M={self.cfg.corrector_steps}), "
                    f"{len(chunks)} 个分块, jobs={jobs}")
        results = Parallel(n_jobs=jobs)(
            delayed(self._run_chunk)(chunk, s, record) for chunk, s in zip(chunks, seeds))

        kind = self.source.feature_kind
        result = SampleResult([], [], np.zeros(num))
        for i, (state, traj) in enumerate(item for chunk in results for item in chunk):
            q = quantize(state, kind)
            result.states.append(state)
            result.graphs.append(q.to_labeled(kind))
            result.l1_distances[i] = mean_abs_free(state.X - q.X, state.A - q.A)
            if traj is not None:
                _, traj.convergence_step = convergence_profile(traj, q, kind)
                result.trajectories.append(traj)
                result.records.extend(trajectory_records(traj, i, q, kind))
        return result
