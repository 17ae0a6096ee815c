import math
import time
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy.special import expit, softmax

from bridge import GraphBridge, loss_weight, sample_graph_interpolant, sample_prior
from models import Dataset, FeatureKind, GraphState, MixturePrediction
from utils import load_json, save_json, to_free, update_log, upper_indices

logger = logging.getLogger(__name__)

MODEL_FORMAT = "mixture_net"


def time_features(t: np.ndarray, dim: int) -> np.ndarray:
    """正弦时间特征：sin/cos(2^k·π·t)，k = 0..dim/2-1"""
    freqs = np.pi * 2.0 ** np.arange(dim // 2)
    angles = np.asarray(t, dtype=float)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def degree_features(A: np.ndarray, max_degree: int, scale: float) -> np.ndarray:
    """对量化后的 A_t 计算度数，并以 one-hot 编码（超过 max_degree-1 的度数截断）"""
    degrees = np.count_nonzero(A > 0.5 / scale, axis=-1)
    return np.eye(max_degree)[np.minimum(degrees, max_degree - 1)]


def walk_features(A: np.ndarray, steps: int, scale: float) -> np.ndarray:
    """量化后 A_t 上随机游走的 k 步返回概率 diag(P^k)，k = 2..steps+1；孤立点为 0"""
    B = (A > 0.5 / scale).astype(float)
    n = A.shape[-1]
    B[..., np.arange(n), np.arange(n)] = 0.0
    deg = B.sum(axis=-1, keepdims=True)
    P = np.divide(B, deg, out=np.zeros_like(B), where=deg > 0)
    feats = []
    walk = P
    for _ in range(steps):
        walk = walk @ P
        feats.append(np.diagonal(walk, axis1=-2, axis2=-1))
    if not feats:
        return np.zeros(A.shape[:-1] + (0,))
    return np.stack(feats, axis=-1)


class MixtureNet:
    """
    图混合预测网络 s_θ(G_t, t)

    节点状态由 [X_t, 度数 one-hot, 随机游走返回概率, 时间特征] 初始化，边状态由 A_t 初始化；
    每一层先用邻居和边聚合更新节点，再用端点对更新边。
    边输出经过对称化后的 sigmoid，节点输出在类别特征时为 softmax，否则为恒等映射。
    所有梯度都是手写的反向传播。
    """

    def __init__(self, num_features: int, feature_kind: FeatureKind, hidden: int = 64, layers: int = 3,
                 time_dim: int = 8, max_degree: int = 8, bridge: Optional[GraphBridge] = None,
                 rng: Optional[np.random.Generator] = None, rw_steps: int = 0):
        if hidden < 1 or layers < 0 or max_degree < 1 or rw_steps < 0:
            raise ValueError(f"非法的网络结构: hidden={hidden}, layers={layers}, "
                             f"max_degree={max_degree}, rw_steps={rw_steps}")
        if time_dim < 2 or time_dim % 2:
            raise ValueError(f"time_dim 必须为正偶数: {time_dim}")
        self.num_features = num_features
        self.feature_kind = FeatureKind(feature_kind)
        self.hidden = hidden
        self.layers = layers
        self.time_dim = time_dim
        self.max_degree = max_degree
        self.rw_steps = rw_steps
        self.bridge = bridge or GraphBridge()
        self.params = self._init_params(rng or np.random.default_rng(0))

    @property
    def input_dim(self) -> int:
        return self.num_features + self.max_degree + self.rw_steps + self.time_dim

    def _init_params(self, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        H = self.hidden

        def dense(fan_in, shape):
            return rng.standard_normal(shape) / np.sqrt(fan_in)

        params = {
            'input.W': dense(self.input_dim, (self.input_dim, H)),
            'input.b': np.zeros(H),
            'edge_init.w': dense(1, (H,)),
            'edge_init.b': np.zeros(H),
        }
        for l in range(self.layers):
            for name in ('W_s', 'W_n', 'W_e', 'W_p', 'W_q', 'W_ee'):
                params[f'layer{l}.{name}'] = dense(H, (H, H))
            params[f'layer{l}.b_h'] = np.zeros(H)
            params[f'layer{l}.b_e'] = np.zeros(H)
        params['edge_head.w'] = dense(H, (H,))
        params['edge_head.b'] = np.zeros(1)
        if self.num_features > 0:
            params['node_head.W'] = dense(H, (H, self.num_features))
            params['node_head.b'] = np.zeros(self.num_features)
        return params

    # ------------------------------------------------------------------
    # 前向传播
    # ------------------------------------------------------------------

    def _check_inputs(self, X: np.ndarray, A: np.ndarray) -> None:
        if A.ndim != 3 or A.shape[1] != A.shape[2]:
            raise ValueError(f"A 的形状应为 (B, n, n)，实际为 {A.shape}")
        if X.shape != A.shape[:2] + (self.num_features,):
            raise ValueError(f"X 的形状 {X.shape} 与网络特征数 {self.num_features} 不一致")

    def forward_batch(self, X: np.ndarray, A: np.ndarray, t) -> Tuple[np.ndarray, np.ndarray, Dict[str, Any]]:
        """
        批量前向传播
        :param X: (B, n, F)
        :param A: (B, n, n)
        :param t: 标量或长度为 B 的时间
        :return: (D_X, D_A, cache)
        """
        self._check_inputs(X, A)
        p = self.params
        B, n = A.shape[:2]
        t = np.broadcast_to(np.asarray(t, dtype=float), (B,))
        mask = 1.0 - np.eye(n)
        tf = np.broadcast_to(time_features(t, self.time_dim)[:, None, :], (B, n, self.time_dim))
        scale = self.feature_kind.adjacency_scale
        x_in = np.concatenate([X, degree_features(A, self.max_degree, scale),
                               walk_features(A, self.rw_steps, scale), tf], axis=-1)

        h = np.tanh(x_in @ p['input.W'] + p['input.b'])
        e_raw = np.tanh(A[..., None] * p['edge_init.w'] + p['edge_init.b'])
        e = e_raw * mask[..., None]
        cache = {'x_in': x_in, 'A': A, 'mask': mask, 'h0': h, 'e0_raw': e_raw, 'layers': []}

        for l in range(self.layers):
            pre = f'layer{l}.'
            agg_h = A @ h / n
            agg_e = e.sum(axis=2) / n
            h_out = np.tanh(h @ p[pre + 'W_s'] + agg_h @ p[pre + 'W_n'] + agg_e @ p[pre + 'W_e'] + p[pre + 'b_h'])
            ps = h_out[:, :, None, :] + h_out[:, None, :, :]
            pp = h_out[:, :, None, :] * h_out[:, None, :, :]
            e_raw = np.tanh(ps @ p[pre + 'W_p'] + pp @ p[pre + 'W_q'] + e @ p[pre + 'W_ee'] + p[pre + 'b_e'])
            cache['layers'].append({'h_in': h, 'e_in': e, 'agg_h': agg_h, 'agg_e': agg_e,
                                    'h_out': h_out, 'ps': ps, 'pp': pp, 'e_raw': e_raw})
            h = h_out
            e = e_raw * mask[..., None]

        logit = e @ p['edge_head.w'] + p['edge_head.b'][0]
        sig = expit(0.5 * (logit + np.swapaxes(logit, 1, 2)))
        D_A = sig * mask
        cache.update(h_last=h, e_last=e, sig=sig)

        if self.num_features > 0:
            z = h @ p['node_head.W'] + p['node_head.b']
            D_X = softmax(z, axis=-1) if self.feature_kind is FeatureKind.CATEGORICAL_ONEHOT else z
        else:
            D_X = np.zeros((B, n, 0))
        cache['D_X'] = D_X
        return D_X, D_A, cache

    def predict(self, X: np.ndarray, A: np.ndarray, t) -> Tuple[np.ndarray, np.ndarray]:
        D_X, D_A, _ = self.forward_batch(X, A, t)
        return D_X, D_A

    def forward(self, G_t: GraphState, t: float) -> MixturePrediction:
        if not (0.0 <= t <= self.bridge.T):
            raise ValueError(f"时间 t={t} 超出 [0, {self.bridge.T}]")
        D_X, D_A = self.predict(G_t.X[None], G_t.A[None], t)
        return MixturePrediction(D_X[0], D_A[0])

    # ------------------------------------------------------------------
    # 反向传播
    # ------------------------------------------------------------------

    def backward(self, cache: Dict[str, Any], dD_X: np.ndarray, dD_A: np.ndarray) -> Dict[str, np.ndarray]:
        """由输出梯度计算全部参数梯度"""
        p = self.params
        grads = {name: np.zeros_like(value) for name, value in p.items()}
        A, mask = cache['A'], cache['mask']
        n = A.shape[1]

        # 边输出头
        sig = cache['sig']
        d_sym = dD_A * mask * sig * (1.0 - sig)
        d_logit = 0.5 * (d_sym + np.swapaxes(d_sym, 1, 2))
        grads['edge_head.w'] = np.einsum('bijh,bij->h', cache['e_last'], d_logit)
        grads['edge_head.b'] = np.array([d_logit.sum()])
        de = d_logit[..., None] * p['edge_head.w']

        # 节点输出头
        h = cache['h_last']
        if self.num_features > 0:
            D_X = cache['D_X']
            if self.feature_kind is FeatureKind.CATEGORICAL_ONEHOT:
                dz = D_X * (dD_X - np.sum(dD_X * D_X, axis=-1, keepdims=True))
            else:
                dz = dD_X
            grads['node_head.W'] = np.einsum('bnh,bnf->hf', h, dz)
            grads['node_head.b'] = dz.sum(axis=(0, 1))
            dh = dz @ p['node_head.W'].T
        else:
            dh = np.zeros_like(h)

        for l in reversed(range(self.layers)):
            pre = f'layer{l}.'
            c = cache['layers'][l]
            d_pre_e = de * mask[..., None] * (1.0 - c['e_raw'] ** 2)
            grads[pre + 'W_p'] = np.einsum('bijh,bijk->hk', c['ps'], d_pre_e)
            grads[pre + 'W_q'] = np.einsum('bijh,bijk->hk', c['pp'], d_pre_e)
            grads[pre + 'W_ee'] = np.einsum('bijh,bijk->hk', c['e_in'], d_pre_e)
            grads[pre + 'b_e'] = d_pre_e.sum(axis=(0, 1, 2))
            d_ps = d_pre_e @ p[pre + 'W_p'].T
            d_pp = d_pre_e @ p[pre + 'W_q'].T
            de_in = d_pre_e @ p[pre + 'W_ee'].T

            h_out = c['h_out']
            dh = (dh + d_ps.sum(axis=2) + d_ps.sum(axis=1)
                  + (d_pp * h_out[:, None, :, :]).sum(axis=2)
                  + (d_pp * h_out[:, :, None, :]).sum(axis=1))
            d_pre_h = dh * (1.0 - h_out ** 2)
            grads[pre + 'W_s'] = np.einsum('bnh,bnk->hk', c['h_in'], d_pre_h)
            grads[pre + 'W_n'] = np.einsum('bnh,bnk->hk', c['agg_h'], d_pre_h)
            grads[pre + 'W_e'] = np.einsum('bnh,bnk->hk', c['agg_e'], d_pre_h)
            grads[pre + 'b_h'] = d_pre_h.sum(axis=(0, 1))

            dh = d_pre_h @ p[pre + 'W_s'].T + np.swapaxes(A, 1, 2) @ (d_pre_h @ p[pre + 'W_n'].T) / n
            de = de_in + (d_pre_h @ p[pre + 'W_e'].T)[:, :, None, :] / n

        # 输入层
        d_pre_e0 = de * mask[..., None] * (1.0 - cache['e0_raw'] ** 2)
        grads['edge_init.w'] = np.einsum('bij,bijh->h', A, d_pre_e0)
        grads['edge_init.b'] = d_pre_e0.sum(axis=(0, 1, 2))
        d_pre_h0 = dh * (1.0 - cache['h0'] ** 2)
        grads['input.W'] = np.einsum('bnd,bnh->dh', cache['x_in'], d_pre_h0)
        grads['input.b'] = d_pre_h0.sum(axis=(0, 1))
        return grads

    # ------------------------------------------------------------------
    # 保存与加载
    # ------------------------------------------------------------------

    def header(self) -> Dict[str, Any]:
        return {
            "num_features": self.num_features,
            "feature_kind": self.feature_kind.value,
            "hidden": self.hidden,
            "layers": self.layers,
            "time_dim": self.time_dim,
            "max_degree": self.max_degree,
            "rw_steps": self.rw_steps,
            "bridge": self.bridge.to_config(),
        }

    def save(self, path: str) -> None:
        """参数以十进制浮点写出，repr 保证读回后逐位一致"""
        payload = {
            "format": MODEL_FORMAT,
            "header": self.header(),
            "params": {name: {"shape": list(value.shape), "data": value.reshape(-1).tolist()}
                       for name, value in self.params.items()},
        }
        save_json(path, payload)

    @classmethod
    def load(cls, path: str) -> "MixtureNet":
        payload = load_json(path)
        if payload.get("format") != MODEL_FORMAT:
            raise ValueError(f"不是模型文件: {path}")
        header = payload["header"]
        net = cls(header["num_features"], FeatureKind(header["feature_kind"]), header["hidden"],
                  header["layers"], header["time_dim"], header["max_degree"],
                  GraphBridge.from_config(header["bridge"]), rw_steps=header.get("rw_steps", 0))
        for name, value in payload["params"].items():
            if name not in net.params:
                raise ValueError(f"模型文件中有未知参数: {name}")
            net.params[name] = np.array(value["data"], dtype=float).reshape(value["shape"])
        return net


# ---------------------------------------------------------------------------
# 损失函数
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    epsilon: float = 1e-3
    loss_mode: str = "weighted_gamma"
    c: float = 100.0
    lam: float = 5.0
    lr: float = 0.01
    momentum: float = 0.9
    grad_clip: float = 1.0
    epochs: int = 100
    batch: int = 16
    seed: int = 0
    lr_final: Optional[float] = None

    def __post_init__(self):
        if self.epsilon <= 0 or self.lam <= 0 or self.c <= 0:
            raise ValueError("epsilon、lambda 与 c 都必须为正数")
        if self.loss_mode not in ("weighted_gamma", "simplified_c"):
            raise ValueError(f"未知的损失模式: {self.loss_mode}")
        if self.epochs < 1 or self.batch < 1:
            raise ValueError("epochs 与 batch 必须至少为 1")
        if self.lr_final is not None and not (0 <= self.lr_final <= self.lr):
            raise ValueError(f"lr_final 必须在 [0, lr] 内: {self.lr_final}")

    @classmethod
    def from_config(cls, cfg: Dict[str, Any], seed: int = 0) -> "TrainConfig":
        return cls(epsilon=cfg["epsilon"], loss_mode=cfg["loss_mode"], c=cfg["c"], lam=cfg["lambda"],
                   lr=cfg["lr"], momentum=cfg["momentum"], grad_clip=cfg["grad_clip"],
                   epochs=cfg["epochs"], batch=cfg["batch"], seed=seed,
                   lr_final=cfg.get("lr_final"))


@dataclass
class TrainingBatch:
    """一组 (G_t, t, G_T)：X_t (B,n,F), A_t (B,n,n), t (B,), X_T, A_T"""
    X_t: np.ndarray
    A_t: np.ndarray
    t: np.ndarray
    X_T: np.ndarray
    A_T: np.ndarray

    def permute(self, perm: np.ndarray) -> "TrainingBatch":
        return TrainingBatch(self.X_t[:, perm], self.A_t[:, perm][:, :, perm], self.t,
                             self.X_T[:, perm], self.A_T[:, perm][:, :, perm])


def _loss_coefficients(bridge: GraphBridge, t: np.ndarray, cfg: TrainConfig) -> Tuple[np.ndarray, np.ndarray]:
    if np.any(t > bridge.T - cfg.epsilon) or np.any(t < 0):
        raise ValueError(f"训练时间必须在 [0, T - epsilon] 内，epsilon={cfg.epsilon}")
    if cfg.loss_mode == "simplified_c":
        w = np.full(t.shape, cfg.c ** 2)
        return w, w
    wx = np.array([loss_weight(bridge.x, float(s)) ** 2 for s in t])
    wa = np.array([loss_weight(bridge.a, float(s)) ** 2 for s in t])
    return wx, wa


def mixture_matching_loss(D_X: np.ndarray, D_A: np.ndarray, batch: TrainingBatch, bridge: GraphBridge,
                          cfg: TrainConfig) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    图混合匹配损失：½γ_X²‖s_X - X_T‖² + λ·½γ_A²‖s_A - A_T‖²，邻接只计上三角，按批平均
    :return: (loss, dL/dD_X, dL/dD_A)
    """
    wx, wa = _loss_coefficients(bridge, np.asarray(batch.t, dtype=float), cfg)
    B, n = D_A.shape[:2]
    r_x = D_X - batch.X_T
    r_a = to_free(D_A - batch.A_T)
    per_graph = 0.5 * wx * np.sum(r_x ** 2, axis=(1, 2)) + cfg.lam * 0.5 * wa * np.sum(r_a ** 2, axis=1)
    rows, cols = upper_indices(n)
    dD_A = np.zeros_like(D_A)
    dD_A[:, rows, cols] = (cfg.lam * wa / B)[:, None] * r_a
    dD_X = (wx / B)[:, None, None] * r_x
    return float(per_graph.mean()), dD_X, dD_A


def loss(net: MixtureNet, batch: TrainingBatch, cfg: TrainConfig) -> float:
    D_X, D_A, _ = net.forward_batch(batch.X_t, batch.A_t, batch.t)
    value, _, _ = mixture_matching_loss(D_X, D_A, batch, net.bridge, cfg)
    return value


def gradients(net: MixtureNet, batch: TrainingBatch, cfg: TrainConfig) -> Tuple[float, Dict[str, np.ndarray]]:
    D_X, D_A, cache = net.forward_batch(batch.X_t, batch.A_t, batch.t)
    value, dD_X, dD_A = mixture_matching_loss(D_X, D_A, batch, net.bridge, cfg)
    return value, net.backward(cache, dD_X, dD_A)


# ---------------------------------------------------------------------------
# 训练
# ---------------------------------------------------------------------------

class SGD:
    """带动量与梯度范数裁剪的随机梯度下降"""

    def __init__(self, lr: float, momentum: float = 0.9, grad_clip: Optional[float] = 1.0):
        self.lr = lr
        self.momentum = momentum
        self.grad_clip = grad_clip
        self.velocity: Dict[str, np.ndarray] = {}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> float:
        norm = float(np.sqrt(sum(np.sum(g ** 2) for g in grads.values())))
        scale = 1.0
        if self.grad_clip and norm > self.grad_clip:
            scale = self.grad_clip / norm
        for name, g in grads.items():
            v = self.velocity.get(name)
            v = -self.lr * scale * g if v is None else self.momentum * v - self.lr * scale * g
            self.velocity[name] = v
            params[name] += v
        return norm


class MixtureTrainer:
    def __init__(self, net: MixtureNet, data: Dataset, cfg: TrainConfig, log_path: Optional[str] = None):
        if len(data) == 0:
            raise ValueError("数据集为空")
        if net.num_features != data.num_categories:
            raise ValueError(f"网络特征数 {net.num_features} 与数据集类别数 {data.num_categories} 不一致")
        self.net = net
        self.data = data
        self.cfg = cfg
        self.log_path = log_path
        self.optimizer = SGD(cfg.lr, cfg.momentum, cfg.grad_clip)
        self.steps_per_epoch = max(1, len(data) // cfg.batch)

    def sample_batch(self, rng: np.random.Generator) -> TrainingBatch:
        """抽取同节点数的一批图，各自随机重排节点，再在随机时刻采样插值"""
        bridge = self.net.bridge
        n = int(self.data.sample_node_counts(rng, 1)[0])
        group = self.data.group(n)
        picks = rng.integers(len(group), size=self.cfg.batch)
        X_t, A_t, X_T, A_T = [], [], [], []
        times = rng.uniform(0.0, bridge.T - self.cfg.epsilon, size=self.cfg.batch)
        for idx, t in zip(picks, times):
            target = group[idx].permute(rng.permutation(n))
            start = sample_prior(n, target.num_features, rng)
            G_t = sample_graph_interpolant(bridge, float(t), start, target, rng)
            X_t.append(G_t.X)
            A_t.append(G_t.A)
            X_T.append(target.X)
            A_T.append(target.A)
        return TrainingBatch(np.stack(X_t), np.stack(A_t), times, np.stack(X_T), np.stack(A_T))

    def learning_rate(self, step: int, total: int) -> float:
        """lr_final 为空时恒定，否则按余弦从 lr 退火到 lr_final"""
        if self.cfg.lr_final is None:
            return self.cfg.lr
        progress = step / max(total - 1, 1)
        return self.cfg.lr_final + 0.5 * (self.cfg.lr - self.cfg.lr_final) * (1.0 + math.cos(math.pi * progress))

    def run(self, rng: Optional[np.random.Generator] = None) -> List[float]:
        """执行训练，返回逐步损失"""
        rng = rng or np.random.default_rng(self.cfg.seed)
        history: List[float] = []
        total = self.cfg.epochs * self.steps_per_epoch
        print(f"\n开始训练: {len(self.data)} 个图, {self.cfg.epochs} 轮, 共 {total} 步")
        started = time.time()
        for epoch in range(self.cfg.epochs):
            epoch_losses = []
            for _ in range(self.steps_per_epoch):
                self.optimizer.lr = self.learning_rate(len(history), total)
                batch = self.sample_batch(rng)
                value, grads = gradients(self.net, batch, self.cfg)
                if not np.isfinite(value):
                    raise FloatingPointError(f"第 {len(history)} 步损失发散: {value}")
                grad_norm = self.optimizer.step(self.net.params, grads)
                history.append(value)
                epoch_losses.append(value)
            mean_loss = float(np.mean(epoch_losses))
            logger.debug(f"epoch {epoch}: loss={mean_loss:.6f}, grad_norm={grad_norm:.4f}")
            if self.log_path:
                update_log(self.log_path, {"epoch": epoch, "step": len(history), "loss": mean_loss,
                                           "grad_norm": grad_norm})
            if (epoch + 1) % max(1, self.cfg.epochs // 10) == 0:
                logger.info(f"已完成 {epoch + 1}/{self.cfg.epochs} 轮, 平均损失 {mean_loss:.6f}")
        print(f"训练完成，用时 {time.time() - started:.1f} 秒，最终损失 {history[-1]:.6f}")
        return history


def train(net: MixtureNet, data: Dataset, cfg: TrainConfig, rng: Optional[np.random.Generator] = None,
          log_path: Optional[str] = None) -> Tuple[MixtureNet, List[float]]:
    history = MixtureTrainer(net, data, cfg, log_path).run(rng)
    return net, history


def build_net(data: Dataset, cfg: Dict[str, Any], bridge: GraphBridge,
              rng: Optional[np.random.Generator] = None) -> MixtureNet:
    """按配置和数据集构造网络"""
    return MixtureNet(data.num_categories, data.feature_kind, cfg["hidden"], cfg["layers"],
                      cfg.get("time_dim", 8), cfg.get("max_degree", 8), bridge, rng,
                      rw_steps=cfg.get("rw_steps", 0))
