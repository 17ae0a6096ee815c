"""
生成图的评估：四种统计量的 TV 核 MMD、有效/唯一/新颖比例、平面性与 SBM 有效性
"""
import logging
from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Dict, Optional, Sequence

import numpy as np
import networkx as nx
from sklearn.metrics import pairwise_distances

from graphs import invariant_key, is_isomorphic, toy_family
from models import LabeledGraph

logger = logging.getLogger(__name__)

NUM_ORBITS = 11
CLUSTERING_BINS = 100
SPECTRUM_BINS = 200
JACOBI_TOL = 1e-10

# 连通 4 点子图类型：0 不连通, 1 路径, 2 星, 3 环, 4 带尾三角, 5 菱形, 6 K4
# ORBIT_LUT[类型, 子图内度数] -> 轨道下标（对应轨道 4..14），-1 表示不存在
ORBIT_LUT = np.full((7, 4), -1, dtype=np.int64)
ORBIT_LUT[1, 1], ORBIT_LUT[1, 2] = 0, 1
ORBIT_LUT[2, 1], ORBIT_LUT[2, 3] = 2, 3
ORBIT_LUT[3, 2] = 4
ORBIT_LUT[4, 1], ORBIT_LUT[4, 2], ORBIT_LUT[4, 3] = 5, 6, 7
ORBIT_LUT[5, 2], ORBIT_LUT[5, 3] = 8, 9
ORBIT_LUT[6, 3] = 10


def _binary(G: LabeledGraph) -> np.ndarray:
    return (G.adjacency > 0).astype(np.int64)


def degree_hist(G: LabeledGraph) -> np.ndarray:
    """度数分布，区间 0..n-1"""
    return np.bincount(G.degrees(), minlength=max(G.n, 1))[:max(G.n, 1)] / max(G.n, 1)


def clustering_hist(G: LabeledGraph, bins: int = CLUSTERING_BINS) -> np.ndarray:
    coeffs = list(nx.clustering(G.to_networkx()).values())
    hist, _ = np.histogram(coeffs, bins=bins, range=(0.0, 1.0))
    return hist / max(hist.sum(), 1)


def _graphlet_types(sub: np.ndarray) -> np.ndarray:
    deg = sub.sum(axis=2)
    m = deg.sum(axis=1) // 2
    max_deg = deg.max(axis=1)
    min_deg = deg.min(axis=1)
    types = np.zeros(len(sub), dtype=np.int64)
    types[(m == 3) & (max_deg == 2) & (min_deg == 1)] = 1
    types[(m == 3) & (max_deg == 3)] = 2
    types[(m == 4) & (max_deg == 2)] = 3
    types[(m == 4) & (max_deg == 3)] = 4
    types[m == 5] = 5
    types[m == 6] = 6
    return types


def orbit_counts(G: LabeledGraph, per_node: bool = False) -> np.ndarray:
    """
    连通 4 点子图的轨道计数（轨道 4..14），暴力枚举全部 4 点子集
    :param per_node: True 时返回 (n, 11) 的逐节点计数，否则返回节点平均
    """
    n = G.n
    counts = np.zeros(n * NUM_ORBITS, dtype=np.int64)
    if n >= 4:
        adj = _binary(G).astype(np.int8)
        triples = np.array(list(combinations(range(n), 3)), dtype=np.int64)
        firsts = triples[:, 0]
        for a in range(n - 3):
            rest = triples[np.searchsorted(firsts, a + 1):]
            quads = np.concatenate([np.full((len(rest), 1), a), rest], axis=1)
            sub = adj[quads[:, :, None], quads[:, None, :]]
            types = _graphlet_types(sub)
            keep = types > 0
            if not np.any(keep):
                continue
            quads, sub, types = quads[keep], sub[keep], types[keep]
            orbits = ORBIT_LUT[types[:, None], sub.sum(axis=2)]
            counts += np.bincount((quads * NUM_ORBITS + orbits).reshape(-1), minlength=n * NUM_ORBITS)
    counts = counts.reshape(n, NUM_ORBITS)
    if per_node:
        return counts
    return counts.mean(axis=0) if n > 0 else np.zeros(NUM_ORBITS)


def orbit_hist(G: LabeledGraph) -> np.ndarray:
    """归一化到和为 1 的平均轨道计数（全零时保持为零）"""
    counts = orbit_counts(G)
    total = counts.sum()
    return counts / total if total > 0 else counts


def normalized_laplacian(G: LabeledGraph) -> np.ndarray:
    """I - D^{-1/2} A D^{-1/2}，孤立点对应的对角元为 0"""
    adj = _binary(G).astype(float)
    deg = adj.sum(axis=1)
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    L = -inv_sqrt[:, None] * adj * inv_sqrt[None, :]
    L[np.diag_indices_from(L)] = nz.astype(float)
    return L


def jacobi_eigenvalues(M: np.ndarray, tol: float = JACOBI_TOL, max_sweeps: int = 100) -> np.ndarray:
    """循环 Jacobi 旋转求对称矩阵特征值（升序）"""
    A = np.array(M, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or not np.allclose(A, A.T):
        raise ValueError("Jacobi 方法要求对称方阵")
    # 小于该阈值的非对角元对 off 的贡献已低于 tol
    skip = tol / (2.0 * max(n, 1))
    for sweep in range(max_sweeps):
        off = np.sqrt(2.0 * np.sum(np.triu(A, k=1) ** 2))
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) < skip:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                col_p, col_q = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * col_p - s * col_q
                A[:, q] = s * col_p + c * col_q
                row_p, row_q = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * row_p - s * row_q
                A[q, :] = s * row_p + c * row_q
    else:
        logger.warning(f"Jacobi 迭代 {max_sweeps} 轮后仍未收敛")
    return np.sort(np.diag(A))


def laplacian_spectrum_hist(G: LabeledGraph, bins: int = SPECTRUM_BINS) -> np.ndarray:
    # 舍入到 1e-8，避免落在区间边界上的特征值随节点顺序跳到相邻区间
    eigs = np.clip(np.round(jacobi_eigenvalues(normalized_laplacian(G)), 8), 0.0, 2.0)
    hist, _ = np.histogram(eigs, bins=bins, range=(0.0, 2.0))
    return hist / max(hist.sum(), 1)


STATISTICS: Dict[str, Callable[[LabeledGraph], np.ndarray]] = {
    "degree": degree_hist,
    "clustering": clustering_hist,
    "orbit": orbit_hist,
    "spectral": laplacian_spectrum_hist,
}


# ---------------------------------------------------------------------------
# MMD
# ---------------------------------------------------------------------------

def _pad(hists: Sequence[np.ndarray], length: int) -> np.ndarray:
    out = np.zeros((len(hists), length))
    for i, h in enumerate(hists):
        out[i, :len(h)] = h
    return out


def mmd_tv_hists(ref: Sequence[np.ndarray], gen: Sequence[np.ndarray], sigma: float = 1.0,
                 jobs: Optional[int] = None) -> float:
    """k(h, h') = exp(-TV(h, h')² / 2σ²)，TV = ½‖h - h'‖₁；返回截断到非负的平方 MMD"""
    if not ref or not gen:
        raise ValueError("MMD 需要两个非空集合")
    length = max(len(h) for h in list(ref) + list(gen))
    X, Y = _pad(ref, length), _pad(gen, length)

    def kernel(P, Q):
        tv = 0.5 * pairwise_distances(P, Q, metric="manhattan", n_jobs=jobs)
        return np.exp(-tv ** 2 / (2.0 * sigma ** 2))

    value = kernel(X, X).mean() + kernel(Y, Y).mean() - 2.0 * kernel(X, Y).mean()
    return float(max(value, 0.0))


def mmd_tv(ref_set: Sequence[LabeledGraph], gen_set: Sequence[LabeledGraph], statistic: str,
           jobs: Optional[int] = None) -> float:
    if statistic not in STATISTICS:
        raise ValueError(f"未知的统计量: {statistic}，可选 {list(STATISTICS)}")
    fn = STATISTICS[statistic]
    return mmd_tv_hists([fn(g) for g in ref_set], [fn(g) for g in gen_set], jobs=jobs)


# ---------------------------------------------------------------------------
# 有效性规则
# ---------------------------------------------------------------------------

def is_planar(G: LabeledGraph) -> bool:
    """边数超过 3n-6 直接判否，否则用 left-right 平面性判定"""
    if G.n >= 3 and G.num_edges > 3 * G.n - 6:
        return False
    planar, _ = nx.check_planarity(G.to_networkx())
    return bool(planar)


def planar_valid(G: LabeledGraph) -> bool:
    return G.n > 0 and nx.is_connected(G.to_networkx()) and is_planar(G)


@dataclass
class SBMRule:
    communities: tuple = (2, 5)
    sizes: tuple = (20, 40)
    p_intra: float = 0.3
    p_inter: float = 0.05
    bands: float = 3.0
    refine_rounds: int = 50

    @property
    def weights(self):
        """(边的对数似然比, 非边的对数似然比)"""
        return (np.log(self.p_intra / self.p_inter),
                np.log((1 - self.p_intra) / (1 - self.p_inter)))


def _refine_blocks(adj: np.ndarray, labels: np.ndarray, k: int, rule: SBMRule) -> np.ndarray:
    """在已知 (p_intra, p_inter) 下逐点把节点移到似然严格更大的社区，直到一整轮没有移动"""
    w_edge, w_gap = rule.weights
    labels = labels.copy()
    edges_to = adj @ np.eye(k)[labels]
    sizes = np.bincount(labels, minlength=k).astype(float)
    for _ in range(rule.refine_rounds):
        moved = 0
        for v in range(len(labels)):
            own = labels[v]
            others = sizes.copy()
            others[own] -= 1
            score = edges_to[v] * w_edge + (others - edges_to[v]) * w_gap
            best = int(np.argmax(score))
            if score[best] <= score[own] + 1e-12:
                continue
            labels[v] = best
            sizes[own] -= 1
            sizes[best] += 1
            edges_to[:, own] -= adj[:, v]
            edges_to[:, best] += adj[:, v]
            moved += 1
        if moved == 0:
            break
    return labels


def _block_objective(adj: np.ndarray, labels: np.ndarray, rule: SBMRule) -> float:
    """块内点对的对数似然比之和；块间点对是与 k 无关的常数"""
    w_edge, w_gap = rule.weights
    sizes = np.bincount(labels)
    same = labels[:, None] == labels[None, :]
    inner_edges = np.sum(np.triu(adj * same, k=1))
    inner_pairs = np.sum(sizes * (sizes - 1) / 2)
    return float(inner_edges * w_edge + (inner_pairs - inner_edges) * w_gap)


def fit_blocks(G: LabeledGraph, rule: Optional[SBMRule] = None) -> np.ndarray:
    """
    对社区数范围内的每个 k：以截到 k 个社区的贪心模块度划分为初值，
    逐点似然修正后去掉空社区，返回块似然目标最大的划分（社区标号 0..k-1）
    """
    rule = rule or SBMRule()
    nxg = G.to_networkx()
    adj = _binary(G)
    best_labels, best_score = np.zeros(G.n, dtype=np.int64), -np.inf
    for k in range(rule.communities[0], min(rule.communities[1], G.n) + 1):
        communities = nx.community.greedy_modularity_communities(nxg, cutoff=k, best_n=k)
        labels = np.zeros(G.n, dtype=np.int64)
        for c, members in enumerate(communities):
            labels[list(members)] = c
        labels = _refine_blocks(adj, labels, len(communities), rule)
        _, labels = np.unique(labels, return_inverse=True)
        score = _block_objective(adj, labels, rule)
        logger.debug(f"SBM 初值 k={k}: 实际 {labels.max() + 1} 个社区, 目标 {score:.3f}")
        if score > best_score:
            best_labels, best_score = labels, score
    return best_labels


def sbm_valid(G: LabeledGraph, rule: Optional[SBMRule] = None) -> bool:
    """
    SBM 有效性的替代检验：按块模型似然拟合社区划分，
    要求社区数与社区大小在范围内，且块内/块间边率落在二项分布的 3σ 区间内
    """
    rule = rule or SBMRule()
    if G.num_edges == 0 or G.n < 2:
        return False
    adj = _binary(G)
    labels = fit_blocks(G, rule)
    k = int(labels.max()) + 1
    if not (rule.communities[0] <= k <= rule.communities[1]):
        return False
    sizes = np.bincount(labels, minlength=k)
    if np.any(sizes < rule.sizes[0]) or np.any(sizes > rule.sizes[1]):
        return False
    onehot = np.eye(k)[labels]
    block_edges = onehot.T @ adj @ onehot
    for a in range(k):
        for b in range(a, k):
            if a == b:
                pairs = sizes[a] * (sizes[a] - 1) / 2
                edges = block_edges[a, a] / 2
                p = rule.p_intra
            else:
                pairs = sizes[a] * sizes[b]
                edges = block_edges[a, b]
                p = rule.p_inter
            sd = np.sqrt(p * (1 - p) / pairs)
            if abs(edges / pairs - p) > rule.bands * sd:
                return False
    return True


def toy_valid(G: LabeledGraph) -> bool:
    return toy_family(G) is not None


VALIDITY_RULES: Dict[str, Callable[[LabeledGraph], bool]] = {
    "planar": planar_valid,
    "sbm": sbm_valid,
    "toy": toy_valid,
    "none": lambda G: True,
}


def vun(gen_set: Sequence[LabeledGraph], train_set: Sequence[LabeledGraph], validity_rule: str = "none") -> Dict:
    """
    有效、唯一、新颖的百分比
    unique：与之前生成的任何图都不同构；novel：与训练集中任何图都不同构
    """
    if validity_rule not in VALIDITY_RULES:
        raise ValueError(f"未知的有效性规则: {validity_rule}")
    if not gen_set:
        raise ValueError("生成集合为空")
    is_valid = VALIDITY_RULES[validity_rule]
    if validity_rule == "toy":
        # 有训练集时只接受训练集中出现过的玩具族
        families = {toy_family(g) for g in train_set} - {None}
        if families:
            def is_valid(G):
                return toy_family(G) in families

    train_buckets: Dict = {}
    for g in train_set:
        train_buckets.setdefault(invariant_key(g), []).append(g)
    seen: Dict = {}
    flags = []
    for g in gen_set:
        key = invariant_key(g)
        valid = bool(is_valid(g))
        unique = not any(is_isomorphic(g, h) for h in seen.get(key, []))
        novel = not any(is_isomorphic(g, h) for h in train_buckets.get(key, []))
        seen.setdefault(key, []).append(g)
        flags.append((valid, unique, novel))
    flags = np.array(flags, dtype=bool)

    def pct(mask):
        return float(100.0 * mask.mean())

    return {
        "valid": pct(flags[:, 0]),
        "unique": pct(flags[:, 1]),
        "novel": pct(flags[:, 2]),
        "vun": pct(flags.all(axis=1)),
        "validity": flags[:, 0].tolist(),
    }


def evaluate(ref_set: Sequence[LabeledGraph], gen_set: Sequence[LabeledGraph], rule: str = "none",
             jobs: Optional[int] = None) -> Dict:
    """完整评估报告：{metric -> value} 以及逐图有效性"""
    report = {"num_ref": len(ref_set), "num_gen": len(gen_set), "mmd": {}}
    for name in STATISTICS:
        report["mmd"][name] = mmd_tv(ref_set, gen_set, name, jobs=jobs)
        logger.info(f"MMD[{name}] = {report['mmd'][name]:.6f}")
    report.update(vun(gen_set, ref_set, rule))
    logger.info(f"valid={report['valid']:.1f}%, unique={report['unique']:.1f}%, "
                f"novel={report['novel']:.1f}%, V.U.N.={report['vun']:.1f}%")
    return report
