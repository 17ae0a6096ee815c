from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
import networkx as nx

from utils import to_free

BOND_SCALE = 3.0  # 键类型 {0,1,2,3} 缩放到 [0,1]


class FeatureKind(str, Enum):
    """数据集的特征类型"""
    BINARY_ADJACENCY = "binary_adjacency"
    BOND_TYPE = "bond_type"
    CATEGORICAL_ONEHOT = "categorical_onehot"

    @property
    def adjacency_scale(self) -> float:
        return BOND_SCALE if self is FeatureKind.BOND_TYPE else 1.0


@dataclass
class LabeledGraph:
    """量化后的图：整数邻接矩阵 + 可选节点类别"""
    n: int
    adjacency: np.ndarray
    node_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.adjacency = np.asarray(self.adjacency, dtype=np.int64)
        if self.adjacency.shape != (self.n, self.n):
            raise ValueError(f"邻接矩阵形状 {self.adjacency.shape} 与节点数 {self.n} 不一致")
        if not np.array_equal(self.adjacency, self.adjacency.T):
            raise ValueError("邻接矩阵必须对称")
        if np.any(np.diag(self.adjacency) != 0):
            raise ValueError("邻接矩阵对角线必须为 0")
        if np.any(self.adjacency < 0) or np.any(self.adjacency > BOND_SCALE):
            raise ValueError("边权必须在 {0,1,2,3} 范围内")
        if self.node_labels is not None:
            self.node_labels = np.asarray(self.node_labels, dtype=np.int64)
            if self.node_labels.shape != (self.n,) or np.any(self.node_labels < 0):
                raise ValueError("节点类别必须是长度为 n 的非负整数")

    @property
    def num_edges(self) -> int:
        return int(np.count_nonzero(to_free(self.adjacency)))

    def degrees(self) -> np.ndarray:
        return np.count_nonzero(self.adjacency, axis=1)

    def permute(self, perm: np.ndarray) -> "LabeledGraph":
        """新节点 i 对应原节点 perm[i]"""
        perm = np.asarray(perm)
        labels = None if self.node_labels is None else self.node_labels[perm]
        return LabeledGraph(self.n, self.adjacency[np.ix_(perm, perm)], labels)

    def to_networkx(self) -> nx.Graph:
        G = nx.Graph()
        for i in range(self.n):
            label = None if self.node_labels is None else int(self.node_labels[i])
            G.add_node(i, label=label)
        rows, cols = np.nonzero(np.triu(self.adjacency, k=1))
        for i, j in zip(rows, cols):
            G.add_edge(int(i), int(j), weight=int(self.adjacency[i, j]))
        return G

    def __eq__(self, other):
        if not isinstance(other, LabeledGraph):
            return NotImplemented
        same_labels = (self.node_labels is None and other.node_labels is None) or (
            self.node_labels is not None and other.node_labels is not None
            and np.array_equal(self.node_labels, other.node_labels))
        return self.n == other.n and np.array_equal(self.adjacency, other.adjacency) and same_labels


@dataclass
class GraphState:
    """扩散轨迹上的一个点：节点特征 X (n×F) 与对称邻接 A (n×n)"""
    X: np.ndarray
    A: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.A = np.asarray(self.A, dtype=float)
        n = self.A.shape[0]
        if self.A.shape != (n, n) or self.X.ndim != 2 or self.X.shape[0] != n:
            raise ValueError(f"形状不一致: X{self.X.shape}, A{self.A.shape}")
        if not np.array_equal(self.A, self.A.T) or np.any(np.diag(self.A) != 0):
            raise ValueError("A 必须对称且对角线为 0")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.A))):
            raise ValueError("状态中存在 NaN/Inf")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def num_features(self) -> int:
        return self.X.shape[1]

    def permute(self, perm: np.ndarray) -> "GraphState":
        perm = np.asarray(perm)
        return GraphState(self.X[perm], self.A[np.ix_(perm, perm)])

    @classmethod
    def from_labeled(cls, graph: LabeledGraph, kind: FeatureKind, num_categories: int = 0) -> "GraphState":
        """整数图 -> 缩放到 [0,1] 的连续状态"""
        X = np.zeros((graph.n, num_categories))
        if num_categories > 0:
            if graph.node_labels is None:
                raise ValueError("数据集声明了节点类别，但图缺少 node_labels")
            X[np.arange(graph.n), graph.node_labels] = 1.0
        return cls(X, graph.adjacency / kind.adjacency_scale)

    def to_labeled(self, kind: FeatureKind) -> LabeledGraph:
        """已量化的状态 -> 整数图"""
        adjacency = np.rint(self.A * kind.adjacency_scale).astype(np.int64)
        labels = np.argmax(self.X, axis=1) if self.num_features > 0 else None
        return LabeledGraph(self.n, adjacency, labels)


@dataclass
class MixturePrediction:
    """图混合的预测：D_X, D_A，以及（仅 oracle）各端点的后验权重"""
    D_X: np.ndarray
    D_A: np.ndarray
    weights: Optional[np.ndarray] = None

    def as_state(self) -> GraphState:
        return GraphState(self.D_X, self.D_A)


@dataclass
class Dataset:
    """有限经验分布 Π*：参考图按节点数分组"""
    graphs: List[LabeledGraph]
    feature_kind: FeatureKind
    num_categories: int = 0
    states: List[GraphState] = field(init=False, repr=False)
    groups: Dict[int, List[int]] = field(init=False, repr=False)

    def __post_init__(self):
        if not self.graphs:
            raise ValueError("数据集为空")
        self.states = [GraphState.from_labeled(g, self.feature_kind, self.num_categories)
                       for g in self.graphs]
        self.groups = {}
        for idx, g in enumerate(self.graphs):
            self.groups.setdefault(g.n, []).append(idx)
        self._arrays: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}

    @classmethod
    def from_graphs(cls, graphs: List[LabeledGraph]) -> "Dataset":
        """根据图内容推断特征类型"""
        if not graphs:
            raise ValueError("数据集为空")
        max_weight = max(int(g.adjacency.max(initial=0)) for g in graphs)
        has_labels = [g.node_labels is not None for g in graphs]
        if any(has_labels) and not all(has_labels):
            raise ValueError("数据集中部分图缺少节点类别")
        num_categories = 0
        if all(has_labels):
            num_categories = max(int(g.node_labels.max(initial=0)) for g in graphs) + 1
        if max_weight > 1:
            kind = FeatureKind.BOND_TYPE
        elif num_categories > 0:
            kind = FeatureKind.CATEGORICAL_ONEHOT
        else:
            kind = FeatureKind.BINARY_ADJACENCY
        return cls(list(graphs), kind, num_categories)

    def __len__(self) -> int:
        return len(self.graphs)

    def group(self, n: int) -> List[GraphState]:
        if n not in self.groups:
            raise ValueError(f"数据集中没有节点数为 {n} 的图")
        return [self.states[i] for i in self.groups[n]]

    def group_arrays(self, n: int) -> Tuple[np.ndarray, np.ndarray]:
        """返回 (gX: (M,n,F), gA: (M,d)) ，其中 gA 为自由坐标"""
        if n not in self._arrays:
            states = self.group(n)
            gX = np.stack([s.X for s in states])
            gA = np.stack([to_free(s.A) for s in states])
            self._arrays[n] = (gX, gA)
        return self._arrays[n]

    def node_count_distribution(self) -> Tuple[np.ndarray, np.ndarray]:
        """节点数及其经验概率"""
        counts = np.array(sorted(self.groups))
        probs = np.array([len(self.groups[n]) for n in counts], dtype=float)
        return counts, probs / probs.sum()

    def sample_node_counts(self, rng: np.random.Generator, num: int) -> np.ndarray:
        counts, probs = self.node_count_distribution()
        return rng.choice(counts, size=num, p=probs)
