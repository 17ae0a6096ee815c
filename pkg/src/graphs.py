import os
import logging
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import networkx as nx
from networkx.algorithms.isomorphism import categorical_edge_match, categorical_node_match

from models import Dataset, LabeledGraph
from utils import load_json, save_json

logger = logging.getLogger(__name__)

TOY_KINDS = ("cycles", "paths", "stars", "triangles-vs-stars", "cycles-vs-paths", "mixed")
DELAUNAY_TOL = 1e-12
JITTER = 1e-9


def from_networkx(G: nx.Graph, labels: Optional[Sequence[int]] = None) -> LabeledGraph:
    """节点按 0..n-1 排列的 networkx 图 -> LabeledGraph"""
    n = G.number_of_nodes()
    adjacency = nx.to_numpy_array(G, nodelist=range(n), weight="weight", dtype=int)
    return LabeledGraph(n, adjacency, None if labels is None else np.asarray(labels))


def from_edges(n: int, edges, labels: Optional[Sequence[int]] = None) -> LabeledGraph:
    adjacency = np.zeros((n, n), dtype=np.int64)
    for edge in edges:
        i, j = int(edge[0]), int(edge[1])
        w = int(edge[2]) if len(edge) > 2 else 1
        adjacency[i, j] = adjacency[j, i] = w
    return LabeledGraph(n, adjacency, None if labels is None else np.asarray(labels))


# ---------------------------------------------------------------------------
# 生成器
# ---------------------------------------------------------------------------

def gen_sbm(rng: np.random.Generator, communities: Optional[int] = None, sizes: Optional[Sequence[int]] = None,
            p_intra: float = 0.3, p_inter: float = 0.05, size_range: Tuple[int, int] = (20, 40)) -> LabeledGraph:
    """
    随机块模型：社区数在 [2,5] 内均匀抽取，每个社区大小在 size_range 内均匀抽取
    节点按社区连续编号
    """
    if sizes is None:
        k = communities if communities is not None else int(rng.integers(2, 6))
        sizes = rng.integers(size_range[0], size_range[1] + 1, size=k)
    sizes = [int(s) for s in sizes]
    k = len(sizes)
    probs = np.full((k, k), p_inter)
    np.fill_diagonal(probs, p_intra)
    G = nx.stochastic_block_model(sizes, probs.tolist(), seed=int(rng.integers(2 ** 31)))
    return from_networkx(G)


def delaunay_edges(points: np.ndarray) -> List[Tuple[int, int]]:
    """
    暴力 Delaunay 三角剖分：对每个点三元组检查外接圆内是否没有其它点
    :return: 边列表 (i, j)，i < j；出现近似共圆时抛出 ArithmeticError
    """
    n = len(points)
    if n < 3:
        return [(0, 1)] if n == 2 else []
    tri = np.array(list(combinations(range(n), 3)))
    a, b, c = points[tri[:, 0]], points[tri[:, 1]], points[tri[:, 2]]
    orient = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])

    def rel(v):
        dx = v[:, None, 0] - points[None, :, 0]
        dy = v[:, None, 1] - points[None, :, 1]
        return dx, dy, dx * dx + dy * dy

    adx, ady, al = rel(a)
    bdx, bdy, bl = rel(b)
    cdx, cdy, cl = rel(c)
    det = (adx * (bdy * cl - bl * cdy)
           - ady * (bdx * cl - bl * cdx)
           + al * (bdx * cdy - bdy * cdx))
    det *= np.sign(orient)[:, None]
    own = np.zeros_like(det, dtype=bool)
    own[np.arange(len(tri))[:, None], tri] = True

    proper = np.abs(orient) > DELAUNAY_TOL
    inside = (det > DELAUNAY_TOL) & ~own
    near = (np.abs(det) <= DELAUNAY_TOL) & ~own
    empty = proper & ~inside.any(axis=1)
    if np.any(empty & near.any(axis=1)):
        raise ArithmeticError("存在近似共圆的四点")

    edges = set()
    for i, j, k in tri[empty]:
        edges.update({(i, j), (i, k), (j, k)})
    return sorted((int(i), int(j)) for i, j in edges)


def gen_planar(rng: np.random.Generator, n: int = 64, points: Optional[np.ndarray] = None,
               max_retries: int = 10) -> LabeledGraph:
    """单位正方形内随机点的 Delaunay 三角剖分；近似共圆时对点加 1e-9 的扰动后重试"""
    points = rng.uniform(0.0, 1.0, size=(n, 2)) if points is None else np.asarray(points, dtype=float)
    for attempt in range(max_retries):
        try:
            return from_edges(len(points), delaunay_edges(points))
        except ArithmeticError:
            logger.debug(f"Delaunay 出现退化情形，第 {attempt + 1} 次扰动重试")
            points = points + JITTER * rng.standard_normal(points.shape)
    raise RuntimeError(f"扰动 {max_retries} 次后仍存在退化的点集")


def _toy_graph(family: str, n: int) -> nx.Graph:
    if family == "cycle":
        return nx.cycle_graph(n)
    if family == "path":
        return nx.path_graph(n)
    if family == "star":
        return nx.star_graph(n - 1)
    if family == "triangles":
        G = nx.empty_graph(n)
        for start in range(0, n - n % 3, 3):
            G.add_edges_from([(start, start + 1), (start + 1, start + 2), (start, start + 2)])
        return G
    raise ValueError(f"未知的图族: {family}")


TOY_FAMILIES = {
    "cycles": ("cycle",),
    "paths": ("path",),
    "stars": ("star",),
    "triangles-vs-stars": ("triangles", "star"),
    "cycles-vs-paths": ("cycle", "path"),
    "mixed": ("cycle", "path", "star"),
}


def gen_toy(kind: str, n: int, count: int, rng: Optional[np.random.Generator] = None) -> Dataset:
    """
    玩具数据集：按图族轮流生成 count 个 n 节点图
    :param rng: 若给出，每个图的节点都会被随机重排
    """
    if kind not in TOY_FAMILIES:
        raise ValueError(f"未知的玩具数据集类型: {kind}，可选 {TOY_KINDS}")
    if n < 3 or count < 1:
        raise ValueError(f"玩具数据集要求 n >= 3 且 count >= 1，当前 n={n}, count={count}")
    families = TOY_FAMILIES[kind]
    graphs = []
    for i in range(count):
        g = from_networkx(_toy_graph(families[i % len(families)], n))
        if rng is not None:
            g = g.permute(rng.permutation(n))
        graphs.append(g)
    return Dataset.from_graphs(graphs)


def toy_family(G: LabeledGraph) -> Optional[str]:
    """判断图属于哪个玩具图族（同构意义下），都不是则返回 None"""
    for family in ("cycle", "path", "star", "triangles"):
        if is_isomorphic(G, from_networkx(_toy_graph(family, G.n))):
            return family
    return None


# ---------------------------------------------------------------------------
# 置换与同构
# ---------------------------------------------------------------------------

def permute(G: LabeledGraph, perm: Sequence[int]) -> LabeledGraph:
    perm = np.asarray(perm)
    if sorted(perm.tolist()) != list(range(G.n)):
        raise ValueError("perm 不是 0..n-1 的排列")
    return G.permute(perm)


def invariant_key(G: LabeledGraph, nxg: Optional[nx.Graph] = None) -> Tuple:
    """同构不变量：节点数、度序列、类别多重集、三角形数、WL 哈希"""
    nxg = G.to_networkx() if nxg is None else nxg
    labels = () if G.node_labels is None else tuple(sorted(G.node_labels.tolist()))
    return (
        G.n,
        tuple(sorted(G.degrees().tolist())),
        labels,
        sum(nx.triangles(nxg).values()) // 3,
        nx.weisfeiler_lehman_graph_hash(nxg, node_attr="label", edge_attr="weight"),
    )


def is_isomorphic(G1: LabeledGraph, G2: LabeledGraph) -> bool:
    """先比较不变量（节点数、度序列、三角形数、WL 哈希），再用 VF2 回溯精确判定"""
    g1, g2 = G1.to_networkx(), G2.to_networkx()
    if invariant_key(G1, g1) != invariant_key(G2, g2):
        return False
    return nx.is_isomorphic(g1, g2, node_match=categorical_node_match("label", None),
                            edge_match=categorical_edge_match("weight", 1))


# ---------------------------------------------------------------------------
# 序列化
# ---------------------------------------------------------------------------

def graph_to_dict(G: LabeledGraph) -> Dict:
    rows, cols = np.nonzero(np.triu(G.adjacency, k=1))
    record = {"n": G.n, "edges": [[int(i), int(j), int(G.adjacency[i, j])] for i, j in zip(rows, cols)]}
    if G.node_labels is not None:
        record["labels"] = [int(v) for v in G.node_labels]
    return record


def graph_from_dict(record: Dict) -> LabeledGraph:
    n = int(record["n"])
    for edge in record["edges"]:
        if not (0 <= edge[0] < edge[1] < n):
            raise ValueError(f"非法的边: {edge}")
    return from_edges(n, record["edges"], record.get("labels"))


def save_graphs(path: str, graphs: Sequence[LabeledGraph]) -> None:
    save_json(path, [graph_to_dict(g) for g in graphs])


def load_graphs(path: str) -> List[LabeledGraph]:
    payload = load_json(path)
    if not isinstance(payload, list):
        raise ValueError(f"图文件应为 JSON 数组: {path}")
    return [graph_from_dict(r) for r in payload]


def load_dataset(path: str) -> Dataset:
    return Dataset.from_graphs(load_graphs(path))


def parse_nodes_spec(spec: str) -> Tuple[int, int]:
    """'N' 或 'MIN-MAX'"""
    parts = str(spec).split("-")
    try:
        values = [int(p) for p in parts]
    except ValueError:
        raise ValueError(f"无法解析节点数: {spec}")
    if len(values) == 1:
        values = values * 2
    if len(values) != 2 or values[0] < 1 or values[0] > values[1]:
        raise ValueError(f"无法解析节点数: {spec}")
    return values[0], values[1]


class DataGenerator:
    """按类型批量生成数据集"""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.rng = np.random.default_rng(seed)

    def generate(self, kind: str, count: int, nodes: Optional[str] = None,
                 toy_kind: str = "mixed") -> List[LabeledGraph]:
        """
        :param kind: toy / sbm / planar
        :param nodes: toy/planar 为节点数（范围时逐图均匀抽取），sbm 为社区大小范围
        """
        if count < 1:
            raise ValueError(f"count 必须至少为 1: {count}")
        if kind == "toy":
            lo, hi = parse_nodes_spec(nodes or "6")
            if lo == hi:
                return list(gen_toy(toy_kind, lo, count, self.rng).graphs)
            if toy_kind not in TOY_FAMILIES:
                raise ValueError(f"未知的玩具数据集类型: {toy_kind}，可选 {TOY_KINDS}")
            families = TOY_FAMILIES[toy_kind]
            graphs = []
            for i in range(count):
                n = int(self.rng.integers(max(lo, 3), max(hi, 3) + 1))
                g = from_networkx(_toy_graph(families[i % len(families)], n))
                graphs.append(g.permute(self.rng.permutation(n)))
            return graphs
        if kind == "sbm":
            size_range = parse_nodes_spec(nodes or "20-40")
            return [gen_sbm(self.rng, size_range=size_range) for _ in range(count)]
        if kind == "planar":
            lo, hi = parse_nodes_spec(nodes or "64")
            return [gen_planar(self.rng, int(self.rng.integers(lo, hi + 1))) for _ in range(count)]
        raise ValueError(f"未知的数据类型: {kind}")

    def save(self, path: str, graphs: Sequence[LabeledGraph]) -> None:
        save_graphs(path, graphs)
        logger.info(f"已写出 {len(graphs)} 个图到 {os.path.abspath(path)}")
