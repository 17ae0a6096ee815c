import numpy as np
import pytest

from bridge import BridgeParams, GraphBridge, NoiseSchedule
from graphs import from_edges, gen_toy
from models import Dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def bridge():
    return GraphBridge()


@pytest.fixture
def constant_bridge():
    """σ ≡ 1 的 OU 桥，用于与手算数值比对"""
    params = BridgeParams(-0.5, NoiseSchedule(1.0, 1.0, 1.0))
    return GraphBridge(params, params)


@pytest.fixture
def toy_data():
    """n=6 的环、路径、星三个图"""
    return gen_toy("mixed", 6, 3)


@pytest.fixture
def one_point_data():
    return gen_toy("cycles", 5, 1)


@pytest.fixture
def labeled_data():
    """带节点类别的两个 4 节点图"""
    g1 = from_edges(4, [(0, 1), (1, 2), (2, 3)], labels=[0, 1, 1, 0])
    g2 = from_edges(4, [(0, 1), (1, 2), (2, 3), (0, 3)], labels=[1, 0, 1, 0])
    return Dataset.from_graphs([g1, g2])
