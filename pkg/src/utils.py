import os
import re
import json
import logging
from functools import lru_cache
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

LOG_FORMAT = '%(asctime)s - %(message)s'


def setup_logging(log_file: Optional[str] = None, level: int = logging.INFO) -> None:
    """配置根日志：控制台输出，可选写入日志文件"""
    logging.basicConfig(level=level, format=LOG_FORMAT)
    if log_file:
        os.makedirs(os.path.dirname(os.path.abspath(log_file)), exist_ok=True)
        file_handler = logging.FileHandler(log_file, encoding='utf-8')
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logging.getLogger().addHandler(file_handler)


# ---------------------------------------------------------------------------
# 邻接矩阵的自由坐标（上三角，不含对角线）
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def upper_indices(n: int) -> Tuple[np.ndarray, np.ndarray]:
    return np.triu_indices(n, k=1)


def to_free(A: np.ndarray) -> np.ndarray:
    """(..., n, n) 对称矩阵 -> (..., n(n-1)/2) 上三角向量"""
    rows, cols = upper_indices(A.shape[-1])
    return A[..., rows, cols]


def from_free(values: np.ndarray, n: int) -> np.ndarray:
    """(..., n(n-1)/2) 上三角向量 -> (..., n, n) 对称、零对角矩阵"""
    rows, cols = upper_indices(n)
    A = np.zeros(values.shape[:-1] + (n, n), dtype=float)
    A[..., rows, cols] = values
    A[..., cols, rows] = values
    return A


def symmetric_noise(rng: np.random.Generator, batch_shape: Tuple[int, ...], n: int) -> np.ndarray:
    """采样对称、零对角的标准高斯噪声：只采上三角再镜像"""
    d = n * (n - 1) // 2
    return from_free(rng.standard_normal(tuple(batch_shape) + (d,)), n)


def free_sq_norm(A: np.ndarray) -> np.ndarray:
    """邻接矩阵在自由坐标下的平方范数"""
    return np.sum(to_free(A) ** 2, axis=-1)


def sq_norm(X: np.ndarray) -> np.ndarray:
    """节点特征矩阵的平方范数（对最后两维求和）"""
    return np.sum(X ** 2, axis=(-2, -1))


def mean_abs_free(X: np.ndarray, A: np.ndarray) -> float:
    """两通道全部自由坐标上的平均绝对值"""
    values = np.concatenate([X.reshape(-1), to_free(A).reshape(-1)])
    return float(np.mean(np.abs(values))) if values.size else 0.0


def spawn_rngs(seed: int, count: int) -> List[np.random.Generator]:
    """由同一个种子派生互相独立的随机流"""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def seeded_path(path: str, seed: int) -> str:
    """
    把随机种子写进输出文件名：{seed} 占位符直接替换；
    文件名里已有 seed<S> 时保持不变，否则在扩展名前追加 _seed<S>
    """
    if "{seed}" in path:
        return path.replace("{seed}", str(seed))
    directory, name = os.path.split(path)
    stem, ext = os.path.splitext(name)
    if re.search(rf"seed{seed}(?!\d)", stem):
        return path
    return os.path.join(directory, f"{stem}_seed{seed}{ext}")


# ---------------------------------------------------------------------------
# 文件读写
# ---------------------------------------------------------------------------

def save_json(path: str, payload: Any) -> None:
    """写出 JSON（固定键顺序，便于逐字节比对）"""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, indent=None, separators=(',', ':'))
        f.write('\n')


def load_json(path: str) -> Any:
    if not os.path.exists(path):
        raise FileNotFoundError(f"文件未找到: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def write_records(path: str, records: List[Dict[str, Any]]) -> None:
    """把逐步记录写成每行一个 JSON 的文件"""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    df = pd.DataFrame.from_records(records)
    df.to_json(path, orient='records', lines=True)


def read_records(path: str) -> pd.DataFrame:
    if not os.path.exists(path):
        raise FileNotFoundError(f"文件未找到: {path}")
    return pd.read_json(path, orient='records', lines=True)


def update_log(log_file: str, record: Dict[str, Any]) -> None:
    """向 CSV 日志追加一行记录"""
    os.makedirs(os.path.dirname(os.path.abspath(log_file)), exist_ok=True)
    df = pd.DataFrame([record])
    header = not os.path.exists(log_file) or os.path.getsize(log_file) == 0
    df.to_csv(log_file, mode='a', header=header, index=False)
