import configparser
from typing import Dict, Any, Optional
from pathlib import Path


class Config:
    # 桥过程配置（X 与 A 两个通道默认相同）
    ALPHA = -0.5
    SIGMA0_SQ = 1.0   # t=0 时的方差
    SIGMA1_SQ = 0.04  # t=T 时的方差
    T = 1.0

    # 训练配置
    EPSILON = 1e-3        # 训练时间截断
    LOSS_MODE = "weighted_gamma"
    LOSS_C = 100.0        # simplified_c 模式下的常数系数
    LAMBDA = 5.0          # 邻接矩阵损失权重
    LR = 0.01
    MOMENTUM = 0.9
    GRAD_CLIP = 1.0
    EPOCHS = 100
    BATCH = 16
    LR_FINAL = None       # 余弦退火的终点学习率，为空时学习率恒定
    HIDDEN = 64
    LAYERS = 3
    TIME_DIM = 8
    MAX_DEGREE = 8
    RW_STEPS = 6          # 随机游走返回概率特征的步数

    # 采样配置
    STEPS = 1000
    SNR = 0.1
    ODE_EPS = 1e-3
    CHUNK_SIZE = 64       # 每个随机流负责的轨迹数

    # 配置文件中允许出现的键
    FILE_KEYS = {
        "alpha_x": float, "alpha_a": float,
        "sigma0_sq_x": float, "sigma0_sq_a": float,
        "sigma1_sq_x": float, "sigma1_sq_a": float,
        "T": float, "epsilon": float, "lambda": float,
        "loss_mode": str, "c": float, "lr": float,
        "epochs": int, "batch": int, "hidden": int, "layers": int,
        "momentum": float, "grad_clip": float,
        "time_dim": int, "max_degree": int, "rw_steps": int, "lr_final": float,
    }

    @classmethod
    def get_bridge_config(cls) -> Dict[str, Any]:
        """获取桥过程相关的配置"""
        return {
            "alpha_x": cls.ALPHA,
            "alpha_a": cls.ALPHA,
            "sigma0_sq_x": cls.SIGMA0_SQ,
            "sigma0_sq_a": cls.SIGMA0_SQ,
            "sigma1_sq_x": cls.SIGMA1_SQ,
            "sigma1_sq_a": cls.SIGMA1_SQ,
            "T": cls.T,
        }

    @classmethod
    def get_train_config(cls) -> Dict[str, Any]:
        """获取训练相关的配置"""
        return {
            "epsilon": cls.EPSILON,
            "loss_mode": cls.LOSS_MODE,
            "c": cls.LOSS_C,
            "lambda": cls.LAMBDA,
            "lr": cls.LR,
            "momentum": cls.MOMENTUM,
            "grad_clip": cls.GRAD_CLIP,
            "epochs": cls.EPOCHS,
            "batch": cls.BATCH,
            "lr_final": cls.LR_FINAL,
        }

    @classmethod
    def get_model_config(cls) -> Dict[str, Any]:
        """获取模型结构相关的配置"""
        return {
            "hidden": cls.HIDDEN,
            "layers": cls.LAYERS,
            "time_dim": cls.TIME_DIM,
            "max_degree": cls.MAX_DEGREE,
            "rw_steps": cls.RW_STEPS,
        }

    @classmethod
    def get_sampler_config(cls) -> Dict[str, Any]:
        """获取采样相关的配置"""
        return {
            "steps": cls.STEPS,
            "snr": cls.SNR,
            "ode_eps": cls.ODE_EPS,
            "chunk_size": cls.CHUNK_SIZE,
        }

    @classmethod
    def defaults(cls) -> Dict[str, Any]:
        """合并后的全部默认值（键名与配置文件一致）"""
        merged = {}
        merged.update(cls.get_bridge_config())
        merged.update(cls.get_train_config())
        merged.update(cls.get_model_config())
        return merged

    @classmethod
    def load(cls, path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        """
        读取 key = value 格式的配置文件，并叠加在默认值之上
        :param path: 配置文件路径，为 None 时只使用默认值
        :param overrides: 命令行覆盖项，值为 None 的项会被忽略
        :return: 完整配置字典
        """
        values = cls.defaults()
        if path is not None:
            if not Path(path).exists():
                raise FileNotFoundError(f"配置文件未找到: {path}")
            parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
            parser.optionxform = str  # 保留键名大小写（T）
            parser.read_string("[config]\n" + Path(path).read_text(encoding="utf-8"))
            for key, raw in parser["config"].items():
                if key not in cls.FILE_KEYS:
                    raise ValueError(f"未知的配置项: {key}")
                values[key] = cls.FILE_KEYS[key](raw.strip())
        for key, value in (overrides or {}).items():
            if value is not None:
                values[key] = value
        if values["loss_mode"] not in ("weighted_gamma", "simplified_c"):
            raise ValueError(f"未知的损失模式: {values['loss_mode']}")
        return values

