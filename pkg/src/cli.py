"""
命令行入口：数据生成、oracle 采样、训练、网络采样、评估、轨迹分析

退出码：0 正常，1 运行失败，2 参数错误
"""
import sys
import logging
import argparse
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from bridge import GraphBridge
from config import Config
from graphs import TOY_KINDS, DataGenerator, load_dataset, load_graphs, save_graphs
from metrics import VALIDITY_RULES, evaluate
from predictor import MixtureNet, TrainConfig, build_net, train
from simulator import GraphSampler, LearnedSource, OracleSource, SamplerConfig
from utils import read_records, save_json, seeded_path, setup_logging, spawn_rngs, write_records

logger = logging.getLogger(__name__)


def _banner(title: str, rows: Dict[str, object]) -> None:
    print(f"\n=== {title} ===")
    for key, value in rows.items():
        print(f"{key}: {value}")
    print("=" * (len(title) + 8) + "\n")


def _sampler_config(args, sampler_cfg: Dict) -> SamplerConfig:
    return SamplerConfig(
        steps=args.steps,
        corrector_steps=getattr(args, "corrector_steps", 0) if getattr(args, "pc", False) else 0,
        snr=getattr(args, "snr", None) or sampler_cfg["snr"],
        early_stop_fraction=args.early_stop,
        ode_eps=sampler_cfg["ode_eps"],
        chunk_size=args.chunk_size or sampler_cfg["chunk_size"],
    )


def _node_counts(data, seed: int, num: int) -> np.ndarray:
    """节点数与采样分块使用不同的熵源"""
    return data.sample_node_counts(np.random.default_rng([seed, 1]), num)


def _write_samples(args, result) -> None:
    out = seeded_path(args.out, args.seed)
    save_graphs(out, result.graphs)
    l1 = result.l1_distances
    _banner("采样完成", {
        "图数量": len(result.graphs),
        "量化前 L1 距离中位数": f"{float(np.median(l1)):.3e}",
        "L1 < 1e-2 的比例": f"{100.0 * float(np.mean(l1 < 1e-2)):.1f}%",
        "随机种子": args.seed,
        "输出文件": out,
    })
    if getattr(args, "traj", None):
        traj = seeded_path(args.traj, args.seed)
        write_records(traj, result.records)
        logger.info(f"已写出 {len(result.trajectories)} 条轨迹记录到 {traj}")


# ---------------------------------------------------------------------------
# 子命令
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> None:
    generator = DataGenerator(args.seed)
    graphs = generator.generate(args.kind, args.count, args.nodes, args.toy_kind)
    out = seeded_path(args.out, args.seed)
    generator.save(out, graphs)
    _banner("数据生成完成", {"类型": args.kind, "数量": len(graphs), "随机种子": args.seed, "输出文件": out})


def cmd_oracle_sample(args) -> None:
    if args.ode and args.pc:
        raise ValueError("--ode 与 --pc 不能同时使用")
    if args.ode and args.traj:
        raise ValueError("--ode 不记录轨迹")
    data = load_dataset(args.data)
    bridge = GraphBridge.from_config(Config.load(args.config))
    cfg = _sampler_config(args, Config.get_sampler_config())
    node_counts = _node_counts(data, args.seed, args.num)
    sampler = GraphSampler(OracleSource(data, bridge), cfg, mode="ode" if args.ode else "sde")
    result = sampler.generate(node_counts, args.seed, jobs=args.jobs, record=bool(args.traj))
    _write_samples(args, result)


def cmd_train(args) -> None:
    data = load_dataset(args.data)
    values = Config.load(args.config, {"epochs": args.epochs})
    bridge = GraphBridge.from_config(values)
    init_rng, train_rng = spawn_rngs(args.seed, 2)
    net = build_net(data, values, bridge, init_rng)
    _banner("训练配置", {"数据集": f"{args.data} ({len(data)} 个图)",
                      "特征类型": data.feature_kind.value,
                      "损失模式": values["loss_mode"],
                      "轮数": values["epochs"],
                      "批大小": values["batch"]})
    net, history = train(net, data, TrainConfig.from_config(values, args.seed), train_rng, args.log)
    out = seeded_path(args.out, args.seed)
    net.save(out)
    logger.info(f"模型已保存到 {out}，最终损失 {history[-1]:.6f}")


def cmd_sample(args) -> None:
    net = MixtureNet.load(args.model)
    data = load_dataset(args.data)
    cfg = _sampler_config(args, Config.get_sampler_config())
    node_counts = _node_counts(data, args.seed, args.num)
    result = GraphSampler(LearnedSource(net), cfg).generate(node_counts, args.seed, jobs=args.jobs,
                                                            record=bool(args.traj))
    _write_samples(args, result)


def cmd_eval(args) -> None:
    ref = load_graphs(args.ref)
    gen = load_graphs(args.gen)
    report = evaluate(ref, gen, args.rule, jobs=args.jobs)
    save_json(args.out, report)
    rows = {f"MMD {name}": f"{value:.6f}" for name, value in report["mmd"].items()}
    rows.update({"有效": f"{report['valid']:.1f}%", "唯一": f"{report['unique']:.1f}%",
                 "新颖": f"{report['novel']:.1f}%", "V.U.N.": f"{report['vun']:.1f}%"})
    _banner("评估结果", rows)


def summarize_trajectories(df: pd.DataFrame) -> Dict:
    """
    每条轨迹的收敛步：量化预测从此一直等于最后一步量化预测的第一个步号
    early_stop_fraction = convergence_step / 步数
    """
    required = {"trajectory", "step", "matches_final"}
    if df.empty or not required.issubset(df.columns):
        raise ValueError(f"轨迹文件缺少字段: {sorted(required - set(df.columns))}")
    rows = []
    for traj_id, group in df.sort_values(["trajectory", "step"]).groupby("trajectory"):
        steps = len(group)
        misses = group.loc[~group["matches_final"].astype(bool), "step"]
        convergence = 0 if misses.empty else int(misses.max()) + 1
        rows.append({"trajectory": int(traj_id), "steps": steps, "convergence_step": convergence,
                     "early_stop_fraction": convergence / steps})
    per_traj = pd.DataFrame(rows)
    conv = per_traj["convergence_step"].describe(percentiles=[0.1, 0.5, 0.9])
    frac = per_traj["early_stop_fraction"]
    return {
        "num_trajectories": len(per_traj),
        "steps": int(per_traj["steps"].max()),
        "convergence_step": {k: float(v) for k, v in conv.drop("count").items()},
        "early_stop_fraction": {
            "mean": float(frac.mean()),
            "median": float(frac.median()),
            "max": float(frac.max()),
        },
        "per_trajectory": per_traj["convergence_step"].tolist(),
    }


def cmd_inspect(args) -> None:
    summary = summarize_trajectories(read_records(args.traj))
    save_json(args.out, summary)
    _banner("轨迹分析", {
        "轨迹数": summary["num_trajectories"],
        "收敛步中位数": summary["convergence_step"]["50%"],
        "平均可提前停止比例": f"{summary['early_stop_fraction']['mean']:.3f}",
    })


# ---------------------------------------------------------------------------
# 参数解析
# ---------------------------------------------------------------------------

def _add_sampling_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--steps", type=int, default=Config.STEPS)
    p.add_argument("--num", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--traj", help="逐步轨迹记录（JSONL）")
    p.add_argument("--early-stop", type=float, default=1.0, help="只运行 round(f·K) 步")
    p.add_argument("--chunk-size", type=int)
    p.add_argument("--jobs", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graph-mixture", description="基于 OU 桥混合的图生成")
    parser.add_argument("--log-file", help="额外写入的日志文件")
    parser.add_argument("--verbose", action="store_true", help="输出 DEBUG 日志")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="生成数据集")
    p.add_argument("--kind", choices=("toy", "sbm", "planar"), required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--nodes", help="N 或 MIN-MAX（sbm 为社区大小范围）")
    p.add_argument("--toy-kind", choices=TOY_KINDS, default="mixed")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("oracle-sample", help="用精确图混合采样")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--pc", action="store_true", help="预测-校正采样")
    p.add_argument("--corrector-steps", type=int, default=1)
    p.add_argument("--snr", type=float)
    p.add_argument("--ode", action="store_true", help="概率流 ODE 采样")
    _add_sampling_args(p)
    p.set_defaults(func=cmd_oracle_sample)

    p = sub.add_parser("train", help="训练 MixtureNet")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, help="覆盖配置文件中的 epochs")
    p.add_argument("--log", help="逐轮损失 CSV")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="用训练好的网络采样")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="节点数分布的来源")
    _add_sampling_args(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="评估生成的图")
    p.add_argument("--ref", required=True)
    p.add_argument("--gen", required=True)
    p.add_argument("--rule", choices=sorted(VALIDITY_RULES), default="none")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="分析轨迹记录")
    p.add_argument("--traj", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    setup_logging(args.log_file, logging.DEBUG if args.verbose else logging.INFO)
    try:
        args.func(args)
    except (ValueError, FloatingPointError, FileNotFoundError, RuntimeError, KeyError) as e:
        logger.error(f"{args.command} 失败: {e}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
