"""
分类器解释引擎主程序

用法:
    python main.py <command> [options]

命令:
    explain      对选中的实体计算解释（counter/resp/shap/kernelshap/fico）
    compare      比较两次 explain 的输出（top-1 分布、top-k 交集、Jaccard）
    sensitivity  不同等深分桶数下的 top-1 分布
    bucketize    对数据集分桶并写出映射
    selftest     运行自检
    list         列出所有分数类型
"""
import argparse
import json
import logging
import shlex
import sys
import time
from datetime import datetime
from pathlib import Path
from typing import List, Optional

import config
from compare_report import (
    bucket_sensitivity, compare_sets, load_explanation_set, write_histogram_csv, write_plot_data
)
from errors import ConfigError, ExplainError, OracleError, OracleTimeoutError
from explainer import ExplanationRunner, RunConfig, ScoreOptions, first_error, parse_kernel_samples
from explanation import TIE_BREAKS
from score_registry import ALL_SCORES, get_all_spaces, get_scores_by_space
from selftest import SelfTestRunner
from tabular import bucketize, filter_all_missing, load_bucket_specs, load_dataset

logger = logging.getLogger("main")


def setup_logging():
    """Ensure log directory exists and configure logging"""
    Path(config.LOG_DIR).mkdir(parents=True, exist_ok=True)

    logging.basicConfig(
        level=getattr(logging, config.LOG_LEVEL),
        format=config.LOG_FORMAT,
        handlers=[
            logging.StreamHandler(),
            logging.FileHandler(
                Path(config.LOG_DIR) / f"explain_{int(time.time())}.log",
                encoding="utf-8"
            )
        ]
    )


def list_scores():
    """列出所有分数类型"""
    print(f"\n{'=' * 72}")
    print(f"{'Score':<12} | {'Space':<10} | {'Label 1':<7} | {'Description'}")
    print(f"{'-' * 72}")
    for space in get_all_spaces():
        for score in get_scores_by_space(space):
            needs_one = "yes" if score.requires_label_one else "no"
            print(f"{score.name:<12} | {score.space:<10} | {needs_one:<7} | {score.description}")
    print(f"{'=' * 72}")
    print(f"Total scores: {len(ALL_SCORES)}")


def _add_source_args(parser: argparse.ArgumentParser) -> None:
    """数据集、分类器与实体选择参数（explain 与 sensitivity 共用）"""
    parser.add_argument("--data", help="数据集 CSV/Parquet 路径")
    parser.add_argument("--model", help="模型文件 (JSON)")
    parser.add_argument("--oracle-cmd", help="外部分类器命令 (stdin CSV -> stdout 标签)")
    parser.add_argument("--row", type=int, action="append", help="按规范顺序的行号 (可重复)")
    parser.add_argument("--entity-file", help="实体 CSV (表头为特征名)")
    parser.add_argument("--entities", choices=["label1"], help="label1: 数据集中所有 L=1 的行")
    parser.add_argument("--drop-all-missing", type=int, metavar="CODE", help="删除所有特征都等于 CODE 的行")
    parser.add_argument("--score", default="resp", choices=[s.name for s in ALL_SCORES], help="分数类型")
    parser.add_argument("--max-gamma", type=int, default=config.DEFAULT_MAX_CONTINGENCY, help="RESP 的 |Γ| 上限 c")
    parser.add_argument("--explain-zero", action="store_true", help="按对称性解释 L(e*)=0 的实体")
    parser.add_argument("--add-entity", action="store_true", help="e* 不在数据集中时以计数 1 插入")
    parser.add_argument("--levels", action="store_true", help="输出 SHAP 分层贡献")
    parser.add_argument("--magnitude", action="store_true", help="SHAP 按绝对值排名")
    parser.add_argument("--max-level", type=int, help="SHAP: 只累加第 0..ℓ 层（子集大小 <= ℓ 的近似）")
    parser.add_argument("--top", type=int, default=config.DEFAULT_FICO_M, help="FICO: 保留的子量表数 M")
    parser.add_argument("--per-subscale", type=int, default=config.DEFAULT_FICO_K, help="FICO: 每个子量表的特征数 K")
    parser.add_argument("--samples", default=str(config.DEFAULT_KERNEL_SAMPLES), help="KernelSHAP 采样数或 exhaustive")
    parser.add_argument("--seed", type=int, default=config.DEFAULT_SEED, help="随机种子")
    parser.add_argument("--tie-break", default=TIE_BREAKS[0], choices=list(TIE_BREAKS), help="同分次序")
    parser.add_argument("--workers", type=int, default=config.MAX_WORKERS, help="并发线程数")
    parser.add_argument("--timeout", type=float, help="整次运行的超时秒数")


def _run_config(args: argparse.Namespace, output_dir: str, buckets: Optional[str]) -> RunConfig:
    options = ScoreOptions(
        max_contingency=args.max_gamma,
        explain_zero=args.explain_zero,
        add_entity=args.add_entity,
        levels=args.levels,
        magnitude=args.magnitude,
        kernel_samples=parse_kernel_samples(args.samples),
        seed=args.seed,
        fico_m=args.top,
        fico_k=args.per_subscale,
        tie_break=args.tie_break,
        max_level=args.max_level
    )
    return RunConfig(
        score=args.score,
        output_dir=output_dir,
        dataset_path=args.data,
        model_path=args.model,
        oracle_command=shlex.split(args.oracle_cmd) if args.oracle_cmd else None,
        rows=args.row,
        entity_file=args.entity_file,
        label_one=args.entities == "label1",
        bucket_spec_path=buckets,
        drop_all_missing=args.drop_all_missing,
        workers=config.MAX_WORKERS,
        timeout_s=args.timeout,
        options=options
    )


def cmd_explain(args: argparse.Namespace) -> int:
    started_at = datetime.now()
    runner = ExplanationRunner(_run_config(args, args.out, args.buckets))
    runner.load()
    result = runner.run()
    runner.save(result, started_at)

    summary = runner.summary(result)
    print("\n" + "=" * 50)
    print("Explanation Complete!")
    print(f"Score: {summary['score']}")
    print(f"Entities: {summary['entities']}")
    print(f"OK: {summary['ok']}")
    print(f"Failed: {summary['failed']}")
    print(f"Timeout: {summary['timeout']}")
    print(f"No explanation: {summary['no_explanation']}")
    print(f"Output: {args.out}")
    print("=" * 50 + "\n")

    error = first_error(result)
    if error is not None:
        raise error
    if result.timed_out:
        logger.error(f"Run timed out; partial results marked in {args.out}")
        return config.EXIT_TIMEOUT
    return config.EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    xs = load_explanation_set(args.a)
    ys = load_explanation_set(args.b)
    report = compare_sets(xs, ys, args.k)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "compare_report.json", "w", encoding="utf-8") as f:
        json.dump(report, f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")

    histogram = {int(k): v for k, v in report["intersection_histogram"].items()}
    write_histogram_csv(out / "intersection_histogram.csv", histogram, key_name="intersection")
    write_histogram_csv(out / "top1_a.csv", report["top1"]["a"], key_name="feature")
    write_histogram_csv(out / "top1_b.csv", report["top1"]["b"], key_name="feature")
    if args.plot_data:
        write_plot_data(out / "intersection.dat", histogram, title=f"top-{args.k} intersection {xs.kind} vs {ys.kind}")
        write_plot_data(out / "top1_a.dat", report["top1"]["a"], title=f"top-1 {xs.kind}")
        write_plot_data(out / "top1_b.dat", report["top1"]["b"], title=f"top-1 {ys.kind}")

    mean = report["jaccard_mean"]
    print(f"Mean Jaccard (top-{args.k}): {'n/a' if mean is None else f'{mean:.4f}'}")
    print(f"Intersection histogram: {report['intersection_histogram']}")
    print(f"Report: {out / 'compare_report.json'}")
    return config.EXIT_OK


def cmd_sensitivity(args: argparse.Namespace) -> int:
    runner = ExplanationRunner(_run_config(args, args.out, None))
    runner.load()
    if runner.dataset is None:
        raise ConfigError("sensitivity needs --data")
    entities = runner.select_entities()
    results = bucket_sensitivity(
        runner.dataset, runner.oracle, entities, runner.kind,
        args.k, runner.cfg.options, timeout_s=args.timeout, cancel=runner.cancel
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = {str(k): {key: v for key, v in entry.items() if key != "elapsed_seconds"} for k, entry in results.items()}
    with open(out / "sensitivity.json", "w", encoding="utf-8") as f:
        json.dump({"score": runner.kind.value, "entities": len(entities), "runs": doc},
                  f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")
    for k, entry in results.items():
        write_histogram_csv(out / f"top1_k{k}.csv", entry["distribution"], key_name="feature")
        print(f"k={k}: {entry['status']} ({entry['elapsed_seconds']:.2f}s) {entry['distribution']}")
    if any(entry["status"] == "timeout" for entry in results.values()):
        return config.EXIT_TIMEOUT
    return config.EXIT_OK


def cmd_bucketize(args: argparse.Namespace) -> int:
    ds = load_dataset(args.data)
    if args.drop_all_missing is not None:
        ds = filter_all_missing(ds, args.drop_all_missing)
    bucketized, encoding = bucketize(ds, load_bucket_specs(args.spec))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    bucketized.frame.to_csv(out, index=False, lineterminator="\n")
    mapping_path = Path(args.mapping) if args.mapping else out.with_suffix(".mapping.json")
    with open(mapping_path, "w", encoding="utf-8") as f:
        json.dump({name: spec.to_json() for name, spec in encoding.items()},
                  f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")
    print(f"Bucketized {ds.N} rows -> {bucketized.N} distinct rows: {out}")
    print(f"Mapping: {mapping_path}")
    return config.EXIT_OK


def cmd_selftest(args: argparse.Namespace) -> int:
    runner = SelfTestRunner(seed=args.seed)
    runner.validate_all(args.check)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    runner.save_report(args.out)
    return config.EXIT_OK if runner.ok else config.EXIT_SELFTEST_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Classifier Explanation Engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("explain", help="计算解释")
    _add_source_args(p)
    p.add_argument("--buckets", help="分桶规格 JSON")
    p.add_argument("--out", default=str(Path(config.OUTPUT_DIR) / "explain"), help="输出目录")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("compare", help="比较两次 explain 的输出")
    p.add_argument("a", help="第一个 explanations.json")
    p.add_argument("b", help="第二个 explanations.json")
    p.add_argument("-k", type=int, default=config.DEFAULT_TOP_K, help="top-k")
    p.add_argument("--out", default=str(Path(config.OUTPUT_DIR) / "compare"), help="输出目录")
    p.add_argument("--plot-data", action="store_true", help="同时写出 gnuplot 数据文件")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sensitivity", help="分桶数敏感度")
    _add_source_args(p)
    p.add_argument("-k", type=int, nargs="+", default=[2, 4, 8], help="等深分桶数列表")
    p.add_argument("--out", default=str(Path(config.OUTPUT_DIR) / "sensitivity"), help="输出目录")
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("bucketize", help="对数据集分桶")
    p.add_argument("--data", required=True, help="数据集路径")
    p.add_argument("--spec", required=True, help="分桶规格 JSON")
    p.add_argument("--out", required=True, help="输出 CSV")
    p.add_argument("--mapping", help="映射 JSON (默认与输出 CSV 同名)")
    p.add_argument("--drop-all-missing", type=int, metavar="CODE", help="删除所有特征都等于 CODE 的行")
    p.set_defaults(func=cmd_bucketize)

    p = sub.add_parser("selftest", help="运行自检")
    p.add_argument("--check", nargs="+", help="只运行指定检查")
    p.add_argument("--seed", type=int, default=config.DEFAULT_SEED, help="随机种子")
    p.add_argument("--out", default=str(Path(config.OUTPUT_DIR) / "selftest_report.json"), help="报告路径")
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("list", help="列出所有分数类型")
    p.set_defaults(func=lambda args: list_scores() or config.EXIT_OK)
    return parser


def exit_code_for(error: BaseException) -> int:
    """异常 -> 退出码"""
    if isinstance(error, OracleTimeoutError):
        return config.EXIT_TIMEOUT
    if isinstance(error, OracleError):
        return config.EXIT_ORACLE
    return config.EXIT_CONFIG


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging()

    # 更新配置
    if getattr(args, "workers", None) is not None:
        config.MAX_WORKERS = args.workers

    try:
        return args.func(args)
    except (ExplainError, OSError, json.JSONDecodeError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return exit_code_for(e)
    except KeyboardInterrupt:
        logger.warning("Interrupted by user")
        return config.EXIT_INTERRUPTED


if __name__ == "__main__":
    sys.exit(main())
