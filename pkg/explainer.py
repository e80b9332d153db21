"""
解释运行引擎

核心功能:
- 加载数据集、分桶与分类器
- 实体选择（行号 / 实体文件 / 全部 L=1 的行）
- 按分数类型分派计算
- 并发解释，按输入顺序收集结果
- 超时后保留部分结果并明确标记
- 结果输出（JSON / Parquet）
"""
import json
import logging
import threading
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd

import config
from causal_scores import RespConfig, explain_counter, explain_resp
from classifier import CachedOracle, ClassifierOracle, ExternalOracle, SubscaleModel, load_model
from errors import ConfigError, ExplainError, OracleError, RunCancelledError
from explanation import TIE_BREAK_INDEX, Explanation
from fico_whitebox import explain_fico
from progress import ExplainProgress
from score_registry import ScoreConfig, ScoreKind, get_score_config
from shapley_scores import EXHAUSTIVE, explain_kernel_shap, explain_shap
from tabular import (
    BucketSpec, ColumnKind, Dataset, EmpiricalSpace, Entity, ProductSpace,
    bucketize, filter_all_missing, load_bucket_specs, load_dataset, load_entities, translate_entity
)

logger = logging.getLogger(__name__)

SELECT_ROWS = "rows"
SELECT_FILE = "file"
SELECT_LABEL1 = "label1"


@dataclass
class ScoreOptions:
    """分数计算参数"""
    max_contingency: int = config.DEFAULT_MAX_CONTINGENCY
    explain_zero: bool = False
    add_entity: bool = False
    levels: bool = False
    magnitude: bool = False
    kernel_samples: Union[int, str] = config.DEFAULT_KERNEL_SAMPLES
    seed: int = config.DEFAULT_SEED
    fico_m: int = config.DEFAULT_FICO_M
    fico_k: int = config.DEFAULT_FICO_K
    tie_break: str = TIE_BREAK_INDEX
    max_level: Optional[int] = None


@dataclass
class RunConfig:
    """一次 explain 运行的完整配置"""
    score: str
    output_dir: str
    dataset_path: Optional[str] = None
    model_path: Optional[str] = None
    oracle_command: Optional[List[str]] = None
    rows: Optional[List[int]] = None
    entity_file: Optional[str] = None
    label_one: bool = False
    bucket_spec_path: Optional[str] = None
    drop_all_missing: Optional[int] = None
    workers: int = config.MAX_WORKERS
    timeout_s: Optional[float] = None
    options: ScoreOptions = field(default_factory=ScoreOptions)

    @property
    def selector(self) -> str:
        return SELECT_ROWS if self.rows is not None else SELECT_FILE if self.entity_file else SELECT_LABEL1

    def validate(self) -> ScoreConfig:
        """校验配置，返回分数类型配置"""
        score_cfg = get_score_config(self.score)
        if score_cfg is None or not score_cfg.enabled:
            raise ConfigError(f"unknown score kind {self.score!r}")
        if (self.model_path is None) == (self.oracle_command is None):
            raise ConfigError("exactly one of --model or --oracle-cmd is required")
        selectors = [self.rows is not None, self.entity_file is not None, self.label_one]
        if sum(selectors) != 1:
            raise ConfigError("exactly one entity selector is required (--row, --entity-file or --entities label1)")
        if score_cfg.requires_subscale_model and self.model_path is None:
            raise ConfigError(f"score {self.score!r} needs a subscale model file")
        if score_cfg.needs_dataset and self.dataset_path is None:
            raise ConfigError(f"score {self.score!r} needs --data")
        if self.dataset_path is None and (self.rows is not None or self.label_one):
            raise ConfigError("--row and --entities label1 select rows of --data")
        if self.oracle_command is not None and self.dataset_path is None:
            raise ConfigError("--oracle-cmd needs --data for its feature names")
        if self.workers < 1:
            raise ConfigError("--workers must be >= 1")
        return score_cfg


@dataclass
class EntityResult:
    """单个实体的解释结果"""
    index: int
    entity: Entity
    status: str = "ok"
    explanation: Optional[Explanation] = None
    error: Optional[ExplainError] = None

    def to_dict(self) -> Dict[str, Any]:
        if self.explanation is not None:
            doc = self.explanation.to_dict()
        else:
            doc = {"entity": list(self.entity)}
        doc["index"] = self.index
        doc["status"] = self.status
        if self.error is not None:
            doc["error"] = str(self.error)
        return doc


@dataclass
class RunResult:
    results: List[EntityResult]
    features: Tuple[str, ...]
    timed_out: bool = False
    elapsed_seconds: float = 0.0

    @property
    def failures(self) -> List[EntityResult]:
        return [r for r in self.results if r.status == "failed"]


class ExplainContext:
    """
    一个数据集 + 分类器上的解释上下文

    两个概率空间只构造一次，经验空间的行标签缓存在实体间共享。
    cancel 置位后，分类器调用与 SHAP 子集枚举抛出 RunCancelledError。
    """

    def __init__(
        self,
        dataset: Optional[Dataset],
        oracle: ClassifierOracle,
        options: ScoreOptions,
        cancel: Optional[threading.Event] = None
    ):
        self.dataset = dataset
        self.oracle = oracle
        self.options = options
        self.cancel = cancel
        self.product = ProductSpace(dataset) if dataset is not None else None
        self.empirical = EmpiricalSpace(dataset) if dataset is not None else None
        self.cached = oracle if isinstance(oracle, CachedOracle) else CachedOracle(oracle, cancel)

    def explain(self, kind: ScoreKind, entity: Entity) -> Explanation:
        """按分数类型分派"""
        opts = self.options
        if kind is ScoreKind.COUNTER:
            return explain_counter(self.product, self.cached, entity, tie_break=opts.tie_break)
        if kind is ScoreKind.RESP:
            cfg = RespConfig(
                max_contingency_size=opts.max_contingency,
                tie_break=opts.tie_break,
                explain_zero=opts.explain_zero
            )
            return explain_resp(self.product, self.cached, entity, cfg)
        if kind is ScoreKind.SHAP:
            return explain_shap(
                self.empirical, self.cached, entity,
                add_entity=opts.add_entity, levels=opts.levels,
                magnitude=opts.magnitude, tie_break=opts.tie_break,
                max_level=opts.max_level, cancel=self.cancel
            )
        if kind is ScoreKind.KERNELSHAP:
            return explain_kernel_shap(
                self.empirical, self.cached, entity,
                n_samples=opts.kernel_samples, seed=opts.seed, add_entity=opts.add_entity,
                magnitude=opts.magnitude, tie_break=opts.tie_break
            )
        if kind is ScoreKind.FICO:
            if not isinstance(self.oracle, SubscaleModel):
                raise ConfigError("fico explanations need a subscale model")
            return explain_fico(self.oracle, entity, opts.fico_m, opts.fico_k)
        raise ConfigError(f"unsupported score kind {kind}")


def parse_kernel_samples(raw: str) -> Union[int, str]:
    if raw == EXHAUSTIVE:
        return EXHAUSTIVE
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"--samples must be an integer or {EXHAUSTIVE!r}, got {raw!r}") from None


class ExplanationRunner:
    """解释运行器"""

    def __init__(self, cfg: RunConfig):
        """
        初始化运行器

        Args:
            cfg: 运行配置（构造时校验）
        """
        self.cfg = cfg
        self.score_cfg = cfg.validate()
        self.kind = self.score_cfg.kind
        self.output_dir = Path(cfg.output_dir)
        self.progress = ExplainProgress()
        self.cancel = threading.Event()
        self.dataset: Optional[Dataset] = None
        self.raw_kinds: Dict[str, ColumnKind] = {}
        self.encoding: Dict[str, BucketSpec] = {}
        self.oracle: Optional[ClassifierOracle] = None
        self.features: Tuple[str, ...] = ()

    def load(self) -> None:
        """加载数据集、分桶与分类器"""
        cfg = self.cfg
        if cfg.dataset_path is not None:
            ds = load_dataset(cfg.dataset_path)
            if cfg.drop_all_missing is not None:
                ds = filter_all_missing(ds, cfg.drop_all_missing)
            # 实体文件按分桶前的列类型解析
            self.raw_kinds = ds.column_kinds
            if cfg.bucket_spec_path is not None:
                ds, self.encoding = bucketize(ds, load_bucket_specs(cfg.bucket_spec_path))
            self.dataset = ds
            self.features = ds.features

        if cfg.model_path is not None:
            model = load_model(cfg.model_path)
            if isinstance(model, SubscaleModel) and self.features:
                model = model.with_feature_order(self.features)
            elif isinstance(model, SubscaleModel):
                self.features = model.features
            self.oracle = model
        else:
            self.oracle = ExternalOracle(cfg.oracle_command, self.features, cancel=self.cancel)

        if self.oracle.arity is not None and self.features and self.oracle.arity != len(self.features):
            raise ConfigError(
                f"model arity {self.oracle.arity} does not match {len(self.features)} dataset features"
            )

    def select_entities(self) -> List[Entity]:
        """按选择器确定待解释实体（按输入顺序）"""
        cfg = self.cfg
        ds = self.dataset
        if cfg.rows is not None:
            for r in cfg.rows:
                if not 0 <= r < ds.N:
                    raise ConfigError(f"row {r} out of range (dataset has {ds.N} distinct rows)")
            return [ds.entities[r] for r in cfg.rows]

        if cfg.entity_file is not None:
            header, raw = load_entities(cfg.entity_file, self.raw_kinds or None)
            if ds is None:
                if isinstance(self.oracle, SubscaleModel):
                    self.oracle = self.oracle.with_feature_order(header)
                    self.features = tuple(header)
                return raw
            if tuple(header) != ds.features:
                raise ConfigError(f"entity file columns {header} do not match dataset features {list(ds.features)}")
            entities = []
            for e in raw:
                if self.encoding:
                    e = translate_entity(e, ds.features, self.encoding)
                entities.append(ds.check_entity(e))
            return entities

        labels = CachedOracle(self.oracle).classify_many(ds.entities)
        selected = [e for e, label in zip(ds.entities, labels) if label == 1]
        logger.info(f"Selected {len(selected)} of {ds.N} rows with label 1")
        return selected

    def _execute_task(self, context: ExplainContext, index: int, entity: Entity) -> EntityResult:
        """执行单个实体的解释任务"""
        try:
            explanation = context.explain(self.kind, entity)
            self.progress.record_success(index, self.kind.value, explanation.diagnostics.get("oracle_probes") or 0)
            return EntityResult(index=index, entity=entity, explanation=explanation)
        except RunCancelledError:
            self.progress.record_skip(index, self.kind.value, "timeout")
            return EntityResult(index=index, entity=entity, status="timeout")
        except ExplainError as e:
            logger.error(f"[{self.kind.value}][{index}] {e}")
            self.progress.record_failure(index, self.kind.value, str(e))
            return EntityResult(index=index, entity=entity, status="failed", error=e)

    def run(self) -> RunResult:
        """
        解释所有选中的实体

        Returns:
            RunResult（结果按输入顺序排列）
        """
        if self.oracle is None:
            self.load()
        entities = self.select_entities()
        context = ExplainContext(self.dataset, self.oracle, self.cfg.options, cancel=self.cancel)
        self.progress.add_total(len(entities))
        logger.info(f"Explaining {len(entities)} entities with {self.kind.value} ({self.cfg.workers} workers)")

        start_time = time.time()
        results: List[Optional[EntityResult]] = [None] * len(entities)
        executor = ThreadPoolExecutor(max_workers=self.cfg.workers)
        futures = {
            executor.submit(self._execute_task, context, i, e): i
            for i, e in enumerate(entities)
        }
        _, pending = wait(futures, timeout=self.cfg.timeout_s)
        timed_out = bool(pending)
        if timed_out:
            logger.warning(f"Timed out after {self.cfg.timeout_s}s with {len(pending)} entities unfinished")
            # 运行中的任务在下一次分类器调用或子集访问时退出，外部进程被终止
            self.cancel.set()
        executor.shutdown(wait=True, cancel_futures=timed_out)

        for future, i in futures.items():
            if not future.cancelled():
                results[i] = future.result()
        for i, e in enumerate(entities):
            if results[i] is None:
                self.progress.record_skip(i, self.kind.value, "timeout")
                results[i] = EntityResult(index=i, entity=e, status="timeout")
        self.progress.print_progress()
        print()

        elapsed = time.time() - start_time
        logger.info(f"Explanation completed in {elapsed:.1f}s")
        return RunResult(
            results=list(results),
            features=tuple(self.features),
            timed_out=timed_out,
            elapsed_seconds=elapsed
        )

    def summary(self, result: RunResult) -> Dict[str, Any]:
        """运行摘要（不含时间戳，可逐字节复现）"""
        statuses = Counter(r.status for r in result.results)
        explained = [r.explanation for r in result.results if r.explanation is not None]
        top1 = Counter(
            "⊥" if x.no_explanation or not x.ranking else x.ranking[0]
            for x in explained
        )
        return {
            "score": self.kind.value,
            "model": getattr(self.oracle, "name", None),
            "features": list(result.features),
            "entities": len(result.results),
            "ok": statuses.get("ok", 0),
            "failed": statuses.get("failed", 0),
            "timeout": statuses.get("timeout", 0),
            "partial": result.timed_out,
            "no_explanation": sum(1 for x in explained if x.no_explanation),
            "top1_distribution": dict(sorted(top1.items())),
            "seed": self.cfg.options.seed,
        }

    def _save_to_parquet(self, df: pd.DataFrame, file_path: Path) -> bool:
        """保存 DataFrame 到 Parquet 文件"""
        try:
            file_path.parent.mkdir(parents=True, exist_ok=True)
            df.to_parquet(file_path, engine="pyarrow", index=False)
            logger.debug(f"Saved {len(df)} rows to {file_path}")
            return True
        except Exception as e:
            logger.error(f"Failed to save {file_path}: {e}")
            return False

    def save(self, result: RunResult, started_at: Optional[datetime] = None) -> Dict[str, Path]:
        """
        写出结果文件

        - explanations.json / summary.json: 主输出，同配置同种子逐字节一致
        - scores.parquet: 扁平分数表
        - run_meta.json: 时间戳等非确定信息
        """
        self.output_dir.mkdir(parents=True, exist_ok=True)
        paths = {
            "explanations": self.output_dir / "explanations.json",
            "summary": self.output_dir / "summary.json",
            "scores": self.output_dir / "scores.parquet",
            "meta": self.output_dir / "run_meta.json",
        }
        doc = {
            "score": self.kind.value,
            "features": list(result.features),
            "partial": result.timed_out,
            "explanations": [r.to_dict() for r in result.results],
        }
        _write_json(paths["explanations"], doc)
        _write_json(paths["summary"], self.summary(result))

        records = []
        for r in result.results:
            if r.explanation is None:
                continue
            rank = {name: pos + 1 for pos, name in enumerate(r.explanation.ranking)}
            for s in r.explanation.scores:
                records.append({
                    "entity_index": r.index,
                    "feature": s.feature,
                    "value": float(s.value),
                    "rank": rank.get(s.feature, 0),
                })
        scores = pd.DataFrame(records, columns=["entity_index", "feature", "value", "rank"])
        self._save_to_parquet(scores, paths["scores"])

        _write_json(paths["meta"], {
            "started_at": (started_at or datetime.now()).isoformat(timespec="seconds"),
            "finished_at": datetime.now().isoformat(timespec="seconds"),
            "elapsed_seconds": round(result.elapsed_seconds, 3),
            "workers": self.cfg.workers,
            "progress": self.progress.get_progress(),
            "failures": self.progress.failures,
        })
        logger.info(f"Wrote results to {self.output_dir}")
        return paths


def _write_json(path: Path, doc: Any) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")


def explain_entities(
    dataset: Optional[Dataset],
    oracle: ClassifierOracle,
    entities: Sequence[Entity],
    kind: ScoreKind,
    options: Optional[ScoreOptions] = None,
    cancel: Optional[threading.Event] = None
) -> List[Explanation]:
    """库接口：单线程解释一组实体（用于分桶敏感度等批量分析）"""
    context = ExplainContext(dataset, oracle, options or ScoreOptions(), cancel=cancel)
    return [context.explain(kind, e) for e in entities]


def first_error(result: RunResult) -> Optional[ExplainError]:
    """失败实体中用于退出码映射的错误（OracleError 优先）"""
    errors = [r.error for r in result.failures if r.error is not None]
    for e in errors:
        if isinstance(e, OracleError):
            return e
    return errors[0] if errors else None
