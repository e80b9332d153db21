"""
解释任务进度追踪
"""
import logging
import threading
import time
from collections import Counter
from typing import Any, Dict, List, Optional

logger = logging.getLogger(__name__)

STATUS_OK = "ok"
STATUS_SKIPPED = "skipped"
STATUS_FAILED = "failed"


class ExplainProgress:
    """
    按实体记录解释状态（线程安全）

    工作线程调用 record_*，主线程在运行结束后读取 get_progress 写入 run_meta.json。
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._total = 0
        self._status: Counter = Counter()
        self._probes: Counter = Counter()
        self._events: List[Dict[str, Any]] = []
        self._started: Optional[float] = None

    def add_total(self, count: int) -> None:
        with self._lock:
            self._total += count
            if self._started is None:
                self._started = time.monotonic()

    def _record(self, status: str, index: int, score: str, **detail: Any) -> None:
        with self._lock:
            self._status[status] += 1
            self._events.append({"index": index, "score": score, "status": status, **detail})

    def record_success(self, index: int, score: str, probes: int = 0) -> None:
        """probes: 该实体解释过程中的分类器调用次数"""
        with self._lock:
            self._probes[score] += probes
        self._record(STATUS_OK, index, score)

    def record_skip(self, index: int, score: str, reason: str) -> None:
        self._record(STATUS_SKIPPED, index, score, reason=reason)

    def record_failure(self, index: int, score: str, error: str) -> None:
        logger.debug(f"[progress][{score}][{index}] failed: {error}")
        self._record(STATUS_FAILED, index, score, error=error)

    @property
    def failures(self) -> List[Dict[str, Any]]:
        with self._lock:
            return sorted(
                (e for e in self._events if e["status"] == STATUS_FAILED),
                key=lambda e: e["index"]
            )

    def get_progress(self) -> Dict[str, Any]:
        with self._lock:
            done = sum(self._status.values())
            elapsed = time.monotonic() - self._started if self._started is not None else 0.0
            return {
                "total": self._total,
                "processed": done,
                "completed": self._status[STATUS_OK],
                "skipped": self._status[STATUS_SKIPPED],
                "failed": self._status[STATUS_FAILED],
                "oracle_probes": dict(self._probes),
                "entities_per_second": round(done / elapsed, 3) if elapsed > 0 else None,
            }

    def print_progress(self) -> None:
        p = self.get_progress()
        pct = p["processed"] / p["total"] * 100 if p["total"] else 0.0
        print(
            f"\r实体: {p['processed']}/{p['total']} ({pct:.1f}%) | "
            f"成功: {p['completed']} | 失败: {p['failed']} | 超时未完成: {p['skipped']} | "
            f"分类器调用: {sum(p['oracle_probes'].values())}",
            end="",
            flush=True
        )
