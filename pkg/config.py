"""
分类器解释引擎配置文件
"""
import os

# =====================================================
# 数据路径配置
# =====================================================
BASE_DIR = os.path.dirname(os.path.abspath(__file__))
DATA_DIR = os.path.join(BASE_DIR, "data")
OUTPUT_DIR = os.path.join(BASE_DIR, "runs")

FICO_MODEL_PATH = os.path.join(DATA_DIR, "fico_fixture.json")
FICO_ENTITY_PATH = os.path.join(DATA_DIR, "fico_entity.csv")
SYNTHETIC_DATASET_PATH = os.path.join(DATA_DIR, "synthetic_credit.csv")
SYNTHETIC_MODEL_PATH = os.path.join(DATA_DIR, "synthetic_credit_model.json")

# 计数列名（可选，缺省时每行 C=1）
COUNT_COLUMN = "C"
# 缺失值编码（仅用于 --drop-all-missing 过滤）
MISSING_CODE = -9

# =====================================================
# 评分默认值
# =====================================================
DEFAULT_MAX_CONTINGENCY = 1   # RESP 的 contingency 集合大小上限 c
DEFAULT_TOP_K = 4             # 比较报告中的 top-k
DEFAULT_FICO_M = 2            # FICO 解释保留的子量表数
DEFAULT_FICO_K = 2            # 每个子量表保留的特征数
DEFAULT_KERNEL_SAMPLES = 2048
DEFAULT_SEED = 20210701
DEFAULT_THRESHOLD = 0.5

# =====================================================
# 枚举预算
# =====================================================
PERMUTATION_MAX_FEATURES = 8          # n! 枚举
PRODUCT_JOINT_LIMIT = 10 ** 6         # Π|Di| 上限
COUNT_MODELS_MAX_VARS = 25
HARDNESS_MAX_VARS = 12
KERNEL_EXHAUSTIVE_MAX_FEATURES = 20

# =====================================================
# 并发配置
# =====================================================
MAX_WORKERS = int(os.environ.get("CE_THREADS", "1"))

# =====================================================
# 外部分类器进程配置
# =====================================================
ORACLE_TIMEOUT_MS = int(os.environ.get("CE_ORACLE_TIMEOUT_MS", "60000"))
ORACLE_MAX_RETRIES = 3
BASE_RETRY_DELAY = 0.5  # 秒
MAX_RETRY_DELAY = 8.0   # 最大延迟秒数
ORACLE_POLL_INTERVAL = 0.05  # 等待子进程时检查取消的间隔（秒）

# =====================================================
# 数值容差
# =====================================================
MARGINAL_TOLERANCE = 1e-12
EFFICIENCY_TOLERANCE = 1e-9

# =====================================================
# 日志配置
# =====================================================
LOG_DIR = os.path.join(BASE_DIR, "logs")
LOG_FORMAT = "%(asctime)s - %(levelname)s - %(name)s - %(message)s"
LOG_LEVEL = "INFO"

# =====================================================
# 退出码
# =====================================================
EXIT_OK = 0
EXIT_SELFTEST_FAILED = 1
EXIT_INTERRUPTED = 1
EXIT_CONFIG = 2
EXIT_ORACLE = 3
EXIT_TIMEOUT = 4
