"""
共用設定檔 - DW-MS 多重散射計算的數值參數
單位：Rydberg / bohr。可用 DWMS_ 開頭的環境變數（或 .env）覆寫部分參數。
"""

import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()


def _env_float(name: str, default: float) -> float:
    value = os.getenv(name)
    return float(value) if value else default


def _env_int(name: str, default: int) -> int:
    value = os.getenv(name)
    return int(value) if value else default


# 設定檔與結果清單的格式版本
SCHEMA_VERSION = 1
CONFIG_FORMAT = "dwms-config"


# ============================================================
# 徑向格點
# ============================================================
class GridConfig:
    # 映射座標 x = ln r + r / c：靠近原子核為對數格點，遠處轉為線性
    R_MIN = _env_float("DWMS_GRID_R_MIN", 1e-5)
    STEP = _env_float("DWMS_GRID_STEP", 0.01)          # x 方向最大步長
    LINEAR_SCALE = _env_float("DWMS_GRID_SCALE", 2.0)  # c (bohr)
    K_STEP_LIMIT = 0.05                                # k·Δr 上限
    # |V − V∞|·r² 小於此值才視為進入漸近區
    ASYMPTOTIC_THRESHOLD = 1e-10
    ASYMPTOTIC_MARGIN = 2.0   # 漸近區外再多留的距離 (bohr)
    EXTRA_NODES = 4           # R^i 積分越過球面的額外格點數
    # 外向積分時每隔多少步檢查欄向量成長並重新縮放
    RESCALE_INTERVAL = 50
    # 非球對稱耦合下只靠縮放會讓正規解的欄向量失去獨立
    REORTHOGONALIZE = os.getenv("DWMS_REORTHOGONALIZE", "1") == "1"


# ============================================================
# 容許誤差與病態門檻
# ============================================================
class ToleranceConfig:
    UNIT_VECTOR = 1e-12
    M_COND_MAX = 1e10            # cond(M₊) 超過即視為接近束縛態 / 共振
    INDEPENDENCE_COND_MAX = 1e12  # 正規解欄向量失去線性獨立
    INNER_WRONSKIAN_COND_MAX = 1e12
    SECULAR_COND_MAX = 1e12
    GREEN_EXCLUSION = 0.05       # |r − s| 小於此值拒絕計算 Green 函數
    K_DOUBLING = 1e-8            # 表面積分加倍收斂判準
    PROJECTION = 1e-8            # 多極投影加倍檢查
    SURFACE_MATCHING = 1e-4      # ψ 在球面兩側的相對差
    SOLVE_RESIDUAL = 1e-10
    BOUND_THRESHOLD = 1e-4       # σ_min / σ_max 低於此值才列為束縛態候選
    DERIVATIVE_MISMATCH = 1e-4   # 球面上左右導數估計的相對差
    ENERGY_MATCH = 1e-8          # |k|² 與 E − V∞ 的相對差
    IDENTITY = 1e-7              # 驗證模式的預設門檻
    GREEN = 1e-6                 # Green 函數兩種形式的相對差
    OPTICAL = 1e-6               # 廣義光學定理
    CROSS_SECTION_GAP = 1e-4     # ∫|f|² 與光學定理的相對差
    TRANSLATION = 1e-7           # D 的反矩陣、群律與平面波平移（子區塊）
    FREE_K = 1e-6                # 自由 K 的表面積分與解析式
    FREE_FORM = 1e-10            # 自由解 Wronskian 常數
    SWAP_SYMMETRY = 1e-8
    UNITARITY_MARGIN = 2         # 么正性只檢查 l ≤ l_max − 2 子區塊


# ============================================================
# 數值積分階數
# ============================================================
class QuadratureConfig:
    # 多極投影：cosθ 方向 Gauss-Legendre 2·l_max_pot + 2 點
    PROJECTION_EXTRA = 2
    # 表面積分從 max(K_MIN_THETA, l_max + K_THETA_PAD) 開始加倍
    K_MIN_THETA = 16
    K_THETA_PAD = 8
    K_MAX_THETA = 256
    # 截面積分
    CROSS_SECTION_THETA = 48
    # 多原子激發通道額外的 l
    EXCITATION_MARGIN = 8
    # 輸出角分布表
    ANGULAR_THETA_POINTS = 37
    ANGULAR_PHI_POINTS = 1


# ============================================================
# 系統與效能設定
# ============================================================
class ProcessingConfig:
    # 平行處理最大執行緒數（能量掃描 / 原子對）
    MAX_WORKERS = _env_int("DWMS_MAX_WORKERS", 8)


# ============================================================
# 檔案命名
# ============================================================
class FileNames:
    CROSS_SECTIONS = "cross_sections.csv"
    ANGULAR_DISTRIBUTION = "angular_distribution.csv"
    MSW_RESULTS = "msw_results.json"
    MSW_CROSS_SECTIONS = "msw_cross_sections.csv"
    BOUND_STATES = "bound_states.csv"
    BOUND_SCAN = "bound_scan.csv"
    MANIFEST = "manifest.json"
    REPORT = "verification_report.txt"
    RADIAL_DUMP = "radial_dump_center{index}_{kind}.csv"


# ============================================================
# 輸出設定
# ============================================================
class OutputConfig:
    OUTPUT_DIR = Path(os.getenv("DWMS_OUTPUT_DIR") or (Path.cwd() / "dwms_output"))
    # 除錯輸出的矩陣元素（對角線前幾個通道）
    DUMP_CHANNELS = 4
