"""
設定檔與結果的資料模型
使用 Pydantic 定義；設定檔為帶版本標頭的 JSON
"""

import json
from enum import Enum
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from config import CONFIG_FORMAT, SCHEMA_VERSION


class ConfigError(ValueError):
    """設定檔無法解析或不符合資料模型"""


class RunMode(str, Enum):
    """執行模式"""
    SINGLE_SCATTER = "single_scatter"
    MSW_CONTINUUM = "msw_continuum"
    MSW_BOUND_SCAN = "msw_bound_scan"
    VERIFY = "verify"


class PotentialKind(str, Enum):
    COULOMB = "coulomb"
    YUKAWA = "yukawa"
    GAUSSIAN = "gaussian"
    SQUARE_WELL = "square_well"


class DistortingModeName(str, Enum):
    CONTINUATION = "continuation"  # 預設
    IDENTITY = "identity"
    CONSTANT = "constant"


# ============================================================
# 設定檔
# ============================================================
class AtomSpec(BaseModel):
    """原子中心與原子球"""
    position: Tuple[float, float, float] = Field(..., description="中心座標 (bohr)")
    sphere_radius: float = Field(..., gt=0, description="原子球半徑 b_i (bohr)")


class TermSpec(BaseModel):
    """解析位能項（Rydberg）"""
    kind: PotentialKind
    center: int = Field(..., ge=0, description="所屬原子索引")
    charge: float = Field(default=0.0, description="coulomb：核電荷 Z")
    cutoff: Optional[float] = Field(default=None, gt=0, description="coulomb：截斷半徑")
    amplitude: float = Field(default=0.0, description="yukawa：強度 A")
    screening: float = Field(default=1.0, gt=0, description="yukawa：屏蔽 μ")
    depth: float = Field(default=0.0, description="gaussian / square_well：深度 V0")
    width: float = Field(default=1.0, gt=0, description="gaussian：寬度 a")
    radius: float = Field(default=1.0, gt=0, description="square_well：半徑 a")


class PotentialSpec(BaseModel):
    offset: float = Field(default=0.0, description="無窮遠處的常數 V∞ (Ry)")
    terms: List[TermSpec] = Field(default_factory=list)


class DistortingSpec(BaseModel):
    """V_I 的建構方式"""
    mode: DistortingModeName = Field(default=DistortingModeName.CONTINUATION)
    continuation_degree: int = Field(default=2, ge=1, le=4, description="球面上匹配的導數階數")
    constant: Optional[float] = Field(default=None, description="constant 模式的值（預設 V∞）")


class EnergySpec(BaseModel):
    """能量格點：直接列出，或 start / stop / steps"""
    values: Optional[List[float]] = None
    start: Optional[float] = None
    stop: Optional[float] = None
    steps: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _one_form(self):
        ranged = (self.start, self.stop, self.steps)
        if self.values is None and any(v is None for v in ranged):
            raise ValueError("需要 values，或同時提供 start、stop、steps")
        if self.values is not None and any(v is not None for v in ranged):
            raise ValueError("values 與 start/stop/steps 只能擇一")
        return self

    def grid(self) -> List[float]:
        if self.values is not None:
            return [float(v) for v in self.values]
        return [float(v) for v in np.linspace(self.start, self.stop, self.steps)]


class BoundScanSpec(BaseModel):
    window: Tuple[float, float] = Field(..., description="能量視窗 (Ry)，須低於 V∞")
    steps: int = Field(default=40, ge=3)
    threshold: Optional[float] = Field(default=None, gt=0, description="σ_min/σ_max 門檻")

    @field_validator("window")
    @classmethod
    def _ordered(cls, value):
        if not value[0] < value[1]:
            raise ValueError("window 必須由低到高")
        return value


class GridSpec(BaseModel):
    """徑向格點覆寫（未指定者取 config.GridConfig）"""
    step: Optional[float] = Field(default=None, gt=0, le=0.05)
    scale: Optional[float] = Field(default=None, gt=0)
    r_min: Optional[float] = Field(default=None, gt=0)
    r_asymptotic: Optional[float] = Field(default=None, gt=0, description="手動指定 r_asym")
    reorthogonalize: Optional[bool] = Field(default=None, description="外向積分時 QR 重新正交化（預設開啟）")


class ToleranceSpec(BaseModel):
    """驗證門檻覆寫"""
    identity: Optional[float] = Field(default=None, gt=0)
    surface_matching: Optional[float] = Field(default=None, gt=0)
    solve_residual: Optional[float] = Field(default=None, gt=0)
    green: Optional[float] = Field(default=None, gt=0)


class DwmsConfigFile(BaseModel):
    """物理輸入：幾何、位能、能量與截斷"""
    format: Literal["dwms-config"] = CONFIG_FORMAT
    version: int = SCHEMA_VERSION
    atoms: List[AtomSpec] = Field(..., min_length=1)
    potential: PotentialSpec = Field(default_factory=PotentialSpec)
    distorting: DistortingSpec = Field(default_factory=DistortingSpec)
    energies: Optional[EnergySpec] = None
    bound_scan: Optional[BoundScanSpec] = None
    incident_direction: Tuple[float, float, float] = (0.0, 0.0, 1.0)
    l_max: int = Field(default=6, ge=0, le=20)
    l_max_pot: int = Field(default=8, ge=0, le=24)
    grid: GridSpec = Field(default_factory=GridSpec)
    tolerances: ToleranceSpec = Field(default_factory=ToleranceSpec)

    model_config = {
        "json_schema_extra": {
            "examples": [
                {
                    "format": "dwms-config",
                    "version": 1,
                    "atoms": [{"position": [0.0, 0.0, 0.0], "sphere_radius": 2.0}],
                    "potential": {"offset": 0.0, "terms": [
                        {"kind": "square_well", "center": 0, "depth": 2.0, "radius": 2.0}
                    ]},
                    "energies": {"values": [1.0]},
                    "l_max": 6,
                }
            ]
        }
    }

    @field_validator("version")
    @classmethod
    def _supported(cls, value):
        if value != SCHEMA_VERSION:
            raise ValueError(f"不支援的版本 {value}（目前為 {SCHEMA_VERSION}）")
        return value

    @field_validator("incident_direction")
    @classmethod
    def _nonzero(cls, value):
        if np.linalg.norm(value) == 0:
            raise ValueError("入射方向不可為零向量")
        return value

    @model_validator(mode="after")
    def _terms_reference_atoms(self):
        for idx, term in enumerate(self.potential.terms):
            if term.center >= len(self.atoms):
                raise ValueError(f"potential.terms[{idx}].center = {term.center} 超出原子數量")
        return self


def load_config(path) -> DwmsConfigFile:
    """
    讀取並驗證設定檔

    Raises:
        ConfigError: JSON 錯誤附行列位置；資料模型錯誤附欄位路徑
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"找不到設定檔：{path}")
    text = path.read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: JSON 格式錯誤：{e.msg}") from e
    if not isinstance(raw, dict) or raw.get("format") != CONFIG_FORMAT:
        raise ConfigError(f"{path}: 缺少標頭 \"format\": \"{CONFIG_FORMAT}\"")
    try:
        return DwmsConfigFile.model_validate(raw)
    except ValidationError as e:
        details = "; ".join(
            f"{'.'.join(str(part) for part in err['loc']) or '(root)'}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"{path}: 設定檔內容不合法：{details}") from e


# ============================================================
# 執行設定
# ============================================================
class RunConfig(BaseModel):
    """一次 CLI 執行"""
    config_path: Path
    mode: RunMode
    output_dir: Path
    workers: int = Field(default=1, ge=1)
    verbose: bool = False
    dump_radial: bool = False
    problem: DwmsConfigFile

    @model_validator(mode="after")
    def _energies_fit_mode(self):
        offset = self.problem.potential.offset
        if self.mode in (RunMode.SINGLE_SCATTER, RunMode.MSW_CONTINUUM, RunMode.VERIFY):
            if self.problem.energies is None:
                raise ValueError(f"{self.mode.value} 模式需要 energies")
            bad = [e for e in self.problem.energies.grid() if e <= offset]
            if bad:
                raise ValueError(f"連續態能量必須大於 V∞ = {offset}：{bad}")
        if self.mode is RunMode.MSW_BOUND_SCAN:
            if self.problem.bound_scan is None:
                raise ValueError("msw_bound_scan 模式需要 bound_scan")
            if self.problem.bound_scan.window[1] >= offset:
                raise ValueError(f"束縛態視窗必須低於 V∞ = {offset}")
        return self


# ============================================================
# 結果與清單
# ============================================================
class CheckResult(BaseModel):
    """一項恆等式 / 不變量檢查"""
    name: str
    defect: float
    tolerance: float
    passed: bool
    context: str = ""


class GridRecord(BaseModel):
    center: int
    kind: str = Field(..., description="V_I 或 V（R^i 用）")
    energy: float
    r_min: float
    r_max: float
    step: float
    nodes: int
    anchors: List[float] = Field(default_factory=list)


class SingleScatterRecord(BaseModel):
    energy: float
    wavenumber: float
    sigma_integrated: float
    sigma_optical: float
    sigma_partial_wave: Optional[float] = None
    unitarity_defect: float
    symmetry_defect: float


class MswEnergyRecord(BaseModel):
    energy: float
    wavenumber: float
    secular_condition: float
    solve_residual: float
    t_inverse_symmetry: float
    block_symmetry: float
    surface_matching: float
    swap_symmetry: Optional[float] = None
    sigma_integrated: float
    sigma_optical: float
    B: Optional[List[List[Tuple[float, float]]]] = Field(default=None, description="每個中心的 B^i（Re, Im）")


class RunManifest(BaseModel):
    """JSON 執行清單：可重現執行所需的一切（無時間戳）"""
    schema_version: int = SCHEMA_VERSION
    mode: RunMode
    config: DwmsConfigFile
    tolerances: Dict[str, float] = Field(default_factory=dict)
    grid_defaults: Dict[str, float] = Field(default_factory=dict)
    grids: List[GridRecord] = Field(default_factory=list)
    packages: Dict[str, str] = Field(default_factory=dict)
    checks: List[CheckResult] = Field(default_factory=list)
    artifacts: List[str] = Field(default_factory=list)
    exit_status: int = 0


class MswResults(BaseModel):
    """msw_continuum 的逐能量結果"""
    schema_version: int = SCHEMA_VERSION
    incident_direction: Tuple[float, float, float]
    records: List[MswEnergyRecord] = Field(default_factory=list)
