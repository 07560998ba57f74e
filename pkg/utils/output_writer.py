"""
輸出工具
CSV 結果表、JSON 執行清單、文字驗證報告與徑向解除錯輸出
"""

import csv
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from config import OutputConfig

# 清單中記錄版本的套件
TRACKED_PACKAGES = ("numpy", "scipy", "sympy", "pydantic", "python-dotenv")


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """浮點數以 repr 輸出（可逐位元重現）"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(value) for value in row])
    print(f"📝 已寫入：{path}")
    return path


def write_json_model(path: Path, model) -> Path:
    """Pydantic 模型 → 縮排 JSON"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(model.model_dump_json(indent=2) + "\n", encoding="utf-8")
    print(f"📝 已寫入：{path}")
    return path


def write_report(path: Path, title: str, checks: List, notes: Sequence[str] = ()) -> Path:
    """每項檢查一行：PASS/FAIL、名稱、缺陷、門檻、情境"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    failed = sum(not check.passed for check in checks)
    lines = [title, "=" * 60]
    lines.extend(notes)
    lines.append(f"checks: {len(checks)}  passed: {len(checks) - failed}  failed: {failed}")
    lines.append("-" * 60)
    width = max((len(check.name) for check in checks), default=10)
    for check in checks:
        status = "PASS" if check.passed else "FAIL"
        lines.append(
            f"{status}  {check.name:<{width}}  defect={check.defect:.3e}  tol={check.tolerance:.1e}  {check.context}"
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"📝 已寫入：{path}")
    return path


def package_versions() -> Dict[str, str]:
    versions = {}
    for name in TRACKED_PACKAGES:
        try:
            versions[name] = version(name)
        except PackageNotFoundError:
            versions[name] = "not installed"
    return versions


def write_radial_dump(path: Path, solution, channels: Optional[int] = None) -> Path:
    """
    徑向解的除錯輸出：r 與前幾個對角元素的 Re/Im（值與導數）

    GridRadialSolution 取儲存的格點；解析解取 200 個等距點。
    """
    channels = min(OutputConfig.DUMP_CHANNELS if channels is None else channels, solution.dim)
    radii = getattr(solution, "nodes", None)
    if radii is None:
        lo, hi = solution.r_range
        lo = max(lo, 1e-3)
        hi = hi if np.isfinite(hi) else 20.0
        radii = np.linspace(lo, hi, 200)
    values, derivs = solution.evaluate(radii)
    header = ["r"]
    for L in range(channels):
        header += [f"re_p{L}{L}", f"im_p{L}{L}", f"re_dp{L}{L}", f"im_dp{L}{L}"]
    rows = []
    for n, r in enumerate(radii):
        row = [float(r)]
        for L in range(channels):
            v, d = complex(values[n, L, L]), complex(derivs[n, L, L])
            row += [v.real, v.imag, d.real, d.imag]
        rows.append(row)
    return write_csv(path, header, rows)
