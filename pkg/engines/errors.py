"""
數值引擎的例外類別
皆繼承內建例外，呼叫端可直接用 ValueError / RuntimeError 捕捉。
"""

from typing import Optional


class DomainError(ValueError):
    """輸入超出函數定義域（非單位向量、x ≤ 0 等）"""


class GeometryError(ValueError):
    """原子球重疊或幾何設定不合法"""


class AsymptoticRangeError(ValueError):
    """漸近起點 r_asym 太小，位能尾巴仍高於門檻"""

    def __init__(self, message: str, measured_tail: float):
        super().__init__(message)
        self.measured_tail = measured_tail


class NearSingularError(RuntimeError):
    """矩陣接近奇異（可能是束縛態、共振或偶然簡併）"""

    def __init__(self, message: str, condition: float, center: Optional[int] = None):
        super().__init__(message)
        self.condition = condition
        self.center = center


class IndependenceError(RuntimeError):
    """正規解的欄向量失去線性獨立"""

    def __init__(self, message: str, condition: float):
        super().__init__(message)
        self.condition = condition


class ConvergenceError(RuntimeError):
    """數值積分加倍後仍未收斂"""

    def __init__(self, message: str, defect: float):
        super().__init__(message)
        self.defect = defect
