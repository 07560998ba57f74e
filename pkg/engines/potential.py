"""
位能引擎 - 多中心位能模型、對任意中心的多極投影、V = V_I + V_A 分解

V_I（distorting potential）在所有原子球外等於 V；球內每個多極分量以
r^l Σ_j c_j r^{2j} 的多項式平滑延拓，使 V_I 處處有限。
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from config import QuadratureConfig, ToleranceConfig
from engines.angular import channel_l, real_sh_matrix
from engines.errors import DomainError, GeometryError
from utils.quadrature import sphere_product_quadrature


# ============================================================
# 位能項與模型
# ============================================================
class TermKind(str, Enum):
    COULOMB = "coulomb"          # −2Z(1/r − 1/r_c)，r < r_c
    YUKAWA = "yukawa"            # −2A e^{−μr}/r
    GAUSSIAN = "gaussian"        # −V0 e^{−r²/a²}
    SQUARE_WELL = "square_well"  # −V0，r < a


@dataclass(frozen=True)
class PotentialTerm:
    """以某個原子中心為原點的解析位能項"""
    kind: TermKind
    center: int
    charge: float = 0.0
    cutoff: Optional[float] = None
    amplitude: float = 0.0
    screening: float = 1.0
    depth: float = 0.0
    width: float = 1.0
    radius: float = 1.0

    @property
    def singular(self) -> bool:
        return self.kind in (TermKind.COULOMB, TermKind.YUKAWA)

    def evaluate(self, d: np.ndarray) -> np.ndarray:
        d = np.asarray(d, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.kind is TermKind.COULOMB:
                values = -2.0 * self.charge / d
                if self.cutoff is not None:
                    values = np.where(d < self.cutoff, values + 2.0 * self.charge / self.cutoff, 0.0)
                return values
            if self.kind is TermKind.YUKAWA:
                return -2.0 * self.amplitude * np.exp(-self.screening * d) / d
        if self.kind is TermKind.GAUSSIAN:
            return -self.depth * np.exp(-(d / self.width) ** 2)
        return np.where(d < self.radius, -self.depth, 0.0)

    def breakpoint(self) -> Optional[float]:
        """數值或斜率不連續的半徑"""
        if self.kind is TermKind.SQUARE_WELL:
            return self.radius
        if self.kind is TermKind.COULOMB:
            return self.cutoff
        return None

    def support_radius(self, threshold: float, offset: float) -> float:
        """d 大於此值時 |V_t(d)|·(d + offset)² < threshold"""
        edge = self.breakpoint()
        if edge is not None:
            return edge
        if self.kind is TermKind.COULOMB:
            return np.inf

        def excess(d):
            value = abs(float(self.evaluate(np.array(d)))) * (d + offset) ** 2
            return np.log(max(value, 1e-300)) - np.log(threshold)

        lo = self.width if self.kind is TermKind.GAUSSIAN else 1.0 / self.screening
        hi = 2.0 * lo
        while excess(hi) > 0:
            lo, hi = hi, 2.0 * hi
            if hi > 1e4:
                return np.inf
        if excess(lo) <= 0:
            return lo
        return brentq(excess, lo, hi, xtol=1e-6)


class PotentialModel:
    """
    多中心一電子位能 V(r) = Σ_t V_t(|r − R_{c(t)}|) + V∞

    Args:
        positions: (N, 3) 原子中心 (bohr)
        terms: 解析位能項
        offset: 無窮遠處的常數 V∞ (Ry)
    """

    def __init__(self, positions, terms: Sequence[PotentialTerm], offset: float = 0.0):
        self.positions = np.atleast_2d(np.asarray(positions, dtype=float))
        self.terms: List[PotentialTerm] = list(terms)
        self.offset = float(offset)
        for term in self.terms:
            if not 0 <= term.center < len(self.positions):
                raise GeometryError(f"位能項的中心索引 {term.center} 不存在")

    @property
    def n_centers(self) -> int:
        return len(self.positions)

    def evaluate(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        values = np.full(len(points), self.offset)
        for term in self.terms:
            d = np.linalg.norm(points - self.positions[term.center], axis=1)
            values += term.evaluate(d)
        return values

    def singular_at(self, point) -> bool:
        point = np.asarray(point, dtype=float)
        for term in self.terms:
            if term.singular and np.linalg.norm(point - self.positions[term.center]) == 0.0:
                return True
        return False

    def breakpoints(self, center: int) -> List[float]:
        radii = {term.breakpoint() for term in self.terms if term.center == center}
        return sorted(r for r in radii if r is not None)

    def is_spherical_about(self, center: int) -> bool:
        return all(term.center == center for term in self.terms)

    def tail_radius(self, center: int, threshold: float) -> float:
        """以 center 為原點，|V − V∞|·r² < threshold 的起始半徑"""
        radius = 0.0
        for term in self.terms:
            offset = float(np.linalg.norm(self.positions[term.center] - self.positions[center]))
            radius = max(radius, offset + term.support_radius(threshold, offset))
        return radius


# ============================================================
# 幾何分割
# ============================================================
class MolecularPartition:
    """原子球 τ_i：中心 R_i、半徑 b_i，彼此不重疊"""

    def __init__(self, positions, radii):
        self.positions = np.atleast_2d(np.asarray(positions, dtype=float))
        self.radii = np.asarray(radii, dtype=float).reshape(-1)
        if len(self.radii) != len(self.positions):
            raise GeometryError("球半徑數量與原子中心數量不符")
        if np.any(self.radii <= 0):
            raise GeometryError("所有球半徑必須為正")
        for i in range(len(self.radii)):
            for j in range(i + 1, len(self.radii)):
                separation = np.linalg.norm(self.positions[j] - self.positions[i])
                if self.radii[i] + self.radii[j] > separation * (1 + 1e-12):
                    raise GeometryError(
                        f"原子球 {i} 與 {j} 重疊：b_i + b_j = {self.radii[i] + self.radii[j]:.6g}"
                        f" > |R_i − R_j| = {separation:.6g}"
                    )

    @property
    def n_centers(self) -> int:
        return len(self.radii)

    def displacement(self, i: int, j: int) -> np.ndarray:
        """R_ij = R_j − R_i"""
        return self.positions[j] - self.positions[i]

    def locate(self, points) -> np.ndarray:
        """每個點所在的球索引；在球隙區為 −1"""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        owner = np.full(len(points), -1)
        for i, (center, b) in enumerate(zip(self.positions, self.radii)):
            inside = np.linalg.norm(points - center, axis=1) < b
            owner[inside] = i
        return owner

    def nearest(self, point) -> int:
        distances = np.linalg.norm(self.positions - np.asarray(point, dtype=float), axis=1)
        return int(np.argmin(distances))


# ============================================================
# 多極展開
# ============================================================
@dataclass
class MultipoleExpansion:
    """以某個中心為原點的 v_L(r)，l ≤ l_max_pot"""
    center: int
    origin: np.ndarray
    radii: np.ndarray
    components: np.ndarray
    l_max_pot: int
    quadrature_defect: float = 0.0
    _splines: Optional[CubicSpline] = field(default=None, repr=False)

    def at(self, r) -> np.ndarray:
        """任意半徑的分量（三次樣條內插）"""
        if self._splines is None:
            self._splines = CubicSpline(self.radii, self.components, axis=0)
        return self._splines(r)

    def reconstruct(self, points) -> np.ndarray:
        """Σ_L v_L(r) Y_L(r̂)"""
        rel = np.atleast_2d(np.asarray(points, dtype=float)) - self.origin
        r = np.linalg.norm(rel, axis=1)
        dirs = np.where(r[:, None] > 0, rel / np.where(r > 0, r, 1.0)[:, None], [0.0, 0.0, 1.0])
        y = real_sh_matrix(self.l_max_pot, dirs)
        return np.sum(self.at(r) * y, axis=1)


def _projection_rule(l_max_pot: int, refine: int = 1):
    n_theta = refine * (2 * l_max_pot + QuadratureConfig.PROJECTION_EXTRA)
    dirs, weights, _ = sphere_product_quadrature(n_theta, 2 * n_theta)
    return dirs, weights, real_sh_matrix(l_max_pot, dirs)


def project_function(
    func: Callable[[np.ndarray], np.ndarray],
    origin,
    radii,
    l_max_pot: int,
    chunk: int = 64,
) -> np.ndarray:
    """v_L(r) = ∫ f(origin + r r̂) Y_L(r̂) dΩ，形狀 (len(radii), (l_max_pot+1)²)"""
    origin = np.asarray(origin, dtype=float)
    radii = np.asarray(radii, dtype=float)
    dirs, weights, y = _projection_rule(l_max_pot)
    weighted_y = y * weights[:, None]
    out = np.empty((len(radii), y.shape[1]))
    for start in range(0, len(radii), chunk):
        block = radii[start:start + chunk]
        points = origin + block[:, None, None] * dirs[None, :, :]
        values = func(points.reshape(-1, 3)).reshape(len(block), len(weights))
        out[start:start + chunk] = values @ weighted_y
    return out


def projection_defect(func, origin, radii, l_max_pot: int, samples: int = 5) -> float:
    """在少數半徑上以加倍積分階數估計投影誤差"""
    radii = np.asarray(radii, dtype=float)
    picks = radii[np.unique(np.linspace(0, len(radii) - 1, min(samples, len(radii))).astype(int))]
    coarse = project_function(func, origin, picks, l_max_pot)
    dirs, weights, y = _projection_rule(l_max_pot, refine=2)
    points = np.asarray(origin)[None, None, :] + picks[:, None, None] * dirs[None, :, :]
    values = func(points.reshape(-1, 3)).reshape(len(picks), len(weights))
    fine = values @ (y * weights[:, None])
    scale = max(1.0, float(np.max(np.abs(fine))))
    return float(np.max(np.abs(fine - coarse))) / scale


def project_multipoles(model: PotentialModel, center: int, radii, l_max_pot: int,
                       check: bool = True) -> MultipoleExpansion:
    """
    將模型位能對中心 center 做多極投影

    Raises:
        無；投影誤差超過 ToleranceConfig.PROJECTION 時印出警告並記錄於 quadrature_defect
    """
    origin = model.positions[center]
    return _expansion(model.evaluate, center, origin, radii, l_max_pot, check, "V")


def _expansion(func, center, origin, radii, l_max_pot, check, label) -> MultipoleExpansion:
    radii = np.asarray(radii, dtype=float)
    if np.any(np.diff(radii) <= 0):
        raise DomainError("投影用的徑向格點必須嚴格遞增")
    components = project_function(func, origin, radii, l_max_pot)
    defect = projection_defect(func, origin, radii, l_max_pot) if check else 0.0
    if defect > ToleranceConfig.PROJECTION:
        print(f"⚠️ 中心 {center} 的 {label} 多極投影未達容許誤差：{defect:.2e}")
    return MultipoleExpansion(center, np.array(origin), radii, components, l_max_pot, defect)


# ============================================================
# V = V_I + V_A 分解
# ============================================================
class DistortingMode(str, Enum):
    CONTINUATION = "continuation"  # 球內多項式延拓
    IDENTITY = "identity"          # V_I ≡ V
    CONSTANT = "constant"          # V_I ≡ 常數（muffin-tin 極限）


def _falling(n: int, q: int) -> float:
    result = 1.0
    for s in range(q):
        result *= n - s
    return result


def _stencil_weights(offsets: np.ndarray, order: int) -> np.ndarray:
    """以 Vandermonde 系統求 order 階導數的有限差分權重（步長 1）"""
    n = len(offsets)
    powers = np.arange(n)
    factorials = np.cumprod(np.concatenate([[1.0], np.arange(1, n)]))
    vander = offsets[None, :] ** powers[:, None] / factorials[:, None]
    rhs = np.zeros(n)
    rhs[order] = 1.0
    return np.linalg.solve(vander, rhs)


@dataclass
class SphereContinuation:
    """單一原子球內的延拓多項式：P_L(r) = r^l Σ_j coeffs[L, j] r^{2j}"""
    center: int
    radius: float
    coeffs: np.ndarray
    l_max_pot: int

    def components(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        l_arr = channel_l(self.l_max_pot)
        powers = l_arr[None, :, None] + 2 * np.arange(self.coeffs.shape[1])[None, None, :]
        return np.sum(self.coeffs[None] * r[:, None, None] ** powers, axis=2)


class DistortedPotential:
    """
    V_I 與 V_A = V − V_I

    continuation 模式下 V_I 在所有球外精確等於 V，球內有限且在 ∂τ_i 連續
    （延拓階數 ≥ 2 時為 C¹）。
    """

    def __init__(self, model: PotentialModel, partition: MolecularPartition,
                 mode: DistortingMode = DistortingMode.CONTINUATION,
                 continuation_degree: int = 2, l_max_pot: int = 8,
                 constant: Optional[float] = None):
        if continuation_degree < 1:
            raise DomainError("continuation_degree 必須 ≥ 1")
        if partition.n_centers != model.n_centers:
            raise GeometryError("幾何分割與位能模型的中心數不符")
        self.model = model
        self.partition = partition
        self.mode = DistortingMode(mode)
        self.continuation_degree = continuation_degree
        self.l_max_pot = l_max_pot
        self.constant = model.offset if constant is None else float(constant)
        self.continuations: Dict[int, SphereContinuation] = {}
        if self.mode is DistortingMode.CONTINUATION:
            for i in range(partition.n_centers):
                self.continuations[i] = self._fit_sphere(i)

    @property
    def is_constant(self) -> bool:
        return self.mode is DistortingMode.CONSTANT

    def _fit_sphere(self, center: int) -> SphereContinuation:
        b = float(self.partition.radii[center])
        origin = self.partition.positions[center]
        delta = 1e-3 * b
        offsets = np.arange(-4, 5, dtype=float)
        samples = project_function(self.model.evaluate, origin, b + delta * offsets, self.l_max_pot)

        derivs = np.empty((self.continuation_degree, samples.shape[1]))
        for q in range(self.continuation_degree):
            derivs[q] = _stencil_weights(offsets, q) @ samples / delta ** q

        if self.continuation_degree >= 2:
            # 左右單邊一階導數必須一致，否則 b 處有不連續
            left = _stencil_weights(offsets[:5], 1) @ samples[:5] / delta
            right = _stencil_weights(offsets[4:], 1) @ samples[4:] / delta
            scale = np.maximum(np.abs(derivs[1]), np.abs(samples[4]) / b)
            mismatch = np.abs(left - right) / np.maximum(scale, 1e-8)
            if np.max(mismatch) > ToleranceConfig.DERIVATIVE_MISMATCH:
                raise DomainError(
                    f"中心 {center} 在 b = {b:.6g} 的導數估計失敗（左右差 {np.max(mismatch):.2e}），"
                    "請確認位能在球面上平滑"
                )

        l_arr = channel_l(self.l_max_pot)
        degree = self.continuation_degree
        coeffs = np.empty((len(l_arr), degree))
        for idx, l in enumerate(l_arr):
            system = np.array([
                [_falling(l + 2 * j, q) * b ** (l + 2 * j - q) for j in range(degree)]
                for q in range(degree)
            ])
            coeffs[idx] = np.linalg.solve(system, derivs[:, idx])
        return SphereContinuation(center, b, coeffs, self.l_max_pot)

    # --------------------------------------------------------
    # 點值
    # --------------------------------------------------------
    def evaluate_V(self, points) -> np.ndarray:
        return self.model.evaluate(points)

    def evaluate_I(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.mode is DistortingMode.CONSTANT:
            return np.full(len(points), self.constant)
        if self.mode is DistortingMode.IDENTITY:
            return self.model.evaluate(points)

        owner = self.partition.locate(points)
        values = np.empty(len(points))
        outside = owner < 0
        if np.any(outside):
            values[outside] = self.model.evaluate(points[outside])
        for i, cont in self.continuations.items():
            mask = owner == i
            if not np.any(mask):
                continue
            rel = points[mask] - self.partition.positions[i]
            r = np.linalg.norm(rel, axis=1)
            dirs = np.where(r[:, None] > 0, rel / np.where(r > 0, r, 1.0)[:, None], [0.0, 0.0, 1.0])
            values[mask] = np.sum(cont.components(r) * real_sh_matrix(self.l_max_pot, dirs), axis=1)
        return values

    def evaluate_A(self, points) -> np.ndarray:
        return self.evaluate_V(points) - self.evaluate_I(points)

    def eval_potential(self, which: str, point) -> float:
        """which ∈ {V, V_I, V_A}"""
        if which not in ("V", "V_I", "V_A"):
            raise DomainError(f"未知的位能種類：{which}")
        if which != "V_I" and self.model.singular_at(point):
            raise DomainError(f"位能在原子核 {np.asarray(point).tolist()} 處奇異")
        point = np.asarray(point, dtype=float)[None, :]
        if which == "V":
            return float(self.evaluate_V(point)[0])
        if which == "V_I":
            return float(self.evaluate_I(point)[0])
        return float(self.evaluate_A(point)[0])

    # --------------------------------------------------------
    # 投影
    # --------------------------------------------------------
    def project(self, which: str, center: int, radii, check: bool = True) -> MultipoleExpansion:
        """對中心 center 投影 V 或 V_I"""
        func = self.evaluate_I if which == "V_I" else self.evaluate_V
        origin = self.partition.positions[center]
        return _expansion(func, center, origin, radii, self.l_max_pot, check, which)

    def breakpoints(self, center: int, which: str) -> List[float]:
        """以 center 為原點的徑向不連續點（用來對齊格點）"""
        if which == "V_I" and self.mode is DistortingMode.CONSTANT:
            return []
        points = self.model.breakpoints(center)
        if which == "V_I" and self.mode is DistortingMode.CONTINUATION:
            b = float(self.partition.radii[center])
            points = [r for r in points if r > b] + [b]
        return sorted(set(points))


def build_distorting_potential(model: PotentialModel, partition: MolecularPartition,
                               continuation_degree: int = 2, l_max_pot: int = 8,
                               mode: DistortingMode = DistortingMode.CONTINUATION,
                               constant: Optional[float] = None) -> DistortedPotential:
    """建立 V_I（預設：值與斜率在 b_i 連續的多項式延拓）"""
    return DistortedPotential(model, partition, mode, continuation_degree, l_max_pot, constant)
