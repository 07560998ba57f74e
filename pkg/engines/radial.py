"""
徑向引擎 - 耦合徑向 Schrödinger 方程的矩陣 Numerov 積分

以 y = r·p 的二階形式 y'' = u y 求解，u = w + l(l+1)/r² − E。
格點使用映射座標 x = ln r + r/c（近核對數、遠處線性），並以
y = √r' Φ 消去一階項：Φ'' = [r'² u + ¾(r''/r')² − ½ r'''/r'] Φ。
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import wrightomega

from config import GridConfig, ToleranceConfig
from engines.angular import Truncation, channel_l, gaunt_table
from engines.errors import AsymptoticRangeError, DomainError, IndependenceError, NearSingularError
from engines.specfun import BesselKind, diagonal_values, xi_diagonal


class Regularity(str, Enum):
    REGULAR_ORIGIN = "regular_origin"
    OUTGOING = "outgoing_infinity"
    INCOMING = "incoming_infinity"
    DECAYING = "regular_infinity_decaying"


class Boundary(str, Enum):
    OUTGOING = "outgoing"
    INCOMING = "incoming"
    DECAYING = "decaying"


def wavenumber(energy: float, v_inf: float = 0.0) -> Tuple[float, bool]:
    """回傳 (k 或 κ, 是否為負能量)；k² = E − V∞"""
    k2 = energy - v_inf
    if k2 == 0.0:
        raise DomainError("E − V∞ = 0：零能量無法定義漸近邊界條件")
    return float(np.sqrt(abs(k2))), k2 < 0


# ============================================================
# 徑向格點
# ============================================================
@dataclass(frozen=True)
class RadialGrid:
    """x = ln r + r/c 上的等距格點"""
    x0: float
    h: float
    n: int
    scale: float
    r: np.ndarray = field(init=False, repr=False, compare=False)
    rp: np.ndarray = field(init=False, repr=False, compare=False)
    rpp: np.ndarray = field(init=False, repr=False, compare=False)
    rppp: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        c = self.scale
        x = self.x0 + self.h * np.arange(self.n)
        r = c * np.real(wrightomega(x - np.log(c)))
        rp = r * c / (r + c)
        rpp = rp * c * c / (r + c) ** 2
        rppp = rp * c ** 4 / (r + c) ** 4 - 2.0 * rp ** 2 * c * c / (r + c) ** 3
        for name, value in (("r", r), ("rp", rp), ("rpp", rpp), ("rppp", rppp)):
            value.flags.writeable = False
            object.__setattr__(self, name, value)

    @property
    def x(self) -> np.ndarray:
        return self.x0 + self.h * np.arange(self.n)

    @property
    def r_max(self) -> float:
        return float(self.r[-1])

    def x_of(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return np.log(r) + r / self.scale

    def position(self, r) -> np.ndarray:
        """r 在格點上的（小數）索引"""
        return (self.x_of(r) - self.x0) / self.h

    def node_at(self, r: float, tol: float = 1e-9) -> Optional[int]:
        t = float(self.position(r))
        n = int(round(t))
        if abs(t - n) < tol and 0 <= n < self.n:
            return n
        return None

    def node_index(self, r: float) -> int:
        """最接近 r 的格點"""
        return int(np.clip(np.rint(self.position(r)), 0, self.n - 1))


def radial_grid(r_max: float, anchors: Sequence[float] = (), k: Optional[float] = None,
                r_min: Optional[float] = None, step: Optional[float] = None,
                scale: Optional[float] = None) -> RadialGrid:
    """
    建立徑向格點

    Args:
        r_max: 最外點（至少到此半徑）
        anchors: 必須恰為格點的半徑（依優先序，最多對齊前兩個）
        k: 波數；限制 k·Δr ≤ GridConfig.K_STEP_LIMIT
    """
    r_min = GridConfig.R_MIN if r_min is None else r_min
    step = GridConfig.STEP if step is None else step
    c = GridConfig.LINEAR_SCALE if scale is None else scale
    if k:
        step = min(step, GridConfig.K_STEP_LIMIT / (k * c))

    def x_of(r):
        return np.log(r) + r / c

    x_min, x_end = x_of(r_min), x_of(r_max)
    anchors = list(dict.fromkeys(float(a) for a in anchors if r_min < a < r_max))
    if len(anchors) > 2:
        print(f"⚠️ 不連續點過多，只對齊 {anchors[:2]}，其餘精度降為 O(h²)")
    anchors = sorted(anchors[:2])
    if len(anchors) == 2:
        span = x_of(anchors[1]) - x_of(anchors[0])
        step = span / np.ceil(span / step)
    if anchors:
        x_a = x_of(anchors[0])
        x0 = x_a - np.floor((x_a - x_min) / step) * step
    else:
        x0 = x_min
    n = int(np.ceil((x_end - x0) / step)) + 1
    return RadialGrid(float(x0), float(step), n, float(c))


# ============================================================
# 耦合位能矩陣
# ============================================================
@dataclass
class JumpData:
    """錨定格點上的單邊極限（不連續位能的 Numerov 修正）"""
    comp_minus: np.ndarray
    comp_plus: np.ndarray
    slope_minus: np.ndarray
    slope_plus: np.ndarray

    def truncated(self, n_comp: int) -> "JumpData":
        return JumpData(self.comp_minus[:n_comp], self.comp_plus[:n_comp],
                        self.slope_minus[:n_comp], self.slope_plus[:n_comp])


class CoupledPotentialMatrix:
    """
    w_{LL'}(r) = Σ_{L''} I(L, L', L'') v_{L''}(r)

    只儲存多極分量，w 在每個格點即時組合以節省記憶體。
    """

    def __init__(self, grid: RadialGrid, components: np.ndarray, l_max: int, l_max_pot: int,
                 v_inf: float = 0.0, jumps: Optional[Dict[int, JumpData]] = None):
        self.grid = grid
        self.trunc = Truncation(l_max)
        self.l_max_pot = l_max_pot
        self.v_inf = float(v_inf)
        l_c = min(l_max_pot, 2 * l_max)
        n_comp = (l_c + 1) ** 2
        self.components = np.asarray(components)[:, :n_comp]
        self.gamma = gaunt_table(l_max, l_c).stacked(n_comp)
        # 單邊極限與 components 同樣只保留前 n_comp 個多極
        self.jumps = {node: jump.truncated(n_comp) for node, jump in (jumps or {}).items()}
        self.centrifugal = channel_l(l_max) * (channel_l(l_max) + 1.0)

    @property
    def dim(self) -> int:
        return self.trunc.dim

    def w_from_components(self, comps: np.ndarray) -> np.ndarray:
        return np.tensordot(comps, self.gamma, axes=1)

    def w(self, n: int) -> np.ndarray:
        return self.w_from_components(self.components[n])

    def u(self, n: int, energy: float) -> np.ndarray:
        """u = w + l(l+1)/r² − E"""
        r = self.grid.r[n]
        return self.w(n) + np.diag(self.centrifugal / r ** 2 - energy)

    def _liouville(self, n: int, w: np.ndarray, energy: float) -> np.ndarray:
        g = self.grid
        r, rp = g.r[n], g.rp[n]
        lam = 0.75 * (g.rpp[n] / rp) ** 2 - 0.5 * g.rppp[n] / rp
        return rp ** 2 * (w + np.diag(self.centrifugal / r ** 2 - energy)) + lam * np.eye(self.dim)

    def F(self, n: int, energy: float, side: int = 0) -> np.ndarray:
        """
        Φ'' = F Φ 的係數

        不連續格點上 side = −1 / +1 取左 / 右極限，0 取兩側平均。
        以鄰點為中心的 Numerov 式必須用朝向中心那一側的極限。
        """
        jump = self.jumps.get(n)
        if jump is None:
            return self._liouville(n, self.w(n), energy)
        if side < 0:
            return self._liouville(n, self.w_from_components(jump.comp_minus), energy)
        if side > 0:
            return self._liouville(n, self.w_from_components(jump.comp_plus), energy)
        w_mean = 0.5 * (self.w_from_components(jump.comp_minus) + self.w_from_components(jump.comp_plus))
        return self._liouville(n, w_mean, energy)

    def jump_terms(self, n: int, energy: float):
        """(F₋, F₊, [F], [dF/dx])，[·] 為 x 增加方向的右側減左側"""
        jump = self.jumps[n]
        g = self.grid
        w_minus = self.w_from_components(jump.comp_minus)
        w_plus = self.w_from_components(jump.comp_plus)
        dw = w_plus - w_minus
        dslope = self.w_from_components(jump.slope_plus - jump.slope_minus)
        rp, rpp = g.rp[n], g.rpp[n]
        f_minus = self._liouville(n, w_minus, energy)
        f_plus = self._liouville(n, w_plus, energy)
        return f_minus, f_plus, rp ** 2 * dw, 2.0 * rp * rpp * dw + rp ** 3 * dslope

    def tail(self, n: int) -> float:
        """|V − V∞|·r² 的量測值（以多極分量估計）"""
        comps = np.array(self.components[n], dtype=float)
        comps[0] -= np.sqrt(4 * np.pi) * self.v_inf
        return float(np.max(np.abs(comps)) / np.sqrt(4 * np.pi) * self.grid.r[n] ** 2)


def build_potential_matrix(project: Callable[[np.ndarray], np.ndarray], grid: RadialGrid,
                           l_max: int, l_max_pot: int, v_inf: float = 0.0,
                           breakpoints: Sequence[float] = (),
                           node_range: Optional[Tuple[int, int]] = None) -> CoupledPotentialMatrix:
    """
    在格點上投影位能並建立 CoupledPotentialMatrix

    Args:
        project: radii → (len(radii), (l_max_pot+1)²) 的多極分量
        breakpoints: 位能不連續的半徑；落在格點上者記錄單邊極限
        node_range: 只投影 [lo, hi) 的格點（其餘以 V∞ 填補）
    """
    lo, hi = node_range if node_range is not None else (0, grid.n)
    n_comp = (l_max_pot + 1) ** 2
    components = np.zeros((grid.n, n_comp))
    components[:, 0] = np.sqrt(4 * np.pi) * v_inf
    components[lo:hi] = project(grid.r[lo:hi])

    jumps: Dict[int, JumpData] = {}
    eps = 1e-6
    for radius in breakpoints:
        if not grid.r[lo] < radius < grid.r[hi - 1]:
            continue
        node = grid.node_at(radius)
        if node is None:
            print(f"⚠️ 不連續點 r = {radius:.6g} 未落在格點上，局部精度降為 O(h²)")
            continue
        a = grid.r[node]
        samples = project(np.array([a * (1 - 2 * eps), a * (1 - eps), a * (1 + eps), a * (1 + 2 * eps)]))
        jumps[node] = JumpData(
            comp_minus=2 * samples[1] - samples[0],
            comp_plus=2 * samples[2] - samples[3],
            slope_minus=(samples[1] - samples[0]) / (a * eps),
            slope_plus=(samples[3] - samples[2]) / (a * eps),
        )
    return CoupledPotentialMatrix(grid, components, l_max, l_max_pot, v_inf, jumps)


# ============================================================
# 徑向解
# ============================================================
class RadialSolution(ABC):
    """通道矩陣值的徑向解：evaluate(r) 回傳 (值, dr 導數)"""

    regularity: Regularity
    energy: float
    trunc: Truncation
    wavenumber: float

    @property
    def dim(self) -> int:
        return self.trunc.dim

    @property
    @abstractmethod
    def r_range(self) -> Tuple[float, float]:
        ...

    @abstractmethod
    def evaluate(self, r) -> Tuple[np.ndarray, np.ndarray]:
        ...


class GridRadialSolution(RadialSolution):
    """
    格點取樣的解；非格點半徑以局部三次樣條（對 x）內插，
    實部與虛部、值與導數各自獨立內插。
    """

    WINDOW = 8

    def __init__(self, grid: RadialGrid, lo: int, values: np.ndarray, derivs: np.ndarray,
                 regularity: Regularity, energy: float, trunc: Truncation, wavenumber: float,
                 right_multiplier: Optional[np.ndarray] = None):
        self.grid = grid
        self.lo = lo
        self.values = values
        self.derivs = derivs
        self.regularity = regularity
        self.energy = energy
        self.trunc = trunc
        self.wavenumber = wavenumber
        self.right_multiplier = right_multiplier

    @property
    def hi(self) -> int:
        return self.lo + len(self.values) - 1

    @property
    def r_range(self) -> Tuple[float, float]:
        return float(self.grid.r[self.lo]), float(self.grid.r[self.hi])

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.r[self.lo:self.hi + 1]

    def evaluate(self, r) -> Tuple[np.ndarray, np.ndarray]:
        r = np.asarray(r, dtype=float)
        flat = r.reshape(-1)
        lo_r, hi_r = self.r_range
        if np.any(flat < lo_r * (1 - 1e-12)) or np.any(flat > hi_r * (1 + 1e-12)):
            raise DomainError(
                f"內插範圍不足：需要 [{flat.min():.6g}, {flat.max():.6g}]，"
                f"已儲存 [{lo_r:.6g}, {hi_r:.6g}]"
            )
        t = np.clip(self.grid.position(flat) - self.lo, 0.0, len(self.values) - 1)
        nearest = np.rint(t).astype(int)
        exact = np.abs(t - nearest) < 1e-9

        values = np.empty((len(flat), self.dim, self.dim), dtype=self.values.dtype)
        derivs = np.empty_like(values)
        values[exact] = self.values[nearest[exact]]
        derivs[exact] = self.derivs[nearest[exact]]

        pending = np.flatnonzero(~exact)
        if pending.size:
            width = min(self.WINDOW, len(self.values))
            starts = np.clip(np.floor(t[pending]).astype(int) - width // 2 + 1, 0, len(self.values) - width)
            x_nodes = self.grid.x[self.lo:self.hi + 1]
            x_req = self.grid.x_of(flat)
            for start in np.unique(starts):
                picks = pending[starts == start]
                window = slice(start, start + width)
                values[picks] = _spline(x_nodes[window], self.values[window], x_req[picks])
                derivs[picks] = _spline(x_nodes[window], self.derivs[window], x_req[picks])
        shape = r.shape + (self.dim, self.dim)
        return values.reshape(shape), derivs.reshape(shape)

    def conjugate(self) -> "GridRadialSolution":
        """q⁻ = (q⁺)*"""
        return GridRadialSolution(self.grid, self.lo, self.values.conj(), self.derivs.conj(),
                                  Regularity.INCOMING, self.energy, self.trunc, self.wavenumber)

    def scaled(self, multiplier: np.ndarray) -> "GridRadialSolution":
        """右乘常數矩陣（欄位重新組合）"""
        return GridRadialSolution(self.grid, self.lo, self.values @ multiplier, self.derivs @ multiplier,
                                  self.regularity, self.energy, self.trunc, self.wavenumber)


def _spline(x_nodes, samples, x_req):
    if np.iscomplexobj(samples):
        return (CubicSpline(x_nodes, samples.real, axis=0)(x_req)
                + 1j * CubicSpline(x_nodes, samples.imag, axis=0)(x_req))
    return CubicSpline(x_nodes, samples, axis=0)(x_req)


class FreeKind(str, Enum):
    REGULAR = "regular"                      # j(kr)
    OUTGOING = "outgoing"                    # −i h⁺(kr)
    INCOMING = "incoming"                    # +i h⁻(kr)
    DECAYING = "decaying"                    # i ξ k⁺(κr)
    MODIFIED_REGULAR = "modified_regular"    # i(κr)
    MODIFIED_IRREGULAR = "modified_irregular"  # k⁺(κr)


_FREE_REGULARITY = {
    FreeKind.REGULAR: Regularity.REGULAR_ORIGIN,
    FreeKind.MODIFIED_REGULAR: Regularity.REGULAR_ORIGIN,
    FreeKind.OUTGOING: Regularity.OUTGOING,
    FreeKind.INCOMING: Regularity.INCOMING,
    FreeKind.DECAYING: Regularity.DECAYING,
    FreeKind.MODIFIED_IRREGULAR: Regularity.DECAYING,
}


class FreeRadialSolution(RadialSolution):
    """常數位能下的解析對角解（V_I 為常數或作為參考解）"""

    def __init__(self, kind: FreeKind, wavenumber: float, trunc: Truncation, energy: float = 0.0):
        self.kind = FreeKind(kind)
        self.wavenumber = float(wavenumber)
        self.trunc = trunc
        self.energy = energy
        self.regularity = _FREE_REGULARITY[self.kind]

    @property
    def r_range(self) -> Tuple[float, float]:
        regular = self.kind in (FreeKind.REGULAR, FreeKind.MODIFIED_REGULAR)
        return (0.0 if regular else 1e-300), np.inf

    def diagonal(self, r) -> Tuple[np.ndarray, np.ndarray]:
        """對角元素 (..., dim)"""
        k = self.wavenumber
        l_max = self.trunc.l_max
        x = k * np.asarray(r, dtype=float)
        if self.kind is FreeKind.REGULAR:
            f, df = diagonal_values(BesselKind.J, l_max, x)
        elif self.kind is FreeKind.MODIFIED_REGULAR:
            f, df = diagonal_values(BesselKind.I_MOD, l_max, x)
        elif self.kind is FreeKind.MODIFIED_IRREGULAR:
            f, df = diagonal_values(BesselKind.K_PLUS_MOD, l_max, x)
        elif self.kind is FreeKind.OUTGOING:
            f, df = diagonal_values(BesselKind.H_PLUS, l_max, x)
            f, df = -1j * f, -1j * df
        elif self.kind is FreeKind.INCOMING:
            f, df = diagonal_values(BesselKind.H_MINUS, l_max, x)
            f, df = 1j * f, 1j * df
        else:
            f, df = diagonal_values(BesselKind.K_PLUS_MOD, l_max, x)
            phase = 1j * xi_diagonal(l_max)
            f, df = phase * f, phase * df
        return f, k * df

    def evaluate(self, r) -> Tuple[np.ndarray, np.ndarray]:
        f, df = self.diagonal(r)
        idx = np.arange(self.dim)
        values = np.zeros(f.shape + (self.dim,), dtype=f.dtype)
        derivs = np.zeros_like(values, dtype=np.result_type(df.dtype, f.dtype))
        values[..., idx, idx] = f
        derivs[..., idx, idx] = df
        return values, derivs


class CombinedRadialSolution(RadialSolution):
    """Σ_k s_k(r) X_k 的線性組合"""

    def __init__(self, parts: List[Tuple[RadialSolution, np.ndarray]], regularity: Regularity):
        self.parts = parts
        first = parts[0][0]
        self.trunc = first.trunc
        self.energy = first.energy
        self.wavenumber = first.wavenumber
        self.regularity = regularity

    @property
    def r_range(self) -> Tuple[float, float]:
        lows, highs = zip(*(sol.r_range for sol, _ in self.parts))
        return max(lows), min(highs)

    def evaluate(self, r) -> Tuple[np.ndarray, np.ndarray]:
        values = derivs = 0
        for sol, multiplier in self.parts:
            v, d = sol.evaluate(r)
            values = values + v @ multiplier
            derivs = derivs + d @ multiplier
        return values, derivs


# ============================================================
# 矩陣 Numerov
# ============================================================
def _sweep(potmat: CoupledPotentialMatrix, energy: float, nodes: np.ndarray,
           phi0: np.ndarray, phi1: np.ndarray, store_lo: int, store_hi: int,
           reorthogonalize: bool = False):
    """
    沿 nodes（連續遞增或遞減）推進 T_{n+1}Φ_{n+1} = AΦ_n − T_{n−1}Φ_{n−1} + J_n

    Returns:
        (Φ, Φ') 於 [store_lo, store_hi] 的格點，以及累積的右乘矩陣
    """
    h = potmat.grid.h
    h2 = h * h
    eye = np.eye(potmat.dim)
    direction = 1 if nodes[1] > nodes[0] else -1
    n_store = store_hi - store_lo + 1
    dtype = np.result_type(phi0.dtype, phi1.dtype)
    phis = np.zeros((n_store, potmat.dim, potmat.dim), dtype=dtype)
    dphis = np.zeros_like(phis)
    multiplier = np.eye(potmat.dim, dtype=dtype)

    # F_prev / F_next 是從中心格點看過去的單邊值
    F_prev = potmat.F(nodes[0], energy, side=direction)
    F_cur = potmat.F(nodes[1], energy)
    phi_prev, phi_cur = phi0, phi1
    if store_lo <= nodes[0] <= store_hi:
        phis[nodes[0] - store_lo] = phi0
    if store_lo <= nodes[1] <= store_hi:
        phis[nodes[1] - store_lo] = phi1

    for t in range(1, len(nodes) - 1):
        n, n_next = nodes[t], nodes[t + 1]
        F_next = potmat.F(n_next, energy, side=-direction)
        rhs = (2.0 * eye + (10.0 * h2 / 12.0) * F_cur) @ phi_cur - (eye - (h2 / 12.0) * F_prev) @ phi_prev
        jump_dF = None
        if n in potmat.jumps:
            f_minus, f_plus, jump_dF, jump_dFp = potmat.jump_terms(n, energy)
            if direction > 0:
                dphi = (phi_cur - phi_prev) / h + (h / 6.0) * (2.0 * f_minus @ phi_cur + F_prev @ phi_prev)
            else:
                dphi = (phi_prev - phi_cur) / h - (h / 6.0) * (2.0 * f_plus @ phi_cur + F_prev @ phi_prev)
            rhs = rhs + (h ** 3 / 12.0) * (jump_dFp @ phi_cur + jump_dF @ dphi)
        phi_next = np.linalg.solve(eye - (h2 / 12.0) * F_next, rhs)

        if store_lo <= n <= store_hi:
            central = ((eye - (h2 / 6.0) * F_next) @ phi_next - (eye - (h2 / 6.0) * F_prev) @ phi_prev)
            dphi_n = direction * central / (2.0 * h)
            if jump_dF is not None:
                dphi_n = dphi_n - (h / 6.0) * jump_dF @ phi_cur
            dphis[n - store_lo] = dphi_n
        if store_lo <= n_next <= store_hi:
            phis[n_next - store_lo] = phi_next

        if reorthogonalize and t % GridConfig.RESCALE_INTERVAL == 0:
            _, upper = np.linalg.qr(phi_next)
            fix = np.linalg.inv(upper)
            phi_next, phi_cur = phi_next @ fix, phi_cur @ fix
            phis, dphis = phis @ fix, dphis @ fix
            multiplier = multiplier @ fix
        elif t % GridConfig.RESCALE_INTERVAL == 0:
            norms = np.max(np.abs(phi_next), axis=0)
            if norms.max() > 1e100:
                fix = np.diag(1.0 / norms)
                phi_next, phi_cur = phi_next @ fix, phi_cur @ fix
                phis, dphis = phis @ fix, dphis @ fix
                multiplier = multiplier @ fix

        F_prev = potmat.F(n, energy, side=direction) if n in potmat.jumps else F_cur
        F_cur = potmat.F(n_next, energy) if n_next in potmat.jumps else F_next
        phi_prev, phi_cur = phi_cur, phi_next
    return phis, dphis, multiplier


def _to_radial(grid: RadialGrid, lo: int, phis: np.ndarray, dphis: np.ndarray):
    """(Φ, dΦ/dx) → (p, dp/dr)，y = √r' Φ，p = y/r"""
    sl = slice(lo, lo + len(phis))
    r, rp, rpp = grid.r[sl], grid.rp[sl], grid.rpp[sl]
    g = np.sqrt(rp)[:, None, None]
    y = g * phis
    y_r = (g / rp[:, None, None]) * (dphis + (rpp / (2.0 * rp))[:, None, None] * phis)
    rr = r[:, None, None]
    return y / rr, y_r / rr - y / rr ** 2


def _store_bounds(grid: RadialGrid, store: Optional[Tuple[float, float]]) -> Tuple[int, int]:
    if store is None:
        return 1, grid.n - 2
    lo = max(1, int(np.floor(grid.position(store[0]) + 1e-9)))
    hi = min(grid.n - 2, int(np.ceil(grid.position(store[1]) - 1e-9)))
    if lo > hi:
        raise DomainError(f"儲存範圍 {store} 不在格點內")
    return lo, hi


def integrate_regular(potmat: CoupledPotentialMatrix, energy: float,
                      trunc: Optional[Truncation] = None,
                      store: Optional[Tuple[float, float]] = None,
                      check_radius: Optional[float] = None,
                      reorthogonalize: Optional[bool] = None) -> GridRadialSolution:
    """
    外向積分正規解 p（原點正規）

    種子：前兩個格點 y_{LL'} ∝ r^{l+1} δ_{LL'}。

    Args:
        store: 要保留的半徑範圍（預設整個格點）
        check_radius: 檢查欄向量獨立性的半徑（預設儲存範圍的最外點）

    Raises:
        IndependenceError: cond(p) > ToleranceConfig.INDEPENDENCE_COND_MAX
    """
    if trunc is not None and trunc != potmat.trunc:
        raise DomainError("截斷與位能矩陣不一致")
    k, _ = wavenumber(energy, potmat.v_inf)
    grid = potmat.grid
    lo, hi = _store_bounds(grid, store)
    reorth = GridConfig.REORTHOGONALIZE if reorthogonalize is None else reorthogonalize

    l_arr = channel_l(potmat.trunc.l_max)
    seeds = [np.diag(grid.r[n] ** (l_arr + 1.0) / np.sqrt(grid.rp[n])) for n in (0, 1)]
    nodes = np.arange(0, hi + 2)
    phis, dphis, multiplier = _sweep(potmat, energy, nodes, seeds[0], seeds[1], lo, hi, reorth)
    values, derivs = _to_radial(grid, lo, phis, dphis)
    solution = GridRadialSolution(grid, lo, values, derivs, Regularity.REGULAR_ORIGIN, energy,
                                  potmat.trunc, k, multiplier if reorth else None)

    check_node = hi if check_radius is None else int(np.clip(grid.node_index(check_radius), lo, hi))
    cond = np.linalg.cond(values[check_node - lo])
    if not np.isfinite(cond) or cond > ToleranceConfig.INDEPENDENCE_COND_MAX:
        raise IndependenceError(
            f"正規解在 r = {grid.r[check_node]:.6g} 失去線性獨立（cond = {cond:.2e}），"
            "請縮小外積分半徑或開啟 QR 重新正交化",
            cond,
        )
    return solution


def integrate_irregular(potmat: CoupledPotentialMatrix, energy: float,
                        boundary: Boundary = Boundary.OUTGOING,
                        trunc: Optional[Truncation] = None,
                        store: Optional[Tuple[float, float]] = None,
                        threshold: Optional[float] = None) -> GridRadialSolution:
    """
    由漸近區內向積分非正規解

    邊界值取自由解：outgoing → −i h⁺(kr)，decaying → i ξ k⁺(κr)；
    incoming 直接取 outgoing 的複共軛。

    Raises:
        AsymptoticRangeError: 格點末端的位能尾巴仍高於門檻
    """
    if trunc is not None and trunc != potmat.trunc:
        raise DomainError("截斷與位能矩陣不一致")
    boundary = Boundary(boundary)
    k, negative = wavenumber(energy, potmat.v_inf)
    if negative != (boundary is Boundary.DECAYING):
        raise DomainError(f"邊界條件 {boundary.value} 與能量 E − V∞ = {energy - potmat.v_inf:.6g} 不相容")
    if boundary is Boundary.INCOMING:
        return integrate_irregular(potmat, energy, Boundary.OUTGOING, trunc, store, threshold).conjugate()

    grid = potmat.grid
    threshold = GridConfig.ASYMPTOTIC_THRESHOLD if threshold is None else threshold
    start = grid.n - 1
    tail = max(potmat.tail(start), potmat.tail(start - 1))
    if tail > threshold:
        raise AsymptoticRangeError(
            f"r_asym = {grid.r[start]:.6g} 太小：|V − V∞|·r² = {tail:.2e} > {threshold:.1e}", tail
        )

    kind = FreeKind.DECAYING if boundary is Boundary.DECAYING else FreeKind.OUTGOING
    free = FreeRadialSolution(kind, k, potmat.trunc, energy)
    seeds = []
    for n in (start, start - 1):
        values, _ = free.evaluate(grid.r[n])
        seeds.append(grid.r[n] * values / np.sqrt(grid.rp[n]))
    lo, hi = _store_bounds(grid, store)
    nodes = np.arange(start, lo - 2, -1)
    phis, dphis, _ = _sweep(potmat, energy, nodes, seeds[0], seeds[1], lo, hi)
    values, derivs = _to_radial(grid, lo, phis, dphis)
    regularity = Regularity.DECAYING if negative else Regularity.OUTGOING
    return GridRadialSolution(grid, lo, values, derivs, regularity, energy, potmat.trunc, k)


# ============================================================
# Wronskian 與解之間的關係
# ============================================================
def wronskian_constant(a: RadialSolution, b: RadialSolution, r_eval: float) -> np.ndarray:
    """r²(a'ᵀ b − aᵀ b')"""
    a_val, a_der = a.evaluate(r_eval)
    b_val, b_der = b.evaluate(r_eval)
    return r_eval ** 2 * (a_der.T @ b_val - a_val.T @ b_der)


def constant_matrix(p: RadialSolution, q: RadialSolution, r_eval: float) -> np.ndarray:
    """M = −r²(p'ᵀq − pᵀq')"""
    return -wronskian_constant(p, q, r_eval)


def matrix_wronskian(a_val, a_der, b_val, b_der) -> np.ndarray:
    """W[a, b] = a b' − a' b"""
    return a_val @ b_der - a_der @ b_val


def reconstruct_p_from_q(q_plus: RadialSolution, q_minus: RadialSolution,
                         M_plus: np.ndarray, M_minus: np.ndarray) -> RadialSolution:
    """p = (ik/2)[q⁺ M₋ᵀ − q⁻ M₊ᵀ]"""
    cond = np.linalg.cond(M_plus)
    if not np.isfinite(cond) or cond > ToleranceConfig.M_COND_MAX:
        raise NearSingularError(f"M₊ 接近奇異（cond = {cond:.2e}）", cond)
    k = q_plus.wavenumber
    factor = 0.5j * k
    return CombinedRadialSolution(
        [(q_plus, factor * M_minus.T), (q_minus, -factor * M_plus.T)],
        Regularity.REGULAR_ORIGIN,
    )


def _rel(defect: np.ndarray, scale: np.ndarray) -> float:
    return float(np.max(np.abs(defect)) / max(np.max(np.abs(scale)), 1e-300))


def identity_defects(p: RadialSolution, q_plus: RadialSolution, q_minus: Optional[RadialSolution],
                     r: float, r_second: Optional[float] = None) -> Dict[str, float]:
    """
    解之間所有關係式的相對缺陷（驗證模式與測試共用）

    p 的正規化任意，因此涉及 p 的量都以相對值表示。
    """
    k = q_plus.wavenumber
    r2 = 1.3 * r if r_second is None else r_second
    pv, pd = p.evaluate(r)
    qv, qd = q_plus.evaluate(r)
    M = constant_matrix(p, q_plus, r)
    Minv = np.linalg.inv(M)
    eye = np.eye(p.dim)

    defects = {
        "M_constancy": _rel(M - constant_matrix(p, q_plus, r2), M),
        "p_symmetry": _rel(pv.T @ pd - pd.T @ pv, pv.T @ pd),
        "q_symmetry": _rel(qv.T @ qd - qd.T @ qv, qv.T @ qd),
        "continuity": _rel(pv @ Minv.T @ qv.T - qv @ Minv @ pv.T, pv @ Minv.T @ qv.T),
        "inhomogeneity": _rel(r ** 2 * (qd @ Minv @ pv.T - pd @ Minv.T @ qv.T) - eye, eye),
        "derivative_symmetry": _rel(qd @ Minv @ pd.T - pd @ Minv.T @ qd.T, qd @ Minv @ pd.T),
    }
    if q_minus is not None:
        mv, md = q_minus.evaluate(r)
        M_minus = constant_matrix(p, q_minus, r)
        unit = (2j / (k * r ** 2)) * eye
        defects.update({
            "M_product_symmetry": _rel(M @ M_minus.T - M_minus @ M.T, M @ M_minus.T),
            "M_product_real": _rel((M_minus @ M.T).imag, M_minus @ M.T),
            "qpm_symmetry": _rel(qv @ mv.T - mv @ qv.T, qv @ mv.T),
            "qpm_jump": _rel(qd @ mv.T - md @ qv.T - unit, unit),
            "qpm_derivative_symmetry": _rel(qd @ md.T - md @ qd.T, qd @ md.T),
            "qpm_wronskian": _rel(qd.T @ mv - qv.T @ md - unit, unit),
        })
    return defects


def constancy_defect(p: RadialSolution, q: RadialSolution, r1: float, r2: float) -> float:
    """M(r1) 與 M(r2) 的相對差"""
    M = constant_matrix(p, q, r1)
    return _rel(M - constant_matrix(p, q, r2), M)
