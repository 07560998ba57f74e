"""
Green 函數引擎 - 由徑向解組合精確 Green 函數並計算扭曲波 χ⁺

G(r, s) = Y(r̂)ᵀ[p(r)(M⁻¹)ᵀq(s)ᵀθ(s−r) + q(r)M⁻¹p(s)ᵀθ(r−s)]Y(ŝ)
χ⁺(r)  = (4π/k) Y(r̂)ᵀ p(r)(M₊⁻¹)ᵀ ξ Y(k̂)
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from config import ToleranceConfig
from engines.angular import Truncation, polar_split, real_sh_matrix
from engines.errors import DomainError, NearSingularError
from engines.radial import (
    FreeKind,
    FreeRadialSolution,
    RadialSolution,
    Regularity,
    constant_matrix,
    wronskian_constant,
)
from engines.specfun import xi_diagonal


@dataclass
class GreenExpansion:
    """以 origin 為展開中心的 Green 函數資料"""
    origin: np.ndarray
    p: RadialSolution
    q: RadialSolution
    M: np.ndarray
    energy: float
    trunc: Truncation
    v_inf: float = 0.0
    q_minus: Optional[RadialSolution] = None
    _M_inv: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def M_inv(self) -> np.ndarray:
        if self._M_inv is None:
            self._M_inv = np.linalg.inv(self.M)
        return self._M_inv

    @property
    def wavenumber(self) -> float:
        return self.q.wavenumber

    @property
    def M_minus(self) -> np.ndarray:
        """M₋；未提供 q⁻ 時取 M₊*（p 為實數）"""
        if self.q_minus is not None:
            return constant_matrix(self.p, self.q_minus, _overlap_radius(self.p, self.q_minus))
        return self.M.conj()

    @property
    def A_hat(self) -> np.ndarray:
        """Â = M₋ᵀ(M₊⁻¹)ᵀ"""
        return self.M_minus.T @ self.M_inv.T


def _overlap_radius(a: RadialSolution, b: RadialSolution) -> float:
    lo = max(a.r_range[0], b.r_range[0], 1e-3)
    hi = min(a.r_range[1], b.r_range[1])
    if not lo < hi:
        raise DomainError(f"兩組解沒有共同的半徑範圍：[{lo:.6g}, {hi:.6g}]")
    if np.isinf(hi):
        return max(lo, 1.0)
    return float(np.sqrt(lo * hi))


def green_expansion(p: RadialSolution, q: RadialSolution, origin=None,
                    r_eval: Optional[float] = None, v_inf: float = 0.0,
                    q_minus: Optional[RadialSolution] = None) -> GreenExpansion:
    """
    由 p、q 與其 Wronskian 常數組合 GreenExpansion

    Raises:
        NearSingularError: cond(M) > ToleranceConfig.M_COND_MAX（能量接近束縛態或共振）
    """
    if p.trunc != q.trunc:
        raise DomainError("p 與 q 的截斷不同")
    r_eval = _overlap_radius(p, q) if r_eval is None else r_eval
    M = constant_matrix(p, q, r_eval)
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > ToleranceConfig.M_COND_MAX:
        raise NearSingularError(
            f"E = {p.energy:.8g} 的 Wronskian 常數矩陣接近奇異（cond = {cond:.2e}），"
            "請改用束縛態掃描", cond,
        )
    origin = np.zeros(3) if origin is None else np.asarray(origin, dtype=float)
    return GreenExpansion(origin, p, q, M, p.energy, p.trunc, v_inf, q_minus)


def _point(gx: GreenExpansion, vec):
    r, dirs = polar_split(vec, gx.origin)
    return float(r[0]), real_sh_matrix(gx.trunc.l_max, dirs)[0]


def eval_green(gx: GreenExpansion, r_vec, s_vec) -> complex:
    """
    G(r, s)，依 |r| 與 |s| 的大小選擇分支

    Raises:
        DomainError: |r − s| < ToleranceConfig.GREEN_EXCLUSION（近對角發散）
    """
    separation = float(np.linalg.norm(np.asarray(r_vec, float) - np.asarray(s_vec, float)))
    if separation < ToleranceConfig.GREEN_EXCLUSION:
        raise DomainError(f"|r − s| = {separation:.3g} 太接近對角線，部分波展開不收斂")
    r, y_r = _point(gx, r_vec)
    s, y_s = _point(gx, s_vec)
    if r <= s:
        p_r, _ = gx.p.evaluate(r)
        q_s, _ = gx.q.evaluate(s)
        kernel = p_r @ gx.M_inv.T @ q_s.T
    else:
        q_r, _ = gx.q.evaluate(r)
        p_s, _ = gx.p.evaluate(s)
        kernel = q_r @ gx.M_inv @ p_s.T
    return complex(y_r @ kernel @ y_s)


def eval_green_irregular_form(q_plus: RadialSolution, q_minus: RadialSolution, A_hat: np.ndarray,
                              r_vec, s_vec, origin=None) -> complex:
    """(ik/2) Y(r̂)ᵀ[q⁺ Â q⁺ᵀ − q⁻q⁺ᵀθ(s−r) − q⁺q⁻ᵀθ(r−s)] Y(ŝ)"""
    separation = float(np.linalg.norm(np.asarray(r_vec, float) - np.asarray(s_vec, float)))
    if separation < ToleranceConfig.GREEN_EXCLUSION:
        raise DomainError(f"|r − s| = {separation:.3g} 太接近對角線，部分波展開不收斂")
    l_max = q_plus.trunc.l_max
    r_arr, dirs = polar_split(np.vstack([r_vec, s_vec]), origin)
    y = real_sh_matrix(l_max, dirs)
    r, s = float(r_arr[0]), float(r_arr[1])
    qp_r, _ = q_plus.evaluate(r)
    qp_s, _ = q_plus.evaluate(s)
    kernel = qp_r @ A_hat @ qp_s.T
    if r <= s:
        qm_r, _ = q_minus.evaluate(r)
        kernel = kernel - qm_r @ qp_s.T
    else:
        qm_s, _ = q_minus.evaluate(s)
        kernel = kernel - qp_r @ qm_s.T
    return complex(0.5j * q_plus.wavenumber * (y[0] @ kernel @ y[1]))


# ============================================================
# 扭曲波
# ============================================================
def _check_on_shell(gx: GreenExpansion, k_vec) -> np.ndarray:
    k_vec = np.asarray(k_vec, dtype=float)
    k2 = gx.energy - gx.v_inf
    if k2 <= 0:
        raise DomainError("χ⁺ 只在連續態能量定義")
    if abs(float(k_vec @ k_vec) - k2) > ToleranceConfig.ENERGY_MATCH * k2:
        raise DomainError(f"|k|² = {float(k_vec @ k_vec):.10g} 與 E − V∞ = {k2:.10g} 不一致")
    return k_vec


def distorted_wave_many(gx: GreenExpansion, k_vec, points) -> np.ndarray:
    """
    多個點上的 χ⁺（以 gx.origin 為中心）

    p 的儲存範圍內用正規解形式；更遠處改用
    2πi Y(r̂)ᵀ[q⁺Â − q⁻]ξY(k̂)，超出 q 範圍時 q 取自由解。
    """
    k_vec = _check_on_shell(gx, k_vec)
    k = float(np.linalg.norm(k_vec))
    l_max = gx.trunc.l_max
    y_k = real_sh_matrix(l_max, (k_vec / k)[None, :])[0]
    xi_y = xi_diagonal(l_max) * y_k

    radii, dirs = polar_split(points, gx.origin)
    y_r = real_sh_matrix(l_max, dirs)
    out = np.empty(len(radii), dtype=complex)

    inner = radii <= gx.p.r_range[1]
    if np.any(inner):
        coeff = gx.M_inv.T @ xi_y
        p_vals, _ = gx.p.evaluate(radii[inner])
        out[inner] = (4 * np.pi / k) * np.einsum("na,nab,b->n", y_r[inner], p_vals, coeff)

    outer = ~inner
    if np.any(outer):
        A_hat = gx.A_hat
        in_q = outer & (radii <= gx.q.r_range[1])
        free = outer & ~in_q
        for mask, q_plus in ((in_q, gx.q), (free, FreeRadialSolution(FreeKind.OUTGOING, k, gx.trunc, gx.energy))):
            if not np.any(mask):
                continue
            qp, _ = q_plus.evaluate(radii[mask])
            qm = qp.conj()
            bracket = qp @ A_hat - qm
            out[mask] = 2j * np.pi * np.einsum("na,nab,b->n", y_r[mask], bracket, xi_y)
    return out


def distorted_wave(gx: GreenExpansion, k_vec, r_vec) -> complex:
    """χ⁺(r)：由平面波 e^{ik·r} 發展出的 V_I 外向散射態"""
    return complex(distorted_wave_many(gx, k_vec, np.asarray(r_vec, dtype=float)[None, :])[0])


def outgoing_wronskian_defect(gx: GreenExpansion, r: float) -> float:
    """k·|r²(q_f'ᵀq − q_fᵀq')|：q⁺ 已接上自由外向解時趨近 0"""
    if gx.q.regularity not in (Regularity.OUTGOING, Regularity.DECAYING):
        raise DomainError("只對外向或衰減的非正規解有意義")
    k = gx.wavenumber
    kind = FreeKind.OUTGOING if gx.q.regularity is Regularity.OUTGOING else FreeKind.DECAYING
    free = FreeRadialSolution(kind, k, gx.trunc, gx.energy)
    return float(k * np.max(np.abs(wronskian_constant(free, gx.q, r))))
