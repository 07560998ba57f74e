"""
特殊函數引擎 - 球 Bessel / Neumann / Hankel 函數及其修正（負能量）版本

- h± = j ± i n
- k⁺_l(x) = (−1)^l (2/π) k_l(x)（scipy 的修正球 Bessel 第二類），k⁺_0 = e^{−x}/x
- 導數直接取自 scipy（以遞迴關係計算，非有限差分）
"""

from enum import Enum
from typing import Tuple

import numpy as np
from scipy.special import spherical_in, spherical_jn, spherical_kn, spherical_yn

from engines.angular import Truncation, channel_l, real_sh_matrix
from engines.errors import DomainError


class BesselKind(str, Enum):
    J = "j"
    N = "n"
    H_PLUS = "h+"
    H_MINUS = "h-"
    I_MOD = "i_mod"
    K_PLUS_MOD = "k+_mod"


_SINGULAR_KINDS = {BesselKind.N, BesselKind.H_PLUS, BesselKind.H_MINUS, BesselKind.K_PLUS_MOD}


def sph_bessel(kind, l, x, derivative: bool = False):
    """
    球 Bessel 類函數 f_l(x)（或其導數 df/dx）

    Args:
        kind: BesselKind 或其字串值
        l: 整數或整數陣列
        x: 實數或陣列
        derivative: True 時回傳 df_l/dx

    Raises:
        DomainError: 奇異類別在 x ≤ 0，或任何類別在 x < 0
    """
    kind = BesselKind(kind)
    x_arr = np.asarray(x, dtype=float)
    if kind in _SINGULAR_KINDS and np.any(x_arr <= 0):
        raise DomainError(f"{kind.value} 在 x ≤ 0 無定義")
    if np.any(x_arr < 0):
        raise DomainError(f"{kind.value} 需要 x ≥ 0")

    if kind is BesselKind.J:
        return spherical_jn(l, x_arr, derivative=derivative)
    if kind is BesselKind.N:
        return spherical_yn(l, x_arr, derivative=derivative)
    if kind is BesselKind.H_PLUS:
        return spherical_jn(l, x_arr, derivative=derivative) + 1j * spherical_yn(l, x_arr, derivative=derivative)
    if kind is BesselKind.H_MINUS:
        return spherical_jn(l, x_arr, derivative=derivative) - 1j * spherical_yn(l, x_arr, derivative=derivative)
    if kind is BesselKind.I_MOD:
        return spherical_in(l, x_arr, derivative=derivative)
    sign = (-1.0) ** np.asarray(l)
    return sign * (2.0 / np.pi) * spherical_kn(l, x_arr, derivative=derivative)


# ============================================================
# 對角矩陣與相位矩陣
# ============================================================
def diagonal_values(kind, l_max: int, x) -> Tuple[np.ndarray, np.ndarray]:
    """
    每個通道的 (f_l(x), f_l'(x))，形狀 (..., dim)

    x 可為純量或陣列；回傳值沿最後一軸展開成通道。
    """
    l_arr = channel_l(l_max)
    x_arr = np.asarray(x, dtype=float)[..., None]
    return sph_bessel(kind, l_arr, x_arr), sph_bessel(kind, l_arr, x_arr, derivative=True)


def diagonal_matrix(kind, trunc: Truncation, x: float, derivative: bool = False) -> np.ndarray:
    """DiagonalRadialMatrix：對角元素只與 l 有關"""
    values, derivs = diagonal_values(kind, trunc.l_max, x)
    return np.diag(derivs if derivative else values)


def xi_diagonal(l_max: int) -> np.ndarray:
    """ξ 的對角元素 i^l"""
    return (1j) ** channel_l(l_max)


def eta_diagonal(l_max: int) -> np.ndarray:
    """η 的對角元素 (−1)^l"""
    return (-1.0) ** channel_l(l_max)


def xi_matrix(trunc: Truncation) -> np.ndarray:
    return np.diag(xi_diagonal(trunc.l_max))


def eta_matrix(trunc: Truncation) -> np.ndarray:
    return np.diag(eta_diagonal(trunc.l_max))


# ============================================================
# 平面波展開
# ============================================================
def _unit_and_norm(vec) -> Tuple[np.ndarray, float]:
    vec = np.asarray(vec, dtype=float)
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        return np.array([0.0, 0.0, 1.0]), 0.0
    return vec / norm, norm


def plane_wave_expansion(k_vec, r_vec, trunc: Truncation) -> complex:
    """e^{ik·r} ≈ 4π Y(k̂)ᵀ j(kr) ξ Y(r̂)（截斷於 l_max）"""
    k_hat, k = _unit_and_norm(k_vec)
    r_hat, r = _unit_and_norm(r_vec)
    y_k = real_sh_matrix(trunc.l_max, k_hat)[0]
    y_r = real_sh_matrix(trunc.l_max, r_hat)[0]
    j_vals, _ = diagonal_values(BesselKind.J, trunc.l_max, k * r)
    return complex(4 * np.pi * np.sum(y_k * j_vals * xi_diagonal(trunc.l_max) * y_r))


def plane_wave_q_form(k_vec, r_vec, trunc: Truncation) -> complex:
    """e^{ik·r} = 2πi Y(r̂)ᵀ [q_f⁺ − q_f⁻] ξ Y(k̂)，q_f± = ∓ i h±(kr)"""
    k_hat, k = _unit_and_norm(k_vec)
    r_hat, r = _unit_and_norm(r_vec)
    if k * r == 0.0:
        return 1.0 + 0.0j
    y_k = real_sh_matrix(trunc.l_max, k_hat)[0]
    y_r = real_sh_matrix(trunc.l_max, r_hat)[0]
    h_plus, _ = diagonal_values(BesselKind.H_PLUS, trunc.l_max, k * r)
    h_minus, _ = diagonal_values(BesselKind.H_MINUS, trunc.l_max, k * r)
    q_diff = -1j * h_plus - 1j * h_minus
    return complex(2j * np.pi * np.sum(y_r * q_diff * xi_diagonal(trunc.l_max) * y_k))


# ============================================================
# 自由解的 Wronskian 常數
# ============================================================
def free_wronskian_check(l_max: int, wavenumber: float, r: float) -> dict:
    """
    三組自由解 M_f = r²(p q' − p' q)（對 r 微分）與解析值的相對差

    - (j, −ih⁺)：I/k
    - (i_mod, k⁺)：−η/κ
    - (i_mod, iξk⁺)：−i ξ†/κ，即 (M_f⁻¹)ᵀ = iκξ
    """
    if wavenumber <= 0 or r <= 0:
        raise DomainError("需要 k > 0 且 r > 0")
    k = float(wavenumber)
    x = k * r

    def constant(p, dp, q, dq):
        return r * r * k * (p * dq - dp * q)

    j, dj = diagonal_values(BesselKind.J, l_max, x)
    h, dh = diagonal_values(BesselKind.H_PLUS, l_max, x)
    i_mod, di = diagonal_values(BesselKind.I_MOD, l_max, x)
    kp, dkp = diagonal_values(BesselKind.K_PLUS_MOD, l_max, x)
    xi = xi_diagonal(l_max)
    eta = eta_diagonal(l_max)
    expected = {
        "regular_outgoing": (constant(j, dj, -1j * h, -1j * dh), np.full(len(j), 1.0 / k)),
        "modified": (constant(i_mod, di, kp, dkp), -eta / k),
        "modified_decaying": (constant(i_mod, di, 1j * xi * kp, 1j * xi * dkp), -1j * xi.conj() / k),
    }
    return {name: float(np.max(np.abs(got - want)) * k) for name, (got, want) in expected.items()}
