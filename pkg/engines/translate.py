"""
平移引擎 - 正規 / 非正規解的重新展開算子與近場耦合 K^{ij}

慣例：R_ij = R_j − R_i
- D̂(k;R) = Λ[4πξ j(kR) Y(R̂)]，D = ξD̂ξ†（實正交）
- F(k;R) = ξΛ[4πξ h⁺(kR) Y(R̂)]ξ†，K_f^{ji} = −(i/k)F(k;R_ij)
- D⁽⁻⁾(κ;R) = ξ†Λ[4π i(κR) Y(R̂)]ξ
"""

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from config import QuadratureConfig, ToleranceConfig
from engines.angular import Truncation, lambda_combination, real_sh_gradient_matrix, real_sh_matrix
from engines.errors import ConvergenceError, DomainError
from engines.radial import FreeKind, FreeRadialSolution, RadialSolution
from engines.specfun import BesselKind, diagonal_values, xi_diagonal
from utils.quadrature import sphere_product_quadrature


class TranslationKind(str, Enum):
    D_HAT = "D_hat"
    D = "D"
    F = "F"
    D_NEG = "D_neg"
    D_TILDE = "D_tilde"


@dataclass(frozen=True)
class TranslationMatrix:
    kind: TranslationKind
    wavenumber: float
    displacement: Tuple[float, float, float]
    trunc: Truncation
    matrix: np.ndarray


@dataclass
class NearFieldCoupling:
    """K^{ji}：在 ∂τ_i 上積分，列為 j 的通道、行為 i 的通道"""
    K: np.ndarray
    pair: Tuple[int, int]
    energy: float
    radius: float
    n_theta: int
    n_phi: int
    doubling_defect: float


def _coefficients(kind: BesselKind, wavenumber: float, R, l_c: int, phase: bool) -> np.ndarray:
    """4π [ξ] f_{l''}(kR) Y_{L''}(R̂)，l'' ≤ l_c"""
    R = np.asarray(R, dtype=float)
    dist = float(np.linalg.norm(R))
    y = real_sh_matrix(l_c, (R / dist)[None, :])[0]
    f, _ = diagonal_values(kind, l_c, wavenumber * dist)
    coeff = 4 * np.pi * f * y
    return coeff * xi_diagonal(l_c) if phase else coeff.astype(complex)


def _is_zero(R) -> bool:
    return float(np.linalg.norm(np.asarray(R, dtype=float))) == 0.0


def _wrap(kind, wavenumber, R, trunc, matrix) -> TranslationMatrix:
    matrix.flags.writeable = False
    return TranslationMatrix(TranslationKind(kind), float(wavenumber),
                             tuple(float(c) for c in np.asarray(R, dtype=float)), trunc, matrix)


def translation_matrix_D_hat(k: float, R, trunc: Truncation) -> TranslationMatrix:
    """D̂(k;R)：複對稱么正，R = 0 時為精確的單位矩陣"""
    if k <= 0:
        raise DomainError("D̂ 需要 k > 0")
    if _is_zero(R):
        return _wrap(TranslationKind.D_HAT, k, R, trunc, np.eye(trunc.dim, dtype=complex))
    coeff = _coefficients(BesselKind.J, k, R, 2 * trunc.l_max, phase=True)
    return _wrap(TranslationKind.D_HAT, k, R, trunc, lambda_combination(coeff, trunc))


def translation_matrix_D(k: float, R, trunc: Truncation) -> TranslationMatrix:
    """D(k;R) = ξD̂ξ†，實正交；D(k;R)⁻¹ = D(k;−R)"""
    d_hat = translation_matrix_D_hat(k, R, trunc).matrix
    xi = xi_diagonal(trunc.l_max)
    matrix = (xi[:, None] * d_hat * xi.conj()[None, :]).real.copy()
    return _wrap(TranslationKind.D, k, R, trunc, matrix)


def near_field_F(k: float, R, trunc: Truncation) -> TranslationMatrix:
    """Yᵀ(ŝ_i)h⁺(ks_i) = Yᵀ(ŝ_j)j(ks_j)F(k;R_ij)，s_j < |R_ij|"""
    if k <= 0:
        raise DomainError("F 需要 k > 0")
    if _is_zero(R):
        raise DomainError("F(k;R) 在 R = 0 無定義")
    coeff = _coefficients(BesselKind.H_PLUS, k, R, 2 * trunc.l_max, phase=True)
    xi = xi_diagonal(trunc.l_max)
    matrix = xi[:, None] * lambda_combination(coeff, trunc) * xi.conj()[None, :]
    return _wrap(TranslationKind.F, k, R, trunc, matrix)


def free_K_closed(k: float, R_i, R_j, trunc: Truncation) -> np.ndarray:
    """K_f^{ji} = −(i/k)F(k;R_ij)"""
    R_ij = np.asarray(R_j, dtype=float) - np.asarray(R_i, dtype=float)
    return -1j / k * near_field_F(k, R_ij, trunc).matrix


def translation_matrix_D_neg(kappa: float, R, trunc: Truncation) -> TranslationMatrix:
    """D⁽⁻⁾(κ;R)：厄米矩陣，D⁽⁻⁾(κ;−R) = D⁽⁻⁾(κ;R)ᵀ"""
    if kappa <= 0:
        raise DomainError("D⁽⁻⁾ 需要 κ > 0")
    if _is_zero(R):
        return _wrap(TranslationKind.D_NEG, kappa, R, trunc, np.eye(trunc.dim, dtype=complex))
    xi = xi_diagonal(trunc.l_max)
    matrix = xi.conj()[:, None] * translation_matrix_D_tilde(kappa, R, trunc).matrix * xi[None, :]
    return _wrap(TranslationKind.D_NEG, kappa, R, trunc, matrix)


def translation_matrix_D_tilde(kappa: float, R, trunc: Truncation) -> TranslationMatrix:
    """D̃(κ;R) = Λ[4π i(κR)Y(R̂)]，實對稱；Yᵀ(r̂_i)i(κr_i) = Yᵀ(r̂_j)i(κr_j)D̃(κ;R_ij)"""
    if _is_zero(R):
        return _wrap(TranslationKind.D_TILDE, kappa, R, trunc, np.eye(trunc.dim))
    coeff = _coefficients(BesselKind.I_MOD, kappa, R, 2 * trunc.l_max, phase=False).real
    return _wrap(TranslationKind.D_TILDE, kappa, R, trunc, lambda_combination(coeff, trunc))


# ============================================================
# 表面積分 K^{ji}
# ============================================================
def _surface_projections(q_j: RadialSolution, l_i: int, R_ij: np.ndarray, rho: float,
                         n_theta: int, n_phi: int):
    """
    Π = ∫ Q_jᵀ Y(r̂_i)ᵀ dΩ_i 與 Π' = ∂_ρ Π

    以 R̂_ij 為極軸的旋轉座標中 |r_j| 只與 θ 有關，q_j 只需在 n_theta 個半徑取值。
    """
    l_j = q_j.trunc.l_max
    dirs, weights, cos_t = sphere_product_quadrature(n_theta, n_phi, axis=R_ij)
    R = float(np.linalg.norm(R_ij))
    ring_r = np.sqrt(np.clip(rho * rho + R * R - 2.0 * rho * R * cos_t, 0.0, None))
    if np.any(ring_r <= 0):
        raise DomainError("積分球面通過另一個中心")
    ring_c = (rho - R * cos_t) / ring_r

    rel = rho * dirs - R_ij
    dir_j = rel / np.repeat(ring_r, n_phi)[:, None]
    dir_j /= np.linalg.norm(dir_j, axis=1)[:, None]
    u = (real_sh_matrix(l_i, dirs) * weights[:, None]).reshape(n_theta, n_phi, -1)
    v = real_sh_matrix(l_j, dir_j).reshape(n_theta, n_phi, -1)
    grad = np.einsum("nlc,nc->nl", real_sh_gradient_matrix(l_j, dir_j), dirs).reshape(n_theta, n_phi, -1)
    V = np.einsum("tpa,tpb->tab", v, u)
    G = np.einsum("tpa,tpb->tab", grad, u)

    q_vals, q_ders = q_j.evaluate(ring_r)
    pi = np.einsum("tla,tlb->ab", q_vals, V)
    pi_prime = (np.einsum("tla,tlb->ab", q_ders * ring_c[:, None, None], V)
                + np.einsum("tla,tlb->ab", q_vals / ring_r[:, None, None], G))
    return pi, pi_prime


def _surface_K(q_i: RadialSolution, q_j: RadialSolution, R_ij, rho: float, n_theta: int, n_phi: int):
    pi, pi_prime = _surface_projections(q_j, q_i.trunc.l_max, R_ij, rho, n_theta, n_phi)
    qi_val, qi_der = q_i.evaluate(rho)
    return -rho * rho * (pi_prime @ qi_val - pi @ qi_der)


def general_K_surface(q_i: RadialSolution, q_j: RadialSolution, R_i, R_j, b_i: float,
                      radius: Optional[float] = None, pair: Tuple[int, int] = (1, 0),
                      enclosing: bool = False) -> NearFieldCoupling:
    """
    K^{ji} = −r_i² ∫_{∂τ_i} {∇[Q_j]Q_iᵀ − Q_j∇[Q_iᵀ]}·n̂ dΩ

    θ 方向 Gauss-Legendre 由 max(K_MIN_THETA, l_max + K_THETA_PAD) 開始加倍，
    直到相鄰兩次差 < K_DOUBLING·max|K|；φ 方向 2·l_max + 2 點為精確。

    Args:
        radius: 積分球半徑（預設 b_i）
        pair: (j, i)，只用於記錄與錯誤訊息
        enclosing: True 時允許 radius > |R_ij|（X^{ij} 診斷）

    Raises:
        ConvergenceError: 加倍到 K_MAX_THETA 仍未收斂
        DomainError: q_j 的儲存範圍不足
    """
    R_ij = np.asarray(R_j, dtype=float) - np.asarray(R_i, dtype=float)
    R = float(np.linalg.norm(R_ij))
    rho = b_i if radius is None else float(radius)
    if not enclosing and rho >= R:
        raise DomainError(f"積分半徑 {rho:.6g} 必須小於中心距 {R:.6g}")
    lo, hi = q_j.r_range
    need = (abs(R - rho), R + rho)
    if need[0] < lo or need[1] > hi:
        raise DomainError(
            f"中心 {pair[0]} 的 q 儲存範圍 [{lo:.6g}, {hi:.6g}] 不足，需要 [{need[0]:.6g}, {need[1]:.6g}]"
        )

    l_max = max(q_i.trunc.l_max, q_j.trunc.l_max)
    n_phi = 2 * l_max + 2
    n_theta = max(QuadratureConfig.K_MIN_THETA, l_max + QuadratureConfig.K_THETA_PAD)
    previous = _surface_K(q_i, q_j, R_ij, rho, n_theta, n_phi)
    scale_floor = 1.0 / q_i.wavenumber
    defect = np.inf
    while n_theta < QuadratureConfig.K_MAX_THETA:
        n_theta *= 2
        current = _surface_K(q_i, q_j, R_ij, rho, n_theta, n_phi)
        scale = max(float(np.max(np.abs(current))), scale_floor)
        defect = float(np.max(np.abs(current - previous))) / scale
        previous = current
        if defect < ToleranceConfig.K_DOUBLING:
            return NearFieldCoupling(current, pair, q_i.energy, rho, n_theta, n_phi, defect)
    raise ConvergenceError(
        f"K^{{{pair[0]}{pair[1]}}} 表面積分在 n_θ = {n_theta} 仍未收斂（相對差 {defect:.2e}）", defect
    )


def free_K_surface(k: float, R_i, R_j, b_i: float, trunc: Truncation,
                   radius: Optional[float] = None, decaying: bool = False) -> NearFieldCoupling:
    """自由解的 K_f^{ji}（正能量為外向 −ih⁺，負能量為衰減 iξk⁺）"""
    kind = FreeKind.DECAYING if decaying else FreeKind.OUTGOING
    q_free = FreeRadialSolution(kind, k, trunc)
    return general_K_surface(q_free, q_free, R_i, R_j, b_i, radius)


def enclosing_surface_defect(k: float, R_i, R_j, radius: float, trunc: Truncation) -> float:
    """
    X^{ij}：在包住兩個中心的球面（半徑 > |R_ij|）上的同一表面積分

    兩個外向波的通量在遠處相消，結果應為 0；回傳 k·max|X|。
    """
    R = float(np.linalg.norm(np.asarray(R_j, float) - np.asarray(R_i, float)))
    if radius <= R:
        raise DomainError(f"X^{{ij}} 的球面半徑 {radius:.6g} 必須大於中心距 {R:.6g}")
    q_free = FreeRadialSolution(FreeKind.OUTGOING, k, trunc)
    coupling = general_K_surface(q_free, q_free, R_i, R_j, radius, radius, enclosing=True)
    return float(k * np.max(np.abs(coupling.K)))


def gradient_fd_check(q_i: RadialSolution, q_j: RadialSolution, R_i, R_j, rho: float,
                      n_theta: int, step: float = 1e-4) -> float:
    """解析 Π' 與中央差分 (Π(ρ+δ) − Π(ρ−δ))/2δ 的相對差"""
    R_ij = np.asarray(R_j, dtype=float) - np.asarray(R_i, dtype=float)
    l_i = q_i.trunc.l_max
    n_phi = 2 * max(l_i, q_j.trunc.l_max) + 2
    _, analytic = _surface_projections(q_j, l_i, R_ij, rho, n_theta, n_phi)
    plus, _ = _surface_projections(q_j, l_i, R_ij, rho + step, n_theta, n_phi)
    minus, _ = _surface_projections(q_j, l_i, R_ij, rho - step, n_theta, n_phi)
    numeric = (plus - minus) / (2 * step)
    return float(np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(analytic)), 1e-300))
