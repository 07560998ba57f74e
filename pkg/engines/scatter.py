"""
單中心散射引擎 - 振幅矩陣、散射振幅、截面與散射定理

Â = M₋ᵀ(M₊⁻¹)ᵀ，A = ξ†Âξ
f(k', k) = (2πi/k) Y(k̂')ᵀ [I − A] Y(k̂)
"""

from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp

from config import QuadratureConfig, ToleranceConfig
from engines.angular import Truncation, channel_l, real_sh_matrix
from engines.errors import DomainError, NearSingularError
from engines.specfun import BesselKind, sph_bessel, xi_diagonal
from engines.translate import translation_matrix_D_hat
from utils.quadrature import sphere_product_quadrature


@dataclass
class AmplitudeMatrix:
    A_hat: np.ndarray
    A: np.ndarray
    energy: float
    wavenumber: float
    trunc: Truncation

    @property
    def symmetry_defect(self) -> float:
        return float(np.max(np.abs(self.A_hat - self.A_hat.T)))


def amplitude_matrix(M_plus: np.ndarray, M_minus: np.ndarray, k: float, energy: float,
                     trunc: Optional[Truncation] = None) -> AmplitudeMatrix:
    """
    由 M₊、M₋ 求振幅矩陣

    Raises:
        NearSingularError: cond(M₊) > ToleranceConfig.M_COND_MAX
    """
    cond = np.linalg.cond(M_plus)
    if not np.isfinite(cond) or cond > ToleranceConfig.M_COND_MAX:
        raise NearSingularError(
            f"E = {energy:.8g} 的 M₊ 接近奇異（cond = {cond:.2e}），請改用束縛態掃描", cond
        )
    if trunc is None:
        trunc = Truncation(int(round(np.sqrt(M_plus.shape[0]))) - 1)
    A_hat = M_minus.T @ np.linalg.inv(M_plus).T
    xi = xi_diagonal(trunc.l_max)
    A = xi.conj()[:, None] * A_hat * xi[None, :]
    return AmplitudeMatrix(A_hat, A, energy, k, trunc)


def _unit(direction) -> np.ndarray:
    direction = np.asarray(direction, dtype=float)
    return direction / np.linalg.norm(direction)


def scattering_amplitude(am: AmplitudeMatrix, k_out_dir, k_in_dir) -> complex:
    """f(k', k) (bohr)"""
    y = real_sh_matrix(am.trunc.l_max, np.vstack([k_out_dir, k_in_dir]))
    return complex(2j * np.pi / am.wavenumber * (y[0] @ (np.eye(am.trunc.dim) - am.A) @ y[1]))


def scattering_amplitudes(am: AmplitudeMatrix, k_out_dirs, k_in_dir) -> np.ndarray:
    """多個出射方向的 f(k'_n, k)"""
    y_out = real_sh_matrix(am.trunc.l_max, k_out_dirs)
    y_in = real_sh_matrix(am.trunc.l_max, _unit(k_in_dir)[None, :])[0]
    return 2j * np.pi / am.wavenumber * (y_out @ ((np.eye(am.trunc.dim) - am.A) @ y_in))


# ============================================================
# 截面
# ============================================================
@dataclass
class CrossSectionResult:
    sigma_integrated: float
    sigma_optical: float
    differential: Callable[[np.ndarray], np.ndarray]
    scale_floor: float = 1e-300

    @property
    def relative_gap(self) -> float:
        """相對差；截面趨近 0 時以 scale_floor（1/k²）為尺度"""
        scale = max(abs(self.sigma_optical), abs(self.sigma_integrated), self.scale_floor)
        return abs(self.sigma_integrated - self.sigma_optical) / scale


def _cross_section_rule(l_max: int, n_theta: Optional[int] = None):
    n_theta = max(QuadratureConfig.CROSS_SECTION_THETA if n_theta is None else n_theta, l_max + 1)
    return sphere_product_quadrature(n_theta, 2 * l_max + 2)


def cross_sections(am: AmplitudeMatrix, k_in_dir, n_theta: Optional[int] = None) -> CrossSectionResult:
    """σ_tot 兩種算法：∫|f|²dΩ 與光學定理 (4π/k) Im f(k, k)"""
    k_in = _unit(k_in_dir)
    dirs, weights, _ = _cross_section_rule(am.trunc.l_max, n_theta)
    f = scattering_amplitudes(am, dirs, k_in)
    integrated = float(np.sum(weights * np.abs(f) ** 2))
    optical = float(4 * np.pi / am.wavenumber * scattering_amplitude(am, k_in, k_in).imag)

    def differential(out_dirs):
        return np.abs(scattering_amplitudes(am, np.atleast_2d(out_dirs), k_in)) ** 2

    return CrossSectionResult(integrated, optical, differential, 1.0 / am.wavenumber ** 2)


def angular_distribution(am: AmplitudeMatrix, k_in_dir, thetas: Sequence[float],
                         phis: Sequence[float] = (0.0,)) -> List[Tuple[float, float, float]]:
    """dσ/dΩ 表：(θ, φ, |f|²)，θ、φ 以實驗室座標計"""
    rows = []
    thetas = np.asarray(thetas, dtype=float)
    for phi in phis:
        dirs = np.stack([np.sin(thetas) * np.cos(phi), np.sin(thetas) * np.sin(phi), np.cos(thetas)], axis=1)
        values = np.abs(scattering_amplitudes(am, dirs, k_in_dir)) ** 2
        rows.extend((float(t), float(phi), float(v)) for t, v in zip(thetas, values))
    return rows


# ============================================================
# 散射定理的缺陷
# ============================================================
def unitarity_defect(am: AmplitudeMatrix, l_conv: Optional[int] = None) -> float:
    """‖A†A − I‖_max，只取 l ≤ l_conv 的子區塊（預設 l_max − UNITARITY_MARGIN）"""
    if l_conv is None:
        l_conv = max(0, am.trunc.l_max - ToleranceConfig.UNITARITY_MARGIN)
    n = (l_conv + 1) ** 2
    block = am.A[:n, :n]
    return float(np.max(np.abs(block.conj().T @ block - np.eye(n))))


def reciprocity_defect(am: AmplitudeMatrix, pairs: Iterable[Tuple[np.ndarray, np.ndarray]]) -> float:
    """max |f(−k, −k') − f(k', k)|"""
    worst = 0.0
    for k_out, k_in in pairs:
        forward = scattering_amplitude(am, k_out, k_in)
        reverse = scattering_amplitude(am, -np.asarray(k_in, float), -np.asarray(k_out, float))
        worst = max(worst, abs(reverse - forward))
    return worst


def eta_symmetry_defect(am: AmplitudeMatrix) -> float:
    """‖ηAᵀη − A‖_max"""
    eta = (-1.0) ** channel_l(am.trunc.l_max)
    return float(np.max(np.abs(eta[:, None] * am.A.T * eta[None, :] - am.A)))


def optical_theorem_defect(am: AmplitudeMatrix, k_dir, k_prime_dir, n_theta: Optional[int] = None) -> float:
    """
    廣義光學定理：∫ f(k_r, k')* f(k_r, k) dΩ_r = (2πi/k)[f(k, k')* − f(k', k)]

    回傳相對差（以右側大小為尺度，下限 1/k²）。
    """
    dirs, weights, _ = _cross_section_rule(am.trunc.l_max, n_theta)
    f_k = scattering_amplitudes(am, dirs, k_dir)
    f_kp = scattering_amplitudes(am, dirs, k_prime_dir)
    lhs = np.sum(weights * f_kp.conj() * f_k)
    rhs = 2j * np.pi / am.wavenumber * (
        np.conj(scattering_amplitude(am, k_dir, k_prime_dir)) - scattering_amplitude(am, k_prime_dir, k_dir)
    )
    return float(abs(lhs - rhs) / max(abs(rhs), 1.0 / am.wavenumber ** 2))


# ============================================================
# 平移後的振幅
# ============================================================
def translated_amplitude_phase(am_i: AmplitudeMatrix, R_ij, k_out_dir, k_in_dir) -> complex:
    """f_j(k', k) = exp[i(k' − k)·R_ij] f_i(k', k)"""
    k = am_i.wavenumber
    q = k * (_unit(k_out_dir) - _unit(k_in_dir))
    return complex(np.exp(1j * float(q @ np.asarray(R_ij, dtype=float)))
                   * scattering_amplitude(am_i, k_out_dir, k_in_dir))


def translated_amplitude_matrix(am_i: AmplitudeMatrix, R_ij, l_cross: Optional[int] = None) -> AmplitudeMatrix:
    """
    以 D̂ 共軛把 A_i 平移到中心 j

    I − A_j = D̂(k;R_ij)[I − A_i]D̂(k;−R_ij)，D̂ 在放大的截斷 l_cross 下計算，
    使 Y(k̂')ᵀD̂ = e^{ik'·R}Y(k̂')ᵀ 在所需精度內成立。
    """
    k = am_i.wavenumber
    R = float(np.linalg.norm(np.asarray(R_ij, dtype=float)))
    if l_cross is None:
        l_cross = am_i.trunc.l_max + int(np.ceil(k * R)) + 12
    if l_cross < am_i.trunc.l_max:
        raise DomainError("l_cross 必須 ≥ l_max")
    big = Truncation(l_cross)
    dim = am_i.trunc.dim
    d_plus = translation_matrix_D_hat(k, R_ij, big).matrix[:, :dim]
    d_minus = translation_matrix_D_hat(k, -np.asarray(R_ij, dtype=float), big).matrix[:dim, :]
    A_j = np.eye(big.dim) - d_plus @ (np.eye(dim) - am_i.A) @ d_minus
    xi = xi_diagonal(l_cross)
    A_hat = xi[:, None] * A_j * xi.conj()[None, :]
    return AmplitudeMatrix(A_hat, A_j, am_i.energy, k, big)


# ============================================================
# 中心位能的參考相移
# ============================================================
def _tan_delta(k: float, a: float, l: int, f: float, df: float) -> Tuple[float, float]:
    """由內部解在 a 的 (f, f') 求 tanδ 的 (分子, 分母)"""
    x = k * a
    num = k * sph_bessel(BesselKind.J, l, x, True) * f - sph_bessel(BesselKind.J, l, x) * df
    den = k * sph_bessel(BesselKind.N, l, x, True) * f - sph_bessel(BesselKind.N, l, x) * df
    return float(num), float(den)


def square_well_phase_shifts(depth: float, radius: float, energy: float, l_max: int) -> np.ndarray:
    """方位井 V = −depth (r < radius) 的解析相移 δ_l"""
    if energy <= 0:
        raise DomainError("相移需要 E > 0")
    k = np.sqrt(energy)
    inner = energy + depth
    deltas = np.empty(l_max + 1)
    for l in range(l_max + 1):
        if inner > 0:
            q = np.sqrt(inner)
            f = sph_bessel(BesselKind.J, l, q * radius)
            df = q * sph_bessel(BesselKind.J, l, q * radius, True)
        else:
            q = np.sqrt(-inner)
            f = sph_bessel(BesselKind.I_MOD, l, q * radius)
            df = q * sph_bessel(BesselKind.I_MOD, l, q * radius, True)
        deltas[l] = np.arctan2(*_tan_delta(k, radius, l, float(f), float(df)))
    return deltas


def central_phase_shifts(potential: Callable[[float], float], energy: float, l_max: int,
                         r_match: float, r_start: float = 1e-4,
                         breakpoints: Sequence[float] = ()) -> np.ndarray:
    """
    以 solve_ivp 積分單通道 u'' = [l(l+1)/r² + V − E]u 求相移（獨立的參考解）

    r_match 必須已在位能範圍外；breakpoints 為位能不連續的半徑，逐段積分。
    """
    if energy <= 0:
        raise DomainError("相移需要 E > 0")
    k = np.sqrt(energy)
    edges = [r_start] + sorted(b for b in breakpoints if r_start < b < r_match) + [r_match]
    deltas = np.empty(l_max + 1)
    for l in range(l_max + 1):
        def rhs(r, y, l=l):
            return [y[1], (l * (l + 1) / r ** 2 + potential(r) - energy) * y[0]]

        state = [1.0, (l + 1) / r_start]
        for a, b in zip(edges[:-1], edges[1:]):
            sol = solve_ivp(rhs, (a, b), state, method="DOP853", rtol=1e-12, atol=1e-14)
            state = sol.y[:, -1]
        u, du = state
        # p = u / r：p'/p = u'/u − 1/r
        log_derivative = du / u - 1.0 / r_match
        deltas[l] = np.arctan2(*_tan_delta(k, r_match, l, 1.0, log_derivative))
    return deltas


def partial_wave_cross_section(deltas: Sequence[float], k: float) -> float:
    """σ = (4π/k²) Σ (2l+1) sin²δ_l"""
    deltas = np.asarray(deltas, dtype=float)
    l = np.arange(len(deltas))
    return float(4 * np.pi / k ** 2 * np.sum((2 * l + 1) * np.sin(deltas) ** 2))
