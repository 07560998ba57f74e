"""
多中心散射引擎 - 原子 T 矩陣、久期方程組、分子波函數與束縛態掃描

S^{ij} = T_a^{i−1} δ_ij + (1 − δ_ij) K^{ij}
Σ_j S^{ij} B^j = −(4π/k) D(k;R_i) ξ Y(k̂)
球內 ψ = Y(r̂_i)ᵀ R^i(r_i) C^i，C^i = b_i⁻² W[p_iᵀ,R^i]⁻¹ M_{i+} B^i
球隙 ψ = χ⁺(r) + Σ_i Y(r̂_i)ᵀ q_i(r_i) B^i
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.optimize import minimize_scalar
from scipy.signal import argrelmin

from config import ProcessingConfig, QuadratureConfig, ToleranceConfig
from engines.angular import Truncation, polar_split, real_sh_matrix, reflection_signs
from engines.errors import DomainError, NearSingularError
from engines.green import GreenExpansion, distorted_wave_many
from engines.potential import MolecularPartition
from engines.radial import FreeKind, FreeRadialSolution, RadialSolution, Regularity, matrix_wronskian
from engines.scatter import AmplitudeMatrix, scattering_amplitude
from engines.specfun import xi_diagonal
from engines.translate import NearFieldCoupling, translation_matrix_D
from utils import print_lock
from utils.quadrature import sphere_product_quadrature


# ============================================================
# 原子資料
# ============================================================
@dataclass
class AtomicScatteringData:
    """單一原子球在能量 E 的所有資料（皆在 r_i = b_i 取值）"""
    center: int
    position: np.ndarray
    radius: float
    R_solution: RadialSolution
    p: RadialSolution
    q: RadialSolution
    M: np.ndarray
    T_inv: np.ndarray
    inner_wronskian: np.ndarray
    energy: float
    cond_M: float
    green: Optional[GreenExpansion] = None

    @property
    def trunc(self) -> Truncation:
        return self.p.trunc

    @property
    def symmetry_defect(self) -> float:
        scale = max(float(np.max(np.abs(self.T_inv))), 1e-300)
        return float(np.max(np.abs(self.T_inv - self.T_inv.T))) / scale


def atomic_t_inverse(p: RadialSolution, q: RadialSolution, R_solution: RadialSolution,
                     M: np.ndarray, b: float, center: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    T_a⁻¹ = W[qᵀ,R](b) W[pᵀ,R](b)⁻¹ M

    Returns:
        (T_a⁻¹, W[pᵀ,R](b))

    Raises:
        NearSingularError: W[pᵀ,R] 接近奇異（偶然簡併；R ≡ p 時必然發生），請微調能量或格點
    """
    p_v, p_d = p.evaluate(b)
    q_v, q_d = q.evaluate(b)
    R_v, R_d = R_solution.evaluate(b)
    w_pR = matrix_wronskian(p_v.T, p_d.T, R_v, R_d)
    w_qR = matrix_wronskian(q_v.T, q_d.T, R_v, R_d)
    cond = np.linalg.cond(w_pR)
    if not np.isfinite(cond) or cond > ToleranceConfig.INNER_WRONSKIAN_COND_MAX:
        raise NearSingularError(
            f"中心 {center} 的 W[pᵀ,R](b) 接近奇異（cond = {cond:.2e}），"
            "可能是偶然簡併或 V_A ≡ 0，請微調能量或格點", cond, center,
        )
    return w_qR @ np.linalg.solve(w_pR, M), w_pR


def build_atomic_data(center: int, position, b: float, R_solution: RadialSolution,
                      p: RadialSolution, q: RadialSolution, M: np.ndarray,
                      green: Optional[GreenExpansion] = None,
                      strict: bool = True) -> AtomicScatteringData:
    """
    Args:
        strict: True 時 cond(M) 超過門檻直接拋出（連續態）；束縛態掃描只記錄
    """
    cond_M = float(np.linalg.cond(M))
    if strict and (not np.isfinite(cond_M) or cond_M > ToleranceConfig.M_COND_MAX):
        raise NearSingularError(
            f"中心 {center} 的 M 接近奇異（cond = {cond_M:.2e}）：V_I 在此能量附近有束縛態或共振",
            cond_M, center,
        )
    T_inv, w_pR = atomic_t_inverse(p, q, R_solution, M, b, center)
    return AtomicScatteringData(center, np.asarray(position, dtype=float), float(b), R_solution, p, q,
                                M, T_inv, w_pR, p.energy, cond_M, green)


# ============================================================
# 久期方程組
# ============================================================
def excitation_l_max(l_max: int, k: float, positions) -> int:
    """右側激發通道的截斷：l_max + ⌈k·max|R_i|⌉ + EXCITATION_MARGIN"""
    reach = float(np.max(np.linalg.norm(np.atleast_2d(positions), axis=1)))
    return l_max + int(np.ceil(k * reach)) + QuadratureConfig.EXCITATION_MARGIN


@dataclass
class SecularSystem:
    energy: float
    matrix: np.ndarray
    dims: List[int]
    trunc: Truncation
    rhs: Optional[np.ndarray] = None
    excitation: Optional[Truncation] = None
    wavenumber: float = 0.0
    block_symmetry_defect: float = 0.0

    @property
    def n_centers(self) -> int:
        return len(self.dims)

    def block(self, i: int, j: int) -> np.ndarray:
        dim = self.trunc.dim
        return self.matrix[i * dim:(i + 1) * dim, j * dim:(j + 1) * dim]


def assemble_secular(atomics: Sequence[AtomicScatteringData],
                     couplings: Dict[Tuple[int, int], NearFieldCoupling],
                     trunc: Truncation, k: Optional[float] = None,
                     excitation_l: Optional[int] = None) -> SecularSystem:
    """
    組合 S 與（正能量時）每個激發通道 L'' 的右側

    couplings[(i, j)] 為在 ∂τ_i 上積分得到的 K^{ji}；S^{ij} = (K^{ji})ᵀ，
    另一方向 (j, i) 的獨立計算用來量測區塊對稱性。

    Raises:
        DomainError: 截斷或能量不一致
    """
    n = len(atomics)
    dim = trunc.dim
    energy = atomics[0].energy
    for atom in atomics:
        if atom.trunc != trunc:
            raise DomainError(f"中心 {atom.center} 的截斷與系統不一致")
        if abs(atom.energy - energy) > 1e-12 * max(1.0, abs(energy)):
            raise DomainError("所有中心必須在同一能量")

    matrix = np.zeros((n * dim, n * dim), dtype=complex)
    for i, atom in enumerate(atomics):
        matrix[i * dim:(i + 1) * dim, i * dim:(i + 1) * dim] = atom.T_inv
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            coupling = couplings.get((i, j))
            if coupling is None:
                raise DomainError(f"缺少 K^{{{j}{i}}}")
            if coupling.K.shape != (dim, dim):
                raise DomainError(f"K^{{{j}{i}}} 的形狀 {coupling.K.shape} 與截斷不符")
            matrix[i * dim:(i + 1) * dim, j * dim:(j + 1) * dim] = coupling.K.T

    defect = 0.0
    scale = max(float(np.max(np.abs(matrix))), 1e-300)
    for i in range(n):
        for j in range(i + 1, n):
            s_ij = matrix[i * dim:(i + 1) * dim, j * dim:(j + 1) * dim]
            s_ji = matrix[j * dim:(j + 1) * dim, i * dim:(i + 1) * dim]
            defect = max(defect, float(np.max(np.abs(s_ij - s_ji.T))) / scale)

    system = SecularSystem(energy, matrix, [dim] * n, trunc, block_symmetry_defect=defect)
    if k is not None:
        positions = np.array([atom.position for atom in atomics])
        l_exc = excitation_l_max(trunc.l_max, k, positions) if excitation_l is None else excitation_l
        big = Truncation(l_exc)
        rhs = np.empty((n * dim, big.dim))
        for i, atom in enumerate(atomics):
            rhs[i * dim:(i + 1) * dim] = -translation_matrix_D(k, atom.position, big).matrix[:dim, :] / k
        system.rhs, system.excitation, system.wavenumber = rhs, big, k
    return system


@dataclass
class SecularSolution:
    """每個激發通道的 B；B(k̂) = channels @ 4π ξ Y(k̂)"""
    system: SecularSystem
    channels: np.ndarray
    condition: float
    residual: float

    def B(self, k_dir) -> np.ndarray:
        big = self.system.excitation
        y = real_sh_matrix(big.l_max, np.asarray(k_dir, dtype=float)[None, :])[0]
        return self.channels @ (4 * np.pi * xi_diagonal(big.l_max) * y)

    def B_blocks(self, k_dir) -> List[np.ndarray]:
        dim = self.system.trunc.dim
        vec = self.B(k_dir)
        return [vec[i * dim:(i + 1) * dim] for i in range(self.system.n_centers)]


def solve_secular(system: SecularSystem, rhs: Optional[np.ndarray] = None) -> SecularSolution:
    """
    LU（部分選主元）一次分解，所有激發通道共用

    Raises:
        NearSingularError: S 為奇異矩陣
    """
    rhs = system.rhs if rhs is None else rhs
    if rhs is None:
        rhs = np.zeros((system.matrix.shape[0], 1))
    cond = float(np.linalg.cond(system.matrix))
    if not np.isfinite(cond):
        raise NearSingularError(f"E = {system.energy:.8g} 的久期矩陣奇異", cond)
    if cond > ToleranceConfig.SECULAR_COND_MAX:
        with print_lock:
            print(f"⚠️ E = {system.energy:.8g} 的久期矩陣病態（cond = {cond:.2e}），可能接近共振")
    lu = lu_factor(system.matrix)
    channels = lu_solve(lu, rhs)
    norm_rhs = float(np.linalg.norm(rhs))
    residual = float(np.linalg.norm(system.matrix @ channels - rhs)) / norm_rhs if norm_rhs > 0 else 0.0
    return SecularSolution(system, channels, cond, residual)


def secular_singular_values(matrix: np.ndarray) -> np.ndarray:
    """由大到小的奇異值"""
    return np.linalg.svd(matrix, compute_uv=False)


def swap_symmetry_defect(solution: SecularSolution) -> float:
    """
    兩個相同原子在 ±z 上時，z → −z 反射把中心 0 與 1 互換：
    B^0 = Σ B^1 Σ_big，Σ = diag((−1)^{l+|m|})
    """
    system = solution.system
    if system.n_centers != 2:
        raise DomainError("交換對稱只適用於兩個中心")
    dim = system.trunc.dim
    sigma = reflection_signs(system.trunc.l_max)
    sigma_big = reflection_signs(system.excitation.l_max)
    b0 = solution.channels[:dim]
    b1 = solution.channels[dim:]
    mapped = sigma[:, None] * b1 * sigma_big[None, :]
    scale = max(float(np.max(np.abs(solution.channels))), 1e-300)
    return float(np.max(np.abs(b0 - mapped))) / scale


# ============================================================
# 分子波函數
# ============================================================
@dataclass
class MolecularWavefunction:
    atomics: List[AtomicScatteringData]
    partition: MolecularPartition
    B: List[np.ndarray]
    k_vec: Optional[np.ndarray] = None
    constant_interstitial: bool = False
    C: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.C:
            self.C = [
                np.linalg.solve(atom.inner_wronskian, atom.M @ b) / atom.radius ** 2
                for atom, b in zip(self.atomics, self.B)
            ]

    def _chi(self, points: np.ndarray) -> np.ndarray:
        if self.k_vec is None:
            return np.zeros(len(points), dtype=complex)
        if self.constant_interstitial:
            return np.exp(1j * points @ self.k_vec)
        out = np.empty(len(points), dtype=complex)
        owner = np.array([self.partition.nearest(pt) for pt in points])
        for i in np.unique(owner):
            atom = self.atomics[i]
            if atom.green is None:
                raise DomainError(f"中心 {i} 缺少 Green 展開，無法計算 χ⁺")
            mask = owner == i
            phase = np.exp(1j * float(self.k_vec @ atom.position))
            out[mask] = phase * distorted_wave_many(atom.green, self.k_vec, points[mask])
        return out

    def _scattered(self, points: np.ndarray) -> np.ndarray:
        total = np.zeros(len(points), dtype=complex)
        for atom, b in zip(self.atomics, self.B):
            radii, dirs = polar_split(points, atom.position)
            y = real_sh_matrix(atom.trunc.l_max, dirs)
            vals = np.empty((len(points), atom.trunc.dim, atom.trunc.dim), dtype=complex)
            stored = radii <= atom.q.r_range[1]
            if np.any(stored):
                vals[stored] = atom.q.evaluate(radii[stored])[0]
            if np.any(~stored):
                kind = FreeKind.DECAYING if atom.q.regularity is Regularity.DECAYING else FreeKind.OUTGOING
                far = FreeRadialSolution(kind, atom.q.wavenumber, atom.trunc, atom.energy)
                vals[~stored] = far.evaluate(radii[~stored])[0]
            total += np.einsum("na,nab,b->n", y, vals, b)
        return total

    def _inside(self, i: int, points: np.ndarray) -> np.ndarray:
        atom = self.atomics[i]
        radii, dirs = polar_split(points, atom.position)
        y = real_sh_matrix(atom.trunc.l_max, dirs)
        vals, _ = atom.R_solution.evaluate(radii)
        return np.einsum("na,nab,b->n", y, vals, self.C[i])

    def evaluate_many(self, points, region: Optional[int] = None) -> np.ndarray:
        """
        Args:
            region: None 依位置判斷；−1 強制用球隙形式；i ≥ 0 強制用球 i 內的形式
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        owner = self.partition.locate(points) if region is None else np.full(len(points), region)
        out = np.empty(len(points), dtype=complex)
        outside = owner < 0
        if np.any(outside):
            pts = points[outside]
            out[outside] = self._chi(pts) + self._scattered(pts)
        for i in np.unique(owner[~outside]):
            mask = owner == i
            out[mask] = self._inside(int(i), points[mask])
        return out

    def evaluate(self, point, region: Optional[int] = None) -> complex:
        return complex(self.evaluate_many(np.asarray(point, dtype=float)[None, :], region)[0])

    def surface_matching_defect(self, n_theta: int = 6) -> Tuple[float, float]:
        """
        每個 ∂τ_i 上內外兩種表示的差

        Returns:
            (max|ψ_in − ψ_out| / max|ψ|, max|ψ|)
        """
        dirs, _, _ = sphere_product_quadrature(n_theta, 2 * n_theta)
        worst, peak = 0.0, 0.0
        for i, atom in enumerate(self.atomics):
            points = atom.position + atom.radius * dirs
            inside = self.evaluate_many(points, region=i)
            outside = self.evaluate_many(points, region=-1)
            worst = max(worst, float(np.max(np.abs(inside - outside))))
            peak = max(peak, float(np.max(np.abs(inside))), float(np.max(np.abs(outside))))
        return worst / max(peak, 1e-300), peak


def reconstruct_wavefunction(solution: SecularSolution, atomics: Sequence[AtomicScatteringData],
                             partition: MolecularPartition, k_vec, constant_interstitial: bool = False
                             ) -> MolecularWavefunction:
    """由久期解組出 ψ⁺（入射方向 k̂ = k_vec / |k|）"""
    k_vec = np.asarray(k_vec, dtype=float)
    k_dir = k_vec / np.linalg.norm(k_vec)
    return MolecularWavefunction(list(atomics), partition, solution.B_blocks(k_dir), k_vec,
                                 constant_interstitial)


def molecular_amplitude(wf: MolecularWavefunction, k_out_dir, v_i_amplitude: Optional[AmplitudeMatrix] = None,
                        origin_center: int = 0) -> complex:
    """
    f(k', k) = e^{i(k'−k)·R_0} f_{V_I}(k', k) − (1/k) Σ_i e^{−ik'·R_i} Y(k̂')ᵀ ξ† B^i

    V_I 為常數時 f_{V_I} = 0（v_i_amplitude 傳 None）。
    """
    if wf.k_vec is None:
        raise DomainError("束縛態沒有散射振幅")
    k = float(np.linalg.norm(wf.k_vec))
    k_in = wf.k_vec / k
    k_out = np.asarray(k_out_dir, dtype=float)
    total = 0.0 + 0.0j
    if v_i_amplitude is not None:
        R0 = wf.atomics[origin_center].position
        total += np.exp(1j * k * float((k_out - k_in) @ R0)) * scattering_amplitude(v_i_amplitude, k_out, k_in)
    for atom, b in zip(wf.atomics, wf.B):
        l_max = atom.trunc.l_max
        y = real_sh_matrix(l_max, k_out[None, :])[0]
        total -= np.exp(-1j * k * float(k_out @ atom.position)) * (y @ (xi_diagonal(l_max).conj() * b)) / k
    return complex(total)


def molecular_cross_sections(wf: MolecularWavefunction, v_i_amplitude: Optional[AmplitudeMatrix] = None,
                             n_theta: Optional[int] = None) -> Tuple[float, float]:
    """(∫|f|²dΩ, (4π/k) Im f(k,k))"""
    k = float(np.linalg.norm(wf.k_vec))
    l_eff = max(atom.trunc.l_max for atom in wf.atomics) + int(np.ceil(k * np.max(
        np.linalg.norm(wf.partition.positions, axis=1))))
    n_theta = max(QuadratureConfig.CROSS_SECTION_THETA if n_theta is None else n_theta, l_eff + 1)
    dirs, weights, _ = sphere_product_quadrature(n_theta, 2 * n_theta)
    values = np.array([molecular_amplitude(wf, d, v_i_amplitude) for d in dirs])
    integrated = float(np.sum(weights * np.abs(values) ** 2))
    forward = molecular_amplitude(wf, wf.k_vec / k, v_i_amplitude)
    return integrated, float(4 * np.pi / k * forward.imag)


# ============================================================
# 束縛態掃描
# ============================================================
@dataclass
class ScanSample:
    energy: float
    sigma_ratio: float
    phase: float
    cond_M_max: float

    @property
    def flagged(self) -> bool:
        return self.cond_M_max > ToleranceConfig.M_COND_MAX


@dataclass
class BoundCandidate:
    energy: float
    sigma_ratio: float
    phase_flip: bool
    flagged: bool


@dataclass
class BoundScanResult:
    samples: List[ScanSample]
    candidates: List[BoundCandidate]

    @property
    def flagged_window(self) -> bool:
        return any(sample.flagged for sample in self.samples)


def scan_sample(energy: float, matrix: np.ndarray, cond_M_max: float) -> ScanSample:
    """σ_min/σ_max 與 det(S) 的相位"""
    sv = secular_singular_values(matrix)
    sign, _ = np.linalg.slogdet(matrix)
    return ScanSample(energy, float(sv[-1] / sv[0]), float(np.angle(sign)), cond_M_max)


def bound_state_scan(secular_at: Callable[[float], ScanSample], window: Tuple[float, float],
                     steps: int, max_workers: Optional[int] = None,
                     threshold: Optional[float] = None, verbose: bool = False) -> BoundScanResult:
    """
    在 E < V∞ 的視窗上找久期矩陣的奇異點

    能量格點上的 σ_min/σ_max 以 argrelmin 找局部極小；只有左右相鄰樣本間
    det(S) 的相位翻轉（單根變號）的極小才進一步以 golden-section 細化，
    細化後低於門檻者列為候選。沒有變號的極小（偶重根、極點邊緣）只在
    verbose 時列出。cond(M_i) 過大的能量代表 V_I 本身有束縛態，整個視窗會被標記。
    """
    lo, hi = window
    if not lo < hi:
        raise DomainError(f"能量視窗 {window} 不合法")
    if steps < 3:
        raise DomainError("掃描至少需要 3 個能量點")
    threshold = ToleranceConfig.BOUND_THRESHOLD if threshold is None else threshold
    energies = np.linspace(lo, hi, steps)
    workers = max_workers or ProcessingConfig.MAX_WORKERS

    with ThreadPoolExecutor(max_workers=workers) as executor:
        samples = list(executor.map(secular_at, energies))

    if any(sample.flagged for sample in samples):
        with print_lock:
            print(f"⚠️ 能量視窗 [{lo:.6g}, {hi:.6g}] 內 cond(M_i) 超過門檻：V_I 本身可能有束縛態")

    ratios = np.array([sample.sigma_ratio for sample in samples])
    padded = np.concatenate([[np.inf], ratios, [np.inf]])
    minima = argrelmin(padded)[0] - 1
    candidates = []
    for m in minima:
        if m <= 0 or m >= steps - 1:
            continue
        if not phase_flips(samples[m - 1], samples[m + 1]):
            if verbose:
                with print_lock:
                    print(f"   🔬 E ≈ {energies[m]:.6g} Ry 的極小兩側 det(S) 未變號，略過")
            continue
        refined = minimize_scalar(
            lambda e: secular_at(float(e)).sigma_ratio,
            bracket=(energies[m - 1], energies[m], energies[m + 1]),
            method="golden",
            tol=1e-10,
        )
        energy = float(refined.x)
        ratio = float(refined.fun)
        if verbose:
            with print_lock:
                print(f"   🔬 E ≈ {energy:.10f} Ry，σ_min/σ_max = {ratio:.3e}")
        if ratio >= threshold:
            continue
        candidates.append(BoundCandidate(energy, ratio, True, samples[m].flagged))
    return BoundScanResult(samples, candidates)


def phase_flips(left: ScanSample, right: ScanSample) -> bool:
    """det(S) 的相位在兩個樣本之間跳動超過 π/2"""
    return bool(abs(np.angle(np.exp(1j * (right.phase - left.phase)))) > np.pi / 2)
