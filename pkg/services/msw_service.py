"""
多中心散射服務
每個能量：原子資料 → 近場耦合 K → 久期方程組 → 分子波函數與截面；
負能量視窗上掃描久期矩陣的奇異點（束縛態）
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from engines.msw import (
    AtomicScatteringData,
    BoundScanResult,
    MolecularWavefunction,
    ScanSample,
    SecularSolution,
    assemble_secular,
    bound_state_scan,
    molecular_cross_sections,
    reconstruct_wavefunction,
    scan_sample,
    solve_secular,
    swap_symmetry_defect,
)
from engines.scatter import AmplitudeMatrix, amplitude_matrix
from engines.translate import NearFieldCoupling, general_K_surface
from services.problem_builder import ProblemBuilder
from services.schemas import BoundScanSpec, MswEnergyRecord
from utils import print_lock


@dataclass
class MswEnergyResult:
    record: MswEnergyRecord
    atomics: List[AtomicScatteringData]
    couplings: Dict[Tuple[int, int], NearFieldCoupling]
    solution: SecularSolution
    wavefunction: MolecularWavefunction
    v_i_amplitude: Optional[AmplitudeMatrix]


class MswService:
    """多中心 DW-MS 計算"""

    def __init__(self, builder: ProblemBuilder, workers: int = 1, verbose: bool = False):
        self.builder = builder
        self.workers = workers
        self.verbose = verbose

    # --------------------------------------------------------
    # 組件
    # --------------------------------------------------------
    def atomics(self, energy: float, strict: bool = True) -> List[AtomicScatteringData]:
        return [self.builder.atomic_data(i, energy, strict=strict) for i in range(self.builder.n_centers)]

    def couplings(self, atomics: List[AtomicScatteringData]) -> Dict[Tuple[int, int], NearFieldCoupling]:
        """所有有序中心對 (i, j)：在 ∂τ_i 上積分的 K^{ji}"""
        result = {}
        for i, atom_i in enumerate(atomics):
            for j, atom_j in enumerate(atomics):
                if i == j:
                    continue
                coupling = general_K_surface(atom_i.q, atom_j.q, atom_i.position, atom_j.position,
                                             atom_i.radius, pair=(j, i))
                result[(i, j)] = coupling
                if self.verbose:
                    with print_lock:
                        print(f"   🔬 K^{{{j}{i}}}：n_θ = {coupling.n_theta}，加倍差 {coupling.doubling_defect:.1e}")
        return result

    def is_mirror_pair(self) -> bool:
        """兩個中心位於 ±z、球半徑相同且位能項互為鏡像"""
        builder = self.builder
        if builder.n_centers != 2:
            return False
        p0, p1 = builder.positions
        if not (np.allclose(p0[:2], 0.0) and np.allclose(p1[:2], 0.0) and np.isclose(p0[2], -p1[2])):
            return False
        if not np.isclose(builder.radii[0], builder.radii[1]):
            return False
        terms = builder.model.terms
        mapped = sorted(repr(replace(t, center=1 - t.center)) for t in terms)
        return mapped == sorted(repr(t) for t in terms)

    # --------------------------------------------------------
    # 連續態
    # --------------------------------------------------------
    def run_energy(self, energy: float) -> MswEnergyResult:
        builder = self.builder
        builder.check_truncation(energy)
        k = builder.wavenumber(energy)
        atomics = self.atomics(energy)
        couplings = self.couplings(atomics)
        system = assemble_secular(atomics, couplings, builder.trunc, k=k)
        solution = solve_secular(system)

        k_dir = builder.incident_direction()
        constant = builder.distorted.is_constant
        wf = reconstruct_wavefunction(solution, atomics, builder.partition, k * k_dir, constant)
        matching, _ = wf.surface_matching_defect()
        v_i_amplitude = None
        if not constant:
            v_i_amplitude = amplitude_matrix(atomics[0].M, atomics[0].green.M_minus, k, energy, builder.trunc)
        sigma_int, sigma_opt = molecular_cross_sections(wf, v_i_amplitude)

        record = MswEnergyRecord(
            energy=energy,
            wavenumber=k,
            secular_condition=solution.condition,
            solve_residual=solution.residual,
            t_inverse_symmetry=max(atom.symmetry_defect for atom in atomics),
            block_symmetry=system.block_symmetry_defect,
            surface_matching=matching,
            swap_symmetry=swap_symmetry_defect(solution) if self.is_mirror_pair() else None,
            sigma_integrated=sigma_int,
            sigma_optical=sigma_opt,
            B=[[(float(c.real), float(c.imag)) for c in block] for block in wf.B],
        )
        if self.verbose:
            with print_lock:
                print(f"   🔬 E = {energy:.6g} Ry：cond(S) = {solution.condition:.2e}，"
                      f"殘差 {solution.residual:.1e}，球面匹配 {matching:.1e}")
        return MswEnergyResult(record, atomics, couplings, solution, wf, v_i_amplitude)

    def sweep(self, energies: List[float]) -> List[MswEnergyResult]:
        print("\n" + "=" * 60)
        print(f"🚀 多中心連續態：{self.builder.n_centers} 個中心，{len(energies)} 個能量")
        print("=" * 60)
        with ThreadPoolExecutor(max_workers=self.workers) as executor:
            results = list(executor.map(self.run_energy, energies))
        print(f"✅ 完成 {len(results)} 個能量")
        return results

    # --------------------------------------------------------
    # 束縛態
    # --------------------------------------------------------
    def secular_sample(self, energy: float) -> ScanSample:
        """單一負能量的 σ_min/σ_max（cond(M_i) 只記錄不拋出）"""
        atomics = self.atomics(energy, strict=False)
        system = assemble_secular(atomics, self.couplings(atomics), self.builder.trunc)
        return scan_sample(energy, system.matrix, max(atom.cond_M for atom in atomics))

    def bound_scan(self, spec: BoundScanSpec) -> BoundScanResult:
        print("\n" + "=" * 60)
        print(f"🚀 束縛態掃描：[{spec.window[0]:.6g}, {spec.window[1]:.6g}] Ry，{spec.steps} 個能量")
        print("=" * 60)
        result = bound_state_scan(self.secular_sample, tuple(spec.window), spec.steps,
                                  max_workers=self.workers, threshold=spec.threshold, verbose=self.verbose)
        if result.candidates:
            for candidate in result.candidates:
                print(f"✅ 候選束縛態 E = {candidate.energy:.10f} Ry（σ_min/σ_max = {candidate.sigma_ratio:.2e}）")
        else:
            print("⚠️ 視窗內沒有找到束縛態")
        return result
