"""
單中心散射服務
以完整位能對中心 0 展開，求振幅矩陣、截面與部分波參考值
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from config import GridConfig, QuadratureConfig
from engines.potential import TermKind
from engines.scatter import (
    AmplitudeMatrix,
    amplitude_matrix,
    angular_distribution,
    central_phase_shifts,
    cross_sections,
    partial_wave_cross_section,
    square_well_phase_shifts,
    unitarity_defect,
)
from services.problem_builder import CenterSolutions, ProblemBuilder
from services.schemas import SingleScatterRecord
from utils import print_lock


@dataclass
class SingleScatterResult:
    record: SingleScatterRecord
    amplitude: AmplitudeMatrix
    solutions: CenterSolutions
    angular: List[Tuple[float, float, float]]


class ScatteringService:
    """單一（可非球對稱）位能的散射"""

    def __init__(self, builder: ProblemBuilder, workers: int = 1, verbose: bool = False):
        self.builder = builder
        self.workers = workers
        self.verbose = verbose
        if builder.n_centers > 1:
            print(f"⚠️ 設定含 {builder.n_centers} 個中心：single_scatter 把整個位能對中心 0 展開")

    def amplitude(self, energy: float, full_range: bool = False) -> Tuple[AmplitudeMatrix, CenterSolutions]:
        """完整位能 V 對中心 0 的振幅矩陣（M₋ = M₊*）"""
        solutions = self.builder.distorting_solutions(0, energy, incoming=True, which="V", full_range=full_range)
        k = self.builder.wavenumber(energy)
        am = amplitude_matrix(solutions.M, solutions.green.M_minus, k, energy, self.builder.trunc)
        return am, solutions

    def partial_wave_oracle(self, energy: float) -> Optional[float]:
        """
        球對稱位能的獨立參考截面

        單一方位井用解析相移，其他球對稱位能用 solve_ivp 積分；
        非球對稱或長程位能回傳 None。
        """
        model = self.builder.model
        if not model.is_spherical_about(0) or not model.terms:
            return None
        k2 = energy - model.offset
        l_max = self.builder.trunc.l_max
        if len(model.terms) == 1 and model.terms[0].kind is TermKind.SQUARE_WELL:
            term = model.terms[0]
            deltas = square_well_phase_shifts(term.depth, term.radius, k2, l_max)
            return partial_wave_cross_section(deltas, np.sqrt(k2))

        tail = model.tail_radius(0, GridConfig.ASYMPTOTIC_THRESHOLD)
        if not np.isfinite(tail):
            return None
        origin = model.positions[0]

        def potential(r):
            return float(model.evaluate(origin + np.array([0.0, 0.0, r]))[0]) - model.offset

        deltas = central_phase_shifts(potential, k2, l_max, tail + GridConfig.ASYMPTOTIC_MARGIN,
                                      breakpoints=model.breakpoints(0))
        return partial_wave_cross_section(deltas, np.sqrt(k2))

    def run_energy(self, energy: float) -> SingleScatterResult:
        self.builder.check_truncation(energy)
        am, solutions = self.amplitude(energy)
        k_in = self.builder.incident_direction()
        xs = cross_sections(am, k_in)
        thetas = np.linspace(0.0, np.pi, QuadratureConfig.ANGULAR_THETA_POINTS)
        phis = 2 * np.pi * np.arange(QuadratureConfig.ANGULAR_PHI_POINTS) / QuadratureConfig.ANGULAR_PHI_POINTS
        record = SingleScatterRecord(
            energy=energy,
            wavenumber=am.wavenumber,
            sigma_integrated=xs.sigma_integrated,
            sigma_optical=xs.sigma_optical,
            sigma_partial_wave=self.partial_wave_oracle(energy),
            unitarity_defect=unitarity_defect(am),
            symmetry_defect=am.symmetry_defect,
        )
        if self.verbose:
            with print_lock:
                print(f"   🔬 E = {energy:.6g} Ry：σ = {xs.sigma_integrated:.8g}（光學定理 {xs.sigma_optical:.8g}）")
        return SingleScatterResult(record, am, solutions, angular_distribution(am, k_in, thetas, phis))

    def sweep(self, energies: List[float]) -> List[SingleScatterResult]:
        """
        能量掃描（平行）；結果依輸入順序排列
        """
        print("\n" + "=" * 60)
        print(f"🚀 單中心散射：{len(energies)} 個能量，l_max = {self.builder.trunc.l_max}")
        print("=" * 60)
        with ThreadPoolExecutor(max_workers=self.workers) as executor:
            results = list(executor.map(self.run_energy, energies))
        print(f"✅ 完成 {len(results)} 個能量")
        return results
