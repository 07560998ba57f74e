"""
驗證服務
在設定檔的位能與能量上執行所有解之間的恆等式與散射定理檢查
"""

from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List

import numpy as np

from config import ToleranceConfig
from engines.angular import Truncation, real_sh_matrix
from engines.green import eval_green, eval_green_irregular_form, green_expansion, outgoing_wronskian_defect
from engines.radial import FreeKind, FreeRadialSolution, identity_defects
from engines.scatter import (
    amplitude_matrix,
    cross_sections,
    eta_symmetry_defect,
    optical_theorem_defect,
    reciprocity_defect,
    unitarity_defect,
)
from engines.specfun import free_wronskian_check
from engines.translate import (
    enclosing_surface_defect,
    free_K_closed,
    free_K_surface,
    gradient_fd_check,
    translation_matrix_D,
    translation_matrix_D_hat,
)
from services.msw_service import MswService
from services.problem_builder import CenterSolutions, ProblemBuilder
from services.schemas import CheckResult
from utils import print_lock

# 固定種子：同一設定檔的報告逐位元相同
_SEED = 20240517


def _unit_vectors(rng: np.random.Generator, count: int) -> np.ndarray:
    vectors = rng.normal(size=(count, 3))
    return vectors / np.linalg.norm(vectors, axis=1)[:, None]


def _relative(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(float(np.max(np.abs(b))), 1e-300))


class VerificationService:
    """
    驗證模式

    單中心設定檢查完整位能 V 的解；多中心設定檢查每個中心的 V_I 解，
    並加上久期方程組與分子波函數的檢查。
    """

    def __init__(self, builder: ProblemBuilder, workers: int = 1, verbose: bool = False):
        self.builder = builder
        self.workers = workers
        self.verbose = verbose
        overrides = builder.problem.tolerances
        identity = overrides.identity or ToleranceConfig.IDENTITY
        self.tolerances: Dict[str, float] = {
            "identity": identity,
            "green": overrides.green or ToleranceConfig.GREEN,
            "optical": ToleranceConfig.OPTICAL,
            "cross_section_gap": ToleranceConfig.CROSS_SECTION_GAP,
            "translation": ToleranceConfig.TRANSLATION,
            "free_k": ToleranceConfig.FREE_K,
            "free_form": ToleranceConfig.FREE_FORM,
            "projection": ToleranceConfig.PROJECTION,
            "surface_matching": overrides.surface_matching or ToleranceConfig.SURFACE_MATCHING,
            "solve_residual": overrides.solve_residual or ToleranceConfig.SOLVE_RESIDUAL,
            "swap_symmetry": ToleranceConfig.SWAP_SYMMETRY,
        }
        self.which = "V" if builder.n_centers == 1 else "V_I"

    def _check(self, name: str, defect: float, tolerance_key: str, context: str) -> CheckResult:
        tolerance = self.tolerances[tolerance_key]
        passed = bool(np.isfinite(defect) and defect <= tolerance)
        if self.verbose or not passed:
            mark = "🔬" if passed else "⚠️"
            with print_lock:
                print(f"   {mark} {name} [{context}]：{defect:.2e}（門檻 {tolerance:.0e}）")
        return CheckResult(name=name, defect=float(defect), tolerance=tolerance, passed=passed, context=context)

    # --------------------------------------------------------
    # 單一中心的解
    # --------------------------------------------------------
    def solution_checks(self, center: int, energy: float, solutions: CenterSolutions) -> List[CheckResult]:
        builder = self.builder
        b = float(builder.radii[center])
        context = f"E={energy:.10g} center={center} {self.which}"
        checks = [
            self._check(f"radial.{name}", defect, "identity", context)
            for name, defect in identity_defects(solutions.p, solutions.q, solutions.q_minus, b, 1.3 * b).items()
        ]
        checks.append(self._check("potential.projection_doubling",
                                  builder.projection_defect(self.which, center), "projection", context))

        gx = solutions.green
        origin = builder.positions[center]
        rng = np.random.default_rng(_SEED + center)
        inner = origin + 0.95 * b * _unit_vectors(rng, 4)
        outer = origin + 1.25 * b * _unit_vectors(rng, 4)
        direct = np.array([eval_green(gx, r, s) for r, s in zip(inner, outer)])
        swapped = np.array([eval_green(gx, s, r) for r, s in zip(inner, outer)])
        irregular = np.array([
            eval_green_irregular_form(solutions.q, solutions.q_minus, gx.A_hat, r, s, origin)
            for r, s in zip(inner, outer)
        ])
        gx_minus = green_expansion(solutions.p, solutions.q_minus, origin=origin, r_eval=b, v_inf=builder.v_inf)
        incoming = np.array([np.conj(eval_green(gx_minus, s, r)) for r, s in zip(inner, outer)])
        checks += [
            self._check("green.symmetry", _relative(swapped, direct), "green", context),
            self._check("green.irregular_form", _relative(irregular, direct), "green", context),
            self._check("green.incoming_reciprocity", _relative(incoming, direct), "green", context),
        ]
        r_far = solutions.q.r_range[1]
        r_far = 3.0 * b if not np.isfinite(r_far) else r_far
        checks.append(self._check("green.outgoing_wronskian", outgoing_wronskian_defect(gx, r_far),
                                  "identity", context))
        return checks

    def scattering_checks(self, energy: float, solutions: CenterSolutions) -> List[CheckResult]:
        builder = self.builder
        k = builder.wavenumber(energy)
        am = amplitude_matrix(solutions.M, solutions.green.M_minus, k, energy, builder.trunc)
        context = f"E={energy:.10g} center=0 {self.which}"
        rng = np.random.default_rng(_SEED)
        pairs = list(zip(_unit_vectors(rng, 10), _unit_vectors(rng, 10)))
        k_dir = builder.incident_direction()
        k_prime = np.array([1.0, 1.0, 1.0]) / np.sqrt(3.0)
        return [
            self._check("scatter.A_hat_symmetry", am.symmetry_defect, "identity", context),
            self._check("scatter.unitarity", unitarity_defect(am), "identity", context),
            self._check("scatter.reciprocity", k * reciprocity_defect(am, pairs), "identity", context),
            self._check("scatter.eta_symmetry", eta_symmetry_defect(am), "identity", context),
            self._check("scatter.optical_theorem", optical_theorem_defect(am, k_dir, k_prime), "optical", context),
            self._check("scatter.cross_section_routes", cross_sections(am, k_dir).relative_gap,
                        "cross_section_gap", context),
        ]

    # --------------------------------------------------------
    # 自由空間的平移算子
    # --------------------------------------------------------
    def translation_checks(self, energy: float) -> List[CheckResult]:
        builder = self.builder
        k = builder.wavenumber(energy)
        trunc = builder.trunc
        b = float(builder.radii[0])
        if builder.n_centers > 1:
            R = builder.partition.displacement(0, 1)
        else:
            R = np.array([0.0, 0.0, 2.5 * b])
        dist = float(np.linalg.norm(R))
        context = f"E={energy:.10g} |R|={dist:.6g}"
        origin = np.zeros(3)
        dim = trunc.dim
        other = np.array([0.7, -0.4, 0.9]) * (0.5 * dist / np.linalg.norm([0.7, -0.4, 0.9]))

        big = Truncation(trunc.l_max + int(np.ceil(k * (dist + np.linalg.norm(other)))) + 12)
        d_plus = translation_matrix_D(k, R, big).matrix
        d_minus = translation_matrix_D(k, -R, big).matrix
        inverse = (d_plus @ d_minus)[:dim, :dim] - np.eye(dim)
        group = (d_plus @ translation_matrix_D(k, other, big).matrix)[:dim, :dim]
        combined = translation_matrix_D(k, R + other, big).matrix[:dim, :dim]

        k_dir = builder.incident_direction()
        y_big = real_sh_matrix(big.l_max, k_dir[None, :])[0]
        shifted = (translation_matrix_D_hat(k, R, big).matrix @ y_big)[:dim]
        expected = np.exp(1j * k * float(k_dir @ R)) * y_big[:dim]

        closed = free_K_closed(k, origin, R, trunc)
        surface = free_K_surface(k, origin, R, b, trunc).K
        inner_radius = free_K_surface(k, origin, R, 0.8 * b, trunc).K
        q_free = FreeRadialSolution(FreeKind.OUTGOING, k, trunc, energy)

        checks = [
            self._check("translate.D_inverse", float(np.max(np.abs(inverse))), "translation", context),
            self._check("translate.D_group_law", float(np.max(np.abs(group - combined))), "translation", context),
            self._check("translate.plane_wave_shift", float(np.max(np.abs(shifted - expected))), "translation",
                        context),
            self._check("translate.free_K_closed_form", _relative(surface, closed), "free_k", context),
            self._check("translate.free_K_radius_independence", _relative(inner_radius, surface), "free_k", context),
            self._check("translate.enclosing_surface", enclosing_surface_defect(k, origin, R, 1.5 * dist + b, trunc),
                        "free_k", context),
            self._check("translate.gradient_finite_difference",
                        gradient_fd_check(q_free, q_free, origin, R, b, 2 * (trunc.l_max + 8)), "free_k", context),
        ]
        checks += [
            self._check(f"specfun.wronskian_{name}", defect, "free_form", f"E={energy:.10g} r={b:.6g}")
            for name, defect in free_wronskian_check(trunc.l_max, k, b).items()
        ]
        return checks

    # --------------------------------------------------------
    # 多中心
    # --------------------------------------------------------
    def multicenter_checks(self, energy: float) -> List[CheckResult]:
        msw = MswService(self.builder, workers=1, verbose=self.verbose)
        result = msw.run_energy(energy)
        record = result.record
        context = f"E={energy:.10g} centers={self.builder.n_centers}"
        checks = [
            self._check("msw.t_inverse_symmetry", record.t_inverse_symmetry, "identity", context),
            self._check("msw.block_symmetry", record.block_symmetry, "identity", context),
            self._check("msw.solve_residual", record.solve_residual, "solve_residual", context),
            self._check("msw.surface_matching", record.surface_matching, "surface_matching", context),
        ]
        if record.swap_symmetry is not None:
            checks.append(self._check("msw.swap_symmetry", record.swap_symmetry, "swap_symmetry", context))
        if self.builder.distorted.is_constant:
            k = record.wavenumber
            worst = max(
                _relative(coupling.K, free_K_closed(k, self.builder.positions[i], self.builder.positions[j],
                                                    self.builder.trunc))
                for (i, j), coupling in result.couplings.items()
            )
            checks.append(self._check("msw.constant_V_I_reduction", worst, "free_k", context))
        return checks

    # --------------------------------------------------------
    # 進入點
    # --------------------------------------------------------
    def run_energy(self, energy: float) -> List[CheckResult]:
        builder = self.builder
        checks: List[CheckResult] = []
        for center in range(builder.n_centers):
            solutions = builder.distorting_solutions(center, energy, incoming=True, which=self.which,
                                                     full_range=True)
            checks += self.solution_checks(center, energy, solutions)
            if center == 0:
                checks += self.scattering_checks(energy, solutions)
        checks += self.translation_checks(energy)
        if builder.n_centers > 1:
            checks += self.multicenter_checks(energy)
        return checks

    def run(self, energies: List[float]) -> List[CheckResult]:
        """所有能量的檢查（依能量、再依檢查名稱的固定順序）"""
        print("\n" + "=" * 60)
        print(f"🔬 驗證模式：{len(energies)} 個能量，{self.builder.n_centers} 個中心")
        print("=" * 60)
        with ThreadPoolExecutor(max_workers=self.workers) as executor:
            per_energy = list(executor.map(self.run_energy, energies))
        checks = [check for batch in per_energy for check in batch]
        failed = sum(not check.passed for check in checks)
        if failed:
            print(f"❌ {failed} / {len(checks)} 項檢查未通過")
        else:
            print(f"✅ {len(checks)} 項檢查全部通過")
        return checks
