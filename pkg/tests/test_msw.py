"""
Unit tests for engines/msw.py 與 services/msw_service.py
"""

import sys
import unittest
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from scipy.special import eval_legendre, spherical_jn, spherical_yn

# 加入專案根目錄到 path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from engines.angular import polar_split, real_sh_matrix
from engines.errors import DomainError
from engines.msw import (
    ScanSample,
    assemble_secular,
    bound_state_scan,
    excitation_l_max,
    scan_sample,
    solve_secular,
)
from engines.scatter import square_well_phase_shifts
from engines.specfun import xi_diagonal
from engines.translate import free_K_closed, general_K_surface, translation_matrix_D
from services.msw_service import MswService
from services.problem_builder import ProblemBuilder
from services.schemas import DwmsConfigFile, load_config

ENERGY = 0.5
# 弱尾巴雙原子：k = 0.3
TOY_ENERGY = 0.09


def _muffin_tin_dimer(depth: float = 2.0, l_max: int = 6):
    """兩個相同方位井，V_I 取常數"""
    return DwmsConfigFile.model_validate({
        "atoms": [
            {"position": [0.0, 0.0, -1.5], "sphere_radius": 1.2},
            {"position": [0.0, 0.0, 1.5], "sphere_radius": 1.2},
        ],
        "potential": {"offset": 0.0, "terms": [
            {"kind": "square_well", "center": 0, "depth": depth, "radius": 1.0},
            {"kind": "square_well", "center": 1, "depth": depth, "radius": 1.0},
        ]},
        "distorting": {"mode": "constant"},
        "energies": {"values": [ENERGY]},
        "l_max": l_max,
        "l_max_pot": 2,
    })


def _bound_wells(positions, l_max, window, steps):
    """深 4 Ry、半徑 1 的方位井，球半徑 1.2"""
    return DwmsConfigFile.model_validate({
        "atoms": [{"position": list(p), "sphere_radius": 1.2} for p in positions],
        "potential": {"offset": 0.0, "terms": [
            {"kind": "square_well", "center": c, "depth": 4.0, "radius": 1.0} for c in range(len(positions))
        ]},
        "distorting": {"mode": "constant"},
        "bound_scan": {"window": list(window), "steps": steps},
        "l_max": l_max,
        "l_max_pot": 2,
    })


def _weak_tail_dimer(l_max: int):
    """窄高斯井：球外只剩很弱的尾巴，V_I 由延拓得到（非常數）"""
    return DwmsConfigFile.model_validate({
        "atoms": [
            {"position": [0.0, 0.0, -2.5], "sphere_radius": 2.0},
            {"position": [0.0, 0.0, 2.5], "sphere_radius": 2.0},
        ],
        "potential": {"offset": 0.0, "terms": [
            {"kind": "gaussian", "center": 0, "depth": 2.0, "width": 0.5},
            {"kind": "gaussian", "center": 1, "depth": 2.0, "width": 0.5},
        ]},
        "distorting": {"mode": "continuation", "continuation_degree": 2},
        "energies": {"values": [TOY_ENERGY]},
        "grid": {"r_asymptotic": 45.0},
        "l_max": l_max,
        "l_max_pot": 8,
    })


def _s_wave_level(depth: float, radius: float, bracket) -> float:
    """方位井 s 波束縛能：K cot(Ka) = −κ"""
    def mismatch(energy):
        inner = np.sqrt(energy + depth)
        return inner / np.tan(inner * radius) + np.sqrt(-energy)

    return brentq(mismatch, *bracket, xtol=1e-14)


def _interstitial_points(partition, count: int, seed: int, half_width: float = 3.0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    candidates = rng.uniform(-half_width, half_width, size=(50 * count, 3))
    return candidates[partition.locate(candidates) < 0][:count]


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def _row(solution, points, origin) -> np.ndarray:
    """Yᵀ(r̂) s(r)：每個點一列"""
    radii, dirs = polar_split(points, origin)
    y = real_sh_matrix(solution.trunc.l_max, dirs)
    values, _ = solution.evaluate(radii)
    return np.einsum("na,nab->nb", y, values)


def _muffin_tin_reference(k, centers_z, b, t, points, n_quad=48) -> np.ndarray:
    """
    z 軸上方位井分子、沿 z 入射的 ψ

    只用 Legendre 展開：每個球面上把入射波與其他原子的出射波投影成
    a_l j_l(kb)，再以 c_l = t_l a_l 自洽求解。
    """
    l_arr = np.arange(len(t))
    nodes, weights = np.polynomial.legendre.leggauss(n_quad)

    def outgoing(z0, pts):
        rel = pts - np.array([0.0, 0.0, z0])
        r = np.linalg.norm(rel, axis=1)
        cos_t = rel[:, 2] / r
        return np.stack([(spherical_jn(l, k * r) + 1j * spherical_yn(l, k * r)) * eval_legendre(l, cos_t)
                         for l in l_arr], axis=1)

    n_l = len(t)
    matrix = np.eye(len(centers_z) * n_l, dtype=complex)
    rhs = np.zeros(len(centers_z) * n_l, dtype=complex)
    for i, z_i in enumerate(centers_z):
        ring = np.column_stack([b * np.sqrt(1 - nodes ** 2), np.zeros(n_quad), z_i + b * nodes])
        project = np.stack([(2 * l + 1) / 2 * weights * eval_legendre(l, nodes) / spherical_jn(l, k * b)
                            for l in l_arr])
        rows = slice(i * n_l, (i + 1) * n_l)
        rhs[rows] = t * (project @ np.exp(1j * k * ring[:, 2]))
        for j, z_j in enumerate(centers_z):
            if j != i:
                matrix[rows, j * n_l:(j + 1) * n_l] -= t[:, None] * (project @ outgoing(z_j, ring))
    c = np.linalg.solve(matrix, rhs)
    psi = np.exp(1j * k * points[:, 2])
    for j, z_j in enumerate(centers_z):
        psi = psi + outgoing(z_j, points) @ c[j * n_l:(j + 1) * n_l]
    return psi


class TestMuffinTinDimer(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.builder = ProblemBuilder(_muffin_tin_dimer())
        cls.service = MswService(cls.builder)
        cls.result = cls.service.run_energy(ENERGY)

    def test_atomic_t_matrix(self):
        """測試球對稱原子的 T_a⁻¹ = 1 / (k e^{iδ} sinδ)"""
        atom = self.result.atomics[0]
        k = np.sqrt(ENERGY)
        deltas = square_well_phase_shifts(2.0, 1.0, ENERGY, 1)
        expected = 1.0 / (k * np.exp(1j * deltas) * np.sin(deltas))
        got = np.diag(atom.T_inv)[[0, 2]]
        np.testing.assert_allclose(got, expected, rtol=1e-4)
        self.assertLess(atom.symmetry_defect, 1e-7)

    def test_t_matrix_convention(self):
        """測試 T_a 與 t = −(1/k) e^{iδ} sinδ 的慣例相差 −k² 倍"""
        atom = self.result.atomics[0]
        k = np.sqrt(ENERGY)
        deltas = square_well_phase_shifts(2.0, 1.0, ENERGY, 1)
        t_matrix = np.diag(np.linalg.inv(atom.T_inv))[[0, 2]]
        np.testing.assert_allclose(t_matrix, k * np.exp(1j * deltas) * np.sin(deltas), rtol=1e-4)
        # M₊f = I/k 的正規化下 t = −T_a / k²
        np.testing.assert_allclose(-t_matrix / k ** 2, -np.exp(1j * deltas) * np.sin(deltas) / k, rtol=1e-4)

    def test_constant_mode_couplings_are_free(self):
        """測試 V_I 為常數時 K^{ji} 等於自由空間的解析式"""
        coupling = self.result.couplings[(0, 1)]
        closed = free_K_closed(np.sqrt(ENERGY), self.builder.positions[0], self.builder.positions[1],
                               self.builder.trunc)
        self.assertLess(np.max(np.abs(coupling.K - closed)) / np.max(np.abs(closed)), 1e-6)

    def test_secular_solution_quality(self):
        """測試殘差、區塊對稱與鏡像交換對稱"""
        record = self.result.record
        self.assertLess(record.solve_residual, 1e-10)
        self.assertLess(record.block_symmetry, 1e-7)
        self.assertTrue(self.service.is_mirror_pair())
        self.assertIsNotNone(record.swap_symmetry)
        self.assertLess(record.swap_symmetry, 1e-8)

    def test_surface_matching(self):
        """測試 ψ 在原子球面內外兩種表示一致"""
        matching, peak = self.result.wavefunction.surface_matching_defect()
        self.assertGreater(peak, 0.0)
        self.assertLess(matching, 1e-4)

    def test_matches_legendre_reference(self):
        """測試球隙區 20 個點的 ψ 與獨立的 Legendre 自洽解一致"""
        k = np.sqrt(ENERGY)
        deltas = square_well_phase_shifts(2.0, 1.0, ENERGY, self.builder.trunc.l_max)
        t = 1j * np.exp(1j * deltas) * np.sin(deltas)
        points = _interstitial_points(self.builder.partition, 20, seed=11)
        self.assertEqual(len(points), 20)
        reference = _muffin_tin_reference(k, [-1.5, 1.5], 1.2, t, points)
        got = self.result.wavefunction.evaluate_many(points)
        self.assertLess(np.max(np.abs(got - reference)) / np.max(np.abs(reference)), 1e-5)

    def test_plane_wave_linearity(self):
        """測試入射方向的線性組合等於各自解的線性組合"""
        solution = self.result.solution
        system = solution.system
        big = system.excitation
        k_a, k_b = _unit([0.0, 0.0, 1.0]), _unit([0.3, -0.4, 0.8])
        y = real_sh_matrix(big.l_max, np.array([k_a, k_b]))
        weights = 4 * np.pi * xi_diagonal(big.l_max)[None, :] * y
        mixed = 0.7 * weights[0] - 0.4j * weights[1]
        direct = solve_secular(system, rhs=system.rhs @ mixed[:, None]).channels[:, 0]
        expected = 0.7 * solution.B(k_a) - 0.4j * solution.B(k_b)
        self.assertLess(np.max(np.abs(direct - expected)) / np.max(np.abs(expected)), 1e-10)

    def test_cross_section_routes(self):
        """測試分子截面的兩種算法一致"""
        record = self.result.record
        gap = abs(record.sigma_integrated - record.sigma_optical) / abs(record.sigma_optical)
        self.assertGreater(record.sigma_integrated, 0.0)
        self.assertLess(gap, 1e-3)

    def test_missing_coupling_rejected(self):
        """測試缺少 K 區塊時拒絕組合"""
        with self.assertRaises(DomainError):
            assemble_secular(self.result.atomics, {}, self.builder.trunc)


class TestWeakAtomicPotential(unittest.TestCase):

    def test_scattered_wave_scales_with_depth(self):
        """測試井深趨近 0 時散射波與井深成正比"""
        scattered = []
        points = None
        for depth in (1e-3, 2e-3):
            builder = ProblemBuilder(_muffin_tin_dimer(depth=depth, l_max=2))
            if points is None:
                points = _interstitial_points(builder.partition, 20, seed=5)
            result = MswService(builder).run_energy(ENERGY)
            k_vec = np.sqrt(ENERGY) * builder.incident_direction()
            psi = result.wavefunction.evaluate_many(points)
            scattered.append(psi - np.exp(1j * points @ k_vec))
        weak, double = scattered
        self.assertGreater(np.max(np.abs(weak)), 0.0)
        self.assertLess(np.max(np.abs(weak)), 1e-2)
        self.assertLess(np.max(np.abs(double - 2 * weak)) / np.max(np.abs(2 * weak)), 1e-2)


class TestConstantModeRequirements(unittest.TestCase):

    def _config(self, term):
        return DwmsConfigFile.model_validate({
            "atoms": [{"position": [0.0, 0.0, 0.0], "sphere_radius": 1.2}],
            "potential": {"offset": 0.0, "terms": [term]},
            "distorting": {"mode": "constant"},
            "energies": {"values": [ENERGY]},
            "l_max": 2,
            "l_max_pot": 2,
        })

    def test_tail_outside_sphere_rejected(self):
        """測試球外仍有位能尾巴時 constant 模式拒絕建構"""
        config = self._config({"kind": "yukawa", "center": 0, "amplitude": 1.0, "screening": 1.0})
        with self.assertRaises(DomainError):
            ProblemBuilder(config)

    def test_well_wider_than_sphere_rejected(self):
        """測試方位井超出原子球時拒絕建構"""
        config = self._config({"kind": "square_well", "center": 0, "depth": 2.0, "radius": 1.5})
        with self.assertRaises(DomainError):
            ProblemBuilder(config)

    def test_well_inside_sphere_accepted(self):
        """測試井在球內時 V_I 為常數"""
        builder = ProblemBuilder(self._config({"kind": "square_well", "center": 0, "depth": 2.0, "radius": 1.0}))
        self.assertTrue(builder.distorted.is_constant)


class TestYukawaDimerConfig(unittest.TestCase):
    """configs/dimer.json 在預設設定下的完整連續態計算"""

    @classmethod
    def setUpClass(cls):
        cls.problem = load_config(project_root / "configs" / "dimer.json")
        cls.builder = ProblemBuilder(cls.problem)
        cls.service = MswService(cls.builder)
        cls.result = cls.service.run_energy(1.0)

    def test_reorthogonalized_by_default(self):
        """測試未指定時外向積分使用 QR 重新正交化"""
        self.assertIsNone(self.problem.grid.reorthogonalize)
        self.assertFalse(self.builder.distorted.is_constant)
        self.assertIsNotNone(self.result.atomics[0].p.right_multiplier)

    def test_solution_quality(self):
        """測試殘差、T_a⁻¹ 對稱、球面匹配與鏡像交換對稱"""
        record = self.result.record
        self.assertLess(record.solve_residual, 1e-10)
        self.assertLess(record.t_inverse_symmetry, 1e-7)
        self.assertLess(record.surface_matching, 1e-4)
        self.assertIsNotNone(record.swap_symmetry)
        self.assertLess(record.swap_symmetry, 1e-8)

    def test_cross_section_routes(self):
        """測試 V_I 振幅加上多重散射項後兩種截面一致"""
        record = self.result.record
        self.assertIsNotNone(self.result.v_i_amplitude)
        self.assertGreater(record.sigma_integrated, 0.0)
        gap = abs(record.sigma_integrated - record.sigma_optical) / abs(record.sigma_optical)
        self.assertLess(gap, 1e-3)


class TestGeneralReexpansion(unittest.TestCase):
    """非常數 V_I 的雙原子：一般解的重新展開與 K^{ij}"""

    @classmethod
    def setUpClass(cls):
        cls.small = ProblemBuilder(_weak_tail_dimer(2))
        # 另一個中心的展開需要較高的 l 才收斂
        cls.big = ProblemBuilder(_weak_tail_dimer(10))
        cls.k = cls.small.wavenumber(TOY_ENERGY)
        cls.R_i, cls.R_j = cls.small.positions
        cls.sol_i = cls.small.distorting_solutions(0, TOY_ENERGY, full_range=True)
        cls.sol_j = cls.big.distorting_solutions(1, TOY_ENERGY, full_range=True)
        cls.D = translation_matrix_D(cls.k, cls.R_j - cls.R_i, cls.big.trunc).matrix[:, :cls.small.trunc.dim]

    def test_distorting_potential_not_constant(self):
        """測試 V_I 在球面上不為零"""
        self.assertFalse(self.small.distorted.is_constant)
        v_i = self.small.distorted.project("V_I", 0, [2.0], check=False).components
        self.assertNotEqual(float(v_i[0, 0]), 0.0)

    def test_regular_reexpansion(self):
        """測試 Yᵀ(r̂_i)p_i(M_i⁻¹)ᵀ = Yᵀ(r̂_j)p_j(M_j⁻¹)ᵀD(k;R_ij)，兩原子之間 20 個點"""
        rng = np.random.default_rng(3)
        rho = 1.2 * np.sqrt(rng.uniform(size=20))
        phi = rng.uniform(0.0, 2 * np.pi, size=20)
        points = np.column_stack([rho * np.cos(phi), rho * np.sin(phi), rng.uniform(-0.4, 0.4, size=20)])
        self.assertTrue(np.all(self.small.partition.locate(points) < 0))
        lhs = _row(self.sol_i.p, points, self.R_i) @ np.linalg.inv(self.sol_i.M).T
        rhs = _row(self.sol_j.p, points, self.R_j) @ np.linalg.inv(self.sol_j.M).T @ self.D
        self.assertLess(np.max(np.abs(lhs - rhs)) / np.max(np.abs(lhs)), 1e-6)

    def test_far_region_reexpansion(self):
        """測試 s_j > R_ij 時 Yᵀ(ŝ_i)q_i⁺ = Yᵀ(ŝ_j)q_j⁺D(k;R_ij)，20 個點"""
        rng = np.random.default_rng(4)
        points = 40.0 * np.array([_unit(v) for v in rng.normal(size=(20, 3))])
        lhs = _row(self.sol_i.q, points, self.R_i)
        rhs = _row(self.sol_j.q, points, self.R_j) @ self.D
        self.assertLess(np.max(np.abs(lhs - rhs)) / np.max(np.abs(lhs)), 1e-6)
        # q⁻ 由共軛得到，D 為實矩陣
        lhs_in = _row(self.sol_i.q.conjugate(), points, self.R_i)
        rhs_in = _row(self.sol_j.q.conjugate(), points, self.R_j) @ self.D
        self.assertLess(np.max(np.abs(lhs_in - rhs_in)) / np.max(np.abs(lhs_in)), 1e-6)

    def test_coupling_symmetry_and_radius(self):
        """測試 K^{ji} = (K^{ij})ᵀ 且與積分球半徑無關"""
        q_i = self.small.distorting_solutions(0, TOY_ENERGY).q
        q_j = self.small.distorting_solutions(1, TOY_ENERGY).q
        b = float(self.small.radii[0])
        K_ji = general_K_surface(q_i, q_j, self.R_i, self.R_j, b, pair=(1, 0)).K
        K_ij = general_K_surface(q_j, q_i, self.R_j, self.R_i, b, pair=(0, 1)).K
        scale = np.max(np.abs(K_ji))
        self.assertLess(np.max(np.abs(K_ji - K_ij.T)) / scale, 1e-7)
        wider = general_K_surface(q_i, q_j, self.R_i, self.R_j, b, radius=b + 0.4, pair=(1, 0)).K
        self.assertLess(np.max(np.abs(wider - K_ji)) / scale, 1e-6)

    def test_secular_block_symmetry(self):
        """測試完整流程的區塊對稱與 T_a⁻¹ 對稱"""
        record = MswService(self.small).run_energy(TOY_ENERGY).record
        self.assertLess(record.block_symmetry, 1e-7)
        self.assertLess(record.t_inverse_symmetry, 1e-7)
        self.assertLess(record.solve_residual, 1e-10)


class TestSecularBoundLevels(unittest.TestCase):
    """真實久期矩陣上的束縛態掃描"""

    def _scan(self, positions, l_max, window, steps):
        problem = _bound_wells(positions, l_max, window, steps)
        return MswService(ProblemBuilder(problem), workers=2).bound_scan(problem.bound_scan)

    def test_single_well_level(self):
        """測試單一方位井的 s 能階與解析條件一致（1e-5 Ry）"""
        exact = _s_wave_level(4.0, 1.0, (-1.0, -0.1))
        result = self._scan([[0.0, 0.0, 0.0]], 1, (-1.0, -0.1), 19)
        self.assertFalse(result.flagged_window)
        self.assertEqual(len(result.candidates), 1)
        candidate = result.candidates[0]
        self.assertTrue(candidate.phase_flip)
        self.assertAlmostEqual(candidate.energy, exact, delta=1e-5)

    def test_dimer_level_stable_in_l_max(self):
        """測試雙井最低能階在 l_max → l_max + 1 時變化小於 1e-4 Ry"""
        positions = [[0.0, 0.0, -2.0], [0.0, 0.0, 2.0]]
        atomic = _s_wave_level(4.0, 1.0, (-1.0, -0.1))
        levels = []
        for l_max in (3, 4):
            result = self._scan(positions, l_max, (-1.0, -0.2), 21)
            self.assertTrue(result.candidates)
            self.assertTrue(all(c.phase_flip for c in result.candidates))
            levels.append(min(c.energy for c in result.candidates))
        # 成鍵能階低於單原子能階
        self.assertLess(levels[0], atomic)
        self.assertLess(abs(levels[1] - levels[0]), 1e-4)


class TestBoundStateScan(unittest.TestCase):

    def test_finds_synthetic_minimum(self):
        """測試掃描找到 σ_min/σ_max 的局部極小與相位翻轉"""
        target = -0.32

        def secular_at(energy):
            phase = np.pi if energy > target else 0.0
            return ScanSample(float(energy), abs(energy - target), phase, 1.0)

        result = bound_state_scan(secular_at, (-0.5, -0.1), 9, max_workers=2)
        self.assertEqual(len(result.samples), 9)
        self.assertFalse(result.flagged_window)
        self.assertEqual(len(result.candidates), 1)
        candidate = result.candidates[0]
        self.assertAlmostEqual(candidate.energy, target, delta=1e-6)
        self.assertTrue(candidate.phase_flip)
        self.assertFalse(candidate.flagged)

    def test_minimum_without_phase_flip_skipped(self):
        """測試 det(S) 相位沒有翻轉的極小不列為候選"""
        target = -0.32

        def secular_at(energy):
            return ScanSample(float(energy), abs(energy - target), 0.0, 1.0)

        result = bound_state_scan(secular_at, (-0.5, -0.1), 9, max_workers=2)
        self.assertEqual(result.candidates, [])

    def test_flags_window_when_M_singular(self):
        """測試 cond(M_i) 過大時整個視窗被標記"""
        def secular_at(energy):
            return ScanSample(float(energy), 1.0, 0.0, 1e14)

        result = bound_state_scan(secular_at, (-1.0, -0.5), 5, max_workers=1)
        self.assertTrue(result.flagged_window)
        self.assertEqual(result.candidates, [])

    def test_invalid_window(self):
        """測試視窗與步數的檢查"""
        with self.assertRaises(DomainError):
            bound_state_scan(lambda e: ScanSample(e, 1.0, 0.0, 1.0), (-0.1, -0.5), 5)
        with self.assertRaises(DomainError):
            bound_state_scan(lambda e: ScanSample(e, 1.0, 0.0, 1.0), (-0.5, -0.1), 2)

    def test_scan_sample(self):
        """測試奇異值比與行列式相位"""
        sample = scan_sample(-0.2, np.diag([1.0, -1e-3]), 1.0)
        self.assertAlmostEqual(sample.sigma_ratio, 1e-3, places=14)
        self.assertAlmostEqual(abs(sample.phase), np.pi, places=12)

    def test_excitation_truncation(self):
        """測試右側激發通道的截斷"""
        self.assertEqual(excitation_l_max(4, 1.0, [[0.0, 0.0, -1.1], [0.0, 0.0, 1.1]]), 14)


if __name__ == '__main__':
    unittest.main()
