"""
Unit tests for engines/scatter.py
"""

import sys
import unittest
from pathlib import Path

import numpy as np

# 加入專案根目錄到 path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from engines.angular import Truncation, lm_index
from engines.errors import DomainError, NearSingularError
from engines.radial import (
    Boundary,
    build_potential_matrix,
    constant_matrix,
    integrate_irregular,
    integrate_regular,
    radial_grid,
)
from engines.scatter import (
    amplitude_matrix,
    angular_distribution,
    central_phase_shifts,
    cross_sections,
    eta_symmetry_defect,
    optical_theorem_defect,
    partial_wave_cross_section,
    reciprocity_defect,
    scattering_amplitude,
    square_well_phase_shifts,
    translated_amplitude_matrix,
    translated_amplitude_phase,
    unitarity_defect,
)

DEPTH = 2.0
RADIUS = 2.0


def _square_well(radii):
    radii = np.asarray(radii, dtype=float)
    comps = np.zeros((len(radii), 1))
    comps[:, 0] = np.sqrt(4 * np.pi) * np.where(radii < RADIUS, -DEPTH, 0.0)
    return comps


def _gaussian_dipole(radii):
    radii = np.asarray(radii, dtype=float)
    comps = np.zeros((len(radii), 9))
    comps[:, 0] = np.sqrt(4 * np.pi) * (-3.0 * np.exp(-radii ** 2))
    comps[:, lm_index(1, 0)] = 0.8 * radii * np.exp(-radii ** 2)
    return comps


def _amplitude(project, l_max, l_max_pot, energy, r_max, anchors=()):
    k = np.sqrt(energy)
    grid = radial_grid(r_max, anchors, k=k)
    potmat = build_potential_matrix(project, grid, l_max, l_max_pot, breakpoints=anchors)
    p = integrate_regular(potmat, energy, store=(1.0, 4.0))
    q = integrate_irregular(potmat, energy, Boundary.OUTGOING, store=(1.0, 4.0))
    r_eval = float(grid.r[grid.node_index(3.0)])
    M_plus = constant_matrix(p, q, r_eval)
    M_minus = constant_matrix(p, q.conjugate(), r_eval)
    return amplitude_matrix(M_plus, M_minus, k, energy, Truncation(l_max))


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


class TestFreeAmplitude(unittest.TestCase):

    def test_no_scattering(self):
        """測試 M₊ = M₋ = I/k 時 A = I、f = 0"""
        k = 0.8
        trunc = Truncation(3)
        eye = np.eye(trunc.dim) / k
        am = amplitude_matrix(eye, eye, k, k * k, trunc)
        np.testing.assert_allclose(am.A, np.eye(trunc.dim), atol=1e-15)
        self.assertLess(abs(scattering_amplitude(am, [0.0, 0.0, 1.0], [1.0, 0.0, 0.0])), 1e-14)

    def test_singular_M_rejected(self):
        """測試 M₊ 奇異時拋出 NearSingularError"""
        M = np.diag([1.0, 1.0, 1.0, 0.0])
        with self.assertRaises(NearSingularError):
            amplitude_matrix(M, M, 1.0, 1.0)


class TestSquareWell(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.energy = 1.0
        cls.l_max = 6
        cls.am = _amplitude(_square_well, cls.l_max, 0, cls.energy, 6.0, anchors=[RADIUS])
        cls.deltas = square_well_phase_shifts(DEPTH, RADIUS, cls.energy, cls.l_max)

    def test_amplitude_matrix_is_S_matrix(self):
        """測試 A 的對角元素為 e^{2iδ_l}，l ≤ 6 的相移誤差小於 1e-6"""
        l_arr = Truncation(self.l_max).l_values
        diag = np.diag(self.am.A)
        np.testing.assert_allclose(np.abs(diag), 1.0, atol=1e-7)
        phase_error = np.abs(np.angle(diag * np.exp(-2j * self.deltas[l_arr]))) / 2.0
        self.assertLess(np.max(phase_error), 1e-6)
        off = self.am.A - np.diag(diag)
        self.assertLess(np.max(np.abs(off)), 1e-12)

    def test_cross_section_routes(self):
        """測試 ∫|f|²、光學定理與部分波公式三者一致"""
        xs = cross_sections(self.am, [0.0, 0.0, 1.0])
        reference = partial_wave_cross_section(self.deltas, np.sqrt(self.energy))
        self.assertLess(xs.relative_gap, 1e-5)
        self.assertLess(abs(xs.sigma_integrated - reference) / reference, 1e-4)

    def test_direction_independent(self):
        """測試球對稱位能的截面與入射方向無關"""
        a = cross_sections(self.am, [0.0, 0.0, 1.0]).sigma_integrated
        b = cross_sections(self.am, [0.3, -0.5, 0.2]).sigma_integrated
        self.assertAlmostEqual(a, b, delta=1e-9 * a)

    def test_numerical_phase_shifts(self):
        """測試 solve_ivp 參考相移與解析值一致"""
        def potential(r):
            return -DEPTH if r < RADIUS else 0.0

        numeric = central_phase_shifts(potential, self.energy, self.l_max, 3.0, breakpoints=[RADIUS])
        np.testing.assert_allclose(numeric, self.deltas, atol=1e-6)

    def test_angular_distribution_table(self):
        """測試角分布表的形狀與前向值"""
        rows = angular_distribution(self.am, [0.0, 0.0, 1.0], np.linspace(0.0, np.pi, 5), (0.0, np.pi))
        self.assertEqual(len(rows), 10)
        forward = abs(scattering_amplitude(self.am, [0.0, 0.0, 1.0], [0.0, 0.0, 1.0])) ** 2
        self.assertAlmostEqual(rows[0][2], forward, delta=1e-12 * forward)

    def test_phase_shifts_need_positive_energy(self):
        """測試相移只在 E > 0 定義"""
        with self.assertRaises(DomainError):
            square_well_phase_shifts(DEPTH, RADIUS, -0.1, 2)


class TestNonSphericalScattering(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.am = _amplitude(_gaussian_dipole, 2, 2, 0.81, 12.0)

    def test_symmetry_and_unitarity(self):
        """測試 Â 對稱、A 么正與 ηAᵀη = A"""
        self.assertLess(self.am.symmetry_defect, 1e-9)
        self.assertLess(unitarity_defect(self.am, l_conv=2), 1e-7)
        self.assertLess(eta_symmetry_defect(self.am), 1e-9)

    def test_reciprocity(self):
        """測試 f(−k, −k') = f(k', k)，50 組隨機方向"""
        rng = np.random.default_rng(20240611)
        pairs = [(_unit(rng.normal(size=3)), _unit(rng.normal(size=3))) for _ in range(50)]
        self.assertLess(reciprocity_defect(self.am, pairs), 1e-10)

    def test_generalized_optical_theorem(self):
        """測試廣義光學定理"""
        defect = optical_theorem_defect(self.am, _unit([0.0, 0.6, 0.8]), _unit([1.0, 1.0, 1.0]))
        self.assertLess(defect, 1e-5)

    def test_translated_amplitude(self):
        """測試平移後的振幅矩陣與相位公式一致"""
        R = np.array([0.4, -0.3, 0.5])
        moved = translated_amplitude_matrix(self.am, R)
        k_out, k_in = _unit([0.2, 0.7, -0.3]), _unit([0.0, 0.0, 1.0])
        expected = translated_amplitude_phase(self.am, R, k_out, k_in)
        got = scattering_amplitude(moved, k_out, k_in)
        self.assertLess(abs(got - expected), 1e-8 * max(abs(expected), 1.0))


if __name__ == '__main__':
    unittest.main()
