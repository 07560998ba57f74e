"""
Unit tests for engines/specfun.py
"""

import sys
import unittest
from pathlib import Path

import numpy as np

# 加入專案根目錄到 path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from engines.angular import Truncation
from engines.errors import DomainError
from engines.specfun import (
    BesselKind,
    diagonal_matrix,
    eta_diagonal,
    free_wronskian_check,
    plane_wave_expansion,
    plane_wave_q_form,
    sph_bessel,
    xi_diagonal,
)


class TestSphericalBessel(unittest.TestCase):

    def test_closed_forms_l0(self):
        """測試 l = 0 的閉合形式"""
        x = 1.7
        self.assertAlmostEqual(sph_bessel(BesselKind.J, 0, x), np.sin(x) / x, places=14)
        self.assertAlmostEqual(sph_bessel(BesselKind.N, 0, x), -np.cos(x) / x, places=14)
        self.assertAlmostEqual(sph_bessel(BesselKind.I_MOD, 0, x), np.sinh(x) / x, places=13)
        self.assertAlmostEqual(sph_bessel(BesselKind.K_PLUS_MOD, 0, x), np.exp(-x) / x, places=14)

    def test_hankel_combinations(self):
        """測試 h± = j ± i n（值與導數）"""
        l = np.arange(6)
        x = 2.3
        for derivative in (False, True):
            j = sph_bessel("j", l, x, derivative)
            n = sph_bessel("n", l, x, derivative)
            np.testing.assert_allclose(sph_bessel("h+", l, x, derivative), j + 1j * n, rtol=1e-14)
            np.testing.assert_allclose(sph_bessel("h-", l, x, derivative), j - 1j * n, rtol=1e-14)

    def test_decaying_sign_convention(self):
        """測試 k⁺_l 的符號為 (−1)^l，且 |k⁺_l| 隨 x 遞減"""
        l = np.arange(5)
        sign = (-1.0) ** l
        values = sph_bessel(BesselKind.K_PLUS_MOD, l, 1.2)
        slopes = sph_bessel(BesselKind.K_PLUS_MOD, l, 1.2, derivative=True)
        self.assertTrue(np.all(sign * values > 0))
        self.assertTrue(np.all(sign * slopes < 0))

    def test_domain(self):
        """測試奇異類別在 x ≤ 0、所有類別在 x < 0 時被拒絕"""
        self.assertEqual(sph_bessel(BesselKind.J, 0, 0.0), 1.0)
        for kind in (BesselKind.N, BesselKind.H_PLUS, BesselKind.H_MINUS, BesselKind.K_PLUS_MOD):
            with self.assertRaises(DomainError):
                sph_bessel(kind, 1, 0.0)
        with self.assertRaises(DomainError):
            sph_bessel(BesselKind.J, 1, -0.5)

    def test_diagonal_matrix(self):
        """測試對角矩陣只與 l 有關"""
        trunc = Truncation(2)
        matrix = diagonal_matrix(BesselKind.J, trunc, 1.1)
        expected = sph_bessel(BesselKind.J, [0, 1, 1, 1, 2, 2, 2, 2, 2], 1.1)
        np.testing.assert_allclose(np.diag(matrix), expected, rtol=1e-14)
        self.assertEqual(np.count_nonzero(matrix - np.diag(np.diag(matrix))), 0)


class TestPhasesAndPlaneWaves(unittest.TestCase):

    def test_phase_matrices(self):
        """測試 ξ = diag(i^l)、η = diag((−1)^l) 與 ξ² = η"""
        xi = xi_diagonal(3)
        eta = eta_diagonal(3)
        self.assertEqual(xi[0], 1)
        self.assertAlmostEqual(xi[1], 1j)
        np.testing.assert_allclose(xi * xi, eta, atol=1e-15)

    def test_plane_wave_expansion_converges(self):
        """測試 e^{ik·r} 的部分波展開"""
        k_vec = 1.2 * np.array([0.6, 0.0, 0.8])
        r_vec = np.array([0.3, -0.9, 0.7])
        exact = np.exp(1j * k_vec @ r_vec)
        approx = plane_wave_expansion(k_vec, r_vec, Truncation(18))
        self.assertLess(abs(approx - exact), 1e-10)

    def test_q_form_matches_regular_form(self):
        """測試 2πi Yᵀ[q_f⁺ − q_f⁻]ξY 與 4π Yᵀ j ξ Y 相同"""
        trunc = Truncation(8)
        k_vec = np.array([0.0, 0.9, -0.4])
        r_vec = np.array([1.1, 0.2, 0.5])
        regular = plane_wave_expansion(k_vec, r_vec, trunc)
        q_form = plane_wave_q_form(k_vec, r_vec, trunc)
        self.assertLess(abs(regular - q_form), 1e-12)


class TestFreeWronskians(unittest.TestCase):

    def test_wronskian_constants(self):
        """測試三組自由解的 Wronskian 常數"""
        for k, r in ((0.7, 1.5), (1.3, 2.0), (2.5, 3.1)):
            defects = free_wronskian_check(6, k, r)
            self.assertEqual(set(defects), {"regular_outgoing", "modified", "modified_decaying"})
            for name, defect in defects.items():
                self.assertLess(defect, 1e-10, msg=f"{name} at k={k}, r={r}")

    def test_rejects_bad_arguments(self):
        """測試 k ≤ 0 或 r ≤ 0 被拒絕"""
        with self.assertRaises(DomainError):
            free_wronskian_check(2, 0.0, 1.0)
        with self.assertRaises(DomainError):
            free_wronskian_check(2, 1.0, -1.0)


if __name__ == '__main__':
    unittest.main()
