"""
Unit tests for engines/potential.py
"""

import sys
import unittest
from pathlib import Path

import numpy as np

# 加入專案根目錄到 path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from engines.angular import lm_index
from engines.errors import DomainError, GeometryError
from engines.potential import (
    DistortingMode,
    MolecularPartition,
    MultipoleExpansion,
    PotentialModel,
    PotentialTerm,
    TermKind,
    build_distorting_potential,
    project_function,
    project_multipoles,
    projection_defect,
)


def _yukawa_atom(b=1.5, offset=0.0):
    model = PotentialModel([[0.0, 0.0, 0.0]], [PotentialTerm(TermKind.YUKAWA, 0, amplitude=1.0, screening=1.0)],
                           offset)
    return model, MolecularPartition([[0.0, 0.0, 0.0]], [b])


class TestPotentialTerms(unittest.TestCase):

    def test_analytic_forms(self):
        """測試各種位能項的解析形式"""
        d = np.array([0.5, 1.0, 3.0])
        yukawa = PotentialTerm(TermKind.YUKAWA, 0, amplitude=1.5, screening=0.7)
        np.testing.assert_allclose(yukawa.evaluate(d), -3.0 * np.exp(-0.7 * d) / d, rtol=1e-14)
        gauss = PotentialTerm(TermKind.GAUSSIAN, 0, depth=4.0, width=1.2)
        np.testing.assert_allclose(gauss.evaluate(d), -4.0 * np.exp(-(d / 1.2) ** 2), rtol=1e-14)
        well = PotentialTerm(TermKind.SQUARE_WELL, 0, depth=2.0, radius=1.0)
        np.testing.assert_allclose(well.evaluate(np.array([0.5, 1.5])), [-2.0, 0.0])
        coulomb = PotentialTerm(TermKind.COULOMB, 0, charge=1.0, cutoff=2.0)
        np.testing.assert_allclose(coulomb.evaluate(np.array([1.0, 2.5])), [-1.0, 0.0], atol=1e-15)

    def test_breakpoints(self):
        """測試不連續點只來自方位井與截斷 Coulomb"""
        self.assertEqual(PotentialTerm(TermKind.SQUARE_WELL, 0, radius=1.3).breakpoint(), 1.3)
        self.assertEqual(PotentialTerm(TermKind.COULOMB, 0, charge=1.0, cutoff=2.0).breakpoint(), 2.0)
        self.assertIsNone(PotentialTerm(TermKind.GAUSSIAN, 0).breakpoint())

    def test_support_radius(self):
        """測試尾巴門檻的半徑"""
        term = PotentialTerm(TermKind.GAUSSIAN, 0, depth=4.0, width=1.0)
        radius = term.support_radius(1e-10, 0.0)
        self.assertAlmostEqual(float(abs(term.evaluate(np.array(radius)))) * radius ** 2, 1e-10, delta=1e-12)
        self.assertEqual(PotentialTerm(TermKind.COULOMB, 0, charge=1.0).support_radius(1e-10, 0.0), np.inf)


class TestModelAndPartition(unittest.TestCase):

    def test_model_sum_and_offset(self):
        """測試多中心位能為各項加總再加 V∞"""
        terms = [PotentialTerm(TermKind.GAUSSIAN, 0, depth=1.0), PotentialTerm(TermKind.GAUSSIAN, 1, depth=2.0)]
        model = PotentialModel([[0.0, 0.0, -1.0], [0.0, 0.0, 1.0]], terms, offset=0.3)
        value = model.evaluate([[0.0, 0.0, 0.0]])[0]
        self.assertAlmostEqual(value, 0.3 - 3.0 * np.exp(-1.0), places=14)
        self.assertFalse(model.is_spherical_about(0))

    def test_bad_center_index(self):
        """測試位能項指向不存在的中心"""
        with self.assertRaises(GeometryError):
            PotentialModel([[0.0, 0.0, 0.0]], [PotentialTerm(TermKind.GAUSSIAN, 1)])

    def test_overlapping_spheres(self):
        """測試原子球重疊被拒絕"""
        with self.assertRaises(GeometryError):
            MolecularPartition([[0.0, 0.0, 0.0], [0.0, 0.0, 3.0]], [2.0, 2.0])
        with self.assertRaises(GeometryError):
            MolecularPartition([[0.0, 0.0, 0.0]], [0.0])

    def test_touching_spheres_allowed(self):
        """測試相切的原子球允許，並正確判斷點所在區域"""
        partition = MolecularPartition([[0.0, 0.0, -2.0], [0.0, 0.0, 2.0]], [2.0, 2.0])
        owner = partition.locate([[0.0, 0.0, -2.5], [0.0, 0.0, 1.0], [3.0, 0.0, 0.0]])
        self.assertEqual(list(owner), [0, 1, -1])
        np.testing.assert_allclose(partition.displacement(0, 1), [0.0, 0.0, 4.0])


class TestProjection(unittest.TestCase):

    def test_dipole_projection(self):
        """測試 z 的投影只有 L = (1, 0) 分量"""
        radii = np.array([0.5, 1.0, 2.0])
        comps = project_function(lambda pts: pts[:, 2], np.zeros(3), radii, 2)
        expected = np.zeros_like(comps)
        expected[:, lm_index(1, 0)] = radii * np.sqrt(4 * np.pi / 3)
        np.testing.assert_allclose(comps, expected, atol=1e-13)

    def test_band_limited_reconstruction(self):
        """測試帶限函數對偏移原點的展開可精確重建"""
        origin = np.array([0.4, -0.2, 0.1])

        def func(points):
            return points[:, 0] * points[:, 1] + points[:, 2] ** 2 + 0.5

        radii = np.linspace(0.2, 3.0, 15)
        expansion = MultipoleExpansion(0, origin, radii, project_function(func, origin, radii, 2), 2)
        points = origin + np.array([[0.5, 1.0, -0.7], [-1.2, 0.3, 0.9]])
        np.testing.assert_allclose(expansion.reconstruct(points), func(points), atol=1e-11)
        self.assertLess(projection_defect(func, origin, radii, 2), 1e-12)

    def test_off_center_projection(self):
        """測試另一個中心的 Gaussian 對中心 0 投影（加倍檢查）"""
        terms = [PotentialTerm(TermKind.GAUSSIAN, 1, depth=1.0, width=1.0)]
        model = PotentialModel([[0.0, 0.0, 0.0], [0.0, 0.0, 3.0]], terms)
        expansion = project_multipoles(model, 0, np.linspace(0.5, 1.5, 5), 10)
        self.assertLess(expansion.quadrature_defect, 1e-8)
        point = np.array([[0.0, 0.0, 1.0]])
        self.assertAlmostEqual(expansion.reconstruct(point)[0], model.evaluate(point)[0], delta=1e-4)

    def test_rejects_unsorted_radii(self):
        """測試投影格點必須遞增"""
        model, _ = _yukawa_atom()
        with self.assertRaises(DomainError):
            project_multipoles(model, 0, np.array([1.0, 0.5]), 2)


class TestDistortingPotential(unittest.TestCase):

    def test_continuation_is_smooth_and_finite(self):
        """測試延拓的 V_I 在球外等於 V、在 b 連續且在原子核有限"""
        model, partition = _yukawa_atom(b=1.5)
        distorted = build_distorting_potential(model, partition, continuation_degree=2, l_max_pot=4)
        outside = np.array([[0.0, 2.0, 0.0], [1.0, 1.0, 1.5]])
        np.testing.assert_allclose(distorted.evaluate_I(outside), model.evaluate(outside), rtol=1e-14)

        b = 1.5
        inner = distorted.evaluate_I([[0.0, 0.0, b * (1 - 1e-9)]])[0]
        outer = model.evaluate([[0.0, 0.0, b * (1 + 1e-9)]])[0]
        self.assertAlmostEqual(inner, outer, delta=1e-7)

        h = 1e-5
        slope_in = (inner - distorted.evaluate_I([[0.0, 0.0, b - h]])[0]) / h
        slope_out = (model.evaluate([[0.0, 0.0, b + h]])[0] - outer) / h
        self.assertAlmostEqual(slope_in, slope_out, delta=1e-3 * abs(slope_out))

        self.assertTrue(np.isfinite(distorted.eval_potential("V_I", [0.0, 0.0, 0.0])))
        with self.assertRaises(DomainError):
            distorted.eval_potential("V", [0.0, 0.0, 0.0])
        self.assertAlmostEqual(distorted.eval_potential("V_A", [0.0, 2.0, 0.0]), 0.0, places=14)

    def test_discontinuity_at_sphere_rejected(self):
        """測試方位井邊緣貼近球面時延拓失敗"""
        model = PotentialModel([[0.0, 0.0, 0.0]], [PotentialTerm(TermKind.SQUARE_WELL, 0, depth=2.0, radius=2.0)])
        partition = MolecularPartition([[0.0, 0.0, 0.0]], [2.001])
        with self.assertRaises(DomainError):
            build_distorting_potential(model, partition, continuation_degree=2, l_max_pot=2)

    def test_identity_and_constant_modes(self):
        """測試 identity 與 constant 模式"""
        model, partition = _yukawa_atom(offset=0.25)
        points = np.array([[0.3, 0.0, 0.1], [0.0, 3.0, 0.0]])
        identity = build_distorting_potential(model, partition, mode=DistortingMode.IDENTITY)
        np.testing.assert_allclose(identity.evaluate_I(points), model.evaluate(points))
        constant = build_distorting_potential(model, partition, mode=DistortingMode.CONSTANT)
        np.testing.assert_allclose(constant.evaluate_I(points), [0.25, 0.25])
        self.assertTrue(constant.is_constant)
        self.assertEqual(constant.breakpoints(0, "V_I"), [])

    def test_breakpoints_for_grid_alignment(self):
        """測試 V_I 的不連續點包含球面與球外的方位井邊緣"""
        model = PotentialModel([[0.0, 0.0, 0.0]], [PotentialTerm(TermKind.SQUARE_WELL, 0, depth=1.0, radius=1.0)])
        partition = MolecularPartition([[0.0, 0.0, 0.0]], [2.0])
        distorted = build_distorting_potential(model, partition, l_max_pot=2)
        self.assertEqual(distorted.breakpoints(0, "V"), [1.0])
        self.assertEqual(distorted.breakpoints(0, "V_I"), [2.0])


if __name__ == '__main__':
    unittest.main()
