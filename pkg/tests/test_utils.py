"""
Unit tests for utils/
"""

import sys
import tempfile
import unittest
from importlib.metadata import PackageNotFoundError
from pathlib import Path
from unittest.mock import patch

import numpy as np

# 加入專案根目錄到 path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from services.schemas import CheckResult
from utils.output_writer import package_versions, write_csv, write_report
from utils.quadrature import frame_from_axis, quadrature_order_for_degree, sphere_product_quadrature


class TestQuadrature(unittest.TestCase):

    def test_integrates_polynomials_exactly(self):
        """測試乘積積分對低次多項式精確"""
        n_theta, n_phi = quadrature_order_for_degree(6)
        dirs, weights, _ = sphere_product_quadrature(n_theta, n_phi)
        self.assertAlmostEqual(np.sum(weights), 4 * np.pi, places=13)
        self.assertAlmostEqual(np.sum(weights * dirs[:, 2] ** 2), 4 * np.pi / 3, places=13)
        self.assertAlmostEqual(np.sum(weights * dirs[:, 0] ** 2 * dirs[:, 1] ** 2 * dirs[:, 2] ** 2),
                               4 * np.pi / 105, places=13)

    def test_rotated_axis(self):
        """測試旋轉後第一個 θ 環以 axis 為極軸"""
        axis = np.array([1.0, 2.0, -2.0]) / 3.0
        dirs, _, cos_t = sphere_product_quadrature(4, 8, axis=axis)
        np.testing.assert_allclose(dirs[:8] @ axis, np.full(8, cos_t[0]), atol=1e-14)
        frame = frame_from_axis(axis)
        np.testing.assert_allclose(frame @ frame.T, np.eye(3), atol=1e-14)
        self.assertAlmostEqual(np.linalg.det(frame), 1.0, places=14)


class TestOutputWriter(unittest.TestCase):

    def setUp(self):
        self.temp = tempfile.TemporaryDirectory()
        self.dir = Path(self.temp.name)

    def tearDown(self):
        self.temp.cleanup()

    def test_csv_cells(self):
        """測試 CSV 以 repr 輸出浮點數、空值與布林"""
        path = write_csv(self.dir / "out.csv", ["a", "b", "c"], [[0.1, None, True], [np.float64(1e-20), 3, False]])
        lines = path.read_text(encoding="utf-8").splitlines()
        self.assertEqual(lines, ["a,b,c", "0.1,,true", "1e-20,3,false"])

    def test_report_lines(self):
        """測試驗證報告每項檢查一行"""
        checks = [
            CheckResult(name="radial.constancy", defect=1e-9, tolerance=1e-7, passed=True, context="E=1"),
            CheckResult(name="green.symmetry", defect=1e-3, tolerance=1e-6, passed=False),
        ]
        path = write_report(self.dir / "report.txt", "title", checks, ["note"])
        text = path.read_text(encoding="utf-8")
        self.assertIn("checks: 2  passed: 1  failed: 1", text)
        self.assertIn("PASS  radial.constancy", text)
        self.assertIn("FAIL  green.symmetry", text)

    @patch("utils.output_writer.version")
    def test_package_versions(self, mock_version):
        """測試未安裝的套件記錄為 not installed"""
        def fake_version(name):
            if name == "numpy":
                return "1.0"
            raise PackageNotFoundError(name)

        mock_version.side_effect = fake_version
        versions = package_versions()
        self.assertEqual(versions["numpy"], "1.0")
        self.assertEqual(versions["sympy"], "not installed")


class TestPrintLock(unittest.TestCase):

    def test_single_shared_lock(self):
        """測試引擎與各服務共用同一把輸出鎖"""
        import utils
        from engines import msw
        from services import msw_service, scattering_service, verification_service

        for module in (msw, msw_service, scattering_service, verification_service):
            self.assertIs(module.print_lock, utils.print_lock, msg=module.__name__)


if __name__ == '__main__':
    unittest.main()
