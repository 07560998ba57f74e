"""
DW-MS 處理器 - 統一入口
依執行模式串接各服務，寫出 CSV、JSON 清單與驗證報告
"""

from typing import Dict, List

from config import FileNames, GridConfig, ToleranceConfig
from services.msw_service import MswService
from services.problem_builder import ProblemBuilder
from services.scattering_service import ScatteringService
from services.schemas import (
    CheckResult,
    MswResults,
    RunConfig,
    RunManifest,
    RunMode,
)
from services.verification_service import VerificationService
from utils.output_writer import (
    package_versions,
    write_csv,
    write_json_model,
    write_radial_dump,
    write_report,
)

# 結束代碼
EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_CHECKS_FAILED = 3


def _class_constants(cls) -> Dict[str, float]:
    return {
        name: float(value) for name, value in vars(cls).items()
        if name.isupper() and isinstance(value, (int, float)) and not isinstance(value, bool)
    }


class DwmsProcessor:
    """
    統一的 DW-MS 計算入口（CLI 與測試共用）

    流程：
    1. 建立位能模型與幾何（ProblemBuilder）
    2. 依模式執行單中心散射、多中心連續態、束縛態掃描或驗證
    3. 寫出結果表、執行清單與報告
    """

    def __init__(self, run: RunConfig):
        self.run_config = run
        self.problem = run.problem
        self.builder = ProblemBuilder(run.problem, verbose=run.verbose)
        self.output_dir = run.output_dir
        self.checks: List[CheckResult] = []
        self.artifacts: List[str] = []
        self.tolerances: Dict[str, float] = _class_constants(ToleranceConfig)

    def process(self) -> int:
        """執行並回傳結束代碼"""
        run = self.run_config
        print("\n" + "=" * 60)
        print(f"🚀 DW-MS - 模式 {run.mode.value}")
        print("=" * 60)
        print(f"📁 設定檔：{run.config_path}")
        print(f"📁 輸出目錄：{self.output_dir}")
        self.output_dir.mkdir(parents=True, exist_ok=True)

        handlers = {
            RunMode.SINGLE_SCATTER: self._single_scatter,
            RunMode.MSW_CONTINUUM: self._msw_continuum,
            RunMode.MSW_BOUND_SCAN: self._bound_scan,
            RunMode.VERIFY: self._verify,
        }
        status = handlers[run.mode]()
        if run.dump_radial:
            self._dump_radial()
        self._write_manifest(status)

        print("\n" + "=" * 60)
        print("✅ 計算完成！" if status == EXIT_OK else "⚠️ 計算完成，但有檢查未通過")
        print("=" * 60)
        return status

    def _artifact(self, path):
        self.artifacts.append(path.name)
        return path

    def _energies(self) -> List[float]:
        return self.problem.energies.grid()

    # --------------------------------------------------------
    # 模式
    # --------------------------------------------------------
    def _single_scatter(self) -> int:
        service = ScatteringService(self.builder, self.run_config.workers, self.run_config.verbose)
        results = service.sweep(self._energies())
        header = ["energy", "k", "sigma_integrated", "sigma_optical", "sigma_partial_wave",
                  "unitarity_defect", "symmetry_defect"]
        rows = []
        angular = []
        for result in results:
            rec = result.record
            rows.append([rec.energy, rec.wavenumber, rec.sigma_integrated, rec.sigma_optical,
                         rec.sigma_partial_wave, rec.unitarity_defect, rec.symmetry_defect])
            angular.extend([rec.energy, *row] for row in result.angular)
            context = f"E={rec.energy:.10g}"
            gap = abs(rec.sigma_integrated - rec.sigma_optical) / max(
                abs(rec.sigma_optical), abs(rec.sigma_integrated), 1.0 / rec.wavenumber ** 2)
            self._add_check("scatter.cross_section_routes", gap, ToleranceConfig.CROSS_SECTION_GAP, context)
            self._add_check("scatter.unitarity", rec.unitarity_defect, ToleranceConfig.IDENTITY, context)
            if rec.sigma_partial_wave is not None:
                oracle_gap = abs(rec.sigma_integrated - rec.sigma_partial_wave) / max(
                    abs(rec.sigma_partial_wave), 1.0 / rec.wavenumber ** 2)
                self._add_check("scatter.partial_wave_oracle", oracle_gap, ToleranceConfig.CROSS_SECTION_GAP,
                                context)
        self._artifact(write_csv(self.output_dir / FileNames.CROSS_SECTIONS, header, rows))
        self._artifact(write_csv(self.output_dir / FileNames.ANGULAR_DISTRIBUTION,
                                 ["energy", "theta", "phi", "dsigma_domega"], angular))
        return EXIT_OK

    def _msw_continuum(self) -> int:
        service = MswService(self.builder, self.run_config.workers, self.run_config.verbose)
        results = service.sweep(self._energies())
        header = ["energy", "k", "sigma_integrated", "sigma_optical", "secular_condition", "solve_residual",
                  "t_inverse_symmetry", "block_symmetry", "surface_matching", "swap_symmetry"]
        rows = []
        for result in results:
            rec = result.record
            rows.append([rec.energy, rec.wavenumber, rec.sigma_integrated, rec.sigma_optical,
                         rec.secular_condition, rec.solve_residual, rec.t_inverse_symmetry,
                         rec.block_symmetry, rec.surface_matching, rec.swap_symmetry])
            context = f"E={rec.energy:.10g}"
            self._add_check("msw.solve_residual", rec.solve_residual, ToleranceConfig.SOLVE_RESIDUAL, context)
            self._add_check("msw.t_inverse_symmetry", rec.t_inverse_symmetry, ToleranceConfig.IDENTITY, context)
            self._add_check("msw.block_symmetry", rec.block_symmetry, ToleranceConfig.IDENTITY, context)
            self._add_check("msw.surface_matching", rec.surface_matching, ToleranceConfig.SURFACE_MATCHING, context)
            if rec.swap_symmetry is not None:
                self._add_check("msw.swap_symmetry", rec.swap_symmetry, ToleranceConfig.SWAP_SYMMETRY, context)
        self._artifact(write_csv(self.output_dir / FileNames.MSW_CROSS_SECTIONS, header, rows))
        summary = MswResults(
            incident_direction=tuple(float(c) for c in self.builder.incident_direction()),
            records=[result.record for result in results],
        )
        self._artifact(write_json_model(self.output_dir / FileNames.MSW_RESULTS, summary))
        return EXIT_OK

    def _bound_scan(self) -> int:
        spec = self.problem.bound_scan
        service = MswService(self.builder, self.run_config.workers, self.run_config.verbose)
        result = service.bound_scan(spec)
        self.tolerances["BOUND_THRESHOLD"] = spec.threshold or ToleranceConfig.BOUND_THRESHOLD
        self._artifact(write_csv(
            self.output_dir / FileNames.BOUND_SCAN,
            ["energy", "sigma_ratio", "phase", "cond_M_max", "flagged"],
            ([s.energy, s.sigma_ratio, s.phase, s.cond_M_max, s.flagged] for s in result.samples),
        ))
        self._artifact(write_csv(
            self.output_dir / FileNames.BOUND_STATES,
            ["energy", "sigma_ratio", "phase_flip", "flagged"],
            ([c.energy, c.sigma_ratio, c.phase_flip, c.flagged] for c in result.candidates),
        ))
        if result.flagged_window:
            print("⚠️ 掃描視窗已標記：V_I 本身在視窗內可能有束縛態，候選能量需另行確認")
        return EXIT_OK

    def _verify(self) -> int:
        service = VerificationService(self.builder, self.run_config.workers, self.run_config.verbose)
        self.checks = service.run(self._energies())
        self.tolerances.update({f"verify.{key}": value for key, value in service.tolerances.items()})
        notes = [
            f"config: {self.run_config.config_path}",
            f"centers: {self.builder.n_centers}  l_max: {self.problem.l_max}  l_max_pot: {self.problem.l_max_pot}",
            f"energies: {', '.join(repr(e) for e in self._energies())}",
        ]
        self._artifact(write_report(self.output_dir / FileNames.REPORT, "DW-MS verification report",
                                    self.checks, notes))
        return EXIT_CHECKS_FAILED if any(not check.passed for check in self.checks) else EXIT_OK

    # --------------------------------------------------------
    # 共用
    # --------------------------------------------------------
    def _add_check(self, name: str, defect: float, tolerance: float, context: str):
        passed = defect <= tolerance
        if not passed:
            print(f"⚠️ {name} [{context}]：{defect:.2e} 超過 {tolerance:.0e}")
        self.checks.append(CheckResult(name=name, defect=float(defect), tolerance=tolerance,
                                       passed=bool(passed), context=context))

    def _dump_radial(self):
        """每個中心在代表能量的 p、q（與 R^i）"""
        if self.problem.energies is not None:
            energy = self._energies()[0]
        else:
            energy = self.problem.bound_scan.window[1]
        which = "V" if self.run_config.mode is RunMode.SINGLE_SCATTER else "V_I"
        print(f"\n📝 輸出徑向解（E = {energy:.6g} Ry）")
        for center in range(self.builder.n_centers):
            solutions = self.builder.distorting_solutions(center, energy, which=which)
            dumps = {"p": solutions.p, "q": solutions.q}
            if which == "V_I":
                dumps["R"] = self.builder.inner_solution(center, energy)
            for kind, solution in dumps.items():
                name = FileNames.RADIAL_DUMP.format(index=center, kind=kind)
                self._artifact(write_radial_dump(self.output_dir / name, solution))

    def _write_manifest(self, status: int):
        unique = {}
        for record in self.builder.grid_records:
            key = (record.energy, record.center, record.kind, record.nodes, record.step, record.r_max)
            unique[key] = record
        grids = [unique[key] for key in sorted(unique)]
        manifest = RunManifest(
            mode=self.run_config.mode,
            config=self.problem,
            tolerances=dict(sorted(self.tolerances.items())),
            grid_defaults=_class_constants(GridConfig),
            grids=grids,
            packages=package_versions(),
            checks=self.checks,
            artifacts=sorted(self.artifacts) + [FileNames.MANIFEST],
            exit_status=status,
        )
        write_json_model(self.output_dir / FileNames.MANIFEST, manifest)
