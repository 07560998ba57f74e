"""
問題建構服務
把設定檔轉成位能模型，並為每個中心建立格點、位能矩陣與徑向解
"""

import threading
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from config import GridConfig
from engines.angular import Truncation
from engines.errors import DomainError
from engines.green import GreenExpansion, green_expansion
from engines.msw import AtomicScatteringData, build_atomic_data
from engines.potential import (
    DistortedPotential,
    DistortingMode,
    MolecularPartition,
    PotentialModel,
    PotentialTerm,
    TermKind,
    build_distorting_potential,
)
from engines.radial import (
    Boundary,
    CoupledPotentialMatrix,
    FreeKind,
    FreeRadialSolution,
    RadialGrid,
    RadialSolution,
    build_potential_matrix,
    constant_matrix,
    integrate_irregular,
    integrate_regular,
    radial_grid,
    wavenumber,
)
from services.schemas import DwmsConfigFile, GridRecord


@dataclass
class CenterSolutions:
    """某中心在某能量的 p、q⁺（與 q⁻）及 Green 展開"""
    center: int
    energy: float
    p: RadialSolution
    q: RadialSolution
    q_minus: Optional[RadialSolution]
    M: np.ndarray
    green: GreenExpansion
    r_eval: float


class ProblemBuilder:
    """
    由 DwmsConfigFile 建立計算所需的物件

    位能矩陣與能量無關，依 (中心, 種類, 格點) 快取，能量掃描時重複使用。
    """

    def __init__(self, problem: DwmsConfigFile, verbose: bool = False):
        self.problem = problem
        self.verbose = verbose
        positions = np.array([atom.position for atom in problem.atoms], dtype=float)
        radii = np.array([atom.sphere_radius for atom in problem.atoms], dtype=float)
        terms = [
            PotentialTerm(
                kind=TermKind(term.kind.value), center=term.center, charge=term.charge,
                cutoff=term.cutoff, amplitude=term.amplitude, screening=term.screening,
                depth=term.depth, width=term.width, radius=term.radius,
            )
            for term in problem.potential.terms
        ]
        self.model = PotentialModel(positions, terms, problem.potential.offset)
        self.partition = MolecularPartition(positions, radii)
        self.distorted: DistortedPotential = build_distorting_potential(
            self.model, self.partition,
            continuation_degree=problem.distorting.continuation_degree,
            l_max_pot=problem.l_max_pot,
            mode=DistortingMode(problem.distorting.mode.value),
            constant=problem.distorting.constant,
        )
        if self.distorted.is_constant and abs(self.distorted.constant - self.model.offset) > 1e-12:
            # 外球區塊未實作：常數必須等於 V∞
            raise DomainError(
                f"constant 模式的 V_I = {self.distorted.constant} 必須等於 V∞ = {self.model.offset}"
            )
        if self.distorted.is_constant:
            self._check_muffin_tin(GridConfig.ASYMPTOTIC_THRESHOLD)
        self.trunc = Truncation(problem.l_max)
        self.grid_records: List[GridRecord] = []
        self._potmats: Dict[Tuple, CoupledPotentialMatrix] = {}
        self._lock = threading.Lock()

    def _check_muffin_tin(self, threshold: float):
        """constant 模式下每一項位能都必須在自己的原子球內消失（球外 V = V∞）"""
        for term in self.model.terms:
            reach = term.support_radius(threshold, 0.0)
            radius = float(self.partition.radii[term.center])
            if reach > radius * (1 + 1e-12):
                raise DomainError(
                    f"constant 模式需要球外 V = V∞：{term.kind.value} 項（中心 {term.center}）"
                    f"延伸到 r = {reach:.6g}，超過原子球半徑 {radius:.6g}；請改用 continuation"
                )

    # --------------------------------------------------------
    # 基本量
    # --------------------------------------------------------
    @property
    def n_centers(self) -> int:
        return self.partition.n_centers

    @property
    def v_inf(self) -> float:
        return self.model.offset

    @property
    def positions(self) -> np.ndarray:
        return self.partition.positions

    @property
    def radii(self) -> np.ndarray:
        return self.partition.radii

    def wavenumber(self, energy: float) -> float:
        k, _ = wavenumber(energy, self.v_inf)
        return k

    def incident_direction(self) -> np.ndarray:
        direction = np.asarray(self.problem.incident_direction, dtype=float)
        return direction / np.linalg.norm(direction)

    def check_truncation(self, energy: float):
        """k·max(b_i) > l_max 時提醒截斷可能不足"""
        k = self.wavenumber(energy)
        reach = k * float(np.max(self.radii))
        if reach > self.trunc.l_max:
            print(f"⚠️ E = {energy:.6g}：k·max(b) = {reach:.3g} 大於 l_max = {self.trunc.l_max}，部分波可能未收斂")

    # --------------------------------------------------------
    # 格點
    # --------------------------------------------------------
    def _record(self, center: int, kind: str, energy: float, grid: RadialGrid, anchors):
        record = GridRecord(
            center=center, kind=kind, energy=float(energy), r_min=float(grid.r[0]),
            r_max=float(grid.r_max), step=float(grid.h), nodes=int(grid.n),
            anchors=[float(a) for a in anchors if grid.node_at(a) is not None],
        )
        with self._lock:
            self.grid_records.append(record)

    def _asymptotic_radius(self, center: int, minimum: float) -> float:
        spec = self.problem.grid
        if spec.r_asymptotic is not None:
            if spec.r_asymptotic < minimum:
                raise DomainError(f"grid.r_asymptotic = {spec.r_asymptotic} 小於所需的 {minimum:.6g}")
            return spec.r_asymptotic
        tail = self.model.tail_radius(center, GridConfig.ASYMPTOTIC_THRESHOLD)
        if not np.isfinite(tail):
            # 留給 integrate_irregular 回報實際的尾巴大小
            tail = minimum
        return max(tail, minimum) + GridConfig.ASYMPTOTIC_MARGIN

    def _grid(self, r_max: float, anchors, k: Optional[float]) -> RadialGrid:
        spec = self.problem.grid
        return radial_grid(r_max, anchors, k=k, r_min=spec.r_min, step=spec.step, scale=spec.scale)

    def _potential_matrix(self, which: str, center: int, grid: RadialGrid,
                          breakpoints) -> CoupledPotentialMatrix:
        key = (which, center, grid.x0, grid.h, grid.n, grid.scale)
        with self._lock:
            cached = self._potmats.get(key)
        if cached is not None:
            return cached

        def project(radii):
            return self.distorted.project(which, center, radii, check=False).components

        if self.verbose:
            print(f"   🔬 中心 {center} 的 {which} 投影加倍差：{self.projection_defect(which, center):.2e}")
        potmat = build_potential_matrix(project, grid, self.trunc.l_max, self.problem.l_max_pot,
                                        self.v_inf, breakpoints)
        with self._lock:
            self._potmats[key] = potmat
        return potmat

    def projection_defect(self, which: str, center: int) -> float:
        """V 或 V_I 在球面附近的投影加倍差"""
        b = float(self.radii[center])
        radii = np.linspace(0.5 * b, 2.0 * b, 7)
        return self.distorted.project(which, center, radii, check=True).quadrature_defect

    # --------------------------------------------------------
    # 儲存範圍
    # --------------------------------------------------------
    def _p_limit(self) -> float:
        return 1.5 * float(np.max(self.radii)) + 1.0

    def _q_limit(self, center: int) -> float:
        reach = self._p_limit()
        for j in range(self.n_centers):
            if j != center:
                reach = max(reach, float(np.linalg.norm(self.partition.displacement(center, j))) + self.radii[j])
        return reach + 0.5

    # --------------------------------------------------------
    # V_I 的徑向解
    # --------------------------------------------------------
    def distorting_solutions(self, center: int, energy: float, incoming: bool = False,
                             which: str = "V_I", full_range: bool = False) -> CenterSolutions:
        """
        中心 center 在能量 energy 的 p、q（which = "V" 時為完整位能，單中心散射用）

        full_range 為 True 時 q 儲存到格點末端（驗證外向邊界用）

        Raises:
            AsymptoticRangeError / IndependenceError / NearSingularError: 來自引擎
        """
        k, negative = wavenumber(energy, self.v_inf)
        b = float(self.radii[center])
        origin = self.positions[center]
        if which == "V_I" and self.distorted.is_constant:
            return self._free_solutions(center, energy, k, negative, b, origin)

        p_hi, q_hi = self._p_limit(), self._q_limit(center)
        anchors = [b] + [a for a in self.distorted.breakpoints(center, which) if a != b]
        r_max = self._asymptotic_radius(center, max(p_hi, q_hi) * 1.05)
        grid = self._grid(r_max, anchors, None if negative else k)
        self._record(center, which, energy, grid, anchors)
        potmat = self._potential_matrix(which, center, grid, anchors)

        p = integrate_regular(potmat, energy, store=(0.5 * b, p_hi),
                              reorthogonalize=self.problem.grid.reorthogonalize)
        boundary = Boundary.DECAYING if negative else Boundary.OUTGOING
        q = integrate_irregular(potmat, energy, boundary,
                                store=(0.9 * b, grid.r_max if full_range else q_hi))
        q_minus = q.conjugate() if (incoming and not negative) else None
        if negative:
            # 束縛態掃描只記錄 cond(M)，不在此拋出
            green = GreenExpansion(np.asarray(origin, dtype=float), p, q, constant_matrix(p, q, b),
                                   energy, self.trunc, self.v_inf)
        else:
            green = green_expansion(p, q, origin=origin, r_eval=b, v_inf=self.v_inf, q_minus=q_minus)
        if self.verbose:
            print(f"   🔬 中心 {center} {which}：{grid.n} 個格點，r_max = {grid.r_max:.4g}，"
                  f"cond(M) = {np.linalg.cond(green.M):.3e}")
        return CenterSolutions(center, energy, p, q, q_minus, green.M, green, b)

    def _free_solutions(self, center, energy, k, negative, b, origin) -> CenterSolutions:
        if negative:
            p = FreeRadialSolution(FreeKind.MODIFIED_REGULAR, k, self.trunc, energy)
            q = FreeRadialSolution(FreeKind.DECAYING, k, self.trunc, energy)
            q_minus = None
        else:
            p = FreeRadialSolution(FreeKind.REGULAR, k, self.trunc, energy)
            q = FreeRadialSolution(FreeKind.OUTGOING, k, self.trunc, energy)
            q_minus = FreeRadialSolution(FreeKind.INCOMING, k, self.trunc, energy)
        M = constant_matrix(p, q, b)
        green = GreenExpansion(np.asarray(origin, dtype=float), p, q, M, energy, self.trunc, self.v_inf, q_minus)
        return CenterSolutions(center, energy, p, q, q_minus, M, green, b)

    # --------------------------------------------------------
    # 球內完整位能的正規解 R^i
    # --------------------------------------------------------
    def inner_solution(self, center: int, energy: float) -> RadialSolution:
        """以完整 V 積分到 b_i（再多 EXTRA_NODES 個格點）"""
        k, negative = wavenumber(energy, self.v_inf)
        b = float(self.radii[center])
        anchors = [b] + [a for a in self.model.breakpoints(center) if a < b]
        coarse = self._grid(b * 1.05, anchors, None if negative else k)
        node_b = coarse.node_at(b)
        if node_b is None:
            raise DomainError(f"中心 {center} 的球面 b = {b} 未落在格點上")
        grid = RadialGrid(coarse.x0, coarse.h, node_b + 1 + GridConfig.EXTRA_NODES, coarse.scale)
        self._record(center, "V", energy, grid, anchors)
        potmat = self._potential_matrix("V", center, grid, anchors)
        return integrate_regular(potmat, energy, store=(0.5 * b, b), check_radius=b,
                                 reorthogonalize=self.problem.grid.reorthogonalize)

    def atomic_data(self, center: int, energy: float, strict: bool = True) -> AtomicScatteringData:
        """某中心在某能量的 T_a⁻¹ 與所有相關解"""
        solutions = self.distorting_solutions(center, energy)
        R = self.inner_solution(center, energy)
        return build_atomic_data(center, self.positions[center], solutions.r_eval, R,
                                 solutions.p, solutions.q, solutions.M, solutions.green, strict=strict)
