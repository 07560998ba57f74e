"""
角向引擎 - 實球諧函數、Gaunt 係數與 Gaunt 矩陣代數

慣例：
- 通道索引 L = l² + l + m
- 實球諧函數不含 Condon-Shortley 相位；m > 0 取 cos mφ，m < 0 取 sin|m|φ
"""

import threading
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Tuple

import numpy as np
from scipy.special import gammaln, lpmv
from sympy import I as sym_I
from sympy import Integer, N as sym_N, sqrt as sym_sqrt
from sympy.physics.wigner import gaunt as complex_gaunt

from config import ToleranceConfig
from engines.errors import DomainError
from utils.quadrature import quadrature_order_for_degree, sphere_product_quadrature


# ============================================================
# 索引與截斷
# ============================================================
def lm_index(l: int, m: int) -> int:
    return l * l + l + m


def index_lm(index: int) -> Tuple[int, int]:
    l = int(np.floor(np.sqrt(index)))
    return l, index - l * l - l


@dataclass(frozen=True)
class AngularIndex:
    """複合角動量索引 L = (l, m)"""
    l: int
    m: int

    def __post_init__(self):
        if self.l < 0 or abs(self.m) > self.l:
            raise DomainError(f"不合法的角動量索引 (l={self.l}, m={self.m})")

    @property
    def index(self) -> int:
        return lm_index(self.l, self.m)

    @classmethod
    def from_index(cls, index: int) -> "AngularIndex":
        return cls(*index_lm(index))


@dataclass(frozen=True)
class Truncation:
    """通道空間 l ≤ l_max，維度 (l_max+1)²"""
    l_max: int

    @property
    def dim(self) -> int:
        return (self.l_max + 1) ** 2

    @property
    def l_values(self) -> np.ndarray:
        return channel_l(self.l_max)

    @property
    def m_values(self) -> np.ndarray:
        return channel_m(self.l_max)

    def indices(self) -> Iterable[AngularIndex]:
        for l in range(self.l_max + 1):
            for m in range(-l, l + 1):
                yield AngularIndex(l, m)


@lru_cache(maxsize=None)
def channel_l(l_max: int) -> np.ndarray:
    values = np.concatenate([np.full(2 * l + 1, l) for l in range(l_max + 1)])
    values.flags.writeable = False
    return values


@lru_cache(maxsize=None)
def channel_m(l_max: int) -> np.ndarray:
    values = np.concatenate([np.arange(-l, l + 1) for l in range(l_max + 1)])
    values.flags.writeable = False
    return values


def reflection_signs(l_max: int) -> np.ndarray:
    """z → −z 反射下 Y_L 的符號 (−1)^{l+|m|}"""
    return (-1.0) ** (channel_l(l_max) + np.abs(channel_m(l_max)))


# ============================================================
# 實球諧函數
# ============================================================
def _as_unit_directions(dirs) -> np.ndarray:
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    norms = np.linalg.norm(dirs, axis=1)
    if np.any(np.abs(norms - 1.0) > ToleranceConfig.UNIT_VECTOR):
        raise DomainError(f"方向向量必須為單位向量，|dir| = {norms.max():.15g}")
    return dirs


def _spherical_angles(dirs: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    cos_t = np.clip(dirs[:, 2], -1.0, 1.0)
    sin_t = np.hypot(dirs[:, 0], dirs[:, 1])
    phi = np.arctan2(dirs[:, 1], dirs[:, 0])
    return cos_t, sin_t, phi


def _legendre_table(l_max: int, cos_t: np.ndarray) -> np.ndarray:
    """P̄_l^m(cosθ)（無 Condon-Shortley 相位），形狀 (l_max+1, l_max+2, n)，m > l 為 0"""
    table = np.zeros((l_max + 1, l_max + 2, cos_t.size))
    for l in range(l_max + 1):
        for m in range(l + 1):
            table[l, m] = (-1.0) ** m * lpmv(m, l, cos_t)
    return table


@lru_cache(maxsize=None)
def _normalization(l_max: int) -> np.ndarray:
    norm = np.zeros((l_max + 1, l_max + 1))
    for l in range(l_max + 1):
        m = np.arange(l + 1)
        norm[l, : l + 1] = np.sqrt(
            (2 * l + 1) / (4 * np.pi) * np.exp(gammaln(l - m + 1) - gammaln(l + m + 1))
        )
    norm[:, 1:] *= np.sqrt(2.0)
    return norm


def real_sh_matrix(l_max: int, dirs) -> np.ndarray:
    """
    多個方向上的實球諧函數

    Args:
        l_max: 最大 l
        dirs: (n, 3) 單位向量

    Returns:
        (n, (l_max+1)²) 陣列，第 L 欄為 Y_L
    """
    dirs = _as_unit_directions(dirs)
    cos_t, _, phi = _spherical_angles(dirs)
    plm = _legendre_table(l_max, cos_t)
    norm = _normalization(l_max)

    values = np.empty((dirs.shape[0], (l_max + 1) ** 2))
    for l in range(l_max + 1):
        values[:, lm_index(l, 0)] = norm[l, 0] * plm[l, 0]
        for m in range(1, l + 1):
            base = norm[l, m] * plm[l, m]
            values[:, lm_index(l, m)] = base * np.cos(m * phi)
            values[:, lm_index(l, -m)] = base * np.sin(m * phi)
    return values


def eval_real_sh(L: AngularIndex, direction) -> float:
    """單一方向的 Y_L(dir)"""
    return float(real_sh_matrix(L.l, direction)[0, L.index])


def real_sh_gradient_matrix(l_max: int, dirs) -> np.ndarray:
    """
    單位球面上的切向梯度 ∇_S Y_L = θ̂ ∂_θ Y_L + φ̂ (1/sinθ) ∂_φ Y_L

    極點以遞迴式的極限值處理，不需特判。

    Returns:
        (n, (l_max+1)², 3) 陣列
    """
    dirs = _as_unit_directions(dirs)
    cos_t, sin_t, phi = _spherical_angles(dirs)
    plm = _legendre_table(l_max, cos_t)
    norm = _normalization(l_max)

    theta_hat = np.stack([cos_t * np.cos(phi), cos_t * np.sin(phi), -sin_t], axis=1)
    phi_hat = np.stack([-np.sin(phi), np.cos(phi), np.zeros_like(phi)], axis=1)

    grads = np.zeros((dirs.shape[0], (l_max + 1) ** 2, 3))
    for l in range(1, l_max + 1):
        # dP̄_l^0/dθ = −P̄_l^1
        grads[:, lm_index(l, 0)] = (norm[l, 0] * -plm[l, 1])[:, None] * theta_hat
        for m in range(1, l + 1):
            d_theta = 0.5 * ((l + m) * (l - m + 1) * plm[l, m - 1] - plm[l, m + 1])
            # P̄_l^m / sinθ，對 l − 1 的遞迴在極點仍有限
            upper = plm[l - 1, m + 1] if m + 1 <= l - 1 else 0.0
            over_sin = (upper + (l + m - 1) * (l + m) * plm[l - 1, m - 1]) / (2 * m)
            cos_mp, sin_mp = np.cos(m * phi), np.sin(m * phi)
            n_lm = norm[l, m]
            grads[:, lm_index(l, m)] = (
                (n_lm * d_theta * cos_mp)[:, None] * theta_hat
                + (-m * n_lm * over_sin * sin_mp)[:, None] * phi_hat
            )
            grads[:, lm_index(l, -m)] = (
                (n_lm * d_theta * sin_mp)[:, None] * theta_hat
                + (m * n_lm * over_sin * cos_mp)[:, None] * phi_hat
            )
    return grads


def sh_gradient(L: AngularIndex, direction) -> np.ndarray:
    """單一方向的切向梯度；∇[f(r)Y_L] = f'Y_L r̂ + (f/r)·sh_gradient"""
    return real_sh_gradient_matrix(L.l, direction)[0, L.index]


# ============================================================
# Gaunt 係數
# ============================================================
def _selection_allows(l1, m1, l2, m2, l3, m3):
    """實球諧 Gaunt 係數的選擇定則（可向量化）"""
    triangle = (np.abs(l1 - l2) <= l3) & (l3 <= l1 + l2)
    parity = (l1 + l2 + l3) % 2 == 0
    a1, a2, a3 = np.abs(m1), np.abs(m2), np.abs(m3)
    m_rule = (a3 == a1 + a2) | (a3 == np.abs(a1 - a2))
    negatives = (np.asarray(m1) < 0).astype(int) + (np.asarray(m2) < 0) + (np.asarray(m3) < 0)
    return triangle & parity & m_rule & (negatives % 2 == 0)


def _real_to_complex(m: int):
    """實球諧 Y_{l,m} 以複數球諧 Y_l^μ 展開的係數 {μ: U}"""
    if m == 0:
        return {0: Integer(1)}
    mu = abs(m)
    sign = Integer(-1) ** mu
    if m > 0:
        return {mu: sign / sym_sqrt(2), -mu: 1 / sym_sqrt(2)}
    return {mu: sign / (sym_sqrt(2) * sym_I), -mu: -1 / (sym_sqrt(2) * sym_I)}


@lru_cache(maxsize=None)
def _gaunt_sorted(key: Tuple[Tuple[int, int], ...]) -> float:
    (l1, m1), (l2, m2), (l3, m3) = key
    if not _selection_allows(l1, m1, l2, m2, l3, m3):
        return 0.0
    total = Integer(0)
    for mu1, u1 in _real_to_complex(m1).items():
        for mu2, u2 in _real_to_complex(m2).items():
            for mu3, u3 in _real_to_complex(m3).items():
                if mu1 + mu2 + mu3 != 0:
                    continue
                total += u1 * u2 * u3 * complex_gaunt(l1, l2, l3, mu1, mu2, mu3)
    return float(complex(sym_N(total, 30)).real)


def gaunt(L1: AngularIndex, L2: AngularIndex, L3: AngularIndex) -> float:
    """
    I(L, L', L'') = ∫ Y_L Y_L' Y_L'' dΩ

    以 sympy 的 Wigner 3j 精確計算後轉為實球諧；對三個索引完全對稱，
    違反選擇定則時回傳精確的 0。
    """
    key = tuple(sorted([(L1.l, L1.m), (L2.l, L2.m), (L3.l, L3.m)]))
    return _gaunt_sorted(key)


class GauntTable:
    """
    I(A, B, C) 表：A, B ≤ l_max，C ≤ l_max_c

    以精確的乘積積分法建表，再以選擇定則把不允許的元素設為精確 0。
    建立後唯讀，可在多執行緒間共用。
    """

    def __init__(self, l_max: int, l_max_c: int):
        self.l_max = l_max
        self.l_max_c = l_max_c
        dim_a = (l_max + 1) ** 2
        dim_c = (l_max_c + 1) ** 2

        n_theta, n_phi = quadrature_order_for_degree(2 * l_max + l_max_c)
        dirs, weights, _ = sphere_product_quadrature(n_theta, n_phi)
        y_a = real_sh_matrix(l_max, dirs)
        y_c = real_sh_matrix(l_max_c, dirs)
        pairs = (y_a[:, :, None] * y_a[:, None, :]).reshape(len(weights), dim_a * dim_a)
        values = ((pairs * weights[:, None]).T @ y_c).reshape(dim_a, dim_a, dim_c)

        la, ma = channel_l(l_max), channel_m(l_max)
        lc, mc = channel_l(l_max_c), channel_m(l_max_c)
        mask = _selection_allows(
            la[:, None, None], ma[:, None, None],
            la[None, :, None], ma[None, :, None],
            lc[None, None, :], mc[None, None, :],
        )
        values = np.where(mask, values, 0.0)
        # 第一列的精確值 I(A, B, 00) = δ_AB / √(4π)
        values[:, :, 0] = np.eye(dim_a) / np.sqrt(4 * np.pi)
        values.flags.writeable = False
        self.values = values

    def matrix(self, L: AngularIndex) -> np.ndarray:
        return self.values[:, :, L.index]

    def stacked(self, n_components: int) -> np.ndarray:
        """前 n_components 個 Γ 矩陣，形狀 (n_components, dim, dim)"""
        return np.moveaxis(self.values[:, :, :n_components], 2, 0)


_table_lock = threading.Lock()
_tables = {}


def gaunt_table(l_max: int, l_max_c: int) -> GauntTable:
    """取得快取的 Gaunt 表（同一組 (l_max, l_max_c) 只建一次）"""
    key = (l_max, l_max_c)
    with _table_lock:
        table = _tables.get(key)
        if table is None:
            table = GauntTable(l_max, l_max_c)
            _tables[key] = table
    return table


def gaunt_matrix(L: AngularIndex, trunc: Truncation) -> np.ndarray:
    """Gaunt 矩陣 (Γ^{L''})_{LL'} = I(L, L', L'')，實對稱"""
    if L.l > 2 * trunc.l_max:
        raise DomainError(f"l'' = {L.l} 超過 2·l_max = {2 * trunc.l_max}")
    return np.array(gaunt_table(trunc.l_max, L.l).matrix(L))


def lambda_combination(a, trunc: Truncation) -> np.ndarray:
    """
    Λ[a] = Σ_L a_L Γ^(L)

    以乘積積分直接計算 ∫ Y_A Y_B (Σ a_L Y_L) dΩ，不需要建完整的 Gaunt 表，
    適用於大的 l_max（例如平移矩陣的交叉驗證）。a 可為複數。
    """
    a = np.asarray(a)
    l_max_c = int(np.sqrt(a.size)) - 1
    if (l_max_c + 1) ** 2 != a.size:
        raise DomainError(f"係數向量長度 {a.size} 不是完全平方數")
    if l_max_c > 2 * trunc.l_max:
        a = a[: (2 * trunc.l_max + 1) ** 2]
        l_max_c = 2 * trunc.l_max

    n_theta, n_phi = quadrature_order_for_degree(2 * trunc.l_max + l_max_c)
    dirs, weights, _ = sphere_product_quadrature(n_theta, n_phi)
    y_a = real_sh_matrix(trunc.l_max, dirs)
    field = real_sh_matrix(l_max_c, dirs) @ a
    result = (y_a * (weights * field)[:, None]).T @ y_a
    return 0.5 * (result + result.T)


def polar_split(points, origin=None) -> Tuple[np.ndarray, np.ndarray]:
    """
    以 origin 為原點的 (半徑, 單位方向)

    原點本身的方向取 ẑ（Y_L 在 r = 0 處只有 l = 0 項存活）。
    """
    rel = np.atleast_2d(np.asarray(points, dtype=float))
    if origin is not None:
        rel = rel - np.asarray(origin, dtype=float)
    r = np.linalg.norm(rel, axis=1)
    safe = np.where(r > 0, r, 1.0)
    dirs = np.where(r[:, None] > 0, rel / safe[:, None], np.array([0.0, 0.0, 1.0]))
    return r, dirs / np.linalg.norm(dirs, axis=1)[:, None]
