"""
球面數值積分工具
Gauss-Legendre (cosθ) × 均勻 φ 的乘積積分法，可繞任意軸旋轉。
"""

from typing import Optional, Tuple

import numpy as np


def gauss_legendre(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """[-1, 1] 上的 n 點 Gauss-Legendre 節點與權重"""
    return np.polynomial.legendre.leggauss(n)


def frame_from_axis(axis: Optional[np.ndarray] = None) -> np.ndarray:
    """
    以 axis 為 z 軸建立右手正交座標系

    Returns:
        3×3 陣列，列向量依序為 e1, e2, e3
    """
    if axis is None:
        return np.eye(3)
    e3 = np.asarray(axis, dtype=float)
    e3 = e3 / np.linalg.norm(e3)
    ref = np.array([1.0, 0.0, 0.0]) if abs(e3[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = ref - np.dot(ref, e3) * e3
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(e3, e1)
    return np.vstack([e1, e2, e3])


def sphere_product_quadrature(
    n_theta: int,
    n_phi: Optional[int] = None,
    axis: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    單位球面乘積積分法

    對 cosθ 為 n_theta 次 Gauss-Legendre、φ 為 n_phi 點均勻分布；
    次數 ≤ 2·n_theta − 1 (cosθ) 且 ≤ n_phi − 1 (φ) 的球諧乘積可精確積分。

    Args:
        n_theta: cosθ 節點數
        n_phi: φ 節點數（預設 2·n_theta）
        axis: 旋轉後的極軸方向（預設 z）

    Returns:
        (dirs, weights, cos_theta)：dirs 為 (n_theta·n_phi, 3)，θ 為外層索引；
        cos_theta 為每個 θ 環的 cosθ（長度 n_theta）
    """
    if n_phi is None:
        n_phi = 2 * n_theta
    x, w = gauss_legendre(n_theta)
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    sin_t = np.sqrt(np.clip(1.0 - x * x, 0.0, None))

    local = np.empty((n_theta, n_phi, 3))
    local[..., 0] = sin_t[:, None] * np.cos(phi)[None, :]
    local[..., 1] = sin_t[:, None] * np.sin(phi)[None, :]
    local[..., 2] = x[:, None]
    frame = frame_from_axis(axis)
    dirs = local.reshape(-1, 3) @ frame

    weights = np.repeat(w * (2.0 * np.pi / n_phi), n_phi)
    return dirs, weights, x


def quadrature_order_for_degree(degree: int) -> Tuple[int, int]:
    """精確積分總次數 degree 的多項式所需的 (n_theta, n_phi)"""
    return degree // 2 + 1, degree + 1
