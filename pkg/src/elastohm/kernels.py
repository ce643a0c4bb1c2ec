"""Isotropic material constants and the Kelvin fundamental solution."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["MaterialConfig", "lame_constants", "kelvin_tensor", "kelvin_gradient", "kelvin_traction"]


def lame_constants(E: float, nu: float) -> tuple[float, float]:
    """Return ``(lambda, mu)`` for Young modulus ``E`` and Poisson ratio ``nu``."""
    if not E > 0:
        raise ValueError("Young modulus must be positive")
    if not 0.0 < nu < 0.5:
        raise ValueError("Poisson ratio must lie in the open interval (0, 1/2)")
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = E / (2.0 * (1.0 + nu))
    return lam, mu


@dataclass(frozen=True)
class MaterialConfig:
    E: float = 1.0
    nu: float = 0.3

    def __post_init__(self):
        lame_constants(self.E, self.nu)

    @property
    def lam(self) -> float:
        return lame_constants(self.E, self.nu)[0]

    @property
    def mu(self) -> float:
        return lame_constants(self.E, self.nu)[1]

    @property
    def kelvin_prefactor(self) -> float:
        """``(1 + nu) / (8 pi E (1 - nu))``."""
        return (1.0 + self.nu) / (8.0 * np.pi * self.E * (1.0 - self.nu))


def kelvin_tensor(x, material: MaterialConfig) -> np.ndarray:
    """Kelvin tensor S(x) for one vector (3,) or a stack (..., 3)."""
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    if np.any(r == 0.0):
        raise ValueError("Kelvin tensor is singular at x = 0")
    c = material.kelvin_prefactor
    a = (3.0 - 4.0 * material.nu) / r
    out = np.einsum("...i,...j->...ij", x, x) / r[..., None, None] ** 3
    out = out + a[..., None, None] * np.eye(3)
    return c * out


def kelvin_gradient(z, material: MaterialConfig) -> np.ndarray:
    """``G[..., i, j, m] = d S_ij / d z_m`` at ``z`` (..., 3)."""
    z = np.asarray(z, dtype=float)
    r = np.linalg.norm(z, axis=-1)[..., None, None, None]
    eye = np.eye(3)
    zi = z[..., :, None, None]
    zj = z[..., None, :, None]
    zm = z[..., None, None, :]
    g = (
        -(3.0 - 4.0 * material.nu) * eye[..., :, :, None] * zm / r**3
        + (eye[:, None, :] * zj + eye[None, :, :] * zi) / r**3
        - 3.0 * zi * zj * zm / r**5
    )
    return material.kelvin_prefactor * g


def kelvin_traction(x, y, n_y, material: MaterialConfig) -> np.ndarray:
    """Traction kernel ``T[..., i, j]``.

    Row ``i`` is the traction vector at ``y`` (normal ``n_y``) of the
    displacement field ``y -> S(x - y) e_i``.  The double-layer potential is
    ``(W g)_i(x) = int T[i, j](x, y) g_j(y) ds_y``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n_y = np.asarray(n_y, dtype=float)
    lam, mu = material.lam, material.mu
    # w_j(y) = S_ij(x - y): grad_y w_j = -dS_ij/dz
    grad = -kelvin_gradient(x - y, material)  # [..., i, j, m] = d w^{(i)}_j / d y_m
    div = np.einsum("...ijj->...i", grad)
    # sigma_jm = lam div delta_jm + mu (d_m w_j + d_j w_m)
    sym_n = np.einsum("...ijm,...m->...ij", grad, n_y) + np.einsum("...imj,...m->...ij", grad, n_y)
    return lam * div[..., None] * n_y[..., None, :] + mu * sym_n
