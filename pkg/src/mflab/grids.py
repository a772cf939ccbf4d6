"""Periodic and truncated-line grids and densities for the PDE solvers.

Line-geometry runs use a periodic computational box [-x_max, x_max) sized so
that all handled densities carry tail mass below 1e-12 at the boundary; the
spectral machinery is then shared between both geometries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Geometry, Line, ModelSpec, Torus

MASS_TOL = 1e-10
NEG_TOL = 1e-10


@dataclass(frozen=True)
class GridSpec:
    geometry: Geometry
    G: int
    G_v: int | None = None          # velocity points, kinetic runs only
    v_max: float | None = None      # velocity cutoff, kinetic runs only
    dt_pde: float = 2e-3
    x_max: float = 8.0              # half box width, line geometry only

    def __post_init__(self):
        if self.G < 4 or self.G & (self.G - 1):
            raise ValueError("G must be a power of two >= 4 (spectral transforms)")
        if self.dt_pde <= 0:
            raise ValueError("dt_pde must be positive")
        if self.G_v is not None and (self.v_max is None or self.v_max <= 0):
            raise ValueError("kinetic grids need a positive v_max")

    @property
    def length(self) -> float:
        if isinstance(self.geometry, Torus):
            return self.geometry.period
        return 2.0 * self.x_max

    @property
    def dx(self) -> float:
        return self.length / self.G

    def x(self) -> np.ndarray:
        if isinstance(self.geometry, Torus):
            return np.arange(self.G) * self.dx
        return -self.x_max + np.arange(self.G) * self.dx

    def wavenumbers(self) -> np.ndarray:
        return 2.0 * np.pi * np.fft.fftfreq(self.G, d=self.dx)

    def v(self) -> np.ndarray:
        if self.G_v is None:
            raise ValueError("not a kinetic grid")
        return np.linspace(-self.v_max, self.v_max, self.G_v)

    @property
    def dv(self) -> float:
        vv = self.v()
        return float(vv[1] - vv[0])

    def check_kinetic(self, model: ModelSpec):
        if self.G_v is None:
            raise ValueError("Langevin runs need a velocity grid")
        if self.v_max < 6.0 / np.sqrt(model.beta):
            raise ValueError("v_max below 6/sqrt(beta)")


class GridDensity:
    """Density (or zero-mass signed perturbation) sampled on a grid."""

    def __init__(self, values: np.ndarray, grid: GridSpec, signed: bool = False):
        values = np.asarray(values, dtype=float)
        expected = (grid.G,) if grid.G_v is None else (grid.G, grid.G_v)
        if values.shape != expected:
            raise ValueError(f"values shape {values.shape}, expected {expected}")
        if not np.all(np.isfinite(values)):
            raise ValueError("non-finite density values")
        weight = grid.dx if grid.G_v is None else grid.dx * grid.dv
        mass = float(values.sum() * weight)
        if signed:
            if abs(mass) > MASS_TOL:
                raise ValueError(f"signed perturbation has mass {mass:.2e}")
        else:
            if values.min() < -NEG_TOL:
                raise ValueError(f"density has negative part {values.min():.2e}")
            if abs(mass - 1.0) > MASS_TOL:
                raise ValueError(f"density mass {mass:.6e} != 1")
        self.values = values
        self.grid = grid
        self.signed = signed

    @property
    def mass(self) -> float:
        weight = self.grid.dx if self.grid.G_v is None else self.grid.dx * self.grid.dv
        return float(self.values.sum() * weight)

    def spatial_marginal(self) -> np.ndarray:
        if self.grid.G_v is None:
            return self.values.copy()
        return self.values.sum(axis=1) * self.grid.dv

    def integrate(self, phi: np.ndarray) -> float:
        """Integral of a grid-sampled test function against the density."""
        weight = self.grid.dx if self.grid.G_v is None else self.grid.dx * self.grid.dv
        return float(np.sum(phi * self.values) * weight)

    def grad_w_conv(self, potential, x: np.ndarray) -> np.ndarray:
        """(grad W * mu)(x) for the spatial marginal, by direct quadrature."""
        rho = self.spatial_marginal()
        xs = self.grid.x()
        period = self.grid.length if isinstance(self.grid.geometry, Torus) else None
        diffs = np.subtract.outer(np.atleast_1d(np.asarray(x, dtype=float)), xs)
        vals = potential.grad_w(diffs, period) @ rho * self.grid.dx
        return vals if np.ndim(x) else float(vals[0])


def mollified_dirac(grid: GridSpec, y: float, width_cells: float = 3.0) -> np.ndarray:
    """Grid realization of a point mass: wrapped Gaussian on the torus, a
    normalized hat on the line.  Nonnegative; values sum to 1/dx.

    The Gaussian choice keeps the mollification error cleanly second order
    in the width, which the mollifier-stability error bars rely on.
    """
    x = grid.x()
    if isinstance(grid.geometry, Torus):
        L = grid.length
        sd = 0.5 * width_cells * grid.dx
        vals = np.zeros(grid.G)
        for k in (-1, 0, 1):
            vals += np.exp(-(x - y + k * L) ** 2 / (2.0 * sd ** 2))
    else:
        h = width_cells * grid.dx
        vals = np.maximum(0.0, 1.0 - np.abs(x - y) / h)
    return vals / (vals.sum() * grid.dx)


def deposit_empirical(positions: np.ndarray, grid: GridSpec,
                      width_cells: int = 3) -> GridDensity:
    """Mollified deposit of a particle cloud onto the grid (mean of the
    per-particle mollifiers), for pushing empirical measures through PDEs."""
    positions = np.atleast_1d(np.asarray(positions, dtype=float))
    vals = np.zeros(grid.G)
    for y in positions:
        vals += mollified_dirac(grid, y, width_cells)
    return GridDensity(vals / len(positions), grid)


def spectral_neg_sobolev(values: np.ndarray, grid: GridSpec, k: int) -> float:
    """Torus norm ||f||_{H^-k}: sum over modes of |f_hat|^2 (1+|n|^2)^-k.

    Modes are indexed by the integer frequency n relative to the box length.
    """
    fhat = np.fft.fft(values) * grid.dx  # continuum-normalized coefficients
    n = np.fft.fftfreq(grid.G, d=1.0 / grid.G)  # integer mode index
    weight = (1.0 + np.abs(n) ** 2) ** (-k)
    return float(np.sqrt(np.sum(np.abs(fhat) ** 2 * weight) / grid.length))


def hermite_dictionary(grid: GridSpec, size: int = 16) -> list[np.ndarray]:
    """Normalized Hermite-type test functions for line-geometry decay norms."""
    x = grid.x()
    out = []
    herm = [np.ones_like(x), x.copy()]
    for n in range(2, size):
        herm.append(x * herm[-1] - (n - 1) * herm[-2])
    gauss = np.exp(-x ** 2 / 4.0)
    for n in range(size):
        f = herm[n] * gauss
        out.append(f / np.sqrt(np.sum(f ** 2) * grid.dx))
    return out
