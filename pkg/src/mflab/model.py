"""Physical model: geometry, potentials, parameters, drift, Gibbs steady state.

The desk build is one-dimensional; higher dimensions are rejected at
construction.  All types are immutable after construction and safe to share
across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Torus",
    "Line",
    "Geometry",
    "PotentialSpec",
    "cosine_potential",
    "gaussian_bump_potential",
    "tabulated_potential",
    "ModelSpec",
    "EmpiricalMeasure",
    "drift",
    "gibbs_steady_state",
    "GibbsConvergenceError",
]


@dataclass(frozen=True)
class Torus:
    period: float = 2.0 * np.pi

    def __post_init__(self):
        if self.period <= 0:
            raise ValueError("torus period must be positive")


@dataclass(frozen=True)
class Line:
    pass


Geometry = Torus | Line


def _wrap(x, period):
    if period is None:
        return x
    return (x + period / 2.0) % period - period / 2.0


@dataclass(frozen=True)
class PotentialSpec:
    """Even interaction potential with closed-form gradient.

    family: "cosine_sum" | "gaussian_bump" | "tabulated"
    params: family coefficients; see the constructors below.
    """

    family: str
    params: tuple[float, ...]
    period: float | None = None         # tabulated/cosine potentials on a torus
    _spline: object = field(default=None, repr=False, compare=False)

    def w(self, x, period: float | None = None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.family == "cosine_sum":
            L = period if period is not None else (self.period or 2.0 * np.pi)
            out = np.zeros_like(x)
            for n, wn in enumerate(self.params, start=1):
                out += wn * np.cos(2.0 * np.pi * n * x / L)
            return out
        if self.family == "gaussian_bump":
            amp, width = self.params
            if period is None:
                return amp * np.exp(-x ** 2 / (2.0 * width ** 2))
            n_img = int(np.ceil(8.0 * width / period)) + 1
            out = np.zeros_like(x)
            xm = _wrap(x, period)
            for k in range(-n_img, n_img + 1):
                out += amp * np.exp(-(xm + k * period) ** 2 / (2.0 * width ** 2))
            return out
        if self.family == "tabulated":
            return self._spline(_wrap(x, self.period) if self.period else x)
        raise ValueError(f"unknown potential family {self.family!r}")

    def grad_w(self, x, period: float | None = None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.family == "cosine_sum":
            L = period if period is not None else (self.period or 2.0 * np.pi)
            out = np.zeros_like(x)
            for n, wn in enumerate(self.params, start=1):
                kn = 2.0 * np.pi * n / L
                out -= wn * kn * np.sin(kn * x)
            return out
        if self.family == "gaussian_bump":
            amp, width = self.params
            if period is None:
                return -amp * x / width ** 2 * np.exp(-x ** 2 / (2.0 * width ** 2))
            n_img = int(np.ceil(8.0 * width / period)) + 1
            out = np.zeros_like(x)
            xm = _wrap(x, period)
            for k in range(-n_img, n_img + 1):
                xi = xm + k * period
                out += -amp * xi / width ** 2 * np.exp(-xi ** 2 / (2.0 * width ** 2))
            return out
        if self.family == "tabulated":
            return self._spline(_wrap(x, self.period) if self.period else x, 1)
        raise ValueError(f"unknown potential family {self.family!r}")

    def fourier_coefficient(self, n: int, period: float) -> float:
        """Exponential-basis coefficient W_hat(n) on a torus of the given period."""
        if self.family == "cosine_sum":
            if n == 0:
                return 0.0
            idx = abs(n)
            return self.params[idx - 1] / 2.0 if idx <= len(self.params) else 0.0
        # quadrature for the other families
        G = 4096
        x = np.arange(G) * period / G
        vals = self.w(x, period)
        return float(np.real(np.sum(vals * np.exp(-2j * np.pi * n * x / period))) / G)

    def sup_norm(self, period: float | None = None) -> float:
        if self.family == "cosine_sum":
            return float(np.sum(np.abs(self.params)))
        G = 4096
        if period is not None:
            x = np.arange(G) * period / G
        else:
            amp, width = self.params[:2]
            x = np.linspace(-10 * width, 10 * width, G)
        return float(np.max(np.abs(self.w(x, period))))

    def is_h_stable(self, period: float, modes: int = 32) -> bool:
        """Nonnegative Fourier coefficients on the torus."""
        return all(self.fourier_coefficient(n, period) >= -1e-12
                   for n in range(modes + 1))


def cosine_potential(*coefficients: float, period: float = 2.0 * np.pi) -> PotentialSpec:
    """W(x) = sum_n w_n cos(2 pi n x / period), n = 1..len(coefficients)."""
    return PotentialSpec("cosine_sum", tuple(coefficients), period=period)


def gaussian_bump_potential(amplitude: float, width: float) -> PotentialSpec:
    return PotentialSpec("gaussian_bump", (amplitude, width))


def tabulated_potential(values, period: float | None = None) -> PotentialSpec:
    """Cubic-spline interpolated potential from samples over one period
    (torus, uniform grid on [0, period)) or a symmetric interval (line)."""
    from scipy.interpolate import CubicSpline

    values = np.asarray(values, dtype=float)
    if period is not None:
        x = np.arange(len(values)) * period / len(values)
        x = np.append(x, period)
        vals = np.append(values, values[0])
        if not np.allclose(vals, vals[::-1], atol=1e-10):
            raise ValueError("tabulated potential is not even")
        spline = CubicSpline(x, vals, bc_type="periodic")
    else:
        if not np.allclose(values, values[::-1], atol=1e-10):
            raise ValueError("tabulated potential is not even")
        half = (len(values) - 1) / 2.0
        x = (np.arange(len(values)) - half)
        spline = CubicSpline(x, values, bc_type="natural")
    spec = PotentialSpec("tabulated", tuple(values), period=period)
    object.__setattr__(spec, "_spline", spline)
    return spec


@dataclass(frozen=True)
class ModelSpec:
    """Dynamics kind, geometry, potentials and physical parameters.

    For Langevin runs `beta` is the friction / inverse temperature; the
    overdamped SDE has unit noise and `beta` only enters the Gibbs weight,
    where the matching value is 2 (the default used when none is given).
    """

    dynamics: str                       # "langevin" | "overdamped"
    geometry: Geometry
    kappa: float
    interaction: PotentialSpec
    a: float = 0.0
    beta: float | None = None
    dim: int = 1

    def __post_init__(self):
        if self.dynamics not in ("langevin", "overdamped"):
            raise ValueError(f"unknown dynamics {self.dynamics!r}")
        if self.dim != 1:
            raise ValueError("desk build is one-dimensional")
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")
        if isinstance(self.geometry, Line):
            if self.a <= 0:
                raise ValueError("line geometry needs confinement a > 0")
        else:
            if self.a != 0:
                raise ValueError("quadratic confinement is not periodic; use a = 0 "
                                 "on the torus")
        if self.dynamics == "langevin":
            if self.beta is None or self.beta <= 0:
                raise ValueError("langevin dynamics needs beta > 0")
        elif self.beta is None:
            object.__setattr__(self, "beta", 2.0)
        elif self.beta <= 0:
            raise ValueError("beta must be positive")
        # evaluator consistency: even potential, gradient matches W pointwise
        period = self.period
        probe = np.linspace(0.1, (period or 8.0) / 2.0 * 0.9, 7)
        if not np.allclose(self.interaction.w(probe, period),
                           self.interaction.w(-probe, period), atol=1e-8):
            raise ValueError("interaction potential is not even")

    @property
    def period(self) -> float | None:
        return self.geometry.period if isinstance(self.geometry, Torus) else None

    @property
    def is_kinetic(self) -> bool:
        return self.dynamics == "langevin"

    def grad_confinement(self, x):
        return self.a * np.asarray(x, dtype=float)

    def gibbs_beta(self) -> float:
        return float(self.beta)

    def check_gibbs_guard(self):
        sup_w = self.interaction.sup_norm(self.period)
        if self.kappa * self.gibbs_beta() * sup_w >= 1.0:
            raise ValueError(
                f"Gibbs uniqueness guard violated: kappa*beta*sup|W| = "
                f"{self.kappa * self.gibbs_beta() * sup_w:.3f} >= 1")


class EmpiricalMeasure:
    """Point cloud supporting the convolution query (grad W * mu)(x).

    For cosine potentials the query is evaluated through per-mode trig sums,
    sin(n(x-y)) = sin(nx)cos(ny) - cos(nx)sin(ny), so a full pairwise force
    costs O(N * modes) instead of O(N^2).
    """

    def __init__(self, positions: np.ndarray, period: float | None = None):
        self.positions = np.atleast_1d(np.asarray(positions, dtype=float))
        self.period = period

    def grad_w_conv(self, potential: PotentialSpec, x) -> np.ndarray:
        x_arr = np.atleast_1d(np.asarray(x, dtype=float))
        if potential.family == "cosine_sum":
            L = self.period if self.period is not None else (potential.period
                                                             or 2.0 * np.pi)
            out = np.zeros_like(x_arr)
            inv_n = 1.0 / len(self.positions)
            for n, wn in enumerate(potential.params, start=1):
                if wn == 0.0:
                    continue
                kn = 2.0 * np.pi * n / L
                c = np.cos(kn * self.positions).mean()
                s = np.sin(kn * self.positions).mean()
                out -= wn * kn * (np.sin(kn * x_arr) * c - np.cos(kn * x_arr) * s)
            result = out
        else:
            diffs = np.subtract.outer(x_arr, self.positions)
            result = potential.grad_w(diffs, self.period).mean(axis=1)
        return result if np.ndim(x) else float(result[0])


def drift(z, mu, spec: ModelSpec):
    """Drift field b(z, mu) of the coupled dynamics.

    Overdamped: b(x) = -grad A(x) - kappa (grad W * mu)(x).
    Langevin: b(x, v) = (v, -(beta/2) v - grad A(x) - kappa (grad W * mu)(x)).
    `mu` must support grad_w_conv(potential, x).
    """
    if spec.is_kinetic:
        if not (isinstance(z, tuple) and len(z) == 2):
            raise ValueError("langevin drift needs a phase point z = (x, v)")
        x, v = (np.asarray(c, dtype=float) for c in z)
        if x.shape != v.shape:
            raise ValueError("position/velocity shape mismatch")
        force = -spec.grad_confinement(x)
        if spec.kappa:
            force = force - spec.kappa * mu.grad_w_conv(spec.interaction, x)
        return (v, -0.5 * spec.beta * v + force)
    if isinstance(z, tuple):
        raise ValueError("overdamped drift takes a position, not a phase point")
    x = np.asarray(z, dtype=float)
    force = -spec.grad_confinement(x)
    if spec.kappa:
        force = force - spec.kappa * mu.grad_w_conv(spec.interaction, x)
    return force


class GibbsConvergenceError(RuntimeError):
    def __init__(self, residual: float, iterations: int):
        super().__init__(f"Gibbs fixed point not converged after {iterations} "
                         f"iterations, residual {residual:.3e}")
        self.residual = residual
        self.iterations = iterations


def gibbs_steady_state(spec: ModelSpec, grid, tol: float = 1e-10,
                       max_iter: int = 20000, damping: float = 0.5):
    """Self-consistent Gibbs state by damped fixed-point iteration.

    The spatial factor solves rho = c exp(-beta (A + kappa W * rho)); for
    Langevin the Maxwellian velocity factor c_v exp(-beta v^2/2) is attached.
    Requires the contraction guard kappa*beta*sup|W| < 1.
    """
    from .grids import GridDensity, GridSpec

    assert isinstance(grid, GridSpec)
    spec.check_gibbs_guard()
    beta = spec.gibbs_beta()
    x = grid.x()
    dx = grid.dx
    period = spec.period
    a_pot = 0.5 * spec.a * x ** 2

    # precomputed kernel matrix W(x_i - x_j) for the convolution on the grid
    kernel = spec.interaction.w(np.subtract.outer(x, x), period)

    rho = np.exp(-beta * a_pot)
    rho /= rho.sum() * dx

    def gibbs_map(r):
        energy = a_pot + spec.kappa * (kernel @ r) * dx
        out = np.exp(-beta * (energy - energy.min()))
        return out / (out.sum() * dx)

    residual = np.inf
    for it in range(max_iter):
        target = gibbs_map(rho)
        residual = float(np.max(np.abs(rho - target)))
        if residual <= tol:
            break
        rho = (1.0 - damping) * rho + damping * target
    else:
        raise GibbsConvergenceError(residual, max_iter)

    if spec.is_kinetic:
        grid.check_kinetic(spec)
        v = grid.v()
        maxwell = np.exp(-beta * v ** 2 / 2.0)
        maxwell /= maxwell.sum() * grid.dv
        values = np.outer(rho, maxwell)
    else:
        values = rho
    return GridDensity(values, grid)
