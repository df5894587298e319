"""PDE families, random Fourier initial conditions and the reference solver.

The solver uses the method of lines on a periodic grid with Strang splitting
per substep: a Crank-Nicolson half step for diffusion (solved exactly in
Fourier space, since the periodic second-difference matrix is circulant), an
SSP-RK3 step for advection and reaction, and a second diffusion half step.
Advective fluxes are Rusanov fluxes on third-order upwind-biased
reconstructions, which reduces to plain upwinding of the reconstructed state
for linear convection.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

FAMILIES = (
    "convection", "diffusion", "reaction",
    "conv_diff", "react_diff", "neutron_diff", "burgers", "adv_react",
)
ELEMENTARY = ("convection", "diffusion", "reaction")
COUPLED = ("conv_diff", "react_diff", "neutron_diff", "burgers", "adv_react")

_ADVECTIVE = {"convection", "conv_diff", "adv_react"}
_DIFFUSIVE = {"diffusion", "conv_diff", "react_diff", "burgers", "neutron_diff"}
_LOGISTIC = {"reaction", "react_diff", "adv_react"}
# families whose initial conditions live in (0, 1)
_POSITIVE_IC = _LOGISTIC | {"neutron_diff"}


class SolverInstabilityError(FloatingPointError):
    """The reference solution blew up."""


@dataclass(frozen=True)
class GridSpec:
    m: int = 256
    length: float = 1.0
    dt: float = 0.005
    steps: int = 100

    def __post_init__(self):
        if self.m < 8:
            raise ValueError("grid needs at least 8 points")
        if self.dt <= 0 or self.steps < 1 or self.length <= 0:
            raise ValueError("dt, steps and length must be positive")

    @property
    def dx(self) -> float:
        return self.length / self.m

    @property
    def final_time(self) -> float:
        return self.steps * self.dt

    def points(self) -> np.ndarray:
        return np.arange(self.m) * self.dx


@dataclass(frozen=True)
class PdeFamily:
    tag: str
    c: float = 1.0
    nu: float = 0.01
    k_r: float = 1.0
    D: float = 1.0
    sigma_a: float = 0.1
    nu_sigma_f: float = 0.12

    def __post_init__(self):
        if self.tag not in FAMILIES:
            raise ValueError(f"unknown PDE family {self.tag!r}; valid: {', '.join(FAMILIES)}")
        if self.nu < 0 or self.D <= 0 or self.k_r < 0 or self.sigma_a < 0 or self.nu_sigma_f < 0:
            raise ValueError("PDE coefficients out of physical range")

    @property
    def positive_ic(self) -> bool:
        return self.tag in _POSITIVE_IC

    @property
    def diffusivity(self) -> float:
        if self.tag == "neutron_diff":
            return self.D
        return self.nu if self.tag in _DIFFUSIVE else 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def fourier_ic(a: np.ndarray, b: np.ndarray, grid: GridSpec, positive: bool) -> np.ndarray:
    """Evaluate ``sum_n a_n sin(2 pi n x) + b_n cos(2 pi n x)`` and rescale.

    Non-positive families are scaled to max-abs 1; positive families are mapped
    affinely onto [0.05, 0.95].  An all-zero series maps to 0 (resp. 0.5).
    """
    x = grid.points() / grid.length
    n = np.arange(1, len(a) + 1)[:, None]
    u = (np.asarray(a, float)[:, None] * np.sin(2 * np.pi * n * x)
         + np.asarray(b, float)[:, None] * np.cos(2 * np.pi * n * x)).sum(axis=0)
    if positive:
        lo, hi = u.min(), u.max()
        if hi - lo <= 1e-12 * max(1.0, abs(hi)):
            return np.full(grid.m, 0.5)
        return 0.05 + 0.9 * (u - lo) / (hi - lo)
    peak = np.abs(u).max()
    if peak <= 1e-12:
        return np.zeros(grid.m)
    return u / peak


def sample_fourier_ic(rng: np.random.Generator, grid: GridSpec, family: PdeFamily,
                      return_modes: bool = False):
    """Random Fourier initial condition with 3-7 modes, amplitudes N(0, 1/n)."""
    n_modes = int(rng.integers(3, 8))
    scale = 1.0 / np.arange(1, n_modes + 1)
    a = rng.normal(size=n_modes) * scale
    b = rng.normal(size=n_modes) * scale
    u0 = fourier_ic(a, b, grid, family.positive_ic)
    return (u0, n_modes) if return_modes else u0


# -- spatial operators -------------------------------------------------------------

def _reconstruct(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Third-order upwind-biased left/right states at interfaces i+1/2."""
    um1 = np.roll(u, 1, axis=-1)
    up1 = np.roll(u, -1, axis=-1)
    up2 = np.roll(u, -2, axis=-1)
    left = (-um1 + 5.0 * u + 2.0 * up1) / 6.0
    right = (2.0 * u + 5.0 * up1 - up2) / 6.0
    return left, right


def _advection_rhs(u: np.ndarray, family: PdeFamily, dx: float) -> np.ndarray:
    left, right = _reconstruct(u)
    if family.tag == "burgers":
        fl, fr = 0.5 * left * left, 0.5 * right * right
        speed = np.maximum(np.abs(left), np.abs(right))
    else:
        fl, fr = family.c * left, family.c * right
        speed = abs(family.c)
    flux = 0.5 * (fl + fr) - 0.5 * speed * (right - left)
    return -(flux - np.roll(flux, 1, axis=-1)) / dx


def _reaction_rhs(u: np.ndarray, family: PdeFamily) -> np.ndarray:
    if family.tag in _LOGISTIC:
        return family.k_r * u * (1.0 - u)
    if family.tag == "neutron_diff":
        return (family.nu_sigma_f - family.sigma_a) * u
    return np.zeros_like(u)


def _explicit_rhs(u: np.ndarray, family: PdeFamily, dx: float) -> np.ndarray:
    rhs = _reaction_rhs(u, family)
    if family.tag in _ADVECTIVE or family.tag == "burgers":
        rhs = rhs + _advection_rhs(u, family, dx)
    return rhs


def _ssp_rk3(u: np.ndarray, family: PdeFamily, dx: float, dt: float) -> np.ndarray:
    u1 = u + dt * _explicit_rhs(u, family, dx)
    u2 = 0.75 * u + 0.25 * (u1 + dt * _explicit_rhs(u1, family, dx))
    return u / 3.0 + 2.0 / 3.0 * (u2 + dt * _explicit_rhs(u2, family, dx))


def _cn_factor(m: int, diffusivity: float, dx: float, dt: float) -> np.ndarray:
    """Crank-Nicolson amplification per rfft mode for the periodic 3-point Laplacian."""
    k = np.arange(m // 2 + 1)
    lam = 4.0 * np.sin(np.pi * k / m) ** 2 / (dx * dx)
    half = 0.5 * diffusivity * dt * lam
    return (1.0 - half) / (1.0 + half)


def substep_count(family: PdeFamily, grid: GridSpec, u0: np.ndarray, cfl: float = 0.9,
                  max_rate_dt: float = 0.1) -> int:
    """Substeps per macro step so the advective CFL number and reaction rate stay bounded.

    Diffusion is implicit, so it adds no constraint.
    """
    speed = 0.0
    if family.tag in _ADVECTIVE:
        speed = abs(family.c)
    elif family.tag == "burgers":
        speed = float(np.max(np.abs(u0)))
    n = 1
    if speed > 0:
        n = max(n, math.ceil(speed * grid.dt / (cfl * grid.dx) - 1e-12))
    rate = 0.0
    if family.tag in _LOGISTIC:
        rate = family.k_r
    elif family.tag == "neutron_diff":
        rate = abs(family.nu_sigma_f - family.sigma_a)
    if rate > 0:
        n = max(n, math.ceil(rate * grid.dt / max_rate_dt - 1e-12))
    return n


def solve_pde(family: PdeFamily, u0: np.ndarray, grid: GridSpec = GridSpec(),
              refine: int = 1, growth_limit: float = 1e3) -> np.ndarray:
    """Reference solution ``u(., T)`` for one or a batch (``[n, m]``) of initial conditions.

    ``refine`` multiplies the number of substeps (used for convergence checks).
    """
    u = np.array(u0, dtype=np.float64)
    if u.shape[-1] != grid.m:
        raise ValueError(f"initial condition has {u.shape[-1]} points, grid has {grid.m}")
    if family.tag in _LOGISTIC and (np.any(u <= 0.0) or np.any(u >= 1.0)):
        raise ValueError(f"{family.tag} requires initial values strictly inside (0, 1)")
    nsub = substep_count(family, grid, u) * max(1, int(refine))
    dt = grid.dt / nsub
    dx = grid.dx
    diffusive = family.diffusivity > 0
    explicit = family.tag in _ADVECTIVE or family.tag in _LOGISTIC or family.tag in (
        "burgers", "neutron_diff")
    half_cn = _cn_factor(grid.m, family.diffusivity, dx, 0.5 * dt) if diffusive else None
    full_cn = _cn_factor(grid.m, family.diffusivity, dx, dt) if diffusive else None
    limit = growth_limit * max(float(np.max(np.abs(u))), 1e-12)

    def diffuse(v, factor):
        return np.fft.irfft(np.fft.rfft(v, axis=-1) * factor, n=grid.m, axis=-1)

    for step in range(grid.steps):
        for _ in range(nsub):
            if diffusive and not explicit:
                u = diffuse(u, full_cn)
                continue
            if diffusive:
                u = diffuse(u, half_cn)
            u = _ssp_rk3(u, family, dx, dt)
            if diffusive:
                u = diffuse(u, half_cn)
        peak = float(np.max(np.abs(u)))
        if not np.isfinite(peak) or peak > limit:
            raise SolverInstabilityError(
                f"{family.tag}: max |u| = {peak:.3g} exceeds {growth_limit:g}x the initial "
                f"maximum at macro step {step + 1} (substeps {nsub}, dt_sub {dt:.3g})")
    return u
