"""Observation operators at resolution theta.

Two kinds, both satisfying ||u - I(u)||_2^2 <= c0 * theta^2 * ||u||_{H1}^2
with ||u||_{H1}^2 realized as ||u||_2^2 + ||grad u||_2^2:

* ``volume``   -- piecewise-constant cell averages over ceil(L/theta)^d cells
                  (c0 estimated empirically, stored with a safety factor);
* ``spectral`` -- orthogonal projection onto Fourier modes |kappa| <= 1/theta
                  (c0 = 1 exactly, by Parseval).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .fields import Grid, VelocityField, random_divfree_field

VOLUME_C0_SAFETY = 1.5


@dataclass
class InterpolantSpec:
    kind: str  # "volume" | "spectral"
    theta: float
    c0: float | None = None
    cells_per_axis: int = field(default=0)

    def __post_init__(self):
        if self.kind not in ("volume", "spectral"):
            raise ConfigurationError(f"interpolant kind must be volume|spectral, got {self.kind!r}")
        if self.theta <= 0:
            raise ConfigurationError("theta must be positive")
        if self.kind == "spectral" and self.c0 is None:
            self.c0 = 1.0
        if self.c0 is not None and self.c0 <= 0:
            raise ConfigurationError("c0 must be positive")

    def resolved_cells(self, grid: Grid) -> int:
        cells = int(np.ceil(grid.side_length / self.theta))
        if grid.n % cells != 0:
            raise ConfigurationError(
                f"grid n={grid.n} not divisible by {cells} observation cells "
                f"(theta={self.theta:g})"
            )
        return cells

    def spectral_mask(self, grid: Grid) -> np.ndarray:
        """Low-mode retention mask |kappa| <= 1/theta."""
        return grid.k2 <= (1.0 / self.theta) ** 2

    def require_c0(self) -> float:
        if self.c0 is None:
            raise ConfigurationError(
                "volume interpolant has no c0; run estimate_c0 first")
        return self.c0


def apply_volume_interpolant(spec: InterpolantSpec, u: VelocityField) -> VelocityField:
    """Piecewise-constant cell averages. Output is generally not solenoidal;
    the nudging term projects it at the point of use."""
    if spec.kind != "volume":
        raise ConfigurationError("spec.kind must be 'volume'")
    grid = u.grid
    cells = spec.resolved_cells(grid)
    per = grid.n // cells
    comp = u.components
    shape = (grid.dim,) + sum(((cells, per),) * grid.dim, ())
    work = comp.reshape(shape)
    mean_axes = tuple(range(2, 2 * grid.dim + 1, 2))
    means = work.mean(axis=mean_axes, keepdims=True)
    out = np.broadcast_to(means, shape).reshape(comp.shape).copy()
    return VelocityField(grid, out)


def apply_spectral_interpolant(spec: InterpolantSpec, u: VelocityField) -> VelocityField:
    """Sharp low-pass at |kappa| <= 1/theta; idempotent, solenoidal-preserving."""
    if spec.kind != "spectral":
        raise ConfigurationError("spec.kind must be 'spectral'")
    return VelocityField.from_spectral(u.grid, u.spectral * spec.spectral_mask(u.grid))


def apply_interpolant(spec: InterpolantSpec, u: VelocityField) -> VelocityField:
    if spec.kind == "volume":
        return apply_volume_interpolant(spec, u)
    return apply_spectral_interpolant(spec, u)


def interpolant_defect_ratio(spec: InterpolantSpec, u: VelocityField) -> float:
    """||u - I(u)||_2^2 / (theta^2 (||u||_2^2 + ||u||_V^2))."""
    iu = apply_interpolant(spec, u)
    diff = VelocityField(u.grid, u.components - iu.components)
    h1 = u.l2_sq() + u.v_sq()
    if h1 == 0:
        return 0.0
    return diff.l2_sq() / (spec.theta**2 * h1)


def estimate_c0(spec: InterpolantSpec, n_trials: int, seed,
                grid: Grid | None = None, slope: float = -4.0) -> float:
    """Worst-case defect ratio over random smooth fields; stores spec.c0.

    The volume estimate carries a 1.5x safety factor; the spectral kind is
    exactly 1 (Parseval), and the sweep only confirms it.
    """
    if n_trials < 100:
        raise ConfigurationError("n_trials must be >= 100")
    if grid is None:
        raise ConfigurationError("estimate_c0 needs the observation grid")
    worst = 0.0
    base = np.random.default_rng([int(seed), 0x1C0]).integers(0, 2**63 - 1, size=n_trials)
    for trial_seed in base:
        u = random_divfree_field(grid, slope, int(trial_seed))
        worst = max(worst, interpolant_defect_ratio(spec, u))
    spec.c0 = worst * VOLUME_C0_SAFETY if spec.kind == "volume" else 1.0
    return worst
