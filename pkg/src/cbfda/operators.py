"""Deterministic drift operators: Stokes, convection, nonlinear damping, forcing.

Convection is evaluated in the skew-symmetrized form

    B(u) = 1/2 * P [ (u . grad) u  +  div(u x u) ],

so the discrete trilinear form satisfies b(u, v, v) = 0 and
b(u, v, w) = -b(u, w, v) to rounding, not just in the continuum limit. The
error estimates the harness verifies rely on that exact energy neutrality.
Nonlinear products are dealiased with the grid's mask; the damping kernel
|u|^(varpi-1) u is evaluated pointwise in physical space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .fields import (
    Grid,
    NormBundle,
    VelocityField,
    dealias_hat,
    inner_hat,
    l2_sq_hat,
    leray_hat,
    lp_norm_pow,
    to_physical,
    to_spectral,
)

# -- regime classification (admissibility of the parameter set) ----------


@dataclass(frozen=True)
class RegimeReport:
    dim: int
    varpi: float
    regime: str  # subcritical | critical | supercritical
    table_case: str | None  # I | II | III
    admissible: bool
    two_mu_beta: float
    message: str


def classify_regime(dim: int, varpi: float, mu: float, beta: float) -> RegimeReport:
    """Check the (dim, varpi) admissibility table for strong solvability.

    Case I: d=2, 1 <= varpi; Case II: d=3, varpi > 3;
    Case III: d=3, varpi = 3 with 2*mu*beta >= 1.
    """
    if varpi < 3:
        regime = "subcritical"
    elif varpi == 3:
        regime = "critical"
    else:
        regime = "supercritical"
    tmb = 2.0 * mu * beta

    if dim == 2 and varpi >= 1:
        return RegimeReport(dim, varpi, regime, "I", True, tmb, "d=2, varpi >= 1: admissible (case I)")
    if dim == 3 and varpi > 3:
        return RegimeReport(dim, varpi, regime, "II", True, tmb, "d=3, varpi > 3: admissible (case II)")
    if dim == 3 and varpi == 3:
        if tmb >= 1.0:
            return RegimeReport(dim, varpi, regime, "III", True, tmb,
                                f"d=3, varpi = 3 with 2*mu*beta = {tmb:g} >= 1: admissible (case III)")
        return RegimeReport(dim, varpi, regime, "III", False, tmb,
                            f"admissibility table case III (d=3, varpi=3) requires "
                            f"2*mu*beta >= 1; got {tmb:g}")
    return RegimeReport(dim, varpi, regime, None, False, tmb,
                        f"d={dim}, varpi={varpi:g} matches no admissibility-table case "
                        "(I: d=2, varpi >= 1; II: d=3, varpi > 3; III: d=3, varpi = 3)")


@dataclass
class ModelParams:
    """Physical constants of the damped flow.

    mu: effective viscosity; alpha: linear (Darcy) damping; beta: nonlinear
    (Forchheimer) damping weight; varpi: absorption exponent. The forcing is
    time-independent and stored pre-projected. beta = 0 is tolerated so the
    pure Navier-Stokes limit stays testable; the admissibility table is
    enforced on (dim, varpi, 2*mu*beta).
    """

    mu: float
    alpha: float
    beta: float
    varpi: float
    dim: int
    forcing: VelocityField | None = None

    def __post_init__(self):
        if self.mu <= 0:
            raise ConfigurationError("mu must be positive")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigurationError("alpha and beta must be nonnegative")
        if self.varpi < 1:
            raise ConfigurationError("varpi must be >= 1")
        report = classify_regime(self.dim, self.varpi, self.mu, self.beta)
        if not report.admissible:
            raise ConfigurationError(report.message)
        if self.forcing is not None:
            if self.forcing.grid.dim != self.dim:
                raise ConfigurationError("forcing dimension does not match params.dim")
            from .fields import leray_project
            self.forcing = leray_project(self.forcing)

    def regime(self) -> RegimeReport:
        return classify_regime(self.dim, self.varpi, self.mu, self.beta)

    def f_dual_norm_sq(self) -> float:
        """||f||_{V*}^2 evaluated spectrally as sum |f_k|^2 / |kappa|^2."""
        if self.forcing is None:
            return 0.0
        grid = self.forcing.grid
        fh = self.forcing.spectral
        w = grid.parseval_weight * grid.inv_k2
        return grid.domain_measure * float(np.sum(w * (fh.real**2 + fh.imag**2)))


# -- Stokes operator -----------------------------------------------------


def apply_stokes(u: VelocityField) -> VelocityField:
    """Spectral -Laplace (multiplication by |kappa|^2)."""
    return VelocityField.from_spectral(u.grid, u.grid.k2 * u.spectral)


# -- convection ----------------------------------------------------------


def _gradients_phys(grid: Grid, uhat: np.ndarray) -> np.ndarray:
    """Physical-space gradients g[i, j] = d u_j / d x_i."""
    g = np.empty((grid.dim, grid.dim) + grid.shape)
    for i in range(grid.dim):
        g[i] = to_physical(grid, 1j * grid.kvec[i] * uhat)
    return g


def _advective_phys(grid: Grid, u_phys: np.ndarray, vhat: np.ndarray) -> np.ndarray:
    """(u . grad) v on the grid."""
    gv = _gradients_phys(grid, vhat)
    return np.einsum("i...,ij...->j...", u_phys, gv)


def _divform_hat(grid: Grid, u_phys: np.ndarray, v_phys: np.ndarray) -> np.ndarray:
    """Spectral div(u x v): sum_i i*kappa_i * fft(u_i v_j)."""
    out = np.zeros((grid.dim,) + grid.spectral_shape, dtype=complex)
    for i in range(grid.dim):
        prod_hat = to_spectral(grid, u_phys[i] * v_phys)
        out += 1j * grid.kvec[i] * prod_hat
    return out


def skew_convection_hat(grid: Grid, uhat: np.ndarray, u_phys: np.ndarray | None = None) -> np.ndarray:
    """Dealiased, projected skew form of (u . grad) u, in spectral space."""
    uhat_d = dealias_hat(grid, uhat)
    if u_phys is None:
        u_phys = to_physical(grid, uhat_d)
    adv_hat = to_spectral(grid, _advective_phys(grid, u_phys, uhat_d))
    div_hat = _divform_hat(grid, u_phys, u_phys)
    out = 0.5 * (adv_hat + div_hat)
    return leray_hat(grid, dealias_hat(grid, out))


def convection_B(u: VelocityField) -> VelocityField:
    return VelocityField.from_spectral(u.grid, skew_convection_hat(u.grid, u.spectral))


def _advective_integral(grid: Grid, u_phys, vhat, w_phys) -> float:
    """Quadrature of ((u . grad) v) . w over the torus."""
    adv = _advective_phys(grid, u_phys, vhat)
    return grid.cell_volume * float(np.sum(adv * w_phys))


def trilinear_b(u: VelocityField, v: VelocityField, w: VelocityField) -> float:
    """Skew-symmetrized trilinear form 1/2 [((u.grad)v, w) - ((u.grad)w, v)].

    Both identities b(u, v, v) = 0 and b(u, v, w) = -b(u, w, v) hold exactly
    in floating point: swapping the last two arguments swaps the two
    identically computed quadrature sums.
    """
    grid = u.grid
    if v.grid is not grid and v.grid != grid:
        raise ConfigurationError("fields must share a grid")
    ud = dealias_hat(grid, u.spectral)
    vd = dealias_hat(grid, v.spectral)
    wd = dealias_hat(grid, w.spectral)
    u_phys = to_physical(grid, ud)
    v_phys = to_physical(grid, vd)
    w_phys = to_physical(grid, wd)
    term1 = _advective_integral(grid, u_phys, vd, w_phys)
    term2 = _advective_integral(grid, u_phys, wd, v_phys)
    return 0.5 * (term1 - term2)


# -- nonlinear damping ---------------------------------------------------


def damping_pointwise(components: np.ndarray, varpi: float) -> np.ndarray:
    """|u|^(varpi-1) u evaluated pointwise; |u| is the Euclidean magnitude.

    Convention 0^(varpi-1) * 0 = 0 (automatic here since varpi >= 1).
    """
    if varpi < 1:
        raise ConfigurationError("varpi must be >= 1")
    if varpi == 1.0:
        return components.copy()
    mag_sq = np.sum(components**2, axis=0)
    return mag_sq ** ((varpi - 1.0) / 2.0) * components


def damping_hat(grid: Grid, u_phys: np.ndarray, varpi: float) -> np.ndarray:
    """Spectral damping term: pointwise kernel, dealiased, Leray-projected."""
    raw_hat = to_spectral(grid, damping_pointwise(u_phys, varpi))
    return leray_hat(grid, dealias_hat(grid, raw_hat))


def damping_K(u: VelocityField, varpi: float) -> VelocityField:
    """Damping operator: pointwise kernel, dealiased, Leray-projected."""
    return VelocityField.from_spectral(u.grid, damping_hat(u.grid, u.components, varpi))


def damping_monotonicity_gap_pointwise(a: np.ndarray, b: np.ndarray, varpi: float) -> np.ndarray:
    """Pointwise (a-b).(K(a)-K(b)) - 2^(1-varpi) |a-b|^(varpi+1), components first axis."""
    diff = a - b
    ka = damping_pointwise(a, varpi)
    kb = damping_pointwise(b, varpi)
    pair = np.sum(diff * (ka - kb), axis=0)
    mag = np.sqrt(np.sum(diff**2, axis=0))
    return pair - 2.0 ** (1.0 - varpi) * mag ** (varpi + 1.0)


def damping_monotonicity_gap(u: VelocityField, v: VelocityField, varpi: float) -> float:
    """<u-v, K(u)-K(v)> - 2^(1-varpi) ||u-v||_{varpi+1}^{varpi+1} (quadrature).

    The integrand is nonnegative pointwise, so the result is >= 0 up to
    rounding for every pair of fields and every varpi >= 1.
    """
    gap = damping_monotonicity_gap_pointwise(u.components, v.components, varpi)
    return u.grid.cell_volume * float(np.sum(gap))


# -- deterministic energy identity ---------------------------------------


def energy_balance_residual(trajectory, params: ModelParams, f_inner=None,
                            noise_enabled: bool = False) -> float:
    """Defect of the noise-off energy identity along a recorded trajectory.

    Checks max_t | ||u(t)||^2 - ||u(0)||^2
                  + 2 int_0^t (mu*v_sq + alpha*l2_sq + beta*lp - (u, f)) ds |
    with trapezoidal time quadrature. ``trajectory`` is either a result
    object from the dynamics module or a sequence of NormBundle (optionally
    (time, NormBundle) pairs) recorded with the same varpi as ``params``.
    """
    if hasattr(trajectory, "zeta_l2sq"):
        if getattr(trajectory, "noise_epsilon", 0.0):
            raise ValueError("energy identity requires a noise-off trajectory")
        times = np.asarray(trajectory.times, dtype=float)
        l2 = np.asarray(trajectory.zeta_l2sq, dtype=float)
        v = np.asarray(trajectory.zeta_vsq, dtype=float)
        lp = np.asarray(trajectory.zeta_lp, dtype=float)
        fi = np.asarray(trajectory.f_inner, dtype=float)
    else:
        if noise_enabled:
            raise ValueError("energy identity requires a noise-off trajectory")
        bundles = [b[1] if isinstance(b, tuple) else b for b in trajectory]
        times = np.array([b.time for b in bundles])
        l2 = np.array([b.l2_sq for b in bundles])
        v = np.array([b.v_sq for b in bundles])
        lp = np.array([b.lp for b in bundles])
        fi = np.zeros_like(times) if f_inner is None else np.asarray(f_inner, dtype=float)
    if params.forcing is not None and f_inner is None and not hasattr(trajectory, "f_inner"):
        raise ValueError("nonzero forcing requires the (u, f) series")

    integrand = params.mu * v + params.alpha * l2 + params.beta * lp - fi
    dt = np.diff(times)
    cum = np.concatenate(([0.0], np.cumsum(0.5 * dt * (integrand[1:] + integrand[:-1]))))
    residual = l2 - l2[0] + 2.0 * cum
    return float(np.max(np.abs(residual)))


def stokes_energy(u: VelocityField) -> float:
    """(u, A u), which must equal ||grad u||_2^2 by Parseval."""
    return inner_hat(u.grid, u.spectral, u.grid.k2 * u.spectral)
