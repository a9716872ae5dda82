"""Grids and divergence-free vector fields on the periodic torus.

Fields live on a uniform grid over [0, L)^d with d in {2, 3}. The spectral
representation uses ``numpy.fft.rfftn`` over the spatial axes with
``norm="forward"``, so stored coefficients are true Fourier coefficients:

    u(x) = sum_k  c_k exp(i * kappa . x),   kappa = (2*pi/L) * k,

with the last axis holding only the non-negative half-spectrum. All L2-type
norms are evaluated by Parseval on those coefficients; Lebesgue p-norms use
the uniform-grid quadrature (exact trapezoid on a periodic grid).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft as _fft

from .errors import ConfigurationError

TWO_PI = 2.0 * np.pi


def _fft_workers() -> int:
    """Thread count for the FFT backend (CBFDA_THREADS, default all cores).

    Results are bitwise independent of the worker count; threading only
    distributes independent 1D line transforms.
    """
    try:
        return max(1, int(os.environ.get("CBFDA_THREADS", os.cpu_count() or 1)))
    except ValueError:
        return 1


@dataclass(frozen=True)
class Grid:
    """Periodic uniform grid with precomputed spectral machinery.

    Parameters
    ----------
    dim : 2 or 3
    n : points per axis (even, >= 8; powers of two give the fastest FFTs)
    side_length : torus edge length L (default 2*pi)
    dealias_fraction : fraction of the Nyquist band kept in nonlinear
        products (default 2/3, the classic rule)
    """

    dim: int
    n: int
    side_length: float = TWO_PI
    dealias_fraction: float = 2.0 / 3.0

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ConfigurationError(f"dim must be 2 or 3, got {self.dim}")
        if self.n < 8 or self.n % 2 != 0:
            raise ConfigurationError(f"n must be even and >= 8, got {self.n}")
        if not (self.side_length > 0):
            raise ConfigurationError("side_length must be positive")
        if not (0 < self.dealias_fraction <= 1):
            raise ConfigurationError("dealias_fraction must lie in (0, 1]")

    # -- basic geometry -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.dim

    @property
    def spectral_shape(self) -> tuple:
        return (self.n,) * (self.dim - 1) + (self.n // 2 + 1,)

    @property
    def dx(self) -> float:
        return self.side_length / self.n

    @property
    def cell_volume(self) -> float:
        return self.dx**self.dim

    @property
    def domain_measure(self) -> float:
        return self.side_length**self.dim

    @cached_property
    def coordinates(self) -> tuple:
        """Meshgrid of physical coordinates, indexing='ij'."""
        x1 = np.arange(self.n) * self.dx
        return np.meshgrid(*([x1] * self.dim), indexing="ij")

    # -- wavenumbers -----------------------------------------------------

    @cached_property
    def k_int(self) -> list:
        """Integer wavenumber array per axis, broadcastable to spectral shape."""
        full = np.fft.fftfreq(self.n, d=1.0 / self.n)
        half = np.fft.rfftfreq(self.n, d=1.0 / self.n)
        axes = [full] * (self.dim - 1) + [half]
        out = []
        for i, k1 in enumerate(axes):
            shp = [1] * self.dim
            shp[i] = len(k1)
            out.append(k1.reshape(shp))
        return out

    @cached_property
    def kvec(self) -> list:
        """Physical wavenumbers kappa_i = (2*pi/L) * k_i per axis."""
        scale = TWO_PI / self.side_length
        return [scale * k for k in self.k_int]

    @cached_property
    def k2(self) -> np.ndarray:
        out = np.zeros(self.spectral_shape)
        for kappa in self.kvec:
            out = out + kappa**2
        return out

    @cached_property
    def inv_k2(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            inv = np.where(self.k2 > 0, 1.0 / np.where(self.k2 > 0, self.k2, 1.0), 0.0)
        return inv

    @cached_property
    def k2_int(self) -> np.ndarray:
        out = np.zeros(self.spectral_shape)
        for k in self.k_int:
            out = out + k**2
        return out

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        cut = self.dealias_fraction * (self.n // 2)
        mask = np.ones(self.spectral_shape, dtype=bool)
        for k in self.k_int:
            mask &= np.abs(k) <= cut
        return mask

    @cached_property
    def parseval_weight(self) -> np.ndarray:
        """Multiplicity of each rfftn bin (2 for interior half-spectrum bins)."""
        k_last = self.k_int[-1]
        w_last = np.where((k_last == 0) | (k_last == self.n // 2), 1.0, 2.0)
        return np.broadcast_to(w_last, self.spectral_shape)

    def lambda1(self) -> float:
        return (TWO_PI / self.side_length) ** 2


def poincare_lambda1(grid: Grid) -> float:
    """Smallest nonzero eigenvalue of -Laplace on zero-mean torus fields."""
    return grid.lambda1()


# -- transforms ---------------------------------------------------------


def to_spectral(grid: Grid, components: np.ndarray) -> np.ndarray:
    axes = tuple(range(1, grid.dim + 1))
    return _fft.rfftn(components, axes=axes, norm="forward", workers=_fft_workers())


def to_physical(grid: Grid, coeffs: np.ndarray) -> np.ndarray:
    axes = tuple(range(1, grid.dim + 1))
    return _fft.irfftn(coeffs, s=grid.shape, axes=axes, norm="forward",
                       workers=_fft_workers())


def dealias_hat(grid: Grid, coeffs: np.ndarray) -> np.ndarray:
    return coeffs * grid.dealias_mask


def leray_hat(grid: Grid, coeffs: np.ndarray) -> np.ndarray:
    """Spectral Helmholtz-Hodge projection onto divergence-free, zero-mean fields."""
    div = np.zeros(grid.spectral_shape, dtype=complex)
    for i in range(grid.dim):
        div = div + grid.kvec[i] * coeffs[i]
    out = np.empty_like(coeffs)
    for i in range(grid.dim):
        out[i] = coeffs[i] - grid.kvec[i] * grid.inv_k2 * div
    out[(slice(None),) + (0,) * grid.dim] = 0.0
    return out


def divergence_hat(grid: Grid, coeffs: np.ndarray) -> np.ndarray:
    div = np.zeros(grid.spectral_shape, dtype=complex)
    for i in range(grid.dim):
        div = div + 1j * grid.kvec[i] * coeffs[i]
    return div


# -- Parseval sums ------------------------------------------------------


def l2_sq_hat(grid: Grid, coeffs: np.ndarray) -> float:
    w = grid.parseval_weight
    return grid.domain_measure * float(np.sum(w * (coeffs.real**2 + coeffs.imag**2)))


def v_sq_hat(grid: Grid, coeffs: np.ndarray) -> float:
    w = grid.parseval_weight * grid.k2
    return grid.domain_measure * float(np.sum(w * (coeffs.real**2 + coeffs.imag**2)))


def inner_hat(grid: Grid, a: np.ndarray, b: np.ndarray) -> float:
    """L2 inner product of two fields from spectral coefficients."""
    w = grid.parseval_weight
    return grid.domain_measure * float(np.sum(w * (a.real * b.real + a.imag * b.imag)))


def lp_norm_pow(grid: Grid, components: np.ndarray, p: float) -> float:
    """Quadrature of |u(x)|^p over the torus (uniform-grid rectangle rule)."""
    mag_sq = np.sum(components**2, axis=0)
    return grid.cell_volume * float(np.sum(mag_sq ** (p / 2.0)))


# -- field container ----------------------------------------------------


@dataclass
class VelocityField:
    """Vector field on a :class:`Grid` with lazily cached dual representation.

    The constructor removes the spatial mean of every component. Divergence-
    freeness is the caller's business (use :func:`leray_project`); interpolant
    output, for instance, is legitimately non-solenoidal.
    """

    grid: Grid
    components: np.ndarray
    _spectral: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        expected = (self.grid.dim,) + self.grid.shape
        if self.components.shape != expected:
            raise ConfigurationError(
                f"components shape {self.components.shape} != {expected}"
            )
        mean = self.components.mean(axis=tuple(range(1, self.grid.dim + 1)), keepdims=True)
        if np.any(mean != 0.0):
            self.components = self.components - mean
            self._spectral = None

    @classmethod
    def from_spectral(cls, grid: Grid, coeffs: np.ndarray) -> "VelocityField":
        coeffs = coeffs.copy()
        coeffs[(slice(None),) + (0,) * grid.dim] = 0.0
        obj = cls.__new__(cls)
        obj.grid = grid
        obj.components = to_physical(grid, coeffs)
        obj._spectral = coeffs
        return obj

    @classmethod
    def zero(cls, grid: Grid) -> "VelocityField":
        return cls(grid, np.zeros((grid.dim,) + grid.shape))

    @property
    def spectral(self) -> np.ndarray:
        if self._spectral is None:
            self._spectral = to_spectral(self.grid, self.components)
        return self._spectral

    def l2_sq(self) -> float:
        return l2_sq_hat(self.grid, self.spectral)

    def v_sq(self) -> float:
        return v_sq_hat(self.grid, self.spectral)

    def divergence_l2(self) -> float:
        return np.sqrt(l2_sq_hat(self.grid, divergence_hat(self.grid, self.spectral)[None]))

    def copy(self) -> "VelocityField":
        out = VelocityField.__new__(VelocityField)
        out.grid = self.grid
        out.components = self.components.copy()
        out._spectral = None if self._spectral is None else self._spectral.copy()
        return out


@dataclass
class NormBundle:
    """The three norms the energy estimates track, at one instant.

    l2_sq = ||u||_2^2, v_sq = ||grad u||_2^2, lp = ||u||_{p+1}^{p+1} for the
    absorption exponent in force at the time of recording.
    """

    l2_sq: float
    v_sq: float
    lp: float
    time: float = 0.0

    def __post_init__(self):
        if min(self.l2_sq, self.v_sq, self.lp) < 0 or self.time < 0:
            raise ValueError("norms and time must be nonnegative")

    def check_poincare(self, lambda1: float, slack: float = 1e-8) -> bool:
        return lambda1 * self.l2_sq <= self.v_sq * (1.0 + slack) + 1e-300


def norms(u: VelocityField, varpi: float = 1.0) -> NormBundle:
    """Norm bundle of ``u``; ``lp`` uses exponent ``varpi + 1``."""
    if varpi < 1:
        raise ConfigurationError("varpi must be >= 1")
    return NormBundle(
        l2_sq=u.l2_sq(),
        v_sq=u.v_sq(),
        lp=lp_norm_pow(u.grid, u.components, varpi + 1.0),
    )


def leray_project(raw: VelocityField) -> VelocityField:
    """Project onto divergence-free, zero-mean fields (idempotent)."""
    return VelocityField.from_spectral(raw.grid, leray_hat(raw.grid, raw.spectral))


# -- random fields ------------------------------------------------------


def random_divfree_field(
    grid: Grid,
    energy_spectrum_slope: float,
    seed,
    rms: float = 1.0,
) -> VelocityField:
    """Deterministic random solenoidal field with a power-law shell spectrum.

    The shell-summed energy E(k) scales like k**slope over the resolved band;
    per-mode amplitudes carry the extra k**(1-d) shell-count compensation.
    ``rms`` sets the root-mean-square pointwise speed.
    """
    if energy_spectrum_slope >= -1:
        raise ConfigurationError("energy_spectrum_slope must be < -1")
    rng = np.random.default_rng(seed)
    white = rng.standard_normal((grid.dim,) + grid.shape)
    what = to_spectral(grid, white)

    kmag = np.sqrt(grid.k2_int)
    kmax = grid.dealias_fraction * (grid.n // 2)
    profile = np.zeros(grid.spectral_shape)
    inside = (kmag >= 0.5) & (kmag <= kmax)
    expo = 0.5 * (energy_spectrum_slope - (grid.dim - 1))
    profile[inside] = kmag[inside] ** expo

    what = leray_hat(grid, what * profile)
    out = VelocityField.from_spectral(grid, what)
    cur = np.sqrt(out.l2_sq() / grid.domain_measure)
    if cur > 0:
        out = VelocityField.from_spectral(grid, what * (rms / cur))
    return out


def shell_spectrum(u: VelocityField) -> tuple:
    """Shell-summed energy spectrum E(k) over integer shells [k, k+1)."""
    grid = u.grid
    kmag = np.sqrt(grid.k2_int)
    w = grid.parseval_weight
    energy = grid.domain_measure * np.sum(
        w * (u.spectral.real**2 + u.spectral.imag**2), axis=0
    )
    nshell = grid.n // 2
    shells = np.arange(1, nshell)
    spectrum = np.zeros(len(shells))
    idx = np.floor(kmag + 0.5).astype(int)
    for j, k in enumerate(shells):
        spectrum[j] = energy[idx == k].sum()
    return shells, spectrum


# -- snapshot files ------------------------------------------------------


def save_field(path, u: VelocityField) -> None:
    """Write the snapshot format: CSV header then flat row-major components."""
    with open(path, "w") as fh:
        fh.write("dim,n,side_length\n")
        fh.write(f"{u.grid.dim},{u.grid.n},{u.grid.side_length:.17g}\n")
        flat = u.components.ravel(order="C")
        fh.write("\n".join(f"{v:.17g}" for v in flat))
        fh.write("\n")


def load_field(path, dealias_fraction: float = 2.0 / 3.0) -> VelocityField:
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "dim,n,side_length":
            raise ConfigurationError(f"unrecognised snapshot header: {header!r}")
        dim_s, n_s, side_s = fh.readline().strip().split(",")
        grid = Grid(int(dim_s), int(n_s), float(side_s), dealias_fraction)
        data = np.loadtxt(fh)
    return VelocityField(grid, data.reshape((grid.dim,) + grid.shape))
