"""Trace-class Q-Wiener increments and the noise coefficient.

The covariance eigenbasis is the real divergence-free Fourier basis

    q(x) = sqrt(2/L^d) * e_p(k) * {cos, sin}(kappa . x),

one orthonormal mode per (wavevector, polarization, phase) triple, with
eigenvalues mu_j proportional to |k_j|^(-s) and normalized to a target trace.
Two concrete coefficient choices are provided with closed-form growth and
Lipschitz constants: a constant (additive) coefficient, and a pointwise
product with the state (multiplicative, globally Lipschitz).

Reproducibility: one RNG stream per trajectory; ensemble member streams are
derived from the master seed by seeding ``numpy.random.default_rng`` with the
entropy list ``[master_seed, stream_tag]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError
from .fields import Grid, VelocityField, dealias_hat, leray_hat, to_physical, to_spectral


def member_rng(master_seed: int, stream: int) -> np.random.Generator:
    """Independent, reproducible RNG stream: entropy = [master_seed, stream]."""
    return np.random.default_rng([int(master_seed), int(stream)])


def _half_space_wavevectors(grid: Grid, kmax: int):
    """Integer wavevectors, one per conjugate pair, sorted by (|k|^2, tuple)."""
    rng1 = np.arange(-kmax, kmax + 1)
    grids = np.meshgrid(*([rng1] * grid.dim), indexing="ij")
    ks = np.stack([g.ravel() for g in grids], axis=1)
    keep = []
    for k in ks:
        if not np.any(k):
            continue
        # representative of the +/-k pair: last nonzero-from-the-end positive
        rep = False
        for c in k[::-1]:
            if c > 0:
                rep = True
                break
            if c < 0:
                break
        if rep:
            keep.append(tuple(int(c) for c in k))
    keep.sort(key=lambda k: (sum(c * c for c in k), k))
    return keep


def _polarizations(k: np.ndarray) -> list:
    """Orthonormal basis of the plane orthogonal to k (1 vector in 2D, 2 in 3D)."""
    k = np.asarray(k, dtype=float)
    if len(k) == 2:
        e = np.array([-k[1], k[0]]) / np.linalg.norm(k)
        return [e]
    helper = np.array([0.0, 0.0, 1.0])
    if abs(k[0]) < 1e-12 and abs(k[1]) < 1e-12:
        helper = np.array([1.0, 0.0, 0.0])
    e1 = np.cross(k, helper)
    e1 = e1 / np.linalg.norm(e1)
    e2 = np.cross(k, e1)
    e2 = e2 / np.linalg.norm(e2)
    return [e1, e2]


@dataclass(frozen=True)
class QWienerSpec:
    """Truncated eigen-expansion of the driving Wiener process.

    n_modes counts real scalar modes (default (n/4)^dim); spectrum_decay is
    the eigenvalue exponent s in mu ~ |k|^(-s) (default dim + 2, trace-class
    with summable tail); eigenvalues are rescaled so their sum equals
    trace_normalization.
    """

    grid: Grid
    n_modes: int | None = None
    spectrum_decay: float | None = None
    trace_normalization: float = 1.0
    basis: str = "fourier-stokes"

    def __post_init__(self):
        if self.basis != "fourier-stokes":
            raise ConfigurationError(f"unknown basis {self.basis!r}")
        if self.trace_normalization <= 0:
            raise ConfigurationError("trace_normalization must be positive")
        n_modes = self.n_modes if self.n_modes is not None else (self.grid.n // 4) ** self.grid.dim
        decay = self.spectrum_decay if self.spectrum_decay is not None else self.grid.dim + 2.0
        if n_modes < 1:
            raise ConfigurationError("n_modes must be >= 1")
        if decay <= self.grid.dim:
            raise ConfigurationError("spectrum_decay must exceed dim (trace class)")
        object.__setattr__(self, "n_modes", int(n_modes))
        object.__setattr__(self, "spectrum_decay", float(decay))
        self._build()

    def _build(self):
        grid = self.grid
        kmax = int(grid.dealias_fraction * (grid.n // 2))
        wavevectors = _half_space_wavevectors(grid, kmax)
        per_vec = 2 * (grid.dim - 1)
        if len(wavevectors) * per_vec < self.n_modes:
            raise ConfigurationError(
                f"n_modes={self.n_modes} exceeds the {len(wavevectors) * per_vec} "
                f"resolved modes inside the dealias band"
            )
        amp = np.sqrt(2.0 / grid.domain_measure)
        scale = 2.0 * np.pi / grid.side_length

        mode_k = []
        mu = []
        prim_flat = []
        prim_coef = []
        mirror_mode = []
        mirror_flat = []
        size = int(np.prod(grid.spectral_shape))
        for k in wavevectors:
            kv = np.asarray(k)
            bin_idx = tuple(
                (int(c) % grid.n) if ax < grid.dim - 1 else int(c)
                for ax, c in enumerate(kv)
            )
            flat = int(np.ravel_multi_index(bin_idx, grid.spectral_shape))
            needs_mirror = kv[-1] == 0
            if needs_mirror:
                mirror_idx = tuple((-int(c)) % grid.n for c in kv[:-1]) + (0,)
                mflat = int(np.ravel_multi_index(mirror_idx, grid.spectral_shape))
            for e in _polarizations(kv * scale):
                for phase_coef in (0.5, -0.5j):  # cos, sin
                    if len(mu) == self.n_modes:
                        break
                    mode_k.append(k)
                    mu.append(float(np.sum(kv * kv)) ** (-self.spectrum_decay / 2.0))
                    prim_flat.append(flat)
                    prim_coef.append(amp * phase_coef * e)
                    if needs_mirror:
                        mirror_mode.append(len(mu) - 1)
                        mirror_flat.append(mflat)
                if len(mu) == self.n_modes:
                    break
            if len(mu) == self.n_modes:
                break

        mu = np.asarray(mu)
        mu *= self.trace_normalization / mu.sum()
        object.__setattr__(self, "mode_k", np.asarray(mode_k, dtype=int))
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sqrt_mu", np.sqrt(mu))
        object.__setattr__(self, "_prim_flat", np.asarray(prim_flat, dtype=np.intp))
        object.__setattr__(self, "_prim_coef", np.asarray(prim_coef, dtype=complex))
        object.__setattr__(self, "_mir_mode", np.asarray(mirror_mode, dtype=np.intp))
        object.__setattr__(self, "_mir_flat", np.asarray(mirror_flat, dtype=np.intp))
        object.__setattr__(self, "_flat_size", size)

    @property
    def trace_q(self) -> float:
        return float(self.mu.sum())

    def sup_sq_modes(self) -> float:
        """||q||_inf^2, identical for every mode: 2 / L^d."""
        return 2.0 / self.grid.domain_measure

    def assemble_hat(self, g: np.ndarray) -> np.ndarray:
        """Spectral coefficients of sum_j g_j q_j for mode amplitudes g."""
        grid = self.grid
        out = np.zeros((grid.dim, self._flat_size), dtype=complex)
        contrib = self._prim_coef * g[:, None]
        for i in range(grid.dim):
            np.add.at(out[i], self._prim_flat, contrib[:, i])
        if len(self._mir_flat):
            mcontrib = np.conj(contrib[self._mir_mode])
            for i in range(grid.dim):
                np.add.at(out[i], self._mir_flat, mcontrib[:, i])
        return out.reshape((grid.dim,) + grid.spectral_shape)

    def mode_coefficients(self, uhat: np.ndarray) -> np.ndarray:
        """L2 projections (u, q_j) of a real field onto every mode."""
        grid = self.grid
        flat = uhat.reshape((grid.dim, self._flat_size))
        picked = flat[:, self._prim_flat].T  # (m, dim)
        w = grid.parseval_weight.reshape(self._flat_size)[self._prim_flat]
        # k_last = 0 bins carry weight 1 but the mirrored bin doubles the
        # physical contribution, so every mode reduces to the same formula.
        w = np.where(w == 1.0, 2.0, w)
        proj = np.sum(picked * np.conj(self._prim_coef), axis=1)
        return grid.domain_measure * w * proj.real


def sample_increment_hat(spec: QWienerSpec, dt: float, rng: np.random.Generator) -> np.ndarray:
    """Spectral coefficients of one Wiener increment over a step of size dt."""
    if dt <= 0:
        raise ConfigurationError("dt must be positive")
    xi = rng.standard_normal(spec.n_modes)
    return spec.assemble_hat(spec.sqrt_mu * xi * np.sqrt(dt))


def sample_wiener_increment(spec: QWienerSpec, dt: float, rng_state) -> VelocityField:
    """Increment sum_k sqrt(mu_k) q_k xi_k sqrt(dt); deterministic given the RNG."""
    return VelocityField.from_spectral(spec.grid, sample_increment_hat(spec, dt, rng_state))


class NoiseConstants(NamedTuple):
    K: float
    Ktilde: float
    L: float
    trace_q: float
    upsilon_hs_norm_sq: float


@dataclass(frozen=True)
class NoiseCoefficient:
    """Noise coefficient with computable growth/Lipschitz constants.

    additive:        Upsilon(u) dW = eps * dW
                     K = eps^2 tr Q, Ktilde = L = 0
    multiplicative:  Upsilon(u) dW = eps * P[(u .* dW)]   (componentwise)
                     K = 0, Ktilde = L = eps^2 sum_k mu_k ||q_k||_inf^2
    """

    kind: str
    epsilon: float
    spec: QWienerSpec

    def __post_init__(self):
        if self.kind not in ("additive", "multiplicative"):
            raise ConfigurationError(f"noise kind must be additive|multiplicative, got {self.kind!r}")
        if self.epsilon < 0:
            raise ConfigurationError("epsilon must be nonnegative")

    @property
    def K(self) -> float:
        if self.kind == "additive":
            return self.epsilon**2 * self.spec.trace_q
        return 0.0

    @property
    def Ktilde(self) -> float:
        if self.kind == "additive":
            return 0.0
        return self.epsilon**2 * self.spec.sup_sq_modes() * self.spec.trace_q

    @property
    def L(self) -> float:
        return 0.0 if self.kind == "additive" else self.Ktilde

    @property
    def upsilon_hs_norm_sq(self) -> float:
        """||Upsilon||^2 in the Hilbert-Schmidt noise norm (additive case)."""
        return self.epsilon**2 * self.spec.trace_q if self.kind == "additive" else 0.0

    def constants(self) -> NoiseConstants:
        return NoiseConstants(self.K, self.Ktilde, self.L, self.spec.trace_q,
                              self.upsilon_hs_norm_sq)


def noise_constants(spec: QWienerSpec, coeff: NoiseCoefficient) -> NoiseConstants:
    """Closed-form constants (K, Ktilde, L, tr Q, HS norm) for the pair."""
    if coeff.spec is not spec and coeff.spec != spec:
        raise ConfigurationError("coefficient was built for a different spectrum")
    return coeff.constants()


def apply_noise_hat(coeff: NoiseCoefficient, uhat: np.ndarray | None,
                    u_phys: np.ndarray | None, dw_hat: np.ndarray) -> np.ndarray:
    """Spectral Upsilon(u) dW; multiplicative needs the physical state."""
    if coeff.kind == "additive":
        return coeff.epsilon * dw_hat
    grid = coeff.spec.grid
    if u_phys is None:
        u_phys = to_physical(grid, uhat)
    dw_phys = to_physical(grid, dw_hat)
    prod_hat = to_spectral(grid, u_phys * dw_phys)
    return coeff.epsilon * leray_hat(grid, dealias_hat(grid, prod_hat))


def apply_noise_coefficient(coeff: NoiseCoefficient, u: VelocityField,
                            dW: VelocityField) -> VelocityField:
    """Upsilon(u) dW as a field. Additive output ignores u; multiplicative is
    linear in u with Lipschitz bound eps * max_x |dW(x)| in L2."""
    out_hat = apply_noise_hat(coeff, u.spectral, u.components, dW.spectral)
    return VelocityField.from_spectral(coeff.spec.grid, out_hat)
