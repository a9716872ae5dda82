"""Time integration of the truth flow and the nudged (assimilated) copy.

Scheme: IMEX Euler-Maruyama. The stiff linear part mu*A + alpha is implicit
(a diagonal division in spectral space); convection, damping, forcing and the
nudging feedback are explicit; the Wiener increment enters Euler-Maruyama
style, evaluated at the step's left endpoint. For a coupled pair the two
systems consume the *same* increment each step -- with a state-independent
coefficient the noise then cancels in the error update to rounding.

Nudging is explicit by default. For the spectral interpolant an implicit
option folds the feedback into the solve: after both systems advance, the
assimilated state is relaxed toward the truth on observed modes by the factor
1/(1 + sigma*dt), which stays stable for arbitrarily large sigma.

Stability guards: an advective CFL check aborts the run; an overshoot of the
explicit terms (norm jump or non-finite values) triggers re-doing the step
with up to four dt-halvings (the step's increment is split equally across the
substeps) before a blow-up is declared.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import BlowUpError, CFLViolationError, ConfigurationError
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
    v_sq_hat,
)
from .interpolant import InterpolantSpec
from .noise import NoiseCoefficient, apply_noise_hat, member_rng, sample_increment_hat
from .operators import ModelParams, RegimeReport, classify_regime, damping_hat, skew_convection_hat

SCHEME = "imex-euler-maruyama"


@dataclass(frozen=True)
class StepperConfig:
    dt: float
    t_end: float
    record_stride: int = 1
    scheme: str = SCHEME
    cfl_factor: float = 0.5
    overshoot_factor: float = 10.0
    max_halvings: int = 4
    include_convection: bool = True  # off = linearized runs for verification

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigurationError("dt must be positive")
        if self.t_end < 0:
            raise ConfigurationError("t_end must be nonnegative")
        if self.record_stride < 1:
            raise ConfigurationError("record_stride must be >= 1")
        if self.scheme != SCHEME:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass
class AssimilationConfig:
    sigma: float
    interpolant: InterpolantSpec
    truth_init: VelocityField
    da_init: VelocityField
    implicit_nudging: bool = False

    def __post_init__(self):
        if self.sigma < 0:
            raise ConfigurationError("sigma must be nonnegative (0 disables nudging)")
        if self.implicit_nudging and self.interpolant.kind != "spectral":
            raise ConfigurationError("implicit nudging needs the spectral interpolant")


@dataclass
class TruthState:
    t: float
    zeta: VelocityField


@dataclass
class PairState:
    t: float
    zeta: VelocityField
    z_da: VelocityField
    error_norms: NormBundle


@dataclass
class TrajectoryResult:
    """Recorded norm series; arrays share the length of ``times``."""

    times: np.ndarray
    zeta_l2sq: np.ndarray
    zeta_vsq: np.ndarray
    zeta_lp: np.ndarray
    f_inner: np.ndarray
    zeta_vsq_integral: np.ndarray
    da_l2sq: Optional[np.ndarray] = None
    da_vsq: Optional[np.ndarray] = None
    da_lp: Optional[np.ndarray] = None
    err_l2sq: Optional[np.ndarray] = None
    err_vsq: Optional[np.ndarray] = None
    err_lp: Optional[np.ndarray] = None
    noise_kind: Optional[str] = None
    noise_epsilon: float = 0.0
    final: object = None
    snapshots: list = field(default_factory=list)
    config_echo: dict = field(default_factory=dict)

    @property
    def is_pair(self) -> bool:
        return self.da_l2sq is not None


def validate_regime(params: ModelParams, noise: NoiseCoefficient | None = None) -> RegimeReport:
    """Classify the parameter regime; raise if the admissibility table rejects it."""
    report = classify_regime(params.dim, params.varpi, params.mu, params.beta)
    if not report.admissible:
        raise ConfigurationError(report.message)
    if noise is not None and noise.spec.grid.dim != params.dim:
        raise ConfigurationError("noise grid dimension does not match params.dim")
    return report


class _Integrator:
    """Per-run workspace: precomputed implicit diagonal and forcing."""

    def __init__(self, grid: Grid, params: ModelParams, noise: NoiseCoefficient | None,
                 stepper: StepperConfig, config: AssimilationConfig | None = None):
        if noise is not None and noise.epsilon == 0.0:
            noise = None
        self.grid = grid
        self.params = params
        self.noise = noise
        self.stepper = stepper
        self.config = config
        self.dt = stepper.dt
        self._solve_cache = {}
        self.f_hat = None
        if params.forcing is not None:
            self.f_hat = dealias_hat(grid, params.forcing.spectral)
        if config is not None:
            self.sigma = config.sigma
            self.interp = config.interpolant
            self.implicit = config.implicit_nudging
            if self.interp.kind == "spectral":
                self._obs_mask = self.interp.spectral_mask(grid)
            else:
                self.interp.resolved_cells(grid)  # validate alignment early
                self._obs_mask = None

    def implicit_diag(self, dt: float) -> np.ndarray:
        diag = self._solve_cache.get(dt)
        if diag is None:
            diag = 1.0 / (1.0 + dt * (self.params.mu * self.grid.k2 + self.params.alpha))
            self._solve_cache[dt] = diag
        return diag

    # -- pieces ----------------------------------------------------------

    def explicit_rhs(self, uhat: np.ndarray, u_phys: np.ndarray) -> np.ndarray:
        rhs = np.zeros_like(uhat)
        if self.stepper.include_convection:
            rhs -= skew_convection_hat(self.grid, uhat, u_phys)
        if self.params.beta > 0:
            rhs -= self.params.beta * damping_hat(self.grid, u_phys, self.params.varpi)
        if self.f_hat is not None:
            rhs += self.f_hat
        return rhs

    def nudge_hat(self, zeta_hat, da_hat, zeta_phys, da_phys) -> np.ndarray:
        """sigma * P I_theta(Z - zeta), dealiased (explicit feedback)."""
        if self._obs_mask is not None:
            return self.sigma * ((da_hat - zeta_hat) * self._obs_mask)
        from .interpolant import apply_volume_interpolant
        diff = VelocityField(self.grid, da_phys - zeta_phys)
        iv = apply_volume_interpolant(self.interp, diff)
        return self.sigma * leray_hat(self.grid, dealias_hat(self.grid, iv.spectral))

    def check_cfl(self, t: float, dt: float, *phys_fields):
        vmax = 0.0
        for u in phys_fields:
            vmax = max(vmax, float(np.sqrt(np.max(np.sum(u**2, axis=0)))))
        if vmax == 0.0:
            return
        limit = self.stepper.cfl_factor * self.grid.dx / vmax
        if dt > limit:
            raise CFLViolationError(
                f"CFL violation at t={t:.6g}: dt={dt:g} exceeds {limit:.6g} "
                f"(max speed {vmax:.6g})", t=t, dt=dt, dt_limit=limit)

    def _overshoot(self, l2_old: float, new_hat: np.ndarray) -> bool:
        if not np.all(np.isfinite(new_hat.view(float))):
            return True
        l2_new = l2_sq_hat(self.grid, new_hat)
        factor = self.stepper.overshoot_factor**2
        return l2_old > 0 and l2_new > factor * l2_old

    # -- single substep; dw_hat already scaled for this substep ----------

    def _substep_pair(self, zeta_hat, da_hat, dt, dw_hat, t):
        zeta_phys = to_physical(self.grid, zeta_hat)
        da_phys = to_physical(self.grid, da_hat)
        self.check_cfl(t, dt, zeta_phys, da_phys)
        diag = self.implicit_diag(dt)

        rhs_z = self.explicit_rhs(zeta_hat, zeta_phys)
        rhs_d = self.explicit_rhs(da_hat, da_phys)
        if self.sigma > 0 and not self.implicit:
            rhs_d -= self.nudge_hat(zeta_hat, da_hat, zeta_phys, da_phys)

        zin = zeta_hat + dt * rhs_z
        din = da_hat + dt * rhs_d
        if self.noise is not None and dw_hat is not None:
            zin += apply_noise_hat(self.noise, zeta_hat, zeta_phys, dw_hat)
            din += apply_noise_hat(self.noise, da_hat, da_phys, dw_hat)
        zeta_new = leray_hat(self.grid, diag * zin)
        da_new = leray_hat(self.grid, diag * din)
        if self.sigma > 0 and self.implicit:
            s = self.sigma * dt / (1.0 + self.sigma * dt)
            da_new = da_new - s * ((da_new - zeta_new) * self._obs_mask)
        return zeta_new, da_new

    def _substep_truth(self, zeta_hat, dt, dw_hat, t):
        zeta_phys = to_physical(self.grid, zeta_hat)
        self.check_cfl(t, dt, zeta_phys)
        diag = self.implicit_diag(dt)
        zin = zeta_hat + dt * self.explicit_rhs(zeta_hat, zeta_phys)
        if self.noise is not None and dw_hat is not None:
            zin += apply_noise_hat(self.noise, zeta_hat, zeta_phys, dw_hat)
        return leray_hat(self.grid, diag * zin)

    # -- one full step with the overshoot fallback ------------------------

    def step_pair_hat(self, zeta_hat, da_hat, t, rng):
        dw_hat = None
        if self.noise is not None:
            dw_hat = sample_increment_hat(self.noise.spec, self.dt, rng)
        l2z = l2_sq_hat(self.grid, zeta_hat)
        l2d = l2_sq_hat(self.grid, da_hat)
        for halving in range(self.stepper.max_halvings + 1):
            nsub = 2**halving
            dts = self.dt / nsub
            zh, dh = zeta_hat, da_hat
            j = 0
            try:
                for j in range(nsub):
                    sub_dw = None if dw_hat is None else dw_hat / nsub
                    zh, dh = self._substep_pair(zh, dh, dts, sub_dw, t + j * dts)
            except CFLViolationError:
                if halving == 0 and j == 0:
                    raise  # genuine CFL violation of the entry state
                continue  # intermediate state exploded: treat as overshoot
            except FloatingPointError:
                continue
            if not (self._overshoot(l2z, zh) or self._overshoot(l2d, dh)):
                return zh, dh
        bad = "truth" if self._overshoot(l2z, zh) else "assimilated"
        raise BlowUpError(
            f"{bad} system blew up at t={t:.6g} despite {self.stepper.max_halvings} "
            f"dt-halvings", last_good_time=t, system=bad)

    def step_truth_hat(self, zeta_hat, t, rng):
        dw_hat = None
        if self.noise is not None:
            dw_hat = sample_increment_hat(self.noise.spec, self.dt, rng)
        l2z = l2_sq_hat(self.grid, zeta_hat)
        for halving in range(self.stepper.max_halvings + 1):
            nsub = 2**halving
            dts = self.dt / nsub
            zh = zeta_hat
            j = 0
            try:
                for j in range(nsub):
                    sub_dw = None if dw_hat is None else dw_hat / nsub
                    zh = self._substep_truth(zh, dts, sub_dw, t + j * dts)
            except CFLViolationError:
                if halving == 0 and j == 0:
                    raise
                continue
            except FloatingPointError:
                continue
            if not self._overshoot(l2z, zh):
                return zh
        raise BlowUpError(
            f"truth system blew up at t={t:.6g} despite {self.stepper.max_halvings} "
            f"dt-halvings", last_good_time=t, system="truth")


# -- public single-step API -----------------------------------------------


def step_truth(state: TruthState, params: ModelParams, noise: NoiseCoefficient | None,
               stepper: StepperConfig, rng: np.random.Generator) -> TruthState:
    grid = state.zeta.grid
    eng = _Integrator(grid, params, noise, stepper)
    zh = eng.step_truth_hat(state.zeta.spectral, state.t, rng)
    return TruthState(state.t + stepper.dt, VelocityField.from_spectral(grid, zh))


def step_pair(pair: PairState, params: ModelParams, noise: NoiseCoefficient | None,
              config: AssimilationConfig, stepper: StepperConfig,
              rng: np.random.Generator) -> PairState:
    grid = pair.zeta.grid
    eng = _Integrator(grid, params, noise, stepper, config)
    zh, dh = eng.step_pair_hat(pair.zeta.spectral, pair.z_da.spectral, pair.t, rng)
    t = pair.t + stepper.dt
    zeta = VelocityField.from_spectral(grid, zh)
    da = VelocityField.from_spectral(grid, dh)
    err = VelocityField(grid, da.components - zeta.components)
    bundle = NormBundle(err.l2_sq(), err.v_sq(),
                        lp_norm_pow(grid, err.components, params.varpi + 1.0), t)
    return PairState(t, zeta, da, bundle)


# -- full trajectories ------------------------------------------------------


def _record_norms(grid, uhat, u_phys, varpi):
    return (l2_sq_hat(grid, uhat), v_sq_hat(grid, uhat),
            lp_norm_pow(grid, u_phys, varpi + 1.0))


def run_trajectory(params: ModelParams, noise: NoiseCoefficient | None,
                   config: AssimilationConfig, stepper: StepperConfig, seed,
                   snapshot_stride: int | None = None) -> TrajectoryResult:
    """Advance the coupled (truth, assimilated) pair and record norm series.

    ``seed`` may be an int (fed to the documented stream constructor) or a
    ready ``numpy.random.Generator``. One Wiener increment is drawn per step
    and shared by both systems.
    """
    validate_regime(params, noise)
    grid = config.truth_init.grid
    if config.da_init.grid != grid:
        raise ConfigurationError("truth and assimilated fields must share a grid")
    eng = _Integrator(grid, params, noise, stepper, config)
    rng = seed if isinstance(seed, np.random.Generator) else member_rng(seed, 0)

    zh = leray_hat(grid, dealias_hat(grid, config.truth_init.spectral))
    dh = leray_hat(grid, dealias_hat(grid, config.da_init.spectral))

    rec = {k: [] for k in ("t", "zl2", "zv", "zlp", "dl2", "dv", "dlp",
                           "el2", "ev", "elp", "fi", "ivz")}
    snapshots = []
    ivz = 0.0
    v_prev = v_sq_hat(grid, zh)
    nsteps = stepper.n_steps
    varpi = params.varpi

    for n in range(nsteps + 1):
        t = n * stepper.dt
        if n % stepper.record_stride == 0:
            z_phys = to_physical(grid, zh)
            d_phys = to_physical(grid, dh)
            zl2, zv, zlp = _record_norms(grid, zh, z_phys, varpi)
            dl2, dv, dlp = _record_norms(grid, dh, d_phys, varpi)
            eh = dh - zh
            el2 = l2_sq_hat(grid, eh)
            ev = v_sq_hat(grid, eh)
            elp = lp_norm_pow(grid, d_phys - z_phys, varpi + 1.0)
            fi = inner_hat(grid, zh, eng.f_hat) if eng.f_hat is not None else 0.0
            for key, val in zip(("t", "zl2", "zv", "zlp", "dl2", "dv", "dlp",
                                 "el2", "ev", "elp", "fi", "ivz"),
                                (t, zl2, zv, zlp, dl2, dv, dlp, el2, ev, elp, fi, ivz)):
                rec[key].append(val)
            if snapshot_stride and (n // stepper.record_stride) % snapshot_stride == 0:
                snapshots.append((t, VelocityField.from_spectral(grid, zh),
                                  VelocityField.from_spectral(grid, dh)))
        if n == nsteps:
            break
        zh, dh = eng.step_pair_hat(zh, dh, t, rng)
        v_new = v_sq_hat(grid, zh)
        ivz += 0.5 * stepper.dt * (v_prev + v_new)
        v_prev = v_new

    zeta = VelocityField.from_spectral(grid, zh)
    da = VelocityField.from_spectral(grid, dh)
    err = VelocityField(grid, da.components - zeta.components)
    final = PairState(nsteps * stepper.dt, zeta, da,
                      NormBundle(err.l2_sq(), err.v_sq(),
                                 lp_norm_pow(grid, err.components, varpi + 1.0),
                                 nsteps * stepper.dt))
    return TrajectoryResult(
        times=np.array(rec["t"]),
        zeta_l2sq=np.array(rec["zl2"]), zeta_vsq=np.array(rec["zv"]),
        zeta_lp=np.array(rec["zlp"]),
        f_inner=np.array(rec["fi"]), zeta_vsq_integral=np.array(rec["ivz"]),
        da_l2sq=np.array(rec["dl2"]), da_vsq=np.array(rec["dv"]),
        da_lp=np.array(rec["dlp"]),
        err_l2sq=np.array(rec["el2"]), err_vsq=np.array(rec["ev"]),
        err_lp=np.array(rec["elp"]),
        noise_kind=None if eng.noise is None else eng.noise.kind,
        noise_epsilon=0.0 if eng.noise is None else eng.noise.epsilon,
        final=final, snapshots=snapshots,
    )


def run_truth(init: VelocityField, params: ModelParams, noise: NoiseCoefficient | None,
              stepper: StepperConfig, seed,
              snapshot_stride: int | None = None) -> TrajectoryResult:
    """Advance the truth system alone and record its norm series."""
    validate_regime(params, noise)
    grid = init.grid
    eng = _Integrator(grid, params, noise, stepper)
    rng = seed if isinstance(seed, np.random.Generator) else member_rng(seed, 0)
    zh = leray_hat(grid, dealias_hat(grid, init.spectral))

    rec = {k: [] for k in ("t", "zl2", "zv", "zlp", "fi", "ivz")}
    snapshots = []
    ivz = 0.0
    v_prev = v_sq_hat(grid, zh)
    nsteps = stepper.n_steps
    for n in range(nsteps + 1):
        t = n * stepper.dt
        if n % stepper.record_stride == 0:
            z_phys = to_physical(grid, zh)
            zl2, zv, zlp = _record_norms(grid, zh, z_phys, params.varpi)
            fi = inner_hat(grid, zh, eng.f_hat) if eng.f_hat is not None else 0.0
            for key, val in zip(("t", "zl2", "zv", "zlp", "fi", "ivz"),
                                (t, zl2, zv, zlp, fi, ivz)):
                rec[key].append(val)
            if snapshot_stride and (n // stepper.record_stride) % snapshot_stride == 0:
                snapshots.append((t, VelocityField.from_spectral(grid, zh), None))
        if n == nsteps:
            break
        zh = eng.step_truth_hat(zh, t, rng)
        v_new = v_sq_hat(grid, zh)
        ivz += 0.5 * stepper.dt * (v_prev + v_new)
        v_prev = v_new

    final = TruthState(nsteps * stepper.dt, VelocityField.from_spectral(grid, zh))
    return TrajectoryResult(
        times=np.array(rec["t"]),
        zeta_l2sq=np.array(rec["zl2"]), zeta_vsq=np.array(rec["zv"]),
        zeta_lp=np.array(rec["zlp"]),
        f_inner=np.array(rec["fi"]), zeta_vsq_integral=np.array(rec["ivz"]),
        noise_kind=None if eng.noise is None else eng.noise.kind,
        noise_epsilon=0.0 if eng.noise is None else eng.noise.epsilon,
        final=final, snapshots=snapshots,
    )


# -- CSV emission ------------------------------------------------------------

TRAJECTORY_COLUMNS = ("t", "zeta_l2sq", "zeta_vsq", "zeta_lp",
                      "da_l2sq", "err_l2sq", "err_vsq")
TRUTH_COLUMNS = ("t", "zeta_l2sq", "zeta_vsq", "zeta_lp")


def write_trajectory_csv(result: TrajectoryResult, path, header_lines=()) -> None:
    """Trajectory CSV; pair runs use the declared 7-column schema."""
    cols = TRAJECTORY_COLUMNS if result.is_pair else TRUTH_COLUMNS
    arrays = {
        "t": result.times,
        "zeta_l2sq": result.zeta_l2sq, "zeta_vsq": result.zeta_vsq,
        "zeta_lp": result.zeta_lp,
        "da_l2sq": result.da_l2sq, "err_l2sq": result.err_l2sq,
        "err_vsq": result.err_vsq,
    }
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(",".join(cols) + "\n")
        for i in range(len(result.times)):
            fh.write(",".join(f"{arrays[c][i]:.17g}" for c in cols) + "\n")
