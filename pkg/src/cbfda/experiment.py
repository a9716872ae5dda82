"""Monte-Carlo ensembles, decay-rate fits, and diagnostic summaries.

Members use independent RNG streams derived from the master seed; within a
member the truth and assimilated systems share one stream (that is the
coupling the error estimates assume). Aggregation is a deterministic
reduction in member-index order. Members that blow up are excluded and
counted; more than 10% exclusions fails the whole run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import AssimilationConfig, StepperConfig, TrajectoryResult, run_trajectory, run_truth
from .errors import BlowUpError, ConfigurationError, EnsembleError, FitError
from .noise import NoiseCoefficient, member_rng
from .operators import ModelParams

VALUE_FLOOR = 1e-13  # numerical noise floor for rate fits
MAX_EXCLUDED_FRACTION = 0.10


@dataclass
class EnsembleResult:
    n_members: int
    times: np.ndarray
    mean_err_l2sq: np.ndarray | None
    stderr: np.ndarray | None
    mean_zeta_l2sq_p: dict
    config_echo: dict = field(default_factory=dict)
    n_excluded: int = 0
    member_err_l2sq: np.ndarray | None = None     # (members, times)
    member_zeta_l2sq: np.ndarray | None = None
    member_vsq_integral: np.ndarray | None = None
    truth_only: bool = False

    def stderr_rel(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.where(self.mean_err_l2sq > 0,
                           self.stderr / np.where(self.mean_err_l2sq > 0,
                                                  self.mean_err_l2sq, 1.0), 0.0)
        return rel


def run_ensemble(params: ModelParams, noise: NoiseCoefficient | None,
                 config: AssimilationConfig | None, stepper: StepperConfig,
                 n_members: int, master_seed: int,
                 p_orders=(1, 2), config_echo: dict | None = None) -> EnsembleResult:
    """Ensemble of coupled pairs; see run_truth_ensemble for truth-only runs."""
    if n_members < 2:
        raise ConfigurationError("n_members must be >= 2")
    if config is None:
        raise ConfigurationError(
            "run_ensemble needs an AssimilationConfig; use run_truth_ensemble")
    kept_err, kept_zeta, kept_ivz = [], [], []
    times = None
    excluded = 0
    for member in range(n_members):
        rng = member_rng(master_seed, member)
        try:
            traj = run_trajectory(params, noise, config, stepper, rng)
        except BlowUpError:
            excluded += 1
            continue
        if times is None:
            times = traj.times
        kept_err.append(traj.err_l2sq)
        kept_zeta.append(traj.zeta_l2sq)
        kept_ivz.append(traj.zeta_vsq_integral)
    return _reduce(n_members, excluded, times, kept_err, kept_zeta, kept_ivz,
                   p_orders, config_echo, truth_only=False)


def run_truth_ensemble(init, params: ModelParams, noise: NoiseCoefficient | None,
                       stepper: StepperConfig, n_members: int, master_seed: int,
                       p_orders=(1, 2), config_echo: dict | None = None) -> EnsembleResult:
    """Truth-only ensemble (moment studies)."""
    if n_members < 2:
        raise ConfigurationError("n_members must be >= 2")
    kept_zeta, kept_ivz = [], []
    times = None
    excluded = 0
    for member in range(n_members):
        rng = member_rng(master_seed, member)
        try:
            traj = run_truth(init, params, noise, stepper, rng)
        except BlowUpError:
            excluded += 1
            continue
        if times is None:
            times = traj.times
        kept_zeta.append(traj.zeta_l2sq)
        kept_ivz.append(traj.zeta_vsq_integral)
    return _reduce(n_members, excluded, times, None, kept_zeta, kept_ivz,
                   p_orders, config_echo, truth_only=True)


def _reduce(n_members, excluded, times, kept_err, kept_zeta, kept_ivz,
            p_orders, config_echo, truth_only):
    kept = len(kept_zeta)
    if excluded > MAX_EXCLUDED_FRACTION * n_members or kept < 2:
        raise EnsembleError(
            f"{excluded}/{n_members} members excluded (limit "
            f"{MAX_EXCLUDED_FRACTION:.0%}); ensemble rejected")
    zeta = np.asarray(kept_zeta)
    ivz = np.asarray(kept_ivz)
    moments = {int(p) if float(p).is_integer() else float(p):
               np.mean(zeta ** float(p), axis=0) for p in p_orders}
    if truth_only:
        return EnsembleResult(
            n_members=kept, times=times, mean_err_l2sq=None, stderr=None,
            mean_zeta_l2sq_p=moments, config_echo=config_echo or {},
            n_excluded=excluded, member_err_l2sq=None, member_zeta_l2sq=zeta,
            member_vsq_integral=ivz, truth_only=True)
    err = np.asarray(kept_err)
    mean = err.mean(axis=0)
    stderr = err.std(axis=0, ddof=1) / np.sqrt(kept)
    return EnsembleResult(
        n_members=kept, times=times, mean_err_l2sq=mean, stderr=stderr,
        mean_zeta_l2sq_p=moments, config_echo=config_echo or {},
        n_excluded=excluded, member_err_l2sq=err, member_zeta_l2sq=zeta,
        member_vsq_integral=ivz, truth_only=False)


# -- rate fitting -----------------------------------------------------------


@dataclass
class RateFit:
    rate: float
    intercept: float
    r_squared: float
    window: tuple
    kind: str  # exponential | polynomial
    n_samples: int = 0


def _masked_samples(times, values, window, floor, require_positive_t=False):
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    mask = values > floor
    if require_positive_t:
        mask &= times > 0
    if window is not None:
        t0, t1 = window
        if require_positive_t and t0 <= 0:
            raise FitError("polynomial fits need a window with t_start > 0")
        mask &= (times >= t0) & (times <= t1)
    if mask.sum() < 8:
        raise FitError(f"need >= 8 samples above the floor, found {int(mask.sum())}")
    return times[mask], values[mask]


def _least_squares(x, y):
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else max(0.0, 1.0 - ss_res / ss_tot)
    return float(slope), float(intercept), r2


def fit_exponential_rate(times, values, window=None, floor=VALUE_FLOOR) -> RateFit:
    """Least squares on (t, ln v); rate = -slope."""
    t, v = _masked_samples(times, values, window, floor)
    slope, intercept, r2 = _least_squares(t, np.log(v))
    win = (float(t[0]), float(t[-1])) if window is None else (float(window[0]), float(window[1]))
    return RateFit(-slope, intercept, r2, win, "exponential", len(t))


def fit_polynomial_rate(times, values, window=None, floor=VALUE_FLOOR) -> RateFit:
    """Least squares on (ln t, ln v); rate = -slope = the decay power."""
    t, v = _masked_samples(times, values, window, floor, require_positive_t=True)
    slope, intercept, r2 = _least_squares(np.log(t), np.log(v))
    win = (float(t[0]), float(t[-1])) if window is None else (float(window[0]), float(window[1]))
    return RateFit(-slope, intercept, r2, win, "polynomial", len(t))


# -- moment tracking ----------------------------------------------------------


@dataclass
class MomentReport:
    p_orders: tuple
    series: dict          # p -> E||zeta(t)||^{2p}
    bounded: dict         # p -> bool
    first_quarter: dict
    last_quarter: dict

    @property
    def verdict(self) -> str:
        return "bounded" if all(self.bounded.values()) else "growing"


def moment_tracker(ensemble: EnsembleResult, p_orders=(1, 2)) -> MomentReport:
    """E||zeta(t)||_2^(2p) per order; 'bounded' when the last-quarter time
    average stays within 1.5x the first-quarter average."""
    for p in p_orders:
        if not (1 <= p <= 4):
            raise ConfigurationError("p_orders must lie in [1, 4]")
    if ensemble.member_zeta_l2sq is None:
        raise ConfigurationError("ensemble carries no truth-norm records")
    zeta = ensemble.member_zeta_l2sq
    n = zeta.shape[1]
    q = max(1, n // 4)
    series, bounded, first, last = {}, {}, {}, {}
    for p in p_orders:
        s = np.mean(zeta ** float(p), axis=0)
        head = float(np.mean(s[:q]))
        tail = float(np.mean(s[-q:]))
        series[p] = s
        first[p] = head
        last[p] = tail
        bounded[p] = tail <= 1.5 * head or tail <= 0
    return MomentReport(tuple(p_orders), series, bounded, first, last)


# -- weighted (Foias-Prodi style) contraction diagnostic ----------------------


@dataclass
class WeightedDiagnostic:
    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    bound: np.ndarray
    ok: bool
    delta: float


def weighted_contraction_diagnostic(data, params: ModelParams, sigma: float,
                                    delta: float, L: float = 0.0,
                                    dt_allowance: float = 0.10) -> WeightedDiagnostic:
    """Ensemble mean of exp(rho(t)) ||z(t)||_2^2 against ||z(0)||_2^2.

    rho(t) = ((2*alpha + sigma)/(1 + delta) - L) t - (2/mu) int_0^t ||zeta||_V^2
    with the integral accumulated stepwise along each member's truth path.
    The admissible bound is ||z0||^2 (1 + 5*stderr_rel + dt allowance).
    """
    if delta < 0:
        raise ConfigurationError("delta must be >= 0")
    if isinstance(data, TrajectoryResult):
        if data.err_l2sq is None or data.zeta_vsq_integral is None:
            raise ConfigurationError("diagnostic unavailable: missing V-norm records")
        err = data.err_l2sq[None, :]
        ivz = data.zeta_vsq_integral[None, :]
        times = data.times
    else:
        if data.member_err_l2sq is None or data.member_vsq_integral is None:
            raise ConfigurationError("diagnostic unavailable: missing V-norm records")
        err = data.member_err_l2sq
        ivz = data.member_vsq_integral
        times = data.times
    lam = (2.0 * params.alpha + sigma) / (1.0 + delta) - L
    rho = lam * times[None, :] - (2.0 / params.mu) * ivz
    weighted = np.exp(rho) * err
    mean = weighted.mean(axis=0)
    m = weighted.shape[0]
    stderr = weighted.std(axis=0, ddof=1) / np.sqrt(m) if m > 1 else np.zeros_like(mean)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(mean > 0, stderr / np.where(mean > 0, mean, 1.0), 0.0)
    z0 = float(err[:, 0].mean())
    bound = z0 * (1.0 + 5.0 * rel + dt_allowance)
    ok = bool(np.all(mean <= bound))
    return WeightedDiagnostic(times, mean, stderr, bound, ok, delta)


def split_half_consistency(ensemble: EnsembleResult) -> float:
    """Max over time of |mean_A - mean_B| / combined stderr for member halves."""
    err = ensemble.member_err_l2sq
    if err is None or err.shape[0] < 4:
        raise ConfigurationError("need >= 4 members with error records")
    half = err.shape[0] // 2
    a, b = err[:half], err[half:2 * half]
    ma, mb = a.mean(axis=0), b.mean(axis=0)
    se = np.sqrt(a.std(axis=0, ddof=1) ** 2 / half + b.std(axis=0, ddof=1) ** 2 / half)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(se > 0, np.abs(ma - mb) / np.where(se > 0, se, 1.0), 0.0)
    return float(np.max(ratio))


def write_ensemble_csv(result: EnsembleResult, path, header_lines=()) -> None:
    cols = ["t"]
    arrays = [result.times]
    if not result.truth_only:
        cols += ["mean_err_l2sq", "stderr"]
        arrays += [result.mean_err_l2sq, result.stderr]
    for p in sorted(result.mean_zeta_l2sq_p):
        cols.append(f"mean_zeta_l2sq_p{p}")
        arrays.append(result.mean_zeta_l2sq_p[p])
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(",".join(cols) + "\n")
        for i in range(len(result.times)):
            fh.write(",".join(f"{a[i]:.17g}" for a in arrays) + "\n")
