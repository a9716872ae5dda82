"""Closed-form admissibility windows for the nudging parameter.

Every guarantee has the shape

    lower < 2*alpha + sigma <= 2*alpha + U(theta),

where the strict lower bound collects noise/forcing/damping constants and the
upper bound U comes from the interpolant inequality. Windows are evaluated
exactly as stated by the underlying estimates; where a guarantee asserts
exponential decay without an explicit rate, the reported rate is the delta=1
proxy (2*alpha + sigma)/4 and is flagged indicative (it is never used as an
acceptance quantity).

Theorem identifiers:

    Subcritical-additive         d=2, 1<varpi<3, state-independent noise
    Subcritical-multiplicative   d=2, 1<varpi<3, Lipschitz noise (p-polynomial)
    Critical-general-d           varpi=3, d in {2,3}; needs 2*mu*beta > 1
    Critical-2d                  varpi=3, d=2
    Supercritical-general        varpi>3, d in {2,3}
    Supercritical-2beta-mu       varpi>3; needs 2*mu*beta > 1
    Pathwise-2d                  additive, d=2, 1<=varpi<=3
    Pathwise-critical            additive, varpi=3; needs 2*mu*beta > 1
    Pathwise-super-upvarpi       additive, varpi>3
    Pathwise-super-beta          additive, varpi>3; needs 2*mu*beta > 1

The 2*mu*beta > 1 hypotheses surface through the sign of the upper bound
(2*mu - 1/beta), so a violating configuration yields an infeasible report
rather than an error; structural mismatches (wrong dim or varpi class, wrong
noise type) raise ConfigurationError.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

from .errors import ConfigurationError
from .interpolant import InterpolantSpec
from .noise import NoiseCoefficient, NoiseConstants
from .operators import ModelParams

THEOREM_IDS = (
    "Subcritical-additive",
    "Subcritical-multiplicative",
    "Critical-general-d",
    "Critical-2d",
    "Supercritical-general",
    "Supercritical-2beta-mu",
    "Pathwise-2d",
    "Pathwise-critical",
    "Pathwise-super-upvarpi",
    "Pathwise-super-beta",
)

EXPONENTIAL = "exponential"
POLYNOMIAL = "p-polynomial"


def compute_upvarpi(mu: float, beta: float, varpi: float) -> float:
    """Supercritical absorption constant

        (varpi-3) / (2*mu*(varpi-1)) * (4 / (mu*beta*(varpi-1)))^(2/(varpi-3)).

    Defined only for varpi > 3 (the exponent is singular at varpi = 3).
    """
    if varpi <= 3:
        raise ConfigurationError("compute_upvarpi requires varpi > 3")
    if mu <= 0 or beta <= 0:
        raise ConfigurationError("compute_upvarpi requires mu > 0 and beta > 0")
    prefactor = (varpi - 3.0) / (2.0 * mu * (varpi - 1.0))
    return prefactor * (4.0 / (mu * beta * (varpi - 1.0))) ** (2.0 / (varpi - 3.0))


def compute_Mhat(K: float, f_dual_norm_sq: float, mu: float, beta: float,
                 varpi: float, L: float, domain_measure: float) -> float:
    """Composite drift constant

        K + ||f||_{V*}^2/mu
          + (beta*(varpi+1)/2)^(-2/(varpi-1)) * ((varpi+1)/(varpi-1))^(-1)
            * L^((varpi+1)/(varpi-1)) * |Q|.

    Requires varpi > 1 (exponents singular at 1); with L = 0 the damping term
    vanishes and Mhat = K + ||f||_{V*}^2 / mu.
    """
    if varpi <= 1:
        raise ConfigurationError("compute_Mhat requires varpi > 1")
    if mu <= 0:
        raise ConfigurationError("compute_Mhat requires mu > 0")
    if K < 0 or L < 0 or f_dual_norm_sq < 0:
        raise ConfigurationError("constants must be nonnegative")
    base = K + f_dual_norm_sq / mu
    if L == 0:
        return base
    if beta <= 0:
        raise ConfigurationError("compute_Mhat requires beta > 0 when L > 0")
    damping_term = (
        (beta * (varpi + 1.0) / 2.0) ** (-2.0 / (varpi - 1.0))
        * ((varpi + 1.0) / (varpi - 1.0)) ** (-1.0)
        * L ** ((varpi + 1.0) / (varpi - 1.0))
        * domain_measure
    )
    return base + damping_term


@dataclass
class ThresholdReport:
    """Admissible sigma window and predicted decay for one guarantee."""

    theorem_id: str
    sigma_lower: float  # strict lower bound on sigma, floored at 0
    sigma_upper: float
    feasible: bool
    predicted_rate: float | None
    rate_type: str
    rate_indicative: bool = False
    sigma: float | None = None
    sigma_in_window: bool | None = None
    inputs: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)


def _require(cond: bool, theorem_id: str, hypothesis: str):
    if not cond:
        raise ConfigurationError(f"{theorem_id}: requires {hypothesis}")


def sigma_window(theorem_id: str,
                 params: ModelParams,
                 noise_constants: NoiseConstants,
                 interpolant: InterpolantSpec,
                 lambda1: float,
                 domain_measure: float,
                 sigma: float | None = None,
                 f_dual_norm_sq: float | None = None) -> ThresholdReport:
    """Evaluate one guarantee's window exactly as stated.

    ``sigma`` is the candidate nudging strength; when given, the predicted
    rate is evaluated at it (and set to None if it falls outside the window).
    When omitted, the rate is evaluated at the upper edge of the window.
    """
    if theorem_id not in THEOREM_IDS:
        raise ConfigurationError(f"unknown theorem_id {theorem_id!r}")
    mu, alpha, beta, varpi, dim = params.mu, params.alpha, params.beta, params.varpi, params.dim
    K, Ktilde, L, _trq, ups_hs = noise_constants
    fsq = params.f_dual_norm_sq() if f_dual_norm_sq is None else float(f_dual_norm_sq)
    c0 = interpolant.require_c0()
    theta = interpolant.theta
    additive = (L == 0.0) and (Ktilde == 0.0)

    upper_mu = mu / (c0 * theta**2)
    upper_damped = (2.0 * mu - 1.0 / beta) / (c0 * theta**2) if beta > 0 else -math.inf
    # the pathwise damped windows carry an extra factor mu, as stated
    upper_damped_pw = mu * (2.0 * mu - 1.0 / beta) / (c0 * theta**2) if beta > 0 else -math.inf

    rate_type = EXPONENTIAL
    indicative = False
    rate_fn = None

    if theorem_id == "Subcritical-additive":
        _require(dim == 2, theorem_id, "d = 2")
        _require(1 < varpi < 3, theorem_id, "1 < varpi < 3")
        _require(additive, theorem_id, "a state-independent noise coefficient (L = 0)")
        lower_x = (4.0 / mu**2) * (K + fsq / mu)
        upper = upper_mu
        indicative = True
        rate_fn = lambda s: (2.0 * alpha + s) / 4.0
    elif theorem_id == "Subcritical-multiplicative":
        _require(dim == 2, theorem_id, "d = 2")
        _require(1 < varpi < 3, theorem_id, "1 < varpi < 3")
        _require(L > 0, theorem_id, "a Lipschitz state-dependent coefficient (L > 0)")
        mhat = compute_Mhat(K, fsq, mu, beta, varpi, L, domain_measure)
        lower_x = (2.0 / mu**2) * (mhat + 1.0) + L
        upper = upper_mu
        rate_type = POLYNOMIAL
    elif theorem_id == "Critical-general-d":
        _require(varpi == 3, theorem_id, "varpi = 3")
        _require(dim in (2, 3), theorem_id, "d in {2, 3}")
        lower_x = L
        upper = upper_damped
        rate_fn = lambda s: 2.0 * alpha + s - L
    elif theorem_id == "Critical-2d":
        _require(varpi == 3, theorem_id, "varpi = 3")
        _require(dim == 2, theorem_id, "d = 2")
        _require(beta > 0, theorem_id, "beta > 0")
        lower_x = (4.0 / mu**2) * (K + fsq / mu + L**2 * domain_measure / (4.0 * beta)) + L
        upper = upper_mu
        indicative = True
        rate_fn = lambda s: (2.0 * alpha + s) / 4.0
    elif theorem_id == "Supercritical-general":
        _require(varpi > 3, theorem_id, "varpi > 3")
        upv = compute_upvarpi(mu, beta, varpi)
        lower_x = 2.0 * upv + L
        upper = upper_mu
        rate_fn = lambda s: 2.0 * alpha + s - 2.0 * upv - L
    elif theorem_id == "Supercritical-2beta-mu":
        _require(varpi > 3, theorem_id, "varpi > 3")
        lower_x = beta + L
        upper = upper_damped
        rate_fn = lambda s: 2.0 * alpha + s - beta - L
    elif theorem_id == "Pathwise-2d":
        _require(dim == 2, theorem_id, "d = 2")
        _require(1 <= varpi <= 3, theorem_id, "1 <= varpi <= 3")
        _require(additive, theorem_id, "a state-independent noise coefficient")
        lower_x = (4.0 / mu**2) * (ups_hs + fsq / mu)
        upper = upper_mu
        rate_fn = lambda s: 2.0 * alpha + s - lower_x
    elif theorem_id == "Pathwise-critical":
        _require(varpi == 3, theorem_id, "varpi = 3")
        _require(additive, theorem_id, "a state-independent noise coefficient")
        lower_x = -math.inf  # only sigma > 0 is required
        upper = upper_damped_pw
        rate_fn = lambda s: 2.0 * alpha + s
    elif theorem_id == "Pathwise-super-upvarpi":
        _require(varpi > 3, theorem_id, "varpi > 3")
        _require(additive, theorem_id, "a state-independent noise coefficient")
        upv = compute_upvarpi(mu, beta, varpi)
        lower_x = 2.0 * upv
        upper = upper_mu
        rate_fn = lambda s: 2.0 * alpha + s - 2.0 * upv
    else:  # Pathwise-super-beta
        _require(varpi > 3, theorem_id, "varpi > 3")
        _require(additive, theorem_id, "a state-independent noise coefficient")
        lower_x = beta
        upper = upper_damped_pw
        rate_fn = lambda s: 2.0 * alpha + s - beta

    sigma_lower = max(0.0, lower_x - 2.0 * alpha)
    sigma_upper = float(upper)
    feasible = (sigma_lower < sigma_upper) and (sigma_upper > 0.0)

    in_window = None
    if sigma is not None:
        in_window = feasible and (sigma_lower < sigma <= sigma_upper) and sigma > 0

    predicted = None
    if rate_type == EXPONENTIAL and rate_fn is not None:
        if sigma is not None:
            if in_window:
                predicted = rate_fn(float(sigma))
        elif feasible:
            predicted = rate_fn(sigma_upper)

    return ThresholdReport(
        theorem_id=theorem_id,
        sigma_lower=sigma_lower,
        sigma_upper=sigma_upper,
        feasible=feasible,
        predicted_rate=predicted,
        rate_type=rate_type,
        rate_indicative=indicative,
        sigma=sigma,
        sigma_in_window=in_window,
        inputs={
            "mu": mu, "alpha": alpha, "beta": beta, "varpi": varpi, "dim": dim,
            "K": K, "Ktilde": Ktilde, "L": L, "upsilon_hs_norm_sq": ups_hs,
            "f_dual_norm_sq": fsq, "c0": c0, "theta": theta,
            "lambda1": lambda1, "domain_measure": domain_measure,
        },
    )


def applicable_theorems(params: ModelParams, noise: NoiseCoefficient) -> list:
    """Theorem ids whose structural hypotheses match (dim, varpi, noise kind)."""
    dim, varpi = params.dim, params.varpi
    additive = noise.kind == "additive"
    out = []
    if dim == 2 and 1 < varpi < 3:
        out.append("Subcritical-additive" if additive else "Subcritical-multiplicative")
    if varpi == 3:
        out.append("Critical-general-d")
        if dim == 2:
            out.append("Critical-2d")
    if varpi > 3:
        out.extend(["Supercritical-general", "Supercritical-2beta-mu"])
    if additive:
        if dim == 2 and 1 <= varpi <= 3:
            out.append("Pathwise-2d")
        if varpi == 3:
            out.append("Pathwise-critical")
        if varpi > 3:
            out.extend(["Pathwise-super-upvarpi", "Pathwise-super-beta"])
    return out


def check_config(params: ModelParams, noise: NoiseCoefficient,
                 interpolant: InterpolantSpec, sigma: float,
                 f_dual_norm_sq: float | None = None) -> list:
    """Evaluate every guarantee applicable to the regime at the given sigma."""
    grid = noise.spec.grid
    consts = noise.constants()
    reports = []
    for tid in applicable_theorems(params, noise):
        reports.append(sigma_window(
            tid, params, consts, interpolant,
            lambda1=grid.lambda1(), domain_measure=grid.domain_measure,
            sigma=sigma, f_dual_norm_sq=f_dual_norm_sq,
        ))
    return reports


def strongest_guarantee(reports) -> ThresholdReport | None:
    """The satisfied guarantee with the best rate (exponential beats polynomial)."""
    satisfied = [r for r in reports if r.sigma_in_window]
    expo = [r for r in satisfied
            if r.rate_type == EXPONENTIAL and r.predicted_rate is not None]
    if expo:
        return max(expo, key=lambda r: r.predicted_rate)
    return satisfied[0] if satisfied else None
