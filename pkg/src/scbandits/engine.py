"""Round-by-round simulation of the two bandit algorithms.

Both algorithms are instances of the same loop: maintain a cumulative loss
estimate, map it through the conjugate-gradient potential to an expected
action, randomize around that action, observe one scalar loss, and feed an
unbiased loss-vector estimate back into the accumulator.

* perturbed-leader variant ("scftpl"): the played action is the linear
  minimizer over the body of eta * cumulative_estimate - perturbation, and
  the estimate is Q^{-1} A times the scalar loss;
* Dikin-pole variant ("scribble"): the played action is one of the 2d poles
  of the Dikin ellipsoid at the expected action, chosen uniformly, and the
  estimate is d * H(x) (A - x) times the scalar loss.

A run is strictly sequential; independent seeds parallelize at the harness
level. Given (seed, config, losses) a run is bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .action_sets import (
    ActionSetModel,
    BALL,
    BoundaryError,
    HYPERCUBE,
    barrier_hessian,
    conjugate_gradient,
    conjugate_value,
    dikin_pole,
)
from .estimation import KFunctionCache, local_norm_sq, scribble_estimate
from .perturbations import PerturbationSampler
from .rng import gaussians

SCFTPL = "scftpl"
SCRIBBLE = "scribble"

_LOSS_SLACK = 1e-9


@dataclass(frozen=True)
class AlgorithmSpec:
    """Which algorithm to run, on which body, at which learning rate.

    ``learning_rate`` is either a positive float or the string "auto", which
    resolves from (d, n) when the run starts: sqrt(2 ln n / n) for the
    perturbed-leader variant on the hypercube and (1/d) sqrt(2 ln n / (3n))
    on the ball; the Dikin-pole variant balances its d^2 estimator variance
    with (1/d) sqrt(parameter * ln n / n).
    """

    variant: str
    action_set: ActionSetModel
    learning_rate: float | str = "auto"

    def __post_init__(self) -> None:
        if self.variant not in (SCFTPL, SCRIBBLE):
            raise ValueError(f"unknown algorithm variant {self.variant!r}")
        if isinstance(self.learning_rate, str):
            if self.learning_rate != "auto":
                raise ValueError(f"learning_rate must be positive or 'auto', got {self.learning_rate!r}")
        elif not (float(self.learning_rate) > 0.0):
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate!r}")


def resolve_learning_rate(spec: AlgorithmSpec, horizon: int) -> float:
    """Concrete eta for a horizon, resolving the "auto" schedules."""
    if not isinstance(spec.learning_rate, str):
        return float(spec.learning_rate)
    n = int(horizon)
    if n < 2:
        raise ValueError("auto learning rate needs a horizon of at least 2")
    log_n = math.log(n)
    if spec.variant == SCFTPL:
        if spec.action_set.kind == HYPERCUBE:
            return math.sqrt(2.0 * log_n / n)
        return math.sqrt(2.0 * log_n / (3.0 * n)) / spec.action_set.dimension
    theta = spec.action_set.barrier_parameter
    return math.sqrt(theta * log_n / n) / spec.action_set.dimension


@dataclass
class RoundRecord:
    """State of one round: everything needed to audit the run afterwards."""

    t: int
    y_hat_cum: np.ndarray      # cumulative estimate entering the round
    x: np.ndarray              # expected action
    action: np.ndarray         # played action
    scalar_loss: float
    y_hat: np.ndarray          # loss-vector estimate produced this round
    local_norm_sq: float       # ||y_hat||^2 in the inverse-Hessian norm at x
    step_violation: bool       # 2 eta ||y_hat||_x > 1 this round
    bregman: float | None = None


class AbortedRunError(RuntimeError):
    """Run stopped on a numerically singular covariance; carries the trace."""

    def __init__(self, message: str, records: list[RoundRecord]):
        super().__init__(message)
        self.records = records


def _check_scalar_loss(value: float, t: int) -> float:
    if abs(value) > 1.0 + _LOSS_SLACK:
        raise ValueError(
            f"round {t}: scalar loss {value!r} exceeds the [-1, 1] normalization; "
            f"losses must satisfy sup_a |<y, a>| <= 1"
        )
    return float(value)


def run_scftpl(spec: AlgorithmSpec, losses, rng: np.random.Generator,
               sampler: PerturbationSampler | None = None,
               k_cache: KFunctionCache | None = None) -> list[RoundRecord]:
    """Run the perturbed-leader algorithm against an oblivious loss sequence.

    ``losses`` is an (n, d) array fixed before the run. ``sampler`` and
    ``k_cache`` may be shared across runs (both are read-only here apart
    from cache extension); omitted, they are built privately.

    The round body is written inline so each round costs a handful of O(d)
    vector operations; the expressions mirror the module-level operations
    (linear_minimizer, conjugate_gradient, covariance/apply, local norms)
    and the test suite pins the agreement.
    """
    if spec.variant != SCFTPL:
        raise ValueError("run_scftpl requires a perturbed-leader spec")
    aset = spec.action_set
    losses = np.asarray(losses, dtype=float)
    if losses.ndim != 2 or losses.shape[1] != aset.dimension:
        raise ValueError(f"losses must have shape (n, {aset.dimension})")
    n = losses.shape[0]
    d = aset.dimension
    eta = resolve_learning_rate(spec, n)
    if sampler is None:
        sampler = PerturbationSampler.for_set(aset)
    if sampler.action_set != aset:
        raise ValueError(
            f"sampler was built for {sampler.action_set}, run targets {aset}")
    if aset.kind == BALL:
        if sampler.radial_table is None:
            raise ValueError("ball runs need a sampler with a radial table")
        if d >= 2 and k_cache is None:
            k_cache = KFunctionCache(d)
        if k_cache is not None and k_cache.d != d:
            raise ValueError(f"K cache was built for d={k_cache.d}, run targets d={d}")
        return _run_scftpl_ball(aset, losses, eta, rng, sampler.radial_table, k_cache)
    return _run_scftpl_hypercube(aset, losses, eta, rng)


def _run_scftpl_hypercube(aset, losses, eta, rng) -> list[RoundRecord]:
    n, d = losses.shape
    y_hat_cum = np.zeros(d)
    records: list[RoundRecord] = []
    for t in range(1, n + 1):
        theta = -eta * y_hat_cum
        u = np.maximum(rng.random(d), 2.0**-54)
        xi = (1.0 - 2.0 * u) / (2.0 * u * (u - 1.0))
        # argmin_a <a, eta Yhat - xi> = sign(theta + xi) coordinatewise (+1 at ties)
        action = np.where(theta + xi >= 0.0, 1.0, -1.0)
        x = theta / (1.0 + np.sqrt(1.0 + theta * theta))
        scalar_loss = _check_scalar_loss(float(losses[t - 1] @ action), t)
        residual = 1.0 - x * x
        if residual.min() < 1e-10:
            raise AbortedRunError(
                f"round {t}: expected action within 1e-10 of a vertex; "
                f"covariance numerically singular", records)
        weighted = x / residual
        alpha = float(x @ weighted)
        cross = float(action @ weighted)
        y_hat = (action / residual - weighted * (cross / (1.0 + alpha))) * scalar_loss
        hess_diag = 2.0 * (1.0 + x * x) / (residual * residual)
        norm_sq = float(y_hat @ (y_hat / hess_diag))
        records.append(RoundRecord(
            t=t, y_hat_cum=y_hat_cum, x=x, action=action,
            scalar_loss=scalar_loss, y_hat=y_hat, local_norm_sq=norm_sq,
            step_violation=bool(2.0 * eta * math.sqrt(max(norm_sq, 0.0)) > 1.0),
        ))
        y_hat_cum = y_hat_cum + y_hat
    return records


def _run_scftpl_ball(aset, losses, eta, rng, radial_table, k_cache) -> list[RoundRecord]:
    n, d = losses.shape
    gauss_count = 2 * ((d + 1) // 2)
    y_hat_cum = np.zeros(d)
    records: list[RoundRecord] = []
    for t in range(1, n + 1):
        theta = -eta * y_hat_cum
        theta_norm = math.sqrt(float(theta @ theta))
        # direction x speed draw, consuming the stream exactly like sample_ball
        normal = gaussians(rng, gauss_count)[:d]
        normal_norm = math.sqrt(float(normal @ normal))
        direction = normal / (normal_norm if normal_norm > 0.0 else 1.0)
        u = rng.random()
        speed = radial_table.inverse_scalar(u if u > 2.0**-54 else 2.0**-54)
        drifted = theta + direction * speed
        drift_norm = math.sqrt(float(drifted @ drifted))
        if drift_norm > 0.0:
            action = drifted / drift_norm
        else:
            action = np.zeros(d)
            action[0] = 1.0
        x = theta / (1.0 + math.sqrt(1.0 + theta_norm * theta_norm))
        scalar_loss = _check_scalar_loss(float(losses[t - 1] @ action), t)
        if d == 1:
            y_hat = action * scalar_loss
        elif theta_norm < 1e-14:
            y_hat = (d * scalar_loss) * action
        else:
            k = k_cache(theta_norm)
            coeff = 1.0 / (1.0 - k) - (d - 1.0) / k
            proj = float(action @ theta) / (theta_norm * theta_norm)
            y_hat = ((d - 1.0) / k * action + (coeff * proj) * theta) * scalar_loss
        x_sq = float(x @ x)
        if 1.0 - x_sq < 1e-10:
            raise AbortedRunError(
                f"round {t}: expected action within 1e-10 of the sphere; "
                f"local geometry numerically singular", records)
        hess_a = 2.0 / (1.0 - x_sq)
        hess_b = 4.0 / ((1.0 - x_sq) * (1.0 - x_sq))
        correction = hess_b / (hess_a * (hess_a + hess_b * x_sq))
        norm_sq = float(y_hat @ y_hat) / hess_a - correction * float(x @ y_hat) ** 2
        records.append(RoundRecord(
            t=t, y_hat_cum=y_hat_cum, x=x, action=action,
            scalar_loss=scalar_loss, y_hat=y_hat, local_norm_sq=norm_sq,
            step_violation=bool(2.0 * eta * math.sqrt(max(norm_sq, 0.0)) > 1.0),
        ))
        y_hat_cum = y_hat_cum + y_hat
    return records


def run_scribble(spec: AlgorithmSpec, losses, rng: np.random.Generator) -> list[RoundRecord]:
    """Run the Dikin-pole algorithm against an oblivious loss sequence.

    Per round this consumes one integer draw selecting among the 2d poles
    (index i = draw % d, sign +1 iff draw < d).
    """
    if spec.variant != SCRIBBLE:
        raise ValueError("run_scribble requires a Dikin-pole spec")
    aset = spec.action_set
    losses = np.asarray(losses, dtype=float)
    if losses.ndim != 2 or losses.shape[1] != aset.dimension:
        raise ValueError(f"losses must have shape (n, {aset.dimension})")
    n = losses.shape[0]
    eta = resolve_learning_rate(spec, n)
    d = aset.dimension

    y_hat_cum = np.zeros(d)
    records: list[RoundRecord] = []
    for t in range(1, n + 1):
        theta = -eta * y_hat_cum
        x = conjugate_gradient(aset, theta)
        draw = int(rng.integers(0, 2 * d))
        index, sign = draw % d, (1 if draw < d else -1)
        try:
            action = dikin_pole(aset, x, index, sign)
            ctx = barrier_hessian(aset, x)
        except BoundaryError as exc:
            raise AbortedRunError(f"round {t}: {exc}", records) from exc
        scalar_loss = _check_scalar_loss(float(losses[t - 1] @ action), t)
        y_hat = scribble_estimate(aset, x, action, scalar_loss, ctx=ctx)
        norm_sq = local_norm_sq(ctx, y_hat, inverse=True)
        records.append(RoundRecord(
            t=t, y_hat_cum=y_hat_cum.copy(), x=x, action=action,
            scalar_loss=scalar_loss, y_hat=y_hat, local_norm_sq=norm_sq,
            step_violation=bool(2.0 * eta * math.sqrt(max(norm_sq, 0.0)) > 1.0),
        ))
        y_hat_cum = y_hat_cum + y_hat
    return records


def run(spec: AlgorithmSpec, losses, rng: np.random.Generator, **kwargs) -> list[RoundRecord]:
    """Dispatch on the spec's variant."""
    if spec.variant == SCFTPL:
        return run_scftpl(spec, losses, rng, **kwargs)
    return run_scribble(spec, losses, rng)


def regret(records: list[RoundRecord], losses, competitor) -> float:
    """Realized regret of a trace against a fixed competitor point.

    sum_t <y_t, A_t> - sum_t <y_t, u>. Expectations over the learner's
    randomness are taken by averaging this quantity over seeds at the
    harness level.
    """
    losses = np.asarray(losses, dtype=float)
    if len(records) != losses.shape[0]:
        raise ValueError("records and losses must have matching length")
    competitor = np.asarray(competitor, dtype=float)
    played = sum(float(losses[i] @ records[i].action) for i in range(len(records)))
    return played - float(losses.sum(axis=0) @ competitor)


def cumulative_regret(records: list[RoundRecord], losses, competitor) -> np.ndarray:
    """Per-round running sum of <y_t, A_t - u>, as an (n,) array."""
    losses = np.asarray(losses, dtype=float)
    competitor = np.asarray(competitor, dtype=float)
    per_round = np.array([
        float(losses[i] @ (records[i].action - competitor)) for i in range(len(records))
    ])
    return np.cumsum(per_round)


def bregman_diagnostic(aset: ActionSetModel, eta: float, records: list[RoundRecord]) -> np.ndarray:
    """Per-round conjugate Bregman divergence along the trace.

    B(-eta Yhat_t, -eta Yhat_{t-1}) computed through the closed-form
    conjugate value and gradient; each term is nonnegative by convexity, and
    whenever the round satisfied the step condition it is bounded by
    eta^2 * ||y_hat||^2 in the round's local norm.
    """
    eta = float(eta)
    out = np.empty(len(records))
    for i, rec in enumerate(records):
        prev = -eta * rec.y_hat_cum
        curr = prev - eta * rec.y_hat
        grad_prev = conjugate_gradient(aset, prev)
        out[i] = (conjugate_value(aset, curr) - conjugate_value(aset, prev)
                  + eta * float(rec.y_hat @ grad_prev))
    return out
