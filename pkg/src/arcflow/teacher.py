"""Flow-matching teachers over Gaussian-mixture data.

The data distribution is a J-component Gaussian mixture with isotropic
component covariances sigma_j^2 I.  The noising path interpolates linearly
between a data sample x0 and a standard normal sample x1:

    x_t = (1 - t) x0 + t x1,     t in [0, 1]

so t = 1 is pure noise and t = 0 is data.  The marginal velocity field that
flow matching trains toward is E[x1 - x0 | x_t = x], and for this family it
is available in closed form.  Conditioned on component j, x_t is Gaussian
with mean a mu_j and scale s_j^2 = a^2 sigma_j^2 + b^2 (a = 1 - t, b = t),
which gives

    u_j(x, t) = ((b - a sigma_j^2) / s_j^2) (x - a mu_j) - mu_j
    u(x, t)   = sum_j r_j(x, t) u_j(x, t)

with posterior responsibilities r_j proportional to
w_j N(x; a mu_j, s_j^2 I), evaluated in log space for stability.

Useful identities: u(x, 1) = x - E[x0], and u(x, 0) = -x.

The same module hosts the discretized reference integrator (plain Euler down
the time axis) and an optional neural teacher trained with conditional flow
matching on the same data, for runs that want a learned field instead of the
closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError, InvalidProblemError, NumericError
from .momentum import LatentState
from .nnet import MomentumParamGrads, StudentNet, adam_step, init_optim_state

# Component scales below this would make early-time responsibilities
# numerically degenerate.
STD_FLOOR = 1e-3

WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class GmmTeacherSpec:
    """Gaussian mixture data distribution: weights (J,), means (J, D),
    isotropic stds (J,)."""

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        mu = np.asarray(self.means, dtype=float)
        sd = np.asarray(self.stds, dtype=float)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "stds", sd)
        if w.ndim != 1 or sd.ndim != 1 or mu.ndim != 2:
            raise InvalidProblemError(
                "weights (J,), means (J, D), stds (J,) expected"
            )
        j = w.shape[0]
        if j < 1 or mu.shape[0] != j or sd.shape[0] != j:
            raise InvalidProblemError(
                f"component count mismatch: weights {w.shape}, "
                f"means {mu.shape}, stds {sd.shape}"
            )
        if not (np.isfinite(w).all() and np.isfinite(mu).all()
                and np.isfinite(sd).all()):
            raise InvalidProblemError("mixture parameters must be finite")
        if (w < 0.0).any() or abs(float(w.sum()) - 1.0) > WEIGHT_TOL:
            raise InvalidProblemError(
                f"mixture weights must be a simplex within {WEIGHT_TOL}"
            )
        if (sd < STD_FLOOR).any():
            raise InvalidProblemError(
                f"component stds must be >= {STD_FLOOR}"
            )

    @property
    def num_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def ring_spec(components=8, radius=2.0, std=0.25, dim=2) -> GmmTeacherSpec:
    """Equal-weight mixture with means evenly spaced on a circle of the given
    radius in the first two coordinates."""
    if dim < 2:
        raise InvalidProblemError("ring layout needs dim >= 2")
    angles = 2.0 * np.pi * np.arange(components) / components
    means = np.zeros((components, dim))
    means[:, 0] = radius * np.cos(angles)
    means[:, 1] = radius * np.sin(angles)
    weights = np.full(components, 1.0 / components)
    stds = np.full(components, float(std))
    return GmmTeacherSpec(weights, means, stds)


def sample_data(spec: GmmTeacherSpec, rng: np.random.Generator,
                count: int) -> np.ndarray:
    """Draw count samples from the mixture; component choice first, then the
    Gaussian draws, so consumers relying on stream position stay stable."""
    idx = rng.choice(spec.num_components, size=count, p=spec.weights)
    noise = rng.standard_normal((count, spec.dim))
    return spec.means[idx] + spec.stds[idx][:, None] * noise


def gmm_velocity(spec: GmmTeacherSpec, x, t) -> np.ndarray:
    """Closed-form marginal velocity E[x1 - x0 | x_t = x] at time t.

    x has shape (..., D); t is a scalar or an array matching the leading
    dimensions of x.  Responsibilities are computed in log space with a max
    shift before exponentiation.
    """
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    a = 1.0 - t
    b = t
    # shapes: append a component axis j
    a_j = a[..., None]
    b_j = b[..., None]
    var = a_j ** 2 * spec.stds ** 2 + b_j ** 2          # (..., J)
    diff = x[..., None, :] - a_j[..., None] * spec.means  # (..., J, D)
    sq = np.einsum("...jd,...jd->...j", diff, diff)
    log_r = (np.log(spec.weights) - 0.5 * sq / var
             - 0.5 * spec.dim * np.log(var))
    log_r = log_r - log_r.max(axis=-1, keepdims=True)
    resp = np.exp(log_r)
    resp /= resp.sum(axis=-1, keepdims=True)
    coef = (b_j - a_j * spec.stds ** 2) / var           # (..., J)
    comp_vel = coef[..., None] * diff - spec.means       # (..., J, D)
    return np.einsum("...j,...jd->...d", resp, comp_vel)


class AnalyticGmmTeacher:
    """Closed-form teacher: velocity field plus data sampling for a mixture
    spec.  Matches the duck type the distillation loop expects."""

    def __init__(self, spec: GmmTeacherSpec):
        self.spec = spec

    @property
    def dim(self) -> int:
        return self.spec.dim

    def velocity(self, x, t) -> np.ndarray:
        return gmm_velocity(self.spec, x, t)

    def sample_data(self, rng, count) -> np.ndarray:
        return sample_data(self.spec, rng, count)


@dataclass(frozen=True)
class TrajectoryRecord:
    """A discrete trajectory from noise (t = 1) to data (t = 0).

    states hold strictly decreasing times starting at exactly 1.0 and ending
    at exactly 0.0; step_count is the number of integrator steps taken.
    """

    states: tuple
    step_count: int
    seed: int | None = None

    def __post_init__(self):
        states = tuple(self.states)
        object.__setattr__(self, "states", states)
        if len(states) < 2:
            raise InvalidParameterError("a trajectory needs at least two states")
        times = np.array([s.t for s in states])
        if times[0] != 1.0 or times[-1] != 0.0:
            raise InvalidParameterError(
                f"trajectory must run from t=1 to t=0, got "
                f"[{times[0]}, {times[-1]}]"
            )
        if not (np.diff(times) < 0.0).all():
            raise InvalidParameterError("trajectory times must strictly decrease")
        shape = states[0].x.shape
        if any(s.x.shape != shape for s in states):
            raise InvalidParameterError("trajectory states must share a shape")

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    @property
    def positions(self) -> np.ndarray:
        return np.stack([s.x for s in self.states])

    @property
    def endpoint(self) -> np.ndarray:
        return self.states[-1].x


def euler_sample(velocity_field, x_start, steps, seed=None) -> TrajectoryRecord:
    """Integrate dx = -u(x, t) dt from t = 1 to t = 0 with a uniform Euler
    grid of the given step count.  Grid times are (steps - i) / steps so the
    endpoints are exact."""
    steps = int(steps)
    if steps < 1:
        raise InvalidParameterError("need at least one integration step")
    x = np.asarray(x_start, dtype=float)
    states = [LatentState(x, 1.0)]
    for i in range(steps):
        t_now = (steps - i) / steps
        t_next = (steps - i - 1) / steps
        u = velocity_field(x, t_now)
        x = x - u * (t_now - t_next)
        if not np.isfinite(x).all():
            raise NumericError(
                f"non-finite state at integration step {i} (t={t_next:.6f})"
            )
        states.append(LatentState(x, t_next))
    return TrajectoryRecord(tuple(states), steps, seed)


@dataclass(frozen=True)
class CfmTrainConfig:
    """Training knobs for the optional neural teacher."""

    total_steps: int = 2000
    batch: int = 128
    base_lr: float = 1e-3

    def __post_init__(self):
        if self.total_steps < 0 or self.batch < 1 or self.base_lr <= 0:
            raise InvalidParameterError("bad teacher training config")


class NeuralTeacher:
    """A trained velocity net wrapped with the teacher duck type; data
    sampling still comes from the underlying mixture spec."""

    def __init__(self, net: StudentNet, spec: GmmTeacherSpec):
        self.net = net
        self.spec = spec

    @property
    def dim(self) -> int:
        return self.spec.dim

    def velocity(self, x, t) -> np.ndarray:
        theta = self.net.forward(x, t)
        return theta.base_velocities[..., 0, :]

    def sample_data(self, rng, count) -> np.ndarray:
        return sample_data(self.spec, rng, count)


def train_cfm_teacher(net: StudentNet, spec: GmmTeacherSpec,
                      config: CfmTrainConfig,
                      rng: np.random.Generator):
    """Train a plain velocity net with conditional flow matching.

    The regression target for a pair (x0, x1) at time t is x1 - x0 evaluated
    at x_t on the linear path; the minimizer of the expected loss is the
    marginal field gmm_velocity computes exactly.  The net must be the
    degenerate one-mode, momentum-frozen variant so its output is a single
    velocity vector.  Returns (NeuralTeacher, per-step losses); zero steps
    returns the net untouched.
    """
    if net.config.num_modes != 1 or net.config.gamma_mode != "frozen_one":
        raise InvalidParameterError(
            "teacher net must be one-mode with momentum frozen at 1 so it "
            "reduces to a plain velocity field"
        )
    if net.config.dim != spec.dim:
        raise InvalidParameterError(
            f"net dim {net.config.dim} != data dim {spec.dim}"
        )
    opt = init_optim_state(net)
    losses = []
    for step_idx in range(config.total_steps):
        x0 = sample_data(spec, rng, config.batch)
        x1 = rng.standard_normal((config.batch, spec.dim))
        t = rng.uniform(size=config.batch)
        xt = (1.0 - t)[:, None] * x0 + t[:, None] * x1
        target = x1 - x0
        theta = net.forward(xt, t)
        v = theta.base_velocities[:, 0, :]
        diff = v - target
        loss = float(np.mean(diff * diff))
        if not np.isfinite(loss):
            raise NumericError(f"teacher training diverged at step {step_idx}")
        v_grad = np.zeros_like(theta.base_velocities)
        v_grad[:, 0, :] = 2.0 * diff / diff.size
        net.zero_grads()
        net.backward(MomentumParamGrads(
            gating=np.zeros_like(theta.gating),
            base_velocities=v_grad,
            log_gammas=np.zeros_like(theta.log_gammas),
        ))
        adam_step(net, opt, config.base_lr)
        losses.append(loss)
    return NeuralTeacher(net, spec), losses
