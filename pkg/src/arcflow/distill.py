"""Flow distillation onto momentum mixtures.

One training step:

1. Pick a shelf [t_src, t_dst] uniformly from the NFE grid
   {(i+1)/NFE -> i/NFE}.
2. Draw a batch of noising-path states at t_src from the teacher's data and
   a fresh standard normal.
3. Predict one mixture parameter bundle theta at the shelf start.
4. Split the shelf into n_intermediate sub-intervals at stratified random
   anchor times and roll each out with the mixed rule: integrate the teacher
   velocity (held constant, one Euler segment) from the sub-interval start
   down to the switching time t_sw = lam * start + (1 - lam) * end, then take
   the closed-form momentum step for the remainder.  Anchors are recorded as
   fixed arrays, so gradients never flow through the rollout.
5. Match the mixture's instantaneous velocity at every anchor time against
   the teacher's velocity at the anchor state; squared error averaged over
   anchors, batch and coordinates.  Teacher velocities computed during the
   rollout are reused as targets at the anchors where they were evaluated.
6. Adam step.  lam ramps linearly from 0 (anchors follow the teacher) to 1
   (anchors follow the student's own closed-form rollout) over
   guidance_steps and stays at 1 afterwards.

The loss gradient with respect to the predicted bundle is written in closed
form here; the network maps it back to its weights.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import InvalidIntervalError, InvalidParameterError, NumericError
from .momentum import LatentState, MomentumParams
from .nnet import MomentumParamGrads, NetConfig, StudentNet, adam_step, \
    init_optim_state
from .solver import sub_interval_displacement
from .teacher import TrajectoryRecord


@dataclass(frozen=True)
class DistillConfig:
    """Distillation hyperparameters; defaults are the desk-scale reference."""

    nfe: int = 2
    num_modes: int = 8
    n_intermediate: int = 4
    guidance_steps: int = 500
    total_steps: int = 3000
    batch: int = 64
    base_lr: float = 1e-4
    gamma_range: tuple = (0.4, 5.0)
    gamma_mode: str = "learnable"
    share_velocity: bool = False
    share_gamma: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "gamma_range",
                           tuple(float(g) for g in self.gamma_range))
        if self.nfe < 1 or self.num_modes < 1 or self.n_intermediate < 1:
            raise InvalidParameterError(
                "nfe, num_modes and n_intermediate must be >= 1"
            )
        if self.guidance_steps < 1:
            raise InvalidParameterError("guidance_steps must be >= 1")
        if self.total_steps < 0 or self.batch < 1 or self.base_lr <= 0.0:
            raise InvalidParameterError("bad training config")


def make_linear_baseline(cfg: DistillConfig) -> DistillConfig:
    """The one-mode, momentum-frozen configuration: a per-shelf constant
    velocity, everything else identical."""
    return dataclasses.replace(cfg, num_modes=1, gamma_mode="frozen_one",
                               share_velocity=False, share_gamma=False)


def training_streams(seed: int):
    """Independent child streams (net_init, training, evaluation) of one run
    seed.  Keeping them separate means two configs with different network
    sizes still consume identical training and evaluation streams, which is
    what makes paired-seed comparisons paired."""
    return np.random.SeedSequence(int(seed)).spawn(3)


def build_student_net(cfg: DistillConfig, dim: int,
                      init_seed=None) -> StudentNet:
    """Instantiate the student for a distillation config.  init_seed defaults
    to the net_init child stream of cfg.seed."""
    if init_seed is None:
        init_seed = training_streams(cfg.seed)[0]
    net_cfg = NetConfig(dim=int(dim), num_modes=cfg.num_modes,
                        gamma_mode=cfg.gamma_mode,
                        share_velocity=cfg.share_velocity,
                        share_gamma=cfg.share_gamma,
                        gamma_range=cfg.gamma_range)
    return StudentNet(net_cfg, seed=init_seed)


def lambda_at(step_idx: int, guidance_steps: int) -> float:
    """Linear guidance ramp: 0 at step 0, 1 from guidance_steps onward."""
    return min(int(step_idx) / int(guidance_steps), 1.0)


def sample_shelf(rng: np.random.Generator, nfe: int):
    """Uniform shelf choice; returns (t_src, t_dst) on the NFE grid."""
    idx = int(rng.integers(int(nfe)))
    return (idx + 1) / nfe, idx / nfe


def sample_anchor_times(rng: np.random.Generator, t_src: float, width: float,
                        count: int) -> np.ndarray:
    """Stratified anchor times inside (t_src - width, t_src], one per
    stratum, strictly decreasing."""
    count = int(count)
    highs = t_src - width * np.arange(count) / count
    times = highs - rng.uniform(size=count) * (width / count)
    return np.clip(times, 0.0, t_src)


def init_shelf_state(teacher, rng: np.random.Generator, t_src: float,
                     batch: int) -> LatentState:
    """Batch of noising-path states x_t = (1 - t) x0 + t x1 at t = t_src,
    with x0 from the teacher's data distribution and x1 standard normal."""
    x0 = teacher.sample_data(rng, int(batch))
    x1 = rng.standard_normal((int(batch), teacher.dim))
    x = (1.0 - t_src) * x0 + t_src * x1
    return LatentState(x, t_src)


@dataclass(frozen=True)
class AnchorSet:
    """One shelf's rollout: anchor times/states plus the teacher velocities
    already evaluated at anchors during the rollout.

    teacher_velocities rows at and beyond n_cached are NaN placeholders; the
    rollout never needs the teacher at the final anchor, so the loss computes
    that one itself.  All arrays are plain values: nothing here carries
    gradients, which is what detaching the anchors means in this codebase.
    """

    t_start: float
    x_start: np.ndarray            # (B, D)
    theta: MomentumParams          # bundle used for the student segments
    anchor_times: np.ndarray       # (n,) strictly decreasing, <= t_start
    anchor_states: np.ndarray      # (n, B, D)
    teacher_velocities: np.ndarray  # (n, B, D); rows >= n_cached are NaN
    n_cached: int

    def __post_init__(self):
        times = np.asarray(self.anchor_times, dtype=float)
        states = np.asarray(self.anchor_states, dtype=float)
        object.__setattr__(self, "anchor_times", times)
        object.__setattr__(self, "anchor_states", states)
        if times.ndim != 1 or times.size < 1:
            raise InvalidParameterError("anchor_times must be a 1-D array")
        if (np.diff(times) >= 0.0).any():
            raise InvalidParameterError("anchor times must strictly decrease")
        if times[0] > self.t_start or times[-1] < 0.0:
            raise InvalidIntervalError(
                f"anchor times must lie in [0, {self.t_start}]"
            )
        n = times.size
        if states.shape[0] != n or self.teacher_velocities.shape != states.shape:
            raise InvalidParameterError("anchor array shapes disagree")
        if not 0 <= self.n_cached <= n:
            raise InvalidParameterError(
                f"n_cached {self.n_cached} out of range for {n} anchors"
            )

    @property
    def num_anchors(self) -> int:
        return self.anchor_times.size


def mixed_integration(x_start, t_start, theta: MomentumParams, anchor_times,
                      lam: float, teacher) -> AnchorSet:
    """Roll a batch from t_start through the anchor times with the mixed
    teacher/student rule described in the module docstring.

    lam = 0 reduces every sub-interval to one teacher Euler step; lam = 1
    skips the teacher segment bitwise and composes pure closed-form steps.
    """
    lam = float(lam)
    if not 0.0 <= lam <= 1.0:
        raise InvalidParameterError(f"lambda {lam} outside [0, 1]")
    x = np.array(x_start, dtype=float)
    x_src = x.copy()
    t_prev = float(t_start)
    times = np.asarray(anchor_times, dtype=float)

    n = times.size
    anchors = np.empty((n,) + x.shape)
    cache = np.full((n,) + x.shape, np.nan)
    u_prev = teacher.velocity(x, t_prev)
    for j in range(n):
        t_next = float(times[j])
        t_sw = lam * t_prev + (1.0 - lam) * t_next
        x = x - u_prev * (t_prev - t_sw)
        x = x - sub_interval_displacement(theta, t_sw, t_next)
        if not np.isfinite(x).all():
            raise NumericError(
                f"non-finite state in sub-interval {j} "
                f"({t_prev:.6f} -> {t_next:.6f})"
            )
        anchors[j] = x
        if j < n - 1:
            u_prev = teacher.velocity(x, t_next)
            cache[j] = u_prev
        t_prev = t_next
    return AnchorSet(float(t_start), x_src, theta, times, anchors, cache,
                     n_cached=n - 1)


def velocity_matching_loss(theta: MomentumParams, anchors: AnchorSet,
                           teacher):
    """Mean squared velocity mismatch at the anchors, plus its closed-form
    gradient with respect to theta's fields.

    The student side evaluates the bundle predicted at the shelf start at
    each anchor time (velocities extrapolate, they are not re-predicted).
    Teacher targets come from the rollout cache where available; only the
    final anchor needs a fresh teacher evaluation.  Anchor states enter as
    constants, so the gradient sees only the explicit dependence on theta.
    """
    times = anchors.anchor_times
    states = anchors.anchor_states
    n, batch, dim = states.shape

    expo = (1.0 - times)[:, None, None]                         # (n,1,1)
    gpow = np.exp(expo * theta.log_gammas[None])                # (n,B,K)
    v_student = np.einsum("bk,nbk,bkd->nbd", theta.gating, gpow,
                          theta.base_velocities)

    targets = np.empty_like(states)
    cached = anchors.n_cached
    targets[:cached] = anchors.teacher_velocities[:cached]
    for j in range(cached, n):
        targets[j] = teacher.velocity(states[j], float(times[j]))

    diff = v_student - targets
    loss = float(np.mean(diff * diff))
    if not np.isfinite(loss):
        raise NumericError("non-finite velocity matching loss")

    up = 2.0 * diff / diff.size                                  # dL/dv
    proj = np.einsum("nbd,bkd->nbk", up, theta.base_velocities)
    d_gating = (proj * gpow).sum(axis=0)
    d_base = np.einsum("nbd,nbk->bkd", up, gpow) * theta.gating[..., None]
    d_logg = (proj * gpow * expo).sum(axis=0) * theta.gating
    return loss, MomentumParamGrads(d_gating, d_base, d_logg)


def distill_train(teacher, net: StudentNet, cfg: DistillConfig, rng=None):
    """Run the full distillation loop, mutating net in place.

    rng defaults to the training child stream of cfg.seed; pass one
    explicitly to share a stream across paired runs.  Returns the loss log,
    one (step, lambda, loss, shelf_start) row per step.  Numeric failures
    abort with the step index attached.
    """
    if rng is None:
        rng = np.random.default_rng(training_streams(cfg.seed)[1])
    if net.config.num_modes != cfg.num_modes:
        raise InvalidParameterError(
            f"net has {net.config.num_modes} modes, config wants "
            f"{cfg.num_modes}"
        )
    opt = init_optim_state(net)
    width = 1.0 / cfg.nfe
    log = []
    for step_idx in range(cfg.total_steps):
        lam = lambda_at(step_idx, cfg.guidance_steps)
        try:
            t_src, _ = sample_shelf(rng, cfg.nfe)
            state0 = init_shelf_state(teacher, rng, t_src, cfg.batch)
            times = sample_anchor_times(rng, t_src, width, cfg.n_intermediate)
            theta = net.forward(state0.x, t_src)
            anchors = mixed_integration(state0.x, t_src, theta, times, lam,
                                        teacher)
            loss, grad = velocity_matching_loss(theta, anchors, teacher)
            net.zero_grads()
            net.backward(grad)
            adam_step(net, opt, cfg.base_lr)
        except NumericError as exc:
            raise NumericError(f"training step {step_idx}: {exc}") from exc
        log.append((step_idx, lam, loss, t_src))
    return log


def student_sample(net: StudentNet, x_start, nfe: int, dense_per_shelf=16,
                   seed=None) -> TrajectoryRecord:
    """Sample with nfe network evaluations, one per shelf, recording a dense
    closed-form trace inside each shelf.

    The dense sub-steps are anchored displacement differences, so chaining
    them reproduces the single whole-shelf step up to a few ulps; the shelf
    handoff state is the last dense state.
    """
    nfe = int(nfe)
    dense = int(dense_per_shelf)
    if nfe < 1 or dense < 1:
        raise InvalidParameterError("nfe and dense_per_shelf must be >= 1")
    x = np.asarray(x_start, dtype=float)
    states = [LatentState(x, 1.0)]
    for shelf in range(nfe, 0, -1):
        t_hi = shelf / nfe
        t_lo = (shelf - 1) / nfe
        theta = net.forward(x, t_hi)
        t_prev = t_hi
        for m in range(1, dense + 1):
            tau = t_lo if m == dense else t_hi + (t_lo - t_hi) * (m / dense)
            x = x - sub_interval_displacement(theta, t_prev, tau)
            if not np.isfinite(x).all():
                raise NumericError(
                    f"non-finite sample state at t={tau:.6f}"
                )
            states.append(LatentState(x, tau))
            t_prev = tau
    return TrajectoryRecord(tuple(states), nfe * dense, seed)
