"""Student network predicting momentum-mixture parameters.

Architecture: the input feature vector [x, t, sin(2 pi f t), cos(2 pi f t)]
for a fixed frequency ladder feeds a small tanh MLP; the top hidden layer
fans out into three affine heads,

    gating head    -> K logits, softmaxed onto the simplex
    velocity head  -> K base velocities in R^D (or one shared vector)
    momentum head  -> K log-gamma offsets (or one shared offset)

The momentum head is additive on top of a frozen log-gamma bias holding the
default geometric progression, its weight matrix and offsets start at zero so
training begins exactly on that progression, and the column feeding the
anchor mode is masked so one mode stays pinned at gamma = 1.  Three momentum
regimes: "learnable" as above, "fixed" keeps the progression constant,
"frozen_one" pins every mode at gamma = 1 (with K = 1 this is the plain
linear-velocity baseline).

Everything is float64 in one flat parameter vector with named views, and the
backward pass is written out by hand.  Finite differences in grad_check are
the independent route for checking it and must stay independent.

Initialization draws, in order: each body weight matrix, then the velocity
head weight matrix, all scaled by 1/sqrt(fan_in); biases and the gating and
momentum heads start at zero (uniform gating, default momentum progression).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    CheckpointFormatError,
    InvalidParameterError,
    NumericError,
    StateError,
)
from .momentum import MomentumParams, init_log_gammas

GAMMA_MODES = ("learnable", "fixed", "frozen_one")

CHECKPOINT_MAGIC = b"ARCFLOW1"

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.95
ADAM_EPS = 1e-8
# The momentum head trains this much slower than everything else.
GAMMA_LR_SCALE = 0.1


@dataclass(frozen=True)
class NetConfig:
    dim: int
    num_modes: int
    hidden: tuple = (64, 64)
    time_freqs: tuple = (1.0, 2.0, 4.0, 8.0)
    gamma_mode: str = "learnable"
    share_velocity: bool = False
    share_gamma: bool = False
    gamma_range: tuple = (0.4, 5.0)

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "time_freqs",
                           tuple(float(f) for f in self.time_freqs))
        object.__setattr__(self, "gamma_range",
                           tuple(float(g) for g in self.gamma_range))
        if self.dim < 1 or self.num_modes < 1:
            raise InvalidParameterError("dim and num_modes must be >= 1")
        if len(self.hidden) < 1 or any(h < 1 for h in self.hidden):
            raise InvalidParameterError("hidden widths must be >= 1")
        if self.gamma_mode not in GAMMA_MODES:
            raise InvalidParameterError(
                f"gamma_mode must be one of {GAMMA_MODES}, got "
                f"{self.gamma_mode!r}"
            )
        if len(self.gamma_range) != 2:
            raise InvalidParameterError("gamma_range must be (lo, hi)")

    @property
    def feature_dim(self) -> int:
        return self.dim + 1 + 2 * len(self.time_freqs)

    @property
    def velocity_dim(self) -> int:
        return self.dim if self.share_velocity else self.num_modes * self.dim

    @property
    def gamma_dim(self) -> int:
        return 1 if self.share_gamma else self.num_modes


@dataclass(frozen=True)
class MomentumParamGrads:
    """Upstream gradient of a scalar loss with respect to the three fields of
    a MomentumParams batch."""

    gating: np.ndarray
    base_velocities: np.ndarray
    log_gammas: np.ndarray


class StudentNet:
    """Flat-parameter MLP; see module docstring for the head layout."""

    def __init__(self, config: NetConfig, seed: int = 0):
        self.config = config
        self._build_layout()
        self.params = np.zeros(self.num_params)
        self.grads = np.zeros(self.num_params)
        self._tape = None

        if config.gamma_mode == "frozen_one":
            self.frozen_log_gammas = np.zeros(config.gamma_dim)
            self.anchor_index = 0 if not config.share_gamma else None
        elif config.share_gamma:
            self.frozen_log_gammas = np.zeros(1)
            self.anchor_index = None
        else:
            logs, anchor = init_log_gammas(config.num_modes,
                                           *config.gamma_range)
            self.frozen_log_gammas = logs
            self.anchor_index = anchor

        self._anchor_mask = np.ones(config.gamma_dim)
        if self.anchor_index is not None and not config.share_gamma:
            self._anchor_mask[self.anchor_index] = 0.0

        rng = np.random.default_rng(seed)
        widths = [config.feature_dim, *config.hidden]
        for i in range(len(config.hidden)):
            w = self.view(f"body{i}_w")
            w[...] = rng.normal(0.0, 1.0 / np.sqrt(widths[i]), w.shape)
        vel_w = self.view("vel_w")
        vel_w[...] = rng.normal(0.0, 1.0 / np.sqrt(widths[-1]), vel_w.shape)

    # -- parameter bookkeeping ------------------------------------------------

    def _build_layout(self):
        cfg = self.config
        widths = [cfg.feature_dim, *cfg.hidden]
        top = widths[-1]
        blocks = []
        for i in range(len(cfg.hidden)):
            blocks.append((f"body{i}_w", (widths[i], widths[i + 1])))
            blocks.append((f"body{i}_b", (widths[i + 1],)))
        blocks.append(("gate_w", (top, cfg.num_modes)))
        blocks.append(("gate_b", (cfg.num_modes,)))
        blocks.append(("vel_w", (top, cfg.velocity_dim)))
        blocks.append(("vel_b", (cfg.velocity_dim,)))
        blocks.append(("gam_w", (top, cfg.gamma_dim)))
        blocks.append(("gam_b", (cfg.gamma_dim,)))
        self._layout = []
        offset = 0
        for name, shape in blocks:
            size = int(np.prod(shape))
            self._layout.append((name, offset, shape))
            offset += size
        self.num_params = offset

    def slice_of(self, name: str) -> slice:
        for block, offset, shape in self._layout:
            if block == name:
                return slice(offset, offset + int(np.prod(shape)))
        raise KeyError(name)

    def view(self, name: str, of: np.ndarray | None = None) -> np.ndarray:
        target = self.params if of is None else of
        for block, offset, shape in self._layout:
            if block == name:
                size = int(np.prod(shape))
                return target[offset:offset + size].reshape(shape)
        raise KeyError(name)

    def zero_grads(self):
        self.grads[:] = 0.0

    # -- forward / backward ---------------------------------------------------

    def features(self, x, t) -> np.ndarray:
        """Feature rows [x, t, sin/cos ladder]; x (B, D) or (D,), t scalar or
        (B,)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        batch = x.shape[0]
        t_col = np.broadcast_to(np.asarray(t, dtype=float), (batch,))
        cols = [x, t_col[:, None]]
        for f in self.config.time_freqs:
            ang = 2.0 * np.pi * f * t_col
            cols.append(np.sin(ang)[:, None])
            cols.append(np.cos(ang)[:, None])
        return np.concatenate(cols, axis=1)

    def forward(self, x, t) -> MomentumParams:
        """Predict mixture parameters at (x, t); records the tape backward
        consumes.  A 1-D x gives an unbatched parameter bundle back."""
        cfg = self.config
        x_arr = np.asarray(x, dtype=float)
        squeeze = x_arr.ndim == 1
        if x_arr.shape[-1] != cfg.dim:
            raise InvalidParameterError(
                f"input dim {x_arr.shape[-1]} != net dim {cfg.dim}"
            )
        feat = self.features(x_arr, t)
        batch = feat.shape[0]

        acts = [feat]
        h = feat
        for i in range(len(cfg.hidden)):
            h = np.tanh(h @ self.view(f"body{i}_w") + self.view(f"body{i}_b"))
            acts.append(h)
        top = h

        logits = top @ self.view("gate_w") + self.view("gate_b")
        logits = logits - logits.max(axis=-1, keepdims=True)
        expl = np.exp(logits)
        gating = expl / expl.sum(axis=-1, keepdims=True)

        vel = top @ self.view("vel_w") + self.view("vel_b")
        if cfg.share_velocity:
            base = np.repeat(vel[:, None, :], cfg.num_modes, axis=1)
        else:
            base = vel.reshape(batch, cfg.num_modes, cfg.dim)

        if cfg.gamma_mode == "learnable":
            off = top @ self.view("gam_w") + self.view("gam_b")
            off = off * self._anchor_mask
            log_g = self.frozen_log_gammas + off
            if cfg.share_gamma:
                log_g = np.broadcast_to(log_g, (batch, cfg.num_modes))
        else:
            log_g = np.broadcast_to(self.frozen_log_gammas,
                                    (batch, cfg.num_modes))

        self._tape = {"acts": acts, "gating": gating, "squeeze": squeeze}
        if squeeze:
            return MomentumParams(gating[0], base[0], np.array(log_g[0]),
                                  self.anchor_index)
        return MomentumParams(gating, base, np.array(log_g), self.anchor_index)

    def backward(self, upstream: MomentumParamGrads) -> np.ndarray:
        """Accumulate parameter gradients for the most recent forward.

        upstream fields must match that forward's output shapes.  Returns the
        flat gradient buffer (accumulated, not overwritten; call zero_grads
        between optimization steps).
        """
        if self._tape is None:
            raise StateError("backward called before forward")
        cfg = self.config
        acts = self._tape["acts"]
        gating = self._tape["gating"]

        g_gate = np.asarray(upstream.gating, dtype=float)
        g_vel = np.asarray(upstream.base_velocities, dtype=float)
        g_logg = np.asarray(upstream.log_gammas, dtype=float)
        if self._tape["squeeze"]:
            g_gate = g_gate[None]
            g_vel = g_vel[None]
            g_logg = g_logg[None]

        # softmax jacobian
        inner = (g_gate * gating).sum(axis=-1, keepdims=True)
        d_logits = gating * (g_gate - inner)

        if cfg.share_velocity:
            d_vel = g_vel.sum(axis=1)
        else:
            d_vel = g_vel.reshape(g_vel.shape[0], cfg.num_modes * cfg.dim)

        top = acts[-1]
        d_top = d_logits @ self.view("gate_w").T + d_vel @ self.view("vel_w").T
        self.view("gate_w", self.grads)[...] += top.T @ d_logits
        self.view("gate_b", self.grads)[...] += d_logits.sum(axis=0)
        self.view("vel_w", self.grads)[...] += top.T @ d_vel
        self.view("vel_b", self.grads)[...] += d_vel.sum(axis=0)

        if cfg.gamma_mode == "learnable":
            if cfg.share_gamma:
                d_off = g_logg.sum(axis=-1, keepdims=True)
            else:
                d_off = g_logg * self._anchor_mask
            d_top = d_top + d_off @ self.view("gam_w").T
            self.view("gam_w", self.grads)[...] += top.T @ d_off
            self.view("gam_b", self.grads)[...] += d_off.sum(axis=0)

        d_h = d_top
        for i in range(len(cfg.hidden) - 1, -1, -1):
            d_z = d_h * (1.0 - acts[i + 1] ** 2)
            self.view(f"body{i}_w", self.grads)[...] += acts[i].T @ d_z
            self.view(f"body{i}_b", self.grads)[...] += d_z.sum(axis=0)
            d_h = d_z @ self.view(f"body{i}_w").T
        return self.grads

    # -- checkpointing ---------------------------------------------------------

    def save(self, path):
        """Binary checkpoint; explicit little-endian layout, bit-exact."""
        cfg = self.config
        out = bytearray()
        out += CHECKPOINT_MAGIC
        out += struct.pack("<II", cfg.dim, cfg.num_modes)
        out += struct.pack("<I", len(cfg.hidden))
        out += struct.pack(f"<{len(cfg.hidden)}I", *cfg.hidden)
        out += struct.pack("<I", len(cfg.time_freqs))
        out += struct.pack(f"<{len(cfg.time_freqs)}d", *cfg.time_freqs)
        out += struct.pack("<BBB", GAMMA_MODES.index(cfg.gamma_mode),
                           int(cfg.share_velocity), int(cfg.share_gamma))
        anchor = -1 if self.anchor_index is None else self.anchor_index
        out += struct.pack("<i", anchor)
        out += struct.pack("<dd", *cfg.gamma_range)
        frozen = np.ascontiguousarray(self.frozen_log_gammas, dtype="<f8")
        out += struct.pack("<I", frozen.size)
        out += frozen.tobytes()
        params = np.ascontiguousarray(self.params, dtype="<f8")
        out += struct.pack("<Q", params.size)
        out += params.tobytes()
        with open(path, "wb") as fh:
            fh.write(bytes(out))

    @classmethod
    def load(cls, path) -> "StudentNet":
        with open(path, "rb") as fh:
            raw = fh.read()
        pos = 0

        def take(fmt):
            nonlocal pos
            size = struct.calcsize(fmt)
            if pos + size > len(raw):
                raise CheckpointFormatError(f"truncated checkpoint {path}")
            vals = struct.unpack_from(fmt, raw, pos)
            pos += size
            return vals

        if raw[:8] != CHECKPOINT_MAGIC:
            raise CheckpointFormatError(
                f"bad magic {raw[:8]!r} in {path}; expected {CHECKPOINT_MAGIC!r}"
            )
        pos = 8
        dim, num_modes = take("<II")
        (n_hidden,) = take("<I")
        hidden = take(f"<{n_hidden}I")
        (n_freqs,) = take("<I")
        freqs = take(f"<{n_freqs}d")
        mode_idx, share_v, share_g = take("<BBB")
        (anchor,) = take("<i")
        gamma_range = take("<dd")
        if mode_idx >= len(GAMMA_MODES):
            raise CheckpointFormatError(
                f"unknown momentum mode index {mode_idx} in {path}"
            )
        cfg = NetConfig(dim=int(dim), num_modes=int(num_modes),
                        hidden=hidden, time_freqs=freqs,
                        gamma_mode=GAMMA_MODES[mode_idx],
                        share_velocity=bool(share_v), share_gamma=bool(share_g),
                        gamma_range=gamma_range)
        (frozen_len,) = take("<I")
        frozen = np.frombuffer(raw, dtype="<f8", count=frozen_len, offset=pos)
        pos += frozen_len * 8
        (param_count,) = take("<Q")
        if pos + param_count * 8 != len(raw):
            raise CheckpointFormatError(
                f"payload size mismatch in {path}: header promises "
                f"{param_count} parameters, file holds "
                f"{(len(raw) - pos) // 8}"
            )
        params = np.frombuffer(raw, dtype="<f8", count=param_count, offset=pos)

        net = cls(cfg, seed=0)
        if net.num_params != param_count or net.frozen_log_gammas.size != frozen_len:
            raise CheckpointFormatError(
                f"checkpoint {path} inconsistent with its own header"
            )
        net.params[:] = params
        net.frozen_log_gammas = frozen.astype(float).copy()
        net.anchor_index = None if anchor < 0 else int(anchor)
        net._anchor_mask = np.ones(cfg.gamma_dim)
        if net.anchor_index is not None and not cfg.share_gamma:
            net._anchor_mask[net.anchor_index] = 0.0
        return net


# -- optimization ---------------------------------------------------------------


@dataclass
class OptimState:
    m: np.ndarray
    v: np.ndarray
    step_count: int
    lr_scale: np.ndarray


def init_optim_state(net: StudentNet) -> OptimState:
    """Fresh Adam moments plus the per-parameter rate multipliers (momentum
    head trains at GAMMA_LR_SCALE times the base rate)."""
    scale = np.ones(net.num_params)
    scale[net.slice_of("gam_w")] = GAMMA_LR_SCALE
    scale[net.slice_of("gam_b")] = GAMMA_LR_SCALE
    return OptimState(np.zeros(net.num_params), np.zeros(net.num_params),
                      0, scale)


def adam_step(net: StudentNet, state: OptimState, base_lr: float):
    """One Adam update from net.grads, decoupled weight decay zero.

    Bias-corrected first and second moments with betas (0.9, 0.95); the
    effective rate is base_lr times the per-parameter scale.
    """
    g = net.grads
    if not np.isfinite(g).all():
        bad = int(np.count_nonzero(~np.isfinite(g)))
        raise NumericError(f"{bad} non-finite gradient entries in update")
    state.step_count += 1
    state.m[:] = ADAM_BETA1 * state.m + (1.0 - ADAM_BETA1) * g
    state.v[:] = ADAM_BETA2 * state.v + (1.0 - ADAM_BETA2) * g * g
    mhat = state.m / (1.0 - ADAM_BETA1 ** state.step_count)
    vhat = state.v / (1.0 - ADAM_BETA2 ** state.step_count)
    net.params -= base_lr * state.lr_scale * mhat / (np.sqrt(vhat) + ADAM_EPS)


def grad_check(net: StudentNet, loss_and_grad, probes=100, h=1e-5, rng=None):
    """Compare analytic gradients against central finite differences.

    loss_and_grad(net) must return (scalar loss, flat gradient copy) and be
    deterministic in net.params.  Probes are parameter indices sampled
    without replacement.  Returns the worst relative error, where the
    denominator is floored at 1e-6 of the largest analytic gradient so
    near-zero entries compare absolutely at that scale.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    _, grad = loss_and_grad(net)
    grad = np.array(grad, copy=True)
    count = min(int(probes), net.num_params)
    idx = rng.choice(net.num_params, size=count, replace=False)
    floor = 1e-6 * max(1.0, float(np.abs(grad).max()))
    worst = 0.0
    for i in idx:
        orig = net.params[i]
        net.params[i] = orig + h
        lo_plus = loss_and_grad(net)[0]
        net.params[i] = orig - h
        lo_minus = loss_and_grad(net)[0]
        net.params[i] = orig
        fd = (lo_plus - lo_minus) / (2.0 * h)
        denom = max(abs(grad[i]), abs(fd), floor)
        worst = max(worst, abs(grad[i] - fd) / denom)
    return worst
