"""Run configuration, metrics and artifact export.

Config files are plain text with [teacher], [distill] and [run] sections of
key = value lines; full-line # comments are allowed.  Unknown sections or
keys are hard errors with the offending line number, as are duplicate keys.
The default config IS the desk-scale reference task: an eight-component ring
mixture in 2-D distilled into a two-evaluation student.

Metrics compare the few-step student against a many-step Euler reference of
the same teacher from the same noise draws.  endpoint_mse is the mean squared
euclidean gap at t = 0; trajectory_deviation averages the gap along the whole
path; discretization_floor is the same endpoint gap between the reference and
a doubled-step reference, which bounds how much of the student gap is just
reference discretization.  Everything derived from (config, seed) is
byte-deterministic except wall-clock metadata.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .distill import (
    DistillConfig,
    build_student_net,
    distill_train,
    student_sample,
    training_streams,
)
from .errors import ArcFlowError, ConfigError, InvalidParameterError
from .nnet import NetConfig, StudentNet
from .teacher import (
    AnalyticGmmTeacher,
    CfmTrainConfig,
    GmmTeacherSpec,
    TrajectoryRecord,
    euler_sample,
    ring_spec,
    train_cfm_teacher,
)


@dataclass(frozen=True)
class TeacherConfig:
    """[teacher] section: either a ring layout or an explicit mixture, served
    by the closed-form field or by a freshly trained neural stand-in."""

    kind: str = "analytic"        # analytic | neural
    layout: str = "ring"          # ring | explicit
    components: int = 8
    radius: float = 2.0
    std: float = 0.25
    dim: int = 2
    weights: str | None = None    # explicit layout only
    means: str | None = None
    stds: str | None = None
    cfm_steps: int = 2000
    cfm_batch: int = 128
    cfm_lr: float = 1e-3

    def __post_init__(self):
        if self.kind not in ("analytic", "neural"):
            raise InvalidParameterError(f"unknown teacher kind {self.kind!r}")
        if self.layout not in ("ring", "explicit"):
            raise InvalidParameterError(f"unknown teacher layout {self.layout!r}")
        if self.layout == "explicit" and None in (self.weights, self.means,
                                                  self.stds):
            raise InvalidParameterError(
                "explicit teacher layout needs weights, means and stds"
            )

    def build_spec(self) -> GmmTeacherSpec:
        if self.layout == "ring":
            return ring_spec(self.components, self.radius, self.std, self.dim)
        weights = _parse_vector(self.weights)
        stds = _parse_vector(self.stds)
        means = _parse_matrix(self.means)
        return GmmTeacherSpec(weights, means, stds)


@dataclass(frozen=True)
class RunOptions:
    """[run] section: artifact destinations and evaluation sizes."""

    out: str = "runs/ref"
    metric_samples: int = 2048
    trajectory_samples: int = 16
    teacher_steps: int = 100
    dense_per_shelf: int = 16
    export_csv: bool = True
    export_svg: bool = True

    def __post_init__(self):
        if self.metric_samples < 2 or self.trajectory_samples < 1:
            raise InvalidParameterError("evaluation sample counts too small")
        if self.teacher_steps < 1 or self.dense_per_shelf < 1:
            raise InvalidParameterError("step counts must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    teacher: TeacherConfig = TeacherConfig()
    distill: DistillConfig = DistillConfig()
    run: RunOptions = RunOptions()


@dataclass(frozen=True)
class MetricsReport:
    endpoint_mse: float
    trajectory_deviation: float
    discretization_floor: float
    final_loss: float
    nfe: int
    total_steps: int
    metric_samples: int
    seed: int
    config_hash: str
    wall_time_s: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# -- config text format ----------------------------------------------------------


def _parse_bool(text: str) -> bool:
    if text == "true":
        return True
    if text == "false":
        return False
    raise ValueError(f"expected true or false, got {text!r}")


def _parse_vector(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.replace(",", " ").split()])


def _parse_matrix(text: str) -> np.ndarray:
    rows = [r for r in (row.strip() for row in text.split(";")) if r]
    return np.stack([_parse_vector(r) for r in rows])


_SCHEMA = {
    "teacher": {
        "kind": str, "layout": str, "components": int, "radius": float,
        "std": float, "dim": int, "weights": str, "means": str, "stds": str,
        "cfm_steps": int, "cfm_batch": int, "cfm_lr": float,
    },
    "distill": {
        "nfe": int, "num_modes": int, "n_intermediate": int,
        "guidance_steps": int, "total_steps": int, "batch": int,
        "base_lr": float, "gamma_lo": float, "gamma_hi": float,
        "gamma_mode": str, "share_velocity": _parse_bool,
        "share_gamma": _parse_bool, "seed": int,
    },
    "run": {
        "out": str, "metric_samples": int, "trajectory_samples": int,
        "teacher_steps": int, "dense_per_shelf": int,
        "export_csv": _parse_bool, "export_svg": _parse_bool,
    },
}


def parse_run_config(text: str, path=None) -> RunConfig:
    """Parse config text; malformed lines, unknown names and duplicate keys
    raise ConfigError carrying the line number."""
    sections = {"teacher": {}, "distill": {}, "run": {}}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name not in sections:
                raise ConfigError(f"unknown section [{name}]", path, lineno)
            current = name
            continue
        if "=" not in line:
            raise ConfigError(f"expected key = value, got {line!r}", path, lineno)
        if current is None:
            raise ConfigError("key outside any [section]", path, lineno)
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        schema = _SCHEMA[current]
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} in [{current}]", path, lineno)
        if key in sections[current]:
            raise ConfigError(f"duplicate key {key!r}", path, lineno)
        try:
            sections[current][key] = schema[key](value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", path, lineno)

    dis = sections["distill"]
    lo = dis.pop("gamma_lo", None)
    hi = dis.pop("gamma_hi", None)
    defaults = DistillConfig()
    gamma_range = (lo if lo is not None else defaults.gamma_range[0],
                   hi if hi is not None else defaults.gamma_range[1])
    try:
        return RunConfig(
            teacher=TeacherConfig(**sections["teacher"]),
            distill=DistillConfig(gamma_range=gamma_range, **dis),
            run=RunOptions(**sections["run"]),
        )
    except ArcFlowError as exc:
        raise ConfigError(str(exc), path)


def load_run_config(path) -> RunConfig:
    return parse_run_config(Path(path).read_text(), path=str(path))


def format_run_config(cfg: RunConfig) -> str:
    """Emit config text that parses back to an equal RunConfig."""
    t, d, r = cfg.teacher, cfg.distill, cfg.run
    lines = ["[teacher]"]
    lines.append(f"kind = {t.kind}")
    lines.append(f"layout = {t.layout}")
    if t.layout == "ring":
        lines.append(f"components = {t.components}")
        lines.append(f"radius = {t.radius!r}")
        lines.append(f"std = {t.std!r}")
        lines.append(f"dim = {t.dim}")
    else:
        lines.append(f"weights = {t.weights}")
        lines.append(f"means = {t.means}")
        lines.append(f"stds = {t.stds}")
    if t.kind == "neural":
        lines.append(f"cfm_steps = {t.cfm_steps}")
        lines.append(f"cfm_batch = {t.cfm_batch}")
        lines.append(f"cfm_lr = {t.cfm_lr!r}")
    lines.append("")
    lines.append("[distill]")
    lines.append(f"nfe = {d.nfe}")
    lines.append(f"num_modes = {d.num_modes}")
    lines.append(f"n_intermediate = {d.n_intermediate}")
    lines.append(f"guidance_steps = {d.guidance_steps}")
    lines.append(f"total_steps = {d.total_steps}")
    lines.append(f"batch = {d.batch}")
    lines.append(f"base_lr = {d.base_lr!r}")
    lines.append(f"gamma_lo = {d.gamma_range[0]!r}")
    lines.append(f"gamma_hi = {d.gamma_range[1]!r}")
    lines.append(f"gamma_mode = {d.gamma_mode}")
    lines.append(f"share_velocity = {'true' if d.share_velocity else 'false'}")
    lines.append(f"share_gamma = {'true' if d.share_gamma else 'false'}")
    lines.append(f"seed = {d.seed}")
    lines.append("")
    lines.append("[run]")
    lines.append(f"out = {r.out}")
    lines.append(f"metric_samples = {r.metric_samples}")
    lines.append(f"trajectory_samples = {r.trajectory_samples}")
    lines.append(f"teacher_steps = {r.teacher_steps}")
    lines.append(f"dense_per_shelf = {r.dense_per_shelf}")
    lines.append(f"export_csv = {'true' if r.export_csv else 'false'}")
    lines.append(f"export_svg = {'true' if r.export_svg else 'false'}")
    lines.append("")
    return "\n".join(lines)


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(format_run_config(cfg).encode()).hexdigest()[:16]


# -- metrics ---------------------------------------------------------------------


def endpoint_mse(endpoints_a, endpoints_b) -> float:
    """Mean over the batch of the squared euclidean endpoint gap."""
    diff = np.asarray(endpoints_a, dtype=float) - np.asarray(endpoints_b,
                                                             dtype=float)
    return float(np.mean(np.sum(diff * diff, axis=-1)))


def positions_at(record: TrajectoryRecord, times) -> np.ndarray:
    """Linear interpolation of a trajectory's positions at query times.

    Works on the record's own (strictly decreasing) grid, so it applies to
    non-uniform traces too.
    """
    times = np.asarray(times, dtype=float)
    grid = record.times
    pos = record.positions
    # np.interp wants increasing coordinates
    idx = np.searchsorted(-grid, -times, side="left").clip(1, grid.size - 1)
    t_hi = grid[idx - 1]
    t_lo = grid[idx]
    w = (t_hi - times) / (t_hi - t_lo)
    w = w.clip(0.0, 1.0)
    shape = (times.size,) + (1,) * (pos.ndim - 1)
    w = w.reshape(shape)
    return (1.0 - w) * pos[idx - 1] + w * pos[idx]


def trajectory_deviation(student: TrajectoryRecord,
                         reference: TrajectoryRecord) -> float:
    """Mean euclidean gap between the two trajectories, averaged over the
    student's recorded times and the batch."""
    ref_at = positions_at(reference, student.times)
    gap = np.linalg.norm(student.positions - ref_at, axis=-1)
    return float(np.mean(gap))


def energy_distance(xs, ys, chunk=2048) -> float:
    """Squared energy distance 2 E|x-y| - E|x-x'| - E|y-y'| with V-statistic
    means, accumulated in chunks to bound memory.

    Pairwise distances come from the gram expansion |x-y|^2 =
    |x|^2 + |y|^2 - 2 x.y with a clip against tiny negative round-off."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)

    def mean_cross(a, b):
        b_sq = np.sum(b * b, axis=1)
        total = 0.0
        for start in range(0, a.shape[0], chunk):
            block = a[start:start + chunk]
            sq = (np.sum(block * block, axis=1)[:, None] + b_sq[None, :]
                  - 2.0 * block @ b.T)
            total += float(np.sqrt(np.clip(sq, 0.0, None)).sum())
        return total / (a.shape[0] * b.shape[0])

    return 2.0 * mean_cross(xs, ys) - mean_cross(xs, xs) - mean_cross(ys, ys)


# -- orchestration ----------------------------------------------------------------


def build_teacher(cfg: RunConfig):
    """Teacher object for a run config; the neural kind trains a fresh
    flow-matching net on the mixture's data first (seeded from the run seed)."""
    spec = cfg.teacher.build_spec()
    if cfg.teacher.kind == "analytic":
        return AnalyticGmmTeacher(spec)
    # Child streams 0..2 belong to the student run; the teacher gets child 3
    # of the same root so the pairing contract stays intact.
    teacher_stream = np.random.SeedSequence(cfg.distill.seed).spawn(4)[3]
    net = StudentNet(
        NetConfig(dim=spec.dim, num_modes=1, gamma_mode="frozen_one"),
        seed=teacher_stream,
    )
    train_cfg = CfmTrainConfig(cfg.teacher.cfm_steps, cfg.teacher.cfm_batch,
                               cfg.teacher.cfm_lr)
    trained, _ = train_cfm_teacher(net, spec, train_cfg,
                                   np.random.default_rng(teacher_stream))
    return trained


def evaluate_student(net: StudentNet, teacher, cfg: RunConfig,
                     eval_rng) -> dict:
    """Shared-noise comparison of the distilled student against the Euler
    reference; returns the raw metric values."""
    opts = cfg.run
    dim = teacher.dim
    noise = eval_rng.standard_normal((opts.metric_samples, dim))
    reference = euler_sample(teacher.velocity, noise, opts.teacher_steps)
    doubled = euler_sample(teacher.velocity, noise, 2 * opts.teacher_steps)
    student = student_sample(net, noise, cfg.distill.nfe,
                             opts.dense_per_shelf)
    return {
        "endpoint_mse": endpoint_mse(student.endpoint, reference.endpoint),
        "trajectory_deviation": trajectory_deviation(student, reference),
        "discretization_floor": endpoint_mse(doubled.endpoint,
                                             reference.endpoint),
        "student_record": student,
        "reference_record": reference,
    }


def run_distillation(cfg: RunConfig, out_dir=None):
    """Train a student per the config, evaluate it, optionally write
    artifacts.  Returns (report, net, loss_log)."""
    from .svg import trajectory_overlay_svg  # local import, no cycle

    started = time.perf_counter()
    teacher = build_teacher(cfg)
    streams = training_streams(cfg.distill.seed)
    net = build_student_net(cfg.distill, teacher.dim, init_seed=streams[0])
    log = distill_train(teacher, net, cfg.distill,
                        rng=np.random.default_rng(streams[1]))
    evaluation = evaluate_student(net, teacher, cfg,
                                  np.random.default_rng(streams[2]))
    report = MetricsReport(
        endpoint_mse=evaluation["endpoint_mse"],
        trajectory_deviation=evaluation["trajectory_deviation"],
        discretization_floor=evaluation["discretization_floor"],
        final_loss=float(log[-1][2]) if log else float("nan"),
        nfe=cfg.distill.nfe,
        total_steps=cfg.distill.total_steps,
        metric_samples=cfg.run.metric_samples,
        seed=cfg.distill.seed,
        config_hash=config_hash(cfg),
        wall_time_s=time.perf_counter() - started,
    )

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(format_run_config(cfg))
        net.save(out / "student.ckpt")
        (out / "metrics.json").write_text(
            json.dumps(report.to_dict(), indent=2) + "\n")
        if cfg.run.export_csv:
            write_loss_csv(log, out / "loss.csv")
            subset = evaluation["student_record"]
            write_trajectory_csv(subset, out / "trajectories.csv",
                                 limit=cfg.run.trajectory_samples)
        if cfg.run.export_svg:
            spec = cfg.teacher.build_spec()
            trajectory_overlay_svg(
                [("teacher", "#888888", evaluation["reference_record"]),
                 ("student", "#1f6fd6", evaluation["student_record"])],
                out / "overlay.svg",
                means=spec.means,
                limit=cfg.run.trajectory_samples,
            )
    return report, net, log


ABLATION_STUDIES = ("gamma_mode", "sharing", "num_modes")


def ablation_cells(study: str, base: DistillConfig):
    """The configuration cells of one ablation study, derived from a base
    config by replacing only the studied fields."""
    rep = dataclasses.replace
    if study == "gamma_mode":
        return [(mode, rep(base, gamma_mode=mode))
                for mode in ("frozen_one", "fixed", "learnable")]
    if study == "sharing":
        return [
            ("vel_per_mode_gamma_shared",
             rep(base, gamma_mode="learnable", share_velocity=False,
                 share_gamma=True)),
            ("vel_shared_gamma_per_mode",
             rep(base, gamma_mode="learnable", share_velocity=True,
                 share_gamma=False)),
            ("all_per_mode",
             rep(base, gamma_mode="learnable", share_velocity=False,
                 share_gamma=False)),
        ]
    if study == "num_modes":
        return [(f"modes_{k}", rep(base, num_modes=k)) for k in (4, 8, 16)]
    raise InvalidParameterError(f"unknown ablation study {study!r}")


def ablation_budget(study: str, base: DistillConfig) -> int:
    """Per-study training budget.

    The momentum-dynamics and head-sharing studies compare how the cells
    track the teacher right after the guidance ramp, where the adaptive and
    the per-mode variants separate most cleanly, so they train for twice the
    ramp length.  The mode-count study compares capacity, which only binds
    at the full budget.
    """
    if study in ("gamma_mode", "sharing"):
        return min(2 * base.guidance_steps, base.total_steps)
    return base.total_steps


def run_ablation(cfg: RunConfig, studies=ABLATION_STUDIES, seeds=(0, 1, 2)):
    """Paired-seed ablation grid.  Every cell at a given seed shares the
    net-init/training/evaluation streams, so differences come from the cell's
    configuration alone.  Returns rows (study, cell, seed, endpoint_mse,
    final_loss)."""
    rows = []
    for study in studies:
        budget = ablation_budget(study, cfg.distill)
        for cell_name, dcfg in ablation_cells(study, cfg.distill):
            for seed in seeds:
                seeded = dataclasses.replace(dcfg, seed=int(seed),
                                             total_steps=budget)
                cell_cfg = RunConfig(cfg.teacher, seeded, cfg.run)
                report, _, log = run_distillation(cell_cfg, out_dir=None)
                rows.append((study, cell_name, int(seed),
                             report.endpoint_mse, float(log[-1][2])))
    return rows


# -- artifact writers -------------------------------------------------------------


def fmt(value: float) -> str:
    """Floats are serialized with 17 significant digits so reading them back
    reproduces the exact double."""
    return f"{value:.17g}"


def write_loss_csv(rows, path):
    lines = ["step,lambda,loss,shelf"]
    for step_idx, lam, loss, shelf in rows:
        lines.append(f"{step_idx},{fmt(lam)},{fmt(loss)},{fmt(shelf)}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_trajectory_csv(record: TrajectoryRecord, path, limit=None):
    pos = record.positions
    if pos.ndim == 2:  # single trajectory
        pos = pos[:, None, :]
    count = pos.shape[1] if limit is None else min(int(limit), pos.shape[1])
    dim = pos.shape[2]
    header = "trajectory,t," + ",".join(f"x{d}" for d in range(dim))
    lines = [header]
    times = record.times
    for b in range(count):
        for i, t in enumerate(times):
            coords = ",".join(fmt(pos[i, b, d]) for d in range(dim))
            lines.append(f"{b},{fmt(t)},{coords}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_ablation_csv(rows, path):
    lines = ["study,cell,seed,endpoint_mse,final_loss"]
    for study, cell, seed, mse, loss in rows:
        lines.append(f"{study},{cell},{seed},{fmt(mse)},{fmt(loss)}")
    Path(path).write_text("\n".join(lines) + "\n")
