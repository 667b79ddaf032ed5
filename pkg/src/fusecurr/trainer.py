"""Pre-training, reinforced distillation episodes, evaluation and synthetic data."""
from __future__ import annotations

import csv
import io
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import metrics as M
from .agent import Action, Agent, State, Trajectory
from .config import TrainConfig
from .degrade import DegradationParams, degrade_pair, derive_seed
from .errors import DatasetError, DimensionError, NumericsError
from .filters import gaussian_kernel1d, separable
from .fusenet import (
    FeaturePyramid,
    FileTeacher,
    RuleTeacher,
    StudentNet,
    guidance_from_features,
    loss_self_learning,
    loss_total,
    make_teacher,
)
from .imgio import list_pairs, load_pgm, save_pgm
from .micrograd import Adam, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

PYRAMID_SEED = 19
LOG_COLUMNS = (
    "epoch", "step", "alpha_t", "alpha_s",
    "blur", "compress", "brightness", "contrast", "noise",
    "l_t", "l_s", "l_a", "reward", "e_student", "e_teacher",
    *(f"ms_{m}" for m in M.STATE_METRICS),
    *(f"gap_{m}" for m in M.STATE_METRICS),
)
EVAL_COLUMNS = ("name", "ag", "sf", "viff", "ei", "en", "sd", "iqa")
METRICS_COLUMNS = ("path", "ag", "sf", "ei", "en", "sd", "viff", "iqa")
_VIF, _IQA = M.STATE_METRICS.index("vif"), M.STATE_METRICS.index("iqa")

# derive_seed tags
_STUDENT_INIT, _AGENT_INIT, _SHUFFLE, _CROP, _PROBE, _ACTION, _DEGRADE = range(7)


def fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


# --- data ------------------------------------------------------------------


@dataclass
class Sample:
    stem: str
    ir: np.ndarray
    vi: np.ndarray
    teacher: np.ndarray


def load_dataset(dataset_dir, teacher) -> list[Sample]:
    """Load every ``<stem>_ir.pgm``/``<stem>_vi.pgm`` pair and its teacher fusion."""
    if not os.path.isdir(dataset_dir):
        raise DatasetError(f"dataset directory {dataset_dir} does not exist")
    stems = list_pairs(dataset_dir)
    if not stems:
        raise DatasetError(f"no <stem>_ir.pgm/<stem>_vi.pgm pairs in {dataset_dir}")
    samples = []
    for stem in stems:
        ir = load_pgm(os.path.join(dataset_dir, f"{stem}_ir.pgm"))
        vi = load_pgm(os.path.join(dataset_dir, f"{stem}_vi.pgm"))
        if ir.shape != vi.shape:
            raise DimensionError(f"{stem}: ir {ir.shape} and vi {vi.shape} differ")
        samples.append(Sample(stem, ir, vi, teacher.fuse(ir, vi, stem)))
    return samples


def effective_crop(samples: list[Sample], crop: int) -> int:
    smallest = min(min(s.ir.shape) for s in samples)
    size = min(crop, smallest // 16 * 16)
    if size < 16:
        raise DatasetError(f"images of {smallest}px are too small for 16x16 crops")
    return size


def crop_sample(s: Sample, top: int, left: int, size: int):
    sl = (slice(top, top + size), slice(left, left + size))
    return s.ir[sl], s.vi[sl], s.teacher[sl]


def random_crop(s: Sample, size: int, rng: np.random.Generator):
    h, w = s.ir.shape
    return crop_sample(s, int(rng.integers(0, h - size + 1)), int(rng.integers(0, w - size + 1)), size)


def center_crop(s: Sample, size: int):
    h, w = s.ir.shape
    return crop_sample(s, (h - size) // 2, (w - size) // 2, size)


# --- state and reward ------------------------------------------------------


def _fold_and_scale(norm: M.RunningNormalizer, student_m: M.MetricVector, teacher_m: M.MetricVector):
    t, s = teacher_m.as_array(), student_m.as_array()
    norm.update(t)
    norm.update(s)
    return norm.scale(s), norm.scale(t)


def build_state(norm, student_fused, teacher_fused, ir, vi) -> State:
    """``[m_s, m_t - m_s]`` on metrics normalised by the shared running normaliser."""
    ms, mt = _fold_and_scale(norm, M.metric_vector(student_fused, ir, vi), M.metric_vector(teacher_fused, ir, vi))
    return State(tuple(ms), tuple(mt - ms))


def evaluation_score(scaled: np.ndarray) -> float:
    return 0.5 * (scaled[_VIF] + scaled[_IQA])


def compute_reward(student_fused, teacher_fused, ir, vi, norm) -> tuple[float, float, float]:
    """Returns ``(reward, E_student, E_teacher)``."""
    ms, mt = _fold_and_scale(norm, M.metric_vector(student_fused, ir, vi), M.metric_vector(teacher_fused, ir, vi))
    e_s, e_t = evaluation_score(ms), evaluation_score(mt)
    return e_s - e_t, e_s, e_t


# --- student updates -------------------------------------------------------


@dataclass
class StepLosses:
    l_t: float
    l_s: float
    l_a: float


def student_step(student, opt, pyr, batch, action: Action, seed: int, teacher=None, teacher_input="original"):
    """One Adam step on the batch-mean total loss under ``action``.

    ``batch`` holds ``(ir, vi, teacher_fused)`` crops. Returns the mean losses
    measured before the update.
    """
    params = DegradationParams.from_knobs(action.d)
    grads = {k: np.zeros_like(v) for k, v in student.params.items()}
    totals = np.zeros(3)
    for i, (ir, vi, t_fused) in enumerate(batch):
        ir_d, vi_d = degrade_pair(ir, vi, params, derive_seed(seed, i))
        if teacher_input == "degraded":
            t_fused = teacher.fuse(ir_d, vi_d)
        fo, cache_o = student.forward(ir, vi)
        fd, cache_d = student.forward(ir_d, vi_d)
        l_t, g_t = guidance_from_features(pyr, fo, pyr.features(t_fused))
        l_s, g_so, g_sd = loss_self_learning(fo, fd)
        l_a = loss_total(l_t, l_s, action.alpha_t, action.alpha_s)
        totals += (l_t, l_s, l_a)
        g_o = student.backward(action.alpha_t * g_t + action.alpha_s * g_so, cache_o)
        g_d = student.backward(action.alpha_s * g_sd, cache_d)
        for k in grads:
            grads[k] += g_o[k] + g_d[k]
    n = len(batch)
    mean = totals / n
    if not np.all(np.isfinite(mean)):
        raise NumericsError(f"non-finite loss {mean.tolist()}")
    opt.step(student.params, {k: g / n for k, g in grads.items()})
    return StepLosses(*mean)


PRETRAIN_ACTION = Action(1.0, 0.0, (0.0,) * 5)


@dataclass
class Engine:
    """Mutable training state shared by pre-training and episodes."""

    config: TrainConfig
    samples: list[Sample]
    student: StudentNet
    agent: Agent
    pyramid: FeaturePyramid
    teacher: object
    opt: Adam
    norm: M.RunningNormalizer = field(default_factory=M.RunningNormalizer)
    crop: int = 64

    @classmethod
    def create(cls, config: TrainConfig) -> "Engine":
        teacher = make_teacher(config.teacher)
        if config.teacher_input == "degraded" and isinstance(teacher, FileTeacher):
            raise DatasetError("teacher_input=degraded needs a teacher that can fuse arbitrary inputs")
        samples = load_dataset(config.dataset_dir, teacher)
        return cls(
            config=config,
            samples=samples,
            student=StudentNet.init(derive_seed(config.seed, _STUDENT_INIT)),
            agent=Agent.init(derive_seed(config.seed, _AGENT_INIT), config.agent_lr, config.baseline_enabled),
            pyramid=FeaturePyramid.init(PYRAMID_SEED),
            teacher=teacher,
            opt=Adam(config.student_lr),
            crop=effective_crop(samples, config.crop),
        )

    @property
    def batch_size(self) -> int:
        return min(self.config.batch_size, len(self.samples))

    def _rng(self, *path) -> np.random.Generator:
        return np.random.default_rng(derive_seed(self.config.seed, *path))

    def epoch_batches(self, phase: int, epoch: int):
        """Shuffled batches of random crops covering the dataset once."""
        order = self._rng(_SHUFFLE, phase, epoch).permutation(len(self.samples))
        crop_rng = self._rng(_CROP, phase, epoch)
        b = self.batch_size
        for start in range(0, len(order), b):
            yield [random_crop(self.samples[i], self.crop, crop_rng) for i in order[start:start + b]]

    def step_batch(self, epoch: int, step: int):
        rng = self._rng(_CROP, 2, epoch, step)
        idx = rng.choice(len(self.samples), self.batch_size, replace=False)
        return [random_crop(self.samples[i], self.crop, rng) for i in np.sort(idx)]

    # -- pre-training --

    def pretrain_epoch(self, epoch: int) -> float:
        losses = [
            student_step(self.student, self.opt, self.pyramid, batch, PRETRAIN_ACTION,
                         derive_seed(self.config.seed, _DEGRADE, 1, epoch, j)).l_t
            for j, batch in enumerate(self.epoch_batches(1, epoch))
        ]
        return float(np.mean(losses))

    def pretrain(self, epochs: int | None = None) -> list[float]:
        epochs = self.config.pretrain_epochs if epochs is None else epochs
        history = []
        for epoch in range(epochs):
            history.append(self.pretrain_epoch(epoch))
            log.info("pretrain epoch %d: mean L_t %.6f", epoch, history[-1])
        return history

    # -- reinforced episodes --

    def probe(self, epoch: int):
        i = int(self._rng(_PROBE, epoch).integers(len(self.samples)))
        return center_crop(self.samples[i], self.crop)

    def run_episode(self, epoch: int, action_override: Action | None = None, update_agent: bool = True):
        """Run ``steps_per_episode`` student steps under agent actions, then update the agent.

        Returns ``(trajectory, rows)``; ``action_override`` freezes the policy.
        """
        cfg = self.config
        traj, rows = Trajectory(), []
        if cfg.steps_per_episode == 0:
            return traj, rows
        ir_p, vi_p, t_p = self.probe(epoch)
        m_teacher = M.metric_vector(t_p, ir_p, vi_p)
        m_student = M.metric_vector(self.student(ir_p, vi_p), ir_p, vi_p)
        for step in range(cfg.steps_per_episode):
            ms, mt = _fold_and_scale(self.norm, m_student, m_teacher)
            state = State(tuple(ms), tuple(mt - ms))
            s_arr, raw, action, logp = self.agent.act(state, derive_seed(cfg.seed, _ACTION, epoch, step))
            if action_override is not None:
                action = action_override
            losses = student_step(
                self.student, self.opt, self.pyramid, self.step_batch(epoch, step), action,
                derive_seed(cfg.seed, _DEGRADE, 2, epoch, step), self.teacher, cfg.teacher_input,
            )
            m_student = M.metric_vector(self.student(ir_p, vi_p), ir_p, vi_p)
            ms_after, mt_after = _fold_and_scale(self.norm, m_student, m_teacher)
            e_s, e_t = evaluation_score(ms_after), evaluation_score(mt_after)
            reward = e_s - e_t
            traj.append(s_arr, raw, logp, reward)
            params = action.degradation()
            rows.append((
                epoch, step, action.alpha_t, action.alpha_s, *params.as_array(),
                losses.l_t, losses.l_s, losses.l_a, reward, e_s, e_t,
                *state.m_s, *state.gap,
            ))
        if update_agent and action_override is None:
            self.agent.update(traj, cfg.p)
        return traj, rows

    def train_episodes(self, epochs: int | None = None) -> list[tuple]:
        epochs = self.config.train_epochs if epochs is None else epochs
        rows = []
        for epoch in range(epochs):
            _, episode_rows = self.run_episode(epoch)
            rows.extend(episode_rows)
            mean_r = np.mean([r[12] for r in episode_rows]) if episode_rows else 0.0
            log.info("episode %d: mean reward %.5f", epoch, mean_r)
        return rows


def curriculum_summary(rows, window: int = 20) -> dict[str, float | bool]:
    """Difficulty and reward trends over a training log.

    ``difficulty_first``/``difficulty_last`` are the mean L1 distances of the
    logged degradation parameters from the identity point over the first and
    last quartile of steps; ``reward_start``/``reward_end`` are the first and
    last ``window``-step moving averages of the reward. ``signal`` is true when
    the agent raised difficulty or the reward average went up.
    """
    if not rows:
        raise ValueError("empty training log")
    col = {name: i for i, name in enumerate(LOG_COLUMNS)}
    identity = DegradationParams.identity().as_array()
    knobs = np.array([[r[col[k]] for k in ("blur", "compress", "brightness", "contrast", "noise")] for r in rows])
    magnitude = np.abs(knobs - identity).sum(axis=1)
    rewards = np.array([r[col["reward"]] for r in rows], dtype=np.float64)
    q = max(len(rows) // 4, 1)
    w = min(window, len(rows))
    out = {
        "difficulty_first": float(magnitude[:q].mean()),
        "difficulty_last": float(magnitude[-q:].mean()),
        "reward_start": float(rewards[:w].mean()),
        "reward_end": float(rewards[-w:].mean()),
    }
    out["signal"] = out["difficulty_last"] > out["difficulty_first"] or out["reward_end"] > out["reward_start"]
    return out


# --- top-level operations --------------------------------------------------


@dataclass
class TrainResult:
    student: StudentNet
    agent: Agent
    pretrain_history: list[float]
    rows: list[tuple]
    student_path: str
    agent_path: str
    log_path: str


def pretrain(config: TrainConfig) -> tuple[StudentNet, list[float], str]:
    """Teacher-guidance-only training; writes ``student_pretrain.fckpt``."""
    engine = Engine.create(config)
    history = engine.pretrain()
    os.makedirs(config.out_dir, exist_ok=True)
    path = os.path.join(config.out_dir, "student_pretrain.fckpt")
    save_checkpoint(path, engine.student.state_dict())
    return engine.student, history, path


def train(config: TrainConfig) -> TrainResult:
    engine = Engine.create(config)
    history = engine.pretrain()
    rows = engine.train_episodes()
    os.makedirs(config.out_dir, exist_ok=True)
    student_path = os.path.join(config.out_dir, "student.fckpt")
    agent_path = os.path.join(config.out_dir, "agent.fckpt")
    save_checkpoint(student_path, engine.student.state_dict())
    save_checkpoint(agent_path, engine.agent.state_dict())
    write_csv(config.log_path, LOG_COLUMNS, rows)
    return TrainResult(engine.student, engine.agent, history, rows, student_path, agent_path, config.log_path)


def load_student(path) -> StudentNet:
    return StudentNet.from_state_dict(load_checkpoint(path))


def evaluate(ckpt, dataset_dir, out_dir) -> list[dict]:
    """Fuse every pair, save ``<stem>.pgm`` and ``metrics.csv`` in ``out_dir``.

    ``ckpt == "rule"`` evaluates the rule teacher instead of a student.
    """
    fuse = RuleTeacher().fuse if ckpt == "rule" else load_student(ckpt)
    if not os.path.isdir(dataset_dir):
        raise DatasetError(f"dataset directory {dataset_dir} does not exist")
    stems = list_pairs(dataset_dir)
    if not stems:
        raise DatasetError(f"no complete <stem>_ir.pgm/<stem>_vi.pgm pairs in {dataset_dir}")
    os.makedirs(out_dir, exist_ok=True)
    records = []
    for stem in stems:
        ir = load_pgm(os.path.join(dataset_dir, f"{stem}_ir.pgm"))
        vi = load_pgm(os.path.join(dataset_dir, f"{stem}_vi.pgm"))
        fused = fuse(ir, vi)
        save_pgm(fused, os.path.join(out_dir, f"{stem}.pgm"))
        report = M.full_report(fused, ir, vi)
        records.append({"name": stem, **{k: report[k] for k in EVAL_COLUMNS[1:]}})
    mean = {"name": "mean", **{k: float(np.mean([r[k] for r in records])) for k in EVAL_COLUMNS[1:]}}
    write_csv(os.path.join(out_dir, "metrics.csv"), EVAL_COLUMNS, [[r[k] for k in EVAL_COLUMNS] for r in records + [mean]])
    return records + [mean]


def _source_stem(name: str) -> str:
    stem = name[: -len(".pgm")]
    for suffix in ("_ir", "_vi"):
        if stem.endswith(suffix):
            return stem[: -len(suffix)]
    return stem


def metrics_table(data_dir, out_csv, sources_dir=None) -> list[list]:
    """One row per PGM in ``data_dir``; ``viff`` is filled when source images are found."""
    sources_dir = data_dir if sources_dir is None else sources_dir
    names = sorted(n for n in os.listdir(data_dir) if n.endswith(".pgm"))
    if not names:
        raise DatasetError(f"no .pgm files in {data_dir}")
    rows = []
    for name in names:
        path = os.path.join(data_dir, name)
        img = load_pgm(path)
        stem = _source_stem(name)
        ir_path = os.path.join(sources_dir, f"{stem}_ir.pgm")
        vi_path = os.path.join(sources_dir, f"{stem}_vi.pgm")
        ir = vi = None
        if os.path.exists(ir_path) and os.path.exists(vi_path):
            ir, vi = load_pgm(ir_path), load_pgm(vi_path)
            if ir.shape != img.shape:
                ir = vi = None
        report = M.full_report(img, ir, vi)
        rows.append([path] + ["" if np.isnan(report[k]) else report[k] for k in METRICS_COLUMNS[1:]])
    write_csv(out_csv, METRICS_COLUMNS, rows)
    return rows


# --- synthetic data --------------------------------------------------------


def _band_noise(rng, size: int, sigma: float) -> np.ndarray:
    k = 2 * int(np.ceil(3 * sigma)) + 1
    field_ = separable(rng.standard_normal((size, size)), gaussian_kernel1d(k, sigma))
    field_ -= field_.min()
    return field_ / max(field_.max(), 1e-12)


def synthetic_pair(size: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """IR/VI pair with complementary content.

    VI: band-limited texture with dark low-light regions. IR: smooth
    background with bright blobs placed inside those dark regions.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    texture = 0.6 * _band_noise(rng, size, 1.0) + 0.4 * _band_noise(rng, size, 3.0)
    vi = 0.15 + 0.75 * texture
    ir = 0.15 + 0.2 * _band_noise(rng, size, size / 6.0)
    for _ in range(int(rng.integers(2, 4))):
        cy, cx = rng.uniform(0.2 * size, 0.8 * size, 2)
        r_dark = rng.uniform(0.12, 0.2) * size
        dist2 = ((yy - cy) ** 2 + (xx - cx) ** 2) / (r_dark ** 2)
        vi *= 1.0 - 0.8 * np.exp(-dist2 ** 2)
        r_blob = r_dark * rng.uniform(0.35, 0.6)
        ir += 0.65 * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r_blob ** 2))
    return np.clip(ir, 0.0, 1.0), np.clip(vi, 0.0, 1.0)


def make_synthetic_dataset(out_dir, n_pairs: int, size: int, seed: int) -> list[str]:
    if size < 16 or size % 16:
        raise DimensionError(f"size must be a multiple of 16, got {size}")
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for i in range(n_pairs):
        ir, vi = synthetic_pair(size, derive_seed(seed, i))
        for tag, img in (("ir", ir), ("vi", vi)):
            path = os.path.join(out_dir, f"pair{i:03d}_{tag}.pgm")
            save_pgm(img, path)
            written.append(path)
    return written
