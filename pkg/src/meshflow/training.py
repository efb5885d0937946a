"""Deterministic training loop, checkpointing, evaluation, and ablations."""

from __future__ import annotations

import dataclasses
import os
from typing import Sequence

import numpy as np

from . import tensor as T
from .config import TrainConfig, format_config, load_config
from .errors import ConfigurationError, EvaluationError
from .model import Model
from .objective import MetricsReport, mpjpe, mpjpe_z, mpve, pa_mpjpe
from .scenes import Scene, synth_scene
from .tensor import Tape, Tensor
from .tensorio import read_manifest, write_manifest

MM_PER_UNIT = 1000.0  # scenes are metric; metrics are reported in millimeters

_LOG_COMPONENTS = ("rle", "vertices", "pose3d", "pose2d", "silhouette")


class Adam:
    """Adam with bias correction; parameters update in a fixed name order."""

    def __init__(self, params: dict[str, Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.99, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def default_train_seeds(cfg: TrainConfig) -> list[int]:
    """Scene seeds derived from the config seed."""
    state = np.random.SeedSequence((cfg.seed, 1)).generate_state(cfg.num_scenes)
    return [int(s) for s in state]


def default_test_seeds(cfg: TrainConfig, count: int = 16) -> list[int]:
    state = np.random.SeedSequence((cfg.seed, 2)).generate_state(count)
    return [int(s) for s in state]


def make_scene(seed: int, cfg: TrainConfig) -> Scene:
    return synth_scene(seed, cfg.height, cfg.width, cfg.v_coarse)


def train(cfg: TrainConfig, train_seeds: Sequence[int] | None = None,
          out_dir: str | None = None) -> tuple[Model, list[dict]]:
    """Train a fresh model; returns it plus the per-step loss log."""
    cfg.validate()
    if train_seeds is None:
        train_seeds = default_train_seeds(cfg)
    scenes = [make_scene(s, cfg) for s in train_seeds]
    model = Model(cfg)
    adam = Adam(model.parameters(), lr=cfg.learning_rate,
                beta1=cfg.beta1, beta2=cfg.beta2)
    weights = model.effective_weights()

    log: list[dict] = []
    step = 0
    for epoch in range(cfg.epochs):
        order = np.random.default_rng(
            np.random.SeedSequence((cfg.seed, 3, epoch))).permutation(len(scenes))
        for start in range(0, len(scenes), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            step += 1
            comp_sums = dict.fromkeys(_LOG_COMPONENTS, 0.0)
            with Tape() as tape:
                total = None
                for scene_index in batch:
                    try:
                        scene_total, comps = model.scene_loss(
                            scenes[scene_index], weights, train_mode=True,
                            step=step, scene_index=int(scene_index))
                    except EvaluationError as err:
                        raise EvaluationError(
                            f"training aborted at step {step}: {err}") from err
                    total = scene_total if total is None else T.add(total, scene_total)
                    for name, value in comps.items():
                        comp_sums[name] += value
                total = T.div(total, float(len(batch)))
            tape.backward(total)
            adam.step()
            adam.zero_grad()
            entry = {"step": step, "total": total.item()}
            for name in _LOG_COMPONENTS:
                entry[name] = comp_sums[name] / len(batch)
            log.append(entry)

    if out_dir is not None:
        save_checkpoint(model, out_dir)
        write_loss_log(log, os.path.join(out_dir, "loss_log.txt"))
    return model, log


def write_loss_log(log: list[dict], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entry in log:
            parts = [f"step={entry['step']}", f"total={entry['total']!r}"]
            parts += [f"{name}={entry[name]!r}" for name in _LOG_COMPONENTS]
            fh.write(" ".join(parts) + "\n")


def save_checkpoint(model: Model, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    write_manifest(directory, model.state())
    with open(os.path.join(directory, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(format_config(model.cfg))


def load_checkpoint(directory: str) -> Model:
    config_path = os.path.join(directory, "config.txt")
    if not os.path.exists(config_path):
        raise ConfigurationError(f"no config.txt in {directory}")
    cfg = load_config(config_path)
    model = Model(cfg)
    model.load_state(read_manifest(directory))
    return model


def evaluate(model: Model, test_seeds: Sequence[int]) -> MetricsReport:
    """Aggregate metrics over scenes in seed order; masking/dropout off.

    Joints are regressed from both the predicted and the ground-truth mesh
    with the same canonical map, so a perfect mesh scores exactly zero.
    """
    cfg = model.cfg
    reg = model.joint_map.matrix
    sums = np.zeros(4)
    for seed in test_seeds:
        scene = make_scene(seed, cfg)
        pred = model.predict(scene)
        pred_mesh = pred["mu"] * MM_PER_UNIT
        gt_mesh = scene.gt_vertices * MM_PER_UNIT
        pred_joints = reg @ pred_mesh
        gt_joints = reg @ gt_mesh
        sums += np.array([
            mpjpe(pred_joints, gt_joints),
            pa_mpjpe(pred_joints, gt_joints),
            mpve(pred_mesh, gt_mesh),
            mpjpe_z(pred_joints, gt_joints),
        ])
    means = sums / len(test_seeds)
    return MetricsReport(mpjpe=float(means[0]), pa_mpjpe=float(means[1]),
                         mpve=float(means[2]), mpjpe_z=float(means[3]))


TOGGLE_NAMES = {
    "depth": "depth_stream",
    "dist": "distribution",
    "silh": "silhouette",
    "mask": "masking",
}


def ablate(cfg: TrainConfig, toggles: Sequence[str],
           train_seeds: Sequence[int] | None = None,
           test_seeds: Sequence[int] | None = None
           ) -> list[dict]:
    """Train one arm per toggle combination with identical data seeds.

    ``toggles`` entries are either a single name from TOGGLE_NAMES or a
    ``+``-joined combination (e.g. ``silh+mask``); each arm disables the
    named modules relative to the base config. A ``full`` arm is always
    included first and the table reports deltas against it.
    """
    cfg.validate()
    if train_seeds is None:
        train_seeds = default_train_seeds(cfg)
    if test_seeds is None:
        test_seeds = default_test_seeds(cfg)

    arms: list[tuple[str, tuple[str, ...]]] = [("full", ())]
    for spec in toggles:
        names = tuple(part.strip() for part in spec.split("+") if part.strip())
        for name in names:
            if name not in TOGGLE_NAMES:
                raise ConfigurationError(
                    f"unknown toggle {name!r}; known: {sorted(TOGGLE_NAMES)}")
        arms.append((f"no_{'_'.join(names)}", names))

    rows: list[dict] = []
    for label, disabled in arms:
        overrides = {TOGGLE_NAMES[name]: False for name in disabled}
        arm_cfg = dataclasses.replace(cfg, **overrides)
        arm_model, _ = train(arm_cfg, train_seeds)
        report = evaluate(arm_model, test_seeds)
        rows.append({"arm": label, "mpjpe": report.mpjpe,
                     "pa_mpjpe": report.pa_mpjpe, "mpve": report.mpve,
                     "mpjpe_z": report.mpjpe_z})
    return rows


def format_ablation_table(rows: list[dict]) -> str:
    metrics = ("mpjpe", "pa_mpjpe", "mpve", "mpjpe_z")
    full = rows[0]
    header = f"{'arm':<16}" + "".join(f"{m:>12}" for m in metrics)
    header += "".join(f"{'d_' + m:>12}" for m in metrics)
    lines = [header]
    for row in rows:
        line = f"{row['arm']:<16}"
        line += "".join(f"{row[m]:>12.3f}" for m in metrics)
        line += "".join(f"{row[m] - full[m]:>12.3f}" for m in metrics)
        lines.append(line)
    return "\n".join(lines)
