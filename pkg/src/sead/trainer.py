"""Chaos training: fit the kernel to single-step transitions of a reference rule."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .kernel import KernelParams, forward_logits, loss_and_grad
from .lattice import ContractError, LocalRule, apply_rule_cells, decode_window
from .tasks import TaskSpec, gen_input

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    L_train: int = 16
    batch_size: int = 64
    steps: int = 5000
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    rho: float = 0.25
    eval_every: int = 50
    patience: int = 3

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ContractError("rho must lie in [0, 1]")
        if self.batch_size < 1 or self.steps < 0 or self.eval_every < 1:
            raise ContractError("batch_size, steps and eval_every must be positive")


def default_config(task: str) -> TrainConfig:
    budgets = {"parity": 5000, "addition": 20000, "rule110": 5000}
    # the rule-110 model is trained on L=32 states, the others on L=16
    return TrainConfig(steps=budgets[task], L_train=32 if task == "rule110" else 16)


@dataclass
class TrainReport:
    losses: list[float] = field(default_factory=list)
    evals: list[tuple[int, float]] = field(default_factory=list)
    solved_at: int | None = None
    steps_run: int = 0
    n_params: int = 0
    wall_clock: float = 0.0

    @property
    def final_accuracy(self) -> float:
        return self.evals[-1][1] if self.evals else 0.0

    def write_csv(self, path) -> None:
        acc = dict(self.evals)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "loss", "exhaustive_accuracy"])
            for step, loss in enumerate(self.losses, start=1):
                a = acc.get(step)
                w.writerow([step, repr(loss), "" if a is None else repr(a)])


def sample_chaos_batch(task: TaskSpec, config: TrainConfig, step: int) -> np.ndarray:
    """``(batch, L_train)`` states; deterministic in ``(config.seed, step)``."""
    rng = np.random.default_rng([config.seed, step])
    S, L = task.alphabet.size, config.L_train
    if L < 2 * task.radius + 1:
        raise ContractError("L_train shorter than one neighbourhood")
    batch = rng.integers(0, S, size=(config.batch_size, L), dtype=np.uint8)
    on_traj = rng.random(config.batch_size) < config.rho
    n_in = L - 1 if task.name == "addition" else L
    for i in np.flatnonzero(on_traj):
        inp = gen_input(task, n_in, "random", seed=int(rng.integers(2**63)))
        cells = task.encode_input(inp).cells
        for _ in range(int(rng.integers(0, L + 1))):
            cells = apply_rule_cells(cells, task.rule)
        batch[i] = cells
    return batch


def label_batch(batch: np.ndarray, rule: LocalRule) -> np.ndarray:
    return apply_rule_cells(batch, rule)


def all_windows(alphabet_size: int, radius: int) -> np.ndarray:
    width = 2 * radius + 1
    return np.array([decode_window(c, alphabet_size, width) for c in range(alphabet_size**width)], dtype=np.uint8)


def exhaustive_rule_accuracy(params: KernelParams, task: TaskSpec) -> float:
    windows = all_windows(task.alphabet.size, task.radius)
    pred = forward_logits(params, windows)[:, task.radius].argmax(axis=-1)
    return float((pred == task.rule.lookup).mean())


class Adam:
    def __init__(self, n: int, lr: float, beta1: float, beta2: float, eps: float):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1**self.t)
        vhat = self.v / (1 - self.b2**self.t)
        theta -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def train(params: KernelParams, task: TaskSpec, config: TrainConfig) -> tuple[KernelParams, TrainReport]:
    """Adam on chaos batches until the kernel matches the rule on every window.

    Stops after ``config.patience`` consecutive evaluations at accuracy 1.0,
    otherwise at the step budget. ``params`` is not modified.
    """
    arch = params.arch
    if arch.alphabet_size != task.alphabet.size or arch.radius != task.radius:
        raise ContractError("kernel architecture does not match the task")
    params = params.copy()
    opt = Adam(params.n_params, config.lr, config.beta1, config.beta2, config.eps)
    report = TrainReport(n_params=params.n_params)
    streak = 0
    t0 = time.perf_counter()
    for step in range(1, config.steps + 1):
        batch = sample_chaos_batch(task, config, step)
        loss, grad = loss_and_grad(params, batch, label_batch(batch, task.rule))
        if not np.isfinite(loss) or not np.isfinite(grad.theta).all():
            raise TrainingDivergedError(
                f"non-finite loss at step {step} (batch seed {[config.seed, step]})"
            )
        opt.step(params.theta, grad.theta)
        report.losses.append(loss)
        report.steps_run = step
        if step % config.eval_every == 0:
            acc = exhaustive_rule_accuracy(params, task)
            report.evals.append((step, acc))
            log.debug("step %d loss %.5f acc %.4f", step, loss, acc)
            if acc == 1.0:
                if report.solved_at is None:
                    report.solved_at = step
                streak += 1
                if streak >= config.patience:
                    break
            else:
                streak = 0
    report.wall_clock = time.perf_counter() - t0
    _check_loss_trend(report)
    return params, report


def _check_loss_trend(report: TrainReport, window: int = 100) -> None:
    losses = np.asarray(report.losses)
    if losses.size < 2 * window:
        return
    trailing = np.convolve(losses, np.ones(window) / window, mode="valid")
    half = trailing[trailing.size // 2 :]
    if half[-1] > half[0]:
        log.warning("trailing loss rose over the second half of training (%.3g -> %.3g)", half[0], half[-1])


def write_manifest(path, task: str, arch, config: TrainConfig, init_seed: int, extra: dict | None = None) -> None:
    data = {"task": task, "arch": asdict(arch), "config": asdict(config), "init_seed": init_seed}
    data.update(extra or {})
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
