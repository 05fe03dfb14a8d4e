"""Training loop: Adam with linear-warmup + cosine-decay schedule.

Desk-scale defaults (batch 128, warmup 200, cosine 4000) are set in
``TrainConfig``; the full-scale schedule (batch 1024, warmup 2500, cosine
50000, same lr endpoints) is a config file away.  Early stopping watches
validation MSE every ``eval_every`` steps with a fixed patience; the best
parameters are restored before returning.
"""
from __future__ import annotations

import copy
import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..config import SetNetConfig, TrainConfig
from ..rng import DOM_TRAIN, make_rng, seed_seq
from .encoding import EncodedSamples
from .model import DeepSetRisk, batch_loss, collate, sample_mse


def setup_torch_threads() -> None:
    """Pin torch's CPU thread count (env override: PCT_THREADS)."""
    threads = os.environ.get("PCT_THREADS")
    if threads:
        torch.set_num_threads(max(1, int(threads)))


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Learning rate at an optimizer step: linear warmup then cosine decay."""
    if step < cfg.warmup_steps:
        return cfg.peak_lr * step / cfg.warmup_steps
    t = min(1.0, (step - cfg.warmup_steps) / cfg.cosine_steps)
    return cfg.final_lr + 0.5 * (cfg.peak_lr - cfg.final_lr) * (1.0 + math.cos(math.pi * t))


def init_model(net_cfg: SetNetConfig | None = None, seed: int = 0) -> DeepSetRisk:
    """Fresh network with deterministic initialization."""
    torch.manual_seed(int(seed_seq(seed, DOM_TRAIN).generate_state(1)[0]))
    return DeepSetRisk(net_cfg)


def evaluate(model: DeepSetRisk, data: EncodedSamples, batch_size: int = 512) -> float:
    """Mean per-sample MSE over a dataset."""
    if len(data) == 0:
        raise ValueError("evaluate: empty dataset")
    en_dim = model.cfg.en_dim
    total = 0.0
    model.eval()
    with torch.no_grad():
        for lo in range(0, len(data), batch_size):
            idx = np.arange(lo, min(lo + batch_size, len(data)))
            batch = collate(data, idx, en_dim)
            total += float(sample_mse(model(batch), batch["target"]).sum())
    model.train()
    return total / len(data)


def mean_predictor_mse(train_targets: np.ndarray, eval_targets: np.ndarray) -> float:
    """MSE of the baseline that always predicts the training-mean history."""
    mean_hist = train_targets.mean(axis=0, keepdims=True)
    return float(((eval_targets - mean_hist) ** 2).mean(axis=1).mean())


@dataclass
class TrainResult:
    steps: int
    best_step: int
    best_val: float
    history: list[tuple[int, float, float, float]] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "lr", "train_mse", "val_mse"])
            w.writerows(self.history)


def train(model: DeepSetRisk, train_data: EncodedSamples, val_data: EncodedSamples,
          cfg: TrainConfig, log_path: str | Path | None = None,
          stop_below: float | None = None) -> TrainResult:
    """Mini-batch Adam training with early stopping on validation MSE.

    The model is left holding the best-validation parameters.  ``stop_below``
    optionally ends training as soon as validation MSE reaches a target.
    """
    cfg.validate()
    if len(train_data) == 0 or len(val_data) == 0:
        raise ValueError("train: empty dataset")
    setup_torch_threads()
    rng = make_rng(cfg.seed, DOM_TRAIN, 1)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.peak_lr,
                           betas=(cfg.adam_beta1, cfg.adam_beta2), eps=cfg.adam_eps)
    en_dim = model.cfg.en_dim

    best_val = math.inf
    best_step = 0
    best_state = copy.deepcopy(model.state_dict())
    history: list[tuple[int, float, float, float]] = []
    bad_evals = 0
    run_mse_sum, run_mse_n = 0.0, 0
    step = 0
    stop = False
    model.train()

    while not stop:
        order = rng.permutation(len(train_data))
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            if idx.size < cfg.batch_size and len(order) >= cfg.batch_size:
                break  # drop ragged tail batch; next epoch reshuffles
            lr = lr_at(step, cfg)
            for group in opt.param_groups:
                group["lr"] = lr
            batch = collate(train_data, idx, en_dim)
            opt.zero_grad()
            y_hat = model(batch)
            loss = batch_loss(y_hat, batch["target"])
            loss.backward()
            opt.step()
            run_mse_sum += float(loss.detach())
            run_mse_n += idx.size
            step += 1

            if step % cfg.eval_every == 0 or step >= cfg.max_steps:
                val = evaluate(model, val_data)
                train_mse = run_mse_sum / max(1, run_mse_n)
                run_mse_sum, run_mse_n = 0.0, 0
                history.append((step, lr, train_mse, val))
                if val < best_val:
                    best_val, best_step = val, step
                    best_state = copy.deepcopy(model.state_dict())
                    bad_evals = 0
                else:
                    bad_evals += 1
                if (bad_evals > cfg.patience or step >= cfg.max_steps
                        or (stop_below is not None and val <= stop_below)):
                    stop = True
                    break

    model.load_state_dict(best_state)
    result = TrainResult(steps=step, best_step=best_step, best_val=best_val,
                         history=history)
    if log_path is not None:
        result.write_csv(log_path)
    return result
