"""Checkpoint-backed predictor driver for simulation runs."""
from __future__ import annotations

import numpy as np
import torch

from ..config import DAY_WINDOW
from ..epi.world import Driver
from ..tracing import Observables
from .encoding import encode_count, encode_observables
from .model import DeepSetRisk, load_params
from .training import setup_torch_threads


def batch_from_observables(obs_list: list[Observables], en_dim: int) -> dict[str, torch.Tensor]:
    """Featurize a list of device views into padded batch tensors (no targets)."""
    encoded = [encode_observables(o) for o in obs_list]
    statuses = np.stack([e[0] for e in encoded])
    profile = np.stack([e[1] for e in encoded])
    emax = max((e[2].shape[0] for e in encoded), default=0)
    bsz = len(obs_list)
    e_offset = np.zeros((bsz, emax), dtype=np.int64)
    e_level = np.zeros((bsz, emax), dtype=np.int64)
    e_count = np.zeros((bsz, emax), dtype=np.float64)
    e_mask = np.zeros((bsz, emax), dtype=bool)
    for row, (_, _, cl) in enumerate(encoded):
        k = cl.shape[0]
        if k:
            e_offset[row, :k], e_level[row, :k], e_count[row, :k] = cl.T
            e_mask[row, :k] = True
    return {
        "statuses": torch.as_tensor(statuses),
        "profile": torch.as_tensor(profile),
        "e_offset": torch.as_tensor(e_offset),
        "e_level": torch.as_tensor(e_level),
        "e_count_enc": torch.as_tensor(encode_count(e_count, en_dim),
                                       dtype=torch.float32),
        "e_mask": torch.as_tensor(e_mask),
    }


class ModelDriver(Driver):
    """Runs the trained set network over app users' observables each day.

    Sees only Observables — never simulator ground truth.
    """

    name = "ds-pct"

    def __init__(self, model: DeepSetRisk, meta: dict | None = None):
        setup_torch_threads()
        self.model = model.eval()
        self.meta = meta or {}

    @classmethod
    def load(cls, path: str) -> "ModelDriver":
        model, extra = load_params(path)
        return cls(model, extra)

    def predict(self, world, day, ids, obs_list) -> np.ndarray:
        if not obs_list:
            return np.zeros((0, DAY_WINDOW + 1))
        batch = batch_from_observables(obs_list, self.model.cfg.en_dim)
        with torch.no_grad():
            y_hat = self.model(batch)
        return y_hat.numpy().astype(np.float64)
