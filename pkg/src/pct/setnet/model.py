"""Permutation-invariant set network predicting 15-day infectiousness histories.

Each sample is a set of element vectors in a common width: 15 per-day "D"
elements (status x profile x day-offset embeddings) plus one "E" element per
received message cluster (level x count x that day's status x day-offset).
Five set blocks refine the elements — per-element perceptron, masked
elementwise max-pool across the set, broadcast + concat, second perceptron,
residual add — and an output head reads the 15 D elements through a softplus
so predictions are non-negative.

Gradients come from reverse-mode autodiff (`backward` below); the max-pool
routes gradient to the first maximal element on ties.
"""
from __future__ import annotations

import json
from dataclasses import asdict

import numpy as np
import torch
from torch import nn

from ..config import DAY_WINDOW, SetNetConfig
from .encoding import EncodedSamples, STATUS_DIM, day_offsets, encode_count

from ..tracing import PROFILE_DIM

PARAM_FORMAT = "pct-setnet"
PARAM_VERSION = 1


def _mlp2(d_in: int, d_out: int) -> nn.Sequential:
    """2-layer perceptron used for the status/profile embeddings."""
    return nn.Sequential(nn.Linear(d_in, d_out), nn.ReLU(), nn.Linear(d_out, d_out))


class SetBlock(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.pre = nn.Linear(width, width)
        self.post = nn.Linear(2 * width, width)

    def forward(self, x: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
        h = torch.relu(self.pre(x))
        # max (not amax): gradient goes to the first maximal element on ties
        pooled = h.masked_fill(~valid[..., None], float("-inf")).max(dim=1).values
        pooled = pooled[:, None, :].expand_as(h)
        z = torch.relu(self.post(torch.cat([h, pooled], dim=-1)))
        return x + z


class DeepSetRisk(nn.Module):
    def __init__(self, cfg: SetNetConfig | None = None):
        super().__init__()
        cfg = cfg or SetNetConfig()
        cfg.validate()
        self.cfg = cfg
        self.phi_h = _mlp2(STATUS_DIM, cfg.h_dim)
        self.phi_g = _mlp2(PROFILE_DIM, cfg.g_dim)
        self.phi_dd = nn.Linear(1, cfg.day_dim)
        self.phi_er = nn.Embedding(16, cfg.er_dim)
        self.proj_d = nn.Linear(cfg.h_dim + cfg.g_dim + cfg.day_dim, cfg.width)
        self.proj_e = nn.Linear(cfg.er_dim + cfg.en_dim + cfg.h_dim + cfg.day_dim,
                                cfg.width)
        self.blocks = nn.ModuleList(SetBlock(cfg.width) for _ in range(cfg.n_blocks))
        self.head = nn.Sequential(nn.Linear(cfg.width, cfg.head_hidden), nn.ReLU(),
                                  nn.Linear(cfg.head_hidden, 1))
        self.register_buffer("dd_days", torch.tensor(day_offsets()).reshape(-1, 1))
        self.debug_nan = False

    # ---------------------------------------------------------------- embed

    def embed(self, batch: dict[str, torch.Tensor]
              ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Build the element set: returns (x (B,N,W), valid (B,N), d_index (B,15))."""
        statuses, profile = batch["statuses"], batch["profile"]
        bsz = statuses.shape[0]
        s_emb = self.phi_h(statuses)                          # (B, 15, h)
        g_emb = self.phi_g(profile)[:, None, :].expand(-1, DAY_WINDOW + 1, -1)
        dd = self.phi_dd(self.dd_days.to(statuses.dtype))[None].expand(bsz, -1, -1)
        d_elems = self.proj_d(torch.cat([s_emb, g_emb, dd], dim=-1))

        e_mask = batch["e_mask"]
        if e_mask.shape[1]:
            e_off = batch["e_offset"]                         # (B, Emax) long
            idx = e_off[..., None].expand(-1, -1, s_emb.shape[-1])
            e_h = s_emb.gather(1, idx)                        # status of the cluster's day
            e_r = self.phi_er(batch["e_level"])
            e_n = batch["e_count_enc"].to(statuses.dtype)
            e_dd = self.phi_dd((-e_off.to(statuses.dtype) / DAY_WINDOW)[..., None])
            e_elems = self.proj_e(torch.cat([e_r, e_n, e_h, e_dd], dim=-1))
            x = torch.cat([d_elems, e_elems], dim=1)
            valid = torch.cat([torch.ones(bsz, DAY_WINDOW + 1, dtype=torch.bool,
                                          device=x.device), e_mask], dim=1)
        else:
            x = d_elems
            valid = torch.ones(bsz, DAY_WINDOW + 1, dtype=torch.bool, device=x.device)
        d_index = torch.arange(DAY_WINDOW + 1, device=x.device)[None].expand(bsz, -1)
        return x, valid, d_index

    # -------------------------------------------------------------- forward

    def forward_set(self, x: torch.Tensor, valid: torch.Tensor,
                    d_index: torch.Tensor) -> torch.Tensor:
        """Set trunk + head over prebuilt elements (order-independent)."""
        for b, block in enumerate(self.blocks):
            x = block(x, valid)
            if self.debug_nan and not torch.isfinite(x[valid]).all():
                raise FloatingPointError(f"non-finite activations after block {b}")
        rows = x.gather(1, d_index[..., None].expand(-1, -1, x.shape[-1]))
        return nn.functional.softplus(self.head(rows).squeeze(-1))

    def forward(self, batch: dict[str, torch.Tensor]) -> torch.Tensor:
        return self.forward_set(*self.embed(batch))


# ------------------------------------------------------------------ batches

def collate(data: EncodedSamples, idx: np.ndarray, en_dim: int,
            dtype: torch.dtype = torch.float32) -> dict[str, torch.Tensor]:
    """Gather samples ``idx`` into padded batch tensors."""
    idx = np.asarray(idx)
    lengths = np.diff(data.cluster_bounds)[idx]
    emax = int(lengths.max()) if idx.size else 0
    bsz = idx.size
    e_offset = np.zeros((bsz, emax), dtype=np.int64)
    e_level = np.zeros((bsz, emax), dtype=np.int64)
    e_count = np.zeros((bsz, emax), dtype=np.float64)
    e_mask = np.zeros((bsz, emax), dtype=bool)
    for row, i in enumerate(idx):
        cl = data.clusters_of(int(i))
        k = cl.shape[0]
        if k:
            e_offset[row, :k] = cl[:, 0]
            e_level[row, :k] = cl[:, 1]
            e_count[row, :k] = cl[:, 2]
            e_mask[row, :k] = True
    return {
        "statuses": torch.as_tensor(data.statuses[idx], dtype=dtype),
        "profile": torch.as_tensor(data.profile[idx], dtype=dtype),
        "e_offset": torch.as_tensor(e_offset),
        "e_level": torch.as_tensor(e_level),
        "e_count_enc": torch.as_tensor(encode_count(e_count, en_dim), dtype=dtype),
        "e_mask": torch.as_tensor(e_mask),
        "target": torch.as_tensor(data.target[idx], dtype=dtype),
    }


# --------------------------------------------------------------------- loss

def sample_mse(y_hat: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Per-sample mean squared error over the 15 history entries."""
    if y_hat.shape != y.shape:
        raise ValueError(f"history shape mismatch: {tuple(y_hat.shape)} vs {tuple(y.shape)}")
    return ((y_hat - y) ** 2).mean(dim=-1)


def batch_loss(y_hat: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Net loss = sum of per-sample losses over the batch."""
    return sample_mse(y_hat, y).sum()


def backward(model: DeepSetRisk, batch: dict[str, torch.Tensor]
             ) -> dict[str, torch.Tensor]:
    """Reverse-mode gradients of the batch loss w.r.t. every parameter."""
    loss = batch_loss(model(batch), batch["target"])
    names, params = zip(*model.named_parameters())
    grads = torch.autograd.grad(loss, params)
    return dict(zip(names, grads))


# ------------------------------------------------------------ serialization

def save_params(path, model: DeepSetRisk, extra: dict | None = None) -> None:
    """Self-describing parameter container: version tag, config, shaped arrays."""
    meta = {"format": PARAM_FORMAT, "version": PARAM_VERSION,
            "config": asdict(model.cfg), "extra": extra or {}}
    arrays = {f"t__{k}": v.detach().cpu().numpy()
              for k, v in model.state_dict().items()}
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
                 **arrays)


def load_params(path) -> tuple[DeepSetRisk, dict]:
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        if meta.get("format") != PARAM_FORMAT or meta.get("version") != PARAM_VERSION:
            raise ValueError(f"unrecognized parameter file: {meta.get('format')!r} "
                             f"v{meta.get('version')!r}")
        cfg = SetNetConfig(**meta["config"])
        model = DeepSetRisk(cfg)
        state = {k[len("t__"):]: torch.as_tensor(z[k]) for k in z.files if k.startswith("t__")}
        expected = {k: tuple(v.shape) for k, v in model.state_dict().items()}
        got = {k: tuple(v.shape) for k, v in state.items()}
        if expected != got:
            raise ValueError("parameter shapes do not match the stored config")
        model.load_state_dict(state)
    return model, meta["extra"]
