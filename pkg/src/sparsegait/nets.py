"""Small shared pieces: MLP builder and running input normalization."""
from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn


def mlp(in_dim: int, hidden: tuple[int, ...], out_dim: int,
        activation=nn.ELU) -> nn.Sequential:
    layers: list[nn.Module] = []
    prev = in_dim
    for h in hidden:
        layers += [nn.Linear(prev, h), activation()]
        prev = h
    layers.append(nn.Linear(prev, out_dim))
    return nn.Sequential(*layers)


class RunningNorm:
    """Running mean/variance (Welford) for input normalization.

    Kept in float64 numpy so statistics are deterministic and exactly
    serializable; ``normalize`` returns float32 for network input.
    """

    def __init__(self, dim: int, clip: float = 10.0):
        self.dim = dim
        self.clip = clip
        self.count = 0.0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    @property
    def initialized(self) -> bool:
        return self.count > 0

    def update(self, batch: np.ndarray) -> None:
        batch = np.asarray(batch, dtype=np.float64).reshape(-1, self.dim)
        n = batch.shape[0]
        if n == 0:
            return
        b_mean = batch.mean(axis=0)
        b_m2 = ((batch - b_mean) ** 2).sum(axis=0)
        delta = b_mean - self.mean
        total = self.count + n
        self.mean = self.mean + delta * n / total
        self.m2 = self.m2 + b_m2 + delta ** 2 * self.count * n / total
        self.count = total

    @property
    def std(self) -> np.ndarray:
        if self.count < 2:
            return np.ones(self.dim)
        return np.sqrt(np.maximum(self.m2 / self.count, 1e-8))

    def normalize(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = (x - self.mean) / self.std
        return np.clip(out, -self.clip, self.clip).astype(np.float32)

    def state(self) -> dict:
        return {"count": float(self.count), "mean": self.mean.copy(),
                "m2": self.m2.copy()}

    def load(self, state: dict) -> None:
        self.count = float(state["count"])
        self.mean = np.asarray(state["mean"], dtype=np.float64).copy()
        self.m2 = np.asarray(state["m2"], dtype=np.float64).copy()
