"""Fully connected burnt-probability classifier over pixel feature vectors.

Rectifier hidden layers, logistic output, mean binary cross-entropy loss,
mini-batch Adam. Widths default to [d, 128, 64, 1]. Training is single
threaded and deterministic for a fixed seed; a non-finite loss aborts with
the epoch named.

Inputs are standardized per feature (training-set mean and deviation,
stored with the model): raw spectral features span several orders of
magnitude, which otherwise saturates the logistic head at initialization.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .errors import ConfigError, DataError, DivergenceError, FitError
from .modelio import block_text, load_blocks, save_blocks, text_block
from .seeding import rng_for

HIDDEN_WIDTHS = (128, 64)
LEARNING_RATE = 0.001
BATCH_SIZE = 32


@dataclass
class MlpModel:
    widths: tuple[int, ...]
    layers: nn.ModuleList
    offset: np.ndarray | None = None  # per-feature mean; None = raw inputs
    scale: np.ndarray | None = None  # per-feature deviation; 1 where constant
    loss_trace: list[float] = field(default_factory=list)

    def forward(self, x: Tensor) -> Tensor:
        h = x
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            h = layer.forward(h)
            h = ad.sigmoid(h) if i == last else ad.relu(h)
        return h

    def normalize(self, x: np.ndarray) -> np.ndarray:
        if self.offset is None:
            return x
        return (x - self.offset) / self.scale


def _build_layers(widths: tuple[int, ...], seed: int, dtype=np.float32) -> nn.ModuleList:
    rng = rng_for(seed, "mlp/init")
    return nn.ModuleList(
        [nn.Linear(widths[i], widths[i + 1], rng, dtype=dtype) for i in range(len(widths) - 1)]
    )


def build_mlp(n_features: int, widths=None, seed: int = 0, dtype=np.float32) -> MlpModel:
    if widths is None:
        widths = (n_features, *HIDDEN_WIDTHS, 1)
    widths = tuple(int(w) for w in widths)
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise ConfigError(f"layer widths must be >=2 positive integers, got {widths}")
    if widths[0] != n_features:
        raise ConfigError(f"first width {widths[0]} != feature dimensionality {n_features}")
    if widths[-1] != 1:
        raise ConfigError(f"last width must be 1 (burnt probability), got {widths[-1]}")
    return MlpModel(widths=widths, layers=_build_layers(widths, seed, dtype))


def mlp_fit(
    x: np.ndarray,
    y: np.ndarray,
    seed: int,
    widths=None,
    epochs: int = 50,
    batch_size: int = BATCH_SIZE,
    learning_rate: float = LEARNING_RATE,
) -> MlpModel:
    x = np.asarray(x, dtype=np.float32)
    y = np.asarray(y)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise DataError(f"features {x.shape} and labels {y.shape} do not align")
    if x.shape[0] == 0:
        raise DataError("empty training set")
    if not np.isfinite(x).all():
        raise DataError("non-finite feature values")
    if epochs < 0 or batch_size < 1:
        raise ConfigError(f"epochs={epochs}, batch_size={batch_size} out of range")
    if np.unique(y).size < 2:
        raise FitError("single-class training set: model would be degenerate")

    model = build_mlp(x.shape[1], widths=widths, seed=seed)
    model.offset = x.mean(axis=0)
    spread = x.std(axis=0)
    model.scale = np.where(spread < 1e-6, np.float32(1.0), spread)
    x = model.normalize(x)
    targets = y.astype(np.float32).reshape(-1, 1)
    optimizer = nn.Adam(model.layers.parameters(), lr=learning_rate)
    shuffle = rng_for(seed, "mlp/shuffle")
    n = x.shape[0]
    for epoch in range(epochs):
        order = shuffle.permutation(n)
        batch_losses = []
        for start in range(0, n, batch_size):
            rows = order[start : start + batch_size]
            out = model.forward(Tensor(x[rows]))
            loss = ad.loss_bce(out, targets[rows])
            if not np.isfinite(loss.data):
                raise DivergenceError(
                    f"non-finite training loss in epoch {epoch}", epoch=epoch
                )
            model.layers.zero_grad()
            loss.backward()
            optimizer.step()
            batch_losses.append(float(loss.data))
        model.loss_trace.append(float(np.mean(batch_losses)))
    return model


def mlp_predict(model: MlpModel, x: np.ndarray) -> np.ndarray | float:
    arr = np.asarray(x, dtype=np.float32)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != model.widths[0]:
        raise DataError(
            f"feature vector length {arr.shape[-1]} != model dimensionality {model.widths[0]}"
        )
    with ad.no_grad():
        out = model.forward(Tensor(model.normalize(arr)))
    proba = out.data[:, 0].astype(np.float64)
    return float(proba[0]) if single else proba


def save_mlp(path: str | Path, model: MlpModel):
    blocks: dict[str, np.ndarray] = {
        "__meta__": text_block(
            "kind=mlp\nwidths=" + ",".join(str(w) for w in model.widths) + "\n"
        ),
    }
    if model.offset is not None:
        blocks["norm/offset"] = model.offset
        blocks["norm/scale"] = model.scale
    for name, p in model.layers.named_parameters():
        blocks[name] = p.data
    save_blocks(path, blocks)


def load_mlp(path: str | Path) -> MlpModel:
    blocks = load_blocks(path)
    meta = dict(
        line.split("=", 1) for line in block_text(blocks["__meta__"]).splitlines() if line
    )
    if meta.get("kind") != "mlp":
        raise DataError(f"container holds {meta.get('kind')!r}, not an mlp")
    widths = tuple(int(w) for w in meta["widths"].split(","))
    model = build_mlp(widths[0], widths=widths, seed=0)
    if "norm/offset" in blocks:
        model.offset = blocks["norm/offset"]
        model.scale = blocks["norm/scale"]
    state = {name: blocks[name] for name, _ in model.layers.named_parameters()}
    model.layers.load_state_dict(state)
    return model
