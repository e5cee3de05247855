"""Vector-quantized autoencoder used as a learned behavior-descriptor extractor.

The encoder maps raw behavior records to a ``D``-dimensional latent (squashed
into (-1, 1) by a final tanh when bounding is on), the latent is snapped to
its nearest codebook entry, and the decoder reconstructs the record from the
snapped latent. The codebook doubles as the cell centers of the archive grid.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .autodiff import (
    MLP,
    Adam,
    ConfigurationError,
    DimensionError,
    Tensor,
    backward,
    flatten_parameters,
    gather_rows,
    load_flat_parameters,
    mse,
    scale,
    stop_gradient,
)

log = logging.getLogger(__name__)

CODEBOOK_INITS = ("kmeans", "random")
INPUT_NORMS = ("none", "feature", "global")


# ------------------------------------------------------------------ k-means


def _sq_dists_expanded(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    return (x * x).sum(1)[:, None] - 2.0 * x @ c.T + (c * c).sum(1)[None, :]


def lloyd_kmeans(
    samples: np.ndarray, k: int, rng: np.random.Generator, max_sweeps: int = 100
) -> np.ndarray:
    """k-means++ seeding followed by Lloyd sweeps until assignments stop changing.

    Empty clusters keep their previous centroid.
    """
    x = np.asarray(samples, dtype=np.float64)
    m = len(x)
    if m < k:
        raise ConfigurationError(f"k-means needs at least k={k} samples, got {m}")
    centers = np.empty((k, x.shape[1]))
    first = int(rng.integers(m))
    centers[0] = x[first]
    closest = ((x - centers[0]) ** 2).sum(1)
    for j in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # every sample coincides with a chosen center; fall back to unused rows
            pick = int(rng.integers(m))
        else:
            pick = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            pick = min(pick, m - 1)
        centers[j] = x[pick]
        closest = np.minimum(closest, ((x - centers[j]) ** 2).sum(1))

    assign = None
    chunk = max(1, 2_000_000 // max(k, 1))
    for _ in range(max_sweeps):
        new = np.concatenate(
            [np.argmin(_sq_dists_expanded(x[s : s + chunk], centers), axis=1) for s in range(0, m, chunk)]
        )
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        counts = np.bincount(assign, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, assign, x)
        filled = counts > 0
        centers[filled] = sums[filled] / counts[filled, None]
    return centers


def init_codebook_kmeans(k: int, d: int, samples: int | None = None, seed: int = 0) -> np.ndarray:
    """Codebook fitted by k-means to uniform samples of [-1, 1]^d.

    ``samples`` defaults to ``max(10 * k, 10000)``.
    """
    m = max(10 * k, 10_000) if samples is None else int(samples)
    if m < k:
        raise ConfigurationError(f"k-means codebook init needs samples >= K ({m} < {k})")
    rng = np.random.default_rng(seed)
    points = rng.uniform(-1.0, 1.0, size=(m, d))
    return np.clip(lloyd_kmeans(points, k, rng), -1.0, 1.0)


# ---------------------------------------------------------------- quantizer


def nearest_code(codebook: np.ndarray, z: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Index of the nearest codebook row for each row of ``z`` (lowest index on ties).

    Distances are accumulated from explicit differences so the result is the
    exact brute-force argmin, not the expanded ``|a|^2 - 2ab + |b|^2`` form.
    """
    codebook = np.asarray(codebook, dtype=np.float64)
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if codebook.shape[0] == 0:
        raise ValueError("cannot quantize against an empty codebook")
    if z.shape[1] != codebook.shape[1]:
        raise DimensionError(f"latent dim {z.shape[1]} != codebook dim {codebook.shape[1]}")
    out = np.empty(len(z), dtype=np.int64)
    d = codebook.shape[1]
    step = max(1, chunk * 64 // max(codebook.shape[0] * max(d // 8, 1), 1))
    for s in range(0, len(z), step):
        block = z[s : s + step]
        if d <= 8:
            # same left-to-right accumulation as a short-axis sum, without the 3-D temporary
            acc = np.zeros((len(block), len(codebook)))
            for k in range(d):
                diff = block[:, k, None] - codebook[None, :, k]
                acc += diff * diff
        else:
            diff = block[:, None, :] - codebook[None, :, :]
            acc = (diff * diff).sum(-1)
        out[s : s + step] = np.argmin(acc, axis=1)
    return out


def quantize(codebook: np.ndarray, z_e: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    idx = nearest_code(codebook, z_e)
    return np.asarray(codebook)[idx], idx


# -------------------------------------------------------------------- model


@dataclass
class VqLossReport:
    recon: float
    codebook_loss: float
    commit: float
    total: float
    unused_entries: int = 0


@dataclass
class Architecture:
    input_dim: int
    latent_dim: int
    codebook_size: int
    encoder_hidden: tuple[int, ...] = (64, 32)
    decoder_hidden: tuple[int, ...] = (32, 64)
    activation: str = "gelu"
    output_activation: str = "sigmoid"
    bounded: bool = True
    codebook_init: str = "kmeans"
    vector_quantized: bool = True
    beta: float = 0.25
    lr: float = 7e-4
    kmeans_samples: int | None = None
    input_norm: str = "none"
    input_shape: tuple[int, ...] | None = None
    input_blur: float = 0.0

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["encoder_hidden"] = list(self.encoder_hidden)
        d["decoder_hidden"] = list(self.decoder_hidden)
        d["input_shape"] = list(self.input_shape) if self.input_shape is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        d = dict(d)
        d["encoder_hidden"] = tuple(d["encoder_hidden"])
        d["decoder_hidden"] = tuple(d["decoder_hidden"])
        if d.get("input_shape") is not None:
            d["input_shape"] = tuple(d["input_shape"])
        return cls(**d)

    def validate(self) -> None:
        if self.codebook_init not in CODEBOOK_INITS:
            raise ConfigurationError(f"codebook_init must be one of {CODEBOOK_INITS}")
        if self.input_norm not in INPUT_NORMS:
            raise ConfigurationError(f"input_norm must be one of {INPUT_NORMS}")
        if self.input_blur < 0:
            raise ConfigurationError("input_blur must be non-negative")
        if self.input_blur > 0:
            if self.input_shape is None or int(np.prod(self.input_shape)) != self.input_dim:
                raise ConfigurationError("input_blur needs an input_shape whose size equals input_dim")


class VqVaeModel:
    """Encoder, decoder and codebook trained jointly.

    With ``vector_quantized=False`` the same networks form a plain autoencoder
    (decoder reads the encoder output directly, loss is reconstruction only);
    the unstructured-archive baselines use that mode.
    """

    def __init__(self, arch: Architecture, seed: int = 0):
        arch.validate()
        self.arch = arch
        rng = np.random.default_rng(seed)
        enc_out = "tanh" if arch.bounded else "identity"
        self.encoder = MLP(
            [arch.input_dim, *arch.encoder_hidden, arch.latent_dim], arch.activation, enc_out, rng
        )
        self.decoder = MLP(
            [arch.latent_dim, *arch.decoder_hidden, arch.input_dim],
            arch.activation,
            arch.output_activation,
            rng,
        )
        k, d = arch.codebook_size, arch.latent_dim
        if arch.codebook_init == "kmeans":
            cb = init_codebook_kmeans(k, d, arch.kmeans_samples, seed=int(rng.integers(2**31)))
        else:
            cb = rng.uniform(-1.0 / k, 1.0 / k, size=(k, d))
        self.codebook = Tensor(cb, requires_grad=True)
        self.input_shift = np.zeros(arch.input_dim)
        self.input_scale = np.ones(arch.input_dim)
        self.optimizer = Adam(self.parameters(), lr=arch.lr)

    # -- bookkeeping
    def parameters(self) -> list[Tensor]:
        return self.encoder.parameters() + self.decoder.parameters() + [self.codebook]

    def network_parameters(self) -> list[Tensor]:
        return self.encoder.parameters() + self.decoder.parameters()

    @property
    def codebook_array(self) -> np.ndarray:
        return self.codebook.data

    def flat_parameters(self) -> np.ndarray:
        return flatten_parameters(self.network_parameters())

    def load_flat_parameters(self, flat: np.ndarray, codebook: np.ndarray) -> None:
        load_flat_parameters(self.network_parameters(), flat)
        self.codebook.data = np.array(codebook, dtype=np.float64)

    # -- inference
    def encode(self, raw: np.ndarray) -> np.ndarray:
        raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
        if raw.shape[1] != self.arch.input_dim:
            raise DimensionError(
                f"raw record has {raw.shape[1]} values, encoder expects {self.arch.input_dim}"
            )
        return self.encoder.forward_array(self.view(raw))

    def _smoothed(self, raw: np.ndarray) -> np.ndarray:
        sigma = self.arch.input_blur
        if sigma <= 0:
            return raw
        shape = self.arch.input_shape
        img = raw.reshape((len(raw), *shape))
        # blur the two trailing (spatial) axes only
        sig = (0,) * (img.ndim - 2) + (sigma, sigma)
        return gaussian_filter(img, sigma=sig, mode="constant").reshape(len(raw), -1)

    def view(self, raw: np.ndarray) -> np.ndarray:
        """The record as the model sees it: optionally blurred, then shifted and
        scaled. The encoder reads this view and the decoder reconstructs it."""
        return (self._smoothed(raw) - self.input_shift) / self.input_scale

    def fit_input_standardization(self, data: np.ndarray) -> None:
        """Refit shift and scale on ``data`` (per feature, or one global pair)."""
        mode = self.arch.input_norm
        if mode == "none" or len(data) == 0:
            return
        x = self._smoothed(data)
        if mode == "feature":
            self.input_shift = x.mean(0)
            std = x.std(0)
            self.input_scale = np.where(std > 1e-8, std, 1.0)
        else:
            std = float(x.std())
            self.input_shift = np.full(x.shape[1], float(x.mean()))
            self.input_scale = np.full(x.shape[1], std if std > 1e-8 else 1.0)

    def quantize(self, z_e: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return quantize(self.codebook.data, z_e)

    def decode(self, z: np.ndarray) -> np.ndarray:
        return self.decoder.forward_array(np.atleast_2d(z))

    def reconstruct(self, raw: np.ndarray | None = None) -> np.ndarray:
        """Decoder output for ``raw`` (through its quantized latent), or for
        every codebook entry when ``raw`` is None."""
        if raw is None:
            return self.decode(self.codebook.data)
        z_e = self.encode(raw)
        if not self.arch.vector_quantized:
            return self.decode(z_e)
        z_q, _ = self.quantize(z_e)
        return self.decode(z_e + (z_q - z_e))

    # -- training
    def loss_graph(self, raw_batch: np.ndarray) -> tuple[VqLossReport, Tensor, dict]:
        """Build the loss graph for a batch; returns the report, the scalar loss
        and the named intermediate nodes (``z_e``, ``z_q``, ``x_hat``, ``recon``)."""
        raw_batch = np.atleast_2d(np.asarray(raw_batch, dtype=np.float64))
        if len(raw_batch) == 0:
            raise ValueError("empty batch")
        return self._loss_on_view(self.view(raw_batch))

    def _loss_on_view(self, view_batch: np.ndarray) -> tuple[VqLossReport, Tensor, dict]:
        x = Tensor(view_batch)
        z_e = self.encoder(x)
        if self.arch.vector_quantized:
            idx = nearest_code(self.codebook.data, z_e.data)
            c = gather_rows(self.codebook, idx)
            # straight-through: forward uses c, backward passes d/dz_q to z_e
            z_q = z_e + stop_gradient(c - z_e)
            x_hat = self.decoder(z_q)
            recon = mse(x_hat, x)
            cb_loss = mse(stop_gradient(z_e), c)
            commit = scale(mse(z_e, stop_gradient(c)), self.arch.beta)
            total = recon + cb_loss + commit
            unused = self.arch.codebook_size - len(np.unique(idx))
        else:
            z_q = z_e
            x_hat = self.decoder(z_e)
            recon = mse(x_hat, x)
            cb_loss = commit = None
            total = recon
            unused = 0
        r, cl, cm = float(recon.data), float(cb_loss.data) if cb_loss else 0.0, float(commit.data) if commit else 0.0
        report = VqLossReport(recon=r, codebook_loss=cl, commit=cm, total=float(total.data), unused_entries=unused)
        nodes = {"x": x, "z_e": z_e, "z_q": z_q, "x_hat": x_hat, "recon": recon, "total": total}
        return report, total, nodes

    def train_step(self, raw_batch: np.ndarray) -> VqLossReport:
        return self._step_on_view(self.view(np.atleast_2d(np.asarray(raw_batch, dtype=np.float64))))

    def _step_on_view(self, view_batch: np.ndarray) -> VqLossReport:
        self.optimizer.zero_grad()
        report, total, _ = self._loss_on_view(view_batch)
        backward(total, wrt=self.optimizer.params)
        self.optimizer.step()
        return report


def vq_loss(model: VqVaeModel, raw_batch: np.ndarray) -> tuple[VqLossReport, Tensor]:
    report, total, _ = model.loss_graph(raw_batch)
    return report, total


def train_epochs(
    model: VqVaeModel,
    dataset: np.ndarray,
    epochs: int,
    batch_size: int,
    rng: np.random.Generator,
) -> list[VqLossReport]:
    """Shuffled mini-batch training; one averaged report per epoch.

    Epoch reports weight each batch by its size. An empty dataset is a no-op.
    """
    data = np.asarray(dataset, dtype=np.float64)
    if len(data) == 0 or epochs <= 0:
        if len(data) == 0 and epochs > 0:
            log.warning("train_epochs called with an empty dataset; skipping")
        return []
    model.fit_input_standardization(data)
    views = model.view(data)
    reports = []
    n = len(data)
    for _ in range(epochs):
        order = rng.permutation(n)
        acc = np.zeros(4)
        for s in range(0, n, batch_size):
            batch = views[order[s : s + batch_size]]
            r = model._step_on_view(batch)
            w = len(batch) / n
            acc += w * np.array([r.recon, r.codebook_loss, r.commit, r.total])
        unused = 0
        if model.arch.vector_quantized:
            z = model.encoder.forward_array(views)
            unused = model.arch.codebook_size - len(np.unique(nearest_code(model.codebook.data, z)))
        reports.append(
            VqLossReport(
                recon=acc[0], codebook_loss=acc[1], commit=acc[2], total=acc[0] + acc[1] + acc[2],
                unused_entries=unused,
            )
        )
    return reports


def decoded_centers(model: VqVaeModel) -> np.ndarray:
    """Decoder images of all K codebook entries mapped back to record units
    (still blurred when the model blurs its view), shape (K, input_dim)."""
    return model.reconstruct(None) * model.input_scale + model.input_shift
