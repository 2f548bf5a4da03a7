"""Frozen frame encoders: a seeded random projection and a trained linear
autoencoder.

Both map a flattened 84x84 frame to a 512-dim embedding through a single
affine layer, and both are frozen at deployment; the only difference is where
the weights come from. The autoencoder trains on mean-centered frames and the
dataset mean is folded back into the affine biases at export, so the deployed
model is still a plain `W @ frame + b` map.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    CheckpointError,
    DivergenceError,
    InsufficientDataError,
    SchemaVersionError,
    ShapeError,
    ValidationError,
)
from .suite import INPUT_DIM, PretrainDataset

LATENT_DIM = 512

_MAGIC = b"DLEN"
_VERSION = 1
_KIND_CODE = {"random": 0, "trained": 1}
_KIND_NAME = {v: k for k, v in _KIND_CODE.items()}


@dataclass(eq=False)
class EncoderModel:
    kind: str
    weights: np.ndarray                  # (LATENT_DIM, INPUT_DIM) float32
    bias: np.ndarray | None              # (LATENT_DIM,) float32, trained only
    decoder_weights: np.ndarray | None   # (INPUT_DIM, LATENT_DIM) float32
    decoder_bias: np.ndarray | None
    seed: int
    latent_dim: int = LATENT_DIM
    trained_epochs: int = 0
    frozen: bool = True

    @property
    def is_trained(self) -> bool:
        return self.kind == "trained" and self.trained_epochs > 0


def random_encoder(seed: int) -> EncoderModel:
    """Frozen random projection; entries scaled by 1/sqrt(input_dim), no bias."""
    rng = np.random.default_rng(seed)
    weights = rng.standard_normal((LATENT_DIM, INPUT_DIM)) / np.sqrt(INPUT_DIM)
    return EncoderModel(kind="random", weights=weights.astype(np.float32),
                        bias=None, decoder_weights=None, decoder_bias=None,
                        seed=seed)


def _as_flat_frame(frame: np.ndarray) -> np.ndarray:
    arr = np.asarray(frame, dtype=np.float32)
    if arr.shape == (84, 84):
        arr = arr.ravel()
    if arr.shape != (INPUT_DIM,):
        raise ShapeError(f"frame shape {np.asarray(frame).shape} not 84x84")
    if not np.all(np.isfinite(arr)):
        raise ShapeError("frame contains non-finite values")
    return arr


def encode(model: EncoderModel, frame: np.ndarray) -> np.ndarray:
    flat = _as_flat_frame(frame)
    emb = model.weights @ flat
    if model.bias is not None:
        emb = emb + model.bias
    return emb.astype(np.float32)


def encode_batch(model: EncoderModel, frames: np.ndarray) -> np.ndarray:
    arr = np.asarray(frames, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr.reshape(len(arr), -1)
    if arr.ndim != 2 or arr.shape[1] != INPUT_DIM:
        raise ShapeError(f"frame batch shape {np.asarray(frames).shape} invalid")
    emb = arr @ model.weights.T
    if model.bias is not None:
        emb = emb + model.bias
    return emb.astype(np.float32)


def train_autoencoder(dataset: PretrainDataset, epochs: int = 20,
                      lr: float = 1e-3, batch_size: int = 64,
                      seed: int = 0) -> EncoderModel:
    """Linear autoencoder trained by SGD on the packed pretrain frames.

    epochs=0 returns the seeded initialization unchanged (trained_epochs is 0
    and is_trained stays false), which is occasionally useful as a control.
    """
    import torch

    frames = dataset.all_frames()
    if len(frames) < batch_size:
        raise InsufficientDataError(
            f"dataset holds {len(frames)} frames, batch_size={batch_size}")
    if epochs < 0:
        raise ValidationError("epochs must be >= 0")
    mean = frames.mean(axis=0)
    rng = np.random.default_rng(seed)
    w_enc0 = rng.standard_normal((LATENT_DIM, INPUT_DIM)) * (0.3 / np.sqrt(INPUT_DIM))
    w_dec0 = rng.standard_normal((INPUT_DIM, LATENT_DIM)) * (0.3 / np.sqrt(LATENT_DIM))

    torch.manual_seed(seed)
    torch.set_num_threads(1)
    w_enc = torch.tensor(w_enc0, dtype=torch.float32, requires_grad=True)
    w_dec = torch.tensor(w_dec0, dtype=torch.float32, requires_grad=True)
    b_enc = torch.zeros(LATENT_DIM, dtype=torch.float32, requires_grad=True)
    b_dec = torch.zeros(INPUT_DIM, dtype=torch.float32, requires_grad=True)
    opt = torch.optim.SGD([w_enc, w_dec, b_enc, b_dec], lr=lr)

    centered = frames - mean
    for _ in range(epochs):
        order = rng.permutation(len(centered))
        for start in range(0, len(order) - batch_size + 1, batch_size):
            idx = order[start:start + batch_size]
            x = torch.from_numpy(centered[idx])
            h = x @ w_enc.T + b_enc
            recon = h @ w_dec.T + b_dec
            loss = ((recon - x) ** 2).sum(dim=1).mean()
            if not torch.isfinite(loss):
                raise DivergenceError("autoencoder loss became non-finite")
            opt.zero_grad()
            loss.backward()
            opt.step()

    w_enc_np = w_enc.detach().numpy().astype(np.float32)
    b_enc_np = b_enc.detach().numpy().astype(np.float32)
    w_dec_np = w_dec.detach().numpy().astype(np.float32)
    b_dec_np = b_dec.detach().numpy().astype(np.float32)
    # fold the centering back in: encode(x) = We (x - mean) + be
    bias = (b_enc_np - w_enc_np @ mean).astype(np.float32)
    dec_bias = (b_dec_np + mean).astype(np.float32)
    return EncoderModel(kind="trained", weights=w_enc_np, bias=bias,
                        decoder_weights=w_dec_np, decoder_bias=dec_bias,
                        seed=seed, trained_epochs=epochs)


def reconstruct(model: EncoderModel, frames: np.ndarray) -> np.ndarray:
    if model.decoder_weights is None:
        raise ValidationError("encoder has no decoder to reconstruct with")
    emb = encode_batch(model, frames)
    return emb @ model.decoder_weights.T + model.decoder_bias


def reconstruction_mse(model: EncoderModel, frames: np.ndarray) -> float:
    arr = np.asarray(frames, dtype=np.float32).reshape(len(frames), -1)
    recon = reconstruct(model, arr)
    return float(np.mean((recon - arr) ** 2))


def random_projection_baseline_mse(encoder: EncoderModel,
                                   train_frames: np.ndarray,
                                   eval_frames: np.ndarray) -> float:
    """Held-out MSE of the given encoder with its least-squares-optimal
    affine decoder, the floor any trained encoder has to beat."""
    emb_tr = encode_batch(encoder, train_frames).astype(np.float64)
    emb_ev = encode_batch(encoder, eval_frames).astype(np.float64)
    ones_tr = np.concatenate([emb_tr, np.ones((len(emb_tr), 1))], axis=1)
    ones_ev = np.concatenate([emb_ev, np.ones((len(emb_ev), 1))], axis=1)
    target = np.asarray(train_frames, dtype=np.float64).reshape(len(train_frames), -1)
    coef, *_ = np.linalg.lstsq(ones_tr, target, rcond=None)
    recon = ones_ev @ coef
    eval_flat = np.asarray(eval_frames, dtype=np.float64).reshape(len(eval_frames), -1)
    return float(np.mean((recon - eval_flat) ** 2))


# ---------------------------------------------------------------------------
# checkpoint io


def save_encoder(model: EncoderModel, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    has_bias = model.bias is not None
    has_decoder = model.decoder_weights is not None
    header = _MAGIC + struct.pack(
        "<IBIIqIBB", _VERSION, _KIND_CODE[model.kind], model.latent_dim,
        INPUT_DIM, model.seed, model.trained_epochs, int(has_bias),
        int(has_decoder))
    blocks = [np.ascontiguousarray(model.weights, dtype="<f4").tobytes()]
    if has_bias:
        blocks.append(np.ascontiguousarray(model.bias, dtype="<f4").tobytes())
    if has_decoder:
        blocks.append(np.ascontiguousarray(model.decoder_weights, dtype="<f4").tobytes())
        blocks.append(np.ascontiguousarray(model.decoder_bias, dtype="<f4").tobytes())
    path.write_bytes(header + b"".join(blocks))
    return path


def load_encoder(path) -> EncoderModel:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"encoder checkpoint {path} does not exist")
    blob = path.read_bytes()
    if blob[:4] != _MAGIC:
        raise CheckpointError(f"{path} is not an encoder checkpoint")
    head_size = 4 + struct.calcsize("<IBIIqIBB")
    version, kind_code, latent, input_dim, seed, epochs, has_bias, has_decoder = \
        struct.unpack("<IBIIqIBB", blob[4:head_size])
    if version != _VERSION:
        raise SchemaVersionError(f"encoder checkpoint version {version} unsupported")
    if kind_code not in _KIND_NAME:
        raise CheckpointError(f"unknown encoder kind code {kind_code}")
    at = head_size

    def take(count: int) -> np.ndarray:
        nonlocal at
        raw = np.frombuffer(blob, dtype="<f4", count=count, offset=at)
        at += count * 4
        return raw.copy()

    expected = latent * input_dim + has_bias * latent \
        + has_decoder * (input_dim * latent + input_dim)
    if len(blob) != head_size + expected * 4:
        raise CheckpointError(f"{path} truncated")
    weights = take(latent * input_dim).reshape(latent, input_dim)
    bias = take(latent) if has_bias else None
    dec_w = take(input_dim * latent).reshape(input_dim, latent) if has_decoder else None
    dec_b = take(input_dim) if has_decoder else None
    return EncoderModel(kind=_KIND_NAME[kind_code], weights=weights, bias=bias,
                        decoder_weights=dec_w, decoder_bias=dec_b, seed=seed,
                        latent_dim=latent, trained_epochs=epochs)
