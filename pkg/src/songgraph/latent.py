"""Bar-image embeddings: a deterministic baseline and a trainable autoencoder.

The baseline embedder (average-pool + fixed random orthogonal projection)
lets structure analysis run with no training at all. The autoencoder is a
desk-scale dense net (flatten -> hidden -> latent and the mirror decoder)
trained by SGD with momentum on mean squared reconstruction error, with an
optional Gaussian-kernel MMD penalty pulling latents toward a standard
normal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import SGD, Tensor, affine, exp, leaky_relu, matmul, mean, square, tensor_sum, transpose
from .checkpoint import load_checkpoint, save_checkpoint
from .conlon import ConlonImage
from .errors import ConfigError, NumericError, TrainingDivergedError
from .score import GRID_PER_BAR, N_PITCHES

IMAGE_DIM = 2 * N_PITCHES * GRID_PER_BAR
POOL = 4
POOLED_DIM = 2 * (N_PITCHES // POOL) * (GRID_PER_BAR // POOL)
VELOCITY_SCALE = 127.0
DURATION_SCALE = float(GRID_PER_BAR)


# -- deterministic baseline --------------------------------------------------

_PROJECTIONS: dict[tuple[int, int], np.ndarray] = {}


def _projection(dim: int, seed: int) -> np.ndarray:
    cached = _PROJECTIONS.get((dim, seed))
    if cached is None:
        if dim > POOLED_DIM:
            raise ConfigError(f"baseline embedding dim {dim} exceeds {POOLED_DIM}")
        rng = np.random.default_rng(seed)
        q, r = np.linalg.qr(rng.standard_normal((POOLED_DIM, dim)))
        cached = q * np.sign(np.diag(r))  # canonical column signs
        _PROJECTIONS[(dim, seed)] = cached
    return cached


def _pool(channel: np.ndarray) -> np.ndarray:
    h, w = channel.shape
    return channel.reshape(h // POOL, POOL, w // POOL, POOL).mean(axis=(1, 3))


def embed_baseline(image: ConlonImage, dim: int = 32, seed: int = 0) -> np.ndarray:
    """Linear, training-free embedding: 4x4 average pool, then a fixed
    seeded orthogonal projection to `dim`."""
    pooled = np.concatenate([_pool(image.velocity).ravel(), _pool(image.duration).ravel()])
    return pooled @ _projection(dim, seed)


def decode_baseline(latent: np.ndarray, seed: int = 0) -> ConlonImage:
    """Adjoint of embed_baseline: project back and replicate pooled cells."""
    latent = np.asarray(latent, dtype=np.float64)
    pooled = _projection(latent.size, seed) @ latent
    half = POOLED_DIM // 2
    shape = (N_PITCHES // POOL, GRID_PER_BAR // POOL)
    vel = np.kron(pooled[:half].reshape(shape), np.ones((POOL, POOL)))
    dur = np.kron(pooled[half:].reshape(shape), np.ones((POOL, POOL)))
    vel = np.clip(vel, 0.0, VELOCITY_SCALE)
    dur = np.clip(dur, 0.0, None)
    alive = (vel > 0) & (dur > 0)
    return ConlonImage(vel * alive, dur * alive)


# -- autoencoder ---------------------------------------------------------------

@dataclass
class AutoencoderParams:
    enc_w1: Tensor
    enc_b1: Tensor
    enc_w2: Tensor
    enc_b2: Tensor
    dec_w1: Tensor
    dec_b1: Tensor
    dec_w2: Tensor
    dec_b2: Tensor
    latent_dim: int
    hidden_dim: int
    input_dim: int

    @classmethod
    def init(
        cls,
        latent_dim: int = 32,
        hidden_dim: int = 512,
        input_dim: int = IMAGE_DIM,
        seed: int = 0,
    ) -> "AutoencoderParams":
        rng = np.random.default_rng(seed)

        def glorot(n_in, n_out):
            limit = np.sqrt(6.0 / (n_in + n_out))
            return Tensor(rng.uniform(-limit, limit, (n_in, n_out)), requires_grad=True)

        def zeros(n):
            return Tensor(np.zeros(n), requires_grad=True)

        return cls(
            enc_w1=glorot(input_dim, hidden_dim),
            enc_b1=zeros(hidden_dim),
            enc_w2=glorot(hidden_dim, latent_dim),
            enc_b2=zeros(latent_dim),
            dec_w1=glorot(latent_dim, hidden_dim),
            dec_b1=zeros(hidden_dim),
            dec_w2=glorot(hidden_dim, input_dim),
            dec_b2=zeros(input_dim),
            latent_dim=latent_dim,
            hidden_dim=hidden_dim,
            input_dim=input_dim,
        )

    def tensors(self) -> dict[str, Tensor]:
        return {
            "enc_w1": self.enc_w1,
            "enc_b1": self.enc_b1,
            "enc_w2": self.enc_w2,
            "enc_b2": self.enc_b2,
            "dec_w1": self.dec_w1,
            "dec_b1": self.dec_b1,
            "dec_w2": self.dec_w2,
            "dec_b2": self.dec_b2,
        }


def image_to_vec(image: ConlonImage) -> np.ndarray:
    """Flatten to the model's input space: velocity/127 then duration/48."""
    return np.concatenate(
        [image.velocity.ravel() / VELOCITY_SCALE, image.duration.ravel() / DURATION_SCALE]
    )


def vec_to_image(vec: np.ndarray) -> ConlonImage:
    half = vec.size // 2
    vel = np.clip(vec[:half].reshape(N_PITCHES, GRID_PER_BAR) * VELOCITY_SCALE, 0.0, VELOCITY_SCALE)
    dur = np.clip(vec[half:].reshape(N_PITCHES, GRID_PER_BAR) * DURATION_SCALE, 0.0, None)
    alive = (vel > 0) & (dur > 0)
    return ConlonImage(vel * alive, dur * alive)


def encode_batch(params: AutoencoderParams, x: Tensor) -> Tensor:
    hidden = leaky_relu(affine(x, params.enc_w1, params.enc_b1))
    return affine(hidden, params.enc_w2, params.enc_b2)


def decode_batch(params: AutoencoderParams, z: Tensor) -> Tensor:
    hidden = leaky_relu(affine(z, params.dec_w1, params.dec_b1))
    return affine(hidden, params.dec_w2, params.dec_b2)


def _check_finite(array: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(array)):
        raise NumericError("non-finite activation", where=where)
    return array


def encode(params: AutoencoderParams, image: ConlonImage) -> np.ndarray:
    x = image_to_vec(image)
    hidden = x @ params.enc_w1.data + params.enc_b1.data
    _check_finite(hidden, "encoder hidden layer")
    hidden = np.where(hidden > 0, hidden, 0.01 * hidden)
    z = hidden @ params.enc_w2.data + params.enc_b2.data
    return _check_finite(z, "encoder output layer")


def decode(params: AutoencoderParams, latent: np.ndarray) -> ConlonImage:
    hidden = np.asarray(latent, dtype=np.float64) @ params.dec_w1.data + params.dec_b1.data
    _check_finite(hidden, "decoder hidden layer")
    hidden = np.where(hidden > 0, hidden, 0.01 * hidden)
    y = hidden @ params.dec_w2.data + params.dec_b2.data
    return vec_to_image(_check_finite(y, "decoder output layer"))


def mmd_penalty(latents: Tensor, normal_samples: Tensor) -> Tensor:
    """Biased Gaussian-kernel MMD^2 between a latent batch and normal draws."""
    two_sigma_sq = float(latents.data.shape[1])

    def kernel_mean(a: Tensor, b: Tensor) -> Tensor:
        sq_a = tensor_sum(square(a), axis=1, keepdims=True)
        sq_b = tensor_sum(square(b), axis=1, keepdims=True)
        dist = sq_a + transpose(sq_b) - 2.0 * matmul(a, transpose(b))
        return mean(exp(dist * (-1.0 / two_sigma_sq)))

    return (
        kernel_mean(latents, latents)
        + kernel_mean(normal_samples, normal_samples)
        - 2.0 * kernel_mean(latents, normal_samples)
    )


def reconstruction_loss(
    params: AutoencoderParams,
    x: Tensor,
    mmd_weight: float = 0.0,
    normal_samples: Tensor | None = None,
) -> Tensor:
    z = encode_batch(params, x)
    y = decode_batch(params, z)
    loss = mean(square(y - x))
    if mmd_weight > 0:
        if normal_samples is None:
            raise ConfigError("mmd_weight > 0 needs normal samples")
        loss = loss + mmd_weight * mmd_penalty(z, normal_samples)
    return loss


@dataclass
class AeTrainConfig:
    latent_dim: int = 32
    hidden_dim: int = 512
    epochs: int = 50
    lr: float = 0.05
    batch_size: int = 8
    mmd_weight: float = 0.0
    seed: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def train_autoencoder(
    images, config: AeTrainConfig
) -> tuple[AutoencoderParams, list[float]]:
    """Fit the autoencoder; returns final params and the per-epoch loss trace."""
    data = np.stack([image_to_vec(im) for im in images])
    if data.shape[0] == 0:
        raise ConfigError("empty training set")
    params = AutoencoderParams.init(
        config.latent_dim, config.hidden_dim, data.shape[1], seed=config.seed
    )
    rng = np.random.default_rng(config.seed)
    opt = SGD(params.tensors().values(), lr=config.lr)
    trace: list[float] = []
    n = data.shape[0]
    # divergence is detected by the finite check, not by numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(config.epochs):
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, config.batch_size):
                idx = order[start : start + config.batch_size]
                x = Tensor(data[idx])
                normal = (
                    Tensor(rng.standard_normal((len(idx), config.latent_dim)))
                    if config.mmd_weight > 0
                    else None
                )
                loss = reconstruction_loss(params, x, config.mmd_weight, normal)
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += loss.item() * len(idx)
            epoch_loss = total / n
            if not np.isfinite(epoch_loss):
                raise TrainingDivergedError(epoch)
            trace.append(epoch_loss)
    return params, trace


def save_autoencoder(path, params: AutoencoderParams, config: AeTrainConfig | None = None) -> None:
    meta = {
        "latent_dim": params.latent_dim,
        "hidden_dim": params.hidden_dim,
        "input_dim": params.input_dim,
        "config": config.to_dict() if config else None,
    }
    save_checkpoint(path, "autoencoder", {k: v.data for k, v in params.tensors().items()}, meta)


_AE_TENSORS = ("enc_w1", "enc_b1", "enc_w2", "enc_b2", "dec_w1", "dec_b1", "dec_w2", "dec_b2")


def load_autoencoder(path) -> AutoencoderParams:
    kind, tensors, meta = load_checkpoint(path)
    if kind != "autoencoder":
        raise ConfigError(f"expected an autoencoder checkpoint, got {kind!r}")
    missing = [name for name in _AE_TENSORS if name not in tensors]
    if missing:
        raise ConfigError(f"checkpoint {path} is missing tensors {missing}")
    fields = {name: Tensor(tensors[name], requires_grad=True) for name in _AE_TENSORS}
    return AutoencoderParams(
        latent_dim=int(meta["latent_dim"]),
        hidden_dim=int(meta["hidden_dim"]),
        input_dim=int(meta["input_dim"]),
        **fields,
    )
