"""Per-modality conditional VAE branches over a shared latent space.

Every branch posterior is regularized against the same standard-normal
prior, which is what ties the modalities together: at inference any single
branch can decode prior draws on its own. The condition vector c from the
social-behavior encoder is concatenated onto the input of every decoder and
posterior layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ParamStore, ShapeError, TapeParams, Tensor, apply_primitive, concat
from .encoder import MODALITY_SCALES, ModelConfig

__all__ = [
    "GaussianLatent",
    "PredictionSet",
    "init_branch_params",
    "encode_posterior",
    "kl_to_standard_normal",
    "reparameterize",
    "decode",
    "elbo_loss",
    "joint_loss",
    "branch_terms",
    "sample_predictions",
    "tile_rows",
]


@dataclass
class GaussianLatent:
    """Diagonal Gaussian q(z | y, c); fields are tensors during training or
    plain arrays for analysis. ``log_var`` (the raw pre-activation, with
    sigma = exp(log_var / 2)) is kept so the KL needs no extra log."""

    mu: object
    sigma: object
    log_var: object = None

    def __post_init__(self):
        if isinstance(self.sigma, np.ndarray) and not np.all(self.sigma > 0):
            raise ShapeError("sigma must be strictly positive")


@dataclass
class PredictionSet:
    """N decoded futures for one target in one modality."""

    modality: str
    trajectories: np.ndarray  # (N, delta, 2) in view units
    latents: np.ndarray       # (N, d_z)

    @property
    def n(self):
        return self.trajectories.shape[0]


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


def _init_linear(store, rng, name, n_in, n_out):
    bound = 1.0 / np.sqrt(n_in)
    store.add(f"{name}.w", rng.uniform(-bound, bound, size=(n_in, n_out)))
    store.add(f"{name}.b", np.zeros(n_out))


def init_branch_params(store: ParamStore, modality, cfg: ModelConfig, rng):
    """Posterior encoder and decoder weights for one modality branch."""
    base = f"branch.{modality}"
    h, dc, dz, dy = cfg.branch_hidden, cfg.d_c, cfg.d_z, 2 * cfg.delta
    _init_linear(store, rng, f"{base}.post.l1", dy + dc, h)
    _init_linear(store, rng, f"{base}.post.l2", h + dc, h)
    _init_linear(store, rng, f"{base}.post.out", h + dc, 2 * dz)
    _init_linear(store, rng, f"{base}.dec.l1", dz + dc, h)
    # start the decoder's latent pathway weak: the condition c explains most
    # of the trajectory on its own, which reproduces the posterior-collapse
    # regime that the diversity regularizer is designed to counteract
    w1 = store.raw()[f"{base}.dec.l1.w"].copy()
    w1[:dz] *= 0.01
    store.update({f"{base}.dec.l1.w": w1})
    _init_linear(store, rng, f"{base}.dec.l2", h + dc, h)
    _init_linear(store, rng, f"{base}.dec.out", h + dc, dy)


def _linear(p: TapeParams, prefix, x):
    return x @ p(f"{prefix}.w") + p(f"{prefix}.b")


def tile_rows(t: Tensor, n: int) -> Tensor:
    """Repeat each row of a (B, d) tensor n times -> (B*n, d)."""
    return t.take(np.repeat(np.arange(t.shape[0]), n))


# ---------------------------------------------------------------------------
# posterior / prior machinery
# ---------------------------------------------------------------------------


def encode_posterior(tape, p, modality, ys, c: Tensor, cfg: ModelConfig) -> GaussianLatent:
    """q(z | y, c) for a batch of flattened futures ``ys`` (B, 2*delta).

    The first d_z output channels are the mean; the rest parameterize the
    log-variance, sigma = exp(pre / 2), so sigma is positive by
    construction. Leaky-ReLU hidden layers; c re-enters every layer.
    """
    base = f"branch.{modality}.post"
    scale = MODALITY_SCALES[modality]["coord"]
    y_t = tape.constant(np.asarray(ys, dtype=np.float64) * scale)
    leaky = lambda t: apply_primitive(tape, "leaky_relu", [t], slope=cfg.leaky_slope)
    h = leaky(_linear(p, f"{base}.l1", concat([y_t, c], axis=1)))
    h = leaky(_linear(p, f"{base}.l2", concat([h, c], axis=1)))
    out = _linear(p, f"{base}.out", concat([h, c], axis=1))
    mu = out[:, : cfg.d_z]
    log_var = out[:, cfg.d_z:]
    sigma = apply_primitive(tape, "exp", [log_var * 0.5])
    return GaussianLatent(mu=mu, sigma=sigma, log_var=log_var)


def kl_to_standard_normal(q: GaussianLatent):
    """KL(q || N(0, I)) summed over latent channels.

    Closed form 0.5 * sum(mu^2 + sigma^2 - 1 - log sigma^2); zero exactly
    at mu=0, sigma=1. Tensor inputs return a per-row (B,) tensor, arrays a
    scalar / per-row array.
    """
    if isinstance(q.mu, np.ndarray):
        log_var = np.log(q.sigma**2) if q.log_var is None else q.log_var
        terms = q.mu**2 + q.sigma**2 - 1.0 - log_var
        return 0.5 * terms.sum(axis=-1)
    tape = q.mu.tape
    if q.log_var is not None:
        log_var = q.log_var
        var = apply_primitive(tape, "exp", [log_var])
    else:
        var = apply_primitive(tape, "square", [q.sigma])
        log_var = apply_primitive(tape, "log", [var])
    sq_mu = apply_primitive(tape, "square", [q.mu])
    return (sq_mu + var - log_var - 1.0).sum(axis=1) * 0.5


def reparameterize(q: GaussianLatent, noise):
    """z = mu + sigma * noise; differentiable through mu and sigma."""
    noise = np.asarray(noise, dtype=np.float64)
    if isinstance(q.mu, np.ndarray):
        return q.mu + q.sigma * noise
    if noise.shape != tuple(q.mu.shape):
        raise ShapeError(
            f"noise shape {noise.shape} must match latent shape {tuple(q.mu.shape)}"
        )
    return q.mu + q.sigma * q.mu.tape.constant(noise)


# ---------------------------------------------------------------------------
# decoding
# ---------------------------------------------------------------------------


def decode(tape, p, modality, z: Tensor, c: Tensor, cfg: ModelConfig) -> Tensor:
    """Decode latents (N, d_z) with conditions (N, d_c) to futures (N, 2*delta).

    ReLU hidden layers, c concatenated onto every layer input; the linear
    output is multiplied by the modality's fixed output scale (so all-zero
    weights still produce the zero trajectory).
    """
    if z.shape[0] != c.shape[0]:
        raise ShapeError(f"z rows {z.shape[0]} != condition rows {c.shape[0]}")
    base = f"branch.{modality}.dec"
    relu = lambda t: apply_primitive(tape, "relu", [t])
    h = relu(_linear(p, f"{base}.l1", concat([z, c], axis=1)))
    h = relu(_linear(p, f"{base}.l2", concat([h, c], axis=1)))
    return _linear(p, f"{base}.out", concat([h, c], axis=1)) * MODALITY_SCALES[modality]["output"]


def _row_min(t: Tensor) -> Tensor:
    """Per-row minimum of a 2-D tensor (ties route to the first index)."""
    return -((-t).max(axis=1))


def branch_terms(tape, p, modality, c: Tensor, ys, noise, cfg: ModelConfig):
    """Training-time terms of one modality branch for a batch.

    ``ys`` is (B, 2*delta) raw futures, ``noise`` (B, N, d_z) posterior
    noise. Reconstruction is the best (minimum) mean squared error over the
    N posterior draws, in normalized units; the KL is charged once per
    scenario. Returns per-scenario (B,) tensors plus the (B*N, 2*delta)
    decoded futures for the diversity kernel.
    """
    ys = np.asarray(ys, dtype=np.float64)
    b, n = noise.shape[0], noise.shape[1]
    q = encode_posterior(tape, p, modality, ys, c, cfg)
    kl = kl_to_standard_normal(q)
    z = tile_rows(q.mu, n) + tile_rows(q.sigma, n) * tape.constant(
        noise.reshape(b * n, cfg.d_z)
    )
    yhat = decode(tape, p, modality, z, tile_rows(c, n), cfg)
    scale = MODALITY_SCALES[modality]["coord"]
    target = np.repeat(ys, n, axis=0) * scale
    err = apply_primitive(tape, "square", [yhat * scale - tape.constant(target)])
    per_draw = err.mean(axis=1).reshape(b, n)
    recon = _row_min(per_draw) * cfg.recon_weight
    return {"kl": kl, "recon": recon, "yhat": yhat, "posterior": q}


def elbo_loss(tape, p, modality, y, c: Tensor, noise, cfg: ModelConfig):
    """Single-scenario negative ELBO for one branch.

    ``noise`` is (N, d_z); with N > 1 the reconstruction keeps the best
    draw. Returns a dict with the scalar ``total`` and its ``kl`` /
    ``recon`` sub-terms (total = kl + recon exactly).
    """
    noise = np.asarray(noise, dtype=np.float64)
    terms = branch_terms(
        tape, p, modality, c, np.asarray(y, dtype=np.float64)[None, :], noise[None], cfg
    )
    kl = terms["kl"].sum()
    recon = terms["recon"].sum()
    return {"total": kl + recon, "kl": kl, "recon": recon, "yhat": terms["yhat"]}


def joint_loss(tape, p, inputs_by_modality, conditions, noises, cfg: ModelConfig):
    """Joint objective: the sum of every branch's negative ELBO (all
    posteriors pull toward the one shared prior).

    ``conditions`` maps modality -> (1, d_c) condition tensor, ``noises``
    modality -> (N, d_z). Returns total plus per-modality sub-terms.
    """
    out = {"per_modality": {}}
    total = None
    for m, inp in inputs_by_modality.items():
        terms = elbo_loss(tape, p, m, inp.y, conditions[m], noises[m], cfg)
        out["per_modality"][m] = terms
        total = terms["total"] if total is None else total + terms["total"]
    if total is None:
        raise ShapeError("joint loss needs at least one modality")
    out["total"] = total
    return out


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------


def sample_predictions(store: ParamStore, modality, c_value, n, rng, cfg: ModelConfig) -> PredictionSet:
    """Decode ``n`` prior draws z ~ N(0, I) for a fixed condition vector.

    Drawing n + m samples reproduces the first n bitwise (the latent matrix
    is filled row-major from one generator call).
    """
    from .autodiff import Tape

    if n < 1:
        raise ShapeError("need at least one sample")
    z = rng.standard_normal((n, cfg.d_z))
    c_value = np.asarray(c_value, dtype=np.float64).reshape(1, -1)
    tape = Tape()
    p = TapeParams(tape, store)
    c = tape.constant(np.repeat(c_value, n, axis=0))
    flat = decode(tape, p, modality, tape.constant(z), c, cfg)
    return PredictionSet(
        modality=modality,
        trajectories=flat.value.reshape(n, cfg.delta, 2),
        latents=z,
    )
