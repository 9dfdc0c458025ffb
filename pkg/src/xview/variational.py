"""Diagonal-Gaussian posteriors and the variational multi-view objectives.

All objectives are returned as losses (negated evidence lower bounds) so that
every training configuration minimises.  Losses are per sample: an input of
shape ``(B, d)`` yields a ``(B,)`` tensor and a single ``(d,)`` vector yields
a scalar; batch averaging is left to the caller.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as tn
from .errors import ContractError, ShapeError
from .layers import Linear, Module
from .tensor import Tensor, as_tensor, no_grad

LOG_2PI = float(np.log(2.0 * np.pi))
#: log-variance outputs are clamped to this range before exponentiation
LOG_VAR_BOUND = 10.0


@dataclass
class DiagGaussian:
    mean: Tensor
    log_var: Tensor

    def __post_init__(self):
        self.mean = as_tensor(self.mean)
        self.log_var = as_tensor(self.log_var)
        if self.mean.shape != self.log_var.shape:
            raise ShapeError(f"mean {self.mean.shape} and log_var "
                             f"{self.log_var.shape} differ")

    @classmethod
    def standard(cls, dim):
        """The N(0, I) prior."""
        return cls(np.zeros(dim), np.zeros(dim))

    @property
    def dim(self):
        return self.mean.shape[-1]

    @property
    def variance(self):
        return np.exp(self.log_var.data)


@dataclass
class LatentDims:
    shared: int = 8
    private_x: int = 4
    private_y: int = 4

    def __post_init__(self):
        for name in ("shared", "private_x", "private_y"):
            if getattr(self, name) < 0:
                raise ContractError(f"latent dim {name} must be >= 0")
        if self.shared < 1:
            raise ContractError("shared latent dim must be positive")


class GaussianEncoder(Module):
    """Projection network: ReLU MLP whose head emits ``[mean, log_var]``."""

    def __init__(self, n_in, hidden, latent_dim, rng, dropout=0.0):
        sizes = [n_in, *hidden, 2 * latent_dim]
        layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]
        self._setup(layers, latent_dim, dropout)

    @classmethod
    def from_layers(cls, layers, latent_dim, dropout=0.0):
        """Assemble an encoder from existing layer objects (used for sharing)."""
        enc = cls.__new__(cls)
        enc._setup(list(layers), latent_dim, dropout)
        return enc

    def _setup(self, layers, latent_dim, dropout):
        if layers[-1].n_out != 2 * latent_dim:
            raise ShapeError(f"encoder head emits {layers[-1].n_out} values, "
                             f"expected 2 x {latent_dim}")
        for lower, upper in zip(layers[:-1], layers[1:]):
            if lower.n_out != upper.n_in:
                raise ShapeError(f"encoder layer widths do not chain: "
                                 f"{lower.n_out} -> {upper.n_in}")
        self.layers = layers
        self.latent_dim = latent_dim
        self.dropout = dropout

    @property
    def n_in(self):
        return self.layers[0].n_in

    @property
    def depth(self):
        return len(self.layers)

    def __call__(self, x, rng=None):
        h = as_tensor(x)
        if h.shape[-1] != self.n_in:
            raise ShapeError(f"encoder expects inputs of width {self.n_in}, "
                             f"got shape {h.shape}")
        for layer in self.layers[:-1]:
            h = tn.relu(layer(h))
            h = tn.dropout(h, self.dropout, rng, self.training and rng is not None)
        out = self.layers[-1](h)
        d = self.latent_dim
        mean = out[..., :d]
        log_var = tn.clip(out[..., d:], -LOG_VAR_BOUND, LOG_VAR_BOUND)
        return DiagGaussian(mean, log_var)

    def posterior_mean(self, x):
        return self(x).mean


class GaussianDecoder(Module):
    """Reconstruction network producing the mean of a unit-variance Gaussian."""

    def __init__(self, latent_dims, hidden, n_out, rng):
        self.latent_dims = tuple(int(d) for d in latent_dims)
        sizes = [int(np.sum(self.latent_dims)), *hidden, n_out]
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]

    @property
    def n_in(self):
        return self.layers[0].n_in

    def __call__(self, *latents):
        if len(latents) != len(self.latent_dims):
            raise ShapeError(f"decoder takes {len(self.latent_dims)} latents, "
                             f"got {len(latents)}")
        h = latents[0] if len(latents) == 1 else tn.concat(latents, axis=-1)
        for layer in self.layers[:-1]:
            h = tn.relu(layer(h))
        return self.layers[-1](h)


@dataclass
class VCCAPNets:
    q_z: GaussianEncoder
    q_hx: GaussianEncoder
    q_hy: GaussianEncoder
    p_x: GaussianDecoder
    p_y: GaussianDecoder


@dataclass
class VAEPNets:
    """Single-view nets; ``q_h=None`` is the plain VAE without a private branch."""

    q_z: GaussianEncoder
    p_x: GaussianDecoder
    q_h: Optional[GaussianEncoder] = None


def kl_to_standard_normal(q):
    """KL(q || N(0, I)) summed over the last axis."""
    lv = q.log_var
    # expm1(v) - v is evaluated without cancellation, so the result stays >= 0
    spread = tn.record(np.expm1(lv.data) - lv.data, (lv,), lambda g: (g * np.expm1(lv.data),))
    return 0.5 * tn.sum(tn.square(q.mean) + spread, axis=-1)


def sample_reparam(q, eps):
    """``z = mean + exp(log_var / 2) * eps``; ``eps`` is a constant."""
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != q.mean.shape:
        raise ShapeError(f"eps shape {eps.shape} does not match posterior {q.mean.shape}")
    return q.mean + tn.exp(0.5 * q.log_var) * eps


def gaussian_log_likelihood(x, mean, log_var=None):
    """Diagonal Gaussian log density summed over the last axis.

    ``log_var=None`` means unit variance.
    """
    x, mean = as_tensor(x), as_tensor(mean)
    if x.shape[-1] != mean.shape[-1]:
        raise ShapeError(f"x {x.shape} and mean {mean.shape} differ")
    resid = tn.square(x - mean)
    if log_var is None:
        return -0.5 * tn.sum(resid + LOG_2PI, axis=-1)
    log_var = as_tensor(log_var)
    return -0.5 * tn.sum(LOG_2PI + log_var + resid / tn.exp(log_var), axis=-1)


def _draw(q, rng):
    return sample_reparam(q, rng.standard_normal(q.mean.shape))


def _check_width(name, x, width):
    if x.shape[-1] != width:
        raise ShapeError(f"{name} has width {x.shape[-1]}, nets expect {width}")


def vccap_loss(x, y, nets, rng, n_samples=1):
    """Negated two-view bound with shared ``z`` and private ``h_x``, ``h_y``."""
    x, y = as_tensor(x), as_tensor(y)
    _check_width("x", x, nets.q_z.n_in)
    _check_width("y", y, nets.q_hy.n_in)
    qz, qhx, qhy = nets.q_z(x, rng), nets.q_hx(x, rng), nets.q_hy(y, rng)
    kl = kl_to_standard_normal(qz) + kl_to_standard_normal(qhx) + kl_to_standard_normal(qhy)
    recon = 0.0
    for _ in range(n_samples):
        z, hx, hy = _draw(qz, rng), _draw(qhx, rng), _draw(qhy, rng)
        recon = recon + gaussian_log_likelihood(x, nets.p_x(z, hx))
        recon = recon + gaussian_log_likelihood(y, nets.p_y(z, hy))
    return kl - recon * (1.0 / n_samples)


def vaep_loss(x, nets, rng, n_samples=1):
    """Negated single-view bound with shared ``z`` and, if present, private ``h``."""
    x = as_tensor(x)
    _check_width("x", x, nets.q_z.n_in)
    qz = nets.q_z(x, rng)
    kl = kl_to_standard_normal(qz)
    qh = None
    if nets.q_h is not None:
        qh = nets.q_h(x, rng)
        kl = kl + kl_to_standard_normal(qh)
    recon = 0.0
    for _ in range(n_samples):
        latents = [_draw(qz, rng)]
        if qh is not None:
            latents.append(_draw(qh, rng))
        recon = recon + gaussian_log_likelihood(x, nets.p_x(*latents))
    return kl - recon * (1.0 / n_samples)


def vae_loss(x, nets, rng, n_samples=1):
    """Plain VAE: the private branch of ``nets`` (if any) is ignored."""
    return vaep_loss(x, VAEPNets(nets.q_z, nets.p_x), rng, n_samples)


def source_loss(batch, nets, rng, n_samples=1):
    """Per-sample source-domain loss; VCCAP for two-view nets, VAEP otherwise."""
    if isinstance(nets, VCCAPNets):
        x, y = batch
        return vccap_loss(x, y, nets, rng, n_samples)
    return vaep_loss(batch, nets, rng, n_samples)


def unsupervised_terms(batch_S, batch_T, source_nets, target_nets, rng, n_samples=1):
    """Batch-mean source and target losses, returned separately."""
    first = batch_S[0] if isinstance(source_nets, VCCAPNets) else batch_S
    if len(first) == 0 or len(batch_T) == 0:
        raise ContractError("both domains need a non-empty sub-batch")
    src = tn.mean(source_loss(batch_S, source_nets, rng, n_samples))
    tgt = tn.mean(vaep_loss(batch_T, target_nets, rng, n_samples))
    return src, tgt


def check_beta(beta):
    if not 0.0 <= beta <= 1.0:
        raise ContractError(f"beta must lie in [0, 1], got {beta}")


def combined_unsupervised_loss(batch_S, batch_T, source_nets, target_nets, beta, rng,
                               n_samples=1):
    """``(1 - beta) * mean source loss + beta * mean target loss``."""
    check_beta(beta)
    src, tgt = unsupervised_terms(batch_S, batch_T, source_nets, target_nets, rng, n_samples)
    return (1.0 - beta) * src + beta * tgt


def extract_features(q_z, frames):
    """Posterior means for a ``(T, d)`` frame matrix, without sampling or dropout."""
    frames = np.asarray(frames, dtype=np.float64)
    with no_grad():
        return q_z(frames).mean.data.copy()
