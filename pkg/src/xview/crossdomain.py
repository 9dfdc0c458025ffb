"""Model assembly for source/target feature learning and recognisers.

``build_model`` wires the variational nets for one of the architecture
variants, sharing the shared-latent projection network between domains either
completely or from ``split_index`` upwards.  The objectives below turn a
model (plus recognisers) and a minibatch into a weighted total loss with its
named components, and ``train`` runs any of them with per-epoch dev scoring
and best-epoch retention.
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from . import tensor as tn
from .errors import ConfigError, ContractError, TrainingDivergedError
from .layers import Linear, Module
from .optim import Optimizer
from .sequence import (LstmStack, BiLSTMLayer, ctc_beam_search, ctc_greedy_decode,
                       ctc_loss_batch, pad_batch, per)
from .tensor import backward, no_grad
from .variational import (GaussianDecoder, GaussianEncoder, LatentDims, VAEPNets, VCCAPNets,
                          check_beta, source_loss, vaep_loss)

VARIANTS = ("A_only", "A_plus_B", "A_plus_C", "A_plus_D", "VAEP_plus_VAEP")
TARGET_PRIVATE_VARIANTS = ("A_plus_C", "A_plus_D", "VAEP_plus_VAEP")


@dataclass
class SharingSpec:
    mode: str = "full"
    split_index: int = 0

    def __post_init__(self):
        if self.mode not in ("full", "partial"):
            raise ConfigError(f"sharing mode must be 'full' or 'partial', got {self.mode!r}")
        if self.mode == "partial" and self.split_index < 1:
            raise ConfigError("partial sharing needs split_index >= 1")


@dataclass
class LossWeights:
    alpha: float = 0.5
    beta: float = 0.5

    def __post_init__(self):
        for name in ("alpha", "beta"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")


@dataclass
class ArchitectureConfig:
    variant: str = "A_plus_C"
    latent: LatentDims = field(default_factory=LatentDims)
    target_private_dim: int = 4
    sharing: SharingSpec = field(default_factory=SharingSpec)
    encoder_hidden: Tuple[int, ...] = (128, 128)
    decoder_hidden: Tuple[int, ...] = (128, 128)
    dropout: float = 0.0
    adaptation_layers: bool = False
    frontend_dnn_layers: int = 0

    def __post_init__(self):
        if isinstance(self.latent, dict):
            self.latent = LatentDims(**self.latent)
        if isinstance(self.sharing, dict):
            self.sharing = SharingSpec(**self.sharing)
        self.encoder_hidden = tuple(self.encoder_hidden)
        self.decoder_hidden = tuple(self.decoder_hidden)
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.variant == "A_plus_D" and self.sharing.mode != "partial":
            raise ConfigError("A_plus_D shares only part of the projection network; "
                              "set sharing mode 'partial'")
        if self.variant == "A_plus_C" and self.sharing.mode != "full":
            raise ConfigError("A_plus_C shares the full projection network; use A_plus_D")
        if self.variant == "A_only" and self.sharing.mode != "full":
            raise ConfigError("A_only has no target branch to share with")
        if self.variant != "VAEP_plus_VAEP":
            if self.latent.private_x < 1 or self.latent.private_y < 1:
                raise ConfigError("VCCAP needs positive private_x and private_y dims")
        if self.target_private_dim < 0:
            raise ConfigError("target_private_dim must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.frontend_dnn_layers < 0:
            raise ConfigError("frontend_dnn_layers must be >= 0")

    @property
    def has_target_branch(self):
        return self.variant != "A_only"

    @property
    def two_view(self):
        return self.variant != "VAEP_plus_VAEP"

    @property
    def depth(self):
        return len(self.encoder_hidden) + 1


# --------------------------------------------------------------------------
# model assembly


class CrossDomainModel(Module):
    """Source nets, and target nets sharing (part of) the shared-latent encoder.

    Attribute order fixes parameter names: shared layers are named under
    ``q_z``; only target-specific layers appear under ``q_z_t``.
    """

    def __init__(self, cfg, q_z, q_hx, q_hy, p_x, p_y, q_z_t=None, q_h_t=None, p_x_t=None):
        self._cfg = cfg
        self.q_z, self.q_hx, self.q_hy, self.p_x, self.p_y = q_z, q_hx, q_hy, p_x, p_y
        self.q_z_t, self.q_h_t, self.p_x_t = q_z_t, q_h_t, p_x_t

    @property
    def config(self):
        return self._cfg

    @property
    def source_nets(self):
        if self._cfg.two_view:
            return VCCAPNets(self.q_z, self.q_hx, self.q_hy, self.p_x, self.p_y)
        return VAEPNets(self.q_z, self.p_x, self.q_hx)

    @property
    def target_nets(self):
        if self.q_z_t is None:
            return None
        return VAEPNets(self.q_z_t, self.p_x_t, self.q_h_t)

    @property
    def target_encoder(self):
        """Encoder whose posterior mean is the target-domain feature."""
        return self.q_z_t if self.q_z_t is not None else self.q_z

    def shared_layer_ids(self):
        if self.q_z_t is None:
            return set()
        src = {id(layer) for layer in self.q_z.layers}
        return {id(layer) for layer in self.q_z_t.layers if id(layer) in src}


def build_model(cfg, x_dim, y_dim=None, xt_dim=None, rng=None):
    """Instantiate the nets of ``cfg`` for the given (windowed) input widths."""
    if rng is None:
        raise ContractError("build_model needs an rng")
    if xt_dim is None:
        xt_dim = x_dim
    lat = cfg.latent
    enc = lambda n_in, d: GaussianEncoder(n_in, cfg.encoder_hidden, d, rng, cfg.dropout)
    dec = lambda dims, n_out: GaussianDecoder(dims, cfg.decoder_hidden, n_out, rng)

    q_z = enc(x_dim, lat.shared)
    if cfg.two_view:
        if not y_dim:
            raise ConfigError(f"{cfg.variant} needs an articulatory view")
        q_hx = enc(x_dim, lat.private_x)
        q_hy = enc(y_dim, lat.private_y)
        p_x = dec([lat.shared, lat.private_x], x_dim)
        p_y = dec([lat.shared, lat.private_y], y_dim)
    else:
        q_hx = enc(x_dim, lat.private_x) if lat.private_x else None
        q_hy = p_y = None
        p_x = dec([lat.shared] + ([lat.private_x] if q_hx else []), x_dim)

    q_z_t = q_h_t = p_x_t = None
    if cfg.has_target_branch:
        if cfg.sharing.mode == "full":
            if xt_dim != x_dim:
                raise ConfigError(f"full sharing needs equal input widths, got source "
                                  f"{x_dim} and target {xt_dim}")
            q_z_t = q_z
        else:
            split = cfg.sharing.split_index
            if split >= q_z.depth:
                raise ConfigError(f"split_index {split} leaves nothing shared in a "
                                  f"{q_z.depth}-layer encoder")
            own = []
            n_in = xt_dim
            for layer in q_z.layers[:split]:
                own.append(Linear(n_in, layer.n_out, rng))
                n_in = layer.n_out
            q_z_t = GaussianEncoder.from_layers(own + q_z.layers[split:], lat.shared,
                                                cfg.dropout)
        dims = [lat.shared]
        if cfg.variant in TARGET_PRIVATE_VARIANTS and cfg.target_private_dim:
            q_h_t = enc(xt_dim, cfg.target_private_dim)
            dims.append(cfg.target_private_dim)
        p_x_t = dec(dims, xt_dim)
    return CrossDomainModel(cfg, q_z, q_hx, q_hy, p_x, p_y, q_z_t, q_h_t, p_x_t)


class Adapter(Module):
    """Linear -> ReLU -> Linear front end applied before a shared encoder."""

    def __init__(self, n_in, hidden, n_out, rng):
        self.inner = Linear(n_in, hidden, rng)
        self.outer = Linear(hidden, n_out, rng)

    @classmethod
    def identity(cls, dim):
        """Exact identity map: ``relu(x) - relu(-x) = x`` through a 2*dim hidden layer."""
        ad = cls.__new__(cls)
        ad.inner = Linear.__new__(Linear)
        ad.outer = Linear.__new__(Linear)
        eye = np.eye(dim)
        ad.inner.W = tn.Parameter(np.concatenate([eye, -eye], axis=1))
        ad.inner.b = tn.Parameter(np.zeros(2 * dim))
        ad.outer.W = tn.Parameter(np.concatenate([eye, -eye], axis=0))
        ad.outer.b = tn.Parameter(np.zeros(dim))
        return ad

    @property
    def n_in(self):
        return self.inner.n_in

    @property
    def n_out(self):
        return self.outer.n_out

    def __call__(self, x):
        return self.outer(tn.relu(self.inner(x)))


def adaptation_forward(x, adapter, encoder, rng=None):
    """Posterior-mean features of ``encoder`` applied to ``adapter(x)``."""
    x = tn.as_tensor(x)
    if adapter.n_out != encoder.n_in:
        raise ConfigError(f"adapter emits {adapter.n_out} values, encoder takes {encoder.n_in}")
    return encoder(adapter(x), rng).mean


# --------------------------------------------------------------------------
# recognisers


class Recognizer(Module):
    """A BiLSTM-CTC stack fed either raw (windowed) frames or encoder features.

    With ``finetune=False`` the encoder (and adapter) are treated as fixed:
    features are computed outside the tape and only the stack trains.
    """

    def __init__(self, stack, encoder=None, adapter=None, window=1, finetune=True):
        self.adapter = adapter
        self.encoder = encoder
        self.stack = stack
        self.window = window
        self.finetune = finetune

    @property
    def n_labels(self):
        return self.stack.n_labels

    def trainable_parameters(self):
        params = self.stack.parameters()
        if self.finetune:
            for m in (self.adapter, self.encoder):
                if m is not None:
                    params += m.parameters()
        return _unique(params)

    def prepare(self, sequences):
        """Window each ``(T, d)`` sequence; with a fixed encoder also featurise."""
        from .data import window_frames

        inputs = [window_frames(s, self.window) for s in sequences]
        if self.encoder is not None and not self.finetune:
            with no_grad():
                inputs = [self._features(tn.as_tensor(x), None).data for x in inputs]
        return inputs

    def _features(self, x, rng):
        if self.adapter is not None:
            return adaptation_forward(x, self.adapter, self.encoder, rng)
        return self.encoder(x, rng).mean

    def log_probs(self, inputs, rng=None):
        """Normalised ``(B, T, V + 1)`` log-probabilities for prepared inputs."""
        x, lengths = pad_batch(inputs)
        h = tn.as_tensor(x)
        if self.encoder is not None and self.finetune:
            h = self._features(h, rng)
        return tn.log_softmax(self.stack(h, lengths, rng)), lengths

    def decode_prepared(self, inputs, beam=1):
        """Decode each prepared input independently; beam 1 is best-path."""
        self.eval()
        results = []
        try:
            with no_grad():
                for x in inputs:
                    lp, _ = self.log_probs([x])
                    lp = lp.data[0]
                    results.append(ctc_greedy_decode(lp) if beam == 1
                                   else ctc_beam_search(lp, beam))
        finally:
            self.train()
        return results

    def decode(self, sequences, beam=1):
        return self.decode_prepared(self.prepare(sequences), beam)


def _unique(params):
    seen = set()
    out = []
    for p in params:
        if id(p) not in seen:
            seen.add(id(p))
            out.append(p)
    return out


def build_stack(n_in, n_labels, rec_cfg, rng, frontend_layers=0, top=None):
    """LSTM stack; ``top`` (a BiLSTMLayer) replaces the topmost layer when shared."""
    if top is None:
        return LstmStack(n_in, n_labels, rng, hidden=rec_cfg.hidden,
                         num_layers=rec_cfg.layers, dropout=rec_cfg.dropout,
                         frontend_layers=frontend_layers,
                         frontend_width=rec_cfg.frontend_width)
    width = rec_cfg.frontend_width if frontend_layers else n_in
    lower = []
    for _ in range(rec_cfg.layers - 1):
        lower.append(BiLSTMLayer(width, rec_cfg.hidden, rng))
        width = 2 * rec_cfg.hidden
    if width != top.n_in:
        raise ConfigError(f"shared top layer takes width {top.n_in}, lower layers emit {width}")
    from .layers import MLP

    stack = LstmStack.__new__(LstmStack)
    stack.n_labels = n_labels
    stack.dropout = rec_cfg.dropout
    stack.frontend = (MLP([n_in] + [rec_cfg.frontend_width] * frontend_layers, rng,
                          final_activation=True) if frontend_layers else None)
    stack.layers = lower + [top]
    stack.output = Linear(top.n_out, n_labels + 1, rng)
    return stack


@dataclass
class RecognizerConfig:
    hidden: int = 32
    layers: int = 2
    dropout: float = 0.0
    frontend_width: int = 64
    window: int = 1

    def __post_init__(self):
        if self.hidden < 1 or self.layers < 1:
            raise ConfigError("recogniser hidden size and layer count must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.window < 1 or self.window % 2 == 0:
            raise ConfigError("window must be odd and positive")


# --------------------------------------------------------------------------
# minibatches


def _take(ds, idx):
    if isinstance(ds, tuple):
        return tuple(np.asarray(part)[idx] for part in ds)
    return np.asarray(ds)[idx]


def _length(ds):
    return len(ds[0]) if isinstance(ds, tuple) else len(ds)


def mixed_minibatch(ds_S, ds_T, batch_size, ratio, rng):
    """Independent uniform draws: ``ceil(ratio * batch_size)`` source items and
    the remainder from the target domain.

    A dataset may be an array or a tuple of aligned arrays (e.g. the two views).
    """
    n_S, n_T = _length(ds_S), _length(ds_T)
    if n_S == 0 or n_T == 0:
        raise ContractError("mixed_minibatch needs non-empty datasets for both domains")
    if not 0.0 < ratio < 1.0:
        raise ContractError(f"ratio must lie in (0, 1), got {ratio}")
    k_S = math.ceil(ratio * batch_size)
    k_T = batch_size - k_S
    if k_T < 1:
        raise ContractError(f"batch of {batch_size} at ratio {ratio} leaves no target items")
    idx_S = rng.integers(0, n_S, size=k_S)
    idx_T = rng.integers(0, n_T, size=k_T)
    return _take(ds_S, idx_S), _take(ds_T, idx_T)


def utterance_batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


# --------------------------------------------------------------------------
# objectives: each returns (total, {name: (weight, value)})


def ctc_term(recognizer, inputs, labels, rng=None):
    log_probs, lengths = recognizer.log_probs(inputs, rng)
    return tn.mean(ctc_loss_batch(log_probs, labels, lengths))


def unsupervised_loss(model, batch_S, batch_T, beta, rng, n_samples=1):
    """Weighted domain mix of the source and target variational losses."""
    check_beta(beta)
    src = tn.mean(source_loss(batch_S, model.source_nets, rng, n_samples))
    if model.target_nets is None:
        return src, {_source_name(model): (1.0, src)}
    if _length(batch_T) == 0 or _length(batch_S) == 0:
        raise ContractError("both domains need a non-empty sub-batch")
    tgt = tn.mean(vaep_loss(batch_T, model.target_nets, rng, n_samples))
    total = (1.0 - beta) * src + beta * tgt
    return total, {_source_name(model): (1.0 - beta, src),
                   _target_name(model): (beta, tgt)}


def _source_name(model):
    return "vccap" if model.config.two_view else "vaep_source"


def _target_name(model):
    return "vaep" if model.q_h_t is not None else "vae"


def multitask_loss(batch_S, batch_T, inputs_T, labels_T, model, recognizer, weights,
                   rng_features, rng_recognizer, n_samples=1):
    """``alpha * unsupervised + (1 - alpha) * CTC`` on the recogniser's features."""
    if labels_T is None or any(lab is None for lab in labels_T):
        raise ContractError("multitask training needs labelled target utterances")
    unsup, parts = unsupervised_loss(model, batch_S, batch_T, weights.beta, rng_features,
                                     n_samples)
    ctc = ctc_term(recognizer, inputs_T, labels_T, rng_recognizer)
    a = weights.alpha
    total = a * unsup + (1.0 - a) * ctc
    comps = {name: (a * w, v) for name, (w, v) in parts.items()}
    comps["ctc"] = (1.0 - a, ctc)
    return total, comps


def joint_recognizers_loss(batch_S, batch_T, rec_S, rec_T, rng_S=None, rng_T=None,
                           weight_S=1.0, weight_T=1.0):
    """Sum of the two domains' batch-mean CTC losses; an empty sub-batch drops out.

    Each batch is ``(prepared inputs, labels)``.
    """
    total = None
    comps = {}
    for name, (inputs, labels), rec, rng, w in (("ctc_source", batch_S, rec_S, rng_S, weight_S),
                                               ("ctc_target", batch_T, rec_T, rng_T, weight_T)):
        if len(inputs) == 0:
            continue
        if any(lab is None for lab in labels):
            raise ContractError(f"{name}: joint recognisers need labels for both domains")
        value = ctc_term(rec, inputs, labels, rng)
        comps[name] = (w, value)
        term = w * value
        total = term if total is None else total + term
    if total is None:
        raise ContractError("joint recognisers got two empty sub-batches")
    return total, comps


# --------------------------------------------------------------------------
# training loop


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    components: dict
    dev_per: Optional[float] = None
    steps: int = 0


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    initial_dev_per: Optional[float] = None
    best_epoch: Optional[int] = None
    best_dev_per: Optional[float] = None
    #: name -> number of items consumed, by domain
    consumed: dict = field(default_factory=dict)

    @property
    def losses(self):
        return [r.loss for r in self.records]

    @property
    def dev_pers(self):
        return [r.dev_per for r in self.records]


def train(objective, params, opt_cfg, n_epochs, batches, evaluate=None, module=None,
          on_epoch=None, history=None):
    """Minimise ``objective`` over ``n_epochs`` passes of ``batches(epoch)``.

    ``objective(batch)`` returns ``(total, components)``.  When ``evaluate``
    is given it is called after every epoch and must return the dev error
    rate; the parameters of ``module`` at the first epoch attaining the
    minimum are restored when training ends.
    """
    params = _unique(params)
    opt = Optimizer(params, opt_cfg)
    history = history or TrainHistory()
    best_state = None
    if evaluate is not None:
        history.initial_dev_per = evaluate()
    for epoch in range(1, n_epochs + 1):
        totals = []
        sums = {}
        for step, batch in enumerate(batches(epoch)):
            total, comps = objective(batch)
            value = float(total.data)
            if not math.isfinite(value):
                raise TrainingDivergedError(f"loss became {value} at epoch {epoch}, step {step}")
            grads = backward(total, params)
            opt.step(grads)
            totals.append(value)
            for name, (w, v) in comps.items():
                sw, sv = sums.get(name, (w, 0.0))
                sums[name] = (w, sv + float(getattr(v, "data", v)))
        n = max(len(totals), 1)
        rec = EpochRecord(epoch, float(np.sum(totals)) / n,
                          {k: (w, s / n) for k, (w, s) in sums.items()}, steps=len(totals))
        if evaluate is not None:
            rec.dev_per = evaluate()
            if history.best_dev_per is None or rec.dev_per < history.best_dev_per:
                history.best_dev_per = rec.dev_per
                history.best_epoch = epoch
                if module is not None:
                    best_state = module.state_dict()
        history.records.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
    if best_state is not None:
        module.load_state_dict(best_state)
    return history


def dev_evaluator(recognizer, inputs, labels, beam=1):
    def evaluate():
        hyps = [r.hypothesis for r in recognizer.decode_prepared(inputs, beam)]
        return per(labels, hyps)
    return evaluate
