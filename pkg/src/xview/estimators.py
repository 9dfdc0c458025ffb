"""scikit-learn style estimators over the cross-domain models.

Frame-level learners take ``(n_frames, n_features)`` arrays; recognisers
take lists of ``(T, d)`` utterance matrices and lists of label-id lists.
Every estimator is seeded by ``random_state`` through named random streams,
so two estimators that share a stream name (e.g. the target recogniser's
initialisation) start from identical values.
"""

import dataclasses
import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils import check_array
from sklearn.utils.validation import check_is_fitted

from .crossdomain import (ArchitectureConfig, LossWeights, SharingSpec, ctc_term,
                          dev_evaluator, joint_recognizers_loss, mixed_minibatch,
                          multitask_loss, train, unsupervised_loss, utterance_batches)
from .data import window_frames
from .errors import ConfigError, ContractError
from .optim import OptimizerConfig
from .rng import Streams
from .sequence import per
from .system import architecture_to_dict, build_system
from .variational import LatentDims, extract_features


def check_sequences(X, name="X"):
    """Validate a list of 2-d utterance matrices of one common width."""
    if X is None or len(X) == 0:
        raise ContractError(f"{name} must hold at least one utterance")
    seqs = [check_array(x, dtype=np.float64) for x in X]
    widths = {s.shape[1] for s in seqs}
    if len(widths) != 1:
        raise ContractError(f"{name}: utterances have differing widths {sorted(widths)}")
    return seqs


def check_labels(y, n, name="y"):
    if y is None or len(y) != n:
        raise ContractError(f"{name} must give one label sequence per utterance")
    out = []
    for lab in y:
        if lab is None:
            raise ContractError(f"{name}: missing label sequence")
        lab = [int(v) for v in lab]
        if any(v < 0 for v in lab):
            raise ContractError(f"{name}: negative label id")
        out.append(lab)
    return out


def _label_names(label_names, *label_lists):
    if label_names is not None:
        return list(label_names)
    top = max((max(lab) for labs in label_lists if labs for lab in labs if lab), default=0)
    return [str(i) for i in range(top + 1)]


def _opt(est):
    """``est.optimizer`` is ``"adam"``, ``"sgd"`` or a full OptimizerConfig."""
    base = est.optimizer
    if not isinstance(base, OptimizerConfig):
        base = OptimizerConfig(kind=base)
    return dataclasses.replace(base, lr=est.learning_rate, epochs=est.epochs,
                               feature_epochs=est.epochs)


def _copy_state(system, state):
    """Copy matching named parameters from ``state`` into ``system``."""
    params = dict(system.named_parameters())
    for name, value in state.items():
        if name in params:
            params[name].data[...] = value


class VariationalFeatureLearner(TransformerMixin, BaseEstimator):
    """Unsupervised multi-view feature learner with an optional target branch.

    Parameters
    ----------
    variant : {"A_only", "A_plus_B", "A_plus_C", "A_plus_D", "VAEP_plus_VAEP"}
        Model family. ``A_only`` is the two-view model on source pairs alone;
        the ``A_plus_*`` variants add a target-domain VAE (B), a VAE with a
        target private latent (C), or C with the projection network shared
        only from ``split_index`` upwards (D). ``VAEP_plus_VAEP`` replaces the
        two-view source model by a single-view one (acoustic-only control).
    shared_dim, private_x_dim, private_y_dim, target_private_dim : int
        Latent sizes.
    sharing : {"full", "partial"}
    split_index : int
        In partial mode, the number of input-side encoder layers kept
        domain-specific.
    beta : float in [0, 1]
        Weight of the target-domain loss.
    ratio : float in (0, 1)
        Fraction of each minibatch drawn from the source domain.
    window_x, window_y : int
        Odd frame-window widths applied by :meth:`fit_corpus` and
        :meth:`transform_sequences`.

    Attributes
    ----------
    system_ : System
        Trained modules (``system_.features`` is the CrossDomainModel).
    history_ : TrainHistory
    """

    def __init__(self, variant="A_plus_C", shared_dim=8, private_x_dim=4, private_y_dim=4,
                 target_private_dim=4, sharing="full", split_index=1,
                 encoder_hidden=(128, 128), decoder_hidden=(128, 128), dropout=0.0,
                 beta=0.5, ratio=0.5, n_samples=1, window_x=1, window_y=1,
                 optimizer="adam", learning_rate=1e-3, epochs=20, batch_size=200,
                 random_state=0):
        self.variant = variant
        self.shared_dim = shared_dim
        self.private_x_dim = private_x_dim
        self.private_y_dim = private_y_dim
        self.target_private_dim = target_private_dim
        self.sharing = sharing
        self.split_index = split_index
        self.encoder_hidden = encoder_hidden
        self.decoder_hidden = decoder_hidden
        self.dropout = dropout
        self.beta = beta
        self.ratio = ratio
        self.n_samples = n_samples
        self.window_x = window_x
        self.window_y = window_y
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.random_state = random_state

    def architecture(self):
        return ArchitectureConfig(
            variant=self.variant,
            latent=LatentDims(self.shared_dim, self.private_x_dim, self.private_y_dim),
            target_private_dim=self.target_private_dim,
            sharing=SharingSpec(self.sharing, self.split_index if self.sharing == "partial" else 0),
            encoder_hidden=tuple(self.encoder_hidden),
            decoder_hidden=tuple(self.decoder_hidden),
            dropout=self.dropout,
        )

    @classmethod
    def from_system(cls, system, **params):
        """Wrap an already trained feature System (e.g. from a checkpoint)."""
        spec = system.spec
        arch = spec["architecture"]
        est = cls(variant=arch["variant"], shared_dim=arch["latent"]["shared"],
                  private_x_dim=arch["latent"]["private_x"],
                  private_y_dim=arch["latent"]["private_y"],
                  target_private_dim=arch["target_private_dim"],
                  sharing=arch["sharing"]["mode"],
                  split_index=arch["sharing"]["split_index"] or 1,
                  encoder_hidden=tuple(arch["encoder_hidden"]),
                  decoder_hidden=tuple(arch["decoder_hidden"]), dropout=arch["dropout"],
                  window_x=spec["windows"]["x"], window_y=spec["windows"]["y"], **params)
        est.system_ = system
        return est

    def fit(self, X, Y=None, X_target=None, on_epoch=None):
        """Fit on windowed source frames ``X`` (and views ``Y``) plus target frames."""
        cfg = self.architecture()
        X = check_array(X, dtype=np.float64)
        if cfg.two_view:
            if Y is None:
                raise ContractError(f"{cfg.variant} needs the articulatory view Y")
            Y = check_array(Y, dtype=np.float64)
            if len(Y) != len(X):
                raise ContractError("X and Y must be aligned frame for frame")
        if cfg.has_target_branch:
            if X_target is None:
                raise ContractError(f"{cfg.variant} needs target-domain frames")
            X_target = check_array(X_target, dtype=np.float64)
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must lie in [0, 1], got {self.beta}")
        xt_dim = X_target.shape[1] if X_target is not None else X.shape[1]
        spec = {
            "kind": "features",
            "architecture": architecture_to_dict(cfg),
            "dims": {"x": X.shape[1], "y": Y.shape[1] if cfg.two_view else None,
                     "xt": xt_dim, "acoustic": xt_dim // self.window_x},
            "windows": {"x": self.window_x, "y": self.window_y},
            "labels": [],
        }
        self.system_ = build_system(spec, self.random_state)
        model = self.system_.features
        streams = Streams(self.random_state)
        rng_batch, rng_noise = streams("batches.features"), streams("noise.features")
        source = (X, Y) if cfg.two_view else X
        consumed = {"source": 0, "target": 0}

        if cfg.has_target_branch:
            k_S = math.ceil(self.ratio * self.batch_size)
            steps = math.ceil(len(X) / k_S)

            def batches(epoch):
                for _ in range(steps):
                    b_S, b_T = mixed_minibatch(source, X_target, self.batch_size, self.ratio,
                                               rng_batch)
                    consumed["source"] += len(b_S[0]) if cfg.two_view else len(b_S)
                    consumed["target"] += len(b_T)
                    yield b_S, b_T
        else:
            steps = math.ceil(len(X) / self.batch_size)

            def batches(epoch):
                for _ in range(steps):
                    idx = rng_batch.integers(0, len(X), size=self.batch_size)
                    consumed["source"] += len(idx)
                    yield (X[idx], Y[idx]), None

        def objective(batch):
            return unsupervised_loss(model, batch[0], batch[1], self.beta, rng_noise,
                                     self.n_samples)

        self.history_ = train(objective, model.parameters(), _opt(self), self.epochs, batches,
                              on_epoch=on_epoch)
        self.history_.consumed = consumed
        self.n_features_in_ = X.shape[1]
        return self

    def fit_corpus(self, source, target=None, on_epoch=None):
        """Window the utterances of ``source`` (two-view) and ``target`` datasets and fit."""
        from .data import frame_matrix, multiview_pairs

        if self.architecture().two_view:
            X, Y = multiview_pairs(source, self.window_x, self.window_y)
        else:
            X, Y = frame_matrix(source, self.window_x), None
        XT = frame_matrix(target, self.window_x) if target is not None else None
        return self.fit(X, Y, XT, on_epoch=on_epoch)

    def _encoder(self, domain):
        check_is_fitted(self, "system_")
        model = self.system_.features
        if domain == "target":
            return model.target_encoder
        if domain == "source":
            return model.q_z
        raise ContractError(f"domain must be 'source' or 'target', got {domain!r}")

    def transform(self, X, domain="target"):
        """Posterior means of the shared latent for windowed frames ``X``."""
        X = check_array(X, dtype=np.float64)
        return extract_features(self._encoder(domain), X)

    def transform_sequences(self, sequences, domain="target"):
        enc = self._encoder(domain)
        return [extract_features(enc, window_frames(s, self.window_x)) for s in sequences]


class _RecognizerBase(BaseEstimator):
    """Shared fit/predict plumbing; subclasses build the system and objective."""

    def _fit_loop(self, system, objective, params, batches, dev_rec, X_dev, y_dev, on_epoch):
        evaluate = None
        if X_dev is not None:
            X_dev = check_sequences(X_dev, "X_dev")
            y_dev = check_labels(y_dev, len(X_dev), "y_dev")
            evaluate = dev_evaluator(dev_rec, dev_rec.prepare(X_dev), y_dev, self.dev_beam)
        self.history_ = train(objective, params, _opt(self), self.epochs, batches, evaluate,
                              module=system, on_epoch=on_epoch)
        self.system_ = system
        return self

    @property
    def label_names_(self):
        check_is_fitted(self, "system_")
        return self.system_.label_names

    def decode(self, X, beam=None):
        check_is_fitted(self, "system_")
        return self.system_.recognizer.decode(check_sequences(X), beam or self.beam)

    def predict(self, X, beam=None):
        """Label-id sequences for each utterance (prefix beam search)."""
        return [r.hypothesis for r in self.decode(X, beam)]

    def score(self, X, y, beam=None):
        """``1 - PER`` on ``(X, y)``."""
        return 1.0 - per(check_labels(y, len(X)), self.predict(X, beam))

    def _rec_spec(self):
        return {"hidden": self.hidden, "layers": self.layers, "dropout": self.dropout,
                "frontend_width": self.frontend_width}


def _features_spec(learner):
    check_is_fitted(learner, "system_")
    spec = learner.system_.spec
    return {"architecture": spec["architecture"], "dims": dict(spec["dims"]),
            "windows": dict(spec["windows"])}


class CTCRecognizer(_RecognizerBase):
    """Two-layer style BiLSTM-CTC recogniser on raw frames or learned features.

    Parameters
    ----------
    features : VariationalFeatureLearner, optional
        A fitted learner; its target-domain encoder supplies the input
        features. The learner itself is not modified.
    finetune_features : bool
        Train the copied encoder end-to-end with the recogniser.
    window : int
        Odd frame window applied to raw inputs (ignored with ``features``,
        which use the learner's window).
    frontend_dnn_layers : int
        ReLU layers of width ``frontend_width`` before the LSTMs.
    dev_beam : int
        Beam used to score the dev set after each epoch (1 = best path).
    """

    def __init__(self, hidden=32, layers=2, dropout=0.0, window=1, frontend_dnn_layers=0,
                 frontend_width=64, features=None, finetune_features=False, label_names=None,
                 optimizer="adam", learning_rate=1e-3, epochs=20, batch_size=2, beam=10,
                 dev_beam=1, domain="target", random_state=0):
        self.hidden = hidden
        self.layers = layers
        self.dropout = dropout
        self.window = window
        self.frontend_dnn_layers = frontend_dnn_layers
        self.frontend_width = frontend_width
        self.features = features
        self.finetune_features = finetune_features
        self.label_names = label_names
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.beam = beam
        self.dev_beam = dev_beam
        self.domain = domain
        self.random_state = random_state

    def build(self, n_in, label_names):
        rec = self._rec_spec()
        rec.update(window=self.window, frontend_dnn_layers=self.frontend_dnn_layers,
                   input="raw", finetune=False)
        spec = {"kind": "recognizer", "labels": label_names, "domain": self.domain,
                "dims": {"acoustic": n_in}, "recognizer": rec, "architecture": None}
        if self.features is not None:
            spec.update(_features_spec(self.features))
            rec.update(input="features", finetune=bool(self.finetune_features), window=1)
        system = build_system(spec, self.random_state)
        if self.features is not None:
            _copy_state(system, self.features.system_.state_dict())
        return system

    def fit(self, X, y, X_dev=None, y_dev=None, on_epoch=None):
        X = check_sequences(X)
        y = check_labels(y, len(X))
        names = _label_names(self.label_names, y, y_dev)
        system = self.build(X[0].shape[1], names)
        rec = system.recognizer
        inputs = rec.prepare(X)
        streams = Streams(self.random_state)
        shuffle, drop = streams(f"shuffle.{self.domain}"), streams(f"dropout.{self.domain}")

        def batches(epoch):
            for idx in utterance_batches(len(inputs), self.batch_size, shuffle):
                yield [inputs[i] for i in idx], [y[i] for i in idx]

        def objective(batch):
            value = ctc_term(rec, batch[0], batch[1], drop)
            return value, {"ctc": (1.0, value)}

        return self._fit_loop(system, objective, rec.trainable_parameters(), batches, rec,
                              X_dev, y_dev, on_epoch)


class MultitaskRecognizer(_RecognizerBase):
    """Feature learner and target recogniser trained on one weighted objective.

    The total is ``alpha * [(1 - beta) * source loss + beta * target loss]
    + (1 - alpha) * CTC`` where the CTC recogniser reads the target encoder's
    posterior means. ``beta``, latent sizes and windows come from
    ``features``; when ``features`` is already fitted its parameters
    initialise the model (a pretraining phase).
    """

    def __init__(self, features=None, alpha=0.5, hidden=32, layers=2, dropout=0.0,
                 frontend_width=64, label_names=None, optimizer="adam", learning_rate=1e-3,
                 epochs=20, batch_size=2, frame_batch=200, beam=10, dev_beam=1,
                 random_state=0):
        self.features = features
        self.alpha = alpha
        self.hidden = hidden
        self.layers = layers
        self.dropout = dropout
        self.frontend_width = frontend_width
        self.label_names = label_names
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.frame_batch = frame_batch
        self.beam = beam
        self.dev_beam = dev_beam
        self.random_state = random_state

    def fit(self, X, y, X_source, Y_source=None, X_dev=None, y_dev=None, on_epoch=None):
        """``X, y``: labelled target utterances; ``X_source, Y_source``:
        windowed source frames as for :class:`VariationalFeatureLearner`."""
        learner = self.features if self.features is not None else VariationalFeatureLearner()
        cfg = learner.architecture()
        if not cfg.has_target_branch:
            raise ConfigError("multitask training needs a variant with a target branch")
        if y is None:
            raise ContractError("multitask training needs target labels")
        weights = LossWeights(self.alpha, learner.beta)
        X = check_sequences(X)
        y = check_labels(y, len(X))
        X_source = check_array(X_source, dtype=np.float64)
        if cfg.two_view:
            Y_source = check_array(Y_source, dtype=np.float64)
        names = _label_names(self.label_names, y, y_dev)
        wx = learner.window_x
        windowed = [window_frames(s, wx) for s in X]
        XT = np.concatenate(windowed)
        spec = {
            "kind": "multitask", "labels": names, "architecture": architecture_to_dict(cfg),
            "dims": {"x": X_source.shape[1], "y": Y_source.shape[1] if cfg.two_view else None,
                     "xt": XT.shape[1], "acoustic": X[0].shape[1]},
            "windows": {"x": wx, "y": learner.window_y},
            "recognizer": self._rec_spec(),
        }
        system = build_system(spec, self.random_state)
        if hasattr(learner, "system_"):
            _copy_state(system, learner.system_.state_dict())
        model, rec = system.features, system.recognizer
        streams = Streams(self.random_state)
        shuffle, drop = streams("shuffle.target"), streams("dropout.target")
        rng_batch, rng_noise = streams("batches.features"), streams("noise.features")
        source = (X_source, Y_source) if cfg.two_view else X_source

        def batches(epoch):
            for idx in utterance_batches(len(windowed), self.batch_size, shuffle):
                b_S, b_T = mixed_minibatch(source, XT, self.frame_batch, learner.ratio, rng_batch)
                yield b_S, b_T, [windowed[i] for i in idx], [y[i] for i in idx]

        def objective(batch):
            return multitask_loss(batch[0], batch[1], batch[2], batch[3], model, rec, weights,
                                  rng_noise, drop, learner.n_samples)

        params = model.parameters() + rec.trainable_parameters()
        return self._fit_loop(system, objective, params, batches, rec, X_dev, y_dev, on_epoch)


class AdaptedRecognizer(_RecognizerBase):
    """Adaptation layers (linear-ReLU-linear) in front of a learned source
    encoder, trained end-to-end with the recogniser.

    ``adapter_hidden=None`` starts from an exact identity adapter, which
    requires equal source and target input widths.
    """

    def __init__(self, features=None, adapter_hidden=None, hidden=32, layers=2, dropout=0.0,
                 frontend_width=64, label_names=None, optimizer="adam", learning_rate=1e-3,
                 epochs=20, batch_size=2, beam=10, dev_beam=1, random_state=0):
        self.features = features
        self.adapter_hidden = adapter_hidden
        self.hidden = hidden
        self.layers = layers
        self.dropout = dropout
        self.frontend_width = frontend_width
        self.label_names = label_names
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.beam = beam
        self.dev_beam = dev_beam
        self.random_state = random_state

    def fit(self, X, y, X_dev=None, y_dev=None, on_epoch=None):
        if self.features is None:
            raise ContractError("AdaptedRecognizer needs a fitted feature learner")
        X = check_sequences(X)
        y = check_labels(y, len(X))
        names = _label_names(self.label_names, y, y_dev)
        spec = {"kind": "adaptation", "labels": names, "recognizer": self._rec_spec(),
                "adapter": {"hidden": self.adapter_hidden}}
        spec.update(_features_spec(self.features))
        spec["dims"]["xt"] = spec["windows"]["x"] * X[0].shape[1]
        spec["dims"]["acoustic"] = X[0].shape[1]
        system = build_system(spec, self.random_state)
        _copy_state(system, self.features.system_.state_dict())
        rec = system.recognizer
        inputs = rec.prepare(X)
        streams = Streams(self.random_state)
        shuffle, drop = streams("shuffle.target"), streams("dropout.target")

        def batches(epoch):
            for idx in utterance_batches(len(inputs), self.batch_size, shuffle):
                yield [inputs[i] for i in idx], [y[i] for i in idx]

        def objective(batch):
            value = ctc_term(rec, batch[0], batch[1], drop)
            return value, {"ctc": (1.0, value)}

        return self._fit_loop(system, objective, rec.trainable_parameters(), batches, rec,
                              X_dev, y_dev, on_epoch)


class JointRecognizers(_RecognizerBase):
    """Source and target recognisers sharing their topmost BiLSTM layer.

    Sub-batches whose weight is zero are skipped. Prediction and scoring
    use the target recogniser.

    Parameters
    ----------
    source_features : VariationalFeatureLearner, optional
        A fitted learner whose source encoder turns source frames into the
        source recogniser's input. Raw source frames are used when omitted.
    finetune_source_features : bool
        Train the copied source encoder with the recognisers instead of
        keeping it fixed.
    share_top : bool
        Share the topmost BiLSTM layer; ``False`` trains two independent
        recognisers side by side.
    source_frontend_layers : int
        ReLU layers before the raw-input source recogniser.
    source_weight, target_weight : float
        Weights of the two domain CTC losses.
    """

    def __init__(self, source_features=None, finetune_source_features=False, share_top=True,
                 source_frontend_layers=0, source_weight=1.0, target_weight=1.0, hidden=32,
                 layers=2, dropout=0.0, window=1, frontend_width=64, label_names=None,
                 optimizer="adam", learning_rate=1e-3, epochs=20, batch_size=2, beam=10,
                 dev_beam=1, random_state=0):
        self.source_features = source_features
        self.finetune_source_features = finetune_source_features
        self.share_top = share_top
        self.source_frontend_layers = source_frontend_layers
        self.source_weight = source_weight
        self.target_weight = target_weight
        self.hidden = hidden
        self.layers = layers
        self.dropout = dropout
        self.window = window
        self.frontend_width = frontend_width
        self.label_names = label_names
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.beam = beam
        self.dev_beam = dev_beam
        self.random_state = random_state

    def fit(self, X_source, y_source, X, y, X_dev=None, y_dev=None, on_epoch=None):
        X_source = check_sequences(X_source, "X_source")
        y_source = check_labels(y_source, len(X_source), "y_source")
        X = list(X) if X is not None else []
        if X:
            X = check_sequences(X)
        y = check_labels(y, len(X)) if X else []
        names = _label_names(self.label_names, y_source, y, y_dev)
        rec = self._rec_spec()
        rec["window"] = self.window
        target_dim = X[0].shape[1] if X else (
            check_sequences(X_dev, "X_dev")[0].shape[1] if X_dev is not None
            else X_source[0].shape[1])
        spec = {"kind": "joint", "labels": names, "recognizer": rec, "architecture": None,
                "dims": {"acoustic": target_dim},
                "joint": {"share_top": bool(self.share_top),
                          "source_input": "features" if self.source_features is not None else "raw",
                          "source_dim": X_source[0].shape[1],
                          "source_frontend_layers": self.source_frontend_layers,
                          "source_finetune": bool(self.finetune_source_features)}}
        if self.source_features is not None:
            feat = _features_spec(self.source_features)
            feat["dims"]["acoustic"] = target_dim
            spec.update(feat)
        system = build_system(spec, self.random_state)
        if self.source_features is not None:
            _copy_state(system, self.source_features.system_.state_dict())
        rec_S, rec_T = system.source_recognizer, system.recognizer
        in_S, in_T = rec_S.prepare(X_source), rec_T.prepare(X) if X else []
        streams = Streams(self.random_state)
        shuffle_S, shuffle_T = streams("shuffle.source"), streams("shuffle.target")
        drop_S, drop_T = streams("dropout.source"), streams("dropout.target")
        use_S = self.source_weight != 0 and len(in_S) > 0
        use_T = self.target_weight != 0 and len(in_T) > 0
        if not (use_S or use_T):
            raise ContractError("joint recognisers need a non-empty, non-zero-weight domain")

        def batches(epoch):
            bS = utterance_batches(len(in_S), self.batch_size, shuffle_S) if use_S else []
            bT = utterance_batches(len(in_T), self.batch_size, shuffle_T) if use_T else []
            for k in range(max(len(bS), len(bT))):
                sub_S = ([], [])
                sub_T = ([], [])
                if bS:
                    idx = bS[k % len(bS)]
                    sub_S = ([in_S[i] for i in idx], [y_source[i] for i in idx])
                if bT:
                    idx = bT[k % len(bT)]
                    sub_T = ([in_T[i] for i in idx], [y[i] for i in idx])
                yield sub_S, sub_T

        def objective(batch):
            return joint_recognizers_loss(batch[0], batch[1], rec_S, rec_T, drop_S, drop_T,
                                          self.source_weight, self.target_weight)

        params = rec_S.trainable_parameters() + rec_T.trainable_parameters()
        return self._fit_loop(system, objective, params, batches, rec_T, X_dev, y_dev, on_epoch)

    def predict_source(self, X, beam=None):
        check_is_fitted(self, "system_")
        results = self.system_.source_recognizer.decode(check_sequences(X), beam or self.beam)
        return [r.hypothesis for r in results]
