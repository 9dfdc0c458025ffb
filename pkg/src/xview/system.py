"""Composite of feature model, adapter and recognisers, rebuildable from a spec.

A ``spec`` is a plain JSON-compatible dict; ``build_system(spec, seed)``
reconstructs the same module tree (hence the same parameter names) every
time, which is what lets checkpoints store nothing but the spec and a flat
name -> array map.
"""

from dataclasses import asdict

from .crossdomain import (Adapter, ArchitectureConfig, Recognizer, RecognizerConfig,
                          build_model, build_stack)
from .errors import ConfigError
from .layers import Module
from .rng import Streams

KINDS = ("features", "recognizer", "multitask", "adaptation", "joint")


class System(Module):
    def __init__(self, spec, features=None, adapter=None, recognizer=None,
                 source_recognizer=None):
        self._spec = spec
        self.features = features
        self.adapter = adapter
        self.recognizer = recognizer
        self.source_recognizer = source_recognizer

    @property
    def spec(self):
        return self._spec

    @property
    def kind(self):
        return self._spec["kind"]

    @property
    def label_names(self):
        return list(self._spec.get("labels") or [])


def architecture_to_dict(cfg):
    d = asdict(cfg)
    d["encoder_hidden"] = list(cfg.encoder_hidden)
    d["decoder_hidden"] = list(cfg.decoder_hidden)
    return d


def architecture_from_dict(d):
    return ArchitectureConfig(**d)


def _recognizer_cfg(d):
    keys = ("hidden", "layers", "dropout", "frontend_width", "window")
    return RecognizerConfig(**{k: d[k] for k in keys if k in d})


def build_system(spec, seed=0):
    """Instantiate the modules described by ``spec`` (see module docstring)."""
    kind = spec.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"unknown system kind {kind!r}")
    streams = Streams(seed)
    dims = spec.get("dims", {})
    features = None
    if spec.get("architecture") is not None:
        cfg = architecture_from_dict(spec["architecture"])
        features = build_model(cfg, dims["x"], dims.get("y"), dims.get("xt"),
                               rng=streams("init.features"))
    if kind == "features":
        return System(spec, features)

    rec = spec["recognizer"]
    rcfg = _recognizer_cfg(rec)
    n_labels = len(spec["labels"])
    window_x = spec.get("windows", {}).get("x", 1)
    domain = spec.get("domain", "target")
    adapter = None
    source_rec = None

    if kind == "recognizer":
        if rec.get("input", "raw") == "features":
            if features is None:
                raise ConfigError("feature-input recogniser needs an architecture")
            enc = features.target_encoder
            stack = build_stack(features.config.latent.shared, n_labels, rcfg,
                                streams(f"init.recognizer.{domain}"))
            recognizer = Recognizer(stack, enc, window=window_x,
                                    finetune=bool(rec.get("finetune", False)))
        else:
            n_in = rcfg.window * dims["acoustic"]
            stack = build_stack(n_in, n_labels, rcfg, streams(f"init.recognizer.{domain}"),
                                rec.get("frontend_dnn_layers", 0))
            recognizer = Recognizer(stack, window=rcfg.window)
    elif kind == "multitask":
        stack = build_stack(features.config.latent.shared, n_labels, rcfg,
                            streams("init.recognizer.target"))
        recognizer = Recognizer(stack, features.target_encoder, window=window_x, finetune=True)
    elif kind == "adaptation":
        enc = features.q_z
        hidden = spec.get("adapter", {}).get("hidden")
        if hidden is None:
            if dims["xt"] != enc.n_in:
                raise ConfigError("identity adapter needs equal source/target input widths; "
                                  "set an adapter hidden width")
            adapter = Adapter.identity(enc.n_in)
        else:
            adapter = Adapter(dims["xt"], hidden, enc.n_in, streams("init.adapter"))
        stack = build_stack(features.config.latent.shared, n_labels, rcfg,
                            streams("init.recognizer.target"))
        recognizer = Recognizer(stack, enc, adapter, window=window_x, finetune=True)
    else:  # joint
        joint = spec["joint"]
        n_in_T = rcfg.window * dims["acoustic"]
        stack_T = build_stack(n_in_T, n_labels, rcfg, streams("init.recognizer.target"))
        recognizer = Recognizer(stack_T, window=rcfg.window)
        top = stack_T.layers[-1] if joint.get("share_top", True) else None
        rng_S = streams("init.recognizer.source")
        if joint.get("source_input", "raw") == "features":
            if features is None:
                raise ConfigError("feature-input source recogniser needs an architecture")
            stack_S = build_stack(features.config.latent.shared, n_labels, rcfg, rng_S, top=top)
            source_rec = Recognizer(stack_S, features.q_z, window=window_x,
                                    finetune=bool(joint.get("source_finetune", False)))
        else:
            n_in_S = rcfg.window * joint["source_dim"]
            stack_S = build_stack(n_in_S, n_labels, rcfg, rng_S,
                                  joint.get("source_frontend_layers", 0), top=top)
            source_rec = Recognizer(stack_S, window=rcfg.window)
    return System(spec, features, adapter, recognizer, source_rec)
