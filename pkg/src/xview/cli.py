"""``xview`` command-line harness.

Subcommands: synth, train-features, train-recognizer, train-joint, decode,
evaluate. Training commands write ``train.log`` and a checkpoint into
``--out``; the log's first line (``#`` prefix) carries the timestamp and
host, every other line is deterministic. Metric lines look like::

    METRIC epoch=3 total=<float> w.ctc=<float> ctc=<float> dev_per=<float>

with floats printed as ``%.17g``. stderr verbosity follows
``XVIEW_LOG_LEVEL`` (error, info or debug; default info).
"""

import argparse
import contextlib
import datetime
import logging
import os
import socket
import sys
from pathlib import Path

from filelock import FileLock, Timeout

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import DATA_FILES, LABELS_FILE, load_config
from .data import (frame_matrix, load_dataset, multiview_pairs, read_label_inventory,
                   save_dataset, synth_multiview, write_label_inventory)
from .errors import (ConfigError, ContractError, LabelInventoryMismatch,
                     UndefinedMetricError, XViewError)
from .estimators import (AdaptedRecognizer, CTCRecognizer, JointRecognizers,
                         MultitaskRecognizer, VariationalFeatureLearner)
from .sequence import edit_distance

log = logging.getLogger("xview")
LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
MODES = ("multitask", "joint_recognizers", "adaptation")


def fmt(v):
    return "%.17g" % v


def _setup_logging():
    name = os.environ.get("XVIEW_LOG_LEVEL", "info").strip().lower()
    if name not in LEVELS:
        raise ConfigError(f"XVIEW_LOG_LEVEL must be one of {sorted(LEVELS)}, got {name!r}")
    log.handlers.clear()
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(LEVELS[name])
    log.propagate = False


class RunLog:
    """``train.log`` writer; also mirrors lines to the logger."""

    def __init__(self, path, command):
        self.fh = open(path, "w", encoding="utf-8")
        stamp = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
        self.fh.write(f"# xview {command} time={stamp} host={socket.gethostname()}\n")

    def line(self, text, level=logging.INFO):
        self.fh.write(text + "\n")
        self.fh.flush()
        log.log(level, text)

    def epoch(self, rec):
        parts = [f"METRIC epoch={rec.epoch}", f"total={fmt(rec.loss)}"]
        for name in sorted(rec.components):
            w, v = rec.components[name]
            parts += [f"w.{name}={fmt(w)}", f"{name}={fmt(v)}"]
        if rec.dev_per is not None:
            parts.append(f"dev_per={fmt(rec.dev_per)}")
        parts.append(f"steps={rec.steps}")
        self.line(" ".join(parts))

    def close(self):
        self.fh.close()


@contextlib.contextmanager
def _run_log(out, command):
    runlog = RunLog(out / "train.log", command)
    try:
        yield runlog
    finally:
        runlog.close()


def parse_metrics(path):
    """Read the METRIC lines of a ``train.log`` into dicts."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("METRIC "):
                row = {}
                for item in line.split()[1:]:
                    k, v = item.split("=", 1)
                    row[k] = int(v) if k in ("epoch", "steps") else float(v)
                rows.append(row)
    return rows


# --------------------------------------------------------------------------
# helpers


def _out_dir(args, cfg=None):
    out = args.out or (cfg.out if cfg is not None else None)
    if not out:
        raise ConfigError("no output directory: pass --out")
    path = Path(out)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out!r}: {exc}") from None
    if not os.access(path, os.W_OK):
        raise ConfigError(f"output directory {out!r} is not writable")
    return path


def _config(args):
    cfg = load_config(args.config or "preset:desk")
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.synth.seed = args.seed
    if getattr(args, "beam", None) is not None:
        if args.beam < 1:
            raise ConfigError("--beam must be >= 1")
        cfg.decode.beam = args.beam
    return cfg


def _load_splits(cfg, args, names):
    root = cfg.data_dir(getattr(args, "data", None))
    inventory = read_label_inventory(root / LABELS_FILE) if (root / LABELS_FILE).exists() else None
    out = {}
    for name in names:
        path = root / DATA_FILES[name]
        if not path.exists():
            raise ConfigError(f"missing dataset file {str(path)!r}")
        ds = load_dataset(path)
        if inventory is not None and list(ds.label_names) != inventory:
            raise LabelInventoryMismatch(f"{path.name}: label inventory differs from {LABELS_FILE}")
        out[name] = ds
    return out


def _sequences(ds, need_labels=True, what="dataset"):
    X = [u.frames for u in ds.utterances]
    y = [u.labels for u in ds.utterances]
    if need_labels and any(lab is None for lab in y):
        raise ContractError(f"{what} has unlabelled utterances; this command needs labels")
    return X, y


def _learner(cfg):
    a, loss = cfg.architecture, cfg.loss
    return VariationalFeatureLearner(
        variant=a.variant, shared_dim=a.shared_dim, private_x_dim=a.private_x_dim,
        private_y_dim=a.private_y_dim, target_private_dim=a.target_private_dim,
        sharing=a.sharing, split_index=a.split_index, encoder_hidden=a.encoder_hidden,
        decoder_hidden=a.decoder_hidden, dropout=a.dropout, beta=loss.beta, ratio=loss.ratio,
        n_samples=loss.n_samples, window_x=cfg.windows.x, window_y=cfg.windows.y,
        optimizer=cfg.optimizer, learning_rate=cfg.optimizer.lr,
        epochs=cfg.optimizer.feature_epochs, batch_size=cfg.optimizer.frame_batch,
        random_state=cfg.seed)


def _features_from(path, cfg=None):
    ckpt = load_checkpoint(path)
    system = ckpt.to_system()
    if system.features is None:
        raise ContractError(f"checkpoint {str(path)!r} holds no feature model")
    params = {}
    if cfg is not None:
        params = dict(beta=cfg.loss.beta, ratio=cfg.loss.ratio, n_samples=cfg.loss.n_samples)
    return VariationalFeatureLearner.from_system(system, **params)


def _rec_params(cfg):
    r = cfg.recognizer
    return dict(hidden=r.hidden, layers=r.layers, dropout=r.dropout,
                frontend_width=r.frontend_width, optimizer=cfg.optimizer,
                learning_rate=cfg.optimizer.lr, epochs=cfg.optimizer.epochs,
                batch_size=cfg.optimizer.utterance_batch, beam=cfg.decode.beam,
                dev_beam=r.dev_beam, random_state=cfg.seed)


def _finish(est, out, runlog, name, command, extra_meta=None):
    h = est.history_
    if h.best_epoch is not None:
        runlog.line(f"BEST epoch={h.best_epoch} dev_per={fmt(h.best_dev_per)}")
    meta = {"command": command, "losses": h.losses,
            "initial_dev_per": h.initial_dev_per, "dev_pers": h.dev_pers}
    meta.update(extra_meta or {})
    ckpt = Checkpoint.from_system(est.system_, epoch=h.best_epoch or len(h.records),
                                  dev_per=h.best_dev_per, meta=meta)
    save_checkpoint(ckpt, out / name)
    runlog.line(f"CHECKPOINT {name}")


@contextlib.contextmanager
def _locked(out):
    """Hold ``out/.xview.lock`` so concurrent runs cannot share a directory."""
    lock = FileLock(str(out / ".xview.lock"), timeout=0)
    try:
        lock.acquire()
    except Timeout:
        raise XViewError(f"output directory {str(out)!r} is in use by another xview run") from None
    try:
        yield
    finally:
        lock.release()


# --------------------------------------------------------------------------
# commands


def cmd_synth(args):
    cfg = _config(args)
    out = _out_dir(args, cfg)
    corpus = synth_multiview(cfg.synth)
    with _locked(out):
        for name, ds in corpus.splits().items():
            save_dataset(ds, out / DATA_FILES[name])
            log.info("wrote %s (%d utterances)", DATA_FILES[name], len(ds.utterances))
        write_label_inventory(corpus.label_names, out / LABELS_FILE)


def cmd_train_features(args):
    cfg = _config(args)
    arch = cfg.architecture_config()
    if arch.adaptation_layers or arch.frontend_dnn_layers:
        raise ConfigError("adaptation layers and front-end DNN layers need labels; "
                          "use train-joint or train-recognizer")
    need = ["source"] + (["target_train"] if arch.has_target_branch else [])
    data = _load_splits(cfg, args, need)
    out = _out_dir(args, cfg)
    learner = _learner(cfg)
    with _locked(out), _run_log(out, "train-features") as runlog:
        learner.fit_corpus(data["source"], data.get("target_train"), on_epoch=runlog.epoch)
        consumed = learner.history_.consumed
        runlog.line(f"CONSUMED source={consumed['source']} target={consumed['target']}")
        _finish(learner, out, runlog, "features.xvck", "train-features",
                {"consumed": consumed})


def cmd_train_recognizer(args):
    cfg = _config(args)
    data = _load_splits(cfg, args, ["target_train", "target_dev"]
                        + (["source"] if cfg.recognizer.include_source else []))
    X, y = _sequences(data["target_train"], what="target_train")
    Xd, yd = _sequences(data["target_dev"], what="target_dev")
    if cfg.recognizer.include_source:
        Xs, ys = _sequences(data["source"], what="source")
        X, y = Xs + X, ys + y
    params = _rec_params(cfg)
    features = _features_from(args.features) if args.features else None
    est = CTCRecognizer(window=cfg.recognizer.window,
                        frontend_dnn_layers=cfg.recognizer.frontend_dnn_layers,
                        features=features, finetune_features=cfg.recognizer.finetune,
                        label_names=data["target_train"].label_names, **params)
    out = _out_dir(args, cfg)
    with _locked(out), _run_log(out, "train-recognizer") as runlog:
        est.fit(X, y, Xd, yd, on_epoch=runlog.epoch)
        _finish(est, out, runlog, "recognizer.xvck", "train-recognizer")


def cmd_train_joint(args):
    cfg = _config(args)
    mode = args.mode
    if mode not in MODES:
        raise ConfigError(f"--mode must be one of {MODES}")
    names = ["target_train", "target_dev"]
    if mode != "adaptation":
        names.append("source")
    data = _load_splits(cfg, args, names)
    X, y = _sequences(data["target_train"], what="target_train")
    Xd, yd = _sequences(data["target_dev"], what="target_dev")
    labels = data["target_train"].label_names
    params = _rec_params(cfg)
    if mode == "multitask":
        if args.features:
            learner = _features_from(args.features, cfg)
        else:
            learner = _learner(cfg)
        src = data["source"]
        if learner.architecture().two_view:
            Xs, Ys = multiview_pairs(src, learner.window_x, learner.window_y)
        else:
            Xs, Ys = frame_matrix(src, learner.window_x), None
        est = MultitaskRecognizer(features=learner, alpha=cfg.loss.alpha,
                                  frame_batch=cfg.optimizer.frame_batch, label_names=labels,
                                  **params)
        fit = lambda on_epoch: est.fit(X, y, Xs, Ys, Xd, yd, on_epoch=on_epoch)  # noqa: E731
    elif mode == "adaptation":
        if not args.features:
            raise ConfigError("adaptation mode needs --features CHECKPOINT")
        est = AdaptedRecognizer(features=_features_from(args.features),
                                adapter_hidden=cfg.joint.adapter_hidden, label_names=labels,
                                **params)
        fit = lambda on_epoch: est.fit(X, y, Xd, yd, on_epoch=on_epoch)  # noqa: E731
    else:
        Xs, ys = _sequences(data["source"], what="source")
        source_features = None
        if cfg.joint.source_input == "features":
            if not args.features:
                raise ConfigError("joint.source_input = 'features' needs --features CHECKPOINT")
            source_features = _features_from(args.features)
        est = JointRecognizers(source_features=source_features, share_top=cfg.joint.share_top,
                               source_frontend_layers=cfg.joint.source_frontend_layers,
                               finetune_source_features=cfg.joint.source_finetune,
                               source_weight=cfg.joint.source_weight,
                               target_weight=cfg.joint.target_weight,
                               window=cfg.recognizer.window, label_names=labels, **params)
        fit = lambda on_epoch: est.fit(Xs, ys, X, y, Xd, yd, on_epoch=on_epoch)  # noqa: E731
    out = _out_dir(args, cfg)
    with _locked(out), _run_log(out, f"train-joint mode={mode}") as runlog:
        fit(runlog.epoch)
        _finish(est, out, runlog, f"{mode}.xvck", "train-joint", {"mode": mode})


def cmd_decode(args):
    if not args.checkpoint or not args.data:
        raise ConfigError("decode needs --checkpoint and --data")
    beam = args.beam if args.beam is not None else 10
    if beam < 1:
        raise ConfigError("--beam must be >= 1")
    ckpt = load_checkpoint(args.checkpoint)
    system = ckpt.to_system()
    if system.recognizer is None:
        raise ContractError("checkpoint contains no recognizer")
    ds = load_dataset(args.data)
    if list(ds.label_names) != system.label_names:
        raise LabelInventoryMismatch("dataset and checkpoint label inventories differ")
    out = _out_dir(args)
    results = system.recognizer.decode([u.frames for u in ds.utterances], beam)
    names = system.label_names
    with _locked(out):
        _write_decodes(out, ds, results, names)
    log.info("decoded %d utterances with beam %d", len(results), beam)


def _write_decodes(out, ds, results, names):
    with open(out / "hyps.txt", "w", encoding="utf-8", newline="\n") as fh:
        for utt, res in zip(ds.utterances, results):
            fh.write(f"{utt.id}\t{' '.join(names[k] for k in res.hypothesis)}\n")
    with open(out / "scores.txt", "w", encoding="utf-8", newline="\n") as fh:
        for utt, res in zip(ds.utterances, results):
            fh.write(f"{utt.id}\t{fmt(res.score)}\n")


def read_hypotheses(path):
    """Parse ``id<TAB>names`` lines into an ordered ``{id: [names]}`` map."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise ContractError(f"{path}:{n}: expected 'utterance_id<TAB>labels'")
            uid, text = line.split("\t", 1)
            if uid in out:
                raise ContractError(f"{path}:{n}: duplicate utterance id {uid!r}")
            out[uid] = text.split()
    return out


def _references(path):
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == b"XVDS":
        ds = load_dataset(path)
        names = ds.label_names
        refs = {}
        for u in ds.utterances:
            if u.labels is None:
                raise ContractError(f"reference utterance {u.id!r} has no labels")
            refs[u.id] = [names[k] for k in u.labels]
        return refs
    return read_hypotheses(path)


def cmd_evaluate(args):
    if not args.refs or not args.hyps:
        raise ConfigError("evaluate needs --refs and --hyps")
    refs, hyps = _references(args.refs), read_hypotheses(args.hyps)
    if set(refs) != set(hyps):
        missing = sorted(set(refs) ^ set(hyps))
        raise ContractError(f"reference and hypothesis ids differ (e.g. {missing[:3]})")
    lines = ["utterance_id\tref_len\tS\tI\tD\tper"]
    tot = [0, 0, 0, 0]
    for uid in refs:
        c = edit_distance(refs[uid], hyps[uid])
        n = len(refs[uid])
        rate = fmt(c.errors / n) if n else "nan"
        lines.append(f"{uid}\t{n}\t{c.substitutions}\t{c.insertions}\t{c.deletions}\t{rate}")
        tot = [tot[0] + n, tot[1] + c.substitutions, tot[2] + c.insertions, tot[3] + c.deletions]
    if tot[0] == 0:
        raise UndefinedMetricError("total reference length is 0; PER is undefined")
    rate = (tot[1] + tot[2] + tot[3]) / tot[0]
    lines.append(f"SUMMARY utterances={len(refs)} ref_len={tot[0]} S={tot[1]} I={tot[2]} "
                 f"D={tot[3]} per={fmt(rate)} per_percent={100 * rate:.2f}")
    report = "\n".join(lines) + "\n"
    sys.stdout.write(report)
    if args.out:
        out = _out_dir(args)
        with _locked(out):
            (out / "metrics.txt").write_text(report, encoding="utf-8")


COMMANDS = {
    "synth": cmd_synth,
    "train-features": cmd_train_features,
    "train-recognizer": cmd_train_recognizer,
    "train-joint": cmd_train_joint,
    "decode": cmd_decode,
    "evaluate": cmd_evaluate,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="xview", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", metavar="PATH",
                       help="TOML config file or preset:NAME (default preset:desk)")
        p.add_argument("--seed", type=int, metavar="N")
        p.add_argument("--out", metavar="DIR")
        p.add_argument("--beam", type=int, metavar="N")
        p.add_argument("--mode", metavar="NAME", choices=MODES if name == "train-joint" else None)
        p.add_argument("--data", metavar="PATH",
                       help="dataset directory (training) or dataset file (decode)")
        p.add_argument("--features", metavar="CHECKPOINT")
        p.add_argument("--checkpoint", metavar="PATH")
        p.add_argument("--refs", metavar="PATH")
        p.add_argument("--hyps", metavar="PATH")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        _setup_logging()
        if args.command == "train-joint" and args.mode is None:
            raise ConfigError("train-joint needs --mode NAME")
        COMMANDS[args.command](args)
    except XViewError as exc:
        if log.handlers:
            log.error("%s: %s", type(exc).__name__, exc)
        else:
            print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
