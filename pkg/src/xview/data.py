"""Utterance datasets, frame windowing, the on-disk container and the
synthetic two-view generator.

Container layout (little-endian)::

    b"XVDS"  u16 version  u8 domain  u32 acoustic_dim  u32 articulatory_dim
    u32 n_labels  { u16 len, utf-8 name } * n_labels
    u32 n_utterances
    per utterance:
        u16 len, utf-8 id   u32 T   u8 has_labels   [u32 L, u32 * L]
        f32 * (T * acoustic_dim)   f32 * (T * articulatory_dim)
    u32 crc32 of everything above

Frames are stored as float32 and held as float64 in memory, so any array
that is float32-representable survives a round trip exactly.
"""

import io
import struct
import zlib
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .errors import (BadMagicError, ChecksumError, ContractError, InfeasibleLabelsError,
                     ShapeError, TruncatedError, VersionError)
from .rng import make_rng
from .sequence import ctc_min_frames

MAGIC = b"XVDS"
VERSION = 1
DOMAINS = ("source", "target")


@dataclass
class Utterance:
    id: str
    frames: np.ndarray
    labels: Optional[List[int]] = None
    domain: str = "target"
    articulatory: Optional[np.ndarray] = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or len(self.frames) < 1:
            raise ShapeError(f"utterance {self.id!r}: frames must be (T>=1, d), "
                             f"got {self.frames.shape}")
        if self.domain not in DOMAINS:
            raise ContractError(f"unknown domain tag {self.domain!r}")
        if self.articulatory is not None:
            self.articulatory = np.asarray(self.articulatory, dtype=np.float64)
            if self.articulatory.ndim != 2 or len(self.articulatory) != len(self.frames):
                raise ShapeError(f"utterance {self.id!r}: articulatory frames "
                                 f"{self.articulatory.shape} do not match {self.frames.shape}")
        if self.labels is not None:
            self.labels = [int(v) for v in self.labels]
            if ctc_min_frames(self.labels) > len(self.frames):
                raise InfeasibleLabelsError(self.id, len(self.labels), len(self.frames))

    @property
    def n_frames(self):
        return len(self.frames)


@dataclass
class MultiViewPair:
    x: np.ndarray
    y: np.ndarray


@dataclass
class Dataset:
    utterances: List[Utterance]
    label_names: List[str] = field(default_factory=list)
    domain: str = "target"

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ContractError(f"unknown domain tag {self.domain!r}")
        dims = {u.frames.shape[1] for u in self.utterances}
        adims = {0 if u.articulatory is None else u.articulatory.shape[1]
                 for u in self.utterances}
        if len(dims) > 1 or len(adims) > 1:
            raise ShapeError("utterances disagree on frame dimensions")
        V = len(self.label_names)
        for u in self.utterances:
            if u.labels is not None and any(not 0 <= v < V for v in u.labels):
                raise ContractError(f"utterance {u.id!r} has labels outside [0, {V})")

    def __len__(self):
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)

    def __getitem__(self, i):
        return self.utterances[i]

    @property
    def acoustic_dim(self):
        return self.utterances[0].frames.shape[1] if self.utterances else 0

    @property
    def articulatory_dim(self):
        if not self.utterances or self.utterances[0].articulatory is None:
            return 0
        return self.utterances[0].articulatory.shape[1]

    @property
    def has_labels(self):
        return bool(self.utterances) and all(u.labels is not None for u in self.utterances)

    @property
    def n_labels(self):
        return len(self.label_names)

    def sequences(self, window=1):
        return [window_frames(u.frames, window) for u in self.utterances]

    def labels(self):
        return [u.labels for u in self.utterances]

    def ids(self):
        return [u.id for u in self.utterances]


def window_frames(frames, width):
    """Concatenate ``width`` frames centred on each frame, replicating edges."""
    if width < 1 or width % 2 == 0:
        raise ContractError(f"window width must be odd and positive, got {width}")
    frames = np.asarray(frames, dtype=np.float64)
    if width == 1:
        return frames.copy()
    r = width // 2
    padded = np.pad(frames, ((r, r), (0, 0)), mode="edge")
    T, d = frames.shape
    windows = np.lib.stride_tricks.sliding_window_view(padded, (width, d))
    return windows.reshape(T, width * d)


def multiview_pairs(dataset, window_x=1, window_y=1):
    """Frame-level source pairs ``(X, Y)`` stacked over all utterances."""
    if dataset.articulatory_dim == 0:
        raise ContractError("dataset carries no articulatory view")
    X = np.concatenate([window_frames(u.frames, window_x) for u in dataset])
    Y = np.concatenate([window_frames(u.articulatory, window_y) for u in dataset])
    return X, Y


def frame_matrix(dataset, window=1):
    return np.concatenate(dataset.sequences(window))


# --------------------------------------------------------------------------
# container I/O


class _Reader:
    def __init__(self, buf):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, n):
        if n < 0 or self.pos + n > len(self.buf):
            raise TruncatedError(f"payload truncated at byte {self.pos} (needed {n} more)")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))

    def string(self):
        (n,) = self.unpack("H")
        try:
            return bytes(self.take(n)).decode("utf-8")
        except UnicodeDecodeError:
            raise ChecksumError("undecodable string in container") from None

    def floats(self, count):
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float64)


def _put_string(out, s):
    raw = s.encode("utf-8")
    out.write(struct.pack("<H", len(raw)))
    out.write(raw)


def dataset_to_bytes(dataset):
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<HBII", VERSION, DOMAINS.index(dataset.domain),
                          dataset.acoustic_dim, dataset.articulatory_dim))
    out.write(struct.pack("<I", len(dataset.label_names)))
    for name in dataset.label_names:
        _put_string(out, name)
    out.write(struct.pack("<I", len(dataset)))
    for u in dataset:
        _put_string(out, u.id)
        out.write(struct.pack("<IB", u.n_frames, u.labels is not None))
        if u.labels is not None:
            out.write(struct.pack(f"<I{len(u.labels)}I", len(u.labels), *u.labels))
        out.write(u.frames.astype("<f4").tobytes())
        if u.articulatory is not None:
            out.write(u.articulatory.astype("<f4").tobytes())
    body = out.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


def dataset_from_bytes(buf):
    r = _Reader(buf)
    if bytes(r.take(4)) != MAGIC:
        raise BadMagicError("not an xview dataset container")
    (version,) = r.unpack("H")
    if version != VERSION:
        raise VersionError(f"unsupported dataset container version {version}")
    tag, d, dy = r.unpack("BII")
    if tag >= len(DOMAINS):
        raise ChecksumError(f"invalid domain tag {tag}")
    (n_labels,) = r.unpack("I")
    names = [r.string() for _ in range(n_labels)]
    (n_utts,) = r.unpack("I")
    records = []
    for _ in range(n_utts):
        uid = r.string()
        T, has_labels = r.unpack("IB")
        labels = None
        if has_labels:
            (L,) = r.unpack("I")
            labels = list(r.unpack(f"{L}I")) if L else []
        frames = r.floats(T * d).reshape(T, d)
        artic = r.floats(T * dy).reshape(T, dy) if dy else None
        records.append((uid, frames, labels, artic))
    end = r.pos
    (crc,) = r.unpack("I")
    if r.pos != len(r.buf):
        raise ChecksumError("trailing bytes after dataset payload")
    if zlib.crc32(r.buf[:end]) != crc:
        raise ChecksumError("dataset checksum mismatch")
    domain = DOMAINS[tag]
    utts = []
    for uid, frames, labels, artic in records:
        if labels is not None and any(v >= n_labels for v in labels):
            raise ChecksumError(f"utterance {uid!r}: label id outside inventory")
        utts.append(Utterance(uid, frames, labels, domain, artic))
    return Dataset(utts, names, domain)


def save_dataset(dataset, path):
    with open(path, "wb") as fh:
        fh.write(dataset_to_bytes(dataset))


def load_dataset(path):
    with open(path, "rb") as fh:
        return dataset_from_bytes(fh.read())


def write_label_inventory(names, path):
    """One name per line; line index is the label id (blank is implicit)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for name in names:
            fh.write(f"{name}\n")


def read_label_inventory(path):
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.strip()]


# --------------------------------------------------------------------------
# synthetic corpora


@dataclass
class SynthConfig:
    """Parameters of the synthetic stand-in for paired acoustic/articulatory corpora.

    Each utterance is a run of label segments.  A segment's frames carry a
    shared latent near that label's prototype plus per-segment private
    nuisance for each view; a random two-layer ``tanh`` map turns
    ``[shared, private]`` into each view.  Acoustics also depend on a
    per-speaker latent; every split draws its own speakers, so dev and test
    speakers are unseen in training.  Target-domain acoustics then pass
    through an affine shift with extra noise.
    """

    shared_dim: int = 8
    private_x_dim: int = 4
    private_y_dim: int = 2
    speaker_dim: int = 0
    speaker_scale: float = 1.0
    n_source_speakers: int = 35
    n_target_speakers: int = 8
    n_dev_speakers: int = 4
    n_test_speakers: int = 4
    acoustic_dim: int = 24
    articulatory_dim: int = 8
    n_labels: int = 8
    mixing: str = "nonlinear"
    mixing_hidden: int = 32
    #: multiplies both views before noise is added
    view_scale: float = 1.0
    segments: Tuple[int, int] = (3, 6)
    segment_frames: Tuple[int, int] = (2, 4)
    prototype_scale: float = 1.0
    latent_jitter: float = 0.5
    private_scale: float = 1.5
    noise: float = 0.3
    articulatory_noise: float = 0.1
    shift_scale: float = 0.3
    shift_noise: float = 0.1
    n_source: int = 200
    n_target_train: int = 200
    n_target_dev: int = 50
    n_target_test: int = 50
    seed: int = 0

    def __post_init__(self):
        for name in ("shared_dim", "acoustic_dim", "articulatory_dim", "n_labels",
                     "mixing_hidden", "n_source", "n_target_train", "n_target_dev",
                     "n_target_test"):
            if getattr(self, name) < 1:
                raise ContractError(f"synth {name} must be positive")
        for name in ("n_source_speakers", "n_target_speakers", "n_dev_speakers",
                     "n_test_speakers"):
            if getattr(self, name) < 1:
                raise ContractError(f"synth {name} must be positive")
        for name in ("private_x_dim", "private_y_dim", "speaker_dim"):
            if getattr(self, name) < 0:
                raise ContractError(f"synth {name} must be >= 0")
        for name in ("noise", "articulatory_noise", "shift_noise", "latent_jitter",
                     "private_scale", "shift_scale", "view_scale", "speaker_scale"):
            if getattr(self, name) < 0:
                raise ContractError(f"synth {name} must be >= 0")
        if self.mixing not in ("nonlinear", "identity"):
            raise ContractError(f"unknown mixing {self.mixing!r}")
        if self.mixing == "identity":
            if self.acoustic_dim != self.shared_dim + self.private_x_dim + self.speaker_dim:
                raise ContractError("identity mixing needs acoustic_dim = shared + private_x"
                                    " + speaker_dim")
            if self.articulatory_dim != self.shared_dim + self.private_y_dim:
                raise ContractError("identity mixing needs articulatory_dim = shared + private_y")
        self.segments = tuple(self.segments)
        self.segment_frames = tuple(self.segment_frames)
        if not 1 <= self.segments[0] <= self.segments[1]:
            raise ContractError("segments must be a range (lo, hi) with 1 <= lo <= hi")
        if not 2 <= self.segment_frames[0] <= self.segment_frames[1]:
            # two frames per segment keeps repeated labels CTC-feasible
            raise ContractError("segment_frames must be a range with 2 <= lo <= hi")


class _ViewMap:
    def __init__(self, n_in, n_out, hidden, mixing, rng):
        self.mixing = mixing
        if mixing == "nonlinear":
            self.A1 = rng.normal(size=(n_in, hidden)) / np.sqrt(n_in) * 1.5
            self.A2 = rng.normal(size=(hidden, n_out)) / np.sqrt(hidden) * 2.0

    def __call__(self, u):
        if self.mixing == "identity":
            return u
        return np.tanh(u @ self.A1) @ self.A2


@dataclass
class SynthCorpus:
    source: Dataset
    target_train: Dataset
    target_dev: Dataset
    target_test: Dataset
    label_names: List[str]
    #: per-utterance shared latents keyed by utterance id
    latents: dict = field(default_factory=dict, repr=False)

    def splits(self):
        return {"source": self.source, "target_train": self.target_train,
                "target_dev": self.target_dev, "target_test": self.target_test}


def _f32(a):
    return a.astype(np.float32).astype(np.float64)


def synth_multiview(cfg):
    """Generate a labelled two-view source corpus and labelled target splits."""
    world = make_rng(cfg.seed, "synth.world")
    V, k = cfg.n_labels, cfg.shared_dim
    prototypes = world.normal(size=(V, k)) * cfg.prototype_scale
    f_x = _ViewMap(k + cfg.private_x_dim + cfg.speaker_dim, cfg.acoustic_dim,
                   cfg.mixing_hidden, cfg.mixing, world)
    f_y = _ViewMap(k + cfg.private_y_dim, cfg.articulatory_dim, cfg.mixing_hidden,
                   cfg.mixing, world)
    d = cfg.acoustic_dim
    shift_M = np.eye(d) + cfg.shift_scale * world.normal(size=(d, d)) / np.sqrt(d)
    shift_b = cfg.shift_scale * world.normal(size=d)
    names = [f"p{i}" for i in range(V)]
    latents = {}

    def utterance(uid, domain, rng, speaker):
        n_seg = rng.integers(cfg.segments[0], cfg.segments[1] + 1)
        labels = rng.integers(0, V, size=n_seg)
        lens = rng.integers(cfg.segment_frames[0], cfg.segment_frames[1] + 1, size=n_seg)
        T = int(lens.sum())
        seg_of = np.repeat(np.arange(n_seg), lens)
        z = prototypes[labels[seg_of]] + cfg.latent_jitter * rng.normal(size=(T, k))
        hx = (cfg.private_scale * rng.normal(size=(n_seg, cfg.private_x_dim)))[seg_of]
        hy = (cfg.private_scale * rng.normal(size=(n_seg, cfg.private_y_dim)))[seg_of]
        spk = np.broadcast_to(speaker, (T, cfg.speaker_dim))
        x = cfg.view_scale * f_x(np.concatenate([z, hx, spk], axis=1))
        x = x + cfg.noise * rng.normal(size=(T, d))
        y = None
        if domain == "source":
            y = cfg.view_scale * f_y(np.concatenate([z, hy], axis=1))
            y = _f32(y + cfg.articulatory_noise * rng.normal(size=y.shape))
        else:
            x = x @ shift_M + shift_b + cfg.shift_noise * rng.normal(size=(T, d))
        latents[uid] = z
        return Utterance(uid, _f32(x), labels.tolist(), domain, y)

    def split(prefix, n, domain, n_speakers):
        rng = make_rng(cfg.seed, f"synth.{prefix}")
        speakers = cfg.speaker_scale * make_rng(cfg.seed, f"synth.speakers.{prefix}").normal(
            size=(n_speakers, cfg.speaker_dim))
        return Dataset([utterance(f"{prefix}-{i:05d}", domain, rng, speakers[i % n_speakers])
                        for i in range(n)], names, domain)

    return SynthCorpus(
        source=split("src", cfg.n_source, "source", cfg.n_source_speakers),
        target_train=split("tgt-train", cfg.n_target_train, "target", cfg.n_target_speakers),
        target_dev=split("tgt-dev", cfg.n_target_dev, "target", cfg.n_dev_speakers),
        target_test=split("tgt-test", cfg.n_target_test, "target", cfg.n_test_speakers),
        label_names=names,
        latents=latents,
    )
