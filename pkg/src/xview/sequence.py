"""Bidirectional LSTM recognisers, CTC loss, CTC decoders and PER scoring.

Label ids run over ``[0, V)``.  Recogniser outputs have ``V + 1`` columns:
column 0 is the CTC blank and column ``k + 1`` scores label ``k``.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import tensor as tn
from .errors import ContractError, InfeasibleTargetError, ShapeError, UndefinedMetricError
from .layers import MLP, Linear, Module
from .tensor import Parameter, as_tensor, record

BLANK = 0
NEG_INF = -math.inf


# --------------------------------------------------------------------------
# LSTM


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm_recurrence(gates_x, U):
    """Run the LSTM cell over time.

    ``gates_x`` is ``(B, T, 4H)`` holding the input contributions to the
    ``[input, forget, cell, output]`` gate pre-activations (bias included);
    ``U`` is the ``(H, 4H)`` recurrent matrix.  Returns hidden states
    ``(B, T, H)``; initial state is zero.
    """
    gates_x, U = as_tensor(gates_x), as_tensor(U)
    gx, Ud = gates_x.data, U.data
    B, T, G = gx.shape
    H = G // 4
    if G != 4 * H or Ud.shape != (H, G):
        raise ShapeError(f"lstm: gate block {gx.shape} incompatible with U {Ud.shape}")
    hs = np.empty((B, T, H))
    cs = np.empty((B, T, H))
    acts = np.empty((B, T, G))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in range(T):
        a = gx[:, t] + h @ Ud
        i = _sigmoid(a[:, :H])
        f = _sigmoid(a[:, H:2 * H])
        g = np.tanh(a[:, 2 * H:3 * H])
        o = _sigmoid(a[:, 3 * H:])
        c = f * c + i * g
        h = o * np.tanh(c)
        acts[:, t, :H], acts[:, t, H:2 * H], acts[:, t, 2 * H:3 * H], acts[:, t, 3 * H:] = i, f, g, o
        cs[:, t] = c
        hs[:, t] = h

    def grad(G_out):
        dgx = np.empty_like(gx)
        dU = np.zeros_like(Ud)
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        zeros = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            i, f = acts[:, t, :H], acts[:, t, H:2 * H]
            g, o = acts[:, t, 2 * H:3 * H], acts[:, t, 3 * H:]
            tc = np.tanh(cs[:, t])
            c_prev = cs[:, t - 1] if t else zeros
            h_prev = hs[:, t - 1] if t else zeros
            dh = G_out[:, t] + dh_next
            do = dh * tc
            dc = dh * o * (1.0 - tc * tc) + dc_next
            da = dgx[:, t]
            da[:, :H] = dc * g * i * (1.0 - i)
            da[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
            da[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
            da[:, 3 * H:] = do * o * (1.0 - o)
            dc_next = dc * f
            dU += h_prev.T @ da
            dh_next = da @ Ud.T
        return dgx, dU

    return record(hs, (gates_x, U), grad)


class LSTMDirection(Module):
    def __init__(self, n_in, hidden, rng, forget_bias=1.0):
        bound = 1.0 / np.sqrt(hidden)
        self.W = Parameter(rng.uniform(-bound, bound, size=(n_in, 4 * hidden)))
        self.U = Parameter(rng.uniform(-bound, bound, size=(hidden, 4 * hidden)))
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = forget_bias
        self.b = Parameter(b)

    @property
    def hidden(self):
        return self.U.shape[0]

    @property
    def n_in(self):
        return self.W.shape[0]

    def __call__(self, x):
        return lstm_recurrence(tn.matmul(x, self.W) + self.b, self.U)


def reverse_index(lengths, T):
    """Per-row time index reversing each sequence within its own length."""
    t = np.arange(T)[None, :]
    L = np.asarray(lengths)[:, None]
    return np.where(t < L, L - 1 - t, t)


class BiLSTMLayer(Module):
    """Forward and backward LSTMs, outputs concatenated per frame."""

    def __init__(self, n_in, hidden, rng):
        self.fwd = LSTMDirection(n_in, hidden, rng)
        self.bwd = LSTMDirection(n_in, hidden, rng)

    @property
    def n_in(self):
        return self.fwd.n_in

    @property
    def n_out(self):
        return 2 * self.fwd.hidden

    def __call__(self, x, lengths):
        x = as_tensor(x)
        B, T, _ = x.shape
        rev = reverse_index(lengths, T)[:, :, None]
        forward = self.fwd(x)
        backward = tn.take(self.bwd(tn.take(x, rev, axis=1)), rev, axis=1)
        return tn.concat([forward, backward], axis=-1)


class LstmStack(Module):
    """Optional ReLU DNN front end, stacked BiLSTM layers, and a blank-augmented
    output projection."""

    def __init__(self, n_in, n_labels, rng, hidden=32, num_layers=2, dropout=0.0,
                 frontend_layers=0, frontend_width=64, layers=None):
        self.n_labels = n_labels
        self.dropout = dropout
        self.frontend = None
        width = n_in
        if frontend_layers:
            self.frontend = MLP([n_in] + [frontend_width] * frontend_layers, rng,
                                final_activation=True)
            width = frontend_width
        if layers is None:
            layers = []
            for _ in range(num_layers):
                layers.append(BiLSTMLayer(width, hidden, rng))
                width = 2 * hidden
        self.layers = list(layers)
        for lower, upper in zip(self.layers[:-1], self.layers[1:]):
            if lower.n_out != upper.n_in:
                raise ShapeError(f"stacked BiLSTM widths do not chain: "
                                 f"{lower.n_out} -> {upper.n_in}")
        self.output = Linear(self.layers[-1].n_out, n_labels + 1, rng)

    @property
    def n_in(self):
        return self.frontend.layers[0].n_in if self.frontend is not None else self.layers[0].n_in

    def __call__(self, x, lengths, rng=None):
        """Logits ``(B, T, V + 1)`` for padded input ``(B, T, d)``."""
        x = as_tensor(x)
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"recogniser expects width {self.n_in}, got {x.shape}")
        train = self.training and rng is not None
        h = self.frontend(x, rng) if self.frontend is not None else x
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            h = layer(h, lengths)
            if i < last:
                h = tn.dropout(h, self.dropout, rng, train)
        return self.output(h)


def pad_batch(sequences):
    """Stack ``(T_i, d)`` arrays into ``(B, T_max, d)`` with zero padding."""
    lengths = np.array([len(s) for s in sequences])
    d = sequences[0].shape[1]
    out = np.zeros((len(sequences), lengths.max(), d))
    for b, s in enumerate(sequences):
        out[b, :len(s)] = s
    return out, lengths


def lstm_forward(stack, frames, training=False, rng=None):
    """Logits ``(T, V + 1)`` for a single ``(T, d)`` utterance."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2:
        raise ShapeError(f"expected a (T, d) frame matrix, got {frames.shape}")
    was = stack.training
    stack.train(training)
    try:
        out = stack(frames[None], np.array([len(frames)]), rng if training else None)
    finally:
        stack.train(was)
    return out[0]


# --------------------------------------------------------------------------
# CTC


def ctc_min_frames(target):
    """Fewest frames able to carry ``target``: one per label plus a blank
    between each pair of identical neighbours."""
    target = list(target)
    repeats = sum(1 for a, b in zip(target[:-1], target[1:]) if a == b)
    return len(target) + repeats


def _ctc_forward_backward(lp, target):
    """Negative log-likelihood and its gradient w.r.t. ``lp`` (T x (V+1))."""
    T = lp.shape[0]
    if ctc_min_frames(target) > T:
        raise InfeasibleTargetError(
            f"target of length {len(target)} needs {ctc_min_frames(target)} frames, "
            f"only {T} available")
    ext = np.full(2 * len(target) + 1, BLANK)
    ext[1::2] = np.asarray(target, dtype=int) + 1
    S = len(ext)
    skip = np.zeros(S, dtype=bool)
    skip[2:] = (ext[2:] != BLANK) & (ext[2:] != ext[:-2])
    emit = lp[:, ext]

    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        a = prev.copy()
        a[1:] = np.logaddexp(a[1:], prev[:-1])
        a[2:] = np.where(skip[2:], np.logaddexp(a[2:], prev[:-2]), a[2:])
        alpha[t] = a + emit[t]

    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        b = nxt.copy()
        b[:-1] = np.logaddexp(b[:-1], nxt[1:])
        b[:-2] = np.where(skip[2:], np.logaddexp(b[:-2], nxt[2:]), b[:-2])
        beta[t] = b

    log_p = np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2]) if S > 1 else alpha[T - 1, 0]
    occupancy = np.exp(alpha + beta - log_p)
    grad = np.zeros_like(lp)
    np.add.at(grad, (np.arange(T)[:, None], ext[None, :]), -occupancy)
    return -log_p, grad


def ctc_loss(log_probs, target):
    """CTC negative log-likelihood of one utterance.

    ``log_probs`` is ``(T, V + 1)`` of normalised log-probabilities.
    """
    log_probs = as_tensor(log_probs)
    if log_probs.ndim != 2:
        raise ShapeError(f"ctc_loss expects (T, V+1), got {log_probs.shape}")
    loss, grad = _ctc_forward_backward(log_probs.data, list(target))
    return record(np.array(loss), (log_probs,), lambda g: (g * grad,))


def ctc_loss_batch(log_probs, targets, lengths):
    """Per-utterance CTC losses ``(B,)`` for padded ``(B, T, V + 1)`` input.

    Frames beyond each utterance's length are ignored and receive no gradient.
    """
    log_probs = as_tensor(log_probs)
    B = log_probs.shape[0]
    if len(targets) != B or len(lengths) != B:
        raise ShapeError("ctc_loss_batch: targets/lengths do not match batch size")
    losses = np.empty(B)
    grads = np.zeros_like(log_probs.data)
    for b in range(B):
        n = int(lengths[b])
        losses[b], grads[b, :n] = _ctc_forward_backward(log_probs.data[b, :n], list(targets[b]))
    return record(losses, (log_probs,), lambda g: (g[:, None, None] * grads,))


# --------------------------------------------------------------------------
# Decoding


@dataclass
class DecodeResult:
    hypothesis: list
    score: float


def collapse(path):
    """Merge repeats, then drop blanks; returns label ids (output index - 1)."""
    out = []
    prev = None
    for k in path:
        k = int(k)
        if k != prev and k != BLANK:
            out.append(k - 1)
        prev = k
    return out


def ctc_greedy_decode(log_probs):
    """Best-path decoding; the score is the best path's log-probability."""
    lp = np.asarray(log_probs.data if isinstance(log_probs, tn.Tensor) else log_probs)
    best = lp.argmax(axis=1)
    return DecodeResult(collapse(best), float(lp[np.arange(len(lp)), best].sum()))


def _logaddexp(a, b):
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


def _rank_key(item):
    prefix, (pb, pnb) = item
    return (-_logaddexp(pb, pnb), prefix)


def ctc_beam_search(log_probs, beam):
    """Lexicon-free prefix beam search without a language model.

    Each prefix keeps separate log-probabilities for paths ending in blank
    and in its last label; ties in total probability go to the
    lexicographically smaller prefix.
    """
    if beam < 1:
        raise ContractError(f"beam must be >= 1, got {beam}")
    lp = np.asarray(log_probs.data if isinstance(log_probs, tn.Tensor) else log_probs)
    T, K = lp.shape
    beams = {(): (0.0, NEG_INF)}
    for t in range(T):
        row = lp[t].tolist()
        nxt = {}
        for prefix, (pb, pnb) in beams.items():
            total = _logaddexp(pb, pnb)
            eb, enb = total + row[BLANK], NEG_INF
            last = prefix[-1] if prefix else None
            for k in range(1, K):
                label = k - 1
                p = row[k]
                extended = prefix + (label,)
                xb, xnb = nxt.get(extended, (NEG_INF, NEG_INF))
                if label == last:
                    enb = _logaddexp(enb, pnb + p)
                    xnb = _logaddexp(xnb, pb + p)
                else:
                    xnb = _logaddexp(xnb, total + p)
                nxt[extended] = (xb, xnb)
            cb, cnb = nxt.get(prefix, (NEG_INF, NEG_INF))
            nxt[prefix] = (_logaddexp(cb, eb), _logaddexp(cnb, enb))
        ranked = sorted(nxt.items(), key=_rank_key)
        beams = dict(ranked[:beam])
    prefix, (pb, pnb) = min(beams.items(), key=_rank_key)
    return DecodeResult(list(prefix), _logaddexp(pb, pnb))


# --------------------------------------------------------------------------
# Scoring


class EditCounts(NamedTuple):
    substitutions: int
    insertions: int
    deletions: int

    @property
    def errors(self):
        return self.substitutions + self.insertions + self.deletions


def edit_distance(ref, hyp):
    """Unit-cost Levenshtein alignment counts.

    Backtracking prefers substitution (or match), then insertion, then
    deletion when several moves reach the optimum.
    """
    ref, hyp = list(ref), list(hyp)
    n, m = len(ref), len(hyp)
    D = np.zeros((n + 1, m + 1), dtype=np.int64)
    D[:, 0] = np.arange(n + 1)
    D[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            D[i, j] = min(D[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]),
                          D[i, j - 1] + 1, D[i - 1, j] + 1)
    i, j = n, m
    s = ins = dels = 0
    while i > 0 or j > 0:
        if i > 0 and j > 0 and D[i, j] == D[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif j > 0 and D[i, j] == D[i, j - 1] + 1:
            ins += 1
            j -= 1
        else:
            dels += 1
            i -= 1
    return EditCounts(int(s), ins, dels)


def per(refs, hyps):
    """Corpus error rate: total edits over total reference length."""
    if len(refs) != len(hyps):
        raise ContractError(f"{len(refs)} references vs {len(hyps)} hypotheses")
    total = sum(len(r) for r in refs)
    if total == 0:
        raise UndefinedMetricError("error rate undefined for empty references")
    errors = sum(edit_distance(r, h).errors for r, h in zip(refs, hyps))
    return errors / total
