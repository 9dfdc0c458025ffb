"""End-to-end acceptance checks, one test per criterion.

Every test prints a single ``ACCEPTANCE <n> PASS|FAIL ...`` line before
asserting, so the outcome of each criterion is visible in the pytest log.
"""

import math
import time

import numpy as np
import pytest

from oracles import exhaustive_ctc, labeling_probabilities, random_log_probs
from xview import tensor as tn
from xview.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from xview.cli import main
from xview.config import DATA_FILES
from xview.crossdomain import (ArchitectureConfig, LossWeights, Recognizer, RecognizerConfig,
                               build_model, build_stack, ctc_term, joint_recognizers_loss,
                               multitask_loss, unsupervised_loss)
from xview.data import (Dataset, SynthConfig, Utterance, dataset_from_bytes, dataset_to_bytes,
                        load_dataset, save_dataset, synth_multiview)
from xview.errors import BadMagicError, ChecksumError, FormatError, TruncatedError, VersionError
from xview.estimators import CTCRecognizer, JointRecognizers, VariationalFeatureLearner
from xview.gradcheck import check_gradients
from xview.sequence import ctc_beam_search, ctc_loss, ctc_min_frames
from xview.variational import (DiagGaussian, GaussianDecoder, GaussianEncoder, LatentDims,
                               VAEPNets, VCCAPNets, combined_unsupervised_loss,
                               kl_to_standard_normal, vae_loss, vaep_loss, vccap_loss)

SEEDS = (0, 1, 2)
# A corpus where articulation carries label information that noisy, speaker
# dependent acoustics obscure; sizes are the SynthConfig defaults (200 source
# pairs, 200 labelled target utterances, 8 labels, shared dimension 8).
CORPUS = dict(speaker_dim=4, speaker_scale=2.0, view_scale=3.0, noise=1.0)
FEATURE_EPOCHS = 20
RECOGNIZER_EPOCHS = 20


@pytest.fixture
def verdict(capsys):
    def report(n, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n} {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, detail
    return report


def _unique(params):
    return list({id(p): p for p in params}.values())


def _size(params):
    return sum(p.data.size for p in params)


def _seqs(ds):
    return [u.frames for u in ds], [u.labels for u in ds]


# 1. gradient correctness -------------------------------------------------------------------


def _gradient_cases():
    r = np.random.default_rng(0)
    lat = LatentDims(shared=2, private_x=1, private_y=1)
    src = VCCAPNets(q_z=GaussianEncoder(3, (4,), 2, r), q_hx=GaussianEncoder(3, (4,), 1, r),
                    q_hy=GaussianEncoder(2, (4,), 1, r), p_x=GaussianDecoder((2, 1), (4,), 3, r),
                    p_y=GaussianDecoder((2, 1), (4,), 2, r))
    tgt = VAEPNets(GaussianEncoder(3, (4,), 2, r), GaussianDecoder((2, 1), (4,), 3, r),
                   GaussianEncoder(3, (4,), 1, r))
    x, y, xt = r.normal(size=(4, 3)), r.normal(size=(4, 2)), r.normal(size=(5, 3))
    src_params = _unique(m for net in (src.q_z, src.q_hx, src.q_hy, src.p_x, src.p_y)
                         for m in net.parameters())
    tgt_params = _unique(m for net in (tgt.q_z, tgt.p_x, tgt.q_h) for m in net.parameters())

    cfg = ArchitectureConfig(variant="A_plus_C", latent=lat, encoder_hidden=(4,),
                             decoder_hidden=(4,), target_private_dim=1)
    model = build_model(cfg, 3, 2, rng=np.random.default_rng(1))
    rec = Recognizer(build_stack(2, 2, RecognizerConfig(hidden=2, layers=1), r),
                     encoder=model.target_encoder)
    utts = rec.prepare([r.normal(size=(5, 3)), r.normal(size=(3, 3))])
    mt_params = _unique(model.parameters() + rec.trainable_parameters())

    logits = tn.Parameter(r.normal(size=(5, 4)))

    rc = RecognizerConfig(hidden=2, layers=2)
    rec_T = Recognizer(build_stack(4, 2, rc, r))
    rec_S = Recognizer(build_stack(3, 2, rc, r, top=rec_T.stack.layers[-1]))
    bS = (rec_S.prepare([r.normal(size=(4, 3)), r.normal(size=(3, 3))]), [[0], [1, 0]])
    bT = (rec_T.prepare([r.normal(size=(5, 4))]), [[1, 1]])
    joint_params = _unique(rec_S.parameters() + rec_T.parameters())

    def seeded(fn):
        return lambda: fn(np.random.default_rng(7))

    return {
        "VCCAP": (seeded(lambda g: tn.mean(vccap_loss(x, y, src, g))), src_params),
        "VAEP": (seeded(lambda g: tn.mean(vaep_loss(xt, tgt, g))), tgt_params),
        "combined": (seeded(lambda g: combined_unsupervised_loss((x, y), xt, src, tgt, 0.3, g)),
                     _unique(src_params + tgt_params)),
        "multitask": (seeded(lambda g: multitask_loss((x, y), xt, utts, [[0, 1], [1]], model,
                                                      rec, LossWeights(0.4, 0.6), g, None)[0]),
                      mt_params),
        "CTC": (lambda: ctc_loss(tn.log_softmax(logits), [2, 0, 2]), [logits]),
        "joint": (lambda: joint_recognizers_loss(bS, bT, rec_S, rec_T)[0], joint_params),
    }


def test_criterion_1_gradients_match_finite_differences(verdict):
    start = time.perf_counter()
    errors, sizes = {}, {}
    for name, (loss, params) in _gradient_cases().items():
        sizes[name] = _size(params)
        errors[name] = check_gradients(loss, params)
    elapsed = time.perf_counter() - start
    ok = (max(errors.values()) <= 1e-4 and max(sizes.values()) <= 500 and elapsed < 60)
    detail = " ".join(f"{k}={v:.1e}/{sizes[k]}p" for k, v in errors.items())
    verdict(1, ok, f"max_rel_err={max(errors.values()):.2e} {detail} time={elapsed:.1f}s")


# 2. CTC oracle equivalence -------------------------------------------------------------------


def test_criterion_2_ctc_and_beam_match_exhaustive_enumeration(verdict):
    start = time.perf_counter()
    r = np.random.default_rng(2024)
    worst, checked = 0.0, 0
    while checked < 200:
        T, V, L = int(r.integers(1, 9)), int(r.integers(1, 5)), int(r.integers(0, 4))
        target = [int(k) for k in r.integers(0, V, size=L)]
        if ctc_min_frames(target) > T:
            continue
        lp = random_log_probs(r, T, V + 1)
        worst = max(worst, abs(float(ctc_loss(lp, target).data) - exhaustive_ctc(lp, target)))
        checked += 1
    beam_ok, n_beam = 0, 50
    for _ in range(n_beam):
        T, V = int(r.integers(1, 6)), int(r.integers(1, 4))
        lp = random_log_probs(r, T, V + 1)
        probs = labeling_probabilities(lp)
        best = max(probs.values())
        res = ctc_beam_search(lp, (V + 1) ** T)
        beam_ok += math.isclose(probs[tuple(res.hypothesis)], best, rel_tol=1e-12)
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and beam_ok == n_beam and elapsed < 60
    verdict(2, ok, f"ctc_instances={checked} max_abs_err={worst:.2e} "
                   f"beam_argmax={beam_ok}/{n_beam} time={elapsed:.1f}s")


# 3. variational identities -------------------------------------------------------------------


def test_criterion_3_kl_identities(verdict):
    zero = float(kl_to_standard_normal(DiagGaussian(np.zeros(5), np.zeros(5))).data)
    half = float(kl_to_standard_normal(DiagGaussian(np.ones(1), np.zeros(1))).data)
    r = np.random.default_rng(3)
    mu, lv = r.normal(size=3), r.normal(scale=0.5, size=3)
    closed = float(kl_to_standard_normal(DiagGaussian(mu, lv)).data)
    sd = np.exp(0.5 * lv)
    z = mu + sd * r.standard_normal((10 ** 6, 3))
    log_ratio = (-0.5 * ((z - mu) / sd) ** 2 - np.log(sd) + 0.5 * z ** 2).sum(axis=1)
    se = log_ratio.std(ddof=1) / math.sqrt(len(log_ratio))
    gap = abs(log_ratio.mean() - closed)
    ok = zero == 0.0 and abs(half - 0.5) <= 1e-12 and gap <= 3 * se
    verdict(3, ok, f"kl0={zero!r} kl_half_err={abs(half - 0.5):.1e} "
                   f"mc_gap={gap:.2e} (3se={3 * se:.2e})")


# 4. degeneracy identities --------------------------------------------------------------------


def test_criterion_4_degenerate_weights(verdict):
    r = np.random.default_rng(4)
    lat = LatentDims(shared=2, private_x=1, private_y=1)
    cfg = ArchitectureConfig(variant="A_plus_C", latent=lat, encoder_hidden=(4,),
                             decoder_hidden=(4,), target_private_dim=1)
    model = build_model(cfg, 3, 2, rng=np.random.default_rng(5))
    rec = Recognizer(build_stack(2, 3, RecognizerConfig(hidden=3, layers=1), r),
                     encoder=model.target_encoder)
    bS, bT = (r.normal(size=(4, 3)), r.normal(size=(4, 2))), r.normal(size=(6, 3))
    utts, labels = rec.prepare([r.normal(size=(4, 3)), r.normal(size=(5, 3))]), [[0, 2], [1]]
    gaps = {}
    for beta, keep in ((0.0, "vccap"), (1.0, "vaep")):
        total, comps = unsupervised_loss(model, bS, bT, beta, np.random.default_rng(6))
        gaps[f"beta={beta:g}"] = abs(float(total.data) - float(comps[keep][1].data))
    mt0, _ = multitask_loss(bS, bT, utts, labels, model, rec, LossWeights(0.0, 0.5),
                            np.random.default_rng(7), None)
    gaps["alpha=0"] = abs(float(mt0.data) - float(ctc_term(rec, utts, labels).data))
    mt1, _ = multitask_loss(bS, bT, utts, labels, model, rec, LossWeights(1.0, 0.5),
                            np.random.default_rng(8), None)
    unsup, _ = unsupervised_loss(model, bS, bT, 0.5, np.random.default_rng(8))
    gaps["alpha=1"] = abs(float(mt1.data) - float(unsup.data))
    nets = VAEPNets(GaussianEncoder(3, (4,), 2, r), GaussianDecoder((2,), (4,), 3, r))
    x = r.normal(size=(6, 3))
    gaps["vaep_h0"] = float(np.abs(vaep_loss(x, nets, np.random.default_rng(9)).data
                                   - vae_loss(x, nets, np.random.default_rng(9)).data).max())
    ok = max(gaps.values()) <= 1e-9
    verdict(4, ok, " ".join(f"{k}:{v:.1e}" for k, v in gaps.items()))


# 5 and 6. synthetic ordering experiments ----------------------------------------------------

_RUNS = {}


def _seed_run(seed):
    if seed not in _RUNS:
        corpus = synth_multiview(SynthConfig(seed=seed, **CORPUS))
        learner = VariationalFeatureLearner(variant="A_plus_C", epochs=FEATURE_EPOCHS,
                                            random_state=seed)
        _RUNS[seed] = (corpus, learner.fit_corpus(corpus.source, corpus.target_train))
    return _RUNS[seed]


def _dev_per(est, corpus, *source):
    X, y = _seqs(corpus.target_train)
    Xd, yd = _seqs(corpus.target_dev)
    return est.fit(*source, X, y, Xd, yd).history_.best_dev_per


@pytest.mark.slow
def test_criterion_5_cross_domain_feature_ordering(verdict):
    start = time.perf_counter()
    rows = {"raw": [], "VAEP+VAEP": [], "VCCAP+VAEP": []}
    for seed in SEEDS:
        corpus, multiview = _seed_run(seed)
        acoustic = VariationalFeatureLearner(variant="VAEP_plus_VAEP", epochs=FEATURE_EPOCHS,
                                             random_state=seed)
        acoustic.fit_corpus(corpus.source, corpus.target_train)
        rows["raw"].append(_dev_per(CTCRecognizer(epochs=RECOGNIZER_EPOCHS,
                                                  random_state=seed), corpus))
        for name, learner in (("VAEP+VAEP", acoustic), ("VCCAP+VAEP", multiview)):
            rec = CTCRecognizer(features=learner, finetune_features=True,
                                epochs=RECOGNIZER_EPOCHS, random_state=seed)
            rows[name].append(_dev_per(rec, corpus))
    med = {k: float(np.median(v)) for k, v in rows.items()}
    ok = med["VCCAP+VAEP"] < med["VAEP+VAEP"] < med["raw"]
    per_seed = " ".join(f"{k}={[round(v, 3) for v in vals]}" for k, vals in rows.items())
    verdict(5, ok, f"median VCCAP+VAEP={med['VCCAP+VAEP']:.3f} VAEP+VAEP={med['VAEP+VAEP']:.3f} "
                   f"raw={med['raw']:.3f} | {per_seed} time={time.perf_counter() - start:.0f}s")


@pytest.mark.slow
def test_criterion_6_joint_recognizer_sharing(verdict):
    r = np.random.default_rng(6)
    rc = RecognizerConfig(hidden=3, layers=2)
    rec_T = Recognizer(build_stack(4, 3, rc, r))
    rec_S = Recognizer(build_stack(3, 3, rc, r, top=rec_T.stack.layers[-1]))
    bS = (rec_S.prepare([r.normal(size=(5, 3)), r.normal(size=(4, 3))]), [[0, 2], [1]])
    bT = (rec_T.prepare([r.normal(size=(6, 4)), r.normal(size=(3, 4))]), [[2, 2], [0]])
    shared = rec_T.stack.layers[-1].parameters()
    g = tn.backward(joint_recognizers_loss(bS, bT, rec_S, rec_T)[0], shared)
    gS = tn.backward(ctc_term(rec_S, *bS), shared)
    gT = tn.backward(ctc_term(rec_T, *bT), shared)
    sum_gap = max(float(np.abs(g[p] - gS[p] - gT[p]).max()) for p in shared)

    start = time.perf_counter()
    raw, feat = [], []
    for seed in SEEDS:
        corpus, multiview = _seed_run(seed)
        source = _seqs(corpus.source)
        raw.append(_dev_per(JointRecognizers(epochs=RECOGNIZER_EPOCHS, random_state=seed),
                            corpus, *source))
        feat.append(_dev_per(JointRecognizers(source_features=multiview,
                                              epochs=RECOGNIZER_EPOCHS, random_state=seed),
                             corpus, *source))
    m_raw, m_feat = float(np.median(raw)), float(np.median(feat))
    ok = sum_gap <= 1e-9 and m_feat <= m_raw
    verdict(6, ok, f"shared_grad_gap={sum_gap:.1e} median feature_source={m_feat:.3f} "
                   f"acoustic_source={m_raw:.3f} | feature={[round(v, 3) for v in feat]} "
                   f"acoustic={[round(v, 3) for v in raw]} time={time.perf_counter() - start:.0f}s")


# 7. determinism ------------------------------------------------------------------------------

TINY = """
seed = 11
[synth]
n_source = 10
n_target_train = 10
n_target_dev = 4
n_target_test = 5
acoustic_dim = 6
articulatory_dim = 4
n_labels = 4
[architecture]
variant = "A_plus_C"
shared_dim = 3
private_x_dim = 2
private_y_dim = 2
target_private_dim = 2
encoder_hidden = [8]
decoder_hidden = [8]
[optimizer]
feature_epochs = 2
epochs = 2
frame_batch = 40
[recognizer]
hidden = 4
dropout = 0.2
[decode]
beam = 4
"""


def _pipeline(root, cfg):
    data = root / "data"
    feats = root / "feat" / "features.xvck"
    steps = [
        ["synth", "--config", cfg, "--out", data],
        ["train-features", "--config", cfg, "--data", data, "--out", root / "feat"],
        ["train-recognizer", "--config", cfg, "--data", data, "--features", feats,
         "--out", root / "rec"],
        ["train-joint", "--mode", "multitask", "--config", cfg, "--data", data,
         "--features", feats, "--out", root / "mt"],
        ["decode", "--checkpoint", root / "rec" / "recognizer.xvck",
         "--data", data / DATA_FILES["target_test"], "--out", root / "dec"],
        ["evaluate", "--refs", data / DATA_FILES["target_test"],
         "--hyps", root / "dec" / "hyps.txt", "--out", root / "dec"],
    ]
    return [main([str(a) for a in step]) for step in steps]


def test_criterion_7_cli_pipeline_is_byte_deterministic(verdict, tmp_path, capsys):
    cfg = tmp_path / "tiny.toml"
    cfg.write_text(TINY)
    codes = _pipeline(tmp_path / "a", cfg) + _pipeline(tmp_path / "b", cfg)
    capsys.readouterr()
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*")
                   if p.is_file() and p.suffix in {".xvck", ".xvds", ".txt"})
    differ = [str(f) for f in files
              if (tmp_path / "a" / f).read_bytes() != (tmp_path / "b" / f).read_bytes()]
    ok = codes == [0] * len(codes) and not differ and len(files) >= 10
    verdict(7, ok, f"exit_codes={codes} compared={len(files)} differing={differ}")


# 8. format round-trips -----------------------------------------------------------------------


def _corruptions(raw):
    flipped = bytearray(raw)
    flipped[len(raw) // 2] ^= 0x5A
    version = bytearray(raw)
    version[4] ^= 0x7F
    cases = [(b"JUNK" + raw[4:], BadMagicError), (bytes(version), VersionError),
             (bytes(flipped), FormatError), (raw + b"\0", ChecksumError),
             (raw[:-4], TruncatedError)]
    cases += [(raw[:n], FormatError) for n in range(len(raw))]
    return cases


def _rejected(loader, raw):
    bad = 0
    for blob, exc in _corruptions(raw):
        try:
            loader(blob)
        except exc:
            continue
        except Exception:
            pass
        bad += 1
    return bad


def test_criterion_8_format_round_trips(verdict, tmp_path):
    r = np.random.default_rng(8)
    f32 = lambda a: a.astype(np.float32).astype(np.float64)  # noqa: E731
    ds = Dataset([Utterance("u1", f32(r.normal(size=(5, 3))), [0, 1, 0], "source",
                            f32(r.normal(size=(5, 2)))),
                  Utterance("u2", f32(r.normal(size=(2, 3))), [1], "source",
                            f32(r.normal(size=(2, 2))))], ["sil", "aa"], "source")
    save_dataset(ds, tmp_path / "d.xvds")
    back = load_dataset(tmp_path / "d.xvds")
    ds_exact = back.label_names == ds.label_names and all(
        u.id == v.id and u.labels == v.labels and np.array_equal(u.frames, v.frames)
        and np.array_equal(u.articulatory, v.articulatory) for u, v in zip(ds, back))

    corpus = synth_multiview(SynthConfig(seed=1, n_source=6, n_target_train=6, n_target_dev=2,
                                         n_target_test=2, acoustic_dim=4, articulatory_dim=3))
    X, y = _seqs(corpus.target_train)
    est = CTCRecognizer(hidden=3, layers=1, epochs=1, random_state=0).fit(X, y)
    ckpt = Checkpoint.from_system(est.system_, epoch=1, dev_per=0.25, meta={"k": "v"})
    save_checkpoint(ckpt, tmp_path / "r.xvck")
    loaded = load_checkpoint(tmp_path / "r.xvck")
    ck_exact = (loaded.spec == ckpt.spec and loaded.epoch == 1 and loaded.dev_per == 0.25
                and loaded.meta == {"k": "v"} and list(loaded.state) == list(ckpt.state)
                and all(np.array_equal(loaded.state[k], v) for k, v in ckpt.state.items()))
    rebuilt = loaded.to_system().state_dict()
    ck_exact = ck_exact and all(np.array_equal(rebuilt[k], v) for k, v in ckpt.state.items())

    ds_bad = _rejected(dataset_from_bytes, dataset_to_bytes(ds))
    ck_bad = _rejected(Checkpoint.from_bytes, ckpt.to_bytes())
    (tmp_path / "broken.xvck").write_bytes(ckpt.to_bytes()[:-9])
    save_dataset(corpus.target_test, tmp_path / "t.xvds")
    code = main(["decode", "--checkpoint", str(tmp_path / "broken.xvck"),
                 "--data", str(tmp_path / "t.xvds"), "--out", str(tmp_path / "dec")])
    no_partial = code == 1 and not (tmp_path / "dec" / "hyps.txt").exists()
    ok = ds_exact and ck_exact and ds_bad == 0 and ck_bad == 0 and no_partial
    verdict(8, ok, f"dataset_exact={ds_exact} checkpoint_exact={ck_exact} "
                   f"unrejected_corruptions dataset={ds_bad} checkpoint={ck_bad} "
                   f"cli_exit_on_corrupt={code} partial_output={not no_partial}")
