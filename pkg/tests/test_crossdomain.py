import math

import numpy as np
import pytest
from scipy.stats import chi2_contingency

from oracles import central_differences, rel_error
from xview import tensor as tn
from xview.crossdomain import (Adapter, ArchitectureConfig, LossWeights, Recognizer,
                               RecognizerConfig, SharingSpec, adaptation_forward, build_model,
                               build_stack, ctc_term, dev_evaluator, joint_recognizers_loss,
                               mixed_minibatch, multitask_loss, train, unsupervised_loss)
from xview.errors import ConfigError, ContractError, TrainingDivergedError
from xview.optim import OptimizerConfig, adam_state, adam_step, sgd_step
from xview.tensor import backward
from xview.variational import LatentDims, extract_features

LAT = LatentDims(shared=2, private_x=1, private_y=1)


def cfg(variant="A_plus_C", hidden=(4,), **kw):
    if variant == "A_plus_D" and "sharing" not in kw:
        kw["sharing"] = SharingSpec("partial", 1)
    return ArchitectureConfig(variant=variant, latent=kw.pop("latent", LAT),
                              encoder_hidden=hidden, decoder_hidden=hidden,
                              target_private_dim=kw.pop("target_private_dim", 1), **kw)


def model(variant="A_plus_C", seed=0, x_dim=3, y_dim=2, **kw):
    return build_model(cfg(variant, **kw), x_dim, y_dim, rng=np.random.default_rng(seed))


def fd_error(loss_fn, params):
    grads = backward(loss_fn(), params)
    numeric = central_differences(lambda: float(loss_fn().data), [p.data for p in params])
    return max(rel_error(grads[p], n) for p, n in zip(params, numeric))


# architecture -----------------------------------------------------------------------


def test_full_sharing_uses_identical_parameter_objects():
    m = model("A_plus_C")
    assert m.q_z_t is m.q_z
    assert all(a is b for a, b in zip(m.q_z.parameters(), m.q_z_t.parameters()))


def test_partial_sharing_duplicates_only_layers_below_split():
    m = model("A_plus_D", hidden=(4, 4), sharing=SharingSpec("partial", 1))
    assert m.q_z.depth == 3
    assert m.q_z_t.layers[0] is not m.q_z.layers[0]
    assert all(a is b for a, b in zip(m.q_z.layers[1:], m.q_z_t.layers[1:]))
    assert len(m.shared_layer_ids()) == 2
    assert len(m.q_z_t.layers) == 3


def test_split_index_beyond_depth_is_config_error():
    with pytest.raises(ConfigError):
        model("A_plus_D", hidden=(4, 4), sharing=SharingSpec("partial", 3))
    with pytest.raises(ConfigError):
        SharingSpec("partial", 0)


def test_partial_sharing_allows_different_target_width():
    m = build_model(cfg("A_plus_D"), 3, 2, xt_dim=5, rng=np.random.default_rng(0))
    assert m.q_z_t.n_in == 5 and m.p_x_t.layers[-1].n_out == 5
    with pytest.raises(ConfigError):
        build_model(cfg("A_plus_C"), 3, 2, xt_dim=5, rng=np.random.default_rng(0))


def test_variant_branch_structure():
    assert model("A_only").q_z_t is None
    assert model("A_plus_B").q_h_t is None
    assert model("A_plus_C").q_h_t is not None
    vv = model("VAEP_plus_VAEP")
    assert vv.p_y is None and vv.q_hy is None


def test_invalid_configs():
    with pytest.raises(ConfigError):
        cfg("A_plus_D", sharing=SharingSpec("full"))
    with pytest.raises(ConfigError):
        cfg("A_plus_C", sharing=SharingSpec("partial", 1))
    with pytest.raises(ConfigError):
        cfg("Z")
    with pytest.raises(ConfigError):
        LossWeights(alpha=1.5)
    with pytest.raises(ConfigError):
        build_model(cfg("A_plus_C"), 3, None, rng=np.random.default_rng(0))
    LossWeights(alpha=0.0, beta=1.0)  # closed interval


def _count(m):
    return sum(p.size for p in m.parameters())


def test_parameter_count_adds_private_branch():
    b, c = model("A_plus_B", seed=1), model("A_plus_C", seed=1)
    private = _count(c.q_h_t)
    # the target decoder also reads the private code: one extra input row
    extra_decoder_rows = c.p_x_t.layers[0].W.shape[1] * 1
    assert _count(c) == _count(b) + private + extra_decoder_rows
    assert _count(model("A_plus_C", seed=1)) == _count(model("A_plus_C", seed=2))


def test_zero_private_dim_matches_plain_target_branch():
    b = model("A_plus_B", seed=3)
    c = model("A_plus_C", seed=3, target_private_dim=0)
    assert [n for n, _ in b.named_parameters()] == [n for n, _ in c.named_parameters()]
    for (_, p), (_, q) in zip(b.named_parameters(), c.named_parameters()):
        np.testing.assert_array_equal(p.data, q.data)
    r = np.random.default_rng(0)
    xS, yS, xT = r.normal(size=(6, 3)), r.normal(size=(6, 2)), r.normal(size=(6, 3))
    opt = OptimizerConfig(lr=1e-2)
    for m in (b, c):
        train(lambda batch, m=m: unsupervised_loss(m, (xS, yS), xT, 0.5,
                                                   np.random.default_rng(1)),
              m.parameters(), opt, 3, lambda e: [None])
    np.testing.assert_array_equal(extract_features(b.target_encoder, xT),
                                  extract_features(c.target_encoder, xT))


# adaptation -----------------------------------------------------------------------------


def test_identity_adapter_equals_plain_features():
    m = model("A_plus_C")
    x = np.random.default_rng(1).normal(size=(5, 3))
    out = adaptation_forward(x, Adapter.identity(3), m.q_z).data
    np.testing.assert_allclose(out, extract_features(m.q_z, x), atol=1e-15)
    assert out.shape == (5, LAT.shared)


def test_adapter_gradient_reaches_adapter_and_encoder():
    m = model("A_plus_C", seed=2)
    ad = Adapter(3, 5, 3, np.random.default_rng(3))
    x = np.random.default_rng(4).normal(size=(4, 3))
    params = ad.parameters() + m.q_z.parameters()

    def loss():
        return tn.sum(tn.square(adaptation_forward(x, ad, m.q_z)))

    grads = backward(loss(), params)
    assert all(np.any(grads[p] != 0) for p in params)
    assert fd_error(loss, params) < 1e-4


def test_adapter_width_mismatch():
    m = model("A_plus_C")
    with pytest.raises(ConfigError):
        adaptation_forward(np.zeros((1, 4)), Adapter(4, 3, 4, np.random.default_rng(0)), m.q_z)


# multitask ---------------------------------------------------------------------------------


def _multitask_setup(seed=0, variant="A_plus_C"):
    r = np.random.default_rng(seed)
    m = model(variant, seed=seed)
    stack = build_stack(LAT.shared, 2, RecognizerConfig(hidden=3, layers=1), r)
    rec = Recognizer(stack, encoder=m.target_encoder)
    xS, yS, xT = r.normal(size=(4, 3)), r.normal(size=(4, 2)), r.normal(size=(4, 3))
    batch_S = (xS, yS) if m.config.two_view else xS
    utts = rec.prepare([r.normal(size=(4, 3)), r.normal(size=(3, 3))])
    return m, rec, batch_S, xT, utts, [[0, 1], [1]]


def test_multitask_alpha_zero_is_ctc_loss():
    m, rec, bS, bT, utts, labels = _multitask_setup()
    total, comps = multitask_loss(bS, bT, utts, labels, m, rec, LossWeights(0.0, 0.5),
                                  np.random.default_rng(0), None)
    assert abs(float(total.data) - float(ctc_term(rec, utts, labels).data)) <= 1e-9
    assert set(comps) == {"vccap", "vaep", "ctc"}


def test_multitask_alpha_one_is_unsupervised_loss():
    m, rec, bS, bT, utts, labels = _multitask_setup()
    total, _ = multitask_loss(bS, bT, utts, labels, m, rec, LossWeights(1.0, 0.3),
                              np.random.default_rng(5), None)
    unsup, _ = unsupervised_loss(m, bS, bT, 0.3, np.random.default_rng(5))
    assert abs(float(total.data) - float(unsup.data)) <= 1e-9


def test_multitask_gradient_matches_finite_differences():
    m, rec, bS, bT, utts, labels = _multitask_setup(seed=1)
    params = list({id(p): p for p in m.parameters() + rec.trainable_parameters()}.values())

    def loss():
        return multitask_loss(bS, bT, utts, labels, m, rec, LossWeights(0.4, 0.6),
                              np.random.default_rng(2), None)[0]

    assert fd_error(loss, params) < 1e-4


def test_multitask_needs_labels():
    m, rec, bS, bT, utts, _ = _multitask_setup()
    with pytest.raises(ContractError):
        multitask_loss(bS, bT, utts, None, m, rec, LossWeights(), np.random.default_rng(0), None)


@pytest.mark.parametrize("beta", [0.0, 1.0])
def test_unsupervised_loss_degenerate_beta(beta):
    m, _, bS, bT, _, _ = _multitask_setup()
    total, comps = unsupervised_loss(m, bS, bT, beta, np.random.default_rng(3))
    keep = "vccap" if beta == 0.0 else "vaep"
    assert abs(float(total.data) - float(comps[keep][1].data)) <= 1e-9


# joint recognisers -------------------------------------------------------------------------


def _joint_setup(seed=0, share=True):
    r = np.random.default_rng(seed)
    rc = RecognizerConfig(hidden=3, layers=2)
    rec_T = Recognizer(build_stack(4, 2, rc, r))
    top = rec_T.stack.layers[-1] if share else None
    rec_S = Recognizer(build_stack(3, 2, rc, r, top=top))
    batch_S = (rec_S.prepare([r.normal(size=(4, 3)), r.normal(size=(3, 3))]), [[0], [1, 0]])
    batch_T = (rec_T.prepare([r.normal(size=(5, 4))]), [[1, 1]])
    return rec_S, rec_T, batch_S, batch_T


def test_shared_top_is_the_same_layer():
    rec_S, rec_T, _, _ = _joint_setup()
    assert rec_S.stack.layers[-1] is rec_T.stack.layers[-1]
    assert rec_S.stack.layers[0] is not rec_T.stack.layers[0]
    assert rec_S.stack.output is not rec_T.stack.output


def test_shared_top_gradient_is_sum_of_domain_gradients():
    rec_S, rec_T, bS, bT = _joint_setup()
    shared = rec_T.stack.layers[-1].parameters()
    total, _ = joint_recognizers_loss(bS, bT, rec_S, rec_T)
    g = backward(total, shared)
    gS = backward(ctc_term(rec_S, *bS), shared)
    gT = backward(ctc_term(rec_T, *bT), shared)
    assert max(np.abs(g[p] - gS[p] - gT[p]).max() for p in shared) <= 1e-9


def test_domain_specific_gradient_equals_standalone_gradient():
    rec_S, rec_T, bS, bT = _joint_setup(seed=1)
    own = rec_S.stack.layers[0].parameters() + rec_S.stack.output.parameters()
    g = backward(joint_recognizers_loss(bS, bT, rec_S, rec_T)[0], own)
    alone = backward(ctc_term(rec_S, *bS), own)
    assert max(np.abs(g[p] - alone[p]).max() for p in own) <= 1e-12


def test_empty_target_batch_reduces_to_source_loss():
    rec_S, rec_T, bS, _ = _joint_setup()
    total, comps = joint_recognizers_loss(bS, ([], []), rec_S, rec_T)
    assert float(total.data) == float(ctc_term(rec_S, *bS).data)
    assert list(comps) == ["ctc_source"]
    with pytest.raises(ContractError):
        joint_recognizers_loss(([], []), ([], []), rec_S, rec_T)


def test_joint_gradient_matches_finite_differences():
    rec_S, rec_T, bS, bT = _joint_setup(seed=2)
    params = list({id(p): p for p in rec_S.parameters() + rec_T.parameters()}.values())
    assert fd_error(lambda: joint_recognizers_loss(bS, bT, rec_S, rec_T)[0], params) < 1e-4


def test_incompatible_shared_top_is_config_error():
    r = np.random.default_rng(0)
    top = build_stack(4, 2, RecognizerConfig(hidden=3, layers=2), r).layers[-1]
    with pytest.raises(ConfigError):
        build_stack(3, 2, RecognizerConfig(hidden=5, layers=2), r, top=top)


def test_shared_update_applies_once_per_step():
    rec_S, rec_T, bS, bT = _joint_setup(seed=3)
    params = list({id(p): p for p in rec_S.parameters() + rec_T.parameters()}.values())
    shared = rec_T.stack.layers[-1].fwd.W
    before = shared.data.copy()
    total, _ = joint_recognizers_loss(bS, bT, rec_S, rec_T)
    g = backward(total, params)
    sgd_step(params, g, 0.1)
    np.testing.assert_allclose(shared.data, before - 0.1 * g[shared], rtol=0, atol=1e-15)


# minibatches ---------------------------------------------------------------------------------


def test_mixed_minibatch_split():
    S, T = np.arange(50), np.arange(100, 180)
    bS, bT = mixed_minibatch(S, T, 200, 0.5, np.random.default_rng(0))
    assert len(bS) == 100 and len(bT) == 100
    assert set(bS) <= set(S) and set(bT) <= set(T)
    bS, bT = mixed_minibatch(S, T, 7, 0.3, np.random.default_rng(0))
    assert (len(bS), len(bT)) == (math.ceil(0.3 * 7), 7 - math.ceil(0.3 * 7))


def test_mixed_minibatch_tuples_stay_aligned():
    x = np.arange(10)
    bS, _ = mixed_minibatch((x, -x), np.arange(5), 10, 0.5, np.random.default_rng(1))
    np.testing.assert_array_equal(bS[1], -bS[0])


def test_mixed_minibatch_is_deterministic():
    a = mixed_minibatch(np.arange(9), np.arange(9), 6, 0.5, np.random.default_rng(4))
    b = mixed_minibatch(np.arange(9), np.arange(9), 6, 0.5, np.random.default_rng(4))
    for u, v in zip(a, b):
        np.testing.assert_array_equal(u, v)


def test_mixed_minibatch_domains_are_independent():
    rng = np.random.default_rng(7)
    table = np.zeros((4, 4))
    for _ in range(10_000):
        bS, bT = mixed_minibatch(np.arange(4), np.arange(4), 2, 0.5, rng)
        table[bS[0], bT[0]] += 1
    assert chi2_contingency(table)[1] > 0.01


def test_mixed_minibatch_errors():
    with pytest.raises(ContractError):
        mixed_minibatch(np.arange(0), np.arange(3), 4, 0.5, np.random.default_rng(0))
    with pytest.raises(ContractError):
        mixed_minibatch(np.arange(3), np.arange(3), 4, 1.0, np.random.default_rng(0))


# optimisers ----------------------------------------------------------------------------------


def test_adam_first_step_value():
    p = tn.Parameter(np.array([0.0]))
    adam_step([p], {p: np.array([1.0])}, adam_state(), OptimizerConfig(lr=0.001))
    assert p.data[0] == pytest.approx(-0.000999999990, abs=1e-15)
    assert p.data[0] == pytest.approx(-0.001 / (1 + 1e-8), abs=1e-18)


def test_adam_zero_gradient_only_decays_moments():
    p = tn.Parameter(np.array([2.0, -1.0]))
    state = adam_state()
    cfg = OptimizerConfig(lr=0.01)
    adam_step([p], {p: np.array([1.0, 1.0])}, state, cfg)
    moved = p.data.copy()
    m, v = state["m"][id(p)].copy(), state["v"][id(p)].copy()
    # a zero gradient still moves along the decayed first moment; with fresh state it does not
    q = tn.Parameter(np.array([2.0, -1.0]))
    adam_step([q], {q: np.zeros(2)}, adam_state(), cfg)
    np.testing.assert_array_equal(q.data, [2.0, -1.0])
    adam_step([p], {p: np.zeros(2)}, state, cfg)
    np.testing.assert_allclose(state["m"][id(p)], 0.9 * m)
    np.testing.assert_allclose(state["v"][id(p)], 0.999 * v)
    assert not np.array_equal(p.data, moved)


def test_sgd_step_is_plain_descent():
    p = tn.Parameter(np.array([1.0, 2.0]))
    g = np.array([0.5, -3.0])
    sgd_step([p], {p: g}, 0.1)
    np.testing.assert_array_equal(p.data, np.array([1.0, 2.0]) - 0.1 * g)


def test_optimizer_config_validation():
    with pytest.raises(ConfigError):
        OptimizerConfig(kind="rmsprop")
    with pytest.raises(ConfigError):
        OptimizerConfig(epochs=0)


# training loop -------------------------------------------------------------------------------


def _recognition_task(seed=0, n=12):
    r = np.random.default_rng(seed)
    X, Y = [], []
    for _ in range(n):
        labels = list(r.integers(0, 3, size=3))
        frames = np.concatenate([np.tile(np.eye(4)[lab + 1], (3, 1)) for lab in labels]
                                + [np.tile(np.eye(4)[0], (1, 1))])
        X.append(frames + 0.1 * r.normal(size=frames.shape))
        Y.append(labels)
    return X, Y


def test_zero_learning_rate_leaves_parameters_and_dev_per_unchanged():
    X, Y = _recognition_task()
    rec = Recognizer(build_stack(4, 3, RecognizerConfig(hidden=4, layers=1),
                                 np.random.default_rng(0)))
    before = {k: v.copy() for k, v in rec.state_dict().items()}
    evaluate = dev_evaluator(rec, X, Y)
    h = train(lambda b: (ctc_term(rec, X[:4], Y[:4]), {}), rec.parameters(),
              OptimizerConfig(lr=0.0), 1, lambda e: [None], evaluate=evaluate, module=rec)
    for k, v in rec.state_dict().items():
        np.testing.assert_array_equal(v, before[k])
    assert h.records[0].dev_per == h.initial_dev_per


def test_best_epoch_is_first_argmin_and_state_restored():
    p = tn.Parameter(np.array([0.0]))

    from xview.layers import Module

    class M(Module):
        def __init__(self):
            self.p = p

    mod = M()
    seq = iter([0.5, 0.2, 0.3, 0.2, 0.9])
    states = []

    def evaluate():
        states.append(float(p.data[0]))
        return next(seq)

    h = train(lambda b: (tn.sum(tn.mul(p, -1.0)), {}), [p], OptimizerConfig("sgd", lr=1.0), 4,
              lambda e: [None], evaluate=evaluate, module=mod)
    assert h.dev_pers == [0.2, 0.3, 0.2, 0.9]
    assert h.best_epoch == 1 and h.best_dev_per == 0.2
    assert float(p.data[0]) == states[1]


def test_divergence_aborts():
    p = tn.Parameter(np.array([1.0]))
    with pytest.raises(TrainingDivergedError):
        train(lambda b: (tn.mul(tn.sum(p), np.inf), {}), [p], OptimizerConfig(), 1,
              lambda e: [None])


def test_training_reduces_dev_per():
    X, Y = _recognition_task(seed=1, n=16)
    rec = Recognizer(build_stack(4, 3, RecognizerConfig(hidden=8, layers=1),
                                 np.random.default_rng(2)))
    rng = np.random.default_rng(3)
    batches = lambda e: [list(range(i, i + 4)) for i in range(0, 12, 4)]  # noqa: E731
    h = train(lambda b: (ctc_term(rec, [X[i] for i in b], [Y[i] for i in b], rng), {}),
              rec.parameters(), OptimizerConfig(lr=0.05), 15, batches,
              evaluate=dev_evaluator(rec, X[12:], Y[12:]), module=rec)
    assert h.best_dev_per < h.initial_dev_per
