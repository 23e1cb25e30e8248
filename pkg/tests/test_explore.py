import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from umbrl import ndgrad as nd
from umbrl.explore import (
    METHODS,
    NORM_MODES,
    EmaNormalizer,
    ExploreConfig,
    RunningRms,
    aps_reward,
    diayn_reward,
    icm_reward,
    knn_entropy,
    knn_entropy_tensor,
    lbs_reward,
    make_normalizer,
    make_reward_source,
    needs_intrinsic_head,
    p2e_reward,
    regress_skill_aps,
    rnd_reward,
    select_skill_diayn,
    unit_normalize,
)
from umbrl.worldmodel import Rollout, WorldModel, WorldModelConfig

# -- brute-force oracles ------------------------------------------------------------


def knn_oracle(query, particles, k, c, skip=None):
    dists = []
    for i, p in enumerate(particles):
        if i == skip:
            continue
        s = 0.0
        for j in range(len(query)):
            t = query[j] - p[j]
            s += t * t
        dists.append(s)
    dists.sort()
    total = 0.0
    for x in dists[:k]:
        total += float(np.log(x + c))  # same log routine as numpy arrays
    return total


def kl_oracle(p, q):
    total = 0.0
    for pf, qf in zip(p, q):
        for a, b in zip(pf, qf):
            if a > 0:
                total += a * math.log(a / b)
    return total


# -- ICM / RND ---------------------------------------------------------------------


def test_icm_examples():
    assert icm_reward([0.0, 0.0], [3.0, 4.0]) == 25.0
    x = np.random.default_rng(0).normal(size=(4, 3))
    np.testing.assert_array_equal(icm_reward(x, x), np.zeros(4))


def test_icm_rnd_match_elementwise_oracle():
    rng = np.random.default_rng(1)
    pred, target = rng.normal(size=(50, 7)), rng.normal(size=(50, 7))
    oracle = [sum((pred[i, j] - target[i, j]) ** 2 for j in range(7)) for i in range(50)]
    np.testing.assert_allclose(icm_reward(pred, target), oracle, atol=1e-12)
    np.testing.assert_allclose(rnd_reward(pred, target), oracle, atol=1e-12)


# -- P2E -------------------------------------------------------------------------------


def test_p2e_examples():
    assert p2e_reward(np.array([[0.0], [2.0]])) == 1.0
    same = np.tile(np.random.default_rng(0).normal(size=(1, 6, 4)), (5, 1, 1))
    np.testing.assert_array_equal(p2e_reward(same), np.zeros(6))
    with pytest.raises(ValueError):
        p2e_reward(np.zeros((1, 3, 2)))


def test_p2e_matches_brute_force_variance():
    rng = np.random.default_rng(2)
    preds = rng.normal(size=(5, 20, 3))
    oracle = []
    for n in range(20):
        per_dim = []
        for d in range(3):
            vals = preds[:, n, d]
            mu = sum(vals) / 5
            per_dim.append(sum((v - mu) ** 2 for v in vals) / 5)
        oracle.append(sum(per_dim) / 3)
    np.testing.assert_allclose(p2e_reward(preds), oracle, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31 - 1), st.booleans())
def test_p2e_zero_iff_members_agree(K, seed, agree):
    rng = np.random.default_rng(seed)
    base = rng.normal(size=(1, 4, 3))
    preds = np.tile(base, (K, 1, 1))
    if not agree:
        preds[rng.integers(K), rng.integers(4)] += rng.uniform(0.1, 1.0)
    r = p2e_reward(preds)
    if agree:
        assert np.all(r == 0.0)
    else:
        assert np.any(r > 1e-12)


# -- LBS -------------------------------------------------------------------------------


def test_lbs_examples():
    post = np.array([[[0.9, 0.1]]])
    prior = np.array([[[0.5, 0.5]]])
    expected = 0.9 * math.log(1.8) + 0.1 * math.log(0.2)
    assert abs(lbs_reward(post, prior)[0] - expected) < 1e-12
    assert lbs_reward(post, post)[0] == 0.0
    two = lbs_reward(np.tile(post, (1, 2, 1)), np.tile(prior, (1, 2, 1)))[0]
    assert abs(two - 2 * expected) < 1e-12


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 4), st.integers(2, 5))
def test_lbs_matches_closed_form_and_nonnegative(seed, L, C):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(C), size=L)
    q = rng.dirichlet(np.ones(C), size=L)
    got = lbs_reward(p[None], q[None])[0]
    assert abs(got - kl_oracle(p, q)) < 1e-12
    assert got >= 0.0


# -- kNN particle entropy ------------------------------------------------------------------


def test_knn_unit_distance():
    assert knn_entropy(np.zeros(2), np.array([[1.0, 0.0]]), k=1, c=0.0) == 0.0


def test_knn_matches_oracle_200_particles():
    rng = np.random.default_rng(3)
    particles = rng.normal(size=(200, 5))
    query = rng.normal(size=5)
    assert knn_entropy(query, particles, 12) == knn_oracle(query, particles, 12, 1e-6)


def test_knn_fuzz_1000_exact():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        n = int(rng.integers(1, 80))
        d = int(rng.integers(1, 16))
        k = int(rng.integers(1, n + 1))
        scale = rng.choice([1e-4, 1.0, 1e3])
        particles = rng.normal(size=(n, d)) * scale
        query = rng.normal(size=d) * scale
        assert knn_entropy(query, particles, k) == knn_oracle(query, particles, k, 1e-6)


def test_knn_batch_exclude_self_matches_oracle():
    rng = np.random.default_rng(5)
    pts = rng.normal(size=(30, 4))
    got = knn_entropy(pts, pts, k=5, exclude_self=True)
    for i in range(30):
        assert got[i] == knn_oracle(pts[i], pts, 5, 1e-6, skip=i)


def test_knn_duplicate_query_lowers_reward():
    rng = np.random.default_rng(6)
    particles = rng.normal(size=(20, 3))
    query = rng.normal(size=3)
    before = knn_entropy(query, particles, 4)
    after = knn_entropy(query, np.vstack([particles, query]), 4)
    assert after < before


def test_knn_too_few_particles():
    with pytest.raises(ValueError):
        knn_entropy(np.zeros(2), np.zeros((3, 2)), k=4)
    with pytest.raises(ValueError):
        knn_entropy(np.zeros((3, 2)), np.zeros((3, 2)), k=3, exclude_self=True)


def test_knn_tensor_values_and_gradient_route():
    rng = np.random.default_rng(7)
    pts = nd.Parameter(rng.normal(size=(15, 3)))
    out = knn_entropy_tensor(pts, k=4, c=1e-6)
    np.testing.assert_allclose(out.data, knn_entropy(pts.data, pts.data, 4, 1e-6, exclude_self=True), atol=1e-12)
    # neighbours are constants: the gradient of row i only involves row i
    g = nd.backward(out[0], [pts])[pts]
    assert np.all(g[1:] == 0.0) and np.any(g[0] != 0.0)


# -- DIAYN / APS ------------------------------------------------------------------------------


def test_diayn_examples():
    W = 16
    uniform = np.log(np.full((W, W), 1.0 / W))
    r = diayn_reward(uniform, np.eye(W))
    np.testing.assert_allclose(r, np.full(W, math.log(1 / 16)), atol=1e-15)
    assert r[0] == pytest.approx(-2.7726, abs=1e-4)
    perfect = np.log(np.array([[1.0, 1e-300]]))
    assert diayn_reward(perfect, np.array([[1.0, 0.0]]))[0] == 0.0
    confs = np.linspace(0.1, 0.99, 20)
    rs = [diayn_reward(np.log([[c, 1 - c]]), np.array([[1.0, 0.0]]))[0] for c in confs]
    assert np.all(np.diff(rs) > 0)


def test_aps_examples():
    w = unit_normalize(np.array([1.0, 2.0, -2.0]))
    assert aps_reward(0.0, w, w) == pytest.approx(1.0, abs=1e-15)
    others = unit_normalize(np.random.default_rng(0).normal(size=(50, 3)))
    assert np.all(aps_reward(0.0, others, w) <= 1.0 + 1e-15)
    same = np.zeros((10, 3))
    ent = knn_entropy(same, same, k=4, c=1e-6, exclude_self=True)
    np.testing.assert_allclose(ent, 4 * math.log(1e-6), atol=1e-12)


def test_aps_total_is_sum_of_terms():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(25, 4))
    feats = unit_normalize(rng.normal(size=(25, 6)))
    w = unit_normalize(rng.normal(size=6))
    ent = np.array([knn_oracle(pts[i], pts, 12, 1e-6, skip=i) for i in range(25)])
    align = np.array([sum(feats[i, j] * w[j] for j in range(6)) for i in range(25)])
    got = aps_reward(knn_entropy(pts, pts, 12, exclude_self=True), feats, w)
    np.testing.assert_allclose(got, ent + align, atol=1e-12)


# -- normalizers --------------------------------------------------------------------------------


def test_norm_mode_table():
    assert {m for m, v in NORM_MODES.items() if v == "ema"} == {"icm", "lbs", "p2e", "apt", "diayn"}
    assert {m for m, v in NORM_MODES.items() if v == "rnd_native"} == {"rnd"}
    assert NORM_MODES["aps"] == "none"
    assert set(NORM_MODES) == set(METHODS)
    assert isinstance(make_normalizer("ema"), EmaNormalizer)
    assert isinstance(make_normalizer("rnd_native"), RunningRms)
    with pytest.raises(ValueError):
        make_normalizer("zscore")


def test_ema_converges_within_200():
    norm = EmaNormalizer()
    c = 3.7
    for n in range(1, 201):
        out = norm(np.full(8, c))
        oracle = 1.0 / (1.0 - 0.95**n)  # scale_n = c (1 - 0.95^n)
        assert out[0] == pytest.approx(oracle, rel=1e-12)
        assert norm.scale > 0
    assert abs(out[0] - 1.0) < 1e-3


def test_ema_zero_and_scale_equivariance():
    norm = EmaNormalizer()
    np.testing.assert_array_equal(norm(np.zeros(5)), np.zeros(5))
    rng = np.random.default_rng(0)
    batches = [rng.normal(size=16) for _ in range(300)]
    a, b = EmaNormalizer(), EmaNormalizer()
    for x in batches:
        ya, yb = a(x), b(10 * x)
    np.testing.assert_allclose(ya, yb, rtol=1e-12)


def test_running_rms_constant_and_recurrence():
    rms = RunningRms()
    out = [rms(np.full(4, 2.5))[0] for _ in range(50)]
    np.testing.assert_allclose(out, 1.0, rtol=1e-12)
    rng = np.random.default_rng(1)
    rms = RunningRms()
    seen = []
    for _ in range(20):
        x = rng.normal(size=int(rng.integers(1, 9)))
        seen.extend(x.tolist())
        y = rms(x)
        oracle = x / math.sqrt(sum(v * v for v in seen) / len(seen))
        np.testing.assert_allclose(y, oracle, rtol=1e-12)


def test_normalizer_state_roundtrip():
    for mode in ("ema", "rnd_native", "none"):
        a = make_normalizer(mode)
        a(np.array([1.0, 3.0]))
        b = make_normalizer(mode)
        b.load(a.state())
        assert b.factor() == a.factor()


# -- skill selection ----------------------------------------------------------------------------


def test_select_skill_diayn_examples():
    T, W = 40, 16
    rng = np.random.default_rng(0)
    probs = rng.dirichlet(np.ones(W), size=T)
    labels = probs.argmax(1)
    onehot = np.eye(W)[labels]
    rewards = np.where(labels == 3, 1.0, 0.0)
    if not np.any(labels == 3):
        onehot[0] = np.eye(W)[3]
        rewards[0] = 1.0
    assert select_skill_diayn(onehot, rewards) == 3
    assert select_skill_diayn(np.full((T, W), 1.0 / W), rng.normal(size=T)) == 0
    with pytest.raises(ValueError):
        select_skill_diayn(np.zeros((3, 4)), np.zeros(2))


def test_select_skill_diayn_exhaustive_toy():
    """Skill w walks to region w; a perfect discriminator labels regions."""
    region_reward = np.array([0.2, -1.0, 0.9, 0.4])
    rng = np.random.default_rng(1)

    def episode(skill, length=10):
        visited = np.where(rng.random(length) < 0.8, skill, rng.integers(4, size=length))
        return visited, region_reward[visited] + rng.normal(scale=0.05, size=length)

    states, rewards = [], []
    exhaustive = []
    for w in range(4):
        s, r = episode(w)
        states.append(s)
        rewards.append(r)
    states = np.concatenate(states)
    rewards = np.concatenate(rewards)
    probs = np.eye(4)[states]
    for w in range(4):
        exhaustive.append(rewards[states == w].mean())
    assert select_skill_diayn(probs, rewards) == int(np.argmax(exhaustive)) == 2


def test_regress_skill_aps_recovers_direction():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(100, 8))
    w_star = rng.normal(size=8) * 3
    w, info = regress_skill_aps(X, X @ w_star)
    np.testing.assert_allclose(w, w_star / np.linalg.norm(w_star), atol=1e-8)
    assert not info["ridge_fallback"] and not info["basis_fallback"]
    w2, _ = regress_skill_aps(X, 7.5 * (X @ w_star))
    np.testing.assert_allclose(w2, w, atol=1e-12)


def test_regress_skill_aps_degenerate():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(20, 4))
    w, info = regress_skill_aps(X, np.zeros(20))
    np.testing.assert_array_equal(w, [1.0, 0.0, 0.0, 0.0])
    assert info["basis_fallback"]
    X[:, 3] = X[:, 2]
    w, info = regress_skill_aps(X, X[:, 0])
    assert info["ridge_fallback"] and info["rank"] == 3
    assert abs(np.linalg.norm(w) - 1.0) < 1e-12
    with pytest.raises(ValueError):
        regress_skill_aps(X[:3], np.zeros(3))


# -- reward sources ----------------------------------------------------------------------------


def _model(method, seed=0):
    cfg = WorldModelConfig(deter=6, stoch=2, classes=3, embed=5, hidden=10, layers=1,
                           intrinsic_head=needs_intrinsic_head(method))
    return WorldModel(4, 2, cfg, np.random.default_rng(seed))


def _source(method, seed=0, **kw):
    model = _model(method, seed)
    cfg = ExploreConfig(method=method, skills=4, ensemble=3, knn_k=3, hidden=10, layers=1, **kw)
    return model, make_reward_source(cfg, model, np.random.default_rng(seed + 1))


def _random_rollout(model, rng, H, N, scale=1.0):
    F, D = model.cfg.feat_width, model.cfg.deter
    feats = rng.normal(size=(H + 1, N, F)) * scale
    return Rollout(feats=nd.Tensor(feats), actions=nd.Tensor(rng.uniform(-1, 1, size=(H, N, 2))),
                   deter=nd.Tensor(feats[..., :D]))


def _batch(rng, B=3, T=5):
    is_first = np.zeros((B, T), dtype=bool)
    is_first[:, 0] = True
    is_first[0, 3] = True
    return {"obs": rng.normal(size=(B, T, 4)), "action": rng.uniform(-1, 1, size=(B, T, 2)),
            "reward": np.zeros((B, T)), "is_first": is_first}


def test_explore_config_rejects_unknown():
    with pytest.raises(ValueError):
        ExploreConfig(method="proto")


def test_head_methods_need_head():
    model = WorldModel(4, 2, WorldModelConfig(deter=6, stoch=2, classes=3, embed=5, hidden=10, layers=1),
                       np.random.default_rng(0))
    with pytest.raises(ValueError, match="intrinsic-reward head"):
        make_reward_source(ExploreConfig(method="icm"), model, np.random.default_rng(0))


@pytest.mark.parametrize("method", METHODS)
def test_source_finite_on_10k_fuzz(method):
    model, src = _source(method)
    rng = np.random.default_rng(11)
    for scale in (1e-3, 1.0, 1e3):
        rollout = _random_rollout(model, rng, H=10, N=1000, scale=scale)
        ctx = src.sample_context(rng, 1000)
        with nd.no_grad():
            r = src.imagined_reward(model, rollout, ctx)
        assert r.shape == (10, 1000)
        assert np.all(np.isfinite(r.data))


@pytest.mark.parametrize("method", METHODS)
def test_source_declared_properties(method):
    model, src = _source(method)
    assert src.method == method
    assert src.norm_mode == NORM_MODES[method]
    assert src.uses_head == needs_intrinsic_head(method)
    expected_repr = {"icm": "embedding", "rnd": "observation", "random": "none"}.get(method, "latent")
    assert src.representation == expected_repr
    if method == "random":
        assert src.modules() == {}
        assert src.train(model, _batch(np.random.default_rng(0)), None, None) == {}


@pytest.mark.parametrize("method", [m for m in METHODS if m != "random"])
def test_source_train_step_and_state_roundtrip(method):
    model, src = _source(method)
    rng = np.random.default_rng(2)
    batch = _batch(rng)
    out = model.observe(batch["obs"], batch["action"], batch["is_first"], rng)
    metrics = src.train(model, batch, out, rng)
    rollout = _random_rollout(model, rng, H=4, N=6)
    ctx = src.sample_context(rng, 6)
    metrics.update(src.train_on_rollout(rollout, ctx))
    assert all(np.isfinite(v) for v in metrics.values())
    src.imagined_reward(model, rollout, ctx)
    model2, src2 = _source(method, seed=5)
    src2.load_state_dict(src.state_dict())
    for k, v in src.state_dict().items():
        np.testing.assert_array_equal(src2.state_dict()[k], v)


def test_rnd_target_frozen_over_1000_steps():
    model, src = _source("rnd")
    target0 = {k: v.tobytes() for k, v in src.target.state_dict().items()}
    pred0 = src.predictor.state_dict()
    rng = np.random.default_rng(0)
    batch = _batch(rng, B=2, T=4)
    out = model.observe(batch["obs"], batch["action"], batch["is_first"], rng)
    for _ in range(1000):
        src.batch_rewards(model, batch, out)
    assert {k: v.tobytes() for k, v in src.target.state_dict().items()} == target0
    assert any(np.any(pred0[k] != v) for k, v in src.predictor.state_dict().items())


def test_rnd_zero_when_predictor_equals_target():
    model, src = _source("rnd")
    src.predictor.copy_from(src.target)
    batch = _batch(np.random.default_rng(0))
    obs = batch["obs"]
    raw = rnd_reward(src.predictor(nd.Tensor(obs)).data, src.target(nd.Tensor(obs)).data)
    np.testing.assert_array_equal(raw, 0.0)


def test_icm_batch_rewards_mask_and_oracle():
    model, src = _source("icm")
    rng = np.random.default_rng(3)
    batch = _batch(rng)
    out = model.observe(batch["obs"], batch["action"], batch["is_first"], rng)
    fm_before = src.forward_model.state_dict()
    raw, mask, _ = src.batch_rewards(model, batch, out)
    assert not mask[:, 0].any() and not mask[0, 3]
    assert mask[1, 3]
    # recompute with the pre-update forward model
    src.forward_model.load_state_dict(fm_before)
    e = out.embed.data
    x = np.concatenate([e[1, 1], batch["action"][1, 2]])
    pred = src.forward_model(nd.Tensor(x[None])).data[0]
    assert raw[1, 2] == pytest.approx(icm_reward(pred, e[1, 2]), abs=1e-12)
    assert raw[0, 3] == 0.0


def test_lbs_batch_rewards_match_closed_form():
    model, src = _source("lbs")
    rng = np.random.default_rng(4)
    batch = _batch(rng)
    out = model.observe(batch["obs"], batch["action"], batch["is_first"], rng)
    raw, _, _ = src.batch_rewards(model, batch, out)
    post = nd.softmax(out.post_logits).data
    prior = nd.softmax(out.prior_logits).data
    assert raw[2, 4] == pytest.approx(kl_oracle(post[2, 4], prior[2, 4]), abs=1e-12)
    assert np.all(raw >= 0)


def test_p2e_imagined_matches_member_variance():
    model, src = _source("p2e")
    rollout = _random_rollout(model, np.random.default_rng(5), H=3, N=4)
    raw = src.raw_imagined(model, rollout, None).data
    x = nd.concat([rollout.feats[:-1], rollout.actions])
    preds = np.stack([m(x).data for m in src.members])
    np.testing.assert_allclose(raw, p2e_reward(preds), atol=1e-12)


def test_apt_imagined_matches_per_step_oracle():
    model, src = _source("apt")
    rollout = _random_rollout(model, np.random.default_rng(6), H=2, N=8)
    raw = src.raw_imagined(model, rollout, None).data
    deter = rollout.deter.data
    for t in range(2):
        for i in range(8):
            assert raw[t, i] == pytest.approx(knn_oracle(deter[t + 1, i], deter[t + 1], 3, 1e-6, skip=i), abs=1e-12)


def test_skill_contexts():
    _, diayn = _source("diayn")
    ctx = diayn.sample_context(np.random.default_rng(0), 50)
    assert np.all(ctx.sum(1) == 1.0) and set(np.unique(ctx)) == {0.0, 1.0}
    _, aps = _source("aps")
    ctx = aps.sample_context(np.random.default_rng(0), 50)
    np.testing.assert_allclose(np.linalg.norm(ctx, axis=1), 1.0, atol=1e-12)
    assert aps.sample_context(np.random.default_rng(0)).shape == (4,)


def test_exploration_network_grad_checks():
    rng = np.random.default_rng(0)
    for method, attr in (("icm", "forward_model"), ("rnd", "predictor"), ("diayn", "discriminator"),
                         ("aps", "features")):
        model, src = _source(method)
        net = getattr(src, attr)
        assert nd.grad_check(net, rng.normal(size=(3, net.widths[0]))) < 1e-4, method
    model, src = _source("p2e")
    for m in src.members:
        assert nd.grad_check(m, rng.normal(size=(3, m.widths[0]))) < 1e-4
