import numpy as np
import pytest
from scipy import stats

import policyconv as pc
from policyconv.synthetic import (
    BETA_PRESETS,
    EPSILON_PRESETS,
    SynthConfig,
    _sigmoid,
    apply_deficient_support,
    build_world,
    generate_dataset,
    sample_actions,
    stream,
)


SMALL = SynthConfig(
    n_actions=40,
    n_topics=8,
    d_context=6,
    d_embed=4,
    d_noise=3,
    n_noise_draws=16,
    hidden_width=8,
    seed=3,
)


@pytest.fixture(scope="module")
def world():
    return build_world(SMALL)


def test_world_shapes(world):
    c = SMALL
    assert world.embeddings.vectors.shape == (c.n_actions, c.d_embed)
    assert world.topic_of.shape == (c.n_actions,)
    assert np.all((0 <= world.topic_of) & (world.topic_of < c.n_topics))
    assert world.w1.shape == (c.d_context + c.d_embed + c.d_noise, c.hidden_width)


def test_world_deterministic_per_seed():
    w1, w2 = build_world(SMALL), build_world(SMALL)
    np.testing.assert_array_equal(w1.embeddings.vectors, w2.embeddings.vectors)
    np.testing.assert_array_equal(w1.w1, w2.w1)
    w3 = build_world(SynthConfig(**{**SMALL.__dict__, "seed": 4}))
    assert not np.array_equal(w1.embeddings.vectors, w3.embeddings.vectors)


def test_embeddings_cluster_around_topics():
    # within-topic distances should be smaller than cross-topic ones on average
    hits = 0
    for seed in range(5):
        w = build_world(SynthConfig(**{**SMALL.__dict__, "seed": 100 + seed}))
        d2 = pc.smoothing.pairwise_sq_distances(w.embeddings)
        same = w.topic_of[:, None] == w.topic_of[None, :]
        off_diag = ~np.eye(len(d2), dtype=bool)
        within = d2[same & off_diag]
        across = d2[~same]
        if len(within) and within.mean() < across.mean():
            hits += 1
    assert hits >= 4


def test_reward_matrix_range_and_determinism(world):
    rng = np.random.default_rng(0)
    ctx = rng.standard_normal((7, SMALL.d_context))
    m1 = world.reward_matrix(ctx)
    m2 = world.reward_matrix(ctx, chunk=3)
    assert m1.shape == (7, SMALL.n_actions)
    assert np.all((m1 > 0) & (m1 < 1))
    np.testing.assert_array_equal(m1, m2)
    np.testing.assert_allclose(world.reward_row(ctx[2]), m1[2], rtol=1e-12)


def test_reward_matrix_matches_direct_mlp(world):
    # re-evaluate the network by hand for one (context, action) pair
    ctx = np.random.default_rng(1).standard_normal(SMALL.d_context)
    a = 11
    vals = []
    for eps in world.noise_draws:
        z = np.concatenate([ctx, world.embeddings[a], eps])
        vals.append(_sigmoid(np.tanh(z @ world.w1) @ world.w2))
    assert world.reward_row(ctx)[a] == pytest.approx(np.mean(vals), rel=1e-12)


def test_sampled_rewards_consistent_with_oracle():
    # Monte Carlo mean of noisy rewards should sit near the oracle value.
    # The oracle averages a finite set of noise draws, so compare against a
    # world with enough draws that its own error is negligible.
    big_m = build_world(SynthConfig(**{**SMALL.__dict__, "n_noise_draws": 4096}))
    ctx = np.random.default_rng(2).standard_normal(SMALL.d_context)
    a = 5
    rng = stream(7, "mc")
    draws = big_m.sample_rewards(np.tile(ctx, (20_000, 1)), np.full(20_000, a), rng)
    se = draws.std(ddof=1) / np.sqrt(len(draws))
    oracle_se = draws.std(ddof=1) / np.sqrt(4096)
    assert abs(draws.mean() - big_m.reward_row(ctx)[a]) < 3 * (se + oracle_se)


def test_softmax_beta_zero_is_uniform(world):
    mu = pc.logging_policy(world, BETA_PRESETS["uniform"])
    ctx = np.zeros((3, SMALL.d_context))
    np.testing.assert_allclose(mu.prob_matrix(ctx), 1.0 / SMALL.n_actions)


def test_softmax_large_beta_concentrates():
    w = build_world(SynthConfig(**{**SMALL.__dict__, "n_actions": 10, "n_topics": 5}))
    mu = pc.logging_policy(w, 2000.0)
    ctx = np.random.default_rng(3).standard_normal((4, SMALL.d_context))
    rows = mu.prob_matrix(ctx)
    best = w.reward_matrix(ctx).argmax(axis=1)
    assert np.all(rows[np.arange(4), best] > 0.9)


def test_softmax_negative_beta_prefers_worst(world):
    mu = pc.logging_policy(world, BETA_PRESETS["bad"])
    ctx = np.random.default_rng(4).standard_normal((3, SMALL.d_context))
    rows = mu.prob_matrix(ctx)
    delta = world.reward_matrix(ctx)
    for i in range(3):
        assert rows[i, delta[i].argmin()] > rows[i, delta[i].argmax()]


def test_epsilon_greedy_rows(world):
    pi = pc.target_policy(world, 0.2)
    ctx = np.random.default_rng(5).standard_normal((3, SMALL.d_context))
    rows = pi.prob_matrix(ctx)
    delta = world.reward_matrix(ctx)
    n = SMALL.n_actions
    np.testing.assert_allclose(rows.sum(axis=1), 1.0)
    for i in range(3):
        assert rows[i, delta[i].argmax()] == pytest.approx(0.8 + 0.2 / n)
        others = np.delete(rows[i], delta[i].argmax())
        np.testing.assert_allclose(others, 0.2 / n)


def test_epsilon_greedy_tie_breaks_to_lowest_index():
    table = np.array([[0.3, 0.9, 0.9, 0.1]])
    pi = pc.EpsilonGreedyPolicy(pc.TabularOracle(table), 0.0)
    np.testing.assert_array_equal(pi.prob_row(0), [0.0, 1.0, 0.0, 0.0])


def test_epsilon_one_is_uniform(world):
    pi = pc.target_policy(world, 1.0)
    row = pi.prob_row(np.zeros(SMALL.d_context))
    np.testing.assert_allclose(row, 1.0 / SMALL.n_actions)


def test_sample_actions_uniformity():
    rows = np.full((40_000, 16), 1 / 16)
    draws = sample_actions(rows, np.random.default_rng(9))
    counts = np.bincount(draws, minlength=16)
    _, p = stats.chisquare(counts)
    assert p > 0.001


def test_sample_actions_respects_rows():
    rows = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])
    draws = sample_actions(np.tile(rows, (500, 1)), np.random.default_rng(10))
    assert np.all(draws[0::2] == 1)
    assert np.all(draws[1::2] == 0)


def test_generate_dataset_shapes_and_determinism(world):
    mu = pc.logging_policy(world, BETA_PRESETS["good"])
    ds1 = generate_dataset(world, mu, 64, seed=21)
    ds2 = generate_dataset(world, mu, 64, seed=21)
    ds3 = generate_dataset(world, mu, 64, seed=22)
    assert len(ds1) == 64
    assert ds1.contexts.shape == (64, SMALL.d_context)
    np.testing.assert_array_equal(ds1.actions, ds2.actions)
    np.testing.assert_array_equal(ds1.rewards, ds2.rewards)
    assert not np.array_equal(ds1.actions, ds3.actions)
    assert np.all(ds1.propensities > 0)
    assert np.all((ds1.rewards > 0) & (ds1.rewards < 1))


def test_deficient_support_masks_and_renormalizes(world):
    mu = pc.logging_policy(world, 0.0)
    masked = apply_deficient_support(mu, 0.5, seed=1)
    row = masked.prob_row(np.zeros(SMALL.d_context))
    kept = row > 0
    assert kept.sum() == SMALL.n_actions - int(np.ceil(0.5 * SMALL.n_actions))
    np.testing.assert_allclose(row[kept], 1.0 / kept.sum())
    # the dropped subset is global: same across contexts
    row2 = masked.prob_row(np.ones(SMALL.d_context))
    np.testing.assert_array_equal(row2 > 0, kept)


def test_deficient_support_zero_fraction_is_identity(world):
    mu = pc.logging_policy(world, 1.0)
    assert apply_deficient_support(mu, 0.0, seed=1) is mu


def test_deficient_support_rejects_full_drop(world):
    mu = pc.logging_policy(world, 0.0)
    with pytest.raises(ValueError):
        apply_deficient_support(mu, 1.0, seed=0)


def test_logging_value_increases_with_beta(world):
    ctx = list(np.random.default_rng(6).standard_normal((40, SMALL.d_context)))
    vals = [
        pc.true_value(pc.logging_policy(world, b), world, ctx)
        for b in (-3.0, 0.0, 3.0)
    ]
    assert vals[0] < vals[1] < vals[2]


def test_target_value_decreases_with_epsilon(world):
    ctx = list(np.random.default_rng(7).standard_normal((40, SMALL.d_context)))
    vals = [
        pc.true_value(pc.target_policy(world, e), world, ctx)
        for e in (EPSILON_PRESETS["good"], 0.3, EPSILON_PRESETS["bad"])
    ]
    assert vals[0] > vals[1] > vals[2]


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(n_actions=4, n_topics=8)
    with pytest.raises(ValueError):
        SynthConfig(epsilon=1.5)
    with pytest.raises(ValueError):
        SynthConfig(d_noise=0)


def test_stream_isolation():
    a = stream(5, "x").random(4)
    b = stream(5, "y").random(4)
    c = stream(5, "x").random(4)
    np.testing.assert_array_equal(a, c)
    assert not np.array_equal(a, b)
