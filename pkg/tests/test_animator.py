import numpy as np
import pytest

from courtside.actiontext import AggregatorConfig, Vocabulary, init_aggregator
from courtside.animator import (
    AnimationModel,
    ConditioningBundle,
    EpisodeData,
    TemporalModelConfig,
    TrainConfig,
    autoregressive_extend,
    build_schedule,
    ddim_grid,
    ddim_step,
    ddpm_step,
    draw_example,
    estimate_noise,
    forward_sample,
    init_temporal_model,
    masked_noise_loss,
    sample,
    sample_many,
    train,
    training_step,
    upsample_framerate,
)
from courtside.layers import weight_demodulate
from courtside.numerics import Tape, Tensor, backward, make_rng, max_grad_error
from courtside.numerics import mul as t_mul
from courtside.stateseq import (
    ActionTrack,
    MaskPair,
    PropertyLayout,
    PropertySpec,
    StateSequence,
    expand_state_mask,
    random_masks,
)


def tiny_layout(with_actions=True):
    return PropertyLayout(
        properties=(
            PropertySpec("pos", "a", 2, "position"),
            PropertySpec("ht", "b", 1, "other"),
        ),
        actionable=("a",) if with_actions else (),
    )


def tiny_model(seed=0, with_actions=True):
    layout = tiny_layout(with_actions)
    cfg = TemporalModelConfig(
        layers=1, heads=2, width=16, rel_clip=4,
        step_embed_dim=8, rate_embed_dim=8, mask_bins=4, text_dim=8,
    )
    text_cfg = AggregatorConfig(layers=1, heads=2, width=8, out_dim=8, max_tokens=8)
    vocab = Vocabulary.from_corpus(["left", "right"])
    rng = make_rng(seed, stream=9)
    return AnimationModel(
        layout=layout,
        cfg=cfg,
        text_cfg=text_cfg,
        vocab=vocab,
        params=init_temporal_model(layout, cfg, rng),
        text_params=init_aggregator(vocab.size, text_cfg, rng),
    )


def random_bundle(layout, t, rng, framerate=4.0):
    masks = random_masks(t, layout.num_properties, layout.num_actionable, rng)
    m_exp = expand_state_mask(masks.m_state, layout)
    values = (rng.standard_normal((t, layout.state_dim)).astype(np.float32) * m_exp).astype(np.float32)
    words = ("left", "right")
    labels = [
        [words[(ai + ti) % 2] if masks.m_action[ai, ti] == 1.0 else "" for ti in range(t)]
        for ai in range(layout.num_actionable)
    ]
    return ConditioningBundle(
        s_c=StateSequence(layout, values, framerate),
        a_c=ActionTrack(layout, labels),
        masks=masks,
        framerate=framerate,
    )


# --- schedule ---------------------------------------------------------------


def test_schedule_first_step_product():
    sched = build_schedule(10, 1e-4, 0.02)
    assert sched.alpha_bar[0] == 1.0 - 1e-4
    assert sched.alpha_bar_at(0) == 1.0


def test_schedule_terminal_levels():
    full = build_schedule(1000, 1e-4, 0.02)
    assert abs(full.alpha_bar[-1] / 4.0e-5 - 1.0) < 0.10
    desk = build_schedule()
    assert desk.num_steps == 200
    assert abs(desk.alpha_bar[-1] / 4.0e-5 - 1.0) < 0.10


def test_schedule_monotone_and_posterior_bounds():
    rng = make_rng(11)
    for _ in range(25):
        k = int(rng.integers(2, 60))
        b0 = float(rng.uniform(1e-5, 1e-2))
        b1 = float(rng.uniform(b0, 0.3))
        sched = build_schedule(k, b0, b1)
        assert np.all(np.diff(sched.alpha_bar) < 0.0)
        assert np.all(sched.beta > 0.0) and np.all(sched.beta < 1.0)
        assert sched.posterior_var[0] == 0.0
        assert np.all(sched.posterior_var[1:] > 0.0)
        assert np.all(sched.posterior_var[1:] <= sched.beta[1:] + 1e-15)


def test_schedule_rejects_bad_ranges():
    with pytest.raises(ValueError):
        build_schedule(0, 1e-4, 0.02)
    with pytest.raises(ValueError):
        build_schedule(10, 0.0, 0.02)
    with pytest.raises(ValueError):
        build_schedule(10, 0.05, 0.02)
    with pytest.raises(ValueError):
        build_schedule(10, 1e-4, 1.0)


# --- forward process --------------------------------------------------------


def test_forward_sample_endpoints():
    import math

    sched = build_schedule(20, 1e-3, 0.1)
    x0 = np.arange(6, dtype=np.float32).reshape(2, 3)
    k = 7
    ab = sched.alpha_bar_at(k)
    assert np.array_equal(forward_sample(x0, k, np.zeros_like(x0), sched), np.float32(math.sqrt(ab)) * x0)
    eps = np.ones_like(x0)
    assert np.allclose(forward_sample(np.zeros_like(x0), k, eps, sched), math.sqrt(1.0 - ab) * eps)


def test_forward_sample_unit_variance_for_unit_data():
    sched = build_schedule()
    rng = make_rng(3)
    k = sched.num_steps // 2
    x0 = rng.standard_normal(100_000)
    eps = rng.standard_normal(100_000)
    xk = forward_sample(x0, k, eps, sched)
    assert abs(xk.var() - 1.0) < 0.02


def test_forward_sample_moments_fixed_x0():
    sched = build_schedule()
    rng = make_rng(4)
    n = 100_000
    for k in (1, sched.num_steps // 2, sched.num_steps):
        ab = sched.alpha_bar_at(k)
        x0 = np.full(n, 0.7)
        xk = forward_sample(x0, k, rng.standard_normal(n), sched)
        target_mean = np.sqrt(ab) * 0.7
        target_var = 1.0 - ab
        se_mean = np.sqrt(target_var / n)
        se_var = target_var * np.sqrt(2.0 / (n - 1))
        assert abs(xk.mean() - target_mean) <= 3.0 * se_mean + 1e-12
        assert abs(xk.var() - target_var) <= 3.0 * se_var + 1e-12


def test_forward_sample_rejects_bad_inputs():
    sched = build_schedule(10, 1e-4, 0.02)
    x = np.zeros(3)
    with pytest.raises(ValueError):
        forward_sample(x, 0, x, sched)
    with pytest.raises(ValueError):
        forward_sample(x, 11, x, sched)
    with pytest.raises(ValueError):
        forward_sample(x, 5, np.zeros(4), sched)


# --- weight demodulation ----------------------------------------------------


def test_demodulate_known_row():
    w = Tensor(np.array([[3.0, 4.0]], dtype=np.float32))
    out = weight_demodulate(w, Tensor(np.ones(2, dtype=np.float32)))
    assert np.allclose(out.data, [[0.6, 0.8]], atol=1e-6)


def test_demodulate_scale_invariance():
    rng = make_rng(5)
    w = Tensor(rng.standard_normal((4, 6)))
    style = rng.uniform(0.5, 2.0, size=6)
    a = weight_demodulate(w, Tensor(style)).data
    b = weight_demodulate(w, Tensor(style * 3.7)).data
    assert np.allclose(a, b, atol=1e-6)


def test_demodulate_unit_rows_fixed_point():
    rng = make_rng(6)
    w = rng.standard_normal((3, 5))
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    out = weight_demodulate(Tensor(w), Tensor(np.ones(5)))
    assert np.allclose(out.data, w, atol=1e-6)


# --- reverse steps ----------------------------------------------------------


def gaussian_oracle_eps(x, k, sched, mu0, sigma0):
    ab = sched.alpha_bar_at(k)
    return np.sqrt(1.0 - ab) * (x - np.sqrt(ab) * mu0) / (ab * sigma0**2 + 1.0 - ab)


def run_ddpm_oracle(sched, seed, n=10_000, dim=8, mu0=2.0, sigma0=1.0):
    rng = make_rng(seed)
    x = rng.standard_normal((n, dim))
    for k in range(sched.num_steps, 0, -1):
        x = ddpm_step(x, gaussian_oracle_eps(x, k, sched, mu0, sigma0), k, sched, rng)
    return x


def test_ddpm_final_step_has_no_noise():
    sched = build_schedule(10, 1e-4, 0.05)
    x = np.linspace(-1, 1, 8)
    eps_hat = np.full(8, 0.3)
    out1 = ddpm_step(x, eps_hat, 1, sched, make_rng(1))
    out2 = ddpm_step(x, eps_hat, 1, sched, make_rng(2))
    assert np.array_equal(out1, out2)
    beta, ab = sched.beta[0], sched.alpha_bar[0]
    mu = (x - beta / np.sqrt(1 - ab) * eps_hat) / np.sqrt(1 - beta)
    assert np.allclose(out1, mu)


def test_ddpm_vanishing_beta_keeps_state():
    sched = build_schedule(5, 1e-9, 1e-9)
    x = np.linspace(-2, 2, 16)
    for k in (1, 3, 5):
        out = ddpm_step(x, np.zeros_like(x), k, sched, make_rng(7))
        assert np.allclose(out, x, atol=1e-3)


def test_ddpm_rejects_bad_step():
    sched = build_schedule(5, 1e-4, 0.02)
    x = np.zeros(3)
    with pytest.raises(ValueError):
        ddpm_step(x, x, 0, sched, make_rng(0))
    with pytest.raises(ValueError):
        ddpm_step(x, x, 6, sched, make_rng(0))


def test_gaussian_oracle_ddpm_recovers_population():
    sched = build_schedule()
    for seed in (101, 202, 303):
        x = run_ddpm_oracle(sched, seed)
        assert abs(x.mean() - 2.0) < 0.05
        assert abs(x.std() - 1.0) < 0.05


def test_gaussian_oracle_ddim_matches_ddpm():
    sched = build_schedule()
    ref = run_ddpm_oracle(sched, 404)
    rng = make_rng(505)
    x = rng.standard_normal((10_000, 8))
    grid = ddim_grid(sched.num_steps, 50)
    for k, k_next in zip(grid[:-1], grid[1:]):
        x = ddim_step(x, gaussian_oracle_eps(x, k, sched, 2.0, 1.0), k, k_next, sched)
    assert abs(x.mean() - ref.mean()) < 0.1
    assert abs(x.std() - ref.std()) < 0.1


def test_ddim_inverts_forward_with_exact_noise():
    sched = build_schedule(50, 1e-4, 0.05)
    rng = make_rng(8)
    x0 = rng.standard_normal((4, 5))
    eps = rng.standard_normal((4, 5))
    for k in (1, 25, 50):
        xk = forward_sample(x0, k, eps, sched)
        assert np.allclose(ddim_step(xk, eps, k, 0, sched), x0, atol=1e-5)


def test_ddim_rejects_bad_order():
    sched = build_schedule(10, 1e-4, 0.02)
    x = np.zeros(2)
    with pytest.raises(ValueError):
        ddim_step(x, x, 3, 3, sched)
    with pytest.raises(ValueError):
        ddim_step(x, x, 3, 5, sched)
    with pytest.raises(ValueError):
        ddim_step(x, x, 11, 0, sched)


def test_ddim_grid_shape():
    grid = ddim_grid(200, 50)
    assert grid[0] == 200 and grid[-1] == 0
    assert len(grid) == 51
    assert all(a > b for a, b in zip(grid, grid[1:]))
    assert ddim_grid(10, 10) == list(range(10, -1, -1))


# --- noise estimator --------------------------------------------------------


def estimator_inputs(model, b=2, t=4, seed=12):
    rng = make_rng(seed)
    layout = model.layout
    p, a, d = layout.num_properties, layout.num_actionable, layout.state_dim
    m_state = (rng.random((b, p, t)) < 0.5).astype(np.float32)
    m_action = (rng.random((b, a, t)) < 0.5).astype(np.float32)
    m_exp = expand_state_mask(m_state, layout)
    s_noisy = rng.standard_normal((b, t, d)).astype(np.float32) * (1.0 - m_exp)
    s_cond = rng.standard_normal((b, t, d)).astype(np.float32) * m_exp
    a_emb = rng.standard_normal((b, a, t, model.cfg.text_dim)).astype(np.float32)
    a_emb *= m_action[..., None]
    k = rng.integers(1, 9, size=b)
    rates = rng.uniform(1.0, 8.0, size=b)
    return s_noisy, s_cond, m_state, a_emb, m_action, k, rates


def test_estimator_shape_and_determinism():
    model = tiny_model()
    args = estimator_inputs(model)
    out1 = estimate_noise(model.params, model.cfg, model.layout, *args)
    out2 = estimate_noise(model.params, model.cfg, model.layout, *args)
    assert out1.shape == (2, 4, model.layout.state_dim)
    assert np.array_equal(out1.data, out2.data)


def test_estimator_relative_shift_invariance():
    model = tiny_model()
    s_noisy, s_cond, m_state, a_emb, m_action, k, rates = estimator_inputs(model)
    t = s_noisy.shape[1]
    base = estimate_noise(
        model.params, model.cfg, model.layout,
        s_noisy, s_cond, m_state, a_emb, m_action, k, rates,
        t_index=np.arange(t),
    )
    shifted = estimate_noise(
        model.params, model.cfg, model.layout,
        s_noisy, s_cond, m_state, a_emb, m_action, k, rates,
        t_index=np.arange(t) + 7,
    )
    assert np.allclose(base.data, shifted.data, atol=1e-5)


def test_estimator_without_actionable_objects():
    model = tiny_model(with_actions=False)
    b, t, d = 2, 4, model.layout.state_dim
    rng = make_rng(13)
    m_state = (rng.random((b, 2, t)) < 0.5).astype(np.float32)
    m_exp = expand_state_mask(m_state, model.layout)
    s_noisy = rng.standard_normal((b, t, d)).astype(np.float32) * (1.0 - m_exp)
    s_cond = rng.standard_normal((b, t, d)).astype(np.float32) * m_exp
    a_emb = np.zeros((b, 0, t, model.cfg.text_dim), dtype=np.float32)
    m_action = np.zeros((b, 0, t), dtype=np.float32)
    out = estimate_noise(model.params, model.cfg, model.layout, s_noisy, s_cond, m_state, a_emb, m_action, 3, 4.0)
    assert out.shape == (b, t, d)


def test_estimator_rejects_bad_shapes():
    model = tiny_model()
    s_noisy, s_cond, m_state, a_emb, m_action, k, rates = estimator_inputs(model)
    with pytest.raises(ValueError):
        estimate_noise(
            model.params, model.cfg, model.layout,
            s_noisy, s_cond, m_state[:, :1, :], a_emb, m_action, k, rates,
        )
    with pytest.raises(ValueError):
        estimate_noise(
            model.params, model.cfg, model.layout,
            s_noisy, s_cond, m_state, a_emb[..., :4], m_action, k, rates,
        )


def test_estimator_gradients_match_finite_differences():
    model = tiny_model()
    cfg, layout = model.cfg, model.layout
    s_noisy, s_cond, m_state, a_emb, m_action, k, rates = estimator_inputs(model)
    params64 = {name: Tensor(t.data.astype(np.float64)) for name, t in model.params.items()}
    names = [
        "blk0.attn.wq.w",
        "blk0.demod1.style.w",
        "blk0.demod1.w",
        "rel_bias",
        "prop.pos.out.w",
        "act.a.in.w",
    ]

    def f(*tensors):
        q = dict(params64)
        for name, tensor in zip(names, tensors):
            q[name] = tensor
        return estimate_noise(
            q, cfg, layout,
            s_noisy.astype(np.float64), s_cond.astype(np.float64), m_state,
            a_emb.astype(np.float64), m_action, k, rates,
        )

    worst = max_grad_error(f, [params64[n].data for n in names], make_rng(77))
    assert worst <= 1.0


# --- training objective -----------------------------------------------------


def test_loss_zero_when_everything_conditioned():
    model = tiny_model()
    layout = model.layout
    b, t = 2, 4
    m_state = np.ones((b, layout.num_properties, t), dtype=np.float32)
    m_exp = expand_state_mask(m_state, layout)
    rng = make_rng(21)
    s_cond = rng.standard_normal((b, t, layout.state_dim)).astype(np.float32)
    a_emb = np.zeros((b, 1, t, model.cfg.text_dim), dtype=np.float32)
    m_action = np.zeros((b, 1, t), dtype=np.float32)
    with Tape() as tape:
        eps_hat = estimate_noise(
            model.params, model.cfg, layout,
            np.zeros_like(s_cond), s_cond * m_exp, m_state, a_emb, m_action, 3, 4.0,
        )
        loss, skipped = masked_noise_loss(eps_hat, rng.standard_normal(s_cond.shape), m_state, layout)
        grads = backward(loss, tape, list(model.params.values()))
    assert loss.data == 0.0
    assert skipped == b
    assert all(np.all(g == 0.0) for g in grads.values())


def test_loss_zero_for_perfect_prediction():
    layout = tiny_layout()
    rng = make_rng(22)
    eps = rng.standard_normal((3, 5, layout.state_dim)).astype(np.float32)
    m_state = (rng.random((3, layout.num_properties, 5)) < 0.5).astype(np.float32)
    loss, skipped = masked_noise_loss(Tensor(eps), eps, m_state, layout)
    assert loss.data == 0.0
    assert skipped == 0


def test_loss_gradient_is_zero_at_conditioned_cells():
    layout = tiny_layout()
    rng = make_rng(23)
    m_state = (rng.random((2, layout.num_properties, 6)) < 0.5).astype(np.float32)
    m_state[0, :, 0] = 1.0
    m_exp = expand_state_mask(m_state, layout)
    pred = Tensor(rng.standard_normal((2, 6, layout.state_dim)).astype(np.float32))
    eps = rng.standard_normal(pred.shape).astype(np.float32)
    with Tape() as tape:
        probe = t_mul(pred, 1.0)
        loss, _ = masked_noise_loss(probe, eps, m_state, layout)
        grads = backward(loss, tape, [pred])
    g = grads[pred]
    assert np.all(g[m_exp == 1.0] == 0.0)
    assert np.any(g[m_exp == 0.0] != 0.0)


def synthetic_episodes(layout, count, length, rng):
    episodes = []
    d = layout.state_dim
    words = ("left", "right")
    for _ in range(count):
        steps = rng.standard_normal((length, d)).astype(np.float32) * 0.1
        states = np.cumsum(steps, axis=0) + rng.standard_normal(d).astype(np.float32)
        labels = [
            [words[int(rng.integers(2))] if rng.random() < 0.6 else "" for _ in range(length)]
            for _ in range(layout.num_actionable)
        ]
        episodes.append(EpisodeData(states.astype(np.float32), labels, framerate=8.0))
    return episodes


def test_training_step_gradients_reach_all_components():
    model = tiny_model()
    sched = build_schedule(8, 1e-4, 0.05)
    rng = make_rng(31)
    episodes = synthetic_episodes(model.layout, 2, 24, rng)
    examples = [draw_example(episodes[i % 2], 6, rng) for i in range(3)]
    loss, grads, skipped = training_step(model, sched, examples, rng)
    assert np.isfinite(loss)
    assert set(grads) == set(model.all_params())
    for name in ("agg.embed", "blk0.attn.wq.w", "prop.pos.gen.w", "prop.ht.out.w", "rel_bias"):
        assert np.linalg.norm(grads[name]) > 0.0, name
    assert np.all(grads["agg.embed"][0] == 0.0)
    assert 0 <= skipped <= len(examples)


def test_training_step_deterministic_given_seed():
    sched = build_schedule(8, 1e-4, 0.05)
    results = []
    for _ in range(2):
        model = tiny_model(seed=1)
        rng = make_rng(32)
        episodes = synthetic_episodes(model.layout, 2, 20, make_rng(33))
        examples = [draw_example(episodes[0], 5, rng), draw_example(episodes[1], 5, rng)]
        results.append(training_step(model, sched, examples, rng))
    loss_a, grads_a, _ = results[0]
    loss_b, grads_b, _ = results[1]
    assert loss_a == loss_b
    assert all(np.array_equal(grads_a[k], grads_b[k]) for k in grads_a)


def test_training_step_rejects_empty_batch():
    model = tiny_model()
    sched = build_schedule(8, 1e-4, 0.05)
    with pytest.raises(ValueError):
        training_step(model, sched, [], make_rng(0))


def test_draw_example_windows_the_episode():
    layout = tiny_layout()
    rng = make_rng(41)
    episodes = synthetic_episodes(layout, 1, 20, rng)
    ep = episodes[0]
    for _ in range(50):
        ex = draw_example(ep, 5, rng)
        assert ex.values.shape == (5, layout.state_dim)
        rows = {tuple(v) for v in ex.values}
        all_rows = {tuple(v) for v in ep.states}
        assert rows <= all_rows
        stride = round(ep.framerate / ex.framerate)
        assert 1 <= stride <= 19 // 4
    with pytest.raises(ValueError):
        draw_example(ep, 21, rng)


def test_train_smoke_updates_weights():
    layout = tiny_layout()
    sched = build_schedule(8, 1e-4, 0.05)
    episodes = synthetic_episodes(layout, 3, 16, make_rng(42))
    cfg = TemporalModelConfig(
        layers=1, heads=2, width=16, rel_clip=4,
        step_embed_dim=8, rate_embed_dim=8, mask_bins=4, text_dim=8,
    )
    text_cfg = AggregatorConfig(layers=1, heads=2, width=8, out_dim=8, max_tokens=8)
    lines = []
    model = train(
        episodes, layout, sched, cfg, text_cfg,
        TrainConfig(steps=10, batch_size=2, base_lr=1e-3, warmup=2, seq_len=4, seed=7, log_every=5),
        log=lines.append,
    )
    fresh = init_temporal_model(layout, cfg, make_rng(7, stream=1))
    assert any(not np.array_equal(model.params[k].data, fresh[k].data) for k in fresh)
    assert len(lines) == 2
    assert model.norm_std.shape == (layout.state_dim,)


# --- sampling ---------------------------------------------------------------


def test_sample_fully_conditioned_returns_conditioning():
    model = tiny_model()
    layout = model.layout
    t = 5
    rng = make_rng(51)
    values = rng.standard_normal((t, layout.state_dim)).astype(np.float32)
    bundle = ConditioningBundle(
        s_c=StateSequence(layout, values, 4.0),
        a_c=ActionTrack(layout, [[""] * t]),
        masks=MaskPair(
            np.ones((layout.num_properties, t), dtype=np.float32),
            np.zeros((1, t), dtype=np.float32),
        ),
        framerate=4.0,
    )
    out = sample(model, bundle, build_schedule(8, 1e-4, 0.05), make_rng(52))
    assert np.array_equal(out.values, values)


def test_sample_preserves_conditioning_bits():
    model = tiny_model()
    rng_stats = make_rng(53)
    model.norm_mean = rng_stats.standard_normal(model.layout.state_dim).astype(np.float32)
    model.norm_std = rng_stats.uniform(0.5, 2.0, model.layout.state_dim).astype(np.float32)
    sched = build_schedule(8, 1e-4, 0.05)
    for seed in range(4):
        bundle = random_bundle(model.layout, 6, make_rng(60 + seed))
        out = sample(model, bundle, sched, make_rng(70 + seed))
        m_exp = expand_state_mask(bundle.masks.m_state, model.layout)
        assert np.array_equal(out.values[m_exp == 1.0], bundle.s_c.values[m_exp == 1.0])
        assert out.framerate == bundle.framerate


def test_sample_deterministic_per_seed():
    model = tiny_model()
    sched = build_schedule(8, 1e-4, 0.05)
    bundle = random_bundle(model.layout, 6, make_rng(80))
    for sampler, steps in (("ddpm", 0), ("ddim", 4)):
        a = sample(model, bundle, sched, make_rng(81), sampler=sampler, ddim_steps=max(steps, 1))
        b = sample(model, bundle, sched, make_rng(81), sampler=sampler, ddim_steps=max(steps, 1))
        assert np.array_equal(a.values, b.values)


def test_sample_many_matches_single_for_one_bundle():
    model = tiny_model()
    sched = build_schedule(8, 1e-4, 0.05)
    bundle = random_bundle(model.layout, 6, make_rng(90))
    one = sample(model, bundle, sched, make_rng(91))
    many = sample_many(model, [bundle], sched, make_rng(91))
    assert np.array_equal(one.values, many[0].values)


def test_sample_rejects_unknown_sampler():
    model = tiny_model()
    sched = build_schedule(8, 1e-4, 0.05)
    bundle = random_bundle(model.layout, 6, make_rng(92))
    with pytest.raises(ValueError):
        sample(model, bundle, sched, make_rng(93), sampler="euler")


# --- framerate upsampling ---------------------------------------------------


def test_upsample_places_and_keeps_keyframes():
    model = tiny_model()
    sched = build_schedule(8, 1e-4, 0.05)
    rng = make_rng(100)
    s = StateSequence(model.layout, rng.standard_normal((3, model.layout.state_dim)).astype(np.float32), 2.0)
    a_c = ActionTrack(model.layout, [["left", "", "right"]])
    out = upsample_framerate(model, s, 4.0, a_c, sched, make_rng(101), chunk_len=16)
    assert out.num_timesteps == 5
    assert out.framerate == 4.0
    assert np.array_equal(out.values[::2], s.values)


def test_upsample_degenerate_chunking_matches_single_chunk():
    model = tiny_model()
    sched = build_schedule(8, 1e-4, 0.05)
    rng = make_rng(102)
    s = StateSequence(model.layout, rng.standard_normal((4, model.layout.state_dim)).astype(np.float32), 2.0)
    out1 = upsample_framerate(model, s, 4.0, None, sched, make_rng(103), chunk_len=7)
    out2 = upsample_framerate(model, s, 4.0, None, sched, make_rng(103), chunk_len=50)
    assert np.array_equal(out1.values, out2.values)


def test_upsample_multichunk_keeps_keyframes():
    model = tiny_model()
    sched = build_schedule(8, 1e-4, 0.05)
    rng = make_rng(104)
    s = StateSequence(model.layout, rng.standard_normal((5, model.layout.state_dim)).astype(np.float32), 2.0)
    out = upsample_framerate(model, s, 4.0, None, sched, make_rng(105), chunk_len=3)
    assert out.num_timesteps == 9
    assert np.array_equal(out.values[::2], s.values)


def test_upsample_rejects_bad_arguments():
    model = tiny_model()
    sched = build_schedule(8, 1e-4, 0.05)
    rng = make_rng(106)
    s = StateSequence(model.layout, rng.standard_normal((3, model.layout.state_dim)).astype(np.float32), 2.0)
    with pytest.raises(ValueError):
        upsample_framerate(model, s, 3.0, None, sched, make_rng(107))
    with pytest.raises(ValueError):
        upsample_framerate(model, s, 2.0, None, sched, make_rng(107))
    with pytest.raises(ValueError):
        upsample_framerate(model, s, 4.0, None, sched, make_rng(107), chunk_len=2)


# --- autoregressive extension -----------------------------------------------


def test_extend_keeps_retained_prefix():
    model = tiny_model()
    sched = build_schedule(8, 1e-4, 0.05)
    rng = make_rng(110)
    s = StateSequence(model.layout, rng.standard_normal((8, model.layout.state_dim)).astype(np.float32), 4.0)
    out = autoregressive_extend(model, s, 3, None, sched, make_rng(111))
    assert out.num_timesteps == 8
    assert np.array_equal(out.values[:5], s.values[3:])


def test_extend_zero_steps_returns_input():
    model = tiny_model()
    sched = build_schedule(8, 1e-4, 0.05)
    rng = make_rng(112)
    s = StateSequence(model.layout, rng.standard_normal((6, model.layout.state_dim)).astype(np.float32), 4.0)
    out = autoregressive_extend(model, s, 0, None, sched, make_rng(113))
    assert np.array_equal(out.values, s.values)


def test_extend_applies_tail_conditioning():
    model = tiny_model()
    layout = model.layout
    sched = build_schedule(8, 1e-4, 0.05)
    rng = make_rng(114)
    s = StateSequence(layout, rng.standard_normal((6, layout.state_dim)).astype(np.float32), 4.0)
    t_new = 2
    tail_values = np.zeros((t_new, layout.state_dim), dtype=np.float32)
    tail_values[-1] = rng.standard_normal(layout.state_dim).astype(np.float32)
    tail_m = np.zeros((layout.num_properties, t_new), dtype=np.float32)
    tail_m[:, -1] = 1.0
    tail = ConditioningBundle(
        s_c=StateSequence(layout, tail_values, 4.0),
        a_c=ActionTrack(layout, [["left", ""]]),
        masks=MaskPair(tail_m, np.array([[1.0, 0.0]], dtype=np.float32)),
        framerate=4.0,
    )
    out = autoregressive_extend(model, s, t_new, tail, sched, make_rng(115))
    assert np.array_equal(out.values[-1], tail_values[-1])
    assert np.array_equal(out.values[:4], s.values[2:])


def test_extend_rejects_bad_arguments():
    model = tiny_model()
    sched = build_schedule(8, 1e-4, 0.05)
    rng = make_rng(116)
    s = StateSequence(model.layout, rng.standard_normal((4, model.layout.state_dim)).astype(np.float32), 4.0)
    with pytest.raises(ValueError):
        autoregressive_extend(model, s, 4, None, sched, make_rng(117))
    with pytest.raises(ValueError):
        autoregressive_extend(model, s, -1, None, sched, make_rng(117))


# --- persistence ------------------------------------------------------------


def test_model_roundtrip_through_disk(tmp_path):
    model = tiny_model()
    rng_stats = make_rng(120)
    model.norm_mean = rng_stats.standard_normal(model.layout.state_dim).astype(np.float32)
    model.norm_std = rng_stats.uniform(0.5, 2.0, model.layout.state_dim).astype(np.float32)
    model.save(tmp_path / "ckpt")
    loaded = AnimationModel.load(tmp_path / "ckpt")
    assert loaded.layout == model.layout
    assert loaded.cfg == model.cfg
    assert loaded.vocab.words == model.vocab.words
    assert np.array_equal(loaded.norm_mean, model.norm_mean)
    args = estimator_inputs(model)
    a = estimate_noise(model.params, model.cfg, model.layout, *args)
    b = estimate_noise(loaded.params, loaded.cfg, loaded.layout, *args)
    assert np.array_equal(a.data, b.data)
