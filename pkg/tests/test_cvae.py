import numpy as np
import pytest

from xmodal.autodiff import ParamStore, ShapeError, Tape, TapeParams, apply_primitive, grad_check
from xmodal.cvae import (
    GaussianLatent,
    branch_terms,
    decode,
    elbo_loss,
    encode_posterior,
    init_branch_params,
    joint_loss,
    kl_to_standard_normal,
    reparameterize,
    sample_predictions,
)
from xmodal.encoder import (
    MODALITY_SCALES,
    ModelConfig,
    init_encoder_params,
    prepare_inputs,
    encode_conditions_batch,
)
from xmodal.scenario import GenConfig, build_view, generate_scenario

CFG = ModelConfig()


def make_store(seed=0, cfg=CFG, modalities=("topdown",)):
    store = ParamStore()
    rng = np.random.default_rng(seed)
    for m in modalities:
        init_encoder_params(store, m, cfg, rng)
        init_branch_params(store, m, cfg, rng)
    return store


def condition_and_inputs(store, modality="topdown", seed=1, cfg=CFG):
    s = generate_scenario(GenConfig(), seed)
    inp = prepare_inputs(build_view(s, modality), cfg)
    tape = Tape()
    p = TapeParams(tape, store)
    c = encode_conditions_batch(tape, p, modality, [inp], cfg)
    return tape, p, c, inp


# -- KL ---------------------------------------------------------------------


def test_kl_zero_exactly_at_standard_normal():
    q = GaussianLatent(mu=np.zeros(16), sigma=np.ones(16), log_var=np.zeros(16))
    assert kl_to_standard_normal(q) == 0.0


def test_kl_matches_monte_carlo_oracle():
    # q = N(0, 2) against N(0, 1): closed form is (2 - 1 - ln 2) / 2
    rng = np.random.default_rng(0)
    x = rng.normal(scale=np.sqrt(2.0), size=1_000_000)
    # independent oracle: E_q[log q(x) - log p(x)] sample by sample
    log_ratio = -0.5 * np.log(2.0) + x**2 / 4.0
    mc = log_ratio.mean()
    se = log_ratio.std(ddof=1) / np.sqrt(x.size)
    closed = kl_to_standard_normal(
        GaussianLatent(mu=np.zeros(1), sigma=np.array([np.sqrt(2.0)]))
    )
    assert abs(closed - 0.5 * (2.0 - 1.0 - np.log(2.0))) <= 1e-12
    assert abs(closed - mc) <= 3.0 * se


def test_kl_tensor_matches_numpy_closed_form():
    rng = np.random.default_rng(2)
    mu = rng.normal(size=(3, 8))
    log_var = rng.normal(scale=0.5, size=(3, 8))
    tape = Tape()
    q_t = GaussianLatent(
        mu=tape.constant(mu),
        sigma=tape.constant(np.exp(log_var / 2)),
        log_var=tape.constant(log_var),
    )
    q_np = GaussianLatent(mu=mu, sigma=np.exp(log_var / 2), log_var=log_var)
    assert np.max(np.abs(kl_to_standard_normal(q_t).value - kl_to_standard_normal(q_np))) <= 1e-12


def test_kl_gradient_matches_finite_differences():
    def build(tape, mu, log_var):
        sigma = apply_primitive(tape, "exp", [log_var * 0.5])
        q = GaussianLatent(mu=mu, sigma=sigma, log_var=log_var)
        return kl_to_standard_normal(q).sum()

    rng = np.random.default_rng(3)
    assert grad_check(build, [rng.normal(size=(2, 5)), rng.normal(size=(2, 5))]) <= 1e-4


# -- reparameterization -----------------------------------------------------


def test_reparameterize_numpy_is_mu_plus_sigma_noise():
    mu, sigma = np.array([1.0, -2.0]), np.array([0.5, 3.0])
    noise = np.array([2.0, -1.0])
    z = reparameterize(GaussianLatent(mu=mu, sigma=sigma), noise)
    assert np.array_equal(z, [2.0, -5.0])


def test_reparameterize_gradients_flow_through_mu_and_sigma():
    noise = np.random.default_rng(4).normal(size=(3, 4))

    def build(tape, mu, sigma):
        z = reparameterize(GaussianLatent(mu=mu, sigma=sigma), noise)
        return (z * z).sum()

    mu0 = np.random.default_rng(5).normal(size=(3, 4))
    sigma0 = np.abs(np.random.default_rng(6).normal(size=(3, 4))) + 0.5
    assert grad_check(build, [mu0, sigma0]) <= 1e-4


def test_reparameterize_rejects_mismatched_noise():
    tape = Tape()
    q = GaussianLatent(mu=tape.constant(np.zeros((2, 3))), sigma=tape.constant(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        reparameterize(q, np.zeros((5, 3)))


def test_negative_sigma_rejected():
    with pytest.raises(ShapeError):
        GaussianLatent(mu=np.zeros(2), sigma=np.array([1.0, -0.5]))


# -- posterior / decoder ----------------------------------------------------


def test_posterior_sigma_always_positive():
    store = make_store(7)
    rng = np.random.default_rng(8)
    tape = Tape()
    p = TapeParams(tape, store)
    c = tape.constant(rng.normal(scale=5, size=(6, CFG.d_c)))
    ys = rng.normal(scale=100, size=(6, 2 * CFG.delta))
    q = encode_posterior(tape, p, "topdown", ys, c, CFG)
    assert np.all(q.sigma.value > 0)
    assert np.max(np.abs(q.sigma.value - np.exp(q.log_var.value / 2))) == 0.0


def test_zero_decoder_weights_give_zero_trajectory():
    store = make_store(9)
    for name in list(store.names()):
        if name.startswith("branch.topdown.dec"):
            store.update({name: np.zeros_like(store.raw()[name])})
    tape = Tape()
    p = TapeParams(tape, store)
    out = decode(
        tape, p, "topdown",
        tape.constant(np.random.default_rng(0).normal(size=(4, CFG.d_z))),
        tape.constant(np.random.default_rng(1).normal(size=(4, CFG.d_c))),
        CFG,
    )
    assert np.array_equal(out.value, np.zeros((4, 2 * CFG.delta)))


def test_decoder_output_scale_is_applied():
    store = make_store(10)
    tape = Tape()
    p = TapeParams(tape, store)
    z = tape.constant(np.random.default_rng(2).normal(size=(2, CFG.d_z)))
    c = tape.constant(np.random.default_rng(3).normal(size=(2, CFG.d_c)))
    out = decode(tape, p, "topdown", z, c, CFG).value
    # oracle: replay the decoder in numpy and scale at the end
    raw = store.raw()
    x = np.concatenate([z.value, c.value], axis=1)
    h = np.maximum(x @ raw["branch.topdown.dec.l1.w"] + raw["branch.topdown.dec.l1.b"], 0)
    h = np.concatenate([h, c.value], axis=1)
    h = np.maximum(h @ raw["branch.topdown.dec.l2.w"] + raw["branch.topdown.dec.l2.b"], 0)
    h = np.concatenate([h, c.value], axis=1)
    expected = (h @ raw["branch.topdown.dec.out.w"] + raw["branch.topdown.dec.out.b"])
    expected *= MODALITY_SCALES["topdown"]["output"]
    assert np.max(np.abs(out - expected)) <= 1e-12


# -- losses -----------------------------------------------------------------


def test_elbo_total_is_exact_sum_of_kl_and_recon():
    store = make_store(11)
    tape, p, c, inp = condition_and_inputs(store)
    noise = np.random.default_rng(12).standard_normal((10, CFG.d_z))
    terms = elbo_loss(tape, p, "topdown", inp.y, c, noise, CFG)
    assert terms["total"].value == terms["kl"].value + terms["recon"].value


def test_recon_is_best_of_n_draws():
    store = make_store(13)
    tape, p, c, inp = condition_and_inputs(store, seed=2)
    n = 6
    noise = np.random.default_rng(14).standard_normal((n, CFG.d_z))
    terms = elbo_loss(tape, p, "topdown", inp.y, c, noise, CFG)
    scale = MODALITY_SCALES["topdown"]["coord"]
    per_draw = np.mean(
        (terms["yhat"].value * scale - inp.y[None, :] * scale) ** 2, axis=1
    )
    assert abs(terms["recon"].value - per_draw.min() * CFG.recon_weight) <= 1e-12 * CFG.recon_weight
    # more draws can only help
    noise_more = np.concatenate([noise, np.random.default_rng(15).standard_normal((4, CFG.d_z))])
    tape2, p2, c2, _ = condition_and_inputs(store, seed=2)
    more = elbo_loss(tape2, p2, "topdown", inp.y, c2, noise_more, CFG)
    assert more["recon"].value <= terms["recon"].value


def test_constructed_perfect_fit_has_zero_loss():
    # zero posterior weights -> mu = 0, sigma = 1 -> KL = 0; zero decoder
    # weights predict the zero future, and the target is the zero future
    store = make_store(16)
    for name in list(store.names()):
        if name.startswith("branch.topdown."):
            store.update({name: np.zeros_like(store.raw()[name])})
    tape, p, c, inp = condition_and_inputs(store, seed=3)
    noise = np.random.default_rng(17).standard_normal((5, CFG.d_z))
    terms = elbo_loss(tape, p, "topdown", np.zeros(2 * CFG.delta), c, noise, CFG)
    assert terms["kl"].value == 0.0
    assert terms["recon"].value == 0.0
    assert terms["total"].value == 0.0


def test_joint_loss_is_sum_over_modalities():
    store = make_store(18, modalities=("topdown", "frontal"))
    s = generate_scenario(GenConfig(), 4)
    inputs = {m: prepare_inputs(build_view(s, m), CFG) for m in ("topdown", "frontal")}
    tape = Tape()
    p = TapeParams(tape, store)
    conds = {m: encode_conditions_batch(tape, p, m, [inputs[m]], CFG) for m in inputs}
    noises = {
        m: np.random.default_rng(19 + i).standard_normal((10, CFG.d_z))
        for i, m in enumerate(inputs)
    }
    out = joint_loss(tape, p, inputs, conds, noises, CFG)
    parts = sum(t["total"].value for t in out["per_modality"].values())
    assert out["total"].value == parts


def test_one_branch_loss_leaves_other_branch_params_untouched():
    store = make_store(20, modalities=("topdown", "frontal"))
    tape, p, c, inp = condition_and_inputs(store, seed=5)
    noise = np.random.default_rng(21).standard_normal((10, CFG.d_z))
    terms = elbo_loss(tape, p, "topdown", inp.y, c, noise, CFG)
    grads = p.named_grads(terms["total"])
    for name, g in grads.items():
        if ".frontal." in name:
            assert not np.any(g)
    assert any(np.any(g) for n, g in grads.items() if n.startswith("branch.topdown."))


def test_batched_branch_terms_match_per_scenario():
    store = make_store(22)
    inps = [
        prepare_inputs(build_view(generate_scenario(GenConfig(n_agents_min=3, n_agents_max=3), s), "topdown"), CFG)
        for s in (30, 31, 32)
    ]
    noise = np.random.default_rng(23).standard_normal((3, 4, CFG.d_z))
    tape = Tape()
    p = TapeParams(tape, store)
    c = encode_conditions_batch(tape, p, "topdown", inps, CFG)
    ys = np.stack([inp.y for inp in inps])
    batched = branch_terms(tape, p, "topdown", c, ys, noise, CFG)
    for i, inp in enumerate(inps):
        t2 = Tape()
        p2 = TapeParams(t2, store)
        c2 = encode_conditions_batch(t2, p2, "topdown", [inp], CFG)
        single = elbo_loss(t2, p2, "topdown", inp.y, c2, noise[i], CFG)
        assert abs(batched["kl"].value[i] - single["kl"].value) <= 1e-12
        assert abs(batched["recon"].value[i] - single["recon"].value) <= 1e-12


def test_full_branch_gradients_match_finite_differences():
    cfg = ModelConfig(tau=3, d_e=4, d_v=4, d_c=3, d_z=2, hidden=4, branch_hidden=5)
    store = ParamStore()
    rng = np.random.default_rng(24)
    init_encoder_params(store, "topdown", cfg, rng)
    init_branch_params(store, "topdown", cfg, rng)
    s = generate_scenario(GenConfig(n_agents_min=3, n_agents_max=3, tau=3), 6)
    inp = prepare_inputs(build_view(s, "topdown"), cfg)
    noise = np.random.default_rng(25).standard_normal((3, cfg.d_z))

    def run():
        tape = Tape()
        p = TapeParams(tape, store)
        c = encode_conditions_batch(tape, p, "topdown", [inp], cfg)
        terms = elbo_loss(tape, p, "topdown", inp.y, c, noise, cfg)
        return p, terms["total"]

    p, loss = run()
    grads = p.named_grads(loss)
    rng = np.random.default_rng(26)
    step = 1e-6
    for name in ("branch.topdown.post.l1.w", "branch.topdown.post.out.w",
                 "branch.topdown.dec.l2.w", "branch.topdown.dec.out.b",
                 "enc.topdown.readout.mlp2.w"):
        arr = store.raw()[name]
        for _ in range(3):
            idx = tuple(rng.integers(0, d) for d in arr.shape)
            orig = arr[idx]
            vals = []
            for delta in (step, -step):
                arr[idx] = orig + delta
                vals.append(float(run()[1].value))
            arr[idx] = orig
            numeric = (vals[0] - vals[1]) / (2 * step)
            assert abs(grads[name][idx] - numeric) <= 1e-4 * max(1.0, abs(numeric))


# -- prior sampling ---------------------------------------------------------


def test_sample_predictions_prefix_stable_and_shaped():
    store = make_store(27)
    c = np.random.default_rng(28).normal(size=(1, CFG.d_c))
    a = sample_predictions(store, "topdown", c, 5, np.random.default_rng(9), CFG)
    b = sample_predictions(store, "topdown", c, 9, np.random.default_rng(9), CFG)
    assert a.trajectories.shape == (5, CFG.delta, 2)
    assert a.latents.shape == (5, CFG.d_z)
    assert a.trajectories.tobytes() == b.trajectories[:5].tobytes()
    with pytest.raises(ShapeError):
        sample_predictions(store, "topdown", c, 0, np.random.default_rng(0), CFG)
