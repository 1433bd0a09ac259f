"""Training, evaluation, and ablations.

The training loop batches scenarios with the same agent count into single
graphs, so one optimizer step touches a handful of large tensor ops instead
of hundreds of small ones. All randomness is drawn from seed streams keyed
by (run seed, purpose, epoch, scenario, modality): results are bitwise
reproducible, and the noise fed to one modality's branch never depends on
which other modalities are being trained.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .autodiff import (
    AdamState,
    NonFiniteError,
    ParamStore,
    TapeParams,
    Tape,
    adam_step,
    save_checkpoint,
)
from .cvae import branch_terms, decode, init_branch_params, sample_predictions
from .diversity import DiversityConfig, kmax_graph
from .encoder import (
    ModelConfig,
    encode_conditions_batch,
    init_encoder_params,
    prepare_inputs,
)
from .metrics import (
    HORIZONS_S,
    ade,
    default_thresholds,
    fde,
    horizon_step,
    select_best,
    sr_curve,
)
from .scenario import MODALITIES, GenConfig, build_view, generate_scenario

__all__ = [
    "ConfigError",
    "RunConfig",
    "TrainLog",
    "init_params",
    "generate_dataset",
    "train",
    "evaluate",
    "ablate",
    "ABLATION_GRID",
]

# seed stream tags
_INIT, _NOISE, _SHUFFLE, _EVAL = 0, 1, 2, 3


class ConfigError(ValueError):
    """Invalid or unknown run configuration."""


@dataclass
class RunConfig:
    seed: int = 0
    n_train: int = 500
    n_eval: int = 100
    epochs: int = 200
    batch_size: int = 16
    lr: float = 1e-3
    n_posterior: int = 2    # posterior draws per scenario during training;
                            # best-of-N with large N is itself a variety loss,
                            # so N is kept small to leave the diversity
                            # pressure to the kernel regularizer
    n_samples: int = 20     # prior draws per target at evaluation
    modalities: tuple = ("topdown", "frontal")
    env: bool = True        # external (perceptual) features
    soc: bool = True        # social message passing
    lam: float = 10.0       # diversity regularizer weight
    sigma_g_sq: float = 1.0
    model: ModelConfig = field(default_factory=ModelConfig)
    gen: GenConfig = field(default_factory=GenConfig)

    def validate(self):
        if self.epochs < 1 or self.batch_size < 1 or self.n_train < 1 or self.n_eval < 1:
            raise ConfigError("epochs, batch_size, n_train and n_eval must be positive")
        if self.lr < 0:
            raise ConfigError(f"learning rate must be non-negative, got {self.lr}")
        if self.n_posterior < 1 or self.n_samples < 1:
            raise ConfigError("sample counts must be positive")
        if self.lam < 0 or self.sigma_g_sq <= 0:
            raise ConfigError("need lam >= 0 and sigma_g_sq > 0")
        mods = tuple(self.modalities)
        if not mods or len(set(mods)) != len(mods) or any(m not in MODALITIES for m in mods):
            raise ConfigError(
                f"modalities must be a non-empty subset of {MODALITIES}, got {mods}"
            )
        self.model.validate()
        self.gen.validate()
        return self

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        """Build from plain JSON data; unknown keys are rejected."""
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(data)
        if "modalities" in kwargs:
            kwargs["modalities"] = tuple(kwargs["modalities"])
        for key, sub in (("model", ModelConfig), ("gen", GenConfig)):
            if key in kwargs and isinstance(kwargs[key], dict):
                sub_known = {f.name for f in fields(sub)}
                sub_unknown = set(kwargs[key]) - sub_known
                if sub_unknown:
                    raise ConfigError(f"unknown {key} config keys: {sorted(sub_unknown)}")
                kwargs[key] = sub(**kwargs[key])
        try:
            return cls(**kwargs).validate()
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)
    aborted: bool = False
    abort_epoch: int | None = None

    def totals(self):
        return [e["total"] for e in self.epochs]


def _stream(*entropy):
    return np.random.default_rng(np.random.SeedSequence(entropy))


def _mcode(modality):
    return MODALITIES.index(modality)


def init_params(config: RunConfig) -> ParamStore:
    """Fresh parameters; each modality draws from its own seed stream, so
    one modality's init never depends on which others are enabled."""
    config.validate()
    store = ParamStore()
    for m in config.modalities:
        rng = _stream(config.seed, _INIT, _mcode(m))
        init_encoder_params(store, m, config.model, rng, env=config.env, soc=config.soc)
        init_branch_params(store, m, config.model, rng)
    return store


def generate_dataset(config: RunConfig):
    """Deterministic train/eval scenario splits from disjoint seed ranges."""
    config.validate()
    base = config.seed * 10_000_000
    train = [generate_scenario(config.gen, base + i) for i in range(config.n_train)]
    evals = [generate_scenario(config.gen, base + 5_000_000 + i) for i in range(config.n_eval)]
    return train, evals


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def _prepare(scenarios, modalities, model: ModelConfig):
    return {
        m: [prepare_inputs(build_view(s, m), model) for s in scenarios] for m in modalities
    }


def _k_homogeneous_batches(scenarios, batch_size, rng):
    """Shuffled minibatches in which every scenario has the same agent
    count (one graph per batch and modality)."""
    by_k = {}
    for i, s in enumerate(scenarios):
        by_k.setdefault(s.n_agents, []).append(i)
    batches = []
    for k in sorted(by_k):
        idx = np.array(by_k[k])[rng.permutation(len(by_k[k]))]
        batches.extend(idx[i: i + batch_size] for i in range(0, len(idx), batch_size))
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


def _batch_noise(config: RunConfig, epoch, scenario_ids, modality):
    return np.stack(
        [
            _stream(config.seed, _NOISE, epoch, int(sid), _mcode(modality)).standard_normal(
                (config.n_posterior, config.model.d_z)
            )
            for sid in scenario_ids
        ]
    )


def train(config: RunConfig, scenarios=None, checkpoint_path=None):
    """Optimize all enabled branches jointly; returns (params, log).

    On a non-finite loss or gradient the run aborts and the parameters from
    the last completed epoch are returned, with the log marked accordingly.
    With ``checkpoint_path`` the parameters are written there after every
    completed epoch, so an interrupted run keeps its last good state.
    """
    config.validate()
    if scenarios is None:
        scenarios, _ = generate_dataset(config)
    store = init_params(config)
    prepared = _prepare(scenarios, config.modalities, config.model)
    div_cfg = DiversityConfig(lam=config.lam, sigma_g_sq=config.sigma_g_sq)
    adam = AdamState(lr=config.lr)
    log = TrainLog()
    last_good = dict(store.raw())

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        shuffle_rng = _stream(config.seed, _SHUFFLE, epoch)
        batches = _k_homogeneous_batches(scenarios, config.batch_size, shuffle_rng)
        sums = {"total": 0.0}
        for m in config.modalities:
            sums[f"kl_{m}"] = sums[f"recon_{m}"] = sums[f"kmax_{m}"] = 0.0
        try:
            for batch_idx in batches:
                tape = Tape()
                p = TapeParams(tape, store)
                loss = None
                for m in config.modalities:
                    inps = [prepared[m][i] for i in batch_idx]
                    c = encode_conditions_batch(
                        tape, p, m, inps, config.model, env=config.env, soc=config.soc
                    )
                    noise = _batch_noise(config, epoch, batch_idx, m)
                    ys = np.stack([inp.y for inp in inps])
                    terms = branch_terms(tape, p, m, c, ys, noise, config.model)
                    part = terms["kl"].sum() + terms["recon"].sum()
                    sums[f"kl_{m}"] += float(terms["kl"].value.sum())
                    sums[f"recon_{m}"] += float(terms["recon"].value.sum())
                    if config.lam > 0 and config.n_posterior >= 2:
                        # the kernel candidates are re-decoded with the latent
                        # draws and conditions held constant, so the diversity
                        # gradient shapes the decoder's latent response without
                        # disturbing the posterior or the social encoding
                        q = terms["posterior"]
                        nd = config.n_posterior
                        zs = (
                            np.repeat(q.mu.value, nd, axis=0)
                            + np.repeat(q.sigma.value, nd, axis=0)
                            * noise.reshape(-1, config.model.d_z)
                        )
                        yhat_div = decode(
                            tape, p, m, tape.constant(zs),
                            tape.constant(np.repeat(c.value, nd, axis=0)),
                            config.model,
                        )
                        kmax = kmax_graph(
                            tape, yhat_div, len(inps), config.n_posterior, m, div_cfg
                        )
                        part = part + kmax.sum() * config.lam
                        sums[f"kmax_{m}"] += float(kmax.value.sum())
                    loss = part if loss is None else loss + part
                loss = loss * (1.0 / len(batch_idx))
                sums["total"] += float(loss.value) * len(batch_idx)
                grads = p.named_grads(loss)
                store.update(adam_step(store.raw(), grads, adam))
        except NonFiniteError:
            store.update(last_good)
            log.aborted = True
            log.abort_epoch = epoch
            return store, log
        n = len(scenarios)
        entry = {"epoch": epoch, "wall_s": time.perf_counter() - t0}
        entry.update({k: v / n for k, v in sums.items()})
        log.epochs.append(entry)
        last_good = dict(store.raw())
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, store)
    return store, log


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def evaluate(store: ParamStore, config: RunConfig, scenarios, modality) -> dict:
    """Single-modality evaluation: encode conditions from this modality's
    view only, decode prior samples, and score the best-of-N prediction.

    Parameter reads are instrumented; the report carries per-branch read
    counts, so tests can assert the other modality was never touched.
    """
    config.validate()
    if modality not in MODALITIES:
        raise ConfigError(f"unknown modality {modality!r}")
    if not any(name.startswith(f"branch.{modality}.") for name in store.raw()):
        raise ConfigError(f"modality {modality!r} was not trained in this checkpoint")
    store.reset_reads()
    view_builds = {m: 0 for m in MODALITIES}
    steps = {h: horizon_step(h, config.gen.dt, config.model.delta) for h in HORIZONS_S}
    per_horizon = {h: {"ade": [], "fde": []} for h in HORIZONS_S}
    endpoint_errors = []
    min_ades = []
    spreads = []
    for sid, s in enumerate(scenarios):
        view = build_view(s, modality)
        view_builds[modality] += 1
        inp = prepare_inputs(view, config.model)
        tape = Tape()
        p = TapeParams(tape, store)
        c = encode_conditions_batch(
            tape, p, modality, [inp], config.model, env=config.env, soc=config.soc
        )
        rng = _stream(config.seed, _EVAL, sid, _mcode(modality))
        preds = sample_predictions(
            store, modality, c.value, config.n_samples, rng, config.model
        )
        gt = inp.future
        best = preds.trajectories[select_best(preds.trajectories, gt)]
        for h in HORIZONS_S:
            per_horizon[h]["ade"].append(ade(best, gt, steps[h]))
            per_horizon[h]["fde"].append(fde(best, gt, steps[h]))
        min_ades.append(ade(best, gt))
        endpoint_errors.append(fde(best, gt))
        ends = preds.trajectories[:, -1]
        diff = ends[:, None] - ends[None, :]
        pair_d = np.linalg.norm(diff, axis=-1)
        iu = np.triu_indices(preds.n, k=1)
        spreads.append(float(pair_d[iu].mean()) if iu[0].size else 0.0)
    thresholds = default_thresholds(modality)
    rates = sr_curve(endpoint_errors, thresholds)
    reads = {}
    for m in MODALITIES:
        reads[f"enc.{m}"] = store.read_count(f"enc.{m}.")
        reads[f"branch.{m}"] = store.read_count(f"branch.{m}.")
    return {
        "modality": modality,
        "units": "meters" if modality == "topdown" else "pixels",
        "n_scenarios": len(scenarios),
        "n_samples": config.n_samples,
        "seed": config.seed,
        "horizons": {
            str(h): {
                "ade": float(np.mean(per_horizon[h]["ade"])),
                "fde": float(np.mean(per_horizon[h]["fde"])),
            }
            for h in HORIZONS_S
        },
        "min_ade": float(np.mean(min_ades)),
        "endpoint_errors": [float(e) for e in endpoint_errors],
        "spread": float(np.mean(spreads)),
        "sr_curve": {
            "thresholds": [float(t) for t in thresholds],
            "rates": [float(r) for r in rates],
        },
        "param_reads": reads,
        "view_builds": view_builds,
    }


# ---------------------------------------------------------------------------
# ablations
# ---------------------------------------------------------------------------

# name -> (env, soc, modalities trained together)
ABLATION_GRID = (
    ("-Env-Soc", False, False, ("topdown",)),
    ("+Env-Soc", True, False, ("topdown",)),
    ("-Env+Soc", False, True, ("topdown",)),
    ("+Env+Soc", True, True, ("topdown",)),
    ("+Env+Soc+Mul", True, True, ("topdown", "frontal")),
)


def ablate(config: RunConfig, train_scenarios=None, eval_scenarios=None):
    """Train and score every toggle combination; evaluation is always on
    the top-down branch alone, so the multi-modality row isolates the
    benefit of joint training."""
    config.validate()
    if train_scenarios is None or eval_scenarios is None:
        gen_train, gen_eval = generate_dataset(config)
        train_scenarios = train_scenarios or gen_train
        eval_scenarios = eval_scenarios or gen_eval
    rows = []
    for name, env, soc, mods in ABLATION_GRID:
        variant = replace(config, env=env, soc=soc, modalities=mods)
        store, log = train(variant, train_scenarios)
        report = evaluate(store, variant, eval_scenarios, "topdown")
        eps_idx = report["sr_curve"]["thresholds"].index(1.5)
        rows.append(
            {
                "name": name,
                "min_ade": report["min_ade"],
                "fde_4s": report["horizons"]["4.0"]["fde"],
                "sr_at_1p5": report["sr_curve"]["rates"][eps_idx],
                "aborted": log.aborted,
            }
        )
    return rows
