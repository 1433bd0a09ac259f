"""Social-behavior feature encoder.

Produces the condition vector c of the target agent from one modality view:
a learned external-feature grid over the occupancy/static rasters, per-agent
LSTM sequence encoders (absolute motion for the target, relative motion for
the rest), and a pair message-passing layer with a graph-level target whose
aggregation order is content-canonicalized so permutation invariance over
non-target agents is bitwise exact.

All ops run on an autodiff tape; gradients flow to every weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, TapeParams, Tensor, apply_primitive, concat
from .scenario import ModalityView

__all__ = [
    "ModelConfig",
    "MODALITY_SCALES",
    "EncoderInputs",
    "prepare_inputs",
    "init_encoder_params",
    "encoder_param_names",
    "extract_external_features",
    "gather_agent_features",
    "encode_target",
    "encode_others",
    "message_pass",
    "readout",
    "encode_condition",
    "encode_conditions_batch",
]

N_LABELS = 3  # offroad / road / sidewalk fractions per grid cell


@dataclass
class ModelConfig:
    """Desk-scale architecture sizes (reference full-scale sizes are 512/256)."""

    tau: int = 5
    delta: int = 10
    d_grid: int = 8      # external grid is d_grid x d_grid cells
    d_e: int = 32        # external feature size per cell
    d_v: int = 32        # node state size (must equal d_e: messages add h + f)
    d_c: int = 32        # condition vector size
    d_z: int = 4         # shared latent size; a handful of prior draws
                         # should cover it at evaluation time
    hidden: int = 32     # encoder MLP width
    branch_hidden: int = 64  # CVAE branch MLP width
    l_rounds: int = 2    # message-passing rounds
    leaky_slope: float = 0.2
    # weight on the (normalized) reconstruction error relative to the KL;
    # large enough that the posterior stays informative about the future
    recon_weight: float = 300.0

    def validate(self):
        if self.d_e != self.d_v:
            raise ShapeError("d_e must equal d_v (messages add node and external features)")
        if min(self.tau, self.delta, self.d_grid, self.d_e, self.d_c, self.d_z, self.hidden, self.branch_hidden) < 1:
            raise ShapeError("all model sizes must be positive")
        if self.l_rounds < 1:
            raise ShapeError("need at least one message-passing round")
        return self


# fixed geometric normalization per modality: coordinate scale into the
# encoders, decoder output scale, and the kernel distance pre-scale that
# brings pixel distances into the same range as metric ones
MODALITY_SCALES = {
    "topdown": {"coord": 1.0 / 40.0, "output": 10.0, "kernel": 1.0},
    "frontal": {"coord": 1.0 / 200.0, "output": 50.0, "kernel": 0.1},
}


# ---------------------------------------------------------------------------
# constant inputs derived from a view (cached across training epochs)
# ---------------------------------------------------------------------------


@dataclass
class EncoderInputs:
    """Per-scenario constants for one modality; target agent is row 0."""

    modality: str
    temporal_desc: np.ndarray  # (G*G, tau) per-cell occupancy pooled per step
    static_desc: np.ndarray    # (G*G, 3) per-cell label fractions
    agent_cells: np.ndarray    # (K,) flat grid cell of each agent at step tau
    agent_on_grid: np.ndarray  # (K,) bool
    x: np.ndarray              # (K, tau, 2) past coords in view units
    y: np.ndarray              # (delta*2,) target future, flattened
    future: np.ndarray         # (delta, 2) target future

    @property
    def n_agents(self):
        return self.x.shape[0]


def _block_pool(raster, g):
    h, w = raster.shape[-2:]
    if h % g or w % g:
        raise ShapeError(f"raster {h}x{w} not divisible by grid size {g}")
    lead = raster.shape[:-2]
    blocks = raster.reshape(lead + (g, h // g, g, w // g))
    return blocks.mean(axis=(-3, -1))


def _cell_descriptors(view: ModalityView, cfg: ModelConfig):
    g = cfg.d_grid
    pooled = _block_pool(view.occupancy, g)              # (tau, g, g)
    temporal = pooled.reshape(cfg.tau, g * g).T.copy()   # (g*g, tau)
    onehot = np.stack([(view.static_raster == l) for l in range(N_LABELS)]).astype(np.float64)
    static = _block_pool(onehot, g).reshape(N_LABELS, g * g).T.copy()
    return temporal, static


def _grid_cells(view: ModalityView, positions, cfg: ModelConfig):
    """Flat d_grid x d_grid cell index of view-space positions."""
    g = cfg.d_grid
    h, w = view.raster_shape
    cells, ok = view.raster_cell(positions)
    gr = np.clip(cells[..., 0] * g // h, 0, g - 1)
    gc = np.clip(cells[..., 1] * g // w, 0, g - 1)
    return gr * g + gc, ok


def prepare_inputs(view: ModalityView, cfg: ModelConfig) -> EncoderInputs:
    """Pool the rasters and reorder agents so the target sits at row 0."""
    if view.occupancy.shape[0] != cfg.tau:
        raise ShapeError(
            f"view has {view.occupancy.shape[0]} observation steps, config expects {cfg.tau}"
        )
    temporal, static = _cell_descriptors(view, cfg)
    order = [view.target] + [i for i in range(view.coords.shape[0]) if i != view.target]
    coords = view.coords[order]
    cells, ok = _grid_cells(view, coords[:, cfg.tau - 1], cfg)
    future = coords[0, cfg.tau:]
    return EncoderInputs(
        modality=view.modality,
        temporal_desc=temporal,
        static_desc=static,
        agent_cells=cells,
        agent_on_grid=ok & view.valid[order][:, cfg.tau - 1],
        x=coords[:, : cfg.tau].copy(),
        y=future.reshape(-1).copy(),
        future=future.copy(),
    )


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


def _init_linear(store, rng, name, n_in, n_out):
    bound = 1.0 / np.sqrt(n_in)
    store.add(f"{name}.w", rng.uniform(-bound, bound, size=(n_in, n_out)))
    store.add(f"{name}.b", np.zeros(n_out))


def encoder_param_names(modality, cfg: ModelConfig, env=True, soc=True):
    names = []
    base = f"enc.{modality}"
    if env:
        names += [f"{base}.temporal", f"{base}.static", f"{base}.omega"]
    names += [f"{base}.target.mlp1", f"{base}.target.mlp2", f"{base}.target.lstm"]
    if soc:
        names += [
            f"{base}.others.mlp1", f"{base}.others.mlp2", f"{base}.others.lstm",
            f"{base}.msg.mlp1", f"{base}.msg.mlp2",
        ]
    names += [f"{base}.readout.mlp1", f"{base}.readout.mlp2"]
    return names


def init_encoder_params(store, modality, cfg: ModelConfig, rng, env=True, soc=True):
    """Weight init: uniform in +-1/sqrt(fan-in), zero biases."""
    cfg.validate()
    base = f"enc.{modality}"
    if env:
        _init_linear(store, rng, f"{base}.temporal", cfg.tau, cfg.d_e)
        _init_linear(store, rng, f"{base}.static", N_LABELS, cfg.d_e)
        _init_linear(store, rng, f"{base}.omega", N_LABELS, cfg.d_v)
    for role in ("target",) + (("others",) if soc else ()):
        _init_linear(store, rng, f"{base}.{role}.mlp1", 2, cfg.hidden)
        _init_linear(store, rng, f"{base}.{role}.mlp2", cfg.hidden, cfg.d_v)
        bound = 1.0 / np.sqrt(cfg.d_v)
        store.add(f"{base}.{role}.lstm.wx", rng.uniform(-bound, bound, size=(cfg.d_v, 4 * cfg.d_v)))
        store.add(f"{base}.{role}.lstm.wh", rng.uniform(-bound, bound, size=(cfg.d_v, 4 * cfg.d_v)))
        store.add(f"{base}.{role}.lstm.b", np.zeros(4 * cfg.d_v))
    if soc:
        _init_linear(store, rng, f"{base}.msg.mlp1", 3 * cfg.d_v, cfg.hidden)
        _init_linear(store, rng, f"{base}.msg.mlp2", cfg.hidden, cfg.d_v)
    _init_linear(store, rng, f"{base}.readout.mlp1", cfg.d_v, cfg.hidden)
    _init_linear(store, rng, f"{base}.readout.mlp2", cfg.hidden, cfg.d_c)


# ---------------------------------------------------------------------------
# graph building blocks
# ---------------------------------------------------------------------------


def _linear(p: TapeParams, prefix, x: Tensor) -> Tensor:
    return x @ p(f"{prefix}.w") + p(f"{prefix}.b")


def _mlp2(tape, p, prefix, x: Tensor) -> Tensor:
    h = apply_primitive(tape, "relu", [_linear(p, f"{prefix}.mlp1", x)])
    return _linear(p, f"{prefix}.mlp2", h)


def _lstm(tape, p: TapeParams, prefix, steps, batch, d):
    """Standard gate formulation (input/forget/output + candidate)."""
    wx, wh, b = p(f"{prefix}.wx"), p(f"{prefix}.wh"), p(f"{prefix}.b")
    h = tape.constant(np.zeros((batch, d)))
    cell = tape.constant(np.zeros((batch, d)))
    sig = lambda t: apply_primitive(tape, "sigmoid", [t])
    tanh = lambda t: apply_primitive(tape, "tanh", [t])
    for x_t in steps:
        gates = x_t @ wx + h @ wh + b
        i = sig(gates[:, 0 * d: 1 * d])
        f = sig(gates[:, 1 * d: 2 * d])
        o = sig(gates[:, 2 * d: 3 * d])
        g = tanh(gates[:, 3 * d: 4 * d])
        cell = f * cell + i * g
        h = o * tanh(cell)
    return h


def _sequence_hidden(tape, p, base, role, seq, cfg, omega=None):
    """MLP-embed each step of (rows, tau, 2) sequences, run the LSTM, and
    return the last hidden state (rows, d_v). ``omega`` (rows, d_v) is added
    to every step embedding when given."""
    rows, tau = seq.shape[0], seq.shape[1]
    flat = tape.constant(seq.reshape(rows * tau, 2))
    emb = _mlp2(tape, p, f"{base}.{role}", flat)
    if omega is not None:
        rep = np.repeat(np.arange(rows), tau)
        emb = emb + omega.take(rep)
    steps = [emb.take(np.arange(rows) * tau + t) for t in range(tau)]
    return _lstm(tape, p, f"{base}.{role}.lstm", steps, rows, cfg.d_v)


# ---------------------------------------------------------------------------
# public per-scenario operations
# ---------------------------------------------------------------------------


def extract_external_features(tape, p: TapeParams, view: ModalityView, cfg: ModelConfig) -> Tensor:
    """Learned spatio-temporal grid: temporal branch over per-step occupancy
    plus static branch over semantic labels, summed elementwise.

    Returns a (d_grid, d_grid, d_e) tensor.
    """
    temporal_desc, static_desc = _cell_descriptors(view, cfg)
    base = f"enc.{view.modality}"
    temporal = _linear(p, f"{base}.temporal", tape.constant(temporal_desc))
    static = _linear(p, f"{base}.static", tape.constant(static_desc))
    g = cfg.d_grid
    return (temporal + static).reshape(g, g, cfg.d_e)


def gather_agent_features(tape, grid: Tensor, view: ModalityView, positions, cfg: ModelConfig) -> Tensor:
    """Row i is the grid-cell feature at agent i's position at step tau;
    off-raster agents get the zero vector. Returns (K, d_e)."""
    cells, ok = _grid_cells(view, np.asarray(positions, dtype=np.float64), cfg)
    flat = grid.reshape(cfg.d_grid * cfg.d_grid, cfg.d_e)
    mask = tape.constant(np.repeat(ok.astype(np.float64)[:, None], cfg.d_e, axis=1))
    return flat.take(cells) * mask


def encode_target(tape, p, modality, x, omega_desc, cfg: ModelConfig, env=True) -> Tensor:
    """Target branch: absolute past motion with local perceptual context.

    ``x`` is the (tau, 2) past in view units; ``omega_desc`` the label
    fractions of the cell under the final observed position. Returns the
    LSTM's last hidden state, shape (1, d_v).
    """
    base = f"enc.{modality}"
    scale = MODALITY_SCALES[modality]["coord"]
    omega = None
    if env:
        omega = _linear(p, f"{base}.omega", tape.constant(np.asarray(omega_desc)[None, :]))
    return _sequence_hidden(tape, p, base, "target", np.asarray(x)[None] * scale, cfg, omega)


def encode_others(tape, p, modality, x_target, x_other, cfg: ModelConfig) -> Tensor:
    """Neighbor branch over relative motion x_target - x_other; translation
    of both tracks by the same offset cancels exactly. Returns (1, d_v)."""
    base = f"enc.{modality}"
    scale = MODALITY_SCALES[modality]["coord"]
    diff = (np.asarray(x_target) - np.asarray(x_other)) * scale
    return _sequence_hidden(tape, p, base, "others", diff[None], cfg)


def _pair_indices(n_others):
    """Ordered pairs (i, j) over non-target agents, including i == j."""
    i, j = np.meshgrid(np.arange(n_others), np.arange(n_others), indexing="ij")
    return i.reshape(-1), j.reshape(-1)


def _message_round(tape, p, base, h_k, hf, seg_ids, n_segments, pi, pj):
    rows = concat([hf.take(pi), hf.take(pj), h_k.take(seg_ids)], axis=1)
    msg = _mlp2(tape, p, f"{base}.msg", rows)
    total = apply_primitive(
        tape, "sorted_segment_sum", [msg], segment_ids=seg_ids, num_segments=n_segments
    )
    return apply_primitive(tape, "relu", [total])


def message_pass(tape, p, modality, states: Tensor, ext: Tensor, target: int, cfg: ModelConfig) -> Tensor:
    """One message-passing round with a graph-level target.

    The pair sum runs over ordered pairs of non-target agents (including
    i == j) of messages conditioned on the target state; summation order is
    canonicalized, so relabeling non-target agents leaves the result
    bitwise unchanged. Non-target rows pass through untouched; with a single
    agent the empty sum yields ReLU(0) = 0.
    """
    k = states.shape[0]
    base = f"enc.{modality}"
    h_k = states[target: target + 1]
    others = [i for i in range(k) if i != target]
    if others:
        hf = states.take(others) + ext.take(others)
        pi, pj = _pair_indices(len(others))
        seg = np.zeros(len(pi), dtype=np.intp)
        new_hk = _message_round(tape, p, base, h_k, hf, seg, 1, pi, pj)
    else:
        new_hk = apply_primitive(tape, "relu", [tape.constant(np.zeros((1, states.shape[1])))])
    parts = []
    if target > 0:
        parts.append(states[0:target])
    parts.append(new_hk)
    if target + 1 < k:
        parts.append(states[target + 1: k])
    return concat(parts, axis=0) if len(parts) > 1 else parts[0]


def readout(tape, p, modality, h_k: Tensor, cfg: ModelConfig) -> Tensor:
    """Map the target's post-propagation state to the condition vector c."""
    return _mlp2(tape, p, f"enc.{modality}.readout", h_k)


# ---------------------------------------------------------------------------
# batched condition encoding (the training path)
# ---------------------------------------------------------------------------


def encode_conditions_batch(tape, p, modality, batch, cfg: ModelConfig, env=True, soc=True) -> Tensor:
    """Condition vectors for a batch of prepared scenarios sharing one K.

    Dropping env zeroes the external features and local context; dropping
    soc bypasses message passing (c reads out the target's own state).
    Returns (B, d_c).
    """
    b = len(batch)
    k = batch[0].n_agents
    if any(inp.n_agents != k or inp.modality != modality for inp in batch):
        raise ShapeError("batch must share one modality and one agent count")
    base = f"enc.{modality}"
    scale = MODALITY_SCALES[modality]["coord"]
    g2 = cfg.d_grid * cfg.d_grid

    omega = None
    ext_rows = None
    if env:
        temporal = _linear(
            p, f"{base}.temporal", tape.constant(np.concatenate([inp.temporal_desc for inp in batch]))
        )
        static = _linear(
            p, f"{base}.static", tape.constant(np.concatenate([inp.static_desc for inp in batch]))
        )
        grid = temporal + static  # (B*G*G, d_e)
        cells = np.concatenate([inp.agent_cells + i * g2 for i, inp in enumerate(batch)])
        mask = np.concatenate([inp.agent_on_grid for inp in batch]).astype(np.float64)
        ext_rows = grid.take(cells) * tape.constant(
            np.repeat(mask[:, None], cfg.d_e, axis=1)
        )  # (B*K, d_e)
        target_cells_desc = np.stack(
            [
                inp.static_desc[inp.agent_cells[0]] * float(inp.agent_on_grid[0])
                for inp in batch
            ]
        )
        omega = _linear(p, f"{base}.omega", tape.constant(target_cells_desc))

    xs = np.stack([inp.x for inp in batch])  # (B, K, tau, 2)
    h_target = _sequence_hidden(tape, p, base, "target", xs[:, 0] * scale, cfg, omega)

    if not soc:
        return _mlp2(tape, p, f"{base}.readout", h_target)
    if k == 1:
        h_k = apply_primitive(tape, "relu", [tape.constant(np.zeros((b, cfg.d_v)))])
        return _mlp2(tape, p, f"{base}.readout", h_k)

    diffs = (xs[:, 0:1] - xs[:, 1:]) * scale  # (B, K-1, tau, 2)
    h_others = _sequence_hidden(
        tape, p, base, "others", diffs.reshape(b * (k - 1), cfg.tau, 2), cfg
    )
    if ext_rows is not None:
        nt = np.concatenate([np.arange(1, k) + i * k for i in range(b)])
        hf = h_others + ext_rows.take(nt)
    else:
        hf = h_others

    pi0, pj0 = _pair_indices(k - 1)
    p_per = len(pi0)
    pi = np.concatenate([pi0 + i * (k - 1) for i in range(b)])
    pj = np.concatenate([pj0 + i * (k - 1) for i in range(b)])
    seg = np.repeat(np.arange(b), p_per)
    h_k = h_target
    for _ in range(cfg.l_rounds):
        h_k = _message_round(tape, p, base, h_k, hf, seg, b, pi, pj)
    return _mlp2(tape, p, f"{base}.readout", h_k)


def encode_condition(tape, p, view: ModalityView, cfg: ModelConfig, env=True, soc=True) -> Tensor:
    """Condition vector c for one scenario view; shape (1, d_c)."""
    return encode_conditions_batch(
        tape, p, view.modality, [prepare_inputs(view, cfg)], cfg, env=env, soc=soc
    )
