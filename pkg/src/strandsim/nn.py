"""Networks and training for the neural strand simulator.

Stage 1 trains a strand autoencoder on canonical rest strands; the
encoder is then frozen. Stage 2 trains a per-strand dynamics MLP that
maps [root uv | rest latent | lock latent | body shape | current pose |
joint angular-velocity history] to canonical displacement vectors added
to the rest strand. Inference is stateless across frames: everything the
network sees comes from the boundary-condition window of the queried
frame, never from its own previous predictions.

Per training step the dynamic mode evaluates the net at t-2, t-1 and t;
the two earlier predictions enter the inertia term as plain detached
arrays. Parameters are float32-representable at init and re-quantized
through float32 when training ends, so checkpoints round-trip bit-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import energy, grad
from .body import BodyModel, pose_body
from .errors import CheckpointError, ConfigError, NumericError
from .groom import Groom
from .motion import HistoryWindow, ReducedMotion, head_transforms, history_window
from .rotation import RigidTransform

LATENT_DIM = 32
HIDDEN_DIM = 256
N_JOINTS = 6
SHAPE_DIM = 4
ACT_SLOPE = 0.01
INPUT_LAYOUT_VERSION = 1

CHECKPOINT_MAGIC = b"SSCK"
CHECKPOINT_VERSION = 1


def _f32(x: np.ndarray) -> np.ndarray:
    """Round to the nearest float32 grid point, kept as float64."""
    return np.asarray(x, dtype=np.float32).astype(np.float64)


# ------------------------------------------------------------------- MLP


@dataclass
class Mlp:
    """Dense layers applied as x @ W + b; leaky-rectified hidden layers
    (slope 0.01), linear output."""

    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ConfigError("weight/bias count mismatch")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ConfigError(f"layer {i}: bad shapes {w.shape} {b.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ConfigError(f"layer {i}: dim chain broken")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise NumericError(f"layer {i}: non-finite parameters")

    @property
    def dims(self) -> list:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def params(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def with_params(self, params: list) -> "Mlp":
        n = len(self.weights)
        return Mlp([params[2 * i] for i in range(n)], [params[2 * i + 1] for i in range(n)])

    def quantized(self) -> "Mlp":
        return Mlp([_f32(w) for w in self.weights], [_f32(b) for b in self.biases])


def init_mlp(dims: list, rng: np.random.Generator, zero_last: bool = False) -> Mlp:
    """He-normal init snapped to the float32 grid; zero_last makes the
    output layer exactly zero (identity-displacement start)."""
    weights, biases = [], []
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        if zero_last and i == len(dims) - 2:
            w = np.zeros((fan_in, fan_out))
        else:
            w = _f32(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        weights.append(w)
        biases.append(np.zeros(fan_out))
    return Mlp(weights, biases)


def mlp_forward(layers, x):
    """Forward pass; layers is an Mlp or a list of (W, b) pairs whose
    entries may be tape Values (training) or arrays (inference)."""
    if isinstance(layers, Mlp):
        layers = list(zip(layers.weights, layers.biases))
    xv = grad.value_of(x)
    if xv.ndim != 2 or xv.shape[1] != grad.value_of(layers[0][0]).shape[0]:
        raise ConfigError(
            f"input shape {xv.shape} does not match first layer "
            f"({grad.value_of(layers[0][0]).shape[0]} features expected)"
        )
    h = x
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        h = grad.matmul(h, w) + b
        if i < last:
            h = grad.leaky_relu(h, ACT_SLOPE)
    return h


def lift_mlp(tape: grad.Tape, m: Mlp) -> list:
    """Tape leaves for every layer, keeping the (W, b) pairing."""
    return [(tape.leaf(w), tape.leaf(b)) for w, b in zip(m.weights, m.biases)]


# ------------------------------------------------------------------ Adam


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0


def adam_init(params: list) -> AdamState:
    return AdamState([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(
    params: list,
    grads: list,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> list:
    """One bias-corrected Adam update; mutates state, returns new params."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ConfigError("adam_step: mismatched parameter lists")
    state.t += 1
    b1t = 1.0 - beta1**state.t
    b2t = 1.0 - beta2**state.t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * (g * g)
        m_hat = state.m[i] / b1t
        v_hat = state.v[i] / b2t
        out.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
    return out


# --------------------------------------------------------------- configs


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 256
    samples_per_step: int = 4
    learning_rate: float = 1e-3
    final_lr: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    history: int = 30
    seed: int = 0
    beta_range: tuple[float, float] = (-2.0, 2.0)
    loss_mode: str = "last-frame"  # or "all-frames"
    mode: str = "dynamic"  # or "static"

    def validate(self) -> None:
        if self.steps < 1 or self.batch_size < 1 or self.samples_per_step < 1:
            raise ConfigError("steps, batch_size and samples_per_step must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.final_lr is not None and self.final_lr <= 0:
            raise ConfigError("final_lr must be positive when set")
        if self.history < 1:
            raise ConfigError("history must be >= 1")
        if self.loss_mode not in ("last-frame", "all-frames"):
            raise ConfigError(f"unknown loss_mode {self.loss_mode!r}")
        if self.mode not in ("dynamic", "static"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if not self.beta_range[0] <= self.beta_range[1]:
            raise ConfigError("beta_range must be ordered")


def lr_schedule(steps: int, lr: float, final_lr: float | None) -> np.ndarray:
    """Per-step learning rates: constant, or hold-then-geometric-decay.

    Adam's step size is bounded by lr, so covering distance needs the
    full rate; the schedule holds lr for the first 60% of the run and
    decays geometrically to final_lr over the tail, which damps the
    oscillation Adam shows inside stiff, narrow valleys.
    """
    if final_lr is None:
        return np.full(steps, lr)
    hold = int(steps * 0.6)
    tail = max(steps - hold, 1)
    rates = np.full(steps, lr)
    rates[hold:] = lr * (final_lr / lr) ** (np.arange(1, steps - hold + 1) / tail)
    return rates


# ---------------------------------------------------------- strand codec


@dataclass
class StrandCodec:
    encoder: Mlp
    decoder: Mlp
    n_vertices: int

    def __post_init__(self):
        want = 3 * (self.n_vertices - 1)
        if self.encoder.dims[0] != want or self.encoder.dims[-1] != LATENT_DIM:
            raise ConfigError(f"encoder dims {self.encoder.dims} do not fit V={self.n_vertices}")
        if self.decoder.dims[0] != LATENT_DIM or self.decoder.dims[-1] != want:
            raise ConfigError(f"decoder dims {self.decoder.dims} do not fit V={self.n_vertices}")


def init_codec(n_vertices: int, rng: np.random.Generator) -> StrandCodec:
    d = 3 * (n_vertices - 1)
    return StrandCodec(
        init_mlp([d, HIDDEN_DIM, LATENT_DIM], rng),
        init_mlp([LATENT_DIM, HIDDEN_DIM, d], rng),
        n_vertices,
    )


def strand_features(canonical: np.ndarray) -> np.ndarray:
    """Flatten free canonical vertices to (S, 3(V-1)) network inputs."""
    c = np.asarray(canonical, dtype=np.float64)
    S, V = c.shape[0], c.shape[1]
    return c[:, 1:].reshape(S, 3 * (V - 1))


def encode(codec: StrandCodec, canonical: np.ndarray) -> np.ndarray:
    return grad.value_of(mlp_forward(codec.encoder, strand_features(canonical)))


def encode_strand(codec: StrandCodec, canonical_strand: np.ndarray) -> np.ndarray:
    return encode(codec, canonical_strand[None])[0]


def reconstruct(codec: StrandCodec, canonical: np.ndarray) -> np.ndarray:
    """decoder(encoder(s)) as free-vertex offsets (S, V-1, 3)."""
    z = encode(codec, canonical)
    out = grad.value_of(mlp_forward(codec.decoder, z))
    return out.reshape(len(out), codec.n_vertices - 1, 3)


def lock_latents(z: np.ndarray, lock_ids: np.ndarray) -> np.ndarray:
    """Per-strand lock latent: mean of z over the strand's lock members."""
    lock_ids = np.asarray(lock_ids)
    out = np.empty_like(z)
    for lock in np.unique(lock_ids):
        members = lock_ids == lock
        out[members] = z[members].mean(axis=0)
    return out


def lock_latent(codec: StrandCodec, canonical: np.ndarray, lock_ids: np.ndarray, lock_id: int) -> np.ndarray:
    members = np.asarray(lock_ids) == lock_id
    if not members.any():
        raise ConfigError(f"lock {lock_id} has no strands")
    return encode(codec, canonical[members]).mean(axis=0)


def train_encoder(grooms: list, cfg: TrainConfig, head_rest: RigidTransform | None = None):
    """Stage 1: reconstruction training on all strands of the grooms.

    Returns (codec, history); history rows carry step and mean-squared
    reconstruction error, plus a final RMSE row over the whole dataset.
    """
    cfg.validate()
    if not grooms:
        raise ConfigError("train_encoder needs at least one groom")
    V = grooms[0].n_vertices
    feats = []
    for g in grooms:
        if g.n_vertices != V:
            raise ConfigError("grooms must share a vertex count")
        rest = energy.build_rest(g, energy.EnergyConfig(), head_rest)
        feats.append(strand_features(rest.canonical))
    data = np.concatenate(feats, axis=0)

    rng = np.random.default_rng(cfg.seed)
    codec = init_codec(V, rng)
    params = codec.encoder.params() + codec.decoder.params()
    opt = adam_init(params)
    n_enc = len(codec.encoder.params())
    rates = lr_schedule(cfg.steps, cfg.learning_rate, cfg.final_lr)
    history = []
    for step in range(cfg.steps):
        take = rng.integers(0, len(data), size=min(cfg.batch_size, len(data)))
        x = data[take]
        tape = grad.Tape()
        leaves = [tape.leaf(p) for p in params]
        pairs = [(leaves[2 * i], leaves[2 * i + 1]) for i in range(len(params) // 2)]
        enc_pairs, dec_pairs = pairs[: n_enc // 2], pairs[n_enc // 2 :]
        z = mlp_forward(enc_pairs, x)
        out = mlp_forward(dec_pairs, z)
        diff = out - x
        loss = grad.vsum(diff * diff) * (1.0 / diff.value.size)
        try:
            tape.backward(loss)
        except NumericError as exc:
            raise NumericError(f"encoder training diverged at step {step}: {exc}") from exc
        grads = [leaf.grad for leaf in leaves]
        params = adam_step(params, grads, opt, float(rates[step]), cfg.beta1, cfg.beta2, cfg.eps)
        history.append({"step": step, "mse": float(grad.value_of(loss))})

    params = [_f32(p) for p in params]
    codec = StrandCodec(
        codec.encoder.with_params(params[:n_enc]),
        codec.decoder.with_params(params[n_enc:]),
        V,
    )
    out = grad.value_of(mlp_forward(codec.decoder, grad.value_of(mlp_forward(codec.encoder, data))))
    history.append({"step": cfg.steps, "rmse": float(np.sqrt(np.mean((out - data) ** 2)))})
    return codec, history


# ------------------------------------------------------- simulator network


@dataclass(frozen=True)
class InputLayout:
    """Versioned wire format of the simulator input vector."""

    mode: str  # "dynamic" or "static"
    history: int
    n_vertices: int
    version: int = INPUT_LAYOUT_VERSION
    n_joints: int = N_JOINTS
    latent_dim: int = LATENT_DIM
    shape_dim: int = SHAPE_DIM

    def validate(self) -> None:
        if self.mode not in ("dynamic", "static"):
            raise ConfigError(f"unknown layout mode {self.mode!r}")
        if self.mode == "dynamic" and self.history < 1:
            raise ConfigError("dynamic layout needs history >= 1")

    @property
    def input_dim(self) -> int:
        base = 2 + 2 * self.latent_dim + self.shape_dim + 4 * self.n_joints
        if self.mode == "dynamic":
            base += 3 * self.n_joints * self.history
        return base

    @property
    def output_dim(self) -> int:
        return 3 * (self.n_vertices - 1)


@dataclass
class SimulatorNet:
    mlp: Mlp
    layout: InputLayout

    def __post_init__(self):
        self.layout.validate()
        if self.mlp.dims[0] != self.layout.input_dim or self.mlp.dims[-1] != self.layout.output_dim:
            raise ConfigError(
                f"network dims {self.mlp.dims} do not match layout "
                f"({self.layout.input_dim} -> {self.layout.output_dim})"
            )


def init_simulator(layout: InputLayout, rng: np.random.Generator) -> SimulatorNet:
    mlp = init_mlp([layout.input_dim, HIDDEN_DIM, HIDDEN_DIM, layout.output_dim], rng, zero_last=True)
    return SimulatorNet(mlp, layout)


def assemble_input(
    layout: InputLayout,
    root_uv: np.ndarray,
    z_rest: np.ndarray,
    z_lock: np.ndarray,
    window: HistoryWindow,
) -> np.ndarray:
    """(S, input_dim) rows: [uv | z_rest | z_lock | beta | pose | history]."""
    S = len(root_uv)
    if z_rest.shape != (S, layout.latent_dim) or z_lock.shape != (S, layout.latent_dim):
        raise ConfigError("latent shapes do not match the layout")
    shared = [np.asarray(window.beta, dtype=np.float64), window.pose.reshape(-1)]
    if layout.mode == "dynamic":
        vel = window.velocities[: layout.history]
        if len(vel) < layout.history:
            raise ConfigError(f"window has {len(vel)} velocity rows, layout needs {layout.history}")
        shared.append(vel.reshape(-1))
    shared = np.concatenate(shared)
    x = np.concatenate([root_uv, z_rest, z_lock, np.tile(shared, (S, 1))], axis=1)
    if x.shape[1] != layout.input_dim:
        raise ConfigError(f"assembled {x.shape[1]} features, layout says {layout.input_dim}")
    return x


def predict_displacement(net_layers, layout: InputLayout, x):
    """Canonical free-vertex displacements (S, V-1, 3); tape-aware."""
    out = mlp_forward(net_layers, x)
    return grad.reshape(out, (grad.value_of(x).shape[0], layout.n_vertices - 1, 3))


def predict(
    net: SimulatorNet,
    rest: energy.GroomRest,
    z_rest: np.ndarray,
    z_lock: np.ndarray,
    window: HistoryWindow,
    root_uv: np.ndarray,
    head: RigidTransform,
) -> np.ndarray:
    """World-space strand positions (S, V, 3) for one frame."""
    x = assemble_input(net.layout, root_uv, z_rest, z_lock, window)
    disp = predict_displacement(net.mlp, net.layout, x)
    st = energy.make_state(rest, rest.canonical[:, 1:] + disp, head)
    return grad.value_of(st.positions)


# ---------------------------------------------------------------- stage 2


@dataclass
class SimGroom:
    """Per-groom constants used by stage-2 training."""

    groom: Groom
    rest: energy.GroomRest
    z_rest: np.ndarray
    z_lock: np.ndarray


def prepare_groom(g: Groom, codec: StrandCodec, energy_cfg: energy.EnergyConfig) -> SimGroom:
    rest = energy.build_rest(g, energy_cfg)
    z = encode(codec, rest.canonical)
    return SimGroom(g, rest, z, lock_latents(z, g.lock_ids))


def subset_rest(rest: energy.GroomRest, idx: np.ndarray) -> energy.GroomRest:
    """Minibatch view of a groom's rest data.

    Adhesion pairs are kept only when both endpoints fall in the subset;
    rho_rest stays calibrated on the full groom, which under-counts
    subset density and so never penalizes a configuration the full groom
    would not.
    """
    idx = np.asarray(idx)
    V = rest.canonical.shape[1]
    strand_new = np.full(rest.canonical.shape[0], -1, dtype=np.int64)
    strand_new[idx] = np.arange(len(idx))
    pairs = rest.adhesion_pairs
    if len(pairs):
        s_i, v_i = pairs[:, 0] // V, pairs[:, 0] % V
        s_j, v_j = pairs[:, 1] // V, pairs[:, 1] % V
        keep = (strand_new[s_i] >= 0) & (strand_new[s_j] >= 0)
        pairs = np.stack(
            [strand_new[s_i[keep]] * V + v_i[keep], strand_new[s_j[keep]] * V + v_j[keep]], axis=1
        )
    return energy.GroomRest(
        rest.canonical[idx],
        rest.rest_lengths[idx],
        rest.rest_rel_imag[idx],
        rest.pair_rest_lengths[idx],
        rest.anchor[idx],
        rest.root_rest_world[idx],
        rest.head_rest,
        rest.rest_world[idx],
        pairs,
        rest.rho_rest,
        rest.cfg,
    )


def _clip_heads(clip: ReducedMotion) -> list:
    rot, pos = head_transforms(clip)
    return [RigidTransform(rot[t], pos[t]) for t in range(clip.frames)]


def train_simulator(
    grooms: list,
    clips: list,
    codec: StrandCodec,
    cfg: TrainConfig,
    energy_cfg: energy.EnergyConfig,
    body_model: BodyModel | None = None,
):
    """Stage 2: fit the dynamics MLP against the physics losses.

    Returns (net, history). Each step draws samples_per_step tuples of
    (groom, strand minibatch, clip, frame, body shape); dynamic mode runs
    the net at t-2/t-1 (detached) and t (on tape) and adds the inertia
    term, static mode evaluates the quasi-static losses at one frame.
    """
    cfg.validate()
    energy_cfg.validate()
    if not grooms or not clips:
        raise ConfigError("train_simulator needs grooms and clips")
    need = 3 if cfg.mode == "dynamic" else 1
    for c in clips:
        if c.frames < need:
            raise ConfigError(f"clip too short: {c.frames} frame(s)")

    preps = [prepare_groom(g, codec, energy_cfg) for g in grooms]
    heads = [_clip_heads(c) for c in clips]
    V = codec.n_vertices
    layout = InputLayout(cfg.mode, cfg.history if cfg.mode == "dynamic" else 0, V)
    rng = np.random.default_rng(cfg.seed)
    net = init_simulator(layout, rng)
    params = net.mlp.params()
    opt = adam_init(params)
    rates = lr_schedule(cfg.steps, cfg.learning_rate, cfg.final_lr)
    body_cache: dict = {}
    history = []

    for step in range(cfg.steps):
        tape = grad.Tape()
        leaves = [tape.leaf(p) for p in params]
        pairs = [(leaves[2 * i], leaves[2 * i + 1]) for i in range(len(params) // 2)]
        plain_net = net.mlp.with_params([grad.value_of(p) for p in params])
        total = 0.0
        term_sums = dict.fromkeys(energy.TERM_ORDER, 0.0)
        n_strands = 0
        for _ in range(cfg.samples_per_step):
            gi = int(rng.integers(len(preps)))
            ci = int(rng.integers(len(clips)))
            clip = clips[ci]
            t0 = need - 1
            t = int(rng.integers(t0, clip.frames))
            beta = rng.uniform(cfg.beta_range[0], cfg.beta_range[1], size=SHAPE_DIM)
            prep = preps[gi]
            S = prep.rest.canonical.shape[0]
            take = rng.permutation(S)[: min(cfg.batch_size, S)]
            sub_rest = subset_rest(prep.rest, take)
            uv = prep.groom.root_uv[take]
            zr, zl = prep.z_rest[take], prep.z_lock[take]

            def frame_inputs(tau):
                w = history_window(clip, tau, max(cfg.history, 1), beta)
                return assemble_input(layout, uv, zr, zl, w), heads[ci][tau]

            def body_at(tau):
                if body_model is None:
                    return None
                key = (ci, tau, beta.tobytes())
                if key not in body_cache:
                    if len(body_cache) > 256:
                        body_cache.clear()
                    body_cache[key] = pose_body(body_model, clip.pose_at(tau), beta)
                return body_cache[key]

            body_state = body_at(t)

            x_t, head_t = frame_inputs(t)
            disp = grad.reshape(mlp_forward(pairs, x_t), (len(take), V - 1, 3))
            st = energy.make_state(sub_rest, sub_rest.canonical[:, 1:] + disp, head_t)

            if cfg.mode == "dynamic":
                prevs = []
                for tau in (t - 1, t - 2):
                    x_p, head_p = frame_inputs(tau)
                    d_p = grad.value_of(mlp_forward(plain_net, x_p)).reshape(len(take), V - 1, 3)
                    st_p = energy.make_state(sub_rest, sub_rest.canonical[:, 1:] + d_p, head_p)
                    prevs.append((grad.value_of(st_p.positions), head_p, x_p, tau))
                loss, terms = energy.total_loss(
                    st,
                    energy_cfg,
                    body_state=body_state,
                    prev=prevs[0][0],
                    prev2=prevs[1][0],
                    dt=clip.frame_time,
                    quasi_static=False,
                )
                if cfg.loss_mode == "all-frames":
                    for (_, head_p, x_p, tau) in prevs:
                        d_tape = grad.reshape(mlp_forward(pairs, x_p), (len(take), V - 1, 3))
                        st_tape = energy.make_state(sub_rest, sub_rest.canonical[:, 1:] + d_tape, head_p)
                        l_p, t_p = energy.total_loss(st_tape, energy_cfg, body_state=body_at(tau))
                        loss = l_p + loss
                        for k, v in t_p.items():
                            terms[k] = terms.get(k, 0.0) + v
            else:
                loss, terms = energy.total_loss(st, energy_cfg, body_state=body_state)

            total = loss + total
            n_strands += len(take)
            for k, v in terms.items():
                term_sums[k] += v

        scale = 1.0 / max(n_strands, 1)
        total = total * scale
        try:
            tape.backward(total)
        except NumericError as exc:
            raise NumericError(f"simulator training diverged at step {step}: {exc}") from exc
        grads = [leaf.grad for leaf in leaves]
        params = adam_step(params, grads, opt, float(rates[step]), cfg.beta1, cfg.beta2, cfg.eps)
        net = SimulatorNet(net.mlp.with_params(params), layout)
        row = {"step": step, "total": float(grad.value_of(total))}
        row.update({k: v * scale for k, v in term_sums.items()})
        history.append(row)

    net = SimulatorNet(net.mlp.quantized(), layout)
    return net, history


# ------------------------------------------------------------ checkpoints


@dataclass
class Checkpoint:
    kind: str
    mlps: dict
    manifest: dict


def _segment_entry(name: str, m: Mlp) -> dict:
    return {"name": name, "dims": [int(d) for d in m.dims]}


def _pack_params(mlps: list) -> np.ndarray:
    chunks = []
    for _, m in mlps:
        for w, b in zip(m.weights, m.biases):
            chunks.append(np.asarray(w, dtype="<f4").ravel())
            chunks.append(np.asarray(b, dtype="<f4").ravel())
    return np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f4")


def save_checkpoint(path, kind: str, mlps: list, extra: dict) -> None:
    """mlps: ordered list of (name, Mlp); extra merges into the manifest."""
    manifest = {"kind": kind, "segments": [_segment_entry(n, m) for n, m in mlps]}
    manifest.update(extra)
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    buf = _pack_params(mlps)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<B", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(buf.tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"not a checkpoint: magic {raw[:4]!r}")
    if len(raw) < 9:
        raise CheckpointError("checkpoint truncated before header")
    version = raw[4]
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (blob_len,) = struct.unpack("<I", raw[5:9])
    blob = raw[9 : 9 + blob_len]
    if len(blob) != blob_len:
        raise CheckpointError("checkpoint truncated inside manifest")
    try:
        manifest = json.loads(blob.decode())
    except ValueError as exc:
        raise CheckpointError(f"manifest is not valid JSON: {exc}") from exc
    buf = np.frombuffer(raw[9 + blob_len :], dtype="<f4")
    need = 0
    for seg in manifest.get("segments", []):
        dims = seg["dims"]
        for i in range(len(dims) - 1):
            need += dims[i] * dims[i + 1] + dims[i + 1]
    if len(buf) != need:
        raise CheckpointError(f"parameter buffer holds {len(buf)} floats, manifest needs {need}")
    mlps = {}
    off = 0
    for seg in manifest.get("segments", []):
        dims = seg["dims"]
        weights, biases = [], []
        for i in range(len(dims) - 1):
            n = dims[i] * dims[i + 1]
            weights.append(buf[off : off + n].astype(np.float64).reshape(dims[i], dims[i + 1]))
            off += n
            biases.append(buf[off : off + dims[i + 1]].astype(np.float64))
            off += dims[i + 1]
        mlps[seg["name"]] = Mlp(weights, biases)
    return Checkpoint(manifest.get("kind", "?"), mlps, manifest)


def layout_to_manifest(layout: InputLayout) -> dict:
    return {
        "version": layout.version,
        "mode": layout.mode,
        "history": layout.history,
        "n_joints": layout.n_joints,
        "latent_dim": layout.latent_dim,
        "shape_dim": layout.shape_dim,
        "n_vertices": layout.n_vertices,
    }


def layout_from_manifest(d: dict) -> InputLayout:
    if d.get("version") != INPUT_LAYOUT_VERSION:
        raise CheckpointError(f"input layout version {d.get('version')} not supported")
    return InputLayout(
        d["mode"],
        d["history"],
        d["n_vertices"],
        version=d["version"],
        n_joints=d["n_joints"],
        latent_dim=d["latent_dim"],
        shape_dim=d["shape_dim"],
    )


def save_codec(path, codec: StrandCodec, extra: dict | None = None) -> None:
    meta = {"n_vertices": codec.n_vertices}
    meta.update(extra or {})
    save_checkpoint(path, "codec", [("encoder", codec.encoder), ("decoder", codec.decoder)], meta)


def load_codec(path) -> tuple[StrandCodec, dict]:
    ck = load_checkpoint(path)
    if ck.kind != "codec":
        raise CheckpointError(f"expected a codec checkpoint, found kind {ck.kind!r}")
    return StrandCodec(ck.mlps["encoder"], ck.mlps["decoder"], ck.manifest["n_vertices"]), ck.manifest


def save_simulator(path, net: SimulatorNet, encoder: Mlp, extra: dict | None = None) -> None:
    meta = {"input_layout": layout_to_manifest(net.layout)}
    meta.update(extra or {})
    save_checkpoint(path, "simulator", [("encoder", encoder), ("simulator", net.mlp)], meta)


def load_simulator(path) -> tuple[SimulatorNet, Mlp, dict]:
    ck = load_checkpoint(path)
    if ck.kind != "simulator":
        raise CheckpointError(f"expected a simulator checkpoint, found kind {ck.kind!r}")
    layout = layout_from_manifest(ck.manifest["input_layout"])
    return SimulatorNet(ck.mlps["simulator"], layout), ck.mlps["encoder"], ck.manifest
