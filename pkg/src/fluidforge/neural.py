"""Graph-network surrogate: radius graph, features, forward pass, training.

The network follows the encoder / processor / decoder layout: node and edge
MLP encoders into a shared latent width, a stack of message-passing layers
with non-shared edge- and node-update MLPs, residual connections, and sum
aggregation from edges to receiver nodes, then an MLP decoder that emits a
per-particle acceleration.  Every MLP has two ReLU hidden layers plus a
linear output, followed by LayerNorm except at the decoder output.
Gradients come from the tape in :mod:`fluidforge.autodiff`.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import autodiff as ad
from .core import BOUNDARY_BAND
from .errors import CorruptionError, FormatError, IncompatibilityError

CONNECTIVITY_RADIUS = 0.015
HISTORY_FRAMES = 6
EMBEDDING_DIM = 16
# Input-history position noise during training, in domain units (about one
# tenth of the connectivity radius).
TRAIN_NOISE_STD = 3e-4

WEIGHTS_MAGIC = b"FLW1"
WEIGHTS_VERSION = 1


def build_graph(positions: np.ndarray, radius: float = CONNECTIVITY_RADIUS):
    """All ordered pairs (i, j), i != j, with ||p_i - p_j|| <= radius.

    Spatial hashing with cell size = radius: only the 3^dim neighborhood of
    each cell can contain partners, giving O(N + E) expected work.  Returns
    (senders, receivers) sorted by (receiver, sender) so downstream
    aggregation order is deterministic.
    """
    positions = np.asarray(positions, dtype=float)
    n, dim = positions.shape
    empty = (np.zeros(0, dtype=np.int64),) * 2
    if n == 0 or radius <= 0:
        if radius <= 0:
            raise ValueError("radius must be positive")
        return empty
    cells = np.floor(positions / radius).astype(np.int64)
    span = int(np.ceil(1.0 / radius)) + 3
    key = cells[:, 0] + 1
    for axis in range(1, dim):
        key = key * span + cells[:, axis] + 1
    order = np.argsort(key, kind="stable")
    sorted_key = key[order]
    unique_keys, starts = np.unique(sorted_key, return_index=True)
    counts = np.diff(np.append(starts, n))
    senders, receivers = [], []
    for offset in product((-1, 0, 1), repeat=dim):
        shifted = cells + np.asarray(offset)
        neighbor_key = shifted[:, 0] + 1
        for axis in range(1, dim):
            neighbor_key = neighbor_key * span + shifted[:, axis] + 1
        slot = np.searchsorted(unique_keys, neighbor_key)
        slot_clipped = np.minimum(slot, len(unique_keys) - 1)
        hit = unique_keys[slot_clipped] == neighbor_key
        if not hit.any():
            continue
        src = np.nonzero(hit)[0]
        bucket_start = starts[slot_clipped[hit]]
        bucket_count = counts[slot_clipped[hit]]
        total = int(bucket_count.sum())
        if total == 0:
            continue
        ends = np.cumsum(bucket_count)
        flat = (np.arange(total) - np.repeat(ends - bucket_count, bucket_count)
                + np.repeat(bucket_start, bucket_count))
        cand_i = np.repeat(src, bucket_count)
        cand_j = order[flat]
        delta = positions[cand_i] - positions[cand_j]
        keep = (cand_i != cand_j) & ((delta ** 2).sum(axis=1) <= radius * radius)
        senders.append(cand_i[keep])
        receivers.append(cand_j[keep])
    if not senders:
        return empty
    senders = np.concatenate(senders)
    receivers = np.concatenate(receivers)
    rank = np.lexsort((senders, receivers))
    return senders[rank], receivers[rank]


@dataclass(frozen=True)
class SurrogateConfig:
    """Architecture hyperparameters.

    The full-size configuration (10 layers, width 128) is the inference
    default; ``desk()`` is small enough to train on a CPU in seconds.
    """

    dim: int = 2
    layers: int = 10
    width: int = 128
    radius: float = CONNECTIVITY_RADIUS
    material_count: int = 4

    @property
    def node_feature_dim(self) -> int:
        # 5 finite-difference velocities + wall distances + material embedding
        return 5 * self.dim + 2 * self.dim + EMBEDDING_DIM

    @property
    def edge_feature_dim(self) -> int:
        return self.dim + 1

    @classmethod
    def desk(cls, dim: int = 2) -> "SurrogateConfig":
        return cls(dim=dim, layers=3, width=32)

    def to_dict(self) -> dict:
        return {"dim": self.dim, "layers": self.layers, "width": self.width,
                "radius": self.radius, "material_count": self.material_count}


@dataclass
class NormStats:
    """Per-axis input/output normalization, frozen at training time."""

    vel_mean: np.ndarray
    vel_std: np.ndarray
    accel_mean: np.ndarray
    accel_std: np.ndarray

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist()
                for k in ("vel_mean", "vel_std", "accel_mean", "accel_std")}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(**{k: np.asarray(d[k], dtype=float) for k in d})

    @classmethod
    def identity(cls, dim: int) -> "NormStats":
        zero, one = np.zeros(dim), np.ones(dim)
        return cls(zero.copy(), one.copy(), zero.copy(), one.copy())


@dataclass
class GraphBatch:
    """One network input: kinematic node features plus graph structure.

    ``kinematic`` excludes the material embedding block (the embedding table
    is a trainable weight, so the lookup happens inside the forward pass);
    the full node feature dimension is kinematic width + EMBEDDING_DIM.
    """

    kinematic: np.ndarray      # (N, 5*dim + 2*dim)
    material_ids: np.ndarray   # (N,)
    senders: np.ndarray
    receivers: np.ndarray
    edge_features: np.ndarray  # (E, dim + 1)

    @property
    def n(self) -> int:
        return self.kinematic.shape[0]

    @property
    def node_feature_dim(self) -> int:
        return self.kinematic.shape[1] + EMBEDDING_DIM


def build_graph_capped(positions: np.ndarray, radius: float, max_degree: int):
    """Radius graph keeping only the ``max_degree`` nearest senders per node.

    A guard for degenerate (over-dense) states whose full radius graph
    would grow quadratically in both size and construction cost; the
    k-nearest query keeps the per-step work bounded.  Healthy desk states
    sit below the cap, where this agrees with :func:`build_graph`.
    """
    positions = np.asarray(positions, dtype=float)
    n = positions.shape[0]
    if n == 0:
        return (np.zeros(0, dtype=np.int64),) * 2
    tree = cKDTree(positions)
    k = min(max_degree + 1, n)
    distances, neighbors = tree.query(positions, k=k,
                                      distance_upper_bound=radius)
    if k == 1:
        distances = distances[:, None]
        neighbors = neighbors[:, None]
    receivers = np.repeat(np.arange(n, dtype=np.int64), k)
    senders = neighbors.reshape(-1).astype(np.int64)
    keep = np.isfinite(distances.reshape(-1)) & (senders != receivers)
    senders, receivers = senders[keep], receivers[keep]
    rank = np.lexsort((senders, receivers))
    return senders[rank], receivers[rank]


def assemble_features(position_history: np.ndarray, material_ids: np.ndarray,
                      stats: NormStats, dt: float,
                      radius: float = CONNECTIVITY_RADIUS,
                      wall_margin: float = 0.0,
                      max_degree: int | None = None) -> GraphBatch:
    """Build a GraphBatch from the last HISTORY_FRAMES positions.

    Node row: 5 normalized finite-difference velocities, then the distance
    to each domain wall divided by the radius and clipped to [-1, 1].
    ``wall_margin`` shifts the walls inward to where the solver actually
    clamps particles (the boundary band); without it the wall features
    saturate before a particle can ever feel the floor.  Edges come from
    the radius graph on the newest frame, optionally degree-capped.
    """
    history = np.asarray(position_history, dtype=float)
    if history.ndim != 3 or history.shape[0] != HISTORY_FRAMES:
        raise ValueError(f"position history must have {HISTORY_FRAMES} frames")
    _, n, dim = history.shape
    velocities = np.diff(history, axis=0) / dt                   # (5, N, dim)
    normalized = (velocities - stats.vel_mean) / stats.vel_std
    vel_block = normalized.transpose(1, 0, 2).reshape(n, 5 * dim)
    current = history[-1]
    walls = np.concatenate([current - wall_margin,
                            (1.0 - wall_margin) - current], axis=1)  # (N, 2*dim)
    wall_block = np.clip(walls / radius, -1.0, 1.0)
    if max_degree is None:
        senders, receivers = build_graph(current, radius)
    else:
        senders, receivers = build_graph_capped(current, radius, max_degree)
    delta = current[senders] - current[receivers]
    magnitude = np.linalg.norm(delta, axis=1, keepdims=True)
    return GraphBatch(
        kinematic=np.concatenate([vel_block, wall_block], axis=1),
        material_ids=np.asarray(material_ids, dtype=np.int64),
        senders=senders, receivers=receivers,
        edge_features=np.concatenate([delta, magnitude], axis=1))


@dataclass
class SurrogateWeights:
    """All trainable parameters plus frozen normalization statistics.

    ``cast_cache`` holds lazily created reduced-precision copies of the
    parameters for the latency-sensitive inference path; it is invalidated
    by copying, never shared.
    """

    config: SurrogateConfig
    stats: NormStats
    params: dict = field(default_factory=dict)
    cast_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def copy(self) -> "SurrogateWeights":
        return SurrogateWeights(self.config, NormStats.from_dict(self.stats.to_dict()),
                                {k: v.copy() for k, v in self.params.items()})


def _mlp_param_names(prefix: str, with_norm: bool):
    names = [f"{prefix}_w0", f"{prefix}_b0", f"{prefix}_w1", f"{prefix}_b1",
             f"{prefix}_w2", f"{prefix}_b2"]
    if with_norm:
        names += [f"{prefix}_ln_g", f"{prefix}_ln_b"]
    return names


def _init_mlp(params: dict, rng, prefix: str, sizes, with_norm: bool) -> None:
    for k in range(3):
        fan_in, fan_out = sizes[k], sizes[k + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params[f"{prefix}_w{k}"] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        params[f"{prefix}_b{k}"] = np.zeros(fan_out)
    if with_norm:
        params[f"{prefix}_ln_g"] = np.ones(sizes[3])
        params[f"{prefix}_ln_b"] = np.zeros(sizes[3])


def init_weights(config: SurrogateConfig, stats: NormStats | None = None,
                 seed: int = 0) -> SurrogateWeights:
    """Xavier-uniform MLP weights, zero biases, unit LayerNorm gains."""
    rng = np.random.default_rng(seed)
    w = config.width
    params: dict = {}
    _init_mlp(params, rng, "enc_node", (config.node_feature_dim, w, w, w), True)
    _init_mlp(params, rng, "enc_edge", (config.edge_feature_dim, w, w, w), True)
    for layer in range(config.layers):
        _init_mlp(params, rng, f"edge{layer}", (3 * w, w, w, w), True)
        _init_mlp(params, rng, f"node{layer}", (2 * w, w, w, w), True)
    _init_mlp(params, rng, "dec", (w, w, w, config.dim), False)
    params["material_embedding"] = rng.normal(
        scale=0.1, size=(config.material_count, EMBEDDING_DIM))
    if stats is None:
        stats = NormStats.identity(config.dim)
    return SurrogateWeights(config, stats, params)


def _mlp(p, prefix, x, with_norm: bool):
    h = ad.relu(ad.linear(x, p[f"{prefix}_w0"], p[f"{prefix}_b0"]))
    return _mlp_tail(p, prefix, h, with_norm)


def _mlp_multi(p, prefix, parts, with_norm: bool):
    """Same MLP, first layer fed by implicit concatenation of ``parts``."""
    h = ad.relu(ad.linear_multi(parts, p[f"{prefix}_w0"], p[f"{prefix}_b0"]))
    return _mlp_tail(p, prefix, h, with_norm)


def _mlp_tail(p, prefix, h, with_norm: bool):
    h = ad.relu(ad.linear(h, p[f"{prefix}_w1"], p[f"{prefix}_b1"]))
    h = ad.linear(h, p[f"{prefix}_w2"], p[f"{prefix}_b2"])
    if with_norm:
        h = ad.layer_norm(h, p[f"{prefix}_ln_g"], p[f"{prefix}_ln_b"])
    return h


def _forward_normalized(p, config: SurrogateConfig, batch: GraphBatch):
    """Raw decoder output (normalized acceleration), tape-recorded when the
    parameters are Vars."""
    embedding = ad.gather(p["material_embedding"], batch.material_ids)
    nodes = _mlp_multi(p, "enc_node", [batch.kinematic, embedding], True)
    if len(batch.senders):
        edges = _mlp(p, "enc_edge", batch.edge_features, True)
    else:
        edges = None
    for layer in range(config.layers):
        if edges is not None:
            message_parts = [edges,
                             ad.gather(nodes, batch.senders),
                             ad.gather(nodes, batch.receivers)]
            edges = ad.add(edges, _mlp_multi(p, f"edge{layer}", message_parts, True))
            # receivers are sorted by construction; segmented reduction
            incoming = ad.scatter_sum(edges, batch.receivers, batch.n,
                                      index_sorted=True)
        else:
            incoming = np.zeros((batch.n, config.width))
        nodes = ad.add(nodes, _mlp_multi(p, f"node{layer}", [nodes, incoming], True))
    return _mlp(p, "dec", nodes, False)


def forward(weights: SurrogateWeights, batch: GraphBatch,
            dtype=None) -> np.ndarray:
    """Per-particle acceleration prediction (denormalized, real units).

    ``dtype=np.float32`` runs the whole pass in single precision (the
    latency-sensitive path); parameters are cast once and cached, so they
    must not be mutated afterwards.
    """
    config = weights.config
    if batch.node_feature_dim != config.node_feature_dim:
        raise ValueError(
            f"batch features ({batch.node_feature_dim}) do not match the "
            f"architecture ({config.node_feature_dim})")
    params = weights.params
    if dtype is not None and dtype != np.float64:
        key = np.dtype(dtype).name
        if key not in weights.cast_cache:
            weights.cast_cache[key] = {k: v.astype(dtype) for k, v in params.items()}
        params = weights.cast_cache[key]
        batch = GraphBatch(kinematic=batch.kinematic.astype(dtype),
                           material_ids=batch.material_ids,
                           senders=batch.senders, receivers=batch.receivers,
                           edge_features=batch.edge_features.astype(dtype))
    with ad.no_grad():
        raw = _forward_normalized(params, config, batch)
    return raw * weights.stats.accel_std + weights.stats.accel_mean


def loss_and_gradients(weights: SurrogateWeights, batch: GraphBatch,
                       target_accels: np.ndarray):
    """Relative-error loss in normalized space and exact parameter gradients."""
    targets = np.asarray(target_accels, dtype=float)
    if targets.shape != (batch.n, weights.config.dim):
        raise ValueError("targets must be (N, dim)")
    normalized = (targets - weights.stats.accel_mean) / weights.stats.accel_std
    variables = {name: ad.Var(value) for name, value in weights.params.items()}
    raw = _forward_normalized(variables, weights.config, batch)
    loss = ad.relative_l2_loss(raw, normalized)
    ad.backward(loss)
    grads = {name: (var.grad if var.grad is not None else np.zeros_like(var.value))
             for name, var in variables.items()}
    return float(loss.value), grads


def integrate(positions, velocities, accel, dt, lower=0.0, upper=1.0):
    """Semi-implicit Euler step with a domain clamp."""
    v = np.asarray(velocities, dtype=float) + dt * np.asarray(accel, dtype=float)
    p = np.clip(np.asarray(positions, dtype=float) + dt * v, lower, upper)
    return p, v


# --- training ---------------------------------------------------------------

@dataclass
class TrainingSample:
    """One supervised pair: 6-frame history plus the next-step acceleration."""

    history: np.ndarray        # (HISTORY_FRAMES, N, dim)
    material_ids: np.ndarray   # (N,)
    target_accels: np.ndarray  # (N, dim)
    dt: float
    wall_margin: float = 0.0


def samples_from_trajectory(traj) -> list:
    """Slice a coarse trajectory into (history, target acceleration) pairs.

    The target is the central second difference (p[t+1] - 2 p[t] + p[t-1])
    / dt^2, which is exactly the acceleration that makes the semi-implicit
    integrator reproduce p[t+1] from the history.
    """
    positions = np.asarray(traj.positions, dtype=float)
    dt = traj.dt
    samples = []
    margin = (BOUNDARY_BAND / traj.config.grid_resolution
              if traj.config is not None else 0.0)
    for t in range(HISTORY_FRAMES - 1, traj.frame_count - 1):
        history = positions[t - HISTORY_FRAMES + 1:t + 1]
        target = (positions[t + 1] - 2 * positions[t] + positions[t - 1]) / dt ** 2
        samples.append(TrainingSample(history=history,
                                      material_ids=traj.material_ids.astype(np.int64),
                                      target_accels=target, dt=dt,
                                      wall_margin=margin))
    return samples


def compute_norm_stats(samples) -> NormStats:
    """Dataset-wide per-axis velocity/acceleration statistics."""
    vels, accs = [], []
    for sample in samples:
        vels.append((np.diff(sample.history, axis=0) / sample.dt).reshape(-1, sample.history.shape[-1]))
        accs.append(sample.target_accels)
    vels = np.concatenate(vels)
    accs = np.concatenate(accs)
    return NormStats(vel_mean=vels.mean(axis=0),
                     vel_std=np.maximum(vels.std(axis=0), 1e-8),
                     accel_mean=accs.mean(axis=0),
                     accel_std=np.maximum(accs.std(axis=0), 1e-8))


def train(weights: SurrogateWeights, dataset, steps: int, lr: float = 1e-4,
          noise_std: float = TRAIN_NOISE_STD, lr_decay: float = 0.1,
          lr_decay_steps: float = 5e5, seed: int = 0,
          max_degree: int | None = None):
    """Adam updates with batch size 1 and input-history position noise.

    The learning rate decays exponentially: lr * lr_decay ** (t / decay
    steps).  Returns the updated weights and the per-step loss history;
    deterministic for a fixed seed.
    """
    if not dataset:
        raise ValueError("dataset must be nonempty")
    rng = np.random.default_rng(seed)
    out = weights.copy()
    m = {k: np.zeros_like(v) for k, v in out.params.items()}
    v = {k: np.zeros_like(v) for k, v in out.params.items()}
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    losses = []
    for step in range(steps):
        sample = dataset[int(rng.integers(len(dataset)))]
        noisy = sample.history + rng.normal(scale=noise_std,
                                            size=sample.history.shape)
        batch = assemble_features(noisy, sample.material_ids, out.stats,
                                  sample.dt, out.config.radius,
                                  wall_margin=sample.wall_margin,
                                  max_degree=max_degree)
        loss, grads = loss_and_gradients(out, batch, sample.target_accels)
        losses.append(loss)
        step_lr = lr * lr_decay ** (step / lr_decay_steps)
        if step_lr == 0.0:
            continue
        t = step + 1
        for name, grad in grads.items():
            m[name] = beta1 * m[name] + (1 - beta1) * grad
            v[name] = beta2 * v[name] + (1 - beta2) * grad * grad
            m_hat = m[name] / (1 - beta1 ** t)
            v_hat = v[name] / (1 - beta2 ** t)
            out.params[name] -= step_lr * m_hat / (np.sqrt(v_hat) + eps)
    return out, losses


# --- persistence ------------------------------------------------------------

_WHEADER = struct.Struct("<4sHI")


def save_weights(weights: SurrogateWeights, path) -> None:
    """Versioned binary: magic, JSON architecture descriptor, f64 payload."""
    names = sorted(weights.params)
    descriptor = {
        "config": weights.config.to_dict(),
        "stats": weights.stats.to_dict(),
        "tensors": [[name, list(weights.params[name].shape)] for name in names],
    }
    blob = json.dumps(descriptor).encode()
    with open(path, "wb") as fh:
        fh.write(_WHEADER.pack(WEIGHTS_MAGIC, WEIGHTS_VERSION, len(blob)))
        fh.write(blob)
        for name in names:
            fh.write(weights.params[name].astype("<f8").tobytes())


def load_weights(path) -> SurrogateWeights:
    raw = Path(path).read_bytes()
    if len(raw) < _WHEADER.size:
        raise FormatError(f"{path}: too short for a weights header")
    magic, version, length = _WHEADER.unpack_from(raw)
    if magic != WEIGHTS_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != WEIGHTS_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    offset = _WHEADER.size
    if len(raw) < offset + length:
        raise CorruptionError(f"{path}: descriptor extends past end of file")
    try:
        descriptor = json.loads(raw[offset:offset + length])
    except json.JSONDecodeError as exc:
        raise CorruptionError(f"{path}: descriptor is not valid JSON") from exc
    offset += length
    config = SurrogateConfig(**descriptor["config"])
    stats = NormStats.from_dict(descriptor["stats"])
    params = {}
    for name, shape in descriptor["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        end = offset + count * 8
        if end > len(raw):
            raise CorruptionError(f"{path}: tensor {name} truncated")
        params[name] = np.frombuffer(raw, dtype="<f8", count=count,
                                     offset=offset).reshape(shape).copy()
        offset = end
    if offset != len(raw):
        raise CorruptionError(f"{path}: {len(raw) - offset} trailing bytes")
    return SurrogateWeights(config, stats, params)


def check_compatible(weights: SurrogateWeights, dim: int) -> None:
    """Raise if persisted weights cannot drive a session of this dimension."""
    if weights.config.dim != dim:
        raise IncompatibilityError(
            f"weights are {weights.config.dim}D but the session is {dim}D")
