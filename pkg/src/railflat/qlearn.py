"""Action-value learning with a shared controller for all trains.

Two approximators over the 4-value observation: a linear one (one affine
layer per stream) and a dueling network (two hidden ReLU layers of 64 per
stream). Both combine Q = V + A - mean(A). Gradients are hand-written and
parameters live in one flat float64 array so they can be checkpointed and
finite-difference checked directly.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

OBS_DIM = 4
N_ACTIONS = 4
HIDDEN = 64

CHECKPOINT_MAGIC = b"RFLQ"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sIBxxxIIIQ")  # magic, version, arch, in, out, hidden, n_params


class QLearnError(Exception):
    pass


class TrainingDivergedError(QLearnError):
    pass


class CheckpointError(QLearnError):
    pass


class Architecture(enum.Enum):
    LINEAR = "linear"
    DUELING = "dueling"

    @property
    def tag(self) -> int:
        return 0 if self is Architecture.LINEAR else 1


def _layer_specs(arch: Architecture, hidden: int) -> list[tuple[str, tuple[int, ...]]]:
    if arch is Architecture.LINEAR:
        return [
            ("value.w0", (OBS_DIM, 1)),
            ("value.b0", (1,)),
            ("adv.w0", (OBS_DIM, N_ACTIONS)),
            ("adv.b0", (N_ACTIONS,)),
        ]
    specs = []
    for stream, out in (("value", 1), ("adv", N_ACTIONS)):
        specs += [
            (f"{stream}.w0", (OBS_DIM, hidden)),
            (f"{stream}.b0", (hidden,)),
            (f"{stream}.w1", (hidden, hidden)),
            (f"{stream}.b1", (hidden,)),
            (f"{stream}.w2", (hidden, out)),
            (f"{stream}.b2", (out,)),
        ]
    return specs


@dataclass
class Adam:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    t: int = 0

    def update(self, params: np.ndarray, grad: np.ndarray, lr: float) -> None:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        params -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


class QFunction:
    input_dim = OBS_DIM
    output_dim = N_ACTIONS

    def __init__(self, architecture: Architecture | str, params: np.ndarray | None = None, hidden: int = HIDDEN):
        self.architecture = Architecture(architecture)
        self.hidden = hidden if self.architecture is Architecture.DUELING else 0
        self.specs = _layer_specs(self.architecture, hidden)
        self.n_params = sum(int(np.prod(s)) for _, s in self.specs)
        if params is None:
            params = np.zeros(self.n_params)
        params = np.array(params, dtype=np.float64)
        if params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {params.shape}")
        self.params = params
        self.optimizer = Adam()

    @classmethod
    def initialized(
        cls,
        architecture: Architecture | str,
        rng: np.random.Generator,
        hidden: int = HIDDEN,
        value_bias: float = 0.0,
    ) -> "QFunction":
        """He-uniform weights, zero biases except the value head's, which is
        set to ``value_bias`` (a pessimistic start for cost-only rewards)."""
        q = cls(architecture, hidden=hidden)
        for name, shape in q.specs:
            if ".w" in name:
                bound = np.sqrt(6.0 / shape[0])
                q.layer(name)[...] = rng.uniform(-bound, bound, size=shape)
        q.layer(q.specs_of("value")[-1][0])[...] = value_bias
        return q

    def specs_of(self, stream: str) -> list[tuple[str, tuple[int, ...]]]:
        return [(n, s) for n, s in self.specs if n.startswith(stream + ".")]

    def layer(self, name: str) -> np.ndarray:
        """Writable view of one named parameter block."""
        offset = 0
        for n, shape in self.specs:
            size = int(np.prod(shape))
            if n == name:
                return self.params[offset : offset + size].reshape(shape)
            offset += size
        raise KeyError(name)

    def _views(self) -> dict[str, np.ndarray]:
        out, offset = {}, 0
        for n, shape in self.specs:
            size = int(np.prod(shape))
            out[n] = self.params[offset : offset + size].reshape(shape)
            offset += size
        return out

    def copy(self) -> "QFunction":
        return QFunction(self.architecture, self.params.copy(), hidden=self.hidden or HIDDEN)

    # -- evaluation

    def _stream(self, p, stream: str, x: np.ndarray, cache: list | None):
        if self.architecture is Architecture.LINEAR:
            return x @ p[f"{stream}.w0"] + p[f"{stream}.b0"]
        z0 = x @ p[f"{stream}.w0"] + p[f"{stream}.b0"]
        h0 = np.maximum(z0, 0)
        z1 = h0 @ p[f"{stream}.w1"] + p[f"{stream}.b1"]
        h1 = np.maximum(z1, 0)
        if cache is not None:
            cache.append((stream, z0, h0, z1, h1))
        return h1 @ p[f"{stream}.w2"] + p[f"{stream}.b2"]

    def forward_batch(self, x: np.ndarray, cache: list | None = None) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        p = self._views()
        value = self._stream(p, "value", x, cache)
        adv = self._stream(p, "adv", x, cache)
        return value + adv - adv.mean(axis=1, keepdims=True)

    def __call__(self, obs) -> np.ndarray:
        return self.forward_batch(obs)[0]

    def value(self, obs) -> float:
        x = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        return float(self._stream(self._views(), "value", x, None)[0, 0])

    def gradient(self, x: np.ndarray, dq: np.ndarray) -> np.ndarray:
        """Backpropagate dL/dQ (batch x actions) to a flat parameter gradient."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        cache: list = []
        self.forward_batch(x, cache)
        p = self._views()
        grads = {n: np.zeros(s) for n, s in self.specs}
        d_value = dq.sum(axis=1, keepdims=True)
        d_adv = dq - dq.mean(axis=1, keepdims=True)
        hidden = {c[0]: c[1:] for c in cache}
        for stream, d_out in (("value", d_value), ("adv", d_adv)):
            if self.architecture is Architecture.LINEAR:
                grads[f"{stream}.w0"] = x.T @ d_out
                grads[f"{stream}.b0"] = d_out.sum(axis=0)
                continue
            z0, h0, z1, h1 = hidden[stream]
            grads[f"{stream}.w2"] = h1.T @ d_out
            grads[f"{stream}.b2"] = d_out.sum(axis=0)
            dz1 = (d_out @ p[f"{stream}.w2"].T) * (z1 > 0)
            grads[f"{stream}.w1"] = h0.T @ dz1
            grads[f"{stream}.b1"] = dz1.sum(axis=0)
            dz0 = (dz1 @ p[f"{stream}.w1"].T) * (z0 > 0)
            grads[f"{stream}.w0"] = x.T @ dz0
            grads[f"{stream}.b0"] = dz0.sum(axis=0)
        return np.concatenate([grads[n].ravel() for n, _ in self.specs])


def forward(q: QFunction, obs) -> np.ndarray:
    return q(obs)


def select_action(
    q: QFunction,
    obs,
    valid_mask: Sequence[bool],
    eps: float,
    rng: np.random.Generator,
) -> int:
    """Epsilon-greedy over the valid actions; greedy ties go to the lowest index."""
    valid = np.flatnonzero(np.asarray(valid_mask, dtype=bool))
    if valid.size == 0:
        raise ValueError("no valid action in mask")
    if eps > 0 and rng.random() < eps:
        return int(valid[rng.integers(valid.size)])
    values = q(obs)
    return int(valid[np.argmax(values[valid])])


# --------------------------------------------------------------------------
# replay


@dataclass
class Transition:
    obs: np.ndarray
    action: int
    reward: float
    next_obs: np.ndarray | None  # None marks a terminal transition
    next_mask: tuple[bool, ...] = (True,) * N_ACTIONS
    duration: int = 1  # timesteps until next_obs; the bootstrap is discounted by gamma**duration


@dataclass
class Batch:
    obs: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_obs: np.ndarray
    next_mask: np.ndarray
    terminal: np.ndarray
    duration: np.ndarray | None = None

    @classmethod
    def from_transitions(cls, transitions: Sequence[Transition]) -> "Batch":
        n = len(transitions)
        next_obs = np.zeros((n, OBS_DIM))
        terminal = np.zeros(n, dtype=bool)
        for i, t in enumerate(transitions):
            if t.next_obs is None:
                terminal[i] = True
            else:
                next_obs[i] = t.next_obs
        return cls(
            obs=np.array([t.obs for t in transitions], dtype=np.float64).reshape(n, OBS_DIM),
            action=np.array([t.action for t in transitions], dtype=np.int64),
            reward=np.array([t.reward for t in transitions], dtype=np.float64),
            next_obs=next_obs,
            next_mask=np.array([t.next_mask for t in transitions], dtype=bool).reshape(n, N_ACTIONS),
            terminal=terminal,
            duration=np.array([t.duration for t in transitions], dtype=np.int64),
        )

    def __len__(self) -> int:
        return len(self.action)


class ReplayBuffer:
    def __init__(self, capacity: int, seed: int = 0):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.rng = np.random.default_rng(seed)
        self._obs = np.zeros((capacity, OBS_DIM))
        self._action = np.zeros(capacity, dtype=np.int64)
        self._reward = np.zeros(capacity)
        self._next_obs = np.zeros((capacity, OBS_DIM))
        self._next_mask = np.ones((capacity, N_ACTIONS), dtype=bool)
        self._terminal = np.zeros(capacity, dtype=bool)
        self._duration = np.ones(capacity, dtype=np.int64)
        self._head = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, t: Transition) -> None:
        i = self._head
        self._obs[i] = t.obs
        self._action[i] = t.action
        self._reward[i] = t.reward
        self._terminal[i] = t.next_obs is None
        self._next_obs[i] = 0 if t.next_obs is None else t.next_obs
        self._next_mask[i] = t.next_mask
        self._duration[i] = t.duration
        self._head = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int) -> Batch:
        """Uniform sample without replacement (the whole buffer if smaller)."""
        n = min(batch_size, self._size)
        idx = self.rng.choice(self._size, size=n, replace=False)
        return Batch(
            obs=self._obs[idx],
            action=self._action[idx],
            reward=self._reward[idx],
            next_obs=self._next_obs[idx],
            next_mask=self._next_mask[idx],
            terminal=self._terminal[idx],
            duration=self._duration[idx],
        )


# --------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    arch: str = "dueling"
    gamma: float = 0.99
    lr: float = 1e-3
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_episodes: int = 3000
    batch_size: int = 128
    buffer_capacity: int = 100_000
    target_sync_interval: int = 500
    seed: int = 0
    episodes: int = 3000
    min_buffer: int = 128
    updates_per_step: int = 1
    reward_scale: float = 0.1
    eval_interval: int = 100
    eval_episodes: int = 20
    q_init: float = -10.0  # initial value-head bias; below any real return keeps stalling unattractive

    def __post_init__(self):
        Architecture(self.arch)
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, (int, float)) and f.name not in ("seed", "q_init") and value <= 0:
                raise ValueError(f"{f.name} must be positive, got {value}")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if not self.eps_end <= self.eps_start <= 1:
            raise ValueError("need eps_end <= eps_start <= 1")

    def epsilon(self, episode: int) -> float:
        frac = min(episode / self.eps_decay_episodes, 1.0)
        return self.eps_start + frac * (self.eps_end - self.eps_start)

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        types = {f.name: type(f.default) for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or key not in types:
                raise ValueError(f"line {lineno}: unknown config entry {line!r}")
            values[key] = types[key](float(value)) if types[key] is int else types[key](value)
        return cls(**values)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        return cls.from_text(Path(path).read_text())


def td_targets(target_q: QFunction, batch: Batch, gamma: float) -> np.ndarray:
    """r for terminal transitions, r + gamma**k * max over valid next actions
    otherwise, where k is the transition's duration in timesteps."""
    y = batch.reward.copy()
    live = ~batch.terminal
    if live.any():
        q_next = target_q.forward_batch(batch.next_obs[live])
        q_next = np.where(batch.next_mask[live], q_next, -np.inf)
        k = np.ones(int(live.sum())) if batch.duration is None else batch.duration[live]
        y[live] += gamma**k * q_next.max(axis=1)
    return y


def loss_and_gradient(q: QFunction, obs: np.ndarray, action: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared TD error and its parameter gradient for fixed targets."""
    pred = q.forward_batch(obs)
    rows = np.arange(len(action))
    err = pred[rows, action] - y
    loss = float(np.mean(err**2))
    dq = np.zeros_like(pred)
    dq[rows, action] = 2 * err / len(action)
    return loss, q.gradient(obs, dq)


def train_step(
    q: QFunction,
    target_q: QFunction,
    batch: Batch | Sequence[Transition],
    gamma: float,
    lr: float,
) -> tuple[QFunction, float]:
    if not isinstance(batch, Batch):
        batch = Batch.from_transitions(batch)
    y = td_targets(target_q, batch, gamma)
    with np.errstate(invalid="ignore", over="ignore"):  # reported below with context
        loss, grad = loss_and_gradient(q, batch.obs, batch.action, y)
    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise TrainingDivergedError(
            f"non-finite loss {loss} (|params|max={np.abs(q.params).max():.3g}, "
            f"targets in [{y.min():.3g}, {y.max():.3g}], batch {len(batch)})"
        )
    q.optimizer.update(q.params, grad, lr)
    return q, loss


def sync_target(q: QFunction, target_q: QFunction) -> QFunction:
    if q.architecture is not target_q.architecture or q.n_params != target_q.n_params:
        raise QLearnError(
            f"architecture mismatch: {q.architecture.value} vs {target_q.architecture.value}"
        )
    target_q.params[...] = q.params
    return target_q


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(q: QFunction, path: str | Path) -> None:
    header = _HEADER.pack(
        CHECKPOINT_MAGIC,
        CHECKPOINT_VERSION,
        q.architecture.tag,
        q.input_dim,
        q.output_dim,
        q.hidden,
        q.n_params,
    )
    Path(path).write_bytes(header + q.params.astype("<f8").tobytes())


def load_checkpoint(path: str | Path, expected: Architecture | str | None = None) -> QFunction:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, tag, in_dim, out_dim, hidden, n_params = _HEADER.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    if (in_dim, out_dim) != (OBS_DIM, N_ACTIONS):
        raise CheckpointError(f"{path}: dimensions {in_dim}x{out_dim} do not match")
    arch = Architecture.LINEAR if tag == 0 else Architecture.DUELING
    if expected is not None and Architecture(expected) is not arch:
        raise CheckpointError(f"{path}: holds a {arch.value} network, expected {Architecture(expected).value}")
    body = data[_HEADER.size :]
    if len(body) != 8 * n_params:
        raise CheckpointError(f"{path}: expected {n_params} parameters, found {len(body) // 8}")
    params = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return QFunction(arch, params, hidden=hidden or HIDDEN)
