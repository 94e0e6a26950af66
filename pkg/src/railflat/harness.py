"""Episode rollouts, training and evaluation.

Trains are driven by the greedy default everywhere except at decision points
(the next cell is a switch), where the policy picks forward/left/right/stop.
A chosen maneuver is remembered and executed once the train stands on the
switch. Rewards are accumulated per agent between its decision points.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable, Protocol

import numpy as np

from .grid_env.core import (
    AgentStatus,
    EnvState,
    RailAction,
    Position,
    detect_deadlock,
    exit_for_action,
    step,
)
from .grid_env.generator import generate_map
from .grid_env.mapfile import load_map
from .observation import MANEUVERS, STOP_INDEX, ObservationVector, build_observation
from .qlearn import (
    Architecture,
    QFunction,
    ReplayBuffer,
    TrainConfig,
    Transition,
    load_checkpoint,
    save_checkpoint,
    select_action,
    sync_target,
    train_step,
)
from .routing import agent_node, forward_successor, shortest_path

logger = logging.getLogger(__name__)

MOVING_AVERAGE_WINDOW = 50
EVAL_SEED_OFFSET = 1_000_000


@dataclass
class EpisodeRecord:
    episode: int
    policy_tag: str
    raw_reward: float
    normalized_reward: float
    steps: int
    n_agents: int
    completion_pct: float
    deadlock_count: int


CSV_COLUMNS = [f.name for f in fields(EpisodeRecord)]


def normalized_reward(raw: float, max_steps: int, n_agents: int) -> float:
    return 1 + raw / (max_steps * n_agents)


@dataclass
class MetricSeries:
    records: list[EpisodeRecord] = field(default_factory=list)
    window: int = MOVING_AVERAGE_WINDOW

    def append(self, record: EpisodeRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def moving_average(self, name: str = "normalized_reward") -> np.ndarray:
        """Trailing mean; entry i covers records i .. i + window - 1."""
        values = self.column(name)
        if len(values) < self.window:
            return np.empty(0)
        kernel = np.ones(self.window) / self.window
        return np.convolve(values, kernel, mode="valid")

    def mean(self, name: str = "normalized_reward") -> float:
        return float(self.column(name).mean()) if self.records else float("nan")

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in self.records:
            writer.writerow(_row(r))
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def from_csv(cls, text: str, window: int = MOVING_AVERAGE_WINDOW) -> "MetricSeries":
        reader = csv.DictReader(io.StringIO(text))
        if reader.fieldnames != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV columns {reader.fieldnames}")
        types = {f.name: f.type for f in fields(EpisodeRecord)}
        casts = {"int": int, "float": float, "str": str}
        records = [
            EpisodeRecord(**{k: casts[types[k]](v) for k, v in row.items()}) for row in reader
        ]
        return cls(records, window)

    @classmethod
    def read_csv(cls, path: str | Path, window: int = MOVING_AVERAGE_WINDOW) -> "MetricSeries":
        return cls.from_csv(Path(path).read_text(), window)


def _row(r: EpisodeRecord) -> dict:
    row = asdict(r)
    for k in ("raw_reward", "normalized_reward", "completion_pct"):
        row[k] = repr(float(row[k]))
    return row


class CsvSink:
    """Appends records to a metrics file as they arrive."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.write_text(",".join(CSV_COLUMNS) + "\n")

    def write(self, record: EpisodeRecord) -> None:
        with self.path.open("a", newline="") as fh:
            csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n").writerow(_row(record))


# --------------------------------------------------------------------------
# policies


def _route_action(state: EnvState, agent) -> RailAction:
    if agent.status is AgentStatus.READY:
        return RailAction.MOVE_FORWARD
    route = shortest_path(state.grid, agent_node(agent), agent.target, agent.speed)
    if route is None or route.hops == 0:
        return RailAction.MOVE_FORWARD
    return route.first_action


def greedy_baseline(state: EnvState) -> dict[int, RailAction]:
    """Every train follows its own A* shortest path, ignoring the others."""
    actions = {}
    for agent in state.agents:
        if agent.status is AgentStatus.ARRIVED:
            actions[agent.id] = RailAction.DO_NOTHING
        else:
            actions[agent.id] = _route_action(state, agent)
    return actions


class DecisionPolicy(Protocol):
    tag: str

    def choose(self, obs: ObservationVector) -> int: ...


@dataclass
class QPolicy:
    q: QFunction
    eps: float
    rng: np.random.Generator
    tag: str = "learned"
    queries: int = 0

    def choose(self, obs: ObservationVector) -> int:
        self.queries += 1
        return select_action(self.q, obs.values, obs.mask, self.eps, self.rng)


class GreedyPolicy:
    tag = "greedy"


# --------------------------------------------------------------------------
# rollouts


@dataclass
class _Pending:
    decision_cell: Position
    switch: Position
    maneuver: RailAction


@dataclass
class _Open:
    obs: np.ndarray
    action: int
    reward: float = 0.0
    steps: int = 0


def _close(open_tr: dict[int, _Open], agent_id: int, out: list[Transition], obs: ObservationVector | None):
    tr = open_tr.pop(agent_id, None)
    if tr is None:
        return
    if obs is None:
        out.append(Transition(tr.obs, tr.action, tr.reward, None, duration=max(tr.steps, 1)))
    else:
        out.append(Transition(tr.obs, tr.action, tr.reward, obs.values.copy(), obs.mask, max(tr.steps, 1)))


def run_episode(
    env: EnvState,
    policy: DecisionPolicy | GreedyPolicy,
    episode: int = 0,
    gamma: float = 1.0,
) -> tuple[EpisodeRecord, list[Transition]]:
    """Roll ``env`` to termination under ``policy``.

    Ends early once every remaining train is deadlocked; the skipped steps
    are charged in full so the normalized reward matches a run to the limit.
    Transitions cut off by the step limit bootstrap from the agent's current
    observation, or are dropped when it has none. Within a transition the
    per-step rewards are summed with discount ``gamma`` (1.0 gives the plain
    sum).
    """
    state = env.copy()
    greedy = isinstance(policy, GreedyPolicy)
    pending: dict[int, _Pending] = {}
    open_tr: dict[int, _Open] = {}
    transitions: list[Transition] = []
    total = 0.0
    deadlocked = False

    while not state.done:
        if greedy:
            actions = greedy_baseline(state)
        else:
            actions = {}
            for agent in state.agents:
                if agent.status is AgentStatus.ARRIVED:
                    continue
                if agent.status is AgentStatus.READY:
                    actions[agent.id] = RailAction.MOVE_FORWARD
                    continue
                plan = pending.get(agent.id)
                if plan is not None and agent.position not in (plan.decision_cell, plan.switch):
                    del pending[agent.id]
                    plan = None
                if plan is not None and agent.position == plan.switch:
                    bits = state.grid.bits(agent.position)
                    if exit_for_action(bits, agent.direction, plan.maneuver) is not None:
                        actions[agent.id] = plan.maneuver
                    else:
                        actions[agent.id] = _route_action(state, agent)
                    continue
                obs = build_observation(state, agent.id)
                if obs is None:
                    actions[agent.id] = _route_action(state, agent)
                    continue
                choice = policy.choose(obs)
                _close(open_tr, agent.id, transitions, obs)
                open_tr[agent.id] = _Open(obs.values.copy(), choice)
                if choice == STOP_INDEX:
                    pending.pop(agent.id, None)
                    actions[agent.id] = RailAction.STOP
                else:
                    switch = forward_successor(state.grid, agent_node(agent)).position
                    pending[agent.id] = _Pending(agent.position, switch, MANEUVERS[choice])
                    actions[agent.id] = RailAction.MOVE_FORWARD

        state, rewards, _ = step(state, actions)
        total += sum(rewards.values())
        for agent_id, tr in open_tr.items():
            tr.reward += gamma**tr.steps * rewards[agent_id]
            tr.steps += 1
        for agent in state.agents:
            if agent.status is AgentStatus.ARRIVED and agent.id in open_tr:
                _close(open_tr, agent.id, transitions, None)

        live = [a.id for a in state.agents if a.status is not AgentStatus.ARRIVED]
        if live and not state.done and set(live) <= detect_deadlock(state):
            remaining = state.max_steps - state.timestep
            total -= remaining * len(live)
            for agent_id, tr in open_tr.items():
                tr.reward -= sum(gamma ** (tr.steps + i) for i in range(remaining))
            deadlocked = True
            break

    for agent_id in list(open_tr):
        if deadlocked:
            _close(open_tr, agent_id, transitions, None)  # remaining cost already charged
            continue
        # step limit: a truncation, not a terminal; bootstrap when possible
        obs = build_observation(state, agent_id)
        if obs is not None:
            _close(open_tr, agent_id, transitions, obs)
        else:
            open_tr.pop(agent_id)

    n = state.n_agents
    arrived = sum(a.status is AgentStatus.ARRIVED for a in state.agents)
    record = EpisodeRecord(
        episode=episode,
        policy_tag=policy.tag,
        raw_reward=total,
        normalized_reward=normalized_reward(total, state.max_steps, n),
        steps=state.timestep,
        n_agents=n,
        completion_pct=arrived / n,
        deadlock_count=len(detect_deadlock(state)),
    )
    return record, transitions


# --------------------------------------------------------------------------
# environment suites


@dataclass(frozen=True)
class GeneratedSuite:
    """Random maps; training episode i uses seed base_seed + i, evaluation
    episode j uses a seed from a disjoint range."""

    width: int = 28
    height: int = 16
    n_agents: int = 6
    n_stations: int = 4
    base_seed: int = 0

    def train_env(self, episode: int) -> EnvState:
        return generate_map(self.width, self.height, self.n_agents, self.n_stations, self.base_seed + episode)

    def eval_env(self, index: int) -> EnvState:
        seed = self.base_seed + EVAL_SEED_OFFSET + index
        return generate_map(self.width, self.height, self.n_agents, self.n_stations, seed)


@dataclass(frozen=True)
class FixtureSuite:
    """The same hand-made map for every episode."""

    text: str

    @classmethod
    def from_file(cls, path: str | Path) -> "FixtureSuite":
        return cls(Path(path).read_text())

    def train_env(self, episode: int) -> EnvState:
        return load_map(self.text)

    def eval_env(self, index: int) -> EnvState:
        return load_map(self.text)


Suite = GeneratedSuite | FixtureSuite


# --------------------------------------------------------------------------
# training and evaluation


def policy_tag(arch: Architecture | str) -> str:
    return "lqn" if Architecture(arch) is Architecture.LINEAR else "dqn"


@dataclass
class TrainResult:
    q: QFunction  # best network by evaluation score
    final_q: QFunction
    train_metrics: MetricSeries
    eval_metrics: MetricSeries
    best_score: float
    updates: int
    losses: list[float] = field(default_factory=list)


def evaluate_policy(q: QFunction, suite: Suite, n_episodes: int, tag: str, first: int = 0) -> MetricSeries:
    """Greedy rollouts on evaluation environments first .. first + n_episodes - 1."""
    series = MetricSeries()
    policy = QPolicy(q, 0.0, np.random.default_rng(0), tag=tag)
    for j in range(first, first + n_episodes):
        record, _ = run_episode(suite.eval_env(j), policy, episode=j)
        series.append(record)
    return series


def evaluate_baseline(suite: Suite, n_episodes: int, first: int = 0) -> MetricSeries:
    series = MetricSeries()
    for j in range(first, first + n_episodes):
        record, _ = run_episode(suite.eval_env(j), GreedyPolicy(), episode=j)
        series.append(record)
    return series


def train(
    config: TrainConfig,
    suite: Suite,
    out_dir: str | Path | None = None,
    progress: Callable[[int, EpisodeRecord], None] | None = None,
) -> TrainResult:
    """Seeded training loop; writes metrics CSVs and the best checkpoint to ``out_dir``."""
    rng = np.random.default_rng(config.seed)
    arch = Architecture(config.arch)
    tag = policy_tag(arch)
    q = QFunction.initialized(arch, rng, value_bias=config.q_init)
    target = q.copy()
    buffer = ReplayBuffer(config.buffer_capacity, seed=config.seed + 1)

    train_sink = eval_sink = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        config.save(out / "config.txt")
        train_sink = CsvSink(out / "train_metrics.csv")
        eval_sink = CsvSink(out / "eval_metrics.csv")

    train_metrics, eval_metrics = MetricSeries(), MetricSeries()
    best_q, best_score = q.copy(), -np.inf
    updates = 0
    eval_count = 0
    losses: list[float] = []

    def run_eval(episode: int) -> None:
        nonlocal best_q, best_score, eval_count
        series = evaluate_policy(q, suite, config.eval_episodes, f"eval-{tag}")
        for r in series.records:
            r.episode = episode
            eval_metrics.append(r)
            if eval_sink:
                eval_sink.write(r)
        score = series.mean()
        eval_count += 1
        if score > best_score:
            best_score, best_q = score, q.copy()
            if out_dir is not None:
                save_checkpoint(best_q, Path(out_dir) / "best.ckpt")

    for episode in range(config.episodes):
        policy = QPolicy(q, config.epsilon(episode), rng, tag=f"train-{tag}")
        record, transitions = run_episode(suite.train_env(episode), policy, episode, config.gamma)
        for t in transitions:
            t.reward *= config.reward_scale
            buffer.push(t)
        train_metrics.append(record)
        if train_sink:
            train_sink.write(record)
        if len(buffer) >= config.min_buffer:
            for _ in range(max(1, config.updates_per_step * len(transitions))):
                _, loss = train_step(q, target, buffer.sample(config.batch_size), config.gamma, config.lr)
                losses.append(loss)
                updates += 1
                if updates % config.target_sync_interval == 0:
                    sync_target(q, target)
        if progress:
            progress(episode, record)
        if (episode + 1) % config.eval_interval == 0:
            run_eval(episode)

    if eval_count == 0 or config.episodes % config.eval_interval:
        run_eval(config.episodes - 1)
    return TrainResult(best_q, q, train_metrics, eval_metrics, best_score, updates, losses)


def evaluate(
    checkpoint: str | Path | QFunction | Iterable,
    suite: Suite,
    n_episodes: int,
    expected_arch: Architecture | str | None = None,
    include_baseline: bool = False,
) -> dict[str, MetricSeries]:
    """Greedy rollouts of one or more checkpoints, optionally with the baseline."""
    items = checkpoint if isinstance(checkpoint, (list, tuple)) else [checkpoint]
    out: dict[str, MetricSeries] = {}
    for item in items:
        q = item if isinstance(item, QFunction) else load_checkpoint(item, expected_arch)
        tag = policy_tag(q.architecture)
        out[tag] = evaluate_policy(q, suite, n_episodes, tag)
    if include_baseline:
        out["greedy"] = evaluate_baseline(suite, n_episodes)
    return out
