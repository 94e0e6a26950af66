from importlib.resources import files

import numpy as np
import pytest

from railflat.grid_env import AgentState, AgentStatus, Direction, EnvState, RailAction, load_map, step


def bundled(name: str) -> str:
    return files("railflat.data").joinpath(f"{name}.txt").read_text()


def track_text(n: int, agents: list[str] = (), stations: list[str] = ("0 0",), max_steps: int | None = None) -> str:
    """One-row straight track of ``n`` cells with reversing ends."""
    cells = ["0404"] + ["0401"] * (n - 2) + ["0101"]
    header = f"{n} 1" + (f" {max_steps}" if max_steps else "")
    lines = [header, " ".join(cells), f"STATIONS {len(stations)}", *stations, f"AGENTS {len(agents)}", *agents]
    return "\n".join(lines) + "\n"


def active(state: EnvState, **positions) -> EnvState:
    """Place agents directly as Active: active(state, a0=((r, c), dir), ...)."""
    for key, (pos, d) in positions.items():
        agent = state.agent(int(key[1:]))
        agent.position = pos
        agent.direction = Direction(d)
        agent.status = AgentStatus.ACTIVE
        agent.moving = True
    return state


def run(state: EnvState, n: int, action=RailAction.MOVE_FORWARD):
    total = 0
    for _ in range(n):
        if state.done:
            break
        state, rewards, _ = step(state, {a.id: action for a in state.agents})
        total += sum(rewards.values())
    return state, total


@pytest.fixture
def h_fixture() -> EnvState:
    return load_map(bundled("h_fixture"))


@pytest.fixture
def h_headon() -> EnvState:
    return load_map(bundled("h_headon"))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
