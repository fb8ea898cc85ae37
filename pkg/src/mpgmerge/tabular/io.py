"""JSON serialization of tabular games.

Layout (all tensors flattened row-major, last axis fastest)::

    {
      "format": "mpgmerge.tabular-game",
      "version": 1,
      "n_agents": N,
      "state_count": S,
      "action_counts": [A1, ..., AN],
      "local_state_counts": [S1, ..., SN] | null,
      "policy_class": "global" | "local",
      "gamma": float,
      "rho": [S floats],
      "transition": [S * A1 * ... * AN * S floats],   # P[s, a1..aN, s']
      "rewards": [N * S * A1 * ... * AN floats],       # r[i, s, a1..aN]
      "potential": [S * A1 * ... * AN floats] | absent  # phi[s, a1..aN]
    }
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np

from mpgmerge.tabular.game import TabularGame
from mpgmerge.tabular.potentials import StatePotential

FORMAT = "mpgmerge.tabular-game"
VERSION = 1


class GameFormatError(ValueError):
    pass


def game_to_dict(game: TabularGame, phi: Optional[StatePotential] = None) -> dict:
    out = {
        "format": FORMAT,
        "version": VERSION,
        "n_agents": game.n_agents,
        "state_count": game.state_count,
        "action_counts": list(game.action_counts),
        "local_state_counts": None if game.local_state_counts is None else list(game.local_state_counts),
        "policy_class": game.policy_class,
        "gamma": game.gamma,
        "rho": game.rho.tolist(),
        "transition": game.transition.ravel().tolist(),
        "rewards": game.rewards.ravel().tolist(),
    }
    if phi is not None:
        out["potential"] = phi.tensor.ravel().tolist()
    return out


def _field(data: dict, key: str):
    if key not in data:
        raise GameFormatError(f"missing field {key!r}")
    return data[key]


def game_from_dict(data: dict):
    """Return ``(game, potential_or_None)``."""
    if data.get("format") != FORMAT:
        raise GameFormatError(f"unexpected format tag {data.get('format')!r}")
    if data.get("version") != VERSION:
        raise GameFormatError(f"unsupported version {data.get('version')!r}")
    n = int(_field(data, "n_agents"))
    S = int(_field(data, "state_count"))
    acts = tuple(int(a) for a in _field(data, "action_counts"))
    if len(acts) != n:
        raise GameFormatError("action_counts length differs from n_agents")
    try:
        transition = np.asarray(_field(data, "transition"), float).reshape((S,) + acts + (S,))
        rewards = np.asarray(_field(data, "rewards"), float).reshape((n, S) + acts)
        rho = np.asarray(_field(data, "rho"), float).reshape(S)
        phi = None
        if "potential" in data:
            phi = StatePotential(np.asarray(data["potential"], float).reshape((S,) + acts))
    except ValueError as exc:
        raise GameFormatError(f"tensor size mismatch: {exc}") from exc
    local = data.get("local_state_counts")
    try:
        game = TabularGame(transition, rewards, float(_field(data, "gamma")), rho,
                           local_state_counts=None if local is None else tuple(local),
                           policy_class=data.get("policy_class", "global"))
    except ValueError as exc:
        raise GameFormatError(str(exc)) from exc
    return game, phi


def save_game(path, game: TabularGame, phi: Optional[StatePotential] = None) -> None:
    Path(path).write_text(json.dumps(game_to_dict(game, phi), indent=1))


def load_game(path):
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise GameFormatError(f"not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise GameFormatError("top-level JSON value must be an object")
    return game_from_dict(data)
