"""Game, profile and behavioural-profile files; schema-checked CSV output; run manifests.

Game files are YAML or JSON documents::

    players: [row, column]
    actions: [[C, D], [C, D]]
    rewards: [[2, 0, 3, 1], [2, 3, 0, 1]]   # one list per player, profiles in row-major order
    monitoring: {type: perfect}            # or {signals: [[...], ...], kernel: [[...], ...]}
    delta: 0.9
    recall: [1, 1]

``reward_layout: profile_major`` switches ``rewards`` to one list of
per-player payoffs per profile.  Kernel rows follow the profile order and
list probabilities over joint signals, also row-major.

Profile files list one entry per player, either ``weights`` over the
enumerated pure strategies or a ``table`` from history keys to action
names (with an optional ``default``).  A history key joins
``action|signal`` pairs with ``;``, oldest first; the empty key is the
first move.
"""

from __future__ import annotations

import csv
import io as _io
import json
import subprocess
import time
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import yaml

from . import __version__
from .behavioural import PublicHistories, validate_behavioural
from .game import MonitoringStructure, RepeatedGameSpec, StageGame, perfect_monitoring
from .strategies import StrategySpace, validate_profile


def read_document(path: str | Path) -> dict:
    text = Path(path).read_text()
    if str(path).endswith(".json"):
        return json.loads(text)
    return yaml.safe_load(text)


def _names(doc_names, count, prefix):
    if doc_names is None:
        return tuple(f"{prefix}{k}" for k in range(count))
    return tuple(str(x) for x in doc_names)


def game_from_dict(doc: dict) -> RepeatedGameSpec:
    try:
        actions = [tuple(str(a) for a in acts) for acts in doc["actions"]]
        rewards = np.asarray(doc["rewards"], dtype=float)
    except KeyError as exc:
        raise ValueError(f"game document is missing {exc.args[0]!r}") from None
    n = len(actions)
    players = doc.get("players", n)
    player_names = _names(None if isinstance(players, int) else players, n, "p")
    if len(player_names) != n:
        raise ValueError("players and actions disagree on the player count")
    counts = tuple(len(a) for a in actions)
    profiles = int(np.prod(counts))
    layout = doc.get("reward_layout", "player_major")
    if layout == "player_major":
        if rewards.shape != (n, profiles):
            raise ValueError(f"rewards must have shape ({n}, {profiles}) in player-major layout")
        rewards = rewards.T
    elif layout == "profile_major":
        if rewards.shape != (profiles, n):
            raise ValueError(f"rewards must have shape ({profiles}, {n}) in profile-major layout")
    else:
        raise ValueError(f"unknown reward_layout {layout!r}")
    stage = StageGame(rewards.reshape(*counts, n), tuple(actions), player_names)
    mon_doc = doc.get("monitoring", {"type": "perfect"})
    if mon_doc.get("type") == "perfect":
        monitoring = perfect_monitoring(stage)
    else:
        signals = [tuple(str(z) for z in sig) for sig in mon_doc["signals"]]
        monitoring = MonitoringStructure(counts, tuple(len(s) for s in signals), np.asarray(mon_doc["kernel"], dtype=float), tuple(signals))
    recall = doc.get("recall", [1] * n)
    if isinstance(recall, int):
        recall = [recall] * n
    return RepeatedGameSpec(stage, monitoring, float(doc.get("delta", 0.9)), tuple(recall))


def game_to_dict(spec: RepeatedGameSpec) -> dict:
    stage, mon = spec.stage, spec.monitoring
    doc = {
        "players": list(stage.player_names),
        "actions": [list(a) for a in stage.action_names],
        "rewards": stage.reward_table.T.tolist(),
        "delta": spec.delta,
        "recall": list(spec.recall),
    }
    if mon.is_perfect and mon.signal_counts == (stage.profile_count,) * stage.player_count and np.array_equal(
        mon.kernel, perfect_monitoring(stage).kernel
    ):
        doc["monitoring"] = {"type": "perfect"}
    else:
        doc["monitoring"] = {"signals": [list(s) for s in mon.signal_names], "kernel": mon.kernel.tolist()}
    return doc


def load_game(path: str | Path) -> RepeatedGameSpec:
    return game_from_dict(read_document(path))


def history_key(spec: RepeatedGameSpec, player: int, pairs: Sequence[tuple[int, int]]) -> str:
    acts = spec.stage.action_names[player]
    sigs = spec.monitoring.signal_names[player]
    return ";".join(f"{acts[a]}|{sigs[z]}" for a, z in pairs)


def parse_history_key(spec: RepeatedGameSpec, player: int, key: str) -> tuple[tuple[int, int], ...]:
    acts = {name: k for k, name in enumerate(spec.stage.action_names[player])}
    sigs = {name: k for k, name in enumerate(spec.monitoring.signal_names[player])}
    out = []
    for part in filter(None, key.split(";")):
        action, _, signal = part.partition("|")
        if action not in acts or signal not in sigs:
            raise ValueError(f"player {player}: unknown action or signal in history {key!r}")
        out.append((acts[action], sigs[signal]))
    return tuple(out)


def profile_from_dict(space: StrategySpace, doc) -> tuple[np.ndarray, ...]:
    entries = doc["players"] if isinstance(doc, dict) else doc
    spec = space.spec
    if len(entries) != space.player_count:
        raise ValueError(f"profile lists {len(entries)} players, expected {space.player_count}")
    out = []
    for i, entry in enumerate(entries):
        if "weights" in entry:
            out.append(np.asarray(entry["weights"], dtype=float))
            continue
        names = {name: k for k, name in enumerate(spec.stage.action_names[i])}
        table = {parse_history_key(spec, i, str(k)): names[str(v)] for k, v in (entry.get("table") or {}).items()}
        default = entry.get("default")
        hs = space.histories[i]
        row = []
        for h in range(hs.count):
            pairs = hs.decode(h)
            if pairs in table:
                row.append(table[pairs])
            elif default is not None:
                row.append(names[str(default)])
            else:
                raise ValueError(f"player {i}: no action for history {history_key(spec, i, pairs)!r} and no default")
        w = np.zeros(space.strategy_counts[i])
        w[space.strategy_index(i, row)] = 1.0
        out.append(w)
    return validate_profile(space, out)


def profile_to_dict(space: StrategySpace, profile: Sequence[np.ndarray]) -> dict:
    """Pure components become history tables, mixed ones weight lists."""
    spec = space.spec
    players = []
    for i, w in enumerate(profile):
        k = int(np.argmax(w))
        if abs(w[k] - 1.0) <= 1e-12:
            hs = space.histories[i]
            table = {
                history_key(spec, i, hs.decode(h)): spec.stage.action_names[i][int(a)]
                for h, a in enumerate(space.tables[i][k])
            }
            players.append({"table": table})
        else:
            players.append({"weights": [float(x) for x in w]})
    return {"players": players}


def load_profile(space: StrategySpace, path: str | Path) -> tuple[np.ndarray, ...]:
    return profile_from_dict(space, read_document(path))


def behavioural_from_dict(ph: PublicHistories, doc) -> tuple[np.ndarray, ...]:
    """Per player: ``table`` mapping public-history keys (profile labels joined by ``;``) to weight lists."""
    entries = doc["players"] if isinstance(doc, dict) else doc
    stage = ph.spec.stage
    labels = {stage.profile_label(a): a for a in range(stage.profile_count)}
    out = []
    for i, entry in enumerate(entries):
        table = np.full((ph.count, stage.action_counts[i]), np.nan)
        for key, weights in (entry.get("table") or {}).items():
            hist = tuple(labels[part] for part in filter(None, str(key).split(";")))
            table[ph.index[hist]] = weights
        default = entry.get("default")
        missing = np.isnan(table[:, 0])
        if missing.any():
            if default is None:
                raise ValueError(f"player {i}: behavioural table incomplete and no default given")
            table[missing] = default
        out.append(table)
    return validate_behavioural(ph, out)


SCHEMAS = {
    "trajectory": ("n", "player", "component", "weight"),
    "summary": ("n", "gradient_norm", "distance_to_target", "values"),
    "diagnostics": ("n", "bias_norm", "variance", "ell_sigma", "ell_b", "estimator"),
    "basin": ("seed", "converged", "final_distance", "episodes_used"),
    "hull": ("vertex", "payoffs"),
    "minmax": ("player", "mixed", "pure", "exact"),
    "membership": ("point", "in_hull", "individually_rational", "member", "variant"),
}
# schema entries naming per-player groups expand to one column per player
GROUPED = {"values", "payoffs", "point"}


def schema_columns(name: str, player_count: int) -> list[str]:
    cols = []
    for col in SCHEMAS[name]:
        if col in GROUPED:
            cols.extend(f"{col}_{i}" for i in range(player_count))
        else:
            cols.append(col)
    return cols


def _format(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value is None:
        return ""
    return str(value)


def csv_text(name: str, player_count: int, rows: Iterable[dict]) -> str:
    """Render rows after checking they carry exactly the schema's columns."""
    cols = schema_columns(name, player_count)
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for k, row in enumerate(rows):
        if set(row) != set(cols):
            extra = sorted(set(row) - set(cols))
            missing = sorted(set(cols) - set(row))
            raise ValueError(f"{name} row {k} does not match its schema (missing {missing}, extra {extra})")
        writer.writerow([_format(row[c]) for c in cols])
    return buf.getvalue()


def write_csv(path: str | Path, name: str, player_count: int, rows: Iterable[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(csv_text(name, player_count, rows))
    return path


def version_string() -> str:
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=here, capture_output=True, text=True, timeout=5, check=True,
        )
        return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        return __version__


def derived_seed(master: int, task: int) -> np.random.SeedSequence:
    """Seed for task ``task``: a counter keyed off the master seed, independent of execution order."""
    return np.random.SeedSequence([int(master), int(task)])


def write_manifest(out_dir: str | Path, config: dict, master_seed: int, seed_schedule: Sequence[str]) -> Path:
    path = Path(out_dir) / "manifest.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "config": config,
        "version": version_string(),
        "master_seed": master_seed,
        "seed_schedule": list(seed_schedule),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")
    return path


def write_json(path: str | Path, doc) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")
