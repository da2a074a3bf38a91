"""Run configuration: a YAML file validated field by field with line numbers.

Example::

    n: 2
    network: I
    theta: [[0.9, 0.1], [0.1, 0.9]]
    dataset: {path: data/mnist10k}
    train_per_domain: 1000
    test_per_domain: 1000
    epochs: 10
    seed: 0
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .adversary import Strategy, TamperPlan
from .cnn.network import NETWORKS, get_network
from .errors import ConfigError
from .ring import HEADROOM_BITS
from .transfer import DegreeMatrix

MODES = ("inprocess", "tcp")
TRANSFERS = ("secure", "clear")


@dataclass
class RunConfig:
    n: int = 2
    kappa: int = 64
    precision: int = 8
    network: str = "I"
    theta: list | None = None  # n x n matrix; None means uniform with theta_t
    theta_t: float = 0.1
    hooks: list[str] | None = None
    dataset_path: str | None = None
    synthetic: int | None = None
    train_per_domain: int = 1000
    test_per_domain: int = 1000
    epochs: int = 10
    batch_size: int = 128
    learning_rate: float = 0.01
    dropout_keep: float = 0.8
    seed: int = 0
    mode: str = "inprocess"
    transfer: str = "secure"
    secret_theta: bool = False
    backward: str = "local"
    alignment: str = "index"
    roster: list[str] = field(default_factory=list)
    preprocessing_dir: str | None = None
    timeout: float = 30.0
    tamper: TamperPlan | None = None
    output_dir: str = "runs"
    source: str | None = None

    def degree_matrix(self) -> DegreeMatrix:
        if self.theta is not None:
            return DegreeMatrix(self.theta)
        return DegreeMatrix.uniform(self.n, self.theta_t)

    def network_spec(self):
        return get_network(self.network, self.hooks, self.dropout_keep)

    def roster_addresses(self) -> list[tuple[str, int]]:
        out = []
        for entry in self.roster:
            host, _, port = entry.rpartition(":")
            out.append((host, int(port)))
        return out

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["tamper"] = self.tamper.to_dict() if self.tamper else None
        d.pop("source")
        return d


_SCALARS = {
    "n": int,
    "kappa": int,
    "precision": int,
    "network": str,
    "theta_t": float,
    "train_per_domain": int,
    "test_per_domain": int,
    "epochs": int,
    "batch_size": int,
    "learning_rate": float,
    "dropout_keep": float,
    "seed": int,
    "mode": str,
    "transfer": str,
    "secret_theta": bool,
    "backward": str,
    "alignment": str,
    "preprocessing_dir": str,
    "timeout": float,
    "output_dir": str,
}
_KNOWN = set(_SCALARS) | {"theta", "hooks", "dataset", "roster", "tamper"}


def _line(node: yaml.Node | None) -> int | None:
    return None if node is None else node.start_mark.line + 1


def _coerce(value: Any, kind: type, key: str, line, path):
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false", line, path)
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer, got {value!r}", line, path)
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}", line, path)
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{key} must be a string, got {value!r}", line, path)
    return value


def parse_config(text: str, path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Parse and validate a configuration document.

    ``overrides`` (e.g. from command-line flags) replace file values before
    validation; errors in them carry no line number.
    """
    try:
        root = yaml.compose(text) if text.strip() else None
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {getattr(exc, 'problem', exc)}", mark.line + 1 if mark else None, path)
    if root is not None and not isinstance(root, yaml.MappingNode):
        raise ConfigError("configuration must be a mapping", _line(root), path)
    lines: dict[str, int | None] = {}
    data: dict[str, Any] = {}
    if root is not None:
        for knode, vnode in root.value:
            key = knode.value
            if key in data:
                raise ConfigError(f"duplicate key {key!r}", _line(knode), path)
            if key not in _KNOWN:
                raise ConfigError(f"unknown key {key!r}", _line(knode), path)
            data[key] = yaml.safe_load(yaml.serialize(vnode))
            lines[key] = _line(knode)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _KNOWN:
            raise ConfigError(f"unknown key {key!r}", None, path)
        data[key] = value
        lines[key] = None

    cfg = RunConfig(source=path)
    for key, kind in _SCALARS.items():
        if key in data and data[key] is not None:
            setattr(cfg, key, _coerce(data[key], kind, key, lines.get(key), path))

    def fail(key: str, message: str):
        raise ConfigError(message, lines.get(key), path)

    if cfg.n < 1:
        fail("n", f"n must be at least 1, got {cfg.n}")
    if cfg.kappa not in (32, 64, 128):
        fail("kappa", f"kappa must be 32, 64 or 128, got {cfg.kappa}")
    if cfg.precision < 1 or 2 * cfg.precision + HEADROOM_BITS > cfg.kappa:
        fail("precision", f"precision {cfg.precision} does not fit kappa {cfg.kappa} (need 2p + {HEADROOM_BITS} <= kappa)")
    if cfg.network not in NETWORKS:
        fail("network", f"network must be one of {sorted(NETWORKS)}, got {cfg.network!r}")
    for key in ("train_per_domain", "test_per_domain", "batch_size"):
        if getattr(cfg, key) < 1:
            fail(key, f"{key} must be at least 1")
    if cfg.epochs < 0:
        fail("epochs", "epochs must be non-negative")
    if not 0 < cfg.dropout_keep <= 1:
        fail("dropout_keep", "dropout_keep must lie in (0, 1]")
    if cfg.learning_rate <= 0:
        fail("learning_rate", "learning_rate must be positive")
    if cfg.timeout <= 0:
        fail("timeout", "timeout must be positive")
    for key, allowed in (("mode", MODES), ("transfer", TRANSFERS), ("backward", ("local", "joint")),
                         ("alignment", ("index", "label"))):
        if getattr(cfg, key) not in allowed:
            fail(key, f"{key} must be one of {list(allowed)}, got {getattr(cfg, key)!r}")

    if data.get("theta") is not None:
        try:
            theta = DegreeMatrix(data["theta"])
        except (ValueError, TypeError) as exc:
            fail("theta", f"theta: {exc}")
        if theta.n != cfg.n:
            fail("theta", f"theta is {theta.n} x {theta.n} but n = {cfg.n}")
        cfg.theta = theta.tolist()
    elif cfg.n > 1:
        try:
            DegreeMatrix.uniform(cfg.n, cfg.theta_t)
        except ValueError as exc:
            fail("theta_t", str(exc))

    if data.get("hooks") is not None:
        hooks = data["hooks"]
        if not isinstance(hooks, list) or not all(isinstance(h, str) for h in hooks):
            fail("hooks", "hooks must be a list of layer names")
        cfg.hooks = hooks
    try:
        cfg.network_spec()
    except ValueError as exc:
        fail("hooks", str(exc))

    ds = data.get("dataset")
    if ds is not None:
        if not isinstance(ds, dict) or len(ds) != 1 or not ({"path", "synthetic"} & set(ds)):
            fail("dataset", "dataset must be {path: DIR} or {synthetic: COUNT}")
        if "path" in ds:
            cfg.dataset_path = str(ds["path"])
        else:
            cfg.synthetic = _coerce(ds["synthetic"], int, "dataset.synthetic", lines.get("dataset"), path)
    if cfg.dataset_path is None and cfg.synthetic is None:
        cfg.synthetic = cfg.n * (cfg.train_per_domain + cfg.test_per_domain)

    if data.get("roster") is not None:
        roster = data["roster"]
        if not isinstance(roster, list):
            fail("roster", "roster must be a list of host:port entries")
        for entry in roster:
            host, sep, port = str(entry).rpartition(":")
            if not sep or not host or not port.isdigit():
                fail("roster", f"bad roster entry {entry!r}, expected host:port")
        cfg.roster = [str(e) for e in roster]
    if cfg.mode == "tcp":
        if len(cfg.roster) != cfg.n:
            fail("roster", f"tcp mode needs {cfg.n} roster entries, got {len(cfg.roster)}")
        if cfg.n < 2:
            fail("mode", "tcp mode needs at least 2 parties")

    if data.get("tamper") is not None:
        t = data["tamper"]
        if not isinstance(t, dict) or "strategy" not in t:
            fail("tamper", "tamper must be a mapping with a strategy")
        try:
            plan = TamperPlan(
                Strategy(t["strategy"]),
                tuple(t.get("targets", (1,))),
                int(t.get("delta", 1)),
                int(t.get("trigger_round", 0)),
                int(t.get("trigger_index", 0)),
            )
            plan.validate(cfg.n)
        except (ValueError, TypeError) as exc:
            fail("tamper", f"tamper: {exc}")
        cfg.tamper = plan
    return cfg


def load_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration: {exc}", None, str(path))
    return parse_config(text, str(path), overrides)
