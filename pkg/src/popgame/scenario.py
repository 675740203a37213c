"""Scenario files: schema validation, construction of games and dynamics, artifact serialization."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import jsonschema
import numpy as np

from .certify import Budget
from .core import PopulationStructure
from .edm import IpcProtocol, power_rate, smith_rate
from .games import AffineDelay, BprDelay, LinearGame, MixedAutonomyGame, PopulationGame, RoadSplitGame
from .pdm import SmoothingPdm

BUNDLED = "scenarios"


class ScenarioError(ValueError):
    """Malformed, schema-invalid or dimensionally inconsistent scenario."""


def load_schema(name: str) -> dict:
    text = resources.files(__package__).joinpath("schema", f"{name}.schema.json").read_text()
    return json.loads(text)


def validate(data: Any, schema: str) -> None:
    try:
        jsonschema.validate(data, load_schema(schema))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ScenarioError(f"schema error at {where}: {exc.message}") from None


@dataclass
class Scenario:
    name: str
    game: PopulationGame
    protocol: IpcProtocol
    pdm: Optional[SmoothingPdm] = None
    x0: Any = "uniform"
    q0: Any = "consistent"
    horizon: float = 100.0
    step: float = 1e-2
    stride: int = 10
    tolerance: float = 1e-6
    monitor_tolerance: float = 1e-7
    seed: int = 0
    certify_weights: Optional[list] = None
    margin: float = 1e-8
    budget: Budget = field(default_factory=Budget)
    verify_samples: int = 1000
    soundness_samples: int = 10000
    corrupt_sigma: bool = False

    @property
    def structure(self) -> PopulationStructure:
        return self.game.structure

    def with_overrides(self, seed=None, step=None, horizon=None) -> Scenario:
        changes = {}
        if seed is not None:
            changes["seed"] = int(seed)
        if step is not None:
            changes["step"] = float(step)
        if horizon is not None:
            changes["horizon"] = float(horizon)
        return replace(self, **changes)

    def initial_state(self) -> np.ndarray:
        s = self.structure
        if isinstance(self.x0, str):
            if self.x0 == "uniform":
                return s.uniform_state()
            return s.random_state(np.random.default_rng(self.seed))
        return np.asarray(self.x0, dtype=float)

    def initial_pdm_state(self, x0) -> np.ndarray:
        base = self.pdm.consistent_state(x0)
        if isinstance(self.q0, str):
            return base
        if isinstance(self.q0, dict):
            return base + float(self.q0["offset"])
        return np.asarray(self.q0, dtype=float)


def _delay(cfg: dict):
    if cfg["type"] == "affine":
        return AffineDelay(cfg["a"], cfg["alpha"])
    return BprDelay(cfg["alpha"], cfg.get("beta", 0.15), cfg.get("kappa", 1.0))


def build_game(cfg: dict) -> PopulationGame:
    kind = cfg["type"]
    if kind == "mixed_autonomy":
        od = cfg["od"]
        return MixedAutonomyGame(
            cfg["R"], [_delay(d) for d in cfg["delays"]], cfg["mu"],
            [o["routes"] for o in od], [o["mass_aut"] for o in od], [o["mass_reg"] for o in od])
    if kind == "road_split":
        kwargs = {k: tuple(cfg[k]) for k in ("ct", "cc", "theta", "mass") if k in cfg}
        return RoadSplitGame(**kwargs)
    structure = PopulationStructure.from_json({"populations": cfg["populations"]})
    A = np.asarray(cfg["A"], dtype=float)
    if A.shape != (structure.n, structure.n):
        raise ScenarioError(f"matrix A must be {structure.n}x{structure.n}, got {A.shape}")
    b = cfg.get("b")
    if b is not None and len(b) != structure.n:
        raise ScenarioError(f"vector b must have length {structure.n}")
    return LinearGame(structure, A, b)


def build_protocol(structure: PopulationStructure, cfg: Optional[dict]) -> IpcProtocol:
    cfg = cfg or {"type": "smith"}
    if cfg["type"] == "smith" or cfg["phi"] == "smith":
        return IpcProtocol(structure, (smith_rate(),))
    return IpcProtocol(structure, (power_rate(cfg.get("exponent", 2.0)),))


def from_dict(data: Any, name: str = "scenario") -> Scenario:
    """Validate a parsed scenario and build its objects; raises ``ScenarioError``."""
    validate(data, "scenario")
    try:
        game = build_game(data["game"])
    except ScenarioError:
        raise
    except ValueError as exc:
        raise ScenarioError(f"invalid game: {exc}") from None
    s = game.structure
    pdm = None
    pdm_spec = data.get("pdm", {"type": "memoryless"})
    if pdm_spec["type"] == "smoothing":
        if not isinstance(game, MixedAutonomyGame):
            raise ScenarioError("the smoothing PDM needs a mixed_autonomy game")
        pdm = SmoothingPdm(game, pdm_spec.get("tau", 1.0))
    x0 = data.get("initial", {}).get("x0", "uniform")
    if isinstance(x0, list):
        if len(x0) != s.n:
            raise ScenarioError(f"x0 has length {len(x0)}, the game has {s.n} strategies")
        try:
            s.check_state(np.asarray(x0, dtype=float))
        except ValueError as exc:
            raise ScenarioError(f"x0 is not a social state: {exc}") from None
    q0 = pdm_spec.get("q0", "consistent")
    if isinstance(q0, list):
        if len(q0) != pdm.state_dim:
            raise ScenarioError(f"q0 has length {len(q0)}, the network has {pdm.state_dim} links")
    cert = data.get("certify", {})
    weights = cert.get("weights", "search")
    if isinstance(weights, list) and len(weights) != s.rho:
        raise ScenarioError(f"certify.weights needs {s.rho} entries, got {len(weights)}")
    verify = data.get("verify", {})
    return Scenario(
        name=data.get("name", name),
        game=game,
        protocol=build_protocol(s, data.get("edm")),
        pdm=pdm,
        x0=x0,
        q0=q0,
        horizon=float(data.get("horizon", 100.0)),
        step=float(data.get("step", 1e-2)),
        stride=int(data.get("stride", 10)),
        tolerance=float(data.get("tolerance", 1e-6)),
        monitor_tolerance=float(data.get("monitor_tolerance", 1e-7)),
        seed=int(data.get("seed", 0)),
        certify_weights=None if weights == "search" else list(weights),
        margin=float(cert.get("margin", 1e-8)),
        budget=Budget(**cert.get("budget", {})),
        verify_samples=int(verify.get("samples", 1000)),
        soundness_samples=int(verify.get("soundness_samples", 10000)),
        corrupt_sigma=bool(data.get("test_hooks", {}).get("corrupt_sigma", False)),
    )


def resolve_path(path: str | Path) -> Path:
    """The given path, or the bundled scenario of the same basename if it does not exist."""
    p = Path(path)
    if p.exists():
        return p
    bundled = resources.files(__package__).joinpath(BUNDLED, p.name)
    if bundled.is_file():
        return Path(str(bundled))
    raise ScenarioError(f"scenario file not found: {path}")


def load(path: str | Path) -> Scenario:
    p = resolve_path(path)
    text = p.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{p}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return from_dict(data, name=p.stem)


def bundled_scenarios() -> list[str]:
    root = resources.files(__package__).joinpath(BUNDLED)
    return sorted(f.name for f in root.iterdir() if f.name.endswith(".json"))


# ------------------------------------------------------------ serialization

def format_float(v: float) -> str:
    return format(float(v), ".17g")


def dumps(obj: Any, indent: int = 2, _level: int = 0) -> str:
    """JSON text with every float at 17 significant digits; non-finite floats become null."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(dumps(v, indent, _level + 1) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in seq) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(obj) if math.isfinite(obj) else "null"
    return json.dumps(obj)


def write_json(path: Path, obj: Any) -> None:
    path.write_text(dumps(obj) + "\n")


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(format_float(v) for v in row) + "\n")
