"""Experiment configuration: one declarative TOML file per experiment.

Schema (all tables optional unless noted):

    [model]                         # required
    kind = "galton_watson"          # "fragmentation" | "poisson"
    probs = [0.1, 0.3, 0.6]         # galton_watson
    # components = [{weight = 1.0, v = [0.5, 0.5]}]   # fragmentation
    # a = 1.0, b = 0                                  # poisson

    [characteristic]
    kind = "fringe"                 # "indicator" | "nerman"
    pattern = "()"                  # fringe only

    [experiment]
    horizons = [2.0, 4.0, 6.0]
    replicas = 1000
    master_seed = 20240801
    clt_t = 12.0
    clt_t_big = 18.0
    patterns = ["()", "(())"]
    simulate_time = 3.0             # or simulate_count = 50
    output_dir = "out"
    threads = 1

    [tolerances]
    root_tol = 1e-12
    grid_step = 0.01                # non-lattice renewal/quadrature step
    s_max = 40.0
    nested_mc_m = 200
    delta_w = 6.0                   # extended-horizon gap; default ceil(4.6/alpha)
    sigma_budget = 4000
    sigma_smin = 25.0               # default 10/alpha
    im_max = 50.0

All randomness flows from ``master_seed`` through
``SeedSequence((master_seed, replica_index))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - 3.10 fallback
    import tomli as tomllib

from .characteristics import (
    Characteristic,
    FringeCharacteristic,
    FringePattern,
    IndicatorCharacteristic,
    NermanCharacteristic,
)
from .errors import ConfigurationError
from .models import BirthLaw, Fragmentation, GaltonWatson, PoissonIntensity


@dataclass(frozen=True)
class Tolerances:
    root_tol: float = 1e-12
    grid_step: Optional[float] = None
    s_max: float = 40.0
    nested_mc_m: int = 200
    delta_w: Optional[float] = None
    sigma_budget: int = 4000
    sigma_smin: Optional[float] = None
    im_max: float = 50.0
    rel_tail_tol: float = 1e-3

    def __post_init__(self):
        for name in (
            "root_tol",
            "grid_step",
            "s_max",
            "delta_w",
            "sigma_smin",
            "im_max",
            "rel_tail_tol",
        ):
            val = getattr(self, name)
            if val is not None and val <= 0:
                raise ConfigurationError(f"tolerance {name} must be positive")
        if self.nested_mc_m < 1 or self.sigma_budget < 2:
            raise ConfigurationError("sample counts must be positive")

    def resolved_delta_w(self, alpha: float) -> float:
        if self.delta_w is not None:
            return self.delta_w
        return math.ceil(4.6 / alpha)


@dataclass(frozen=True)
class ExperimentConfig:
    law: BirthLaw
    characteristic: tuple
    horizons: tuple[float, ...]
    replicas: int
    master_seed: int
    clt_t: Optional[float]
    clt_t_big: Optional[float]
    patterns: tuple[str, ...]
    simulate_time: Optional[float]
    simulate_count: Optional[int]
    output_dir: str
    threads: int
    node_cap: int = 100_000_000
    tolerances: Tolerances = field(default_factory=Tolerances)

    def __post_init__(self):
        if self.replicas < 1:
            raise ConfigurationError("replicas must be at least 1")
        if not self.horizons:
            raise ConfigurationError("horizons must be non-empty")
        if list(self.horizons) != sorted(self.horizons):
            raise ConfigurationError("horizons must be sorted ascending")
        if self.threads < 1:
            raise ConfigurationError("threads must be at least 1")
        if self.node_cap < 1:
            raise ConfigurationError("node cap must be positive")

    def make_characteristic(self, alpha: Optional[float] = None) -> Characteristic:
        kind = self.characteristic[0]
        if kind == "indicator":
            return IndicatorCharacteristic()
        if kind == "nerman":
            if alpha is None:
                raise ConfigurationError("nerman characteristic needs alpha")
            return NermanCharacteristic(self.law, alpha)
        if kind == "fringe":
            pattern = FringePattern.parse(self.characteristic[1])
            return FringeCharacteristic(pattern, self.law)
        raise ConfigurationError(f"unknown characteristic kind {kind!r}")


def _build_law(table: dict) -> BirthLaw:
    kind = table.get("kind")
    if kind == "galton_watson":
        if "probs" not in table:
            raise ConfigurationError("galton_watson model needs 'probs'")
        return GaltonWatson(tuple(table["probs"]))
    if kind == "fragmentation":
        comps = table.get("components")
        if not comps:
            raise ConfigurationError("fragmentation model needs 'components'")
        return Fragmentation(
            tuple((c.get("weight", 1.0), tuple(c["v"])) for c in comps)
        )
    if kind == "poisson":
        if "a" not in table or "b" not in table:
            raise ConfigurationError("poisson model needs 'a' and 'b'")
        return PoissonIntensity(float(table["a"]), int(table["b"]))
    raise ConfigurationError(f"unknown model kind {kind!r}")


def load_config(path) -> ExperimentConfig:
    raw = Path(path).read_bytes()
    try:
        doc = tomllib.loads(raw.decode("utf-8"))
    except Exception as exc:
        raise ConfigurationError(f"cannot parse config {path}: {exc}") from exc
    if "model" not in doc:
        raise ConfigurationError("config needs a [model] table")
    law = _build_law(doc["model"])

    char_tab = doc.get("characteristic", {"kind": "indicator"})
    kind = char_tab.get("kind", "indicator")
    if kind == "fringe":
        characteristic = ("fringe", char_tab.get("pattern", "()"))
    elif kind in ("indicator", "nerman"):
        characteristic = (kind,)
    else:
        raise ConfigurationError(f"unknown characteristic kind {kind!r}")

    exp = doc.get("experiment", {})
    tol_tab = doc.get("tolerances", {})
    try:
        tolerances = Tolerances(**tol_tab)
    except TypeError as exc:
        raise ConfigurationError(f"unknown tolerance field: {exc}") from exc

    return ExperimentConfig(
        law=law,
        characteristic=characteristic,
        horizons=tuple(float(t) for t in exp.get("horizons", [2.0, 4.0, 6.0])),
        replicas=int(exp.get("replicas", 1000)),
        master_seed=int(exp.get("master_seed", 0)),
        clt_t=float(exp["clt_t"]) if "clt_t" in exp else None,
        clt_t_big=float(exp["clt_t_big"]) if "clt_t_big" in exp else None,
        patterns=tuple(exp.get("patterns", ["()"])),
        simulate_time=float(exp["simulate_time"]) if "simulate_time" in exp else None,
        simulate_count=int(exp["simulate_count"]) if "simulate_count" in exp else None,
        output_dir=str(exp.get("output_dir", "out")),
        threads=int(exp.get("threads", 1)),
        node_cap=int(exp.get("node_cap", 100_000_000)),
        tolerances=tolerances,
    )
