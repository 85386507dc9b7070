"""Scenario configuration files: schema, defaults and builders.

A scenario is a JSON document describing the domain and mesh, the model
parameters and forcing, the turbine farm, the layout constraints and the
optimiser settings. Missing model and turbine fields take the standard
values below (depth 50 m, viscosity 3 m^2/s, K = 21, radius 10 m, ...).
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .errors import ConfigError
from .mesh import Mesh, Rect, generate_channel_mesh, read_tfmesh
from .optimise import ConstraintSpec
from .spaces import FunctionSpacePair, build_spaces
from .swe import BoundaryForcing, ModelConfig, ShallowWater, Sinusoid
from .turbine import Mode, TurbineFarm, regular_grid_layout

DEFAULTS = {
    "model": {"H": 50.0, "g": 9.81, "nu": 3.0, "c_b": 0.0025, "rho": 1000.0, "kappa": 0},
    "forcing": {"inflow": {"type": "constant", "velocity": [2.0, 0.0]}, "wall": "free_slip"},
    "turbines": {"radius": 10.0, "K": 21.0, "layout": {"grid": [8, 4]}},
    "constraints": {"d_min": 0.0, "K_max": 21.0},
    "optimiser": {"mode": "positions", "tol": 1e-6, "max_iter": 100},
}

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_TAG = {"enum": ["inflow", "outflow", "wall"]}

SCHEMA = {
    "type": "object",
    "required": ["name", "domain"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "output": {"type": "string"},
        "domain": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "width": _POS, "height": _POS, "h_out": _POS, "h_in": _POS,
                "site": {"type": "array", "items": _NUM, "minItems": 4, "maxItems": 4},
                "side_tags": {"type": "object", "additionalProperties": False,
                              "properties": {k: _TAG for k in ("left", "right", "bottom", "top")}},
                "tfmesh": {"type": "string"},
                "symmetric": {"type": "boolean"},
            },
            "anyOf": [{"required": ["width", "height", "h_out"]}, {"required": ["tfmesh"]}],
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"H": _POS, "g": _POS, "nu": {"type": "number", "minimum": 0},
                           "c_b": {"type": "number", "minimum": 0}, "rho": _POS,
                           "kappa": {"enum": [0, 1]}, "T": _POS, "dt": _POS},
        },
        "forcing": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "inflow": {"oneOf": [
                    {"type": "object", "additionalProperties": False, "required": ["type", "velocity"],
                     "properties": {"type": {"const": "constant"},
                                    "velocity": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}}},
                    {"type": "object", "additionalProperties": False, "required": ["type", "period"],
                     "properties": {"type": {"const": "sinusoid"}, "amplitude": _NUM, "period": _POS}},
                ]},
                "wall": {"enum": ["free_slip", "no_slip"]},
            },
        },
        "turbines": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "radius": _POS,
                "K": {"type": "number", "minimum": 0},
                "frictions": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "layout": {"oneOf": [
                    {"type": "object", "additionalProperties": False, "required": ["grid"],
                     "properties": {"grid": {"type": "array", "items": {"type": "integer", "minimum": 0},
                                             "minItems": 2, "maxItems": 2}}},
                    {"type": "object", "additionalProperties": False, "required": ["positions"],
                     "properties": {"positions": {"type": "array", "items": {
                         "type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}}}},
                ]},
            },
        },
        "constraints": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"d_min": {"type": "number", "minimum": 0}, "K_max": {"type": "number", "minimum": 0},
                           "feasibility_tol": _POS},
        },
        "optimiser": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"mode": {"enum": [m.value for m in Mode]}, "tol": _POS,
                           "max_iter": {"type": "integer", "minimum": 0}},
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"K": {"type": "array", "items": {"type": "number", "minimum": 0}}},
        },
    },
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict) and key not in ("inflow", "layout"):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _locate(text: str, path) -> str:
    """Best-effort line number of the last key of a validation error path."""
    keys = [p for p in path if isinstance(p, str)]
    if not keys:
        return ""
    needle = f'"{keys[-1]}"'
    for lineno, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return f" (line {lineno})"
    return ""


@dataclass
class ScenarioConfig:
    """A validated scenario with defaults filled in. ``data`` is the merged JSON."""

    data: dict
    source: Path | None = None

    @classmethod
    def from_dict(cls, data: dict, source: Path | None = None, text: str | None = None) -> "ScenarioConfig":
        try:
            jsonschema.validate(data, SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            line = _locate(text, exc.absolute_path) if text else ""
            raise ConfigError(f"invalid config at {where}{line}: {exc.message}") from None
        merged = _merge(DEFAULTS, data)
        cfg = cls(merged, source)
        cfg._check()
        return cfg

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        path = Path(path)
        if not path.exists():
            shipped = resources.files("tidalopt") / "configs" / f"{path.name.removesuffix('.json')}.json"
            if not shipped.is_file():
                raise ConfigError(f"config file {path} not found")
            text = shipped.read_text()
        else:
            text = path.read_text()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
        return cls.from_dict(data, path, text)

    def _check(self):
        model = self.data["model"]
        if model["kappa"] == 1:
            if "T" not in model or "dt" not in model:
                raise ConfigError("time-dependent scenarios need model.T and model.dt")
            if model["dt"] > model["T"]:
                raise ConfigError("model.dt must not exceed model.T")
        dom = self.data["domain"]
        site = dom.get("site")
        if site is not None and (site[0] >= site[1] or site[2] >= site[3]):
            raise ConfigError("domain.site must be [xmin, xmax, ymin, ymax] with positive extent")

    # ------------------------------------------------------------ properties
    @property
    def name(self) -> str:
        return self.data["name"]

    @property
    def site(self) -> Rect | None:
        s = self.data["domain"].get("site")
        return None if s is None else Rect(*s)

    @property
    def unsteady(self) -> bool:
        return self.data["model"]["kappa"] == 1

    @property
    def tol(self) -> float:
        return float(self.data["optimiser"]["tol"])

    @property
    def max_iter(self) -> int:
        return int(self.data["optimiser"]["max_iter"])

    @property
    def sweep_values(self) -> list:
        return list(self.data.get("sweep", {}).get("K", range(1, 60, 2)))

    # -------------------------------------------------------------- builders
    def build_mesh(self) -> Mesh:
        dom = self.data["domain"]
        if "tfmesh" in dom:
            path = Path(dom["tfmesh"])
            if not path.is_absolute() and self.source is not None:
                path = self.source.parent / path
            return read_tfmesh(path, self.site)
        return generate_channel_mesh(dom["width"], dom["height"], dom["h_out"], site=self.site,
                                     h_in=dom.get("h_in"), side_tags=dom.get("side_tags"),
                                     symmetric=dom.get("symmetric", False))

    def model_config(self) -> ModelConfig:
        m = self.data["model"]
        f = self.data["forcing"]
        inflow = f["inflow"]
        if inflow["type"] == "sinusoid":
            inflow_value = Sinusoid(inflow.get("amplitude", 2.0), inflow["period"])
        else:
            inflow_value = tuple(inflow["velocity"])
        forcing = BoundaryForcing(inflow=inflow_value, wall=f["wall"])
        return ModelConfig(H=m["H"], g=m["g"], nu=m["nu"], c_b=m["c_b"], rho=m["rho"], kappa=m["kappa"],
                           T=m.get("T"), dt=m.get("dt"), forcing=forcing)

    def farm(self) -> TurbineFarm:
        t = self.data["turbines"]
        layout = t["layout"]
        if "grid" in layout:
            if self.site is None:
                raise ConfigError("a grid layout needs domain.site")
            positions = regular_grid_layout(self.site, *layout["grid"])
        else:
            positions = np.asarray(layout["positions"], dtype=float).reshape(-1, 2)
        frictions = t.get("frictions", t["K"])
        if np.ndim(frictions) and len(frictions) != len(positions):
            raise ConfigError(f"{len(frictions)} friction values for {len(positions)} turbines")
        return TurbineFarm(positions, frictions, t["radius"], Mode(self.data["optimiser"]["mode"]), self.site)

    def constraints(self, farm: TurbineFarm) -> ConstraintSpec:
        c = self.data["constraints"]
        return ConstraintSpec.for_farm(farm, d_min=c["d_min"], k_max=c["K_max"],
                                       feasibility_tol=c.get("feasibility_tol", 1e-6))

    def build(self):
        """Return ``(mesh, spaces, problem, farm)``."""
        mesh = self.build_mesh()
        spaces: FunctionSpacePair = build_spaces(mesh)
        problem = ShallowWater(spaces, self.model_config())
        return mesh, spaces, problem, self.farm()


def shipped_configs() -> list:
    """Names of the scenario files bundled with the package."""
    root = resources.files("tidalopt") / "configs"
    return sorted(p.name.removesuffix(".json") for p in root.iterdir() if p.name.endswith(".json"))


def load_config(path) -> ScenarioConfig:
    return ScenarioConfig.load(path)
