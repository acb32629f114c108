"""Scenario configuration: INI files (or the ``config`` block of a run manifest).

Densities are written as calls::

    gaussian(mean=-1, var=0.25)             # mean may be a list in 2D
    mixture(weights=[0.3, 0.7], means=[-1, 1], vars=[0.2, 0.3])
    csv(path="rho0.csv")                    # field CSV on the same grid

See README.md for every section and key.
"""

from __future__ import annotations

import ast
import configparser
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .errors import ConfigError
from .fields import Grid, TimeGrid, normalize_density, read_field_csv

DensitySpec = Callable[[Grid], np.ndarray]


def _gaussian(grid: Grid, mean, var) -> np.ndarray:
    mean = np.broadcast_to(np.asarray(mean, dtype=float), (grid.dim,))
    if not float(var) > 0:
        raise ConfigError("gaussian variance must be positive", "var")
    d = grid.mesh() - mean
    return np.exp(-np.sum(d**2, axis=-1) / (2 * float(var)))


def parse_density(text: str, base: Path | None = None, key: str = "density") -> DensitySpec:
    """Turn a density expression into ``grid -> normalized density``."""
    try:
        node = ast.parse(text.strip(), mode="eval").body
        if not isinstance(node, ast.Call) or not isinstance(node.func, ast.Name):
            raise ValueError
        name = node.func.id
        args = [ast.literal_eval(a) for a in node.args]
        kw = {k.arg: ast.literal_eval(k.value) for k in node.keywords}
    except (SyntaxError, ValueError):
        raise ConfigError(f"cannot parse density expression {text!r}", key) from None

    if name == "gaussian":
        vals = dict(zip(("mean", "var"), args)) | kw
        if set(vals) != {"mean", "var"}:
            raise ConfigError("gaussian needs mean and var", key)
        return lambda grid: normalize_density(_gaussian(grid, vals["mean"], vals["var"]), grid)
    if name == "mixture":
        vals = dict(zip(("weights", "means", "vars"), args)) | kw
        if set(vals) != {"weights", "means", "vars"}:
            raise ConfigError("mixture needs weights, means and vars", key)
        w, m, v = (list(vals[k]) for k in ("weights", "means", "vars"))
        if not (len(w) == len(m) == len(v)) or any(x < 0 for x in w) or sum(w) <= 0:
            raise ConfigError("mixture weights, means and vars must match and weights be nonnegative", key)

        def mix(grid):
            comps = [wi * normalize_density(_gaussian(grid, mi, vi), grid) for wi, mi, vi in zip(w, m, v)]
            return normalize_density(sum(comps), grid)

        return mix
    if name == "csv":
        vals = dict(zip(("path",), args)) | kw
        if "path" not in vals:
            raise ConfigError("csv needs a path", key)
        path = Path(vals["path"])
        if base is not None and not path.is_absolute():
            path = base / path
        if not path.exists():
            raise ConfigError(f"density file {path} does not exist", key)

        def from_csv(grid):
            cols = read_field_csv(path, grid)
            if not cols:
                raise ConfigError(f"{path} has no value column", key)
            return normalize_density(np.clip(next(iter(cols.values())), 0.0, None), grid)

        return from_csv
    raise ConfigError(f"unknown density kind {name!r}", key)


@dataclass
class Scenario:
    """Parsed configuration; `raw` keeps every section for the manifest."""

    raw: dict[str, dict[str, str]]
    base: Path

    # -- generic accessors -------------------------------------------------
    def has(self, section: str, key: str | None = None) -> bool:
        if section not in self.raw:
            return False
        return key is None or key in self.raw[section]

    def get(self, section: str, key: str, default: Any = ..., kind: type = str) -> Any:
        try:
            text = self.raw[section][key]
        except KeyError:
            if default is ...:
                raise ConfigError(f"missing required key [{section}] {key}", f"{section}.{key}") from None
            return default
        try:
            if kind is bool:
                low = text.strip().lower()
                if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                    raise ValueError
                return low in ("true", "yes", "1", "on")
            return kind(text.strip())
        except ValueError:
            raise ConfigError(f"[{section}] {key} = {text!r} is not a valid {kind.__name__}",
                              f"{section}.{key}") from None

    def positive(self, section: str, key: str, default: Any = ..., kind: type = float):
        v = self.get(section, key, default, kind)
        if not v > 0:
            raise ConfigError(f"[{section}] {key} must be positive", f"{section}.{key}")
        return v

    # -- typed sections ----------------------------------------------------
    def grid(self, points_key: str = "points", section: str = "grid") -> Grid:
        dim = self.get(section, "dim", 1, int)
        lo = self.get(section, "lower", kind=float)
        up = self.get(section, "upper", kind=float)
        n = self.get(section, points_key, kind=int)
        try:
            return Grid((lo,) * dim, (up,) * dim, (n,) * dim)
        except ValueError as e:
            raise ConfigError(str(e), section) from None

    def timegrid(self, section: str = "time") -> TimeGrid:
        try:
            return TimeGrid(self.get(section, "t0", 0.0, float), self.get(section, "t1", kind=float),
                            self.get(section, "steps", kind=int))
        except ValueError as e:
            raise ConfigError(str(e), section) from None

    def density(self, section: str, key: str) -> DensitySpec:
        return parse_density(self.get(section, key), self.base, f"{section}.{key}")

    def output_dir(self, override: str | None = None) -> Path:
        if override:
            return Path(override)
        out = Path(self.get("output", "dir", "sbwave-out"))
        return out if out.is_absolute() else self.base / out


def load_scenario(path: str | Path) -> Scenario:
    """Read an INI scenario, or the ``config`` block of a ``manifest.json``."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist", "--config")
    if path.suffix == ".json":
        try:
            manifest = json.loads(path.read_text())
            raw = manifest["config"]
        except (json.JSONDecodeError, KeyError):
            raise ConfigError(f"{path} is not a run manifest with a config block", "config") from None
        base = Path(manifest.get("config_base", path.parent))
        return Scenario({s: dict(v) for s, v in raw.items()}, base)
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read(path)
    except configparser.Error as e:
        raise ConfigError(f"cannot parse {path}: {e}", "config") from None
    raw = {s: dict(cp[s]) for s in cp.sections()}
    return Scenario(raw, path.parent.resolve())
