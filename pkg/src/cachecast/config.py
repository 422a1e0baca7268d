"""Shared key-value configuration (INI syntax) for every subcommand.

Example::

    [library]
    m = 100
    variances = uniform(0.7, 1.6, 1)
    samples_per_file = 1

    [demand]
    n = 20
    alpha = 0.6

    [cache]
    budget = 50

    [sweep]
    capacities = 2, 5, 8
    cache_sizes = 5:100:5
    schemes = lcu, ccm-rlfu
    trials = 2000
    seed = 0

``variances`` is ``constant(v)``, ``uniform(lo, hi, seed)`` or a list of
``m`` numbers. Instead of ``alpha`` the demand section may give explicit
request rows, ``rows = 0.6 0.3 0.1; 0.2 0.5 0.3``. ``budget`` is one number
or one per receiver. Number lists accept ``start:stop:step`` ranges.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .source_model import DemandModel, SourceLibrary, zipf_demand

_CALL = re.compile(r"^\s*(\w+)\s*\((.*)\)\s*$")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class VarianceSpec:
    """How the per-file variances are produced; kept so it can be written back out."""

    kind: str
    args: tuple

    def build(self, m: int) -> np.ndarray:
        if self.kind == "constant":
            return np.full(m, float(self.args[0]))
        if self.kind == "uniform":
            lo, hi, seed = self.args
            return SourceLibrary.uniform_random(m, lo, hi, int(seed)).variances
        vals = np.asarray(self.args, dtype=float)
        if vals.size != m:
            raise ConfigError(f"variance list has {vals.size} entries, expected {m}")
        return vals

    def __str__(self) -> str:
        if self.kind == "list":
            return ", ".join(repr(float(v)) for v in self.args)
        return f"{self.kind}({', '.join(str(a) for a in self.args)})"


def parse_numbers(text: str) -> list[float]:
    """``"2, 5, 8"`` or ``"5:100:5"`` (inclusive stop) or a mix of both."""
    out: list[float] = []
    for part in re.split(r"[,\s]+", text.strip()):
        if not part:
            continue
        if ":" in part:
            bits = [float(b) for b in part.split(":")]
            if len(bits) != 3 or bits[2] <= 0:
                raise ConfigError(f"bad range {part!r}; use start:stop:step")
            start, stop, step = bits
            k = int(np.floor((stop - start) / step + 1e-9))
            out.extend(float(np.round(start + i * step, 12)) for i in range(k + 1))
        else:
            out.append(float(part))
    return out


def parse_variances(text: str) -> VarianceSpec:
    mt = _CALL.match(text)
    if mt:
        kind = mt.group(1).lower()
        args = tuple(float(a) for a in mt.group(2).split(",") if a.strip())
        if kind == "constant" and len(args) == 1:
            return VarianceSpec("constant", args)
        if kind == "uniform" and len(args) == 3:
            return VarianceSpec("uniform", (args[0], args[1], int(args[2])))
        raise ConfigError(f"cannot parse variances {text!r}")
    return VarianceSpec("list", tuple(parse_numbers(text)))


@dataclass(frozen=True)
class ExperimentConfig:
    library: SourceLibrary
    demand: DemandModel
    budgets: np.ndarray
    variance_spec: VarianceSpec
    alpha: float | None
    sections: dict

    @property
    def n(self) -> int:
        return self.demand.n

    @property
    def m(self) -> int:
        return self.demand.m


def load_config(source) -> ExperimentConfig:
    """Read a config file path (or an INI string containing a section header)."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";;"))
    text = str(source)
    if "[" in text and "\n" in text:
        cp.read_string(text)
    else:
        path = Path(source)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        cp.read(path)
    try:
        lib_s, dem_s = cp["library"], cp["demand"]
    except KeyError as exc:
        raise ConfigError(f"missing section {exc}") from None
    n = dem_s.getint("n", fallback=1)
    alpha = None
    if "rows" in dem_s:
        rows = [parse_numbers(r) for r in dem_s["rows"].split(";") if r.strip()]
        q = np.array(rows, dtype=float)
        if q.shape[0] == 1:
            q = np.repeat(q, n, axis=0)
        model = DemandModel(q)
        m = model.m
    else:
        m = lib_s.getint("m")
        if m is None:
            raise ConfigError("library.m is required when demand rows are not given")
        alpha = dem_s.getfloat("alpha", fallback=0.0)
        model = zipf_demand(m, alpha, n)
    if "m" in lib_s and lib_s.getint("m") != m:
        raise ConfigError("library.m disagrees with the demand rows")
    vspec = parse_variances(lib_s.get("variances", "constant(1.0)"))
    lib = SourceLibrary(vspec.build(m), lib_s.getint("samples_per_file", fallback=1))
    budget_text = cp.get("cache", "budget", fallback="0")
    b = np.asarray(parse_numbers(budget_text), dtype=float)
    if b.size not in (1, model.n):
        raise ConfigError("cache.budget needs one value or one per receiver")
    budgets = np.broadcast_to(b, (model.n,)).copy()
    sections = {s: dict(cp[s]) for s in cp.sections()}
    return ExperimentConfig(lib, model, budgets, vspec, alpha, sections)
