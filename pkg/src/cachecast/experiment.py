"""Distortion-versus-cache-size sweeps and their plot-ready outputs."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, VarianceSpec, parse_numbers, parse_variances
from .lcu import lcu_expected_distortion
from .optimizer import OptimizerConfig, optimize_rlfu, optimize_symmetric, optimize_uniform
from .source_model import EXACT_DEMAND_CAP, MonteCarlo, SourceLibrary, zipf_demand

log = logging.getLogger(__name__)

SCHEMES = ("lcu", "ccm-rlfu", "ccm-uniform", "ccm-symmetric")
SEED_ENV = "CACHECAST_SEED"
DEFAULT_TRIALS = 2000


def default_seed(fallback: int = 0) -> int:
    """Seed from the ``CACHECAST_SEED`` environment variable, if set."""
    text = os.environ.get(SEED_ENV, "").strip()
    return int(text) if text else fallback


@dataclass(frozen=True)
class SweepSpec:
    """The (scheme, R, M) points of one sweep.

    ``cache_sizes`` must be ascending; capacities are processed in ascending
    order whatever order they are given in, and reported in the given order.
    """

    capacities: tuple
    cache_sizes: tuple
    schemes: tuple = ("lcu", "ccm-rlfu")
    trials: int = DEFAULT_TRIALS
    seed: int = 0
    sigma_spec: VarianceSpec = field(default_factory=lambda: VarianceSpec("constant", (1.0,)))
    alpha: float = 0.0
    n: int = 20
    m: int = 100
    restarts: int = 8

    def __post_init__(self):
        if not self.capacities or not self.cache_sizes:
            raise ValueError("capacity and cache-size lists must be non-empty")
        if list(self.cache_sizes) != sorted(self.cache_sizes):
            raise ValueError("cache_sizes must be sorted ascending")
        if any(r < 0 for r in self.capacities) or any(M < 0 for M in self.cache_sizes):
            raise ValueError("capacities and cache sizes must be non-negative")
        if not self.schemes:
            raise ValueError(f"no scheme selected; valid schemes are {', '.join(SCHEMES)}")
        bad = [s for s in self.schemes if s not in SCHEMES]
        if bad:
            raise ValueError(f"unknown scheme(s) {bad}; valid schemes are {', '.join(SCHEMES)}")
        if self.trials < 2:
            raise ValueError("need at least two trials")

    @classmethod
    def from_config(cls, cfg: ExperimentConfig, seed: int | None = None) -> SweepSpec:
        s = cfg.sections.get("sweep", {})
        if cfg.alpha is None:
            raise ConfigError("sweeps need a Zipf alpha, not explicit request rows")
        schemes = tuple(x.strip() for x in s.get("schemes", "lcu, ccm-rlfu").split(",") if x.strip())
        return cls(
            capacities=tuple(parse_numbers(s.get("capacities", "2"))),
            cache_sizes=tuple(parse_numbers(s.get("cache_sizes", "0"))),
            schemes=schemes,
            trials=int(s.get("trials", DEFAULT_TRIALS)),
            seed=int(s.get("seed", 0)) if seed is None else int(seed),
            sigma_spec=cfg.variance_spec,
            alpha=float(cfg.alpha),
            n=cfg.n,
            m=cfg.m,
            restarts=int(s.get("restarts", 8)),
        )


@dataclass(frozen=True)
class SweepRow:
    scheme: str
    R: float
    M: float
    distortion: float
    stderr: float
    meta: dict


@dataclass(frozen=True)
class SweepTable:
    spec: SweepSpec
    variances: np.ndarray
    rows: tuple

    def curve(self, scheme: str, R: float) -> tuple[np.ndarray, np.ndarray]:
        pts = [(r.M, r.distortion) for r in self.rows if r.scheme == scheme and r.R == R]
        a = np.array(pts, dtype=float).reshape(-1, 2)
        return a[:, 0], a[:, 1]


def run_sweep(spec: SweepSpec) -> SweepTable:
    """Evaluate every (scheme, R, M) point of ``spec``.

    LC-U uses one fixed set of demand draws for all points (common random
    numbers) unless the demand space is small enough to enumerate. CC-CM
    objectives are exact. Each CC-CM point is warm-started from the solutions
    at the next smaller cache size and capacity, both of which stay feasible,
    so the curves cannot rise because of solver noise.
    """
    variances = spec.sigma_spec.build(spec.m)
    lib = SourceLibrary(variances)
    model = zipf_demand(spec.m, spec.alpha, spec.n)
    q = model.q[0]
    exact = spec.m**spec.n <= EXACT_DEMAND_CAP
    mode = "exact" if exact else MonteCarlo(spec.trials, spec.seed)
    cfg = OptimizerConfig(restarts=spec.restarts, seed=spec.seed)
    results: dict = {}
    R_sorted = sorted(set(spec.capacities))
    for scheme in spec.schemes:
        if scheme == "ccm-uniform" and (spec.alpha != 0 or np.ptp(variances) > 0):
            raise ValueError("ccm-uniform needs alpha = 0 and one common variance")
        sols: dict = {}
        for R in R_sorted:
            for M in spec.cache_sizes:
                t0 = time.perf_counter()
                if scheme == "lcu":
                    e = lcu_expected_distortion(lib, model, M, R, mode=mode)
                    row = (e.value, e.stderr, {"samples": e.samples, "exact": e.exact})
                elif scheme == "ccm-uniform":
                    sol = optimize_uniform(float(variances[0]), M, R, spec.n, m=spec.m, cfg=cfg)
                    row = (sol.objective, 0.0, {"Mt": sol.meta["Mt"], "Rt": sol.meta["Rt"], "feasible": sol.feasible})
                else:
                    warm = [s for s in (sols.get(("M", R)), sols.get(("R", M))) if s is not None]
                    solver = optimize_rlfu if scheme == "ccm-rlfu" else optimize_symmetric
                    sol = solver(lib, q, M, R, spec.n, cfg, warm_start=warm)
                    sols[("M", R)] = sol
                    sols[("R", M)] = sol
                    meta = {"feasible": sol.feasible, "slack": sol.constraint_slack}
                    if sol.m_tilde is not None:
                        meta.update(m_tilde=sol.m_tilde, Mt=sol.meta["Mt"], Rt=sol.meta["Rt"])
                    row = (sol.objective, 0.0, meta)
                log.info("%s R=%g M=%g -> %.6g (%.2fs)", scheme, R, M, row[0], time.perf_counter() - t0)
                results[(scheme, R, M)] = SweepRow(scheme, float(R), float(M), float(row[0]), float(row[1]), row[2])
    rows = tuple(results[(s, R, M)] for s in spec.schemes for R in spec.capacities for M in spec.cache_sizes)
    return SweepTable(spec, variances, rows)


def _num(x) -> str:
    return format(float(x), ".17g")


def _meta_text(meta: dict) -> str:
    parts = []
    for k in sorted(meta):
        v = meta[k]
        parts.append(f"{k}={_num(v) if isinstance(v, float) else v}")
    return ";".join(parts)


def table_csv(table: SweepTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scheme", "R", "M", "distortion", "stderr", "meta"])
    for r in table.rows:
        w.writerow([r.scheme, _num(r.R), _num(r.M), _num(r.distortion), _num(r.stderr), _meta_text(r.meta)])
    return buf.getvalue()


def manifest(table: SweepTable, curves: list | None = None) -> dict:
    s = table.spec
    return {
        "alpha": s.alpha,
        "cache_sizes": list(s.cache_sizes),
        "capacities": list(s.capacities),
        "curves": curves or [],
        "m": s.m,
        "n": s.n,
        "schemes": list(s.schemes),
        "seed": s.seed,
        "sigma_spec": str(s.sigma_spec),
        "trials": s.trials,
        "variances": [float(v) for v in table.variances],
    }


def emit_outputs(table: SweepTable, out_dir, fmt: str = "csv") -> list[Path]:
    """Write the table as one CSV or as per-curve two-column files.

    Both formats also write ``manifest.json`` with the frozen variance draw.
    Output bytes depend only on the table.
    """
    if not table.rows:
        raise ValueError("empty result table")
    if fmt not in ("csv", "plotdata"):
        raise ValueError("format must be csv or plotdata")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    written = []
    curves = []
    if fmt == "csv":
        p = out / "sweep.csv"
        p.write_text(table_csv(table))
        written.append(p)
    else:
        for scheme in table.spec.schemes:
            for R in table.spec.capacities:
                Ms, Ds = table.curve(scheme, float(R))
                name = f"{scheme}_R{_num(R)}.dat"
                lines = [f"# M distortion ({scheme}, R={_num(R)})"]
                lines += [f"{_num(a)} {_num(b)}" for a, b in zip(Ms, Ds)]
                p = out / name
                p.write_text("\n".join(lines) + "\n")
                written.append(p)
                curves.append({"file": name, "scheme": scheme, "R": float(R)})
    mp = out / "manifest.json"
    mp.write_text(json.dumps(manifest(table, curves), indent=1, sort_keys=True) + "\n")
    written.append(mp)
    return written


def zipf_sweep_spec(trials: int = DEFAULT_TRIALS, seed: int = 0, cache_sizes=None, capacities=(2, 5, 8)) -> SweepSpec:
    """n=20, m=100, Zipf 0.6, variances drawn once from U[0.7, 1.6]."""
    return SweepSpec(
        capacities=tuple(capacities),
        cache_sizes=tuple(cache_sizes or range(5, 101, 5)),
        schemes=("lcu", "ccm-rlfu"),
        trials=trials,
        seed=seed,
        sigma_spec=parse_variances(f"uniform(0.7, 1.6, {seed + 1})"),
        alpha=0.6,
    )


def uniform_sweep_spec(trials: int = DEFAULT_TRIALS, seed: int = 0, cache_sizes=None, capacities=(2, 5, 10)) -> SweepSpec:
    """Uniform popularity, every variance 1.5."""
    return SweepSpec(
        capacities=tuple(capacities),
        cache_sizes=tuple(cache_sizes or range(5, 101, 5)),
        schemes=("lcu", "ccm-uniform"),
        trials=trials,
        seed=seed,
        sigma_spec=VarianceSpec("constant", (1.5,)),
        alpha=0.0,
    )
