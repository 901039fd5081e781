"""Experiment runner: strict JSON configs, deterministic dispatch and manifests.

Every run writes ``manifest.json`` first, then result files that carry the
manifest's SHA-256.  Manifest and results are byte-identical for identical
(config, seed) whatever the worker count; timings go to ``run_log.json``.

Exit codes: 0 clean, 1 flagged inconsistency, 2 invalid config, 3 margin or
budget error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from . import clusters as cl
from . import estimators as est
from . import multiscale as ms
from . import oracle
from . import rng as rngmod
from .lattice import ABSORBING, OPEN_TAIL, Window
from .loop_model import IntensityFunction, free_tail_bound
from .sampler import sample_truncated

CONFIG_VERSION = 1
KINDS = ("sample", "theta", "alpha-c", "slab", "tail", "truncation-sweep", "kappa-c",
         "multiscale", "regular-ball", "oracle-validate")
# estimators hard-wire d = 3; sampling and the multiscale checks take any d
D3_KINDS = ("theta", "slab", "tail", "truncation-sweep", "kappa-c")

EXIT_OK, EXIT_FLAGGED, EXIT_CONFIG, EXIT_MARGIN = 0, 1, 2, 3


class ConfigError(ValueError):
    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass
class ExperimentConfig:
    """Resolved experiment configuration.  Keys not listed here are rejected."""

    kind: str
    version: int = CONFIG_VERSION
    d: int = 3
    kappa: float = 0.0
    alpha: float | None = None
    alphas: list | None = None
    m: int | None = 2
    L: list | None = None
    K_max: int = 16
    n: int = 8
    boundary: str = ABSORBING
    widths: list | None = None
    radii: list | None = None
    replicas: int = 100
    max_replicas: int = 1000
    seed: int = 0
    out: str = "results"
    tol: float = 0.25
    c_star: float = 0.5
    model: str = "bulk"
    mode: str | None = None
    lo: float | None = None
    hi: float | None = None
    l0: int = 2
    r0: int = 1
    L0: int = 3
    K: int = 1
    s_level: int = 1
    theta_L: float | None = None
    theta: float | None = None
    r: int = 1
    C_V: float = 1.0
    C_P: float = 1.0
    C_W: float = 1.0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


_INT_KEYS = {"version", "d", "m", "K_max", "n", "replicas", "max_replicas", "seed", "l0", "r0", "L0",
             "K", "s_level", "r"}
_REAL_KEYS = {"kappa", "alpha", "tol", "c_star", "lo", "hi", "theta_L", "theta", "C_V", "C_P", "C_W"}
_LIST_KEYS = {"alphas": float, "L": int, "widths": int, "radii": int}


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_real(v) -> bool:
    return (isinstance(v, (int, float)) and not isinstance(v, bool)) and math.isfinite(v)


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Validate a decoded mapping; every violation is collected before raising."""
    bad: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigError(["config must be a JSON object"])
    names = {f.name for f in fields(ExperimentConfig)}
    for k in sorted(set(raw) - names):
        bad.append(f"unknown key {k!r}")
    kind = raw.get("kind")
    if kind not in KINDS:
        bad.append(f"kind must be one of {', '.join(KINDS)} (got {kind!r})")
    vals = {}
    for k, v in raw.items():
        if k not in names:
            continue
        if v is None:
            vals[k] = v
        elif k in _INT_KEYS and not _is_int(v):
            bad.append(f"{k} must be an integer")
        elif k in _REAL_KEYS and not _is_real(v):
            bad.append(f"{k} must be a finite number")
        elif k in _LIST_KEYS and (not isinstance(v, list) or not v):
            bad.append(f"{k} must be a non-empty list")
        elif k in _LIST_KEYS and not all((_is_int(x) if _LIST_KEYS[k] is int else _is_real(x)) for x in v):
            bad.append(f"{k} entries must be {'integers' if _LIST_KEYS[k] is int else 'finite numbers'}")
        elif k in ("kind", "boundary", "model", "mode", "out") and not isinstance(v, str):
            bad.append(f"{k} must be a string")
        else:
            vals[k] = v
    if kind not in KINDS:
        # range rules depend on the kind; report what we have so far
        raise ConfigError(bad)
    cfg = ExperimentConfig(**vals)
    _check_ranges(cfg, bad)
    if bad:
        raise ConfigError(bad)
    return cfg


def _check_ranges(c: ExperimentConfig, bad: list[str]) -> None:
    if c.version != CONFIG_VERSION:
        bad.append(f"version must be {CONFIG_VERSION}")
    if c.d < 1:
        bad.append("d must be >= 1")
    if c.kind == "alpha-c" and c.d < 3:
        bad.append("alpha-c needs d >= 3")
    if c.kind in D3_KINDS and c.d != 3:
        bad.append(f"{c.kind} runs in d = 3 only")
    if c.kappa < 0:
        bad.append("kappa must be >= 0")
    if c.alpha is not None and c.alpha < 0:
        bad.append("alpha must be >= 0")
    if c.alphas is not None and min(c.alphas) < 0:
        bad.append("alphas must be >= 0")
    if c.m is not None and (c.m < 2 or c.m % 2):
        bad.append("m must be an even integer >= 2 (loop lengths are even)")
    if c.L is not None and any(x < 2 or x % 2 for x in c.L):
        bad.append("L entries must be even integers >= 2")
    if c.K_max < 2 or c.K_max % 2:
        bad.append("K_max must be an even integer >= 2")
    if c.n < 1:
        bad.append("n must be >= 1")
    if c.boundary not in (ABSORBING, OPEN_TAIL):
        bad.append(f"boundary must be {ABSORBING!r} or {OPEN_TAIL!r}")
    if c.widths is not None and min(c.widths) < 1:
        bad.append("widths must be >= 1")
    if c.radii is not None and min(c.radii) < 1:
        bad.append("radii must be >= 1")
    if c.replicas < 2:
        bad.append("replicas must be >= 2")
    if c.max_replicas < c.replicas:
        bad.append("max_replicas must be >= replicas")
    if not 0 <= c.seed < 2 ** 64:
        bad.append("seed must be in [0, 2^64)")
    if c.tol <= 0:
        bad.append("tol must be > 0")
    if not 0 < c.c_star < 1:
        bad.append("c_star must be in (0, 1)")
    if c.model not in ("bulk", "slab", "bernoulli"):
        bad.append("model must be bulk, slab or bernoulli")
    if c.lo is not None and c.hi is not None and c.lo >= c.hi:
        bad.append("lo must be < hi")
    if min(c.l0, c.r0, c.L0) < 1 or c.l0 % c.r0:
        bad.append("l0, r0, L0 must be positive with r0 dividing l0")
    if c.K < 1 or c.s_level < 0:
        bad.append("K must be >= 1 and s_level >= 0")
    for k in ("theta_L", "theta"):
        v = getattr(c, k)
        if v is not None and not 0 < v <= 1:
            bad.append(f"{k} must be in (0, 1]")
    if c.r < 1:
        bad.append("r must be >= 1")
    if min(c.C_V, c.C_P, c.C_W) <= 0:
        bad.append("C_V, C_P, C_W must be > 0")
    if c.kind == "tail" and c.mode not in (None, "finite", "arm"):
        bad.append("tail mode must be 'finite' or 'arm'")
    if c.kind == "regular-ball" and c.mode not in (None, "exact", "bound"):
        bad.append("regular-ball mode must be 'exact' or 'bound'")
    need_alpha = ("sample", "tail", "truncation-sweep", "multiscale", "regular-ball")
    if c.kind in need_alpha and c.alpha is None:
        bad.append(f"{c.kind} needs alpha")
    if c.kind == "theta" and c.alpha is None and c.alphas is None:
        bad.append("theta needs alpha or alphas")
    if c.kind == "kappa-c" and c.alpha is None and c.alphas is None:
        bad.append("kappa-c needs alpha or alphas")
    if c.kind == "multiscale" and (c.theta_L is None or c.theta is None):
        bad.append("multiscale needs theta_L and theta estimates")


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"syntax error: {exc}"]) from None
    return config_from_dict(raw)


# ---------------------------------------------------------------------------
# output helpers

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if hasattr(o, "to_dict"):
        return o.to_dict()
    if hasattr(o, "__dataclass_fields__"):
        return asdict(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _write_csv(path: Path, header: list[str], rows: list[list], ref: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# manifest_sha256={ref}\n")
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for r in rows:
            wr.writerow([_fmt(x) for x in r])


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def _alpha_grid(c: ExperimentConfig) -> list[float]:
    return [float(a) for a in (c.alphas if c.alphas is not None else [c.alpha])]


def predicted_epsilon_tail(c: ExperimentConfig) -> float:
    """Tail mass bound known before sampling (zero for truncated runs)."""
    window_mode = (c.kind in ("theta", "tail") and (c.m is None or c.mode == "arm"))
    if not window_mode:
        return 0.0
    a = max(_alpha_grid(c)) if (c.alpha is not None or c.alphas) else 0.0
    R = c.n if c.kind == "theta" else 2 * max(c.radii or [12]) + 2
    return a * (2 * R + 1) ** c.d * free_tail_bound(c.K_max, c.d, c.kappa, weight_by_length=False)


def build_manifest(c: ExperimentConfig) -> dict:
    # the output location is not an experiment parameter, so it stays out of the hash
    cfg = c.to_dict()
    cfg.pop("out")
    return {
        "config": cfg,
        "code_version": __version__,
        "epsilon_tail": predicted_epsilon_tail(c),
        "seed_streams": {
            "derivation": rngmod.STREAM_DOC,
            "master_seed": c.seed,
            "purposes": {"truncated": rngmod.TRUNCATED, "window": rngmod.WINDOW,
                         "probe": rngmod.PROBE, "arrivals": rngmod.ARRIVALS},
            "replica_rule": "replica r of a run uses spawn key (purpose, r, sub-stream); "
                            "bisection probe j uses replicas starting at j * 2^20",
        },
    }


# ---------------------------------------------------------------------------
# experiments: each returns (files written, flags)

def _run_sample(c, out, ref, workers):
    d = c.d
    W = Window.around(c.n + c.m // 2, d)
    inner = Window.around(c.n, d)
    rows, flags = [], []
    for r in range(c.replicas):
        s = sample_truncated(W, IntensityFunction(c.alpha, c.kappa, c.m), c.alpha, c.seed, r)
        if r == 0:
            s.to_ndjson(out / "soup.ndjson", meta={"manifest_sha256": ref, "replica": 0})
        f = cl.build_clusters(cl.open_edges(s, window=inner))
        rows.append(cl.cluster_summary(f, r, c.alpha, c.n))
    _write_csv(out / "clusters.csv", list(cl.CLUSTER_CSV_COLUMNS),
               [[row[k] for k in cl.CLUSTER_CSV_COLUMNS] for row in rows], ref)
    return ["soup.ndjson", "clusters.csv"], flags


def _run_theta(c, out, ref, workers):
    grid = _alpha_grid(c)
    res = est.theta_n(grid, c.kappa, c.m, c.n, c.replicas, c.seed, c.K_max, workers)
    rows = [[a, c.n, e.value, e.stderr, e.replicas, e.epsilon_tail] for a, e in zip(grid, res)]
    _write_csv(out / "theta.csv", ["alpha", "n", "theta", "stderr", "replicas", "epsilon_tail"], rows, ref)
    flags = []
    vals = [e.value for _, e in sorted(zip(grid, res))]
    if any(b < a for a, b in zip(vals, vals[1:])):
        flags.append("theta decreases along the coupled alpha grid")
    return ["theta.csv"], flags


def _bracket_rows(brs):
    return [[b.parameter, b.lo, b.hi, b.mid, int(b.ci_separated), ";".join(b.flags)] for b in brs]


def _run_alpha_c(c, out, ref, workers):
    model = est.CrossingModel(c.model, m=c.m or 2, d=c.d, kappa=c.kappa)
    kw = {}
    if c.lo is not None:
        kw["lo"] = c.lo
    if c.hi is not None:
        kw["hi"] = c.hi
    br = est.find_alpha_c(model, c.n, c.c_star, c.tol, c.replicas, c.max_replicas, c.seed,
                          workers=workers, **kw)
    _dump_json(out / "threshold.json", {"manifest_sha256": ref, "bracket": br.to_dict()})
    _write_csv(out / "probes.csv", ["param", "successes", "replicas", "p", "stderr"],
               [[p.param, p.successes, p.replicas, p.p, p.stderr] for p in br.probes], ref)
    return ["threshold.json", "probes.csv"], list(br.flags)


def _run_slab(c, out, ref, workers):
    widths = c.widths or [2, 4, 8]
    brs, flags = [], []
    for wd in widths:
        model = est.CrossingModel("slab", m=c.m or 2, d=c.d, width=wd, kappa=c.kappa)
        br = est.find_alpha_c(model, c.n, c.c_star, c.tol, c.replicas, c.max_replicas, c.seed,
                              lo=c.lo if c.lo is not None else 1.0,
                              hi=c.hi if c.hi is not None else 60.0, workers=workers)
        brs.append(br)
        flags += [f"width {wd}: {f}" for f in br.flags]
    for (w1, b1), (w2, b2) in zip(zip(widths, brs), zip(widths[1:], brs[1:])):
        if b1.below(b2):
            flags.append(f"slab threshold increases from width {w1} to {w2}")
    rows = [[wd] + r for wd, r in zip(widths, _bracket_rows(brs))]
    _write_csv(out / "slab.csv", ["width", "parameter", "lo", "hi", "mid", "ci_separated", "flags"], rows, ref)
    return ["slab.csv"], flags


def _run_tail(c, out, ref, workers):
    radii = c.radii or [4, 6, 8, 10, 12]
    mode = c.mode or "finite"
    L = c.m if mode == "finite" else c.K_max
    fit = est.tail_fit(c.alpha, c.kappa, L, radii, c.replicas, c.seed, mode=mode, workers=workers)
    _write_csv(out / "tail.csv", ["n", "count", "trials", "log_p"],
               [[n, k, t, lp] for n, k, t, lp in zip(fit.radii, fit.counts, fit.trials, fit.log_p)], ref)
    _dump_json(out / "tail_fit.json", {"manifest_sha256": ref, "fit": fit.to_dict(),
                                       "flattening": fit.flattening})
    return ["tail.csv", "tail_fit.json"], [f for f in fit.flags if f.startswith("inconclusive")]


def _run_truncation(c, out, ref, workers):
    Ls = c.L or [2, 4, 8]
    K = max(c.K_max, max(Ls))
    tab = est.theta_L_convergence(c.alpha, c.kappa, c.n, Ls, K, c.replicas, c.seed, workers)
    _write_csv(out / "truncation.csv", ["L", "theta", "diff", "diff_stderr"],
               [[r.L, r.theta, r.diff, r.diff_stderr] for r in tab.rows], ref)
    flags = [] if tab.monotone_per_replica else ["per-replica differences not monotone in L"]
    return ["truncation.csv"], flags


def _run_kappa_c(c, out, ref, workers):
    grid = _alpha_grid(c)
    brs = est.kappa_c_curve(grid, c.m or 2, c.n, c.tol, c.c_star, c.replicas, c.max_replicas, c.seed,
                            c.hi if c.hi is not None else 1.0, workers)
    _write_csv(out / "kappa_c.csv", ["alpha", "parameter", "lo", "hi", "mid", "ci_separated", "flags"],
               [[a] + r for a, r in zip(grid, _bracket_rows(brs))], ref)
    flags = [f"alpha {a}: {f}" for a, b in zip(grid, brs) for f in b.flags if f != "reported as zero"]
    return ["kappa_c.csv"], flags


def _run_multiscale(c, out, ref, workers):
    sc = ms.ScaleSequence(c.l0, c.r0, c.L0, c.s_level)
    Ls = sc.L(c.s_level)
    lo = -2 * Ls - c.L0 - c.K_max // 2 - 1
    hi = (c.K + 2) * Ls + c.L0 + c.K_max // 2
    W = Window(np.full(c.d, lo), np.full(c.d, hi), ABSORBING)
    s = sample_truncated(W, IntensityFunction(c.alpha, c.kappa, c.K_max), c.alpha, c.seed, 0)
    L = c.m or 2
    rep = ms.check_H_event(s, L, sc, c.K, c.s_level, c.theta_L, c.theta)
    obj = json.loads(rep.to_json())
    obj["manifest_sha256"] = ref
    _dump_json(out / "h_event.json", obj)
    # unmet scale constraints are reported in the JSON, not flagged
    return ["h_event.json"], []


def _run_regular_ball(c, out, ref, workers):
    W = Window.around(c.n + (c.m or 2) // 2, c.d)
    inner = Window.around(c.n, c.d)
    s = sample_truncated(W, IntensityFunction(c.alpha, c.kappa, c.m or 2), c.alpha, c.seed, 0)
    f = cl.build_clusters(cl.open_edges(s, window=inner))
    g = ms.ClusterGraph.from_forest(f, np.zeros(c.d, np.int64))
    rep = ms.check_regular_ball(g, np.zeros(c.d, np.int64), c.r, c.C_V, c.C_P, c.C_W, c.mode or "exact")
    _dump_json(out / "regular_ball.json", {"manifest_sha256": ref, "cluster_size": g.n, "report": rep.to_dict()})
    return ["regular_ball.json"], []


def _run_oracle(c, out, ref, workers):
    checks = oracle.validate_corpus()
    _write_csv(out / "oracle.csv", ["check", "passed", "detail"],
               [[k.name, int(k.passed), k.detail] for k in checks], ref)
    return ["oracle.csv"], [k.name for k in checks if not k.passed]


DISPATCH = {
    "sample": _run_sample, "theta": _run_theta, "alpha-c": _run_alpha_c, "slab": _run_slab,
    "tail": _run_tail, "truncation-sweep": _run_truncation, "kappa-c": _run_kappa_c,
    "multiscale": _run_multiscale, "regular-ball": _run_regular_ball, "oracle-validate": _run_oracle,
}


@dataclass
class RunResult:
    status: int
    out: Path
    files: list = field(default_factory=list)
    flags: list = field(default_factory=list)


def run(c: ExperimentConfig, workers: int = 1) -> RunResult:
    """Write the manifest, dispatch, then write results that cite the manifest hash."""
    out = Path(c.out)
    out.mkdir(parents=True, exist_ok=True)
    mpath = out / "manifest.json"
    _dump_json(mpath, build_manifest(c))
    ref = _sha256(mpath)
    t0 = time.perf_counter()
    status, flags, files = EXIT_OK, [], []
    try:
        files, flags = DISPATCH[c.kind](c, out, ref, workers)
        status = EXIT_FLAGGED if flags else EXIT_OK
    except (ValueError, est.InconsistencyFlag, OverflowError) as exc:
        status, flags = EXIT_MARGIN, [f"{type(exc).__name__}: {exc}"]
    _dump_json(out / "run_log.json", {"manifest_sha256": ref, "wall_clock_s": time.perf_counter() - t0,
                                      "workers": workers, "status": status, "flags": flags,
                                      "files": files})
    return RunResult(status, out, files, flags)


# ---------------------------------------------------------------------------
# command line

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="loopsoup", description="Loop-soup percolation experiments.")
    p.add_argument("kind", choices=KINDS)
    p.add_argument("--config", type=Path, help="JSON config file")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--workers", type=int, default=1, help="replica worker processes")
    p.add_argument("--replicas", type=int, help="replica count (overrides the config)")
    p.add_argument("--regenerate-golden", action="store_true",
                   help="oracle-validate: rewrite the packaged golden values first")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = json.loads(args.config.read_text()) if args.config else {}
    except json.JSONDecodeError as exc:
        print(f"config error: syntax error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not isinstance(raw, dict):
        print("config error: config must be a JSON object", file=sys.stderr)
        return EXIT_CONFIG
    if raw.get("kind", args.kind) != args.kind:
        print(f"config error: config kind {raw['kind']!r} does not match subcommand {args.kind!r}",
              file=sys.stderr)
        return EXIT_CONFIG
    raw["kind"] = args.kind
    for key in ("seed", "out", "replicas"):
        if getattr(args, key) is not None:
            raw[key] = getattr(args, key)
    if args.workers < 1:
        print("config error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = config_from_dict(raw)
    except ConfigError as exc:
        for v in exc.violations:
            print(f"config error: {v}", file=sys.stderr)
        return EXIT_CONFIG
    if args.regenerate_golden and cfg.kind == "oracle-validate":
        oracle.write_golden()
    res = run(cfg, args.workers)
    for f in res.flags:
        print(f"flag: {f}", file=sys.stderr)
    print(f"{cfg.kind}: status {res.status}, outputs in {res.out}")
    return res.status


if __name__ == "__main__":
    raise SystemExit(main())
