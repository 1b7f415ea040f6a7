"""Command line front end.

An experiment is described by a small flat config file of ``[section]``
``key = value`` lines and leaves the same artifacts behind every time:
``series.csv``, ``summary.json``, ``manifest.json`` and ``schema.txt``.
Every floating point value in the delimited output is printed with one
fixed format, so rerunning a config serially reproduces the data files
byte for byte; only the wall clock entry of the manifest moves.

The ``report`` subcommand runs the same experiment and then renders a few
matplotlib figures next to the delimited output. The plain run path never
imports matplotlib.

Exit codes: 0 success, 1 validation criteria failed, 2 usage or config
errors, 3 input-side module errors (bad tags, shapes, ranges), 4 runtime
breakdowns (unstable steps, stalled solves, infeasible targets).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid

from . import __version__
from .bundles import catalog_bundle, degree, initial_metric
from .chern import c2_gap_residual, random_curvature_sample, two_eigen_gap
from .continuity import eps_path, key_identity_residual, slope_targets
from .errors import ConfigParse, ModuleError
from .flow import compare_flows, run_flow
from .hn import derived_hn_type
from .manifolds import build_cp1, build_torus

logger = logging.getLogger(__name__)

__all__ = [
    "ExperimentConfig",
    "RunManifest",
    "parse_config",
    "load_config",
    "run",
    "main",
]

FLOAT_FORMAT = "%.12e"

MODES = ("flow", "continuity", "compare", "hn", "chern", "validate")

EXIT_OK = 0
EXIT_CRITERIA = 1
EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_RUNTIME = 4


# ---------------- configuration ----------------


@dataclass
class ExperimentConfig:
    """Fully resolved run description; one attribute per config key."""

    # [manifold]
    kind: str = "cp1"
    n: int = 32
    tau_re: float = 0.0
    tau_im: float = 1.0
    interp_order: int | None = None
    # [bundle]
    tag: str = "O(0)"
    seed: int | None = None
    amplitude: float = 0.0
    off_scale: float | None = None
    # [run]
    mode: str | None = None
    t_end: float = 1.0
    dt: float | None = None
    record_every: int = 1
    eps_schedule: tuple | None = None
    tol: float = 1e-8
    workers: int | None = None
    seed2: int | None = None
    # [hn]
    hn_slopes: tuple | None = None
    hn_slopes2: tuple | None = None
    hn_op: str | None = None
    hn_k: int = 1
    # [chern]
    chern_samples: int = 200
    chern_rank: int = 2
    chern_scale: float = 1.0
    chern_seed: int | None = None
    # [validate]
    criteria: tuple | None = None
    coarsen: int = 1
    validate_seed: int = 0
    # [output]
    out_dir: str | None = None

    def echo(self):
        """JSON-ready dict of every field, defaults included."""
        return _jsonable(dataclasses.asdict(self))


def _enum(*allowed):
    def parse(tok):
        if tok not in allowed:
            raise ValueError(f"must be one of {', '.join(allowed)}")
        return tok
    return parse


def _int_range(lo, hi):
    def parse(tok):
        try:
            v = int(tok)
        except ValueError:
            raise ValueError(f"expected an integer, got {tok!r}") from None
        if not lo <= v <= hi:
            raise ValueError(f"must lie in [{lo}, {hi}], got {v}")
        return v
    return parse


def _int_choice(*allowed):
    def parse(tok):
        try:
            v = int(tok)
        except ValueError:
            raise ValueError(f"expected an integer, got {tok!r}") from None
        if v not in allowed:
            raise ValueError(f"must be one of {allowed}, got {v}")
        return v
    return parse


def _float_range(lo, hi):
    def parse(tok):
        try:
            v = float(tok)
        except ValueError:
            raise ValueError(f"expected a number, got {tok!r}") from None
        if not (np.isfinite(v) and lo <= v <= hi):
            raise ValueError(f"must lie in [{lo:g}, {hi:g}], got {tok}")
        return v
    return parse


def _float_list(lo, hi, max_len):
    item = _float_range(lo, hi)
    def parse(tok):
        vals = tuple(item(t) for t in tok.split())
        if not 1 <= len(vals) <= max_len:
            raise ValueError(f"expected 1..{max_len} values")
        return vals
    return parse


def _fraction_list(max_len):
    def parse(tok):
        vals = []
        for t in tok.split():
            try:
                vals.append(Fraction(t))
            except (ValueError, ZeroDivisionError):
                raise ValueError(f"expected a rational like 3 or -1/2, got {t!r}") from None
        if not 1 <= len(vals) <= max_len:
            raise ValueError(f"expected 1..{max_len} values")
        return tuple(vals)
    return parse


def _int_list(lo, hi, max_len=32):
    item = _int_range(lo, hi)
    def parse(tok):
        vals = tuple(item(t) for t in tok.replace(",", " ").split())
        if not 1 <= len(vals) <= max_len:
            raise ValueError(f"expected 1..{max_len} values")
        return vals
    return parse


def _string(tok):
    if not tok:
        raise ValueError("empty value")
    return tok


# section -> key -> (config attribute, value parser)
_SCHEMA = {
    "manifold": {
        "kind": ("kind", _enum("cp1", "torus")),
        "n": ("n", _int_range(8, 1024)),
        "tau_re": ("tau_re", _float_range(-10.0, 10.0)),
        "tau_im": ("tau_im", _float_range(1e-3, 10.0)),
        "interp_order": ("interp_order", _int_choice(1, 3)),
    },
    "bundle": {
        "tag": ("tag", _string),
        "seed": ("seed", _int_range(0, 2**31 - 1)),
        "amplitude": ("amplitude", _float_range(0.0, 10.0)),
        "off_scale": ("off_scale", _float_range(0.0, 10.0)),
    },
    "run": {
        "mode": ("mode", _enum(*MODES)),
        "t_end": ("t_end", _float_range(1e-6, 100.0)),
        "dt": ("dt", _float_range(1e-12, 1.0)),
        "record_every": ("record_every", _int_range(1, 1_000_000)),
        "eps_schedule": ("eps_schedule", _float_list(1e-9, 1.0, 64)),
        "tol": ("tol", _float_range(1e-14, 1e-2)),
        "workers": ("workers", _int_range(1, 64)),
        "seed2": ("seed2", _int_range(0, 2**31 - 1)),
    },
    "hn": {
        "slopes": ("hn_slopes", _fraction_list(8)),
        "slopes2": ("hn_slopes2", _fraction_list(8)),
        "op": ("hn_op", _enum("tensor", "tensor_pow", "sym", "ext")),
        "k": ("hn_k", _int_range(1, 6)),
    },
    "chern": {
        "samples": ("chern_samples", _int_range(1, 1_000_000)),
        "rank": ("chern_rank", _int_range(2, 6)),
        "scale": ("chern_scale", _float_range(1e-6, 100.0)),
        "seed": ("chern_seed", _int_range(0, 2**31 - 1)),
    },
    "validate": {
        "criteria": ("criteria", _int_list(1, 14)),
        "coarsen": ("coarsen", _int_choice(1, 2, 4)),
        "seed": ("validate_seed", _int_range(0, 2**31 - 1)),
    },
    "output": {
        "dir": ("out_dir", _string),
    },
}


def parse_config(text):
    """Parse config text into an ExperimentConfig.

    The format is deliberately tiny: ``[section]`` headers, ``key = value``
    lines, ``#`` comments, blank lines. Unknown sections or keys, values
    out of their documented ranges, and inconsistent combinations all raise
    ConfigParse carrying the offending line and column.
    """
    cfg = ExperimentConfig()
    seen = {}
    positions = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].rstrip()
        stripped = line.lstrip()
        if not stripped:
            continue
        col = len(line) - len(stripped) + 1
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigParse("unterminated section header", lineno, col)
            name = stripped[1:-1].strip()
            if name not in _SCHEMA:
                raise ConfigParse(f"unknown section [{name}]", lineno, col)
            if name in seen:
                raise ConfigParse(f"duplicate section [{name}]", lineno, col)
            seen[name] = set()
            current = name
            continue
        if "=" not in stripped:
            raise ConfigParse("expected 'key = value'", lineno, col)
        if current is None:
            raise ConfigParse("key before any [section] header", lineno, col)
        key, _, value = stripped.partition("=")
        key = key.strip()
        vcol = col + stripped.index("=") + 1
        vcol += len(stripped[stripped.index("=") + 1:]) - len(value.lstrip())
        value = value.strip()
        if key not in _SCHEMA[current]:
            raise ConfigParse(f"unknown key {key!r} in [{current}]", lineno, col)
        if key in seen[current]:
            raise ConfigParse(f"duplicate key {key!r}", lineno, col)
        seen[current].add(key)
        if not value:
            raise ConfigParse(f"empty value for {key!r}", lineno, vcol)
        attr, parse = _SCHEMA[current][key]
        try:
            setattr(cfg, attr, parse(value))
        except ValueError as err:
            raise ConfigParse(f"bad value for {key!r}: {err}", lineno, vcol) from None
        positions[(current, key)] = (lineno, vcol)
    _cross_validate(cfg, positions)
    return cfg


def _require(cond, message, positions, where):
    if not cond:
        line, col = positions.get(where, (None, None))
        raise ConfigParse(message, line, col)


def _cross_validate(cfg, positions):
    p = positions
    _require(cfg.mode is not None, "missing 'mode' in [run]", p, ("run", "mode"))
    if cfg.amplitude > 0.0:
        _require(cfg.seed is not None,
                 "amplitude > 0 draws a random field; set 'seed' in [bundle]",
                 p, ("bundle", "amplitude"))
    if cfg.mode == "compare":
        _require(cfg.seed is not None, "mode compare needs 'seed' in [bundle]",
                 p, ("run", "mode"))
        _require(cfg.seed2 is not None, "mode compare needs 'seed2' in [run]",
                 p, ("run", "mode"))
    if cfg.mode == "hn":
        _require(cfg.hn_slopes is not None, "mode hn needs 'slopes' in [hn]",
                 p, ("run", "mode"))
        _require(cfg.hn_op is not None, "mode hn needs 'op' in [hn]",
                 p, ("run", "mode"))
        if cfg.hn_op == "tensor":
            _require(cfg.hn_slopes2 is not None,
                     "op tensor pairs two slope vectors; set 'slopes2' in [hn]",
                     p, ("hn", "op"))
        else:
            _require(cfg.hn_slopes2 is None,
                     f"op {cfg.hn_op} takes a single slope vector; drop 'slopes2'",
                     p, ("hn", "slopes2"))
    if cfg.mode == "chern":
        _require(cfg.chern_seed is not None,
                 "mode chern draws random samples; set 'seed' in [chern]",
                 p, ("run", "mode"))


def load_config(path):
    """Read and parse a config file; unreadable files are config errors."""
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigParse(f"cannot read config {path!r}: {err.strerror}") from None
    return parse_config(text)


# ---------------- output sinks ----------------


@dataclass
class RunManifest:
    """What a run did and left behind, echoed back as JSON."""

    code_version: str
    mode: str
    config: dict
    derived: dict
    outputs: list
    workers: int
    wall_clock_s: float
    status: str = "ok"

    def as_dict(self):
        return _jsonable(dataclasses.asdict(self))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, Fraction):
        return int(x) if x.denominator == 1 else str(x)
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def _write_json(path, payload):
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")


def _write_series(path, header, rows, formats=None):
    fmt = formats or [FLOAT_FORMAT] * len(header)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(f % v for f, v in zip(fmt, row)))
    path.write_text("\n".join(lines) + "\n")


def _envelope_columns(rank):
    cols = []
    for stem in ("lamhat_L", "lamhat_U", "lam_mL", "lam_mU"):
        cols.extend(f"{stem}_{k}" for k in range(1, rank + 1))
    return cols


_ENVELOPE_DOC = """\
  lamhat_L_k     inf over the grid of the sum of the k smallest curvature eigenvalues
  lamhat_U_k     sup over the grid of the sum of the k largest curvature eigenvalues
  lam_mL_k       weighted mean of the sum of the k smallest curvature eigenvalues
  lam_mU_k       weighted mean of the sum of the k largest curvature eigenvalues
"""

_SCHEMA_DOC = {
    "flow": """\
series.csv, mode flow: one row per recorded step
  t              flow time of the record
""" + _ENVELOPE_DOC + """\
  sup_phi_sq     sup over the grid of the squared size of theta - lam
  energy_dtheta  first-derivative energy of theta
  det_residual   sup |det(H0^{-1} H) - 1| against the normalized start
  tr_residual    sup |tr theta - r lam|
""",
    "continuity": """\
series.csv, mode continuity: one row per schedule level
  eps            spring parameter of the solve
""" + _ENVELOPE_DOC + """\
  sup_phi_sq     squared sup deviation of the curvature eigenvalues from lam
  eps_s_l2       eps times the L2 size of the solved endomorphism
  residual       sup norm of the solved equation's defect
  tr_s_sup       sup |tr s| over the grid
""",
    "compare": """\
series.csv, mode compare: one row per recorded step
  t              flow time of the record
  dist_sup       sup of tr(h) + tr(h^{-1}) - 2r for h = H_a^{-1} H_b
""",
    "chern": """\
series.csv, mode chern: one row per random sample
  sample         zero-based sample index
  c2_residual    defect of the trace-free curvature identity
  gap_mismatch   difference of the two trace-normalized eigenvalue forms
""",
}


def _schema_text(mode):
    doc = _SCHEMA_DOC[mode]
    return doc + f"all floating point values use the fixed {FLOAT_FORMAT} format\n"


# ---------------- mode runners ----------------


def _build_manifold(cfg):
    if cfg.kind == "cp1":
        return build_cp1(cfg.n, interp_order=cfg.interp_order)
    return build_torus(cfg.n, complex(cfg.tau_re, cfg.tau_im))


def _build_bundle(cfg):
    m = _build_manifold(cfg)
    pres = catalog_bundle(m, cfg.tag)
    h = initial_metric(pres, seed=cfg.seed, amplitude=cfg.amplitude,
                       off_scale=cfg.off_scale)
    return pres, h


def _bundle_derived(pres, h=None):
    tgt_u, _ = slope_targets(pres)
    return {
        "rank": pres.rank,
        "volume": pres.manifold.volume,
        "degree": degree(pres, h=h),
        "lam": float(2.0 * np.pi * degree(pres, h=h)
                     / (pres.rank * pres.manifold.volume)),
        "slope_vector": [float(v) for v in tgt_u],
    }


def _monotone_violations(series):
    """Count recorded steps moving against the expected direction.

    Upper running sums must fall and lower ones rise, with the usual
    relative slack; the counts cover every k.
    """
    def slack(v):
        return 1e-8 * (1.0 + np.abs(v))

    out = {}
    for name, arr, sign in (("lamhat_L", series.lamhat_L, +1),
                            ("lamhat_U", series.lamhat_U, -1),
                            ("lam_mL", series.lam_mL, +1),
                            ("lam_mU", series.lam_mU, -1)):
        d = sign * np.diff(arr, axis=0)
        out[name] = int((d < -slack(arr[:-1])).sum())
    d = np.diff(series.sup_phi_sq)
    out["sup_phi_sq"] = int((d > slack(series.sup_phi_sq[:-1])).sum())
    return out


def _run_flow(cfg, workers):
    pres, h = _build_bundle(cfg)
    res = run_flow(pres, h, cfg.t_end, dt=cfg.dt, record_every=cfg.record_every)
    s = res.series
    header, table = s.as_columns()
    summary = {
        "mode": "flow",
        "lam": res.lam,
        "dt": res.dt,
        "steps": res.steps,
        "rows": len(s.times),
        "sup_phi_sq_initial": float(s.sup_phi_sq[0]),
        "sup_phi_sq_final": float(s.sup_phi_sq[-1]),
        "det_residual_max": float(s.det_residual.max()),
        "tr_residual_final": float(s.tr_residual[-1]),
        "energy_integral": float(trapezoid(s.energy_dtheta, s.times)),
        "monotone_violations": _monotone_violations(s),
    }
    derived = _bundle_derived(pres, h)
    figures = {"series": s, "lam": res.lam, "targets": slope_targets(pres)}
    return summary, (header, table, None), derived, figures


def _run_continuity(cfg, workers):
    pres, k = _build_bundle(cfg)
    path = eps_path(pres, k, schedule=cfg.eps_schedule, tol=cfg.tol)
    r = pres.rank
    identity = [key_identity_residual(pres, sol, path.k_used)
                for sol in path.solutions]
    rows = []
    per_eps = []
    for i, sol in enumerate(path.solutions):
        st = sol.stats
        # only the k=1 sums are single eigenvalues, so the operator-norm
        # deviation reads off the first envelope entries
        dev = float(max((st.sup[0] - sol.lam) ** 2,
                        (st.inf[0] - sol.lam) ** 2))
        tr_fields = [np.abs(np.einsum("...ii", sc).real) for sc in sol.s_eps]
        tr_sup = float(np.max(pres.manifold.owned_values(tr_fields)))
        rows.append([sol.epsilon, *st.inf, *st.sup, *st.mean_asc,
                     *st.mean_desc, dev, float(path.eps_s_l2[i]),
                     sol.residual, tr_sup])
        per_eps.append({
            "eps": sol.epsilon,
            "residual": sol.residual,
            "iterations": sol.iterations,
            "lam": sol.lam,
            "tr_s_sup": tr_sup,
            "eps_s_l2": float(path.eps_s_l2[i]),
            "identity_residual": identity[i],
        })
    header = (["eps"] + _envelope_columns(r)
              + ["sup_phi_sq", "eps_s_l2", "residual", "tr_s_sup"])
    summary = {
        "mode": "continuity",
        "levels": per_eps,
        "lam_mU_limit": path.lam_mU_limit,
        "lam_mL_limit": path.lam_mL_limit,
        "target_mU": path.target_mU,
        "target_mL": path.target_mL,
    }
    derived = _bundle_derived(pres)
    figures = {"path": path, "identity": identity}
    return summary, (header, np.array(rows), None), derived, figures


def _run_compare(cfg, workers):
    pres, h_a = _build_bundle(cfg)
    h_b = initial_metric(pres, seed=cfg.seed2, amplitude=cfg.amplitude,
                         off_scale=cfg.off_scale)
    times, dists = compare_flows(pres, h_a, h_b, cfg.t_end, dt=cfg.dt,
                                 record_every=cfg.record_every)
    grow = np.diff(dists) > 1e-10 * (1.0 + dists[:-1])
    summary = {
        "mode": "compare",
        "rows": len(times),
        "dist_initial": float(dists[0]),
        "dist_final": float(dists[-1]),
        "contraction": float(dists[-1] / dists[0]) if dists[0] > 0 else 0.0,
        "growth_violations": int(grow.sum()),
    }
    derived = _bundle_derived(pres)
    figures = {"times": times, "dists": dists}
    return summary, (["t", "dist_sup"], np.column_stack([times, dists]), None), derived, figures


def _run_hn(cfg, workers):
    mu = cfg.hn_slopes
    if cfg.hn_op == "tensor":
        derived_type = derived_hn_type("tensor", mu, cfg.hn_slopes2)
    else:
        derived_type = derived_hn_type(cfg.hn_op, mu, k=cfg.hn_k)
    payload = {
        "op": cfg.hn_op,
        "k": cfg.hn_k,
        "input_slopes": list(mu),
        "slopes": list(derived_type),
    }
    if cfg.hn_op == "tensor":
        payload["input_slopes2"] = list(cfg.hn_slopes2)
    summary = {"mode": "hn", **payload}
    return summary, None, {"hn_type": list(derived_type)}, None


def _chern_one(task):
    child, rank, scale = task
    rng = np.random.default_rng(child)
    resid = c2_gap_residual(random_curvature_sample(rng, rank=rank, scale=scale))
    u = 2.0 * rng.random()
    a, b = two_eigen_gap(u, 2.0 - u)
    return float(resid), float(abs(a - b))


def _run_chern(cfg, workers):
    children = np.random.SeedSequence(cfg.chern_seed).spawn(cfg.chern_samples)
    tasks = [(c, cfg.chern_rank, cfg.chern_scale) for c in children]
    if workers > 1:
        chunk = max(1, cfg.chern_samples // (4 * workers))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_chern_one, tasks, chunksize=chunk))
    else:
        results = [_chern_one(t) for t in tasks]
    resid = np.array([r[0] for r in results])
    gaps = np.array([r[1] for r in results])
    rows = np.column_stack([np.arange(len(results), dtype=float), resid, gaps])
    summary = {
        "mode": "chern",
        "samples": cfg.chern_samples,
        "rank": cfg.chern_rank,
        "c2_residual_max": float(resid.max()),
        "gap_mismatch_max": float(gaps.max()),
        "identity_holds": bool(cfg.chern_rank == 2 and resid.max() < 1e-10
                               and gaps.max() < 1e-12),
    }
    figures = {"resid": resid, "gaps": gaps}
    formats = ["%d", FLOAT_FORMAT, FLOAT_FORMAT]
    return summary, (["sample", "c2_residual", "gap_mismatch"], rows, formats), {}, figures


def _run_validate(cfg, workers):
    from .acceptance import report_dict, run_criteria
    reports = run_criteria(numbers=cfg.criteria, seed=cfg.validate_seed,
                           coarsen=cfg.coarsen)
    summary = report_dict(reports)
    for rep in reports:
        mark = "PASS" if rep.passed else ("KNOWN-LIMIT" if rep.known_limit else "FAIL")
        print(f"[{rep.number:2d}] {mark:<11s} {rep.title}")
    derived = {"passed": summary["passed"], "failed": summary["failed"]}
    return summary, None, derived, None


_RUNNERS = {
    "flow": _run_flow,
    "continuity": _run_continuity,
    "compare": _run_compare,
    "hn": _run_hn,
    "chern": _run_chern,
    "validate": _run_validate,
}


# ---------------- figures (report path only) ----------------


def _render_figures(mode, figures, out):
    import matplotlib
    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    written = []

    def save(fig, name):
        fig.tight_layout()
        fig.savefig(out / name, dpi=130)
        plt.close(fig)
        written.append(name)

    if mode == "flow":
        s = figures["series"]
        rank = s.lamhat_U.shape[1]
        fig, ax = plt.subplots(figsize=(7.0, 4.5))
        for k in range(rank):
            ax.plot(s.times, s.lamhat_U[:, k], label=f"top-{k + 1} sup")
            ax.plot(s.times, s.lamhat_L[:, k], "--", label=f"bottom-{k + 1} inf")
        for tgt in figures["targets"][0]:
            ax.axhline(tgt, color="gray", lw=0.6)
        ax.set_xlabel("t")
        ax.set_ylabel("running eigenvalue sum envelopes")
        ax.legend(fontsize=8)
        save(fig, "envelopes.png")

        fig, ax = plt.subplots(figsize=(7.0, 4.5))
        ax.semilogy(s.times, np.maximum(s.sup_phi_sq, 1e-300), label="sup deviation sq")
        ax.semilogy(s.times, np.maximum(s.energy_dtheta, 1e-300), label="derivative energy")
        ax.set_xlabel("t")
        ax.legend(fontsize=8)
        save(fig, "decay.png")

        fig, ax = plt.subplots(figsize=(7.0, 4.5))
        ax.semilogy(s.times, np.maximum(s.det_residual, 1e-300), label="det residual")
        ax.semilogy(s.times, np.maximum(s.tr_residual, 1e-300), label="trace residual")
        ax.set_xlabel("t")
        ax.legend(fontsize=8)
        save(fig, "conservation.png")

    elif mode == "continuity":
        path = figures["path"]
        rank = path.lam_mU.shape[1]
        fig, ax = plt.subplots(figsize=(7.0, 4.5))
        for k in range(rank):
            ax.semilogx(path.eps, path.lam_mU[:, k], "o-", label=f"top-{k + 1} mean")
            ax.axhline(path.target_mU[k], color="gray", lw=0.6)
            ax.plot([path.eps.min()], [path.lam_mU_limit[k]], "kx")
        ax.set_xlabel("eps")
        ax.set_ylabel("eigenvalue means and extrapolated limits")
        ax.invert_xaxis()
        ax.legend(fontsize=8)
        save(fig, "path_means.png")

        fig, ax = plt.subplots(figsize=(7.0, 4.5))
        ax.loglog(path.eps, np.maximum(path.eps_s_l2, 1e-300), "o-",
                  label="eps * |s| in L2")
        ax.loglog(path.eps, np.maximum(figures["identity"], 1e-300), "s-",
                  label="pairing identity defect")
        ax.set_xlabel("eps")
        ax.legend(fontsize=8)
        save(fig, "spring_norm.png")

    elif mode == "compare":
        fig, ax = plt.subplots(figsize=(7.0, 4.5))
        ax.semilogy(figures["times"], np.maximum(figures["dists"], 1e-300))
        ax.set_xlabel("t")
        ax.set_ylabel("sup distance between the two solutions")
        save(fig, "distance.png")

    elif mode == "chern":
        fig, ax = plt.subplots(figsize=(7.0, 4.5))
        ax.semilogy(np.maximum(figures["resid"], 1e-300), ".", ms=3,
                    label="identity residual")
        ax.semilogy(np.maximum(figures["gaps"], 1e-300), ".", ms=3,
                    label="gap form mismatch")
        ax.set_xlabel("sample")
        ax.legend(fontsize=8)
        save(fig, "residuals.png")

    return written


# ---------------- orchestration ----------------


def _resolve_workers(cfg, flag_value):
    if flag_value is not None:
        return flag_value
    if cfg.workers is not None:
        return cfg.workers
    env = os.environ.get("HYMLAB_WORKERS")
    if env:
        try:
            return _int_range(1, 64)(env)
        except ValueError as err:
            raise ConfigParse(f"bad HYMLAB_WORKERS: {err}") from None
    return 1


def _apply_seed_override(cfg, seed):
    if seed is None:
        return
    if cfg.mode == "chern":
        cfg.chern_seed = seed
    elif cfg.mode == "validate":
        cfg.validate_seed = seed
    else:
        cfg.seed = seed


def run(cfg, out_dir=None, workers=None, seed=None, report=False):
    """Execute a resolved config and write the output artifacts.

    Args:
        cfg: ExperimentConfig, typically from load_config.
        out_dir: output directory; falls back to the config's [output] dir.
            Required for modes that write series data.
        workers: worker count override (flag beats config beats env).
        seed: seed override for the mode's randomized field.
        report: also render figures (requires an output directory).

    Returns:
        RunManifest. status is "criteria_failed" when a validate run had
        failing criteria; every other completed run reports "ok".
    """
    if cfg.mode not in MODES:
        raise ConfigParse(f"missing or unknown mode {cfg.mode!r}")
    _apply_seed_override(cfg, seed)
    nworkers = _resolve_workers(cfg, workers)
    out = out_dir or cfg.out_dir
    writes_series = cfg.mode in ("flow", "continuity", "compare", "chern")
    if out is None and (writes_series or report):
        raise ConfigParse(f"mode {cfg.mode} writes files; pass --out or set "
                          "[output] dir")
    if report and not writes_series:
        raise ConfigParse(f"mode {cfg.mode} has no series to report on")

    started = time.perf_counter()
    summary, series, derived, figures = _RUNNERS[cfg.mode](cfg, nworkers)

    outputs = []
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        if series is not None:
            header, table, formats = series
            _write_series(out / "series.csv", header, table, formats)
            (out / "schema.txt").write_text(_schema_text(cfg.mode))
            outputs += ["series.csv", "schema.txt"]
        _write_json(out / "summary.json", summary)
        outputs.append("summary.json")
        if report and figures is not None:
            outputs += _render_figures(cfg.mode, figures, out)

    status = "ok"
    if cfg.mode == "validate" and summary["failed"]:
        status = "criteria_failed"
    manifest = RunManifest(
        code_version=__version__,
        mode=cfg.mode,
        config=cfg.echo(),
        derived=_jsonable(derived),
        outputs=sorted(outputs + (["manifest.json"] if out is not None else [])),
        workers=nworkers,
        wall_clock_s=time.perf_counter() - started,
        status=status,
    )
    if out is not None:
        _write_json(out / "manifest.json", manifest.as_dict())
    if cfg.mode == "hn":
        print(json.dumps(_jsonable({"slopes": summary["slopes"]})))
    elif out is not None:
        logger.info("wrote %s", ", ".join(manifest.outputs))
    return manifest


# ---------------- argument parsing ----------------


def _build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--workers", type=int, metavar="N",
                        help="worker count (default: config, then "
                             "HYMLAB_WORKERS, then 1)")
    common.add_argument("--seed", type=int, metavar="S",
                        help="override the run's randomized-field seed")
    common.add_argument("-v", "--verbose", action="store_true",
                        help="log progress to stderr")

    parser = argparse.ArgumentParser(
        prog="hymlab",
        description="metric flow and continuity experiments on model bundles")
    sub = parser.add_subparsers(dest="cmd", required=True)

    for name, brief in (("run", "execute the mode named in a config file"),
                        ("report", "same as run, plus rendered figures")):
        p = sub.add_parser(name, parents=[common], help=brief)
        p.add_argument("--config", metavar="PATH", required=True,
                       help="experiment config file")

    p = sub.add_parser("hn", parents=[common],
                       help="print the derived slope vector as JSON")
    p.add_argument("--slopes", metavar="'a b ...'", required=True,
                   help="slope vector, space separated rationals")
    p.add_argument("--slopes2", metavar="'a b ...'",
                   help="second slope vector (op tensor only)")
    p.add_argument("--op", required=True,
                   choices=("tensor", "tensor_pow", "sym", "ext"))
    p.add_argument("-k", type=int, default=1, help="induced order (default 1)")

    p = sub.add_parser("chern", parents=[common],
                       help="batch curvature identity checks")
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--rank", type=int, default=2)
    p.add_argument("--scale", type=float, default=1.0)

    p = sub.add_parser("validate", parents=[common],
                       help="run the acceptance criteria and report")
    p.add_argument("--criteria", metavar="'1 2 ...'",
                   help="subset of criteria numbers (default: all)")
    p.add_argument("--coarsen", type=int, default=1, choices=(1, 2, 4),
                   help="divide grid sizes and rescale tolerances by "
                        "the square (documented convergence-order knob)")
    return parser


def _config_for(args):
    if args.cmd in ("run", "report"):
        return load_config(args.config)
    if args.cmd == "hn":
        return ExperimentConfig(
            mode="hn",
            hn_slopes=_fraction_list(8)(args.slopes),
            hn_slopes2=_fraction_list(8)(args.slopes2) if args.slopes2 else None,
            hn_op=args.op,
            hn_k=args.k)
    if args.cmd == "chern":
        return ExperimentConfig(
            mode="chern",
            chern_samples=_int_range(1, 1_000_000)(str(args.samples)),
            chern_rank=_int_range(2, 6)(str(args.rank)),
            chern_scale=_float_range(1e-6, 100.0)(str(args.scale)),
            chern_seed=args.seed if args.seed is not None else 0)
    cfg = ExperimentConfig(mode="validate", coarsen=args.coarsen)
    if args.criteria:
        cfg.criteria = _int_list(1, 14)(args.criteria)
    return cfg


def main(argv=None):
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config_for(args)
        if cfg.mode == "hn" and args.cmd == "hn":
            _cross_validate(cfg, {})
        manifest = run(cfg, out_dir=args.out, workers=args.workers,
                       seed=args.seed, report=args.cmd == "report")
    except ConfigParse as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as err:
        # direct-subcommand argument values reuse the config coercers
        if not isinstance(err, ModuleError):
            print(f"config error: {err}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"input error [{type(err).__name__}]: {err}", file=sys.stderr)
        return EXIT_INPUT
    except ModuleError as err:
        family = "runtime" if isinstance(err, RuntimeError) else "input"
        code = EXIT_RUNTIME if isinstance(err, RuntimeError) else EXIT_INPUT
        print(f"{family} error [{type(err).__name__}]: {err}", file=sys.stderr)
        return code
    return EXIT_CRITERIA if manifest.status == "criteria_failed" else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
