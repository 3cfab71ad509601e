"""Config-driven command line runner.

Every subcommand reads an optional JSON config (file path or inline
document), applies command-line overrides, validates the result and writes
``report.json`` plus CSV files for tabular payloads into ``--out``.

Exit codes: 0 on success, 2 when a computation is refused for exceeding its
numerical budget, 1 on any other error.
"""

import argparse
import csv
import io
import json
import math
import os
import subprocess
import sys
import time
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import __version__
from .errors import BudgetError, FactorPhaseError, ModelError
from .model import FAMILIES, ModelSpec
from .parallel import resolve_workers
from .rng import stream

RESOLUTIONS = {
    "loop_normalization_order_1": "direct: kappa_Y = (d/k) P(events) for self-loops; "
                                  "confirmed by expected loop counts over random graphs",
    "first_moment_prefactor": "q^n (corrected); the q^(n+1/2) form is reported alongside as 'shifted'",
    "quartic_coefficient": "exact fourth-order Bethe coefficient is 3x d(k-1)/12((k-1)d lam^2 - lam); "
                           "both are reported",
    "reconstruction_rule": "positive when 3 consecutive ell have estimate > 3 SE and pairwise gaps < 2 SE",
    "corr_star_method": "explicit forests up to 2e6 expected nodes, symmetrized population dynamics beyond",
    "rng_key": "(seed, task id); results do not depend on the worker count",
}


class ConfigError(FactorPhaseError):
    """Invalid experiment configuration; the message names the offending field."""


# -- schemas ----------------------------------------------------------------


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class AtomDoc(_Strict):
    p: float
    table: list[float]


class ModelDoc(_Strict):
    family: Literal[FAMILIES]
    q: Optional[int] = None
    k: Optional[int] = None
    beta: Optional[float] = None
    atoms: Optional[list[AtomDoc]] = None


class GraphSource(_Strict):
    graph: Optional[str] = None
    kind: Literal["null", "teacher", "nishimori"] = "null"
    n: int = Field(100, ge=1)
    d: Optional[float] = Field(None, ge=0)
    m: Optional[int] = Field(None, ge=0)


class NoParams(_Strict):
    pass


class CheckParams(_Strict):
    budget: int = Field(50, ge=1)


class GenParams(GraphSource):
    sigma: Optional[list[int]] = None
    band: bool = False


class GibbsParams(GraphSource):
    mode: Literal["components", "enumerate"] = "components"
    n_samples: int = Field(0, ge=0)
    method: Literal["exact", "glauber"] = "exact"
    steps: int = Field(10, ge=1)


class OverlapParams(GraphSource):
    n_pairs: int = Field(100, ge=2)
    method: Literal["exact", "glauber"] = "exact"


class BetheParams(_Strict):
    d: float = Field(ge=0)
    init: Literal["uniform", "polarized"] = "uniform"
    N: int = Field(10**4, ge=1)
    sweeps: int = Field(0, ge=0)
    n_mc: int = Field(10**5, ge=2)


class DcondParams(_Strict):
    d_grid: list[float]
    N: int = Field(10**4, ge=10)
    sweeps: int = Field(200, ge=1)
    keep: int = Field(50, ge=2)
    n_mc: int = Field(10**4, ge=2)


class CensusParams(GraphSource):
    ell_max: int = Field(3, ge=1, le=8)


class PoissonParams(_Strict):
    graph_model: Literal["null", "nishimori"] = "null"
    d: float = Field(gt=0)
    n: int = Field(2000, ge=2)
    n_graphs: int = Field(200, ge=2)
    ell_max: int = Field(3, ge=1, le=8)


class SampleKParams(_Strict):
    d: float = Field(gt=0)
    ell_max: int = Field(20, ge=1)
    conditioned_on_S: bool = False
    n_samples: int = Field(10**5, ge=2)


class MomentParams(_Strict):
    n: int = Field(ge=1)
    m: Optional[int] = Field(None, ge=0)
    d: Optional[float] = Field(None, gt=0)
    prefactor: Literal["corrected", "shifted"] = "corrected"
    exact: bool = True


class FluctParams(_Strict):
    d: float = Field(gt=0)
    n: int = Field(ge=2)
    n_graphs: int = Field(ge=2)
    n_K: int = Field(10**5, ge=2)
    ell_max: int = Field(20, ge=1)


class TreeCorrParams(_Strict):
    d: float = Field(ge=0)
    ell: int = Field(ge=0)
    n_trees: int = Field(10**4, ge=2)
    method: Literal["auto", "forest", "population"] = "auto"


class DrecParams(_Strict):
    d_grid: list[float]
    ell_schedule: list[int]
    n_trees: int = Field(2 * 10**4, ge=2)
    replicates: int = Field(4, ge=1)


class NishimoriParams(_Strict):
    n: int = Field(3, ge=1)
    m_values: list[int] = [1, 2]


class TaylorParams(_Strict):
    d: float = Field(gt=0)
    eps_list: list[float] = [0.025, 0.05]


# name -> (params schema, stochastic)
COMMANDS = {
    "check-assumptions": (CheckParams, True),
    "spectra": (NoParams, False),
    "ks-bound": (NoParams, False),
    "gen": (GenParams, True),
    "gibbs": (GibbsParams, True),
    "overlap": (OverlapParams, True),
    "bethe": (BetheParams, True),
    "dcond": (DcondParams, True),
    "census": (CensusParams, True),
    "poisson-fit": (PoissonParams, True),
    "sample-k": (SampleKParams, True),
    "moments": (MomentParams, False),
    "fluctuation": (FluctParams, True),
    "tree-corr": (TreeCorrParams, True),
    "drec-scan": (DrecParams, True),
    "nishimori-test": (NishimoriParams, False),
    "taylor-check": (TaylorParams, False),
}


class ExperimentConfig(_Strict):
    command: str
    model: ModelDoc
    params: dict = {}
    seed: Optional[int] = Field(None, ge=0, lt=2**64)
    workers: int = Field(1, ge=1)
    out: str = "."
    format: Literal["json", "csv", "both"] = "json"


def _pointer(err):
    loc = ".".join(str(x) for x in err["loc"])
    return "%s: %s" % (loc or "<root>", err["msg"])


def _validation_message(exc, prefix=""):
    return "; ".join(prefix + _pointer(e) for e in exc.errors())


def parse_config(source=None, overrides=None):
    """Validated ExperimentConfig from a JSON file path, an inline JSON document or a dict.

    ``overrides`` (e.g. from command-line flags) replace top-level keys.
    Params are validated against the command's schema with defaults filled in.
    """
    if source is None:
        doc = {}
    elif isinstance(source, dict):
        doc = dict(source)
    else:
        text = source if source.lstrip().startswith("{") else _read(source)
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("config: invalid JSON (%s)" % exc) from exc
    if not isinstance(doc, dict):
        raise ConfigError("config: top level must be an object")
    for key, val in (overrides or {}).items():
        if val is not None:
            doc[key] = val
    if doc.get("command") not in COMMANDS:
        raise ConfigError("command: unknown command %r (expected one of %s)"
                          % (doc.get("command"), ", ".join(COMMANDS)))
    if "workers" not in doc:
        doc["workers"] = resolve_workers(None)
    try:
        cfg = ExperimentConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(_validation_message(exc)) from exc
    schema, stochastic = COMMANDS[cfg.command]
    try:
        params = schema.model_validate(cfg.params)
    except ValidationError as exc:
        raise ConfigError(_validation_message(exc, "params.")) from exc
    if stochastic and cfg.seed is None:
        raise ConfigError("seed: required for the stochastic command %r" % cfg.command)
    try:
        ModelSpec.from_dict(cfg.model.model_dump(exclude_none=True))
    except ModelError as exc:
        raise ConfigError("model.%s" % exc) from exc
    return cfg.model_copy(update={"params": params.model_dump()})


def _read(path):
    try:
        with open(path) as fh:
            return fh.read()
    except OSError as exc:
        raise ConfigError("config: cannot read %s (%s)" % (path, exc)) from exc


# -- execution ------------------------------------------------------------


def _version():
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], cwd=here, capture_output=True,
                             text=True, timeout=5)
        if rev.returncode == 0 and rev.stdout.strip():
            return "%s+g%s" % (__version__, rev.stdout.strip())
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        if math.isnan(x):
            return "nan"
        return x
    if hasattr(x, "to_dict"):
        return _jsonable(x.to_dict())
    return x


class Table:
    """A named tabular payload destined for a CSV file."""

    def __init__(self, name, header, rows):
        self.name = name
        self.header = list(header)
        self.rows = [list(r) for r in rows]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        for r in self.rows:
            w.writerow([_cell(v) for v in r])
        return buf.getvalue()

    def to_dict(self):
        return {"header": self.header, "rows": _jsonable(self.rows)}


def _cell(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if v is None:
        return ""
    return str(v)


def _rows_table(name, rows, cols):
    return Table(name, cols, [[r.get(c) for c in cols] for r in rows])


def _graph(P, p, rng):
    from .graphs import FactorGraph, gen_nishimori, gen_null, gen_teacher

    if p.get("graph"):
        with open(p["graph"]) as fh:
            G = FactorGraph.from_text(fh.read())
        if (G.k, G.q) != (P.k, P.q):
            raise ConfigError("params.graph: (k, q) of the file does not match the model")
        return G, None
    n, d, m = p["n"], p.get("d"), p.get("m")
    if m is None and d is None:
        raise ConfigError("params.d: either d or m is required to generate a graph")
    if p["kind"] == "null":
        return gen_null(n, P, rng, d=d, m=m, band=p.get("band", False)), None
    if m is None:
        m = int(rng.poisson(d * n / P.k))
    if p["kind"] == "teacher":
        sigma = p.get("sigma")
        sigma = rng.integers(0, P.q, size=n) if sigma is None else np.asarray(sigma)
        if len(sigma) != n or np.any((sigma < 0) | (sigma >= P.q)):
            raise ConfigError("params.sigma: need n spins in [0, q)")
        return gen_teacher(n, m, P, sigma, rng), sigma
    return gen_nishimori(n, m, P, rng)


def _run_check(P, p, rng, cfg):
    from .model import check_assumptions

    rep = check_assumptions(P, budget=p["budget"], rng=rng)
    return {"assumptions": rep.to_dict()}, []


def _run_spectra(P, p, rng, cfg):
    from .operators import model_spectra

    return {"spectra": model_spectra(P).to_dict()}, []


def _run_ks(P, p, rng, cfg):
    from .operators import model_spectra

    rep = model_spectra(P)
    return {"d_ks": rep.d_ks, "lambda_hat": rep.lambda_hat}, []


def _run_gen(P, p, rng, cfg):
    G, sigma = _graph(P, p, rng)
    files = {"graph.txt": G.to_text()}
    tables = []
    if sigma is not None:
        tables.append(Table("sigma", ["variable", "spin"], [[i, int(s)] for i, s in enumerate(sigma)]))
    return {"n": G.n, "m": G.m, "k": G.k, "q": G.q, "graph_file": "graph.txt"}, tables, files


def _run_gibbs(P, p, rng, cfg):
    from .gibbs import gibbs_sample, partition_exact

    G, _ = _graph(P, p, rng)
    res = partition_exact(G, p["mode"], marginals=True)
    out = {"n": G.n, "m": G.m, "log_Z": res.log_Z, "n_cyclic_components": res.n_cyclic_components,
           "max_fvs": res.max_fvs}
    tables = [Table("marginals", ["variable"] + ["p%d" % s for s in range(G.q)],
                    [[i] + list(row) for i, row in enumerate(res.marginals)])]
    if p["n_samples"]:
        S = gibbs_sample(G, p["n_samples"], p["method"], rng, p["steps"])
        tables.append(Table("samples", ["sample"] + ["x%d" % i for i in range(G.n)],
                            [[j] + [int(v) for v in s] for j, s in enumerate(S)]))
    return out, tables


def _run_overlap(P, p, rng, cfg):
    from .gibbs import overlap_concentration

    G, _ = _graph(P, p, rng)
    return {"overlap": overlap_concentration(G, p["n_pairs"], p["method"], rng)}, []


def _run_bethe(P, p, rng, cfg):
    from .bethe import bethe_estimate, polarized, run_population, uniform_atom

    init = uniform_atom(P.q) if p["init"] == "uniform" else polarized(P.q, p["N"])
    if p["sweeps"]:
        pi, est, pol = run_population(p["d"], P, init, p["sweeps"], max(2, p["sweeps"] // 4), p["n_mc"], rng)
        res = bethe_estimate(p["d"], P, pi, p["n_mc"], rng)
        return {"bethe": res.to_dict(), "polarization": float(pol[-1])}, []
    return {"bethe": bethe_estimate(p["d"], P, init, p["n_mc"], rng).to_dict()}, []


def _run_dcond(P, p, rng, cfg):
    from .bethe import dcond_scan

    res = dcond_scan(P, p["d_grid"], p["N"], p["sweeps"], p["keep"], p["n_mc"], rng)
    table = _rows_table("dcond", res["rows"], ["d", "sup_B", "threshold", "gap", "se"])
    return {"bracket": res["bracket"], "label": res["label"], "rows": res["rows"]}, [table]


def _run_census(P, p, rng, cfg):
    from .fluct import all_psi_signatures, count_cycles

    G, _ = _graph(P, p, rng)
    sigs = [Y for l in range(1, p["ell_max"] + 1) for Y in all_psi_signatures(l, P.k)]
    c = count_cycles(G, p["ell_max"], sigs)
    rows = c.to_rows()
    return {"n": G.n, "m": G.m, "totals": c.totals}, [_rows_table("census", rows, ["signature", "count"])]


def _run_poisson(P, p, rng, cfg):
    from .fluct import poisson_fit

    res = poisson_fit(p["graph_model"], p["d"], P, p["n"], p["n_graphs"], rng, p["ell_max"],
                      workers=cfg.workers)
    cols = list(res["rows"][0].keys())
    return res, [_rows_table("poisson_fit", res["rows"], cols)]


def _run_sample_k(P, p, rng, cfg):
    from .fluct import sample_K

    K = sample_K(p["d"], P, p["ell_max"], p["conditioned_on_S"], p["n_samples"], rng)
    out = {"mean": K.mean(), "se": K.se(), "tail_bound": K.tail_bound, "ell_max": K.ell_max,
           "conditioned_on_S": K.conditioned_on_S}
    return out, [Table("K", ["K"], [[v] for v in K.values])]


def _run_moments(P, p, rng, cfg):
    from .fluct import moment_formulas

    n, m, d = p["n"], p.get("m"), p.get("d")
    if m is None and d is None:
        raise ConfigError("params.d: either d or m is required")
    if m is None:
        m = int(round(d * n / P.k))
    if d is None:
        d = P.k * m / n
    return {"moments": moment_formulas(n, m, d, P, prefactor=p["prefactor"], exact=p["exact"]),
            "n": n, "m": m, "d": d}, []


def _run_fluct(P, p, rng, cfg):
    from .fluct import fluctuation_experiment

    res = fluctuation_experiment(p["d"], P, p["n"], p["n_graphs"], p["n_K"], rng, p["ell_max"], cfg.workers)
    out = {"n": res["n"], "d": res["d"], "n_graphs": res["n_graphs"], "K_mean": res["K_mean"],
           "K_se": res["K_se"], "K_prime_mean": res["K_prime_mean"], "n_simple": int(res["simple"].sum())}
    for pref in ("corrected", "shifted"):
        e = res[pref]
        out[pref] = {k: v for k, v in e.items() if k != "centered"}
    cen, K = res["corrected"]["centered"], res["K"]
    L = max(len(cen), len(K))
    ecdf = Table("ecdf_pair", ["centered_lnZ", "K_sample"],
                 [[cen[i] if i < len(cen) else None, K[i] if i < len(K) else None] for i in range(L)])
    graphs = Table("graphs", ["graph", "m", "log_Z", "simple", "centered_corrected", "centered_shifted"],
                   [[i, int(res["m"][i]), res["log_Z"][i], int(res["simple"][i]),
                     res["corrected"]["centered"][i], res["shifted"]["centered"][i]]
                    for i in range(len(cen))])
    return out, [ecdf, graphs]


def _run_tree_corr(P, p, rng, cfg):
    from .tree import corr_star

    return {"corr_star": corr_star(p["d"], P, p["ell"], p["n_trees"], rng, p["method"])}, []


def _run_drec(P, p, rng, cfg):
    from .tree import drec_scan

    res = drec_scan(P, p["d_grid"], p["ell_schedule"], p["n_trees"], rng, p["replicates"])
    table = _rows_table("drec", res["rows"], ["d", "ell", "estimate", "se", "verdict"])
    return {"bracket": res["bracket"], "d_ks": res["d_ks"], "rule": res["rule"], "rows": res["rows"]}, [table]


def _run_nishimori(P, p, rng, cfg):
    from .graphs import nishimori_law_tv

    rows = [{"n": p["n"], "m": m, "tv": nishimori_law_tv(p["n"], m, P)} for m in p["m_values"]]
    return {"rows": rows, "max_tv": max(r["tv"] for r in rows)}, [_rows_table("nishimori", rows, ["n", "m", "tv"])]


def _run_taylor(P, p, rng, cfg):
    from .operators import taylor_expansion_check

    res = taylor_expansion_check(p["d"], P, eps_list=p["eps_list"])
    return res, [_rows_table("taylor", res["rows"], ["eps", "delta_B", "predicted", "ratio"])]


RUNNERS = {
    "check-assumptions": _run_check, "spectra": _run_spectra, "ks-bound": _run_ks, "gen": _run_gen,
    "gibbs": _run_gibbs, "overlap": _run_overlap, "bethe": _run_bethe, "dcond": _run_dcond,
    "census": _run_census, "poisson-fit": _run_poisson, "sample-k": _run_sample_k,
    "moments": _run_moments, "fluctuation": _run_fluct, "tree-corr": _run_tree_corr,
    "drec-scan": _run_drec, "nishimori-test": _run_nishimori, "taylor-check": _run_taylor,
}


class RunReport:
    def __init__(self, cfg, results, tables, files, wall_time, warnings):
        self.cfg = cfg
        self.results = results
        self.tables = tables
        self.files = files
        self.wall_time = wall_time
        self.warnings = warnings

    def to_dict(self, embed_tables=True):
        doc = {"command": self.cfg.command, "config": self.cfg.model_dump(), "version": _version(),
               "wall_time": self.wall_time, "results": _jsonable(self.results),
               "warnings": self.warnings, "resolutions": RESOLUTIONS}
        if embed_tables:
            doc["tables"] = {t.name: t.to_dict() for t in self.tables}
        else:
            doc["tables"] = {t.name: t.name + ".csv" for t in self.tables}
        return doc


def execute(cfg):
    """Run the configured command; deterministic given (config, seed)."""
    P = ModelSpec.from_dict(cfg.model.model_dump(exclude_none=True))
    rng = stream(cfg.seed, COMMANDS_INDEX[cfg.command]) if cfg.seed is not None else None
    t0 = time.perf_counter()
    out = RUNNERS[cfg.command](P, cfg.params, rng, cfg)
    results, tables = out[0], out[1]
    files = out[2] if len(out) > 2 else {}
    warnings = []
    if cfg.command in ("moments", "fluctuation"):
        warnings.append("first moment prefactor: " + RESOLUTIONS["first_moment_prefactor"])
    if cfg.command in ("poisson-fit", "census"):
        warnings.append("order-1 loops: " + RESOLUTIONS["loop_normalization_order_1"])
    if cfg.command == "taylor-check":
        warnings.append(RESOLUTIONS["quartic_coefficient"])
    if cfg.command in ("tree-corr", "drec-scan"):
        warnings.append(RESOLUTIONS["reconstruction_rule"])
    return RunReport(cfg, results, tables, files, time.perf_counter() - t0, warnings)


COMMANDS_INDEX = {name: i for i, name in enumerate(COMMANDS)}


def emit_report(report, out_dir, fmt="json"):
    """Write report.json (always) and CSV files for tabular payloads; returns written paths."""
    try:
        os.makedirs(out_dir, exist_ok=True)
        written = []
        csv_on = fmt in ("csv", "both")
        for name, text in report.files.items():
            path = os.path.join(out_dir, name)
            with open(path, "w") as fh:
                fh.write(text)
            written.append(path)
        if csv_on:
            for t in report.tables:
                path = os.path.join(out_dir, t.name + ".csv")
                with open(path, "w", newline="") as fh:
                    fh.write(t.to_csv())
                written.append(path)
        path = os.path.join(out_dir, "report.json")
        with open(path, "w") as fh:
            json.dump(report.to_dict(embed_tables=fmt in ("json", "both")), fh, indent=2, sort_keys=True)
            fh.write("\n")
        written.append(path)
    except OSError as exc:
        raise FactorPhaseError("out: cannot write to %s (%s)" % (out_dir, exc)) from exc
    return written


# -- entry point ------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="factorphase", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON file or inline JSON document")
        sp.add_argument("--model", help="model document as inline JSON (overrides the config)")
        sp.add_argument("--params", help="command parameters as inline JSON (merged over the config)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int, help="defaults to $FACTORPHASE_WORKERS or 1")
        sp.add_argument("--out", default=None, help="output directory (default: current directory)")
        sp.add_argument("--format", choices=["json", "csv", "both"], default=None)
    return ap


def _inline(text, field_name):
    if text is None:
        return None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("%s: invalid JSON (%s)" % (field_name, exc)) from exc


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        base = {}
        if args.config is not None:
            text = args.config if args.config.lstrip().startswith("{") else _read(args.config)
            base = _inline(text, "config")
            if not isinstance(base, dict):
                raise ConfigError("config: top level must be an object")
        overrides = {"command": args.command, "model": _inline(args.model, "model"), "seed": args.seed,
                     "workers": args.workers, "out": args.out, "format": args.format}
        extra = _inline(args.params, "params")
        if extra is not None:
            overrides["params"] = {**base.get("params", {}), **extra}
        cfg = parse_config(base, overrides)
        report = execute(cfg)
        paths = emit_report(report, cfg.out, cfg.format)
    except BudgetError as exc:
        print("factorphase: budget refused: %s" % exc, file=sys.stderr)
        return 2
    except (FactorPhaseError, ValueError, OSError) as exc:
        print("factorphase: error: %s" % exc, file=sys.stderr)
        return 1
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
