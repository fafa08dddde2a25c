"""Command-line front end.

Each subcommand reads one JSON config (``--config``), writes its artifacts
and a ``manifest.json`` to ``--out``, and exits 0 on success. Errors are
printed to stderr as one JSON object and the output directory is left
untouched. A manifest can be passed back as ``--config`` to repeat a run.

Exit codes: 0 success, 1 runtime failure, 2 invalid config or input,
3 ``diagnose`` found an R-hat above the gate.
"""

from __future__ import annotations

import argparse
import csv
import json
import shutil
import sys
import tempfile
from pathlib import Path
from typing import Any, Callable

import jsonschema
import numpy as np

from . import __version__
from .bayes import PriorSpec, build_bm1, build_bm2, posterior_predictive, sample_posterior
from .bootstrap import BootstrapConfig, BootstrapResult, parametric_bootstrap, predict_bands
from .dataset import Dataset, SynthConfig, load_csv, select, synthesize, write_csv
from .diagnostics import convergence_report
from .exceptions import ConfigurationError, NVHMetaError
from .fit import kfold_cv, nls_fit
from .loo import compare, psis_loo
from .sampler import PosteriorSamples, SamplerConfig
from .surrogate import ParameterVector, SurrogateSpec, evaluate

SCHEMA_VERSION = 1
GATE_EXIT = 3

# -- config schemas ---------------------------------------------------------------------

_NUM_LIST = {"type": "array", "items": {"type": "number"}}
_SURROGATE = {
    "type": "object",
    "required": ["family"],
    "properties": {
        "family": {"enum": ["AeroPolynomial", "AeroGaussian", "Tire"]},
        "m": {"type": "integer", "minimum": 0},
        "n": {"type": "integer", "minimum": 0},
        "r": {"type": "integer", "minimum": 1},
        "r1": {"type": "number"},
        "r2": {"type": "number"},
        "c0": {"type": "number", "exclusiveMinimum": 0},
        "freq_transform": {"enum": ["log10", "identity"]},
    },
    "additionalProperties": False,
}
_PARAMS = {
    "type": "object",
    "properties": {
        "b_scale": {"type": "number"},
        "poly": _NUM_LIST, "amp": _NUM_LIST, "loc": _NUM_LIST, "width": _NUM_LIST,
        "noise_sd": {"anyOf": [{"type": "number"}, _NUM_LIST]},
    },
    "additionalProperties": False,
}
_DATA = {
    "type": "object",
    "required": ["path"],
    "properties": {
        "path": {"type": "string"},
        "schema": {"type": "array", "items": {"type": "string"}},
        "selector": {"type": "object", "additionalProperties": {"type": "string"}},
    },
    "additionalProperties": False,
}
_GRID = {
    "type": "object",
    "properties": {
        "speeds": _NUM_LIST,
        "frequencies": _NUM_LIST,
        "points": {"type": "array", "items": {"type": "array", "items": {"type": "number"},
                                              "minItems": 2, "maxItems": 2}},
    },
    "additionalProperties": False,
}
_COMMON = {"schema_version": {"const": SCHEMA_VERSION}, "seed": {"type": "integer"}}


def _schema(required, **props):
    return {"type": "object", "required": ["schema_version"] + required,
            "properties": {**_COMMON, **props}, "additionalProperties": False}


SCHEMAS = {
    "synth": _schema(["synth"], synth={
        "type": "object",
        "required": ["generating_spec", "true_params"],
        "properties": {
            "generating_spec": _SURROGATE,
            "true_params": _PARAMS,
            "speeds": _NUM_LIST,
            "frequency_bands": _NUM_LIST,
            "noise_sd_db": {"anyOf": [{"type": "number", "minimum": 0}, _NUM_LIST]},
            "replicate_count": {"type": "integer", "minimum": 1},
            "categories": {"type": "object", "additionalProperties": {"type": "string"}},
        },
        "additionalProperties": False,
    }),
    "fit": _schema(["data", "surrogate"], data=_DATA, surrogate=_SURROGATE, init=_PARAMS,
                   max_iter={"type": "integer", "minimum": 1}),
    "cv": _schema(["data", "surrogate"], data=_DATA, surrogate=_SURROGATE, init=_PARAMS,
                  k={"anyOf": [{"type": "integer", "minimum": 2},
                               {"type": "array", "items": {"type": "integer", "minimum": 2}}]},
                  runs={"type": "integer", "minimum": 1},
                  max_iter={"type": "integer", "minimum": 1}),
    "sample": _schema(["data", "model"], data=_DATA, model={
        "type": "object",
        "required": ["type", "surrogate"],
        "properties": {
            "type": {"enum": ["BM1", "BM2"]},
            "surrogate": _SURROGATE,
            "priors": {"type": "object"},
            "heteroscedastic": {"type": "boolean"},
            "standardize": {"type": "boolean"},
            "ordered": {"type": "boolean"},
            "precondition": {"enum": ["laplace", "none"]},
        },
        "additionalProperties": False,
    }, sampler={
        "type": "object",
        "properties": {
            "chains": {"type": "integer", "minimum": 1},
            "draws": {"type": "integer", "minimum": 1},
            "warmup": {"type": "integer", "minimum": 0},
            "target_accept": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            "max_tree_depth": {"type": "integer", "minimum": 0},
            "init_jitter": {"type": "number", "minimum": 0},
            "n_jobs": {"type": "integer"},
        },
        "additionalProperties": False,
    }),
    "diagnose": _schema(["samples"], samples={"type": "string"},
                        bins={"type": "integer", "minimum": 1},
                        r_hat_gate={"type": "number"}, split={"type": "boolean"}),
    "loo": _schema(["runs"], runs={
        "type": "array", "minItems": 1,
        "items": {"type": "object", "required": ["id", "samples"],
                  "properties": {"id": {"type": "string"}, "samples": {"type": "string"}},
                  "additionalProperties": False},
    }),
    "bootstrap": _schema(["data", "bootstrap"], data=_DATA, grid=_GRID, bootstrap={
        "type": "object",
        "required": ["spec"],
        "properties": {
            "spec": _SURROGATE,
            "replicates": {"type": "integer", "minimum": 2},
            "noise_mode": {"enum": ["residual", "fixed"]},
            "noise_sd": {"type": ["number", "null"], "minimum": 0},
            "input_resampling": {"type": "boolean"},
            "init": {"anyOf": [_PARAMS, {"type": "null"}]},
            "max_iter": {"type": "integer", "minimum": 1},
            "n_jobs": {"type": "integer"},
            "add_noise": {"type": "boolean"},
        },
        "additionalProperties": False,
    }),
    "predict": _schema(["source", "grid"], grid=_GRID, source={
        "type": "object",
        "required": ["kind", "path"],
        "properties": {"kind": {"enum": ["fit", "sample", "bootstrap"]},
                       "path": {"type": "string"}},
        "additionalProperties": False,
    }, fallback={"enum": ["nearest", None]}, max_draws={"type": "integer", "minimum": 1},
        add_noise={"type": "boolean"}),
}

# Config keys holding file or directory paths, resolved against the config's directory.
_PATH_KEYS = {
    "fit": [("data", "path")], "cv": [("data", "path")], "sample": [("data", "path")],
    "bootstrap": [("data", "path")], "diagnose": [("samples",)], "predict": [("source", "path")],
}


class ConfigError(NVHMetaError):
    def __init__(self, message, path="$"):
        super().__init__(message)
        self.path = path


def _json_path(parts) -> str:
    out = "$"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def load_config(command: str, path, seed: int | None) -> dict:
    """Read, validate and normalise a config (or a manifest) for ``command``."""
    path = Path(path).resolve()
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from None
    if isinstance(raw, dict) and "manifest_version" in raw:
        if raw.get("command") != command:
            raise ConfigError(f"manifest was written by {raw.get('command')!r}, not {command!r}",
                              "$.command")
        raw = raw["config"]
    validator = jsonschema.Draft202012Validator(SCHEMAS[command])
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ConfigError(err.message, _json_path(err.absolute_path))
    cfg = json.loads(json.dumps(raw))
    base = path.parent
    for keys in _PATH_KEYS.get(command, []):
        node = cfg
        for k in keys[:-1]:
            node = node[k]
        node[keys[-1]] = str((base / node[keys[-1]]).resolve())
    if command == "loo":
        for run in cfg["runs"]:
            run["samples"] = str((base / run["samples"]).resolve())
    if seed is not None:
        cfg["seed"] = seed
    cfg.setdefault("seed", 0)
    return cfg


# -- I/O helpers ------------------------------------------------------------------------

def _load_data(spec: dict) -> Dataset:
    path = Path(spec["path"])
    if not path.exists():
        raise ConfigError(f"data file not found: {path}", "$.data.path")
    if path.suffix == ".json":
        data = Dataset.from_json(path)
    else:
        data = load_csv(path, spec.get("schema", []))
    if spec.get("selector"):
        data = select(data, spec["selector"])
    if len(data) == 0:
        raise ConfigurationError("selection left no records")
    return data


def _grid(spec: dict) -> np.ndarray:
    if "points" in spec:
        return np.asarray(spec["points"], dtype=float).reshape(-1, 2)
    v = np.asarray(spec.get("speeds", []), dtype=float)
    f = np.asarray(spec.get("frequencies", []), dtype=float)
    return np.column_stack([np.repeat(v, f.size), np.tile(f, v.size)])


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x
                        for x in row])


def _read_manifest(run_dir, command) -> dict:
    path = Path(run_dir) / "manifest.json"
    if not path.exists():
        raise ConfigError(f"no manifest in {run_dir}")
    man = json.loads(path.read_text())
    if man.get("command") != command:
        raise ConfigError(f"{run_dir} holds a {man.get('command')!r} run, expected {command!r}")
    return man


def _build_model(cfg: dict):
    data = _load_data(cfg["data"])
    mcfg = cfg["model"]
    spec = SurrogateSpec.from_dict(mcfg["surrogate"])
    priors = PriorSpec.from_dict(mcfg["priors"]) if "priors" in mcfg else None
    kwargs = {k: mcfg[k] for k in ("heteroscedastic", "standardize", "ordered") if k in mcfg}
    build = build_bm1 if mcfg["type"] == "BM1" else build_bm2
    return build(data, spec, priors, **kwargs)


def _load_sample_run(run_dir):
    man = _read_manifest(run_dir, "sample")
    run_dir = Path(run_dir)
    samples = PosteriorSamples.from_files(run_dir / "draws.csv", run_dir / "summary.json",
                                          run_dir / "sampler_stats.csv")
    return man, samples


# -- commands -----------------------------------------------------------------------------

def cmd_synth(cfg, out: Path) -> int:
    s = dict(cfg["synth"])
    s["rng_seed"] = cfg["seed"]
    data = synthesize(SynthConfig.from_dict(s))
    write_csv(data, out / "dataset.csv")
    return 0


def cmd_fit(cfg, out: Path) -> int:
    data = _load_data(cfg["data"])
    spec = SurrogateSpec.from_dict(cfg["surrogate"])
    init = ParameterVector.from_dict(cfg["init"]) if "init" in cfg else None
    res = nls_fit(data, spec, init, max_iter=cfg.get("max_iter", 500))
    _write_json(out / "fit.json", {"spec": spec.to_dict(), **res.to_dict()})
    yhat = np.asarray(evaluate(spec, res.params, data.speeds(), data.frequencies()))
    _write_rows(out / "predictions.csv", ["record", "speed_kmph", "frequency_hz", "spl_db",
                                          "fitted", "residual"],
                [(i, v, f, y, yh, y - yh) for i, (v, f, y, yh) in
                 enumerate(zip(data.speeds(), data.frequencies(), data.spl(), yhat))])
    return 0


def cmd_cv(cfg, out: Path) -> int:
    data = _load_data(cfg["data"])
    spec = SurrogateSpec.from_dict(cfg["surrogate"])
    init = ParameterVector.from_dict(cfg["init"]) if "init" in cfg else None
    ks = cfg.get("k", [5, 10])
    ks = [ks] if isinstance(ks, int) else ks
    reports = {}
    rows = []
    for k in ks:
        rep = kfold_cv(data, spec, init, k=k, runs=cfg.get("runs", 1), seed=cfg["seed"],
                       max_iter=cfg.get("max_iter", 500))
        reports[str(k)] = rep.to_dict()
        rows += [(k, run, float(r2)) for run, r2 in enumerate(rep.r2_cv_runs)]
    _write_json(out / "cv.json", {"spec": spec.to_dict(), "reports": reports})
    _write_rows(out / "cv_r2.csv", ["k", "run", "r2_cv"], rows)
    return 0


def cmd_sample(cfg, out: Path) -> int:
    model = _build_model(cfg)
    scfg = SamplerConfig.from_dict({**cfg.get("sampler", {}), "seed": cfg["seed"]})
    samples = sample_posterior(model, scfg, cfg["model"].get("precondition", "laplace"))
    samples.to_csv(out / "draws.csv")
    samples.stats_to_csv(out / "sampler_stats.csv")
    _write_json(out / "summary.json", samples.summary())
    return 0


def cmd_diagnose(cfg, out: Path) -> int:
    _, samples = _load_sample_run(cfg["samples"])
    rep = convergence_report(samples, bins=cfg.get("bins", 20), split=cfg.get("split", False))
    gate = cfg.get("r_hat_gate", 1.1)
    body = rep.to_dict()
    body["r_hat_gate"] = gate
    body["passed"] = bool(rep.max_r_hat <= gate)
    _write_json(out / "convergence.json", body)
    rep.rank_histograms_to_csv(out / "rank_histograms.csv")
    if not body["passed"]:
        worst = rep.param_names[int(np.argmax(rep.r_hat))]
        _report_error("ConvergenceGate",
                      f"max R-hat {rep.max_r_hat:.4f} ({worst}) exceeds gate {gate}",
                      "$.r_hat_gate")
        return GATE_EXIT
    return 0


def cmd_loo(cfg, out: Path) -> int:
    reports = []
    for run in cfg["runs"]:
        man, samples = _load_sample_run(run["samples"])
        model = _build_model(man["config"])
        rep = psis_loo(model, samples, run["id"])
        rep.to_json(out / f"loo_{run['id']}.json")
        rep.k_hat_to_csv(out / f"khat_{run['id']}.csv")
        reports.append(rep)
    table = compare(reports)
    _write_json(out / "compare.json", {"rank_table": table})
    _write_rows(out / "rank_table.csv",
                ["rank", "model_id", "elpd", "p_loo", "se", "elpd_diff", "dse"],
                [(r["rank"], r["model_id"], r["elpd"], r["p_loo"], r["se"], r["elpd_diff"],
                  r["dse"]) for r in table])
    return 0


def cmd_bootstrap(cfg, out: Path) -> int:
    data = _load_data(cfg["data"])
    bcfg = dict(cfg["bootstrap"])
    add_noise = bcfg.pop("add_noise", False)
    bcfg["seed"] = cfg["seed"]
    result = parametric_bootstrap(data, BootstrapConfig.from_dict(bcfg))
    if "grid" in cfg:
        predict_bands(result, _grid(cfg["grid"]), add_noise=add_noise).to_csv(out / "bands.csv")
    result.to_json(out / "bootstrap.json")
    result.replicates_to_csv(out / "replicates.csv")
    return 0


def cmd_predict(cfg, out: Path) -> int:
    grid = _grid(cfg["grid"])
    kind, path = cfg["source"]["kind"], Path(cfg["source"]["path"])
    if kind == "fit":
        _read_manifest(path, "fit")
        fit = json.loads((path / "fit.json").read_text())
        spec = SurrogateSpec.from_dict(fit["spec"])
        params = ParameterVector.from_dict(fit["params"])
        mean = np.asarray(evaluate(spec, params, grid[:, 0], grid[:, 1]), float).reshape(-1)
        _write_rows(out / "predictions.csv", ["point", "speed_kmph", "frequency_hz", "mean"],
                    [(i, v, f, m) for i, ((v, f), m) in enumerate(zip(grid, mean))])
    elif kind == "sample":
        man, samples = _load_sample_run(path)
        model = _build_model(man["config"])
        pp = posterior_predictive(model, samples, grid, rng=cfg["seed"],
                                  fallback=cfg.get("fallback"), max_draws=cfg.get("max_draws"))
        pp.to_csv(out / "predictions.csv")
    else:
        _read_manifest(path, "bootstrap")
        result = BootstrapResult.from_files(path / "bootstrap.json", path / "replicates.csv")
        predict_bands(result, grid, add_noise=cfg.get("add_noise", False),
                      rng=np.random.default_rng(cfg["seed"])).to_csv(out / "predictions.csv")
    return 0


COMMANDS: dict[str, Callable[[dict, Path], int]] = {
    "synth": cmd_synth, "fit": cmd_fit, "cv": cmd_cv, "sample": cmd_sample,
    "diagnose": cmd_diagnose, "loo": cmd_loo, "bootstrap": cmd_bootstrap,
    "predict": cmd_predict,
}


# -- driver --------------------------------------------------------------------------------

def _report_error(kind, message, path=None):
    body: dict[str, Any] = {"error": kind, "message": str(message)}
    if path is not None:
        body["path"] = path
    print(json.dumps(body), file=sys.stderr)


def _commit(tmp: Path, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for item in tmp.iterdir():
        target = out / item.name
        if target.exists():
            target.unlink()
        shutil.move(str(item), str(target))


def run(command: str, config_path, out, seed: int | None = None) -> int:
    out = Path(out).resolve()
    try:
        cfg = load_config(command, config_path, seed)
    except ConfigError as err:
        _report_error("ConfigError", err, err.path)
        return 2
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        status = COMMANDS[command](cfg, tmp)
        _write_json(tmp / "manifest.json", {
            "manifest_version": 1,
            "command": command,
            "version": __version__,
            "seed": cfg["seed"],
            "config": cfg,
        })
        if status in (0, GATE_EXIT):
            _commit(tmp, out)
        return status
    except ConfigError as err:
        _report_error("ConfigError", err, err.path)
        return 2
    except ConfigurationError as err:
        _report_error(type(err).__name__, err, getattr(err, "path", None))
        return 2
    except (NVHMetaError, ValueError, np.linalg.LinAlgError, OSError) as err:
        _report_error(type(err).__name__, err)
        return 1
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nvhmeta", description="Probabilistic surrogates of vehicle noise spectra.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "synth": "simulate a dataset from a surrogate",
        "fit": "least-squares fit",
        "cv": "repeated K-fold cross-validation",
        "sample": "NUTS posterior sampling of BM1/BM2",
        "diagnose": "R-hat, ESS and rank histograms of a sample run",
        "loo": "PSIS-LOO and model ranking over sample runs",
        "bootstrap": "parametric bootstrap of the tire model",
        "predict": "predictions from a fit, sample or bootstrap run",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="JSON config or a previous manifest")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return run(args.command, args.config, args.out, args.seed)


if __name__ == "__main__":
    sys.exit(main())
