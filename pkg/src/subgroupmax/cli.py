"""Command-line front end: ``fit``, ``simulate``, ``tune`` and ``power``.

Settings come from an optional config file (INI sections named after the
command, or the ``run`` block of an earlier JSON report) and are overridden
by flags. Exit codes: 1 configuration error, 2 data error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import sys
import time
from dataclasses import fields, replace
from pathlib import Path

from ._random import child_seed
from .data import load_dataset, parse_schema, schema_from_prefixes, write_dataset
from .errors import ConfigError, DataError, NumericalError
from .inference import run_inference
from .overlap import atom_design
from .pipeline import _S_TUNE, METHODS, InferenceConfig
from .rsplit import SelectorConfig
from .simulation import (ScenarioSpec, generate, power_curve, preset, replication_seeds,
                         run_monte_carlo)
from .tuning import cross_validate_r

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
COMMANDS = ("fit", "simulate", "tune", "power")
DEFAULT_EFFECTS = tuple(round(0.05 * k, 2) for k in range(11))

_INFERENCE_KEYS = tuple(f.name for f in fields(InferenceConfig) if f.name != "selector")
_SELECTOR_KEYS = tuple("selector_" + f.name for f in fields(SelectorConfig))
_SCENARIO_KEYS = ("design", "n", "p1", "p2", "beta_case", "effect")

_INT = {"B", "B1", "B2", "cv_folds", "tune_folds", "B_inner", "workers", "seed", "n", "p1", "p2", "reps",
        "selector_s_min", "selector_s_max", "selector_folds"}
_FLOAT = {"split_fraction", "effect", "selector_lam"}
_FLOAT_OR_STR = {"r", "lambda_mode", "nodewise_lambda"}
_FLOAT_LIST = {"confidence", "candidates", "effects"}
_STR_LIST = {"methods"}
_BOOL = {"baselines", "emit_data", "overlap", "studentize_simultaneous"}
_STR = {"method", "multiplier", "standardize", "input", "schema", "preset", "design", "beta_case", "out",
        "treatment", "selector_mode", "selector_rule"}
KNOWN_KEYS = _INT | _FLOAT | _FLOAT_OR_STR | _FLOAT_LIST | _STR_LIST | _BOOL | _STR

log = logging.getLogger("subgroupmax")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _coerce(key: str, value):
    """Convert a config-file string (or flag value) to the type ``key`` expects."""
    if key not in KNOWN_KEYS:
        raise ConfigError(f"unknown setting {key!r}")
    if value is None or not isinstance(value, str):
        if key in _FLOAT_LIST | _STR_LIST and isinstance(value, (list, tuple)):
            return tuple(value)
        return value
    text = value.strip()
    try:
        if key in _INT:
            return None if text.lower() in ("", "none") else int(text)
        if key in _FLOAT:
            return None if text.lower() in ("", "none") else float(text)
        if key in _FLOAT_OR_STR:
            try:
                return float(text)
            except ValueError:
                return text
        if key in _FLOAT_LIST:
            return tuple(float(t) for t in text.split(",") if t.strip())
        if key in _STR_LIST:
            return tuple(t.strip() for t in text.split(",") if t.strip())
        if key in _BOOL:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None
    return text


def _config_parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keys such as B and B1 are case-sensitive
    return cp


def _read_config(path, command: str) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    if path.suffix == ".json":
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        raw = doc.get("run", doc)
        raw = {k: v for k, v in raw.items() if k != "command"}
    else:
        cp = _config_parser()
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        raw = dict(cp[command]) if cp.has_section(command) else dict(cp.defaults())
    return {k: _coerce(k, v) for k, v in raw.items()}


def _settings(args) -> dict:
    s = _read_config(args.config, args.command) if args.config else {}
    for key in KNOWN_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            s[key] = _coerce(key, v)
    return s


def _inference_overrides(s: dict) -> dict:
    out = {k: s[k] for k in _INFERENCE_KEYS if k in s}
    sel = {k[len("selector_"):]: s[k] for k in _SELECTOR_KEYS if k in s}
    if sel:
        out["selector"] = sel
    return out


def _apply(cfg: InferenceConfig, overrides: dict) -> InferenceConfig:
    ov = dict(overrides)
    if "selector" in ov:
        ov["selector"] = replace(cfg.selector, **ov["selector"])
    return cfg.with_(**ov)


def _flat_config(cfg: InferenceConfig) -> dict:
    d = cfg.to_dict()
    sel = d.pop("selector")
    d.update({"selector_" + k: v for k, v in sel.items()})
    return d


def _scenario(s: dict):
    """Scenario spec plus preset defaults (configs, methods), or ``None`` when no scenario is given."""
    has_scenario = "preset" in s or "design" in s
    if not has_scenario:
        return None
    if "preset" in s:
        spec, cfgs, methods = preset(s["preset"])
    else:
        spec, cfgs, methods = ScenarioSpec(design=s["design"]), {}, ("debiased_calibrated", "debiased_naive")
    changes = {k: s[k] for k in _SCENARIO_KEYS if k in s and k != "design"}
    if "design" in s and "preset" in s:
        changes["design"] = s["design"]
    if changes:
        spec = replace(spec, **changes)
    return spec, cfgs, methods


def _pipeline_configs(s: dict, base: dict) -> dict:
    ov = _inference_overrides(s)
    ov.pop("method", None)
    return {pipe: _apply(base.get(pipe, InferenceConfig(method=pipe)).with_(method=pipe), ov) for pipe in METHODS}


def _exactly_one_source(s: dict, command: str):
    has_input = "input" in s
    has_scenario = "preset" in s or "design" in s
    if has_input == has_scenario:
        raise ConfigError(f"{command} needs exactly one of --input or a scenario (--preset/--design)")


def _load_input(s: dict):
    path = Path(s["input"])
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    if "schema" in s:
        text = s["schema"]
        schema_path = Path(text)
        schema = parse_schema(schema_path.read_text() if schema_path.is_file() else text)
    else:
        with path.open() as fh:
            first = fh.readline()
        sep = "\t" if first.count("\t") > first.count(",") else ","
        schema = schema_from_prefixes([h.strip() for h in first.strip().split(sep)], "y")
    return load_dataset(path, schema), path.stem


def _dataset(s: dict, command: str):
    _exactly_one_source(s, command)
    if "input" in s:
        return _load_input(s)
    spec, _, _ = _scenario(s)
    data, _ = generate(spec, s.get("seed", 0))
    return data, spec.label()


def _dump(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _run_block(command: str, s: dict, cfg: InferenceConfig | None = None) -> dict:
    run = {"command": command}
    run.update({k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(s.items())
                if k not in ("workers", "out")})
    if cfg is not None:
        run.update(_flat_config(cfg))
    return run


def cmd_fit(s: dict) -> int:
    data, stem = _dataset(s, "fit")
    cfg = _apply(InferenceConfig(), _inference_overrides(s))
    seed = s.get("seed", 0)
    transform = labels = None
    if s.get("overlap"):
        treatment = None
        if "treatment" in s:
            tds = load_dataset(s["input"], {data.response_name: "response", s["treatment"]: "subgroup"})
            treatment = tds.Z[:, 0]
        groups = data.subgroup_names
        data, ov = atom_design(data, data.Z, treatment=treatment, group_names=groups)
        transform, labels = ov.A, groups
    start = time.perf_counter()
    result = run_inference(data, cfg, seed, transform=transform, labels=labels,
                           baselines=s.get("baselines", False))
    report = result.report()
    report.run = _run_block("fit", s, cfg)
    path = Path(s.get("out", ".")) / f"fit_{stem}_{cfg.method}_seed{seed}.json"
    _dump(path, report.to_json() + "\n")
    for line in report.summary_lines():
        print(line)
    print(f"report={path}")
    print(f"elapsed={time.perf_counter() - start:.2f}s", file=sys.stderr)
    return EXIT_OK


def _fit_ini(cfg: InferenceConfig) -> str:
    cp = _config_parser()
    flat = _flat_config(cfg)
    cp["fit"] = {k: ("none" if v is None else ",".join(repr(x) for x in v) if isinstance(v, list)
                     else repr(v) if isinstance(v, float) else str(v)) for k, v in flat.items()}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _emit_data(spec, table, cfgs, seed, confidence, root: Path):
    root.mkdir(parents=True, exist_ok=True)
    pipes = sorted({m.split("_")[0] for m in table.methods if m.split("_")[0] in METHODS})
    for pipe in pipes:
        _dump(root / f"fit_{pipe}.ini", _fit_ini(cfgs[pipe].with_(confidence=(confidence,))))
    manifest = []
    for i in range(table.reps):
        seeds = replication_seeds(seed, i)
        data, _ = generate(spec, seeds["data"])
        name = f"rep{i:04d}.csv"
        write_dataset(data, root / name)
        entry = {"rep": i, "file": name, "data_seed": seeds["data"],
                 "fit_seeds": {p: seeds[p] for p in pipes},
                 "results": {m: {"point": _num(table.point[m][i]), "lower": _num(table.lower[m][i]),
                                 "selected": int(table.selected[m][i])} for m in table.methods}}
        manifest.append(entry)
    _dump(root / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _num(x):
    x = float(x)
    return None if x != x else x


def cmd_simulate(s: dict) -> int:
    if "input" in s:
        raise ConfigError("simulate takes a scenario (--preset/--design), not --input")
    sc = _scenario(s)
    if sc is None:
        raise ConfigError("simulate needs a scenario: --preset or --design")
    spec, base, methods = sc
    cfgs = _pipeline_configs(s, base)
    if "methods" in s:
        methods = s["methods"]
    elif "method" in s:
        methods = (f"{s['method']}_calibrated", f"{s['method']}_naive")
    seed = s.get("seed", 0)
    confidence = s.get("confidence", (0.95,))[0]
    table = run_monte_carlo(spec, methods, s.get("reps", 100), cfgs, seed, workers=s.get("workers", 1),
                            confidence=confidence)
    pipes = "-".join(sorted({m.split("_")[0] for m in table.methods}))
    out = Path(s.get("out", "."))
    stem = f"{spec.label()}_{pipes}_seed{seed}"
    doc = table.to_dict()
    doc["run"] = _run_block("simulate", s)
    _dump(out / f"{stem}.csv", table.to_csv())
    _dump(out / f"{stem}.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    if s.get("emit_data"):
        _emit_data(spec, table, cfgs, seed, confidence, out / f"data_{stem}")
    sys.stdout.write(table.to_csv())
    print(f"metrics={out / (stem + '.csv')}")
    return EXIT_OK


def cmd_tune(s: dict) -> int:
    data, stem = _dataset(s, "tune")
    cfg = _apply(InferenceConfig(), _inference_overrides(s))
    seed = s.get("seed", 0)
    res = cross_validate_r(data, cfg.candidates, cfg.tune_folds, cfg.method, cfg.B_inner,
                           child_seed(seed, _S_TUNE), config=cfg)
    out = Path(s.get("out", "."))
    base = out / f"tune_{stem}_{cfg.method}_seed{seed}"
    doc = res.to_dict()
    doc["run"] = _run_block("tune", s, cfg)
    _dump(base.with_suffix(".json"), json.dumps(doc, indent=2, sort_keys=True) + "\n")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["r", "loss"])
    for r, row in zip(res.candidates, res.candidate_losses):
        w.writerow([repr(float(r)), repr(float(row.min()))])
    _dump(base.with_suffix(".csv"), buf.getvalue())
    print(f"r_cv={res.r_cv!r} r_star={res.r_star!r} method={cfg.method} folds={res.folds}")
    print(f"report={base.with_suffix('.json')}")
    return EXIT_OK


def cmd_power(s: dict) -> int:
    if "input" in s:
        raise ConfigError("power takes a scenario (--preset/--design), not --input")
    sc = _scenario(s) or _scenario({**s, "preset": "power-continuous"})
    spec, base, methods = sc
    cfgs = _pipeline_configs(s, base)
    methods = s.get("methods", methods)
    seed = s.get("seed", 0)
    effects = s.get("effects", DEFAULT_EFFECTS)
    rows = power_curve(spec, effects, methods, s.get("reps", 100), cfgs, seed, workers=s.get("workers", 1),
                       confidence=s.get("confidence", (0.95,))[0])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["effect", "method", "rejection_rate", "se"])
    for eff, m, rate, se in rows:
        w.writerow([repr(eff), m, repr(rate), "NA" if se is None else repr(se)])
    pipes = "-".join(sorted({m.split("_")[0] for m in methods}))
    path = Path(s.get("out", ".")) / f"power_{spec.label()}_{pipes}_seed{seed}.csv"
    _dump(path, buf.getvalue())
    sys.stdout.write(buf.getvalue())
    print(f"power={path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="subgroupmax", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        c = sub.add_parser(name)
        c.add_argument("--config", help="INI file (section per command) or an earlier JSON report")
        c.add_argument("--seed", help="master seed")
        c.add_argument("--out", help="output directory")
        c.add_argument("--workers", help="parallel workers; never changes results")
        c.add_argument("--method", choices=METHODS)
        c.add_argument("--r", help="'auto' or a value in (0, 0.5)")
        c.add_argument("--B", help="bootstrap replicates (debiased)")
        c.add_argument("--B1", help="random splits (rsplit)")
        c.add_argument("--B2", help="bootstrap replicates (rsplit)")
        c.add_argument("--confidence", help="comma-separated confidence levels")
        c.add_argument("--multiplier", help="rademacher, gaussian or mammen")
        c.add_argument("--lambda-mode", dest="lambda_mode")
        c.add_argument("--nodewise-lambda", dest="nodewise_lambda")
        c.add_argument("--candidates", help="comma-separated r candidates for tuning")
        c.add_argument("--tune-folds", dest="tune_folds")
        c.add_argument("--B-inner", dest="B_inner")
        c.add_argument("--selector-s-min", dest="selector_s_min")
        c.add_argument("--preset", help="named scenario, e.g. benchmark-binary-spurious-p2")
        c.add_argument("--design")
        c.add_argument("--n")
        c.add_argument("--p1")
        c.add_argument("--p2")
        c.add_argument("--beta-case", dest="beta_case")
        if name in ("fit", "tune"):
            c.add_argument("--input", help="comma- or tab-delimited file with a header row")
            c.add_argument("--schema", help="name=role pairs, or a file holding them")
        if name == "fit":
            c.add_argument("--baselines", action="store_const", const="true",
                           help="also report the naive and simultaneous bounds")
            c.add_argument("--overlap", action="store_const", const="true",
                           help="subgroup columns are overlapping memberships")
            c.add_argument("--treatment", help="treatment column for the overlap design")
        if name in ("simulate", "power"):
            c.add_argument("--reps")
            c.add_argument("--methods", help="comma-separated, e.g. debiased_calibrated,rsplit_naive")
        if name == "simulate":
            c.add_argument("--emit-data", dest="emit_data", action="store_const", const="true",
                           help="also write each replication's dataset and fit configs")
        if name == "power":
            c.add_argument("--effects", help="comma-separated largest-effect grid")
    return p


_HANDLERS = {"fit": cmd_fit, "simulate": cmd_simulate, "tune": cmd_tune, "power": cmd_power}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return _HANDLERS[args.command](_settings(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
