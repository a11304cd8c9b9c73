"""Run configuration: YAML parsing, validation and echo.

A configuration is a flat YAML mapping of protocol fields plus optional
``sweep``, ``oracle`` and ``output`` sections::

    kind: WM_SINGLE          # QND | WM_SINGLE | WM_MULTI | OAT | TAT | NOON | COHERENT
    kappa: 0.5
    weak_value: optimal      # number, complex string such as "1+2j", or "optimal"
    sweep: {param: kappa, min: 0.1, max: 10, points: 3, spacing: log}
    oracle: {n_atoms: 400}
    output: {dir: results}

Unknown keys are rejected; every error names the offending line and field.
"""

import os
from dataclasses import dataclass, field, fields, replace

import numpy as np
import yaml

from . import fockoracle as fo
from . import protocols as pr
from .errors import ParseError, ValidationError, WMSqueezeError

OUTPUT_ENV = "WMSQUEEZE_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "wmsqueeze-output"
DEFAULT_ORACLE_TOLERANCE = 0.03

SPEC_KEYS = (
    "kind",
    "kappa",
    "n_detections",
    "weights",
    "weak_value",
    "splitters",
    "splitter_family",
    "detector_inefficiency",
    "noon_m",
    "coherent_alpha",
    "r0_prime",
)
SWEEP_KEYS = ("param", "min", "max", "points", "spacing", "values")
ORACLE_KEYS = ("n_atoms", "photon_cutoff", "leakage_tol", "max_cutoff", "tolerance", "closure_samples", "seed")
OUTPUT_KEYS = ("dir", "format")
SPLITTER_KEYS = ("r", "t", "r_prime", "t_prime")
SWEEPABLE = ("kappa", "weak_value", "detector_inefficiency", "coherent_alpha", "r0_prime")


@dataclass(frozen=True)
class SweepAxis:
    param: str
    values: tuple
    spacing: str = "linear"

    def __post_init__(self):
        if self.param not in SWEEPABLE:
            raise ValidationError(f"sweep param must be one of {SWEEPABLE}, got {self.param!r}")
        if len(self.values) < 2:
            raise ValidationError("a sweep needs at least 2 points")
        if self.spacing not in ("linear", "log", "list"):
            raise ValidationError(f"spacing must be linear, log or list, got {self.spacing!r}")

    @classmethod
    def from_range(cls, param, lo, hi, points, spacing="linear"):
        points = int(points)
        if points < 2:
            raise ValidationError("sweep points must be >= 2")
        if spacing == "log":
            if not (lo > 0 and hi > 0):
                raise ValidationError("log spacing needs positive bounds")
            values = np.logspace(np.log10(lo), np.log10(hi), points)
        elif spacing == "linear":
            values = np.linspace(lo, hi, points)
        else:
            raise ValidationError(f"spacing must be linear or log, got {spacing!r}")
        # round-trip through repr so echoed configs reproduce the same floats
        return cls(param, tuple(float(v) for v in values), spacing)


@dataclass(frozen=True)
class OracleConfig:
    settings: pr.OracleSettings = pr.OracleSettings()
    tolerance: float = DEFAULT_ORACLE_TOLERANCE
    closure_samples: int = 20
    seed: int = 12345


@dataclass(frozen=True)
class OutputConfig:
    dir: str = None
    format: str = "csv"

    def resolved_dir(self, override=None):
        return override or self.dir or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT_DIR


@dataclass(frozen=True)
class RunConfig:
    spec: pr.ProtocolSpec
    sweep: SweepAxis = None
    oracle: OracleConfig = None
    output: OutputConfig = field(default_factory=OutputConfig)
    optimal_weak_value: bool = False
    optimal_weights: bool = False

    def point_specs(self):
        """``[(sweep value or None, ProtocolSpec)]`` in sweep order."""
        if self.sweep is None:
            return [(None, self.spec)]
        return [(v, spec_with(self.spec, self.sweep.param, v)) for v in self.sweep.values]


def spec_with(spec, param, value):
    if param == "weak_value":
        return replace(spec, weak_value=pr.WeakValue(value), splitters=None)
    return replace(spec, **{param: value})


# --------------------------------------------------------------------------- parsing


def _line_map(node, path=(), out=None):
    """Map key paths to 1-based source lines using the composed YAML node tree."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            p = path + (key_node.value,)
            out[p] = key_node.start_mark.line + 1
            _line_map(value_node, p, out)
    return out


class _Ctx:
    def __init__(self, lines):
        self.lines = lines

    def fail(self, path, message, cls=ParseError):
        line = self.lines.get(tuple(path))
        if cls is ParseError:
            return ParseError(message, line=line, field=".".join(path))
        where = f"[line {line}, field '{'.'.join(path)}'] " if line else f"[field '{'.'.join(path)}'] "
        err = cls(where + message)
        err.line, err.field = line, ".".join(path)
        return err


def _check_keys(ctx, mapping, allowed, path=()):
    if not isinstance(mapping, dict):
        raise ctx.fail(path, "expected a mapping")
    for key in mapping:
        if key not in allowed:
            raise ctx.fail(path + (str(key),), f"unknown key {key!r}; allowed: {', '.join(allowed)}")


def _number(ctx, path, value, kind=float):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ctx.fail(path, f"expected a number, got {value!r}")
    if kind is int:
        if int(value) != value:
            raise ctx.fail(path, f"expected an integer, got {value!r}")
        return int(value)
    return float(value)


def _weak_value(ctx, path, value):
    if isinstance(value, str):
        if value.strip().lower() == "optimal":
            return "optimal"
        try:
            return pr.WeakValue(complex(value.replace(" ", "")))
        except ValueError:
            raise ctx.fail(path, f"cannot read weak value {value!r}") from None
    return pr.WeakValue(_number(ctx, path, value))


def parse_config(text):
    """Parse and validate a YAML run configuration; returns a :class:`RunConfig`."""
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        raise ParseError(str(getattr(err, "problem", err)), line=mark.line + 1 if mark else None) from None
    if data is None:
        raise ParseError("empty configuration")
    ctx = _Ctx(_line_map(root))
    _check_keys(ctx, data, SPEC_KEYS + ("sweep", "oracle", "output"))
    if "kind" not in data:
        raise ctx.fail(("kind",), "missing required key 'kind'")
    if "kappa" not in data and not (isinstance(data.get("sweep"), dict) and data["sweep"].get("param") == "kappa"):
        raise ctx.fail(("kappa",), "missing required key 'kappa'")

    kw = {}
    try:
        kind = pr.ProtocolKind(str(data["kind"]).upper())
    except ValueError:
        raise ctx.fail(("kind",), f"unknown protocol kind {data['kind']!r}") from None
    kw["kind"] = kind
    kw["kappa"] = _number(ctx, ("kappa",), data.get("kappa", 0.0))
    for key, typ in (("n_detections", int), ("noon_m", int)):
        if key in data:
            kw[key] = _number(ctx, (key,), data[key], typ)
    for key in ("detector_inefficiency", "coherent_alpha", "r0_prime"):
        if key in data and data[key] is not None:
            kw[key] = _number(ctx, (key,), data[key])
    if "splitter_family" in data:
        kw["splitter_family"] = str(data["splitter_family"])

    optimal_weights = False
    if "weights" in data:
        w = data["weights"]
        if isinstance(w, str) and w.strip().lower() == "optimal":
            optimal_weights = True
        elif isinstance(w, list):
            kw["weights"] = tuple(_number(ctx, ("weights",), v) for v in w)
            kw.setdefault("n_detections", len(w))
        else:
            raise ctx.fail(("weights",), "weights must be a list of numbers or 'optimal'")
    elif kind is pr.ProtocolKind.WM_MULTI:
        n = kw.get("n_detections", 1)
        kw["weights"] = (1.0 / np.sqrt(n),) * n

    optimal_aw = False
    if "weak_value" in data:
        aw = _weak_value(ctx, ("weak_value",), data["weak_value"])
        if aw == "optimal":
            optimal_aw = True
        else:
            kw["weak_value"] = aw
    if "splitters" in data:
        sp = data["splitters"]
        _check_keys(ctx, sp, SPLITTER_KEYS, ("splitters",))
        missing = [k for k in SPLITTER_KEYS if k not in sp]
        if missing:
            raise ctx.fail(("splitters",), f"missing {missing}")
        try:
            kw["splitters"] = pr.BeamSplitterPair(*(_number(ctx, ("splitters", k), sp[k]) for k in SPLITTER_KEYS))
        except ValidationError as err:
            raise ctx.fail(("splitters",), str(err), ValidationError) from None
    sw = data.get("sweep")
    if "weak_value" not in kw and isinstance(sw, dict) and sw.get("param") == "weak_value":
        # the sweep supplies the weak value; seed the base spec with its first point
        first = sw["values"][0] if isinstance(sw.get("values"), list) and sw["values"] else sw.get("min")
        if first is not None:
            kw["weak_value"] = _weak_value(ctx, ("sweep",), first)
    wm_like = kind in (pr.ProtocolKind.WM_SINGLE, pr.ProtocolKind.WM_MULTI, pr.ProtocolKind.NOON)
    if wm_like and "weak_value" not in kw and "splitters" not in kw:
        optimal_aw = True
    if optimal_weights:
        if kind is not pr.ProtocolKind.WM_MULTI:
            raise ctx.fail(("weights",), "weights: optimal is only meaningful for WM_MULTI", ValidationError)
        n = kw.get("n_detections", 1)
        kw["weights"] = (1.0 / np.sqrt(n),) * n
    if optimal_aw and not wm_like:
        raise ctx.fail(("weak_value",), f"weak_value: optimal is not defined for {kind.value}", ValidationError)

    try:
        spec = pr.ProtocolSpec(**kw)
    except WMSqueezeError as err:
        key = _guess_field(str(err), data)
        raise ctx.fail((key,), str(err), type(err) if not isinstance(err, ParseError) else ParseError) from None

    sweep = None
    if "sweep" in data:
        sw = data["sweep"]
        _check_keys(ctx, sw, SWEEP_KEYS, ("sweep",))
        try:
            param = str(sw.get("param", ""))
            if "values" in sw:
                vals = tuple(_number(ctx, ("sweep", "values"), v) for v in sw["values"])
                sweep = SweepAxis(param, vals, str(sw.get("spacing", "list")))
            else:
                for k in ("min", "max", "points"):
                    if k not in sw:
                        raise ctx.fail(("sweep", k), f"sweep needs '{k}' (or an explicit 'values' list)")
                sweep = SweepAxis.from_range(
                    param,
                    _number(ctx, ("sweep", "min"), sw["min"]),
                    _number(ctx, ("sweep", "max"), sw["max"]),
                    _number(ctx, ("sweep", "points"), sw["points"], int),
                    str(sw.get("spacing", "linear")),
                )
            for v in sweep.values:
                spec_with(spec, sweep.param, v)
        except ParseError:
            raise
        except WMSqueezeError as err:
            raise ctx.fail(("sweep",), str(err), type(err)) from None
        if param == "weak_value":
            optimal_aw = False

    oracle = None
    if "oracle" in data:
        oc = data["oracle"] or {}
        _check_keys(ctx, oc, ORACLE_KEYS, ("oracle",))
        skw = {}
        for key, typ in (("n_atoms", int), ("photon_cutoff", int), ("max_cutoff", int)):
            if oc.get(key) is not None:
                skw[key] = _number(ctx, ("oracle", key), oc[key], typ)
        if "leakage_tol" in oc:
            skw["leakage_tol"] = _number(ctx, ("oracle", "leakage_tol"), oc["leakage_tol"])
        okw = {}
        if "tolerance" in oc:
            okw["tolerance"] = _number(ctx, ("oracle", "tolerance"), oc["tolerance"])
        if "closure_samples" in oc:
            okw["closure_samples"] = _number(ctx, ("oracle", "closure_samples"), oc["closure_samples"], int)
        if "seed" in oc:
            okw["seed"] = _number(ctx, ("oracle", "seed"), oc["seed"], int)
        try:
            oracle = OracleConfig(pr.OracleSettings(**skw), **okw)
        except WMSqueezeError as err:
            raise ctx.fail(("oracle",), str(err), type(err)) from None

    output = OutputConfig()
    if "output" in data:
        oc = data["output"] or {}
        _check_keys(ctx, oc, OUTPUT_KEYS, ("output",))
        fmt = str(oc.get("format", "csv"))
        if fmt != "csv":
            raise ctx.fail(("output", "format"), "only csv output is supported", ValidationError)
        output = OutputConfig(str(oc["dir"]) if oc.get("dir") is not None else None, fmt)

    return RunConfig(spec, sweep, oracle, output, optimal_aw, optimal_weights)


def _guess_field(message, data):
    for key in SPEC_KEYS:
        if key in message and key in data:
            return key
    if "weight" in message.lower() and "weights" in data:
        return "weights"
    return "kind"


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


# --------------------------------------------------------------------------- echo


def _plain(value):
    if isinstance(value, pr.WeakValue):
        v = value.value
        return float(v.real) if v.imag == 0 else f"{v.real!r}{v.imag:+.17g}j"
    if isinstance(value, pr.BeamSplitterPair):
        return value.as_dict()
    if isinstance(value, pr.ProtocolKind):
        return value.value
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def config_to_dict(config):
    """Fully materialized configuration (all defaults echoed), parseable by :func:`parse_config`."""
    spec = config.spec
    out = {f.name: _plain(getattr(spec, f.name)) for f in fields(spec)}
    if config.optimal_weak_value:
        out["weak_value"] = "optimal"
    if config.optimal_weights:
        out["weights"] = "optimal"
    for key in [k for k, v in out.items() if v is None]:
        del out[key]
    if config.sweep is not None:
        out["sweep"] = {"param": config.sweep.param, "values": list(config.sweep.values), "spacing": config.sweep.spacing}
    if config.oracle is not None:
        s = config.oracle.settings
        out["oracle"] = {
            "n_atoms": s.n_atoms,
            "photon_cutoff": s.photon_cutoff,
            "leakage_tol": s.leakage_tol,
            "max_cutoff": s.max_cutoff,
            "tolerance": config.oracle.tolerance,
            "closure_samples": config.oracle.closure_samples,
            "seed": config.oracle.seed,
        }
    out["output"] = {"format": config.output.format}
    if config.output.dir is not None:
        out["output"]["dir"] = config.output.dir
    return out


def tolerances_in_force(config):
    oracle = config.oracle or OracleConfig()
    return {
        "weight_constraint": pr.WEIGHT_TOL,
        "splitter_normalization": pr.SPLITTER_TOL,
        "leakage_tol": oracle.settings.leakage_tol,
        "oracle_relative_tolerance": oracle.tolerance,
        "zero_probability": fo.ZERO_PROBABILITY,
        "singular_overlap": fo.SINGULAR_OVERLAP,
    }
