"""Scenario configuration: one YAML document per scenario.

Every key is checked against :data:`SCHEMA`; unknown keys and badly typed
values are rejected with the dotted key path and the source line. Defaults
are filled in so downstream code never sees a missing key. Environment
variables ``CITYKPI_<SECTION>__<KEY>=<yaml value>`` override file values
before validation, which lets CI jobs tweak a run without editing files.

Run ``python -m citykpi.config`` to print the reference table of keys.
"""
from __future__ import annotations

import copy
import math
import os
from dataclasses import dataclass

import yaml

ENV_PREFIX = "CITYKPI_"


class ConfigError(ValueError):
    def __init__(self, message, path=None, line=None):
        self.path, self.line = path, line
        where = ""
        if path:
            where = f"{path}: "
        if line is not None:
            where = f"line {line}: " + where
        super().__init__(where + message)


# ---------------------------------------------------------------------------
# schema vocabulary

@dataclass(frozen=True)
class Field:
    kind: str  # "int", "float", "str", "bool", "list", "any"
    default: object = None
    doc: str = ""
    optional: bool = False  # accepts null
    choices: tuple = ()

    @property
    def required(self):
        return self.default is _REQUIRED


_REQUIRED = object()


@dataclass(frozen=True)
class Section:
    fields: dict
    doc: str = ""


@dataclass(frozen=True)
class MapOf:
    """Free-form keys, each value checked against ``item``."""

    item: object
    doc: str = ""


@dataclass(frozen=True)
class ListOf:
    item: object
    doc: str = ""


def F(kind, default=None, doc="", optional=False, choices=()):
    return Field(kind, default, doc, optional, tuple(choices))


def R(kind, doc="", choices=()):
    return Field(kind, _REQUIRED, doc, False, tuple(choices))


KPIS = ("Delay", "DropProbability", "Throughput")
FAMILIES = ("LogNormal", "Gamma", "Exponential", "Bernoulli")

PROFILE = Section({
    "packet_rate": R("float", "packets per second per device"),
    "packet_size": R("int", "bytes per packet"),
    "regime": F("str", "Poisson", "arrival process", choices=("Poisson", "PeriodicSync", "PeriodicAsync")),
})

AB_PARAMS = Section({
    "alpha": R("float", "intercept, dB"),
    "beta": R("float", "slope, dB per decade / 10"),
    "sigma": F("float", 0.0, "shadowing standard deviation, dB"),
})

SITE = Section({
    "id": R("str", "cell id"),
    "x": R("float", "site x, m"),
    "y": R("float", "site y, m"),
    "radius": R("float", "coverage radius, m"),
    "features": MapOf(F("float"), "extra surrogate features for this cell"),
})

ENTITY = Section({
    "id": R("str", "entity id"),
    "profile": R("str", "traffic profile name"),
    "route": F("list", None, "waypoints [[x, y, t], ...]; omit when using a template", optional=True),
    "template": F("str", None, "route template name", optional=True),
    "offset": F("float", 0.0, "time shift applied to a template route, s"),
    "active": F("list", None, "active window [t0, t1], s", optional=True),
})

FLEET = Section({
    "prefix": R("str", "entity id prefix; ids are <prefix>-<i>"),
    "profile": R("str", "traffic profile name"),
    "template": R("str", "route template name"),
    "count": R("int", "number of entities"),
    "headway": F("float", 0.0, "departure spacing between consecutive entities, s"),
    "start": F("float", 0.0, "departure time of the first entity, s"),
})

INJECTION = Section({
    "kind": R("str", "injection kind", choices=("CellOutage", "FloodTraffic", "FailureProfile")),
    "target": R("any", "cell id, list of ids, or {area: [x, y, r]}"),
    "span": R("list", "[t0, t1), s"),
    "payload": MapOf(F("any"), "flood: profile, sources; failure: delay/throughput/drop factors"),
})

SCHEMA = Section({
    "seed": F("int", 0, "root seed; every stage seed derives from it"),
    "radio": Section({
        "carrier_frequency": F("float", 28e9, "Hz"),
        "tx_power": F("float", 23.0, "device transmit power, dBm"),
        "tx_antenna_gain": F("float", 0.0, "device antenna gain, dBi"),
        "rx_antenna_gain": F("float", 24.5, "base-station antenna gain, dBi"),
        "tx_height": F("float", 1.5, "device antenna height, m"),
        "rx_height": F("float", 10.0, "base-station antenna height, m"),
        "noise_figure": F("float", 7.0, "receiver noise figure, dB"),
        "bandwidth": F("float", 100e6, "channel bandwidth, Hz"),
    }, "radio link budget"),
    "channel": Section({
        "model": F("str", "CI", "path-loss model", choices=("CI", "AB")),
        "ple_los": F("float", 2.1, "CI path-loss exponent, LOS"),
        "ple_nlos": F("float", 3.4, "CI path-loss exponent, NLOS"),
        "sigma_los": F("float", 3.6, "CI shadowing, LOS, dB"),
        "sigma_nlos": F("float", 9.7, "CI shadowing, NLOS, dB"),
        "d0": F("float", 1.0, "CI reference distance, m"),
        "ab_los": F("any", None, "AB parameters {alpha, beta, sigma}, LOS", optional=True),
        "ab_nlos": F("any", None, "AB parameters {alpha, beta, sigma}, NLOS", optional=True),
        "rice_k": F("float", 9.0, "Rician K factor for LOS fading, dB"),
        "d_los": F("float", 50.0, "LOS probability decay distance, m"),
        "rain_rate": F("float", 0.0, "rain rate, mm/h"),
        "atmospheric_coeff": F("float", 0.0, "atmospheric absorption, dB/km"),
        "penetration_loss": F("float", 0.0, "building penetration loss, dB"),
    }, "propagation"),
    "profiles": MapOf(PROFILE, "traffic profiles by name"),
    "cell": Section({
        "devices": MapOf(F("int"), "device count per profile"),
        "radius": F("float", 200.0, "cell radius, m"),
        "los_fraction": F("float", None, "fixed LOS share; null uses the distance model", optional=True),
        "fixed_distance": F("float", None, "place every device at this ground distance, m", optional=True),
        "min_distance": F("float", 1.0, "minimum ground distance, m"),
        "outage_threshold": F("float", -5.0, "SNR below which a packet is dropped, dB"),
        "delay_budget": F("float", 1.0, "queueing wait after which a packet is dropped, s"),
        "max_spectral_efficiency": F("float", 7.4, "cap on bits/s/Hz"),
    }, "base cell for sweeps and validation"),
    "sweep": Section({
        "axes": MapOf(F("list"), "axis name -> list of values, swept as a full grid"),
        "replications": F("int", 1, "independent runs per grid point"),
        "duration": F("float", 10.0, "simulated seconds per run"),
    }, "detailed-simulator parameter sweep"),
    "fit": Section({
        "families": MapOf(F("str", choices=FAMILIES), "fixed family per KPI"),
        "candidates": MapOf(F("list"), "families to choose from per KPI (lowest mean KS wins)"),
        "min_samples": F("int", 30, "points with fewer samples are skipped"),
    }, "distribution fitting"),
    "train": Section({
        "regressor": F("str", "MultilinearInterp", "regressor", choices=("MultilinearInterp", "PolynomialRidge")),
        "degree": F("int", 1, "polynomial degree (PolynomialRidge)"),
        "ridge": F("float", 1e-8, "ridge penalty (PolynomialRidge)"),
    }, "surrogate training"),
    "city": Section({
        "horizon": F("float", 3600.0, "simulated city time, s"),
        "hysteresis": F("int", 1, "count change that cuts a condition interval"),
        "sites": ListOf(SITE, "cell sites"),
        "templates": MapOf(F("list"), "named routes [[x, y, t], ...]"),
        "entities": ListOf(ENTITY, "individual mobile or static entities"),
        "fleets": ListOf(FLEET, "groups of entities sharing a route template"),
        "injections": ListOf(INJECTION, "what-if perturbations applied to every run"),
        "thresholds": Section({
            "delay_ms": F("float", 100.0, "delay above which a packet violates"),
            "bad_experience_cutoff": F("float", 0.05, "violation share that makes an entity-day bad"),
            "session_s": F("float", 60.0, "user-KPI session window, s"),
            "day_s": F("float", 86400.0, "vertical-KPI day window, s"),
        }, "KPI thresholds"),
    }, "city scenario"),
    "validate": Section({
        "points": ListOf(MapOf(F("float")), "condition points {axis: value}"),
        "duration": F("float", 10.0, "simulated seconds per reference run"),
        "replications": F("int", 1, "reference runs per point"),
        "samples": F("int", 10000, "surrogate draws per point"),
        "tolerance_ks": F("float", 0.05, "KS distance tolerance"),
        "tolerance_mean": F("float", 0.10, "mean-error tolerance"),
    }, "surrogate validation"),
})


# ---------------------------------------------------------------------------
# loading

def _line_index(node, path=(), out=None):
    """Map key paths to 1-based source lines."""
    out = {} if out is None else out
    out.setdefault(path, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = path + (str(k.value),)
            out[key] = k.start_mark.line + 1
            _line_index(v, key, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_index(v, path + (i,), out)
    return out


def _dotted(path):
    s = ""
    for p in path:
        s += f"[{p}]" if isinstance(p, int) else (f".{p}" if s else str(p))
    return s


class _Checker:
    def __init__(self, lines):
        self.lines = lines

    def fail(self, msg, path):
        line = None
        for n in range(len(path), -1, -1):
            if tuple(path[:n]) in self.lines:
                line = self.lines[tuple(path[:n])]
                break
        raise ConfigError(msg, _dotted(path) or "<root>", line)

    def check(self, value, schema, path):
        if isinstance(schema, Section):
            if value is None:
                value = {}
            if not isinstance(value, dict):
                self.fail("expected a mapping", path)
            for key in value:
                if key not in schema.fields:
                    self.fail(f"unknown key {key!r}", path + (key,))
            out = {}
            for key, sub in schema.fields.items():
                if key in value:
                    out[key] = self.check(value[key], sub, path + (key,))
                elif isinstance(sub, Field):
                    if sub.required:
                        self.fail(f"missing required key {key!r}", path)
                    out[key] = copy.deepcopy(sub.default)
                else:
                    out[key] = self.check(None, sub, path + (key,))
            return out
        if isinstance(schema, MapOf):
            if value is None:
                return {}
            if not isinstance(value, dict):
                self.fail("expected a mapping", path)
            return {str(k): self.check(v, schema.item, path + (str(k),)) for k, v in value.items()}
        if isinstance(schema, ListOf):
            if value is None:
                return []
            if not isinstance(value, list):
                self.fail("expected a list", path)
            return [self.check(v, schema.item, path + (i,)) for i, v in enumerate(value)]
        return self.leaf(value, schema, path)

    def leaf(self, value, f: Field, path):
        if value is None:
            if f.optional:
                return None
            self.fail("value may not be null", path)
        kind = f.kind
        if kind == "float":
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                self.fail(f"expected a number, got {value!r}", path)
            value = float(value)
            if math.isnan(value):
                self.fail("NaN is not allowed", path)
        elif kind == "int":
            if isinstance(value, bool) or not isinstance(value, int):
                self.fail(f"expected an integer, got {value!r}", path)
        elif kind == "str":
            if not isinstance(value, str):
                self.fail(f"expected a string, got {value!r}", path)
        elif kind == "bool":
            if not isinstance(value, bool):
                self.fail(f"expected true/false, got {value!r}", path)
        elif kind == "list":
            if not isinstance(value, list):
                self.fail(f"expected a list, got {value!r}", path)
        if f.choices and value not in f.choices:
            self.fail(f"{value!r} is not one of {list(f.choices)}", path)
        return value


def env_overrides(environ=None):
    """``{key path: value}`` from ``CITYKPI_*`` variables, sorted by name."""
    environ = os.environ if environ is None else environ
    out = {}
    for name in sorted(environ):
        if not name.startswith(ENV_PREFIX):
            continue
        path = tuple(p.lower() for p in name[len(ENV_PREFIX):].split("__"))
        try:
            out[path] = yaml.safe_load(environ[name])
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse value of {name}: {exc}") from None
    return out


def _apply(doc, overrides):
    for path, value in overrides.items():
        node = doc
        for key in path[:-1]:
            nxt = node.get(key)
            if not isinstance(nxt, dict):
                nxt = node[key] = {}
            node = nxt
        node[path[-1]] = value
    return doc


def parse(text, overrides=None) -> dict:
    """Validate a YAML document and fill defaults."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}", None, line) from None
    lines = _line_index(node) if node is not None else {}
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("top level must be a mapping", "<root>", 1)
    _apply(doc, overrides or {})
    return _Checker(lines).check(doc, SCHEMA, ())


def load(path, environ=None):
    """``(config dict, raw bytes, applied overrides)`` for ``path``."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    overrides = env_overrides(environ)
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError:
        raise ConfigError(f"{path} is not UTF-8 text") from None
    return parse(text, overrides), raw, overrides


# ---------------------------------------------------------------------------
# object builders

def _as_config_error(fn):
    """Domain checks in the model constructors surface as config errors."""
    import functools

    @functools.wraps(fn)
    def wrapper(*args, **kw):
        try:
            return fn(*args, **kw)
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc), fn.__name__.replace("_", " ")) from None
    return wrapper


@_as_config_error
def radio_config(cfg):
    from .channel import RadioConfig

    return RadioConfig(**cfg["radio"])


@_as_config_error
def channel_config(cfg):
    from .cellsim import ChannelConfig
    from .channel import AbModelParams, ExtraLossConfig

    c = dict(cfg["channel"])
    extra = ExtraLossConfig(c.pop("rain_rate"), c.pop("atmospheric_coeff"), c.pop("penetration_loss"),
                            cfg["radio"]["carrier_frequency"])
    for key in ("ab_los", "ab_nlos"):
        if c[key] is not None:
            c[key] = AbModelParams(**_Checker({}).check(c[key], AB_PARAMS, ("channel", key)))
    return ChannelConfig(extra=extra, **c)


@_as_config_error
def traffic_profiles(cfg):
    from .traffic import TrafficProfile

    return {name: TrafficProfile(name, p["packet_rate"], p["packet_size"], p["regime"])
            for name, p in sorted(cfg["profiles"].items())}


@_as_config_error
def base_conditions(cfg):
    from .cellsim import CellConditions

    c = cfg["cell"]
    profiles = traffic_profiles(cfg)
    if not profiles:
        raise ConfigError("at least one traffic profile is needed", "profiles")
    devices = {name: c["devices"].get(name, 0) for name in profiles}
    unknown = set(c["devices"]) - set(profiles)
    if unknown:
        raise ConfigError(f"devices for undefined profiles {sorted(unknown)}", "cell.devices")
    return CellConditions(
        devices, profiles, c["radius"], radio_config(cfg), channel_config(cfg), c["los_fraction"],
        c["fixed_distance"], c["min_distance"], c["outage_threshold"], c["delay_budget"],
        c["max_spectral_efficiency"],
    )


@_as_config_error
def sweep_grid(cfg):
    from .cellsim import SweepGrid

    s = cfg["sweep"]
    if not s["axes"]:
        raise ConfigError("sweep needs at least one axis", "sweep.axes")
    return SweepGrid(base_conditions(cfg), tuple(s["axes"].items()), s["replications"], cfg["seed"])


def _route(points, where, offset=0.0):
    try:
        return tuple((float(x), float(y), float(t) + offset) for x, y, t in points)
    except (TypeError, ValueError):
        raise ConfigError("route waypoints must be [x, y, t] triples", where) from None


@_as_config_error
def entities(cfg):
    from .urban import MobileEntity

    city = cfg["city"]
    out = []
    for i, e in enumerate(city["entities"]):
        where = f"city.entities[{i}]"
        if (e["route"] is None) == (e["template"] is None):
            raise ConfigError("give exactly one of route or template", where)
        if e["template"] is not None:
            if e["template"] not in city["templates"]:
                raise ConfigError(f"unknown template {e['template']!r}", where)
            route = _route(city["templates"][e["template"]], where, e["offset"])
        else:
            route = _route(e["route"], where, e["offset"])
        window = tuple(e["active"]) if e["active"] is not None else (-math.inf, math.inf)
        out.append(MobileEntity(e["id"], e["profile"], route, window))
    for i, f in enumerate(city["fleets"]):
        where = f"city.fleets[{i}]"
        if f["template"] not in city["templates"]:
            raise ConfigError(f"unknown template {f['template']!r}", where)
        for n in range(f["count"]):
            shift = f["start"] + n * f["headway"]
            route = _route(city["templates"][f["template"]], where, shift)
            out.append(MobileEntity(f"{f['prefix']}-{n}", f["profile"], route))
    ids = [e.entity_id for e in out]
    if len(set(ids)) != len(ids):
        raise ConfigError("entity ids are not unique", "city.entities")
    return out


@_as_config_error
def injections(items, where="city.injections"):
    from .orchestrator import Injection

    out = []
    for i, d in enumerate(items):
        d = _Checker({}).check(d, INJECTION, (where, i))
        target = d["target"]
        if isinstance(target, list):
            target = tuple(target)
        out.append(Injection(d["kind"], target, tuple(d["span"]), d["payload"]))
    return out


@_as_config_error
def scenario(cfg):
    from .orchestrator import Scenario, Thresholds
    from .urban import CellSite

    city = cfg["city"]
    if not city["sites"]:
        raise ConfigError("a city needs at least one site", "city.sites")
    radio = radio_config(cfg)
    sites = [CellSite(s["id"], (s["x"], s["y"]), s["radius"], radio) for s in city["sites"]]
    ids = [s.cell_id for s in sites]
    if len(set(ids)) != len(ids):
        raise ConfigError("cell ids are not unique", "city.sites")
    features = {s["id"]: dict(s["features"]) for s in city["sites"] if s["features"]}
    return Scenario(sites, entities(cfg), traffic_profiles(cfg), city["horizon"], cfg["seed"],
                    injections(city["injections"]), Thresholds(**city["thresholds"]), features)


def load_overlay(path):
    """Injection list from a YAML overlay: a list, or ``{injections: [...]}``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        doc = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: YAML syntax error: {exc}") from None
    if isinstance(doc, dict):
        unknown = set(doc) - {"injections"}
        if unknown:
            raise ConfigError(f"unknown key {sorted(unknown)[0]!r}", "overlay")
        doc = doc.get("injections")
    if doc is None:
        doc = []
    if not isinstance(doc, list):
        raise ConfigError("overlay must be a list of injections", "overlay")
    return injections(doc, "overlay"), raw


# ---------------------------------------------------------------------------
# reference page

def _kind(f):
    if isinstance(f, Field):
        k = f.kind + (" | null" if f.optional else "")
        return k + (f" ({', '.join(f.choices)})" if f.choices else "")
    if isinstance(f, MapOf):
        return "map"
    if isinstance(f, ListOf):
        return "list"
    return "section"


def _rows(schema, prefix):
    if isinstance(schema, Section):
        for key, sub in schema.fields.items():
            path = f"{prefix}.{key}" if prefix else key
            yield from _entry(path, sub)
    elif isinstance(schema, (MapOf, ListOf)):
        marker = "<name>" if isinstance(schema, MapOf) else "[]"
        yield from _rows(schema.item, f"{prefix}.{marker}" if isinstance(schema, MapOf) else prefix + marker)


def _entry(path, sub):
    if isinstance(sub, Field):
        default = "required" if sub.required else ("`null`" if sub.default is None else f"`{sub.default!r}`")
        yield path, _kind(sub), default, sub.doc
    else:
        yield path, _kind(sub), "", sub.doc
        yield from _rows(sub, path)


def reference() -> str:
    lines = [
        "# Configuration reference",
        "",
        "Generated by `python -m citykpi.config`. Every key is optional unless marked required.",
        f"Environment variables `{ENV_PREFIX}<SECTION>__<KEY>` override file values"
        f" (for example `{ENV_PREFIX}SWEEP__REPLICATIONS=4`).",
        "",
        "| key | type | default | meaning |",
        "|---|---|---|---|",
    ]
    for path, kind, default, doc in _rows(SCHEMA, ""):
        lines.append(f"| `{path}` | {kind} | {default} | {doc} |")
    return "\n".join(lines) + "\n"


if __name__ == "__main__":
    print(reference(), end="")
