"""INI run configuration.

Grammar (all keys optional unless noted)::

    [run]
    n_gen = 100000            ; required, integer >= 0
    seed = 1
    output = out              ; overridden by --out
    storage = auto            ; auto | indexed | dense
    scheduling = poisson      ; poisson | gibbs_cycle
    sample_dwell = false
    log_every = 0

    [target]
    kind = analytic           ; analytic | timeseries | gmm | benchmark
    nbar = 5                  ; analytic
    data = data.csv           ; timeseries (t,value rows) and gmm (one datum per row)
    noise_variance = 1e-45    ; timeseries
    benchmark = sine_lor      ; benchmark: analytic | sine_lor | gmm
    scale = desk              ; benchmark
    bench_seed = 0            ; benchmark
    noise = off               ; benchmark

    [species.<name>]          ; one per species, in order; not used by kind = benchmark
    params = x, y             ; required
    bounds = (-5, 4), (-8, 4) ; one (low, high) or "none" per parameter
    prior = uniform-box       ; uniform-box | gmm-conjugate
    number_prior = improper   ; improper | poisson:<mean>
    template = none           ; none | sine | lorentzian
    z_factor = unit           ; unit | gmm
    birth = prior             ; prior | niw_beta
    mutation = gaussian       ; gaussian | fisher | mitosis | prior | none
    sigma = 0.5, 0.3          ; gaussian widths
    scales = 1                ; gaussian scale mixture
    xi = 0.01, 0.01           ; mitosis strengths
    keep_prob = 0             ; mitosis
    rates = fixed_birth:1     ; fixed_birth:<R_b> | varying
    mutation_sampler = mh     ; mh | gibbs_gmm
    initial_count = 0
    kappa = 0.2               ; gmm-conjugate
    nu = 3                    ; gmm-conjugate

    [diagnostics]
    n_refs = 100
    p_norm = 1
    burn_in = 0.1
    max_psrf_deviation = 0.003

Every problem found is reported at once in a :class:`ConfigError`.
"""

from __future__ import annotations

import configparser
import io
import math
import re
from dataclasses import dataclass, field, fields

__all__ = ["ConfigError", "RunConfig", "RunSection", "TargetSection", "SpeciesSection",
           "DiagnosticsSection", "parse_config", "parse_config_text"]

SECTIONS = ("run", "target", "species.<name>", "diagnostics")


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(eq=True)
class RunSection:
    n_gen: int = 0
    seed: int = 0
    output: str = ""
    storage: str = "auto"
    scheduling: str = "poisson"
    sample_dwell: bool = False
    log_every: int = 0


@dataclass(eq=True)
class TargetSection:
    kind: str = "analytic"
    nbar: float = 5.0
    data: str = ""
    noise_variance: float = 0.0
    benchmark: str = ""
    scale: str = "desk"
    bench_seed: int = 0
    noise: bool = False


@dataclass(eq=True)
class SpeciesSection:
    name: str = ""
    params: tuple = ()
    bounds: tuple = ()
    prior: str = "uniform-box"
    number_prior: str = "improper"
    template: str = "none"
    z_factor: str = "unit"
    birth: str = "prior"
    mutation: str = "gaussian"
    sigma: tuple = ()
    scales: tuple = (1.0,)
    xi: tuple = ()
    keep_prob: float = 0.0
    rates: str = "fixed_birth:1.0"
    mutation_sampler: str = "mh"
    initial_count: int = 0
    kappa: float = 0.2
    nu: float = 3.0


@dataclass(eq=True)
class DiagnosticsSection:
    n_refs: int = 100
    p_norm: float = 1.0
    burn_in: float = 0.1
    max_psrf_deviation: float = 0.003


@dataclass(eq=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    target: TargetSection = field(default_factory=TargetSection)
    species: list = field(default_factory=list)
    diagnostics: DiagnosticsSection = field(default_factory=DiagnosticsSection)

    def to_ini(self) -> str:
        """Serialize back to INI text that re-parses to an equal config."""
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        # empty strings mean "unset" and are left out
        cp["run"] = {f.name: _fmt(getattr(self.run, f.name)) for f in fields(RunSection) if getattr(self.run, f.name) != ""}
        cp["target"] = {f.name: _fmt(getattr(self.target, f.name)) for f in fields(TargetSection)
                        if getattr(self.target, f.name) != ""}
        for sp in self.species:
            cp[f"species.{sp.name}"] = {
                f.name: _fmt_species(f.name, getattr(sp, f.name)) for f in fields(SpeciesSection) if f.name != "name"
            }
        cp["diagnostics"] = {f.name: _fmt(getattr(self.diagnostics, f.name)) for f in fields(DiagnosticsSection)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


def _fmt_species(name, v):
    if name == "bounds":
        return ", ".join("none" if b is None else f"({b[0]!r}, {b[1]!r})" for b in v)
    if name == "params":
        return ", ".join(v)
    return _fmt(v)


# ---------------------------------------------------------------------------
# strict field parsers
# ---------------------------------------------------------------------------


def _int(text):
    t = text.strip()
    if not re.fullmatch(r"[+-]?\d+", t):
        raise ValueError(f"expected an integer, got {text!r}")
    return int(t)


def _float(text):
    v = float(text.strip())
    if not math.isfinite(v):
        raise ValueError(f"expected a finite number, got {text!r}")
    return v


def _bool(text):
    t = text.strip().lower()
    if t in ("true", "yes", "on", "1"):
        return True
    if t in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _floats(text):
    return tuple(_float(x) for x in text.split(",") if x.strip())


def _names(text):
    out = tuple(x.strip() for x in text.split(",") if x.strip())
    for n in out:
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", n):
            raise ValueError(f"invalid parameter name {n!r}")
    return out


def _bounds(text):
    out = []
    pos = 0
    text = text.strip()
    pattern = re.compile(r"\s*(?:\(\s*([^,()]+)\s*,\s*([^,()]+)\s*\)|(none))\s*(?:,|$)", re.IGNORECASE)
    while pos < len(text):
        m = pattern.match(text, pos)
        if not m or m.end() == pos:
            raise ValueError(f"cannot parse bounds near {text[pos:]!r}")
        if m.group(3):
            out.append(None)
        else:
            lo, hi = _float(m.group(1)), _float(m.group(2))
            if not lo < hi:
                raise ValueError(f"bound ({lo}, {hi}) needs low < high")
            out.append((lo, hi))
        pos = m.end()
    return tuple(out)


def _choice(*options):
    def parse(text):
        t = text.strip()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return t
    return parse


def _rates(text):
    from .rates import RatePrescription

    return str(RatePrescription.parse(text))


def _number_prior(text):
    t = text.strip()
    if t == "improper":
        return t
    if t.startswith("poisson:"):
        mean = _float(t.split(":", 1)[1])
        if not mean > 0:
            raise ValueError("poisson mean must be positive")
        return f"poisson:{mean!r}"
    raise ValueError(f"expected improper or poisson:<mean>, got {text!r}")


RUN_KEYS = {
    "n_gen": _int, "seed": _int, "output": str.strip, "storage": _choice("auto", "indexed", "dense"),
    "scheduling": _choice("poisson", "gibbs_cycle"), "sample_dwell": _bool, "log_every": _int,
}
TARGET_KEYS = {
    "kind": _choice("analytic", "timeseries", "gmm", "benchmark"), "nbar": _float, "data": str.strip,
    "noise_variance": _float, "benchmark": _choice("analytic", "sine_lor", "gmm"),
    "scale": _choice("paper", "desk"), "bench_seed": _int, "noise": _bool,
}
SPECIES_KEYS = {
    "params": _names, "bounds": _bounds, "prior": _choice("uniform-box", "gmm-conjugate"),
    "number_prior": _number_prior, "template": _choice("none", "sine", "lorentzian"),
    "z_factor": _choice("unit", "gmm"), "birth": _choice("prior", "niw_beta"),
    "mutation": _choice("gaussian", "fisher", "mitosis", "prior", "none"), "sigma": _floats, "scales": _floats,
    "xi": _floats, "keep_prob": _float, "rates": _rates, "mutation_sampler": _choice("mh", "gibbs_gmm"),
    "initial_count": _int, "kappa": _float, "nu": _float,
}
DIAG_KEYS = {"n_refs": _int, "p_norm": _float, "burn_in": _float, "max_psrf_deviation": _float}


def _fill(obj, section, keys, label, errors):
    for key, raw in section.items():
        if key not in keys:
            errors.append(f"[{label}] unknown key {key!r}; valid keys: {', '.join(sorted(keys))}")
            continue
        try:
            setattr(obj, key, keys[key](raw))
        except ValueError as exc:
            errors.append(f"[{label}] {key}: {exc}")


def parse_config_text(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"malformed INI: {exc}"]) from exc
    errors: list[str] = []
    cfg = RunConfig()
    for name in cp.sections():
        sec = cp[name]
        if name == "run":
            _fill(cfg.run, sec, RUN_KEYS, name, errors)
        elif name == "target":
            _fill(cfg.target, sec, TARGET_KEYS, name, errors)
        elif name == "diagnostics":
            _fill(cfg.diagnostics, sec, DIAG_KEYS, name, errors)
        elif name.startswith("species."):
            sp = SpeciesSection(name=name.split(".", 1)[1])
            if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", sp.name):
                errors.append(f"[{name}] invalid species name")
            _fill(sp, sec, SPECIES_KEYS, name, errors)
            cfg.species.append(sp)
        else:
            errors.append(f"unknown section [{name}]; valid sections: {', '.join(SECTIONS)}")
    _validate(cfg, cp, errors)
    if errors:
        raise ConfigError(errors)
    return cfg


def _validate(cfg: RunConfig, cp, errors):
    if "run" not in cp or "n_gen" not in cp["run"]:
        errors.append("[run] n_gen is required")
    if cfg.run.n_gen < 0:
        errors.append("[run] n_gen: must be >= 0")
    if cfg.run.log_every < 0:
        errors.append("[run] log_every: must be >= 0")
    t = cfg.target
    if t.kind == "analytic" and not t.nbar > 0:
        errors.append("[target] nbar: must be positive")
    if t.kind in ("timeseries", "gmm") and not t.data:
        errors.append(f"[target] data: required for kind = {t.kind}")
    if t.kind == "timeseries" and not t.noise_variance > 0:
        errors.append("[target] noise_variance: must be positive for timeseries")
    if t.kind == "benchmark":
        if not t.benchmark:
            errors.append("[target] benchmark: required for kind = benchmark")
    elif not cfg.species:
        errors.append("at least one [species.<name>] section is required")
    names = [s.name for s in cfg.species]
    if len(set(names)) != len(names):
        errors.append("species names must be unique")
    for sp in cfg.species:
        label = f"species.{sp.name}"
        if not sp.params:
            errors.append(f"[{label}] params: required")
            continue
        if sp.prior == "uniform-box" and len(sp.bounds) != len(sp.params):
            errors.append(f"[{label}] bounds: need {len(sp.params)} entries, got {len(sp.bounds)}")
        if sp.mutation == "gaussian" and sp.mutation_sampler == "mh" and len(sp.sigma) != len(sp.params):
            errors.append(f"[{label}] sigma: need {len(sp.params)} positive widths")
        if any(not s > 0 for s in sp.sigma):
            errors.append(f"[{label}] sigma: widths must be positive")
        if not sp.scales or any(not s > 0 for s in sp.scales):
            errors.append(f"[{label}] scales: must be positive")
        if sp.mutation == "fisher" and (cfg.target.kind != "timeseries" or sp.template == "none"):
            errors.append(f"[{label}] mutation = fisher needs a template and target kind = timeseries")
        if sp.mutation == "mitosis" and len(sp.xi) != len(sp.params):
            errors.append(f"[{label}] xi: need {len(sp.params)} entries")
        if not 0.0 <= sp.keep_prob <= 1.0:
            errors.append(f"[{label}] keep_prob: must lie in [0, 1]")
        if sp.initial_count < 0:
            errors.append(f"[{label}] initial_count: must be >= 0")
        if sp.prior == "gmm-conjugate":
            if sp.z_factor != "gmm" or sp.birth != "niw_beta":
                errors.append(f"[{label}] gmm-conjugate prior needs z_factor = gmm and birth = niw_beta")
            if tuple(sp.params[:1]) != ("weight",):
                errors.append(f"[{label}] params: gmm species start with 'weight'")
            if cfg.target.kind != "gmm":
                errors.append(f"[{label}] gmm-conjugate prior needs target kind = gmm")
        if sp.mutation_sampler == "gibbs_gmm" and sp.prior != "gmm-conjugate":
            errors.append(f"[{label}] mutation_sampler = gibbs_gmm needs the gmm-conjugate prior")
    d = cfg.diagnostics
    if d.n_refs < 1:
        errors.append("[diagnostics] n_refs: must be >= 1")
    if not d.p_norm >= 1:
        errors.append("[diagnostics] p_norm: must be >= 1")
    if not 0.0 <= d.burn_in < 1.0:
        errors.append("[diagnostics] burn_in: must lie in [0, 1)")


def parse_config(path) -> RunConfig:
    """Parse and validate the INI file at ``path``."""
    with open(path) as fh:
        return parse_config_text(fh.read())


# ---------------------------------------------------------------------------
# building run objects
# ---------------------------------------------------------------------------


def build_problem(cfg: RunConfig, base_dir: str = "."):
    """``(specs, target, ChainConfig, benchmark_or_None)`` for a parsed config."""
    import os

    from .benchmarks import generate_benchmark
    from .engine import ChainConfig
    from .model import GMMConjugatePrior, NumberPrior, SpeciesSpec, UniformBoxPrior
    from .proposals import ProposalConfig, build_proposals
    from .rates import RatePrescription
    from .targets import TEMPLATES, AnalyticTarget, AnalyticTargetConfig, Dataset, GMMTarget, TimeseriesTarget

    r = cfg.run
    t = cfg.target

    def chain_cfg(rates, counts):
        return ChainConfig(n_gen=r.n_gen, seed=r.seed, species_scheduling=r.scheduling, rates=rates,
                           initial_counts=tuple(counts), storage=r.storage, sample_dwell=r.sample_dwell,
                           log_every=r.log_every)

    if t.kind == "benchmark":
        b = generate_benchmark(t.benchmark, t.scale, t.bench_seed, t.noise)
        return b.specs, b.target, chain_cfg(b.rates, b.initial_counts), b

    def path(p):
        return p if os.path.isabs(p) else os.path.join(base_dir, p)

    data = None
    if t.kind == "timeseries":
        data = Dataset.from_csv(path(t.data), "timeseries", t.noise_variance)
    elif t.kind == "gmm":
        data = Dataset.from_csv(path(t.data), "samples")

    specs, rates, counts = [], [], []
    for sp in cfg.species:
        if sp.prior == "gmm-conjugate":
            prior = GMMConjugatePrior.from_data(data.points[:, 0], sp.kappa, sp.nu)
        else:
            prior = UniformBoxPrior(list(sp.bounds))
        if sp.number_prior == "improper":
            nprior = NumberPrior()
        else:
            nprior = NumberPrior("poisson", mean=float(sp.number_prior.split(":")[1]))
        template = None if sp.template == "none" else TEMPLATES[sp.template]
        spec = SpeciesSpec(sp.name, list(sp.params), prior, nprior, sp.z_factor, mutation_sampler=sp.mutation_sampler,
                           template=template)
        mutation = "none" if sp.mutation_sampler == "gibbs_gmm" else sp.mutation
        pc = ProposalConfig(sp.birth, mutation, sp.sigma or None, sp.xi or None, sp.keep_prob, sp.scales)
        spec.proposal = build_proposals(prior, pc, spec.n_par, template, data)
        spec.rates = RatePrescription.parse(sp.rates)
        specs.append(spec)
        rates.append(spec.rates)
        counts.append(sp.initial_count)

    if t.kind == "analytic":
        if len(specs) != 1:
            raise ConfigError(["analytic target takes exactly one species"])
        target = AnalyticTarget(AnalyticTargetConfig(nbar=t.nbar))
    elif t.kind == "timeseries":
        target = TimeseriesTarget(data)
    else:
        target = GMMTarget(data)
    return specs, target, chain_cfg(rates, counts), None
