"""Command line interface.

::

    samsara run --config run.ini [--out DIR] [--chains C] [--seed S]
    samsara bench KIND [--scale desk|paper] [--seed S] [--noise on|off] [--n-gen N] [--chains C] --out DIR
    samsara post DIR [--burn-in F] [--stride K] [--bins B]
    samsara diag --stores D1 D2 ... [--species NAME] [--refs R] [--seed S] [--burn-in F] [--stride K] [--out FILE]
    samsara export DIR --csv [--out DIR2] [--catalog]

Failures print one JSON object ``{"error": ..., "message": ...}`` on stderr;
usage and configuration errors exit with status 2, runtime failures with 1.
``SAMSARA_LOG`` (``DEBUG``, ``INFO``, ``WARNING``, ...) sets the log level.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

__all__ = ["main"]

log = logging.getLogger("samsara")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fail(kind, message, code):
    print(json.dumps({"error": kind, "message": str(message)}), file=sys.stderr)
    return code


def _chain_dirs(out, n_chains):
    if n_chains == 1:
        return [out]
    return [os.path.join(out, f"chain_{k}") for k in range(n_chains)]


def _run_chains(specs, target, ccfg, out, n_chains, ini_text=None, extra_echo=None):
    from dataclasses import replace

    from .engine import run

    dirs = _chain_dirs(out, n_chains)
    for k, d in enumerate(dirs):
        cfg_k = replace(ccfg, seed=ccfg.seed + k)
        log.info("chain %d: %d generations, seed %d", k, cfg_k.n_gen, cfg_k.seed)
        store = run(cfg_k, target, specs)
        if ini_text is not None:
            store.config_echo["ini"] = ini_text
        if extra_echo:
            store.config_echo.update(extra_echo)
        store.save(d)
        if ini_text is not None:
            with open(os.path.join(d, "config.ini"), "w") as fh:
                fh.write(ini_text)
    return dirs


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_run(args):
    from dataclasses import replace

    from .config import build_problem, parse_config

    if not os.path.isfile(args.config):
        raise UsageError(f"config file not found: {args.config}")
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg.run.seed = args.seed
    out = args.out or cfg.run.output
    if not out:
        raise UsageError("no output directory: pass --out or set [run] output")
    specs, target, ccfg, _ = build_problem(cfg, os.path.dirname(os.path.abspath(args.config)))
    ccfg = replace(ccfg, seed=cfg.run.seed)
    dirs = _run_chains(specs, target, ccfg, out, args.chains, cfg.to_ini())
    print(json.dumps({"stores": dirs}))
    return 0


def cmd_bench(args):
    from dataclasses import replace

    from .benchmarks import generate_benchmark
    from .engine import ChainConfig

    b = generate_benchmark(args.kind, args.scale, args.seed, args.noise == "on")
    b.save(args.out)
    ccfg = ChainConfig(n_gen=args.n_gen if args.n_gen is not None else b.n_gen, seed=args.seed,
                       rates=b.rates, initial_counts=b.initial_counts, log_every=args.log_every)
    echo = {"benchmark": {"kind": b.kind, "scale": b.scale, "seed": b.seed, "noise": args.noise == "on"}}
    dirs = _run_chains(b.specs, b.target, replace(ccfg), os.path.join(args.out, "store"), args.chains,
                       extra_echo=echo)
    print(json.dumps({"stores": dirs, "truth": os.path.join(args.out, "truth.json")}))
    return 0


def _benchmark_of(store_dir, store):
    """The benchmark that produced a store, rebuilt from its echo (or ``None``)."""
    from .benchmarks import generate_benchmark

    info = store.config_echo.get("benchmark")
    if not info:
        return None
    return generate_benchmark(info["kind"], info["scale"], info["seed"], info.get("noise", False))


def cmd_post(args):
    from .postprocess import (
        WeightedSamples,
        export_for_catalog,
        parameter_distribution,
        signal_band,
        summarize,
        write_band_csv,
        write_catalog_json,
        write_histogram_csv,
        write_number_pmf_csv,
        number_posterior,
    )
    from .storage import open_store

    store = open_store(args.dir)
    out = args.out or args.dir
    os.makedirs(out, exist_ok=True)
    samples = WeightedSamples.from_store(store, args.burn_in, args.stride)
    summary = summarize(store, burn_in=args.burn_in, stride=int(samples.generations[1] - samples.generations[0])
                        if len(samples) > 1 else 1)
    files = []
    bench = _benchmark_of(args.dir, store)
    for a, name in enumerate(store.species_names):
        path = os.path.join(out, f"number_pmf_{name}.csv")
        write_number_pmf_csv(path, number_posterior(samples, a))
        files.append(path)
        for j, pname in enumerate(store.param_names[a]):
            path = os.path.join(out, f"hist_{name}_{pname}.csv")
            write_histogram_csv(path, parameter_distribution(samples, a, j, bins=args.bins))
            files.append(path)
        if args.catalog:
            path = os.path.join(out, f"catalog_{name}.json")
            write_catalog_json(path, export_for_catalog(samples, a), store.param_names[a])
            files.append(path)
        if bench is not None and bench.dataset.kind == "timeseries":
            template = bench.specs[a].template
            if template is not None:
                band = signal_band(samples, a, bench.dataset.times, template=template)
                path = os.path.join(out, f"band_{name}.csv")
                write_band_csv(path, bench.dataset.times, band)
                files.append(path)
    summary["files"] = files
    path = os.path.join(out, "summary.json")
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2)
    print(json.dumps({"summary": path, "files": files}))
    return 0


def cmd_diag(args):
    from .diagnostics import chain_scalars, mc_test_w, pairwise_u, psrf_per_ref
    from .storage import open_store

    if len(args.stores) < 2:
        raise UsageError("diag needs at least two stores")
    stores = [open_store(d) for d in args.stores]
    names = stores[0].species_names
    if any(s.species_names != names for s in stores):
        raise UsageError("stores declare different species")
    species = [args.species] if args.species else names
    result = {"stores": args.stores, "species": {}}
    for name in species:
        if name not in names:
            raise UsageError(f"unknown species {name!r}; have {', '.join(names)}")
        a = names.index(name)
        sc = chain_scalars(stores, a, args.refs, args.seed, args.burn_in, args.stride)
        r = psrf_per_ref(sc.x)
        result["species"][name] = {
            "n_samples": int(sc.x.shape[2]),
            "psrf_max": float(r.max()),
            "psrf_per_ref": r.tolist(),
            "u": pairwise_u(sc.x, args.p),
            "w": mc_test_w(sc.x, args.p).tolist(),
        }
    text = json.dumps(result, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    print(text)
    return 0


def cmd_export(args):
    from .postprocess import WeightedSamples, export_for_catalog, write_catalog_json
    from .storage import open_store

    if not args.csv and not args.catalog:
        raise UsageError("export needs --csv and/or --catalog")
    store = open_store(args.dir)
    out = args.out or args.dir
    os.makedirs(out, exist_ok=True)
    files = []
    if args.csv:
        path = os.path.join(out, "generations.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["generation", "tau", "log_target", "event"] + [f"n_{n}" for n in store.species_names])
            counts = store.counts()
            for g in range(store.n_gen + 1):
                w.writerow([g, repr(float(store.tau[g])), repr(float(store.log_target[g])), int(store.events[g])]
                           + counts[g].tolist())
        files.append(path)
        for a, name in enumerate(store.species_names):
            path = os.path.join(out, f"individuals_{name}.csv")
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["generation"] + list(store.param_names[a]))
                for g, vals in enumerate(store.iter_populations(a, np.arange(store.n_gen + 1))):
                    for theta in vals:
                        w.writerow([g] + [repr(float(v)) for v in theta])
            files.append(path)
    if args.catalog:
        samples = WeightedSamples.from_store(store, args.burn_in, 1)
        for a, name in enumerate(store.species_names):
            path = os.path.join(out, f"catalog_{name}.json")
            write_catalog_json(path, export_for_catalog(samples, a), store.param_names[a])
            files.append(path)
    print(json.dumps({"files": files}))
    return 0


# ---------------------------------------------------------------------------


def _build_parser():
    p = _Parser(prog="samsara", description="Birth-death-mutation MCMC for variable-size populations.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    r = sub.add_parser("run", help="run chains from an INI config")
    r.add_argument("--config", required=True)
    r.add_argument("--out")
    r.add_argument("--chains", type=int, default=1)
    r.add_argument("--seed", type=int)
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", help="generate a benchmark problem and run it")
    b.add_argument("kind", choices=["analytic", "sine_lor", "gmm"])
    b.add_argument("--scale", choices=["desk", "paper"], default="desk")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--noise", choices=["on", "off"], default="off")
    b.add_argument("--n-gen", type=int, dest="n_gen")
    b.add_argument("--chains", type=int, default=1)
    b.add_argument("--log-every", type=int, default=0, dest="log_every")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bench)

    q = sub.add_parser("post", help="summaries of a finished chain")
    q.add_argument("dir")
    q.add_argument("--out")
    q.add_argument("--burn-in", type=float, default=0.1, dest="burn_in")
    q.add_argument("--stride", type=int)
    q.add_argument("--bins", type=int, default=50)
    q.add_argument("--catalog", action="store_true")
    q.set_defaults(func=cmd_post)

    d = sub.add_parser("diag", help="multi-chain convergence diagnostics")
    d.add_argument("--stores", nargs="+", required=True)
    d.add_argument("--species")
    d.add_argument("--refs", type=int, default=100)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--burn-in", type=float, default=0.1, dest="burn_in")
    d.add_argument("--stride", type=int)
    d.add_argument("--p", type=float, default=1.0)
    d.add_argument("--out")
    d.set_defaults(func=cmd_diag)

    e = sub.add_parser("export", help="convert a store to CSV for plotting")
    e.add_argument("dir")
    e.add_argument("--csv", action="store_true")
    e.add_argument("--catalog", action="store_true")
    e.add_argument("--burn-in", type=float, default=0.1, dest="burn_in")
    e.add_argument("--out")
    e.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    from .config import ConfigError

    level = os.environ.get("SAMSARA_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required: run, bench, post, diag or export")
        if getattr(args, "chains", 1) < 1:
            raise UsageError("--chains must be at least 1")
        return args.func(args)
    except UsageError as exc:
        return _fail("usage", exc, 2)
    except ConfigError as exc:
        print(json.dumps({"error": "config", "message": str(exc), "errors": exc.errors}), file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every failure becomes a JSON error object
        log.debug("failure", exc_info=True)
        return _fail(type(exc).__name__, exc, 1)


if __name__ == "__main__":
    sys.exit(main())
