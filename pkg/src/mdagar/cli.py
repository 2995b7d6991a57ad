"""
Command-line front end: ``simulate``, ``fit``, ``compare-orders`` and ``report``.

Every command writes its outputs plus a ``manifest.json`` into ``--out-dir``.
Exit status is 0 on success, 2 on invalid input and 3 on numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .diagnostics import chain_rhat, diagnostics_report, write_json
from .errors import NumericalError, ValidationError
from .evidence import (
    compare_orderings,
    ordering_label,
    parse_ordering,
    read_evidence_csv,
    write_evidence_csv,
)
from .graph import load_adjacency, write_adjacency
from .model import ModelSpec, load_dataset, write_dataset
from .sampler import concat_samples, run_chains
from .simulate import (
    bivariate_config,
    default_geometry,
    generate,
    load_coordinates,
    three_disease_config,
    write_coordinates,
)

log = logging.getLogger("mdagar")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class RunManifest:
    """Provenance record written next to every command's outputs."""

    def __init__(self, command: str, argv, cfg: RunConfig, seed, inputs=()):
        self.command = command
        self.argv = list(argv)
        self.config_digest = cfg.digest
        self.seed = seed
        self.inputs = {str(Path(p).resolve()): sha256_file(p) for p in inputs if p is not None}
        self.outputs = []
        self.extra = {}
        self._t0 = time.perf_counter()

    def add(self, path) -> Path:
        self.outputs.append(Path(path))
        return Path(path)

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "manifest.json"
        record = {
            "command": self.command,
            "argv": self.argv,
            "config_sha256": self.config_digest,
            "seed": self.seed,
            "inputs": self.inputs,
            "library_version": __version__,
            "wall_clock_seconds": round(time.perf_counter() - self._t0, 3),
            "outputs": {str(p): sha256_file(p) for p in self.outputs},
            **self.extra,
        }
        write_json(record, path)
        return path


def _chain(cfg: RunConfig, seed):
    return cfg.chain if seed is None else replace(cfg.chain, seed=seed)


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_model(args, cfg: RunConfig):
    if not args.data or not args.adjacency:
        raise ValidationError(f"{args.command} needs --data and --adjacency")
    graph = load_adjacency(args.adjacency)
    data = load_dataset(args.data, graph, add_intercept=cfg.data.add_intercept,
                        standardize=cfg.data.standardize)
    return graph, data


# -- commands ----------------------------------------------------------------

def cmd_simulate(args, cfg: RunConfig) -> int:
    sim = cfg.simulate
    seed = sim.seed if args.seed is None else args.seed
    out = _out_dir(args)
    if args.adjacency:
        graph = load_adjacency(args.adjacency)
        if sim.coordinates is None and sim.truth == "exponential":
            raise ValidationError(
                "simulate.coordinates is required with --adjacency and the exponential truth")
        coords = load_coordinates(sim.coordinates, graph) if sim.coordinates else None
    else:
        graph, coords = default_geometry()
    if sim.design == "bivariate":
        gen = bivariate_config(sim.regime, graph, coords, sim.n_replicates, seed, truth=sim.truth)
        order = (0, 1)
    else:
        gen = three_disease_config(graph, coords, sim.n_replicates, seed, truth=sim.truth)
        order = tuple(o - 1 for o in sim.true_order)
    reps = generate(gen, order)
    inputs = [args.config, args.adjacency, sim.coordinates]
    man = RunManifest("simulate", args.argv, cfg, seed, inputs)
    write_adjacency(graph, man.add(out / "adjacency.txt"))
    if coords is not None:
        write_coordinates(graph, coords, man.add(out / "coordinates.csv"))
    width = len(str(len(reps)))
    for r, rep in enumerate(reps, start=1):
        stem = f"replicate_{r:0{width}d}"
        write_dataset(rep.dataset, man.add(out / f"{stem}.csv"))
        truth = {
            "ordering": ordering_label(order),
            "beta": {lab: gen.beta[i] for i, lab in enumerate(rep.dataset.disease_labels)},
            "sigma2": {lab: gen.sigma2[i] for i, lab in enumerate(rep.dataset.disease_labels)},
            "tau_by_position": gen.tau, "rho_by_position": gen.rho,
            "eta0_by_position": gen.eta.eta0, "eta1_by_position": gen.eta.eta1,
            "design": sim.design, "regime": sim.regime if sim.design == "bivariate" else None,
        }
        write_json(truth, man.add(out / f"{stem}.truth.json"))
        with open(man.add(out / f"{stem}.w.csv"), "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(["region"] + list(rep.dataset.disease_labels))
            for j, lab in enumerate(graph.labels):
                wr.writerow([lab] + [repr(float(v)) for v in rep.w[:, j]])
    man.write(out)
    print(f"wrote {len(reps)} replicate dataset(s) to {out}")
    return EXIT_OK


def cmd_fit(args, cfg: RunConfig) -> int:
    graph, data = _load_model(args, cfg)
    ordering = parse_ordering(args.order, data.q) if args.order else tuple(range(data.q))
    spec = ModelSpec(data, graph, cfg.prior, ordering)
    chain = _chain(cfg, args.seed)
    out = _out_dir(args)
    man = RunManifest("fit", args.argv, cfg, chain.seed,
                      [args.config, args.data, args.adjacency])
    parts = run_chains(spec, chain, n_chains=cfg.n_chains, jobs=args.jobs)
    for c, part in enumerate(parts, start=1):
        part.to_csv(man.add(out / f"samples_chain{c}.csv"))
    merged = concat_samples(parts)
    report = diagnostics_report(merged, spec, np.random.default_rng([chain.seed, 1]))
    report["ordering"] = ordering_label(ordering)
    report["disease_labels"] = list(data.disease_labels)
    report["acceptance_rho"] = {f"chain{c}": {f"rho[{ordering[i] + 1}]": float(a)
                                              for i, a in enumerate(p.acceptance)}
                                for c, p in enumerate(parts, start=1)}
    if len(parts) > 1:
        report["rhat"] = chain_rhat(parts)
    write_json(report, man.add(out / "diagnostics.json"))
    man.write(out)
    print(f"ordering {report['ordering']}: WAIC {report['waic']:.2f}, D {report['d']:.2f}")
    return EXIT_OK


def cmd_compare_orders(args, cfg: RunConfig) -> int:
    graph, data = _load_model(args, cfg)
    spec = ModelSpec(data, graph, cfg.prior)
    chain = _chain(cfg, args.seed)
    out = _out_dir(args)
    man = RunManifest("compare-orders", args.argv, cfg, chain.seed,
                      [args.config, args.data, args.adjacency])
    res = compare_orderings(spec, chain, n_chains=cfg.n_chains, bridge=cfg.bridge,
                            jobs=args.jobs)
    write_evidence_csv(res, man.add(out / "evidence.csv"))
    with open(man.add(out / "bma_beta.csv"), "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["disease", "coefficient", "bma_mean"])
        for lab, b in zip(data.disease_labels, res.bma_beta):
            for p, v in enumerate(b, start=1):
                wr.writerow([lab, p, repr(float(v))])
    with open(man.add(out / "bma_w.csv"), "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["region"] + list(data.disease_labels))
        for j, lab in enumerate(graph.labels):
            wr.writerow([lab] + [repr(float(v)) for v in res.bma_w[:, j]])
    failures = {ordering_label(f.ordering): f.error for f in res.fits if f.error}
    man.extra["failed_orderings"] = failures
    man.extra["disease_labels"] = list(data.disease_labels)
    man.write(out)
    best = res.best_ordering
    print(f"{len(res.fits)} orderings, {len(failures)} failed; "
          f"best {ordering_label(best)} with probability {res.posterior.prob.max():.3f}")
    return EXIT_OK


def cmd_report(args, cfg: RunConfig) -> int:
    """Summarize run directories; tabulate order recovery when truths are known."""
    runs = [Path(p) for p in (args.runs or [args.out_dir])]
    rows, recovery = [], {}
    for run in runs:
        mpath = run / "manifest.json"
        if not mpath.exists():
            raise ValidationError(f"{run}: no manifest.json")
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
        if (run / "evidence.csv").exists():
            ev = read_evidence_csv(run / "evidence.csv")
            best = max(ev, key=lambda r: r["posterior_prob"])
            rows.append({"run": str(run), "command": manifest["command"],
                         "best_ordering": ordering_label(best["ordering"]),
                         "posterior_prob": best["posterior_prob"]})
            truth = _truth_for(manifest)
            if truth is not None:
                t = parse_ordering(truth)
                recovery.setdefault(t, []).append(best["ordering"])
        elif (run / "diagnostics.json").exists():
            diag = json.loads((run / "diagnostics.json").read_text(encoding="utf-8"))
            rows.append({"run": str(run), "command": manifest["command"],
                         "ordering": diag.get("ordering"), "waic": diag["waic"],
                         "d": diag["d"]})
        else:
            rows.append({"run": str(run), "command": manifest["command"]})
    out = _out_dir(args)
    summary = {"runs": rows}
    if recovery:
        summary["order_recovery"] = {
            ordering_label(t): {ordering_label(s): sel.count(s) / len(sel) for s in set(sel)}
            for t, sel in sorted(recovery.items())}
    write_json(summary, out / "report.json")
    for r in rows:
        print("  ".join(f"{k}={v}" for k, v in r.items()))
    for t, props in summary.get("order_recovery", {}).items():
        print(f"true {t}: " + ", ".join(f"{s} {p:.2f}" for s, p in sorted(props.items())))
    return EXIT_OK


def _truth_for(manifest):
    for path in manifest.get("inputs", {}):
        p = Path(path)
        cand = p.with_name(p.stem + ".truth.json")
        if p.suffix == ".csv" and cand.exists():
            return json.loads(cand.read_text(encoding="utf-8")).get("ordering")
    return None


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit,
            "compare-orders": cmd_compare_orders, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mdagar", description=__doc__.strip().splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--out-dir", default=".", help="output directory")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")
        p.add_argument("-v", "--verbose", action="store_true")
        if name != "report":
            p.add_argument("--adjacency", help="adjacency edge-list file")
        if name in ("fit", "compare-orders"):
            p.add_argument("--data", help="outcome/covariate CSV")
        if name == "fit":
            p.add_argument("--order", help="1-based disease ordering, e.g. 2,1")
        if name == "report":
            p.add_argument("runs", nargs="*", help="run directories to summarize")
    return ap


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        cfg = load_config(args.config)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return COMMANDS[args.command](args, cfg)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except FileNotFoundError as exc:
        print(f"error: {exc.filename}: file not found", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
