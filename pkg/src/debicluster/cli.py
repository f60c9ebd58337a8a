"""Command-line interface: run, simulate, evaluate, redundancy, consensus."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .consensus import consensus_detailed
from .dataio import (
    read_biclusters,
    read_matrix,
    read_truth,
    write_biclusters,
    write_json,
    write_matrix,
    write_truth,
)
from .evaluation import best_match_performance, redundancy
from .pipeline import UnpastParams, run_unpast_detailed
from .simulation import SimulationSpec, generate

log = logging.getLogger("debicluster")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
BINARIZATION = {"kmeans": "two_means", "ward": "ward", "gmm": "gmm"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fraction(s):
    x = float(s)
    if not 0 < x < 1:
        raise argparse.ArgumentTypeError(f"{s} is not in (0, 1)")
    return x


def _positive_int(s):
    x = int(s)
    if x < 1:
        raise argparse.ArgumentTypeError(f"{s} is not a positive integer")
    return x


def _int_list(s):
    try:
        return tuple(int(v) for v in s.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"{s!r} is not a comma-separated list of integers") from None


def resolve_threads(requested):
    if requested is not None:
        return requested
    env = os.environ.get("UNPAST_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"UNPAST_THREADS={env!r} is not an integer") from None
        if n < 1:
            raise UsageError("UNPAST_THREADS must be positive")
        return n
    return os.cpu_count() or 1


def build_parser():
    p = _Parser(prog="debicluster", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="find biclusters in an expression matrix")
    r.add_argument("matrix", help="feature x sample TSV")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--binarization", choices=sorted(BINARIZATION), default="gmm")
    r.add_argument("--clustering", choices=["louvain", "tom"], default="louvain")
    r.add_argument("--directions", choices=["separate", "joint"], default="separate")
    r.add_argument("--pval", type=_fraction, default=0.01, help="binarization p-value threshold")
    r.add_argument("--min-n-samples", type=int, default=5)
    r.add_argument("--edge-threshold", type=float, default=UnpastParams.edge_threshold)
    r.add_argument("--resolution", type=float, default=1.0)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--n-runs", type=_positive_int, default=1, help="more than one run triggers consensus")
    r.add_argument("--de-lfc", type=float, default=1.0)
    r.add_argument("--de-pval", type=float, default=0.05)
    r.add_argument("--no-de", action="store_true", help="skip the differential-expression check")
    r.add_argument("--j-min", type=float, default=0.3)
    r.add_argument("--j-max", type=float, default=0.9)
    r.add_argument("--min-frequency", type=float, default=1 / 3)
    r.add_argument("--threads", type=_positive_int, default=None)
    r.add_argument("--null-cache", default=None, help="directory for cached null SNR distributions")
    r.add_argument("--dump-modules", action="store_true", help="also write the feature modules")

    s = sub.add_parser("simulate", help="generate a synthetic matrix with planted subtypes")
    s.add_argument("--out", required=True)
    s.add_argument("--scenario", choices=["A", "B", "C"], default="A")
    s.add_argument("--n-biomarkers", type=_positive_int, default=500)
    s.add_argument("--n-features", type=_positive_int, default=10000)
    s.add_argument("--n-samples", type=_positive_int, default=200)
    s.add_argument("--subtype-sizes", type=_int_list, default=(10, 20, 50, 100))
    s.add_argument("--signal-mean", type=float, default=4.0)
    s.add_argument("--signal-std", type=float, default=1.0)
    s.add_argument("--coexpr-modules", type=int, default=None)
    s.add_argument("--coexpr-size", type=int, default=500)
    s.add_argument("--coexpr-r", type=float, default=0.5)
    s.add_argument("--seed", type=int, default=0)

    e = sub.add_parser("evaluate", help="score biclusters against ground-truth sample sets")
    e.add_argument("biclusters")
    e.add_argument("truth", help="one line per set: name<TAB>space-separated sample ids")
    e.add_argument("--matrix", required=True, help="matrix the biclusters came from (for ids)")
    e.add_argument("--alpha", type=_fraction, default=0.05)
    e.add_argument("--out", required=True)

    d = sub.add_parser("redundancy", help="fraction of significantly overlapping bicluster pairs")
    d.add_argument("biclusters")
    d.add_argument("--matrix", required=True)
    d.add_argument("--alpha", type=_fraction, default=0.05)
    d.add_argument("--out", required=True)

    c = sub.add_parser("consensus", help="consensus of several bicluster files")
    c.add_argument("biclusters", nargs="+")
    c.add_argument("--matrix", required=True)
    c.add_argument("--j-min", type=float, default=0.3)
    c.add_argument("--j-max", type=float, default=0.9)
    c.add_argument("--min-frequency", type=float, default=1 / 3)
    c.add_argument("--binarization", choices=sorted(BINARIZATION), default="gmm")
    c.add_argument("--min-n-samples", type=int, default=5)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", required=True)
    return p


def _config(args, **extra):
    cfg = {k: v for k, v in vars(args).items() if k not in ("threads", "verbose", "out")}
    cfg.update(extra)
    cfg["version"] = __version__
    return cfg


def _check_consensus_args(args):
    if not 0 <= args.j_min <= args.j_max <= 1:
        raise UsageError("need 0 <= --j-min <= --j-max <= 1")
    if not 0 < args.min_frequency <= 1:
        raise UsageError("--min-frequency must lie in (0, 1]")


def cmd_run(args):
    try:
        params = UnpastParams(
            binarization=BINARIZATION[args.binarization],
            p_threshold=args.pval,
            min_n_samples=args.min_n_samples,
            clustering=args.clustering,
            directions=args.directions,
            edge_threshold=args.edge_threshold,
            resolution=args.resolution,
            seed=args.seed,
            de=not args.no_de,
            de_lfc=args.de_lfc,
            de_pval=args.de_pval,
        )
        params.binarization_params()
        params.clustering_params()
    except ValueError as e:
        raise UsageError(str(e)) from None
    if args.n_runs > 1:
        _check_consensus_args(args)
    threads = resolve_threads(args.threads)
    m = read_matrix(args.matrix)
    if m.n_samples < 2 * args.min_n_samples:
        raise ValueError(f"{m.n_samples} samples; need at least {2 * args.min_n_samples}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    runs = []
    for i in range(args.n_runs):
        p = replace(params, seed=args.seed + i)
        det = run_unpast_detailed(m, p, cache_dir=args.null_cache, threads=threads)
        runs.append(det.biclusters)
        name = "biclusters.tsv" if args.n_runs == 1 else f"run{i}.biclusters.tsv"
        write_biclusters(out / name, det.biclusters, m.feature_ids, m.sample_ids)
        if args.dump_modules:
            write_modules(out / (f"run{i}.modules.tsv" if args.n_runs > 1 else "modules.tsv"), det.modules, m.feature_ids)
    if args.n_runs > 1:
        res = consensus_detailed(
            runs, m, args.j_min, args.j_max, args.min_frequency, params.binarization, args.min_n_samples, args.seed
        )
        write_biclusters(out / "biclusters.tsv", res.biclusters, m.feature_ids, m.sample_ids)
        prov = res.provenance()
        prov["runs"] = [f"run{i}.biclusters.tsv" for i in range(args.n_runs)]
        write_json(out / "consensus.json", prov)
    write_json(out / "config.json", _config(args, params=params.to_dict()))
    return EXIT_OK


def write_modules(path, modules, feature_ids):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("id\tmode\tn_features\tfeatures\n")
        for i, mod in enumerate(modules):
            feats = sorted(mod.members, key=lambda f: feature_ids[f])
            names = [("-" if mod.signs.get(f, 1) < 0 else "") + feature_ids[f] for f in feats]
            fh.write(f"{i}\t{mod.mode}\t{len(feats)}\t{' '.join(names)}\n")


def cmd_simulate(args):
    spec = SimulationSpec(
        n_features=args.n_features,
        n_samples=args.n_samples,
        subtype_sizes=args.subtype_sizes,
        n_biomarkers=args.n_biomarkers,
        scenario=args.scenario,
        signal_mean=args.signal_mean,
        signal_std=args.signal_std,
        coexpr_modules=args.coexpr_modules,
        coexpr_size=args.coexpr_size,
        coexpr_r=args.coexpr_r,
        seed=args.seed,
    )
    try:
        spec.validate()
    except ValueError as e:
        raise UsageError(str(e)) from None
    sim = generate(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    m = sim.matrix
    write_matrix(out / "matrix.tsv", m)
    write_truth(out / "truth.tsv", sim.truth, m.sample_ids)
    with open(out / "biomarkers.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for name, feats in zip(sim.truth.names, sim.biomarkers):
            fh.write(name + "\t" + " ".join(m.feature_ids[f] for f in feats) + "\n")
        for i, feats in enumerate(sim.coexpr):
            fh.write(f"coexpr{i + 1}\t" + " ".join(m.feature_ids[f] for f in sorted(feats)) + "\n")
    write_json(out / "config.json", _config(args, spec=spec.to_dict()))
    return EXIT_OK


def _ids(matrix_path):
    m = read_matrix(matrix_path)
    return m.feature_ids, m.sample_ids


def cmd_evaluate(args):
    feature_ids, sample_ids = _ids(args.matrix)
    truth = read_truth(args.truth, sample_ids)
    if not truth.sets:
        raise ValueError(f"{args.truth}: no ground-truth sets")
    bics = read_biclusters(args.biclusters, feature_ids, sample_ids)
    rep = best_match_performance(truth, [b.samples for b in bics if b.samples], len(sample_ids), args.alpha)
    doc = rep.to_dict()
    for t in doc["truth"]:
        t["best_match_id"] = t.pop("best_match")
    doc["n_biclusters"] = len(bics)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "report.json", doc)
    write_json(out / "config.json", _config(args))
    print(f"total {rep.total:.6g}")
    return EXIT_OK


def cmd_redundancy(args):
    feature_ids, sample_ids = _ids(args.matrix)
    bics = read_biclusters(args.biclusters, feature_ids, sample_ids)
    rep = redundancy(bics, len(feature_ids), len(sample_ids), args.alpha)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "redundancy.json", rep.to_dict())
    write_json(out / "config.json", _config(args))
    print(f"fsp {rep.fsp:.6g}")
    return EXIT_OK


def cmd_consensus(args):
    _check_consensus_args(args)
    if len(args.biclusters) < 2:
        raise UsageError("consensus needs at least two bicluster files")
    m = read_matrix(args.matrix)
    runs = [read_biclusters(p, m.feature_ids, m.sample_ids) for p in args.biclusters]
    res = consensus_detailed(
        runs, m, args.j_min, args.j_max, args.min_frequency, BINARIZATION[args.binarization],
        args.min_n_samples, args.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_biclusters(out / "biclusters.tsv", res.biclusters, m.feature_ids, m.sample_ids)
    prov = res.provenance()
    prov["runs"] = list(args.biclusters)
    write_json(out / "consensus.json", prov)
    write_json(out / "config.json", _config(args))
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
    "redundancy": cmd_redundancy,
    "consensus": cmd_consensus,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"debicluster {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as e:
        print(f"debicluster {args.command}: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
