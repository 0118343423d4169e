"""Command-line entry point: ``vbpi <command> [flags]``.

Commands: support, train, sample, estimate, kl, simulate.  Errors are
written to stderr as ``error: <message>`` with exit status 1.
"""

import argparse
import json
import math
import os
import sys

import numpy as np

from .estimators import evidence_estimate, kl_topology, tree_marginal_likelihood
from .likelihood import simulate_dataset
from .models import TimeTreeVBPI, UnrootedVBPI
from .newick import parse_newick, read_trees, write_newick
from .sbn import SubsplitSupport
from .seqio import compress_patterns, read_fasta, read_reference, read_sampling_times
from .support import build_support
from .trainer import (TrainConfig, load_checkpoint, make_streams, save_checkpoint,
                      train)
from .tree import unroot

DEFAULT_ANNEAL = {"unrooted": 100000, "timetree": 50000}


class CliError(Exception):
    pass


# support ------------------------------------------------------------------

def cmd_support(args):
    rooted = args.mode == "rooted"
    taxa = None
    trees = []
    for path in args.trees:
        items = read_trees(path, first_k=args.first_k)
        for t, _ in items:
            if taxa is None:
                taxa = t.taxa
            elif set(t.taxa.names) != set(taxa.names):
                raise CliError(f"{path}: taxon set differs from {args.trees[0]}")
        # re-read with the shared taxon order so bitmasks agree
        items = read_trees(path, taxa, first_k=args.first_k)
        for t, _ in items:
            if rooted and not t.rooted:
                raise CliError(f"{path}: rooted mode needs rooted trees")
            if not rooted and t.rooted:
                t = unroot(t)
            trees.append(t)
    if not trees:
        raise CliError("no trees read")
    support = build_support(trees, rooted)
    support.save(args.out)
    s = support.summary()
    print(f"trees={len(trees)} root_subsplits={s['root_subsplits']} "
          f"pcsps={s['pcsps']} clades={s['clades']}")


# train --------------------------------------------------------------------

def _patterns(path, taxa):
    aln = read_fasta(path)
    if set(aln.taxa.names) != set(taxa.names):
        raise CliError("alignment taxa differ from the support taxa")
    # reorder rows to the support's taxon order
    rows = [aln.rows[aln.taxa.index[n]] for n in taxa.names]
    aln = type(aln)(taxa, rows)
    return compress_patterns(aln)


def _check_train_flags(args):
    if args.model == "unrooted":
        for flag, value in (("--coalescent", args.coalescent),
                            ("--clock-rate", args.clock_rate),
                            ("--times", args.times)):
            if value is not None:
                raise CliError(f"{flag} only applies to --model timetree")
    if args.clock_rate not in (None, "free"):
        try:
            rate = float(args.clock_rate)
        except ValueError:
            raise CliError("--clock-rate must be a positive number or 'free'") from None
        if not rate > 0:
            raise CliError("--clock-rate must be a positive number or 'free'")


def build_model(args, support, patterns):
    if args.model == "unrooted":
        if support.rooted:
            raise CliError("unrooted model needs an unrooted support")
        return UnrootedVBPI(support, patterns, psp=args.psp)
    if not support.rooted:
        raise CliError("timetree model needs a rooted support")
    times = read_sampling_times(args.times, support.taxa) if args.times else None
    rate = None if args.clock_rate in (None, "free") else float(args.clock_rate)
    return TimeTreeVBPI(support, patterns, times=times,
                        coalescent=args.coalescent or "constant",
                        clock_rate=rate, psp=args.psp)


def cmd_train(args):
    _check_train_flags(args)
    support = SubsplitSupport.load(args.support)
    patterns = _patterns(args.alignment, support.taxa)
    model = build_model(args, support, patterns)
    period = args.anneal_period or DEFAULT_ANNEAL[args.model]
    config = TrainConfig(k=args.k, estimator=args.estimator, iters=args.iters,
                         lr=args.lr, anneal_period=period, seed=args.seed,
                         trace_every=args.trace_every,
                         max_grad_norm=args.max_grad_norm)
    try:
        config.validate()
    except ValueError as exc:
        raise CliError(str(exc)) from None

    def progress(row):
        if not args.quiet:
            print(f"iter={row[0]} beta={row[1]:.4f} bound={row[2]:.4f} "
                  f"elapsed={row[3]:.1f}s", file=sys.stderr)

    result = train(model, config, trace_path=args.trace, progress=progress)
    save_checkpoint(args.checkpoint, model, config, result,
                    extra={"alignment": os.path.abspath(args.alignment)})
    print(f"final_bound={float(result.bounds[-1])!r}" if len(result.bounds) else "no iterations")


# checkpoint-based commands ------------------------------------------------

def _load(args):
    with open(args.checkpoint) as fh:
        d = json.load(fh)
    aln_path = getattr(args, "alignment", None) or d.get("alignment")
    patterns = None
    if aln_path is not None:
        support = SubsplitSupport.from_dict(d["support"])
        patterns = _patterns(aln_path, support.taxa)
    model, d = load_checkpoint(args.checkpoint, patterns)
    return model, d


def _parse_tree(model, text):
    tree, _ = parse_newick(text, model.support.taxa)
    if model.kind == "unrooted" and tree.rooted:
        tree = unroot(tree)
    if model.kind == "timetree" and not tree.rooted:
        raise CliError("time-tree checkpoints need a rooted --tree")
    return tree


def cmd_sample(args):
    model, _ = _load(args)
    streams = make_streams(args.seed)
    trees = model.sample_topologies(args.n, streams["topology"])
    lines = []
    for t in trees:
        lengths = None
        if args.branch_lengths:
            if model.kind == "unrooted":
                lengths, _ = model.branch.sample(t, streams["branch"])
            else:
                eps = model.draw_eps(t, streams["height"], size=1)
                heights = model.transform(t, eps)[0].heights[0]
                lengths = np.zeros(t.n_nodes)
                for v in t.edges:
                    lengths[v] = heights[t.parent[v]] - heights[v]
        lines.append(write_newick(t, lengths))
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_estimate(args):
    if args.evidence == (args.tree is not None):
        raise CliError("give exactly one of --evidence or --tree")
    model, _ = _load(args)
    if model.patterns is None:
        raise CliError("no alignment: pass --alignment")
    out = {}
    if args.evidence:
        mean, std, _ = evidence_estimate(model, args.n_samples, args.repeats, args.seed)
        out = {"evidence_lower_bound_mean": mean, "std": std,
               "n_samples": args.n_samples, "repeats": args.repeats}
    else:
        tree = _parse_tree(model, args.tree)
        if not model.covers(tree):
            raise CliError("tree is not covered by the support")
        est, se = tree_marginal_likelihood(model, tree, args.n_samples,
                                           np.random.default_rng(args.seed))
        out = {"log_marginal_likelihood": est, "std_error": se,
               "n_samples": args.n_samples}
    if model.kind == "timetree" and model.coalescent == "skyride":
        out["up_to_additive_constant"] = True
    print(json.dumps(out))


def cmd_kl(args):
    model, _ = _load(args)
    ref = read_reference(args.reference, model.support.taxa)
    if model.kind == "unrooted":
        ref = [(unroot(t) if t.rooted else t, p) for t, p in ref]
    kl, bad = kl_topology(model, ref)
    print(repr(kl) if math.isfinite(kl) else "inf")
    for t in bad:
        print(f"not in support: {write_newick(t)}", file=sys.stderr)


def cmd_simulate(args):
    tree, lengths, aln = simulate_dataset(args.taxa, args.sites, args.seed)
    with open(args.out + ".fasta", "w") as fh:
        fh.write(aln.to_fasta())
    with open(args.out + ".nwk", "w") as fh:
        fh.write(write_newick(tree, lengths) + "\n")
    print(f"wrote {args.out}.fasta {args.out}.nwk")


# argument parsing ---------------------------------------------------------

def make_parser():
    p = argparse.ArgumentParser(prog="vbpi", description="Variational phylogenetic "
                                "inference with subsplit Bayesian networks.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("support", help="build a subsplit support from tree files")
    s.add_argument("--trees", nargs="+", required=True)
    s.add_argument("--mode", choices=("unrooted", "rooted"), default="unrooted")
    s.add_argument("--first-k", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_support)

    t = sub.add_parser("train", help="fit the variational approximation")
    t.add_argument("--alignment", required=True, help="FASTA file")
    t.add_argument("--support", required=True, help="support JSON")
    t.add_argument("--model", choices=("unrooted", "timetree"), default="unrooted")
    t.add_argument("--estimator", choices=("vimco", "rws"), default="vimco")
    t.add_argument("--k", type=int, default=10)
    t.add_argument("--psp", action="store_true")
    t.add_argument("--iters", type=int, default=200000)
    t.add_argument("--lr", type=float, default=0.001)
    t.add_argument("--anneal-period", type=float)
    t.add_argument("--coalescent", choices=("constant", "skyride"))
    t.add_argument("--clock-rate", help="fixed rate, or 'free' (default) to learn it")
    t.add_argument("--times", help="sampling times CSV (taxon,time)")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--checkpoint", required=True)
    t.add_argument("--trace")
    t.add_argument("--trace-every", type=int, default=100)
    t.add_argument("--max-grad-norm", type=float)
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    for name, func, hlp in (("sample", cmd_sample, "draw trees from a checkpoint"),
                            ("estimate", cmd_estimate, "evidence or marginal likelihood"),
                            ("kl", cmd_kl, "KL from a reference to the SBN")):
        c = sub.add_parser(name, help=hlp)
        c.add_argument("--checkpoint", required=True)
        c.add_argument("--alignment", help="defaults to the path stored at training")
        c.add_argument("--seed", type=int, default=0)
        c.set_defaults(func=func)
        if name == "sample":
            c.add_argument("--n", type=int, default=1000)
            c.add_argument("--branch-lengths", action="store_true")
            c.add_argument("--out")
        elif name == "estimate":
            c.add_argument("--evidence", action="store_true")
            c.add_argument("--tree", help="Newick string for a per-tree estimate")
            c.add_argument("--n-samples", type=int, default=1000)
            c.add_argument("--repeats", type=int, default=100)
        else:
            c.add_argument("--reference", required=True, help="CSV newick,probability")

    m = sub.add_parser("simulate", help="simulate a JC69 alignment on a random tree")
    m.add_argument("--taxa", type=int, required=True)
    m.add_argument("--sites", type=int, required=True)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", default="sim", help="output prefix")
    m.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        args.func(args)
    except (CliError, ValueError, KeyError, OSError, FloatingPointError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
