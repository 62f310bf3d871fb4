"""Command-line interface: ``dncbmf {fit,evaluate,generate,embed}``.

Every command writes into a fresh output directory that appears only once the
command has succeeded. Each directory carries ``manifest.tsv`` with the
resolved settings, which can be fed back through ``--config`` to repeat a run.
Values given as flags take precedence over ``--config`` keys, which take
precedence over the built-in defaults.
"""

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .evaluation import HoldoutMask, make_mask, ppd
from .gibbs import SamplerConfig, run
from .io import (ParseError, ReadCounts, betas_from_reads, file_sha256, ingest_matrix,
                 read_chain, read_manifest, read_mask, read_matrix, staged_output,
                 top_variance, write_chain, write_manifest, write_mask, write_matrix)
from .model import Hyperparams, embedding
from .specfun import MAX_TERMS, ConvergenceError, DomainError
from .synthetic import from_prior, two_block

log = logging.getLogger("dncbmf")

def _add_hyper(p):
    g = p.add_argument_group("model")
    g.add_argument("--k", type=int, default=10, help="number of components K")
    g.add_argument("--eps1", type=float, default=0.75)
    g.add_argument("--eps2", type=float, default=0.75)
    g.add_argument("--a0", type=float, default=0.1, help="theta prior shape")
    g.add_argument("--b0", type=float, default=0.1, help="theta prior rate")
    g.add_argument("--e0", type=float, default=0.1, help="phi prior shape")
    g.add_argument("--f0", type=float, default=0.1, help="phi prior rate")


def _add_mask(p):
    g = p.add_argument_group("holdout mask")
    g.add_argument("--mask-fraction", type=float, default=None,
                   help="hold out this fraction of cells at random")
    g.add_argument("--mask-seed", type=int, default=None,
                   help="seed for the random mask (defaults to --seed)")
    g.add_argument("--mask-file", default=None, help="two-column (row, col) index list")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dncbmf", description="Doubly non-central beta matrix factorization.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="run the Gibbs sampler on a matrix")
    fit.add_argument("--config", help="key/value file; flags override its entries")
    fit.add_argument("--input", help="matrix of values in [0, 1] (TSV)")
    fit.add_argument("--reads-methylated", help="methylated read counts (TSV)")
    fit.add_argument("--reads-unmethylated", help="unmethylated read counts (TSV)")
    fit.add_argument("--s0", type=float, default=0.1, help="read-count smoothing")
    fit.add_argument("--top-variance", type=int, default=None,
                     help="keep the N highest-variance columns (sample variance)")
    fit.add_argument("--output", help="output directory (must not exist)")
    _add_hyper(fit)
    g = fit.add_argument_group("sampler")
    g.add_argument("--burnin", type=int, default=1000)
    g.add_argument("--total", type=int, default=2000, help="sweeps after burn-in")
    g.add_argument("--thin", type=int, default=20)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--parallel", action="store_true")
    g.add_argument("--workers", type=int, default=None, help="threads when --parallel")
    _add_mask(fit)

    ev = sub.add_parser("evaluate", help="score held-out cells of a fitted chain")
    ev.add_argument("--config")
    ev.add_argument("--chain", help="output directory of a fit")
    ev.add_argument("--input", help="matrix to score (defaults to the fit's data.tsv)")
    ev.add_argument("--output")
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--per-cell", action="store_true", help="write per-cell log densities")
    ev.add_argument("--max-terms", type=int, default=MAX_TERMS,
                    help="series budget per density evaluation")
    _add_mask(ev)

    gen = sub.add_parser("generate", help="draw a synthetic matrix with known factors")
    gen.add_argument("--config")
    gen.add_argument("--output")
    gen.add_argument("--n-rows", type=int, default=50)
    gen.add_argument("--n-cols", type=int, default=100)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--blocks", action="store_true",
                     help="two sample groups over two gene blocks (K = 2)")
    gen.add_argument("--strength", type=float, default=5.0,
                     help="mean loading of a block in --blocks mode")
    _add_hyper(gen)

    emb = sub.add_parser("embed", help="posterior-mean rho embedding of a fitted chain")
    emb.add_argument("--config")
    emb.add_argument("--chain")
    emb.add_argument("--output")
    return parser


def _subparser(parser, name):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def _as_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off", ""):
        return False
    raise ParseError(f"expected a boolean, got {text!r}")


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        sub = _subparser(parser, args.command)
        known = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, value in read_manifest(args.config).items():
            dest = key.replace("-", "_")
            if dest not in known or dest in ("config", "help"):
                continue
            if value in ("", "None"):
                defaults[dest] = None
            elif isinstance(known[dest], argparse._StoreTrueAction):
                defaults[dest] = _as_bool(value)
            else:
                defaults[dest] = value
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def _require(args, *names):
    for name in names:
        if getattr(args, name) is None:
            raise ParseError(f"--{name.replace('_', '-')} is required")


def _hyper(args) -> Hyperparams:
    return Hyperparams(eps1=args.eps1, eps2=args.eps2, a0=args.a0, b0=args.b0,
                       e0=args.e0, f0=args.f0, K=args.k)


def _load_input(args):
    """Returns (BetaMatrix, {name: sha256}) from --input or the read-count pair."""
    if args.reads_methylated or args.reads_unmethylated:
        if args.input:
            raise ParseError("give either --input or the read-count pair, not both")
        _require(args, "reads_methylated", "reads_unmethylated")
        d, rows, cols = read_matrix(args.reads_methylated)
        u, rows_u, cols_u = read_matrix(args.reads_unmethylated)
        if rows != rows_u or cols != cols_u:
            raise ParseError("read-count files disagree on row or column labels")
        beta = betas_from_reads(ReadCounts(d, u, args.s0), rows, cols)
        digests = {"reads_methylated_sha256": file_sha256(args.reads_methylated),
                   "reads_unmethylated_sha256": file_sha256(args.reads_unmethylated)}
    else:
        _require(args, "input")
        beta = ingest_matrix(args.input)
        digests = {"input_sha256": file_sha256(args.input)}
    return beta, digests


def _resolve_mask(args, shape, fallback=None):
    """Mask from --mask-file, --mask-fraction or ``fallback``; None when absent."""
    if args.mask_file and args.mask_fraction is not None:
        raise ParseError("give either --mask-file or --mask-fraction, not both")
    if args.mask_file:
        return HoldoutMask(read_mask(args.mask_file))
    if args.mask_fraction is not None:
        if args.mask_seed is None:
            args.mask_seed = args.seed
        return make_mask(shape[0], shape[1], args.mask_fraction, args.mask_seed)
    if fallback is not None and Path(fallback).is_file():
        return HoldoutMask(read_mask(fallback))
    return None


def _settings(args, skip=("command", "config", "verbose")) -> dict:
    return {k: v for k, v in vars(args).items() if k not in skip}


def _progress(total):
    def report(sweep, elapsed):
        if sweep % 100 == 0 or sweep == total:
            log.info("sweep %d/%d (%.1fs)", sweep, total, elapsed)
    return report


def cmd_fit(args) -> int:
    _require(args, "output")
    t0 = time.time()
    beta, digests = _load_input(args)
    if args.top_variance is not None:
        beta = top_variance(beta, args.top_variance)
    if beta.n_clamped:
        log.warning("clamped %d values into [1e-6, 1 - 1e-6]", beta.n_clamped)
    hyper = _hyper(args)
    config = SamplerConfig(burnin=args.burnin, total=args.total, thin=args.thin,
                           seed=args.seed, parallel=args.parallel, workers=args.workers)
    mask = _resolve_mask(args, beta.shape)
    with staged_output(args.output) as out:
        chain = run(beta, mask, hyper, config,
                    progress=_progress(config.burnin + config.total))
        write_matrix(out / "data.tsv", beta.values, beta.row_ids, beta.col_ids)
        if mask is not None:
            write_mask(out / "mask.tsv", mask.held_out)
        write_chain(out / "chain.tsv", chain, beta.row_ids, beta.col_ids)
        rho = np.mean([embedding(s).rho for s in chain.states], axis=0)
        write_matrix(out / "embedding.tsv", rho, beta.row_ids,
                     [f"k{c}" for c in range(hyper.K)])
        with open(out / "trace.tsv", "w") as fh:
            fh.write("sweep\tlog_joint\n")
            for s, v in enumerate(chain.trace, start=1):
                fh.write(f"{s}\t{float(v)!r}\n")
        manifest = {"command": "fit", "version": __version__, **_settings(args), **digests,
                    "n_rows": beta.shape[0], "n_cols": beta.shape[1],
                    "n_clamped": beta.n_clamped,
                    "n_held_out": 0 if mask is None else len(mask),
                    "n_snapshots": len(chain), "n_capped": chain.n_capped,
                    "wall_time_s": time.time() - t0}
        write_manifest(out / "manifest.tsv", manifest)
    print(f"fit: {len(chain)} snapshots written to {args.output}")
    return 0


def cmd_evaluate(args) -> int:
    _require(args, "chain", "output")
    chain_dir = Path(args.chain)
    chain, row_ids, col_ids = read_chain(chain_dir)
    source = Path(args.input) if args.input else chain_dir / "data.tsv"
    beta = ingest_matrix(source)
    if beta.row_ids != row_ids or beta.col_ids != col_ids:
        raise ParseError(f"{source}: labels do not match the fitted chain")
    mask = _resolve_mask(args, beta.shape, fallback=chain_dir / "mask.tsv")
    if mask is None:
        raise ParseError("no mask: pass --mask-file or --mask-fraction, "
                         "or fit with a mask")
    report = ppd(chain, beta, mask, chain.hyper, max_terms=args.max_terms)
    if report.n_failed:
        log.warning("%d held-out cells hit the series budget; raise --max-terms",
                    report.n_failed)
    with staged_output(args.output) as out:
        write_manifest(out / "report.tsv", {
            "log_ppd_total": report.log_ppd_total,
            "scaled_ppd": report.scaled_ppd,
            "n_held_out": report.n_held_out,
            "n_snapshots": len(chain),
            "n_failed": report.n_failed,
            "n_clamped": report.n_clamped})
        if args.per_cell:
            with open(out / "per_cell.tsv", "w") as fh:
                fh.write("row\tcol\trow_id\tcol_id\tvalue\tlog_density\n")
                for (i, j), lp in zip(report.cells, report.per_cell_log):
                    fh.write(f"{i}\t{j}\t{row_ids[i]}\t{col_ids[j]}\t"
                             f"{float(beta.values[i, j])!r}\t{float(lp)!r}\n")
        write_manifest(out / "manifest.tsv", {
            "command": "evaluate", "version": __version__, **_settings(args),
            "input_sha256": file_sha256(source),
            "chain_sha256": file_sha256(chain_dir / "chain.tsv")})
    print(f"scaled_ppd\t{report.scaled_ppd!r}")
    return 0


def cmd_generate(args) -> int:
    _require(args, "output")
    if args.blocks:
        if args.k != 2:
            log.warning("--blocks always uses K = 2; ignoring --k %d", args.k)
            args.k = 2
        data = two_block(args.n_rows, args.n_cols, args.seed, args.strength, _hyper(args))
    else:
        data = from_prior(args.n_rows, args.n_cols, _hyper(args), args.seed)
    beta = data.beta
    comps = [f"k{c}" for c in range(args.k)]
    with staged_output(args.output) as out:
        write_matrix(out / "data.tsv", beta.values, beta.row_ids, beta.col_ids)
        write_matrix(out / "theta1.tsv", data.truth.theta1, beta.row_ids, comps)
        write_matrix(out / "theta2.tsv", data.truth.theta2, beta.row_ids, comps)
        write_matrix(out / "phi.tsv", data.truth.phi, comps, beta.col_ids, corner="component")
        if data.row_groups is not None:
            with open(out / "groups.tsv", "w") as fh:
                fh.write("id\tgroup\n")
                for label, grp in zip(beta.row_ids, data.row_groups):
                    fh.write(f"{label}\t{grp}\n")
        write_manifest(out / "manifest.tsv", {
            "command": "generate", "version": __version__, **_settings(args),
            "n_clamped": beta.n_clamped})
    print(f"generate: {beta.shape[0]} x {beta.shape[1]} matrix written to {args.output}")
    return 0


def cmd_embed(args) -> int:
    _require(args, "chain", "output")
    chain, row_ids, _ = read_chain(args.chain)
    rho = np.mean([embedding(s).rho for s in chain.states], axis=0)
    with staged_output(args.output) as out:
        write_matrix(out / "embedding.tsv", rho, row_ids,
                     [f"k{c}" for c in range(chain.hyper.K)])
        write_manifest(out / "manifest.tsv", {
            "command": "embed", "version": __version__, **_settings(args),
            "chain_sha256": file_sha256(Path(args.chain) / "chain.tsv"),
            "n_snapshots": len(chain)})
    print(f"embed: {rho.shape[0]} x {rho.shape[1]} embedding written to {args.output}")
    return 0


_COMMANDS = {"fit": cmd_fit, "evaluate": cmd_evaluate, "generate": cmd_generate,
             "embed": cmd_embed}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except ParseError as err:
        print(f"dncbmf: error: {err}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except (DomainError, ConvergenceError, ParseError, FileExistsError, OSError) as err:
        print(f"dncbmf {args.command}: error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
