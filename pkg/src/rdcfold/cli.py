"""Command-line entry point: ``rdc-fold <subcommand> ...``.

Exit status is 0 on success, 1 for invalid input (bad flags, unreadable or
malformed files, out-of-range parameters) and 2 for failures during a run.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
from pathlib import Path

from .exceptions import RdcFoldError, ValidationError
from .filters import RESIDUE_CLASSES, RamachandranTable
from .formats import (parse_angle_list, parse_config, parse_coupling_file, parse_rama_table,
                      parse_rdc_file, write_beam, write_coordinates)
from .instrumentation import fit_speedup_model
from .parallel import WorkerPool, WorkerPoolConfig
from .search import (FilterInputs, SearchConfig, angle_list_name, axis_values,
                     bounded_evaluations, fold, stage1, total_search_space)

log = logging.getLogger("rdcfold")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _add_search_args(p, *, stage1_args=True, stage2_args=True):
    p.add_argument("--rdc", type=Path, required=True, help="RDC data file")
    p.add_argument("--residues", "-N", dest="residues", type=int,
                   help="residue count (default: highest residue in the data)")
    p.add_argument("--depth", "-M", dest="depth", type=int, default=1000, help="search depth M")
    p.add_argument("--out", type=Path, default=Path("rdcfold-out"), help="output directory")
    if stage1_args:
        p.add_argument("--resolution", "-R", dest="resolution", type=float, default=10.0)
        p.add_argument("--list-depth", type=int, help="Stage 1 list length (default: M)")
        p.add_argument("--rama", type=Path, help="Ramachandran table file")
        p.add_argument("--couplings", type=Path, help="scalar coupling file")
        p.add_argument("--sequence", help="comma-separated residue classes "
                       f"({', '.join(RESIDUE_CLASSES)})")
    if stage2_args:
        p.add_argument("--np", type=int, default=os.cpu_count() or 1, help="worker count")
        p.add_argument("--sort-mode", choices=("parallel", "head"), default="parallel")
        p.add_argument("--parallel-merge", action="store_true")
        p.add_argument("--legacy-io", action="store_true",
                       help="route every fitness evaluation through scratch files")
        p.add_argument("--scratch", type=Path, help="scratch directory for --legacy-io")
        p.add_argument("--checkpoint-beams", action="store_true",
                       help="write the beam after every iteration")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rdc-fold", description=__doc__.splitlines()[0])
    parser.add_argument("--config", type=Path, help="key=value file supplying option defaults")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic data set with known truth")
    p.add_argument("--residues", "-N", dest="residues", type=int, default=14)
    p.add_argument("--resolution", "-R", dest="resolution", type=float, default=10.0,
                   help="snap true dihedrals to this grid")
    p.add_argument("--off-grid", action="store_true", help="draw continuous dihedrals")
    p.add_argument("--media", type=int, default=2)
    p.add_argument("--noise", type=float, default=0.0, help="Gaussian noise sigma (Hz)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--couplings", action="store_true", help="also write scalar couplings")
    p.add_argument("--out", type=Path, default=Path("synth"))

    p = sub.add_parser("stage1", help="write one sorted angle list per residue pair")
    _add_search_args(p, stage2_args=False)

    p = sub.add_parser("stage2", help="beam search from angle-list files")
    _add_search_args(p, stage1_args=False)
    p.add_argument("--lists", type=Path, required=True, help="directory of angle-list files")

    p = sub.add_parser("fold", help="Stage 1 and Stage 2 with in-memory hand-off")
    _add_search_args(p)

    p = sub.add_parser("analyze", help="search-space size and evaluation bound")
    p.add_argument("--resolution", "-R", dest="resolution", type=float, default=10.0)
    p.add_argument("--residues", "-N", dest="residues", type=int, required=True)
    p.add_argument("--depth", "-M", dest="depth", type=int, default=1000)

    p = sub.add_parser("bench", help="timed fold sweep over worker counts and depths")
    p.add_argument("--rdc", type=Path, help="RDC file (default: synthetic, see --residues)")
    p.add_argument("--residues", "-N", dest="residues", type=int, default=14)
    p.add_argument("--resolution", "-R", dest="resolution", type=float, default=10.0)
    p.add_argument("--np-list", type=_int_list, default=[1, 2, 4])
    p.add_argument("--depths", type=_int_list, default=[1000])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sort-mode", choices=("parallel", "head"), default="parallel")
    p.add_argument("--parallel-merge", action="store_true")
    p.add_argument("--legacy-io", action="store_true")
    p.add_argument("--out", type=Path, default=Path("bench"))
    return parser


def _coerce(action: argparse.Action, raw: str):
    if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
        value = raw.strip().lower()
        if value not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
            raise ValidationError(f"config: {action.dest} expects a boolean, got {raw!r}")
        return value in ("1", "true", "yes", "on")
    if action.type is None:
        return raw
    try:
        return action.type(raw)
    except (ValueError, argparse.ArgumentTypeError) as exc:
        raise ValidationError(f"config: bad value for {action.dest}: {exc}") from None


def apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    """Install values from ``--config`` as defaults; explicit flags still win."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path)
    known, _ = pre.parse_known_args(argv)
    if known.config is None:
        return
    if not known.config.is_file():
        raise ValidationError(f"config file not found: {known.config}")
    values = parse_config(known.config)
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    used = set()
    for sp in subparsers.choices.values():
        by_dest = {a.dest: a for a in sp._actions}
        defaults = {}
        for key, raw in values.items():
            if key in by_dest:
                defaults[key] = _coerce(by_dest[key], raw)
                by_dest[key].required = False
                used.add(key)
        sp.set_defaults(**defaults)
    unknown = sorted(set(values) - used)
    if unknown:
        raise ValidationError(f"config: unknown keys {unknown}")


def _require_file(path: Path | None, what: str) -> None:
    if path is not None and not path.is_file():
        raise ValidationError(f"{what} not found: {path}")


def _filters(args) -> FilterInputs:
    _require_file(args.rama, "Ramachandran table")
    _require_file(args.couplings, "coupling file")
    table = parse_rama_table(args.rama) if args.rama else RamachandranTable.default()
    couplings = parse_coupling_file(args.couplings) if args.couplings else {}
    return FilterInputs(table, couplings)


def _config(args, records) -> SearchConfig:
    if not records:
        raise ValidationError(f"no RDC records in {args.rdc}")
    n = args.residues or max(r.residue_index for r in records)
    sequence = None
    if getattr(args, "sequence", None):
        sequence = tuple(s.strip() for s in args.sequence.split(","))
    return SearchConfig(R=getattr(args, "resolution", 10.0), M=args.depth, N=n,
                        sequence=sequence, list_depth=getattr(args, "list_depth", None))


def _pool(args) -> WorkerPool:
    return WorkerPool(WorkerPoolConfig(args.np, args.sort_mode, args.parallel_merge))


def _write_result(out: Path, result) -> None:
    write_beam(out / "beam_final.txt", result.beam)
    write_coordinates(out / "structure.txt", result.chain)
    result.report.to_json(out / "report.json")
    result.report.to_csv(out / "report.csv")
    best = result.best
    angles = " ".join(f"({d.phi:g}, {d.psi:g})" for d in best.dihedrals)
    print(f"best score {best.score:.9g} Hz")
    print(f"dihedrals (phi(i+1), psi(i)): {angles}")
    print(result.report.table())


def _run_search(args, lists=None, filters=None, config=None, records=None):
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory(prefix="rdcfold-scratch-") as tmp:
        scratch = args.scratch or Path(tmp)
        with _pool(args) as pool:
            result = fold(config, records, pool, lists=lists, filters=filters,
                          legacy_io=args.legacy_io, scratch_dir=scratch,
                          checkpoint_dir=out / "beams" if args.checkpoint_beams else None,
                          list_dir=out / "lists" if lists is None else None)
    _write_result(out, result)
    return result


def cmd_synth(args) -> int:
    from .synth import synthesize_dataset

    truth = synthesize_dataset(args.residues, None if args.off_grid else args.resolution,
                               args.media, args.noise, args.seed, args.out,
                               couplings=args.couplings)
    for name, path in truth.paths.items():
        print(f"{name}: {path}")
    print(f"{len(truth.records)} RDC records, {args.media} media, N={args.residues}")
    return EXIT_OK


def cmd_stage1(args) -> int:
    _require_file(args.rdc, "RDC file")
    records = parse_rdc_file(args.rdc)
    config = _config(args, records)
    lists = stage1(config, records, _filters(args), out_dir=args.out)
    for lst in lists:
        flag = " (unscored fallback)" if lst.fallback else ""
        print(f"{args.out / angle_list_name(lst.pair_index)}: {len(lst)} entries{flag}")
    return EXIT_OK


def cmd_stage2(args) -> int:
    _require_file(args.rdc, "RDC file")
    if not args.lists.is_dir():
        raise ValidationError(f"angle-list directory not found: {args.lists}")
    records = parse_rdc_file(args.rdc)
    files = sorted(args.lists.glob("pair_*.txt"))
    if not files:
        raise ValidationError(f"no pair_*.txt angle lists in {args.lists}")
    lists = sorted((parse_angle_list(f) for f in files), key=lambda l: l.pair_index)
    if [l.pair_index for l in lists] != list(range(1, len(lists) + 1)):
        raise ValidationError(f"angle lists in {args.lists} are not pairs 1..{len(lists)}")
    if args.residues is None:
        args.residues = len(lists) + 1
    config = SearchConfig(R=lists[0].resolution, M=args.depth, N=args.residues)
    _run_search(args, lists=lists, config=config, records=records)
    return EXIT_OK


def cmd_fold(args) -> int:
    _require_file(args.rdc, "RDC file")
    records = parse_rdc_file(args.rdc)
    config = _config(args, records)
    _run_search(args, filters=_filters(args), config=config, records=records)
    return EXIT_OK


def cmd_analyze(args) -> int:
    est = total_search_space(args.resolution, args.residues)
    per_axis = len(axis_values(args.resolution))
    print(f"combinations C = {per_axis}^{2 * (args.residues - 1)}")
    print(f"C = {est.c}")
    print(f"log10(C) = {est.log10:.6f}")
    bound = bounded_evaluations(args.residues, args.depth)
    print(f"evaluation bound (N-1) M^2 = {bound} (M={args.depth})")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .synth import synthesize_dataset

    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    if args.rdc is not None:
        _require_file(args.rdc, "RDC file")
        records = parse_rdc_file(args.rdc)
        n = args.residues or max(r.residue_index for r in records)
    else:
        truth = synthesize_dataset(args.residues, args.resolution, 2, 0.0, args.seed,
                                   out / "data")
        records, n = truth.records, args.residues
    if any(k < 1 for k in args.np_list) or any(m < 1 for m in args.depths):
        raise ValidationError("worker counts and depths must be >= 1")
    lists_cache = {}
    calculated = {}
    print(f"{'np':>4} {'M':>6} {'wall (s)':>10} {'calc (s)':>10} {'sorted %':>9} {'evals':>10}")
    for m in args.depths:
        config = SearchConfig(R=args.resolution, M=m, N=n)
        if m not in lists_cache:
            lists_cache[m] = stage1(config, records)
        for k in args.np_list:
            with tempfile.TemporaryDirectory(prefix="rdcfold-bench-") as tmp:
                with WorkerPool(WorkerPoolConfig(k, args.sort_mode, args.parallel_merge)) as pool:
                    result = fold(config, records, pool, lists=lists_cache[m],
                                  legacy_io=args.legacy_io, scratch_dir=tmp)
            rep = result.report
            stem = out / f"report_np{k}_M{m}"
            rep.to_json(stem.with_suffix(".json"))
            rep.to_csv(stem.with_suffix(".csv"))
            calc = rep.means["Calculated"]
            if m == args.depths[0]:
                calculated[k] = calc
            print(f"{k:>4} {m:>6} {rep.total_wall:>10.3f} {calc:>10.4f} "
                  f"{100 * rep.share('Sorted'):>8.2f}% {rep.evaluations:>10}")
    if len(calculated) >= 2:
        try:
            model = fit_speedup_model(calculated)
            print(f"speedup model: sr={model.sr:.4f} s, op={model.op:.4f} s, "
                  f"op/sr={model.overhead_ratio:.3f}, residual={model.residual:.4f} s")
        except ValidationError as exc:
            print(f"speedup model not fitted: {exc}")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "stage1": cmd_stage1, "stage2": cmd_stage2, "fold": cmd_fold,
            "analyze": cmd_analyze, "bench": cmd_bench}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        apply_config(parser, argv)
        args = parser.parse_args(argv)
    except ValidationError as exc:
        print(f"rdc-fold: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    try:
        return COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"rdc-fold: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (RdcFoldError, OSError) as exc:
        print(f"rdc-fold: run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
