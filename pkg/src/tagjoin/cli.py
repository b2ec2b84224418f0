"""Command-line entry point: run, explain, gen and oracle."""
from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from . import oracle
from .errors import (
    HeaderMismatch,
    QueryError,
    SchemaError,
    StoreIoError,
    TagJoinError,
    TypeParseError,
)
from .gen import KINDS, generate, write_instance
from .query import parse
from .runtime import tag_join
from .table import sorted_rows
from .tag_store import build_tag, format_value, load_database, load_schema

IO_ERRORS = (StoreIoError, SchemaError, HeaderMismatch, TypeParseError, OSError)


@dataclass
class RunConfig:
    schema: Path
    data: Path
    query: str
    workers: int = 1
    theta: int | None = None
    distributed: bool = False
    explain: bool = False
    report: Path | None = None
    out: Path | None = None

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


def _query_text(arg: str) -> str:
    """A query argument is a file path when such a file exists, otherwise the query itself."""
    p = Path(arg)
    try:
        if p.is_file():
            return p.read_text(encoding="utf-8")
    except OSError:
        pass
    return arg


def _render_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in sorted_rows(rows):
        w.writerow([format_value(v) for v in r])
    return buf.getvalue()


def _emit(text: str, path: Path | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text, encoding="utf-8")


def _load(cfg: RunConfig):
    schema = load_schema(cfg.schema)
    db = load_database(schema, cfg.data)
    q = parse(_query_text(cfg.query), schema)
    return schema, db, q


def explain_text(result) -> str:
    stats = result.stats
    lines = [f"theta: {stats.theta}"]
    for i, plan in enumerate(stats.plans):
        lines.append(f"program {i}:")
        lines.extend("  " + ln for ln in plan.splitlines())
    for b in stats.bags:
        lines.append(f"bag {'/'.join(b.atoms)}: {b.method}, size {b.size}, agm^2 {b.agm_squared}")
    for note in result.report.notes:
        lines.append(f"note: {note}")
    return "\n".join(lines) + "\n"


def _execute(cfg: RunConfig):
    schema, db, q = _load(cfg)
    graph = build_tag(schema, db)
    res = tag_join(graph, q, workers=cfg.workers, distributed=cfg.distributed, theta=cfg.theta)
    rows = res.rows
    if cfg.distributed and res.pieces is not None:
        rows = [r for v in sorted(res.pieces) for r in res.pieces[v].rows]
    return q, res, rows


def cmd_run(cfg: RunConfig) -> int:
    q, res, rows = _execute(cfg)
    if cfg.explain:
        sys.stderr.write(explain_text(res))
    _emit(_render_csv(q.output_columns, rows), cfg.out)
    report = res.report.to_json() + "\n"
    if cfg.report is not None:
        cfg.report.write_text(report, encoding="utf-8")
    else:
        t = res.report.totals
        sys.stderr.write(f"supersteps={res.report.supersteps} msgs={t['msgs']} payload={t['payload']} "
                         f"IN={res.report.IN} OUT={res.report.OUT}\n")
    return 0


def cmd_explain(cfg: RunConfig) -> int:
    _, res, _ = _execute(cfg)
    _emit(explain_text(res), cfg.out)
    if cfg.report is not None:
        cfg.report.write_text(res.report.to_json() + "\n", encoding="utf-8")
    return 0


def cmd_oracle(cfg: RunConfig) -> int:
    schema, db, q = _load(cfg)
    cols, rows = oracle.evaluate(q, db, schema)
    _emit(_render_csv(cols, rows), cfg.out)
    return 0


def cmd_gen(kind: str, sizes, seed: int, out: Path, domain: int | None = None) -> int:
    inst = generate(kind, sizes, seed, domain)
    write_instance(inst, out)
    sys.stderr.write(f"wrote {len(inst.db)} relations, {inst.size} tuples to {out}\n")
    return 0


def _default_workers() -> int:
    raw = os.environ.get("TAGJOIN_WORKERS")
    if not raw:
        return 1
    try:
        return int(raw)
    except ValueError:
        raise SystemExit(f"TAGJOIN_WORKERS must be an integer, got {raw!r}") from None


def _positive(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return n


def _non_negative(text: str) -> int:
    n = int(text)
    if n < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tagjoin", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log warnings and progress")
    sub = parser.add_subparsers(dest="command", required=True)

    inputs = argparse.ArgumentParser(add_help=False)
    inputs.add_argument("--schema", required=True, type=Path, help="schema JSON")
    inputs.add_argument("--data", type=Path, help="directory of <Relation>.csv files (default: schema directory)")
    inputs.add_argument("--query", required=True, help="query file or inline query text")
    inputs.add_argument("--out", type=Path, help="write output here instead of stdout")

    engine = argparse.ArgumentParser(add_help=False)
    engine.add_argument("--workers", type=_positive, default=None, help="worker count (default: $TAGJOIN_WORKERS or 1)")
    engine.add_argument("--theta", type=_non_negative, help="heavy/light degree threshold")
    engine.add_argument("--distributed", action="store_true", help="leave results at the vertices that produced them")
    engine.add_argument("--report", type=Path, help="cost report JSON path")

    run = sub.add_parser("run", parents=[inputs, engine], help="evaluate a query and write result CSV")
    run.add_argument("--explain", action="store_true", help="print the TAG plans and step lists to stderr")
    sub.add_parser("explain", parents=[inputs, engine], help="evaluate a query and print its TAG plans")
    sub.add_parser("oracle", parents=[inputs], help="evaluate with the brute-force reference")

    gen = sub.add_parser("gen", help="write a synthetic instance (schema.json, CSVs, query.dl)")
    gen.add_argument("kind", choices=KINDS)
    gen.add_argument("sizes", nargs="+", type=int, help="relation sizes; for pkfk-star the fact size first")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--domain", type=_positive, help="value domain for star, chain and cycle")
    gen.add_argument("--out", type=Path, required=True, help="output directory")
    return parser


def _config(args) -> RunConfig:
    workers = args.workers if getattr(args, "workers", None) is not None else _default_workers()
    return RunConfig(
        schema=args.schema,
        data=args.data if args.data is not None else args.schema.parent,
        query=args.query,
        workers=workers,
        theta=getattr(args, "theta", None),
        distributed=getattr(args, "distributed", False),
        explain=getattr(args, "explain", False),
        report=getattr(args, "report", None),
        out=args.out,
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s: %(message)s")
    try:
        if args.command == "gen":
            return cmd_gen(args.kind, args.sizes, args.seed, args.out, args.domain)
        cfg = _config(args)
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "explain":
            return cmd_explain(cfg)
        return cmd_oracle(cfg)
    except IO_ERRORS as exc:
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return 2
    except (QueryError, TagJoinError, ValueError) as exc:
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
