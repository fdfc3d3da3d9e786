"""Command line entry point.

    topicgraph validate CONFIG
    topicgraph run CONFIG [--from STAGE]
    topicgraph export CONFIG [--format FMT ...] [--out DIR]
    topicgraph stats CONFIG

Exit status is 0 on success, 1 when the config does not validate and 2
when a stage fails or a checkpoint is stale.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import hierarchy as hier
from . import kg
from .pipeline import STAGES, ConfigError, PipelineConfig, PipelineError, Run, StaleCheckpointError, export_all, run_pipeline

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="topicgraph", description="Corpus to topic tree to knowledge graph.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="-v for progress, -vv for debug")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check the config and every file it references")
    v.add_argument("config")

    r = sub.add_parser("run", help="run all stages, reusing intact checkpoints")
    r.add_argument("config")
    r.add_argument("--from", dest="from_stage", choices=STAGES, help="recompute this stage and all later ones")

    e = sub.add_parser("export", help="write the finished graph in other formats")
    e.add_argument("config")
    e.add_argument("--format", dest="formats", action="append", choices=sorted(kg.EXPORTERS),
                   help="repeatable; defaults to the config's export.formats")
    e.add_argument("--out", type=Path, help="target directory (default <output_dir>/exports)")

    s = sub.add_parser("stats", help="print per-kind graph counts and per-topic category histograms")
    s.add_argument("config")
    return p


def _require_graph(run: Run) -> None:
    if not (run.stage_dir("graph") / "graph.jsonl").is_file():
        raise StaleCheckpointError(f"no graph checkpoint under {run.out}; run 'topicgraph run' first")


def cmd_validate(cfg: PipelineConfig, args) -> int:
    print(f"config ok; output_dir={cfg.output_dir}")
    return EXIT_OK


def cmd_run(cfg: PipelineConfig, args) -> int:
    result = run_pipeline(cfg, args.from_stage)
    for stage, status in result["report"]:
        print(f"{stage}\t{status}")
    return EXIT_OK


def cmd_export(cfg: PipelineConfig, args) -> int:
    run = Run(cfg)
    _require_graph(run)
    formats = args.formats or cfg.raw["export"]["formats"]
    out = args.out or run.stage_dir("export")
    for p in export_all(run.graph(), run.tree(), run.doc_category(), formats, out):
        print(p)
    return EXIT_OK


def cmd_stats(cfg: PipelineConfig, args) -> int:
    run = Run(cfg)
    _require_graph(run)
    g = run.graph()
    print("kind\tcount")
    for kind, n in g.stats.items():
        print(f"{kind}\t{n}")
    print()
    print("node_id\ttopic\tcategory\tcount")
    doc_category = run.doc_category()
    for node in run.tree().walk():
        for t, counts in hier.category_histograms(node, doc_category).items():
            for cat, n in sorted(counts.items(), key=lambda x: (-x[1], x[0])):
                print(f"{node.node_id}\t{t}\t{cat}\t{n}")
    return EXIT_OK


COMMANDS = {"validate": cmd_validate, "run": cmd_run, "export": cmd_export, "stats": cmd_stats}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = PipelineConfig.load(args.config)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PipelineError, StaleCheckpointError, kg.GraphError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
