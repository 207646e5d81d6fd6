#!/usr/bin/env python3
"""
Harmonic Map Flow Lab - Main Entry Point

Subcommands:
    simulate <config>                                  integrate the flow into a run directory
    verify poincare|lojasiewicz|monotonicity <source>  certificates over a corpus or a run
    bubbles <run-dir>                                  bubble reports and the energy-identity table
    sweep <config> --param key=v1,v2,...               one run per parameter value
    corpus --seed S --out DIR                          write the seeded test corpus
    preset <name>                                      run a named experiment end to end

Exit codes: 0 all executed checks passed (or were degenerate / not-applicable),
2 at least one check failed, 1 on errors and aborted runs.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

# Add src to path
sys.path.insert(0, str(Path(__file__).parent))

from config import settings
from src.experiments.config_parser import parse_config
from src.experiments.corpus import generate_corpus, write_corpus
from src.experiments.presets import PRESETS, preset_names, run_preset
from src.experiments.run_store import read_certificates
from src.experiments.workflows import (
    EXIT_ERROR,
    EXIT_OK,
    bubbles,
    simulate,
    sweep,
    verify_lojasiewicz,
    verify_monotonicity,
    verify_poincare,
)
from src.fields.sphere_field import Grid

logger = logging.getLogger(__name__)

BANNER = "=" * 70


def _overrides(args) -> dict:
    return {"grid.N": args.grid_n} if args.grid_n else {}


def _out_dir(args, default: Path) -> Path:
    return Path(args.out) if args.out else default


def _print_certificates(path: Path, limit: int = 40):
    certificates = read_certificates(path)
    print(f"\n{'inequality':<16} {'status':<15} {'ratio':>12}  tag")
    print("-" * 70)
    for certificate in certificates[:limit]:
        tag = certificate.metadata.get("tag", "")
        print(f"{certificate.inequality_id:<16} {certificate.status:<15} {certificate.ratio:>12.5g}  {tag}")
    if len(certificates) > limit:
        print(f"... {len(certificates) - limit} more in {path}")


def cmd_simulate(args) -> int:
    config, init = parse_config(args.config, _overrides(args))
    out_dir = _out_dir(args, settings.OUTPUT_DIR / Path(args.config).stem)
    flow_run = simulate(config, init, out_dir)
    final = flow_run.records[-1]
    print(f"\n✓ Run written to {out_dir}")
    print(f"   Mode: {flow_run.mode}, dt={flow_run.dt:.3e}, records={len(flow_run.records)}")
    print(f"   Stop: {flow_run.stop_reason} at t={flow_run.t_stop:.6g}")
    print(f"   Energy: {final.energy:.6f}, max|du|: {final.max_du:.4g}")
    return EXIT_OK


def cmd_verify(args) -> int:
    out_dir = _out_dir(args, settings.OUTPUT_DIR / f"verify_{args.kind}")
    if args.kind == "poincare":
        status, summary = verify_poincare(args.source, out_dir, jobs=args.jobs)
        _print_certificates(out_dir / "poincare.jsonl")
    elif args.kind == "lojasiewicz":
        status, summary = verify_lojasiewicz(args.source, out_dir)
        _print_certificates(out_dir / "lojasiewicz.jsonl")
    else:
        status, summary = verify_monotonicity(args.source, out_dir)
        print(f"\n   Phi residual (mean): {summary['residual_phi_mean']:.3e}")
        print(f"   Psi residual (mean): {summary['residual_psi_mean']:.3e}")
    print(f"\n{BANNER}\nSummary ({args.kind}): {summary.get('statuses', summary.get('status'))}\n{BANNER}")
    return status


def cmd_bubbles(args) -> int:
    out_dir = _out_dir(args, Path(args.run_dir))
    status, report = bubbles(args.run_dir, out_dir)
    print(f"\nBubbles at t={report['t']:.6g}:")
    for bubble in report["bubbles"]:
        print(
            f"   • center={tuple(round(c, 4) for c in bubble['center'])} scale={bubble['scale']:.4g} "
            f"degree={bubble['degree_estimate']} energy={bubble['energy']:.5f}"
        )
    print(f"\n{'r':>12} {'E_inner':>12} {'sum_bubbles':>12} {'gap':>10}")
    for row in report["rows"]:
        print(f"{row['r']:>12.5g} {row['E_inner']:>12.6f} {row['sum_bubbles']:>12.6f} {row['gap']:>10.4f}")
    print(f"\nPlateau gap: {report['gap']:.3%} ({report['status']})")
    return status


def cmd_sweep(args) -> int:
    key, sep, values = args.param.partition("=")
    if not sep or not values:
        raise ValueError(f"--param must look like key=v1,v2,... (got {args.param!r})")
    out_dir = _out_dir(args, settings.OUTPUT_DIR / f"sweep_{key}")
    status, rows = sweep(args.config, key, values.split(","), out_dir, _overrides(args), jobs=args.jobs)
    print(f"\n{'value':<14} {'status':<10} {'stop':<14} {'t_stop':>10}")
    for row in rows:
        print(f"{row['value']:<14} {row['status']:<10} {row.get('stop_reason', '-'):<14} {row.get('t_stop', float('nan')):>10.5g}")
    return status


def cmd_corpus(args) -> int:
    grid = Grid(settings.DEFAULT_HALF_WIDTH, args.grid_n or settings.DEFAULT_NODES)
    corpus = generate_corpus(args.seed, grid)
    out_dir = _out_dir(args, settings.OUTPUT_DIR / f"corpus_seed{args.seed}")
    write_corpus(corpus, out_dir)
    print(f"\n✓ {len(corpus)} maps written to {out_dir}")
    return EXIT_OK


def cmd_preset(args) -> int:
    status, out_dir = run_preset(args.name, args.out, args.grid_n, args.jobs, args.seed, args.run)
    print(f"\n{BANNER}\nPreset {args.name}: exit status {status}\nArtifacts: {out_dir}\n{BANNER}")
    return status


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--grid-n", type=int, default=None, help="Nodes per side of the 2-D grid")
    common.add_argument("--out", default=None, help="Output directory")
    common.add_argument("--jobs", type=int, default=settings.JOBS, help="Worker processes")
    common.add_argument("--seed", type=int, default=settings.CORPUS_SEED, help="Corpus seed")

    parser = argparse.ArgumentParser(description="Harmonic map flow laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="Integrate the flow from a YAML config")
    p.add_argument("config")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("verify", parents=[common], help="Certify inequalities on a corpus or run directory")
    p.add_argument("kind", choices=["poincare", "lojasiewicz", "monotonicity"])
    p.add_argument("source")
    p.set_defaults(handler=cmd_verify)

    p = sub.add_parser("bubbles", parents=[common], help="Bubble reports and energy identity of a run")
    p.add_argument("run_dir")
    p.set_defaults(handler=cmd_bubbles)

    p = sub.add_parser("sweep", parents=[common], help="One run per parameter value")
    p.add_argument("config")
    p.add_argument("--param", required=True, help="key=v1,v2,...")
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("corpus", parents=[common], help="Write the seeded test corpus")
    p.set_defaults(handler=cmd_corpus)

    p = sub.add_parser("preset", parents=[common], help=f"Run a preset ({', '.join(preset_names())})")
    p.add_argument("name", choices=sorted(PRESETS))
    p.add_argument("--run", default=None, help="Existing run directory to analyze instead of simulating")
    p.set_defaults(handler=cmd_preset)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    logging.basicConfig(level=settings.LOG_LEVEL, format="%(message)s")
    args = build_parser().parse_args(argv)

    print(f"\n{BANNER}\n🌀 Harmonic Map Flow Lab - {args.command}\n{BANNER}")
    try:
        return args.handler(args)
    except KeyboardInterrupt:
        print("\n\n⚠️  Interrupted by user")
        return EXIT_ERROR
    except Exception as e:
        print(f"\n❌ Error: {e}")
        import traceback
        traceback.print_exc()
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
