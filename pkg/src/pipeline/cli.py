"""cli"""

import argparse
import csv
import logging
import sys
from pathlib import Path

from src.errors import CamotError, InvalidInputError
from src.evaluation import CSV_FIELDS, EvalConfig, clear_mot, group_ground_truth
from src.pipeline import io
from src.pipeline.config import PipelineParams
from src.pipeline.render import render_sequence
from src.pipeline.runner import run_sequence, run_sequences
from src.pipeline.tuning import TuneSpec, tune
from src.synthetic import generate, load_scenario
from src.utils import configure_logging

logger = logging.getLogger(__name__)


def _load_params(path):
    return PipelineParams.load(path) if path else PipelineParams()


def cmd_track(args):
    params = _load_params(args.params)
    if args.workers is not None:
        params = params.with_updates({"runner.workers": args.workers})
    if len(args.inputs) == 1:
        sequence = io.read_sequence(args.inputs[0])
        result = run_sequence(sequence, params, progress=True)
        result.write(args.out, args.diagnostics)
        print(f"{len(result.rows)} track rows written to {args.out}")
        return 0
    paths = run_sequences(args.inputs, params, args.out, diagnostics=bool(args.diagnostics), progress=True)
    print(f"{len(paths)} track files written to {args.out}")
    return 0


def _load_eval_config(path):
    if not path:
        return EvalConfig()
    data = io.read_json(path)
    data.pop("schema", None)
    try:
        return EvalConfig(**data)
    except TypeError as exc:
        raise InvalidInputError(f"bad evaluation config: {exc}", path) from exc


def cmd_eval(args):
    config = _load_eval_config(args.config)
    tracks = io.read_tracks(args.tracks)
    ground_truth = group_ground_truth(io.read_ground_truth(args.gt))
    result = clear_mot(tracks, ground_truth, config)
    print(result.format_table())
    if args.out:
        io.write_json(args.out, result.to_dict())
    if args.csv:
        with open(args.csv, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["category", "range", *CSV_FIELDS])
            writer.writerows(result.csv_rows())
    return 0


def cmd_tune(args):
    spec = TuneSpec.load(args.spec)
    result = tune(spec, progress=True)
    result.best_params.save(args.out)
    log_path = args.log or str(Path(args.out).with_suffix(".trials.jsonl"))
    io.write_jsonl(log_path, result.trials)
    print(f"best objective {result.best_value:.6f}; parameters written to {args.out}")
    return 0


def cmd_synth(args):
    bundle = generate(load_scenario(args.scenario))
    io.write_sequence(bundle.sequence, args.out)
    print(f"scenario {bundle.sequence.name} written to {args.out}")
    return 0


def cmd_render(args):
    sequence = io.read_sequence(args.inputs)
    rows = io.read_track_rows(args.tracks)
    written = render_sequence(sequence, rows, args.out, progress=True)
    print(f"{len(written)} images written to {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="camot", description="Category-agnostic multi-object tracking.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug")
    sub = parser.add_subparsers(dest="command", required=True)

    track = sub.add_parser("track", help="track one or more sequence directories")
    track.add_argument("--in", dest="inputs", nargs="+", required=True, help="sequence directories")
    track.add_argument("--params", help="parameter file")
    track.add_argument("--out", required=True, help="tracks file, or output directory for several inputs")
    track.add_argument("--diagnostics", help="per-frame diagnostics file")
    track.add_argument("--workers", type=int, help="parallel sequences")
    track.set_defaults(func=cmd_track)

    evaluate = sub.add_parser("eval", help="CLEAR MOT metrics of a tracks file")
    evaluate.add_argument("--tracks", required=True)
    evaluate.add_argument("--gt", required=True)
    evaluate.add_argument("--config", help="evaluation config file")
    evaluate.add_argument("--out", help="JSON report")
    evaluate.add_argument("--csv", help="per-bin CSV")
    evaluate.set_defaults(func=cmd_eval)

    tuning = sub.add_parser("tune", help="random search over hyperparameters")
    tuning.add_argument("--spec", required=True)
    tuning.add_argument("--out", required=True, help="best parameter file")
    tuning.add_argument("--log", help="trial log, defaults next to --out")
    tuning.set_defaults(func=cmd_tune)

    synth = sub.add_parser("synth", help="write a synthetic sequence")
    synth.add_argument("--scenario", required=True, help="catalog name or scenario file")
    synth.add_argument("--out", required=True)
    synth.set_defaults(func=cmd_synth)

    render = sub.add_parser("render", help="mask overlay images of a tracks file")
    render.add_argument("--in", dest="inputs", required=True)
    render.add_argument("--tracks", required=True)
    render.add_argument("--out", required=True)
    render.set_defaults(func=cmd_render)
    return parser


def main(argv=None):
    """
    Command line entry point.

    Returns:
        int: 0 on success, 1 on invalid input, 2 on an internal error.
    """
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        return args.func(args)
    except InvalidInputError as exc:
        logger.error("%s", exc)
        return exc.exit_code
    except CamotError as exc:
        logger.error("internal error: %s", exc)
        return exc.exit_code
    except OSError as exc:
        logger.error("internal error: %s", exc)
        return CamotError.exit_code


if __name__ == "__main__":
    sys.exit(main())
