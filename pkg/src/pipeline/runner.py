"""runner"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from tqdm import tqdm

from src.errors import InvalidInputError, NoPlaneError
from src.evaluation import COVERAGE_WINDOW, CoverageCandidate
from src.geometry import RigidTransform, bbox_3d, fit_ground_plane, lift_mask
from src.inference import PairwiseCache, select, track_label, unary
from src.observations import FrameContext, FrameReport, build_observation_set
from src.pipeline.config import PipelineParams
from src.pipeline.io import read_sequence, write_jsonl
from src.tracker import Tracker
from src.utils import show_progress

logger = logging.getLogger(__name__)

# ground normals further than this from vertical are not accepted from RANSAC
MIN_NORMAL_VERTICAL = 0.8


@dataclass(eq=False)
class SequenceResult:
    """
    Output of one sequence run.

    Attributes:
        name (str): Sequence name.
        rows (list): Track rows in frame order, ids ascending within a frame.
        diagnostics (list): One record per frame.
        snapshots (dict): frame -> CoverageCandidate list, when recorded.
        peak_hypotheses (int): Largest live hypothesis count.
    """

    name: str
    rows: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    snapshots: dict = None
    peak_hypotheses: int = 0

    def write(self, tracks_path, diagnostics_path=None):
        write_jsonl(tracks_path, self.rows)
        if diagnostics_path is not None:
            write_jsonl(diagnostics_path, self.diagnostics)


def estimate_ground_plane(frame_input, intrinsics, runner_params):
    """
    RANSAC ground plane from the depth pixels below the principal point.

    Returns:
        GroundPlane or None: None when the fit fails or is not near-horizontal.
    """
    depth = frame_input.depth
    rows, cols = np.nonzero(depth.valid())
    below = rows > intrinsics.cy
    rows, cols = rows[below], cols[below]
    if len(rows) < 3:
        return None
    rng = np.random.default_rng(runner_params.seed + frame_input.frame)
    if len(rows) > runner_params.ransac_samples:
        pick = np.sort(rng.choice(len(rows), size=runner_params.ransac_samples, replace=False))
        rows, cols = rows[pick], cols[pick]
    points = intrinsics.backproject(cols, rows, depth.values[rows, cols])
    try:
        plane = fit_ground_plane(
            points,
            runner_params.ransac_iterations,
            runner_params.ransac_threshold,
            seed=runner_params.seed + frame_input.frame,
        )
    except NoPlaneError as exc:
        logger.warning("frame %d: ground plane fit failed (%s)", frame_input.frame, exc)
        return None
    if abs(plane.normal[1]) < MIN_NORMAL_VERTICAL:
        logger.warning("frame %d: fitted plane is not horizontal, ignored", frame_input.frame)
        return None
    return plane


def _track_row(h, ctx, t, params):
    tf = h.frames[-1]
    world_to_cam = ctx.world_to_cam
    row = {
        "frame": t,
        "id": h.id,
        "mask": tf.mask.to_dict(),
        "bbox": [int(v) for v in tf.bbox],
        "pos": [round(float(v), 6) for v in tf.pos],
        "vel": [round(float(v), 6) for v in tf.vel],
        "distance": round(float(np.linalg.norm(world_to_cam.apply(tf.pos))), 6),
        "label": track_label(h, t, params.inference),
        "predicted": tf.mask_is_predicted,
    }
    if ctx.depth is not None:
        extent = bbox_3d(lift_mask(tf.mask, ctx.depth, ctx.intrinsics))
        if extent is not None:
            row["bbox_3d"] = {
                "min": [round(float(v), 6) for v in extent[0]],
                "max": [round(float(v), 6) for v in extent[1]],
            }
    return row


def run_sequence(sequence, params, record_coverage=False, progress=False):
    """
    Tracks one sequence.

    Per frame: observations are built, the tracker steps, inference selects
    the hypotheses to report, and one row per selected hypothesis is
    emitted with its persistent id.

    Args:
        sequence (SequenceInput): Inputs.
        params (PipelineParams): Hyperparameters.
        record_coverage (bool): Keep per-frame coverage snapshots.
        progress (bool): Show a progress bar on a terminal.

    Returns:
        SequenceResult: Rows, diagnostics and optional snapshots.

    Raises:
        InvalidInputError: Empty or inconsistent inputs.
    """
    if not sequence.frames:
        raise InvalidInputError(f"sequence {sequence.name} has no frames", sequence.directory)
    logger.info("sequence %s: %d frames", sequence.name, len(sequence.frames))
    tracker = Tracker(params.tracker, params.inference)
    cache = PairwiseCache()
    result = SequenceResult(sequence.name, snapshots={} if record_coverage else None)
    cam_to_world = RigidTransform.identity()
    frames = tqdm(
        sequence.frames,
        desc=sequence.name,
        unit="frame",
        disable=not show_progress(progress),
    )
    for position, frame_input in enumerate(frames):
        t = frame_input.frame
        if position:
            cam_to_world = cam_to_world.compose(frame_input.ego_motion.inverse())
        plane = frame_input.ground_plane
        if plane is None and frame_input.depth is not None and params.runner.fit_ground_plane:
            plane = estimate_ground_plane(frame_input, sequence.intrinsics, params.runner)
        ctx = FrameContext(
            t,
            frame_input.ego_motion,
            sequence.intrinsics,
            sequence.height,
            sequence.width,
            ground_plane=plane,
            depth=frame_input.depth,
            flow=frame_input.flow,
            cam_to_world=cam_to_world,
        )
        report = FrameReport(t)
        observations = build_observation_set(frame_input.proposals, ctx, params.observations, report)
        step = tracker.step(observations, ctx)
        hypotheses = tracker.hypotheses
        selection = select(hypotheses, t, params.inference, cache)
        cache.retain(h.id for h in hypotheses)
        chosen = sorted((hypotheses[i] for i in selection.selected()), key=lambda h: h.id)
        result.rows.extend(_track_row(h, ctx, t, params) for h in chosen)
        result.peak_hypotheses = max(result.peak_hypotheses, len(hypotheses))
        result.diagnostics.append(
            {
                "frame": t,
                "observations": report.to_dict(),
                "hypotheses": step.to_dict(),
                "solver": selection.solver,
                "energy": selection.energy,
                "selected": [h.id for h in chosen],
                "bitmask": "".join("1" if b else "0" for b in selection.bits),
            }
        )
        if record_coverage:
            result.snapshots[t] = [
                CoverageCandidate(
                    h.id,
                    unary(h, t, params.inference),
                    {f.frame: f.bbox for f in h.frames[-COVERAGE_WINDOW:]},
                )
                for h in hypotheses
            ]
    logger.info(
        "sequence %s done: %d rows, %d track ids, peak %d hypotheses",
        sequence.name,
        len(result.rows),
        len({row["id"] for row in result.rows}),
        result.peak_hypotheses,
    )
    return result


def _run_directory(directory, params_dict, out_dir, diagnostics):
    # worker entry point; only plain data crosses the process boundary
    params = PipelineParams.from_dict(params_dict)
    sequence = read_sequence(directory)
    result = run_sequence(sequence, params)
    tracks_path = Path(out_dir) / f"{sequence.name}.jsonl"
    diagnostics_path = Path(out_dir) / f"{sequence.name}.diagnostics.jsonl" if diagnostics else None
    result.write(tracks_path, diagnostics_path)
    return str(tracks_path)


def run_sequences(directories, params, out_dir, diagnostics=False, progress=False):
    """
    Runs several sequence directories on a bounded process pool.

    Each sequence writes `<name>.jsonl` (and optionally
    `<name>.diagnostics.jsonl`) into `out_dir`; outputs do not depend on the
    worker count.

    Returns:
        list: Track file paths in input order.
    """
    directories = [str(d) for d in directories]
    names = [Path(d).name for d in directories]
    if len(set(names)) != len(names):
        raise InvalidInputError("sequence directory names must be unique")
    params_dict = params.to_dict()
    workers = min(params.runner.workers, len(directories)) or 1
    if workers == 1:
        return [_run_directory(d, params_dict, out_dir, diagnostics) for d in directories]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_directory, d, params_dict, out_dir, diagnostics) for d in directories]
        return [
            f.result()
            for f in tqdm(futures, desc="sequences", unit="seq", disable=not show_progress(progress))
        ]
