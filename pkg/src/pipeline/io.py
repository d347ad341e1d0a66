"""io"""

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from src import rle_mask
from src.errors import InvalidInputError
from src.evaluation import TrackBox
from src.geometry import CameraIntrinsics, DepthMap, GroundPlane, RigidTransform
from src.observations import Proposal

logger = logging.getLogger(__name__)

SCHEMA = "camot/1"

CALIBRATION_FILE = "calibration.json"
EGOMOTION_FILE = "egomotion.jsonl"
GROUND_FILE = "ground.jsonl"
GROUND_TRUTH_FILE = "gt.jsonl"
FRAMES_DIR = "frames"
DEPTH_DIR = "depth"
FLOW_DIR = "flow"

_FRAME_NAME = re.compile(r"^(\d{6})\.jsonl$")


@dataclass(eq=False)
class FrameInput:
    """
    Raw inputs of one frame.

    Attributes:
        frame (int): Frame index.
        proposals (list): Proposal objects in file order.
        ego_motion (RigidTransform): Camera t-1 to camera t.
        ground_plane (GroundPlane, optional): Camera-frame ground plane.
        depth (DepthMap, optional): Depth map.
        flow (np.ndarray, optional): (h, w, 2) planar flow.
    """

    frame: int
    proposals: list
    ego_motion: RigidTransform
    ground_plane: GroundPlane = None
    depth: DepthMap = None
    flow: np.ndarray = None


@dataclass(eq=False)
class SequenceInput:
    """
    One sequence, loaded from its directory or generated in memory.

    Attributes:
        name (str): Sequence name, used for output file names.
        intrinsics (CameraIntrinsics): Camera model.
        width (int): Image columns.
        height (int): Image rows.
        frames (list): FrameInput per frame, zero-indexed and contiguous.
        ground_truth (list, optional): GT rows.
        directory (Path, optional): Where the sequence was read from.
    """

    name: str
    intrinsics: CameraIntrinsics
    width: int
    height: int
    frames: list
    ground_truth: list = None
    directory: Path = None


def _check_schema(record, path, line=None):
    schema = record.get("schema", SCHEMA)
    if schema != SCHEMA:
        raise InvalidInputError(f"unsupported schema {schema!r}, expected {SCHEMA!r}", path, line)


def read_json(path):
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise InvalidInputError("file not found", path) from exc
    except json.JSONDecodeError as exc:
        raise InvalidInputError(exc.msg, path, exc.lineno) from exc
    if not isinstance(data, dict):
        raise InvalidInputError("expected a JSON object", path)
    _check_schema(data, path)
    return data


def write_json(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"schema": SCHEMA, **data}, indent=2, sort_keys=True) + "\n")


def iter_jsonl(path):
    """
    Yields (line number, record) of a JSONL file, skipping blank lines.

    Raises:
        InvalidInputError: Unreadable JSON or a record that is not an object.
    """
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except FileNotFoundError as exc:
        raise InvalidInputError("file not found", path) from exc
    for number, text in enumerate(lines, start=1):
        if not text.strip():
            continue
        try:
            record = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(exc.msg, path, number) from exc
        if not isinstance(record, dict):
            raise InvalidInputError("expected a JSON object", path, number)
        _check_schema(record, path, number)
        yield number, record


def write_jsonl(path, records):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as f:
        for record in records:
            f.write(json.dumps({"schema": SCHEMA, **record}, sort_keys=True, separators=(",", ":")))
            f.write("\n")


def read_calibration(path):
    """
    Returns:
        tuple: (CameraIntrinsics, width, height).
    """
    data = read_json(path)
    try:
        intrinsics = CameraIntrinsics(
            float(data["fx"]), float(data["fy"]), float(data["cx"]), float(data["cy"])
        )
        width, height = int(data["width"]), int(data["height"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"bad calibration: {exc}", path) from exc
    if width <= 0 or height <= 0:
        raise InvalidInputError("image size must be positive", path)
    return intrinsics, width, height


def write_calibration(path, intrinsics, width, height):
    write_json(
        path,
        {
            "fx": intrinsics.fx,
            "fy": intrinsics.fy,
            "cx": intrinsics.cx,
            "cy": intrinsics.cy,
            "width": width,
            "height": height,
        },
    )


def _per_frame(path, parse):
    values = {}
    for number, record in iter_jsonl(path):
        try:
            frame = int(record["frame"])
            value = parse(record)
        except InvalidInputError as exc:
            raise InvalidInputError(exc.message, path, number) from exc
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"bad record: {exc}", path, number) from exc
        if frame in values:
            raise InvalidInputError(f"frame {frame} listed twice", path, number)
        values[frame] = value
    return values


def read_egomotion(path):
    """frame -> RigidTransform (camera t-1 to camera t)."""
    return _per_frame(path, RigidTransform.from_dict)


def read_ground(path):
    """frame -> camera-frame GroundPlane."""
    return _per_frame(path, GroundPlane.from_dict)


def _read_grid(path, tag, channels):
    path = Path(path)
    raw = path.read_bytes()
    header, sep, body = raw.partition(b"\n")
    parts = header.decode("ascii", errors="replace").split()
    if not sep or len(parts) != 3 or parts[0] != tag:
        raise InvalidInputError(f'expected header "{tag} <h> <w>"', path, 1)
    try:
        height, width = int(parts[1]), int(parts[2])
    except ValueError as exc:
        raise InvalidInputError(f"bad size in header: {exc}", path, 1) from exc
    expected = height * width * channels * 4
    if len(body) != expected:
        raise InvalidInputError(f"expected {expected} bytes of data, found {len(body)}", path)
    values = np.frombuffer(body, dtype="<f4").astype(np.float32)
    return values.reshape((height, width, channels) if channels > 1 else (height, width))


def _write_grid(path, tag, values):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    height, width = values.shape[:2]
    with path.open("wb") as f:
        f.write(f"{tag} {height} {width}\n".encode("ascii"))
        f.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def read_depth(path):
    """Depth file: ASCII header "DEPTH <h> <w>" then h*w little-endian float32."""
    return DepthMap(_read_grid(path, "DEPTH", 1))


def write_depth(path, depth):
    _write_grid(path, "DEPTH", depth.values)


def read_flow(path):
    """Flow file: ASCII header "FLOW <h> <w>" then h*w*2 little-endian float32 (dx, dz)."""
    return _read_grid(path, "FLOW", 2).astype(float)


def write_flow(path, flow):
    _write_grid(path, "FLOW", flow)


def parse_proposal(record, index):
    """
    One frame-file record to a Proposal.

    Records: {"mask": {"size", "counts"}, "score", "pos"?, "vel"?, "class_scores"?}.
    """
    try:
        mask = rle_mask.RleMask.from_dict(record["mask"])
        score = float(record["score"])
    except KeyError as exc:
        raise InvalidInputError(f"missing field {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise InvalidInputError(f"bad proposal: {exc}") from exc
    pos = record.get("pos")
    vel = record.get("vel")
    if pos is not None and len(pos) != 3:
        raise InvalidInputError("pos needs 3 values")
    if vel is not None and len(vel) != 2:
        raise InvalidInputError("vel needs 2 values")
    class_scores = record.get("class_scores")
    if class_scores is not None:
        class_scores = {str(k): float(v) for k, v in class_scores.items()}
        if any(not 0.0 <= v <= 1.0 for v in class_scores.values()):
            raise InvalidInputError("class scores must lie in [0, 1]")
    return Proposal(
        mask,
        score,
        pos=None if pos is None else np.asarray(pos, dtype=float),
        vel=None if vel is None else np.asarray(vel, dtype=float),
        class_scores=class_scores,
        index=index,
    )


def proposal_to_dict(proposal):
    record = {"mask": proposal.mask.to_dict(), "score": proposal.score}
    if proposal.pos is not None:
        record["pos"] = [float(v) for v in proposal.pos]
    if proposal.vel is not None:
        record["vel"] = [float(v) for v in proposal.vel]
    if proposal.class_scores:
        record["class_scores"] = dict(proposal.class_scores)
    return record


def read_frame(path):
    proposals = []
    for number, record in iter_jsonl(path):
        try:
            proposals.append(parse_proposal(record, len(proposals)))
        except InvalidInputError as exc:
            raise InvalidInputError(exc.message, path, number) from exc
    return proposals


def frame_name(frame, suffix):
    return f"{frame:06d}{suffix}"


def read_sequence(directory):
    """
    Loads a sequence directory.

    Layout: calibration.json, egomotion.jsonl, frames/NNNNNN.jsonl and
    optionally ground.jsonl, depth/NNNNNN.depth, flow/NNNNNN.flow, gt.jsonl.

    Raises:
        InvalidInputError: Missing or malformed files, no frames, or frame
            files that are not contiguous from 000000.
    """
    directory = Path(directory)
    frames_dir = directory / FRAMES_DIR
    if not frames_dir.is_dir():
        raise InvalidInputError("no frames directory", frames_dir)
    matches = (_FRAME_NAME.match(p.name) for p in frames_dir.iterdir())
    indices = sorted(int(m.group(1)) for m in matches if m)
    if not indices:
        raise InvalidInputError("sequence has no frames", frames_dir)
    if indices != list(range(len(indices))):
        raise InvalidInputError("frame files must be contiguous and start at 000000", frames_dir)
    intrinsics, width, height = read_calibration(directory / CALIBRATION_FILE)
    egomotion = read_egomotion(directory / EGOMOTION_FILE)
    ground = read_ground(directory / GROUND_FILE) if (directory / GROUND_FILE).is_file() else {}
    frames = []
    for frame in indices:
        if frame not in egomotion:
            raise InvalidInputError(f"no ego-motion for frame {frame}", directory / EGOMOTION_FILE)
        depth_path = directory / DEPTH_DIR / frame_name(frame, ".depth")
        flow_path = directory / FLOW_DIR / frame_name(frame, ".flow")
        depth = read_depth(depth_path) if depth_path.is_file() else None
        flow = read_flow(flow_path) if flow_path.is_file() else None
        if depth is not None and depth.shape != (height, width):
            raise InvalidInputError(f"depth size {depth.shape} differs from image size", depth_path)
        if flow is not None and flow.shape[:2] != (height, width):
            raise InvalidInputError(f"flow size {flow.shape[:2]} differs from image size", flow_path)
        frames.append(
            FrameInput(
                frame,
                read_frame(frames_dir / frame_name(frame, ".jsonl")),
                egomotion[frame],
                ground_plane=ground.get(frame),
                depth=depth,
                flow=flow,
            )
        )
    gt_path = directory / GROUND_TRUTH_FILE
    ground_truth = read_ground_truth(gt_path) if gt_path.is_file() else None
    logger.info("read sequence %s: %d frames", directory.name, len(frames))
    return SequenceInput(directory.name, intrinsics, width, height, frames, ground_truth, directory)


def write_sequence(sequence, directory):
    """Writes a sequence in the layout `read_sequence` expects."""
    directory = Path(directory)
    write_calibration(directory / CALIBRATION_FILE, sequence.intrinsics, sequence.width, sequence.height)
    write_jsonl(
        directory / EGOMOTION_FILE,
        ({"frame": f.frame, **f.ego_motion.to_dict()} for f in sequence.frames),
    )
    planes = [
        {"frame": f.frame, **f.ground_plane.to_dict()} for f in sequence.frames if f.ground_plane is not None
    ]
    if planes:
        write_jsonl(directory / GROUND_FILE, planes)
    for f in sequence.frames:
        write_jsonl(directory / FRAMES_DIR / frame_name(f.frame, ".jsonl"), map(proposal_to_dict, f.proposals))
        if f.depth is not None:
            write_depth(directory / DEPTH_DIR / frame_name(f.frame, ".depth"), f.depth)
        if f.flow is not None:
            write_flow(directory / FLOW_DIR / frame_name(f.frame, ".flow"), f.flow)
    if sequence.ground_truth is not None:
        write_jsonl(directory / GROUND_TRUTH_FILE, sequence.ground_truth)
    logger.info("wrote sequence %s to %s", sequence.name, directory)


def read_ground_truth(path):
    """GT rows {frame, id, label, bbox: [x, y, w, h], pos?: [x, y, z]}."""
    rows = []
    for number, record in iter_jsonl(path):
        try:
            row = {
                "frame": int(record["frame"]),
                "id": int(record["id"]),
                "label": record.get("label"),
                "bbox": [float(v) for v in record["bbox"]],
            }
            if len(row["bbox"]) != 4:
                raise ValueError("bbox needs 4 values")
            if record.get("pos") is not None:
                row["pos"] = [float(v) for v in record["pos"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"bad ground truth row: {exc}", path, number) from exc
        rows.append(row)
    return rows


def read_tracks(path):
    """Track rows as TrackBox objects for evaluation."""
    boxes = []
    for number, record in iter_jsonl(path):
        try:
            boxes.append(
                TrackBox(
                    int(record["frame"]),
                    int(record["id"]),
                    tuple(float(v) for v in record["bbox"]),
                    record.get("label"),
                    None if record.get("distance") is None else float(record["distance"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"bad track row: {exc}", path, number) from exc
    return boxes


def read_track_rows(path):
    """Track rows as plain records, masks decoded."""
    rows = []
    for number, record in iter_jsonl(path):
        try:
            record["mask"] = rle_mask.RleMask.from_dict(record["mask"])
        except KeyError as exc:
            raise InvalidInputError("track row without mask", path, number) from exc
        except InvalidInputError as exc:
            raise InvalidInputError(exc.message, path, number) from exc
        rows.append(record)
    return rows
