"""evaluation"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from src.errors import InvalidInputError
from src.utils import box_iou, decay_weight

logger = logging.getLogger(__name__)

COVERAGE_WINDOW = 6
CSV_FIELDS = ("gt", "tp", "fp", "fn", "idsw", "mota", "moda", "recall", "precision")


@dataclass(eq=False)
class GroundTruthTrack:
    """
    One annotated object.

    Attributes:
        id (int): Object id.
        label (str): Category label.
        boxes (dict): frame -> (x, y, w, h).
        positions (dict): frame -> (x, y, z) in the camera frame of that frame.
        flags (dict): frame -> dict of optional occlusion/truncation flags.
    """

    id: int
    label: str = None
    boxes: dict = field(default_factory=dict)
    positions: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)

    def add(self, frame, bbox, pos=None, flags=None):
        if frame in self.boxes:
            raise InvalidInputError(f"duplicate ground truth entry for id {self.id} at frame {frame}")
        self.boxes[frame] = tuple(float(v) for v in bbox)
        if pos is not None:
            self.positions[frame] = np.asarray(pos, dtype=float)
        if flags:
            self.flags[frame] = dict(flags)

    def box_at(self, frame):
        return self.boxes.get(frame)

    def distance_at(self, frame):
        pos = self.positions.get(frame)
        return None if pos is None else float(np.linalg.norm(pos))


def group_ground_truth(rows):
    """
    Groups GT rows `{frame, id, label, bbox, pos?}` into tracks.

    Returns:
        list: GroundTruthTrack objects ordered by id.

    Raises:
        InvalidInputError: On a repeated (id, frame) pair or a label change.
    """
    tracks = {}
    for row in rows:
        gt_id = int(row["id"])
        track = tracks.setdefault(gt_id, GroundTruthTrack(gt_id, row.get("label")))
        if row.get("label") != track.label:
            raise InvalidInputError(f"ground truth id {gt_id} changes label")
        track.add(int(row["frame"]), row["bbox"], row.get("pos"), row.get("flags"))
    return [tracks[k] for k in sorted(tracks)]


@dataclass(frozen=True)
class TrackBox:
    """One reported track at one frame, as needed for evaluation."""

    frame: int
    id: int
    bbox: tuple
    label: str = None
    distance: float = None


@dataclass
class EvalConfig:
    """
    Attributes:
        iou_threshold (float): Minimal box IoU of a match.
        distance_bins (list): Increasing bin edges in meters; the last bin
            is open-ended.
        categories (list): Categories evaluated separately.
        lam (float): Decay constant of the temporal coverage.
    """

    iou_threshold: float = 0.5
    distance_bins: list = field(default_factory=lambda: [0.0, 10.0, 20.0, 30.0, 40.0, 50.0])
    categories: list = field(default_factory=list)
    lam: float = 4.0

    def __post_init__(self):
        if not 0.0 < self.iou_threshold <= 1.0:
            raise InvalidInputError(f"iou_threshold must lie in (0, 1], got {self.iou_threshold}")
        if np.any(np.diff(self.distance_bins) <= 0):
            raise InvalidInputError("distance bin edges must be strictly increasing")
        if self.lam <= 0:
            raise InvalidInputError("lam must be positive")

    def bin_of(self, distance):
        if distance is None or not self.distance_bins or distance < self.distance_bins[0]:
            return None
        return int(np.searchsorted(self.distance_bins, distance, side="right")) - 1

    def bin_label(self, index):
        lo = self.distance_bins[index]
        if index + 1 < len(self.distance_bins):
            return f"{lo:g}-{self.distance_bins[index + 1]:g}m"
        return f">={lo:g}m"


@dataclass
class MotMetrics:
    """CLEAR MOT counts and the derived scores."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    idsw: int = 0

    @property
    def gt(self):
        return self.tp + self.fn

    @property
    def mota(self):
        return 1.0 - (self.fp + self.fn + self.idsw) / max(self.gt, 1)

    @property
    def moda(self):
        return 1.0 - (self.fp + self.fn) / max(self.gt, 1)

    @property
    def recall(self):
        return self.tp / self.gt if self.gt else 0.0

    @property
    def precision(self):
        reported = self.tp + self.fp
        return self.tp / reported if reported else 1.0

    def __iadd__(self, other):
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        self.idsw += other.idsw
        return self

    def to_dict(self):
        return {
            "gt": self.gt,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "idsw": self.idsw,
            "mota": self.mota,
            "moda": self.moda,
            "recall": self.recall,
            "precision": self.precision,
        }


@dataclass
class MotReport:
    """Overall metrics plus per distance bin."""

    overall: MotMetrics
    bins: list
    bin_labels: list

    def to_dict(self):
        return {
            "overall": self.overall.to_dict(),
            "bins": [{"range": label, **m.to_dict()} for label, m in zip(self.bin_labels, self.bins)],
        }


@dataclass
class EvaluationResult:
    overall: MotReport
    categories: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "schema": "camot/1",
            "overall": self.overall.to_dict(),
            "categories": {k: v.to_dict() for k, v in self.categories.items()},
        }

    def format_table(self):
        """Human-readable summary, one line per report and bin."""
        header = (
            f"{'scope':<22}{'GT':>6}{'TP':>6}{'FP':>6}{'FN':>6}{'IDSW':>6}"
            f"{'MOTA':>8}{'MODA':>8}{'Rec':>7}{'Prec':>7}"
        )
        lines = [header, "-" * len(header)]
        reports = [("all", self.overall)] + sorted(self.categories.items())
        for name, report in reports:
            rows = [(name, report.overall)]
            rows += [(f"  {label}", m) for label, m in zip(report.bin_labels, report.bins)]
            for scope, m in rows:
                lines.append(
                    f"{scope:<22}{m.gt:>6}{m.tp:>6}{m.fp:>6}{m.fn:>6}{m.idsw:>6}"
                    f"{m.mota:>8.3f}{m.moda:>8.3f}{m.recall:>7.3f}{m.precision:>7.3f}"
                )
        return "\n".join(lines)

    def csv_rows(self):
        """Rows of (category, range, metrics...) for plotting by distance."""
        rows = []
        reports = [("all", self.overall)] + sorted(self.categories.items())
        for name, report in reports:
            for label, m in zip(report.bin_labels, report.bins):
                d = m.to_dict()
                rows.append([name, label] + [d[k] for k in CSV_FIELDS])
        return rows


def _match_frame(gt_items, track_items, last_match, threshold):
    # gt_items: [(gt_id, bbox)], track_items: [(track_id, bbox)]; returns {gt_id: track_id}
    ious = np.array([[box_iou(g, t) for _, t in track_items] for _, g in gt_items]).reshape(
        len(gt_items), len(track_items)
    )
    track_col = {tid: j for j, (tid, _) in enumerate(track_items)}
    matches = {}
    used = set()
    for i, (gt_id, _) in enumerate(gt_items):
        j = track_col.get(last_match.get(gt_id))
        if j is not None and j not in used and ious[i, j] >= threshold:
            matches[gt_id] = track_items[j][0]
            used.add(j)
    pairs = sorted(
        (
            (-ious[i, j], gt_items[i][0], track_items[j][0], i, j)
            for i in range(len(gt_items))
            for j in range(len(track_items))
            if ious[i, j] >= threshold
        ),
    )
    for _, gt_id, tid, i, j in pairs:
        if gt_id in matches or j in used:
            continue
        matches[gt_id] = tid
        used.add(j)
    return matches


def _clear_mot_subset(tracks_by_frame, gt_by_frame, others_by_frame, config):
    n_bins = len(config.distance_bins)
    overall = MotMetrics()
    bins = [MotMetrics() for _ in range(n_bins)]
    last_match = {}
    frames = sorted(set(tracks_by_frame) | set(gt_by_frame))

    def count(metric_name, distance):
        setattr(overall, metric_name, getattr(overall, metric_name) + 1)
        b = config.bin_of(distance)
        if b is not None:
            setattr(bins[b], metric_name, getattr(bins[b], metric_name) + 1)

    for frame in frames:
        gts = gt_by_frame.get(frame, [])
        trs = tracks_by_frame.get(frame, [])
        matches = _match_frame(
            [(g.id, g.box_at(frame)) for g in gts],
            [(t.id, t.bbox) for t in trs],
            last_match,
            config.iou_threshold,
        )
        matched_tracks = set(matches.values())
        for g in gts:
            distance = g.distance_at(frame)
            tid = matches.get(g.id)
            if tid is None:
                count("fn", distance)
                continue
            count("tp", distance)
            if g.id in last_match and last_match[g.id] != tid:
                count("idsw", distance)
            last_match[g.id] = tid
        others = others_by_frame.get(frame, [])
        for t in trs:
            if t.id in matched_tracks:
                continue
            if any(box_iou(t.bbox, o.box_at(frame)) >= config.iou_threshold for o in others):
                continue
            count("fp", t.distance)
    labels = [config.bin_label(i) for i in range(n_bins)]
    return MotReport(overall, bins, labels)


def _index_gt(ground_truth):
    by_frame = defaultdict(list)
    for g in ground_truth:
        for frame in g.boxes:
            by_frame[frame].append(g)
    return by_frame


def _index_tracks(tracks):
    by_frame = defaultdict(list)
    seen = set()
    for t in tracks:
        if (t.frame, t.id) in seen:
            raise InvalidInputError(f"track {t.id} reported twice at frame {t.frame}")
        seen.add((t.frame, t.id))
        by_frame[t.frame].append(t)
    return by_frame


def clear_mot(tracks, ground_truth, config):
    """
    CLEAR MOT metrics, overall and per configured category.

    Matching per frame keeps last frame's correspondences that still reach
    the IoU threshold, then adds pairs greedily by descending IoU. A ground
    truth object matched to a different track than on its last match is an
    ID switch. Frames without ground truth count as zero-GT frames.

    For a category, ground truth of other categories is removed, tracks
    labelled with another category are ignored, and unmatched tracks that
    cover removed ground truth are not false positives.

    Args:
        tracks (list): TrackBox rows.
        ground_truth (list): GroundTruthTrack objects.
        config (EvalConfig): Thresholds and bins.

    Returns:
        EvaluationResult: Overall report and per-category reports.
    """
    tracks_by_frame = _index_tracks(tracks)
    result = EvaluationResult(_clear_mot_subset(tracks_by_frame, _index_gt(ground_truth), {}, config))
    for category in config.categories:
        own = [g for g in ground_truth if g.label == category]
        other = [g for g in ground_truth if g.label != category]
        subset = defaultdict(list)
        for frame, rows in tracks_by_frame.items():
            subset[frame] = [t for t in rows if t.label is None or t.label == category]
        result.categories[category] = _clear_mot_subset(subset, _index_gt(own), _index_gt(other), config)
    logger.info(
        "MOTA %.4f MODA %.4f over %d ground truth boxes",
        result.overall.overall.mota,
        result.overall.overall.moda,
        result.overall.overall.gt,
    )
    return result


def temporal_coverage(hypotheses, gt_track, t, lam):
    """
    Best decayed box overlap of any hypothesis with one GT object.

    Σ over the six frames t-5..t of exp((τ - t)/λ) * IoU(box_h, box_gt),
    frames where either box is missing contribute 0.

    Args:
        hypotheses (iterable): Objects with `box_at(frame)`.
        gt_track (GroundTruthTrack): Object to cover.
        t (int): Current frame.
        lam (float): Decay constant.

    Returns:
        float: Maximum over hypotheses, 0 without any.
    """
    frames = range(t - COVERAGE_WINDOW + 1, t + 1)
    weights = [float(decay_weight(tau, t, lam)) for tau in frames]
    best = 0.0
    for h in hypotheses:
        total = 0.0
        for tau, weight in zip(frames, weights):
            gt_box = gt_track.box_at(tau)
            box = h.box_at(tau)
            if gt_box is not None and box is not None:
                total += weight * box_iou(box, gt_box)
        best = max(best, total)
    return best


@dataclass(eq=False)
class CoverageCandidate:
    """A live hypothesis as seen by the coverage objective at one frame."""

    id: int
    unary: float
    boxes: dict

    def box_at(self, frame):
        return self.boxes.get(frame)


def top_k(candidates, k):
    """The k best-scoring candidates (lowest unary, ties by id)."""
    if k <= 0:
        return []
    return sorted(candidates, key=lambda c: (c.unary, c.id))[:k]


def coverage_objective(snapshots, ground_truth, k, lam):
    """
    Mean temporal coverage over every (GT object, frame) pair.

    Args:
        snapshots (dict): frame -> list of CoverageCandidate.
        ground_truth (list): GroundTruthTrack objects.
        k (int): Hypotheses eligible per frame.
        lam (float): Decay constant.

    Returns:
        float: The objective, 0 without pairs.
    """
    values = []
    for gt_track in ground_truth:
        for t in sorted(gt_track.boxes):
            eligible = top_k(snapshots.get(t, []), k)
            values.append(temporal_coverage(eligible, gt_track, t, lam))
    return float(np.mean(values)) if values else 0.0
