"""utils"""

import logging
import sys

import numpy as np

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(verbosity=0):
    """
    Configures the root logger once for command line use.

    Args:
        verbosity (int): 0 for warnings, 1 for info, 2 or more for debug.
    """
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity >= 2:
        level = logging.DEBUG
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def show_progress(progress):
    """Progress bars only make sense on an interactive terminal."""
    return bool(progress) and sys.stderr.isatty()


def decay_weight(frame, t_e, lam):
    """
    Temporal decay factor shared by the potentials and the coverage criterion.

    Args:
        frame (int or np.ndarray): Frame index (or indices).
        t_e (int): Evaluation frame.
        lam (float): Decay constant in frames.

    Returns:
        float or np.ndarray: exp(-|frame - t_e| / lam).
    """
    return np.exp(-np.abs(np.asarray(frame, dtype=float) - t_e) / lam)


def box_iou(a, b):
    """
    Intersection-over-union of two (x, y, w, h) boxes.

    Args:
        a (tuple): First box, pixels.
        b (tuple): Second box, pixels.

    Returns:
        float: IoU in [0, 1]; 0 when both boxes are degenerate.
    """
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    iw = min(ax + aw, bx + bw) - max(ax, bx)
    ih = min(ay + ah, by + bh) - max(ay, by)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    return float(inter / union) if union > 0 else 0.0


def boxes_overlap(a, b):
    """True when two (x, y, w, h) boxes share at least one pixel."""
    return (
        a[0] < b[0] + b[2]
        and b[0] < a[0] + a[2]
        and a[1] < b[1] + b[3]
        and b[1] < a[1] + a[3]
    )


def box_overlap_matrix(box, boxes):
    """
    Vectorized `boxes_overlap` of one box against an (N, 4) array.

    Args:
        box (tuple): (x, y, w, h).
        boxes (np.ndarray): (N, 4) array of (x, y, w, h).

    Returns:
        np.ndarray: (N,) boolean array.
    """
    if len(boxes) == 0:
        return np.zeros(0, dtype=bool)
    x, y, w, h = box
    return (
        (x < boxes[:, 0] + boxes[:, 2])
        & (boxes[:, 0] < x + w)
        & (y < boxes[:, 1] + boxes[:, 3])
        & (boxes[:, 1] < y + h)
    )
