"""render"""

import logging
from collections import defaultdict
from pathlib import Path

import matplotlib
import numpy as np
from PIL import Image, ImageDraw
from tqdm import tqdm

from src.utils import show_progress

logger = logging.getLogger(__name__)

ALPHA = 0.5
CANVAS_GREY = 96


def track_color(track_id, cmap="tab20"):
    """RGB color of a track id, cycling through a qualitative colormap."""
    colormap = matplotlib.colormaps[cmap]
    r, g, b, _ = colormap(track_id % colormap.N)
    return np.array([r, g, b]) * 255.0


def base_image(frame_input, height, width):
    """Inverse depth as grey levels, or a flat grey canvas without depth."""
    if frame_input.depth is None:
        return np.full((height, width, 3), CANVAS_GREY, dtype=float)
    depth = frame_input.depth.values
    valid = frame_input.depth.valid()
    inverse = np.zeros_like(depth, dtype=float)
    inverse[valid] = 1.0 / depth[valid]
    top = inverse.max()
    grey = inverse / top * 255.0 if top > 0 else inverse
    return np.repeat(grey[:, :, None], 3, axis=2)


def render_frame(frame_input, rows, height, width):
    """
    Overlays the masks of one frame's track rows.

    Args:
        frame_input (FrameInput): Frame, for its depth map.
        rows (list): Track rows of the frame with decoded masks.
        height (int): Image rows.
        width (int): Image columns.

    Returns:
        PIL.Image.Image: The RGB overlay.
    """
    canvas = base_image(frame_input, height, width)
    for row in rows:
        dense = row["mask"].decode()
        canvas[dense] = (1.0 - ALPHA) * canvas[dense] + ALPHA * track_color(row["id"])
    image = Image.fromarray(np.clip(canvas, 0, 255).astype(np.uint8))
    draw = ImageDraw.Draw(image)
    for row in rows:
        x, y, w, h = row["bbox"]
        color = tuple(int(c) for c in track_color(row["id"]))
        draw.rectangle([x, y, x + w - 1, y + h - 1], outline=color)
        label = str(row["id"]) if not row.get("label") else f"{row['id']} {row['label']}"
        draw.text((x + 1, max(y - 10, 0)), label, fill=color)
    return image


def render_sequence(sequence, rows, out_dir, progress=False):
    """
    Writes one PNG per frame, NNNNNN.png, into `out_dir`.

    Returns:
        list: Written paths.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    by_frame = defaultdict(list)
    for row in rows:
        by_frame[row["frame"]].append(row)
    written = []
    for frame_input in tqdm(sequence.frames, desc="render", unit="frame", disable=not show_progress(progress)):
        image = render_frame(frame_input, by_frame[frame_input.frame], sequence.height, sequence.width)
        path = out_dir / f"{frame_input.frame:06d}.png"
        image.save(path)
        written.append(path)
    logger.info("rendered %d frames to %s", len(written), out_dir)
    return written
