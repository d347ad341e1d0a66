"""rle_mask"""

import functools

import numpy as np

from src.errors import DimensionMismatchError, InvalidInputError


class RleMask:
    """
    Binary segmentation mask stored as row-major run lengths.

    The runs alternate between 0-pixels and 1-pixels and always begin with
    the (possibly empty) run of leading 0-pixels. Only that leading run may
    be zero, which makes the encoding canonical: two masks are equal exactly
    when their run sequences are equal.

    Attributes:
        height (int): Number of rows.
        width (int): Number of columns.
        runs (np.ndarray): Read-only int64 array of run lengths.
    """

    def __init__(self, height, width, runs):
        runs = np.asarray(runs, dtype=np.int64).reshape(-1)
        if height <= 0 or width <= 0:
            raise InvalidInputError(f"mask size must be positive, got {height}x{width}")
        if runs.size == 0:
            raise InvalidInputError("mask has no runs")
        if np.any(runs < 0):
            raise InvalidInputError("negative run length")
        if np.any(runs[1:] == 0):
            raise InvalidInputError("non-canonical encoding: interior zero run")
        if int(runs.sum()) != height * width:
            raise InvalidInputError(
                f"runs sum to {int(runs.sum())}, expected {height * width}"
            )
        runs.setflags(write=False)
        self.height = int(height)
        self.width = int(width)
        self.runs = runs

    @property
    def shape(self):
        """(height, width)"""
        return (self.height, self.width)

    @functools.cached_property
    def _intervals(self):
        # (starts, lengths, ones strictly before each interval) of the 1-runs
        offsets = np.concatenate(([0], np.cumsum(self.runs)[:-1]))
        starts = offsets[1::2]
        lengths = self.runs[1::2]
        before = np.concatenate(([0], np.cumsum(lengths)[:-1])) if lengths.size else lengths
        return starts, lengths, before

    @functools.cached_property
    def area(self):
        """Number of 1-pixels."""
        return int(self.runs[1::2].sum())

    def is_empty(self):
        return self.area == 0

    def decode(self):
        """
        Expands the mask to a dense grid.

        Returns:
            np.ndarray: (height, width) boolean array.
        """
        values = np.arange(self.runs.size) % 2 == 1
        return np.repeat(values, self.runs).reshape(self.height, self.width)

    def flat_indices(self):
        """Row-major flat indices of the 1-pixels, ascending."""
        starts, lengths, before = self._intervals
        if starts.size == 0:
            return np.zeros(0, dtype=np.int64)
        return np.repeat(starts - before, lengths) + np.arange(self.area, dtype=np.int64)

    def ones_before(self, positions):
        """
        Counts 1-pixels with flat index strictly below each position.

        Args:
            positions (np.ndarray): Flat row-major indices in [0, height*width].

        Returns:
            np.ndarray: int64 counts, same shape as `positions`.
        """
        positions = np.asarray(positions, dtype=np.int64)
        starts, lengths, before = self._intervals
        if starts.size == 0:
            return np.zeros_like(positions)
        k = np.searchsorted(starts, positions, side="right") - 1
        valid = k >= 0
        kk = np.where(valid, k, 0)
        within = np.clip(positions - starts[kk], 0, lengths[kk])
        return np.where(valid, before[kk] + within, 0)

    def bbox(self):
        """
        Tight bounding box of the 1-pixels, computed on the runs.

        Returns:
            tuple or None: (x, y, w, h) in pixels, None for an empty mask.
        """
        starts, lengths, _ = self._intervals
        if starts.size == 0:
            return None
        last = starts + lengths - 1
        r0, c0 = np.divmod(starts, self.width)
        r1, c1 = np.divmod(last, self.width)
        spans_rows = r1 > r0
        x0 = int(np.where(spans_rows, 0, c0).min())
        x1 = int(np.where(spans_rows, self.width - 1, c1).max())
        y0 = int(r0[0])
        y1 = int(r1[-1])
        return (x0, y0, x1 - x0 + 1, y1 - y0 + 1)

    def translate(self, dx, dy):
        """
        Shifts the mask by whole pixels; pixels leaving the image are dropped.

        Args:
            dx (int): Column shift.
            dy (int): Row shift.

        Returns:
            RleMask: The shifted mask.
        """
        dense = self.decode()
        out = np.zeros_like(dense)
        h, w = dense.shape
        src_r = slice(max(0, -dy), min(h, h - dy))
        src_c = slice(max(0, -dx), min(w, w - dx))
        dst_r = slice(max(0, dy), min(h, h + dy))
        dst_c = slice(max(0, dx), min(w, w + dx))
        if src_r.start < src_r.stop and src_c.start < src_c.stop:
            out[dst_r, dst_c] = dense[src_r, src_c]
        return encode(out)

    def to_dict(self):
        return {"size": [self.height, self.width], "counts": [int(r) for r in self.runs]}

    @classmethod
    def from_dict(cls, data):
        """
        Parses the `{"size": [h, w], "counts": [...]}` form.

        Raises:
            InvalidInputError: If the record is malformed or non-canonical.
        """
        try:
            height, width = (int(v) for v in data["size"])
            counts = [int(v) for v in data["counts"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"bad mask record: {exc}") from exc
        return cls(height, width, counts)

    def __eq__(self, other):
        if not isinstance(other, RleMask):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.runs, other.runs)

    def __hash__(self):
        return hash((self.height, self.width, self.runs.tobytes()))

    def __repr__(self):
        return f"RleMask({self.height}x{self.width}, area={self.area}, runs={self.runs.size})"


def encode(dense):
    """
    Encodes a dense binary grid in row-major order.

    Args:
        dense (array-like): 2D grid; non-zero entries are foreground.

    Returns:
        RleMask: Canonical encoding of the grid.

    Raises:
        InvalidInputError: If the grid is not 2D or is empty.
    """
    grid = np.asarray(dense).astype(bool)
    if grid.ndim != 2 or grid.size == 0:
        raise InvalidInputError(f"expected a non-empty 2D grid, got shape {grid.shape}")
    flat = grid.ravel()
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    runs = np.diff(bounds)
    if flat[0]:
        runs = np.concatenate(([0], runs))
    return RleMask(grid.shape[0], grid.shape[1], runs)


def empty(height, width):
    """All-zero mask."""
    return RleMask(height, width, [height * width])


def from_indices(height, width, flat):
    """
    Mask of the given row-major pixel indices, without a dense grid.

    Args:
        height (int): Image rows.
        width (int): Image columns.
        flat (array-like): Flat indices in [0, height*width); duplicates allowed.

    Returns:
        RleMask: Canonical encoding of the pixel set.

    Raises:
        InvalidInputError: If an index lies outside the image.
    """
    flat = np.unique(np.asarray(flat, dtype=np.int64).reshape(-1))
    total = height * width
    if flat.size == 0:
        return empty(height, width)
    if flat[0] < 0 or flat[-1] >= total:
        raise InvalidInputError(f"pixel index outside a {height}x{width} mask")
    breaks = np.flatnonzero(np.diff(flat) != 1) + 1
    starts = flat[np.concatenate(([0], breaks))]
    ends = flat[np.concatenate((breaks - 1, [flat.size - 1]))] + 1
    runs = np.diff(np.concatenate(([0], np.column_stack((starts, ends)).ravel(), [total])))
    if runs[-1] == 0:
        runs = runs[:-1]
    return RleMask(height, width, runs)


def from_box(height, width, box):
    """
    Filled rectangle clipped to the image.

    Args:
        height (int): Image rows.
        width (int): Image columns.
        box (tuple): (x, y, w, h) in pixels, may extend past the image.

    Returns:
        RleMask: The rectangle mask (empty if it misses the image).
    """
    x, y, w, h = (int(v) for v in box)
    dense = np.zeros((height, width), dtype=bool)
    dense[max(0, y) : max(0, y + h), max(0, x) : max(0, x + w)] = True
    return encode(dense)


def _check_same_size(a, b):
    if a.shape != b.shape:
        raise DimensionMismatchError(f"mask sizes differ: {a.shape} vs {b.shape}")


def area(m):
    """Pixel count of `m`."""
    return m.area


def intersection_area(a, b):
    """
    |a ∩ b| merged directly on the runs.

    Each 1-interval of the mask with fewer intervals is measured against the
    cumulative 1-count of the other mask, so no mask is expanded.

    Raises:
        DimensionMismatchError: If the masks differ in size.
    """
    _check_same_size(a, b)
    if a.area == 0 or b.area == 0:
        return 0
    if a.runs.size > b.runs.size:
        a, b = b, a
    starts, lengths, _ = a._intervals  # pylint: disable=protected-access
    covered = b.ones_before(starts + lengths) - b.ones_before(starts)
    return int(covered.sum())


def iou(a, b):
    """Intersection over union; 0 when both masks are empty."""
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def min_overlap(a, b):
    """Intersection over the smaller area; 0 if either mask is empty."""
    smaller = min(a.area, b.area)
    if smaller == 0:
        _check_same_size(a, b)
        return 0.0
    return intersection_area(a, b) / smaller


def bbox(m):
    """(x, y, w, h) of `m`, None when empty."""
    return m.bbox()


def union(a, b):
    """Pixel-wise OR of two masks."""
    _check_same_size(a, b)
    return encode(a.decode() | b.decode())
