"""inference"""

import logging
from dataclasses import dataclass, field

import numpy as np

from src import rle_mask
from src.errors import InvalidInputError, SolverLimitError
from src.utils import boxes_overlap

logger = logging.getLogger(__name__)

# Energies closer than this are ties.
ENERGY_TOL = 1e-12
_CHUNK_BITS = 14


@dataclass
class InferenceParams:
    """
    Weights of the selection energy.

    Attributes:
        lam (float): Temporal decay in frames.
        w_min (float): Minimal required hypothesis score.
        w_sim (float): Weight of the mask-consistency term.
        w_seg (float): Weight of the proposal-score term.
        w_sem (float): Weight of the semantic term.
        c_min (float): Classifier scores at or below this contribute nothing.
        exhaustive_limit (int): Largest hypothesis set solved exactly.
        branch_width (int): Beam width of the multi-branch solver.
    """

    lam: float = 4.0
    w_min: float = 1.0
    w_sim: float = 1.0
    w_seg: float = 0.5
    w_sem: float = 1.0
    c_min: float = 0.5
    exhaustive_limit: int = 20
    branch_width: int = 8

    def __post_init__(self):
        if self.lam <= 0:
            raise InvalidInputError(f"lam must be positive, got {self.lam}")
        if min(self.w_sim, self.w_seg, self.w_sem) < 0:
            raise InvalidInputError("term weights must be non-negative")
        if not 0.0 <= self.c_min <= 1.0:
            raise InvalidInputError(f"c_min must lie in [0, 1], got {self.c_min}")
        if self.exhaustive_limit < 0 or self.branch_width < 1:
            raise InvalidInputError("exhaustive_limit must be >= 0 and branch_width >= 1")


@dataclass(eq=False)
class SelectionVector:
    """
    Result of MAP inference.

    Attributes:
        bits (np.ndarray): Boolean indicator b_i per hypothesis.
        energy (float): E(b).
        solver (str): "exhaustive", "multibranch" or "greedy".
    """

    bits: np.ndarray
    energy: float = 0.0
    solver: str = "exhaustive"

    def selected(self):
        return [int(i) for i in np.flatnonzero(self.bits)]


def semantic_term(c_t, c_min):
    """Truncated classifier score: c_t if c_t > c_min, else 0 (absent: 0)."""
    if c_t is None or c_t <= c_min:
        return 0.0
    return float(c_t)


@dataclass
class _Evidence:
    # decayed term sums of one hypothesis at frame t_e, over its first `used` frames
    t_e: int = None
    used: int = 0
    sim: float = 0.0
    seg: float = 0.0
    sem: float = 0.0
    labels: dict = field(default_factory=dict)


def _frame_semantics(frame, c_min):
    if not frame.class_scores:
        return 0.0, {}
    per_label = {label: semantic_term(score, c_min) for label, score in frame.class_scores.items()}
    return max(per_label.values()), per_label


def evidence(h, t_e, params):
    """
    Decay-weighted sums of Φ_sim, s_t and Φ_sem over the frames of `h` up to t_e.

    Sums are memoized on the hypothesis and advanced incrementally when t_e
    grows, since frames are only ever appended.
    """
    cache = getattr(h, "evidence_cache", None)
    key = (params.lam, params.c_min)
    ev = cache.get(key) if cache is not None else None
    if ev is None or ev.t_e is None or ev.t_e > t_e or ev.used > len(h.frames):
        ev = _Evidence()
    elif ev.t_e < t_e:
        factor = float(np.exp(-(t_e - ev.t_e) / params.lam))
        ev.sim *= factor
        ev.seg *= factor
        ev.sem *= factor
        ev.labels = {label: value * factor for label, value in ev.labels.items()}
    ev.t_e = t_e
    while ev.used < len(h.frames) and h.frames[ev.used].frame <= t_e:
        frame = h.frames[ev.used]
        weight = float(np.exp(-abs(frame.frame - t_e) / params.lam))
        sem, per_label = _frame_semantics(frame, params.c_min)
        ev.sim += weight * frame.sim
        ev.seg += weight * frame.score
        ev.sem += weight * sem
        for label, value in per_label.items():
            ev.labels[label] = ev.labels.get(label, 0.0) + weight * value
        ev.used += 1
    if cache is not None:
        cache[key] = ev
    return ev


def unary(h, t_e, params):
    """
    ϑ(h, t_e) = w_min - Σ decay·(w_sim Φ_sim + w_seg s_t) - Σ decay·w_sem Φ_sem.

    Args:
        h (Hypothesis): Hypothesis with at least one frame.
        t_e (int): Evaluation frame.
        params (InferenceParams): Weights.

    Returns:
        float: The unary potential; negative values favour selection.
    """
    ev = evidence(h, t_e, params)
    return params.w_min - (params.w_sim * ev.sim + params.w_seg * ev.seg) - params.w_sem * ev.sem


def unary_strength(h, t_e, params):
    """-ϑ without the semantic term; orders hypotheses for hypothesis NMS."""
    ev = evidence(h, t_e, params)
    return params.w_sim * ev.sim + params.w_seg * ev.seg - params.w_min


def track_label(h, t_e, params):
    """
    Track-level class: largest decay-weighted sum of truncated class scores.

    Returns:
        str or None: The label, None when no class ever passed c_min.
    """
    labels = evidence(h, t_e, params).labels
    best = None
    for label in sorted(labels):
        if labels[label] > 0 and (best is None or labels[label] > labels[best]):
            best = label
    return best


def _common_frames(h_i, h_j, t_e):
    start = max(h_i.frames[0].frame, h_j.frames[0].frame)
    end = min(h_i.frames[-1].frame, h_j.frames[-1].frame, t_e)
    return start, end


def _frame_at(h, t):
    return h.frames[t - h.frames[0].frame]


def _decayed_overlap(h_i, h_j, start, end, t_e, lam):
    total = 0.0
    for t in range(start, end + 1):
        a, b = _frame_at(h_i, t), _frame_at(h_j, t)
        if a.bbox is None or b.bbox is None or not boxes_overlap(a.bbox, b.bbox):
            continue
        overlap = rle_mask.min_overlap(a.mask, b.mask)
        if overlap > 0:
            total += float(np.exp(-abs(t - t_e) / lam)) * overlap
    return total


def pairwise(h_i, h_j, t_e, params):
    """
    ψ(h_i, h_j, t_e): decayed min-overlap of the masks over common frames.

    Returns:
        float: 0 for disjoint lifespans.
    """
    start, end = _common_frames(h_i, h_j, t_e)
    if start > end:
        return 0.0
    return _decayed_overlap(h_i, h_j, start, end, t_e, params.lam)


class PairwiseCache:
    """
    Incremental ψ per hypothesis pair across consecutive evaluation frames.

    Entries are keyed by hypothesis ids, so the cache belongs to a single
    sequence run.
    """

    def __init__(self):
        self._entries = {}

    def get(self, h_i, h_j, t_e, params):
        key = (min(h_i.id, h_j.id), max(h_i.id, h_j.id))
        start, end = _common_frames(h_i, h_j, t_e)
        if start > end:
            return 0.0
        entry = self._entries.get(key)
        if entry is not None and entry[0] == params.lam and entry[1] <= t_e and entry[3] <= end:
            lam, old_t, value, done = entry
            value *= float(np.exp(-(t_e - old_t) / lam))
            value += _decayed_overlap(h_i, h_j, max(start, done + 1), end, t_e, lam)
        else:
            value = _decayed_overlap(h_i, h_j, start, end, t_e, params.lam)
        self._entries[key] = (params.lam, t_e, value, end)
        return value

    def retain(self, live_ids):
        """Drops entries of hypotheses that no longer exist."""
        live = set(live_ids)
        self._entries = {k: v for k, v in self._entries.items() if k[0] in live and k[1] in live}


@dataclass(eq=False)
class CrfProblem:
    """
    Energy E(b) = Σ b_i u_i + Σ_{i<j} b_i b_j P_ij.

    Attributes:
        unary (np.ndarray): (M,) unary potentials.
        pairwise (np.ndarray): (M, M) symmetric, zero diagonal, non-negative.
    """

    unary: np.ndarray
    pairwise: np.ndarray

    def __post_init__(self):
        self.unary = np.asarray(self.unary, dtype=float).reshape(-1)
        m = self.unary.size
        self.pairwise = np.asarray(self.pairwise, dtype=float).reshape(m, m)

    @property
    def size(self):
        return self.unary.size

    def energy(self, bits):
        b = np.asarray(bits, dtype=float)
        return float(b @ self.unary + 0.5 * b @ self.pairwise @ b)

    def candidates(self):
        """Indices with a negative unary; no tie-broken optimum selects others."""
        return np.flatnonzero(self.unary < 0)

    @classmethod
    def from_hypotheses(cls, hypotheses, t_e, params, cache=None):
        """
        Fills the potentials for a hypothesis set. Pairwise terms are only
        computed between hypotheses with a negative unary.
        """
        u = np.array([unary(h, t_e, params) for h in hypotheses], dtype=float)
        p = np.zeros((len(hypotheses), len(hypotheses)))
        cand = np.flatnonzero(u < 0)
        for a, i in enumerate(cand):
            for j in cand[a + 1 :]:
                if cache is not None:
                    value = cache.get(hypotheses[i], hypotheses[j], t_e, params)
                else:
                    value = pairwise(hypotheses[i], hypotheses[j], t_e, params)
                p[i, j] = p[j, i] = value
        return cls(u, p)


def _better(a, b):
    # (energy, count, tie key) comparison with energy tolerance; smaller key wins
    if a[0] < b[0] - ENERGY_TOL:
        return True
    if a[0] > b[0] + ENERGY_TOL:
        return False
    return (a[1], a[2]) < (b[1], b[2])


def minimize_exhaustive(problem):
    """
    Exact minimum over all assignments of the negative-unary hypotheses.

    Ties are broken by fewer selected hypotheses, then by the
    lexicographically smallest indicator vector b, read with b[0] first
    and 0 < 1, so [0, 1] wins over [1, 0].

    Returns:
        SelectionVector: The optimum.
    """
    cand = problem.candidates()
    m = cand.size
    bits = np.zeros(problem.size, dtype=bool)
    if m == 0:
        return SelectionVector(bits, 0.0, "exhaustive")
    u = problem.unary[cand]
    p = problem.pairwise[np.ix_(cand, cand)]
    shifts = (m - 1 - np.arange(m)).astype(np.int64)
    best = (0.0, 0, 0)
    total = 1 << m
    step = 1 << min(m, _CHUNK_BITS)
    for start in range(0, total, step):
        ks = np.arange(start, min(start + step, total), dtype=np.int64)
        b = ((ks[:, None] >> shifts) & 1).astype(float)
        energies = b @ u + 0.5 * np.einsum("ki,ij,kj->k", b, p, b)
        counts = b.sum(axis=1)
        low = energies.min()
        tied = np.flatnonzero(energies <= low + ENERGY_TOL)
        # bit 0 is the most significant, so k orders assignments the way b does
        pick = tied[np.lexsort((ks[tied], counts[tied]))[0]]
        local = (float(energies[pick]), int(counts[pick]), int(ks[pick]))
        if _better(local, best):
            best = local
    chosen = (best[2] >> shifts) & 1
    bits[cand[chosen.astype(bool)]] = True
    return SelectionVector(bits, problem.energy(bits), "exhaustive")


def _order(chosen, size):
    # b read as a binary number with b[0] as the most significant bit
    return sum(1 << (size - 1 - i) for i in chosen)


def _beam(problem, width):
    cand = problem.candidates()
    best_key = (0.0, 0, 0, ())
    branches = [(0.0, ())]
    while branches:
        extensions = {}
        for energy, chosen in branches:
            sel = np.zeros(problem.size)
            sel[list(chosen)] = 1.0
            deltas = problem.unary + problem.pairwise @ sel
            for i in cand:
                if sel[i] or deltas[i] >= 0:
                    continue
                grown = tuple(sorted(chosen + (int(i),)))
                value = energy + float(deltas[i])
                if grown not in extensions or value < extensions[grown]:
                    extensions[grown] = value
        if not extensions:
            break
        ranked = sorted(
            ((value, len(key), _order(key, problem.size), key) for key, value in extensions.items()),
            key=lambda item: item[:3],
        )[:width]
        if _better(ranked[0], best_key):
            best_key = ranked[0]
        branches = [(value, key) for value, _, _, key in ranked]
    bits = np.zeros(problem.size, dtype=bool)
    bits[list(best_key[3])] = True
    return bits


def minimize_greedy(problem):
    """Repeatedly adds the hypothesis with the most negative energy change."""
    bits = _beam(problem, 1)
    return SelectionVector(bits, problem.energy(bits), "greedy")


def minimize_multibranch(problem, width):
    """
    Beam search over greedy insertions.

    Up to `width` partial selections are extended by every hypothesis whose
    insertion lowers the energy; the best `width` extensions survive each
    round, and the search ends when no branch can be improved. The result is
    never worse than plain greedy.

    Returns:
        SelectionVector: Lowest-energy selection found.
    """
    bits = _beam(problem, width)
    energy = problem.energy(bits)
    if width > 1:
        greedy = _beam(problem, 1)
        greedy_energy = problem.energy(greedy)
        if greedy_energy < energy - ENERGY_TOL:
            bits, energy = greedy, greedy_energy
    return SelectionVector(bits, energy, "multibranch")


def solve_exhaustive(hypotheses, t_e, params, cache=None):
    """
    Exact MAP selection.

    Raises:
        SolverLimitError: More hypotheses than `params.exhaustive_limit`.
    """
    if len(hypotheses) > params.exhaustive_limit:
        raise SolverLimitError(
            f"{len(hypotheses)} hypotheses exceed the exhaustive limit {params.exhaustive_limit}"
        )
    return minimize_exhaustive(CrfProblem.from_hypotheses(hypotheses, t_e, params, cache))


def solve_multibranch(hypotheses, t_e, params, cache=None):
    """Approximate MAP selection by multi-branch search."""
    problem = CrfProblem.from_hypotheses(hypotheses, t_e, params, cache)
    return minimize_multibranch(problem, params.branch_width)


def select(hypotheses, t_e, params, cache=None):
    """
    Picks the hypotheses to report at t_e.

    Dispatches to the exhaustive solver when the set has at most
    `exhaustive_limit` members, to multi-branch search otherwise.

    Returns:
        SelectionVector: Selection, achieved energy and solver name.
    """
    if len(hypotheses) <= params.exhaustive_limit:
        result = solve_exhaustive(hypotheses, t_e, params, cache)
    else:
        result = solve_multibranch(hypotheses, t_e, params, cache)
    logger.debug(
        "frame %d: %d hypotheses, %s, energy %.4f, %d selected",
        t_e,
        len(hypotheses),
        result.solver,
        result.energy,
        int(result.bits.sum()),
    )
    return result
