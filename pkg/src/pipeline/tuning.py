"""tuning"""

import logging
from dataclasses import dataclass, field

import numpy as np
from tqdm import tqdm

from src.errors import InvalidInputError
from src.evaluation import (
    EvalConfig,
    MotMetrics,
    TrackBox,
    clear_mot,
    coverage_objective,
    group_ground_truth,
)
from src.pipeline.config import PipelineParams, split_path
from src.pipeline.io import read_json, read_sequence
from src.pipeline.runner import run_sequence
from src.utils import show_progress

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ParamRange:
    """
    Search interval of one parameter.

    Attributes:
        path (str): Dotted parameter path, e.g. "tracker.gate".
        low (float): Lower bound.
        high (float): Upper bound.
        log (bool): Sample uniformly in log space.
        integer (bool): Round samples to integers.
    """

    path: str
    low: float
    high: float
    log: bool = False
    integer: bool = False

    def __post_init__(self):
        split_path(self.path)
        if not self.low <= self.high:
            raise InvalidInputError(f"empty range for {self.path}: [{self.low}, {self.high}]")
        if self.log and self.low <= 0:
            raise InvalidInputError(f"log range for {self.path} must be positive")

    def sample(self, rng):
        if self.log:
            value = float(np.exp(rng.uniform(np.log(self.low), np.log(self.high))))
        else:
            value = float(rng.uniform(self.low, self.high))
        return int(round(value)) if self.integer else value

    @classmethod
    def parse(cls, path, spec):
        """Accepts [low, high] or {"low", "high", "log"?, "integer"?}."""
        if isinstance(spec, (list, tuple)) and len(spec) == 2:
            return cls(path, float(spec[0]), float(spec[1]))
        if isinstance(spec, dict):
            try:
                return cls(
                    path,
                    float(spec["low"]),
                    float(spec["high"]),
                    bool(spec.get("log", False)),
                    bool(spec.get("integer", False)),
                )
            except KeyError as exc:
                raise InvalidInputError(f"range for {path} misses {exc}") from exc
        raise InvalidInputError(f"bad range for {path}: {spec!r}")


@dataclass
class TuneSpec:
    """
    One tuning stage.

    Attributes:
        stage (int): 1 tunes hypothesis generation against the coverage
            objective, 2 tunes the inference weights against MOTA.
        ranges (list): ParamRange per tuned parameter.
        trials (int): Number of random trials.
        seed (int): Seed of the search.
        sequences (list): Sequence directories with ground truth.
        base_params (str, optional): Parameter file the trials start from.
        categories (list): Categories whose MOTA is summed in stage 2.
        top_k (int): Hypotheses per frame eligible for coverage in stage 1.
        lam (float, optional): Coverage decay; defaults to the inference lam.
        iou_threshold (float): Match threshold of stage 2.
    """

    stage: int
    ranges: list
    trials: int
    seed: int = 0
    sequences: list = field(default_factory=list)
    base_params: str = None
    categories: list = field(default_factory=list)
    top_k: int = 100
    lam: float = None
    iou_threshold: float = 0.5

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise InvalidInputError(f"stage must be 1 or 2, got {self.stage}")
        if self.trials < 1:
            raise InvalidInputError("trials must be >= 1")
        if not self.ranges:
            raise InvalidInputError("no parameter ranges to search")
        self.ranges = [r if isinstance(r, ParamRange) else ParamRange.parse(*r) for r in self.ranges]

    @classmethod
    def load(cls, path):
        data = read_json(path)
        try:
            ranges = [ParamRange.parse(k, v) for k, v in sorted(data["ranges"].items())]
            return cls(
                stage=int(data["stage"]),
                ranges=ranges,
                trials=int(data["trials"]),
                seed=int(data.get("seed", 0)),
                sequences=list(data.get("sequences", [])),
                base_params=data.get("base_params"),
                categories=list(data.get("categories", [])),
                top_k=int(data.get("top_k", 100)),
                lam=data.get("lam"),
                iou_threshold=float(data.get("iou_threshold", 0.5)),
            )
        except InvalidInputError as exc:
            raise InvalidInputError(exc.message, path) from exc
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise InvalidInputError(f"bad tuning spec: {exc}", path) from exc


class RandomSearch:
    """
    Seeded random search behind a propose/observe interface.

    Args:
        ranges (list): ParamRange per parameter.
        seed (int): Seed of the sampler.
    """

    def __init__(self, ranges, seed=0):
        self.ranges = list(ranges)
        self.rng = np.random.default_rng(seed)
        self.history = []

    def propose(self):
        """A dict of dotted path -> sampled value."""
        return {r.path: r.sample(self.rng) for r in self.ranges}

    def observe(self, proposal, value):
        """Records the objective of a proposal; None marks an invalid trial."""
        self.history.append((proposal, value))

    @property
    def best(self):
        """(proposal, value) with the highest value; earliest wins ties."""
        best = None
        for proposal, value in self.history:
            if value is not None and (best is None or value > best[1]):
                best = (proposal, value)
        return best


def stage1_objective(sequences, params, spec):
    """Mean over sequences of the coverage objective of the top-K hypotheses."""
    lam = spec.lam if spec.lam is not None else params.inference.lam
    values = []
    for sequence in sequences:
        result = run_sequence(sequence, params, record_coverage=True)
        gt = group_ground_truth(sequence.ground_truth)
        values.append(coverage_objective(result.snapshots, gt, spec.top_k, lam))
    return float(np.mean(values))


def _track_boxes(rows):
    return [TrackBox(r["frame"], r["id"], tuple(r["bbox"]), r.get("label"), r.get("distance")) for r in rows]


def stage2_objective(sequences, params, spec):
    """
    MOTA over all sequences, summed over the configured categories (overall
    MOTA when no categories are configured).
    """
    config = EvalConfig(iou_threshold=spec.iou_threshold, categories=list(spec.categories))
    overall = MotMetrics()
    per_category = {c: MotMetrics() for c in spec.categories}
    for sequence in sequences:
        result = run_sequence(sequence, params)
        report = clear_mot(_track_boxes(result.rows), group_ground_truth(sequence.ground_truth), config)
        overall += report.overall.overall
        for category in spec.categories:
            per_category[category] += report.categories[category].overall
    if spec.categories:
        return float(sum(m.mota for m in per_category.values()))
    return overall.mota


@dataclass
class TuneResult:
    best_params: PipelineParams
    best_value: float
    trials: list


def tune(spec, sequences=None, progress=False):
    """
    Random search over the ranges of a tuning spec.

    Args:
        spec (TuneSpec): Stage, ranges and sequences.
        sequences (list, optional): Already loaded SequenceInputs; read from
            `spec.sequences` when omitted.
        progress (bool): Show a progress bar on a terminal.

    Returns:
        TuneResult: Best parameters, their objective and the trial log.

    Raises:
        InvalidInputError: Missing ground truth or no valid trial.
    """
    if sequences is None:
        sequences = [read_sequence(d) for d in spec.sequences]
    if not sequences:
        raise InvalidInputError("tuning needs at least one sequence")
    for sequence in sequences:
        if not sequence.ground_truth:
            raise InvalidInputError(f"sequence {sequence.name} has no ground truth", sequence.directory)
    base = PipelineParams.load(spec.base_params) if spec.base_params else PipelineParams()
    objective = stage1_objective if spec.stage == 1 else stage2_objective
    search = RandomSearch(spec.ranges, spec.seed)
    log = []
    trials = tqdm(range(spec.trials), desc=f"stage {spec.stage}", unit="trial", disable=not show_progress(progress))
    for trial in trials:
        proposal = search.propose()
        try:
            params = base.with_updates(proposal)
        except InvalidInputError as exc:
            search.observe(proposal, None)
            log.append({"trial": trial, "params": proposal, "objective": None, "status": f"invalid: {exc}"})
            logger.info("trial %d invalid: %s", trial, exc)
            continue
        value = objective(sequences, params, spec)
        search.observe(proposal, value)
        log.append({"trial": trial, "params": proposal, "objective": value, "status": "ok"})
        logger.info("trial %d: objective %.6f", trial, value)
    best = search.best
    if best is None:
        raise InvalidInputError("no valid trial; check the parameter ranges")
    logger.info("best objective %.6f with %s", best[1], best[0])
    return TuneResult(base.with_updates(best[0]), best[1], log)
