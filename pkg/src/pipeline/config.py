"""config"""

from dataclasses import asdict, dataclass, field, fields, replace

from src.errors import InvalidInputError
from src.inference import InferenceParams
from src.observations import ObservationParams
from src.pipeline.io import read_json, write_json
from src.tracker import TrackerParams


@dataclass
class RunnerParams:
    """
    Attributes:
        workers (int): Sequences processed in parallel.
        fit_ground_plane (bool): Fit a plane with RANSAC when a frame has
            depth but no ground plane.
        ransac_iterations (int): Sampled triples per fit.
        ransac_threshold (float): Inlier distance, meters.
        ransac_samples (int): Depth pixels sampled per fit.
        seed (int): Seed of the pixel sampling.
    """

    workers: int = 1
    fit_ground_plane: bool = True
    ransac_iterations: int = 200
    ransac_threshold: float = 0.05
    ransac_samples: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.workers < 1 or self.ransac_iterations < 1 or self.ransac_samples < 3:
            raise InvalidInputError("workers, ransac_iterations and ransac_samples are too small")


SECTIONS = {
    "observations": ObservationParams,
    "tracker": TrackerParams,
    "inference": InferenceParams,
    "runner": RunnerParams,
}


@dataclass
class PipelineParams:
    """All hyperparameters of a run, stored as one parameter file."""

    observations: ObservationParams = field(default_factory=ObservationParams)
    tracker: TrackerParams = field(default_factory=TrackerParams)
    inference: InferenceParams = field(default_factory=InferenceParams)
    runner: RunnerParams = field(default_factory=RunnerParams)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        """
        Builds parameters from a (possibly partial) nested dict.

        Raises:
            InvalidInputError: Unknown sections or keys, or values that fail
                validation.
        """
        unknown = set(data) - set(SECTIONS) - {"schema"}
        if unknown:
            raise InvalidInputError(f"unknown parameter sections: {', '.join(sorted(unknown))}")
        values = {}
        for name, section_cls in SECTIONS.items():
            section = data.get(name, {})
            if not isinstance(section, dict):
                raise InvalidInputError(f"parameter section {name} must be an object")
            allowed = {f.name for f in fields(section_cls)}
            bad = set(section) - allowed
            if bad:
                raise InvalidInputError(f"unknown {name} parameters: {', '.join(sorted(bad))}")
            try:
                values[name] = section_cls(**section)
            except TypeError as exc:
                raise InvalidInputError(f"bad {name} parameters: {exc}") from exc
        return cls(**values)

    @classmethod
    def load(cls, path):
        try:
            return cls.from_dict(read_json(path))
        except InvalidInputError as exc:
            if exc.path is None:
                raise InvalidInputError(exc.message, path) from exc
            raise

    def save(self, path):
        write_json(path, self.to_dict())

    def get(self, dotted):
        section, key = split_path(dotted)
        return getattr(getattr(self, section), key)

    def with_updates(self, updates):
        """
        Copy with dotted-path overrides, e.g. {"inference.w_sim": 0.7}.

        Raises:
            InvalidInputError: Unknown path or a value failing validation.
        """
        grouped = {}
        for dotted, value in updates.items():
            section, key = split_path(dotted)
            current = getattr(getattr(self, section), key)
            if isinstance(current, int) and not isinstance(current, bool):
                value = int(round(value))
            grouped.setdefault(section, {})[key] = value
        changes = {}
        for section, values in grouped.items():
            try:
                changes[section] = replace(getattr(self, section), **values)
            except TypeError as exc:
                raise InvalidInputError(f"bad {section} parameters: {exc}") from exc
        return replace(self, **changes)


def split_path(dotted):
    section, _, key = dotted.partition(".")
    if section not in SECTIONS or not key:
        raise InvalidInputError(f"unknown parameter path {dotted!r}")
    if key not in {f.name for f in fields(SECTIONS[section])}:
        raise InvalidInputError(f"unknown parameter path {dotted!r}")
    return section, key
