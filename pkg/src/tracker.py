"""tracker"""

import functools
import logging
from collections import Counter, deque
from dataclasses import dataclass, field

import numpy as np
from filterpy.kalman import predict as kf_predict
from filterpy.kalman import update as kf_update
from scipy.linalg import cho_factor, cho_solve

from src import rle_mask
from src.errors import InvalidInputError, InvariantViolation
from src.geometry import predict_mask
from src.inference import unary_strength
from src.utils import box_iou, box_overlap_matrix

logger = logging.getLogger(__name__)

# state [x, y, z, vx, vz]; y only changes through corrections to the ground
F_FORWARD = np.array(
    [
        [1.0, 0.0, 0.0, 1.0, 0.0],
        [0.0, 1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0, 1.0],
        [0.0, 0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 1.0],
    ]
)
F_BACKWARD = F_FORWARD.copy()
F_BACKWARD[0, 3] = F_BACKWARD[2, 4] = -1.0
H_POSITION = np.eye(3, 5)

PSD_TOL = 1e-9


@dataclass
class TrackerParams:
    """
    Hyperparameters of hypothesis generation.

    Attributes:
        tau (int): Hypotheses are NMS-eligible once created before t - tau.
        nms_similarity (float): Mean-IoU similarity above which the weaker
            of two eligible hypotheses is pruned.
        gate (float): Minimal association score p_mask * p_motion.
        max_misses (int): Consecutive predicted frames tolerated.
        init_pos_var (float): Initial position variance, m^2.
        init_vel_var (float): Initial velocity variance, (m/frame)^2.
        process_noise (float): Process noise variance per axis per frame.
        obs_noise (float): Observation noise variance per axis, m^2.
        backward_window (int): Frames searched by backward initialization.
    """

    tau: int = 10
    nms_similarity: float = 0.5
    gate: float = 0.05
    max_misses: int = 6
    init_pos_var: float = 0.5
    init_vel_var: float = 1.0
    process_noise: float = 0.05
    obs_noise: float = 0.1
    backward_window: int = 5

    def __post_init__(self):
        if self.tau < 1:
            raise InvalidInputError(f"tau must be >= 1, got {self.tau}")
        if not (0.0 <= self.nms_similarity <= 1.0 and 0.0 <= self.gate <= 1.0):
            raise InvalidInputError("nms_similarity and gate must lie in [0, 1]")
        if self.max_misses < 0 or self.backward_window < 0:
            raise InvalidInputError("max_misses and backward_window must be >= 0")
        if min(self.init_pos_var, self.init_vel_var, self.process_noise, self.obs_noise) <= 0:
            raise InvalidInputError("Kalman variances must be positive")


@dataclass(eq=False)
class KalmanState:
    """
    Constant-velocity filter state.

    Attributes:
        mean (np.ndarray): [x, y, z, vx, vz] in the world frame.
        cov (np.ndarray): (5, 5) covariance.
    """

    mean: np.ndarray
    cov: np.ndarray

    @property
    def position(self):
        return self.mean[:3]

    @property
    def velocity(self):
        return self.mean[3:]

    @classmethod
    def initial(cls, position, velocity, params):
        mean = np.concatenate([np.asarray(position, dtype=float), np.asarray(velocity, dtype=float)])
        cov = np.diag([params.init_pos_var] * 3 + [params.init_vel_var] * 2)
        return cls(mean, cov)

    def check(self):
        """
        Raises:
            InvariantViolation: If the covariance is not symmetric PSD.
        """
        if not np.allclose(self.cov, self.cov.T, atol=PSD_TOL):
            raise InvariantViolation("Kalman covariance lost symmetry")
        if np.linalg.eigvalsh(self.cov).min() < -PSD_TOL:
            raise InvariantViolation("Kalman covariance is not positive semi-definite")


def kalman_predict(state, process_noise, backward=False):
    """
    Constant-velocity prediction, x += vx and z += vz (or -= when backward).

    Returns:
        KalmanState: The prior.
    """
    transition = F_BACKWARD if backward else F_FORWARD
    mean, cov = kf_predict(state.mean, state.cov, transition, process_noise * np.eye(5))
    return KalmanState(mean, 0.5 * (cov + cov.T))


def ground_point(position, plane):
    """Bottom point of a position: its projection onto the ground, if known."""
    position = np.asarray(position, dtype=float)
    return position if plane is None else plane.project(position)


def kalman_correct(state, obs_pos, plane, obs_noise):
    """
    Correction with the observation's bottom point as (x, y, z) measurement.

    Args:
        state (KalmanState): Prior.
        obs_pos (np.ndarray): Observed median position, world frame.
        plane (GroundPlane or None): Ground plane in the world frame.
        obs_noise (float): Measurement variance per axis.

    Returns:
        KalmanState: The posterior.

    Raises:
        InvariantViolation: If the posterior covariance is not PSD.
    """
    measurement = ground_point(obs_pos, plane)
    mean, cov = kf_update(state.mean, state.cov, measurement, obs_noise * np.eye(3), H_POSITION)
    posterior = KalmanState(mean, 0.5 * (cov + cov.T))
    posterior.check()
    return posterior


def innovation_cov(state, obs_noise):
    return H_POSITION @ state.cov @ H_POSITION.T + obs_noise * np.eye(3)


def motion_likelihood(state, points, obs_noise):
    """
    Gaussian density of points under the predicted position and innovation
    covariance, divided by its value at the mean, so it lies in (0, 1].
    """
    diff = np.atleast_2d(points) - state.position
    factor = cho_factor(innovation_cov(state, obs_noise))
    mahalanobis = np.einsum("ij,ji->i", diff, cho_solve(factor, diff.T))
    return np.exp(-0.5 * mahalanobis)


@dataclass(eq=False)
class TrackFrame:
    """
    One frame of a hypothesis.

    Attributes:
        frame (int): Frame index.
        mask (RleMask): Associated observation mask, or the predicted mask.
        mask_is_predicted (bool): True when no observation was associated.
        obs_index (int or None): Index of the associated observation.
        score (float): Proposal score s_t (0 when predicted).
        sim (float): Φ_sim, IoU of the prediction with the associated mask.
        class_scores (dict or None): Classifier scores of the observation.
        pos (np.ndarray): Filtered position snapshot.
        vel (np.ndarray): Filtered velocity snapshot.
    """

    frame: int
    mask: rle_mask.RleMask
    mask_is_predicted: bool
    obs_index: int = None
    score: float = 0.0
    sim: float = 0.0
    class_scores: dict = None
    pos: np.ndarray = None
    vel: np.ndarray = None

    def __post_init__(self):
        if self.mask_is_predicted == (self.obs_index is not None):
            raise InvariantViolation("a track frame is either associated or predicted")

    @functools.cached_property
    def bbox(self):
        return self.mask.bbox()

    def best_class(self):
        if not self.class_scores:
            return None, None
        label = max(sorted(self.class_scores), key=lambda k: self.class_scores[k])
        return label, float(self.class_scores[label])


@dataclass(eq=False)
class Hypothesis:
    """
    A tracked candidate object.

    Attributes:
        id (int): Persistent id, also the public track id.
        created (int): Frame in which the hypothesis was started.
        frames (list): Contiguous TrackFrames.
        state (KalmanState): Posterior of the last frame.
        misses (int): Trailing run of predicted frames.
        terminated (bool): Set once the hypothesis stops.
    """

    id: int
    created: int
    frames: list
    state: KalmanState
    misses: int = 0
    terminated: bool = False
    prior: KalmanState = None
    prior_mask: rle_mask.RleMask = None
    evidence_cache: dict = field(default_factory=dict)

    @property
    def start(self):
        return self.frames[0].frame

    @property
    def end(self):
        return self.frames[-1].frame

    def frame_at(self, t):
        if self.start <= t <= self.end:
            return self.frames[t - self.start]
        return None

    def box_at(self, t):
        frame = self.frame_at(t)
        return None if frame is None else frame.bbox


class ObservationSet:
    """Observations of one frame with cached boxes and bottom points."""

    def __init__(self, observations, plane=None):
        self.observations = list(observations)
        self.boxes = np.array([o.bbox for o in self.observations], dtype=float).reshape(-1, 4)
        self.points = np.array(
            [ground_point(o.pos, plane) for o in self.observations], dtype=float
        ).reshape(-1, 3)

    def __len__(self):
        return len(self.observations)

    def __getitem__(self, index):
        return self.observations[index]


@dataclass(eq=False)
class Association:
    index: int
    score: float
    iou: float


def associate(h, observations, ctx, params):
    """
    Picks the observation maximizing p_mask * p_motion for one hypothesis.

    `h.prior` and `h.prior_mask` must hold the prediction for the frame of
    `ctx`. Ties go to the higher mask IoU, then to the lower index.

    Args:
        h (Hypothesis): Predicted hypothesis.
        observations (ObservationSet or list): Candidates of the frame.
        ctx (FrameContext): Frame geometry.
        params (TrackerParams): Gate and noise.

    Returns:
        Association or None: None when no score reaches the gate.
    """
    if not isinstance(observations, ObservationSet):
        observations = ObservationSet(observations, ctx.world_ground_plane)
    box = h.prior_mask.bbox()
    if box is None or len(observations) == 0:
        return None
    near = np.flatnonzero(box_overlap_matrix(box, observations.boxes))
    if near.size == 0:
        return None
    p_motion = motion_likelihood(h.prior, observations.points[near], params.obs_noise)
    best = None
    for j, motion in zip(near, p_motion):
        overlap = rle_mask.iou(h.prior_mask, observations[j].mask)
        score = overlap * float(motion)
        if score <= 0:
            continue
        if best is None or (score, overlap) > (best.score, best.iou):
            best = Association(int(j), score, overlap)
    if best is None or best.score < params.gate:
        return None
    return best


def hypothesis_similarity(h_i, h_j):
    """Mean mask IoU over the common frames (0 without common frames)."""
    start = max(h_i.start, h_j.start)
    end = min(h_i.end, h_j.end)
    if start > end:
        return 0.0
    total = 0.0
    for t in range(start, end + 1):
        a, b = h_i.frame_at(t), h_j.frame_at(t)
        if a.bbox is not None and b.bbox is not None and box_iou(a.bbox, b.bbox) > 0:
            total += rle_mask.iou(a.mask, b.mask)
    return total / (end - start + 1)


def hypothesis_nms(hypotheses, t, params, inference_params):
    """
    Greedy suppression among hypotheses created before t - tau.

    Eligible hypotheses are visited by descending unary strength; one is
    pruned when its similarity to an already kept one exceeds
    `params.nms_similarity`. Younger hypotheses are left alone.

    Returns:
        tuple: (kept hypotheses in input order, pruned hypotheses).
    """
    eligible = [h for h in hypotheses if h.created < t - params.tau]
    ranked = sorted(eligible, key=lambda h: (-unary_strength(h, t, inference_params), h.id))
    kept = []
    pruned = set()
    for h in ranked:
        if any(hypothesis_similarity(h, k) > params.nms_similarity for k in kept):
            pruned.add(h.id)
        else:
            kept.append(h)
    return (
        [h for h in hypotheses if h.id not in pruned],
        [h for h in hypotheses if h.id in pruned],
    )


@dataclass
class StepReport:
    """Per-frame bookkeeping of the tracker."""

    frame: int
    extended: int = 0
    associated: int = 0
    created: int = 0
    terminated: list = field(default_factory=list)
    pruned: list = field(default_factory=list)
    merged: list = field(default_factory=list)
    live: int = 0

    def to_dict(self):
        return {
            "extended": self.extended,
            "associated": self.associated,
            "created": self.created,
            "terminated": list(self.terminated),
            "pruned": list(self.pruned),
            "merged": list(self.merged),
            "live": self.live,
        }


def _mask_motion(mask, src_ctx, dst_intrinsics, transform, velocity, position):
    # predicts `mask` from the frame of src_ctx through transform (camera src -> camera dst)
    v_cam = src_ctx.velocity_to_camera(velocity)
    anchor = src_ctx.world_to_cam.apply(position)
    return predict_mask(mask, src_ctx.depth, dst_intrinsics, transform, v_cam, anchor)


def _register(owners, h, first):
    # (frame, observation index) -> ids of hypotheses associated with it, from frame `first` on
    for f in reversed(h.frames):
        if f.frame < first:
            break
        if f.obs_index is not None:
            owners.setdefault((f.frame, f.obs_index), []).append(h.id)


def _covering(chain, owners):
    """
    Id of a hypothesis holding all but at most one of the chain's
    observations (at least one), or None. The lowest such id is returned.
    """
    counts = Counter(
        hid for step_ctx, _, index, _ in chain for hid in owners.get((step_ctx.frame, index), ())
    )
    need = max(len(chain) - 1, 1)
    holders = [hid for hid, n in counts.items() if n >= need]
    return min(holders) if holders else None


class Tracker:
    """
    Maintains the overcomplete hypothesis set of one sequence.

    Args:
        params (TrackerParams): Hypothesis generation hyperparameters.
        inference_params (InferenceParams): Used to rank hypotheses for NMS.
    """

    def __init__(self, params, inference_params):
        self.params = params
        self.inference_params = inference_params
        self.hypotheses = []
        self.history = deque(maxlen=params.backward_window)
        self.prev_ctx = None
        self._next_id = 0

    def _new_id(self):
        self._next_id += 1
        return self._next_id - 1

    def step(self, observations, ctx):
        """
        Processes one frame: extend, start new hypotheses, prune.

        A new hypothesis is dropped when a live one already holds all but at
        most one of the observations of its backward chain; the drop is
        listed under `merged` in the report.

        Args:
            observations (list): Observations of the frame.
            ctx (FrameContext): Frame geometry.

        Returns:
            StepReport: What happened to the hypothesis set.
        """
        if self.prev_ctx is not None and ctx.frame <= self.prev_ctx.frame:
            raise InvalidInputError(
                f"frame {ctx.frame} does not follow frame {self.prev_ctx.frame}"
            )
        report = StepReport(ctx.frame)
        obs_set = ObservationSet(observations, ctx.world_ground_plane)
        first = ctx.frame - self.params.backward_window
        owners = {}
        live = []
        for h in self.hypotheses:
            self._extend(h, obs_set, ctx, report)
            if h.terminated:
                self.evict(h)
            else:
                live.append(h)
                _register(owners, h, first)
        for index in range(len(obs_set)):
            chain, state = self.backward_chain(index, obs_set, ctx)
            holder = _covering(chain, owners)
            if holder is not None:
                report.merged.append({"observation": index, "id": holder})
                continue
            h = self._replay(chain, state, ctx.frame)
            _register(owners, h, first)
            live.append(h)
            report.created += 1
        self.hypotheses, pruned = hypothesis_nms(live, ctx.frame, self.params, self.inference_params)
        report.pruned = [h.id for h in pruned]
        report.live = len(self.hypotheses)
        self.history.append((obs_set, ctx))
        self.prev_ctx = ctx
        logger.debug(
            "frame %d: %d live, %d created, %d merged, %d terminated, %d pruned",
            ctx.frame,
            report.live,
            report.created,
            len(report.merged),
            len(report.terminated),
            len(report.pruned),
        )
        return report

    def evict(self, h):
        h.prior = h.prior_mask = None

    def _terminate(self, h, report, reason):
        h.terminated = True
        report.terminated.append({"id": h.id, "reason": reason})

    def _extend(self, h, obs_set, ctx, report):
        report.extended += 1
        last = h.frames[-1]
        h.prior = kalman_predict(h.state, self.params.process_noise)
        h.prior_mask = _mask_motion(
            last.mask, self.prev_ctx, ctx.intrinsics, ctx.ego_motion, h.state.velocity, h.state.position
        )
        if h.prior_mask.is_empty():
            self._terminate(h, report, "predicted mask left the image")
            return
        match = associate(h, obs_set, ctx, self.params)
        if match is None:
            h.misses += 1
            if h.misses > self.params.max_misses:
                self._terminate(h, report, "too many misses")
                return
            h.state = h.prior
            h.frames.append(
                TrackFrame(
                    ctx.frame,
                    h.prior_mask,
                    True,
                    pos=h.state.position.copy(),
                    vel=h.state.velocity.copy(),
                )
            )
            return
        obs = obs_set[match.index]
        try:
            h.state = kalman_correct(h.prior, obs.pos, ctx.world_ground_plane, self.params.obs_noise)
        except InvariantViolation as exc:
            self._terminate(h, report, f"filter failure: {exc}")
            return
        h.misses = 0
        report.associated += 1
        h.frames.append(
            TrackFrame(
                ctx.frame,
                obs.mask,
                False,
                obs_index=match.index,
                score=obs.score,
                sim=match.iou,
                class_scores=obs.class_scores,
                pos=h.state.position.copy(),
                vel=h.state.velocity.copy(),
            )
        )

    def init_backward(self, index, obs_set, ctx):
        """
        Starts a hypothesis from observation `index` of the current frame.

        Returns:
            Hypothesis: With one TrackFrame per element of the backward chain.
        """
        chain, state = self.backward_chain(index, obs_set, ctx)
        return self._replay(chain, state, ctx.frame)

    def backward_chain(self, index, obs_set, ctx):
        """
        Associates observation `index` backwards through the stored history.

        The predict/associate loop runs with negated velocity and inverted
        ego-motion until the first miss or the end of the window.

        Returns:
            tuple: (chain as (ctx, observations, index, sim) oldest first,
            filter state at the oldest element).
        """
        obs = obs_set[index]
        params = self.params
        plane = ctx.world_ground_plane
        state = KalmanState.initial(ground_point(obs.pos, plane), obs.vel, params)
        chain = [(ctx, obs_set, index, 0.0)]
        walker = Hypothesis(-1, ctx.frame, [], state)
        cur_ctx, cur_mask = ctx, obs.mask
        for prev_set, prev_ctx in reversed(self.history):
            if prev_ctx.frame != cur_ctx.frame - 1:
                break
            walker.prior = kalman_predict(walker.state, params.process_noise, backward=True)
            walker.prior_mask = _mask_motion(
                cur_mask,
                cur_ctx,
                prev_ctx.intrinsics,
                cur_ctx.ego_motion.inverse(),
                -walker.state.velocity,
                walker.state.position,
            )
            match = associate(walker, prev_set, prev_ctx, params) if not walker.prior_mask.is_empty() else None
            if match is None:
                break
            prev_obs = prev_set[match.index]
            try:
                walker.state = kalman_correct(
                    walker.prior, prev_obs.pos, prev_ctx.world_ground_plane, params.obs_noise
                )
            except InvariantViolation:
                break
            # the IoU belongs to the later frame of the matched pair
            chain[-1] = chain[-1][:3] + (match.iou,)
            chain.append((prev_ctx, prev_set, match.index, 0.0))
            cur_ctx, cur_mask = prev_ctx, prev_obs.mask
        return list(reversed(chain)), walker.state

    def _replay(self, chain, backward_state, created):
        params = self.params
        frames = []
        state = None
        for step_ctx, step_set, obs_index, sim in chain:
            obs = step_set[obs_index]
            plane = step_ctx.world_ground_plane
            if state is None:
                velocity = backward_state.velocity if len(chain) > 1 else obs.vel
                state = KalmanState.initial(ground_point(obs.pos, plane), velocity, params)
            else:
                state = kalman_correct(
                    kalman_predict(state, params.process_noise), obs.pos, plane, params.obs_noise
                )
            frames.append(
                TrackFrame(
                    step_ctx.frame,
                    obs.mask,
                    False,
                    obs_index=obs_index,
                    score=obs.score,
                    sim=sim,
                    class_scores=obs.class_scores,
                    pos=state.position.copy(),
                    vel=state.velocity.copy(),
                )
            )
        return Hypothesis(self._new_id(), created, frames, state)
