import logging
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import sparse
from scipy.sparse.linalg import factorized

from models.core import MAX_LEVEL, FlowField, LossConfig, Sample, SampleEstimate
from models.errors import ImageTooSmallError
from models.flow_ops import FlowPyramid, fb_occlusion_array, upsample_flow2
from models.losses import edge_weights
from models.raster import build_image_pyramid, pixel_grid, sample_bilinear

TERMS = ("photometric", "smoothness", "supervised")


class OptimizerConfig(BaseModel):
    """
    Settings of the coarse-to-fine direct flow optimizer
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    coarsest_level: int = Field(default=4, ge=0, le=MAX_LEVEL, description="Pyramid level optimized first")
    finest_level: int = Field(default=0, ge=0, le=MAX_LEVEL, description="Pyramid level optimized last")
    iters_per_level: int = Field(default=200, gt=0, description="Maximum descent iterations per level")
    step: float = Field(default=2.0, gt=0.0, description="Largest per-pixel displacement of one update, pixels")
    charbonnier_eps: float = Field(default=1e-3, gt=0.0, description="Offset of the Charbonnier penalty")
    tolerance: float = Field(
        default=1e-4, ge=0.0, description="Relative objective decrease below which a level stops early"
    )
    damping: float = Field(default=1e-3, gt=0.0, description="Diagonal damping of the preconditioner")
    refresh_every: int = Field(default=5, ge=1, description="Accepted steps between preconditioner factorizations")
    max_halvings: int = Field(default=8, ge=0, description="Step halvings tried before a level gives up")
    loss: LossConfig = Field(default_factory=LossConfig, description="Supplies lambda_sm, alpha and the constants")

    @model_validator(mode="after")
    def levels_ordered(self) -> "OptimizerConfig":
        if self.coarsest_level < self.finest_level:
            raise ValueError(
                f"coarsest_level ({self.coarsest_level}) must not be finer than finest_level ({self.finest_level})"
            )
        return self

    @property
    def lambda_sm(self) -> float:
        return self.loss.lambda_sm

    @property
    def supervised_weight(self) -> float:
        return self.loss.alpha


def _second_difference(n: int) -> Optional[sparse.csr_matrix]:
    if n < 3:
        return None
    return sparse.diags([1.0, -2.0, 1.0], [0, 1, 2], shape=(n - 2, n), format="csr")


class LevelData:
    """
    Everything the objective needs at one pyramid level for one direction

    The occlusion mask and the edge weights are frozen for the lifetime of the object.
    """

    def __init__(
            self,
            frame1: np.ndarray,
            frame2: np.ndarray,
            occluded: Optional[np.ndarray] = None,
            label: Optional[np.ndarray] = None,
            label_valid: Optional[np.ndarray] = None,
            delta: float = 10.0,
    ):
        self.frame1 = np.asarray(frame1, dtype=np.float64)
        self.frame2 = np.asarray(frame2, dtype=np.float64)
        self.height, self.width = self.frame1.shape[:2]
        shape = (self.height, self.width)
        self.occluded = np.zeros(shape, dtype=bool) if occluded is None else np.asarray(occluded, dtype=bool)
        self.xs, self.ys = pixel_grid(self.height, self.width)

        if label is not None:
            valid = np.ones(shape, dtype=bool) if label_valid is None else np.asarray(label_valid, dtype=bool)
            self.label_valid = valid
            self.label = np.where(valid[..., None], label, 0.0)
        else:
            self.label_valid = None
            self.label = None

        weight_x, weight_y = edge_weights(self.frame1, delta)
        self.stencils = []
        row_x = _second_difference(self.width)
        if row_x is not None:
            self.stencils.append((sparse.kron(sparse.identity(self.height), row_x, format="csr"),
                                  weight_x[:, 1:-1].ravel()))
        column_y = _second_difference(self.height)
        if column_y is not None:
            self.stencils.append((sparse.kron(column_y, sparse.identity(self.width), format="csr"),
                                  weight_y[1:-1].ravel()))

    @property
    def size(self) -> int:
        return self.height * self.width

    def require_label(self, labeled: bool) -> bool:
        if labeled and self.label is None:
            raise ValueError("Labeled objective requested on level data without a label")
        return labeled


def _warp(flow: np.ndarray, data: LevelData):
    return sample_bilinear(data.frame2, data.xs + flow[..., 0], data.ys + flow[..., 1])


def _supervised_parts(flow: np.ndarray, data: LevelData):
    difference = flow - data.label
    distance = np.abs(difference).sum(axis=2)
    valid = data.label_valid
    count = int(valid.sum())
    return difference, distance, valid, count


def objective_terms(flow: np.ndarray, data: LevelData, labeled: bool, cfg: OptimizerConfig) -> Dict[str, float]:
    """
    The three unweighted parts of the per-level objective

    photometric: (1/N) sum_p (1 - occ_p) sum_c sqrt(r^2 + eps_c^2), r = I1(p) - I2(p + f(p))
    smoothness: (1/2N) sum over z, p and components of w_z(p) * (sqrt(d^2 + eps_c^2) - eps_c),
    d the second difference along z
    supervised: mean over valid pixels of (|f - U|_1 + eps)^q, 0 when unlabeled
    """
    labeled = data.require_label(labeled)
    ec = cfg.charbonnier_eps
    n = data.size

    residual = data.frame1 - _warp(flow, data).values
    charbonnier = np.sqrt(residual ** 2 + ec ** 2).sum(axis=2)
    photometric = float(np.sum(charbonnier * ~data.occluded)) / n

    smoothness = 0.0
    for operator, weight in data.stencils:
        for component in range(2):
            second = operator @ flow[..., component].ravel()
            smoothness += float(np.sum(weight * (np.sqrt(second ** 2 + ec ** 2) - ec)))
    smoothness /= 2.0 * n

    supervised = 0.0
    if labeled:
        _, distance, valid, count = _supervised_parts(flow, data)
        if count:
            supervised = float(np.mean((distance[valid] + cfg.loss.eps) ** cfg.loss.q))
    return {"photometric": photometric, "smoothness": smoothness, "supervised": supervised}


def combine_terms(terms: Dict[str, float], cfg: OptimizerConfig):
    return terms["photometric"] + cfg.lambda_sm * terms["smoothness"] + cfg.supervised_weight * terms["supervised"]


def objective(flow: np.ndarray, data: LevelData, labeled: bool, cfg: OptimizerConfig) -> float:
    """
    Per-level objective: photometric + lambda_sm * smoothness (+ alpha * supervised when labeled)

    :param flow: H x W x 2 flow at this level
    :param data: frames, frozen occlusion and optional label at this level
    :param labeled: whether the supervised term is switched on
    :param cfg: optimizer settings
    """
    return combine_terms(objective_terms(flow, data, labeled, cfg), cfg)


def gradient_terms(flow: np.ndarray, data: LevelData, labeled: bool, cfg: OptimizerConfig) -> Dict[str, np.ndarray]:
    """
    Analytic gradients of the three objective terms, each H x W x 2
    """
    labeled = data.require_label(labeled)
    ec = cfg.charbonnier_eps
    n = data.size
    shape = (data.height, data.width)

    warped = _warp(flow, data)
    residual = data.frame1 - warped.values
    coefficient = residual / np.sqrt(residual ** 2 + ec ** 2) * (~data.occluded)[..., None]
    photometric = np.stack([
        -np.sum(coefficient * warped.dx, axis=2),
        -np.sum(coefficient * warped.dy, axis=2),
    ], axis=2) / n

    smoothness = np.zeros_like(flow)
    for operator, weight in data.stencils:
        for component in range(2):
            second = operator @ flow[..., component].ravel()
            smoothness[..., component] += (operator.T @ (weight * second / np.sqrt(second ** 2 + ec ** 2))).reshape(shape)
    smoothness /= 2.0 * n

    supervised = np.zeros_like(flow)
    if labeled:
        difference, distance, valid, count = _supervised_parts(flow, data)
        if count:
            scale = cfg.loss.q * (distance + cfg.loss.eps) ** (cfg.loss.q - 1.0) * valid / count
            supervised = scale[..., None] * np.sign(difference)
    return {"photometric": photometric, "smoothness": smoothness, "supervised": supervised}


def objective_gradient(flow: np.ndarray, data: LevelData, labeled: bool, cfg: OptimizerConfig) -> np.ndarray:
    """
    Per-pixel (dL/du, dL/dv) of `objective`, H x W x 2
    """
    terms = gradient_terms(flow, data, labeled, cfg)
    return combine_terms(terms, cfg)


def _preconditioner(flow: np.ndarray, data: LevelData, labeled: bool, cfg: OptimizerConfig) -> sparse.csc_matrix:
    """
    N times an iteratively reweighted quadratic model of the objective around `flow`, plus damping
    """
    ec = cfg.charbonnier_eps
    n = data.size
    warped = _warp(flow, data)
    residual = data.frame1 - warped.values
    weight = (~data.occluded)[..., None] / np.sqrt(residual ** 2 + ec ** 2)
    uu = np.sum(weight * warped.dx ** 2, axis=2).ravel()
    uv = np.sum(weight * warped.dx * warped.dy, axis=2).ravel()
    vv = np.sum(weight * warped.dy ** 2, axis=2).ravel()

    blocks = [sparse.diags(uu), sparse.diags(vv)]
    for component in range(2):
        for operator, edge in data.stencils:
            second = operator @ flow[..., component].ravel()
            reweighted = sparse.diags(cfg.lambda_sm / 2.0 * edge / np.sqrt(second ** 2 + ec ** 2))
            blocks[component] = blocks[component] + operator.T @ reweighted @ operator

    if labeled:
        difference, distance, valid, count = _supervised_parts(flow, data)
        if count:
            outer = cfg.loss.q * (distance + cfg.loss.eps) ** (cfg.loss.q - 1.0) * valid * (n / count)
            for component in range(2):
                inner = outer / np.maximum(np.abs(difference[..., component]), cfg.loss.eps)
                blocks[component] = blocks[component] + sparse.diags(cfg.supervised_weight * inner.ravel())

    coupling = sparse.diags(uv)
    system = sparse.bmat([[blocks[0], coupling], [coupling, blocks[1]]])
    return (system + cfg.damping * sparse.identity(2 * n)).tocsc()


def factorize_preconditioner(
        flow: np.ndarray, data: LevelData, labeled: bool, cfg: OptimizerConfig
) -> Callable[[np.ndarray], np.ndarray]:
    """
    Sparse factorization of the reweighted quadratic model at `flow`, returned as a solver
    """
    return factorized(_preconditioner(flow, data, labeled, cfg))


def descent_direction(
        flow: np.ndarray,
        data: LevelData,
        labeled: bool,
        cfg: OptimizerConfig,
        solve: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> np.ndarray:
    """
    Preconditioned negative gradient, rescaled so no pixel moves farther than cfg.step

    :param solve: a factorization from an earlier flow; a fresh one is built when absent
    """
    n = data.size
    if solve is None:
        solve = factorize_preconditioner(flow, data, labeled, cfg)
    gradient = objective_gradient(flow, data, labeled, cfg) * n
    rhs = -np.concatenate([gradient[..., 0].ravel(), gradient[..., 1].ravel()])
    solution = solve(rhs)
    direction = np.stack([solution[:n], solution[n:]], axis=1).reshape(data.height, data.width, 2)
    longest = float(np.max(np.linalg.norm(direction, axis=2)))
    if longest > cfg.step:
        direction *= cfg.step / longest
    return direction


def _line_search(
        flow: np.ndarray, value: float, direction: np.ndarray, data: LevelData, labeled: bool, cfg: OptimizerConfig
) -> Tuple[Optional[np.ndarray], float, float]:
    scale = 1.0
    for _ in range(cfg.max_halvings + 1):
        trial = flow + scale * direction
        trial_value = objective(trial, data, labeled, cfg)
        if trial_value < value:
            return trial, trial_value, scale
        scale *= 0.5
    return None, value, scale


def descend(flow: np.ndarray, data: LevelData, labeled: bool, cfg: OptimizerConfig) -> Tuple[np.ndarray, float, int]:
    """
    Run descent at one level; every accepted step strictly lowers the objective

    The preconditioner is factorized every cfg.refresh_every steps and reused in between.
    A level stops only when a freshly factorized direction finds no decrease.
    :return: the final flow, its objective value and the number of accepted steps
    """
    value = objective(flow, data, labeled, cfg)
    accepted = 0
    solve, age = None, 0
    for iteration in range(cfg.iters_per_level):
        if solve is None or age >= cfg.refresh_every:
            solve, age = factorize_preconditioner(flow, data, labeled, cfg), 0
        direction = descent_direction(flow, data, labeled, cfg, solve)
        candidate, candidate_value, scale = _line_search(flow, value, direction, data, labeled, cfg)
        if candidate is None and age > 0:
            solve, age = factorize_preconditioner(flow, data, labeled, cfg), 0
            direction = descent_direction(flow, data, labeled, cfg, solve)
            candidate, candidate_value, scale = _line_search(flow, value, direction, data, labeled, cfg)
        if candidate is None:
            break
        decrease = value - candidate_value
        logging.debug(f"iteration {iteration}: objective {value:.6f} -> {candidate_value:.6f} (step scale {scale})")
        flow, value = candidate, candidate_value
        accepted += 1
        age += 1
        if decrease <= cfg.tolerance * max(abs(value), 1e-12):
            break
    return flow, value, accepted


def optimize_flow(sample: Sample, labeled: bool, cfg: OptimizerConfig) -> SampleEstimate:
    """
    Coarse-to-fine estimate of the forward flow and, via the swapped pair, the backward flow

    Starting from zero flow at the coarsest level, each level recomputes the
    forward-backward occlusion once, descends both directions with the mask frozen,
    then upsamples the result as the next level's initialization.
    :param sample: the frame pair
    :param labeled: charge the supervised term against sample.label on the forward direction
    :param cfg: optimizer settings
    :return: forward and backward flows at full resolution
    """
    if labeled and not sample.is_labeled:
        raise ValueError(f"Sample {sample.id} has no label to optimize against")
    factor = 2 ** cfg.coarsest_level
    if sample.frame1.width < factor or sample.frame1.height < factor:
        raise ImageTooSmallError(
            f"Sample {sample.id} is {sample.frame1.width}x{sample.frame1.height}, "
            f"level {cfg.coarsest_level} needs at least {factor}x{factor}"
        )

    loss = cfg.loss
    pyr1 = build_image_pyramid(sample.frame1, cfg.coarsest_level)
    pyr2 = build_image_pyramid(sample.frame2, cfg.coarsest_level)
    labels = FlowPyramid.from_flow(sample.label, cfg.coarsest_level) if labeled else None

    height, width = pyr1.level(cfg.coarsest_level).shape
    forward = np.zeros((height, width, 2))
    backward = np.zeros((height, width, 2))
    for level in range(cfg.coarsest_level, cfg.finest_level - 1, -1):
        frame1, frame2 = pyr1.level(level).data, pyr2.level(level).data
        if forward.shape[:2] != frame1.shape[:2]:
            forward = upsample_flow2(FlowField(forward), shape=frame1.shape[:2]).uv
            backward = upsample_flow2(FlowField(backward), shape=frame1.shape[:2]).uv

        occ_forward = fb_occlusion_array(forward, backward, loss.occ_alpha1, loss.occ_alpha2)
        occ_backward = fb_occlusion_array(backward, forward, loss.occ_alpha1, loss.occ_alpha2)
        label = labels.level(level) if labels is not None else None
        forward_data = LevelData(
            frame1, frame2, occ_forward,
            label=label.uv if label is not None else None,
            label_valid=label.valid_mask() if label is not None else None,
            delta=loss.delta,
        )
        backward_data = LevelData(frame2, frame1, occ_backward, delta=loss.delta)

        forward, forward_value, forward_steps = descend(forward, forward_data, labeled, cfg)
        backward, backward_value, backward_steps = descend(backward, backward_data, False, cfg)
        logging.debug(
            f"{sample.id} level {level}: forward {forward_value:.5f} ({forward_steps} steps), "
            f"backward {backward_value:.5f} ({backward_steps} steps)"
        )

    for level in range(cfg.finest_level - 1, -1, -1):
        shape = pyr1.level(level).shape
        forward = upsample_flow2(FlowField(forward), shape=shape).uv
        backward = upsample_flow2(FlowField(backward), shape=shape).uv
    return SampleEstimate(FlowField(forward), FlowField(backward))


### Gradient oracle

GRADCHECK_CONFIG = OptimizerConfig(charbonnier_eps=0.1)


class GradientReport(BaseModel):
    """
    Max-norm relative error of analytic against central finite-difference gradients
    """

    seed: int
    size: int
    h: float
    threshold: float
    photometric: float = Field(description="Relative error of the photometric term alone")
    smoothness: float = Field(description="Relative error of the smoothness term alone")
    supervised: float = Field(description="Relative error of the supervised term alone")
    joint: float = Field(description="Relative error of the weighted objective")

    @property
    def worst(self) -> float:
        return max(self.photometric, self.smoothness, self.supervised, self.joint)

    @property
    def passed(self) -> bool:
        return self.worst < self.threshold


def gradcheck_instance(seed: int, size: int = 16) -> Tuple[np.ndarray, LevelData]:
    """
    A seeded random instance away from every kink of the objective

    Sample points keep a fractional part in [0.05, 0.95] so no finite-difference step
    crosses a bilinear cell edge, and the label differs from the flow by at least
    0.5 px per component.
    """
    rng = np.random.default_rng(seed)
    frame1 = rng.random((size, size, 3))
    frame2 = rng.random((size, size, 3))
    whole = rng.integers(-2, 3, size=(size, size, 2)).astype(np.float64)
    flow = whole + rng.uniform(0.05, 0.95, size=(size, size, 2))
    offset = rng.uniform(0.5, 1.5, size=(size, size, 2)) * rng.choice([-1.0, 1.0], size=(size, size, 2))
    occluded = rng.random((size, size)) < 0.1
    return flow, LevelData(frame1, frame2, occluded, label=flow + offset)


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), 1e-12)
    return float(np.max(np.abs(analytic - numeric))) / scale


def check_gradient(
        seed: int,
        size: int = 16,
        h: float = 1e-3,
        cfg: OptimizerConfig = GRADCHECK_CONFIG,
        threshold: float = 1e-4,
) -> GradientReport:
    """
    Compare `gradient_terms` with central finite differences on a seeded instance

    :param seed: instance seed
    :param size: side of the square instance
    :param h: finite-difference step, pixels
    :param cfg: optimizer settings (weights of the joint objective, Charbonnier offset)
    :param threshold: largest acceptable relative error
    """
    flow, data = gradcheck_instance(seed, size)
    analytic = gradient_terms(flow, data, True, cfg)
    numeric = {term: np.zeros_like(flow) for term in TERMS}
    for index in np.ndindex(flow.shape):
        plus, minus = flow.copy(), flow.copy()
        plus[index] += h
        minus[index] -= h
        upper = objective_terms(plus, data, True, cfg)
        lower = objective_terms(minus, data, True, cfg)
        for term in TERMS:
            numeric[term][index] = (upper[term] - lower[term]) / (2.0 * h)

    errors = {term: _relative_error(analytic[term], numeric[term]) for term in TERMS}
    errors["joint"] = _relative_error(combine_terms(analytic, cfg), combine_terms(numeric, cfg))
    return GradientReport(seed=seed, size=size, h=h, threshold=threshold, **errors)
