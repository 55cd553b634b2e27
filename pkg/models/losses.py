import math
from typing import Dict, List, Mapping, Tuple

import numpy as np
from pydantic import BaseModel, Field

from models.core import (
    LOSS_LEVELS,
    Dataset,
    FlowField,
    Image,
    LossConfig,
    OcclusionMask,
    Sample,
    SampleEstimate,
    Weights5,
    require_same_shape,
)
from models.errors import RecordMismatchError
from models.flow_ops import FlowPyramid, occlusion_pyramid
from models.raster import (
    ImagePyramid,
    build_image_pyramid,
    census_distance,
    census_interior,
    census_transform,
    gradient_xy,
    ssim_map,
    warp_image,
)

ZERO5: Weights5 = (0.0, 0.0, 0.0, 0.0, 0.0)


class LossBreakdown(BaseModel):
    """
    The terms of one sample's loss; per-level tuples hold weighted contributions for levels 2..6
    """

    photometric: float = Field(default=0.0, description="Photometric loss, forward and backward averaged")
    smoothness: float = Field(default=0.0, description="Smoothness loss before lambda_sm, directions averaged")
    supervised: float = Field(default=0.0, description="Multi-scale robust supervised loss before alpha")
    total: float = Field(default=0.0, description="Loss charged for the sample")
    photometric_levels: Weights5 = Field(default=ZERO5)
    smoothness_levels: Weights5 = Field(default=ZERO5)
    supervised_levels: Weights5 = Field(default=ZERO5)


def photometric_level(I1l: Image, I2l: Image, flow_l: FlowField, occ_l: OcclusionMask, cfg: LossConfig) -> float:
    """
    Occlusion-aware photometric loss at one pyramid level

    Frame 2 is warped into frame 1 by the flow; c1 * L1 + c2 * (1 - SSIM) / 2 + c3 * census
    is averaged over non-occluded pixels (SSIM and census over non-occluded interior pixels).
    A fully occluded level costs 0.
    """
    require_same_shape(I1l, I2l, flow_l, occ_l)
    visible = ~occ_l.occluded
    if not visible.any():
        return 0.0
    warped, _ = warp_image(I2l, flow_l)
    c_l1, c_ssim, c_census = cfg.census_weights

    loss = 0.0
    if c_l1 > 0:
        l1 = np.abs(I1l.data - warped.data).mean(axis=2)
        loss += c_l1 * float(l1[visible].mean())
    interior = visible & census_interior(*I1l.shape)
    if not interior.any():
        return loss
    if c_ssim > 0:
        dissimilarity = (1.0 - ssim_map(I1l, warped)) / 2.0
        loss += c_ssim * float(dissimilarity[interior].mean())
    if c_census > 0:
        distance = census_distance(census_transform(I1l), census_transform(warped))
        loss += c_census * float(distance[interior].mean())
    return loss


def _photometric_levels(
        pyr1: ImagePyramid,
        pyr2: ImagePyramid,
        flow_pyr: FlowPyramid,
        occ_pyr: Mapping[int, OcclusionMask],
        cfg: LossConfig,
) -> List[float]:
    values = []
    for level, weight in zip(LOSS_LEVELS, cfg.w_ph):
        if weight == 0:
            values.append(0.0)
            continue
        values.append(weight * photometric_level(
            pyr1.level(level), pyr2.level(level), flow_pyr.level(level), occ_pyr[level], cfg
        ))
    return values


def photometric_loss(
        pyr1: ImagePyramid,
        pyr2: ImagePyramid,
        flow_pyr: FlowPyramid,
        occ_pyr: Mapping[int, OcclusionMask],
        cfg: LossConfig,
) -> float:
    """
    Sum over levels 2..6 of w_ph(l) * photometric_level(l)
    """
    return math.fsum(_photometric_levels(pyr1, pyr2, flow_pyr, occ_pyr, cfg))


def edge_weights(image: np.ndarray, delta: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    exp(-delta * sum_c |dI/dz|) for z = x and z = y, each H x W
    """
    gx, gy = gradient_xy(image)
    return np.exp(-delta * np.abs(gx).sum(axis=2)), np.exp(-delta * np.abs(gy).sum(axis=2))


def smoothness_level(flow_l: FlowField, I1l: Image, cfg: LossConfig) -> float:
    """
    Edge-aware second-order smoothness at one level

    (1 / 2N) * sum over z in {x, y} and pixels p of |U(p - e_z) - 2U(p) + U(p + e_z)|_1
    * exp(-delta * |dI1(p)/dz|_1); pixels on the 1-pixel border along z are skipped.
    """
    require_same_shape(flow_l, I1l)
    height, width = flow_l.shape
    uv = flow_l.uv
    weight_x, weight_y = edge_weights(I1l.data, cfg.delta)

    total = 0.0
    if width >= 3:
        second_x = np.abs(uv[:, :-2] - 2 * uv[:, 1:-1] + uv[:, 2:]).sum(axis=2)
        total += float(np.sum(second_x * weight_x[:, 1:-1]))
    if height >= 3:
        second_y = np.abs(uv[:-2] - 2 * uv[1:-1] + uv[2:]).sum(axis=2)
        total += float(np.sum(second_y * weight_y[1:-1]))
    return total / (2.0 * height * width)


def _smoothness_levels(flow_pyr: FlowPyramid, image_pyr: ImagePyramid, cfg: LossConfig) -> List[float]:
    values = []
    for level, weight in zip(LOSS_LEVELS, cfg.w_sm):
        if weight == 0:
            values.append(0.0)
            continue
        values.append(weight * smoothness_level(flow_pyr.level(level), image_pyr.level(level), cfg))
    return values


def smoothness_loss(flow_pyr: FlowPyramid, image_pyr: ImagePyramid, cfg: LossConfig) -> float:
    """
    Sum over levels 2..6 of w_sm(l) * smoothness_level(l); the default weights keep level 2 only
    """
    return math.fsum(_smoothness_levels(flow_pyr, image_pyr, cfg))


def _mean_pair(first: List[float], second: List[float]) -> Weights5:
    return tuple((a + b) / 2.0 for a, b in zip(first, second))


def unsupervised_loss(
        sample: Sample,
        forward: FlowPyramid,
        backward: FlowPyramid,
        occ_forward: Mapping[int, OcclusionMask],
        occ_backward: Mapping[int, OcclusionMask],
        cfg: LossConfig,
) -> LossBreakdown:
    """
    Photometric plus lambda_sm * smoothness, each averaged over the forward and backward directions

    :param sample: the frame pair (its label is ignored)
    :param forward: frame1 -> frame2 flow pyramid
    :param backward: frame2 -> frame1 flow pyramid
    :param occ_forward: occlusion of frame1 per level
    :param occ_backward: occlusion of frame2 per level
    :param cfg: loss weights
    """
    pyr1 = build_image_pyramid(sample.frame1)
    pyr2 = build_image_pyramid(sample.frame2)
    photometric = _mean_pair(
        _photometric_levels(pyr1, pyr2, forward, occ_forward, cfg),
        _photometric_levels(pyr2, pyr1, backward, occ_backward, cfg),
    )
    smoothness = _mean_pair(
        _smoothness_levels(forward, pyr1, cfg),
        _smoothness_levels(backward, pyr2, cfg),
    )
    photometric_total = math.fsum(photometric)
    smoothness_total = math.fsum(smoothness)
    # the augmentation term is carried in the config but never evaluated
    total = photometric_total + cfg.lambda_sm * smoothness_total + cfg.lambda_aug * 0.0
    return LossBreakdown(
        photometric=photometric_total,
        smoothness=smoothness_total,
        total=total,
        photometric_levels=photometric,
        smoothness_levels=smoothness,
    )


def _supervised_levels(flow_pyr: FlowPyramid, gt: FlowField, cfg: LossConfig) -> List[float]:
    gt_pyr = FlowPyramid.from_flow(gt)
    values = []
    for level, weight in zip(LOSS_LEVELS, cfg.w_sup):
        if weight == 0:
            values.append(0.0)
            continue
        truth = gt_pyr.level(level)
        estimate = flow_pyr.level(level)
        require_same_shape(estimate, truth)
        valid = truth.valid_mask()
        if not valid.any():
            values.append(0.0)
            continue
        distance = np.abs(estimate.uv - truth.uv).sum(axis=2)[valid]
        values.append(weight * float(np.mean((distance + cfg.eps) ** cfg.q)))
    return values


def supervised_loss(flow_pyr: FlowPyramid, gt: FlowField, cfg: LossConfig, valid: np.ndarray = None) -> float:
    """
    Multi-scale robust L1 loss: sum over levels 2..6 of w_sup(l) / |valid(l)| * sum_p (|U^ - U|_1 + eps)^q

    The ground truth and its validity mask are pooled down per level; a level without
    valid pixels contributes nothing.
    :param flow_pyr: estimated flow pyramid
    :param gt: full-resolution ground truth
    :param cfg: loss weights and the robust-norm constants
    :param valid: optional mask overriding gt.valid
    """
    if valid is not None:
        gt = FlowField(gt.uv, valid=valid)
    return math.fsum(_supervised_levels(flow_pyr, gt, cfg))


def estimate_pyramids(
        estimate: SampleEstimate, cfg: LossConfig
) -> Tuple[FlowPyramid, FlowPyramid, Dict[int, OcclusionMask], Dict[int, OcclusionMask]]:
    """
    Flow pyramids of both directions and their per-level forward-backward occlusion masks
    """
    forward = FlowPyramid.from_flow(estimate.forward)
    backward = FlowPyramid.from_flow(estimate.backward)
    return forward, backward, occlusion_pyramid(forward, backward, cfg), occlusion_pyramid(backward, forward, cfg)


def evaluate_sample(sample: Sample, estimate: SampleEstimate, cfg: LossConfig) -> LossBreakdown:
    """
    Full loss breakdown of one sample from full-resolution forward and backward estimates

    Unlabeled samples pay the unsupervised loss. Labeled samples pay alpha * supervised,
    plus the unsupervised loss only when cfg.unsup_on_labeled is set.
    """
    require_same_shape(sample.frame1, estimate.forward)
    forward, backward, occ_forward, occ_backward = estimate_pyramids(estimate, cfg)
    if not sample.is_labeled:
        return unsupervised_loss(sample, forward, backward, occ_forward, occ_backward, cfg)

    supervised = _supervised_levels(forward, sample.label, cfg)
    breakdown = LossBreakdown(supervised=math.fsum(supervised), supervised_levels=tuple(supervised))
    if cfg.unsup_on_labeled:
        breakdown = unsupervised_loss(sample, forward, backward, occ_forward, occ_backward, cfg).model_copy(
            update={"supervised": breakdown.supervised, "supervised_levels": breakdown.supervised_levels}
        )
        return breakdown.model_copy(update={"total": breakdown.total + cfg.alpha * breakdown.supervised})
    return breakdown.model_copy(update={"total": cfg.alpha * breakdown.supervised})


def semi_supervised_sample_loss(sample: Sample, estimate: SampleEstimate, cfg: LossConfig) -> float:
    return evaluate_sample(sample, estimate, cfg).total


def dataset_loss(dataset: Dataset, estimates: Mapping[str, SampleEstimate], cfg: LossConfig) -> float:
    """
    Sum of the per-sample semi-supervised losses over the dataset

    The unlabeled and labeled parts are summed separately and then added, so the loss of
    a dataset equals, bit for bit, the loss of its unlabeled part plus that of its labeled part.
    :param dataset: labeled and unlabeled samples
    :param estimates: forward/backward estimate per sample id
    """
    missing = [sample_id for sample_id in dataset.ids if sample_id not in estimates]
    if missing:
        raise RecordMismatchError(f"No flow estimate for samples {missing}")
    parts = [
        math.fsum(semi_supervised_sample_loss(sample, estimates[sample.id], cfg) for sample in part)
        for part in (dataset.unlabeled(), dataset.labeled())
    ]
    return parts[0] + parts[1]
