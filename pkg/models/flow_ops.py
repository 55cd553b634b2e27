from typing import Dict, Iterable, Optional, Tuple

import numpy as np

from models.core import LOSS_LEVELS, MAX_LEVEL, FlowField, LossConfig, OcclusionMask, level_dims, require_same_shape
from models.errors import LevelOutOfRangeError
from models.raster import gradient_xy, pixel_grid, pool2, sample_bilinear, warp_array


def downsample_flow(flow: FlowField) -> FlowField:
    """
    Halve a flow field: 2x2 mean pooling of the vectors, then scale them by 0.5

    With a validity mask only valid members are averaged, and a pooled pixel stays
    valid when at least half of its cell was valid.
    """
    if flow.valid is None:
        means, _ = pool2(flow.uv)
        return FlowField(means * 0.5)
    means, valid_fraction = pool2(flow.uv, weights=flow.valid)
    return FlowField(means * 0.5, valid=valid_fraction >= 0.5)


def upsample_flow2(flow: FlowField, shape: Optional[Tuple[int, int]] = None) -> FlowField:
    """
    Double a flow field: bilinear upsampling of the vectors, then scale them by 2

    :param flow: the coarse field
    :param shape: (height, width) of the finer level, default twice the coarse dims
    """
    height, width = shape if shape is not None else (2 * flow.height, 2 * flow.width)
    xs, ys = pixel_grid(height, width)
    # pixel centers of the fine grid expressed in coarse pixel coordinates
    sampled = sample_bilinear(flow.uv, xs / 2.0 - 0.25, ys / 2.0 - 0.25)
    return FlowField(sampled.values * 2.0)


class FlowPyramid:
    """
    A flow field at several pyramid levels, vectors in each level's own pixel units
    """

    levels: Dict[int, FlowField]

    def __init__(self, levels: Dict[int, FlowField]):
        self.levels = dict(levels)

    @classmethod
    def from_flow(cls, flow: FlowField, max_level: int = MAX_LEVEL) -> "FlowPyramid":
        """
        Build levels 0..max_level by repeated downsample_flow
        """
        level_dims(flow.width, flow.height, max_level)
        levels = {0: flow}
        for level in range(1, max_level + 1):
            levels[level] = downsample_flow(levels[level - 1])
        return cls(levels)

    def level(self, level: int) -> FlowField:
        if level not in self.levels:
            raise LevelOutOfRangeError(f"Flow pyramid has no level {level}, available {sorted(self.levels)}")
        return self.levels[level]

    def __repr__(self):
        return f"<FlowPyramid levels={sorted(self.levels)}>"


def fb_occlusion_array(forward: np.ndarray, backward: np.ndarray, alpha1: float, alpha2: float) -> np.ndarray:
    warped = warp_array(backward, forward)
    back = warped.values
    mismatch = np.sum((forward + back) ** 2, axis=2)
    magnitude = np.sum(forward ** 2, axis=2) + np.sum(back ** 2, axis=2)
    return warped.outside | (mismatch > alpha1 * magnitude + alpha2)


def fb_occlusion(forward: FlowField, backward: FlowField, cfg: LossConfig) -> OcclusionMask:
    """
    Forward-backward consistency check

    A pixel is occluded when its forward target leaves the frame, or when the forward
    vector and the backward vector sampled at the target fail to cancel:
    |f + b~|^2 > occ_alpha1 * (|f|^2 + |b~|^2) + occ_alpha2

    :param forward: flow from frame1 to frame2
    :param backward: flow from frame2 to frame1
    :param cfg: supplies the two thresholds
    :return: occlusion flags in frame1's coordinates
    """
    require_same_shape(forward, backward)
    return OcclusionMask(fb_occlusion_array(forward.uv, backward.uv, cfg.occ_alpha1, cfg.occ_alpha2))


def occlusion_pyramid(
        forward: FlowPyramid,
        backward: FlowPyramid,
        cfg: LossConfig,
        levels: Iterable[int] = LOSS_LEVELS,
) -> Dict[int, OcclusionMask]:
    return {level: fb_occlusion(forward.level(level), backward.level(level), cfg) for level in levels}


def flow_gradient_magnitude(flow: FlowField) -> float:
    """
    Mean Frobenius norm of the flow Jacobian, sqrt(u_x^2 + u_y^2 + v_x^2 + v_y^2)
    """
    gx, gy = gradient_xy(flow.uv)
    return float(np.mean(np.sqrt(np.sum(gx ** 2 + gy ** 2, axis=2))))


def flow_norm(flow: FlowField) -> float:
    """
    Mean Euclidean length of the flow vectors
    """
    return float(np.mean(np.linalg.norm(flow.uv, axis=2)))
