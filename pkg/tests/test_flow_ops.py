import numpy as np
import pytest

from models.core import FlowField, LossConfig
from models.flow_ops import (
    FlowPyramid,
    downsample_flow,
    fb_occlusion,
    flow_gradient_magnitude,
    flow_norm,
    occlusion_pyramid,
    upsample_flow2,
)


def test_downsample_flow():
    np.testing.assert_allclose(downsample_flow(FlowField.constant(4, 4, 4.0, 4.0)).uv, 2.0)
    np.testing.assert_array_equal(downsample_flow(FlowField.zeros(6, 2)).uv, 0.0)
    uv = np.array([[[1.0, 0.0], [3.0, 0.0]], [[1.0, 0.0], [3.0, 0.0]]])
    np.testing.assert_allclose(downsample_flow(FlowField(uv)).uv[0, 0], [1.0, 0.0])


def test_downsample_sparse_flow_keeps_half_valid_cells():
    uv = np.zeros((2, 4, 2))
    uv[0, 0] = (4.0, 2.0)
    uv[1, 0] = (8.0, 6.0)
    uv[0, 2] = (10.0, 10.0)
    valid = np.array([[True, False, True, False], [True, False, False, False]])
    pooled = downsample_flow(FlowField(uv, valid=valid))
    np.testing.assert_array_equal(pooled.valid_mask(), [[True, False]])
    np.testing.assert_allclose(pooled.uv[0, 0], [3.0, 2.0])


def test_upsample_flow():
    np.testing.assert_allclose(upsample_flow2(FlowField.constant(3, 3, 2.0, 2.0)).uv, 4.0)
    assert upsample_flow2(FlowField.zeros(3, 2), shape=(3, 5)).shape == (3, 5)
    constant = FlowField.constant(8, 8, 1.5, -0.5)
    np.testing.assert_allclose(upsample_flow2(downsample_flow(constant)).uv, constant.uv)


def test_down_then_up_preserves_linear_fields():
    ys, xs = np.mgrid[0:16, 0:16].astype(np.float64)
    flow = FlowField(np.stack([0.3 * xs + 0.1 * ys + 1.0, -0.2 * xs + 0.5 * ys], axis=2))
    restored = upsample_flow2(downsample_flow(flow), shape=flow.shape)
    np.testing.assert_allclose(restored.uv[1:-1, 1:-1], flow.uv[1:-1, 1:-1], atol=1e-6)


def test_flow_pyramid_levels():
    pyramid = FlowPyramid.from_flow(FlowField.constant(64, 64, 8.0, 0.0))
    assert pyramid.level(3).shape == (8, 8)
    np.testing.assert_allclose(pyramid.level(3).u, 1.0)


def test_constant_shift_occludes_rightmost_columns(cfg):
    forward = FlowField.constant(20, 4, 5.0, 0.0)
    backward = FlowField.constant(20, 4, -5.0, 0.0)
    mask = fb_occlusion(forward, backward, cfg)
    assert mask.occluded[:, 15:].all()
    assert not mask.occluded[:, :15].any()
    assert mask.ratio == 0.25


def test_consistent_zero_flow_has_no_occlusion(cfg):
    assert fb_occlusion(FlowField.zeros(8, 8), FlowField.zeros(8, 8), cfg).ratio == 0.0


def test_inconsistent_flow_is_occluded(cfg):
    mask = fb_occlusion(FlowField.constant(8, 8, 1.0, 0.0), FlowField.zeros(8, 8), cfg)
    assert mask.occluded.all()


def test_occlusion_symmetric_under_frame_swap(cfg):
    forward = FlowField.constant(12, 5, 3.0, 0.0)
    backward = FlowField.constant(12, 5, -3.0, 0.0)
    first = fb_occlusion(forward, backward, cfg).occluded
    second = fb_occlusion(backward, forward, cfg).occluded
    np.testing.assert_array_equal(first[:, ::-1], second)


def test_occlusion_ratio_bounded(rng, cfg):
    mask = fb_occlusion(FlowField(rng.normal(size=(9, 9, 2))), FlowField(rng.normal(size=(9, 9, 2))), cfg)
    assert 0.0 <= mask.ratio <= 1.0


def test_occlusion_pyramid_levels(cfg):
    forward = FlowPyramid.from_flow(FlowField.zeros(64, 64))
    masks = occlusion_pyramid(forward, forward, cfg)
    assert sorted(masks) == [2, 3, 4, 5, 6]
    assert masks[2].shape == (16, 16)


def brute_force_jacobian_norm(uv: np.ndarray) -> float:
    height, width = uv.shape[:2]

    def derivative(values, index, limit, step):
        if limit == 1:
            return 0.0
        if index == 0:
            return step(1) - step(0)
        if index == limit - 1:
            return step(limit - 1) - step(limit - 2)
        return (step(index + 1) - step(index - 1)) / 2.0

    total = 0.0
    for y in range(height):
        for x in range(width):
            squared = 0.0
            for c in range(2):
                dx = derivative(uv, x, width, lambda i: uv[y, i, c])
                dy = derivative(uv, y, height, lambda j: uv[j, x, c])
                squared += dx * dx + dy * dy
            total += squared ** 0.5
    return total / (height * width)


def test_flow_gradient_magnitude():
    assert flow_gradient_magnitude(FlowField.constant(5, 5, 3.0, 1.0)) == 0.0
    ys, xs = np.mgrid[0:6, 0:7].astype(np.float64)
    assert flow_gradient_magnitude(FlowField(np.stack([xs, np.zeros_like(xs)], axis=2))) == pytest.approx(1.0)
    cx, cy = 3.0, 2.5
    radius = np.hypot(xs - cx, ys - cy)
    swirl = np.stack([-(ys - cy) * radius, (xs - cx) * radius], axis=2)
    assert flow_gradient_magnitude(FlowField(swirl)) == pytest.approx(brute_force_jacobian_norm(swirl), rel=1e-12)


def test_flow_norm():
    assert flow_norm(FlowField.constant(3, 3, 3.0, 4.0)) == pytest.approx(5.0)


def test_loss_config_thresholds_drive_occlusion():
    loose = LossConfig(occ_alpha2=2.0)
    mask = fb_occlusion(FlowField.constant(8, 8, 1.0, 0.0), FlowField.zeros(8, 8), loose)
    assert mask.occluded[:, :7].sum() == 0
