from typing import Dict, NamedTuple, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from models.core import MAX_LEVEL, FlowField, Image, level_dims, require_same_shape
from models.errors import DimensionMismatchError, LevelOutOfRangeError

CENSUS_SOFTNESS = 0.81
CENSUS_HAMMING_EPS = 0.1
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2

### (dy, dx) offsets of the 3x3 census neighborhood, row-major, center excluded
CENSUS_OFFSETS: Tuple[Tuple[int, int], ...] = (
    (-1, -1), (-1, 0), (-1, 1),
    (0, -1), (0, 1),
    (1, -1), (1, 0), (1, 1),
)


class BilinearSample(NamedTuple):
    values: np.ndarray
    dx: np.ndarray
    dy: np.ndarray
    outside: np.ndarray


def sample_bilinear(data: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> BilinearSample:
    """
    Bilinear interpolation of an H x W x C array at arbitrary coordinates

    Coordinates outside [0, W-1] x [0, H-1] are clamped to the border and flagged.
    The returned dx/dy are the exact partial derivatives of the interpolant; they are
    zero along an axis whose coordinate was clamped.

    :param data: H x W x C array
    :param xs: column coordinates, any shape S
    :param ys: row coordinates, shape S
    :return: values, dx, dy with shape S x C and the S-shaped outside flags
    """
    height, width = data.shape[:2]
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    inside_x = (xs >= 0.0) & (xs <= width - 1)
    inside_y = (ys >= 0.0) & (ys <= height - 1)

    xc = np.clip(xs, 0.0, width - 1)
    yc = np.clip(ys, 0.0, height - 1)
    x0 = np.minimum(np.floor(xc).astype(np.int64), max(width - 2, 0))
    y0 = np.minimum(np.floor(yc).astype(np.int64), max(height - 2, 0))
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    wx = (xc - x0)[..., None]
    wy = (yc - y0)[..., None]

    top_left = data[y0, x0]
    top_right = data[y0, x1]
    bottom_left = data[y1, x0]
    bottom_right = data[y1, x1]

    values = ((1 - wx) * (1 - wy) * top_left + wx * (1 - wy) * top_right
              + (1 - wx) * wy * bottom_left + wx * wy * bottom_right)
    dx = ((1 - wy) * (top_right - top_left) + wy * (bottom_right - bottom_left)) * inside_x[..., None]
    dy = ((1 - wx) * (bottom_left - top_left) + wx * (bottom_right - top_right)) * inside_y[..., None]
    return BilinearSample(values, dx, dy, ~(inside_x & inside_y))


def bilinear_sample(img: Image, x: float, y: float) -> Tuple[np.ndarray, bool]:
    """
    Sample every channel of `img` at (x, y)

    :return: the per-channel values and whether (x, y) fell outside the image
    """
    result = sample_bilinear(img.data, np.array([x]), np.array([y]))
    return result.values[0], bool(result.outside[0])


def pixel_grid(height: int, width: int) -> Tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:height, 0:width]
    return xs.astype(np.float64), ys.astype(np.float64)


def warp_array(data: np.ndarray, uv: np.ndarray) -> BilinearSample:
    """
    Backward-warp `data` by sampling it at p + uv(p) for every pixel p
    """
    xs, ys = pixel_grid(*uv.shape[:2])
    return sample_bilinear(data, xs + uv[..., 0], ys + uv[..., 1])


def warp_image(target: Image, flow: FlowField) -> Tuple[Image, np.ndarray]:
    """
    Warp `target` (the second frame) into the first frame's coordinates

    :return: the warped image and the H x W map of sample points that left the image
    """
    require_same_shape(target, flow)
    warped = warp_array(target.data, flow.uv)
    return Image(np.clip(warped.values, 0.0, 1.0)), warped.outside


def pool2(data: np.ndarray, weights: np.ndarray = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    2x2 (weighted) mean pooling with ceil output dims; edge cells average the pixels they have

    :param data: H x W x C array
    :param weights: optional H x W non-negative weights (a validity mask)
    :return: pooled means and, per output cell, the fraction of its pixels carrying weight
    """
    height, width = data.shape[:2]
    out_h, out_w = -(-height // 2), -(-width // 2)
    pad = ((0, 2 * out_h - height), (0, 2 * out_w - width))
    present = np.pad(np.ones((height, width)), pad)
    weight = present if weights is None else np.pad(np.asarray(weights, dtype=np.float64), pad)
    values = np.pad(data, pad + ((0, 0),)) * weight[..., None]

    sums = values.reshape(out_h, 2, out_w, 2, -1).sum(axis=(1, 3))
    weight_sums = weight.reshape(out_h, 2, out_w, 2).sum(axis=(1, 3))
    counts = present.reshape(out_h, 2, out_w, 2).sum(axis=(1, 3))
    means = np.divide(sums, weight_sums[..., None], out=np.zeros_like(sums), where=weight_sums[..., None] > 0)
    return means, weight_sums / counts


def downsample2(img: Image) -> Image:
    """
    Halve an image with 2x2 mean pooling, rounding dims up
    """
    pooled, _ = pool2(img.data)
    return Image(np.clip(pooled, 0.0, 1.0))


class ImagePyramid:
    """
    Repeated 2x downsamplings of a base image, levels 0..max_level
    """

    levels: Dict[int, Image]

    def __init__(self, levels: Dict[int, Image]):
        self.levels = dict(levels)

    @property
    def max_level(self) -> int:
        return max(self.levels)

    def level(self, level: int) -> Image:
        if level not in self.levels:
            raise LevelOutOfRangeError(f"Pyramid has levels 0..{self.max_level}, asked for {level}")
        return self.levels[level]

    def __repr__(self):
        base = self.levels[0]
        return f"<ImagePyramid {base.width}x{base.height} levels=0..{self.max_level}>"


def build_image_pyramid(img: Image, max_level: int = MAX_LEVEL) -> ImagePyramid:
    level_dims(img.width, img.height, max_level)
    levels = {0: img}
    for level in range(1, max_level + 1):
        levels[level] = downsample2(levels[level - 1])
    return ImagePyramid(levels)


def gradient_xy(data: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Central differences inside, one-sided differences at the borders; zero along a length-1 axis
    """
    gx = np.gradient(data, axis=1) if data.shape[1] > 1 else np.zeros_like(data)
    gy = np.gradient(data, axis=0) if data.shape[0] > 1 else np.zeros_like(data)
    return gx, gy


def image_gradient(img: Image) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-channel spatial derivatives (dI/dx, dI/dy), each H x W x C
    """
    return gradient_xy(img.data)


def gradient_magnitude(img: Image) -> float:
    """
    Mean gradient magnitude of the channel-mean image
    """
    gx, gy = gradient_xy(img.gray())
    return float(np.mean(np.sqrt(gx ** 2 + gy ** 2)))


def census_array(gray: np.ndarray) -> np.ndarray:
    padded = np.pad(gray, 1, mode="edge")
    height, width = gray.shape
    codes = np.empty((height, width, len(CENSUS_OFFSETS)))
    for index, (dy, dx) in enumerate(CENSUS_OFFSETS):
        diff = padded[1 + dy:1 + dy + height, 1 + dx:1 + dx + width] - gray
        codes[..., index] = diff / np.sqrt(CENSUS_SOFTNESS + diff ** 2)
    return codes


def census_transform(img: Image) -> np.ndarray:
    """
    Soft ternary census codes of the channel-mean image: H x W x 8 values in (-1, 1)

    Border pixels are filled from an edge-replicated image and must be masked out
    with `census_interior` before being compared.
    """
    return census_array(img.gray())


def census_interior(height: int, width: int) -> np.ndarray:
    mask = np.zeros((height, width), dtype=bool)
    mask[1:-1, 1:-1] = True
    return mask


def census_distance(codes1: np.ndarray, codes2: np.ndarray) -> np.ndarray:
    """
    Per-pixel soft Hamming distance between two census code maps
    """
    diff = (codes1 - codes2) ** 2
    return np.sum(diff / (CENSUS_HAMMING_EPS + diff), axis=-1)


def _box_mean3(data: np.ndarray) -> np.ndarray:
    """
    3x3 mean over the pixels that exist (windows are truncated at the border)
    """
    height, width = data.shape[:2]
    padded = np.pad(data, ((1, 1), (1, 1), (0, 0)))
    present = np.pad(np.ones((height, width)), 1)
    sums = np.zeros_like(data)
    counts = np.zeros((height, width))
    for dy in range(3):
        for dx in range(3):
            sums += padded[dy:dy + height, dx:dx + width]
            counts += present[dy:dy + height, dx:dx + width]
    return sums / counts[..., None]


def ssim_array(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    mu_a = _box_mean3(a)
    mu_b = _box_mean3(b)
    sigma_a = _box_mean3(a * a) - mu_a * mu_a
    sigma_b = _box_mean3(b * b) - mu_b * mu_b
    sigma_ab = _box_mean3(a * b) - mu_a * mu_b
    numerator = (2 * mu_a * mu_b + SSIM_C1) * (2 * sigma_ab + SSIM_C2)
    denominator = (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (sigma_a + sigma_b + SSIM_C2)
    return np.clip(numerator / denominator, -1.0, 1.0).mean(axis=2)


def ssim_map(a: Image, b: Image) -> np.ndarray:
    """
    Per-pixel SSIM (3x3 box statistics, channel mean), H x W values in [-1, 1]
    """
    require_same_shape(a, b)
    if a.channels != b.channels:
        raise DimensionMismatchError(f"SSIM needs equal channel counts, got {a.channels} and {b.channels}")
    return ssim_array(a.data, b.data)


def structure_tensor_min_eig(img: Image, window: int = 16, stride: int = 8) -> float:
    """
    Texture score: mean over windows of the smaller eigenvalue of the summed structure tensor

    :param img: the image to score (its channel mean is used)
    :param window: side of the square windows, clipped to the image size
    :param stride: step between window origins
    """
    gx, gy = gradient_xy(img.gray())
    win_h, win_w = min(window, img.height), min(window, img.width)

    def window_sums(values: np.ndarray) -> np.ndarray:
        return sliding_window_view(values, (win_h, win_w))[::stride, ::stride].sum(axis=(-1, -2))

    a = window_sums(gx * gx)
    b = window_sums(gx * gy)
    c = window_sums(gy * gy)
    smaller = (a + c) / 2 - np.sqrt(((a - c) / 2) ** 2 + b ** 2)
    return float(np.mean(np.maximum(smaller, 0.0)))


def histogram_cdf_distance(a: Image, b: Image) -> float:
    """
    Color change: mean over channels of the mean absolute gap between 256-bin intensity CDFs
    """
    if a.channels != b.channels:
        raise DimensionMismatchError(f"Color histograms need equal channel counts, got {a.channels} and {b.channels}")
    gaps = []
    for channel in range(a.channels):
        cdfs = []
        for img in (a, b):
            levels = np.clip(np.rint(img.data[..., channel] * 255), 0, 255).astype(np.int64)
            hist = np.bincount(levels.ravel(), minlength=256)
            cdfs.append(np.cumsum(hist) / levels.size)
        gaps.append(np.mean(np.abs(cdfs[0] - cdfs[1])))
    return float(np.mean(gaps))
