import math
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from models.errors import DimensionMismatchError, LevelOutOfRangeError

MAX_LEVEL = 6
### Scales charged by the multi-scale losses, finest first
LOSS_LEVELS: Tuple[int, ...] = (2, 3, 4, 5, 6)

Weights5 = Tuple[float, float, float, float, float]


def level_dims(width: int, height: int, level: int) -> Tuple[int, int]:
    """
    Width and height of pyramid level `level` using ceiling division
    """
    if not 0 <= level <= MAX_LEVEL:
        raise LevelOutOfRangeError(f"Pyramid level must be within 0..{MAX_LEVEL}, got {level}")
    factor = 2 ** level
    return -(-width // factor), -(-height // factor)


def pixel_domain(level: int, width: int, height: int) -> List[Tuple[int, int]]:
    """
    Enumerate the pixel coordinates of a pyramid level, row-major

    :param level: pyramid level 0..6
    :param width: base width in pixels
    :param height: base height in pixels
    :return: every (x, y) with 0 <= x < ceil(w/2^l) and 0 <= y < ceil(h/2^l)
    """
    w, h = level_dims(width, height, level)
    return [(x, y) for y in range(h) for x in range(w)]


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


class Image:
    """
    A dense H x W x C raster of intensities in [0, 1]
    """

    data: np.ndarray

    def __init__(self, data: np.ndarray):
        array = np.asarray(data, dtype=np.float64)
        if array.ndim == 2:
            array = array[:, :, None]
        if array.ndim != 3 or array.shape[2] not in (1, 3):
            raise ValueError(f"Image data must be H x W x {{1, 3}}, got shape {array.shape}")
        if array.shape[0] == 0 or array.shape[1] == 0:
            raise ValueError("Image must have at least one pixel")
        if not np.all(np.isfinite(array)):
            raise ValueError("Image intensities must be finite")
        if array.min() < 0.0 or array.max() > 1.0:
            raise ValueError("Image intensities must lie within [0, 1]")
        self.data = _frozen(array)

    @classmethod
    def from_flat(cls, width: int, height: int, channels: int, values: Sequence[float]) -> "Image":
        """
        Build an image from row-major, channel-interleaved values
        """
        flat = np.asarray(values, dtype=np.float64)
        if flat.size != width * height * channels:
            raise ValueError(f"Expected {width * height * channels} values, got {flat.size}")
        return cls(flat.reshape(height, width, channels))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width

    def gray(self) -> np.ndarray:
        """
        Channel mean, H x W
        """
        return self.data.mean(axis=2)

    def __repr__(self):
        return f"<Image {self.width}x{self.height}x{self.channels}>"


class FlowField:
    """
    A dense H x W field of (u, v) displacements in pixels, with an optional validity mask
    """

    uv: np.ndarray
    valid: Optional[np.ndarray]

    def __init__(self, uv: np.ndarray, valid: Optional[np.ndarray] = None):
        array = np.asarray(uv, dtype=np.float64)
        if array.ndim != 3 or array.shape[2] != 2:
            raise ValueError(f"Flow must be H x W x 2, got shape {array.shape}")
        if array.shape[0] == 0 or array.shape[1] == 0:
            raise ValueError("Flow must have at least one pixel")
        if not np.all(np.isfinite(array)):
            raise ValueError("Flow vectors must be finite")
        self.uv = _frozen(array)
        if valid is not None:
            mask = np.asarray(valid, dtype=bool)
            if mask.shape != array.shape[:2]:
                raise DimensionMismatchError(
                    f"Validity mask shape {mask.shape} does not match flow {array.shape[:2]}"
                )
            self.valid = _frozen(mask)
        else:
            self.valid = None

    @classmethod
    def zeros(cls, width: int, height: int) -> "FlowField":
        return cls(np.zeros((height, width, 2)))

    @classmethod
    def constant(cls, width: int, height: int, u: float, v: float) -> "FlowField":
        uv = np.empty((height, width, 2))
        uv[..., 0] = u
        uv[..., 1] = v
        return cls(uv)

    @property
    def width(self) -> int:
        return self.uv.shape[1]

    @property
    def height(self) -> int:
        return self.uv.shape[0]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width

    @property
    def u(self) -> np.ndarray:
        return self.uv[..., 0]

    @property
    def v(self) -> np.ndarray:
        return self.uv[..., 1]

    def valid_mask(self) -> np.ndarray:
        """
        Per-pixel validity; every pixel counts as valid when no mask was given
        """
        if self.valid is None:
            return np.ones(self.shape, dtype=bool)
        return self.valid

    def __repr__(self):
        return f"<FlowField {self.width}x{self.height}>"


class OcclusionMask:
    """
    Per-pixel occlusion flags for the frame a flow field starts from
    """

    occluded: np.ndarray

    def __init__(self, occluded: np.ndarray):
        mask = np.asarray(occluded, dtype=bool)
        if mask.ndim != 2:
            raise ValueError(f"Occlusion mask must be H x W, got shape {mask.shape}")
        self.occluded = _frozen(mask)

    @property
    def width(self) -> int:
        return self.occluded.shape[1]

    @property
    def height(self) -> int:
        return self.occluded.shape[0]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.occluded.shape

    @property
    def ratio(self) -> float:
        return float(self.occluded.mean())

    def __repr__(self):
        return f"<OcclusionMask {self.width}x{self.height} ratio={self.ratio:.3f}>"


class Sample:
    """
    A frame pair with an optional ground-truth flow label and a group (scene/pair) key
    """

    id: str
    frame1: Image
    frame2: Image
    label: Optional[FlowField]
    group: str
    occlusion_gt: Optional[OcclusionMask]

    def __init__(
            self,
            id: str,
            frame1: Image,
            frame2: Image,
            label: Optional[FlowField] = None,
            group: str = "",
            occlusion_gt: Optional[OcclusionMask] = None,
    ):
        if frame1.shape != frame2.shape or frame1.channels != frame2.channels:
            raise DimensionMismatchError(f"Sample {id}: frames {frame1} and {frame2} differ in shape")
        if label is not None and label.shape != frame1.shape:
            raise DimensionMismatchError(f"Sample {id}: label {label} does not match frames {frame1}")
        if occlusion_gt is not None and occlusion_gt.shape != frame1.shape:
            raise DimensionMismatchError(f"Sample {id}: occlusion mask does not match frames")
        self.id = id
        self.frame1 = frame1
        self.frame2 = frame2
        self.label = label
        self.group = group or id
        self.occlusion_gt = occlusion_gt

    @property
    def shape(self) -> Tuple[int, int]:
        return self.frame1.shape

    @property
    def is_labeled(self) -> bool:
        return self.label is not None

    def without_label(self) -> "Sample":
        return Sample(self.id, self.frame1, self.frame2, None, self.group, self.occlusion_gt)

    def swapped(self) -> "Sample":
        """
        The same pair in reverse temporal order, unlabeled
        """
        return Sample(self.id, self.frame2, self.frame1, None, self.group)

    def __repr__(self):
        state = "labeled" if self.is_labeled else "unlabeled"
        return f"<Sample {self.id} [{self.group}] {state}>"


class Dataset:
    """
    An ordered collection of samples with unique ids
    """

    samples: List[Sample]

    def __init__(self, samples: Sequence[Sample]):
        ids = [sample.id for sample in samples]
        if len(set(ids)) != len(ids):
            duplicates = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"Sample ids must be unique, duplicated: {duplicates}")
        self.samples = list(samples)
        self._index: Dict[str, Sample] = {sample.id: sample for sample in self.samples}

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[Sample]:
        return iter(self.samples)

    def __contains__(self, sample_id: str) -> bool:
        return sample_id in self._index

    @property
    def ids(self) -> List[str]:
        return [sample.id for sample in self.samples]

    def get(self, sample_id: str) -> Sample:
        return self._index[sample_id]

    @property
    def label_ratio(self) -> float:
        """
        r = |labeled| / |dataset|, 0 for an empty dataset
        """
        if not self.samples:
            return 0.0
        return sum(sample.is_labeled for sample in self.samples) / len(self.samples)

    def labeled(self) -> "Dataset":
        return Dataset([sample for sample in self.samples if sample.is_labeled])

    def unlabeled(self) -> "Dataset":
        return Dataset([sample for sample in self.samples if not sample.is_labeled])

    def subset(self, ids: Sequence[str]) -> "Dataset":
        wanted = set(ids)
        return Dataset([sample for sample in self.samples if sample.id in wanted])

    def with_labels_only(self, ids: Sequence[str]) -> "Dataset":
        """
        Keep ground truth only on the given samples; every other sample loses its label
        """
        keep = set(ids)
        return Dataset([sample if sample.id in keep else sample.without_label() for sample in self.samples])

    def split(self, candidate_fraction: float, seed: int) -> Tuple["Dataset", "Dataset"]:
        """
        Split into (candidate, non-candidate) sets, each keeping dataset order

        :param candidate_fraction: fraction of samples eligible for label queries
        :param seed: seed of the shuffling generator
        """
        count = Budget(ratio=candidate_fraction).count(len(self.samples))
        order = np.random.default_rng(seed).permutation(len(self.samples))
        chosen = set(int(i) for i in order[:count])
        candidate = [s for i, s in enumerate(self.samples) if i in chosen]
        rest = [s for i, s in enumerate(self.samples) if i not in chosen]
        return Dataset(candidate), Dataset(rest)

    def __repr__(self):
        return f"<Dataset n={len(self)} r={self.label_ratio:.2f}>"


class Budget(BaseModel):
    """
    A label budget expressed as the label ratio r
    """

    model_config = ConfigDict(frozen=True)

    ratio: float = Field(ge=0.0, le=1.0, description="Fraction of the dataset that receives labels")

    def count(self, n: int) -> int:
        """
        Number of samples the budget buys out of n, rounding half up
        """
        return min(n, int(math.floor(self.ratio * n + 0.5 + 1e-9)))


class LossConfig(BaseModel):
    """
    Weights and constants of the semi-supervised loss stack
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    alpha: float = Field(default=1.0, gt=0.0, description="Balancing weight of the supervised loss")
    lambda_sm: float = Field(default=50.0, ge=0.0, description="Smoothness weight of the unsupervised loss")
    lambda_aug: float = Field(default=0.0, description="Augmentation loss weight; the augmentation pass is not run")
    census_weights: Tuple[float, float, float] = Field(
        default=(0.0, 0.0, 1.0), description="Weights c of the L1, SSIM and census distances"
    )
    w_ph: Weights5 = Field(default=(1.0, 1.0, 1.0, 1.0, 0.0), description="Photometric weights for levels 2..6")
    w_sm: Weights5 = Field(default=(1.0, 0.0, 0.0, 0.0, 0.0), description="Smoothness weights for levels 2..6")
    w_sup: Weights5 = Field(
        default=(0.32, 0.08, 0.02, 0.01, 0.005), description="Supervised weights for levels 2..6"
    )
    delta: float = Field(default=10.0, ge=0.0, description="Edge-awareness scale of the smoothness loss")
    eps: float = Field(default=0.01, gt=0.0, description="Offset of the robust supervised norm, pixels")
    q: float = Field(default=0.4, gt=0.0, le=1.0, description="Exponent of the robust supervised norm")
    occ_alpha1: float = Field(default=0.01, ge=0.0, description="Relative forward-backward tolerance")
    occ_alpha2: float = Field(default=0.5, ge=0.0, description="Absolute forward-backward tolerance, pixels^2")
    unsup_on_labeled: bool = Field(
        default=False, description="Also charge the unsupervised loss on labeled samples"
    )

    @field_validator("lambda_aug")
    @classmethod
    def augmentation_disabled(cls, value: float) -> float:
        if value != 0.0:
            raise ValueError("lambda_aug must be 0: the augmentation pass is not part of this loss stack")
        return value

    @field_validator("census_weights", "w_ph", "w_sm", "w_sup")
    @classmethod
    def non_negative(cls, value: Tuple[float, ...]) -> Tuple[float, ...]:
        if any(weight < 0 for weight in value):
            raise ValueError(f"Weights must be non-negative, got {value}")
        return value

    @staticmethod
    def level_weight(weights: Sequence[float], level: int) -> float:
        return weights[LOSS_LEVELS.index(level)]

    @classmethod
    def census_phase(cls, **overrides) -> "LossConfig":
        """
        Late-training photometric weights (census only); this is also the default
        """
        return cls(census_weights=(0.0, 0.0, 1.0), **overrides)

    @classmethod
    def l1_ssim_phase(cls, **overrides) -> "LossConfig":
        """
        Early-training photometric weights (L1 + SSIM)
        """
        return cls(census_weights=(0.15, 0.85, 0.0), **overrides)

    @classmethod
    def for_dataset(cls, name: str, **overrides) -> "LossConfig":
        """
        Smoothness weight 50 for Sintel-like data and 75 otherwise
        """
        lambda_sm = 50.0 if name.lower() == "sintel" else 75.0
        return cls(lambda_sm=lambda_sm, **overrides)


class SampleEstimate:
    """
    Forward (frame1 -> frame2) and backward (frame2 -> frame1) flow estimates for one sample
    """

    forward: FlowField
    backward: FlowField

    def __init__(self, forward: FlowField, backward: FlowField):
        if forward.shape != backward.shape:
            raise DimensionMismatchError(f"Forward {forward} and backward {backward} flows differ in shape")
        self.forward = forward
        self.backward = backward

    def __repr__(self):
        return f"<SampleEstimate {self.forward.width}x{self.forward.height}>"


def require_same_shape(*items) -> None:
    shapes = {tuple(item.shape) for item in items}
    if len(shapes) > 1:
        raise DimensionMismatchError(f"Dimension mismatch: {sorted(shapes)}")
