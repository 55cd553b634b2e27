import math
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Annotated, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import xxhash
from pydantic import BaseModel, ConfigDict, Field, model_validator

from models.core import Dataset, FlowField, Image, OcclusionMask, Sample
from models.flow_io import Manifest, ManifestEntry, save_flow, save_image, save_manifest
from models.raster import pixel_grid

MIN_SIZE = 32
MAX_OCCLUDER_FRACTION = 0.3
MIN_MOTION, MAX_MOTION = 1.0, 8.0

Matrix23 = Tuple[Tuple[float, float, float], Tuple[float, float, float]]


class Translate(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["translate"] = "translate"
    dx: float = Field(default=0.0, description="Horizontal displacement, pixels")
    dy: float = Field(default=0.0, description="Vertical displacement, pixels")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[0.0, 0.0, self.dx], [0.0, 0.0, self.dy]])


class Affine(BaseModel):
    """
    Displacement field (u, v) = matrix @ (x, y, 1)
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["affine"] = "affine"
    coefficients: Matrix23 = Field(description="2 x 3 matrix mapping (x, y, 1) to the displacement (u, v)")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(self.coefficients, dtype=np.float64)


Motion = Annotated[Union[Translate, Affine], Field(discriminator="kind")]


class Occluder(BaseModel):
    """
    An axis-aligned textured rectangle (in frame1 pixels) with its own translation
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    x: int = Field(ge=0)
    y: int = Field(ge=0)
    width: int = Field(gt=0)
    height: int = Field(gt=0)
    dx: float = 0.0
    dy: float = 0.0


class SynthSpec(BaseModel):
    """
    Everything needed to render one synthetic frame pair with exact ground truth
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    width: int = Field(default=64, ge=MIN_SIZE, description="Frame width, pixels")
    height: int = Field(default=64, ge=MIN_SIZE, description="Frame height, pixels")
    texture_scale: float = Field(default=12.0, gt=0.0, description="Lattice spacing of the finest noise octave")
    motion: Motion = Field(default_factory=Translate, description="Background motion")
    occluder: Optional[Occluder] = Field(default=None, description="Independently moving foreground patch")
    difficulty: float = Field(default=0.0, ge=0.0, le=1.0, description="Knob the motion and occluder came from")
    seed: int = Field(default=0, ge=0, description="Seed of the textures")
    scene_seed: Optional[int] = Field(default=None, ge=0, description="Seed of the background, shared by a group")
    group: str = Field(default="", description="Scene key")

    @model_validator(mode="after")
    def motion_bounded(self) -> "SynthSpec":
        corners = np.array([[0, 0, 1], [self.width - 1, 0, 1], [0, self.height - 1, 1],
                            [self.width - 1, self.height - 1, 1]], dtype=np.float64)
        largest = float(np.max(np.linalg.norm(corners @ self.motion.matrix.T, axis=1)))
        if largest > self.width / 4 + 1e-9:
            raise ValueError(f"Motion of {largest:.2f} px exceeds width/4 = {self.width / 4}")
        if self.occluder is not None:
            o = self.occluder
            if o.x + o.width > self.width or o.y + o.height > self.height:
                raise ValueError("Occluder must lie inside the frame")
            if math.hypot(o.dx, o.dy) > self.width / 4 + 1e-9:
                raise ValueError("Occluder motion exceeds width/4")
        return self

    @classmethod
    def from_difficulty(cls, difficulty: float, seed: int, width: int = 64, height: int = 64,
                        texture_scale: float = 12.0, group: str = "", scene_seed: Optional[int] = None) -> "SynthSpec":
        """
        Motion magnitude 1 + 7d px in a seeded direction, an occluder covering 0.3d of the frame
        """
        rng = np.random.default_rng([seed, 1])
        magnitude = MIN_MOTION + (MAX_MOTION - MIN_MOTION) * difficulty
        angle = rng.uniform(0.0, 2.0 * math.pi)
        motion = Translate(dx=magnitude * math.cos(angle), dy=magnitude * math.sin(angle))

        occluder = None
        area = MAX_OCCLUDER_FRACTION * difficulty * width * height
        if area >= 1.0:
            aspect = rng.uniform(0.5, 2.0)
            occ_w = int(np.clip(round(math.sqrt(area * aspect)), 1, width - 2))
            occ_h = int(np.clip(round(area / occ_w), 1, height - 2))
            occ_angle = rng.uniform(0.0, 2.0 * math.pi)
            occluder = Occluder(
                x=int(rng.integers(0, width - occ_w + 1)),
                y=int(rng.integers(0, height - occ_h + 1)),
                width=occ_w,
                height=occ_h,
                dx=magnitude * math.cos(occ_angle),
                dy=magnitude * math.sin(occ_angle),
            )
        return cls(width=width, height=height, texture_scale=texture_scale, motion=motion, occluder=occluder,
                   difficulty=difficulty, seed=seed, scene_seed=scene_seed, group=group)


class SynthConfig(BaseModel):
    """
    Recipe of a synthetic dataset
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    count: int = Field(default=50, gt=0, description="Number of samples")
    width: int = Field(default=64, ge=MIN_SIZE)
    height: int = Field(default=64, ge=MIN_SIZE)
    texture_scale: float = Field(default=12.0, gt=0.0)
    curve: Literal["linear", "random"] = Field(default="linear", description="How difficulty varies by index")
    difficulty_min: float = Field(default=0.0, ge=0.0, le=1.0)
    difficulty_max: float = Field(default=1.0, ge=0.0, le=1.0)
    group_size: int = Field(default=1, gt=0, description="Consecutive samples sharing a scene")
    seed: int = Field(default=0, ge=0, description="Master seed")


class ValueNoise:
    """
    Smoothstep-interpolated lattice noise in [0, 1], defined on a padded window around the frame
    """

    def __init__(self, rng: np.random.Generator, scale: float, width: int, height: int, margin: float):
        self.scale = scale
        self.margin = margin
        columns = int(math.ceil((width + 2 * margin) / scale)) + 2
        rows = int(math.ceil((height + 2 * margin) / scale)) + 2
        self.lattice = rng.random((rows, columns))

    def __call__(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        rows, columns = self.lattice.shape
        gx = np.clip((xs + self.margin) / self.scale, 0.0, columns - 1.000001)
        gy = np.clip((ys + self.margin) / self.scale, 0.0, rows - 1.000001)
        x0, y0 = np.floor(gx).astype(np.int64), np.floor(gy).astype(np.int64)
        tx, ty = gx - x0, gy - y0
        sx, sy = tx * tx * (3 - 2 * tx), ty * ty * (3 - 2 * ty)
        top = self.lattice[y0, x0] * (1 - sx) + self.lattice[y0, x0 + 1] * sx
        bottom = self.lattice[y0 + 1, x0] * (1 - sx) + self.lattice[y0 + 1, x0 + 1] * sx
        return top * (1 - sy) + bottom * sy


class Texture:
    """
    A continuous RGB texture: per channel, two noise octaves (scale and 2 * scale)
    """

    WEIGHTS = (0.6, 0.4)

    def __init__(self, rng: np.random.Generator, scale: float, width: int, height: int):
        margin = float(max(width, height))
        self.octaves = [
            [ValueNoise(rng, scale * factor, width, height, margin) for factor in (1, 2)]
            for _ in range(3)
        ]

    def __call__(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        channels = [
            sum(weight * noise(xs, ys) for weight, noise in zip(self.WEIGHTS, octaves))
            for octaves in self.octaves
        ]
        return np.clip(np.stack(channels, axis=-1), 0.0, 1.0)


def derive_seed(master_seed: int, key) -> int:
    return xxhash.xxh64_intdigest(f"{master_seed}:{key}")


def _inside(xs: np.ndarray, ys: np.ndarray, x0: float, y0: float, width: float, height: float) -> np.ndarray:
    return (xs >= x0) & (xs < x0 + width) & (ys >= y0) & (ys < y0 + height)


def gen_sample(spec: SynthSpec, sample_id: str = "synth") -> Sample:
    """
    Render a frame pair with exact ground-truth flow and occlusion

    frame1 samples a continuous texture at the pixel centers; frame2 samples it through
    the inverse motion, so frame2(p + flow(p)) == frame1(p) exactly. The occluder is
    pasted on top in both frames with its own translation. A frame1 pixel is GT-occluded
    when its target leaves the frame or lands under the moved occluder.
    :param spec: what to render
    :param sample_id: id of the returned sample
    """
    rng = np.random.default_rng(spec.seed)
    scene_rng = np.random.default_rng(spec.scene_seed) if spec.scene_seed is not None else rng
    background = Texture(scene_rng, spec.texture_scale, spec.width, spec.height)
    xs, ys = pixel_grid(spec.height, spec.width)

    matrix = spec.motion.matrix
    flow = np.stack([
        matrix[0, 0] * xs + matrix[0, 1] * ys + matrix[0, 2],
        matrix[1, 0] * xs + matrix[1, 1] * ys + matrix[1, 2],
    ], axis=2)
    inverse = np.linalg.inv(np.eye(2) + matrix[:, :2])
    shifted_x, shifted_y = xs - matrix[0, 2], ys - matrix[1, 2]
    source_x = inverse[0, 0] * shifted_x + inverse[0, 1] * shifted_y
    source_y = inverse[1, 0] * shifted_x + inverse[1, 1] * shifted_y

    frame1 = background(xs, ys)
    frame2 = background(source_x, source_y)
    occluded = np.zeros((spec.height, spec.width), dtype=bool)

    if spec.occluder is not None:
        o = spec.occluder
        patch = Texture(rng, spec.texture_scale, spec.width, spec.height)
        in_first = _inside(xs, ys, o.x, o.y, o.width, o.height)
        in_second = _inside(xs, ys, o.x + o.dx, o.y + o.dy, o.width, o.height)
        frame1[in_first] = patch(xs, ys)[in_first]
        frame2[in_second] = patch(xs - o.dx, ys - o.dy)[in_second]
        flow[in_first] = (o.dx, o.dy)
        target_x, target_y = xs + flow[..., 0], ys + flow[..., 1]
        occluded |= ~in_first & _inside(target_x, target_y, o.x + o.dx, o.y + o.dy, o.width, o.height)

    target_x, target_y = xs + flow[..., 0], ys + flow[..., 1]
    occluded |= (target_x < 0) | (target_x > spec.width - 1) | (target_y < 0) | (target_y > spec.height - 1)

    return Sample(
        id=sample_id,
        frame1=Image(frame1),
        frame2=Image(frame2),
        label=FlowField(flow),
        group=spec.group,
        occlusion_gt=OcclusionMask(occluded),
    )


def dataset_specs(config: SynthConfig) -> List[SynthSpec]:
    """
    Per-sample specs of a synthetic dataset; seeds are hashes of (master seed, index)
    """
    specs = []
    for index in range(config.count):
        seed = derive_seed(config.seed, index)
        if config.curve == "linear":
            fraction = index / (config.count - 1) if config.count > 1 else 0.0
        else:
            fraction = float(np.random.default_rng([seed, 2]).random())
        difficulty = config.difficulty_min + (config.difficulty_max - config.difficulty_min) * fraction
        group_index = index // config.group_size
        specs.append(SynthSpec.from_difficulty(
            difficulty,
            seed,
            width=config.width,
            height=config.height,
            texture_scale=config.texture_scale,
            group=f"g{group_index:04d}",
            scene_seed=derive_seed(config.seed, f"group:{group_index}") if config.group_size > 1 else None,
        ))
    return specs


def sample_id(index: int) -> str:
    return f"s{index:04d}"


def gen_dataset(specs: Union[SynthConfig, Sequence[SynthSpec]], threads: int = 1) -> Tuple[Dataset, Manifest]:
    """
    Render a whole synthetic dataset and the manifest describing its files

    :param specs: a dataset recipe or explicit per-sample specs
    :param threads: rendering threads; the output does not depend on it
    """
    if isinstance(specs, SynthConfig):
        specs = dataset_specs(specs)
    ids = [sample_id(index) for index in range(len(specs))]
    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        samples = list(executor.map(gen_sample, specs, ids))
    manifest = Manifest(samples=[
        ManifestEntry(id=s.id, frame1=f"{s.id}_1.png", frame2=f"{s.id}_2.png", gt=f"{s.id}.flo", group=s.group)
        for s in samples
    ])
    return Dataset(samples), manifest


def write_dataset(dataset: Dataset, manifest: Manifest, out_dir: str) -> str:
    """
    Write frames, ground truth, occlusion masks and the manifest under out_dir

    :return: the manifest path
    """
    os.makedirs(out_dir, exist_ok=True)
    for entry in manifest.samples:
        sample = dataset.get(entry.id)
        save_image(os.path.join(out_dir, entry.frame1), sample.frame1)
        save_image(os.path.join(out_dir, entry.frame2), sample.frame2)
        if entry.gt and sample.label is not None:
            save_flow(os.path.join(out_dir, entry.gt), sample.label)
        if sample.occlusion_gt is not None:
            mask = Image(sample.occlusion_gt.occluded.astype(np.float64))
            save_image(os.path.join(out_dir, f"{entry.id}_occ.png"), mask)
    path = os.path.join(out_dir, "manifest.json")
    save_manifest(path, manifest)
    return path
