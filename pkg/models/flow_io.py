import io
import os
from typing import List, Mapping, Optional

import cv2
import numpy as np
import pandas as pd
from PIL import Image as PILImage
from PIL import UnidentifiedImageError
from pydantic import BaseModel, ConfigDict, Field, field_validator

from models.core import Dataset, FlowField, Image, Sample
from models.errors import BadMagicError, FlowFormatError, TableFormatError, TruncatedDataError, UnsupportedFormatError

FLO_MAGIC = 202021.25
FLO_HEADER_BYTES = 12
### Middlebury marks unknown flow with huge components
FLO_UNKNOWN_THRESHOLD = 1e9
FLO_UNKNOWN_VALUE = 1e10

KITTI_OFFSET = 2 ** 15
KITTI_SCALE = 64.0

IMAGE_FORMATS = {"PNG", "PPM"}


### .flo (Middlebury)

def read_flo(data: bytes) -> FlowField:
    """
    Decode a Middlebury .flo byte stream

    Pixels whose components exceed 1e9 are flagged invalid; their raw values are kept
    so that writing the field back reproduces the input bytes.
    :param data: the whole file contents
    :return: the decoded FlowField
    """
    if len(data) < FLO_HEADER_BYTES:
        raise TruncatedDataError(f".flo header needs {FLO_HEADER_BYTES} bytes, got {len(data)}")
    magic = np.frombuffer(data, dtype="<f4", count=1)[0]
    if magic != np.float32(FLO_MAGIC):
        raise BadMagicError(f".flo magic must be {FLO_MAGIC}, got {magic}")
    width, height = (int(d) for d in np.frombuffer(data, dtype="<i4", count=2, offset=4))
    if width <= 0 or height <= 0:
        raise FlowFormatError(f".flo dimensions must be positive, got {width}x{height}")

    expected = FLO_HEADER_BYTES + width * height * 2 * 4
    if len(data) < expected:
        raise TruncatedDataError(f".flo payload for {width}x{height} needs {expected} bytes, got {len(data)}")
    if len(data) > expected:
        raise FlowFormatError(f".flo has {len(data) - expected} trailing bytes")

    uv = np.frombuffer(data, dtype="<f4", offset=FLO_HEADER_BYTES).astype(np.float64).reshape(height, width, 2)
    if not np.all(np.isfinite(uv)):
        raise FlowFormatError(".flo payload contains non-finite values")
    unknown = np.any(np.abs(uv) > FLO_UNKNOWN_THRESHOLD, axis=2)
    return FlowField(uv, valid=~unknown if unknown.any() else None)


def write_flo(flow: FlowField) -> bytes:
    """
    Encode a FlowField as a little-endian .flo byte stream; invalid pixels carry the unknown-flow sentinel
    """
    uv = flow.uv.copy()
    if flow.valid is not None:
        unmarked = ~flow.valid & np.all(np.abs(uv) <= FLO_UNKNOWN_THRESHOLD, axis=2)
        uv[unmarked] = FLO_UNKNOWN_VALUE
    header = np.array([FLO_MAGIC], dtype="<f4").tobytes() + np.array([flow.width, flow.height], dtype="<i4").tobytes()
    return header + uv.astype("<f4").tobytes()


### KITTI 16-bit PNG

def read_kitti_flow_png(data: bytes) -> FlowField:
    """
    Decode a KITTI flow PNG: u = (R - 2^15) / 64, v = (G - 2^15) / 64, valid where B > 0
    """
    image = cv2.imdecode(np.frombuffer(data, dtype=np.uint8), cv2.IMREAD_UNCHANGED)
    if image is None:
        raise FlowFormatError("Bytes are not a decodable PNG")
    if image.dtype != np.uint16 or image.ndim != 3 or image.shape[2] != 3:
        raise UnsupportedFormatError(
            f"KITTI flow must be a 16-bit 3-channel PNG, got {image.dtype} with shape {image.shape}"
        )
    # OpenCV decodes to BGR
    blue, green, red = (image[..., c].astype(np.float64) for c in range(3))
    uv = np.stack([(red - KITTI_OFFSET) / KITTI_SCALE, (green - KITTI_OFFSET) / KITTI_SCALE], axis=2)
    return FlowField(uv, valid=blue > 0)


def write_kitti_flow_png(flow: FlowField) -> bytes:
    """
    Encode a FlowField as a KITTI flow PNG, quantized to 1/64 px and clamped to the 16-bit range
    """
    def encode(component: np.ndarray) -> np.ndarray:
        return np.clip(np.rint(component * KITTI_SCALE + KITTI_OFFSET), 0, 65535).astype(np.uint16)

    blue = flow.valid_mask().astype(np.uint16)
    image = np.stack([blue, encode(flow.v), encode(flow.u)], axis=2)
    ok, buffer = cv2.imencode(".png", image)
    if not ok:
        raise FlowFormatError("OpenCV failed to encode the flow PNG")
    return buffer.tobytes()


### 8-bit images

def read_image(data: bytes) -> Image:
    """
    Decode an 8-bit PNG or binary PPM into an Image with intensities in [0, 1]
    """
    try:
        pil = PILImage.open(io.BytesIO(data))
        pil.load()
    except UnidentifiedImageError as e:
        raise UnsupportedFormatError("Bytes are not a recognized image") from e
    if pil.format not in IMAGE_FORMATS:
        raise UnsupportedFormatError(f"Only PNG and PPM images are supported, got {pil.format}")
    if pil.mode in ("P", "RGBA", "LA", "CMYK"):
        pil = pil.convert("RGB")
    if pil.mode not in ("L", "RGB"):
        raise UnsupportedFormatError(f"Only 8-bit grayscale or RGB images are supported, got mode {pil.mode}")
    return Image(np.asarray(pil, dtype=np.float64) / 255.0)


def write_image(image: Image, fmt: str = "png") -> bytes:
    """
    Encode an Image as 8-bit PNG or PPM

    :param image: intensities in [0, 1], rounded to the nearest 1/255
    :param fmt: "png" or "ppm"
    """
    fmt = fmt.upper()
    if fmt not in IMAGE_FORMATS:
        raise UnsupportedFormatError(f"Cannot write images as {fmt}")
    pixels = np.rint(image.data * 255.0).astype(np.uint8)
    pil = PILImage.fromarray(pixels[..., 0] if image.channels == 1 else pixels)
    buffer = io.BytesIO()
    pil.save(buffer, format=fmt)
    return buffer.getvalue()


### Path helpers

def load_flow(path: str) -> FlowField:
    with open(path, "rb") as f:
        data = f.read()
    if path.lower().endswith(".png"):
        return read_kitti_flow_png(data)
    return read_flo(data)


def save_flow(path: str, flow: FlowField) -> None:
    data = write_kitti_flow_png(flow) if path.lower().endswith(".png") else write_flo(flow)
    with open(path, "wb") as f:
        f.write(data)


def load_image(path: str) -> Image:
    with open(path, "rb") as f:
        return read_image(f.read())


def save_image(path: str, image: Image) -> None:
    fmt = "ppm" if path.lower().endswith(".ppm") else "png"
    with open(path, "wb") as f:
        f.write(write_image(image, fmt))


### Manifest

class ManifestEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: str = Field(description="Unique sample id")
    frame1: str = Field(description="Path of the first frame, relative to the manifest")
    frame2: str = Field(description="Path of the second frame, relative to the manifest")
    gt: Optional[str] = Field(default=None, description="Path of the ground-truth flow (.flo or KITTI .png)")
    group: str = Field(description="Scene or pair key; grouped selection never splits a group")


class Manifest(BaseModel):
    """
    The list of samples making up a dataset on disk
    """

    model_config = ConfigDict(extra="forbid")

    samples: List[ManifestEntry] = Field(default_factory=list, description="Samples in dataset order")

    @field_validator("samples")
    @classmethod
    def unique_ids(cls, samples: List[ManifestEntry]) -> List[ManifestEntry]:
        ids = [entry.id for entry in samples]
        if len(set(ids)) != len(ids):
            raise ValueError("Manifest sample ids must be unique")
        return samples

    @property
    def ids(self) -> List[str]:
        return [entry.id for entry in self.samples]

    def check_files(self, base_dir: str) -> None:
        """
        Raise FileNotFoundError for the first referenced file that does not exist under base_dir
        """
        for entry in self.samples:
            for path in (entry.frame1, entry.frame2, entry.gt):
                if path is not None and not os.path.exists(os.path.join(base_dir, path)):
                    raise FileNotFoundError(f"Manifest entry {entry.id} references missing file {path}")


def read_manifest(data: bytes, base_dir: Optional[str] = None) -> Manifest:
    """
    Parse manifest JSON; when base_dir is given every referenced file must exist
    """
    manifest = Manifest.model_validate_json(data)
    if base_dir is not None:
        manifest.check_files(base_dir)
    return manifest


def write_manifest(manifest: Manifest) -> bytes:
    return manifest.model_dump_json(indent=2).encode("utf-8")


def load_manifest(path: str) -> Manifest:
    with open(path, "rb") as f:
        return read_manifest(f.read(), base_dir=os.path.dirname(os.path.abspath(path)))


def save_manifest(path: str, manifest: Manifest) -> None:
    with open(path, "wb") as f:
        f.write(write_manifest(manifest))


def load_dataset(manifest_path: str) -> Dataset:
    """
    Load every sample a manifest references, with ground truth where the manifest gives it
    """
    manifest = load_manifest(manifest_path)
    base_dir = os.path.dirname(os.path.abspath(manifest_path))
    samples = []
    for entry in manifest.samples:
        label = load_flow(os.path.join(base_dir, entry.gt)) if entry.gt else None
        samples.append(Sample(
            id=entry.id,
            frame1=load_image(os.path.join(base_dir, entry.frame1)),
            frame2=load_image(os.path.join(base_dir, entry.frame2)),
            label=label,
            group=entry.group,
        ))
    return Dataset(samples)


### CSV tables

def read_table(path: str, dtypes: Mapping[str, type], index_col: Optional[int] = None) -> pd.DataFrame:
    """
    Read a CSV written by one of the writers, checking that every expected column is present

    :param path: the CSV file
    :param dtypes: expected columns and their types
    :param index_col: column used as the row index, if any
    """
    try:
        frame = pd.read_csv(path, dtype=dict(dtypes), index_col=index_col)
    except ValueError as e:
        raise TableFormatError(f"Cannot parse {path}: {e}") from e
    missing = set(dtypes) - set(frame.columns)
    if missing:
        raise TableFormatError(f"{path} lacks columns {sorted(missing)}")
    return frame
