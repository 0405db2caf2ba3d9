"""Thermal video types and the TRV1 binary container.

TRV1 layout (little-endian)::

    magic "TRV1" | version u32 | width u32 | height u32 | frame_count u64
    | fps_num u32 | fps_den u32 | temp_scale f64 | temp_offset f64
    | payload: frame_count x height x width u16, row-major

The header is 48 bytes, so a file holds exactly ``48 + N*H*W*2`` bytes.
Annotations are kept in a JSON sidecar, not in the container.
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import BinaryIO, Optional, Union

import numpy as np

MAGIC = b"TRV1"
VERSION = 1
HEADER = struct.Struct("<4sIIIQIIdd")
HEADER_SIZE = HEADER.size  # 48

PathLike = Union[str, Path]


class ThermalError(Exception):
    """Base class for thermal-core errors."""


class ThermalInvariantError(ThermalError, ValueError):
    pass


class TrvFormatError(ThermalError):
    """Not a TRV1 stream (bad magic or unsupported version)."""


class TrvCorruptionError(ThermalError):
    def __init__(self, message, expected=None, actual=None):
        super().__init__(message)
        self.expected = expected
        self.actual = actual


class TrvIOError(ThermalError, OSError):
    def __init__(self, message, offset):
        super().__init__(message)
        self.offset = offset


def as_fraction(rate) -> Fraction:
    """Coerce a frame rate to a Fraction; "25/3" and "8.33" style strings are accepted."""
    if isinstance(rate, Fraction):
        return rate
    if isinstance(rate, (tuple, list)):
        return Fraction(int(rate[0]), int(rate[1]))
    if isinstance(rate, float):
        return Fraction(rate).limit_denominator(1000)
    return Fraction(rate)


def _frame_stack(frames, dtype) -> np.ndarray:
    if isinstance(frames, np.ndarray):
        arr = frames
    else:
        frames = list(frames)
        shapes = {np.shape(f) for f in frames}
        if len(shapes) > 1:
            raise ThermalInvariantError(f"frames have mismatched sizes: {sorted(shapes)}")
        arr = np.stack([np.asarray(f) for f in frames]) if frames else np.empty((0, 0, 0))
    if arr.ndim != 3:
        raise ThermalInvariantError(f"frames must be N x H x W, got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise ThermalInvariantError("video needs at least one frame")
    if dtype is None:
        return arr
    arr = np.array(arr, dtype=dtype, order="C", copy=arr.dtype != dtype or arr.flags.writeable)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class ThermalVideo:
    """Raw single-channel thermal video.

    ``frames`` is an immutable ``(N, H, W)`` uint16 array; temperatures are
    ``raw * temp_scale + temp_offset`` in degrees Celsius.
    """

    frames: np.ndarray
    frame_rate: Fraction
    temp_scale: float
    temp_offset: float = 0.0
    source_id: str = ""

    def __post_init__(self):
        raw = _frame_stack(self.frames, None)
        if raw.dtype != np.uint16 and (raw.min() < 0 or raw.max() > 0xFFFF):
            raise ThermalInvariantError("raw intensities must fit in u16")
        object.__setattr__(self, "frames", _frame_stack(raw, np.uint16))
        object.__setattr__(self, "frame_rate", as_fraction(self.frame_rate))
        object.__setattr__(self, "temp_scale", float(self.temp_scale))
        object.__setattr__(self, "temp_offset", float(self.temp_offset))
        if self.frame_rate <= 0:
            raise ThermalInvariantError(f"frame_rate must be positive, got {self.frame_rate}")
        if not np.isfinite(self.temp_scale) or self.temp_scale <= 0:
            raise ThermalInvariantError(f"temp_scale must be > 0, got {self.temp_scale}")
        if not np.isfinite(self.temp_offset):
            raise ThermalInvariantError("temp_offset must be finite")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    @property
    def duration(self) -> Fraction:
        return self.n_frames / self.frame_rate

    def celsius(self, raw) -> np.ndarray:
        return np.asarray(raw, dtype=np.float64) * self.temp_scale + self.temp_offset

    def __eq__(self, other):
        if not isinstance(other, ThermalVideo):
            return NotImplemented
        return (
            self.frame_rate == other.frame_rate
            and self.temp_scale == other.temp_scale
            and self.temp_offset == other.temp_offset
            and self.source_id == other.source_id
            and np.array_equal(self.frames, other.frames)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class NormalizedVideo:
    """Video rescaled to [0, 1] by a fitted normalization (float32 frames)."""

    frames: np.ndarray
    frame_rate: Fraction
    norm_params: object = None
    source_id: str = ""

    def __post_init__(self):
        arr = _frame_stack(self.frames, np.float32)
        if arr.size and (float(arr.min()) < 0.0 or float(arr.max()) > 1.0):
            raise ThermalInvariantError("normalized values must lie in [0, 1]")
        object.__setattr__(self, "frames", arr)
        object.__setattr__(self, "frame_rate", as_fraction(self.frame_rate))

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def duration(self) -> Fraction:
        return self.n_frames / self.frame_rate


class MaternalPosition(str, enum.Enum):
    SUPINE = "supine"
    SIDE_LYING = "side_lying"
    HANDS_AND_KNEES = "hands_and_knees"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class Annotation:
    """Ground-truth (or predicted) time of birth in whole seconds; None means missing."""

    t_birth: Optional[int] = None
    maternal_position: MaternalPosition = MaternalPosition.UNKNOWN

    def __post_init__(self):
        object.__setattr__(self, "maternal_position", MaternalPosition(self.maternal_position))
        if self.t_birth is not None:
            if int(self.t_birth) != self.t_birth or self.t_birth < 0:
                raise ThermalInvariantError(f"t_birth must be a non-negative integer, got {self.t_birth}")
            object.__setattr__(self, "t_birth", int(self.t_birth))

    def check_bounds(self, video) -> None:
        if self.t_birth is not None and self.t_birth > video.n_frames / video.frame_rate:
            raise ThermalInvariantError(
                f"t_birth={self.t_birth} s lies beyond the video end ({float(video.duration):.2f} s)")

    def to_dict(self) -> dict:
        return {"t_birth": self.t_birth, "maternal_position": self.maternal_position.value}

    @classmethod
    def from_dict(cls, d: dict) -> "Annotation":
        return cls(d.get("t_birth"), d.get("maternal_position", "unknown"))


def write_annotation(annotation: Annotation, path: PathLike) -> None:
    Path(path).write_text(json.dumps(annotation.to_dict(), sort_keys=True) + "\n")


def read_annotation(path: PathLike) -> Annotation:
    return Annotation.from_dict(json.loads(Path(path).read_text()))


def trv_size(n_frames: int, height: int, width: int) -> int:
    return HEADER_SIZE + n_frames * height * width * 2


def _pack_header(video: ThermalVideo) -> bytes:
    fps = video.frame_rate
    if fps.numerator > 0xFFFFFFFF or fps.denominator > 0xFFFFFFFF:
        raise ThermalInvariantError(f"frame rate {fps} does not fit in u32/u32")
    return HEADER.pack(MAGIC, VERSION, video.width, video.height, video.n_frames,
                       fps.numerator, fps.denominator, video.temp_scale, video.temp_offset)


def write_trv(video: ThermalVideo, destination: Union[BinaryIO, PathLike]) -> int:
    """Serialize ``video`` as TRV1; returns the number of bytes written."""
    if not isinstance(video, ThermalVideo):
        raise TypeError(f"expected ThermalVideo, got {type(video).__name__}")
    header = _pack_header(video)
    payload = video.frames.astype("<u2", copy=False).tobytes(order="C")
    if not hasattr(destination, "write"):
        with open(destination, "wb") as fh:
            return write_trv(video, fh)
    written = 0
    for chunk in (header, payload):
        try:
            destination.write(chunk)
        except OSError as exc:
            raise TrvIOError(f"write failed at byte offset {written}: {exc}", written) from exc
        written += len(chunk)
    return written


def read_trv(source: Union[BinaryIO, PathLike, bytes], source_id: Optional[str] = None) -> ThermalVideo:
    """Parse a TRV1 stream, validating the header against the payload length."""
    if isinstance(source, (bytes, bytearray, memoryview)):
        data = bytes(source)
    elif hasattr(source, "read"):
        data = source.read()
    else:
        path = Path(source)
        data = path.read_bytes()
        if source_id is None:
            source_id = path.stem
    if len(data) < HEADER_SIZE:
        if data[:4] != MAGIC[: len(data[:4])]:
            raise TrvFormatError(f"bad magic {data[:4]!r}")
        raise TrvCorruptionError(
            f"truncated header: expected {HEADER_SIZE} bytes, got {len(data)}", HEADER_SIZE, len(data))
    magic, version, width, height, n_frames, fps_num, fps_den, scale, offset = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise TrvFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise TrvFormatError(f"unsupported TRV version {version}")
    if fps_den == 0 or fps_num == 0:
        raise ThermalInvariantError(f"invalid frame rate {fps_num}/{fps_den}")
    if not scale > 0:
        raise ThermalInvariantError(f"temp_scale must be > 0, got {scale}")
    expected = trv_size(n_frames, height, width)
    if len(data) != expected:
        raise TrvCorruptionError(
            f"payload size mismatch: header declares {n_frames} frames of {height}x{width} "
            f"({expected} bytes total), stream holds {len(data)} bytes",
            expected, len(data))
    frames = np.frombuffer(data, dtype="<u2", offset=HEADER_SIZE).reshape(n_frames, height, width)
    return ThermalVideo(frames.astype(np.uint16), Fraction(fps_num, fps_den), scale, offset,
                        source_id or "")


def celsius_frame(video: ThermalVideo, n: int) -> np.ndarray:
    if not 0 <= n < video.n_frames:
        raise IndexError(f"frame index {n} out of range [0, {video.n_frames})")
    return video.celsius(video.frames[n])


def quantize_normalized(video: NormalizedVideo) -> ThermalVideo:
    """Pack a normalized video into TRV1 form (scale 1/65535, offset 0)."""
    raw = np.rint(video.frames.astype(np.float64) * 65535.0).astype(np.uint16)
    return ThermalVideo(raw, video.frame_rate, 1.0 / 65535.0, 0.0, video.source_id)


def dequantize_normalized(video: ThermalVideo) -> NormalizedVideo:
    values = np.clip(video.frames.astype(np.float64) * video.temp_scale + video.temp_offset, 0.0, 1.0)
    return NormalizedVideo(values, video.frame_rate, None, video.source_id)
