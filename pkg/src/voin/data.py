"""Canonical data model and bit-exact file I/O for clips, masks and flow.

Clips are stored as binary PPM (P6) frames, masks as binary PGM (P5),
flow fields in the Middlebury .flo layout.
"""

import os
import re
import struct
from dataclasses import dataclass

import numpy as np

FLO_MAGIC = b"PIEH"

# Canonical sample directory layout.
CLIP_DIR = "clip"
GT_CLIP_DIR = "gt_clip"
VISIBLE_DIR = "masks_visible"
AMODAL_DIR = "masks_amodal"
OCC_DIR = "masks_occ"
FLOW_FWD_DIR = "flow_fwd"
FLOW_BWD_DIR = "flow_bwd"

MASK_KINDS = ("visible", "amodal", "occluded")
FLOW_DIRECTIONS = ("forward", "backward")


class DataError(Exception):
    """Base class for data-model and file-format failures."""


class FormatError(DataError):
    """Malformed file: bad magic, bad header, truncated payload."""


class GapError(DataError):
    """A frame index is missing from a numbered sequence."""


class ShapeError(DataError):
    """Dimension mismatch between files or arrays."""


class ValidationError(DataError):
    """A sample violates a cross-array invariant."""


@dataclass
class VideoClip:
    """Ordered RGB frame sequence, (T, H, W, 3) float in [0, 1]."""

    frames: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=np.float32)
        if f.ndim != 4 or f.shape[3] != 3:
            raise ShapeError("clip frames must have shape (T, H, W, 3), got %r" % (f.shape,))
        if f.shape[0] < 2:
            raise ValidationError("clip needs T >= 2 frames, got T=%d" % f.shape[0])
        if not np.isfinite(f).all():
            raise ValidationError("clip contains non-finite values")
        if f.min() < 0.0 or f.max() > 1.0:
            raise ValidationError("clip values outside [0, 1]")
        self.frames = f

    @property
    def T(self):
        return self.frames.shape[0]

    @property
    def H(self):
        return self.frames.shape[1]

    @property
    def W(self):
        return self.frames.shape[2]


@dataclass
class MaskSequence:
    """Per-frame binary rasters, (T, H, W) uint8 in {0, 1}."""

    masks: np.ndarray
    kind: str = "visible"

    def __post_init__(self):
        m = np.asarray(self.masks)
        if m.ndim != 3:
            raise ShapeError("masks must have shape (T, H, W), got %r" % (m.shape,))
        if self.kind not in MASK_KINDS:
            raise ValidationError("unknown mask kind %r" % (self.kind,))
        vals = np.unique(m)
        if not np.isin(vals, (0, 1)).all():
            raise ValidationError("mask values must be in {0, 1}, got %r" % (vals,))
        self.masks = m.astype(np.uint8)

    @property
    def T(self):
        return self.masks.shape[0]


@dataclass
class FlowSequence:
    """Dense per-frame-pair (u, v) fields, (T-1, H, W, 2) float32, u along x."""

    flows: np.ndarray
    direction: str = "forward"

    def __post_init__(self):
        f = np.asarray(self.flows, dtype=np.float32)
        if f.ndim != 4 or f.shape[3] != 2:
            raise ShapeError("flows must have shape (T-1, H, W, 2), got %r" % (f.shape,))
        if self.direction not in FLOW_DIRECTIONS:
            raise ValidationError("unknown flow direction %r" % (self.direction,))
        if not np.isfinite(f).all():
            raise ValidationError("flow contains non-finite values")
        self.flows = f


@dataclass
class HyperParams:
    """Loss weights and architectural constants, all exposed in config."""

    lam1: float = 1.0
    lam2: float = 0.5
    lam3: float = 1.0
    lam4: float = 0.1
    lam5: float = 1.0
    lam6: float = 10.0
    lam_flow: float = 1.0
    lam_app: float = 0.1
    heads: int = 4
    patch_scales: tuple = ((1, 1), (2, 2), (4, 4), (8, 8))
    d_k: int = 16
    d_e: int = 16
    layers: int = 8
    temporal_field: int = 2
    tau: float = 5.0

    def __post_init__(self):
        for name in ("lam1", "lam2", "lam3", "lam4", "lam5", "lam6", "lam_flow", "lam_app"):
            if getattr(self, name) < 0:
                raise ValidationError("%s must be nonnegative" % name)
        if self.tau <= 0:
            raise ValidationError("cycle threshold tau must be positive")
        if self.heads != len(self.patch_scales):
            raise ValidationError("heads must equal the number of patch scales")


def _read_token(buf, pos):
    # Skips whitespace and '#' comment lines between header tokens.
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            while pos < n and buf[pos:pos + 1] != b"\n":
                pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise FormatError("truncated PNM header")
    return buf[start:pos], pos


def _load_pnm(path, magic, channels):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:2] != magic:
        raise FormatError("%s: expected %s magic, got %r" % (path, magic.decode(), buf[:2]))
    pos = 2
    w, pos = _read_token(buf, pos)
    h, pos = _read_token(buf, pos)
    maxval, pos = _read_token(buf, pos)
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise FormatError("%s: non-numeric PNM header fields" % path)
    if maxval != 255:
        raise FormatError("%s: only maxval 255 supported, got %d" % (path, maxval))
    pos += 1  # single whitespace after maxval
    payload = buf[pos:pos + w * h * channels]
    if len(payload) != w * h * channels:
        raise FormatError("%s: truncated payload (%d of %d bytes)"
                          % (path, len(payload), w * h * channels))
    arr = np.frombuffer(payload, dtype=np.uint8)
    if channels == 1:
        return arr.reshape(h, w)
    return arr.reshape(h, w, channels)


def _quantize(values):
    # Round-half-up to 8 bit: 0.5 -> 128, 1.0 -> 255.
    return np.floor(np.asarray(values, dtype=np.float64) * 255.0 + 0.5).clip(0, 255).astype(np.uint8)


def save_ppm(path, image):
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError("PPM image must be (H, W, 3), got %r" % (image.shape,))
    h, w = image.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(_quantize(image).tobytes())


def load_ppm(path):
    return _load_pnm(path, b"P6", 3).astype(np.float32) / 255.0


def save_pgm(path, mask):
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ShapeError("PGM mask must be (H, W), got %r" % (mask.shape,))
    h, w = mask.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write((mask.astype(np.uint8) * 255).tobytes())


def load_pgm(path):
    raw = _load_pnm(path, b"P5", 1)
    return (raw >= 128).astype(np.uint8)


def save_flow(path, flow):
    """Write one (H, W, 2) field in Middlebury .flo layout."""
    flow = np.asarray(flow, dtype=np.float32)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ShapeError("flow field must be (H, W, 2), got %r" % (flow.shape,))
    h, w = flow.shape[:2]
    with open(path, "wb") as fh:
        fh.write(FLO_MAGIC)
        fh.write(struct.pack("<ii", w, h))
        fh.write(flow.astype("<f4").tobytes())


def load_flow(path):
    """Read one .flo file back to an (H, W, 2) float32 field."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != FLO_MAGIC:
        raise FormatError("%s: bad .flo magic %r" % (path, buf[:4]))
    if len(buf) < 12:
        raise FormatError("%s: truncated .flo header" % path)
    w, h = struct.unpack("<ii", buf[4:12])
    need = 12 + 8 * w * h
    if len(buf) < need:
        raise FormatError("%s: truncated .flo payload (%d of %d bytes)" % (path, len(buf), need))
    return np.frombuffer(buf[12:need], dtype="<f4").reshape(h, w, 2).copy()


def _indexed_files(dir_path, pattern):
    rx = re.compile(pattern)
    found = {}
    for name in os.listdir(dir_path):
        m = rx.fullmatch(name)
        if m:
            found[int(m.group(1))] = os.path.join(dir_path, name)
    if not found:
        raise FormatError("no files matching %r in %s" % (pattern, dir_path))
    count = max(found) + 1
    missing = sorted(set(range(count)) - set(found))
    if missing:
        raise GapError("%s: missing indices %r" % (dir_path, missing))
    return [found[i] for i in range(count)]


def load_clip(dir_path):
    paths = _indexed_files(dir_path, r"frame_(\d{4})\.ppm")
    frames = [load_ppm(p) for p in paths]
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise ShapeError("%s: inconsistent frame shapes %r" % (dir_path, sorted(shapes)))
    return VideoClip(np.stack(frames))


def save_clip(clip, dir_path):
    os.makedirs(dir_path, exist_ok=True)
    for t in range(clip.T):
        save_ppm(os.path.join(dir_path, "frame_%04d.ppm" % t), clip.frames[t])


def load_masks(dir_path, kind="visible"):
    paths = _indexed_files(dir_path, r"(\d{4})\.pgm")
    masks = [load_pgm(p) for p in paths]
    shapes = {m.shape for m in masks}
    if len(shapes) != 1:
        raise ShapeError("%s: inconsistent mask shapes %r" % (dir_path, sorted(shapes)))
    return MaskSequence(np.stack(masks), kind=kind)


def save_masks(seq, dir_path):
    os.makedirs(dir_path, exist_ok=True)
    for t in range(seq.T):
        save_pgm(os.path.join(dir_path, "%04d.pgm" % t), seq.masks[t])


def load_flow_sequence(dir_path, direction="forward"):
    paths = _indexed_files(dir_path, r"(\d{4})\.flo")
    fields = [load_flow(p) for p in paths]
    shapes = {f.shape for f in fields}
    if len(shapes) != 1:
        raise ShapeError("%s: inconsistent flow shapes %r" % (dir_path, sorted(shapes)))
    return FlowSequence(np.stack(fields), direction=direction)


def save_flow_sequence(seq, dir_path):
    os.makedirs(dir_path, exist_ok=True)
    for i in range(seq.flows.shape[0]):
        save_flow(os.path.join(dir_path, "%04d.flo" % i), seq.flows[i])


def validate_sample(clip, visible, amodal, occluded, flow_fwd, flow_bwd):
    """Raise ValidationError naming the first violated invariant, if any."""
    T, H, W = clip.T, clip.H, clip.W
    for name, seq in (("visible", visible), ("amodal", amodal), ("occluded", occluded)):
        if seq.masks.shape != (T, H, W):
            raise ValidationError("%s masks shaped %r, expected %r"
                                  % (name, seq.masks.shape, (T, H, W)))
    bad = np.argwhere(visible.masks > amodal.masks)
    if bad.size:
        t, y, x = bad[0]
        raise ValidationError("visible not a subset of amodal at frame %d pixel (%d, %d)"
                              % (t, y, x))
    expect = amodal.masks & (1 - visible.masks)
    bad = np.argwhere(occluded.masks != expect)
    if bad.size:
        t, y, x = bad[0]
        raise ValidationError("occluded != amodal AND NOT visible at frame %d pixel (%d, %d)"
                              % (t, y, x))
    for name, seq, direction in (("forward", flow_fwd, "forward"), ("backward", flow_bwd, "backward")):
        if seq.flows.shape[0] != T - 1:
            raise ValidationError("%s flow has %d fields, expected T-1 = %d"
                                  % (name, seq.flows.shape[0], T - 1))
        if seq.flows.shape[1:3] != (H, W):
            raise ValidationError("%s flow shaped %r, expected (%d, %d)"
                                  % (name, seq.flows.shape[1:3], H, W))
        if seq.direction != direction:
            raise ValidationError("%s flow tagged %r" % (name, seq.direction))
