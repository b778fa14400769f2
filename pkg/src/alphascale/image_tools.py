"""Transferring color from an original-material rendering to a reference-material rendering.

Non-specular pixels of the reference rendering keep their lightness
structure but are shifted so both renderings share the same median
lightness; their a*, b* come from the original. Specular pixels are
copied from the original unchanged.

Float images are stored as PFM with channels (L*, a*, b*) in place of
(R, G, B); masks as single-channel PFM or 8-bit grayscale PNG
(nonzero = specular).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .colorimetry import lab_d50_to_srgb_array
from .errors import DimensionError, DomainError, ParseError


@dataclass(frozen=True)
class LabImage:
    L: np.ndarray
    a: np.ndarray
    b: np.ndarray
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        arrs = [np.array(x, dtype=float) for x in (self.L, self.a, self.b)]
        if arrs[0].ndim != 2 or any(x.shape != arrs[0].shape for x in arrs):
            raise DimensionError("L, a, b must be 2-D arrays of equal shape")
        if np.any(arrs[0] < 0) or np.any(arrs[0] > 100) or not all(np.all(np.isfinite(x)) for x in arrs):
            raise DomainError("L* must lie in [0, 100] and all channels be finite")
        for name, x in zip("Lab", arrs):
            x.setflags(write=False)
            object.__setattr__(self, name, x)
        if self.mask is not None:
            m = np.array(self.mask, dtype=bool)
            if m.shape != arrs[0].shape:
                raise DimensionError("mask shape differs from the image")
            m.setflags(write=False)
            object.__setattr__(self, "mask", m)

    @property
    def shape(self):
        return self.L.shape

    @property
    def width(self) -> int:
        return self.L.shape[1]

    @property
    def height(self) -> int:
        return self.L.shape[0]

    @classmethod
    def from_array(cls, lab, mask=None) -> "LabImage":
        lab = np.asarray(lab, dtype=float)
        return cls(lab[..., 0], lab[..., 1], lab[..., 2], mask)

    def to_array(self) -> np.ndarray:
        return np.stack([self.L, self.a, self.b], axis=-1)

    def __eq__(self, other):
        if not isinstance(other, LabImage):
            return NotImplemented
        same_mask = (self.mask is None and other.mask is None) or (
            self.mask is not None and other.mask is not None and np.array_equal(self.mask, other.mask))
        return same_mask and all(np.array_equal(getattr(self, c), getattr(other, c)) for c in "Lab")


def _select(img: LabImage, exclude_mask):
    if exclude_mask is None:
        exclude_mask = img.mask
    if exclude_mask is None:
        return img.L.ravel()
    m = np.asarray(exclude_mask, dtype=bool)
    if m.shape != img.shape:
        raise DimensionError("mask shape differs from the image")
    return img.L[~m]


def median_lightness(img: LabImage, exclude_mask=None) -> float:
    """Median L* over pixels outside the mask; the lower median for even counts."""
    vals = _select(img, exclude_mask)
    if vals.size == 0:
        raise DomainError("no unmasked pixels")
    return float(np.partition(vals, (vals.size - 1) // 2)[(vals.size - 1) // 2])


def color_transfer_report(original: LabImage, reference: LabImage, mask=None):
    """Like :func:`color_transfer` but also returns the number of clamped pixels."""
    if original.shape != reference.shape:
        raise DimensionError(f"image sizes differ: {original.shape} vs {reference.shape}")
    m = np.zeros(original.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if m.shape != original.shape:
        raise DimensionError("mask shape differs from the images")
    if m.all():
        return LabImage(original.L, original.a, original.b, m), 0
    shift = median_lightness(original, m) - median_lightness(reference, m)
    shifted = reference.L + shift
    clamped = int(np.count_nonzero(((shifted < 0) | (shifted > 100)) & ~m))
    L = np.where(m, original.L, np.clip(shifted, 0.0, 100.0))
    # a*, b* of every pixel come from the original (copied verbatim in the mask, replaced elsewhere)
    return LabImage(L, original.a, original.b, m), clamped


def color_transfer(original: LabImage, reference: LabImage, mask=None) -> LabImage:
    """Reference rendering recolored to match the original's median lightness and chroma."""
    return color_transfer_report(original, reference, mask)[0]


# -- file formats ---------------------------------------------------------

def write_pfm(path, data: np.ndarray):
    """Little-endian PFM; (h, w, 3) -> 'PF', (h, w) -> 'Pf'. Rows are written bottom-up."""
    data = np.asarray(data, dtype="<f4")
    if data.ndim == 3 and data.shape[2] == 3:
        tag = b"PF"
    elif data.ndim == 2:
        tag = b"Pf"
    else:
        raise DimensionError("PFM holds (h, w) or (h, w, 3) arrays")
    h, w = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(tag + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n")
        fh.write(np.ascontiguousarray(data[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    parts, pos = [], 0
    for _ in range(3):
        end = raw.find(b"\n", pos)
        if end < 0:
            raise ParseError("truncated PFM header", path)
        parts.append(raw[pos:end].strip())
        pos = end + 1
    tag = parts[0]
    if tag not in (b"PF", b"Pf"):
        raise ParseError("not a PFM file", path, 1)
    try:
        w, h = (int(x) for x in parts[1].split())
        scale = float(parts[2])
    except ValueError:
        raise ParseError("bad PFM header", path, 2) from None
    ch = 3 if tag == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    need = w * h * ch * 4
    if len(raw) - pos < need:
        raise ParseError(f"PFM payload truncated ({len(raw) - pos} of {need} bytes)", path)
    arr = np.frombuffer(raw, dtype=dtype, count=w * h * ch, offset=pos).astype(float)
    arr = arr.reshape((h, w, 3) if ch == 3 else (h, w))
    return arr[::-1].copy()


def read_lab_image(path, mask_path=None) -> LabImage:
    lab = read_pfm(path)
    if lab.ndim != 3:
        raise DimensionError(f"{path}: expected a 3-channel (L*, a*, b*) PFM")
    return LabImage.from_array(lab, read_mask(mask_path) if mask_path else None)


def write_lab_image(path, img: LabImage):
    write_pfm(path, img.to_array())


def read_mask(path) -> np.ndarray:
    if str(path).lower().endswith(".pfm"):
        m = read_pfm(path)
        return (m if m.ndim == 2 else m[..., 0]) != 0
    from PIL import Image
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) != 0


def write_png(path, img: LabImage) -> int:
    """8-bit sRGB preview; returns the number of out-of-gamut pixels that were clipped."""
    from PIL import Image
    rgb, clipped = lab_d50_to_srgb_array(img.to_array())
    Image.fromarray(np.round(rgb * 255.0).astype(np.uint8), mode="RGB").save(path)
    return int(np.count_nonzero(clipped))
