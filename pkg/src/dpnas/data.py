"""Procedural images, AWGN, PGM/PPM I/O, patching and splits.

Images are float arrays shaped ``(c, h, w)`` with values in ``[0, 1]``.
Every random draw comes from an explicitly seeded generator.
"""

from __future__ import annotations

import os
import re

import numpy as np


class UnsupportedFormat(ValueError):
    pass


class TruncatedFile(ValueError):
    pass


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def synth_image(size, rng, channels=1):
    """One image mixing rectangles, a linear gradient and smooth sinusoids."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.zeros((channels, size, size))
    for c in range(channels):
        gx, gy = rng.uniform(-0.5, 0.5, 2)
        layer = 0.5 + gx * (xx - 0.5) + gy * (yy - 0.5)
        for _ in range(rng.integers(2, 6)):
            y0, x0 = rng.integers(0, size - 2, 2)
            hh, ww = rng.integers(2, max(3, size // 2), 2)
            layer[y0:y0 + hh, x0:x0 + ww] = rng.uniform(0.0, 1.0)
        for _ in range(rng.integers(1, 3)):
            fy, fx = rng.uniform(0.5, 4.0, 2)
            ph = rng.uniform(0, 2 * np.pi)
            layer = layer + rng.uniform(0.05, 0.2) * np.sin(2 * np.pi * (fy * yy + fx * xx) + ph)
        img[c] = layer
    return np.clip(img, 0.0, 1.0)


def synth_images(count, size, seed, channels=1):
    if size <= 0 or size & (size - 1):
        raise ValueError(f"image size must be a power of two, got {size}")
    rng = _rng(seed)
    return np.stack([synth_image(size, rng, channels) for _ in range(count)])


def add_awgn(image, sigma, seed):
    """Add N(0, (sigma/255)^2) noise; the result is not clamped."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    image = np.asarray(image)
    if sigma == 0:
        return image.copy()
    return image + _rng(seed).standard_normal(image.shape) * (sigma / 255.0)


def center_crop(image, size):
    _, h, w = image.shape
    if size > h or size > w:
        raise ValueError(f"crop {size} larger than image {h}x{w}")
    top, left = (h - size) // 2, (w - size) // 2
    return image[:, top:top + size, left:left + size]


def patch_coords(shapes, patch, count, seed):
    """``(image, top, left)`` triples for ``count`` random in-bounds patches."""
    rng = _rng(seed)
    out = []
    for _ in range(count):
        i = int(rng.integers(len(shapes)))
        h, w = shapes[i]
        if patch > h or patch > w:
            raise ValueError(f"patch {patch} larger than image {h}x{w}")
        out.append((i, int(rng.integers(0, h - patch + 1)), int(rng.integers(0, w - patch + 1))))
    return out


def extract_patches(images, patch, count, seed):
    coords = patch_coords([im.shape[1:] for im in images], patch, count, seed)
    return np.stack([images[i][:, t:t + patch, l:l + patch] for i, t, l in coords])


def split(images, val_fraction, seed):
    """Disjoint seeded ``(train, val)`` split of a list."""
    n = len(images)
    n_val = int(round(n * val_fraction))
    perm = _rng(seed).permutation(n)
    val_idx, train_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])
    return [images[i] for i in train_idx], [images[i] for i in val_idx]


# ---------------------------------------------------------------------------
# binary netpbm


_HEADER = re.compile(rb"\A(P[56])(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)\s")


def load_pnm(path):
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:2] not in (b"P5", b"P6"):
        raise UnsupportedFormat(f"{path}: expected binary P5/P6, got {buf[:2]!r}")
    m = _HEADER.match(buf)
    if m is None:
        raise TruncatedFile(f"{path}: incomplete header")
    magic, w, h, maxval = m.group(1), int(m.group(2)), int(m.group(3)), int(m.group(4))
    if maxval != 255:
        raise UnsupportedFormat(f"{path}: maxval {maxval} (only 255 supported)")
    c = 1 if magic == b"P5" else 3
    payload = buf[m.end():]
    if len(payload) < c * h * w:
        raise TruncatedFile(f"{path}: {len(payload)} of {c * h * w} pixel bytes")
    arr = np.frombuffer(payload, dtype=np.uint8, count=c * h * w).reshape(h, w, c)
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


load_pgm = load_pnm
load_ppm = load_pnm


def save_pnm(path, image):
    image = np.asarray(image)
    c, h, w = image.shape
    if c not in (1, 3):
        raise UnsupportedFormat(f"cannot write {c}-channel image")
    q = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    magic = b"P5" if c == 1 else b"P6"
    with open(path, "wb") as f:
        f.write(magic + f"\n{w} {h}\n255\n".encode())
        f.write(q.transpose(1, 2, 0).tobytes())


save_pgm = save_pnm
save_ppm = save_pnm


def load_dir(path):
    """All ``.pgm``/``.ppm`` images in a directory, sorted by name."""
    names = sorted(n for n in os.listdir(path) if n.lower().endswith((".pgm", ".ppm")))
    return [load_pnm(os.path.join(path, n)) for n in names]


# ---------------------------------------------------------------------------


class DenoiseData:
    """Clean training patches with fresh noise per draw, plus a fixed noisy
    validation set cropped from held-out images."""

    def __init__(self, train_patches, val_clean, sigma, seed, val_noise_seed=None):
        self.train = np.asarray(train_patches, dtype=np.float64)
        self.val_clean = np.asarray(val_clean, dtype=np.float64)
        self.sigma = sigma
        self.seed = seed
        vseed = val_noise_seed if val_noise_seed is not None else [int(seed), 7919]
        self.val_noisy = add_awgn(self.val_clean, sigma, np.random.default_rng(vseed))

    def batch(self, rng, size, dtype=np.float32):
        idx = rng.integers(0, len(self.train), size)
        clean = self.train[idx]
        noisy = clean + rng.standard_normal(clean.shape) * (self.sigma / 255.0)
        return noisy.astype(dtype), clean.astype(dtype)

    @classmethod
    def synthetic(cls, n_images=64, image_size=64, patch=32, n_patches=2048, n_val=16,
                  sigma=25.0, seed=0, channels=1):
        imgs = synth_images(n_images, image_size, [int(seed), 1], channels)
        train, val = split(list(imgs), n_val / n_images, [int(seed), 2])
        patches = extract_patches(train, patch, n_patches, [int(seed), 3])
        val_crops = np.stack([center_crop(v, patch) for v in val])
        return cls(patches, val_crops, sigma, seed)
