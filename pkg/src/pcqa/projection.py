"""Six-view orthographic cube projections of a point cloud.

Faces are ordered ``[+X, -X, +Y, -Y, +Z, -Z]``; face ``+X`` is seen from a
camera on the +X side looking toward -X. All faces share one cubic frame
centered on the bounding-box center, so image scale is identical across views.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import kernels
from .pointcloud import PointCloud, bounding_box

FACE_NAMES = ("+X", "-X", "+Y", "-Y", "+Z", "-Z")
LMM_IMAGE_SIZE = 448

# (right axis, right sign, up axis, depth axis, depth sign); right = forward x up
_FACES = (
    (1, +1.0, 2, 0, +1.0),
    (1, -1.0, 2, 0, -1.0),
    (0, -1.0, 2, 1, +1.0),
    (0, +1.0, 2, 1, -1.0),
    (0, +1.0, 1, 2, +1.0),
    (0, -1.0, 1, 2, -1.0),
)


@dataclass(frozen=True)
class RenderConfig:
    resolution: int = 1024
    splat_radius: int = 2
    background: tuple = (255, 255, 255)
    margin: float = 0.05

    def __post_init__(self):
        if int(self.resolution) < 64:
            raise ValueError("resolution must be >= 64")
        if int(self.splat_radius) < 0:
            raise ValueError("splat_radius must be >= 0")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")
        if len(self.background) != 3 or not all(0 <= int(c) <= 255 for c in self.background):
            raise ValueError("background must be an RGB triple in [0, 255]")
        object.__setattr__(self, "resolution", int(self.resolution))
        object.__setattr__(self, "splat_radius", int(self.splat_radius))
        object.__setattr__(self, "background", tuple(int(c) for c in self.background))
        object.__setattr__(self, "margin", float(self.margin))


@dataclass(frozen=True)
class ProjectionSet:
    images: tuple
    config: RenderConfig
    source_name: str

    def __post_init__(self):
        if len(self.images) != 6:
            raise ValueError("a projection set holds exactly 6 images")
        side = self.config.resolution
        for img in self.images:
            if img.shape != (side, side, 3):
                raise ValueError(f"image shape {img.shape} != ({side}, {side}, 3)")

    def face_paths(self, directory: str | os.PathLike) -> list[Path]:
        return [Path(directory) / f"{self.source_name}_face{k}.png" for k in range(1, 7)]

    def save(self, directory: str | os.PathLike, size: int | None = None) -> list[Path]:
        """Write ``<name>_face<k>.png``; ``size`` pads and resizes first."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = self.face_paths(directory)
        for img, path in zip(self.images, paths):
            if size is not None:
                img = pad_and_resize(img, size, self.config.background)
            write_png(img, path)
        return paths


def frame(pc: PointCloud, margin: float) -> tuple[np.ndarray, float]:
    """Center and side length of the margin-expanded bounding cube."""
    box = bounding_box(pc)
    side = float(np.max(box.extent)) * (1.0 + 2.0 * margin)
    if side <= 0.0:
        side = 1.0
    return box.center, side


def project_face(pc: PointCloud, face: int, center: np.ndarray, side: float, resolution: int):
    """Pixel columns, rows and nearness key of every point for one face."""
    right, rsign, up, depth, dsign = _FACES[face]
    p = pc.positions
    u = rsign * (p[:, right] - center[right]) / side + 0.5
    v = 0.5 - (p[:, up] - center[up]) / side
    cols = np.clip(np.floor(u * resolution), 0, resolution - 1).astype(np.int64)
    rows = np.clip(np.floor(v * resolution), 0, resolution - 1).astype(np.int64)
    return cols, rows, dsign * p[:, depth]


def render_face(pc: PointCloud, face: int, cfg: RenderConfig,
                center: np.ndarray | None = None, side: float | None = None) -> np.ndarray:
    if center is None or side is None:
        center, side = frame(pc, cfg.margin)
    cols, rows, near = project_face(pc, face, center, side, cfg.resolution)
    return kernels.splat(cols, rows, near, np.ascontiguousarray(pc.colors),
                         cfg.resolution, cfg.splat_radius, cfg.background)


def render_cube_projections(pc: PointCloud, cfg: RenderConfig | None = None) -> ProjectionSet:
    cfg = RenderConfig() if cfg is None else cfg
    center, side = frame(pc, cfg.margin)
    images = tuple(render_face(pc, f, cfg, center, side) for f in range(6))
    return ProjectionSet(images, cfg, pc.name)


def pad_and_resize(image: np.ndarray, target: int = LMM_IMAGE_SIZE,
                   background=(255, 255, 255)) -> np.ndarray:
    """Center-pad to a square with ``background``, then bilinear-resize to ``target``."""
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim != 3 or image.shape[2] != 3 or image.shape[0] == 0 or image.shape[1] == 0:
        raise ValueError(f"expected a non-empty (H, W, 3) image, got {image.shape}")
    h, w = image.shape[:2]
    side = max(h, w)
    if h != w:
        square = np.empty((side, side, 3), dtype=np.uint8)
        square[:] = np.asarray(background, dtype=np.uint8)
        top = (side - h) // 2
        left = (side - w) // 2
        square[top:top + h, left:left + w] = image
        image = square
    if side == target:
        return image.copy()
    return np.asarray(Image.fromarray(image, "RGB").resize((target, target), Image.BILINEAR))


def write_png(image: np.ndarray, path: str | os.PathLike) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8), "RGB").save(path, format="PNG", optimize=False)


def read_png(path: str | os.PathLike) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))
