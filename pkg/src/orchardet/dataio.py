"""Dataset directory I/O.

Layout: <root>/images/<stem>.ppm, <root>/labels/<stem>.txt, and a
manifest.txt listing "<stem> <split>" lines. Label files follow the
one-object-per-line text convention "class cx cy w h" with coordinates
normalized to [0,1] and written at 6 decimal places.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .augment import METHODS, AugmentationChain, augment, make_chain
from .boxes import Box, GroundTruth
from .netpbm import read_ppm, write_ppm
from .synth import Scene, SceneConfig, generate_scene, sample_seed

VALID_CLASSES = (0, 1)
TRAIN, TEST = "train", "test"


class LabelError(ValueError):
    pass


def write_labels(path: str, truths: list[GroundTruth], image_hw: tuple[int, int]) -> None:
    h, w = image_hw
    with open(path, "w", encoding="utf-8") as fh:
        for t in truths:
            b = t.box
            fh.write(f"{b.class_id} {b.cx / w:.6f} {b.cy / h:.6f} "
                     f"{b.w / w:.6f} {b.h / h:.6f}\n")


def read_labels(path: str, image_hw: tuple[int, int]) -> list[GroundTruth]:
    h, w = image_hw
    out: list[GroundTruth] = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 5:
                raise LabelError(f"{path}:{ln}: expected 5 fields, got {len(parts)}")
            try:
                cls = int(parts[0])
                vals = [float(v) for v in parts[1:]]
            except ValueError as e:
                raise LabelError(f"{path}:{ln}: {e}") from None
            if cls not in VALID_CLASSES:
                raise LabelError(f"{path}:{ln}: unknown class {cls}, valid: {VALID_CLASSES}")
            cx, cy, bw, bh = vals
            for name, v in zip(("cx", "cy", "w", "h"), vals):
                if not (0.0 <= v <= 1.0):
                    raise LabelError(f"{path}:{ln}: {name}={v} outside [0,1]")
            if bw <= 0 or bh <= 0:
                raise LabelError(f"{path}:{ln}: nonpositive extent w={bw} h={bh}")
            out.append(GroundTruth(Box(cx * w, cy * h, bw * w, bh * h, class_id=cls)))
    return out


def save_scene(root: str, stem: str, scene: Scene) -> None:
    os.makedirs(os.path.join(root, "images"), exist_ok=True)
    os.makedirs(os.path.join(root, "labels"), exist_ok=True)
    write_ppm(os.path.join(root, "images", f"{stem}.ppm"), scene.image)
    write_labels(os.path.join(root, "labels", f"{stem}.txt"),
                 scene.truths, scene.image.shape[:2])


def load_scene(root: str, stem: str) -> Scene:
    img = read_ppm(os.path.join(root, "images", f"{stem}.ppm"))
    truths = read_labels(os.path.join(root, "labels", f"{stem}.txt"), img.shape[:2])
    return Scene(image=img, truths=truths, seed=-1)


@dataclass
class Manifest:
    entries: list[tuple[str, str]]   # (stem, split)

    def stems(self, split: str | None = None) -> list[str]:
        return [s for s, sp in self.entries if split is None or sp == split]


def write_manifest(root: str, manifest: Manifest) -> None:
    with open(os.path.join(root, "manifest.txt"), "w", encoding="utf-8") as fh:
        for stem, split in manifest.entries:
            fh.write(f"{stem} {split}\n")


def read_manifest(root: str) -> Manifest:
    path = os.path.join(root, "manifest.txt")
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2 or parts[1] not in (TRAIN, TEST):
                raise LabelError(f"{path}:{ln}: expected '<stem> train|test'")
            entries.append((parts[0], parts[1]))
    return Manifest(entries)


def generate_dataset(root: str, count: int, seed: int, config: SceneConfig | None = None,
                     train_fraction: float = 0.85) -> Manifest:
    """Write ``count`` synthetic scenes; the leading fraction is tagged as
    the training split, the rest as test."""
    if count < 1:
        raise ValueError("count must be >= 1")
    cfg = config or SceneConfig()
    n_train = int(round(count * train_fraction))
    entries = []
    for i in range(count):
        scene = generate_scene(sample_seed(seed, i), cfg)
        stem = f"scene_{i:05d}"
        save_scene(root, stem, scene)
        entries.append((stem, TRAIN if i < n_train else TEST))
    manifest = Manifest(entries)
    write_manifest(root, manifest)
    return manifest


def expand_dataset(src_root: str, out_root: str, seed: int) -> Manifest:
    """Write the original plus one variant per augmentation method for
    every source image: 9 output files per input, split tags preserved."""
    src = read_manifest(src_root)
    entries = []
    for si, (stem, split) in enumerate(src.entries):
        scene = load_scene(src_root, stem)
        save_scene(out_root, stem, scene)
        entries.append((stem, split))
        for mi, method in enumerate(METHODS):
            chain = make_chain([method], int(np.random.SeedSequence([seed, si, mi]).generate_state(1)[0]),
                               scene.image.shape[:2])
            variant = augment(scene, chain)
            vstem = f"{stem}_{method}"
            save_scene(out_root, vstem, variant)
            entries.append((vstem, split))
    manifest = Manifest(entries)
    write_manifest(out_root, manifest)
    return manifest


def load_split(root: str, split: str) -> list[Scene]:
    manifest = read_manifest(root)
    return [load_scene(root, stem) for stem in manifest.stems(split)]
