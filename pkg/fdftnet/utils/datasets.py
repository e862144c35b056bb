"""Labeled image splits, the on-disk layout and the synthetic fixture.

On disk a dataset is ``<root>/<role>/<real|fake>/*`` with roles train,
validation, test and finetune. The synthetic fixture draws "real" images as
smooth upsampled random fields and "fake" images as fresh fields plus a
(-1)^(x+y) checkerboard of configurable amplitude.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from ..config import config
from ..errors import DataError, EmptyClassDirectoryError, EmptySplitError, InvalidLabelError
from ..models.schemas import SynthSpec
from .audit import audit_logger
from .imaging import decode_image, encode_ppm, resize_bilinear

log = logging.getLogger(__name__)

SPLIT_RATIOS = {"train": 60, "validation": 18, "test": 20, "finetune": 2}
LABEL_NAMES = {label: name for name, label in config.CLASS_DIRS.items()}


@dataclass
class DatasetSplit:
    role: str
    images: np.ndarray  # [n,3,R,R] float32
    labels: np.ndarray  # [n] int64 in {0,1}
    ids: List[str]
    resolution: int
    skipped: int = 0
    sources: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.size and not np.isin(self.labels, (0, 1)).all():
            raise InvalidLabelError(f"{self.role}: labels must be 0 (real) or 1 (fake)")
        expected = (len(self.labels), 3, self.resolution, self.resolution)
        if self.images.shape != expected:
            raise DataError(f"{self.role}: images have shape {self.images.shape}, expected {expected}")
        if len(self.ids) != len(self.labels):
            raise DataError(f"{self.role}: {len(self.ids)} ids for {len(self.labels)} images")

    def __len__(self) -> int:
        return len(self.labels)

    def class_counts(self) -> Dict[str, int]:
        return {LABEL_NAMES[c]: int((self.labels == c).sum()) for c in (0, 1)}

    def subset(self, indices: Sequence[int]) -> "DatasetSplit":
        indices = np.asarray(indices, dtype=np.int64)
        return DatasetSplit(
            role=self.role,
            images=self.images[indices],
            labels=self.labels[indices],
            ids=[self.ids[i] for i in indices],
            resolution=self.resolution,
        )


def to_model_input(images: np.ndarray, pixel_range: str = "unit") -> np.ndarray:
    """Map [0,1] pixels to the configured input range ("unit" keeps them, "signed" maps to [-1,1])."""
    if pixel_range == "unit":
        return images
    if pixel_range == "signed":
        return (images * 2.0 - 1.0).astype(images.dtype)
    raise ValueError(f"unknown pixel_range {pixel_range!r}")


def require_split(splits: Mapping[str, DatasetSplit], role: str) -> DatasetSplit:
    split = splits.get(role)
    if split is None or len(split) == 0:
        raise EmptySplitError(f"the {role!r} split is missing or empty")
    return split


# *** on-disk datasets ***

def _decode_file(path: Path, resolution: int) -> np.ndarray:
    image = decode_image(path.read_bytes())
    if image.shape[1:] != (resolution, resolution):
        image = resize_bilinear(image, resolution, resolution)
    return image.astype(np.float32)


def _load_role(root: Path, role: str, resolution: int, workers: int) -> DatasetSplit:
    files: List[Tuple[Path, int]] = []
    for class_name, label in config.CLASS_DIRS.items():
        class_dir = root / role / class_name
        # an absent class directory makes a single-class split; a present but empty one is an error
        if not class_dir.is_dir():
            log.warning("%s has no %s/ directory", root / role, class_name)
            continue
        entries = sorted(p for p in class_dir.iterdir() if p.is_file())
        if not entries:
            raise EmptyClassDirectoryError(f"no images in {class_dir}")
        files.extend((p, label) for p in entries)
    if not files:
        raise EmptySplitError(f"{root / role} has neither a real/ nor a fake/ directory")

    def attempt(item: Tuple[Path, int]) -> Optional[np.ndarray]:
        try:
            return _decode_file(item[0], resolution)
        except (DataError, OSError) as e:
            log.warning("skipping unreadable image %s: %s", item[0], e)
            return None

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        decoded = list(pool.map(attempt, files))

    kept = [(img, path, label) for img, (path, label) in zip(decoded, files) if img is not None]
    skipped = len(files) - len(kept)
    images = np.stack([k[0] for k in kept]) if kept else np.zeros((0, 3, resolution, resolution), np.float32)
    split = DatasetSplit(
        role=role,
        images=images,
        labels=np.array([k[2] for k in kept], dtype=np.int64),
        ids=[f"{role}/{k[1].parent.name}/{k[1].name}" for k in kept],
        resolution=resolution,
        skipped=skipped,
        sources=[str(k[1]) for k in kept],
    )
    audit_logger.log_dataset_event(str(root), role, len(split), skipped, split.class_counts())
    if skipped:
        log.warning("%s: skipped %d unreadable file(s)", role, skipped)
    return split


def load_dataset(
    root: Union[str, Path],
    roles: Sequence[str] = config.DATASET_ROLES,
    resolution: int = 64,
    workers: int = 1,
) -> Dict[str, DatasetSplit]:
    """Load every role directory present under ``root``; absent roles are left out."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    splits = {}
    for role in roles:
        if (root / role).is_dir():
            splits[role] = _load_role(root, role, resolution, workers)
    if not splits:
        raise EmptySplitError(f"no split directories ({', '.join(roles)}) under {root}")
    return splits


def write_dataset(splits: Mapping[str, DatasetSplit], root: Union[str, Path]) -> Path:
    """Materialize splits as binary PPM files in the ``<root>/<role>/<real|fake>/`` layout."""
    root = Path(root)
    for role, split in splits.items():
        for name in config.CLASS_DIRS:
            (root / role / name).mkdir(parents=True, exist_ok=True)
        for image, label, item_id in zip(split.images, split.labels, split.ids):
            target = root / role / LABEL_NAMES[int(label)] / f"{item_id}.ppm"
            target.write_bytes(encode_ppm(image))
    log.info("wrote %d split(s) under %s", len(splits), root)
    return root


# *** synthetic fixture ***

def split_counts(n_per_class: int) -> Dict[str, int]:
    """Per-class split sizes in 60:18:20:2 proportion, summing to ``n_per_class``.

    Rounding leftovers go to the largest fractional parts; when there are at
    least as many images as roles, every role gets at least one.
    """
    total = sum(SPLIT_RATIOS.values())
    exact = {role: n_per_class * r / total for role, r in SPLIT_RATIOS.items()}
    counts = {role: int(np.floor(v)) for role, v in exact.items()}
    leftover = n_per_class - sum(counts.values())
    for role in sorted(exact, key=lambda r: exact[r] - counts[r], reverse=True)[:leftover]:
        counts[role] += 1
    if n_per_class >= len(SPLIT_RATIOS):
        for role in counts:
            if counts[role] == 0:
                counts[role] = 1
                counts["train"] -= 1
    return counts


def checkerboard(resolution: int) -> np.ndarray:
    yy, xx = np.indices((resolution, resolution))
    return np.where((yy + xx) % 2 == 0, 1.0, -1.0)


def _smooth_fields(rng: np.random.Generator, n: int, spec: SynthSpec) -> np.ndarray:
    coarse = rng.uniform(0.2, 0.8, size=(n, 3, spec.field_size, spec.field_size))
    return resize_bilinear(coarse, spec.resolution, spec.resolution)


def synth_dataset(spec: SynthSpec) -> Dict[str, DatasetSplit]:
    """Seeded real/fake fixture split by role; roles are disjoint by construction."""
    rng = np.random.default_rng(spec.seed)
    counts = split_counts(spec.n_per_class)
    real = _smooth_fields(rng, spec.n_per_class, spec)
    fake = np.clip(_smooth_fields(rng, spec.n_per_class, spec) + spec.amplitude * checkerboard(spec.resolution), 0, 1)

    splits: Dict[str, DatasetSplit] = {}
    start = 0
    for role in config.DATASET_ROLES:
        n = counts[role]
        stop = start + n
        images = np.concatenate([real[start:stop], fake[start:stop]]).astype(np.float32)
        labels = np.concatenate([np.zeros(n, np.int64), np.ones(n, np.int64)])
        ids = [f"synth-{spec.seed}-{i}" for i in range(start, stop)]
        ids += [f"synth-{spec.seed}-{spec.n_per_class + i}" for i in range(start, stop)]
        splits[role] = DatasetSplit(role, images, labels, ids, spec.resolution)
        start = stop
    log.info("synthesized %s per class (seed=%d amplitude=%g)", counts, spec.seed, spec.amplitude)
    return splits
