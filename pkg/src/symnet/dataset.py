"""On-disk datasets: ``images/<id>.ppm`` plus a consensus JSON-lines file."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .exceptions import ParseError
from .labels import dump_consensus, group_by_image, parse_consensus


@dataclass
class Sample:
    image_id: str
    image: np.ndarray
    gts: list = field(default_factory=list)

    @property
    def size(self):
        """(width, height)"""
        return self.image.shape[1], self.image.shape[0]


def find_image(images_dir, image_id):
    for ext in (".ppm", ".pgm"):
        p = Path(images_dir) / f"{image_id}{ext}"
        if p.exists():
            return p
    raise FileNotFoundError(f"no image for {image_id!r} in {images_dir}")


def list_images(images_dir):
    return sorted(p.stem for p in Path(images_dir).iterdir() if p.suffix in (".ppm", ".pgm"))


def load_dataset(images_dir, consensus_path, ids=None):
    """Load images and their consensus symmetries, sorted by image id.

    Images without any consensus symmetry are still returned (with an empty
    list) when listed in ``ids``.
    """
    with open(consensus_path, encoding="utf-8") as fh:
        gts = group_by_image(parse_consensus(fh, source=str(consensus_path)))
    if ids is None:
        ids = sorted(gts)
    samples = []
    for image_id in sorted(ids):
        path = find_image(images_dir, image_id)
        image = io.read_image(path)
        if image.ndim == 2:
            image = np.repeat(image[..., None], 3, axis=2)
        samples.append(Sample(image_id, image, gts.get(image_id, [])))
    return samples


def save_dataset(out_dir, samples, consensus_name="consensus.jsonl"):
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    for s in samples:
        io.write_image(out_dir / "images" / f"{s.image_id}.ppm", s.image)
    text = dump_consensus(g for s in sorted(samples, key=lambda s: s.image_id) for g in s.gts)
    (out_dir / consensus_name).write_text(text, encoding="utf-8")
    return out_dir


def read_ids(path):
    ids = [line.strip() for line in Path(path).read_text().splitlines() if line.strip()]
    if not ids:
        raise ParseError("empty id list", source=str(path))
    return ids
