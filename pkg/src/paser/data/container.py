"""PASERDS dataset files.

Layout: an ASCII header line ``PASERDS v1 <n> <C> <H> <W> <K>`` followed, per sample, by the
image as little-endian float32 (C*H*W values) and the labels as unsigned bytes (H*W values).
Per-sample tags live in a ``<stem>.meta.jsonl`` sidecar next to the data file.
"""

import json
import logging
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .sample import SegSample

logger = logging.getLogger(__name__)

MAGIC = "PASERDS"
VERSION = "v1"


def meta_path(path: Path) -> Path:
    return path.with_name(f"{path.stem}.meta.jsonl")


def write_dataset(path: str | Path, samples: list[SegSample], num_classes: int) -> None:
    path = Path(path)
    if samples:
        c, h, w = samples[0].image.shape
    else:
        c = h = w = 0
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(f"{MAGIC} {VERSION} {len(samples)} {c} {h} {w} {num_classes}\n".encode("ascii"))
        for sample in samples:
            if sample.image.shape != (c, h, w):
                raise ValueError(f"Sample shape {sample.image.shape} differs from {(c, h, w)}")
            if sample.labels.size and int(sample.labels.max()) >= num_classes:
                raise ValueError(
                    f"Label {int(sample.labels.max())} out of range for K={num_classes}"
                )
            f.write(sample.image.astype("<f4").tobytes())
            f.write(sample.labels.astype(np.uint8).tobytes())
    with open(meta_path(path), "w", encoding="utf-8", newline="\n") as f:
        for sample in samples:
            f.write(json.dumps(sample.meta, sort_keys=True) + "\n")
    logger.debug(f"Wrote {len(samples)} samples to {path}")


def read_dataset(path: str | Path) -> tuple[list[SegSample], int]:
    """Load samples and the class count K from a PASERDS file."""
    path = Path(path)
    raw = path.read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise FormatError(f"{path} has no PASERDS header", path=str(path))
    fields = raw[:newline].decode("ascii", errors="replace").split()
    if len(fields) != 7 or fields[0] != MAGIC or fields[1] != VERSION:
        raise FormatError(f"{path} has a malformed PASERDS header", path=str(path))
    try:
        n, c, h, w, k = (int(v) for v in fields[2:])
    except ValueError as e:
        raise FormatError(f"{path} has non-integer header fields", path=str(path)) from e

    image_bytes = 4 * c * h * w
    label_bytes = h * w
    offset = newline + 1
    if len(raw) - offset != n * (image_bytes + label_bytes):
        raise FormatError(
            f"{path} payload has {len(raw) - offset} bytes, expected "
            f"{n * (image_bytes + label_bytes)}",
            path=str(path),
        )

    metas: list[dict[str, str]] = [{} for _ in range(n)]
    sidecar = meta_path(path)
    if sidecar.exists():
        lines = sidecar.read_text(encoding="utf-8").splitlines()
        if len(lines) == n:
            metas = [json.loads(line) for line in lines]
        else:
            logger.warning(f"Ignoring {sidecar}: {len(lines)} entries for {n} samples")

    samples = []
    for i in range(n):
        image = np.frombuffer(raw, dtype="<f4", count=c * h * w, offset=offset)
        offset += image_bytes
        labels = np.frombuffer(raw, dtype=np.uint8, count=h * w, offset=offset)
        offset += label_bytes
        samples.append(
            SegSample(
                image=image.reshape(c, h, w).astype(np.float32),
                labels=labels.reshape(h, w).copy(),
                meta=metas[i],
            )
        )
    return samples, k
