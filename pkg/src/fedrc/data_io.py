"""Image and manifest I/O plus the synthetic multi-city dataset generator.

Images are binary PPM (P6) and label masks binary PGM (P5), both with
maxval 255; the formats are trivial to parse dependency-free and round-trip
bit-exactly. Shard manifests are UTF-8 CSV files with the header
``image_path,mask_path,vehicle_id,edge_id``; paths are stored relative to the
manifest file and resolved against it on load.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .gauss_stats import ImageTensor

__all__ = [
    "DataError",
    "ManifestRow",
    "Manifest",
    "CityProfile",
    "DEFAULT_PALETTE",
    "build_city_profile",
    "read_image_ppm",
    "write_image_ppm",
    "read_mask_pgm",
    "write_mask_pgm",
    "synthesize_city",
    "split_manifest",
    "load_manifest",
    "save_manifest",
]

MANIFEST_HEADER = ["image_path", "mask_path", "vehicle_id", "edge_id"]

_WHITESPACE = b" \t\r\n"


class DataError(Exception):
    """Unreadable or inconsistent dataset files."""


# ---------------------------------------------------------------------------
# netpbm parsing
# ---------------------------------------------------------------------------


def _next_token(buf: bytes, pos: int, path: Path) -> tuple[bytes, int]:
    while pos < len(buf):
        c = buf[pos : pos + 1]
        if c in (b" ", b"\t", b"\r", b"\n"):
            pos += 1
        elif c == b"#":
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\r", b"\n"):
                pos += 1
        else:
            break
    start = pos
    while pos < len(buf) and buf[pos : pos + 1] not in (b" ", b"\t", b"\r", b"\n"):
        pos += 1
    if start == pos:
        raise DataError(f"truncated header in {path}")
    return buf[start:pos], pos


def _parse_netpbm(path: Path, binary_magic: bytes, ascii_magic: bytes, kind: str) -> tuple[int, int, bytes]:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if buf[:2] == ascii_magic:
        raise DataError(f"unsupported {kind} variant (ASCII {ascii_magic.decode()}) in {path}")
    if buf[:2] != binary_magic:
        raise DataError(f"not a binary {kind} ({binary_magic.decode()}) file: {path}")
    pos = 2
    fields = []
    for _ in range(3):
        token, pos = _next_token(buf, pos, path)
        try:
            fields.append(int(token))
        except ValueError as exc:
            raise DataError(f"malformed header field {token!r} in {path}") from exc
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise DataError(f"degenerate image size {width}x{height} in {path}")
    if maxval != 255:
        raise DataError(f"maxval must be 255, got {maxval} in {path}")
    if pos >= len(buf) or buf[pos : pos + 1] not in (b" ", b"\t", b"\r", b"\n"):
        raise DataError(f"missing whitespace before pixel payload in {path}")
    return width, height, buf[pos + 1 :]


def read_image_ppm(path: Path | str) -> ImageTensor:
    """Read a binary PPM (P6, maxval 255) into an image tensor."""
    path = Path(path)
    width, height, payload = _parse_netpbm(path, b"P6", b"P3", "PPM")
    need = 3 * width * height
    if len(payload) < need:
        raise DataError(f"truncated pixel payload in {path}: {len(payload)} < {need} bytes")
    pixels = np.frombuffer(payload[:need], dtype=np.uint8).reshape(height, width, 3).copy()
    return ImageTensor(pixels=pixels)


def write_image_ppm(path: Path | str, img: ImageTensor) -> None:
    """Write a binary PPM; round-trips bit-exactly with :func:`read_image_ppm`."""
    path = Path(path)
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    path.write_bytes(header + img.pixels.tobytes())


def read_mask_pgm(path: Path | str, num_classes: int) -> np.ndarray:
    """Read a binary PGM (P5, maxval 255) label grid; labels must be < num_classes."""
    path = Path(path)
    width, height, payload = _parse_netpbm(path, b"P5", b"P2", "PGM")
    need = width * height
    if len(payload) < need:
        raise DataError(f"truncated pixel payload in {path}: {len(payload)} < {need} bytes")
    mask = np.frombuffer(payload[:need], dtype=np.uint8).reshape(height, width).copy()
    if mask.max() >= num_classes:
        raise DataError(f"label out of range in {path}: {int(mask.max())} >= {num_classes}")
    return mask


def write_mask_pgm(path: Path | str, mask: np.ndarray) -> None:
    """Write a label grid as binary PGM."""
    mask = np.asarray(mask)
    if mask.ndim != 2 or mask.dtype != np.uint8:
        raise ValueError("mask must be a 2-D uint8 array")
    path = Path(path)
    header = f"P5\n{mask.shape[1]} {mask.shape[0]}\n255\n".encode("ascii")
    path.write_bytes(header + mask.tobytes())


# ---------------------------------------------------------------------------
# synthetic cities
# ---------------------------------------------------------------------------

# Base class colors (RGB means); well separated so a small pixel classifier
# can learn the task quickly.
DEFAULT_PALETTE: tuple[tuple[float, float, float], ...] = (
    (90.0, 90.0, 95.0),    # road
    (60.0, 140.0, 70.0),   # vegetation
    (150.0, 180.0, 220.0), # sky
    (170.0, 120.0, 90.0),  # building
    (200.0, 60.0, 60.0),   # vehicle
    (230.0, 220.0, 120.0), # marking
    (40.0, 40.0, 40.0),    # shadow
    (120.0, 70.0, 160.0),  # sign
)


@dataclass(frozen=True)
class CityProfile:
    """Per-class color model plus a city-wide additive shift.

    ``class_means`` and ``class_stds`` give the per-channel Gaussian palette
    for each class; ``shift`` is added to every channel of every class and
    models one city's domain shift; ``mixture`` gives per-class area
    proportions used when laying out regions.
    """

    class_means: tuple[tuple[float, float, float], ...]
    class_stds: tuple[tuple[float, float, float], ...]
    shift: float
    mixture: tuple[float, ...]

    def __post_init__(self) -> None:
        k = len(self.class_means)
        if k < 1:
            raise ValueError("profile needs at least one class")
        if len(self.class_stds) != k or len(self.mixture) != k:
            raise ValueError("palette, stds and mixture must have equal length")
        if any(s < 0 for triple in self.class_stds for s in triple):
            raise ValueError("stds must be >= 0")
        if abs(sum(self.mixture) - 1.0) > 1e-9 or any(p < 0 for p in self.mixture):
            raise ValueError("mixture must be non-negative and sum to 1")

    @property
    def num_classes(self) -> int:
        return len(self.class_means)


def build_city_profile(
    num_classes: int,
    shift: float = 0.0,
    noise_std: float = 12.0,
    mixture: Sequence[float] | None = None,
) -> CityProfile:
    """Profile over the first ``num_classes`` palette entries.

    The default mixture weights classes by decreasing area share
    (class 0 largest), mimicking road-scene layouts.
    """
    if not 1 <= num_classes <= len(DEFAULT_PALETTE):
        raise ValueError(f"num_classes must be in [1, {len(DEFAULT_PALETTE)}]")
    if mixture is None:
        raw = [float(num_classes - i) for i in range(num_classes)]
        total = sum(raw)
        mixture = [w / total for w in raw]
    return CityProfile(
        class_means=DEFAULT_PALETTE[:num_classes],
        class_stds=tuple((noise_std, noise_std, noise_std) for _ in range(num_classes)),
        shift=float(shift),
        mixture=tuple(float(p) for p in mixture),
    )


def synthesize_city(
    profile: CityProfile,
    images: int,
    size: tuple[int, int],
    seed,
) -> tuple[list[ImageTensor], list[np.ndarray]]:
    """Generate ``images`` random scenes and their ground-truth masks.

    Each scene is a background class overlaid with a few random rectangles;
    classes are drawn from the profile mixture and pixels from the shifted
    per-class Gaussian palette, rounded and clamped to [0, 255]. Fully
    deterministic for a given (profile, seed).
    """
    if images < 1:
        raise ValueError("images must be >= 1")
    width, height = size
    if width < 1 or height < 1:
        raise ValueError(f"degenerate image size {width}x{height}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    means = np.asarray(profile.class_means, dtype=np.float64) + profile.shift
    stds = np.asarray(profile.class_stds, dtype=np.float64)
    mixture = np.asarray(profile.mixture, dtype=np.float64)
    classes = profile.num_classes

    out_images: list[ImageTensor] = []
    out_masks: list[np.ndarray] = []
    for _ in range(images):
        mask = np.full((height, width), rng.choice(classes, p=mixture), dtype=np.uint8)
        for _ in range(int(rng.integers(2, 6))):
            cls = int(rng.choice(classes, p=mixture))
            rect_w = int(rng.integers(max(1, width // 4), max(2, width // 2 + 1)))
            rect_h = int(rng.integers(max(1, height // 4), max(2, height // 2 + 1)))
            x0 = int(rng.integers(0, max(1, width - rect_w + 1)))
            y0 = int(rng.integers(0, max(1, height - rect_h + 1)))
            mask[y0 : y0 + rect_h, x0 : x0 + rect_w] = cls
        noise = rng.standard_normal((height, width, 3))
        values = means[mask] + noise * stds[mask]
        pixels = np.clip(np.rint(values), 0.0, 255.0).astype(np.uint8)
        out_images.append(ImageTensor(pixels=pixels))
        out_masks.append(mask)
    return out_images, out_masks


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestRow:
    image_path: str
    mask_path: str
    vehicle_id: str
    edge_id: str


@dataclass(frozen=True)
class Manifest:
    """Ordered (image, mask, vehicle, edge) rows describing shard assignment."""

    rows: tuple[ManifestRow, ...]

    def shards(self) -> dict[str, list[tuple[str, str]]]:
        """Vehicle id -> ordered (image_path, mask_path) pairs."""
        out: dict[str, list[tuple[str, str]]] = {}
        for row in self.rows:
            out.setdefault(row.vehicle_id, []).append((row.image_path, row.mask_path))
        return out

    def edges(self) -> dict[str, list[str]]:
        """Edge id -> vehicle ids in first-appearance order."""
        out: dict[str, list[str]] = {}
        for row in self.rows:
            vehicles = out.setdefault(row.edge_id, [])
            if row.vehicle_id not in vehicles:
                vehicles.append(row.vehicle_id)
        return out


def split_manifest(
    pairs_by_edge: Mapping[str, Sequence[tuple[str, str]]],
    vehicles_per_edge: Mapping[str, Sequence[str]],
    sizes: Mapping[str, int] | None = None,
) -> Manifest:
    """Partition each edge's image/mask pairs across that edge's vehicles.

    With ``sizes=None`` the split is as equal as possible (earlier vehicles
    absorb any remainder). With explicit per-vehicle sizes the chunks must
    consume the edge pool exactly, so shards always form a partition of the
    input. Assignment is contiguous and deterministic.
    """
    rows: list[ManifestRow] = []
    for edge_id, vehicle_ids in vehicles_per_edge.items():
        if edge_id not in pairs_by_edge:
            raise DataError(f"no image pool for edge {edge_id}")
        pool = list(pairs_by_edge[edge_id])
        if not vehicle_ids:
            raise DataError(f"edge {edge_id} has no vehicles")
        if sizes is None:
            base, extra = divmod(len(pool), len(vehicle_ids))
            counts = [base + (1 if i < extra else 0) for i in range(len(vehicle_ids))]
        else:
            try:
                counts = [int(sizes[v]) for v in vehicle_ids]
            except KeyError as exc:
                raise DataError(f"missing split size for vehicle {exc.args[0]}") from exc
            if sum(counts) > len(pool):
                raise DataError(
                    f"insufficient images for edge {edge_id}: "
                    f"need {sum(counts)}, have {len(pool)}"
                )
            if sum(counts) != len(pool):
                raise DataError(
                    f"split sizes for edge {edge_id} must consume the pool exactly "
                    f"({sum(counts)} != {len(pool)})"
                )
        if any(c < 1 for c in counts):
            raise DataError(f"insufficient images for edge {edge_id}: empty shard")
        offset = 0
        for vehicle_id, count in zip(vehicle_ids, counts):
            for image_path, mask_path in pool[offset : offset + count]:
                rows.append(ManifestRow(image_path, mask_path, vehicle_id, edge_id))
            offset += count
    return Manifest(rows=tuple(rows))


def save_manifest(manifest: Manifest, path: Path | str) -> None:
    """Write the manifest CSV; paths are stored relative to the CSV location."""
    path = Path(path)
    base = path.resolve().parent
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for row in manifest.rows:
            rel_img = _relativize(row.image_path, base)
            rel_mask = _relativize(row.mask_path, base)
            writer.writerow([rel_img, rel_mask, row.vehicle_id, row.edge_id])


def _relativize(p: str, base: Path) -> str:
    path = Path(p)
    if not path.is_absolute():
        return path.as_posix()
    try:
        return path.resolve().relative_to(base).as_posix()
    except ValueError:
        return path.as_posix()


def load_manifest(path: Path | str, check_paths: bool = True) -> Manifest:
    """Read a manifest CSV, resolving paths against the CSV's directory."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    base = path.resolve().parent
    rows: list[ManifestRow] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise DataError(f"bad manifest header in {path}: {header}")
        for record in reader:
            if len(record) != 4:
                raise DataError(f"malformed manifest row in {path}: {record}")
            image_path, mask_path, vehicle_id, edge_id = record
            img = base / image_path
            mask = base / mask_path
            if check_paths and (not img.exists() or not mask.exists()):
                raise DataError(f"manifest entry missing on disk: {img} / {mask}")
            rows.append(ManifestRow(str(img), str(mask), vehicle_id, edge_id))
    if not rows:
        raise DataError(f"manifest is empty: {path}")
    return Manifest(rows=tuple(rows))
