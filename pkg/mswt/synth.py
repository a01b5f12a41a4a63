"""Deterministic synthetic real/fake face corpus.

Real frames are multi-octave value noise with an elliptical "face" of finer
texture. Fake frames blur an elliptical region inside the face, removing its
high-frequency detail, and blend it back with a narrow feather. Every random
stream is derived from ``(seed, split, video, purpose, frame)`` so output does
not depend on generation order.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .config import dump_config, from_mapping, parse_config_text
from .errors import ConfigError, DataError, FormatError
from .ppm import read_ppm, write_ppm

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
MANIFEST_HEADER = ("path", "label", "video_id", "frame_idx")
CORPUS_CONFIG = "corpus.cfg"
FEATHER_PX = 2.0
SENSOR_NOISE = 0.01
_PURPOSES = {"scene": 0, "frame": 1, "region": 2}


@dataclass(frozen=True, slots=True)
class Ellipse:
    """Axis-aligned ellipse in pixel coordinates (row centre, column centre, row and column radii)."""

    cy: float
    cx: float
    ry: float
    rx: float

    def radius(self, height: int, width: int) -> np.ndarray:
        """Normalised radius at every pixel centre; ``< 1`` inside the ellipse."""
        rows, cols = np.mgrid[0:height, 0:width].astype(np.float64)
        return np.sqrt(((rows - self.cy) / self.ry) ** 2 + ((cols - self.cx) / self.rx) ** 2)

    def shifted(self, dy: float, dx: float) -> Ellipse:
        return Ellipse(self.cy + dy, self.cx + dx, self.ry, self.rx)


@dataclass(slots=True)
class Sample:
    """One frame: ``image`` is ``(3, H, W)`` in ``[0, 1]``, ``mask`` is boolean ``(H, W)``."""

    image: np.ndarray
    label: int
    mask: np.ndarray
    video_id: str = ""
    frame_idx: int = 0
    face: Ellipse | None = None

    def __post_init__(self) -> None:
        if self.label not in (0, 1):
            msg = f"Label must be 0 (real) or 1 (fake), got {self.label}."
            raise DataError(msg)
        if self.image.shape[1:] != self.mask.shape:
            msg = f"Mask shape {self.mask.shape} does not match image {self.image.shape}."
            raise DataError(msg)
        if (self.label == 0) == bool(self.mask.any()):
            msg = "Real samples carry an empty mask and fake samples a non-empty one."
            raise DataError(msg)


@dataclass(frozen=True, slots=True)
class Scene:
    """Per-video base content shared (with jitter) by all its frames."""

    background: np.ndarray
    face_texture: np.ndarray
    face: Ellipse


@dataclass(slots=True)
class CorpusSpec:
    """Parameters of a generated corpus.

    Parameters
    ----------
    seed : int
        Root of every random stream.
    train, val, test : int
        Frame counts per split; even, at least 2, half of them fake.
    image_size : int
        Side of the square frames.
    strength : float
        Gaussian blur sigma of the manipulation, in ``[0.5, 3.0]``.
    region_min, region_max : float
        Manipulated area as a fraction of the face ellipse.
    octaves : int
        Value-noise octaves of the background texture.
    frames_per_video : int
        Frames grouped under one video id.
    """

    seed: int = 7
    train: int = 2000
    val: int = 200
    test: int = 500
    image_size: int = 64
    strength: float = 1.5
    region_min: float = 0.1
    region_max: float = 0.4
    octaves: int = 3
    frames_per_video: int = 10

    def __post_init__(self) -> None:
        for split in SPLITS:
            count = getattr(self, split)
            if count < 2 or count % 2:
                msg = f"Split {split!r} needs an even count >= 2, got {count}."
                raise ConfigError(msg)
        if not 0.5 <= self.strength <= 3.0:
            msg = f"Manipulation strength must lie in [0.5, 3.0], got {self.strength}."
            raise ConfigError(msg)
        if not 0.0 < self.region_min <= self.region_max < 1.0:
            msg = f"Region scale range ({self.region_min}, {self.region_max}) must satisfy 0 < min <= max < 1."
            raise ConfigError(msg)
        if self.image_size < 16 or self.octaves < 1 or self.frames_per_video < 1:
            msg = "image_size must be >= 16, octaves and frames_per_video >= 1."
            raise ConfigError(msg)

    def count(self, split: str) -> int:
        if split not in SPLITS:
            msg = f"Unknown split {split!r}; expected one of {SPLITS}."
            raise ConfigError(msg)
        return getattr(self, split)


@dataclass(frozen=True, slots=True)
class ManifestEntry:
    path: str
    label: int
    video_id: str
    frame_idx: int


@dataclass(slots=True)
class Corpus:
    """A corpus on disk: its spec, root directory and per-split manifests."""

    root: Path
    spec: CorpusSpec
    manifests: dict[str, list[ManifestEntry]] = field(default_factory=dict)

    def entries(self, split: str) -> list[ManifestEntry]:
        if split not in self.manifests:
            msg = f"Corpus at {self.root} has no split {split!r}."
            raise DataError(msg)
        return self.manifests[split]

    def load_split(self, split: str) -> tuple[np.ndarray, np.ndarray, list[str]]:
        """Images ``(N, 3, H, W)``, labels ``(N,)`` and video ids of a split, in manifest order."""
        entries = self.entries(split)
        if not entries:
            msg = f"Split {split!r} of {self.root} is empty."
            raise DataError(msg)
        images = np.stack([read_ppm(self.root / entry.path) for entry in entries])
        labels = np.array([entry.label for entry in entries], dtype=np.int64)
        return images, labels, [entry.video_id for entry in entries]

    def load_pairs(self, split: str, limit: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Real frames and the fake frames derived from them, matched by video stem and frame index."""
        fakes = {
            (entry.video_id.removesuffix("_fake"), entry.frame_idx): entry
            for entry in self.entries(split)
            if entry.label == 1
        }
        pairs = []
        for entry in self.entries(split):
            key = (entry.video_id.removesuffix("_real"), entry.frame_idx)
            if entry.label == 0 and key in fakes:
                pairs.append((entry, fakes[key]))
        pairs = pairs[:limit] if limit is not None else pairs
        if not pairs:
            msg = f"Split {split!r} of {self.root} has no real/fake pairs."
            raise DataError(msg)
        real = np.stack([read_ppm(self.root / entry.path) for entry, _ in pairs])
        fake = np.stack([read_ppm(self.root / entry.path) for _, entry in pairs])
        return real, fake


def stream(seed: int, split: str, video: int, purpose: str, frame: int = 0) -> np.random.Generator:
    """Independent generator for one ``(split, video, purpose, frame)`` cell."""
    return np.random.default_rng(seed_sequence(seed, split, video, purpose, frame))


def seed_sequence(seed: int, split: str, video: int, purpose: str, frame: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(SPLITS.index(split), video, _PURPOSES[purpose], frame))


def value_noise(rng: np.random.Generator, size: int, octaves: int, base_cells: int = 4) -> np.ndarray:
    """Sum of bilinearly upsampled random lattices, halving amplitude per octave; values in ``[0, 1]``."""
    total = np.zeros((size, size))
    norm = 0.0
    for octave in range(octaves):
        cells = min(size, base_cells * 2**octave)
        lattice = rng.random((cells, cells))
        layer = ndimage.zoom(lattice, size / cells, order=1, mode="nearest")
        amplitude = 0.5**octave
        total += amplitude * layer[:size, :size]
        norm += amplitude
    return total / norm


def draw_scene(rng: np.random.Generator, size: int, octaves: int = 3) -> Scene:
    """Background, face texture and face ellipse of one video."""
    luminance = value_noise(rng, size, octaves)
    tint = rng.uniform(0.3, 0.9, size=3)
    background = np.stack(
        [tint[c] * (0.5 + 0.5 * luminance) + 0.1 * (value_noise(rng, size, 2) - 0.5) for c in range(3)],
    )
    skin = rng.uniform(0.45, 0.8) * np.array([1.0, 0.82, 0.7])
    coarse = value_noise(rng, size, 2, base_cells=8)
    fine = value_noise(rng, size, 1, base_cells=max(8, size // 2))
    face_texture = np.stack([skin[c] * (0.8 + 0.25 * coarse) + 0.18 * (fine - 0.5) for c in range(3)])
    face = Ellipse(
        cy=size / 2 + rng.uniform(-0.05, 0.05) * size,
        cx=size / 2 + rng.uniform(-0.05, 0.05) * size,
        ry=rng.uniform(0.3, 0.38) * size,
        rx=rng.uniform(0.24, 0.3) * size,
    )
    return Scene(background, face_texture, face)


def render_frame(scene: Scene, rng: np.random.Generator) -> tuple[np.ndarray, Ellipse]:
    """Jittered rendering of ``scene``: shifted content, brightness wobble and sensor noise."""
    size = scene.background.shape[-1]
    dy, dx = (int(offset) for offset in rng.integers(-2, 3, size=2))
    face = scene.face.shifted(dy, dx)
    background = np.roll(scene.background, (dy, dx), axis=(1, 2))
    texture = np.roll(scene.face_texture, (dy, dx), axis=(1, 2))
    inside = face.radius(size, size) < 1.0
    image = np.where(inside, texture, background) * rng.uniform(0.97, 1.03)
    image = image + SENSOR_NOISE * rng.standard_normal(image.shape)
    return np.clip(image, 0.0, 1.0), face


def gen_real(rng: np.random.Generator, size: int = 64, *, octaves: int = 3, scene: Scene | None = None) -> Sample:
    """A real frame; a fresh scene is drawn from ``rng`` unless one is given."""
    scene = scene if scene is not None else draw_scene(rng, size, octaves)
    image, face = render_frame(scene, rng)
    return Sample(image, 0, np.zeros(image.shape[1:], dtype=bool), face=face)


def draw_region(
    rng: np.random.Generator,
    face: Ellipse,
    scale_range: tuple[float, float] = (0.1, 0.4),
) -> Ellipse:
    """Manipulation ellipse inside ``face``, expressed relative to the face centre.

    Its area is a uniform fraction of the face area drawn from ``scale_range``.
    """
    fraction = rng.uniform(*scale_range)
    aspect = rng.uniform(0.75, 1.33)
    ry = face.ry * math.sqrt(fraction * aspect)
    rx = face.rx * math.sqrt(fraction / aspect)
    angle = rng.uniform(0.0, 2.0 * math.pi)
    reach = rng.uniform(0.0, 1.0)
    dy = reach * max(face.ry - ry, 0.0) * math.sin(angle)
    dx = reach * max(face.rx - rx, 0.0) * math.cos(angle)
    return Ellipse(dy, dx, min(ry, face.ry), min(rx, face.rx))


def gen_fake(
    real: Sample,
    rng: np.random.Generator,
    strength: float,
    *,
    region: Ellipse | None = None,
    scale_range: tuple[float, float] = (0.1, 0.4),
) -> Sample:
    """Blur and slightly shift the mean of an elliptical region of a real frame.

    Parameters
    ----------
    real : Sample
        Source frame; must be real and carry its face ellipse.
    rng : numpy.random.Generator
        Draws the region (when not given) and the mean shift.
    strength : float
        Gaussian blur sigma in pixels; ``0`` leaves the image unchanged.
    region : Ellipse, optional
        Region relative to the face centre, as returned by :func:`draw_region`.
    scale_range : tuple of float
        Area fraction range used when drawing a region.

    Returns
    -------
    Sample
        Label 1 and the mask of the manipulated pixels. Pixels outside the mask
        are bit-identical to ``real``.
    """
    if real.label != 0 or real.face is None:
        msg = "gen_fake needs a real sample with a face ellipse."
        raise DataError(msg)
    if strength < 0.0:
        msg = f"Manipulation strength must be non-negative, got {strength}."
        raise ConfigError(msg)
    local = region if region is not None else draw_region(rng, real.face, scale_range)
    area = local.shifted(real.face.cy, real.face.cx)
    height, width = real.image.shape[1:]
    radius = area.radius(height, width)
    alpha = np.clip((1.0 - radius) * min(area.ry, area.rx) / FEATHER_PX, 0.0, 1.0)
    mask = alpha > 0.0
    if not mask.any():
        # region collapsed below one pixel; keep the centre pixel
        row = int(np.clip(round(area.cy), 0, height - 1))
        col = int(np.clip(round(area.cx), 0, width - 1))
        mask[row, col] = True
        alpha[row, col] = 1.0

    shift = 0.01 * strength * rng.choice((-1.0, 1.0))
    manipulated = ndimage.gaussian_filter(real.image, sigma=(0.0, strength, strength), mode="reflect") + shift
    blended = np.clip(alpha * manipulated + (1.0 - alpha) * real.image, 0.0, 1.0)
    image = np.where(mask, blended, real.image)
    return Sample(image, 1, mask, real.video_id.replace("_real", "_fake"), real.frame_idx, real.face)


def hflip(sample: Sample) -> Sample:
    """Mirror image and mask left to right."""
    face = sample.face
    if face is not None:
        face = Ellipse(face.cy, sample.image.shape[-1] - 1 - face.cx, face.ry, face.rx)
    return dataclasses.replace(
        sample,
        image=np.ascontiguousarray(sample.image[:, :, ::-1]),
        mask=np.ascontiguousarray(sample.mask[:, ::-1]),
        face=face,
    )


def generate_split(spec: CorpusSpec, split: str) -> list[Sample]:
    """All frames of ``split`` in manifest order: each real video followed by its fake counterpart."""
    pairs = spec.count(split) // 2
    videos = math.ceil(pairs / spec.frames_per_video)
    samples: list[Sample] = []
    for video in range(videos):
        scene = draw_scene(stream(spec.seed, split, video, "scene"), spec.image_size, spec.octaves)
        region = draw_region(stream(spec.seed, split, video, "region"), scene.face, (spec.region_min, spec.region_max))
        frames = min(spec.frames_per_video, pairs - video * spec.frames_per_video)
        real_id = f"{split}_v{video:04d}_real"
        reals, fakes = [], []
        for frame in range(frames):
            rng = stream(spec.seed, split, video, "frame", frame)
            real = gen_real(rng, spec.image_size, scene=scene)
            real = dataclasses.replace(real, video_id=real_id, frame_idx=frame)
            reals.append(real)
            fakes.append(gen_fake(real, rng, spec.strength, region=region))
        samples.extend(reals)
        samples.extend(fakes)
    return samples


def _frame_path(split: str, sample: Sample) -> str:
    return f"{split}/{sample.video_id}_{sample.frame_idx:02d}.ppm"


def write_manifest(path: Path, entries: list[ManifestEntry]) -> None:
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for entry in entries:
            writer.writerow((entry.path, entry.label, entry.video_id, entry.frame_idx))


def read_manifest(path: Path) -> list[ManifestEntry]:
    """Parse a split manifest.

    Raises
    ------
    FormatError
        On a wrong header or a malformed row.
    """
    with path.open(encoding="utf-8", newline="") as handle:
        rows = list(csv.reader(handle))
    if not rows or tuple(rows[0]) != MANIFEST_HEADER:
        msg = f"Manifest {path} must start with header {','.join(MANIFEST_HEADER)}."
        raise FormatError(msg)
    entries = []
    for number, row in enumerate(rows[1:], start=2):
        if len(row) != len(MANIFEST_HEADER):
            msg = f"{path}:{number}: expected {len(MANIFEST_HEADER)} fields, got {len(row)}."
            raise FormatError(msg)
        try:
            entries.append(ManifestEntry(row[0], int(row[1]), row[2], int(row[3])))
        except ValueError as err:
            msg = f"{path}:{number}: malformed row {row!r}."
            raise FormatError(msg) from err
    return entries


def make_corpus(spec: CorpusSpec, out: str | Path) -> Corpus:
    """Generate every split and write images, manifests and ``corpus.cfg`` under ``out``.

    Raises
    ------
    DataError
        If a file cannot be written.
    """
    root = Path(out)
    corpus = Corpus(root, spec)
    try:
        root.mkdir(parents=True, exist_ok=True)
        (root / CORPUS_CONFIG).write_text(dump_config(spec), encoding="utf-8")
        for split in SPLITS:
            entries = []
            for sample in generate_split(spec, split):
                relative = _frame_path(split, sample)
                write_ppm(sample.image, root / relative)
                entries.append(ManifestEntry(relative, sample.label, sample.video_id, sample.frame_idx))
            write_manifest(root / f"{split}.csv", entries)
            corpus.manifests[split] = entries
            logger.info("%s: %d frames (%d fake)", split, len(entries), sum(entry.label for entry in entries))
    except OSError as err:
        msg = f"Could not write corpus to {root}: {err}"
        raise DataError(msg) from err
    return corpus


def load_corpus(root: str | Path) -> Corpus:
    """Open a corpus written by :func:`make_corpus`."""
    root = Path(root)
    config_path = root / CORPUS_CONFIG
    if not config_path.is_file():
        msg = f"No corpus at {root} (missing {CORPUS_CONFIG})."
        raise DataError(msg)
    spec = from_mapping(CorpusSpec, parse_config_text(config_path.read_text(encoding="utf-8")))
    corpus = Corpus(root, spec)
    for split in SPLITS:
        manifest = root / f"{split}.csv"
        if manifest.is_file():
            corpus.manifests[split] = read_manifest(manifest)
    return corpus


__all__ = [
    "CORPUS_CONFIG",
    "MANIFEST_HEADER",
    "SPLITS",
    "Corpus",
    "CorpusSpec",
    "Ellipse",
    "ManifestEntry",
    "Sample",
    "Scene",
    "draw_region",
    "draw_scene",
    "gen_fake",
    "gen_real",
    "generate_split",
    "hflip",
    "load_corpus",
    "make_corpus",
    "read_manifest",
    "render_frame",
    "seed_sequence",
    "stream",
    "value_noise",
]
