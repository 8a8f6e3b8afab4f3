"""Feature files, snippet labels, bag assembly and synthetic data.

File formats
------------
Feature file (UTF-8 text): first line ``N d``, then N lines of d
space-separated decimal floats, written with 17 significant digits.

Label file: one ``0``/``1`` token per frame, whitespace separated.

Dataset manifest (JSON)::

    {"format": "lego-fusion-manifest", "version": 1,
     "modalities": ["visual", "text"], "snippet_len": 16,
     "videos": [{"id": "v000", "split": "train",
                 "features": {"visual": "v000.visual.txt", "text": "v000.text.txt"},
                 "labels": "v000.labels.txt"}, ...]}

Relative paths are resolved against the manifest's directory. ``split`` is
optional (default ``"train"``).
"""

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from lego_fusion.errors import DataError, Inconsistent, ParseError
from lego_fusion.graph_build import FeatureSet

MANIFEST_FORMAT = "lego-fusion-manifest"
SNIPPET_LEN = 16


# -- feature and label files --------------------------------------------------


def save_features(features, path):
    f = features.features if isinstance(features, FeatureSet) else np.asarray(features, dtype=np.float64)
    n, d = f.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{n} {d}\n")
        for row in f:
            fh.write(" ".join(f"{v:.17g}" for v in row))
            fh.write("\n")


def _parse_float(token, lineno, path):
    try:
        v = float(token)
    except ValueError:
        raise ParseError(lineno, f"not a number: {token!r}", path) from None
    if not math.isfinite(v):
        raise ParseError(lineno, f"non-finite value {token!r}", path)
    return v


def load_features(path, modality_id=None):
    """Read a feature file into a :class:`FeatureSet`."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read feature file {path}: {exc}") from exc
    numbered = [(i + 1, ln.split()) for i, ln in enumerate(lines) if ln.strip()]
    if not numbered:
        raise ParseError(1, "empty file, expected header 'N d'", path)
    lineno, header = numbered[0]
    if len(header) != 2:
        raise ParseError(lineno, "header must be 'N d'", path)
    try:
        n, d = int(header[0]), int(header[1])
    except ValueError:
        raise ParseError(lineno, "header values must be integers", path) from None
    if n < 1 or d < 1:
        raise ParseError(lineno, "N and d must be positive", path)
    rows = numbered[1:]
    if len(rows) != n:
        last = rows[-1][0] if rows else lineno
        raise Inconsistent(n, len(rows), "rows", line=last)
    data = np.empty((n, d))
    for r, (ln, tokens) in enumerate(rows):
        if len(tokens) != d:
            raise Inconsistent(d, len(tokens), "columns", line=ln)
        data[r] = [_parse_float(t, ln, path) for t in tokens]
    if modality_id is None:
        modality_id = os.path.splitext(os.path.basename(path))[0]
    return FeatureSet(modality_id, data)


def save_labels(frame_labels, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(" ".join(str(int(v)) for v in frame_labels))
        fh.write("\n")


def load_labels(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read label file {path}: {exc}") from exc
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        for tok in line.split():
            if tok not in ("0", "1"):
                raise ParseError(lineno, f"label must be 0 or 1, got {tok!r}", path)
            out.append(int(tok))
    return np.array(out, dtype=np.int8)


# -- snippet labels -----------------------------------------------------------


@dataclass(frozen=True)
class SnippetLabelTrack:
    frame_labels: np.ndarray
    snippet_len: int
    snippet_labels: np.ndarray


def derive_snippet_labels(frame_labels, snippet_len=SNIPPET_LEN):
    """A snippet is abnormal if any frame in its window is; the partial tail is dropped."""
    if int(snippet_len) != snippet_len or snippet_len < 1:
        raise DataError(f"snippet_len must be a positive integer, got {snippet_len}")
    frames = np.asarray(frame_labels, dtype=np.int8).reshape(-1)
    count = frames.size // snippet_len
    windows = frames[: count * snippet_len].reshape(count, snippet_len)
    snippets = windows.max(axis=1).astype(np.int8) if count else np.zeros(0, dtype=np.int8)
    return SnippetLabelTrack(frames, int(snippet_len), snippets)


# -- dataset containers -------------------------------------------------------


@dataclass
class Video:
    id: str
    features: dict  # modality -> (S, d) array
    snippet_labels: np.ndarray
    frame_labels: np.ndarray = None
    split: str = "train"


@dataclass
class Bag:
    """``bag_size`` consecutive snippets of one video."""

    video_id: str
    index: int
    features: dict  # modality -> (N, d) array
    labels: np.ndarray

    @property
    def label(self):
        return int(np.any(self.labels > 0))


@dataclass
class Dataset:
    modalities: list
    videos: list = field(default_factory=list)
    snippet_len: int = SNIPPET_LEN

    def split(self, name):
        return Dataset(self.modalities, [v for v in self.videos if v.split == name], self.snippet_len)

    @property
    def n_snippets(self):
        return sum(len(v.snippet_labels) for v in self.videos)


def make_bags(dataset, bag_size=32):
    """Non-overlapping windows of ``bag_size`` snippets; a short final window is dropped."""
    bags = []
    for video in dataset.videos:
        n = len(video.snippet_labels)
        for b in range(n // bag_size):
            sl = slice(b * bag_size, (b + 1) * bag_size)
            bags.append(
                Bag(
                    video.id,
                    b,
                    {m: np.asarray(video.features[m][sl], dtype=np.float64) for m in dataset.modalities},
                    np.asarray(video.snippet_labels[sl], dtype=np.int8),
                )
            )
    return bags


# -- manifest -----------------------------------------------------------------


def write_dataset(dataset, directory):
    """Write features, frame labels and a manifest; returns the manifest path."""
    os.makedirs(directory, exist_ok=True)
    entries = []
    for video in dataset.videos:
        feats = {}
        for m in dataset.modalities:
            name = f"{video.id}.{m}.txt"
            save_features(video.features[m], os.path.join(directory, name))
            feats[m] = name
        frames = video.frame_labels
        if frames is None:
            frames = np.repeat(video.snippet_labels, dataset.snippet_len)
        label_name = f"{video.id}.labels.txt"
        save_labels(frames, os.path.join(directory, label_name))
        entries.append({"id": video.id, "split": video.split, "features": feats, "labels": label_name})
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": 1,
        "modalities": list(dataset.modalities),
        "snippet_len": dataset.snippet_len,
        "videos": entries,
    }
    path = os.path.join(directory, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    return path


def load_dataset(manifest_path):
    try:
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read manifest {manifest_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {manifest_path} is not valid JSON: {exc}") from exc
    if manifest.get("format") != MANIFEST_FORMAT:
        raise DataError(f"{manifest_path} is not a lego-fusion manifest")
    base = os.path.dirname(os.path.abspath(manifest_path))
    modalities = list(manifest["modalities"])
    snippet_len = int(manifest.get("snippet_len", SNIPPET_LEN))
    videos = []
    for entry in manifest["videos"]:
        frames = load_labels(os.path.join(base, entry["labels"]))
        track = derive_snippet_labels(frames, snippet_len)
        feats = {}
        for m in modalities:
            fs = load_features(os.path.join(base, entry["features"][m]), modality_id=m)
            if fs.n != track.snippet_labels.size:
                raise DataError(
                    f"video {entry['id']}: {m} has {fs.n} snippets but labels give {track.snippet_labels.size}"
                )
            feats[m] = fs.features
        videos.append(Video(entry["id"], feats, track.snippet_labels, frames, entry.get("split", "train")))
    return Dataset(modalities, videos, snippet_len)


# -- synthetic data -----------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic multi-modal anomaly generator.

    ``cluster_separation`` and ``noise_sigma`` are per-coordinate scales; the
    anomaly offset in a d-dimensional modality has norm
    ``cluster_separation * sqrt(d) * OFFSET_FRACTION``.
    """

    n_videos: int = 40
    snippets_per_video: int = 96
    dims: tuple = (64, 32)
    anomaly_rate: float = 0.1
    cluster_separation: float = 3.0
    noise_sigma: float = 1.0
    modality_correlation: float = 0.5
    seed: int = 42
    modality_names: tuple = None
    test_fraction: float = 0.25
    abnormal_video_fraction: float = 0.5
    mean_run_length: float = 4.0
    snippet_len: int = SNIPPET_LEN

    def __post_init__(self):
        if self.n_videos < 1 or self.snippets_per_video < 1:
            raise DataError("n_videos and snippets_per_video must be positive")
        if not self.dims or any(int(d) != d or d < 1 for d in self.dims):
            raise DataError(f"dims must be positive integers, got {self.dims}")
        if not 0.0 <= self.anomaly_rate < 1.0:
            raise DataError(f"anomaly_rate must lie in [0, 1), got {self.anomaly_rate}")
        if self.cluster_separation < 0 or self.noise_sigma <= 0:
            raise DataError("cluster_separation must be >= 0 and noise_sigma > 0")
        if not 0.0 <= self.modality_correlation <= 1.0:
            raise DataError("modality_correlation must lie in [0, 1]")
        if not 0.0 <= self.test_fraction < 1.0:
            raise DataError("test_fraction must lie in [0, 1)")
        if not 0.0 < self.abnormal_video_fraction <= 1.0:
            raise DataError("abnormal_video_fraction must lie in (0, 1]")
        if self.mean_run_length < 1.0:
            raise DataError("mean_run_length must be >= 1")
        if self.modality_names is not None and len(self.modality_names) != len(self.dims):
            raise DataError("modality_names must match dims")

    @property
    def names(self):
        if self.modality_names is not None:
            return tuple(self.modality_names)
        return tuple(f"m{i}" for i in range(len(self.dims)))

    @property
    def n_abnormal(self):
        return int(round(self.anomaly_rate * self.n_videos * self.snippets_per_video))


OFFSET_FRACTION = 1.0
SCENE_SPREAD = 1.0


def _place_anomalies(spec, rng):
    """Snippet label matrix (videos x snippets) with contiguous abnormal runs.

    Runs have geometric length with the configured mean and land in a fixed
    subset of abnormal videos; the total count is exactly ``spec.n_abnormal``
    (or every snippet of the abnormal videos, if fewer).
    """
    labels = np.zeros((spec.n_videos, spec.snippets_per_video), dtype=np.int8)
    target = spec.n_abnormal
    if target == 0:
        return labels
    n_abn_videos = max(1, int(round(spec.abnormal_video_fraction * spec.n_videos)))
    abn_videos = np.sort(rng.choice(spec.n_videos, n_abn_videos, replace=False))
    capacity = n_abn_videos * spec.snippets_per_video
    target = min(target, capacity)
    count = 0
    p = 1.0 / spec.mean_run_length
    while count < target:
        v = abn_videos[rng.integers(n_abn_videos)]
        length = int(rng.geometric(p))
        start = int(rng.integers(spec.snippets_per_video))
        for t in range(start, min(start + length, spec.snippets_per_video)):
            if count == target:
                break
            if not labels[v, t]:
                labels[v, t] = 1
                count += 1
    return labels


def _frame_labels(snippet_labels, snippet_len, rng):
    """Expand snippet labels to frames; an abnormal snippet marks a random sub-window."""
    frames = np.zeros(snippet_labels.size * snippet_len, dtype=np.int8)
    for t in np.flatnonzero(snippet_labels):
        start = int(rng.integers(snippet_len))
        stop = int(rng.integers(start + 1, snippet_len + 1))
        frames[t * snippet_len + start : t * snippet_len + stop] = 1
    return frames


def _test_videos(spec, labels, rng):
    """Held-out videos, stratified so both abnormal and normal videos are represented."""
    abnormal = np.flatnonzero(labels.any(axis=1))
    normal = np.flatnonzero(~labels.any(axis=1))
    chosen = []
    for group in (abnormal, normal):
        k = int(round(spec.test_fraction * group.size))
        if k:
            chosen.extend(rng.choice(group, k, replace=False).tolist())
    return set(chosen)


def _unit(v):
    return v / np.linalg.norm(v)


def generate_synthetic(spec=None):
    """Seeded multi-modal dataset with exact labels.

    Per modality: every video has a scene centre around a common base; normal
    snippets are the centre plus Gaussian noise; abnormal snippets are shifted
    along the modality's anomaly direction. The directions of all modalities
    mix one shared random vector with weight ``modality_correlation`` (and an
    independent one with weight ``sqrt(1 - rho^2)``).
    """
    spec = spec or SyntheticSpec()
    rng = np.random.default_rng(spec.seed)
    labels = _place_anomalies(spec, rng)
    d_max = max(spec.dims)
    shared = rng.standard_normal(d_max)
    rho = spec.modality_correlation
    sigma = spec.noise_sigma
    features = {}
    for name, d in zip(spec.names, spec.dims):
        own = rng.standard_normal(d)
        direction = _unit(rho * _unit(shared[:d]) + math.sqrt(1.0 - rho * rho) * _unit(own))
        base = sigma * rng.standard_normal(d)
        scenes = base + SCENE_SPREAD * sigma * rng.standard_normal((spec.n_videos, d))
        noise = sigma * rng.standard_normal((spec.n_videos, spec.snippets_per_video, d))
        offset = spec.cluster_separation * math.sqrt(d) * OFFSET_FRACTION * direction
        features[name] = scenes[:, None, :] + noise + labels[:, :, None] * offset
    test_ids = _test_videos(spec, labels, rng)
    videos = []
    for v in range(spec.n_videos):
        frames = _frame_labels(labels[v], spec.snippet_len, rng)
        videos.append(
            Video(
                f"v{v:03d}",
                {name: features[name][v] for name in spec.names},
                labels[v].copy(),
                frames,
                "test" if v in test_ids else "train",
            )
        )
    return Dataset(list(spec.names), videos, spec.snippet_len)
