"""Synthetic imbalanced image dataset and triplet sampling.

Each image is a uniform-noise background with one class-specific glyph
stamped at a random location at fixed contrast, so the class evidence is a
small region the network has to localize rather than a global intensity
statistic. Pixel values live on the 8-bit grid (n / 255), which makes the
PGM round trip exact. Generation fans out one child seed per image id, so
any image can be regenerated independently.

Triplet sampling draws the query uniformly, the positive uniformly from the
query's class, and the negative's class with probability proportional to
inverse class frequency, which is what makes minority images reappear as
negatives of majority queries over and over.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError

GLYPH_LEVEL = 230  # 8-bit intensity of the stamped glyph


@dataclass
class DatasetSpec:
    class_counts: tuple
    image_size: int = 64
    roi_size: int = 12
    noise_level: float = 0.5
    seed: int = 0

    def validate(self):
        if len(self.class_counts) < 2:
            raise ConfigError("need at least 2 classes")
        if any(c < 2 for c in self.class_counts):
            raise ConfigError(f"every class needs >= 2 images, got {self.class_counts}")
        if len(self.class_counts) > len(_GLYPHS):
            raise ConfigError(
                f"at most {len(_GLYPHS)} classes supported, got {len(self.class_counts)}"
            )
        if not 0 < self.roi_size < self.image_size:
            raise ConfigError(
                f"roi_size must be in (0, image_size), got {self.roi_size} vs {self.image_size}"
            )
        if not 0.0 <= self.noise_level <= 1.0:
            raise ConfigError(f"noise_level must be in [0, 1], got {self.noise_level}")
        return self


@dataclass
class LabeledImage:
    id: int
    pixels: np.ndarray  # (S, S) float64 in [0, 1], on the n/255 grid
    label: int


@dataclass(frozen=True)
class Triplet:
    q: int
    p: int
    n: int


def _wedge(size):
    i, j = np.indices((size, size))
    return j <= i


def _disc(size):
    i, j = np.indices((size, size))
    c = (size - 1) / 2.0
    return (i - c) ** 2 + (j - c) ** 2 <= (size / 2.0 - 0.5) ** 2


def _cross(size):
    i, j = np.indices((size, size))
    c = (size - 1) / 2.0
    w = max(size // 6, 1)
    return (np.abs(i - c) <= w) | (np.abs(j - c) <= w)


def _ring(size):
    i, j = np.indices((size, size))
    c = (size - 1) / 2.0
    rr = (i - c) ** 2 + (j - c) ** 2
    outer = (size / 2.0 - 0.5) ** 2
    inner = (size / 4.0) ** 2
    return (rr <= outer) & (rr >= inner)


def _bar(size):
    i, _ = np.indices((size, size))
    c = (size - 1) / 2.0
    return np.abs(i - c) <= max(size // 5, 1)


def _frame(size):
    m = np.zeros((size, size), dtype=bool)
    t = max(size // 6, 1)
    m[:t, :] = m[-t:, :] = m[:, :t] = m[:, -t:] = True
    return m


def _diag(size):
    i, j = np.indices((size, size))
    return np.abs(i - j) <= max(size // 6, 1)


def _saltire(size):
    i, j = np.indices((size, size))
    w = max(size // 6, 1)
    return (np.abs(i - j) <= w) | (np.abs(i + j - (size - 1)) <= w)


_GLYPHS = (_wedge, _disc, _cross, _ring, _bar, _frame, _diag, _saltire)


def glyph_mask(label, size):
    return _GLYPHS[label](size)


def generate_dataset(spec: DatasetSpec):
    """All images for the spec, ids 0..n-1 grouped by class, fully seeded."""
    spec.validate()
    s = spec.image_size
    noise_ceiling = int(round(spec.noise_level * 255))
    images = []
    next_id = 0
    for label, count in enumerate(spec.class_counts):
        mask = glyph_mask(label, spec.roi_size)
        for _ in range(count):
            rng = np.random.default_rng((spec.seed, next_id))
            levels = rng.integers(0, noise_ceiling + 1, size=(s, s))
            y, x = rng.integers(0, s - spec.roi_size + 1, size=2)
            patch = levels[y : y + spec.roi_size, x : x + spec.roi_size]
            patch[mask] = GLYPH_LEVEL
            images.append(LabeledImage(id=next_id, pixels=levels / 255.0, label=label))
            next_id += 1
    return images


# ---------------------------------------------------------------------------
# on-disk format: manifest.csv (id,filename,label), 8-bit binary PGM images,
# and train.txt / test.txt id lists


def write_pgm(path, gray):
    gray = np.asarray(gray)
    if gray.dtype != np.uint8 or gray.ndim != 2:
        raise ConfigError("write_pgm expects a 2-D uint8 array")
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())


def read_pgm(path):
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read image file: {exc}") from exc
    # tokenize the header only: the payload may contain whitespace bytes
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (P5) file")
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as exc:
        raise FormatError(f"{path}: malformed PGM header") from exc
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 PGMs supported, got {maxval}")
    pos += 1  # the single whitespace byte after maxval
    pixels = raw[pos : pos + h * w]
    if len(pixels) != h * w:
        raise FormatError(f"{path}: PGM payload shorter than {w}x{h}")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w)


def image_filename(image_id):
    return f"img_{image_id:05d}.pgm"


def save_dataset(directory, images):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "filename", "label"])
        for img in images:
            writer.writerow([img.id, image_filename(img.id), img.label])
    for img in images:
        write_pgm(directory / image_filename(img.id), np.rint(img.pixels * 255.0).astype(np.uint8))


def load_dataset(directory):
    directory = Path(directory)
    manifest = directory / "manifest.csv"
    if not manifest.is_file():
        raise FormatError(f"{manifest}: dataset manifest missing")
    rows = []
    with open(manifest, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["id", "filename", "label"]:
            raise FormatError(f"{manifest}: malformed header {header}")
        for row in reader:
            if len(row) != 3:
                raise FormatError(f"{manifest}: malformed row {row}")
            try:
                rows.append((int(row[0]), row[1], int(row[2])))
            except ValueError as exc:
                raise FormatError(f"{manifest}: non-numeric id or label in {row}") from exc
    if not rows:
        raise FormatError(f"{manifest}: dataset is empty")
    pgm_count = len(list(directory.glob("*.pgm")))
    if pgm_count != len(rows):
        raise FormatError(
            f"{manifest}: lists {len(rows)} images but directory holds {pgm_count} PGM files"
        )
    images = []
    for image_id, filename, label in rows:
        gray = read_pgm(directory / filename)
        images.append(LabeledImage(id=image_id, pixels=gray / 255.0, label=label))
    ids = [img.id for img in images]
    if len(set(ids)) != len(ids):
        raise FormatError(f"{manifest}: duplicate image ids")
    return images


def save_split(directory, name, ids):
    with open(Path(directory) / f"{name}.txt", "w") as fh:
        for i in ids:
            fh.write(f"{i}\n")


def load_split(directory, name):
    path = Path(directory) / f"{name}.txt"
    if not path.is_file():
        raise FormatError(f"{path}: split file missing")
    try:
        return [int(line) for line in path.read_text().split()]
    except ValueError as exc:
        raise FormatError(f"{path}: malformed split file") from exc


def train_test_split(images, test_fraction=0.2, seed=0):
    """Per-class shuffled split; every class keeps at least one test image."""
    by_class = {}
    for img in images:
        by_class.setdefault(img.label, []).append(img.id)
    rng = np.random.default_rng((seed, 0x5B117))  # distinct stream from image generation
    train_ids, test_ids = [], []
    for label in sorted(by_class):
        ids = sorted(by_class[label])
        perm = rng.permutation(len(ids))
        n_test = max(1, int(round(test_fraction * len(ids))))
        chosen = {ids[i] for i in perm[:n_test]}
        test_ids.extend(sorted(chosen))
        train_ids.extend(i for i in ids if i not in chosen)
    return sorted(train_ids), sorted(test_ids)


# ---------------------------------------------------------------------------
# triplet sampling


def sample_triplets(labels, count, seed, ids=None):
    """Draw ``count`` triplets over items with the given labels.

    The query is uniform over all items; the positive is uniform over the
    rest of the query's class; the negative's class is drawn with probability
    proportional to inverse class frequency, then uniform within that class,
    which is what makes minority images reappear as negatives of majority
    queries. ``ids`` maps positions to external image ids (defaults to
    positions).
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.size
    if count < 1:
        raise ConfigError(f"triplet count must be >= 1, got {count}")
    if n < 2:
        raise ConfigError("need at least two labeled items to sample triplets")
    if ids is None:
        ids = np.arange(n)
    else:
        ids = np.asarray(ids)
        if ids.size != n:
            raise ConfigError(f"ids ({ids.size}) and labels ({n}) must align")
    classes, counts = np.unique(labels, return_counts=True)
    if classes.size < 2:
        raise ConfigError("need at least two classes to sample triplets")
    members = {c: np.flatnonzero(labels == c) for c in classes}
    class_pos = {c: i for i, c in enumerate(classes)}
    inv = 1.0 / counts.astype(np.float64)

    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        qpos = int(rng.integers(n))
        qc = labels[qpos]
        own = members[qc]
        if own.size < 2:
            raise ConfigError(
                f"class {qc} has {own.size} member(s); cannot pick a positive"
            )
        others = own[own != qpos]
        ppos = int(others[rng.integers(others.size)])
        weights = inv.copy()
        weights[class_pos[qc]] = 0.0
        weights /= weights.sum()
        nc = classes[rng.choice(classes.size, p=weights)]
        neg_members = members[nc]
        npos = int(neg_members[rng.integers(neg_members.size)])
        out.append(Triplet(q=int(ids[qpos]), p=int(ids[ppos]), n=int(ids[npos])))
    return out
