"""Synthetic ordinal images, PGM + CSV manifests, and train/val/test splits."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig

MANIFEST_HEADER = ["id", "path", "age", "gender"]
SPLITS = ("train", "val", "test")


class ManifestError(ValueError):
    pass


@dataclass
class Dataset:
    inputs: np.ndarray  # [N, 1, H, W] in [0, 1]
    age_class: np.ndarray  # [N], classes 1..K
    gender: np.ndarray  # [N], 0/1
    ids: list
    K: int
    class_ages: list
    split: np.ndarray  # [N] of "train" / "val" / "test"

    def __post_init__(self):
        n = len(self.inputs)
        if not (len(self.age_class) == len(self.gender) == len(self.ids) == len(self.split) == n):
            raise ValueError("dataset fields have inconsistent lengths")
        if n and (self.age_class.min() < 1 or self.age_class.max() > self.K):
            raise ValueError(f"age classes must lie in 1..{self.K}")
        if not set(np.unique(self.split)) <= set(SPLITS):
            raise ValueError(f"unknown split names in {np.unique(self.split)}")

    def __len__(self):
        return len(self.inputs)

    @property
    def ages(self):
        return np.asarray(self.class_ages)[self.age_class - 1]

    def subset(self, name):
        if name == "all":
            return self
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        m = self.split == name
        return Dataset(self.inputs[m], self.age_class[m], self.gender[m],
                       [i for i, keep in zip(self.ids, m) if keep], self.K, self.class_ages,
                       self.split[m])


def assign_splits(age_class, seed, train_frac=0.7, val_frac=0.1):
    """Seeded split, stratified by class so small classes land in every part."""
    age_class = np.asarray(age_class)
    split = np.empty(len(age_class), dtype="<U5")
    rng = np.random.default_rng([seed, 7])
    for c in np.unique(age_class):
        idx = rng.permutation(np.flatnonzero(age_class == c))
        n_train = int(round(train_frac * len(idx)))
        n_val = int(round(val_frac * len(idx)))
        split[idx[:n_train]] = "train"
        split[idx[n_train:n_train + n_val]] = "val"
        split[idx[n_train + n_val:]] = "test"
    return split


def bright_rows(k, K, height):
    return int(np.floor(k * height / K + 0.5))


def synth_generate(seed, K, n_per_class, image_size, noise_sigma, train_frac=0.7, val_frac=0.1,
                   class_ages=None):
    """Grayscale images whose top rows encode the age class.

    Class k lights the first round(k * H / K) rows; gender tilts a
    left/right intensity ramp up (1) or down (0). Pixels are clipped to
    [0, 1] after Gaussian noise.
    """
    if K < 2 or n_per_class < 1 or image_size < 3 or noise_sigma < 0:
        raise ValueError("need K >= 2, n_per_class >= 1, image_size >= 3, noise_sigma >= 0")
    if len({bright_rows(k, K, image_size) for k in range(1, K + 1)}) < K:
        raise ValueError(f"image_size {image_size} cannot separate {K} classes")
    rng = np.random.default_rng(seed)
    H = W = image_size
    ramp = np.linspace(-0.1, 0.1, W)
    n = K * n_per_class
    age_class = np.repeat(np.arange(1, K + 1), n_per_class)
    gender = rng.integers(0, 2, size=n)
    inputs = np.full((n, 1, H, W), 0.2)
    for i, (k, g) in enumerate(zip(age_class, gender)):
        inputs[i, 0, :bright_rows(k, K, H)] = 0.7
        inputs[i, 0] += ramp if g == 1 else -ramp
    inputs += noise_sigma * rng.standard_normal(inputs.shape)
    np.clip(inputs, 0.0, 1.0, out=inputs)
    ids = [f"s{i:05d}" for i in range(n)]
    class_ages = list(range(1, K + 1)) if class_ages is None else list(class_ages)
    split = assign_splits(age_class, seed, train_frac, val_frac)
    return Dataset(inputs, age_class, gender, ids, K, class_ages, split)


def synth_from_config(cfg: RunConfig):
    return synth_generate(cfg.seed, cfg.K, cfg.n_per_class, cfg.image_size, cfg.noise_sigma,
                          cfg.train_frac, cfg.val_frac, cfg.class_ages)


# -- PGM ----------------------------------------------------------------------

def write_pgm(path, image):
    """Write a [H, W] array in [0, 1] as 8-bit binary PGM."""
    img = np.asarray(image, dtype=np.float64)
    q = np.clip(np.rint(img * 255), 0, 255).astype(np.uint8)
    h, w = q.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(q.tobytes())


def _pgm_tokens(data, count, pos):
    out = []
    while len(out) < count:
        while pos < len(data) and (chr(data[pos]).isspace() or data[pos] == ord("#")):
            if data[pos] == ord("#"):
                while pos < len(data) and data[pos] not in (10, 13):
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < len(data) and not chr(data[pos]).isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        out.append(data[start:pos].decode("ascii"))
    return out, pos


def read_pgm(path):
    """Read an 8-bit P5 or P2 PGM, scaled to [0, 1]."""
    data = Path(path).read_bytes()
    (magic, w, h, maxval), pos = _pgm_tokens(data, 4, 0)
    w, h, maxval = int(w), int(h), int(maxval)
    if magic not in ("P5", "P2") or not 0 < maxval <= 255:
        raise ValueError(f"{path}: not an 8-bit grayscale PGM")
    if magic == "P5":
        raw = data[pos + 1:pos + 1 + w * h]
        if len(raw) != w * h:
            raise ValueError(f"{path}: truncated pixel data")
        px = np.frombuffer(raw, dtype=np.uint8).astype(np.float64)
    else:
        vals, _ = _pgm_tokens(data, w * h, pos)
        px = np.array([int(v) for v in vals], dtype=np.float64)
    return px.reshape(h, w) / maxval


# -- manifests ------------------------------------------------------------------

def _age_repr(a):
    return str(int(a)) if float(a).is_integer() else repr(float(a))


def write_dataset(dataset: Dataset, out_dir):
    """Write every image as PGM plus ``manifest.csv``; returns the manifest path."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    with open(out / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for x, age, g, sid in zip(dataset.inputs, dataset.ages, dataset.gender, dataset.ids):
            rel = f"images/{sid}.pgm"
            write_pgm(out / rel, x[0])
            w.writerow([sid, rel, _age_repr(age), int(g)])
    return out / "manifest.csv"


def load_manifest(path, cfg: RunConfig = RunConfig()):
    """Load ``id,path,age,gender`` rows; image paths are relative to the manifest."""
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ManifestError(f"cannot open manifest {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise ManifestError(f"{path}: header must be {','.join(MANIFEST_HEADER)}, got {header}")
        images, classes, genders, ids = [], [], [], []
        for row_no, row in enumerate(reader, 1):
            where = f"{path}: row {row_no}"
            if len(row) != 4:
                raise ManifestError(f"{where}: expected 4 fields, got {len(row)}")
            sid, rel, age_s, gender_s = row
            try:
                age = float(age_s)
            except ValueError:
                raise ManifestError(f"{where}: age {age_s!r} is not a number") from None
            try:
                k = cfg.age_to_class(age)
            except ValueError as exc:
                raise ManifestError(f"{where}: {exc}") from None
            if gender_s.strip() not in ("0", "1"):
                raise ManifestError(f"{where}: gender {gender_s!r} must be 0 or 1")
            img_path = path.parent / rel
            if not img_path.is_file():
                raise ManifestError(f"{where}: image file {img_path} not found")
            try:
                img = read_pgm(img_path)
            except ValueError as exc:
                raise ManifestError(f"{where}: {exc}") from None
            if images and img.shape != images[0].shape:
                raise ManifestError(f"{where}: image shape {img.shape} differs from {images[0].shape}")
            images.append(img)
            classes.append(k)
            genders.append(int(gender_s))
            ids.append(sid)
    if not images:
        raise ManifestError(f"{path}: manifest has no rows")
    age_class = np.array(classes)
    return Dataset(np.stack(images)[:, None], age_class, np.array(genders), ids, cfg.K,
                   cfg.class_ages, assign_splits(age_class, cfg.seed, cfg.train_frac, cfg.val_frac))
