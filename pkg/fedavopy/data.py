import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tools
from .nn import Batch

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049
SIMPLEX_SCALE = 4.0


@dataclass(frozen=True)
class Dataset(Batch):
    """
    A labelled classification dataset with features scaled into [0, 1].

    Attributes
    ----------
    inputs : numpy.ndarray
        `N x D` feature matrix.
    labels : numpy.ndarray
        `N` class indices.
    num_classes : int
        Number of classes M. Inferred from the labels if left undefined.
    """

    num_classes: int = None

    def __post_init__(self):
        super().__post_init__()
        if self.num_classes is None:
            inferred = int(self.labels.max()) + 1 if self.labels.size else 0
            object.__setattr__(self, "num_classes", inferred)
        if self.labels.size and self.labels.max() >= self.num_classes:
            raise ValueError("Dataset label out of range for its class count.")
        if self.inputs.size and (self.inputs.min() < 0 or self.inputs.max() > 1):
            raise ValueError("Dataset inputs must lie in [0, 1].")

    def take(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.inputs[idx], self.labels[idx], self.num_classes)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


def load_idx(images_path: Path, labels_path: Path, num_classes: int = None) -> Dataset:
    """
    Load an image/label pair in IDX format, such as the MNIST distribution files. Files
    ending in `.gz` are decompressed transparently.

    Parameters
    ----------
    images_path : Path
        IDX file with magic 2051 (unsigned bytes, three dimensions: count, rows, columns).
    labels_path : Path
        IDX file with magic 2049 (unsigned bytes, one dimension: count).
    num_classes : int
        Class count of the dataset. Inferred as the largest label plus one if left undefined.

    Returns
    -------
    Dataset
        Images flattened row-major and scaled by 1/255.
    """
    images = _read_idx(images_path, IDX_IMAGE_MAGIC)
    labels = _read_idx(labels_path, IDX_LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise ValueError(
            f"IDX images/labels disagree: {images.shape[0]} images, {labels.shape[0]} labels."
        )
    inputs = images.reshape(images.shape[0], -1).astype(float) / 255.0
    return Dataset(inputs, labels.astype(np.int64), num_classes)


def write_idx(ds: Dataset, images_path: Path, labels_path: Path, shape: tuple = None) -> None:
    """
    Write a dataset as an IDX image/label pair. Pixels are quantized to `round(x * 255)`.

    Parameters
    ----------
    ds : Dataset
        Dataset to write. Labels must fit in an unsigned byte.
    images_path : Path
        Destination of the image file.
    labels_path : Path
        Destination of the label file.
    shape : tuple
        (rows, cols) of each image. Defaults to a square when the feature count is a perfect
        square, else a single row.
    """
    n, d = ds.inputs.shape
    if shape is None:
        side = int(round(np.sqrt(d)))
        shape = (side, side) if side * side == d else (1, d)
    if shape[0] * shape[1] != d:
        raise ValueError(f"Image shape {shape} does not match {d} features.")
    if ds.labels.size and ds.labels.max() > 255:
        raise ValueError("IDX labels must fit in an unsigned byte.")
    pixels = np.rint(ds.inputs * 255).astype(np.uint8)
    _write(images_path, struct.pack(">IIII", IDX_IMAGE_MAGIC, n, *shape) + pixels.tobytes())
    labels = ds.labels.astype(np.uint8)
    _write(labels_path, struct.pack(">II", IDX_LABEL_MAGIC, n) + labels.tobytes())


def synthetic_classification(
    n: int, num_classes: int, dims: int, spread: float, seed: int
) -> Dataset:
    """
    Gaussian blobs for fast experiments. Class centres are seeded vertices of a scaled
    simplex (orthonormal directions times a fixed scale), samples are assigned to classes
    round-robin, and features are mapped into [0, 1] by a fixed affine transform that depends
    only on `spread`.

    Parameters
    ----------
    n : int
        Number of samples, at least `num_classes`.
    num_classes : int
        Number of classes M, at least 2.
    dims : int
        Feature dimension D, at least 2.
    spread : float
        Standard deviation of each blob before scaling.
    seed : int
        Seed of the generator.

    Returns
    -------
    Dataset
    """
    _validate_synthetic(n, num_classes, dims, spread)
    rng = tools.gen_rng(seed)
    if dims >= num_classes:
        q, _ = np.linalg.qr(rng.standard_normal((dims, dims)))
        centers = SIMPLEX_SCALE * q[:, :num_classes].T
    else:
        directions = rng.standard_normal((num_classes, dims))
        centers = SIMPLEX_SCALE * directions / np.linalg.norm(directions, axis=1, keepdims=True)

    labels = np.arange(n) % num_classes
    raw = centers[labels] + spread * rng.standard_normal((n, dims))
    half_width = SIMPLEX_SCALE + 4 * spread
    inputs = np.clip(0.5 + raw / (2 * half_width), 0.0, 1.0)
    return Dataset(inputs, labels, num_classes)


def subsample(ds: Dataset, n: int, stratified: bool = False, seed: int = None) -> Dataset:
    """
    Draw `n` rows without replacement.

    Parameters
    ----------
    ds : Dataset
        Source dataset.
    n : int
        Number of rows to keep.
    stratified : bool
        If True, each class keeps its share of `n` to within one row (largest remainder).
    seed : int
        Used to seed the random number generator. Randomly generated if left undefined.

    Returns
    -------
    Dataset
    """
    if n > len(ds) or n < 0:
        raise ValueError(f"Cannot subsample {n} rows from a dataset of {len(ds)}.")
    rng = tools.gen_rng(seed)
    if not stratified:
        return ds.take(rng.choice(len(ds), size=n, replace=False))

    counts = ds.class_counts()
    exact = counts * n / len(ds)
    quotas = np.floor(exact).astype(int)
    remainder = n - quotas.sum()
    order = np.argsort(-(exact - quotas), kind="stable")
    quotas[order[:remainder]] += 1

    picked = [
        rng.choice(np.flatnonzero(ds.labels == c), size=q, replace=False)
        for c, q in enumerate(quotas)
        if q > 0
    ]
    idx = np.concatenate(picked) if picked else np.empty(0, dtype=int)
    return ds.take(rng.permutation(idx))


def _read_idx(path: Path, magic: int) -> np.ndarray:
    raw = _read(path)
    if len(raw) < 4:
        raise ValueError(f"IDX file {path}: unexpected end of data.")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise ValueError(f"{path} is not an IDX file of the expected type (magic {found}).")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise ValueError(f"IDX file {path}: unexpected end of data in header.")
    shape = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(shape))
    if len(raw) < header + size:
        raise ValueError(f"IDX file {path}: unexpected end of data, expected {size} bytes.")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(shape)


def _read(path: Path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as f:
        return f.read()


def _write(path: Path, payload: bytes) -> None:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "wb") as f:
        f.write(payload)


def _validate_synthetic(n, num_classes, dims, spread):
    if num_classes < 2:
        raise ValueError("Synthetic data needs at least two classes.")
    if n < num_classes:
        raise ValueError("Synthetic data needs at least one sample per class.")
    if dims < 2:
        raise ValueError("Synthetic data needs at least two dimensions.")
    if spread < 0:
        raise ValueError("Spread must be non-negative.")
