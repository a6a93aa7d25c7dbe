"""Embedding bundles: binary format, task catalog, splits, synthetic data.

Bundle layout (all little-endian):

    magic   4s  "DEB1"
    version u16 (currently 1)
    sizes   u32 x6: n_samples, n_img_tokens, d_img, n_txt_tokens, d_txt, n_tasks
    tasks   per task: name length u16 + UTF-8 name + n_classes u32
    payload image f32 [n, T_i, d_img], text f32 [n, T_t, d_txt],
            labels i32 [n, n_tasks] (-1 = missing)

One file is one dataset. Bundles are immutable after load; writes are
canonical so write -> read -> write is byte-identical.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataFormatError

BUNDLE_MAGIC = b"DEB1"
BUNDLE_VERSION = 1

_U16 = struct.Struct("<H")
_HEADER = struct.Struct("<6I")

_F32 = np.dtype("<f4")
_I32 = np.dtype("<i4")


@dataclass(frozen=True)
class TaskSpec:
    """One labelling task: a name, a class count, and optional class names."""

    name: str
    n_classes: int
    class_names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.class_names and len(self.class_names) != self.n_classes:
            raise ConfigurationError(
                f"task {self.name!r}: {len(self.class_names)} class names for {self.n_classes} classes"
            )


# Meme-benchmark task catalog with observed label counts; the per-class
# counts (not the rounded percentages derived from them) define the priors
# used by the synthetic generator.
PRIDEMM_TASKS: dict[str, TaskSpec] = {
    "hate": TaskSpec("hate", 2, ("no_hate", "hate")),
    "target": TaskSpec("target", 4, ("undirected", "individual", "community", "organization")),
    "stance": TaskSpec("stance", 3, ("neutral", "support", "oppose")),
    "humor": TaskSpec("humor", 2, ("no_humor", "humor")),
}

PRIDEMM_LABEL_COUNTS: dict[str, tuple[int, ...]] = {
    "hate": (2313, 2243),
    "target": (694, 224, 1047, 268),
    "stance": (1312, 1718, 1526),
    "humor": (1477, 3179),
}


def pridemm_priors(task: str) -> np.ndarray:
    counts = np.asarray(PRIDEMM_LABEL_COUNTS[task], dtype=np.float64)
    return counts / counts.sum()


@dataclass
class EmbeddingBundle:
    """Per-sample image/text embedding sequences plus multi-task labels."""

    images: np.ndarray  # f32 [n, T_i, d_img]
    texts: np.ndarray  # f32 [n, T_t, d_txt]
    labels: np.ndarray  # i32 [n, n_tasks], -1 = missing
    tasks: list[TaskSpec] = field(default_factory=list)

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=_F32)
        self.texts = np.ascontiguousarray(self.texts, dtype=_F32)
        self.labels = np.ascontiguousarray(self.labels, dtype=_I32)
        self.validate()

    @property
    def n_samples(self) -> int:
        return self.images.shape[0]

    @property
    def n_img_tokens(self) -> int:
        return self.images.shape[1]

    @property
    def d_img(self) -> int:
        return self.images.shape[2]

    @property
    def n_txt_tokens(self) -> int:
        return self.texts.shape[1]

    @property
    def d_txt(self) -> int:
        return self.texts.shape[2]

    def validate(self) -> None:
        if self.images.ndim != 3 or self.texts.ndim != 3:
            raise DataFormatError(
                f"embeddings must be [n, tokens, dim]; got image {self.images.shape}, text {self.texts.shape}"
            )
        n = self.images.shape[0]
        if self.texts.shape[0] != n:
            raise DataFormatError(f"image/text sample counts disagree: {n} vs {self.texts.shape[0]}")
        if self.labels.shape != (n, len(self.tasks)):
            raise DataFormatError(
                f"labels must have shape ({n}, {len(self.tasks)}), got {self.labels.shape}"
            )
        if not np.all(np.isfinite(self.images)) or not np.all(np.isfinite(self.texts)):
            raise DataFormatError("embedding values must be finite")
        for t, spec in enumerate(self.tasks):
            col = self.labels[:, t]
            bad = (col < -1) | (col >= spec.n_classes)
            if np.any(bad):
                raise DataFormatError(
                    f"task {spec.name!r}: label {int(col[bad][0])} out of range [0, {spec.n_classes}) (-1 = missing)"
                )

    def task_index(self, task: int | str) -> int:
        if isinstance(task, str):
            for i, spec in enumerate(self.tasks):
                if spec.name == task:
                    return i
            raise ConfigurationError(f"bundle has no task named {task!r} (tasks: {[t.name for t in self.tasks]})")
        if not 0 <= task < len(self.tasks):
            raise ConfigurationError(f"task index {task} out of range for {len(self.tasks)} tasks")
        return task

    def labeled_indices(self, task: int | str) -> np.ndarray:
        t = self.task_index(task)
        return np.nonzero(self.labels[:, t] >= 0)[0]


def write_bundle(bundle: EmbeddingBundle, path) -> None:
    with open(path, "wb") as fh:
        fh.write(BUNDLE_MAGIC)
        fh.write(_U16.pack(BUNDLE_VERSION))
        fh.write(
            _HEADER.pack(
                bundle.n_samples,
                bundle.n_img_tokens,
                bundle.d_img,
                bundle.n_txt_tokens,
                bundle.d_txt,
                len(bundle.tasks),
            )
        )
        for spec in bundle.tasks:
            encoded = spec.name.encode("utf-8")
            fh.write(_U16.pack(len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", spec.n_classes))
        fh.write(bundle.images.tobytes())
        fh.write(bundle.texts.tobytes())
        fh.write(bundle.labels.tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise DataFormatError(f"truncated bundle: expected {n} bytes for {what}, got {len(buf)}")
    return buf


def read_bundle(path) -> EmbeddingBundle:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != BUNDLE_MAGIC:
            raise DataFormatError(f"bad bundle magic: {magic!r} (expected {BUNDLE_MAGIC!r})")
        (version,) = _U16.unpack(_read_exact(fh, 2, "format version"))
        if version != BUNDLE_VERSION:
            raise DataFormatError(f"unsupported bundle version {version}")
        n, t_i, d_i, t_t, d_t, n_tasks = _HEADER.unpack(_read_exact(fh, _HEADER.size, "size header"))
        tasks = []
        for _ in range(n_tasks):
            (name_len,) = _U16.unpack(_read_exact(fh, 2, "task name length"))
            name = _read_exact(fh, name_len, "task name").decode("utf-8")
            (n_classes,) = struct.unpack("<I", _read_exact(fh, 4, f"class count of task {name!r}"))
            tasks.append(TaskSpec(name, n_classes))
        images = np.frombuffer(_read_exact(fh, n * t_i * d_i * 4, "image embeddings"), dtype=_F32)
        texts = np.frombuffer(_read_exact(fh, n * t_t * d_t * 4, "text embeddings"), dtype=_F32)
        labels = np.frombuffer(_read_exact(fh, n * n_tasks * 4, "labels"), dtype=_I32)
        if fh.read(1):
            raise DataFormatError("trailing bytes after label payload")
    return EmbeddingBundle(
        images=images.reshape(n, t_i, d_i),
        texts=texts.reshape(n, t_t, d_t),
        labels=labels.reshape(n, n_tasks),
        tasks=tasks,
    )


@dataclass
class SplitPlan:
    """Disjoint index lists covering every labelled sample of one task."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int
    strategy: str = "stratified"

    def part(self, name: str) -> np.ndarray:
        try:
            return {"train": self.train, "val": self.val, "test": self.test}[name]
        except KeyError:
            raise ConfigurationError(f"unknown split part {name!r}") from None


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def stratified_split(bundle: EmbeddingBundle, task: int | str, fractions, seed: int) -> SplitPlan:
    """Per-class shuffled split; proportions hold within one sample per class.

    `fractions` has two (train/val) or three (train/val/test) entries summing
    to 1. Identical (bundle, task, fractions, seed) give identical plans.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) not in (2, 3):
        raise ConfigurationError(f"need 2 or 3 split fractions, got {len(fractions)}")
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigurationError(f"split fractions must be nonnegative and sum to 1, got {fractions}")

    t = bundle.task_index(task)
    labels = bundle.labels[:, t]
    labeled = np.nonzero(labels >= 0)[0]
    if labeled.size == 0:
        raise ConfigurationError(f"no labelled samples for task index {t}")
    classes = np.unique(labels[labeled])
    if classes.size < 2:
        raise ConfigurationError(f"stratified split needs at least 2 classes, found {classes.size}")

    rng = np.random.default_rng(seed)
    parts: list[list[np.ndarray]] = [[] for _ in fractions]
    for c in classes:
        members = labeled[labels[labeled] == c]
        if members.size < len(fractions):
            raise ConfigurationError(
                f"class {int(c)} has {members.size} samples, fewer than the {len(fractions)} split parts"
            )
        members = rng.permutation(members)
        bounds = [0] + [_round_half_up(members.size * sum(fractions[: i + 1])) for i in range(len(fractions))]
        bounds[-1] = members.size
        for i in range(len(fractions)):
            parts[i].append(members[bounds[i] : bounds[i + 1]])

    arrays = [np.sort(np.concatenate(chunks)).astype(np.int64) for chunks in parts]
    if len(arrays) == 2:
        arrays.append(np.empty(0, dtype=np.int64))
    return SplitPlan(train=arrays[0], val=arrays[1], test=arrays[2], seed=seed)


def _apportion(n: int, priors: np.ndarray) -> np.ndarray:
    """Largest-remainder allocation of n samples over class priors."""
    exact = priors * n
    counts = np.floor(exact).astype(np.int64)
    remainder = n - counts.sum()
    order = np.lexsort((np.arange(priors.size), -(exact - counts)))
    counts[order[:remainder]] += 1
    return counts


def synth_generate(
    n: int,
    task_spec: TaskSpec,
    class_priors,
    d_img: int = 768,
    d_txt: int = 768,
    separation: float = 1.0,
    noise_seed: int = 0,
    n_img_tokens: int = 1,
    n_txt_tokens: int = 1,
) -> EmbeddingBundle:
    """Class-conditional Gaussian embeddings around per-class unit directions.

    Each class gets one unit direction per modality, scaled by `separation`
    and perturbed by unit isotropic noise; at separation 0 the classes are
    indistinguishable by construction. Class counts follow the priors by
    largest-remainder allocation, so empirical fractions are exact to 1/n.
    """
    if n < 1:
        raise ConfigurationError(f"sample count must be >= 1, got {n}")
    if separation < 0:
        raise ConfigurationError(f"separation must be >= 0, got {separation}")
    priors = np.asarray(class_priors, dtype=np.float64)
    if priors.shape != (task_spec.n_classes,):
        raise ConfigurationError(
            f"need {task_spec.n_classes} class priors for task {task_spec.name!r}, got {priors.shape}"
        )
    if np.any(priors < 0) or abs(priors.sum() - 1.0) > 1e-9:
        raise ConfigurationError(f"class priors must be nonnegative and sum to 1 within 1e-9, got {priors}")

    rng = np.random.default_rng(noise_seed)
    mu_img = rng.standard_normal((task_spec.n_classes, d_img))
    mu_img /= np.linalg.norm(mu_img, axis=1, keepdims=True)
    mu_txt = rng.standard_normal((task_spec.n_classes, d_txt))
    mu_txt /= np.linalg.norm(mu_txt, axis=1, keepdims=True)

    counts = _apportion(n, priors)
    labels = np.repeat(np.arange(task_spec.n_classes), counts)
    rng.shuffle(labels)

    images = separation * mu_img[labels][:, None, :] + rng.standard_normal((n, n_img_tokens, d_img))
    texts = separation * mu_txt[labels][:, None, :] + rng.standard_normal((n, n_txt_tokens, d_txt))
    return EmbeddingBundle(
        images=images.astype(_F32),
        texts=texts.astype(_F32),
        labels=labels.reshape(n, 1).astype(_I32),
        tasks=[TaskSpec(task_spec.name, task_spec.n_classes, task_spec.class_names)],
    )
