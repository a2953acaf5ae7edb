"""Synthetic plate simulator for difference-in-time-of-arrival maps.

A population holds one task per sensor pair. Each source location emits a
wave travelling in straight lines at constant speed; the task output is the
arrival-time difference between the two sensors of its pair, with Gaussian
noise whose scale grows with distance from the pair's centroid.

File format
-----------
``save_dataset(pop, "pop.csv")`` writes two files:

``pop.csv``
    header ``pair_id,sep,x1,x2,y,split``; one row per observation.
    ``pair_id`` is ``"j-k"`` (0-based sensor indices), ``sep`` the
    normalised sensor separation, ``x1, x2`` normalised coordinates, ``y``
    the normalised output and ``split`` either ``train`` or ``test``.
``pop.json``
    plate configuration and normalisation record.

Floats are written with 17 significant digits.
"""
from __future__ import annotations

import csv
import itertools
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from hiergp.errors import ConfigError, DomainError, ParseError

FORMAT_VERSION = 1
CSV_COLUMNS = ("pair_id", "sep", "x1", "x2", "y", "split")

DEFAULT_SENSORS = (
    (25.0, 25.0), (100.0, 20.0), (175.0, 30.0), (180.0, 115.0),
    (110.0, 130.0), (30.0, 125.0), (60.0, 75.0), (140.0, 70.0),
)


def _fmt(v):
    return format(float(v), ".17g")


@dataclass(frozen=True)
class PlateConfig:
    """Plate geometry, sensor layout and noise model (raw units).

    When ``source_grid`` is None a regular grid of ``grid_shape`` cell
    centres covering the plate is used.
    """

    length: float = 200.0
    width: float = 150.0
    sensor_positions: tuple = DEFAULT_SENSORS
    source_grid: tuple | None = None
    grid_shape: tuple = (52, 40)
    wave_speed: float = 5.0
    noise_base: float = 0.5
    noise_edge_gain: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0):
            raise ConfigError("plate dimensions must be positive")
        if self.length < self.width:
            raise ConfigError("length must be the longest edge (length >= width)")
        if not self.wave_speed > 0:
            raise ConfigError("wave_speed must be positive")
        if not self.noise_base > 0:
            raise ConfigError("noise_base must be positive")
        if self.noise_edge_gain < 0:
            raise ConfigError("noise_edge_gain must be non-negative")
        sensors = np.asarray(self.sensor_positions, dtype=float).reshape(-1, 2)
        if sensors.shape[0] < 2:
            raise ConfigError(f"need at least 2 sensors, got {sensors.shape[0]}")
        if not self._inside(sensors):
            raise ConfigError("all sensors must lie on the plate")
        if self.source_grid is not None:
            src = np.asarray(self.source_grid, dtype=float).reshape(-1, 2)
            if src.shape[0] == 0 or not self._inside(src):
                raise ConfigError("source grid must be non-empty and on the plate")
        elif len(self.grid_shape) != 2 or min(self.grid_shape) < 1:
            raise ConfigError("grid_shape must be two positive integers")

    def _inside(self, pts):
        return bool(np.all((pts[:, 0] >= 0) & (pts[:, 0] <= self.length)
                           & (pts[:, 1] >= 0) & (pts[:, 1] <= self.width)))

    @property
    def sensors(self):
        return np.asarray(self.sensor_positions, dtype=float).reshape(-1, 2)

    @property
    def sources(self):
        if self.source_grid is not None:
            return np.asarray(self.source_grid, dtype=float).reshape(-1, 2)
        nx, ny = self.grid_shape
        gx = (np.arange(nx) + 0.5) * self.length / nx
        gy = (np.arange(ny) + 0.5) * self.width / ny
        xx, yy = np.meshgrid(gx, gy, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()])

    @property
    def pairs(self):
        return list(itertools.combinations(range(self.sensors.shape[0]), 2))

    def to_dict(self):
        d = asdict(self)
        d["sensor_positions"] = [list(map(float, p)) for p in self.sensor_positions]
        if self.source_grid is not None:
            d["source_grid"] = [list(map(float, p)) for p in self.source_grid]
        d["grid_shape"] = list(self.grid_shape)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown plate key(s): {sorted(unknown)}")
        d = dict(d)
        if "sensor_positions" in d:
            d["sensor_positions"] = tuple(tuple(map(float, p)) for p in d["sensor_positions"])
        if d.get("source_grid") is not None:
            d["source_grid"] = tuple(tuple(map(float, p)) for p in d["source_grid"])
        if "grid_shape" in d:
            d["grid_shape"] = tuple(int(v) for v in d["grid_shape"])
        return cls(**d)


@dataclass(frozen=True)
class NormalisationRecord:
    """Input scale (longest edge) and pooled output mean / std."""

    input_scale: float
    output_mean: float
    output_std: float

    def __post_init__(self):
        if not self.input_scale > 0:
            raise DomainError("input_scale must be positive")
        if not self.output_std > 0:
            raise DomainError("output_std must be positive")


@dataclass
class TaskDataset:
    """Observations of one sensor-pair experiment.

    ``split_mask`` is True for training points.
    """

    pair_id: tuple
    separation: float
    inputs: np.ndarray
    outputs: np.ndarray
    split_mask: np.ndarray = None
    task_id: int = 0

    def __post_init__(self):
        self.pair_id = tuple(int(v) for v in self.pair_id)
        self.inputs = np.asarray(self.inputs, dtype=float).reshape(-1, 2)
        self.outputs = np.asarray(self.outputs, dtype=float).ravel()
        if self.inputs.shape[0] != self.outputs.shape[0]:
            raise DomainError("inputs and outputs differ in length")
        if self.split_mask is None:
            self.split_mask = np.ones(self.outputs.shape[0], dtype=bool)
        self.split_mask = np.asarray(self.split_mask, dtype=bool).ravel()
        if self.split_mask.shape[0] != self.outputs.shape[0]:
            raise DomainError("split_mask length does not match the data")

    def __len__(self):
        return self.outputs.shape[0]

    @property
    def train_inputs(self):
        return self.inputs[self.split_mask]

    @property
    def train_outputs(self):
        return self.outputs[self.split_mask]

    @property
    def test_inputs(self):
        return self.inputs[~self.split_mask]

    @property
    def test_outputs(self):
        return self.outputs[~self.split_mask]

    @property
    def n_train(self):
        return int(self.split_mask.sum())

    @property
    def n_test(self):
        return len(self) - self.n_train

    @property
    def label(self):
        return f"{self.pair_id[0]}-{self.pair_id[1]}"

    def subset(self, train_index, test_index=None):
        """New dataset from explicit train (and optional test) row indices."""
        train_index = np.asarray(train_index, dtype=int)
        if test_index is None:
            test_index = np.flatnonzero(~np.isin(np.arange(len(self)), train_index))
        idx = np.concatenate([train_index, np.asarray(test_index, dtype=int)])
        mask = np.zeros(idx.shape[0], dtype=bool)
        mask[:train_index.shape[0]] = True
        return replace(self, inputs=self.inputs[idx], outputs=self.outputs[idx],
                       split_mask=mask)


@dataclass
class Population:
    tasks: list
    normalisation: NormalisationRecord
    plate: PlateConfig | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.tasks)

    def __getitem__(self, k):
        return self.tasks[k]

    @property
    def separations(self):
        return np.array([t.separation for t in self.tasks])


def noiseless_delta_toa(config, points, pair):
    """Straight-line arrival-time difference ``A_j - A_k`` in raw units."""
    s = config.sensors
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    j, k = pair
    dj = np.linalg.norm(pts - s[j], axis=1)
    dk = np.linalg.norm(pts - s[k], axis=1)
    return (dj - dk) / config.wave_speed


def noise_std(config, points, pair):
    """Raw noise std. dev., growing linearly with (normalised) distance to the pair centroid."""
    s = config.sensors
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    centroid = 0.5 * (s[pair[0]] + s[pair[1]])
    d = np.linalg.norm(pts - centroid, axis=1) / config.length
    return config.noise_base * (1.0 + config.noise_edge_gain * d)


def normalise(raw_tasks, input_scale):
    """Scale inputs by ``input_scale`` and z-score outputs pooled over all tasks."""
    pooled = np.concatenate([t.outputs for t in raw_tasks]) if raw_tasks else np.zeros(0)
    if pooled.size < 2 or not np.std(pooled) > 0:
        raise DomainError("pooled outputs have zero variance")
    record = NormalisationRecord(float(input_scale), float(np.mean(pooled)),
                                 float(np.std(pooled)))
    return [_apply(t, record, forward=True) for t in raw_tasks], record


def denormalise(tasks, record):
    return [_apply(t, record, forward=False) for t in tasks]


def _apply(task, rec, forward):
    if forward:
        inputs = task.inputs / rec.input_scale
        outputs = (task.outputs - rec.output_mean) / rec.output_std
        sep = task.separation / rec.input_scale
    else:
        inputs = task.inputs * rec.input_scale
        outputs = task.outputs * rec.output_std + rec.output_mean
        sep = task.separation * rec.input_scale
    return replace(task, inputs=inputs, outputs=outputs, separation=sep,
                   split_mask=task.split_mask.copy())


def simulate_population(config):
    """Simulate every sensor pair and normalise the population.

    Returns
    -------
    tasks : list of TaskDataset
        Normalised, one per pair, all points flagged as training.
    record : NormalisationRecord
    """
    rng = np.random.default_rng(config.seed)
    sources = config.sources
    sensors = config.sensors
    raw = []
    for k, pair in enumerate(config.pairs):
        clean = noiseless_delta_toa(config, sources, pair)
        y = clean + rng.normal(size=clean.shape[0]) * noise_std(config, sources, pair)
        sep = float(np.linalg.norm(sensors[pair[0]] - sensors[pair[1]]))
        raw.append(TaskDataset(pair, sep, sources.copy(), y, task_id=k))
    return normalise(raw, config.length)


def split(dataset, n_train, seed):
    """Random train/test split without replacement, keeping row order."""
    n = len(dataset)
    if not (1 <= n_train <= n):
        raise DomainError(f"n_train must be in [1, {n}], got {n_train}")
    rng = np.random.default_rng(seed)
    mask = np.zeros(n, dtype=bool)
    mask[rng.choice(n, size=n_train, replace=False)] = True
    return replace(dataset, split_mask=mask)


def split_population(tasks, n_train, seed):
    return [split(t, n_train, [seed, t.task_id]) for t in tasks]


def make_population(config, n_train=100, split_seed=None):
    """Simulate, normalise and split in one go."""
    tasks, record = simulate_population(config)
    seed = config.seed if split_seed is None else split_seed
    tasks = split_population(tasks, min(n_train, len(tasks[0])), seed)
    return Population(tasks, record, config)


def save_dataset(population, path):
    """Write ``path`` (CSV) and its ``.json`` metadata sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for t in population.tasks:
            pid, sep = t.label, _fmt(t.separation)
            for (x1, x2), y, m in zip(t.inputs, t.outputs, t.split_mask):
                w.writerow((pid, sep, _fmt(x1), _fmt(x2), _fmt(y), "train" if m else "test"))
    meta = {
        "format_version": FORMAT_VERSION,
        "plate": population.plate.to_dict() if population.plate is not None else None,
        "normalisation": asdict(population.normalisation),
        "tasks": [t.label for t in population.tasks],
        "meta": population.meta,
    }
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def load_dataset(path):
    """Read a population written by :func:`save_dataset`."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"dataset file not found: {path}")
    meta_path = path.with_suffix(".json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    if meta.get("format_version", FORMAT_VERSION) != FORMAT_VERSION:
        raise ConfigError(f"unsupported dataset format version {meta['format_version']}")

    rows = {}
    order = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("empty dataset file", line=1)
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise ParseError(f"missing column(s): {', '.join(missing)}", line=1)
        col = {c: header.index(c) for c in CSV_COLUMNS}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
            try:
                pid = row[col["pair_id"]]
                pair = tuple(int(v) for v in pid.split("-"))
                if len(pair) != 2:
                    raise ValueError(pid)
                sep = float(row[col["sep"]])
                x = (float(row[col["x1"]]), float(row[col["x2"]]))
                y = float(row[col["y"]])
            except ValueError as exc:
                raise ParseError(f"malformed value ({exc})", line=lineno) from None
            flag = row[col["split"]]
            if flag not in ("train", "test"):
                raise ParseError(f"split must be 'train' or 'test', got {flag!r}", line=lineno)
            if pid not in rows:
                rows[pid] = {"pair": pair, "sep": sep, "x": [], "y": [], "m": []}
                order.append(pid)
            rows[pid]["x"].append(x)
            rows[pid]["y"].append(y)
            rows[pid]["m"].append(flag == "train")
    if not order:
        raise ParseError("dataset file has no data rows", line=2)

    tasks = [TaskDataset(r["pair"], r["sep"], np.array(r["x"]), np.array(r["y"]),
                         np.array(r["m"]), task_id=k)
             for k, r in enumerate(rows[p] for p in order)]
    if "normalisation" in meta:
        rec = NormalisationRecord(**meta["normalisation"])
    else:
        rec = NormalisationRecord(1.0, 0.0, 1.0)
    plate = PlateConfig.from_dict(meta["plate"]) if meta.get("plate") else None
    return Population(tasks, rec, plate, meta.get("meta", {}))


def tasks_equal(a, b):
    """Field-by-field bit equality of two task lists (documented fields only)."""
    if len(a) != len(b):
        return False
    for s, t in zip(a, b):
        if (s.pair_id != t.pair_id or s.separation != t.separation
                or not np.array_equal(s.inputs, t.inputs)
                or not np.array_equal(s.outputs, t.outputs)
                or not np.array_equal(s.split_mask, t.split_mask)):
            return False
    return True


def band_masks(points, centre, fraction=0.1):
    """Masks of the ``fraction`` of points nearest to and farthest from ``centre``."""
    d = np.linalg.norm(np.asarray(points, dtype=float) - np.asarray(centre, dtype=float), axis=1)
    lo, hi = np.quantile(d, [fraction, 1.0 - fraction])
    return d <= lo, d >= hi


def pair_centroid(config, pair, normalised=True):
    s = config.sensors
    c = 0.5 * (s[pair[0]] + s[pair[1]])
    return c / config.length if normalised else c

