"""Spectral SPL records: CSV ingestion, categorical selection and synthesis."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Any, Mapping, Sequence

import numpy as np

from .exceptions import DimensionError, ParseError, SchemaError, SelectionError
from .surrogate import ParameterVector, SurrogateSpec, evaluate

NUMERIC_COLUMNS = ("frequency_hz", "speed_kmph", "spl_db")

# Third-octave band centres, 100 Hz to 8 kHz.
THIRD_OCTAVE_100_8K = (
    100.0, 125.0, 160.0, 200.0, 250.0, 315.0, 400.0, 500.0, 630.0, 800.0,
    1000.0, 1250.0, 1600.0, 2000.0, 2500.0, 3150.0, 4000.0, 5000.0, 6300.0, 8000.0,
)
AERO_SPEEDS_KMH = (140.0, 200.0)
TIRE_SPEEDS_KMH = (50.0, 70.0, 90.0)


@dataclass(frozen=True)
class SpectrumRecord:
    frequency_hz: float
    speed: float
    spl_db: float
    categories: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not (self.frequency_hz > 0 and math.isfinite(self.frequency_hz)):
            raise ParseError(f"frequency_hz must be positive and finite, got {self.frequency_hz}")
        if not (self.speed > 0 and math.isfinite(self.speed)):
            raise ParseError(f"speed must be positive and finite, got {self.speed}")
        if not math.isfinite(self.spl_db):
            raise ParseError(f"spl_db must be finite, got {self.spl_db}")
        object.__setattr__(self, "categories",
                           MappingProxyType({str(k): str(v) for k, v in self.categories.items()}))

    def to_dict(self) -> dict[str, Any]:
        return {"frequency_hz": self.frequency_hz, "speed_kmph": self.speed,
                "spl_db": self.spl_db, "categories": dict(self.categories)}


@dataclass(frozen=True)
class CategoricalSelector:
    constraints: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "constraints",
                           MappingProxyType({str(k): str(v) for k, v in self.constraints.items()}))

    def matches(self, record: SpectrumRecord) -> bool:
        return all(record.categories.get(k) == v for k, v in self.constraints.items())


@dataclass(frozen=True)
class Dataset:
    """Immutable ordered collection of records sharing one category schema."""

    records: tuple[SpectrumRecord, ...]
    schema: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "schema", tuple(self.schema))
        keys = set(self.schema)
        for i, rec in enumerate(self.records):
            if set(rec.categories) != keys:
                raise SchemaError(
                    f"record {i} has categories {sorted(rec.categories)}, "
                    f"schema is {sorted(keys)}"
                )

    def __len__(self) -> int:
        return len(self.records)

    def speeds(self) -> np.ndarray:
        return np.array([r.speed for r in self.records], dtype=float)

    def frequencies(self) -> np.ndarray:
        return np.array([r.frequency_hz for r in self.records], dtype=float)

    def spl(self) -> np.ndarray:
        return np.array([r.spl_db for r in self.records], dtype=float)

    def to_xy(self) -> tuple[np.ndarray, np.ndarray]:
        """Design matrix ``[speed_kmph, frequency_hz]`` and response vector."""
        return np.column_stack([self.speeds(), self.frequencies()]), self.spl()

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return Dataset(tuple(self.records[i] for i in indices), self.schema)

    @classmethod
    def from_arrays(cls, speeds, frequencies, spl, categories=None, schema=()) -> "Dataset":
        speeds, frequencies, spl = (np.asarray(a, dtype=float).ravel()
                                    for a in (speeds, frequencies, spl))
        if not (speeds.size == frequencies.size == spl.size):
            raise DimensionError("speeds, frequencies and spl must have equal lengths")
        cats = categories if categories is not None else [{}] * speeds.size
        recs = tuple(SpectrumRecord(float(f), float(v), float(y), c)
                     for v, f, y, c in zip(speeds, frequencies, spl, cats))
        return cls(recs, tuple(schema))

    def to_dict(self) -> dict[str, Any]:
        return {"schema": list(self.schema), "records": [r.to_dict() for r in self.records]}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Dataset":
        try:
            recs = tuple(
                SpectrumRecord(float(r["frequency_hz"]), float(r["speed_kmph"]),
                               float(r["spl_db"]), r.get("categories", {}))
                for r in data["records"]
            )
        except KeyError as err:
            raise SchemaError(f"dataset JSON is missing key {err.args[0]!r}") from None
        return cls(recs, tuple(data.get("schema", ())))

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def from_json(cls, path) -> "Dataset":
        return cls.from_dict(json.loads(Path(path).read_text()))


def load_csv(path, schema: Sequence[str] = ()) -> Dataset:
    """Read a dataset from CSV, keeping file order.

    Row numbers in error messages count data rows from 1 (header excluded).
    """
    schema = tuple(schema)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in NUMERIC_COLUMNS + schema:
            if col not in header:
                raise SchemaError(f"missing column {col!r} in {path}")
        records = []
        for row_no, row in enumerate(reader, start=1):
            values = {}
            for col in NUMERIC_COLUMNS:
                raw = row[col]
                try:
                    val = float(raw)
                except (TypeError, ValueError):
                    raise ParseError(f"row {row_no}: {col}={raw!r} is not numeric",
                                     row=row_no) from None
                if not math.isfinite(val):
                    raise ParseError(f"row {row_no}: {col}={raw!r} is not finite", row=row_no)
                values[col] = val
            try:
                records.append(SpectrumRecord(values["frequency_hz"], values["speed_kmph"],
                                              values["spl_db"], {a: row[a] for a in schema}))
            except ParseError as err:
                raise ParseError(f"row {row_no}: {err}", row=row_no) from None
    return Dataset(tuple(records), schema)


def write_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(NUMERIC_COLUMNS) + list(dataset.schema))
        for r in dataset.records:
            writer.writerow([repr(r.frequency_hz), repr(r.speed), repr(r.spl_db)]
                            + [r.categories[a] for a in dataset.schema])


def select(dataset: Dataset, selector: CategoricalSelector | Mapping[str, str]) -> Dataset:
    """Records matching every constraint, in their original order."""
    if not isinstance(selector, CategoricalSelector):
        selector = CategoricalSelector(selector)
    unknown = [k for k in selector.constraints if k not in dataset.schema]
    if unknown:
        raise SelectionError(f"unknown attribute(s) {unknown}; schema is {list(dataset.schema)}")
    return Dataset(tuple(r for r in dataset.records if selector.matches(r)), dataset.schema)


@dataclass
class SynthConfig:
    generating_spec: SurrogateSpec
    true_params: ParameterVector
    speeds: Sequence[float] = AERO_SPEEDS_KMH
    frequency_bands: Sequence[float] = THIRD_OCTAVE_100_8K
    noise_sd_db: Any = 1.0
    replicate_count: int = 1
    rng_seed: int = 0
    categories: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        noise = np.asarray(self.noise_sd_db, dtype=float)
        if noise.ndim > 0 and noise.size != len(self.frequency_bands):
            raise DimensionError(
                f"per-band noise has {noise.size} entries for {len(self.frequency_bands)} bands"
            )
        if np.any(noise < 0):
            raise DimensionError("noise_sd_db must be non-negative")
        if self.replicate_count < 1:
            raise DimensionError("replicate_count must be positive")

    def to_dict(self) -> dict[str, Any]:
        return {
            "generating_spec": self.generating_spec.to_dict(),
            "true_params": self.true_params.to_dict(),
            "speeds": [float(s) for s in self.speeds],
            "frequency_bands": [float(f) for f in self.frequency_bands],
            "noise_sd_db": np.asarray(self.noise_sd_db, dtype=float).tolist(),
            "replicate_count": int(self.replicate_count),
            "rng_seed": int(self.rng_seed),
            "categories": dict(self.categories),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SynthConfig":
        spec = SurrogateSpec.from_dict(data["generating_spec"])
        kwargs = {k: data[k] for k in ("speeds", "frequency_bands", "noise_sd_db",
                                       "replicate_count", "rng_seed", "categories") if k in data}
        return cls(spec, ParameterVector.from_dict(data["true_params"]), **kwargs)


def synthesize(cfg: SynthConfig) -> Dataset:
    """Noisy draws from a surrogate mean on a (speed, band, replicate) grid.

    Records are ordered speed-major, then band, then replicate.
    """
    spec = cfg.generating_spec
    cfg.true_params.validate(spec)
    speeds = np.asarray(cfg.speeds, dtype=float)
    bands = np.asarray(cfg.frequency_bands, dtype=float)
    reps = int(cfg.replicate_count)
    v = np.repeat(speeds, bands.size * reps)
    f = np.tile(np.repeat(bands, reps), speeds.size)
    noise = np.asarray(cfg.noise_sd_db, dtype=float)
    sd = (np.full(v.size, float(noise)) if noise.ndim == 0
          else np.tile(np.repeat(noise, reps), speeds.size))
    mu = np.asarray(evaluate(spec, cfg.true_params, v, f), dtype=float)
    rng = np.random.default_rng(cfg.rng_seed)
    y = mu + sd * rng.standard_normal(v.size)
    cats = dict(cfg.categories)
    return Dataset.from_arrays(v, f, y, [cats] * v.size, schema=tuple(sorted(cats)))
