"""CSV ingestion, split management, and forecast / latent exports.

Input CSVs are UTF-8, comma-separated, with a header row, an optional
leading date column (kept only as metadata) and one column per channel.
Every float written out uses 17 significant digits so it reads back
bit-for-bit.
"""

from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

FLOAT_FMT = "{:.17g}"
ETTH1_COLUMNS = ["HUFL", "HULL", "MUFL", "MULL", "LUFL", "LULL", "OT"]


@dataclass
class DatasetSpec:
    path: str
    date_column: str | None = "date"
    value_columns: list = field(default_factory=list)
    splits: tuple = (0, 0, 0)
    frequency: str = ""

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        if "splits" in known:
            known["splits"] = tuple(int(v) for v in known["splits"])
        return cls(**known)


@dataclass
class Dataset:
    """Loaded series ``values [C, rows]`` with train-split statistics."""

    values: np.ndarray
    columns: list
    dates: list
    boundaries: tuple
    mean: np.ndarray
    std: np.ndarray

    @property
    def standardized(self) -> np.ndarray:
        return (self.values - self.mean) / self.std

    def split(self, name: str, lookback: int = 0, standardize: bool = True) -> np.ndarray:
        """Rows of one split; val/test start ``lookback`` rows early so their
        first window's history comes from the preceding split."""
        train_end, val_end, test_end = self.boundaries
        data = self.standardized if standardize else self.values
        if name == "train":
            lo, hi = 0, train_end
        elif name == "val":
            lo, hi = max(train_end - lookback, 0), val_end
        elif name == "test":
            lo, hi = max(val_end - lookback, 0), test_end
        else:
            raise ConfigError(f"unknown split {name!r}")
        if hi <= lo:
            raise DataError(f"split {name!r} is empty")
        return data[:, lo:hi]


def _parse_float(text: str, row: int, col: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"unparseable value {text!r} at row {row}, column {col!r}") from None
    if not math.isfinite(value):
        raise DataError(f"non-finite value {text!r} at row {row}, column {col!r}")
    return value


def load_csv(spec: DatasetSpec) -> Dataset:
    """Read ``spec.path`` into a :class:`Dataset`.

    Row numbers in error messages are 1-based file lines (the header is 1).
    Normalization statistics come from the train split only.
    """
    if not os.path.isfile(spec.path):
        raise DataError(f"dataset file not found: {spec.path}")
    with open(spec.path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{spec.path} is empty") from None
        date_col = spec.date_column if spec.date_column in header else None
        if spec.date_column and date_col is None and spec.value_columns:
            raise DataError(f"date column {spec.date_column!r} not in header")
        columns = list(spec.value_columns) or [h for h in header if h != date_col]
        missing = [c for c in columns if c not in header]
        if missing:
            raise DataError(f"columns not found in header: {missing}")
        idx = [header.index(c) for c in columns]
        date_idx = header.index(date_col) if date_col else None
        rows, dates = [], []
        for line, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != len(header):
                raise DataError(f"row {line} has {len(record)} fields, header has {len(header)}")
            rows.append([_parse_float(record[i], line, header[i]) for i in idx])
            if date_idx is not None:
                dates.append(record[date_idx])
    if not rows:
        raise DataError(f"{spec.path} has no data rows")
    values = np.asarray(rows, dtype=np.float64).T.copy()
    n = values.shape[1]

    train, val, test = spec.splits
    if train == 0 and val == 0 and test == 0:
        train = n
    if min(train, val, test) < 0 or train + val + test > n:
        raise DataError(f"splits {spec.splits} exceed {n} rows")
    if train < 1:
        raise DataError("train split is empty")
    boundaries = (train, train + val, train + val + test)
    mean = values[:, :train].mean(axis=1, keepdims=True)
    std = values[:, :train].std(axis=1, keepdims=True)
    std = np.where(std < 1e-8, 1.0, std)
    return Dataset(values, columns, dates, boundaries, mean, std)


# -- atomic text output --------------------------------------------------------
def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: str, header, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header:
        writer.writerow(header)
    for row in rows:
        writer.writerow([FLOAT_FMT.format(v) if isinstance(v, (float, np.floating)) else v for v in row])
    _atomic_write(path, buf.getvalue())


def write_matrix(path: str, matrix) -> None:
    write_csv(path, None, np.atleast_2d(np.asarray(matrix, dtype=np.float64)).tolist())


def read_matrix(path: str) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


def read_table(path: str) -> dict:
    """Columns of a headed CSV; numeric columns become float arrays, others stay text."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader if row]
    table = {}
    for i, name in enumerate(header):
        col = [row[i] for row in rows]
        try:
            table[name] = np.array([float(v) for v in col], dtype=np.float64)
        except ValueError:
            table[name] = np.array(col)
    return table


# -- exports -------------------------------------------------------------------
def _svg_plot(series: dict, title: str, width: int = 640, height: int = 240) -> str:
    """Minimal deterministic line plot; ``series`` maps label -> (values, colour)."""
    pad = 30
    finite = [np.asarray(v) for v, _ in series.values() if len(v)]
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<text x="{pad}" y="16" font-size="12" font-family="sans-serif">{title}</text>',
        f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" fill="none" stroke="#999"/>',
    ]
    if finite:
        lo = min(float(v.min()) for v in finite)
        hi = max(float(v.max()) for v in finite)
        span = hi - lo or 1.0
        n = max(len(v) for v in finite)
        for i, (label, (values, colour)) in enumerate(series.items()):
            values = np.asarray(values)
            if not len(values):
                continue
            xs = pad + np.arange(len(values)) * (width - 2 * pad) / max(n - 1, 1)
            ys = height - pad - (values - lo) / span * (height - 2 * pad)
            pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
            lines.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{pts}"/>')
            lines.append(
                f'<text x="{width - pad - 80}" y="{pad + 14 * (i + 1)}" font-size="11" '
                f'font-family="sans-serif" fill="{colour}">{label}</text>'
            )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def export_forecast(point, samples, y_true, out_dir: str, names=None) -> list:
    """One CSV and one SVG per channel; returns the written paths.

    ``point`` and ``y_true`` are ``[C, T]``, ``samples`` is ``[M, C, T]``
    (``M`` may be 0, in which case quantile columns repeat the point forecast).
    """
    point = np.atleast_2d(np.asarray(point, dtype=np.float64))
    y_true = np.atleast_2d(np.asarray(y_true, dtype=np.float64))
    C, T = point.shape
    samples = np.asarray(samples, dtype=np.float64) if samples is not None else np.zeros((0, C, T))
    names = list(names) if names is not None else [f"ch{c}" for c in range(C)]
    if samples.shape[0] > 0 and T > 0:
        q10, q50, q90 = np.quantile(samples, [0.1, 0.5, 0.9], axis=0)
    else:
        q10 = q50 = q90 = point
    written = []
    for c in range(C):
        base = os.path.join(out_dir, f"forecast_{names[c]}")
        rows = [
            [t, float(y_true[c, t]), float(point[c, t]), float(q10[c, t]), float(q50[c, t]), float(q90[c, t])]
            for t in range(T)
        ]
        write_csv(base + ".csv", ["step", "truth", "point", "q10", "q50", "q90"], rows)
        svg = _svg_plot(
            {"truth": (y_true[c], "#1f77b4"), "forecast": (point[c], "#ff7f0e")},
            f"channel {names[c]}",
        )
        _atomic_write(base + ".svg", svg)
        written += [base + ".csv", base + ".svg"]
    return written


def export_latents(gen, post, out_dir: str, index: int = 0) -> dict:
    """Write per-model matrices (patch tensors, hidden states, latent mean and
    log-variance) for batch element ``index``; returns name -> path."""
    mats = {
        "gen_xp": gen.patch_outputs.data[index],
        "gen_h": gen.hidden.data[index],
        "gen_z_mean": np.stack([lat.mean.data[index] for lat in gen.latents]),
        "gen_z_logvar": np.stack([lat.logvar.data[index] for lat in gen.latents]),
        "inf_xp": post.embedded.data[index],
        "inf_h": post.fwd_hidden.data[index],
        "inf_g": post.bwd_hidden.data[index],
        "inf_z_mean": np.stack([lat.mean.data[index] for lat in post.latents]),
        "inf_z_logvar": np.stack([lat.logvar.data[index] for lat in post.latents]),
    }
    paths = {}
    for name, mat in mats.items():
        path = os.path.join(out_dir, f"{name}.csv")
        write_matrix(path, mat)
        paths[name] = path
    return paths


# -- synthetic fixtures --------------------------------------------------------
def _hourly_dates(rows: int) -> list:
    start = np.datetime64("2016-07-01T00:00")
    return [str(start + np.timedelta64(h, "h")).replace("T", " ") + ":00" for h in range(rows)]


def write_sine_csv(path: str, rows: int = 600, period: int = 24, noise: float = 0.05, seed: int = 0) -> None:
    """Single-channel ``sin(2 pi t / period)`` plus Gaussian noise of std ``noise``."""
    rng = np.random.default_rng(seed)
    t = np.arange(rows)
    y = np.sin(2 * np.pi * t / period) + noise * rng.standard_normal(rows)
    write_csv(path, ["date", "value"], [[d, float(v)] for d, v in zip(_hourly_dates(rows), y)])


def write_ett_like_csv(path: str, rows: int = 3000, seed: int = 0) -> None:
    """Hourly 7-channel series in the ETTh1 column layout.

    Each channel mixes daily and weekly cycles, a slow random-walk level and
    autocorrelated noise, with channel-specific weights.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(rows)
    cols = []
    for c in range(len(ETTH1_COLUMNS)):
        amp_d, amp_w = rng.uniform(0.5, 2.0), rng.uniform(0.2, 1.0)
        phase = rng.uniform(0, 2 * np.pi)
        daily = amp_d * np.sin(2 * np.pi * t / 24 + phase) + 0.4 * amp_d * np.sin(4 * np.pi * t / 24 + 2 * phase)
        weekly = amp_w * np.sin(2 * np.pi * t / 168 + phase / 2)
        level = np.cumsum(rng.normal(0, 0.03, rows))
        ar = np.zeros(rows)
        shocks = rng.normal(0, 0.3, rows)
        for i in range(1, rows):
            ar[i] = 0.7 * ar[i - 1] + shocks[i]
        cols.append(5.0 + daily + weekly + level + ar)
    data = np.stack(cols, axis=1)
    rows_out = [[d, *map(float, r)] for d, r in zip(_hourly_dates(rows), data)]
    write_csv(path, ["date", *ETTH1_COLUMNS], rows_out)
