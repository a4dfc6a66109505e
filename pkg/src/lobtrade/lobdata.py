"""LOB snapshot ingestion, feature windows and movement labels.

CSV wire format (one row per book update):

    ts,day,ap1,av1,...,ap10,av10,bp1,bv1,...,bp10,bv10

with integer timestamps (nanoseconds, monotone within a day), integer
prices in ticks and integer volumes in shares.  Prices stay integer
ticks internally; conversion to real numbers happens only at the
normalization and metric boundaries.

Feature matrices use the per-level interleaved column order

    ap1, av1, bp1, bv1, ap2, av2, bp2, bv2, ..., ap10, av10, bp10, bv10

(10 levels x {ask price, ask volume, bid price, bid volume} = 40
columns), z-scored per column against trailing-day statistics.

Windows can be cached in a flat binary file: little-endian, magic
``BDL1``, header (u32 version, u32 count, u32 T, u32 F), then the
window values as count*T*F float64 row-major, then per-window int8
labels, int64 anchor timestamps, int32 anchor indices, int32 day ids.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

N_LEVELS = 10
N_FEATURES = 4 * N_LEVELS

FEATURE_COLUMNS = tuple(
    f"{kind}{lvl}" for lvl in range(1, N_LEVELS + 1) for kind in ("ap", "av", "bp", "bv")
)

CSV_HEADER = (
    "ts,day,"
    + ",".join(f"ap{i},av{i}" for i in range(1, N_LEVELS + 1))
    + ","
    + ",".join(f"bp{i},bv{i}" for i in range(1, N_LEVELS + 1))
)

_CACHE_MAGIC = b"BDL1"
_CACHE_VERSION = 1


class ParseError(ValueError):
    """Malformed CSV input; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class ValidationError(ValueError):
    """A snapshot violates book invariants."""


class ZeroVarianceError(ValueError):
    """A feature column has zero variance; names the column."""


@dataclass(frozen=True)
class Snapshot:
    """One LOB state: 10 ask and 10 bid levels, best-first."""

    timestamp: int
    day_id: int
    asks: tuple[tuple[int, int], ...]  # (price ticks, volume shares), best-first
    bids: tuple[tuple[int, int], ...]

    def validate(self) -> None:
        if len(self.asks) != N_LEVELS or len(self.bids) != N_LEVELS:
            raise ValidationError(
                f"ts {self.timestamp}: expected {N_LEVELS} levels per side"
            )
        ask_p = [p for p, _ in self.asks]
        bid_p = [p for p, _ in self.bids]
        if any(b >= a for a, b in zip(ask_p[1:], ask_p[:-1])):
            raise ValidationError(f"ts {self.timestamp}: ask prices not strictly increasing")
        if any(a >= b for a, b in zip(bid_p[:-1], bid_p[1:])):
            raise ValidationError(f"ts {self.timestamp}: bid prices not strictly decreasing")
        if ask_p[0] <= bid_p[0]:
            raise ValidationError(
                f"ts {self.timestamp}: crossed book (best ask {ask_p[0]} <= best bid {bid_p[0]})"
            )
        if any(v < 0 for _, v in self.asks) or any(v < 0 for _, v in self.bids):
            raise ValidationError(f"ts {self.timestamp}: negative volume")
        if self.asks[0][1] <= 0 or self.bids[0][1] <= 0:
            raise ValidationError(f"ts {self.timestamp}: empty level-1 volume")


def mid_price(s: Snapshot) -> float:
    """(best ask + best bid) / 2, in ticks."""
    return (s.asks[0][0] + s.bids[0][0]) / 2.0


class Day:
    """Columnar store for one day of snapshots.

    Arrays: ts (n,), ask_p/ask_v/bid_p/bid_v (n, 10), all int64.
    """

    def __init__(
        self,
        day_id: int,
        ts: np.ndarray,
        ask_p: np.ndarray,
        ask_v: np.ndarray,
        bid_p: np.ndarray,
        bid_v: np.ndarray,
        validate: bool = True,
    ):
        self.day_id = int(day_id)
        self.ts = np.asarray(ts, dtype=np.int64)
        self.ask_p = np.asarray(ask_p, dtype=np.int64)
        self.ask_v = np.asarray(ask_v, dtype=np.int64)
        self.bid_p = np.asarray(bid_p, dtype=np.int64)
        self.bid_v = np.asarray(bid_v, dtype=np.int64)
        if validate:
            self.validate()

    def __len__(self) -> int:
        return len(self.ts)

    def validate(self) -> None:
        n = len(self.ts)
        for name, arr in (
            ("ask_p", self.ask_p),
            ("ask_v", self.ask_v),
            ("bid_p", self.bid_p),
            ("bid_v", self.bid_v),
        ):
            if arr.shape != (n, N_LEVELS):
                raise ValidationError(f"day {self.day_id}: {name} shape {arr.shape}")
        if n == 0:
            return
        if np.any(np.diff(self.ts) < 0):
            raise ValidationError(f"day {self.day_id}: timestamps decrease")
        if np.any(np.diff(self.ask_p, axis=1) <= 0):
            raise ValidationError(f"day {self.day_id}: ask prices not strictly increasing")
        if np.any(np.diff(self.bid_p, axis=1) >= 0):
            raise ValidationError(f"day {self.day_id}: bid prices not strictly decreasing")
        crossed = self.ask_p[:, 0] <= self.bid_p[:, 0]
        if np.any(crossed):
            i = int(np.argmax(crossed))
            raise ValidationError(
                f"day {self.day_id}: crossed book at ts {self.ts[i]} "
                f"(best ask {self.ask_p[i, 0]} <= best bid {self.bid_p[i, 0]})"
            )
        if np.any(self.ask_v < 0) or np.any(self.bid_v < 0):
            raise ValidationError(f"day {self.day_id}: negative volume")
        if np.any(self.ask_v[:, 0] <= 0) or np.any(self.bid_v[:, 0] <= 0):
            raise ValidationError(f"day {self.day_id}: empty level-1 volume")

    def snapshot(self, i: int) -> Snapshot:
        return Snapshot(
            timestamp=int(self.ts[i]),
            day_id=self.day_id,
            asks=tuple((int(p), int(v)) for p, v in zip(self.ask_p[i], self.ask_v[i])),
            bids=tuple((int(p), int(v)) for p, v in zip(self.bid_p[i], self.bid_v[i])),
        )

    def snapshots(self) -> Iterator[Snapshot]:
        for i in range(len(self)):
            yield self.snapshot(i)

    @classmethod
    def from_snapshots(cls, snaps: Sequence[Snapshot], validate: bool = True) -> "Day":
        if not snaps:
            raise ValueError("empty snapshot sequence")
        day_id = snaps[0].day_id
        if any(s.day_id != day_id for s in snaps):
            raise ValueError("snapshots span multiple days")
        ts = np.array([s.timestamp for s in snaps], dtype=np.int64)
        ask_p = np.array([[p for p, _ in s.asks] for s in snaps], dtype=np.int64)
        ask_v = np.array([[v for _, v in s.asks] for s in snaps], dtype=np.int64)
        bid_p = np.array([[p for p, _ in s.bids] for s in snaps], dtype=np.int64)
        bid_v = np.array([[v for _, v in s.bids] for s in snaps], dtype=np.int64)
        return cls(day_id, ts, ask_p, ask_v, bid_p, bid_v, validate=validate)

    def mid_half_ticks(self) -> np.ndarray:
        """Mid-price in half-tick units (exact integers)."""
        return self.ask_p[:, 0] + self.bid_p[:, 0]

    def mid_prices(self) -> np.ndarray:
        """Mid-price in ticks (multiples of 0.5, exact in float64)."""
        return self.mid_half_ticks() / 2.0

    def features(self) -> np.ndarray:
        """Raw (n, 40) feature matrix in the interleaved column order."""
        out = np.empty((len(self), N_FEATURES), dtype=np.float64)
        out[:, 0::4] = self.ask_p
        out[:, 1::4] = self.ask_v
        out[:, 2::4] = self.bid_p
        out[:, 3::4] = self.bid_v
        return out


# ---------------------------------------------------------------------------
# CSV parsing / writing
# ---------------------------------------------------------------------------


def _parse_rows(text: str) -> list[tuple[int, ...]]:
    lines = text.splitlines()
    if not lines:
        raise ParseError(1, "empty input")
    if lines[0].strip() != CSV_HEADER:
        raise ParseError(1, f"bad header (expected '{CSV_HEADER[:24]}...')")
    rows = []
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2 + 4 * N_LEVELS:
            raise ParseError(line_no, f"expected {2 + 4 * N_LEVELS} fields, got {len(parts)}")
        try:
            rows.append(tuple(int(p) for p in parts))
        except ValueError as exc:
            raise ParseError(line_no, f"non-integer field ({exc})") from None
    return rows


def _row_to_snapshot(row: tuple[int, ...]) -> Snapshot:
    ts, day = row[0], row[1]
    ask_part = row[2 : 2 + 2 * N_LEVELS]
    bid_part = row[2 + 2 * N_LEVELS :]
    asks = tuple((ask_part[2 * i], ask_part[2 * i + 1]) for i in range(N_LEVELS))
    bids = tuple((bid_part[2 * i], bid_part[2 * i + 1]) for i in range(N_LEVELS))
    return Snapshot(timestamp=ts, day_id=day, asks=asks, bids=bids)


def parse_snapshots(source: str | bytes | Path) -> list[Snapshot]:
    """Parse the documented CSV format into validated snapshots.

    `source` may be CSV text, CSV bytes, or a path to a CSV file.
    Raises ParseError for malformed rows and ValidationError for
    invariant violations (crossed book, unsorted levels, ...).
    """
    if isinstance(source, Path):
        text = source.read_text()
    elif isinstance(source, bytes):
        text = source.decode("utf-8")
    else:
        text = source
    snaps = [_row_to_snapshot(row) for row in _parse_rows(text)]
    for s in snaps:
        s.validate()
    prev: dict[int, int] = {}
    for s in snaps:
        if s.day_id in prev and s.timestamp < prev[s.day_id]:
            raise ValidationError(
                f"day {s.day_id}: timestamp {s.timestamp} decreases within day"
            )
        prev[s.day_id] = s.timestamp
    return snaps


def snapshots_to_csv(snaps: Iterable[Snapshot]) -> str:
    """Serialize snapshots back to the documented CSV format."""
    lines = [CSV_HEADER]
    for s in snaps:
        fields = [str(s.timestamp), str(s.day_id)]
        for p, v in s.asks:
            fields.append(str(p))
            fields.append(str(v))
        for p, v in s.bids:
            fields.append(str(p))
            fields.append(str(v))
        lines.append(",".join(fields))
    return "\n".join(lines) + "\n"


def day_to_csv(day: Day) -> str:
    return snapshots_to_csv(day.snapshots())


def load_days(source: str | bytes | Path) -> list[Day]:
    """Parse CSV and group the snapshots into Day containers (by day_id)."""
    snaps = parse_snapshots(source)
    by_day: dict[int, list[Snapshot]] = {}
    for s in snaps:
        by_day.setdefault(s.day_id, []).append(s)
    return [Day.from_snapshots(by_day[d]) for d in sorted(by_day)]


def load_days_from_dir(directory: Path) -> list[Day]:
    """Load every ``*.csv`` file under a directory, sorted by filename."""
    files = sorted(Path(directory).glob("*.csv"))
    if not files:
        raise FileNotFoundError(f"no CSV files in {directory}")
    days: list[Day] = []
    for f in files:
        days.extend(load_days(f))
    return days


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NormStats:
    """Per-column mean and population std over a trailing day window."""

    mean: np.ndarray  # (40,)
    std: np.ndarray  # (40,)

    def normalize(self, raw: np.ndarray) -> np.ndarray:
        return (raw - self.mean) / self.std

    def denormalize(self, scaled: np.ndarray) -> np.ndarray:
        return scaled * self.std + self.mean


def compute_norm_stats(days: Sequence[Day], trailing: int) -> NormStats:
    """Column statistics over the last `trailing` days of `days`.

    Population std (1/N).  A zero-variance column raises
    ZeroVarianceError naming the column.
    """
    if trailing < 1:
        raise ValueError("trailing must be >= 1")
    if len(days) < trailing:
        raise ValueError(f"need {trailing} prior days, have {len(days)}")
    stacked = np.concatenate([d.features() for d in days[-trailing:]], axis=0)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)  # population convention
    zero = np.flatnonzero(std == 0.0)
    if zero.size:
        raise ZeroVarianceError(
            f"zero-variance feature column '{FEATURE_COLUMNS[zero[0]]}'"
        )
    return NormStats(mean=mean, std=std)


# ---------------------------------------------------------------------------
# Labels and windows
# ---------------------------------------------------------------------------


def label_horizon(mids: Sequence[float] | np.ndarray, anchor: int, k: int, gamma: float) -> int:
    """3-class movement label at `anchor`.

    r = (mean(mids[anchor+1 .. anchor+k]) - mids[anchor]) / mids[anchor];
    +1 if r > gamma, -1 if r < -gamma, else 0.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    mids = np.asarray(mids, dtype=np.float64)
    if anchor < 0 or anchor + k >= len(mids):
        raise IndexError(f"anchor {anchor} with horizon {k} out of range for {len(mids)} mids")
    m_plus = float(np.mean(mids[anchor + 1 : anchor + k + 1]))
    r = (m_plus - mids[anchor]) / mids[anchor]
    if r > gamma:
        return 1
    if r < -gamma:
        return -1
    return 0


@dataclass(frozen=True)
class FeatureWindow:
    """T x 40 normalized input with its label and anchor metadata."""

    values: np.ndarray  # (T, 40) float64, finite
    label: int  # +1, 0, -1  (unlabeled inference windows use 0 with labeled=False)
    anchor_timestamp: int
    anchor_index: int
    day_id: int
    labeled: bool = field(default=True)


def build_windows(day: Day, stats: NormStats, T: int, k: int, gamma: float) -> list[FeatureWindow]:
    """Labeled windows for one day, one per anchor i in [T-1, len-k-1].

    Window rows are the T snapshots ending at the anchor, z-scored with
    `stats`; the label comes from `label_horizon` at the anchor.  A day
    shorter than T + k yields an empty list.
    """
    n = len(day)
    if n < T + k:
        return []
    feats = stats.normalize(day.features())
    if not np.all(np.isfinite(feats)):
        raise ValidationError(f"day {day.day_id}: non-finite normalized feature")
    mids = day.mid_prices()
    windows = []
    for i in range(T - 1, n - k):
        windows.append(
            FeatureWindow(
                values=feats[i - T + 1 : i + 1],
                label=label_horizon(mids, i, k, gamma),
                anchor_timestamp=int(day.ts[i]),
                anchor_index=i,
                day_id=day.day_id,
            )
        )
    return windows


def build_unlabeled_windows(day: Day, stats: NormStats, T: int) -> list[FeatureWindow]:
    """Inference windows at every anchor i in [T-1, len-1] (no labels)."""
    n = len(day)
    if n < T:
        return []
    feats = stats.normalize(day.features())
    if not np.all(np.isfinite(feats)):
        raise ValidationError(f"day {day.day_id}: non-finite normalized feature")
    return [
        FeatureWindow(
            values=feats[i - T + 1 : i + 1],
            label=0,
            anchor_timestamp=int(day.ts[i]),
            anchor_index=i,
            day_id=day.day_id,
            labeled=False,
        )
        for i in range(T - 1, n)
    ]


def balanced_gamma(days: Sequence[Day], k: int) -> float:
    """Label threshold making the three classes roughly balanced.

    Returns the 1/3 quantile of |r| over all label anchors, so about a
    third of anchors fall in the neutral band.
    """
    rs = []
    for day in days:
        mids = day.mid_prices()
        n = len(mids)
        if n <= k:
            continue
        csum = np.concatenate([[0.0], np.cumsum(mids)])
        m_plus = (csum[k:] - csum[:-k])[1:] / k  # mean of mids[i+1..i+k]
        r = (m_plus - mids[: n - k]) / mids[: n - k]
        rs.append(np.abs(r))
    if not rs:
        raise ValueError("no label anchors available")
    return float(np.quantile(np.concatenate(rs), 1.0 / 3.0))


# ---------------------------------------------------------------------------
# Binary window cache
# ---------------------------------------------------------------------------


class CacheFormatError(ValueError):
    """Window cache file is corrupt or has an unexpected layout."""


def save_windows(path: Path, windows: Sequence[FeatureWindow]) -> None:
    """Write windows to the documented BDL1 flat binary format."""
    if not windows:
        raise ValueError("no windows to save")
    T, F = windows[0].values.shape
    count = len(windows)
    values = np.stack([w.values for w in windows]).astype("<f8")
    labels = np.array([w.label for w in windows], dtype="<i1")
    ts = np.array([w.anchor_timestamp for w in windows], dtype="<i8")
    idx = np.array([w.anchor_index for w in windows], dtype="<i4")
    day_ids = np.array([w.day_id for w in windows], dtype="<i4")
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<IIII", _CACHE_VERSION, count, T, F))
        fh.write(values.tobytes())
        fh.write(labels.tobytes())
        fh.write(ts.tobytes())
        fh.write(idx.tobytes())
        fh.write(day_ids.tobytes())


def load_windows(path: Path) -> list[FeatureWindow]:
    """Read a BDL1 cache back into FeatureWindow objects."""
    blob = Path(path).read_bytes()
    if blob[:4] != _CACHE_MAGIC:
        raise CacheFormatError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 20:
        raise CacheFormatError(f"{path}: truncated header")
    version, count, T, F = struct.unpack("<IIII", blob[4:20])
    if version != _CACHE_VERSION:
        raise CacheFormatError(f"{path}: unsupported version {version}")
    need = 20 + count * T * F * 8 + count * (1 + 8 + 4 + 4)
    if len(blob) != need:
        raise CacheFormatError(f"{path}: expected {need} bytes, got {len(blob)}")
    off = 20
    values = np.frombuffer(blob, dtype="<f8", count=count * T * F, offset=off).reshape(count, T, F)
    off += count * T * F * 8
    labels = np.frombuffer(blob, dtype="<i1", count=count, offset=off)
    off += count
    ts = np.frombuffer(blob, dtype="<i8", count=count, offset=off)
    off += count * 8
    idx = np.frombuffer(blob, dtype="<i4", count=count, offset=off)
    off += count * 4
    day_ids = np.frombuffer(blob, dtype="<i4", count=count, offset=off)
    return [
        FeatureWindow(
            values=values[i].copy(),
            label=int(labels[i]),
            anchor_timestamp=int(ts[i]),
            anchor_index=int(idx[i]),
            day_id=int(day_ids[i]),
        )
        for i in range(count)
    ]
