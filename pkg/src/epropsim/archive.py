"""Per-neuron archives of plasticity signals with access-counter cleaning.

Recurrent neurons archive one entry per step holding the surrogate gradient,
the learning signal (written later, two-phase), and the dynamic firing-rate
value; readout neurons archive error signals.  A second per-neuron structure,
the update history, tracks for every incoming plastic synapse the time of its
most recent update via (t_update, access_counter) pairs.  Cleaning drops
entries no registered synapse can still request: everything older than the
front update time, whole fixed-interval samples without a registered reader,
and, in per-spike mode, the portion of each inter-update gap beyond the
inter-spike trace cutoff.
"""

from __future__ import annotations

import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass

import numpy as np

MODE_FIXED_INTERVAL = "fixed-interval"
MODE_PER_SPIKE = "per-spike"


class ArchiveProtocolError(RuntimeError):
    """Write/read outside the archive protocol (missing entry, cleaned range)."""


@dataclass(frozen=True)
class ArchiveConfig:
    mode: str = MODE_FIXED_INTERVAL
    update_interval: int = 1000
    shift: int = 0
    cutoff: int = 64

    def __post_init__(self) -> None:
        if self.mode not in (MODE_FIXED_INTERVAL, MODE_PER_SPIKE):
            raise ValueError(f"unknown archive mode {self.mode!r}")
        if self.mode == MODE_FIXED_INTERVAL and self.update_interval < 1:
            raise ValueError("fixed-interval mode requires a positive update_interval")
        if self.mode == MODE_PER_SPIKE and self.cutoff < 1:
            raise ValueError("per-spike mode requires cutoff >= 1")

    def sample_start(self, t: int) -> int:
        """Start boundary of the fixed-interval sample containing step t."""
        return self.shift + ((t - self.shift - 1) // self.update_interval) * self.update_interval


class UpdateHistory:
    """Sorted (t_update, access_counter) pairs; counters track registered synapses."""

    def __init__(self) -> None:
        self._times: list[int] = []
        self._counts: dict[int, int] = {}

    def register_initial(self, t: int) -> None:
        """Register a synapse's sentinel before its first spike."""
        self._increment(t)

    def register_update(self, t_old: int, t_new: int) -> None:
        """Move one synapse's registration from t_old to t_new."""
        if t_new < t_old:
            raise ArchiveProtocolError("update registration may not move backwards")
        if t_old == t_new:
            if t_old not in self._counts:
                raise ArchiveProtocolError(f"no registration at t={t_old}")
            return
        if t_old not in self._counts:
            raise ArchiveProtocolError(f"decrement of missing update entry t={t_old}")
        self._counts[t_old] -= 1
        if self._counts[t_old] == 0:
            del self._counts[t_old]
            self._times.remove(t_old)
        self._increment(t_new)

    def _increment(self, t: int) -> None:
        if t in self._counts:
            self._counts[t] += 1
        else:
            self._counts[t] = 1
            i = bisect_left(self._times, t)
            self._times.insert(i, t)

    def front(self) -> int | None:
        return self._times[0] if self._times else None

    def times(self) -> tuple[int, ...]:
        return tuple(self._times)

    def counter(self, t: int) -> int:
        return self._counts.get(t, 0)

    def __contains__(self, t: int) -> bool:
        return t in self._counts

    def __len__(self) -> int:
        return len(self._times)

    def total(self) -> int:
        return sum(self._counts.values())


class _BaseArchive:
    """Common append/range/cleaning machinery over parallel per-step lists."""

    _fields: tuple[str, ...] = ()

    def __init__(self, cfg: ArchiveConfig):
        self.cfg = cfg
        self.update_history = UpdateHistory()
        self._ts: list[int] = []
        self._cols: dict[str, list] = {name: [] for name in self._fields}
        self._t_appended = 0

    def __len__(self) -> int:
        return len(self._ts)

    def append_entry(self, t: int) -> None:
        """Insert an empty entry for the neuron's current step."""
        if self._t_appended and t == self._t_appended:
            raise ArchiveProtocolError(f"duplicate append for t={t}")
        if self._t_appended and t != self._t_appended + 1:
            raise ArchiveProtocolError(
                f"append must advance by one step (last {self._t_appended}, got {t})"
            )
        if not self._t_appended and t < 1:
            raise ArchiveProtocolError("steps start at 1")
        self._ts.append(t)
        for col in self._cols.values():
            col.append(None)
        self._t_appended = t

    def _write(self, name: str, t: int, value: float) -> None:
        i = bisect_left(self._ts, t)
        if i == len(self._ts) or self._ts[i] != t:
            raise ArchiveProtocolError(f"write to missing history entry t={t}")
        self._cols[name][i] = value

    def get_range(self, t_a: int, t_b: int) -> dict[str, np.ndarray]:
        """Entries with t_a < t <= t_b in order; cleaned gaps are an error."""
        if t_b < t_a:
            raise ValueError("empty-range bounds must satisfy t_a <= t_b")
        lo = bisect_right(self._ts, t_a)
        hi = bisect_right(self._ts, t_b)
        ts = self._ts[lo:hi]
        want = t_b - t_a
        if t_b > self._t_appended:
            raise ArchiveProtocolError(
                f"range ({t_a}, {t_b}] extends past the archived step {self._t_appended}"
            )
        if len(ts) != want or (want and (ts[0] != t_a + 1 or ts[-1] != t_b)):
            raise ArchiveProtocolError(
                f"range ({t_a}, {t_b}] spans cleaned history (have {len(ts)} of {want})"
            )
        out = {"t": np.array(ts, dtype=int)}
        for name in self._fields:
            col = self._cols[name][lo:hi]
            if any(v is None for v in col):
                raise ArchiveProtocolError(f"field {name!r} unwritten inside ({t_a}, {t_b}]")
            out[name] = np.array(col, dtype=float)
        return out

    def register_initial(self, t: int) -> None:
        self.update_history.register_initial(t)

    def register_update(self, t_old: int, t_new: int) -> None:
        self.update_history.register_update(t_old, t_new)

    def _drop_before(self, t: int) -> None:
        i = bisect_left(self._ts, t)
        if i:
            del self._ts[:i]
            for col in self._cols.values():
                del col[:i]

    def _drop_where(self, dead) -> None:
        ts = self._ts
        keep = [k for k in range(len(ts)) if not dead(ts[k])]
        if len(keep) != len(ts):
            self._ts = [ts[k] for k in keep]
            for name, col in self._cols.items():
                self._cols[name] = [col[k] for k in keep]

    def erase_used_history(self) -> None:
        """Remove entries that no registered synapse can still request."""
        front = self.update_history.front()
        if front is None:
            self._ts.clear()
            for col in self._cols.values():
                col.clear()
            return
        self._drop_before(front)
        if self.cfg.mode == MODE_FIXED_INTERVAL:
            registered = self.update_history
            cfg = self.cfg
            self._drop_where(lambda t: cfg.sample_start(t) not in registered)
        else:
            cut = self.cfg.cutoff
            times = list(self.update_history.times())
            spans = list(zip(times, times[1:] + [self._t_appended]))
            dead_spans = [(t0 + cut, t1) for t0, t1 in spans if t1 > t0 + cut]
            if dead_spans:
                self._drop_where(
                    lambda t: any(lo < t <= hi for lo, hi in dead_spans)
                )

    def dump_text(self) -> str:
        """Line-oriented debug dump: one entry per line, nan for unwritten fields."""
        lines = []
        for i, t in enumerate(self._ts):
            vals = " ".join(
                "nan" if self._cols[n][i] is None else repr(self._cols[n][i])
                for n in self._fields
            )
            lines.append(f"{t} {vals}")
        return "\n".join(lines)


class RecurrentEpropHistory(_BaseArchive):
    """Archive of (psi, L, f) per step for one recurrent neuron."""

    _fields = ("psi", "lsig", "f_rate")

    def write_psi(self, t: int, value: float) -> None:
        self._write("psi", t, value)

    def write_lsig(self, t: int, value: float) -> None:
        self._write("lsig", t, value)

    def write_f(self, t: int, value: float) -> None:
        self._write("f_rate", t, value)

    def append_written(self, t: int, psi: float, lsig: float, f_rate: float) -> None:
        """Append an entry with all fields filled (single-writer fast path)."""
        self.append_entry(t)
        self._cols["psi"][-1] = psi
        self._cols["lsig"][-1] = lsig
        self._cols["f_rate"][-1] = f_rate


class ReadoutEpropHistory(_BaseArchive):
    """Archive of error signals per step for one readout neuron."""

    _fields = ("err",)

    def write_error(self, t: int, value: float) -> None:
        self._write("err", t, value)

    def append_written(self, t: int, err: float) -> None:
        self.append_entry(t)
        self._cols["err"][-1] = err


def parse_dump(text: str) -> list[tuple]:
    """Inverse of dump_text for test fixtures."""
    rows = []
    for line in text.splitlines():
        if not line.strip():
            continue
        parts = line.split()
        rows.append((int(parts[0]), *(float(p) for p in parts[1:])))
    return rows
