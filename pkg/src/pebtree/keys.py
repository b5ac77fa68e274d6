"""Sequence value assignment and index key construction.

Sequence values place policy-compatible users at nearby reals: users are
processed in descending order of how many others they relate to; each new
anchor sits one separation step ``delta`` above the previous anchor, and
every not-yet-assigned user related to the anchor lands at
``anchor + (1 - C)``, so higher compatibility means a smaller gap.

Keys are fixed-width bit concatenations.  The policy-embedded key is
``time partition | quantized sequence value | Z-value`` so that integer
order equals lexicographic order on the fields and sequence values
dominate location.  The baseline key drops the sequence value field.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Protocol

from .motion import TimePartitionConfig
from .zcurve import GridConfig


class CompatibilityOracle(Protocol):
    def related(self, u: int) -> list[int]: ...

    def c(self, u: int, v: int) -> float: ...


@dataclass(frozen=True)
class SequenceValueMap:
    """Per-user sequence values plus the parameters that produced them."""

    values: dict[int, float]
    sv0: float
    delta: float
    anchors: tuple[int, ...]

    def __getitem__(self, uid: int) -> float:
        return self.values[uid]

    def __contains__(self, uid: int) -> bool:
        return uid in self.values

    @property
    def max_value(self) -> float:
        return max(self.values.values(), default=0.0)


def assign_sequence_values(
    users: Iterable[int],
    compat: CompatibilityOracle,
    sv0: float = 2.0,
    delta: float = 2.0,
) -> SequenceValueMap:
    """Assign every user a sequence value.

    Users are ordered by descending related-user count with ties broken by
    ascending id.  The first user receives ``sv0``; each later user still
    unassigned when reached becomes a new anchor at the previous anchor's
    value plus ``delta``; unassigned members of an anchor's group receive
    ``anchor + (1 - C(anchor, member))``.
    """
    if sv0 <= 1:
        raise ValueError("sv0 must exceed 1")
    if delta <= 1:
        raise ValueError("delta must exceed 1")
    user_set = set(users)
    order = sorted(user_set, key=lambda u: (-len(compat.related(u)), u))
    values: dict[int, float] = {}
    anchors: list[int] = []
    anchor_sv = sv0 - delta
    for u in order:
        if u in values:
            continue
        anchor_sv += delta
        values[u] = anchor_sv
        anchors.append(u)
        for m in compat.related(u):
            if m in user_set and m not in values:
                values[m] = anchor_sv + (1.0 - compat.c(u, m))
    return SequenceValueMap(values, sv0, delta, tuple(anchors))


@dataclass(frozen=True)
class KeyLayout:
    """Bit widths of the key fields for one index instance.

    Keys built with different layouts are not comparable.  Sequence values
    are quantized to ``frac_bits`` fractional bits; quantization preserves
    order whenever two values differ by at least one quantum.
    """

    tid_bits: int
    sv_bits: int
    zv_bits: int
    frac_bits: int = 8

    @classmethod
    def for_index(
        cls,
        time_cfg: TimePartitionConfig,
        grid: GridConfig,
        max_sv: float,
        frac_bits: int = 8,
    ) -> "KeyLayout":
        tid_bits = max(1, (time_cfg.num_partitions - 1).bit_length())
        max_q = round(max_sv * (1 << frac_bits))
        sv_bits = max(1, max_q.bit_length())
        return cls(tid_bits, sv_bits, grid.zv_bits, frac_bits)

    def quantize_sv(self, sv: float) -> int:
        """Fixed-point encoding of a sequence value."""
        if sv < 0:
            raise ValueError("sequence values are non-negative")
        q = round(sv * (1 << self.frac_bits))
        if q >= (1 << self.sv_bits):
            raise ValueError(f"sequence value {sv} overflows {self.sv_bits}-bit field")
        return q

    def peb_key(self, tid: int, sv: float, zv: int) -> int:
        """Policy-embedded key: tid | quantized sv | zv."""
        return self.peb_key_q(tid, self.quantize_sv(sv), zv)

    def peb_key_q(self, tid: int, svq: int, zv: int) -> int:
        self._check_tid(tid)
        if not 0 <= svq < (1 << self.sv_bits):
            raise ValueError(f"quantized sequence value {svq} overflows field")
        self._check_zv(zv)
        return (tid << (self.sv_bits + self.zv_bits)) | (svq << self.zv_bits) | zv

    def bx_key(self, tid: int, zv: int) -> int:
        """Baseline key: tid | zv (no policy field)."""
        self._check_tid(tid)
        self._check_zv(zv)
        return (tid << self.zv_bits) | zv

    def split_peb(self, key: int) -> tuple[int, int, int]:
        zv = key & ((1 << self.zv_bits) - 1)
        svq = (key >> self.zv_bits) & ((1 << self.sv_bits) - 1)
        tid = key >> (self.sv_bits + self.zv_bits)
        return tid, svq, zv

    def zv_of(self, key: int) -> int:
        return key & ((1 << self.zv_bits) - 1)

    def _check_tid(self, tid: int) -> None:
        if not 0 <= tid < (1 << self.tid_bits):
            raise ValueError(f"time partition {tid} overflows {self.tid_bits}-bit field")

    def _check_zv(self, zv: int) -> None:
        if not 0 <= zv < (1 << self.zv_bits):
            raise ValueError(f"z-value {zv} overflows {self.zv_bits}-bit field")
