"""Semantic-ID containers and the tab-separated SID file format.

A SID is an ordered tuple of small integer codes: a hierarchical part
(one digit per residual level, 3 by default) followed by a product-code
part (one digit per subspace, 2 by default). SIDs are rendered
everywhere as comma-joined digits, e.g. ``17,3,250,12,98``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping


@dataclass(frozen=True)
class Sid:
    """One item's code tuple: hierarchical digits plus product digits."""

    rq: tuple[int, ...]
    opq: tuple[int, ...] = ()

    @property
    def digits(self) -> tuple[int, ...]:
        return self.rq + self.opq

    def render(self) -> str:
        return ",".join(str(d) for d in self.digits)

    def __len__(self) -> int:
        return len(self.rq) + len(self.opq)


@dataclass(frozen=True)
class SidScheme:
    """Per-position code ranges; position ``i`` admits codes in ``[0, sizes[i])``."""

    rq_sizes: tuple[int, ...]
    opq_sizes: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if not self.rq_sizes:
            raise ValueError("scheme needs at least one hierarchical level")
        for w in self.rq_sizes + self.opq_sizes:
            if w < 1:
                raise ValueError(f"level sizes must be positive, got {w}")

    @property
    def sizes(self) -> tuple[int, ...]:
        return self.rq_sizes + self.opq_sizes

    @property
    def length(self) -> int:
        return len(self.rq_sizes) + len(self.opq_sizes)

    def validate(self, sid: Sid) -> Sid:
        if len(sid.rq) != len(self.rq_sizes) or len(sid.opq) != len(self.opq_sizes):
            raise ValueError(
                f"SID shape {len(sid.rq)}+{len(sid.opq)} does not match scheme "
                f"{len(self.rq_sizes)}+{len(self.opq_sizes)}"
            )
        for pos, (code, size) in enumerate(zip(sid.digits, self.sizes)):
            if not 0 <= code < size:
                raise ValueError(f"code {code} at position {pos} outside [0, {size})")
        return sid

    def parse(self, text: str) -> Sid:
        parts = text.split(",")
        if len(parts) != self.length:
            raise ValueError(f"expected {self.length} digits, got {len(parts)!r} in {text!r}")
        digits = tuple(int(p) for p in parts)
        n_rq = len(self.rq_sizes)
        return self.validate(Sid(rq=digits[:n_rq], opq=digits[n_rq:]))


class SidCatalog:
    """Immutable mapping of item id to SID under one scheme."""

    def __init__(self, entries: Mapping[str, Sid], scheme: SidScheme):
        self.scheme = scheme
        self.entries = dict(entries)
        for sid in self.entries.values():
            scheme.validate(sid)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[tuple[str, Sid]]:
        return iter(self.entries.items())

    def sids(self) -> list[Sid]:
        return list(self.entries.values())


def write_sid_file(path: str | Path, entries: Iterable[tuple[str, Sid]]) -> None:
    """Write ``id<TAB>c1,c2,...`` lines; iteration order is preserved."""
    with open(path, "w", encoding="utf-8") as f:
        for item_id, sid in entries:
            f.write(f"{item_id}\t{sid.render()}\n")


def read_sid_file(path: str | Path, scheme: SidScheme) -> SidCatalog:
    entries: dict[str, Sid] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                item_id, rendered = line.split("\t")
            except ValueError:
                raise ValueError(f"{path}:{line_no}: expected two tab-separated fields")
            entries[item_id] = scheme.parse(rendered)
    return SidCatalog(entries, scheme)


def read_sid_sequence(path: str | Path, scheme: SidScheme) -> list[tuple[str, Sid]]:
    """Like :func:`read_sid_file` but keeps line order and duplicates."""
    out: list[tuple[str, Sid]] = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            item_id, rendered = line.split("\t")
            out.append((item_id, scheme.parse(rendered)))
    return out
