"""Client-visible operation histories and their JSON-lines file format."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator

READ = "read"
WRITE = "write"

OK = "ok"
NOT_FOUND = "not_found"
UNAVAILABLE = "unavailable"


class MalformedHistoryError(ValueError):
    pass


@dataclass(frozen=True)
class HistoryEntry:
    client: str
    op: str
    key: str
    value: str | None
    invoke_us: int
    respond_us: int
    returned: str | None
    status: str = OK
    version: tuple[int, str] | None = None
    region: str | None = None

    @property
    def object_id(self) -> tuple[str | None, str]:
        return (self.region, self.key)

    @property
    def completed(self) -> bool:
        return self.status != UNAVAILABLE

    def to_json(self) -> dict:
        d = {"client": self.client, "op": self.op, "key": self.key, "value": self.value,
             "invoke_us": self.invoke_us, "respond_us": self.respond_us, "returned": self.returned,
             "status": self.status}
        if self.version is not None:
            d["version"] = list(self.version)
        if self.region is not None:
            d["region"] = self.region
        return d

    @classmethod
    def from_json(cls, d: dict, line: int | None = None) -> "HistoryEntry":
        where = f"line {line}: " if line is not None else ""
        try:
            op = d["op"]
            if op not in (READ, WRITE):
                raise MalformedHistoryError(f"{where}op must be 'read' or 'write', got {op!r}")
            returned = d.get("returned")
            status = d.get("status")
            if status is None:
                if op == WRITE:
                    status = UNAVAILABLE if returned == UNAVAILABLE else OK
                else:
                    status = OK if returned is not None else NOT_FOUND
            if status not in (OK, NOT_FOUND, UNAVAILABLE):
                raise MalformedHistoryError(f"{where}unknown status {status!r}")
            version = d.get("version")
            return cls(
                client=str(d["client"]), op=op, key=str(d["key"]),
                value=None if d.get("value") is None else str(d["value"]),
                invoke_us=int(d["invoke_us"]), respond_us=int(d["respond_us"]),
                returned=None if returned is None else str(returned),
                status=status,
                version=None if version is None else (int(version[0]), str(version[1])),
                region=d.get("region"),
            )
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            if isinstance(exc, MalformedHistoryError):
                raise
            raise MalformedHistoryError(f"{where}bad history entry {d!r}: {exc}") from None


class OpHistory(list):
    """A list of HistoryEntry with validation and JSONL helpers."""

    def validate(self) -> "OpHistory":
        last_by_client: dict[str, int] = {}
        for i, e in enumerate(sorted(self, key=lambda e: (e.client, e.invoke_us, e.respond_us))):
            if not e.invoke_us < e.respond_us:
                raise MalformedHistoryError(
                    f"entry for client {e.client!r} at {e.invoke_us}: invoke must precede respond")
            if e.op == WRITE and e.value is None:
                raise MalformedHistoryError(f"write by {e.client!r} at {e.invoke_us} has no value")
            prev = last_by_client.get(e.client)
            if prev is not None and e.invoke_us < prev:
                raise MalformedHistoryError(f"client {e.client!r} has overlapping operations")
            last_by_client[e.client] = e.respond_us
        return self

    def by_object(self) -> dict[tuple, list[HistoryEntry]]:
        out: dict[tuple, list[HistoryEntry]] = {}
        for e in self:
            out.setdefault(e.object_id, []).append(e)
        return out

    def dumps(self) -> str:
        return "".join(json.dumps(e.to_json(), sort_keys=True) + "\n" for e in self)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def parse(cls, lines: Iterable[str]) -> "OpHistory":
        h = cls()
        for n, raw in enumerate(lines, 1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                d = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise MalformedHistoryError(f"line {n}: invalid JSON ({exc.msg})") from None
            if not isinstance(d, dict):
                raise MalformedHistoryError(f"line {n}: expected a JSON object")
            h.append(HistoryEntry.from_json(d, n))
        return h

    @classmethod
    def load(cls, source: str | Path | IO[str]) -> "OpHistory":
        if isinstance(source, (str, Path)):
            with open(source, encoding="utf-8") as fh:
                return cls.parse(fh)
        return cls.parse(source)

    def __iter__(self) -> Iterator[HistoryEntry]:
        return super().__iter__()
