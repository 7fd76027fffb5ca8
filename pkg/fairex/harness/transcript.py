"""
Run transcripts: an append-only list of JSON records, one per line.

Every record carries a ``type``. Octet fields are lowercase hex. Records are
serialised with sorted keys and no insignificant whitespace, so two equal
runs produce identical files.

Record types, in the order a run produces them:

- ``header``: scenario name, seed, policy, parties, corruption, notary keys
- ``env``: an environment input (certify, buy, sell)
- ``action``: the adversary's choice for the step
- ``enqueue``: a message entering the network, with its full payload
- ``ignore``: a party or the chain dropped a message, with the reason code
- ``output``: a party output
- ``chain``: a tape event; ``ledger``: the ledger right after it
- ``final``: ledger and contracts at the end of the run
- ``summary`` and ``divergence``: written by the harness afterwards
"""

from __future__ import annotations

import json
from collections.abc import Iterator
from pathlib import Path
from typing import Any, Optional


class Transcript:
    """
    Ordered transcript records.

    Args:
        records: Existing records, e.g. when loading a file
    """

    def __init__(self, records: Optional[list[dict[str, Any]]] = None) -> None:
        self.records: list[dict[str, Any]] = list(records or [])

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[dict[str, Any]]:
        return iter(self.records)

    def append(self, record_type: str, **fields: Any) -> dict[str, Any]:
        record = {"type": record_type, **fields}
        self.records.append(record)
        return record

    def of_type(self, record_type: str) -> list[dict[str, Any]]:
        return [r for r in self.records if r["type"] == record_type]

    @property
    def header(self) -> dict[str, Any]:
        """
        The header record.

        Raises:
            ValueError: If the transcript has no header
        """
        for record in self.records:
            if record["type"] == "header":
                return record
        raise ValueError("transcript has no header record")

    @property
    def summary(self) -> Optional[dict[str, Any]]:
        found = self.of_type("summary")
        return found[-1] if found else None

    def actions(self) -> list[dict[str, Any]]:
        return self.of_type("action")

    def outputs(self) -> list[dict[str, Any]]:
        return self.of_type("output")

    def dumps(self) -> str:
        return "".join(
            json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n"
            for record in self.records
        )

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps(), encoding="utf-8")
        return path

    @classmethod
    def loads(cls, text: str) -> Transcript:
        """
        Parse JSON-lines transcript text.

        Raises:
            ValueError: If a line is not a JSON object with a ``type``
        """
        records = []
        for number, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"line {number}: not JSON: {e}") from e
            if not isinstance(record, dict) or "type" not in record:
                raise ValueError(f"line {number}: not a transcript record")
            records.append(record)
        return cls(records)

    @classmethod
    def load(cls, path: str | Path) -> Transcript:
        return cls.loads(Path(path).read_text(encoding="utf-8"))

    def without_harness_records(self) -> Transcript:
        """Copy holding only the records the simulator itself wrote."""
        return Transcript(
            [r for r in self.records if r["type"] not in ("summary", "divergence")]
        )
