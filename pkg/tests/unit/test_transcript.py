from pathlib import Path

import pytest

from fairex.harness.transcript import Transcript

pytestmark = pytest.mark.unit


@pytest.fixture
def transcript() -> Transcript:
    t = Transcript()
    t.append("header", scenario="s", seed=1)
    t.append("action", step=0, action="noop")
    t.append("output", step=0, party="seller", kind="CertReceived")
    t.append("summary", outcome="settled")
    return t


class TestTranscript:
    def test_lines_are_canonical(self, transcript: Transcript) -> None:
        first = transcript.dumps().splitlines()[0]
        assert first == '{"scenario":"s","seed":1,"type":"header"}'

    def test_accessors(self, transcript: Transcript) -> None:
        assert transcript.header["seed"] == 1
        assert len(transcript.actions()) == 1
        assert transcript.outputs()[0]["kind"] == "CertReceived"
        assert transcript.summary == {"type": "summary", "outcome": "settled"}

    def test_without_harness_records(self, transcript: Transcript) -> None:
        stripped = transcript.without_harness_records()
        assert stripped.summary is None
        assert len(stripped) == 3
        assert len(transcript) == 4

    def test_write_and_load(self, transcript: Transcript, tmp_path: Path) -> None:
        path = transcript.write(tmp_path / "nested" / "run.jsonl")
        assert Transcript.load(path).dumps() == transcript.dumps()

    def test_missing_header(self) -> None:
        with pytest.raises(ValueError):
            _ = Transcript().header

    @pytest.mark.parametrize("text", ["not json\n", "[1, 2]\n", '{"no_type": 1}\n'])
    def test_bad_lines(self, text: str) -> None:
        with pytest.raises(ValueError):
            Transcript.loads(text)

    def test_blank_lines_skipped(self) -> None:
        assert len(Transcript.loads('\n{"type":"final"}\n\n')) == 1
