from pathlib import Path

import pytest

from fairex.config import DEFAULT_STEP_BUDGET, load_config
from fairex.errors import ConfigError

pytestmark = pytest.mark.unit


@pytest.fixture(autouse=True)
def clean_env(monkeypatch: pytest.MonkeyPatch) -> None:
    for name in ("FAIREX_CONFIG", "FAIREX_STEP_BUDGET", "FAIREX_LOG_LEVEL"):
        monkeypatch.delenv(name, raising=False)


class TestLoadConfig:
    def test_repository_defaults(self) -> None:
        config = load_config()
        assert config.step_budget == DEFAULT_STEP_BUDGET
        assert config.default_price == 1
        assert config.log_level == "WARNING"
        assert config.transcript_dir == "transcripts"

    def test_explicit_file(self, tmp_path: Path) -> None:
        path = tmp_path / "fairex.yaml"
        path.write_text("step_budget: 50\ndefault_price: 3\n")
        config = load_config(path)
        assert (config.step_budget, config.default_price) == (50, 3)

    def test_empty_file_means_defaults(self, tmp_path: Path) -> None:
        path = tmp_path / "empty.yaml"
        path.write_text("")
        assert load_config(path).step_budget == DEFAULT_STEP_BUDGET

    def test_env_overrides(self, tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
        path = tmp_path / "fairex.yaml"
        path.write_text("step_budget: 50\n")
        monkeypatch.setenv("FAIREX_CONFIG", str(path))
        monkeypatch.setenv("FAIREX_STEP_BUDGET", "70")
        monkeypatch.setenv("FAIREX_LOG_LEVEL", "debug")
        config = load_config()
        assert config.step_budget == 70
        assert config.log_level == "DEBUG"

    def test_missing_explicit_file(self, tmp_path: Path) -> None:
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.yaml")

    @pytest.mark.parametrize(
        "text",
        ["step_budget: [1,\n", "- a list\n", "step_budget: 0\n", "unknown_key: 1\n"],
    )
    def test_invalid_files(self, tmp_path: Path, text: str) -> None:
        path = tmp_path / "bad.yaml"
        path.write_text(text)
        with pytest.raises(ConfigError):
            load_config(path)

    def test_invalid_env_value(self, monkeypatch: pytest.MonkeyPatch) -> None:
        monkeypatch.setenv("FAIREX_STEP_BUDGET", "many")
        with pytest.raises(ConfigError):
            load_config()
