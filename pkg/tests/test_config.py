"""
配置管理测试
"""
import pytest
import yaml
from loguru import logger

from config.app_config import (
    DEFAULT_CONFIG_PATH, AppConfig, ConfigManager, init_config, get_config, resolve_config_path
)
from core.dynamics import MeasurementRule
from core.exceptions import ConfigError
from core.predictor import OptimizerKind
from core.relu_encoding import BoundMethod


def write_yaml(tmp_path, data, name="config.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return path


class TestConfigManager:
    """配置加载测试"""

    def test_defaults(self):
        config = ConfigManager().get_config()
        assert config.seed == 42
        assert config.fcopf.rocof_threshold == -0.5
        assert config.fcopf.nadir_threshold == 59.5
        assert config.simulation.rocof_window == pytest.approx(0.167)
        assert [s.name for s in config.scenarios] == ["default", "validation", "high_load"]

    def test_bundled_file_matches_defaults(self):
        """内置 default.yaml 与代码默认值一致"""
        from_file = ConfigManager("default").get_config()
        assert from_file.sampling.load_scale_range == (0.9, 1.1)
        assert from_file.training.optimizer == OptimizerKind.ADAM
        assert from_file.simulation.measurement_bus_rule == MeasurementRule.DISTURBANCE_BUS
        assert from_file.bounds.method == BoundMethod.INTERVAL
        assert from_file.network.hidden == AppConfig().network.hidden
        assert from_file.solver.gap_tol == pytest.approx(1e-6)

    def test_merge(self, tmp_path):
        path = write_yaml(tmp_path, {
            "seed": 7,
            "fcopf": {"rocof_threshold": -0.3},
            "training": {"optimizer": "sgd_momentum", "learning_rate": 1},
            "bounds": {"method": "lp"},
            "sampling": {"load_scale_range": [0.8, 1.2]},
            "scenarios": [{"name": "only", "load_scale": 1.1, "contingency": "G31"}],
        })
        config = ConfigManager(path).get_config()
        assert config.seed == 7
        assert config.fcopf.rocof_threshold == -0.3
        assert config.fcopf.nadir_threshold == 59.5
        assert config.training.optimizer == OptimizerKind.SGD_MOMENTUM
        assert isinstance(config.training.learning_rate, float)
        assert config.bounds.method == BoundMethod.LP
        assert config.sampling.load_scale_range == (0.8, 1.2)
        assert config.scenario("only").contingency == "G31"

    def test_unknown_key_warns(self, tmp_path):
        messages = []
        handler = logger.add(lambda m: messages.append(m.record["message"]), level="WARNING")
        try:
            ConfigManager(write_yaml(tmp_path, {"fcopf": {"bogus": 1}})).get_config()
        finally:
            logger.remove(handler)
        assert any("fcopf.bogus" in m for m in messages)

    def test_env_overrides_file(self, tmp_path, monkeypatch):
        path = write_yaml(tmp_path, {"seed": 7, "dataset": {"workers": 2}})
        monkeypatch.setenv("FCOPF_SEED", "11")
        monkeypatch.setenv("FCOPF_WORKERS", "4")
        monkeypatch.setenv("FCOPF_INCLUDE_TIMINGS", "yes")
        monkeypatch.setenv("FCOPF_OUTPUT_DIR", str(tmp_path / "out"))
        config = ConfigManager(path).get_config()
        assert config.seed == 11
        assert config.dataset.workers == 4
        assert config.report.include_timings is True
        assert config.output_path == tmp_path / "out"

    def test_bad_env_value(self, monkeypatch):
        monkeypatch.setenv("FCOPF_SEED", "abc")
        with pytest.raises(ConfigError, match="FCOPF_SEED"):
            ConfigManager()

    @pytest.mark.parametrize("data, field_path", [
        ({"seed": -1}, "seed"),
        ({"fcopf": {"rocof_threshold": 0.2}}, "fcopf"),
        ({"training": {"epochs": 0}}, "training"),
        ({"simulation": {"dt": 0.0}}, "simulation"),
        ({"dataset": {"train_fraction": 1.0}}, "dataset.train_fraction"),
        ({"network": {"hidden": []}}, "network.hidden"),
        ({"training": {"optimizer": "rmsprop"}}, "training.optimizer"),
        ({"report": {"include_timings": "maybe"}}, "report.include_timings"),
        ({"fcopf": 3}, "fcopf"),
        ({"scenarios": [{"name": "a"}, {"name": "a"}]}, "scenarios"),
        ({"scenarios": [{"name": "a", "load_scale": 0.0}]}, "scenarios.a.load_scale"),
        ({"case_path": "missing/case.yaml"}, "case_path"),
    ])
    def test_invalid(self, tmp_path, data, field_path):
        """错误信息带出字段路径"""
        with pytest.raises(ConfigError, match=field_path.replace(".", r"\.")):
            ConfigManager(write_yaml(tmp_path, data))

    def test_file_errors(self, tmp_path):
        with pytest.raises(ConfigError):
            ConfigManager(tmp_path / "none.yaml")
        bad = tmp_path / "bad.yaml"
        bad.write_text("seed: [1, 2\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            ConfigManager(bad)
        other = tmp_path / "config.toml"
        other.write_text("seed = 1\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            ConfigManager(other)

    def test_save_and_reload(self, tmp_path):
        manager = ConfigManager(write_yaml(tmp_path, {"seed": 5, "bounds": {"method": "lp"}}))
        saved = tmp_path / "saved.yaml"
        manager.save_config(saved)
        data = yaml.safe_load(saved.read_text(encoding="utf-8"))
        assert data["bounds"]["method"] == "lp"
        reloaded = ConfigManager(saved).get_config()
        assert reloaded == manager.get_config()

    def test_reload_picks_up_env(self, monkeypatch):
        manager = ConfigManager()
        monkeypatch.setenv("FCOPF_DATASET_SIZE", "20")
        manager.reload_config()
        assert manager.get_config().dataset.size == 20


class TestHelpers:
    """路径与全局实例测试"""

    def test_resolve_config_path(self, tmp_path):
        assert resolve_config_path("default") == DEFAULT_CONFIG_PATH
        assert resolve_config_path(tmp_path / "x.yaml") == tmp_path / "x.yaml"
        assert resolve_config_path("config/default.yaml").resolve() == DEFAULT_CONFIG_PATH

    def test_paths(self, tmp_path):
        config = AppConfig(output_dir=str(tmp_path))
        assert config.dataset_file == tmp_path / "dataset.tsv"
        assert config.model_file == tmp_path / "model.yaml"
        with pytest.raises(ConfigError):
            config.scenario("nope")

    def test_global_instance(self, tmp_path):
        manager = init_config(write_yaml(tmp_path, {"seed": 3}))
        assert get_config() is manager.get_config()
        assert get_config().seed == 3
