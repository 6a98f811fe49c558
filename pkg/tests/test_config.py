import pytest
from pydantic import ValidationError

from core.config import (
    CONFIG_ENV,
    InitPolicy,
    Mode,
    RelaxConfig,
    SolverConfig,
    known_keys,
    read_config_file,
    resolve_settings,
)
from core.errors import ConfigError


@pytest.fixture
def cfg_file(tmp_path):
    def write(text, name="run.cfg"):
        path = tmp_path / name
        path.write_text(text)
        return path
    return write


class TestDefaults:

    def test_solver_defaults(self):
        cfg = SolverConfig()
        assert cfg.c == 0.25
        assert cfg.outer_iters == 25
        assert cfg.weights.lambda_l == 1.0
        assert cfg.weights.lambda_f == 0.1
        assert cfg.weights.tgv_order == 1
        assert cfg.weights.tgv_alpha == (1.0, 2.0)
        assert cfg.init is InitPolicy.ZERO_FOREGROUND

    def test_relaxation_defaults(self):
        relax = RelaxConfig()
        assert relax.theta == 2.5
        assert relax.theta * SolverConfig().weights.lambda_f == pytest.approx(0.25)
        assert relax.pd_iters == 50 and relax.pd_tol > 0.0

    def test_models_are_frozen(self):
        with pytest.raises(ValidationError):
            SolverConfig().c = 0.5

    def test_step_sizes_checked(self):
        with pytest.raises(ValidationError):
            RelaxConfig(tau=0.5, sigma=0.5)

    def test_every_key_listed(self):
        keys = known_keys()
        for key in ("mode", "c", "lambda_l", "lambda_f", "reg", "outer", "theta", "pd_tol", "tgv_alpha"):
            assert key in keys


class TestResolve:

    def test_no_sources_gives_defaults(self):
        settings = resolve_settings()
        assert settings.mode is Mode.STATIC
        assert settings.solver == SolverConfig()

    def test_flags_use_cli_spelling(self):
        settings = resolve_settings({"lambda-f": 0.2, "reg": "tgv2", "mode": "dynamic", "outer": 4})
        assert settings.solver.weights.lambda_f == 0.2
        assert settings.solver.weights.tgv_order == 2
        assert settings.solver.outer_iters == 4
        assert settings.mode is Mode.DYNAMIC

    def test_flag_beats_file(self, cfg_file):
        path = cfg_file("lambda_f = 0.3\nc=0.2  # foreground cap\n")
        settings = resolve_settings({"lambda_f": 0.5, "c": None}, path)
        assert settings.solver.weights.lambda_f == 0.5
        assert settings.solver.c == 0.2

    def test_environment_file_used_when_no_flag(self, cfg_file, monkeypatch):
        monkeypatch.setenv(CONFIG_ENV, str(cfg_file("outer = 7\n", "env.cfg")))
        assert resolve_settings().solver.outer_iters == 7
        explicit = cfg_file("outer = 9\n")
        assert resolve_settings(config_path=explicit).solver.outer_iters == 9

    def test_environment_file_layers_under_explicit_file(self, cfg_file, monkeypatch):
        monkeypatch.setenv(CONFIG_ENV, str(cfg_file("outer = 7\nlambda_l = 0.4\ntheta = 1.0\n", "env.cfg")))
        explicit = cfg_file("outer = 9\n")
        settings = resolve_settings({"theta": 3.0}, explicit)
        assert settings.solver.outer_iters == 9
        assert settings.solver.weights.lambda_l == 0.4
        assert settings.solver.relax.theta == 3.0

    def test_tgv_alpha_string(self):
        settings = resolve_settings({"tgv_alpha": "1, 3"})
        assert settings.solver.weights.tgv_alpha == (1.0, 3.0)

    def test_booleans_from_file(self, cfg_file):
        settings = resolve_settings(config_path=cfg_file("median-filter = false\n"))
        assert settings.solver.relax.median_filter is False


class TestErrors:

    def test_unknown_key_in_file(self, cfg_file):
        with pytest.raises(ConfigError, match="unknown key"):
            read_config_file(cfg_file("lamda_f = 0.1\n"))

    def test_malformed_line(self, cfg_file):
        with pytest.raises(ConfigError, match="key=value"):
            read_config_file(cfg_file("outer 5\n"))

    def test_out_of_range_value(self):
        with pytest.raises(ConfigError):
            resolve_settings({"c": 2.0})

    def test_unknown_regularizer(self):
        with pytest.raises(ConfigError):
            resolve_settings({"reg": "tgv3"})

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            resolve_settings(config_path=tmp_path / "absent.cfg")

    def test_config_error_is_value_error(self):
        with pytest.raises(ValueError):
            resolve_settings({"outer": 0})
