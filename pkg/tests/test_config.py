import pytest

from gmixseq import config


def test_parse_literals_comments_and_dashes():
    text = """
    # run settings
    epochs = 20        # short run
    lr = 1e-3
    batch-size = 8
    cond_mode = posterior
    use_flow = False
    betas = (0.9, 0.99)
    """
    assert config.parse_config(text) == {"epochs": 20, "lr": 1e-3, "batch_size": 8, "cond_mode": "posterior",
                                         "use_flow": False, "betas": (0.9, 0.99)}


def test_parse_errors_name_the_line():
    with pytest.raises(config.ConfigError, match="line 2"):
        config.parse_config("a = 1\nnot a pair\n")
    with pytest.raises(config.ConfigError):
        config.parse_config(" = 3")


def test_precedence_flags_over_file_over_defaults():
    merged = config.merge({"epochs": 100, "lr": 1e-4, "seed": 0}, {"epochs": 10, "lr": 5e-4},
                          {"epochs": 3, "lr": None})
    assert merged == {"epochs": 3, "lr": 5e-4, "seed": 0}


def test_load_config_missing_file(tmp_path):
    with pytest.raises(config.ConfigError):
        config.load_config(tmp_path / "nope.cfg")
    (tmp_path / "a.cfg").write_text("k = 3\n")
    assert config.load_config(tmp_path / "a.cfg") == {"k": 3}


def test_seed_environment_fallback(monkeypatch):
    monkeypatch.delenv(config.SEED_ENV, raising=False)
    assert config.default_seed(4) == 4
    monkeypatch.setenv(config.SEED_ENV, "17")
    assert config.default_seed(4) == 17
    monkeypatch.setenv(config.SEED_ENV, "x")
    with pytest.raises(config.ConfigError):
        config.default_seed()
