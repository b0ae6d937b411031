import pytest

from sftgan.config import ConfigError, TrainConfig, load_config, parse_config


def test_defaults_are_desk_scale():
    cfg = TrainConfig()
    assert (cfg.scale, cfg.batch, cfg.hr_patch, cfg.base_lr, cfg.decay_every) == (4, 8, 32, 1e-4, 1000)
    assert (cfg.beta1, cfg.beta2, cfg.eps_adam) == (0.9, 0.999, 1e-8)
    assert (cfg.width, cfg.blocks, cfg.cond_channels) == (32, 8, 32)
    assert cfg.num_classes == 7


def test_parse_values_comments_and_blank_lines():
    cfg = parse_config("""
# desk smoke
categories = sky, grass   # two classes
iters = 10
base_lr = 2e-4
saturating = true
mode = film
""")
    assert cfg.categories == ("sky", "grass") and cfg.iters == 10 and cfg.base_lr == 2e-4
    assert cfg.saturating is True and cfg.mode == "film"


@pytest.mark.parametrize("text,line", [("iters = 3\nbogus = 1\n", 2), ("iters = 3\n\nnot a pair\n", 3),
                                       ("batch = eight\n", 1), ("saturating = maybe\n", 1)])
def test_errors_name_the_line(text, line):
    with pytest.raises(ConfigError, match=f"line {line}"):
        parse_config(text)


@pytest.mark.parametrize("changes", [{"hr_patch": 30}, {"hr_patch": 24}, {"batch": 0}, {"mode": "attention"},
                                     {"categories": ("lava",)}, {"beta1": 1.0}, {"iters": -1},
                                     {"lambda_percep": 0.0, "lambda_adv": 0.0, "lambda_cls": 0.0}])
def test_validation(changes):
    with pytest.raises(ConfigError):
        TrainConfig(**changes)


def test_echo_roundtrips_and_hash_ignores_budget_and_paths():
    cfg = TrainConfig(categories=("sky", "grass"), iters=17, base_lr=3e-5, log="x.csv")
    assert parse_config(cfg.echo()) == cfg
    assert cfg.config_hash() == cfg.replace(iters=5, checkpoint="y", log="", checkpoint_every=3).config_hash()
    assert cfg.config_hash() != cfg.replace(seed=1).config_hash()


def test_load_config(tmp_path):
    (tmp_path / "c.cfg").write_text("iters = 4\n")
    assert load_config(tmp_path / "c.cfg").iters == 4
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")
