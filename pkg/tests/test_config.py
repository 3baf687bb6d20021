import pytest

from layoutforge.config import RunConfig, dump_config, from_mapping, load_config
from layoutforge.errors import ConfigError


def test_defaults_are_valid():
    c = RunConfig()
    assert c.latent_dim == 32 and c.slots == 8 and c.resolution == 32
    assert (c.lambda_adv1, c.lambda_adv2, c.lambda_adv3) == (0.01, 0.01, 0.01)
    assert c.learning_rate == 1e-3
    assert c.detach_stages is False and c.condition_discriminators is True
    assert c.scheme.total == 14


def test_flat_toml_loads(tmp_path):
    p = tmp_path / "run.toml"
    p.write_text('seed = 7\nmetric = "l1"\nlambda_adv1 = 0\ng1_hidden = [16, 8]\ndetach_stages = true\n')
    c = load_config(p)
    assert c.seed == 7 and c.metric == "l1" and c.detach_stages
    assert c.lambda_adv1 == 0.0 and isinstance(c.lambda_adv1, float)
    assert c.g1_hidden == (16, 8)


def test_overrides_win_and_none_is_ignored(tmp_path):
    p = tmp_path / "run.toml"
    p.write_text("seed = 7\nepochs = 3\n")
    c = load_config(p, {"seed": 9, "epochs": None})
    assert c.seed == 9 and c.epochs == 3


@pytest.mark.parametrize(
    "text",
    [
        "nonsense_key = 1\n",
        "[section]\nseed = 1\n",
        "seed = 1.5\n",
        'seed = "x"\n',
        "detach_stages = 1\n",
        'metric = "huber"\n',
        "batch_size = 0\n",
        "lambda_adv2 = -0.1\n",
        "train_fraction = 1.0\n",
        "bedroom_thresholds = [3.4, 2.7]\n",
        "seed = \n",
    ],
)
def test_invalid_configs_raise(tmp_path, text):
    p = tmp_path / "bad.toml"
    p.write_text(text)
    with pytest.raises(ConfigError):
        load_config(p)


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.toml")


def test_dump_round_trips(tmp_path):
    c = RunConfig(seed=3, metric="l1", out_dir='we"ird\\dir', d1_hidden=(8, 4), instance_noise=0.25)
    p = tmp_path / "c.toml"
    p.write_text(dump_config(c))
    assert load_config(p) == c
    assert dump_config(load_config(p)) == dump_config(c)


def test_replace_validates():
    c = RunConfig()
    assert c.replace(seed=5).seed == 5
    with pytest.raises(ConfigError):
        c.replace(resolution=2)
    with pytest.raises(ConfigError):
        from_mapping({"unknown": 1})


def test_int_fields_accept_integral_floats():
    assert from_mapping({"epochs": 5.0}).epochs == 5
