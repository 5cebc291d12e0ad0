import pytest

from spikeplace.config import RunConfig, from_dict, load_config
from spikeplace.errors import ConfigError


def test_defaults_round_trip(tmp_path):
    cfg = RunConfig()
    back = load_config(cfg.write(tmp_path / "c.toml"))
    assert back == cfg
    assert back.to_toml() == cfg.to_toml()


def test_partial_file_fills_defaults(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("seed = 7\n[train]\nepochs = 3\n[augment]\ndilation = true\n")
    cfg = load_config(p)
    assert cfg.seed == 7 and cfg.train.epochs == 3 and cfg.augment.dilation
    assert cfg.train.n_pairs == RunConfig().train.n_pairs


def test_nested_traverse_tables(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("[[data.route.traverses]]\nspeed = 5.0\n[[data.route.traverses]]\nseed = 1\n"
                 "direction = \"reverse\"\n")
    cfg = load_config(p)
    assert [t.speed for t in cfg.data.route.traverses] == [5.0, 10.0]
    assert cfg.data.route.traverses[1].direction == "reverse"


@pytest.mark.parametrize("doc,fragment", [
    ({"trian": {}}, "trian"),
    ({"train": {"epochz": 3}}, "train.epochz"),
    ({"data": {"route": {"traverses": [{"sped": 1.0}]}}}, "sped"),
])
def test_unknown_keys_rejected(doc, fragment):
    with pytest.raises(ConfigError, match=fragment):
        from_dict(doc)


@pytest.mark.parametrize("doc", [
    {"train": {"epochs": "ten"}},
    {"train": {"epochs": 2.5}},
    {"augment": {"dilation": 1}},
    {"eval": {"n_values": 5}},
    {"seed": True},
    {"optim": "fast"},
])
def test_type_errors(doc):
    with pytest.raises(ConfigError):
        from_dict(doc)


def test_int_promotes_to_float():
    assert from_dict({"optim": {"base_lr": 1}}).optim.base_lr == 1.0


@pytest.mark.parametrize("doc", [
    {"augment": {"t_min_us": 10, "t_max_us": 5}},
    {"augment": {"drop_mode": "time"}},
    {"model": {"preset": "huge"}},
    {"model": {"g": "OR"}},
    {"model": {"stage_widths": [8]}},
    {"eval": {"n_values": []}},
    {"energy": {"ann_gamma": 2.0}},
    {"split": {"train": [0]}},
    {"ablate": {"labels": ["D+Q"]}},
])
def test_semantic_checks(doc):
    with pytest.raises(ConfigError):
        from_dict(doc)


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[train\n")
    with pytest.raises(ConfigError, match="invalid TOML"):
        load_config(bad)
