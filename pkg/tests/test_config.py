"""Config parsing: defaults, strictness, fingerprints, bundled presets."""

import pytest

from fairdiff.config import (
    ConfigError,
    ExperimentConfig,
    load_config,
    parse_config,
    preset_names,
    preset_text,
)


def test_empty_text_yields_all_defaults():
    cfg = parse_config("")
    assert cfg.dataset.source == "sbm"
    assert cfg.dataset.n_nodes == 300
    assert cfg.sampler.depth == 2
    assert cfg.sampler.fanout == 10
    assert cfg.diffusion.beta_min == 0.1
    assert cfg.diffusion.beta_max == 1.0
    assert cfg.diffusion.maxiters == 1000
    assert cfg.reverse.n_steps == 5
    assert cfg.reverse.tau == 0.5
    assert cfg.classifier.epochs == 500
    assert cfg.run.mode == "full"
    assert cfg.run.seeds == (0, 1, 2, 3, 4)


def test_overrides_apply_with_types():
    cfg = parse_config(
        """
        [diffusion]
        lambda_x = 5
        maxiters = 20

        [run]
        mode = no_fairness
        seeds = 7
        """
    )
    assert cfg.diffusion.lambda_x == 5.0
    assert isinstance(cfg.diffusion.lambda_x, float)
    assert cfg.diffusion.maxiters == 20
    assert cfg.run.mode == "no_fairness"
    assert cfg.run.seeds == (7,)


@pytest.mark.parametrize("text", ["seeds = 1,2,3", "seeds = 1 2 3", "seeds = 1, 2,  3"])
def test_seed_list_formats(text):
    cfg = parse_config(f"[run]\n{text}\n")
    assert cfg.run.seeds == (1, 2, 3)


@pytest.mark.parametrize("raw,value", [("true", True), ("false", False), ("1", True), ("0", False)])
def test_bool_values(raw, value):
    cfg = parse_config(f"[dataset]\nstandardize = {raw}\n")
    assert cfg.dataset.standardize is value


@pytest.mark.parametrize(
    "text,match",
    [
        ("[typo]\nx = 1\n", "unknown section"),
        ("[dataset]\nn_node = 5\n", "unknown key"),
        ("[DEFAULT]\nn_nodes = 5\n", "DEFAULT"),
        ("[sampler]\ndepth = 1\ndepth = 2\n", "syntax"),
        ("no section header\n", "syntax"),
        ("[diffusion]\nmaxiters = abc\n", "maxiters"),
        ("[dataset]\nstandardize = yes\n", "true/false"),
        ("[reverse]\ntau = 1.5\n", "tau"),
        ("[classifier]\ndropout = 1.0\n", "dropout"),
        ("[sampler]\nfanout = 0\n", "fanout"),
        ("[diffusion]\nbeta_min = 2.0\n", "beta_min"),
        ("[dataset]\ntrain_frac = 0.5\n", "sum to 1"),
        ("[dataset]\nsource = files\n", "requires dataset.nodes"),
        ("[run]\nseeds =\n", "at least one seed"),
        ("[run]\nseeds = -1\n", "non-negative"),
        ("[run]\nmode = everything\n", "one of"),
    ],
)
def test_invalid_configs_rejected(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_files_source_accepts_paths():
    cfg = parse_config(
        """
        [dataset]
        source = files
        nodes = n.csv
        edges = e.csv
        """
    )
    assert cfg.dataset.nodes == "n.csv"
    assert cfg.dataset.splits == ""


def test_canonical_text_round_trips():
    cfg = parse_config("[diffusion]\nlambda_x = 0.25\n[run]\nseeds = 3,1\n")
    again = parse_config(cfg.canonical_text())
    assert again == cfg
    assert again.canonical_text() == cfg.canonical_text()


def test_fingerprint_ignores_formatting_noise():
    a = parse_config("[run]\nseeds = 1,2\n[sampler]\ndepth = 3\n")
    b = parse_config("# comment\n[sampler]\ndepth  =   3\n\n[run]\nseeds = 1 2\n")
    assert a.fingerprint() == b.fingerprint()


def test_fingerprint_changes_with_any_field():
    base = parse_config("")
    assert base.fingerprint() != parse_config("[run]\nseeds = 0,1,2,3\n").fingerprint()
    assert base.fingerprint() != parse_config("[reverse]\ntau = 0.4\n").fingerprint()
    assert base.fingerprint() != parse_config("[dataset]\nstandardize = false\n").fingerprint()


def test_fingerprint_is_sha256_hex():
    digest = parse_config("").fingerprint()
    assert len(digest) == 64
    assert set(digest) <= set("0123456789abcdef")


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.cfg")


def test_load_config_reads_file(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("[sampler]\ndepth = 1\n")
    assert load_config(path).sampler.depth == 1


def test_presets_all_parse():
    names = preset_names()
    assert set(names) >= {"nba", "pokec-z", "pokec-n", "sbm-smoke"}
    for name in names:
        cfg = parse_config(preset_text(name))
        assert isinstance(cfg, ExperimentConfig)


def test_preset_values_pin_documented_defaults():
    nba = parse_config(preset_text("nba"))
    assert (nba.sampler.depth, nba.sampler.fanout) == (2, 10)
    assert nba.diffusion.lambda_x == 0.1
    assert nba.reverse.n_steps == 5
    assert nba.reverse.tau == 0.5
    assert (nba.dataset.train_frac, nba.dataset.val_frac, nba.dataset.test_frac) == (0.2, 0.35, 0.45)

    pz = parse_config(preset_text("pokec-z"))
    pn = parse_config(preset_text("pokec-n"))
    assert pz.diffusion.lambda_x == 10.0 and pn.diffusion.lambda_x == 10.0
    assert pz.sampler.depth == 3 and pn.sampler.depth == 3
    assert (pz.reverse.n_steps, pn.reverse.n_steps) == (4, 2)
    assert (pz.dataset.train_frac, pz.dataset.test_frac) == (0.1, 0.8)

    smoke = parse_config(preset_text("sbm-smoke"))
    assert smoke.dataset.source == "sbm"
    assert smoke.dataset.n_nodes == 300
    assert smoke.dataset.label_bias == 0.4
    assert smoke.dataset.feature_leak == 2.0
    assert len(smoke.run.seeds) == 5


def test_unknown_preset_rejected():
    with pytest.raises(ConfigError, match="unknown preset"):
        preset_text("mnist")
