from dataclasses import dataclass

import pytest

from voin.config import RunConfig, build_config, load_config, parse_kv
from voin.data import ValidationError


def _write(tmp_path, text):
    path = tmp_path / "run.cfg"
    path.write_text(text)
    return path


def test_parse_kv(tmp_path):
    path = _write(tmp_path, """
# a comment
steps = 50   # trailing comment
lr=0.01

out_dir = /tmp/run
""")
    assert parse_kv(path) == {"steps": "50", "lr": "0.01",
                              "out_dir": "/tmp/run"}


def test_parse_kv_rejects_bare_token(tmp_path):
    path = _write(tmp_path, "steps = 5\njust-a-word\n")
    with pytest.raises(ValueError, match=r":2: expected key = value"):
        parse_kv(path)


def test_bool_spellings():
    for text in ("1", "true", "Yes", "ON"):
        assert build_config(RunConfig, {"og": text}).og is True
    for text in ("0", "false", "No", "OFF"):
        assert build_config(RunConfig, {"og": text}).og is False
    with pytest.raises(ValueError, match="boolean"):
        build_config(RunConfig, {"og": "maybe"})


def test_patch_scales_string():
    cfg = build_config(RunConfig, {"patch_scales": "1x1,2x2,4x4,8x8"})
    assert cfg.patch_scales == ((1, 1), (2, 2), (4, 4), (8, 8))


def test_numeric_coercion():
    cfg = build_config(RunConfig, {"steps": "50", "lr": "0.01"})
    assert cfg.steps == 50 and isinstance(cfg.steps, int)
    assert cfg.lr == pytest.approx(0.01)


def test_unknown_keys_rejected():
    with pytest.raises(ValueError, match="unknown config keys: stepz"):
        build_config(RunConfig, {"stepz": "50"})


def test_overrides_win_and_none_skipped(tmp_path):
    path = _write(tmp_path, "steps = 50\nseed = 3\n")
    cfg = load_config(RunConfig, path, {"steps": "80", "seed": None})
    assert cfg.steps == 80
    assert cfg.seed == 3


def test_string_annotations_coerced():
    @dataclass
    class Tiny:
        n: "int" = 1
        flag: "bool" = False

    tiny = build_config(Tiny, {"n": "4", "flag": "yes"})
    assert tiny.n == 4 and tiny.flag is True


def test_run_config_invariants():
    with pytest.raises(ValidationError, match="STAM"):
        RunConfig(md=False, stam=True)
    with pytest.raises(ValidationError, match="warm_frac"):
        RunConfig(warm_frac=1.0)
    with pytest.raises(ValidationError, match="warm_frac"):
        RunConfig(warm_frac=-0.1)
    with pytest.raises(ValidationError, match="positive"):
        RunConfig(steps=0)
    RunConfig(md=False, stam=False, tp=False)  # base row is legal


def test_hyper_mirrors_config():
    cfg = RunConfig(lam1=2.0, tau=7.5,
                    patch_scales=((1, 1), (2, 2), (4, 4)))
    hp = cfg.hyper()
    assert hp.lam1 == 2.0
    assert hp.tau == 7.5
    assert hp.heads == 3
    assert hp.patch_scales == cfg.patch_scales
