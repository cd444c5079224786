import dataclasses

import pytest
from hypothesis import given
from hypothesis import strategies as st

from falcon_lab import config as C


def test_defaults_round_trip():
    cfg = C.ExperimentConfig()
    assert C.loads(C.dumps(cfg)) == cfg


def test_empty_text_is_default():
    assert C.loads("") == C.ExperimentConfig()
    assert C.loads("# only a comment\n\n") == C.ExperimentConfig()


def test_inline_comments_and_underscores():
    cfg = C.loads("steps_adapt = 1_000  # shorter\nseeds = 4, 5\nuse_spar = off\n")
    assert cfg.steps_adapt == 1000 and cfg.seeds == (4, 5) and cfg.use_spar is False


def test_file_round_trip(tmp_path):
    cfg = C.ExperimentConfig(lambda1=0.1 + 0.2, epsilons=(0.3, 1e-3), data_dir="d x")
    C.save(cfg, tmp_path / "c.txt")
    assert C.load(tmp_path / "c.txt") == cfg


@given(st.floats(0, 1e6, allow_nan=False), st.floats(1e-12, 1e12), st.integers(0, 2**63 - 1),
       st.lists(st.integers(0, 2**31), min_size=1, max_size=5), st.booleans())
def test_round_trip_property(l1, m, seed, seeds, flag):
    cfg = C.ExperimentConfig(lambda1=l1, m=m, seed=seed, seeds=tuple(seeds), use_kl=flag)
    assert C.loads(C.dumps(cfg)) == cfg


@pytest.mark.parametrize("text, msg", [
    ("nonsense\n", "expected 'key = value'"),
    ("nope = 1\n", "unknown config key"),
    ("use_spar = maybe\n", "not a boolean"),
    ("steps_adapt = 1.5\n", "line 1"),
])
def test_parse_errors(text, msg):
    with pytest.raises(ValueError, match=msg):
        C.loads(text)


def test_validation_runs_on_construction():
    with pytest.raises(ValueError, match="non-positive margin"):
        C.ExperimentConfig(m=0.0)
    with pytest.raises(ValueError):
        C.ExperimentConfig(use_spar=True, mask_filter_only=True)
    with pytest.raises(ValueError):
        C.ExperimentConfig(seeds=())
    with pytest.raises(ValueError):
        C.ExperimentConfig(noisy_prior=1.5)


def test_component_configs():
    cfg = C.ExperimentConfig(lambda1=0.5, m=7.0, steps_adapt=9, use_kl=False, fog_alpha=0.3)
    assert cfg.spar_config().lambda1 == 0.5
    assert cfg.irpl_config().m == 7.0
    assert cfg.train_config().steps_adapt == 9
    assert cfg.train_config(seed=11).seed == 11
    assert cfg.switches().use_kl is False
    assert cfg.shift().fog_alpha == 0.3
    assert cfg.target_spec().class_probs == cfg.target_class_probs
    # every training field is exposed in the flat config
    names = {f.name for f in dataclasses.fields(cfg)}
    assert {f.name for f in dataclasses.fields(cfg.train_config())} <= names


class TestSweepSpec:
    def test_product_grid(self):
        spec = C.SweepSpec.parse(["lambda1=0,1,2", "lambda2=0,1,2"], (0, 1, 2))
        pts = spec.points()
        assert len(pts) == 9 and spec.names == ("lambda1", "lambda2")
        assert pts[0] == {"lambda1": 0.0, "lambda2": 0.0}
        assert pts[-1] == {"lambda1": 2.0, "lambda2": 2.0}

    def test_single(self):
        spec = C.SweepSpec.parse(["m=1e-3,1,1e4"], (0,))
        assert [p["m"] for p in spec.points()] == [1e-3, 1.0, 1e4]

    @pytest.mark.parametrize("items, msg", [
        (["alpha=1,2"], "cannot sweep"),
        (["m=0,1"], "non-positive margin"),
        (["lambda1=-1"], "non-negative"),
        (["lambda1"], "expected name=v1"),
        ([], "at least one parameter"),
        (["lambda1="], "empty grid"),
    ])
    def test_errors(self, items, msg):
        with pytest.raises(ValueError, match=msg):
            C.SweepSpec.parse(items, (0,))

    def test_no_seeds(self):
        with pytest.raises(ValueError, match="seed"):
            C.SweepSpec.parse(["m=1"], ())
