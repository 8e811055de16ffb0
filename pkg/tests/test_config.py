from pathlib import Path

import pytest
import yaml
from hypothesis import given
from hypothesis import strategies as st

from flowdepth import config as C
from flowdepth import experiments as E
from flowdepth.losses import LossWeights

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_defaults():
    cfg = C.from_dict({})
    assert cfg.weights == LossWeights()
    assert cfg.optimizer.beta1 == 0.9 and cfg.optimizer.beta2 == 0.999
    assert cfg.masks.alpha1 == 0.01 and cfg.masks.alpha2 == 0.5
    assert cfg.masks.tau_parallax == 1e-6
    assert cfg.metrics.cap == 80.0 and cfg.metrics.crop is None


@pytest.mark.parametrize("data", [
    {"sed": 1},
    {"weights": {"lambda_smoth": 1.0}},
    {"optimizer": {"learning_rate": 0.1}},
    {"scene": {"preset": "static", "colour": "red"}},
    {"metrics": {"cap": 80, "extra": 1}},
])
def test_unknown_keys_rejected(data):
    with pytest.raises(C.ConfigError, match="unknown"):
        C.from_dict(data)


@pytest.mark.parametrize("data", [
    {"seed": "seven"},
    {"seed": 1.5},
    {"weights": {"lambda_depth": "heavy"}},
    {"weights": {"lambda_depth": -1.0}},
    {"optimizer": {"lr": 0.0}},
    {"optimizer": {"beta1": 1.0}},
    {"optimizer": {"freeze_invalid": "yes"}},
    {"terms": ["photo_mot", "magic"]},
    {"terms": "photo_mot"},
    {"inputs": {"reference_flow": "exact"}},
    {"masks": {"source": "oracle"}},
    {"weights": None, "seed": None},
    [],
])
def test_invalid_values_rejected(data):
    with pytest.raises(C.ConfigError):
        C.from_dict(data)


def test_exponent_literals_parse_as_floats(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("optimizer:\n  lr: 1e-2\n  tol: 5e-8\nweights:\n  lambda_smth: 1e-4\n")
    cfg = C.load(p)
    assert cfg.optimizer.lr == 0.01 and cfg.optimizer.tol == 5e-8
    assert cfg.weights.lambda_smth == 1e-4


def test_crop_box():
    assert C.from_dict({"metrics": {"crop": "garg"}}).metrics.crop_box()[0] == pytest.approx(0.408, abs=1e-3)
    assert C.from_dict({"metrics": {"crop": [0, 1, 0, 1]}}).metrics.crop_box() == (0.0, 1.0, 0.0, 1.0)
    with pytest.raises(C.ConfigError):
        C.from_dict({"metrics": {"crop": "tight"}}).metrics.crop_box()


def test_dump_load_roundtrip(tmp_path):
    cfg = E.sceneflow_supervised_config()
    p = tmp_path / "c.yaml"
    p.write_text(C.dump(cfg))
    assert C.load(p) == cfg


@given(st.floats(0, 100, allow_nan=False), st.integers(0, 2**31))
def test_roundtrip_random_values(lam, seed):
    cfg = C.from_dict({"seed": seed, "weights": {"lambda_nrm": lam}})
    assert C.from_dict(yaml.safe_load(C.dump(cfg))) == cfg


def test_malformed_yaml(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("seed: [1,\n")
    with pytest.raises(C.ConfigError):
        C.load(p)


@pytest.mark.parametrize("name", sorted(E.PROTOCOLS))
def test_shipped_configs_match_protocols(name):
    cfg = C.load(CONFIGS / f"{name}.yaml")
    ref = E.PROTOCOLS[name]()
    cfg.out = ref.out
    assert cfg == ref


def test_protocol_overrides_merge():
    cfg = E.recovery_config(optimizer={"max_iter": 5})
    assert cfg.optimizer.max_iter == 5
    assert cfg.optimizer.optimize_sceneflow is False
