import json
import math
import pathlib

import jsonschema
import pytest

import prefbmc

ROOT = pathlib.Path(__file__).resolve().parents[2]
SCHEMAS = ROOT / "docs" / "schemas"


def schema(name):
    return json.loads((SCHEMAS / f"{name}.schema.json").read_text())


def test_diff_masks_skip_stopwords():
    chosen, rejected = prefbmc.diff_masks("the cat sat", "a dog sat", {"the", "a"})
    assert chosen == [1]
    assert rejected == [1]


def test_edit_distance():
    assert prefbmc.edit_distance([1, 2, 3], [1, 3]) == 1
    assert prefbmc.edit_distance([], [4, 5]) == 2


def test_lambda_weights():
    w = prefbmc.lambda_weights([0.5, 1.0 / 3.0, 1.0, 0.5], [True, True, True, False], 2.5)
    assert w == pytest.approx([3.0, 3.5, 2.0, 1.0])


def test_dpo_at_reference_is_ln2():
    v = prefbmc.pair_loss({"method": "DPO", "beta": 0.1}, [-1.0, -2.0], [-3.0], [-1.0, -2.0], [-3.0])
    assert v == pytest.approx(math.log(2.0))


def test_weighted_loss_needs_masks():
    with pytest.raises(prefbmc.DataError):
        prefbmc.pair_loss({"method": "DPO_BMC"}, [-1.0], [-1.0], [-1.0], [-1.0])


def test_invalid_combination():
    with pytest.raises(prefbmc.ConfigError):
        prefbmc.pair_loss({"method": "KTO", "bmc_wrap": True}, [-1.0], [-1.0], [-1.0], [-1.0])


def test_config_overrides():
    cfg = prefbmc.resolved_config(train__loss__method="SIMPO", seed=7)
    assert cfg["train"]["loss"]["method"] == "SIMPO"
    assert cfg["seed"] == 7
    with pytest.raises(prefbmc.ConfigError):
        prefbmc.resolved_config(corpus__nope=1)


def test_seed_derivation():
    assert prefbmc.derive_seed(1, "train") == prefbmc.derive_seed(1, "train")
    assert prefbmc.derive_seed(1, "train") != prefbmc.derive_seed(1, "sft")


def test_pipeline_outputs_match_schemas(tmp_path):
    o = dict(
        io__out=str(tmp_path),
        corpus__n_pairs=120,
        corpus__n_heldout=30,
        sft__epochs=1,
        sft__d_model=16,
        train__loss__method="DPO_BMC",
        train__checkpoint_every=2,
        analysis__n_buckets=2,
    )
    assert prefbmc.gen_data(**o) == (120, 30)
    assert prefbmc.bridge(**o) > 0
    assert math.isfinite(prefbmc.sft(**o))
    run = pathlib.Path(prefbmc.train(**o))
    assert run.name == "dpo_bmc"
    prefbmc.evaluate(**o)
    files = [pathlib.Path(p) for p in prefbmc.report(**o)]
    names = {p.name for p in files}
    assert {"token_rewards.json", "seq_rewards.json", "bucket_stats.json", "manifest.json"} <= names

    for line in (tmp_path / "pairs.jsonl").read_text().splitlines():
        jsonschema.validate(json.loads(line), schema("preference_pair"))
    for line in (tmp_path / "bridged.jsonl").read_text().splitlines():
        jsonschema.validate(json.loads(line), schema("bridged_pair"))
    report = run / "report"
    for name in ("token_rewards", "seq_rewards", "bucket_stats", "manifest"):
        jsonschema.validate(json.loads((report / f"{name}.json").read_text()), schema(name))


def test_pipeline_stage_order(tmp_path):
    with pytest.raises(prefbmc.DataError):
        prefbmc.bridge(io__out=str(tmp_path))
