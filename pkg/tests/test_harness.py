import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oneshot_count.datagen import CorpusConfig, generate_split, write_sample
from oneshot_count.features import SupportBox
from oneshot_count.harness import Checkpoint, counting_metrics, evaluate, predict, sample_loss, train
from oneshot_count.harness.cli import main
from oneshot_count.harness.train import ABLATION_ARMS, TrainingError, learning_rate, mean_baseline
from oneshot_count.model import CountingModel, ModelConfig
from oneshot_count import numcore as nc
from oneshot_count.numcore import tnsr

TINY = ModelConfig(d=8, h=2, backbone_channels=(4, 8), convs_per_stage=1, regressor_channels=(4, 4),
                   support_resize=8, epochs=1, lr=1e-3)


@pytest.fixture(scope="module")
def small_splits():
    cfg = CorpusConfig(sizes={"train": 4, "val": 2, "test": 2})
    return [generate_split(cfg, s) for s in ("train", "val", "test")]


def test_metrics_hand_values():
    m = counting_metrics([1, 2], [3, 5])
    assert m.mae == 2.5
    assert math.isclose(m.rmse, math.sqrt(6.5), rel_tol=1e-15)
    perfect = counting_metrics([4, 7, 1], [4, 7, 1])
    assert perfect.mae == 0.0 and perfect.rmse == 0.0


def test_metrics_two_pass_oracle():
    rng = np.random.default_rng(5)
    gt = rng.integers(1, 30, 50)
    pred = gt + rng.normal(0, 3, 50)
    abs_total = 0.0
    for g, p in zip(gt, pred):
        abs_total += abs(float(g) - float(p))
    mae = abs_total / 50
    sq_total = 0.0
    for g, p in zip(gt, pred):
        sq_total += (float(g) - float(p)) ** 2
    rmse = math.sqrt(sq_total / 50)
    m = counting_metrics(gt, pred)
    assert abs(m.mae - mae) < 1e-9 and abs(m.rmse - rmse) < 1e-9


@given(st.lists(st.tuples(st.floats(0, 1e4), st.floats(0, 1e4)), min_size=1, max_size=40))
@settings(max_examples=200, deadline=None)
def test_rmse_dominates_mae(pairs):
    m = counting_metrics([a for a, _ in pairs], [b for _, b in pairs])
    assert m.rmse >= m.mae * (1 - 1e-12) >= 0


def test_metrics_errors():
    with pytest.raises(ValueError, match="empty"):
        counting_metrics([], [])
    with pytest.raises(ValueError):
        counting_metrics([1, 2], [1])


def test_learning_rate_warmup():
    cfg = replace(TINY, lr=1.0, warmup_steps=4)
    assert [learning_rate(cfg, s) for s in (1, 2, 4, 100)] == [0.25, 0.5, 1.0, 1.0]
    assert learning_rate(replace(TINY, warmup_steps=0), 1) == TINY.lr


def test_config_round_trip_and_validation():
    cfg = ModelConfig(lam=0.5, seed=3)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    assert ModelConfig.from_dict({"lambda": 0.2}).lam == 0.2
    with pytest.raises(ValueError, match="unknown"):
        ModelConfig.from_dict({"learning_rate": 1})
    with pytest.raises(ValueError):
        ModelConfig(d=10, h=4)
    assert cfg.hash() == ModelConfig(lam=0.5, seed=3).hash() != ModelConfig().hash()


def test_default_model_shapes():
    model = CountingModel(ModelConfig())
    img = generate_split(CorpusConfig(), "test", 1)[0]
    dmap = model(img.image, img.box)
    assert dmap.shape == (16, 16)
    assert dmap.scale == 0.25
    assert model.num_parameters() < 300_000


def test_every_parameter_receives_gradient(small_splits):
    model = CountingModel(TINY)
    loss, _ = sample_loss(model, small_splits[0][0])
    params = model.parameters()
    nc.backward(loss, params.values())
    dead = [name for name, p in params.items() if not np.any(p.grad)]
    assert dead == []


def test_ablation_arms():
    assert list(ABLATION_ARMS) == ["full", "-self_attn_x", "-self_attn_s", "-scale_agg", "-ssim"]
    assert ModelConfig(scale_agg=False).effective_delta == 1
    assert ModelConfig(ssim=False).effective_lambda == 0.0


def test_zero_learning_rate_leaves_parameters(small_splits):
    cfg = replace(TINY, lr=0.0)
    model = CountingModel(cfg)
    before = {k: p.data.copy() for k, p in model.parameters().items()}
    train(cfg, small_splits[0], model=model)
    for k, p in model.parameters().items():
        assert p.data.tobytes() == before[k].tobytes(), k


def test_training_writes_outputs(small_splits, tmp_path):
    res = train(replace(TINY, epochs=2), small_splits[0], small_splits[1], tmp_path)
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_mae,val_rmse"
    assert len(lines) == 3
    assert (tmp_path / "best.ckpt").exists() and (tmp_path / "last.ckpt").exists()
    assert Checkpoint.load(tmp_path / "best.ckpt").digest() == res.best.digest()


def test_nan_loss_aborts_with_checkpoint(small_splits, tmp_path):
    model = CountingModel(TINY)
    model.params.regressor.b3.data = np.array([np.nan], dtype=model.params.regressor.b3.dtype)
    with pytest.raises(TrainingError, match="non-finite") as info:
        train(TINY, small_splits[0], out_dir=tmp_path, model=model)
    assert info.value.checkpoint_path and (tmp_path / "last_good.ckpt").exists()


def test_checkpoint_byte_identical_round_trip(small_splits, tmp_path):
    res = train(TINY, small_splits[0])
    a = tmp_path / "a.ckpt"
    b = tmp_path / "b.ckpt"
    res.last.save(a)
    Checkpoint.load(a).save(b)
    assert a.read_bytes() == b.read_bytes()
    m1 = evaluate(res.last, small_splits[2])
    m2 = evaluate(Checkpoint.load(a), small_splits[2])
    assert m1.per_sample == m2.per_sample


def test_checkpoint_rejects_tampered_header(small_splits, tmp_path):
    res = train(TINY, small_splits[0])
    raw = bytearray(res.last.to_bytes())
    raw[:4] = b"XXXX"
    with pytest.raises(ValueError):
        Checkpoint.from_bytes(bytes(raw))


def test_predict_count_is_density_sum(small_splits, tmp_path):
    model = CountingModel(TINY)
    s = small_splits[2][0]
    count, dmap = predict(model, s.image, s.box, tmp_path / "out")
    assert abs(count - float(dmap.values.data.sum(dtype=np.float64))) < 1e-5
    np.testing.assert_array_equal(tnsr.load(tmp_path / "out.tnsr"), dmap.values.data)
    assert (tmp_path / "out.pgm").read_bytes().startswith(b"P5\n32 32\n255\n")
    again, _ = predict(model, s.image, s.box)
    assert again == count


def test_predict_pads_with_notice(small_splits, caplog):
    model = CountingModel(TINY)
    s = small_splits[2][0]
    with caplog.at_level("WARNING"):
        _, dmap = predict(model, s.image[:, :61, :59], SupportBox(0, 0, 10, 10))
    assert "padding" in caplog.text
    assert dmap.shape == (32, 30)


def test_zero_final_layer_counts_zero(small_splits):
    model = CountingModel(TINY)
    reg = model.params.regressor
    reg.w3.data = np.zeros_like(reg.w3.data)
    reg.b3.data = np.zeros_like(reg.b3.data)
    s = small_splits[2][0]
    assert predict(model, s.image, s.box)[0] == 0.0


def test_mean_baseline(small_splits):
    tr, _, te = small_splits
    mu = np.mean([s.count for s in tr])
    m = mean_baseline(tr, te)
    assert math.isclose(m.mae, np.mean([abs(s.count - mu) for s in te]), rel_tol=1e-12)


def test_evaluate_empty_split():
    with pytest.raises(ValueError, match="empty"):
        evaluate(CountingModel(TINY), [])


def _err(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_cli_errors_are_json(capsys, tmp_path):
    assert main(["bogus"]) != 0
    assert "error" in _err(capsys)
    assert main(["eval", "--checkpoint", str(tmp_path / "missing.ckpt"), "--corpus", str(tmp_path)]) != 0
    assert _err(capsys)["error"] == "FileNotFoundError"
    bad = tmp_path / "cfg.json"
    bad.write_text('{"d": }')
    assert main(["train", "--config", str(bad), "--corpus", str(tmp_path)]) != 0
    assert "byte offset" in _err(capsys)["message"]


def test_cli_end_to_end(capsys, tmp_path):
    gen_cfg = tmp_path / "corpus.json"
    gen_cfg.write_text(json.dumps({"sizes": {"train": 3, "val": 2, "test": 2}}))
    corpus = tmp_path / "corpus"
    assert main(["gen", "--config", str(gen_cfg), "--out-dir", str(corpus)]) == 0
    assert json.loads(capsys.readouterr().out)["sizes"] == {"train": 3, "val": 2, "test": 2}

    model_cfg = tmp_path / "model.json"
    model_cfg.write_text(json.dumps(TINY.to_dict()))
    run = tmp_path / "run"
    assert main(["train", "--config", str(model_cfg), "--corpus", str(corpus), "--out-dir", str(run),
                 "--no-ssim"]) == 0
    assert json.loads(capsys.readouterr().out)["best_epoch"] == 1
    assert Checkpoint.load(run / "best.ckpt").config.ssim is False

    assert main(["eval", "--checkpoint", str(run / "best.ckpt"), "--corpus", str(corpus), "--split", "val"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["split"] == "val" and out["rmse"] >= out["mae"]

    sample = generate_split(CorpusConfig(), "test", 1)[0]
    write_sample(tmp_path / "query", sample)
    assert main(["predict", "--checkpoint", str(run / "best.ckpt"), "--image", str(tmp_path / "query.tnsr"),
                 "--box", *map(str, sample.box.as_list()), "--out-dir", str(tmp_path / "pred")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert (tmp_path / "pred" / "query.pgm").exists() and out["count"] >= 0
