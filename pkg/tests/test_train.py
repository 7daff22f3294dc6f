import csv
import math

import numpy as np
import pytest

from dane import model, train
from dane.errors import NonFiniteLoss, ShapeMismatch
from dane.graph import Graph, GraphPair
from dane.model import load_checkpoint
from dane.train import (
    AdamState,
    EpochRecord,
    TrainConfig,
    TrainLog,
    TrainState,
    apply_update,
    derive_seeds,
    fit,
    train_step,
    with_adv_weight,
)


def small_pair(seed=0, n=20, p=0.25, feature_dim=4):
    rng = np.random.default_rng(seed)
    graphs = []
    for _ in range(2):
        mask = np.triu(rng.random((n, n)) < p, k=1)
        edges = np.argwhere(mask)
        # keep every node attached so the sampler always has mass
        for i in range(n):
            if not (edges == i).any():
                edges = np.vstack([edges, [i, (i + 1) % n]])
        graphs.append(Graph(n, edges, rng.normal(size=(n, feature_dim))))
    return GraphPair(*graphs)


def quick_config(**overrides):
    base = dict(
        seed=0,
        embedding_dim=8,
        num_layers=2,
        negative_samples=2,
        epochs=5,
        encoder_lr=1e-2,
        disc_lr=1e-2,
    )
    base.update(overrides)
    return TrainConfig(**base)


# --- config --------------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError):
        quick_config(embedding_dim=0)
    with pytest.raises(ValueError):
        quick_config(disc_steps=0)
    with pytest.raises(ValueError):
        quick_config(adv_weight=-0.1)
    with pytest.raises(ValueError):
        quick_config(optimizer="rmsprop")
    with pytest.raises(ValueError):
        quick_config(epochs=-1)
    with pytest.raises(ValueError):
        quick_config(encoder_lr=0.0)


def test_encoder_dims_layout():
    cfg = quick_config(embedding_dim=16, hidden_dim=32, num_layers=3)
    assert cfg.encoder_dims(10) == [10, 32, 32, 16]
    assert quick_config(num_layers=1).encoder_dims(10) == [10, 8]
    assert quick_config().encoder_dims(10) == [10, 8, 8]  # hidden defaults to output


def test_with_adv_weight_changes_only_that_knob():
    a = quick_config(adv_weight=1.0)
    b = with_adv_weight(a, 0.0)
    assert b.adv_weight == 0.0
    assert b.seed == a.seed and b.epochs == a.epochs


def test_derive_seeds_deterministic_and_distinct():
    s1, s2 = derive_seeds(123), derive_seeds(123)
    assert s1 == s2
    fields = [s1.encoder_init, s1.disc_init, s1.sampler_src, s1.sampler_tgt,
              s1.batching, s1.classifier, s1.synthesis, s1.subsample]
    assert len(set(fields)) == len(fields)
    assert derive_seeds(124) != s1


# --- optimizer -----------------------------------------------------------------


def test_sgd_update_exact():
    a = [np.array([[1.0, 2.0]]), np.array([[3.0]])]
    g = [np.array([[0.5, -1.0]]), np.array([[2.0]])]
    out = apply_update(a, g, None, rate=0.1)
    np.testing.assert_array_equal(out[0], [[0.95, 2.1]])
    np.testing.assert_array_equal(out[1], [[2.8]])
    np.testing.assert_array_equal(a[0], [[1.0, 2.0]])  # inputs untouched


def test_adam_matches_reference_implementation():
    rng = np.random.default_rng(0)
    params = [rng.normal(size=(3, 2))]
    state = AdamState(params)
    ref_p = params[0].copy()
    ref_m = np.zeros_like(ref_p)
    ref_v = np.zeros_like(ref_p)
    b1, b2, eps, lr = 0.9, 0.999, 1e-8, 0.01
    cur = params
    for t in range(1, 6):
        g = rng.normal(size=(3, 2))
        cur = apply_update(cur, [g], state, rate=lr)
        ref_m = b1 * ref_m + (1 - b1) * g
        ref_v = b2 * ref_v + (1 - b2) * g * g
        mhat = ref_m / (1 - b1**t)
        vhat = ref_v / (1 - b2**t)
        ref_p = ref_p - lr * mhat / (np.sqrt(vhat) + eps)
    np.testing.assert_allclose(cur[0], ref_p, rtol=1e-9)


def test_adam_first_step_has_unit_scale():
    # bias correction makes the first step lr * g/(|g| + eps), whatever g's size
    for magnitude in (1e-3, 1.0, 1e6):
        state = AdamState([np.zeros((1, 1))])
        out = apply_update([np.zeros((1, 1))], [np.full((1, 1), magnitude)], state, 0.5)
        assert out[0][0, 0] == pytest.approx(-0.5, rel=1e-4)


def test_apply_update_shape_checks():
    with pytest.raises(ShapeMismatch):
        apply_update([np.zeros((2, 2))], [np.zeros((2, 3))], None, 0.1)
    with pytest.raises(ShapeMismatch):
        apply_update([np.zeros((2, 2))], [], None, 0.1)


# --- adversarial phases are isolated --------------------------------------------


def test_discriminator_round_never_sees_encoder():
    pair = small_pair()
    cfg = quick_config()
    state = TrainState(pair, cfg)
    enc, disc = train.init_models(pair, cfg)
    state.ensure_optimizer(enc, disc)
    enc_bytes = [w.tobytes() for w in enc.weights]
    disc_before = [a.copy() for a in disc.arrays()]
    rng = np.random.default_rng(1)
    v_src, v_tgt = rng.normal(size=(20, 8)), rng.normal(size=(20, 8))
    for _ in range(4):
        train.discriminator_round(v_src, v_tgt, disc, cfg, state)
    assert [w.tobytes() for w in enc.weights] == enc_bytes
    assert any(
        a.tobytes() != b.tobytes() for a, b in zip(disc.arrays(), disc_before)
    )


def test_encoder_round_treats_discriminator_as_constant():
    pair = small_pair()
    cfg = quick_config()
    state = TrainState(pair, cfg)
    enc, disc = train.init_models(pair, cfg)
    state.ensure_optimizer(enc, disc)
    disc_bytes = [a.tobytes() for a in disc.arrays()]
    enc_before = [w.copy() for w in enc.weights]
    b_src = model.sample_edge_batch(pair.source.edges, state.sampler_src, 2)
    b_tgt = model.sample_edge_batch(pair.target.edges, state.sampler_tgt, 2)
    train.encoder_round(pair, enc, disc, cfg, state, b_src, b_tgt)
    assert [a.tobytes() for a in disc.arrays()] == disc_bytes
    assert any(w.tobytes() != b.tobytes() for w, b in zip(enc.weights, enc_before))


# --- train_step ----------------------------------------------------------------


def test_train_step_updates_both_players_and_reports_post_update_losses():
    pair = small_pair()
    cfg = quick_config(disc_steps=2)
    state = TrainState(pair, cfg)
    enc, disc = train.init_models(pair, cfg)
    enc_before = [w.copy() for w in enc.weights]
    disc_before = [a.copy() for a in disc.arrays()]
    record = train_step(pair, enc, disc, cfg, state)
    assert any(w.tobytes() != b.tobytes() for w, b in zip(enc.weights, enc_before))
    assert any(a.tobytes() != b.tobytes() for a, b in zip(disc.arrays(), disc_before))
    assert record.l_total == pytest.approx(
        record.l_gcn + cfg.adv_weight * record.l_adv, rel=1e-15
    )
    assert record.seconds > 0
    for value in (record.l_gcn, record.l_d, record.l_adv):
        assert math.isfinite(value)
    assert record.l_gcn > 0


def test_train_step_is_deterministic():
    def run():
        pair = small_pair()
        cfg = quick_config()
        state = TrainState(pair, cfg)
        enc, disc = train.init_models(pair, cfg)
        r = train_step(pair, enc, disc, cfg, state)
        return enc, disc, r

    e1, d1, r1 = run()
    e2, d2, r2 = run()
    for a, b in zip(e1.weights, e2.weights):
        assert a.tobytes() == b.tobytes()
    for a, b in zip(d1.arrays(), d2.arrays()):
        assert a.tobytes() == b.tobytes()
    assert (r1.l_gcn, r1.l_d, r1.l_adv) == (r2.l_gcn, r2.l_d, r2.l_adv)


def test_evaluate_losses_has_no_side_effects():
    pair = small_pair()
    cfg = quick_config()
    state = TrainState(pair, cfg)
    enc, disc = train.init_models(pair, cfg)
    b_src = model.sample_edge_batch(pair.source.edges, state.sampler_src, 2)
    b_tgt = model.sample_edge_batch(pair.target.edges, state.sampler_tgt, 2)
    enc_bytes = [w.tobytes() for w in enc.weights]
    disc_bytes = [a.tobytes() for a in disc.arrays()]
    r1 = train.evaluate_losses(pair, enc, disc, cfg, state, b_src, b_tgt)
    r2 = train.evaluate_losses(pair, enc, disc, cfg, state, b_src, b_tgt)
    assert [w.tobytes() for w in enc.weights] == enc_bytes
    assert [a.tobytes() for a in disc.arrays()] == disc_bytes
    assert (r1.l_gcn, r1.l_d, r1.l_adv) == (r2.l_gcn, r2.l_d, r2.l_adv)


# --- fit -----------------------------------------------------------------------


def test_fit_zero_epochs_returns_initial_encoder():
    pair = small_pair()
    cfg = quick_config(epochs=0)
    result = fit(pair, cfg)
    assert len(result.log) == 0
    assert result.best_epoch == -1
    seeds = derive_seeds(cfg.seed)
    enc0, _ = train.init_models(pair, cfg, seeds)
    for a, b in zip(result.encoder.weights, enc0.weights):
        assert a.tobytes() == b.tobytes()


def test_fit_is_bitwise_reproducible():
    pair = small_pair()
    cfg = quick_config(epochs=4)
    r1, r2 = fit(pair, cfg), fit(pair, cfg)
    assert r1.embeddings_src.tobytes() == r2.embeddings_src.tobytes()
    assert r1.embeddings_tgt.tobytes() == r2.embeddings_tgt.tobytes()
    for a, b in zip(r1.log.records, r2.log.records):
        assert (a.l_gcn, a.l_d, a.l_adv, a.l_total) == (b.l_gcn, b.l_d, b.l_adv, b.l_total)
        assert (a.mean_score_src, a.mean_score_tgt) == (b.mean_score_src, b.mean_score_tgt)


def test_fit_seed_changes_output():
    pair = small_pair()
    r1 = fit(pair, quick_config(seed=1, epochs=2))
    r2 = fit(pair, quick_config(seed=2, epochs=2))
    assert r1.embeddings_src.tobytes() != r2.embeddings_src.tobytes()


def test_fit_structural_loss_decreases():
    pair = small_pair()
    cfg = quick_config(epochs=40, adv_weight=0.0)
    result = fit(pair, cfg)
    first = result.log.records[0].l_gcn
    last = result.log.records[-1].l_gcn
    assert last < first


def test_fit_tracks_best_epoch():
    pair = small_pair()
    result = fit(pair, quick_config(epochs=10))
    totals = [r.l_total for r in result.log.records]
    assert result.best_total == min(totals)
    assert result.best_epoch == int(np.argmin(totals))
    assert result.best_encoder.layer_dims == result.encoder.layer_dims


def test_fit_epoch_hook_sees_every_epoch():
    pair = small_pair()
    seen = []

    def hook(epoch, record, enc, v_src, v_tgt):
        assert v_src.shape == (20, 8) and v_tgt.shape == (20, 8)
        seen.append(epoch)

    fit(pair, quick_config(epochs=3), epoch_hook=hook)
    assert seen == [0, 1, 2]


def test_fit_minibatch_mode_runs_deterministically():
    pair = small_pair()
    cfg = quick_config(epochs=3, edge_batch_size=7)
    r1, r2 = fit(pair, cfg), fit(pair, cfg)
    assert len(r1.log) == 3
    assert r1.embeddings_src.tobytes() == r2.embeddings_src.tobytes()


def test_fit_sgd_optimizer_runs():
    pair = small_pair()
    result = fit(pair, quick_config(optimizer="sgd", epochs=3, encoder_lr=1e-3))
    assert len(result.log) == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_diverged_run_raises_and_dumps_last_good(tmp_path):
    pair = small_pair()
    cfg = quick_config(optimizer="sgd", encoder_lr=1e14, disc_lr=1e14, epochs=50)
    dump = tmp_path / "diverged.json"
    with pytest.raises(NonFiniteLoss) as info:
        fit(pair, cfg, diagnostics_path=dump)
    assert info.value.epoch >= 0
    assert dump.exists()
    ckpt = load_checkpoint(dump)
    assert ckpt.extra["failed_epoch"] == info.value.epoch
    assert ckpt.extra["last_finite_epoch"] < info.value.epoch
    for w in ckpt.encoder.weights:
        assert np.isfinite(w).all()


# --- train log -----------------------------------------------------------------


def test_train_log_csv_schema_and_round_trip(tmp_path):
    log = TrainLog()
    log.append(EpochRecord(0, 1.5, 0.25, 0.75, 2.25, 0.1, 0.9, 0.01))
    log.append(EpochRecord(1, 1.25, 0.3, 0.7, 1.95, 0.2, 0.8, 0.015))
    path = tmp_path / "log.csv"
    log.to_csv(path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0].keys()) == list(TrainLog.COLUMNS)
    assert len(rows) == 2
    assert float(rows[0]["l_gcn"]) == 1.5
    assert float(rows[1]["l_total"]) == 1.95
    assert int(rows[1]["epoch"]) == 1


def test_train_log_floats_survive_round_trip(tmp_path):
    value = 0.1 + 0.2  # 0.30000000000000004; repr must preserve it
    log = TrainLog()
    log.append(EpochRecord(0, value, value, value, value, value, value, value))
    path = tmp_path / "log.csv"
    log.to_csv(path)
    with open(path) as fh:
        row = list(csv.DictReader(fh))[0]
    assert float(row["l_gcn"]) == value
