import math

import numpy as np
import pytest

from conftest import scaled_agent
from simulmt import harness as hx
from simulmt.config import ConfigError, ExperimentConfig
from simulmt.decoding import AgentPolicy, heuristic_policy, simultaneous_greedy_decode
from simulmt.training import TrainingDiverged


def _cfg(**sets):
    cfg = ExperimentConfig()
    for k, v in {"env.emb": 4, "env.hidden": 6, "env.att": 5, "agent.hidden": 5,
                 "agent.baseline_hidden": 4, "data.n_train": 20, "data.n_valid": 6,
                 "data.n_test": 8, "data.len_min": 2, "data.len_max": 5, "data.vocab_size": 9,
                 "train.max_updates": 2, "train.eval_every": 1, "train.batch_sentences": 3,
                 "train.samples_per_sentence": 2, **sets}.items():
        cfg.set(k, str(v))
    return cfg


@pytest.fixture(scope="module")
def small():
    cfg = _cfg()
    splits = hx.synthetic_splits(cfg)
    env = hx.new_env(cfg, len(splits["train"].vocab_src), len(splits["train"].vocab_tgt))
    for p in env.params.params.values():
        p *= 4.0
    return cfg, env, splits


def test_wait_until_end_has_unit_ap_per_sentence(small):
    cfg, env, splits = small
    rep = hx.evaluate(env, heuristic_policy("wue"), splits["test"].pairs)
    assert all(r["ap"] == 1.0 for r in rep.rows)
    assert all(r["T_s"] == len(s) for r, (s, _) in zip(rep.rows, splits["test"].pairs))


def test_wait_one_step_ap_closed_form(small):
    cfg, env, splits = small
    rep = hx.evaluate(env, heuristic_policy("wos"), splits["test"].pairs)
    for r, (src, _) in zip(rep.rows, splits["test"].pairs):
        n, m = len(src), r["T_t"]
        assert r["ap"] == pytest.approx(sum(min(t, n) for t in range(1, m + 1)) / (n * m))


def test_beam_of_one_aggregates_equal_greedy(small):
    cfg, env, splits = small
    pol = AgentPolicy(scaled_agent(env, 3, 2.0, hidden=5))
    cmp = hx.compare_beam(env, pol, splits["test"].pairs, k=1)
    assert cmp["greedy"] == cmp["beam"]
    assert cmp["delta_bleu"] == cmp["delta_ap"] == cmp["delta_cw"] == 0.0


def test_metrics_rows_and_aggregates(small):
    cfg, env, splits = small
    rep = hx.evaluate(env, heuristic_policy("wos"), splits["test"].pairs)
    assert [r["sentence_id"] for r in rep.rows] == list(range(len(rep.rows)))
    assert set(rep.rows[0]) == set(hx.METRIC_FIELDS)
    agg = rep.aggregates
    assert agg["n"] == len(rep.rows)
    assert agg["ap"] == pytest.approx(np.mean([r["ap"] for r in rep.rows]))
    assert agg["cw_max"] == max(r["cw_max"] for r in rep.rows)
    assert math.isnan(hx.EvalReport([]).aggregates["bleu"])
    with pytest.raises(ValueError):
        hx.evaluate(env, heuristic_policy("wos"), splits["test"].pairs, mode="sample")


def test_metrics_csv_roundtrip_with_config_header(small, tmp_path):
    cfg, env, splits = small
    rep = hx.evaluate(env, heuristic_policy("wiw"), splits["test"].pairs)
    path = tmp_path / "m.csv"
    hx.write_metrics_csv(path, rep, cfg.header())
    text = path.read_text()
    assert text.startswith("# [env]")
    rows = hx.read_csv(path)
    assert len(rows) == len(rep.rows)
    for got, want in zip(rows, rep.rows):
        assert float(got["bleu"]) == want["bleu"]  # repr keeps full precision
        assert float(got["ap"]) == want["ap"]


def test_heatmap_columns_are_distributions_over_read_prefix(small, tmp_path):
    cfg, env, splits = small
    src, _ = splits["test"].pairs[0]
    traj = simultaneous_greedy_decode(env, heuristic_policy("wos"), src)
    names = [f"s{i}" for i in range(len(src))]
    tgt = [f"y{j}" for j in range(len(traj.emitted))]
    M = hx.export_heatmap(traj, names, tgt, tmp_path / "h")
    np.testing.assert_allclose(M.sum(axis=0), 1.0)
    for j, s in enumerate(traj.reads_before_emit):
        assert np.all(M[s:, j] == 0.0)
    assert (tmp_path / "h.svg").read_text().startswith("<svg")
    wait = hx.read_csv(tmp_path / "h_wait.csv")
    assert [int(r["s"]) for r in wait] == traj.reads_before_emit
    with pytest.raises(ValueError, match="labels"):
        hx.export_heatmap(traj, names[:-1], tgt, tmp_path / "bad")


def test_sweep_configs_isolate_the_targeted_term():
    cfg = _cfg(**{"reward.alpha": -0.1, "reward.beta": -2.0})
    ap = hx.sweep_configs(cfg)
    assert [c.reward.d_star for c in ap] == [0.3, 0.5, 0.7]
    assert all(c.reward.alpha == 0.0 and c.reward.beta == -2.0 for c in ap)
    cfg.set("sweep.target", "cw")
    cw = hx.sweep_configs(cfg)
    assert [c.reward.c_star for c in cw] == [2.0, 5.0, 8.0]
    assert all(c.reward.beta == 0.0 and c.reward.alpha == -0.1 for c in cw)
    assert cfg.reward.beta == -2.0  # the base config is untouched


def test_sweep_rejects_grids_without_a_delay_term():
    with pytest.raises(ConfigError, match="beta"):
        hx.sweep_configs(_cfg(**{"reward.beta": 0.0}))
    with pytest.raises(ConfigError, match="alpha"):
        hx.sweep_configs(_cfg(**{"sweep.target": "cw", "reward.alpha": 0.0}))


def test_sweep_writes_table_and_reports_divergence(small, tmp_path, monkeypatch):
    cfg, env, splits = small
    cfg = cfg.copy()
    cfg.set("sweep.d_star_grid", "0.4,0.8")
    real = hx.train_agent

    def flaky(env_, agent, baseline, tp, vp, rcfg, tcfg, progress=None):
        if rcfg.d_star == 0.8:
            raise TrainingDiverged("policy entropy collapsed")
        return real(env_, agent, baseline, tp, vp, rcfg, tcfg, progress)

    monkeypatch.setattr(hx, "train_agent", flaky)
    rows = hx.sweep(cfg, env, splits["train"].pairs, splits["valid"].pairs, tmp_path)
    assert [r["status"] for r in rows] == ["ok", "diverged: policy entropy collapsed"]
    assert rows[0]["alpha"] == 0.0 and rows[0]["d_star"] == 0.4
    assert math.isnan(rows[1]["bleu"])
    table = hx.read_csv(tmp_path / "sweep.csv")
    assert [r["d_star"] for r in table] == ["0.4", "0.8"]
    assert (tmp_path / "curve_0.csv").exists() and (tmp_path / "agent_0.ckpt").exists()
    assert not (tmp_path / "agent_1.ckpt").exists()
    assert (tmp_path / "sweep.csv").read_text().startswith("# [env]")


def test_env_and_agent_checkpoints_roundtrip(small, tmp_path):
    cfg, env, splits = small
    hx.save_env(tmp_path / "env.ckpt", env, cfg)
    back = hx.load_env(tmp_path / "env.ckpt", cfg, env.cfg.src_vocab, env.cfg.tgt_vocab)
    for k in env.params.params:
        assert back.params[k].tobytes() == env.params[k].tobytes()
    agent, base = hx.new_agent(cfg, env)
    agent.params["g_b"][...] = [0.25, -0.5]
    hx.save_agent(tmp_path / "agent.ckpt", agent, base, cfg)
    a2, _ = hx.load_agent(tmp_path / "agent.ckpt", cfg, env)
    np.testing.assert_array_equal(a2.params["g_b"], [0.25, -0.5])


def test_make_policy():
    with pytest.raises(ValueError, match="trained agent"):
        hx.make_policy("agent")
    assert hx.make_policy("wid").kind == "wid"


def test_train_from_config_selection(small):
    cfg, env, splits = small
    res, chosen = hx.train_from_config(cfg, env, splits["train"].pairs, splits["valid"].pairs)
    np.testing.assert_array_equal(chosen.params["g_W"], res.best.agent_params["g_W"])
    final_cfg = cfg.copy()
    final_cfg.set("train.select", "final")
    res2, chosen2 = hx.train_from_config(final_cfg, env, splits["train"].pairs,
                                         splits["valid"].pairs)
    assert chosen2 is res2.agent


def test_curve_svg_and_escaping():
    svg = hx.curve_svg([(0.5, 0.4, "d*=<0.5>"), (0.9, 0.8, "b&c")])
    assert svg.startswith("<svg") and "&lt;0.5&gt;" in svg and "b&amp;c" in svg
