import math

import pytest

import fedil


def small_config(**extra):
    c = fedil.Config()
    keys = dict(num_classes=3, synthetic_dim=6, synthetic_per_class=40, synthetic_test_per_class=30,
                num_clients=4, clients_per_round=2, total_rounds=4, local_epochs=1, hidden_dims=8,
                eval_every=2, gamma=0.2, tau=0.6, promote_t=2)
    keys.update(extra)
    for k, v in keys.items():
        c.set(k, str(v))
    return c


def test_forward_is_a_distribution():
    arch = fedil.ModelArch(4, [5], 3)
    theta = fedil.init_params(arch, 7)
    assert len(theta) == arch.param_count == 4 * 5 + 5 + 5 * 3 + 3
    p = fedil.forward(theta, arch, [0.1, -0.2, 0.3, 0.0])
    assert math.isclose(sum(p), 1.0, rel_tol=0, abs_tol=1e-12)


def test_config_text_and_errors():
    c = small_config()
    again = fedil.Config.from_text(c.to_text())
    assert again.hash() == c.hash()
    assert c.to_dict()["mode"] == "fedil"
    with pytest.raises(ValueError, match="nmu"):
        fedil.Config.from_text("nmu_classes = 3\n")


def test_run_is_deterministic_and_observable(tmp_path):
    seen = []
    r = fedil.run_experiment(small_config(), lambda rec, g: seen.append((rec["round"], rec["delta_norm"])))
    assert [s[0] for s in seen] == [1, 2, 3, 4]
    assert [s[1] for s in seen] == r.norms
    assert fedil.run_experiment(small_config()).final_global == r.final_global
    paths = r.persist(str(tmp_path))
    assert any(p.endswith("metrics.csv") for p in paths)
    assert fedil.load_checkpoint(str(tmp_path / "checkpoint.bin")) == r.final_global


def test_gate_and_aggregate():
    g = [0.0, 0.0]
    s = [1.0, 0.0]
    sim, open_ = fedil.cosine_gate([1.0, 1.0], g, s)
    assert math.isclose(sim, 1 / math.sqrt(2)) and open_
    nxt, gates, norm = fedil.aggregate(g, s, [[2.0, 0.0], [-1.0, 0.0], [0.0, 4.0]])
    assert gates == [True, False, True]
    assert nxt == [1.0, 2.0]
    assert math.isclose(norm, math.sqrt(5.0))


def test_selection_and_monitor():
    ids = fedil.select_clients(10, 5, 3, 1)
    assert ids == sorted(set(ids)) and len(ids) == 5
    traj, fixed = fedil.banach_demo(0.5, 1.0, 0.0, 60)
    assert fixed == 2.0 and abs(traj[-1] - 2.0) < 1e-9
    assert fedil.contraction_verdict([0.9 ** k for k in range(40)], 20)[0]
    assert fedil.contraction_verdict([1.0, 2.0], 20) is None


def test_credibility_replay():
    hit = (0.99, 1, 1)
    assert fedil.credibility_replay([hit] * 3, 0.95, 3) == (3, 1)
    assert fedil.credibility_replay([hit, hit, (0.5, 1, 1), hit, hit], 0.95, 3) is None
    assert fedil.credibility_replay([hit] * 10, 0.95, 0) is None


def test_invalid_config_is_rejected():
    with pytest.raises(fedil.ConfigError, match="clients_per_round"):
        fedil.run_experiment(small_config(clients_per_round=9))
