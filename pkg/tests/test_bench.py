import json

import pytest

from latentmol import bench, selfies
from latentmol.bench import AffinitySetup, TaskReport
from latentmol.molgraph import canonical_key
from latentmol.optimize import Objective, ObjectiveTerm
from latentmol.oracles import ExternalOracle, PropertyOracle, get_oracle
from latentmol.predictor import PredictorConfig, gen_training_set, train_predictor
from latentmol.refine import FilterPolicy

from conftest import TINY

MOCK_AFFINITY = PropertyOracle("affinity", lambda g: -len(g.atoms) / 10, "minimize")


@pytest.fixture(scope="module")
def vae(tiny_vae):
    return tiny_vae


@pytest.fixture(scope="module")
def logp_pred(vae):
    data = gen_training_set(vae, get_oracle("logp"), 300, seed=2)
    return train_predictor(data, "decoded", PredictorConfig(epochs=5), vae)


@pytest.fixture(scope="module")
def starts():
    return [selfies.random_string(k, TINY.n) for k in range(6)]


def test_report_rejects_non_finite_metrics():
    with pytest.raises(ValueError):
        TaskReport("x", {}, {"a": float("nan")})


def test_report_formats(tmp_path):
    g = selfies.decode("[C][C][O]")
    r = TaskReport("demo", {"seed": 1}, {"b": 2.0, "a": 1.0}, [bench.molecule_entry(g, {"logp": 0.5})],
                   {"h": bench.histogram([1, 2, 3], 3)}, seconds=1.5, run_id="abc")
    paths = r.write(tmp_path, "demo")
    doc = json.loads(paths["json"].read_text())
    assert set(doc) == {"task", "run_id", "config", "metrics", "molecules"}
    assert doc["molecules"][0]["key"] == canonical_key(g)
    assert "seconds" not in paths["json"].read_text()
    assert json.loads(paths["timing"].read_text()) == {"seconds": 1.5}
    assert paths["csv"].read_text().splitlines()[0] == "rank,key,smiles,logp"
    assert "task: demo" in paths["text"].read_text()
    assert json.loads(paths["plots"].read_text())["h"]["counts"] == [1, 1, 1]
    assert bench.histogram([]) == {"counts": [], "edges": []}


def test_random_generation(vae, starts):
    with pytest.warns(RuntimeWarning, match="unique@10k"):
        r = bench.task_random_generation(vae, 300, 0, starts)
    m = r.metrics
    assert m["valid_pct"] == 100.0
    assert "unique_at_10k_pct" not in m
    for k in ("valid_pct", "unique_at_1k_pct", "novel_pct"):
        assert 0 <= m[k] <= 100
    assert 0 <= m["diversity"] <= 1


def test_maximize_reports_sorted_oracle_values(vae, logp_pred):
    oracle = get_oracle("logp")
    obj = Objective([ObjectiveTerm(logp_pred)], steps=30)
    r = bench.task_maximize(vae, obj, oracle, 12, 0, batch_size=5)
    tops = [r.metrics[f"top{i}"] for i in (1, 2, 3)]
    assert tops == sorted(tops, reverse=True)
    # reported values are oracle values of the listed molecules
    assert [m["scores"]["logp"] for m in r.molecules] == tops
    assert 0 <= r.metrics["improved_oracle_pct"] <= 100


def test_maximize_is_reproducible(vae, logp_pred):
    oracle = get_oracle("logp")
    obj = Objective([ObjectiveTerm(logp_pred)], steps=20)
    a = bench.task_maximize(vae, obj, oracle, 8, 3)
    b = bench.task_maximize(vae, obj, oracle, 8, 3)
    assert a.to_json() == b.to_json()


def test_target_range_molecules_lie_inside(vae, logp_pred):
    oracle = get_oracle("logp")
    r = bench.task_target_range(vae, logp_pred, oracle, 20, 0, lo=-0.5, hi=1.5, steps=20)
    assert 0 <= r.metrics["success_pct"] <= 100
    assert all(-0.5 < m["scores"]["logp"] < 1.5 for m in r.molecules)
    assert r.rates["successes_per_second"] >= 0
    assert "successes_per_second" not in r.to_json()
    empty = bench.task_target_range(vae, logp_pred, oracle, 5, 0, lo=90, hi=91, steps=5)
    assert empty.metrics["success_pct"] == 0 and "diversity" not in empty.metrics


def test_similarity_structure(vae, logp_pred, starts):
    r = bench.task_similarity_constrained(vae, logp_pred, get_oracle("logp"), starts, steps=30)
    m = r.metrics
    assert m["success_pct@0.0"] == 100.0
    means = [m[f"improvement_mean@{d:.1f}"] for d in (0.0, 0.2, 0.4, 0.6)]
    assert all(x >= 0 for x in means)
    assert all(a >= b for a, b in zip(means, means[1:]))


def test_substructure_zero_steps_is_zero_delta(vae, logp_pred, starts):
    r = bench.task_substructure(vae, logp_pred, get_oracle("logp"), starts, [0, 1], "maximize", steps=0)
    assert r.metrics["delta_mean"] == 0.0 and r.metrics["retained_pct"] == 100.0


def test_substructure_directions(vae, logp_pred, starts):
    oracle = get_oracle("logp")
    up = bench.task_substructure(vae, logp_pred, oracle, starts, [0, 1], "maximize", steps=30)
    down = bench.task_substructure(vae, logp_pred, oracle, starts, [0, 1], "minimize", steps=30)
    assert up.metrics["delta_min"] >= 0 >= down.metrics["delta_max"]


def test_affinity_modes(vae, logp_pred):
    setup = AffinitySetup(logp_pred, logp_pred, logp_pred)
    single = bench.task_affinity(vae, MOCK_AFFINITY, setup, "single", 10, 0, steps=10)
    for prop in ("affinity", "qed", "sa"):
        assert set(single.plots[prop]) == {"before", "after"}
        assert f"{prop}_mean_after" in single.metrics
    assert single.metrics["top1_kd_nm"] > 0
    policy = FilterPolicy(qed_min=0.0, sa_max=10.0, ring_sizes=frozenset(range(3, 20)))
    multi = bench.task_affinity(vae, MOCK_AFFINITY, setup, "multi", 10, 0, steps=10, policy=policy)
    assert "filter_survivors" in multi.metrics
    dgs = [multi.metrics[k] for k in ("top1_dg", "top2_dg", "top3_dg") if k in multi.metrics]
    assert dgs == sorted(dgs)
    with pytest.raises(ValueError):
        bench.task_affinity(vae, MOCK_AFFINITY, setup, "both", 1, 0)


def test_affinity_unreachable_oracle_aborts(vae, logp_pred):
    dead = ExternalOracle("affinity", "/nonexistent/docking-binary", "minimize")
    with pytest.raises(RuntimeError):
        bench.task_affinity(vae, dead, AffinitySetup(logp_pred, logp_pred, logp_pred), "single", 3, 0, steps=2)
