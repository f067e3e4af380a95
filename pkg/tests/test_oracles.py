import math
import random
import sys
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentmol.corpus import random_graph, random_molecule
from latentmol.molgraph import MolGraph, canonical_key
from latentmol.oracles import (
    GAS_CONSTANT,
    INTERNAL_ORACLES,
    ExternalOracle,
    OracleCache,
    OracleError,
    cached,
    combine_poses,
    external_score_batch,
    get_oracle,
    heavy_atom_count,
    kd_from_dg,
    logp_surrogate,
    plogp,
    qed_surrogate,
    sa_surrogate,
)

from conftest import chain, cycle, permuted

RT = GAS_CONSTANT * 298.15


def echo(*args):
    return [sys.executable, "-m", "latentmol.echo_oracle", *args]


# -- surrogates --------------------------------------------------------------


def test_logp_examples():
    assert logp_surrogate(MolGraph(("C",))) == 0.2
    assert logp_surrogate(MolGraph(("C", "O"), ((0, 1, 1),))) == -0.2
    assert logp_surrogate(cycle(6)) == 0.6


def test_sa_examples():
    assert sa_surrogate(MolGraph(("C",))) == 1.0
    assert sa_surrogate(cycle(6)) == 1.3
    assert sa_surrogate(cycle(10)) == 2.3


def test_sa_size_and_branching_terms():
    assert sa_surrogate(chain(30)) == pytest.approx(1.5)
    neo = MolGraph(("C",) * 5, tuple((0, i, 1) for i in range(1, 5)))
    assert sa_surrogate(neo) == pytest.approx(1.2)
    assert sa_surrogate(chain(400)) == 10.0


def test_qed_at_mode_is_one():
    # two 5-rings joined by an N-containing linker, a tail, three F: 23 heavy
    # atoms, 2 rings and logP' = (19*0.2 - 0.6 + 3*0.1) - 10*0.1 = 2.5
    atoms = ["C"] * 23
    atoms[10] = "N"
    atoms[20] = atoms[21] = atoms[22] = "F"
    bonds = [(i, (i + 1) % 5, 1) for i in range(5)]
    bonds += [(5 + i, 5 + (i + 1) % 5, 1) for i in range(5)]
    bonds += [(4, 10, 1), (10, 11, 1), (11, 12, 1), (12, 5, 1), (9, 13, 1)]
    bonds += [(i, i + 1, 1) for i in range(13, 19)]
    bonds += [(13, 20, 1), (14, 21, 1), (15, 22, 1)]
    g = MolGraph(tuple(atoms), tuple(bonds))
    assert logp_surrogate(g) == 2.5
    assert qed_surrogate(g) == 1.0


def test_qed_formula_single_carbon():
    want = (math.exp(-(22**2) / 128) * math.exp(-(2.3**2) / 8) * math.exp(-4 / 4.5)) ** (1 / 3)
    assert qed_surrogate(MolGraph(("C",))) == pytest.approx(want, rel=1e-12)


def test_plogp_examples(monkeypatch):
    import latentmol.oracles as o

    monkeypatch.setattr(o, "logp_surrogate", lambda _: 2.0)
    monkeypatch.setattr(o, "sa_surrogate", lambda _: 3.0)
    assert o.plogp(cycle(7)) == -2.0
    monkeypatch.undo()
    g = chain(5)
    assert plogp(g) == logp_surrogate(g) - sa_surrogate(g)
    c7 = cycle(7)
    assert plogp(c7) == pytest.approx(logp_surrogate(c7) - sa_surrogate(c7) - 1)


def test_oracles_are_permutation_invariant():
    rng = random.Random(2)
    for _ in range(200):
        g = random_molecule(rng)
        h = permuted(g, rng)
        for oracle in INTERNAL_ORACLES.values():
            assert oracle(g) == oracle(h)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**9), st.integers(1, 40))
def test_surrogate_ranges(seed, n):
    g = random_graph(random.Random(seed), n)
    assert 1.0 <= sa_surrogate(g) <= 10.0
    assert 0.0 < qed_surrogate(g) <= 1.0


def test_oracle_registry():
    assert get_oracle("sa").direction == "minimize"
    assert get_oracle("qed").better(0.5, 0.4)
    assert get_oracle("sa").better(2.0, 3.0)
    with pytest.raises(ValueError):
        get_oracle("nope")


# -- thermodynamics ----------------------------------------------------------


def test_kd_examples():
    assert kd_from_dg(0.0) == 1e9
    assert kd_from_dg(-RT * math.log(10)) == pytest.approx(1e8, rel=1e-12)
    assert kd_from_dg(-10.0) < kd_from_dg(-9.0)


def test_combine_poses_examples():
    assert combine_poses([-7.5]) == -7.5
    assert combine_poses([-6.0] * 4) == pytest.approx(-6.0 - RT * math.log(4), abs=1e-12)
    want = -10 - RT * math.log(1 + math.exp(-8 / RT))
    assert abs(combine_poses([-10.0, -2.0]) - want) < 1e-6
    with pytest.raises(ValueError):
        combine_poses([])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-30, 10), min_size=1, max_size=10))
def test_combined_energy_never_exceeds_best_pose(dgs):
    assert combine_poses(dgs) <= min(dgs) + 1e-12


def test_combine_poses_is_stable_for_large_gaps():
    assert math.isfinite(combine_poses([-1000.0, 1000.0]))


# -- cache -------------------------------------------------------------------


def test_cache_persists_and_survives_a_torn_tail(tmp_path):
    path = tmp_path / "oracle.cache"
    cache = OracleCache(path)
    cache.put("k1", "qed", 0.5)
    cache.put("k2", "qed", -1.25)
    cache.put("k1", "qed", 9.0)  # first write wins
    again = OracleCache(path)
    assert again.get("k1", "qed") == 0.5 and again.get("k2", "qed") == -1.25 and len(again) == 2
    with open(path, "ab") as fh:
        fh.write(b"\x05\x00")
    assert len(OracleCache(path)) == 2


def test_cached_oracle_calls_through_once(tmp_path):
    calls = []
    base = INTERNAL_ORACLES["logp"]

    class Counting:
        name, direction, kind = base.name, base.direction, base.kind

        def __call__(self, g):
            calls.append(g)
            return base(g)

    cache = OracleCache(tmp_path / "c")
    wrapped = cached(Counting(), cache)
    g = cycle(6)
    assert wrapped(g) == wrapped(permuted(g, random.Random(1))) == 0.6
    assert len(calls) == 1


def test_cache_concurrent_writers(tmp_path):
    cache = OracleCache(tmp_path / "c")

    def work(k):
        for i in range(200):
            cache.put(f"{k}-{i}", "x", float(i))

    threads = [threading.Thread(target=work, args=(k,)) for k in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(OracleCache(tmp_path / "c")) == 800


# -- external protocol -------------------------------------------------------


def test_echo_zero():
    mols = [cycle(6), chain(3), MolGraph(("N",))]
    assert list(external_score_batch(mols, echo("--mode", "zero"))) == [0.0, 0.0, 0.0]


def test_out_of_order_responses_are_reassembled():
    rng = random.Random(6)
    mols = [random_molecule(rng) for _ in range(40)]
    out = external_score_batch(mols, echo("--mode", "heavy", "--shuffle", "5"), max_in_flight=8)
    assert list(out) == [heavy_atom_count(g) for g in mols]


def test_heavy_mock_matches_internal_count_on_1000_molecules():
    rng = random.Random(7)
    mols = [random_molecule(rng) for _ in range(1000)]
    out = external_score_batch(mols, echo("--mode", "heavy", "--shuffle", "7"))
    assert not out.errors
    assert list(out) == [heavy_atom_count(g) for g in mols]


def test_missing_and_malformed_items_are_marked():
    mols = [chain(k + 1) for k in range(10)]
    out = external_score_batch(mols, echo("--mode", "heavy", "--drop", "3"), timeout=5)
    assert out[3] is None and set(out.errors) == {3}
    assert sum(v is not None for v in out) == 9
    out = external_score_batch(mols, echo("--mode", "heavy", "--garble", "4"), timeout=5)
    assert out[4] is None and set(out.errors) == {4}


def test_timeout_marks_items():
    slow = [sys.executable, "-c", "import time, sys; sys.stdin.readline(); time.sleep(30)"]
    out = external_score_batch([chain(2), chain(3)], slow, timeout=0.5)
    assert list(out) == [None, None] and set(out.errors) == {0, 1}


def test_spawn_failure_raises():
    with pytest.raises(OracleError):
        external_score_batch([chain(2)], ["/nonexistent/oracle-binary"])


def test_external_oracle_uses_cache(tmp_path):
    cache = OracleCache(tmp_path / "c")
    oracle = ExternalOracle("heavy", " ".join(echo("--mode", "heavy")), cache=cache)
    g = cycle(5)
    assert oracle(g) == 5.0
    # the command is now broken, so a hit must come from the cache
    oracle.command = "/nonexistent/oracle-binary"
    assert oracle(permuted(g, random.Random(0))) == 5.0
    with pytest.raises(OracleError):
        oracle(chain(4))


def test_external_oracle_direction():
    oracle = ExternalOracle("affinity", "unused")
    assert oracle.sign == -1.0 and oracle.better(-3.0, -2.0)
    assert canonical_key(chain(2)) == canonical_key(chain(2))
