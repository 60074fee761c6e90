import hashlib
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flownas.arch import (DEFAULT_THRESHOLDS, TABLE_IV, HwThresholds, check_constraints,
                          serialize_arch)
from flownas.errors import BudgetExhausted, CorruptCheckpoint
from flownas.search import (CURVE_HEADER, SearchConfig, SearchState, export_curve, load_checkpoint,
                            run_search, save_checkpoint, write_curve)
from flownas.space import initial_architecture


def hashed_score(arch, generation, child):
    """Deterministic pseudo-accuracy from the architecture text."""
    h = hashlib.sha256(serialize_arch(arch).encode()).digest()
    acc = int.from_bytes(h[:4], "big") / 2**32
    return acc, 1.0 - acc, 0.01


class Injected:
    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)

    def __call__(self, arch, g, c):
        acc = float(self.rng.choice([0.5, 0.6, 0.7, 0.8, 0.9]))
        return acc, float(self.rng.random()), 0.0


CFG = SearchConfig(n_generations=8, children_per_generation=4, seed=3)
A0 = initial_architecture(784, 11)


def test_single_child_single_generation():
    cfg = SearchConfig(n_generations=1, children_per_generation=1)
    state = run_search(cfg, lambda a, g, c: (0.7, 0.3, 0.0), initial=A0)
    child = state.records[0].children[0].arch
    assert state.best == child and state.best_val_acc == 0.7
    assert state.parent == child


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_search_invariants_with_injected_scores(seed):
    state = run_search(CFG, Injected(seed), initial=A0)
    assert len(state.records) == CFG.n_generations
    series = [r.best_val_acc for r in state.records]
    assert series == sorted(series)
    for prev, cur in zip(state.records, state.records[1:]):
        assert cur.parent in [c.arch for c in prev.children]
        assert cur.parent == prev.children[prev.best_child].arch
    all_children = [c for r in state.records for c in r.children]
    assert all(len(r.children) == CFG.children_per_generation for r in state.records)
    assert all(check_constraints(c.arch, DEFAULT_THRESHOLDS).admissible for c in all_children)
    assert state.best_val_acc == max(c.val_acc for c in all_children)
    first = next(r for r in state.records if r.best_val_acc == state.best_val_acc)
    assert state.best == first.children[first.best_child].arch
    flagged = [r.best_val_acc for r in state.records if r.new_global_best]
    assert all(a < b for a, b in zip(flagged, flagged[1:]))


def test_parent_tie_break_prefers_lower_loss_then_index():
    scores = {0: (0.9, 0.5), 1: (0.9, 0.2), 2: (0.9, 0.2), 3: (0.1, 0.0)}
    cfg = SearchConfig(n_generations=1, children_per_generation=4)
    state = run_search(cfg, lambda a, g, c: (*scores[c], 0.0), initial=A0)
    assert state.records[0].best_child == 1


def test_trajectory_reproducible():
    a = run_search(CFG, hashed_score, initial=A0)
    b = run_search(CFG, hashed_score, initial=A0)
    assert a.fingerprint() == b.fingerprint()
    c = run_search(SearchConfig(n_generations=8, children_per_generation=4, seed=4),
                   hashed_score, initial=A0)
    assert c.fingerprint() != a.fingerprint()


def test_parallel_jobs_match_serial():
    serial = run_search(CFG, hashed_score, initial=A0)
    parallel = run_search(SearchConfig(n_generations=8, children_per_generation=4, seed=3, jobs=4),
                          hashed_score, initial=A0)
    assert serial.fingerprint() == parallel.fingerprint()


def test_checkpoint_round_trip(tmp_path):
    state = run_search(CFG, hashed_score, initial=A0)
    p = tmp_path / "ck.json"
    save_checkpoint(state, p)
    back = load_checkpoint(p)
    assert back.to_dict() == state.to_dict()
    assert back.best == state.best and back.parent == state.parent


def test_truncated_checkpoint(tmp_path):
    p = tmp_path / "ck.json"
    save_checkpoint(run_search(CFG, hashed_score, initial=A0), p)
    p.write_text(p.read_text()[:-40])
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(p)


def test_checkpoint_version_mismatch(tmp_path):
    p = tmp_path / "ck.json"
    save_checkpoint(run_search(CFG, hashed_score, initial=A0), p)
    d = json.loads(p.read_text())
    d["version"] = 99
    p.write_text(json.dumps(d))
    with pytest.raises(CorruptCheckpoint, match="version 99"):
        load_checkpoint(p)


class Killer:
    def __init__(self, at_generation):
        self.at = at_generation

    def __call__(self, arch, g, c):
        if g == self.at and c == 2:
            raise KeyboardInterrupt
        return hashed_score(arch, g, c)


@pytest.mark.parametrize("kill_at", [1, 4, 7])
def test_resume_after_kill_is_bit_identical(tmp_path, kill_at):
    reference = run_search(CFG, hashed_score, initial=A0)
    ck = tmp_path / "ck.json"
    with pytest.raises(KeyboardInterrupt):
        run_search(CFG, Killer(kill_at), initial=A0, checkpoint_path=ck)
    partial = load_checkpoint(ck)
    assert partial.next_generation == kill_at
    resumed = run_search(CFG, hashed_score, state=partial, checkpoint_path=ck)
    assert resumed.fingerprint() == reference.fingerprint()
    assert load_checkpoint(ck).fingerprint() == reference.fingerprint()


def test_resume_with_other_seed_refused(tmp_path):
    state = run_search(SearchConfig(n_generations=2, children_per_generation=2, seed=3),
                       hashed_score, initial=A0)
    with pytest.raises(ValueError):
        run_search(SearchConfig(n_generations=4, children_per_generation=2, seed=5),
                   hashed_score, state=state)


def test_budget_exhausted_keeps_partial_state(tmp_path):
    ck = tmp_path / "ck.json"
    run_search(SearchConfig(n_generations=2, children_per_generation=2), hashed_score,
               initial=A0, checkpoint_path=ck)
    tight = SearchConfig(n_generations=3, children_per_generation=2,
                         thresholds=HwThresholds(1, 1, 1))
    with pytest.raises(BudgetExhausted):
        run_search(tight, hashed_score, state=load_checkpoint(ck), checkpoint_path=ck)
    assert load_checkpoint(ck).next_generation == 2


def test_curve_export(tmp_path):
    state = run_search(CFG, Injected(1), initial=A0)
    rows = export_curve(state)
    assert len(rows) == CFG.n_generations
    for (g, best, mean, new), rec in zip(rows, state.records):
        assert g == rec.generation
        assert mean == pytest.approx(sum(c.val_acc for c in rec.children) / len(rec.children))
        assert best == rec.best_val_acc and new == rec.new_global_best
    write_curve(state, tmp_path / "curve.csv")
    lines = (tmp_path / "curve.csv").read_text().splitlines()
    assert lines[0] == ",".join(CURVE_HEADER)
    assert len(lines) == CFG.n_generations + 1


def test_empty_curve():
    assert export_curve(SearchState(parent=A0, seed=0)) == []


def test_log_file_one_line_per_generation(tmp_path):
    log = tmp_path / "search.log"
    run_search(CFG, hashed_score, initial=A0, log_path=log)
    entries = [json.loads(line) for line in log.read_text().splitlines()]
    assert [e["generation"] for e in entries] == list(range(CFG.n_generations))
    assert all(len(e["children"]) == CFG.children_per_generation for e in entries)


def test_search_from_table_iv_stays_admissible():
    state = run_search(SearchConfig(n_generations=5, children_per_generation=10, seed=1),
                       hashed_score, initial=TABLE_IV)
    for r in state.records:
        for c in r.children:
            v = check_constraints(c.arch, DEFAULT_THRESHOLDS)
            assert v.admissible and v.cost == c.cost
