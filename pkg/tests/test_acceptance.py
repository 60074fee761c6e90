"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s`` to see the lines as
they happen; they are also repeated in the terminal summary.
"""

import contextlib
import io
import json
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flownas import cli
from flownas.arch import (DEFAULT_THRESHOLDS, TABLE_IV, check_constraints, count_flops,
                          count_params, infer_shapes, max_tensor)
from flownas.dataset import holdout_split
from flownas.engine.network import forward, init_weights
from flownas.engine.train import TrainConfig, evaluate, train
from flownas.pcap import Protocol, iter_packets
from flownas.quant import calibrate, compare
from flownas.search import TrainingEvaluator, load_checkpoint
from flownas.sessions import (STRATEGIES, UDP_PAD_BYTES, AnonymizationMap, PreprocStrategy,
                              normalize_session, rewrite_packet, scale, session_vectors)
from flownas.space import DEFAULT_SPACE, spawn_admissible
from flownas.toy import toy_dataset

from conftest import ACCEPTANCE_LINES, frame, ipv4, mac, pcap_bytes
from oracle import gradient_check, naive_logits, random_small_arch, randomise_bn

ROOT = Path(__file__).resolve().parent.parent
TOY_CONFIG = ROOT / "configs" / "toy.toml"

TABLE_VIII = {
    784: (10.08, 20.12), 676: (8.61, 17.29), 576: (7.25, 14.71), 484: (6.07, 12.38),
    400: (4.90, 10.19), 324: (3.95, 8.26), 256: (3.01, 6.45), 196: (2.24, 4.90),
}


@contextlib.contextmanager
def criterion(number, budget_s, spent=0.0):
    """Time the body, enforce the budget and record a verdict line.

    ``spent`` is time already used by shared fixtures on this criterion's behalf.
    """
    start = time.perf_counter() - spent
    ok = False
    try:
        yield
        ok = True
    finally:
        elapsed = time.perf_counter() - start
        ok = ok and elapsed < budget_s
        verdict = "PASS" if ok else "FAIL"
        line = f"criterion {number}: {verdict} ({elapsed:.2f} s, budget {budget_s:g} s)"
        print(line)
        ACCEPTANCE_LINES.append(line)
    assert elapsed < budget_s, f"criterion {number} took {elapsed:.1f} s"


def rel(a, b):
    return abs(a - b) / abs(b)


# 1 ------------------------------------------------------------------------------

def test_criterion_1_golden_cost_model(capsys, tmp_path):
    with criterion(1, 1.0):
        assert cli.main(["estimate", "--arch", str(ROOT / "configs" / "table_iv.arch")]) == 0
        report = {}
        for line in capsys.readouterr().out.splitlines():
            parts = line.split()
            if parts and parts[0] in ("params", "max_tensor", "flops") and "<" in parts:
                report[parts[0]] = int(parts[1])
        assert report["max_tensor"] == 20_124
        assert rel(report["params"], 88_260) <= 0.01
        assert rel(report["flops"], 10.08e6) <= 0.02


# 2 ------------------------------------------------------------------------------

def test_criterion_2_input_size_scaling():
    with criterion(2, 1.0):
        params = set()
        for length, (flops_m, tensor_k) in TABLE_VIII.items():
            arch = TABLE_IV.with_input_len(length)
            assert rel(count_flops(arch) / 1e6, flops_m) <= 0.02, length
            assert rel(max_tensor(arch) / 1e3, tensor_k) <= 0.02, length
            params.add(count_params(arch))
        assert len(params) == 1


# 3 ------------------------------------------------------------------------------

def test_criterion_3_shape_trace():
    with criterion(3, 1.0):
        shapes = [str(s) for s in infer_shapes(TABLE_IV)]
        assert shapes == ["784x1", "156x129", "77x110", "39x110", "17x38", "9x38", "1x38"]


# 4 ------------------------------------------------------------------------------

_B = TABLE_IV.blocks
MUTANTS = {
    "max_tensor": replace(TABLE_IV, input_len=800, blocks=(
        replace(_B[0], filters=140), _B[1], replace(_B[2], filters=30))),
    "params": replace(TABLE_IV, n_classes=1000),
    "flops": replace(TABLE_IV, blocks=(_B[0], replace(_B[1], filters=140), _B[2])),
}


def test_criterion_4_constraint_gate():
    with criterion(4, 60.0):
        assert check_constraints(TABLE_IV, DEFAULT_THRESHOLDS).admissible
        for tag, arch in MUTANTS.items():
            assert check_constraints(arch, DEFAULT_THRESHOLDS).violations == (tag,)
        rng = np.random.default_rng(4)
        parent, outputs = TABLE_IV, []
        while len(outputs) < 10_000:
            children, _ = spawn_admissible(parent, DEFAULT_SPACE, DEFAULT_THRESHOLDS, 10, rng)
            outputs += children
            parent = children[int(rng.integers(len(children)))]
        assert all(check_constraints(c, DEFAULT_THRESHOLDS).admissible for c in outputs)


# 5 ------------------------------------------------------------------------------

def test_criterion_5_gradient_oracle():
    with criterion(5, 300.0):
        rng = np.random.default_rng(5)
        ok = total = 0
        for i in range(20):
            arch = random_small_arch(rng, length=(12, 32), max_filters=4, dropout=True)
            w = randomise_bn(init_weights(arch, rng, np.float64), rng)
            x = rng.random((3, arch.input_len, 1))
            y = rng.integers(0, arch.n_classes, 3)
            n_ok, n, _ = gradient_check(arch, w, x, y, seed=i)
            ok += n_ok
            total += n
        assert ok / total >= 0.99, (ok, total)


# 6 ------------------------------------------------------------------------------

def test_criterion_6_forward_oracle():
    with criterion(6, 120.0):
        rng = np.random.default_rng(6)
        for _ in range(50):
            arch = random_small_arch(rng)
            w = randomise_bn(init_weights(arch, rng, np.float64), rng)
            x = rng.random((int(rng.integers(1, 5)), arch.input_len, 1))
            got = forward(arch, w, x, train=False).logits
            want = np.stack([naive_logits(arch, w, s) for s in x])
            assert np.all(np.abs(got - want) <= 1e-6 * np.maximum(np.abs(want), 1e-12))


# 7 ------------------------------------------------------------------------------

def test_criterion_7_search_dynamics(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("FLOWNAS_SEED", raising=False)
    cfg = cli.load_run_config(TOY_CONFIG)
    with criterion(7, 900.0):
        ref_dir, part_dir = tmp_path / "ref", tmp_path / "part"
        argv = ["search", "--config", str(TOY_CONFIG)]
        assert cli.main(argv + ["--out", str(ref_dir)]) == 0
        reference = load_checkpoint(ref_dir / "checkpoint.json")
        assert len(reference.records) == 10
        assert all(len(r.children) == 4 for r in reference.records)

        series = [r.best_val_acc for r in reference.records]
        assert series == sorted(series)
        log = [json.loads(s) for s in (ref_dir / "search.log").read_text().splitlines()]
        assert [e["generation"] for e in log] == list(range(10))
        th = cfg.thresholds
        for entry in log:
            for child in entry["children"]:
                assert child["params"] < th.params
                assert child["max_tensor"] < th.max_tensor
                assert child["flops"] < th.flops
        assert all(check_constraints(c.arch, th).admissible
                   for r in reference.records for c in r.children)

        real_call = TrainingEvaluator.__call__

        def dies_mid_run(self, arch, generation, child):
            if generation == 5 and child == 2:
                raise KeyboardInterrupt
            return real_call(self, arch, generation, child)

        monkeypatch.setattr(TrainingEvaluator, "__call__", dies_mid_run)
        assert cli.main(argv + ["--out", str(part_dir)]) == cli.EXIT_INTERRUPTED
        assert load_checkpoint(part_dir / "checkpoint.json").next_generation == 5
        monkeypatch.setattr(TrainingEvaluator, "__call__", real_call)
        assert cli.main(argv + ["--out", str(part_dir), "--resume"]) == 0

        resumed = load_checkpoint(part_dir / "checkpoint.json")
        assert resumed.fingerprint() == reference.fingerprint()
        assert (part_dir / "curve.csv").read_bytes() == (ref_dir / "curve.csv").read_bytes()
        assert (part_dir / "best.arch").read_bytes() == (ref_dir / "best.arch").read_bytes()
    capsys.readouterr()


# 8 ------------------------------------------------------------------------------

ETH, IP = 14, 20


def _capture(rng_bytes, proto, n_sessions):
    frames = []
    for s in range(n_sessions):
        for i in range(3):
            fwd = i % 2 == 0
            a, b = ipv4(10, 0, s, 1), ipv4(192, 168, s, 2)
            frames.append(frame(
                src_mac=mac(2 * s + (0 if fwd else 1)), dst_mac=mac(2 * s + (1 if fwd else 0)),
                src_ip=a if fwd else b, dst_ip=b if fwd else a,
                sport=20000 + s if fwd else 443, dport=443 if fwd else 20000 + s,
                proto=proto, payload=rng_bytes[s][i]))
    return pcap_bytes(frames)


def _check_rewrite(raw, out, proto, s: PreprocStrategy, payload):
    l4 = 20 if proto == "tcp" else 8
    pad = UDP_PAD_BYTES if (s.udp_pad and proto == "udp") else 0
    base = 0 if s.eth_removal else ETH
    ip, tr = base, base + IP
    assert len(out) == len(raw) - (ETH if s.eth_removal else 0) + pad

    if not s.eth_removal:
        if s.mac_zero:
            assert out[0:12] == bytes(12)
        elif s.mac_anon:
            assert out[0:6] != raw[0:6] and out[6:12] != raw[6:12]
        else:
            assert out[0:12] == raw[0:12]
        assert out[12:14] == raw[12:14]
    if s.ip_zero:
        assert out[ip + 12 : ip + 20] == bytes(8)
    else:
        assert out[ip + 12 : ip + 16] != raw[ETH + 12 : ETH + 16]
        assert out[ip + 16 : ip + 20] != raw[ETH + 16 : ETH + 20]
    assert out[ip : ip + 12] == raw[ETH : ETH + 12]
    if s.port_zero:
        assert out[tr : tr + 4] == bytes(4)
    else:
        assert out[tr : tr + 4] == raw[ETH + IP : ETH + IP + 4]
    assert out[tr + 4 : tr + l4] == raw[ETH + IP + 4 : ETH + IP + l4]
    if pad:
        assert out[tr + 8 : tr + 20] == bytes(UDP_PAD_BYTES)
        assert l4 + pad == 20
    assert out[tr + l4 + pad :] == payload


@settings(max_examples=25, deadline=None)
@given(st.lists(st.lists(st.binary(min_size=1, max_size=300), min_size=3, max_size=3),
                min_size=1, max_size=4),
       st.sampled_from(["tcp", "udp"]), st.binary(min_size=1, max_size=16),
       st.sampled_from([64, 256, 784]))
def _preprocessing_properties(payloads, proto, key, length):
    data = _capture(payloads, proto, len(payloads))
    packets = list(iter_packets(io.BytesIO(data)))
    assert all(p.protocol == (Protocol.TCP if proto == "tcp" else Protocol.UDP) for p in packets)
    for number in range(1, 25):
        s = PreprocStrategy.from_id(number)
        anon = AnonymizationMap(key)
        outs = [rewrite_packet(p, s, anon) for p in packets]
        for p, out, pl in zip(packets, outs, [x for sess in payloads for x in sess]):
            _check_rewrite(p.data, out, proto, s, pl)
        # run-stable: a fresh map with the same key gives the same bytes
        again = AnonymizationMap(key)
        assert [rewrite_packet(p, s, again) for p in packets] == outs
        if s.ip_anon or s.mac_anon:
            seen = {}
            for p in packets:
                for kind, width, offset in (("ip", 4, ETH + 12), ("ip", 4, ETH + 16),
                                            ("mac", 6, 0), ("mac", 6, 6)):
                    v = p.data[offset : offset + width]
                    seen.setdefault(kind, {})[v] = anon(kind, v)
            for mapping in seen.values():
                assert len(set(mapping.values())) == len(mapping)

        vectors = session_vectors(packets, s, AnonymizationMap(key), length)
        assert len(vectors) == len(payloads)
        for v in vectors:
            assert v.data.shape == (length,) and v.data.dtype == np.uint8
            scaled = scale(v)
            assert scaled.shape == (length,)
            assert scaled.min() >= 0.0 and scaled.max() <= 1.0


def test_criterion_8_preprocessing_semantics():
    with criterion(8, 120.0):
        assert len(STRATEGIES) == 24
        _preprocessing_properties()
        anon = AnonymizationMap(b"acceptance")
        ips = [i.to_bytes(4, "big") for i in range(0, 2**32, 2**32 // 100_000)]
        assert len({anon("ip", ip) for ip in ips}) == len(ips)
        v = normalize_session([b"\x01\x02", b"\xff" * 1000], 784)
        assert v.data.shape == (784,) and v.data[:3].tolist() == [1, 2, 255]
        assert normalize_session([b"\x07"], 10).data.tolist() == [7] + [0] * 9


# 9 and 10 ------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def toy_model():
    arch = replace(TABLE_IV, n_classes=4)
    train_set, test_set = holdout_split(toy_dataset(2000, 784, 4, seed=2024), 0.2, seed=0)
    start = time.perf_counter()
    res = train(arch, train_set, None, TrainConfig(max_epochs=10, batch_size=32, seed=0))
    return arch, res.weights, train_set, test_set, time.perf_counter() - start


def test_criterion_9_toy_learnability(toy_model):
    arch, weights, _, test_set, train_seconds = toy_model
    with criterion(9, 1200.0, spent=train_seconds):
        acc = evaluate(arch, weights, test_set).accuracy
        print(f"toy test accuracy {acc:.4f} on {len(test_set)} held-out vectors")
        assert acc >= 0.95


def test_criterion_10_ptq_sanity(toy_model):
    arch, weights, train_set, test_set, _ = toy_model
    with criterion(10, 300.0):
        x = train_set.scaled(weights["dense.w"].dtype)[:512]
        batches = [x[i : i + 128] for i in range(0, len(x), 128)]
        int8 = compare(arch, weights, calibrate(arch, weights, batches, bits=8), test_set)
        int16 = compare(arch, weights, calibrate(arch, weights, batches, bits=16), test_set)
        print(f"real {int8.acc_real:.4f}  int8 {int8.acc_quant:.4f}  int16 {int16.acc_quant:.4f}")
        assert abs(int8.delta) <= 0.02
        assert abs(int16.delta) <= 0.001
