"""Acceptance criteria 1-11. Each test prints one PASS/FAIL line."""

import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from codemix.cli import main
from codemix.corpus import (
    MalformedTokenLine, Sentiment, SynthConfig, generate_synthetic, parse_conllu, serialize_conllu,
    split_dataset,
)
from codemix.evaluation import weighted_f1
from codemix.model import (
    CLASSIFIER, MLM, ChecksumMismatch, ModelConfig, forward_mlm, init_model, load_checkpoint,
    save_checkpoint, swap_head,
)
from codemix.numerics import cross_entropy
from codemix.pipeline import RunConfig, run_ablation, run_pretrain, tiny_run_config
from codemix.textnorm import normalize
from codemix.tokenizer import batch_arrays
from codemix.train import (
    ScheduleConfig, TrainConfig, discriminative_lrs, encode_dataset, finetune, frozen_groups,
    mask_tokens, stlr,
)


def report(n, ok, detail, capsys):
    line = f"ACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


def test_1_gradient_fidelity(capsys):
    from test_model import _perturbed, model_grad_check
    t = time.time()
    errs = [model_grad_check(_perturbed(head)).max_rel_error for head in (MLM, CLASSIFIER)]
    dt = time.time() - t
    report(1, max(errs) <= 1e-4 and dt < 60,
           f"max rel err mlm={errs[0]:.2e} classifier={errs[1]:.2e} (<=1e-4), {dt:.1f}s (<60s)", capsys)


def test_2_stlr_closed_form(capsys):
    cfg = ScheduleConfig(lr_max=0.01, cut_frac=0.1, ratio=32, total_steps=100)
    got = [stlr(t, cfg) for t in (0, 10, 55)]
    want = [3.125e-4, 0.01, 5.15625e-3]
    err = max(abs(a - b) for a, b in zip(got, want))
    report(2, err <= 1e-12, f"stlr(0,10,55)={got}, max abs err {err:.1e} (<=1e-12)", capsys)


def test_3_discriminative_rates(capsys):
    got = discriminative_lrs(0.01, 2.6, 3)
    err = max(abs(a - b) for a, b in zip(got, [0.01, 3.84615e-3, 1.47929e-3]))
    rng = np.random.default_rng(0)
    geometric = True
    for _ in range(1000):
        lr, f, n = rng.uniform(1e-5, 1), rng.uniform(1.01, 10), int(rng.integers(1, 15))
        lrs = discriminative_lrs(lr, f, n)
        geometric &= all(abs(b * f - a) <= 1e-12 * a and b < a for a, b in zip(lrs, lrs[1:]))
    report(3, err <= 1e-8 and geometric, f"max abs err {err:.1e} (<=1e-8), geometric on 1000 random configs: {geometric}",
           capsys)


def test_4_freezing(capsys):
    data = generate_synthetic(SynthConfig(n_per_class=8), 0)
    train, valid = split_dataset(data, 0.25, 0)
    rc = tiny_run_config()
    vocab, model, _ = run_pretrain(train, rc, 0)
    model = swap_head(model, CLASSIFIER, 0)
    before = {k: v.copy() for k, v in model.params.items() if not k.startswith("head.")}
    model, _ = finetune(model, train, valid, vocab, TrainConfig(epochs=1, batch_size=4, max_steps=1),
                        ScheduleConfig(lr_max=1e-2))
    identical = all(model.params[k].tobytes() == v.tobytes() for k, v in before.items())
    monotone = all(frozen_groups(e2, n) <= frozen_groups(e1, n)
                   for n in range(1, 21) for e1 in range(21) for e2 in range(e1, 21))
    report(4, identical and monotone,
           f"non-head params bit-identical after epoch-0 step: {identical}; unfreezing monotone (n,e<=20): {monotone}",
           capsys)


def _brute_f1(t, p):
    total = 0.0
    for c in range(3):
        tp = sum(a == c and b == c for a, b in zip(t, p))
        pp = sum(b == c for b in p)
        ap = sum(a == c for a in t)
        prec, rec = (tp / pp if pp else 0.0), (tp / ap if ap else 0.0)
        total += ap * (2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return total / len(t)


def test_5_metric_oracle(capsys):
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 50))
        t = [Sentiment(int(x)) for x in rng.integers(0, 3, n)]
        p = [Sentiment(int(x)) for x in rng.integers(0, 3, n)]
        worst = max(worst, abs(weighted_f1(t, p) - _brute_f1([int(x) for x in t], [int(x) for x in p])))
    P, N = Sentiment.POSITIVE, Sentiment.NEGATIVE
    hand = weighted_f1([P, P, N], [P, N, N])
    ok = worst <= 1e-12 and abs(hand - 0.66667) <= 1e-5 and abs(hand - 2 / 3) <= 1e-9
    report(5, ok, f"max deviation from brute force {worst:.1e} (<=1e-12); hand case {hand:.6f}", capsys)


def test_6_preprocessing_golden(capsys):
    golden = {"Qué GRANDEEE @juan #wow": "que grande", "Hoy estoy feliiiizzz": "hoy estoy feliz"}
    golden_ok = all(normalize(k) == v for k, v in golden.items())
    rng = np.random.default_rng(6)
    alphabet = list("abcdeñóÁÉ@# \tXYZ!!!aaaa")
    failures = 0
    for _ in range(10_000):
        s = "".join(rng.choice(alphabet, int(rng.integers(0, 40))))
        once = normalize(s)
        failures += normalize(once) != once
    report(6, golden_ok and failures == 0,
           f"golden examples ok: {golden_ok}; idempotence failures on 10000 noisy strings: {failures}", capsys)


def test_7_parser_round_trip(capsys):
    bad = 0
    for seed in range(1000):
        data = generate_synthetic(SynthConfig.noisy(0.5, n_per_class=int(seed % 4)), seed)
        bad += parse_conllu(serialize_conllu(data)) != list(data)
    try:
        parse_conllu("meta\t1\tpositive\nhola\tspa\nmal\n")
        line = None
    except MalformedTokenLine as exc:
        line = exc.line
    report(7, bad == 0 and line == 3, f"round-trip mismatches on 1000 datasets: {bad}; error line {line} (expected 3)",
           capsys)


def test_8_mlm_learning_signal(capsys):
    rc = tiny_run_config()
    data = generate_synthetic(rc.synth, 0)
    train, _ = split_dataset(data, rc.valid_fraction, 0)
    vocab, model0, _ = run_pretrain(train, tiny_run_config(pretrain=TrainConfig(epochs=1, max_steps=0)), 0)
    # untrained loss on masked tokens
    seqs = encode_dataset(train, vocab, 70)[:256]
    rows, pos, tgt = [], [], []
    for r, s in enumerate(seqs):
        c, p, o = mask_tokens(s, 0.15, [0, r], vocab.size)
        rows.append(c)
        pos += [(r, int(x)) for x in p]
        tgt += [int(x) for x in o]
    _, mask = batch_arrays(seqs)
    init_loss, _ = cross_entropy(forward_mlm(model0, (np.stack(rows), mask), pos), tgt)
    hist = []
    _, trained, _ = run_pretrain(train, rc, 0, vocab, hist)
    final = float(np.mean([h.loss for h in hist[-10:]]))
    ln_v = math.log(vocab.size)
    ok = len(hist) == 200 and final < 0.8 * ln_v and abs(init_loss - ln_v) <= 0.15 * ln_v
    report(8, ok, f"{len(hist)} steps: final loss {final:.3f} (< {0.8 * ln_v:.3f}); "
                  f"untrained {init_loss:.3f} vs ln V {ln_v:.3f} (+-15%)", capsys)


@pytest.mark.slow
def test_9_end_to_end(tmp_path, capsys):
    t = time.time()
    d = tmp_path / "data"
    assert main(["synth", "--out", str(d)]) == 0
    n_tweets = sum(1 for line in open(d / "train.conllu") if line.startswith("meta")) + \
        sum(1 for line in open(d / "valid.conllu") if line.startswith("meta"))
    outs = []
    for run in ("a", "b"):
        pre, ft = tmp_path / run / "pre", tmp_path / run / "ft"
        assert main(["pretrain", "--train", str(d / "train.conllu"), "--out", str(pre)]) == 0
        assert main(["finetune", "--train", str(d / "train.conllu"), "--valid", str(d / "valid.conllu"),
                     "--checkpoint", str(pre / "pretrained.ckpt"), "--out", str(ft)]) == 0
        outs.append(ft)
        if run == "a":
            elapsed = time.time() - t
    f1 = float([line for line in (outs[0] / "final_report.txt").read_text().splitlines()
                if line.startswith("weighted_f1=")][0].split("=")[1])
    same = all((outs[0] / n).read_bytes() == (outs[1] / n).read_bytes()
               for n in ("finetuned.ckpt", "finetune_history.csv", "final_report.txt"))
    # 667 per class: the nearest balanced size to 2,000
    ok = n_tweets == 2001 and f1 >= 0.90 and elapsed < 600 and same
    report(9, ok, f"{n_tweets} tweets, val weighted-F1 {f1:.4f} (>=0.90), first run {elapsed:.0f}s (<600s), "
                  f"bit-reproducible: {same}", capsys)


@pytest.mark.slow
def test_10_ablation_direction(capsys):
    rc = RunConfig()
    data = generate_synthetic(rc.synth, 0)
    train, valid = split_dataset(data, rc.valid_fraction, 0)
    rows = run_ablation(train, valid, rc, (0, 1, 2))
    m = [r.mean for r in rows]
    ok = m[0] <= m[1] <= m[2] and m[2] - m[0] >= 0.02
    detail = "; ".join(f"{r.name}={r.mean:.4f} {[round(s, 4) for s in r.scores]}" for r in rows)
    report(10, ok, detail, capsys)


def test_11_checkpoint_integrity(tmp_path, capsys):
    model = swap_head(init_model(ModelConfig(n_layers=2, hidden=16, n_heads=2, ff_dim=32, vocab_size=50), 0),
                      CLASSIFIER, 3)
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    back = load_checkpoint(path)
    exact = back.config == model.config and all(
        back.params[k].tobytes() == v.tobytes() for k, v in model.params.items())
    data = bytearray(path.read_bytes())
    data[len(data) // 2] ^= 0x01
    path.write_bytes(bytes(data))
    try:
        load_checkpoint(path)
        rejected = False
    except ChecksumMismatch:
        rejected = True
    report(11, exact and rejected, f"round trip bit-exact: {exact}; corrupted file rejected by CRC: {rejected}",
           capsys)
