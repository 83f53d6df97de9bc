"""Acceptance suite: one test per shipped guarantee.

1. gradient suite       - every op and the full loss pass FD checks, < 1 min
2. objective algebra    - tk/neg_tk identities over >= 1000 random matrices
3. metric oracles       - AUC and p@k match exhaustive oracles
4. diagnostic oracles   - KS and OLS match independent recomputation
5. end-to-end learning  - tiny model reaches AUC >= 0.90, p@5 >= 0.70
6. ablation direction   - full objective >= cross-only; no-cross trails
7. bias phenomenon      - clustered corpora show the intra/cross distance gap
8. determinism          - identical seeds give byte-identical histories;
                          checkpoint resume matches to 1e-10
"""

import json
import time

import numpy as np
import pytest
from test_tensor import central_diff, check_grads, leaf

from doclink import tensor
from doclink.cli import main
from doclink.corpus import SynthConfig, generate_synthetic, token_overlap_scores
from doclink.diagnostics import bias_report, ks_two_sample, spread_regression
from doclink.encoder import ModelConfig, batch_representations, init_params
from doclink.evalmetrics import (
    document_auc,
    document_precision_at_k,
    evaluate,
    evaluate_matrices,
)
from doclink.objective import ObjectiveConfig, neg_tk, tk, total_loss
from doclink.rng import RngStream
from doclink.tensor import Tensor
from doclink.trainer import TrainConfig, train


# ---- 1: gradients -------------------------------------------------------------


def sampled_fd(f, t: Tensor, entries, step: float = 1e-5):
    """Central differences at selected flat indices only."""
    flat = t.data.reshape(-1)
    out = {}
    for i in entries:
        keep = flat[i]
        flat[i] = keep + step
        with tensor.no_grad():
            hi = f().item()
        flat[i] = keep - step
        with tensor.no_grad():
            lo = f().item()
        flat[i] = keep
        out[i] = (hi - lo) / (2.0 * step)
    return out


def test_criterion_1_gradient_suite():
    start = time.monotonic()
    rng = np.random.default_rng(0)

    a, b = leaf(rng, 3, 4), leaf(rng, 3, 4)
    v = leaf(rng, 4)
    check_grads(lambda: (a * b + a / (b * b + 3.0) - v).sum(), [a, b, v])
    pos = Tensor(rng.uniform(0.5, 2.0, size=(2, 5)), requires_grad=True)
    check_grads(lambda: (pos**2.5).sum(), [pos])
    check_grads(lambda: pos.exp().sum() + pos.log().sum() + pos.sqrt().sum(), [pos])
    off = Tensor(rng.normal(size=(3, 3)) + np.sign(rng.normal(size=(3, 3))) * 0.5,
                 requires_grad=True)
    check_grads(lambda: off.relu().sum(), [off])

    m1, m2 = leaf(rng, 3, 4), leaf(rng, 4, 2)
    check_grads(lambda: (m1 @ m2).sum(), [m1, m2])
    batched = leaf(rng, 2, 3, 4)
    check_grads(lambda: (batched @ m2).sum(), [batched, m2])
    check_grads(lambda: (m1.T.reshape(2, 6) * 1.5).sum(), [m1])

    table = leaf(rng, 7, 3)
    ids = np.array([[0, 2, 2], [6, 0, 1]])
    check_grads(lambda: tensor.embedding(table, ids).sum(), [table])
    check_grads(lambda: tensor.take(table, np.array([1, 1, 4])).sum(), [table])
    check_grads(lambda: tensor.concat([m1, m1], axis=1).mean(), [m1])
    check_grads(lambda: tensor.stack([m2, m2], axis=0).sum(), [m2])
    check_grads(lambda: m1.mean(axis=0).sum() + m1.sum(axis=1).sum(), [m1])
    spread_vals = Tensor(rng.permutation(12).reshape(3, 4) * 1.0, requires_grad=True)
    check_grads(lambda: tensor.max_reduce(spread_vals, axis=1).sum(), [spread_vals])

    logits = leaf(rng, 4, 5)
    mask = np.array([True, True, False, True, False])
    check_grads(lambda: (tensor.softmax(logits, axis=-1) * 0.7).sum(), [logits])
    check_grads(lambda: tensor.softmax(logits, axis=-1, mask=mask).sum(), [logits])
    x = leaf(rng, 4, 6)
    gain, bias = leaf(rng, 6), leaf(rng, 6)
    check_grads(lambda: (tensor.layernorm(x, gain, bias) * 0.3).sum(), [x, gain, bias])

    corpus = generate_synthetic(
        SynthConfig(
            train_docs=2, val_docs=0, test_docs=0,
            sentences_per_doc=3, images_per_doc=3, density=0.34,
            vocab_size=50, obj_dim=5, objects_per_image=2,
            sentence_len=4, concept_len=2, tokens_per_cluster=4, sigma=0.1,
        ),
        RngStream(1),
    )
    config = ModelConfig(
        vocab_size=50, obj_dim=5, embed_dim=8, sentence_layers=1,
        image_layers=1, heads=2, word_dim=6, max_sentence_len=8,
    )
    params = init_params(config, RngStream(2))
    docs = corpus.split_documents("train")

    def loss_fn():
        reps = batch_representations(docs, params, config)
        loss, _ = total_loss(reps, ObjectiveConfig(), RngStream(77).child("dropout"))
        return loss

    named = params.named_parameters()
    for t in named.values():
        t.grad = None
    tensor.backward(loss_fn())
    picker = np.random.default_rng(3)
    for name, t in named.items():
        entries = picker.choice(t.data.size, size=min(3, t.data.size), replace=False)
        fd = sampled_fd(loss_fn, t, [int(i) for i in entries])
        got = t.grad if t.grad is not None else np.zeros_like(t.data)
        for i, want in fd.items():
            np.testing.assert_allclose(
                got.reshape(-1)[i], want, rtol=1e-4, atol=1e-7,
                err_msg=f"parameter {name} entry {i}",
            )
    assert time.monotonic() - start < 60.0


# ---- 2: objective algebra ------------------------------------------------------


def tk_selection_oracle(m: np.ndarray, k: int):
    """Independent re-derivation of the cells tk averages over."""
    rows, cols = m.shape
    kr, kc = min(k, rows), min(k, cols)
    weights = np.zeros_like(m)
    row_best = np.argmax(m, axis=1)
    order = np.argsort(-m[np.arange(rows), row_best], kind="stable")
    for r in order[:kr]:
        weights[r, row_best[r]] += 1.0
    col_best = np.argmax(m, axis=0)
    order = np.argsort(-m[col_best, np.arange(cols)], kind="stable")
    for c in order[:kc]:
        weights[col_best[c], c] += 1.0
    return weights, kr + kc


def test_criterion_2_objective_algebra():
    rng = np.random.default_rng(42)
    checked = 0
    for _ in range(1000):
        rows = int(rng.integers(2, 9))
        cols = int(rng.integers(2, 9))
        m = np.round(rng.normal(size=(rows, cols)), 2)  # ties included
        perm = (rng.permutation(rows), rng.permutation(cols))
        for k in range(1, max(rows, cols) + 1):
            low = float(neg_tk(Tensor(m), k).data)
            high = float(tk(Tensor(m), k).data)
            assert low == -float(tk(Tensor(-m), k).data)
            assert m.min() - 1e-12 <= low <= high <= m.max() + 1e-12
            shuffled = float(tk(Tensor(m[perm[0]][:, perm[1]]), k).data)
            assert abs(shuffled - high) < 1e-12

            mt = Tensor(m.copy(), requires_grad=True)
            tensor.backward(tk(mt, k))
            weights, total = tk_selection_oracle(m, k)
            assert np.all(mt.grad[weights == 0.0] == 0.0)
            np.testing.assert_allclose(mt.grad.sum(), 1.0, atol=1e-12)
            np.testing.assert_allclose(mt.grad, weights / total, atol=1e-12)
            checked += 1
    assert checked >= 1000


# ---- 3: metric oracles ---------------------------------------------------------


def auc_oracle(scores: np.ndarray, gold) -> float | None:
    pos = [scores[m, n] for m, n in gold]
    neg = [
        scores[m, n]
        for m in range(scores.shape[0])
        for n in range(scores.shape[1])
        if (m, n) not in gold
    ]
    if not pos or not neg:
        return None
    wins = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
    return wins / (len(pos) * len(neg))


def p_at_k_oracle(scores: np.ndarray, gold, k: int) -> float:
    cells = sorted(
        ((m, n) for m in range(scores.shape[0]) for n in range(scores.shape[1])),
        key=lambda cell: (-scores[cell], cell),
    )
    return sum(1.0 for cell in cells[:k] if cell in gold) / k


def test_criterion_3_metric_oracles():
    rng = np.random.default_rng(7)
    for i in range(200):
        scores = np.round(rng.uniform(size=(5, 5)), 1)  # heavy ties
        n_gold = int(rng.integers(0, 26))
        flat = rng.choice(25, size=n_gold, replace=False)
        gold = {(int(f) // 5, int(f) % 5) for f in flat}

        got = document_auc(scores, gold)
        want = auc_oracle(scores, gold)
        if want is None:
            assert got is None
        else:
            np.testing.assert_allclose(got, want, atol=1e-12)
        for k in (1, 3, 5, 10, 25):
            np.testing.assert_allclose(
                document_precision_at_k(scores, gold, k),
                p_at_k_oracle(scores, gold, k),
                atol=1e-12,
            )


# ---- 4: diagnostic oracles -----------------------------------------------------


def test_criterion_4_diagnostic_oracles():
    rng = np.random.default_rng(8)
    for _ in range(50):
        a = np.round(rng.normal(size=int(rng.integers(2, 60))), 1)
        b = np.round(rng.normal(loc=0.3, size=int(rng.integers(2, 60))), 1)
        d, _ = ks_two_sample(a, b)
        scan = max(
            abs(np.mean(a <= t) - np.mean(b <= t)) for t in np.concatenate([a, b])
        )
        assert d == scan
    sample = rng.normal(size=40)
    assert ks_two_sample(sample, sample.copy()) == (0.0, 1.0)

    img = rng.uniform(0, 4, size=50)
    txt = rng.uniform(0, 4, size=50)
    noisy = rng.uniform(0, 1, size=50)
    report = spread_regression([(f"d{i}", img[i], txt[i], noisy[i]) for i in range(50)])
    x = np.column_stack([np.ones(50), img, txt])
    np.testing.assert_allclose(report.coefficients, np.linalg.pinv(x) @ noisy, atol=1e-8)

    exact = 0.2 + 1.1 * img - 0.7 * txt
    linear = spread_regression([(f"d{i}", img[i], txt[i], exact[i]) for i in range(50)])
    assert linear.r_squared == pytest.approx(1.0, abs=1e-10)


# ---- 5 and 6: learning behavior -----------------------------------------------


def learning_synth(sigma=0.1, token_noise=0.1):
    return SynthConfig(
        train_docs=500, val_docs=100, test_docs=100,
        sentences_per_doc=5, images_per_doc=5, density=0.2,
        vocab_size=200, obj_dim=16, objects_per_image=3,
        sentence_len=8, concept_len=2, tokens_per_cluster=4,
        sigma=sigma, token_noise=token_noise,
    )


@pytest.fixture(scope="module")
def learning_corpus():
    return generate_synthetic(learning_synth(), RngStream(100))


def learning_model(corpus) -> ModelConfig:
    return ModelConfig(
        vocab_size=corpus.vocab_size, obj_dim=corpus.obj_dim,
        embed_dim=16, sentence_layers=1, image_layers=1, heads=2,
        word_dim=16, max_sentence_len=12,
    )


def test_criterion_5_end_to_end_learning(learning_corpus):
    start = time.monotonic()
    noiseless = generate_synthetic(learning_synth(sigma=0.0, token_noise=0.0), RngStream(100))
    docs = noiseless.split_documents("test")
    oracle = evaluate_matrices(
        {d.id: token_overlap_scores(d) for d in docs},
        {d.id: d.gold_edges for d in docs},
    )
    assert oracle.macro_auc == 1.0  # corpus family is separable

    model = learning_model(learning_corpus)
    result = train(
        learning_corpus, model, ObjectiveConfig(),
        TrainConfig(max_lr=5e-3, warmup_steps=50, batch_size=11, max_epochs=15, seed=0),
    )
    report = evaluate(learning_corpus, "test", result.params, model, ks=(1, 5))
    assert report.macro_auc >= 0.90
    assert report.p_at[5] >= 0.70
    assert time.monotonic() - start < 600.0


def test_criterion_6_ablation_direction(learning_corpus):
    model = learning_model(learning_corpus)
    toggles = {
        "full": dict(use_cross=True, use_intra=True, use_sub=True),
        "cross_only": dict(use_cross=True, use_intra=False, use_sub=False),
        "no_cross": dict(use_cross=False, use_intra=True, use_sub=True),
    }
    auc = {name: [] for name in toggles}
    for seed in (0, 1, 2):
        for name, flags in toggles.items():
            result = train(
                learning_corpus, model, ObjectiveConfig(),
                TrainConfig(max_lr=5e-3, warmup_steps=50, batch_size=11,
                            max_epochs=10, seed=seed, **flags),
            )
            report = evaluate(learning_corpus, "test", result.params, model, ks=(1,))
            auc[name].append(report.macro_auc)
    full = float(np.mean(auc["full"]))
    cross_only = float(np.mean(auc["cross_only"]))
    no_cross = float(np.mean(auc["no_cross"]))
    assert full >= cross_only - 0.01
    assert no_cross < cross_only


# ---- 7: bias phenomenon --------------------------------------------------------


def test_criterion_7_bias_phenomenon():
    def corpus_with(center_scale):
        return generate_synthetic(
            SynthConfig(
                train_docs=40, val_docs=2, test_docs=2,
                sentences_per_doc=5, images_per_doc=5, density=0.2,
                vocab_size=200, obj_dim=16, objects_per_image=3,
                sentence_len=8, concept_len=2, tokens_per_cluster=4,
                sigma=0.5, doc_center_scale=center_scale,
            ),
            RngStream(200),
        )

    clustered = bias_report(corpus_with(3.0), "train", rng=RngStream(7).child("diag"))
    uniform = bias_report(corpus_with(0.0), "train", rng=RngStream(7).child("diag"))
    assert clustered.ks_p_value < 0.01
    assert uniform.ks_statistic < clustered.ks_statistic


# ---- 8: determinism ------------------------------------------------------------


def test_criterion_8_determinism(tmp_path):
    gen_config = tmp_path / "gen.json"
    gen_config.write_text(json.dumps({"synth": dict(
        train_docs=12, val_docs=2, test_docs=2,
        sentences_per_doc=3, images_per_doc=3, density=0.34,
        vocab_size=150, obj_dim=6, objects_per_image=2,
        sentence_len=4, concept_len=2, tokens_per_cluster=4, sigma=0.1,
    )}))
    data = tmp_path / "data"
    assert main(["gen", "--out", str(data), "--config", str(gen_config), "--seed", "5"]) == 0

    def train_config(epochs):
        path = tmp_path / f"train-{epochs}.json"
        path.write_text(json.dumps({
            "model": dict(embed_dim=8, sentence_layers=1, image_layers=1,
                          heads=2, word_dim=8, max_sentence_len=8),
            "train": dict(max_lr=5e-3, warmup_steps=5, batch_size=4,
                          max_epochs=epochs, seed=9),
        }))
        return str(path)

    corpus = str(data / "corpus.jsonl")
    runs = {}
    for tag in ("a", "b"):
        out = tmp_path / f"run-{tag}"
        assert main(["train", "--corpus", corpus, "--out", str(out),
                     "--config", train_config(3)]) == 0
        runs[tag] = out
    history_a = (runs["a"] / "history.json").read_bytes()
    assert history_a == (runs["b"] / "history.json").read_bytes()

    half = tmp_path / "run-half"
    assert main(["train", "--corpus", corpus, "--out", str(half),
                 "--config", train_config(2)]) == 0
    resumed = tmp_path / "run-resumed"
    assert main(["train", "--corpus", corpus, "--out", str(resumed),
                 "--config", train_config(3),
                 "--resume", str(half / "checkpoint.json")]) == 0
    full_history = json.loads(history_a)
    resumed_history = json.loads((resumed / "history.json").read_bytes())
    assert abs(full_history[2]["total"] - resumed_history[2]["total"]) <= 1e-10
    assert abs(full_history[2]["val_loss"] - resumed_history[2]["val_loss"]) <= 1e-10
