"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line (run with -s to see them live).

Criterion 6 trains the full pipeline ten times (two label-weighting modes,
seeds 0-4) on the standard 4-class synthetic scene; everything else is
property- and oracle-based. Criterion 8 needs user-supplied real data and
skips unless the environment points at converted container files.
"""

import contextlib
import math
import os
import time
from fractions import Fraction

import numpy as np
import pytest

from protomix import autodiff as ad
from protomix.autodiff import Tensor, grad_check
from protomix.data import (
    PatchSample,
    SplitSpec,
    augment_target,
    extract_all_patches,
    split_few_shot,
    synth_dataset,
)
from protomix.episodes import Episode, EpisodeConfig
from protomix.evaluation import compute_metrics, confusion_matrix, evaluate, knn_predict
from protomix.fewshot import class_log_probs, compute_prototypes, mixed_episode_loss
from protomix.mixing import MixedQuery, apply_mix, cutmix_lambdas, sample_mask, transmix_lambdas
from protomix.model import ModelParams, TransformerConfig, extract_features_and_attention
from protomix.training import (
    TrainConfig,
    episode_loss,
    load_train_state,
    run_schedule,
    save_train_state,
    state_to_named,
)


@contextlib.contextmanager
def criterion(number, label):
    try:
        yield
    except BaseException:
        print(f"\nACCEPTANCE {number} ({label}): FAIL")
        raise
    print(f"\nACCEPTANCE {number} ({label}): PASS")


# ---------------------------------------------------------------------------
# criterion 1: gradient correctness of the full loss


def toy_episode(rng, n_way=2, k_shot=1, m_query=2, patch=3, bands=3):
    def sample(cid):
        base = np.zeros(bands)
        base[cid % bands] = 1.0
        pixels = base + 0.3 * rng.standard_normal((patch, patch, bands))
        return PatchSample(pixels=pixels.astype(np.float32), label=cid, center=(0, 0))

    support = [sample(cid) for cid in range(1, n_way + 1) for _ in range(k_shot)]
    query = [sample(cid) for cid in range(1, n_way + 1) for _ in range(m_query)]
    return Episode(support=support, query=query,
                   class_ids=list(range(1, n_way + 1)), episode_index=0)


def test_criterion_1_full_loss_gradients():
    with criterion(1, "gradient correctness"):
        started = time.perf_counter()
        cfg = TransformerConfig(d_model=16, n_heads=2, d_head=8, d_feed=16,
                                n_encoders=2, patch_size=3)
        from protomix.training import init_params

        params = init_params(cfg, None, 3, seed=0)
        episode = toy_episode(np.random.default_rng(0))
        train_cfg = TrainConfig(lr=1e-3, total_iterations=1, source_iterations=0,
                                mode="apnt*", mix_mode="transmix", seed=0)

        def full_loss(tensors):
            model = ModelParams(cfg, tensors)
            breakdown = episode_loss(model, episode, train_cfg,
                                     np.random.default_rng(7), "target")
            return breakdown.loss

        err = grad_check(full_loss, params.tensors, epsilon=1e-4,
                         max_coords_per_tensor=8, rng=np.random.default_rng(1))
        elapsed = time.perf_counter() - started
        assert err < 1e-4, f"max relative error {err}"
        assert elapsed < 60.0, f"took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# criterion 2: attention-map invariants


def test_criterion_2_attention_invariants():
    with criterion(2, "attention invariants"):
        from protomix.training import init_params

        cfg = TransformerConfig(d_model=12, n_heads=2, d_head=6, d_feed=12,
                                n_encoders=2, patch_size=5)
        rng = np.random.default_rng(2)
        checked = 0
        for param_seed in range(20):
            params = init_params(cfg, None, 4, seed=param_seed)
            patches = rng.uniform(-2.0, 2.0, size=(50, 5, 5, 4))
            with ad.no_grad():
                _, maps = extract_features_and_attention(patches, "target", params)
            assert (maps.data >= 0.0).all()
            assert np.abs(maps.data.sum(axis=(1, 2)) - 1.0).max() < 1e-6
            checked += maps.data.shape[0]
        assert checked == 1000

        params = init_params(cfg, None, 4, seed=0)
        for case in range(25):
            patch = rng.uniform(size=(5, 5, 4))
            perm = rng.permutation(25)
            permuted = patch.reshape(25, 4)[perm].reshape(5, 5, 4)
            with ad.no_grad():
                f_a, m_a = extract_features_and_attention(patch[None], "target", params)
                f_b, m_b = extract_features_and_attention(permuted[None], "target", params)
            assert np.abs(f_a.data - f_b.data).max() < 1e-9
            assert np.abs(m_a.data.reshape(25)[perm] - m_b.data.reshape(25)).max() < 1e-9


# ---------------------------------------------------------------------------
# criterion 3: mixing oracles


def test_criterion_3_mixing_oracles():
    with criterion(3, "mixing oracles"):
        rng = np.random.default_rng(3)

        # apply_mix: per-pixel selection oracle, 1e4 random cases
        for _ in range(10_000):
            mask = sample_mask(5, rng)
            x_i = rng.uniform(size=(5, 5, 2))
            x_k = rng.uniform(size=(5, 5, 2))
            mixed = apply_mix(x_i, x_k, mask)
            for r in range(5):
                for c in range(5):
                    want = x_i[r, c] if mask.grid[r, c] else x_k[r, c]
                    if not np.array_equal(mixed[r, c], want):
                        raise AssertionError(f"selection mismatch at {(r, c)}")

        # cutmix: popcount oracle, exact
        for _ in range(10_000):
            mask = sample_mask(9, rng)
            lam_1, lam_2 = cutmix_lambdas(mask)
            ones = sum(1 for v in mask.grid.ravel() if v)
            assert lam_1 == ones / 81
            assert abs(lam_1 + lam_2 - 1.0) < 1e-12

        # transmix: masked-sum oracle at 1e-12
        for _ in range(10_000):
            mask = sample_mask(9, rng)
            att_i = rng.uniform(size=(9, 9))
            att_i /= att_i.sum()
            att_k = rng.uniform(size=(9, 9))
            att_k /= att_k.sum()
            lam_1, lam_2 = transmix_lambdas(mask, att_i, att_k)
            raw_1 = sum(att_i[r, c] for r in range(9) for c in range(9) if mask.grid[r, c])
            raw_2 = sum(att_k[r, c] for r in range(9) for c in range(9) if not mask.grid[r, c])
            assert abs(lam_1 - raw_1 / (raw_1 + raw_2)) < 1e-12
            assert abs(lam_1 + lam_2 - 1.0) < 1e-12

        # uniform attention reduces to cutmix exactly, in rational arithmetic
        uniform = np.full((9, 9), Fraction(1, 81), dtype=object)
        for _ in range(50):
            mask = sample_mask(9, rng)
            lam_1, lam_2 = transmix_lambdas(mask, uniform, uniform)
            ones = int(mask.grid.sum())
            assert lam_1 == Fraction(ones, 81)
            assert lam_2 == Fraction(81 - ones, 81)


# ---------------------------------------------------------------------------
# criterion 4: loss reductions


def test_criterion_4_loss_reductions():
    with criterion(4, "loss reductions"):
        rng = np.random.default_rng(4)

        # prototypes match a streaming-mean oracle at 1e-12
        features = rng.standard_normal((30, 6))
        labels = np.repeat([1, 2, 3], 10)
        protos = compute_prototypes(features, labels)
        for j, cid in enumerate(protos.class_ids):
            mean, count = np.zeros(6), 0
            for f, lab in zip(features, labels):
                if lab == cid:
                    count += 1
                    mean = mean + (f - mean) / count
            assert np.abs(protos.vectors.data[j] - mean).max() < 1e-12

        # lambda_1 = 1 path equals the plain cross entropy at 1e-10
        query_features = rng.standard_normal((9, 6))
        query_labels = [1 + h % 3 for h in range(9)]
        mixed = [
            MixedQuery(pixels=None, source_i=h, source_k=h, label_i=lab, label_k=1 + (lab % 3),
                       lambda_1=1.0, lambda_2=0.0, mask=None)
            for h, lab in enumerate(query_labels)
        ]
        total = mixed_episode_loss(mixed, query_features, protos).total
        log_p = class_log_probs(query_features, protos).data
        plain = -np.mean([log_p[h, protos.class_ids.index(lab)]
                          for h, lab in enumerate(query_labels)])
        assert abs(total - plain) < 1e-10

        # translation invariance of probabilities at 1e-9
        shift = rng.standard_normal(6) * 25.0
        shifted = compute_prototypes(protos.vectors.data + shift, protos.class_ids,
                                     class_ids=protos.class_ids)
        p_a = class_log_probs(query_features, protos).data
        p_b = class_log_probs(query_features + shift, shifted).data
        assert np.abs(p_a - p_b).max() < 1e-9


# ---------------------------------------------------------------------------
# criterion 5: metrics oracles


def test_criterion_5_metrics_oracles():
    with criterion(5, "metrics oracles"):
        rng = np.random.default_rng(5)
        refs = rng.uniform(size=(500, 8))
        labels = rng.integers(1, 9, size=500)
        tests = rng.uniform(size=(40, 8))
        for k in (1, 3, 5, 7, 9):
            mine = knn_predict(tests, refs, labels, k)
            for row, t in enumerate(tests):
                order = sorted((float(np.sum((t - r) ** 2)), i) for i, r in enumerate(refs))
                votes = {}
                for _, i in order[:k]:
                    votes[labels[i]] = votes.get(labels[i], 0) + 1
                top = max(votes.values())
                tied = [lab for lab, v in votes.items() if v == top]
                if len(tied) > 1:
                    means = {lab: np.mean([d for d, i in order[:k] if labels[i] == lab])
                             for lab in tied}
                    low = min(means.values())
                    tied = [lab for lab in tied if means[lab] == low]
                assert mine[row] == min(tied), (k, row)

        # kappa on [[8,2],[3,7]] re-derived through pair-agreement counting
        cm = np.array([[8, 2], [3, 7]])
        metrics = compute_metrics(cm)
        pairs = [(t, p) for t in range(2) for p in range(2) for _ in range(cm[t, p])]
        p_o = sum(1 for t, p in pairs if t == p) / len(pairs)
        p_e = sum(
            (sum(1 for t, _ in pairs if t == c) / len(pairs))
            * (sum(1 for _, p in pairs if p == c) / len(pairs))
            for c in range(2)
        )
        assert abs(metrics.kappa - (p_o - p_e) / (1 - p_e)) < 1e-12
        assert abs(metrics.kappa - 0.5) < 1e-12
        assert abs(metrics.oa - 0.75) < 1e-12

        perfect = compute_metrics(np.diag([4, 9, 2, 7]))
        assert perfect.oa == 1.0 and perfect.aa == 1.0 and perfect.kappa == 1.0


# ---------------------------------------------------------------------------
# criterion 6: end-to-end synthetic reproduction

ACCEPT_MODEL = TransformerConfig(d_model=32, n_heads=2, d_head=16, d_feed=48,
                                 n_encoders=2, patch_size=3)
ACCEPT_LR = 3e-3
ACCEPT_ITERATIONS = 500
ACCEPT_SEEDS = (0, 1, 2, 3, 4)


def run_accept_pipeline(samples, mix, seed):
    spec = SplitSpec(shots_per_class=5, augment_to=200, seed=seed)
    labeled, test = split_few_shot(samples, spec)
    reference = augment_target(labeled, spec, seed=seed)
    train_cfg = TrainConfig(lr=ACCEPT_LR, total_iterations=ACCEPT_ITERATIONS,
                            source_iterations=0, mode="apnt*", mix_mode=mix, seed=seed)
    episode_cfg = EpisodeConfig(n_way=4, k_shot=5, m_query=10, seed=seed)
    state, log = run_schedule(None, reference, ACCEPT_MODEL, train_cfg, episode_cfg)
    result = evaluate(state.params, test, reference, k=5)
    return state, log, result


@pytest.fixture(scope="module")
def synthetic_runs():
    started = time.perf_counter()
    cube, labels = synth_dataset(4, 16, (2, 2), 0.05, seed=0, width=40, height=40)
    samples = extract_all_patches(cube, labels, ACCEPT_MODEL.patch_size)
    runs = {}
    for mix in ("transmix", "cutmix"):
        for seed in ACCEPT_SEEDS:
            runs[(mix, seed)] = run_accept_pipeline(samples, mix, seed)
    return runs, time.perf_counter() - started


def test_criterion_6a_training_loss_halves(synthetic_runs):
    with criterion("6a", "loss halves from its initial level"):
        runs, _ = synthetic_runs
        _, log, _ = runs[("transmix", 0)]
        initial = np.mean([e.loss for e in log[:100]])
        final = log[-1].loss
        assert final < 0.5 * initial, f"final {final:.4f} vs initial mean {initial:.4f}"


def test_criterion_6b_overall_accuracy(synthetic_runs):
    with criterion("6b", "synthetic test OA >= 0.90"):
        runs, _ = synthetic_runs
        _, _, result = runs[("transmix", 0)]
        assert result.metrics.oa >= 0.90, f"OA {result.metrics.oa:.4f}"


def test_criterion_6c_boundary_accuracy(synthetic_runs):
    with criterion("6c", "boundary-subset OA >= 0.75"):
        runs, _ = synthetic_runs
        _, _, result = runs[("transmix", 0)]
        assert result.boundary_metrics is not None and result.boundary_count > 0
        assert result.boundary_metrics.oa >= 0.75, f"boundary OA {result.boundary_metrics.oa:.4f}"


def test_criterion_6d_attention_weighting_holds_up_on_boundaries(synthetic_runs):
    with criterion("6d", "attention-weighted >= area-weighted boundary OA - 0.02"):
        runs, _ = synthetic_runs
        trans = np.mean([runs[("transmix", s)][2].boundary_metrics.oa for s in ACCEPT_SEEDS])
        cut = np.mean([runs[("cutmix", s)][2].boundary_metrics.oa for s in ACCEPT_SEEDS])
        assert trans >= cut - 0.02, f"transmix {trans:.4f} vs cutmix {cut:.4f}"


def test_criterion_6_runtime_budget(synthetic_runs):
    with criterion("6", "end-to-end runtime budget"):
        _, elapsed = synthetic_runs
        assert elapsed < 600.0, f"took {elapsed:.0f}s"


# ---------------------------------------------------------------------------
# criterion 7: determinism


def test_criterion_7_bitwise_determinism(tmp_path):
    with criterion(7, "bitwise determinism and resume"):
        cube, labels = synth_dataset(4, 16, (2, 2), 0.05, seed=0, width=24, height=24)
        samples = extract_all_patches(cube, labels, 3)
        spec = SplitSpec(shots_per_class=5, augment_to=30, seed=0)
        labeled, test = split_few_shot(samples, spec)
        reference = augment_target(labeled, spec, seed=0)
        episode_cfg = EpisodeConfig(n_way=4, k_shot=5, m_query=8, seed=0)

        def train(total, state=None):
            cfg = TrainConfig(lr=ACCEPT_LR, total_iterations=total, source_iterations=0,
                              mode="apnt*", mix_mode="transmix", seed=0)
            return run_schedule(None, reference, ACCEPT_MODEL, cfg, episode_cfg, state=state)[0]

        # identical seeds give bit-identical checkpoints and metrics
        state_a = train(40)
        state_b = train(40)
        named_a, named_b = state_to_named(state_a), state_to_named(state_b)
        assert set(named_a) == set(named_b)
        for name in named_a:
            assert np.array_equal(named_a[name], named_b[name]), name
        path_a, path_b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_train_state(path_a, state_a)
        save_train_state(path_b, state_b)
        assert path_a.read_bytes() == path_b.read_bytes()
        result_a = evaluate(state_a.params, test, reference, k=5)
        result_b = evaluate(state_b.params, test, reference, k=5)
        assert result_a.metrics == result_b.metrics
        assert np.array_equal(result_a.predictions, result_b.predictions)

        # resume from a mid-run checkpoint equals the uninterrupted run bitwise
        half = train(20)
        mid_path = tmp_path / "mid.ckpt"
        save_train_state(mid_path, half)
        resumed = train(40, state=load_train_state(mid_path))
        named_resumed = state_to_named(resumed)
        for name in named_a:
            assert np.array_equal(named_a[name], named_resumed[name]), name


# ---------------------------------------------------------------------------
# criterion 8: optional real-data check (not run in CI)

IP_DATA = os.environ.get("PROTOMIX_IP_HSIC")
SOURCE_DATA = os.environ.get("PROTOMIX_SOURCE_HSIC")


@pytest.mark.skipif(
    not (IP_DATA and SOURCE_DATA),
    reason="optional: set PROTOMIX_IP_HSIC and PROTOMIX_SOURCE_HSIC to converted "
    "container files to run the best-effort real-data reproduction",
)
def test_criterion_8_real_data_reproduction(tmp_path):
    with criterion(8, "real-data reproduction (best effort)"):
        from protomix.container import load_cube

        cube, labels = load_cube(IP_DATA)
        samples = extract_all_patches(cube, labels, 9)
        source_cube, source_labels = load_cube(SOURCE_DATA)
        source_samples = extract_all_patches(source_cube, source_labels, 9)
        model_cfg = TransformerConfig()  # published architecture defaults
        summaries = {}
        for mix in ("transmix", "cutmix"):
            oas, boundary = [], []
            for seed in range(10):
                spec = SplitSpec(shots_per_class=5, augment_to=200, seed=seed)
                labeled, test = split_few_shot(samples, spec)
                reference = augment_target(labeled, spec, seed=seed)
                train_cfg = TrainConfig(mode="apnt", mix_mode=mix, seed=seed)
                episode_cfg = EpisodeConfig(n_way=len({s.label for s in samples}),
                                            k_shot=5, m_query=15, seed=seed)
                state, _ = run_schedule(source_samples, reference, model_cfg,
                                        train_cfg, episode_cfg)
                result = evaluate(state.params, test, reference, k=5)
                oas.append(result.metrics.oa)
                boundary.append(result.boundary_metrics.oa)
            summaries[mix] = (np.mean(oas), np.mean(boundary))
        mean_oa, _ = summaries["transmix"]
        assert abs(mean_oa * 100 - 76.06) <= 5.0, f"mean OA {mean_oa:.4f}"
        assert summaries["transmix"][1] > summaries["cutmix"][1]
