import itertools

import numpy as np
import pytest

from scalpkit import planner
from scalpkit.planner import EmptyCell, TranslationJob


def single_disease_index(counts, disease="dandruff"):
    """Index whose dandruff column realizes `counts`; other labels 0."""
    index = {}
    i = 0
    for severity, n in enumerate(counts):
        for _ in range(n):
            index[f"img{i:03d}"] = {"dandruff": 0, "sebum": 0, "erythema": 0}
            index[f"img{i:03d}"][disease] = severity
            i += 1
    return index


# --- sampling ratios -----------------------------------------------------------

def test_ratios_uniform_counts():
    assert planner.sampling_ratios([10, 10, 10, 10]) == pytest.approx([0.25] * 4, abs=1e-12)


def test_ratios_hand_example():
    got = planner.sampling_ratios([4, 2, 2, 1])
    # exact rational evaluation of the inverse-frequency formula, eps included
    from fractions import Fraction

    eps = Fraction(1, 10**9)
    inv = [1 / (c + eps) for c in (4, 2, 2, 1)]
    exact = [v / sum(inv) for v in inv]
    assert max(abs(g - float(e)) for g, e in zip(got, exact)) <= 1e-15
    # the idealized values differ only at the eps-perturbation scale
    want = np.array([1 / 9, 2 / 9, 2 / 9, 4 / 9])
    assert np.abs(got - want).max() <= 1e-9


def test_ratios_zero_count_dominates():
    got = planner.sampling_ratios([1, 0, 1, 1])
    assert got[1] == pytest.approx(1.0, abs=1e-8)
    assert got[[0, 2, 3]].max() < 1e-8


def test_ratios_sum_and_order():
    rng = np.random.default_rng(1)
    for _ in range(50):
        counts = rng.integers(0, 40, 4)
        ratios = planner.sampling_ratios(counts)
        assert abs(ratios.sum() - 1.0) <= 1e-12
        for a, b in itertools.combinations(range(4), 2):
            if counts[a] < counts[b]:
                assert ratios[a] > ratios[b]


def test_ratios_scale_invariant():
    rng = np.random.default_rng(2)
    for _ in range(20):
        counts = rng.integers(0, 25, 4)
        for k in (2, 7):
            assert np.abs(
                planner.sampling_ratios(counts) - planner.sampling_ratios(k * counts)
            ).max() <= 1e-9


def test_ratios_permutation_equivariant():
    counts = np.array([4, 2, 9, 1])
    base = planner.sampling_ratios(counts)
    perm = np.array([2, 0, 3, 1])
    assert np.allclose(planner.sampling_ratios(counts[perm]), base[perm])


def test_ratios_reject_bad_counts():
    with pytest.raises(ValueError):
        planner.sampling_ratios([1, 2, 3])
    with pytest.raises(ValueError):
        planner.sampling_ratios([1, -1, 3, 4])


# --- plan_jobs -------------------------------------------------------------------

def test_plan_zero_jobs():
    index = single_disease_index([1, 1, 1, 1])
    jobs, skips = planner.plan_jobs(index, 0, seed=1)
    assert jobs == [] and skips == []


def test_plan_all_severe_higher_only_skips_everything():
    index = single_disease_index([0, 0, 0, 4])
    jobs, skips = planner.plan_jobs(index, 5, seed=1, diseases=("dandruff",), higher_only=True)
    assert jobs == []
    assert len(skips) == 5
    assert all("higher" in s.reason for s in skips)


def test_plan_empty_cell_raises():
    index = single_disease_index([1, 0, 1, 1])
    with pytest.raises(EmptyCell):
        planner.plan_jobs(index, 3, seed=1, diseases=("dandruff",), higher_only=False)


def test_plan_jobs_contract():
    index = single_disease_index([4, 2, 2, 1])
    jobs, skips = planner.plan_jobs(index, 200, seed=3, diseases=("dandruff",), higher_only=False)
    assert len(jobs) == 200 and not skips
    for job in jobs:
        assert job.source_id != job.target_id
        assert index[job.target_id][job.disease] == job.target_severity


def test_plan_higher_only_targets_are_higher():
    index = single_disease_index([4, 2, 2, 1])
    jobs, _ = planner.plan_jobs(index, 100, seed=4, diseases=("dandruff",), higher_only=True)
    for job in jobs:
        assert job.target_severity > index[job.source_id][job.disease]


def test_plan_deterministic():
    index = single_disease_index([3, 2, 2, 2])
    a = planner.plan_jobs(index, 50, seed=9)
    b = planner.plan_jobs(index, 50, seed=9)
    assert a == b


def test_plan_honors_explicit_ratios():
    index = single_disease_index([3, 3, 3, 3])
    point_mass = {"dandruff": np.array([0.0, 0.0, 0.0, 1.0])}
    jobs, _ = planner.plan_jobs(
        index, 25, seed=6, ratios=point_mass, diseases=("dandruff",), higher_only=False
    )
    assert jobs and all(j.target_severity == 3 for j in jobs)
    with pytest.raises(ValueError):
        planner.plan_jobs(index, 1, seed=6, ratios={}, diseases=("dandruff",))


def test_plan_mask_paths():
    index = single_disease_index([2, 2, 2, 2])
    jobs, _ = planner.plan_jobs(index, 5, seed=2, mask_dir="masks")
    for job in jobs:
        assert job.mask_path == f"masks/{job.source_id}.png"


def test_translation_job_validation():
    with pytest.raises(ValueError):
        TranslationJob("a", "a", "dandruff", 2)
    with pytest.raises(ValueError):
        TranslationJob("a", "b", "psoriasis", 2)
    with pytest.raises(ValueError):
        TranslationJob("a", "b", "sebum", 4)


# --- post-plan distribution ---------------------------------------------------------

def test_post_plan_empty_plan_is_original():
    index = single_disease_index([2, 1, 1, 0])
    post = planner.post_plan_distribution(index, [])
    assert (post["dandruff"] == [2, 1, 1, 0]).all()


def test_post_plan_single_job_increment():
    index = single_disease_index([2, 1, 1, 1])
    source = next(i for i in index if index[i]["dandruff"] == 0)
    target = next(i for i in index if index[i]["dandruff"] == 3)
    post = planner.post_plan_distribution(index, [TranslationJob(source, target, "dandruff", 3)])
    assert (post["dandruff"] == [2, 1, 1, 2]).all()
    # non-translated conditions keep the source's labels (all 0 here)
    assert (post["sebum"] == [6, 0, 0, 0]).all()


def test_post_plan_rebalances_imbalance():
    # the post ratio tends back to the pre ratio as jobs grow without bound,
    # so test at a job count where the expected margin dwarfs sampling noise
    index = single_disease_index([40, 20, 10, 2])
    jobs, _ = planner.plan_jobs(index, 3000, seed=5, diseases=("dandruff",), higher_only=False)
    pre = planner.severity_counts(index, "dandruff")
    post = planner.post_plan_distribution(index, jobs)["dandruff"]
    assert post.max() / post.min() < pre.max() / pre.min()


# --- index and plan I/O ----------------------------------------------------------------

def test_index_roundtrip(tmp_path):
    path = tmp_path / "idx.csv"
    path.write_text("id,dandruff,sebum,erythema\na,0,1,2\nb,3,2,1\n")
    index = planner.read_index(path)
    assert index == {
        "a": {"dandruff": 0, "sebum": 1, "erythema": 2},
        "b": {"dandruff": 3, "sebum": 2, "erythema": 1},
    }


def test_index_validation(tmp_path):
    bad_cols = tmp_path / "bad.csv"
    bad_cols.write_text("id,dandruff\na,0\n")
    with pytest.raises(ValueError):
        planner.read_index(bad_cols)
    bad_sev = tmp_path / "sev.csv"
    bad_sev.write_text("id,dandruff,sebum,erythema\na,0,5,0\n")
    with pytest.raises(ValueError):
        planner.read_index(bad_sev)


def test_plan_jsonl_roundtrip(tmp_path):
    jobs = [
        TranslationJob("a", "b", "sebum", 3, "masks/a.png"),
        TranslationJob("c", "d", "erythema", 1, None),
    ]
    path = tmp_path / "plan.jsonl"
    planner.write_plan(path, jobs)
    assert planner.read_plan(path) == jobs
    assert len(path.read_text().splitlines()) == 2
