"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s`` to see the lines as they
are produced; the terminal summary repeats them in criterion order.
"""

import json
import time
from collections import Counter
from dataclasses import asdict

import numpy as np
import pytest
from scipy.stats import chi2

from fairaug.fairmetrics import auroc, bacc, confusion, eod_gap, group_rates, PredictionSet, tpr
from fairaug.frd import GaussianSummary, frd_matrix, frechet_distance, matrix_sqrt_psd
from fairaug.genbridge import assemble_prompt, render_mock, synthetic_count
from fairaug.manifest import (
    AgeBin,
    BmiBin,
    DatasetManifest,
    SubgroupKey,
    SyntheticRecord,
    all_subgroup_keys,
    apply_split,
    assign_group,
    load_manifest,
    split_dataset,
    write_manifest,
)
from fairaug.phantom import cardiac_mask, fuzz_records, imbalanced_records, write_demo_dataset
from fairaug.preprocess import StackedImage, views_for_record
from fairaug.radiomics import FeatureTable, extract_features
from fairaug.stratify import compute_weights, read_weights, weighted_sample

from helpers import rec
from pipeline import run, run_all_commands, small_volume_dataset, tree_hashes

pytestmark = pytest.mark.filterwarnings("ignore::fairaug.errors.DiagnosticWarning")


def records_in(key: SubgroupKey, n: int, prefix: str):
    age = {"under60": 50, "60to70": 65, "over70": 80}[key.age_bin.value]
    bmi = {"under25": 22.0, "25to30": 27.0, "over30": 33.0}[key.bmi_bin.value]
    return [rec(f"{prefix}{i:04d}", sex=key.sex.value, age=age, bmi=bmi, dx=key.diagnosis.value)
            for i in range(n)]


def test_criterion_01_subgroup_machinery(acceptance):
    recs = fuzz_records(10_000, seed=2024)
    t0 = time.perf_counter()
    keys = [assign_group(r) for r in recs]
    counts = Counter(keys)
    consistent = all(
        (k.age_bin is AgeBin.UNDER_60) == (r.age < 60)
        and (k.age_bin is AgeBin.OVER_70) == (r.age >= 70)
        and (k.bmi_bin is BmiBin.UNDER_25) == (r.bmi < 25)
        and (k.bmi_bin is BmiBin.OVER_30) == (r.bmi >= 30)
        and k.sex is r.sex and k.diagnosis is r.diagnosis
        for r, k in zip(recs, keys)
    )
    elapsed = time.perf_counter() - t0
    ok = (set(counts) == set(all_subgroup_keys()) and len(all_subgroup_keys()) == 36
          and sum(counts.values()) == len(recs) and consistent and elapsed < 1.0)
    acceptance(1, "subgroup machinery", ok,
               f"{len(counts)} keys observed, {sum(counts.values())} records, {elapsed:.3f}s")
    assert ok


def test_criterion_02_ssw_sampling(acceptance):
    sizes = (900, 300, 100, 50, 20, 10)
    keys = all_subgroup_keys()[:len(sizes)]
    t0 = time.perf_counter()
    recs = [r for k, n in zip(keys, sizes) for r in records_in(k, n, f"{k}_")]
    weights = compute_weights(DatasetManifest(tuple(recs)), "SSW").weights
    group_of = {r.subject_id: assign_group(r) for r in recs}
    mass = Counter()
    for sid, w in weights.items():
        mass[group_of[sid]] += w
    exact = max(abs(mass[k] - 1 / len(sizes)) for k in keys)
    n_draws = 100_000
    drawn = Counter(group_of[s] for s in weighted_sample(weights, n_draws, seed=7))
    freq = {k: drawn[k] / n_draws for k in keys}
    worst = max(abs(f - 1 / len(sizes)) for f in freq.values())
    expected = n_draws / len(sizes)
    stat = sum((drawn[k] - expected) ** 2 / expected for k in keys)
    crit = chi2.ppf(0.99, df=len(sizes) - 1)
    elapsed = time.perf_counter() - t0
    ok = exact < 1e-12 and worst <= 0.01 and stat < crit and elapsed < 5.0
    acceptance(2, "SSW sampling", ok,
               f"max |freq - 1/6| = {worst:.4f}, chi2 = {stat:.2f} < {crit:.2f}, {elapsed:.2f}s")
    assert ok


def test_criterion_03_nine_fold_expansion(acceptance):
    m = DatasetManifest(tuple(fuzz_records(1000, seed=3)))
    m = apply_split(m, split_dataset(m, seed=3))
    n_views = Counter()
    bad = []
    for r in m:
        vol = np.zeros((r.n_slices, r.n_frames, 8, 8), dtype=np.uint16)
        views = views_for_record(r, vol)
        n_views[r.split.value] += len(views)
        if len(views) != (9 if r.split.value == "train" else 1):
            bad.append(r.subject_id)
    n_split = Counter(r.split.value for r in m)
    ok = (not bad and n_views["train"] == 9 * n_split["train"]
          and n_views["val"] == n_split["val"] and n_views["test"] == n_split["test"])
    acceptance(3, "nine-fold expansion", ok,
               f"train {n_split['train']} -> {n_views['train']} views, val {n_views['val']}, test {n_views['test']}")
    assert ok


def random_spd(rng, d=26):
    A = rng.normal(size=(d, d))
    return A @ A.T / d + 0.1 * np.eye(d)


def test_criterion_04_frechet_core(acceptance):
    rng = np.random.default_rng(4)
    t0 = time.perf_counter()
    self_err = sym_err = diag_err = 0.0
    for _ in range(100):
        a = GaussianSummary(rng.normal(size=26), random_spd(rng), 100)
        b = GaussianSummary(rng.normal(size=26), random_spd(rng), 100)
        self_err = max(self_err, frechet_distance(a, a))
        sym_err = max(sym_err, abs(frechet_distance(a, b) - frechet_distance(b, a)))
    for _ in range(100):
        va, vb = rng.uniform(0.1, 5, 26), rng.uniform(0.1, 5, 26)
        ma, mb = rng.normal(size=26), rng.normal(size=26)
        want = float(np.sum((ma - mb) ** 2) + np.sum((np.sqrt(va) - np.sqrt(vb)) ** 2))
        got = frechet_distance(GaussianSummary(ma, np.diag(va), 10), GaussianSummary(mb, np.diag(vb), 10))
        diag_err = max(diag_err, abs(got - want))
    sqrt_ok = True
    for _ in range(20):
        S = random_spd(rng)
        R = matrix_sqrt_psd(S)
        sqrt_ok &= np.linalg.norm(R @ R - S) <= 1e-8 * (1 + np.linalg.norm(S))
    elapsed = time.perf_counter() - t0
    ok = self_err <= 1e-9 and sym_err <= 1e-9 and diag_err <= 1e-8 and sqrt_ok and elapsed < 10.0
    acceptance(4, "Frechet numeric core", ok,
               f"self {self_err:.1e}, symmetry {sym_err:.1e}, diagonal {diag_err:.1e}, {elapsed:.2f}s")
    assert ok


def brute_auroc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def test_criterion_05_metric_oracles(acceptance):
    rng = np.random.default_rng(5)
    mismatches = 0
    for _ in range(500):
        n = int(rng.integers(2, 60))
        y = rng.integers(0, 2, size=n)
        y[:2] = (0, 1)
        s = np.round(rng.random(n), int(rng.integers(1, 4)))
        mismatches += auroc(s, y) != brute_auroc(s, y)
    # hand-counted fixture: 6 of 10 positives and 8 of 10 negatives correct
    s = np.r_[[0.9] * 6, [0.1] * 4, [0.1] * 8, [0.7] * 2]
    y = np.r_[np.ones(10, int), np.zeros(10, int)]
    c = confusion(s, y)
    fixture_ok = (c.tp, c.fn, c.tn, c.fp) == (6, 4, 8, 2) and bacc(s, y) == 0.7 and tpr(s, y) == 0.6
    # TPRs 0.9 and 0.6 by sex
    recs, ids, scores, labels = [], [], [], []
    for sex, hits in (("F", 9), ("M", 6)):
        for i in range(10):
            sid = f"{sex}{i}"
            recs.append(rec(sid, sex=sex))
            ids.append(sid)
            scores.append(0.9 if i < hits else 0.1)
            labels.append(1)
    p = PredictionSet(tuple(ids), np.array(scores), np.array(labels)).join(DatasetManifest(tuple(recs)))
    rates = group_rates(p, "sex")
    eod = eod_gap(rates)
    ok = mismatches == 0 and fixture_ok and rates.tprs() == {"F": 0.9, "M": 0.6} and eod == 0.30
    acceptance(5, "metric oracles", ok, f"{mismatches}/500 AUROC mismatches, BACC fixture {fixture_ok}, EOD {eod!r}")
    assert ok


def mock_group(rep: int, category: int, n: int = 200) -> FeatureTable:
    rng = np.random.default_rng([rep, category])
    rows, names = [], None
    for i in range(n):
        mask = cardiac_mask(rng, 48)
        img = render_mock(mask, category, int(rng.integers(2**31))).astype(float)
        v = extract_features(StackedImage(np.stack([img] * 3)), mask)
        rows.append(v.values)
        names = v.names
    return FeatureTable(tuple(f"c{category}_{i:03d}" for i in range(n)), names, np.array(rows))


def test_criterion_06_frd_trend(acceptance):
    t0 = time.perf_counter()
    wins = 0
    for rep in range(100):
        tables = {"normal": mock_group(rep, 1), "obese": mock_group(rep, 3)}
        M = frd_matrix(tables, seed=rep)
        cross = M.get("normal", "obese")
        wins += M.get("normal", "normal") < cross and M.get("obese", "obese") < cross
    elapsed = time.perf_counter() - t0
    ok = wins >= 95 and elapsed < 120.0
    acceptance(6, "FRD trend", ok, f"intra < cross in {wins}/100 repetitions, {elapsed:.1f}s")
    assert ok


def test_criterion_07_loop_closure(acceptance, tmp_path):
    data = tmp_path / "data"
    write_demo_dataset(data, imbalanced_records(500, seed=7), seed=7, volumes=False)
    out = tmp_path / "out"
    m = data / "manifest.csv"
    run("audit", "--manifest", m, "--out", out / "audit.json")
    run("plan", "--manifest", m, "--strategy", "equalize", "--out", out / "plan.json")
    run("gen-jobs", "--plan", out / "plan.json", "--manifest", m, "--out", out / "jobs.jsonl")
    run("mock-gen", "--jobs", out / "jobs.jsonl", "--out", out / "gen")
    run("ingest", "--jobs", out / "jobs.jsonl", "--images", out / "gen", "--manifest", m, "--out", out / "synth.csv")
    run("mix", "--manifest", m, "--synth", out / "synth.csv", "--all", "--out", out / "combined.csv")
    run("weights", "--manifest", out / "combined.csv", "--mode", "SSW", "--out", out / "weights.csv")

    plan = json.loads((out / "plan.json").read_text())
    combined = load_manifest(out / "combined.csv")
    counts = Counter(str(assign_group(r)) for r in combined)
    targets_match = dict(counts) == plan["target_per_group"]
    w = np.array(list(read_weights(out / "weights.csv").weights.values()))
    uniform = bool(np.allclose(w, 1 / len(combined), rtol=0, atol=1e-12))
    ok = targets_match and uniform and len(set(plan["target_per_group"].values())) == 1
    acceptance(7, "end-to-end loop closure", ok,
               f"{plan['n_jobs']} jobs, {len(combined)} combined records in {len(counts)} groups of "
               f"{max(counts.values())}, SSW uniform {uniform}")
    assert ok


def synthetic_pool(n: int):
    out = []
    for r in fuzz_records(n, seed=88):
        d = asdict(r)
        d["subject_id"] = "syn_" + d["subject_id"]
        out.append(SyntheticRecord(**d, source_job_id=d["subject_id"]))
    return out


def test_criterion_08_mixing_arithmetic(acceptance, tmp_path):
    R = 600
    s = synthetic_count(R, 0.33)
    realized = s / (R + s)
    first_ok = s == 296 and abs(realized - 0.33) <= 1 / (R + s)

    write_manifest(DatasetManifest(tuple(fuzz_records(R, seed=8))), tmp_path / "real.csv")
    write_manifest(DatasetManifest(tuple(synthetic_pool(700))), tmp_path / "synth.csv")
    run("mix", "--manifest", tmp_path / "real.csv", "--synth", tmp_path / "synth.csv",
        "--fractions", "0,0.2,0.33,0.5", "--out-dir", tmp_path / "sweep")
    sweep_ok = len(list((tmp_path / "sweep").glob("combined_f*.csv"))) == 4
    details = []
    for f in (0.0, 0.2, 0.33, 0.5):
        mixed = load_manifest(tmp_path / "sweep" / f"combined_f{f:g}.csv")
        n_syn = sum(r.is_synthetic for r in mixed)
        frac = n_syn / len(mixed)
        meta = json.loads((tmp_path / "sweep" / f"combined_f{f:g}.csv.meta.json").read_text())
        sweep_ok &= (n_syn == synthetic_count(R, f) and abs(frac - f) <= 1 / len(mixed)
                     and meta["realized_fraction"] == frac and len(mixed) - n_syn == R)
        details.append(f"{f:g}->{frac:.4f}")
    ok = first_ok and sweep_ok
    acceptance(8, "mixing arithmetic", ok, f"s = {s} (realized {realized:.4f}); sweep " + ", ".join(details))
    assert ok


def test_criterion_09_prompt_fixtures(acceptance):
    a = assemble_prompt(rec(sex="F", age=74, bmi=27.2, dx="HF"))
    b = assemble_prompt(rec(sex="F", age=63, bmi=28.0, dx="healthy"))
    ok = a == "Female, age in 70s, overweight BMI, with heart failure" and b == "Female, age in 60s, overweight BMI"
    acceptance(9, "prompt fixtures", ok, f"{a!r}; {b!r}")
    assert ok


def test_criterion_10_cli_determinism(acceptance, tmp_path):
    small_volume_dataset(tmp_path / "data")
    run_all_commands(tmp_path / "data", tmp_path / "out")
    first = tree_hashes(tmp_path / "out")
    run_all_commands(tmp_path / "data", tmp_path / "out")
    second = tree_hashes(tmp_path / "out")
    differing = sorted(k for k in first.keys() | second.keys() if first.get(k) != second.get(k))
    ok = bool(first) and not differing
    acceptance(10, "CLI determinism", ok,
               f"{len(first)} files hashed across 12 commands, {len(differing)} differ")
    assert ok
