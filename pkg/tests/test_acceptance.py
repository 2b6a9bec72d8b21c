"""End-to-end acceptance suite. Each test reports one PASS/FAIL line through
the ``acceptance`` fixture and then asserts the same condition."""

import numpy as np
import pytest

from conftest import brute_hausdorff, brute_signed_distance
from rwloss import loss as L
from rwloss.analysis import gradcheck_loss, gradient_extremum, simplex_sweep, verify_prop
from rwloss.core import LabelGrid
from rwloss.edt import class_edt
from rwloss.metrics import dice, exact_sign_flip_pvalue, hausdorff, permutation_test
from rwloss.trainer import RunConfig, cdf_dominates, end_to_end_gradcheck, generate_task, run_many
from rwloss.trainer.harness import convergence_cdf

SEEDS = range(20)


def test_worked_examples(acceptance):
    p = np.array([[0.1, 0.1, 0.2, 0.6]])
    z1 = np.array([[0.0, 0.0, 0.0, -0.6]])
    z2 = np.array([[2.0, 2.0, 2.0, -0.6]])
    l1, l2 = L.rw_loss(p, z1, "none").value, L.rw_loss(p, z2, "none").value
    g1, g2 = L.rw_loss_grad(p, z1, "none"), L.rw_loss_grad(p, z2, "none")
    err = max(abs(l1 + 0.36), abs(l2 - 0.44),
              np.abs(g1 - [0.036, 0.036, 0.072, -0.144]).max(),
              np.abs(g2 - [0.156, 0.156, 0.312, -0.624]).max())
    printed = (np.round(g1, 2).tolist() == [[0.04, 0.04, 0.07, -0.14]]
               and np.round(g2, 2).tolist() == [[0.16, 0.16, 0.31, -0.62]])
    ok = err <= 1e-12 and printed
    assert acceptance(1, ok, f"loss/gradient worked examples, max abs error {err:.1e}")


def test_saddle_point(acceptance):
    value, where = gradient_extremum([0.0, 1.0, 1.0], 0, 1000)
    ok = abs(value + 0.25) <= 1e-6 and abs(where[0] - 0.5) <= 1e-3
    assert acceptance(2, ok, f"min dL/dphi_1 = {value:.8f} at y1 = {where[0]:.4f}")


def test_sign_fractions(acceptance):
    frac = simplex_sweep([12.0, 4.0, -3.0], 1000).two_negative_fraction
    rectified = simplex_sweep([10.0, 10.0, -3.0], 1000).n_two_negative
    ok = abs(frac - 8 / 15) <= 0.01 and frac > 0.5 and rectified == 0
    assert acceptance(3, ok, f"two-negative fraction {frac:.4f} (8/15 = {8 / 15:.4f}); "
                             f"rectified vector violations {rectified}")


def test_gradient_correctness(acceptance):
    worst = {kind: gradcheck_loss(kind, seed=11, instances=100) for kind in ("rw", "rw2", "pwce", "dice", "focal")}
    e2e = max(end_to_end_gradcheck(kind, seed=s) for kind in ("rrw", "dice+rw") for s in (0, 1))
    ok = max(worst.values()) < 1e-6 and e2e < 1e-4
    detail = " ".join(f"{k}={v:.1e}" for k, v in worst.items())
    assert acceptance(4, ok, f"max rel err over 100 instances: {detail}; end-to-end {e2e:.1e}")


def test_proposition_oracles(acceptance):
    results = [verify_prop(p, 1000, seed=0) for p in (1, 2, 3, 4, 5)]
    ok = all(r.passed and r.instances == 1000 for r in results)
    detail = " ".join(f"P{r.prop}={r.max_ratio:.1e}" for r in results)
    assert acceptance(5, ok, f"max discrepancy per pixel over 1000 instances: {detail}")


def test_edt_exactness(acceptance):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for i in range(200):
        if i % 2:
            shape = tuple(rng.integers(2, 17, size=3))
        else:
            shape = tuple(rng.integers(2, 65, size=2))
        spacing = tuple(rng.uniform(0.2, 4.0, len(shape)))
        k = int(rng.integers(2, 5))
        labels = rng.integers(0, k, size=shape)
        labels.flat[:k] = np.arange(k)
        sdf = class_edt(LabelGrid.from_array(labels, k, spacing)).values
        for c in range(k):
            worst = max(worst, np.abs(sdf[:, c] - brute_signed_distance(labels, c, spacing)).max())
    assert acceptance(6, worst <= 1e-9, f"200 grids vs brute force, max error {worst:.1e} mm")


def test_hausdorff_and_dice_oracles(acceptance):
    rng = np.random.default_rng(77)
    worst_ulps = 0.0
    dice_exact = True
    for i in range(100):
        shape = tuple(rng.integers(2, 17, size=3 if i % 2 else 2))
        spacing = tuple(rng.uniform(0.3, 3.0, len(shape)))
        a = rng.random(shape) < rng.uniform(0.05, 0.7)
        b = rng.random(shape) < rng.uniform(0.05, 0.7)
        a.flat[0] = b.flat[-1] = True
        hd, ref = hausdorff(a, b, spacing), brute_hausdorff(a, b, spacing)
        # the separable transform and the all-pairs search round differently
        # when two boundary voxels tie, so equality is judged in ulps
        worst_ulps = max(worst_ulps, abs(hd - ref) / np.spacing(ref))
        inter = sum(1 for x, y in zip(a.ravel(), b.ravel()) if x and y)
        dice_exact &= dice(a, b) == 2 * inter / (int(a.sum()) + int(b.sum()))
    ok = worst_ulps <= 8 and dice_exact
    assert acceptance(7, ok, f"100 mask pairs: HD within {worst_ulps:.0f} ulp of brute force, "
                             f"dice exact = {dice_exact}")


def test_permutation_enumeration(acceptance):
    rng = np.random.default_rng(5)
    ok = True
    for n in range(2, 13):
        for _ in range(3):
            a, b = rng.random(n), rng.random(n)
            exact = exact_sign_flip_pvalue(a, b)
            ok &= permutation_test(a, b) == (1 + exact * 2 ** n) / (1 + 2 ** n)
    same = rng.random(12)
    ok &= permutation_test(same, same) == 1.0
    const = permutation_test(same + 0.3, same)
    ok &= const <= 0.01
    assert acceptance(8, ok, f"n = 2..12 match exhaustive enumeration; identical samples p = 1; "
                             f"constant shift n = 12 p = {const:.5f}")


# ---------------------------------------------------------------------------
# training experiments (about 8 s per run on one core)


@pytest.fixture(scope="module")
def task_data():
    cfg = RunConfig()
    return generate_task(cfg.task, cfg.train_count, cfg.val_count)


def _finals(records):
    return "[" + " ".join(f"{r.final_dice:.2f}" for r in records) + "]"


@pytest.mark.slow
def test_convergence_study(acceptance, task_data, tmp_path_factory):
    rrw = run_many(RunConfig(loss_kind="rrw"), SEEDS, task_data)
    bnd = run_many(RunConfig(loss_kind="rw_boundary"), SEEDS, task_data)
    n_conv = sum(r.converged for r in rrw)
    dominates = cdf_dominates(rrw, bnd)
    violations = sum(sum(r.two_negative_pixels) for r in rrw)
    samples = sum(len(r.two_negative_pixels) for r in rrw)
    out = tmp_path_factory.mktemp("convergence")
    from rwloss.trainer.harness import write_cdf_csv, write_summary_csv
    write_summary_csv(out / "rrw_summary.csv", rrw)
    write_summary_csv(out / "rw_boundary_summary.csv", bnd)
    write_cdf_csv(out / "rrw_cdf.csv", convergence_cdf(rrw))
    write_cdf_csv(out / "rw_boundary_cdf.csv", convergence_cdf(bnd))
    ok = n_conv == len(rrw) and dominates and violations == 0 and samples > 0
    assert acceptance(9, ok, f"RRW converged {n_conv}/{len(rrw)} {_finals(rrw)}; "
                             f"RW-Boundary {sum(r.converged for r in bnd)}/{len(bnd)} {_finals(bnd)}; "
                             f"RRW CDF dominates: {dominates}; two-negative pixels in {samples} samples: {violations}")


@pytest.mark.slow
def test_strategy_harness(acceptance, task_data):
    counts = {}
    trace_ok = True
    finals = {}
    for partner in ("dice", "ce"):
        for mode in ("equal", "gradual"):
            cfg = RunConfig(loss_kind=f"{partner}+rw", sched_mode=mode)
            recs = run_many(cfg, SEEDS, task_data)
            counts[f"{partner}+rw/{mode}"] = sum(r.converged for r in recs)
            finals[f"{partner}+rw/{mode}"] = _finals(recs)
            if mode == "gradual":
                trace_ok &= all(r.weight_trace[0] == (1.0, 0.0) and r.weight_trace[-1] == (0.01, 0.99)
                                for r in recs)
    ok = all(c >= 18 for c in counts.values()) and trace_ok
    detail = "; ".join(f"{k} {v}/20 {finals[k]}" for k, v in counts.items())
    assert acceptance(10, ok, f"{detail}; gradual trace (1,0) -> (0.01,0.99): {trace_ok}")
