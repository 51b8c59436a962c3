"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s``. The benchmark-scale
criteria share trained runs through a module-level cache, so the whole module
stays inside its runtime budgets (the full-benchmark criterion is also timed
individually).
"""

import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
import torch

from cleants.cli import main as cli_main
from cleants.config import RunConfig
from cleants.detection import DEFAULT_Z_GRID, dynamic_threshold
from cleants.embedding import MomentumBank
from cleants.metrics import detection_quality
from cleants.model import ForecastNetwork, NetworkConfig, SpatialAttention, TemporalAttention, joint_loss
from cleants.synthetic import generate_synthetic
from cleants.training import evaluate, run_training
from cleants.windows import make_windows

TESTS_DIR = Path(__file__).parent

BENCHMARK = dict(
    syn_n_series=20,
    syn_n_timestamps=400,
    syn_anomalies="spike:8:28,dip:8:28",  # 1% of the training range, all >= 5 sigma
    window=16,
    n_selected=8,
    n_epochs=15,
    ead_period=5,
    fill_strategy="periodic_mean",
    period=7,
    syn_period=7,
)
PERIODIC_PANEL = dict(syn_seasonal_scale=3.0, syn_noise_scale=0.2)


def report(criterion: int, passed: bool, detail: str) -> None:
    print(f"[criterion {criterion:02d}] {'PASS' if passed else 'FAIL'}: {detail}")
    assert passed, f"criterion {criterion}: {detail}"


def benchmark_config(**overrides) -> RunConfig:
    settings = dict(BENCHMARK)
    settings.update(overrides)
    return RunConfig(**settings).validate()


_case_cache: dict = {}


def benchmark_case(seed: int = 0, **overrides):
    """Train one benchmark arm (cached): returns (test_rmse, detection_f1, elapsed_seconds)."""
    key = (seed, tuple(sorted(overrides.items())))
    if key not in _case_cache:
        config = benchmark_config(seed=seed, **overrides)
        panel = generate_synthetic(config.synthetic_spec(), seed)
        start = time.time()
        result = run_training(panel, None, config)
        elapsed = time.time() - start
        _, _, test = make_windows(panel, result.split, config.window)
        metrics = evaluate(result.model, test, result.selection, "test")
        flagged = set().union(*(r.positions for r in result.reports)) if result.reports else set()
        f1 = detection_quality(flagged, panel.anomaly_labels).f1 if flagged else 0.0
        _case_cache[key] = (metrics.rmse, f1, elapsed)
    return _case_cache[key]


# -- criterion 1: unit correctness ---------------------------------------------------

def test_criterion_01_unit_examples_under_one_minute():
    unit_files = sorted(
        str(p) for p in TESTS_DIR.glob("test_*.py") if p.name != "test_acceptance.py"
    )
    start = time.time()
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", "-q", "-m", "not slow", "-p", "no:cacheprovider", *unit_files],
        capture_output=True,
        text=True,
        cwd=TESTS_DIR.parent,
    )
    elapsed = time.time() - start
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr
    report(1, proc.returncode == 0 and elapsed < 60.0, f"{tail} in {elapsed:.1f}s (< 60s)")


# -- criterion 2: gradient suite ------------------------------------------------------

def test_criterion_02_finite_difference_gradients():
    start = time.time()
    previous = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    try:
        torch.manual_seed(0)
        graph = np.zeros((5, 5))
        graph[0, 1] = graph[1, 0] = 1.0
        graph[2, 3] = graph[3, 2] = 1.0
        # M=3, P=4, d = d_time + d_spat = 4
        config = NetworkConfig(window_len=4, n_selected=3, n_series=5,
                               d_time=2, d_spat=2, d_attn=4, encoder_hidden=6, hidden=8)
        net = ForecastNetwork(config, graph=graph)
        block = torch.randn(2, 3, 4)
        sel = torch.tensor([[0, 1, 2], [3, 4, 0]])
        labels = torch.randn(2)

        def loss_value():
            out = net(block, sel)
            return joint_loss(out, labels, block[:, 0, :], beta=0.6)[0]

        loss_value().backward()

        groups: dict[str, list] = {}
        for name, param in net.named_parameters():
            groups.setdefault(name.split(".")[0], []).append(param)

        h = 1e-6
        worst = {}
        for prefix, params in groups.items():
            fd_parts, an_parts = [], []
            for param in params:
                analytic = param.grad.detach().reshape(-1).clone()
                flat = param.data.reshape(-1)
                fd = torch.zeros_like(analytic)
                for k in range(flat.numel()):
                    orig = flat[k].item()
                    flat[k] = orig + h
                    up = loss_value().item()
                    flat[k] = orig - h
                    down = loss_value().item()
                    flat[k] = orig
                    fd[k] = (up - down) / (2 * h)
                fd_parts.append(fd)
                an_parts.append(analytic)
            fd_vec, an_vec = torch.cat(fd_parts), torch.cat(an_parts)
            denom = max(torch.linalg.norm(fd_vec).item(), torch.linalg.norm(an_vec).item(), 1e-12)
            worst[prefix] = (torch.linalg.norm(fd_vec - an_vec) / denom).item()
    finally:
        torch.set_default_dtype(previous)

    elapsed = time.time() - start
    worst_group = max(worst, key=worst.get)
    report(
        2,
        max(worst.values()) < 1e-4 and elapsed < 60.0,
        f"max relative error {worst[worst_group]:.2e} ({worst_group}) over "
        f"{len(worst)} parameter groups in {elapsed:.1f}s",
    )


# -- criterion 3: attention normalization ----------------------------------------------

def test_criterion_03_attention_rows_normalized_over_100_draws():
    worst_gap, any_negative = 0.0, False
    for draw in range(100):
        torch.manual_seed(draw)
        temporal = TemporalAttention(n_selected=3, d_attn=8)
        spatial = SpatialAttention(window_len=5, d_embed=4, d_attn=8)
        block = torch.randn(2, 3, 5)
        emb = torch.randn(2, 3, 4)
        _, alpha_t = temporal(block)
        _, alpha_s = spatial(block, emb)
        for alpha, keys in ((alpha_t, 5), (alpha_s, 3)):
            any_negative |= bool((alpha < 0).any())
            gap = (alpha.sum(dim=2) - 1).abs().max().item()
            worst_gap = max(worst_gap, gap)
    report(3, worst_gap <= 1e-6 and not any_negative,
           f"100 draws, max |row sum - 1| = {worst_gap:.2e}, nonnegative weights")


# -- criterion 4: momentum contraction ---------------------------------------------------

def test_criterion_04_momentum_contraction_factor():
    torch.manual_seed(0)
    bank = MomentumBank(1, 6, gamma=0.9).double()
    v = torch.randn(1, 6, dtype=torch.float64)
    gap = torch.linalg.norm(bank.state[0] - v[0]).item()
    worst = 0.0
    for _ in range(50):
        bank.update(torch.tensor([0]), v)
        new_gap = torch.linalg.norm(bank.state[0] - v[0]).item()
        worst = max(worst, abs(new_gap / gap - 0.9))
        gap = new_gap
    report(4, worst <= 1e-9, f"50 updates, max |shrink factor - 0.9| = {worst:.2e}")


# -- criterion 5: threshold oracle ----------------------------------------------------

def brute_force_tau(scores: np.ndarray) -> float:
    """Independent re-evaluation of the threshold criterion over the z grid."""
    mu, sigma = scores.mean(), scores.std()
    if sigma == 0:
        return np.inf
    best_crit, best_tau = None, np.inf
    for z in DEFAULT_Z_GRID:
        tau = mu + z * sigma
        above = scores > tau
        n_above = int(above.sum())
        if n_above in (0, scores.size):
            continue
        below = scores[~above]
        runs, prev = 0, False
        for flag in above:
            if flag and not prev:
                runs += 1
            prev = bool(flag)
        crit = ((mu - below.mean()) / mu + (sigma - below.std()) / sigma) / (n_above + runs**2)
        if best_crit is None or crit >= best_crit:
            best_crit, best_tau = crit, tau
    return best_tau


def test_criterion_05_dynamic_threshold_flags_exact_outliers():
    rng = np.random.default_rng(0)
    scores = rng.standard_normal(1000)
    injected = rng.choice(1000, size=5, replace=False)
    scores[injected] = 15.0
    tau = dynamic_threshold(scores)
    oracle_tau = brute_force_tau(scores)
    flagged = set(np.flatnonzero(scores > tau).tolist())
    ok = tau == pytest.approx(oracle_tau, rel=1e-12) and flagged == set(injected.tolist())
    report(5, ok, f"tau={tau:.3f} matches brute force; flagged exactly the 5 injected outliers")


# -- criterion 6: detection quality on the benchmark ------------------------------------

@pytest.mark.slow
def test_criterion_06_benchmark_detection_f1():
    rmse, f1, elapsed = benchmark_case(seed=0)
    report(6, f1 >= 0.7 and elapsed < 600.0,
           f"detection F1 = {f1:.3f} (>= 0.7), training took {elapsed:.0f}s (< 600s)")


# -- criterion 7: cleaning improves test RMSE ---------------------------------------------

@pytest.mark.slow
def test_criterion_07_cleaning_beats_plain_training_majority():
    wins, detail = 0, []
    for seed in (0, 1, 2):
        rmse_ead, _, _ = benchmark_case(seed=seed)
        rmse_plain, _, _ = benchmark_case(seed=seed, ead_enabled=False)
        wins += rmse_ead < rmse_plain
        detail.append(f"seed {seed}: {rmse_ead:.4f} vs {rmse_plain:.4f}")
    report(7, wins >= 2, f"cleaning lowers test RMSE on {wins}/3 seeds ({'; '.join(detail)})")


# -- criterion 8: combined score at least matches either residual alone --------------------

@pytest.mark.slow
def test_criterion_08_combined_score_weighting():
    _, f1_mid, _ = benchmark_case(seed=0)
    _, f1_rec, _ = benchmark_case(seed=0, delta=0.0)
    _, f1_pred, _ = benchmark_case(seed=0, delta=1.0)
    ok = f1_mid >= max(f1_rec, f1_pred) - 0.05
    report(8, ok, f"F1(delta=0.5) = {f1_mid:.3f} vs F1(0) = {f1_rec:.3f}, F1(1) = {f1_pred:.3f}")


# -- criterion 9: periodic fills beat removal on cyclic data ---------------------------------

@pytest.mark.slow
def test_criterion_09_periodic_fill_beats_removal_on_cyclic_panel():
    rmse_periodic, _, _ = benchmark_case(seed=0, **PERIODIC_PANEL)
    rmse_remove, _, _ = benchmark_case(seed=0, fill_strategy="remove", **PERIODIC_PANEL)
    report(9, rmse_periodic <= rmse_remove,
           f"periodic_mean RMSE {rmse_periodic:.4f} <= remove RMSE {rmse_remove:.4f}")


# -- criterion 10: ablation harness -----------------------------------------------------

@pytest.mark.slow
def test_criterion_10_ablation_harness(tmp_path):
    gen_dir = tmp_path / "data"
    run_dir = tmp_path / "ablate"
    small = [
        "syn_n_series=12",
        "syn_n_timestamps=240",
        "syn_anomalies=spike:8:10,dip:8:10",
        "window=8",
        "n_selected=4",
        "n_epochs=4",
        "ead_period=2",
        "d_time=8",
        "d_spat=4",
        "d_attn=8",
        "encoder_hidden=16",
        "hidden=16",
        "fill_strategy=periodic_mean",
    ]
    gen_args = [f"--set={s}" for s in (*small, f"out_dir={gen_dir}", "seed=0")]
    assert cli_main(["generate", *gen_args]) == 0
    run_args = [
        f"--set={s}"
        for s in (
            *small,
            f"out_dir={run_dir}",
            f"panel_path={gen_dir / 'panel.csv'}",
            f"graph_path={gen_dir / 'graph.csv'}",
            f"labels_path={gen_dir / 'labels.csv'}",
        )
    ]
    assert cli_main(["ablate", "--arms", "components,delta", *run_args]) == 0

    frame = pd.read_csv(run_dir / "ablation.csv")
    components = frame[frame["group"] == "components"]
    deltas = frame[frame["group"] == "delta"]
    full_rmse = frame.loc[frame["arm"] == "full", "rmse"].iloc[0]
    gaps = (components["rmse"] - full_rmse).abs()
    ok = (
        len(components) == 5
        and len(deltas) == 5
        and sorted(deltas["arm"]) == [f"delta_{v}" for v in (0.0, 0.2, 0.5, 0.8, 1.0)]
        and (gaps > 1e-6).all()
    )
    report(10, ok,
           f"5 component arms (min |rmse gap| {gaps.min():.2e} > 1e-6) and 5 delta arms emitted")
