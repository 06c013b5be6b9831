"""Harness tests: revenue estimation, truthfulness audits (including the
negative control that proves the audit can fail), allocation analysis, and
the command line interface."""

import csv

import numpy as np
import pytest

from amanet.ama import AllocationMenu, AmaParameters
from amanet.cli import main as cli_main
from amanet.evaluation import (AmaMechanism, BidDependentReserve, EvalReport,
                               ItemMyersonMechanism, MenuNetMechanism,
                               VcgMechanism, audit, audit_dsic, audit_ir,
                               compare, estimate_revenue, evaluate_mechanism,
                               out_of_setting_eval, randomized_ratio,
                               top_winning_allocations, write_reports_csv)
from amanet.menunet import MenuNet, config_for_setting
from amanet.settings import SettingSpec, load_batch, make_rng, sample
from amanet.training import TrainConfig, fit


def tiny_net_mechanism(spec, seed=0):
    config = config_for_setting(spec, menu_size=4, menu_temperature=5.0, d=16,
                                d_hidden=16, heads=2, interaction_modules=1,
                                conv_hidden=16, init_std=0.3)
    return MenuNetMechanism(MenuNet(config, seed=seed))


def fixed_menu_mechanism(entries, weights=None, boosts=None, name="ama"):
    menu = AllocationMenu(np.asarray(entries, dtype=np.float64))
    n = menu.n_bidders
    return AmaMechanism(AmaParameters(
        menu, np.ones(n) if weights is None else np.asarray(weights),
        np.zeros(menu.size) if boosts is None else np.asarray(boosts)), name)


# -- revenue -------------------------------------------------------------------------


def test_single_sample_revenue_equals_payment_sum():
    spec = SettingSpec("C", 2, 2)
    mech = VcgMechanism()
    mean, stderr = estimate_revenue(mech, spec, samples=1, seed=3)
    vb = sample(spec, 1, make_rng(3))
    out = mech.outcome_batch(vb.V)
    assert mean == out.payments.sum()
    assert stderr == 0.0


def test_revenue_rejects_zero_samples():
    with pytest.raises(ValueError):
        estimate_revenue(VcgMechanism(), SettingSpec("C", 2, 2), samples=0)


def test_revenue_is_seed_reproducible_bitwise():
    spec = SettingSpec("A", 2, 2)
    mech = tiny_net_mechanism(spec)
    first = estimate_revenue(mech, spec, 500, seed=11)
    second = estimate_revenue(mech, spec, 500, seed=11)
    assert first == second
    other = estimate_revenue(mech, spec, 500, seed=12)
    assert first != other


def test_stderr_matches_definition():
    spec = SettingSpec("C", 2, 2)
    mech = VcgMechanism()
    rng = make_rng(4)
    vb = sample(spec, 1000, rng)
    totals = mech.outcome_batch(vb.V).payments.sum(axis=1)
    mean, stderr = estimate_revenue(mech, spec, 1000, seed=4, chunk=1000)
    assert mean == pytest.approx(totals.mean(), abs=1e-12)
    assert stderr == pytest.approx(totals.std(ddof=1) / np.sqrt(1000), abs=1e-12)


# -- audits --------------------------------------------------------------------------


def test_audit_passes_truthful_mechanisms():
    spec = SettingSpec("C", 2, 2)
    for mech in (VcgMechanism(), ItemMyersonMechanism(spec),
                 tiny_net_mechanism(spec)):
        result = audit(mech, spec, instances=150, misreports_per_bidder=30,
                       seed=5)
        assert result.max_gain <= 1e-9, mech.name
        assert result.min_truthful_utility >= -1e-9, mech.name
        assert result.min_payment >= -1e-9, mech.name


def test_audit_contextual_mechanism_per_instance_parameters():
    spec = SettingSpec("A", 2, 2)
    result = audit(tiny_net_mechanism(spec, seed=2), spec, instances=60,
                   misreports_per_bidder=25, seed=6)
    assert result.max_gain <= 1e-9
    assert result.min_truthful_utility >= -1e-9


def test_audit_flags_corrupted_mechanism():
    """Harness sensitivity: the bid-dependent reserve must register regret."""
    spec = SettingSpec("C", 2, 2)
    gain = audit_dsic(BidDependentReserve(2, 2), spec, instances=200,
                      misreports_per_bidder=40, seed=7)
    assert gain > 1e-3


def test_grid_search_oracle_confirms_corruption():
    """Exhaustive 10-point misreport grid on one instance, independent of the
    audit's probe generator."""
    mech = BidDependentReserve(2, 2)
    values = np.array([[0.9, 0.8], [0.1, 0.2]])
    truth = mech.outcome(values)
    best = -np.inf
    for b1 in np.linspace(0, 1, 10):
        for b2 in np.linspace(0, 1, 10):
            bids = values.copy()
            bids[0] = [b1, b2]
            out = mech.outcome(bids)
            gain = (out.allocation[0] * values[0]).sum() - out.payments[0] \
                - truth.utilities[0]
            best = max(best, gain)
    assert best > 1e-3


def test_audit_ir_no_trade_utility_is_zero():
    # Single bidder, boosted empty allocation always wins: utility exactly 0.
    mech = fixed_menu_mechanism([[[1.0, 1.0]], [[0.0, 0.0]]],
                                boosts=[0.0, 50.0])
    spec = SettingSpec("C", 1, 2)
    assert audit_ir(mech, spec, instances=100, seed=8) == 0.0


def test_audit_counts_probe_budget():
    spec = SettingSpec("C", 2, 2)
    result = audit(VcgMechanism(), spec, instances=10, misreports_per_bidder=9,
                   seed=9)
    assert result.probes_per_bidder == 9


# -- allocation analysis ----------------------------------------------------------------


def test_randomized_ratio_deterministic_menu_is_zero():
    from amanet.ama import deterministic_menu
    menu = deterministic_menu(2, 2)
    mech = AmaMechanism(AmaParameters(menu, np.ones(2), np.zeros(menu.size)))
    assert randomized_ratio(mech, SettingSpec("C", 2, 2), 500, seed=10) == 0.0


def test_randomized_ratio_mixed_entry_always_wins():
    mech = fixed_menu_mechanism([[[0.5, 0.5], [0.5, 0.5]]])
    assert randomized_ratio(mech, SettingSpec("C", 2, 2), 200, seed=11) == 1.0


def test_randomized_ratio_matches_manual_count():
    # Entry 0 is deterministic, entry 1 is mixed; a huge boost forces entry 1
    # to win every auction while entry 0 stays the excluded winner sometimes.
    mech = fixed_menu_mechanism(
        [[[1.0, 0.0], [0.0, 1.0]], [[0.5, 0.0], [0.0, 0.5]]],
        boosts=[0.0, 10.0])
    spec = SettingSpec("C", 2, 2)
    ratio = randomized_ratio(mech, spec, 300, seed=12)
    rng = make_rng(12)
    vb = sample(spec, 300, rng)
    out = mech.outcome_batch(vb.V)
    winning = np.concatenate([out.winners[:, None], out.excluded_winners], axis=1)
    manual = (winning == 1).mean()
    assert ratio == pytest.approx(manual, abs=1e-12)


def test_top_allocations_single_entry_rate_one():
    mech = fixed_menu_mechanism([[[1.0, 0.0], [0.0, 1.0]]])
    top = top_winning_allocations(mech, SettingSpec("C", 2, 2), 200, k=1,
                                  seed=13)
    assert top[0]["menu_index"] == 0
    assert top[0]["win_rate"] == 1.0


def test_top_allocations_rates_cover_every_sample():
    mech = tiny_net_mechanism(SettingSpec("C", 2, 2))
    config = config_for_setting(SettingSpec("C", 2, 2), menu_size=4,
                                menu_temperature=5.0, d=16, d_hidden=16,
                                heads=2, interaction_modules=1, conv_hidden=16,
                                init_std=0.3, bidder_ids=2, item_ids=2)
    mech = MenuNetMechanism(MenuNet(config, seed=3))
    top = top_winning_allocations(mech, SettingSpec("C", 2, 2), 300, k=4,
                                  seed=14)
    assert sum(row["win_rate"] for row in top) >= 1.0
    assert all(0.0 <= row["win_rate"] <= 1.0 for row in top)


def test_top_allocations_reject_oversized_k():
    mech = fixed_menu_mechanism([[[1.0, 0.0], [0.0, 1.0]]])
    with pytest.raises(ValueError):
        top_winning_allocations(mech, SettingSpec("C", 2, 2), 100, k=5, seed=15)


def test_analysis_requires_menu_mechanism():
    with pytest.raises(ValueError):
        randomized_ratio(VcgMechanism(), SettingSpec("C", 2, 2), 100)
    with pytest.raises(ValueError):
        top_winning_allocations(VcgMechanism(), SettingSpec("C", 2, 2), 100)


# -- composite reports -------------------------------------------------------------------


def test_compare_orders_baselines_on_uniform_setting():
    spec = SettingSpec("C", 2, 5)
    reports = compare(spec, samples=20000, seed=16)
    by_name = {r.method: r for r in reports}
    vcg, myerson = by_name["vcg"], by_name["item-myerson"]
    slack = 2 * (vcg.stderr + myerson.stderr)
    assert vcg.mean_revenue <= myerson.mean_revenue + slack


def test_evaluate_mechanism_fills_optimal_ratio():
    spec = SettingSpec("E", 1, 2)
    report = evaluate_mechanism(ItemMyersonMechanism(spec), spec, 5000, seed=17)
    assert report.optimal_ratio == pytest.approx(report.mean_revenue / 9.7810)


def test_reports_csv_schema(tmp_path):
    report = EvalReport(setting="C", n=2, m=5, method="vcg", samples=10,
                        seed=1, mean_revenue=1.5, stderr=0.1)
    path = tmp_path / "out.csv"
    write_reports_csv([report], str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == "# amanet-eval-v1"
    rows = list(csv.DictReader(lines[1:]))
    assert rows[0]["method"] == "vcg"
    assert float(rows[0]["mean_revenue"]) == 1.5
    assert rows[0]["regret"] == ""


def test_out_of_setting_eval_runs_other_sizes(tmp_path):
    spec = SettingSpec("B", 3, 2)
    config = TrainConfig(menu_size=4, menu_temperature=3.0, iterations=2,
                         samples_per_iter=64, batch=32, eval_every=1,
                         eval_samples=64, seed=0)
    model_config = config_for_setting(spec, 4, 3.0, d=16, d_hidden=16, heads=2,
                                      interaction_modules=1, conv_hidden=16)
    ckpt = fit(spec, config, model_config)
    reports = out_of_setting_eval(ckpt, sizes=[(2, 2), (5, 2)], samples=500,
                                  seed=18)
    assert [(r.n, r.m) for r in reports] == [(2, 2), (5, 2)]
    assert all(np.isfinite(r.mean_revenue) for r in reports)


# -- CLI ----------------------------------------------------------------------------------


def test_cli_eval_writes_report(tmp_path, capsys):
    out = tmp_path / "vcg.csv"
    code = cli_main(["eval", "--mechanism", "vcg", "--setting", "C", "--n", "2",
                     "--m", "5", "--samples", "2000", "--seed", "7",
                     "--out", str(out)])
    assert code == 0
    text = out.read_text()
    assert text.startswith("# amanet-eval-v1")
    row = list(csv.DictReader(text.splitlines()[1:]))[0]
    assert abs(float(row["mean_revenue"]) - 5.0 / 3.0) < 0.05


def test_cli_eval_rejects_zero_samples(capsys):
    code = cli_main(["eval", "--mechanism", "vcg", "--setting", "C", "--n", "2",
                     "--m", "5", "--samples", "0"])
    assert code == 2


def test_cli_rejects_bad_flags():
    assert cli_main(["eval", "--mechanism", "vcg", "--setting", "Z"]) == 2
    assert cli_main(["frobnicate"]) == 2
    assert cli_main(["eval", "--mechanism", "warp-drive", "--setting", "C",
                     "--n", "2", "--m", "2"]) == 2


def test_cli_audit_reports_zero_regret(tmp_path, capsys):
    code = cli_main(["audit", "--mechanism", "vcg", "--setting", "C", "--n", "2",
                     "--m", "2", "--probes", "50x10", "--seed", "3"])
    assert code == 0
    text = capsys.readouterr().out
    assert "regret" in text


def test_cli_sample_dump_roundtrips(tmp_path):
    out = tmp_path / "batch.bin"
    code = cli_main(["sample-dump", "--setting", "A", "--n", "2", "--m", "2",
                     "--batch", "40", "--seed", "3", "--out", str(out)])
    assert code == 0
    loaded = load_batch(str(out))
    direct = sample(SettingSpec("A", 2, 2), 40, 3)
    assert np.array_equal(loaded.V, direct.V)


def test_cli_train_compare_analyze_pipeline(tmp_path, capsys):
    ckpt_path = tmp_path / "model.ckpt"
    curve_path = tmp_path / "curve.csv"
    code = cli_main([
        "train", "--setting", "C", "--n", "2", "--m", "2", "--seed", "1",
        "--menu-size", "4", "--menu-temperature", "5.0", "--iterations", "2",
        "--samples-per-iter", "64", "--batch", "32", "--d", "16",
        "--interaction-modules", "1",
        "--curve", str(curve_path), "--out", str(ckpt_path)])
    assert code == 0
    assert curve_path.read_text().startswith("# amanet-curve-v1")

    code = cli_main(["compare", "--setting", "C", "--n", "2", "--m", "2",
                     "--samples", "2000", "--checkpoint", str(ckpt_path),
                     "--out", str(tmp_path / "cmp.csv")])
    assert code == 0
    rows = list(csv.DictReader(
        (tmp_path / "cmp.csv").read_text().splitlines()[1:]))
    assert {r["method"] for r in rows} == {"vcg", "item-myerson", "menunet"}

    svg_path = tmp_path / "top.svg"
    code = cli_main(["analyze", "--mechanism", "checkpoint", "--checkpoint",
                     str(ckpt_path), "--setting", "C", "--n", "2", "--m", "2",
                     "--samples", "1000", "--top", "3",
                     "--out", str(tmp_path / "top.csv"), "--plot", str(svg_path)])
    assert code == 0
    assert svg_path.read_bytes().lstrip().startswith(b"<?xml")
    assert (tmp_path / "top.csv").read_text().startswith(
        "# amanet-top-allocations-v1")

    code = cli_main(["audit", "--mechanism", "checkpoint", "--checkpoint",
                     str(ckpt_path), "--setting", "C", "--n", "2", "--m", "2",
                     "--probes", "50x10"])
    assert code == 0


def test_cli_train_reads_config_file(tmp_path):
    config_path = tmp_path / "run.ini"
    config_path.write_text(
        "[trainer]\n"
        "menu_size = 4\nmenu_temperature = 5.0\niterations = 2\n"
        "samples_per_iter = 64\nbatch = 32\nseed = 9\n"
        "[model]\n"
        "d = 16\nd_hidden = 16\nheads = 2\ninteraction_modules = 1\n"
        "conv_hidden = 16\n")
    ckpt_path = tmp_path / "model.ckpt"
    code = cli_main(["train", "--setting", "C", "--n", "2", "--m", "2",
                     "--config", str(config_path), "--out", str(ckpt_path)])
    assert code == 0
    from amanet.training import load
    ckpt = load(str(ckpt_path))
    assert ckpt.train_config.seed == 9
    assert ckpt.model_config.d == 16
    # flags override the file
    code = cli_main(["train", "--setting", "C", "--n", "2", "--m", "2",
                     "--config", str(config_path), "--seed", "11",
                     "--out", str(ckpt_path)])
    assert code == 0
    assert load(str(ckpt_path)).train_config.seed == 11
