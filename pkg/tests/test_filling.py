import numpy as np
import pytest

from cleants.filling import FillError, FillParams, fill_anomalies
from cleants.panel import PanelError, SeriesPanel


def panel_from_rows(rows):
    values = np.asarray(rows, dtype=float)
    return SeriesPanel(values, [f"s{i}" for i in range(values.shape[0])])


def test_mean_fill_matches_hand_arithmetic():
    panel = panel_from_rows([[1, 2, 3, 100, 5, 6]])
    _, records = fill_anomalies(panel, {(0, 3)}, "mean", FillParams(neighbor_k=1))
    assert panel.values[0, 3] == pytest.approx(4.0)  # (3 + 5) / 2
    assert records[0].old_value == pytest.approx(100.0)
    assert records[0].new_value == pytest.approx(4.0)


def test_mean_fill_skips_other_flagged_points():
    panel = panel_from_rows([[1, 2, 50, 60, 5, 6]])
    fill_anomalies(panel, {(0, 2), (0, 3)}, "mean", FillParams(neighbor_k=1))
    # each fill draws from clean values only: neighbors of t=2 are 2 and 5, of t=3 are 2 and 5
    assert panel.values[0, 2] == pytest.approx((2 + 5) / 2)
    assert panel.values[0, 3] == pytest.approx((2 + 5) / 2)


def test_periodic_mean_restores_noiseless_periodic_series_exactly():
    period = 5
    base = np.array([1.0, 7.0, 3.0, -2.0, 4.0])
    series = np.tile(base, 6)
    truth = series[12]
    series[12] = 99.0
    panel = panel_from_rows([series])
    fill_anomalies(panel, {(0, 12)}, "periodic_mean", FillParams(period=period))
    assert panel.values[0, 12] == pytest.approx(truth, abs=0.0)


def test_periodic_mean_requires_clean_phase_values():
    series = np.arange(6, dtype=float)
    panel = panel_from_rows([series])
    # period 6: position 2 is the only sample of its phase
    with pytest.raises(FillError, match="same-phase"):
        fill_anomalies(panel, {(0, 2)}, "periodic_mean", FillParams(period=6))


def test_mean_fill_empty_neighborhood_errors():
    panel = panel_from_rows([[1.0, 2.0, 3.0]])
    with pytest.raises(FillError, match="clean neighbors"):
        fill_anomalies(panel, {(0, 0), (0, 1), (0, 2)}, "mean", FillParams(neighbor_k=2))


def test_lowess_tracks_linear_trend():
    series = np.arange(30, dtype=float)
    panel = panel_from_rows([series])
    fill_anomalies(panel, {(0, 15)}, "lowess", FillParams(lowess_span=6))
    assert panel.values[0, 15] == pytest.approx(15.0, abs=1e-6)


def test_lowess_with_starved_neighborhood_errors():
    panel = panel_from_rows([np.arange(10, dtype=float)])
    positions = {(0, t) for t in range(2, 9)}
    with pytest.raises(FillError):
        fill_anomalies(panel, positions, "lowess", FillParams(lowess_span=2))


def test_fills_never_touch_other_positions():
    rng = np.random.default_rng(0)
    values = rng.normal(size=(4, 50))
    panel = SeriesPanel(values.copy(), list("abcd"))
    positions = {(0, 10), (2, 25), (3, 40)}
    fill_anomalies(panel, positions, "mean", FillParams(neighbor_k=3))
    diff = np.argwhere(panel.values != values)
    assert {(int(i), int(t)) for i, t in diff} <= positions


def test_positions_outside_training_range_rejected():
    panel = panel_from_rows([np.arange(20, dtype=float)])
    with pytest.raises(PanelError, match="training range"):
        fill_anomalies(panel, {(0, 15)}, "mean", FillParams(train_end=10))


def test_donors_respect_train_boundary():
    # right neighbors beyond train_end must not leak into the fill
    series = np.array([1.0, 1.0, 1.0, 50.0, 999.0, 999.0])
    panel = panel_from_rows([series])
    fill_anomalies(panel, {(0, 3)}, "mean", FillParams(neighbor_k=2, train_end=4))
    assert panel.values[0, 3] == pytest.approx(1.0)


def test_remove_records_unchanged_values():
    panel = panel_from_rows([np.arange(12, dtype=float)])
    _, records = fill_anomalies(panel, {(0, 4)}, "remove", FillParams())
    assert records[0].old_value == records[0].new_value == pytest.approx(4.0)
    assert panel.train_exclusions[0, 4]
    assert panel.values[0, 4] == 4.0


def test_unknown_strategy_rejected():
    panel = panel_from_rows([np.arange(8, dtype=float)])
    with pytest.raises(PanelError, match="unknown fill strategy"):
        fill_anomalies(panel, {(0, 2)}, "interpolate", FillParams())
