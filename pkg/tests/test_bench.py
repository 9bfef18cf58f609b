import numpy as np
import pandas as pd
import pytest

from peak_contribution.bench import (
    DR_REPORT_COLUMNS,
    Strategy,
    compare_estimators,
    customer_peak,
    dr_horizon,
    metric_correlation,
    peak_ratio_table,
    peak_to_contribution_ratio,
    profile_entropy,
    rank_customers,
    run_strategies,
    select_population,
    simulate_dr,
)
from peak_contribution.cmpc import daily_peaks
from peak_contribution.config import BenchConfig, DrSimConfig
from peak_contribution.errors import InsufficientDataError, UndefinedMetricError
from peak_contribution.ingest import FeederSeries


@pytest.fixture
def spiky_population(hourly_index):
    """One customer at 1 kW except a 10 kW spike at 18h every day of February."""
    index = hourly_index(28, start="2017-02-01")
    load = np.ones(len(index))
    load[index.hour == 18] = 10.0
    return pd.DataFrame({"A": load}, index=index)


def test_dr_reduction_closed_form(spiky_population):
    config = DrSimConfig(n_houses=1, fraction=1.0, elasticity=0.21)
    result = simulate_dr(config, spiky_population, ["A"], "cmpc_rank_actual")
    np.testing.assert_allclose(result.daily["peak_before_kw"], 10.0)
    np.testing.assert_allclose(result.daily["peak_after_kw"], 7.9)
    np.testing.assert_allclose(result.daily["reduction_kwh"], 2.1)
    assert result.total == pytest.approx(2.1 * 28)
    assert result.selected == ["A"]


def test_dr_window_around_peak(spiky_population):
    config = DrSimConfig(n_houses=1, fraction=1.0, elasticity=0.21, window_hours=3)
    result = simulate_dr(config, spiky_population, ["A"])
    assert result.total == pytest.approx(2.1 * 28)


def test_zero_elasticity_sheds_nothing(spiky_population):
    config = DrSimConfig(n_houses=1, fraction=1.0, elasticity=0.0)
    result = simulate_dr(config, spiky_population, ["A"])
    assert result.total == 0.0


def test_rank_customers():
    scores = pd.Series({"B": 2.0, "A": 2.0, "C": 5.0, "D": np.nan})
    assert rank_customers(Strategy.CUSTOMER_PEAK.value, scores, seed=0) == ["C", "A", "B", "D"]
    assert rank_customers(Strategy.ENTROPY.value, scores, seed=0) == ["A", "B", "C", "D"]
    random_order = rank_customers(Strategy.RANDOM.value, scores, seed=9)
    assert random_order == rank_customers(Strategy.RANDOM.value, scores, seed=9)
    assert sorted(random_order) == ["A", "B", "C", "D"]


def test_run_strategies_orders_reductions(hourly_index):
    index = hourly_index(28, start="2017-02-01")
    big = np.ones(len(index))
    big[index.hour == 18] = 10.0
    population = pd.DataFrame({"A": np.ones(len(index)), "B": big, "C": np.ones(len(index))}, index=index)
    config = DrSimConfig(n_houses=3, fraction=0.34, elasticity=0.21)
    scores = {
        Strategy.CMPC_ACTUAL.value: pd.Series({"A": 0.1, "B": 0.8, "C": 0.1}),
        Strategy.MONTHLY_DEMAND.value: pd.Series({"A": 30.0, "B": 10.0, "C": 20.0}),
    }
    result = run_strategies(config, population, scores, seed=0)
    assert list(result.results) == [Strategy.CMPC_ACTUAL.value, Strategy.MONTHLY_DEMAND.value]
    assert result.results[Strategy.CMPC_ACTUAL.value].selected == ["B"]
    assert result.results[Strategy.MONTHLY_DEMAND.value].selected == ["A"]
    assert result.results[Strategy.CMPC_ACTUAL.value].total > result.results[Strategy.MONTHLY_DEMAND.value].total
    assert list(result.report().columns) == DR_REPORT_COLUMNS
    assert len(result.report()) == 2 * 28
    assert result.improvements()[Strategy.CMPC_ACTUAL.value][Strategy.MONTHLY_DEMAND.value] > 0


def test_select_population(hourly_index):
    index = hourly_index(28)
    panel = pd.DataFrame({"C": 1.0, "A": 1.0, "B": 1.0}, index=index)
    panel.iloc[3, 1] = np.nan
    days = pd.date_range("2017-01-01", periods=28, freq="D")
    assert list(select_population(panel, 2, days).columns) == ["B", "C"]
    with pytest.raises(InsufficientDataError):
        select_population(panel, 3, days)


def test_dr_horizon(hourly_index):
    index = hourly_index(90)
    load = np.ones(len(index))
    load[index.get_loc(pd.Timestamp("2017-03-10 18:00"))] = 50.0
    feeder = FeederSeries(pd.Series(load, index=index))
    days = dr_horizon(feeder, DrSimConfig(horizon_days=28))
    assert days[0] == pd.Timestamp("2017-03-01") and len(days) == 28
    assert dr_horizon(feeder, DrSimConfig(month="2017-02"))[0] == pd.Timestamp("2017-02-01")


def test_profile_entropy(meter_of, hourly_index):
    index = hourly_index(24)
    values = np.ones(len(index))
    values[index.hour == 19] = 3.0
    assert profile_entropy(meter_of(values, index)) == pytest.approx(0.0)

    spread = np.ones(len(index))
    for day in range(24):
        spread[day * 24 + day] = 3.0
    assert profile_entropy(meter_of(spread, index)) == pytest.approx(np.log(24))

    with pytest.raises(InsufficientDataError):
        profile_entropy(meter_of(values[:5 * 24], index[:5 * 24]))
    binned = profile_entropy(meter_of(spread, index), config=BenchConfig(entropy_method="consumption"))
    assert binned >= 0


def test_metric_correlation(rng):
    a = rng.random(30)
    b = 2 * a + rng.normal(0, 0.1, size=30)
    r, p = metric_correlation(a, b)
    assert r == pytest.approx(np.corrcoef(a, b)[0, 1])
    assert 0 <= p < 0.01
    with pytest.raises(UndefinedMetricError):
        metric_correlation(np.ones(5), np.arange(5.0))


def test_peak_ratio_table(hourly_index):
    index = hourly_index(31)
    flat = np.ones(len(index))
    spiky = np.ones(len(index))
    spiky[index.hour == 3] = 4.0
    feeder = flat * 10
    feeder[index.hour == 18] = 20.0
    panel = pd.DataFrame({"A": flat, "B": spiky}, index=index)
    table = peak_ratio_table(panel, FeederSeries(pd.Series(feeder, index=index))).set_index("customer_id")
    assert table.loc["A", "peak_ratio"] == pytest.approx(1.0)
    assert table.loc["B", "peak_ratio"] == pytest.approx(4.0)


def test_compare_estimators():
    records = pd.DataFrame({
        "season": "winter",
        "year": 2017,
        "month": [1, 1, 2, 2],
        "cmpc_actual": [0.1, 0.2, 0.1, 0.2],
        "cmpc_estimated": [0.11, 0.18, 0.1, 0.2],
        "baseline_estimated": [0.12, 0.16, 0.12, 0.16],
    })
    table, summary = compare_estimators(records)
    assert table["mape_wcr"].tolist() == pytest.approx([10.0, 0.0])
    assert table["mape_baseline"].tolist() == pytest.approx([20.0, 20.0])
    assert summary["max_improvement"] == pytest.approx(20.0)
    assert summary["overall_improvement"] == pytest.approx(15.0)


def test_customer_peak_and_ratio_agree_with_table(hourly_index, meter_of):
    index = hourly_index(31)
    spiky = np.ones(len(index))
    spiky[index.hour == 3] = 4.0
    feeder_values = np.full(len(index), 10.0)
    feeder_values[index.hour == 18] = 20.0
    feeder = FeederSeries(pd.Series(feeder_values, index=index))
    meter = meter_of(spiky, index, "B")

    assert customer_peak(meter) == 4.0
    assert customer_peak(meter, (2017, 1)) == 4.0
    with pytest.raises(InsufficientDataError):
        customer_peak(meter, (2017, 2))

    peaks = daily_peaks(feeder).peaks
    assert len(peaks) == 31 and all(p.hour == 18 for p in peaks)
    assert peak_to_contribution_ratio(meter, peaks) == pytest.approx(4.0)
