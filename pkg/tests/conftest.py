import io

import numpy as np
import pandas as pd
import pytest

from peak_contribution.config import PipelineConfig
from peak_contribution.ingest import FeederSeries, MeterSeries


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def hourly_index():
    def make(days: int, start: str = "2017-01-01") -> pd.DatetimeIndex:
        return pd.date_range(start, periods=days * 24, freq="h")
    return make


@pytest.fixture
def csv_stream():
    """Build an in-memory CSV from a header and rows."""
    def make(header: str, rows) -> io.StringIO:
        body = "".join(",".join(str(v) for v in row) + "\n" for row in rows)
        return io.StringIO(header + "\n" + body)
    return make


@pytest.fixture
def random_panel(rng, hourly_index):
    """Positive hourly loads for a handful of customers over January 2017."""
    def make(n_customers: int = 5, days: int = 31) -> pd.DataFrame:
        index = hourly_index(days)
        values = rng.uniform(0.2, 3.0, size=(len(index), n_customers))
        return pd.DataFrame(values, index=index, columns=[f"C{i + 1:04d}" for i in range(n_customers)])
    return make


@pytest.fixture
def feeder_of():
    def make(panel: pd.DataFrame) -> FeederSeries:
        return FeederSeries(panel.sum(axis=1).rename("system_kw"))
    return make


@pytest.fixture
def meter_of():
    def make(values, index, customer_id: str = "C0001") -> MeterSeries:
        return MeterSeries(customer_id, pd.Series(values, index=index, dtype=float, name=customer_id))
    return make


@pytest.fixture
def small_config(tmp_path):
    """Full-year pipeline config on a population small enough for unit tests."""
    config = PipelineConfig()
    config.paths.out_dir = str(tmp_path / "out")
    config.synth.n_customers = 40
    config.dr.n_houses = 20
    config.validate()
    return config
