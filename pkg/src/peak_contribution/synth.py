"""
Synthetic smart-meter population.

Hourly consumption of customer c on day d at hour h:

    kwh = scale_c / 30.4375 * month_d * weekday_d * weather_d * day_cd * shape_c,season(d)[h] * noise

where ``shape`` is the customer's seasonal archetype (a 24-point shape summing to 1) with a
small per-customer jitter and every random factor is a mean-one lognormal. Meter values are
rounded to 4 decimals and the feeder is their exact sum plus a constant base load.
"""

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd

from .config import HOURS_PER_DAY, SEASONS, SynthConfig, default_calendar
from .errors import ConfigError, InsufficientDataError
from .ingest import TIMESTAMP_FORMAT
from .utils import save_frame, save_json
from .wcr import split_train_test

logger = logging.getLogger(__name__)

GROUND_TRUTH_VERSION = 1
DAYS_PER_MONTH = 30.4375
# Gumbel scale matching a Gaussian of unit std; turns per-hour log-noise into a softmax temperature
GUMBEL_FACTOR = 0.78

MONTH_FACTORS = {
    1: 1.10, 2: 1.06, 3: 0.96, 4: 0.92, 5: 0.95, 6: 1.05,
    7: 1.14, 8: 1.12, 9: 0.98, 10: 0.92, 11: 0.96, 12: 1.08,
}

ARCHETYPES = (
    "morning_peaker", "evening_peaker", "dual_peak", "flat", "midday_dip", "night_heavy",
)

_HOURS = np.arange(HOURS_PER_DAY, dtype=float)


def _bump(mu: float, width: float, height: float) -> np.ndarray:
    gap = np.abs(_HOURS - mu)
    gap = np.minimum(gap, HOURS_PER_DAY - gap)
    return height * np.exp(-0.5 * (gap / width) ** 2)


def archetype_shape(name: str, season: str) -> np.ndarray:
    """Daily load shape of an archetype in a season, normalized to sum to 1."""
    evening = 18.0 if season in ("summer", "winter") else 19.0
    shapes = {
        "morning_peaker": lambda: 0.3 + _bump(7.5, 1.2, 2.0) + _bump(evening, 2.0, 0.6),
        "evening_peaker": lambda: 0.3 + _bump(evening, 1.5, 2.2) + _bump(7.5, 1.0, 0.4),
        "dual_peak": lambda: 0.3 + _bump(7.5, 1.2, 1.4) + _bump(evening, 1.5, 1.4),
        "flat": lambda: 1.0 + _bump(13.0, 6.0, 0.15),
        "midday_dip": lambda: 1.0 - _bump(12.5, 2.5, 0.8) + _bump(evening + 1.0, 2.0, 0.4),
        "night_heavy": lambda: 0.4 + _bump(1.0, 2.5, 1.6) + _bump(evening + 2.0, 1.5, 0.5),
    }
    if name not in shapes:
        raise KeyError(f"unknown archetype {name!r}")
    shape = shapes[name]()
    if season == "summer":
        shape = shape + _bump(16.0, 2.5, 0.6)
    return shape / shape.sum()


@dataclass
class GroundTruth:
    customers: List[str]
    archetypes: Dict[str, List[str]]
    scale_kwh: List[float]
    observable: List[bool]

    def to_dict(self, config: SynthConfig) -> Dict[str, Any]:
        return {
            "version": GROUND_TRUTH_VERSION,
            "config": asdict(config),
            "customers": {
                cid: {
                    "archetype": {s: self.archetypes[s][i] for s in SEASONS},
                    "scale_kwh": self.scale_kwh[i],
                    "observable": self.observable[i],
                }
                for i, cid in enumerate(self.customers)
            },
        }


@dataclass
class SynthResult:
    readings: pd.DataFrame
    scada: pd.DataFrame
    survey: pd.DataFrame
    ground_truth: GroundTruth
    config: SynthConfig

    def labels(self) -> pd.DataFrame:
        return emit_ground_truth_labels(self.ground_truth, self.config)

    def write(self, out_dir: Union[str, Path]) -> List[Path]:
        out_dir = Path(out_dir)
        written = []
        for name, frame in (
            ("sm_readings.csv", self.readings),
            ("scada.csv", self.scada),
            ("survey.csv", self.survey),
            ("labels.csv", self.labels()),
        ):
            save_frame(frame, out_dir / name)
            written.append(out_dir / name)
        save_json(self.ground_truth.to_dict(self.config), out_dir / "ground_truth.json")
        written.append(out_dir / "ground_truth.json")
        return written


def _mean_one_lognormal(rng: np.random.Generator, sigma: float, size) -> np.ndarray:
    return np.exp(sigma * rng.standard_normal(size) - 0.5 * sigma ** 2)


def _draw_archetypes(rng: np.random.Generator, config: SynthConfig) -> np.ndarray:
    n_arch = len(config.archetypes)
    weights = np.asarray(config.archetype_weights or [1.0] * n_arch, dtype=float)
    weights = weights / weights.sum()
    drawn = np.empty((config.n_customers, len(SEASONS)), dtype=int)
    drawn[:, 0] = rng.choice(n_arch, size=config.n_customers, p=weights)
    for s in range(1, len(SEASONS)):
        keep = rng.random(config.n_customers) < config.archetype_persistence
        fresh = rng.choice(n_arch, size=config.n_customers, p=weights)
        drawn[:, s] = np.where(keep, drawn[:, s - 1], fresh)
    return drawn


def _survey_vectors(templates: np.ndarray, temperature: float) -> np.ndarray:
    if temperature <= 0:
        out = np.zeros_like(templates)
        np.put_along_axis(out, np.argmax(templates, axis=-1)[..., None], 1.0, axis=-1)
        return out
    logits = np.log(templates) / temperature
    logits -= logits.max(axis=-1, keepdims=True)
    weights = np.exp(logits)
    return weights / weights.sum(axis=-1, keepdims=True)


def generate(config: SynthConfig, calendar: Optional[Dict[str, List[int]]] = None) -> SynthResult:
    """Draw a population; the same config always yields identical frames."""
    config.validate()
    unknown = sorted(set(config.archetypes) - set(ARCHETYPES))
    if unknown:
        raise ConfigError(f"unknown archetypes {unknown}; choose from {list(ARCHETYPES)}")
    calendar = calendar or default_calendar()
    season_of_month = {m: SEASONS.index(s) for s, ms in calendar.items() for m in ms}
    rng = np.random.default_rng(config.seed)

    start = pd.Timestamp(config.start)
    hours = pd.date_range(start, start + pd.DateOffset(months=config.months), freq="h", inclusive="left")
    days = pd.DatetimeIndex(hours.normalize().unique())
    n_c, n_d = config.n_customers, len(days)
    ids = [f"C{i + 1:04d}" for i in range(n_c)]

    templates = np.array([
        [archetype_shape(name, season) for season in SEASONS] for name in config.archetypes
    ])  # (archetypes, seasons, 24)
    archetypes = _draw_archetypes(rng, config)
    scale = config.scale_median_kwh * np.exp(config.scale_sigma * rng.standard_normal(n_c))

    shapes = templates[archetypes, np.arange(len(SEASONS))[None, :]]  # (customers, seasons, 24)
    shapes = shapes * np.exp(config.shape_jitter * rng.standard_normal(shapes.shape))
    shapes /= shapes.sum(axis=-1, keepdims=True)

    day_season = np.array([season_of_month[m] for m in days.month])
    month = np.array([MONTH_FACTORS[m] for m in days.month])
    weekday = np.where(days.dayofweek >= 5, config.weekend_factor, 1.0)
    weather = _mean_one_lognormal(rng, config.weather_noise, n_d)
    daily = (scale / DAYS_PER_MONTH)[:, None] * (month * weekday * weather)[None, :]
    daily = daily * _mean_one_lognormal(rng, config.day_noise, (n_c, n_d))

    kwh = daily[:, :, None] * shapes[:, day_season, :]
    kwh = kwh * _mean_one_lognormal(rng, config.noise, kwh.shape)
    kwh = np.round(kwh.reshape(n_c, n_d * HOURS_PER_DAY)[:, :len(hours)], 4)

    stamps = np.asarray(hours.strftime(TIMESTAMP_FORMAT))
    readings = pd.DataFrame({
        "customer_id": np.repeat(ids, len(hours)),
        "timestamp": np.tile(stamps, n_c),
        "kwh": kwh.ravel(),
    })
    scada = pd.DataFrame({
        "timestamp": stamps,
        "system_kw": np.round(kwh.sum(axis=0) + config.base_load_kw, 4),
    })

    # survey: a noisy report of the customer's archetype, sharpened into peak-hour propensities
    reported = np.where(
        rng.random(archetypes.shape) < config.label_noise,
        rng.integers(len(config.archetypes), size=archetypes.shape),
        archetypes,
    )
    temperature = GUMBEL_FACTOR * float(np.hypot(config.noise, config.shape_jitter))
    vectors = _survey_vectors(templates[reported, np.arange(len(SEASONS))[None, :]], temperature)
    survey = pd.DataFrame(vectors.reshape(n_c * len(SEASONS), HOURS_PER_DAY),
                          columns=[f"x{h}" for h in range(HOURS_PER_DAY)])
    survey.insert(0, "customer_id", np.repeat(ids, len(SEASONS)))
    survey["season"] = np.tile(SEASONS, n_c)

    try:
        train, _ = split_train_test(ids, config.observable_fraction, config.seed)
    except InsufficientDataError:
        # too few customers for a held-out side
        logger.warning(f"{n_c} customers cannot be split at {config.observable_fraction}; all are observable")
        train = ids
    observable = set(train)
    truth = GroundTruth(
        customers=ids,
        archetypes={s: [config.archetypes[a] for a in archetypes[:, i]] for i, s in enumerate(SEASONS)},
        scale_kwh=scale.tolist(),
        observable=[cid in observable for cid in ids],
    )
    logger.info(f"Generated {n_c} customers over {len(hours)} hours ({n_d} days)")
    return SynthResult(readings, scada, survey, truth, config)


def emit_ground_truth_labels(truth: GroundTruth, config: SynthConfig) -> pd.DataFrame:
    """Long table of true archetypes, one row per customer and season (``labels.csv``)."""
    rows = [
        {
            "customer_id": cid,
            "season": season,
            "archetype": truth.archetypes[season][i],
            "archetype_index": config.archetypes.index(truth.archetypes[season][i]),
            "observable": truth.observable[i],
        }
        for i, cid in enumerate(truth.customers)
        for season in SEASONS
    ]
    return pd.DataFrame(rows, columns=["customer_id", "season", "archetype", "archetype_index", "observable"])
