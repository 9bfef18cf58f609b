"""
Pipeline orchestration: one method per subcommand, each reading its upstream artifacts from
the output directory and writing its own.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from . import bench, classify, cmpc, ingest, spectral, synth, wcr
from .cmpc import MonthKey
from .config import HOURS_PER_DAY, SEASONS, PipelineConfig, config_hash
from .errors import InsufficientDataError, UndefinedMetricError
from .manifest import RunManifest, producer_of
from .utils import decode_float, load_frame, load_json, require, save_frame, save_json

logger = logging.getLogger(__name__)

TIMING_COLUMNS = [f"x{h}" for h in range(HOURS_PER_DAY)]
PIPELINE_ORDER = ["synth", "ingest", "cmpc", "cluster", "train", "estimate", "bench", "dr", "report"]


@dataclass
class SeasonTraining:
    season: str
    mlr: classify.MlrModel
    regressions: List[wcr.ClusterRegression]
    cv: classify.CvReport


class PeakPipeline:
    def __init__(self, config: PipelineConfig, strict: bool = False):
        self.config = config
        self.strict = strict
        self.out = config.out_dir
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = RunManifest.load(self.out)
        self.config_hash = config_hash(config)

    # -- plumbing ---------------------------------------------------------------------------

    def artifact(self, name: str) -> Path:
        return self.out / name

    def _run(self, command: str, inputs: Sequence[Path], body: Callable[[], List[Path]]) -> List[Path]:
        for path in inputs:
            require(path, producer_of(path.name))
        if self.strict:
            self.manifest.verify(command, self.config_hash, inputs)
        started = time.perf_counter()
        outputs = body()
        elapsed = time.perf_counter() - started
        self.manifest.record(command, self.config_hash, inputs, outputs, elapsed)
        logger.info(f"{command} finished in {elapsed:.2f}s: {', '.join(p.name for p in outputs)}")
        return outputs

    def _panel(self) -> pd.DataFrame:
        return ingest.load_panel(self.artifact("meters_clean.csv"))

    def _feeder(self) -> ingest.FeederSeries:
        return ingest.load_feeder(self.artifact("feeder_clean.csv"))

    def _frame(self, name: str, **kwargs) -> pd.DataFrame:
        return load_frame(self.artifact(name), producer_of(name), dtype={"customer_id": str}, **kwargs)

    def _split(self) -> Dict[str, List[str]]:
        return load_json(self.artifact("split.json"), "cluster")

    def _season_rows(self, frame: pd.DataFrame, season: str) -> pd.DataFrame:
        return frame[frame["month"].isin(self.config.calendar[season])]

    def _timing(self, season: str) -> pd.DataFrame:
        timing = self._frame("peak_timing.csv")
        rows = timing[timing["season"] == season].set_index("customer_id")[TIMING_COLUMNS]
        rows.columns = list(range(HOURS_PER_DAY))
        return rows

    def _monthly_pairs(self, customers: Sequence[str], season: str) -> pd.DataFrame:
        """CMPC joined with billing energy for the customers' months in ``season``."""
        cmpc_rows = self._season_rows(self._frame("cmpc.csv"), season)
        billing = self._season_rows(self._frame("billing.csv"), season)
        pairs = billing.merge(cmpc_rows, on=["customer_id", "year", "month"], how="left")
        pairs = pairs[pairs["customer_id"].isin(set(customers))]
        return pairs.sort_values(["customer_id", "year", "month"], kind="mergesort").reset_index(drop=True)

    def _features(self, season: str, customers: Sequence[str], source: str) -> pd.DataFrame:
        if source == "survey":
            survey = classify.load_survey(require(self.config.resolve("survey"), "synth"))
            features = classify.survey_features(survey, season)
        else:
            features = self._timing(season)
        missing = sorted(set(customers) - set(features.index))
        if missing:
            raise InsufficientDataError(f"{season}: no {source} features for {len(missing)} customers, e.g. {missing[:3]}")
        return features.loc[list(customers)]

    # -- subcommands ------------------------------------------------------------------------

    def synth(self) -> List[Path]:
        def body():
            return synth.generate(self.config.synth, self.config.calendar).write(self.out)
        return self._run("synth", [], body)

    def ingest(self) -> List[Path]:
        readings_path = self.config.resolve("readings")
        scada_path = self.config.resolve("scada")

        def body():
            readings = ingest.parse_readings(readings_path)
            feeder = ingest.load_scada(scada_path)
            panel = ingest.build_panel(readings)
            cleaned = ingest.clean_panel(panel, self.config.ingest.z_threshold)
            feeder = ingest.clean_feeder(feeder, self.config.ingest.z_threshold)

            ingest.save_panel(cleaned.panel, self.artifact("meters_clean.csv"))
            ingest.save_feeder(feeder, self.artifact("feeder_clean.csv"))
            save_frame(ingest.billing_table(cleaned.panel), self.artifact("billing.csv"))
            save_frame(cleaned.report, self.artifact("clean_report.csv"))
            return [self.artifact(n) for n in ("meters_clean.csv", "feeder_clean.csv", "billing.csv", "clean_report.csv")]
        return self._run("ingest", [readings_path, scada_path], body)

    def cmpc(self) -> List[Path]:
        inputs = [self.artifact("meters_clean.csv"), self.artifact("feeder_clean.csv")]

        def body():
            panel, feeder = self._panel(), self._feeder()
            save_frame(cmpc.cmpc_table(panel, feeder), self.artifact("cmpc.csv"))

            peaks = cmpc.daily_peaks_frame(feeder)
            peaks["day"] = pd.DatetimeIndex(peaks["day"]).strftime("%Y-%m-%d")
            save_frame(peaks, self.artifact("daily_peaks.csv"))

            seasons = ingest.season_labels(pd.DatetimeIndex(panel.index), self.config.calendar)
            frames = []
            for season in SEASONS:
                matrix = cmpc.peak_timing_matrix(panel[seasons == season])
                if matrix.empty:
                    continue
                matrix.columns = TIMING_COLUMNS
                frames.append(matrix.reset_index().assign(season=season))
            timing = pd.concat(frames, ignore_index=True)[["customer_id", "season", *TIMING_COLUMNS]]
            save_frame(timing, self.artifact("peak_timing.csv"))
            return [self.artifact(n) for n in ("cmpc.csv", "peak_timing.csv", "daily_peaks.csv")]
        return self._run("cmpc", inputs, body)

    def cluster(self) -> List[Path]:
        inputs = [self.artifact("meters_clean.csv"), self.artifact("feeder_clean.csv")]

        def body():
            panel = self._panel()
            train, test = wcr.split_train_test(panel.columns, self.config.wcr.split_ratio, self.config.seed)
            save_json(
                {"ratio": self.config.wcr.split_ratio, "seed": self.config.seed, "train": train, "test": test},
                self.artifact("split.json"),
            )
            datasets, _ = ingest.split_seasons(panel[train], self._feeder(), self.config.calendar)
            profiles = {}
            for season, data in datasets.items():
                if len(data.profiles) <= self.config.spectral.phi:
                    logger.warning(f"{season}: {len(data.profiles)} profiles cannot be clustered; season skipped")
                    continue
                profiles[season] = data.profiles
            bank = spectral.build_pattern_bank(profiles, self.config.spectral, self.config.seed)
            save_json(bank.to_dict(), self.artifact("patterns.json"))
            logger.info(f"Pattern bank holds {bank.total_patterns} typical profiles")
            return [self.artifact("split.json"), self.artifact("patterns.json")]
        return self._run("cluster", inputs, body)

    def _train_season(self, season: str, bank: spectral.PatternBank) -> SeasonTraining:
        patterns = bank[season]
        labels = pd.Series(patterns.labels, index=patterns.customers)
        cc = self.config.classify
        timing = self._timing(season)
        customers = [c for c in patterns.customers if c in timing.index]
        X = timing.loc[customers].to_numpy()
        y = labels.loc[customers].to_numpy()

        mlr = classify.train_irls(X, y, patterns.k, cc.ridge, cc.max_iter, cc.tol, cc.bias, cc.coarse)
        X_eval = None
        if cc.eval_features == "survey":
            X_eval = self._features(season, customers, "survey").to_numpy()
        cv = classify.kfold_cv(X, y, patterns.k, cc.k_folds, self.config.seed, cc, X_eval=X_eval)

        pairs = self._monthly_pairs(customers, season).dropna(subset=["cmpc"])
        regressions = wcr.fit_wcr(
            pairs["energy_kwh"].to_numpy(), pairs["cmpc"].to_numpy(),
            labels.loc[pairs["customer_id"]].to_numpy(), patterns.k,
        )
        return SeasonTraining(season, mlr, regressions, cv)

    def train(self) -> List[Path]:
        inputs = [self.artifact(n) for n in ("patterns.json", "peak_timing.csv", "cmpc.csv", "billing.csv")]
        if self.config.classify.eval_features == "survey":
            inputs.append(self.config.resolve("survey"))

        def body():
            bank = spectral.PatternBank.from_dict(load_json(self.artifact("patterns.json"), "cluster"))
            seasons = [s for s in SEASONS if s in bank.seasons]
            if not seasons:
                raise InsufficientDataError("patterns.json holds no clustered season to train on")
            with ThreadPoolExecutor(max_workers=len(seasons)) as pool:
                trained = list(pool.map(lambda s: self._train_season(s, bank), seasons))

            models = {t.season: t.mlr for t in trained}
            save_json(classify.models_to_dict(models, self.config.classify), self.artifact("mlr_model.json"))
            save_json(wcr.WcrModel({t.season: t.regressions for t in trained}).to_dict(), self.artifact("wcr_model.json"))
            folds = {t.season: t.cv.to_dict() for t in trained}
            means = [t.cv.mean_auc for t in trained if np.isfinite(t.cv.mean_auc)]
            save_json(
                {"k_folds": self.config.classify.k_folds, "eval_features": self.config.classify.eval_features,
                 "seasons": folds, "mean_auc": float(np.mean(means)) if means else float("nan")},
                self.artifact("cv_report.json"),
            )
            return [self.artifact(n) for n in ("mlr_model.json", "wcr_model.json", "cv_report.json")]
        return self._run("train", inputs, body)

    def _estimate_records(
        self,
        season: str,
        customers: Sequence[str],
        models: Dict[str, classify.MlrModel],
        wcr_model: wcr.WcrModel,
    ) -> pd.DataFrame:
        source = self.config.wcr.estimate_features
        features = self._features(season, customers, source)
        probs = pd.DataFrame(classify.predict(models[season], features.to_numpy()), index=features.index)
        pairs = self._monthly_pairs(customers, season)
        row_probs = probs.loc[pairs["customer_id"]].to_numpy()
        raw = wcr_model.estimate(season, row_probs, pairs["energy_kwh"].to_numpy())
        if self.config.wcr.clamp:
            estimated, clamped = wcr.clamp_estimates(raw)
        else:
            estimated, clamped = raw, np.zeros(raw.shape, dtype=bool)
        return pairs.assign(
            season=season,
            cluster=np.argmax(row_probs, axis=1),
            raw_estimate=raw,
            cmpc_estimated=estimated,
            clamped=clamped,
        ).rename(columns={"cmpc": "cmpc_actual"})

    def _load_models(self):
        models = classify.models_from_dict(load_json(self.artifact("mlr_model.json"), "train"))
        wcr_model = wcr.WcrModel.from_dict(load_json(self.artifact("wcr_model.json"), "train"))
        return models, wcr_model

    def estimate(self) -> List[Path]:
        inputs = [self.artifact(n) for n in
                  ("mlr_model.json", "wcr_model.json", "split.json", "billing.csv", "cmpc.csv", "peak_timing.csv")]
        if self.config.wcr.estimate_features == "survey":
            inputs.append(self.config.resolve("survey"))

        def body():
            models, wcr_model = self._load_models()
            test = self._split()["test"]
            records = pd.concat(
                [self._estimate_records(s, test, models, wcr_model) for s in SEASONS if s in models],
                ignore_index=True,
            )
            records = records.sort_values(["customer_id", "year", "month"], kind="mergesort").reset_index(drop=True)
            n_clamped = int(records["clamped"].sum())
            if n_clamped:
                logger.warning(f"{n_clamped} estimates clamped to [0, 1]")

            out = records[wcr.ESTIMATE_COLUMNS].assign(clamped=records["clamped"].astype(int))
            save_frame(out, self.artifact("estimates.csv"))
            scored = records.dropna(subset=["cmpc_actual"])
            overall = {
                "r2": wcr.safe_metric(wcr.r2, scored.cmpc_actual, scored.cmpc_estimated),
                "mape": wcr.safe_metric(wcr.mape, scored.cmpc_actual, scored.cmpc_estimated),
                "n_records": int(len(scored)),
            }
            save_json(
                {
                    "features": self.config.wcr.estimate_features,
                    "seasons": wcr.estimate_report(scored),
                    "overall": overall,
                    "clamped_records": [
                        {"customer_id": r.customer_id, "year": int(r.year), "month": int(r.month), "raw": r.raw_estimate}
                        for r in records[records["clamped"]].itertuples(index=False)
                    ],
                },
                self.artifact("estimate_metrics.json"),
            )
            return [self.artifact("estimates.csv"), self.artifact("estimate_metrics.json")]
        return self._run("estimate", inputs, body)

    def _baseline(self, season: str, train: Sequence[str]) -> wcr.ClusterRegression:
        pairs = self._monthly_pairs(train, season).dropna(subset=["cmpc"])
        return bench.baseline_ols_peak(pairs["energy_kwh"].to_numpy(), pairs["cmpc"].to_numpy())

    def _metric_table(self, panel: pd.DataFrame) -> pd.DataFrame:
        cmpc_table = self._frame("cmpc.csv")
        seasons = ingest.season_labels(pd.DatetimeIndex(panel.index), self.config.calendar)
        rows = []
        for season in SEASONS:
            season_panel = panel[seasons == season]
            if season_panel.empty:
                continue
            mean_cmpc = self._season_rows(cmpc_table, season).groupby("customer_id")["cmpc"].mean()
            peaks = season_panel.max()
            for customer in season_panel.columns:
                try:
                    value = bench.profile_entropy(
                        ingest.meter_series(season_panel, customer), config=self.config.bench
                    )
                except InsufficientDataError:
                    value = float("nan")
                rows.append({
                    "customer_id": customer,
                    "season": season,
                    "cmpc": mean_cmpc.get(customer, float("nan")),
                    "entropy": value,
                    "customer_peak": float(peaks[customer]),
                })
        return pd.DataFrame(rows, columns=["customer_id", "season", "cmpc", "entropy", "customer_peak"])

    def bench(self) -> List[Path]:
        inputs = [self.artifact(n) for n in
                  ("meters_clean.csv", "feeder_clean.csv", "cmpc.csv", "billing.csv", "split.json", "estimates.csv")]

        def body():
            panel, feeder = self._panel(), self._feeder()
            split = self._split()
            estimates = self._frame("estimates.csv").dropna(subset=["cmpc_actual"])
            billing = self._frame("billing.csv")
            estimates = estimates.merge(billing, on=["customer_id", "year", "month"], how="left")
            season_of = self.config.season_of_month()
            estimates["season"] = estimates["month"].map(season_of)
            baseline = np.empty(len(estimates))
            for season, rows in estimates.groupby("season"):
                line = self._baseline(season, split["train"])
                baseline[rows.index.to_numpy()] = line.predict(rows["energy_kwh"])
            estimates["baseline_estimated"] = baseline
            comparison, comparison_summary = bench.compare_estimators(estimates)
            save_frame(comparison, self.artifact("baseline_comparison.csv"))

            metrics = self._metric_table(panel)
            save_frame(metrics, self.artifact("metric_comparison.csv"))
            correlations = {}
            for season, rows in metrics.dropna().groupby("season", sort=True):
                try:
                    r_entropy, p_entropy = bench.metric_correlation(rows.cmpc, rows.entropy)
                    r_peak, _ = bench.metric_correlation(rows.cmpc, rows.customer_peak)
                except (InsufficientDataError, UndefinedMetricError):
                    continue
                correlations[season] = {"cmpc_entropy_r": r_entropy, "cmpc_entropy_p": p_entropy, "cmpc_peak_r": r_peak}

            ratios = bench.peak_ratio_table(panel, feeder)["peak_ratio"].to_numpy()
            counts, edges = np.histogram(np.clip(ratios, 0, 10), bins=10, range=(0, 10))
            coincidence = cmpc.coincidence_by_month(panel, feeder)
            energy = billing["energy_kwh"].to_numpy()
            report = {
                "baseline_comparison": comparison_summary,
                "correlations": correlations,
                "peak_ratio": {
                    "median": float(np.median(ratios)),
                    "p95": float(np.quantile(ratios, 0.95)),
                    "max": float(ratios.max()),
                    "share_above_2": float(np.mean(ratios > 2)),
                    "histogram": {"edges": edges.tolist(), "counts": counts.tolist()},
                },
                "coincidence_rate": {"by_month": coincidence.to_dict(), "mean": float(coincidence.mean())},
                "monthly_energy": {
                    "median_kwh": float(np.median(energy)),
                    "share_below_1000_kwh": float(np.mean(energy < 1000.0)),
                },
            }
            save_json(report, self.artifact("bench_report.json"))
            return [self.artifact(n) for n in ("bench_report.json", "baseline_comparison.csv", "metric_comparison.csv")]
        return self._run("bench", inputs, body)

    def _dr_scores(self, population: pd.DataFrame, month: MonthKey, season: str) -> Dict[str, pd.Series]:
        customers = list(population.columns)
        ids = pd.Index(customers)
        in_month = lambda f: f[(f["year"] == month[0]) & (f["month"] == month[1])].set_index("customer_id")
        billing = in_month(self._frame("billing.csv"))["energy_kwh"].reindex(ids)
        actual = in_month(self._frame("cmpc.csv"))["cmpc"].reindex(ids)

        panel = self._panel()
        seasons = ingest.season_labels(pd.DatetimeIndex(panel.index), self.config.calendar)
        season_panel = panel[seasons == season]
        entropy = {}
        for customer in customers:
            try:
                entropy[customer] = bench.profile_entropy(
                    ingest.meter_series(season_panel, customer), config=self.config.bench
                )
            except InsufficientDataError:
                entropy[customer] = float("nan")

        models, wcr_model = self._load_models()
        timing, missing = classify.align_features(self._timing(season), customers)
        if missing:
            logger.warning(f"{season}: {len(missing)} DR customers lack peak timing; using the population mean")
        probs = classify.predict(models[season], timing.to_numpy())
        estimated = wcr_model.estimate(season, probs, billing.to_numpy())
        baseline = self._baseline(season, self._split()["train"]).predict(billing.to_numpy())

        return {
            bench.Strategy.RANDOM.value: pd.Series(0.0, index=ids),
            bench.Strategy.MONTHLY_DEMAND.value: billing,
            bench.Strategy.CUSTOMER_PEAK.value: population.max(),
            bench.Strategy.ENTROPY.value: pd.Series(entropy).reindex(ids),
            bench.Strategy.CMPC_ACTUAL.value: actual,
            bench.Strategy.CMPC_ESTIMATED.value: pd.Series(estimated, index=ids),
            bench.Strategy.BASELINE_OLS.value: pd.Series(baseline, index=ids),
        }

    def dr(self) -> List[Path]:
        inputs = [self.artifact(n) for n in
                  ("meters_clean.csv", "feeder_clean.csv", "cmpc.csv", "billing.csv", "peak_timing.csv",
                   "split.json", "mlr_model.json", "wcr_model.json")]

        def body():
            dr_config = self.config.dr
            days = bench.dr_horizon(self._feeder(), dr_config)
            month = (days[0].year, days[0].month)
            season = self.config.season_of_month()[month[1]]
            population = bench.select_population(self._panel(), dr_config.n_houses, days)
            scores = self._dr_scores(population, month, season)
            result = bench.run_strategies(dr_config, population, scores, self.config.seed)

            save_frame(result.report(), self.artifact("dr_report.csv"))
            summary = result.summary()
            summary.update({
                "month": f"{month[0]}-{month[1]:02d}",
                "season": season,
                "n_houses": population.shape[1],
                "fraction": dr_config.fraction,
                "elasticity": dr_config.elasticity,
                "window_hours": dr_config.window_hours,
            })
            save_json(summary, self.artifact("strategy_summary.json"))
            return [self.artifact("dr_report.csv"), self.artifact("strategy_summary.json")]
        return self._run("dr", inputs, body)

    def report(self) -> List[Path]:
        inputs = [self.artifact(n) for n in
                  ("estimates.csv", "estimate_metrics.json", "cv_report.json", "patterns.json", "feeder_clean.csv")]

        def body():
            metrics = load_json(self.artifact("estimate_metrics.json"), "estimate")
            cv_report = load_json(self.artifact("cv_report.json"), "train")
            bank = spectral.PatternBank.from_dict(load_json(self.artifact("patterns.json"), "cluster"))
            estimates = self._frame("estimates.csv")

            seasonal = []
            for season in SEASONS:
                block = metrics["seasons"].get(season)
                if block is None:
                    continue
                auc = cv_report["seasons"].get(season, {}).get("mean_auc")
                seasonal.append({
                    "season": season,
                    "k": bank[season].k if season in bank.seasons else None,
                    "n_records": block["n_records"],
                    "r2": decode_float(block["r2"]),
                    "mape": decode_float(block["mape"]),
                    "r2_cluster_avg": decode_float(block["r2_cluster_avg"]),
                    "mape_cluster_avg": decode_float(block["mape_cluster_avg"]),
                    "r2_customer_avg": decode_float(block["r2_customer_avg"]),
                    "mape_customer_avg": decode_float(block["mape_customer_avg"]),
                    "auc": decode_float(auc),
                })
            seasonal_frame = pd.DataFrame(seasonal)
            save_frame(seasonal_frame, self.artifact("seasonal_metrics.csv"))

            profiles, curves, shares = [], [], []
            for season, patterns in bank.seasons.items():
                for z, profile in enumerate(patterns.profiles):
                    profiles.append({"season": season, "pattern": z, **{f"h{h}": v for h, v in enumerate(profile)}})
                    shares.append({"season": season, "pattern": z, "count": patterns.counts[z],
                                   "share": patterns.shares[z]})
                for k, value in sorted(patterns.dbi_curve.items()):
                    curves.append({"season": season, "k": k, "dbi": value, "chosen": k == patterns.k})
            save_frame(pd.DataFrame(profiles), self.artifact("pattern_profiles.csv"))
            save_frame(pd.DataFrame(curves), self.artifact("dbi_curves.csv"))
            save_frame(pd.DataFrame(shares), self.artifact("pattern_shares.csv"))

            distribution = cmpc.seasonal_peak_time_distribution(self._feeder(), self.config.calendar)
            distribution.columns = TIMING_COLUMNS
            save_frame(distribution.reset_index(), self.artifact("peak_time_distribution.csv"))

            report = {
                "seasonal_metrics": seasonal_frame.to_dict(orient="records"),
                "overall": metrics["overall"],
                "mean_auc": cv_report["mean_auc"],
                "total_patterns": bank.total_patterns,
                "n_estimates": int(len(estimates)),
                "n_clamped": int(estimates["clamped"].sum()),
            }
            bench_path = self.artifact("bench_report.json")
            if bench_path.exists():
                report["bench"] = load_json(bench_path, "bench")
            save_json(report, self.artifact("report.json"))
            return [self.artifact(n) for n in
                    ("report.json", "seasonal_metrics.csv", "pattern_profiles.csv", "dbi_curves.csv",
                     "pattern_shares.csv", "peak_time_distribution.csv")]
        return self._run("report", inputs, body)

    def run_all(self, commands: Optional[Sequence[str]] = None) -> None:
        for command in commands or PIPELINE_ORDER:
            getattr(self, command)()
