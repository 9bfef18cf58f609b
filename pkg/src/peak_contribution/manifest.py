"""
Run manifest: which config and inputs produced every artifact.

``run_manifest.json`` sits next to the artifacts and holds one entry per subcommand with the
config hash, input/output SHA-256 digests, artifact format versions and wall-clock timing.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

from .classify import MODEL_VERSION as MLR_VERSION
from .errors import ManifestMismatchError
from .spectral import PATTERNS_VERSION
from .synth import GROUND_TRUTH_VERSION
from .utils import PathLike, file_sha256, load_json, save_json
from .wcr import MODEL_VERSION as WCR_VERSION

logger = logging.getLogger(__name__)

MANIFEST_NAME = "run_manifest.json"

PRODUCERS: Dict[str, str] = {
    "sm_readings.csv": "synth",
    "scada.csv": "synth",
    "survey.csv": "synth",
    "ground_truth.json": "synth",
    "labels.csv": "synth",
    "meters_clean.csv": "ingest",
    "feeder_clean.csv": "ingest",
    "billing.csv": "ingest",
    "clean_report.csv": "ingest",
    "cmpc.csv": "cmpc",
    "peak_timing.csv": "cmpc",
    "daily_peaks.csv": "cmpc",
    "split.json": "cluster",
    "patterns.json": "cluster",
    "mlr_model.json": "train",
    "wcr_model.json": "train",
    "cv_report.json": "train",
    "estimates.csv": "estimate",
    "estimate_metrics.json": "estimate",
    "bench_report.json": "bench",
    "baseline_comparison.csv": "bench",
    "metric_comparison.csv": "bench",
    "dr_report.csv": "dr",
    "strategy_summary.json": "dr",
    "report.json": "report",
    "seasonal_metrics.csv": "report",
    "pattern_profiles.csv": "report",
    "dbi_curves.csv": "report",
    "pattern_shares.csv": "report",
    "peak_time_distribution.csv": "report",
}

ARTIFACT_VERSIONS: Dict[str, int] = {
    "ground_truth.json": GROUND_TRUTH_VERSION,
    "patterns.json": PATTERNS_VERSION,
    "mlr_model.json": MLR_VERSION,
    "wcr_model.json": WCR_VERSION,
}

# inputs a user may supply without running `synth`
RAW_INPUTS = {"sm_readings.csv", "scada.csv", "survey.csv"}


def producer_of(name: str) -> str:
    return PRODUCERS.get(Path(name).name, "synth")


@dataclass
class RunManifest:
    path: Path
    config_hash: Optional[str] = None
    entries: Dict[str, Dict[str, Any]] = field(default_factory=dict)

    @classmethod
    def load(cls, out_dir: PathLike) -> "RunManifest":
        path = Path(out_dir) / MANIFEST_NAME
        if not path.exists():
            return cls(path)
        data = load_json(path, "synth")
        return cls(path, data.get("config_hash"), data.get("entries", {}))

    def save(self) -> None:
        save_json({"config_hash": self.config_hash, "entries": self.entries}, self.path)

    def record(
        self,
        command: str,
        config_hash: str,
        inputs: Iterable[Path],
        outputs: Iterable[Path],
        seconds: float,
    ) -> None:
        outputs = list(outputs)
        self.config_hash = config_hash
        self.entries[command] = {
            "config_hash": config_hash,
            "inputs": {Path(p).name: file_sha256(p) for p in inputs},
            "outputs": {Path(p).name: file_sha256(p) for p in outputs},
            "artifact_versions": {
                Path(p).name: ARTIFACT_VERSIONS[Path(p).name]
                for p in outputs if Path(p).name in ARTIFACT_VERSIONS
            },
            "seconds": round(seconds, 3),
        }
        self.save()

    def verify(self, command: str, config_hash: str, inputs: Iterable[Path]) -> None:
        """
        Check that every input still has the digest its producer recorded, under the same
        config. Raw inputs that no recorded subcommand produced are accepted as given.
        """
        if self.config_hash is not None and self.config_hash != config_hash:
            raise ManifestMismatchError(
                f"{command}: config hash {config_hash[:12]} differs from the manifest's {self.config_hash[:12]}"
            )
        for path in inputs:
            name = Path(path).name
            producer = producer_of(name)
            entry = self.entries.get(producer)
            if entry is None:
                if name in RAW_INPUTS:
                    logger.debug(f"{name} is an external input; not verified")
                    continue
                raise ManifestMismatchError(f"{command}: {name} was not produced by a recorded `{producer}` run")
            if entry["config_hash"] != config_hash:
                raise ManifestMismatchError(f"{command}: {name} was produced under a different config")
            recorded = entry["outputs"].get(name)
            if recorded != file_sha256(path):
                raise ManifestMismatchError(f"{command}: {name} does not match the digest recorded by `{producer}`")
