import pytest

from peak_contribution.errors import ManifestMismatchError
from peak_contribution.manifest import MANIFEST_NAME, PRODUCERS, RunManifest, producer_of


@pytest.fixture
def produced(tmp_path):
    """A manifest recording an `ingest` run that wrote meters_clean.csv."""
    artifact = tmp_path / "meters_clean.csv"
    artifact.write_text("timestamp,A\n2017-01-01T00:00:00,1.0\n", encoding="utf-8")
    manifest = RunManifest.load(tmp_path)
    manifest.record("ingest", "hash-a", [], [artifact], 0.5)
    return manifest, artifact


def test_every_artifact_has_one_producer():
    assert producer_of("wcr_model.json") == "train"
    assert producer_of("/some/dir/estimates.csv") == "estimate"
    assert set(PRODUCERS.values()) == {
        "synth", "ingest", "cmpc", "cluster", "train", "estimate", "bench", "dr", "report",
    }


def test_record_persists(produced, tmp_path):
    manifest, _ = produced
    assert (tmp_path / MANIFEST_NAME).exists()
    reloaded = RunManifest.load(tmp_path)
    assert reloaded.config_hash == "hash-a"
    assert set(reloaded.entries["ingest"]["outputs"]) == {"meters_clean.csv"}
    assert reloaded.entries["ingest"]["seconds"] == 0.5


def test_verify_accepts_untouched_inputs(produced):
    manifest, artifact = produced
    manifest.verify("cmpc", "hash-a", [artifact])


def test_verify_rejects_modified_inputs(produced):
    manifest, artifact = produced
    artifact.write_text("timestamp,A\n2017-01-01T00:00:00,2.0\n", encoding="utf-8")
    with pytest.raises(ManifestMismatchError):
        manifest.verify("cmpc", "hash-a", [artifact])


def test_verify_rejects_other_config(produced):
    manifest, artifact = produced
    with pytest.raises(ManifestMismatchError):
        manifest.verify("cmpc", "hash-b", [artifact])


def test_raw_inputs_need_no_producer(tmp_path):
    readings = tmp_path / "sm_readings.csv"
    readings.write_text("customer_id,timestamp,kwh\n", encoding="utf-8")
    RunManifest.load(tmp_path).verify("ingest", "hash-a", [readings])
