"""
Tests for the DriveSceneProcessor pipeline.
"""

import numpy as np
import pytest

from drive_sscl import DriveSceneProcessor, LearningMode, RunConfig
from drive_sscl.core.synth import ScenarioKind, SyntheticCorpus
from drive_sscl.exceptions import ConfigurationError, DataError
from drive_sscl.models import DataConfig, EvalConfig, ModelConfig, Readout, TrainConfig
from drive_sscl.utils.serialization import load_graph


@pytest.fixture
def manifest(synthetic_dataset, tmp_path):
    """The shared synthetic dataset written as ingestable files."""
    return SyntheticCorpus().write(synthetic_dataset, tmp_path / "data")


@pytest.fixture
def processor(small_model_config):
    """Processor with a small network and no configured classes."""
    config = RunConfig(model=small_model_config, train=TrainConfig(batch_size=4, epochs=1))
    return DriveSceneProcessor(config, threads=1)


class TestDriveSceneProcessor:
    """Tests for DriveSceneProcessor."""

    def test_init_defaults(self):
        """Test default configuration and a positive thread count."""
        processor = DriveSceneProcessor()
        assert processor.config.train.mode == LearningMode.SCL
        assert processor.threads >= 1

    def test_threads_from_config(self):
        """Test the data section supplies the thread count."""
        assert DriveSceneProcessor(RunConfig(data=DataConfig(threads=3))).threads == 3

    def test_classes_inferred(self, processor, manifest):
        """Test classes default to the sorted manifest labels."""
        processor.load_records(manifest)
        assert processor.config.data.classes == ["cross_left_to_right", "lead_vehicle_stop"]
        assert processor.config.num_classes == 2

    def test_configured_classes_kept(self, manifest):
        """Test a configured class list is not replaced."""
        config = RunConfig(data=DataConfig(classes=["lead_vehicle_stop", "cross_left_to_right", "other"]))
        processor = DriveSceneProcessor(config, threads=1)
        clips = processor.load_clips(processor.load_records(manifest, "val"))
        assert {c.label for c in clips} == {0, 1}
        assert processor.config.num_classes == 3

    def test_split_filter(self, processor, manifest):
        """Test records can be restricted to one split."""
        assert len(processor.load_records(manifest, "val")) == 6
        assert len(processor.load_records(manifest, "train")) == 14

    def test_build_graphs(self, processor, manifest, tmp_path):
        """Test one archive per clip, reloadable unchanged."""
        graphs = processor.build_graphs(manifest, tmp_path / "graphs")
        assert len(graphs) == 20
        first = load_graph(tmp_path / "graphs" / f"{graphs[0].clip_id}.npz")
        assert first.num_nodes == graphs[0].num_nodes
        np.testing.assert_array_equal(first.spatial_edges, graphs[0].spatial_edges)
        np.testing.assert_array_equal(first.lane, graphs[0].lane)

    def test_distance_matrix(self, processor, manifest):
        """Test the matrix covers the requested split."""
        matrix = processor.distance_matrix(manifest, "val")
        assert len(matrix.clip_ids) == 6
        assert matrix.values.shape == (6, 6)

    def test_ingest_unknown_label(self, tmp_path):
        """Test a label outside the configured classes is a data error."""
        processor = DriveSceneProcessor(RunConfig(data=DataConfig(classes=["a"])), threads=1)
        with pytest.raises(DataError):
            processor.ingest(tmp_path / "rec.csv", tmp_path / "m.csv", label="b")

    def test_train_and_evaluate(self, processor, manifest, tmp_path):
        """Test a checkpoint written by train feeds embed, retrieve and evaluate."""
        checkpoint = tmp_path / "model.npz"
        result = processor.train(manifest, checkpoint)
        assert checkpoint.exists()
        assert result.history[0].val_map is not None

        ids, z = processor.embed(manifest, checkpoint, "train")
        assert len(ids) == 14 and z.shape == (14, 6)

        results = processor.retrieve(manifest, checkpoint, top_k=2)
        assert len(results) == 6
        assert all(len(r.hits) == 2 for r in results)
        assert all(h.soia_distance is not None for r in results for h in r.hits)

        report = processor.evaluate(manifest, checkpoint)
        assert report.readout == Readout.PROTOTYPE
        assert [r.class_name for r in report.classes] == ["cross_left_to_right", "lead_vehicle_stop"]

    def test_centroid_evaluation(self, manifest, tmp_path):
        """Test the centroid readout reads labeled training clips."""
        config = RunConfig(
            model=ModelConfig(embedding_dim=6, encoder_dim=4, hidden_dim=8),
            train=TrainConfig(mode=LearningMode.UNSUP, batch_size=4, epochs=1),
            eval=EvalConfig(readout=Readout.AUTO),
        )
        processor = DriveSceneProcessor(config, threads=1)
        checkpoint = tmp_path / "model.npz"
        processor.train(manifest, checkpoint)
        report = processor.evaluate(manifest, checkpoint, LearningMode.UNSUP)
        assert report.readout == Readout.CENTROID

    def test_train_without_training_split(self, processor, tmp_path):
        """Test a manifest with only validation clips cannot train."""
        corpus = SyntheticCorpus()
        dataset = corpus.generate_dataset({ScenarioKind.EMPTY_ROAD: 0}, 1.0, seed=0, validation_per_class=2)
        manifest = corpus.write(dataset, tmp_path / "val_only")
        with pytest.raises(ConfigurationError):
            processor.train(manifest, tmp_path / "m.npz")

    def test_synthesize(self, processor, tmp_path):
        """Test synthesis through the processor writes a manifest."""
        path = processor.synthesize(tmp_path / "s", seed=2, clips_per_class=2, validation_per_class=1)
        assert path.exists()
        assert len(processor.load_records(path)) == 5 * 3

    def test_synthesize_bad_fraction(self, processor, tmp_path):
        """Test an invalid labeled fraction surfaces as a configuration error."""
        with pytest.raises(ConfigurationError):
            processor.synthesize(tmp_path / "s", labeled_fraction=2.0)
