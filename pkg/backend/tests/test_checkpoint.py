"""
Tests for checkpoint save/load.
"""
import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from app.aggregation.batch import aggregate_batch
from app.data.dataset import make_synthetic
from app.exceptions import DatasetError
from app.models import AggregationConfig
from app.selection.classifier import forward_batch, init_classifier
from app.storage.checkpoint import load_checkpoint, save_checkpoint


class TestCheckpoint:
    """Tests for save_checkpoint() and load_checkpoint()."""

    def test_predictions_survive_reload(self, tmp_path, small_model, test_inputs):
        classifier = init_classifier(2, 3, (4,), seed=0)
        path = save_checkpoint(tmp_path / "nested" / "model.json", small_model, classifier)
        model, restored = load_checkpoint(path, small_model.train)

        config = AggregationConfig(method="npae")
        before = aggregate_batch(small_model, config, test_inputs)
        after = aggregate_batch(model, config, test_inputs)
        assert_allclose(after.mean, before.mean, atol=1e-10)
        assert_allclose(after.variance, before.variance, atol=1e-10)
        assert_allclose(forward_batch(restored, test_inputs), forward_batch(classifier, test_inputs))

    def test_document_contents(self, tmp_path, small_model):
        path = save_checkpoint(tmp_path / "model.json", small_model)
        document = json.loads(path.read_text(encoding="utf-8"))
        assert document["kernel"] == "squared_exponential_ard"
        assert len(document["expert_indices"]) == 3
        assert document["classifier"] is None

    def test_without_classifier(self, tmp_path, small_model):
        path = save_checkpoint(tmp_path / "model.json", small_model)
        _, classifier = load_checkpoint(path, small_model.train)
        assert classifier is None

    def test_mismatched_training_data(self, tmp_path, small_model):
        path = save_checkpoint(tmp_path / "model.json", small_model)
        with pytest.raises(DatasetError):
            load_checkpoint(path, make_synthetic(n=30, d=2, seed=0))

    def test_missing_file(self, tmp_path, small_model):
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmp_path / "absent.json", small_model.train)
