"""
Model checkpoints as JSON documents.

A checkpoint stores the shared log-hyperparameters, the kernel name, the
partition and (optionally) the classifier parameters. Training data is not
stored: loading needs the same training Dataset, and every expert's Cholesky
factor is recomputed from it.
"""
import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from app import __version__
from app.data.dataset import Dataset
from app.exceptions import DatasetError
from app.gp.expert import DistributedGP, SharedHyperparams, fit_fixed
from app.gp.kernel import get_kernel
from app.gp.partitioner import PartitionModel
from app.models import PartitionMethod
from app.selection.classifier import ClassifierModel

logger = logging.getLogger('dgpselect')


class CheckpointDocument(BaseModel):
    """Serialized DistributedGP plus optional classifier."""
    version: str = __version__
    kernel: str
    log_signal_variance: float
    log_lengthscales: List[float]
    log_noise_variance: float
    partition_method: PartitionMethod
    partition_seed: int
    assignments: List[int]
    centroids: List[List[float]]
    expert_indices: List[List[int]] = Field(default_factory=list)
    n_train: int
    final_nlml: Optional[float] = None
    classifier: Optional[Dict] = None


def to_document(model: DistributedGP, classifier: Optional[ClassifierModel] = None) -> CheckpointDocument:
    hyp = model.hyperparams
    return CheckpointDocument(
        kernel=model.kernel.name,
        log_signal_variance=hyp.kernel.log_signal_variance,
        log_lengthscales=hyp.kernel.log_lengthscales.tolist(),
        log_noise_variance=hyp.log_noise_variance,
        partition_method=model.partition.method,
        partition_seed=model.partition.seed,
        assignments=model.partition.assignments.tolist(),
        centroids=model.partition.centroids.tolist(),
        expert_indices=[e.point_indices.tolist() for e in model.experts],
        n_train=model.train.n,
        final_nlml=model.final_nlml if np.isfinite(model.final_nlml) else None,
        classifier=classifier.to_payload() if classifier is not None else None,
    )


def save_checkpoint(path: Union[str, Path], model: DistributedGP,
                    classifier: Optional[ClassifierModel] = None) -> Path:
    """Write the checkpoint JSON; parent directories are created."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_document(model, classifier).model_dump_json(indent=2), encoding="utf-8")
    logger.info("Checkpoint written: %s", path)
    return path


def load_checkpoint(path: Union[str, Path], train: Dataset) -> Tuple[DistributedGP, Optional[ClassifierModel]]:
    """
    Rebuild a DistributedGP (and classifier) from a checkpoint.

    Raises:
        FileNotFoundError: checkpoint missing
        DatasetError: the training data does not match the checkpoint
        pydantic.ValidationError: malformed document
    """
    path = Path(path)
    document = CheckpointDocument.model_validate_json(path.read_text(encoding="utf-8"))
    if document.n_train != train.n or len(document.assignments) != train.n:
        raise DatasetError(f"checkpoint was fitted on {document.n_train} training rows, got {train.n}")

    partition = PartitionModel(
        assignments=np.array(document.assignments, dtype=int),
        centroids=np.array(document.centroids, dtype=float),
        method=document.partition_method,
        seed=document.partition_seed,
    )
    if document.expert_indices and any(
        not np.array_equal(stored, current)
        for stored, current in zip(document.expert_indices, partition.index_sets())
    ):
        raise DatasetError("checkpoint expert index sets disagree with its assignments")

    hyperparams = SharedHyperparams.from_vector(np.array(
        [document.log_signal_variance, *document.log_lengthscales, document.log_noise_variance]
    ))
    model = fit_fixed(train, partition, hyperparams, get_kernel(document.kernel))
    classifier = ClassifierModel.from_payload(document.classifier) if document.classifier else None
    logger.info("Checkpoint loaded: %s (%d experts)", path, model.n_experts)
    return model, classifier
