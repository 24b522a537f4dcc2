from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union
import logging

import numpy as np
from joblib import Parallel, delayed
from tqdm import tqdm

from models import EncodedDoc, EpochRecord, EvalResult, TrainConfig
from services.network import HuapaNetwork, combined_loss, forward_huapa, loss_components, predict
from services.optimizer import AdamState, adam_step, clip_gradients
from utils.autodiff import Tape, clear_grads
from utils.errors import DataError, NumericError
from utils.jsonl import RecordWriter


@dataclass
class TrainResult:
    epochs: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_dev_acc: float = -1.0
    best_state: Dict[str, np.ndarray] = field(default_factory=dict)


def _confusion(network: HuapaNetwork, docs: Sequence[EncodedDoc]) -> np.ndarray:
    counts = np.zeros((network.classes, network.classes), dtype=np.int64)
    for doc in docs:
        counts[doc.label, network.predict(doc)] += 1
    return counts


def evaluate(
    network: HuapaNetwork,
    docs: Sequence[EncodedDoc],
    split: Optional[str] = None,
    n_jobs: int = 1,
) -> EvalResult:
    """
    Accuracy and RMSE of the main head's predictions.

    With ``n_jobs > 1`` forward passes fan out over threads; each worker builds
    its own tapes and only reads parameters, and confusion counts are summed.
    """
    if not docs:
        raise DataError("cannot evaluate an empty dataset")
    if n_jobs <= 1:
        return EvalResult.from_confusion(_confusion(network, docs), split)
    shards = [docs[i::n_jobs] for i in range(n_jobs)]
    partials = Parallel(n_jobs=n_jobs, prefer="threads")(delayed(_confusion)(network, shard) for shard in shards)
    return EvalResult.from_confusion(sum(partials), split)


class TrainerService:
    def __init__(self, config: TrainConfig):
        """
        Initialize the trainer.

        Args:
            config (TrainConfig): Optimizer, loss weights, batching and stopping settings
        """
        self.logger = logging.getLogger(self.__class__.__name__)
        self.config = config

    def evaluate(self, network: HuapaNetwork, docs: Sequence[EncodedDoc], split: Optional[str] = None) -> EvalResult:
        return evaluate(network, docs, split, n_jobs=self.config.eval_jobs)

    def train(
        self,
        network: HuapaNetwork,
        train_docs: Sequence[EncodedDoc],
        dev_docs: Sequence[EncodedDoc],
        log_path: Optional[Union[str, Path]] = None,
    ) -> TrainResult:
        """
        Minimize the weighted loss with Adam and keep the parameters with the best dev accuracy.

        Training documents are reshuffled every epoch with the config seed.
        Gradients are averaged over each batch before one optimizer step.
        Training stops once ``patience`` epochs pass without a dev accuracy
        improvement, or at ``max_epochs``. On return the network holds the
        best parameters.

        Args:
            network (HuapaNetwork): Network to train in place
            train_docs (Sequence[EncodedDoc]): Training documents
            dev_docs (Sequence[EncodedDoc]): Validation documents for model selection
            log_path (Optional[Union[str, Path]]): Epoch log destination (JSON lines)

        Returns:
            TrainResult: Epoch records and best epoch bookkeeping
        """
        if not train_docs or not dev_docs:
            raise DataError("training and dev sets must be non-empty")
        config = self.config
        rng = np.random.default_rng(config.seed)
        registry = network.params.trainable()
        state = AdamState.create(
            {name: p.data for name, p in registry.items()},
            lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps,
        )
        result = TrainResult()
        writer = RecordWriter(log_path) if log_path is not None else None
        self.logger.info(
            f"Training {network.variant.value} on {len(train_docs)} documents, "
            f"lambdas={config.lambdas}, batch size {config.batch_size}"
        )

        try:
            for epoch in range(1, config.max_epochs + 1):
                totals = self._run_epoch(network, train_docs, state, registry, rng, epoch)
                dev = self.evaluate(network, dev_docs, split="dev")
                if dev.accuracy > result.best_dev_acc:
                    result.best_epoch = epoch
                    result.best_dev_acc = dev.accuracy
                    result.best_state = network.params.snapshot()

                record = EpochRecord(
                    epoch=epoch,
                    loss=totals[0],
                    loss1=totals[1],
                    loss2=totals[2],
                    loss3=totals[3],
                    dev_acc=dev.accuracy,
                    dev_rmse=dev.rmse,
                    best_epoch=result.best_epoch,
                    best_dev_acc=result.best_dev_acc,
                )
                result.epochs.append(record)
                if writer is not None:
                    writer.write(record)
                self.logger.info(
                    f"Epoch {epoch}: loss {record.loss:.4f}, dev acc {dev.accuracy:.3f}, dev rmse {dev.rmse:.3f}"
                )

                if epoch - result.best_epoch >= config.patience:
                    self.logger.info(f"Stopping after epoch {epoch}: best dev acc {result.best_dev_acc:.3f} at epoch {result.best_epoch}")
                    break
        finally:
            if writer is not None:
                writer.close()

        network.params.restore(result.best_state)
        return result

    def _run_epoch(self, network, train_docs, state, registry, rng, epoch) -> List[float]:
        """One pass over shuffled training data; returns mean [loss, loss1, loss2, loss3] per document."""
        config = self.config
        order = rng.permutation(len(train_docs))
        sums = np.zeros(4)
        starts = range(0, len(order), config.batch_size)
        for batch_no, start in enumerate(tqdm(starts, desc=f"epoch {epoch}", disable=not config.progress), start=1):
            batch = [train_docs[i] for i in order[start:start + config.batch_size]]
            clear_grads(list(registry.values()))
            for doc in batch:
                tape = Tape()
                out = forward_huapa(tape, network.params, doc)
                components = loss_components(tape, out, doc.label)
                loss = combined_loss(tape, out, doc.label, config.lambdas, components)
                if not np.isfinite(loss.item()):
                    raise NumericError(f"non-finite loss at epoch {epoch}, batch {batch_no}")
                tape.backward(tape.scale(loss, 1.0 / len(batch)))
                sums += [loss.item()] + [c.item() if c is not None else 0.0 for c in components]

            grads = {name: p.grad for name, p in registry.items()}
            clip_gradients(grads, config.clip_norm)
            adam_step(state, {name: p.data for name, p in registry.items()}, grads)
        return (sums / len(train_docs)).tolist()
