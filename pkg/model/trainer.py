# model/trainer.py
import logging
from typing import Dict, List, Optional

import numpy as np

from ingest.dataset import SessionDataset
from ingest.sessions import PrefixTarget
from model.diffsbr import DiffSBR
from model.retriever import SessionBank
from shared.config import rng_for
from shared.optim import Adam
from shared.schemas import EpochLosses
from shared.tensor import backward

logger = logging.getLogger(__name__)

LOSS_TERMS = ("rec", "diffusion", "retriever", "self_diffusion", "contrastive", "align")


def batch_slices(count: int, batch_size: int, rng: np.random.Generator) -> List[np.ndarray]:
    """Seeded permutation of ``range(count)`` cut into batches; the last one may be partial."""
    order = rng.permutation(count)
    return [order[i : i + batch_size] for i in range(0, count, batch_size)]


class Trainer:
    """
    Mini-batch training of a DiffSBR model on the augmented training pairs.

    The shuffle, noise and retrieval streams live as long as the trainer, so
    consecutive epochs continue the same random sequences.
    """

    def __init__(self, model: DiffSBR, dataset: SessionDataset):
        cfg = model.config
        self.model = model
        self.dataset = dataset
        self.pairs: List[PrefixTarget] = dataset.train_pairs()
        self.train_sessions = [s.items for s in dataset.train]
        self.optimizer = Adam(model.trainable_parameters(), lr=cfg.lr)
        self.shuffle_rng = rng_for(cfg.seed, "shuffle")
        self.noise_rng = rng_for(cfg.seed, "noise")
        self.retrieval_rng = rng_for(cfg.seed, "retrieval")
        self.bank: Optional[SessionBank] = None
        self.history: List[EpochLosses] = []

    def refresh_bank(self, epoch: int) -> Optional[SessionBank]:
        if self.model.flags.retrieval:
            self.bank = self.model.encode_bank(self.train_sessions, epoch)
        return self.bank

    def train_step(self, batch: List[PrefixTarget]) -> Dict[str, float]:
        out = self.model.forward(
            [p.prefix for p in batch],
            targets=np.array([p.target for p in batch]),
            bank=self.bank,
            retrieval_rng=self.retrieval_rng,
            noise_rng=self.noise_rng,
            exclude=np.array([p.source for p in batch]),
        )
        values = {name: term.item() for name, term in out.terms.items()}
        values["total"] = out.total.item()
        backward(out.total)
        self.optimizer.step()
        return values

    def train_epoch(self, epoch: int) -> EpochLosses:
        self.refresh_bank(epoch)
        sums: Dict[str, float] = dict.fromkeys((*LOSS_TERMS, "total"), 0.0)
        batches = batch_slices(len(self.pairs), self.model.config.batch_size, self.shuffle_rng)
        for idx in batches:
            values = self.train_step([self.pairs[i] for i in idx])
            for name, value in values.items():
                sums[name] += value

        losses = EpochLosses(epoch=epoch, **{name: total / len(batches) for name, total in sums.items()})
        logger.info(
            f"Epoch {epoch}: total={losses.total:.4f} rec={losses.rec:.4f} "
            f"diffusion={losses.diffusion:.4f} retriever={losses.retriever:.4f} "
            f"self_diffusion={losses.self_diffusion:.4f} contrastive={losses.contrastive:.4f} "
            f"align={losses.align:.4f}"
        )
        self.history.append(losses)
        return losses

    def fit(self, epochs: Optional[int] = None) -> List[EpochLosses]:
        epochs = epochs or self.model.config.epochs
        start = len(self.history)
        for epoch in range(start + 1, start + epochs + 1):
            self.train_epoch(epoch)
        # evaluation retrieves from the final parameters
        self.refresh_bank(start + epochs)
        return self.history
