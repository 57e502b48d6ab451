"""
The assembled recommender: graph-enhanced item tables, attention session
encoders, neighbour retrieval, the two conditional denoisers and the fused
next-item scorer, with the ablation switches that disable parts of it.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from model.diffusion import (
    Denoiser,
    LatentNeighbor,
    build_schedule,
    contrastive_loss,
    diffusion_loss,
    draw_noise,
    make_condition,
    per_neighbor_losses,
    reverse_generate,
)
from model.encoder import AttentionParams, EmbeddingTables, align_loss, encode_batch
from model.graph import CoGraph, GcnStack, gcn_forward
from model.losses import LossWeights, rec_loss, total_loss
from model.retriever import RetrievedNeighbors, ScoreNet, SessionBank, build_bank, feedback_loss, retrieve_topk
from shared import tensor as T
from shared.config import rng_for
from shared.errors import CheckpointError
from shared.schemas import VARIANTS, RunConfig
from shared.tensor import Parameter, Tensor, no_grad

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class VariantFlags:
    name: str
    retrieval: bool = True
    feedback: bool = True
    modality: bool = True
    diffusion: bool = True

    @property
    def observable(self) -> bool:
        return not self.diffusion


_VARIANT_FLAGS = {
    "full": VariantFlags("full"),
    "no-RAD": VariantFlags("no-RAD", retrieval=False, feedback=False, modality=False),
    "no-FDRQ": VariantFlags("no-FDRQ", feedback=False),
    "no-SAD": VariantFlags("no-SAD", modality=False),
    "observable": VariantFlags("observable", feedback=False, modality=False, diffusion=False),
}


def ablate(variant: str) -> VariantFlags:
    """Component switches for a named model variant."""
    flags = _VARIANT_FLAGS.get(variant)
    if flags is None:
        raise ValueError(f"Unknown variant '{variant}'. Allowed values: {', '.join(VARIANTS)}")
    return flags


def fuse(s_id: Tensor, s_n0: Tensor, rho: Tensor) -> Tensor:
    """rho * s_id + (1 - rho) * s_N0."""
    return T.mul(rho, s_id) + T.mul(1.0 - rho, s_n0)


def score_items(s_f: Tensor, item_embeddings: Tensor) -> Tensor:
    """Dot product of each session row with every item row."""
    if s_f.ndim == 1:
        s_f = T.reshape(s_f, (1, s_f.shape[0]))
    return T.matmul(s_f, T.transpose(item_embeddings))


@dataclass
class BatchOutput:
    scores: Tensor
    s_id: Tensor
    s_mo: Optional[Tensor] = None
    neighbors: Optional[RetrievedNeighbors] = None
    latent: Optional[LatentNeighbor] = None
    s_n0: Optional[Tensor] = None
    terms: Dict[str, Tensor] = field(default_factory=dict)
    total: Optional[Tensor] = None


class DiffSBR:
    def __init__(self, config: RunConfig, graph: CoGraph, features: np.ndarray):
        self.config = config
        self.graph = graph
        self.flags = ablate(config.variant)
        self.schedule = build_schedule(config.steps, config.beta_min, config.beta_max)
        self.loss_weights = LossWeights(config.gamma, config.delta, config.align_weight)

        d = config.dim
        rng = rng_for(config.seed, "init")
        self.tables = EmbeddingTables.create(graph.n, d, features, rng, config.train_modality)
        self.gcn_id = GcnStack(d, config.layers, rng, "gcn_id")
        if config.gcn_sharing == "shared":
            self.gcn_mo = self.gcn_id
        else:
            self.gcn_mo = GcnStack(d, config.layers, rng, "gcn_mo")
        self.attn_id = AttentionParams.create(d, rng, "attn_id")
        self.attn_mo = AttentionParams.create(d, rng, "attn_mo")
        self.score_net = ScoreNet(d, rng)
        self.f_theta = Denoiser(d, rng, "f_theta")
        self.f_psi = Denoiser(d, rng, "f_psi")
        # sigmoid(0) = 0.5
        self.rho_raw = Parameter(np.zeros(()), name="rho")
        self._freeze_unused()

    # ------------------------
    # Parameters
    # ------------------------

    def parameters(self) -> Dict[str, Parameter]:
        params: Dict[str, Parameter] = {"E_id": self.tables.id, "E_mo": self.tables.mo}
        parts = (self.gcn_id, self.gcn_mo, self.attn_id, self.attn_mo, self.score_net, self.f_theta, self.f_psi)
        for part in parts:
            params.update(part.parameters())
        params["rho"] = self.rho_raw
        return params

    def trainable_parameters(self) -> Dict[str, Parameter]:
        return {name: p for name, p in self.parameters().items() if p.trainable}

    def _freeze_unused(self) -> None:
        flags = self.flags
        frozen = []
        if not flags.modality:
            frozen += [self.tables.mo, *self.attn_mo.parameters().values(), *self.f_psi.parameters().values()]
            if self.gcn_mo is not self.gcn_id:
                frozen += list(self.gcn_mo.parameters().values())
        if not (flags.feedback or flags.observable):
            frozen += list(self.score_net.parameters().values())
        if not flags.diffusion:
            frozen += list(self.f_theta.parameters().values())
        for p in frozen:
            p.freeze()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.parameters().items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = sorted(set(params) - set(state))
        if missing:
            raise CheckpointError(f"checkpoint lacks parameters: {', '.join(missing)}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise CheckpointError(f"{name}: checkpoint shape {state[name].shape} != model shape {p.shape}")
            p.data = np.array(state[name], dtype=np.float64)

    def rho(self) -> Tensor:
        return T.sigmoid(self.rho_raw)

    # ------------------------
    # Representations
    # ------------------------

    def item_embeddings(self, channel: str) -> Tensor:
        if channel == "id":
            return gcn_forward(self.tables.id, self.graph, self.gcn_id, self.config.self_loops)
        if channel == "mo":
            return gcn_forward(self.tables.mo, self.graph, self.gcn_mo, self.config.self_loops)
        raise ValueError(f"Unknown channel '{channel}'. Allowed values: id, mo")

    def encode_bank(self, sessions: Sequence[Sequence[int]], epoch: int = 0) -> SessionBank:
        """Snapshot of the ID representation of every full training session."""
        step = self.config.batch_size
        with no_grad():
            X = self.item_embeddings("id")
            reps = [
                encode_batch(sessions[i : i + step], X, self.attn_id).data
                for i in range(0, len(sessions), step)
            ]
        logger.debug(f"Refreshed session bank for epoch {epoch} with {len(sessions)} rows")
        return build_bank(np.concatenate(reps, axis=0), epoch)

    # ------------------------
    # Forward
    # ------------------------

    def forward(
        self,
        prefixes: Sequence[Sequence[int]],
        targets: Optional[np.ndarray] = None,
        bank: Optional[SessionBank] = None,
        retrieval_rng: Optional[np.random.Generator] = None,
        noise_rng: Optional[np.random.Generator] = None,
        exclude: Optional[np.ndarray] = None,
    ) -> BatchOutput:
        """
        One batch through the model. With ``noise_rng`` the diffusion losses are
        drawn and generation corrupts with sampled noise. Without it
        generation is deterministic and only L_e is computed.
        """
        cfg, flags = self.config, self.flags
        B, d = len(prefixes), cfg.dim

        X_id = self.item_embeddings("id")
        out = BatchOutput(scores=None, s_id=encode_batch(prefixes, X_id, self.attn_id))  # type: ignore[arg-type]
        s_id = out.s_id
        if flags.modality:
            out.s_mo = encode_batch(prefixes, self.item_embeddings("mo"), self.attn_mo)

        if flags.retrieval:
            if bank is None or retrieval_rng is None:
                raise ValueError(f"variant {flags.name} needs a session bank and a retrieval rng")
            out.neighbors = retrieve_topk(
                s_id, bank, self.score_net, cfg.k, cfg.pool_size, retrieval_rng, exclude
            )
            condition = make_condition(out.neighbors)
        else:
            condition = Tensor(np.zeros((B, d)))

        if flags.diffusion:
            if noise_rng is not None:
                self._diffusion_terms(out, condition, noise_rng)
            out.latent = reverse_generate(
                self.f_theta, s_id, condition, self.schedule, cfg.reverse_steps, noise_rng
            )
            out.s_n0 = out.latent.x0
        else:
            omega = T.reshape(out.neighbors.weights, (B, cfg.k, 1))
            out.s_n0 = T.sum(T.mul(omega, Tensor(out.neighbors.rows)), axis=1)

        out.scores = score_items(fuse(s_id, out.s_n0, self.rho()), X_id)
        if targets is not None:
            out.terms["rec"] = rec_loss(out.scores, targets, cfg.rec_loss_mode)
            out.total = total_loss(
                out.terms["rec"],
                self.loss_weights,
                retriever=out.terms.get("retriever"),
                self_diffusion=out.terms.get("self_diffusion"),
                contrastive=out.terms.get("contrastive"),
                align=out.terms.get("align"),
                diffusion=out.terms.get("diffusion"),
            )
        return out

    def _diffusion_terms(self, out: BatchOutput, condition: Tensor, rng: np.random.Generator) -> None:
        flags, cfg = self.flags, self.config
        draw = draw_noise(out.s_id.shape[0], cfg.dim, self.schedule, rng)
        main = diffusion_loss(self.f_theta, out.s_id, condition, self.schedule, draw)
        out.terms["diffusion"] = main.loss
        if flags.feedback:
            losses = per_neighbor_losses(self.f_theta, out.s_id, out.neighbors, self.schedule, draw)
            out.terms["retriever"] = feedback_loss(out.neighbors.weights, losses)
        if flags.modality:
            side = diffusion_loss(self.f_psi, out.s_id, out.s_mo, self.schedule, draw)
            out.terms["self_diffusion"] = side.loss
            out.terms["contrastive"] = contrastive_loss(main.prediction, side.prediction, cfg.tau)
            out.terms["align"] = align_loss(out.s_id, out.s_mo, cfg.tau)

    def infer(
        self,
        prefixes: Sequence[Sequence[int]],
        bank: Optional[SessionBank],
        retrieval_rng: Optional[np.random.Generator],
    ) -> BatchOutput:
        """Deterministic-generation forward pass without a tape."""
        with no_grad():
            return self.forward(prefixes, bank=bank, retrieval_rng=retrieval_rng)
