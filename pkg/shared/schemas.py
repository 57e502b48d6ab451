from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

VARIANTS = ("full", "no-RAD", "no-FDRQ", "no-SAD", "observable")
REC_LOSS_MODES = ("softmax", "binary")
GCN_SHARING = ("separate", "shared")


class RunConfig(BaseModel):
    # model
    dim: int = Field(100, gt=0, description="Embedding dimension d")
    layers: int = Field(3, ge=1, description="GCN layer count L")
    tau: float = Field(0.3, gt=0, description="Contrastive temperature")
    gcn_sharing: str = Field("separate", description="'separate' or 'shared' GCN weights per channel")
    self_loops: bool = Field(False, description="Add self-loops to zero out-degree items")
    train_modality: bool = Field(True, description="Fine-tune E_mo from its feature initialisation")

    # diffusion
    steps: int = Field(32, ge=1, description="Diffusion steps T")
    reverse_steps: int = Field(16, ge=1, description="Corrupt/denoise steps T' used for generation")
    beta_min: float = Field(1e-4, gt=0, lt=1)
    beta_max: float = Field(0.1, gt=0, lt=1)

    # retrieval
    k: int = Field(3, ge=1, description="Retrieved neighbours per session")
    pool_size: int = Field(512, ge=1, description="Candidate pool size C")

    # objective
    gamma: float = Field(7.0, ge=0, description="Weight of L_d, L_r and L_s")
    delta: float = Field(0.05, ge=0, description="Weight of the cross-path contrastive loss")
    align_weight: float = Field(0.1, ge=0, description="Weight of the ID/modality alignment loss")
    rec_loss_mode: str = Field("softmax", description="'softmax' or 'binary'")

    # training
    lr: float = Field(0.001, gt=0)
    batch_size: int = Field(50, ge=1)
    epochs: int = Field(30, ge=1)
    seed: int = Field(0, ge=0)
    variant: str = Field("full", description=f"One of: {', '.join(VARIANTS)}")

    # data
    min_item_count: int = Field(5, ge=1, description="Items seen fewer times are filtered out")
    test_fraction: float = Field(0.1, gt=0, lt=1, description="Latest share of sessions held out")
    k_nn: int = Field(100, ge=1, description="Neighbour count for the SKNN baseline")

    @field_validator("variant")
    @classmethod
    def validate_variant(cls, v: str) -> str:
        if v not in VARIANTS:
            raise ValueError(f"Invalid variant. Allowed values: {', '.join(VARIANTS)}")
        return v

    @field_validator("rec_loss_mode")
    @classmethod
    def validate_rec_loss_mode(cls, v: str) -> str:
        if v not in REC_LOSS_MODES:
            raise ValueError(f"Invalid rec_loss_mode. Allowed values: {', '.join(REC_LOSS_MODES)}")
        return v

    @field_validator("gcn_sharing")
    @classmethod
    def validate_gcn_sharing(cls, v: str) -> str:
        if v not in GCN_SHARING:
            raise ValueError(f"Invalid gcn_sharing. Allowed values: {', '.join(GCN_SHARING)}")
        return v

    @model_validator(mode="after")
    def validate_ranges(self):
        if self.beta_min >= self.beta_max:
            raise ValueError("beta_min must be smaller than beta_max")
        if self.reverse_steps > self.steps:
            raise ValueError(f"reverse_steps must lie in 1..{self.steps}")
        if self.k > self.pool_size:
            raise ValueError("k must not exceed pool_size")
        return self


class StatsReport(BaseModel):
    items: int
    interactions: int
    sessions: int
    avg_length: float
    zero_filled_rows: int = 0
    seed: Optional[int] = None
    config: Dict[str, Any] = Field(default_factory=dict)


class EpochLosses(BaseModel):
    epoch: int
    rec: float = Field(0.0, description="L_e")
    diffusion: float = Field(0.0, description="L_d")
    retriever: float = Field(0.0, description="L_r")
    self_diffusion: float = Field(0.0, description="L_s")
    contrastive: float = Field(0.0, description="L_m")
    align: float = Field(0.0, description="Alignment loss")
    total: float = 0.0


class NeighborDistance(BaseModel):
    latent: float
    observable: float


class MetricsReport(BaseModel):
    variant: str
    seed: int
    epochs: int
    p_at: Dict[int, float]
    mrr_at: Dict[int, float]
    losses: List[EpochLosses] = Field(default_factory=list)
    neighbor_distance: Optional[NeighborDistance] = None
    config: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def validate_bounds(self):
        for name, table in (("p_at", self.p_at), ("mrr_at", self.mrr_at)):
            for k, value in table.items():
                if not 0.0 <= value <= 100.0:
                    raise ValueError(f"{name}[{k}] = {value} is outside [0, 100]")
        return self
