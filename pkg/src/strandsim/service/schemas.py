"""Request/response models for the HTTP service.

Every request that launches work carries explicit input paths, an
output location and a seed; responses echo the artifact paths written.
Errors surface as {"kind": config|numeric|io, "message": ...} so thin
clients can map them to exit codes without parsing prose.
"""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field

from ..energy import EnergyConfig
from ..nn import TrainConfig
from ..xpbd import XpbdConfig


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class EnergyParams(_Model):
    """Mirror of the physics loss configuration."""

    k_stretch: float = Field(default=1.0e3, ge=0)
    k_bend_twist: float = Field(default=5.0e-2, ge=0)
    k_body_collision: float = Field(default=1.0e4, ge=0)
    k_self_collision: float = Field(default=1.0e2, ge=0)
    k_hair_style: float = Field(default=1.0e2, ge=0)
    k_adhesion: float = Field(default=1.0e1, ge=0)
    mass: float = Field(default=0.01, gt=0)
    gravity: tuple[float, float, float] = (0.0, -981.0, 0.0)
    collision_offset: float = Field(default=0.4, ge=0)
    sph_radius: float = Field(default=1.0, gt=0)
    s_max: float = 6.0
    r_neighbor: float = Field(default=0.25, gt=0)
    adhesion_max_neighbors: int = Field(default=5, ge=0)
    rho_rest_percentile: float = Field(default=100.0, gt=0, le=100)
    pt_mode: Literal["fast", "full"] = "fast"

    def to_config(self) -> EnergyConfig:
        cfg = EnergyConfig(**self.model_dump())
        cfg.validate()
        return cfg


class TrainParams(_Model):
    """Mirror of the training configuration (both stages)."""

    steps: int = Field(default=2000, ge=1)
    batch_size: int = Field(default=256, ge=1)
    samples_per_step: int = Field(default=4, ge=1)
    learning_rate: float = Field(default=1.0e-3, gt=0)
    final_lr: float | None = Field(default=None, gt=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    eps: float = Field(default=1.0e-8, gt=0)
    history: int = Field(default=30, ge=1)
    seed: int = 0
    beta_range: tuple[float, float] = (-2.0, 2.0)
    loss_mode: Literal["last-frame", "all-frames"] = "last-frame"
    mode: Literal["dynamic", "static"] = "dynamic"

    def to_config(self) -> TrainConfig:
        cfg = TrainConfig(**self.model_dump())
        cfg.validate()
        return cfg


class XpbdParams(_Model):
    """Mirror of the reference-simulator configuration."""

    substeps: int = Field(default=4, ge=1)
    iterations: int = Field(default=10, ge=1)
    damping: float = Field(default=0.02, ge=0, lt=1)
    k_stretch: float = Field(default=1.0e4, gt=0)
    k_bend: float = Field(default=5.0e-2, ge=0)
    collision_passes: int = Field(default=8, ge=1)

    def to_config(self) -> XpbdConfig:
        cfg = XpbdConfig(**self.model_dump())
        cfg.validate()
        return cfg


BETA_DEFAULT = (0.0, 0.0, 0.0, 0.0)


# ----------------------------------------------------------- generation


class GenGroomRequest(_Model):
    style: Literal["straight", "wavy", "curly", "ponytail"]
    strands: int = Field(ge=1)
    seed: int = 0
    n_vertices: int = Field(default=25, ge=3)
    out: str


class GenGroomResponse(_Model):
    path: str
    strands: int
    vertices: int
    locks: int
    manifest: str


class GenMotionRequest(_Model):
    kind: Literal["sway", "head_bob", "jump", "walk"]
    seconds: float = Field(gt=0)
    fps: float = Field(default=30.0, gt=0)
    amplitude: float = 0.25
    seed: int = 0
    out: str


class GenMotionResponse(_Model):
    path: str
    frames: int
    frame_time: float
    manifest: str


# ------------------------------------------------------------- training


class TrainEncoderRequest(_Model):
    grooms: list[str] = Field(min_length=1)
    energy: EnergyParams = EnergyParams()
    train: TrainParams = TrainParams()
    out: str


class TrainEncoderResponse(_Model):
    checkpoint: str
    steps: int
    final_rmse: float
    history_csv: str
    manifest: str


class TrainSimulatorRequest(_Model):
    grooms: list[str] = Field(min_length=1)
    clips: list[str] = Field(min_length=1)
    encoder: str
    energy: EnergyParams = EnergyParams()
    train: TrainParams = TrainParams()
    use_body: bool = True
    out: str


class TrainSimulatorResponse(_Model):
    checkpoint: str
    steps: int
    final_total: float
    history_csv: str
    manifest: str


# ------------------------------------------------------------ inference


class InferRequest(_Model):
    checkpoint: str
    groom: str
    clip: str
    out_dir: str
    strands: int | None = Field(default=None, ge=1)
    zero_lock: bool = False
    beta: tuple[float, float, float, float] = BETA_DEFAULT
    energy: EnergyParams = EnergyParams()
    seed: int = 0


class InferResponse(_Model):
    out_dir: str
    frames: int
    strands: int
    mean_ms: float
    timings_csv: str
    manifest: str


class XpbdSimulateRequest(_Model):
    groom: str
    clip: str
    out_dir: str
    config: XpbdParams = XpbdParams()
    energy: EnergyParams = EnergyParams()
    use_body: bool = True
    beta: tuple[float, float, float, float] = BETA_DEFAULT
    seed: int = 0


class XpbdSimulateResponse(_Model):
    out_dir: str
    frames: int
    strands: int
    mean_ms: float
    timings_csv: str
    manifest: str


# ----------------------------------------------------------- evaluation


class EvalRequest(_Model):
    candidate: str
    reference: str | None = None
    groom: str
    clip: str | None = None
    energy: EnergyParams = EnergyParams()
    use_body: bool = True
    beta: tuple[float, float, float, float] = BETA_DEFAULT
    out: str


class TrajectoryReport(_Model):
    penetration_total: int
    penetration_mean_depth: float
    edge_violation_max: float
    loss_total_mean: float
    lag: int | None


class EvalResponse(_Model):
    report: str
    frames: int
    rmse_mean: float | None
    candidate: TrajectoryReport
    reference: TrajectoryReport | None
    manifest: str


class BenchRequest(_Model):
    checkpoint: str | None = None
    strand_counts: list[int] = Field(min_length=1)
    methods: list[Literal["neural", "xpbd"]] = Field(min_length=1)
    frames: int = Field(default=120, ge=100)
    warmup: int = Field(default=5, ge=0)
    use_body: bool = True
    seed: int = 0
    out_dir: str


class BenchRow(_Model):
    strands: int
    method: str
    mean_ms: float
    median_ms: float
    frames: int


class BenchResponse(_Model):
    csv: str
    table: str
    rows: list[BenchRow]
    manifest: str


class HealthResponse(_Model):
    status: str
    version: str


class RunPaths(_Model):
    """File locations a command reads from and writes to."""

    grooms: list[str] = []
    clips: list[str] = []
    encoder: str | None = None
    checkpoint: str | None = None
    out: str | None = None


class RunConfig(_Model):
    """One JSON document that can drive any command.

    CLI flags override these values; the document is validated before
    any work starts.
    """

    paths: RunPaths = RunPaths()
    energy: EnergyParams = EnergyParams()
    train: TrainParams = TrainParams()
    xpbd: XpbdParams = XpbdParams()
    use_body: bool = True
    zero_lock: bool = False
    beta: tuple[float, float, float, float] = BETA_DEFAULT
    seed: int = 0
