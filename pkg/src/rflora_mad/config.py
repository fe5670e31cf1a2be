"""Run configuration and its plain-text ``key = value`` file format.

Keys are dotted ``section.field`` names, e.g. ``vit.depth = 6``; tuples are
comma-separated; ``#`` starts a comment. ``to_text`` writes every field, so a
saved file documents the full schema.
"""
import dataclasses
import typing
from dataclasses import dataclass, field

from .errors import ConfigurationError


@dataclass
class ViTConfig:
    image_size: int = 56
    patch_size: int = 14
    embed_dim: int = 64
    depth: int = 6
    heads: int = 4
    mlp_ratio: float = 4.0
    init_seed: int = 1234

    @property
    def grid(self):
        n = self.image_size // self.patch_size
        return (n, n)

    @property
    def n_tokens(self):
        return (self.image_size // self.patch_size) ** 2

    def validate(self):
        if self.image_size % self.patch_size:
            raise ConfigurationError("vit.image_size must be divisible by vit.patch_size")
        if self.embed_dim % self.heads:
            raise ConfigurationError("vit.embed_dim must be divisible by vit.heads")


@dataclass
class RFLoRAConfig:
    k: int = 3
    rank: int = 8
    alpha: float = 2.0  # 16 / rank
    projections: str = "qv"
    gate: bool = True
    gate_hidden: int = 16
    a_init_std: float = 0.0  # 0 -> 1/sqrt(embed_dim)

    def validate(self, depth):
        if not 0 <= self.k <= depth:
            raise ConfigurationError(f"lora.k={self.k} outside [0, depth={depth}]")
        if self.k and (not self.projections or set(self.projections) - set("qv")):
            raise ConfigurationError(f"lora.projections must be a non-empty subset of 'qv', got {self.projections!r}")
        if self.rank < 1 or self.alpha <= 0:
            raise ConfigurationError("lora.rank must be >= 1 and lora.alpha > 0")


@dataclass
class FusionConfig:
    residual: bool = True
    film: bool = True
    film_hidden: int = 128
    residual_patch: int = 0  # 0 -> same as the backbone patch size
    pool_queries: int = 4
    pool_heads: int = 8


@dataclass
class LossWeights:
    lambda_mil: float = 0.6
    lambda_tv: float = 0.05
    lambda_rca: float = 0.05
    epsilon: float = 0.1
    rho: float = 0.25
    rca_quantile: float = 0.5
    warmup_epochs: int = 5
    rca: bool = True
    default_margin: float = 0.5

    def validate(self):
        if min(self.lambda_mil, self.lambda_tv, self.lambda_rca) < 0:
            raise ConfigurationError("loss weights must be >= 0")
        if not 0 <= self.epsilon < 1:
            raise ConfigurationError("loss.epsilon must be in [0, 1)")
        if not 0 < self.rho <= 1:
            raise ConfigurationError("loss.rho must be in (0, 1]")
        if not 0 < self.rca_quantile < 1:
            raise ConfigurationError("loss.rca_quantile must be in (0, 1)")


@dataclass
class OptimConfig:
    lr: float = 2e-4
    weight_decay: float = 0.05
    grad_accum: int = 4
    batch_size: int = 8
    epochs: int = 40
    ema_tau: float = 0.999
    cosine: bool = False
    eval_ema: bool = True


@dataclass
class CurriculumConfig:
    p_noise_max: float = 0.3
    p_jpeg_max: float = 0.3
    snr_db_range: tuple = (20.0, 40.0)
    jpeg_quality_range: tuple = (50, 95)
    sigma_range: tuple = (0.6, 1.6)


@dataclass
class SynthConfig:
    image_size: int = 56
    seed: int = 0
    n_bona: int = 1000
    n_morph: int = 1000
    seam_strength: float = 0.12
    morph_types: tuple = ("seam", "hf_patch", "block")
    grain: float = 0.004


@dataclass
class DataConfig:
    # synthetic split sizes (per class); manifests override the synthetic data
    n_val: int = 0
    n_test: int = 300
    train_manifest: str = ""
    test_manifest: str = ""


@dataclass
class RunConfig:
    vit: ViTConfig = field(default_factory=ViTConfig)
    lora: RFLoRAConfig = field(default_factory=RFLoRAConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    optim: OptimConfig = field(default_factory=OptimConfig)
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    data: DataConfig = field(default_factory=DataConfig)
    seed: int = 0

    def validate(self):
        self.vit.validate()
        self.lora.validate(self.vit.depth)
        self.loss.validate()
        if self.synth.image_size != self.vit.image_size:
            raise ConfigurationError("synth.image_size must equal vit.image_size")
        if not self.fusion.residual and (self.fusion.film or self.loss.rca):
            raise ConfigurationError("fusion.film and loss.rca need the residual branch")
        rp = self.fusion.residual_patch or self.vit.patch_size
        if self.vit.image_size % rp:
            raise ConfigurationError("fusion.residual_patch must divide vit.image_size")
        return self

    @property
    def residual_patch(self):
        return self.fusion.residual_patch or self.vit.patch_size


SECTIONS = ("vit", "lora", "fusion", "loss", "optim", "curriculum", "synth", "data")
# sections whose values fix parameter shapes / forward semantics
MODEL_SECTIONS = ("vit", "lora", "fusion")


def desk_config(**overrides):
    """Desk-scale training preset used by the acceptance runs.

    The full-scale defaults (lr 2e-4, EMA 0.999, 40 epochs) assume far more
    optimizer steps than a few thousand synthetic images provide, so the step
    size is raised and the EMA horizon shortened.
    """
    cfg = RunConfig()
    cfg.optim.lr = 2e-3
    cfg.optim.ema_tau = 0.99
    cfg.optim.epochs = 8
    cfg.optim.weight_decay = 0.0
    cfg.loss.warmup_epochs = 2
    for key, value in overrides.items():
        set_value(cfg, key.replace("__", "."), value)
    return cfg


def _coerce(tp, raw):
    origin = typing.get_origin(tp)
    if tp is bool:
        if isinstance(raw, bool):
            return raw
        s = str(raw).strip().lower()
        if s in ("1", "true", "yes", "on"):
            return True
        if s in ("0", "false", "no", "off"):
            return False
        raise ConfigurationError(f"not a boolean: {raw!r}")
    if tp is int:
        return int(raw)
    if tp is float:
        return float(raw)
    if tp is str:
        return str(raw).strip()
    if tp is tuple or origin is tuple:
        if isinstance(raw, (tuple, list)):
            items = list(raw)
        else:
            items = [s.strip() for s in str(raw).split(",") if s.strip()]
        out = []
        for it in items:
            for conv in (int, float):
                try:
                    it = conv(it)
                    break
                except (TypeError, ValueError):
                    continue
            out.append(it)
        return tuple(out)
    raise ConfigurationError(f"unsupported config type {tp}")


def set_value(cfg, key, raw):
    parts = key.strip().split(".")
    target = cfg
    for part in parts[:-1]:
        if not hasattr(target, part):
            raise ConfigurationError(f"unknown config key {key!r}")
        target = getattr(target, part)
    name = parts[-1]
    hints = typing.get_type_hints(type(target))
    if name not in hints or not dataclasses.is_dataclass(target):
        raise ConfigurationError(f"unknown config key {key!r}")
    try:
        setattr(target, name, _coerce(hints[name], raw))
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"bad value for {key}: {raw!r} ({exc})") from exc


def _fmt(v):
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v)
    return str(v)


def to_text(cfg, sections=SECTIONS):
    lines = [f"seed = {cfg.seed}"] if tuple(sections) == SECTIONS else []
    for sec in sections:
        obj = getattr(cfg, sec)
        for f in dataclasses.fields(obj):
            lines.append(f"{sec}.{f.name} = {_fmt(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def from_text(text, base=None):
    cfg = base if base is not None else RunConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        set_value(cfg, key.strip(), value.strip())
    return cfg


def load(path, base=None):
    with open(path) as fh:
        return from_text(fh.read(), base)


def save(path, cfg):
    with open(path, "w") as fh:
        fh.write(to_text(cfg))


def model_signature(cfg):
    return to_text(cfg, MODEL_SECTIONS)
