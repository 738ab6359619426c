"""The three classifier variants over encoder stacks.

vit: non-overlapping patch embedding, learnable class token, positional
     embedding, classification from the class-token row.
lvt: patch embedding and positional embedding, but pooling by a learned
     softmax weighting over tokens (no class token).
lct: two convolution + pooling stages as the tokenizer, same learned pooling.

All variants share the encoder stack and a two-layer ReLU head.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .attention import (EncoderBlockWeights, NormWeights, encoder_stack,
                        init_encoder_block)
from .exceptions import ConfigError
from .optim import Parameter
from .tensor import (Tensor, add, broadcast_to, concat, conv2d_valid, dense,
                     getitem, matmul, maxpool_same, relu, reshape, softmax,
                     transpose)
from .util import trunc_normal

VARIANTS = ("vit", "lvt", "lct")


@dataclass
class ModelConfig:
    variant: str
    encoder_layers: int = 1
    heads: int = 2
    n_channels: int = 18
    segment_samples: int = 256
    d_mlp: int | None = None
    dropout_rate: float = 0.1
    patch_h: int = 18
    patch_w: int = 18
    conv_filters: tuple[int, int] = (32, 128)
    projection_dim: int = 529
    use_positional_embedding: bool = True
    num_classes: int = 2
    seed: int = 0

    def __post_init__(self):
        self.conv_filters = tuple(self.conv_filters)
        self.validate()

    @property
    def d_model(self) -> int:
        if self.variant in ("vit", "lvt"):
            return self.projection_dim
        return self.conv_filters[-1]

    @property
    def mlp_width(self) -> int:
        return 2 * self.d_model if self.d_mlp is None else self.d_mlp

    @property
    def n_tokens(self) -> int:
        """Sequence length the encoder sees (class token included for vit)."""
        if self.variant in ("vit", "lvt"):
            grid_h = self.n_channels // self.patch_h
            grid_w = self.segment_samples // self.patch_w
            n = grid_h * grid_w
            return n + 1 if self.variant == "vit" else n
        h, w, _ = conv_stage_shapes(self.n_channels, self.segment_samples, self.conv_filters)[-1]
        return h * w

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {'/'.join(VARIANTS)}, got {self.variant!r}")
        if self.encoder_layers < 1:
            raise ConfigError(f"encoder_layers must be >= 1, got {self.encoder_layers}")
        if self.heads < 1:
            raise ConfigError(f"heads must be >= 1, got {self.heads}")
        if self.n_channels < 1 or self.segment_samples < 1:
            raise ConfigError("n_channels and segment_samples must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.num_classes != 2:
            raise ConfigError(f"only binary classification is supported, got {self.num_classes} classes")
        if self.d_model // self.heads < 1:
            raise ConfigError(f"d_model {self.d_model} cannot be split into {self.heads} heads")
        if self.d_mlp is not None and self.d_mlp < self.d_model:
            raise ConfigError(f"d_mlp {self.d_mlp} must be >= d_model {self.d_model}")
        if self.variant in ("vit", "lvt"):
            if self.projection_dim < 1:
                raise ConfigError("projection_dim must be positive")
            if self.n_channels % self.patch_h != 0:
                raise ConfigError(f"n_channels {self.n_channels} not divisible by "
                                  f"patch height {self.patch_h}")
            if self.segment_samples < self.patch_w:
                raise ConfigError(f"segment of {self.segment_samples} samples is shorter "
                                  f"than one {self.patch_w}-wide patch")
        else:
            if len(self.conv_filters) != 2 or any(c < 1 for c in self.conv_filters):
                raise ConfigError(f"conv_filters must be two positive counts, got {self.conv_filters}")
            conv_stage_shapes(self.n_channels, self.segment_samples, self.conv_filters)


def conv_stage_shapes(h: int, w: int, filters: tuple[int, int]) -> list[tuple[int, int, int]]:
    """Spatial shape after each conv(3x3 valid) and maxpool(3x3, stride 2, same).

    Returns [(h, w, c) after conv1, after pool1, after conv2, after pool2].
    """
    shapes = []
    for c_out in filters:
        h, w = h - 2, w - 2
        if h < 1 or w < 1:
            raise ConfigError(f"input collapses to {h}x{w} inside the convolution tokenizer; "
                              f"segment too short for two 3x3 valid stages")
        shapes.append((h, w, c_out))
        h, w = -(-h // 2), -(-w // 2)
        shapes.append((h, w, c_out))
    return shapes


@dataclass
class Model:
    config: ModelConfig
    dtype: np.dtype
    patch_proj_w: Parameter | None = None
    patch_proj_b: Parameter | None = None
    conv1_w: Parameter | None = None
    conv1_b: Parameter | None = None
    conv2_w: Parameter | None = None
    conv2_b: Parameter | None = None
    class_token: Parameter | None = None
    pos_embed: Parameter | None = None
    blocks: list[EncoderBlockWeights] = field(default_factory=list)
    final_norm: NormWeights | None = None
    seqpool_g: Parameter | None = None
    head_w1: Parameter | None = None
    head_b1: Parameter | None = None
    head_w2: Parameter | None = None
    head_b2: Parameter | None = None

    def parameters(self) -> list[Parameter]:
        """All trainable parameters in a fixed, creation-stable order."""
        out: list[Parameter] = []
        for p in (self.patch_proj_w, self.patch_proj_b, self.conv1_w, self.conv1_b,
                  self.conv2_w, self.conv2_b, self.class_token, self.pos_embed):
            if p is not None:
                out.append(p)
        for block in self.blocks:
            out.extend(block.parameters())
        out.extend(self.final_norm.parameters())
        if self.seqpool_g is not None:
            out.append(self.seqpool_g)
        out.extend([self.head_w1, self.head_b1, self.head_w2, self.head_b2])
        return out

    @property
    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())


def build_model(config: ModelConfig, seed: int | None = None, dtype=np.float64) -> Model:
    """Construct and initialize a model; identical seeds give identical weights.

    Weights use truncated normal (std 0.02, clipped at two deviations)
    except the conv filter banks, which take He-scaled std sqrt(2/fan_in);
    biases and norm offsets are zeros, norm scales ones.  Parameter creation
    order is fixed so the rng stream, and therefore every weight, is a pure
    function of (config, seed).
    """
    config.validate()
    dtype = np.dtype(dtype)
    rng = np.random.default_rng(config.seed if seed is None else seed)
    d = config.d_model
    model = Model(config=config, dtype=dtype)

    if config.variant in ("vit", "lvt"):
        flat = config.patch_h * config.patch_w
        model.patch_proj_w = Parameter(trunc_normal(rng, (flat, d), dtype=dtype), name="patch.w")
        model.patch_proj_b = Parameter(np.zeros(d, dtype=dtype), name="patch.b")
    else:
        # He scaling for the filter banks; at std 0.02 the two conv stages
        # shrink tokens to ~1e-2, the positional embedding drowns them, and
        # training stalls near chance for some seeds.
        c1, c2 = config.conv_filters
        model.conv1_w = Parameter(trunc_normal(rng, (3, 3, 1, c1),
                                               std=float(np.sqrt(2.0 / 9.0)),
                                               dtype=dtype), name="conv1.w")
        model.conv1_b = Parameter(np.zeros(c1, dtype=dtype), name="conv1.b")
        model.conv2_w = Parameter(trunc_normal(rng, (3, 3, c1, c2),
                                               std=float(np.sqrt(2.0 / (9.0 * c1))),
                                               dtype=dtype), name="conv2.w")
        model.conv2_b = Parameter(np.zeros(c2, dtype=dtype), name="conv2.b")

    if config.variant == "vit":
        model.class_token = Parameter(trunc_normal(rng, (1, d), dtype=dtype), name="class_token")
    if config.use_positional_embedding:
        model.pos_embed = Parameter(trunc_normal(rng, (config.n_tokens, d), dtype=dtype),
                                    name="pos_embed")

    model.blocks = [
        init_encoder_block(d, config.heads, config.mlp_width, config.dropout_rate,
                           rng, dtype, prefix=f"enc{i}")
        for i in range(config.encoder_layers)
    ]
    model.final_norm = NormWeights(
        gamma=Parameter(np.ones(d, dtype=dtype), name="final_norm.gamma"),
        beta=Parameter(np.zeros(d, dtype=dtype), name="final_norm.beta"),
    )
    if config.variant != "vit":
        model.seqpool_g = Parameter(trunc_normal(rng, (d, 1), dtype=dtype), name="seqpool.g")

    model.head_w1 = Parameter(trunc_normal(rng, (d, d), dtype=dtype), name="head.w1")
    model.head_b1 = Parameter(np.zeros(d, dtype=dtype), name="head.b1")
    model.head_w2 = Parameter(trunc_normal(rng, (d, config.num_classes), dtype=dtype), name="head.w2")
    model.head_b2 = Parameter(np.zeros(config.num_classes, dtype=dtype), name="head.b2")
    return model


# --- forward pieces ---------------------------------------------------------

def patch_embed(x, patch_h: int, patch_w: int, proj_w, proj_b=None) -> Tensor:
    """Cut [.., N, L] into non-overlapping patches, flatten row-major, project.

    Patches are ordered row-major over the grid; each patch flattens row-major
    too, so token t, feature f index back to an exact input coordinate.
    N must divide by patch_h and L by patch_w (truncate beforehand).
    """
    squeeze = x.ndim == 2
    xb = reshape(x, (1,) + tuple(x.shape)) if squeeze else x
    b, n, l = xb.shape
    if n % patch_h != 0:
        raise ConfigError(f"{n} rows not divisible by patch height {patch_h}")
    if l % patch_w != 0:
        raise ConfigError(f"{l} columns not divisible by patch width {patch_w}")
    grid_h, grid_w = n // patch_h, l // patch_w
    t = reshape(xb, (b, grid_h, patch_h, grid_w, patch_w))
    t = transpose(t, (0, 1, 3, 2, 4))
    t = reshape(t, (b, grid_h * grid_w, patch_h * patch_w))
    out = dense(t, proj_w, proj_b)
    return reshape(out, tuple(out.shape[1:])) if squeeze else out


def add_class_token_and_pe(tokens, class_token=None, pos_embed=None) -> Tensor:
    """Optionally prepend a learned token row, then add positional embeddings."""
    t = tokens
    b = t.shape[0]
    if class_token is not None:
        ct = broadcast_to(reshape(class_token, (1, 1, class_token.shape[-1])),
                          (b, 1, class_token.shape[-1]))
        t = concat([ct, t], axis=1)
    if pos_embed is not None:
        if pos_embed.shape[0] != t.shape[1]:
            raise ConfigError(f"positional embedding covers {pos_embed.shape[0]} tokens, "
                              f"sequence has {t.shape[1]}")
        t = add(t, pos_embed)
    return t


def conv_tokenize(x, stages) -> Tensor:
    """Stages of conv(3x3 valid) + bias + ReLU + maxpool(3x3, stride 2, same),
    then flatten spatial positions row-major into a token sequence."""
    t = x
    for w, b in stages:
        t = maxpool_same(relu(add(conv2d_valid(t, w), b)), kernel=(3, 3), stride=(2, 2))
    bsz, h, w_, c = t.shape
    return reshape(t, (bsz, h * w_, c))


def seq_pool_weights(tokens, g) -> Tensor:
    """Token weights [b, 1, n]: softmax over the sequence of tokens @ g."""
    scores = transpose(matmul(tokens, g), (0, 2, 1))      # [b, 1, n]
    return softmax(scores, axis=-1)


def seq_pool(tokens, g) -> Tensor:
    """Learned softmax pooling: weighted sum of token rows -> [b, d]."""
    b, n, d = tokens.shape
    pooled = matmul(seq_pool_weights(tokens, g), tokens)  # [b, 1, d]
    return reshape(pooled, (b, d))


def tokenize(model: Model, x) -> Tensor:
    """Variant-specific token sequence for a [b, N, L] batch (before PE)."""
    cfg = model.config
    if cfg.variant in ("vit", "lvt"):
        usable = (cfg.segment_samples // cfg.patch_w) * cfg.patch_w
        if usable != cfg.segment_samples:
            x = getitem(x, (slice(None), slice(None), slice(0, usable)))
        return patch_embed(x, cfg.patch_h, cfg.patch_w,
                           model.patch_proj_w.tensor, model.patch_proj_b.tensor)
    b, n, l = x.shape
    grid = reshape(x, (b, n, l, 1))
    return conv_tokenize(grid, [(model.conv1_w.tensor, model.conv1_b.tensor),
                                (model.conv2_w.tensor, model.conv2_b.tensor)])


def classify_tokens(model: Model, tokens, training: bool = False, rng=None) -> Tensor:
    """Encoder plus head on an already-tokenized [b, n, d] batch."""
    cfg = model.config
    t = add_class_token_and_pe(
        tokens,
        model.class_token.tensor if model.class_token is not None else None,
        model.pos_embed.tensor if model.pos_embed is not None else None,
    )
    t = encoder_stack(t, model.blocks, model.final_norm, training, rng)
    if cfg.variant == "vit":
        pooled = getitem(t, (slice(None), 0, slice(None)))
    else:
        pooled = seq_pool(t, model.seqpool_g.tensor)
    hidden = relu(dense(pooled, model.head_w1.tensor, model.head_b1.tensor))
    return dense(hidden, model.head_w2.tensor, model.head_b2.tensor)


def forward(model: Model, batch, training: bool = False, rng=None) -> Tensor:
    """Logits [b, 2] for a batch of segments [b, n_channels, segment_samples]."""
    cfg = model.config
    if isinstance(batch, Tensor):
        x = batch
    else:
        x = Tensor(np.asarray(batch, dtype=model.dtype))
    if x.ndim != 3 or x.shape[1] != cfg.n_channels or x.shape[2] != cfg.segment_samples:
        raise ConfigError(f"batch shape {x.shape} does not match model input "
                          f"[b, {cfg.n_channels}, {cfg.segment_samples}]")
    return classify_tokens(model, tokenize(model, x), training, rng)


# --- config file round-trip ---------------------------------------------------

_CONFIG_FIELDS = {f.name: f for f in fields(ModelConfig)}


def save_model_config(config: ModelConfig, path) -> None:
    lines = []
    for f in fields(ModelConfig):
        value = getattr(config, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        elif value is None:
            value = "none"
        lines.append(f"{f.name} = {value}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_model_config(path) -> ModelConfig:
    values = parse_kv_text(Path(path).read_text(), str(path))
    kwargs = {}
    for key, raw in values.items():
        if key not in _CONFIG_FIELDS:
            raise ConfigError(f"{path}: unknown model config key '{key}'")
        kwargs[key] = _parse_config_value(key, raw)
    if "variant" not in kwargs:
        raise ConfigError(f"{path}: missing required key 'variant'")
    return ModelConfig(**kwargs)


def parse_kv_text(text: str, origin: str = "config") -> dict[str, str]:
    """Parse 'key = value' lines; '#' starts a comment, blanks are skipped."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{origin} line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if not key or not value:
            raise ConfigError(f"{origin} line {lineno}: empty key or value")
        if key in out:
            raise ConfigError(f"{origin} line {lineno}: duplicate key '{key}'")
        out[key] = value
    return out


def _parse_config_value(key: str, raw: str):
    if key == "variant":
        return raw.lower()
    if key == "conv_filters":
        try:
            return tuple(int(v) for v in raw.split(","))
        except ValueError:
            raise ConfigError(f"conv_filters must be comma-separated integers, got {raw!r}")
    if key == "d_mlp" and raw.lower() == "none":
        return None
    if key == "use_positional_embedding":
        low = raw.lower()
        if low not in ("true", "false"):
            raise ConfigError(f"use_positional_embedding must be true or false, got {raw!r}")
        return low == "true"
    if key == "dropout_rate":
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"dropout_rate must be a number, got {raw!r}")
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"model config key '{key}' must be an integer, got {raw!r}")


def parse_variant_spec(spec: str) -> tuple[str, int, int]:
    """Parse 'lct-2/4' style names into (variant, encoder_layers, heads)."""
    s = spec.strip().lower()
    name, _, rest = s.partition("-")
    if name not in VARIANTS:
        raise ConfigError(f"variant must be one of {'/'.join(VARIANTS)}, got {spec!r}")
    if not rest:
        return name, 1, 2
    layers_s, _, heads_s = rest.partition("/")
    try:
        layers = int(layers_s)
        heads = int(heads_s) if heads_s else 2
    except ValueError:
        raise ConfigError(f"malformed variant spec {spec!r}, expected e.g. 'lct-2/4'")
    return name, layers, heads
