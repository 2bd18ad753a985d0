"""Masked-autoencoder pretraining for the LESS encoder.

Spatial patches and spectral channels are masked independently, so the
visible tokens always form an axis-aligned sub-grid that the factorized
attention can consume directly. Before masking, each step keeps only a
random subset of channels (hierarchical channel sampling) to shrink the
decoder's reconstruction grid.
"""
from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .attention import LESSBlockParams, init_less_block, less_block
from .embed import EmbedParams, TokenGrid, augment_cls, embed, init_embed, patch_coords, patchify_array
from .errors import ConfigError, DegenerateInputError, NumericError
from .spectral import even_indices, make_config, make_reference_grid, synth_cube
from .ssrope import RopeConfig
from .tensor import (
    Tensor,
    broadcast_to,
    concat,
    get_default_dtype,
    layer_norm,
    matmul,
    parameter,
    take,
)
from .tree import count_parameters, map_tensors, named_tensors


@dataclass(frozen=True)
class HCSRange:
    r_l: float
    r_h: float

    def __post_init__(self):
        if not 0 < self.r_l <= self.r_h <= 1:
            raise ConfigError(f"channel sampling range must satisfy 0 < r_l <= r_h <= 1, got [{self.r_l}, {self.r_h}]")


@dataclass(frozen=True)
class MAEConfig:
    name: str
    patch: int
    image_size: int
    channels: str | int  # named channel configuration or a count picked evenly from the grid
    enc_dim: int
    enc_heads: int
    enc_d1: int
    enc_d2: int
    enc_depth: int
    dec_dim: int
    dec_heads: int
    dec_d1: int
    dec_d2: int
    dec_depth: int
    rank: int = 1
    hcs: tuple[float, float] = (0.2, 0.3)
    mask_ratios: tuple[float, float] = (0.75, 0.75)
    batch_size: int = 8
    optimizer: str = "sgd"
    lr: float = 1e-2
    momentum: float = 0.0
    rope: RopeConfig = RopeConfig()

    @property
    def hcs_range(self) -> HCSRange:
        return HCSRange(*self.hcs)

    @property
    def grid_size(self) -> int:
        return self.image_size // self.patch

    @property
    def n_spatial(self) -> int:
        return self.grid_size**2

    def wavelengths(self) -> np.ndarray:
        grid = make_reference_grid()
        if isinstance(self.channels, str):
            return make_config(grid, self.channels).wavelengths
        return grid.wavelengths[even_indices(len(grid), int(self.channels))]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rope"] = asdict(self.rope)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MAEConfig":
        d = dict(d)
        d["rope"] = RopeConfig(**d["rope"])
        d["hcs"] = tuple(d["hcs"])
        d["mask_ratios"] = tuple(d["mask_ratios"])
        return cls(**d)


PRESETS = {
    "toy": MAEConfig(
        name="toy", patch=4, image_size=16, channels=8,
        enc_dim=64, enc_heads=4, enc_d1=8, enc_d2=2, enc_depth=2,
        dec_dim=32, dec_heads=2, dec_d1=8, dec_d2=2, dec_depth=1,
        hcs=(0.5, 1.0), batch_size=8, optimizer="adam", lr=1e-3,
    ),
    # one encoder block, no decoder blocks; sized for finite-difference checks
    "tiny": MAEConfig(
        name="tiny", patch=2, image_size=4, channels=3,
        enc_dim=16, enc_heads=2, enc_d1=4, enc_d2=2, enc_depth=1,
        dec_dim=8, dec_heads=1, dec_d1=4, dec_d2=2, dec_depth=0,
        hcs=(1.0, 1.0), mask_ratios=(0.5, 0.5), batch_size=1,
    ),
    # full-scale shapes; only ever used to validate one forward/backward pass
    "reference-shape-only": MAEConfig(
        name="reference-shape-only", patch=16, image_size=32, channels="C120_VNIR+",
        enc_dim=768, enc_heads=12, enc_d1=32, enc_d2=2, enc_depth=12,
        dec_dim=512, dec_heads=8, dec_d1=32, dec_d2=2, dec_depth=8,
        hcs=(0.2, 0.3), batch_size=1, lr=1.5e-4,
    ),
}

REFERENCE_OPTIMIZER = {
    "optimizer": "AdamW", "base_lr": 1.5e-4, "weight_decay": 5e-2, "batch_size": 1024,
    "epochs": 200, "warmup_fraction": 0.05, "schedule": "cosine",
}


def get_preset(name: str) -> MAEConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass
class DecoderParams:
    proj_w: Tensor  # (D_e, D_d)
    proj_b: Tensor
    mask_token: Tensor  # (D_d,)
    blocks: list[LESSBlockParams]
    norm_g: Tensor
    norm_b: Tensor
    head_w: Tensor  # (D_d, P*P)
    head_b: Tensor


@dataclass
class HyperMAEModel:
    config: MAEConfig
    embed: EmbedParams
    encoder: list[LESSBlockParams]
    enc_norm_g: Tensor
    enc_norm_b: Tensor
    decoder: DecoderParams | None = None

    def parameters(self):
        return list(named_tensors(self))

    @property
    def n_parameters(self) -> int:
        return count_parameters(self)


def init_model(config: MAEConfig, seed: int = 0, with_decoder: bool = True, dtype=None) -> HyperMAEModel:
    dtype = dtype or get_default_dtype()
    rng = np.random.default_rng(seed)
    c = config
    enc = [init_less_block(c.enc_dim, c.enc_heads, c.enc_d1, c.enc_d2, c.rank, rng, dtype) for _ in range(c.enc_depth)]
    model = HyperMAEModel(
        config=c,
        embed=init_embed(c.patch, c.enc_dim, rng, dtype),
        encoder=enc,
        enc_norm_g=parameter(np.ones(c.enc_dim), dtype),
        enc_norm_b=parameter(np.zeros(c.enc_dim), dtype),
    )
    if with_decoder:
        p2 = c.patch * c.patch
        model.decoder = DecoderParams(
            proj_w=parameter(rng.standard_normal((c.enc_dim, c.dec_dim)) / np.sqrt(c.enc_dim), dtype),
            proj_b=parameter(np.zeros(c.dec_dim), dtype),
            mask_token=parameter(0.02 * rng.standard_normal(c.dec_dim), dtype),
            blocks=[
                init_less_block(c.dec_dim, c.dec_heads, c.dec_d1, c.dec_d2, c.rank, rng, dtype)
                for _ in range(c.dec_depth)
            ],
            norm_g=parameter(np.ones(c.dec_dim), dtype),
            norm_b=parameter(np.zeros(c.dec_dim), dtype),
            head_w=parameter(rng.standard_normal((c.dec_dim, p2)) / np.sqrt(c.dec_dim), dtype),
            head_b=parameter(np.zeros(p2), dtype),
        )
    return model


# -- masking --------------------------------------------------------------------

def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def hcs_sample(C: int, hcs_range: HCSRange, seed) -> np.ndarray:
    """Sorted random channel subset whose size ratio is drawn from the range."""
    if C < 1:
        raise ConfigError("need at least one channel")
    rng = np.random.default_rng(seed)
    rho = rng.uniform(hcs_range.r_l, hcs_range.r_h)
    k = max(1, _round_half_up(rho * C))
    return np.sort(rng.choice(C, size=k, replace=False))


@dataclass
class MaskPlan:
    spatial_visible: np.ndarray  # sorted subset of range(N)
    spectral_visible: np.ndarray  # sorted subset of hcs_channels (channel ids)
    hcs_channels: np.ndarray
    n_spatial: int
    seed: int | None = None

    @property
    def spatial_masked(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.n_spatial), self.spatial_visible)

    @property
    def spectral_masked(self) -> np.ndarray:
        return np.setdiff1d(self.hcs_channels, self.spectral_visible)

    @property
    def spectral_visible_pos(self) -> np.ndarray:
        """Positions of the visible channels inside ``hcs_channels``."""
        return np.searchsorted(self.hcs_channels, self.spectral_visible)

    def visible_mask(self) -> np.ndarray:
        """(N, C_hcs) boolean: True where the token is in the visible sub-grid."""
        s = np.zeros(self.n_spatial, dtype=bool)
        s[self.spatial_visible] = True
        c = np.zeros(len(self.hcs_channels), dtype=bool)
        c[self.spectral_visible_pos] = True
        return s[:, None] & c[None, :]

    def spatial_mask_for_channel(self, channel) -> np.ndarray:
        # one spatial set shared by every channel
        return self.spatial_masked


def make_mask_plan(N: int, channels, ratios=(0.75, 0.75), seed=None) -> MaskPlan:
    channels = np.sort(np.asarray(channels, dtype=np.int64))
    for r in ratios:
        if not 0 <= r < 1:
            raise ConfigError(f"mask ratio must lie in [0, 1), got {r}")
    rng = np.random.default_rng(seed)
    n_mask = int(math.floor(ratios[0] * N))
    c_mask = int(math.floor(ratios[1] * len(channels)))
    spatial_visible = np.sort(rng.permutation(N)[n_mask:])
    spectral_visible = np.sort(channels[rng.permutation(len(channels))[c_mask:]])
    return MaskPlan(spatial_visible, spectral_visible, channels, N, seed)


def full_plan(N: int, C: int) -> MaskPlan:
    return MaskPlan(np.arange(N), np.arange(C), np.arange(C), N)


# -- forward ----------------------------------------------------------------------

def encode(model: HyperMAEModel, patches: Tensor, coords, wavelengths) -> TokenGrid:
    """Embed (B, N, C, P*P) patches, add CLS slots, run the encoder blocks."""
    tokens = embed(patches, model.embed)
    grid = augment_cls(tokens, model.embed, coords, wavelengths)
    rope = model.config.rope
    for block in model.encoder:
        grid = less_block(grid, block, rope)
    return grid.with_tokens(layer_norm(grid.tokens, model.enc_norm_g, model.enc_norm_b))


def encode_visible(model: HyperMAEModel, patches, plan: MaskPlan, coords, wavelengths) -> TokenGrid:
    """Encode the visible sub-grid of ``patches`` (B, N, C_hcs, P*P).

    ``coords``/``wavelengths`` describe the full (N, C_hcs) grid; surviving
    tokens keep their original positions.
    """
    if len(plan.spatial_visible) == 0 or len(plan.spectral_visible) == 0:
        raise DegenerateInputError("the mask plan leaves an axis with no visible tokens")
    patches = patches if isinstance(patches, Tensor) else Tensor(patches)
    cpos = plan.spectral_visible_pos
    visible = take(take(patches, plan.spatial_visible, axis=-3), cpos, axis=-2)
    coords = np.asarray(coords)[plan.spatial_visible]
    wavelengths = np.asarray(wavelengths)[cpos]
    return encode(model, visible, coords, wavelengths)


def scatter_index(plan: MaskPlan) -> np.ndarray:
    """Map each slot of the full (N+1, C_hcs+1) grid to a row of [visible grid; mask token].

    CLS slots of masked rows/columns take the mask token too.
    """
    nv, cv = len(plan.spatial_visible), len(plan.spectral_visible)
    mask_slot = (nv + 1) * (cv + 1)
    row = np.full(plan.n_spatial + 1, -1)
    row[0] = 0
    row[plan.spatial_visible + 1] = np.arange(1, nv + 1)
    col = np.full(len(plan.hcs_channels) + 1, -1)
    col[0] = 0
    col[plan.spectral_visible_pos + 1] = np.arange(1, cv + 1)
    idx = row[:, None] * (cv + 1) + col[None, :]
    idx[(row[:, None] < 0) | (col[None, :] < 0)] = mask_slot
    return idx


def decode_reconstruct(model: HyperMAEModel, encoded: TokenGrid, plan: MaskPlan, coords, wavelengths) -> Tensor:
    """Predict every (spatial, sampled channel) patch: (B, N, C_hcs, P*P)."""
    dec = model.decoder
    if dec is None:
        raise ConfigError("model was built without a decoder")
    z = matmul(encoded.tokens, dec.proj_w, "dec_proj") + dec.proj_b
    B, nv1, cv1, Dd = z.shape
    src = concat([z.reshape(B, nv1 * cv1, Dd), broadcast_to(dec.mask_token.reshape(1, 1, Dd), (B, 1, Dd))], axis=1)
    idx = scatter_index(plan)
    full = take(src, idx.ravel(), axis=1).reshape(B, idx.shape[0], idx.shape[1], Dd)
    grid = TokenGrid(full, np.asarray(coords), np.asarray(wavelengths))
    for block in dec.blocks:
        grid = less_block(grid, block, model.config.rope)
    h = layer_norm(grid.tokens, dec.norm_g, dec.norm_b)
    body = h[:, 1:, 1:, :]
    return matmul(body, dec.head_w, "head") + dec.head_b


def normalize_patches(patches: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    mu = patches.mean(axis=-1, keepdims=True)
    var = patches.var(axis=-1, keepdims=True)
    return (patches - mu) / np.sqrt(var + eps)


def mae_loss(pred: Tensor, target_patches, plan: MaskPlan) -> Tensor:
    """Mean squared error on per-patch normalized targets, over masked tokens only.

    A token is masked unless both its spatial position and its channel are
    visible.
    """
    target = np.asarray(target_patches.data if isinstance(target_patches, Tensor) else target_patches)
    if pred.shape != target.shape:
        raise ConfigError(f"prediction {pred.shape} and target {target.shape} differ")
    masked = ~plan.visible_mask()
    n_masked = int(masked.sum())
    if n_masked == 0:
        raise DegenerateInputError("no masked tokens to reconstruct")
    target = normalize_patches(target).astype(pred.dtype)
    weight = masked[..., None].astype(pred.dtype) / (n_masked * pred.shape[-1] * int(np.prod(pred.shape[:-3])))
    diff = pred - Tensor(target)
    return (diff * diff * Tensor(np.broadcast_to(weight, pred.shape).copy())).sum()


def forward_loss(model: HyperMAEModel, cubes: np.ndarray, wavelengths, plan: MaskPlan) -> Tensor:
    """Loss for a (B, C, H, W) batch under one mask plan."""
    c = model.config
    patches = patchify_array(np.asarray(cubes), c.patch)[..., plan.hcs_channels, :]
    patches = patches.astype(model.embed.proj.dtype)
    coords = patch_coords(c.image_size // c.patch, c.image_size // c.patch)
    wl = np.asarray(wavelengths)[plan.hcs_channels]
    encoded = encode_visible(model, patches, plan, coords, wl)
    pred = decode_reconstruct(model, encoded, plan, coords, wl)
    return mae_loss(pred, patches, plan)


# -- training -------------------------------------------------------------------------

@dataclass
class SGD:
    """Gradient descent with optional heavy-ball momentum."""

    lr: float
    momentum: float = 0.0
    velocity: dict = field(default_factory=dict)

    def step(self, model: HyperMAEModel) -> HyperMAEModel:
        def update(name, t):
            if not t.requires_grad:
                return t
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            if self.momentum:
                v = self.momentum * self.velocity.get(name, 0.0) + g
                self.velocity[name] = v
                g = v
            return parameter(t.data - self.lr * g, t.dtype)

        return map_tensors(model, update)


@dataclass
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    moments: dict = field(default_factory=dict)

    def step(self, model: HyperMAEModel) -> HyperMAEModel:
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t

        def update(name, t):
            if not t.requires_grad:
                return t
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            m, v = self.moments.get(name, (0.0, 0.0))
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * v + (1 - self.beta2) * g * g
            self.moments[name] = (m, v)
            return parameter(t.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps), t.dtype)

        return map_tensors(model, update)


def make_optimizer(config: MAEConfig, lr: float | None = None):
    lr = config.lr if lr is None else lr
    if config.optimizer == "adam":
        return Adam(lr)
    if config.optimizer == "sgd":
        return SGD(lr, config.momentum)
    raise ConfigError(f"unknown optimizer {config.optimizer!r}")


def step_plan(config: MAEConfig, n_channels: int, seed: int) -> MaskPlan:
    hcs = hcs_sample(n_channels, config.hcs_range, [seed, 0])
    return make_mask_plan(config.n_spatial, hcs, config.mask_ratios, [seed, 1])


def train_step(model: HyperMAEModel, cubes, wavelengths, hcs_range: HCSRange | None = None, seed: int = 0,
               lr: float | None = None, optimizer: SGD | None = None):
    """One pretraining update. Returns (new model, loss before the update)."""
    config = model.config if hcs_range is None else replace(model.config, hcs=(hcs_range.r_l, hcs_range.r_h))
    cubes = np.asarray(cubes)
    plan = step_plan(config, cubes.shape[-3], seed)
    try:
        loss = forward_loss(model, cubes, wavelengths, plan)
        for _, t in named_tensors(model):
            t.grad = None
        loss.backward()
    except NumericError as e:
        raise NumericError(f"non-finite value at step seed {seed} (hcs={plan.hcs_channels.tolist()}): {e}") from e
    if optimizer is None:
        optimizer = SGD(model.config.lr if lr is None else lr, model.config.momentum)
    new = optimizer.step(model)
    for _, t in named_tensors(model):
        t.grad = None
    return new, float(loss.data)


def make_batch(config: MAEConfig, seed: int, step: int) -> np.ndarray:
    wl = config.wavelengths()
    base = seed * 1_000_003 + step * config.batch_size
    cubes = [synth_cube(wl, config.image_size, config.image_size, base + b).values for b in range(config.batch_size)]
    return np.stack(cubes)


def pretrain(config: MAEConfig, steps: int, seed: int = 0, dtype=None, on_step=None):
    """Train from scratch on fresh synthetic cubes; returns (model, losses)."""
    model = init_model(config, seed, dtype=dtype)
    wl = config.wavelengths()
    opt = make_optimizer(config)
    losses = []
    for step in range(1, steps + 1):
        cubes = make_batch(config, seed, step)
        model, loss = train_step(model, cubes, wl, seed=seed * 1_000_003 + step, optimizer=opt)
        losses.append(loss)
        if on_step is not None:
            on_step(step, loss)
    return model, losses


# -- checkpoints ----------------------------------------------------------------------

def save_checkpoint(path, model: HyperMAEModel, **manifest) -> None:
    """npz container: named parameter arrays plus a JSON manifest entry."""
    arrays = {name: t.data for name, t in named_tensors(model)}
    meta = {
        "preset": model.config.name,
        "config": model.config.to_dict(),
        "with_decoder": model.decoder is not None,
        "dtype": str(model.embed.proj.dtype),
        "shapes": {k: list(v.shape) for k, v in arrays.items()},
        **manifest,
    }
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), suffix=".npz")
    os.close(fd)
    try:
        np.savez(tmp, __manifest__=np.array(json.dumps(meta)), **arrays)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def load_checkpoint(path) -> tuple[HyperMAEModel, dict]:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__manifest__"]))
        arrays = {k: z[k] for k in z.files if k != "__manifest__"}
    config = MAEConfig.from_dict(meta["config"])
    skeleton = init_model(config, 0, with_decoder=meta["with_decoder"], dtype=np.dtype(meta["dtype"]))
    missing = {name for name, _ in named_tensors(skeleton)} - set(arrays)
    if missing:
        raise ConfigError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
    model = map_tensors(skeleton, lambda name, t: parameter(arrays[name], arrays[name].dtype))
    return model, meta
