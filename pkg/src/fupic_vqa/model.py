"""Toy windowed-attention quality model with multi-frequency token fusion.

Per patch: Haar split -> s x s tokens per component -> one shared linear
embedding per component, fused with learnable ``alpha`` -> pre-norm
shifted-window transformer blocks -> mean pool -> two affine heads (raw
score and raw region weight).  Patches never see each other; there are no
positional terms.
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import nn
from .haar import FreqMaps, haar_forward
from .sampler import PatchSet

BLOCK_PARAMS = ("ln1_g", "ln1_b", "qkv_w", "qkv_b", "proj_w", "proj_b",
                "ln2_g", "ln2_b", "fc1_w", "fc1_b", "fc2_w", "fc2_b")

CHECKPOINT_MAGIC = b"FPVQCKPT"
CHECKPOINT_VERSION = 1


class NumericalError(FloatingPointError):
    def __init__(self, stage: str, detail: str = "non-finite values"):
        super().__init__(f"{detail} at stage '{stage}'")
        self.stage = stage


@dataclass(frozen=True)
class ModelConfig:
    patch_size: int = 64
    token_side: int = 4
    dim: int = 32
    depth: int = 2
    window: int = 4
    heads: int = 2
    mlp_ratio: int = 2
    shift: bool = True

    def __post_init__(self):
        l, s = self.patch_size, self.token_side
        if l < 2 or l % 2:
            raise ValueError(f"patch_size must be even, got {l}")
        if (l // 2) % s:
            raise ValueError(f"half patch side {l // 2} not divisible by token side {s}")
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.grid % self.window_eff:
            raise ValueError(f"token grid {self.grid} not divisible by window {self.window_eff}")

    @property
    def grid(self) -> int:
        """Tokens per side of the half-resolution maps."""
        return self.patch_size // 2 // self.token_side

    @property
    def n_tokens(self) -> int:
        return self.grid ** 2

    @property
    def token_dim(self) -> int:
        return 3 * self.token_side ** 2

    @property
    def hidden(self) -> int:
        return self.mlp_ratio * self.dim

    @property
    def window_eff(self) -> int:
        return min(self.window, self.grid)

    def block_shift(self, index: int) -> int:
        w = self.window_eff
        if not self.shift or index % 2 == 0 or w >= self.grid:
            return 0
        return w // 2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Canonical parameter order; also the checkpoint layout."""
    d, h = cfg.dim, cfg.hidden
    shapes = [("alpha", (4,)), ("le_w", (cfg.token_dim, d)), ("le_b", (d,))]
    for i in range(cfg.depth):
        block = {"ln1_g": (d,), "ln1_b": (d,), "qkv_w": (d, 3 * d), "qkv_b": (3 * d,),
                 "proj_w": (d, d), "proj_b": (d,), "ln2_g": (d,), "ln2_b": (d,),
                 "fc1_w": (d, h), "fc1_b": (h,), "fc2_w": (h, d), "fc2_b": (d,)}
        shapes += [(f"blocks.{i}.{k}", block[k]) for k in BLOCK_PARAMS]
    shapes += [("score_w", (d,)), ("score_b", (1,)), ("weight_w", (d,)), ("weight_b", (1,))]
    return shapes


@dataclass
class ModelParams:
    config: ModelConfig
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for name, shape in param_shapes(self.config):
            if name not in self.arrays:
                raise ValueError(f"missing parameter {name}")
            arr = np.asarray(self.arrays[name], dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name}: shape {arr.shape}, expected {shape}")
            self.arrays[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def names(self) -> list[str]:
        return [n for n, _ in param_shapes(self.config)]

    def block(self, i: int) -> dict[str, np.ndarray]:
        return {k: self.arrays[f"blocks.{i}.{k}"] for k in BLOCK_PARAMS}

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.arrays[n].ravel() for n in self.names()])

    @classmethod
    def from_flat(cls, cfg: ModelConfig, flat: np.ndarray) -> "ModelParams":
        flat = np.asarray(flat, dtype=np.float64)
        arrays, pos = {}, 0
        for name, shape in param_shapes(cfg):
            size = math.prod(shape)
            arrays[name] = flat[pos:pos + size].reshape(shape).copy()
            pos += size
        if pos != flat.size:
            raise ValueError(f"flat vector has {flat.size} values, config needs {pos}")
        return cls(cfg, arrays)

    @classmethod
    def zeros(cls, cfg: ModelConfig) -> "ModelParams":
        return cls(cfg, {n: np.zeros(s) for n, s in param_shapes(cfg)})


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """alpha = 1, layer norms at identity, weight head at zero (uniform region
    weights), everything else U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    arrays = {}
    for name, shape in param_shapes(cfg):
        leaf = name.rsplit(".", 1)[-1]
        if name == "alpha" or leaf.endswith("_g"):
            arrays[name] = np.ones(shape)
        elif leaf in ("ln1_b", "ln2_b") or name.startswith("weight_"):
            arrays[name] = np.zeros(shape)
        else:
            fan_in = {"le": cfg.token_dim, "fc2": cfg.hidden}.get(leaf.split("_")[0], cfg.dim)
            bound = 1.0 / math.sqrt(fan_in)
            arrays[name] = rng.uniform(-bound, bound, size=shape)
    return ModelParams(cfg, arrays)


# --- forward stages ----------------------------------------------------------

def tokenize(component: np.ndarray, s: int) -> np.ndarray:
    """``(B, 3, h, h)`` -> ``(B, (h/s)^2, 3*s*s)``; tokens row-major, each flattened (c, y, x)."""
    bsz, ch, h, w = component.shape
    if h % s or w % s:
        raise ValueError(f"map side {h}x{w} not divisible by token side {s}")
    gh, gw = h // s, w // s
    t = component.reshape(bsz, ch, gh, s, gw, s).transpose(0, 2, 4, 1, 3, 5)
    return t.reshape(bsz, gh * gw, ch * s * s)


def _component_tokens(maps: FreqMaps, s: int) -> tuple[np.ndarray, bool]:
    single = maps.avg.ndim == 3
    comps = [m[None] if single else m for m in maps]
    return np.stack([tokenize(c, s) for c in comps]), single


def embed_fuse(maps: FreqMaps, params: ModelParams, token_side: int | None = None) -> np.ndarray:
    """``z = sum_c alpha_c * LE(component_c)`` with one LE shared by all four components.

    Accepts unbatched ``(3, h, h)`` maps (returns ``(T, D)``) or batched
    ``(B, 3, h, h)`` maps (returns ``(B, T, D)``).
    """
    s = params.config.token_side if token_side is None else token_side
    x, single = _component_tokens(maps, s)
    z, _ = _embed_forward(x, params)
    return z[0] if single else z


def _embed_forward(x, params):
    """``x``: ``(4, B, T, in)`` component tokens."""
    e = x @ params["le_w"] + params["le_b"]
    alpha = params["alpha"]
    z = alpha[0] * e[0] + alpha[1] * e[1] + alpha[2] * e[2] + alpha[3] * e[3]
    return z, (x, e)


def _embed_backward(dz, cache, params):
    x, e = cache
    alpha = params["alpha"]
    dalpha = np.array([np.sum(dz * e[c]) for c in range(4)])
    d_in, d = params["le_w"].shape
    dz2 = dz.reshape(-1, d)
    dw = sum(alpha[c] * (x[c].reshape(-1, d_in).T @ dz2) for c in range(4))
    db = alpha.sum() * dz2.sum(axis=0)
    return {"alpha": dalpha, "le_w": dw, "le_b": db}


def _block_forward(x, bp, cfg, index, masks):
    shift = cfg.block_shift(index)
    win = cfg.window_eff
    h1, c_ln1 = nn.layernorm_forward(x, bp["ln1_g"], bp["ln1_b"])
    a, c_att = nn.window_attention_forward(h1, bp, cfg.heads, cfg.grid, win, shift,
                                           masks.get(shift))
    x2 = x + a
    h2, c_ln2 = nn.layernorm_forward(x2, bp["ln2_g"], bp["ln2_b"])
    u = h2 @ bp["fc1_w"] + bp["fc1_b"]
    g, c_gelu = nn.gelu_forward(u)
    f = g @ bp["fc2_w"] + bp["fc2_b"]
    return x2 + f, (c_ln1, c_att, h2, c_ln2, g, c_gelu)


def _block_backward(dy, cache, bp, cfg, index):
    c_ln1, c_att, h2, c_ln2, g, c_gelu = cache
    shift = cfg.block_shift(index)
    dg, dfc2_w, dfc2_b = nn.linear_backward(dy, g, bp["fc2_w"])
    du = nn.gelu_backward(dg, c_gelu)
    dh2, dfc1_w, dfc1_b = nn.linear_backward(du, h2, bp["fc1_w"])
    dx2_ln, dln2_g, dln2_b = nn.layernorm_backward(dh2, c_ln2, bp["ln2_g"])
    dx2 = dy + dx2_ln
    dh1, datt = nn.window_attention_backward(dx2, c_att, bp, cfg.heads, cfg.grid,
                                             cfg.window_eff, shift)
    dx_ln, dln1_g, dln1_b = nn.layernorm_backward(dh1, c_ln1, bp["ln1_g"])
    grads = {"ln1_g": dln1_g, "ln1_b": dln1_b, "ln2_g": dln2_g, "ln2_b": dln2_b,
             "fc1_w": dfc1_w, "fc1_b": dfc1_b, "fc2_w": dfc2_w, "fc2_b": dfc2_b, **datt}
    return dx2 + dx_ln, grads


def _masks(cfg):
    out = {}
    for i in range(cfg.depth):
        sh = cfg.block_shift(i)
        if sh and sh not in out:
            out[sh] = nn.shift_mask(cfg.grid, cfg.window_eff, sh)
    return out


def _encode_forward(z, params):
    cfg = params.config
    masks = _masks(cfg)
    x, caches = z, []
    for i in range(cfg.depth):
        x, c = _block_forward(x, params.block(i), cfg, i, masks)
        caches.append(c)
    return x.mean(axis=1), (caches, x.shape[1])


def encode(tokens: np.ndarray, params: ModelParams) -> np.ndarray:
    """Encoder trunk: tokens ``(T, D)`` or ``(B, T, D)`` -> pooled feature(s).

    ``T`` must be a square token grid compatible with the configured window.
    """
    tokens = np.asarray(tokens, dtype=np.float64)
    single = tokens.ndim == 2
    x = tokens[None] if single else tokens
    cfg = params.config
    grid = math.isqrt(x.shape[1])
    if grid * grid != x.shape[1]:
        raise ValueError(f"{x.shape[1]} tokens do not form a square grid")
    if grid != cfg.grid:
        # Tests feed grids other than the configured one; window shrinks to fit.
        cfg = _regrid(cfg, grid)
        params = ModelParams(cfg, params.arrays)
    feat, _ = _encode_forward(x, params)
    return feat[0] if single else feat


def _regrid(cfg: ModelConfig, grid: int) -> ModelConfig:
    return replace(cfg, patch_size=2 * grid * cfg.token_side, window=min(cfg.window, grid))


def heads(feature: np.ndarray, params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Affine score and weight-logit heads on the shared trunk feature."""
    # row-wise reductions keep each patch's result independent of batch size
    score = np.sum(feature * params["score_w"], axis=-1) + params["score_b"][0]
    logit = np.sum(feature * params["weight_w"], axis=-1) + params["weight_b"][0]
    return score, logit


def _check(stage, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericalError(stage)


def forward_patches(patches: np.ndarray, params: ModelParams, keep_cache: bool = False):
    """Raw scores and weight logits for a batch ``(B, 3, l, l)`` of patches.

    Returns ``(scores, logits, cache)``; ``cache`` is ``None`` unless
    ``keep_cache`` is set, in which case it feeds :func:`backward_patches`.
    """
    cfg = params.config
    patches = np.asarray(patches, dtype=np.float64)
    if patches.shape[1:] != (3, cfg.patch_size, cfg.patch_size):
        raise ValueError(f"patches {patches.shape[1:]} do not match configured size {cfg.patch_size}")
    x, _ = _component_tokens(haar_forward(patches), cfg.token_side)
    z, c_emb = _embed_forward(x, params)
    _check("embed_fuse", z)
    feat, c_enc = _encode_forward(z, params)
    _check("encode", feat)
    score, logit = heads(feat, params)
    _check("heads", score, logit)
    cache = (c_emb, c_enc, feat) if keep_cache else None
    return score, logit, cache


def backward_patches(d_score: np.ndarray, d_logit: np.ndarray, cache, params: ModelParams
                     ) -> dict[str, np.ndarray]:
    cfg = params.config
    c_emb, (caches, n_tok), feat = cache
    grads = {
        "score_w": feat.T @ d_score, "score_b": np.array([d_score.sum()]),
        "weight_w": feat.T @ d_logit, "weight_b": np.array([d_logit.sum()]),
    }
    dfeat = d_score[:, None] * params["score_w"] + d_logit[:, None] * params["weight_w"]
    dx = np.repeat(dfeat[:, None, :] / n_tok, n_tok, axis=1)
    for i in reversed(range(cfg.depth)):
        dx, bg = _block_backward(dx, caches[i], params.block(i), cfg, i)
        for k, v in bg.items():
            grads[f"blocks.{i}.{k}"] = v
    _check("encode backward", dx)
    grads.update(_embed_backward(dx, c_emb, params))
    return grads


@dataclass(frozen=True)
class PatchOutput:
    raw_score: float
    raw_weight: float
    index: int
    frame_id: str


def forward_frame(patch_set: PatchSet, params: ModelParams, chunk: int | None = None
                  ) -> list[PatchOutput]:
    """Run every patch of a frame through the model, ``chunk`` patches at a time."""
    scores, logits = forward_scores(patch_set.patches, params, chunk)
    return [PatchOutput(float(o), float(w), i, patch_set.frame_id)
            for i, (o, w) in enumerate(zip(scores, logits))]


def forward_scores(patches: np.ndarray, params: ModelParams, chunk: int | None = None):
    n = len(patches)
    step = n if not chunk else chunk
    scores, logits = np.empty(n), np.empty(n)
    for lo in range(0, n, step):
        o, w, _ = forward_patches(patches[lo:lo + step], params)
        scores[lo:lo + step] = o
        logits[lo:lo + step] = w
    return scores, logits


# --- checkpoint --------------------------------------------------------------

def save_checkpoint(params: ModelParams, path: str | os.PathLike) -> None:
    """Layout: magic(8) | version u32 | json length u32 | config json |
    count u64 | float64 LE values in :func:`param_shapes` order."""
    cfg_json = json.dumps(params.config.to_dict(), sort_keys=True).encode()
    flat = params.flatten().astype("<f8")
    header = CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(cfg_json))
    Path(path).write_bytes(header + cfg_json + struct.pack("<Q", flat.size) + flat.tobytes())


def load_checkpoint(path: str | os.PathLike) -> ModelParams:
    buf = Path(path).read_bytes()
    if buf[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    version, n_json = struct.unpack_from("<II", buf, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    cfg = ModelConfig.from_dict(json.loads(buf[pos:pos + n_json]))
    pos += n_json
    (count,) = struct.unpack_from("<Q", buf, pos)
    pos += 8
    if len(buf) - pos != 8 * count:
        raise ValueError(f"{path}: truncated parameter payload")
    flat = np.frombuffer(buf, dtype="<f8", count=count, offset=pos)
    return ModelParams.from_flat(cfg, flat)
