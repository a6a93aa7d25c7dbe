"""The DARC refinement stack.

Image and text embeddings are lifted into a shared space by ReLU linear
projections, then refined by a chain of blocks. Each block applies an
adaptive cross-attention refiner (ACAR) in both directions — multi-head
cross-attention plus a lambda-scaled bottleneck-GELU branch, folded in
residually under layer norm — fuses the two directional outputs by
averaging, and passes the fusion through a dynamic feature adapter (DFA):
a bottleneck MLP scaled by a per-sample sigmoid gate, again residual under
layer norm. The directional ACAR outputs feed the next block's image/text
streams; each block's DFA output is a side tap. Taps are averaged uniformly
across blocks, pooled over tokens, and classified by fixed-scale cosine
similarity against per-class prototype rows.

All features are row vectors: inputs are ``[T, d]`` for a single sample or
``[B, T, d]`` for a batch, and every operation treats leading axes as batch
axes, so the two layouts share one code path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ag
from .autodiff import ShapeError, Tensor
from .errors import ConfigurationError, DataFormatError

LN_EPS = 1e-5
COSINE_NORM_EPS = 1e-12


@dataclass
class ModelConfig:
    """Hyperparameters and ablation switches of the refinement stack.

    ``use_acar`` / ``use_dfa`` / ``use_sai`` / ``use_lp`` toggle the
    cross-attention refiners, the gated adapters, prototype-based classifier
    initialisation, and the input projections. With everything off the model
    degenerates to a cosine classifier over averaged raw features.
    """

    n_classes: int
    d_in_img: int = 768
    d_in_txt: int = 768
    d_map: int = 1024
    n_blocks: int = 2
    n_heads: int = 8
    bottleneck_ratio: int = 4
    lambda_init: float = 0.05
    sigma_scale: float = 30.0
    use_acar: bool = True
    use_dfa: bool = True
    use_sai: bool = True
    use_lp: bool = True

    @property
    def d_k(self) -> int:
        return self.d_map // self.n_heads

    @property
    def d_bottleneck(self) -> int:
        return self.d_map // self.bottleneck_ratio

    def validate(self) -> None:
        if self.n_classes < 2:
            raise ConfigurationError(f"n_classes must be >= 2, got {self.n_classes}")
        for name in ("d_in_img", "d_in_txt", "d_map", "n_blocks", "n_heads", "bottleneck_ratio"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.d_map % self.n_heads != 0:
            raise ConfigurationError(f"d_map ({self.d_map}) must be divisible by n_heads ({self.n_heads})")
        if self.d_map % self.bottleneck_ratio != 0:
            raise ConfigurationError(
                f"d_map ({self.d_map}) must be divisible by bottleneck_ratio ({self.bottleneck_ratio})"
            )
        if not self.use_lp and (self.d_in_img != self.d_map or self.d_in_txt != self.d_map):
            raise ConfigurationError(
                "projections disabled: the identity path requires d_in_img and d_in_txt "
                f"to equal d_map, got d_in_img={self.d_in_img}, d_in_txt={self.d_in_txt}, "
                f"d_map={self.d_map}"
            )

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _param(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    return Tensor(rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=shape), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _ones(shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


class ProjectionLayer:
    """ReLU(x @ W^T + b): lifts encoder features into the shared width."""

    def __init__(self, w: Tensor, b: Tensor):
        self.w = w
        self.b = b

    @classmethod
    def create(cls, rng: np.random.Generator, d_out: int, d_in: int) -> "ProjectionLayer":
        return cls(_param(rng, (d_out, d_in), fan_in=d_in), _zeros(d_out))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.w.shape[1]:
            raise ShapeError(
                f"projection: input width {x.shape[-1]} does not match layer input width {self.w.shape[1]}"
            )
        return ag.relu(ag.add(ag.matmul(x, ag.transpose(self.w)), self.b))


def project(layer: ProjectionLayer | None, x: Tensor) -> Tensor:
    """Apply a projection layer, or pass through when the layer is disabled."""
    if layer is None:
        return x
    return layer.forward(x)


class AcarBlock:
    """Adaptive cross-attention refiner for one direction.

    Refines the query stream by multi-head cross-attention over the
    key/value stream, adds a lambda-scaled bottleneck-GELU transform of the
    attention output, and layer-normalises the residual sum.
    """

    def __init__(self, w_q, w_k, w_v, w_o, w_down, w_up, lam, ln_gamma, ln_beta):
        self.w_q = w_q  # per-head [d_map, d_k]
        self.w_k = w_k
        self.w_v = w_v
        self.w_o = w_o
        self.w_down = w_down
        self.w_up = w_up
        self.lam = lam
        self.ln_gamma = ln_gamma
        self.ln_beta = ln_beta

    @classmethod
    def create(cls, rng: np.random.Generator, cfg: ModelConfig) -> "AcarBlock":
        d, dk, db = cfg.d_map, cfg.d_k, cfg.d_bottleneck
        w_q, w_k, w_v = [], [], []
        for _ in range(cfg.n_heads):
            w_q.append(_param(rng, (d, dk), fan_in=d))
            w_k.append(_param(rng, (d, dk), fan_in=d))
            w_v.append(_param(rng, (d, dk), fan_in=d))
        return cls(
            w_q,
            w_k,
            w_v,
            w_o=_param(rng, (d, d), fan_in=d),
            w_down=_param(rng, (db, d), fan_in=d),
            w_up=_param(rng, (d, db), fan_in=db),
            lam=Tensor(np.asarray(cfg.lambda_init), requires_grad=True),
            ln_gamma=_ones(d),
            ln_beta=_zeros(d),
        )

    def attention(self, q: Tensor, kv: Tensor, return_weights: bool = False):
        """Multi-head cross-attention; K and V both derive from `kv`."""
        d_k = self.w_q[0].shape[1]
        inv = 1.0 / math.sqrt(d_k)
        heads = []
        weights = []
        for wq, wk, wv in zip(self.w_q, self.w_k, self.w_v):
            qh = ag.matmul(q, wq)
            kh = ag.matmul(kv, wk)
            vh = ag.matmul(kv, wv)
            attn = ag.softmax_rows(ag.scale(ag.matmul(qh, ag.transpose(kh)), inv))
            heads.append(ag.matmul(attn, vh))
            weights.append(attn)
        out = ag.matmul(ag.concat(heads), self.w_o)
        if return_weights:
            return out, weights
        return out

    def adapter(self, a: Tensor) -> Tensor:
        hidden = ag.gelu(ag.matmul(a, ag.transpose(self.w_down)))
        return ag.mul(self.lam, ag.matmul(hidden, ag.transpose(self.w_up)))

    def forward(self, q: Tensor, kv: Tensor) -> Tensor:
        a = self.attention(q, kv)
        resid = ag.add(ag.add(q, a), self.adapter(a))
        return ag.layer_norm(resid, self.ln_gamma, self.ln_beta, LN_EPS)


def cross_attention(block: AcarBlock, q: Tensor, kv: Tensor) -> Tensor:
    return block.attention(q, kv)


def acar_forward(block: AcarBlock, q: Tensor, kv: Tensor) -> Tensor:
    return block.forward(q, kv)


class DfaBlock:
    """Dynamic feature adapter: gated bottleneck MLP, residual under layer norm.

    The gate is a per-sample scalar in (0, 1): the token-mean of the fused
    feature goes through a single linear unit and a sigmoid.
    """

    def __init__(self, w_g, b_g, w_down, w_up, ln_gamma, ln_beta):
        self.w_g = w_g
        self.b_g = b_g
        self.w_down = w_down
        self.w_up = w_up
        self.ln_gamma = ln_gamma
        self.ln_beta = ln_beta

    @classmethod
    def create(cls, rng: np.random.Generator, cfg: ModelConfig) -> "DfaBlock":
        d, db = cfg.d_map, cfg.d_bottleneck
        return cls(
            w_g=_param(rng, (1, d), fan_in=d),
            b_g=Tensor(np.asarray(0.0), requires_grad=True),
            w_down=_param(rng, (db, d), fan_in=d),
            w_up=_param(rng, (d, db), fan_in=db),
            ln_gamma=_ones(d),
            ln_beta=_zeros(d),
        )

    def gate(self, z: Tensor) -> Tensor:
        pooled = ag.mean(z, axis=-2, keepdims=True)
        return ag.sigmoid(ag.add(ag.matmul(pooled, ag.transpose(self.w_g)), self.b_g))

    def forward(self, z: Tensor) -> Tensor:
        gated = ag.mul(self.gate(z), ag.matmul(ag.gelu(ag.matmul(z, ag.transpose(self.w_down))), ag.transpose(self.w_up)))
        return ag.layer_norm(ag.add(z, gated), self.ln_gamma, self.ln_beta, LN_EPS)


def dfa_forward(block: DfaBlock | None, z_fuse: Tensor) -> Tensor:
    """Apply a dynamic feature adapter, or pass through when disabled."""
    if block is None:
        return z_fuse
    return block.forward(z_fuse)


class RefinementBlock:
    """One stack stage: two directional refiners plus one feature adapter.

    Any of the three members may be None (ablated); the streams then pass
    through unchanged while fusion still averages them.
    """

    def __init__(self, acar_i2t: AcarBlock | None, acar_t2i: AcarBlock | None, dfa: DfaBlock | None):
        self.acar_i2t = acar_i2t
        self.acar_t2i = acar_t2i
        self.dfa = dfa

    def forward(self, x_img: Tensor, x_txt: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        if self.acar_i2t is not None:
            z_i2t = self.acar_i2t.forward(x_img, x_txt)
            z_t2i = self.acar_t2i.forward(x_txt, x_img)
        else:
            z_i2t, z_t2i = x_img, x_txt
        z_fuse = ag.scale(ag.add(z_i2t, z_t2i), 0.5)
        tap = dfa_forward(self.dfa, z_fuse)
        return z_i2t, z_t2i, tap


def block_forward(block: RefinementBlock, x_img: Tensor, x_txt: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    return block.forward(x_img, x_txt)


def aggregate(taps: list[Tensor]) -> Tensor:
    """Uniform mean over block taps, then token-mean pooling to one vector."""
    if not taps:
        raise ShapeError("aggregate: empty tap list")
    first = taps[0].shape
    for t in taps[1:]:
        if t.shape != first:
            raise ShapeError(f"aggregate: tap shapes disagree: {[t.shape for t in taps]}")
    acc = taps[0]
    for t in taps[1:]:
        acc = ag.add(acc, t)
    return ag.mean(ag.scale(acc, 1.0 / len(taps)), axis=-2)


def classify(w_c: Tensor, f_final: Tensor, sigma: float) -> Tensor:
    """Fixed-scale cosine similarity against per-class prototype rows.

    Norms are guarded by 1e-12 in the denominators, so zero vectors yield
    zero logits rather than NaNs. Logits lie in [-sigma, +sigma].
    """
    squeeze = f_final.ndim == 1
    if squeeze:
        f_final = ag.reshape(f_final, (1, f_final.shape[0]))
    if f_final.shape[-1] != w_c.shape[-1]:
        raise ShapeError(
            f"classify: feature width {f_final.shape[-1]} does not match prototype width {w_c.shape[-1]}"
        )
    guard = Tensor(np.asarray(COSINE_NORM_EPS**2))

    def unit_rows(t: Tensor) -> Tensor:
        norms = ag.sqrt(ag.add(ag.tsum(ag.mul(t, t), axis=-1, keepdims=True), guard))
        return ag.div(t, norms)

    logits = ag.scale(ag.matmul(unit_rows(f_final), ag.transpose(unit_rows(w_c))), sigma)
    if squeeze:
        logits = ag.reshape(logits, (logits.shape[-1],))
    return logits


class DarcModel:
    """Full parameter set of the refinement stack plus its hyperparameters.

    Parameters are created from a single seeded generator in a fixed order,
    so a seed fully determines every initial value.
    """

    def __init__(self, config: ModelConfig, seed: int = 0, prototypes: np.ndarray | None = None):
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)

        if config.use_lp:
            self.proj_img = ProjectionLayer.create(rng, config.d_map, config.d_in_img)
            self.proj_txt = ProjectionLayer.create(rng, config.d_map, config.d_in_txt)
        else:
            self.proj_img = None
            self.proj_txt = None

        self.blocks: list[RefinementBlock] = []
        for _ in range(config.n_blocks):
            acar_i2t = AcarBlock.create(rng, config) if config.use_acar else None
            acar_t2i = AcarBlock.create(rng, config) if config.use_acar else None
            dfa = DfaBlock.create(rng, config) if config.use_dfa else None
            self.blocks.append(RefinementBlock(acar_i2t, acar_t2i, dfa))

        self.w_c = _zeros((config.n_classes, config.d_map))
        self.init_prototypes(prototypes, rng=rng)

    # -- parameter bookkeeping -------------------------------------------

    def named_parameters(self) -> dict[str, Tensor]:
        """Trainable tensors in a fixed, checkpoint-stable order."""
        params: dict[str, Tensor] = {}
        if self.proj_img is not None:
            params["proj_img.w"] = self.proj_img.w
            params["proj_img.b"] = self.proj_img.b
            params["proj_txt.w"] = self.proj_txt.w
            params["proj_txt.b"] = self.proj_txt.b
        for i, block in enumerate(self.blocks):
            for tag, acar in (("acar_i2t", block.acar_i2t), ("acar_t2i", block.acar_t2i)):
                if acar is None:
                    continue
                prefix = f"blocks.{i}.{tag}"
                for h in range(len(acar.w_q)):
                    params[f"{prefix}.w_q{h}"] = acar.w_q[h]
                    params[f"{prefix}.w_k{h}"] = acar.w_k[h]
                    params[f"{prefix}.w_v{h}"] = acar.w_v[h]
                params[f"{prefix}.w_o"] = acar.w_o
                params[f"{prefix}.w_down"] = acar.w_down
                params[f"{prefix}.w_up"] = acar.w_up
                params[f"{prefix}.lam"] = acar.lam
                params[f"{prefix}.ln_gamma"] = acar.ln_gamma
                params[f"{prefix}.ln_beta"] = acar.ln_beta
            if block.dfa is not None:
                prefix = f"blocks.{i}.dfa"
                params[f"{prefix}.w_g"] = block.dfa.w_g
                params[f"{prefix}.b_g"] = block.dfa.b_g
                params[f"{prefix}.w_down"] = block.dfa.w_down
                params[f"{prefix}.w_up"] = block.dfa.w_up
                params[f"{prefix}.ln_gamma"] = block.dfa.ln_gamma
                params[f"{prefix}.ln_beta"] = block.dfa.ln_beta
        params["classifier.w_c"] = self.w_c
        return params

    def parameter_count(self) -> int:
        return sum(t.size for t in self.named_parameters().values())

    def zero_grad(self) -> None:
        for t in self.named_parameters().values():
            t.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = sorted(set(params) - set(state))
        extra = sorted(set(state) - set(params))
        if missing or extra:
            raise DataFormatError(f"parameter names do not match model: missing={missing}, unexpected={extra}")
        for name, tensor in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != tensor.data.shape:
                raise DataFormatError(
                    f"parameter {name!r}: stored shape {arr.shape} does not match model shape {tensor.data.shape}"
                )
            tensor.data[...] = arr

    # -- initialisation ----------------------------------------------------

    def init_prototypes(
        self,
        prototypes: np.ndarray | None = None,
        seed: int | None = None,
        rng: np.random.Generator | None = None,
    ) -> None:
        """(Re)initialise classifier rows.

        With ``use_sai`` and a prototype array given, rows become the
        row-normalised prototypes (which must already be d_map wide).
        Otherwise rows are Gaussian with std 1/sqrt(d_map), row-normalised.
        """
        cfg = self.config
        if cfg.use_sai and prototypes is not None:
            proto = np.asarray(prototypes, dtype=np.float64)
            if proto.shape != (cfg.n_classes, cfg.d_map):
                raise DataFormatError(
                    f"prototype array must have shape ({cfg.n_classes}, {cfg.d_map}), got {proto.shape}"
                )
            if not np.all(np.isfinite(proto)):
                raise DataFormatError("prototype array contains non-finite values")
            norms = np.linalg.norm(proto, axis=1, keepdims=True)
            if np.any(norms == 0.0):
                raise DataFormatError("prototype array contains a zero-norm row")
            self.w_c.data[...] = proto / norms
        else:
            if rng is None:
                rng = np.random.default_rng(seed)
            rows = rng.normal(0.0, 1.0 / math.sqrt(cfg.d_map), size=(cfg.n_classes, cfg.d_map))
            rows /= np.linalg.norm(rows, axis=1, keepdims=True)
            self.w_c.data[...] = rows

    # -- forward -----------------------------------------------------------

    def forward(self, f_img, f_txt) -> Tensor:
        """Raw embedding pair -> class logits. Accepts [T,d] or [B,T,d]."""
        f_img, f_txt = ag.as_tensor(f_img), ag.as_tensor(f_txt)
        for name, t, width in (("image", f_img, self.config.d_in_img), ("text", f_txt, self.config.d_in_txt)):
            if t.ndim not in (2, 3):
                raise ShapeError(f"{name} features must be [T,d] or [B,T,d], got shape {t.shape}")
            if t.shape[-1] != width:
                raise ShapeError(f"{name} feature width {t.shape[-1]} does not match configured {width}")
        x_img = project(self.proj_img, f_img)
        x_txt = project(self.proj_txt, f_txt)
        taps = []
        for block in self.blocks:
            x_img, x_txt, tap = block.forward(x_img, x_txt)
            taps.append(tap)
        return classify(self.w_c, aggregate(taps), self.config.sigma_scale)

    def predict_logits(self, images: np.ndarray, texts: np.ndarray) -> np.ndarray:
        """Forward pass outside any recording graph; returns a numpy array."""
        return self.forward(np.asarray(images, dtype=np.float64), np.asarray(texts, dtype=np.float64)).data


def expected_parameter_count(cfg: ModelConfig) -> int:
    """Closed-form trainable-parameter count for a configuration."""
    d, db = cfg.d_map, cfg.d_bottleneck
    total = cfg.n_classes * d
    if cfg.use_lp:
        total += d * cfg.d_in_img + d + d * cfg.d_in_txt + d
    if cfg.use_acar:
        per_acar = 3 * cfg.n_heads * d * cfg.d_k + d * d + 2 * d * db + 1 + 2 * d
        total += 2 * cfg.n_blocks * per_acar
    if cfg.use_dfa:
        per_dfa = d + 1 + 2 * d * db + 2 * d
        total += cfg.n_blocks * per_dfa
    return total
