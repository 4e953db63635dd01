"""GRN architecture: encoder, prototype bank, resonance encoder and fusion head."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError


@dataclass
class GrnConfig:
    n_channels: int = 8
    n_bands: int = 5
    d: int = 32
    M: int = 8
    K_r: int = 3
    hidden: int = 64
    conv_channels: int = 8
    n_classes: int = 3
    lambda_proto: float = 0.1
    temperature: float = 1.0

    def validate(self) -> None:
        for name in ("n_channels", "n_bands", "d", "M", "K_r", "hidden", "conv_channels", "n_classes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"GrnConfig.{name} must be >= 1, got {getattr(self, name)}")
        if self.lambda_proto < 0:
            raise ConfigError(f"GrnConfig.lambda_proto must be >= 0, got {self.lambda_proto}")
        if self.temperature <= 0:
            raise ConfigError(f"GrnConfig.temperature must be > 0, got {self.temperature}")


@dataclass(frozen=True)
class Variant:
    name: str
    label: str
    use_R: bool
    use_G: bool
    proto_loss: bool


# Ablation rows, in table order.
VARIANTS = {
    v.name: v
    for v in (
        Variant("individual_only", "Individual only (remove R,G)", False, False, False),
        Variant("proto_only", "+ Learnable Prototypes only (add R, no M)", True, False, True),
        Variant("resonance_only", "+ Multi-Subject Resonance only (add G, no prototypes)", False, True, False),
        Variant("full", "Full GRN (add R and G)", True, True, True),
        Variant("full_no_protoreg", "Full GRN w/o prototype regularizer", True, True, False),
    )
}


def get_variant(name) -> Variant:
    if isinstance(name, Variant):
        return name
    try:
        return VARIANTS[name]
    except KeyError:
        raise ConfigError(f"unknown variant {name!r}; choose from {', '.join(VARIANTS)}") from None


@dataclass
class ForwardTrace:
    F: Tensor
    alpha: Tensor
    R: Tensor
    G: Tensor
    logits: Tensor


class Standardizer:
    """Per-feature z-scoring with statistics frozen from a training split."""

    def __init__(self):
        self.mean = None
        self.std = None

    @property
    def fitted(self) -> bool:
        return self.mean is not None

    def fit(self, X):
        X = np.asarray(X, dtype=np.float64).reshape(len(X), -1)
        self.mean = X.mean(axis=0)
        self.std = np.maximum(X.std(axis=0), 1e-8)
        return self

    def transform(self, X):
        if not self.fitted:
            raise RuntimeError("standardizer used before fit()")
        X = np.asarray(X, dtype=np.float64).reshape(len(X), -1)
        return (X - self.mean) / self.std


class ChannelNorm:
    """Scalar z-scoring per entry of the last axis; identity until fitted."""

    def __init__(self):
        self.mean = None
        self.std = None

    @property
    def fitted(self) -> bool:
        return self.mean is not None

    def fit(self, X):
        X = np.asarray(X, dtype=np.float64)
        flat = X.reshape(-1, X.shape[-1])
        self.mean = flat.mean(axis=0)
        self.std = np.maximum(flat.std(axis=0), 1e-8)
        return self

    def transform(self, X):
        X = np.asarray(X, dtype=np.float64)
        return (X - self.mean) / self.std if self.fitted else X


def glorot(rng, shape, fan_in, fan_out):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


# -- stage functions ----------------------------------------------------------

def prototype_attention(F, P, tau=1.0):
    """Row-wise softmax of scaled dot-product similarity to each prototype."""
    d = F.shape[1]
    return ag.softmax(ag.scale(ag.matmul(F, ag.transpose(P)), 1.0 / (np.sqrt(d) * tau)))


def prototype_resonance(alpha, P):
    return ag.matmul(alpha, P)


def proto_distance_loss(alpha, F, P):
    """Mean over the batch of sum_m alpha[b,m] * ||F[b] - p_m||^2 / d."""
    n, d = F.shape
    M = P.shape[0]
    sq_f = ag.matmul(ag.square(F), np.ones((d, M)))
    sq_p = ag.matmul(np.ones((n, d)), ag.transpose(ag.square(P)))
    cross = ag.matmul(F, ag.transpose(P))
    dist = ag.add(ag.sub(sq_f, ag.scale(cross, 2.0)), sq_p)
    return ag.scale(ag.sum(ag.mul(alpha, dist)), 1.0 / (n * d))


def grn_loss(logits, labels, alpha, F, P, lam):
    """Cross-entropy plus ``lam`` times the prototype regulariser.

    Returns ``(total, cls, proto)``; ``proto`` is None when ``lam`` is 0.
    """
    cls = ag.cross_entropy_with_logits(logits, labels)
    if lam == 0:
        return cls, cls, None
    proto = proto_distance_loss(alpha, F, P)
    return ag.add(cls, ag.scale(proto, lam)), cls, proto


class GrnModel:
    """Holds every trainable tensor plus the feature standardizer."""

    def __init__(self, cfg: GrnConfig, rng=None):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(0) if rng is None else rng
        C, B, d, h, cc, L = cfg.n_channels, cfg.n_bands, cfg.d, cfg.hidden, cfg.conv_channels, cfg.n_classes
        n_in = C * B
        specs = [
            ("enc.w1", glorot(rng, (n_in, h), n_in, h)),
            ("enc.b1", np.zeros(h)),
            ("enc.w2", glorot(rng, (h, d), h, d)),
            ("enc.b2", np.zeros(d)),
            ("proto.P", rng.normal(0.0, 1.0 / np.sqrt(d), size=(cfg.M, d))),
            ("res.conv_w", glorot(rng, (cc, 2, 3, 3), 2 * 9, cc * 9)),
            ("res.conv_b", np.zeros(cc)),
            ("res.lin_w", glorot(rng, (cc, d), cc, d)),
            ("res.lin_b", np.zeros(d)),
            ("fuse.w1", glorot(rng, (7 * d, h), 7 * d, h)),
            ("fuse.b1", np.zeros(h)),
            ("fuse.w2", glorot(rng, (h, L), h, L)),
            ("fuse.b2", np.zeros(L)),
        ]
        self.params = {name: Tensor(v, requires_grad=True, name=name) for name, v in specs}
        self.standardizer = Standardizer()
        self.tensor_norm = ChannelNorm()

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    def parameters(self):
        return list(self.params.values())

    def state_dict(self) -> dict:
        out = {name: t.data.copy() for name, t in self.params.items()}
        if self.standardizer.fitted:
            out["std.mean"] = self.standardizer.mean.copy()
            out["std.std"] = self.standardizer.std.copy()
        if self.tensor_norm.fitted:
            out["tnorm.mean"] = self.tensor_norm.mean.copy()
            out["tnorm.std"] = self.tensor_norm.std.copy()
        return out

    def load_state_dict(self, state) -> None:
        for name, t in self.params.items():
            if state[name].shape != t.shape:
                raise ValueError(f"{name}: checkpoint shape {state[name].shape} != {t.shape}")
            t.data[...] = state[name]
        if "std.mean" in state:
            self.standardizer.mean = np.array(state["std.mean"])
            self.standardizer.std = np.array(state["std.std"])
        if "tnorm.mean" in state:
            self.tensor_norm.mean = np.array(state["tnorm.mean"])
            self.tensor_norm.std = np.array(state["tnorm.std"])

    # -- stages -----------------------------------------------------------------

    def encode(self, feats) -> Tensor:
        feats = np.asarray(feats, dtype=np.float64)
        expect = (self.cfg.n_channels, self.cfg.n_bands)
        if feats.ndim != 3 or feats.shape[1:] != expect:
            raise ValueError(f"encode: expected features [batch, {expect[0]}, {expect[1]}], got {feats.shape}")
        x = Tensor(self.standardizer.transform(feats))
        p = self.params
        h = ag.relu(ag.add(ag.matmul(x, p["enc.w1"]), p["enc.b1"]))
        return ag.add(ag.matmul(h, p["enc.w2"]), p["enc.b2"])

    def attention(self, F) -> Tensor:
        return prototype_attention(F, self.params["proto.P"], self.cfg.temperature)

    def resonance(self, alpha) -> Tensor:
        return prototype_resonance(alpha, self.params["proto.P"])

    def res_encode(self, tensors) -> Tensor:
        """[batch, K_r, C, C, 2] -> [batch, d]; shared conv per reference, then mean."""
        t = np.asarray(tensors, dtype=np.float64)
        if t.ndim != 5 or t.shape[4] != 2 or t.shape[2] != t.shape[3]:
            raise ValueError(f"res_encode: expected [batch, K_r, C, C, 2], got {t.shape}")
        n, k, C = t.shape[:3]
        if C < 3:
            raise ValueError(f"res_encode: need C >= 3 for the 3x3 kernel, got C={C}")
        t = self.tensor_norm.transform(t)
        x = Tensor(np.ascontiguousarray(t.transpose(0, 1, 4, 2, 3).reshape(n * k, 2, C, C)))
        p = self.params
        h = ag.mean_pool_spatial(ag.relu(ag.conv2d(x, p["res.conv_w"], p["res.conv_b"])))
        h = ag.mean_axis(ag.reshape(h, (n, k, self.cfg.conv_channels)), 1)
        return ag.add(ag.matmul(h, p["res.lin_w"]), p["res.lin_b"])

    def fuse(self, F, R, G, use_R=True, use_G=True) -> Tensor:
        """MLP over [F, R, G, F-R, F-G, F*R, F*G]; disabled views contribute zero blocks."""
        zero = Tensor(np.zeros(F.shape))
        blocks = [
            F,
            R if use_R else zero,
            G if use_G else zero,
            ag.sub(F, R) if use_R else zero,
            ag.sub(F, G) if use_G else zero,
            ag.mul(F, R) if use_R else zero,
            ag.mul(F, G) if use_G else zero,
        ]
        p = self.params
        h = ag.relu(ag.add(ag.matmul(ag.concat(blocks), p["fuse.w1"]), p["fuse.b1"]))
        return ag.add(ag.matmul(h, p["fuse.w2"]), p["fuse.b2"])

    def forward(self, feats, tensors=None, variant="full") -> ForwardTrace:
        v = get_variant(variant)
        F = self.encode(feats)
        alpha = self.attention(F)
        R = self.resonance(alpha)
        if v.use_G:
            if tensors is None:
                raise ValueError(f"variant {v.name!r} needs resonance tensors")
            G = self.res_encode(tensors)
        else:
            G = Tensor(np.zeros(F.shape))
        logits = self.fuse(F, R, G, v.use_R, v.use_G)
        return ForwardTrace(F, alpha, R, G, logits)

    def loss(self, trace: ForwardTrace, labels, variant="full"):
        v = get_variant(variant)
        lam = self.cfg.lambda_proto if v.proto_loss else 0.0
        return grn_loss(trace.logits, labels, trace.alpha, trace.F, self.params["proto.P"], lam)


def forward_full(feats, tensors, model: GrnModel, variant="full") -> ForwardTrace:
    return model.forward(feats, tensors, variant)
