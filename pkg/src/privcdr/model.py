"""One domain's model: everything it trains and the forward pieces it runs."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from .datasets import PreparedDomain
from .disentangle import DisentangledBundle, DisentangleMLP, augment_dropout, disentangle
from .graph import BipartiteGraph, build_graph, init_id_embeddings, propagate
from .multimodal import ModalityProjector, item_representation, project_modality, user_representation
from .numeric import Parameter, Tensor, param_rng
from .objectives import AttentionScorer, FusionConfig, LogTemperature, Predictor, fuse
from .privacy import ObfuscatedBundle

ABLATIONS = ("rev", "vis", "txt", "com", "spe", "intra", "inter", "obf")


@dataclass(frozen=True)
class TrainConfig:
    """Every knob of one training run. ``ablate`` holds names from :data:`ABLATIONS`."""

    epochs: int = 200
    batch_size: int = 512
    lr: float = 0.001
    alpha: float = 0.001
    lam: float = 0.01
    neg_ratio: int = 1
    patience: int = 10
    seed: int = 0
    id_dim: int = 64
    layers: int = 2
    proj_dim: int = 64
    hidden_dim: int = 128
    dim: int = 64
    predictor_hidden: int = 64
    fusion: str = "sum"
    dropout: float = 0.2
    tau_init: float = 0.2
    similarity: str = "cosine"
    eval_k: int = 10
    eval_negatives: int = 99
    dtype: str = "float32"
    ablate: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "ablate", frozenset(self.ablate))
        unknown = self.ablate - set(ABLATIONS)
        if unknown:
            raise ValueError(f"unknown ablation(s) {sorted(unknown)}; expected names from {ABLATIONS}")
        if {"com", "spe"} <= self.ablate:
            raise ValueError("cannot drop both common and specific embeddings")
        if self.batch_size < 1 or self.patience < 1 or self.epochs < 0:
            raise ValueError("batch_size and patience must be >= 1, epochs >= 0")
        if self.lam < 0 or self.alpha < 0:
            raise ValueError("lam and alpha must be >= 0")
        FusionConfig(self.fusion)

    @property
    def lambda_used(self) -> float | None:
        return None if "obf" in self.ablate else self.lam

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def uses(self, part: str) -> bool:
        return part not in self.ablate

    def with_(self, **changes) -> "TrainConfig":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["ablate"] = sorted(self.ablate)
        return out


class DomainModel:
    def __init__(self, domain: str, n_users: int, n_items: int, raw_dims: dict[str, int], cfg: TrainConfig):
        self.domain, self.cfg = domain, cfg
        self.n_users, self.n_items = n_users, n_items
        seed, dt = cfg.seed, cfg.np_dtype
        p = f"{domain}."
        self.user_emb = Parameter(init_id_embeddings(n_users, cfg.id_dim, param_rng(seed, p + "emb.user"), dtype=dt),
                                  p + "emb.user")
        self.item_emb = Parameter(init_id_embeddings(n_items, cfg.id_dim, param_rng(seed, p + "emb.item"), dtype=dt),
                                  p + "emb.item")
        self.projectors: dict[str, ModalityProjector] = {}
        for modality, flag in (("review", "rev"), ("visual", "vis"), ("text", "txt")):
            if cfg.uses(flag):
                self.projectors[modality] = ModalityProjector(p + modality, raw_dims[modality], cfg.proj_dim, seed, dt)
        id_width = (cfg.layers + 1) * cfg.id_dim
        self.user_width = id_width + (cfg.proj_dim if "review" in self.projectors else 0)
        self.item_width = id_width + cfg.proj_dim * sum(m in self.projectors for m in ("visual", "text"))
        self.mlp_s = DisentangleMLP(p + "dis.specific", self.user_width, cfg.hidden_dim, cfg.dim, seed, dt)
        self.mlp_c = DisentangleMLP(p + "dis.common", self.user_width, cfg.hidden_dim, cfg.dim, seed, dt)
        self.fusion = FusionConfig(cfg.fusion)
        survivors = 2 - len({"com", "spe"} & cfg.ablate)
        pref_dim = self.fusion.out_dim(cfg.dim) if survivors == 2 else cfg.dim
        self.scorer = AttentionScorer(p + "fusion.attention", cfg.dim, seed, dt) \
            if cfg.fusion == "attention" and survivors == 2 else None
        self.predictor = Predictor(p + "predictor", pref_dim, self.item_width, cfg.predictor_hidden, seed, dt)
        self.temperature = LogTemperature(p + "tau", cfg.tau_init, dt)

    def parameters(self) -> list[Parameter]:
        params = [self.user_emb, self.item_emb]
        for proj in self.projectors.values():
            params += proj.parameters()
        params += self.mlp_s.parameters() + self.mlp_c.parameters()
        if self.scorer is not None:
            params += self.scorer.parameters()
        params += self.predictor.parameters() + self.temperature.parameters()
        return params

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = {p.name: p for p in self.parameters()}
        if set(params) != set(state):
            missing, extra = set(params) - set(state), set(state) - set(params)
            raise KeyError(f"checkpoint mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise ValueError(f"{name}: checkpoint shape {state[name].shape} vs model {p.shape}")
            p.data[...] = state[name]

    # -- forward pieces ----------------------------------------------------------

    def encode(self, graph: BipartiteGraph, features: dict[str, Tensor]) -> tuple[Tensor, Tensor]:
        ids = propagate(graph, self.user_emb, self.item_emb, self.cfg.layers)
        proj = {m: project_modality(features[m], pr) for m, pr in self.projectors.items()}
        h_user = user_representation(ids.user, proj.get("review"))
        h_item = item_representation(ids.item, proj.get("visual"), proj.get("text"))
        return h_user, h_item

    def disentangle(self, h_user: Tensor, rng: np.random.Generator) -> DisentangledBundle:
        p_s, p_c = disentangle(h_user, self.mlp_s, self.mlp_c)
        a_s, a_c, mask = augment_dropout(h_user, self.mlp_s, self.mlp_c, self.cfg.dropout, rng)
        return DisentangledBundle(self.domain, p_s, p_c, a_s, a_c, mask)

    def preferences(self, bundle: ObfuscatedBundle) -> Tensor:
        """Fused user preferences; an ablated half leaves the survivor unfused."""
        if "com" in self.cfg.ablate:
            return bundle.specific
        if "spe" in self.cfg.ablate:
            return bundle.common
        return fuse(bundle.common, bundle.specific, self.fusion, self.scorer)


def feature_tensors(part: PreparedDomain, dtype) -> dict[str, Tensor]:
    return {m: Tensor(t.matrix.astype(dtype)) for m, t in part.features.items()}


def raw_dims(part: PreparedDomain) -> dict[str, int]:
    return {m: t.dims for m, t in part.features.items()}


def domain_graph(part: PreparedDomain, dtype) -> BipartiteGraph:
    return build_graph(part.split.train, dtype=dtype)
