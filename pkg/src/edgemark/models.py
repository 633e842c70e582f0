"""Inductive node-level GNN models: two layer families, training, inference.

mean-aggregate layers compute act(H W_self + mean_nbr(H) W_neigh + b);
normalized-conv layers compute act(S H W + b) where S is the symmetric
degree-normalized adjacency with self loops. The forward pass depends only
on (model, graph), so a model can be evaluated on any graph whose feature
dimension matches its first layer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import ConfigError, DimensionError, NumericError, ParseError, UsageError
from .graphs import Graph
from .optim import Adam

LAYER_KINDS = ("mean-aggregate", "normalized-conv")
ACTIVATIONS = ("elu", "none")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_dim: int
    out_dim: int
    activation: str

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ConfigError("layer dims must be positive")


def default_arch(in_dim: int, num_classes: int, hidden: int = 32, depth: int = 4,
                 kind: str = "mean-aggregate") -> list[LayerSpec]:
    """Stack of `depth` layers; ELU everywhere except the output layer."""
    if depth < 1:
        raise ConfigError("depth must be >= 1")
    dims = [in_dim] + [hidden] * (depth - 1) + [num_classes]
    return [LayerSpec(kind, dims[i], dims[i + 1],
                      "elu" if i < depth - 1 else "none")
            for i in range(depth)]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    epochs: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")


class GnnModel:
    """Layer specs plus per-layer weight matrices and bias vectors."""

    def __init__(self, layers: list[LayerSpec], params: list[dict], seed: int = 0):
        for a, b in zip(layers, layers[1:]):
            if a.out_dim != b.in_dim:
                raise ConfigError(f"layer dims do not chain: {a.out_dim} -> {b.in_dim}")
        self.layers = tuple(layers)
        self.params = params
        self.seed = seed

    @classmethod
    def init(cls, layers: list[LayerSpec], seed: int = 0) -> "GnnModel":
        rng = np.random.default_rng(seed)
        params = []
        for spec in layers:
            limit = np.sqrt(6.0 / (spec.in_dim + spec.out_dim))
            def w():
                return rng.uniform(-limit, limit, size=(spec.in_dim, spec.out_dim))
            if spec.kind == "mean-aggregate":
                params.append({"w_self": w(), "w_neigh": w(),
                               "b": np.zeros((1, spec.out_dim))})
            else:
                params.append({"w": w(), "b": np.zeros((1, spec.out_dim))})
        return cls(list(layers), params, seed)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def param_arrays(self) -> list[np.ndarray]:
        out = []
        for p in self.params:
            out.extend(p[k] for k in sorted(p))
        return out

    def _set_param_arrays(self, arrays: list[np.ndarray]):
        it = iter(arrays)
        for p in self.params:
            for k in sorted(p):
                p[k] = next(it)

    def copy(self) -> "GnnModel":
        return GnnModel(list(self.layers),
                        [{k: v.copy() for k, v in p.items()} for p in self.params],
                        self.seed)


def forward_tensors(model: GnnModel, g: Graph, tape: Tape | None = None,
                    params: list[Tensor] | None = None,
                    features: Tensor | None = None):
    """Forward pass returning (logits, probs) Tensors.

    When training, pass the tape plus parameter tensors from
    ``wrap_params``; ``features`` overrides g.x (used when features are
    being optimized).
    """
    if g.feature_dim != model.in_dim:
        raise DimensionError(
            f"graph feature dim {g.feature_dim} != model input dim {model.in_dim}")
    agg = g.agg()
    h = features if features is not None else ad.constant(g.x)
    idx = 0
    flat = params
    for spec, layer in zip(model.layers, model.params):
        if flat is not None:
            tensors = {k: flat[idx + i] for i, k in enumerate(sorted(layer))}
            idx += len(layer)
        else:
            tensors = {k: ad.constant(v) for k, v in layer.items()}
        if spec.kind == "mean-aggregate":
            nbr = ad.neighbor_mean(h, agg.src, agg.dst, agg.inv_deg)
            h = ad.add(ad.add(ad.matmul(h, tensors["w_self"]),
                              ad.matmul(nbr, tensors["w_neigh"])),
                       tensors["b"])
        else:
            mixed = ad.normalized_adjacency(h, agg.src, agg.dst,
                                            agg.conv_edge_w, agg.conv_self_w)
            h = ad.add(ad.matmul(mixed, tensors["w"]), tensors["b"])
        if spec.activation == "elu":
            h = ad.elu(h)
    probs = ad.row_softmax(h)
    return h, probs


def wrap_params(model: GnnModel, tape: Tape) -> list[Tensor]:
    return [tape.parameter(a) for a in model.param_arrays()]


def forward(model: GnnModel, g: Graph):
    """Inference only; returns (logits, probs) as plain arrays."""
    logits, probs = forward_tensors(model, g)
    return logits.data, probs.data


def train_primary(g_train: Graph, arch: list[LayerSpec], cfg: TrainConfig = TrainConfig()) -> GnnModel:
    """Full-batch Adam training of the mean cross entropy over all nodes."""
    if g_train.y is None:
        raise UsageError("train_primary needs a labeled graph")
    model = GnnModel.init(arch, cfg.seed)
    if model.out_dim < g_train.num_classes:
        raise ConfigError(f"output dim {model.out_dim} < {g_train.num_classes} classes")
    opt = Adam(model.param_arrays(), cfg.learning_rate, cfg.weight_decay)
    for epoch in range(cfg.epochs):
        tape = Tape()
        params = wrap_params(model, tape)
        logits, _ = forward_tensors(model, g_train, tape, params)
        loss = ad.cross_entropy_logits(logits, g_train.y)
        if not np.isfinite(loss.data):
            raise NumericError(f"training loss diverged at epoch {epoch}")
        tape.backward(loss)
        opt.step([p.grad for p in params])
    return model


def test_accuracy(model: GnnModel, g: Graph) -> float:
    """Fraction of nodes whose argmax prediction equals the label."""
    if g.y is None:
        raise UsageError("test_accuracy needs a labeled graph")
    if g.num_nodes == 0:
        raise UsageError("test_accuracy on an empty graph is undefined")
    logits, _ = forward(model, g)
    return float(np.mean(np.argmax(logits, axis=1) == g.y))


def test_cross_entropy(model: GnnModel, g: Graph) -> float:
    if g.y is None:
        raise UsageError("test_cross_entropy needs a labeled graph")
    logits, _ = forward(model, g)
    return float(ad.cross_entropy_logits(ad.constant(logits), g.y).data)


# ---------------------------------------------------------------------------
# checkpoints


def save_model(model: GnnModel, path) -> None:
    doc = {
        "seed": model.seed,
        "layers": [{"kind": s.kind, "in_dim": s.in_dim, "out_dim": s.out_dim,
                    "activation": s.activation} for s in model.layers],
        "params": [{k: v.tolist() for k, v in p.items()} for p in model.params],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_model(path) -> GnnModel:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: not valid JSON ({exc})") from exc
    for field in ("layers", "params"):
        if field not in doc:
            raise ParseError(f"{path}: missing field '{field}'")
    try:
        layers = [LayerSpec(**spec) for spec in doc["layers"]]
    except (TypeError, ConfigError) as exc:
        raise ParseError(f"{path}: field 'layers' is malformed ({exc})") from exc
    params = []
    for i, (spec, p) in enumerate(zip(layers, doc["params"])):
        expect = {"w_self", "w_neigh", "b"} if spec.kind == "mean-aggregate" else {"w", "b"}
        if set(p) != expect:
            raise ParseError(f"{path}: params[{i}] keys {sorted(p)} != {sorted(expect)}")
        params.append({k: np.asarray(v, dtype=np.float64) for k, v in p.items()})
        for k, v in params[-1].items():
            want = (1, spec.out_dim) if k == "b" else (spec.in_dim, spec.out_dim)
            if v.shape != want:
                raise ParseError(f"{path}: params[{i}].{k} shape {v.shape} != {want}")
    if len(params) != len(layers):
        raise ParseError(f"{path}: {len(params)} param blocks for {len(layers)} layers")
    return GnnModel(layers, params, doc.get("seed", 0))
