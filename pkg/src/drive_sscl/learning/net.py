"""
Graph convolutional network over ST-graphs with analytic gradients.

Architecture: two encoder MLPs (semantic one-hot; geometric + lane features),
``layers`` LEConv propagation layers, then instance-level pooling
``z = MLP_1(sum_u MLP_2(sum_{i in u} MLP_3(x_i)))``. A batch of graphs is
evaluated as one disjoint union, so every operation is a dense matmul or a
segment sum.
"""

import logging
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from ..core.stgraph import GEOMETRIC_DIM, LANE_DIM, SEMANTIC_DIM, StGraph
from ..exceptions import ConfigurationError, UsageError
from ..models import ModelConfig
from ..utils.logger import get_logger
from ..utils.serialization import load_checkpoint, save_checkpoint

NORM_EPS = 1e-12
PROTOTYPES = "prototypes"


class ModelParams:
    """Named learnable tensors, kept in a fixed order."""

    def __init__(self, tensors: Dict[str, np.ndarray]):
        self.tensors: Dict[str, np.ndarray] = dict(tensors)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        self.tensors[name] = value

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    @property
    def names(self) -> List[str]:
        return list(self.tensors)

    @property
    def prototypes(self) -> np.ndarray:
        return self.tensors[PROTOTYPES]

    @property
    def size(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.tensors.items()})

    def all_finite(self) -> bool:
        return all(bool(np.all(np.isfinite(t))) for t in self.tensors.values())


class GradientTape:
    """Per-parameter gradient accumulators shaped like a ``ModelParams``."""

    def __init__(self, params: ModelParams):
        self.grads: Dict[str, np.ndarray] = {k: np.zeros_like(v) for k, v in params.items()}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.grads[name]

    def add(self, name: str, value: np.ndarray) -> None:
        self.grads[name] += value

    def zero(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def scale(self, factor: float) -> None:
        for g in self.grads.values():
            g *= factor

    def norms(self) -> Dict[str, float]:
        return {k: float(np.linalg.norm(g)) for k, g in self.grads.items()}

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(g * g)) for g in self.grads.values())))


class GraphBatch(BaseModel):
    """Disjoint union of canonicalized graphs."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    semantic: np.ndarray        # (N, 8)
    geo_lane: np.ndarray        # (N, 15)
    edges: np.ndarray           # (E, 2)
    weights: np.ndarray         # (E,)
    node_instance: np.ndarray   # (N,) global instance index
    instance_graph: np.ndarray  # (U,) graph index
    num_graphs: int

    @property
    def num_nodes(self) -> int:
        return int(self.semantic.shape[0])

    @property
    def num_instances(self) -> int:
        return int(self.instance_graph.shape[0])

    @classmethod
    def from_graphs(
        cls,
        graphs: Sequence[StGraph],
        config: Optional[ModelConfig] = None,
        dtype: type = np.float64,
    ) -> "GraphBatch":
        config = config or ModelConfig()
        semantic, geo_lane, edges, weights, node_instance, instance_graph = [], [], [], [], [], []
        offset = 0
        inst_offset = 0
        for g_idx, graph in enumerate(graphs):
            graph = graph.canonical()
            sem = graph.semantic if config.use_semantic else np.zeros_like(graph.semantic)
            geo = graph.geometric if config.use_geometric else np.zeros_like(graph.geometric)
            lane = graph.lane if config.use_lane else np.zeros_like(graph.lane)
            semantic.append(sem)
            geo_lane.append(np.concatenate([geo, lane], axis=1))
            e, w = graph.edges()
            edges.append(e + offset)
            weights.append(w)
            _, local = np.unique(graph.instance_id, return_inverse=True)
            n_inst = int(local.max()) + 1 if local.size else 0
            node_instance.append(local.reshape(-1) + inst_offset)
            instance_graph.append(np.full(n_inst, g_idx, dtype=np.int64))
            offset += graph.num_nodes
            inst_offset += n_inst

        def cat(parts: List[np.ndarray], shape: Tuple[int, ...], kind: type) -> np.ndarray:
            return np.concatenate(parts, axis=0).astype(kind) if parts else np.zeros(shape, dtype=kind)

        return cls(
            semantic=cat(semantic, (0, SEMANTIC_DIM), dtype),
            geo_lane=cat(geo_lane, (0, GEOMETRIC_DIM + LANE_DIM), dtype),
            edges=cat(edges, (0, 2), np.int64).reshape(-1, 2),
            weights=cat(weights, (0,), dtype),
            node_instance=cat(node_instance, (0,), np.int64),
            instance_graph=cat(instance_graph, (0,), np.int64),
            num_graphs=len(graphs),
        )


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def _segment_sum(values: np.ndarray, segments: np.ndarray, count: int) -> np.ndarray:
    out = np.zeros((count,) + values.shape[1:], dtype=values.dtype)
    np.add.at(out, segments, values)
    return out


def leconv_layer(
    x: np.ndarray,
    edges: np.ndarray,
    weights: np.ndarray,
    W1: np.ndarray,
    W2: np.ndarray,
    W3: np.ndarray,
) -> Tuple[np.ndarray, tuple]:
    """
    ``x'_i = relu(x_i W1 + sum_{j ~ i} e_ij (x_i W2 - x_j W3))`` over undirected edges.

    Returns the output and the cache consumed by ``leconv_backward``.
    """
    n = x.shape[0]
    src, dst = edges[:, 0], edges[:, 1]
    deg = np.zeros(n, dtype=x.dtype)
    np.add.at(deg, src, weights)
    np.add.at(deg, dst, weights)
    xw3 = x @ W3
    neigh = np.zeros((n, W3.shape[1]), dtype=x.dtype)
    np.add.at(neigh, src, weights[:, None] * xw3[dst])
    np.add.at(neigh, dst, weights[:, None] * xw3[src])
    pre = x @ W1 + deg[:, None] * (x @ W2) - neigh
    return _relu(pre), (x, edges, weights, deg, pre)


def leconv_backward(
    grad_out: np.ndarray, cache: tuple, W1: np.ndarray, W2: np.ndarray, W3: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Gradients w.r.t. (x, W1, W2, W3)."""
    x, edges, weights, deg, pre = cache
    src, dst = edges[:, 0], edges[:, 1]
    dpre = grad_out * (pre > 0)
    da = deg[:, None] * dpre
    db = np.zeros_like(dpre)
    np.add.at(db, dst, -weights[:, None] * dpre[src])
    np.add.at(db, src, -weights[:, None] * dpre[dst])
    dx = dpre @ W1.T + da @ W2.T + db @ W3.T
    return dx, x.T @ dpre, x.T @ da, x.T @ db


class ForwardState:
    """Intermediate values of one forward pass, consumed by ``backward``."""

    def __init__(self, batch: GraphBatch):
        self.batch = batch
        self.mlp: Dict[str, tuple] = {}
        self.conv: List[tuple] = []
        self.raw: Optional[np.ndarray] = None
        self.norm: Optional[np.ndarray] = None
        self.z: Optional[np.ndarray] = None


class GCNModel:
    """
    LEConv graph network producing one embedding per ST-graph.

    Every MLP has one hidden layer with ReLU. The encoder MLPs and MLP_3/MLP_2
    end with ReLU; MLP_1 ends linear.

    Example:
        >>> model = GCNModel(ModelConfig(), num_classes=5)
        >>> params = model.init_params(np.random.default_rng(0))
        >>> z = model.embed([graph], params)
    """

    def __init__(
        self,
        config: Optional[ModelConfig] = None,
        num_classes: int = 1,
        logger: Optional[logging.Logger] = None,
    ):
        self.config = config or ModelConfig()
        self.num_classes = num_classes
        self.logger = logger or get_logger(__name__)
        self._last_state: Optional[ForwardState] = None

        enc, hid, out = self.config.encoder_dim, self.config.hidden_dim, self.config.embedding_dim
        # name -> (in, hidden, out, relu on output)
        self.mlps: Dict[str, Tuple[int, int, int, bool]] = {
            "mlp_s": (SEMANTIC_DIM, enc, enc, True),
            "mlp_g": (GEOMETRIC_DIM + LANE_DIM, enc, enc, True),
            "mlp_3": (hid, hid, hid, True),
            "mlp_2": (hid, hid, hid, True),
            "mlp_1": (hid, hid, out, False),
        }
        self.conv_dims = [(2 * enc if l == 0 else hid, hid) for l in range(self.config.layers)]

    # ------------------------------------------------------------------
    # parameters
    # ------------------------------------------------------------------

    def param_shapes(self) -> Dict[str, Tuple[int, ...]]:
        shapes: Dict[str, Tuple[int, ...]] = {}
        for name in ("mlp_s", "mlp_g"):
            self._mlp_shapes(name, shapes)
        for l, (d_in, d_out) in enumerate(self.conv_dims):
            for w in ("w1", "w2", "w3"):
                shapes[f"conv{l}.{w}"] = (d_in, d_out)
        for name in ("mlp_3", "mlp_2", "mlp_1"):
            self._mlp_shapes(name, shapes)
        shapes[PROTOTYPES] = (self.num_classes, self.config.embedding_dim)
        return shapes

    def _mlp_shapes(self, name: str, shapes: Dict[str, Tuple[int, ...]]) -> None:
        d_in, d_hid, d_out, _ = self.mlps[name]
        shapes[f"{name}.0.weight"] = (d_in, d_hid)
        shapes[f"{name}.0.bias"] = (d_hid,)
        shapes[f"{name}.1.weight"] = (d_hid, d_out)
        shapes[f"{name}.1.bias"] = (d_out,)

    def init_params(self, rng: np.random.Generator) -> ModelParams:
        """Glorot-uniform weights, zero biases, unit-norm Gaussian prototypes."""
        dtype = np.dtype(self.config.precision)
        tensors: Dict[str, np.ndarray] = {}
        for name, shape in self.param_shapes().items():
            if name == PROTOTYPES:
                p = rng.standard_normal(shape)
                p /= np.maximum(np.linalg.norm(p, axis=1, keepdims=True), NORM_EPS)
                tensors[name] = p.astype(dtype)
            elif name.endswith(".bias"):
                tensors[name] = np.zeros(shape, dtype=dtype)
            else:
                limit = np.sqrt(6.0 / (shape[0] + shape[1]))
                tensors[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
        return ModelParams(tensors)

    def check_params(self, params: ModelParams) -> None:
        for name, shape in self.param_shapes().items():
            if name not in params.tensors:
                raise ConfigurationError(f"missing parameter tensor '{name}'")
            if params[name].shape != shape:
                raise ConfigurationError(
                    f"parameter '{name}' has shape {params[name].shape}, expected {shape}"
                )

    # ------------------------------------------------------------------
    # building blocks
    # ------------------------------------------------------------------

    def _mlp(self, name: str, x: np.ndarray, params: ModelParams, state: ForwardState) -> np.ndarray:
        relu_out = self.mlps[name][3]
        p0 = x @ params[f"{name}.0.weight"] + params[f"{name}.0.bias"]
        h = _relu(p0)
        p1 = h @ params[f"{name}.1.weight"] + params[f"{name}.1.bias"]
        state.mlp[name] = (x, p0, h, p1)
        return _relu(p1) if relu_out else p1

    def _mlp_backward(self, name: str, dy: np.ndarray, params: ModelParams, state: ForwardState, tape: GradientTape) -> np.ndarray:
        x, p0, h, p1 = state.mlp[name]
        dp1 = dy * (p1 > 0) if self.mlps[name][3] else dy
        tape.add(f"{name}.1.weight", h.T @ dp1)
        tape.add(f"{name}.1.bias", dp1.sum(axis=0))
        dp0 = (dp1 @ params[f"{name}.1.weight"].T) * (p0 > 0)
        tape.add(f"{name}.0.weight", x.T @ dp0)
        tape.add(f"{name}.0.bias", dp0.sum(axis=0))
        return dp0 @ params[f"{name}.0.weight"].T

    def _batch(self, graphs) -> GraphBatch:
        if isinstance(graphs, GraphBatch):
            return graphs
        if isinstance(graphs, StGraph):
            graphs = [graphs]
        return GraphBatch.from_graphs(graphs, self.config, np.dtype(self.config.precision).type)

    def encode(self, graphs, params: ModelParams, state: Optional[ForwardState] = None) -> np.ndarray:
        """Per-node ``x0 = [MLP_g([g, f]), MLP_s(s)]``."""
        batch = self._batch(graphs)
        state = state or ForwardState(batch)
        for name in ("mlp_s", "mlp_g"):
            if params[f"{name}.0.weight"].shape[0] != self.mlps[name][0]:
                raise ConfigurationError(f"{name} input width does not match node attributes")
        s = self._mlp("mlp_s", batch.semantic, params, state)
        g = self._mlp("mlp_g", batch.geo_lane, params, state)
        return np.concatenate([g, s], axis=1)

    def propagate(self, x: np.ndarray, batch: GraphBatch, params: ModelParams, state: ForwardState) -> np.ndarray:
        for l in range(len(self.conv_dims)):
            x, cache = leconv_layer(
                x, batch.edges, batch.weights,
                params[f"conv{l}.w1"], params[f"conv{l}.w2"], params[f"conv{l}.w3"],
            )
            state.conv.append(cache)
        return x

    def aggregate(self, x: np.ndarray, batch: GraphBatch, params: ModelParams, state: ForwardState) -> np.ndarray:
        """Instance-level pooling; an empty graph yields ``MLP_1(0)``."""
        h3 = self._mlp("mlp_3", x, params, state)
        per_instance = _segment_sum(h3, batch.node_instance, batch.num_instances)
        h2 = self._mlp("mlp_2", per_instance, params, state)
        per_graph = _segment_sum(h2, batch.instance_graph, batch.num_graphs)
        y = self._mlp("mlp_1", per_graph, params, state)
        state.raw = y
        if not self.config.normalize:
            return y
        norm = np.maximum(np.linalg.norm(y, axis=1, keepdims=True), NORM_EPS)
        state.norm = norm
        return y / norm

    # ------------------------------------------------------------------
    # public passes
    # ------------------------------------------------------------------

    def forward(self, graphs, params: ModelParams) -> Tuple[np.ndarray, ForwardState]:
        """Embeddings ``(G, D)`` of a list of graphs plus the cached state."""
        batch = self._batch(graphs)
        state = ForwardState(batch)
        x = self.encode(batch, params, state)
        x = self.propagate(x, batch, params, state)
        z = self.aggregate(x, batch, params, state)
        state.z = z
        self._last_state = state
        return z, state

    def embed(self, graphs, params: ModelParams) -> np.ndarray:
        z, _ = self.forward(graphs, params)
        self._last_state = None
        return z

    def backward(
        self,
        grad_z: np.ndarray,
        state: Optional[ForwardState] = None,
        params: Optional[ModelParams] = None,
        tape: Optional[GradientTape] = None,
    ) -> GradientTape:
        """Exact gradients of a loss w.r.t. every network tensor, given dL/dz."""
        state = state or self._last_state
        if state is None or state.z is None:
            raise UsageError("backward called without a cached forward pass")
        if params is None:
            raise UsageError("backward needs the parameters used in the forward pass")
        tape = tape or GradientTape(params)
        batch = state.batch

        dy = np.asarray(grad_z, dtype=state.z.dtype)
        if self.config.normalize:
            z = state.z
            dy = (dy - z * np.sum(z * dy, axis=1, keepdims=True)) / state.norm
        d_graph = self._mlp_backward("mlp_1", dy, params, state, tape)
        d_h2 = d_graph[batch.instance_graph]
        d_inst = self._mlp_backward("mlp_2", d_h2, params, state, tape)
        d_h3 = d_inst[batch.node_instance]
        dx = self._mlp_backward("mlp_3", d_h3, params, state, tape)

        for l in reversed(range(len(self.conv_dims))):
            names = (f"conv{l}.w1", f"conv{l}.w2", f"conv{l}.w3")
            dx, g1, g2, g3 = leconv_backward(dx, state.conv[l], *(params[n] for n in names))
            for n, g in zip(names, (g1, g2, g3)):
                tape.add(n, g)

        enc = self.config.encoder_dim
        self._mlp_backward("mlp_g", dx[:, :enc], params, state, tape)
        self._mlp_backward("mlp_s", dx[:, enc:], params, state, tape)
        if state is self._last_state:
            self._last_state = None
        return tape

    def prototype_vectors(self, params: ModelParams) -> np.ndarray:
        """Class prototypes as used by the loss (unit norm when normalizing)."""
        p = params.prototypes
        if not self.config.normalize:
            return p
        return p / np.maximum(np.linalg.norm(p, axis=1, keepdims=True), NORM_EPS)

    def prototype_backward(self, grad_vectors: np.ndarray, params: ModelParams, tape: GradientTape) -> None:
        p = params.prototypes
        if not self.config.normalize:
            tape.add(PROTOTYPES, grad_vectors)
            return
        norm = np.maximum(np.linalg.norm(p, axis=1, keepdims=True), NORM_EPS)
        c = p / norm
        tape.add(PROTOTYPES, (grad_vectors - c * np.sum(c * grad_vectors, axis=1, keepdims=True)) / norm)


def save_model(
    path,
    model: GCNModel,
    params: ModelParams,
    class_names: Optional[Sequence[str]] = None,
):
    """Write a checkpoint holding every tensor and the model configuration."""
    return save_checkpoint(path, params.tensors, model.config, model.num_classes, class_names)


def load_model(path, logger: Optional[logging.Logger] = None) -> Tuple[GCNModel, ModelParams, List[str]]:
    tensors, config, num_classes, class_names = load_checkpoint(path)
    model = GCNModel(config, num_classes, logger)
    params = ModelParams(tensors)
    model.check_params(params)
    return model, params, class_names
