"""
HydroNet Forecasting Model

Two spatio-temporal message-passing blocks and an output head mapping a
lookback window of depth/flow observations to a joint H-step forecast.

Model structure (per block):
    GLU temporal conv -> edge-aware MPNN at every time step -> GLU temporal conv

MPNN (shared weights across time steps):
    m_ij = f_message(concat(h_i, a_ij W_a))
    h_j' = f_update(concat(h_j, sum_i m_ij))

Head:
    GLU temporal conv collapsing the remaining steps -> linear to H * 2

Tensors are laid out time-first internally: (T, [B,] N, C).
"""

import logging
from collections import OrderedDict
from typing import Dict, Optional, Tuple

import numpy as np

from .config import HydroNetConfig
from .dataset import NormStats, fit_edge_stats
from .errors import ShapeMismatch
from .graph import N_EDGE_FEATURES, PipeGraph
from .tensor import (
    Tensor,
    as_tensor,
    broadcast_to,
    concat,
    conv1d_causal,
    gather,
    matmul,
    no_grad,
    relu,
    reshape,
    scatter_sum,
    sigmoid,
    transpose,
)

logger = logging.getLogger(__name__)

ModelParams = Dict[str, Tensor]


def _glu_shapes(prefix: str, kernel: int, c_in: int, c_out: int) -> Dict[str, Tuple[Tuple[int, ...], int]]:
    fan_in = kernel * c_in
    return {
        f"{prefix}.value_w": ((kernel, c_in, c_out), fan_in),
        f"{prefix}.value_b": ((c_out,), 0),
        f"{prefix}.gate_w": ((kernel, c_in, c_out), fan_in),
        f"{prefix}.gate_b": ((c_out,), 0),
    }


def _mlp_shapes(prefix: str, c_in: int, hidden: int, c_out: int) -> Dict[str, Tuple[Tuple[int, ...], int]]:
    return {
        f"{prefix}.w1": ((c_in, hidden), c_in),
        f"{prefix}.b1": ((hidden,), 0),
        f"{prefix}.w2": ((hidden, c_out), hidden),
        f"{prefix}.b2": ((c_out,), 0),
    }


def param_shapes(config: HydroNetConfig) -> "OrderedDict[str, Tuple[Tuple[int, ...], int]]":
    """Name -> (shape, fan_in) in initialization order; fan_in 0 marks a bias."""
    config.check_receptive_field()
    hidden, d, k = config.hidden_channels, config.edge_embed_dim, config.temporal_kernel
    shapes: "OrderedDict[str, Tuple[Tuple[int, ...], int]]" = OrderedDict()
    shapes["edge_embed.W_a"] = ((config.edge_features, d), config.edge_features)
    for b in range(config.blocks):
        c_in = config.in_channels if b == 0 else hidden
        shapes.update(_glu_shapes(f"block{b}.tconv1", k, c_in, hidden))
        shapes.update(_mlp_shapes(f"block{b}.message", hidden + d, hidden, hidden))
        shapes.update(_mlp_shapes(f"block{b}.update", 2 * hidden, hidden, hidden))
        shapes.update(_glu_shapes(f"block{b}.tconv2", k, hidden, hidden))
    shapes.update(_glu_shapes("head.tconv", config.head_kernel, hidden, hidden))
    shapes["head.out_w"] = ((hidden, config.horizon * config.in_channels), hidden)
    shapes["head.out_b"] = ((config.horizon * config.in_channels,), 0)
    return shapes


def init_params(config: HydroNetConfig) -> ModelParams:
    """
    Seeded initialization: weights ~ U(-sqrt(1/fan_in), +sqrt(1/fan_in)),
    biases zero. Raises InvalidConfig when the lookback cannot feed the head.
    """
    rng = np.random.default_rng(config.seed if config.seed is not None else 0)
    params: ModelParams = OrderedDict()
    for name, (shape, fan_in) in param_shapes(config).items():
        if fan_in:
            bound = np.sqrt(1.0 / fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        else:
            data = np.zeros(shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


def count_parameters(params: ModelParams) -> int:
    return int(sum(p.size for p in params.values()))


def _block(params, prefix: str) -> Dict[str, Tensor]:
    start = prefix + "."
    return {name[len(start):]: p for name, p in params.items() if name.startswith(start)}


def temp_conv_gated(x, weights: Dict[str, Tensor]) -> Tensor:
    """
    GLU temporal convolution along the leading time axis, per node:

        conv_value(x) * sigmoid(conv_gate(x))

    x: (T, ..., C_in) -> (T - K + 1, ..., C_out).
    """
    value = conv1d_causal(x, weights["value_w"], weights["value_b"])
    gate = conv1d_causal(x, weights["gate_w"], weights["gate_b"])
    return value * sigmoid(gate)


def embed_edges(attrs, W_a) -> Tensor:
    """Linear edge embedding ``attrs @ W_a`` (no bias)."""
    attrs = as_tensor(attrs)
    if attrs.ndim != 2 or attrs.shape[1] != N_EDGE_FEATURES:
        raise ShapeMismatch(f"edge attributes must be E x {N_EDGE_FEATURES}, got {attrs.shape}")
    return matmul(attrs, W_a)


def _mlp(x: Tensor, weights: Dict[str, Tensor]) -> Tensor:
    hidden = relu(matmul(x, weights["w1"]) + weights["b1"])
    return matmul(hidden, weights["w2"]) + weights["b2"]


def message_routes(graph: PipeGraph, bidirectional: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """(sender, receiver) node index per message; reversed copies appended when bidirectional."""
    senders, receivers = graph.source_index, graph.target_index
    if bidirectional:
        return np.concatenate([senders, receivers]), np.concatenate([receivers, senders])
    return senders, receivers


def mpnn_layer(h, edge_embeds, graph: PipeGraph, weights: Dict[str, Tensor],
               bidirectional: bool = False) -> Tensor:
    """
    One edge-aware message-passing step.

    Parameters:
    -----------
    h : Tensor (..., N, hidden)
        Node states; leading axes (time, batch) share the weights
    edge_embeds : Tensor (E, d)
    graph : PipeGraph
    weights : dict
        ``message.*`` and ``update.*`` MLP weights of the block

    Returns:
    --------
    Tensor (..., N, hidden). Nodes without inflowing pipes see a zero aggregate.
    """
    h, edge_embeds = as_tensor(h), as_tensor(edge_embeds)
    n = graph.n_nodes
    if h.ndim < 2 or h.shape[-2] != n:
        raise ShapeMismatch(f"node states {h.shape} do not match {n} graph nodes")
    if edge_embeds.ndim != 2 or edge_embeds.shape[0] != graph.n_edges:
        raise ShapeMismatch(f"edge embeddings {edge_embeds.shape} do not match {graph.n_edges} pipes")

    senders, receivers = message_routes(graph, bidirectional)
    if bidirectional:
        edge_embeds = concat([edge_embeds, edge_embeds], axis=0)

    h_send = gather(h, senders)
    e = broadcast_to(edge_embeds, h_send.shape[:-1] + (edge_embeds.shape[-1],))
    messages = _mlp(concat([h_send, e], axis=-1), _block(weights, "message"))
    aggregate = scatter_sum(messages, receivers, n)
    return _mlp(concat([h, aggregate], axis=-1), _block(weights, "update"))


def forward(window, graph: PipeGraph, params: ModelParams, config: HydroNetConfig,
            edge_attrs: Optional[np.ndarray] = None) -> Tensor:
    """
    Forecast H steps from an L-step window (normalized space).

    Parameters:
    -----------
    window : (L, N, 2) or (B, L, N, 2)
    graph : PipeGraph
    params : ModelParams
    config : HydroNetConfig
    edge_attrs : np.ndarray (E, 9), optional
        z-scored edge attributes; fitted on ``graph`` when omitted

    Returns:
    --------
    Tensor (H, N, 2) or (B, H, N, 2)
    """
    x = as_tensor(window)
    batched = x.ndim == 4
    if x.ndim not in (3, 4) or x.shape[-3] != config.lookback or x.shape[-1] != config.in_channels:
        raise ShapeMismatch(
            f"window must be [B x] {config.lookback} x N x {config.in_channels}, got {x.shape}"
        )
    if x.shape[-2] != graph.n_nodes:
        raise ShapeMismatch(f"window has {x.shape[-2]} nodes, graph has {graph.n_nodes}")
    if batched:
        x = transpose(x, (1, 0, 2, 3))

    if edge_attrs is None:
        edge_attrs = graph.edge_attr_matrix(fit_edge_stats(graph))
    embeds = embed_edges(edge_attrs, params["edge_embed.W_a"])

    h = x
    for b in range(config.blocks):
        block = _block(params, f"block{b}")
        h = temp_conv_gated(h, _block(block, "tconv1"))
        h = mpnn_layer(h, embeds, graph, block, config.bidirectional)
        h = temp_conv_gated(h, _block(block, "tconv2"))

    head = _block(params, "head")
    h = temp_conv_gated(h, _block(head, "tconv"))
    out = matmul(h, head["out_w"]) + head["out_b"]

    # (1, [B,] N, H*2) -> ([B,] H, N, 2)
    n, horizon, channels = graph.n_nodes, config.horizon, config.in_channels
    if batched:
        out = reshape(out, (out.shape[1], n, horizon, channels))
        return transpose(out, (0, 2, 1, 3))
    out = reshape(out, (n, horizon, channels))
    return transpose(out, (1, 0, 2))


class HydroNet:
    """
    HydroNet model bound to a pipe network.

    Holds the architecture config, parameters and the edge-attribute
    statistics the embedding was trained with.
    """

    def __init__(self, config: HydroNetConfig, graph: PipeGraph,
                 params: Optional[ModelParams] = None,
                 edge_stats: Optional[NormStats] = None):
        self.config = config
        self.graph = graph
        self.params = params if params is not None else init_params(config)
        self.edge_stats = edge_stats if edge_stats is not None else fit_edge_stats(graph)
        self.edge_attrs = graph.edge_attr_matrix(self.edge_stats)

    @property
    def n_parameters(self) -> int:
        return count_parameters(self.params)

    def __call__(self, window) -> Tensor:
        return forward(window, self.graph, self.params, self.config, self.edge_attrs)

    def predict(self, window: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Untaped forward pass on numpy windows, batched for memory."""
        window = np.asarray(window, dtype=np.float64)
        with no_grad():
            if window.ndim == 3:
                return self(window).data
            chunks = [self(window[i:i + batch_size]).data for i in range(0, len(window), batch_size)]
        if not chunks:
            return np.zeros((0, self.config.horizon, self.graph.n_nodes, self.config.in_channels))
        return np.concatenate(chunks, axis=0)

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, p.data.copy()) for name, p in self.params.items())

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            if name not in state:
                raise ShapeMismatch(f"missing parameter {name!r}")
            if state[name].shape != p.shape:
                raise ShapeMismatch(f"parameter {name!r} has shape {state[name].shape}, expected {p.shape}")
            p.data[...] = state[name]

    def summary(self) -> str:
        cfg = self.config
        lines = [
            f"HydroNet: L={cfg.lookback} H={cfg.horizon} hidden={cfg.hidden_channels} "
            f"d={cfg.edge_embed_dim} K={cfg.temporal_kernel} head_K={cfg.head_kernel}"
            f"{' bidirectional' if cfg.bidirectional else ''}",
            f"  graph: {self.graph.n_nodes} nodes, {self.graph.n_edges} pipes",
            f"  parameters: {self.n_parameters:,}",
        ]
        return "\n".join(lines)
