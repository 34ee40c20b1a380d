"""
Gradient Check Suite

Compares reverse-mode gradients of every differentiable primitive, the
training losses and the full HydroNet forecast (under a random linear
loss) against central finite differences in float64.
"""

import logging
import time
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np
import pandas as pd

from .config import HydroNetConfig
from .dataset import fit_edge_stats
from .hydronet import embed_edges, forward, init_params
from .synthetic_data import demo_graph
from .tensor import (
    Tensor,
    absolute,
    add,
    broadcast_to,
    concat,
    conv1d_causal,
    finite_diff_check,
    gather,
    matmul,
    mul,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    scatter_sum,
    sigmoid,
    square,
    sub,
    tanh,
    transpose,
)
from .training import loss

logger = logging.getLogger(__name__)

TOLERANCE = 1e-4
EPSILON = 1e-6


@dataclass
class GradCheckResult:
    name: str
    n_inputs: int
    max_rel_error: float
    seconds: float
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error < self.tolerance)


def _projected(out: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar projection ``sum(out * weights)`` so every output element matters."""
    return reduce_sum(mul(out, weights))


def _away_from_zero(rng: np.random.Generator, shape, margin: float = 0.1) -> np.ndarray:
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(margin, 1.0 + margin, size=shape)


def primitive_cases(rng: np.random.Generator):
    """(name, scalar function, input arrays) for each primitive."""
    # every input and projection has |v| >= 0.1
    def t(*shape):
        return _away_from_zero(rng, shape)

    targets = np.array([2, 0, 2, 1, 0])
    index = np.array([3, 0, 0, 2])
    p_mm, p_conv = t(2, 3, 4), t(4, 3, 2)
    p_ew = t(3, 4)
    p_cat, p_sc, p_ga = t(3, 5), t(2, 3, 2), t(2, 4, 3)
    p_bc, p_rs, p_tr = t(2, 3, 4), t(6, 2), t(4, 2, 3)
    p_emb = t(4, 2)

    return [
        ("add", lambda a, b: _projected(add(a, b), p_ew), [t(3, 4), t(4)]),
        ("sub", lambda a, b: _projected(sub(a, b), p_ew), [t(3, 4), t(3, 4)]),
        ("mul", lambda a, b: _projected(mul(a, b), p_ew), [t(3, 4), t(4)]),
        ("sigmoid", lambda a: _projected(sigmoid(a), p_ew), [t(3, 4)]),
        ("tanh", lambda a: _projected(tanh(a), p_ew), [t(3, 4)]),
        ("relu", lambda a: _projected(relu(a), p_ew), [t(3, 4)]),
        ("abs", lambda a: _projected(absolute(a), p_ew), [t(3, 4)]),
        ("square", lambda a: _projected(square(a), p_ew), [t(3, 4)]),
        ("matmul", lambda a, b: _projected(matmul(a, b), p_mm), [t(2, 3, 5), t(5, 4)]),
        ("conv1d_causal", lambda x, w, b: _projected(conv1d_causal(x, w, b), p_conv),
         [t(6, 3, 2), t(3, 2, 2), t(2)]),
        ("concat", lambda a, b: _projected(concat([a, b], axis=-1), p_cat), [t(3, 2), t(3, 3)]),
        ("scatter_sum", lambda m: _projected(scatter_sum(m, targets, 3), p_sc), [t(2, 5, 2)]),
        ("gather", lambda x: _projected(gather(x, index), p_ga), [t(2, 4, 3)]),
        ("broadcast_to", lambda x: _projected(broadcast_to(x, (2, 3, 4)), p_bc), [t(3, 4)]),
        ("reshape", lambda x: _projected(reshape(x, (6, 2)), p_rs), [t(3, 4)]),
        ("transpose", lambda x: _projected(transpose(x, (2, 0, 1)), p_tr), [t(2, 3, 4)]),
        ("sum", lambda x: reduce_sum(mul(x, x)), [t(3, 4)]),
        ("mean", lambda x: reduce_mean(mul(x, x)), [t(3, 4)]),
        ("loss_mae", lambda x: loss(x, np.zeros((3, 4)), "mae"), [t(3, 4)]),
        ("loss_mse", lambda x: loss(x, np.zeros((3, 4)), "mse"), [t(3, 4)]),
        ("embed_edges", lambda a, w: _projected(embed_edges(a, w), p_emb), [t(4, 9), t(9, 2)]),
    ]


TINY_MODEL_GAIN = np.sqrt(6.0)


def tiny_model_config(seed: int = 0) -> HydroNetConfig:
    """Narrow model over the standard 12-step lookback."""
    return HydroNetConfig(lookback=12, horizon=2, hidden_channels=4, edge_embed_dim=2,
                          temporal_kernel=3, seed=seed)


def model_params(config: HydroNetConfig, rng: np.random.Generator) -> List[np.ndarray]:
    """
    Seeded weights rescaled to He-uniform (+-sqrt(6 / fan_in)) and small random
    biases, so activations stay O(1) through both blocks and the head.
    """
    arrays = []
    for p in init_params(config).values():
        if p.ndim > 1:
            arrays.append(p.data * TINY_MODEL_GAIN)
        else:
            arrays.append(rng.normal(scale=0.1, size=p.shape))
    return arrays


def model_case(rng: np.random.Generator, seed: int = 0):
    """Random projection of the full HydroNet forecast on a 3-node network, w.r.t. every parameter."""
    graph = demo_graph(3)
    config = tiny_model_config(seed)
    names = list(init_params(config))
    arrays = model_params(config, rng)
    edge_attrs = graph.edge_attr_matrix(fit_edge_stats(graph))
    window = rng.normal(size=(config.lookback, graph.n_nodes, config.in_channels))
    weights = _away_from_zero(rng, (config.horizon, graph.n_nodes, config.in_channels))

    def f(*values):
        pred = forward(window, graph, dict(zip(names, values)), config, edge_attrs)
        return _projected(pred, weights)

    return "hydronet_loss", f, arrays


def _run(name: str, fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], eps: float) -> GradCheckResult:
    started = time.perf_counter()
    inputs = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    error = finite_diff_check(fn, inputs, eps=eps)
    result = GradCheckResult(name, sum(a.size for a in inputs), error, time.perf_counter() - started)
    logger.debug("gradcheck %s: %.3e (%d inputs)", name, error, result.n_inputs)
    return result


def run_gradcheck(seed: int = 0, eps: float = EPSILON, include_model: bool = True,
                  only: Optional[Sequence[str]] = None) -> List[GradCheckResult]:
    """Run every case (or the named subset) and return one result per case."""
    rng = np.random.default_rng(seed)
    cases = primitive_cases(rng)
    if include_model:
        cases.append(model_case(rng, seed))
    if only is not None:
        cases = [c for c in cases if c[0] in set(only)]
    return [_run(name, fn, arrays, eps) for name, fn, arrays in cases]


def results_frame(results: Sequence[GradCheckResult]) -> pd.DataFrame:
    return pd.DataFrame(
        [[r.name, r.n_inputs, r.max_rel_error, "PASS" if r.passed else "FAIL", r.seconds] for r in results],
        columns=["op", "inputs", "max_rel_error", "status", "seconds"],
    )


def format_results(results: Sequence[GradCheckResult]) -> str:
    lines = [f"{'op':<16} {'inputs':>7} {'max rel err':>12}  status", "-" * 46]
    for r in results:
        lines.append(f"{r.name:<16} {r.n_inputs:>7d} {r.max_rel_error:>12.3e}  {'PASS' if r.passed else 'FAIL'}")
    failed = sum(not r.passed for r in results)
    lines.append("-" * 46)
    lines.append(f"{len(results) - failed}/{len(results)} passed (tolerance {TOLERANCE:g})")
    return "\n".join(lines)
