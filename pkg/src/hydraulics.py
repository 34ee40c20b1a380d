"""
Pipe Hydraulics Module

Manning's equation for circular pipes in US customary units: full-pipe
capacity, partially full flow, and its inverse (normal depth).
"""

import logging
from typing import Union

import numpy as np
from scipy.optimize import bisect

from .errors import FlowExceedsCapacity, NonConvergence, NonPositiveInput
from .graph import PipeEdge

logger = logging.getLogger(__name__)

MANNING_US = 1.49
MAX_BISECTION_ITERATIONS = 200


def manning_full_flow(diameter: float, slope: float, roughness: float) -> float:
    """
    Capacity of a circular pipe flowing full.

    Q_full = (1.49/n) * A * R^(2/3) * sqrt(S), A = pi D^2 / 4, R = D / 4
    """
    for name, value in (("diameter", diameter), ("slope", slope), ("roughness", roughness)):
        if not value > 0:
            raise NonPositiveInput(f"{name} must be > 0, got {value}")
    area = np.pi * diameter ** 2 / 4.0
    radius = diameter / 4.0
    return float(MANNING_US / roughness * area * radius ** (2.0 / 3.0) * np.sqrt(slope))


class CircularPipe:
    """
    Manning rating curve of one circular pipe.

    Flow rises with depth up to ~0.94 D, then falls back to Q_full at D;
    normal depth is taken on the rising branch.
    """

    def __init__(self, diameter: float, slope: float, roughness: float):
        self.diameter = diameter
        self.slope = slope
        self.roughness = roughness
        self.full_flow = manning_full_flow(diameter, slope, roughness)

    @classmethod
    def from_edge(cls, edge: PipeEdge) -> "CircularPipe":
        return cls(edge.diameter, edge.slope, edge.roughness)

    @property
    def tolerance(self) -> float:
        return 1e-9 * max(self.full_flow, 1.0)

    def flow(self, depth: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        """
        Manning flow at water depth ``depth`` (ft), vectorised.

        Uses the circular-segment geometry
        theta = 2 arccos(1 - 2y/D), A = D^2/8 (theta - sin theta), P = D theta / 2.
        """
        y = np.clip(np.asarray(depth, dtype=np.float64), 0.0, self.diameter)
        d = self.diameter
        theta = 2.0 * np.arccos(1.0 - 2.0 * y / d)
        area = d * d / 8.0 * (theta - np.sin(theta))
        perimeter = d * theta / 2.0
        with np.errstate(divide="ignore", invalid="ignore"):
            radius = np.where(perimeter > 0, area / perimeter, 0.0)
        q = MANNING_US / self.roughness * area * np.maximum(radius, 0.0) ** (2.0 / 3.0) * np.sqrt(self.slope)
        q = np.where(y > 0, q, 0.0)
        return float(q) if q.ndim == 0 else q

    def depth(self, flow: float, allow_surcharge: bool = False) -> float:
        """
        Normal depth conveying ``flow``.

        Parameters:
        -----------
        flow : float
            Flow in cfs, 0 <= flow <= Q_full
        allow_surcharge : bool
            Report flows above capacity at full depth instead of raising

        Returns:
        --------
        depth : float
            y in [0, D] with |Q(y) - flow| < 1e-9 * max(Q_full, 1)
        """
        if flow < 0:
            raise NonPositiveInput(f"flow must be >= 0, got {flow}")
        if flow == 0:
            return 0.0
        tol = self.tolerance
        if flow > self.full_flow + tol:
            if allow_surcharge:
                return self.diameter
            raise FlowExceedsCapacity(
                f"flow {flow:.6g} cfs exceeds full-pipe capacity {self.full_flow:.6g} cfs"
            )
        if flow >= self.full_flow - tol:
            return self.diameter

        try:
            y = bisect(lambda d: self.flow(d) - flow, 0.0, self.diameter,
                       xtol=1e-14 * self.diameter, rtol=4 * np.finfo(float).eps,
                       maxiter=MAX_BISECTION_ITERATIONS)
        except RuntimeError as exc:
            raise NonConvergence(f"normal depth for flow {flow:.6g}: {exc}") from exc
        if abs(self.flow(y) - flow) >= tol:
            raise NonConvergence(
                f"normal depth for flow {flow:.6g} cfs left residual {abs(self.flow(y) - flow):.3g}"
            )
        return float(y)

    def depths(self, flows: np.ndarray, allow_surcharge: bool = False) -> np.ndarray:
        """Vectorised :meth:`depth` over an array of flows (lock-step bisection)."""
        q = np.asarray(flows, dtype=np.float64)
        if np.any(q < 0):
            raise NonPositiveInput(f"flow must be >= 0, got {q[q < 0].reshape(-1)[0]}")
        tol = self.tolerance
        over = q > self.full_flow + tol
        if over.any() and not allow_surcharge:
            raise FlowExceedsCapacity(
                f"flow {q[over].reshape(-1)[0]:.6g} cfs exceeds full-pipe capacity {self.full_flow:.6g} cfs"
            )
        result = np.where(q >= self.full_flow - tol, self.diameter, 0.0)
        active = (q > 0) & (q < self.full_flow - tol)
        if not active.any():
            return result

        target = q[active]
        lo = np.zeros_like(target)
        hi = np.full_like(target, self.diameter)
        xtol = 1e-14 * self.diameter
        for _ in range(MAX_BISECTION_ITERATIONS):
            mid = 0.5 * (lo + hi)
            below = self.flow(mid) < target
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(hi - lo <= xtol):
                break
        else:
            raise NonConvergence(f"normal depth did not converge in {MAX_BISECTION_ITERATIONS} iterations")
        y = 0.5 * (lo + hi)
        residual = np.abs(self.flow(y) - target)
        if np.any(residual >= tol):
            raise NonConvergence(f"normal depth left residual {residual.max():.3g}")
        result[active] = y
        return result


def partial_flow(depth: Union[float, np.ndarray], edge: PipeEdge) -> Union[float, np.ndarray]:
    """Manning flow of ``edge`` running partially full at ``depth``."""
    return CircularPipe.from_edge(edge).flow(depth)


def normal_depth(flow: float, edge: PipeEdge, allow_surcharge: bool = False) -> float:
    """Depth at which ``edge`` conveys ``flow`` in steady uniform flow."""
    return CircularPipe.from_edge(edge).depth(flow, allow_surcharge=allow_surcharge)


def edge_capacity(edge: PipeEdge) -> float:
    return manning_full_flow(edge.diameter, edge.slope, edge.roughness)
