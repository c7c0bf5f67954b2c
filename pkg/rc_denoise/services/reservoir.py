"""
Reservoir Service - Echo State Network construction, stepping and structural edits

State update:  r ← (1−α)·r + α·tanh(W_res·r + W_in·(u / s) + b)
where s is the per-channel input scale (ones unless fitted on training data).
"""

from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from rc_denoise.exceptions import DegenerateTopologyError, InstabilityError, InvalidArgumentError
from rc_denoise.models import HyperParams
from rc_denoise.trajectory import Trajectory

DEFAULT_WASHOUT = 100

# Spectral radii at or below this are treated as an edgeless/nilpotent topology
DEGENERATE_RADIUS = 1e-12


@dataclass(frozen=True, eq=False)
class EchoStateNetwork:
    w_res: np.ndarray
    w_in: np.ndarray
    bias: np.ndarray
    hyper: HyperParams
    seed: int = 0
    washout: int = DEFAULT_WASHOUT
    w_out: Optional[np.ndarray] = None
    input_scale: Optional[np.ndarray] = None
    node_ids: Optional[np.ndarray] = None
    input_channels: Tuple[str, ...] = ()
    output_channels: Tuple[str, ...] = ()
    ridge_lambda: Optional[float] = None
    next_node_id: int = field(default=-1)

    def __post_init__(self):
        w_res = np.ascontiguousarray(np.atleast_2d(self.w_res), dtype=np.float64)
        n = w_res.shape[0]
        if w_res.shape != (n, n):
            raise InvalidArgumentError(f"W_res must be square, got {w_res.shape}")
        w_in = np.ascontiguousarray(np.reshape(self.w_in, (n, -1)), dtype=np.float64)
        bias = np.broadcast_to(np.asarray(self.bias, dtype=float), (n,)).copy()
        scale = (
            np.ones(w_in.shape[1])
            if self.input_scale is None
            else np.asarray(self.input_scale, dtype=float).reshape(w_in.shape[1])
        )
        node_ids = np.arange(n) if self.node_ids is None else np.asarray(self.node_ids, dtype=int)
        if node_ids.shape != (n,):
            raise InvalidArgumentError("node_ids must have one entry per node")
        w_out = self.w_out
        if w_out is not None:
            w_out = np.ascontiguousarray(np.reshape(w_out, (n, -1)), dtype=np.float64)
            if self.output_channels and w_out.shape[1] != len(self.output_channels):
                raise InvalidArgumentError(
                    f"W_out has {w_out.shape[1]} columns for {len(self.output_channels)} output channels"
                )
        object.__setattr__(self, "w_res", w_res)
        object.__setattr__(self, "w_in", w_in)
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "input_scale", scale)
        object.__setattr__(self, "node_ids", node_ids)
        object.__setattr__(self, "w_out", w_out)
        object.__setattr__(self, "input_channels", tuple(self.input_channels))
        object.__setattr__(self, "output_channels", tuple(self.output_channels))
        if self.next_node_id < 0:
            object.__setattr__(self, "next_node_id", int(node_ids.max()) + 1 if n else 0)

    @property
    def n_nodes(self) -> int:
        return self.w_res.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.w_in.shape[1]

    @property
    def is_trained(self) -> bool:
        return self.w_out is not None

    @property
    def edge_count(self) -> int:
        return int(np.count_nonzero(self.w_res))


# MARK: - Spectral radius

def spectral_radius(matrix) -> float:
    """Largest eigenvalue modulus"""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise InvalidArgumentError(f"spectral radius needs a square matrix, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise InvalidArgumentError("matrix contains non-finite entries")
    if matrix.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(matrix))))


def rescale_spectral_radius(matrix: np.ndarray, target: float) -> np.ndarray:
    radius = spectral_radius(matrix)
    if radius <= DEGENERATE_RADIUS:
        raise DegenerateTopologyError(
            f"reservoir matrix has zero spectral radius ({np.count_nonzero(matrix)} edges); cannot rescale to {target}"
        )
    return matrix * (target / radius)


# MARK: - Construction

def build_reservoir(
    hyper: HyperParams,
    d_in: int,
    seed: int,
    bias: float = 0.0,
    washout: int = DEFAULT_WASHOUT,
    input_mask: Optional[np.ndarray] = None,
    input_channels: Sequence[str] = (),
    output_channels: Sequence[str] = (),
) -> EchoStateNetwork:
    """
    Random Erdős–Rényi reservoir rescaled to spectral radius γ

    Each ordered off-diagonal pair is an edge with probability p, weights
    Uniform(−1, 1). W_in is dense Uniform(−ζ, ζ) unless `input_mask` zeroes
    entries. The bias is the constant vector `bias`.
    """
    n = hyper.n_nodes
    if n < 2:
        raise InvalidArgumentError(f"a reservoir needs at least 2 nodes, got {n}")
    if d_in < 1:
        raise InvalidArgumentError(f"d_in must be at least 1, got {d_in}")
    rng = np.random.default_rng(seed)
    edges = rng.random((n, n)) < hyper.connectivity
    np.fill_diagonal(edges, False)
    weights = rng.uniform(-1.0, 1.0, size=(n, n)) * edges
    w_res = rescale_spectral_radius(weights, hyper.spectral_radius)
    w_in = rng.uniform(-hyper.input_scaling, hyper.input_scaling, size=(n, d_in))
    if input_mask is not None:
        mask = np.asarray(input_mask, dtype=bool)
        if mask.shape != w_in.shape:
            raise InvalidArgumentError(f"input mask shape {mask.shape} does not match W_in {w_in.shape}")
        w_in = w_in * mask
    logger.debug(f"Built reservoir N={n}, edges={int(edges.sum())}, seed={seed}")
    return EchoStateNetwork(
        w_res=w_res,
        w_in=w_in,
        bias=np.full(n, float(bias)),
        hyper=hyper,
        seed=seed,
        washout=washout,
        input_channels=tuple(input_channels),
        output_channels=tuple(output_channels),
    )


# MARK: - Dynamics

def step(esn: EchoStateNetwork, r, u) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if r.shape != (esn.n_nodes,):
        raise InvalidArgumentError(f"state has shape {r.shape}, expected ({esn.n_nodes},)")
    if u.shape != (esn.n_inputs,):
        raise InvalidArgumentError(f"input has shape {u.shape}, expected ({esn.n_inputs},)")
    alpha = esn.hyper.leakage
    activation = np.tanh(esn.w_res @ r + esn.w_in @ (u / esn.input_scale) + esn.bias)
    return (1.0 - alpha) * r + alpha * activation


def run(esn: EchoStateNetwork, inputs: Union[Trajectory, np.ndarray], r0=None) -> np.ndarray:
    """
    State matrix R_n, one row per input row

    The washout prefix is kept; callers exclude `esn.washout` rows when fitting.
    """
    values = inputs.values if isinstance(inputs, Trajectory) else np.atleast_2d(np.asarray(inputs, dtype=float))
    if values.shape[0] == 0:
        raise InvalidArgumentError("cannot run the reservoir on an empty input sequence")
    if values.shape[1] != esn.n_inputs:
        raise InvalidArgumentError(f"inputs have {values.shape[1]} channels, reservoir expects {esn.n_inputs}")
    r = np.zeros(esn.n_nodes) if r0 is None else np.array(r0, dtype=float).reshape(esn.n_nodes)
    drive = (values / esn.input_scale) @ esn.w_in.T + esn.bias
    alpha = esn.hyper.leakage
    keep = 1.0 - alpha
    w_res = esn.w_res
    states = np.empty((values.shape[0], esn.n_nodes))
    for i in range(values.shape[0]):
        r = keep * r + alpha * np.tanh(w_res @ r + drive[i])
        states[i] = r
    finite = np.isfinite(states).all(axis=1)
    if not finite.all():
        bad = int(np.argmin(finite))
        raise InstabilityError(f"non-finite reservoir state at step {bad}", step=bad)
    return states


# MARK: - Structural edits (readout is invalidated)

def with_hyper(esn: EchoStateNetwork, hyper: HyperParams) -> EchoStateNetwork:
    """Apply new (α, γ, ζ) to an existing topology"""
    w_res = rescale_spectral_radius(esn.w_res, hyper.spectral_radius)
    w_in = esn.w_in
    if esn.hyper.input_scaling > 0:
        w_in = esn.w_in * (hyper.input_scaling / esn.hyper.input_scaling)
    hyper = hyper.model_copy(update={"n_nodes": esn.n_nodes, "connectivity": esn.hyper.connectivity})
    return replace(esn, w_res=w_res, w_in=w_in, hyper=hyper, w_out=None, ridge_lambda=None)


def remove_nodes(esn: EchoStateNetwork, positions: Iterable[int]) -> EchoStateNetwork:
    """Delete nodes (by row position) and restore spectral radius γ"""
    drop = np.zeros(esn.n_nodes, dtype=bool)
    drop[list(positions)] = True
    keep = ~drop
    if keep.sum() < 2:
        raise InvalidArgumentError("removal would leave fewer than 2 nodes")
    w_res = rescale_spectral_radius(esn.w_res[np.ix_(keep, keep)], esn.hyper.spectral_radius)
    return replace(
        esn,
        w_res=w_res,
        w_in=esn.w_in[keep],
        bias=esn.bias[keep],
        node_ids=esn.node_ids[keep],
        hyper=esn.hyper.model_copy(update={"n_nodes": int(keep.sum())}),
        w_out=None,
        ridge_lambda=None,
    )


def remove_edges(esn: EchoStateNetwork, edges: Iterable[Tuple[int, int]]) -> EchoStateNetwork:
    """Zero W_res[i, j] (edge j→i) for each (i, j) and restore spectral radius γ"""
    w_res = esn.w_res.copy()
    for i, j in edges:
        w_res[i, j] = 0.0
    w_res = rescale_spectral_radius(w_res, esn.hyper.spectral_radius)
    return replace(esn, w_res=w_res, w_out=None, ridge_lambda=None)


def add_nodes(esn: EchoStateNetwork, k: int, rng: np.random.Generator) -> EchoStateNetwork:
    """
    Append k nodes with ER edges (probability p in both directions) and fresh
    input weights, then restore spectral radius γ
    """
    if k == 0:
        return esn
    n = esn.n_nodes
    total = n + k
    p = esn.hyper.connectivity
    w_res = np.zeros((total, total))
    w_res[:n, :n] = esn.w_res
    edges = rng.random((total, total)) < p
    edges[:n, :n] = False
    np.fill_diagonal(edges, False)
    # new weights on the existing scale of W_res
    scale = np.max(np.abs(esn.w_res)) if esn.edge_count else 1.0
    w_res[edges] = rng.uniform(-scale, scale, size=int(edges.sum()))
    w_res = rescale_spectral_radius(w_res, esn.hyper.spectral_radius)
    zeta = esn.hyper.input_scaling
    w_in = np.vstack([esn.w_in, rng.uniform(-zeta, zeta, size=(k, esn.n_inputs))])
    bias = np.concatenate([esn.bias, np.full(k, float(np.mean(esn.bias)))])
    new_ids = np.arange(esn.next_node_id, esn.next_node_id + k)
    return replace(
        esn,
        w_res=w_res,
        w_in=w_in,
        bias=bias,
        node_ids=np.concatenate([esn.node_ids, new_ids]),
        hyper=esn.hyper.model_copy(update={"n_nodes": total}),
        w_out=None,
        ridge_lambda=None,
        next_node_id=esn.next_node_id + k,
    )
