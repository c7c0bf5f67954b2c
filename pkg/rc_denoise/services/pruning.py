"""
Pruning Service - node/edge importance ranking and greedy structure search

Nodes are ranked by the sum of five min–max-normalized metrics (absolute mean
state, state variance, degree, clustering, PageRank). Batches of the lowest
ranked nodes or edges are removed, or new nodes added, and each change is
kept only if validation NMSE stays within the configured tolerance.
"""

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from loguru import logger

from rc_denoise.exceptions import InvalidArgumentError, NumericalError, PruneFloorError, UntrainedModelError
from rc_denoise.models import AuditEntry, HyperParams, PruneConfig, RidgeConfig, SearchSpace
from rc_denoise.services.hyperopt import ObjectiveResult, optimize
from rc_denoise.services.reservoir import (
    EchoStateNetwork,
    add_nodes,
    remove_edges,
    remove_nodes,
    with_hyper,
)
from rc_denoise.services.training import DenoisingSplit, collect_states, fit_readout, validation_nmse

PAGERANK_DAMPING = 0.85
MIN_NODES = 2

METRICS = ("abs_mean_state", "state_variance", "degree", "clustering", "pagerank")


@dataclass(frozen=True)
class NodeScore:
    """Raw importance metrics of one node plus the normalized composite"""

    node_id: int
    abs_mean_state: float
    state_variance: float
    degree: int
    clustering: float
    pagerank: float
    normalized: Tuple[float, ...]
    composite: float


# MARK: - Graph views

def weighted_graph(esn: EchoStateNetwork) -> nx.DiGraph:
    """Directed graph with an edge j→i of weight |W_res[i, j]| per non-zero entry"""
    return nx.from_numpy_array(np.abs(esn.w_res).T, create_using=nx.DiGraph)


def support_graph(esn: EchoStateNetwork) -> nx.Graph:
    """Undirected graph linking i and j when either W_res[i, j] or W_res[j, i] is non-zero"""
    support = (esn.w_res != 0) | (esn.w_res.T != 0)
    np.fill_diagonal(support, False)
    return nx.from_numpy_array(support.astype(int), create_using=nx.Graph)


def _min_max(values: np.ndarray) -> np.ndarray:
    """Min maps to 0, max to 1; a constant metric maps to 0"""
    spread = values.max() - values.min()
    if spread <= 0:
        return np.zeros_like(values, dtype=float)
    return (values - values.min()) / spread


# MARK: - Ranking

def node_scores(esn: EchoStateNetwork, states) -> List[NodeScore]:
    """
    Importance metrics per node, in row order of the reservoir

    Args:
        esn: reservoir whose graph is scored
        states: state matrix R_n (rows = time steps) produced by `esn`

    Returns:
        one NodeScore per node
    """
    states = np.asarray(states, dtype=float)
    if states.ndim != 2 or states.shape[0] == 0:
        raise InvalidArgumentError("node scores need a non-empty state matrix")
    if states.shape[1] != esn.n_nodes:
        raise InvalidArgumentError(f"state matrix has {states.shape[1]} columns for {esn.n_nodes} nodes")

    n = esn.n_nodes
    nonzero = esn.w_res != 0
    degree = nonzero.sum(axis=0) + nonzero.sum(axis=1)
    clustering = nx.clustering(support_graph(esn))
    pagerank = nx.pagerank(
        weighted_graph(esn),
        alpha=PAGERANK_DAMPING,
        weight="weight",
        tol=1e-13,
        max_iter=10_000,
    )

    raw = np.column_stack([
        np.abs(states.mean(axis=0)),
        states.var(axis=0),
        degree.astype(float),
        np.array([clustering[i] for i in range(n)]),
        np.array([pagerank[i] for i in range(n)]),
    ])
    normalized = np.column_stack([_min_max(raw[:, m]) for m in range(raw.shape[1])])
    composite = normalized.sum(axis=1)

    return [
        NodeScore(
            node_id=int(esn.node_ids[i]),
            abs_mean_state=float(raw[i, 0]),
            state_variance=float(raw[i, 1]),
            degree=int(degree[i]),
            clustering=float(raw[i, 3]),
            pagerank=float(raw[i, 4]),
            normalized=tuple(float(v) for v in normalized[i]),
            composite=float(composite[i]),
        )
        for i in range(n)
    ]


def edge_ranking(esn: EchoStateNetwork, scores: Sequence[NodeScore]) -> List[Tuple[int, int]]:
    """Edges (i, j) of W_res ordered by |w_ij| × mean endpoint composite, ascending"""
    composite = np.array([s.composite for s in scores])
    rows, cols = np.nonzero(esn.w_res)
    rank = np.abs(esn.w_res[rows, cols]) * (composite[rows] + composite[cols]) / 2.0
    order = np.argsort(rank, kind="stable")
    return [(int(rows[k]), int(cols[k])) for k in order]


def batch_size(fraction: float, count: int) -> int:
    """fraction·count rounded half up"""
    return int(math.floor(fraction * count + 0.5))


# MARK: - Accept/reject loop

class _Search:
    """Shared bookkeeping for one greedy structure search"""

    def __init__(
        self,
        esn: EchoStateNetwork,
        data: DenoisingSplit,
        config: PruneConfig,
        ridge_config: RidgeConfig,
        action: str,
        reference_nmse: Optional[float] = None,
    ):
        if not esn.is_trained:
            raise UntrainedModelError("structure search needs a trained reservoir")
        self.data = data
        self.config = config
        self.ridge_config = ridge_config
        self.action = action
        self.current = esn
        self.current_nmse = validation_nmse(esn, data.validation)
        self.reference_nmse = self.current_nmse if reference_nmse is None else reference_nmse
        self.audit: List[AuditEntry] = []
        self.trials = 0

    @property
    def done(self) -> bool:
        if self.trials >= self.config.max_trials:
            return True
        target = self.config.target_nmse
        return target is not None and self.current_nmse <= target

    def try_candidate(self, build: Callable[[], EchoStateNetwork], ids: Sequence[str]) -> bool:
        """Refit and score a candidate; keep it if NMSE stays within tolerance"""
        self.trials += 1
        try:
            candidate = build()
            trained, _ = fit_readout(candidate, self.data.train, self.ridge_config)
            candidate_nmse = validation_nmse(trained, self.data.validation)
        except NumericalError as e:
            logger.debug(f"{self.action} candidate failed: {e}")
            trained, candidate_nmse = None, math.inf

        slack = 1.0 + self.config.accept_tolerance
        accepted = (
            trained is not None
            and candidate_nmse <= slack * self.current_nmse
            and candidate_nmse <= slack * self.reference_nmse
        )
        self.audit.append(AuditEntry(
            round=self.trials,
            action=self.action,
            ids=list(ids),
            nmse_before=self.current_nmse,
            nmse_after=candidate_nmse,
            accepted=accepted,
        ))
        mark = "✓" if accepted else "✗"
        logger.info(
            f"{mark} {self.action} round {self.trials}: {len(ids)} ids, "
            f"NMSE {self.current_nmse:.4e} -> {candidate_nmse:.4e}"
        )
        if accepted:
            self.current, self.current_nmse = trained, candidate_nmse
        return accepted

    def training_states(self) -> np.ndarray:
        states, _ = collect_states(self.current, self.data.train)
        return states


# MARK: - Pruning

def prune_nodes(
    esn: EchoStateNetwork,
    data: DenoisingSplit,
    config: PruneConfig,
    ridge_config: Optional[RidgeConfig] = None,
    reference_nmse: Optional[float] = None,
) -> Tuple[EchoStateNetwork, List[AuditEntry]]:
    """
    Greedily remove the least important nodes in batches of prune_fraction·N

    A rejected batch is restored and the next-ranked batch is tried. The
    search ends at target_nmse, max_trials, or when every node of the current
    ranking has been nominated.

    With `reference_nmse`, candidates must also stay within accept_tolerance
    of that value, which bounds the loss accumulated across rounds and phases.
    """
    search = _Search(esn, data, config, ridge_config or RidgeConfig(), "prune_node", reference_nmse)
    first_round = True
    while not search.done:
        n = search.current.n_nodes
        count = batch_size(config.prune_fraction, n)
        if count == 0:
            break
        if n - count < MIN_NODES:
            if first_round:
                raise PruneFloorError(f"removing {count} of {n} nodes would leave fewer than {MIN_NODES}")
            logger.info(f"Node pruning stopped at the {MIN_NODES}-node floor")
            break
        first_round = False

        scores = node_scores(search.current, search.training_states())
        ranked = np.argsort([s.composite for s in scores], kind="stable")
        accepted = False
        for start in range(0, n, count):
            if search.done:
                break
            positions = ranked[start:start + count]
            if n - len(positions) < MIN_NODES:
                break
            base = search.current
            ids = [str(int(base.node_ids[p])) for p in positions]
            if search.try_candidate(lambda: remove_nodes(base, positions), ids):
                accepted = True
                break
        if not accepted:
            break

    return search.current, search.audit


def prune_edges(
    esn: EchoStateNetwork,
    data: DenoisingSplit,
    config: PruneConfig,
    ridge_config: Optional[RidgeConfig] = None,
    reference_nmse: Optional[float] = None,
) -> Tuple[EchoStateNetwork, List[AuditEntry]]:
    """Greedily zero the weakest edges in batches of prune_fraction·|E|"""
    search = _Search(esn, data, config, ridge_config or RidgeConfig(), "prune_edge", reference_nmse)
    while not search.done:
        edges = edge_ranking(search.current, node_scores(search.current, search.training_states()))
        count = batch_size(config.prune_fraction, len(edges))
        if count == 0:
            break
        accepted = False
        for start in range(0, len(edges), count):
            if search.done:
                break
            batch = edges[start:start + count]
            base = search.current
            ids = [f"{int(base.node_ids[j])}->{int(base.node_ids[i])}" for i, j in batch]
            if search.try_candidate(lambda: remove_edges(base, batch), ids):
                accepted = True
                break
        if not accepted:
            break

    return search.current, search.audit


def grow(
    esn: EchoStateNetwork,
    data: DenoisingSplit,
    config: PruneConfig,
    ridge_config: Optional[RidgeConfig] = None,
    seed: int = 0,
    reference_nmse: Optional[float] = None,
) -> Tuple[EchoStateNetwork, List[AuditEntry]]:
    """Add grow_batch nodes per round for up to max_trials rounds"""
    k = config.grow_batch
    if k == 0:
        return esn, []
    rng = np.random.default_rng(seed)
    search = _Search(esn, data, config, ridge_config or RidgeConfig(), "grow", reference_nmse)
    while not search.done:
        base = search.current
        ids = [str(i) for i in range(base.next_node_id, base.next_node_id + k)]
        search.try_candidate(lambda: add_nodes(base, k, rng), ids)
    return search.current, search.audit


# MARK: - Re-tuning

def retune_reservoir(
    esn: EchoStateNetwork,
    data: DenoisingSplit,
    config: PruneConfig,
    space: Optional[SearchSpace] = None,
    ridge_config: Optional[RidgeConfig] = None,
    seed: int = 0,
    reference_nmse: Optional[float] = None,
) -> Tuple[EchoStateNetwork, List[AuditEntry]]:
    """
    Re-optimize (α, γ, ζ) on the fixed topology of `esn`

    N and p are pinned to the current network. The result is kept under the
    same tolerance rule as structural changes.
    """
    ridge_config = ridge_config or RidgeConfig()
    space = (space or SearchSpace()).model_copy(update={
        "n_nodes": (esn.n_nodes, esn.n_nodes),
        "connectivity": (esn.hyper.connectivity, esn.hyper.connectivity),
    })

    def objective(phi: HyperParams) -> ObjectiveResult:
        trained, _ = fit_readout(with_hyper(esn, phi), data.train, ridge_config)
        return ObjectiveResult(validation_nmse(trained, data.validation), trained.ridge_lambda)

    result = optimize(space, objective, budget=config.retune_budget, seed=seed)
    search = _Search(esn, data, config, ridge_config, "retune", reference_nmse)
    search.try_candidate(lambda: with_hyper(esn, result.best), [
        f"alpha={result.best.leakage:.6g}",
        f"gamma={result.best.spectral_radius:.6g}",
        f"zeta={result.best.input_scaling:.6g}",
    ])
    return search.current, search.audit


def truncate(
    esn: EchoStateNetwork,
    data: DenoisingSplit,
    config: PruneConfig,
    ridge_config: Optional[RidgeConfig] = None,
    space: Optional[SearchSpace] = None,
    seed: int = 0,
) -> Tuple[EchoStateNetwork, List[AuditEntry]]:
    """
    Node pruning, then edge pruning, then growth and re-tuning when configured

    Every phase is bounded by the validation NMSE of the incoming model, so
    the result stays within accept_tolerance of it.
    """
    if not esn.is_trained:
        raise UntrainedModelError("structure search needs a trained reservoir")
    reference = validation_nmse(esn, data.validation)
    audit: List[AuditEntry] = []
    esn, entries = prune_nodes(esn, data, config, ridge_config, reference_nmse=reference)
    audit.extend(entries)
    esn, entries = prune_edges(esn, data, config, ridge_config, reference_nmse=reference)
    audit.extend(entries)
    if config.grow_batch:
        esn, entries = grow(esn, data, config, ridge_config, seed=seed, reference_nmse=reference)
        audit.extend(entries)
    if config.retune:
        esn, entries = retune_reservoir(esn, data, config, space, ridge_config, seed=seed, reference_nmse=reference)
        audit.extend(entries)
    logger.info(f"Truncated reservoir to N={esn.n_nodes}, |E|={esn.edge_count}")
    return esn, audit


def write_audit(audit: Sequence[AuditEntry], path) -> Path:
    """CSV `round,action,ids,nmse_before,nmse_after,accepted`"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["round", "action", "ids", "nmse_before", "nmse_after", "accepted"])
        for entry in audit:
            writer.writerow([
                entry.round,
                entry.action,
                ";".join(entry.ids),
                format(entry.nmse_before, ".17g"),
                format(entry.nmse_after, ".17g"),
                str(entry.accepted).lower(),
            ])
    return path
