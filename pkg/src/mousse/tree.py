"""Multiscale tree of subsets: nearest-subset search, streaming updates, split/merge.

The approximation at any time is the union of the subsets attached to the
leaf set ``A``.  Every leaf additionally carries two *virtual* children --
finer-scale candidates that are tracked but not part of the approximation --
so that a split can promote an already-warm pair of subsets.  Node indices
follow the usual binary-heap arithmetic: the root is (0, 0), the children of
(j, k) are (j+1, 2k) and (j+1, 2k+1), the parent is (j-1, k // 2).

Streaming dynamics per sample: find the minimum-distance leaf, score the
residual, update that leaf, all its ancestors and its nearest virtual child,
refresh the forgotten average of squared residuals, then test the penalized
split and merge conditions against the virtual child and the parent.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DepthLimit, InsufficientData, RankDeficient, SiblingNotLeaf
from .subset import (
    DELTA_FLOOR,
    GRAM_MIN_EIG,
    GRAM_RIDGE,
    LAMBDA_FLOOR,
    Observation,
    ProjectionResult,
    SubsetNode,
    project_partial,
    residual,
    scaled_distance,
    update_scalar_params,
)
from .tracking import (
    Grouse,
    PetrelsFO,
    PetrelsGS,
    PetrelsState,
    TrackerKind,
    apply_tracker,
    needs_state,
)

log = logging.getLogger(__name__)

NodeId = tuple[int, int]


def _batched_gram_min_eig(gram: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue of each (d, d) slice; closed forms for d <= 2."""
    d = gram.shape[-1]
    if d == 1:
        return gram[:, 0, 0]
    if d == 2:
        half_tr = 0.5 * (gram[:, 0, 0] + gram[:, 1, 1])
        det = gram[:, 0, 0] * gram[:, 1, 1] - gram[:, 0, 1] * gram[:, 1, 0]
        return half_tr - np.sqrt(np.maximum(half_tr * half_tr - det, 0.0))
    return np.linalg.eigvalsh(gram)[:, 0]


def parent_of(node_id: NodeId) -> NodeId:
    j, k = node_id
    return (j - 1, k // 2)


def children_of(node_id: NodeId) -> tuple[NodeId, NodeId]:
    j, k = node_id
    return (j + 1, 2 * k), (j + 1, 2 * k + 1)


def sibling_of(node_id: NodeId) -> NodeId:
    j, k = node_id
    return (j, k ^ 1)


@dataclass(frozen=True)
class MousseConfig:
    """Knobs for the streaming tree.

    ``eps`` is the residual tolerance steering split/merge, ``alpha`` the
    forgetting factor shared by all exponential updates, ``mu`` the
    complexity weight on the leaf count.
    """

    d: int
    eps: float
    alpha: float
    mu: float
    tracker: TrackerKind = field(default_factory=PetrelsFO)
    max_depth: int = 12
    update_policy: str = "nearest"      # "nearest" or "all"
    structure_updates: bool = True      # False pins the tree (single-subspace mode)
    # Structure changes fire on accumulated evidence, not single samples: each
    # leaf carries one-sided scores s <- max(0, decay * s + margin), where the
    # margin is the penalized improvement of the candidate structure on the
    # current sample (split: d_leaf - d_child - mu; merge: d_leaf - d_parent
    # + mu), accumulated only on samples whose tolerance gate holds.  A change
    # fires when its score reaches dwell * mu AND its one-sample condition
    # holds.  Single samples landing where a coarse plane happens to cross the
    # manifold then cannot thrash the tree, while genuine misfit or overfit
    # integrates quickly.  Dwell 0 restores fire-on-first-sample behavior.
    split_dwell: float = 1.0
    merge_dwell: float = 8.0
    dwell_decay: float = 0.9
    # Refractory period: steps after any structure change during which no
    # further change fires, letting the exponential updates absorb the new
    # structure before the next decision.
    structure_cooldown: int = 5

    def __post_init__(self) -> None:
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must be in (0, 1)")
        if self.eps <= 0 or self.mu <= 0:
            raise ValueError("eps and mu must be positive")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.update_policy not in ("nearest", "all"):
            raise ValueError("update_policy must be 'nearest' or 'all'")
        if self.split_dwell < 0 or self.merge_dwell < 0 or not 0 < self.dwell_decay <= 1:
            raise ValueError("dwell thresholds must be >= 0 and dwell_decay in (0, 1]")
        if self.structure_cooldown < 0:
            raise ValueError("structure_cooldown must be >= 0")


@dataclass
class TreeStepResult:
    """Per-sample tracking output."""

    t: int
    e: float
    eps_avg: float
    n_leaves: int
    skipped: bool = False


class MousseTree:
    """Mutable multiscale model; one instance per stream, single writer."""

    def __init__(self, config: MousseConfig, ambient_dim: int):
        if not config.d < ambient_dim:
            raise ValueError("need d < ambient dimension")
        self.config = config
        self.ambient_dim = ambient_dim
        self.nodes: dict[NodeId, SubsetNode] = {}
        self.leaf_set: set[NodeId] = set()
        self.all_nodes: set[NodeId] = set()
        self.petrels: dict[NodeId, PetrelsState] = {}
        self.eps_avg = 0.0
        self._last_e = 0.0
        self._split_score: dict[NodeId, float] = {}
        self._merge_score: dict[NodeId, float] = {}
        self._cooldown = 0

    # ------------------------------------------------------------------
    # queries

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_set)

    @property
    def depth(self) -> int:
        return max(j for j, _ in self.all_nodes)

    def leaves(self) -> list[NodeId]:
        return sorted(self.leaf_set)

    def nearest_subset(self, obs: Observation) -> NodeId:
        """Minimum scaled-distance leaf; ties go to the lexicographically smaller id."""
        node_id, _, _ = self._nearest(obs)
        return node_id

    def _nearest(self, obs: Observation) -> tuple[NodeId, ProjectionResult, float]:
        ids = self.leaves()
        d = self.config.d
        if obs.omega.size < d:
            raise RankDeficient(
                f"{obs.omega.size} observed entries < subset dimension {d}"
            )
        # One batched ridged least-squares solve across every leaf.
        basis = np.stack([self.nodes[i].basis for i in ids])        # (K, D, d)
        center = np.stack([self.nodes[i].center for i in ids])     # (K, D)
        lambdas = np.stack([self.nodes[i].lambdas for i in ids])   # (K, d)
        deltas = np.array([self.nodes[i].delta for i in ids])
        u = basis[:, obs.omega, :]                                 # (K, m, d)
        y = obs.values[None, :] - center[:, obs.omega]             # (K, m)
        gram = np.einsum("kmd,kme->kde", u, u)
        idx = np.arange(d)
        gram[:, idx, idx] += GRAM_RIDGE
        min_eig = _batched_gram_min_eig(gram)
        usable = min_eig > GRAM_MIN_EIG
        if not np.any(usable):
            raise RankDeficient(f"all {len(ids)} leaves failed to project the sample")
        rhs = np.einsum("kmd,km->kd", u, y)
        beta = np.linalg.solve(gram, rhs[..., None])[..., 0]       # (K, d)
        resid = y - np.einsum("kmd,kd->km", u, beta)
        dist = deltas * np.sum(beta * beta / lambdas, axis=1) + np.sum(resid * resid, axis=1)
        dist[~usable] = np.inf
        k_best = int(np.argmin(dist))                              # ids sorted: ties -> smaller id
        pr = ProjectionResult(beta=beta[k_best], x_perp=resid[k_best],
                              omega_size=obs.omega.size)
        return ids[k_best], pr, float(dist[k_best])

    def check_invariants(self) -> None:
        """Raise AssertionError on any structural violation (test support)."""
        assert self.leaf_set, "leaf set is empty"
        assert self.leaf_set <= self.all_nodes
        for node_id in self.all_nodes:
            assert node_id in self.nodes
            assert not self.nodes[node_id].is_virtual
            if node_id != (0, 0):
                assert parent_of(node_id) in self.all_nodes, f"orphan {node_id}"
        for leaf in self.leaf_set:
            anc = leaf
            while anc != (0, 0):
                anc = parent_of(anc)
                assert anc not in self.leaf_set, f"{leaf} under leaf {anc}"
            for child in children_of(leaf):
                assert child in self.nodes, f"leaf {leaf} misses virtual child {child}"
                assert self.nodes[child].is_virtual
                assert child not in self.all_nodes
        for node_id, node in self.nodes.items():
            assert node.node_id == node_id
            gram = node.basis.T @ node.basis
            assert np.max(np.abs(gram - np.eye(node.subset_dim))) <= 1e-8, (
                f"basis of {node_id} lost orthonormality"
            )
            assert np.all(node.lambdas >= LAMBDA_FLOOR)
            assert node.delta >= DELTA_FLOOR

    # ------------------------------------------------------------------
    # streaming update

    def step(self, obs: Observation, trace: list | None = None) -> TreeStepResult:
        """Process one sample: score, update, and (maybe) restructure.

        Samples that no leaf can project (fewer observed entries than the
        subset dimension, or singular observed rows everywhere) change no
        state; the result repeats the previous residual with ``skipped`` set.
        """
        cfg = self.config
        try:
            leaf_id, pr, dist = self._nearest(obs)
        except RankDeficient:
            log.debug("t=%d skipped: no leaf could project the sample", obs.t)
            return TreeStepResult(obs.t, self._last_e, self.eps_avg,
                                  self.n_leaves, skipped=True)
        e = float(np.sqrt(dist))
        self._last_e = e

        vc_id = self._nearest_virtual_child(leaf_id, obs)
        if cfg.update_policy == "all":
            self._update_all_leaves(obs, leaf_id)
        else:
            self._update_node(leaf_id, obs, pr=pr)
        node_id = leaf_id
        while node_id != (0, 0):
            node_id = parent_of(node_id)
            self._update_node(node_id, obs)
        if vc_id is not None:
            self._update_node(vc_id, obs)

        self.eps_avg = cfg.alpha * self.eps_avg + (1 - cfg.alpha) * e * e

        if cfg.structure_updates:
            self._structure_step(obs, leaf_id, vc_id, trace)
        return TreeStepResult(obs.t, e, self.eps_avg, self.n_leaves)

    def _structure_step(self, obs: Observation, leaf_id: NodeId,
                        vc_id: NodeId | None, trace: list | None) -> None:
        """Penalized split/merge tests, evaluated with post-update parameters."""
        cfg = self.config
        k_now = self.n_leaves
        d_leaf = self._distance_or_none(leaf_id, obs)
        d_child = self._distance_or_none(vc_id, obs) if vc_id is not None else None
        j = leaf_id[0]
        d_parent = self._distance_or_none(parent_of(leaf_id), obs) if j >= 1 else None

        split_wanted = (self.eps_avg > cfg.eps and d_leaf is not None
                        and d_child is not None
                        and d_child + cfg.mu * (k_now + 1) < d_leaf + cfg.mu * k_now)
        merge_wanted = (self.eps_avg < cfg.eps and d_leaf is not None
                        and d_parent is not None
                        and j >= 2 and sibling_of(leaf_id) in self.leaf_set
                        and d_parent + cfg.mu * (k_now - 1) < d_leaf + cfg.mu * k_now)

        # Scores age on the leaf's own clock (only when it receives a sample),
        # so the evidence rate does not shrink as the tree grows.
        split_margin = (d_leaf - d_child - cfg.mu
                        if (self.eps_avg > cfg.eps and d_leaf is not None
                            and d_child is not None) else None)
        merge_margin = (d_leaf - d_parent + cfg.mu
                        if (self.eps_avg < cfg.eps and d_leaf is not None
                            and d_parent is not None and j >= 2) else None)
        self._age_score(self._split_score, leaf_id, split_margin)
        self._age_score(self._merge_score, leaf_id, merge_margin)

        split_fired = merge_fired = False
        ready = self._cooldown == 0
        if not ready:
            self._cooldown -= 1
        if (ready and split_wanted
                and self._split_score.get(leaf_id, 0.0) >= cfg.split_dwell * cfg.mu):
            try:
                self.split_node(leaf_id)
                split_fired = True
                self._cooldown = cfg.structure_cooldown
            except DepthLimit:
                log.debug("t=%d split of %s declined: depth limit", obs.t, leaf_id)
        elif (ready and merge_wanted
                and self._merge_score.get(leaf_id, 0.0) >= cfg.merge_dwell * cfg.mu):
            try:
                self.merge_node(leaf_id)
                merge_fired = True
                self._cooldown = cfg.structure_cooldown
            except SiblingNotLeaf:
                log.debug("t=%d merge of %s declined: sibling internal", obs.t, leaf_id)
        if trace is not None:
            trace.append({
                "t": obs.t, "leaf": leaf_id, "eps_avg": self.eps_avg,
                "d_leaf": d_leaf, "d_child": d_child, "d_parent": d_parent,
                "k_before": k_now, "split": split_fired, "merge": merge_fired,
                "split_wanted": split_wanted, "merge_wanted": merge_wanted,
            })

    def _age_score(self, scores: dict[NodeId, float], leaf_id: NodeId,
                   margin: float | None) -> None:
        s = scores.get(leaf_id, 0.0) * self.config.dwell_decay
        if margin is not None:
            s += margin
        s = max(0.0, s)
        if s > 0.0:
            scores[leaf_id] = s
        else:
            scores.pop(leaf_id, None)

    def _drop_scores(self, node_id: NodeId) -> None:
        self._split_score.pop(node_id, None)
        self._merge_score.pop(node_id, None)

    def _distance_or_none(self, node_id: NodeId, obs: Observation) -> float | None:
        node = self.nodes[node_id]
        try:
            return scaled_distance(project_partial(obs, node), node)
        except RankDeficient:
            return None

    def _nearest_virtual_child(self, leaf_id: NodeId, obs: Observation) -> NodeId | None:
        best = None
        for child in children_of(leaf_id):
            d = self._distance_or_none(child, obs)
            if d is not None and (best is None or d < best[1]):
                best = (child, d)
        return None if best is None else best[0]

    def _update_node(self, node_id: NodeId, obs: Observation, weight: float = 1.0,
                     pr: ProjectionResult | None = None) -> None:
        node = self.nodes[node_id]
        if pr is None:
            try:
                pr = project_partial(obs, node)
            except RankDeficient:
                return
        alpha = self.config.alpha
        eff_alpha = alpha if weight == 1.0 else 1.0 - weight * (1.0 - alpha)
        update_scalar_params(node, obs, pr, eff_alpha)
        kind = self.config.tracker
        state = self._petrels_state(node_id) if needs_state(kind) else None
        basis_backup = node.basis.copy()
        try:
            apply_tracker(kind, node, obs, pr, state, weight=weight)
        except RankDeficient:
            node.basis = basis_backup
            log.debug("t=%d basis update of %s reverted: rank collapse", obs.t, node_id)

    def _update_all_leaves(self, obs: Observation, nearest_id: NodeId) -> None:
        # Inverse-distance step weights over all leaves, normalized to sum 1;
        # the nearest leaf dominates and K = 1 degenerates to update-nearest.
        dists = {}
        for leaf in self.leaves():
            d = self._distance_or_none(leaf, obs)
            if d is not None:
                dists[leaf] = d
        if not dists:
            return
        inv = {leaf: 1.0 / (d + 1e-30) for leaf, d in dists.items()}
        total = sum(inv.values())
        for leaf, w in inv.items():
            self._update_node(leaf, obs, weight=w / total)

    def _petrels_state(self, node_id: NodeId) -> PetrelsState:
        state = self.petrels.get(node_id)
        if state is None:
            state = PetrelsState(self.ambient_dim, self.config.d, node_id)
            self.petrels[node_id] = state
        return state

    # ------------------------------------------------------------------
    # structure edits

    def split_node(self, node_id: NodeId) -> None:
        """Promote the two virtual children of ``node_id`` to leaves."""
        if node_id not in self.leaf_set:
            raise ValueError(f"{node_id} is not a leaf")
        j, _ = node_id
        if j + 1 > self.config.max_depth:
            raise DepthLimit(f"split of {node_id} exceeds max depth {self.config.max_depth}")
        self.leaf_set.remove(node_id)
        self._drop_scores(node_id)
        for child in children_of(node_id):
            self.nodes[child].is_virtual = False
            self.leaf_set.add(child)
            self.all_nodes.add(child)
            self._spawn_virtual_children(child)

    def merge_node(self, node_id: NodeId) -> None:
        """Demote ``node_id`` and its sibling back to virtual children of their parent."""
        if node_id not in self.leaf_set:
            raise ValueError(f"{node_id} is not a leaf")
        j, _ = node_id
        if j < 2:
            raise ValueError("nodes this close to the root never merge away")
        sib = sibling_of(node_id)
        if sib not in self.leaf_set:
            raise SiblingNotLeaf(f"sibling {sib} of {node_id} is not a leaf")
        for leaf in (node_id, sib):
            for grandchild in children_of(leaf):
                self.nodes.pop(grandchild, None)
                self.petrels.pop(grandchild, None)
            self.nodes[leaf].is_virtual = True
            self.leaf_set.remove(leaf)
            self.all_nodes.remove(leaf)
            self._drop_scores(leaf)
        self.leaf_set.add(parent_of(node_id))

    def _spawn_virtual_children(self, leaf_id: NodeId, source: SubsetNode | None = None) -> None:
        """Initialize virtual children by bisecting the leaf's dominant direction.

        Lambdas are kept aligned with their basis columns during streaming, so
        the dominant direction is argmax over lambdas rather than column 0.
        """
        node = source if source is not None else self.nodes[leaf_id]
        m = int(np.argmax(node.lambdas))
        shift = 0.5 * np.sqrt(node.lambdas[m]) * node.basis[:, m]
        lam = node.lambdas.copy()
        lam[m] = lam[m] / 2.0
        for child_id, sign in zip(children_of(leaf_id), (+1.0, -1.0)):
            self.nodes[child_id] = SubsetNode(
                basis=node.basis.copy(),
                center=node.center + sign * shift,
                lambdas=lam.copy(),
                delta=node.delta,
                node_id=child_id,
                is_virtual=True,
            )

    # ------------------------------------------------------------------
    # serialization

    def to_dict(self) -> dict:
        cfg = self.config
        tracker = cfg.tracker
        if isinstance(tracker, Grouse):
            tracker_doc = {"kind": "grouse", "eta0": tracker.eta0}
        elif isinstance(tracker, PetrelsGS):
            tracker_doc = {"kind": "petrels-gs", "alpha": tracker.alpha}
        else:
            tracker_doc = {"kind": "petrels-fo", "alpha": tracker.alpha}
        return {
            "format": "mousse-tree-v1",
            "ambient_dim": self.ambient_dim,
            "config": {
                "d": cfg.d, "eps": cfg.eps, "alpha": cfg.alpha, "mu": cfg.mu,
                "tracker": tracker_doc, "max_depth": cfg.max_depth,
                "update_policy": cfg.update_policy,
                "structure_updates": cfg.structure_updates,
            },
            "eps_avg": self.eps_avg,
            "last_e": self._last_e,
            "cooldown": self._cooldown,
            "split_score": [[list(k), v] for k, v in sorted(self._split_score.items())],
            "merge_score": [[list(k), v] for k, v in sorted(self._merge_score.items())],
            "leaf_set": sorted(self.leaf_set),
            "all_nodes": sorted(self.all_nodes),
            "nodes": [
                {
                    "id": list(node_id),
                    "virtual": node.is_virtual,
                    "basis": node.basis.tolist(),
                    "center": node.center.tolist(),
                    "lambdas": node.lambdas.tolist(),
                    "delta": node.delta,
                }
                for node_id, node in sorted(self.nodes.items())
            ],
            "petrels": [
                {"id": list(node_id), "r_inv": state.r_inv.tolist()}
                for node_id, state in sorted(self.petrels.items())
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "MousseTree":
        if doc.get("format") != "mousse-tree-v1":
            raise ValueError(f"unsupported tree document format {doc.get('format')!r}")
        cfg_doc = dict(doc["config"])
        tr = cfg_doc.pop("tracker")
        if tr["kind"] == "grouse":
            tracker: TrackerKind = Grouse(eta0=tr["eta0"])
        elif tr["kind"] == "petrels-gs":
            tracker = PetrelsGS(alpha=tr["alpha"])
        elif tr["kind"] == "petrels-fo":
            tracker = PetrelsFO(alpha=tr["alpha"])
        else:
            raise ValueError(f"unknown tracker kind {tr['kind']!r}")
        cfg = MousseConfig(tracker=tracker, **cfg_doc)
        tree = cls(cfg, int(doc["ambient_dim"]))
        tree.eps_avg = float(doc["eps_avg"])
        tree._last_e = float(doc.get("last_e", 0.0))
        tree._cooldown = int(doc.get("cooldown", 0))
        tree._split_score = {tuple(k): v for k, v in doc.get("split_score", [])}
        tree._merge_score = {tuple(k): v for k, v in doc.get("merge_score", [])}
        tree.leaf_set = {tuple(x) for x in doc["leaf_set"]}
        tree.all_nodes = {tuple(x) for x in doc["all_nodes"]}
        for entry in doc["nodes"]:
            node_id = tuple(entry["id"])
            tree.nodes[node_id] = SubsetNode(
                basis=np.array(entry["basis"], dtype=float),
                center=np.array(entry["center"], dtype=float),
                lambdas=np.array(entry["lambdas"], dtype=float),
                delta=float(entry["delta"]),
                node_id=node_id,
                is_virtual=bool(entry["virtual"]),
            )
        for entry in doc.get("petrels", []):
            node_id = tuple(entry["id"])
            state = PetrelsState(tree.ambient_dim, cfg.d, node_id)
            state.r_inv = np.array(entry["r_inv"], dtype=float)
            tree.petrels[node_id] = state
        return tree

    @classmethod
    def from_json(cls, payload: str) -> "MousseTree":
        return cls.from_dict(json.loads(payload))


# ----------------------------------------------------------------------
# batch initialization


def _fit_cell(x: np.ndarray, d: int, node_id: NodeId, virtual: bool) -> SubsetNode:
    """PCA fit of one data cell: top-d eigenpairs for the basis and shape,
    mean of the minor eigenvalues for delta."""
    D = x.shape[1]
    center = x.mean(axis=0)
    if x.shape[0] >= 2:
        cov = np.cov(x, rowvar=False, ddof=1)
    else:
        cov = np.zeros((D, D))
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals = np.maximum(vals[order], 0.0)
    basis = vecs[:, order[:d]]
    return SubsetNode(
        basis=basis,
        center=center,
        lambdas=vals[:d],
        delta=float(np.mean(vals[d:])),
        node_id=node_id,
        is_virtual=virtual,
    )


def _two_means(x: np.ndarray, max_iter: int = 50) -> np.ndarray:
    """2-means labels with farthest-pair initialization (deterministic)."""
    pairwise = cdist(x, x)
    i, j = np.unravel_index(np.argmax(pairwise), pairwise.shape)
    centers = x[[i, j]].copy()
    labels = None
    for _ in range(max_iter):
        dist = cdist(x, centers)
        new_labels = np.argmin(dist, axis=1)
        for side in (0, 1):
            if not np.any(new_labels == side):
                # Re-seed an empty side with the point farthest from the other center.
                far = int(np.argmax(dist[:, 1 - side]))
                new_labels[far] = side
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for side in (0, 1):
            centers[side] = x[labels == side].mean(axis=0)
    return labels


def init_from_batch(samples: np.ndarray, config: MousseConfig,
                    single_leaf: bool = False) -> MousseTree:
    """Build the starting tree by nested bisection of a complete training batch.

    Each cell is PCA-fitted; a cell whose delta still exceeds the tolerance is
    bisected by 2-means and the recursion continues, otherwise it becomes a
    leaf.  One extra level is fitted below every leaf as virtual children.
    Cells too small to bisect become leaves regardless of their delta (logged).
    With ``single_leaf`` the recursion is skipped entirely and the root is the
    only leaf (the single-subspace baseline).
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2:
        raise InsufficientData("training batch must be a 2-d array")
    n, D = samples.shape
    if n < 4 * (config.d + 1):
        raise InsufficientData(
            f"need at least {4 * (config.d + 1)} training samples, got {n}"
        )
    if not np.all(np.isfinite(samples)):
        raise InsufficientData("training batch must be complete (no missing entries)")
    tree = MousseTree(config, D)
    d = config.d

    def grow(x: np.ndarray, node_id: NodeId) -> None:
        node = _fit_cell(x, d, node_id, virtual=False)
        tree.nodes[node_id] = node
        tree.all_nodes.add(node_id)
        j, _ = node_id
        may_split = (not single_leaf and node.delta >= config.eps
                     and j + 1 <= config.max_depth and x.shape[0] >= 2 * (d + 1))
        if may_split:
            labels = _two_means(x)
            cells = [x[labels == side] for side in (0, 1)]
            if min(cell.shape[0] for cell in cells) >= d + 1:
                for cell, child_id in zip(cells, children_of(node_id)):
                    grow(cell, child_id)
                return
            log.info("cell at %s too small to bisect (%d points); keeping leaf",
                     node_id, x.shape[0])
        elif not single_leaf and node.delta >= config.eps:
            log.info("cell at %s kept as leaf with delta %.3g >= eps (size %d, depth %d)",
                     node_id, node.delta, x.shape[0], j)
        tree.leaf_set.add(node_id)
        _fit_virtual_children(tree, x, node_id)

    def _fit_virtual_children(tree: MousseTree, x: np.ndarray, leaf_id: NodeId) -> None:
        if x.shape[0] >= 2 * (d + 1):
            labels = _two_means(x)
            cells = [x[labels == side] for side in (0, 1)]
            if min(cell.shape[0] for cell in cells) >= d + 1:
                for cell, child_id in zip(cells, children_of(leaf_id)):
                    tree.nodes[child_id] = _fit_cell(cell, d, child_id, virtual=True)
                return
        tree._spawn_virtual_children(leaf_id)

    grow(samples, (0, 0))
    return tree


def init_single_subspace(samples: np.ndarray, config: MousseConfig) -> MousseTree:
    """Single-leaf tree (K = 1) with structure updates disabled."""
    pinned = replace(config, structure_updates=False)
    return init_from_batch(samples, pinned, single_leaf=True)
