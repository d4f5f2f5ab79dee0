"""Decision trees and sum-of-trees priors for combination-weight surfaces.

A tree maps a row of weight modifiers z to a scalar through axis-aligned
splitting rules "z_k <= d_k vs z_k > d_k"; an ensemble of S trees predicts the
sum of its members.  The prior over structures makes a node at depth theta
internal with probability c0 / (1 + theta)^c1, puts a uniform prior over
splitting variables and over the observed values of the chosen variable, and
gives terminal values independent N(0, c2 / S) so the ensemble-level prior
variance stays c2 regardless of S.

Structure sampling uses Metropolis-Hastings proposals (GROW / PRUNE / CHANGE)
with terminal values integrated out; terminal values are then redrawn from
their conjugate normal conditionals under heteroskedastic residual variances.
Proposals that would leave any terminal node with zero routed rows are
rejected outright, which keeps every root-to-leaf region nonempty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .rng import _gen


@dataclass(frozen=True)
class TreePriorConfig:
    """Structure and terminal-value prior plus move-selection weights."""

    c0: float = 0.95            # base split probability at the root
    c1: float = 2.0             # depth penalty exponent
    c2: float = (1.0 / 3.0) ** 2  # ensemble-level prior variance of the surface
    p_grow: float = 0.4
    p_prune: float = 0.4
    p_change: float = 0.2

    def __post_init__(self):
        if not 0.0 < self.c0 < 1.0:
            raise ValidationError("c0 must lie in (0, 1)")
        if self.c1 < 0 or self.c2 <= 0:
            raise ValidationError("c1 must be >= 0 and c2 > 0")
        total = self.p_grow + self.p_prune + self.p_change
        if min(self.p_grow, self.p_prune, self.p_change) < 0 or abs(total - 1.0) > 1e-12:
            raise ValidationError("move probabilities must be nonnegative and sum to 1")


def split_probability(depth: int, cfg: TreePriorConfig) -> float:
    """Prior probability that a node at ``depth`` (root = 0) is internal."""
    if depth < 0:
        raise ValueError("depth must be >= 0")
    return cfg.c0 / (1.0 + depth) ** cfg.c1


class TreeNode:
    """Binary tree node; terminal iff ``var is None``. Routing: left iff z[var] <= threshold."""

    __slots__ = ("var", "threshold", "left", "right", "value")

    def __init__(self, var=None, threshold=None, left=None, right=None, value=0.0):
        self.var = var
        self.threshold = threshold
        self.left = left
        self.right = right
        self.value = value

    @property
    def is_leaf(self) -> bool:
        return self.var is None

    @staticmethod
    def leaf(value: float = 0.0) -> "TreeNode":
        return TreeNode(value=value)

    @staticmethod
    def split(var: int, threshold: float, left: "TreeNode", right: "TreeNode") -> "TreeNode":
        return TreeNode(var=var, threshold=threshold, left=left, right=right)

    def copy(self) -> "TreeNode":
        if self.is_leaf:
            return TreeNode.leaf(self.value)
        return TreeNode.split(self.var, self.threshold, self.left.copy(), self.right.copy())


def tree_to_jsonable(node: TreeNode):
    """Nested-list form: ["s", var, threshold, left, right] or ["l", value]."""
    if node.is_leaf:
        return ["l", float(node.value)]
    return ["s", int(node.var), float(node.threshold),
            tree_to_jsonable(node.left), tree_to_jsonable(node.right)]


def tree_from_jsonable(obj) -> TreeNode:
    if not isinstance(obj, (list, tuple)) or not obj:
        raise ValidationError("malformed tree serialization")
    if obj[0] == "l":
        return TreeNode.leaf(float(obj[1]))
    if obj[0] == "s":
        return TreeNode.split(int(obj[1]), float(obj[2]),
                              tree_from_jsonable(obj[3]), tree_from_jsonable(obj[4]))
    raise ValidationError(f"unknown tree node tag {obj[0]!r}")


def _walk(node: TreeNode, depth: int = 0):
    yield node, depth
    if not node.is_leaf:
        yield from _walk(node.left, depth + 1)
        yield from _walk(node.right, depth + 1)


def tree_depth(root: TreeNode) -> int:
    return max(d for _, d in _walk(root))


def terminal_nodes(root: TreeNode) -> list[TreeNode]:
    return [n for n, _ in _walk(root) if n.is_leaf]


def internal_nodes(root: TreeNode) -> list[tuple[TreeNode, int]]:
    return [(n, d) for n, d in _walk(root) if not n.is_leaf]


def prunable_nodes(root: TreeNode) -> list[tuple[TreeNode, int]]:
    """Internal nodes whose two children are both terminal."""
    return [(n, d) for n, d in _walk(root)
            if not n.is_leaf and n.left.is_leaf and n.right.is_leaf]


def count_splits(root: TreeNode, n_vars: int) -> np.ndarray:
    """Number of internal nodes splitting on each modifier."""
    counts = np.zeros(n_vars, dtype=np.int64)
    for node, _ in _walk(root):
        if not node.is_leaf:
            counts[node.var] += 1
    return counts


def evaluate_tree(root: TreeNode, z: np.ndarray) -> np.ndarray:
    """Terminal value reached by each row of ``z`` (n, K)."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    out = np.empty(z.shape[0])
    stack = [(root, np.arange(z.shape[0]))]
    while stack:
        node, rows = stack.pop()
        if node.is_leaf:
            out[rows] = node.value
            continue
        go_left = z[rows, node.var] <= node.threshold
        stack.append((node.left, rows[go_left]))
        stack.append((node.right, rows[~go_left]))
    return out


def leaf_memberships(root: TreeNode, z: np.ndarray) -> list[tuple[TreeNode, np.ndarray]]:
    """Terminal nodes with the row indices routed to each (rows may be empty)."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    out = []
    stack = [(root, np.arange(z.shape[0]))]
    while stack:
        node, rows = stack.pop()
        if node.is_leaf:
            out.append((node, rows))
            continue
        go_left = z[rows, node.var] <= node.threshold
        stack.append((node.left, rows[go_left]))
        stack.append((node.right, rows[~go_left]))
    return out


@dataclass
class TreeEnsemble:
    """Sum of S trees with cached per-tree fitted values over a fixed design."""

    trees: list[TreeNode]
    cfg: TreePriorConfig = field(default_factory=TreePriorConfig)

    @staticmethod
    def root_only(n_trees: int, cfg: TreePriorConfig | None = None, value: float = 0.0) -> "TreeEnsemble":
        cfg = cfg or TreePriorConfig()
        return TreeEnsemble([TreeNode.leaf(value) for _ in range(n_trees)], cfg)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def leaf_prior_var(self) -> float:
        return self.cfg.c2 / self.n_trees

    def evaluate(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        total = np.zeros(z.shape[0])
        for tree in self.trees:
            total += evaluate_tree(tree, z)
        return total

    def split_counts(self, n_vars: int) -> np.ndarray:
        counts = np.zeros(n_vars, dtype=np.int64)
        for tree in self.trees:
            counts += count_splits(tree, n_vars)
        return counts

    def to_jsonable(self):
        return [tree_to_jsonable(t) for t in self.trees]

    @staticmethod
    def from_jsonable(obj, cfg: TreePriorConfig | None = None) -> "TreeEnsemble":
        return TreeEnsemble([tree_from_jsonable(t) for t in obj], cfg or TreePriorConfig())


def count_splits_by_modifier(ensemble: TreeEnsemble, n_vars: int) -> np.ndarray:
    return ensemble.split_counts(n_vars)


def split_candidates(z: np.ndarray) -> list[np.ndarray]:
    """Observed values of each modifier; thresholds are drawn uniformly from these."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    return [np.unique(z[:, k]) for k in range(z.shape[1])]


@dataclass
class MoveProposal:
    tree: TreeNode
    log_prior_ratio: float
    log_proposal_ratio: float
    move: str
    valid: bool


def _invalid(root: TreeNode, move: str) -> MoveProposal:
    return MoveProposal(root, -np.inf, 0.0, move, False)


def _move_probs(root: TreeNode, cfg: TreePriorConfig) -> dict[str, float]:
    # PRUNE and CHANGE need an internal node; on a single-terminal tree all
    # selection mass shifts to GROW.
    if root.is_leaf:
        return {"grow": 1.0}
    return {"grow": cfg.p_grow, "prune": cfg.p_prune, "change": cfg.p_change}


def _any_empty_leaf(root: TreeNode, z: np.ndarray) -> bool:
    return any(rows.size == 0 for _, rows in leaf_memberships(root, z))


def _grow_increment_log_prior(depth: int, n_cand: int, n_vars: int, cfg: TreePriorConfig) -> float:
    p_here = split_probability(depth, cfg)
    p_child = split_probability(depth + 1, cfg)
    return (math.log(p_here) - math.log(1.0 - p_here)
            + 2.0 * math.log(1.0 - p_child)
            - math.log(n_vars) - math.log(n_cand))


def propose_tree_move(root: TreeNode, z: np.ndarray, cfg: TreePriorConfig, rng,
                      candidates: list[np.ndarray] | None = None,
                      move: str | None = None,
                      choice: tuple | None = None) -> MoveProposal:
    """One GROW / PRUNE / CHANGE proposal on a copy of ``root``.

    Returns the proposed tree together with the log proposal-density ratio
    q(new -> old) / q(old -> new) and the log structure-prior ratio
    p(new) / p(old); the caller combines these with the integrated-likelihood
    ratio to accept or reject.  A proposal that routes zero rows to some
    terminal node, or that has no admissible threshold, comes back with
    ``valid=False`` and must be treated as rejected.

    ``move`` and ``choice`` pin the move type and its random indices; both are
    testing hooks, the default is the random mixture from ``cfg``.
    """
    g = _gen(rng)
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    n_vars = z.shape[1]
    if n_vars == 0:
        return _invalid(root, "none")
    if candidates is None:
        candidates = split_candidates(z)
    if move is None:
        probs = _move_probs(root, cfg)
        names = sorted(probs)
        move = names[g.choice(len(names), p=np.array([probs[n] for n in names]))]

    if move == "grow":
        return _propose_grow(root, z, cfg, g, candidates, n_vars, choice)
    if move == "prune":
        return _propose_prune(root, z, cfg, g, candidates, n_vars, choice)
    if move == "change":
        return _propose_change(root, z, cfg, g, candidates, n_vars, choice)
    raise ValueError(f"unknown move '{move}'")


def _leaf_order(root: TreeNode) -> list[TreeNode]:
    return terminal_nodes(root)


def _node_depths(root: TreeNode) -> dict[int, int]:
    return {id(n): d for n, d in _walk(root)}


def _propose_grow(root, z, cfg, g, candidates, n_vars, choice) -> MoveProposal:
    new = root.copy()
    leaves = _leaf_order(new)
    depths = _node_depths(new)
    if choice is None:
        leaf_i = int(g.integers(len(leaves)))
        var = int(g.integers(n_vars))
        cand = candidates[var]
        if cand.size == 0:
            return _invalid(root, "grow")
        thr = float(cand[g.integers(cand.size)])
    else:
        leaf_i, var, thr_i = choice
        cand = candidates[var]
        thr = float(cand[thr_i])
    target = leaves[leaf_i]
    depth = depths[id(target)]

    target.var = var
    target.threshold = thr
    target.left = TreeNode.leaf(0.0)
    target.right = TreeNode.leaf(0.0)
    if _any_empty_leaf(new, z):
        return _invalid(root, "grow")

    p_sel_fwd = _move_probs(root, cfg)["grow"]
    p_sel_rev = _move_probs(new, cfg)["prune"]
    log_q_fwd = (math.log(p_sel_fwd) - math.log(len(leaves))
                 - math.log(n_vars) - math.log(cand.size))
    log_q_rev = math.log(p_sel_rev) - math.log(len(prunable_nodes(new)))
    log_prior = _grow_increment_log_prior(depth, cand.size, n_vars, cfg)
    return MoveProposal(new, log_prior, log_q_rev - log_q_fwd, "grow", True)


def _propose_prune(root, z, cfg, g, candidates, n_vars, choice) -> MoveProposal:
    if root.is_leaf:
        return _invalid(root, "prune")
    new = root.copy()
    prunable = prunable_nodes(new)
    if choice is None:
        node_i = int(g.integers(len(prunable)))
    else:
        (node_i,) = choice
    node, depth = prunable[node_i]
    n_cand = candidates[node.var].size
    node.var = None
    node.threshold = None
    node.left = None
    node.right = None
    node.value = 0.0

    p_sel_fwd = _move_probs(root, cfg)["prune"]
    p_sel_rev = _move_probs(new, cfg)["grow"]
    log_q_fwd = math.log(p_sel_fwd) - math.log(len(prunable))
    log_q_rev = (math.log(p_sel_rev) - math.log(len(_leaf_order(new)))
                 - math.log(n_vars) - math.log(n_cand))
    log_prior = -_grow_increment_log_prior(depth, n_cand, n_vars, cfg)
    return MoveProposal(new, log_prior, log_q_rev - log_q_fwd, "prune", True)


def _propose_change(root, z, cfg, g, candidates, n_vars, choice) -> MoveProposal:
    if root.is_leaf:
        return _invalid(root, "change")
    new = root.copy()
    internals = internal_nodes(new)
    if choice is None:
        node_i = int(g.integers(len(internals)))
        var = int(g.integers(n_vars))
        cand = candidates[var]
        if cand.size == 0:
            return _invalid(root, "change")
        thr_i = int(g.integers(cand.size))
    else:
        node_i, var, thr_i = choice
        cand = candidates[var]
    node, _ = internals[node_i]
    old_var = node.var
    node.var = var
    node.threshold = float(cand[thr_i])
    if _any_empty_leaf(new, z):
        return _invalid(root, "change")
    # Node choice is symmetric and the rule prior equals the rule proposal, so
    # the two ratios cancel exactly.
    n_old, n_new = candidates[old_var].size, cand.size
    log_prior = math.log(n_old) - math.log(n_new)
    return MoveProposal(new, log_prior, -log_prior, "change", True)


def log_marginal_likelihood(root: TreeNode, z: np.ndarray, resid: np.ndarray,
                            variances: np.ndarray, leaf_var: float) -> float:
    """Structure evidence with terminal values integrated out.

    Terms common to every partition of the same rows (the Gaussian constants
    and the pure-residual quadratic) are dropped; only ratios across
    structures are meaningful.
    """
    total = 0.0
    for _, rows in leaf_memberships(root, z):
        if rows.size == 0:
            return -np.inf
        prec = float(np.sum(1.0 / variances[rows]))
        b = float(np.sum(resid[rows] / variances[rows]))
        shrink = 1.0 + leaf_var * prec
        total += -0.5 * math.log(shrink) + 0.5 * leaf_var * b * b / shrink
    return total


def sample_terminal_nodes(root: TreeNode, z: np.ndarray, resid: np.ndarray,
                          variances: np.ndarray, leaf_var: float, rng) -> None:
    """Conjugate redraw of every terminal value, in place.

    Each leaf has prior N(0, leaf_var) and sees its routed residuals with
    heteroskedastic variances; a leaf with no routed rows draws from the prior.
    """
    g = _gen(rng)
    for node, rows in leaf_memberships(root, z):
        if rows.size == 0:
            node.value = float(g.standard_normal() * math.sqrt(leaf_var))
            continue
        prec = float(np.sum(1.0 / variances[rows]))
        b = float(np.sum(resid[rows] / variances[rows]))
        post_var = 1.0 / (prec + 1.0 / leaf_var)
        node.value = float(post_var * b + math.sqrt(post_var) * g.standard_normal())


def gibbs_update_ensemble(ens: TreeEnsemble, z: np.ndarray, response: np.ndarray,
                          variances: np.ndarray, rng,
                          candidates: list[np.ndarray] | None = None,
                          fits: np.ndarray | None = None,
                          structure_updates: bool = True) -> tuple[np.ndarray, int]:
    """One sweep over all trees: MH structure move then conjugate leaf redraw.

    ``fits`` is the (S, n) cache of per-tree evaluations; pass the previous
    sweep's cache to avoid a full re-evaluation.  Returns the updated cache
    and the number of accepted structure moves.  With ``structure_updates``
    off (or with no modifiers) only terminal values are refreshed.
    """
    g = _gen(rng)
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    response = np.asarray(response, dtype=np.float64)
    variances = np.asarray(variances, dtype=np.float64)
    n = z.shape[0]
    if candidates is None:
        candidates = split_candidates(z)
    if fits is None:
        fits = np.stack([evaluate_tree(t, z) for t in ens.trees]) if ens.n_trees else np.zeros((0, n))
    total = fits.sum(axis=0)
    leaf_var = ens.leaf_prior_var
    accepted = 0
    do_moves = structure_updates and z.shape[1] > 0

    for s, tree in enumerate(ens.trees):
        partial = response - (total - fits[s])
        if do_moves:
            prop = propose_tree_move(tree, z, ens.cfg, g, candidates)
            if prop.valid:
                delta = (log_marginal_likelihood(prop.tree, z, partial, variances, leaf_var)
                         - log_marginal_likelihood(tree, z, partial, variances, leaf_var))
                log_alpha = delta + prop.log_prior_ratio + prop.log_proposal_ratio
                if math.log(g.uniform()) < log_alpha:
                    tree = prop.tree
                    ens.trees[s] = tree
                    accepted += 1
        sample_terminal_nodes(tree, z, partial, variances, leaf_var, g)
        total -= fits[s]
        fits[s] = evaluate_tree(tree, z)
        total += fits[s]
    return fits, accepted


def simulate_tree_from_prior(z: np.ndarray, cfg: TreePriorConfig, rng,
                             max_depth: int = 64, max_tries: int = 1000) -> TreeNode:
    """Draw a tree from the structure prior truncated to feasible trees.

    Feasibility means every terminal region contains at least one observed
    row; infeasible draws are rejected and resimulated.
    """
    g = _gen(rng)
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    n_vars = z.shape[1]
    cands = split_candidates(z)

    def build(depth: int) -> TreeNode:
        if depth >= max_depth:
            raise _PriorSimRetry
        if g.uniform() >= split_probability(depth, cfg) or n_vars == 0:
            return TreeNode.leaf(0.0)
        var = int(g.integers(n_vars))
        cand = cands[var]
        if cand.size == 0:
            raise _PriorSimRetry
        thr = float(cand[g.integers(cand.size)])
        return TreeNode.split(var, thr, build(depth + 1), build(depth + 1))

    for _ in range(max_tries):
        try:
            tree = build(0)
        except _PriorSimRetry:
            continue
        if not _any_empty_leaf(tree, z):
            return tree
    raise ValidationError("could not draw a feasible tree from the prior")


class _PriorSimRetry(Exception):
    pass
