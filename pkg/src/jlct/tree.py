"""Recursive tree construction and the per-leaf models.

Growth is depth-first (left child first) with node ids assigned in
creation order, so a fixed dataset and controls always produce the same
tree.  A node becomes a leaf when its test statistic falls below the
stopping threshold, when its test fails a validity screen, or when no
candidate split survives the screens; pruning to the terminal-node
budget collapses the weakest splits afterwards.  Terminal nodes are the
estimated latent classes: each receives its own hazard model, and one
mixed model is fitted to the measurement rows with their assigned
classes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .cox import CoxFit, breslow_baseline, fit_cox, fit_cox_arrays, _invert_info
from .curves import CovariatePath, StepCurve
from .data import LongDataset, LtrcDataset, VariableRoles
from .errors import JlctError, UnfittableError
from .lmm import LmmFit, fit_lmm
from .splitting import NodeTest, SplitControls, best_split, node_test

CLOSE_TS = "ts-below-threshold"
CLOSE_SCREEN = "screen"
CLOSE_PRUNED = "pruned"


@dataclass
class TreeNode:
    node_id: int
    test: NodeTest
    row_fraction: float
    split: tuple[str, float, float] | None = None  # (variable, threshold, score)
    children: tuple[int, int] | None = None
    closure: str | None = None

    @property
    def is_leaf(self) -> bool:
        return self.children is None

    def to_dict(self) -> dict:
        d = {
            "id": self.node_id,
            "row_fraction": self.row_fraction,
            "test": self.test.to_dict(),
            "closure": self.closure,
        }
        if self.split is not None:
            d["split"] = {
                "variable": self.split[0],
                "threshold": self.split[1],
                "score": self.split[2],
            }
            d["children"] = list(self.children)
        return d


@dataclass(frozen=True)
class JlctTree:
    nodes: dict[int, TreeNode]
    root_id: int
    roles: VariableRoles
    controls: SplitControls
    leaf_models: dict[int, CoxFit] = field(default_factory=dict)
    fallback_model: CoxFit | None = None
    flagged_leaves: frozenset[int] = frozenset()
    longitudinal_model: LmmFit | None = None
    shared_baseline: bool = False

    def leaf_ids(self) -> list[int]:
        return sorted(nid for nid, node in self.nodes.items() if node.is_leaf)

    @property
    def n_terminal(self) -> int:
        return sum(1 for node in self.nodes.values() if node.is_leaf)


def grow(data: LtrcDataset, roles: VariableRoles, controls: SplitControls) -> JlctTree:
    """Grow the unpruned tree by recursive splitting."""
    root_test = node_test(data, roles.survival_vars, controls)
    if not root_test.valid:
        raise UnfittableError(f"root node test failed its screens ({root_test.reason})")
    nodes: dict[int, TreeNode] = {}
    counter = iter(range(10**9))
    total = data.n_rows

    def build(rows: LtrcDataset, test: NodeTest) -> int:
        nid = next(counter)
        node = TreeNode(node_id=nid, test=test, row_fraction=rows.n_rows / total)
        nodes[nid] = node
        if not test.valid:
            node.closure = CLOSE_SCREEN
            return nid
        if test.ts < controls.stop_threshold:
            node.closure = CLOSE_TS
            return nid
        cand = best_split(rows, roles, controls, test)
        if cand is None:
            node.closure = CLOSE_SCREEN
            return nid
        node.split = (cand.variable, cand.threshold, cand.score)
        mask = rows.column(cand.variable) <= cand.threshold
        left_id = build(rows.subset(mask), cand.left_test)
        right_id = build(rows.subset(~mask), cand.right_test)
        node.children = (left_id, right_id)
        return nid

    root_id = build(data, root_test)
    return JlctTree(nodes=nodes, root_id=root_id, roles=roles, controls=controls)


def single_node_tree(data: LtrcDataset, roles: VariableRoles,
                     controls: SplitControls) -> JlctTree:
    """The no-splitting tree: one latent class holding every row."""
    test = node_test(data, roles.survival_vars, controls)
    node = TreeNode(node_id=0, test=test, row_fraction=1.0, closure=CLOSE_SCREEN)
    return JlctTree(nodes={0: node}, root_id=0, roles=roles, controls=controls)


def prune_to(tree: JlctTree, max_leaves: int) -> JlctTree:
    """Collapse weakest leaf-parent splits until at most ``max_leaves`` remain.

    The collapsible node with the smallest split score goes first; score
    ties collapse the larger node id.  Fitted leaf models are discarded
    (refit after pruning).
    """
    if max_leaves < 1:
        raise JlctError("max_leaves must be at least 1")
    if tree.n_terminal <= max_leaves:
        return tree
    nodes = {
        nid: replace(node) for nid, node in tree.nodes.items()
    }

    def leaves():
        return [nid for nid, node in nodes.items() if node.is_leaf]

    while len(leaves()) > max_leaves:
        collapsible = [
            node
            for node in nodes.values()
            if node.children is not None
            and nodes[node.children[0]].is_leaf
            and nodes[node.children[1]].is_leaf
        ]
        victim = min(collapsible, key=lambda node: (node.split[2], -node.node_id))
        for child in victim.children:
            del nodes[child]
        victim.split = None
        victim.children = None
        victim.closure = CLOSE_PRUNED
    return JlctTree(
        nodes=nodes,
        root_id=tree.root_id,
        roles=tree.roles,
        controls=tree.controls,
        shared_baseline=tree.shared_baseline,
    )


def _route(tree: JlctTree, lookup, n_rows: int) -> np.ndarray:
    """Route rows to leaf ids; ``lookup(name)`` yields a column vector."""
    out = np.empty(n_rows, dtype=np.int64)
    stack = [(tree.root_id, np.arange(n_rows))]
    while stack:
        nid, idx = stack.pop()
        node = tree.nodes[nid]
        if node.is_leaf:
            out[idx] = nid
            continue
        variable, threshold, _ = node.split
        go_left = lookup(variable)[idx] <= threshold
        stack.append((node.children[0], idx[go_left]))
        stack.append((node.children[1], idx[~go_left]))
    return out


def assign(tree: JlctTree, rows: LtrcDataset) -> np.ndarray:
    """Leaf id for every LTRC row, routed by the row's own covariates."""
    return _route(tree, rows.column, rows.n_rows)


def assign_long(tree: JlctTree, data: LongDataset) -> np.ndarray:
    """Leaf id for every measurement row of a long dataset."""
    return _route(tree, data.column, data.n_rows)


def fit_leaf_models(tree: JlctTree, data: LtrcDataset, long_data: LongDataset,
                    shared_baseline: bool = False) -> JlctTree:
    """Fit per-leaf hazard models and the shared longitudinal model.

    Leaves whose hazard fit fails (non-convergence or an unfittable
    design) are flagged and fall back to the pooled root-level fit.
    """
    survival_vars = tuple(tree.roles.survival_vars)
    fallback = fit_cox(data, survival_vars)
    leaf_of_row = assign(tree, data)
    leaf_ids = tree.leaf_ids()

    leaf_models: dict[int, CoxFit] = {}
    flagged: set[int] = set()
    if shared_baseline and len(leaf_ids) > 1 and survival_vars:
        leaf_models, flagged = _shared_baseline_fits(
            data, survival_vars, leaf_ids, leaf_of_row
        )
    else:
        for leaf in leaf_ids:
            sub = data.subset(leaf_of_row == leaf)
            try:
                fit = fit_cox(sub, survival_vars)
            except JlctError:
                fit = None
            if fit is None or not fit.converged:
                flagged.add(leaf)
                leaf_models[leaf] = fallback
            else:
                leaf_models[leaf] = fit

    memberships = assign_long(tree, long_data)
    longitudinal = fit_lmm(
        long_data, memberships, tree.roles.fixed_vars, tree.roles.random_vars
    )
    return replace(
        tree,
        leaf_models=leaf_models,
        fallback_model=fallback,
        flagged_leaves=frozenset(flagged),
        longitudinal_model=longitudinal,
        shared_baseline=bool(shared_baseline and len(leaf_ids) > 1 and survival_vars),
    )


def _shared_baseline_fits(data: LtrcDataset, survival_vars, leaf_ids, leaf_of_row):
    """One hazard fit with leaf-interacted slopes and a common baseline.

    Interacted columns that are identically zero carry no information
    and keep a zero slope through the minimum-norm Newton step.
    """
    Xs = data.columns(survival_vars)
    p = len(survival_vars)
    G = len(leaf_ids)
    design = np.zeros((data.n_rows, G * p))
    for gi, leaf in enumerate(leaf_ids):
        mask = leaf_of_row == leaf
        design[mask, gi * p : (gi + 1) * p] = Xs[mask]
    beta, ll, _, info, converged, index = fit_cox_arrays(
        data.L, data.R, data.status, design
    )
    vcov = _invert_info(info)
    baseline = breslow_baseline(index, design @ beta)
    flagged: set[int] = set()
    models: dict[int, CoxFit] = {}
    for gi, leaf in enumerate(leaf_ids):
        block = slice(gi * p, (gi + 1) * p)
        models[leaf] = CoxFit(
            names=tuple(survival_vars),
            coefficients=beta[block],
            vcov=vcov[block, block],
            log_partial_lik=ll,
            n_events=int(data.status[leaf_of_row == leaf].sum()),
            baseline=baseline,
            converged=converged,
        )
        if not converged:
            flagged.add(leaf)
    return models, flagged


def predict(tree: JlctTree, path: CovariatePath, horizon: float):
    """Survival curve and longitudinal predictions for one subject.

    Each path segment routes to a leaf by its own covariates; that
    leaf's hazard applies over the segment, and the segment pieces
    compose into one cumulative hazard.  Longitudinal predictions use
    the routed class with a zero subject intercept (the subject effect
    is unobservable out of sample).
    """
    if tree.longitudinal_model is None or not tree.leaf_models:
        raise UnfittableError("tree has no fitted leaf models; run fit_leaf_models")
    seg_leaf = _route(
        tree, lambda name: path.values[:, path.names.index(name)]
        if name in path.names
        else _missing(name), path.times.size
    )
    survival_vars = tuple(tree.roles.survival_vars)

    knots, increments = [], []
    bounds = np.concatenate([[0.0], path.times[1:], [np.inf]])
    for k in range(path.times.size):
        lo, hi = bounds[k], min(bounds[k + 1], horizon)
        if lo >= hi:
            continue
        leaf = int(seg_leaf[k])
        model = tree.leaf_models[leaf]
        if leaf in tree.flagged_leaves and tree.fallback_model is not None:
            model = tree.fallback_model
        times = model.baseline.event_times
        inc = model.baseline.increments()
        window = (times >= lo) & (times < hi) if hi < horizon else \
            (times >= lo) & (times <= hi)
        if not window.any():
            continue
        if survival_vars:
            x = path.reorder(model.names).values[k]
            mult = float(np.exp(x @ model.coefficients))
        else:
            mult = 1.0
        knots.append(times[window])
        increments.append(mult * inc[window])
    if knots:
        knots = np.concatenate(knots)
        order = np.argsort(knots, kind="stable")
        knots = knots[order]
        cum = np.cumsum(np.concatenate(increments)[order])
        curve = StepCurve(knots=knots, values=np.exp(-cum), horizon=horizon)
    else:
        curve = StepCurve(knots=np.empty(0), values=np.empty(0), horizon=horizon)

    lmm = tree.longitudinal_model
    fixed_names = lmm.fixed_names
    random_names = lmm.class_effect_names[1:]
    yhat = np.empty(path.times.size)
    for k in range(path.times.size):
        row = lmm.class_row(int(seg_leaf[k]))
        val = row[0]
        if fixed_names:
            val += float(path.reorder(fixed_names).values[k] @ lmm.fixed_effects)
        if random_names:
            val += float(path.reorder(random_names).values[k] @ row[1:])
        yhat[k] = val
    return curve, yhat


def _missing(name):
    from .errors import NamedColumnError

    raise NamedColumnError(f"covariate {name!r} absent from prediction path")
