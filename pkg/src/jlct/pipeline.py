"""End-to-end fitting pipeline: variant conversion through evaluation.

The model variants differ only in which covariate roles see a
time-varying covariate's actual trajectory versus its first recorded
value per subject:

  jlct1  no splitting; survival model on the original covariates
  jlct2  first-value conversion for both survival and split covariates
  jlct3  first-value conversion for survival covariates only
  jlct4  original covariates everywhere (the default)

Conversion never touches the longitudinal-model covariates.  Converted
columns are materialized under a name suffix so the same physical
column can serve different roles in different forms.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from .cox import CoxFit
from .curves import CovariatePath
from .data import LongDataset, VariableRoles, first_encountered, to_ltrc
from .errors import JlctError
from .lmm import LmmFit
from .metrics import MetricReport, acc_g, ibs, ise, mse_b, mse_y
from .simgen import Truth
from .splitting import NodeTest, SplitControls
from .tree import (
    JlctTree,
    TreeNode,
    assign_long,
    fit_leaf_models,
    grow,
    predict,
    prune_to,
    single_node_tree,
)

VARIANTS = ("jlct1", "jlct2", "jlct3", "jlct4")
FIRST_SUFFIX = "__first"


def apply_variant(data: LongDataset, roles: VariableRoles, variant: str):
    """Materialize first-value columns and rewire roles for a variant."""
    if variant not in VARIANTS:
        raise JlctError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    convert_survival = variant in ("jlct2", "jlct3")
    convert_split = variant == "jlct2"
    split_vars = () if variant == "jlct1" else roles.split_vars

    names = set()
    if convert_survival:
        names.update(roles.survival_vars)
    if convert_split:
        names.update(split_vars)
    if not names:
        return data, roles.replace(split_vars=split_vars)

    ordered = [n for n in data.covariate_names if n in names]
    converted = first_encountered(data, ordered)
    new_cols = np.column_stack([converted.column(n) for n in ordered])
    data2 = data.with_columns([n + FIRST_SUFFIX for n in ordered], new_cols)

    def rewire(group):
        return tuple(n + FIRST_SUFFIX for n in group)

    roles2 = roles.replace(
        split_vars=rewire(split_vars) if convert_split else split_vars,
        survival_vars=rewire(roles.survival_vars) if convert_survival
        else roles.survival_vars,
    )
    return data2, roles2


@dataclass(frozen=True)
class FittedModel:
    """A fitted tree plus everything needed to apply it to new data."""

    tree: JlctTree
    variant: str
    base_roles: VariableRoles
    fit_seconds: float

    def prepare(self, data: LongDataset) -> LongDataset:
        """Apply this model's variant conversion to new data."""
        prepared, _ = apply_variant(data, self.base_roles, self.variant)
        return prepared


def fit_jlct(data: LongDataset, roles: VariableRoles,
             controls: SplitControls | None = None, variant: str = "jlct4",
             shared_baseline: bool = False) -> FittedModel:
    """Variant conversion, LTRC conversion, growth, pruning, leaf models."""
    controls = controls or SplitControls()
    started = time.perf_counter()
    data2, roles2 = apply_variant(data, roles, variant)
    ltrc = to_ltrc(data2)
    if variant == "jlct1" or not roles2.split_vars:
        tree = single_node_tree(ltrc, roles2, controls)
    else:
        tree = grow(ltrc, roles2, controls)
        tree = prune_to(tree, controls.max_terminal_nodes)
    tree = fit_leaf_models(tree, ltrc, data2, shared_baseline=shared_baseline)
    return FittedModel(
        tree=tree,
        variant=variant,
        base_roles=roles,
        fit_seconds=time.perf_counter() - started,
    )


def subject_paths(data: LongDataset) -> list[CovariatePath]:
    """One piecewise-constant covariate path per subject."""
    paths = []
    for i in range(data.n_subjects):
        sl = data.subject_slice(i)
        paths.append(
            CovariatePath(
                times=data.times[sl],
                values=data.covariates[sl],
                names=data.covariate_names,
            )
        )
    return paths


def predict_dataset(model: FittedModel, data: LongDataset, horizon: float):
    """Curves, outcome predictions and per-row leaf ids for a dataset."""
    prepared = model.prepare(data)
    curves, yhats = [], []
    for path in subject_paths(prepared):
        curve, yhat = predict(model.tree, path, horizon)
        curves.append(curve)
        yhats.append(yhat)
    leaves = assign_long(model.tree, prepared)
    return curves, np.concatenate(yhats), leaves


def leaf_slopes(model: FittedModel) -> dict[int, np.ndarray]:
    """Per-leaf hazard slopes, with the fallback fit for flagged leaves."""
    out = {}
    for leaf in model.tree.leaf_ids():
        fit = model.tree.leaf_models[leaf]
        if leaf in model.tree.flagged_leaves and model.tree.fallback_model is not None:
            fit = model.tree.fallback_model
        out[leaf] = fit.coefficients
    return out


def evaluate_against_truth(model: FittedModel, data: LongDataset, truth: Truth,
                           in_sample: bool = False) -> MetricReport:
    """All truth-based metrics of one dataset under one fitted model."""
    horizon = float(data.event_time.max())
    curves, yhat, leaves = predict_dataset(model, data, horizon)
    true_curves = [truth.true_curve(i) for i in range(data.n_subjects)]
    ise_value = ise(curves, true_curves, horizon)
    mse_y_value = mse_y(yhat, data.outcome)
    mse_b_value = mse_b(
        leaf_slopes(model), leaves, truth.row_class, truth.slope_table
    )
    kw = dict(
        mse_b=mse_b_value,
        acc_g=acc_g(leaves, truth.row_class),
        ibs=ibs(curves, data.event_time),
        n_terminal=model.tree.n_terminal,
        runtime_seconds=model.fit_seconds,
    )
    if in_sample:
        kw.update(ise_in=ise_value, mse_y_in=mse_y_value)
    else:
        kw.update(ise_out=ise_value, mse_y_out=mse_y_value)
    return MetricReport(**kw)


def evaluate_observed(model: FittedModel, data: LongDataset) -> dict:
    """Truth-free metrics (real-data workflow): IBS and outcome MSE."""
    horizon = float(data.event_time.max())
    curves, yhat, _ = predict_dataset(model, data, horizon)
    return {
        "ibs": ibs(curves, data.event_time),
        "mse_y": mse_y(yhat, data.outcome),
    }


# ---------------------------------------------------------------------------
# model file round trip
# ---------------------------------------------------------------------------


def model_to_dict(model: FittedModel) -> dict:
    tree = model.tree
    return {
        "format": "jlct-model",
        "version": 1,
        "variant": model.variant,
        "fit_seconds": model.fit_seconds,
        "base_roles": model.base_roles.to_dict(),
        "tree": {
            "root_id": tree.root_id,
            "roles": tree.roles.to_dict(),
            "controls": tree.controls.to_dict(),
            "shared_baseline": tree.shared_baseline,
            "nodes": [tree.nodes[nid].to_dict() for nid in sorted(tree.nodes)],
            "leaf_models": {
                str(leaf): fit.to_dict() for leaf, fit in sorted(tree.leaf_models.items())
            },
            "fallback_model": tree.fallback_model.to_dict()
            if tree.fallback_model is not None
            else None,
            "flagged_leaves": sorted(tree.flagged_leaves),
            "longitudinal": tree.longitudinal_model.to_dict()
            if tree.longitudinal_model is not None
            else None,
        },
    }


def model_to_json(model: FittedModel) -> str:
    return json.dumps(model_to_dict(model), indent=2, sort_keys=True)


def _node_from_dict(d: dict) -> TreeNode:
    test = NodeTest(
        ts=float(d["test"]["ts"]),
        full_fit=None,
        null_fit=None,
        valid=bool(d["test"]["valid"]),
        reason=d["test"]["reason"],
        n_rows=int(d["test"]["n_rows"]),
        n_events=int(d["test"]["n_events"]),
    )
    node = TreeNode(
        node_id=int(d["id"]),
        test=test,
        row_fraction=float(d["row_fraction"]),
        closure=d.get("closure"),
    )
    if "split" in d:
        node.split = (
            d["split"]["variable"],
            float(d["split"]["threshold"]),
            float(d["split"]["score"]),
        )
        node.children = tuple(d["children"])
    return node


def model_from_dict(d: dict) -> FittedModel:
    if d.get("format") != "jlct-model":
        raise JlctError("not a model document")
    td = d["tree"]
    nodes = {}
    for nd in td["nodes"]:
        node = _node_from_dict(nd)
        nodes[node.node_id] = node
    tree = JlctTree(
        nodes=nodes,
        root_id=int(td["root_id"]),
        roles=VariableRoles.from_dict(td["roles"]),
        controls=SplitControls.from_dict(td["controls"]),
        leaf_models={
            int(leaf): CoxFit.from_dict(fd) for leaf, fd in td["leaf_models"].items()
        },
        fallback_model=CoxFit.from_dict(td["fallback_model"])
        if td["fallback_model"] is not None
        else None,
        flagged_leaves=frozenset(td["flagged_leaves"]),
        longitudinal_model=LmmFit.from_dict(td["longitudinal"])
        if td["longitudinal"] is not None
        else None,
        shared_baseline=bool(td["shared_baseline"]),
    )
    return FittedModel(
        tree=tree,
        variant=d["variant"],
        base_roles=VariableRoles.from_dict(d["base_roles"]),
        fit_seconds=float(d["fit_seconds"]),
    )


def model_from_json(text: str) -> FittedModel:
    return model_from_dict(json.loads(text))


def render_text(tree: JlctTree) -> str:
    """Plain-text tree: TS and row share per box, like the figure style."""
    lines = []

    def walk(nid: int, depth: int):
        node = tree.nodes[nid]
        indent = "  " * depth
        head = f"{indent}[{nid}] TS={node.test.ts:.2f} rows={100 * node.row_fraction:.1f}%"
        if node.is_leaf:
            reason = node.closure or "leaf"
            lines.append(f"{head} <leaf: {reason}>")
        else:
            variable, threshold, score = node.split
            lines.append(f"{head} split {variable} <= {threshold:.6g} (score={score:.3f})")
            walk(node.children[0], depth + 1)
            walk(node.children[1], depth + 1)

    walk(tree.root_id, 0)
    return "\n".join(lines) + "\n"
