"""Training and evaluation harness: Adam with constraint retractions.

Configs are plain dicts (the CLI reads them from YAML).  ``train`` builds the
dataset and model from the config, optimizes full batch, writes a metrics CSV
(rows ``epoch,split,metric,value``), a self-describing checkpoint, and a JSON
run report.  ``evaluate`` rebuilds a model from a checkpoint and scores it on
a dataset's test split.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time

import numpy as np

from . import autodiff as ad
from . import data as datamod
from . import featuremaps as fm
from . import model as modelmod
from . import tasks
from . import vectorfields as vf
from .errors import ConfigurationError, NumericError
from .manifolds import make_manifold

BALL_PARAM_MARGIN = 1e-5  # constrained Poincare parameters stay this far inside


# ---------------------------------------------------------------------------
# optimizer


def _project_constraint(param: ad.Parameter) -> None:
    """Pull a just-updated parameter back onto its constraint set."""
    if param.constraint is None:
        return
    if param.constraint == "unit_rows":
        norms = np.linalg.norm(param.data, axis=-1, keepdims=True)
        param.data = param.data / np.maximum(norms, 1e-300)
    elif param.constraint == "stiefel":
        q, r = np.linalg.qr(param.data)
        # fix the QR sign ambiguity so the retraction is continuous
        signs = np.sign(np.diag(r))
        signs[signs == 0] = 1.0
        param.data = q * signs[None, :]
    elif param.constraint == "ball":
        radius = float(param.constraint_arg or 1.0)
        limit = (1.0 - BALL_PARAM_MARGIN) * radius
        norms = np.linalg.norm(param.data, axis=-1, keepdims=True)
        scale = np.minimum(1.0, limit / np.maximum(norms, 1e-300))
        param.data = param.data * scale
    else:
        raise ConfigurationError(f"unknown constraint {param.constraint!r}")


class Adam:
    """Adam with per-parameter constraint projection after each step."""

    def __init__(self, params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        if lr <= 0:
            raise ConfigurationError("learning rate must be positive")
        self.params = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.t = 0
        self.m = {id(p): np.zeros_like(p.data) for p in self.params}
        self.v = {id(p): np.zeros_like(p.data) for p in self.params}

    def step(self, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p in self.params:
            g = grads.get(p)
            if g is None:
                continue
            g = np.asarray(g, dtype=np.float64)
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m = self.m[id(p)] = b1 * self.m[id(p)] + (1 - b1) * g
            v = self.v[id(p)] = b2 * self.v[id(p)] + (1 - b2) * g * g
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            _project_constraint(p)


# ---------------------------------------------------------------------------
# config plumbing


DEFAULT_CONFIG = {
    "task": "nc",
    "seed": 0,
    "output_dir": "runs/run",
    "dataset": {"kind": "sir", "n_nodes": 300, "branching": 2,
                "infection_prob": 0.5, "split": [0.6, 0.2, 0.2]},
    "manifold": {"kind": "poincare", "dim": 8, "curvature": -1.0},
    "model": {"depth": 2, "field": "feature", "num_features": 16,
              "hidden": [], "nonlinearity": True, "residual": "exp_map",
              "propagate_power": 0, "field_propagate_power": 0,
              "normalized_adjacency": True,
              "bimap_dim": None},
    "optimizer": {"lr": 1e-2, "epochs": 100, "weight_decay": 0.0,
                  "grad_clip": 0.0},
}


def merge_config(config: dict) -> dict:
    """Overlay a user config on the defaults (one level of nesting)."""
    out = {}
    for key, default in DEFAULT_CONFIG.items():
        if isinstance(default, dict):
            out[key] = dict(default)
            out[key].update(config.get(key, {}) or {})
        else:
            out[key] = config.get(key, default)
    for key in config:
        if key not in DEFAULT_CONFIG:
            raise ConfigurationError(f"unknown config key {key!r}")
    return out


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _validate_config(config: dict) -> None:
    if config["task"] not in ("nc", "lp", "spd_classify"):
        raise ConfigurationError(f"unknown task {config['task']!r}")
    if config["optimizer"]["lr"] <= 0:
        raise ConfigurationError("learning rate must be positive")
    if config["optimizer"]["epochs"] < 1:
        raise ConfigurationError("need at least one epoch")
    if config["model"]["depth"] < 1:
        raise ConfigurationError("need at least one residual layer")


# ---------------------------------------------------------------------------
# dataset / model construction


def build_dataset(config: dict):
    spec = config["dataset"]
    kind = spec.get("kind", "sir")
    seed = int(config["seed"])
    if kind == "sir":
        ds = datamod.generate_sir_tree(
            int(spec.get("n_nodes", 300)), int(spec.get("branching", 2)),
            float(spec.get("infection_prob", 0.5)), seed=seed)
    elif kind == "spd_synthetic":
        ds = datamod.generate_spd_classes(
            int(spec.get("num_samples", 200)), int(spec.get("dim", 10)),
            int(spec.get("frames", 40)), int(spec.get("num_classes", 2)),
            float(spec.get("separation", 1.0)), seed=seed)
    elif kind == "blobs":
        rng = np.random.default_rng(seed)
        n = int(spec.get("n_nodes", 100))
        d = int(spec.get("dim", 2))
        gap = float(spec.get("gap", 4.0))
        half = n // 2
        feats = rng.standard_normal((n, d))
        feats[:half, 0] += gap / 2
        feats[half:, 0] -= gap / 2
        labels = np.concatenate([np.zeros(half, np.int64),
                                 np.ones(n - half, np.int64)])
        ds = datamod.GraphDataset(feats, labels, np.empty((0, 2), np.int64),
                                  name="blobs")
    elif kind == "dir":
        ds = datamod.load_dataset(spec["path"])
    else:
        raise ConfigurationError(f"unknown dataset kind {kind!r}")
    split = spec.get("split", [0.6, 0.2, 0.2])
    return datamod.split_dataset(ds, tuple(split), seed=seed)


def _build_bank(manifold, kind: str, count: int, rng):
    if kind == "horosphere":
        return fm.HorosphereBank.random(manifold, count, rng)
    if kind == "hyperplane":
        return fm.HyperplaneBank.random(manifold, count, rng)
    if kind == "spd_eig":
        return fm.SPDEigBank(manifold, count)
    raise ConfigurationError(f"unknown feature bank kind {kind!r}")


def _default_bank_kind(manifold_kind: str) -> str:
    return {"poincare": "horosphere", "euclidean": "hyperplane",
            "spd_affine": "spd_eig", "spd_logeuclidean": "spd_eig"}.get(
        manifold_kind, "hyperplane")


def build_model(config: dict, in_dim: int, num_classes: int,
                propagate: np.ndarray | None = None):
    """Deterministically construct the model named by the config.

    ``in_dim`` is the raw feature width (graph tasks) or the input matrix
    size (SPD tasks).  The parameter order is fixed so checkpoints can be
    restored positionally.
    """
    mspec = config["manifold"]
    spec = config["model"]
    rng = np.random.default_rng(int(config["seed"]) + 1)
    manifold = make_manifold(mspec["kind"], int(mspec["dim"]),
                             curvature=float(mspec.get("curvature", -1.0)))
    task = config["task"]
    hidden = list(spec.get("hidden", []))
    nonlin = bool(spec.get("nonlinearity", True))
    residual = spec.get("residual", "exp_map")
    depth = int(spec["depth"])
    field_kind = spec.get("field", "feature")

    if propagate is None and spec.get("field_propagate_power", 0):
        raise ConfigurationError(
            "field_propagate_power set but no propagation matrix supplied")

    spd_input = task == "spd_classify"
    layers = []
    if spd_input and mspec["kind"].startswith("spd"):
        source = make_manifold(mspec["kind"], in_dim)
        embed = (modelmod.StiefelBiMap.random(source, manifold, rng)
                 if in_dim != manifold.dim else None)
    elif spd_input:
        # flattened-Euclidean baseline: upper triangle of the matrix as a vector
        flat_dim = in_dim * (in_dim + 1) // 2
        embed = modelmod.TangentLinear.random(flat_dim, manifold, rng)
    else:
        embed = modelmod.TangentLinear.random(in_dim, manifold, rng)

    for _ in range(depth):
        if field_kind == "feature":
            bank_kind = spec.get("feature_kind") or _default_bank_kind(mspec["kind"])
            bank = _build_bank(manifold, bank_kind, int(spec.get("num_features", 16)), rng)
            net = vf.MLP([bank.size] + hidden + [bank.size], rng, nonlin,
                         zero_last=True)
            field = vf.FeatureInducedVectorField(bank, net, propagate=propagate)
        elif field_kind == "embedded":
            dim = manifold.ambient_dim
            net = vf.MLP([dim] + hidden + [dim], rng, nonlin, zero_last=True)
            field = vf.EmbeddedVectorField(manifold, net)
        elif field_kind.startswith("spd_"):
            field = vf.make_spd_field(field_kind, manifold, rng, hidden, nonlin,
                                      zero_last=True)
        else:
            raise ConfigurationError(f"unknown field kind {field_kind!r}")
        layers.append(modelmod.ResidualLayer(modelmod.Inclusion(manifold),
                                             field, residual=residual))

    if task == "lp":
        head = None
    elif mspec["kind"].startswith("spd"):
        head = modelmod.SPDLogEigHead.random(manifold.dim, num_classes, rng)
    else:
        head = modelmod.LinearHead.random(manifold.ambient_dim, num_classes, rng)
    return modelmod.ResidualModel(embed, layers, head)


def _model_inputs(dataset, config):
    """Raw model input array for the configured task."""
    if config["task"] == "spd_classify":
        mats = dataset.matrices
        if config["manifold"]["kind"].startswith("spd"):
            return mats
        return ad.value_of(vf.sym_to_upper(mats, mats.shape[1]))
    feats = dataset.features
    power = int(config["model"].get("propagate_power", 0))
    if power > 0:
        feats = tasks.graph_premultiply(
            dataset.adjacency(), power, feats,
            normalized=bool(config["model"].get("normalized_adjacency", True)))
    return feats


def _field_propagation(dataset, config):
    """In-layer propagation matrix (adjacency power) for feature fields."""
    power = int(config["model"].get("field_propagate_power", 0))
    if power <= 0:
        return None
    if config["task"] == "spd_classify":
        raise ConfigurationError("field propagation needs a graph dataset")
    return tasks.propagation_operator(
        dataset.adjacency(), power,
        normalized=bool(config["model"].get("normalized_adjacency", True)))


# ---------------------------------------------------------------------------
# link-prediction plumbing


def _split_edges(dataset, fractions, seed):
    rng = np.random.default_rng(seed)
    edges = dataset.edges
    order = rng.permutation(edges.shape[0])
    k1 = int(round(len(order) * fractions[0]))
    k2 = int(round(len(order) * (fractions[0] + fractions[1])))
    return {"train": edges[order[:k1]], "val": edges[order[k1:k2]],
            "test": edges[order[k2:]]}


def _sample_negatives(num, n_nodes, edge_set, rng):
    out = []
    while len(out) < num:
        u = int(rng.integers(0, n_nodes))
        v = int(rng.integers(0, n_nodes))
        if u == v or (min(u, v), max(u, v)) in edge_set:
            continue
        out.append((u, v))
    return np.asarray(out, dtype=np.int64)


# ---------------------------------------------------------------------------
# training


@dataclasses.dataclass
class RunReport:
    config: dict
    config_hash: str
    epochs: list
    final: dict
    wall_clock: float
    checkpoint: str
    metrics_csv: str

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=1, sort_keys=True)


def _param_norm_summary(params) -> str:
    return ", ".join(
        f"{p.name or 'param'}={np.linalg.norm(p.data):.3e}" for p in params)


def _metric_rows(epoch, split, metrics):
    return [f"{epoch},{split},{name},{repr(float(value))}\n"
            for name, value in metrics.items()]


def train(config: dict, dataset=None) -> RunReport:
    """Optimize the configured model; returns the report and writes artifacts."""
    config = merge_config(config)
    _validate_config(config)
    start = time.time()
    task = config["task"]
    seed = int(config["seed"])
    if dataset is None:
        dataset = build_dataset(config)
    inputs = _model_inputs(dataset, config)
    num_classes = int(dataset.labels.max()) + 1 if task != "lp" else 2
    in_dim = dataset.matrices.shape[1] if task == "spd_classify" \
        else dataset.features.shape[1]
    model = build_model(config, in_dim, num_classes,
                        propagate=_field_propagation(dataset, config))
    params = list(model.parameters())

    decoder = None
    if task == "lp":
        decoder = tasks.FermiDiracDecoder()
        params += decoder.parameters()
        edge_splits = _split_edges(dataset, (0.7, 0.15, 0.15), seed)
        edge_set = {(min(u, v), max(u, v)) for u, v in dataset.edges.tolist()}
        neg_rng = np.random.default_rng(seed + 2)
        eval_negatives = {
            split: _sample_negatives(len(edge_splits[split]), dataset.num_nodes,
                                     edge_set, neg_rng)
            for split in ("train", "val", "test")}

    opt_spec = config["optimizer"]
    optimizer = Adam(params, lr=float(opt_spec["lr"]),
                     weight_decay=float(opt_spec.get("weight_decay", 0.0)))
    epochs = int(opt_spec["epochs"])

    manifold = model.manifold

    def lp_loss_and_scores(tape_active):
        encoded = model.encode(inputs)
        pos = edge_splits["train"]
        neg = _sample_negatives(len(pos), dataset.num_nodes, edge_set, neg_rng) \
            if tape_active else eval_negatives["train"]
        pairs = np.concatenate([pos, neg])
        labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
        d = manifold.dist(encoded[pairs[:, 0]], encoded[pairs[:, 1]])
        probs = decoder(d)
        return tasks.binary_cross_entropy(probs, labels), encoded

    def lp_auc(encoded, split):
        pos, neg = edge_splits[split], eval_negatives[split]
        pairs = np.concatenate([pos, neg])
        labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
        d = ad.value_of(manifold.dist(ad.lift(encoded[pairs[:, 0]]),
                                      ad.lift(encoded[pairs[:, 1]])))
        scores = ad.value_of(decoder(d))
        return tasks.roc_auc(scores, labels)

    csv_rows = ["epoch,split,metric,value\n"]
    epoch_records = []
    final_metrics = {}
    for epoch in range(epochs):
        with ad.Tape() as tape:
            for p in params:
                tape.watch(p)
            if task == "lp":
                loss, encoded_node = lp_loss_and_scores(True)
            else:
                scores = model(inputs)
                train_idx = dataset.splits["train"]
                loss = tasks.softmax_cross_entropy_batch(
                    scores[train_idx], dataset.labels[train_idx])
            loss_val = float(ad.value_of(loss))
            if not np.isfinite(loss_val):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}; parameter norms: "
                    f"{_param_norm_summary(params)}")
            grads = ad.grad(tape, loss)
        clip = float(opt_spec.get("grad_clip", 0.0))
        if clip > 0.0:
            total = np.sqrt(sum(float(np.sum(grads[p] ** 2)) for p in params))
            if total > clip:
                scale = clip / total
                grads = {p: grads[p] * scale for p in params}
        optimizer.step({p: grads[p] for p in params})

        record = {"train": {"loss": loss_val}}
        if task == "lp":
            encoded = ad.value_of(model.encode(inputs))
            for split in ("train", "val", "test"):
                record.setdefault(split, {})["roc_auc"] = lp_auc(encoded, split)
        else:
            scores = ad.value_of(model(inputs))
            preds = scores.argmax(axis=1)
            for split in ("train", "val", "test"):
                idx = dataset.splits[split]
                record.setdefault(split, {})["f1"] = tasks.f1_micro(
                    preds[idx], dataset.labels[idx])
        for split, metrics in record.items():
            csv_rows += _metric_rows(epoch, split, metrics)
        epoch_records.append({"epoch": epoch, **{
            f"{split}_{name}": value for split, metrics in record.items()
            for name, value in metrics.items()}})
        final_metrics = {f"{split}_{name}": value
                         for split, metrics in record.items()
                         for name, value in metrics.items()}

    out_dir = config["output_dir"]
    os.makedirs(out_dir, exist_ok=True)
    metrics_path = os.path.join(out_dir, "metrics.csv")
    with open(metrics_path, "w") as fh:
        fh.writelines(csv_rows)
    ckpt_path = os.path.join(out_dir, "checkpoint.json")
    ckpt_config = {"config": config, "in_dim": int(in_dim),
                   "num_classes": int(num_classes)}
    modelmod.save_checkpoint(ckpt_path, ckpt_config, params)
    report = RunReport(config=config, config_hash=config_hash(config),
                       epochs=epoch_records, final=final_metrics,
                       wall_clock=time.time() - start,
                       checkpoint=ckpt_path, metrics_csv=metrics_path)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        fh.write(report.to_json())
    return report


def restore(checkpoint_path: str, dataset=None):
    """Rebuild the model (and LP decoder) saved by ``train``.

    Models trained with in-layer field propagation need the dataset to
    rebuild the propagation matrix.
    """
    ckpt_config, saved = modelmod.load_checkpoint(checkpoint_path)
    config = ckpt_config["config"]
    propagate = None
    if int(config["model"].get("field_propagate_power", 0)) > 0:
        if dataset is None:
            raise ConfigurationError(
                "checkpoint uses field propagation; restore needs the dataset")
        propagate = _field_propagation(dataset, config)
    model = build_model(config, int(ckpt_config["in_dim"]),
                        int(ckpt_config["num_classes"]), propagate=propagate)
    params = list(model.parameters())
    decoder = None
    if config["task"] == "lp":
        decoder = tasks.FermiDiracDecoder()
        params += decoder.parameters()
    if len(params) != len(saved):
        raise ConfigurationError(
            f"checkpoint holds {len(saved)} parameters, model needs {len(params)}")
    for target, source in zip(params, saved):
        if target.data.shape != source.data.shape:
            raise ConfigurationError(
                f"parameter {target.name!r} shape {target.data.shape} does not "
                f"match checkpoint shape {source.data.shape}")
        target.data = source.data
    return config, model, decoder


def evaluate(checkpoint_path: str, dataset, split: str = "test") -> dict:
    """Score a trained checkpoint on one split of a dataset."""
    config, model, decoder = restore(checkpoint_path, dataset=dataset)
    task = config["task"]
    if dataset.splits is None:
        fractions = tuple(config["dataset"].get("split", [0.6, 0.2, 0.2]))
        dataset = datamod.split_dataset(dataset, fractions, seed=int(config["seed"]))
    inputs = _model_inputs(dataset, config)
    if task == "lp":
        seed = int(config["seed"])
        edge_splits = _split_edges(dataset, (0.7, 0.15, 0.15), seed)
        edge_set = {(min(u, v), max(u, v)) for u, v in dataset.edges.tolist()}
        neg_rng = np.random.default_rng(seed + 2)
        negatives = {s: _sample_negatives(len(edge_splits[s]), dataset.num_nodes,
                                          edge_set, neg_rng)
                     for s in ("train", "val", "test")}
        encoded = ad.value_of(model.encode(inputs))
        pos, neg = edge_splits[split], negatives[split]
        pairs = np.concatenate([pos, neg])
        labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
        d = ad.value_of(model.manifold.dist(ad.lift(encoded[pairs[:, 0]]),
                                            ad.lift(encoded[pairs[:, 1]])))
        scores = ad.value_of(decoder(d))
        return {"roc_auc": tasks.roc_auc(scores, labels)}
    scores = ad.value_of(model(inputs))
    preds = scores.argmax(axis=1)
    idx = dataset.splits[split]
    return {"f1": tasks.f1_micro(preds[idx], dataset.labels[idx])}
