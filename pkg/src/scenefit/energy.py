"""Graph-network energy over object arrangements.

The model assigns a scalar energy to a scene graph: low energy means the
arrangement looks like the training scenes. Node inputs are semantic
embeddings (a 2-layer MLP over raw object features, with the object's
width/height appended); each directed edge carries the relative pose of
the destination object in the source object's frame as
(dx, dy, cos dtheta, sin dtheta). A message along edge (j -> i) is a
single linear map of concat(v_i, v_j, e_ji); messages are summed per
destination node, graph layers are separated by LeakyReLU, node vectors
are add-pooled, and a 2-layer head produces the scalar.

Two variants:

* ``relative``: poses enter only through edge features, so the energy is
  invariant to rigid transforms of the whole scene.
* ``absolute``: normalised (x, y, cos theta, sin theta) are appended to
  the node inputs instead, and edge pose features are zeroed.

Everything is evaluated on a :mod:`scenefit.diffcore` tape. The tape is
built once per graph size and reused; per-edge gathers are expressed as
constant 0/1 selection matrices so a whole scene (or a batch of pose
hypotheses for one scene) is a handful of matrix ops. Edges and the
pooling order are canonically sorted by object id, which makes the energy
exactly invariant to the order objects are listed in.

Positions are divided by a per-dataset workspace half-extent before they
enter any feature, and the same divisor is applied to the width/height
descriptor; the divisor is stored in checkpoints.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from weakref import WeakKeyDictionary

import numpy as np

from . import diffcore
from .diffcore import Tape
from .scene import SceneGraph

__all__ = [
    "EnergyConfig",
    "EnergyModel",
    "CheckpointError",
    "init_model",
    "embed_semantics",
    "energy",
    "energy_pose_gradient",
    "save_checkpoint",
    "load_checkpoint",
]

VARIANTS = ("relative", "absolute")


class CheckpointError(Exception):
    pass


@dataclass(frozen=True)
class EnergyConfig:
    """Network dimensions. ``hidden`` is both the message width and the
    extractor's middle layer; ``s_em`` is the semantic embedding width
    before the scale descriptor is appended."""

    gnn_layers: int = 3
    hidden: int = 64
    s_em: int = 32
    leaky_slope: float = 0.01

    def __post_init__(self):
        if self.gnn_layers < 1 or self.hidden < 1 or self.s_em < 1:
            raise ValueError(f"bad energy config {self}")

    def node_dim(self, variant: str) -> int:
        return self.s_em + 2 + (4 if variant == "absolute" else 0)

    def layer_in_dim(self, layer: int, variant: str) -> int:
        width = self.node_dim(variant) if layer == 0 else self.hidden
        return 2 * width + 4

    def to_json(self, feature_dim: int) -> dict:
        return {
            "gnn_layers": self.gnn_layers,
            "hidden": self.hidden,
            "s_em": self.s_em,
            "leaky_slope": self.leaky_slope,
            "feature_dim": feature_dim,
        }


def _param_specs(config: EnergyConfig, feature_dim: int, variant: str):
    """Name -> shape for every parameter, in a fixed order. Weights are
    stored (in, out) so the tape applies them as x @ W."""
    h, s = config.hidden, config.s_em
    specs = [
        ("ext_w1", (feature_dim, h)),
        ("ext_b1", (h,)),
        ("ext_w2", (h, s)),
        ("ext_b2", (s,)),
    ]
    for l in range(config.gnn_layers):
        specs.append((f"gnn{l}_w", (config.layer_in_dim(l, variant), h)))
        specs.append((f"gnn{l}_b", (h,)))
    specs += [
        ("head_w1", (h, h)),
        ("head_b1", (h,)),
        ("head_w2", (h, 1)),
        ("head_b2", (1,)),
    ]
    return specs


class EnergyModel:
    """Parameter container plus cached evaluation tapes.

    ``params`` maps parameter name to a float64 array; training mutates
    these arrays in place via :meth:`set_params`.
    """

    def __init__(
        self,
        config: EnergyConfig,
        feature_dim: int,
        variant: str,
        workspace_half_extent: float,
        params: dict[str, np.ndarray],
    ):
        if variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
        if not workspace_half_extent > 0:
            raise ValueError("workspace_half_extent must be positive")
        self.config = config
        self.feature_dim = int(feature_dim)
        self.variant = variant
        self.workspace_half_extent = float(workspace_half_extent)
        expected = dict(_param_specs(config, feature_dim, variant))
        if set(params) != set(expected):
            raise ValueError(
                f"parameter names {sorted(params)} != expected {sorted(expected)}"
            )
        self.params = {}
        for name, shape in expected.items():
            arr = np.asarray(params[name], dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(
                    f"param {name}: shape {arr.shape} != expected {shape}"
                )
            self.params[name] = arr.copy()
        self._tapes: dict[tuple, Tape] = {}
        self._graph_bindings: WeakKeyDictionary = WeakKeyDictionary()

    # -- parameters -----------------------------------------------------

    def param_names(self) -> list[str]:
        return [name for name, _ in _param_specs(self.config, self.feature_dim, self.variant)]

    def flat_params(self) -> np.ndarray:
        return np.concatenate([self.params[n].ravel() for n in self.param_names()])

    def set_params(self, new: dict[str, np.ndarray]) -> None:
        for name, arr in new.items():
            self.params[name][...] = arr

    # -- tape construction ----------------------------------------------

    def _tape_for(self, n: int) -> Tape:
        key = (n, self.feature_dim)
        tape = self._tapes.get(key)
        if tape is None:
            tape = _build_energy_tape(
                n,
                self.feature_dim,
                self.config,
                self.variant,
                self.workspace_half_extent,
            )
            self._tapes[key] = tape
        return tape

    def _static_bindings(self, graph: SceneGraph) -> dict:
        cached = self._graph_bindings.get(graph)
        if cached is None:
            cached = _graph_bindings(graph, self.workspace_half_extent)
            self._graph_bindings[graph] = cached
        return cached

    def _bindings(self, graph: SceneGraph, poses: np.ndarray | None) -> dict:
        b = dict(self._static_bindings(graph))
        b.update(self.params)
        if poses is None:
            poses = graph.poses()
        poses = np.asarray(poses, dtype=np.float64)
        b["px"] = poses[..., 0:1]
        b["py"] = poses[..., 1:2]
        b["theta"] = poses[..., 2:3]
        return b

    # -- evaluation -------------------------------------------------------

    def energy(self, graph: SceneGraph, poses: np.ndarray | None = None):
        """Scalar energy for the graph's poses, or a vector of energies
        when ``poses`` has a leading batch axis (B, n, 3)."""
        tape = self._tape_for(graph.n)
        out = diffcore.evaluate(tape, self._bindings(graph, poses))
        return out.reshape(-1)[0] if out.ndim == 2 else out.reshape(out.shape[0])

    def energy_and_pose_grad(
        self, graph: SceneGraph, poses: np.ndarray | None = None, *, validate: bool = True
    ):
        """Energy plus dE/d(x, y, theta) per object, without masking.

        Batched poses give batched results: ((B,), (B, n, 3)).
        """
        tape = self._tape_for(graph.n)
        val, g = diffcore.value_and_grad(
            tape,
            self._bindings(graph, poses),
            ["px", "py", "theta"],
            validate=validate,
        )
        grad = np.concatenate([g["px"], g["py"], g["theta"]], axis=-1)
        if val.ndim == 2:
            return val.reshape(-1)[0], grad
        return val.reshape(val.shape[0]), grad

    def energy_and_param_grad(
        self, graph: SceneGraph, poses: np.ndarray, seed=None, *, validate: bool = True
    ):
        """Energy plus gradients w.r.t. every parameter.

        With batched poses, ``seed`` weights each batch element's
        contribution, so the result is d(sum_b seed_b * E_b)/d(params).
        """
        tape = self._tape_for(graph.n)
        bindings = self._bindings(graph, poses)
        if seed is not None:
            seed = np.asarray(seed, dtype=np.float64).reshape(-1, 1, 1)
        val, g = diffcore.value_and_grad(
            tape, bindings, self.param_names(), seed, validate=validate
        )
        if val.ndim == 2:
            return val.reshape(-1)[0], g
        return val.reshape(val.shape[0]), g


def init_model(
    config: EnergyConfig,
    feature_dim: int,
    variant: str = "relative",
    workspace_half_extent: float = 50.0,
    seed: int = 0,
) -> EnergyModel:
    """Fan-in uniform initialisation: every weight and bias of a layer is
    drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)), in a fixed parameter
    order from one seeded generator."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in _param_specs(config, feature_dim, variant):
        fan_in = shape[0] if len(shape) == 2 else _bias_fan_in(name, config, feature_dim, variant)
        bound = 1.0 / math.sqrt(fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape)
    return EnergyModel(config, feature_dim, variant, workspace_half_extent, params)


def _bias_fan_in(name: str, config: EnergyConfig, feature_dim: int, variant: str) -> int:
    specs = dict(_param_specs(config, feature_dim, variant))
    return specs[name.replace("_b", "_w")][0]


def _graph_bindings(graph: SceneGraph, half_extent: float) -> dict:
    n = graph.n
    e = len(graph.edges)
    src_sel = np.zeros((e, n))
    dst_sel = np.zeros((e, n))
    agg = np.zeros((n, e))
    for k, (j, i) in enumerate(graph.edges):
        src_sel[k, j] = 1.0
        dst_sel[k, i] = 1.0
        agg[i, k] = 1.0
    order = sorted(range(n), key=lambda i: graph.objects[i].object_id)
    pool = np.zeros((n, n))
    for row, i in enumerate(order):
        pool[row, i] = 1.0
    feat = np.array([o.raw_features for o in graph.objects], dtype=np.float64)
    scales = np.array([o.scale for o in graph.objects], dtype=np.float64)
    return {
        "src_sel": src_sel,
        "dst_sel": dst_sel,
        "agg": agg,
        "pool": pool,
        "feat": feat,
        "scales": scales / half_extent,
    }


def _build_energy_tape(
    n: int,
    feature_dim: int,
    config: EnergyConfig,
    variant: str,
    half_extent: float,
) -> Tape:
    e = n * (n - 1)
    h, s_em, slope = config.hidden, config.s_em, config.leaky_slope
    t = Tape()

    px = t.leaf("px", (n, 1))
    py = t.leaf("py", (n, 1))
    theta = t.leaf("theta", (n, 1))
    feat = t.leaf("feat", (n, feature_dim))
    scales = t.leaf("scales", (n, 2))
    src_sel = t.leaf("src_sel", (e, n))
    dst_sel = t.leaf("dst_sel", (e, n))
    agg = t.leaf("agg", (n, e))
    pool = t.leaf("pool", (n, n))
    p = {}
    for name, shape in _param_specs(config, feature_dim, variant):
        p[name] = t.leaf(name, shape)

    pxn = t.scale(px, 1.0 / half_extent)
    pyn = t.scale(py, 1.0 / half_extent)
    ct = t.cos(theta)
    st = t.sin(theta)

    if variant == "relative":
        cj = t.matmul(src_sel, ct)
        sj = t.matmul(src_sel, st)
        ci = t.matmul(dst_sel, ct)
        si = t.matmul(dst_sel, st)
        dx = t.sub(t.matmul(dst_sel, pxn), t.matmul(src_sel, pxn))
        dy = t.sub(t.matmul(dst_sel, pyn), t.matmul(src_sel, pyn))
        rel_x = t.add(t.mul(cj, dx), t.mul(sj, dy))
        rel_y = t.sub(t.mul(cj, dy), t.mul(sj, dx))
        cos_d = t.add(t.mul(ci, cj), t.mul(si, sj))
        sin_d = t.sub(t.mul(si, cj), t.mul(ci, sj))
        efeat = t.concat([rel_x, rel_y, cos_d, sin_d], axis=-1)
    else:
        efeat = t.const(np.zeros((e, 4)))

    z1 = t.leaky_relu(t.bias_add(t.matmul(feat, p["ext_w1"]), p["ext_b1"]), slope)
    z = t.bias_add(t.matmul(z1, p["ext_w2"]), p["ext_b2"])
    if variant == "relative":
        v = t.concat([z, scales], axis=-1)
    else:
        v = t.concat([z, scales, pxn, pyn, ct, st], axis=-1)

    for l in range(config.gnn_layers):
        vi = t.matmul(dst_sel, v)
        vj = t.matmul(src_sel, v)
        msg_in = t.concat([vi, vj, efeat], axis=-1)
        msg = t.bias_add(t.matmul(msg_in, p[f"gnn{l}_w"]), p[f"gnn{l}_b"])
        v = t.matmul(agg, msg)
        if l < config.gnn_layers - 1:
            v = t.leaky_relu(v, slope)

    pooled = t.sum_rows(t.matmul(pool, v))
    h1 = t.leaky_relu(t.bias_add(t.matmul(pooled, p["head_w1"]), p["head_b1"]), slope)
    t.bias_add(t.matmul(h1, p["head_w2"]), p["head_b2"])
    return t.freeze()


# -- public ops -------------------------------------------------------------


def embed_semantics(model: EnergyModel, raw_features, scale) -> np.ndarray:
    """Pose-independent node embedding: the extractor MLP over raw
    features with the raw (width, height) descriptor appended."""
    f = np.asarray(raw_features, dtype=np.float64)
    if f.shape != (model.feature_dim,):
        raise ValueError(
            f"raw_features shape {f.shape} != ({model.feature_dim},)"
        )
    slope = model.config.leaky_slope
    z1 = f @ model.params["ext_w1"] + model.params["ext_b1"]
    z1 = np.where(z1 > 0.0, z1, slope * z1)
    z = z1 @ model.params["ext_w2"] + model.params["ext_b2"]
    return np.concatenate([z, np.asarray(scale, dtype=np.float64)])


def energy(model: EnergyModel, graph: SceneGraph) -> float:
    """Scalar energy of the graph at its stored poses."""
    return float(model.energy(graph))


def energy_pose_gradient(model: EnergyModel, graph: SceneGraph) -> np.ndarray:
    """dE/d(x, y, theta) per object at the stored poses. Rows for
    non-movable objects are zero. The theta component is chained through
    (cos theta, sin theta)."""
    _, grad = model.energy_and_pose_grad(graph)
    grad = grad.copy()
    grad[~graph.movable_mask()] = 0.0
    return grad


# -- checkpoints -------------------------------------------------------------


def save_checkpoint(model: EnergyModel, path, meta: dict | None = None) -> None:
    """JSON checkpoint with full-precision parameters. Key order is fixed
    so identical models serialize byte-identically."""
    payload = {
        "version": 1,
        "config": model.config.to_json(model.feature_dim),
        "workspace_half_extent_cm": model.workspace_half_extent,
        "variant": model.variant,
        "params": {
            name: {
                "shape": list(model.params[name].shape),
                "data": model.params[name].ravel().tolist(),
            }
            for name in model.param_names()
        },
    }
    if meta is not None:
        payload["meta"] = meta
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f)
        f.write("\n")


def load_checkpoint(path) -> EnergyModel:
    with open(path, "r", encoding="utf-8") as f:
        try:
            payload = json.load(f)
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"invalid checkpoint JSON: {exc.msg}") from None
    for key in ("version", "config", "workspace_half_extent_cm", "variant", "params"):
        if key not in payload:
            raise CheckpointError(f"checkpoint missing key {key!r}")
    if payload["version"] != 1:
        raise CheckpointError(f"unsupported checkpoint version {payload['version']}")
    cfg_json = payload["config"]
    try:
        config = EnergyConfig(
            gnn_layers=int(cfg_json["gnn_layers"]),
            hidden=int(cfg_json["hidden"]),
            s_em=int(cfg_json["s_em"]),
            leaky_slope=float(cfg_json["leaky_slope"]),
        )
        feature_dim = int(cfg_json["feature_dim"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"bad checkpoint config: {exc}") from None
    params = {}
    for name, rec in payload["params"].items():
        arr = np.array(rec["data"], dtype=np.float64).reshape(rec["shape"])
        params[name] = arr
    try:
        return EnergyModel(
            config,
            feature_dim,
            payload["variant"],
            float(payload["workspace_half_extent_cm"]),
            params,
        )
    except ValueError as exc:
        raise CheckpointError(str(exc)) from None
