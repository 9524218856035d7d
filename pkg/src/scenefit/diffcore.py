"""Reverse-mode differentiation over small dense float64 tensors.

The numeric core under the arrangement energy network and its training
loss. A :class:`Tape` records a fixed computation once, with shapes
inferred and checked while it is built; the tape can then be evaluated
many times with different leaf bindings, for example once per step of a
sampling chain.

Two deliberate restrictions keep the core small and predictable:

* float64 only, and no implicit broadcasting between operand shapes.
  The one sanctioned exception is an optional leading batch axis on leaf
  values, which lets many independent evaluations (sampling chains,
  contrastive negatives) share a single pass. Trailing shapes are still
  checked exactly against the declared leaf shapes.
* the primitive set is closed: matrix multiply, bias add, elementwise
  add / subtract / multiply, multiplication by a python scalar,
  LeakyReLU, concatenation, sums of equal-shaped tensors, row sums
  (add pooling), log-sum-exp, negation, and elementwise sin / cos for
  angle leaves.

Tapes are immutable once built, hold no evaluation state, and may be
shared between threads. Re-evaluating the same tape with the same
bindings is bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Tape",
    "Ref",
    "TapeError",
    "evaluate",
    "gradient",
    "value_and_grad",
]

LEAKY_SLOPE = 0.01


class TapeError(Exception):
    """Raised for malformed tape construction, bad bindings, or non-finite
    intermediates. ``op_index`` identifies the offending recorded op."""

    def __init__(self, message: str, op_index: int | None = None):
        if op_index is not None:
            message = f"op {op_index}: {message}"
        super().__init__(message)
        self.op_index = op_index


@dataclass(frozen=True)
class Ref:
    """Handle to a node on a tape."""

    index: int


@dataclass(frozen=True)
class _Op:
    kind: str
    inputs: tuple[int, ...]
    shape: tuple[int, ...]
    # op-specific static payload: leaf name, const value, scalar factor,
    # leaky slope, or concat axis.
    payload: object = None


class Tape:
    """Append-only record of a computation. Node construction is the only
    mutation; the node list is already in topological order because every
    input must exist before its consumer is recorded."""

    def __init__(self):
        self._ops: list[_Op] = []
        self._leaves: dict[str, int] = {}
        self._frozen = False

    # -- introspection -------------------------------------------------

    def __len__(self) -> int:
        return len(self._ops)

    @property
    def leaf_names(self) -> tuple[str, ...]:
        return tuple(self._leaves)

    def leaf_shape(self, name: str) -> tuple[int, ...]:
        return self._ops[self._leaves[name]].shape

    @property
    def root(self) -> Ref:
        if not self._ops:
            raise TapeError("empty tape has no root")
        return Ref(len(self._ops) - 1)

    def freeze(self) -> "Tape":
        self._frozen = True
        return self

    # -- construction helpers -------------------------------------------

    def _append(self, op: _Op) -> Ref:
        if self._frozen:
            raise TapeError("tape is frozen; build a new tape instead")
        self._ops.append(op)
        return Ref(len(self._ops) - 1)

    def _shape(self, ref: Ref) -> tuple[int, ...]:
        if not isinstance(ref, Ref) or not 0 <= ref.index < len(self._ops):
            raise TapeError(f"bad node reference {ref!r}")
        return self._ops[ref.index].shape

    # -- leaves and constants ------------------------------------------

    def leaf(self, name: str, shape: tuple[int, ...]) -> Ref:
        if name in self._leaves:
            raise TapeError(f"duplicate leaf name {name!r}")
        shape = tuple(int(s) for s in shape)
        # zero-size dims are allowed: an edgeless graph sums no messages
        if any(s < 0 for s in shape):
            raise TapeError(f"leaf {name!r} has negative shape {shape}")
        ref = self._append(_Op("leaf", (), shape, name))
        self._leaves[name] = ref.index
        return ref

    def const(self, value) -> Ref:
        arr = np.asarray(value, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise TapeError("constant contains non-finite entries")
        return self._append(_Op("const", (), arr.shape, arr))

    # -- primitives ------------------------------------------------------

    def matmul(self, a: Ref, b: Ref) -> Ref:
        sa, sb = self._shape(a), self._shape(b)
        if len(sa) != 2 or len(sb) != 2:
            raise TapeError(f"matmul needs rank-2 operands, got {sa} @ {sb}")
        if sa[1] != sb[0]:
            raise TapeError(f"matmul inner dims differ: {sa} @ {sb}")
        return self._append(_Op("matmul", (a.index, b.index), (sa[0], sb[1])))

    def bias_add(self, x: Ref, b: Ref) -> Ref:
        sx, sb = self._shape(x), self._shape(b)
        if len(sb) != 1 or not sx or sx[-1] != sb[0]:
            raise TapeError(f"bias_add needs (..., n) + (n,), got {sx} + {sb}")
        return self._append(_Op("bias_add", (x.index, b.index), sx))

    def _binary(self, kind: str, a: Ref, b: Ref) -> Ref:
        sa, sb = self._shape(a), self._shape(b)
        if sa != sb:
            raise TapeError(f"{kind} shapes differ: {sa} vs {sb}")
        return self._append(_Op(kind, (a.index, b.index), sa))

    def add(self, a: Ref, b: Ref) -> Ref:
        return self._binary("add", a, b)

    def sub(self, a: Ref, b: Ref) -> Ref:
        return self._binary("sub", a, b)

    def mul(self, a: Ref, b: Ref) -> Ref:
        return self._binary("mul", a, b)

    def scale(self, x: Ref, factor: float) -> Ref:
        factor = float(factor)
        if not np.isfinite(factor):
            raise TapeError("scale factor must be finite")
        return self._append(_Op("scale", (x.index,), self._shape(x), factor))

    def neg(self, x: Ref) -> Ref:
        return self._append(_Op("neg", (x.index,), self._shape(x)))

    def leaky_relu(self, x: Ref, slope: float = LEAKY_SLOPE) -> Ref:
        slope = float(slope)
        return self._append(_Op("leaky_relu", (x.index,), self._shape(x), slope))

    def sin(self, x: Ref) -> Ref:
        return self._append(_Op("sin", (x.index,), self._shape(x)))

    def cos(self, x: Ref) -> Ref:
        return self._append(_Op("cos", (x.index,), self._shape(x)))

    def concat(self, parts: list[Ref], axis: int = -1) -> Ref:
        if not parts:
            raise TapeError("concat of zero parts")
        if axis not in (-1, -2):
            raise TapeError(f"concat axis must be -1 or -2, got {axis}")
        shapes = [self._shape(p) for p in parts]
        rank = len(shapes[0])
        if axis == -2 and rank < 2:
            raise TapeError("concat along axis -2 needs rank >= 2")
        for s in shapes:
            if len(s) != rank:
                raise TapeError(f"concat rank mismatch: {shapes}")
            for ax in range(rank):
                if ax != rank + axis and s[ax] != shapes[0][ax]:
                    raise TapeError(f"concat off-axis dims differ: {shapes}")
        out = list(shapes[0])
        out[axis] = sum(s[axis] for s in shapes)
        return self._append(
            _Op("concat", tuple(p.index for p in parts), tuple(out), axis)
        )

    def add_n(self, parts: list[Ref]) -> Ref:
        if not parts:
            raise TapeError("add_n of zero parts")
        shapes = [self._shape(p) for p in parts]
        if any(s != shapes[0] for s in shapes):
            raise TapeError(f"add_n shapes differ: {shapes}")
        return self._append(_Op("add_n", tuple(p.index for p in parts), shapes[0]))

    def sum_rows(self, x: Ref) -> Ref:
        sx = self._shape(x)
        if len(sx) < 2:
            raise TapeError(f"sum_rows needs rank >= 2, got {sx}")
        out = sx[:-2] + (1, sx[-1])
        return self._append(_Op("sum_rows", (x.index,), out))

    def logsumexp(self, x: Ref) -> Ref:
        sx = self._shape(x)
        if not sx:
            raise TapeError("logsumexp needs rank >= 1")
        out = sx[:-1] + (1,)
        return self._append(_Op("logsumexp", (x.index,), out))


# -- evaluation ----------------------------------------------------------


def _bind(tape: Tape, leaf_values: dict) -> tuple[dict, int]:
    """Validate bindings against declared leaf shapes.

    Returns the coerced arrays and the shared batch size (0 when every
    binding is unbatched)."""
    bound = {}
    batch = 0
    for name, idx in tape._leaves.items():
        if name not in leaf_values:
            raise TapeError(f"leaf {name!r} is not bound", idx)
        arr = np.asarray(leaf_values[name], dtype=np.float64)
        want = tape._ops[idx].shape
        if arr.shape == want:
            pass
        elif arr.ndim == len(want) + 1 and arr.shape[1:] == want:
            if batch and arr.shape[0] != batch:
                raise TapeError(
                    f"leaf {name!r} batch {arr.shape[0]} != {batch}", idx
                )
            batch = arr.shape[0]
        else:
            raise TapeError(
                f"leaf {name!r} bound with shape {arr.shape}, declared {want}",
                idx,
            )
        bound[name] = arr
    extra = set(leaf_values) - set(bound)
    if extra:
        raise TapeError(f"bindings for unknown leaves: {sorted(extra)}")
    return bound, batch


def _forward(tape: Tape, bound: dict, validate: bool) -> list:
    with np.errstate(over="ignore", invalid="ignore"):
        return _forward_inner(tape, bound, validate)


def _forward_inner(tape: Tape, bound: dict, validate: bool) -> list:
    vals: list = [None] * len(tape._ops)
    for i, op in enumerate(tape._ops):
        k = op.kind
        if k == "leaf":
            v = bound[op.payload]
        elif k == "const":
            v = op.payload
        elif k == "matmul":
            v = np.matmul(vals[op.inputs[0]], vals[op.inputs[1]])
        elif k == "bias_add":
            v = vals[op.inputs[0]] + vals[op.inputs[1]]
        elif k == "add":
            v = vals[op.inputs[0]] + vals[op.inputs[1]]
        elif k == "sub":
            v = vals[op.inputs[0]] - vals[op.inputs[1]]
        elif k == "mul":
            v = vals[op.inputs[0]] * vals[op.inputs[1]]
        elif k == "scale":
            v = vals[op.inputs[0]] * op.payload
        elif k == "neg":
            v = -vals[op.inputs[0]]
        elif k == "leaky_relu":
            x = vals[op.inputs[0]]
            v = np.where(x > 0.0, x, op.payload * x)
        elif k == "sin":
            v = np.sin(vals[op.inputs[0]])
        elif k == "cos":
            v = np.cos(vals[op.inputs[0]])
        elif k == "concat":
            parts = [vals[j] for j in op.inputs]
            nd = max(p.ndim for p in parts)
            if any(p.ndim != nd for p in parts):
                b = next(p.shape[0] for p in parts if p.ndim == nd)
                parts = [
                    p if p.ndim == nd else np.broadcast_to(p, (b,) + p.shape)
                    for p in parts
                ]
            v = np.concatenate(parts, axis=op.payload)
        elif k == "add_n":
            parts = [vals[j] for j in op.inputs]
            v = parts[0]
            for p in parts[1:]:
                v = v + p
        elif k == "sum_rows":
            v = vals[op.inputs[0]].sum(axis=-2, keepdims=True)
        elif k == "logsumexp":
            x = vals[op.inputs[0]]
            m = np.max(x, axis=-1, keepdims=True)
            v = m + np.log(np.sum(np.exp(x - m), axis=-1, keepdims=True))
        else:  # pragma: no cover
            raise TapeError(f"unknown op kind {k!r}", i)
        if validate and k not in ("leaf", "const") and not np.isfinite(v).all():
            raise TapeError("non-finite intermediate value", i)
        vals[i] = v
    return vals


def evaluate(tape: Tape, leaf_values: dict, *, validate: bool = True):
    """Run the tape forward and return the value of its root node.

    ``leaf_values`` maps leaf name to an array of the declared shape, or
    of that shape with one extra leading batch axis shared across all
    batched leaves. Inputs are never modified.
    """
    bound, _ = _bind(tape, leaf_values)
    vals = _forward(tape, bound, validate)
    return vals[tape.root.index]


def _mm_swap(x):
    return np.swapaxes(x, -1, -2)


def _reduce_extra(adj, ndim: int):
    """Sum away leading batch axes so ``adj`` matches a stored value rank."""
    while adj.ndim > ndim:
        adj = adj.sum(axis=0)
    return adj


def gradient(
    tape: Tape,
    leaf_values: dict,
    targets: list[str] | tuple[str, ...] | None = None,
    seed=None,
    *,
    validate: bool = True,
) -> dict:
    """Reverse-mode gradients of the root with respect to target leaves.

    ``targets`` defaults to every leaf. ``seed`` is the adjoint injected
    at the root (defaults to ones of the root's evaluated shape); passing
    per-batch-element seeds turns a batched evaluation into a weighted
    sum of per-element gradients. The returned arrays match each leaf's
    bound shape, with batch axes summed away for leaves bound unbatched.
    """
    root, grads = value_and_grad(
        tape, leaf_values, targets, seed, validate=validate
    )
    return grads


def value_and_grad(
    tape: Tape,
    leaf_values: dict,
    targets=None,
    seed=None,
    *,
    validate: bool = True,
):
    """Forward pass plus reverse-mode gradients in one call.

    Returns ``(root_value, {leaf_name: gradient})``. See :func:`gradient`.
    """
    # Like the forward pass, the backward sweep must not warn on
    # overflow: validation reports non-finite values as TapeError.
    with np.errstate(over="ignore", invalid="ignore"):
        return _value_and_grad_inner(tape, leaf_values, targets, seed, validate)


def _value_and_grad_inner(tape, leaf_values, targets, seed, validate):
    if targets is None:
        targets = list(tape._leaves)
    targets = list(targets)
    for name in targets:
        if name not in tape._leaves:
            raise TapeError(f"gradient target {name!r} is not a leaf")

    bound, _ = _bind(tape, leaf_values)
    vals = _forward(tape, bound, validate)
    root_idx = tape.root.index
    root_val = vals[root_idx]

    # Propagate adjoints only through nodes between a target and the root.
    needs = [False] * len(tape._ops)
    target_idx = {tape._leaves[n] for n in targets}
    for i, op in enumerate(tape._ops):
        if op.kind == "leaf" and i in target_idx:
            needs[i] = True
        elif op.inputs and any(needs[j] for j in op.inputs):
            needs[i] = True

    adjoints: list = [None] * len(tape._ops)
    if seed is None:
        seed_arr = np.ones_like(root_val)
    else:
        seed_arr = np.asarray(seed, dtype=np.float64)
        if seed_arr.shape != np.shape(root_val):
            raise TapeError(
                f"seed shape {seed_arr.shape} != root shape {np.shape(root_val)}"
            )
    if needs[root_idx]:
        adjoints[root_idx] = seed_arr.copy()

    def accum(idx: int, contrib):
        contrib = _reduce_extra(contrib, np.ndim(vals[idx]))
        if adjoints[idx] is None:
            adjoints[idx] = np.array(
                np.broadcast_to(contrib, np.shape(vals[idx]))
                if np.shape(contrib) != np.shape(vals[idx])
                else contrib
            )
        else:
            adjoints[idx] += contrib

    for i in range(len(tape._ops) - 1, -1, -1):
        d = adjoints[i]
        if d is None or not needs[i]:
            continue
        op = tape._ops[i]
        k = op.kind
        if k in ("leaf", "const"):
            continue
        ins = op.inputs
        if k == "matmul":
            a, b = vals[ins[0]], vals[ins[1]]
            if needs[ins[0]]:
                accum(ins[0], np.matmul(d, _mm_swap(b)))
            if needs[ins[1]]:
                accum(ins[1], np.matmul(_mm_swap(a), d))
        elif k == "bias_add":
            if needs[ins[0]]:
                accum(ins[0], d)
            if needs[ins[1]]:
                db = d
                while db.ndim > 1:
                    db = db.sum(axis=0)
                accum(ins[1], db)
        elif k == "add":
            for j in ins:
                if needs[j]:
                    accum(j, d)
        elif k == "sub":
            if needs[ins[0]]:
                accum(ins[0], d)
            if needs[ins[1]]:
                accum(ins[1], -d)
        elif k == "mul":
            a, b = vals[ins[0]], vals[ins[1]]
            if needs[ins[0]]:
                accum(ins[0], d * b)
            if needs[ins[1]]:
                accum(ins[1], d * a)
        elif k == "scale":
            accum(ins[0], d * op.payload)
        elif k == "neg":
            accum(ins[0], -d)
        elif k == "leaky_relu":
            x = vals[ins[0]]
            # the kink at exactly zero takes the negative-slope branch
            accum(ins[0], d * np.where(x > 0.0, 1.0, op.payload))
        elif k == "sin":
            accum(ins[0], d * np.cos(vals[ins[0]]))
        elif k == "cos":
            accum(ins[0], -d * np.sin(vals[ins[0]]))
        elif k == "concat":
            axis = op.payload
            offset = 0
            for j in ins:
                width = tape._ops[j].shape[axis]
                sl = [slice(None)] * d.ndim
                sl[axis] = slice(offset, offset + width)
                if needs[j]:
                    accum(j, d[tuple(sl)])
                offset += width
        elif k == "add_n":
            for j in ins:
                if needs[j]:
                    accum(j, d)
        elif k == "sum_rows":
            x = vals[ins[0]]
            accum(ins[0], np.broadcast_to(d, _batched_like(d, x.shape)))
        elif k == "logsumexp":
            x = vals[ins[0]]
            m = np.max(x, axis=-1, keepdims=True)
            e = np.exp(x - m)
            accum(ins[0], d * e / e.sum(axis=-1, keepdims=True))
        else:  # pragma: no cover
            raise TapeError(f"no gradient rule for {k!r}", i)

    out = {}
    for name in targets:
        idx = tape._leaves[name]
        adj = adjoints[idx]
        if adj is None:
            adj = np.zeros_like(bound[name])
        else:
            adj = _reduce_extra(adj, bound[name].ndim)
        out[name] = adj
    return root_val, out


def _batched_like(d, base_shape):
    """Target shape for broadcasting a row-sum adjoint back over rows,
    keeping any batch axes carried by the adjoint itself."""
    if d.ndim > len(base_shape):
        return d.shape[: d.ndim - len(base_shape)] + base_shape
    return base_shape
