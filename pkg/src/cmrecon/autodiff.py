"""Reverse-mode automatic differentiation over dense 4-D tensors.

The graph is a flat tape: every differentiable operation appends one node
carrying its parent handles and a backward closure over whatever forward
activations it saved. Because nodes are appended in execution order, the
reverse of the append order is already a valid topological order and
backward() visits each node exactly once, accumulating gradients into a
per-node table. Tensors are immutable values; only the tape grows.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when tensor dimensions do not line up; message names the dims."""


class AutodiffError(RuntimeError):
    pass


def _as_data(values) -> np.ndarray:
    data = np.asarray(values, dtype=np.float64)
    if data.ndim != 4:
        raise ShapeError(f"tensors are 4-D (n, c, h, w); got {data.ndim}-D shape {data.shape}")
    if min(data.shape) < 1:
        raise ShapeError(f"all dimensions must be >= 1; got shape {data.shape}")
    return data


class Tensor:
    """Dense (n, c, h, w) float64 array, optionally tracked on a GradGraph."""

    __slots__ = ("data", "graph", "node_id")

    def __init__(self, values, graph: "GradGraph | None" = None, node_id: int | None = None):
        self.data = _as_data(values)
        self.graph = graph
        self.node_id = node_id

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    @property
    def tracked(self) -> bool:
        return self.node_id is not None

    # Operator sugar for the strict same-shape elementwise ops; scalars go
    # through scale/shift. Implemented in ops.py to keep this module tiny.
    def __add__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            return ops.add(self, other)
        return ops.shift(self, float(other))

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            return ops.sub(self, other)
        return ops.shift(self, -float(other))

    def __mul__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            return ops.mul(self, other)
        return ops.scale(self, float(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __repr__(self) -> str:
        tag = f", node={self.node_id}" if self.tracked else ""
        return f"Tensor(shape={self.shape}{tag})"


class _Node:
    __slots__ = ("parents", "backward")

    def __init__(self, parents: tuple[int, ...], backward: Callable | None):
        self.parents = parents
        self.backward = backward


class Grads:
    """Gradient lookup for one backward pass; zeros for unreached tensors."""

    def __init__(self, table: dict[int, np.ndarray]):
        self._table = table

    def __getitem__(self, t: Tensor) -> np.ndarray:
        if t.node_id is None:
            raise AutodiffError("tensor is not tracked on any graph")
        g = self._table.get(t.node_id)
        if g is None:
            return np.zeros_like(t.data)
        return g

    def __contains__(self, t: Tensor) -> bool:
        return t.node_id is not None and t.node_id in self._table


class GradGraph:
    """Append-only operation tape; one backward pass, then the tape is freed."""

    def __init__(self):
        self._nodes: list[_Node] = []
        self._consumed = False

    def __len__(self) -> int:
        return len(self._nodes)

    def _check_open(self):
        if self._consumed:
            raise AutodiffError("graph was already consumed by backward(); build a new one")

    def leaf(self, values) -> Tensor:
        """Register an input (e.g. a parameter) whose gradient is wanted."""
        self._check_open()
        self._nodes.append(_Node((), None))
        return Tensor(values, self, len(self._nodes) - 1)

    def record(self, out_data: np.ndarray, parents: Sequence[Tensor],
               backward: Callable[[np.ndarray], tuple]) -> Tensor:
        """Append one op; backward(grad_out) must return grads aligned with parents."""
        self._check_open()
        ids = tuple(-1 if p.node_id is None else p.node_id for p in parents)
        self._nodes.append(_Node(ids, backward))
        return Tensor(out_data, self, len(self._nodes) - 1)

    def backward(self, loss: Tensor) -> Grads:
        """Reverse sweep from a scalar loss; frees the tape afterwards."""
        self._check_open()
        if loss.graph is not self or loss.node_id is None:
            raise AutodiffError("loss tensor does not belong to this graph")
        if loss.data.size != 1:
            raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
        table: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
        for nid in range(len(self._nodes) - 1, -1, -1):
            g = table.get(nid)
            if g is None:
                continue
            node = self._nodes[nid]
            if node.backward is None:
                continue
            parent_grads = node.backward(g)
            for pid, pg in zip(node.parents, parent_grads):
                if pid < 0 or pg is None:
                    continue
                acc = table.get(pid)
                table[pid] = pg if acc is None else acc + pg
            if nid != loss.node_id:
                del table[nid]  # interior grads are not part of the result
        # keep only leaf gradients plus the loss seed
        result = {nid: g for nid, g in table.items()
                  if self._nodes[nid].backward is None or nid == loss.node_id}
        self._nodes.clear()
        self._consumed = True
        return Grads(result)


def result_graph(inputs: Sequence[Tensor]) -> GradGraph | None:
    """The common graph of the tracked inputs, or None if untracked."""
    graph = None
    for t in inputs:
        if t.graph is None:
            continue
        if graph is None:
            graph = t.graph
        elif graph is not t.graph:
            raise AutodiffError("inputs belong to different graphs")
    return graph


def grad_check(f: Callable[[Tensor], Tensor], x, step: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    The relative error per element is |analytic - numeric| divided by
    max(1, |analytic|, |numeric|). NaN anywhere is reported as inf so that
    any threshold comparison fails.
    """
    if not (1e-7 <= step <= 1e-4):
        raise ValueError(f"step must be in [1e-7, 1e-4], got {step}")
    x0 = _as_data(x)

    graph = GradGraph()
    xt = graph.leaf(x0)
    loss = f(xt)
    if loss.data.size != 1:
        raise ShapeError(f"grad_check needs a scalar-valued f, got shape {loss.shape}")
    analytic = graph.backward(loss)[xt]

    numeric = np.empty_like(x0)
    flat = x0.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        hi = f(Tensor(x0)).item()
        flat[i] = keep - step
        lo = f(Tensor(x0)).item()
        flat[i] = keep
        nflat[i] = (hi - lo) / (2.0 * step)

    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    err = np.abs(analytic - numeric) / denom
    if not np.isfinite(err).all():
        return float("inf")
    return float(err.max())
