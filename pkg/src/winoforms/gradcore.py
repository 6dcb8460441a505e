"""Dense-tensor engine: tape-based reverse-mode autodiff, AdamW, checkpoints.

Tensors are plain numpy arrays (row-major, float32 or float64) wrapped with a
node id. Operations are recorded eagerly on a Tape; forward_backward replays
the tape in reverse and returns exact gradients for every reachable leaf.
The op set is deliberately small and enumerable: no broadcasting beyond
per-row bias addition, no dynamic shapes, one gradient rule per op.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

CHECKPOINT_HEADER = "winoforms-ckpt-v1"

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    """A tape node: numpy value plus an id. Leaves may carry a name and grad."""

    __slots__ = ("data", "node", "name", "grad")

    def __init__(self, data: np.ndarray, node: int, name: str | None = None):
        self.data = data
        self.node = node
        self.name = name
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(node={self.node}, shape={self.shape}{tag})"


@dataclass
class OpRecord:
    """One recorded primitive: op name, input node ids, output node id."""

    op: str
    inputs: tuple[int, ...]
    output: int
    ctx: dict = field(default_factory=dict)


class Tape:
    """Ordered record of primitive ops over tensors of one dtype.

    Building an op computes its value immediately (define-by-run), so the
    record is topologically ordered by construction.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        if self.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
            raise ValueError(f"unsupported dtype {dtype}")
        self.nodes: list[Tensor] = []
        self.ops: list[OpRecord] = []
        self.named: dict[str, Tensor] = {}

    # -- node management ----------------------------------------------------

    def leaf(self, data, name: str | None = None) -> Tensor:
        """Register an input tensor (parameter or constant)."""
        arr = np.asarray(data, dtype=self.dtype, order="C")
        t = self._new(arr, name)
        if name is not None:
            if name in self.named:
                raise ValueError(f"duplicate leaf name {name!r}")
            self.named[name] = t
        return t

    def _new(self, data: np.ndarray, name: str | None = None) -> Tensor:
        t = Tensor(data, len(self.nodes), name)
        self.nodes.append(t)
        return t

    def _record(self, op: str, inputs: tuple[Tensor, ...], out: np.ndarray, **ctx) -> Tensor:
        for t in inputs:
            if t.node >= len(self.nodes) or self.nodes[t.node] is not t:
                raise ValueError(f"tensor {t!r} does not belong to this tape")
        result = self._new(np.asarray(out, dtype=self.dtype, order="C"))
        self.ops.append(OpRecord(op, tuple(t.node for t in inputs), result.node, ctx))
        return result

    # -- primitives ----------------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        """(m,k)@(k,n), (k,)@(k,n) or (m,k)@(k,)."""
        if a.data.ndim > 2 or b.data.ndim > 2 or a.data.ndim + b.data.ndim < 3:
            raise ValueError(f"matmul wants (m,k)@(k,n), (k,)@(k,n) or (m,k)@(k,), "
                             f"got {a.shape} @ {b.shape}")
        return self._record("matmul", (a, b), a.data @ b.data)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        """Same-shape addition, or per-row bias: (m,n) + (n,)."""
        if a.shape == b.shape:
            return self._record("add", (a, b), a.data + b.data)
        if a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
            return self._record("add_bias", (a, b), a.data + b.data[None, :])
        raise ValueError(f"add shapes {a.shape} and {b.shape} not allowed")

    def scale(self, a: Tensor, c: float) -> Tensor:
        return self._record("scale", (a,), a.data * c, c=float(c))

    def layer_norm(self, x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
        """Normalize each row to zero mean / unit variance, then gain*xhat + bias."""
        xd = np.atleast_2d(x.data)
        if gain.shape != (xd.shape[1],) or bias.shape != (xd.shape[1],):
            raise ValueError("layer_norm gain/bias must match the row width")
        mu = xd.mean(axis=1, keepdims=True)
        var = xd.var(axis=1, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (xd - mu) * inv_std
        out = xhat * gain.data[None, :] + bias.data[None, :]
        return self._record(
            "layer_norm", (x, gain, bias), out.reshape(x.shape), xhat=xhat, inv_std=inv_std
        )

    def gelu(self, x: Tensor) -> Tensor:
        """Exact erf-form GELU."""
        return self._record("gelu", (x,), 0.5 * x.data * (1.0 + erf(x.data * _INV_SQRT2)))

    def softmax(self, x: Tensor) -> Tensor:
        """Softmax over the last axis (rows of a matrix, or a whole vector)."""
        z = x.data - x.data.max(axis=-1, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=-1, keepdims=True)
        return self._record("softmax", (x,), y, y=y)

    def log_softmax(self, x: Tensor) -> Tensor:
        z = x.data - x.data.max(axis=-1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
        y = z - lse
        return self._record("log_softmax", (x,), y, sm=np.exp(y))

    def sigmoid(self, x: Tensor) -> Tensor:
        y = np.where(x.data >= 0, 1.0 / (1.0 + np.exp(-x.data)),
                     np.exp(x.data) / (1.0 + np.exp(x.data)))
        return self._record("sigmoid", (x,), y, y=y)

    def log(self, x: Tensor) -> Tensor:
        return self._record("log", (x,), np.log(x.data))

    def clip(self, x: Tensor, lo: float, hi: float) -> Tensor:
        """Clamp values; gradient passes only where lo < x < hi."""
        mask = (x.data > lo) & (x.data < hi)
        return self._record("clip", (x,), np.clip(x.data, lo, hi), mask=mask)

    def take_rows(self, x: Tensor, idx) -> Tensor:
        """Gather rows of a matrix (or elements of a vector) by index."""
        idx = np.asarray(idx, dtype=np.intp)
        if idx.ndim != 1:
            raise ValueError("take_rows expects a flat index list")
        if x.data.ndim not in (1, 2):
            raise ValueError("take_rows supports 1-D/2-D input")
        if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
            raise IndexError(f"row index out of range for shape {x.shape}")
        return self._record("take_rows", (x,), x.data[idx], idx=idx)

    def pick(self, x: Tensor, rows, cols) -> Tensor:
        """Gather x[rows[i], cols[i]] into a vector."""
        rows = np.asarray(rows, dtype=np.intp)
        cols = np.asarray(cols, dtype=np.intp)
        if x.data.ndim != 2 or rows.shape != cols.shape or rows.ndim != 1:
            raise ValueError("pick expects a matrix and matching flat index lists")
        return self._record("pick", (x,), x.data[rows, cols], rows=rows, cols=cols)

    def reduce_mean(self, x: Tensor, axis: int | None = None) -> Tensor:
        """Mean of all elements (scalar) or column-wise mean over rows (axis=0)."""
        if axis is None:
            return self._record("reduce_mean", (x,), x.data.mean(), axis=None)
        if axis == 0 and x.data.ndim == 2:
            return self._record("reduce_mean", (x,), x.data.mean(axis=0), axis=0)
        raise ValueError("reduce_mean supports axis None or 0 on a matrix")

    def concat(self, parts: list[Tensor], axis: int = 0) -> Tensor:
        if not parts:
            raise ValueError("concat of nothing")
        sizes = [p.shape[axis] for p in parts]
        out = np.concatenate([p.data for p in parts], axis=axis)
        return self._record("concat", tuple(parts), out, axis=axis, sizes=sizes)

    def transpose(self, x: Tensor) -> Tensor:
        if x.data.ndim != 2:
            raise ValueError("transpose expects a matrix")
        return self._record("transpose", (x,), x.data.T)

    def slice_cols(self, x: Tensor, start: int, stop: int) -> Tensor:
        if x.data.ndim != 2 or not (0 <= start < stop <= x.shape[1]):
            raise ValueError(f"bad column slice [{start}:{stop}] for shape {x.shape}")
        return self._record("slice_cols", (x,), x.data[:, start:stop], start=start, stop=stop)

    def flatten(self, x: Tensor) -> Tensor:
        return self._record("flatten", (x,), x.data.reshape(-1), shape=x.shape)

    def dropout(self, x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
        """Inverted dropout; a no-op record is skipped when rate == 0."""
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate {rate} outside [0, 1)")
        if rate == 0.0:
            return x
        keep = 1.0 - rate
        mask = (rng.random(x.shape) >= rate) / keep
        return self._record("dropout", (x,), x.data * mask, mask=mask)


# -- backward rules ---------------------------------------------------------
# Each rule maps (op record, input values, upstream grad) -> per-input grads.
# None marks a non-differentiable input.


def _bw_matmul(op, ins, g):
    a, b = ins
    if a.ndim == 2 and b.ndim == 2:
        return [g @ b.T, a.T @ g]
    if a.ndim == 1 and b.ndim == 2:
        return [b @ g, np.outer(a, g)]
    return [np.outer(g, b), a.T @ g]  # (m,k) @ (k,)


def _bw_add(op, ins, g):
    return [g, g]


def _bw_add_bias(op, ins, g):
    return [g, g.sum(axis=0)]


def _bw_scale(op, ins, g):
    return [g * op.ctx["c"]]


def _bw_layer_norm(op, ins, g):
    x, gain, _bias = ins
    xhat = op.ctx["xhat"]
    inv_std = op.ctx["inv_std"]
    g2 = np.atleast_2d(g)
    dxhat = g2 * gain[None, :]
    dx = inv_std * (
        dxhat
        - dxhat.mean(axis=1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
    )
    return [dx.reshape(x.shape), (g2 * xhat).sum(axis=0), g2.sum(axis=0)]


def _bw_gelu(op, ins, g):
    (x,) = ins
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return [g * (cdf + x * pdf)]


def _bw_softmax(op, ins, g):
    y = op.ctx["y"]
    return [y * (g - (g * y).sum(axis=-1, keepdims=True))]


def _bw_log_softmax(op, ins, g):
    sm = op.ctx["sm"]
    return [g - sm * g.sum(axis=-1, keepdims=True)]


def _bw_sigmoid(op, ins, g):
    y = op.ctx["y"]
    return [g * y * (1.0 - y)]


def _bw_log(op, ins, g):
    (x,) = ins
    return [g / x]


def _bw_clip(op, ins, g):
    return [g * op.ctx["mask"]]


def _bw_take_rows(op, ins, g):
    (x,) = ins
    dx = np.zeros_like(x)
    np.add.at(dx, op.ctx["idx"], g)
    return [dx]


def _bw_pick(op, ins, g):
    (x,) = ins
    dx = np.zeros_like(x)
    np.add.at(dx, (op.ctx["rows"], op.ctx["cols"]), g)
    return [dx]


def _bw_reduce_mean(op, ins, g):
    (x,) = ins
    if op.ctx["axis"] is None:
        return [np.full_like(x, g / x.size)]
    return [np.tile(g / x.shape[0], (x.shape[0], 1))]


def _bw_concat(op, ins, g):
    axis, sizes = op.ctx["axis"], op.ctx["sizes"]
    grads, off = [], 0
    for s in sizes:
        sl = [slice(None)] * g.ndim
        sl[axis] = slice(off, off + s)
        grads.append(g[tuple(sl)])
        off += s
    return grads


def _bw_transpose(op, ins, g):
    return [g.T]


def _bw_slice_cols(op, ins, g):
    (x,) = ins
    dx = np.zeros_like(x)
    dx[:, op.ctx["start"]:op.ctx["stop"]] = g
    return [dx]


def _bw_flatten(op, ins, g):
    return [g.reshape(op.ctx["shape"])]


def _bw_dropout(op, ins, g):
    return [g * op.ctx["mask"]]


_BACKWARD = {
    "matmul": _bw_matmul,
    "add": _bw_add,
    "add_bias": _bw_add_bias,
    "scale": _bw_scale,
    "layer_norm": _bw_layer_norm,
    "gelu": _bw_gelu,
    "softmax": _bw_softmax,
    "log_softmax": _bw_log_softmax,
    "sigmoid": _bw_sigmoid,
    "log": _bw_log,
    "clip": _bw_clip,
    "take_rows": _bw_take_rows,
    "pick": _bw_pick,
    "reduce_mean": _bw_reduce_mean,
    "concat": _bw_concat,
    "transpose": _bw_transpose,
    "slice_cols": _bw_slice_cols,
    "flatten": _bw_flatten,
    "dropout": _bw_dropout,
}


def forward_backward(tape: Tape, loss: Tensor) -> dict[str, np.ndarray]:
    """Reverse-mode sweep from a scalar loss node.

    Fills .grad on every leaf reachable from the loss and returns the
    gradients of named leaves as {name: array}.
    """
    if loss.node >= len(tape.nodes) or tape.nodes[loss.node] is not loss:
        raise ValueError("loss node does not belong to this tape")
    if loss.data.shape != ():
        raise ValueError(f"loss must be a scalar, got shape {loss.data.shape}")

    grads: dict[int, np.ndarray] = {loss.node: np.asarray(1.0, dtype=tape.dtype)}
    for op in reversed(tape.ops):
        g = grads.pop(op.output, None)
        if g is None:
            continue
        ins = [tape.nodes[i].data for i in op.inputs]
        for node_id, ig in zip(op.inputs, _BACKWARD[op.op](op, ins, g)):
            if ig is None:
                continue
            if node_id in grads:
                grads[node_id] += ig
            else:
                grads[node_id] = np.array(ig, dtype=tape.dtype)

    out: dict[str, np.ndarray] = {}
    for t in tape.nodes:
        if t.node in grads:
            t.grad = grads[t.node]
            if t.name is not None:
                out[t.name] = t.grad
    return out


# -- gradient checking --------------------------------------------------------


def grad_check(fn, point, step: float) -> float:
    """Max relative error between analytic and central finite-difference grads.

    `fn(tape, x)` must build and return a scalar Tensor; `point` is one array
    or a {name: array} map, handed to fn as leaf Tensor(s) of a float64 tape.
    Relative error per coordinate is |analytic - numeric| / max(1, |analytic|).
    """
    if step <= 0:
        raise ValueError("finite-difference step must be positive")
    single = not isinstance(point, dict)
    arrays = {"x": np.asarray(point, dtype=np.float64)} if single \
        else {k: np.asarray(v, dtype=np.float64) for k, v in point.items()}

    def evaluate(vals: dict[str, np.ndarray], want_grads: bool):
        tape = Tape(np.float64)
        leaves = {k: tape.leaf(v, name=k) for k, v in vals.items()}
        out = fn(tape, leaves["x"] if single else leaves)
        if not np.all(np.isfinite(out.data)):
            raise FloatingPointError("function value is not finite")
        if want_grads:
            return forward_backward(tape, out)
        return float(out.data)

    analytic = evaluate(arrays, True)
    worst = 0.0
    for key, arr in arrays.items():
        a = analytic.get(key, np.zeros_like(arr))
        flat = arr.reshape(-1)
        a_flat = np.asarray(a, dtype=np.float64).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = evaluate(arrays, False)
            flat[i] = orig - step
            f_minus = evaluate(arrays, False)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            err = abs(a_flat[i] - numeric) / max(1.0, abs(a_flat[i]))
            worst = max(worst, err)
    return worst


# -- optimizer ----------------------------------------------------------------


@dataclass
class AdamWState:
    """Adaptive moment estimation with decoupled weight decay."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.001
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def optimizer_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamWState,
    lr: float | None = None,
) -> None:
    """One AdamW update in place. Parameters without a gradient are untouched.

    Decay is decoupled: p -= lr * wd * p, independent of the moment estimates.
    """
    state.step_count += 1
    t = state.step_count
    rate = state.lr if lr is None else lr
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, g in grads.items():
        p = params[name]
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch for {name}: param {p.shape} vs grad {g.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= rate * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p -= rate * state.weight_decay * p


# -- checkpoint I/O -----------------------------------------------------------


def save_checkpoint(path, params: dict[str, np.ndarray]) -> None:
    """Write a versioned name -> (dtype, shape, row-major values) map.

    Entries are sorted by name so identical params give identical bytes.
    """
    with open(path, "wb") as fh:
        fh.write(f"{CHECKPOINT_HEADER}\n".encode())
        fh.write(f"{len(params)}\n".encode())
        for name in sorted(params):
            arr = np.ascontiguousarray(params[name])
            if arr.dtype == np.float32:
                code = "f4"
            elif arr.dtype == np.float64:
                code = "f8"
            else:
                raise ValueError(f"{name}: unsupported dtype {arr.dtype}")
            dims = ",".join(str(d) for d in arr.shape) or "scalar"
            fh.write(f"{name} {code} {dims}\n".encode())
            fh.write(arr.astype(f"<{code}").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        header = fh.readline().decode().strip()
        if header != CHECKPOINT_HEADER:
            raise ValueError(f"bad checkpoint header {header!r}")
        count = int(fh.readline())
        params: dict[str, np.ndarray] = {}
        for _ in range(count):
            name, code, dims = fh.readline().decode().strip().split(" ")
            shape = () if dims == "scalar" else tuple(int(d) for d in dims.split(","))
            n = int(np.prod(shape))
            raw = fh.read(n * int(code[1]))
            params[name] = np.frombuffer(raw, dtype=f"<{code}").reshape(shape).copy()
    return params
