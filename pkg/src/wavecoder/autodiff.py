"""Reverse-mode automatic differentiation over the tensor operations used by
the optical pipelines: complex field arithmetic, the angular-spectrum
propagation, intensity detection, readouts, losses and regularizers.

Gradients follow the Wirtinger-style convention restricted to real scalar
losses: the adjoint carried for a complex intermediate z is
dL/dRe(z) + j dL/dIm(z), which makes C-linear operations back-propagate by
their conjugate transpose and leaves gradients with respect to real
parameters real. Values may carry leading batch axes; every rule below is
shape-agnostic over them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .propagation import as_apply, as_apply_adjoint


class TapeError(RuntimeError):
    pass


class Variable:
    """A value recorded on a Tape. Immutable once created."""

    __slots__ = ("tape", "index", "value", "requires_grad")

    # keep numpy from broadcasting over us; arithmetic must hit our operators
    __array_ufunc__ = None

    def __init__(self, tape, index, value, requires_grad):
        self.tape = tape
        self.index = index
        self.value = value
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        return f"Variable(#{self.index}, shape={np.shape(self.value)})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Variable):
            raise TypeError("division between variables is not recorded; use mul with a reciprocal")
        return mul(self, 1.0 / np.asarray(other))

    def __pow__(self, k):
        return pow_int(self, k)


class _Node:
    __slots__ = ("var", "parents", "vjp", "op_kind")

    def __init__(self, var, parents, vjp, op_kind):
        self.var = var
        self.parents = parents
        self.vjp = vjp
        self.op_kind = op_kind


class Tape:
    """Ordered record of one forward pass; rebuilt every step.

    Confine a tape to a single thread; independent tapes may run in parallel.
    """

    __slots__ = ("_nodes",)

    def __init__(self):
        self._nodes = []

    def __len__(self):
        return len(self._nodes)

    def variable(self, value, requires_grad: bool = False) -> Variable:
        """Record a leaf holding the given (real or complex) array or scalar."""
        value = _freeze(value)
        var = Variable(self, len(self._nodes), value, requires_grad)
        self._nodes.append(_Node(var, (), None, "leaf"))
        return var

    def constant(self, value) -> Variable:
        return self.variable(value, requires_grad=False)

    def record(self, op_kind: str, inputs, forward_value, vjp) -> Variable:
        """Append an operation node and return its output Variable.

        inputs must all live on this tape; vjp maps the output adjoint to one
        adjoint per input, in order.
        """
        inputs = tuple(inputs)
        for v in inputs:
            if v.tape is not self:
                raise TapeError("operation mixes variables from different tapes")
        var = Variable(self, len(self._nodes), _freeze(forward_value), False)
        self._nodes.append(_Node(var, inputs, vjp, op_kind))
        return var


def _freeze(value):
    value = np.asarray(value)
    if value.dtype == np.float32 or value.dtype == np.complex64:
        value = value.astype(np.complex128 if np.iscomplexobj(value) else np.float64)
    return value


def _unbroadcast(adj, shape):
    """Sum an adjoint down to the shape of the parent it belongs to."""
    adj = np.asarray(adj)
    if adj.shape == tuple(shape):
        return adj
    extra = adj.ndim - len(shape)
    if extra > 0:
        adj = adj.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and adj.shape[i] != 1)
    if axes:
        adj = adj.sum(axis=axes, keepdims=True)
    return adj


def backward(loss: Variable) -> dict:
    """Accumulate adjoints from a real scalar loss back to every leaf.

    Returns a map from requires_grad leaf Variables to their gradients; real
    leaves get real gradients, complex leaves get the complex adjoint.
    """
    value = np.asarray(loss.value)
    if value.size != 1:
        raise TapeError(f"loss must be scalar, got shape {value.shape}")
    if np.iscomplexobj(value):
        raise TapeError("loss must be real")
    tape = loss.tape
    nodes = tape._nodes
    if not nodes or nodes[loss.index].var is not loss:
        raise TapeError("loss is not on its tape")

    adjoints = {loss.index: np.ones_like(value, dtype=np.float64)}
    grads = {}
    for idx in range(loss.index, -1, -1):
        g = adjoints.pop(idx, None)
        if g is None:
            continue
        node = nodes[idx]
        if node.vjp is None:
            if node.var.requires_grad:
                grads[node.var] = _project(g, node.var.value)
            continue
        contributions = node.vjp(g)
        for parent, contrib in zip(node.parents, contributions):
            if contrib is None:
                continue
            contrib = _project(contrib, parent.value)
            slot = adjoints.get(parent.index)
            adjoints[parent.index] = contrib if slot is None else slot + contrib
    return grads


def _project(adj, parent_value):
    adj = np.asarray(adj)
    if not np.iscomplexobj(parent_value) and np.iscomplexobj(adj):
        adj = adj.real
    return _unbroadcast(adj, np.shape(parent_value)).astype(
        np.complex128 if np.iscomplexobj(parent_value) else np.float64, copy=False
    )


def _split(a, b):
    """Classify a binary op's operands into (variables, vjp argument layout)."""
    a_var = isinstance(a, Variable)
    b_var = isinstance(b, Variable)
    if not a_var and not b_var:
        raise TypeError("at least one operand must be a Variable")
    return a_var, b_var


def _tape_of(*operands):
    for op in operands:
        if isinstance(op, Variable):
            return op.tape
    raise TypeError("no Variable operand found")


def _value(x):
    return x.value if isinstance(x, Variable) else np.asarray(x)


def add(a, b) -> Variable:
    a_var, b_var = _split(a, b)
    tape = _tape_of(a, b)
    out = _value(a) + _value(b)
    if a_var and b_var:
        return tape.record("add", (a, b), out, lambda g: (g, g))
    var = a if a_var else b
    return tape.record("add", (var,), out, lambda g: (g,))


def sub(a, b) -> Variable:
    a_var, b_var = _split(a, b)
    tape = _tape_of(a, b)
    out = _value(a) - _value(b)
    if a_var and b_var:
        return tape.record("sub", (a, b), out, lambda g: (g, -g))
    if a_var:
        return tape.record("sub", (a,), out, lambda g: (g,))
    return tape.record("sub", (b,), out, lambda g: (-g,))


def neg(a: Variable) -> Variable:
    return a.tape.record("neg", (a,), -a.value, lambda g: (-g,))


def mul(a, b) -> Variable:
    """Elementwise product; complex factors back-propagate conjugated."""
    a_var, b_var = _split(a, b)
    tape = _tape_of(a, b)
    av, bv = _value(a), _value(b)
    out = av * bv
    if a_var and b_var:
        return tape.record("mul", (a, b), out, lambda g: (np.conj(bv) * g, np.conj(av) * g))
    if a_var:
        return tape.record("mul", (a,), out, lambda g: (np.conj(bv) * g,))
    return tape.record("mul", (b,), out, lambda g: (np.conj(av) * g,))


def pow_int(a: Variable, k: int) -> Variable:
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise ValueError(f"only positive integer powers are recorded, got {k!r}")
    av = a.value
    out = av**k
    return a.tape.record("pow", (a,), out, lambda g: (k * av ** (k - 1) * g,))


def exp(a: Variable) -> Variable:
    """Real exponential."""
    out = np.exp(a.value)
    return a.tape.record("exp", (a,), out, lambda g: (out * g,))


def cexp(a: Variable) -> Variable:
    """exp(j a) of a real phase; adjoint is Im(conj(out) g)."""
    out = np.exp(1j * a.value)
    return a.tape.record("cexp", (a,), out, lambda g: (np.imag(np.conj(out) * g),))


def log(a: Variable) -> Variable:
    out = np.log(a.value)
    return a.tape.record("log", (a,), out, lambda g: (g / a.value,))


def sqrt(a: Variable) -> Variable:
    """Real square root with a zero subgradient at 0."""
    out = np.sqrt(a.value)
    safe = np.where(out > 0, out, 1.0)
    return a.tape.record("sqrt", (a,), out, lambda g: (np.where(out > 0, g / (2.0 * safe), 0.0),))


def vabs(a: Variable) -> Variable:
    """Absolute value of a real variable; sign subgradient (0 at 0)."""
    av = a.value
    return a.tape.record("abs", (a,), np.abs(av), lambda g: (np.sign(av) * g,))


def abs2(a: Variable) -> Variable:
    """Squared modulus |z|^2; the detector nonlinearity."""
    av = a.value
    out = (av * np.conj(av)).real if np.iscomplexobj(av) else av * av
    return a.tape.record("abs2", (a,), out, lambda g: (2.0 * av * g,))


def sigmoid(a: Variable) -> Variable:
    av = a.value
    out = np.empty_like(av, dtype=np.float64)
    pos = av >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-av[pos]))
    ez = np.exp(av[~pos])
    out[~pos] = ez / (1.0 + ez)
    return a.tape.record("sigmoid", (a,), out, lambda g: (out * (1.0 - out) * g,))


def hard_threshold_st(a: Variable) -> Variable:
    """Binarize at 0 (ties map to 1); backward is the straight-through identity."""
    out = (a.value >= 0).astype(np.float64)
    return a.tape.record("hard_st", (a,), out, lambda g: (g,))


def vsum(a: Variable) -> Variable:
    shape = np.shape(a.value)
    return a.tape.record("sum", (a,), np.sum(a.value), lambda g: (np.broadcast_to(g, shape),))


def vmean(a: Variable) -> Variable:
    shape = np.shape(a.value)
    size = max(1, int(np.prod(shape)))
    return a.tape.record(
        "mean", (a,), np.mean(a.value), lambda g: (np.broadcast_to(g / size, shape),)
    )


def reshape(a: Variable, shape) -> Variable:
    old = np.shape(a.value)
    return a.tape.record(
        "reshape", (a,), np.reshape(a.value, shape), lambda g: (np.reshape(g, old),)
    )


def matmul(theta, x) -> Variable:
    """y[..., m] = sum_k x[..., k] theta[m, k]; either side may be constant."""
    theta_var = isinstance(theta, Variable)
    x_var = isinstance(x, Variable)
    tape = _tape_of(theta, x)
    tv, xv = _value(theta), _value(x)
    out = xv @ tv.T

    def vjp(g):
        gt = np.tensordot(g, xv, axes=(tuple(range(g.ndim - 1)),) * 2) if theta_var else None
        gx = g @ np.conj(tv) if x_var else None
        return tuple(c for c, keep in ((gt, theta_var), (gx, x_var)) if keep)

    parents = tuple(v for v, keep in ((theta, theta_var), (x, x_var)) if keep)
    return tape.record("matmul", parents, out, vjp)


def dot_last(x: Variable, a: np.ndarray) -> Variable:
    """Contract the trailing axis with a constant matrix or vector: y = x . a."""
    a = np.asarray(a)
    out = _value(x) @ a
    if a.ndim == 1:
        return x.tape.record("dot_last", (x,), out, lambda g: (g[..., None] * np.conj(a),))
    return x.tape.record("dot_last", (x,), out, lambda g: (g @ np.conj(a).T,))


def basis_combination(coeffs: Variable, basis: np.ndarray) -> Variable:
    """Weighted sum of fixed basis maps: y = sum_i coeffs[i] basis[i]."""
    basis = np.asarray(basis)
    out = np.tensordot(coeffs.value, basis, axes=1)
    axes = tuple(range(1, basis.ndim))

    def vjp(g):
        return (np.tensordot(np.conj(basis), g, axes=(axes, tuple(range(g.ndim)))),)

    return coeffs.tape.record("basis", (coeffs,), out, vjp)


def softmax(a: Variable, axis: int = -1) -> Variable:
    av = a.value
    shifted = av - np.max(av, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def vjp(g):
        inner = np.sum(g * out, axis=axis, keepdims=True)
        return (out * (g - inner),)

    return a.tape.record("softmax", (a,), out, vjp)


def softmax_xent_mean(scores: Variable, labels) -> Variable:
    """Mean cross-entropy of softmax(scores) against integer labels.

    scores has shape (batch, classes); the log-sum-exp is stabilized.
    """
    sv = scores.value
    labels = np.asarray(labels)
    if sv.ndim != 2:
        raise ValueError(f"scores must be (batch, classes), got {sv.shape}")
    if labels.shape != (sv.shape[0],):
        raise ValueError("one label per batch row required")
    if np.any(labels < 0) or np.any(labels >= sv.shape[1]):
        raise IndexError("label out of range")
    shifted = sv - np.max(sv, axis=1, keepdims=True)
    logz = np.log(np.sum(np.exp(shifted), axis=1))
    nll = logz - shifted[np.arange(sv.shape[0]), labels]
    out = np.mean(nll)
    probs = np.exp(shifted - logz[:, None])

    def vjp(g):
        grad = probs.copy()
        grad[np.arange(sv.shape[0]), labels] -= 1.0
        return (grad * (g / sv.shape[0]),)

    return scores.tape.record("xent", (scores,), out, vjp)


def region_sums(x: Variable, regions) -> Variable:
    """Sum intensity over rectangular detector regions.

    x has shape (..., n, n); regions is a sequence of (row, col, height,
    width) tuples; the output appends one axis of region totals.
    """
    xv = x.value
    out = np.stack(
        [xv[..., r : r + h, c : c + w].sum(axis=(-2, -1)) for (r, c, h, w) in regions],
        axis=-1,
    )

    def vjp(g):
        gx = np.zeros_like(xv)
        for k, (r, c, h, w) in enumerate(regions):
            gx[..., r : r + h, c : c + w] += g[..., k, None, None]
        return (gx,)

    return x.tape.record("regions", (x,), out, vjp)


def propagate_variable(x: Variable, transfer_fft: np.ndarray, n_out: int) -> Variable:
    """Angular-spectrum propagation as one linear tape node.

    The adjoint of the pipeline is the same pipeline with the conjugated
    transfer function (padding and cropping swap roles, the DFT scalings
    cancel).
    """
    transfer_fft = np.asarray(transfer_fft)
    out = as_apply(x.value, transfer_fft, n_out)
    n_in = x.value.shape[-1]

    def vjp(g):
        return (as_apply_adjoint(np.asarray(g, dtype=np.complex128), transfer_fft, n_in),)

    return x.tape.record("propagate", (x,), out, vjp)


def finite_diff_gradient(f, params: dict, h: float = 1e-6) -> dict:
    """Central-difference gradient of a scalar function of named arrays.

    f receives {name: ndarray} and returns a float; every coordinate is
    perturbed by +/- h.
    """
    if h <= 0:
        raise ValueError("step must be positive")
    grads = {}
    work = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    for name, arr in work.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            fp = f(work)
            flat[i] = keep - h
            fm = f(work)
            flat[i] = keep
            gflat[i] = (fp - fm) / (2.0 * h)
        grads[name] = g
    return grads


@dataclass
class GradCheckResult:
    """Outcome of an analytic-vs-numeric gradient comparison.

    max_rel_error covers the checked parameters only; straight-through
    parameters land in excluded with their (expected to disagree) errors.
    """

    max_rel_error: float
    per_param: dict
    excluded: dict

    def __str__(self):
        lines = [f"max relative error {self.max_rel_error:.3e}"]
        for name in sorted(self.per_param):
            lines.append(f"  {name}: {self.per_param[name]:.3e}")
        for name in sorted(self.excluded):
            lines.append(f"  {name}: {self.excluded[name]:.3e} (straight-through, exempt)")
        return "\n".join(lines)


def gradient_check(
    build_loss, params: dict, h: float = 1e-6, exclude=(), rel_floor: float = 1e-12
) -> GradCheckResult:
    """Compare backward() gradients against central finite differences.

    build_loss(tape, {name: Variable}) must return the scalar loss Variable.
    Parameters named in exclude are compared but reported separately (used
    for straight-through surrogates whose numeric derivative is zero a.e.).
    """
    tape = Tape()
    pvars = {name: tape.variable(np.asarray(v, dtype=np.float64), requires_grad=True) for name, v in params.items()}
    loss = build_loss(tape, pvars)
    grads = backward(loss)
    analytic = {
        name: np.asarray(grads.get(var, np.zeros_like(var.value)))
        for name, var in pvars.items()
    }

    def eval_loss(arrays):
        t = Tape()
        vs = {name: t.variable(a) for name, a in arrays.items()}
        return float(build_loss(t, vs).value)

    numeric = finite_diff_gradient(eval_loss, params, h=h)
    per_param, excluded = {}, {}
    for name in params:
        a, n = analytic[name], numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), rel_floor)
        err = float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
        (excluded if name in exclude else per_param)[name] = err
    max_err = max(per_param.values(), default=0.0)
    return GradCheckResult(max_err, per_param, excluded)
