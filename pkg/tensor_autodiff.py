"""
Tensor Autodiff Module
Reverse-mode automatic differentiation over dense float64 numpy arrays, the
multilayer perceptron used as flow network, and the Adam optimizer.
"""

from dataclasses import dataclass, field

import numpy as np

from errors import ConfigError, DimensionError, DivergenceError, StaleTapeError, UsageError

HIDDEN_WIDTH = 256
LEAKY_SLOPE = 0.01


class ParameterSet:
    """Named float64 arrays updated in place by the optimizer"""

    def __init__(self, arrays):
        self.arrays = {name: np.array(value, dtype=np.float64) for name, value in arrays.items()}
        # Bumped on every optimizer update so recorded tapes can detect staleness
        self.version = 0

    def __getitem__(self, name):
        return self.arrays[name]

    def __contains__(self, name):
        return name in self.arrays

    def names(self):
        return list(self.arrays)

    def copy(self):
        clone = ParameterSet(self.arrays)
        clone.version = self.version
        return clone


class MLPParams(ParameterSet):
    """Weights W1..WL (fan_in x fan_out) and biases b1..bL of a dense network"""

    def __init__(self, dims, arrays):
        super().__init__(arrays)
        self.dims = tuple(dims)

    @property
    def num_layers(self):
        return len(self.dims) - 1

    @property
    def weights(self):
        return [self.arrays[f"W{i}"] for i in range(1, self.num_layers + 1)]

    @property
    def biases(self):
        return [self.arrays[f"b{i}"] for i in range(1, self.num_layers + 1)]

    def copy(self):
        clone = MLPParams(self.dims, self.arrays)
        clone.version = self.version
        return clone


class Tensor:
    """A float64 array recorded on a tape, with the rule that maps its gradient to its parents"""

    __slots__ = ("data", "tape", "parents", "vjp", "requires_grad", "op")

    # numpy operands defer to the reflected Tensor operators
    __array_ufunc__ = None

    def __init__(self, data, tape=None, parents=(), vjp=None, requires_grad=False, op="const"):
        self.data = data
        self.tape = tape
        self.parents = parents
        self.vjp = vjp
        self.requires_grad = requires_grad
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of the operations of one forward pass"""

    def __init__(self):
        self.nodes = []
        self.leaves = {}
        self._owners = {}

    def watch(self, params):
        """Register every array of a parameter set as a differentiable leaf"""
        if id(params) in self._owners:
            return {name: self.leaves[name] for name in params.names()}
        self._owners[id(params)] = (params, params.version)
        for name, value in params.arrays.items():
            if name in self.leaves:
                raise UsageError(f"parameter name {name} is watched twice on one tape")
            self.leaves[name] = Tensor(value, self, requires_grad=True, op=f"leaf:{name}")
        return {name: self.leaves[name] for name in params.names()}

    def constant(self, value):
        return Tensor(np.asarray(value, dtype=np.float64), self)

    def record(self, op, data, parents, vjp):
        data = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(data)):
            raise DivergenceError(f"non-finite values produced by {op}")
        requires_grad = any(parent.requires_grad for parent in parents)
        out = Tensor(data, self, parents, vjp if requires_grad else None, requires_grad, op)
        if requires_grad:
            self.nodes.append(out)
        return out

    @property
    def output(self):
        if not self.nodes:
            raise UsageError("tape has no recorded differentiable operation")
        return self.nodes[-1]

    def is_stale(self):
        return any(owner.version != version for owner, version in self._owners.values())


def _tape_of(*values):
    for value in values:
        if isinstance(value, Tensor) and value.tape is not None:
            return value.tape
    raise UsageError("operation needs at least one operand recorded on a tape")


def _lift(value, tape):
    if isinstance(value, Tensor):
        return value
    return tape.constant(value)


def _unbroadcast(grad, shape):
    grad = np.asarray(grad)
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return np.reshape(grad, shape)


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from exc


def add(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    _check_broadcast(a, b, "add")
    return tape.record(
        "add", a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    _check_broadcast(a, b, "sub")
    return tape.record(
        "sub", a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    _check_broadcast(a, b, "mul")
    return tape.record(
        "mul", a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def neg(x):
    return x.tape.record("neg", -x.data, (x,), lambda g: (-g,))


def matmul(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return tape.record(
        "matmul", a.data @ b.data, (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def leaky_relu(x, slope=LEAKY_SLOPE):
    positive = x.data > 0
    return x.tape.record(
        "leaky_relu", np.where(positive, x.data, slope * x.data), (x,),
        lambda g: (g * np.where(positive, 1.0, slope),),
    )


def exp(x):
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return x.tape.record("exp", out, (x,), lambda g: (g * out,))


def log(x):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    return x.tape.record("log", out, (x,), lambda g: (g / x.data,))


def square(x):
    return x.tape.record("square", x.data * x.data, (x,), lambda g: (2.0 * x.data * g,))


def reduce_sum(x, axis=None):
    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return x.tape.record("sum", np.sum(x.data, axis=axis), (x,), vjp)


def mean(x):
    if x.data.size == 0:
        raise UsageError("mean of an empty tensor")
    return mul(reduce_sum(x), 1.0 / x.data.size)


def index(x, idx):
    """Fancy indexing x[idx]; repeated positions accumulate their gradients"""

    def vjp(g):
        grad = np.zeros_like(x.data)
        np.add.at(grad, idx, g)
        return (grad,)

    return x.tape.record("index", x.data[idx], (x,), vjp)


def segment_sum(x, segment_ids, num_segments):
    """Sum the entries of a 1-D tensor that share a segment id"""
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    if x.ndim != 1 or segment_ids.shape != x.shape:
        raise DimensionError(f"segment_sum: ids {segment_ids.shape} do not match values {x.shape}")
    out = np.zeros(num_segments)
    np.add.at(out, segment_ids, x.data)
    return x.tape.record("segment_sum", out, (x,), lambda g: (g[segment_ids],))


def masked_log_softmax(x, mask):
    """Row-wise log-softmax restricted to the allowed entries; masked entries read 0"""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise DimensionError(f"masked_log_softmax: mask {mask.shape} does not match {x.shape}")
    if not np.all(mask.any(axis=1)):
        raise UsageError("masked_log_softmax: a row has no allowed entry")
    masked = np.where(mask, x.data, -np.inf)
    peak = masked.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(masked - peak).sum(axis=1, keepdims=True)) + peak
    out = np.where(mask, x.data - log_norm, 0.0)
    probs = np.where(mask, np.exp(out), 0.0)

    def vjp(g):
        g = np.where(mask, g, 0.0)
        return (g - probs * g.sum(axis=1, keepdims=True),)

    return x.tape.record("masked_log_softmax", out, (x,), vjp)


def mlp_dims(input_width, output_width, hidden=(HIDDEN_WIDTH, HIDDEN_WIDTH)):
    return (int(input_width), *[int(width) for width in hidden], int(output_width))


def init_params(seed, dims):
    """Glorot-uniform weights, zero biases; identical seeds give identical bytes"""
    dims = tuple(int(width) for width in dims)
    if len(dims) < 2:
        raise ConfigError("dims", f"need at least an input and an output width, got {dims}")
    if any(width <= 0 for width in dims):
        raise ConfigError("dims", f"zero-width layer in {dims}")

    rng = np.random.default_rng(seed)
    arrays = {}
    for layer, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:]), start=1):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        arrays[f"W{layer}"] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        arrays[f"b{layer}"] = np.zeros(fan_out)
    return MLPParams(dims, arrays)


def mlp_forward(params, x, tape=None):
    """Record W_L . act(... act(x W_1 + b_1) ...) + b_L on a tape; returns (outputs, tape)"""
    tape = tape if tape is not None else Tape()
    leaves = tape.watch(params)
    h = x if isinstance(x, Tensor) else tape.constant(x)
    if h.ndim != 2 or h.shape[1] != params.dims[0]:
        raise DimensionError(f"mlp_forward: input {h.shape} does not match width {params.dims[0]}")

    for layer in range(1, params.num_layers + 1):
        h = add(matmul(h, leaves[f"W{layer}"]), leaves[f"b{layer}"])
        if layer < params.num_layers:
            h = leaky_relu(h)
    return h, tape


def predict(params, x, chunk_size=65536):
    """Tape-free forward pass for sampling and evaluation"""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.dims[0]:
        raise DimensionError(f"predict: input {x.shape} does not match width {params.dims[0]}")

    chunks = []
    for start in range(0, max(len(x), 1), chunk_size):
        h = x[start:start + chunk_size]
        for layer, (weight, bias) in enumerate(zip(params.weights, params.biases), start=1):
            h = h @ weight + bias
            if layer < params.num_layers:
                h = np.where(h > 0, h, LEAKY_SLOPE * h)
        chunks.append(h)
    out = np.concatenate(chunks, axis=0)
    if not np.all(np.isfinite(out)):
        raise DivergenceError("non-finite network outputs")
    return out


def backward(tape, seed_grad, output=None):
    """Exact reverse-mode gradients of every watched parameter, keyed by name"""
    if tape.is_stale():
        raise StaleTapeError("parameters changed after this tape was recorded")
    out = output if output is not None else tape.output
    seed = np.asarray(seed_grad, dtype=np.float64)
    if seed.shape != out.shape:
        raise DimensionError(f"backward: seed {seed.shape} does not match output {out.shape}")

    grads = {id(out): seed}
    for node in reversed(tape.nodes):
        grad = grads.pop(id(node), None)
        if grad is None:
            continue
        for parent, parent_grad in zip(node.parents, node.vjp(grad)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + parent_grad if key in grads else parent_grad

    return {
        name: np.array(grads.get(id(leaf), np.zeros_like(leaf.data)), dtype=np.float64)
        for name, leaf in tape.leaves.items()
    }


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    lr_overrides: dict = field(default_factory=dict)
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, rate in [("lr", self.lr), *self.lr_overrides.items()]:
            if not rate > 0:
                raise ConfigError(name, f"learning rate must be positive, got {rate}")


def adam_step(params, grads, state):
    """One bias-corrected Adam update, in place; accepts one parameter set or a list of them"""
    groups = [params] if isinstance(params, ParameterSet) else list(params)

    for group in groups:
        for name, value in group.arrays.items():
            if name not in grads:
                continue
            if np.shape(grads[name]) != value.shape:
                raise DimensionError(f"adam_step: gradient {name} has shape {np.shape(grads[name])}, expected {value.shape}")
            if not np.all(np.isfinite(grads[name])):
                raise DivergenceError(f"non-finite gradient for {name} at step {state.t + 1}")

    state.t += 1
    bias1 = 1.0 - state.beta1 ** state.t
    bias2 = 1.0 - state.beta2 ** state.t

    for group in groups:
        for name, value in group.arrays.items():
            if name not in grads:
                continue
            grad = grads[name]
            if name not in state.m:
                state.m[name] = np.zeros_like(value)
                state.v[name] = np.zeros_like(value)
            m, v = state.m[name], state.v[name]
            m *= state.beta1
            m += (1.0 - state.beta1) * grad
            v *= state.beta2
            v += (1.0 - state.beta2) * (grad * grad)
            lr = state.lr_overrides.get(name, state.lr)
            value -= (lr / bias1) * m / (np.sqrt(v / bias2) + state.eps)
        group.version += 1

    return params, state
