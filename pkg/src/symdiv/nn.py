"""Minimal reverse-mode autodiff with graph-building backward passes, dense and
group-equivariant layers over the regular representation, and Adam.

Backward functions emit graph nodes rather than raw arrays, so gradients are
themselves differentiable -- this is what lets the one-sided gradient penalty
(a function of an input gradient) contribute parameter gradients.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .groups import FiniteGroup, LinearAction

# ---------------------------------------------------------------------------
# graph core

_serial = 0


class Node:
    """One value in the computation graph.

    vjp(upstream) returns [(parent, grad_node), ...]; grad nodes are built
    from the same op set, so higher-order derivatives come for free.
    """

    __slots__ = ("value", "parents", "vjp", "requires", "serial")

    def __init__(self, value, parents=(), vjp=None, requires=False):
        global _serial
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = tuple(parents)
        self.vjp = vjp
        self.requires = requires or any(p.requires for p in self.parents)
        _serial += 1
        self.serial = _serial

    @property
    def shape(self):
        return self.value.shape


def constant(x) -> Node:
    return Node(x)


def leaf(x) -> Node:
    return Node(x, requires=True)


def add(a: Node, b: Node) -> Node:
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch {a.shape} vs {b.shape}")
    return Node(a.value + b.value, (a, b), lambda g: [(a, g), (b, g)])


def sub(a: Node, b: Node) -> Node:
    return add(a, scale(b, -1.0))


def scale(a: Node, c: float) -> Node:
    return Node(a.value * c, (a,), lambda g: [(a, scale(g, c))])


def add_const(a: Node, c: float) -> Node:
    return Node(a.value + c, (a,), lambda g: [(a, g)])


def mul(a: Node, b: Node) -> Node:
    if a.shape != b.shape:
        raise ValueError(f"mul shape mismatch {a.shape} vs {b.shape}")
    return Node(a.value * b.value, (a, b), lambda g: [(a, mul(g, b)), (b, mul(g, a))])


def mul_const(a: Node, c: np.ndarray) -> Node:
    c = np.asarray(c, dtype=np.float64)
    return Node(a.value * c, (a,), lambda g: [(a, mul_const(g, c))])


def matmul(a: Node, b: Node) -> Node:
    def back(g: Node):
        return [(a, matmul(g, transpose(b))), (b, matmul(transpose(a), g))]

    return Node(a.value @ b.value, (a, b), back)


def transpose(a: Node) -> Node:
    return Node(a.value.T, (a,), lambda g: [(a, transpose(g))])


def reshape(a: Node, shape) -> Node:
    shape = tuple(shape)
    old = a.shape
    return Node(a.value.reshape(shape), (a,), lambda g: [(a, reshape(g, old))])


def broadcast_to(a: Node, shape) -> Node:
    """Broadcast over leading axes and size-1 axes; vjp sums them back."""
    shape = tuple(shape)
    old = a.shape
    pad = len(shape) - len(old)
    axes = tuple(range(pad)) + tuple(
        pad + i for i, s in enumerate(old) if s == 1 and shape[pad + i] != 1
    )

    def back(g: Node):
        return [(a, reshape(reduce_sum(g, axis=axes), old))]

    return Node(np.broadcast_to(a.value, shape), (a,), back)


def reduce_sum(a: Node, axis=None, keepdims: bool = False) -> Node:
    old = a.shape
    if axis is None:
        axes = tuple(range(len(old)))
    elif isinstance(axis, int):
        axes = (axis,)
    else:
        axes = tuple(axis)

    def back(g: Node):
        kshape = tuple(1 if i in axes else s for i, s in enumerate(old))
        gk = g if keepdims else reshape(g, kshape)
        return [(a, broadcast_to(gk, old))]

    return Node(a.value.sum(axis=axes, keepdims=keepdims), (a,), back)


def take(a: Node, flat_idx: np.ndarray) -> Node:
    """Element gather from the flattened array; output has flat_idx's shape."""
    flat_idx = np.asarray(flat_idx, dtype=np.int64)
    shape = a.shape

    def back(g: Node):
        return [(a, put(g, flat_idx, shape))]

    return Node(a.value.reshape(-1)[flat_idx], (a,), back)


def put(g: Node, flat_idx: np.ndarray, shape) -> Node:
    """Scatter-add into a zero array of the given shape; adjoint of take."""
    flat_idx = np.asarray(flat_idx, dtype=np.int64)
    out = np.zeros(shape)
    np.add.at(out.reshape(-1), flat_idx.reshape(-1), g.value.reshape(-1))

    def back(up: Node):
        return [(g, take(up, flat_idx))]

    return Node(out, (g,), back)


def mean(a: Node, axis=None, keepdims: bool = False) -> Node:
    total = reduce_sum(a, axis=axis, keepdims=keepdims)
    return scale(total, float(total.value.size) / float(a.value.size))


def tanh(a: Node) -> Node:
    def make(out_holder):
        def back(g: Node):
            y = out_holder[0]
            return [(a, mul(g, add_const(scale(mul(y, y), -1.0), 1.0)))]

        return back

    holder = []
    out = Node(np.tanh(a.value), (a,), make(holder))
    holder.append(out)
    return out


def exp(a: Node) -> Node:
    holder = []

    def back(g: Node):
        return [(a, mul(g, holder[0]))]

    out = Node(np.exp(a.value), (a,), back)
    holder.append(out)
    return out


def powc(a: Node, p: float) -> Node:
    """Elementwise a**p for nonnegative a and exponent p >= 1."""
    if p < 1.0:
        raise ValueError("powc requires exponent >= 1 for differentiability at 0")

    def back(g: Node):
        if p == 2.0:
            deriv = a
        elif p - 1.0 >= 1.0:
            deriv = powc(a, p - 1.0)
        else:
            # fractional remainder: clamp away from 0 so the chain stays finite
            deriv = Node(
                np.power(np.maximum(a.value, 1e-300), p - 1.0),
                (a,),
                lambda gg: [(a, constant(np.zeros(a.shape)))],
            )
        return [(a, scale(mul(g, deriv), p))]

    return Node(np.power(a.value, p), (a,), back)


def powpos(a: Node, p: float) -> Node:
    """Elementwise a**p for strictly positive a and any real exponent.

    The derivative is emitted lazily as another powpos node, so arbitrary-order
    backward passes stay exact (each order peels one power off the exponent).
    """

    def back(g: Node):
        return [(a, scale(mul(g, powpos(a, p - 1.0)), p))]

    return Node(np.power(a.value, p), (a,), back)


def leaky_relu(a: Node, slope: float = 0.2) -> Node:
    # the kink mask is frozen at the forward value: exact a.e., and the
    # resulting vjp is linear, so second-order passes stay correct
    mask = np.where(a.value > 0, 1.0, slope)
    return mul_const(a, mask)


def relu(a: Node) -> Node:
    return leaky_relu(a, 0.0)


def batch_matvec(mats: np.ndarray, x: Node) -> Node:
    """Apply a constant matrix per row: out[i] = mats[i] @ x[i]."""
    mats = np.asarray(mats, dtype=np.float64)

    def back(g: Node):
        return [(x, batch_matvec(np.swapaxes(mats, 1, 2), g))]

    return Node(np.einsum("nij,nj->ni", mats, x.value), (x,), back)


def backward(loss: Node, wrt: list[Node]) -> dict[int, Node]:
    """Reverse-mode sweep; returns {node serial: gradient node} for wrt.

    Gradient nodes are regular graph nodes, so a second backward through them
    yields higher-order derivatives.
    """
    if loss.value.ndim != 0:
        raise ValueError("loss must be scalar")
    grads: dict[int, Node] = {loss.serial: constant(np.ones(()))}
    # collect the requiring subgraph reachable from the loss
    seen: dict[int, Node] = {}
    stack = [loss]
    while stack:
        node = stack.pop()
        if node.serial in seen or not node.requires:
            continue
        seen[node.serial] = node
        stack.extend(node.parents)
    for node in sorted(seen.values(), key=lambda n: -n.serial):
        g = grads.get(node.serial)
        if g is None or node.vjp is None:
            continue
        for parent, pg in node.vjp(g):
            if not parent.requires:
                continue
            held = grads.get(parent.serial)
            grads[parent.serial] = pg if held is None else add(held, pg)
    out = {}
    for node in wrt:
        g = grads.get(node.serial)
        out[node.serial] = g if g is not None else constant(np.zeros(node.shape))
    return out


# ---------------------------------------------------------------------------
# parameters, layers, networks


class Param:
    """A trainable array plus its Adam state."""

    __slots__ = ("name", "value", "m", "v", "t")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)
        self.t = 0


def _regular_shift_perms(group: FiniteGroup) -> np.ndarray:
    """perm[tau][g] = tau^-1 * g: the left regular shift on group-indexed slots."""
    out = np.empty((group.order, group.order), dtype=np.int64)
    for tau in group.elements():
        inv = group.inv(tau)
        out[tau] = [group.mul(inv, g) for g in group.elements()]
    return out


class Dense:
    def __init__(self, name: str, n_in: int, n_out: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(n_in)
        self.w = Param(f"{name}.w", rng.uniform(-bound, bound, size=(n_in, n_out)))
        self.b = Param(f"{name}.b", rng.uniform(-bound, bound, size=n_out))

    @property
    def params(self):
        return [self.w, self.b]

    def forward(self, x: Node, params: dict[str, Node], rng) -> Node:
        out = matmul(x, params[self.w.name])
        bias = broadcast_to(reshape(params[self.b.name], (1, -1)), out.shape)
        return add(out, bias)


class Activation:
    def __init__(self, kind: str):
        if kind not in ("relu", "leakyrelu", "tanh"):
            raise ValueError(f"unknown activation {kind!r}")
        self.kind = kind

    params: list = []

    def forward(self, x: Node, params, rng) -> Node:
        if self.kind == "tanh":
            return tanh(x)
        if self.kind == "relu":
            return relu(x)
        return leaky_relu(x, 0.2)


class GroupLift:
    """x in R^d -> (|group|, d) regular feature: slot sigma holds T_sigma^-1 x.

    A group shift of the input becomes a pure permutation of the slots.
    """

    def __init__(self, action: LinearAction):
        self.action = action
        m, d = action.group.order, action.dim
        # constant (d, m*d) matrix whose sigma-block is M(sigma^-1)^T
        lift = np.concatenate(
            [action.matrices[action.group.inv(s)].T for s in action.group.elements()],
            axis=1,
        )
        self.lift = lift
        self.m, self.d = m, d

    params: list = []

    def forward(self, x: Node, params, rng) -> Node:
        out = matmul(x, constant(self.lift))
        return reshape(out, (x.shape[0], self.m, self.d))


class GroupConvDense:
    """Dense layer over the regular representation with exact weight sharing.

    Output slot g mixes input slot h through the shared block W[h^-1 g]; the
    (m*in, m*out) mixing matrix is assembled by a constant element gather from
    the per-relative-element storage, so sharing is exact at the storage level.
    """

    def __init__(self, name: str, group: FiniteGroup, in_ch: int, out_ch: int,
                 rng: np.random.Generator):
        m = group.order
        w = rng.standard_normal((m, in_ch, out_ch)) * np.sqrt(2.0 / (m * in_ch))
        self.w = Param(f"{name}.w", w)
        self.b = Param(f"{name}.b", np.zeros(out_ch))
        # gather index: big[(h, i), (g, o)] = w[h^-1 g, i, o]
        idx = np.empty((m, m), dtype=np.int64)
        for h in group.elements():
            for g in group.elements():
                idx[h, g] = group.mul(group.inv(h), g)
        i_ix = np.arange(in_ch)
        o_ix = np.arange(out_ch)
        flat = (
            idx[:, None, :, None] * (in_ch * out_ch)
            + i_ix[None, :, None, None] * out_ch
            + o_ix[None, None, None, :]
        )
        self.flat_idx = flat.reshape(m * in_ch, m * out_ch)
        self.m, self.in_ch, self.out_ch = m, in_ch, out_ch

    @property
    def params(self):
        return [self.w, self.b]

    def forward(self, x: Node, params, rng) -> Node:
        m, ic, oc = self.m, self.in_ch, self.out_ch
        n = x.shape[0]
        big = take(params[self.w.name], self.flat_idx)
        out = reshape(matmul(reshape(x, (n, m * ic)), big), (n, m, oc))
        bias = broadcast_to(reshape(params[self.b.name], (1, 1, oc)), out.shape)
        return add(out, bias)


class GroupPool:
    """Mean or max over the group axis; output is shift-invariant."""

    def __init__(self, kind: str = "mean"):
        if kind not in ("mean", "max"):
            raise ValueError("pool kind must be mean or max")
        self.kind = kind

    params: list = []

    def forward(self, x: Node, params, rng) -> Node:
        if self.kind == "mean":
            return mean(x, axis=1)
        mask = (x.value == x.value.max(axis=1, keepdims=True)).astype(np.float64)
        mask = mask / mask.sum(axis=1, keepdims=True)
        return reduce_sum(mul_const(x, mask), axis=1)


class GroupProject:
    """Equivariant head: x = (1/m) sum_sigma T_sigma(B . h_sigma) with learned B."""

    def __init__(self, name: str, action: LinearAction, in_ch: int,
                 rng: np.random.Generator):
        self.action = action
        m, d = action.group.order, action.dim
        self.bmat = Param(f"{name}.w", rng.standard_normal((in_ch, d)) * np.sqrt(2.0 / in_ch))
        # constant (m*d, d) combiner: block sigma is M(sigma)^T / m
        comb = np.concatenate(
            [action.matrices[s].T / m for s in action.group.elements()], axis=0
        )
        self.comb = comb
        self.m, self.in_ch, self.d = m, in_ch, d

    @property
    def params(self):
        return [self.bmat]

    def forward(self, x: Node, params, rng) -> Node:
        n = x.shape[0]
        hb = matmul(reshape(x, (n * self.m, self.in_ch)), params[self.bmat.name])
        return matmul(reshape(hb, (n, self.m * self.d)), constant(self.comb))


class SymLayer:
    """Applies an independent Haar-sampled group element to each sample.

    The output distribution is group-invariant regardless of the input law;
    the draw is resampled per forward sample, never shared across a batch.
    """

    def __init__(self, action: LinearAction):
        self.action = action

    params: list = []

    def forward(self, x: Node, params, rng) -> Node:
        if rng is None:
            raise ValueError("SymLayer needs an rng at forward time")
        sigmas = rng.integers(self.action.group.order, size=x.shape[0])
        return batch_matvec(self.action.matrices[sigmas], x)


class Reshape:
    """Fixed per-sample reshape (batch axis preserved)."""

    def __init__(self, shape: tuple):
        self.shape = tuple(shape)

    params: list = []

    def forward(self, x: Node, params, rng) -> Node:
        return reshape(x, (x.shape[0],) + self.shape)


def regular_linear_action(group: FiniteGroup, ch: int) -> LinearAction:
    """The left regular shift on (|group|, ch) features, flattened to vectors.

    Element tau sends slot g to slot tau*g; used as the symmetrization action
    on the group-indexed feature space.
    """
    m = group.order
    mats = np.zeros((m, m * ch, m * ch))
    for tau in group.elements():
        for g in group.elements():
            dest = group.mul(tau, g)
            mats[tau, dest * ch: (dest + 1) * ch, g * ch: (g + 1) * ch] = np.eye(ch)
    return LinearAction(group, m * ch, mats)


@dataclass
class Network:
    """An ordered stack of layers plus its flat trainable state."""

    layers: list
    params: list[Param] = field(init=False)

    def __post_init__(self):
        self.params = [p for layer in self.layers for p in layer.params]
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")

    def make_param_nodes(self, trainable: bool = True) -> dict[str, Node]:
        """Fresh leaf (or frozen constant) nodes over the current parameter values."""
        return {p.name: (leaf if trainable else constant)(p.value) for p in self.params}

    def apply(self, node: Node, pnodes: dict[str, Node], rng=None) -> Node:
        for layer in self.layers:
            node = layer.forward(node, pnodes, rng)
        return node

    def forward(self, x, rng=None) -> tuple[Node, dict[str, Node]]:
        """Run the stack; returns (output node, parameter leaf nodes)."""
        node = x if isinstance(x, Node) else constant(np.atleast_2d(x))
        pnodes = self.make_param_nodes()
        return self.apply(node, pnodes, rng), pnodes

    def __call__(self, x, rng=None) -> np.ndarray:
        out, _ = self.forward(x, rng)
        return out.value

    def param_vector(self) -> np.ndarray:
        return np.concatenate([p.value.reshape(-1) for p in self.params]) if self.params else np.zeros(0)

    def set_param_vector(self, vec: np.ndarray) -> None:
        pos = 0
        for p in self.params:
            n = p.value.size
            p.value = vec[pos: pos + n].reshape(p.value.shape).copy()
            pos += n
        if pos != vec.size:
            raise ValueError("parameter vector length mismatch")


def adam_step(params: list[Param], grads: dict[str, np.ndarray], lr: float,
              beta1: float = 0.0, beta2: float = 0.9, eps: float = 1e-8) -> None:
    """Standard Adam with bias correction; beta1 = 0 makes m_t the raw gradient."""
    for p in params:
        g = grads[p.name]
        p.t += 1
        p.m = beta1 * p.m + (1.0 - beta1) * g
        p.v = beta2 * p.v + (1.0 - beta2) * g * g
        mhat = p.m / (1.0 - beta1**p.t)
        vhat = p.v / (1.0 - beta2**p.t)
        p.value = p.value - lr * mhat / (np.sqrt(vhat) + eps)


# ---------------------------------------------------------------------------
# architectures


def build_generator(variant: str, action_z: LinearAction, action_x: LinearAction,
                    rng: np.random.Generator, hidden: int = 64, sym_layer: bool = False
                    ) -> Network:
    """Generators for the toy experiment.

    vanilla: plain 3-hidden-layer MLP (no symmetry structure).
    eqv: lift / group-conv stack / project -- exactly equivariant.
    ieqv: a plain dense layer in front of the equivariant tail, which destroys
    equivariance; sym_layer=True inserts the per-sample symmetrization after
    the dense layer, restoring invariance of the output distribution.
    """
    zd, xd = action_z.dim, action_x.dim
    group = action_x.group
    ch = max(hidden // group.order, 1)
    if variant == "vanilla":
        if sym_layer:
            raise ValueError("sym_layer only applies to the ieqv variant")
        return Network([
            Dense("g1", zd, hidden, rng), Activation("leakyrelu"),
            Dense("g2", hidden, hidden, rng), Activation("leakyrelu"),
            Dense("g3", hidden, hidden, rng), Activation("leakyrelu"),
            Dense("g4", hidden, xd, rng),
        ])
    if variant == "eqv":
        if sym_layer:
            raise ValueError("sym_layer only applies to the ieqv variant")
        return Network([
            GroupLift(action_z),
            GroupConvDense("g1", group, zd, ch, rng), Activation("leakyrelu"),
            GroupConvDense("g2", group, ch, ch, rng), Activation("leakyrelu"),
            GroupConvDense("g3", group, ch, ch, rng), Activation("leakyrelu"),
            GroupProject("g4", action_x, ch, rng),
        ])
    if variant == "ieqv":
        # the flawed design: an unconstrained dense layer plays the role of the
        # lifting layer, so the group-indexed feature it emits has no symmetry
        m = group.order
        head: list = [Dense("g0", zd, m * ch, rng), Activation("leakyrelu")]
        if sym_layer:
            head.append(SymLayer(regular_linear_action(group, ch)))
        return Network(head + [
            Reshape((m, ch)),
            GroupConvDense("g1", group, ch, ch, rng), Activation("leakyrelu"),
            GroupConvDense("g2", group, ch, ch, rng), Activation("leakyrelu"),
            GroupConvDense("g3", group, ch, ch, rng), Activation("leakyrelu"),
            GroupProject("g4", action_x, ch, rng),
        ])
    raise ValueError(f"unknown generator variant {variant!r}")


def build_discriminator(variant: str, action_x: LinearAction,
                        rng: np.random.Generator, hidden: int = 64) -> Network:
    xd = action_x.dim
    group = action_x.group
    ch = max(hidden // group.order, 1)
    if variant == "vanilla":
        return Network([
            Dense("d1", xd, hidden, rng), Activation("leakyrelu"),
            Dense("d2", hidden, hidden, rng), Activation("leakyrelu"),
            Dense("d3", hidden, hidden, rng), Activation("leakyrelu"),
            Dense("d4", hidden, 1, rng),
        ])
    if variant == "inv":
        return Network([
            GroupLift(action_x),
            GroupConvDense("d1", group, xd, ch, rng), Activation("leakyrelu"),
            GroupConvDense("d2", group, ch, ch, rng), Activation("leakyrelu"),
            GroupConvDense("d3", group, ch, ch, rng), Activation("leakyrelu"),
            GroupPool("mean"),
            Dense("d4", ch, 1, rng),
        ])
    raise ValueError(f"unknown discriminator variant {variant!r}")


def check_equivariance(gen: Network, action_z: LinearAction, action_x: LinearAction,
                       rng: np.random.Generator, n: int = 100) -> float:
    """Max over random (z, sigma) of |g(T_sigma z) - T_sigma g(z)|, sup norm."""
    z = rng.standard_normal((n, action_z.dim))
    gz = gen(z)
    worst = 0.0
    for s in action_z.group.elements():
        lhs = gen(z @ action_z.matrices[s].T)
        rhs = gz @ action_x.matrices[s].T
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst


def check_invariance(disc: Network, action_x: LinearAction,
                     rng: np.random.Generator, n: int = 100) -> float:
    """Max over random (x, sigma) of |gamma(T_sigma x) - gamma(x)|."""
    x = rng.standard_normal((n, action_x.dim))
    dx = disc(x)
    worst = 0.0
    for s in action_x.group.elements():
        worst = max(worst, float(np.max(np.abs(disc(x @ action_x.matrices[s].T) - dx))))
    return worst


# ---------------------------------------------------------------------------
# checkpoint serialization


def save_checkpoint(path: str, net: Network, meta: dict | None = None) -> None:
    """Flat parameter vector (binary) with a JSON shape manifest header."""
    vec = net.param_vector()
    header = {
        "shapes": {p.name: list(p.value.shape) for p in net.params},
        "meta": meta or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(len(header_bytes).to_bytes(8, "little"))
        fh.write(header_bytes)
        fh.write(vec.tobytes())


def load_checkpoint(path: str, net: Network) -> dict:
    with open(path, "rb") as fh:
        hlen = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(hlen).decode())
        vec = np.frombuffer(fh.read(), dtype=np.float64)
    for p in net.params:
        if list(p.value.shape) != header["shapes"].get(p.name):
            raise ValueError(f"checkpoint shape mismatch for {p.name}")
    net.set_param_vector(vec.copy())
    return header["meta"]
