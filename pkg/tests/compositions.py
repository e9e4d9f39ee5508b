"""Value-aware random op compositions for gradient property testing.

Programs are built against concrete leaf values so each op choice can be
checked for numerical safety first: kinked ops (relu, relu6, clamp) are only
applied with a margin around their kinks, divisions keep the denominator away
from zero, and exponentials are only taken on moderate values.  This keeps
central finite differences valid at step 1e-5.
"""

from __future__ import annotations

import numpy as np

from privfair import autodiff as ad

KINK_MARGIN = 0.02
VALUE_CAP = 30.0


def _leaf_shapes(rng: np.random.Generator) -> list[tuple[int, ...]]:
    m = int(rng.integers(2, 4))
    k = int(rng.integers(2, 4))
    n = int(rng.integers(2, 4))
    return [(m, k), (k, n), (m, n), (n,)]


def make_composition(rng: np.random.Generator, depth: int = 6):
    """Return (program, leaf_arrays); program maps tensors/arrays to the loss."""
    shapes = _leaf_shapes(rng)
    leaves = [rng.uniform(-2.0, 2.0, size=s) for s in shapes]
    steps: list[tuple] = []

    def run(values: list, record_shapes: bool = False):
        """Replay the program over either Tensors (autodiff) or ndarrays."""
        using_tensors = isinstance(values[0], ad.Tensor)
        lib = ad if using_tensors else _NumpyOps
        nodes = list(values)
        for op, idxs, extra in steps:
            nodes.append(getattr(lib, op)(*[nodes[i] for i in idxs], *extra))
        out = nodes[-1]
        loss = lib.tensor_mean(out)
        return loss

    # Grow the program step by step, validating safety on concrete values.
    concrete = list(leaves)

    def node_vals(i):
        return concrete[i]

    for _ in range(depth):
        candidates = []
        n_nodes = len(concrete)
        two_d = [i for i in range(n_nodes) if node_vals(i).ndim == 2]
        for i in two_d:
            vi = node_vals(i)
            if np.all(np.abs(vi) <= 3.0):
                candidates.append(("exp", (i,), ()))
            if np.min(vi) >= 0.1:
                candidates.append(("log", (i,), ()))
            if np.min(np.abs(vi)) >= KINK_MARGIN and np.min(np.abs(vi - 6.0)) >= KINK_MARGIN:
                candidates.append(("relu", (i,), ()))
                candidates.append(("relu6", (i,), ()))
            if np.min(np.abs(np.abs(vi) - 1.5)) >= KINK_MARGIN:
                candidates.append(("clamp", (i,), (-1.5, 1.5)))
            candidates.append(("square", (i,), ()))
            candidates.append(("cos", (i,), ()))
            candidates.append(("sigmoid", (i,), ()))
            candidates.append(("softplus", (i,), ()))
            for j in two_d:
                vj = node_vals(j)
                if vi.shape == vj.shape:
                    candidates.append(("add", (i, j), ()))
                    candidates.append(("sub", (i, j), ()))
                    candidates.append(("mul", (i, j), ()))
                    if np.min(np.abs(vj)) >= 0.3:
                        candidates.append(("div", (i, j), ()))
                    candidates.append(("concat_last", (i, j), ()))
                if vi.shape[1] == vj.shape[0]:
                    candidates.append(("matmul", (i, j), ()))
            # broadcast against the 1-D bias leaf
            bias = node_vals(3)
            if bias.ndim == 1 and vi.shape[-1] == bias.shape[0]:
                candidates.append(("add", (i, 3), ()))
                candidates.append(("mul", (i, 3), ()))
            if vi.shape[1] >= 2:
                candidates.append(("slice_last", (i,), (0, vi.shape[1] - 1)))
            candidates.append(("take_rows", (i,), (tuple(rng.integers(0, vi.shape[0], vi.shape[0] + 1).tolist()),)))

        for _attempt in range(20):
            op, idxs, extra = candidates[int(rng.integers(0, len(candidates)))]
            trial = getattr(_NumpyOps, op)(*[concrete[i] for i in idxs], *extra)
            if np.all(np.isfinite(trial)) and np.max(np.abs(trial)) <= VALUE_CAP:
                steps.append((op, idxs, extra))
                concrete.append(trial)
                break

    return run, leaves


class _NumpyOps:
    """Plain-ndarray twins of the autodiff primitives (forward only)."""

    @staticmethod
    def add(a, b):
        return a + b

    @staticmethod
    def sub(a, b):
        return a - b

    @staticmethod
    def mul(a, b):
        return a * b

    @staticmethod
    def div(a, b):
        return a / b

    @staticmethod
    def matmul(a, b):
        return a @ b

    @staticmethod
    def exp(x):
        return np.exp(x)

    @staticmethod
    def log(x):
        return np.log(x)

    @staticmethod
    def square(x):
        return x * x

    @staticmethod
    def cos(x):
        return np.cos(x)

    @staticmethod
    def sigmoid(x):
        return 1.0 / (1.0 + np.exp(-x))

    @staticmethod
    def softplus(x):
        return np.logaddexp(0.0, x)

    @staticmethod
    def relu(x):
        return np.maximum(x, 0.0)

    @staticmethod
    def relu6(x):
        return np.minimum(np.maximum(x, 0.0), 6.0)

    @staticmethod
    def clamp(x, lo, hi):
        return np.clip(x, lo, hi)

    @staticmethod
    def concat_last(a, b):
        return np.concatenate([a, b], axis=-1)

    @staticmethod
    def slice_last(x, start, stop):
        return x[..., start:stop]

    @staticmethod
    def take_rows(x, idx):
        return x[np.asarray(idx, dtype=np.intp)]

    @staticmethod
    def tensor_mean(x):
        return float(np.mean(x))


def check_composition_gradients(seed: int, depth: int = 6, step: float = 1e-5) -> float:
    """Build one random composition and return its max relative gradient error."""
    from oracles import finite_difference, relative_gradient_error

    rng = np.random.default_rng(seed)
    run, leaves = make_composition(rng, depth=depth)

    tensors = [ad.Tensor(a.copy(), requires_grad=True) for a in leaves]
    with ad.Tape() as tape:
        loss = run(tensors)
    grads = tape.backward(loss)
    # leaves the program never touched are absent from the map; their true
    # gradient is zero
    computed = [grads.get(t, np.zeros_like(t.values)) for t in tensors]

    def f(arrays):
        return run([a for a in arrays])

    reference = finite_difference(f, [a.copy() for a in leaves], step=step)
    return relative_gradient_error(computed, reference)
