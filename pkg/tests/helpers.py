"""Shared test utilities: random differentiable programs for gradient checks."""

import numpy as np

from xmodal.autodiff import Tensor, apply_primitive, concat


def random_composition(seed, n_inputs=2, depth=6, shape=(3, 4)):
    """Build a seeded random program over the autodiff primitives.

    Returns ``(build, points)`` where ``build(tape, *leaves)`` replays the
    same op sequence every call (so finite differences see the identical
    graph). Kinked ops (relu / leaky-relu) are only applied when every
    pre-activation is at least 1e-3 from the kink, keeping the central
    difference oracle valid; otherwise tanh is substituted.
    """
    rng = np.random.default_rng(seed)
    points = [rng.normal(scale=0.5, size=shape) for _ in range(n_inputs)]
    program = rng.integers(0, 12, size=depth)
    picks = rng.integers(0, 1000, size=(depth, 2))
    consts = [rng.normal(scale=0.5, size=(shape[1], shape[1])) for _ in range(depth)]
    perm = rng.integers(0, shape[0], size=shape[0])

    def build(tape, *leaves):
        pool = list(leaves)

        def op(kind, ts, **kw):
            return apply_primitive(tape, kind, ts, **kw)

        for step, code in enumerate(program):
            a = pool[picks[step][0] % len(pool)]
            b = pool[picks[step][1] % len(pool)]
            if code == 0:
                out = op("tanh", [a])
            elif code == 1:
                out = op("sigmoid", [a])
            elif code == 2:
                out = op("negate", [a])
            elif code == 3:
                out = op("square", [a])
            elif code == 4:
                out = op("exp", [0.3 * a])
            elif code == 5:
                out = op("log", [op("square", [a]) + 1.0])
            elif code == 6:
                out = a @ Tensor(consts[step])
            elif code == 7:
                out = op("take", [a], indices=perm)
            elif code == 8:
                out = op("slice", [concat([a, b], axis=0)], key=slice(0, shape[0]))
            elif code == 9:
                out = a + b
            elif code == 10:
                out = a * b
            else:
                kind = "relu" if step % 2 == 0 else "leaky_relu"
                if np.abs(a.value).min() > 1e-3:
                    out = op(kind, [a])
                else:
                    out = op("tanh", [a])
            pool.append(out)
        total = pool[-1].mean()
        for t in pool[len(leaves):-1]:
            total = total + 0.1 * t.mean()
        return total

    return build, points
