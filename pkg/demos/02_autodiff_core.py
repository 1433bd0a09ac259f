"""Tour of the reverse-mode autodiff core that everything else runs on.

A Tape records every primitive application; backward() replays the tape in
reverse, accumulating vector-Jacobian products into plain numpy arrays.
There is no broadcasting magic beyond suffix alignment and no hidden
state -- what you see on the tape is exactly what gets differentiated.
"""

import numpy as np

from xmodal.autodiff import (
    AdamState,
    ParamStore,
    Tape,
    TapeParams,
    adam_step,
    grad_check,
)

from xmodal.autodiff import apply_primitive

# --- a tiny graph by hand ---------------------------------------------------

store = ParamStore()
store.add("demo.w", np.array([[2.0], [1.0]]))
tape = Tape()
p = TapeParams(tape, store)
x = tape.constant(np.array([[1.0, -2.0], [0.5, 3.0]]))
h = apply_primitive(tape, "tanh", [x @ p("demo.w")])
loss = apply_primitive(tape, "square", [h]).sum()
grads = p.named_grads(loss)
print(f"loss = {float(loss.value):.6f}")
print(f"dloss/dw = {grads['demo.w'].ravel().round(6)}")

# --- finite differences agree ----------------------------------------------

def build(t, a, b):
    z = apply_primitive(t, "sigmoid", [a @ b])
    return (z * z).mean() + apply_primitive(t, "exp", [0.3 * a]).mean()

rng = np.random.default_rng(0)
points = [rng.normal(size=(3, 3)), rng.normal(size=(3, 3))]
err = grad_check(lambda t, *xs: build(t, *xs), points)
print(f"grad_check max relative error: {err:.2e}")

# --- a named parameter store + Adam fits a line -----------------------------

store = ParamStore()
store.add("fit.w", np.zeros((1, 1)))
store.add("fit.b", np.zeros(1))
adam = AdamState(lr=0.05)
xs = np.linspace(-1, 1, 32)[:, None]
ys = 3.0 * xs + 0.5

for step in range(300):
    tape = Tape()
    p = TapeParams(tape, store)
    pred = tape.constant(xs) @ p("fit.w") + p("fit.b")
    resid = pred - tape.constant(ys)
    loss = apply_primitive(tape, "square", [resid]).mean()
    store.update(adam_step(store.raw(), p.named_grads(loss), adam))

w, b = store.raw()["fit.w"].item(), store.raw()["fit.b"].item()
print(f"fitted y = {w:.3f} x + {b:.3f}  (target 3.000 x + 0.500)")
