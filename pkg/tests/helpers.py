"""Shared test utilities: finite-difference gradient checking."""

import numpy as np

from igan import tensor as T


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar f at x, elementwise."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def check_grads(build, arrays: dict, rtol: float = 1e-5, h: float = 1e-5):
    """Compare reverse-mode grads of ``build`` against central differences.

    ``build`` maps {name: Tensor} to a scalar Tensor. Each array in
    ``arrays`` is checked in turn while the others stay fixed.
    """
    tensors = {k: T.Tensor(v.copy(), requires_grad=True) for k, v in arrays.items()}
    loss = build(tensors)
    T.backward(loss)

    for name, arr in arrays.items():
        def f(x, _name=name):
            probe = {
                k: T.Tensor(x if k == _name else v.copy())
                for k, v in arrays.items()
            }
            return build(probe).item()

        num = numeric_grad(f, arr.copy(), h=h)
        ana = tensors[name].grad
        denom = max(np.abs(num).max(), np.abs(ana).max(), 1e-8)
        err = np.abs(num - ana).max() / denom
        assert err < rtol, f"gradient mismatch on {name}: rel err {err:.3e}"


def fd_check_params(loss_fn, tensors, rtol: float = 1e-4, h: float = 1e-5):
    """Check reverse-mode grads on live parameter tensors against central
    differences of ``loss_fn``, which rebuilds the loss from current state.
    """
    for _, t in tensors:
        t.zero_grad()
    T.backward(loss_fn())
    for name, t in tensors:
        ana = t.grad.reshape(-1).copy()
        flat = t.data.reshape(-1)
        num = np.zeros_like(ana)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_fn().item()
            flat[i] = orig - h
            fm = loss_fn().item()
            flat[i] = orig
            num[i] = (fp - fm) / (2.0 * h)
        denom = max(np.abs(num).max(), np.abs(ana).max(), 1e-8)
        err = np.abs(num - ana).max() / denom
        assert err < rtol, f"gradient mismatch on {name}: rel err {err:.3e}"


def force_identity_mlp(net, d: int, out_scale: float = 1.0):
    """Overwrite a relu MLP with hidden width 2d with an exact (scaled)
    identity: first layer splits [x+, x-], middle layers pass the split
    through unchanged (the split is nonnegative, so relu is transparent),
    last layer recombines to out_scale * (x+ - x-)."""
    eye = np.eye(d)
    n = net.n_layers("fc")
    net["fc0.weight"].data[:] = np.hstack([eye, -eye])
    net["fc0.bias"].data[:] = 0.0
    for i in range(1, n - 1):
        net[f"fc{i}.weight"].data[:] = np.eye(2 * d)
        net[f"fc{i}.bias"].data[:] = 0.0
    net[f"fc{n - 1}.weight"].data[:] = np.vstack([eye, -eye]) * out_scale
    net[f"fc{n - 1}.bias"].data[:] = 0.0


def rng(seed: int = 0) -> np.random.Generator:
    return np.random.default_rng(seed)


def away_from_kinks(x: np.ndarray, margin: float = 1e-2) -> np.ndarray:
    """Push values near 0 outward so relu/clamp boundaries stay inactive
    within finite-difference step size."""
    y = x.copy()
    small = np.abs(y) < margin
    y[small] = np.where(y[small] >= 0, margin, -margin) * 2.0
    return y
