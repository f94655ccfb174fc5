"""Tiny dense training engine with hand-written backprop.

Models are stacks of linear layers with frozen weights; a tuner state
attached to a layer decides what is trainable there.  `forward` caches
what `backward` needs; `backward` produces gradients for every trainable
tensor of every attached tuner in closed form.  `finite_diff_grad` is
the independent oracle the gradcheck suite compares against.

Gradient conventions, writing M = phi(W), Gz for the loss gradient at
the pre-activation and Gm = x^T Gz for the gradient at M:

  lora      Ga = s Gm B^T                Gb = s A^T Gm
  adb       Ga = s (Gm B^T) diag(d)      Gb = s diag(d) A^T Gm
            Gd = s diag(A^T Gm B^T)
  agb       Ga = s Gm (G B)^T            Gb = s G^T A^T Gm
            Gg = s A^T Gm B^T
  adapters  through h'(pre) on the branch, residual path untouched
  mode1     Gsigma'_i = u_i^T Gm v_i
  ia3/ssl/ssb   contractions of Gm * W against the other diagonal
  bitfit    Gbias = column sums of Gz
  dora      through the column normalization (see _dora_backward)
  svdiff    Gshift_i = u_i^T Gm v_i, zeroed where sigma_i + shift_i <= 0
  spectral  Ga = Gm (V_r + B) S_r        Gb = Gm^T (U_r + A) S_r
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import activations, combination, extension, reconstruction
from .combination import CombinationState
from .errors import DivergenceError, ShapeError, UnsupportedKindError
from .extension import ExtensionState
from .linalg import column_norms
from .methods import FullFtState, is_factored, trainables
from .reconstruction import ReconstructionState
from .regularizers import RegularizerSpec, mpc_grad, mpc_value


@dataclass
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "identity"
    tuner: object = None


@dataclass
class Model:
    layers: list


@dataclass
class TrainConfig:
    steps: int = 2000
    learning_rate: float = 1e-2
    optimizer: str = "adam"
    batch_size: int = 0  # 0 means full batch
    regularizer: RegularizerSpec = field(default_factory=RegularizerSpec)
    seed: int = 0


@dataclass
class TrainTrace:
    loss_per_step: np.ndarray
    final_params: dict
    wall_clock_ms: int = field(compare=False, default=0)


def build_mlp(dims, seed, hidden_activation="relu", final_activation="identity"):
    """Frozen MLP with He-scaled Gaussian weights and zero biases."""
    rng = np.random.default_rng(seed)
    layers = []
    for i in range(len(dims) - 1):
        n, m = dims[i], dims[i + 1]
        w = rng.standard_normal((n, m)) * np.sqrt(2.0 / n)
        act = hidden_activation if i < len(dims) - 2 else final_activation
        layers.append(Layer(weight=w, bias=np.zeros(m), activation=act))
    return Model(layers=layers)


def effective_weight(layer):
    """phi(W) for tuners that reduce to a matrix on the ordinary path."""
    t = layer.tuner
    w = layer.weight
    if t is None:
        return w
    if isinstance(t, FullFtState):
        return t.weight
    if isinstance(t, ExtensionState):
        return extension.apply(t, w)
    if isinstance(t, ReconstructionState):
        if t.kind == "singular_values":
            return reconstruction.mode1_apply(t, w)
        if t.kind == "ia3":
            return reconstruction.ia3_apply(t, w)
        if t.kind == "ssl":
            return reconstruction.ssl_apply(t, w)
        if t.kind == "ssb":
            return reconstruction.ssb_apply(t, w)
        return w  # bitfit and soft_prompt leave the weight untouched
    if isinstance(t, CombinationState):
        if t.kind == "dora":
            return combination.dora_apply(t, w)
        if t.kind == "spectral":
            return combination.spectral_adapter_apply(t, w)
        return combination.svdiff_apply(t, w)
    raise UnsupportedKindError(f"unknown tuner {type(t).__name__}")


def _layer_forward(layer, x):
    t = layer.tuner
    cache = {"x": x}
    if isinstance(t, ExtensionState) and t.kind == "serial_adapter":
        z0 = x @ layer.weight + layer.bias
        p = z0 @ t.a
        h = activations.apply(t.activation, p)
        z = z0 + t.scale * (h @ t.b)
        cache.update(z0=z0, p=p, h=h)
    elif isinstance(t, ExtensionState) and t.kind == "parallel_adapter":
        p = x @ t.a
        h = activations.apply(t.activation, p)
        z = x @ layer.weight + t.scale * (h @ t.b) + layer.bias
        cache.update(p=p, h=h)
    elif isinstance(t, ReconstructionState) and t.kind == "bitfit":
        z = x @ layer.weight + t.bias
    elif isinstance(t, ReconstructionState) and t.kind == "soft_prompt":
        z = np.vstack([t.prompt, x @ layer.weight + layer.bias])
    elif isinstance(t, FullFtState):
        z = x @ t.weight + t.bias
        cache["m"] = t.weight
    else:
        m = effective_weight(layer)
        z = x @ m + layer.bias
        cache["m"] = m
    cache["z"] = z
    return activations.apply(layer.activation, z), cache


def forward(model, x):
    """Returns (output, caches); caches feed `backward`."""
    caches = []
    for layer in model.layers:
        x, cache = _layer_forward(layer, x)
        caches.append(cache)
    return x, caches


def _dora_backward(t, w, g_m):
    composed = w + t.a @ t.b if t.b.any() else w
    norms = column_norms(composed)
    hat = composed / norms[None, :]
    dots = np.einsum("ij,ij->j", hat, g_m)
    g_mag = dots
    g_c = (g_m - hat * dots[None, :]) * (t.magnitude / norms)[None, :]
    return {"a": g_c @ t.b.T, "b": t.a.T @ g_c, "magnitude": g_mag}


def _matrix_param_grads(t, layer, g_m):
    if isinstance(t, FullFtState):
        return {"weight": g_m}
    if isinstance(t, ExtensionState):
        s = t.scale
        if t.kind == "lora":
            return {"a": s * g_m @ t.b.T, "b": s * t.a.T @ g_m}
        if t.kind == "adb":
            at_gm = t.a.T @ g_m
            return {
                "a": s * (g_m @ t.b.T) * t.d[None, :],
                "b": s * t.d[:, None] * at_gm,
                "d": s * np.einsum("km,km->k", at_gm, t.b),
            }
        if t.kind == "agb":
            at_gm = t.a.T @ g_m
            return {
                "a": s * g_m @ (t.g @ t.b).T,
                "g": s * at_gm @ t.b.T,
                "b": s * t.g.T @ at_gm,
            }
    if isinstance(t, ReconstructionState):
        w = layer.weight
        if t.kind == "singular_values":
            f = t.factors
            k = f.sigma.shape[0]
            return {
                "sigma_prime": np.einsum(
                    "ij,ji->i", f.u[:, :k].T @ g_m, f.v[:, :k]
                )
            }
        if t.kind == "ia3":
            return {"d2": (g_m * w).sum(axis=0)}
        if t.kind == "ssl":
            return {"d1": (g_m * w).sum(axis=1)}
        if t.kind == "ssb":
            scaled = g_m * w
            return {
                "d1": (scaled * t.d2[None, :]).sum(axis=1),
                "d2": (scaled * t.d1[:, None]).sum(axis=0),
            }
    if isinstance(t, CombinationState):
        w = layer.weight
        if t.kind == "dora":
            return _dora_backward(t, w, g_m)
        if t.kind == "svdiff":
            f = t.factors
            k = f.sigma.shape[0]
            raw = np.einsum("ij,ji->i", f.u[:, :k].T @ g_m, f.v[:, :k])
            open_gate = (f.sigma + t.shift) > 0.0
            return {"shift": raw * open_gate}
        if t.kind == "spectral":
            f = t.factors
            r = t.a.shape[1]
            s_r = f.sigma[:r]
            return {
                "a": (g_m @ (f.v[:, :r] + t.b)) * s_r[None, :],
                "b": (g_m.T @ (f.u[:, :r] + t.a)) * s_r[None, :],
            }
    raise UnsupportedKindError(f"no gradient rule for {type(t).__name__}")


def backward(model, caches, g_out):
    """Per-layer gradients for every trainable tensor, plus input flow."""
    grads = [dict() for _ in model.layers]
    g = g_out
    for idx in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[idx]
        cache = caches[idx]
        t = layer.tuner
        g_z = g * activations.grad(layer.activation, cache["z"])
        x = cache["x"]
        if isinstance(t, ExtensionState) and t.kind == "serial_adapter":
            s = t.scale
            grads[idx]["b"] = s * cache["h"].T @ g_z
            g_p = (s * g_z @ t.b.T) * activations.grad(t.activation, cache["p"])
            grads[idx]["a"] = cache["z0"].T @ g_p
            g_z0 = g_z + g_p @ t.a.T
            g = g_z0 @ layer.weight.T
            continue
        if isinstance(t, ExtensionState) and t.kind == "parallel_adapter":
            s = t.scale
            grads[idx]["b"] = s * cache["h"].T @ g_z
            g_p = (s * g_z @ t.b.T) * activations.grad(t.activation, cache["p"])
            grads[idx]["a"] = x.T @ g_p
            g = g_z @ layer.weight.T + g_p @ t.a.T
            continue
        if isinstance(t, ReconstructionState) and t.kind == "bitfit":
            grads[idx]["bias"] = g_z.sum(axis=0)
            g = g_z @ layer.weight.T
            continue
        if isinstance(t, ReconstructionState) and t.kind == "soft_prompt":
            lp = t.prompt.shape[0]
            grads[idx]["prompt"] = g_z[:lp].copy()
            g = g_z[lp:] @ layer.weight.T
            continue
        # ordinary matrix path
        m = cache["m"] if "m" in cache else layer.weight
        if t is not None:
            g_m = x.T @ g_z
            grads[idx] = _matrix_param_grads(t, layer, g_m)
            if isinstance(t, FullFtState):
                grads[idx]["bias"] = g_z.sum(axis=0)
        g = g_z @ m.T
    return grads


def mse_loss(pred, target):
    diff = pred - target
    loss = float((diff * diff).mean())
    return loss, 2.0 * diff / diff.size


def softmax_cross_entropy(logits, labels):
    shifted = logits - logits.max(axis=1, keepdims=True)
    expz = np.exp(shifted)
    probs = expz / expz.sum(axis=1, keepdims=True)
    batch = logits.shape[0]
    picked = probs[np.arange(batch), labels]
    loss = float(-np.log(np.maximum(picked, 1e-300)).mean())
    grad = probs.copy()
    grad[np.arange(batch), labels] -= 1.0
    return loss, grad / batch


def accuracy(logits, labels):
    return float((logits.argmax(axis=1) == labels).mean())


LOSSES = {"mse": mse_loss, "cross_entropy": softmax_cross_entropy}


def finite_diff_grad(loss_fn, params, epsilon=1e-5):
    """Central differences of `loss_fn()` over every entry of `params`.

    `params` maps names to arrays that `loss_fn` reads live; entries are
    perturbed in place and restored.  The independent gradient oracle.
    """
    grads = {}
    for name, arr in params.items():
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gf = g.ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + epsilon
            f_plus = loss_fn()
            flat[i] = keep - epsilon
            f_minus = loss_fn()
            flat[i] = keep
            gf[i] = (f_plus - f_minus) / (2.0 * epsilon)
        grads[name] = g
    return grads


class Sgd:
    def __init__(self, params, lr):
        self.params = params
        self.lr = lr

    def step(self, grads):
        for key, arr in self.params.items():
            arr -= self.lr * grads[key]


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for key, arr in self.params.items():
            g = grads[key]
            self.m[key] = b1 * self.m[key] + (1.0 - b1) * g
            self.v[key] = b2 * self.v[key] + (1.0 - b2) * g * g
            m_hat = self.m[key] / (1.0 - b1**self.t)
            v_hat = self.v[key] / (1.0 - b2**self.t)
            arr -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


OPTIMIZERS = {"sgd": Sgd, "adam": Adam}


def collect_trainables(model):
    """(layer_idx, name) -> live array, for every attached tuner."""
    out = {}
    for idx, layer in enumerate(model.layers):
        if layer.tuner is None:
            continue
        for name, arr in trainables(layer.tuner).items():
            out[(idx, name)] = arr
    return out


def _penalized_layers(model, spec):
    if spec.kind not in ("o", "d"):
        return []
    return [
        (idx, layer.tuner)
        for idx, layer in enumerate(model.layers)
        if is_factored(layer.tuner)
    ]


def train(model, x, y, config, loss="mse"):
    """Optimize the attached tuner states; frozen weights never move.

    The recorded per-step loss is the task loss alone; the pattern
    penalty only shapes the gradients.  Raises DivergenceError naming
    the step if either becomes non-finite.
    """
    t0 = time.perf_counter()
    if config.optimizer not in OPTIMIZERS:
        raise UnsupportedKindError(f"unknown optimizer {config.optimizer!r}")
    if loss not in LOSSES:
        raise UnsupportedKindError(f"unknown loss {loss!r}")
    loss_fn = LOSSES[loss]
    params = collect_trainables(model)
    if not params:
        raise ShapeError("model has no attached tuner state to train")
    optimizer = OPTIMIZERS[config.optimizer](params, config.learning_rate)
    penalized = _penalized_layers(model, config.regularizer)
    lam = config.regularizer.weight
    reg_kind = config.regularizer.kind
    if reg_kind == "n":
        raise UnsupportedKindError(
            "the structural rewrite is applied at attach time, not in train"
        )

    n_data = x.shape[0]
    batch = config.batch_size if 0 < config.batch_size < n_data else 0
    rng = np.random.default_rng(config.seed)
    order = None
    pos = 0

    losses = np.empty(config.steps)
    # divergence is detected by the finite checks below, so numpy's
    # overflow warnings on the way there are just noise
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for step in range(config.steps):
            if batch:
                if order is None or pos + batch > n_data:
                    order = rng.permutation(n_data)
                    pos = 0
                idx = order[pos : pos + batch]
                pos += batch
                xb, yb = x[idx], y[idx]
            else:
                xb, yb = x, y
            pred, caches = forward(model, xb)
            task_loss, g_out = loss_fn(pred, yb)
            if not np.isfinite(task_loss):
                raise DivergenceError(step, task_loss)
            losses[step] = task_loss
            grads = backward(model, caches, g_out)
            for idx_l, state in penalized:
                val = mpc_value(reg_kind, state.a, state.b)
                if not np.isfinite(val):
                    raise DivergenceError(step, val)
                ga, gb = mpc_grad(reg_kind, state.a, state.b)
                grads[idx_l]["a"] = grads[idx_l]["a"] + lam * ga
                grads[idx_l]["b"] = grads[idx_l]["b"] + lam * gb
            flat = {}
            for i, layer_grads in enumerate(grads):
                for name, g in layer_grads.items():
                    flat[(i, name)] = g
            optimizer.step(flat)
    wall = int(round((time.perf_counter() - t0) * 1000))
    final = {key: arr.copy() for key, arr in params.items()}
    return TrainTrace(loss_per_step=losses, final_params=final, wall_clock_ms=wall)
