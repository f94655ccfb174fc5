"""Identity suites and the finite-difference gradient oracle runs.

Everything here returns plain numbers or result records; the CLI prints
them and the acceptance tests assert on them.  Shared so the command
line `verify` / `gradcheck` and the test suite cannot drift apart.
"""

from dataclasses import dataclass

import numpy as np

from . import combination, reconstruction
from .engine import (
    Layer,
    _layer_forward,
    backward,
    build_mlp,
    effective_weight,
    forward,
    finite_diff_grad,
    mse_loss,
)
from .extension import construct_constrained_factors, equivalence_transform
from .linalg import column_norms, pinv, reconstruct, svd
from .methods import FULL_FT, METHOD_NAMES, IMPLIED_REGULARIZER, make_state, trainables
from .regularizers import mpc_grad, mpc_value

GRADCHECK_METHODS = METHOD_NAMES + ("soft_prompt", FULL_FT)

KINK_MARGIN = 5e-4
FD_EPSILON = 1e-5
REL_TOL = 1e-5


# ---------------------------------------------------------------- identities


def svd_invariant_residuals(count=200, seed=0, max_rows=128, max_cols=96):
    """Worst-case SVD contract residuals over `count` random matrices.

    Returns dict with reconstruction (relative to the spectrum top),
    orthonormality of both factors, ordering violations, and the four
    Penrose residuals of the pseudo-inverse.
    """
    rng = np.random.default_rng(seed)
    worst = {"recon": 0.0, "u_orth": 0.0, "v_orth": 0.0, "order": 0.0, "penrose": 0.0}
    for trial in range(count):
        n = int(rng.integers(1, max_rows + 1))
        m = int(rng.integers(1, max_cols + 1))
        w = rng.standard_normal((n, m))
        if trial % 7 == 3 and min(n, m) > 2:  # sprinkle rank deficiency
            k = max(1, min(n, m) // 2)
            w = (w[:, :k] @ rng.standard_normal((k, m))) / np.sqrt(k)
        f = svd(w)
        scale = max(1.0, f.sigma[0])
        worst["recon"] = max(worst["recon"], np.abs(reconstruct(f) - w).max() / scale)
        worst["u_orth"] = max(
            worst["u_orth"], np.abs(f.u.T @ f.u - np.eye(n)).max()
        )
        worst["v_orth"] = max(
            worst["v_orth"], np.abs(f.v.T @ f.v - np.eye(m)).max()
        )
        if f.sigma.size > 1:
            worst["order"] = max(worst["order"], float(np.diff(f.sigma).max()))
        p = pinv(w)
        pres = max(
            np.abs(w @ p @ w - w).max(),
            np.abs(p @ w @ p - p).max() * min(1.0, scale),
            np.abs((w @ p).T - w @ p).max(),
            np.abs((p @ w).T - p @ w).max(),
        )
        worst["penrose"] = max(worst["penrose"], pres / scale)
    return worst


def equivalence_residual(trials=100, seed=1):
    """Worst relative residual of the core-collapse transform."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(2, 24))
        m = int(rng.integers(2, 24))
        r = int(rng.integers(1, min(n, m) + 1))
        a = rng.standard_normal((n, r))
        g = rng.standard_normal((r, r))
        b = rng.standard_normal((r, m))
        a_star, b_dia = equivalence_transform(a, g, b)
        ref = a @ g @ b
        denom = max(1.0, float(np.sqrt((ref * ref).sum())))
        worst = max(worst, np.abs(a_star @ b_dia - ref).max() / denom)
    return worst


def semi_orthogonality_residual(trials=100, seed=2):
    """Worst constraint residual of the constructed factors."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(2, 20))
        m = int(rng.integers(2, 20))
        r = int(rng.integers(1, min(n, m) + 1))
        t = rng.standard_normal((n, m))
        a, b = construct_constrained_factors(t, r)
        worst = max(
            worst,
            np.abs(a.T @ a - np.eye(r)).max(),
            np.abs(b @ b.T - np.eye(r)).max(),
        )
    return worst


def truncation_optimality_residual(seed=3, integer_trials=300):
    """Gap between the construction's error and the best possible error.

    The oracle is the tail of the Gram spectrum from numpy's symmetric
    eigensolver, an independent route to the optimal rank-r Frobenius
    error; integer entries keep the comparison sharp.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for trial in range(integer_trials):
        t = rng.integers(-2, 3, size=(3, 3)).astype(np.float64)
        if not t.any():
            continue
        for r in (1, 2):
            a, b = construct_constrained_factors(t, r)
            s = svd(t).sigma[:r]
            err2 = float(((t - (a * s) @ b) ** 2).sum())
            eig = np.sort(np.linalg.eigvalsh(t @ t.T))[::-1]
            best2 = float(np.clip(eig[r:], 0.0, None).sum())
            worst = max(worst, abs(err2 - best2))
    return worst


def scale_spectrum_residual(trials=100, seed=4):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(2, 16))
        m = int(rng.integers(2, 16))
        w = rng.standard_normal((n, m))
        d1 = rng.uniform(-2.0, 2.0, n)
        d2 = rng.uniform(-2.0, 2.0, m)
        worst = max(
            worst, reconstruction.column_scale_is_sigma_adjustment(w, d1, d2)
        )
    return worst


def combination_identity_residuals(trials=50, seed=5):
    """Two-path identities of the mixed tuners, worst over trials."""
    rng = np.random.default_rng(seed)
    worst = {"spectral": 0.0, "svdiff": 0.0, "dora_norms": 0.0}
    for _ in range(trials):
        n = int(rng.integers(3, 12))
        m = int(rng.integers(3, 12))
        w = rng.standard_normal((n, m))
        r = int(rng.integers(1, min(n, m)))

        spec = combination.init_combination_state("spectral", w, r=r)
        spec.a = 0.3 * rng.standard_normal(spec.a.shape)
        spec.b = 0.3 * rng.standard_normal(spec.b.shape)
        fast = combination.spectral_adapter_apply(spec, w)
        slow = combination.spectral_adapter_blockwise(spec, w)
        worst["spectral"] = max(worst["spectral"], np.abs(fast - slow).max())

        sv = combination.init_combination_state("svdiff", w)
        sv.shift = rng.uniform(-2.0, 2.0, sv.shift.shape)
        worst["svdiff"] = max(
            worst["svdiff"],
            np.abs(
                combination.svdiff_apply(sv, w) - combination.svdiff_delta_form(sv, w)
            ).max(),
        )

        do = combination.init_combination_state("dora", w, r=r, rng=rng)
        do.b = 0.2 * rng.standard_normal(do.b.shape)
        do.magnitude = rng.uniform(0.5, 2.0, m)
        out = combination.dora_apply(do, w)
        worst["dora_norms"] = max(
            worst["dora_norms"], np.abs(column_norms(out) - do.magnitude).max()
        )
    return worst


def fresh_state_residuals(seed=6, n=8, m=10, rank=3):
    """phi(W) - W at initialization for every public method name."""
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((n, m))
    out = {}
    for idx, method in enumerate(METHOD_NAMES):
        state = make_state(
            method, w, rank=rank, rng=np.random.default_rng((seed, idx)),
            frozen_bias=np.zeros(m), prompt_len=4,
        )
        layer = Layer(weight=w, bias=np.zeros(m), tuner=state)
        out[method] = float(np.abs(effective_weight(layer) - w).max())
    return out


# ----------------------------------------------------------------- gradcheck


@dataclass
class GradCheckResult:
    method: str
    tensor: str
    rel_err: float
    instances: int


def _randomize_state(state, rng):
    for name, arr in trainables(state).items():
        if name == "magnitude":
            arr[:] = rng.uniform(0.5, 2.0, arr.shape)
        elif name == "shift":
            arr[:] = 0.3 * rng.standard_normal(arr.shape)
        elif name in ("d", "d1", "d2"):
            arr[:] = rng.uniform(0.5, 1.5, arr.shape)
        elif name == "sigma_prime":
            arr[:] = arr * rng.uniform(0.5, 1.5, arr.shape)
        elif name == "bias":
            arr[:] = 0.3 * rng.standard_normal(arr.shape)
        elif name == "weight":
            arr[:] = arr + 0.1 * rng.standard_normal(arr.shape)
        elif name == "g":
            arr[:] = np.eye(arr.shape[0]) + 0.3 * rng.standard_normal(arr.shape)
        else:  # a, b, prompt
            arr[:] = 0.4 * rng.standard_normal(arr.shape)


def _kink_margin(model, x):
    """Distance to the nearest nondifferentiable point along the pass."""
    margin = np.inf
    cur = x
    for layer in model.layers:
        out, cache = _layer_forward(layer, cur)
        t = layer.tuner
        if layer.activation == "relu":
            margin = min(margin, float(np.abs(cache["z"]).min()))
        if "p" in cache and getattr(t, "activation", None) == "relu":
            margin = min(margin, float(np.abs(cache["p"]).min()))
        if isinstance(t, combination.CombinationState) and t.kind == "svdiff":
            margin = min(margin, float(np.abs(t.factors.sigma + t.shift).min()))
        cur = out
    return margin


def _build_gradcheck_model(method, rng, reg_kind=None):
    dims = (4, 5, 3)
    model = build_mlp(dims, seed=int(rng.integers(2**32)))
    for li, layer in enumerate(model.layers):
        layer.weight = rng.standard_normal(layer.weight.shape) * 0.7
        layer.bias = 0.1 * rng.standard_normal(layer.bias.shape)
        if method == "soft_prompt" and li != len(model.layers) - 1:
            continue  # prompt attaches to the last layer only
        state = make_state(
            method,
            layer.weight,
            rank=2,
            rng=rng,
            frozen_bias=layer.bias,
            prompt_len=2,
        )
        _randomize_state(state, rng)
        layer.tuner = state
    return model


def gradcheck_method(method, instances=10, epsilon=FD_EPSILON, seed=0):
    """Compare analytic and finite-difference gradients for one method.

    Returns GradCheckResult per tensor name with the worst relative
    error across instances.  Random states; instances whose forward pass
    sits within KINK_MARGIN of a relu corner or clamp boundary are
    redrawn so the finite differences stay two-sided.
    """
    reg_kind = IMPLIED_REGULARIZER.get(method)
    lam = 1e-3
    worst = {}
    rng_master = np.random.default_rng((seed, GRADCHECK_METHODS.index(method)))
    done = 0
    attempts = 0
    while done < instances:
        attempts += 1
        if attempts > instances * 30:
            raise RuntimeError(f"could not sample a clean instance for {method}")
        rng = np.random.default_rng(rng_master.integers(2**63))
        model = _build_gradcheck_model(method, rng)
        x = rng.standard_normal((3, 4))
        rows = 3 + (2 if method == "soft_prompt" else 0)
        target = rng.standard_normal((rows, 3))
        if _kink_margin(model, x) < KINK_MARGIN:
            continue
        done += 1

        tuned = [
            (li, layer.tuner)
            for li, layer in enumerate(model.layers)
            if layer.tuner is not None
        ]

        def total_loss():
            pred, _ = forward(model, x)
            loss, _ = mse_loss(pred, target)
            if reg_kind:
                for _, state in tuned:
                    loss += lam * mpc_value(reg_kind, state.a, state.b)
            return loss

        pred, caches = forward(model, x)
        _, g_out = mse_loss(pred, target)
        analytic = backward(model, caches, g_out)
        if reg_kind:
            for li, state in tuned:
                ga, gb = mpc_grad(reg_kind, state.a, state.b)
                analytic[li]["a"] = analytic[li]["a"] + lam * ga
                analytic[li]["b"] = analytic[li]["b"] + lam * gb

        for li, state in tuned:
            params = trainables(state)
            fd = finite_diff_grad(total_loss, params, epsilon)
            for name in params:
                ga = analytic[li][name]
                gf = fd[name]
                denom = max(np.abs(ga).max(), np.abs(gf).max(), 1e-10)
                rel = float(np.abs(ga - gf).max() / denom)
                key = name
                worst[key] = max(worst.get(key, 0.0), rel)
    return [
        GradCheckResult(method=method, tensor=name, rel_err=err, instances=instances)
        for name, err in sorted(worst.items())
    ]


def gradcheck_all(instances=10, seed=0, methods=None):
    results = []
    for method in methods or GRADCHECK_METHODS:
        results.extend(gradcheck_method(method, instances=instances, seed=seed))
    return results
