"""Central finite differences as an independent gradient oracle."""
import time
from dataclasses import dataclass

import numpy as np


def finite_diff_grad(f, params, h=1e-5):
    """Estimate the gradient of scalar ``f()`` w.r.t. every entry of ``params``.

    ``params`` maps names to float arrays that ``f`` reads; each entry is
    perturbed in place by ``+h`` and ``-h`` and restored afterwards.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    out = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f())
            flat[i] = orig - h
            fm = float(f())
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        out[name] = g
    return out


def relative_error(a, b, floor=1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def worst_relative_error(analytic, numeric):
    """Largest element-wise relative error and where it occurs.

    Returns ``(error, parameter name, flat index)``.
    """
    worst = (0.0, None, None)
    for name, a in analytic.items():
        err = relative_error(a, numeric[name])
        if err.size and err.max() >= worst[0]:
            i = int(np.argmax(err))
            worst = (float(err.reshape(-1)[i]), name, i)
    return worst


# --- whole-model harness -------------------------------------------------------

@dataclass
class GradcheckResult:
    label: str
    passed: bool
    worst_error: float
    worst_param: str
    worst_index: int
    n_params: int
    seconds: float
    refined_error: float = float("nan")

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        text = (f"{status} {self.label}: worst rel. err {self.worst_error:.3e} at "
                f"{self.worst_param}[{self.worst_index}] ({self.n_params} params, {self.seconds:.2f}s)")
        if not self.passed:
            text += f"; at h/10 the same entry has rel. err {self.refined_error:.3e}"
        return text


def toy_batch(n_channels, rng, n_instances=3):
    """Small random batch with varied observation counts and one empty channel.

    Times follow the normalized layout used in training: observations in
    [0, 1], queries in (1, 1.5].
    """
    from .data import ImtsInstance, make_batch

    instances = []
    for b in range(n_instances):
        times, values, queries, answers = [], [], [], []
        for c in range(n_channels):
            n = 0 if (b == 0 and c == n_channels - 1) else int(rng.integers(2, 7))
            times.append(np.sort(rng.uniform(0.0, 1.0, n)))
            values.append(rng.normal(size=n))
            k = int(rng.integers(1, 4))
            queries.append(np.sort(rng.uniform(1.0, 1.5, k)))
            answers.append(rng.normal(size=k))
        instances.append(ImtsInstance(times, values, queries, answers))
    return make_batch(instances)


def _jittered_model(config, n_channels, seed, min_margin, min_rms, max_tries=50):
    from .autograd import no_grad, track_conditioning
    from .model import ImtsMixer

    for attempt in range(max_tries):
        rng = np.random.default_rng([seed, attempt])
        model = ImtsMixer(config, n_channels, seed=seed)
        for p in model.parameters().values():
            p.data += rng.normal(scale=0.2, size=p.shape)
        batch = toy_batch(n_channels, rng)
        with no_grad(), track_conditioning() as cond:
            pred = model.predict(batch)
        if min(cond["relu"], default=np.inf) > min_margin and min(cond["rms"], default=np.inf) > min_rms:
            return model, batch, pred, rng
    raise RuntimeError(f"no kink-free test point after {max_tries} draws (seed {seed})")


def check_model(config, n_channels=2, seed=0, h=1e-5, tol=1e-4, corrupt=None, label=None,
                residual_scale=0.03, min_margin=1e-3, min_rms=0.03):
    """Compare backward() against central differences over every parameter.

    Parameters are jittered away from their initialization so biases and
    gains are exercised at non-trivial values. Targets are the model's own
    forecasts plus N(0, residual_scale^2) noise: a small loss keeps the
    roundoff in f(p + h) - f(p - h) well below the 1e-8 relative-error floor,
    which matters for coordinates whose exact gradient is 0 (for example the
    output bias of the weight network, which the softmax cancels).
    Central differences are meaningless across a ReLU kink and inaccurate
    where an RMS normalization sees a near-zero row, so the jitter is redrawn
    until every ReLU input is at least ``min_margin`` from 0 and every
    normalized row has RMS above ``min_rms``.
    ``corrupt(grads)`` may mutate the analytic gradients before comparison
    (harness self-test).
    """
    from .autograd import backward, no_grad
    from .training import masked_mse

    start = time.perf_counter()
    model, batch, pred, rng = _jittered_model(config, n_channels, seed, min_margin, min_rms)
    params = model.parameters()
    batch.y = np.where(batch.q_mask,
                       pred + rng.normal(scale=residual_scale, size=batch.y.shape), 0.0)

    def loss():
        return masked_mse(model(batch), batch.y, batch.q_mask)

    model.zero_grad()
    backward(loss())
    analytic = {name: p.grad.copy() for name, p in params.items()}
    if corrupt is not None:
        corrupt(analytic)
    with no_grad():
        numeric = finite_diff_grad(lambda: loss().item(), {n: p.data for n, p in params.items()}, h)
        err, name, idx = worst_relative_error(analytic, numeric)
        refined = float("nan")
        if not err < tol and name is not None:
            # Diagnostic only: a shrinking error at h/10 points at truncation
            # error of the difference quotient rather than a wrong backward().
            flat = params[name].data.reshape(-1)
            orig = flat[idx]
            flat[idx] = orig + h / 10
            fp = loss().item()
            flat[idx] = orig - h / 10
            fm = loss().item()
            flat[idx] = orig
            refined = float(relative_error(analytic[name].reshape(-1)[idx], (fp - fm) / (h / 5)))
    label = label or f"{config.encoder}/{config.decoder}/L={config.n_blocks}"
    return GradcheckResult(label, err < tol, err, name, idx, model.num_parameters(),
                           time.perf_counter() - start, refined)


def tiny_config(encoder="iscam", decoder="contp", n_blocks=1, **overrides):
    from .config import TrainConfig

    values = dict(dim=8, out_dim=6, n_blocks=n_blocks, encoder=encoder, decoder=decoder,
                  mlp_hidden=8, n_heads=2, time_embed_dim=2)
    values.update(overrides)
    return TrainConfig(**values)


def sweep(seed=0, n_channels=2, blocks=(0, 1, 2), corrupt=None, base=None):
    """Gradient check over every encoder x decoder x block-count combination."""
    from .config import DECODERS, ENCODERS

    results = []
    for encoder in ENCODERS:
        for decoder in DECODERS:
            for n_blocks in blocks:
                if base is None:
                    cfg = tiny_config(encoder, decoder, n_blocks)
                else:
                    cfg = base.replace(encoder=encoder, decoder=decoder, n_blocks=n_blocks)
                results.append(check_model(cfg, n_channels, seed, corrupt=corrupt))
    return results
