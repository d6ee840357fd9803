"""Semi-synthetic IMTS datasets from randomized ODE systems.

Each instance integrates a small ODE with freshly sampled constants and
initial state on a regular grid, adds observation noise, keeps every
(grid point, channel) entry independently with probability ``1 - drop``,
and splits the grid into an observation window and a forecasting horizon.
Answers are the noiseless trajectory values.
"""
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import ImtsInstance, validate


class BlowUpError(FloatingPointError):
    pass


class GenerationError(RuntimeError):
    pass


def rk4_integrate(f, x0, T, n_steps):
    """Classical fixed-step RK4 of ``x' = f(x)`` on ``[0, T]``.

    Returns the ``[n_steps + 1, dim]`` trajectory including ``x0``.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    x = np.array(x0, dtype=np.float64).reshape(-1)
    h = T / n_steps
    traj = np.empty((n_steps + 1, x.size))
    traj[0] = x
    for k in range(n_steps):
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise BlowUpError(f"non-finite state at step {k + 1}")
        traj[k + 1] = x
    return traj


# --- systems -------------------------------------------------------------------

def damped_oscillator(omega, zeta):
    def f(x):
        pos, vel = x
        return np.array([vel, -omega * omega * pos - 2.0 * zeta * omega * vel])
    return f


def lotka_volterra(alpha, beta, delta, gamma):
    def f(x):
        prey, pred = x
        return np.array([alpha * prey - beta * prey * pred, delta * prey * pred - gamma * pred])
    return f


@dataclass
class OdeSpec:
    system: str
    param_ranges: dict
    state_ranges: list
    T: float
    n_steps: int = 100
    max_magnitude: float = 1e3

    @property
    def n_channels(self):
        return len(self.state_ranges)

    def build(self, params):
        if self.system == "damped_oscillator":
            return damped_oscillator(params["omega"], params["zeta"])
        if self.system == "lotka_volterra":
            return lotka_volterra(params["alpha"], params["beta"], params["delta"], params["gamma"])
        raise ValueError(f"unknown system {self.system!r}")


SYSTEMS = {
    "damped_oscillator": OdeSpec(
        "damped_oscillator",
        {"omega": (0.5, 1.5), "zeta": (0.0, 0.2)},
        [(-1.0, 1.0), (-1.0, 1.0)],
        T=20.0,
    ),
    "lotka_volterra": OdeSpec(
        "lotka_volterra",
        {"alpha": (0.8, 1.2), "beta": (0.8, 1.2), "delta": (0.8, 1.2), "gamma": (0.8, 1.2)},
        [(0.5, 1.5), (0.5, 1.5)],
        T=15.0,
    ),
}


def get_system(name):
    try:
        return SYSTEMS[name]
    except KeyError:
        raise ValueError(f"unknown system {name!r}; choose from {sorted(SYSTEMS)}") from None


@dataclass
class GenConfig:
    n_instances: int = 2000
    drop: float = 0.8
    obs_fraction: float = 0.5
    sigma: float = 0.05
    seed: int = 0
    max_retries: int = 100
    notes: dict = field(default_factory=lambda: {
        "noise": "Gaussian, sigma relative to each channel's trajectory std (stand-in)",
        "split": "grid points with t <= obs_fraction * T observe, later ones are queries (stand-in)",
    })

    def __post_init__(self):
        if not 0.0 < self.drop < 1.0:
            raise ValueError(f"drop must lie in (0, 1), got {self.drop}")
        if not 0.0 < self.obs_fraction < 1.0:
            raise ValueError(f"obs_fraction must lie in (0, 1), got {self.obs_fraction}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")
        if self.n_instances < 0:
            raise ValueError("n_instances must be non-negative")


def _sample(rng, spec):
    params = {k: rng.uniform(lo, hi) for k, (lo, hi) in spec.param_ranges.items()}
    x0 = np.array([rng.uniform(lo, hi) for lo, hi in spec.state_ranges])
    return params, x0


def generate_instance(spec, cfg, index):
    """One instance from its own seed substream ``(cfg.seed, index)``."""
    rng = np.random.default_rng([cfg.seed, index])
    grid = np.linspace(0.0, spec.T, spec.n_steps + 1)
    is_obs = grid <= cfg.obs_fraction * spec.T
    for _ in range(cfg.max_retries):
        params, x0 = _sample(rng, spec)
        try:
            traj = rk4_integrate(spec.build(params), x0, spec.T, spec.n_steps)
        except BlowUpError:
            continue
        if np.abs(traj).max() > spec.max_magnitude:
            continue
        scale = traj.std(axis=0)
        noisy = traj + rng.normal(size=traj.shape) * (cfg.sigma * scale)
        keep = rng.random(traj.shape) >= cfg.drop
        q_keep = keep & ~is_obs[:, None]
        if not q_keep.any(axis=0).all():
            continue
        o_keep = keep & is_obs[:, None]
        C = traj.shape[1]
        return ImtsInstance(
            [grid[o_keep[:, c]] for c in range(C)],
            [noisy[o_keep[:, c], c] for c in range(C)],
            [grid[q_keep[:, c]] for c in range(C)],
            [traj[q_keep[:, c], c] for c in range(C)],
        )
    raise GenerationError(
        f"instance {index}: no valid draw in {cfg.max_retries} tries "
        f"(system={spec.system}, drop={cfg.drop}, obs_fraction={cfg.obs_fraction})")


def generate_dataset(spec, cfg):
    if isinstance(spec, str):
        spec = get_system(spec)
    data = [generate_instance(spec, cfg, i) for i in range(cfg.n_instances)]
    for i, inst in enumerate(data):
        problems = validate(inst, spec.n_channels)
        if problems:
            raise GenerationError(f"instance {i} invalid: {problems}")
    return data


def keep_rate(dataset, spec):
    """Fraction of grid entries (observation window and horizon) that were kept."""
    kept = sum(t.size + q.size for inst in dataset for t, q in zip(inst.times, inst.queries))
    return kept / (len(dataset) * (spec.n_steps + 1) * spec.n_channels)


def manifest(spec, cfg):
    return {"system": asdict(spec), "config": asdict(cfg)}
