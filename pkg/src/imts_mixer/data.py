"""IMTS instances, JSONL persistence, normalization, batching and sparsity.

An instance holds, per channel, its observation times and values, its query
times and the answers at those query times. Channels may be empty.
"""
import json
import math
import warnings
from dataclasses import dataclass

import numpy as np


class SchemaError(ValueError):
    pass


def _arr(x):
    return np.asarray(x, dtype=np.float64).reshape(-1)


@dataclass
class ImtsInstance:
    times: list
    values: list
    queries: list
    answers: list

    def __post_init__(self):
        self.times = [_arr(t) for t in self.times]
        self.values = [_arr(v) for v in self.values]
        self.queries = [_arr(q) for q in self.queries]
        self.answers = [_arr(y) for y in self.answers]

    @property
    def n_channels(self):
        return len(self.times)

    @classmethod
    def from_channels(cls, channels, queries, answers):
        """Build from per-channel lists of ``(t, v)`` pairs."""
        times = [[t for t, _ in ch] for ch in channels]
        values = [[v for _, v in ch] for ch in channels]
        return cls(times, values, queries, answers)

    def channels(self):
        return [list(zip(t.tolist(), v.tolist())) for t, v in zip(self.times, self.values)]

    def to_json(self):
        return {
            "channels": [[[t, v] for t, v in ch] for ch in self.channels()],
            "queries": [q.tolist() for q in self.queries],
            "answers": [y.tolist() for y in self.answers],
        }

    def __eq__(self, other):
        if not isinstance(other, ImtsInstance) or self.n_channels != other.n_channels:
            return False
        return all(
            np.array_equal(a, b)
            for mine, theirs in ((self.times, other.times), (self.values, other.values),
                                 (self.queries, other.queries), (self.answers, other.answers))
            for a, b in zip(mine, theirs)
        )


def validate(inst, n_channels=None):
    """All invariant violations of ``inst`` as messages; empty means valid."""
    problems = []
    C = inst.n_channels
    if n_channels is not None and C != n_channels:
        problems.append(f"channel count {C} != expected {n_channels}")
    for name, seq in (("values", inst.values), ("queries", inst.queries), ("answers", inst.answers)):
        if len(seq) != C:
            problems.append(f"{name} has {len(seq)} channels, times has {C}")
    C = min(C, len(inst.values), len(inst.queries), len(inst.answers))
    for c in range(C):
        t, v = inst.times[c], inst.values[c]
        if t.size != v.size:
            problems.append(f"N mismatch channel {c}: {t.size} times vs {v.size} values")
        if inst.queries[c].size != inst.answers[c].size:
            problems.append(
                f"K mismatch channel {c}: {inst.queries[c].size} queries vs {inst.answers[c].size} answers")
        decreasing = np.nonzero(np.diff(t) < 0)[0]
        for i in decreasing:
            problems.append(f"unsorted times channel {c} position {i + 1}")
        for name, arr in (("times", t), ("values", v), ("queries", inst.queries[c]),
                          ("answers", inst.answers[c])):
            bad = np.nonzero(~np.isfinite(arr))[0]
            if bad.size:
                problems.append(f"non-finite {name} channel {c} position {bad[0]}")
    obs = [t for t in inst.times[:C] if t.size]
    qs = [q for q in inst.queries[:C] if q.size]
    if obs and qs:
        last_obs = max(float(t.max()) for t in obs)
        first_q = min(float(q.min()) for q in qs)
        if last_obs > first_q:
            problems.append(f"horizon overlap: observation at t={last_obs} after query at t={first_q}")
    return problems


# --- JSONL -------------------------------------------------------------------

def save_jsonl(dataset, path):
    with open(path, "w", encoding="utf-8") as fh:
        for inst in dataset:
            fh.write(json.dumps(inst.to_json(), separators=(",", ":")))
            fh.write("\n")


def _parse_line(obj, lineno):
    try:
        channels = obj["channels"]
        queries = obj["queries"]
        answers = obj["answers"]
        times = [[float(p[0]) for p in ch] for ch in channels]
        values = [[float(p[1]) for p in ch] for ch in channels]
        if any(len(p) != 2 for ch in channels for p in ch):
            raise ValueError("observations must be [t, v] pairs")
        if not (len(channels) == len(queries) == len(answers)):
            raise ValueError("channels, queries and answers disagree on channel count")
        return ImtsInstance(times, values, [[float(q) for q in qc] for qc in queries],
                            [[float(y) for y in yc] for yc in answers])
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise SchemaError(f"line {lineno}: malformed instance ({exc})") from exc


def load_jsonl(path):
    dataset = []
    n_channels = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            inst = _parse_line(obj, lineno)
            if n_channels is None:
                n_channels = inst.n_channels
            elif inst.n_channels != n_channels:
                raise SchemaError(
                    f"line {lineno}: {inst.n_channels} channels, file started with {n_channels}")
            dataset.append(inst)
    return dataset


# --- splitting and normalization -----------------------------------------------

def split_dataset(dataset, seed, fractions=(0.6, 0.2, 0.2)):
    """Seeded shuffle into train/validation/test lists."""
    n = len(dataset)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    pick = lambda idx: [dataset[i] for i in idx]
    return (pick(order[:n_train]), pick(order[n_train:n_train + n_val]),
            pick(order[n_train + n_val:]))


STD_FLOOR = 1e-8


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    time_scale: float

    def to_json(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "time_scale": self.time_scale}

    @classmethod
    def from_json(cls, obj):
        return cls(np.asarray(obj["mean"], dtype=np.float64),
                   np.asarray(obj["std"], dtype=np.float64), float(obj["time_scale"]))


def fit_normalize(train):
    """Per-channel population mean/std of observed values and a time scale.

    The time scale is the largest time (observation or query) in the split,
    so every training time maps into [0, 1].
    """
    if not train:
        raise ValueError("cannot fit normalization on an empty split")
    C = train[0].n_channels
    mean = np.zeros(C)
    std = np.ones(C)
    for c in range(C):
        vals = np.concatenate([inst.values[c] for inst in train])
        if vals.size == 0:
            warnings.warn(f"channel {c} is never observed in the training split; using mean 0, std 1")
            continue
        mean[c] = vals.mean()
        std[c] = max(vals.std(), STD_FLOOR)
    t_max = 0.0
    for inst in train:
        for arr in inst.times + inst.queries:
            if arr.size:
                t_max = max(t_max, float(np.abs(arr).max()))
    return NormStats(mean, std, t_max if t_max > 0 else 1.0)


def apply_normalize(inst, stats):
    s = stats.time_scale
    return ImtsInstance(
        [t / s for t in inst.times],
        [(v - stats.mean[c]) / stats.std[c] for c, v in enumerate(inst.values)],
        [q / s for q in inst.queries],
        [(y - stats.mean[c]) / stats.std[c] for c, y in enumerate(inst.answers)],
    )


def invert_normalize(inst, stats):
    s = stats.time_scale
    return ImtsInstance(
        [t * s for t in inst.times],
        [v * stats.std[c] + stats.mean[c] for c, v in enumerate(inst.values)],
        [q * s for q in inst.queries],
        [y * stats.std[c] + stats.mean[c] for c, y in enumerate(inst.answers)],
    )


def denormalize_values(y, stats):
    """Map normalized forecasts ``[..., C, K]`` back to original units."""
    return y * stats.std[:, None] + stats.mean[:, None]


# --- batching ------------------------------------------------------------------

@dataclass
class BatchedImts:
    """Zero-padded, masked view of a list of instances.

    ``obs_*`` are ``[B, C, N_max]`` and ``q_t``, ``q_mask``, ``y`` are
    ``[B, C, K_max]``.
    """
    obs_t: np.ndarray
    obs_v: np.ndarray
    obs_mask: np.ndarray
    q_t: np.ndarray
    q_mask: np.ndarray
    y: np.ndarray

    @property
    def batch_size(self):
        return self.obs_t.shape[0]

    @property
    def n_channels(self):
        return self.obs_t.shape[1]


def make_batch(instances, n_max=None, k_max=None):
    """Pack ``instances`` into a :class:`BatchedImts`.

    ``n_max``/``k_max`` may request extra padding beyond the batch maxima.
    """
    if not instances:
        raise ValueError("make_batch needs at least one instance")
    C = instances[0].n_channels
    for i, inst in enumerate(instances):
        if inst.n_channels != C:
            raise SchemaError(f"instance {i} has {inst.n_channels} channels, expected {C}")
    need_n = max((t.size for inst in instances for t in inst.times), default=0)
    need_k = max((q.size for inst in instances for q in inst.queries), default=0)
    n_max = need_n if n_max is None else n_max
    k_max = need_k if k_max is None else k_max
    if n_max < need_n or k_max < need_k:
        raise ValueError(f"padding ({n_max}, {k_max}) smaller than batch maxima ({need_n}, {need_k})")
    B = len(instances)
    obs_t = np.zeros((B, C, n_max))
    obs_v = np.zeros((B, C, n_max))
    obs_mask = np.zeros((B, C, n_max), dtype=bool)
    q_t = np.zeros((B, C, k_max))
    y = np.zeros((B, C, k_max))
    q_mask = np.zeros((B, C, k_max), dtype=bool)
    for b, inst in enumerate(instances):
        for c in range(C):
            n = inst.times[c].size
            obs_t[b, c, :n] = inst.times[c]
            obs_v[b, c, :n] = inst.values[c]
            obs_mask[b, c, :n] = True
            k = inst.queries[c].size
            q_t[b, c, :k] = inst.queries[c]
            y[b, c, :k] = inst.answers[c]
            q_mask[b, c, :k] = True
    return BatchedImts(obs_t, obs_v, obs_mask, q_t, q_mask, y)


def iter_batches(dataset, batch_size, order=None):
    idx = np.arange(len(dataset)) if order is None else order
    for start in range(0, len(idx), batch_size):
        yield make_batch([dataset[i] for i in idx[start:start + batch_size]])


# --- statistics ----------------------------------------------------------------

def density_sparsity(dataset, n_timesteps=None):
    """Observed fraction of (timestamp, channel) slots and its complement.

    ``N_T`` per instance is the number of distinct observation timestamps,
    or ``n_timesteps`` when the sampling grid is known.
    """
    if not dataset:
        raise ValueError("sparsity of an empty dataset is undefined")
    n_obs = 0
    slots = 0
    for inst in dataset:
        n_obs += sum(t.size for t in inst.times)
        if n_timesteps is None:
            nonempty = [t for t in inst.times if t.size]
            n_t = np.unique(np.concatenate(nonempty)).size if nonempty else 0
        else:
            n_t = n_timesteps
        slots += n_t * inst.n_channels
    density = n_obs / slots if slots else math.nan
    return density, 1.0 - density


def sparsity(dataset, n_timesteps=None):
    return density_sparsity(dataset, n_timesteps)[1]
