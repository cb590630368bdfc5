"""Deterministic, embarrassingly parallel replica orchestration.

Replica i always consumes the noise stream keyed by (master_seed, i), so a
ReplicaSampleSet is a pure function of (model, h, eta, m, master_seed, N)
and is byte-identical no matter how many workers execute it or in what
order chunks finish.  Failed replicas are recorded with their error message
rather than dropped.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import AllReplicasFailed, MilsteinMdpError
from .estimator import CSV_COLUMNS, ChainStats, run_chain_stats
from .model import SdeModel
from .quadrature import SteinSolution
from .scheme import ChainConfig, InitialState, NoiseStream, NoiseStreamFactory


def format_float(x) -> str:
    """Shortest round-trip decimal form; stable across runs and workers."""
    return repr(float(x))


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


@dataclass
class ReplicaSampleSet:
    experiment: str
    eta: float
    m: int
    master_seed: int
    n_requested: int
    stats: list  # ChainStats ordered by replica index (successes only)
    failures: list = field(default_factory=list)  # (replica, message)
    wall_time: float = 0.0

    @property
    def n_ok(self) -> int:
        return len(self.stats)

    def values(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.stats], dtype=float)

    def csv_lines(self):
        yield ",".join(CSV_COLUMNS)
        for s in self.stats:
            row = s.csv_row()
            yield ",".join(
                str(v) if isinstance(v, int) else format_float(v) for v in row
            )

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            for line in self.csv_lines():
                fh.write(line + "\n")

    def manifest(self) -> dict:
        return {
            "experiment": self.experiment,
            "eta": self.eta,
            "m": self.m,
            "master_seed": self.master_seed,
            "replicas_requested": self.n_requested,
            "replicas_ok": self.n_ok,
            "failures": [{"replica": r, "error": msg} for r, msg in self.failures],
            "wall_time_s": self.wall_time,
        }


def _run_chunk(model, stein, config, master_seed, indices, scheme):
    if model.has_fast_kernel:
        return _run_chunk_batched(model, stein, config, master_seed, indices, scheme)
    factory = NoiseStreamFactory(master_seed)
    results = []
    for i in indices:
        i = int(i)
        stream = NoiseStream._from_generator(master_seed, i, factory.generator(i))
        try:
            results.append(
                run_chain_stats(model, stein, config, stream, scheme=scheme, replica=i)
            )
        except MilsteinMdpError as exc:
            results.append((i, f"{type(exc).__name__}: {exc}"))
    return results


# noise generation is interpreter-bound (many short RNG calls); serializing
# it behind one lock keeps worker threads from thrashing the GIL while the
# long compiled kernel calls run lock-free and overlap it
_noise_fill_lock = threading.Lock()


def _run_chunk_batched(model, stein, config, master_seed, indices, scheme):
    """Fast path: one compiled, lock-free kernel call per replica block.

    Stream consumption per replica is identical to run_chain_stats (optional
    initial draw, then the m chain normals), so results are bit-equal to the
    per-replica path.
    """
    from . import _kernels
    from .estimator import finalize_stats

    factory = NoiseStreamFactory(master_seed)
    m = config.m
    eta = config.eta
    init = config.initial_state
    n = len(indices)
    xi = np.empty((n, m))
    theta0s = np.empty(n)
    point_value = float(init.value[0]) if init.kind == "point" else 0.0
    gauss = init.kind == "gauss"
    with _noise_fill_lock:
        for row, i in enumerate(indices):
            gen = factory.generator(i)
            if gauss:
                theta0s[row] = init.mean + init.std * gen.standard_normal()
            else:
                theta0s[row] = point_value
            gen.standard_normal(out=xi[row])
    x0, dx, ncell, c_h, c_fp = stein.interp_tables()
    out = np.empty((n, 9))
    _kernels.chain_stats_batch(
        model.kernel_code, model.kernel_param_array(), theta0s, eta, xi,
        scheme == "milstein", x0, dx, ncell, c_h, c_fp, out,
    )
    results = []
    for row, i in enumerate(indices):
        err = int(out[row, 8])
        if err >= 0:
            results.append((int(i), f"NonFiniteEvaluation: chain diverged at step {err}"))
            continue
        try:
            results.append(
                finalize_stats(
                    eta, m, int(i), stein.pi_h,
                    out[row, 0], out[row, 1], out[row, 2], out[row, 3],
                    out[row, 4], out[row, 5], out[row, 6], out[row, 7],
                )
            )
        except MilsteinMdpError as exc:
            results.append((int(i), f"{type(exc).__name__}: {exc}"))
    return results


def run_replicas(
    model: SdeModel,
    stein: SteinSolution,
    eta: float,
    m: Optional[int],
    n_replicas: int,
    master_seed: int,
    workers: int = 1,
    scheme: str = "milstein",
    initial_state: Optional[InitialState] = None,
    experiment: str = "",
) -> ReplicaSampleSet:
    """Compute ChainStats for replicas 0..N-1; workers only affect wall time."""
    if n_replicas < 1:
        raise AllReplicasFailed("n_replicas must be >= 1")
    config = ChainConfig(
        eta=eta, steps=m, initial_state=initial_state or InitialState()
    )
    # warm the interpolation tables once (they are shared read-only)
    stein.interp_tables()
    t0 = time.perf_counter()
    indices = np.arange(n_replicas)
    workers = max(1, int(workers))
    # block size: bounded noise-matrix memory, enough chunks for balance
    per_chunk = max(1, min((4 << 20) // max(config.m, 1), -(-n_replicas // (workers * 4))))
    parts = [indices[i : i + per_chunk] for i in range(0, n_replicas, per_chunk)]
    if workers == 1 or len(parts) == 1:
        chunks = [_run_chunk(model, stein, config, master_seed, p, scheme) for p in parts]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(
                pool.map(
                    lambda part: _run_chunk(model, stein, config, master_seed, part, scheme),
                    parts,
                )
            )
    stats, failures = [], []
    for chunk in chunks:
        for item in chunk:
            if isinstance(item, ChainStats):
                stats.append(item)
            else:
                failures.append(item)
    wall = time.perf_counter() - t0
    if not stats:
        raise AllReplicasFailed(
            f"all {n_replicas} replicas failed; first error: {failures[0][1]}"
        )
    stats.sort(key=lambda s: s.replica)
    failures.sort(key=lambda f: f[0])
    return ReplicaSampleSet(
        experiment=experiment,
        eta=config.eta,
        m=config.m,
        master_seed=int(master_seed),
        n_requested=n_replicas,
        stats=stats,
        failures=failures,
        wall_time=wall,
    )
