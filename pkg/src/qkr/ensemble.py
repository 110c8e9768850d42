"""Disorder ensembles and the measured diffusion curve.

Each ensemble member is an independent realization of (quasimomentum q,
drive phase alpha, initial spinor angles), drawn from its own counter-based
random stream: member i of a run seeded with master_seed uses a PCG64
generator keyed by a SplitMix64 mix of (master_seed, i).  Draws therefore
depend only on (master_seed, i), never on execution order, so any worker
layout produces identical members.

run_ensemble evolves members in fixed consecutive blocks (batched in one
array; bitwise equal to solo evolution) and reduces member observables
with a fixed pairwise summation tree over the member index.  Results are
bit-for-bit reproducible for a given master_seed regardless of worker
count or block scheduling.

sweep runs a (u, size) grid of such ensembles, persisting every finished
curve immediately so an interrupted sweep resumes where it stopped.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .evolve import (
    EDGE_TOL,
    NormDriftError,
    _check_record,
    _Engine,
    default_record_times,
    init_state,
)
from .model import TWO_PI, ModelParams

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def mix_seed(master_seed: int, index: int) -> int:
    """SplitMix64 finalizer on master_seed advanced index+1 steps.

    Collapsing (seed, index) to one well-mixed 64-bit key keeps member
    streams decorrelated even for adjacent indices or adjacent seeds.
    """
    z = (master_seed + (index + 1) * _GAMMA) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def member_rng(master_seed: int, index: int) -> np.random.Generator:
    """The random stream owned by one ensemble member."""
    return np.random.Generator(np.random.PCG64(mix_seed(master_seed, index)))


@dataclasses.dataclass(frozen=True)
class EnsembleSpec:
    """What to average over: member count, seed and initial-state family."""

    n_samples: int
    master_seed: int
    init_kind: str = "delta"
    n0: int = 0
    sigma: float = 1.0
    record_times: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.n_samples < 2:
            raise ValueError(f"n_samples must be >= 2, got {self.n_samples}")
        if self.init_kind not in ("delta", "gaussian"):
            raise ValueError(f"unknown init kind {self.init_kind!r}")
        if not 0 <= self.master_seed <= _MASK64:
            raise ValueError("master_seed must fit in 64 bits")


@dataclasses.dataclass(frozen=True)
class MemberDraw:
    """Random data of one member: q, alpha and initial spinor angles."""

    q: float
    alpha: float
    phi: float | np.ndarray
    theta: float | np.ndarray


def sample_member(spec: EnsembleSpec, index: int, n_sites: int) -> MemberDraw:
    """Draw member `index` of the ensemble; fixed draw order q, alpha, angles."""
    rng = member_rng(spec.master_seed, index)
    q = rng.random()
    alpha = TWO_PI * rng.random()
    if spec.init_kind == "delta":
        phi = TWO_PI * rng.random()
        theta = float(np.arccos(2.0 * rng.random() - 1.0))
        return MemberDraw(q, alpha, phi, theta)
    phi = TWO_PI * rng.random(n_sites)
    theta = np.arccos(2.0 * rng.random(n_sites) - 1.0)
    return MemberDraw(q, alpha, phi, theta)


def build_initial_state(draw: MemberDraw, spec: EnsembleSpec, n_trunc: int):
    """Initial state of a member from its draw."""
    return init_state(
        spec.init_kind, n_trunc, draw.phi, draw.theta, n0=spec.n0, sigma=spec.sigma
    )


def pairwise_sum(values: np.ndarray) -> np.ndarray:
    """Sum over axis 0 by a fixed adjacent-pair tree.

    The tree depends only on the length, so partial sums combine in the
    same order no matter how the rows were produced; an odd row at any
    level is carried to the next one unchanged.
    """
    work = np.asarray(values, dtype=float)
    if work.shape[0] == 0:
        raise ValueError("cannot reduce an empty axis")
    work = work.copy()
    m = work.shape[0]
    while m > 1:
        k = m // 2
        paired = work[0 : 2 * k : 2] + work[1 : 2 * k : 2]
        if m % 2:
            paired = np.concatenate([paired, work[2 * k : 2 * k + 1]], axis=0)
        work = paired
        m = work.shape[0]
    return work[0]


class EnsembleError(RuntimeError):
    """One or more members failed; carries (member, step, drift) triples."""

    def __init__(self, failures):
        self.failures = list(failures)
        head = ", ".join(
            f"member {m} step {s} drift {d:.2e}" for m, s, d in self.failures[:3]
        )
        more = "" if len(self.failures) <= 3 else f" (+{len(self.failures) - 3} more)"
        super().__init__(f"{len(self.failures)} member(s) failed: {head}{more}")


@dataclasses.dataclass
class DiffusionCurve:
    """Ensemble-averaged spread at the recorded times of one (u, size) run.

    d_mean is delta_sq_mean / t, the running diffusion coefficient whose
    large-t value distinguishes localized (-> 0), critical (-> constant)
    and delocalized (growing) dynamics.  e_mean = h_e^2 * delta_sq_mean
    is the kinetic-energy form of the same data.
    """

    params: ModelParams
    t_max: int
    times: np.ndarray
    delta_sq_mean: np.ndarray
    d_mean: np.ndarray
    d_stderr: np.ndarray
    e_mean: np.ndarray
    n_samples: int
    master_seed: int
    init_kind: str
    max_edge_weight: float
    truncation_flagged: bool

    @property
    def u(self) -> float:
        return self.params.u

    @property
    def final_d(self) -> float:
        return float(self.d_mean[-1])


def _run_block(params, spec, t_max, record, i0, i1, zero_kick=False):
    """Evolve members i0..i1-1 as one batch; fall back to solo runs on failure.

    Returns (delta_sq, edge, failures) with arrays of shape (i1-i0, times).
    Solo reruns reproduce the batch bitwise, so the fallback only serves
    to attribute the failure to specific members.
    """
    rec = np.asarray(record, dtype=np.int64)
    draws = [sample_member(spec, i, params.n_sites) for i in range(i0, i1)]
    q = np.array([d.q for d in draws])
    alpha = np.array([d.alpha for d in draws])
    psi = np.stack(
        [build_initial_state(d, spec, params.n_trunc).amplitudes for d in draws]
    )
    eng = _Engine(params, q, alpha, zero_kick=zero_kick)
    try:
        d2, edge, _ = eng.run(psi, t_max, rec, member_offset=i0)
        return d2, edge, []
    except NormDriftError:
        pass
    d2 = np.full((len(draws), len(rec)), np.nan)
    edge = np.full_like(d2, np.nan)
    failures = []
    for k, draw in enumerate(draws):
        eng1 = _Engine(
            params, np.array([draw.q]), np.array([draw.alpha]), zero_kick=zero_kick
        )
        psi1 = build_initial_state(draw, spec, params.n_trunc).amplitudes[None]
        try:
            a, e, _ = eng1.run(psi1, t_max, rec, member_offset=i0 + k)
            d2[k] = a[0]
            edge[k] = e[0]
        except NormDriftError as err:
            failures.append((err.member, err.step, err.drift))
    return d2, edge, failures


# Members per batch.  Fixed by construction, never derived from the worker
# count, so the block layout (and with it every partial result) is a pure
# function of (spec, params).
BLOCK_SIZE = 64


def run_ensemble(
    params: ModelParams,
    spec: EnsembleSpec,
    t_max: int | None = None,
    *,
    workers: int = 1,
    pool: ProcessPoolExecutor | None = None,
    zero_kick: bool = False,
    block_size: int = BLOCK_SIZE,
) -> DiffusionCurve:
    """Evolve the full ensemble and reduce it to a DiffusionCurve.

    Parameters
    ----------
    params : ModelParams
    spec : EnsembleSpec
    t_max : int, optional
        Number of periods; default n_trunc^2 / 4, which keeps the ratio
        t / size^2 fixed across sizes as finite-size scaling requires.
    workers : int
        Process count when no pool is supplied; 1 runs inline.
    pool : ProcessPoolExecutor, optional
        Externally owned pool (takes precedence over workers).
    zero_kick : bool
        Replace the kick by the identity (free rotor); test hook.
    block_size : int
        Members per batch; affects speed and memory only, not results.

    Raises
    ------
    EnsembleError
        If any member aborted; no curve is produced in that case.
    """
    if t_max is None:
        t_max = params.n_trunc * params.n_trunc // 4
    if block_size < 1:
        raise ValueError(f"block_size must be >= 1, got {block_size}")
    rec = _check_record(
        default_record_times(t_max)
        if spec.record_times is None
        else spec.record_times,
        t_max,
    )
    if len(rec) == 0:
        raise ValueError("ensemble needs at least one record time")
    n = spec.n_samples
    rec_t = tuple(int(s) for s in rec)
    blocks = [(i, min(i + block_size, n)) for i in range(0, n, block_size)]
    if pool is not None:
        futures = [
            pool.submit(_run_block, params, spec, t_max, rec_t, i0, i1, zero_kick)
            for i0, i1 in blocks
        ]
        parts = [f.result() for f in futures]
    elif workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as own:
            futures = [
                own.submit(_run_block, params, spec, t_max, rec_t, i0, i1, zero_kick)
                for i0, i1 in blocks
            ]
            parts = [f.result() for f in futures]
    else:
        parts = [
            _run_block(params, spec, t_max, rec_t, i0, i1, zero_kick)
            for i0, i1 in blocks
        ]
    failures = [f for p in parts for f in p[2]]
    if failures:
        raise EnsembleError(failures)
    d2_all = np.concatenate([p[0] for p in parts], axis=0)
    edge_all = np.concatenate([p[1] for p in parts], axis=0)

    t = rec.astype(float)
    delta_sq_mean = pairwise_sum(d2_all) / n
    d_mean = delta_sq_mean / t
    d_members = d2_all / t[None, :]
    resid = d_members - d_mean[None, :]
    var = pairwise_sum(resid * resid) / (n - 1)
    d_stderr = np.sqrt(var / n)
    e_mean = params.h_e * params.h_e * delta_sq_mean
    max_edge = float(edge_all.max())
    return DiffusionCurve(
        params=params,
        t_max=int(t_max),
        times=rec,
        delta_sq_mean=delta_sq_mean,
        d_mean=d_mean,
        d_stderr=d_stderr,
        e_mean=e_mean,
        n_samples=n,
        master_seed=spec.master_seed,
        init_kind=spec.init_kind,
        max_edge_weight=max_edge,
        truncation_flagged=bool(max_edge > EDGE_TOL),
    )


@dataclasses.dataclass
class SweepResult:
    """Curves of one (u, size) grid plus bookkeeping."""

    curves: list
    n_loaded: int
    failures: dict


def sweep(
    params_base: ModelParams,
    u_values,
    sizes,
    spec: EnsembleSpec,
    *,
    t_steps: int | None = None,
    out_dir=None,
    workers: int = 1,
    pool: ProcessPoolExecutor | None = None,
    progress=None,
) -> SweepResult:
    """Run ensembles over a (u, size) grid, resuming from persisted curves.

    Parameters
    ----------
    params_base : ModelParams
        Template; h_e and n_trunc are replaced per grid point.
    u_values, sizes : sequences
        Inverse Planck constants and momentum cutoffs to cover.
    spec : EnsembleSpec
        Shared by every grid point.
    t_steps : int, optional
        Fixed period count; default is the per-size rule n_trunc^2 / 4.
    out_dir : path, optional
        Where finished curves are persisted (one JSON per grid point).
        Existing files with matching provenance are loaded, not rerun.
    progress : callable, optional
        Called with one status string per finished grid point.

    Returns
    -------
    SweepResult
        Curves in (size-major, u-minor) completion order; failures maps
        (u, size) to the member failure list of that grid point.
    """
    from . import storage  # local import: storage depends on this module

    curves = []
    failures = {}
    n_loaded = 0
    for n_trunc in sorted(int(s) for s in sizes):
        for u in u_values:
            u = float(u)
            params = dataclasses.replace(params_base, h_e=1.0 / u, n_trunc=n_trunc)
            t_max = t_steps if t_steps is not None else n_trunc * n_trunc // 4
            path = None
            if out_dir is not None:
                path = storage.curve_path(out_dir, u, n_trunc)
                if path.exists():
                    curve = storage.load_matching_curve(path, params, spec, t_max)
                    if curve is not None:
                        curves.append(curve)
                        n_loaded += 1
                        if progress:
                            progress(f"loaded u={u:g} size={n_trunc} from {path.name}")
                        continue
            try:
                curve = run_ensemble(
                    params, spec, t_max, workers=workers, pool=pool
                )
            except EnsembleError as err:
                failures[(u, n_trunc)] = err.failures
                if progress:
                    progress(f"FAILED u={u:g} size={n_trunc}: {err}")
                continue
            curves.append(curve)
            if path is not None:
                storage.save_curve(path, curve, spec)
            if progress:
                progress(
                    f"done u={u:g} size={n_trunc} "
                    f"D({curve.t_max})={curve.final_d:.4f}"
                )
    return SweepResult(curves=curves, n_loaded=n_loaded, failures=failures)
