"""Time-stepping schemes for the osmosis evolution and the driver that runs them."""

from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
import logging
import math
import threading
import time
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from config import DEFAULT_STOP_TOL
from core import DriftField, OsmosisError, PositiveImage, StencilOperator
from discretize import assemble_split, combine, pr_stability_bound
from solvers import FullFactor, TridiagonalFactor, factor, factor_full, solve

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ("iter", "t", "wall_ms", "mean", "min", "max", "rel_change", "err")


class NonFiniteStateError(OsmosisError, RuntimeError):
    """Raised when the evolving state stops being finite."""

    def __init__(self, message: str, *, iteration: int):
        super().__init__(message)
        self.iteration = iteration


class SchemeConfigError(OsmosisError, ValueError):
    """Raised for an inconsistent SchemeConfig."""


class Scheme(str, Enum):
    EXPLICIT = "explicit"
    IMPLICIT = "implicit"
    PR = "pr"
    AOS = "aos"
    MOS = "mos"
    AMOS = "amos"

    @classmethod
    def parse(cls, name: str) -> "Scheme":
        key = name.strip().lower()
        if key == "implicit-full":
            key = "implicit"
        try:
            return cls(key)
        except ValueError:
            choices = ", ".join(s.value for s in cls)
            raise SchemeConfigError(f"Unknown scheme {name!r}; choose one of {choices}.") from None


@dataclass
class SchemeConfig:
    """Settings of one evolution.

    Exactly one of ``T`` (final time) and ``max_iters`` must be given.
    ``stop_tol`` ends the run early once the relative change of a step drops
    below it; ``target_error`` ends it once the error against
    ``reference_steady_state`` drops below it.
    """

    scheme: Scheme
    tau: float
    T: Optional[float] = None
    max_iters: Optional[int] = None
    stop_tol: Optional[float] = None
    reference_steady_state: Optional[np.ndarray] = None
    target_error: Optional[float] = None
    parallel_branches: bool = False

    def __post_init__(self) -> None:
        if not isinstance(self.scheme, Scheme):
            self.scheme = Scheme.parse(str(self.scheme))
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise SchemeConfigError(f"Time step must be positive and finite, got {self.tau}.")
        if (self.T is None) == (self.max_iters is None):
            raise SchemeConfigError("Set exactly one of T and max_iters.")
        if self.T is not None and not self.T > 0:
            raise SchemeConfigError(f"Final time must be positive, got {self.T}.")
        if self.max_iters is not None and self.max_iters < 1:
            raise SchemeConfigError(f"max_iters must be at least 1, got {self.max_iters}.")
        if self.stop_tol is not None and not self.stop_tol > 0:
            raise SchemeConfigError(f"stop_tol must be positive, got {self.stop_tol}.")
        if self.target_error is not None and self.reference_steady_state is None:
            raise SchemeConfigError("target_error needs a reference_steady_state.")

    @property
    def steps(self) -> int:
        """Number of steps needed to reach ``T`` (or ``max_iters``)."""
        if self.max_iters is not None:
            return self.max_iters
        return max(1, int(math.ceil(self.T / self.tau - 1e-9)))

    @classmethod
    def unattended(cls, scheme: Scheme, tau: float, T: float) -> "SchemeConfig":
        """Fixed final time plus the default relative-change stop."""
        return cls(scheme=scheme, tau=tau, T=T, stop_tol=DEFAULT_STOP_TOL)


class TraceRow(NamedTuple):
    iter: int
    t: float
    wall_ms: float
    mean: float
    min: float
    max: float
    rel_change: float
    err: Optional[float]


@dataclass
class DiagnosticsTrace:
    """Per-iteration record of an evolution."""

    rows: List[TraceRow] = field(default_factory=list)
    solver_calls: int = 0
    stop_reason: str = ""

    def append(self, row: TraceRow) -> None:
        if self.rows and (row.iter <= self.rows[-1].iter or row.t < self.rows[-1].t):
            raise ValueError("Trace rows must be appended in iteration order.")
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def last(self) -> Optional[TraceRow]:
        return self.rows[-1] if self.rows else None

    @property
    def total_wall_ms(self) -> float:
        return float(sum(row.wall_ms for row in self.rows))


class FactorCache:
    """Factors used by one evolution, built on first use and reused afterwards.

    Also counts the tridiagonal line-solve passes and the full penta-diagonal
    solves issued through it.
    """

    def __init__(self) -> None:
        self._tridiagonal: Dict[Tuple[int, float], Tuple[StencilOperator, TridiagonalFactor]] = {}
        self._full: Dict[Tuple[int, float], Tuple[StencilOperator, FullFactor]] = {}
        self._lock = threading.Lock()
        self.line_solves = 0
        self.full_solves = 0

    @property
    def solver_calls(self) -> int:
        return self.line_solves + self.full_solves

    def tridiagonal(self, op: StencilOperator, scale: float) -> TridiagonalFactor:
        key = (id(op), scale)
        with self._lock:
            entry = self._tridiagonal.get(key)
        if entry is None:
            # the operator is stored with its factor so its id stays unique
            entry = (op, factor(op, scale))
            with self._lock:
                self._tridiagonal[key] = entry
        return entry[1]

    def full(self, op: StencilOperator, scale: float) -> FullFactor:
        key = (id(op), scale)
        entry = self._full.get(key)
        if entry is None:
            entry = (op, factor_full(op, scale))
            self._full[key] = entry
        return entry[1]

    def solve(self, op: StencilOperator, scale: float, rhs: np.ndarray) -> np.ndarray:
        """Return ``(I - scale * op)^-1 rhs``."""
        x = solve(self.tridiagonal(op, scale), rhs)
        with self._lock:
            self.line_solves += 1
        return x

    def solve_full(self, op: StencilOperator, scale: float, rhs: np.ndarray) -> np.ndarray:
        x = self.full(op, scale).solve(rhs)
        self.full_solves += 1
        return x


def _branches(executor: Optional[Executor], first, second) -> Tuple[np.ndarray, np.ndarray]:
    if executor is None:
        return first(), second()
    f1 = executor.submit(first)
    f2 = executor.submit(second)
    return f1.result(), f2.result()


def step_explicit(u: np.ndarray, a: StencilOperator, tau: float) -> np.ndarray:
    """Forward Euler: ``u + tau A u``."""
    return u + tau * a.apply(u)


def step_implicit_full(
    u: np.ndarray, a: StencilOperator, tau: float, cache: Optional[FactorCache] = None
) -> np.ndarray:
    """Backward Euler with the full operator: solve ``(I - tau A) u' = u``."""
    cache = cache or FactorCache()
    return cache.solve_full(a, tau, u)


def step_pr(
    u: np.ndarray, a1: StencilOperator, a2: StencilOperator, tau: float, cache: Optional[FactorCache] = None
) -> np.ndarray:
    """Peaceman-Rachford: alternate explicit and implicit half steps in each direction."""
    cache = cache or FactorCache()
    half = tau / 2.0
    u_half = cache.solve(a2, half, u + half * a1.apply(u))
    return cache.solve(a1, half, u_half + half * a2.apply(u_half))


def step_aos(
    u: np.ndarray,
    a1: StencilOperator,
    a2: StencilOperator,
    tau: float,
    cache: Optional[FactorCache] = None,
    executor: Optional[Executor] = None,
) -> np.ndarray:
    """Additive splitting: ``1/2 [(I - 2 tau A1)^-1 + (I - 2 tau A2)^-1] u``."""
    cache = cache or FactorCache()
    x1, x2 = _branches(
        executor,
        lambda: cache.solve(a1, 2.0 * tau, u),
        lambda: cache.solve(a2, 2.0 * tau, u),
    )
    return 0.5 * (x1 + x2)


def step_mos(
    u: np.ndarray, a1: StencilOperator, a2: StencilOperator, tau: float, cache: Optional[FactorCache] = None
) -> np.ndarray:
    """Multiplicative splitting: ``(I - tau A1)^-1 (I - tau A2)^-1 u`` (A2 solve first)."""
    cache = cache or FactorCache()
    return cache.solve(a1, tau, cache.solve(a2, tau, u))


def step_amos(
    u: np.ndarray,
    a1: StencilOperator,
    a2: StencilOperator,
    tau: float,
    cache: Optional[FactorCache] = None,
    executor: Optional[Executor] = None,
) -> np.ndarray:
    """Symmetrised splitting: the mean of both MOS orders."""
    cache = cache or FactorCache()
    x21, x12 = _branches(
        executor,
        lambda: cache.solve(a2, tau, cache.solve(a1, tau, u)),
        lambda: cache.solve(a1, tau, cache.solve(a2, tau, u)),
    )
    return 0.5 * (x21 + x12)


def relative_error(u: np.ndarray, w: np.ndarray) -> float:
    """Relative L2 distance ``||u - w|| / ||w||`` (the energy error)."""
    return float(np.linalg.norm(u - w) / np.linalg.norm(w))


def evolve(
    f: PositiveImage, d: DriftField, cfg: SchemeConfig, cache: Optional[FactorCache] = None
) -> Tuple[np.ndarray, DiagnosticsTrace]:
    """
    Run the osmosis evolution from ``u0 = f`` with the scheme chosen in ``cfg``.

    Args:
        f: Initial image.
        d: Drift field on the same grid as ``f``.
        cfg: Scheme, time step and stopping rules.
        cache: Optional factor cache; pass one to read the solve counters afterwards.

    Returns:
        The final state and the per-iteration trace.

    Raises:
        NonFiniteStateError: When the state stops being finite (explicit scheme above its stability limit).
        ZeroPivotError: When a line system cannot be factored.
    """
    d.check_grid(f.width, f.height)
    reference = cfg.reference_steady_state
    if reference is not None and reference.shape != f.shape:
        raise SchemeConfigError(f"Reference steady state has shape {reference.shape}, image has {f.shape}.")

    a1, a2 = assemble_split(d)
    a_full = combine(a1, a2) if cfg.scheme in (Scheme.EXPLICIT, Scheme.IMPLICIT) else None
    if cfg.scheme is Scheme.PR:
        bound = pr_stability_bound(a1, a2)
        if cfg.tau >= bound:
            logger.warning(
                "P-R time step %g is not below the bound %g; AVG and positivity are not guaranteed.", cfg.tau, bound
            )

    cache = cache if cache is not None else FactorCache()
    executor = ThreadPoolExecutor(max_workers=2) if cfg.parallel_branches else None
    tau = cfg.tau

    def advance(state: np.ndarray) -> np.ndarray:
        if cfg.scheme is Scheme.EXPLICIT:
            return step_explicit(state, a_full, tau)
        if cfg.scheme is Scheme.IMPLICIT:
            return step_implicit_full(state, a_full, tau, cache)
        if cfg.scheme is Scheme.PR:
            return step_pr(state, a1, a2, tau, cache)
        if cfg.scheme is Scheme.AOS:
            return step_aos(state, a1, a2, tau, cache, executor)
        if cfg.scheme is Scheme.MOS:
            return step_mos(state, a1, a2, tau, cache)
        return step_amos(state, a1, a2, tau, cache, executor)

    trace = DiagnosticsTrace()
    u = np.array(f.data, dtype=np.float64)
    steps = cfg.steps
    logger.info(
        "Evolving %dx%d image with %s, tau=%g, up to %d step(s).", f.width, f.height, cfg.scheme.value, tau, steps
    )
    trace.stop_reason = "final time" if cfg.T is not None else "max_iters"
    started = time.perf_counter()
    try:
        for k in range(1, steps + 1):
            tick = time.perf_counter()
            u_next = advance(u)
            wall_ms = (time.perf_counter() - tick) * 1e3

            with np.errstate(over="ignore", invalid="ignore"):
                finite = bool(np.all(np.isfinite(u_next)))
                if finite:
                    norm_u = np.linalg.norm(u)
                    rel_change = float(np.linalg.norm(u_next - u) / norm_u) if norm_u > 0 else 0.0
                    mean = float(u_next.mean())
                    # norms and sums of a huge but finite state can still overflow
                    finite = math.isfinite(rel_change) and math.isfinite(mean)
            if not finite:
                raise NonFiniteStateError(
                    f"State became non-finite at iteration {k} ({cfg.scheme.value}, tau={tau:g}).", iteration=k
                )
            err = relative_error(u_next, reference) if reference is not None else None
            u = u_next

            row = TraceRow(k, k * tau, wall_ms, mean, float(u.min()), float(u.max()), rel_change, err)
            trace.append(row)
            logger.debug("iter %d t=%g rel_change=%.3e err=%s", k, row.t, rel_change, err)

            if cfg.stop_tol is not None and rel_change < cfg.stop_tol:
                trace.stop_reason = "stop_tol"
                break
            if cfg.target_error is not None and err is not None and err <= cfg.target_error:
                trace.stop_reason = "target_error"
                break
    finally:
        if executor is not None:
            executor.shutdown(wait=True)

    trace.solver_calls = cache.solver_calls
    logger.info(
        "Stopped after %d step(s) (%s) in %.1f ms; mean %.6g -> %.6g.",
        len(trace),
        trace.stop_reason,
        (time.perf_counter() - started) * 1e3,
        f.mean(),
        float(u.mean()),
    )
    return u, trace
