"""Static-transition toolkit: stationary distribution, mixing constants,
truncation horizon, and exact tail probabilities of the running extreme.

When every edge of a line shares one transition kernel, the loss sequence is
a time-homogeneous Markov chain. Fast mixing then lets long lines be
truncated: after t_delta steps the running minimum has, with probability at
least 1 - delta, already reached the bottom support level, so the optimal
value of the truncated line is within 2*delta*v_k of the full one (and
2*q*delta*v_k for q lines).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ExplorationInstance, NodeSpec, PandoraError


class NonErgodicError(PandoraError):
    """The kernel has no unique stationary distribution."""


@dataclass(frozen=True)
class MixingProfile:
    """Stationary law plus a certified geometric convergence envelope.

    max_i TV(P^t(i, .), pi) <= C * alpha^t holds for every t up to
    ``horizon_probe`` by construction.
    """

    pi: np.ndarray
    alpha: float
    C: float
    horizon_probe: int


def _is_primitive(P: np.ndarray) -> bool:
    k = P.shape[0]
    reach = (P > 0).astype(np.int8)
    power = reach.copy()
    for _ in range(k * k):
        if power.all():
            return True
        power = ((power @ reach) > 0).astype(np.int8)
    return bool(power.all())


def stationary_distribution(P, tol: float = 1e-12, max_iter: int = 1_000_000) -> np.ndarray:
    """Unique pi with pi P = pi, by power iteration to a 1e-12 residual.

    Requires the chain to be irreducible and aperiodic (some power of P is
    entrywise positive; powers up to k^2 are checked).
    """
    P = np.asarray(P, dtype=float)
    k = P.shape[0]
    if P.shape != (k, k):
        raise ValueError("transition matrix must be square")
    if not _is_primitive(P):
        raise NonErgodicError("no unique stationary distribution")
    pi = np.full(k, 1.0 / k)
    for _ in range(max_iter):
        nxt = pi @ P
        if np.abs(nxt - pi).max() <= tol:
            pi = nxt
            break
        pi = nxt
    residual = np.abs(pi @ P - pi).max()
    if residual > tol:
        raise NonErgodicError(f"power iteration stalled at residual {residual:.2e}")
    return pi / pi.sum()


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


_TV_FLOOR = 1e-11  # below this the measured TV is dominated by the pi residual


def mixing_constants(P, horizon_probe: int | None = None) -> MixingProfile:
    """Fit (C, alpha) with alpha the second-largest eigenvalue modulus and C
    the smallest prefactor (floored at 1) covering all probed horizons.

    The probe stops once the measured TV distance reaches numerical zero;
    the certified range ends there, so noise never inflates C.
    """
    P = np.asarray(P, dtype=float)
    pi = stationary_distribution(P)
    mods = np.sort(np.abs(np.linalg.eigvals(P)))[::-1]
    alpha = float(np.clip(mods[1] if mods.size > 1 else 0.0, 1e-9, 1 - 1e-9))
    if horizon_probe is None:
        horizon_probe = 10 * math.ceil(1.0 / (1.0 - alpha))
    C = 1.0
    certified = 0
    power = np.eye(P.shape[0])
    for t in range(1, horizon_probe + 1):
        power = power @ P
        worst = max(total_variation(row, pi) for row in power)
        if worst <= _TV_FLOOR:
            break
        certified = t
        C = max(C, worst / alpha**t)
    return MixingProfile(pi=pi, alpha=alpha, C=C, horizon_probe=max(certified, 1))


def horizon_for_mass(profile: MixingProfile, mass: float, delta: float) -> int:
    """t_delta = ceil(max(2C / (mass (1 - alpha)), log(delta)/log(1 - mass/2)))."""
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if not mass > 0.0:
        raise ValueError("level-set mass must be positive")
    first = 2.0 * profile.C / (mass * (1.0 - profile.alpha))
    second = math.log(delta) / math.log(1.0 - mass / 2.0)  # ratio of two negative logs
    return math.ceil(max(first, second))


def truncation_horizon(profile: MixingProfile, j: int, delta: float, direction: str = "max") -> int:
    """Spec horizon for level j: mass = sum of stationary weights at levels
    >= v_j (``direction='min'`` uses <= v_j for the minimization dual)."""
    if direction == "max":
        mass = float(profile.pi[j - 1 :].sum())
    elif direction == "min":
        mass = float(profile.pi[:j].sum())
    else:
        raise ValueError("direction must be 'max' or 'min'")
    return horizon_for_mass(profile, mass, delta)


def max_tail_probability(P, root_pmf, j: int, t: int, direction: str = "max") -> float:
    """Exact Pr[max_{s<=t} R_s >= v_j] (or Pr[min_{s<=t} R_s <= v_j]).

    Computed from the survival mass of the chain restricted to the
    complementary levels; O(t k^2).
    """
    if t < 1:
        raise ValueError("t must be >= 1")
    P = np.asarray(P, dtype=float)
    root = np.asarray(root_pmf, dtype=float)
    k = P.shape[0]
    if direction == "max":
        keep = np.arange(k) < j - 1  # survive strictly below v_j
    elif direction == "min":
        keep = np.arange(k) > j - 1  # survive strictly above v_j
    else:
        raise ValueError("direction must be 'max' or 'min'")
    alive = root[keep]
    sub = P[np.ix_(keep, keep)]
    for _ in range(t - 1):
        alive = alive @ sub
    return 1.0 - float(alive.sum())


@dataclass(frozen=True, eq=False)
class TruncationReport:
    t_delta: int
    delta: float
    profile: MixingProfile
    gap_bound: float
    truncated_instance: ExplorationInstance
    truncated_value: float
    full_value: float | None = None

    @property
    def gap(self) -> float | None:
        if self.full_value is None:
            return None
        return self.truncated_value - self.full_value

    def to_dict(self) -> dict:
        return {
            "tDelta": self.t_delta,
            "pi": [float(x) for x in self.profile.pi],
            "alpha": float(self.profile.alpha),
            "C": float(self.profile.C),
            "gapBound": float(self.gap_bound),
            "fullValue": None if self.full_value is None else float(self.full_value),
            "truncatedValue": float(self.truncated_value),
        }


def _shared_kernel(nodes: tuple[NodeSpec, ...]) -> np.ndarray:
    kernels = [node.transition for node in nodes[1:]]
    if not kernels:
        raise PandoraError("requires static transition: line has a single node")
    base = kernels[0]
    for K in kernels[1:]:
        if not np.allclose(K, base, atol=1e-12, rtol=0.0):
            raise PandoraError("requires static transition")
    return np.asarray(base, dtype=float)


def truncated_solve(
    instance: ExplorationInstance,
    delta: float,
    compute_full: bool = True,
) -> TruncationReport:
    """Truncate each line to its first t_delta nodes and solve.

    The minimization dual keeps enough prefix for the running minimum to hit
    the bottom support level w.p. >= 1 - delta; the reported guarantee gap is
    2 delta v_k for a single line and 2 q delta v_k for q lines, in effective
    loss units. With several lines the horizon uses the largest per-line
    bottom-level mass and the most conservative fitted (C, alpha).
    """
    from .line import build_payoff_table
    from .multiline import MultiLinePolicy

    if instance.topology not in ("line", "multiline"):
        raise PandoraError("requires static transition on a line or multiline instance")
    groups = instance.line_groups()
    profiles = []
    for group in groups:
        kernel = _shared_kernel(tuple(group))
        profiles.append(mixing_constants(kernel))
    mass = max(float(p.pi[0]) for p in profiles)
    alpha = max(p.alpha for p in profiles)
    C = max(p.C for p in profiles)
    pooled = MixingProfile(
        pi=profiles[0].pi, alpha=alpha, C=C, horizon_probe=min(p.horizon_probe for p in profiles)
    )
    t_delta = horizon_for_mass(pooled, mass, delta)

    kept_nodes = []
    for group in groups:
        kept_nodes.extend(group[: max(1, t_delta)])
    truncated = ExplorationInstance(
        instance.topology, instance.support, instance.lam, tuple(kept_nodes)
    )
    v_top = float(instance.effective_support()[-1])
    gap_bound = 2.0 * len(groups) * delta * v_top if len(groups) > 1 else 2.0 * delta * v_top

    if instance.topology == "line":
        truncated_value = build_payoff_table(truncated).value
        full_value = build_payoff_table(instance).value if compute_full else None
    else:
        truncated_value = MultiLinePolicy(truncated).expected_value()
        full_value = MultiLinePolicy(instance).expected_value() if compute_full else None
    return TruncationReport(
        t_delta=t_delta,
        delta=delta,
        profile=pooled,
        gap_bound=gap_bound,
        truncated_instance=truncated,
        truncated_value=truncated_value,
        full_value=full_value,
    )
