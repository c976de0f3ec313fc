"""American exchange option with two exercise times.

The holder picks one time for each leg and receives ``(X1(tau1) - X2(tau2))+``.
With the other leg frozen, each leg's problem is a zero-rate European option,
so the new reward is

    phi(s, x1, x2) = max(x2 * C1(s, x1 / x2), x1 * P2(s, x2 / x1))

and the contract is an American option on ``phi``, priced here by backward
induction on an independent two-asset CRR lattice.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc

from . import _kernels
from .snell import EPS_EQ

SQRT2 = math.sqrt(2.0)
MC_CHUNK = 4096


def normal_cdf(z):
    """Standard normal distribution function.

    The upper half is computed from ``erfc`` and the lower half as its exact
    complement, so ``N(-z) == 1 - N(z)`` holds bit for bit.
    """
    z = np.asarray(z, dtype=np.float64)
    upper = 0.5 * erfc(-np.abs(z) / SQRT2)
    out = np.where(z >= 0.0, upper, 1.0 - upper)
    return out if out.ndim else float(out)


def _d_pm(z, sigma, tau):
    sd = sigma * np.sqrt(tau)
    lz = np.log(z)
    return (lz + 0.5 * sd * sd) / sd, (lz - 0.5 * sd * sd) / sd


def _check_moneyness(z):
    z = np.asarray(z, dtype=np.float64)
    if np.any(~(z > 0.0)):
        raise ValueError("moneyness must be positive")
    return z


def bs_call_C1(s, z, sigma1: float, maturity: float):
    """Zero-rate unit-strike call on ``X1`` started at ``z`` at time ``s``."""
    z = _check_moneyness(z)
    tau = maturity - np.asarray(s, dtype=np.float64)
    if np.any(tau < 0.0):
        raise ValueError("time after maturity")
    with np.errstate(divide="ignore", invalid="ignore"):
        dp, dm = _d_pm(z, sigma1, np.maximum(tau, 1e-300))
        live = z * normal_cdf(dp) - normal_cdf(dm)
    out = np.where(tau > 0.0, live, np.maximum(z - 1.0, 0.0))
    return out if out.ndim else float(out)


def bs_put_P2(t, z, sigma2: float, maturity: float):
    """Zero-rate unit-strike put on ``X2`` started at ``z`` at time ``t``."""
    z = _check_moneyness(z)
    tau = maturity - np.asarray(t, dtype=np.float64)
    if np.any(tau < 0.0):
        raise ValueError("time after maturity")
    with np.errstate(divide="ignore", invalid="ignore"):
        dp, dm = _d_pm(z, sigma2, np.maximum(tau, 1e-300))
        live = normal_cdf(-dm) - z * normal_cdf(-dp)
    out = np.where(tau > 0.0, live, np.maximum(1.0 - z, 0.0))
    return out if out.ndim else float(out)


def margrabe(x1, x2, sigma1: float, sigma2: float, maturity: float, s: float = 0.0):
    """European exchange option ``E[(X1_T - X2_T)+]`` for independent assets."""
    sigma = math.hypot(sigma1, sigma2)
    return np.asarray(x2) * bs_call_C1(s, np.asarray(x1) / np.asarray(x2), sigma, maturity)


@dataclass(frozen=True)
class MarketParams:
    x1: float
    x2: float
    sigma1: float
    sigma2: float
    maturity: float
    r: float = 0.0

    def __post_init__(self):
        for name in ("x1", "x2", "sigma1", "sigma2", "maturity"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0.0):
                raise ValueError(f"{name} must be positive, got {val!r}")
        if self.r != 0.0:
            raise ValueError("only a zero interest rate is supported")

    def scaled(self, lam: float) -> "MarketParams":
        return MarketParams(lam * self.x1, lam * self.x2, self.sigma1, self.sigma2, self.maturity)


def _branches(s, x1, x2, params: MarketParams):
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if np.any(~(x1 > 0.0)) or np.any(~(x2 > 0.0)):
        raise ValueError("prices must be positive")
    first = x2 * bs_call_C1(s, x1 / x2, params.sigma1, params.maturity)
    second = x1 * bs_put_P2(s, x2 / x1, params.sigma2, params.maturity)
    return first, second


def new_reward_phi(s, x1, x2, params: MarketParams):
    """``max(x2 C1(s, x1/x2), x1 P2(s, x2/x1))``."""
    first, second = _branches(s, x1, x2, params)
    out = np.maximum(first, second)
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class ProductLattice:
    """Independent CRR trees for both assets on a shared time grid."""

    params: MarketParams
    steps: int
    dt: float = field(init=False)
    u1: float = field(init=False)
    u2: float = field(init=False)
    q1: float = field(init=False)
    q2: float = field(init=False)

    def __post_init__(self):
        if int(self.steps) < 1:
            raise ValueError("lattice needs at least one step")
        dt = self.params.maturity / self.steps
        u1 = math.exp(self.params.sigma1 * math.sqrt(dt))
        u2 = math.exp(self.params.sigma2 * math.sqrt(dt))
        q1 = (1.0 - 1.0 / u1) / (u1 - 1.0 / u1)
        q2 = (1.0 - 1.0 / u2) / (u2 - 1.0 / u2)
        if not (0.0 < q1 < 1.0 and 0.0 < q2 < 1.0):
            raise ArithmeticError("lattice probabilities outside (0, 1)")
        for name, val in (("dt", dt), ("u1", u1), ("u2", u2), ("q1", q1), ("q2", q2)):
            object.__setattr__(self, name, val)

    @property
    def d1(self) -> float:
        return 1.0 / self.u1

    @property
    def d2(self) -> float:
        return 1.0 / self.u2

    def time(self, k: int) -> float:
        return self.params.maturity if k == self.steps else k * self.dt

    def prices(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Asset prices after ``j`` up-moves out of ``k``, for j = 0..k."""
        m = 2.0 * np.arange(k + 1) - k
        root_dt = math.sqrt(self.dt)
        x1 = self.params.x1 * np.exp(self.params.sigma1 * root_dt * m)
        x2 = self.params.x2 * np.exp(self.params.sigma2 * root_dt * m)
        return x1, x2

    def node_index(self, k: int, x: np.ndarray, asset: int) -> np.ndarray:
        """Nearest lattice up-move count at step ``k`` for prices ``x``."""
        p = self.params
        x0, sigma = (p.x1, p.sigma1) if asset == 1 else (p.x2, p.sigma2)
        m = np.log(x / x0) / (sigma * math.sqrt(self.dt))
        return np.clip(np.rint((m + k) / 2.0), 0, k).astype(np.int64)


@dataclass(eq=False)
class PriceSurface:
    """Per-step grids indexed ``[j1, j2]``; lists are indexed by step k."""

    lattice: ProductLattice
    continuation: list
    phi: list
    v: list
    exercise: list
    b_flag: list

    @property
    def v0(self) -> float:
        return float(self.v[0][0, 0])

    @property
    def steps(self) -> int:
        return self.lattice.steps


def price_exchange_double(params: MarketParams, n: int, eps: float = EPS_EQ) -> PriceSurface:
    """Backward induction with obstacle ``phi`` on the product lattice."""
    lat = ProductLattice(params, int(n))
    n = lat.steps
    cont_l, phi_l, v_l, ex_l, b_l = [None] * (n + 1), [None] * (n + 1), [None] * (n + 1), \
        [None] * (n + 1), [None] * (n + 1)
    for k in range(n, -1, -1):
        x1, x2 = lat.prices(k)
        X1, X2 = np.meshgrid(x1, x2, indexing="ij")
        first, second = _branches(lat.time(k), X1, X2, params)
        phi = np.maximum(first, second)
        if k == n:
            v = phi.copy()
            cont = np.full_like(phi, np.nan)
            ex = np.ones_like(phi, dtype=bool)
        else:
            cont, v, ex = _kernels.lattice_step(v_l[k + 1], phi, lat.q1, lat.q2, eps)
        cont_l[k], phi_l[k], v_l[k], ex_l[k] = cont, phi, v, ex
        b_l[k] = first <= second
    return PriceSurface(lat, cont_l, phi_l, v_l, ex_l, b_l)


def american_call_lattice(x1: float, strike: float, sigma: float, maturity: float,
                          n: int) -> float:
    """American call ``(X1 - strike)+`` at zero rate on a CRR tree."""
    dt = maturity / n
    u = math.exp(sigma * math.sqrt(dt))
    q = (1.0 - 1.0 / u) / (u - 1.0 / u)
    m = 2.0 * np.arange(n + 1) - n
    v = np.maximum(x1 * np.exp(sigma * math.sqrt(dt) * m) - strike, 0.0)
    for k in range(n - 1, -1, -1):
        m = 2.0 * np.arange(k + 1) - k
        ex = np.maximum(x1 * np.exp(sigma * math.sqrt(dt) * m) - strike, 0.0)
        v = np.maximum(ex, (1.0 - q) * v[:-1] + q * v[1:])
    return float(v[0])


@dataclass(eq=False)
class PairPolicy:
    """Exercise rule for the two legs on the lattice grid.

    ``stop[k][j1, j2]`` marks states where the reduced problem stops; ``b[k]``
    selects which leg is exercised there (True: leg 1 now, leg 2 at maturity).
    """

    lattice: ProductLattice
    stop: list
    b: list
    name: str = "policy"

    def describe(self) -> dict:
        early = sum(int(s.sum()) for s in self.stop[:-1])
        return {"name": self.name, "steps": self.lattice.steps, "early_stop_states": early}


def optimal_pair_policy(surface: PriceSurface) -> PairPolicy:
    """Stop at the first state where v touches phi; exercise the leg picked by B there
    and hold the other leg to maturity."""
    return PairPolicy(surface.lattice, surface.exercise, surface.b_flag, "optimal")


def hold_to_maturity_policy(lattice: ProductLattice) -> PairPolicy:
    n = lattice.steps
    stop = [np.zeros((k + 1, k + 1), dtype=bool) for k in range(n)]
    stop.append(np.ones((n + 1, n + 1), dtype=bool))
    b = [np.ones((k + 1, k + 1), dtype=bool) for k in range(n + 1)]
    return PairPolicy(lattice, stop, b, "maturity")


def _mc_chunk(params: MarketParams, policy: PairPolicy, seed: int, chunk: int,
              size: int) -> np.ndarray:
    lat = policy.lattice
    n = lat.steps
    ss = np.random.SeedSequence(seed, spawn_key=(chunk,))
    rng = np.random.Generator(np.random.Philox(ss))
    z = rng.standard_normal((size, n, 2))
    root_dt = math.sqrt(lat.dt)
    inc1 = -0.5 * params.sigma1 ** 2 * lat.dt + params.sigma1 * root_dt * z[:, :, 0]
    inc2 = -0.5 * params.sigma2 ** 2 * lat.dt + params.sigma2 * root_dt * z[:, :, 1]
    log1 = np.concatenate([np.zeros((size, 1)), np.cumsum(inc1, axis=1)], axis=1)
    log2 = np.concatenate([np.zeros((size, 1)), np.cumsum(inc2, axis=1)], axis=1)
    x1 = params.x1 * np.exp(log1)
    x2 = params.x2 * np.exp(log2)

    alive = np.ones(size, dtype=bool)
    stop_k = np.full(size, n)
    leg1 = np.ones(size, dtype=bool)
    for k in range(n + 1):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        j1 = lat.node_index(k, x1[idx, k], 1)
        j2 = lat.node_index(k, x2[idx, k], 2)
        hit = policy.stop[k][j1, j2]
        hit_idx = idx[hit]
        stop_k[hit_idx] = k
        leg1[hit_idx] = policy.b[k][j1[hit], j2[hit]]
        alive[hit_idx] = False
    rows = np.arange(size)
    a = np.where(leg1, x1[rows, stop_k], x1[:, n])
    b = np.where(leg1, x2[:, n], x2[rows, stop_k])
    return np.maximum(a - b, 0.0)


def mc_policy_value(params: MarketParams, policy: PairPolicy, n_paths: int, seed: int,
                    threads: int = 1) -> tuple[float, float]:
    """Monte Carlo value of ``policy`` with its standard error.

    Paths are generated in fixed chunks, each from its own Philox stream
    keyed by (seed, chunk index), so results do not depend on ``threads``.
    """
    if int(n_paths) < 1:
        raise ValueError("need at least one path")
    n_paths = int(n_paths)
    sizes = [min(MC_CHUNK, n_paths - s) for s in range(0, n_paths, MC_CHUNK)]
    jobs = [(params, policy, int(seed), c, size) for c, size in enumerate(sizes)]
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda j: _mc_chunk(*j), jobs))
    else:
        parts = [_mc_chunk(*j) for j in jobs]
    pay = np.concatenate(parts)
    est = float(pay.mean())
    se = float(pay.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
    return est, se


def exercise_frontier(surface: PriceSurface) -> list[tuple[int, str, int, int]]:
    """Rows ``(k, fixed_axis, fixed_index, min_index)``; -1 marks an empty slice."""
    rows = []
    for k, ex in enumerate(surface.exercise):
        any_j1 = ex.any(axis=0)
        first_j1 = np.where(any_j1, ex.argmax(axis=0), -1)
        for j2, j1 in enumerate(first_j1):
            rows.append((k, "j2", j2, int(j1)))
        any_j2 = ex.any(axis=1)
        first_j2 = np.where(any_j2, ex.argmax(axis=1), -1)
        for j1, j2 in enumerate(first_j2):
            rows.append((k, "j1", j1, int(j2)))
    return rows
