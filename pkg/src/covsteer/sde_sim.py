"""Monte Carlo simulation of the controlled jump-diffusion.

Paths of dx = A x dt + B u dt + C dm + x dmu are generated by
Euler-Maruyama under a gain schedule u = K(t) x.  Additive channels of m
and the scalar multiplicative martingale mu are compositions of Wiener
components (given by their diffusion-rate polynomials) and compound
Poisson components (arrival-rate polynomial, zero-mean normal jumps);
arrivals are drawn exactly per step by thinning against the polynomial's
step supremum and applied at the step end, all increments evaluated at
the left endpoint (Ito convention).

Every path has its own counter-based random stream keyed by
(master seed, path index), so results are bit-reproducible and
independent of any batching or scheduling.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    InconsistentNoiseError,
    MissingCheckpointError,
    PathsNotRetainedError,
    PreconditionError,
)
from .matfun import MatrixPoly, SystemSpec, symmetrize

_BLOCK = 4096  # fixed batching constant; results do not depend on it
_CONSISTENCY_TOL = 1e-10


@dataclass(frozen=True)
class NoiseComponent:
    """One martingale component: Wiener diffusion or compound Poisson jumps.

    rate is the diffusion-rate polynomial for a Wiener component and the
    arrival-rate polynomial for a compound Poisson component; channel
    indexes into the additive vector m (None for multiplicative).
    """

    kind: str  # "wiener" | "compound_poisson"
    rate: MatrixPoly
    channel: int | None = None
    jump_std: float = 0.0

    def __post_init__(self):
        if self.kind not in ("wiener", "compound_poisson"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.rate.rows != 1 or self.rate.cols != 1:
            raise ValueError("component rate must be a scalar polynomial")
        if self.kind == "compound_poisson" and self.jump_std < 0.0:
            raise ValueError("jump standard deviation must be nonnegative")


@dataclass(frozen=True)
class NoiseModel:
    additive: tuple
    multiplicative: tuple

    def __post_init__(self):
        for comp in self.additive:
            if comp.channel is None or comp.channel < 0:
                raise ValueError("additive components need a channel index")
        for comp in self.multiplicative:
            if comp.channel is not None:
                raise ValueError("multiplicative components carry no channel")


def _intensity_coeffs(comp: NoiseComponent) -> np.ndarray:
    """Ascending coefficients of d E[increment^2]/dt for one component."""
    rate = np.asarray(comp.rate.coeffs[0][0], dtype=float)
    if comp.kind == "wiener":
        return rate
    return rate * comp.jump_std ** 2  # lambda(t) E[chi^2]


def derive_intensities(noise: NoiseModel, q: int | None = None):
    """Aggregate (D(t), nu(t)) implied by the noise model.

    Wiener components add their diffusion rate to the channel diagonal of
    D; compound Poisson components add lambda(t) sigma_chi^2.  The
    multiplicative components sum into 2 nu(t).
    """
    if q is None:
        q = 1 + max((c.channel for c in noise.additive), default=0)
    entries = [[[0.0] for _ in range(q)] for _ in range(q)]
    for comp in noise.additive:
        if comp.channel >= q:
            raise ValueError(f"channel {comp.channel} outside 0..{q - 1}")
        cur = np.asarray(entries[comp.channel][comp.channel], dtype=float)
        add = _intensity_coeffs(comp)
        k = max(len(cur), len(add))
        merged = np.zeros(k)
        merged[: len(cur)] += cur
        merged[: len(add)] += add
        entries[comp.channel][comp.channel] = list(merged)
    d_poly = MatrixPoly.from_entries(entries)

    nu_c = np.zeros(1)
    for comp in noise.multiplicative:
        add = 0.5 * _intensity_coeffs(comp)
        k = max(len(nu_c), len(add))
        merged = np.zeros(k)
        merged[: len(nu_c)] += nu_c
        merged[: len(add)] += add
        nu_c = merged
    nu_poly = MatrixPoly.from_entries([[list(nu_c)]])

    grid = np.linspace(0.0, 1.0, 101)
    for t in grid:
        if float(nu_poly.eval(t)[0, 0]) < 0.0 or np.min(np.diag(d_poly.eval(t))) < 0.0:
            raise ValueError(f"derived intensities negative at t={t:.3f}")
    return d_poly, nu_poly


@dataclass(frozen=True)
class SimulationConfig:
    """Monte Carlo run parameters.

    The initial state is Gaussian with covariance sigma0 and zero mean
    (an explicit initial_mean supports deterministic point-mass checks).
    """

    num_paths: int
    sigma0: np.ndarray
    step_size: float = 1e-3
    master_seed: int = 0
    checkpoint_times: tuple = (0.0, 1.0)
    retain_paths: int = 10
    record_costs: bool = True
    initial_mean: np.ndarray | None = None

    def __post_init__(self):
        if self.num_paths < 1:
            raise ValueError("num_paths must be at least 1")
        if not 0.0 < self.step_size <= 0.01:
            raise ValueError("step size must lie in (0, 0.01]")
        object.__setattr__(self, "sigma0", np.asarray(self.sigma0, dtype=float))
        if self.initial_mean is not None:
            object.__setattr__(self, "initial_mean",
                               np.asarray(self.initial_mean, dtype=float))


@dataclass(frozen=True)
class RetainedPath:
    path_id: int
    times: np.ndarray
    states: np.ndarray  # (steps + 1, n)
    controls: np.ndarray  # (steps + 1, p)


@dataclass(frozen=True)
class SimulationResult:
    num_paths: int
    master_seed: int
    times: np.ndarray
    checkpoint_moments: tuple  # (t, mean, cov-or-None)
    envelope_mean: np.ndarray  # (steps + 1, n)
    envelope_var: np.ndarray  # (steps + 1, n), unbiased per-component variance
    cost_estimate: tuple | None  # (J, 95% half-width)
    path_costs: np.ndarray | None
    retained: tuple  # RetainedPath entries
    jump_mean_counts: tuple  # mean accepted arrivals per compound component
    martingale_mean: np.ndarray  # empirical mean of m(1) per channel


def _poly_sup_on_step(coeffs: np.ndarray, lo: float, hi: float) -> float:
    """Exact maximum of an ascending-coefficient polynomial on [lo, hi]."""
    cands = [lo, hi]
    if len(coeffs) > 2:
        der = coeffs[1:] * np.arange(1, len(coeffs))
        roots = np.roots(der[::-1])
        cands.extend(float(r.real) for r in roots
                     if abs(r.imag) < 1e-12 and lo < r.real < hi)
    elif len(coeffs) == 2:
        pass  # affine: endpoints suffice
    vals = [sum(c * t ** k for k, c in enumerate(coeffs)) for t in cands]
    return max(vals)


def _path_generator(master_seed: int, path_index: int) -> np.random.Generator:
    key = (int(master_seed) << 64) | int(path_index)
    return np.random.Generator(np.random.Philox(key=key))


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(symmetrize(mat))
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


class _StepData:
    """Per-step evaluations shared by every path."""

    def __init__(self, sys, noise, gain, dt):
        nsteps = int(math.ceil(1.0 / dt - 1e-12))
        times = np.minimum(np.arange(nsteps + 1) * dt, 1.0)
        times[-1] = 1.0
        self.times = times
        self.dts = np.diff(times)
        self.nsteps = nsteps

        gts = np.array([t for t, _ in gain])
        gks = np.stack([np.atleast_2d(k) for _, k in gain])
        if gts[0] > 0.0 or gts[-1] < 1.0 - 1e-12:
            raise PreconditionError("gain grid must cover [0, 1]")

        def k_at(t):
            idx = np.searchsorted(gts, t)
            if idx == 0:
                return gks[0]
            if idx >= len(gts):
                return gks[-1]
            w = (t - gts[idx - 1]) / (gts[idx] - gts[idx - 1])
            return (1.0 - w) * gks[idx - 1] + w * gks[idx]

        self.acl = []
        self.kmat = []
        self.cmat = []
        self.qmat = []
        self.rmat = []
        for t in times:
            a = sys.A.eval(t)
            b = sys.B.eval(t)
            k = k_at(t)
            self.kmat.append(k)
            self.acl.append(a + b @ k)
            self.cmat.append(sys.C.eval(t))
            self.qmat.append(sys.Q.eval(t))
            self.rmat.append(sys.R.eval(t))

        self.wiener = []  # (is_multiplicative, channel, per-step scale)
        self.compound = []  # (is_multiplicative, channel, lam_max*dt, rate coeffs, jump std)
        for comp in noise.additive + noise.multiplicative:
            mult = comp.channel is None
            if comp.kind == "wiener":
                rate0 = np.array([float(comp.rate.eval(t)[0, 0]) for t in times[:-1]])
                scale = np.sqrt(np.clip(rate0, 0.0, None) * self.dts)
                self.wiener.append((mult, comp.channel, scale))
            else:
                coeffs = np.asarray(comp.rate.coeffs[0][0], dtype=float)
                lam_max = np.array([
                    _poly_sup_on_step(coeffs, times[k], times[k + 1])
                    for k in range(nsteps)])
                self.compound.append((mult, comp.channel, lam_max, coeffs,
                                      comp.jump_std))


def _draw_block(step: _StepData, seed: int, lo: int, hi: int, n: int, mean0, l0):
    """Noise realizations for paths lo..hi-1 under the per-path stream protocol."""
    bsize = hi - lo
    nsteps = step.nsteps
    nw = len(step.wiener)
    x0 = np.empty((bsize, n))
    wn = np.empty((bsize, nsteps, nw)) if nw else np.zeros((bsize, nsteps, 0))
    jump_sums = [np.zeros((bsize, nsteps)) for _ in step.compound]
    jump_counts = np.zeros((bsize, len(step.compound)))
    for b, pid in enumerate(range(lo, hi)):
        gen = _path_generator(seed, pid)
        x0[b] = mean0 + l0 @ gen.standard_normal(n)
        if nw:
            wn[b] = gen.standard_normal((nsteps, nw))
        for ci, (_, _, lam_max, coeffs, jstd) in enumerate(step.compound):
            counts = gen.poisson(lam_max * step.dts)
            for k in np.nonzero(counts)[0]:
                cnt = int(counts[k])
                offs = gen.random(cnt)
                accept_u = gen.random(cnt)
                jumps = gen.standard_normal(cnt) * jstd
                t_arr = step.times[k] + offs * step.dts[k]
                lam_val = np.array([sum(c * t ** m for m, c in enumerate(coeffs))
                                    for t in t_arr])
                mask = accept_u * lam_max[k] <= lam_val
                jump_sums[ci][b, k] = float(np.sum(jumps[mask]))
                jump_counts[b, ci] += int(np.count_nonzero(mask))
    return x0, wn, jump_sums, jump_counts


def simulate_paths(sys: SystemSpec, noise: NoiseModel, gain,
                   cfg: SimulationConfig) -> SimulationResult:
    """Euler-Maruyama Monte Carlo of the controlled process.

    gain is a grid of (t, K(t)) pairs covering [0, 1]; values between grid
    points are interpolated linearly.  The noise model must reproduce the
    system's D(t) and nu(t) to 1e-10.  Moments, jump statistics and the
    per-path quadrature of the quadratic cost are accumulated online; the
    first retain_paths trajectories are kept with their control values.
    """
    d_poly, nu_poly = derive_intensities(noise, q=sys.q)
    grid = np.linspace(0.0, 1.0, 101)
    nu_sys = sys.identity_channel_nu()
    for t in grid:
        if np.max(np.abs(d_poly.eval(t) - sys.D.eval(t))) > _CONSISTENCY_TOL \
                or abs(float(nu_poly.eval(t)[0, 0] - nu_sys.eval(t)[0, 0])) > _CONSISTENCY_TOL:
            raise InconsistentNoiseError(
                f"noise model disagrees with the system intensities at t={t:.3f}")

    n, p, q = sys.n, sys.p, sys.q
    step = _StepData(sys, noise, gain, cfg.step_size)
    nsteps = step.nsteps
    mean0 = cfg.initial_mean if cfg.initial_mean is not None else np.zeros(n)
    l0 = _psd_sqrt(cfg.sigma0)

    cp_idx = {}
    for t_cp in cfg.checkpoint_times:
        idx = int(np.argmin(np.abs(step.times - t_cp)))
        if abs(step.times[idx] - t_cp) > 1e-9:
            raise ValueError(f"checkpoint {t_cp} is not on the step grid")
        cp_idx[float(t_cp)] = idx
    cp_sum = {t: np.zeros(n) for t in cp_idx}
    cp_outer = {t: np.zeros((n, n)) for t in cp_idx}

    env_sum = np.zeros((nsteps + 1, n))
    env_sq = np.zeros((nsteps + 1, n))
    m_final_sum = np.zeros(q)
    jump_totals = np.zeros(len(step.compound))
    all_costs = np.empty(cfg.num_paths) if cfg.record_costs else None
    retained = []

    for lo in range(0, cfg.num_paths, _BLOCK):
        hi = min(lo + _BLOCK, cfg.num_paths)
        bsize = hi - lo
        x0, wn, jump_sums, jump_counts = _draw_block(
            step, cfg.master_seed, lo, hi, n, mean0, l0)
        jump_totals += jump_counts.sum(axis=0)

        x = x0
        m_cum = np.zeros((bsize, q))
        cost = np.zeros(bsize)
        g_prev = None
        keep = [pid - lo for pid in range(lo, hi) if pid < cfg.retain_paths]
        kept_x = np.empty((len(keep), nsteps + 1, n)) if keep else None
        kept_u = np.empty((len(keep), nsteps + 1, p)) if keep else None

        for k in range(nsteps + 1):
            u = x @ step.kmat[k].T
            env_sum[k] += x.sum(axis=0)
            env_sq[k] += (x ** 2).sum(axis=0)
            for t_cp, idx in cp_idx.items():
                if idx == k:
                    cp_sum[t_cp] += x.sum(axis=0)
                    cp_outer[t_cp] += x.T @ x
            if keep:
                kept_x[:, k] = x[keep]
                kept_u[:, k] = u[keep]
            if cfg.record_costs:
                g = np.einsum("bi,ij,bj->b", x, step.qmat[k], x) \
                    + np.einsum("bi,ij,bj->b", u, step.rmat[k], u)
                if g_prev is not None:
                    cost += 0.5 * (g_prev + g) * step.dts[k - 1]
                g_prev = g
            if k == nsteps:
                break

            dt_k = step.dts[k]
            dm = np.zeros((bsize, q))
            dmu = np.zeros(bsize)
            wi = 0
            for mult, ch, scale in step.wiener:
                inc = wn[:, k, wi] * scale[k]
                wi += 1
                if mult:
                    dmu += inc
                else:
                    dm[:, ch] += inc
            for ci, (mult, ch, _, _, _) in enumerate(step.compound):
                inc = jump_sums[ci][:, k]
                if mult:
                    dmu += inc
                else:
                    dm[:, ch] += inc
            m_cum += dm
            x = x + (x @ step.acl[k].T) * dt_k + dm @ step.cmat[k].T \
                + x * dmu[:, None]

        m_final_sum += m_cum.sum(axis=0)
        if cfg.record_costs:
            all_costs[lo:hi] = cost
        for j, b in enumerate(keep):
            retained.append(RetainedPath(path_id=lo + b, times=step.times,
                                         states=kept_x[j], controls=kept_u[j]))

    n_paths = cfg.num_paths
    moments = []
    for t_cp in sorted(cp_idx):
        mean = cp_sum[t_cp] / n_paths
        cov = None
        if n_paths > 1:
            cov = (cp_outer[t_cp] - n_paths * np.outer(mean, mean)) / (n_paths - 1)
            cov = symmetrize(cov)
        moments.append((t_cp, mean, cov))

    env_mean = env_sum / n_paths
    if n_paths > 1:
        env_var = (env_sq - n_paths * env_mean ** 2) / (n_paths - 1)
        env_var = np.clip(env_var, 0.0, None)
    else:
        env_var = np.full_like(env_mean, np.nan)

    cost_estimate = None
    if cfg.record_costs:
        j_hat = float(np.mean(all_costs))
        half = 0.0
        if n_paths > 1:
            half = 1.96 * float(np.std(all_costs, ddof=1)) / math.sqrt(n_paths)
        cost_estimate = (j_hat, half)

    return SimulationResult(
        num_paths=n_paths, master_seed=cfg.master_seed, times=step.times,
        checkpoint_moments=tuple(moments), envelope_mean=env_mean,
        envelope_var=env_var, cost_estimate=cost_estimate,
        path_costs=all_costs, retained=tuple(retained),
        jump_mean_counts=tuple(jump_totals / n_paths),
        martingale_mean=m_final_sum / n_paths)


def empirical_moments(result: SimulationResult, t: float):
    """Unbiased sample mean and covariance at a recorded checkpoint.

    The covariance is None for a single path (the N - 1 divisor guard).
    """
    for t_cp, mean, cov in result.checkpoint_moments:
        if abs(t_cp - t) <= 1e-9:
            return mean, cov
    raise MissingCheckpointError(f"no moments recorded at t={t}")


def estimate_cost(sys: SystemSpec, result: SimulationResult):
    """Cost estimate from the per-path trapezoidal quadratures.

    The quadrature of x'Qx + u'Ru along each path (with its control
    values) is accumulated during simulation; this reduces the retained
    per-path integrals to a mean and a 95% confidence half-width.
    """
    if result.path_costs is None:
        raise PathsNotRetainedError(
            "per-path cost quadratures were not recorded (record_costs=False)")
    costs = result.path_costs
    j_hat = float(np.mean(costs))
    half = 0.0
    if len(costs) > 1:
        half = 1.96 * float(np.std(costs, ddof=1)) / math.sqrt(len(costs))
    return j_hat, half
