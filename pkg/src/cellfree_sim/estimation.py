"""Uplink pilot phase and phase-aware MMSE channel estimation.

APs receive orthogonal pilots, decorrelate per pilot index, subtract the
known deterministic (phased LoS) part, and apply the linear MMSE map to the
innovation. All pilot-processing matrices depend only on channel statistics,
so they are factorized once per setup and reused across UEs and draws.
Copilot UEs share the same received pilot signal, which makes their estimates
correlated; that correlation is physical and is reproduced here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .channel import ChannelDraw, ChannelStats, sample_channels
from .errors import ConfigError
from .scenario import AreaConfig, ServicePlan


@dataclass(frozen=True)
class EstimateSet:
    """MMSE channel estimates and their statistics for a batch of draws."""

    estimates: np.ndarray   # (draws, L, N, K) complex
    err_cov: np.ndarray     # (K, L, N, N) error covariance per pair
    psi: np.ndarray         # (pilot_count, L, N, N) pilot-innovation covariances
    z_matrices: np.ndarray  # (L, N, N) power-weighted error covariance sums

    @property
    def n_draws(self) -> int:
        return self.estimates.shape[0]


def psi_matrix(stats: ChannelStats, plan: ServicePlan, cfg: AreaConfig,
               ap: int, pilot: int) -> np.ndarray:
    """Covariance of the decorrelated pilot observation at one AP, one pilot.

    Sum of eta_i * tau_p * R_{i,ap} over the UEs on the pilot, plus the noise
    floor sigma^2 I.
    """
    if not 0 <= pilot < plan.pilot_count:
        raise ConfigError("pilot index out of range")
    N = stats.n_antennas
    psi = cfg.noise_power_w * np.eye(N, dtype=complex)
    for i in np.flatnonzero(plan.pilot_of_ue == pilot):
        psi = psi + plan.pilot_powers_w[i] * plan.pilot_count * stats.nlos_cov[i, ap]
    return psi


class PilotEstimator:
    """Precomputed pilot-phase processing for one (stats, plan) pair.

    Holds the factorized innovation covariances, the per-pair MMSE gain
    matrices, error covariances and their power-weighted sums. Immutable after
    construction; safe to share across Monte Carlo workers.
    """

    def __init__(self, stats: ChannelStats, plan: ServicePlan, cfg: AreaConfig):
        K, L, N = stats.los_mean.shape
        tau_p = plan.pilot_count
        self.stats = stats
        self.plan = plan
        self.cfg = cfg

        self.psi = np.empty((tau_p, L, N, N), dtype=complex)
        for t in range(tau_p):
            for l in range(L):
                self.psi[t, l] = psi_matrix(stats, plan, cfg, l, t)

        # gain[k, l] maps the pilot innovation to the estimate update;
        # err_cov[k, l] is the posterior covariance of the estimation error.
        self.gain = np.zeros((K, L, N, N), dtype=complex)
        self.err_cov = np.zeros((K, L, N, N), dtype=complex)
        for l in range(L):
            factors = [cho_factor(self.psi[t, l]) for t in range(tau_p)]
            for k in range(K):
                t = plan.pilot_of_ue[k]
                eta = plan.pilot_powers_w[k]
                cov = stats.nlos_cov[k, l]
                solved = cho_solve(factors[t], cov)       # psi^-1 R
                self.gain[k, l] = np.sqrt(eta) * solved.conj().T
                err = cov - eta * tau_p * (solved.conj().T @ cov)
                self.err_cov[k, l] = 0.5 * (err + err.conj().T)

        self.z_matrices = np.einsum("k,klnm->lnm", plan.powers_w, self.err_cov)
        self._phased_mean = stats.phased_mean()          # (L, N, K)
        # coefficient matrix: column t holds sqrt(eta_i) * tau_p on the UEs of pilot t
        coef = np.zeros((K, tau_p))
        coef[np.arange(K), plan.pilot_of_ue] = np.sqrt(plan.pilot_powers_w) * tau_p
        self._pilot_coef = coef

    def estimate(self, draw: ChannelDraw, rng: np.random.Generator) -> EstimateSet:
        """Simulate pilot reception for each draw and apply the MMSE map."""
        H = draw.true_channels                            # (R, L, N, K)
        R, L, N, K = H.shape
        tau_p = self.plan.pilot_count
        sigma2 = self.cfg.noise_power_w

        received = np.einsum("rlni,it->rtln", H, self._pilot_coef)
        noise_scale = np.sqrt(0.5 * sigma2 * tau_p)
        noise = noise_scale * (
            rng.standard_normal((R, tau_p, L, N)) + 1j * rng.standard_normal((R, tau_p, L, N))
        )
        mean_received = np.einsum("lni,it->tln", self._phased_mean, self._pilot_coef)
        innovation = received + noise - mean_received[None]

        per_ue = innovation[:, self.plan.pilot_of_ue]     # (R, K, L, N)
        update = np.einsum("klnm,rklm->rlnk", self.gain, per_ue)
        estimates = self._phased_mean[None] + update
        return EstimateSet(
            estimates=estimates,
            err_cov=self.err_cov,
            psi=self.psi,
            z_matrices=self.z_matrices,
        )


def simulate_pilot_and_estimate(stats: ChannelStats, plan: ServicePlan, cfg: AreaConfig,
                                draw: ChannelDraw, rng: np.random.Generator) -> EstimateSet:
    """One-shot pilot simulation + estimation (builds the estimator inline)."""
    return PilotEstimator(stats, plan, cfg).estimate(draw, rng)


def sample_estimates_direct(stats: ChannelStats, plan: ServicePlan, cfg: AreaConfig,
                            rng: np.random.Generator, n_draws: int
                            ) -> tuple[ChannelDraw, EstimateSet]:
    """Draw (channel, estimate) pairs from their joint distribution directly.

    Distribution-equivalent shortcut: the estimate is Gaussian around the
    phased LoS mean with covariance R - C, and the error is independent with
    covariance C. Valid per pair, but it does not reproduce the cross-UE
    estimate correlation of copilot UEs; use the pilot path whenever copilot
    sets are not singletons.
    """
    est = PilotEstimator(stats, plan, cfg)
    K, L, N = stats.los_mean.shape
    from .channel import _psd_factor  # local import: reuse of the PSD factoring helper

    est_factor = np.zeros((K, L, N, N), dtype=complex)
    err_factor = np.zeros((K, L, N, N), dtype=complex)
    for k in range(K):
        for l in range(L):
            _, est_factor[k, l] = _psd_factor(stats.nlos_cov[k, l] - est.err_cov[k, l])
            _, err_factor[k, l] = _psd_factor(np.ascontiguousarray(est.err_cov[k, l]))

    def draw_part(factors):
        z = rng.standard_normal((n_draws, K, L, N)) + 1j * rng.standard_normal((n_draws, K, L, N))
        z *= np.sqrt(0.5)
        part = np.einsum("klnm,rklm->rkln", factors, z)
        return part.transpose(0, 2, 3, 1)

    phased = est._phased_mean[None]
    estimates = phased + draw_part(est_factor)
    errors = draw_part(err_factor)
    channels = estimates + errors
    return (
        ChannelDraw(true_channels=np.ascontiguousarray(channels)),
        EstimateSet(estimates=np.ascontiguousarray(estimates), err_cov=est.err_cov,
                    psi=est.psi, z_matrices=est.z_matrices),
    )


@dataclass(frozen=True)
class EstimationDiagnostics:
    """Empirical consistency report for the estimator on one setup."""

    n_draws: int
    max_mean_dev_se: float      # worst |emp. mean - phased LoS| in standard errors
    max_errcov_dev_se: float    # worst error-covariance entry deviation in standard errors
    max_cross_dev_se: float     # worst estimate/error cross-covariance entry in standard errors
    copilot_pairs: tuple[tuple[int, int], ...]
    copilot_estimate_corr: tuple[float, ...]  # shared-pilot estimate correlation per pair

    def within(self, se_limit: float = 5.0) -> bool:
        return max(self.max_mean_dev_se, self.max_errcov_dev_se, self.max_cross_dev_se) <= se_limit


def error_statistics_check(stats: ChannelStats, plan: ServicePlan, cfg: AreaConfig,
                           n_draws: int, rng: np.random.Generator,
                           min_draws: int = 10_000, chunk: int = 20_000) -> EstimationDiagnostics:
    """Monte Carlo check of the estimator's first and second moments.

    Verifies that estimates average to the phased LoS mean, that the
    estimation error has the predicted covariance, and that estimate and
    error are empirically uncorrelated. Deviations are reported in standard
    errors of the corresponding empirical moment. Copilot estimate
    correlation is reported separately: it is expected, not a defect.
    """
    if n_draws < min_draws:
        raise ConfigError(f"need at least {min_draws} draws for stable diagnostics")
    estimator = PilotEstimator(stats, plan, cfg)
    K, L, N = stats.los_mean.shape
    phased = estimator._phased_mean                      # (L, N, K)

    sum_est = np.zeros((L, N, K), dtype=complex)
    sumsq_est = np.zeros((L, N, K))
    sum_err = np.zeros((L, N, K), dtype=complex)
    sum_err_outer = np.zeros((K, L, N, N), dtype=complex)
    sumsq_err_outer = np.zeros((K, L, N, N))
    sum_cross = np.zeros((K, L, N, N), dtype=complex)
    sumsq_cross = np.zeros((K, L, N, N))
    sum_innov_outer = np.zeros((K, L, N, N), dtype=complex)
    pairs = sorted({tuple(sorted((k, i))) for k in range(K) for i in plan.copilot_sets[k] if i != k})
    sum_pair = np.zeros((max(len(pairs), 1), L, N, N), dtype=complex)

    done = 0
    while done < n_draws:
        r = min(chunk, n_draws - done)
        draws = sample_channels(stats, rng, r)
        est = estimator.estimate(draws, rng)
        err = draws.true_channels - est.estimates        # (r, L, N, K)
        innov = est.estimates - phased[None]

        sum_est += est.estimates.sum(axis=0)
        sumsq_est += (np.abs(est.estimates) ** 2).sum(axis=0)
        sum_err += err.sum(axis=0)
        sum_err_outer += np.einsum("rlnk,rlmk->klnm", err, err.conj())
        sumsq_err_outer += np.einsum("rlnk,rlmk->klnm", np.abs(err) ** 2, np.abs(err) ** 2)
        sum_cross += np.einsum("rlnk,rlmk->klnm", est.estimates, err.conj())
        sumsq_cross += np.einsum("rlnk,rlmk->klnm", np.abs(est.estimates) ** 2, np.abs(err) ** 2)
        sum_innov_outer += np.einsum("rlnk,rlmk->klnm", innov, innov.conj())
        for p, (k, i) in enumerate(pairs):
            sum_pair[p] += np.einsum("rln,rlm->lnm", innov[:, :, :, k], innov[:, :, :, i].conj())
        done += r

    def se_ratio(dev, second_moment, first_moment):
        variance = np.maximum(second_moment / n_draws - np.abs(first_moment / n_draws) ** 2, 0.0)
        se = np.sqrt(variance / n_draws)
        scale = max(float(np.abs(first_moment).max()) / n_draws, 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(se > 0, dev / se, np.where(dev > 1e-9 * scale, np.inf, 0.0))
        return float(ratio.max())

    mean_est = sum_est / n_draws
    mean_dev = np.abs(mean_est - phased)
    max_mean = se_ratio(mean_dev, sumsq_est, sum_est)

    mean_err = sum_err / n_draws
    emp_err_cov = sum_err_outer / n_draws - np.einsum(
        "lnk,lmk->klnm", mean_err, mean_err.conj()
    )
    target = estimator.err_cov
    max_errcov = se_ratio(np.abs(emp_err_cov - target), sumsq_err_outer, sum_err_outer)

    emp_cross = sum_cross / n_draws - np.einsum("lnk,lmk->klnm", mean_est, mean_err.conj())
    max_cross = se_ratio(np.abs(emp_cross), sumsq_cross, sum_cross)

    self_norm = np.linalg.norm(sum_innov_outer / n_draws, axis=(2, 3))  # (K, L)
    corr = []
    for p, (k, i) in enumerate(pairs):
        cross_norm = np.linalg.norm(sum_pair[p] / n_draws, axis=(1, 2))  # (L,)
        denom = np.sqrt(self_norm[k] * self_norm[i])
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = np.where(denom > 0, cross_norm / denom, 0.0)
        corr.append(float(ratios.max()))

    return EstimationDiagnostics(
        n_draws=n_draws,
        max_mean_dev_se=max_mean,
        max_errcov_dev_se=max_errcov,
        max_cross_dev_se=max_cross,
        copilot_pairs=tuple(pairs),
        copilot_estimate_corr=tuple(corr),
    )
