"""Monte Carlo spectral-efficiency evaluation.

Two ergodic lower bounds are computed per UE, both with expectations taken
over channel and noise realizations at fixed LoS phases:

* use-and-then-forget (UatF): the mean combined gain acts as the known
  channel, all fluctuation counts as noise. Needs only first and second
  moments of the combined true channels.
* coherent decoding (CD): the decoder knows the estimated channels, so the
  rate is the average of per-draw log terms with an estimation-error penalty.

Both bounds carry the pilot-overhead prelog (tau_c - tau_p) / tau_c.
Confidence intervals come from batch means: draws are split into fixed
batches by draw index, the statistic is recomputed per batch, and the spread
of the batch values scales the reported halfwidth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .beamforming import (
    Scheme,
    assemble_lmmse_lsfd,
    assemble_ltmmse,
    lmmse_local_matrices,
    lsfd_weights,
    mmse_combiner,
    stage2_all,
    statistics_pass,
)
from .channel import ChannelStats, sample_channels
from .errors import ConfigError
from .estimation import PilotEstimator
from .rng import ROLE_EVALUATION, ROLE_STATISTICS, subsequence, substream
from .scenario import AreaConfig, ServicePlan


@dataclass(frozen=True)
class MonteCarloBudgets:
    stat_draws: int = 500
    eval_draws: int = 500
    chunk: int = 128
    batches: int = 10

    def validate(self) -> None:
        if self.stat_draws < 2 or self.eval_draws < 2:
            raise ConfigError("draw budgets must be at least 2")
        if self.chunk < 1 or self.batches < 2:
            raise ConfigError("chunk must be >= 1 and batches >= 2")


@dataclass(frozen=True)
class BoundEstimate:
    """Per-UE spectral efficiencies of one bound with batch diagnostics."""

    se: np.ndarray            # (K,) bits/s/Hz
    ci: np.ndarray            # (K,) 95% halfwidth from batch means
    se_batches: np.ndarray    # (B, K)


@dataclass(frozen=True)
class SeReport:
    """Evaluation result of one scheme on one setup."""

    scheme: Scheme
    uatf: BoundEstimate
    cd: BoundEstimate
    uatf_signal: np.ndarray        # (K,) p_k |E g_kk|^2
    uatf_interference: np.ndarray  # (K,) sum_i p_i E |g_ki|^2
    uatf_noise: np.ndarray         # (K,) sigma^2 E ||v_k||^2
    draw_count: int
    stat_draw_count: int
    clamped_ues: tuple[int, ...] = ()
    regularized_ues: tuple[int, ...] = ()

    @property
    def uatf_se(self) -> np.ndarray:
        return self.uatf.se

    @property
    def cd_se(self) -> np.ndarray:
        return self.cd.se

    @property
    def min_uatf_se(self) -> float:
        return float(self.uatf.se.min())

    @property
    def sum_uatf_se(self) -> float:
        return float(self.uatf.se.sum())

    @property
    def sorted_uatf_se(self) -> np.ndarray:
        return np.sort(self.uatf.se)

    @property
    def min_cd_se(self) -> float:
        return float(self.cd.se.min())

    @property
    def sum_cd_se(self) -> float:
        return float(self.cd.se.sum())

    @property
    def sorted_cd_se(self) -> np.ndarray:
        return np.sort(self.cd.se)


def _batch_index(n_draws: int, n_batches: int) -> np.ndarray:
    return (np.arange(n_draws) * n_batches) // n_draws


def _batch_ci(se_batches: np.ndarray) -> np.ndarray:
    B = se_batches.shape[0]
    if B < 2:
        return np.full(se_batches.shape[1], np.nan)
    return 1.96 * np.std(se_batches, axis=0, ddof=1) / np.sqrt(B)


def _uatf_from_moments(mean_gain, mean_abs2, mean_vnorm2, powers, sigma2, prelog):
    """SINR and SE from UatF moment triplets; returns (se, parts, clamped)."""
    signal = powers * np.abs(mean_gain) ** 2                    # p_k |E g_kk|^2
    interference = mean_abs2 @ powers                           # sum_i p_i E |g_ki|^2
    noise = sigma2 * mean_vnorm2
    fluctuation = interference - signal
    clamped = fluctuation < 0.0
    denom = np.maximum(fluctuation, 0.0) + noise
    with np.errstate(divide="ignore", invalid="ignore"):
        sinr = np.where(denom > 0.0, signal / np.where(denom > 0.0, denom, 1.0), 0.0)
    se = prelog * np.log2(1.0 + sinr)
    return se, (signal, interference, noise), clamped


def uatf_se(gains: np.ndarray, vnorm2: np.ndarray, powers: np.ndarray, sigma2: float,
            prelog: float, n_batches: int = 10) -> tuple[BoundEstimate, dict]:
    """UatF bound from per-draw combined TRUE channel gains.

    `gains[r, k, i]` is the combined channel of UE i through UE k's combiner,
    `vnorm2[r, k]` the squared combiner norm. Sample means replace the
    expectations; if Monte Carlo noise drives the fluctuation term negative it
    is clamped at zero and the UE is flagged.
    """
    R, K, _ = gains.shape
    if R < 2:
        raise ConfigError("UatF evaluation needs at least 2 draws")
    n_batches = min(n_batches, R)
    own = gains[:, np.arange(K), np.arange(K)]

    se_full, parts, clamped = _uatf_from_moments(
        own.mean(axis=0), (np.abs(gains) ** 2).mean(axis=0), vnorm2.mean(axis=0),
        powers, sigma2, prelog,
    )
    batch = _batch_index(R, n_batches)
    se_batches = np.empty((n_batches, K))
    for b in range(n_batches):
        rows = batch == b
        se_batches[b], _, _ = _uatf_from_moments(
            own[rows].mean(axis=0), (np.abs(gains[rows]) ** 2).mean(axis=0),
            vnorm2[rows].mean(axis=0), powers, sigma2, prelog,
        )
    estimate = BoundEstimate(se=se_full, ci=_batch_ci(se_batches), se_batches=se_batches)
    extras = {
        "signal": parts[0],
        "interference": parts[1],
        "noise": parts[2],
        "clamped_ues": tuple(np.flatnonzero(clamped).tolist()),
    }
    return estimate, extras


def cd_se(est_gains: np.ndarray, err_quad: np.ndarray, vnorm2: np.ndarray,
          powers: np.ndarray, sigma2: float, prelog: float,
          n_batches: int = 10) -> BoundEstimate:
    """Coherent-decoding bound from per-draw ESTIMATED channel gains.

    `est_gains[r, k, i]` is the combined estimated channel, `err_quad[r, k]`
    the estimation-error quadratic form v^H Z v on the serving cluster. The
    per-draw log terms are averaged; expectations stay inside the log.
    """
    R, K, _ = est_gains.shape
    n_batches = min(n_batches, R)
    own = np.abs(est_gains[:, np.arange(K), np.arange(K)]) ** 2
    total = (np.abs(est_gains) ** 2) @ powers
    denom = np.maximum(total - powers * own, 0.0) + err_quad + sigma2 * vnorm2
    with np.errstate(divide="ignore", invalid="ignore"):
        sinr = np.where(denom > 0.0, powers * own / np.where(denom > 0.0, denom, 1.0), 0.0)
    log_terms = np.log2(1.0 + sinr)

    se_full = prelog * log_terms.mean(axis=0)
    batch = _batch_index(R, n_batches)
    se_batches = np.empty((n_batches, K))
    for b in range(n_batches):
        se_batches[b] = prelog * log_terms[batch == b].mean(axis=0)
    return BoundEstimate(se=se_full, ci=_batch_ci(se_batches), se_batches=se_batches)


def evaluate_schemes(stats: ChannelStats, plan: ServicePlan, cfg: AreaConfig,
                     schemes, budgets: MonteCarloBudgets,
                     stream) -> dict[Scheme, SeReport]:
    """Run the full pipeline for several schemes on shared draws.

    The statistics budget feeds the LSFD weights and the stage-two coupling
    matrices; the evaluation budget feeds the SE estimates. Both use draw
    streams keyed by (role, chunk index), so results are reproducible for any
    worker layout, and all schemes see identical draws (paired comparison).
    """
    budgets.validate()
    schemes = [Scheme(s) for s in schemes]
    if not schemes:
        raise ConfigError("at least one scheme required")
    prelog = (cfg.coherence_symbols - cfg.pilot_count) / cfg.coherence_symbols
    sigma2 = cfg.noise_power_w

    need_lsfd = Scheme.LMMSE_LSFD in schemes
    need_pi = Scheme.LTMMSE in schemes
    need_local = need_lsfd or need_pi
    stat_used = 0
    weights = stage2_full = None
    regularized: dict[Scheme, tuple[int, ...]] = {s: () for s in schemes}
    if need_local:
        model = statistics_pass(
            stats, plan, cfg, budgets.stat_draws, subsequence(stream, ROLE_STATISTICS),
            need_pi=need_pi, need_lsfd=need_lsfd, chunk=budgets.chunk,
        )
        stat_used = budgets.stat_draws
        if need_lsfd:
            weights, flagged = lsfd_weights(model.lsfd, plan.powers_w, sigma2)
            regularized[Scheme.LMMSE_LSFD] = flagged
        if need_pi:
            stage2_full, flagged = stage2_all(model.pi, plan)
            regularized[Scheme.LTMMSE] = flagged

    estimator = PilotEstimator(stats, plan, cfg)
    eval_seq = subsequence(stream, ROLE_EVALUATION)
    gains = {s: [] for s in schemes}
    est_gains = {s: [] for s in schemes}
    quads = {s: [] for s in schemes}
    vnorms = {s: [] for s in schemes}

    done = 0
    c_idx = 0
    while done < budgets.eval_draws:
        r = min(budgets.chunk, budgets.eval_draws - done)
        gen = substream(eval_seq, c_idx)
        draws = sample_channels(stats, gen, r)
        est = estimator.estimate(draws, gen)
        local = lmmse_local_matrices(est, plan, sigma2) if need_local else None

        for scheme in schemes:
            if scheme is Scheme.MMSE:
                bf = mmse_combiner(est, plan, sigma2)
            elif scheme is Scheme.LMMSE_LSFD:
                bf = assemble_lmmse_lsfd(local, weights, plan)
            else:
                bf = assemble_ltmmse(local, stage2_full, plan)
            v = bf.vectors
            gains[scheme].append(np.einsum("rlnk,rlni->rki", v.conj(), draws.true_channels))
            est_gains[scheme].append(np.einsum("rlnk,rlni->rki", v.conj(), est.estimates))
            quads[scheme].append(
                np.einsum("rlnk,lnm,rlmk->rk", v.conj(), est.z_matrices, v).real
            )
            vnorms[scheme].append(np.sum(np.abs(v) ** 2, axis=(1, 2)))
        done += r
        c_idx += 1

    reports = {}
    for scheme in schemes:
        g = np.concatenate(gains[scheme])
        gh = np.concatenate(est_gains[scheme])
        quad = np.concatenate(quads[scheme])
        vnorm2 = np.concatenate(vnorms[scheme])
        uatf, extras = uatf_se(g, vnorm2, plan.powers_w, sigma2, prelog, budgets.batches)
        cd = cd_se(gh, quad, vnorm2, plan.powers_w, sigma2, prelog, budgets.batches)
        reports[scheme] = SeReport(
            scheme=scheme,
            uatf=uatf,
            cd=cd,
            uatf_signal=extras["signal"],
            uatf_interference=extras["interference"],
            uatf_noise=extras["noise"],
            draw_count=budgets.eval_draws,
            stat_draw_count=stat_used if scheme is not Scheme.MMSE else 0,
            clamped_ues=extras["clamped_ues"],
            regularized_ues=regularized[scheme],
        )
    return reports


def run_monte_carlo(stats: ChannelStats, plan: ServicePlan, cfg: AreaConfig,
                    scheme, budgets: MonteCarloBudgets, stream) -> SeReport:
    """Evaluate a single scheme; see `evaluate_schemes` for the contract."""
    return evaluate_schemes(stats, plan, cfg, [scheme], budgets, stream)[Scheme(scheme)]
