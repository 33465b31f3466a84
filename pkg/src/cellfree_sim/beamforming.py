"""Receive combining: centralized MMSE, local MMSE + LSFD, and local team MMSE.

Three combiner families with increasing CSI centralization:

* ``LMMSE_LSFD``: each AP solves its own local MMSE problem, the decoder
  applies one statistical weight per serving AP chosen to maximize the
  use-and-then-forget SINR (a generalized Rayleigh quotient).
* ``LTMMSE``: the same local matrices followed by a statistical second stage;
  the stage-two vectors couple the APs through the expected cross-talk
  matrices Pi_l and make the pair jointly optimal among all combiners that
  use only local instantaneous CSI.
* ``MMSE``: the centralized optimum, solved on the cluster-restricted system
  (blocks outside the serving cluster are identically zero, so the full-size
  solve would be wasted work).

Statistical quantities (Pi_l, LSFD moments) are Monte Carlo estimates over a
dedicated draw budget, kept separate from the draws used for SE evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .channel import ChannelStats, sample_channels
from .errors import ConfigError
from .estimation import EstimateSet, PilotEstimator
from .rng import substream
from .scenario import AreaConfig, ServicePlan


class Scheme(str, Enum):
    MMSE = "MMSE"
    LMMSE_LSFD = "LMMSE_LSFD"
    LTMMSE = "LTMMSE"


@dataclass(frozen=True)
class BeamformerSet:
    """Per-draw combining vectors for every UE, plus scheme metadata.

    `vectors[r, l, :, k]` is the combiner block of AP l for UE k in draw r;
    blocks outside the serving cluster are exactly zero.
    """

    scheme: Scheme
    vectors: np.ndarray                    # (draws, L, N, K) complex
    local_matrices: np.ndarray | None = None   # (draws, L, N, K), distributed schemes
    lsfd_weights: np.ndarray | None = None     # (K, L) complex, zero off-cluster
    stage2: np.ndarray | None = None           # (K, L, K) complex, zero off-cluster
    regularized_ues: tuple[int, ...] = ()


@dataclass(frozen=True)
class PiSet:
    """Expected cross-talk matrices of the local MMSE stage, per AP."""

    pi: np.ndarray           # (L, K, K) complex
    se: np.ndarray           # (L, K, K) per-entry standard error of the estimate
    sample_count: int


@dataclass(frozen=True)
class LsfdMoments:
    """Monte Carlo moments needed for the optimal LSFD weights of each UE."""

    clusters: tuple[np.ndarray, ...]
    mean_gain: tuple[np.ndarray, ...]        # f_k, (M_k,) complex
    second_moments: tuple[np.ndarray, ...]   # (K, M_k, M_k) complex per UE
    noise_power: tuple[np.ndarray, ...]      # E ||V_l e_k||^2 per serving AP, (M_k,)
    sample_count: int


def mmse_combiner(est: EstimateSet, plan: ServicePlan, sigma2: float) -> BeamformerSet:
    """Centralized MMSE combiner, solved per UE on its serving cluster."""
    R, L, N, K = est.estimates.shape
    sqrt_p = np.sqrt(plan.powers_w)
    vectors = np.zeros((R, L, N, K), dtype=complex)
    for k in range(K):
        cluster = plan.cluster_of_ue[k]
        M = len(cluster)
        Hc = est.estimates[:, cluster].reshape(R, M * N, K)
        gram = np.einsum("rnk,k,rmk->rnm", Hc, plan.powers_w, Hc.conj())
        system = gram + _block_diag(est.z_matrices[cluster]) + sigma2 * np.eye(M * N)
        rhs = sqrt_p[k] * Hc[:, :, k]
        solution = np.linalg.solve(system, rhs[..., None])[..., 0]
        # mixed basic/advanced indexing puts the cluster axis first
        vectors[:, cluster, :, k] = solution.reshape(R, M, N).transpose(1, 0, 2)
    return BeamformerSet(scheme=Scheme.MMSE, vectors=vectors)


def _block_diag(blocks: np.ndarray) -> np.ndarray:
    M, N = blocks.shape[0], blocks.shape[1]
    out = np.zeros((M * N, M * N), dtype=blocks.dtype)
    for i in range(M):
        out[i * N:(i + 1) * N, i * N:(i + 1) * N] = blocks[i]
    return out


def lmmse_local_matrix(estimates_l: np.ndarray, z_l: np.ndarray,
                       powers: np.ndarray, sigma2: float) -> np.ndarray:
    """Local MMSE matrix of one AP: columns are per-UE combiners.

    Accepts arbitrary leading batch dimensions on `estimates_l` (..., N, K)
    with broadcastable `z_l` (..., N, N).
    """
    N = estimates_l.shape[-2]
    gram = np.einsum("...nk,k,...mk->...nm", estimates_l, powers, estimates_l.conj())
    system = gram + z_l + sigma2 * np.eye(N)
    rhs = estimates_l * np.sqrt(powers)
    return np.linalg.solve(system, rhs)


def lmmse_local_matrices(est: EstimateSet, plan: ServicePlan, sigma2: float) -> np.ndarray:
    """All local MMSE matrices for a batch of draws, shape (draws, L, N, K)."""
    return lmmse_local_matrix(est.estimates, est.z_matrices[None], plan.powers_w, sigma2)


def estimate_lsfd_moments(stats: ChannelStats, plan: ServicePlan, cfg: AreaConfig,
                          mc: int, stream, chunk: int = 128) -> LsfdMoments:
    """Monte Carlo estimate of the LSFD moment set over `mc` draws."""
    model = statistics_pass(stats, plan, cfg, mc, stream, need_pi=False, need_lsfd=True,
                            chunk=chunk)
    return model.lsfd


def estimate_pi(stats: ChannelStats, plan: ServicePlan, cfg: AreaConfig,
                mc: int, stream, chunk: int = 128) -> PiSet:
    """Monte Carlo estimate of the cross-talk matrices over `mc` draws."""
    model = statistics_pass(stats, plan, cfg, mc, stream, need_pi=True, need_lsfd=False,
                            chunk=chunk)
    return model.pi


@dataclass(frozen=True)
class StatisticalModel:
    pi: PiSet | None
    lsfd: LsfdMoments | None


def statistics_pass(stats: ChannelStats, plan: ServicePlan, cfg: AreaConfig,
                    mc: int, stream, need_pi: bool, need_lsfd: bool,
                    chunk: int = 128, min_draws: int = 2) -> StatisticalModel:
    """Shared statistics sweep feeding both distributed schemes.

    One stream of channel draws is used for every AP and both accumulation
    targets, which reduces the variance of cross-scheme comparisons. Chunk
    boundaries are fixed by draw index, so the result is independent of how
    chunks are scheduled.
    """
    if mc < min_draws:
        raise ConfigError(f"statistics budget must be at least {min_draws} draws")
    K, L, N = stats.los_mean.shape
    estimator = PilotEstimator(stats, plan, cfg)
    sqrt_p = np.sqrt(plan.powers_w)
    # keep per-chunk scratch below ~32M complex entries
    chunk = max(1, min(chunk, int(3.2e7 / max(L * K * K, 1))))

    pi_sum = np.zeros((L, K, K), dtype=complex)
    pi_sumsq = np.zeros((L, K, K))
    clusters = plan.cluster_of_ue
    f_sum = [np.zeros(len(c), dtype=complex) for c in clusters]
    g_sum = [np.zeros((K, len(c), len(c)), dtype=complex) for c in clusters]
    s_sum = [np.zeros(len(c)) for c in clusters]

    done = 0
    c_idx = 0
    while done < mc:
        r = min(chunk, mc - done)
        gen = substream(stream, c_idx)
        draws = sample_channels(stats, gen, r)
        est = estimator.estimate(draws, gen)
        local = lmmse_local_matrices(est, plan, cfg.noise_power_w)

        if need_pi:
            cross = np.einsum("rlni,rlnj->rlij", est.estimates.conj(), local)
            cross *= sqrt_p[None, None, :, None]
            pi_sum += cross.sum(axis=0)
            pi_sumsq += (np.abs(cross) ** 2).sum(axis=0)
        if need_lsfd:
            H = draws.true_channels
            for k in range(K):
                cluster = clusters[k]
                v_k = local[:, cluster][:, :, :, k]              # (r, M, N)
                gains = np.einsum("rmn,rmni->rmi", v_k.conj(), H[:, cluster])
                f_sum[k] += gains[:, :, k].sum(axis=0)
                g_sum[k] += np.einsum("rmi,rsi->ims", gains, gains.conj())
                s_sum[k] += (np.abs(v_k) ** 2).sum(axis=(0, 2))
        done += r
        c_idx += 1

    pi = None
    if need_pi:
        mean = pi_sum / mc
        variance = np.maximum(pi_sumsq / mc - np.abs(mean) ** 2, 0.0)
        pi = PiSet(pi=mean, se=np.sqrt(variance / mc), sample_count=mc)
    lsfd = None
    if need_lsfd:
        lsfd = LsfdMoments(
            clusters=tuple(clusters),
            mean_gain=tuple(f / mc for f in f_sum),
            second_moments=tuple(g / mc for g in g_sum),
            noise_power=tuple(s / mc for s in s_sum),
            sample_count=mc,
        )
    return StatisticalModel(pi=pi, lsfd=lsfd)


def lsfd_weights(moments: LsfdMoments, powers: np.ndarray, sigma2: float
                 ) -> tuple[list[np.ndarray], tuple[int, ...]]:
    """Optimal LSFD weights per UE (maximizers of the UatF Rayleigh quotient).

    Returns the weight vectors and the indices of UEs whose systems needed a
    ridge regularization (near-singular moment matrices).
    """
    weights: list[np.ndarray] = []
    flagged: list[int] = []
    for k, f in enumerate(moments.mean_gain):
        G = moments.second_moments[k]
        denom = np.einsum("i,imn->mn", powers, G)
        denom = denom + sigma2 * np.diag(moments.noise_power[k])
        denom = denom - powers[k] * np.outer(f, f.conj())
        try:
            a = np.linalg.solve(denom, f)
            if not np.all(np.isfinite(a)):
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            ridge = 1e-12 * max(np.abs(np.trace(denom)), 1.0)
            a = np.linalg.solve(denom + ridge * np.eye(len(f)), f)
            flagged.append(k)
        weights.append(a)
    return weights, tuple(flagged)


def assemble_lmmse_lsfd(local: np.ndarray, weights: list[np.ndarray], plan: ServicePlan,
                        regularized: tuple[int, ...] = ()) -> BeamformerSet:
    """Combine local matrices with LSFD weights into full combining vectors."""
    R, L, N, K = local.shape
    weight_full = np.zeros((K, L), dtype=complex)
    for k, cluster in enumerate(plan.cluster_of_ue):
        weight_full[k, cluster] = weights[k]
    vectors = local * weight_full.T[None, :, None, :]
    return BeamformerSet(scheme=Scheme.LMMSE_LSFD, vectors=vectors, local_matrices=local,
                         lsfd_weights=weight_full, regularized_ues=regularized)


def ltmmse_stage2(pi: PiSet, cluster: np.ndarray, k: int) -> tuple[np.ndarray, bool]:
    """Solve the coupled second-stage system of one UE.

    Block row l reads c_l + sum_{j != l} Pi_j c_j = e_k over the serving
    cluster. Returns the (M, K) stage-two vectors and whether a least-squares
    fallback was needed.
    """
    M = len(cluster)
    K = pi.pi.shape[1]
    system = np.empty((M * K, M * K), dtype=complex)
    eye = np.eye(K, dtype=complex)
    for a, l in enumerate(cluster):
        for b, j in enumerate(cluster):
            system[a * K:(a + 1) * K, b * K:(b + 1) * K] = eye if a == b else pi.pi[j]
    rhs = np.tile(np.eye(K, dtype=complex)[:, k], M)
    try:
        solution = np.linalg.solve(system, rhs)
        fallback = not np.all(np.isfinite(solution))
    except np.linalg.LinAlgError:
        fallback = True
    if fallback:
        solution = np.linalg.lstsq(system, rhs, rcond=None)[0]
    return solution.reshape(M, K), fallback


def assemble_ltmmse(local: np.ndarray, stage2_full: np.ndarray, plan: ServicePlan,
                    regularized: tuple[int, ...] = ()) -> BeamformerSet:
    """Apply the statistical second stage to per-draw local matrices.

    `stage2_full` is (K, L, K) with zero rows for non-serving APs, so the
    produced vectors keep their support on the serving cluster.
    """
    vectors = np.einsum("rlnj,klj->rlnk", local, stage2_full)
    return BeamformerSet(scheme=Scheme.LTMMSE, vectors=vectors, local_matrices=local,
                         stage2=stage2_full, regularized_ues=regularized)


def stage2_all(pi: PiSet, plan: ServicePlan) -> tuple[np.ndarray, tuple[int, ...]]:
    """Stage-two vectors for every UE, embedded in a dense (K, L, K) array."""
    K = pi.pi.shape[1]
    L = pi.pi.shape[0]
    full = np.zeros((K, L, K), dtype=complex)
    flagged = []
    for k in range(K):
        cluster = plan.cluster_of_ue[k]
        c, fallback = ltmmse_stage2(pi, cluster, k)
        full[k, cluster, :] = c
        if fallback:
            flagged.append(k)
    return full, tuple(flagged)
