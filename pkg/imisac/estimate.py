"""
Channel estimation by switching configurations: every pilot slot uses its own
reconfiguration state, so the RF chains observe a different linear mix of the
aperture channel each slot. Stacking the slots gives an ordinary linear system
for the channel, solved by least squares or ridge regression.

Uplink and downlink are reciprocal: the K samples received in one slot are
y = pilot * Phi h + n with Phi = (prod_l Q_l T_l)^T.
"""

from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from imisac.base_types import ArchitectureSpec, FeedingMatrix, ReconfigState
from imisac.exception import InsufficientObservations, RankDeficient
from imisac.framework import check_dimensions, layer_product
from imisac.logging_util import get_logger
from imisac.timers import timed

logger = get_logger(__name__)

RANK_DEFICIENT_CONDITION = 1e12


class PilotProtocol(NamedTuple):
    """
    One reconfiguration state per pilot slot, the (unit-power) pilot symbol,
    the receiver noise power and the seed of the noise generator.
    """

    states: Tuple[ReconfigState, ...]
    pilot: complex = 1.0
    noise_power: float = 0.0
    seed: int = 0

    @property
    def num_slots(self) -> int:
        return len(self.states)


class StackedObservations(NamedTuple):
    """
    y (T K) and the matching (T K) x N system matrix, pilot included.
    """

    y: np.ndarray
    matrix: np.ndarray
    num_slots: int


class EstimationReport(NamedTuple):
    estimate: np.ndarray
    nmse: Optional[float]
    condition_number: float
    num_slots: int
    num_observations: int
    num_unknowns: int


def observation_matrix(
    spec: ArchitectureSpec, feeds: Sequence[FeedingMatrix], state: ReconfigState
) -> np.ndarray:
    """
    K x N_{L-1} map from the aperture channel to the RF-chain samples of one
    slot.
    """
    num_inputs = feeds[0].matrix.shape[1] if feeds else spec.num_rf_chains
    check_dimensions(spec, np.eye(num_inputs), feeds, state)
    return layer_product(feeds, state).T


@timed
def run_protocol(
    protocol: PilotProtocol,
    spec: ArchitectureSpec,
    feeds: Sequence[FeedingMatrix],
    true_channel: np.ndarray,
    noise_power: Optional[float] = None,
) -> StackedObservations:
    """
    Simulate every pilot slot against the true channel (length N_{L-1}) and
    stack the observations. Noise is circularly-symmetric complex Gaussian of
    variance noise_power (the protocol's by default) drawn from the protocol's
    seed, so reruns reproduce the same realization.
    """
    sigma2 = protocol.noise_power if noise_power is None else noise_power
    h = np.asarray(true_channel, dtype=complex).ravel()
    matrix = protocol.pilot * np.vstack(
        [observation_matrix(spec, feeds, state) for state in protocol.states]
    )
    rng = np.random.default_rng(protocol.seed)
    rows = matrix.shape[0]
    noise = np.sqrt(sigma2 / 2.0) * (rng.standard_normal(rows) + 1j * rng.standard_normal(rows))
    return StackedObservations(matrix @ h + noise, matrix, protocol.num_slots)


def normalized_mse(estimate: np.ndarray, truth: np.ndarray) -> float:
    truth = np.asarray(truth, dtype=complex).ravel()
    return float(np.sum(np.abs(estimate - truth) ** 2) / np.sum(np.abs(truth) ** 2))


@timed
def solve_ls(
    y: np.ndarray,
    phi_stacked: np.ndarray,
    ridge: float = 0.0,
    true_channel: Optional[np.ndarray] = None,
    num_slots: Optional[int] = None,
) -> EstimationReport:
    """
    Least-squares (ridge == 0) or ridge (Phi^H Phi + ridge I)^-1 Phi^H y
    estimate of the channel. The condition number of the stacked matrix is
    always reported; NMSE only when the true channel is given.
    """
    phi = np.asarray(phi_stacked, dtype=complex)
    y = np.asarray(y, dtype=complex).ravel()
    rows, cols = phi.shape
    condition = float(np.linalg.cond(phi))
    if ridge == 0.0:
        if rows < cols:
            raise InsufficientObservations(
                f"{rows} observations cannot determine {cols} unknowns without a ridge term."
            )
        if not condition <= RANK_DEFICIENT_CONDITION:
            raise RankDeficient(condition)
        estimate = np.linalg.lstsq(phi, y, rcond=None)[0]
    else:
        gram = phi.conj().T @ phi + ridge * np.eye(cols)
        estimate = np.linalg.solve(gram, phi.conj().T @ y)
    nmse = None if true_channel is None else normalized_mse(estimate, true_channel)
    return EstimationReport(
        estimate=estimate,
        nmse=nmse,
        condition_number=condition,
        num_slots=rows if num_slots is None else num_slots,
        num_observations=rows,
        num_unknowns=cols,
    )


def design_configs(spec: ArchitectureSpec, T: int, seed: int) -> List[ReconfigState]:
    """
    T i.i.d. uniformly random feasible configurations, one per slot.
    """
    rng = np.random.default_rng(seed)
    return [ReconfigState.random(spec, rng) for _ in range(T)]


def orthonormalize_observations(phi_stacked: np.ndarray) -> np.ndarray:
    """
    Orthonormal basis (Q of a reduced QR) of the column space of the stacked
    system, such that Q^H Q = I. Least squares through it has the closed-form
    error N sigma^2.
    """
    q, _ = np.linalg.qr(np.asarray(phi_stacked, dtype=complex))
    return q


def estimate_users(
    protocol: PilotProtocol,
    spec: ArchitectureSpec,
    feeds: Sequence[FeedingMatrix],
    H: np.ndarray,
    ridge: float = 0.0,
) -> List[EstimationReport]:
    """
    Estimate every user's channel (a row of H) independently, as with
    orthogonal pilots. User u's noise comes from the protocol seed's u-th child.
    """
    children = np.random.SeedSequence(protocol.seed).spawn(H.shape[0])
    reports = []
    for u, h in enumerate(np.atleast_2d(H)):
        seed = int(children[u].generate_state(1)[0])
        stacked = run_protocol(protocol._replace(seed=seed), spec, feeds, h)
        reports.append(solve_ls(stacked.y, stacked.matrix, ridge, h, stacked.num_slots))
    return reports


class NmsePoint(NamedTuple):
    num_slots: int
    mean_nmse: float
    mean_condition_number: float


@timed
def nmse_vs_slots(
    spec: ArchitectureSpec,
    feeds: Sequence[FeedingMatrix],
    true_channel: np.ndarray,
    slot_counts: Sequence[int],
    noise_power: float,
    seeds: Sequence[int],
    ridge: float = 0.0,
) -> List[NmsePoint]:
    """
    Mean NMSE over seeds for every slot count, with fresh random
    configurations and noise per seed.
    """
    points = []
    for T in slot_counts:
        nmse, cond = [], []
        for seed in seeds:
            protocol = PilotProtocol(
                tuple(design_configs(spec, T, seed)), noise_power=noise_power, seed=seed
            )
            stacked = run_protocol(protocol, spec, feeds, true_channel)
            report = solve_ls(stacked.y, stacked.matrix, ridge, true_channel, T)
            nmse.append(report.nmse)
            cond.append(report.condition_number)
        points.append(NmsePoint(int(T), float(np.mean(nmse)), float(np.mean(cond))))
        logger.debug(f"T={T}: mean NMSE {points[-1].mean_nmse:.4e}.")
    return points
