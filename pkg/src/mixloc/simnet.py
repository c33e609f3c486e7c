"""Round-based message-passing harness over a sensing network.

Drives the whole pipeline the way the deployed system would run it: nodes
synthesize (possibly noisy) measurements, share them with graph neighbors,
each free node assembles its constraint, and then one of the two protocols
runs to termination. Communication is restricted to graph edges; the message
log records who talked to whom so tests can assert locality.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .constraints import build_network_constraints
from .errors import CoverageError, RealizabilityError
from .network import (
    MeasurementSet,
    Network,
    NoiseSpec,
    inject_noise,  # noqa: F401  (re-exported: part of this module's surface)
    synthesize_measurements,
    validate_assumptions,
)
from .solver import (
    SequentialResult,
    SolverConfig,
    Trajectory,
    solve_sequential,
    solve_simultaneous,
)

MAX_LOG_ENTRIES = 1_000_000


@dataclass(frozen=True)
class Message:
    round: int
    sender: int
    receiver: int
    payload: str  # "measurements" or "estimate"


@dataclass(frozen=True)
class SimRun:
    """Configuration of one simulated run.

    ``master_seed`` fixes every random choice in the run: the noise draws
    and the solver's initial estimates. Seeds already pinned inside ``noise``
    or ``config`` take precedence so replays of hand-built cases stay exact.
    ``force`` skips the structural pre-check.
    """

    net: Network
    noise: NoiseSpec | None = None
    protocol: str = "simultaneous"
    config: SolverConfig = field(default_factory=SolverConfig)
    master_seed: int | None = None
    log_messages: bool = True
    max_log_entries: int = MAX_LOG_ENTRIES
    force: bool = False

    def __post_init__(self):
        if self.protocol not in ("simultaneous", "sequential"):
            raise ValueError(f"unknown protocol {self.protocol!r}")


@dataclass
class SimResult:
    run: SimRun
    measurements: dict[int, MeasurementSet]
    constraints: list
    failures: dict[int, list[str]]
    rounds: int
    messages: list[Message]
    log_truncated: bool
    trajectory: Trajectory | None = None
    sequential: SequentialResult | None = None

    def final_positions(self) -> np.ndarray:
        """(n, 3) array of anchors plus final estimates (NaN if never set)."""
        net = self.run.net
        if self.trajectory is not None:
            out = np.vstack([net.anchor_positions(), self.trajectory.final_estimates()])
            return out
        return self.sequential.positions(net)

    def final_error(self) -> float:
        """Frobenius distance between final and true free positions."""
        est = self.final_positions()[self.run.net.n_anchors :]
        return float(np.linalg.norm(est - self.run.net.free_positions()))

    def summary(self) -> dict:
        out = {
            "protocol": self.run.protocol,
            "rounds": self.rounds,
            "messages": len(self.messages),
            "log_truncated": self.log_truncated,
            "constraints_built": len(self.constraints),
            "uncovered": sorted(self.failures),
            "final_error": self.final_error(),
        }
        if self.trajectory is not None:
            out["solver"] = self.trajectory.summary()
        if self.sequential is not None:
            out["order"] = list(self.sequential.order)
            out["unlocalized"] = list(self.sequential.unlocalized)
        return out


class _Log:
    def __init__(self, enabled: bool, cap: int):
        self.entries: list[Message] = []
        self.enabled = enabled
        self.cap = cap
        self.truncated = False

    def add(self, round_no: int, sender: int, receiver: int, payload: str) -> None:
        if not self.enabled:
            return
        if len(self.entries) >= self.cap:
            self.truncated = True
            return
        self.entries.append(Message(round_no, sender, receiver, payload))


def _derived_seeds(master_seed) -> tuple[int, int]:
    seq = np.random.SeedSequence(master_seed)
    a, b = seq.spawn(2)
    return int(a.generate_state(1)[0]), int(b.generate_state(1)[0])


def run(sim: SimRun) -> SimResult:
    """Execute one simulated run, deterministic given its seeds.

    Phase 1 synthesizes measurements at every node and shares them over the
    edges (one round of messages). Phase 2 builds one displacement
    constraint per free node from the shared data. Phase 3 runs the chosen
    protocol. Construction failures abort the run only in simultaneous mode,
    where an uncovered node can never be estimated.
    """
    net = sim.net
    violations = validate_assumptions(net)
    if violations and not sim.force:
        lines = "; ".join(v.message for v in violations)
        raise RealizabilityError(f"network fails structural checks: {lines}")

    noise_seed, init_seed = _derived_seeds(sim.master_seed)
    noise = sim.noise
    if noise is not None and noise.seed is None and not noise.is_fixed_offset:
        noise = dataclasses.replace(noise, seed=noise_seed)
    config = sim.config
    if config.seed is None:
        config = dataclasses.replace(config, seed=init_seed)

    log = _Log(sim.log_messages, sim.max_log_entries)

    # phase 1: sense, then share with every neighbor
    measurements = {
        i: synthesize_measurements(net, i, noise) for i in range(net.n)
    }
    for i, j in sorted(net.edges):
        log.add(0, i, j, "measurements")
        log.add(0, j, i, "measurements")

    # phase 2: one constraint per free node from the shared measurements
    constraints, failures = build_network_constraints(net, measurements)

    # phase 3
    if sim.protocol == "simultaneous":
        if failures:
            detail = "; ".join(
                f"node {i}: {reasons[-1]}" for i, reasons in sorted(failures.items())
            )
            raise CoverageError(f"uncovered free nodes in simultaneous mode: {detail}")
        traj = solve_simultaneous(config, net, constraints)
        rounds = traj.iterations[-1] if traj.iterations else 0
        for k in range(1, rounds + 1):
            for i in net.free_ids:
                for j in net.neighbors(i):
                    log.add(k, j, i, "estimate")
            if log.truncated:
                break
        return SimResult(
            run=sim,
            measurements=measurements,
            constraints=constraints,
            failures=failures,
            rounds=rounds,
            messages=log.entries,
            log_truncated=log.truncated,
            trajectory=traj,
        )

    seq = solve_sequential(net, measurements)
    # each node that localized in round r received the positions its
    # already localized neighbors were broadcasting that round
    fixed_in = seq.round_localized
    for i in sorted(fixed_in, key=lambda v: (fixed_in[v], v)):
        round_no = fixed_in[i]
        for j in net.neighbors(i):
            j_round = fixed_in.get(j)
            available = (
                j < net.n_anchors
                or (j_round is not None and j_round < round_no)
                or (j_round == round_no and j < i)
            )
            if available:
                log.add(round_no, j, i, "estimate")
        if log.truncated:
            break
    return SimResult(
        run=sim,
        measurements=measurements,
        constraints=constraints,
        failures=failures,
        rounds=seq.rounds,
        messages=log.entries,
        log_truncated=log.truncated,
        sequential=seq,
    )
