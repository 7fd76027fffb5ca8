"""
Run driver: run a scenario, classify the outcome, diff against the ideal
functionality, and fuzz a scenario under many random adversaries.
"""

from __future__ import annotations

import logging
import random
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Optional

from fairex import netsim
from fairex.chain import Chain
from fairex.config import SimulatorConfig
from fairex.errors import StepBudgetExceeded, UnmappableTranscript
from fairex.harness.scenario import AdversarySpec, Scenario
from fairex.harness.transcript import Transcript
from fairex.ideal_ref import Divergence, equivalent
from fairex.policies import AdversaryPolicy, ScriptedPolicy, action_from_json

logger = logging.getLogger(__name__)


class Outcome(str, Enum):
    SETTLED = "settled"
    NO_PROGRESS = "no-progress"
    STUCK_ESCROW = "stuck-escrow"
    DIVERGENCE = "divergence"
    BUDGET_EXHAUSTED = "budget-exhausted"


EXIT_USAGE = 1

EXIT_CODES: dict[Outcome, int] = {
    Outcome.SETTLED: 0,
    Outcome.NO_PROGRESS: 2,
    Outcome.STUCK_ESCROW: 3,
    Outcome.DIVERGENCE: 4,
    Outcome.BUDGET_EXHAUSTED: 5,
}


@dataclass
class DiffReport:
    """Result of ``diff_real_ideal``: PASS, or the first divergence / mapping error."""

    divergence: Optional[Divergence] = None
    error: Optional[str] = None
    error_step: Optional[int] = None

    @property
    def ok(self) -> bool:
        return self.divergence is None and self.error is None

    def to_json(self) -> dict[str, Any]:
        if self.divergence is not None:
            return self.divergence.to_json()
        return {"error": self.error, "step": self.error_step}


@dataclass
class RunResult:
    scenario: str
    seed: int
    outcome: Outcome
    transcript: Transcript
    diff: DiffReport
    path: Optional[Path] = None

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.outcome]


def classify(transcript: Transcript) -> Outcome:
    """
    Outcome class from the ledger at the end of a finished run.

    Any contract still open is stuck escrow; otherwise at least one closed
    contract means settled, and none at all means no progress.
    """
    finals = transcript.of_type("final")
    if not finals:
        return Outcome.BUDGET_EXHAUSTED
    contracts = finals[-1]["contracts"]
    if any(c["status"] == "open" for c in contracts):
        return Outcome.STUCK_ESCROW
    if contracts:
        return Outcome.SETTLED
    return Outcome.NO_PROGRESS


def diff_real_ideal(transcript: Transcript) -> DiffReport:
    """
    Check a transcript against the ideal functionality.

    Returns:
        PASS, the first divergence, or the reason the transcript could not
        be mapped onto an ideal schedule
    """
    try:
        report = equivalent(transcript)
    except UnmappableTranscript as e:
        return DiffReport(error=str(e), error_step=e.step)
    return DiffReport(divergence=report.divergence)


def _step_budget(config: Optional[SimulatorConfig]) -> int:
    return config.step_budget if config is not None else netsim.DEFAULT_STEP_BUDGET


def run_scenario(
    scenario: Scenario,
    seed: Optional[int] = None,
    *,
    config: Optional[SimulatorConfig] = None,
    out: Optional[str | Path] = None,
    policy: Optional[AdversaryPolicy] = None,
    chain_factory: netsim.ChainFactory = Chain,
) -> RunResult:
    """
    Run a scenario, diff it against the ideal run and classify the outcome.

    Budget exhaustion is an outcome, not an error. Divergence takes
    precedence over every other class.

    Args:
        scenario: A validated scenario
        seed: Run seed; defaults to the scenario's
        config: Supplies the default step budget
        out: Where to write the transcript, if anywhere
        policy: Overrides the scenario's adversary policy
        chain_factory: Builds the chain

    Returns:
        The result, whose transcript ends with divergence and summary records
    """
    seed = scenario.seed if seed is None else seed
    budget = _step_budget(config)
    try:
        transcript = netsim.run(
            scenario, seed, chain_factory=chain_factory, policy=policy, step_budget=budget
        )
        exhausted = False
    except StepBudgetExceeded as e:
        transcript = e.transcript
        exhausted = True

    diff = diff_real_ideal(transcript)
    if not diff.ok:
        outcome = Outcome.DIVERGENCE
        transcript.append("divergence", **diff.to_json())
    elif exhausted:
        outcome = Outcome.BUDGET_EXHAUSTED
    else:
        outcome = classify(transcript)

    steps = max((r.get("step", 0) for r in transcript if "step" in r), default=0)
    transcript.append(
        "summary",
        scenario=scenario.name,
        seed=seed,
        outcome=outcome.value,
        exit_code=EXIT_CODES[outcome],
        steps=steps + 1,
    )
    logger.info("Scenario %s seed %d: %s", scenario.name, seed, outcome.value)

    path = transcript.write(out) if out is not None else None
    return RunResult(scenario.name, seed, outcome, transcript, diff, path)


# --- fuzzing ---


@dataclass
class FuzzCase:
    """One fuzz run and what it established."""

    seed: int
    policy: str
    params: dict[str, Any]
    outcome: Outcome
    fair: bool = True
    conserved: bool = True
    sound: bool = True
    first_violation: Optional[int] = None
    diff: DiffReport = field(default_factory=DiffReport)

    @property
    def passed(self) -> bool:
        return self.fair and self.conserved and self.sound and self.diff.ok


def random_policy_params(seed: int) -> dict[str, float]:
    """Weights for the random policy, drawn from ``seed``."""
    rng = random.Random(f"{seed}/fuzz")
    return {
        "deliver": round(rng.uniform(0.3, 1.0), 3),
        "drop": round(rng.uniform(0.0, 0.4), 3),
        "replay": round(rng.uniform(0.0, 0.5), 3),
        "redirect": round(rng.uniform(0.0, 0.2), 3),
        "noop": round(rng.uniform(0.0, 0.1), 3),
    }


def fuzz_one(
    scenario: Scenario,
    seed: int,
    policy: str = "random",
    config: Optional[SimulatorConfig] = None,
) -> FuzzCase:
    """
    Run ``scenario`` once under ``policy`` and check the run-wide properties
    after every step: fairness, conservation and hash-lock soundness.

    The step budget comes from ``config`` unless the scenario sets its own.
    """
    if policy == "random":
        params: dict[str, Any] = random_policy_params(seed)
    elif policy == scenario.adversary.policy:
        params = dict(scenario.adversary.params)
    else:
        params = {}
    variant = scenario.model_copy(
        update={"seed": seed, "adversary": AdversarySpec(policy=policy, params=params)}
    )
    case = FuzzCase(seed=seed, policy=policy, params=params, outcome=Outcome.NO_PROGRESS)

    def observe(rs: netsim.RunState) -> None:
        fair = netsim.fairness_holds(rs)
        conserved = netsim.conservation_holds(rs)
        sound = netsim.hash_lock_sound(rs)
        if not (fair and conserved and sound) and case.first_violation is None:
            case.first_violation = rs.step_count - 1
        case.fair &= fair
        case.conserved &= conserved
        case.sound &= sound

    try:
        transcript = netsim.run(
            variant, seed, observer=observe, step_budget=_step_budget(config)
        )
        exhausted = False
    except StepBudgetExceeded as e:
        transcript = e.transcript
        exhausted = True

    case.diff = diff_real_ideal(transcript)
    if not case.diff.ok:
        case.outcome = Outcome.DIVERGENCE
    elif exhausted:
        case.outcome = Outcome.BUDGET_EXHAUSTED
    else:
        case.outcome = classify(transcript)
    if not case.passed:
        logger.warning("Fuzz seed %d (%s) failed: %s", seed, policy, case)
    return case


def _fuzz_job(job: tuple[Scenario, int, str, Optional[SimulatorConfig]]) -> FuzzCase:
    return fuzz_one(*job)


def fuzz(
    scenario: Scenario,
    seed: int,
    count: int,
    policies: Sequence[str] = ("random",),
    jobs: int = 1,
    config: Optional[SimulatorConfig] = None,
) -> list[FuzzCase]:
    """
    Run seeds ``seed .. seed + count - 1``, cycling through ``policies``.

    Args:
        scenario: The scenario to fuzz
        seed: First seed
        count: Number of runs
        policies: Policy names; ``random`` draws fresh weights per seed
        jobs: Worker processes; runs are independent
        config: Supplies the default step budget

    Returns:
        One FuzzCase per seed, in seed order
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    if not policies:
        raise ValueError("at least one policy is required")
    work = [
        (scenario, seed + i, policies[i % len(policies)], config) for i in range(count)
    ]
    if jobs <= 1:
        return [_fuzz_job(job) for job in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_fuzz_job, work))


def replay(scenario: Scenario, transcript: Transcript) -> Transcript:
    """
    Re-run ``scenario`` under the actions recorded in ``transcript``.

    The seed and step budget come from the transcript header, so replaying
    a transcript of this scenario reproduces its simulator records exactly.
    """
    header = transcript.header
    if header.get("scenario") != scenario.name:
        raise ValueError(
            f"transcript is of scenario {header.get('scenario')!r}, not {scenario.name!r}"
        )
    policy = ScriptedPolicy.from_actions(
        [action_from_json(record) for record in transcript.actions()]
    )
    try:
        return netsim.run(
            scenario, int(header["seed"]), policy=policy, step_budget=int(header["step_budget"])
        )
    except StepBudgetExceeded as e:
        return e.transcript
