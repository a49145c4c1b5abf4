"""Kill one worker mid-run and watch the whole gang restart together.

A worker failure aborts every rank of the attempt (results from a gang that
lost a member are never trusted), then the driver relaunches all of them as
attempt 1.  The answer from the retried gang is identical to a clean run.

Run as: python3 demos/04_fault_recovery.py
"""

import logging

from cannonmul import ElementType, RunConfig
from cannonmul.driver import run_distributed

logging.basicConfig(level=logging.WARNING, format="%(message)s")

base = dict(n=16, q=2, dtype=ElementType.FLOAT64, seed=9, reps=1, mode="threads")

clean = run_distributed(RunConfig(**base))
print(f"clean run:    attempts={clean.reps[0].attempts} "
      f"checksum={clean.reps[0].checksum:.12f}")

# rank 0 raises partway through attempt 0; attempts 1+ behave normally
faulty = run_distributed(
    RunConfig(**base, inject={"rank": 0, "attempts": [0]})
)
rep = faulty.reps[0]
print(f"injected run: attempts={rep.attempts} checksum={rep.checksum:.12f}")

assert rep.attempts == 1, "the gang should have restarted exactly once"
assert rep.checksum == clean.reps[0].checksum, "retry must reproduce the answer"
assert len(rep.workers) == 4, "every worker reports from the surviving attempt"
print("ok: one injected failure cost one restart and nothing else")
