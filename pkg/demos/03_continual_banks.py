"""Two ways to shrink memory banks as tasks accumulate.

The "cl" variant re-runs the greedy coreset on every old bank at each new
task; "clpp" just truncates, because the greedy insertion order makes
every prefix a valid coreset.  The banks come out identical, the costs do
not: watch the phase-1 ledger.
"""

import numpy as np

from eclvad import BankList, OpLedger, cl_update

rng = np.random.default_rng(0)
tasks = [rng.normal(loc=4.0 * t, size=(600, 8)).astype(np.float32) for t in range(6)]
S = 480

cl_state, pp_state = BankList(total_budget=S), BankList(total_budget=S)
cl_ledger, pp_ledger = OpLedger(), OpLedger()

print(f"total budget S={S}")
print(f"{'task':>4} {'budget':>6} {'cl phase1':>10} {'clpp phase1':>11} {'banks equal':>11}")
for i, patches in enumerate(tasks, start=1):
    cl_state = cl_update(cl_state, patches, "cl", cl_ledger)
    pp_state = cl_update(pp_state, patches, "clpp", pp_ledger)
    equal = all(
        np.array_equal(a.vectors, b.vectors)
        for a, b in zip(cl_state.banks, pp_state.banks)
    )
    print(f"{i:>4} {S // i:>6} {cl_ledger.phase1_ops:>10} "
          f"{pp_ledger.phase1_ops:>11} {str(equal):>11}")

print(f"\nphase-2 (new-bank) cost is shared: {cl_ledger.phase2_ops} ops either way")
print(f"recompression paid {cl_ledger.phase1_ops} extra distance ops for nothing")
