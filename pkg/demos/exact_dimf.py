"""Exact alternating projections converging to the entropic plan.

Runs the closed-form projection iteration on a 1-D instance for both
reference kinds and shows the path KL falling monotonically to zero, with
the final coupling matching the Sinkhorn solution.
"""

import numpy as np

from catbridge import (
    EotProblem,
    StateSpace,
    TimeGrid,
    build_gaussian_reference,
    build_uniform_reference,
    cost_from_reference,
    coupling_of_chain,
    dimf_init,
    dimf_run,
    marginals_linear,
    sinkhorn_solve,
)


def main() -> None:
    space = StateSpace(20, 1)
    grid = TimeGrid(4)
    p0, p1 = marginals_linear(20)

    for name, ref in [
        ("uniform, alpha=0.3", build_uniform_reference(space, grid, 0.3)),
        ("gaussian, alpha=0.5", build_gaussian_reference(space, grid, 0.5)),
    ]:
        print(f"== {name} ==")
        plan = sinkhorn_solve(EotProblem(p0, p1, cost_from_reference(ref)))
        state = dimf_init(p0, p1, ref, "independent")
        final = dimf_run(state, plan, max_iters=200, kl_tol=1e-13)

        print(" iter  parity      path KL        coupling KL")
        for rec in final.history[::4] + final.history[-1:]:
            print(f"  {rec.iteration:3d}  {rec.parity:10s} {rec.path_kl:.6e}  {rec.coupling_kl:.6e}")

        proc = final.process
        coupling = proc.coupling if hasattr(proc, "coupling") else coupling_of_chain(proc)
        gap = np.abs(coupling.probs - plan.probs).max()
        print(f"iterations used: {final.iteration}")
        print(f"max |final coupling - sinkhorn plan| = {gap:.3e}")
        kls = [rec.path_kl for rec in final.history]
        print(f"path KL monotone: {all(b <= a + 1e-12 for a, b in zip(kls, kls[1:]))}")
        print()


if __name__ == "__main__":
    main()
