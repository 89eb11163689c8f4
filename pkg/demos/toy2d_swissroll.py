"""Gaussian blob to swiss roll on a 50 x 50 grid.

Trains the forward model at a reduced budget (a few minutes), then plots the
exact terminal marginal of the learned chain next to the target and a few
sampled trajectories.  The full-budget variant of this experiment lives in
the acceptance tests and the `catbridge toy2d` subcommand.
"""

import os
import time

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from catbridge import (
    GridSpec2D,
    TimeGrid,
    TrainConfig,
    build_gaussian_reference,
    csbm_train,
    gaussian_grid_marginal,
    model_markov_chain,
    rollout,
    sampler_from_distribution,
    sampler_swiss_roll,
    swiss_roll_grid_marginal,
)


def main() -> None:
    spec = GridSpec2D(50)
    grid = TimeGrid(10)
    ref = build_gaussian_reference(spec.space, grid, 0.05)
    p0 = gaussian_grid_marginal(spec, std=0.5)
    target = swiss_roll_grid_marginal(spec, 400_000, np.random.default_rng(99))

    config = TrainConfig(outer_iterations=1, updates_per_phase=2000,
                         batch_size=512, learning_rate=250.0, avg_tail=0.3, seed=0)
    print("training forward/backward endpoint models (reduced budget)...")
    tic = time.perf_counter()
    fwd, _, _ = csbm_train(sampler_from_distribution(p0), sampler_swiss_roll(spec),
                           ref, config)
    print(f"done in {time.perf_counter() - tic:.0f}s")

    chain = model_markov_chain(fwd, ref, p0)
    terminal = chain.time_marginals()[-1]
    tv = 0.5 * np.abs(terminal - target.probs).sum()
    print(f"terminal marginal TV to the swiss-roll law: {tv:.3f}")

    rng = np.random.default_rng(7)
    starts = sampler_from_distribution(p0)(rng, 6)
    paths = rollout(fwd, ref, starts, rng)

    fig, axes = plt.subplots(1, 3, figsize=(13, 4.2))
    axes[0].imshow(target.probs.reshape(50, 50).T, origin="lower")
    axes[0].set_title("target law")
    axes[1].imshow(terminal.reshape(50, 50).T, origin="lower")
    axes[1].set_title(f"model terminal marginal (TV {tv:.3f})")
    axes[2].imshow(target.probs.reshape(50, 50).T, origin="lower", alpha=0.35)
    for path in paths:
        axes[2].plot(path[:, 0], path[:, 1], marker="o", markersize=2.5, linewidth=1.0)
    axes[2].set_title("sampled trajectories")
    out = os.path.join(os.path.dirname(__file__), "toy2d_swissroll.png")
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    print(f"saved {out}")


if __name__ == "__main__":
    main()
