"""Command-line front end: experiment drivers and a property-check suite.

Subcommands:

- ``convergence``: run the alternating-projection solver against a Sinkhorn
  target over a sweep of stochasticity levels and step counts; writes one
  history CSV per setting plus a JSON summary.
- ``toy2d``: train the two-directional endpoint model on the 2-D gaussian to
  spiral task; writes translated samples, trajectories, metrics and a summary.
- ``sinkhorn``: solve the endpoint problem alone and export the plan.
- ``verify``: run cross-module invariant checks and report pass/fail lines.

Configuration comes from an optional JSON file plus flag overrides; unknown
keys are rejected and everything is validated before any computation starts.
Exit codes: 0 success, 1 configuration error, 2 numerical failure, 3 property
suite failure.

The environment variable ``CATBRIDGE_THREADS`` caps the BLAS/OpenMP thread
pools, and ``--deterministic`` pins them to one thread; both take effect only
if set before numpy is first imported, which is why this module defers all
heavy imports into the command bodies.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
)


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


class AlphaDegenerate(ConfigError):
    """Reference lacks full support at this stochasticity level."""


def _configure_threads(deterministic: bool) -> None:
    cap = "1" if deterministic else os.environ.get("CATBRIDGE_THREADS")
    if cap is None:
        return
    if not cap.isdigit() or int(cap) < 1:
        raise ConfigError(f"CATBRIDGE_THREADS must be a positive integer, got {cap!r}")
    for var in _THREAD_VARS:
        os.environ[var] = cap


def _load_config(path, schema: dict, overrides: dict) -> dict:
    cfg = dict()
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config file must contain a JSON object")
        unknown = set(raw) - set(schema)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(raw)
    for key, value in overrides.items():
        if value is not None:
            cfg[key] = value
    out = {}
    for key, (cast, default) in schema.items():
        if key in cfg:
            try:
                out[key] = cast(cfg[key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"config key {key!r}: {exc}") from exc
        else:
            out[key] = default
    return out


def _as_int(value) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float, str)):
        raise ValueError("expected an integer")
    number = float(value)
    if number != int(number):
        raise ValueError("expected an integer")
    return int(number)


def _as_float(value) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float, str)):
        raise ValueError("expected a number")
    return float(value)


def _as_str(value) -> str:
    if not isinstance(value, str):
        raise ValueError("expected a string")
    return value


def _as_bool(value) -> bool:
    if not isinstance(value, bool):
        raise ValueError("expected a boolean")
    return value


def _as_number_list(value) -> list:
    if not isinstance(value, (list, tuple)) or not value:
        raise ValueError("expected a nonempty list of numbers")
    return [_as_float(v) for v in value]


def _as_int_list(value) -> list:
    if not isinstance(value, (list, tuple)) or not value:
        raise ValueError("expected a nonempty list of integers")
    return [_as_int(v) for v in value]


_REF_NAMES = {"unif": "uniform", "uniform": "uniform", "gauss": "gaussian", "gaussian": "gaussian"}


def _canonical_ref(name: str) -> str:
    if name not in _REF_NAMES:
        raise ConfigError(f"reference kind must be one of {sorted(set(_REF_NAMES))}, got {name!r}")
    return _REF_NAMES[name]


def _check_alpha(kind: str, alpha: float) -> None:
    if kind == "uniform" and not (0.0 < alpha < 1.0):
        raise AlphaDegenerate(
            f"uniform reference needs 0 < alpha < 1 for full support, got {alpha}")
    if kind == "gaussian" and not alpha > 0.0:
        raise AlphaDegenerate(f"gaussian reference needs alpha > 0, got {alpha}")


def _build_reference(kind: str, space, grid, alpha: float):
    from .reference import build_gaussian_reference, build_uniform_reference

    if kind == "uniform":
        return build_uniform_reference(space, grid, alpha)
    return build_gaussian_reference(space, grid, alpha)


def _product_linear_marginals(space):
    """Uniform p0 and per-dimension linearly tilted p1 on a joint space."""
    import numpy as np

    from .core import CategoricalDistribution

    s = space.num_categories
    weights = np.arange(1, s + 1, dtype=np.float64)
    weights /= weights.sum()
    joint = weights
    for _ in range(space.num_dimensions - 1):
        joint = np.outer(joint, weights).ravel()
    return CategoricalDistribution.uniform(space), CategoricalDistribution(space, joint)


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


_NUMERICAL_ERRORS_IMPORTED = None


def _numerical_errors():
    global _NUMERICAL_ERRORS_IMPORTED
    if _NUMERICAL_ERRORS_IMPORTED is None:
        from .core import SupportMismatch
        from .dimf import NonDecreaseDetected, SupportViolation
        from .eot import NoConvergence, ZeroTransition
        from .projections import ZeroMarginal
        from .reference import ZeroMassPath

        _NUMERICAL_ERRORS_IMPORTED = (
            SupportMismatch, NonDecreaseDetected, SupportViolation,
            NoConvergence, ZeroTransition, ZeroMarginal, ZeroMassPath,
            FloatingPointError,
        )
    return _NUMERICAL_ERRORS_IMPORTED


_CONVERGENCE_SCHEMA = {
    "seed": (_as_int, 0),
    "out": (_as_str, "out"),
    "S": (_as_int, 50),
    "D": (_as_int, 1),
    "N": (_as_int, 4),
    "ref": (_as_str, "gauss"),
    "alpha": (_as_float, 0.5),
    "alpha_sweep": (_as_number_list, None),
    "n_sweep": (_as_int_list, None),
    "max_iterations": (_as_int, 200),
    "kl_tol": (_as_float, 1e-13),
    "sinkhorn_max_iters": (_as_int, 200_000),
    "sinkhorn_tol": (_as_float, 1e-10),
    "match_tol": (_as_float, 1e-6),
}


def cmd_convergence(cfg: dict) -> int:
    kind = _canonical_ref(cfg["ref"])
    alphas = cfg["alpha_sweep"] if cfg["alpha_sweep"] is not None else [cfg["alpha"]]
    steps = cfg["n_sweep"] if cfg["n_sweep"] is not None else [cfg["N"]]
    if cfg["S"] < 2 or cfg["D"] < 1:
        raise ConfigError("need S >= 2 and D >= 1")
    if cfg["S"] ** cfg["D"] > 4096:
        raise ConfigError("joint space too large for the exact solver")
    for alpha in alphas:
        _check_alpha(kind, alpha)
    for n in steps:
        if n < 1:
            raise ConfigError("convergence needs N >= 1")
    if cfg["max_iterations"] < 1 or cfg["sinkhorn_max_iters"] < 1:
        raise ConfigError("iteration caps must be positive")
    if min(cfg["kl_tol"], cfg["sinkhorn_tol"], cfg["match_tol"]) <= 0.0:
        raise ConfigError("tolerances must be positive")

    import numpy as np

    from .core import StateSpace, TimeGrid
    from .dimf import dimf_init, dimf_run, write_history_csv
    from .eot import EotProblem, cost_from_reference, sinkhorn_solve

    os.makedirs(cfg["out"], exist_ok=True)
    space = StateSpace(cfg["S"], cfg["D"])
    p0, p1 = _product_linear_marginals(space)
    runs = []
    for alpha in alphas:
        for n in steps:
            grid = TimeGrid(n)
            ref = _build_reference(kind, space, grid, alpha)
            plan = sinkhorn_solve(EotProblem(p0, p1, cost_from_reference(ref)),
                                  cfg["sinkhorn_max_iters"], cfg["sinkhorn_tol"])
            tic = time.perf_counter()
            state = dimf_run(dimf_init(p0, p1, ref), plan,
                             max_iters=cfg["max_iterations"], kl_tol=cfg["kl_tol"])
            wall = time.perf_counter() - tic
            gap = float(np.abs(state.current_coupling().probs - plan.probs).max())
            name = f"convergence_{kind}_alpha{alpha:g}_N{n}.csv"
            write_history_csv(state, os.path.join(cfg["out"], name))
            runs.append({
                "ref": kind,
                "alpha": alpha,
                "N": n,
                "iterations": state.iteration,
                "final_path_kl": state.history[-1].path_kl,
                "max_abs_difference": gap,
                "fixed_point_matches_sinkhorn": bool(gap <= cfg["match_tol"]),
                "wall_time_s": wall,
                "history_csv": name,
            })
    _write_json(os.path.join(cfg["out"], "summary.json"), {"runs": runs})
    return 0


_SINKHORN_SCHEMA = {
    "seed": (_as_int, 0),
    "out": (_as_str, "out"),
    "S": (_as_int, 50),
    "D": (_as_int, 1),
    "N": (_as_int, 4),
    "ref": (_as_str, "gauss"),
    "alpha": (_as_float, 0.5),
    "marginals": (_as_str, "linear"),
    "max_iters": (_as_int, 200_000),
    "marginal_tol": (_as_float, 1e-10),
}


def cmd_sinkhorn(cfg: dict) -> int:
    kind = _canonical_ref(cfg["ref"])
    _check_alpha(kind, cfg["alpha"])
    if cfg["S"] < 2 or cfg["D"] < 1 or cfg["N"] < 0:
        raise ConfigError("need S >= 2, D >= 1 and N >= 0")
    if cfg["S"] ** cfg["D"] > 4096:
        raise ConfigError("joint space too large for a dense plan")
    if cfg["marginals"] not in ("linear", "uniform"):
        raise ConfigError("marginals must be 'linear' or 'uniform'")
    if cfg["max_iters"] < 1 or cfg["marginal_tol"] <= 0.0:
        raise ConfigError("need positive iteration cap and tolerance")

    from .core import CategoricalDistribution, StateSpace, TimeGrid, entropy, tv_distance
    from .core import coupling_marginals
    from .eot import EotProblem, cost_from_reference, eot_objective, sinkhorn_solve, write_plan_csv

    os.makedirs(cfg["out"], exist_ok=True)
    space = StateSpace(cfg["S"], cfg["D"])
    grid = TimeGrid(cfg["N"])
    ref = _build_reference(kind, space, grid, cfg["alpha"])
    if cfg["marginals"] == "linear":
        p0, p1 = _product_linear_marginals(space)
    else:
        p0 = p1 = CategoricalDistribution.uniform(space)
    problem = EotProblem(p0, p1, cost_from_reference(ref))
    plan = sinkhorn_solve(problem, cfg["max_iters"], cfg["marginal_tol"])
    write_plan_csv(plan, os.path.join(cfg["out"], "plan.csv"))
    m0, m1 = coupling_marginals(plan)
    _write_json(os.path.join(cfg["out"], "summary.json"), {
        "objective": eot_objective(plan, problem),
        "entropy": entropy(plan),
        "marginal_tv_p0": tv_distance(m0, p0),
        "marginal_tv_p1": tv_distance(m1, p1),
    })
    return 0


_TOY2D_SCHEMA = {
    "seed": (_as_int, 0),
    "out": (_as_str, "out"),
    "S": (_as_int, 50),
    "N": (_as_int, 10),
    "ref": (_as_str, "gauss"),
    "alpha": (_as_float, 0.05),
    "loss": (_as_str, "kl"),
    "init": (_as_str, "independent"),
    "outer_iterations": (_as_int, 2),
    "updates_per_phase": (_as_int, 600),
    "batch_size": (_as_int, 256),
    "learning_rate": (_as_float, 0.4),
    "lr_final": (_as_float, None),
    "momentum": (_as_float, 0.0),
    "avg_tail": (_as_float, 0.0),
    "lambda_simple": (_as_float, 0.001),
    "mb_epsilon": (_as_float, 0.02),
    "eval_samples": (_as_int, 20_000),
    "num_trajectories": (_as_int, 200),
    "reference_samples": (_as_int, 200_000),
    "grid_low": (_as_float, -2.2),
    "grid_high": (_as_float, 2.2),
    "gaussian_std": (_as_float, 0.5),
    "swiss_roll_noise": (_as_float, 0.05),
}

_INIT_NAMES = {"independent": "independent", "minibatch": "minibatch_ot",
               "minibatch_ot": "minibatch_ot"}


def cmd_toy2d(cfg: dict) -> int:
    kind = _canonical_ref(cfg["ref"])
    _check_alpha(kind, cfg["alpha"])
    if cfg["S"] < 2 or cfg["N"] < 1:
        raise ConfigError("need S >= 2 and N >= 1")
    if cfg["loss"] not in ("kl", "mse"):
        raise ConfigError("loss must be 'kl' or 'mse'")
    if cfg["init"] not in _INIT_NAMES:
        raise ConfigError("init must be 'independent' or 'minibatch'")
    for key in ("outer_iterations", "updates_per_phase", "batch_size",
                "eval_samples", "num_trajectories", "reference_samples"):
        if cfg[key] < 1:
            raise ConfigError(f"{key} must be positive")
    if cfg["num_trajectories"] > cfg["eval_samples"]:
        raise ConfigError("num_trajectories cannot exceed eval_samples")
    if cfg["grid_high"] <= cfg["grid_low"]:
        raise ConfigError("grid box must have positive extent")

    import numpy as np

    from .core import TimeGrid, tv_distance
    from .csbm import TrainConfig, csbm_train, model_markov_chain, write_metrics_csv
    from .core import CategoricalDistribution
    from .datasets import (
        GridSpec2D,
        gaussian_grid_marginal,
        sampler_from_distribution,
        sampler_swiss_roll,
        swiss_roll_grid_marginal,
    )

    os.makedirs(cfg["out"], exist_ok=True)
    spec = GridSpec2D(cfg["S"], cfg["grid_low"], cfg["grid_high"])
    grid = TimeGrid(cfg["N"])
    ref = _build_reference(kind, spec.space, grid, cfg["alpha"])
    p0 = gaussian_grid_marginal(spec, std=cfg["gaussian_std"])
    train_cfg = TrainConfig(
        outer_iterations=cfg["outer_iterations"],
        updates_per_phase=cfg["updates_per_phase"],
        batch_size=cfg["batch_size"],
        learning_rate=cfg["learning_rate"],
        lr_final=cfg["lr_final"],
        momentum=cfg["momentum"],
        avg_tail=cfg["avg_tail"],
        lambda_simple=cfg["lambda_simple"],
        loss=cfg["loss"],
        init_coupling=_INIT_NAMES[cfg["init"]],
        mb_epsilon=cfg["mb_epsilon"],
        seed=cfg["seed"],
    )
    fwd, bwd, metrics = csbm_train(
        sampler_from_distribution(p0), sampler_swiss_roll(spec, cfg["swiss_roll_noise"]),
        ref, train_cfg)
    write_metrics_csv(metrics, os.path.join(cfg["out"], "metrics.csv"))

    seq = np.random.SeedSequence(cfg["seed"] + 1)
    rng_eval, rng_ref = (np.random.default_rng(s) for s in seq.spawn(2))
    from .csbm import _rollout_batch

    x0 = sampler_from_distribution(p0)(rng_eval, cfg["eval_samples"])
    paths = _rollout_batch(fwd, ref, x0, rng_eval)
    with open(os.path.join(cfg["out"], "samples.csv"), "w", encoding="utf-8") as fh:
        fh.write("x0_d0,x0_d1,x1_d0,x1_d1\n")
        for row0, row1 in zip(paths[:, 0], paths[:, -1]):
            fh.write(f"{row0[0]},{row0[1]},{row1[0]},{row1[1]}\n")
    with open(os.path.join(cfg["out"], "trajectories.csv"), "w", encoding="utf-8") as fh:
        fh.write("trajectory,time_index,d0,d1\n")
        for tid in range(cfg["num_trajectories"]):
            for n in range(grid.num_points):
                fh.write(f"{tid},{n},{paths[tid, n, 0]},{paths[tid, n, 1]}\n")

    chain = model_markov_chain(fwd, ref, p0)
    terminal = chain.time_marginals()[-1]
    target = swiss_roll_grid_marginal(spec, cfg["reference_samples"], rng_ref,
                                      cfg["swiss_roll_noise"])
    terminal_tv = tv_distance(CategoricalDistribution(spec.space, terminal / terminal.sum()),
                              target)
    deltas = np.diff(paths, axis=1)
    euclid = np.sqrt((deltas.astype(np.float64) ** 2).sum(axis=2))
    _write_json(os.path.join(cfg["out"], "summary.json"), {
        "terminal_tv": terminal_tv,
        "mean_step_displacement": float(euclid.mean()),
        "max_step_displacement": int(np.abs(deltas).max()),
        "loss": cfg["loss"],
        "ref": kind,
        "alpha": cfg["alpha"],
    })
    return 0


_VERIFY_SCHEMA = {
    "seed": (_as_int, 0),
    "inject_fault": (_as_bool, False),
}


def _verify_checks(seed: int, inject_fault: bool) -> list[tuple[str, bool, str]]:
    import numpy as np

    from .core import (
        CategoricalDistribution,
        Coupling,
        MarkovChainProcess,
        StateSpace,
        TimeGrid,
    )
    from .csbm import TabularEndpointModel, loss_kl_backward, loss_kl_forward
    from .datasets import marginals_linear
    from .dimf import characterization_check, dimf_init, dimf_run
    from .eot import EotProblem, cost_from_reference, sinkhorn_solve
    from .projections import (
        coupling_of_chain,
        markovian_projection,
        pairwise_joint,
        reciprocal_projection,
        reciprocal_time_marginal,
    )
    from .reference import (
        build_gaussian_reference,
        build_uniform_reference,
        cumulative_transition,
        endpoint_posterior_dims,
        forward_step_dims,
        reference_from_transitions,
    )

    results = []
    rng = np.random.default_rng(seed)

    def record(name: str, passed: bool, detail: str) -> None:
        results.append((name, passed, detail))

    # Cumulative products must compose: C[a->b] C[b->c] = C[a->c].
    space = StateSpace(6, 1)
    grid = TimeGrid(3)
    ref = build_gaussian_reference(space, grid, 0.5)
    worst = 0.0
    for a in range(0, 4):
        for b in range(a + 1, 5):
            for c in range(b + 1, 5):
                gap = np.abs(cumulative_transition(ref, a, b) @ cumulative_transition(ref, b, c)
                             - cumulative_transition(ref, a, c)).max()
                worst = max(worst, float(gap))
    record("chapman_kolmogorov", worst <= 1e-10, f"max residual {worst:.3e}")

    # Bridge rows must be laws and obey the one-step decomposition.
    worst = 0.0
    for n in range(1, 4):
        post_prev = (endpoint_posterior_dims(ref, n - 1, [1], [4]) if n > 1
                     else np.eye(6)[[1]])
        step = np.stack([forward_step_dims(ref, n, [s], [4])[0] for s in range(6)])
        post_here = endpoint_posterior_dims(ref, n, [1], [4])[0] if n <= 3 else None
        composed = post_prev[0] @ step
        if post_here is not None:
            worst = max(worst, float(np.abs(composed - post_here).max()))
    record("bridge_decomposition", worst <= 1e-10, f"max residual {worst:.3e}")

    # Markovian projection preserves pair joints and time marginals.
    space = StateSpace(4, 1)
    grid = TimeGrid(2)
    ref = build_gaussian_reference(space, grid, 0.6)
    raw = rng.random((4, 4)) + 0.05
    coupling = Coupling(space, raw / raw.sum())
    recip = reciprocal_projection(coupling, ref)
    proj = markovian_projection(recip)
    worst = 0.0
    margs = proj.time_marginals()
    for n in range(1, 4):
        w = pairwise_joint(recip, n)
        w_chain = margs[n - 1][:, None] * proj.transitions[n - 1]
        worst = max(worst, float(np.abs(w - w_chain).max()))
    for j in range(0, 4):
        worst = max(worst, float(np.abs(reciprocal_time_marginal(recip, j).probs
                                        - margs[j]).max()))
    record("projection_preservation", worst <= 1e-10, f"max residual {worst:.3e}")

    # Projecting an already-Markov process returns its own transitions.
    own_ref = reference_from_transitions(space, grid, [t for t in proj.transitions])
    again = markovian_projection(reciprocal_projection(coupling_of_chain(proj), own_ref))
    worst = float(max(np.abs(a - b).max() for a, b in zip(again.transitions, proj.transitions)))
    record("markov_idempotence", worst <= 1e-9, f"max transition gap {worst:.3e}")

    # A converged alternating-projection run passes the fixed-point check.
    space = StateSpace(5, 1)
    grid = TimeGrid(2)
    ref = build_gaussian_reference(space, grid, 0.5)
    p0, p1 = marginals_linear(5)
    plan = sinkhorn_solve(EotProblem(p0, p1, cost_from_reference(ref)))
    state = dimf_run(dimf_init(p0, p1, ref), plan, max_iters=300, kl_tol=1e-14)
    chain = state.process if isinstance(state.process, MarkovChainProcess) else \
        markovian_projection(state.process)
    if inject_fault:
        mats = [m.copy() for m in chain.transitions]
        mats[1][0] = np.roll(mats[1][0], 1)
        chain = MarkovChainProcess(chain.space, chain.grid, chain.initial, tuple(mats))
    report = characterization_check(chain, ref, 1e-6, p0, p1)
    record(
        "characterization_converged",
        report.reciprocal_residual < 1e-6 and max(report.marginal_residuals) < 1e-10,
        f"reciprocal {report.reciprocal_residual:.3e}, "
        f"marginals {max(report.marginal_residuals):.3e}",
    )

    # Analytic loss gradients match central finite differences.
    space = StateSpace(3, 1)
    grid = TimeGrid(2)
    ref = build_uniform_reference(space, grid, 0.4)
    worst = 0.0
    for trial in range(3):
        trial_rng = np.random.default_rng(1000 + trial)
        logits = trial_rng.normal(0.0, 0.5, size=(3, 3, 1, 3))
        x0 = trial_rng.integers(0, 3, size=(8, 1))
        x1 = trial_rng.integers(0, 3, size=(8, 1))
        for direction, loss_fn in (("forward", loss_kl_forward), ("backward", loss_kl_backward)):
            model = TabularEndpointModel(direction, space, grid, logits.copy())
            _, grad = loss_fn(model, ref, x0, x1, np.random.default_rng(42))
            step = 1e-5
            flat_idx = trial_rng.integers(0, logits.size, size=10)
            for idx in flat_idx:
                pos = np.unravel_index(idx, logits.shape)
                for sign in (+1.0, -1.0):
                    shifted = logits.copy()
                    shifted[pos] += sign * step
                    pert = TabularEndpointModel(direction, space, grid, shifted)
                    val, _ = loss_fn(pert, ref, x0, x1, np.random.default_rng(42))
                    if sign > 0:
                        up = val
                    else:
                        down = val
                fd = (up - down) / (2 * step)
                denom = max(1e-8, abs(fd) + abs(grad[pos]))
                worst = max(worst, abs(fd - grad[pos]) / denom)
    record("gradient_finite_difference", worst <= 1e-5, f"max relative error {worst:.3e}")

    # The alternating solver lands on the Sinkhorn plan.
    space = StateSpace(10, 1)
    grid = TimeGrid(3)
    ref = build_gaussian_reference(space, grid, 0.5)
    p0, p1 = marginals_linear(10)
    plan = sinkhorn_solve(EotProblem(p0, p1, cost_from_reference(ref)))
    state = dimf_run(dimf_init(p0, p1, ref), plan, max_iters=300, kl_tol=1e-14)
    gap = float(np.abs(state.current_coupling().probs - plan.probs).max())
    record("sinkhorn_fixed_point", gap <= 1e-6, f"max plan gap {gap:.3e}")

    return results


def cmd_verify(cfg: dict) -> int:
    try:
        results = _verify_checks(cfg["seed"], cfg["inject_fault"])
    except _numerical_errors() as exc:
        print(f"FAIL suite aborted ({exc})")
        return 3
    failed = 0
    for name, passed, detail in results:
        print(f"{'PASS' if passed else 'FAIL'} {name} ({detail})")
        failed += 0 if passed else 1
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 3


def _add_common_flags(parser: argparse.ArgumentParser, with_model_flags: bool = False,
                      with_d: bool = True) -> None:
    parser.add_argument("--config", default=None, help="JSON config file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--deterministic", action="store_true")
    parser.add_argument("--S", type=int, default=None, dest="S")
    if with_d:
        parser.add_argument("--D", type=int, default=None, dest="D")
    parser.add_argument("--N", type=int, default=None, dest="N")
    parser.add_argument("--ref", choices=("unif", "gauss"), default=None)
    parser.add_argument("--alpha", type=float, default=None)
    if with_model_flags:
        parser.add_argument("--loss", choices=("kl", "mse"), default=None)
        parser.add_argument("--init", choices=("independent", "minibatch"), default=None)


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="catbridge")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_common_flags(sub.add_parser("convergence"))
    _add_common_flags(sub.add_parser("toy2d"), with_model_flags=True, with_d=False)
    _add_common_flags(sub.add_parser("sinkhorn"))
    verify = sub.add_parser("verify")
    verify.add_argument("--config", default=None)
    verify.add_argument("--seed", type=int, default=None)
    verify.add_argument("--deterministic", action="store_true")
    verify.add_argument("--inject-fault", action="store_true", dest="inject_fault")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        _configure_threads(bool(getattr(args, "deterministic", False)))
        if args.command == "verify":
            overrides = {"seed": args.seed,
                         "inject_fault": True if args.inject_fault else None}
            return cmd_verify(_load_config(args.config, _VERIFY_SCHEMA, overrides))
        overrides = {key: getattr(args, key, None)
                     for key in ("seed", "out", "S", "D", "N", "ref", "alpha", "loss", "init")}
        if args.command == "convergence":
            return cmd_convergence(_load_config(args.config, _CONVERGENCE_SCHEMA, overrides))
        if args.command == "sinkhorn":
            return cmd_sinkhorn(_load_config(args.config, _SINKHORN_SCHEMA, overrides))
        return cmd_toy2d(_load_config(args.config, _TOY2D_SCHEMA, overrides))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except _numerical_errors() as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
