"""Acceptance suite: eight end-to-end criteria with stated tolerances.

Each test prints a single "ACCEPTANCE n: PASS/FAIL" line (bypassing capture)
before asserting, so the run log shows every criterion's verdict and the
measured numbers behind it.
"""

import time
from types import SimpleNamespace

import numpy as np
from sklearn.metrics import adjusted_rand_score

from carepath import simulate, synth
from carepath.ingest import build_dictionaries, extract_transitions, initial_state_distribution
from carepath.kernel import KernelSpec, KernelVariant, build_empirical_mdp
from carepath.simulate import (
    CvConfig,
    GapModel,
    RolloutConfig,
    cross_validate,
    episode_premium,
    evaluate_policy,
    forecast_pathway,
)
from carepath.solver import extract_policy, solve, value_iteration
from carepath.spectral import (
    ZeroRowRule,
    count_frequencies,
    cluster_states,
    normalize_rows,
    singleton_partition,
    top_right_singular_vectors,
)
from carepath.states import StateSpace

from test_kernel import empirical_oracle, random_dataset
from test_spectral import brute_force_sse, cluster_points


def verdict(capsys, number, passed, detail):
    with capsys.disabled():
        print(f"\nACCEPTANCE {number}: {'PASS' if passed else 'FAIL'} - {detail}")


def fit_policy(episodes, grouping, seed):
    """The pipeline's training path: states -> features -> partition -> MDP -> policy."""
    diagnoses, procedures = build_dictionaries(episodes)
    space = StateSpace(n_diagnoses=len(diagnoses), max_inpatient=0)
    dataset = extract_transitions(episodes, grouping, space, diagnoses, procedures)
    frequencies = count_frequencies(dataset)
    matrix = normalize_rows(
        frequencies, ZeroRowRule.UNIFORM, terminal=space.terminal
    )
    features = top_right_singular_vectors(matrix, 3)
    partition = cluster_states(features, 3, seed=seed, terminal=space.terminal)
    mdp = build_empirical_mdp(
        dataset, KernelSpec(KernelVariant.PARTITION, partition=partition),
        n_groups=grouping.n_groups,
    )
    _, policy = solve(mdp)
    return policy, dataset, space, diagnoses


def test_acceptance_1_solver_matches_exhaustive_oracle(capsys):
    started = time.monotonic()
    rng = np.random.default_rng(2026)
    value_gap = 0.0
    q_gap = 0.0
    for _ in range(100):
        n_states = int(rng.integers(2, 7))
        n_groups = int(rng.integers(1, 4))
        mdp = synth.random_proper_mdp(n_states, n_groups, rng)
        oracle_values, _ = synth.oracle_value(mdp)
        result = value_iteration(mdp, tol=1e-10)
        policy = extract_policy(mdp, result.values)
        value_gap = max(value_gap, float(np.abs(result.values - oracle_values).max()))
        q_star = mdp.cost.T + mdp.transition @ oracle_values
        chosen = q_star[policy.actions, np.arange(n_states)]
        q_gap = max(q_gap, float((chosen - q_star.min(axis=0)).max()))
    elapsed = time.monotonic() - started
    passed = value_gap <= 1e-8 and q_gap <= 1e-6 and elapsed < 10.0
    verdict(
        capsys, 1, passed,
        f"100 random proper MDPs: value sup-norm {value_gap:.2e} (<=1e-8), "
        f"policy Q-gap {q_gap:.2e} (<=1e-6), {elapsed:.1f}s (<10s)",
    )
    assert value_gap <= 1e-8
    assert q_gap <= 1e-6
    assert elapsed < 10.0


def test_acceptance_2_singleton_kernel_equals_empirical_estimates(capsys):
    started = time.monotonic()
    exact = 0
    for seed in range(20):
        dataset = random_dataset(seed, n_samples=150, n_diagnoses=4, n_groups=3)
        mdp = build_empirical_mdp(
            dataset,
            KernelSpec(
                KernelVariant.PARTITION,
                partition=singleton_partition(dataset.space),
            ),
            n_groups=dataset.n_groups,
        )
        transition, cost = empirical_oracle(dataset, dataset.n_groups)
        exact += np.array_equal(mdp.transition, transition) and np.array_equal(
            mdp.cost, cost
        )
    elapsed = time.monotonic() - started
    passed = exact == 20 and elapsed < 5.0
    verdict(
        capsys, 2, passed,
        f"singleton-block estimates exactly equal empirical frequencies/means "
        f"on {exact}/20 random datasets, {elapsed:.1f}s (<5s)",
    )
    assert exact == 20
    assert elapsed < 5.0


def test_acceptance_3_spectral_compression_recovers_true_partition(capsys):
    started = time.monotonic()
    model = synth.default_model()
    hits = 0
    min_samples = None
    for seed in range(20):
        dataset, diagnoses, space = synth.generate_transition_samples(
            model, 3_800, seed=seed
        )
        min_samples = dataset.n if min_samples is None else min(min_samples, dataset.n)
        frequencies = count_frequencies(dataset)
        matrix = normalize_rows(
            frequencies, ZeroRowRule.UNIFORM, terminal=space.terminal
        )
        features = top_right_singular_vectors(matrix, 3)
        partition = cluster_states(features, 3, seed=seed, terminal=space.terminal)
        truth = synth.oracle_partition(model, space, diagnoses)
        ari = adjusted_rand_score(
            truth[: space.terminal], partition.labels[: space.terminal]
        )
        hits += ari == 1.0
    elapsed = time.monotonic() - started
    passed = hits >= 18 and min_samples >= 100_000 and elapsed < 60.0
    verdict(
        capsys, 3, passed,
        f"ARI 1.0 in {hits}/20 seeds (>=18) at >=1e5 transitions per seed "
        f"(min {min_samples}), {elapsed:.1f}s (<60s)",
    )
    assert min_samples >= 100_000
    assert hits >= 18
    assert elapsed < 60.0


def test_acceptance_4_cross_validation_selects_true_k(capsys):
    started = time.monotonic()
    model = synth.default_model()
    episodes, truth = synth.generate_episodes(
        model, synth.SynthConfig(n_episodes=212, seed=0)
    )
    grouping = synth.ground_truth_grouping(truth, episodes)
    diagnoses, _ = build_dictionaries(episodes)
    space = StateSpace(n_diagnoses=len(diagnoses), max_inpatient=0)
    wins = 0
    in_sample_k2 = []
    in_sample_k9 = []
    for master in range(20):
        config = CvConfig(
            seed=master, repeats=50, rollouts=100,
            zero_row_rule=ZeroRowRule.UNIFORM,
        )
        report = cross_validate(
            episodes, space, diagnoses, list(range(2, 10)), 3, config,
            grouping=grouping,
        )
        wins += report.selected_k == 3
        in_sample_k2.append(report.in_sample[2].mean_cost)
        in_sample_k9.append(report.in_sample[9].mean_cost)
    elapsed = time.monotonic() - started
    mean_k2 = float(np.mean(in_sample_k2))
    mean_k9 = float(np.mean(in_sample_k9))
    passed = wins > 10 and mean_k9 <= mean_k2 and elapsed < 900.0
    verdict(
        capsys, 4, passed,
        f"out-of-sample CV minimum at k=3 in {wins}/20 master seeds (majority), "
        f"in-sample mean {mean_k9:.0f} at k=9 <= {mean_k2:.0f} at k=2, "
        f"{elapsed:.0f}s (<900s)",
    )
    assert wins > 10
    assert mean_k9 <= mean_k2
    assert elapsed < 900.0


def test_acceptance_5_optimized_policy_beats_behavior(capsys):
    started = time.monotonic()
    model = synth.default_model()
    margin_hits = 0
    premium_hits = 0
    for seed in range(20):
        episodes, truth = synth.generate_episodes(
            model, synth.SynthConfig(n_episodes=212, seed=seed)
        )
        grouping = synth.ground_truth_grouping(truth, episodes)
        policy, dataset, space, diagnoses = fit_policy(episodes, grouping, seed)
        referee = synth.true_mdp(model, space, diagnoses)
        config = RolloutConfig(
            seed=seed, repeats=50, rollouts=100,
            start_distribution=initial_state_distribution(dataset),
        )
        optimized = evaluate_policy(referee, policy.actions, config)
        behavior = evaluate_policy(referee, None, config)
        margin = behavior.mean_cost - optimized.mean_cost
        margin_hits += margin > max(optimized.ci95_cost, behavior.ci95_cost)
        premium_hits += optimized.mean_premium < behavior.mean_premium
    elapsed = time.monotonic() - started
    passed = margin_hits >= 18 and premium_hits >= 18 and elapsed < 300.0
    verdict(
        capsys, 5, passed,
        f"cost margin beats both 95% CIs in {margin_hits}/20 seeds (>=18), "
        f"premium strictly lower in {premium_hits}/20 (>=18), "
        f"{elapsed:.0f}s (<300s)",
    )
    assert margin_hits >= 18
    assert premium_hits >= 18
    assert elapsed < 300.0


def test_acceptance_6_default_evaluation_budget_is_200000_episodes(capsys, monkeypatch):
    counter = {"episodes": 0, "batches": 0}
    original = simulate._simulate_batch

    def counting_batch(cdf, cost, policy, start_distribution, rollouts, max_steps, rng):
        counter["episodes"] += rollouts
        counter["batches"] += 1
        return original(cdf, cost, policy, start_distribution, rollouts, max_steps, rng)

    monkeypatch.setattr(simulate, "_simulate_batch", counting_batch)
    mdp = SimpleNamespace(
        transition=np.array([[[0.0, 1.0], [0.0, 1.0]]]),
        cost=np.array([[3.0], [0.0]]),
    )
    config = RolloutConfig(start_distribution=np.array([1.0, 0.0]))
    stats = evaluate_policy(mdp, None, config)
    passed = (
        counter["episodes"] == 200_000
        and counter["batches"] == 500
        and stats.episodes_simulated == 200_000
    )
    verdict(
        capsys, 6, passed,
        f"default evaluation simulated {counter['episodes']} episodes in "
        f"{counter['batches']} batches (expected 500 x 400 = 200,000)",
    )
    assert counter["episodes"] == 200_000
    assert counter["batches"] == 500
    assert stats.episodes_simulated == 200_000


def test_acceptance_7_forecast_matches_linear_algebra(capsys):
    rng = np.random.default_rng(7)
    mdp = synth.random_proper_mdp(5, 2, rng)
    policy = np.zeros(5, dtype=np.int64)
    start = np.zeros(5)
    start[0] = 1.0
    horizon = 12
    forecast = forecast_pathway(
        mdp, policy, start, start_day=0, horizon_days=horizon,
        n_trajectories=10_000, gap_model=GapModel.constant(1), seed=0,
    )
    row_error = float(np.abs(forecast.matrix.sum(axis=1) - 1.0).max())
    terminal_mass = forecast.matrix[:, -1]
    monotone = bool((np.diff(terminal_mass) >= 0.0).all())
    absorption_error = 0.0
    power = np.eye(5)
    for day in range(horizon + 1):
        absorption_error = max(
            absorption_error, abs(float(terminal_mass[day]) - float(power[0, -1]))
        )
        power = power @ mdp.transition[0]
    passed = row_error <= 1e-9 and monotone and absorption_error <= 0.02
    verdict(
        capsys, 7, passed,
        f"rows sum to 1 within {row_error:.1e} (<=1e-9), terminal mass "
        f"non-decreasing: {monotone}, absorption vs matrix powers within "
        f"{absorption_error:.4f} (<=0.02) at 10,000 trajectories",
    )
    assert row_error <= 1e-9
    assert monotone
    assert absorption_error <= 0.02


def test_acceptance_8_numerical_invariants(capsys):
    started = time.monotonic()

    # Empirical-MDP invariants on random datasets and analytic models.
    mdp_checks = True
    for seed in range(5):
        dataset = random_dataset(seed, n_samples=100, n_diagnoses=3, n_groups=2)
        mdp = build_empirical_mdp(
            dataset,
            KernelSpec(
                KernelVariant.PARTITION,
                partition=singleton_partition(dataset.space),
            ),
            n_groups=dataset.n_groups,
        )
        mdp.validate()
        term = mdp.space.terminal
        mdp_checks &= bool(np.abs(mdp.transition.sum(axis=2) - 1.0).max() <= 1e-12)
        mdp_checks &= bool((mdp.transition >= 0.0).all())
        mdp_checks &= bool((mdp.transition[:, term, term] == 1.0).all())
        mdp_checks &= bool((mdp.cost >= 0.0).all() and (mdp.cost[term] == 0.0).all())
    model = synth.default_model()
    diagnoses = synth.model_dictionary(model)
    space = StateSpace(n_diagnoses=len(diagnoses), max_inpatient=0)
    synth.true_mdp(model, space, diagnoses).validate()

    # Best-of-restarts clustering is optimal on brute-forceable instances.
    kmeans_checks = True
    rng = np.random.default_rng(1)
    for n_points, k in [(6, 2), (7, 3), (8, 3), (8, 4)]:
        points = rng.normal(size=(n_points, 2))
        partition = cluster_points(points, k)
        optimum = brute_force_sse(points, k)
        kmeans_checks &= bool(partition.objective <= optimum * (1.0 + 1e-9))

    # Full-rank SVD factorization residual.
    matrix = rng.random((12, 12))
    matrix /= matrix.sum(axis=1, keepdims=True)
    features = top_right_singular_vectors(matrix, 12)
    residual = float(
        np.linalg.norm(matrix - matrix @ features.features @ features.features.T)
    )

    # Premium formula spot values.
    premium_checks = (
        episode_premium(30_000.0) == 4_435.0
        and episode_premium(25_565.0) == 0.0
        and episode_premium(26_000.0) == 435.0
    )

    elapsed = time.monotonic() - started
    passed = (
        mdp_checks
        and kmeans_checks
        and residual <= 1e-10
        and premium_checks
        and elapsed < 30.0
    )
    verdict(
        capsys, 8, passed,
        f"MDP invariants: {mdp_checks}, k-means matches brute force: "
        f"{kmeans_checks}, full-rank SVD residual {residual:.1e} (<=1e-10), "
        f"premium spots 30000->4435 and 25565->0: {premium_checks}, "
        f"{elapsed:.1f}s (<30s)",
    )
    assert mdp_checks
    assert kmeans_checks
    assert residual <= 1e-10
    assert premium_checks
    assert elapsed < 30.0
