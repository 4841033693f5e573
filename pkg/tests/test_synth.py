"""Tests for the synthetic claims generator and its closed-form oracles."""

import dataclasses
import itertools
import json
from types import SimpleNamespace

import numpy as np
import pytest

from carepath import synth
from carepath.errors import (
    CalibrationError,
    DimensionError,
    ImproperPolicyError,
    IntegrityError,
)
from carepath.ingest import UNKNOWN_LABEL, CategoryDictionary
from carepath.solver import solve
from carepath.spectral import ZeroRowRule, count_frequencies, normalize_rows
from carepath.states import StateSpace


def tiny_model() -> synth.GroundTruthModel:
    """Two phases, two groups, hand-checkable expectations."""
    return synth.GroundTruthModel(
        stay=(0.5, 0.8),
        base_costs=(100.0, 200.0),
        group_multipliers=((1.0, 0.9), (1.1, 1.0)),
        stay_tilts=((0.0, 0.1), (-0.1, 0.0)),
        cost_cv=0.5,
        category_blocks=(("dxA", "dxB"), ("dxC",)),
        procedure_blocks=(("px1",), ("px2",)),
        inpatient_probs=(0.1, 0.2),
    )


def default_setup():
    model = synth.default_model()
    diagnoses = synth.model_dictionary(model)
    space = StateSpace(n_diagnoses=len(diagnoses), max_inpatient=0)
    return model, diagnoses, space


class TestGroundTruthModel:
    def test_stay_matrix_applies_tilts(self):
        np.testing.assert_allclose(
            tiny_model().stay_matrix(), [[0.5, 0.6], [0.7, 0.8]]
        )

    def test_block_transition_moves_forward_only(self):
        np.testing.assert_allclose(
            tiny_model().block_transition(1),
            [[0.6, 0.4, 0.0], [0.0, 0.8, 0.2]],
        )

    def test_expected_visits_are_geometric_means(self):
        np.testing.assert_allclose(
            tiny_model().expected_visits((0, 1)), [2.0, 5.0]
        )

    def test_expected_cost_for_phase_wise_choice(self):
        assert tiny_model().expected_cost((0, 1)) == pytest.approx(
            2.0 * 100.0 * 1.0 + 5.0 * 200.0 * 1.0
        )

    def test_behavior_cost_averages_constant_group_policies(self):
        group0 = 2.0 * 100.0 * 1.0 + (1.0 / 0.3) * 200.0 * 1.1
        group1 = 2.5 * 100.0 * 0.9 + 5.0 * 200.0 * 1.0
        assert tiny_model().expected_cost(None) == pytest.approx((group0 + group1) / 2)

    def test_optimal_groups_minimize_episode_cost(self):
        model = tiny_model()
        best = min(
            itertools.product(range(2), repeat=2), key=model.expected_cost
        )
        assert model.optimal_groups() == best == (0, 0)

    def test_validate_rejects_mismatched_lengths(self):
        model = dataclasses.replace(tiny_model(), base_costs=(100.0,))
        with pytest.raises(DimensionError):
            model.validate()

    def test_validate_rejects_overlapping_pools(self):
        model = dataclasses.replace(
            tiny_model(), category_blocks=(("dxA",), ("dxA",))
        )
        with pytest.raises(IntegrityError):
            model.validate()

    def test_validate_rejects_degenerate_stay(self):
        model = dataclasses.replace(
            tiny_model(), stay_tilts=((0.0, 0.5), (-0.1, 0.0))
        )
        with pytest.raises(DimensionError):
            model.validate()

    def test_validate_rejects_bad_overlap_prob(self):
        model = dataclasses.replace(tiny_model(), overlap_prob=1.5)
        with pytest.raises(DimensionError):
            model.validate()


class TestDefaultModel:
    def test_dimensions_and_category_pools(self):
        model = synth.default_model()
        model.validate()
        assert model.n_blocks == 3
        assert model.n_groups == 3
        assert len(model.categories()) == 45 + 46 + 46
        block_of = model.block_of_category()
        for b, pool in enumerate(model.category_blocks):
            assert all(block_of[label] == b for label in pool)

    def test_each_phase_prefers_a_different_group(self):
        model = synth.default_model()
        assert model.optimal_groups() == (0, 1, 2)
        brute = min(itertools.product(range(3), repeat=3), key=model.expected_cost)
        assert brute == (0, 1, 2)

    def test_closed_form_costs_match_independent_arithmetic(self):
        model = synth.default_model()
        spread = {0: 0.85, 1: 1.00, 2: 1.15}
        tilt = {0: -0.02, 1: 0.0, 2: 0.02}
        stay = (0.88, 0.88, 0.92)
        base = (352.0, 1056.0, 605.0)

        def episode_cost(groups):
            total = 0.0
            for b, j in enumerate(groups):
                rotation = (j - b) % 3
                hazard = 1.0 - (stay[b] + tilt[rotation])
                total += base[b] * spread[rotation] / hazard
            return total

        behavior = sum(episode_cost((j, j, j)) for j in range(3)) / 3
        assert model.expected_cost(None) == pytest.approx(behavior, rel=1e-12)
        optimal = episode_cost((0, 1, 2))
        assert model.expected_cost((0, 1, 2)) == pytest.approx(optimal, rel=1e-12)
        assert behavior == pytest.approx(20_258.25, abs=0.5)
        assert optimal == pytest.approx(13_691.07, abs=0.5)


class TestGenerateEpisodes:
    def test_deterministic_given_seed(self):
        model = synth.default_model()
        config = synth.SynthConfig(n_episodes=12, seed=5)
        first, truth_a = synth.generate_episodes(model, config)
        second, truth_b = synth.generate_episodes(model, config)
        assert first == second
        assert truth_a == truth_b

    def test_episode_structure(self):
        model = synth.default_model()
        episodes, truth = synth.generate_episodes(
            model, synth.SynthConfig(n_episodes=30, seed=1)
        )
        assert len(episodes) == 30
        categories = set(model.categories())
        for ep in episodes:
            assert ep.episode_id.startswith("ep")
            assert ep.physician_id.startswith("phy")
            assert ep.beneficiary_id.startswith("bene")
            assert 1 <= ep.n_claims <= model.max_claims
            assert ep.start_day == ep.claims[0].start_day
            assert ep.total_cost == pytest.approx(
                sum(c.cost for c in ep.claims), abs=0.005
            )
            days = [c.start_day for c in ep.claims]
            assert all(later > earlier for earlier, later in zip(days, days[1:]))
            for c in ep.claims:
                assert c.cost > 0.0
                assert (c.end_day > c.start_day) == c.inpatient
                assert c.diagnosis_category in categories
        assert truth["schema"] == synth.GROUND_TRUTH_SCHEMA
        assert truth["optimal_groups"] == [0, 1, 2]
        assert set(truth["physician_groups"]) == {f"phy{p:03d}" for p in range(37)}
        assert 1 <= truth["claims_range"][0] <= truth["claims_range"][1] <= 56

    def test_calibration_gate_detects_cost_drift(self, monkeypatch):
        inflated = dataclasses.replace(
            synth.default_model(), base_costs=(1056.0, 3168.0, 1815.0)
        )
        monkeypatch.setattr(synth, "CALIBRATION_MIN_EPISODES", 64)
        synth.generate_episodes(inflated, synth.SynthConfig(n_episodes=63, seed=0))
        with pytest.raises(CalibrationError):
            synth.generate_episodes(inflated, synth.SynthConfig(n_episodes=64, seed=0))

    def test_realized_mean_cost_hits_target(self):
        model = synth.default_model()
        _, truth = synth.generate_episodes(
            model, synth.SynthConfig(n_episodes=10_000, seed=0)
        )
        drift = abs(truth["empirical_mean_cost"] - model.target_mean_cost)
        assert drift / model.target_mean_cost <= 0.05


class TestGenerateClaims:
    def test_writes_csv_and_ground_truth_sidecar(self, tmp_path):
        csv_path = tmp_path / "claims.csv"
        truth = synth.generate_claims(
            synth.default_model(), synth.SynthConfig(n_episodes=6, seed=3), csv_path
        )
        assert csv_path.exists()
        sidecar = tmp_path / "claims.ground_truth.json"
        assert json.loads(sidecar.read_text()) == truth

    def test_sidecar_path_override(self, tmp_path):
        sidecar = tmp_path / "truth.json"
        synth.generate_claims(
            synth.default_model(),
            synth.SynthConfig(n_episodes=4, seed=2),
            tmp_path / "claims.csv",
            sidecar_path=sidecar,
        )
        assert sidecar.exists()


class TestGroundTruthGrouping:
    def test_round_trip_from_truth_record(self):
        model = synth.default_model()
        episodes, truth = synth.generate_episodes(
            model, synth.SynthConfig(n_episodes=30, seed=4)
        )
        grouping = synth.ground_truth_grouping(truth, episodes)
        assert grouping.n_groups == 3
        for ep in episodes:
            expected = truth["physician_groups"][ep.physician_id]
            assert grouping.group_of(ep.physician_id) == expected


class TestBulkSampler:
    def test_dictionary_covers_model_without_unknown_slot(self):
        model = synth.default_model()
        diagnoses = synth.model_dictionary(model)
        assert len(diagnoses) == 137
        assert UNKNOWN_LABEL not in diagnoses.labels
        assert list(diagnoses.labels) == sorted(diagnoses.labels)

    def test_deterministic_given_seed(self):
        model = synth.default_model()
        first, _, _ = synth.generate_transition_samples(model, 25, seed=7)
        second, _, _ = synth.generate_transition_samples(model, 25, seed=7)
        np.testing.assert_array_equal(first.states, second.states)
        np.testing.assert_array_equal(first.next_states, second.next_states)
        np.testing.assert_array_equal(first.costs, second.costs)

    def test_episode_semantics(self):
        model = synth.default_model()
        dataset, diagnoses, space = synth.generate_transition_samples(
            model, 40, seed=2
        )
        assert dataset.n >= 40
        assert (dataset.costs > 0.0).all()
        assert (dataset.states != space.terminal).all()
        for e in range(40):
            mask = dataset.episode_index == e
            assert (dataset.actions[mask] == e % model.n_groups).all()
            order = np.argsort(dataset.positions[mask])
            states = dataset.states[mask][order]
            nxt = dataset.next_states[mask][order]
            np.testing.assert_array_equal(
                dataset.positions[mask][order], np.arange(mask.sum())
            )
            np.testing.assert_array_equal(nxt[:-1], states[1:])
            assert nxt[-1] == space.terminal
            assert mask.sum() <= model.max_claims

    def test_inpatient_counter_is_monotone_and_capped(self):
        model = synth.default_model()
        dataset, _, space = synth.generate_transition_samples(
            model, 30, seed=1, max_inpatient=2
        )
        assert space.max_inpatient == 2
        for e in range(30):
            mask = dataset.episode_index == e
            order = np.argsort(dataset.positions[mask])
            counts = [space.decode(s)[1] for s in dataset.states[mask][order]]
            assert all(0 <= c <= 2 for c in counts)
            assert all(b >= a for a, b in zip(counts, counts[1:]))


class TestOraclePartition:
    def test_labels_phases_and_terminal(self):
        model = synth.default_model()
        diagnoses = CategoryDictionary.from_observed(
            model.categories(), reserve_unknown=True
        )
        space = StateSpace(n_diagnoses=len(diagnoses), max_inpatient=1)
        labels = synth.oracle_partition(model, space, diagnoses)
        assert labels[space.terminal] == model.n_blocks
        block_of = model.block_of_category()
        for d, label in enumerate(diagnoses.labels):
            expected = block_of.get(label, 0)
            assert labels[space.index(d, 0)] == expected
            assert labels[space.index(d, 1)] == expected
        unknown = diagnoses.index_of(UNKNOWN_LABEL)
        assert labels[space.index(unknown, 0)] == 0


class TestTrueMdp:
    def test_rows_are_stochastic_and_costs_block_constant(self):
        model, diagnoses, space = default_setup()
        mdp = synth.true_mdp(model, space, diagnoses)
        np.testing.assert_allclose(mdp.transition.sum(axis=2), 1.0, atol=1e-12)
        labels = synth.oracle_partition(model, space, diagnoses)
        base = np.asarray(model.base_costs)
        multipliers = np.asarray(model.group_multipliers)
        for s in range(space.n_states - 1):
            np.testing.assert_array_equal(
                mdp.cost[s], base[labels[s]] * multipliers[labels[s]]
            )
        assert (mdp.cost[space.terminal] == 0.0).all()
        assert mdp.transition[0, space.terminal, space.terminal] == 1.0

    def test_value_iteration_recovers_analytic_phase_costs(self):
        model, diagnoses, space = default_setup()
        mdp = synth.true_mdp(model, space, diagnoses)
        result, policy = solve(mdp, tol=1e-9)
        labels = synth.oracle_partition(model, space, diagnoses)
        optimal = model.optimal_groups()
        per_phase = (
            model.expected_visits(optimal)
            * np.asarray(model.base_costs)
            * np.asarray(model.group_multipliers)[np.arange(3), list(optimal)]
        )
        tails = np.cumsum(per_phase[::-1])[::-1]
        for s in range(space.n_states):
            expected = 0.0 if s == space.terminal else tails[labels[s]]
            assert result.values[s] == pytest.approx(expected, abs=1e-6)
            if s != space.terminal:
                assert policy.actions[s] == optimal[labels[s]]

    def test_overlap_has_no_exact_mdp(self):
        model, diagnoses, space = default_setup()
        blurred = dataclasses.replace(model, overlap_prob=0.1)
        with pytest.raises(DimensionError):
            synth.true_mdp(blurred, space, diagnoses)

    def test_dictionary_must_cover_every_phase(self):
        model = synth.default_model()
        diagnoses = CategoryDictionary.from_observed(["dx000"])
        space = StateSpace(n_diagnoses=len(diagnoses), max_inpatient=0)
        with pytest.raises(DimensionError):
            synth.true_mdp(model, space, diagnoses)


class TestPooledStateMatrix:
    def test_rows_are_phase_constant_distributions(self):
        model, diagnoses, space = default_setup()
        pooled = synth.pooled_state_matrix(model, space, diagnoses)
        np.testing.assert_allclose(pooled.sum(axis=1), 1.0, atol=1e-12)
        labels = synth.oracle_partition(model, space, diagnoses)
        for b in range(model.n_blocks):
            members = [
                s for s in range(space.n_states - 1) if labels[s] == b
            ]
            for s in members[1:]:
                np.testing.assert_array_equal(pooled[s], pooled[members[0]])
        assert pooled[space.terminal, space.terminal] == 1.0

    def test_sampled_frequencies_concentrate_on_pooled_rows(self):
        model = synth.default_model()
        dataset, diagnoses, space = synth.generate_transition_samples(
            model, 4_000, seed=11
        )
        counts = count_frequencies(dataset)
        rows = normalize_rows(counts, zero_row_rule=ZeroRowRule.UNIFORM)
        pooled = synth.pooled_state_matrix(model, space, diagnoses)
        assert np.abs(rows - pooled).max() < 0.05


class TestRandomProperMdp:
    def test_structure_and_guaranteed_exit_mass(self):
        rng = np.random.default_rng(0)
        mdp = synth.random_proper_mdp(6, 3, rng, terminal_mass=0.1)
        assert mdp.transition.shape == (3, 6, 6)
        np.testing.assert_allclose(mdp.transition.sum(axis=2), 1.0, atol=1e-12)
        assert (mdp.transition[:, :-1, -1] >= 0.1 - 1e-12).all()
        assert (mdp.transition[:, -1, -1] == 1.0).all()
        assert (mdp.cost[-1] == 0.0).all()

    def test_requires_a_non_terminal_state(self):
        with pytest.raises(DimensionError):
            synth.random_proper_mdp(1, 2, np.random.default_rng(0))


class TestOracleValue:
    def test_hand_worked_two_action_chain(self):
        transition = np.zeros((2, 3, 3))
        transition[0, 0, 1] = 1.0
        transition[0, 1, 2] = 1.0
        transition[1, 0, 2] = 1.0
        transition[1, 1, 2] = 1.0
        transition[:, 2, 2] = 1.0
        cost = np.array([[10.0, 12.0], [5.0, 1.0], [0.0, 0.0]])
        values, policy = synth.oracle_value(
            SimpleNamespace(transition=transition, cost=cost)
        )
        np.testing.assert_allclose(values, [11.0, 1.0, 0.0])
        np.testing.assert_array_equal(policy, [0, 1, 0])

    def test_improper_policies_are_skipped(self):
        transition = np.zeros((2, 2, 2))
        transition[0, 0, 0] = 1.0  # action 0 never leaves state 0
        transition[1, 0, 1] = 1.0
        transition[:, 1, 1] = 1.0
        cost = np.array([[3.0, 7.0], [0.0, 0.0]])
        values, policy = synth.oracle_value(
            SimpleNamespace(transition=transition, cost=cost)
        )
        np.testing.assert_allclose(values, [7.0, 0.0])
        assert policy[0] == 1

    def test_no_proper_policy_is_an_error(self):
        transition = np.zeros((1, 2, 2))
        transition[0, 0, 0] = 1.0
        transition[0, 1, 1] = 1.0
        cost = np.array([[1.0], [0.0]])
        with pytest.raises(ImproperPolicyError):
            synth.oracle_value(SimpleNamespace(transition=transition, cost=cost))

    def test_refuses_oversized_enumeration(self):
        transition = np.zeros((3, 14, 14))
        cost = np.zeros((14, 3))
        with pytest.raises(DimensionError):
            synth.oracle_value(SimpleNamespace(transition=transition, cost=cost))
