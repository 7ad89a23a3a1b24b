"""Tests for src.oracles module."""

import numpy as np
import pytest

from src.oracles import (
    FIGURE_CASES,
    UNIFORM_BLUE_PRIOR,
    Agent,
    AmbiguitySet,
    Choice,
    DefaultPolicyRule,
    Lottery,
    ModelClass,
    ambiguity_value,
    bayes_value,
    choose,
    compare,
    ellsberg_switch_test,
    eu_value,
    mixture,
    risk_value,
    table1_choices,
    table1_rows,
    total_payoff_moments,
)

L, R, I, U = Choice.LEFT, Choice.RIGHT, Choice.INDIFFERENT, Choice.UNDEFINED


class TestLottery:
    """Tests for Lottery validation and helpers."""

    def test_rejects_empty(self):
        """Test that a lottery needs at least one outcome."""
        with pytest.raises(ValueError, match="at least one outcome"):
            Lottery(())

    def test_rejects_unnormalized(self):
        """Test that probabilities must sum to one."""
        with pytest.raises(ValueError, match="sum to"):
            Lottery(((0.5, 1.0), (0.4, -1.0)))

    def test_from_counts(self):
        """Test building a lottery from box contents."""
        lottery = Lottery.from_counts({1.0: 3, -1.0: 7})
        np.testing.assert_allclose(lottery.probabilities(), [0.3, 0.7])
        np.testing.assert_allclose(lottery.payoffs(), [1.0, -1.0])

    def test_unknown_payoffs_cannot_be_valued(self):
        """Test that a lottery with blue marbles refuses to produce payoffs."""
        lottery = Lottery.from_counts({None: 10})
        assert lottery.has_unknown
        with pytest.raises(ValueError, match="unknown payoffs"):
            lottery.payoffs()

    def test_resolve(self):
        """Test substituting unknown payoffs."""
        lottery = Lottery.from_counts({1.0: 2, None: 8}).resolve(-1.0)
        assert eu_value(lottery) == pytest.approx(-0.6)


class TestEuValue:
    """Tests for eu_value function."""

    def test_case_a(self):
        """Test the expected payoffs of the two boxes in case a."""
        boxes = FIGURE_CASES["a"]
        assert eu_value(boxes.left) == pytest.approx(-0.4)
        assert eu_value(boxes.right) == pytest.approx(0.4)

    def test_degenerate(self):
        """Test a single certain outcome."""
        assert eu_value(Lottery(((1.0, 0.0),))) == 0.0

    def test_case_b_right(self):
        """Test the zero-mean coin flip box."""
        assert eu_value(FIGURE_CASES["b"].right) == pytest.approx(0.0)

    def test_payoff_function(self):
        """Test that a payoff function transforms outcomes before averaging."""
        assert eu_value(FIGURE_CASES["a"].right, payoff=lambda r: 2 * r) == pytest.approx(0.8)


class TestRiskValue:
    """Tests for risk_value function."""

    def test_case_a_variance(self):
        """Test that both boxes of case a have variance 0.84."""
        boxes = FIGURE_CASES["a"]
        assert risk_value(boxes.left, -1.0) == pytest.approx(-0.4 - 0.84)
        assert risk_value(boxes.right, -1.0) == pytest.approx(0.4 - 0.84)

    def test_case_b_right(self):
        """Test the unit-variance coin flip box."""
        assert risk_value(FIGURE_CASES["b"].right, -1.0) == pytest.approx(-1.0)

    def test_zero_beta_equals_eu(self):
        """Test the risk-neutral limit on random lotteries."""
        rng = np.random.default_rng(0)
        for _ in range(200):
            n = rng.integers(1, 6)
            probs = rng.dirichlet(np.ones(n))
            probs[-1] = 1.0 - probs[:-1].sum()
            lottery = Lottery(tuple(zip(probs.tolist(), rng.normal(size=n).tolist())))
            assert risk_value(lottery, 0.0) == pytest.approx(eu_value(lottery), abs=1e-12)

    def test_risk_averse_prefers_lower_variance(self):
        """Test that negative beta prefers the narrower of two equal-mean lotteries."""
        narrow = Lottery.from_counts({0.5: 1, -0.5: 1})
        wide = Lottery.from_counts({2.0: 1, -2.0: 1})
        assert risk_value(narrow, -0.5) > risk_value(wide, -0.5)


class TestBayesValue:
    """Tests for bayes_value function."""

    def test_uniform_prior_case_c(self):
        """Test that the all-blue box has zero mean under the uniform prior."""
        mc = ModelClass.from_box(FIGURE_CASES["c"].right)
        assert bayes_value(UNIFORM_BLUE_PRIOR, mc) == pytest.approx(0.0)

    def test_point_mass_equals_model_value(self):
        """Test that a point-mass prior recovers one model's expected payoff."""
        mc = ModelClass.from_box(FIGURE_CASES["d"].right)
        for i, model in enumerate(mc.models):
            prior = np.eye(len(mc.models))[i]
            assert bayes_value(prior, mc) == pytest.approx(eu_value(model))

    def test_dimension_mismatch(self):
        """Test that the prior must cover every model."""
        mc = ModelClass.from_box(FIGURE_CASES["c"].right)
        with pytest.raises(ValueError, match="dimension"):
            bayes_value([0.5, 0.5], mc)


class TestTotalPayoffMoments:
    """Tests for total_payoff_moments function."""

    def test_case_c(self):
        """Test ten blue marbles: zero mean, variance 20/3."""
        mean, variance = total_payoff_moments({None: 10})
        assert mean == pytest.approx(0.0)
        assert variance == pytest.approx(20 / 3)

    def test_case_d(self):
        """Test two green, two red and six blue marbles: zero mean, variance 4."""
        mean, variance = total_payoff_moments({1.0: 2, -1.0: 2, None: 6})
        assert mean == pytest.approx(0.0)
        assert variance == pytest.approx(4.0)


class TestAmbiguityValue:
    """Tests for ambiguity_value function."""

    def test_singleton_equals_bayes(self):
        """Test that a single prior reduces to the Bayes value."""
        mc = ModelClass.from_box(FIGURE_CASES["d"].right)
        prior = (0.2, 0.5, 0.3)
        assert ambiguity_value(AmbiguitySet((prior,)), mc) == pytest.approx(bayes_value(prior, mc))

    def test_worst_case_case_c(self):
        """Test that the all-blue box is worth its worst interpretation."""
        mc = ModelClass.from_box(FIGURE_CASES["c"].right)
        assert ambiguity_value(AmbiguitySet.point_masses(3), mc) == pytest.approx(-1.0)

    def test_monotone_under_inclusion(self):
        """Test that adding priors never increases the value."""
        rng = np.random.default_rng(1)
        mc = ModelClass.from_box(FIGURE_CASES["d"].right)
        delta = AmbiguitySet((UNIFORM_BLUE_PRIOR,))
        value = ambiguity_value(delta, mc)
        for _ in range(20):
            prior = rng.dirichlet(np.ones(3))
            prior[-1] = 1.0 - prior[:-1].sum()
            delta = delta.with_prior(prior)
            new_value = ambiguity_value(delta, mc)
            assert new_value <= value + 1e-12
            value = new_value

    def test_empty_set_rejected(self):
        """Test that an empty ambiguity set is invalid."""
        with pytest.raises(ValueError, match="at least one prior"):
            AmbiguitySet(())


class TestMixture:
    """Tests for mixture function."""

    def test_uniform_blue(self):
        """Test the predictive lottery of an all-blue box under the uniform prior."""
        lottery = mixture(UNIFORM_BLUE_PRIOR, ModelClass.from_box(FIGURE_CASES["c"].right))
        assert eu_value(lottery) == pytest.approx(0.0)
        assert risk_value(lottery, -1.0) == pytest.approx(-2 / 3)


class TestCompare:
    """Tests for compare function."""

    def test_tolerance(self):
        """Test that differences within 1e-9 are indifferent."""
        assert compare(0.1 + 0.2, 0.3) is I
        assert compare(1.0, 0.0) is L
        assert compare(0.0, 1.0) is R


class TestTable1:
    """Tests for table1_choices function."""

    def test_golden(self):
        """Test every entry of the agent x case choice table."""
        expected = [
            [R, I, U, U],
            [R, L, U, U],
            [R, I, I, I],
            [R, L, L, L],
            [R, I, L, L],
        ]
        assert table1_choices() == expected

    def test_named_entries(self):
        """Test a few entries by agent and case."""
        assert choose(Agent.EXPECTED_UTILITY, FIGURE_CASES["a"]) is R
        assert choose(Agent.RISK_AVERSE, FIGURE_CASES["b"]) is L
        assert choose(Agent.AMBIGUITY_AVERSE, FIGURE_CASES["c"]) is L
        assert choose(Agent.BAYES_WITH_PRIOR, FIGURE_CASES["c"]) is I

    def test_rows(self):
        """Test the JSON row form."""
        rows = table1_rows()
        assert len(rows) == 20
        assert {"agent": "risk-averse", "case": "b", "choice": "left"} in rows


class TestEllsbergSwitch:
    """Tests for ellsberg_switch_test function."""

    def test_multiple_priors_keep_known_urn(self):
        """Test that spanning both color biases keeps the known urn after the swap."""
        assert ellsberg_switch_test(AmbiguitySet.point_masses(11)) == (L, L)

    def test_single_biased_prior_switches(self):
        """Test that a single red-biased prior flips its preference when rewards swap."""
        prior = tuple(float(i == 10) for i in range(11))
        assert ellsberg_switch_test(AmbiguitySet((prior,))) == (L, R)

    def test_symmetric_prior_indifferent(self):
        """Test that a uniform prior over compositions is indifferent both ways."""
        prior = tuple([1 / 11] * 11)
        assert ellsberg_switch_test(AmbiguitySet((prior,))) == (I, I)


class TestDefaultPolicyRule:
    """Tests for the DefaultPolicyRule protocol."""

    def test_callable_conforms(self):
        """Test that any matching callable satisfies the protocol."""

        def always_left(delta, left, right):
            return Choice.LEFT

        assert isinstance(always_left, DefaultPolicyRule)
