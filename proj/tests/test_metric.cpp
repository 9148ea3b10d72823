#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "zeus/family.hpp"
#include "zeus/mdp.hpp"
#include "zeus/metric.hpp"
#include "zeus/rng.hpp"

using namespace zeus;

namespace {

// Metric from random points on a line segment; triangle inequality holds by
// construction.
DistanceMatrix random_ground_metric(Rng& rng, int n, double scale = 1.0) {
    std::vector<double> pts(n);
    for (int i = 0; i < n; ++i) pts[i] = rng.uniform(0.0, scale);
    DistanceMatrix g(n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) g.at(i, j) = std::abs(pts[i] - pts[j]);
    return g;
}

std::vector<double> random_simplex(Rng& rng, int n, int max_support = 0) {
    std::vector<double> p(n, 0.0);
    const int support = max_support > 0 ? max_support : n;
    double sum = 0.0;
    for (int i = 0; i < support; ++i) {
        p[i] = -std::log(1.0 - rng.uniform());
        sum += p[i];
    }
    for (double& v : p) v /= sum;
    return p;
}

TabularMDP two_absorbing_states(double r0, double r1, double gamma) {
    std::vector<double> t = {1.0, 0.0, 0.0, 1.0};
    std::vector<double> r = {r0, r1};
    return TabularMDP(2, 1, t, r, gamma);
}

// Absorbing one-state-per-context family with reward equal to the context.
class AbsorbingRewardFamily : public ContextualFamily {
public:
    explicit AbsorbingRewardFamily(double gamma = 0.9) : gamma_(gamma) {}
    std::string id() const override { return "absorbing_reward"; }
    bool tabular() const override { return true; }
    std::pair<double, double> context_range() const override { return {0.0, 1.0}; }
    std::pair<double, double> declared_smoothness() const override { return {0.0, 1.0}; }
    ContextSplit default_split() const override { return {}; }
    TabularMDP make_mdp(const ContextVector& c) const override {
        require_in_range(c);
        return TabularMDP(1, 1, {1.0}, {c.scalar()}, gamma_);
    }
    std::unique_ptr<ContinuousEnv> make_env(const ContextVector& c) const override {
        return std::make_unique<TabularEnv>(make_mdp(c), 0, 40);
    }

private:
    double gamma_;
};

// Family whose generator ignores the context entirely.
class ConstantFamily : public ContextualFamily {
public:
    std::string id() const override { return "constant"; }
    bool tabular() const override { return true; }
    std::pair<double, double> context_range() const override { return {0.0, 1.0}; }
    std::pair<double, double> declared_smoothness() const override { return {0.0, 0.0}; }
    ContextSplit default_split() const override { return {}; }
    TabularMDP make_mdp(const ContextVector& c) const override {
        require_in_range(c);
        return TabularMDP(2, 1, {0.5, 0.5, 0.5, 0.5}, {0.25, 0.75}, 0.9);
    }
    std::unique_ptr<ContinuousEnv> make_env(const ContextVector& c) const override {
        return std::make_unique<TabularEnv>(make_mdp(c), 0, 40);
    }
};

} // namespace

TEST_CASE("wasserstein identities") {
    Rng rng(1, 0);
    const auto g = random_ground_metric(rng, 5);
    const auto p = random_simplex(rng, 5);
    CHECK(wasserstein_discrete(p, p, g) == 0.0);

    std::vector<double> di(5, 0.0), dj(5, 0.0);
    di[1] = 1.0;
    dj[4] = 1.0;
    CHECK(wasserstein_discrete(di, dj, g) == g(1, 4));
}

TEST_CASE("hand-computed two-point transport") {
    DistanceMatrix g(2);
    g.set_symmetric(0, 1, 1.0);
    const std::vector<double> p = {0.5, 0.5};
    const std::vector<double> q = {0.0, 1.0};
    CHECK(wasserstein_discrete(p, q, g) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("invalid inputs rejected") {
    DistanceMatrix g(3);
    CHECK_THROWS_AS(wasserstein_discrete({0.5, 0.5}, {0.5, 0.25, 0.25}, g), std::invalid_argument);
    CHECK_THROWS_AS(wasserstein_discrete({0.7, 0.2, 0.2}, {0.5, 0.25, 0.25}, g), std::invalid_argument);
    CHECK_THROWS_AS(wasserstein_discrete({1.2, -0.2, 0.0}, {0.5, 0.25, 0.25}, g), std::invalid_argument);
}

TEST_CASE("1-D closed form oracle on 500 random instances") {
    Rng rng(99, 0);
    for (int trial = 0; trial < 500; ++trial) {
        const int n = 2 + static_cast<int>(rng.uniform_index(7));
        std::vector<double> x(n);
        x[0] = rng.uniform();
        for (int i = 1; i < n; ++i) x[i] = x[i - 1] + 0.05 + rng.uniform();
        DistanceMatrix g(n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) g.at(i, j) = std::abs(x[i] - x[j]);
        const auto p = random_simplex(rng, n);
        const auto q = random_simplex(rng, n);
        const double got = wasserstein_discrete(p, q, g);
        const double want = test::w1_sorted_1d(p, q, x);
        CHECK(std::abs(got - want) <= 1e-9);
    }
}

TEST_CASE("vertex enumeration oracle on 500 small instances") {
    Rng rng(321, 0);
    for (int trial = 0; trial < 500; ++trial) {
        const int m = 1 + static_cast<int>(rng.uniform_index(3));
        const int n = 1 + static_cast<int>(rng.uniform_index(3));
        auto supply = random_simplex(rng, m);
        auto demand = random_simplex(rng, n);
        std::vector<double> cost(static_cast<std::size_t>(m) * n);
        for (auto& c : cost) c = rng.uniform(0.0, 2.0);
        const double got = solve_transport(supply, demand, cost);
        const double want = test::w1_vertex_enum(supply, demand, cost);
        CHECK(std::abs(got - want) <= 1e-9);
    }
}

TEST_CASE("bisim metric identities") {
    SUBCASE("identical rows and rewards give distance zero") {
        std::vector<double> t = {0.5, 0.5, 0.5, 0.5};
        TabularMDP mdp(2, 1, t, {0.3, 0.3}, 0.9);
        const auto d = bisim_metric(mdp, 1e-10);
        CHECK(d(0, 1) == 0.0);
    }

    SUBCASE("two absorbing states follow the closed form") {
        const auto mdp = two_absorbing_states(0.2, 0.5, 0.9);
        const auto d = bisim_metric(mdp, 1e-10);
        CHECK(d(0, 1) == doctest::Approx(3.0).epsilon(1e-8));
    }

    SUBCASE("gamma zero leaves only the reward gap") {
        Rng rng(5, 5);
        const auto mdp = test::make_random_mdp(rng, 5, 3, 0.0);
        const auto d = bisim_metric(mdp, 1e-12);
        for (int i = 0; i < 5; ++i)
            for (int j = i + 1; j < 5; ++j) {
                double want = 0.0;
                for (int a = 0; a < 3; ++a)
                    want = std::max(want, std::abs(mdp.reward(i, a) - mdp.reward(j, a)));
                CHECK(d(i, j) == doctest::Approx(want).epsilon(1e-12));
            }
    }
}

TEST_CASE("bisim operator is a gamma-contraction on 100 random MDPs") {
    Rng rng(777, 0);
    for (int trial = 0; trial < 100; ++trial) {
        const int ns = 2 + static_cast<int>(rng.uniform_index(5));
        const int na = 1 + static_cast<int>(rng.uniform_index(3));
        const double gamma = 0.2 + 0.75 * rng.uniform();
        const auto mdp = test::make_random_mdp(rng, ns, na, gamma);

        auto d1 = random_ground_metric(rng, ns, 3.0);
        auto d2 = random_ground_metric(rng, ns, 3.0);
        const auto f1 = bisim_operator(mdp, d1);
        const auto f2 = bisim_operator(mdp, d2);

        double lhs = 0.0, dist = 0.0;
        for (std::size_t k = 0; k < d1.d.size(); ++k) {
            lhs = std::max(lhs, std::abs(f1.d[k] - f2.d[k]));
            dist = std::max(dist, std::abs(d1.d[k] - d2.d[k]));
        }
        CHECK(lhs <= gamma * dist + 1e-11);
    }
}

TEST_CASE("metric axioms audited on solved instances") {
    Rng rng(31, 0);
    for (int trial = 0; trial < 10; ++trial) {
        const auto mdp = test::make_random_mdp(rng, 8, 2, 0.85);
        const auto d = bisim_metric(mdp, 1e-10);
        CHECK(d.max_asymmetry() == 0.0);
        CHECK(d.max_diagonal() == 0.0);
        CHECK(d.min_entry() >= 0.0);
        CHECK(d.max_triangle_violation() <= 1e-9);
    }
}

TEST_CASE("value difference bounded via the metric on solved MDPs") {
    Rng rng(13, 0);
    for (int trial = 0; trial < 10; ++trial) {
        const double gamma = 0.9;
        const auto mdp = test::make_random_mdp(rng, 7, 3, gamma);
        const auto d = bisim_metric(mdp, 1e-10);
        const auto q = value_iteration(mdp, 1e-12);
        for (int i = 0; i < 7; ++i)
            for (int j = 0; j < 7; ++j) {
                const double dv = std::abs(q.state_value(i) - q.state_value(j));
                CHECK(dv <= d(i, j) / (1.0 - gamma) + 1e-7);
            }
    }
}

TEST_CASE("bisim metric is identical for any worker count") {
    Rng rng(41, 0);
    const auto mdp = test::make_random_mdp(rng, 12, 3, 0.9);
    const auto d1 = bisim_metric(mdp, 1e-9, 1);
    const auto d2 = bisim_metric(mdp, 1e-9, 2);
    const auto d4 = bisim_metric(mdp, 1e-9, 4);
    CHECK(d1.d == d2.d);
    CHECK(d1.d == d4.d);
}

TEST_CASE("super-MDP construction") {
    SlipGridFamily fam(3);

    SUBCASE("single context reproduces the instance") {
        const auto super = build_super_mdp(fam, {ContextVector(0.2)});
        const auto base = fam.make_mdp(ContextVector(0.2));
        CHECK(super.mdp.transition_tensor() == base.transition_tensor());
        CHECK(super.mdp.reward_matrix() == base.reward_matrix());
    }

    SUBCASE("two contexts never exchange mass") {
        const auto super = build_super_mdp(fam, {ContextVector(0.1), ContextVector(0.5)});
        CHECK(super.mdp.n_states() == 18);
        for (int s = 0; s < 9; ++s)
            for (int a = 0; a < 4; ++a)
                for (int s2 = 9; s2 < 18; ++s2) {
                    CHECK(super.mdp.transition(s, a, s2) == 0.0);
                    CHECK(super.mdp.transition(s2, a, s) == 0.0);
                }
    }

    SUBCASE("per-block solve matches the block of the joint solve") {
        const std::vector<ContextVector> contexts = {ContextVector(0.1), ContextVector(0.3),
                                                     ContextVector(0.5)};
        const auto super = build_super_mdp(fam, contexts);
        const auto joint = value_iteration(super.mdp, 1e-11);
        for (int c = 0; c < 3; ++c) {
            const auto solo = value_iteration(fam.make_mdp(contexts[c]), 1e-11);
            for (int s = 0; s < 9; ++s)
                CHECK(joint.state_value(super.super_index(c, s)) ==
                      doctest::Approx(solo.state_value(s)).epsilon(1e-9));
        }
    }

    SUBCASE("non-tabular family is rejected") {
        DragPointMassFamily continuous;
        CHECK_THROWS_AS(build_super_mdp(continuous, {ContextVector(0.5)}), std::invalid_argument);
    }
}

TEST_CASE("task metric") {
    SUBCASE("duplicate contexts are at distance zero") {
        SlipGridFamily fam(3);
        const auto d = task_metric(fam, {ContextVector(0.2), ContextVector(0.2)}, 1e-9);
        CHECK(d(0, 1) <= 1e-9);
    }

    SUBCASE("absorbing reward family matches the closed form") {
        AbsorbingRewardFamily fam(0.9);
        const auto d = task_metric(fam, {ContextVector(0.2), ContextVector(0.5)}, 1e-10);
        CHECK(d(0, 1) == doctest::Approx(3.0).epsilon(1e-8));
    }

    SUBCASE("monotone in the slip gap along a ladder") {
        SlipGridFamily fam(4);
        std::vector<ContextVector> ladder;
        for (double v : {0.1, 0.2, 0.3, 0.4, 0.5}) ladder.emplace_back(v);
        const auto d = task_metric(fam, ladder, 1e-9);
        for (std::size_t i = 0; i < ladder.size(); ++i) {
            for (std::size_t j = i + 1; j + 1 < ladder.size(); ++j) {
                CHECK(d(static_cast<int>(i), static_cast<int>(j)) <=
                      d(static_cast<int>(i), static_cast<int>(j + 1)) + 1e-9);
            }
        }
    }
}

TEST_CASE("lipschitz constant fitting") {
    SUBCASE("constant family fits zero") {
        ConstantFamily fam;
        const auto fit = fit_lipschitz_constants(fam, {ContextVector(0.1), ContextVector(0.9)});
        CHECK(fit.lp == 0.0);
        CHECK(fit.lr == 0.0);
    }

    SUBCASE("absorbing reward family has unit reward slope") {
        AbsorbingRewardFamily fam;
        std::vector<ContextVector> cs = {ContextVector(0.1), ContextVector(0.4), ContextVector(0.8)};
        const auto fit = fit_lipschitz_constants(fam, cs);
        CHECK(fit.lr == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(fit.lp == 0.0);
    }

    SUBCASE("fitted constants re-certify on a fresh sample") {
        SlipGridFamily fam(4);
        std::vector<ContextVector> sample = {ContextVector(0.15), ContextVector(0.35),
                                             ContextVector(0.55)};
        const auto fit = fit_lipschitz_constants(fam, sample);
        std::vector<ContextVector> fresh = {ContextVector(0.05), ContextVector(0.25),
                                            ContextVector(0.45), ContextVector(0.6)};
        const auto refit = fit_lipschitz_constants(fam, fresh);
        CHECK(refit.lp <= fit.lp + 1e-9);
        CHECK(refit.lr <= fit.lr + 1e-9);
    }

    SUBCASE("single context is rejected") {
        SlipGridFamily fam(3);
        CHECK_THROWS_AS(fit_lipschitz_constants(fam, {ContextVector(0.3)}), std::invalid_argument);
    }
}
