#include "zeus/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <thread>

namespace zeus {

std::vector<std::vector<int>> StateAbstraction::members() const {
    std::vector<std::vector<int>> groups(n_clusters);
    for (std::size_t s = 0; s < cluster_of.size(); ++s) groups[cluster_of[s]].push_back(static_cast<int>(s));
    return groups;
}

StateAbstraction build_abstraction(const DistanceMatrix& metric, double radius) {
    if (radius < 0.0) throw std::invalid_argument("build_abstraction: radius must be >= 0");
    const int n = metric.n;
    StateAbstraction abs;
    abs.cluster_of.assign(n, -1);
    abs.radius = radius;
    for (int s = 0; s < n; ++s) {
        if (abs.cluster_of[s] >= 0) continue;
        const int cluster = abs.n_clusters++;
        abs.cluster_of[s] = cluster;
        for (int t = s + 1; t < n; ++t)
            if (abs.cluster_of[t] < 0 && metric(s, t) <= radius) abs.cluster_of[t] = cluster;
    }
    return abs;
}

namespace {

// Lifted next-state distribution: transition mass aggregated per cluster.
std::vector<double> lift_row(const TabularMDP& mdp, const StateAbstraction& abs, int s, int a) {
    std::vector<double> lifted(abs.n_clusters, 0.0);
    const double* row = mdp.transition_row(s, a);
    for (int s2 = 0; s2 < mdp.n_states(); ++s2) lifted[abs.cluster_of[s2]] += row[s2];
    return lifted;
}

void require_matching(const TabularMDP& mdp, const StateAbstraction& abs, const char* where) {
    if (static_cast<int>(abs.cluster_of.size()) != mdp.n_states())
        throw std::invalid_argument(std::string(where) + ": abstraction covers " +
                                    std::to_string(abs.cluster_of.size()) + " states, MDP has " +
                                    std::to_string(mdp.n_states()));
}

} // namespace

ApproxConstants abstraction_constants(const TabularMDP& mdp, const StateAbstraction& abs) {
    require_matching(mdp, abs, "abstraction_constants");
    const int na = mdp.n_actions();
    ApproxConstants out;
    for (const auto& group : abs.members()) {
        for (std::size_t x = 0; x < group.size(); ++x) {
            for (std::size_t y = x + 1; y < group.size(); ++y) {
                const int o1 = group[x], o2 = group[y];
                for (int a = 0; a < na; ++a) {
                    out.eps_r = std::max(out.eps_r, std::abs(mdp.reward(o1, a) - mdp.reward(o2, a)));
                    const auto l1d = lift_row(mdp, abs, o1, a);
                    const auto l2d = lift_row(mdp, abs, o2, a);
                    double gap = 0.0;
                    for (int k = 0; k < abs.n_clusters; ++k) gap += std::abs(l1d[k] - l2d[k]);
                    out.eps_t = std::max(out.eps_t, gap);
                }
            }
        }
    }
    return out;
}

ApproxConstants abstraction_constants(const ContextualFamily& family,
                                      const std::vector<ContextVector>& contexts,
                                      const StateAbstraction& abs) {
    ApproxConstants out;
    for (const auto& c : contexts) {
        const auto per = abstraction_constants(family.make_mdp(c), abs);
        out.eps_r = std::max(out.eps_r, per.eps_r);
        out.eps_t = std::max(out.eps_t, per.eps_t);
    }
    return out;
}

TabularMDP abstract_mdp(const TabularMDP& mdp, const StateAbstraction& abs) {
    require_matching(mdp, abs, "abstract_mdp");
    const int na = mdp.n_actions();
    const int nk = abs.n_clusters;
    std::vector<double> transition(static_cast<std::size_t>(nk) * na * nk, 0.0);
    std::vector<double> reward(static_cast<std::size_t>(nk) * na, 0.0);

    const auto groups = abs.members();
    for (int k = 0; k < nk; ++k) {
        const double weight = 1.0 / static_cast<double>(groups[k].size());
        for (int a = 0; a < na; ++a) {
            double* out_row = transition.data() + (static_cast<std::size_t>(k) * na + a) * nk;
            double r = 0.0;
            for (int s : groups[k]) {
                r += weight * mdp.reward(s, a);
                const double* row = mdp.transition_row(s, a);
                for (int s2 = 0; s2 < mdp.n_states(); ++s2)
                    out_row[abs.cluster_of[s2]] += weight * row[s2];
            }
            reward[static_cast<std::size_t>(k) * na + a] = std::clamp(r, 0.0, 1.0);
        }
    }
    return TabularMDP(nk, na, std::move(transition), std::move(reward), mdp.gamma());
}

Theorem1Audit verify_theorem1(const ContextualFamily& family,
                              const std::vector<ContextVector>& contexts, double vi_tol,
                              double metric_tol) {
    const auto d_task = task_metric(family, contexts, metric_tol);
    std::vector<ValueFunction> values;
    values.reserve(contexts.size());
    double gamma = 0.0;
    for (const auto& c : contexts) {
        const auto mdp = family.make_mdp(c);
        gamma = mdp.gamma();
        values.push_back(value_iteration(mdp, vi_tol).greedy_values());
    }

    Theorem1Audit audit;
    audit.tolerance = 10.0 * (vi_tol + metric_tol) / (1.0 - gamma);
    audit.max_violation = -std::numeric_limits<double>::infinity();
    const int n_states = static_cast<int>(values[0].values.size());
    for (std::size_t i = 0; i < contexts.size(); ++i) {
        for (std::size_t j = i + 1; j < contexts.size(); ++j) {
            const double rhs = d_task(static_cast<int>(i), static_cast<int>(j)) / (1.0 - gamma);
            for (int s = 0; s < n_states; ++s) {
                const double lhs = std::abs(values[i].values[s] - values[j].values[s]);
                if (lhs - rhs > audit.max_violation) {
                    audit.max_violation = lhs - rhs;
                    audit.worst_lhs = lhs;
                    audit.worst_rhs = rhs;
                    audit.worst_state = s;
                    audit.worst_i = static_cast<int>(i);
                    audit.worst_j = static_cast<int>(j);
                }
            }
        }
    }
    audit.passed = audit.max_violation <= audit.tolerance;
    return audit;
}

BoundReport verify_value_bound(const ContextualFamily& family, const ContextVector& c_i,
                               const ContextVector& c_j, const StateAbstraction& abstraction,
                               const ContextVector& c_hat, double vi_tol, double metric_tol) {
    const auto m_i = family.make_mdp(c_i);
    const auto m_j = family.make_mdp(c_j);
    const auto m_hat = family.make_mdp(c_hat);
    require_matching(m_i, abstraction, "verify_value_bound");

    const double gamma = m_j.gamma();
    const int ns = m_j.n_states();
    const int na = m_j.n_actions();

    BoundReport report;
    report.gamma = gamma;
    report.c_i = c_i.scalar();
    report.c_j = c_j.scalar();
    report.c_hat = c_hat.scalar();
    report.n_clusters = abstraction.n_clusters;
    report.radius = abstraction.radius;
    report.context_gap_l1 = l1_distance(c_i, c_j);
    report.audit_tolerance = 10.0 * (vi_tol + metric_tol) / (1.0 - gamma);

    // lhs: optimal Q of the target task against the abstract model's optimal
    // Q lifted back to ground states.
    const auto q_target = value_iteration(m_j, vi_tol);
    const auto q_abs = value_iteration(abstract_mdp(m_hat, abstraction), vi_tol);
    double lhs = 0.0;
    for (int s = 0; s < ns; ++s)
        for (int a = 0; a < na; ++a)
            lhs = std::max(lhs, std::abs(q_target(s, a) - q_abs(abstraction.cluster_of[s], a)));
    report.lhs = lhs;

    // Constants echoed per the theorem statement: intra-cluster suprema on
    // the task the abstraction was learned for, plus the estimation error.
    report.constants = abstraction_constants(m_i, abstraction);
    report.constants.eps_c = l1_distance(c_hat, c_i);

    // Exact ingredients of the audited bound: intra constants of the model
    // actually aggregated (the estimated-context instance) and sup gaps
    // between that model and the target task.
    const auto intra_hat = abstraction_constants(m_hat, abstraction);
    report.intra_eps_r_hat = intra_hat.eps_r;
    report.intra_eps_t_hat = intra_hat.eps_t;
    double cross_r = 0.0, cross_t = 0.0;
    for (int s = 0; s < ns; ++s) {
        for (int a = 0; a < na; ++a) {
            cross_r = std::max(cross_r, std::abs(m_hat.reward(s, a) - m_j.reward(s, a)));
            const auto lift_hat = lift_row(m_hat, abstraction, s, a);
            const auto lift_j = lift_row(m_j, abstraction, s, a);
            double gap = 0.0;
            for (int k = 0; k < abstraction.n_clusters; ++k)
                gap += std::abs(lift_hat[k] - lift_j[k]);
            cross_t = std::max(cross_t, gap);
        }
    }
    report.cross_reward_gap = cross_r;
    report.cross_transition_gap = cross_t;

    // Certified bound: one-step model error contracted through the fixed
    // point, with R_max = 1 and span(V) <= 1/(1-gamma).
    const double eps_r_total = intra_hat.eps_r + cross_r;
    const double eps_t_total = intra_hat.eps_t + cross_t;
    report.rhs = (eps_r_total + gamma * eps_t_total / (2.0 * (1.0 - gamma))) / (1.0 - gamma);
    report.satisfied = report.lhs <= report.rhs + report.audit_tolerance;
    report.slack = report.rhs - report.lhs;

    report.rhs_uncorrected =
        report.constants.eps_r +
        gamma * (report.constants.eps_t + report.constants.eps_c + report.context_gap_l1) /
            (2.0 * (1.0 - gamma));
    report.satisfied_uncorrected = report.lhs <= report.rhs_uncorrected + report.audit_tolerance;
    return report;
}

std::vector<BoundReport> value_bound_sweep(int n_draws, std::uint64_t seed, int n_threads) {
    static const double kHatGrid[4] = {0.0, 0.01, 0.05, 0.1};

    std::vector<BoundReport> reports(n_draws);
    auto run_draw = [&](int k) {
        Rng rng(seed, static_cast<std::uint64_t>(k) + 1);
        const auto fam = make_random_slipgrid(rng);

        const ContextVector ci(rng.uniform(0.05, 0.6));
        const ContextVector cj(rng.uniform(0.05, 0.6));
        double hat = ci.scalar() + (rng.uniform() < 0.5 ? -1.0 : 1.0) * kHatGrid[k % 4];
        hat = std::clamp(hat, 0.0, 1.0);

        // The agent only knows its context estimate, so the abstraction is
        // built from the estimated instance's bisimulation metric.
        const auto metric = bisim_metric(fam->make_mdp(ContextVector(hat)), 1e-8);
        // Radii from identity-level up past the metric diameter, so the sweep
        // covers singleton, mid-grain and single-cluster abstractions.
        const double radius = rng.uniform(0.0, 1.1 * std::max(metric.max_value(), 1e-12));
        const auto abstraction = build_abstraction(metric, radius);

        reports[k] = verify_value_bound(*fam, ci, cj, abstraction, ContextVector(hat), 1e-10, 1e-8);
    };

    int threads = n_threads > 0 ? n_threads : static_cast<int>(std::thread::hardware_concurrency());
    threads = std::max(1, std::min(threads, n_draws));
    if (threads <= 1) {
        for (int k = 0; k < n_draws; ++k) run_draw(k);
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t)
            pool.emplace_back([&, t]() {
                for (int k = t; k < n_draws; k += threads) run_draw(k);
            });
        for (auto& th : pool) th.join();
    }
    return reports;
}

GapStats empirical_generalization_gap(const std::vector<double>& train_returns,
                                      const std::vector<double>& eval_returns) {
    if (train_returns.empty() || eval_returns.empty())
        throw std::invalid_argument("empirical_generalization_gap: return samples must be nonempty");
    auto mean = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    auto stddev = [&](const std::vector<double>& v, double m) {
        if (v.size() < 2) return 0.0;
        double s = 0.0;
        for (double x : v) s += (x - m) * (x - m);
        return std::sqrt(s / static_cast<double>(v.size() - 1));
    };
    GapStats g;
    g.train_mean = mean(train_returns);
    g.eval_mean = mean(eval_returns);
    g.train_std = stddev(train_returns, g.train_mean);
    g.eval_std = stddev(eval_returns, g.eval_mean);
    g.mean_gap = g.train_mean - g.eval_mean;
    return g;
}

} // namespace zeus
