#include "zeus/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>

#include "json.hpp"

namespace zeus {

namespace {

constexpr double kRowSumDrift = 1e-12;

} // namespace

TabularMDP::TabularMDP(int n_states, int n_actions, std::vector<double> transition,
                       std::vector<double> reward, double gamma)
    : n_states_(n_states), n_actions_(n_actions),
      transition_(std::move(transition)), reward_(std::move(reward)), gamma_(gamma) {
    if (n_states_ <= 0 || n_actions_ <= 0)
        throw std::invalid_argument("TabularMDP: n_states and n_actions must be positive");
    if (!(gamma_ >= 0.0 && gamma_ < 1.0))
        throw std::invalid_argument("TabularMDP: gamma must lie in [0,1), got " + std::to_string(gamma_));
    const std::size_t nt = static_cast<std::size_t>(n_states_) * n_actions_ * n_states_;
    const std::size_t nr = static_cast<std::size_t>(n_states_) * n_actions_;
    if (transition_.size() != nt)
        throw std::invalid_argument("TabularMDP: transition tensor has wrong size");
    if (reward_.size() != nr)
        throw std::invalid_argument("TabularMDP: reward matrix has wrong size");

    for (int s = 0; s < n_states_; ++s) {
        for (int a = 0; a < n_actions_; ++a) {
            double* row = transition_.data() + (static_cast<std::size_t>(s) * n_actions_ + a) * n_states_;
            double sum = 0.0;
            for (int s2 = 0; s2 < n_states_; ++s2) {
                if (row[s2] < 0.0)
                    throw std::invalid_argument("TabularMDP: negative transition probability at (state=" +
                                                std::to_string(s) + ", action=" + std::to_string(a) + ")");
                sum += row[s2];
            }
            if (std::abs(sum - 1.0) > kRowSumDrift)
                throw std::invalid_argument("TabularMDP: transition row (state=" + std::to_string(s) +
                                            ", action=" + std::to_string(a) + ") sums to " +
                                            std::to_string(sum) + ", not 1");
            // Absorb genuine drift; float-noise-level drift is kept as-is so
            // that re-construction (e.g. a JSON round-trip) is bit-stable.
            if (std::abs(sum - 1.0) > 64.0 * std::numeric_limits<double>::epsilon()) {
                for (int s2 = 0; s2 < n_states_; ++s2) row[s2] /= sum;
            }
            const double r = reward_[static_cast<std::size_t>(s) * n_actions_ + a];
            if (!(r >= 0.0 && r <= 1.0))
                throw std::invalid_argument("TabularMDP: reward at (state=" + std::to_string(s) +
                                            ", action=" + std::to_string(a) + ") is " +
                                            std::to_string(r) + ", outside [0,1]");
        }
    }
}

std::string TabularMDP::to_json() const {
    nlohmann::json j;
    j["n_states"] = n_states_;
    j["n_actions"] = n_actions_;
    j["gamma"] = gamma_;
    nlohmann::json t = nlohmann::json::array();
    for (int s = 0; s < n_states_; ++s) {
        nlohmann::json rows = nlohmann::json::array();
        for (int a = 0; a < n_actions_; ++a) {
            const double* row = transition_row(s, a);
            rows.push_back(std::vector<double>(row, row + n_states_));
        }
        t.push_back(rows);
    }
    j["transition"] = t;
    nlohmann::json r = nlohmann::json::array();
    for (int s = 0; s < n_states_; ++s) {
        std::vector<double> row(n_actions_);
        for (int a = 0; a < n_actions_; ++a) row[a] = reward(s, a);
        r.push_back(row);
    }
    j["reward"] = r;
    return j.dump();
}

TabularMDP TabularMDP::from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    const int ns = j.at("n_states").get<int>();
    const int na = j.at("n_actions").get<int>();
    const double gamma = j.at("gamma").get<double>();
    std::vector<double> transition;
    transition.reserve(static_cast<std::size_t>(ns) * na * ns);
    for (const auto& per_state : j.at("transition"))
        for (const auto& per_action : per_state)
            for (const auto& p : per_action) transition.push_back(p.get<double>());
    std::vector<double> reward;
    reward.reserve(static_cast<std::size_t>(ns) * na);
    for (const auto& per_state : j.at("reward"))
        for (const auto& r : per_state) reward.push_back(r.get<double>());
    return TabularMDP(ns, na, std::move(transition), std::move(reward), gamma);
}

double QFunction::state_value(int s) const {
    double best = values[static_cast<std::size_t>(s) * n_actions];
    for (int a = 1; a < n_actions; ++a)
        best = std::max(best, values[static_cast<std::size_t>(s) * n_actions + a]);
    return best;
}

ValueFunction QFunction::greedy_values() const {
    ValueFunction v;
    v.values.resize(n_states);
    for (int s = 0; s < n_states; ++s) v.values[s] = state_value(s);
    return v;
}

std::vector<int> QFunction::greedy_policy() const {
    std::vector<int> pi(n_states, 0);
    for (int s = 0; s < n_states; ++s) {
        double best = (*this)(s, 0);
        for (int a = 1; a < n_actions; ++a) {
            const double q = (*this)(s, a);
            if (q > best) {
                best = q;
                pi[s] = a;
            }
        }
    }
    return pi;
}

QFunction value_iteration(const TabularMDP& mdp, double tol) {
    if (!(tol > 0.0)) throw std::invalid_argument("value_iteration: tol must be positive");
    const int ns = mdp.n_states();
    const int na = mdp.n_actions();
    const double gamma = mdp.gamma();

    QFunction q;
    q.n_states = ns;
    q.n_actions = na;
    q.values.assign(static_cast<std::size_t>(ns) * na, 0.0);
    std::vector<double> next(q.values.size(), 0.0);
    std::vector<double> v(ns, 0.0);

    // Contraction gives a hard iteration bound; the residual test exits earlier.
    const double vmax = 1.0 / (1.0 - gamma);
    long max_iters = 1;
    if (gamma > 0.0) {
        max_iters = static_cast<long>(std::ceil(std::log(tol / (vmax + 1.0)) / std::log(gamma))) + 2;
        max_iters = std::max(max_iters, 1L);
    }

    for (long iter = 0; iter < max_iters; ++iter) {
        for (int s = 0; s < ns; ++s) {
            double best = q.values[static_cast<std::size_t>(s) * na];
            for (int a = 1; a < na; ++a)
                best = std::max(best, q.values[static_cast<std::size_t>(s) * na + a]);
            v[s] = best;
        }
        double residual = 0.0;
        for (int s = 0; s < ns; ++s) {
            for (int a = 0; a < na; ++a) {
                const double* row = mdp.transition_row(s, a);
                double exp_v = 0.0;
                for (int s2 = 0; s2 < ns; ++s2) exp_v += row[s2] * v[s2];
                const std::size_t idx = static_cast<std::size_t>(s) * na + a;
                next[idx] = mdp.reward(s, a) + gamma * exp_v;
                residual = std::max(residual, std::abs(next[idx] - q.values[idx]));
            }
        }
        q.values.swap(next);
        if (residual <= tol) break;
    }
    return q;
}

ValueFunction policy_evaluation(const TabularMDP& mdp, const std::vector<int>& policy,
                                double tol) {
    if (!(tol > 0.0)) throw std::invalid_argument("policy_evaluation: tol must be positive");
    const int ns = mdp.n_states();
    const int na = mdp.n_actions();
    if (static_cast<int>(policy.size()) != ns)
        throw std::invalid_argument("policy_evaluation: policy must assign an action to every state");
    for (int s = 0; s < ns; ++s)
        if (policy[s] < 0 || policy[s] >= na)
            throw std::invalid_argument("policy_evaluation: invalid action index " +
                                        std::to_string(policy[s]) + " at state " + std::to_string(s));

    const double gamma = mdp.gamma();
    ValueFunction vf;
    vf.values.assign(ns, 0.0);
    std::vector<double> next(ns, 0.0);

    const double vmax = 1.0 / (1.0 - gamma);
    long max_iters = 1;
    if (gamma > 0.0) {
        max_iters = static_cast<long>(std::ceil(std::log(tol / (vmax + 1.0)) / std::log(gamma))) + 2;
        max_iters = std::max(max_iters, 1L);
    }

    for (long iter = 0; iter < max_iters; ++iter) {
        double residual = 0.0;
        for (int s = 0; s < ns; ++s) {
            const double* row = mdp.transition_row(s, policy[s]);
            double exp_v = 0.0;
            for (int s2 = 0; s2 < ns; ++s2) exp_v += row[s2] * vf.values[s2];
            next[s] = mdp.reward(s, policy[s]) + gamma * exp_v;
            residual = std::max(residual, std::abs(next[s] - vf.values[s]));
        }
        vf.values.swap(next);
        if (residual <= tol) break;
    }
    return vf;
}

} // namespace zeus
