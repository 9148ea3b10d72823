#pragma once

#include <string>
#include <vector>

namespace zeus {

// A finite MDP with a dense transition tensor T[s][a][s'], rewards R[s][a]
// in [0,1] and discount gamma in [0,1). Instances are validated on
// construction and immutable afterwards; the solvers below are pure
// functions and safe to call concurrently.
class TabularMDP {
public:
    TabularMDP(int n_states, int n_actions, std::vector<double> transition,
               std::vector<double> reward, double gamma);

    int n_states() const { return n_states_; }
    int n_actions() const { return n_actions_; }
    double gamma() const { return gamma_; }

    double transition(int s, int a, int s2) const {
        return transition_[(static_cast<std::size_t>(s) * n_actions_ + a) * n_states_ + s2];
    }
    double reward(int s, int a) const {
        return reward_[static_cast<std::size_t>(s) * n_actions_ + a];
    }

    // Row T[s][a][.] as a span into the tensor.
    const double* transition_row(int s, int a) const {
        return transition_.data() + (static_cast<std::size_t>(s) * n_actions_ + a) * n_states_;
    }

    const std::vector<double>& transition_tensor() const { return transition_; }
    const std::vector<double>& reward_matrix() const { return reward_; }

    std::string to_json() const;
    static TabularMDP from_json(const std::string& text);

private:
    int n_states_;
    int n_actions_;
    std::vector<double> transition_; // [s][a][s'], row-major
    std::vector<double> reward_;     // [s][a]
    double gamma_;
};

struct ValueFunction {
    std::vector<double> values; // one entry per state
};

struct QFunction {
    int n_states = 0;
    int n_actions = 0;
    std::vector<double> values; // [s][a]

    double operator()(int s, int a) const {
        return values[static_cast<std::size_t>(s) * n_actions + a];
    }
    double state_value(int s) const; // max over actions
    ValueFunction greedy_values() const;
    std::vector<int> greedy_policy() const; // ties broken by lowest action index
};

// Synchronous value iteration from Q=0, stopping once the Bellman residual
// sup-norm drops to tol. Ties in the max are broken by lowest action index.
QFunction value_iteration(const TabularMDP& mdp, double tol = 1e-10);

// Iterative evaluation of a deterministic policy (one action index per state).
ValueFunction policy_evaluation(const TabularMDP& mdp, const std::vector<int>& policy,
                                double tol = 1e-10);

} // namespace zeus
