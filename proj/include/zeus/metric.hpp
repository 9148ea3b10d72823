#pragma once

#include <utility>
#include <vector>

#include "zeus/family.hpp"
#include "zeus/mdp.hpp"

namespace zeus {

// Symmetric nonnegative matrix with zero diagonal; holds the bisimulation
// metric over states or the task metric over contexts.
struct DistanceMatrix {
    int n = 0;
    std::vector<double> d;

    DistanceMatrix() = default;
    explicit DistanceMatrix(int size) : n(size), d(static_cast<std::size_t>(size) * size, 0.0) {}

    double operator()(int i, int j) const { return d[static_cast<std::size_t>(i) * n + j]; }
    double& at(int i, int j) { return d[static_cast<std::size_t>(i) * n + j]; }

    void set_symmetric(int i, int j, double v) {
        at(i, j) = v;
        at(j, i) = v;
    }

    double max_value() const;
    double max_asymmetry() const;
    double max_diagonal() const;
    double min_entry() const;
    // Worst violation of d(i,k) <= d(i,j) + d(j,k) over all triples.
    double max_triangle_violation() const;
};

// Exact 1-Wasserstein cost between two distributions over the ground
// metric's points. Solved by a transportation simplex with Bland's rule.
double wasserstein_discrete(const std::vector<double>& p, const std::vector<double>& q,
                            const DistanceMatrix& ground);

// Transportation core on compressed supports: cost is row-major m x n.
double solve_transport(const std::vector<double>& supply, const std::vector<double>& demand,
                       const std::vector<double>& cost);

// One application of the bisimulation operator
//   F(d)(s,s') = max_a |r(s,a)-r(s',a)| + gamma * W(d)(T_s^a, T_s'^a)
// against a read-only previous iterate. Exposed for the contraction audits.
DistanceMatrix bisim_operator(const TabularMDP& mdp, const DistanceMatrix& d, int n_threads = 0);

// Fixed point of F from d0 = 0, iterated until ||F(d)-d||_inf <= tol. The
// returned matrix is the post-update iterate, so its distance to the true
// fixed point is at most tol*gamma/(1-gamma).
DistanceMatrix bisim_metric(const TabularMDP& mdp, double tol = 1e-9, int n_threads = 0);

// The family joined over a finite context list into one MDP on (context,
// state) pairs. Blocks never exchange probability mass.
struct SuperMDP {
    TabularMDP mdp;
    int n_contexts;
    int n_base_states;

    SuperMDP(TabularMDP m, int contexts, int base_states)
        : mdp(std::move(m)), n_contexts(contexts), n_base_states(base_states) {}

    int super_index(int context_idx, int state) const { return context_idx * n_base_states + state; }
    std::pair<int, int> context_state(int super) const {
        return {super / n_base_states, super % n_base_states};
    }
};

SuperMDP build_super_mdp(const ContextualFamily& family, const std::vector<ContextVector>& contexts);

// Task metric over contexts: d_task(c_i, c_j) = max_s d~((s,c_i), (s,c_j))
// where d~ is the bisimulation metric of the super-MDP.
DistanceMatrix task_metric(const ContextualFamily& family, const std::vector<ContextVector>& contexts,
                           double tol = 1e-9, int n_threads = 0);

// Task metric and the underlying super-MDP state metric in one pass.
struct TaskMetricResult {
    DistanceMatrix over_contexts;
    DistanceMatrix over_super_states;
};
TaskMetricResult task_metric_full(const ContextualFamily& family,
                                  const std::vector<ContextVector>& contexts, double tol = 1e-9,
                                  int n_threads = 0);

struct LipschitzConstants {
    double lp = 0.0; // dynamics constant, Wasserstein under the discrete metric (total variation)
    double lr = 0.0; // reward constant
};

// Smallest constants satisfying the smoothness inequalities on every sampled
// context pair and (s,a). Requires a tabular family and at least two contexts.
LipschitzConstants fit_lipschitz_constants(const ContextualFamily& family,
                                           const std::vector<ContextVector>& contexts);

} // namespace zeus
