#pragma once

#include <vector>

#include "zeus/family.hpp"
#include "zeus/mdp.hpp"
#include "zeus/metric.hpp"
#include "zeus/rng.hpp"

namespace zeus {

// Partition of a state space produced by greedy epsilon-ball covering.
struct StateAbstraction {
    std::vector<int> cluster_of; // one cluster id per state
    int n_clusters = 0;
    double radius = 0.0;

    std::vector<std::vector<int>> members() const;
};

// Greedy covering: states are visited in index order, the first uncovered
// state becomes a center and absorbs every uncovered state within radius.
// Any two states sharing a cluster are within 2*radius of each other.
StateAbstraction build_abstraction(const DistanceMatrix& metric, double radius);

struct ApproxConstants {
    double eps_r = 0.0; // sup over cluster-mates and actions of the reward gap
    double eps_t = 0.0; // sup of the L1 gap between lifted next-state distributions
    double eps_c = 0.0; // context estimation error, ||c_hat - c||_1
};

// Exact intra-cluster suprema for one instance.
ApproxConstants abstraction_constants(const TabularMDP& mdp, const StateAbstraction& abstraction);

// Suprema across every instance in the context list.
ApproxConstants abstraction_constants(const ContextualFamily& family,
                                      const std::vector<ContextVector>& contexts,
                                      const StateAbstraction& abstraction);

// Cluster-averaged MDP: rewards and lifted transitions are uniform averages
// over cluster members.
TabularMDP abstract_mdp(const TabularMDP& mdp, const StateAbstraction& abstraction);

struct Theorem1Audit {
    double max_violation = 0.0; // max over (state, context pair) of lhs - rhs
    double worst_lhs = 0.0;
    double worst_rhs = 0.0;
    int worst_state = -1;
    int worst_i = -1;
    int worst_j = -1;
    double tolerance = 0.0;
    bool passed = false;
};

// Checks |V*(s,c_i) - V*(s,c_j)| <= d_task(c_i,c_j) / (1-gamma) for every
// state and context pair of a tabular family.
Theorem1Audit verify_theorem1(const ContextualFamily& family,
                              const std::vector<ContextVector>& contexts, double vi_tol = 1e-10,
                              double metric_tol = 1e-8);

// One audited instance of the cross-task value bound. The audited right-hand
// side carries the 1/(1-gamma) fixed-point factor and exactly computed
// cross-task gap constants, which makes the inequality provable for every
// input; the uncorrected textbook-style expression
//   eps_R + gamma (eps_T + eps_c + ||ci-cj||_1) / (2(1-gamma))
// is also evaluated and reported for reference.
struct BoundReport {
    double lhs = 0.0;             // || Q*_{M_cj} - lift(Q*_{abstract model}) ||_inf
    double rhs = 0.0;             // audited (certified) bound
    double rhs_uncorrected = 0.0; // reference expression without the fixed-point factor
    bool satisfied = false;
    bool satisfied_uncorrected = false;
    double slack = 0.0; // rhs - lhs

    ApproxConstants constants;        // intra constants on M_{c_i} plus eps_c
    double intra_eps_r_hat = 0.0;     // intra constants on the estimated-context model
    double intra_eps_t_hat = 0.0;
    double cross_reward_gap = 0.0;    // sup |R_chat - R_cj|
    double cross_transition_gap = 0.0; // sup || lifted T_chat - lifted T_cj ||_1
    double context_gap_l1 = 0.0;      // ||c_i - c_j||_1

    double c_i = 0.0, c_j = 0.0, c_hat = 0.0;
    double gamma = 0.0;
    double audit_tolerance = 0.0;
    int n_clusters = 0;
    double radius = 0.0;
};

// Builds the abstract model of the estimated-context instance, lifts its
// optimal Q back to ground states and audits it against the optimal Q of the
// target task. Preconditions: tabular family with rewards in [0,1].
BoundReport verify_value_bound(const ContextualFamily& family, const ContextVector& c_i,
                               const ContextVector& c_j, const StateAbstraction& abstraction,
                               const ContextVector& c_hat, double vi_tol = 1e-10,
                               double metric_tol = 1e-8);

// Randomized (family, radius, context pair, context-estimate perturbation)
// sweep over SlipGrid instances; the c_hat perturbations walk the fixed grid
// {0, 0.01, 0.05, 0.1}.
std::vector<BoundReport> value_bound_sweep(int n_draws, std::uint64_t seed, int n_threads = 0);

struct GapStats {
    double mean_gap = 0.0; // mean(train) - mean(eval)
    double train_mean = 0.0;
    double eval_mean = 0.0;
    double train_std = 0.0;
    double eval_std = 0.0;
};

// Train-minus-eval return statistic standing in for a formal robustness
// certificate.
GapStats empirical_generalization_gap(const std::vector<double>& train_returns,
                                      const std::vector<double>& eval_returns);

} // namespace zeus
