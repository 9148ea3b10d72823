#pragma once

#include <cstdint>
#include <vector>

#include "zeus/family.hpp"
#include "zeus/learner.hpp"
#include "zeus/metric.hpp"

namespace zeus {

// Spearman rank correlation with average ranks on ties:
// 1 - 6 sum(d^2) / (n (n^2 - 1)). Throws when either argument is constant
// (the correlation is undefined).
double spearman(const std::vector<double>& x, const std::vector<double>& y);

struct ContextDistanceReport {
    std::vector<double> contexts;
    DistanceMatrix embedding_distance; // mean pairwise context-encoding distance
    DistanceMatrix ground_distance;    // |c_i - c_j| between true contexts
    double spearman_rho = 0.0;         // over the strict upper triangles
};

// Mean pairwise distance between context encodings harvested from greedy
// rollouts: entry (i,j) averages ||psi(H_i) - psi(H_j)|| over window pairs
// drawn from contexts i and j; the diagonal is exactly zero.
ContextDistanceReport pairwise_context_matrix(const ZeusModel& model,
                                              const ContextualFamily& family,
                                              const std::vector<ContextVector>& contexts,
                                              int windows_per_context, const TrainSetup& setup,
                                              std::uint64_t seed);

struct ProbeConfig {
    int hidden = 64;
    int layers = 2;
    int steps = 5000;
    int batch = 64;
    double lr = 1e-3;
    int windows_per_context = 400;
    double train_frac = 0.8;
};

struct ProbeResult {
    double train_mse = 0.0;
    double test_mse = 0.0;
    int n_train = 0;
    int n_test = 0;
    double label_variance = 0.0; // variance of the held-out context labels
};

// Trains a fresh feedforward regressor from flattened k-step latent
// transition windows (state, action, reward, next state) gathered under a
// uniform random policy, and reports the held-out MSE of the context
// prediction.
ProbeResult identifiability_probe(const ContextualFamily& family,
                                  const std::vector<ContextVector>& contexts, int k,
                                  const ProbeConfig& config, std::uint64_t seed);

} // namespace zeus
