#include "zeus/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "zeus/nn.hpp"

namespace zeus {

namespace {

std::vector<double> average_ranks(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
        const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

} // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size())
        throw std::invalid_argument("spearman: input lengths differ");
    if (x.size() < 2)
        throw std::invalid_argument("spearman: need at least two samples");
    auto constant = [](const std::vector<double>& v) {
        for (double u : v)
            if (u != v[0]) return false;
        return true;
    };
    if (constant(x) || constant(y))
        throw std::invalid_argument("spearman: correlation undefined for a constant vector");

    const auto rx = average_ranks(x);
    const auto ry = average_ranks(y);
    const double n = static_cast<double>(x.size());
    double d2 = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = rx[i] - ry[i];
        d2 += d * d;
    }
    return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

ContextDistanceReport pairwise_context_matrix(const ZeusModel& model,
                                              const ContextualFamily& family,
                                              const std::vector<ContextVector>& contexts,
                                              int windows_per_context, const TrainSetup& setup,
                                              std::uint64_t seed) {
    if (contexts.size() < 2)
        throw std::invalid_argument("pairwise_context_matrix: need at least two contexts");
    if (windows_per_context < 1)
        throw std::invalid_argument("pairwise_context_matrix: need at least one window per context");

    const int nc = static_cast<int>(contexts.size());
    std::vector<std::vector<std::vector<double>>> embeddings(nc);
    for (int i = 0; i < nc; ++i) {
        const auto windows = Trainer::collect_windows(model, family, contexts[i],
                                                      windows_per_context, setup,
                                                      seed + static_cast<std::uint64_t>(i));
        for (const auto& w : windows) embeddings[i].push_back(model.encode_context(w));
    }

    ContextDistanceReport report;
    report.embedding_distance = DistanceMatrix(nc);
    report.ground_distance = DistanceMatrix(nc);
    for (const auto& c : contexts) report.contexts.push_back(c.scalar());

    for (int i = 0; i < nc; ++i) {
        for (int j = i + 1; j < nc; ++j) {
            double acc = 0.0;
            for (const auto& a : embeddings[i]) {
                for (const auto& b : embeddings[j]) {
                    double n2 = 0.0;
                    for (std::size_t d = 0; d < a.size(); ++d) n2 += (a[d] - b[d]) * (a[d] - b[d]);
                    acc += std::sqrt(n2);
                }
            }
            acc /= static_cast<double>(embeddings[i].size()) * embeddings[j].size();
            report.embedding_distance.set_symmetric(i, j, acc);
            report.ground_distance.set_symmetric(i, j, l1_distance(contexts[i], contexts[j]));
        }
    }

    std::vector<double> learned, ground;
    for (int i = 0; i < nc; ++i)
        for (int j = i + 1; j < nc; ++j) {
            learned.push_back(report.embedding_distance(i, j));
            ground.push_back(report.ground_distance(i, j));
        }
    report.spearman_rho = spearman(learned, ground);
    return report;
}

ProbeResult identifiability_probe(const ContextualFamily& family,
                                  const std::vector<ContextVector>& contexts, int k,
                                  const ProbeConfig& config, std::uint64_t seed) {
    if (contexts.empty()) throw std::invalid_argument("identifiability_probe: no contexts");
    if (k < 1) throw std::invalid_argument("identifiability_probe: k must be positive");

    // Gather latent transition windows under a uniform random policy.
    struct Sample {
        std::vector<double> features;
        double label;
    };
    std::vector<Sample> train, test;
    int feature_dim = -1;

    for (std::size_t ci = 0; ci < contexts.size(); ++ci) {
        const auto env = family.make_env(contexts[ci]);
        const int sd = env->state_dim();
        const int ad = env->action_dim();
        const auto [lo, hi] = env->action_box();
        feature_dim = k * (2 * sd + ad + 1);

        Rng rng(seed, 31 * (ci + 1));
        std::vector<Sample> samples;
        long guard = 0;
        while (static_cast<int>(samples.size()) < config.windows_per_context && guard < 4000) {
            ++guard;
            std::vector<double> state = env->reset(rng);
            std::vector<std::vector<double>> rows;
            for (int t = 0; t < env->horizon(); ++t) {
                std::vector<double> action(ad);
                if (env->discrete_actions()) {
                    const int pick = static_cast<int>(rng.uniform_index(ad));
                    for (int d = 0; d < ad; ++d) action[d] = d == pick ? 1.0 : 0.0;
                } else {
                    for (int d = 0; d < ad; ++d) action[d] = rng.uniform(lo, hi);
                }
                auto [next_state, reward] = env->step(action);
                std::vector<double> row;
                row.reserve(2 * sd + ad + 1);
                row.insert(row.end(), state.begin(), state.end());
                row.insert(row.end(), action.begin(), action.end());
                row.push_back(reward);
                row.insert(row.end(), next_state.begin(), next_state.end());
                rows.push_back(std::move(row));
                state = std::move(next_state);
                // Non-overlapping windows, so the sample set spreads over many
                // independent episodes instead of near-duplicates.
                if (static_cast<int>(rows.size()) == k) {
                    Sample s;
                    s.label = contexts[ci].scalar();
                    for (const auto& r : rows)
                        s.features.insert(s.features.end(), r.begin(), r.end());
                    samples.push_back(std::move(s));
                    rows.clear();
                    if (static_cast<int>(samples.size()) >= config.windows_per_context) break;
                }
            }
        }
        if (static_cast<int>(samples.size()) < config.windows_per_context)
            throw std::runtime_error("identifiability_probe: insufficient rollout data for context " +
                                     std::to_string(contexts[ci].scalar()));
        const int n_train = static_cast<int>(config.train_frac * samples.size());
        for (int i = 0; i < static_cast<int>(samples.size()); ++i)
            (i < n_train ? train : test).push_back(std::move(samples[i]));
    }

    Rng init(seed, 0xabcdef);
    std::vector<int> widths = {feature_dim};
    std::vector<Activation> acts;
    for (int l = 0; l < config.layers; ++l) {
        widths.push_back(config.hidden);
        acts.push_back(Activation::Relu);
    }
    widths.push_back(1);
    acts.push_back(Activation::Identity);
    DenseNet net(widths, acts, init);
    Optimizer opt(OptMethod::Adam, config.lr);

    Rng batch_rng(seed, 0x777);
    const int b_size = std::min<int>(config.batch, static_cast<int>(train.size()));
    for (int step = 0; step < config.steps; ++step) {
        Tensor x = Tensor::zeros({b_size, feature_dim});
        std::vector<double> y(b_size);
        for (int b = 0; b < b_size; ++b) {
            const auto& s = train[batch_rng.uniform_index(train.size())];
            std::copy(s.features.begin(), s.features.end(),
                      x.values.begin() + static_cast<std::size_t>(b) * feature_dim);
            y[b] = s.label;
        }
        const auto trace = net.forward_cached(x);
        Tensor upstream = Tensor::zeros({b_size, 1});
        for (int b = 0; b < b_size; ++b)
            upstream.at(b, 0) = 2.0 * (trace.output().at(b, 0) - y[b]) / b_size;
        opt.step(net.parameters(), net.backward(trace, upstream).params);
    }

    auto mse_of = [&](const std::vector<Sample>& set) {
        double acc = 0.0;
        for (const auto& s : set) {
            const double pred = net.forward(Tensor::row(s.features)).values[0];
            acc += (pred - s.label) * (pred - s.label);
        }
        return acc / static_cast<double>(set.size());
    };

    ProbeResult result;
    result.n_train = static_cast<int>(train.size());
    result.n_test = static_cast<int>(test.size());
    result.train_mse = mse_of(train);
    result.test_mse = mse_of(test);
    double mean = 0.0;
    for (const auto& s : test) mean += s.label;
    mean /= static_cast<double>(test.size());
    for (const auto& s : test) result.label_variance += (s.label - mean) * (s.label - mean);
    result.label_variance /= static_cast<double>(test.size());
    return result;
}

} // namespace zeus
