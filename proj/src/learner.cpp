#include "zeus/learner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "json.hpp"

namespace zeus {

// ---------------------------------------------------------------------------
// ReplayBuffer

long ReplayBuffer::begin_episode(int env_slot, double true_context) {
    Episode ep;
    ep.uid = next_uid_++;
    ep.env_slot = env_slot;
    ep.true_context = true_context;
    episodes_.push_back(std::move(ep));
    return episodes_.back().uid;
}

void ReplayBuffer::append(long episode_uid, Step step) {
    for (auto it = episodes_.rbegin(); it != episodes_.rend(); ++it) {
        if (it->uid == episode_uid) {
            it->steps.push_back(std::move(step));
            ++total_steps_;
            evict_if_needed();
            return;
        }
    }
    throw std::invalid_argument("ReplayBuffer::append: unknown episode uid");
}

void ReplayBuffer::evict_if_needed() {
    while (total_steps_ > capacity_ && episodes_.size() > 1) {
        total_steps_ -= episodes_.front().steps.size();
        episodes_.erase(episodes_.begin());
    }
}

ReplayBuffer::SampleRef ReplayBuffer::sample(Rng& rng) const {
    if (total_steps_ == 0) throw std::runtime_error("ReplayBuffer::sample: buffer is empty");
    std::size_t flat = rng.uniform_index(total_steps_);
    for (std::size_t e = 0; e < episodes_.size(); ++e) {
        if (flat < episodes_[e].steps.size())
            return {static_cast<int>(e), static_cast<int>(flat)};
        flat -= episodes_[e].steps.size();
    }
    return {static_cast<int>(episodes_.size() - 1),
            static_cast<int>(episodes_.back().steps.size() - 1)};
}

Window ReplayBuffer::build_window(const std::vector<Step>& steps, int end_exclusive, int k) {
    if (steps.empty()) throw std::invalid_argument("ReplayBuffer: window from empty episode");
    const int od = static_cast<int>(steps[0].obs.size());
    const int ad = static_cast<int>(steps[0].action.size());
    Window w;
    w.k = k;
    w.row_dim = 2 * od + ad + 1;
    w.data.assign(static_cast<std::size_t>(k) * w.row_dim, 0.0);
    const int available = std::min(end_exclusive, k);
    for (int i = 0; i < available; ++i) {
        const Step& s = steps[end_exclusive - available + i];
        double* row = w.row(k - available + i);
        std::copy(s.obs.begin(), s.obs.end(), row);
        std::copy(s.action.begin(), s.action.end(), row + od);
        row[od + ad] = s.reward;
        std::copy(s.next_obs.begin(), s.next_obs.end(), row + od + ad + 1);
    }
    return w;
}

Window ReplayBuffer::window_before(const SampleRef& ref, int k) const {
    return build_window(episodes_[ref.episode].steps, ref.step, k);
}

Window ReplayBuffer::window_including(const SampleRef& ref, int k) const {
    return build_window(episodes_[ref.episode].steps, ref.step + 1, k);
}

// ---------------------------------------------------------------------------
// Aggregators

Aggregator aggregator_from_string(const std::string& s) {
    if (s == "sum") return Aggregator::Sum;
    if (s == "mean") return Aggregator::Mean;
    if (s == "concat") return Aggregator::Concat;
    if (s == "product") return Aggregator::Product;
    if (s == "min") return Aggregator::Min;
    if (s == "max") return Aggregator::Max;
    throw std::invalid_argument("unknown aggregator '" + s + "'");
}

std::string aggregator_to_string(Aggregator a) {
    switch (a) {
        case Aggregator::Sum: return "sum";
        case Aggregator::Mean: return "mean";
        case Aggregator::Concat: return "concat";
        case Aggregator::Product: return "product";
        case Aggregator::Min: return "min";
        case Aggregator::Max: return "max";
    }
    return "mean";
}

namespace {

// Aggregation of per-transition embeddings (B*k x e) into contexts
// (B x context_dim). Min/max remember the winning row (first index on ties)
// for the backward pass.
struct AggregateResult {
    Tensor c;
    std::vector<int> winner; // B x e, used by min/max
};

AggregateResult aggregate_forward(const Tensor& e, int batch, int k, Aggregator agg) {
    const int ed = e.cols();
    AggregateResult res;
    if (agg == Aggregator::Concat) {
        res.c = Tensor::zeros({batch, k * ed});
        for (int b = 0; b < batch; ++b)
            for (int i = 0; i < k; ++i)
                for (int d = 0; d < ed; ++d) res.c.at(b, i * ed + d) = e.at(b * k + i, d);
        return res;
    }
    res.c = Tensor::zeros({batch, ed});
    if (agg == Aggregator::Min || agg == Aggregator::Max) res.winner.assign(static_cast<std::size_t>(batch) * ed, 0);
    for (int b = 0; b < batch; ++b) {
        for (int d = 0; d < ed; ++d) {
            double acc;
            switch (agg) {
                case Aggregator::Sum:
                case Aggregator::Mean: {
                    acc = 0.0;
                    for (int i = 0; i < k; ++i) acc += e.at(b * k + i, d);
                    if (agg == Aggregator::Mean) acc /= k;
                    break;
                }
                case Aggregator::Product: {
                    acc = 1.0;
                    for (int i = 0; i < k; ++i) acc *= e.at(b * k + i, d);
                    break;
                }
                case Aggregator::Min:
                case Aggregator::Max: {
                    acc = e.at(b * k, d);
                    int win = 0;
                    for (int i = 1; i < k; ++i) {
                        const double v = e.at(b * k + i, d);
                        if ((agg == Aggregator::Min && v < acc) || (agg == Aggregator::Max && v > acc)) {
                            acc = v;
                            win = i;
                        }
                    }
                    res.winner[static_cast<std::size_t>(b) * ed + d] = win;
                    break;
                }
                default: acc = 0.0;
            }
            res.c.at(b, d) = acc;
        }
    }
    return res;
}

Tensor aggregate_backward(const Tensor& dc, const Tensor& e, const AggregateResult& fwd, int batch,
                          int k, Aggregator agg) {
    const int ed = e.cols();
    Tensor de = Tensor::zeros({batch * k, ed});
    if (agg == Aggregator::Concat) {
        for (int b = 0; b < batch; ++b)
            for (int i = 0; i < k; ++i)
                for (int d = 0; d < ed; ++d) de.at(b * k + i, d) = dc.at(b, i * ed + d);
        return de;
    }
    for (int b = 0; b < batch; ++b) {
        for (int d = 0; d < ed; ++d) {
            const double g = dc.at(b, d);
            if (g == 0.0) continue;
            switch (agg) {
                case Aggregator::Sum:
                    for (int i = 0; i < k; ++i) de.at(b * k + i, d) = g;
                    break;
                case Aggregator::Mean:
                    for (int i = 0; i < k; ++i) de.at(b * k + i, d) = g / k;
                    break;
                case Aggregator::Product:
                    for (int i = 0; i < k; ++i) {
                        double rest = 1.0;
                        for (int j = 0; j < k; ++j)
                            if (j != i) rest *= e.at(b * k + j, d);
                        de.at(b * k + i, d) = g * rest;
                    }
                    break;
                case Aggregator::Min:
                case Aggregator::Max:
                    de.at(b * k + fwd.winner[static_cast<std::size_t>(b) * ed + d], d) = g;
                    break;
                default: break;
            }
        }
    }
    return de;
}

Tensor stack_windows(const std::vector<Window>& windows) {
    const int k = windows[0].k;
    const int rd = windows[0].row_dim;
    Tensor out = Tensor::zeros({static_cast<int>(windows.size()) * k, rd});
    for (std::size_t b = 0; b < windows.size(); ++b)
        std::copy(windows[b].data.begin(), windows[b].data.end(),
                  out.values.begin() + b * windows[b].data.size());
    return out;
}

Tensor stack_rows(const std::vector<std::vector<double>>& rows) {
    const int d = static_cast<int>(rows[0].size());
    Tensor out = Tensor::zeros({static_cast<int>(rows.size()), d});
    for (std::size_t r = 0; r < rows.size(); ++r)
        std::copy(rows[r].begin(), rows[r].end(), out.values.begin() + r * rows[r].size());
    return out;
}

int argmax_lowest(const double* v, int n) {
    int best = 0;
    for (int i = 1; i < n; ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

} // namespace

// ---------------------------------------------------------------------------
// ZeusModel

ZeusModel::ZeusModel(const ZeusConfig& config, Rng& init) : config_(config) {
    if (config_.obs_dim <= 0 || config_.action_dim <= 0 || config_.n_grid_actions <= 0)
        throw std::invalid_argument("ZeusModel: dimensions must be positive");
    const int cd = context_dim();
    phi = DenseNet({config_.obs_dim, config_.hidden, config_.z_dim},
                   {Activation::Relu, Activation::Identity}, init);
    psi_pre = DenseNet({config_.window_row_dim(), config_.hidden, config_.e_dim},
                       {Activation::Relu, Activation::Identity}, init);
    dyn = DenseNet({config_.z_dim + config_.action_dim + cd, config_.hidden, config_.z_dim},
                   {Activation::Relu, Activation::Identity}, init);
    rew = DenseNet({config_.z_dim + config_.action_dim + cd, config_.hidden, 1},
                   {Activation::Relu, Activation::Identity}, init);
    q = DenseNet({config_.z_dim + cd, config_.hidden, config_.hidden, config_.n_grid_actions},
                 {Activation::Relu, Activation::Relu, Activation::Identity}, init);
    q_target = q;
}

int ZeusModel::context_dim() const {
    return config_.aggregator == Aggregator::Concat ? config_.k * config_.e_dim : config_.e_dim;
}

std::vector<double> ZeusModel::encode_context(const Window& window) const {
    if (window.k != config_.k)
        throw std::invalid_argument("encode_context: window has length " + std::to_string(window.k) +
                                    ", expected " + std::to_string(config_.k));
    if (window.row_dim != config_.window_row_dim())
        throw std::invalid_argument("encode_context: window row dimension mismatch");
    Tensor rows({config_.k, window.row_dim}, window.data);
    const Tensor e = psi_pre.forward(rows);
    const auto agg = aggregate_forward(e, 1, config_.k, config_.aggregator);
    return agg.c.values;
}

std::vector<double> ZeusModel::encode_obs(const std::vector<double>& obs) const {
    return phi.forward(Tensor::row(obs)).values;
}

double ZeusModel::approx_context_distance(const Window& h1, const Window& h2,
                                          const std::vector<std::vector<double>>& probe_z,
                                          const std::vector<std::vector<double>>& probe_a) const {
    if (probe_z.empty() || probe_z.size() != probe_a.size())
        throw std::invalid_argument("approx_context_distance: probe batch must be nonempty and aligned");
    const auto c1 = encode_context(h1);
    const auto c2 = encode_context(h2);

    const int p = static_cast<int>(probe_z.size());
    const int in_dim = config_.z_dim + config_.action_dim + context_dim();
    Tensor in1 = Tensor::zeros({p, in_dim});
    Tensor in2 = Tensor::zeros({p, in_dim});
    for (int j = 0; j < p; ++j) {
        double* r1 = in1.values.data() + static_cast<std::size_t>(j) * in_dim;
        double* r2 = in2.values.data() + static_cast<std::size_t>(j) * in_dim;
        std::copy(probe_z[j].begin(), probe_z[j].end(), r1);
        std::copy(probe_a[j].begin(), probe_a[j].end(), r1 + config_.z_dim);
        std::copy(c1.begin(), c1.end(), r1 + config_.z_dim + config_.action_dim);
        std::copy(probe_z[j].begin(), probe_z[j].end(), r2);
        std::copy(probe_a[j].begin(), probe_a[j].end(), r2 + config_.z_dim);
        std::copy(c2.begin(), c2.end(), r2 + config_.z_dim + config_.action_dim);
    }
    const Tensor r1 = rew.forward(in1), r2 = rew.forward(in2);
    const Tensor t1 = dyn.forward(in1), t2 = dyn.forward(in2);
    double acc = 0.0;
    for (int j = 0; j < p; ++j) {
        acc += std::abs(r1.at(j, 0) - r2.at(j, 0));
        double norm2 = 0.0;
        for (int d = 0; d < config_.z_dim; ++d) {
            const double diff = t1.at(j, d) - t2.at(j, d);
            norm2 += diff * diff;
        }
        acc += std::sqrt(norm2);
    }
    return acc / p;
}

int ZeusModel::greedy_action(const std::vector<double>& obs, const Window& window) const {
    const auto z = encode_obs(obs);
    const auto c = encode_context(window);
    std::vector<double> in(z);
    in.insert(in.end(), c.begin(), c.end());
    const Tensor qv = q.forward(Tensor::row(in));
    return argmax_lowest(qv.values.data(), config_.n_grid_actions);
}

int ZeusModel::act(const std::vector<double>& obs, const Window& window, double eps, Rng& rng) const {
    if (rng.uniform() < eps) return static_cast<int>(rng.uniform_index(config_.n_grid_actions));
    return greedy_action(obs, window);
}

std::uint64_t ZeusModel::checksum() const {
    return parameter_checksum({&phi, &psi_pre, &dyn, &rew, &q, &q_target});
}

std::string ZeusModel::to_json() const {
    nlohmann::json j;
    j["k"] = config_.k;
    j["obs_dim"] = config_.obs_dim;
    j["action_dim"] = config_.action_dim;
    j["n_grid_actions"] = config_.n_grid_actions;
    j["z_dim"] = config_.z_dim;
    j["e_dim"] = config_.e_dim;
    j["hidden"] = config_.hidden;
    j["aggregator"] = aggregator_to_string(config_.aggregator);
    j["alpha_psi"] = config_.alpha_psi;
    j["gamma"] = config_.gamma;
    j["phi"] = nlohmann::json::parse(phi.to_json());
    j["psi_pre"] = nlohmann::json::parse(psi_pre.to_json());
    j["dyn"] = nlohmann::json::parse(dyn.to_json());
    j["rew"] = nlohmann::json::parse(rew.to_json());
    j["q"] = nlohmann::json::parse(q.to_json());
    j["q_target"] = nlohmann::json::parse(q_target.to_json());
    return j.dump();
}

ZeusModel ZeusModel::from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    ZeusConfig cfg;
    cfg.k = j.at("k").get<int>();
    cfg.obs_dim = j.at("obs_dim").get<int>();
    cfg.action_dim = j.at("action_dim").get<int>();
    cfg.n_grid_actions = j.at("n_grid_actions").get<int>();
    cfg.z_dim = j.at("z_dim").get<int>();
    cfg.e_dim = j.at("e_dim").get<int>();
    cfg.hidden = j.at("hidden").get<int>();
    cfg.aggregator = aggregator_from_string(j.at("aggregator").get<std::string>());
    cfg.alpha_psi = j.at("alpha_psi").get<double>();
    cfg.gamma = j.at("gamma").get<double>();
    ZeusModel model(cfg);
    model.phi = DenseNet::from_json(j.at("phi").dump());
    model.psi_pre = DenseNet::from_json(j.at("psi_pre").dump());
    model.dyn = DenseNet::from_json(j.at("dyn").dump());
    model.rew = DenseNet::from_json(j.at("rew").dump());
    model.q = DenseNet::from_json(j.at("q").dump());
    model.q_target = DenseNet::from_json(j.at("q_target").dump());
    return model;
}

// ---------------------------------------------------------------------------
// Representation loss

LossBreakdown zeus_loss(const ZeusModel& model, const LossBatch& batch, ZeusGradients* grads,
                        const FrozenStops* frozen) {
    const ZeusConfig& cfg = model.config();
    const int b_size = batch.size();
    if (b_size == 0) throw std::invalid_argument("zeus_loss: empty batch");
    const int zd = cfg.z_dim;
    const int cd = model.context_dim();
    const int k = cfg.k;

    // Live encodings.
    const Tensor obs_m = stack_rows(batch.obs);
    const auto phi_trace = model.phi.forward_cached(obs_m);
    const Tensor& z_t = phi_trace.output();

    // Stopped branch: next-state encodings, plain forward only.
    Tensor z_next = (frozen && frozen->use) ? Tensor({b_size, zd}, frozen->z_next)
                                            : model.phi.forward(stack_rows(batch.next_obs));

    const auto psi1_trace = model.psi_pre.forward_cached(stack_windows(batch.h1));
    const auto psi2_trace = model.psi_pre.forward_cached(stack_windows(batch.h2));
    const auto agg1 = aggregate_forward(psi1_trace.output(), b_size, k, cfg.aggregator);
    const auto agg2 = aggregate_forward(psi2_trace.output(), b_size, k, cfg.aggregator);

    // Stopped branch: model-based distance per pair, estimated over the
    // minibatch's own encoded states and actions.
    std::vector<double> d_hat(b_size, 0.0);
    if (frozen && frozen->use) {
        d_hat = frozen->d_hat;
    } else {
        const int p = std::min(cfg.probe_batch, b_size);
        const int in_dim = zd + cfg.action_dim + cd;
        Tensor in1 = Tensor::zeros({b_size * p, in_dim});
        Tensor in2 = Tensor::zeros({b_size * p, in_dim});
        for (int b = 0; b < b_size; ++b) {
            for (int j = 0; j < p; ++j) {
                double* r1 = in1.values.data() + (static_cast<std::size_t>(b) * p + j) * in_dim;
                double* r2 = in2.values.data() + (static_cast<std::size_t>(b) * p + j) * in_dim;
                for (int d = 0; d < zd; ++d) r1[d] = z_t.at(j, d);
                std::copy(batch.action[j].begin(), batch.action[j].end(), r1 + zd);
                for (int d = 0; d < cd; ++d) r1[zd + cfg.action_dim + d] = agg1.c.at(b, d);
                std::copy(r1, r1 + zd + cfg.action_dim, r2);
                for (int d = 0; d < cd; ++d) r2[zd + cfg.action_dim + d] = agg2.c.at(b, d);
            }
        }
        const Tensor r1 = model.rew.forward(in1), r2 = model.rew.forward(in2);
        const Tensor t1 = model.dyn.forward(in1), t2 = model.dyn.forward(in2);
        for (int b = 0; b < b_size; ++b) {
            double acc = 0.0;
            for (int j = 0; j < p; ++j) {
                const int row = b * p + j;
                acc += std::abs(r1.at(row, 0) - r2.at(row, 0));
                double n2 = 0.0;
                for (int d = 0; d < zd; ++d) {
                    const double diff = t1.at(row, d) - t2.at(row, d);
                    n2 += diff * diff;
                }
                acc += std::sqrt(n2);
            }
            d_hat[b] = acc / p;
        }
    }

    // Context term: embedding distance vs the stopped model distance.
    std::vector<double> dist(b_size, 0.0);
    LossBreakdown out;
    for (int b = 0; b < b_size; ++b) {
        double n2 = 0.0;
        for (int d = 0; d < cd; ++d) {
            const double diff = agg1.c.at(b, d) - agg2.c.at(b, d);
            n2 += diff * diff;
        }
        dist[b] = std::sqrt(n2);
        const double resid = dist[b] - d_hat[b];
        out.context_term += resid * resid;
    }
    out.context_term /= b_size;

    // Dynamics and reward terms share the input rows [z_t ; a ; c1].
    const int model_in_dim = zd + cfg.action_dim + cd;
    Tensor model_in = Tensor::zeros({b_size, model_in_dim});
    for (int b = 0; b < b_size; ++b) {
        double* row = model_in.values.data() + static_cast<std::size_t>(b) * model_in_dim;
        for (int d = 0; d < zd; ++d) row[d] = z_t.at(b, d);
        std::copy(batch.action[b].begin(), batch.action[b].end(), row + zd);
        for (int d = 0; d < cd; ++d) row[zd + cfg.action_dim + d] = agg1.c.at(b, d);
    }
    const auto dyn_trace = model.dyn.forward_cached(model_in);
    const auto rew_trace = model.rew.forward_cached(model_in);

    for (int b = 0; b < b_size; ++b) {
        for (int d = 0; d < zd; ++d) {
            const double diff = dyn_trace.output().at(b, d) - z_next.at(b, d);
            out.dynamics_term += diff * diff;
        }
        const double rdiff = rew_trace.output().at(b, 0) - batch.reward[b];
        out.reward_term += rdiff * rdiff;
    }
    out.dynamics_term /= static_cast<double>(b_size) * zd;
    out.reward_term /= b_size;
    out.total = cfg.alpha_psi * out.context_term + out.dynamics_term + out.reward_term;

    if (!grads) return out;

    // Backward. Upstreams carry the batch-mean normalizations.
    Tensor dyn_up = Tensor::zeros({b_size, zd});
    for (int b = 0; b < b_size; ++b)
        for (int d = 0; d < zd; ++d)
            dyn_up.at(b, d) =
                2.0 * (dyn_trace.output().at(b, d) - z_next.at(b, d)) / (static_cast<double>(b_size) * zd);
    Tensor rew_up = Tensor::zeros({b_size, 1});
    for (int b = 0; b < b_size; ++b)
        rew_up.at(b, 0) = 2.0 * (rew_trace.output().at(b, 0) - batch.reward[b]) / b_size;

    const auto dyn_grad = model.dyn.backward(dyn_trace, dyn_up);
    const auto rew_grad = model.rew.backward(rew_trace, rew_up);
    grads->dyn = dyn_grad.params;
    grads->rew = rew_grad.params;

    Tensor dz = Tensor::zeros({b_size, zd});
    Tensor dc1 = Tensor::zeros({b_size, cd});
    Tensor dc2 = Tensor::zeros({b_size, cd});
    for (int b = 0; b < b_size; ++b) {
        for (int d = 0; d < zd; ++d)
            dz.at(b, d) = dyn_grad.input.at(b, d) + rew_grad.input.at(b, d);
        for (int d = 0; d < cd; ++d)
            dc1.at(b, d) = dyn_grad.input.at(b, zd + cfg.action_dim + d) +
                           rew_grad.input.at(b, zd + cfg.action_dim + d);
    }
    for (int b = 0; b < b_size; ++b) {
        const double delta = cfg.alpha_psi * 2.0 * (dist[b] - d_hat[b]) / b_size;
        if (dist[b] > 1e-12) {
            for (int d = 0; d < cd; ++d) {
                const double dir = (agg1.c.at(b, d) - agg2.c.at(b, d)) / dist[b];
                dc1.at(b, d) += delta * dir;
                dc2.at(b, d) -= delta * dir;
            }
        }
    }

    const Tensor de1 = aggregate_backward(dc1, psi1_trace.output(), agg1, b_size, k, cfg.aggregator);
    const Tensor de2 = aggregate_backward(dc2, psi2_trace.output(), agg2, b_size, k, cfg.aggregator);
    const auto psi_grad1 = model.psi_pre.backward(psi1_trace, de1);
    const auto psi_grad2 = model.psi_pre.backward(psi2_trace, de2);
    grads->psi_pre = psi_grad1.params;
    for (std::size_t i = 0; i < grads->psi_pre.size(); ++i) grads->psi_pre[i] += psi_grad2.params[i];

    grads->phi = model.phi.backward(phi_trace, dz).params;
    return out;
}

// ---------------------------------------------------------------------------
// Grid, config, observation pipeline

std::vector<std::vector<double>> make_action_grid(const ContinuousEnv& env, int levels_per_dim) {
    std::vector<std::vector<double>> grid;
    if (env.discrete_actions()) {
        for (int a = 0; a < env.action_dim(); ++a) {
            std::vector<double> one_hot(env.action_dim(), 0.0);
            one_hot[a] = 1.0;
            grid.push_back(std::move(one_hot));
        }
        return grid;
    }
    if (levels_per_dim < 2) throw std::invalid_argument("make_action_grid: need at least two levels");
    const auto [lo, hi] = env.action_box();
    const int dims = env.action_dim();
    std::vector<int> idx(dims, 0);
    while (true) {
        std::vector<double> a(dims);
        for (int d = 0; d < dims; ++d)
            a[d] = lo + (hi - lo) * idx[d] / static_cast<double>(levels_per_dim - 1);
        grid.push_back(std::move(a));
        int d = dims - 1;
        while (d >= 0 && ++idx[d] == levels_per_dim) {
            idx[d] = 0;
            --d;
        }
        if (d < 0) break;
    }
    return grid;
}

ObservationPipeline::ObservationPipeline(const ContextualFamily& family, int latent_dim,
                                         int distractor_dim, double noise_scale,
                                         std::uint64_t mixing_seed)
    : map_(latent_dim, distractor_dim, noise_scale, mixing_seed),
      append_reward_(family.reward_varying()) {}

int ObservationPipeline::obs_dim() const {
    return map_.obs_dim() + (append_reward_ ? 1 : 0);
}

std::vector<double> ObservationPipeline::observe(const std::vector<double>& latent,
                                                 double prev_reward, Rng& rng) const {
    std::vector<double> obs = map_.observe(latent, rng);
    if (append_reward_) obs.push_back(prev_reward);
    return obs;
}

ZeusConfig default_zeus_config(const ContextualFamily& family, const TrainSetup& setup) {
    const auto split = family.default_split();
    const auto env = family.make_env(split.train.front());
    ObservationPipeline pipeline(family, env->state_dim(), setup.distractor_dim,
                                 setup.distractor_noise, setup.mixing_seed);
    ZeusConfig cfg;
    cfg.obs_dim = pipeline.obs_dim();
    cfg.action_dim = env->action_dim();
    cfg.n_grid_actions = static_cast<int>(make_action_grid(*env, setup.action_levels).size());
    return cfg;
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct EnvSlot {
    std::unique_ptr<ContinuousEnv> env;
    ContextVector context;
    long episode_uid = -1;
    std::vector<double> obs;
    std::deque<Step> recent; // last <= k steps of the running episode
    double prev_reward = 0.0;
    double episode_return = 0.0;
    int t_in_episode = 0;
    Rng reset_stream;
    Rng noise_stream;
};

Window window_from_recent(const std::deque<Step>& recent, int k, int row_dim) {
    Window w;
    w.k = k;
    w.row_dim = row_dim;
    w.data.assign(static_cast<std::size_t>(k) * row_dim, 0.0);
    const int available = static_cast<int>(recent.size());
    for (int i = 0; i < available; ++i) {
        const Step& s = recent[recent.size() - available + i];
        double* row = w.row(k - available + i);
        const int od = static_cast<int>(s.obs.size());
        const int ad = static_cast<int>(s.action.size());
        std::copy(s.obs.begin(), s.obs.end(), row);
        std::copy(s.action.begin(), s.action.end(), row + od);
        row[od + ad] = s.reward;
        std::copy(s.next_obs.begin(), s.next_obs.end(), row + od + ad + 1);
    }
    return w;
}

void reset_slot(EnvSlot& slot, ReplayBuffer& replay, int slot_index,
                const ObservationPipeline& pipeline) {
    slot.obs = pipeline.observe(slot.env->reset(slot.reset_stream), 0.0, slot.noise_stream);
    slot.prev_reward = 0.0;
    slot.recent.clear();
    slot.episode_return = 0.0;
    slot.t_in_episode = 0;
    slot.episode_uid = replay.begin_episode(slot_index, slot.context.scalar());
}

double critic_update(ZeusModel& model, const ReplayBuffer& replay, Rng& rng, Optimizer& q_opt,
                     Optimizer& phi_opt) {
    const ZeusConfig& cfg = model.config();
    const int b_size = std::min<std::size_t>(cfg.batch_size, replay.size());
    const int zd = cfg.z_dim;
    const int cd = model.context_dim();

    std::vector<ReplayBuffer::SampleRef> refs(b_size);
    for (int b = 0; b < b_size; ++b) refs[b] = replay.sample(rng);

    std::vector<std::vector<double>> obs(b_size), next_obs(b_size);
    std::vector<Window> w(b_size), w_next(b_size);
    std::vector<int> act_idx(b_size);
    std::vector<double> rewards(b_size);
    for (int b = 0; b < b_size; ++b) {
        const Step& s = replay.step_at(refs[b]);
        obs[b] = s.obs;
        next_obs[b] = s.next_obs;
        act_idx[b] = s.action_index;
        rewards[b] = s.reward;
        w[b] = replay.window_before(refs[b], cfg.k);
        w_next[b] = replay.window_including(refs[b], cfg.k);
    }

    const auto phi_trace = model.phi.forward_cached(stack_rows(obs));
    const Tensor z_next = model.phi.forward(stack_rows(next_obs));
    const auto agg = aggregate_forward(model.psi_pre.forward(stack_windows(w)), b_size, cfg.k,
                                       cfg.aggregator);
    const auto agg_next = aggregate_forward(model.psi_pre.forward(stack_windows(w_next)), b_size,
                                            cfg.k, cfg.aggregator);

    auto join = [&](const Tensor& z, const Tensor& c) {
        Tensor in = Tensor::zeros({b_size, zd + cd});
        for (int b = 0; b < b_size; ++b) {
            for (int d = 0; d < zd; ++d) in.at(b, d) = z.at(b, d);
            for (int d = 0; d < cd; ++d) in.at(b, zd + d) = c.at(b, d);
        }
        return in;
    };

    // Double Q targets: online argmax, target evaluation.
    const Tensor next_in = join(z_next, agg_next.c);
    const Tensor q_next_online = model.q.forward(next_in);
    const Tensor q_next_target = model.q_target.forward(next_in);
    std::vector<double> targets(b_size);
    for (int b = 0; b < b_size; ++b) {
        const int a_star = argmax_lowest(
            q_next_online.values.data() + static_cast<std::size_t>(b) * cfg.n_grid_actions,
            cfg.n_grid_actions);
        targets[b] = rewards[b] + cfg.gamma * q_next_target.at(b, a_star);
    }

    const auto q_trace = model.q.forward_cached(join(phi_trace.output(), agg.c));
    Tensor upstream = Tensor::zeros({b_size, cfg.n_grid_actions});
    double loss = 0.0;
    for (int b = 0; b < b_size; ++b) {
        const double diff = q_trace.output().at(b, act_idx[b]) - targets[b];
        loss += diff * diff;
        upstream.at(b, act_idx[b]) = 2.0 * diff / b_size;
    }
    loss /= b_size;

    const auto q_grad = model.q.backward(q_trace, upstream);
    q_opt.step(model.q.parameters(), q_grad.params);

    // The observation encoder also learns from the critic; the context
    // encoder is trained by the representation loss alone.
    Tensor dz = Tensor::zeros({b_size, zd});
    for (int b = 0; b < b_size; ++b)
        for (int d = 0; d < zd; ++d) dz.at(b, d) = q_grad.input.at(b, d);
    phi_opt.step(model.phi.parameters(), model.phi.backward(phi_trace, dz).params);
    return loss;
}

LossBreakdown representation_update(ZeusModel& model, const ReplayBuffer& replay, Rng& rng,
                                    Optimizer& phi_opt, Optimizer& psi_opt, Optimizer& dyn_opt,
                                    Optimizer& rew_opt) {
    const ZeusConfig& cfg = model.config();
    const int b_size = std::min<std::size_t>(cfg.batch_size, replay.size());

    LossBatch batch;
    batch.h1.resize(b_size);
    batch.h2.resize(b_size);
    batch.obs.resize(b_size);
    batch.action.resize(b_size);
    batch.next_obs.resize(b_size);
    batch.reward.resize(b_size);
    for (int b = 0; b < b_size; ++b) {
        const auto ref1 = replay.sample(rng);
        const auto ref2 = replay.sample(rng);
        const Step& s = replay.step_at(ref1);
        batch.h1[b] = replay.window_before(ref1, cfg.k);
        batch.h2[b] = replay.window_before(ref2, cfg.k);
        batch.obs[b] = s.obs;
        batch.action[b] = s.action;
        batch.next_obs[b] = s.next_obs;
        batch.reward[b] = s.reward;
    }

    ZeusGradients grads;
    const LossBreakdown loss = zeus_loss(model, batch, &grads);
    phi_opt.step(model.phi.parameters(), grads.phi);
    psi_opt.step(model.psi_pre.parameters(), grads.psi_pre);
    dyn_opt.step(model.dyn.parameters(), grads.dyn);
    rew_opt.step(model.rew.parameters(), grads.rew);
    return loss;
}

} // namespace

TrainLog Trainer::train(ZeusModel& model, const ContextualFamily& family,
                        const std::vector<ContextVector>& train_contexts, const TrainSetup& setup,
                        std::uint64_t seed) {
    if (train_contexts.empty()) throw std::invalid_argument("train: no training contexts");
    const ZeusConfig& cfg = model.config();

    const auto probe_env = family.make_env(train_contexts.front());
    ObservationPipeline pipeline(family, probe_env->state_dim(), setup.distractor_dim,
                                 setup.distractor_noise, setup.mixing_seed);
    if (pipeline.obs_dim() != cfg.obs_dim)
        throw std::invalid_argument("train: model obs_dim does not match the observation pipeline");
    const auto grid = make_action_grid(*probe_env, setup.action_levels);
    if (static_cast<int>(grid.size()) != cfg.n_grid_actions)
        throw std::invalid_argument("train: model grid size does not match the action grid");

    Rng root(seed, 0);
    Rng act_stream = root.split(1);
    Rng sample_stream = root.split(2);

    ReplayBuffer replay(cfg.replay_capacity);
    const int n_ctx = static_cast<int>(train_contexts.size());
    std::vector<EnvSlot> slots(n_ctx);
    for (int i = 0; i < n_ctx; ++i) {
        slots[i].env = family.make_env(train_contexts[i]);
        slots[i].context = train_contexts[i];
        slots[i].reset_stream = root.split(100 + static_cast<std::uint64_t>(i));
        slots[i].noise_stream = root.split(200 + static_cast<std::uint64_t>(i));
        reset_slot(slots[i], replay, i, pipeline);
    }

    Optimizer phi_opt(OptMethod::Adam, cfg.lr);
    Optimizer psi_opt(OptMethod::Adam, cfg.lr);
    Optimizer dyn_opt(OptMethod::Adam, cfg.lr);
    Optimizer rew_opt(OptMethod::Adam, cfg.lr);
    Optimizer q_opt(OptMethod::Adam, cfg.lr);

    TrainLog log;
    const long total_env_steps = static_cast<long>(setup.total_steps) * n_ctx;
    const long anneal_steps = std::max<long>(1, static_cast<long>(cfg.eps_anneal_frac * total_env_steps));
    long global_step = 0;
    long critic_updates = 0;

    for (int step = 0; step < setup.total_steps; ++step) {
        for (int i = 0; i < n_ctx; ++i) {
            EnvSlot& slot = slots[i];
            const double frac = std::min(1.0, static_cast<double>(global_step) / anneal_steps);
            const double eps = cfg.eps_start + frac * (cfg.eps_final - cfg.eps_start);

            const Window w = window_from_recent(slot.recent, cfg.k, cfg.window_row_dim());
            const int a_idx = model.act(slot.obs, w, eps, act_stream);
            auto [latent, reward] = slot.env->step(grid[a_idx]);
            std::vector<double> next_obs = pipeline.observe(latent, reward, slot.noise_stream);

            Step s;
            s.obs = slot.obs;
            s.action = grid[a_idx];
            s.action_index = a_idx;
            s.reward = reward;
            s.next_obs = next_obs;
            replay.append(slot.episode_uid, s);
            slot.recent.push_back(std::move(s));
            while (static_cast<int>(slot.recent.size()) > cfg.k) slot.recent.pop_front();
            slot.obs = std::move(next_obs);
            slot.episode_return += reward;
            ++slot.t_in_episode;
            ++global_step;

            if (slot.t_in_episode >= slot.env->horizon()) {
                log.episodes.push_back(
                    {global_step, i, slot.episode_return, slot.context.scalar()});
                reset_slot(slot, replay, i, pipeline);
            }

            if (replay.size() >= static_cast<std::size_t>(cfg.batch_size)) {
                const double q_loss = critic_update(model, replay, sample_stream, q_opt, phi_opt);
                const LossBreakdown loss =
                    representation_update(model, replay, sample_stream, phi_opt, psi_opt, dyn_opt, rew_opt);
                if (!std::isfinite(loss.total) || !std::isfinite(q_loss))
                    throw std::runtime_error(
                        "train: non-finite loss at step " + std::to_string(global_step) +
                        " (context " + std::to_string(loss.context_term) + ", dynamics " +
                        std::to_string(loss.dynamics_term) + ", reward " +
                        std::to_string(loss.reward_term) + ", q " + std::to_string(q_loss) + ")");
                log.updates.push_back({global_step, i, loss, q_loss});

                if (++critic_updates % cfg.critic_update_every == 0) {
                    auto& tgt = model.q_target.parameters();
                    const auto& online = model.q.parameters();
                    for (std::size_t p = 0; p < tgt.size(); ++p)
                        tgt[p] = (1.0 - cfg.target_tau) * tgt[p] + cfg.target_tau * online[p];
                }
            }
        }
    }
    return log;
}

std::vector<double> Trainer::evaluate_zero_shot(const ZeusModel& model,
                                                const ContextualFamily& family,
                                                const std::vector<ContextVector>& contexts,
                                                int episodes, const TrainSetup& setup,
                                                std::uint64_t seed) {
    const ZeusConfig& cfg = model.config();
    const std::uint64_t before = model.checksum();

    std::vector<double> returns;
    returns.reserve(contexts.size());
    for (std::size_t ci = 0; ci < contexts.size(); ++ci) {
        const auto env = family.make_env(contexts[ci]);
        ObservationPipeline pipeline(family, env->state_dim(), setup.distractor_dim,
                                     setup.distractor_noise, setup.mixing_seed);
        if (pipeline.obs_dim() != cfg.obs_dim)
            throw std::invalid_argument("evaluate_zero_shot: obs_dim mismatch");
        const auto grid = make_action_grid(*env, setup.action_levels);

        Rng ctx_root(seed, 1000 + ci);
        double total = 0.0;
        for (int ep = 0; ep < episodes; ++ep) {
            Rng reset_stream = ctx_root.split(2 * ep);
            Rng noise_stream = ctx_root.split(2 * ep + 1);
            std::vector<double> obs = pipeline.observe(env->reset(reset_stream), 0.0, noise_stream);
            std::deque<Step> recent;
            double ep_return = 0.0;
            for (int t = 0; t < env->horizon(); ++t) {
                const Window w = window_from_recent(recent, cfg.k, cfg.window_row_dim());
                const int a_idx = model.greedy_action(obs, w);
                auto [latent, reward] = env->step(grid[a_idx]);
                std::vector<double> next_obs = pipeline.observe(latent, reward, noise_stream);
                Step s;
                s.obs = obs;
                s.action = grid[a_idx];
                s.action_index = a_idx;
                s.reward = reward;
                s.next_obs = next_obs;
                recent.push_back(std::move(s));
                while (static_cast<int>(recent.size()) > cfg.k) recent.pop_front();
                obs = std::move(next_obs);
                ep_return += reward;
            }
            total += ep_return;
        }
        returns.push_back(total / episodes);
    }

    if (model.checksum() != before)
        throw ZeroShotViolation("evaluate_zero_shot: parameters changed during evaluation");
    return returns;
}

std::vector<Window> Trainer::collect_windows(const ZeusModel& model, const ContextualFamily& family,
                                             const ContextVector& context, int count,
                                             const TrainSetup& setup, std::uint64_t seed) {
    const ZeusConfig& cfg = model.config();
    const auto env = family.make_env(context);
    ObservationPipeline pipeline(family, env->state_dim(), setup.distractor_dim,
                                 setup.distractor_noise, setup.mixing_seed);
    const auto grid = make_action_grid(*env, setup.action_levels);

    std::vector<Window> windows;
    Rng root(seed, 7777);
    long guard = 0;
    while (static_cast<int>(windows.size()) < count && guard < 1000) {
        Rng reset_stream = root.split(2 * guard);
        Rng noise_stream = root.split(2 * guard + 1);
        ++guard;
        std::vector<double> obs = pipeline.observe(env->reset(reset_stream), 0.0, noise_stream);
        std::deque<Step> recent;
        for (int t = 0; t < env->horizon() && static_cast<int>(windows.size()) < count; ++t) {
            const Window w = window_from_recent(recent, cfg.k, cfg.window_row_dim());
            // Only harvest fully populated windows.
            if (static_cast<int>(recent.size()) == cfg.k) windows.push_back(w);
            const int a_idx = model.greedy_action(obs, w);
            auto [latent, reward] = env->step(grid[a_idx]);
            std::vector<double> next_obs = pipeline.observe(latent, reward, noise_stream);
            Step s;
            s.obs = obs;
            s.action = grid[a_idx];
            s.action_index = a_idx;
            s.reward = reward;
            s.next_obs = next_obs;
            recent.push_back(std::move(s));
            while (static_cast<int>(recent.size()) > cfg.k) recent.pop_front();
            obs = std::move(next_obs);
        }
    }
    if (static_cast<int>(windows.size()) < count)
        throw std::runtime_error("collect_windows: could not gather enough windows");
    return windows;
}

std::string TrainLog::to_csv() const {
    std::string out = "record,step,context_slot,context_term,dynamics_term,reward_term,total,"
                      "q_loss,episode_return,true_context\n";
    char buf[512];
    for (const auto& u : updates) {
        std::snprintf(buf, sizeof(buf), "update,%ld,%d,%.17g,%.17g,%.17g,%.17g,%.17g,,\n", u.step,
                      u.context_slot, u.loss.context_term, u.loss.dynamics_term, u.loss.reward_term,
                      u.loss.total, u.q_loss);
        out += buf;
    }
    for (const auto& e : episodes) {
        std::snprintf(buf, sizeof(buf), "episode,%ld,%d,,,,,,%.17g,%.17g\n", e.step, e.context_slot,
                      e.episode_return, e.true_context);
        out += buf;
    }
    return out;
}

} // namespace zeus
