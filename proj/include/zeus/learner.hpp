#pragma once

#include <cstdint>
#include <deque>
#include <stdexcept>
#include <string>
#include <vector>

#include "zeus/family.hpp"
#include "zeus/nn.hpp"
#include "zeus/rng.hpp"

namespace zeus {

// Canonical context-encoder input: the k most recent completed transitions
// strictly before the current step, each flattened to
// [obs ; action ; reward ; next_obs], zero-padded rows first when fewer than
// k transitions exist in the episode.
struct Window {
    int k = 0;
    int row_dim = 0;
    std::vector<double> data; // k x row_dim, row-major

    double* row(int i) { return data.data() + static_cast<std::size_t>(i) * row_dim; }
    const double* row(int i) const { return data.data() + static_cast<std::size_t>(i) * row_dim; }
};

struct Step {
    std::vector<double> obs;
    std::vector<double> action;
    int action_index = 0;
    double reward = 0.0;
    std::vector<double> next_obs;
};

// Episode-granular replay store: uniform sampling over transitions, FIFO
// eviction of whole episodes once the transition count exceeds capacity.
// The stored true context is analysis-only metadata and is never read by any
// loss computation.
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}

    long begin_episode(int env_slot, double true_context);
    void append(long episode_uid, Step step);

    std::size_t size() const { return total_steps_; }
    std::size_t n_episodes() const { return episodes_.size(); }

    struct SampleRef {
        int episode;
        int step;
    };
    SampleRef sample(Rng& rng) const;

    const Step& step_at(const SampleRef& ref) const { return episodes_[ref.episode].steps[ref.step]; }
    double true_context_of(int episode) const { return episodes_[episode].true_context; }

    // Window of the k transitions strictly before ref.step in its episode.
    Window window_before(const SampleRef& ref, int k) const;
    // Window ending at (including) ref.step; feeds the next-step context.
    Window window_including(const SampleRef& ref, int k) const;

private:
    struct Episode {
        long uid;
        int env_slot;
        double true_context;
        std::vector<Step> steps;
    };

    void evict_if_needed();
    static Window build_window(const std::vector<Step>& steps, int end_exclusive, int k);

    std::vector<Episode> episodes_;
    std::size_t capacity_;
    std::size_t total_steps_ = 0;
    long next_uid_ = 0;

    friend class WindowAccess;
};

enum class Aggregator { Sum, Mean, Concat, Product, Min, Max };

Aggregator aggregator_from_string(const std::string& s);
std::string aggregator_to_string(Aggregator a);

struct ZeusConfig {
    int obs_dim = 0;        // full observation dim fed to phi (incl. reward channel)
    int action_dim = 0;     // raw action vector dim
    int n_grid_actions = 0; // policy head outputs
    int k = 5;
    int z_dim = 6;
    int e_dim = 6;
    int hidden = 32;
    Aggregator aggregator = Aggregator::Mean;
    double alpha_psi = 1.0;
    double gamma = 0.99;
    double lr = 3e-4;
    int batch_size = 128;
    int probe_batch = 128;    // probe pairs per distance estimate (capped by batch)
    int critic_update_every = 2;
    double target_tau = 0.05;
    double eps_start = 1.0;
    double eps_final = 0.05;
    double eps_anneal_frac = 0.1; // fraction of total steps spent annealing
    std::size_t replay_capacity = 400000;

    int window_row_dim() const { return 2 * obs_dim + action_dim + 1; }
};

struct LossBreakdown {
    double context_term = 0.0;
    double dynamics_term = 0.0;
    double reward_term = 0.0;
    double total = 0.0;
};

// The learned quadruple (phi, psi, T-hat, R-hat) plus the double-Q policy
// head over a discretized action grid.
class ZeusModel {
public:
    ZeusModel(const ZeusConfig& config, Rng& init);

    const ZeusConfig& config() const { return config_; }
    int context_dim() const;

    std::vector<double> encode_context(const Window& window) const;
    std::vector<double> encode_obs(const std::vector<double>& obs) const;

    // Model-based context distance estimate; forward-only (stop-gradient).
    double approx_context_distance(const Window& h1, const Window& h2,
                                   const std::vector<std::vector<double>>& probe_z,
                                   const std::vector<std::vector<double>>& probe_a) const;

    int greedy_action(const std::vector<double>& obs, const Window& window) const;
    int act(const std::vector<double>& obs, const Window& window, double eps, Rng& rng) const;

    std::uint64_t checksum() const;

    std::string to_json() const;
    static ZeusModel from_json(const std::string& text);

    DenseNet phi;      // observation encoder
    DenseNet psi_pre;  // per-transition encoder, aggregated into the context
    DenseNet dyn;      // latent dynamics (z, a, c) -> z'
    DenseNet rew;      // reward model (z, a, c) -> r
    DenseNet q;        // critic (z, c) -> one value per grid action
    DenseNet q_target;

private:
    ZeusConfig config_;
    explicit ZeusModel(const ZeusConfig& config) : config_(config) {}
};

// One batch for the representation loss: paired windows plus the transitions
// the first window's stream is asked to predict.
struct LossBatch {
    std::vector<Window> h1, h2;
    std::vector<std::vector<double>> obs, action, next_obs;
    std::vector<double> reward;
    int size() const { return static_cast<int>(reward.size()); }
};

struct ZeusGradients {
    std::vector<double> phi, psi_pre, dyn, rew;
};

// Explicit values for the stopped branches. Tests freeze these to finite-
// difference the live paths and to witness that the stopped paths carry no
// gradient.
struct FrozenStops {
    std::vector<double> d_hat;          // one model-distance per pair
    std::vector<double> z_next;         // B x z_dim, row-major
    bool use = false;
};

// The representation loss: embedding-distance regression onto the
// stop-gradient model distance, latent dynamics prediction against the
// stop-gradient next encoding, and reward prediction. When grads is non-null
// the parameter gradients of the scaled total are accumulated there.
LossBreakdown zeus_loss(const ZeusModel& model, const LossBatch& batch, ZeusGradients* grads,
                        const FrozenStops* frozen = nullptr);

struct UpdateRecord {
    long step = 0;
    int context_slot = 0;
    LossBreakdown loss;
    double q_loss = 0.0;
};

struct EpisodeRecord {
    long step = 0;
    int context_slot = 0;
    double episode_return = 0.0;
    double true_context = 0.0;
};

struct TrainLog {
    std::vector<UpdateRecord> updates;
    std::vector<EpisodeRecord> episodes;
    std::string to_csv() const;
};

struct TrainSetup {
    int total_steps = 2000; // env steps per training context
    int distractor_dim = 4;
    double distractor_noise = 0.5;
    int action_levels = 7; // per-dimension grid resolution for continuous actions
    // The observation mixing is part of the experiment definition and must
    // match between training and evaluation, so it is seeded separately from
    // the run seed.
    std::uint64_t mixing_seed = 9001;
};

class ZeroShotViolation : public std::runtime_error {
public:
    explicit ZeroShotViolation(const std::string& what) : std::runtime_error(what) {}
};

// Per-dimension discretization of a continuous action box (or the one-hot
// set for inherently discrete environments).
std::vector<std::vector<double>> make_action_grid(const ContinuousEnv& env, int levels_per_dim);

// ZeusConfig with the observation/action/grid dimensions filled in for the
// given family and setup; callers tweak the remaining knobs afterwards.
ZeusConfig default_zeus_config(const ContextualFamily& family, const TrainSetup& setup);

// Observation pipeline shared by training and evaluation: mixed latent state
// plus distractors, with the previous reward appended for reward-varying
// families.
class ObservationPipeline {
public:
    ObservationPipeline(const ContextualFamily& family, int latent_dim, int distractor_dim,
                        double noise_scale, std::uint64_t mixing_seed);
    int obs_dim() const;
    std::vector<double> observe(const std::vector<double>& latent, double prev_reward, Rng& rng) const;

private:
    BlockObservationMap map_;
    bool append_reward_;
};

struct Trainer {
    // Interleaves one environment step per training context with one critic
    // update and one representation update each. Fully deterministic for a
    // fixed (config, seed).
    static TrainLog train(ZeusModel& model, const ContextualFamily& family,
                          const std::vector<ContextVector>& train_contexts,
                          const TrainSetup& setup, std::uint64_t seed);

    // Greedy evaluation with fresh seeds; the only adaptation channel is the
    // context encoding recomputed each step. Any parameter write trips the
    // checksum and raises ZeroShotViolation.
    static std::vector<double> evaluate_zero_shot(const ZeusModel& model,
                                                  const ContextualFamily& family,
                                                  const std::vector<ContextVector>& contexts,
                                                  int episodes, const TrainSetup& setup,
                                                  std::uint64_t seed);

    // Windows harvested from greedy rollouts of a trained model; used by the
    // context-analysis diagnostics.
    static std::vector<Window> collect_windows(const ZeusModel& model, const ContextualFamily& family,
                                               const ContextVector& context, int count,
                                               const TrainSetup& setup, std::uint64_t seed);
};

} // namespace zeus
