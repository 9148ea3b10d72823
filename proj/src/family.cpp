#include "zeus/family.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace zeus {

double l1_distance(const ContextVector& a, const ContextVector& b) {
    if (a.values.size() != b.values.size())
        throw std::invalid_argument("l1_distance: context dimensions differ");
    double d = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) d += std::abs(a.values[i] - b.values[i]);
    return d;
}

bool check_split(const ContextSplit& split, std::string* why) {
    auto fail = [&](const std::string& msg) {
        if (why) *why = msg;
        return false;
    };
    if (split.train.empty()) return fail("train context list is empty");
    for (const auto& c : split.train)
        if (c.values.size() != 1) return fail("hull check supports scalar contexts only");
    double lo = split.train[0].scalar(), hi = lo;
    for (const auto& c : split.train) {
        lo = std::min(lo, c.scalar());
        hi = std::max(hi, c.scalar());
    }
    for (const auto& c : split.eval_interpolation)
        if (c.scalar() < lo || c.scalar() > hi)
            return fail("interpolation context " + std::to_string(c.scalar()) +
                        " outside train hull [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    for (const auto& c : split.eval_extrapolation)
        if (c.scalar() >= lo && c.scalar() <= hi)
            return fail("extrapolation context " + std::to_string(c.scalar()) +
                        " inside train hull [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    if (why) why->clear();
    return true;
}

bool check_schedule(const ContextSchedule& schedule, std::string* why) {
    for (std::size_t t = 0; t + 1 < schedule.contexts.size(); ++t) {
        const double step = l1_distance(schedule.contexts[t], schedule.contexts[t + 1]);
        if (step > schedule.max_step + 1e-12) {
            if (why)
                *why = "schedule step " + std::to_string(t) + " moves " + std::to_string(step) +
                       " > max step " + std::to_string(schedule.max_step);
            return false;
        }
    }
    if (why) why->clear();
    return true;
}

// ---------------------------------------------------------------------------
// TabularEnv

TabularEnv::TabularEnv(TabularMDP mdp, int start_state, int horizon)
    : mdp_(std::move(mdp)), start_state_(start_state), horizon_(horizon), state_(start_state) {
    if (start_state_ < 0 || start_state_ >= mdp_.n_states())
        throw std::invalid_argument("TabularEnv: start state out of range");
}

std::vector<double> TabularEnv::reset(Rng& rng) {
    stream_ = Rng(rng.next_u64(), 0);
    state_ = start_state_;
    std::vector<double> one_hot(mdp_.n_states(), 0.0);
    one_hot[state_] = 1.0;
    return one_hot;
}

std::pair<std::vector<double>, double> TabularEnv::step(const std::vector<double>& action) {
    if (static_cast<int>(action.size()) != mdp_.n_actions())
        throw std::invalid_argument("TabularEnv::step: action vector has wrong dimension");
    int a = 0;
    for (int i = 1; i < mdp_.n_actions(); ++i)
        if (action[i] > action[a]) a = i;

    const double* row = mdp_.transition_row(state_, a);
    std::vector<double> probs(row, row + mdp_.n_states());
    const double reward = mdp_.reward(state_, a);
    state_ = static_cast<int>(stream_.categorical(probs));

    std::vector<double> one_hot(mdp_.n_states(), 0.0);
    one_hot[state_] = 1.0;
    return {std::move(one_hot), reward};
}

// ---------------------------------------------------------------------------
// ContextualFamily

TabularMDP ContextualFamily::make_mdp(const ContextVector&) const {
    throw std::runtime_error("family '" + id() + "' is not tabular");
}

void ContextualFamily::require_in_range(const ContextVector& c) const {
    const auto [lo, hi] = context_range();
    if (c.values.size() != 1)
        throw std::invalid_argument("family '" + id() + "' expects a scalar context");
    const double v = c.scalar();
    if (v < lo)
        throw std::out_of_range("context " + std::to_string(v) + " below lower bound " +
                                std::to_string(lo) + " of family '" + id() + "'");
    if (v > hi)
        throw std::out_of_range("context " + std::to_string(v) + " above upper bound " +
                                std::to_string(hi) + " of family '" + id() + "'");
}

std::unique_ptr<ContextualFamily> make_family(const std::string& id) {
    if (id == "slipgrid") return std::make_unique<SlipGridFamily>();
    if (id == "drag_pointmass") return std::make_unique<DragPointMassFamily>();
    if (id == "target_velocity_pointmass") return std::make_unique<TargetVelocityPointMassFamily>();
    throw std::invalid_argument("unknown family id '" + id + "'");
}

// ---------------------------------------------------------------------------
// SlipGrid

SlipGridFamily::SlipGridFamily(int n, int goal_state, double gamma, int horizon)
    : n_(n), goal_(goal_state < 0 ? n * n - 1 : goal_state), gamma_(gamma), horizon_(horizon) {
    if (n_ < 2) throw std::invalid_argument("SlipGridFamily: grid size must be >= 2");
    if (goal_ < 0 || goal_ >= n_ * n_)
        throw std::invalid_argument("SlipGridFamily: goal state out of range");
}

ContextSplit SlipGridFamily::default_split() const {
    ContextSplit s;
    for (double v : {0.10, 0.15, 0.20, 0.25, 0.40, 0.45}) s.train.emplace_back(v);
    for (double v : {0.30, 0.35}) s.eval_interpolation.emplace_back(v);
    for (double v : {0.02, 0.05, 0.55, 0.60}) s.eval_extrapolation.emplace_back(v);
    return s;
}

TabularMDP SlipGridFamily::make_mdp(const ContextVector& c) const {
    require_in_range(c);
    const double slip = c.scalar();
    const int ns = n_ * n_;
    const int na = 4; // up, down, left, right
    std::vector<double> transition(static_cast<std::size_t>(ns) * na * ns, 0.0);
    std::vector<double> reward(static_cast<std::size_t>(ns) * na, 0.0);

    // dr/dc per action, laterals are the two perpendicular moves
    static const int dr[4] = {-1, 1, 0, 0};
    static const int dc[4] = {0, 0, -1, 1};
    static const int lat[4][2] = {{2, 3}, {2, 3}, {0, 1}, {0, 1}};

    auto clipped_move = [&](int state, int move) {
        const int r = state / n_, col = state % n_;
        const int nr = r + dr[move], nc = col + dc[move];
        if (nr < 0 || nr >= n_ || nc < 0 || nc >= n_) return state;
        return nr * n_ + nc;
    };

    for (int s = 0; s < ns; ++s) {
        for (int a = 0; a < na; ++a) {
            double* row = transition.data() + (static_cast<std::size_t>(s) * na + a) * ns;
            if (s == goal_) {
                row[s] = 1.0;
                reward[static_cast<std::size_t>(s) * na + a] = 1.0;
                continue;
            }
            row[clipped_move(s, a)] += 1.0 - slip;
            row[clipped_move(s, lat[a][0])] += slip / 2.0;
            row[clipped_move(s, lat[a][1])] += slip / 2.0;
        }
    }
    return TabularMDP(ns, na, std::move(transition), std::move(reward), gamma_);
}

std::unique_ptr<ContinuousEnv> SlipGridFamily::make_env(const ContextVector& c) const {
    return std::make_unique<TabularEnv>(make_mdp(c), /*start_state=*/0, horizon_);
}

std::unique_ptr<SlipGridFamily> make_random_slipgrid(Rng& rng) {
    const int n = 3 + static_cast<int>(rng.uniform_index(3));
    int goal = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(n) * n));
    if (goal == 0) goal = n * n - 1; // keep the start cell non-absorbing
    return std::make_unique<SlipGridFamily>(n, goal, 0.9);
}

// ---------------------------------------------------------------------------
// Point-mass environments

namespace {

constexpr double kDt = 0.1;
constexpr int kPointMassHorizon = 40;

class DragPointMassEnv : public ContinuousEnv {
public:
    explicit DragPointMassEnv(double drag) : drag_(drag), state_(4, 0.0) {}

    int state_dim() const override { return 4; }
    int action_dim() const override { return 2; }
    std::pair<double, double> action_box() const override { return {-1.0, 1.0}; }
    int horizon() const override { return kPointMassHorizon; }

    std::vector<double> reset(Rng& rng) override {
        Rng stream(rng.next_u64(), 0);
        // Start on a ring around the goal at the origin.
        const double angle = stream.uniform(0.0, 6.283185307179586);
        const double radius = 1.2 + 0.3 * stream.uniform();
        state_ = {radius * std::cos(angle), radius * std::sin(angle), 0.0, 0.0};
        return state_;
    }

    std::pair<std::vector<double>, double> step(const std::vector<double>& action) override {
        if (action.size() != 2)
            throw std::invalid_argument("DragPointMassEnv::step: action must be 2-D");
        const double ax = std::clamp(action[0], -1.0, 1.0);
        const double ay = std::clamp(action[1], -1.0, 1.0);
        state_[2] += kDt * (2.0 * ax - drag_ * state_[2]);
        state_[3] += kDt * (2.0 * ay - drag_ * state_[3]);
        state_[0] += kDt * state_[2];
        state_[1] += kDt * state_[3];
        const double dist2 = state_[0] * state_[0] + state_[1] * state_[1];
        const double reward = std::exp(-dist2 / 0.25);
        return {state_, reward};
    }

private:
    double drag_;
    std::vector<double> state_; // (px, py, vx, vy)
};

class TargetVelocityEnv : public ContinuousEnv {
public:
    explicit TargetVelocityEnv(double target_velocity)
        : target_(target_velocity), state_(2, 0.0) {}

    int state_dim() const override { return 2; }
    int action_dim() const override { return 1; }
    std::pair<double, double> action_box() const override { return {-1.0, 1.0}; }
    int horizon() const override { return kPointMassHorizon; }

    std::vector<double> reset(Rng& rng) override {
        Rng stream(rng.next_u64(), 0);
        state_ = {0.0, 3.0 * stream.uniform()};
        return state_;
    }

    std::pair<std::vector<double>, double> step(const std::vector<double>& action) override {
        if (action.size() != 1)
            throw std::invalid_argument("TargetVelocityEnv::step: action must be 1-D");
        const double a = std::clamp(action[0], -1.0, 1.0);
        state_[1] = 0.95 * state_[1] + kDt * 4.0 * a;
        state_[0] += kDt * state_[1];
        const double dv = state_[1] - target_;
        const double reward = std::exp(-dv * dv / 0.25);
        return {state_, reward};
    }

private:
    double target_;
    std::vector<double> state_; // (x, v)
};

} // namespace

ContextSplit DragPointMassFamily::default_split() const {
    ContextSplit s;
    for (double v : {0.3, 0.4, 0.5, 0.6, 0.9, 1.0}) s.train.emplace_back(v);
    for (double v : {0.7, 0.8}) s.eval_interpolation.emplace_back(v);
    for (double v : {0.1, 0.2, 1.2, 1.5, 1.8}) s.eval_extrapolation.emplace_back(v);
    return s;
}

std::unique_ptr<ContinuousEnv> DragPointMassFamily::make_env(const ContextVector& c) const {
    require_in_range(c);
    return std::make_unique<DragPointMassEnv>(c.scalar());
}

ContextSplit TargetVelocityPointMassFamily::default_split() const {
    ContextSplit s;
    for (double v : {0.0, 0.43, 0.86, 1.29, 1.71, 2.14}) s.train.emplace_back(v);
    for (double v : {0.6, 1.0, 1.5}) s.eval_interpolation.emplace_back(v);
    for (double v : {2.4, 2.6, 2.8, 3.0}) s.eval_extrapolation.emplace_back(v);
    return s;
}

std::unique_ptr<ContinuousEnv> TargetVelocityPointMassFamily::make_env(const ContextVector& c) const {
    require_in_range(c);
    return std::make_unique<TargetVelocityEnv>(c.scalar());
}

// ---------------------------------------------------------------------------
// BlockObservationMap

namespace {

// Orthonormal matrix via Gram-Schmidt on seeded normal draws.
std::vector<double> random_orthonormal(int n, std::uint64_t seed) {
    Rng rng(seed, 0x0b5e);
    std::vector<double> m(static_cast<std::size_t>(n) * n);
    for (auto& v : m) v = rng.normal();
    for (int i = 0; i < n; ++i) {
        double* row = m.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < i; ++j) {
            const double* prev = m.data() + static_cast<std::size_t>(j) * n;
            double dot = 0.0;
            for (int k = 0; k < n; ++k) dot += row[k] * prev[k];
            for (int k = 0; k < n; ++k) row[k] -= dot * prev[k];
        }
        double norm = 0.0;
        for (int k = 0; k < n; ++k) norm += row[k] * row[k];
        norm = std::sqrt(norm);
        if (norm < 1e-9) {
            // Degenerate draw; fall back to the unit vector for this row.
            for (int k = 0; k < n; ++k) row[k] = (k == i) ? 1.0 : 0.0;
        } else {
            for (int k = 0; k < n; ++k) row[k] /= norm;
        }
    }
    return m;
}

} // namespace

BlockObservationMap::BlockObservationMap(int state_dim, int distractor_dim, double noise_scale,
                                         std::uint64_t mixing_seed)
    : mixing_(random_orthonormal(state_dim, mixing_seed)), state_dim_(state_dim),
      distractor_dim_(distractor_dim), noise_scale_(noise_scale) {}

BlockObservationMap::BlockObservationMap(std::vector<double> mixing, int state_dim,
                                         int distractor_dim, double noise_scale)
    : mixing_(std::move(mixing)), state_dim_(state_dim), distractor_dim_(distractor_dim),
      noise_scale_(noise_scale) {
    if (mixing_.size() != static_cast<std::size_t>(state_dim_) * state_dim_)
        throw std::invalid_argument("BlockObservationMap: mixing matrix has wrong size");
}

std::vector<double> BlockObservationMap::observe(const std::vector<double>& state, Rng& rng) const {
    if (static_cast<int>(state.size()) != state_dim_)
        throw std::invalid_argument("BlockObservationMap::observe: state has dimension " +
                                    std::to_string(state.size()) + ", expected " +
                                    std::to_string(state_dim_));
    std::vector<double> obs(obs_dim(), 0.0);
    for (int i = 0; i < state_dim_; ++i) {
        const double* row = mixing_.data() + static_cast<std::size_t>(i) * state_dim_;
        double acc = 0.0;
        for (int k = 0; k < state_dim_; ++k) acc += row[k] * state[k];
        obs[i] = acc;
    }
    for (int i = 0; i < distractor_dim_; ++i)
        obs[state_dim_ + i] = noise_scale_ * rng.normal();
    return obs;
}

ContextSchedule make_smooth_schedule(const ContextualFamily& family, int steps, double max_step,
                                     Rng& rng) {
    const auto [lo, hi] = family.context_range();
    ContextSchedule sched;
    sched.max_step = max_step;
    double c = rng.uniform(lo, hi);
    sched.contexts.emplace_back(c);
    for (int t = 1; t < steps; ++t) {
        c = std::clamp(c + rng.uniform(-max_step, max_step), lo, hi);
        sched.contexts.emplace_back(c);
    }
    return sched;
}

} // namespace zeus
