#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "zeus/mdp.hpp"
#include "zeus/rng.hpp"

namespace zeus {

// Task parameter vector. Built-in families use a scalar context (slip
// probability, drag coefficient, target velocity).
struct ContextVector {
    std::vector<double> values;

    ContextVector() = default;
    explicit ContextVector(double v) : values{v} {}
    explicit ContextVector(std::vector<double> v) : values(std::move(v)) {}

    double scalar() const { return values.at(0); }
    bool operator==(const ContextVector& o) const { return values == o.values; }
};

double l1_distance(const ContextVector& a, const ContextVector& b);

struct ContextSplit {
    std::vector<ContextVector> train;
    std::vector<ContextVector> eval_interpolation;
    std::vector<ContextVector> eval_extrapolation;
};

// Checks the hull rule: interpolation contexts inside the convex hull of the
// train contexts, extrapolation contexts outside. Scalar contexts only.
bool check_split(const ContextSplit& split, std::string* why = nullptr);

// A context trajectory with bounded per-step movement (passive, smooth
// nonstationarity).
struct ContextSchedule {
    std::vector<ContextVector> contexts;
    double max_step = 0.0;
};

bool check_schedule(const ContextSchedule& schedule, std::string* why = nullptr);

// Episodic continuous-control environment over a latent state vector.
// reset() seeds an internal stream, so a full episode is determined by the
// rng handed to reset plus the action sequence.
class ContinuousEnv {
public:
    virtual ~ContinuousEnv() = default;

    virtual int state_dim() const = 0;
    virtual int action_dim() const = 0;
    virtual std::pair<double, double> action_box() const = 0;
    virtual int horizon() const = 0;
    // Inherently discrete action sets are exposed as one-hot vectors.
    virtual bool discrete_actions() const { return false; }

    virtual std::vector<double> reset(Rng& rng) = 0;
    // Returns (next latent state, reward); rewards lie in [0,1].
    virtual std::pair<std::vector<double>, double> step(const std::vector<double>& action) = 0;
};

// Presents a TabularMDP as a ContinuousEnv: latent state is the one-hot
// state indicator and actions arrive as one-hot vectors.
class TabularEnv : public ContinuousEnv {
public:
    TabularEnv(TabularMDP mdp, int start_state, int horizon);

    int state_dim() const override { return mdp_.n_states(); }
    int action_dim() const override { return mdp_.n_actions(); }
    std::pair<double, double> action_box() const override { return {0.0, 1.0}; }
    int horizon() const override { return horizon_; }
    bool discrete_actions() const override { return true; }

    std::vector<double> reset(Rng& rng) override;
    std::pair<std::vector<double>, double> step(const std::vector<double>& action) override;

    int current_state() const { return state_; }

private:
    TabularMDP mdp_;
    int start_state_;
    int horizon_;
    int state_;
    Rng stream_;
};

// A parametric map from context to environment instance. Generators are
// pure: the same context always yields an identical instance.
class ContextualFamily {
public:
    virtual ~ContextualFamily() = default;

    virtual std::string id() const = 0;
    virtual bool tabular() const = 0;
    virtual std::pair<double, double> context_range() const = 0;
    // Smoothness constants declared by the family (reported, not assumed;
    // tabular families get them certified against the task metric machinery).
    virtual std::pair<double, double> declared_smoothness() const = 0;
    virtual ContextSplit default_split() const = 0;
    // Reward-varying families expose the previous reward as part of the
    // observation.
    virtual bool reward_varying() const { return false; }

    virtual TabularMDP make_mdp(const ContextVector& c) const;
    virtual std::unique_ptr<ContinuousEnv> make_env(const ContextVector& c) const = 0;

protected:
    void require_in_range(const ContextVector& c) const;
};

std::unique_ptr<ContextualFamily> make_family(const std::string& id);

// N x N gridworld whose context is the slip probability: the intended move
// succeeds with probability 1-p and each lateral neighbor is taken with
// probability p/2. Moves off the grid stay in place. The goal cell is
// absorbing with reward 1.
class SlipGridFamily : public ContextualFamily {
public:
    SlipGridFamily(int n = 5, int goal_state = -1, double gamma = 0.9, int horizon = 40);

    std::string id() const override { return "slipgrid"; }
    bool tabular() const override { return true; }
    std::pair<double, double> context_range() const override { return {0.0, 1.0}; }
    std::pair<double, double> declared_smoothness() const override { return {1.0, 0.0}; }
    ContextSplit default_split() const override;

    TabularMDP make_mdp(const ContextVector& c) const override;
    std::unique_ptr<ContinuousEnv> make_env(const ContextVector& c) const override;

    int grid_size() const { return n_; }
    int goal_state() const { return goal_; }

private:
    int n_;
    int goal_;
    double gamma_;
    int horizon_;
};

// Randomized SlipGrid instance (grid size 3-5, random goal cell) for the
// stress and audit suites. gamma is fixed at 0.9.
std::unique_ptr<SlipGridFamily> make_random_slipgrid(Rng& rng);

// 2-D point mass with a drag coefficient as context (dynamics variation).
// Reward peaks at the origin; actions are accelerations in [-1,1]^2.
class DragPointMassFamily : public ContextualFamily {
public:
    std::string id() const override { return "drag_pointmass"; }
    bool tabular() const override { return false; }
    std::pair<double, double> context_range() const override { return {0.05, 2.0}; }
    std::pair<double, double> declared_smoothness() const override { return {0.35, 0.0}; }
    ContextSplit default_split() const override;

    std::unique_ptr<ContinuousEnv> make_env(const ContextVector& c) const override;
};

// 1-D point mass rewarded for matching a target velocity (reward variation).
class TargetVelocityPointMassFamily : public ContextualFamily {
public:
    std::string id() const override { return "target_velocity_pointmass"; }
    bool tabular() const override { return false; }
    std::pair<double, double> context_range() const override { return {0.0, 3.0}; }
    std::pair<double, double> declared_smoothness() const override { return {0.0, 1.8}; }
    ContextSplit default_split() const override;
    bool reward_varying() const override { return true; }

    std::unique_ptr<ContinuousEnv> make_env(const ContextVector& c) const override;
};

// Fixed injective mixing of the latent state plus distractor noise
// dimensions. The mixing matrix is orthonormal (full column rank), so two
// distinct states never collide in the noiseless part of the observation.
class BlockObservationMap {
public:
    BlockObservationMap(int state_dim, int distractor_dim, double noise_scale,
                        std::uint64_t mixing_seed);
    // Explicit mixing matrix (row-major state_dim x state_dim).
    BlockObservationMap(std::vector<double> mixing, int state_dim, int distractor_dim,
                        double noise_scale);

    int state_dim() const { return state_dim_; }
    int distractor_dim() const { return distractor_dim_; }
    int obs_dim() const { return state_dim_ + distractor_dim_; }

    std::vector<double> observe(const std::vector<double>& state, Rng& rng) const;

private:
    std::vector<double> mixing_; // row-major state_dim x state_dim
    int state_dim_;
    int distractor_dim_;
    double noise_scale_;
};

// Smooth random-walk schedule inside the family's admissible range.
ContextSchedule make_smooth_schedule(const ContextualFamily& family, int steps,
                                     double max_step, Rng& rng);

} // namespace zeus
