#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "zeus/rng.hpp"

namespace zeus {

// Row-major value buffer with a shape. Networks treat rank-2 tensors as
// (batch, features); a rank-1 tensor is a single row.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> values;

    Tensor() = default;
    Tensor(std::vector<int> s, std::vector<double> v);

    static Tensor zeros(std::vector<int> shape);
    static Tensor row(std::vector<double> v);

    std::size_t size() const { return values.size(); }
    int rows() const { return shape.size() == 1 ? 1 : shape[0]; }
    int cols() const { return shape.size() == 1 ? shape[0] : shape[1]; }

    double& at(int r, int c) { return values[static_cast<std::size_t>(r) * cols() + c]; }
    double at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols() + c]; }
};

enum class Activation { Identity, Relu };

// Fully connected feedforward net with per-layer relu/identity activations.
// Parameters live in one flat buffer [W1|b1|W2|b2|...]; weights are
// initialized uniformly in +-sqrt(6/(fan_in+fan_out)), biases at zero.
class DenseNet {
public:
    DenseNet() = default;
    DenseNet(std::vector<int> widths, std::vector<Activation> activations, Rng& init);

    int input_dim() const { return widths_.front(); }
    int output_dim() const { return widths_.back(); }
    int n_layers() const { return static_cast<int>(activations_.size()); }

    std::vector<double>& parameters() { return params_; }
    const std::vector<double>& parameters() const { return params_; }
    const std::vector<int>& widths() const { return widths_; }
    const std::vector<Activation>& activations() const { return activations_; }

    Tensor forward(const Tensor& x) const;

    // Forward pass that keeps every layer's input and pre-activation so the
    // matching backward pass can run.
    struct Trace {
        Tensor input;
        std::vector<Tensor> pre;  // pre-activation per layer
        std::vector<Tensor> post; // activation output per layer
        const Tensor& output() const { return post.back(); }
    };
    Trace forward_cached(const Tensor& x) const;

    struct Gradients {
        std::vector<double> params; // same layout as the parameter buffer
        Tensor input;               // dL/dx
    };
    // upstream is dL/d(output), shaped like the traced output.
    Gradients backward(const Trace& trace, const Tensor& upstream) const;

    std::string to_json() const;
    static DenseNet from_json(const std::string& text);

private:
    std::vector<int> widths_;
    std::vector<Activation> activations_;
    std::vector<double> params_;
    std::vector<std::size_t> w_offset_, b_offset_;

    void build_offsets();
};

enum class OptMethod { Sgd, Adam };

// SGD or bias-corrected Adam over a flat parameter buffer. A step with any
// non-finite gradient entry throws and leaves the parameters untouched.
class Optimizer {
public:
    Optimizer() = default;
    Optimizer(OptMethod method, double lr, double beta1 = 0.9, double beta2 = 0.999,
              double eps = 1e-8);

    void step(std::vector<double>& params, const std::vector<double>& grads);

    OptMethod method() const { return method_; }
    double learning_rate() const { return lr_; }

private:
    OptMethod method_ = OptMethod::Sgd;
    double lr_ = 1e-3;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    std::vector<double> m_, v_;
    long t_ = 0;
};

// Order-sensitive digest over raw parameter bytes; equal iff the parameter
// bits are equal.
std::uint64_t parameter_checksum(const std::vector<const DenseNet*>& nets);

} // namespace zeus
