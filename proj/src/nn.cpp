#include "zeus/nn.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "json.hpp"

namespace zeus {

Tensor::Tensor(std::vector<int> s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
    std::size_t expect = 1;
    for (int d : shape) expect *= static_cast<std::size_t>(d);
    if (expect != values.size())
        throw std::invalid_argument("Tensor: value count does not match shape");
}

Tensor Tensor::zeros(std::vector<int> shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::row(std::vector<double> v) {
    const int n = static_cast<int>(v.size());
    return Tensor({1, n}, std::move(v));
}

DenseNet::DenseNet(std::vector<int> widths, std::vector<Activation> activations, Rng& init)
    : widths_(std::move(widths)), activations_(std::move(activations)) {
    if (widths_.size() < 2)
        throw std::invalid_argument("DenseNet: need at least input and output widths");
    if (activations_.size() != widths_.size() - 1)
        throw std::invalid_argument("DenseNet: one activation per layer required");
    build_offsets();
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
        const int fan_in = widths_[l], fan_out = widths_[l + 1];
        const double bound = std::sqrt(6.0 / (fan_in + fan_out));
        double* w = params_.data() + w_offset_[l];
        for (int k = 0; k < fan_in * fan_out; ++k) w[k] = init.uniform(-bound, bound);
        // biases stay zero
    }
}

void DenseNet::build_offsets() {
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
        w_offset_.push_back(offset);
        offset += static_cast<std::size_t>(widths_[l]) * widths_[l + 1];
        b_offset_.push_back(offset);
        offset += static_cast<std::size_t>(widths_[l + 1]);
    }
    params_.assign(offset, 0.0);
}

Tensor DenseNet::forward(const Tensor& x) const {
    return forward_cached(x).post.back();
}

DenseNet::Trace DenseNet::forward_cached(const Tensor& x) const {
    if (x.cols() != input_dim())
        throw std::invalid_argument("DenseNet: input has " + std::to_string(x.cols()) +
                                    " features, expected " + std::to_string(input_dim()));
    Trace trace;
    trace.input = x;
    const int batch = x.rows();
    const Tensor* cur = &trace.input;
    for (int l = 0; l < n_layers(); ++l) {
        const int in = widths_[l], out = widths_[l + 1];
        const double* w = params_.data() + w_offset_[l]; // out x in, row-major
        const double* b = params_.data() + b_offset_[l];
        Tensor z = Tensor::zeros({batch, out});
        for (int r = 0; r < batch; ++r) {
            const double* xin = cur->values.data() + static_cast<std::size_t>(r) * in;
            double* zrow = z.values.data() + static_cast<std::size_t>(r) * out;
            for (int o = 0; o < out; ++o) {
                const double* wrow = w + static_cast<std::size_t>(o) * in;
                double acc = b[o];
                for (int i = 0; i < in; ++i) acc += wrow[i] * xin[i];
                zrow[o] = acc;
            }
        }
        Tensor a = z;
        if (activations_[l] == Activation::Relu)
            for (double& v : a.values) v = v > 0.0 ? v : 0.0;
        trace.pre.push_back(std::move(z));
        trace.post.push_back(std::move(a));
        cur = &trace.post.back();
    }
    return trace;
}

DenseNet::Gradients DenseNet::backward(const Trace& trace, const Tensor& upstream) const {
    if (trace.post.size() != static_cast<std::size_t>(n_layers()))
        throw std::invalid_argument("DenseNet::backward: trace does not match this net");
    if (upstream.rows() != trace.input.rows() || upstream.cols() != output_dim())
        throw std::invalid_argument("DenseNet::backward: upstream gradient has the wrong shape");

    const int batch = trace.input.rows();
    Gradients g;
    g.params.assign(params_.size(), 0.0);

    Tensor delta = upstream; // dL/da for the current layer
    for (int l = n_layers() - 1; l >= 0; --l) {
        const int in = widths_[l], out = widths_[l + 1];
        // dL/dz = dL/da * act'(z)
        if (activations_[l] == Activation::Relu) {
            for (std::size_t k = 0; k < delta.values.size(); ++k)
                if (trace.pre[l].values[k] <= 0.0) delta.values[k] = 0.0;
        }
        const Tensor& layer_in = (l == 0) ? trace.input : trace.post[l - 1];
        double* wg = g.params.data() + w_offset_[l];
        double* bg = g.params.data() + b_offset_[l];
        for (int r = 0; r < batch; ++r) {
            const double* drow = delta.values.data() + static_cast<std::size_t>(r) * out;
            const double* xin = layer_in.values.data() + static_cast<std::size_t>(r) * in;
            for (int o = 0; o < out; ++o) {
                bg[o] += drow[o];
                double* wrow = wg + static_cast<std::size_t>(o) * in;
                for (int i = 0; i < in; ++i) wrow[i] += drow[o] * xin[i];
            }
        }
        // dL/dx = delta . W
        Tensor prev = Tensor::zeros({batch, in});
        const double* w = params_.data() + w_offset_[l];
        for (int r = 0; r < batch; ++r) {
            const double* drow = delta.values.data() + static_cast<std::size_t>(r) * out;
            double* prow = prev.values.data() + static_cast<std::size_t>(r) * in;
            for (int o = 0; o < out; ++o) {
                const double* wrow = w + static_cast<std::size_t>(o) * in;
                const double d = drow[o];
                if (d == 0.0) continue;
                for (int i = 0; i < in; ++i) prow[i] += d * wrow[i];
            }
        }
        delta = std::move(prev);
    }
    g.input = std::move(delta);
    return g;
}

std::string DenseNet::to_json() const {
    nlohmann::json j;
    j["widths"] = widths_;
    std::vector<std::string> acts;
    for (auto a : activations_) acts.push_back(a == Activation::Relu ? "relu" : "identity");
    j["activations"] = acts;
    j["parameters"] = params_;
    return j.dump();
}

DenseNet DenseNet::from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    DenseNet net;
    net.widths_ = j.at("widths").get<std::vector<int>>();
    for (const auto& a : j.at("activations")) {
        const std::string s = a.get<std::string>();
        if (s == "relu")
            net.activations_.push_back(Activation::Relu);
        else if (s == "identity")
            net.activations_.push_back(Activation::Identity);
        else
            throw std::invalid_argument("DenseNet::from_json: unknown activation '" + s + "'");
    }
    net.build_offsets();
    const auto params = j.at("parameters").get<std::vector<double>>();
    if (params.size() != net.params_.size())
        throw std::invalid_argument("DenseNet::from_json: parameter count mismatch");
    net.params_ = params;
    return net;
}

Optimizer::Optimizer(OptMethod method, double lr, double beta1, double beta2, double eps)
    : method_(method), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Optimizer::step(std::vector<double>& params, const std::vector<double>& grads) {
    if (params.size() != grads.size())
        throw std::invalid_argument("Optimizer::step: gradient size mismatch");
    for (double g : grads)
        if (!std::isfinite(g))
            throw std::runtime_error("Optimizer::step: non-finite gradient, update refused");

    if (method_ == OptMethod::Sgd) {
        for (std::size_t k = 0; k < params.size(); ++k) params[k] -= lr_ * grads[k];
        return;
    }
    if (m_.size() != params.size()) {
        m_.assign(params.size(), 0.0);
        v_.assign(params.size(), 0.0);
        t_ = 0;
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * grads[k];
        v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * grads[k] * grads[k];
        const double mhat = m_[k] / bc1;
        const double vhat = v_[k] / bc2;
        params[k] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
}

std::uint64_t parameter_checksum(const std::vector<const DenseNet*>& nets) {
    std::uint64_t h = 1469598103934665603ULL;
    for (const DenseNet* net : nets) {
        const auto& p = net->parameters();
        const unsigned char* bytes = reinterpret_cast<const unsigned char*>(p.data());
        for (std::size_t i = 0; i < p.size() * sizeof(double); ++i) {
            h ^= bytes[i];
            h *= 1099511628211ULL;
        }
    }
    return h;
}

} // namespace zeus
