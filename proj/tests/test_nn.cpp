#include "doctest.h"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "zeus/nn.hpp"
#include "zeus/rng.hpp"

using namespace zeus;

namespace {

// Slow reference forward pass: explicit per-element loops over the same
// parameter layout.
std::vector<double> reference_forward(const DenseNet& net, const std::vector<double>& x) {
    std::vector<double> cur = x;
    const auto& widths = net.widths();
    const auto& params = net.parameters();
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const int in = widths[l], out = widths[l + 1];
        std::vector<double> next(out, 0.0);
        for (int o = 0; o < out; ++o) {
            double acc = 0.0;
            for (int i = 0; i < in; ++i) acc += params[offset + static_cast<std::size_t>(o) * in + i] * cur[i];
            next[o] = acc;
        }
        offset += static_cast<std::size_t>(in) * out;
        for (int o = 0; o < out; ++o) next[o] += params[offset + o];
        offset += out;
        if (net.activations()[l] == Activation::Relu)
            for (double& v : next) v = std::max(v, 0.0);
        cur = next;
    }
    return cur;
}

double loss_at(DenseNet& net, const Tensor& x, const Tensor& target) {
    const Tensor out = net.forward(x);
    double loss = 0.0;
    for (std::size_t k = 0; k < out.values.size(); ++k) {
        const double diff = out.values[k] - target.values[k];
        loss += diff * diff;
    }
    return loss;
}

} // namespace

TEST_CASE("identity net passes input through") {
    Rng rng(0, 0);
    DenseNet net({3, 3}, {Activation::Identity}, rng);
    auto& p = net.parameters();
    std::fill(p.begin(), p.end(), 0.0);
    for (int i = 0; i < 3; ++i) p[static_cast<std::size_t>(i) * 3 + i] = 1.0;

    const Tensor x = Tensor::row({0.5, -2.0, 3.25});
    CHECK(net.forward(x).values == x.values);
}

TEST_CASE("zero weights output the bias") {
    Rng rng(0, 0);
    DenseNet net({4, 2}, {Activation::Identity}, rng);
    auto& p = net.parameters();
    std::fill(p.begin(), p.end(), 0.0);
    p[8] = 0.7;
    p[9] = -0.3;
    const auto out = net.forward(Tensor::row({1.0, 2.0, 3.0, 4.0}));
    CHECK(out.values[0] == 0.7);
    CHECK(out.values[1] == -0.3);
}

TEST_CASE("forward matches the per-element reference on random nets") {
    Rng rng(42, 0);
    for (int trial = 0; trial < 10; ++trial) {
        DenseNet net({5, 7, 3}, {Activation::Relu, Activation::Identity}, rng);
        std::vector<double> x(5);
        for (auto& v : x) v = rng.uniform(-2.0, 2.0);
        const auto got = net.forward(Tensor::row(x)).values;
        const auto want = reference_forward(net, x);
        for (int k = 0; k < 3; ++k) CHECK(got[k] == doctest::Approx(want[k]).epsilon(1e-12));
    }
}

TEST_CASE("linear layer gradient has the closed form") {
    Rng rng(7, 0);
    DenseNet net({2, 1}, {Activation::Identity}, rng);
    const Tensor x = Tensor::row({1.5, -0.5});
    const auto trace = net.forward_cached(x);
    const double yhat = trace.output().values[0];
    const double y = 2.0;
    // loss (yhat - y)^2, upstream = 2 (yhat - y)
    const auto g = net.backward(trace, Tensor::row({2.0 * (yhat - y)}));
    CHECK(g.params[0] == doctest::Approx(2.0 * (yhat - y) * 1.5).epsilon(1e-12));
    CHECK(g.params[1] == doctest::Approx(2.0 * (yhat - y) * -0.5).epsilon(1e-12));
    CHECK(g.params[2] == doctest::Approx(2.0 * (yhat - y)).epsilon(1e-12));
}

TEST_CASE("relu blocks gradient at negative pre-activations") {
    Rng rng(0, 0);
    DenseNet net({1, 1}, {Activation::Relu}, rng);
    auto& p = net.parameters();
    p[0] = 1.0;
    p[1] = -5.0; // pre-activation is x - 5 < 0 for small x
    const auto trace = net.forward_cached(Tensor::row({1.0}));
    CHECK(trace.output().values[0] == 0.0);
    const auto g = net.backward(trace, Tensor::row({1.0}));
    CHECK(g.params[0] == 0.0);
    CHECK(g.params[1] == 0.0);
    CHECK(g.input.values[0] == 0.0);
}

TEST_CASE("gradients match central finite differences") {
    Rng rng(314, 0);
    const double fd_eps = 1e-5;
    int instances = 0;
    for (const auto acts : {std::vector<Activation>{Activation::Relu, Activation::Relu, Activation::Identity},
                            std::vector<Activation>{Activation::Identity, Activation::Relu, Activation::Identity}}) {
        for (int trial = 0; trial < 24; ++trial) {
            DenseNet net({4, 6, 5, 2}, acts, rng);
            Tensor x = Tensor::zeros({3, 4});
            for (auto& v : x.values) v = rng.uniform(-1.5, 1.5);
            Tensor target = Tensor::zeros({3, 2});
            for (auto& v : target.values) v = rng.uniform(-1.0, 1.0);

            const auto trace = net.forward_cached(x);
            // Central differences are invalid within a kink's reach; only
            // probe instances whose pre-activations clear a safety margin.
            double min_pre = 1e9;
            for (const auto& pre : trace.pre)
                for (double v : pre.values) min_pre = std::min(min_pre, std::abs(v));
            if (min_pre < 1e-3) continue;
            Tensor upstream = Tensor::zeros({3, 2});
            for (std::size_t k = 0; k < upstream.values.size(); ++k)
                upstream.values[k] = 2.0 * (trace.output().values[k] - target.values[k]);
            const auto analytic = net.backward(trace, upstream);

            auto& params = net.parameters();
            for (int probe = 0; probe < 12; ++probe) {
                const std::size_t k = rng.uniform_index(params.size());
                const double keep = params[k];
                params[k] = keep + fd_eps;
                const double up = loss_at(net, x, target);
                params[k] = keep - fd_eps;
                const double down = loss_at(net, x, target);
                params[k] = keep;
                const double numeric = (up - down) / (2.0 * fd_eps);
                const double denom = std::max({std::abs(numeric), std::abs(analytic.params[k]), 1e-6});
                CHECK(std::abs(numeric - analytic.params[k]) / denom <= 1e-4);
            }
            ++instances;
        }
    }
    CHECK(instances >= 20);
}

TEST_CASE("optimizer") {
    SUBCASE("zero gradient leaves parameters unchanged") {
        std::vector<double> p = {1.0, -2.0};
        Optimizer opt(OptMethod::Adam, 0.1);
        opt.step(p, {0.0, 0.0});
        CHECK(p == std::vector<double>{1.0, -2.0});
    }

    SUBCASE("sgd with lr 1 and g = p zeroes the parameters") {
        std::vector<double> p = {0.3, -4.0};
        Optimizer opt(OptMethod::Sgd, 1.0);
        opt.step(p, {0.3, -4.0});
        CHECK(p[0] == 0.0);
        CHECK(p[1] == 0.0);
    }

    SUBCASE("adam first step matches the scalar hand trace") {
        // From zero moments: m=(1-b1)g, v=(1-b2)g^2, mhat=g, vhat=g^2,
        // step = lr * g / (|g| + eps).
        std::vector<double> p = {1.0};
        Optimizer opt(OptMethod::Adam, 0.5);
        opt.step(p, {2.0});
        const double expect = 1.0 - 0.5 * 2.0 / (2.0 + 1e-8);
        CHECK(p[0] == doctest::Approx(expect).epsilon(1e-12));
    }

    SUBCASE("non-finite gradient refuses the update") {
        std::vector<double> p = {1.0, 2.0};
        Optimizer opt(OptMethod::Adam, 0.1);
        CHECK_THROWS_AS(opt.step(p, {0.1, std::nan("")}), std::runtime_error);
        CHECK(p == std::vector<double>{1.0, 2.0});
    }
}

TEST_CASE("parameter checksum") {
    Rng rng(11, 0);
    DenseNet a({3, 4, 2}, {Activation::Relu, Activation::Identity}, rng);
    DenseNet b = a;

    SUBCASE("equal parameters give equal digests") {
        CHECK(parameter_checksum({&a}) == parameter_checksum({&b}));
    }

    SUBCASE("a single flipped bit changes the digest") {
        std::uint64_t bits;
        std::memcpy(&bits, &b.parameters()[5], sizeof(bits));
        bits ^= 1ULL;
        std::memcpy(&b.parameters()[5], &bits, sizeof(bits));
        CHECK(parameter_checksum({&a}) != parameter_checksum({&b}));
    }

    SUBCASE("digest survives a serialization round trip") {
        const auto restored = DenseNet::from_json(a.to_json());
        CHECK(parameter_checksum({&a}) == parameter_checksum({&restored}));
    }
}

TEST_CASE("serialization round trip is lossless") {
    Rng rng(99, 0);
    DenseNet net({2, 8, 8, 1}, {Activation::Relu, Activation::Relu, Activation::Identity}, rng);
    const auto restored = DenseNet::from_json(net.to_json());
    CHECK(restored.widths() == net.widths());
    CHECK(restored.parameters() == net.parameters());
}

TEST_CASE("training smoke: sgd cuts the toy regression loss by 10x") {
    Rng rng(123, 0);
    DenseNet net({2, 16, 1}, {Activation::Relu, Activation::Identity}, rng);
    Optimizer opt(OptMethod::Sgd, 0.02);

    // Fixed 2-D regression target.
    const int n = 64;
    Tensor x = Tensor::zeros({n, 2});
    Tensor y = Tensor::zeros({n, 1});
    Rng data(77, 0);
    for (int r = 0; r < n; ++r) {
        const double a = data.uniform(-1.0, 1.0), b = data.uniform(-1.0, 1.0);
        x.at(r, 0) = a;
        x.at(r, 1) = b;
        y.at(r, 0) = std::sin(2.0 * a) + 0.5 * b;
    }

    auto batch_loss = [&]() {
        const auto out = net.forward(x);
        double loss = 0.0;
        for (int r = 0; r < n; ++r) {
            const double d = out.at(r, 0) - y.at(r, 0);
            loss += d * d;
        }
        return loss / n;
    };

    const double initial = batch_loss();
    for (int step = 0; step < 2000; ++step) {
        const auto trace = net.forward_cached(x);
        Tensor upstream = Tensor::zeros({n, 1});
        for (int r = 0; r < n; ++r)
            upstream.at(r, 0) = 2.0 * (trace.output().at(r, 0) - y.at(r, 0)) / n;
        const auto g = net.backward(trace, upstream);
        opt.step(net.parameters(), g.params);
    }
    CHECK(batch_loss() <= initial / 10.0);
}

TEST_CASE("forward and backward are bit-deterministic") {
    Rng rng(5, 0);
    DenseNet net({3, 5, 2}, {Activation::Relu, Activation::Identity}, rng);
    Tensor x = Tensor::zeros({4, 3});
    for (auto& v : x.values) v = rng.uniform(-1.0, 1.0);
    const auto a = net.forward(x);
    const auto b = net.forward(x);
    CHECK(a.values == b.values);

    const auto t1 = net.forward_cached(x);
    const auto t2 = net.forward_cached(x);
    Tensor up = Tensor::zeros({4, 2});
    for (auto& v : up.values) v = 1.0;
    CHECK(net.backward(t1, up).params == net.backward(t2, up).params);
}
