#include <doctest.h>

#include <cmath>

#include "aseg/optimizer.hpp"
#include "test_util.hpp"

using namespace aseg;
using namespace aseg::optim;

namespace {

// independent double-precision reference of the decoupled-decay update
void reference_adamw(std::vector<double>& w, const std::vector<double>& g,
                     std::vector<double>& m, std::vector<double>& v, int64_t step,
                     const AdamWConfig& c) {
    double bc1 = 1.0 - std::pow(c.beta1, (double)step);
    double bc2 = 1.0 - std::pow(c.beta2, (double)step);
    for (size_t i = 0; i < w.size(); ++i) {
        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
        w[i] -= c.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + c.eps) + c.lr * c.weight_decay * w[i];
    }
}

}  // namespace

TEST_CASE("adamw: zero grads and zero decay leave parameters unchanged") {
    Parameter p("p", Tensor::from_data({3}, {1.0f, -2.0f, 0.5f}, true));
    p.tensor.zero_grad();
    AdamW opt(AdamWConfig{1e-3, 0.9, 0.999, 1e-8, 0.0});
    opt.step({&p});
    CHECK(p.tensor.data()[0] == 1.0f);
    CHECK(p.tensor.data()[1] == -2.0f);
    CHECK(p.tensor.data()[2] == 0.5f);
}

TEST_CASE("adamw: hand-computed first step") {
    // p=1, g=1, lr=0.1, wd=0: bias-corrected m̂ = v̂ = 1 -> p ≈ 1 - 0.1 = 0.9
    Parameter p("p", Tensor::from_data({1}, {1.0f}, true));
    p.tensor.grad()[0] = 1.0f;
    AdamW opt(AdamWConfig{0.1, 0.9, 0.999, 1e-8, 0.0});
    opt.step({&p});
    CHECK(p.tensor.data()[0] == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("adamw: decoupled decay shrinks weights independently of gradients") {
    Parameter p("p", Tensor::from_data({1}, {2.0f}, true));
    p.tensor.zero_grad();
    AdamW opt(AdamWConfig{0.5, 0.9, 0.999, 1e-8, 0.01});
    opt.step({&p});
    CHECK(p.tensor.data()[0] == doctest::Approx(2.0 - 0.5 * 0.01 * 2.0).epsilon(1e-6));
}

TEST_CASE("adamw: matches double-precision reference over several steps") {
    AdamWConfig cfg{5e-4, 0.9, 0.999, 1e-8, 0.01};
    Rng rng(5);
    const int n = 16;
    Parameter p("p", random_tensor({n}, rng, -1.0, 1.0));
    p.tensor.set_requires_grad(true);
    std::vector<double> w(n), m(n, 0.0), v(n, 0.0);
    for (int i = 0; i < n; ++i) w[i] = p.tensor.data()[i];

    AdamW opt(cfg);
    for (int step = 1; step <= 10; ++step) {
        std::vector<double> g(n);
        p.tensor.zero_grad();
        for (int i = 0; i < n; ++i) {
            g[i] = rng.uniform(-1.0, 1.0);
            p.tensor.grad()[i] = (float)g[i];
        }
        opt.step({&p});
        reference_adamw(w, g, m, v, step, cfg);
        for (int i = 0; i < n; ++i)
            CHECK(p.tensor.data()[i] == doctest::Approx(w[i]).epsilon(1e-4));
    }
}

TEST_CASE("adamw: frozen parameters are skipped") {
    Parameter p("p", Tensor::from_data({1}, {1.0f}), true);
    AdamW opt;
    opt.step({&p});
    CHECK(p.tensor.data()[0] == 1.0f);
    CHECK(opt.state().empty());
}

TEST_CASE("adamw: identical runs give bit-identical trajectories") {
    auto run = [] {
        Rng rng(9);
        Parameter p("p", random_tensor({8}, rng));
        p.tensor.set_requires_grad(true);
        AdamW opt;
        for (int s = 0; s < 5; ++s) {
            p.tensor.zero_grad();
            for (int i = 0; i < 8; ++i) p.tensor.grad()[i] = (float)rng.uniform(-1, 1);
            opt.step({&p});
        }
        return p.tensor.vec();
    };
    CHECK(run() == run());
}

TEST_CASE("plateau scheduler: improving metric keeps lr") {
    PlateauScheduler s(5e-4);
    for (int i = 0; i < 20; ++i) CHECK(s.observe(0.1 * i) == 5e-4);
}

TEST_CASE("plateau scheduler: flat metric reduces after patience") {
    PlateauScheduler s(5e-4);
    CHECK(s.observe(0.5) == 5e-4);  // epoch 1 establishes best
    for (int i = 0; i < 4; ++i) CHECK(s.observe(0.5) == 5e-4);  // epochs 2-5
    CHECK(s.observe(0.5) == doctest::Approx(4.5e-4));  // epoch 6: 5 bad epochs
}

TEST_CASE("plateau scheduler: two stalls compound the factor") {
    PlateauScheduler s(5e-4);
    s.observe(0.5);
    for (int i = 0; i < 10; ++i) s.observe(0.5);
    CHECK(s.lr() == doctest::Approx(5e-4 * 0.81));
}

TEST_CASE("plateau scheduler: min-delta gates what counts as improvement") {
    PlateauScheduler s(1e-3);
    s.observe(0.5);
    for (int i = 0; i < 5; ++i) s.observe(0.5 + 1e-9);  // below min_delta: still bad
    CHECK(s.lr() == doctest::Approx(9e-4));
}
