// End-to-end acceptance checks. Each criterion prints exactly one PASS/FAIL
// line; the exit code is the number of failures. Pass criterion numbers as
// arguments to run a subset (default: all).
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "aseg/encoders.hpp"
#include "aseg/losses.hpp"
#include "aseg/metrics.hpp"
#include "aseg/ops.hpp"
#include "aseg/optimizer.hpp"
#include "aseg/phantom.hpp"
#include "aseg/prompt_encoder.hpp"
#include "aseg/rng.hpp"
#include "aseg/tensor.hpp"
#include "aseg/trainer.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

using namespace aseg;
namespace op = aseg::ops;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

// random tensor with odd multiples of 1/128 so x +- h (h = 1/128) is exactly
// representable in float and piecewise-linear kinks at nicer grid points are
// never crossed by the central difference
Tensor qrand(const Shape& shape, float lo, float hi, Rng& rng, bool rg = true) {
    Tensor t(shape, 0.0f, rg);
    const int klo = (int)std::ceil(lo * 64.0f), khi = (int)std::floor(hi * 64.0f) - 1;
    for (int64_t i = 0; i < t.size(); ++i)
        t.data()[i] = (float)(2 * rng.uniform_int(klo, khi) + 1) / 128.0f;
    return t;
}

// ---------------------------------------------------------------- criterion 1

Outcome criterion1() {
    const int kSeeds = 100;
    double worst_plain = 0.0, worst_relu = 0.0;
    std::string worst_plain_name = "-", worst_relu_name = "-";
    const char* current = "-";

    for (int s = 0; s < kSeeds; ++s) {
        Rng rng(mix_seed(0xACC1, s));
        auto track = [&](double& worst, double err) {
            if (err > worst) {
                worst = err;
                (&worst == &worst_plain ? worst_plain_name : worst_relu_name) = current;
            }
        };

        // weighted-sum readout makes per-element gradients non-uniform
        auto make_w = [&](const Shape& shape) { return qrand(shape, -1.0f, 1.0f, rng, false); };
        auto scalarized = [&](const std::function<Tensor(const Tensor&)>& f, const Shape& out) {
            Tensor w = make_w(out);
            return [f, w](const Tensor& x) { return op::sum(op::mul(f(x), w)); };
        };
        auto check = [&](double& worst, const char* name,
                         const std::function<Tensor(const Tensor&)>& f, const Shape& out_shape,
                         const Tensor& x, double h = 0.0078125) {
            current = name;
            track(worst, op::check_gradient(scalarized(f, out_shape), x, h));
        };
        auto min_abs = [](const Tensor& t) {
            double m = 1e30;
            for (int64_t i = 0; i < t.size(); ++i) m = std::min(m, (double)std::fabs(t.data()[i]));
            return m;
        };

        const Shape s4 = {2, 3, 4, 4};
        Tensor x = qrand(s4, -1.0f, 1.0f, rng);
        Tensor c = qrand(s4, -1.0f, 1.0f, rng, false);
        Tensor cp = qrand(s4, 1.0f, 2.0f, rng, false);  // positive denominator

        check(worst_plain, "add", [&](const Tensor& t) { return op::add(t, c); }, s4, x);
        check(worst_plain, "sub", [&](const Tensor& t) { return op::sub(c, t); }, s4, x);
        check(worst_plain, "mul", [&](const Tensor& t) { return op::mul(t, c); }, s4, x);
        check(worst_plain, "div/num", [&](const Tensor& t) { return op::div(t, cp); }, s4, x);
        Tensor xpsm = qrand({2, 3, 2, 2}, 1.25f, 2.0f, rng);
        Tensor csm = qrand({2, 3, 2, 2}, -1.0f, 1.0f, rng, false);
        check(worst_plain, "div/den", [&](const Tensor& t) { return op::div(csm, t); },
              {2, 3, 2, 2}, xpsm);
        check(worst_plain, "add_scalar", [&](const Tensor& t) { return op::add_scalar(t, 0.25f); },
              s4, x);
        check(worst_plain, "mul_scalar", [&](const Tensor& t) { return op::mul_scalar(t, 1.5f); },
              s4, x);
        check(worst_plain, "relu", [&](const Tensor& t) { return op::relu(t); }, s4, x);
        // sigmoid: h = 1/64 balances curvature against float32 rounding, and a
        // small tensor keeps the readout sum (and its rounding) small
        Tensor xsg = qrand({2, 3, 2, 2}, -1.0f, 1.0f, rng);
        check(worst_plain, "sigmoid", [&](const Tensor& t) { return op::sigmoid(t); },
              {2, 3, 2, 2}, xsg, 0.015625);
        check(worst_plain, "log", [&](const Tensor& t) { return op::log(t); }, {2, 3, 2, 2},
              xpsm);
        check(worst_plain, "abs", [&](const Tensor& t) { return op::abs(t); }, s4, x);
        check(worst_plain, "square", [&](const Tensor& t) { return op::square(t); }, s4, x);
        check(worst_plain, "clamp", [&](const Tensor& t) { return op::clamp(t, -0.5f, 0.5f); },
              s4, x);
        current = "sum";
        track(worst_plain, op::check_gradient([](const Tensor& t) { return op::sum(t); }, x));
        current = "mean";
        track(worst_plain, op::check_gradient([](const Tensor& t) { return op::mean(t); }, x));
        check(worst_plain, "sum_hw", [&](const Tensor& t) { return op::sum_hw(t); }, {2, 3}, x);

        Tensor bias_c = qrand({3}, -1.0f, 1.0f, rng);
        check(worst_plain, "add_bias_channel/x",
              [&](const Tensor& t) { return op::add_bias_channel(t, bias_c); }, s4, x);
        check(worst_plain, "add_bias_channel/b",
              [&](const Tensor& t) { return op::add_bias_channel(x, t); }, s4, bias_c);
        Tensor feat = qrand({4, 6}, -1.0f, 1.0f, rng);
        Tensor bias_f = qrand({6}, -1.0f, 1.0f, rng);
        check(worst_plain, "add_bias_feature/x",
              [&](const Tensor& t) { return op::add_bias_feature(t, bias_f); }, {4, 6}, feat);
        check(worst_plain, "add_bias_feature/b",
              [&](const Tensor& t) { return op::add_bias_feature(feat, t); }, {4, 6}, bias_f);
        Tensor plane = qrand({2, 1, 4, 4}, -1.0f, 1.0f, rng);
        check(worst_plain, "add_plane/x",
              [&](const Tensor& t) { return op::add_plane(t, plane); }, s4, x);
        check(worst_plain, "add_plane/p",
              [&](const Tensor& t) { return op::add_plane(x, t); }, s4, plane);
        Tensor gains = qrand({2, 3, 1, 1}, -1.0f, 1.0f, rng);
        check(worst_plain, "scale_channels/x",
              [&](const Tensor& t) { return op::scale_channels(t, gains); }, s4, x);
        check(worst_plain, "scale_channels/s",
              [&](const Tensor& t) { return op::scale_channels(x, t); }, s4, gains);

        check(worst_plain, "reshape",
              [&](const Tensor& t) { return op::reshape(t, {2, 48}); }, {2, 48}, x);
        check(worst_plain, "concat/a",
              [&](const Tensor& t) { return op::concat_channels(t, c); }, {2, 6, 4, 4}, x);
        check(worst_plain, "concat/b",
              [&](const Tensor& t) { return op::concat_channels(c, t); }, {2, 6, 4, 4}, x);

        Tensor lw = qrand({6, 5}, -1.0f, 1.0f, rng);
        Tensor lb = qrand({5}, -1.0f, 1.0f, rng);
        check(worst_plain, "linear/x",
              [&](const Tensor& t) { return op::linear(t, lw, lb); }, {4, 5}, feat);
        check(worst_plain, "linear/w",
              [&](const Tensor& t) { return op::linear(feat, t, lb); }, {4, 5}, lw);
        check(worst_plain, "linear/b",
              [&](const Tensor& t) { return op::linear(feat, lw, t); }, {4, 5}, lb);

        Tensor ba = qrand({2, 3, 4}, -1.0f, 1.0f, rng);
        Tensor bb = qrand({2, 4, 5}, -1.0f, 1.0f, rng);
        Tensor bbt = qrand({2, 5, 4}, -1.0f, 1.0f, rng);
        check(worst_plain, "bmm/a", [&](const Tensor& t) { return op::bmm(t, bb); }, {2, 3, 5}, ba);
        check(worst_plain, "bmm/b", [&](const Tensor& t) { return op::bmm(ba, t); }, {2, 3, 5}, bb);
        check(worst_plain, "bmm_t/a",
              [&](const Tensor& t) { return op::bmm(t, bbt, true); }, {2, 3, 5}, ba);
        check(worst_plain, "bmm_t/b",
              [&](const Tensor& t) { return op::bmm(ba, t, true); }, {2, 3, 5}, bbt);
        check(worst_plain, "softmax",
              [&](const Tensor& t) { return op::softmax_lastdim(t); }, {2, 3, 4}, ba);

        Tensor cw = qrand({4, 3, 3, 3}, -0.75f, 0.75f, rng);
        Tensor cb = qrand({4}, -0.5f, 0.5f, rng);
        check(worst_plain, "conv2d/x",
              [&](const Tensor& t) { return op::conv2d(t, cw, cb, 1, 1); }, {2, 4, 4, 4}, x);
        check(worst_plain, "conv2d/w",
              [&](const Tensor& t) { return op::conv2d(x, t, cb, 1, 1); }, {2, 4, 4, 4}, cw);
        check(worst_plain, "conv2d/b",
              [&](const Tensor& t) { return op::conv2d(x, cw, t, 1, 1); }, {2, 4, 4, 4}, cb);
        check(worst_plain, "conv2d/s2",
              [&](const Tensor& t) { return op::conv2d(t, cw, cb, 2, 1); }, {2, 4, 2, 2}, x);
        Tensor tw = qrand({3, 4, 2, 2}, -0.75f, 0.75f, rng);
        check(worst_plain, "convt/x",
              [&](const Tensor& t) { return op::conv_transpose2d(t, tw, cb, 2); }, {2, 4, 8, 8},
              x);
        check(worst_plain, "convt/w",
              [&](const Tensor& t) { return op::conv_transpose2d(x, t, cb, 2); }, {2, 4, 8, 8},
              tw);
        check(worst_plain, "convt/b",
              [&](const Tensor& t) { return op::conv_transpose2d(x, tw, t, 2); }, {2, 4, 8, 8},
              cb);
        check(worst_plain, "avg_pool",
              [&](const Tensor& t) { return op::avg_pool2d(t, 2); }, {2, 3, 2, 2}, x);
        check(worst_plain, "adaptive_pool",
              [&](const Tensor& t) { return op::adaptive_avg_pool(t); }, {2, 3, 1, 1}, x);
        check(worst_plain, "upsample",
              [&](const Tensor& t) { return op::upsample_nearest(t, 2); }, {2, 3, 8, 8}, x);

        // compositions through ReLU (looser 1e-3); inputs are resampled until
        // every preactivation clears a margin a +-1/128 perturbation cannot
        // cross, so the kink never lands inside the central difference
        Tensor cw2 = qrand({2, 4, 3, 3}, -0.75f, 0.75f, rng);
        Tensor cb2 = qrand({2}, -0.5f, 0.5f, rng);
        Tensor featr, xr;
        do {
            featr = qrand({4, 6}, -1.0f, 1.0f, rng);
        } while (min_abs(op::linear(featr.detach(), lw, lb)) < 0.02);
        do {
            xr = qrand(s4, -1.0f, 1.0f, rng);
        } while (min_abs(op::conv2d(xr.detach(), cw, cb, 1, 1)) < 0.02);
        Tensor xs = qrand(s4, 0.25f, 1.0f, rng);
        Tensor gains_s = qrand({2, 3, 1, 1}, 0.25f, 1.0f, rng, false);
        for (int64_t i = 0; i < xs.size(); ++i)
            if (rng.uniform() < 0.5) xs.data()[i] = -xs.data()[i];
        for (int64_t i = 0; i < gains_s.size(); ++i)
            if (rng.uniform() < 0.5) gains_s.data()[i] = -gains_s.data()[i];
        check(worst_relu, "relu(linear)",
              [&](const Tensor& t) { return op::relu(op::linear(t, lw, lb)); }, {4, 5}, featr);
        check(worst_relu, "conv(relu(conv))",
              [&](const Tensor& t) {
                  return op::conv2d(op::relu(op::conv2d(t, cw, cb, 1, 1)), cw2, cb2, 1, 1);
              },
              {2, 2, 4, 4}, xr);
        check(worst_relu, "sigmoid(relu(scale))",
              [&](const Tensor& t) {
                  return op::sigmoid(op::relu(op::scale_channels(t, gains_s)));
              },
              s4, xs);

        // losses w.r.t. the prediction; tensors are small and h halved so the
        // mean-reduced gradients stay well above the float32 rounding floor
        const double hl = 1.0 / 256.0;
        Tensor gt({1, 1, 3, 3});
        gt.data()[0] = 1.0f;
        for (int64_t i = 1; i < gt.size(); ++i) gt.data()[i] = rng.uniform() < 0.4 ? 1.0f : 0.0f;
        Tensor pred = qrand({1, 1, 3, 3}, 0.3f, 0.7f, rng);
        pred.data()[0] = 77.0f / 256.0f;  // pins max |analytic| away from zero
        current = "dice_loss";
        track(worst_plain,
              op::check_gradient([&](const Tensor& t) { return losses::dice_loss(t, gt); }, pred,
                                 hl));
        current = "ce_loss";
        track(worst_plain,
              op::check_gradient([&](const Tensor& t) { return losses::ce_loss(t, gt); }, pred,
                                 hl));
        {
            // SD contains |D - pred|; keep every pred at least 2h away from its
            // D value so the central difference never straddles the kink
            Tensor d = losses::shape_distance_map(gt);
            Tensor sp(d.shape(), 0.0f, true);
            for (int64_t i = 0; i < sp.size(); ++i) {
                float delta = (rng.uniform() < 0.5 ? -1.0f : 1.0f) *
                              (float)(2 * rng.uniform_int(1, 16) + 1) / 64.0f;
                sp.data()[i] = d.data()[i] + delta;
            }
            current = "sd_loss";
            track(worst_plain,
                  op::check_gradient(
                      [&](const Tensor& t) { return losses::shape_distance_loss(t, gt); }, sp,
                      hl));
        }
        {
            prompt::PromptEmbeddings tch;
            tch.sparse = qrand({1, 2, 4}, -1.0f, 1.0f, rng, false);
            tch.dense = qrand({1, 4, 2, 2}, -1.0f, 1.0f, rng, false);
            Tensor ss = qrand({1, 2, 4}, -1.0f, 1.0f, rng);
            Tensor sd = qrand({1, 4, 2, 2}, -1.0f, 1.0f, rng);
            current = "mse_sparse";
            track(worst_plain, op::check_gradient(
                                   [&](const Tensor& t) {
                                       prompt::PromptEmbeddings st{t, tch.dense};
                                       return losses::mse_distill(st, tch).first;
                                   },
                                   ss, hl));
            current = "mse_dense";
            track(worst_plain, op::check_gradient(
                                   [&](const Tensor& t) {
                                       prompt::PromptEmbeddings st{tch.sparse, t};
                                       return losses::mse_distill(st, tch).second;
                                   },
                                   sd, hl));
        }

        // Eq.-18 aggregate: analytic d(total)/d(lambda_j) vs a 5-point central
        // stencil over the actual aggregate evaluation
        {
            std::vector<std::pair<std::string, Tensor>> members;
            const char* names[3] = {"a", "b", "c"};
            for (int j = 0; j < 3; ++j)
                members.emplace_back(names[j],
                                     Tensor::scalar((float)rng.uniform(1.5, 3.0)));
            losses::UncertaintyWeights weights;
            losses::LossReport rep;
            Tensor total = losses::uncertainty_aggregate(members, weights, rep, true);
            for (Parameter* lam : weights.parameters()) lam->tensor.zero_grad();
            total.backward();
            std::vector<double> analytic;
            double amax = 0.0;
            for (Parameter* lam : weights.parameters()) {
                analytic.push_back(lam->tensor.grad()[0]);
                amax = std::max(amax, std::fabs(analytic.back()));
            }
            current = "eq18_lambda";
            const double h = 1.0 / 32.0;
            int j = 0;
            for (Parameter* lam : weights.parameters()) {
                float save = lam->tensor.data()[0];
                auto eval = [&](double dv) {
                    lam->tensor.data()[0] = (float)(save + dv);
                    losses::LossReport r2;
                    NoGradGuard ng;
                    return (double)losses::uncertainty_aggregate(members, weights, r2, true)
                        .item();
                };
                double fd = (eval(-2 * h) - 8 * eval(-h) + 8 * eval(h) - eval(2 * h)) / (12 * h);
                lam->tensor.data()[0] = save;
                track(worst_plain, std::fabs(fd - analytic[j++]) / (amax + 1e-8));
            }
        }
    }

    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "max rel err %.2e@%s (plain, tol 1e-4), %.2e@%s (ReLU comps, tol 1e-3), %d seeds",
                  worst_plain, worst_plain_name.c_str(), worst_relu, worst_relu_name.c_str(),
                  kSeeds);
    return {worst_plain < 1e-4 && worst_relu < 1e-3, buf};
}

// ---------------------------------------------------------------- criterion 2

metrics::BinaryMask random_mask(int h, int w, Rng& rng) {
    metrics::BinaryMask m(h, w);
    double p = rng.uniform(0.05, 0.7);
    for (auto& v : m.grid) v = rng.uniform() < p ? 1 : 0;
    if (rng.uniform() < 0.05) std::fill(m.grid.begin(), m.grid.end(), 0);
    if (rng.uniform() < 0.03) std::fill(m.grid.begin(), m.grid.end(), 1);
    return m;
}

double brute_dsc(const metrics::BinaryMask& g, const metrics::BinaryMask& s) {
    int64_t ng = 0, ns = 0, inter = 0;
    for (int r = 0; r < g.h; ++r)
        for (int c = 0; c < g.w; ++c) {
            ng += g.at(r, c);
            ns += s.at(r, c);
            if (g.at(r, c) && s.at(r, c)) ++inter;
        }
    if (ng + ns == 0) return 1.0;
    return 2.0 * (double)inter / (double)(ng + ns);
}

metrics::BinaryMask brute_boundary(const metrics::BinaryMask& m) {
    metrics::BinaryMask b(m.h, m.w);
    for (int r = 0; r < m.h; ++r)
        for (int c = 0; c < m.w; ++c) {
            if (!m.at(r, c)) continue;
            bool edge = r == 0 || r == m.h - 1 || c == 0 || c == m.w - 1;
            if (!edge)
                edge = !m.at(r - 1, c) || !m.at(r + 1, c) || !m.at(r, c - 1) || !m.at(r, c + 1);
            if (edge) b.at(r, c) = 1;
        }
    return b;
}

double brute_min_dist(const metrics::BinaryMask& src, int r, int c) {
    double best = 1e30;
    for (int rr = 0; rr < src.h; ++rr)
        for (int cc = 0; cc < src.w; ++cc)
            if (src.at(rr, cc)) {
                double d = std::sqrt((double)(rr - r) * (rr - r) + (double)(cc - c) * (cc - c));
                best = std::min(best, d);
            }
    return best;
}

double brute_nsd(const metrics::BinaryMask& g, const metrics::BinaryMask& s, double tau) {
    bool ge = g.count() == 0, se = s.count() == 0;
    if (ge && se) return 1.0;
    if (ge != se) return 0.0;
    metrics::BinaryMask bg = brute_boundary(g), bs = brute_boundary(s);
    int64_t total = 0, in_band = 0;
    for (int r = 0; r < g.h; ++r)
        for (int c = 0; c < g.w; ++c) {
            if (bg.at(r, c)) {
                ++total;
                if (brute_min_dist(bs, r, c) <= tau) ++in_band;
            }
            if (bs.at(r, c)) {
                ++total;
                if (brute_min_dist(bg, r, c) <= tau) ++in_band;
            }
        }
    return (double)in_band / (double)total;
}

Outcome criterion2() {
    const int kPairs = 200;
    double worst_nsd = 0.0;
    int dsc_exact = 0, edt_exact = 0, edt_total = 0;
    Rng rng(0xACC2);
    for (int i = 0; i < kPairs; ++i) {
        int h = rng.uniform_int(1, 32), w = rng.uniform_int(1, 32);
        metrics::BinaryMask g = random_mask(h, w, rng), s = random_mask(h, w, rng);
        if (metrics::dsc(g, s) == brute_dsc(g, s)) ++dsc_exact;
        double tau = rng.uniform(0.5, 4.0);
        worst_nsd = std::max(worst_nsd,
                             std::fabs(metrics::nsd(g, s, tau) - brute_nsd(g, s, tau)));

        // EDT vs O(N^2) brute force on the same masks
        for (const metrics::BinaryMask& m : {g, s}) {
            metrics::DistanceMap d = metrics::edt(m);
            bool ok = true;
            bool empty = m.count() == 0;
            for (int r = 0; r < h && ok; ++r)
                for (int c = 0; c < w && ok; ++c) {
                    if (empty) continue;  // sentinel handling checked via empty_source
                    double b = brute_min_dist(m, r, c);
                    if (d.at(r, c) * d.at(r, c) != b * b &&
                        std::fabs(d.at(r, c) - b) > 1e-12)
                        ok = false;
                }
            if (empty && !d.empty_source) ok = false;
            ++edt_total;
            if (ok) ++edt_exact;
        }
    }
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "dsc exact %d/%d, nsd max diff %.2e (tol 1e-9), edt exact %d/%d",
                  dsc_exact, kPairs, worst_nsd, edt_exact, edt_total);
    return {dsc_exact == kPairs && worst_nsd < 1e-9 && edt_exact == edt_total, buf};
}

// ---------------------------------------------------------------- criterion 3

Outcome criterion3() {
    for (int t = 0; t <= 10000; ++t)
        if (prompt::noise_schedule(t) != 1.0 / (double)(t + 1))
            return {false, "noise_schedule(t) != 1/(t+1) at t=" + std::to_string(t)};

    // empirical std of the injected noise: diffuse zeros so the output is
    // exactly the noise term
    prompt::DiffusionPromptEncoder enc(2, 16, 16, 0xACC3);
    double worst = 0.0;
    for (int t : {0, 1, 4, 9}) {
        Rng rng(mix_seed(0xACC3, t));
        Tensor zero({13, 32, 16, 16});  // 106496 draws >= 1e5
        Tensor cz({13, 1, 16, 16});
        Tensor noise = enc.forward_diffuse(zero, cz, t, rng);
        double sum = 0.0, sq = 0.0;
        for (int64_t i = 0; i < noise.size(); ++i) {
            sum += noise.data()[i];
            sq += (double)noise.data()[i] * noise.data()[i];
        }
        double n = (double)noise.size();
        double std = std::sqrt(sq / n - (sum / n) * (sum / n));
        double sigma = prompt::noise_schedule(t);
        worst = std::max(worst, std::fabs(std - sigma) / sigma);
    }
    char buf[96];
    std::snprintf(buf, sizeof(buf), "schedule exact on [0,1e4]; empirical std rel err %.4f (tol 0.02)",
                  worst);
    return {worst < 0.02, buf};
}

// ---------------------------------------------------------------- criterion 4

Outcome criterion4() {
    // closed-form spot value: J=1, lambda=1, L=2 -> 1 + ln 2
    {
        losses::UncertaintyWeights w;
        losses::LossReport rep;
        std::vector<std::pair<std::string, Tensor>> m = {{"only", Tensor::scalar(2.0f)}};
        double total = losses::uncertainty_aggregate(m, w, rep, true).item();
        if (std::fabs(total - (1.0 + std::log(2.0))) > 1e-6)
            return {false, "spot value off: " + std::to_string(total)};
    }

    // two-member toy: the 10x-larger member's lambda must end up larger
    int wins = 0;
    int steps_used = 0;
    for (uint64_t seed = 1; seed <= 5; ++seed) {
        Rng rng(seed);
        float big = (float)rng.uniform(1.0, 3.0);
        float small = big / 10.0f;
        losses::UncertaintyWeights w;
        optim::AdamW opt(optim::AdamWConfig{1e-2, 0.9, 0.999, 1e-8, 0.0});
        bool won = false;
        for (int step = 0; step < 2000; ++step) {
            losses::LossReport rep;
            std::vector<std::pair<std::string, Tensor>> m = {
                {"big", Tensor::scalar(big)}, {"small", Tensor::scalar(small)}};
            Tensor total = losses::uncertainty_aggregate(m, w, rep, true);
            auto params = w.parameters();
            opt.zero_grad(params);
            total.backward();
            opt.step(params);
            if (w.lambda("big").tensor.item() > w.lambda("small").tensor.item()) {
                won = true;
                steps_used = std::max(steps_used, step + 1);
                break;
            }
        }
        if (won) ++wins;
    }
    char buf[96];
    std::snprintf(buf, sizeof(buf), "spot value ok; lambda ordering in %d/5 seeds (need >=4), <=%d steps",
                  wins, steps_used);
    return {wins >= 4, buf};
}

// ---------------------------------------------------------------- criterion 5

Outcome criterion5() {
#ifdef _OPENMP
    omp_set_num_threads(1);  // the criterion is a single-threaded budget
#endif
    auto t0 = std::chrono::steady_clock::now();

    phantom::PhantomConfig pc;
    pc.h = 64;
    pc.w = 64;
    pc.num_classes = 4;
    pc.symmetric_pair = true;
    pc.seed = 7;
    auto data = phantom::generate(pc, 200);
    auto [train_set, val_set] = phantom::split(data, 0.8);

    train::TrainConfig cfg;  // defaults throughout
    cfg.seed = 7;
    cfg.epochs = 100;
    cfg.stop_dsc = 85.0;
    cfg.stop_nsd = 80.0;
    train::Pipeline pipe(cfg, pc.h, pc.w);
    train::Trainer trainer(pipe, cfg);
    train::TrainResult res = trainer.fit(train_set, val_set);

    const metrics::MetricReport& fin = res.epochs.back().val;
    double minutes =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;

    // mirror classes (0,1) and (2,3) must both be segmented, gap < 10 points
    double gap = 0.0;
    for (size_t i = 0; i + 1 < fin.per_class.size(); i += 2)
        gap = std::max(gap, std::fabs(fin.per_class[i].dsc_pct - fin.per_class[i + 1].dsc_pct));

    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "DSC %.2f (>=85) NSD %.2f (>=80) after %d epochs, %.1f min (<30), mirror gap %.2f (<10)",
                  fin.mean_dsc_pct, fin.mean_nsd_pct, (int)res.epochs.size(), minutes, gap);
    bool pass = fin.mean_dsc_pct >= 85.0 && fin.mean_nsd_pct >= 80.0 &&
                (int)res.epochs.size() <= 100 && minutes < 30.0 && gap < 10.0;
    return {pass, buf};
}

// ---------------------------------------------------------------- criterion 6

Outcome criterion6() {
    int branch_ok = 0, diff_ok = 0, joint_ok = 0;
    for (uint64_t seed = 1; seed <= 5; ++seed) {
        phantom::PhantomConfig pc;
        pc.h = 32;
        pc.w = 32;
        pc.num_classes = 2;
        pc.seed = 100 + seed;
        auto data = phantom::generate(pc, 64);
        auto [train_set, val_set] = phantom::split(data, 0.75);

        train::TrainConfig base;
        base.seed = seed;
        base.epochs = 20;
        base.num_classes = 2;

        std::vector<train::AblationDelta> grid = {
            {"full", [](train::TrainConfig&) {}},
            {"dense", [](train::TrainConfig& c) { c.branch_mode = train::BranchMode::kDense; }},
            {"sparse", [](train::TrainConfig& c) { c.branch_mode = train::BranchMode::kSparse; }},
            {"no-diffusion", [](train::TrainConfig& c) { c.diffusion_enabled = false; }},
            {"no-ce", [](train::TrainConfig& c) { c.toggles.ce = false; }},
            {"no-dc", [](train::TrainConfig& c) { c.toggles.dc = false; }},
            {"no-mse", [](train::TrainConfig& c) { c.toggles.mse = false; }},
        };
        auto rows = train::run_ablation(base, train_set, val_set, grid);
        auto dsc_of = [&](const std::string& label) {
            for (const auto& r : rows)
                if (r.label == label) return r.report.mean_dsc_pct;
            return -1.0;
        };
        double full = dsc_of("full");
        if (full >= std::max(dsc_of("dense"), dsc_of("sparse")) + 0.5) ++branch_ok;
        if (full >= dsc_of("no-diffusion") + 0.5) ++diff_ok;
        double best_removed =
            std::max(std::max(dsc_of("no-ce"), dsc_of("no-dc")), dsc_of("no-mse"));
        if (full >= best_removed) ++joint_ok;
    }
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "both>max(single)+0.5 in %d/5, diff-on>off+0.5 in %d/5, full-joint>=removed in %d/5 (need >=3 each)",
                  branch_ok, diff_ok, joint_ok);
    return {branch_ok >= 3 && diff_ok >= 3 && joint_ok >= 3, buf};
}

// ---------------------------------------------------------------- criterion 7

Outcome criterion7() {
    phantom::PhantomConfig pc;
    pc.h = 64;
    pc.w = 64;
    pc.num_classes = 2;
    pc.seed = 21;
    auto data = phantom::generate(pc, 80);
    auto [train_set, val_set] = phantom::split(data, 0.8);

    train::TrainConfig cfg;
    cfg.seed = 21;
    cfg.epochs = 30;
    cfg.num_classes = 2;
    cfg.prompt_mode = train::PromptMode::kBox;
    train::Pipeline pipe(cfg, pc.h, pc.w);
    train::Trainer trainer(pipe, cfg);
    trainer.fit(train_set, val_set);

    auto rows = train::box_offset_study(trainer, val_set, {0, 5, 15, 30, 50}, true);
    auto dsc_of = [&](const std::string& label) {
        for (const auto& r : rows)
            if (r.label == label) return r.report.mean_dsc_pct;
        return -1.0;
    };
    double near = std::min(dsc_of("0"), dsc_of("5"));
    std::vector<double> far = {dsc_of("15"), dsc_of("30"), dsc_of("50"), dsc_of("IB")};
    bool near_beats_far = true;
    for (double f : far) near_beats_far = near_beats_far && near > f;
    // on 64x64 images every offset >= ~25 clamps to a near-full-image box, so
    // the tail saturates to statistically tied scores; allow a small tie band
    bool non_increasing = true;
    for (size_t i = 1; i < far.size(); ++i)
        non_increasing = non_increasing && far[i] <= far[i - 1] + 0.5;

    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "DSC near(0,5)=(%.1f,%.1f) far(15,30,50,IB)=(%.1f,%.1f,%.1f,%.1f); near>far %s, tail non-increasing %s",
                  dsc_of("0"), dsc_of("5"), far[0], far[1], far[2], far[3],
                  near_beats_far ? "yes" : "no", non_increasing ? "yes" : "no");
    return {near_beats_far && non_increasing, buf};
}

// ---------------------------------------------------------------- criterion 8

std::vector<float> snapshot(train::Pipeline& pipe) {
    std::vector<float> out;
    for (const Parameter* p : pipe.all_parameters())
        out.insert(out.end(), p->tensor.vec().begin(), p->tensor.vec().end());
    return out;
}

Outcome criterion8() {
    phantom::PhantomConfig pc;
    pc.h = 32;
    pc.w = 32;
    pc.num_classes = 2;
    pc.seed = 31;
    auto data = phantom::generate(pc, 24);
    auto [train_set, val_set] = phantom::split(data, 0.75);

    train::TrainConfig cfg;
    cfg.seed = 31;
    cfg.epochs = 2;
    cfg.num_classes = 2;
    cfg.batch_size = 8;

    // same seed -> bit-identical trajectory
    std::vector<double> totals1, totals2;
    train::Pipeline p1(cfg, pc.h, pc.w), p2(cfg, pc.h, pc.w);
    train::Trainer t1(p1, cfg), t2(p2, cfg);
    t1.fit(train_set, val_set,
           [&](int, int, const losses::LossReport& r) { totals1.push_back(r.total); });
    t2.fit(train_set, val_set,
           [&](int, int, const losses::LossReport& r) { totals2.push_back(r.total); });
    bool traj = totals1 == totals2 && snapshot(p1) == snapshot(p2);

    // checkpoint save/load/continue -> bit-identical next step
    std::string dir = "acc_ckpt_tmp";
    t1.save_checkpoint(dir, cfg.epochs);
    train::Pipeline p3(cfg, pc.h, pc.w);
    train::Trainer t3(p3, cfg);
    t3.load_checkpoint(dir);
    std::vector<std::pair<int, int>> batch = {{0, 0}, {1, 1}, {2, 0}};
    losses::LossReport ra = t1.train_step(train_set, batch, t1.rng());
    losses::LossReport rb = t3.train_step(train_set, batch, t3.rng());
    bool ckpt = ra.total == rb.total && snapshot(p1) == snapshot(p3);

    // evaluation is idempotent
    auto e1 = t2.evaluate(val_set).to_json();
    auto e2 = t2.evaluate(val_set).to_json();
    bool eval_ok = e1 == e2;

    char buf[120];
    std::snprintf(buf, sizeof(buf), "trajectory identical %s, checkpoint continue identical %s, eval idempotent %s",
                  traj ? "yes" : "no", ckpt ? "yes" : "no", eval_ok ? "yes" : "no");
    return {traj && ckpt && eval_ok, buf};
}

}  // namespace

int main(int argc, char** argv) {
    struct Entry {
        int id;
        const char* name;
        Outcome (*fn)();
    };
    const Entry entries[] = {
        {1, "gradient correctness", criterion1},
        {2, "metric oracles", criterion2},
        {3, "noise schedule", criterion3},
        {4, "uncertainty aggregation", criterion4},
        {5, "end-to-end learning", criterion5},
        {6, "ablation direction", criterion6},
        {7, "box offset trend", criterion7},
        {8, "determinism and round-trips", criterion8},
    };
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

    int failures = 0;
    for (const Entry& e : entries) {
        if (!only.empty() && !only.count(e.id)) continue;
        auto t0 = std::chrono::steady_clock::now();
        Outcome out = e.fn();
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("[%d] %s %s: %s (%.1fs)\n", e.id, out.pass ? "PASS" : "FAIL", e.name,
                    out.detail.c_str(), secs);
        std::fflush(stdout);
        if (!out.pass) ++failures;
    }
    return failures;
}
