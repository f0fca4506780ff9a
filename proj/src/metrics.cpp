#include "aseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

namespace aseg::metrics {

int64_t BinaryMask::count() const {
    int64_t n = 0;
    for (uint8_t v : grid) n += v;
    return n;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Felzenszwalb-Huttenlocher 1D squared-distance lower envelope.
void edt_1d(const std::vector<double>& f, std::vector<double>& d, int n) {
    static thread_local std::vector<int> v;
    static thread_local std::vector<double> z;
    v.assign(n, 0);
    z.assign(n + 1, 0.0);
    // infinite parabolas (no source in this line yet) never enter the envelope
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[q] == kInf) continue;
        if (k < 0) {
            k = 0;
            v[0] = q;
            z[0] = -kInf;
            z[1] = kInf;
            continue;
        }
        double s;
        while (true) {
            int p = v[k];
            s = ((f[q] + q * q) - (f[p] + p * p)) / (2.0 * q - 2.0 * p);
            if (k > 0 && s <= z[k]) {
                --k;
            } else {
                break;
            }
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = kInf;
    }
    if (k < 0) {
        for (int q = 0; q < n; ++q) d[q] = kInf;
        return;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        int p = v[k];
        d[q] = (double)(q - p) * (q - p) + f[p];
    }
}

}  // namespace

DistanceMap edt(const BinaryMask& mask) {
    DistanceMap out;
    out.h = mask.h;
    out.w = mask.w;
    out.dist.assign((size_t)mask.h * mask.w, 0.0);
    const double d_max = (double)(mask.h + mask.w);
    if (mask.empty_mask()) {
        out.empty_source = true;
        std::fill(out.dist.begin(), out.dist.end(), d_max);
        return out;
    }
    std::vector<double> sq((size_t)mask.h * mask.w);
    for (size_t i = 0; i < sq.size(); ++i) sq[i] = mask.grid[i] ? 0.0 : kInf;

    // columns then rows
    std::vector<double> f(std::max(mask.h, mask.w)), d(std::max(mask.h, mask.w));
    for (int c = 0; c < mask.w; ++c) {
        for (int r = 0; r < mask.h; ++r) f[r] = sq[(size_t)r * mask.w + c];
        edt_1d(f, d, mask.h);
        for (int r = 0; r < mask.h; ++r) sq[(size_t)r * mask.w + c] = d[r];
    }
    for (int r = 0; r < mask.h; ++r) {
        for (int c = 0; c < mask.w; ++c) f[c] = sq[(size_t)r * mask.w + c];
        edt_1d(f, d, mask.w);
        for (int c = 0; c < mask.w; ++c) out.dist[(size_t)r * mask.w + c] = std::sqrt(d[c]);
    }
    return out;
}

BinaryMask boundary(const BinaryMask& mask) {
    BinaryMask out(mask.h, mask.w);
    for (int r = 0; r < mask.h; ++r)
        for (int c = 0; c < mask.w; ++c) {
            if (!mask.at(r, c)) continue;
            bool edge = r == 0 || r == mask.h - 1 || c == 0 || c == mask.w - 1;
            if (!edge) {
                edge = !mask.at(r - 1, c) || !mask.at(r + 1, c) || !mask.at(r, c - 1) ||
                       !mask.at(r, c + 1);
            }
            out.at(r, c) = edge ? 1 : 0;
        }
    return out;
}

double dsc(const BinaryMask& g, const BinaryMask& s) {
    if (g.h != s.h || g.w != s.w) throw std::runtime_error("dsc: shape mismatch");
    int64_t ng = 0, ns = 0, inter = 0;
    for (size_t i = 0; i < g.grid.size(); ++i) {
        ng += g.grid[i];
        ns += s.grid[i];
        inter += g.grid[i] & s.grid[i];
    }
    if (ng + ns == 0) return 1.0;
    return 2.0 * (double)inter / (double)(ng + ns);
}

double nsd(const BinaryMask& g, const BinaryMask& s, double tau) {
    if (g.h != s.h || g.w != s.w) throw std::runtime_error("nsd: shape mismatch");
    const bool ge = g.empty_mask(), se = s.empty_mask();
    if (ge && se) return 1.0;
    if (ge != se) return 0.0;
    BinaryMask bg = boundary(g), bs = boundary(s);
    DistanceMap dg = edt(bg), ds = edt(bs);
    int64_t ng = 0, ns = 0, g_in_band = 0, s_in_band = 0;
    for (size_t i = 0; i < g.grid.size(); ++i) {
        if (bg.grid[i]) {
            ++ng;
            if (ds.dist[i] <= tau) ++g_in_band;
        }
        if (bs.grid[i]) {
            ++ns;
            if (dg.dist[i] <= tau) ++s_in_band;
        }
    }
    return (double)(g_in_band + s_in_band) / (double)(ng + ns);
}

nlohmann::json MetricReport::to_json() const {
    nlohmann::json per;
    for (const auto& c : per_class) {
        per[std::to_string(c.class_id)] = {
            {"n", c.n}, {"dsc", c.dsc_pct}, {"nsd", c.nsd_pct}};
    }
    return {{"tau", tau},
            {"per_class", per},
            {"mean", {{"dsc", mean_dsc_pct}, {"nsd", mean_nsd_pct}}}};
}

MetricReport evaluate_batch(const std::vector<BinaryMask>& preds,
                            const std::vector<BinaryMask>& gts,
                            const std::vector<int>& classes, double tau) {
    if (preds.size() != gts.size() || preds.size() != classes.size())
        throw std::runtime_error("evaluate_batch: length mismatch");
    if (preds.empty()) throw std::runtime_error("evaluate_batch: empty input");
    struct Acc {
        double dsc_sum = 0.0, nsd_sum = 0.0;
        int n = 0;
    };
    std::map<int, Acc> by_class;
    std::vector<double> ds(preds.size()), ns(preds.size());
#pragma omp parallel for schedule(dynamic)
    for (int64_t i = 0; i < (int64_t)preds.size(); ++i) {
        ds[i] = dsc(gts[i], preds[i]);
        ns[i] = nsd(gts[i], preds[i], tau);
    }
    double dsum = 0.0, nsum = 0.0;
    for (size_t i = 0; i < preds.size(); ++i) {
        auto& a = by_class[classes[i]];
        a.dsc_sum += ds[i];
        a.nsd_sum += ns[i];
        ++a.n;
        dsum += ds[i];
        nsum += ns[i];
    }
    auto pct = [](double v) { return std::round(v * 100.0 * 1000.0) / 1000.0; };
    MetricReport rep;
    rep.tau = tau;
    for (const auto& [cid, a] : by_class)
        rep.per_class.push_back({cid, a.n, pct(a.dsc_sum / a.n), pct(a.nsd_sum / a.n)});
    rep.mean_dsc_pct = pct(dsum / (double)preds.size());
    rep.mean_nsd_pct = pct(nsum / (double)preds.size());
    return rep;
}

}  // namespace aseg::metrics
