#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace aseg::metrics {

struct BinaryMask {
    int h = 0, w = 0;
    std::vector<uint8_t> grid;  // strictly {0,1}

    BinaryMask() = default;
    BinaryMask(int h_, int w_) : h(h_), w(w_), grid((size_t)h_ * w_, 0) {}
    uint8_t at(int r, int c) const { return grid[(size_t)r * w + c]; }
    uint8_t& at(int r, int c) { return grid[(size_t)r * w + c]; }
    int64_t count() const;
    bool empty_mask() const { return count() == 0; }
};

struct DistanceMap {
    int h = 0, w = 0;
    std::vector<double> dist;  // Euclidean pixels; d_max sentinel when source empty
    bool empty_source = false;
    double at(int r, int c) const { return dist[(size_t)r * w + c]; }
};

// Exact Euclidean distance to the nearest source (mask==1) pixel,
// two-pass per-dimension lower-envelope algorithm.
DistanceMap edt(const BinaryMask& mask);

// Foreground pixels with at least one 4-neighbor background pixel;
// the image border counts as background.
BinaryMask boundary(const BinaryMask& mask);

// 2|G∩S| / (|G|+|S|); both empty -> 1.0
double dsc(const BinaryMask& g, const BinaryMask& s);

// boundary agreement within tolerance tau; both empty -> 1.0, one empty -> 0.0
double nsd(const BinaryMask& g, const BinaryMask& s, double tau = 2.0);

struct ClassScore {
    int class_id = 0;
    int n = 0;
    double dsc_pct = 0.0;  // percentages
    double nsd_pct = 0.0;
};

struct MetricReport {
    std::vector<ClassScore> per_class;
    double mean_dsc_pct = 0.0;
    double mean_nsd_pct = 0.0;
    double tau = 2.0;
    nlohmann::json to_json() const;
};

// preds/gts aligned; classes[i] labels pair i
MetricReport evaluate_batch(const std::vector<BinaryMask>& preds,
                            const std::vector<BinaryMask>& gts,
                            const std::vector<int>& classes, double tau = 2.0);

}  // namespace aseg::metrics
