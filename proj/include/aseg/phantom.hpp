#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aseg/metrics.hpp"
#include "aseg/tensor.hpp"

namespace aseg::phantom {

struct PhantomConfig {
    int h = 64, w = 64;
    int num_classes = 4;
    double contrast = 1.0;        // in (0, 1]
    double noise_std = 0.02;
    bool symmetric_pair = false;  // classes k and k+1 mirror each other
    uint64_t seed = 0;

    void validate() const;
};

struct PhantomSample {
    Tensor image;                          // [3,H,W] in [0,1]
    std::vector<metrics::BinaryMask> masks;  // one per class in class_ids
    std::vector<int> class_ids;
    uint64_t seed = 0;
};

// deterministic in (config, n); sample i seeded as mix_seed(config.seed, i)
std::vector<PhantomSample> generate(const PhantomConfig& config, int n);

std::pair<std::vector<PhantomSample>, std::vector<PhantomSample>> split(
    const std::vector<PhantomSample>& samples, double train_frac);

// PGM + JSON index export / import
void export_dataset(const std::vector<PhantomSample>& samples, const std::string& dir);
std::vector<PhantomSample> import_dataset(const std::string& dir);

constexpr double kBackgroundLevel = 0.1;
double class_base_level(int class_id, int num_classes, bool symmetric_pair);

}  // namespace aseg::phantom
