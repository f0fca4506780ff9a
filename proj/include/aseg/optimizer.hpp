#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "aseg/tensor.hpp"

namespace aseg::optim {

struct AdamWConfig {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// Decoupled-weight-decay adaptive-moment optimizer with bias correction.
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

    void step(const std::vector<Parameter*>& params);
    void zero_grad(const std::vector<Parameter*>& params);

    double lr() const { return cfg_.lr; }
    void set_lr(double lr) { cfg_.lr = lr; }
    const AdamWConfig& config() const { return cfg_; }

    struct Moments {
        std::vector<float> m, v;
        int64_t step = 0;
    };
    std::map<std::string, Moments>& state() { return state_; }

private:
    AdamWConfig cfg_;
    std::map<std::string, Moments> state_;
};

// Reduce-on-plateau on a maximized metric; factor 0.9, patience 5, no cooldown.
class PlateauScheduler {
public:
    PlateauScheduler(double initial_lr, double factor = 0.9, int patience = 5,
                     double min_delta = 1e-6)
        : lr_(initial_lr), factor_(factor), patience_(patience), min_delta_(min_delta) {}

    double observe(double metric);  // returns the (possibly reduced) lr
    double lr() const { return lr_; }

    // checkpoint round-trip
    double best() const { return best_; }
    int bad_epochs() const { return bad_epochs_; }
    void restore(double lr, double best, int bad_epochs) {
        lr_ = lr;
        best_ = best;
        bad_epochs_ = bad_epochs;
        has_best_ = true;
    }

private:
    double lr_;
    double factor_;
    int patience_;
    double min_delta_;
    double best_ = 0.0;
    bool has_best_ = false;
    int bad_epochs_ = 0;
};

}  // namespace aseg::optim
