#include "aseg/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace aseg::optim {

void AdamW::step(const std::vector<Parameter*>& params) {
    for (Parameter* p : params) {
        if (p->frozen || !p->tensor.requires_grad()) continue;
        Moments& st = state_[p->name];
        const int64_t n = p->tensor.size();
        if (st.m.empty()) {
            st.m.assign((size_t)n, 0.0f);
            st.v.assign((size_t)n, 0.0f);
        } else if ((int64_t)st.m.size() != n) {
            throw std::logic_error("AdamW: state size mismatch for " + p->name);
        }
        st.step += 1;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, (double)st.step);
        const double bc2 = 1.0 - std::pow(cfg_.beta2, (double)st.step);
        float* w = p->tensor.data();
        const float* g = p->tensor.grad().data();
        for (int64_t i = 0; i < n; ++i) {
            double m = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * g[i];
            double v = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * (double)g[i] * g[i];
            st.m[i] = (float)m;
            st.v[i] = (float)v;
            double update = (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps);
            // decoupled weight decay
            w[i] = (float)(w[i] - cfg_.lr * update - cfg_.lr * cfg_.weight_decay * w[i]);
        }
    }
}

void AdamW::zero_grad(const std::vector<Parameter*>& params) {
    for (Parameter* p : params) p->tensor.zero_grad();
}

double PlateauScheduler::observe(double metric) {
    if (!has_best_ || metric > best_ + min_delta_) {
        best_ = metric;
        has_best_ = true;
        bad_epochs_ = 0;
    } else {
        bad_epochs_ += 1;
        if (bad_epochs_ >= patience_) {
            lr_ *= factor_;
            bad_epochs_ = 0;
        }
    }
    return lr_;
}

}  // namespace aseg::optim
