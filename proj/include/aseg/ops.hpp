#pragma once

#include "aseg/tensor.hpp"

namespace aseg::ops {

// elementwise, same shape
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, float s);
Tensor mul_scalar(const Tensor& a, float s);

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);
Tensor clamp(const Tensor& a, float lo, float hi);

// reductions (float64 accumulation)
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_hw(const Tensor& a);  // [B,C,H,W] -> [B,C]

// broadcasts
Tensor add_bias_channel(const Tensor& x, const Tensor& b);   // [B,C,H,W] + [C]
Tensor add_bias_feature(const Tensor& x, const Tensor& b);   // [B,E] + [E]
Tensor add_plane(const Tensor& x, const Tensor& p);          // [B,C,H,W] + [B,1,H,W]
Tensor scale_channels(const Tensor& x, const Tensor& s);     // [B,C,H,W] * [B,C,1,1]

// structure
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat_channels(const Tensor& a, const Tensor& b);    // along dim 1

// linear algebra
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);  // [B,D]*[D,E]+[E]
Tensor bmm(const Tensor& a, const Tensor& b, bool trans_b = false);
Tensor softmax_lastdim(const Tensor& a);

// conv / pooling
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding);
Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride);
Tensor avg_pool2d(const Tensor& x, int factor);
Tensor adaptive_avg_pool(const Tensor& x);                   // -> [B,C,1,1]
Tensor upsample_nearest(const Tensor& x, int factor);

// finite-difference check of d(f)/dx against the recorded gradients;
// returns max over components of |analytic - central diff| / (max_j|analytic_j| + 1e-8).
// The default step is dyadic so float32 perturbations stay exactly representable.
double check_gradient(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                      double h = 0.0078125);

}  // namespace aseg::ops
