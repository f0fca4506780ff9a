#pragma once

// Dense compute kernels. The default entry points are OpenMP-parallel; every
// kernel is written in gather form (one writer per output element, fixed
// accumulation order) so results are bit-identical for any thread count.
// kernels::serial holds plain-loop references used by the tests and the
// benchmark target.

namespace aseg::kernels {

struct ConvDims {
    int batch = 1;
    int cin = 1, cout = 1;
    int h = 1, w = 1;        // input spatial
    int kh = 1, kw = 1;      // kernel spatial
    int stride = 1, pad = 0;
    int ho = 1, wo = 1;      // output spatial

    static ConvDims conv(int batch, int cin, int h, int w, int cout, int kh, int kw,
                         int stride, int pad);
    // transposed conv: ho = (h-1)*stride + kh
    static ConvDims convt(int batch, int cin, int h, int w, int cout, int kh, int kw,
                          int stride);
};

// weight layout [cout, cin, kh, kw]; bias [cout] (may be null)
void conv2d_forward(const float* x, const float* w, const float* b, float* y,
                    const ConvDims& d);
void conv2d_backward_input(const float* gy, const float* w, float* gx, const ConvDims& d);
void conv2d_backward_weight(const float* gy, const float* x, float* gw, const ConvDims& d);
void conv2d_backward_bias(const float* gy, float* gb, const ConvDims& d);

// transposed conv, weight layout [cin, cout, kh, kw]
void convt2d_forward(const float* x, const float* w, const float* b, float* y,
                     const ConvDims& d);
void convt2d_backward_input(const float* gy, const float* w, float* gx, const ConvDims& d);
void convt2d_backward_weight(const float* gy, const float* x, float* gw, const ConvDims& d);
void convt2d_backward_bias(const float* gy, float* gb, const ConvDims& d);

// C[n,m] (+)= A[n,k] * B[k,m]; transB reads B as [m,k]
void matmul(const float* a, const float* b, float* c, int n, int k, int m,
            bool trans_b = false, bool accumulate = false);

namespace serial {
void conv2d_forward(const float* x, const float* w, const float* b, float* y,
                    const ConvDims& d);
void convt2d_forward(const float* x, const float* w, const float* b, float* y,
                     const ConvDims& d);
void matmul(const float* a, const float* b, float* c, int n, int k, int m,
            bool trans_b = false, bool accumulate = false);
}  // namespace serial

}  // namespace aseg::kernels
