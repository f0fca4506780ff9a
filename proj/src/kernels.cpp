#include "aseg/kernels.hpp"

#include <cstdint>

namespace aseg::kernels {

ConvDims ConvDims::conv(int batch, int cin, int h, int w, int cout, int kh, int kw,
                        int stride, int pad) {
    ConvDims d;
    d.batch = batch;
    d.cin = cin;
    d.h = h;
    d.w = w;
    d.cout = cout;
    d.kh = kh;
    d.kw = kw;
    d.stride = stride;
    d.pad = pad;
    d.ho = (h + 2 * pad - kh) / stride + 1;
    d.wo = (w + 2 * pad - kw) / stride + 1;
    return d;
}

ConvDims ConvDims::convt(int batch, int cin, int h, int w, int cout, int kh, int kw,
                         int stride) {
    ConvDims d;
    d.batch = batch;
    d.cin = cin;
    d.h = h;
    d.w = w;
    d.cout = cout;
    d.kh = kh;
    d.kw = kw;
    d.stride = stride;
    d.pad = 0;
    d.ho = (h - 1) * stride + kh;
    d.wo = (w - 1) * stride + kw;
    return d;
}

void conv2d_forward(const float* x, const float* w, const float* b, float* y,
                    const ConvDims& d) {
    const int64_t total = (int64_t)d.batch * d.cout * d.ho * d.wo;
#pragma omp parallel for schedule(static)
    for (int64_t idx = 0; idx < total; ++idx) {
        int ow = (int)(idx % d.wo);
        int oh = (int)(idx / d.wo % d.ho);
        int co = (int)(idx / ((int64_t)d.wo * d.ho) % d.cout);
        int n = (int)(idx / ((int64_t)d.wo * d.ho * d.cout));
        double acc = b ? b[co] : 0.0;
        for (int ci = 0; ci < d.cin; ++ci) {
            const float* xp = x + (((int64_t)n * d.cin + ci) * d.h) * d.w;
            const float* wp = w + (((int64_t)co * d.cin + ci) * d.kh) * d.kw;
            for (int kh = 0; kh < d.kh; ++kh) {
                int ih = oh * d.stride - d.pad + kh;
                if (ih < 0 || ih >= d.h) continue;
                for (int kw = 0; kw < d.kw; ++kw) {
                    int iw = ow * d.stride - d.pad + kw;
                    if (iw < 0 || iw >= d.w) continue;
                    acc += (double)xp[ih * d.w + iw] * wp[kh * d.kw + kw];
                }
            }
        }
        y[idx] = (float)acc;
    }
}

void conv2d_backward_input(const float* gy, const float* w, float* gx, const ConvDims& d) {
    const int64_t total = (int64_t)d.batch * d.cin * d.h * d.w;
#pragma omp parallel for schedule(static)
    for (int64_t idx = 0; idx < total; ++idx) {
        int iw = (int)(idx % d.w);
        int ih = (int)(idx / d.w % d.h);
        int ci = (int)(idx / ((int64_t)d.w * d.h) % d.cin);
        int n = (int)(idx / ((int64_t)d.w * d.h * d.cin));
        double acc = 0.0;
        for (int co = 0; co < d.cout; ++co) {
            const float* gyp = gy + (((int64_t)n * d.cout + co) * d.ho) * d.wo;
            const float* wp = w + (((int64_t)co * d.cin + ci) * d.kh) * d.kw;
            for (int kh = 0; kh < d.kh; ++kh) {
                int num = ih + d.pad - kh;
                if (num < 0 || num % d.stride != 0) continue;
                int oh = num / d.stride;
                if (oh >= d.ho) continue;
                for (int kw = 0; kw < d.kw; ++kw) {
                    int numw = iw + d.pad - kw;
                    if (numw < 0 || numw % d.stride != 0) continue;
                    int ow = numw / d.stride;
                    if (ow >= d.wo) continue;
                    acc += (double)gyp[oh * d.wo + ow] * wp[kh * d.kw + kw];
                }
            }
        }
        gx[idx] += (float)acc;
    }
}

void conv2d_backward_weight(const float* gy, const float* x, float* gw, const ConvDims& d) {
    const int64_t total = (int64_t)d.cout * d.cin * d.kh * d.kw;
#pragma omp parallel for schedule(static)
    for (int64_t idx = 0; idx < total; ++idx) {
        int kw = (int)(idx % d.kw);
        int kh = (int)(idx / d.kw % d.kh);
        int ci = (int)(idx / ((int64_t)d.kw * d.kh) % d.cin);
        int co = (int)(idx / ((int64_t)d.kw * d.kh * d.cin));
        double acc = 0.0;
        for (int n = 0; n < d.batch; ++n) {
            const float* gyp = gy + (((int64_t)n * d.cout + co) * d.ho) * d.wo;
            const float* xp = x + (((int64_t)n * d.cin + ci) * d.h) * d.w;
            for (int oh = 0; oh < d.ho; ++oh) {
                int ih = oh * d.stride - d.pad + kh;
                if (ih < 0 || ih >= d.h) continue;
                for (int ow = 0; ow < d.wo; ++ow) {
                    int iw = ow * d.stride - d.pad + kw;
                    if (iw < 0 || iw >= d.w) continue;
                    acc += (double)gyp[oh * d.wo + ow] * xp[ih * d.w + iw];
                }
            }
        }
        gw[idx] += (float)acc;
    }
}

void conv2d_backward_bias(const float* gy, float* gb, const ConvDims& d) {
#pragma omp parallel for schedule(static)
    for (int co = 0; co < d.cout; ++co) {
        double acc = 0.0;
        for (int n = 0; n < d.batch; ++n) {
            const float* gyp = gy + (((int64_t)n * d.cout + co) * d.ho) * d.wo;
            for (int i = 0; i < d.ho * d.wo; ++i) acc += gyp[i];
        }
        gb[co] += (float)acc;
    }
}

void convt2d_forward(const float* x, const float* w, const float* b, float* y,
                     const ConvDims& d) {
    const int64_t total = (int64_t)d.batch * d.cout * d.ho * d.wo;
#pragma omp parallel for schedule(static)
    for (int64_t idx = 0; idx < total; ++idx) {
        int ow = (int)(idx % d.wo);
        int oh = (int)(idx / d.wo % d.ho);
        int co = (int)(idx / ((int64_t)d.wo * d.ho) % d.cout);
        int n = (int)(idx / ((int64_t)d.wo * d.ho * d.cout));
        double acc = b ? b[co] : 0.0;
        for (int ci = 0; ci < d.cin; ++ci) {
            const float* xp = x + (((int64_t)n * d.cin + ci) * d.h) * d.w;
            const float* wp = w + (((int64_t)ci * d.cout + co) * d.kh) * d.kw;
            for (int kh = 0; kh < d.kh; ++kh) {
                int num = oh - kh;
                if (num < 0 || num % d.stride != 0) continue;
                int ih = num / d.stride;
                if (ih >= d.h) continue;
                for (int kw = 0; kw < d.kw; ++kw) {
                    int numw = ow - kw;
                    if (numw < 0 || numw % d.stride != 0) continue;
                    int iw = numw / d.stride;
                    if (iw >= d.w) continue;
                    acc += (double)xp[ih * d.w + iw] * wp[kh * d.kw + kw];
                }
            }
        }
        y[idx] = (float)acc;
    }
}

void convt2d_backward_input(const float* gy, const float* w, float* gx, const ConvDims& d) {
    const int64_t total = (int64_t)d.batch * d.cin * d.h * d.w;
#pragma omp parallel for schedule(static)
    for (int64_t idx = 0; idx < total; ++idx) {
        int iw = (int)(idx % d.w);
        int ih = (int)(idx / d.w % d.h);
        int ci = (int)(idx / ((int64_t)d.w * d.h) % d.cin);
        int n = (int)(idx / ((int64_t)d.w * d.h * d.cin));
        double acc = 0.0;
        for (int co = 0; co < d.cout; ++co) {
            const float* gyp = gy + (((int64_t)n * d.cout + co) * d.ho) * d.wo;
            const float* wp = w + (((int64_t)ci * d.cout + co) * d.kh) * d.kw;
            for (int kh = 0; kh < d.kh; ++kh) {
                int oh = ih * d.stride + kh;
                if (oh >= d.ho) continue;
                for (int kw = 0; kw < d.kw; ++kw) {
                    int ow = iw * d.stride + kw;
                    if (ow >= d.wo) continue;
                    acc += (double)gyp[oh * d.wo + ow] * wp[kh * d.kw + kw];
                }
            }
        }
        gx[idx] += (float)acc;
    }
}

void convt2d_backward_weight(const float* gy, const float* x, float* gw, const ConvDims& d) {
    const int64_t total = (int64_t)d.cin * d.cout * d.kh * d.kw;
#pragma omp parallel for schedule(static)
    for (int64_t idx = 0; idx < total; ++idx) {
        int kw = (int)(idx % d.kw);
        int kh = (int)(idx / d.kw % d.kh);
        int co = (int)(idx / ((int64_t)d.kw * d.kh) % d.cout);
        int ci = (int)(idx / ((int64_t)d.kw * d.kh * d.cout));
        double acc = 0.0;
        for (int n = 0; n < d.batch; ++n) {
            const float* xp = x + (((int64_t)n * d.cin + ci) * d.h) * d.w;
            const float* gyp = gy + (((int64_t)n * d.cout + co) * d.ho) * d.wo;
            for (int ih = 0; ih < d.h; ++ih) {
                int oh = ih * d.stride + kh;
                if (oh >= d.ho) continue;
                for (int iw = 0; iw < d.w; ++iw) {
                    int ow = iw * d.stride + kw;
                    if (ow >= d.wo) continue;
                    acc += (double)xp[ih * d.w + iw] * gyp[oh * d.wo + ow];
                }
            }
        }
        gw[idx] += (float)acc;
    }
}

void convt2d_backward_bias(const float* gy, float* gb, const ConvDims& d) {
    conv2d_backward_bias(gy, gb, d);
}

void matmul(const float* a, const float* b, float* c, int n, int k, int m, bool trans_b,
            bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int64_t idx = 0; idx < (int64_t)n * m; ++idx) {
        int j = (int)(idx % m);
        int i = (int)(idx / m);
        double acc = 0.0;
        const float* ap = a + (int64_t)i * k;
        if (trans_b) {
            const float* bp = b + (int64_t)j * k;
            for (int p = 0; p < k; ++p) acc += (double)ap[p] * bp[p];
        } else {
            for (int p = 0; p < k; ++p) acc += (double)ap[p] * b[(int64_t)p * m + j];
        }
        if (accumulate)
            c[idx] += (float)acc;
        else
            c[idx] = (float)acc;
    }
}

namespace serial {

void conv2d_forward(const float* x, const float* w, const float* b, float* y,
                    const ConvDims& d) {
    for (int n = 0; n < d.batch; ++n)
        for (int co = 0; co < d.cout; ++co)
            for (int oh = 0; oh < d.ho; ++oh)
                for (int ow = 0; ow < d.wo; ++ow) {
                    double acc = b ? b[co] : 0.0;
                    for (int ci = 0; ci < d.cin; ++ci)
                        for (int kh = 0; kh < d.kh; ++kh)
                            for (int kw = 0; kw < d.kw; ++kw) {
                                int ih = oh * d.stride - d.pad + kh;
                                int iw = ow * d.stride - d.pad + kw;
                                if (ih < 0 || ih >= d.h || iw < 0 || iw >= d.w) continue;
                                acc += (double)x[(((int64_t)n * d.cin + ci) * d.h + ih) * d.w + iw] *
                                       w[(((int64_t)co * d.cin + ci) * d.kh + kh) * d.kw + kw];
                            }
                    y[(((int64_t)n * d.cout + co) * d.ho + oh) * d.wo + ow] = (float)acc;
                }
}

void convt2d_forward(const float* x, const float* w, const float* b, float* y,
                     const ConvDims& d) {
    for (int64_t i = 0; i < (int64_t)d.batch * d.cout * d.ho * d.wo; ++i)
        y[i] = b ? b[i / ((int64_t)d.ho * d.wo) % d.cout] : 0.0f;
    for (int n = 0; n < d.batch; ++n)
        for (int ci = 0; ci < d.cin; ++ci)
            for (int ih = 0; ih < d.h; ++ih)
                for (int iw = 0; iw < d.w; ++iw) {
                    float xv = x[(((int64_t)n * d.cin + ci) * d.h + ih) * d.w + iw];
                    for (int co = 0; co < d.cout; ++co)
                        for (int kh = 0; kh < d.kh; ++kh)
                            for (int kw = 0; kw < d.kw; ++kw) {
                                int oh = ih * d.stride + kh;
                                int ow = iw * d.stride + kw;
                                y[(((int64_t)n * d.cout + co) * d.ho + oh) * d.wo + ow] +=
                                    xv * w[(((int64_t)ci * d.cout + co) * d.kh + kh) * d.kw + kw];
                            }
                }
}

void matmul(const float* a, const float* b, float* c, int n, int k, int m, bool trans_b,
            bool accumulate) {
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p)
                acc += (double)a[(int64_t)i * k + p] *
                       (trans_b ? b[(int64_t)j * k + p] : b[(int64_t)p * m + j]);
            int64_t idx = (int64_t)i * m + j;
            if (accumulate)
                c[idx] += (float)acc;
            else
                c[idx] = (float)acc;
        }
}

}  // namespace serial

}  // namespace aseg::kernels
