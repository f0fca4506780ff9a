#include "aseg/ops.hpp"

#include <cmath>

#include "aseg/kernels.hpp"

namespace aseg::ops {

namespace {

Tensor make_node(Shape shape, std::vector<Tensor> parents,
                 std::function<void(TensorImpl&)> fn) {
    Tensor out(std::move(shape));
    bool needs = false;
    for (const auto& p : parents) needs = needs || p.requires_grad();
    if (GradMode::enabled() && needs) {
        out.impl()->requires_grad = true;
        for (const auto& p : parents) out.impl()->parents.push_back(p.impl());
        out.impl()->backward_fn = std::move(fn);
    }
    return out;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

void accum(TensorImpl& dst, const std::vector<float>& g) {
    dst.ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) dst.grad[i] += g[i];
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    auto ai = a.impl(), bi = b.impl();
    Tensor out = make_node(a.shape(), {a, b}, [ai, bi](TensorImpl& self) {
        if (ai->requires_grad) accum(*ai, self.grad);
        if (bi->requires_grad) accum(*bi, self.grad);
    });
    for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    auto ai = a.impl(), bi = b.impl();
    Tensor out = make_node(a.shape(), {a, b}, [ai, bi](TensorImpl& self) {
        if (ai->requires_grad) accum(*ai, self.grad);
        if (bi->requires_grad) {
            bi->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) bi->grad[i] -= self.grad[i];
        }
    });
    for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    auto ai = a.impl(), bi = b.impl();
    Tensor out = make_node(a.shape(), {a, b}, [ai, bi](TensorImpl& self) {
        if (ai->requires_grad) {
            ai->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                ai->grad[i] += self.grad[i] * bi->data[i];
        }
        if (bi->requires_grad) {
            bi->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                bi->grad[i] += self.grad[i] * ai->data[i];
        }
    });
    for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "div");
    auto ai = a.impl(), bi = b.impl();
    Tensor out = make_node(a.shape(), {a, b}, [ai, bi](TensorImpl& self) {
        if (ai->requires_grad) {
            ai->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                ai->grad[i] += self.grad[i] / bi->data[i];
        }
        if (bi->requires_grad) {
            bi->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                bi->grad[i] -= self.grad[i] * ai->data[i] / (bi->data[i] * bi->data[i]);
        }
    });
    for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] / b.data()[i];
    return out;
}

Tensor add_scalar(const Tensor& a, float s) {
    auto ai = a.impl();
    Tensor out = make_node(a.shape(), {a}, [ai](TensorImpl& self) {
        if (ai->requires_grad) accum(*ai, self.grad);
    });
    for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + s;
    return out;
}

Tensor mul_scalar(const Tensor& a, float s) {
    auto ai = a.impl();
    Tensor out = make_node(a.shape(), {a}, [ai, s](TensorImpl& self) {
        if (ai->requires_grad) {
            ai->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) ai->grad[i] += self.grad[i] * s;
        }
    });
    for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * s;
    return out;
}

Tensor relu(const Tensor& a) {
    auto ai = a.impl();
    Tensor out = make_node(a.shape(), {a}, [ai](TensorImpl& self) {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        // subgradient at 0 taken as 0
        for (size_t i = 0; i < self.grad.size(); ++i)
            if (ai->data[i] > 0.0f) ai->grad[i] += self.grad[i];
    });
    for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] > 0.0f ? a.data()[i] : 0.0f;
    return out;
}

Tensor sigmoid(const Tensor& a) {
    auto ai = a.impl();
    Tensor out = make_node(a.shape(), {a}, [ai](TensorImpl& self) {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            float y = self.data[i];
            ai->grad[i] += self.grad[i] * y * (1.0f - y);
        }
    });
    for (int64_t i = 0; i < a.size(); ++i)
        out.data()[i] = 1.0f / (1.0f + std::exp(-a.data()[i]));
    return out;
}

Tensor log(const Tensor& a) {
    auto ai = a.impl();
    Tensor out = make_node(a.shape(), {a}, [ai](TensorImpl& self) {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) ai->grad[i] += self.grad[i] / ai->data[i];
    });
    for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = std::log(a.data()[i]);
    return out;
}

Tensor abs(const Tensor& a) {
    auto ai = a.impl();
    Tensor out = make_node(a.shape(), {a}, [ai](TensorImpl& self) {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            float x = ai->data[i];
            if (x > 0.0f)
                ai->grad[i] += self.grad[i];
            else if (x < 0.0f)
                ai->grad[i] -= self.grad[i];
        }
    });
    for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = std::fabs(a.data()[i]);
    return out;
}

Tensor square(const Tensor& a) {
    auto ai = a.impl();
    Tensor out = make_node(a.shape(), {a}, [ai](TensorImpl& self) {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
            ai->grad[i] += self.grad[i] * 2.0f * ai->data[i];
    });
    for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * a.data()[i];
    return out;
}

Tensor clamp(const Tensor& a, float lo, float hi) {
    auto ai = a.impl();
    Tensor out = make_node(a.shape(), {a}, [ai, lo, hi](TensorImpl& self) {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            float x = ai->data[i];
            if (x > lo && x < hi) ai->grad[i] += self.grad[i];
        }
    });
    for (int64_t i = 0; i < a.size(); ++i)
        out.data()[i] = std::fmin(std::fmax(a.data()[i], lo), hi);
    return out;
}

Tensor sum(const Tensor& a) {
    auto ai = a.impl();
    Tensor out = make_node({1}, {a}, [ai](TensorImpl& self) {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        for (size_t i = 0; i < ai->grad.size(); ++i) ai->grad[i] += self.grad[0];
    });
    double acc = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) acc += a.data()[i];
    out.data()[0] = (float)acc;
    return out;
}

Tensor mean(const Tensor& a) {
    const float inv = 1.0f / (float)a.size();
    auto ai = a.impl();
    Tensor out = make_node({1}, {a}, [ai, inv](TensorImpl& self) {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        for (size_t i = 0; i < ai->grad.size(); ++i) ai->grad[i] += self.grad[0] * inv;
    });
    double acc = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) acc += a.data()[i];
    out.data()[0] = (float)(acc / a.size());
    return out;
}

Tensor sum_hw(const Tensor& a) {
    if (a.rank() != 4) throw ShapeError("sum_hw: " + shape_str(a.shape()));
    const int B = a.dim(0), C = a.dim(1), HW = a.dim(2) * a.dim(3);
    auto ai = a.impl();
    Tensor out = make_node({B, C}, {a}, [ai, B, C, HW](TensorImpl& self) {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        for (int n = 0; n < B; ++n)
            for (int c = 0; c < C; ++c) {
                float g = self.grad[(int64_t)n * C + c];
                float* xg = ai->grad.data() + ((int64_t)n * C + c) * HW;
                for (int i = 0; i < HW; ++i) xg[i] += g;
            }
    });
    for (int n = 0; n < B; ++n)
        for (int c = 0; c < C; ++c) {
            double acc = 0.0;
            const float* xp = a.data() + ((int64_t)n * C + c) * HW;
            for (int i = 0; i < HW; ++i) acc += xp[i];
            out.data()[(int64_t)n * C + c] = (float)acc;
        }
    return out;
}

Tensor add_bias_channel(const Tensor& x, const Tensor& b) {
    if (x.rank() != 4 || b.rank() != 1 || b.dim(0) != x.dim(1))
        throw ShapeError("add_bias_channel: " + shape_str(x.shape()) + " + " +
                         shape_str(b.shape()));
    const int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    auto xi = x.impl(), bi = b.impl();
    Tensor out = make_node(x.shape(), {x, b}, [xi, bi, B, C, HW](TensorImpl& self) {
        if (xi->requires_grad) accum(*xi, self.grad);
        if (bi->requires_grad) {
            bi->ensure_grad();
            for (int c = 0; c < C; ++c) {
                double acc = 0.0;
                for (int n = 0; n < B; ++n) {
                    const float* g = self.grad.data() + ((int64_t)n * C + c) * HW;
                    for (int i = 0; i < HW; ++i) acc += g[i];
                }
                bi->grad[c] += (float)acc;
            }
        }
    });
    for (int n = 0; n < B; ++n)
        for (int c = 0; c < C; ++c) {
            const float bv = b.data()[c];
            float* o = out.data() + ((int64_t)n * C + c) * HW;
            const float* xp = x.data() + ((int64_t)n * C + c) * HW;
            for (int i = 0; i < HW; ++i) o[i] = xp[i] + bv;
        }
    return out;
}

Tensor add_bias_feature(const Tensor& x, const Tensor& b) {
    if (x.rank() != 2 || b.rank() != 1 || b.dim(0) != x.dim(1))
        throw ShapeError("add_bias_feature: " + shape_str(x.shape()) + " + " +
                         shape_str(b.shape()));
    const int B = x.dim(0), E = x.dim(1);
    auto xi = x.impl(), bi = b.impl();
    Tensor out = make_node(x.shape(), {x, b}, [xi, bi, B, E](TensorImpl& self) {
        if (xi->requires_grad) accum(*xi, self.grad);
        if (bi->requires_grad) {
            bi->ensure_grad();
            for (int e = 0; e < E; ++e) {
                double acc = 0.0;
                for (int n = 0; n < B; ++n) acc += self.grad[(int64_t)n * E + e];
                bi->grad[e] += (float)acc;
            }
        }
    });
    for (int n = 0; n < B; ++n)
        for (int e = 0; e < E; ++e)
            out.data()[(int64_t)n * E + e] = x.data()[(int64_t)n * E + e] + b.data()[e];
    return out;
}

Tensor add_plane(const Tensor& x, const Tensor& p) {
    if (x.rank() != 4 || p.rank() != 4 || p.dim(1) != 1 || p.dim(0) != x.dim(0) ||
        p.dim(2) != x.dim(2) || p.dim(3) != x.dim(3))
        throw ShapeError("add_plane: " + shape_str(x.shape()) + " + " + shape_str(p.shape()));
    const int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    auto xi = x.impl(), pi = p.impl();
    Tensor out = make_node(x.shape(), {x, p}, [xi, pi, B, C, HW](TensorImpl& self) {
        if (xi->requires_grad) accum(*xi, self.grad);
        if (pi->requires_grad) {
            pi->ensure_grad();
            for (int n = 0; n < B; ++n)
                for (int i = 0; i < HW; ++i) {
                    double acc = 0.0;
                    for (int c = 0; c < C; ++c)
                        acc += self.grad[((int64_t)n * C + c) * HW + i];
                    pi->grad[(int64_t)n * HW + i] += (float)acc;
                }
        }
    });
    for (int n = 0; n < B; ++n)
        for (int c = 0; c < C; ++c)
            for (int i = 0; i < HW; ++i)
                out.data()[((int64_t)n * C + c) * HW + i] =
                    x.data()[((int64_t)n * C + c) * HW + i] + p.data()[(int64_t)n * HW + i];
    return out;
}

Tensor scale_channels(const Tensor& x, const Tensor& s) {
    if (x.rank() != 4 || s.rank() != 4 || s.dim(0) != x.dim(0) || s.dim(1) != x.dim(1) ||
        s.dim(2) != 1 || s.dim(3) != 1)
        throw ShapeError("scale_channels: " + shape_str(x.shape()) + " * " +
                         shape_str(s.shape()));
    const int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    auto xi = x.impl(), si = s.impl();
    Tensor out = make_node(x.shape(), {x, s}, [xi, si, B, C, HW](TensorImpl& self) {
        if (xi->requires_grad) {
            xi->ensure_grad();
            for (int n = 0; n < B; ++n)
                for (int c = 0; c < C; ++c) {
                    const float sv = si->data[(int64_t)n * C + c];
                    const float* g = self.grad.data() + ((int64_t)n * C + c) * HW;
                    float* xg = xi->grad.data() + ((int64_t)n * C + c) * HW;
                    for (int i = 0; i < HW; ++i) xg[i] += g[i] * sv;
                }
        }
        if (si->requires_grad) {
            si->ensure_grad();
            for (int n = 0; n < B; ++n)
                for (int c = 0; c < C; ++c) {
                    double acc = 0.0;
                    const float* g = self.grad.data() + ((int64_t)n * C + c) * HW;
                    const float* xp = xi->data.data() + ((int64_t)n * C + c) * HW;
                    for (int i = 0; i < HW; ++i) acc += (double)g[i] * xp[i];
                    si->grad[(int64_t)n * C + c] += (float)acc;
                }
        }
    });
    for (int n = 0; n < B; ++n)
        for (int c = 0; c < C; ++c) {
            const float sv = s.data()[(int64_t)n * C + c];
            float* o = out.data() + ((int64_t)n * C + c) * HW;
            const float* xp = x.data() + ((int64_t)n * C + c) * HW;
            for (int i = 0; i < HW; ++i) o[i] = xp[i] * sv;
        }
    return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.size())
        throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
    auto ai = a.impl();
    Tensor out = make_node(std::move(shape), {a}, [ai](TensorImpl& self) {
        if (ai->requires_grad) accum(*ai, self.grad);
    });
    out.vec() = a.vec();
    return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.rank() != 4 || b.rank() != 4 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) ||
        a.dim(3) != b.dim(3))
        throw ShapeError("concat_channels: " + shape_str(a.shape()) + " | " +
                         shape_str(b.shape()));
    const int B = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), HW = a.dim(2) * a.dim(3);
    auto ai = a.impl(), bi = b.impl();
    Tensor out = make_node({B, Ca + Cb, a.dim(2), a.dim(3)}, {a, b},
                           [ai, bi, B, Ca, Cb, HW](TensorImpl& self) {
        const int C = Ca + Cb;
        if (ai->requires_grad) {
            ai->ensure_grad();
            for (int n = 0; n < B; ++n)
                for (int c = 0; c < Ca; ++c)
                    for (int i = 0; i < HW; ++i)
                        ai->grad[((int64_t)n * Ca + c) * HW + i] +=
                            self.grad[((int64_t)n * C + c) * HW + i];
        }
        if (bi->requires_grad) {
            bi->ensure_grad();
            for (int n = 0; n < B; ++n)
                for (int c = 0; c < Cb; ++c)
                    for (int i = 0; i < HW; ++i)
                        bi->grad[((int64_t)n * Cb + c) * HW + i] +=
                            self.grad[((int64_t)n * C + Ca + c) * HW + i];
        }
    });
    const int C = Ca + Cb;
    for (int n = 0; n < B; ++n) {
        for (int c = 0; c < Ca; ++c)
            for (int i = 0; i < HW; ++i)
                out.data()[((int64_t)n * C + c) * HW + i] = a.data()[((int64_t)n * Ca + c) * HW + i];
        for (int c = 0; c < Cb; ++c)
            for (int i = 0; i < HW; ++i)
                out.data()[((int64_t)n * C + Ca + c) * HW + i] =
                    b.data()[((int64_t)n * Cb + c) * HW + i];
    }
    return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0))
        throw ShapeError("linear: " + shape_str(x.shape()) + " * " + shape_str(w.shape()));
    if (b.defined() && (b.rank() != 1 || b.dim(0) != w.dim(1)))
        throw ShapeError("linear: bias " + shape_str(b.shape()));
    const int B = x.dim(0), D = x.dim(1), E = w.dim(1);
    auto xi = x.impl(), wi = w.impl();
    TensorPtr bi = b.defined() ? b.impl() : nullptr;
    std::vector<Tensor> parents = {x, w};
    if (b.defined()) parents.push_back(b);
    Tensor out = make_node({B, E}, std::move(parents), [xi, wi, bi, B, D, E](TensorImpl& self) {
        if (xi->requires_grad) {
            xi->ensure_grad();
            // gx = gy * w^T, reading w [D,E] transposed
            kernels::matmul(self.grad.data(), wi->data.data(), xi->grad.data(), B, E, D,
                            true, true);
        }
        if (wi->requires_grad) {
            wi->ensure_grad();
            // gw[d,e] = sum_n x[n,d] * gy[n,e]
            for (int dd = 0; dd < D; ++dd)
                for (int e = 0; e < E; ++e) {
                    double acc = 0.0;
                    for (int n = 0; n < B; ++n)
                        acc += (double)xi->data[(int64_t)n * D + dd] *
                               self.grad[(int64_t)n * E + e];
                    wi->grad[(int64_t)dd * E + e] += (float)acc;
                }
        }
        if (bi && bi->requires_grad) {
            bi->ensure_grad();
            for (int e = 0; e < E; ++e) {
                double acc = 0.0;
                for (int n = 0; n < B; ++n) acc += self.grad[(int64_t)n * E + e];
                bi->grad[e] += (float)acc;
            }
        }
    });
    kernels::matmul(x.data(), w.data(), out.data(), B, D, E);
    if (b.defined())
        for (int n = 0; n < B; ++n)
            for (int e = 0; e < E; ++e) out.data()[(int64_t)n * E + e] += b.data()[e];
    return out;
}

Tensor bmm(const Tensor& a, const Tensor& b, bool trans_b) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0))
        throw ShapeError("bmm: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const int B = a.dim(0), N = a.dim(1), K = a.dim(2);
    const int M = trans_b ? b.dim(1) : b.dim(2);
    if ((trans_b ? b.dim(2) : b.dim(1)) != K)
        throw ShapeError("bmm: inner dims " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    auto ai = a.impl(), bi = b.impl();
    Tensor out = make_node({B, N, M}, {a, b}, [ai, bi, B, N, K, M, trans_b](TensorImpl& self) {
        for (int n = 0; n < B; ++n) {
            const float* gy = self.grad.data() + (int64_t)n * N * M;
            const float* ap = ai->data.data() + (int64_t)n * N * K;
            const float* bp = bi->data.data() + (int64_t)n * (trans_b ? M * K : K * M);
            if (ai->requires_grad) {
                ai->ensure_grad();
                float* ga = ai->grad.data() + (int64_t)n * N * K;
                // ga = gy * b^T  (if trans_b, b is [M,K] so ga = gy * b)
                if (trans_b)
                    kernels::matmul(gy, bp, ga, N, M, K, false, true);
                else
                    kernels::matmul(gy, bp, ga, N, M, K, true, true);
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                float* gb = bi->grad.data() + (int64_t)n * (trans_b ? M * K : K * M);
                if (trans_b) {
                    // gb[m,k] = sum_i gy[i,m] * a[i,k]
                    for (int m = 0; m < M; ++m)
                        for (int k2 = 0; k2 < K; ++k2) {
                            double acc = 0.0;
                            for (int i = 0; i < N; ++i)
                                acc += (double)gy[(int64_t)i * M + m] * ap[(int64_t)i * K + k2];
                            gb[(int64_t)m * K + k2] += (float)acc;
                        }
                } else {
                    // gb[k,m] = sum_i a[i,k] * gy[i,m]
                    for (int k2 = 0; k2 < K; ++k2)
                        for (int m = 0; m < M; ++m) {
                            double acc = 0.0;
                            for (int i = 0; i < N; ++i)
                                acc += (double)ap[(int64_t)i * K + k2] * gy[(int64_t)i * M + m];
                            gb[(int64_t)k2 * M + m] += (float)acc;
                        }
                }
            }
        }
    });
    for (int n = 0; n < B; ++n)
        kernels::matmul(a.data() + (int64_t)n * N * K,
                        b.data() + (int64_t)n * (trans_b ? M * K : K * M),
                        out.data() + (int64_t)n * N * M, N, K, M, trans_b);
    return out;
}

Tensor softmax_lastdim(const Tensor& a) {
    const int D = a.dim(a.rank() - 1);
    const int64_t rows = a.size() / D;
    auto ai = a.impl();
    Tensor out = make_node(a.shape(), {a}, [ai, D, rows](TensorImpl& self) {
        if (!ai->requires_grad) return;
        ai->ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
            const float* y = self.data.data() + r * D;
            const float* g = self.grad.data() + r * D;
            double dot = 0.0;
            for (int i = 0; i < D; ++i) dot += (double)y[i] * g[i];
            float* ga = ai->grad.data() + r * D;
            for (int i = 0; i < D; ++i) ga[i] += y[i] * (g[i] - (float)dot);
        }
    });
    for (int64_t r = 0; r < rows; ++r) {
        const float* x = a.data() + r * D;
        float* y = out.data() + r * D;
        float mx = x[0];
        for (int i = 1; i < D; ++i) mx = std::fmax(mx, x[i]);
        double z = 0.0;
        for (int i = 0; i < D; ++i) z += std::exp((double)x[i] - mx);
        for (int i = 0; i < D; ++i) y[i] = (float)(std::exp((double)x[i] - mx) / z);
    }
    return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding) {
    if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(1))
        throw ShapeError("conv2d: " + shape_str(x.shape()) + " * " + shape_str(w.shape()));
    if (w.dim(2) > x.dim(2) + 2 * padding || w.dim(3) > x.dim(3) + 2 * padding)
        throw ShapeError("conv2d: kernel larger than padded input");
    auto d = kernels::ConvDims::conv(x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0),
                                     w.dim(2), w.dim(3), stride, padding);
    auto xi = x.impl(), wi = w.impl();
    TensorPtr bi = b.defined() ? b.impl() : nullptr;
    std::vector<Tensor> parents = {x, w};
    if (b.defined()) parents.push_back(b);
    Tensor out = make_node({d.batch, d.cout, d.ho, d.wo}, std::move(parents),
                           [xi, wi, bi, d](TensorImpl& self) {
        if (xi->requires_grad) {
            xi->ensure_grad();
            kernels::conv2d_backward_input(self.grad.data(), wi->data.data(),
                                           xi->grad.data(), d);
        }
        if (wi->requires_grad) {
            wi->ensure_grad();
            kernels::conv2d_backward_weight(self.grad.data(), xi->data.data(),
                                            wi->grad.data(), d);
        }
        if (bi && bi->requires_grad) {
            bi->ensure_grad();
            kernels::conv2d_backward_bias(self.grad.data(), bi->grad.data(), d);
        }
    });
    kernels::conv2d_forward(x.data(), w.data(), b.defined() ? b.data() : nullptr,
                            out.data(), d);
    return out;
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride) {
    if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(0))
        throw ShapeError("conv_transpose2d: " + shape_str(x.shape()) + " * " +
                         shape_str(w.shape()));
    auto d = kernels::ConvDims::convt(x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(1),
                                      w.dim(2), w.dim(3), stride);
    auto xi = x.impl(), wi = w.impl();
    TensorPtr bi = b.defined() ? b.impl() : nullptr;
    std::vector<Tensor> parents = {x, w};
    if (b.defined()) parents.push_back(b);
    Tensor out = make_node({d.batch, d.cout, d.ho, d.wo}, std::move(parents),
                           [xi, wi, bi, d](TensorImpl& self) {
        if (xi->requires_grad) {
            xi->ensure_grad();
            kernels::convt2d_backward_input(self.grad.data(), wi->data.data(),
                                            xi->grad.data(), d);
        }
        if (wi->requires_grad) {
            wi->ensure_grad();
            kernels::convt2d_backward_weight(self.grad.data(), xi->data.data(),
                                             wi->grad.data(), d);
        }
        if (bi && bi->requires_grad) {
            bi->ensure_grad();
            kernels::convt2d_backward_bias(self.grad.data(), bi->grad.data(), d);
        }
    });
    kernels::convt2d_forward(x.data(), w.data(), b.defined() ? b.data() : nullptr,
                             out.data(), d);
    return out;
}

Tensor avg_pool2d(const Tensor& x, int factor) {
    if (x.rank() != 4 || x.dim(2) % factor != 0 || x.dim(3) % factor != 0)
        throw ShapeError("avg_pool2d: " + shape_str(x.shape()) + " factor " +
                         std::to_string(factor));
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Ho = H / factor, Wo = W / factor;
    const float inv = 1.0f / (float)(factor * factor);
    auto xi = x.impl();
    Tensor out = make_node({B, C, Ho, Wo}, {x}, [xi, B, C, H, W, Ho, Wo, factor, inv](TensorImpl& self) {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        for (int n = 0; n < B; ++n)
            for (int c = 0; c < C; ++c)
                for (int oh = 0; oh < Ho; ++oh)
                    for (int ow = 0; ow < Wo; ++ow) {
                        float g = self.grad[(((int64_t)n * C + c) * Ho + oh) * Wo + ow] * inv;
                        for (int dh = 0; dh < factor; ++dh)
                            for (int dw = 0; dw < factor; ++dw)
                                xi->grad[(((int64_t)n * C + c) * H + oh * factor + dh) * W +
                                         ow * factor + dw] += g;
                    }
    });
    for (int n = 0; n < B; ++n)
        for (int c = 0; c < C; ++c)
            for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow) {
                    double acc = 0.0;
                    for (int dh = 0; dh < factor; ++dh)
                        for (int dw = 0; dw < factor; ++dw)
                            acc += x.data()[(((int64_t)n * C + c) * H + oh * factor + dh) * W +
                                            ow * factor + dw];
                    out.data()[(((int64_t)n * C + c) * Ho + oh) * Wo + ow] = (float)(acc * inv);
                }
    return out;
}

Tensor adaptive_avg_pool(const Tensor& x) {
    if (x.rank() != 4) throw ShapeError("adaptive_avg_pool: " + shape_str(x.shape()));
    const int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    const float inv = 1.0f / (float)HW;
    auto xi = x.impl();
    Tensor out = make_node({B, C, 1, 1}, {x}, [xi, B, C, HW, inv](TensorImpl& self) {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        for (int n = 0; n < B; ++n)
            for (int c = 0; c < C; ++c) {
                float g = self.grad[(int64_t)n * C + c] * inv;
                float* xg = xi->grad.data() + ((int64_t)n * C + c) * HW;
                for (int i = 0; i < HW; ++i) xg[i] += g;
            }
    });
    for (int n = 0; n < B; ++n)
        for (int c = 0; c < C; ++c) {
            double acc = 0.0;
            const float* xp = x.data() + ((int64_t)n * C + c) * HW;
            for (int i = 0; i < HW; ++i) acc += xp[i];
            out.data()[(int64_t)n * C + c] = (float)(acc * inv);
        }
    return out;
}

Tensor upsample_nearest(const Tensor& x, int factor) {
    if (x.rank() != 4) throw ShapeError("upsample_nearest: " + shape_str(x.shape()));
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Ho = H * factor, Wo = W * factor;
    auto xi = x.impl();
    Tensor out = make_node({B, C, Ho, Wo}, {x}, [xi, B, C, H, W, Ho, Wo, factor](TensorImpl& self) {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        for (int n = 0; n < B; ++n)
            for (int c = 0; c < C; ++c)
                for (int ih = 0; ih < H; ++ih)
                    for (int iw = 0; iw < W; ++iw) {
                        double acc = 0.0;
                        for (int dh = 0; dh < factor; ++dh)
                            for (int dw = 0; dw < factor; ++dw)
                                acc += self.grad[(((int64_t)n * C + c) * Ho + ih * factor + dh) *
                                                     Wo + iw * factor + dw];
                        xi->grad[(((int64_t)n * C + c) * H + ih) * W + iw] += (float)acc;
                    }
    });
    for (int n = 0; n < B; ++n)
        for (int c = 0; c < C; ++c)
            for (int ih = 0; ih < H; ++ih)
                for (int iw = 0; iw < W; ++iw) {
                    float v = x.data()[(((int64_t)n * C + c) * H + ih) * W + iw];
                    for (int dh = 0; dh < factor; ++dh)
                        for (int dw = 0; dw < factor; ++dw)
                            out.data()[(((int64_t)n * C + c) * Ho + ih * factor + dh) * Wo +
                                       iw * factor + dw] = v;
                }
    return out;
}

double check_gradient(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                      double h) {
    Tensor xv = x.clone();
    xv.set_requires_grad(true);
    Tensor y = f(xv);
    if (y.size() != 1) throw ShapeError("check_gradient: f must be scalar-valued");
    y.backward();
    std::vector<float> analytic = xv.grad();

    // normalize by the gradient's largest component: per-component relative
    // error blows up on near-zero entries from float32 forward rounding alone
    double scale = 0.0;
    for (float a : analytic) scale = std::fmax(scale, std::fabs((double)a));

    double max_err = 0.0;
    NoGradGuard ng;
    for (int64_t i = 0; i < xv.size(); ++i) {
        const float orig = xv.data()[i];
        xv.data()[i] = orig + (float)h;
        double fp = f(xv).item();
        xv.data()[i] = orig - (float)h;
        double fm = f(xv).item();
        xv.data()[i] = orig;
        double num = (fp - fm) / (2.0 * h);
        double err = std::fabs((double)analytic[i] - num) / (scale + 1e-8);
        max_err = std::fmax(max_err, err);
    }
    return max_err;
}

}  // namespace aseg::ops
