// Timing comparison of the OpenMP kernels against the serial references.

#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#include <omp.h>

#include "aseg/kernels.hpp"
#include "aseg/rng.hpp"

using namespace aseg;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
    fn();  // warm-up
    auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

std::vector<float> randv(size_t n, Rng& rng) {
    std::vector<float> v(n);
    for (auto& x : v) x = (float)rng.uniform(-1.0, 1.0);
    return v;
}

void row(const char* name, double serial_ms, double parallel_ms) {
    std::printf("%-28s %10.3f %10.3f %8.2fx\n", name, serial_ms, parallel_ms,
                serial_ms / parallel_ms);
}

}  // namespace

int main() {
    Rng rng(42);
    const int reps = 5;
    std::printf("threads: %d\n\n", omp_get_max_threads());
    std::printf("%-28s %10s %10s %9s\n", "kernel", "serial ms", "omp ms", "speedup");

    {
        auto d = kernels::ConvDims::conv(8, 32, 64, 64, 32, 3, 3, 1, 1);
        auto x = randv((size_t)d.batch * d.cin * d.h * d.w, rng);
        auto w = randv((size_t)d.cout * d.cin * d.kh * d.kw, rng);
        auto b = randv(d.cout, rng);
        std::vector<float> y((size_t)d.batch * d.cout * d.ho * d.wo);
        double s = time_ms([&] { kernels::serial::conv2d_forward(x.data(), w.data(), b.data(), y.data(), d); }, reps);
        double p = time_ms([&] { kernels::conv2d_forward(x.data(), w.data(), b.data(), y.data(), d); }, reps);
        row("conv2d 8x32x64x64 k3", s, p);
    }
    {
        auto d = kernels::ConvDims::convt(8, 32, 32, 32, 16, 2, 2, 2);
        auto x = randv((size_t)d.batch * d.cin * d.h * d.w, rng);
        auto w = randv((size_t)d.cin * d.cout * d.kh * d.kw, rng);
        auto b = randv(d.cout, rng);
        std::vector<float> y((size_t)d.batch * d.cout * d.ho * d.wo);
        double s = time_ms([&] { kernels::serial::convt2d_forward(x.data(), w.data(), b.data(), y.data(), d); }, reps);
        double p = time_ms([&] { kernels::convt2d_forward(x.data(), w.data(), b.data(), y.data(), d); }, reps);
        row("convt2d 8x32x32x32 k2s2", s, p);
    }
    {
        const int n = 512, k = 512, m = 512;
        auto a = randv((size_t)n * k, rng);
        auto b = randv((size_t)k * m, rng);
        std::vector<float> c((size_t)n * m);
        double s = time_ms([&] { kernels::serial::matmul(a.data(), b.data(), c.data(), n, k, m); }, reps);
        double p = time_ms([&] { kernels::matmul(a.data(), b.data(), c.data(), n, k, m); }, reps);
        row("matmul 512^3", s, p);
    }
    return 0;
}
