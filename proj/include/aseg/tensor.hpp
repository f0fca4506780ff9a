#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace aseg {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int e : s) n *= e;
    return n;
}

std::string shape_str(const Shape& s);

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TensorImpl;
using TensorPtr = std::shared_ptr<TensorImpl>;

struct TensorImpl {
    Shape shape;
    std::vector<float> data;
    bool requires_grad = false;
    std::vector<float> grad;  // empty until touched
    std::vector<TensorPtr> parents;
    std::function<void(TensorImpl&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
    }
};

// Thread-local switch; evaluation runs with recording off.
struct GradMode {
    static bool enabled();
    static void set(bool on);
};

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(GradMode::enabled()) { GradMode::set(false); }
    ~NoGradGuard() { GradMode::set(prev); }
};

// Value-semantic handle to a tensor node. Copies share storage; use clone()
// for a deep copy.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<float> data, bool requires_grad = false);
    static Tensor scalar(float v, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int dim(int i) const { return impl_->shape[i]; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    int64_t size() const { return static_cast<int64_t>(impl_->data.size()); }

    float* data() { return impl_->data.data(); }
    const float* data() const { return impl_->data.data(); }
    std::vector<float>& vec() { return impl_->data; }
    const std::vector<float>& vec() const { return impl_->data; }
    float item() const;

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool rg) { impl_->requires_grad = rg; }
    std::vector<float>& grad() {
        impl_->ensure_grad();
        return impl_->grad;
    }

    Tensor clone() const;
    Tensor detach() const;  // same data buffer copy, no graph edges

    // Reverse sweep from a scalar; accumulates into .grad of reachable nodes.
    void backward() const;
    void zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0f); }

    bool all_finite() const;

    TensorPtr impl() const { return impl_; }
    static Tensor wrap(TensorPtr p) {
        Tensor t;
        t.impl_ = std::move(p);
        return t;
    }

private:
    TensorPtr impl_;
};

// Named trainable (or frozen) tensor.
struct Parameter {
    std::string name;
    Tensor tensor;
    bool frozen = false;

    Parameter() = default;
    Parameter(std::string n, Tensor t, bool frz = false)
        : name(std::move(n)), tensor(std::move(t)), frozen(frz) {
        tensor.set_requires_grad(!frz);
    }
};

}  // namespace aseg
