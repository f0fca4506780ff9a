#include "aseg/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace aseg {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set(bool on) { g_grad_enabled = on; }

Tensor::Tensor(Shape shape, float fill, bool requires_grad) {
    impl_ = std::make_shared<TensorImpl>();
    impl_->shape = std::move(shape);
    impl_->data.assign(static_cast<size_t>(shape_numel(impl_->shape)), fill);
    impl_->requires_grad = requires_grad;
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data, bool requires_grad) {
    if (static_cast<int64_t>(data.size()) != shape_numel(shape))
        throw ShapeError("from_data: " + shape_str(shape) + " does not hold " +
                         std::to_string(data.size()) + " values");
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(data);
    t.impl_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::scalar(float v, bool requires_grad) {
    return from_data({1}, {v}, requires_grad);
}

float Tensor::item() const {
    if (size() != 1) throw ShapeError("item(): tensor has " + std::to_string(size()) + " elements");
    return impl_->data[0];
}

Tensor Tensor::clone() const {
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl>();
    t.impl_->shape = impl_->shape;
    t.impl_->data = impl_->data;
    t.impl_->requires_grad = impl_->requires_grad;
    return t;
}

Tensor Tensor::detach() const { return clone(); }

bool Tensor::all_finite() const {
    for (float v : impl_->data)
        if (!std::isfinite(v)) return false;
    return true;
}

void Tensor::backward() const {
    if (size() != 1) throw ShapeError("backward(): loss must be scalar");
    // topological order over the parent DAG
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> seen;
    std::vector<std::pair<TensorImpl*, size_t>> stack;
    stack.push_back({impl_.get(), 0});
    seen.insert(impl_.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorImpl* p = node->parents[idx].get();
            ++idx;
            if (!seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    // Interior nodes are transient: reset them so repeated backward calls
    // accumulate only into leaves (parameters / inputs).
    for (TensorImpl* node : order)
        if (node->backward_fn) node->grad.assign(node->data.size(), 0.0f);
    impl_->ensure_grad();
    impl_->grad[0] += 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* node = *it;
        if (node->backward_fn) node->backward_fn(*node);
    }
}

}  // namespace aseg
