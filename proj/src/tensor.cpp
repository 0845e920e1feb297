#include "pgcn/tensor.hpp"

#include <cmath>
#include <sstream>

namespace pgcn {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << "]";
    return os.str();
}

static void check_shape(const Shape& s) {
    for (int d : s) {
        if (d <= 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(s));
    }
}

Tensor::Tensor(Shape shape, float fill) {
    check_shape(shape);
    impl_ = std::make_shared<TensorImpl>();
    impl_->data = std::make_shared<std::vector<float>>(static_cast<size_t>(shape_numel(shape)), fill);
    impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<float> values) {
    check_shape(shape);
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
        throw DimensionError("value count " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
    impl_ = std::make_shared<TensorImpl>();
    impl_->data = std::make_shared<std::vector<float>>(std::move(values));
    impl_->shape = std::move(shape);
}

float Tensor::item() const {
    if (size() != 1) throw ContractError("item() requires a one-element tensor, got " + shape_str(shape()));
    return (*impl_->data)[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
    impl_->tracked = on;
    impl_->leaf = on;
    return *this;
}

const std::vector<float>& Tensor::grad() const {
    static const std::vector<float> kEmpty;
    return impl_->grad.empty() ? kEmpty : impl_->grad;
}

void Tensor::zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

Tensor Tensor::detached() const {
    Tensor t;
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = impl_->shape;
    impl->data = impl_->data;
    t.impl_ = std::move(impl);
    return t;
}

Tensor Tensor::clone() const {
    return Tensor(impl_->shape, *impl_->data);
}

bool Tensor::all_finite() const {
    for (float v : *impl_->data)
        if (!std::isfinite(v)) return false;
    return true;
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Tape() {
    prev_ = g_active_tape;
    g_active_tape = this;
}

Tape::~Tape() {
    g_active_tape = prev_;
}

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::shared_ptr<TensorImpl> out, std::function<void()> backward_fn) {
    out->tracked = true;
    out->tape = this;
    nodes_.push_back(Node{std::move(out), std::move(backward_fn)});
}

void Tape::run_backward(const Tensor& loss) {
    if (loss.size() != 1)
        throw ContractError("backward requires a scalar loss, got " + shape_str(loss.shape()));
    auto impl = loss.impl();
    impl->grad_ref()[0] = 1.0f;
    // Creation order is a topological order of the forward graph, so one
    // reverse sweep visits every node exactly once.
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (it->out->grad.empty()) continue;  // not on any path to the loss
        it->backward();
    }
}

void backward(const Tensor& loss) {
    if (!loss.tracked() || loss.impl()->tape == nullptr)
        throw ContractError("backward requires a loss recorded on an active tape");
    loss.impl()->tape->run_backward(loss);
}

}  // namespace pgcn
