#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "pgcn/error.hpp"

namespace pgcn {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tape;

struct TensorImpl {
    Shape shape;
    std::shared_ptr<std::vector<float>> data;  // shared between reshape views
    std::vector<float> grad;                   // sized lazily on first use
    bool tracked = false;                      // reachable by some tape node
    bool leaf = false;
    Tape* tape = nullptr;

    // Zero-initialized gradient buffer, allocated on demand.
    std::vector<float>& grad_ref() {
        if (grad.empty()) grad.assign(data->size(), 0.0f);
        return grad;
    }
};

// Dense row-major float32 tensor with value semantics over a shared buffer.
// Copying a Tensor aliases the storage; clone() makes it private.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, std::vector<float> values);

    static Tensor scalar(float v) { return Tensor(Shape{1}, std::vector<float>{v}); }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int ndim() const { return static_cast<int>(impl_->shape.size()); }
    int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
    int64_t size() const { return static_cast<int64_t>(impl_->data->size()); }

    float* data() { return impl_->data->data(); }
    const float* data() const { return impl_->data->data(); }
    std::vector<float>& values() { return *impl_->data; }
    const std::vector<float>& values() const { return *impl_->data; }

    float item() const;
    float at(int64_t i) const { return (*impl_->data)[static_cast<size_t>(i)]; }

    bool tracked() const { return impl_ && impl_->tracked; }
    Tensor& set_requires_grad(bool on = true);

    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    const std::vector<float>& grad() const;
    std::vector<float>& grad_ref() { return impl_->grad_ref(); }
    void zero_grad();

    // Same storage, detached from any graph.
    Tensor detached() const;
    // Deep copy, untracked.
    Tensor clone() const;

    std::shared_ptr<TensorImpl> impl() const { return impl_; }

    bool all_finite() const;

private:
    std::shared_ptr<TensorImpl> impl_;
};

// Reverse-mode tape. Constructing one makes it the active recorder on this
// thread (stack discipline); ops record while any input is tracked. A tape is
// confined to the thread that built it.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active();

    void record(std::shared_ptr<TensorImpl> out, std::function<void()> backward_fn);
    size_t node_count() const { return nodes_.size(); }

    // Seeds d(loss)/d(loss)=1 and sweeps the tape once in reverse order.
    void run_backward(const Tensor& loss);

private:
    struct Node {
        std::shared_ptr<TensorImpl> out;
        std::function<void()> backward;
    };
    std::vector<Node> nodes_;
    Tape* prev_ = nullptr;
};

// Backpropagates from a scalar loss recorded on the active-at-build tape.
void backward(const Tensor& loss);

}  // namespace pgcn
