#pragma once

#include <string>
#include <vector>

#include "pgcn/random.hpp"
#include "pgcn/tensor.hpp"

namespace pgcn {

// A tensor with a stable name, used by the optimizer and the checkpoint
// format. Names are dotted paths ("enc1.stage2.block0.attn.qkv.weight").
struct NamedTensor {
    std::string name;
    Tensor tensor;
};

using ParamList = std::vector<NamedTensor>;

// Fill with a two-sigma-truncated normal draw, the init used for every
// learnable weight matrix and kernel.
void init_trunc_normal(Tensor& t, Rng& rng, float sigma = 0.02f);
void init_fill(Tensor& t, float v);

// Adam with bias correction. step() first validates that every gradient is
// finite and only then mutates anything, so a poisoned step leaves the
// parameters untouched.
class Adam {
public:
    explicit Adam(ParamList params, float lr, float beta1 = 0.9f, float beta2 = 0.999f,
                  float eps = 1e-8f);

    void step();
    void zero_grad();
    int64_t steps_taken() const { return t_; }
    float lr() const { return lr_; }
    void set_lr(float lr) { lr_ = lr; }

private:
    ParamList params_;
    std::vector<std::vector<float>> m_, v_;
    float lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

}  // namespace pgcn
