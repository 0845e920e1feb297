#include "pgcn/optim.hpp"

#include <cmath>

namespace pgcn {

void init_trunc_normal(Tensor& t, Rng& rng, float sigma) {
    float* p = t.data();
    const int64_t n = t.size();
    for (int64_t i = 0; i < n; ++i) p[i] = rng.truncated_normal(sigma);
}

void init_fill(Tensor& t, float v) {
    float* p = t.data();
    const int64_t n = t.size();
    for (int64_t i = 0; i < n; ++i) p[i] = v;
}

Adam::Adam(ParamList params, float lr, float beta1, float beta2, float eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const NamedTensor& p : params_) {
        m_.emplace_back(static_cast<size_t>(p.tensor.size()), 0.0f);
        v_.emplace_back(static_cast<size_t>(p.tensor.size()), 0.0f);
    }
}

void Adam::step() {
    // Validate every gradient before touching any parameter or moment.
    for (const NamedTensor& p : params_) {
        if (!p.tensor.has_grad()) continue;
        for (float g : p.tensor.grad())
            if (!std::isfinite(g))
                throw NumericError("non-finite gradient in parameter '" + p.name + "'");
    }
    ++t_;
    const float bc1 = 1.0f - std::pow(beta1_, static_cast<float>(t_));
    const float bc2 = 1.0f - std::pow(beta2_, static_cast<float>(t_));
    for (size_t k = 0; k < params_.size(); ++k) {
        Tensor& t = params_[k].tensor;
        if (!t.has_grad()) continue;  // parameter off the loss path this step
        const std::vector<float>& g = t.grad();
        float* w = t.data();
        float* m = m_[k].data();
        float* v = v_[k].data();
        const int64_t n = t.size();
        for (int64_t i = 0; i < n; ++i) {
            m[i] = beta1_ * m[i] + (1.0f - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0f - beta2_) * g[i] * g[i];
            const float mhat = m[i] / bc1;
            const float vhat = v[i] / bc2;
            w[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

void Adam::zero_grad() {
    for (NamedTensor& p : params_) p.tensor.zero_grad();
}

}  // namespace pgcn
