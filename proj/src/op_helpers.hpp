#pragma once

#include "pgcn/tensor.hpp"

namespace pgcn {
namespace detail {

inline bool recording(std::initializer_list<const Tensor*> ins) {
    if (!Tape::active()) return false;
    for (const Tensor* t : ins)
        if (t->tracked()) return true;
    return false;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shapes differ, " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
}

inline int64_t numel_range(const Shape& s, size_t from, size_t to) {
    int64_t n = 1;
    for (size_t i = from; i < to; ++i) n *= s[i];
    return n;
}

inline int normalize_axis(int axis, int ndim) {
    if (axis < 0) axis += ndim;
    if (axis < 0 || axis >= ndim) throw ContractError("axis out of range");
    return axis;
}

}  // namespace detail
}  // namespace pgcn
