#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "percep_tl/autodiff/tensor.hpp"

namespace percep::ad {

// Binary elementwise ops accept equal shapes, or a right operand whose shape
// equals the trailing dims of the left operand (broadcast over leading dims).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);

// [m,k] x [k,n] -> [m,n], or batched [b,m,k] x [b,k,n] -> [b,m,n].
Tensor matmul(const Tensor& a, const Tensor& b);

// x [N,C,H,W], weight [O,C,kh,kw], optional bias [O]; stride 1, zero padding.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t padding);

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor log(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);
// Gradient at 0 is taken as 0 (subgradient convention).
Tensor sqrt(const Tensor& a);

// Along the last axis, max-subtracted.
Tensor softmax(const Tensor& a);
Tensor log_softmax(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, std::size_t axis);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, std::size_t axis);

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, std::span<const std::size_t> order);
// Elements [begin, end) along an axis.
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
// out[i] = a[i, index[i]] for a of shape [N,C].
Tensor pick(const Tensor& a, std::span<const std::size_t> index);

enum class OpKind {
    matmul,
    conv2d,
    add,
    mul,
    relu,
    softmax,
    log,
    sum,
    mean,
    abs,
    square,
    sqrt,
    sigmoid,
    concat,
    reshape,
};

std::string_view to_string(OpKind kind);

struct OpAttrs {
    // Reduction/concat axis; unset means "all" for sum/mean and 0 for concat.
    std::ptrdiff_t axis = -1;
    Shape shape;                // reshape target
    std::size_t padding = 0;    // conv2d
    std::size_t stride = 1;     // conv2d, only 1 supported
};

// Uniform entry point over the basic op set. conv2d takes (x, weight[, bias]).
Tensor forward_op(OpKind kind, std::span<const Tensor> inputs, const OpAttrs& attrs = {});

}  // namespace percep::ad
