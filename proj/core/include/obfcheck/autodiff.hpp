/*
 * Copyright 2026 The obfcheck Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "obfcheck/tensor.hpp"

namespace obfcheck {

enum class OpKind {
  kLeaf,
  kLinear,
  kBiasAdd,
  kConv2d,
  kRelu,
  kAvgPool2,
  kFlatten,
  kAdd,
  kScale,
  kSum,
  kSoftmaxCrossEntropy,
  kCustom,
};

std::string_view op_name(OpKind kind);

/// Handle to a node on a Tape.
struct Var {
  static constexpr std::size_t kInvalid = std::numeric_limits<std::size_t>::max();
  std::size_t id = kInvalid;
  bool valid() const noexcept { return id != kInvalid; }
  friend bool operator==(Var, Var) = default;
};

/// What a node's backward closure sees. `input_grads[i]` is null when input i does not
/// need a gradient; otherwise the closure must accumulate (+=) into it.
template <typename T>
struct BackwardArgs {
  const BasicTensor<T>& grad_out;
  const BasicTensor<T>& output;
  std::span<const BasicTensor<T>* const> inputs;
  std::span<BasicTensor<T>* const> input_grads;
};

/// Reverse-mode tape over dense tensors.
///
/// Nodes are appended in evaluation order, so the node list is already a topological
/// order and backward is a single reverse sweep. A tape records one forward pass; build
/// a fresh tape per evaluation. Every operation checks its output for non-finite values
/// (disable with set_check_finite(false)) and throws NumericError naming the node.
///
/// Instantiated for float (training and attacks) and double (gradient checking).
template <typename T>
class Tape {
 public:
  using TensorT = BasicTensor<T>;
  using BackwardFn = std::function<void(const BackwardArgs<T>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  Var leaf(TensorT value, bool requires_grad = false);

  /// x [B, in] times w [out, in] transposed -> [B, out].
  Var linear(Var x, Var w);
  /// b [C] broadcast along axis 1 of x [B, C, ...].
  Var bias_add(Var x, Var b);
  /// x [B, C, H, W], w [O, C, k, k], stride 1, zero padding -> [B, O, H+2p-k+1, W+2p-k+1].
  Var conv2d(Var x, Var w, std::size_t padding);
  /// max(x, 0); subgradient 0 at 0.
  Var relu(Var x);
  /// 2x2 mean, stride 2, on [B, C, H, W] with even H and W.
  Var avg_pool2(Var x);
  /// [B, ...] -> [B, prod(...)].
  Var flatten(Var x);
  Var add(Var a, Var b);
  Var scale(Var a, T factor);
  /// Sum of all elements -> [1].
  Var sum(Var a);
  /// Mean over the batch of softmax cross-entropy, log-sum-exp stabilized -> [1].
  Var softmax_cross_entropy(Var logits, std::span<const std::size_t> labels);

  /// Arbitrary differentiable node. `backward` must be linear in grad_out.
  Var custom(std::vector<Var> inputs, TensorT output, BackwardFn backward);

  /// Fills gradients for every node that requires one. `loss` must hold one element.
  void backward(Var loss);

  const TensorT& value(Var v) const;
  /// Gradient accumulated by the last backward, or null if none reached this node.
  const TensorT* grad(Var v) const;
  TensorT grad_or_zeros(Var v) const;
  bool requires_grad(Var v) const;
  OpKind kind(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Smallest |input| seen by any ReLU node; +inf without ReLUs. Finite differences
  /// with step h are only meaningful when this exceeds h.
  double relu_margin() const;

  void set_check_finite(bool on) noexcept { check_finite_ = on; }

 private:
  struct Node {
    OpKind kind;
    std::vector<std::size_t> inputs;
    TensorT value;
    std::optional<TensorT> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  const Node& node(Var v, std::string_view op) const;
  Var push(OpKind kind, std::vector<std::size_t> inputs, TensorT value, BackwardFn backward);
  std::string describe(std::size_t id, OpKind kind) const;

  std::vector<Node> nodes_;
  bool check_finite_ = true;
};

extern template class Tape<float>;
extern template class Tape<double>;

/// Softmax cross-entropy of a single example; convenience over softmax_cross_entropy.
template <typename T>
Var loss_ce(Tape<T>& tape, Var logits, std::size_t label) {
  const std::size_t labels[1] = {label};
  return tape.softmax_cross_entropy(logits, labels);
}

}  // namespace obfcheck
