#pragma once

#include <functional>
#include <deque>
#include <span>
#include <vector>

#include "fnat/spectral.hpp"
#include "fnat/tensor.hpp"

namespace fnat::ad {

class Tape;

// Handle into a tape; cheap to copy.
struct Value {
  int idx = -1;
  bool valid() const { return idx >= 0; }
};

// Records forward values and per-node VJP closures; backward() replays the
// closures in reverse creation order (creation order is topological).
class Tape {
 public:
  struct Node {
    Tensor val;
    Tensor grad;
    bool has_grad = false;
    bool needs_grad = false;
    int param_index = -1;  // leaf bound to a ParamStore slot
    const char* op = "";
    std::function<void(Tape&, const Tensor&)> backward;  // receives this node's grad
  };

  // When set, every op output is checked for non-finite values and the first
  // offender raises NumericError naming the op.
  bool check_finite = false;

  Value push(Tensor val, const char* op, bool needs_grad,
             std::function<void(Tape&, const Tensor&)> backward);
  Value constant(Tensor v) { return push(std::move(v), "constant", false, nullptr); }
  Value leaf(Tensor v, bool needs_grad = true) { return push(std::move(v), "leaf", needs_grad, nullptr); }
  Value param(const Parameter& p);

  const Tensor& val(Value v) const { return nodes_[static_cast<size_t>(v.idx)].val; }
  const Tensor& grad(Value v) const;
  bool needs_grad(Value v) const { return nodes_[static_cast<size_t>(v.idx)].needs_grad; }

  // Accumulates `delta` into a node's gradient (used by VJP closures).
  void accumulate(Value v, const Tensor& delta);
  void accumulate(Value v, Tensor&& delta);

  // Runs reverse-mode from `root` with the given cotangent seed.
  void backward(Value root, Tensor seed);
  void backward_scalar(Value root) { backward(root, Tensor::scalar(1)); }

  // Adds the gradients of param-bound leaves into the given buffer (indexed
  // by ParamStore slot) or directly into the parameters themselves.
  void export_param_grads(std::vector<Tensor>& buffer) const;
  void accumulate_param_grads(ParamStore& store) const;

  size_t node_count() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  std::deque<Node> nodes_;
};

// ---- primitive graph ops ----------------------------------------------------

Value add(Tape& t, Value a, Value b);
Value add_scaled(Tape& t, Value a, Value b, real_t s);  // a + s*b
Value scale(Tape& t, Value a, real_t s);
Value hadamard(Tape& t, Value a, Value b);
Value matmul(Tape& t, Value a, Value b);
Value matmul_nt(Tape& t, Value a, Value b);
Value add_row_bias(Tape& t, Value x, Value bias);
Value add_const(Tape& t, Value x, Tensor c);
Value relu(Tape& t, Value x);
Value softmax_rows(Tape& t, Value x);
Value layer_norm(Tape& t, Value x, Value gain, Value bias, real_t eps);
Value dropout(Tape& t, Value x, double rate, Rng& rng, bool training);
Value slice_cols(Tape& t, Value x, int64_t c0, int64_t c1);
Value concat_cols(Tape& t, std::span<const Value> parts);
Value pick_row(Tape& t, Value x, int64_t r);              // 1 x n
Value mean_rows(Tape& t, Value x, int64_t n_rows);        // mean over rows [0,n_rows) -> 1 x n
Value embed_rows(Tape& t, Value table, const std::vector<int>& ids);

Value fourier_mix(Tape& t, Value x, Value g_real, Value g_imag);
// Concatenates the pre-truncation real and imaginary outputs: T x 2d.
Value fourier_mix_concat(Tape& t, Value x, Value g_real, Value g_imag);

// Summed token cross-entropy over rows where mask==0 (mask==1 rows contribute
// exactly nothing, forward and backward). Optional label smoothing spreads
// `smoothing` uniformly over the vocabulary.
Value cross_entropy_sum(Tape& t, Value logits, const std::vector<int>& gold,
                        const std::vector<uint8_t>& row_masked, double smoothing = 0.0);

// ---- finite-difference verification ------------------------------------------

// Builds f's graph over leaves initialized from `inputs`, then compares the
// reverse-mode gradient of a random scalar projection of the output against
// central finite differences. Returns max over all input coordinates of
// |analytic - numeric| / max(1, |numeric|).
double grad_check(const std::function<Value(Tape&, std::span<const Value>)>& f,
                  const std::vector<Tensor>& inputs, double eps, Rng& rng);

}  // namespace fnat::ad
