#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "fnat/errors.hpp"

namespace fnat {

using Shape = std::vector<int64_t>;

// Dense row-major real tensor. Rank 0 (scalar), 1 and 2 cover everything the
// model needs; values are 64-bit by default (FNAT_REAL32 builds narrow the
// checkpointed math to float for speed runs).
#ifdef FNAT_REAL32
using real_t = float;
#else
using real_t = double;
#endif

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<real_t> data);

  static Tensor scalar(real_t v);
  static Tensor vec(std::vector<real_t> v);
  static Tensor matrix(int64_t r, int64_t c, std::vector<real_t> data);

  const Shape& shape() const { return shape_; }
  int64_t ndim() const { return static_cast<int64_t>(shape_.size()); }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  int64_t dim(int64_t i) const { return shape_[static_cast<size_t>(i)]; }
  // Row/column view of a matrix; a vector counts as a single row.
  int64_t rows() const { return ndim() == 2 ? shape_[0] : 1; }
  int64_t cols() const { return ndim() == 2 ? shape_[1] : size(); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  std::string shape_str() const;

  real_t& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  real_t operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }
  real_t& at(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * cols() + c)]; }
  real_t at(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * cols() + c)]; }

  real_t* data() { return data_.data(); }
  const real_t* data() const { return data_.data(); }
  std::span<real_t> row(int64_t r) { return {data_.data() + r * cols(), static_cast<size_t>(cols())}; }
  std::span<const real_t> row(int64_t r) const {
    return {data_.data() + r * cols(), static_cast<size_t>(cols())};
  }

  void fill(real_t v);
  bool all_finite() const;
  real_t item() const;  // single-element tensors only

 private:
  Shape shape_;
  std::vector<real_t> data_;
};

Tensor zeros_like(const Tensor& t);
std::string shape_pair_str(const Tensor& a, const Tensor& b);

// ---- elementwise / linear algebra forwards -------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);     // [m×k]·[k×n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m×k]·[n×k]^T
Tensor matmul_tn(const Tensor& a, const Tensor& b);  // [k×m]^T·[k×n]
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, real_t s);
void add_inplace(Tensor& a, const Tensor& b);
void add_scaled_inplace(Tensor& a, const Tensor& b, real_t s);  // a += s*b

Tensor add_row_broadcast(const Tensor& x, const Tensor& bias);  // x[m×n] + bias[n] per row
Tensor col_sums(const Tensor& x);                               // [n]
Tensor relu(const Tensor& x);

// Numerically stable softmax along `axis` (0 = down columns, 1 = along rows;
// rank-1 tensors use axis 0 over the whole vector).
Tensor softmax(const Tensor& x, int axis = -1);
Tensor softmax_rows(const Tensor& x);

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, real_t eps);

// ---- vector-Jacobian products --------------------------------------------

void matmul_vjp(const Tensor& a, const Tensor& b, const Tensor& up, Tensor& da, Tensor& db);
Tensor softmax_rows_vjp(const Tensor& y, const Tensor& up);
void layer_norm_rows_vjp(const Tensor& x, const Tensor& gain, real_t eps, const Tensor& up,
                         Tensor& dx, Tensor& dgain, Tensor& dbias);
Tensor relu_vjp(const Tensor& x, const Tensor& up);

// ---- deterministic RNG ----------------------------------------------------

// Counter-based splitmix64 stream; identical seed + call sequence yields a
// bit-identical stream on every platform.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64();
  double uniform();                            // [0,1)
  double uniform(double lo, double hi);        // [lo,hi)
  double normal(double mean = 0.0, double stddev = 1.0);
  int64_t uniform_int(int64_t lo, int64_t hi);  // inclusive bounds

  // Derives an independent child stream without advancing this one; the same
  // stream id always yields the same child.
  Rng fork(uint64_t stream) const;
  static uint64_t mix(uint64_t a, uint64_t b, uint64_t c = 0);

 private:
  uint64_t state_;
};

// Training dropout with inverted scaling; inference is an identity.
// mask_out, when non-null, receives the survivor mask for the VJP.
Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training, Tensor* mask_out = nullptr);
Tensor dropout_vjp(const Tensor& mask, double rate, const Tensor& up);

// ---- parameters -----------------------------------------------------------

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;  // same shape, zero-initialized
  int index = -1;
  bool trainable = true;
};

class ParamStore {
 public:
  Parameter& add(const std::string& name, Tensor init);
  Parameter& at(int index) { return params_[static_cast<size_t>(index)]; }
  const Parameter& at(int index) const { return params_[static_cast<size_t>(index)]; }
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  int count() const { return static_cast<int>(params_.size()); }
  int64_t total_values() const;

  void zero_grads();
  double grad_l2_norm() const;
  void scale_grads(double s);

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::deque<Parameter> params_;  // stable references
  std::unordered_map<std::string, int> by_name_;
};

}  // namespace fnat
