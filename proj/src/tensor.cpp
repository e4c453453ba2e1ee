#include "fnat/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

namespace fnat {

namespace {

int64_t shape_product(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) {
    if (d < 0) throw DimError("negative extent in shape");
    n *= d;
  }
  return n;
}

}  // namespace

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(shape_product(shape_)), real_t(0));
}

Tensor::Tensor(Shape shape, std::vector<real_t> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_product(shape_) != static_cast<int64_t>(data_.size()))
    throw DimError("shape " + shape_str() + " does not match data length " + std::to_string(data_.size()));
}

Tensor Tensor::scalar(real_t v) { return Tensor({}, {v}); }
Tensor Tensor::vec(std::vector<real_t> v) {
  auto n = static_cast<int64_t>(v.size());
  return Tensor({n}, std::move(v));
}
Tensor Tensor::matrix(int64_t r, int64_t c, std::vector<real_t> data) {
  return Tensor({r, c}, std::move(data));
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
  os << "]";
  return os.str();
}

void Tensor::fill(real_t v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  for (real_t v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

real_t Tensor::item() const {
  if (size() != 1) throw DimError("item() on tensor of shape " + shape_str());
  return data_[0];
}

Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

std::string shape_pair_str(const Tensor& a, const Tensor& b) {
  return a.shape_str() + " vs " + b.shape_str();
}

// ---- linear algebra --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.rows())
    throw DimError("matmul shape mismatch: " + shape_pair_str(a, b));
  const int64_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor c({m, n});
  for (int64_t i = 0; i < m; ++i) {
    real_t* __restrict crow = c.data() + i * n;
    const real_t* __restrict arow = a.data() + i * k;
    int64_t t = 0;
    for (; t + 4 <= k; t += 4) {
      const real_t a0 = arow[t], a1 = arow[t + 1], a2 = arow[t + 2], a3 = arow[t + 3];
      const real_t* __restrict b0 = b.data() + t * n;
      const real_t* __restrict b1 = b0 + n;
      const real_t* __restrict b2 = b1 + n;
      const real_t* __restrict b3 = b2 + n;
      for (int64_t j = 0; j < n; ++j) crow[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
    }
    for (; t < k; ++t) {
      const real_t aik = arow[t];
      const real_t* __restrict brow = b.data() + t * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.cols())
    throw DimError("matmul_nt shape mismatch: " + shape_pair_str(a, b));
  const int64_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor c({m, n});
  for (int64_t i = 0; i < m; ++i) {
    const real_t* __restrict arow = a.data() + i * k;
    real_t* __restrict crow = c.data() + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const real_t* __restrict brow = b.data() + j * k;
      real_t acc = 0;
      for (int64_t t = 0; t < k; ++t) acc += arow[t] * brow[t];
      crow[j] = acc;
    }
  }
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.rows() != b.rows())
    throw DimError("matmul_tn shape mismatch: " + shape_pair_str(a, b));
  const int64_t k = a.rows(), m = a.cols(), n = b.cols();
  Tensor c({m, n});
  for (int64_t t = 0; t < k; ++t) {
    const real_t* __restrict arow = a.data() + t * m;
    const real_t* __restrict brow = b.data() + t * n;
    for (int64_t i = 0; i < m; ++i) {
      const real_t ati = arow[i];
      real_t* __restrict crow = c.data() + i * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += ati * brow[j];
    }
  }
  return c;
}

Tensor transpose(const Tensor& a) {
  if (a.ndim() != 2) throw DimError("transpose needs a matrix, got " + a.shape_str());
  Tensor t({a.cols(), a.rows()});
  for (int64_t i = 0; i < a.rows(); ++i)
    for (int64_t j = 0; j < a.cols(); ++j) t.at(j, i) = a.at(i, j);
  return t;
}

// ---- elementwise -----------------------------------------------------------

static void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) throw DimError(std::string(op) + " shape mismatch: " + shape_pair_str(a, b));
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor c = a;
  for (int64_t i = 0; i < c.size(); ++i) c[i] += b[i];
  return c;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor c = a;
  for (int64_t i = 0; i < c.size(); ++i) c[i] -= b[i];
  return c;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  Tensor c = a;
  for (int64_t i = 0; i < c.size(); ++i) c[i] *= b[i];
  return c;
}

Tensor scale(const Tensor& a, real_t s) {
  Tensor c = a;
  for (int64_t i = 0; i < c.size(); ++i) c[i] *= s;
  return c;
}

void add_inplace(Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add_inplace");
  for (int64_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

void add_scaled_inplace(Tensor& a, const Tensor& b, real_t s) {
  require_same_shape(a, b, "add_scaled_inplace");
  for (int64_t i = 0; i < a.size(); ++i) a[i] += s * b[i];
}

Tensor add_row_broadcast(const Tensor& x, const Tensor& bias) {
  if (bias.size() != x.cols())
    throw DimError("row broadcast shape mismatch: " + shape_pair_str(x, bias));
  Tensor y = x;
  for (int64_t i = 0; i < y.rows(); ++i) {
    real_t* row = y.data() + i * y.cols();
    for (int64_t j = 0; j < y.cols(); ++j) row[j] += bias[j];
  }
  return y;
}

Tensor col_sums(const Tensor& x) {
  Tensor s({x.cols()});
  for (int64_t i = 0; i < x.rows(); ++i)
    for (int64_t j = 0; j < x.cols(); ++j) s[j] += x.at(i, j);
  return s;
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (int64_t i = 0; i < y.size(); ++i) y[i] = y[i] > 0 ? y[i] : real_t(0);
  return y;
}

Tensor relu_vjp(const Tensor& x, const Tensor& up) {
  require_same_shape(x, up, "relu_vjp");
  Tensor dx = up;
  for (int64_t i = 0; i < dx.size(); ++i)
    if (x[i] <= 0) dx[i] = 0;
  return dx;
}

// ---- softmax ----------------------------------------------------------------

static void softmax_span(const real_t* in, real_t* out, int64_t n, int64_t stride) {
  real_t mx = -std::numeric_limits<real_t>::infinity();
  for (int64_t i = 0; i < n; ++i) mx = std::max(mx, in[i * stride]);
  real_t sum = 0;
  for (int64_t i = 0; i < n; ++i) {
    const real_t e = std::exp(in[i * stride] - mx);
    out[i * stride] = e;
    sum += e;
  }
  const real_t inv = real_t(1) / sum;
  for (int64_t i = 0; i < n; ++i) out[i * stride] *= inv;
}

Tensor softmax(const Tensor& x, int axis) {
  if (x.ndim() <= 1) {
    Tensor y = x;
    softmax_span(x.data(), y.data(), x.size(), 1);
    return y;
  }
  if (axis < 0) axis += 2;
  if (axis != 0 && axis != 1) throw DimError("softmax axis out of range for " + x.shape_str());
  Tensor y = x;
  if (axis == 1) {
    for (int64_t i = 0; i < x.rows(); ++i)
      softmax_span(x.data() + i * x.cols(), y.data() + i * y.cols(), x.cols(), 1);
  } else {
    for (int64_t j = 0; j < x.cols(); ++j)
      softmax_span(x.data() + j, y.data() + j, x.rows(), x.cols());
  }
  return y;
}

Tensor softmax_rows(const Tensor& x) { return softmax(x, x.ndim() <= 1 ? 0 : 1); }

Tensor softmax_rows_vjp(const Tensor& y, const Tensor& up) {
  require_same_shape(y, up, "softmax_rows_vjp");
  Tensor dx = zeros_like(y);
  for (int64_t i = 0; i < y.rows(); ++i) {
    real_t dot = 0;
    for (int64_t j = 0; j < y.cols(); ++j) dot += up.at(i, j) * y.at(i, j);
    for (int64_t j = 0; j < y.cols(); ++j) dx.at(i, j) = y.at(i, j) * (up.at(i, j) - dot);
  }
  return dx;
}

// ---- layer norm -------------------------------------------------------------

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, real_t eps) {
  if (eps <= 0) throw ConfigError("layer_norm eps must be positive");
  if (gain.size() != x.cols() || bias.size() != x.cols())
    throw DimError("layer_norm gain/bias length vs " + x.shape_str());
  const int64_t n = x.cols();
  Tensor y({x.rows(), n});
  for (int64_t i = 0; i < x.rows(); ++i) {
    const real_t* row = x.data() + i * n;
    real_t mean = 0;
    for (int64_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<real_t>(n);
    real_t var = 0;
    for (int64_t j = 0; j < n; ++j) {
      const real_t d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<real_t>(n);  // population variance
    const real_t inv = real_t(1) / std::sqrt(var + eps);
    real_t* out = y.data() + i * n;
    for (int64_t j = 0; j < n; ++j) out[j] = gain[j] * ((row[j] - mean) * inv) + bias[j];
  }
  return y;
}

void layer_norm_rows_vjp(const Tensor& x, const Tensor& gain, real_t eps, const Tensor& up,
                         Tensor& dx, Tensor& dgain, Tensor& dbias) {
  const int64_t n = x.cols();
  dx = zeros_like(x);
  dgain = Tensor({n});
  dbias = Tensor({n});
  std::vector<real_t> xhat(static_cast<size_t>(n));
  for (int64_t i = 0; i < x.rows(); ++i) {
    const real_t* row = x.data() + i * n;
    const real_t* urow = up.data() + i * n;
    real_t mean = 0;
    for (int64_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<real_t>(n);
    real_t var = 0;
    for (int64_t j = 0; j < n; ++j) {
      const real_t d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<real_t>(n);
    const real_t inv = real_t(1) / std::sqrt(var + eps);
    real_t w_mean = 0, wx_mean = 0;
    for (int64_t j = 0; j < n; ++j) {
      xhat[static_cast<size_t>(j)] = (row[j] - mean) * inv;
      const real_t w = urow[j] * gain[j];
      w_mean += w;
      wx_mean += w * xhat[static_cast<size_t>(j)];
    }
    w_mean /= static_cast<real_t>(n);
    wx_mean /= static_cast<real_t>(n);
    real_t* drow = dx.data() + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const real_t w = urow[j] * gain[j];
      drow[j] = inv * (w - w_mean - xhat[static_cast<size_t>(j)] * wx_mean);
      dgain[j] += urow[j] * xhat[static_cast<size_t>(j)];
      dbias[j] += urow[j];
    }
  }
}

void matmul_vjp(const Tensor& a, const Tensor& b, const Tensor& up, Tensor& da, Tensor& db) {
  da = matmul_nt(up, b);
  db = matmul_tn(a, up);
}

// ---- RNG --------------------------------------------------------------------

uint64_t Rng::next_u64() {
  // splitmix64
  state_ += 0x9E3779B97F4A7C15ULL;
  uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal(double mean, double stddev) {
  // Box-Muller, cosine branch only; u1 shifted away from 0.
  const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  return mean + stddev * r * std::cos(2.0 * 3.14159265358979323846 * u2);
}

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
  if (hi < lo) throw ConfigError("uniform_int: empty range");
  const uint64_t range = static_cast<uint64_t>(hi - lo) + 1;
  const uint64_t v = static_cast<uint64_t>((static_cast<unsigned __int128>(next_u64()) * range) >> 64);
  return lo + static_cast<int64_t>(v);
}

Rng Rng::fork(uint64_t stream) const { return Rng(mix(state_, stream)); }

uint64_t Rng::mix(uint64_t a, uint64_t b, uint64_t c) {
  uint64_t z = a ^ (b * 0x9E3779B97F4A7C15ULL) ^ (c * 0xC2B2AE3D27D4EB4FULL);
  z = (z ^ (z >> 33)) * 0xFF51AFD7ED558CCDULL;
  z = (z ^ (z >> 33)) * 0xC4CEB9FE1A85EC53ULL;
  return z ^ (z >> 33);
}

// ---- dropout ----------------------------------------------------------------

Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training, Tensor* mask_out) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0,1)");
  if (!training || rate == 0.0) {
    if (mask_out) {
      *mask_out = zeros_like(x);
      mask_out->fill(1);
    }
    return x;
  }
  Tensor y = x;
  Tensor mask = zeros_like(x);
  const real_t keep_scale = real_t(1.0 / (1.0 - rate));
  for (int64_t i = 0; i < y.size(); ++i) {
    if (rng.uniform() < rate) {
      y[i] = 0;
    } else {
      y[i] *= keep_scale;
      mask[i] = 1;
    }
  }
  if (mask_out) *mask_out = std::move(mask);
  return y;
}

Tensor dropout_vjp(const Tensor& mask, double rate, const Tensor& up) {
  Tensor dx = up;
  const real_t keep_scale = real_t(1.0 / (1.0 - rate));
  for (int64_t i = 0; i < dx.size(); ++i) dx[i] = mask[i] != 0 ? dx[i] * keep_scale : real_t(0);
  return dx;
}

// ---- parameters ---------------------------------------------------------------

Parameter& ParamStore::add(const std::string& name, Tensor init) {
  if (by_name_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  Parameter p;
  p.name = name;
  p.grad = zeros_like(init);
  p.value = std::move(init);
  p.index = static_cast<int>(params_.size());
  by_name_[name] = p.index;
  params_.push_back(std::move(p));
  return params_.back();
}

Parameter* ParamStore::find(const std::string& name) {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : &params_[static_cast<size_t>(it->second)];
}

const Parameter* ParamStore::find(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : &params_[static_cast<size_t>(it->second)];
}

int64_t ParamStore::total_values() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParamStore::zero_grads() {
  for (auto& p : params_) p.grad.fill(0);
}

double ParamStore::grad_l2_norm() const {
  double s = 0;
  for (const auto& p : params_)
    for (int64_t i = 0; i < p.grad.size(); ++i) s += static_cast<double>(p.grad[i]) * p.grad[i];
  return std::sqrt(s);
}

void ParamStore::scale_grads(double s) {
  for (auto& p : params_)
    for (int64_t i = 0; i < p.grad.size(); ++i) p.grad[i] = static_cast<real_t>(p.grad[i] * s);
}

}  // namespace fnat
