#include "fnat/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fnat::ad {

Value Tape::push(Tensor val, const char* op, bool needs_grad,
                 std::function<void(Tape&, const Tensor&)> backward) {
  if (check_finite && !val.all_finite())
    throw NumericError(std::string("non-finite value produced by op '") + op + "'");
  Node n;
  n.val = std::move(val);
  n.op = op;
  n.needs_grad = needs_grad;
  n.backward = needs_grad ? std::move(backward) : nullptr;
  nodes_.push_back(std::move(n));
  return Value{static_cast<int>(nodes_.size()) - 1};
}

Value Tape::param(const Parameter& p) {
  Value v = push(p.value, "param", p.trainable, nullptr);
  nodes_.back().param_index = p.index;
  return v;
}

const Tensor& Tape::grad(Value v) const {
  const Node& n = nodes_[static_cast<size_t>(v.idx)];
  if (!n.has_grad) throw Error("gradient of node '" + std::string(n.op) + "' was never touched");
  return n.grad;
}

void Tape::accumulate(Value v, const Tensor& delta) {
  Node& n = nodes_[static_cast<size_t>(v.idx)];
  if (!n.needs_grad) return;
  if (!n.has_grad) {
    n.grad = delta;
    n.has_grad = true;
  } else {
    add_inplace(n.grad, delta);
  }
}

void Tape::accumulate(Value v, Tensor&& delta) {
  Node& n = nodes_[static_cast<size_t>(v.idx)];
  if (!n.needs_grad) return;
  if (!n.has_grad) {
    n.grad = std::move(delta);
    n.has_grad = true;
  } else {
    add_inplace(n.grad, delta);
  }
}

void Tape::backward(Value root, Tensor seed) {
  if (!seed.same_shape(val(root)))
    throw DimError("backward seed shape mismatch: " + shape_pair_str(seed, val(root)));
  accumulate(root, std::move(seed));
  for (int i = root.idx; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.has_grad && n.backward) n.backward(*this, n.grad);
  }
}

void Tape::export_param_grads(std::vector<Tensor>& buffer) const {
  for (const Node& n : nodes_) {
    if (n.param_index < 0 || !n.has_grad) continue;
    Tensor& slot = buffer[static_cast<size_t>(n.param_index)];
    if (slot.size() == 0)
      slot = n.grad;
    else
      add_inplace(slot, n.grad);
  }
}

void Tape::accumulate_param_grads(ParamStore& store) const {
  for (const Node& n : nodes_) {
    if (n.param_index < 0 || !n.has_grad) continue;
    add_inplace(store.at(n.param_index).grad, n.grad);
  }
}

// ---- ops ---------------------------------------------------------------------

Value add(Tape& t, Value a, Value b) {
  Tensor out = fnat::add(t.val(a), t.val(b));
  const bool ng = t.needs_grad(a) || t.needs_grad(b);
  return t.push(std::move(out), "add", ng, [a, b](Tape& tp, const Tensor& up) {
    tp.accumulate(a, up);
    tp.accumulate(b, up);
  });
}

Value add_scaled(Tape& t, Value a, Value b, real_t s) {
  Tensor out = t.val(a);
  add_scaled_inplace(out, t.val(b), s);
  const bool ng = t.needs_grad(a) || t.needs_grad(b);
  return t.push(std::move(out), "add_scaled", ng, [a, b, s](Tape& tp, const Tensor& up) {
    tp.accumulate(a, up);
    tp.accumulate(b, fnat::scale(up, s));
  });
}

Value scale(Tape& t, Value a, real_t s) {
  return t.push(fnat::scale(t.val(a), s), "scale", t.needs_grad(a),
                [a, s](Tape& tp, const Tensor& up) { tp.accumulate(a, fnat::scale(up, s)); });
}

Value hadamard(Tape& t, Value a, Value b) {
  Tensor out = fnat::hadamard(t.val(a), t.val(b));
  const bool ng = t.needs_grad(a) || t.needs_grad(b);
  return t.push(std::move(out), "hadamard", ng, [a, b](Tape& tp, const Tensor& up) {
    tp.accumulate(a, fnat::hadamard(up, tp.val(b)));
    tp.accumulate(b, fnat::hadamard(up, tp.val(a)));
  });
}

Value matmul(Tape& t, Value a, Value b) {
  Tensor out = fnat::matmul(t.val(a), t.val(b));
  const bool ng = t.needs_grad(a) || t.needs_grad(b);
  return t.push(std::move(out), "matmul", ng, [a, b](Tape& tp, const Tensor& up) {
    if (tp.needs_grad(a)) tp.accumulate(a, matmul_nt(up, tp.val(b)));
    if (tp.needs_grad(b)) tp.accumulate(b, matmul_tn(tp.val(a), up));
  });
}

Value matmul_nt(Tape& t, Value a, Value b) {
  Tensor out = fnat::matmul_nt(t.val(a), t.val(b));
  const bool ng = t.needs_grad(a) || t.needs_grad(b);
  return t.push(std::move(out), "matmul_nt", ng, [a, b](Tape& tp, const Tensor& up) {
    if (tp.needs_grad(a)) tp.accumulate(a, fnat::matmul(up, tp.val(b)));
    if (tp.needs_grad(b)) tp.accumulate(b, matmul_tn(up, tp.val(a)));
  });
}

Value add_row_bias(Tape& t, Value x, Value bias) {
  Tensor out = add_row_broadcast(t.val(x), t.val(bias));
  const bool ng = t.needs_grad(x) || t.needs_grad(bias);
  return t.push(std::move(out), "add_row_bias", ng, [x, bias](Tape& tp, const Tensor& up) {
    tp.accumulate(x, up);
    if (tp.needs_grad(bias)) tp.accumulate(bias, col_sums(up));
  });
}

Value add_const(Tape& t, Value x, Tensor c) {
  Tensor out = fnat::add(t.val(x), c);
  return t.push(std::move(out), "add_const", t.needs_grad(x),
                [x](Tape& tp, const Tensor& up) { tp.accumulate(x, up); });
}

Value relu(Tape& t, Value x) {
  return t.push(fnat::relu(t.val(x)), "relu", t.needs_grad(x),
                [x](Tape& tp, const Tensor& up) { tp.accumulate(x, relu_vjp(tp.val(x), up)); });
}

Value softmax_rows(Tape& t, Value x) {
  Tensor y = fnat::softmax_rows(t.val(x));
  Tensor saved = y;  // VJP needs the softmax output itself
  return t.push(std::move(y), "softmax_rows", t.needs_grad(x),
                [x, saved = std::move(saved)](Tape& tp, const Tensor& up) {
                  tp.accumulate(x, softmax_rows_vjp(saved, up));
                });
}

Value layer_norm(Tape& t, Value x, Value gain, Value bias, real_t eps) {
  Tensor out = layer_norm_rows(t.val(x), t.val(gain), t.val(bias), eps);
  const bool ng = t.needs_grad(x) || t.needs_grad(gain) || t.needs_grad(bias);
  return t.push(std::move(out), "layer_norm", ng, [x, gain, bias, eps](Tape& tp, const Tensor& up) {
    Tensor dx, dgain, dbias;
    layer_norm_rows_vjp(tp.val(x), tp.val(gain), eps, up, dx, dgain, dbias);
    tp.accumulate(x, std::move(dx));
    tp.accumulate(gain, std::move(dgain));
    tp.accumulate(bias, std::move(dbias));
  });
}

Value dropout(Tape& t, Value x, double rate, Rng& rng, bool training) {
  if (!training || rate == 0.0) return x;
  Tensor mask;
  Tensor out = fnat::dropout(t.val(x), rate, rng, true, &mask);
  return t.push(std::move(out), "dropout", t.needs_grad(x),
                [x, rate, mask = std::move(mask)](Tape& tp, const Tensor& up) {
                  tp.accumulate(x, dropout_vjp(mask, rate, up));
                });
}

Value slice_cols(Tape& t, Value x, int64_t c0, int64_t c1) {
  const Tensor& in = t.val(x);
  if (c0 < 0 || c1 > in.cols() || c0 >= c1)
    throw DimError("slice_cols [" + std::to_string(c0) + "," + std::to_string(c1) + ") of " + in.shape_str());
  Tensor out({in.rows(), c1 - c0});
  for (int64_t i = 0; i < in.rows(); ++i)
    for (int64_t j = c0; j < c1; ++j) out.at(i, j - c0) = in.at(i, j);
  return t.push(std::move(out), "slice_cols", t.needs_grad(x), [x, c0, c1](Tape& tp, const Tensor& up) {
    Tensor dx = zeros_like(tp.val(x));
    for (int64_t i = 0; i < dx.rows(); ++i)
      for (int64_t j = c0; j < c1; ++j) dx.at(i, j) = up.at(i, j - c0);
    tp.accumulate(x, std::move(dx));
  });
}

Value concat_cols(Tape& t, std::span<const Value> parts) {
  if (parts.empty()) throw DimError("concat_cols of nothing");
  const int64_t rows = t.val(parts[0]).rows();
  int64_t cols = 0;
  bool ng = false;
  for (Value p : parts) {
    if (t.val(p).rows() != rows) throw DimError("concat_cols row mismatch");
    cols += t.val(p).cols();
    ng = ng || t.needs_grad(p);
  }
  Tensor out({rows, cols});
  int64_t off = 0;
  for (Value p : parts) {
    const Tensor& v = t.val(p);
    for (int64_t i = 0; i < rows; ++i)
      for (int64_t j = 0; j < v.cols(); ++j) out.at(i, off + j) = v.at(i, j);
    off += v.cols();
  }
  std::vector<Value> own(parts.begin(), parts.end());
  return t.push(std::move(out), "concat_cols", ng, [own = std::move(own)](Tape& tp, const Tensor& up) {
    int64_t off = 0;
    for (Value p : own) {
      const int64_t pc = tp.val(p).cols();
      Tensor d({up.rows(), pc});
      for (int64_t i = 0; i < up.rows(); ++i)
        for (int64_t j = 0; j < pc; ++j) d.at(i, j) = up.at(i, off + j);
      tp.accumulate(p, std::move(d));
      off += pc;
    }
  });
}

Value pick_row(Tape& t, Value x, int64_t r) {
  const Tensor& in = t.val(x);
  if (r < 0 || r >= in.rows()) throw DimError("pick_row " + std::to_string(r) + " of " + in.shape_str());
  Tensor out({1, in.cols()});
  for (int64_t j = 0; j < in.cols(); ++j) out.at(0, j) = in.at(r, j);
  return t.push(std::move(out), "pick_row", t.needs_grad(x), [x, r](Tape& tp, const Tensor& up) {
    Tensor dx = zeros_like(tp.val(x));
    for (int64_t j = 0; j < dx.cols(); ++j) dx.at(r, j) = up.at(0, j);
    tp.accumulate(x, std::move(dx));
  });
}

Value mean_rows(Tape& t, Value x, int64_t n_rows) {
  const Tensor& in = t.val(x);
  if (n_rows < 1 || n_rows > in.rows())
    throw DimError("mean_rows over " + std::to_string(n_rows) + " rows of " + in.shape_str());
  Tensor out({1, in.cols()});
  const real_t inv = real_t(1) / static_cast<real_t>(n_rows);
  for (int64_t i = 0; i < n_rows; ++i)
    for (int64_t j = 0; j < in.cols(); ++j) out.at(0, j) += in.at(i, j) * inv;
  return t.push(std::move(out), "mean_rows", t.needs_grad(x), [x, n_rows, inv](Tape& tp, const Tensor& up) {
    Tensor dx = zeros_like(tp.val(x));
    for (int64_t i = 0; i < n_rows; ++i)
      for (int64_t j = 0; j < dx.cols(); ++j) dx.at(i, j) = up.at(0, j) * inv;
    tp.accumulate(x, std::move(dx));
  });
}

Value embed_rows(Tape& t, Value table, const std::vector<int>& ids) {
  const Tensor& tab = t.val(table);
  Tensor out({static_cast<int64_t>(ids.size()), tab.cols()});
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tab.rows())
      throw VocabError("token id " + std::to_string(ids[i]) + " outside table of " +
                       std::to_string(tab.rows()) + " rows");
    for (int64_t j = 0; j < tab.cols(); ++j) out.at(static_cast<int64_t>(i), j) = tab.at(ids[i], j);
  }
  return t.push(std::move(out), "embed_rows", t.needs_grad(table),
                [table, ids](Tape& tp, const Tensor& up) {
                  Tensor dt = zeros_like(tp.val(table));
                  for (size_t i = 0; i < ids.size(); ++i)
                    for (int64_t j = 0; j < dt.cols(); ++j)
                      dt.at(ids[i], j) += up.at(static_cast<int64_t>(i), j);
                  tp.accumulate(table, std::move(dt));
                });
}

Value fourier_mix(Tape& t, Value x, Value g_real, Value g_imag) {
  Tensor out = fnat::fourier_mix(t.val(x), t.val(g_real), t.val(g_imag));
  const bool ng = t.needs_grad(x) || t.needs_grad(g_real) || t.needs_grad(g_imag);
  return t.push(std::move(out), "fourier_mix", ng, [x, g_real, g_imag](Tape& tp, const Tensor& up) {
    FourierMixGrads g = fourier_mix_vjp(tp.val(x), tp.val(g_real), tp.val(g_imag), up);
    tp.accumulate(x, std::move(g.dx));
    tp.accumulate(g_real, std::move(g.dg_real));
    tp.accumulate(g_imag, std::move(g.dg_imag));
  });
}

Value fourier_mix_concat(Tape& t, Value x, Value g_real, Value g_imag) {
  auto [re, im] = fourier_mix_full(t.val(x), t.val(g_real), t.val(g_imag));
  const int64_t rows = re.rows(), d = re.cols();
  Tensor out({rows, 2 * d});
  for (int64_t i = 0; i < rows; ++i) {
    for (int64_t j = 0; j < d; ++j) {
      out.at(i, j) = re.at(i, j);
      out.at(i, d + j) = im.at(i, j);
    }
  }
  const bool ng = t.needs_grad(x) || t.needs_grad(g_real) || t.needs_grad(g_imag);
  return t.push(std::move(out), "fourier_mix_concat", ng,
                [x, g_real, g_imag, d](Tape& tp, const Tensor& up) {
                  Tensor u1({up.rows(), d}), u2({up.rows(), d});
                  for (int64_t i = 0; i < up.rows(); ++i)
                    for (int64_t j = 0; j < d; ++j) {
                      u1.at(i, j) = up.at(i, j);
                      u2.at(i, j) = up.at(i, d + j);
                    }
                  FourierMixGrads g =
                      fourier_mix_full_vjp(tp.val(x), tp.val(g_real), tp.val(g_imag), u1, u2);
                  tp.accumulate(x, std::move(g.dx));
                  tp.accumulate(g_real, std::move(g.dg_real));
                  tp.accumulate(g_imag, std::move(g.dg_imag));
                });
}

Value cross_entropy_sum(Tape& t, Value logits, const std::vector<int>& gold,
                        const std::vector<uint8_t>& row_masked, double smoothing) {
  const Tensor& z = t.val(logits);
  const int64_t rows = z.rows(), v = z.cols();
  if (static_cast<int64_t>(gold.size()) != rows || static_cast<int64_t>(row_masked.size()) != rows)
    throw DimError("cross_entropy_sum: gold/mask length vs logits " + z.shape_str());
  if (smoothing < 0.0 || smoothing >= 1.0) throw ConfigError("label smoothing must be in [0,1)");

  double loss = 0;
  Tensor probs({rows, v});
  for (int64_t i = 0; i < rows; ++i) {
    if (row_masked[static_cast<size_t>(i)]) continue;
    const int g = gold[static_cast<size_t>(i)];
    if (g < 0 || g >= v) throw VocabError("gold id " + std::to_string(g) + " >= vocab " + std::to_string(v));
    const real_t* row = z.data() + i * v;
    real_t mx = -std::numeric_limits<real_t>::infinity();
    for (int64_t j = 0; j < v; ++j) mx = std::max(mx, row[j]);
    double sum = 0, zsum = 0;
    for (int64_t j = 0; j < v; ++j) {
      sum += std::exp(static_cast<double>(row[j] - mx));
      zsum += static_cast<double>(row[j]);
    }
    const double lse = static_cast<double>(mx) + std::log(sum);
    loss += (1.0 - smoothing) * (lse - static_cast<double>(row[g])) +
            smoothing * (lse - zsum / static_cast<double>(v));
    for (int64_t j = 0; j < v; ++j)
      probs.at(i, j) = static_cast<real_t>(std::exp(static_cast<double>(row[j]) - lse));
  }

  return t.push(Tensor::scalar(static_cast<real_t>(loss)), "cross_entropy_sum", t.needs_grad(logits),
                [logits, gold, row_masked, smoothing, probs = std::move(probs)](Tape& tp, const Tensor& up) {
                  const real_t u = up.item();
                  const int64_t rows = probs.rows(), v = probs.cols();
                  Tensor dz({rows, v});
                  const real_t unif = static_cast<real_t>(smoothing / static_cast<double>(v));
                  for (int64_t i = 0; i < rows; ++i) {
                    if (row_masked[static_cast<size_t>(i)]) continue;
                    for (int64_t j = 0; j < v; ++j) dz.at(i, j) = (probs.at(i, j) - unif) * u;
                    dz.at(i, gold[static_cast<size_t>(i)]) -= static_cast<real_t>(1.0 - smoothing) * u;
                  }
                  tp.accumulate(logits, std::move(dz));
                });
}

// ---- grad check ----------------------------------------------------------------

double grad_check(const std::function<Value(Tape&, std::span<const Value>)>& f,
                  const std::vector<Tensor>& inputs, double eps, Rng& rng) {
  if (eps <= 0) throw ConfigError("grad_check eps must be positive");

  Tape tape;
  tape.check_finite = true;
  std::vector<Value> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& in : inputs) {
    if (!in.all_finite()) throw NumericError("grad_check input is not finite");
    leaves.push_back(tape.leaf(in));
  }
  Value out = f(tape, leaves);

  Tensor proj = zeros_like(tape.val(out));
  for (int64_t i = 0; i < proj.size(); ++i) proj[i] = static_cast<real_t>(rng.uniform(-1.0, 1.0));
  tape.backward(out, proj);

  std::vector<Tensor> analytic;
  for (Value l : leaves) {
    const auto& node_val = tape.val(l);
    Tensor g = zeros_like(node_val);
    // leaves untouched by the graph keep an exactly-zero gradient
    try {
      g = tape.grad(l);
    } catch (const Error&) {
    }
    analytic.push_back(std::move(g));
  }

  auto project = [&](const std::vector<Tensor>& ins) -> double {
    Tape tp;
    tp.check_finite = true;
    std::vector<Value> lv;
    lv.reserve(ins.size());
    for (const Tensor& in : ins) lv.push_back(tp.leaf(in, false));
    Value o = f(tp, lv);
    const Tensor& y = tp.val(o);
    double s = 0;
    for (int64_t i = 0; i < y.size(); ++i) s += static_cast<double>(proj[i]) * y[i];
    return s;
  };

  double max_rel = 0;
  std::vector<Tensor> work = inputs;
  for (size_t i = 0; i < work.size(); ++i) {
    for (int64_t j = 0; j < work[i].size(); ++j) {
      const real_t orig = work[i][j];
      work[i][j] = orig + static_cast<real_t>(eps);
      const double s_plus = project(work);
      work[i][j] = orig - static_cast<real_t>(eps);
      const double s_minus = project(work);
      work[i][j] = orig;
      const double numeric = (s_plus - s_minus) / (2.0 * eps);
      const double rel = std::abs(static_cast<double>(analytic[i][j]) - numeric) /
                         std::max(1.0, std::abs(numeric));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace fnat::ad
