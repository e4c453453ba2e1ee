#include "fnat/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>

#include "fnat/decoding.hpp"
#include "fnat/metrics.hpp"
#include "fnat/util.hpp"

namespace fnat {

namespace g = fnat::ad;

void TrainConfig::validate() const {
  if (warmup_steps < 1) throw ConfigError("warmup_steps must be >= 1");
  if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
  if (tokens_per_batch < 1) throw ConfigError("tokens_per_batch must be >= 1");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) throw ConfigError("label_smoothing must be in [0,1)");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0,1)");
  if (length_loss_weight < 0.0) throw ConfigError("length_loss_weight must be >= 0");
  if (eval_interval < 1) throw ConfigError("eval_interval must be >= 1");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) throw ConfigError("adam betas must be in [0,1)");
  if (eps_adam <= 0) throw ConfigError("eps_adam must be positive");
}

LossReport nat_loss(const Tensor& logits, const std::vector<int>& gold_ids,
                    const std::vector<uint8_t>& pad_mask) {
  const int64_t rows = logits.rows(), v = logits.cols();
  if (static_cast<int64_t>(gold_ids.size()) > rows)
    throw DimError("gold length " + std::to_string(gold_ids.size()) + " exceeds logit rows " +
                   std::to_string(rows));
  if (gold_ids.size() != pad_mask.size()) throw DimError("gold/pad_mask length mismatch");
  LossReport rep;
  for (size_t i = 0; i < gold_ids.size(); ++i) {
    if (pad_mask[i]) continue;
    const int gid = gold_ids[i];
    if (gid < 0 || gid >= v)
      throw VocabError("gold id " + std::to_string(gid) + " >= vocab " + std::to_string(v));
    const real_t* row = logits.data() + static_cast<int64_t>(i) * v;
    real_t mx = -std::numeric_limits<real_t>::infinity();
    for (int64_t j = 0; j < v; ++j) mx = std::max(mx, row[j]);
    double sum = 0;
    for (int64_t j = 0; j < v; ++j) sum += std::exp(static_cast<double>(row[j] - mx));
    rep.token_ce += static_cast<double>(mx) + std::log(sum) - static_cast<double>(row[gid]);
    ++rep.tokens_counted;
  }
  rep.total = rep.token_ce;
  return rep;
}

double lr_at(int64_t step, int d_model, int warmup) {
  if (step < 1) throw ConfigError("lr_at: steps start at 1");
  if (warmup < 1) throw ConfigError("lr_at: warmup must be >= 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  return std::pow(static_cast<double>(d_model), -0.5) * std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

void OptimState::init(const ParamStore& store) {
  step = 0;
  m.clear();
  v.clear();
  for (const Parameter& p : store) {
    m.push_back(zeros_like(p.value));
    v.push_back(zeros_like(p.value));
  }
}

void adam_step(ParamStore& params, OptimState& state, const TrainConfig& cfg, double lr) {
  if (state.m.size() != static_cast<size_t>(params.count())) state.init(params);
  for (const Parameter& p : params) {
    if (!p.trainable) continue;
    if (!p.grad.all_finite()) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (Parameter& p : params) {
    if (!p.trainable) continue;
    Tensor& m = state.m[static_cast<size_t>(p.index)];
    Tensor& v = state.v[static_cast<size_t>(p.index)];
    for (int64_t i = 0; i < p.value.size(); ++i) {
      const double gd = static_cast<double>(p.grad[i]);
      const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * gd;
      const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * gd * gd;
      m[i] = static_cast<real_t>(mi);
      v[i] = static_cast<real_t>(vi);
      p.value[i] -= static_cast<real_t>(lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.eps_adam));
    }
  }
}

// ---- batch gradients -----------------------------------------------------------

namespace {

struct ExampleSums {
  double token_ce = 0;
  double length_ce = 0;
};

// Builds one example's loss graph and returns the objective node. The token
// term is pre-scaled by alpha_token and the length term by alpha_len so the
// batch gradient comes out as the per-token objective directly.
g::Value build_example_objective(const Model& model, Fwd& f, const std::vector<int>& src,
                                 const std::vector<uint8_t>& src_pad, const std::vector<int>& tgt,
                                 const std::vector<uint8_t>& tgt_pad, int gold_length,
                                 const TrainConfig& cfg, double alpha_token, double alpha_len,
                                 ExampleSums& sums) {
  g::Value enc = model.encode_g(f, src, &src_pad);
  g::Value token_ce;
  if (model.config().arch == Arch::ar_baseline) {
    std::vector<int> shifted(tgt.size());
    shifted[0] = Vocabulary::BOS;
    for (size_t i = 1; i < tgt.size(); ++i) shifted[i] = tgt[i - 1];
    g::Value logits = model.ar_logits_g(f, shifted, enc, &src_pad);
    token_ce = g::cross_entropy_sum(f.tape, logits, tgt, tgt_pad, cfg.label_smoothing);
    sums.token_ce = static_cast<double>(f.tape.val(token_ce).item());
    return g::scale(f.tape, token_ce, static_cast<real_t>(alpha_token));
  }
  g::Value draft = model.draft_g(f, nullptr, nullptr);
  g::Value z = model.nat_stack_g(f, draft, enc, &src_pad);
  g::Value logits = model.project_g(f, z);
  token_ce = g::cross_entropy_sum(f.tape, logits, tgt, tgt_pad, cfg.label_smoothing);
  int valid = 0;
  for (uint8_t m : src_pad)
    if (!m) ++valid;
  g::Value len_logits = model.length_logits_g(f, enc, valid);
  g::Value len_ce = g::cross_entropy_sum(f.tape, len_logits, {gold_length - 1}, {0});
  sums.token_ce = static_cast<double>(f.tape.val(token_ce).item());
  sums.length_ce = static_cast<double>(f.tape.val(len_ce).item());
  return g::add_scaled(f.tape, g::scale(f.tape, token_ce, static_cast<real_t>(alpha_token)), len_ce,
                       static_cast<real_t>(alpha_len));
}

}  // namespace

LossReport compute_batch_gradients(Model& model, const Batch& batch, const TrainConfig& cfg,
                                   int64_t step_index) {
  const int n = batch.size();
  if (n == 0) throw ConfigError("empty batch");
  int64_t batch_tokens = 0;
  for (int gl : batch.gold_lengths) batch_tokens += gl;
  const double alpha_token = 1.0 / static_cast<double>(batch_tokens);
  const double alpha_len = cfg.length_loss_weight / static_cast<double>(n);

  const int workers = std::min(cfg.workers, n);
  std::vector<std::vector<Tensor>> chunk_grads(
      static_cast<size_t>(workers), std::vector<Tensor>(static_cast<size_t>(model.params().count())));
  std::vector<ExampleSums> sums(static_cast<size_t>(n));

  parallel_chunks(n, workers, [&](int chunk, int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      const auto idx = static_cast<size_t>(i);
      Rng drop_rng(Rng::mix(cfg.seed ^ 0x64726f70ULL, static_cast<uint64_t>(step_index),
                            static_cast<uint64_t>(i)));
      ad::Tape tape;
      Fwd f{tape, /*training=*/true, /*track_grads=*/true, &drop_rng};
      g::Value obj = build_example_objective(model, f, batch.src_ids[idx], batch.src_pad_mask[idx],
                                             batch.tgt_ids[idx], batch.tgt_pad_mask[idx],
                                             batch.gold_lengths[idx], cfg, alpha_token, alpha_len,
                                             sums[idx]);
      tape.backward_scalar(obj);
      tape.export_param_grads(chunk_grads[static_cast<size_t>(chunk)]);
    }
  });

  ParamStore& store = model.params();
  store.zero_grads();
  for (int c = 0; c < workers; ++c)
    for (int p = 0; p < store.count(); ++p) {
      Tensor& gbuf = chunk_grads[static_cast<size_t>(c)][static_cast<size_t>(p)];
      if (gbuf.size() != 0) add_inplace(store.at(p).grad, gbuf);
    }

  LossReport rep;
  for (const ExampleSums& s : sums) {
    rep.token_ce += s.token_ce;
    rep.length_ce += s.length_ce;
  }
  rep.tokens_counted = batch_tokens;
  rep.total = rep.token_ce + cfg.length_loss_weight * rep.length_ce;
  return rep;
}

// ---- validation ------------------------------------------------------------------

double validation_metric(const Model& model, const std::vector<Example>& val_set, int limit,
                         int workers) {
  const int n = std::min<int>(limit, static_cast<int>(val_set.size()));
  if (n == 0) return 0.0;
  std::vector<std::vector<int>> hyps(static_cast<size_t>(n));
  parallel_chunks(n, workers, [&](int, int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      const Example& ex = val_set[static_cast<size_t>(i)];
      if (model.config().arch == Arch::ar_baseline) {
        hyps[static_cast<size_t>(i)] = ar_greedy(model, ex.src, model.config().t_max);
      } else {
        hyps[static_cast<size_t>(i)] = single_pass(model, ex.src).tokens;
      }
    }
  });
  std::vector<std::vector<int>> refs;
  refs.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) refs.push_back(val_set[static_cast<size_t>(i)].tgt);
  return sequence_accuracy(hyps, refs);
}

// ---- training loop -----------------------------------------------------------------

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void append_curve(std::ofstream& os, const CurveRecord& r) {
  char wall[64];
  std::snprintf(wall, sizeof(wall), "%.3f", r.wall_clock_s);
  os << r.step << "," << format_double(r.train_loss) << "," << format_double(r.val_metric) << ","
     << wall << "\n";
  os.flush();
}

double initial_loss(Model& model, const Batch& batch, const TrainConfig& cfg) {
  // forward-only estimate of the starting objective, dropout off
  double token_sum = 0, len_sum = 0;
  int64_t tokens = 0;
  for (int i = 0; i < batch.size(); ++i) {
    const auto idx = static_cast<size_t>(i);
    ad::Tape tape;
    Fwd f{tape};
    ExampleSums sums;
    build_example_objective(model, f, batch.src_ids[idx], batch.src_pad_mask[idx], batch.tgt_ids[idx],
                            batch.tgt_pad_mask[idx], batch.gold_lengths[idx], cfg, 1.0, 1.0, sums);
    token_sum += sums.token_ce;
    len_sum += sums.length_ce;
    tokens += batch.gold_lengths[idx];
  }
  return token_sum / static_cast<double>(tokens) +
         cfg.length_loss_weight * len_sum / static_cast<double>(batch.size());
}

}  // namespace

TrainResult train_loop(Model& model, const std::vector<Example>& train_set,
                       const std::vector<Example>& val_set, const TrainConfig& cfg,
                       const std::string& out_dir) {
  cfg.validate();
  if (train_set.empty()) throw ConfigError("training dataset is empty");
  std::filesystem::create_directories(out_dir);

  TrainResult result;
  result.curves_csv = out_dir + "/curves.csv";
  result.best_checkpoint = out_dir + "/checkpoint_best.fnat";
  result.last_checkpoint = out_dir + "/checkpoint_last.fnat";

  std::ofstream curves(result.curves_csv, std::ios::binary);
  if (!curves) throw IoError("cannot open " + result.curves_csv);
  curves << "step,train_loss,val_metric,wall_clock_s\n";

  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&t0] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  const int t_max = model.config().t_max;
  const int examples_per_batch = std::max(1, cfg.tokens_per_batch / t_max);

  Rng batch_rng(Rng::mix(cfg.seed, 0xBA7C4E5ULL));
  std::vector<Batch> batches = make_batches(train_set, t_max, examples_per_batch, batch_rng);

  // step-0 record: starting loss on the first batch plus starting validation
  {
    CurveRecord r;
    r.step = 0;
    r.train_loss = initial_loss(model, batches.front(), cfg);
    r.val_metric = validation_metric(model, val_set, cfg.val_examples, cfg.workers);
    r.wall_clock_s = elapsed();
    append_curve(curves, r);
    result.curve.push_back(r);
    result.best_val = r.val_metric;
  }
  model.save_checkpoint(result.best_checkpoint);
  model.save_checkpoint(result.last_checkpoint);

  OptimState optim;
  optim.init(model.params());

  int64_t step = 0;
  size_t batch_cursor = 0;
  uint64_t epoch = 0;
  while (step < cfg.max_steps) {
    if (batch_cursor == batches.size()) {
      ++epoch;
      Rng reshuffle(Rng::mix(cfg.seed, 0xBA7C4E5ULL, epoch));
      batches = make_batches(train_set, t_max, examples_per_batch, reshuffle);
      batch_cursor = 0;
    }
    const Batch& batch = batches[batch_cursor++];
    ++step;

    LossReport rep = compute_batch_gradients(model, batch, cfg, step);
    const double objective = rep.token_ce / static_cast<double>(rep.tokens_counted) +
                             cfg.length_loss_weight * rep.length_ce / static_cast<double>(batch.size());
    if (!std::isfinite(objective))
      throw NumericError("non-finite loss at step " + std::to_string(step) +
                         "; last-good checkpoints retained in " + out_dir);

    if (cfg.grad_clip > 0) {
      const double gn = model.params().grad_l2_norm();
      if (gn > cfg.grad_clip) model.params().scale_grads(cfg.grad_clip / gn);
    }
    adam_step(model.params(), optim, cfg, lr_at(step, model.config().d, cfg.warmup_steps));

    if (step % cfg.eval_interval == 0 || step == cfg.max_steps) {
      CurveRecord r;
      r.step = step;
      r.train_loss = objective;
      r.val_metric = validation_metric(model, val_set, cfg.val_examples, cfg.workers);
      r.wall_clock_s = elapsed();
      append_curve(curves, r);
      result.curve.push_back(r);
      model.save_checkpoint(result.last_checkpoint);
      if (r.val_metric >= result.best_val) {
        result.best_val = r.val_metric;
        model.save_checkpoint(result.best_checkpoint);
      }
      if (cfg.early_stop_val > 0 && r.val_metric >= cfg.early_stop_val) break;
    }
  }
  result.steps_done = step;
  return result;
}

// ---- distillation -----------------------------------------------------------------

std::vector<Example> distill_generate(const Model& teacher, const std::vector<Example>& data,
                                      int* truncated_out, int workers) {
  if (teacher.config().arch != Arch::ar_baseline)
    throw ConfigError("distillation teacher must be an ar-baseline model");
  std::vector<Example> out(data.size());
  std::vector<int> truncated(static_cast<size_t>(std::max(1, workers)), 0);
  const int t_max = teacher.config().t_max;
  parallel_chunks(static_cast<int64_t>(data.size()), workers, [&](int chunk, int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      const Example& ex = data[static_cast<size_t>(i)];
      std::vector<int> hyp = ar_greedy(teacher, ex.src, t_max);
      if (static_cast<int>(hyp.size()) > t_max - 1) {
        hyp.resize(static_cast<size_t>(t_max - 1));
        ++truncated[static_cast<size_t>(chunk)];
      }
      hyp.push_back(Vocabulary::EOS);
      out[static_cast<size_t>(i)] = Example{ex.src, std::move(hyp)};
    }
  });
  if (truncated_out) {
    *truncated_out = 0;
    for (int c : truncated) *truncated_out += c;
  }
  return out;
}

}  // namespace fnat
