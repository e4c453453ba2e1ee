#include "fnat/decoding.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "fnat/util.hpp"

namespace fnat {

void RefineConfig::validate() const {
  if (n_passes < 0) throw ConfigError("refine passes must be >= 0");
  if (mask_ratio < 0.0 || mask_ratio >= 1.0) throw ConfigError("mask_ratio must be in [0,1)");
}

int argmax_token(const Tensor& probs_row) {
  int best = 1;  // PAD (id 0) is never emitted
  for (int64_t j = 2; j < probs_row.size(); ++j)
    if (probs_row[j] > probs_row[best]) best = static_cast<int>(j);
  return best;
}

std::vector<int64_t> select_lowest_confidence(const std::vector<double>& confidences, int64_t k) {
  std::vector<int64_t> order(confidences.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    return confidences[static_cast<size_t>(a)] < confidences[static_cast<size_t>(b)];
  });
  order.resize(static_cast<size_t>(std::min<int64_t>(k, static_cast<int64_t>(order.size()))));
  std::sort(order.begin(), order.end());
  return order;
}

namespace {

int argmax_length(const Tensor& probs) {
  int64_t best = 0;
  for (int64_t i = 1; i < probs.size(); ++i)
    if (probs[i] > probs[best]) best = i;
  return static_cast<int>(best) + 1;  // class i means length i+1
}

// Fills tokens/confidences for the selected positions from trace logits.
void read_positions(const DecoderTrace& trace, const std::vector<int64_t>& positions,
                    std::vector<int>& tokens, std::vector<double>& confidences) {
  for (int64_t t : positions) {
    Tensor row({trace.logits.cols()});
    for (int64_t j = 0; j < trace.logits.cols(); ++j) row[j] = trace.logits.at(t, j);
    Tensor probs = softmax_rows(row);
    const int tok = argmax_token(probs);
    tokens[static_cast<size_t>(t)] = tok;
    confidences[static_cast<size_t>(t)] = static_cast<double>(probs[tok]);
  }
}

DecodeResult decode_one_uncounted(const Model& model, const EncoderState& enc) {
  const int length = argmax_length(model.predict_length(enc));
  DecoderTrace trace = model.decode_parallel_uncounted(enc, nullptr, nullptr);
  DecodeResult res;
  res.tokens.resize(static_cast<size_t>(length));
  res.confidences.resize(static_cast<size_t>(length));
  std::vector<int64_t> positions(static_cast<size_t>(length));
  std::iota(positions.begin(), positions.end(), 0);
  read_positions(trace, positions, res.tokens, res.confidences);
  res.passes = 1;
  return res;
}

// One refinement pass; returns true when a decoder forward actually ran.
bool refine_one_uncounted(const Model& model, const EncoderState& enc, DecodeResult& res,
                          double mask_ratio) {
  const auto length = static_cast<int64_t>(res.tokens.size());
  const auto k = static_cast<int64_t>(std::ceil(mask_ratio * static_cast<double>(length)));
  if (k <= 0) {
    ++res.passes;
    return false;
  }
  const std::vector<int64_t> masked_positions = select_lowest_confidence(res.confidences, k);

  const auto t_max = static_cast<size_t>(model.config().t_max);
  std::vector<int> feedback(t_max, Vocabulary::MASK);
  std::vector<uint8_t> masked(t_max, 1);  // beyond the predicted length stays a MASK draft
  for (int64_t t = 0; t < length; ++t) {
    feedback[static_cast<size_t>(t)] = res.tokens[static_cast<size_t>(t)];
    masked[static_cast<size_t>(t)] = 0;
  }
  for (int64_t t : masked_positions) masked[static_cast<size_t>(t)] = 1;

  DecoderTrace trace = model.decode_parallel_uncounted(enc, &feedback, &masked);
  read_positions(trace, masked_positions, res.tokens, res.confidences);
  ++res.passes;
  return true;
}

}  // namespace

DecodeResult single_pass(const Model& model, const std::vector<int>& src) {
  EncoderState enc = model.encode(src);
  model.count_nat_forward();
  return decode_one_uncounted(model, enc);
}

DecodeResult refine(const Model& model, const std::vector<int>& src, DecodeResult result,
                    const RefineConfig& cfg) {
  cfg.validate();
  if (cfg.n_passes == 0) return result;
  EncoderState enc = model.encode(src);
  for (int pass = 0; pass < cfg.n_passes; ++pass)
    if (refine_one_uncounted(model, enc, result, cfg.mask_ratio)) model.count_nat_forward();
  return result;
}

std::vector<int> ar_greedy(const Model& model, const std::vector<int>& src, int max_len) {
  if (max_len < 0 || max_len > model.config().t_max)
    throw ConfigError("ar_greedy max_len must be in [0, t_max]");
  EncoderState enc = model.encode(src);
  std::vector<int> prefix{Vocabulary::BOS};
  std::vector<int> out;
  for (int step = 0; step < max_len; ++step) {
    Tensor logits = model.ar_decode_step(enc, prefix);
    const int tok = argmax_token(softmax_rows(logits));
    if (tok == Vocabulary::EOS) break;
    out.push_back(tok);
    if (static_cast<int>(prefix.size()) == model.config().t_max) break;
    prefix.push_back(tok);
  }
  return out;
}

std::vector<DecodeResult> decode_batch(const Model& model, const std::vector<std::vector<int>>& srcs,
                                       const RefineConfig& refine_cfg, int workers) {
  refine_cfg.validate();
  const auto n = static_cast<int64_t>(srcs.size());
  std::vector<DecodeResult> results(srcs.size());
  std::vector<EncoderState> encs(srcs.size());

  model.count_nat_forward();
  parallel_chunks(n, workers, [&](int, int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      encs[static_cast<size_t>(i)] = model.encode(srcs[static_cast<size_t>(i)]);
      results[static_cast<size_t>(i)] = decode_one_uncounted(model, encs[static_cast<size_t>(i)]);
    }
  });
  for (int pass = 0; pass < refine_cfg.n_passes; ++pass) {
    std::vector<uint8_t> ran(srcs.size(), 0);
    parallel_chunks(n, workers, [&](int, int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i)
        ran[static_cast<size_t>(i)] = refine_one_uncounted(model, encs[static_cast<size_t>(i)],
                                                           results[static_cast<size_t>(i)],
                                                           refine_cfg.mask_ratio)
                                          ? 1
                                          : 0;
    });
    if (std::any_of(ran.begin(), ran.end(), [](uint8_t r) { return r != 0; })) model.count_nat_forward();
  }
  return results;
}

std::string BenchmarkReport::to_json() const {
  nlohmann::json j;
  j["nat_tokens_per_s"] = nat_tokens_per_s;
  j["ar_tokens_per_s"] = ar_tokens_per_s;
  j["speedup"] = speedup;
  j["nat_forwards"] = nat_forwards;
  j["ar_forwards"] = ar_forwards;
  j["batch_size"] = batch_size;
  j["workers"] = workers;
  return j.dump();
}

BenchmarkReport benchmark(const Model& nat_model, const Model& ar_model,
                          const std::vector<Example>& dataset, int batch_size,
                          const RefineConfig& refine_cfg, int workers) {
  if (dataset.empty()) throw ConfigError("benchmark dataset is empty");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (nat_model.config().vocab != ar_model.config().vocab ||
      nat_model.config().t_max != ar_model.config().t_max)
    throw ConfigError("benchmark models disagree on vocab or t_max");

  using clock = std::chrono::steady_clock;
  BenchmarkReport rep;
  rep.batch_size = batch_size;
  rep.workers = workers;

  std::vector<std::vector<std::vector<int>>> batches;
  for (size_t base = 0; base < dataset.size(); base += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(dataset.size(), base + static_cast<size_t>(batch_size));
    std::vector<std::vector<int>> b;
    for (size_t i = base; i < end; ++i) b.push_back(dataset[i].src);
    batches.push_back(std::move(b));
  }

  nat_model.reset_counters();
  uint64_t nat_tokens = 0;
  const auto nat_t0 = clock::now();
  for (const auto& b : batches) {
    std::vector<DecodeResult> results = decode_batch(nat_model, b, refine_cfg, workers);
    for (const DecodeResult& r : results) nat_tokens += r.tokens.size();
  }
  const double nat_s = std::chrono::duration<double>(clock::now() - nat_t0).count();
  rep.nat_forwards = nat_model.nat_forwards();

  ar_model.reset_counters();
  const int t_max = ar_model.config().t_max;
  const auto ar_t0 = clock::now();
  for (const auto& b : batches) {
    parallel_chunks(static_cast<int64_t>(b.size()), workers, [&](int, int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i) ar_greedy(ar_model, b[static_cast<size_t>(i)], t_max);
    });
  }
  const double ar_s = std::chrono::duration<double>(clock::now() - ar_t0).count();
  // every ar_decode_step call emits one position, so the counter is both the
  // forward count and the generated token count
  rep.ar_forwards = ar_model.ar_step_forwards();
  const uint64_t ar_tokens = rep.ar_forwards;

  rep.nat_tokens_per_s = static_cast<double>(nat_tokens) / nat_s;
  rep.ar_tokens_per_s = static_cast<double>(ar_tokens) / ar_s;
  rep.speedup = rep.nat_tokens_per_s / rep.ar_tokens_per_s;
  return rep;
}

}  // namespace fnat
