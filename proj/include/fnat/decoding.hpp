#pragma once

#include <string>
#include <vector>

#include "fnat/data.hpp"
#include "fnat/model.hpp"

namespace fnat {

struct DecodeResult {
  std::vector<int> tokens;          // length = predicted length; never PAD
  std::vector<double> confidences;  // per-position max softmax probability
  int passes = 1;
};

struct RefineConfig {
  int n_passes = 0;        // refinement passes after the first
  double mask_ratio = 0.3;

  void validate() const;
};

// Argmax with PAD excluded; ties resolve to the lowest eligible id.
int argmax_token(const Tensor& probs_row);

// The k lowest-confidence positions, ties resolving to the lowest index;
// returned sorted ascending.
std::vector<int64_t> select_lowest_confidence(const std::vector<double>& confidences, int64_t k);

// One parallel pass: predicted length from the length head, a single decoder
// stack forward, per-position argmax and confidence.
DecodeResult single_pass(const Model& model, const std::vector<int>& src);

// Mask-and-repredict refinement. Each pass masks the ceil(mask_ratio*length)
// least-confident positions (ties to the lowest index), feeds every other
// position its predicted token embedding, and re-predicts only the masked
// positions; everything else is preserved bit-exactly.
DecodeResult refine(const Model& model, const std::vector<int>& src, DecodeResult result,
                    const RefineConfig& cfg);

// Greedy autoregressive decode from BOS; returns content tokens (EOS not
// included). Every emitted position costs exactly one ar_decode_step call.
std::vector<int> ar_greedy(const Model& model, const std::vector<int>& src, int max_len);

// Batched parallel decoding: one counted decoder-stack forward per pass per
// batch; examples inside a batch carry no sequential dependency and fan out
// across workers.
std::vector<DecodeResult> decode_batch(const Model& model, const std::vector<std::vector<int>>& srcs,
                                       const RefineConfig& refine_cfg, int workers);

struct BenchmarkReport {
  double nat_tokens_per_s = 0;
  double ar_tokens_per_s = 0;
  double speedup = 0;
  uint64_t nat_forwards = 0;
  uint64_t ar_forwards = 0;
  int batch_size = 0;
  int workers = 1;

  std::string to_json() const;
};

// Wall-clock decode of the full dataset on both models with identical
// batching; token counts and decoder-forward counts come from the
// instrumented counters.
BenchmarkReport benchmark(const Model& nat_model, const Model& ar_model,
                          const std::vector<Example>& dataset, int batch_size,
                          const RefineConfig& refine_cfg, int workers);

}  // namespace fnat
