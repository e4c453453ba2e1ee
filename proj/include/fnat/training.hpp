#pragma once

#include <string>
#include <vector>

#include "fnat/data.hpp"
#include "fnat/model.hpp"

namespace fnat {

struct TrainConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps_adam = 1e-9;
  int warmup_steps = 400;  // full-scale runs use 4000
  int max_steps = 3000;
  int tokens_per_batch = 1024;  // full-scale 4096
  double dropout = 0.1;
  double length_loss_weight = 0.1;
  double label_smoothing = 0.0;
  double grad_clip = 1.0;
  uint64_t seed = 1;
  int eval_interval = 250;
  int val_examples = 200;
  int workers = 2;
  // stop once the validation metric reaches this value (0 disables)
  double early_stop_val = 0.0;

  void validate() const;
};

struct LossReport {
  double total = 0;  // token_ce + length_loss_weight * length_ce
  double token_ce = 0;
  double length_ce = 0;
  int64_t tokens_counted = 0;
};

// Summed negative log-likelihood over un-padded positions; padded positions
// contribute exactly nothing.
LossReport nat_loss(const Tensor& logits, const std::vector<int>& gold_ids,
                    const std::vector<uint8_t>& pad_mask);

// d_model^-0.5 * min(step^-0.5, step * warmup^-1.5); steps start at 1.
double lr_at(int64_t step, int d_model, int warmup);

struct OptimState {
  int64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  void init(const ParamStore& store);
};

// Bias-corrected Adam over every trainable parameter. Grads are validated
// first; a non-finite gradient aborts before any value changes.
void adam_step(ParamStore& params, OptimState& state, const TrainConfig& cfg, double lr);

// Runs forward/backward over the batch (worker-chunked, chunk-ordered
// reduction) and leaves the summed gradients in params().grad. The returned
// report carries raw loss sums; gradients are of the per-token objective.
LossReport compute_batch_gradients(Model& model, const Batch& batch, const TrainConfig& cfg,
                                   int64_t step_index);

struct CurveRecord {
  int64_t step = 0;
  double train_loss = 0;
  double val_metric = 0;
  double wall_clock_s = 0;
};

struct TrainResult {
  std::vector<CurveRecord> curve;
  double best_val = 0;
  int64_t steps_done = 0;
  std::string best_checkpoint;
  std::string last_checkpoint;
  std::string curves_csv;
};

// Deterministic training loop: curve records at eval_interval boundaries,
// best-val and last checkpoints under out_dir. A non-finite loss aborts with
// NumericError and leaves the checkpoints from the previous interval intact.
TrainResult train_loop(Model& model, const std::vector<Example>& train_set,
                       const std::vector<Example>& val_set, const TrainConfig& cfg,
                       const std::string& out_dir);

// Validation metric used for curves and best-checkpoint selection: held-out
// sequence accuracy under the model's own decoding (parallel single pass for
// the NAT archs, greedy for the AR baseline).
double validation_metric(const Model& model, const std::vector<Example>& val_set, int limit,
                         int workers);

// Replaces each gold target with the teacher's greedy decode of the source.
// Decodes longer than t_max-1 content tokens are truncated (counted via
// truncated_out).
std::vector<Example> distill_generate(const Model& teacher, const std::vector<Example>& data,
                                      int* truncated_out = nullptr, int workers = 1);

}  // namespace fnat
