// fnat: data generation, training, decoding, evaluation, benchmarking and
// self-verification for the FourierNAT artifact. Everything runs through the
// shared-library C API; this binary only parses flags and maps return codes
// to exit codes (0 ok, 1 check failure, 2 config/usage, 3 numerical abort).

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "fnat/fnat_capi.h"

using nlohmann::json;

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::optional<int> workers;
  std::optional<int> batch_size;
  std::optional<std::string> arch;

  // model
  std::optional<int> d, n_layers, n_heads, d_ff, vocab, t_max, s_max;
  std::optional<std::string> draft_init;
  std::optional<bool> combine_imag;
  bool full_preset = false;

  // train
  std::optional<int> max_steps, warmup_steps, tokens_per_batch, eval_interval, val_examples;
  std::optional<double> dropout, label_smoothing, length_loss_weight, grad_clip;

  // task
  std::optional<std::string> task_kind;
  std::optional<int> content_vocab, min_len, max_len, n_examples, skip_examples;

  // refine
  std::optional<int> passes;
  std::optional<double> mask_ratio;

  // paths
  std::optional<std::string> dataset, val_dataset, checkpoint, ar_checkpoint, out, out_dir;
};

void add_common_options(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "JSON config file; flags override its values");
  cmd->add_option("--seed", f.seed, "master seed recorded in every artifact");
  cmd->add_option("--workers", f.workers, "worker threads for batch fan-out");
}

void add_model_options(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--arch", f.arch, "fouriernat | ar-baseline | fouriernat-nogate");
  cmd->add_option("--d", f.d, "embedding width");
  cmd->add_option("--layers", f.n_layers, "layers per stack");
  cmd->add_option("--heads", f.n_heads, "attention heads");
  cmd->add_option("--d-ff", f.d_ff, "feed-forward inner width");
  cmd->add_option("--vocab", f.vocab, "vocabulary size (4 specials + content)");
  cmd->add_option("--t-max", f.t_max, "padded target length (power of two)");
  cmd->add_option("--s-max", f.s_max, "max source length");
  cmd->add_option("--draft-init", f.draft_init, "zeros | mask_embedding");
  cmd->add_option("--combine-imag", f.combine_imag,
                  "keep the imaginary mixing output via a learned projection");
  cmd->add_flag("--full-preset", f.full_preset, "full-scale shape: d=512, 6 layers, 8 heads, d_ff=2048");
}

void add_train_options(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--max-steps", f.max_steps, "optimizer steps");
  cmd->add_option("--warmup", f.warmup_steps, "lr warmup steps");
  cmd->add_option("--tokens-per-batch", f.tokens_per_batch, "batch budget in target tokens");
  cmd->add_option("--dropout", f.dropout, "dropout rate");
  cmd->add_option("--label-smoothing", f.label_smoothing, "label smoothing mass");
  cmd->add_option("--length-loss-weight", f.length_loss_weight, "length predictor loss weight");
  cmd->add_option("--grad-clip", f.grad_clip, "global L2 gradient clip (0 disables)");
  cmd->add_option("--eval-interval", f.eval_interval, "steps between curve records");
  cmd->add_option("--val-examples", f.val_examples, "held-out examples per validation pass");
}

void add_task_options(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--task", f.task_kind, "copy | reverse | sort | cipher");
  cmd->add_option("--content-vocab", f.content_vocab, "distinct content ids");
  cmd->add_option("--min-len", f.min_len, "min content length");
  cmd->add_option("--max-len", f.max_len, "max content length");
  cmd->add_option("--n", f.n_examples, "number of examples");
  cmd->add_option("--skip", f.skip_examples,
                  "skip this many leading stream examples (disjoint same-seed splits)");
}

void add_refine_options(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--passes", f.passes, "refinement passes after the first");
  cmd->add_option("--mask-ratio", f.mask_ratio, "fraction of least-confident positions re-predicted");
}

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream is(path);
  if (!is) {
    std::cerr << "error: cannot open config file: " << path << "\n";
    std::exit(2);
  }
  try {
    json j;
    is >> j;
    return j;
  } catch (const json::exception& e) {
    std::cerr << "error: bad config file " << path << ": " << e.what() << "\n";
    std::exit(2);
  }
}

template <typename T>
void set_if(json& j, const char* key, const std::optional<T>& v) {
  if (v) j[key] = *v;
}

std::string merged_config(const CommonFlags& f) {
  json j = load_config_file(f.config_path);
  set_if(j, "seed", f.seed);
  set_if(j, "workers", f.workers);
  set_if(j, "batch_size", f.batch_size);
  set_if(j, "arch", f.arch);

  json model = j.value("model", json::object());
  if (f.full_preset) {
    model["d"] = 512;
    model["n_layers"] = 6;
    model["n_heads"] = 8;
    model["d_ff"] = 2048;
  }
  set_if(model, "d", f.d);
  set_if(model, "n_layers", f.n_layers);
  set_if(model, "n_heads", f.n_heads);
  set_if(model, "d_ff", f.d_ff);
  set_if(model, "vocab", f.vocab);
  set_if(model, "t_max", f.t_max);
  set_if(model, "s_max", f.s_max);
  set_if(model, "draft_init", f.draft_init);
  set_if(model, "combine_imag", f.combine_imag);
  set_if(model, "dropout", f.dropout);
  if (!model.empty()) j["model"] = model;

  json train = j.value("train", json::object());
  set_if(train, "max_steps", f.max_steps);
  set_if(train, "warmup_steps", f.warmup_steps);
  set_if(train, "tokens_per_batch", f.tokens_per_batch);
  set_if(train, "dropout", f.dropout);
  set_if(train, "label_smoothing", f.label_smoothing);
  set_if(train, "length_loss_weight", f.length_loss_weight);
  set_if(train, "grad_clip", f.grad_clip);
  set_if(train, "eval_interval", f.eval_interval);
  set_if(train, "val_examples", f.val_examples);
  if (!train.empty()) j["train"] = train;

  json task = j.value("task", json::object());
  set_if(task, "kind", f.task_kind);
  set_if(task, "content_vocab", f.content_vocab);
  set_if(task, "min_len", f.min_len);
  set_if(task, "max_len", f.max_len);
  set_if(task, "n", f.n_examples);
  set_if(task, "skip", f.skip_examples);
  set_if(task, "seed", f.seed);
  if (!task.empty()) j["task"] = task;

  json refine = j.value("refine", json::object());
  set_if(refine, "passes", f.passes);
  set_if(refine, "mask_ratio", f.mask_ratio);
  if (!refine.empty()) j["refine"] = refine;

  json paths = j.value("paths", json::object());
  set_if(paths, "dataset", f.dataset);
  set_if(paths, "val_dataset", f.val_dataset);
  set_if(paths, "checkpoint", f.checkpoint);
  set_if(paths, "ar_checkpoint", f.ar_checkpoint);
  set_if(paths, "out", f.out);
  set_if(paths, "out_dir", f.out_dir);
  if (!paths.empty()) j["paths"] = paths;

  return j.dump();
}

int finish(fnat_rc rc, char** message) {
  if (*message) {
    std::cout << *message << "\n";
    fnat_string_free(*message);
    *message = nullptr;
  }
  if (rc != FNAT_OK) std::cerr << "error: " << fnat_last_error() << "\n";
  return static_cast<int>(rc);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FourierNAT: parallel sequence generation with spectral decoder mixing"};
  app.require_subcommand(1);

  CommonFlags f;

  CLI::App* gen = app.add_subcommand("generate-data", "write a deterministic synthetic dataset");
  add_common_options(gen, f);
  add_task_options(gen, f);
  gen->add_option("--t-max", f.t_max, "padded target length the data must fit");
  gen->add_option("--out", f.out, "output dataset path")->required();
  gen->add_option("--out-dir", f.out_dir, "artifact directory (default: dir of --out)");

  CLI::App* train = app.add_subcommand("train", "train a model and emit curves + checkpoints");
  add_common_options(train, f);
  add_model_options(train, f);
  add_train_options(train, f);
  train->add_option("--dataset", f.dataset, "training dataset")->required();
  train->add_option("--val-dataset", f.val_dataset, "validation dataset (default: 10% tail split)");
  train->add_option("--out-dir", f.out_dir, "artifact directory")->required();

  CLI::App* dec = app.add_subcommand("decode", "parallel decode a dataset with a checkpoint");
  add_common_options(dec, f);
  add_refine_options(dec, f);
  dec->add_option("--checkpoint", f.checkpoint, "model checkpoint")->required();
  dec->add_option("--dataset", f.dataset, "dataset to decode")->required();
  dec->add_option("--out", f.out, "output decode file")->required();
  dec->add_option("--out-dir", f.out_dir, "artifact directory (default: dir of --out)");
  dec->add_option("--vocab", f.vocab, "expected checkpoint vocab (mismatch is an error)");
  dec->add_option("--t-max", f.t_max, "expected checkpoint t_max (mismatch is an error)");

  CLI::App* ev = app.add_subcommand("evaluate", "score a decode file against references");
  std::string hyps_path, refs_path, eval_out_dir;
  ev->add_option("--hyps", hyps_path, "decode output file")->required();
  ev->add_option("--refs", refs_path, "reference dataset file")->required();
  ev->add_option("--out-dir", eval_out_dir, "artifact directory for run_config.json");

  CLI::App* bench = app.add_subcommand("benchmark", "NAT vs AR wall-clock and forward counts");
  add_common_options(bench, f);
  add_refine_options(bench, f);
  bench->add_option("--checkpoint", f.checkpoint, "NAT checkpoint")->required();
  bench->add_option("--ar-checkpoint", f.ar_checkpoint, "AR baseline checkpoint")->required();
  bench->add_option("--dataset", f.dataset, "dataset to decode")->required();
  bench->add_option("--batch-size", f.batch_size, "examples per batch");
  bench->add_option("--refine-passes", f.passes, "include refinement passes in the NAT timing");
  bench->add_option("--out", f.out, "also write the report here");
  bench->add_option("--out-dir", f.out_dir, "artifact directory");

  CLI::App* dist = app.add_subcommand("distill", "replace targets with an AR teacher's decodes");
  add_common_options(dist, f);
  dist->add_option("--checkpoint", f.checkpoint, "AR teacher checkpoint")->required();
  dist->add_option("--dataset", f.dataset, "dataset to distill")->required();
  dist->add_option("--out", f.out, "output dataset path")->required();
  dist->add_option("--out-dir", f.out_dir, "artifact directory (default: dir of --out)");

  CLI::App* check = app.add_subcommand("selfcheck", "run the invariant battery");

  CLI11_PARSE(app, argc, argv);

  char* message = nullptr;
  if (gen->parsed()) return finish(fnat_generate_data(merged_config(f).c_str(), &message), &message);
  if (train->parsed()) return finish(fnat_train(merged_config(f).c_str(), &message), &message);
  if (dec->parsed()) return finish(fnat_decode(merged_config(f).c_str(), &message), &message);
  if (ev->parsed())
    return finish(fnat_evaluate(hyps_path.c_str(), refs_path.c_str(),
                                eval_out_dir.empty() ? nullptr : eval_out_dir.c_str(), &message),
                  &message);
  if (bench->parsed()) return finish(fnat_benchmark(merged_config(f).c_str(), &message), &message);
  if (dist->parsed()) return finish(fnat_distill(merged_config(f).c_str(), &message), &message);
  if (check->parsed()) {
    char* report = nullptr;
    const fnat_rc rc = fnat_selfcheck(&report);
    if (report) {
      std::cout << report;
      fnat_string_free(report);
    }
    if (rc != FNAT_OK) std::cerr << "error: " << fnat_last_error() << "\n";
    return static_cast<int>(rc);
  }
  return 2;
}
