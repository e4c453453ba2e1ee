#include "fnat/commands.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>

#include <json.hpp>

#include "fnat/metrics.hpp"

namespace fnat::commands {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw ConfigError("unknown config key '" + it.key() + "' in " + where);
}

TrainConfig train_from_json(const json& j) {
  TrainConfig c;
  reject_unknown_keys(j,
                      {"beta1", "beta2", "eps_adam", "warmup_steps", "max_steps", "tokens_per_batch",
                       "dropout", "length_loss_weight", "label_smoothing", "grad_clip", "eval_interval",
                       "val_examples", "early_stop_val"},
                      "train");
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps_adam = j.value("eps_adam", c.eps_adam);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.tokens_per_batch = j.value("tokens_per_batch", c.tokens_per_batch);
  c.dropout = j.value("dropout", c.dropout);
  c.length_loss_weight = j.value("length_loss_weight", c.length_loss_weight);
  c.label_smoothing = j.value("label_smoothing", c.label_smoothing);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.eval_interval = j.value("eval_interval", c.eval_interval);
  c.val_examples = j.value("val_examples", c.val_examples);
  c.early_stop_val = j.value("early_stop_val", c.early_stop_val);
  return c;
}

json train_to_json(const TrainConfig& c) {
  json j;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["eps_adam"] = c.eps_adam;
  j["warmup_steps"] = c.warmup_steps;
  j["max_steps"] = c.max_steps;
  j["tokens_per_batch"] = c.tokens_per_batch;
  j["dropout"] = c.dropout;
  j["length_loss_weight"] = c.length_loss_weight;
  j["label_smoothing"] = c.label_smoothing;
  j["grad_clip"] = c.grad_clip;
  j["eval_interval"] = c.eval_interval;
  j["val_examples"] = c.val_examples;
  j["early_stop_val"] = c.early_stop_val;
  return j;
}

TaskSpec task_from_json(const json& j, uint64_t default_seed) {
  TaskSpec t;
  reject_unknown_keys(j, {"kind", "content_vocab", "min_len", "max_len", "n", "seed", "skip"}, "task");
  if (j.contains("kind")) t.kind = task_kind_from_name(j["kind"].get<std::string>());
  t.content_vocab = j.value("content_vocab", t.content_vocab);
  t.min_len = j.value("min_len", t.min_len);
  t.max_len = j.value("max_len", t.max_len);
  t.seed = j.value("seed", default_seed);
  return t;
}

}  // namespace

RunConfig RunConfig::from_json(const std::string& text) {
  json j;
  try {
    j = text.empty() ? json::object() : json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config json: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a json object");
  reject_unknown_keys(
      j, {"seed", "workers", "batch_size", "arch", "model", "train", "task", "refine", "paths"},
      "config");

  RunConfig c;
  c.seed = j.value("seed", c.seed);
  c.workers = j.value("workers", c.workers);
  c.batch_size = j.value("batch_size", c.batch_size);
  if (j.contains("arch")) c.arch = arch_from_name(j["arch"].get<std::string>());
  if (j.contains("model")) {
    c.model = ModelConfig::from_json(j["model"].dump());
    c.model_explicit = true;
    c.model_json = j["model"].dump();
  }
  if (j.contains("train")) c.train = train_from_json(j["train"]);
  c.train.seed = c.seed;
  c.train.workers = c.workers;
  if (j.contains("task")) {
    const json& tj = j["task"];
    c.task = task_from_json(tj, c.seed);
    c.task_n = tj.value("n", c.task_n);
    c.task_skip = tj.value("skip", c.task_skip);
  } else {
    c.task.seed = c.seed;
  }
  if (j.contains("refine")) {
    reject_unknown_keys(j["refine"], {"passes", "mask_ratio"}, "refine");
    c.refine.n_passes = j["refine"].value("passes", c.refine.n_passes);
    c.refine.mask_ratio = j["refine"].value("mask_ratio", c.refine.mask_ratio);
  }
  if (j.contains("paths")) {
    const json& p = j["paths"];
    reject_unknown_keys(p, {"dataset", "val_dataset", "checkpoint", "ar_checkpoint", "out", "out_dir"},
                        "paths");
    c.dataset = p.value("dataset", "");
    c.val_dataset = p.value("val_dataset", "");
    c.checkpoint = p.value("checkpoint", "");
    c.ar_checkpoint = p.value("ar_checkpoint", "");
    c.out = p.value("out", "");
    c.out_dir = p.value("out_dir", "");
  }
  c.model.arch = c.arch;
  return c;
}

std::string RunConfig::effective_json() const {
  json j;
  j["seed"] = seed;
  j["workers"] = workers;
  j["batch_size"] = batch_size;
  j["arch"] = arch_name(arch);
  j["model"] = json::parse(model.to_json());
  j["train"] = train_to_json(train);
  j["task"] = {{"kind", task_kind_name(task.kind)}, {"content_vocab", task.content_vocab},
               {"min_len", task.min_len},           {"max_len", task.max_len},
               {"n", task_n},                       {"skip", task_skip},
               {"seed", task.seed}};
  j["refine"] = {{"passes", refine.n_passes}, {"mask_ratio", refine.mask_ratio}};
  j["paths"] = {{"dataset", dataset},   {"val_dataset", val_dataset}, {"checkpoint", checkpoint},
                {"ar_checkpoint", ar_checkpoint}, {"out", out},       {"out_dir", out_dir}};
  return j.dump(2);
}

void RunConfig::echo(const std::string& dir) const {
  if (dir.empty()) return;
  fs::create_directories(dir);
  std::ofstream os(dir + "/run_config.json", std::ios::binary);
  if (!os) throw IoError("cannot write run_config.json under " + dir);
  os << effective_json() << "\n";
}

namespace {

std::string artifact_dir(const RunConfig& cfg) {
  if (!cfg.out_dir.empty()) return cfg.out_dir;
  if (!cfg.out.empty()) {
    const fs::path parent = fs::path(cfg.out).parent_path();
    return parent.empty() ? std::string(".") : parent.string();
  }
  return "";
}

void validate_dataset_fits(const std::vector<Example>& data, const ModelConfig& mc) {
  int max_id = 0;
  size_t max_src = 0, max_tgt = 0;
  for (const Example& ex : data) {
    for (int id : ex.src) max_id = std::max(max_id, id);
    for (int id : ex.tgt) max_id = std::max(max_id, id);
    max_src = std::max(max_src, ex.src.size());
    max_tgt = std::max(max_tgt, ex.tgt.size());
  }
  if (max_id >= mc.vocab)
    throw ConfigError("dataset uses id " + std::to_string(max_id) + " but model vocab is " +
                      std::to_string(mc.vocab));
  if (static_cast<int>(max_src) > mc.s_max)
    throw ConfigError("dataset source length " + std::to_string(max_src) + " exceeds s_max " +
                      std::to_string(mc.s_max));
  if (static_cast<int>(max_tgt) > mc.t_max)
    throw ConfigError("dataset target length " + std::to_string(max_tgt) + " exceeds t_max " +
                      std::to_string(mc.t_max));
}

std::vector<TokenSeq> read_field(const std::string& path, const char* primary, const char* fallback) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  std::vector<TokenSeq> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      const char* key = j.contains(primary) ? primary : fallback;
      out.push_back(j.at(key).get<TokenSeq>());
    } catch (const json::exception& e) {
      throw IoError(path + ":" + std::to_string(line_no) + ": malformed record: " + e.what());
    }
  }
  return out;
}

}  // namespace

std::string generate_data(const RunConfig& cfg) {
  if (cfg.out.empty()) throw ConfigError("generate-data needs an output path");
  cfg.echo(artifact_dir(cfg));
  std::vector<Example> examples = generate(cfg.task, cfg.task_n, cfg.model.t_max, cfg.task_skip);
  save(examples, cfg.out);
  return "wrote " + std::to_string(examples.size()) + " " + task_kind_name(cfg.task.kind) +
         " examples to " + cfg.out + " (seed " + std::to_string(cfg.task.seed) + ")";
}

std::string train(const RunConfig& cfg) {
  if (cfg.dataset.empty()) throw ConfigError("train needs paths.dataset");
  if (cfg.out_dir.empty()) throw ConfigError("train needs paths.out_dir");
  cfg.echo(cfg.out_dir);

  std::vector<Example> train_set = load(cfg.dataset);
  if (train_set.empty()) throw ConfigError("training dataset is empty: " + cfg.dataset);
  std::vector<Example> val_set;
  if (!cfg.val_dataset.empty()) {
    val_set = load(cfg.val_dataset);
  } else {
    // deterministic tail split when no validation file is given
    const size_t n_val = std::max<size_t>(1, train_set.size() / 10);
    val_set.assign(train_set.end() - static_cast<std::ptrdiff_t>(n_val), train_set.end());
    train_set.resize(train_set.size() - n_val);
  }

  ModelConfig mc = cfg.model;
  mc.arch = cfg.arch;
  mc.dropout = cfg.train.dropout;
  validate_dataset_fits(train_set, mc);
  validate_dataset_fits(val_set, mc);

  Model model(mc, cfg.seed);
  TrainResult res = train_loop(model, train_set, val_set, cfg.train, cfg.out_dir);
  return "trained " + std::string(arch_name(mc.arch)) + " for " + std::to_string(res.steps_done) +
         " steps; best val " + std::to_string(res.best_val) + "; artifacts in " + cfg.out_dir;
}

std::string decode(const RunConfig& cfg) {
  if (cfg.checkpoint.empty()) throw ConfigError("decode needs paths.checkpoint");
  if (cfg.dataset.empty()) throw ConfigError("decode needs paths.dataset");
  if (cfg.out.empty()) throw ConfigError("decode needs paths.out");
  cfg.echo(artifact_dir(cfg));

  Model model = Model::load_checkpoint(cfg.checkpoint);
  if (model.config().arch == Arch::ar_baseline)
    throw ConfigError("decode expects a parallel checkpoint; use benchmark for the AR baseline");
  if (cfg.model_explicit) {
    const json pinned = json::parse(cfg.model_json);
    const bool vocab_off = pinned.contains("vocab") && cfg.model.vocab != model.config().vocab;
    const bool t_max_off = pinned.contains("t_max") && cfg.model.t_max != model.config().t_max;
    if (vocab_off || t_max_off)
      throw ConfigError("checkpoint/config mismatch: checkpoint has vocab=" +
                        std::to_string(model.config().vocab) + " t_max=" +
                        std::to_string(model.config().t_max));
  }

  std::vector<Example> data = load(cfg.dataset);
  validate_dataset_fits(data, model.config());
  std::vector<std::vector<int>> srcs;
  srcs.reserve(data.size());
  for (const Example& ex : data) srcs.push_back(ex.src);
  std::vector<DecodeResult> results = decode_batch(model, srcs, cfg.refine, cfg.workers);

  std::ofstream os(cfg.out, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + cfg.out);
  for (size_t i = 0; i < results.size(); ++i) {
    json j;
    j["src"] = data[i].src;
    j["hyp"] = strip_content(results[i].tokens);
    j["confidences"] = results[i].confidences;
    j["passes"] = results[i].passes;
    os << j.dump() << "\n";
  }
  if (!os) throw IoError("write failed: " + cfg.out);
  return "decoded " + std::to_string(results.size()) + " examples to " + cfg.out;
}

std::string evaluate(const std::string& hyps_path, const std::string& refs_path,
                     const std::string& out_dir) {
  if (!out_dir.empty()) {
    RunConfig echo_cfg;
    echo_cfg.dataset = refs_path;
    echo_cfg.out = hyps_path;
    echo_cfg.out_dir = out_dir;
    echo_cfg.echo(out_dir);
  }
  std::vector<TokenSeq> hyps = read_field(hyps_path, "hyp", "tgt");
  std::vector<TokenSeq> refs = read_field(refs_path, "tgt", "hyp");
  if (hyps.size() != refs.size())
    throw ConfigError("misaligned corpora: " + std::to_string(hyps.size()) + " hypotheses vs " +
                      std::to_string(refs.size()) + " references");
  return fnat::evaluate(hyps, refs).to_json();
}

std::string benchmark(const RunConfig& cfg) {
  if (cfg.checkpoint.empty() || cfg.ar_checkpoint.empty())
    throw ConfigError("benchmark needs paths.checkpoint (NAT) and paths.ar_checkpoint");
  if (cfg.dataset.empty()) throw ConfigError("benchmark needs paths.dataset");
  cfg.echo(artifact_dir(cfg));

  Model nat_model = Model::load_checkpoint(cfg.checkpoint);
  Model ar_model = Model::load_checkpoint(cfg.ar_checkpoint);
  if (nat_model.config().arch == Arch::ar_baseline)
    throw ConfigError("paths.checkpoint must be a parallel (fouriernat) checkpoint");
  if (ar_model.config().arch != Arch::ar_baseline)
    throw ConfigError("paths.ar_checkpoint must be an ar-baseline checkpoint");

  std::vector<Example> data = load(cfg.dataset);
  validate_dataset_fits(data, nat_model.config());
  BenchmarkReport rep = fnat::benchmark(nat_model, ar_model, data, cfg.batch_size, cfg.refine,
                                        cfg.workers);
  if (!cfg.out.empty()) {
    std::ofstream os(cfg.out, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + cfg.out);
    os << rep.to_json() << "\n";
  }
  return rep.to_json();
}

std::string distill(const RunConfig& cfg) {
  if (cfg.checkpoint.empty()) throw ConfigError("distill needs paths.checkpoint (the AR teacher)");
  if (cfg.dataset.empty() || cfg.out.empty()) throw ConfigError("distill needs paths.dataset and paths.out");
  cfg.echo(artifact_dir(cfg));

  Model teacher = Model::load_checkpoint(cfg.checkpoint);
  std::vector<Example> data = load(cfg.dataset);
  validate_dataset_fits(data, teacher.config());
  int truncated = 0;
  std::vector<Example> distilled = distill_generate(teacher, data, &truncated, cfg.workers);
  save(distilled, cfg.out);
  std::string msg = "distilled " + std::to_string(distilled.size()) + " examples to " + cfg.out;
  if (truncated > 0) msg += " (warning: " + std::to_string(truncated) + " teacher decodes truncated)";
  return msg;
}

int selfcheck(std::ostream& os, const SelfcheckFaults& faults) {
  const std::vector<CheckResult> results = run_selfcheck(faults);
  int failures = 0;
  for (const CheckResult& r : results) {
    os << (r.pass ? "[ok]   " : "[FAIL] ") << r.name << ": " << r.detail << "\n";
    if (!r.pass) ++failures;
  }
  os << (failures == 0 ? "selfcheck passed (" : "selfcheck FAILED (")
     << results.size() - static_cast<size_t>(failures) << "/" << results.size() << " checks)\n";
  return failures;
}

}  // namespace fnat::commands
