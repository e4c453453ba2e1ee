#pragma once

#include <iosfwd>
#include <string>

#include "fnat/data.hpp"
#include "fnat/decoding.hpp"
#include "fnat/model.hpp"
#include "fnat/selfcheck.hpp"
#include "fnat/training.hpp"

namespace fnat::commands {

// Fully-merged run configuration; a JSON object with optional sections
// "model", "train", "task", "refine", "paths" plus top-level seed/workers/
// arch/batch_size. Unknown keys are rejected to keep run records honest.
struct RunConfig {
  uint64_t seed = 1;
  int workers = 2;
  int batch_size = 16;
  Arch arch = Arch::fouriernat;

  ModelConfig model;
  bool model_explicit = false;   // a model section was given
  std::string model_json;        // its raw keys (decode validates only pinned fields)
  TrainConfig train;
  TaskSpec task;
  int task_n = 1000;
  int task_skip = 0;
  RefineConfig refine;

  std::string dataset;
  std::string val_dataset;
  std::string checkpoint;
  std::string ar_checkpoint;
  std::string out;      // primary output file
  std::string out_dir;  // artifact directory

  static RunConfig from_json(const std::string& text);
  std::string effective_json() const;

  // Writes the merged config (with seed) as run_config.json into `dir`.
  void echo(const std::string& dir) const;
};

// Each command returns the line(s) it wants printed on stdout.
std::string generate_data(const RunConfig& cfg);
std::string train(const RunConfig& cfg);
std::string decode(const RunConfig& cfg);
std::string evaluate(const std::string& hyps_path, const std::string& refs_path,
                     const std::string& out_dir = "");
std::string benchmark(const RunConfig& cfg);
std::string distill(const RunConfig& cfg);

// Prints one status line per check; returns the number of failures.
int selfcheck(std::ostream& os, const SelfcheckFaults& faults = {});

}  // namespace fnat::commands
