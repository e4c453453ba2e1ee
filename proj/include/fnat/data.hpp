#pragma once

#include <string>
#include <vector>

#include "fnat/tensor.hpp"

namespace fnat {

// Fixed special ids shared by every task and model.
struct Vocabulary {
  static constexpr int PAD = 0;
  static constexpr int BOS = 1;
  static constexpr int EOS = 2;
  static constexpr int MASK = 3;
  static constexpr int kContentBegin = 4;

  int size = 0;

  explicit Vocabulary(int v) : size(v) {
    if (v < kContentBegin + 1) throw ConfigError("vocabulary needs >= 5 ids (4 specials + content)");
  }
  int content_ids() const { return size - kContentBegin; }
  bool valid(int id) const { return id >= 0 && id < size; }
};

struct Example {
  std::vector<int> src;  // content ids only
  std::vector<int> tgt;  // content ids followed by EOS

  bool operator==(const Example&) const = default;
};

enum class TaskKind { copy, reverse, sort, cipher };

const char* task_kind_name(TaskKind k);
TaskKind task_kind_from_name(const std::string& name);

struct TaskSpec {
  TaskKind kind = TaskKind::copy;
  int content_vocab = 32;
  int min_len = 4;
  int max_len = 12;
  uint64_t seed = 1;
};

// The content-id substitution used by the cipher task, derived from the seed
// alone; index i holds the image of content id (kContentBegin + i).
std::vector<int> cipher_permutation(const TaskSpec& spec);

// Deterministic task sampler. Targets always end with EOS; max_len must leave
// room for it within t_max. `skip` discards that many leading examples of the
// stream first, so one seed can yield disjoint, task-consistent splits (the
// cipher substitution depends on the seed; splits must share it).
std::vector<Example> generate(const TaskSpec& spec, int n, int t_max, int skip = 0);

// Line-delimited records: {"src":[...],"tgt":[...]}, one per line.
void save(const std::vector<Example>& examples, const std::string& path);
std::vector<Example> load(const std::string& path);

struct Batch {
  // B x S_batch source ids (PAD-filled) and B x t_max target ids.
  std::vector<std::vector<int>> src_ids;
  std::vector<std::vector<int>> tgt_ids;
  std::vector<std::vector<uint8_t>> src_pad_mask;  // 1 where PAD
  std::vector<std::vector<uint8_t>> tgt_pad_mask;  // 1 where PAD
  std::vector<int> gold_lengths;                   // non-pad target length incl. EOS

  int size() const { return static_cast<int>(src_ids.size()); }
};

std::vector<Batch> make_batches(const std::vector<Example>& examples, int t_max,
                                int examples_per_batch, Rng& rng);

}  // namespace fnat
