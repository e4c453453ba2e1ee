#include "fnat/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace fnat {

using nlohmann::json;

const char* task_kind_name(TaskKind k) {
  switch (k) {
    case TaskKind::copy: return "copy";
    case TaskKind::reverse: return "reverse";
    case TaskKind::sort: return "sort";
    case TaskKind::cipher: return "cipher";
  }
  return "?";
}

TaskKind task_kind_from_name(const std::string& name) {
  if (name == "copy") return TaskKind::copy;
  if (name == "reverse") return TaskKind::reverse;
  if (name == "sort") return TaskKind::sort;
  if (name == "cipher") return TaskKind::cipher;
  throw ConfigError("unknown task kind: " + name);
}

std::vector<int> cipher_permutation(const TaskSpec& spec) {
  std::vector<int> perm(static_cast<size_t>(spec.content_vocab));
  std::iota(perm.begin(), perm.end(), Vocabulary::kContentBegin);
  Rng rng = Rng(spec.seed).fork(0x70657261ULL);  // permutation stream
  for (size_t i = perm.size(); i > 1; --i) {
    const auto j = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1));
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

static void validate_spec(const TaskSpec& spec, int t_max) {
  if (spec.content_vocab < 1) throw ConfigError("task content_vocab must be >= 1");
  if (spec.min_len < 1 || spec.max_len < spec.min_len)
    throw ConfigError("task length range [" + std::to_string(spec.min_len) + "," +
                      std::to_string(spec.max_len) + "] is invalid");
  if (spec.max_len > t_max - 1)
    throw ConfigError("task max_len " + std::to_string(spec.max_len) + " leaves no room for EOS at t_max " +
                      std::to_string(t_max));
}

std::vector<Example> generate(const TaskSpec& spec, int n, int t_max, int skip) {
  if (n < 0 || skip < 0) throw ConfigError("generate: n and skip must be >= 0");
  validate_spec(spec, t_max);

  const std::vector<int> perm =
      spec.kind == TaskKind::cipher ? cipher_permutation(spec) : std::vector<int>{};
  Rng rng = Rng(spec.seed).fork(0x6578616dULL);  // example stream

  // fast-forward the stream past the skipped prefix
  for (int e = 0; e < skip; ++e) {
    const auto len = static_cast<size_t>(rng.uniform_int(spec.min_len, spec.max_len));
    for (size_t i = 0; i < len; ++i)
      rng.uniform_int(Vocabulary::kContentBegin, Vocabulary::kContentBegin + spec.content_vocab - 1);
  }

  std::vector<Example> out;
  out.reserve(static_cast<size_t>(n));
  for (int e = 0; e < n; ++e) {
    const auto len = static_cast<size_t>(rng.uniform_int(spec.min_len, spec.max_len));
    Example ex;
    ex.src.resize(len);
    for (auto& id : ex.src)
      id = static_cast<int>(rng.uniform_int(Vocabulary::kContentBegin,
                                            Vocabulary::kContentBegin + spec.content_vocab - 1));
    switch (spec.kind) {
      case TaskKind::copy:
        ex.tgt = ex.src;
        break;
      case TaskKind::reverse:
        ex.tgt.assign(ex.src.rbegin(), ex.src.rend());
        break;
      case TaskKind::sort:
        ex.tgt = ex.src;
        std::sort(ex.tgt.begin(), ex.tgt.end());
        break;
      case TaskKind::cipher: {
        ex.tgt.resize(len);
        for (size_t i = 0; i < len; ++i) {
          // sigma swaps adjacent pairs; an odd-length tail stays in place
          const size_t j = (i % 2 == 0) ? (i + 1 < len ? i + 1 : i) : i - 1;
          ex.tgt[i] = perm[static_cast<size_t>(ex.src[j] - Vocabulary::kContentBegin)];
        }
        break;
      }
    }
    ex.tgt.push_back(Vocabulary::EOS);
    out.push_back(std::move(ex));
  }
  return out;
}

void save(const std::vector<Example>& examples, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  for (const Example& ex : examples) {
    json j;
    j["src"] = ex.src;
    j["tgt"] = ex.tgt;
    os << j.dump() << "\n";
  }
  if (!os) throw IoError("write failed: " + path);
}

std::vector<Example> load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  std::vector<Example> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      Example ex;
      ex.src = j.at("src").get<std::vector<int>>();
      ex.tgt = j.at("tgt").get<std::vector<int>>();
      out.push_back(std::move(ex));
    } catch (const json::exception& e) {
      throw IoError(path + ":" + std::to_string(line_no) + ": malformed record: " + e.what());
    }
  }
  return out;
}

std::vector<Batch> make_batches(const std::vector<Example>& examples, int t_max,
                                int examples_per_batch, Rng& rng) {
  if (examples_per_batch < 1) throw ConfigError("examples_per_batch must be >= 1");
  std::vector<size_t> order(examples.size());
  std::iota(order.begin(), order.end(), size_t{0});
  for (size_t i = order.size(); i > 1; --i) {
    const auto j = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1));
    std::swap(order[i - 1], order[j]);
  }

  std::vector<Batch> batches;
  for (size_t base = 0; base < order.size(); base += static_cast<size_t>(examples_per_batch)) {
    const size_t end = std::min(order.size(), base + static_cast<size_t>(examples_per_batch));
    Batch b;
    size_t max_src = 0;
    for (size_t i = base; i < end; ++i) max_src = std::max(max_src, examples[order[i]].src.size());
    for (size_t i = base; i < end; ++i) {
      const Example& ex = examples[order[i]];
      if (static_cast<int>(ex.tgt.size()) > t_max)
        throw ConfigError("example " + std::to_string(order[i]) + " target length " +
                          std::to_string(ex.tgt.size()) + " exceeds t_max " + std::to_string(t_max));
      std::vector<int> src = ex.src;
      std::vector<uint8_t> smask(src.size(), 0);
      src.resize(max_src, Vocabulary::PAD);
      smask.resize(max_src, 1);

      std::vector<int> tgt = ex.tgt;
      std::vector<uint8_t> tmask(tgt.size(), 0);
      b.gold_lengths.push_back(static_cast<int>(tgt.size()));
      tgt.resize(static_cast<size_t>(t_max), Vocabulary::PAD);
      tmask.resize(static_cast<size_t>(t_max), 1);

      b.src_ids.push_back(std::move(src));
      b.src_pad_mask.push_back(std::move(smask));
      b.tgt_ids.push_back(std::move(tgt));
      b.tgt_pad_mask.push_back(std::move(tmask));
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace fnat
