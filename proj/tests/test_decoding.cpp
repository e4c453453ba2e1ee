#include <doctest.h>

#include <cmath>

#include "fnat/decoding.hpp"
#include "test_util.hpp"

using namespace fnat;

namespace {

ModelConfig bench_config(Arch arch = Arch::fouriernat) {
  ModelConfig cfg;
  cfg.d = 16;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.vocab = 12;
  cfg.t_max = 8;
  cfg.s_max = 8;
  cfg.dropout = 0.0;
  cfg.arch = arch;
  return cfg;
}

}  // namespace

TEST_CASE("select_lowest_confidence rules") {
  CHECK(select_lowest_confidence({0.9, 0.2, 0.8}, 1) == std::vector<int64_t>{1});
  CHECK(select_lowest_confidence({0.5, 0.5, 0.5}, 2) == std::vector<int64_t>{0, 1});
  CHECK(select_lowest_confidence({0.3, 0.9, 0.3}, 2) == std::vector<int64_t>{0, 2});
  CHECK(select_lowest_confidence({0.1}, 5) == std::vector<int64_t>{0});
  CHECK(select_lowest_confidence({0.1, 0.2}, 0).empty());
}

TEST_CASE("single_pass") {
  SUBCASE("zero parameters: tie rule and uniform confidences") {
    Model m(bench_config(), 3);
    for (Parameter& p : m.params()) p.value.fill(0);
    m.reset_counters();
    DecodeResult res = single_pass(m, {4, 5, 6});
    CHECK(m.nat_forwards() == 1);
    CHECK(res.passes == 1);
    // uniform logits: every position resolves to the lowest non-PAD id
    for (int tok : res.tokens) CHECK(tok == Vocabulary::BOS);
    for (double c : res.confidences) CHECK(c == doctest::Approx(1.0 / 12.0).epsilon(1e-12));
    // uniform length head picks the shortest length
    CHECK(res.tokens.size() == 1);
  }

  SUBCASE("deterministic given the model and source") {
    Model m(bench_config(), 9);
    DecodeResult a = single_pass(m, {4, 5, 6, 7});
    DecodeResult b = single_pass(m, {4, 5, 6, 7});
    CHECK(a.tokens == b.tokens);
    CHECK(a.confidences == b.confidences);
    CHECK(a.passes == b.passes);
  }
}

TEST_CASE("refine") {
  Model m(bench_config(), 17);
  const std::vector<int> src{4, 5, 6, 7, 8};

  SUBCASE("zero passes returns the input unchanged") {
    DecodeResult res = single_pass(m, src);
    DecodeResult same = refine(m, src, res, RefineConfig{0, 0.3});
    CHECK(same.tokens == res.tokens);
    CHECK(same.confidences == res.confidences);
    CHECK(same.passes == 1);
  }

  SUBCASE("mask_ratio out of range is a config error") {
    DecodeResult res = single_pass(m, src);
    CHECK_THROWS_AS(refine(m, src, res, RefineConfig{1, 1.0}), ConfigError);
  }

  SUBCASE("only masked positions may change; the rest is bit-exact") {
    DecodeResult before = single_pass(m, src);
    const auto len = static_cast<int64_t>(before.tokens.size());
    const auto k = static_cast<int64_t>(std::ceil(0.4 * static_cast<double>(len)));
    const std::vector<int64_t> masked = select_lowest_confidence(before.confidences, k);

    m.reset_counters();
    DecodeResult after = refine(m, src, before, RefineConfig{1, 0.4});
    CHECK(after.passes == 2);
    CHECK(m.nat_forwards() == 1);
    REQUIRE(after.tokens.size() == before.tokens.size());

    size_t mi = 0;
    for (int64_t t = 0; t < len; ++t) {
      const bool is_masked = mi < masked.size() && masked[mi] == t;
      if (is_masked) {
        ++mi;
        continue;  // re-predicted; may or may not change
      }
      CHECK(after.tokens[static_cast<size_t>(t)] == before.tokens[static_cast<size_t>(t)]);
      CHECK(after.confidences[static_cast<size_t>(t)] == before.confidences[static_cast<size_t>(t)]);
    }
  }

  SUBCASE("each pass with ratio > 0 costs exactly one decoder forward") {
    m.reset_counters();
    DecodeResult res = single_pass(m, src);
    CHECK(m.nat_forwards() == 1);
    res = refine(m, src, res, RefineConfig{2, 0.3});
    CHECK(m.nat_forwards() == 3);
    CHECK(res.passes == 3);

    // ratio 0 skips the forward but still counts the pass
    m.reset_counters();
    DecodeResult res2 = single_pass(m, src);
    res2 = refine(m, src, res2, RefineConfig{1, 0.0});
    CHECK(m.nat_forwards() == 1);
    CHECK(res2.passes == 2);
  }
}

TEST_CASE("ar_greedy") {
  ModelConfig cfg = bench_config(Arch::ar_baseline);

  SUBCASE("max_len 0 yields an empty sequence") {
    Model m(cfg, 5);
    CHECK(ar_greedy(m, {4, 5}, 0).empty());
  }

  SUBCASE("a model that always emits EOS yields empty content in one step") {
    Model m(cfg, 5);
    m.params().find("proj.b")->value[Vocabulary::EOS] = 50;
    m.reset_counters();
    CHECK(ar_greedy(m, {4, 5}, 8).empty());
    CHECK(m.ar_step_forwards() == 1);
  }

  SUBCASE("n emitted positions cost exactly n step calls") {
    Model m(cfg, 5);
    m.params().find("proj.b")->value[5] = 50;  // always emits token 5, never EOS
    m.reset_counters();
    const std::vector<int> out = ar_greedy(m, {4, 5}, 8);
    CHECK(out.size() == 8);
    CHECK(m.ar_step_forwards() == 8);
    for (int tok : out) CHECK(tok == 5);
  }
}

TEST_CASE("decode_batch counts one forward per pass per batch") {
  Model m(bench_config(), 29);
  std::vector<std::vector<int>> srcs;
  for (int i = 0; i < 7; ++i) srcs.push_back({4, 5, static_cast<int>(4 + i % 6)});

  m.reset_counters();
  auto results = decode_batch(m, srcs, RefineConfig{0, 0.3}, 2);
  CHECK(results.size() == 7);
  CHECK(m.nat_forwards() == 1);

  m.reset_counters();
  decode_batch(m, srcs, RefineConfig{1, 0.3}, 2);
  CHECK(m.nat_forwards() == 2);

  // batched decoding agrees with per-example decoding
  for (size_t i = 0; i < srcs.size(); ++i) {
    DecodeResult one = single_pass(m, srcs[i]);
    CHECK(one.tokens == results[i].tokens);
  }
}

TEST_CASE("benchmark") {
  Model nat(bench_config(), 7);
  Model ar(bench_config(Arch::ar_baseline), 7);
  TaskSpec task;
  task.content_vocab = 8;
  task.min_len = 2;
  task.max_len = 5;
  task.seed = 4;
  auto data = generate(task, 12, 8);

  SUBCASE("forward counts and speedup identity") {
    BenchmarkReport rep = benchmark(nat, ar, data, 4, RefineConfig{0, 0.3}, 1);
    CHECK(rep.nat_forwards == 3);  // 12 examples / batch 4
    CHECK(rep.ar_forwards == ar.ar_step_forwards());
    CHECK(rep.speedup == rep.nat_tokens_per_s / rep.ar_tokens_per_s);
    CHECK(rep.batch_size == 4);
    CHECK(rep.workers == 1);

    // refinement with one pass exactly doubles the NAT forwards
    BenchmarkReport rep2 = benchmark(nat, ar, data, 4, RefineConfig{1, 0.3}, 1);
    CHECK(rep2.nat_forwards == 6);
  }

  SUBCASE("report json carries exactly the specified keys") {
    BenchmarkReport rep = benchmark(nat, ar, data, 6, RefineConfig{0, 0.3}, 2);
    const std::string j = rep.to_json();
    for (const char* key : {"nat_tokens_per_s", "ar_tokens_per_s", "speedup", "nat_forwards",
                            "ar_forwards", "batch_size", "workers"})
      CHECK(j.find(std::string("\"") + key + "\"") != std::string::npos);
  }

  SUBCASE("contract violations") {
    CHECK_THROWS_AS(benchmark(nat, ar, {}, 4, RefineConfig{}, 1), ConfigError);
    ModelConfig other = bench_config(Arch::ar_baseline);
    other.vocab = 20;
    Model mismatched(other, 1);
    CHECK_THROWS_AS(benchmark(nat, mismatched, data, 4, RefineConfig{}, 1), ConfigError);
  }
}
