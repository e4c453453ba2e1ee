#include <doctest.h>

#include <cstring>
#include <fstream>
#include <string>

#include "fnat/fnat_capi.h"
#include "fnat/selfcheck.hpp"
#include "test_util.hpp"

namespace {

std::string take(char* s) {
  REQUIRE(s != nullptr);
  std::string out(s);
  fnat_string_free(s);
  return out;
}

}  // namespace

TEST_CASE("capi selfcheck passes and reports every check") {
  char* report = nullptr;
  CHECK(fnat_selfcheck(&report) == FNAT_OK);
  const std::string text = take(report);
  int lines = 0;
  for (char c : text)
    if (c == '\n') ++lines;
  CHECK(lines >= 10);
  CHECK(text.find("[FAIL]") == std::string::npos);
}

TEST_CASE("selfcheck battery detects an injected iFFT sign fault") {
  fnat::SelfcheckFaults faults;
  faults.flip_ifft_sign = true;
  const auto results = fnat::run_selfcheck(faults);
  bool roundtrip_failed = false;
  for (const auto& r : results)
    if (r.name == "fft_roundtrip") roundtrip_failed = !r.pass;
  CHECK(roundtrip_failed);
}

TEST_CASE("capi pipeline: generate, train, decode, evaluate, benchmark, model handle") {
  fnat_test::TempDir tmp("capi");
  const std::string data_path = tmp.file("data.jsonl");
  const std::string nat_dir = tmp.file("nat");
  const std::string ar_dir = tmp.file("ar");

  const std::string base_model =
      R"("model": {"d": 16, "n_layers": 1, "n_heads": 2, "d_ff": 32, "vocab": 12, "t_max": 8, "s_max": 8})";

  // generate
  const std::string gen_cfg = std::string("{") +
                              R"("seed": 5, "task": {"kind": "copy", "content_vocab": 8, "min_len": 2, "max_len": 5, "n": 40}, )" +
                              R"("paths": {"out": ")" + data_path + R"("}})";
  char* msg = nullptr;
  REQUIRE(fnat_generate_data(gen_cfg.c_str(), &msg) == FNAT_OK);
  CHECK(take(msg).find("40") != std::string::npos);

  // train NAT briefly
  const std::string train_cfg = std::string("{") + R"("seed": 5, "workers": 2, )" + base_model +
                                R"(, "train": {"max_steps": 2, "tokens_per_batch": 64, "warmup_steps": 5, "eval_interval": 2, "val_examples": 4}, )" +
                                R"("paths": {"dataset": ")" + data_path + R"(", "out_dir": ")" +
                                nat_dir + R"("}})";
  REQUIRE(fnat_train(train_cfg.c_str(), &msg) == FNAT_OK);
  take(msg);
  CHECK(std::ifstream(nat_dir + "/curves.csv").good());
  CHECK(std::ifstream(nat_dir + "/run_config.json").good());

  // train AR baseline briefly
  const std::string ar_cfg = std::string("{") + R"("seed": 6, "arch": "ar-baseline", "workers": 2, )" +
                             base_model +
                             R"(, "train": {"max_steps": 2, "tokens_per_batch": 64, "warmup_steps": 5, "eval_interval": 2, "val_examples": 4}, )" +
                             R"("paths": {"dataset": ")" + data_path + R"(", "out_dir": ")" + ar_dir +
                             R"("}})";
  REQUIRE(fnat_train(ar_cfg.c_str(), &msg) == FNAT_OK);
  take(msg);

  // decode
  const std::string hyp_path = tmp.file("hyps.jsonl");
  const std::string dec_cfg = std::string("{") + R"("workers": 2, "refine": {"passes": 1}, )" +
                              R"("paths": {"checkpoint": ")" + nat_dir + R"(/checkpoint_last.fnat", )" +
                              R"("dataset": ")" + data_path + R"(", "out": ")" + hyp_path + R"("}})";
  REQUIRE(fnat_decode(dec_cfg.c_str(), &msg) == FNAT_OK);
  take(msg);
  {
    std::ifstream is(hyp_path);
    std::string line;
    REQUIRE(std::getline(is, line));
    CHECK(line.find("\"passes\":2") != std::string::npos);
    CHECK(line.find("\"hyp\"") != std::string::npos);
    CHECK(line.find("\"confidences\"") != std::string::npos);
  }

  // evaluate: a file against itself is a perfect corpus
  char* report = nullptr;
  REQUIRE(fnat_evaluate(data_path.c_str(), data_path.c_str(), nullptr, &report) == FNAT_OK);
  const std::string rep = take(report);
  CHECK(rep.find("\"sequence_accuracy\":1.0") != std::string::npos);

  // benchmark
  const std::string bench_cfg = std::string("{") + R"("batch_size": 8, )" +
                                R"("paths": {"checkpoint": ")" + nat_dir +
                                R"(/checkpoint_last.fnat", "ar_checkpoint": ")" + ar_dir +
                                R"(/checkpoint_last.fnat", "dataset": ")" + data_path + R"("}})";
  REQUIRE(fnat_benchmark(bench_cfg.c_str(), &report) == FNAT_OK);
  CHECK(take(report).find("\"speedup\"") != std::string::npos);

  // distill through the teacher
  const std::string distilled_path = tmp.file("distilled.jsonl");
  const std::string dist_cfg = std::string("{") + R"("paths": {"checkpoint": ")" + ar_dir +
                               R"(/checkpoint_last.fnat", "dataset": ")" + data_path +
                               R"(", "out": ")" + distilled_path + R"("}})";
  REQUIRE(fnat_distill(dist_cfg.c_str(), &msg) == FNAT_OK);
  take(msg);
  CHECK(std::ifstream(distilled_path).good());

  // opaque model handle
  fnat_model* model = nullptr;
  const std::string ckpt = nat_dir + "/checkpoint_last.fnat";
  REQUIRE(fnat_model_load(ckpt.c_str(), &model) == FNAT_OK);
  char* cfg_json = nullptr;
  REQUIRE(fnat_model_config(model, &cfg_json) == FNAT_OK);
  CHECK(take(cfg_json).find("\"t_max\":8") != std::string::npos);

  const int32_t src[3] = {4, 5, 6};
  int32_t tokens[8];
  double confidences[8];
  size_t length = 0;
  int passes = 0;
  REQUIRE(fnat_model_decode(model, src, 3, 1, 0.3, tokens, &length, confidences, &passes) == FNAT_OK);
  CHECK(length >= 1);
  CHECK(length <= 8);
  CHECK(passes == 2);
  for (size_t i = 0; i < length; ++i) {
    CHECK(tokens[i] != 0);  // never PAD
    CHECK(confidences[i] > 0.0);
    CHECK(confidences[i] <= 1.0);
  }
  fnat_model_free(model);
}

TEST_CASE("capi error contract") {
  CHECK(std::strlen(fnat_version()) > 0);

  // return codes are the CLI exit codes, a stable contract
  CHECK(FNAT_OK == 0);
  CHECK(FNAT_E_CHECK == 1);
  CHECK(FNAT_E_CONFIG == 2);
  CHECK(FNAT_E_NUMERIC == 3);

  char* msg = nullptr;
  CHECK(fnat_train("{not json", &msg) == FNAT_E_CONFIG);
  CHECK(std::strlen(fnat_last_error()) > 0);

  CHECK(fnat_train(R"({"unknown_key": 1})", &msg) == FNAT_E_CONFIG);

  fnat_model* model = nullptr;
  CHECK(fnat_model_load("/nonexistent/path.fnat", &model) == FNAT_E_CONFIG);

  char* report = nullptr;
  CHECK(fnat_evaluate("/nonexistent/a", "/nonexistent/b", nullptr, &report) == FNAT_E_CONFIG);
}
