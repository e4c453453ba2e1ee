#include "fnat/fnat_capi.h"

#include <cstdlib>
#include <cstring>
#include <vector>
#include <sstream>
#include <string>

#include "fnat/commands.hpp"

namespace {

thread_local std::string t_last_error;

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void set_out(char** out, const std::string& s) {
  if (out) *out = dup_string(s);
}

fnat_rc classify(const std::exception& e) {
  using namespace fnat;
  if (dynamic_cast<const NumericError*>(&e)) return FNAT_E_NUMERIC;
  if (dynamic_cast<const CheckError*>(&e)) return FNAT_E_CHECK;
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const DimError*>(&e) ||
      dynamic_cast<const VocabError*>(&e) || dynamic_cast<const IoError*>(&e))
    return FNAT_E_CONFIG;
  // anything unexpected is treated as a failed internal check
  return FNAT_E_CHECK;
}

template <typename Fn>
fnat_rc guarded(Fn&& fn) {
  try {
    t_last_error.clear();
    return fn();
  } catch (const std::exception& e) {
    t_last_error = e.what();
    return classify(e);
  } catch (...) {
    t_last_error = "unknown error";
    return FNAT_E_CHECK;
  }
}

fnat_rc run_command(const char* config_json, char** message_out,
                    std::string (*cmd)(const fnat::commands::RunConfig&)) {
  return guarded([&]() -> fnat_rc {
    auto cfg = fnat::commands::RunConfig::from_json(config_json ? config_json : "");
    set_out(message_out, cmd(cfg));
    return FNAT_OK;
  });
}

}  // namespace

struct fnat_model {
  fnat::Model impl;
};

extern "C" {

const char* fnat_version(void) { return "fouriernat 1.0.0"; }

const char* fnat_last_error(void) { return t_last_error.c_str(); }

void fnat_string_free(char* s) { std::free(s); }

fnat_rc fnat_generate_data(const char* config_json, char** message_out) {
  return run_command(config_json, message_out, &fnat::commands::generate_data);
}

fnat_rc fnat_train(const char* config_json, char** message_out) {
  return run_command(config_json, message_out, &fnat::commands::train);
}

fnat_rc fnat_decode(const char* config_json, char** message_out) {
  return run_command(config_json, message_out, &fnat::commands::decode);
}

fnat_rc fnat_benchmark(const char* config_json, char** report_json_out) {
  return run_command(config_json, report_json_out, &fnat::commands::benchmark);
}

fnat_rc fnat_distill(const char* config_json, char** message_out) {
  return run_command(config_json, message_out, &fnat::commands::distill);
}

fnat_rc fnat_evaluate(const char* hyps_path, const char* refs_path, const char* out_dir,
                      char** report_json_out) {
  return guarded([&]() -> fnat_rc {
    if (!hyps_path || !refs_path) throw fnat::ConfigError("evaluate needs both file paths");
    set_out(report_json_out, fnat::commands::evaluate(hyps_path, refs_path, out_dir ? out_dir : ""));
    return FNAT_OK;
  });
}

fnat_rc fnat_selfcheck(char** report_out) {
  return guarded([&]() -> fnat_rc {
    std::ostringstream os;
    const int failures = fnat::commands::selfcheck(os);
    set_out(report_out, os.str());
    if (failures != 0) {
      t_last_error = std::to_string(failures) + " selfcheck failure(s)";
      return FNAT_E_CHECK;
    }
    return FNAT_OK;
  });
}

fnat_rc fnat_model_load(const char* checkpoint_path, fnat_model** model_out) {
  return guarded([&]() -> fnat_rc {
    if (!checkpoint_path || !model_out) throw fnat::ConfigError("model_load needs a path and out pointer");
    *model_out = new fnat_model{fnat::Model::load_checkpoint(checkpoint_path)};
    return FNAT_OK;
  });
}

void fnat_model_free(fnat_model* model) { delete model; }

fnat_rc fnat_model_config(const fnat_model* model, char** config_json_out) {
  return guarded([&]() -> fnat_rc {
    if (!model) throw fnat::ConfigError("null model handle");
    set_out(config_json_out, model->impl.config().to_json());
    return FNAT_OK;
  });
}

fnat_rc fnat_model_decode(const fnat_model* model, const int32_t* src, size_t src_len, int passes,
                          double mask_ratio, int32_t* tokens_out, size_t* length_out,
                          double* confidences_out, int* passes_out) {
  return guarded([&]() -> fnat_rc {
    if (!model || !src || !tokens_out || !length_out)
      throw fnat::ConfigError("model_decode needs model, src, tokens_out and length_out");
    std::vector<int> src_ids(src, src + src_len);
    fnat::DecodeResult res = fnat::single_pass(model->impl, src_ids);
    fnat::RefineConfig rc;
    rc.n_passes = passes;
    rc.mask_ratio = mask_ratio;
    if (passes > 0) res = fnat::refine(model->impl, src_ids, std::move(res), rc);
    *length_out = res.tokens.size();
    for (size_t i = 0; i < res.tokens.size(); ++i) tokens_out[i] = res.tokens[i];
    if (confidences_out)
      for (size_t i = 0; i < res.confidences.size(); ++i) confidences_out[i] = res.confidences[i];
    if (passes_out) *passes_out = res.passes;
    return FNAT_OK;
  });
}

}  // extern "C"
