#pragma once

#include <atomic>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fnat/autograd.hpp"
#include "fnat/data.hpp"

namespace fnat {

enum class Arch { fouriernat, ar_baseline, fouriernat_nogate };
enum class DraftInit { zeros, mask_embedding };

const char* arch_name(Arch a);
Arch arch_from_name(const std::string& s);
const char* draft_init_name(DraftInit d);
DraftInit draft_init_from_name(const std::string& s);

struct ModelConfig {
  int d = 64;
  int n_layers = 2;
  int n_heads = 4;
  int d_ff = 256;
  int vocab = 64;
  int t_max = 16;  // padded target length, power of two
  int s_max = 32;
  double dropout = 0.1;
  DraftInit draft_init = DraftInit::mask_embedding;
  bool combine_imag = false;
  double ln_eps = 1e-6;
  Arch arch = Arch::fouriernat;

  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& s);

  // Full-scale architecture (d=512, 6 layers, 8 heads, d_ff=2048).
  static ModelConfig full_preset();
};

struct EncoderState {
  Tensor h;                       // S x d
  std::vector<uint8_t> pad_mask;  // 1 where PAD
  int valid_rows() const;
};

struct DecoderTrace {
  std::vector<Tensor> z_per_layer;  // L+1 entries: draft, then each layer output
  Tensor logits;                    // t_max x V
};

// Per-forward context shared by all graph builders.
struct Fwd {
  ad::Tape& tape;
  bool training = false;
  bool track_grads = false;
  Rng* dropout_rng = nullptr;  // required when training with dropout > 0
};

// ---- value-level layer builders (also the grad_check targets) ---------------

struct AttnV {
  ad::Value wq, bq, wk, bk, wv, bv, wo, bo;
};
struct LnV {
  ad::Value gain, bias;
};
struct FfnV {
  ad::Value w1, b1, w2, b2;
};

// Multi-head scaled dot-product attention; key_pad marks excluded source
// columns, causal restricts each query to keys at or before its own position.
ad::Value attention_g(ad::Tape& t, ad::Value q_in, ad::Value kv_in, const AttnV& p, int n_heads,
                      const std::vector<uint8_t>* key_pad = nullptr, bool causal = false);
ad::Value ffn_g(ad::Tape& t, ad::Value x, const FfnV& p);
ad::Value layer_norm_g(ad::Tape& t, ad::Value x, const LnV& p, real_t eps);

struct NatLayerV {
  LnV ln1;
  AttnV cross;
  LnV ln2;
  ad::Value g_real, g_imag;
  std::optional<ad::Value> w_ri;  // combine_imag projection, 2d x d
  LnV ln3;
  FfnV ffn;
};

// One FourierNAT decoder layer: pre-LN residual blocks around cross-attention,
// FourierMixing and the position-wise FFN.
ad::Value nat_decoder_layer_g(Fwd& f, ad::Value z, ad::Value enc_h,
                              const std::vector<uint8_t>* enc_pad, const NatLayerV& p, int n_heads,
                              real_t ln_eps, double dropout_rate);

// ---- model -------------------------------------------------------------------

class Model {
 public:
  Model(ModelConfig cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  // Graph builders. All of them accept token ids and produce tape values;
  // training and inference share the same code path.
  ad::Value embed_g(Fwd& f, const std::vector<int>& ids, bool source) const;
  ad::Value encode_g(Fwd& f, const std::vector<int>& src,
                     const std::vector<uint8_t>* pad = nullptr) const;
  // Draft construction: with no feedback the configured draft_init is used for
  // every position; with feedback, unmasked positions carry their token
  // embeddings and masked ones the MASK embedding.
  ad::Value draft_g(Fwd& f, const std::vector<int>* feedback,
                    const std::vector<uint8_t>* masked) const;
  ad::Value nat_stack_g(Fwd& f, ad::Value draft, ad::Value enc_h,
                        const std::vector<uint8_t>* enc_pad, DecoderTrace* trace = nullptr) const;
  ad::Value project_g(Fwd& f, ad::Value z) const;  // z -> logits
  ad::Value length_logits_g(Fwd& f, ad::Value enc_h, int valid_rows) const;
  // Causal decoder stack over an embedded prefix (AR baseline only).
  ad::Value ar_stack_g(Fwd& f, ad::Value tgt_emb, ad::Value enc_h,
                       const std::vector<uint8_t>* enc_pad) const;
  ad::Value ar_logits_g(Fwd& f, const std::vector<int>& tgt_in, ad::Value enc_h,
                        const std::vector<uint8_t>* enc_pad) const;

  // Inference entry points.
  EncoderState encode(const std::vector<int>& src) const;
  DecoderTrace decode_parallel(const EncoderState& enc) const;  // counts one forward
  DecoderTrace decode_parallel_draft(const EncoderState& enc, const std::vector<int>& feedback,
                                     const std::vector<uint8_t>& masked) const;
  // Stack forward without touching the counter; batched decoding counts the
  // batch invocation itself.
  DecoderTrace decode_parallel_uncounted(const EncoderState& enc, const std::vector<int>* feedback,
                                         const std::vector<uint8_t>* masked) const;
  Tensor predict_length(const EncoderState& enc) const;  // [t_max] probabilities
  Tensor ar_decode_step(const EncoderState& enc, const std::vector<int>& prefix) const;  // [V] logits

  // Decoder-forward instrumentation. A batched parallel decode counts once;
  // every ar_decode_step call counts once.
  void count_nat_forward() const { ++counters_->nat; }
  uint64_t nat_forwards() const { return counters_->nat.load(); }
  uint64_t ar_step_forwards() const { return counters_->ar.load(); }
  void reset_counters() const;

  // Parameter-value handles for the current tape.
  NatLayerV nat_layer_values(ad::Tape& t, bool track_grads, int layer) const;

  void save_checkpoint(const std::string& path) const;
  static Model load_checkpoint(const std::string& path);

  const Parameter& gate_real(int layer) const;
  const Parameter& gate_imag(int layer) const;

 private:
  struct AttnP {
    int wq, bq, wk, bk, wv, bv, wo, bo;
  };
  struct LnP {
    int gain, bias;
  };
  struct FfnP {
    int w1, b1, w2, b2;
  };
  struct EncLayerP {
    LnP ln1;
    AttnP self;
    LnP ln2;
    FfnP ffn;
  };
  struct NatLayerP {
    LnP ln1;
    AttnP cross;
    LnP ln2;
    int g_real, g_imag;
    int w_ri = -1;
    LnP ln3;
    FfnP ffn;
  };
  struct ArLayerP {
    LnP ln1;
    AttnP self;
    LnP ln2;
    AttnP cross;
    LnP ln3;
    FfnP ffn;
  };

  void build_params(uint64_t seed);
  AttnP add_attn(const std::string& prefix, Rng& rng);
  LnP add_ln(const std::string& prefix);
  FfnP add_ffn(const std::string& prefix, Rng& rng);
  ad::Value pv(ad::Tape& t, bool track, int index) const;  // param or frozen constant
  AttnV attn_values(ad::Tape& t, bool track, const AttnP& p) const;
  LnV ln_values(ad::Tape& t, bool track, const LnP& p) const;
  FfnV ffn_values(ad::Tape& t, bool track, const FfnP& p) const;

  struct ForwardCounters {
    std::atomic<uint64_t> nat{0};
    std::atomic<uint64_t> ar{0};
  };

  ModelConfig cfg_;
  ParamStore store_;
  int src_tok_ = -1, src_pos_ = -1, tgt_tok_ = -1, tgt_pos_ = -1;
  std::vector<EncLayerP> enc_layers_;
  std::vector<NatLayerP> nat_layers_;
  std::vector<ArLayerP> ar_layers_;
  int proj_w_ = -1, proj_b_ = -1, len_w_ = -1, len_b_ = -1;

  mutable std::unique_ptr<ForwardCounters> counters_ = std::make_unique<ForwardCounters>();
};

}  // namespace fnat
