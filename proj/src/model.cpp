#include "fnat/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "fnat/spectral.hpp"

namespace fnat {

using nlohmann::json;
namespace g = fnat::ad;

const char* arch_name(Arch a) {
  switch (a) {
    case Arch::fouriernat: return "fouriernat";
    case Arch::ar_baseline: return "ar-baseline";
    case Arch::fouriernat_nogate: return "fouriernat-nogate";
  }
  return "?";
}

Arch arch_from_name(const std::string& s) {
  if (s == "fouriernat") return Arch::fouriernat;
  if (s == "ar-baseline") return Arch::ar_baseline;
  if (s == "fouriernat-nogate") return Arch::fouriernat_nogate;
  throw ConfigError("unknown arch: " + s);
}

const char* draft_init_name(DraftInit d) {
  return d == DraftInit::zeros ? "zeros" : "mask_embedding";
}

DraftInit draft_init_from_name(const std::string& s) {
  if (s == "zeros") return DraftInit::zeros;
  if (s == "mask_embedding") return DraftInit::mask_embedding;
  throw ConfigError("unknown draft_init: " + s);
}

void ModelConfig::validate() const {
  if (d < 1 || n_layers < 1 || n_heads < 1 || d_ff < 1) throw ConfigError("model dims must be positive");
  if (d % n_heads != 0)
    throw ConfigError("d=" + std::to_string(d) + " not divisible by n_heads=" + std::to_string(n_heads));
  if (vocab < 5) throw ConfigError("vocab must be >= 5 (4 specials + content)");
  if (!is_power_of_two(t_max))
    throw ConfigError("t_max must be a power of two, got " + std::to_string(t_max));
  if (s_max < 1) throw ConfigError("s_max must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0,1)");
  if (ln_eps <= 0.0) throw ConfigError("ln_eps must be positive");
}

std::string ModelConfig::to_json() const {
  json j;
  j["d"] = d;
  j["n_layers"] = n_layers;
  j["n_heads"] = n_heads;
  j["d_ff"] = d_ff;
  j["vocab"] = vocab;
  j["t_max"] = t_max;
  j["s_max"] = s_max;
  j["dropout"] = dropout;
  j["draft_init"] = draft_init_name(draft_init);
  j["combine_imag"] = combine_imag;
  j["ln_eps"] = ln_eps;
  j["arch"] = arch_name(arch);
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& s) {
  ModelConfig c;
  json j;
  try {
    j = json::parse(s);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad model config json: ") + e.what());
  }
  c.d = j.value("d", c.d);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.vocab = j.value("vocab", c.vocab);
  c.t_max = j.value("t_max", c.t_max);
  c.s_max = j.value("s_max", c.s_max);
  c.dropout = j.value("dropout", c.dropout);
  if (j.contains("draft_init")) c.draft_init = draft_init_from_name(j["draft_init"].get<std::string>());
  c.combine_imag = j.value("combine_imag", c.combine_imag);
  c.ln_eps = j.value("ln_eps", c.ln_eps);
  if (j.contains("arch")) c.arch = arch_from_name(j["arch"].get<std::string>());
  c.validate();
  return c;
}

ModelConfig ModelConfig::full_preset() {
  ModelConfig c;
  c.d = 512;
  c.n_layers = 6;
  c.n_heads = 8;
  c.d_ff = 2048;
  return c;
}

int EncoderState::valid_rows() const {
  int n = 0;
  for (uint8_t m : pad_mask)
    if (!m) ++n;
  return n;
}

// ---- layer builders ----------------------------------------------------------

ad::Value layer_norm_g(ad::Tape& t, ad::Value x, const LnV& p, real_t eps) {
  return g::layer_norm(t, x, p.gain, p.bias, eps);
}

ad::Value ffn_g(ad::Tape& t, ad::Value x, const FfnV& p) {
  ad::Value h = g::relu(t, g::add_row_bias(t, g::matmul(t, x, p.w1), p.b1));
  return g::add_row_bias(t, g::matmul(t, h, p.w2), p.b2);
}

ad::Value attention_g(ad::Tape& t, ad::Value q_in, ad::Value kv_in, const AttnV& p, int n_heads,
                      const std::vector<uint8_t>* key_pad, bool causal) {
  const int64_t d = t.val(q_in).cols();
  if (d % n_heads != 0) throw DimError("attention width not divisible by head count");
  const int64_t dh = d / n_heads;
  const int64_t tq = t.val(q_in).rows();
  const int64_t tk = t.val(kv_in).rows();
  if (key_pad && static_cast<int64_t>(key_pad->size()) != tk)
    throw DimError("key pad mask length " + std::to_string(key_pad->size()) + " vs " +
                   std::to_string(tk) + " keys");

  ad::Value q = g::add_row_bias(t, g::matmul(t, q_in, p.wq), p.bq);
  ad::Value k = g::add_row_bias(t, g::matmul(t, kv_in, p.wk), p.bk);
  ad::Value v = g::add_row_bias(t, g::matmul(t, kv_in, p.wv), p.bv);

  Tensor mask;
  bool any_mask = false;
  if (key_pad || causal) {
    mask = Tensor({tq, tk});
    for (int64_t i = 0; i < tq; ++i)
      for (int64_t j = 0; j < tk; ++j) {
        const bool padded = key_pad && (*key_pad)[static_cast<size_t>(j)];
        const bool future = causal && j > i;
        if (padded || future) {
          mask.at(i, j) = real_t(-1e30);
          any_mask = true;
        }
      }
  }

  const real_t inv_sqrt_dh = real_t(1) / std::sqrt(static_cast<real_t>(dh));
  std::vector<ad::Value> heads;
  heads.reserve(static_cast<size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    ad::Value qh = g::slice_cols(t, q, h * dh, (h + 1) * dh);
    ad::Value kh = g::slice_cols(t, k, h * dh, (h + 1) * dh);
    ad::Value vh = g::slice_cols(t, v, h * dh, (h + 1) * dh);
    ad::Value scores = g::scale(t, g::matmul_nt(t, qh, kh), inv_sqrt_dh);
    if (any_mask) scores = g::add_const(t, scores, mask);
    ad::Value att = g::softmax_rows(t, scores);
    heads.push_back(g::matmul(t, att, vh));
  }
  ad::Value ctx = g::concat_cols(t, heads);
  return g::add_row_bias(t, g::matmul(t, ctx, p.wo), p.bo);
}

static ad::Value sub_layer_dropout(Fwd& f, ad::Value x, double rate) {
  if (!f.training || rate == 0.0) return x;
  if (!f.dropout_rng) throw ConfigError("training forward without a dropout rng");
  return g::dropout(f.tape, x, rate, *f.dropout_rng, true);
}

static ad::Value mixing_g(ad::Tape& t, ad::Value x, const NatLayerV& p) {
  if (p.w_ri) return g::matmul(t, g::fourier_mix_concat(t, x, p.g_real, p.g_imag), *p.w_ri);
  return g::fourier_mix(t, x, p.g_real, p.g_imag);
}

ad::Value nat_decoder_layer_g(Fwd& f, ad::Value z, ad::Value enc_h,
                              const std::vector<uint8_t>* enc_pad, const NatLayerV& p, int n_heads,
                              real_t ln_eps, double dropout_rate) {
  ad::Tape& t = f.tape;
  ad::Value attn = attention_g(t, layer_norm_g(t, z, p.ln1, ln_eps), enc_h, p.cross, n_heads, enc_pad);
  ad::Value z1 = g::add(t, z, sub_layer_dropout(f, attn, dropout_rate));
  ad::Value mixed = mixing_g(t, layer_norm_g(t, z1, p.ln2, ln_eps), p);
  ad::Value z2 = g::add(t, z1, sub_layer_dropout(f, mixed, dropout_rate));
  ad::Value ff = ffn_g(t, layer_norm_g(t, z2, p.ln3, ln_eps), p.ffn);
  return g::add(t, z2, sub_layer_dropout(f, ff, dropout_rate));
}

// ---- model construction --------------------------------------------------------

static Tensor xavier(int64_t fan_in, int64_t fan_out, Rng& rng) {
  Tensor w({fan_in, fan_out});
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (int64_t i = 0; i < w.size(); ++i) w[i] = static_cast<real_t>(rng.uniform(-a, a));
  return w;
}

static Tensor gauss_table(int64_t rows, int64_t cols, Rng& rng) {
  Tensor t({rows, cols});
  const double std = 1.0 / std::sqrt(static_cast<double>(cols));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<real_t>(rng.normal(0.0, std));
  return t;
}

static Tensor ones(Shape s) {
  Tensor t(std::move(s));
  t.fill(1);
  return t;
}

Model::Model(ModelConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  build_params(seed);
}

Model::AttnP Model::add_attn(const std::string& prefix, Rng& rng) {
  AttnP p;
  const int d = cfg_.d;
  p.wq = store_.add(prefix + ".wq", xavier(d, d, rng)).index;
  p.bq = store_.add(prefix + ".bq", Tensor({d})).index;
  p.wk = store_.add(prefix + ".wk", xavier(d, d, rng)).index;
  p.bk = store_.add(prefix + ".bk", Tensor({d})).index;
  p.wv = store_.add(prefix + ".wv", xavier(d, d, rng)).index;
  p.bv = store_.add(prefix + ".bv", Tensor({d})).index;
  p.wo = store_.add(prefix + ".wo", xavier(d, d, rng)).index;
  p.bo = store_.add(prefix + ".bo", Tensor({d})).index;
  return p;
}

Model::LnP Model::add_ln(const std::string& prefix) {
  LnP p;
  p.gain = store_.add(prefix + ".gain", ones({cfg_.d})).index;
  p.bias = store_.add(prefix + ".bias", Tensor({cfg_.d})).index;
  return p;
}

Model::FfnP Model::add_ffn(const std::string& prefix, Rng& rng) {
  FfnP p;
  p.w1 = store_.add(prefix + ".w1", xavier(cfg_.d, cfg_.d_ff, rng)).index;
  p.b1 = store_.add(prefix + ".b1", Tensor({cfg_.d_ff})).index;
  p.w2 = store_.add(prefix + ".w2", xavier(cfg_.d_ff, cfg_.d, rng)).index;
  p.b2 = store_.add(prefix + ".b2", Tensor({cfg_.d})).index;
  return p;
}

void Model::build_params(uint64_t seed) {
  Rng rng = Rng(seed).fork(0x696e6974ULL);
  const int d = cfg_.d;

  src_tok_ = store_.add("src_tok_emb", gauss_table(cfg_.vocab, d, rng)).index;
  src_pos_ = store_.add("src_pos_emb", gauss_table(cfg_.s_max, d, rng)).index;
  tgt_tok_ = store_.add("tgt_tok_emb", gauss_table(cfg_.vocab, d, rng)).index;
  tgt_pos_ = store_.add("tgt_pos_emb", gauss_table(cfg_.t_max, d, rng)).index;

  for (int l = 0; l < cfg_.n_layers; ++l) {
    const std::string pre = "enc." + std::to_string(l);
    EncLayerP lp;
    lp.ln1 = add_ln(pre + ".ln1");
    lp.self = add_attn(pre + ".self", rng);
    lp.ln2 = add_ln(pre + ".ln2");
    lp.ffn = add_ffn(pre + ".ffn", rng);
    enc_layers_.push_back(lp);
  }

  if (cfg_.arch == Arch::ar_baseline) {
    for (int l = 0; l < cfg_.n_layers; ++l) {
      const std::string pre = "ar." + std::to_string(l);
      ArLayerP lp;
      lp.ln1 = add_ln(pre + ".ln1");
      lp.self = add_attn(pre + ".self", rng);
      lp.ln2 = add_ln(pre + ".ln2");
      lp.cross = add_attn(pre + ".cross", rng);
      lp.ln3 = add_ln(pre + ".ln3");
      lp.ffn = add_ffn(pre + ".ffn", rng);
      ar_layers_.push_back(lp);
    }
  } else {
    const bool frozen_zero_gates = cfg_.arch == Arch::fouriernat_nogate;
    for (int l = 0; l < cfg_.n_layers; ++l) {
      const std::string pre = "dec." + std::to_string(l);
      NatLayerP lp;
      lp.ln1 = add_ln(pre + ".ln1");
      lp.cross = add_attn(pre + ".cross", rng);
      lp.ln2 = add_ln(pre + ".ln2");
      // identity initialization: the mixing sub-layer starts as a pass-through
      Tensor ginit = frozen_zero_gates ? Tensor({cfg_.t_max, d}) : ones({cfg_.t_max, d});
      Parameter& gr = store_.add(pre + ".gate_real", ginit);
      Parameter& gi = store_.add(pre + ".gate_imag", ginit);
      gr.trainable = !frozen_zero_gates;
      gi.trainable = !frozen_zero_gates;
      lp.g_real = gr.index;
      lp.g_imag = gi.index;
      if (cfg_.combine_imag) {
        Tensor wri({2 * d, d});
        for (int i = 0; i < d; ++i) wri.at(i, i) = 1;  // [I; 0]
        lp.w_ri = store_.add(pre + ".w_ri", std::move(wri)).index;
      }
      lp.ln3 = add_ln(pre + ".ln3");
      lp.ffn = add_ffn(pre + ".ffn", rng);
      nat_layers_.push_back(lp);
    }
    len_w_ = store_.add("len.w", xavier(d, cfg_.t_max, rng)).index;
    len_b_ = store_.add("len.b", Tensor({cfg_.t_max})).index;
  }

  proj_w_ = store_.add("proj.w", xavier(d, cfg_.vocab, rng)).index;
  proj_b_ = store_.add("proj.b", Tensor({cfg_.vocab})).index;
}

// ---- parameter value handles ---------------------------------------------------

ad::Value Model::pv(ad::Tape& t, bool track, int index) const {
  const Parameter& p = store_.at(index);
  if (track && p.trainable) return t.param(p);
  return t.constant(p.value);
}

AttnV Model::attn_values(ad::Tape& t, bool track, const AttnP& p) const {
  return {pv(t, track, p.wq), pv(t, track, p.bq), pv(t, track, p.wk), pv(t, track, p.bk),
          pv(t, track, p.wv), pv(t, track, p.bv), pv(t, track, p.wo), pv(t, track, p.bo)};
}

LnV Model::ln_values(ad::Tape& t, bool track, const LnP& p) const {
  return {pv(t, track, p.gain), pv(t, track, p.bias)};
}

FfnV Model::ffn_values(ad::Tape& t, bool track, const FfnP& p) const {
  return {pv(t, track, p.w1), pv(t, track, p.b1), pv(t, track, p.w2), pv(t, track, p.b2)};
}

NatLayerV Model::nat_layer_values(ad::Tape& t, bool track, int layer) const {
  const NatLayerP& p = nat_layers_.at(static_cast<size_t>(layer));
  NatLayerV v;
  v.ln1 = ln_values(t, track, p.ln1);
  v.cross = attn_values(t, track, p.cross);
  v.ln2 = ln_values(t, track, p.ln2);
  v.g_real = pv(t, track, p.g_real);
  v.g_imag = pv(t, track, p.g_imag);
  if (p.w_ri >= 0) v.w_ri = pv(t, track, p.w_ri);
  v.ln3 = ln_values(t, track, p.ln3);
  v.ffn = ffn_values(t, track, p.ffn);
  return v;
}

const Parameter& Model::gate_real(int layer) const {
  return store_.at(nat_layers_.at(static_cast<size_t>(layer)).g_real);
}
const Parameter& Model::gate_imag(int layer) const {
  return store_.at(nat_layers_.at(static_cast<size_t>(layer)).g_imag);
}

// ---- graph builders --------------------------------------------------------------

ad::Value Model::embed_g(Fwd& f, const std::vector<int>& ids, bool source) const {
  for (int id : ids)
    if (id < 0 || id >= cfg_.vocab)
      throw VocabError("token id " + std::to_string(id) + " >= vocab " + std::to_string(cfg_.vocab));
  ad::Tape& t = f.tape;
  ad::Value tok = g::embed_rows(t, pv(t, f.track_grads, source ? src_tok_ : tgt_tok_), ids);
  std::vector<int> positions(ids.size());
  std::iota(positions.begin(), positions.end(), 0);
  ad::Value pos = g::embed_rows(t, pv(t, f.track_grads, source ? src_pos_ : tgt_pos_), positions);
  return sub_layer_dropout(f, g::add(t, tok, pos), cfg_.dropout);
}

ad::Value Model::encode_g(Fwd& f, const std::vector<int>& src,
                          const std::vector<uint8_t>* pad) const {
  if (src.empty()) throw ConfigError("empty source sequence");
  if (static_cast<int>(src.size()) > cfg_.s_max)
    throw ConfigError("source length " + std::to_string(src.size()) + " exceeds s_max " +
                      std::to_string(cfg_.s_max));
  std::vector<uint8_t> derived;
  if (!pad) {
    derived.resize(src.size());
    for (size_t i = 0; i < src.size(); ++i) derived[i] = src[i] == Vocabulary::PAD ? 1 : 0;
    pad = &derived;
  }
  bool all_pad = true;
  for (uint8_t m : *pad)
    if (!m) all_pad = false;
  if (all_pad) throw ConfigError("source is entirely padding");

  ad::Tape& t = f.tape;
  ad::Value z = embed_g(f, src, true);
  for (const EncLayerP& lp : enc_layers_) {
    ad::Value attn_in = layer_norm_g(t, z, ln_values(t, f.track_grads, lp.ln1), static_cast<real_t>(cfg_.ln_eps));
    ad::Value attn = attention_g(t, attn_in, attn_in, attn_values(t, f.track_grads, lp.self),
                                 cfg_.n_heads, pad);
    z = g::add(t, z, sub_layer_dropout(f, attn, cfg_.dropout));
    ad::Value ff = ffn_g(t, layer_norm_g(t, z, ln_values(t, f.track_grads, lp.ln2), static_cast<real_t>(cfg_.ln_eps)),
                         ffn_values(t, f.track_grads, lp.ffn));
    z = g::add(t, z, sub_layer_dropout(f, ff, cfg_.dropout));
  }
  return z;
}

ad::Value Model::draft_g(Fwd& f, const std::vector<int>* feedback,
                         const std::vector<uint8_t>* masked) const {
  ad::Tape& t = f.tape;
  const auto t_max = static_cast<size_t>(cfg_.t_max);
  std::vector<int> ids(t_max, Vocabulary::MASK);
  bool use_tokens = true;
  if (feedback) {
    if (feedback->size() != t_max || !masked || masked->size() != t_max)
      throw DimError("draft feedback/mask must have length t_max");
    for (size_t i = 0; i < t_max; ++i)
      if (!(*masked)[i]) ids[i] = (*feedback)[i];
  } else if (cfg_.draft_init == DraftInit::zeros) {
    use_tokens = false;
  }

  ad::Value base;
  if (use_tokens) {
    base = g::embed_rows(t, pv(t, f.track_grads, tgt_tok_), ids);
  } else {
    base = t.constant(Tensor({cfg_.t_max, cfg_.d}));
  }
  std::vector<int> positions(t_max);
  std::iota(positions.begin(), positions.end(), 0);
  ad::Value pos = g::embed_rows(t, pv(t, f.track_grads, tgt_pos_), positions);
  return sub_layer_dropout(f, g::add(t, base, pos), cfg_.dropout);
}

ad::Value Model::nat_stack_g(Fwd& f, ad::Value draft, ad::Value enc_h,
                             const std::vector<uint8_t>* enc_pad, DecoderTrace* trace) const {
  if (cfg_.arch == Arch::ar_baseline) throw ConfigError("parallel decode on an ar-baseline model");
  ad::Value z = draft;
  if (trace) {
    trace->z_per_layer.clear();
    trace->z_per_layer.push_back(f.tape.val(z));
  }
  for (int l = 0; l < cfg_.n_layers; ++l) {
    NatLayerV lv = nat_layer_values(f.tape, f.track_grads, l);
    z = nat_decoder_layer_g(f, z, enc_h, enc_pad, lv, cfg_.n_heads, static_cast<real_t>(cfg_.ln_eps),
                            cfg_.dropout);
    if (trace) trace->z_per_layer.push_back(f.tape.val(z));
  }
  return z;
}

ad::Value Model::project_g(Fwd& f, ad::Value z) const {
  ad::Tape& t = f.tape;
  return g::add_row_bias(t, g::matmul(t, z, pv(t, f.track_grads, proj_w_)), pv(t, f.track_grads, proj_b_));
}

ad::Value Model::length_logits_g(Fwd& f, ad::Value enc_h, int valid_rows) const {
  if (len_w_ < 0) throw ConfigError("length head absent on this architecture");
  ad::Tape& t = f.tape;
  ad::Value pooled = g::mean_rows(t, enc_h, valid_rows);
  return g::add_row_bias(t, g::matmul(t, pooled, pv(t, f.track_grads, len_w_)),
                         pv(t, f.track_grads, len_b_));
}

ad::Value Model::ar_stack_g(Fwd& f, ad::Value tgt_emb, ad::Value enc_h,
                            const std::vector<uint8_t>* enc_pad) const {
  if (cfg_.arch != Arch::ar_baseline) throw ConfigError("causal decode on a parallel model");
  ad::Tape& t = f.tape;
  ad::Value z = tgt_emb;
  for (const ArLayerP& lp : ar_layers_) {
    ad::Value self_in = layer_norm_g(t, z, ln_values(t, f.track_grads, lp.ln1), static_cast<real_t>(cfg_.ln_eps));
    ad::Value self = attention_g(t, self_in, self_in, attn_values(t, f.track_grads, lp.self),
                                 cfg_.n_heads, nullptr, /*causal=*/true);
    z = g::add(t, z, sub_layer_dropout(f, self, cfg_.dropout));
    ad::Value cross_in = layer_norm_g(t, z, ln_values(t, f.track_grads, lp.ln2), static_cast<real_t>(cfg_.ln_eps));
    ad::Value cross = attention_g(t, cross_in, enc_h, attn_values(t, f.track_grads, lp.cross),
                                  cfg_.n_heads, enc_pad);
    z = g::add(t, z, sub_layer_dropout(f, cross, cfg_.dropout));
    ad::Value ff = ffn_g(t, layer_norm_g(t, z, ln_values(t, f.track_grads, lp.ln3), static_cast<real_t>(cfg_.ln_eps)),
                         ffn_values(t, f.track_grads, lp.ffn));
    z = g::add(t, z, sub_layer_dropout(f, ff, cfg_.dropout));
  }
  return z;
}

ad::Value Model::ar_logits_g(Fwd& f, const std::vector<int>& tgt_in, ad::Value enc_h,
                             const std::vector<uint8_t>* enc_pad) const {
  if (static_cast<int>(tgt_in.size()) > cfg_.t_max)
    throw ConfigError("decoder prefix length " + std::to_string(tgt_in.size()) + " exceeds t_max " +
                      std::to_string(cfg_.t_max));
  ad::Value emb = embed_g(f, tgt_in, false);
  return project_g(f, ar_stack_g(f, emb, enc_h, enc_pad));
}

// ---- inference wrappers -----------------------------------------------------------

EncoderState Model::encode(const std::vector<int>& src) const {
  ad::Tape tape;
  Fwd f{tape};
  EncoderState st;
  st.pad_mask.resize(src.size());
  for (size_t i = 0; i < src.size(); ++i) st.pad_mask[i] = src[i] == Vocabulary::PAD ? 1 : 0;
  st.h = tape.val(encode_g(f, src, &st.pad_mask));
  return st;
}

DecoderTrace Model::decode_parallel_uncounted(const EncoderState& enc, const std::vector<int>* feedback,
                                              const std::vector<uint8_t>* masked) const {
  ad::Tape tape;
  Fwd f{tape};
  ad::Value enc_h = tape.constant(enc.h);
  DecoderTrace trace;
  ad::Value draft = draft_g(f, feedback, masked);
  ad::Value z = nat_stack_g(f, draft, enc_h, &enc.pad_mask, &trace);
  trace.logits = tape.val(project_g(f, z));
  return trace;
}

DecoderTrace Model::decode_parallel(const EncoderState& enc) const {
  count_nat_forward();
  return decode_parallel_uncounted(enc, nullptr, nullptr);
}

DecoderTrace Model::decode_parallel_draft(const EncoderState& enc, const std::vector<int>& feedback,
                                          const std::vector<uint8_t>& masked) const {
  count_nat_forward();
  return decode_parallel_uncounted(enc, &feedback, &masked);
}

Tensor Model::predict_length(const EncoderState& enc) const {
  ad::Tape tape;
  Fwd f{tape};
  ad::Value logits = length_logits_g(f, tape.constant(enc.h), enc.valid_rows());
  Tensor probs = softmax_rows(tape.val(logits));
  return Tensor::vec(std::vector<real_t>(probs.data(), probs.data() + probs.size()));
}

Tensor Model::ar_decode_step(const EncoderState& enc, const std::vector<int>& prefix) const {
  if (prefix.empty() || prefix.front() != Vocabulary::BOS)
    throw ConfigError("ar_decode_step prefix must start with BOS");
  if (static_cast<int>(prefix.size()) > cfg_.t_max)
    throw ConfigError("prefix length " + std::to_string(prefix.size()) + " exceeds t_max " +
                      std::to_string(cfg_.t_max));
  ++counters_->ar;
  ad::Tape tape;
  Fwd f{tape};
  ad::Value logits = ar_logits_g(f, prefix, tape.constant(enc.h), &enc.pad_mask);
  const Tensor& all = tape.val(logits);
  std::vector<real_t> last(static_cast<size_t>(all.cols()));
  for (int64_t j = 0; j < all.cols(); ++j) last[static_cast<size_t>(j)] = all.at(all.rows() - 1, j);
  return Tensor::vec(std::move(last));
}

void Model::reset_counters() const {
  counters_->nat.store(0);
  counters_->ar.store(0);
}

// ---- checkpoint io -----------------------------------------------------------------

static void put_u64_le(std::string& out, size_t off, uint64_t v) {
  for (int i = 0; i < 8; ++i) out[off + static_cast<size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xff);
}

void Model::save_checkpoint(const std::string& path) const {
  json header;
  header["version"] = 1;
  header["config"] = json::parse(cfg_.to_json());
  json manifest = json::array();
  for (const Parameter& p : store_) {
    json e;
    e["name"] = p.name;
    e["shape"] = p.value.shape();
    manifest.push_back(e);
  }
  header["params"] = manifest;

  std::string blob(static_cast<size_t>(store_.total_values()) * 8, '\0');
  size_t off = 0;
  for (const Parameter& p : store_)
    for (int64_t i = 0; i < p.value.size(); ++i) {
      put_u64_le(blob, off, std::bit_cast<uint64_t>(static_cast<double>(p.value[i])));
      off += 8;
    }

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "FNAT1\n" << header.dump() << "\n" << blob;
  if (!os) throw IoError("write failed: " + path);
}

Model Model::load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  std::string magic, header_line;
  if (!std::getline(is, magic) || magic != "FNAT1") throw IoError(path + ": not an FNAT1 checkpoint");
  if (!std::getline(is, header_line)) throw IoError(path + ": truncated header");
  json header;
  try {
    header = json::parse(header_line);
  } catch (const json::exception& e) {
    throw IoError(path + ": bad header: " + e.what());
  }
  ModelConfig cfg = ModelConfig::from_json(header.at("config").dump());
  Model m(cfg, /*seed=*/0);

  const json& manifest = header.at("params");
  if (manifest.size() != static_cast<size_t>(m.store_.count()))
    throw IoError(path + ": parameter count mismatch");
  std::string blob((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  size_t off = 0;
  for (size_t i = 0; i < manifest.size(); ++i) {
    Parameter& p = m.store_.at(static_cast<int>(i));
    if (manifest[i].at("name").get<std::string>() != p.name)
      throw IoError(path + ": parameter order mismatch at " + p.name);
    const auto shape = manifest[i].at("shape").get<std::vector<int64_t>>();
    if (shape != p.value.shape()) throw IoError(path + ": shape mismatch for " + p.name);
    if (off + static_cast<size_t>(p.value.size()) * 8 > blob.size())
      throw IoError(path + ": truncated value blob");
    for (int64_t k = 0; k < p.value.size(); ++k) {
      uint64_t bits = 0;
      for (int b = 0; b < 8; ++b)
        bits |= static_cast<uint64_t>(static_cast<unsigned char>(blob[off + static_cast<size_t>(k) * 8 +
                                                                      static_cast<size_t>(b)]))
                << (8 * b);
      p.value[k] = static_cast<real_t>(std::bit_cast<double>(bits));
    }
    off += static_cast<size_t>(p.value.size()) * 8;
  }
  if (off != blob.size()) throw IoError(path + ": trailing bytes in checkpoint");
  return m;
}

}  // namespace fnat
