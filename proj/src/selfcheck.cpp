#include "fnat/selfcheck.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "fnat/autograd.hpp"
#include "fnat/data.hpp"
#include "fnat/decoding.hpp"
#include "fnat/metrics.hpp"
#include "fnat/model.hpp"
#include "fnat/spectral.hpp"
#include "fnat/training.hpp"

namespace fnat {

namespace {

namespace g = fnat::ad;

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<real_t>(rng.uniform(lo, hi));
  return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (int64_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

double max_abs(const Tensor& a) {
  double m = 0;
  for (int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i])));
  return m;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

struct Battery {
  std::vector<CheckResult> results;
  const SelfcheckFaults& faults;

  explicit Battery(const SelfcheckFaults& f) : faults(f) {}

  void check(const std::string& name, bool pass, const std::string& detail) {
    results.push_back({name, pass, detail});
  }

  std::pair<Tensor, Tensor> idft_under_test(const ComplexSpectrum& spec) const {
    if (!faults.flip_ifft_sign) return idft_seq(spec);
    ComplexSpectrum broken{spec.real, fnat::scale(spec.imag, real_t(-1))};
    return idft_seq(broken);
  }
};

const int64_t kRoundtripLens[] = {1, 2, 4, 8, 16, 64};

void spectral_checks(Battery& b) {
  Rng rng(2024);

  double worst_rt = 0, worst_imag = 0;
  for (int64_t t_len : kRoundtripLens) {
    Tensor x = random_tensor({t_len, 3}, rng);
    auto [re, im] = b.idft_under_test(dft_seq(x));
    worst_rt = std::max(worst_rt, max_abs_diff(re, x));
    worst_imag = std::max(worst_imag, max_abs(im));
  }
  b.check("fft_roundtrip", worst_rt < 1e-9 && worst_imag < 1e-9,
          "max err " + fmt(std::max(worst_rt, worst_imag)));

  double worst = 0;
  for (int64_t t_len : kRoundtripLens) {
    Tensor x = random_tensor({t_len, 3}, rng);
    ComplexSpectrum fast = dft_seq(x), naive = dft_seq_naive(x);
    worst = std::max(worst, std::max(max_abs_diff(fast.real, naive.real),
                                     max_abs_diff(fast.imag, naive.imag)));
  }
  b.check("fft_matches_naive_dft", worst < 1e-9, "max err " + fmt(worst));

  worst = 0;
  for (int64_t t_len : {8, 16, 64}) {
    Tensor x = random_tensor({t_len, 4}, rng);
    ComplexSpectrum s = dft_seq(x);
    for (int64_t c = 0; c < 4; ++c) {
      double et = 0, ef = 0;
      for (int64_t t = 0; t < t_len; ++t) et += static_cast<double>(x.at(t, c)) * x.at(t, c);
      for (int64_t k = 0; k < t_len; ++k)
        ef += static_cast<double>(s.real.at(k, c)) * s.real.at(k, c) +
              static_cast<double>(s.imag.at(k, c)) * s.imag.at(k, c);
      worst = std::max(worst, std::abs(et - ef / static_cast<double>(t_len)));
    }
  }
  b.check("parseval_identity", worst < 1e-8, "max err " + fmt(worst));

  worst = 0;
  for (int64_t t_len : {8, 16}) {
    Tensor x = random_tensor({t_len, 3}, rng);
    ComplexSpectrum s = dft_seq(x);
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t k = 0; k < t_len; ++k) {
        const int64_t mk = (t_len - k) % t_len;
        worst = std::max(worst, std::abs(static_cast<double>(s.real.at(mk, c)) - s.real.at(k, c)));
        worst = std::max(worst, std::abs(static_cast<double>(s.imag.at(mk, c)) + s.imag.at(k, c)));
      }
  }
  b.check("hermitian_symmetry", worst < 1e-9, "max err " + fmt(worst));

  {
    Tensor x = random_tensor({16, 5}, rng);
    Tensor one({16, 5});
    one.fill(1);
    const double err = max_abs_diff(fourier_mix(x, one, one), x);
    b.check("fourier_mix_identity_gates", err < 1e-9, "max err " + fmt(err));
  }

  {
    Tensor x = random_tensor({8, 4}, rng);
    Tensor gr = random_tensor({8, 4}, rng), gi = random_tensor({8, 4}, rng);
    Tensor fast = fourier_mix(x, gr, gi);
    Tensor naive = idft_seq_naive(apply_gates(dft_seq_naive(x), gr, gi)).first;
    const double err = max_abs_diff(fast, naive);
    b.check("fourier_mix_matches_naive", err < 1e-9, "max err " + fmt(err));
  }
}

void gradient_checks(Battery& b) {
  Rng rng(7);

  {
    Tensor a = random_tensor({3, 3}, rng), w = random_tensor({3, 3}, rng);
    const double err = g::grad_check(
        [](g::Tape& t, std::span<const g::Value> in) { return g::matmul(t, in[0], in[1]); }, {a, w},
        1e-5, rng);
    b.check("gradcheck_matmul", err < 1e-7, "rel err " + fmt(err));
  }

  {
    Tensor logits = random_tensor({4, 6}, rng, -2, 2);
    const std::vector<int> gold{1, 4, 2, 5};
    const std::vector<uint8_t> mask{0, 0, 0, 0};
    const double err = g::grad_check(
        [&](g::Tape& t, std::span<const g::Value> in) {
          return g::cross_entropy_sum(t, in[0], gold, mask);
        },
        {logits}, 1e-5, rng);
    b.check("gradcheck_softmax_cross_entropy", err < 1e-6, "rel err " + fmt(err));
  }

  {
    Tensor x = random_tensor({3, 5}, rng), gain = random_tensor({5}, rng, 0.5, 1.5),
           bias = random_tensor({5}, rng);
    const double err = g::grad_check(
        [](g::Tape& t, std::span<const g::Value> in) {
          return g::layer_norm(t, in[0], in[1], in[2], real_t(1e-6));
        },
        {x, gain, bias}, 1e-5, rng);
    b.check("gradcheck_layer_norm", err < 1e-4, "rel err " + fmt(err));
  }

  {
    Tensor x = random_tensor({8, 2}, rng), gr = random_tensor({8, 2}, rng),
           gi = random_tensor({8, 2}, rng);
    const double err = g::grad_check(
        [](g::Tape& t, std::span<const g::Value> in) {
          return g::fourier_mix(t, in[0], in[1], in[2]);
        },
        {x, gr, gi}, 1e-5, rng);
    b.check("gradcheck_fourier_mix", err < 1e-6, "rel err " + fmt(err));
  }

  {
    // full decoder layer: z, enc, then every layer parameter as a leaf
    const int64_t t_len = 4, d = 8, s = 3, dff = 16;
    std::vector<Tensor> inputs;
    inputs.push_back(random_tensor({t_len, d}, rng, -0.5, 0.5));  // z
    inputs.push_back(random_tensor({s, d}, rng, -0.5, 0.5));      // enc
    for (int i = 0; i < 3; ++i) {                                 // three layer norms
      inputs.push_back(random_tensor({d}, rng, 0.5, 1.5));
      inputs.push_back(random_tensor({d}, rng, -0.1, 0.1));
    }
    for (int i = 0; i < 4; ++i) {  // attention projections
      inputs.push_back(random_tensor({d, d}, rng, -0.4, 0.4));
      inputs.push_back(random_tensor({d}, rng, -0.1, 0.1));
    }
    inputs.push_back(random_tensor({t_len, d}, rng));  // gates
    inputs.push_back(random_tensor({t_len, d}, rng));
    inputs.push_back(random_tensor({d, dff}, rng, -0.4, 0.4));  // ffn
    inputs.push_back(random_tensor({dff}, rng, -0.1, 0.1));
    inputs.push_back(random_tensor({dff, d}, rng, -0.4, 0.4));
    inputs.push_back(random_tensor({d}, rng, -0.1, 0.1));

    const double err = g::grad_check(
        [](g::Tape& t, std::span<const g::Value> in) {
          size_t i = 2;
          NatLayerV p;
          p.ln1 = {in[i], in[i + 1]};
          p.ln2 = {in[i + 2], in[i + 3]};
          p.ln3 = {in[i + 4], in[i + 5]};
          i += 6;
          p.cross = {in[i], in[i + 1], in[i + 2], in[i + 3], in[i + 4], in[i + 5], in[i + 6], in[i + 7]};
          i += 8;
          p.g_real = in[i];
          p.g_imag = in[i + 1];
          i += 2;
          p.ffn = {in[i], in[i + 1], in[i + 2], in[i + 3]};
          Fwd f{t};
          return nat_decoder_layer_g(f, in[0], in[1], nullptr, p, 2, real_t(1e-6), 0.0);
        },
        inputs, 1e-5, rng);
    b.check("gradcheck_decoder_layer", err < 1e-4, "rel err " + fmt(err));
  }
}

void substrate_checks(Battery& b) {
  {
    Rng a(42), c(42);
    bool same = true;
    for (int i = 0; i < 1000; ++i) same = same && a.next_u64() == c.next_u64();
    Rng f1 = Rng(42).fork(7), f2 = Rng(42).fork(7);
    for (int i = 0; i < 100; ++i) same = same && f1.next_u64() == f2.next_u64();
    b.check("rng_bit_reproducibility", same, same ? "streams identical" : "stream divergence");
  }

  {
    Rng rng(3);
    Tensor x = random_tensor({5, 7}, rng, -30, 30);
    Tensor y = softmax_rows(x);
    Tensor shifted = x;
    for (int64_t i = 0; i < shifted.rows(); ++i)
      for (int64_t j = 0; j < shifted.cols(); ++j) shifted.at(i, j) += real_t(123.5);
    double worst = 0;
    for (int64_t i = 0; i < y.rows(); ++i) {
      double s = 0;
      for (int64_t j = 0; j < y.cols(); ++j) s += static_cast<double>(y.at(i, j));
      worst = std::max(worst, std::abs(s - 1.0));
    }
    worst = std::max(worst, max_abs_diff(y, softmax_rows(shifted)));
    b.check("softmax_normalized_shift_invariant", worst < 1e-9, "max err " + fmt(worst));
  }

  {
    ParamStore ps;
    Parameter& p = ps.add("w", Tensor::vec({real_t(0.5), real_t(-0.25)}));
    p.grad = Tensor::vec({real_t(1), real_t(-2)});
    OptimState st;
    st.init(ps);
    TrainConfig tc;
    adam_step(ps, st, tc, 0.01);
    // first bias-corrected step moves each weight by lr*g/(|g|+eps)
    const double e0 = std::abs(static_cast<double>(p.value[0]) - (0.5 - 0.01 * 1.0 / (1.0 + 1e-9)));
    const double e1 = std::abs(static_cast<double>(p.value[1]) - (-0.25 + 0.01 * 2.0 / (2.0 + 1e-9)));
    b.check("adam_first_step", e0 < 1e-12 && e1 < 1e-12, "max err " + fmt(std::max(e0, e1)));
  }

  {
    const double at_warmup = lr_at(4000, 512, 4000);
    const double crossover = std::abs(lr_at(4000, 512, 4000) - lr_at(3999, 512, 4000) * 4000.0 / 3999.0);
    const double expected = std::pow(512.0, -0.5) * std::pow(4000.0, -0.5);
    const bool ok = std::abs(at_warmup - expected) < 1e-15 && std::abs(at_warmup - 6.988e-4) < 1e-6 &&
                    crossover < 1e-12;
    b.check("lr_schedule_closed_form", ok, "lr(4000)=" + fmt(at_warmup));
  }
}

void oracle_checks(Battery& b) {
  {
    // clipped unigram precision 1/4, length 4 vs 2 so no brevity penalty
    const std::vector<TokenSeq> hyp{{10, 10, 10, 10}};
    const std::vector<TokenSeq> ref{{10, 11}};
    const double b1 = bleu(hyp, ref, 1);
    // one-token hypothesis against a two-token reference: BP = e^(1-2/1)
    const std::vector<TokenSeq> hyp2{{10}};
    const std::vector<TokenSeq> ref2{{10, 11}};
    const double b2 = bleu(hyp2, ref2, 1);
    const bool ok = std::abs(b1 - 0.25) < 1e-12 && std::abs(b2 - std::exp(-1.0)) < 1e-12;
    b.check("bleu_fixture", ok, "p1=" + fmt(b1) + " bp_case=" + fmt(b2));
  }

  {
    const double f = rouge_l({10, 11, 12, 13}, {10, 12, 13});
    const bool ok = std::abs(f - 6.0 / 7.0) < 1e-12 && rouge_l({5, 6}, {5, 6}) == 1.0;
    b.check("rouge_fixture", ok, "f1=" + fmt(f));
  }

  {
    TaskSpec spec;
    spec.kind = TaskKind::cipher;
    spec.seed = 99;
    auto examples = generate(spec, 50, 16);
    const auto tmp = std::filesystem::temp_directory_path() / "fnat_selfcheck_data.jsonl";
    fnat::save(examples, tmp.string());
    auto loaded = fnat::load(tmp.string());
    std::filesystem::remove(tmp);
    b.check("dataset_roundtrip", loaded == examples,
            loaded == examples ? "50 examples round-trip" : "mismatch after reload");
  }

  {
    // zero gates leave no cross-position path through the decoder
    ModelConfig cfg;
    cfg.d = 16;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.d_ff = 32;
    cfg.vocab = 12;
    cfg.t_max = 8;
    cfg.s_max = 8;
    cfg.dropout = 0.0;
    cfg.arch = Arch::fouriernat_nogate;
    Model m(cfg, 5);
    EncoderState enc = m.encode({4, 5, 6});
    std::vector<int> feedback(8, Vocabulary::MASK);
    std::vector<uint8_t> masked(8, 1);
    DecoderTrace base = m.decode_parallel_uncounted(enc, &feedback, &masked);
    feedback[3] = 7;
    masked[3] = 0;
    DecoderTrace poked = m.decode_parallel_uncounted(enc, &feedback, &masked);
    double worst = 0;
    for (int64_t t = 0; t < 8; ++t) {
      if (t == 3) continue;
      for (int64_t j = 0; j < base.logits.cols(); ++j)
        worst = std::max(worst, std::abs(static_cast<double>(base.logits.at(t, j)) -
                                         poked.logits.at(t, j)));
    }
    b.check("zero_gates_no_cross_position_leak", worst < 1e-9, "max err " + fmt(worst));
  }
}

}  // namespace

std::vector<CheckResult> run_selfcheck(const SelfcheckFaults& faults) {
  Battery b(faults);
  spectral_checks(b);
  gradient_checks(b);
  substrate_checks(b);
  oracle_checks(b);
  return b.results;
}

}  // namespace fnat
