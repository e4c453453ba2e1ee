#include "fnat/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <json.hpp>

#include "fnat/data.hpp"

namespace fnat {

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["token_accuracy"] = token_accuracy;
  j["sequence_accuracy"] = sequence_accuracy;
  j["bleu"] = bleu;
  j["rouge1"] = rouge1;
  j["rouge2"] = rouge2;
  j["rougeL"] = rougeL;
  j["n_examples"] = n_examples;
  return j.dump();
}

TokenSeq strip_content(const TokenSeq& seq) {
  TokenSeq out;
  for (int id : seq) {
    if (id == Vocabulary::EOS) break;
    if (id == Vocabulary::PAD) continue;
    out.push_back(id);
  }
  return out;
}

static void require_aligned(const std::vector<TokenSeq>& hyps, const std::vector<TokenSeq>& refs) {
  if (hyps.size() != refs.size())
    throw ConfigError("corpus size mismatch: " + std::to_string(hyps.size()) + " hypotheses vs " +
                      std::to_string(refs.size()) + " references");
}

double token_accuracy(const std::vector<TokenSeq>& hyps, const std::vector<TokenSeq>& refs) {
  require_aligned(hyps, refs);
  int64_t matches = 0, total = 0;
  for (size_t i = 0; i < hyps.size(); ++i) {
    const TokenSeq h = strip_content(hyps[i]);
    const TokenSeq r = strip_content(refs[i]);
    total += static_cast<int64_t>(r.size());
    const size_t n = std::min(h.size(), r.size());
    for (size_t t = 0; t < n; ++t)
      if (h[t] == r[t]) ++matches;
  }
  return total == 0 ? 0.0 : static_cast<double>(matches) / static_cast<double>(total);
}

double sequence_accuracy(const std::vector<TokenSeq>& hyps, const std::vector<TokenSeq>& refs) {
  require_aligned(hyps, refs);
  if (hyps.empty()) return 0.0;
  int64_t exact = 0;
  for (size_t i = 0; i < hyps.size(); ++i)
    if (strip_content(hyps[i]) == strip_content(refs[i])) ++exact;
  return static_cast<double>(exact) / static_cast<double>(hyps.size());
}

using NgramCounts = std::map<std::vector<int>, int64_t>;

static NgramCounts count_ngrams(const TokenSeq& seq, int n) {
  NgramCounts counts;
  if (static_cast<int>(seq.size()) < n) return counts;
  for (size_t i = 0; i + static_cast<size_t>(n) <= seq.size(); ++i)
    ++counts[std::vector<int>(seq.begin() + static_cast<std::ptrdiff_t>(i),
                              seq.begin() + static_cast<std::ptrdiff_t>(i) + n)];
  return counts;
}

double bleu(const std::vector<TokenSeq>& hyps, const std::vector<TokenSeq>& refs, int max_n,
            bool smoothing) {
  require_aligned(hyps, refs);
  if (hyps.empty()) throw ConfigError("bleu on an empty corpus");
  if (max_n < 1) throw ConfigError("bleu max_n must be >= 1");

  std::vector<int64_t> clipped(static_cast<size_t>(max_n), 0), total(static_cast<size_t>(max_n), 0);
  int64_t hyp_len = 0, ref_len = 0;
  for (size_t i = 0; i < hyps.size(); ++i) {
    const TokenSeq h = strip_content(hyps[i]);
    const TokenSeq r = strip_content(refs[i]);
    hyp_len += static_cast<int64_t>(h.size());
    ref_len += static_cast<int64_t>(r.size());
    for (int n = 1; n <= max_n; ++n) {
      const NgramCounts hc = count_ngrams(h, n);
      const NgramCounts rc = count_ngrams(r, n);
      for (const auto& [gram, cnt] : hc) {
        total[static_cast<size_t>(n - 1)] += cnt;
        auto it = rc.find(gram);
        if (it != rc.end()) clipped[static_cast<size_t>(n - 1)] += std::min(cnt, it->second);
      }
    }
  }

  if (hyp_len == 0) return 0.0;
  double log_prec = 0;
  for (int n = 1; n <= max_n; ++n) {
    double num = static_cast<double>(clipped[static_cast<size_t>(n - 1)]);
    double den = static_cast<double>(total[static_cast<size_t>(n - 1)]);
    if (smoothing && n > 1) {
      num += 1.0;
      den += 1.0;
    }
    if (num <= 0.0 || den <= 0.0) return 0.0;
    log_prec += std::log(num / den) / static_cast<double>(max_n);
  }
  const double bp =
      hyp_len >= ref_len ? 1.0
                         : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  return bp * std::exp(log_prec);
}

static double overlap_f1(double overlap, double hyp_total, double ref_total) {
  if (hyp_total <= 0.0 && ref_total <= 0.0) return 0.0;
  if (hyp_total <= 0.0 || ref_total <= 0.0 || overlap <= 0.0) return 0.0;
  const double p = overlap / hyp_total;
  const double r = overlap / ref_total;
  return 2.0 * p * r / (p + r);
}

double rouge_n(const TokenSeq& hyp, const TokenSeq& ref, int n) {
  const TokenSeq h = strip_content(hyp);
  const TokenSeq r = strip_content(ref);
  const NgramCounts hc = count_ngrams(h, n);
  const NgramCounts rc = count_ngrams(r, n);
  int64_t overlap = 0, hyp_total = 0, ref_total = 0;
  for (const auto& [gram, cnt] : hc) {
    hyp_total += cnt;
    auto it = rc.find(gram);
    if (it != rc.end()) overlap += std::min(cnt, it->second);
  }
  for (const auto& [gram, cnt] : rc) ref_total += cnt;
  return overlap_f1(static_cast<double>(overlap), static_cast<double>(hyp_total),
                    static_cast<double>(ref_total));
}

double rouge_l(const TokenSeq& hyp, const TokenSeq& ref) {
  const TokenSeq h = strip_content(hyp);
  const TokenSeq r = strip_content(ref);
  const size_t m = h.size(), n = r.size();
  if (m == 0 && n == 0) return 0.0;
  std::vector<int64_t> prev(n + 1, 0), cur(n + 1, 0);
  for (size_t i = 1; i <= m; ++i) {
    for (size_t j = 1; j <= n; ++j)
      cur[j] = h[i - 1] == r[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  const auto lcs = static_cast<double>(prev[n]);
  return overlap_f1(lcs, static_cast<double>(m), static_cast<double>(n));
}

EvalReport evaluate(const std::vector<TokenSeq>& hyps, const std::vector<TokenSeq>& refs) {
  require_aligned(hyps, refs);
  EvalReport rep;
  rep.n_examples = static_cast<int>(hyps.size());
  if (hyps.empty()) return rep;
  rep.token_accuracy = token_accuracy(hyps, refs);
  rep.sequence_accuracy = sequence_accuracy(hyps, refs);
  rep.bleu = bleu(hyps, refs);
  double r1 = 0, r2 = 0, rl = 0;
  for (size_t i = 0; i < hyps.size(); ++i) {
    r1 += rouge_n(hyps[i], refs[i], 1);
    r2 += rouge_n(hyps[i], refs[i], 2);
    rl += rouge_l(hyps[i], refs[i]);
  }
  rep.rouge1 = r1 / static_cast<double>(hyps.size());
  rep.rouge2 = r2 / static_cast<double>(hyps.size());
  rep.rougeL = rl / static_cast<double>(hyps.size());
  return rep;
}

}  // namespace fnat
