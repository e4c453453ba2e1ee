#pragma once

#include <string>
#include <vector>

#include "fnat/tensor.hpp"

namespace fnat {

struct EvalReport {
  double token_accuracy = 0;
  double sequence_accuracy = 0;
  double bleu = 0;
  double rouge1 = 0;
  double rouge2 = 0;
  double rougeL = 0;
  int n_examples = 0;

  std::string to_json() const;
};

using TokenSeq = std::vector<int>;

// Scoring runs over content tokens: everything from the first EOS on is
// dropped, as are PADs. Already-clean sequences pass through unchanged.
TokenSeq strip_content(const TokenSeq& seq);

double token_accuracy(const std::vector<TokenSeq>& hyps, const std::vector<TokenSeq>& refs);
double sequence_accuracy(const std::vector<TokenSeq>& hyps, const std::vector<TokenSeq>& refs);

// Corpus-level BLEU with uniform n-gram weights up to max_n, modified
// (clipped) precision and brevity penalty min(1, e^(1-r/c)); returns 0 when
// any n-gram precision is 0 unless add-one smoothing is enabled.
double bleu(const std::vector<TokenSeq>& hyps, const std::vector<TokenSeq>& refs, int max_n = 4,
            bool smoothing = false);

// Per-pair n-gram overlap F1 and LCS F1; corpus scores average over pairs.
double rouge_n(const TokenSeq& hyp, const TokenSeq& ref, int n);
double rouge_l(const TokenSeq& hyp, const TokenSeq& ref);

EvalReport evaluate(const std::vector<TokenSeq>& hyps, const std::vector<TokenSeq>& refs);

}  // namespace fnat
