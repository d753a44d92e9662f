#pragma once

#include <span>
#include <string>
#include <vector>

namespace vilsum {

struct RougeScore {
  float precision = 0.0f;
  float recall = 0.0f;
  float f1 = 0.0f;
};

RougeScore make_rouge(double overlap, double cand_count, double ref_count);

/// Clipped n-gram overlap (n in {1,2}) over lowercased word tokens; no
/// stemming. Empty candidate or reference scores zero.
RougeScore rouge_n(const std::string& candidate, const std::string& reference, int n);

/// LCS-based precision/recall/F1 over word tokens.
RougeScore rouge_l(const std::string& candidate, const std::string& reference);

/// Longest common subsequence length (dynamic programming); exposed so the
/// brute-force oracle in the tests can compare against it.
int lcs_length(std::span<const std::string> a, std::span<const std::string> b);

/// |reference ∩ recommended| / |recommended|. Duplicates in `recommended`
/// count once; empty recommendation scores 0 with a warning on stderr.
float image_precision(std::span<const int> reference, std::span<const int> recommended);

/// 1.641*rougeL + 0.854*max_sim + 0.806*ip + 1.978 (inputs on a 0-1 scale).
float mmae(float rouge_l_f1, float max_sim, float ip);

struct MetricReport {
  RougeScore rouge1, rouge2, rougeL;
  float max_sim = 0.0f;
  float ip = 0.0f;
  float mmae = 0.0f;

  /// Flat canonical-order key=value lines, floats to 4 decimals.
  std::string serialize() const;
};

}  // namespace vilsum
