#include "vilsum/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <map>
#include <set>

#include "vilsum/errors.hpp"
#include "vilsum/text.hpp"

namespace vilsum {

RougeScore make_rouge(double overlap, double cand_count, double ref_count) {
  RougeScore s;
  if (cand_count > 0) s.precision = static_cast<float>(overlap / cand_count);
  if (ref_count > 0) s.recall = static_cast<float>(overlap / ref_count);
  double pr = static_cast<double>(s.precision) + static_cast<double>(s.recall);
  if (pr > 0) {
    s.f1 = static_cast<float>(2.0 * s.precision * s.recall / pr);
  }
  return s;
}

namespace {

std::map<std::vector<std::string>, int> ngram_counts(const std::vector<std::string>& words,
                                                     int n) {
  std::map<std::vector<std::string>, int> counts;
  if (static_cast<int>(words.size()) < n) return counts;
  for (size_t i = 0; i + n <= words.size(); ++i) {
    counts[std::vector<std::string>(words.begin() + static_cast<long>(i),
                                    words.begin() + static_cast<long>(i) + n)]++;
  }
  return counts;
}

}  // namespace

RougeScore rouge_n(const std::string& candidate, const std::string& reference, int n) {
  if (n != 1 && n != 2) throw ContractError("rouge_n supports n in {1,2}");
  auto cand = tokenize_words(candidate);
  auto ref = tokenize_words(reference);
  auto cand_counts = ngram_counts(cand, n);
  auto ref_counts = ngram_counts(ref, n);
  double cand_total = 0, ref_total = 0, overlap = 0;
  for (const auto& [gram, c] : cand_counts) cand_total += c;
  for (const auto& [gram, c] : ref_counts) ref_total += c;
  for (const auto& [gram, c] : cand_counts) {
    auto it = ref_counts.find(gram);
    if (it != ref_counts.end()) overlap += std::min(c, it->second);
  }
  return make_rouge(overlap, cand_total, ref_total);
}

int lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  size_t n = a.size(), m = b.size();
  std::vector<int> prev(m + 1, 0), cur(m + 1, 0);
  for (size_t i = 1; i <= n; ++i) {
    for (size_t j = 1; j <= m; ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

RougeScore rouge_l(const std::string& candidate, const std::string& reference) {
  auto cand = tokenize_words(candidate);
  auto ref = tokenize_words(reference);
  if (cand.empty() || ref.empty()) return RougeScore{};
  int lcs = lcs_length(cand, ref);
  return make_rouge(lcs, static_cast<double>(cand.size()), static_cast<double>(ref.size()));
}

float image_precision(std::span<const int> reference, std::span<const int> recommended) {
  std::set<int> rec(recommended.begin(), recommended.end());
  if (rec.empty()) {
    std::cerr << "warning: image_precision over an empty recommendation set, scoring 0\n";
    return 0.0f;
  }
  std::set<int> ref(reference.begin(), reference.end());
  int hit = 0;
  for (int id : rec) hit += ref.count(id) ? 1 : 0;
  return static_cast<float>(hit) / static_cast<float>(rec.size());
}

float mmae(float rouge_l_f1, float max_sim, float ip) {
  return 1.641f * rouge_l_f1 + 0.854f * max_sim + 0.806f * ip + 1.978f;
}

std::string MetricReport::serialize() const {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "rouge1_precision=%.4f\nrouge1_recall=%.4f\nrouge1_f1=%.4f\n"
                "rouge2_precision=%.4f\nrouge2_recall=%.4f\nrouge2_f1=%.4f\n"
                "rougeL_precision=%.4f\nrougeL_recall=%.4f\nrougeL_f1=%.4f\n"
                "max_sim=%.4f\nip=%.4f\nmmae=%.4f\n",
                rouge1.precision, rouge1.recall, rouge1.f1, rouge2.precision, rouge2.recall,
                rouge2.f1, rougeL.precision, rougeL.recall, rougeL.f1, max_sim, ip, mmae);
  return buf;
}

}  // namespace vilsum
