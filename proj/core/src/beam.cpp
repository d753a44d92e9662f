#include "vilsum/beam.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vilsum/errors.hpp"
#include "vilsum/text.hpp"

namespace vilsum {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

void BeamParams::validate() const {
  if (beam_size < 1) throw ConfigError("beam_size must be >= 1");
  if (min_len < 1 || max_len < min_len) {
    throw ConfigError("need 1 <= min_len <= max_len, got min_len=" + std::to_string(min_len) +
                      " max_len=" + std::to_string(max_len));
  }
}

std::vector<double> constrained_logprobs(std::span<const float> logits_row, int content_len,
                                         const BeamParams& bp) {
  size_t v = logits_row.size();
  std::vector<double> lp(v, kNegInf);
  bool only_end = content_len >= bp.max_len;
  bool end_allowed = content_len >= bp.min_len;

  double max_logit = kNegInf;
  auto allowed = [&](size_t id) {
    if (id == static_cast<size_t>(Vocab::kPad) || id == static_cast<size_t>(Vocab::kStart)) {
      return false;
    }
    if (id == static_cast<size_t>(Vocab::kEnd)) return end_allowed || only_end;
    return !only_end;
  };
  for (size_t i = 0; i < v; ++i) {
    if (allowed(i)) max_logit = std::max(max_logit, static_cast<double>(logits_row[i]));
  }
  double sum = 0.0;
  for (size_t i = 0; i < v; ++i) {
    if (allowed(i)) sum += std::exp(static_cast<double>(logits_row[i]) - max_logit);
  }
  double log_z = max_logit + std::log(sum);
  for (size_t i = 0; i < v; ++i) {
    if (allowed(i)) lp[i] = static_cast<double>(logits_row[i]) - log_z;
  }
  return lp;
}

namespace {

struct Hypothesis {
  std::vector<int> content;  // emitted content token ids
  double logp = 0.0;         // cumulative, content tokens only so far
};

struct Finished {
  std::vector<int> content;
  double score = 0.0;  // (content logp + END logp) / (len + 1)
};

std::vector<double> next_distribution(const Model& model, Tape& tape, const EncoderOutput& enc,
                                      const std::vector<int>& content, const BeamParams& bp) {
  std::vector<int> input;
  input.reserve(content.size() + 1);
  input.push_back(Vocab::kStart);
  input.insert(input.end(), content.begin(), content.end());
  Var states = model.decoder_states(tape, enc, input);
  Var logits = model.output_logits(tape, states);
  const Tensor& lv = tape.val(logits);
  int last = lv.rows() - 1;
  std::span<const float> row = lv.data().subspan(static_cast<size_t>(last) * lv.cols(),
                                                 static_cast<size_t>(lv.cols()));
  return constrained_logprobs(row, static_cast<int>(content.size()), bp);
}

}  // namespace

std::vector<int> beam_search(const Model& model, Tape& tape, const EncoderOutput& enc,
                             const BeamParams& bp) {
  bp.validate();
  if (bp.max_len + 2 > model.config().max_dec_tokens) {
    throw ConfigError("max_len " + std::to_string(bp.max_len) +
                      " exceeds the decoder position table");
  }

  std::vector<Hypothesis> active{Hypothesis{}};
  std::vector<Finished> finished;

  auto keep_best_finished = [&]() {
    std::stable_sort(finished.begin(), finished.end(),
                     [](const Finished& a, const Finished& b) { return a.score > b.score; });
    if (static_cast<int>(finished.size()) > bp.beam_size) finished.resize(bp.beam_size);
  };

  for (int step = 0; step <= bp.max_len && !active.empty(); ++step) {
    struct Cand {
      size_t hyp;
      int token;
      double logp;
    };
    std::vector<Cand> cands;
    for (size_t h = 0; h < active.size(); ++h) {
      std::vector<double> lp = next_distribution(model, tape, enc, active[h].content, bp);
      for (size_t tok = 0; tok < lp.size(); ++tok) {
        if (lp[tok] == kNegInf) continue;
        cands.push_back({h, static_cast<int>(tok), active[h].logp + lp[tok]});
      }
    }
    // Deterministic order: higher total first; ties by hypothesis then token id.
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.logp != b.logp) return a.logp > b.logp;
      if (a.hyp != b.hyp) return a.hyp < b.hyp;
      return a.token < b.token;
    });

    std::vector<Hypothesis> next;
    for (const Cand& c : cands) {
      if (c.token == Vocab::kEnd) {
        const auto& content = active[c.hyp].content;
        double norm = static_cast<double>(content.size()) + 1.0;
        finished.push_back({content, c.logp / norm});
      } else if (static_cast<int>(next.size()) < bp.beam_size) {
        Hypothesis h;
        h.content = active[c.hyp].content;
        h.content.push_back(c.token);
        h.logp = c.logp;
        next.push_back(std::move(h));
      }
    }
    keep_best_finished();
    active = std::move(next);
  }

  if (finished.empty()) {
    throw ContractError("beam search produced no finished hypothesis");
  }
  keep_best_finished();
  return finished.front().content;
}

Selection select_images(const Model& model, Tape& tape, const EncoderOutput& enc, int k,
                        bool head_trained, std::span<const int> generated_content_ids) {
  if (k < 1) throw ContractError("select_images: k must be >= 1");
  if (enc.m < 1) throw ContractError("select_images: no images to select from");

  Selection sel;
  sel.scores.resize(static_cast<size_t>(enc.m));

  if (head_trained) {
    Var logits = model.select_logits(tape, enc);
    const Tensor& lv = tape.val(logits);
    for (int i = 0; i < enc.m; ++i) {
      sel.scores[static_cast<size_t>(i)] =
          1.0f / (1.0f + std::exp(-lv[static_cast<size_t>(i)]));
    }
  } else {
    // Head never trained: rank by similarity to the generated summary's
    // mean decoder state instead.
    std::vector<int> input;
    input.push_back(Vocab::kStart);
    input.insert(input.end(), generated_content_ids.begin(), generated_content_ids.end());
    Var states = model.decoder_states(tape, enc, input);
    const Tensor& sv = tape.val(states);
    int d = sv.cols();
    std::vector<float> mean(static_cast<size_t>(d), 0.0f);
    int content_rows = sv.rows() - 1;  // skip the START position
    if (content_rows < 1) content_rows = sv.rows();
    int first = sv.rows() - content_rows;
    for (int r = first; r < sv.rows(); ++r) {
      for (int c = 0; c < d; ++c) mean[static_cast<size_t>(c)] += sv.at(r, c);
    }
    for (float& x : mean) x /= static_cast<float>(content_rows);

    const Tensor& vv = tape.val(enc.visual);
    for (int i = 0; i < enc.m; ++i) {
      std::span<const float> row = vv.data().subspan(static_cast<size_t>(i) * d,
                                                     static_cast<size_t>(d));
      sel.scores[static_cast<size_t>(i)] = cosine(row, mean);
    }
  }

  std::vector<int> order(static_cast<size_t>(enc.m));
  for (int i = 0; i < enc.m; ++i) order[static_cast<size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    float sa = sel.scores[static_cast<size_t>(a)];
    float sb = sel.scores[static_cast<size_t>(b)];
    if (sa != sb) return sa > sb;
    return a < b;
  });
  int take = std::min(k, enc.m);
  sel.ranked.assign(order.begin(), order.begin() + take);
  sel.short_count = k > enc.m;
  return sel;
}

}  // namespace vilsum
