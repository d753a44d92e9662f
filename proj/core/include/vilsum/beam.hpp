#pragma once

#include <span>
#include <vector>

#include "vilsum/model.hpp"

namespace vilsum {

struct BeamParams {
  int beam_size = 3;
  int min_len = 5;
  int max_len = 40;

  void validate() const;
};

/// Log-probabilities over the vocabulary for the next token, constrained:
/// PAD and START are never emitted, END is suppressed while fewer than
/// min_len content tokens were emitted, and at max_len only END remains.
/// Returned in double precision; disallowed entries are -infinity.
std::vector<double> constrained_logprobs(std::span<const float> logits_row, int content_len,
                                         const BeamParams& bp);

/// Length-normalized beam decoding: candidate score is the sum of emitted
/// token log-probabilities (END included) divided by the emitted token
/// count. Returns content token ids, no sentinels. Deterministic; ties
/// prefer the lower token id.
std::vector<int> beam_search(const Model& model, Tape& tape, const EncoderOutput& enc,
                             const BeamParams& bp);

/// Ranked image indices for the multimodal summary.
struct Selection {
  std::vector<int> ranked;        // descending score, ties by lower index
  std::vector<float> scores;      // aligned with image order (not ranked order)
  bool short_count = false;       // k exceeded the number of images
};

/// Top-k images by the selection head's probabilities. When the head was
/// never trained (head_trained=false), ranks instead by cosine similarity
/// between each visual state and the mean decoder hidden state of the
/// generated summary.
Selection select_images(const Model& model, Tape& tape, const EncoderOutput& enc, int k,
                        bool head_trained, std::span<const int> generated_content_ids);

}  // namespace vilsum
