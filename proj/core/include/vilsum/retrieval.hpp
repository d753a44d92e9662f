#pragma once

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vilsum/image.hpp"
#include "vilsum/param_store.hpp"

namespace vilsum {

struct RetrievalConfig {
  int shared_dim = 64;
  float margin = 0.2f;
  int batch_size = 16;
  int max_epochs = 200;
  float required_gap = 0.2f;   // held-out diagonal-vs-off-diagonal cosine gap
  float lr = 3e-3f;
  long seed = 7;
  int bow_limit = 512;         // most frequent words kept for text features
};

/// Image/text cosine scorer behind the MAX_sim metric. Two linear
/// projections (raw pixels and bag-of-words counts) into a shared space,
/// trained with a bidirectional triplet loss on matched pairs. Training
/// stops once held-out pairs separate by the required cosine gap and
/// throws TrainingError if they never do, so a reported MAX_sim always
/// comes from a scorer that demonstrably ranks matched pairs higher.
class RetrievalScorer {
 public:
  explicit RetrievalScorer(RetrievalConfig cfg = {}) : cfg_(cfg) {}

  /// Trains on matched (image, text) pairs. Needs at least 50 pairs; the
  /// last max(2, n/10) after a seeded shuffle are held out for the gap
  /// check. Returns the final held-out gap.
  float train(std::span<const std::pair<ImageGrid, std::string>> pairs);

  /// Cosine similarity of the pair in the shared space, clamped to [0, 1].
  float score(const ImageGrid& image, const std::string& text) const;

  bool trained() const { return trained_; }
  const RetrievalConfig& config() const { return cfg_; }

 private:
  std::vector<float> image_features(const ImageGrid& image) const;
  std::vector<float> text_features(const std::string& text) const;
  std::vector<float> project(std::span<const float> feat, const Tensor& proj) const;

  RetrievalConfig cfg_;
  std::map<std::string, int> bow_;
  int img_dim_ = 0;
  ParamStore params_;
  bool trained_ = false;
};

/// Highest scorer similarity between the text and any of the images.
float max_sim(const RetrievalScorer& scorer, std::span<const ImageGrid> images,
              const std::string& text);

}  // namespace vilsum
