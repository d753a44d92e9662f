#include "vilsum/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "vilsum/adam.hpp"
#include "vilsum/errors.hpp"
#include "vilsum/tape.hpp"
#include "vilsum/text.hpp"
#include "vilsum/training.hpp"

namespace vilsum {

namespace {

float clamp01(float x) { return std::min(1.0f, std::max(0.0f, x)); }

void l2_normalize(std::vector<float>& v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  float nrm = static_cast<float>(std::sqrt(std::max(s, 1e-24)));
  for (float& x : v) x /= nrm;
}

}  // namespace

std::vector<float> RetrievalScorer::image_features(const ImageGrid& image) const {
  if (static_cast<int>(image.pixels.size()) != img_dim_) {
    throw ContractError("retrieval scorer trained on " + std::to_string(img_dim_) +
                        "-pixel images, got " + std::to_string(image.pixels.size()));
  }
  return image.pixels;
}

std::vector<float> RetrievalScorer::text_features(const std::string& text) const {
  std::vector<float> feat(bow_.size(), 0.0f);
  for (const std::string& w : tokenize_words(text)) {
    auto it = bow_.find(w);
    if (it != bow_.end()) feat[static_cast<size_t>(it->second)] += 1.0f;
  }
  return feat;
}

std::vector<float> RetrievalScorer::project(std::span<const float> feat,
                                            const Tensor& proj) const {
  const int in = proj.dim(0), out = proj.dim(1);
  if (static_cast<int>(feat.size()) != in) {
    throw ContractError("retrieval feature length " + std::to_string(feat.size()) +
                        " does not match projection rows " + std::to_string(in));
  }
  std::vector<float> y(static_cast<size_t>(out), 0.0f);
  for (int i = 0; i < in; ++i) {
    const float f = feat[static_cast<size_t>(i)];
    if (f == 0.0f) continue;
    const float* row = proj.data().data() + static_cast<size_t>(i) * out;
    for (int j = 0; j < out; ++j) y[static_cast<size_t>(j)] += f * row[j];
  }
  l2_normalize(y);
  return y;
}

float RetrievalScorer::train(std::span<const std::pair<ImageGrid, std::string>> pairs) {
  const int n = static_cast<int>(pairs.size());
  if (n < 50) {
    throw ContractError("retrieval scorer needs at least 50 matched pairs, got " +
                        std::to_string(n));
  }
  img_dim_ = static_cast<int>(pairs[0].first.pixels.size());

  // Bag-of-words vocabulary: most frequent words, frequency then
  // lexicographic order for determinism.
  std::map<std::string, int> freq;
  for (const auto& [img, text] : pairs) {
    (void)img;
    for (const std::string& w : tokenize_words(text)) ++freq[w];
  }
  if (freq.empty()) throw ContractError("retrieval scorer: no words in any paired text");
  std::vector<std::pair<std::string, int>> by_freq(freq.begin(), freq.end());
  std::stable_sort(by_freq.begin(), by_freq.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  bow_.clear();
  int kept = std::min<int>(cfg_.bow_limit, static_cast<int>(by_freq.size()));
  for (int i = 0; i < kept; ++i) bow_[by_freq[static_cast<size_t>(i)].first] = i;

  std::mt19937 rng(static_cast<std::uint32_t>(cfg_.seed));
  params_ = ParamStore();
  params_.add("img.proj", Tensor::randn({img_dim_, cfg_.shared_dim}, rng, 0.02f));
  params_.add("txt.proj", Tensor::randn({kept, cfg_.shared_dim}, rng, 0.02f));
  trained_ = false;

  std::vector<int> shuffled = uniform_permutation(n, rng);
  int holdout = std::max(2, n / 10);
  int n_train = n - holdout;
  std::vector<int> train_idx(shuffled.begin(), shuffled.begin() + n_train);
  std::vector<int> held_idx(shuffled.begin() + n_train, shuffled.end());

  auto pack = [&](std::span<const int> idx) {
    Tensor imgs({static_cast<int>(idx.size()), img_dim_});
    Tensor txts({static_cast<int>(idx.size()), kept});
    for (size_t r = 0; r < idx.size(); ++r) {
      const auto& [img, text] = pairs[static_cast<size_t>(idx[r])];
      std::copy(img.pixels.begin(), img.pixels.end(),
                imgs.data().begin() + static_cast<long>(r) * img_dim_);
      std::vector<float> tf = text_features(text);
      std::copy(tf.begin(), tf.end(), txts.data().begin() + static_cast<long>(r) * kept);
    }
    return std::make_pair(std::move(imgs), std::move(txts));
  };

  auto heldout_gap = [&]() {
    std::vector<std::vector<float>> iv, tv;
    for (int idx : held_idx) {
      iv.push_back(project(pairs[static_cast<size_t>(idx)].first.pixels,
                           params_.get("img.proj")));
      tv.push_back(project(text_features(pairs[static_cast<size_t>(idx)].second),
                           params_.get("txt.proj")));
    }
    double diag = 0.0, off = 0.0;
    int m = static_cast<int>(held_idx.size());
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < m; ++j) {
        double dot = 0.0;
        for (int d = 0; d < cfg_.shared_dim; ++d) {
          dot += static_cast<double>(iv[static_cast<size_t>(i)][static_cast<size_t>(d)]) *
                 tv[static_cast<size_t>(j)][static_cast<size_t>(d)];
        }
        (i == j ? diag : off) += dot;
      }
    }
    diag /= m;
    off /= static_cast<double>(m) * (m - 1);
    return static_cast<float>(diag - off);
  };

  AdamConfig ac;
  ac.base_lr = cfg_.lr;
  ac.warmup_steps = 10;
  ac.weight_decay = 0.0f;
  AdamOptimizer opt(ac);

  float gap = 0.0f;
  for (int epoch = 0; epoch < cfg_.max_epochs; ++epoch) {
    std::vector<int> order = train_idx;
    std::vector<int> perm = uniform_permutation(n_train, rng);
    for (int i = 0; i < n_train; ++i) {
      order[static_cast<size_t>(i)] = train_idx[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    }
    for (int start = 0; start < n_train; start += cfg_.batch_size) {
      int len = std::min(cfg_.batch_size, n_train - start);
      if (len < 2) continue;  // the triplet loss needs at least one negative
      auto [imgs, txts] = pack(std::span<const int>(order).subspan(
          static_cast<size_t>(start), static_cast<size_t>(len)));
      Tape tape;
      Var iproj = tape.row_l2_normalize(
          tape.matmul(tape.constant(std::move(imgs)), tape.leaf(params_.get("img.proj"))));
      Var tproj = tape.row_l2_normalize(
          tape.matmul(tape.constant(std::move(txts)), tape.leaf(params_.get("txt.proj"))));
      Var loss = tape.triplet_hinge(tape.matmul_nt(iproj, tproj), cfg_.margin);
      params_.drop_grads();
      tape.backward(loss);
      opt.step(params_);
    }
    gap = heldout_gap();
    if (gap >= cfg_.required_gap) {
      trained_ = true;
      return gap;
    }
  }
  throw TrainingError("retrieval scorer failed to separate held-out pairs after " +
                      std::to_string(cfg_.max_epochs) + " epochs (gap " + std::to_string(gap) +
                      " < " + std::to_string(cfg_.required_gap) + ")");
}

float RetrievalScorer::score(const ImageGrid& image, const std::string& text) const {
  if (!trained_) throw ContractError("retrieval scorer used before training");
  std::vector<float> iv = project(image_features(image), params_.get("img.proj"));
  std::vector<float> tv = project(text_features(text), params_.get("txt.proj"));
  double dot = 0.0;
  for (size_t d = 0; d < iv.size(); ++d) dot += static_cast<double>(iv[d]) * tv[d];
  return clamp01(static_cast<float>(dot));
}

float max_sim(const RetrievalScorer& scorer, std::span<const ImageGrid> images,
              const std::string& text) {
  if (images.empty()) throw ContractError("max_sim: no images");
  float best = 0.0f;
  for (const ImageGrid& img : images) best = std::max(best, scorer.score(img, text));
  return best;
}

}  // namespace vilsum
