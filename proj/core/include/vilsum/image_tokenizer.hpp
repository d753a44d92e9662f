#pragma once

#include <random>
#include <span>
#include <vector>

#include "vilsum/blocks.hpp"
#include "vilsum/image.hpp"
#include "vilsum/param_store.hpp"
#include "vilsum/tape.hpp"

namespace vilsum {

struct TokenizerConfig {
  int patch = 8;
  int image_size = 32;
  int d_model = 64;
  int layers = 2;       // 0 = plain linear projection, no transformer
  int n_heads = 4;

  int n_patches() const { return (image_size / patch) * (image_size / patch); }
  void validate() const;
};

/// Z0 = [class_emb ; patches x proj] + pos, class token at row 0.
/// patches: [N, P²], proj: [P², D], class_emb: [1, D], pos: [N+1, D].
Var embed_patches(Tape& tape, Var patches, Var proj, Var class_emb, Var pos);

/// One visual token per image: patchify, project, prepend class token, add
/// positions, run `layers` transformer blocks, max-pool over all rows.
class ImageTokenizer {
 public:
  static void register_params(const TokenizerConfig& cfg, ParamStore& store,
                              const std::string& prefix, std::mt19937& rng);

  /// Registers parameters under "{prefix}." in the store and binds to them.
  ImageTokenizer(TokenizerConfig cfg, ParamStore& store, const std::string& prefix,
                 std::mt19937& rng);
  /// Binds to parameters a previous registration put in the store.
  ImageTokenizer(TokenizerConfig cfg, ParamStore& store, const std::string& prefix);

  const TokenizerConfig& config() const { return cfg_; }

  Var encode_one(Tape& tape, const ImageGrid& img) const;          // [1, D]
  Var encode_images(Tape& tape, std::span<const ImageGrid> imgs) const;  // [M, D]

 private:
  void bind(ParamStore& store, const std::string& prefix);

  TokenizerConfig cfg_;
  Tensor *proj_ = nullptr, *cls_ = nullptr, *pos_ = nullptr;
  std::vector<BlockParams> blocks_;
};

}  // namespace vilsum
