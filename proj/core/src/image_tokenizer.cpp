#include "vilsum/image_tokenizer.hpp"

#include "vilsum/errors.hpp"

namespace vilsum {

void TokenizerConfig::validate() const {
  if (patch <= 0 || image_size <= 0) throw ConfigError("tokenizer: non-positive dimensions");
  if (image_size % patch != 0) {
    throw ConfigError("tokenizer: image_size " + std::to_string(image_size) +
                      " not divisible by patch " + std::to_string(patch));
  }
  if (layers < 0) throw ConfigError("tokenizer: layers must be >= 0");
  if (layers > 0 && d_model % n_heads != 0) {
    throw ConfigError("tokenizer: d_model " + std::to_string(d_model) + " not divisible by " +
                      std::to_string(n_heads) + " heads");
  }
}

Var embed_patches(Tape& tape, Var patches, Var proj, Var class_emb, Var pos) {
  Var projected = tape.matmul(patches, proj);
  Var z0 = tape.concat_rows({class_emb, projected});
  return tape.add(z0, pos);
}

void ImageTokenizer::register_params(const TokenizerConfig& cfg, ParamStore& store,
                                     const std::string& prefix, std::mt19937& rng) {
  cfg.validate();
  int n = cfg.n_patches();
  int d = cfg.d_model;
  store.add(prefix + ".proj", Tensor::randn({cfg.patch * cfg.patch, d}, rng, 0.02f));
  store.add(prefix + ".cls", Tensor::randn({1, d}, rng, 0.02f));
  store.add(prefix + ".pos", Tensor::randn({n + 1, d}, rng, 0.02f));
  for (int l = 0; l < cfg.layers; ++l) {
    register_block(store, prefix + ".l" + std::to_string(l), d, rng);
  }
}

ImageTokenizer::ImageTokenizer(TokenizerConfig cfg, ParamStore& store, const std::string& prefix,
                               std::mt19937& rng)
    : cfg_(cfg) {
  cfg_.validate();
  register_params(cfg_, store, prefix, rng);
  bind(store, prefix);
}

ImageTokenizer::ImageTokenizer(TokenizerConfig cfg, ParamStore& store, const std::string& prefix)
    : cfg_(cfg) {
  cfg_.validate();
  bind(store, prefix);
}

void ImageTokenizer::bind(ParamStore& store, const std::string& prefix) {
  proj_ = &store.get(prefix + ".proj");
  cls_ = &store.get(prefix + ".cls");
  pos_ = &store.get(prefix + ".pos");
  blocks_.clear();
  for (int l = 0; l < cfg_.layers; ++l) {
    blocks_.push_back(bind_block(store, prefix + ".l" + std::to_string(l)));
  }
}

Var ImageTokenizer::encode_one(Tape& tape, const ImageGrid& img) const {
  if (img.h != cfg_.image_size || img.w != cfg_.image_size) {
    throw ShapeError("tokenizer expects " + std::to_string(cfg_.image_size) + "x" +
                     std::to_string(cfg_.image_size) + " images, got " + std::to_string(img.h) +
                     "x" + std::to_string(img.w));
  }
  Var patches = tape.constant(patchify(img, cfg_.patch));
  Var z = embed_patches(tape, patches, tape.leaf(*proj_), tape.leaf(*cls_), tape.leaf(*pos_));
  for (const auto& block : blocks_) {
    z = encoder_block_fwd(tape, z, block, cfg_.n_heads);
  }
  return tape.reshape(tape.rowmax(z), {1, cfg_.d_model});
}

Var ImageTokenizer::encode_images(Tape& tape, std::span<const ImageGrid> imgs) const {
  if (imgs.empty()) throw ContractError("encode_images: need at least one image");
  std::vector<Var> rows;
  rows.reserve(imgs.size());
  for (const auto& img : imgs) rows.push_back(encode_one(tape, img));
  if (rows.size() == 1) return rows[0];
  return tape.concat_rows(rows);
}

}  // namespace vilsum
