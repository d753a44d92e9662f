#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vilsum/blocks.hpp"
#include "vilsum/image_tokenizer.hpp"
#include "vilsum/param_store.hpp"
#include "vilsum/tape.hpp"

namespace vilsum {

enum class Mode { joint, cross };
Mode parse_mode(const std::string& name);
std::string mode_name(Mode mode);

/// Which training objectives are active. Generation is always required.
struct TaskFlags {
  bool gen = true;
  bool sel = false;
  bool reo = false;

  static TaskFlags parse(const std::string& csv);  // e.g. "gen,sel,reo"
  std::string to_string() const;
  bool any() const { return gen || sel || reo; }
};

struct ModelConfig {
  int d_model = 64;
  int n_heads = 4;
  int enc_layers = 2;
  int dec_layers = 2;
  int vocab_size = 0;
  int patch_size = 8;
  int image_size = 32;
  int tok_layers = 2;
  int max_text_tokens = 512;
  int max_dec_tokens = 160;
  int k_select = 3;
  Mode mode = Mode::joint;
  float gen_weight = 1.0f;
  float sel_weight = 1.0f;
  float reo_weight = 1.0f;

  /// Class count of the shared reorder head; inputs keep at most this many
  /// images.
  static constexpr int kMaxImages = 10;

  void validate() const;
  TokenizerConfig tokenizer_config() const;
};

/// Joint hidden states split into the M visual positions (first) and the
/// T+2 text positions. In cross mode the visual rows are the raw visual
/// token embeddings and the text rows are the fused text encoding; `hidden`
/// is always their concatenation and is what the decoder attends to.
struct EncoderOutput {
  Var hidden;   // [M + T + 2, d]
  Var visual;   // [M, d]; invalid when m == 0
  Var text;     // [T + 2, d]
  int m = 0;
  int text_len = 0;  // T + 2
};

struct LossParts {
  Var gen, sel, reo;  // invalid for disabled tasks
  Var total;
};

class Model {
 public:
  Model(ModelConfig cfg, std::uint32_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const ImageTokenizer& tokenizer() const { return tokenizer_; }

  /// One visual token embedding per image (E_v). images may be empty only
  /// through encode(); here it must be nonempty.
  Var visual_embeddings(Tape& tape, std::span<const ImageGrid> images) const;

  /// Runs the configured encoder (joint concatenation or text-plus-fusion).
  /// probe, when given, records the attention weights of every encoder
  /// block call in order.
  EncoderOutput encode(Tape& tape, std::span<const ImageGrid> images,
                       std::span<const int> text_ids, AttnProbe* probe = nullptr) const;

  /// Final decoder hidden states for teacher-forced input ids (START-led).
  Var decoder_states(Tape& tape, const EncoderOutput& enc, std::span<const int> input_ids,
                     AttnProbe* probe = nullptr) const;
  Var output_logits(Tape& tape, Var dec_states) const;  // [n, vocab]

  /// Mean NLL of summary_ids ([START, ..., END]) under teacher forcing.
  Var generation_loss(Tape& tape, const EncoderOutput& enc,
                      std::span<const int> summary_ids) const;

  Var reorder_logits(Tape& tape, const EncoderOutput& enc) const;  // [M, 10]
  /// Mean categorical cross-entropy of each image's original position.
  Var reorder_loss(Tape& tape, const EncoderOutput& enc,
                   std::span<const int> original_positions) const;

  Var select_logits(Tape& tape, const EncoderOutput& enc) const;  // [M]
  /// Mean binary cross-entropy of the per-image selection probabilities.
  Var select_loss(Tape& tape, const EncoderOutput& enc, std::span<const float> labels) const;

  /// Weighted sum of the enabled losses (weights default to 1.0).
  LossParts total_loss(Tape& tape, const EncoderOutput& enc, std::span<const int> summary_ids,
                       std::span<const int> reorder_targets,
                       std::span<const float> selection_labels, TaskFlags tasks) const;

 private:
  ModelConfig cfg_;
  ParamStore params_;
  ImageTokenizer tokenizer_;

  Tensor *emb_tok_, *pos_txt_, *pos_img_, *pos_dec_;
  std::vector<BlockParams> enc_blocks_;
  Tensor *enc_final_g_, *enc_final_b_;
  Tensor *fuse_ln_g_ = nullptr, *fuse_ln_b_ = nullptr;  // cross mode only
  AttnParams fuse_attn_{};
  std::vector<DecoderBlockParams> dec_blocks_;
  Tensor *dec_final_g_, *dec_final_b_;
  Tensor* out_b_;  // vocabulary logits reuse emb.tok (tied weights)
  Tensor *reorder_w_, *reorder_b_;
  Tensor *select_w_, *select_b_;
};

}  // namespace vilsum
