#include "vilsum/model.hpp"

#include <numeric>
#include <sstream>

#include "vilsum/errors.hpp"
#include "vilsum/text.hpp"

namespace vilsum {

Mode parse_mode(const std::string& name) {
  if (name == "joint") return Mode::joint;
  if (name == "cross") return Mode::cross;
  throw ConfigError("unknown mode '" + name + "' (valid: joint, cross)");
}

std::string mode_name(Mode mode) { return mode == Mode::joint ? "joint" : "cross"; }

TaskFlags TaskFlags::parse(const std::string& csv) {
  TaskFlags f{false, false, false};
  std::stringstream ss(csv);
  std::string item;
  bool saw_any = false;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    saw_any = true;
    if (item == "gen") {
      f.gen = true;
    } else if (item == "sel") {
      f.sel = true;
    } else if (item == "reo") {
      f.reo = true;
    } else {
      throw ConfigError("unknown task '" + item + "' (valid: gen, sel, reo)");
    }
  }
  if (!saw_any) throw ConfigError("no tasks given (valid: gen, sel, reo)");
  if (!f.gen) throw ConfigError("task list must include gen (got '" + csv + "')");
  return f;
}

std::string TaskFlags::to_string() const {
  std::string out;
  auto append = [&out](const char* name) {
    if (!out.empty()) out.push_back(',');
    out += name;
  };
  if (gen) append("gen");
  if (sel) append("sel");
  if (reo) append("reo");
  return out;
}

void ModelConfig::validate() const {
  if (d_model <= 0 || n_heads <= 0) throw ConfigError("model: non-positive dimensions");
  if (d_model % n_heads != 0) {
    throw ConfigError("model: d_model " + std::to_string(d_model) + " not divisible by " +
                      std::to_string(n_heads) + " heads");
  }
  if (enc_layers < 1 || dec_layers < 1) throw ConfigError("model: need at least one layer");
  if (vocab_size <= Vocab::kReserved) throw ConfigError("model: vocab_size too small");
  if (max_text_tokens < 2 || max_dec_tokens < 2) throw ConfigError("model: token caps too small");
  if (k_select < 1) throw ConfigError("model: k_select must be >= 1");
  tokenizer_config().validate();
}

TokenizerConfig ModelConfig::tokenizer_config() const {
  TokenizerConfig t;
  t.patch = patch_size;
  t.image_size = image_size;
  t.d_model = d_model;
  t.layers = tok_layers;
  t.n_heads = n_heads;
  return t;
}

namespace {

// Registration order fixes both the rng draw order and the checkpoint
// tensor order: tokenizer, embeddings, encoder, fusion (cross mode),
// decoder, output projection, task heads.
void register_model_params(const ModelConfig& cfg, ParamStore& store, std::uint32_t seed) {
  std::mt19937 rng(seed);
  ImageTokenizer::register_params(cfg.tokenizer_config(), store, "tok", rng);
  int d = cfg.d_model;
  store.add("emb.tok", Tensor::randn({cfg.vocab_size, d}, rng, 0.02f));
  store.add("emb.pos_txt", Tensor::randn({cfg.max_text_tokens, d}, rng, 0.02f));
  store.add("emb.pos_img", Tensor::randn({ModelConfig::kMaxImages, d}, rng, 0.02f));
  store.add("emb.pos_dec", Tensor::randn({cfg.max_dec_tokens, d}, rng, 0.02f));
  for (int l = 0; l < cfg.enc_layers; ++l) {
    register_block(store, "enc.l" + std::to_string(l), d, rng);
  }
  register_layer_norm(store, "enc.final", d);
  if (cfg.mode == Mode::cross) {
    register_layer_norm(store, "fuse.ln", d);
    register_attn(store, "fuse.attn", d, rng);
  }
  for (int l = 0; l < cfg.dec_layers; ++l) {
    register_decoder_block(store, "dec.l" + std::to_string(l), d, rng);
  }
  register_layer_norm(store, "dec.final", d);
  // The vocabulary projection shares emb.tok (weight tying), so only the
  // output bias is a fresh parameter.
  store.add("dec.out.b", Tensor::zeros({cfg.vocab_size}));
  store.add("head.reorder.w", Tensor::randn({d, ModelConfig::kMaxImages}, rng, 0.02f));
  store.add("head.reorder.b", Tensor::zeros({ModelConfig::kMaxImages}));
  store.add("head.select.w", Tensor::randn({d, 1}, rng, 0.02f));
  store.add("head.select.b", Tensor::zeros({1}));
}

}  // namespace

Model::Model(ModelConfig cfg, std::uint32_t seed)
    : cfg_((cfg.validate(), cfg)),
      params_(),
      tokenizer_((register_model_params(cfg_, params_, seed), cfg_.tokenizer_config()), params_,
                 "tok") {
  emb_tok_ = &params_.get("emb.tok");
  pos_txt_ = &params_.get("emb.pos_txt");
  pos_img_ = &params_.get("emb.pos_img");
  pos_dec_ = &params_.get("emb.pos_dec");
  for (int l = 0; l < cfg_.enc_layers; ++l) {
    enc_blocks_.push_back(bind_block(params_, "enc.l" + std::to_string(l)));
  }
  enc_final_g_ = &params_.get("enc.final.g");
  enc_final_b_ = &params_.get("enc.final.b");
  if (cfg_.mode == Mode::cross) {
    fuse_ln_g_ = &params_.get("fuse.ln.g");
    fuse_ln_b_ = &params_.get("fuse.ln.b");
    fuse_attn_ = bind_attn(params_, "fuse.attn");
  }
  for (int l = 0; l < cfg_.dec_layers; ++l) {
    dec_blocks_.push_back(bind_decoder_block(params_, "dec.l" + std::to_string(l)));
  }
  dec_final_g_ = &params_.get("dec.final.g");
  dec_final_b_ = &params_.get("dec.final.b");
  out_b_ = &params_.get("dec.out.b");
  reorder_w_ = &params_.get("head.reorder.w");
  reorder_b_ = &params_.get("head.reorder.b");
  select_w_ = &params_.get("head.select.w");
  select_b_ = &params_.get("head.select.b");
}

Var Model::visual_embeddings(Tape& tape, std::span<const ImageGrid> images) const {
  return tokenizer_.encode_images(tape, images);
}

EncoderOutput Model::encode(Tape& tape, std::span<const ImageGrid> images,
                            std::span<const int> text_ids, AttnProbe* probe) const {
  int m = static_cast<int>(images.size());
  if (m > ModelConfig::kMaxImages) {
    throw ContractError("encode: got " + std::to_string(m) + " images, caller must truncate to " +
                        std::to_string(ModelConfig::kMaxImages));
  }
  int t_len = static_cast<int>(text_ids.size());
  if (t_len < 2) throw ContractError("encode: text must carry the start/end sentinels");
  if (t_len > cfg_.max_text_tokens) {
    throw ContractError("encode: text length " + std::to_string(t_len) + " exceeds cap " +
                        std::to_string(cfg_.max_text_tokens));
  }

  Var e_d = tape.embed(tape.leaf(*emb_tok_), text_ids);
  e_d = tape.add(e_d, tape.slice_rows(tape.leaf(*pos_txt_), 0, t_len));

  EncoderOutput out;
  out.m = m;
  out.text_len = t_len;

  if (cfg_.mode == Mode::joint) {
    Var h;
    if (m > 0) {
      Var e_v = visual_embeddings(tape, images);
      e_v = tape.add(e_v, tape.slice_rows(tape.leaf(*pos_img_), 0, m));
      h = tape.concat_rows({e_v, e_d});
    } else {
      h = e_d;
    }
    for (const auto& block : enc_blocks_) {
      h = encoder_block_fwd(tape, h, block, cfg_.n_heads, nullptr, probe);
    }
    h = tape.layer_norm(h, tape.leaf(*enc_final_g_), tape.leaf(*enc_final_b_));
    out.hidden = h;
    if (m > 0) out.visual = tape.slice_rows(h, 0, m);
    out.text = m > 0 ? tape.slice_rows(h, m, m + t_len) : h;
    return out;
  }

  // cross mode: text encoded alone, then one residual cross-attention block
  // fusing the raw visual embeddings into the text states.
  Var t = e_d;
  for (const auto& block : enc_blocks_) {
    t = encoder_block_fwd(tape, t, block, cfg_.n_heads, nullptr, probe);
  }
  t = tape.layer_norm(t, tape.leaf(*enc_final_g_), tape.leaf(*enc_final_b_));
  if (m > 0) {
    Var e_v = visual_embeddings(tape, images);
    Var q = tape.layer_norm(t, tape.leaf(*fuse_ln_g_), tape.leaf(*fuse_ln_b_));
    t = tape.add(t, attn_sublayer(tape, q, e_v, fuse_attn_, cfg_.n_heads, nullptr, false, probe));
    out.hidden = tape.concat_rows({e_v, t});
    out.visual = e_v;
  } else {
    out.hidden = t;
  }
  out.text = t;
  return out;
}

Var Model::decoder_states(Tape& tape, const EncoderOutput& enc, std::span<const int> input_ids,
                          AttnProbe* probe) const {
  int n = static_cast<int>(input_ids.size());
  if (n < 1) throw ContractError("decoder_states: empty input");
  if (n > cfg_.max_dec_tokens) {
    throw ContractError("decoder_states: input length " + std::to_string(n) + " exceeds cap " +
                        std::to_string(cfg_.max_dec_tokens));
  }
  Var x = tape.embed(tape.leaf(*emb_tok_), input_ids);
  x = tape.add(x, tape.slice_rows(tape.leaf(*pos_dec_), 0, n));
  for (const auto& block : dec_blocks_) {
    x = decoder_block_fwd(tape, x, enc.hidden, block, cfg_.n_heads, probe);
  }
  return tape.layer_norm(x, tape.leaf(*dec_final_g_), tape.leaf(*dec_final_b_));
}

Var Model::output_logits(Tape& tape, Var dec_states) const {
  // Tied softmax: score each state against the token embedding table.
  return tape.add_rowvec(tape.matmul_nt(dec_states, tape.leaf(*emb_tok_)),
                         tape.leaf(*out_b_));
}

Var Model::generation_loss(Tape& tape, const EncoderOutput& enc,
                           std::span<const int> summary_ids) const {
  if (summary_ids.size() < 2) {
    throw ContractError("generation_loss: summary must contain at least one target token");
  }
  std::span<const int> input = summary_ids.subspan(0, summary_ids.size() - 1);
  std::span<const int> targets = summary_ids.subspan(1);
  Var states = decoder_states(tape, enc, input);
  Var logits = output_logits(tape, states);
  return tape.cross_entropy(logits, targets, Vocab::kPad);
}

Var Model::reorder_logits(Tape& tape, const EncoderOutput& enc) const {
  if (enc.m < 1) throw ContractError("reorder_logits: encoder output has no images");
  return tape.add_rowvec(tape.matmul(enc.visual, tape.leaf(*reorder_w_)),
                         tape.leaf(*reorder_b_));
}

Var Model::reorder_loss(Tape& tape, const EncoderOutput& enc,
                        std::span<const int> original_positions) const {
  if (static_cast<int>(original_positions.size()) != enc.m) {
    throw ContractError("reorder_loss: need one label per image");
  }
  for (int label : original_positions) {
    if (label < 0 || label >= ModelConfig::kMaxImages) {
      throw ContractError("reorder label " + std::to_string(label) + " outside the " +
                          std::to_string(ModelConfig::kMaxImages) + " position classes");
    }
  }
  return tape.cross_entropy(reorder_logits(tape, enc), original_positions);
}

Var Model::select_logits(Tape& tape, const EncoderOutput& enc) const {
  if (enc.m < 1) throw ContractError("select_logits: encoder output has no images");
  Var scores = tape.add_rowvec(tape.matmul(enc.visual, tape.leaf(*select_w_)),
                               tape.leaf(*select_b_));
  return tape.reshape(scores, {enc.m});
}

Var Model::select_loss(Tape& tape, const EncoderOutput& enc,
                       std::span<const float> labels) const {
  if (static_cast<int>(labels.size()) != enc.m) {
    throw ContractError("select_loss: need one label per image");
  }
  return tape.bce_logits(select_logits(tape, enc), labels);
}

LossParts Model::total_loss(Tape& tape, const EncoderOutput& enc,
                            std::span<const int> summary_ids,
                            std::span<const int> reorder_targets,
                            std::span<const float> selection_labels, TaskFlags tasks) const {
  if (!tasks.any()) throw ContractError("total_loss: no tasks enabled");
  if (!tasks.gen) throw ContractError("total_loss: the generation task is required");
  LossParts parts;
  parts.gen = generation_loss(tape, enc, summary_ids);
  parts.total = cfg_.gen_weight == 1.0f ? parts.gen : tape.scale(parts.gen, cfg_.gen_weight);
  if (tasks.sel) {
    parts.sel = select_loss(tape, enc, selection_labels);
    Var term = cfg_.sel_weight == 1.0f ? parts.sel : tape.scale(parts.sel, cfg_.sel_weight);
    parts.total = tape.add(parts.total, term);
  }
  if (tasks.reo) {
    parts.reo = reorder_loss(tape, enc, reorder_targets);
    Var term = cfg_.reo_weight == 1.0f ? parts.reo : tape.scale(parts.reo, cfg_.reo_weight);
    parts.total = tape.add(parts.total, term);
  }
  return parts;
}

}  // namespace vilsum
