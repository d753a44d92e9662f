#include "vilsum/blocks.hpp"

namespace vilsum {

namespace {
constexpr float kInitStd = 0.02f;
}

void register_layer_norm(ParamStore& store, const std::string& prefix, int d) {
  store.add(prefix + ".g", Tensor::full({d}, 1.0f));
  store.add(prefix + ".b", Tensor::zeros({d}));
}

void register_attn(ParamStore& store, const std::string& prefix, int d, std::mt19937& rng) {
  for (const char* w : {"wq", "wk", "wv", "wo"}) {
    store.add(prefix + "." + w, Tensor::randn({d, d}, rng, kInitStd));
  }
  for (const char* b : {"bq", "bk", "bv", "bo"}) {
    store.add(prefix + "." + b, Tensor::zeros({d}));
  }
}

void register_block(ParamStore& store, const std::string& prefix, int d, std::mt19937& rng) {
  register_layer_norm(store, prefix + ".ln1", d);
  register_attn(store, prefix + ".attn", d, rng);
  register_layer_norm(store, prefix + ".ln2", d);
  store.add(prefix + ".ffn.w1", Tensor::randn({d, 4 * d}, rng, kInitStd));
  store.add(prefix + ".ffn.b1", Tensor::zeros({4 * d}));
  store.add(prefix + ".ffn.w2", Tensor::randn({4 * d, d}, rng, kInitStd));
  store.add(prefix + ".ffn.b2", Tensor::zeros({d}));
}

void register_decoder_block(ParamStore& store, const std::string& prefix, int d,
                            std::mt19937& rng) {
  register_block(store, prefix, d, rng);
  register_layer_norm(store, prefix + ".lnc", d);
  register_attn(store, prefix + ".cross", d, rng);
}

AttnParams bind_attn(ParamStore& store, const std::string& prefix) {
  return AttnParams{
      &store.get(prefix + ".wq"), &store.get(prefix + ".bq"),
      &store.get(prefix + ".wk"), &store.get(prefix + ".bk"),
      &store.get(prefix + ".wv"), &store.get(prefix + ".bv"),
      &store.get(prefix + ".wo"), &store.get(prefix + ".bo"),
  };
}

BlockParams bind_block(ParamStore& store, const std::string& prefix) {
  BlockParams p;
  p.ln1_g = &store.get(prefix + ".ln1.g");
  p.ln1_b = &store.get(prefix + ".ln1.b");
  p.attn = bind_attn(store, prefix + ".attn");
  p.ln2_g = &store.get(prefix + ".ln2.g");
  p.ln2_b = &store.get(prefix + ".ln2.b");
  p.w1 = &store.get(prefix + ".ffn.w1");
  p.b1 = &store.get(prefix + ".ffn.b1");
  p.w2 = &store.get(prefix + ".ffn.w2");
  p.b2 = &store.get(prefix + ".ffn.b2");
  return p;
}

DecoderBlockParams bind_decoder_block(ParamStore& store, const std::string& prefix) {
  DecoderBlockParams p;
  p.base = bind_block(store, prefix);
  p.lnc_g = &store.get(prefix + ".lnc.g");
  p.lnc_b = &store.get(prefix + ".lnc.b");
  p.cross = bind_attn(store, prefix + ".cross");
  return p;
}

Var attn_sublayer(Tape& tape, Var q_in, Var kv_in, const AttnParams& p, int n_heads,
                  const std::vector<std::uint8_t>* key_padding, bool causal, AttnProbe* probe) {
  Var q = tape.add_rowvec(tape.matmul(q_in, tape.leaf(*p.wq)), tape.leaf(*p.bq));
  Var k = tape.add_rowvec(tape.matmul(kv_in, tape.leaf(*p.wk)), tape.leaf(*p.bk));
  Var v = tape.add_rowvec(tape.matmul(kv_in, tape.leaf(*p.wv)), tape.leaf(*p.bv));
  Var a = tape.attention(q, k, v, n_heads, key_padding, causal, probe);
  return tape.add_rowvec(tape.matmul(a, tape.leaf(*p.wo)), tape.leaf(*p.bo));
}

Var feed_forward(Tape& tape, Var x, const BlockParams& p) {
  Var h = tape.gelu(tape.add_rowvec(tape.matmul(x, tape.leaf(*p.w1)), tape.leaf(*p.b1)));
  return tape.add_rowvec(tape.matmul(h, tape.leaf(*p.w2)), tape.leaf(*p.b2));
}

Var encoder_block_fwd(Tape& tape, Var x, const BlockParams& p, int n_heads,
                      const std::vector<std::uint8_t>* key_padding, AttnProbe* probe) {
  Var n1 = tape.layer_norm(x, tape.leaf(*p.ln1_g), tape.leaf(*p.ln1_b));
  x = tape.add(x, attn_sublayer(tape, n1, n1, p.attn, n_heads, key_padding, false, probe));
  Var n2 = tape.layer_norm(x, tape.leaf(*p.ln2_g), tape.leaf(*p.ln2_b));
  return tape.add(x, feed_forward(tape, n2, p));
}

Var decoder_block_fwd(Tape& tape, Var x, Var memory, const DecoderBlockParams& p, int n_heads,
                      AttnProbe* probe) {
  Var n1 = tape.layer_norm(x, tape.leaf(*p.base.ln1_g), tape.leaf(*p.base.ln1_b));
  x = tape.add(x, attn_sublayer(tape, n1, n1, p.base.attn, n_heads, nullptr, true, nullptr));
  Var nc = tape.layer_norm(x, tape.leaf(*p.lnc_g), tape.leaf(*p.lnc_b));
  x = tape.add(x, attn_sublayer(tape, nc, memory, p.cross, n_heads, nullptr, false, probe));
  Var n2 = tape.layer_norm(x, tape.leaf(*p.base.ln2_g), tape.leaf(*p.base.ln2_b));
  return tape.add(x, feed_forward(tape, n2, p.base));
}

}  // namespace vilsum
