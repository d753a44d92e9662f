#pragma once

#include <random>
#include <string>

#include "vilsum/param_store.hpp"
#include "vilsum/tape.hpp"

namespace vilsum {

// Pre-norm transformer blocks shared by the image tokenizer, the joint
// encoder, and the decoder. Feed-forward width is 4*d with GELU.

struct AttnParams {
  Tensor *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
};

struct BlockParams {
  Tensor *ln1_g, *ln1_b;
  AttnParams attn;
  Tensor *ln2_g, *ln2_b;
  Tensor *w1, *b1, *w2, *b2;
};

struct DecoderBlockParams {
  BlockParams base;
  Tensor *lnc_g, *lnc_b;
  AttnParams cross;
};

void register_attn(ParamStore& store, const std::string& prefix, int d, std::mt19937& rng);
void register_block(ParamStore& store, const std::string& prefix, int d, std::mt19937& rng);
void register_decoder_block(ParamStore& store, const std::string& prefix, int d, std::mt19937& rng);
void register_layer_norm(ParamStore& store, const std::string& prefix, int d);

AttnParams bind_attn(ParamStore& store, const std::string& prefix);
BlockParams bind_block(ParamStore& store, const std::string& prefix);
DecoderBlockParams bind_decoder_block(ParamStore& store, const std::string& prefix);

/// Projected multi-head attention: queries from q_in, keys/values from kv_in.
Var attn_sublayer(Tape& tape, Var q_in, Var kv_in, const AttnParams& p, int n_heads,
                  const std::vector<std::uint8_t>* key_padding = nullptr, bool causal = false,
                  AttnProbe* probe = nullptr);

Var feed_forward(Tape& tape, Var x, const BlockParams& p);

Var encoder_block_fwd(Tape& tape, Var x, const BlockParams& p, int n_heads,
                      const std::vector<std::uint8_t>* key_padding = nullptr,
                      AttnProbe* probe = nullptr);

Var decoder_block_fwd(Tape& tape, Var x, Var memory, const DecoderBlockParams& p, int n_heads,
                      AttnProbe* probe = nullptr);

}  // namespace vilsum
