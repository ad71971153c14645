#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pbp/corpus.hpp"
#include "pbp/numerics.hpp"
#include "pbp/tokenizer.hpp"

namespace pbp {

// Encoder hyperparameters. The defaults are the desk-scale configuration;
// the reference-sized stack (6 layers, 12 heads, 768 hidden) is equally
// constructible.
struct ModelConfig {
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t d_model = 128;
    std::size_t ffn_dim = 512;
    std::size_t vocab_size = 0;
    std::size_t max_positions = kDefaultMaxLen;
    double dropout = 0.1;
    std::size_t head_classes = kNumBreakClasses;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

struct LayerWeights {
    Tensor attn_q_w, attn_q_b;
    Tensor attn_k_w, attn_k_b;
    Tensor attn_v_w, attn_v_b;
    Tensor attn_o_w, attn_o_b;
    Tensor ln_attn_gain, ln_attn_bias;
    Tensor ffn_in_w, ffn_in_b;
    Tensor ffn_out_w, ffn_out_b;
    Tensor ln_ffn_gain, ln_ffn_bias;
};

// Encoder parameters plus both task heads (masked-LM projection and the
// 3-class juncture classifier). The checkpoint stage tag records which
// head last trained.
struct EncoderWeights {
    Tensor tok_emb;  // [vocab, d_model]
    Tensor pos_emb;  // [max_positions, d_model]
    std::vector<LayerWeights> layers;
    Tensor mlm_w, mlm_b;
    Tensor cls_w, cls_b;
};

// Stable, serialization-defining parameter order.
std::vector<std::pair<std::string, Tensor>> named_parameters(const EncoderWeights& w);

struct CheckpointMeta {
    std::uint64_t seed = 0;
    std::string stage = "init";  // init | pretrained | stage1 | stage2 | finetuned
    std::uint32_t format_version = 1;
};

struct ModelCheckpoint {
    ModelConfig config;
    EncoderWeights weights;
    CheckpointMeta meta;
};

// Weights drawn from a truncated normal (sigma 0.02, cut at 2 sigma);
// layer-norm gains 1, all biases 0. Deterministic in seed.
EncoderWeights init_model(const ModelConfig& config, std::uint64_t seed);

ModelCheckpoint deep_copy(const ModelCheckpoint& ckpt);

// Padded batch view over a set of encodings.
struct Batch {
    std::size_t batch_size = 0;
    std::size_t seq_len = 0;
    std::vector<int> ids;               // batch_size * seq_len, PAD-filled
    std::vector<std::uint8_t> valid;    // non-PAD positions
    std::vector<int> class_targets;     // aligned juncture targets, kIgnoreTarget elsewhere
};

Batch make_batch(const std::vector<Encoding>& encs);
Batch make_batch(const std::vector<Encoding>& encs,
                 const std::vector<const std::vector<BreakLabel>*>& junctures);

// Full encoder stack: embeddings, then per layer masked multi-head
// self-attention, residual + layer norm, gelu FFN, residual + layer norm.
// Returns hidden states [B, T, d_model].
Tensor forward_encode(const EncoderWeights& w, const ModelConfig& cfg, const Batch& batch,
                      bool train, CounterRng& rng, Tape* tape);

// Cross-entropy of the classification head over the batch's aligned
// targets (head dropout applied when training).
Tensor break_loss(const EncoderWeights& w, const ModelConfig& cfg, const Batch& batch,
                  bool train, CounterRng& rng, Tape* tape);

// Cross-entropy of the masked-LM head over the masked positions only.
// mlm_targets holds the original token id at masked positions and
// kIgnoreTarget elsewhere; a batch with no masked position is an error.
Tensor mlm_forward(const EncoderWeights& w, const ModelConfig& cfg, const Batch& batch,
                   const std::vector<int>& mlm_targets, bool train, CounterRng& rng, Tape* tape);

// Evaluation-mode class distributions per label slot, one inner vector
// per encoding, in encoding order.
std::vector<std::vector<std::array<double, kNumBreakClasses>>> predict_breaks(
    const ModelCheckpoint& ckpt, const std::vector<Encoding>& encs);

// Versioned binary checkpoint with a whole-file checksum; save/load/save
// is byte-identical.
void save_checkpoint(const ModelCheckpoint& ckpt, const std::string& path);
ModelCheckpoint load_checkpoint(const std::string& path);

std::uint64_t checkpoint_digest(const ModelCheckpoint& ckpt);

}  // namespace pbp
