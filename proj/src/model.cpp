#include "pbp/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace pbp {

void ModelConfig::validate() const {
    if (layers < 1) throw std::runtime_error("config: layers must be >= 1");
    if (heads < 1 || d_model % heads != 0) {
        throw std::runtime_error("config: d_model must be divisible by heads");
    }
    if (ffn_dim < 1) throw std::runtime_error("config: ffn_dim must be >= 1");
    if (vocab_size < WordPieceVocab::kNumSpecials) {
        throw std::runtime_error("config: vocab_size must cover the special tokens");
    }
    if (max_positions < 3) throw std::runtime_error("config: max_positions must be >= 3");
    if (dropout < 0.0 || dropout >= 1.0) throw std::runtime_error("config: dropout outside [0,1)");
    if (head_classes < 2) throw std::runtime_error("config: head_classes must be >= 2");
}

std::vector<std::pair<std::string, Tensor>> named_parameters(const EncoderWeights& w) {
    std::vector<std::pair<std::string, Tensor>> params;
    params.emplace_back("tok_emb", w.tok_emb);
    params.emplace_back("pos_emb", w.pos_emb);
    for (std::size_t i = 0; i < w.layers.size(); ++i) {
        const auto& l = w.layers[i];
        const std::string p = "layer" + std::to_string(i) + ".";
        params.emplace_back(p + "attn_q_w", l.attn_q_w);
        params.emplace_back(p + "attn_q_b", l.attn_q_b);
        params.emplace_back(p + "attn_k_w", l.attn_k_w);
        params.emplace_back(p + "attn_k_b", l.attn_k_b);
        params.emplace_back(p + "attn_v_w", l.attn_v_w);
        params.emplace_back(p + "attn_v_b", l.attn_v_b);
        params.emplace_back(p + "attn_o_w", l.attn_o_w);
        params.emplace_back(p + "attn_o_b", l.attn_o_b);
        params.emplace_back(p + "ln_attn_gain", l.ln_attn_gain);
        params.emplace_back(p + "ln_attn_bias", l.ln_attn_bias);
        params.emplace_back(p + "ffn_in_w", l.ffn_in_w);
        params.emplace_back(p + "ffn_in_b", l.ffn_in_b);
        params.emplace_back(p + "ffn_out_w", l.ffn_out_w);
        params.emplace_back(p + "ffn_out_b", l.ffn_out_b);
        params.emplace_back(p + "ln_ffn_gain", l.ln_ffn_gain);
        params.emplace_back(p + "ln_ffn_bias", l.ln_ffn_bias);
    }
    params.emplace_back("mlm_w", w.mlm_w);
    params.emplace_back("mlm_b", w.mlm_b);
    params.emplace_back("cls_w", w.cls_w);
    params.emplace_back("cls_b", w.cls_b);
    return params;
}

namespace {

Tensor init_matrix(std::vector<std::size_t> shape, CounterRng& rng) {
    Tensor t = Tensor::zeros(std::move(shape), true);
    for (double& v : t.values()) v = rng.truncated_normal(0.02, 0.04);
    return t;
}

}  // namespace

EncoderWeights init_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    CounterRng rng(seed);

    EncoderWeights w;
    w.tok_emb = init_matrix({cfg.vocab_size, cfg.d_model}, rng);
    w.pos_emb = init_matrix({cfg.max_positions, cfg.d_model}, rng);
    w.layers.resize(cfg.layers);
    for (auto& l : w.layers) {
        l.attn_q_w = init_matrix({cfg.d_model, cfg.d_model}, rng);
        l.attn_q_b = Tensor::zeros({cfg.d_model}, true);
        l.attn_k_w = init_matrix({cfg.d_model, cfg.d_model}, rng);
        l.attn_k_b = Tensor::zeros({cfg.d_model}, true);
        l.attn_v_w = init_matrix({cfg.d_model, cfg.d_model}, rng);
        l.attn_v_b = Tensor::zeros({cfg.d_model}, true);
        l.attn_o_w = init_matrix({cfg.d_model, cfg.d_model}, rng);
        l.attn_o_b = Tensor::zeros({cfg.d_model}, true);
        l.ln_attn_gain = Tensor::full({cfg.d_model}, 1.0, true);
        l.ln_attn_bias = Tensor::zeros({cfg.d_model}, true);
        l.ffn_in_w = init_matrix({cfg.d_model, cfg.ffn_dim}, rng);
        l.ffn_in_b = Tensor::zeros({cfg.ffn_dim}, true);
        l.ffn_out_w = init_matrix({cfg.ffn_dim, cfg.d_model}, rng);
        l.ffn_out_b = Tensor::zeros({cfg.d_model}, true);
        l.ln_ffn_gain = Tensor::full({cfg.d_model}, 1.0, true);
        l.ln_ffn_bias = Tensor::zeros({cfg.d_model}, true);
    }
    w.mlm_w = init_matrix({cfg.d_model, cfg.vocab_size}, rng);
    w.mlm_b = Tensor::zeros({cfg.vocab_size}, true);
    w.cls_w = init_matrix({cfg.d_model, cfg.head_classes}, rng);
    w.cls_b = Tensor::zeros({cfg.head_classes}, true);
    return w;
}

ModelCheckpoint deep_copy(const ModelCheckpoint& ckpt) {
    ModelCheckpoint out;
    out.config = ckpt.config;
    out.meta = ckpt.meta;
    out.weights = init_model(ckpt.config, 0);
    auto src = named_parameters(ckpt.weights);
    auto dst = named_parameters(out.weights);
    for (std::size_t i = 0; i < src.size(); ++i) dst[i].second.values() = src[i].second.values();
    return out;
}

Batch make_batch(const std::vector<Encoding>& encs,
                 const std::vector<const std::vector<BreakLabel>*>& junctures) {
    if (encs.empty()) throw std::runtime_error("make_batch: empty batch");
    Batch b;
    b.batch_size = encs.size();
    for (const auto& e : encs) b.seq_len = std::max(b.seq_len, e.ids.size());
    b.ids.assign(b.batch_size * b.seq_len, WordPieceVocab::kPadId);
    b.valid.assign(b.batch_size * b.seq_len, 0);
    b.class_targets.assign(b.batch_size * b.seq_len, kIgnoreTarget);
    for (std::size_t i = 0; i < encs.size(); ++i) {
        const auto& e = encs[i];
        std::copy(e.ids.begin(), e.ids.end(), b.ids.begin() + static_cast<std::ptrdiff_t>(i * b.seq_len));
        std::fill_n(b.valid.begin() + static_cast<std::ptrdiff_t>(i * b.seq_len), e.ids.size(),
                    std::uint8_t{1});
        if (!junctures.empty()) {
            const auto targets = align_labels(e, *junctures[i]);
            std::copy(targets.begin(), targets.end(),
                      b.class_targets.begin() + static_cast<std::ptrdiff_t>(i * b.seq_len));
        }
    }
    return b;
}

Batch make_batch(const std::vector<Encoding>& encs) {
    return make_batch(encs, {});
}

Tensor forward_encode(const EncoderWeights& w, const ModelConfig& cfg, const Batch& batch,
                      bool train, CounterRng& rng, Tape* tape) {
    if (batch.seq_len > cfg.max_positions) {
        throw std::runtime_error("forward_encode: sequence length " +
                                 std::to_string(batch.seq_len) + " exceeds max_positions " +
                                 std::to_string(cfg.max_positions));
    }
    const std::size_t B = batch.batch_size, T = batch.seq_len;

    std::vector<int> pos_ids(B * T);
    for (std::size_t i = 0; i < B; ++i) {
        for (std::size_t t = 0; t < T; ++t) pos_ids[i * T + t] = static_cast<int>(t);
    }
    Tensor h = add(embedding_lookup(w.tok_emb, batch.ids, {B, T}, tape),
                   embedding_lookup(w.pos_emb, pos_ids, {B, T}, tape), tape);
    h = dropout(h, cfg.dropout, train, rng, tape);

    const std::size_t hd = cfg.d_model / cfg.heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));

    for (const auto& l : w.layers) {
        Tensor q = split_heads(add(matmul(h, l.attn_q_w, tape), l.attn_q_b, tape), cfg.heads, tape);
        Tensor k = split_heads(add(matmul(h, l.attn_k_w, tape), l.attn_k_b, tape), cfg.heads, tape);
        Tensor v = split_heads(add(matmul(h, l.attn_v_w, tape), l.attn_v_b, tape), cfg.heads, tape);

        Tensor scores = scale(batched_matmul(q, k, /*trans_b=*/true, tape), att_scale, tape);
        scores = attention_mask(scores, batch.valid, tape);
        Tensor probs = softmax_lastdim(scores, tape);
        Tensor context = merge_heads(batched_matmul(probs, v, /*trans_b=*/false, tape), tape);

        Tensor attn_out = add(matmul(context, l.attn_o_w, tape), l.attn_o_b, tape);
        attn_out = dropout(attn_out, cfg.dropout, train, rng, tape);
        h = layer_norm(add(h, attn_out, tape), l.ln_attn_gain, l.ln_attn_bias, kLayerNormEps, tape);

        Tensor ff = gelu(add(matmul(h, l.ffn_in_w, tape), l.ffn_in_b, tape), tape);
        ff = add(matmul(ff, l.ffn_out_w, tape), l.ffn_out_b, tape);
        ff = dropout(ff, cfg.dropout, train, rng, tape);
        h = layer_norm(add(h, ff, tape), l.ln_ffn_gain, l.ln_ffn_bias, kLayerNormEps, tape);
    }
    return h;
}

Tensor break_loss(const EncoderWeights& w, const ModelConfig& cfg, const Batch& batch,
                  bool train, CounterRng& rng, Tape* tape) {
    Tensor h = forward_encode(w, cfg, batch, train, rng, tape);
    h = dropout(h, cfg.dropout, train, rng, tape);  // "last layer" dropout
    Tensor logits = add(matmul(h, w.cls_w, tape), w.cls_b, tape);
    return cross_entropy(logits, batch.class_targets, tape);
}

Tensor mlm_forward(const EncoderWeights& w, const ModelConfig& cfg, const Batch& batch,
                   const std::vector<int>& mlm_targets, bool train, CounterRng& rng, Tape* tape) {
    if (mlm_targets.size() != batch.ids.size()) {
        throw std::runtime_error("mlm_forward: target length mismatch");
    }
    std::vector<std::size_t> masked_rows;
    std::vector<int> masked_targets;
    for (std::size_t i = 0; i < mlm_targets.size(); ++i) {
        if (mlm_targets[i] != kIgnoreTarget) {
            masked_rows.push_back(i);
            masked_targets.push_back(mlm_targets[i]);
        }
    }
    if (masked_rows.empty()) throw std::runtime_error("mlm_forward: batch has no masked positions");

    Tensor h = forward_encode(w, cfg, batch, train, rng, tape);
    Tensor picked = gather_rows(h, masked_rows, tape);
    Tensor logits = add(matmul(picked, w.mlm_w, tape), w.mlm_b, tape);
    return cross_entropy(logits, masked_targets, tape);
}

std::vector<std::vector<std::array<double, kNumBreakClasses>>> predict_breaks(
    const ModelCheckpoint& ckpt, const std::vector<Encoding>& encs) {
    const Batch batch = make_batch(encs);
    CounterRng rng(0);  // unused in evaluation mode
    Tensor h = forward_encode(ckpt.weights, ckpt.config, batch, /*train=*/false, rng, nullptr);
    Tensor logits = add(matmul(h, ckpt.weights.cls_w, nullptr), ckpt.weights.cls_b, nullptr);
    Tensor probs = softmax_lastdim(logits, nullptr);

    const std::size_t C = ckpt.config.head_classes;
    std::vector<std::vector<std::array<double, kNumBreakClasses>>> out(encs.size());
    for (std::size_t i = 0; i < encs.size(); ++i) {
        out[i].reserve(encs[i].label_slots.size());
        for (int slot : encs[i].label_slots) {
            const double* row =
                probs.values().data() + (i * batch.seq_len + static_cast<std::size_t>(slot)) * C;
            std::array<double, kNumBreakClasses> dist{};
            for (std::size_t c = 0; c < kNumBreakClasses && c < C; ++c) dist[c] = row[c];
            out[i].push_back(dist);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint file format (version 1, little-endian):
//   magic "PBRKCKPT" | u32 version | config (7 x u64, f64 dropout)
//   | u64 seed | u32 stage length | stage bytes
//   | u32 tensor count | per tensor: u32 name length, name, u32 ndim,
//     u64 dims..., u64 value count, f64 values...
//   | u64 fnv1a checksum of everything before it
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'P', 'B', 'R', 'K', 'C', 'K', 'P', 'T'};

struct ByteWriter {
    std::string buf;
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        buf.append(s);
    }
};

struct ByteReader {
    const std::string& buf;
    std::size_t pos = 0;
    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw std::runtime_error("checkpoint: truncated file");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

void save_checkpoint(const ModelCheckpoint& ckpt, const std::string& path) {
    ByteWriter w;
    w.buf.append(kMagic, sizeof(kMagic));
    w.u32(ckpt.meta.format_version);
    w.u64(ckpt.config.layers);
    w.u64(ckpt.config.heads);
    w.u64(ckpt.config.d_model);
    w.u64(ckpt.config.ffn_dim);
    w.u64(ckpt.config.vocab_size);
    w.u64(ckpt.config.max_positions);
    w.u64(ckpt.config.head_classes);
    w.f64(ckpt.config.dropout);
    w.u64(ckpt.meta.seed);
    w.str(ckpt.meta.stage);

    const auto params = named_parameters(ckpt.weights);
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, tensor] : params) {
        w.str(name);
        w.u32(static_cast<std::uint32_t>(tensor.ndim()));
        for (std::size_t d : tensor.shape()) w.u64(d);
        w.u64(tensor.size());
        for (double v : tensor.values()) w.f64(v);
    }
    w.u64(fnv1a64(w.buf.data(), w.buf.size()));

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(w.buf.data(), static_cast<std::streamsize>(w.buf.size()));
    if (!out) throw std::runtime_error("I/O error while writing " + path);
}

ModelCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (buf.size() < sizeof(kMagic) + 12 || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("checkpoint: bad magic (corrupt or not a checkpoint): " + path);
    }
    // Verify the trailing checksum before parsing anything else.
    {
        ByteReader tail{buf, buf.size() - 8};
        const std::uint64_t expect = tail.u64();
        const std::uint64_t actual = fnv1a64(buf.data(), buf.size() - 8);
        if (expect != actual) {
            throw std::runtime_error("checkpoint: checksum failure (corrupt file): " + path);
        }
    }

    ByteReader r{buf, sizeof(kMagic)};
    ModelCheckpoint ckpt;
    ckpt.meta.format_version = r.u32();
    if (ckpt.meta.format_version != 1) {
        throw std::runtime_error("checkpoint: unsupported format version " +
                                 std::to_string(ckpt.meta.format_version));
    }
    ckpt.config.layers = r.u64();
    ckpt.config.heads = r.u64();
    ckpt.config.d_model = r.u64();
    ckpt.config.ffn_dim = r.u64();
    ckpt.config.vocab_size = r.u64();
    ckpt.config.max_positions = r.u64();
    ckpt.config.head_classes = r.u64();
    ckpt.config.dropout = r.f64();
    ckpt.meta.seed = r.u64();
    ckpt.meta.stage = r.str();
    ckpt.config.validate();

    ckpt.weights = init_model(ckpt.config, 0);
    auto params = named_parameters(ckpt.weights);
    const std::uint32_t count = r.u32();
    if (count != params.size()) {
        throw std::runtime_error("checkpoint: tensor count mismatch");
    }
    for (auto& [name, tensor] : params) {
        const std::string got = r.str();
        if (got != name) {
            throw std::runtime_error("checkpoint: expected tensor '" + name + "', found '" + got +
                                     "'");
        }
        const std::uint32_t ndim = r.u32();
        if (ndim != tensor.ndim()) throw std::runtime_error("checkpoint: rank mismatch for " + name);
        for (std::size_t d = 0; d < ndim; ++d) {
            if (r.u64() != tensor.dim(d)) {
                throw std::runtime_error("checkpoint: shape mismatch for " + name);
            }
        }
        const std::uint64_t n = r.u64();
        if (n != tensor.size()) throw std::runtime_error("checkpoint: size mismatch for " + name);
        for (std::size_t i = 0; i < n; ++i) tensor.values()[i] = r.f64();
    }
    return ckpt;
}

std::uint64_t checkpoint_digest(const ModelCheckpoint& ckpt) {
    std::uint64_t h = fnv1a64(ckpt.meta.stage);
    for (const auto& [name, tensor] : named_parameters(ckpt.weights)) {
        h = fnv1a64(name.data(), name.size(), h);
        h = fnv1a64(tensor.values().data(), tensor.values().size() * sizeof(double), h);
    }
    return h;
}

}  // namespace pbp
