#include "pbp/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "pbp/metrics.hpp"

namespace pbp {

void TrainConfig::validate() const {
    if (batch_size < 1) throw std::runtime_error("train config: batch_size must be >= 1");
    if (learning_rate < 0.0) throw std::runtime_error("train config: learning_rate must be >= 0");
    if (epochs < 1) throw std::runtime_error("train config: epochs must be >= 1");
    if (max_len < 3) throw std::runtime_error("train config: max_len must be >= 3");
    if (dropout < 0.0 || dropout >= 1.0) throw std::runtime_error("train config: dropout outside [0,1)");
    if (clip_norm < 0.0) throw std::runtime_error("train config: clip_norm must be >= 0");
}

AdamState AdamState::for_params(const std::vector<std::pair<std::string, Tensor>>& params) {
    AdamState state;
    state.m.reserve(params.size());
    state.v.reserve(params.size());
    for (const auto& [name, t] : params) {
        state.m.emplace_back(t.size(), 0.0);
        state.v.emplace_back(t.size(), 0.0);
    }
    return state;
}

bool adam_step(std::vector<std::pair<std::string, Tensor>>& params, AdamState& state, double lr) {
    if (params.size() != state.m.size()) {
        throw std::runtime_error("adam_step: state does not match parameter list");
    }
    for (auto& [name, t] : params) {
        for (double g : t.grad()) {
            if (!std::isfinite(g)) return false;  // abort the whole step
        }
    }

    const std::size_t t_step = ++state.step_count;
    const double bc1 = 1.0 - std::pow(AdamState::kBeta1, static_cast<double>(t_step));
    const double bc2 = 1.0 - std::pow(AdamState::kBeta2, static_cast<double>(t_step));

    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& theta = params[p].second.values();
        const auto& g = params[p].second.grad();
        auto& m = state.m[p];
        auto& v = state.v[p];
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m[i] = AdamState::kBeta1 * m[i] + (1.0 - AdamState::kBeta1) * g[i];
            v[i] = AdamState::kBeta2 * v[i] + (1.0 - AdamState::kBeta2) * g[i] * g[i];
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            theta[i] -= lr * m_hat / (std::sqrt(v_hat) + AdamState::kEpsilon);
        }
    }
    return true;
}

void clip_gradients(std::vector<std::pair<std::string, Tensor>>& params, double max_norm) {
    double sq = 0.0;
    for (auto& [name, t] : params) {
        for (double g : t.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm <= max_norm || norm == 0.0) return;
    const double s = max_norm / norm;
    for (auto& [name, t] : params) {
        for (double& g : t.grad()) g *= s;
    }
}

std::string history_csv(const TrainHistory& h) {
    std::string out = "epoch,train_loss,val_macro_f1,selected\n";
    char buf[96];
    for (std::size_t e = 0; e < h.train_loss.size(); ++e) {
        const bool has_val = e < h.val_macro_f1.size();
        std::snprintf(buf, sizeof(buf), "%zu,%.6f,%s,%d\n", e + 1, h.train_loss[e],
                      has_val ? (std::to_string(h.val_macro_f1[e]).c_str()) : "",
                      e == h.selected_epoch ? 1 : 0);
        out += buf;
    }
    return out;
}

namespace {

void shuffle_indices(std::vector<std::size_t>& idx, CounterRng& rng) {
    for (std::size_t i = idx.size(); i > 1; --i) {
        std::swap(idx[i - 1], idx[rng.uniform_int(i)]);
    }
}

double validation_macro_f1(const ModelCheckpoint& view, const std::vector<Encoding>& val_encs,
                           const std::vector<const std::vector<BreakLabel>*>& val_golds) {
    constexpr std::size_t kEvalBatch = 32;
    ConfusionMatrix m;
    for (std::size_t start = 0; start < val_encs.size(); start += kEvalBatch) {
        const std::size_t end = std::min(val_encs.size(), start + kEvalBatch);
        const std::vector<Encoding> chunk(val_encs.begin() + static_cast<std::ptrdiff_t>(start),
                                          val_encs.begin() + static_cast<std::ptrdiff_t>(end));
        const auto dists = predict_breaks(view, chunk);
        for (std::size_t i = 0; i < chunk.size(); ++i) {
            std::vector<BreakLabel> gold(
                val_golds[start + i]->begin(),
                val_golds[start + i]->begin() +
                    static_cast<std::ptrdiff_t>(chunk[i].label_slots.size()));
            std::vector<BreakLabel> pred;
            for (const auto& dist : dists[i]) {
                int best = 0;
                for (int c = 1; c < kNumBreakClasses; ++c) {
                    if (dist[static_cast<std::size_t>(c)] > dist[static_cast<std::size_t>(best)]) best = c;
                }
                pred.push_back(static_cast<BreakLabel>(best));
            }
            accumulate(m, gold, pred);
        }
    }
    return macro_f1(m);
}

}  // namespace

FineTuneResult fine_tune(const ModelCheckpoint& start, const WordPieceVocab& vocab,
                         const std::vector<Utterance>& train_set,
                         const std::vector<Utterance>& validation_set, const TrainConfig& cfg,
                         const std::string& stage_tag, std::ostream* log) {
    cfg.validate();
    if (train_set.empty()) throw std::runtime_error("fine_tune: empty train set");

    ModelCheckpoint model = deep_copy(start);
    model.config.dropout = cfg.dropout;
    model.meta.seed = cfg.seed;
    model.meta.stage = stage_tag;

    const std::size_t max_len = std::min(cfg.max_len, model.config.max_positions);
    std::vector<Encoding> train_encs;
    std::vector<const std::vector<BreakLabel>*> train_golds;
    train_encs.reserve(train_set.size());
    for (const auto& u : train_set) {
        train_encs.push_back(encode_utterance(vocab, u, max_len));
        train_golds.push_back(&u.junctures);
    }
    std::vector<Encoding> val_encs;
    std::vector<const std::vector<BreakLabel>*> val_golds;
    for (const auto& u : validation_set) {
        val_encs.push_back(encode_utterance(vocab, u, max_len));
        val_golds.push_back(&u.junctures);
    }

    auto params = named_parameters(model.weights);
    AdamState adam = AdamState::for_params(params);

    CounterRng root(cfg.seed);
    CounterRng shuffle_rng = root.derive("shuffle");
    CounterRng dropout_rng = root.derive("dropout");

    const std::size_t n = train_encs.size();
    const std::size_t steps_per_pass = (n + cfg.batch_size - 1) / cfg.batch_size;
    std::size_t passes_per_epoch = 1;
    if (steps_per_pass * cfg.epochs < cfg.min_steps) {
        passes_per_epoch =
            (cfg.min_steps + steps_per_pass * cfg.epochs - 1) / (steps_per_pass * cfg.epochs);
    }

    TrainHistory history;
    ModelCheckpoint best;
    double best_val = -1.0;
    std::size_t global_step = 0;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        double loss_sum = 0.0;
        std::size_t loss_count = 0;
        for (std::size_t pass = 0; pass < passes_per_epoch; ++pass) {
            shuffle_indices(order, shuffle_rng);
            for (std::size_t begin = 0; begin < n; begin += cfg.batch_size) {
                const std::size_t end = std::min(n, begin + cfg.batch_size);
                std::vector<Encoding> encs;
                std::vector<const std::vector<BreakLabel>*> golds;
                encs.reserve(end - begin);
                for (std::size_t i = begin; i < end; ++i) {
                    encs.push_back(train_encs[order[i]]);
                    golds.push_back(train_golds[order[i]]);
                }
                const Batch batch = make_batch(encs, golds);

                Tape tape;
                const Tensor loss =
                    break_loss(model.weights, model.config, batch, true, dropout_rng, &tape);
                tape.backward(loss);
                if (cfg.clip_norm > 0.0) clip_gradients(params, cfg.clip_norm);
                if (!adam_step(params, adam, cfg.learning_rate) && log) {
                    *log << "step=" << global_step + 1 << " epoch=" << epoch + 1
                         << " skipped=non_finite_gradient\n";
                }
                for (auto& [name, t] : params) t.zero_grad();
                ++global_step;
                loss_sum += loss.scalar_value();
                ++loss_count;
                if (log && global_step % 50 == 0) {
                    *log << "step=" << global_step << " epoch=" << epoch + 1
                         << " loss=" << loss.scalar_value() << "\n";
                }
            }
        }
        history.train_loss.push_back(loss_sum / static_cast<double>(loss_count));

        if (!val_encs.empty()) {
            const double f1 = validation_macro_f1(model, val_encs, val_golds);
            history.val_macro_f1.push_back(f1);
            if (log) {
                *log << "epoch=" << epoch + 1 << " train_loss=" << history.train_loss.back()
                     << " val_f1=" << f1 << "\n";
            }
            if (f1 > best_val) {
                best_val = f1;
                history.selected_epoch = epoch;
                best = deep_copy(model);
            }
        }
    }

    if (val_encs.empty()) {
        history.selected_epoch = cfg.epochs - 1;
        best = deep_copy(model);
    }
    history.total_steps = global_step;
    return {std::move(best), std::move(history)};
}

std::vector<int> apply_mlm_mask(Batch& batch, std::size_t vocab_size, CounterRng& rng) {
    std::vector<int> targets(batch.ids.size(), kIgnoreTarget);
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < batch.ids.size(); ++i) {
        if (batch.valid[i] && batch.ids[i] >= WordPieceVocab::kNumSpecials) eligible.push_back(i);
    }
    if (eligible.empty()) throw std::runtime_error("apply_mlm_mask: no maskable positions");

    bool any = false;
    for (std::size_t i : eligible) {
        if (rng.uniform() >= 0.15) continue;
        any = true;
        targets[i] = batch.ids[i];
        const double r = rng.uniform();
        if (r < 0.8) {
            batch.ids[i] = WordPieceVocab::kMaskId;
        } else if (r < 0.9) {
            batch.ids[i] = static_cast<int>(
                WordPieceVocab::kNumSpecials +
                rng.uniform_int(vocab_size - WordPieceVocab::kNumSpecials));
        }  // else keep the original token
    }
    if (!any) {
        // Degenerate draw; force one mask so every batch trains.
        const std::size_t i = eligible[0];
        targets[i] = batch.ids[i];
        batch.ids[i] = WordPieceVocab::kMaskId;
    }
    return targets;
}

ModelCheckpoint pretrain_mlm(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                             const std::vector<Utterance>& corpora, const WordPieceVocab& vocab,
                             std::size_t steps, std::ostream* log) {
    if (steps < 1) throw std::runtime_error("pretrain_mlm: steps must be >= 1");
    train_cfg.validate();
    if (corpora.empty()) throw std::runtime_error("pretrain_mlm: empty corpus");
    if (model_cfg.vocab_size != vocab.size()) {
        throw std::runtime_error("pretrain_mlm: model vocab_size does not match the vocabulary");
    }

    ModelCheckpoint model;
    model.config = model_cfg;
    model.config.dropout = train_cfg.dropout;
    model.meta.seed = train_cfg.seed;
    model.meta.stage = "pretrained";

    CounterRng root(train_cfg.seed);
    model.weights = init_model(model.config, root.derive("init").next_u64());

    const std::size_t max_len = std::min(train_cfg.max_len, model.config.max_positions);
    std::vector<Encoding> encs;
    encs.reserve(corpora.size());
    for (const auto& u : corpora) encs.push_back(encode_utterance(vocab, u, max_len));

    auto params = named_parameters(model.weights);
    AdamState adam = AdamState::for_params(params);
    CounterRng shuffle_rng = root.derive("shuffle");
    CounterRng mask_rng = root.derive("mask");
    CounterRng dropout_rng = root.derive("dropout");

    std::vector<std::size_t> order(encs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_indices(order, shuffle_rng);
    std::size_t cursor = 0;

    for (std::size_t step = 0; step < steps; ++step) {
        std::vector<Encoding> chunk;
        chunk.reserve(train_cfg.batch_size);
        for (std::size_t i = 0; i < train_cfg.batch_size; ++i) {
            if (cursor == order.size()) {
                shuffle_indices(order, shuffle_rng);
                cursor = 0;
            }
            chunk.push_back(encs[order[cursor++]]);
        }
        Batch batch = make_batch(chunk);
        const auto targets = apply_mlm_mask(batch, vocab.size(), mask_rng);

        Tape tape;
        const Tensor loss =
            mlm_forward(model.weights, model.config, batch, targets, true, dropout_rng, &tape);
        tape.backward(loss);
        if (train_cfg.clip_norm > 0.0) clip_gradients(params, train_cfg.clip_norm);
        adam_step(params, adam, train_cfg.learning_rate);
        for (auto& [name, t] : params) t.zero_grad();

        if (log && ((step + 1) % 100 == 0 || step == 0)) {
            *log << "step=" << step + 1 << " loss=" << loss.scalar_value() << "\n";
        }
    }
    return model;
}

GridSearchResult grid_search(const GridSpec& grid, const ModelCheckpoint& start,
                             const WordPieceVocab& vocab, const std::vector<Utterance>& train_set,
                             const std::vector<Utterance>& validation_set,
                             const TrainConfig& base_cfg, std::ostream* log) {
    if (grid.batch_sizes.empty() || grid.learning_rates.empty() || grid.dropouts.empty()) {
        throw std::runtime_error("grid_search: empty grid axis");
    }
    if (validation_set.empty()) throw std::runtime_error("grid_search: needs a validation set");

    GridSearchResult out;
    std::size_t index = 0;
    double best_f1 = -1.0;
    for (std::size_t bs : grid.batch_sizes) {
        for (double lr : grid.learning_rates) {
            for (double dr : grid.dropouts) {
                TrainConfig cfg = base_cfg;
                cfg.batch_size = bs;
                cfg.learning_rate = lr;
                cfg.dropout = dr;
                cfg.seed = base_cfg.seed + index;
                if (log) {
                    *log << "grid_point=" << index << " batch=" << bs << " lr=" << lr
                         << " dropout=" << dr << "\n";
                }
                FineTuneResult r;
                try {
                    r = fine_tune(start, vocab, train_set, validation_set, cfg, "gridsearch", log);
                } catch (const std::exception& e) {
                    throw std::runtime_error("grid point " + std::to_string(index) + " (batch=" +
                                             std::to_string(bs) + ", lr=" + std::to_string(lr) +
                                             ", dropout=" + std::to_string(dr) + "): " + e.what());
                }
                const double f1 = r.history.val_macro_f1[r.history.selected_epoch];
                out.results.push_back({cfg, f1, std::move(r.history)});
                if (f1 > best_f1) {
                    best_f1 = f1;
                    out.best = cfg;
                }
                ++index;
            }
        }
    }
    return out;
}

}  // namespace pbp
