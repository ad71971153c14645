#include "pbp/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <ostream>
#include <stdexcept>
#include <thread>

#include <nlohmann/json.hpp>

#include "pbp/metrics.hpp"

namespace pbp {

using ordered_json = nlohmann::ordered_json;

double median(std::vector<double> values) {
    if (values.empty()) throw std::runtime_error("median: no values");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::size_t workers = std::min(jobs, n);
    std::vector<std::thread> threads;
    std::mutex err_mutex;
    std::exception_ptr first_error;
    for (std::size_t w = 0; w < workers; ++w) {
        threads.emplace_back([&, w]() {
            for (std::size_t i = w; i < n; i += workers) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : threads) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

double ZeroShotMatrix::score(const LanguageCode& train, const LanguageCode& test) const {
    const auto ti = std::find(languages.begin(), languages.end(), train);
    const auto si = std::find(languages.begin(), languages.end(), test);
    if (ti == languages.end() || si == languages.end()) {
        throw std::runtime_error("zero-shot matrix: unknown language");
    }
    return scores[static_cast<std::size_t>(ti - languages.begin())]
                 [static_cast<std::size_t>(si - languages.begin())];
}

const char* to_string(FewShotScenario s) {
    return s == FewShotScenario::EnglishOnly ? "english-only" : "augmented";
}

std::optional<FewShotScenario> scenario_from_string(const std::string& s) {
    if (s == "english-only") return FewShotScenario::EnglishOnly;
    if (s == "augmented") return FewShotScenario::Augmented;
    return std::nullopt;
}

double FewShotCurve::delta(std::size_t point_index) const {
    return points.at(point_index).score - zero_shot;
}

void ExperimentConfig::validate() const {
    if (languages.size() < 2) throw std::runtime_error("experiment: need at least 2 languages");
    if (std::find(languages.begin(), languages.end(), source) == languages.end()) {
        throw std::runtime_error("experiment: source language '" + source + "' not in languages");
    }
    if (seeds.empty()) throw std::runtime_error("experiment: need at least one seed");
    for (std::size_t i = 1; i < k_schedule.size(); ++i) {
        if (k_schedule[i] <= k_schedule[i - 1]) {
            throw std::runtime_error("experiment: k_schedule must be strictly increasing");
        }
    }
    train.validate();
}

std::map<LanguageCode, DatasetSplit> make_splits(const ExperimentConfig& cfg,
                                                 const CorpusMap& corpora) {
    std::map<LanguageCode, DatasetSplit> splits;
    const CounterRng base(cfg.train.seed);
    for (const auto& lang : cfg.languages) {
        const auto it = corpora.find(lang);
        if (it == corpora.end()) throw std::runtime_error("experiment: no corpus for " + lang);
        if (it->second.size() < cfg.split.total()) {
            throw std::runtime_error("experiment: language " + lang + " has " +
                                     std::to_string(it->second.size()) + " utterances, needs " +
                                     std::to_string(cfg.split.total()));
        }
        splits.emplace(lang, split_dataset(it->second, cfg.split,
                                           base.derive("split/" + lang).next_u64()));
    }
    return splits;
}

namespace {

std::uint64_t run_seed(const ExperimentConfig& cfg, const std::string& coordinates) {
    return CounterRng(cfg.train.seed).derive(coordinates).next_u64();
}

double test_macro_f1(const ModelCheckpoint& ckpt, const WordPieceVocab& vocab,
                     const std::vector<Utterance>& test_set) {
    return evaluate(ckpt, vocab, test_set).macro_f1;
}

}  // namespace

ZeroShotMatrix run_zero_shot_matrix(const ExperimentConfig& cfg, const ModelCheckpoint& pretrained,
                                    const WordPieceVocab& vocab, const CorpusMap& corpora,
                                    std::ostream* log) {
    cfg.validate();
    const auto splits = make_splits(cfg, corpora);
    const std::size_t L = cfg.languages.size();
    const std::size_t S = cfg.seeds.size();

    ZeroShotMatrix out;
    out.languages = cfg.languages;
    out.seeds = cfg.seeds;
    out.per_seed.assign(S, std::vector<std::vector<double>>(L, std::vector<double>(L, 0.0)));

    // (seed, train language) runs are independent.
    parallel_for(S * L, cfg.jobs, [&](std::size_t idx) {
        const std::size_t si = idx / L, ti = idx % L;
        const auto& train_lang = cfg.languages[ti];
        TrainConfig tc = cfg.train;
        tc.seed = run_seed(cfg, "zeroshot/" + train_lang + "/seed" +
                                    std::to_string(cfg.seeds[si]));
        const auto& split = splits.at(train_lang);
        const auto result = fine_tune(pretrained, vocab, split.train, split.validation, tc,
                                      "finetuned", cfg.jobs > 1 ? nullptr : log);
        for (std::size_t ei = 0; ei < L; ++ei) {
            out.per_seed[si][ti][ei] =
                test_macro_f1(result.checkpoint, vocab, splits.at(cfg.languages[ei]).test);
        }
        if (log && cfg.jobs <= 1) {
            *log << "zeroshot train=" << train_lang << " seed=" << cfg.seeds[si]
                 << " diag=" << out.per_seed[si][ti][ti] << "\n";
        }
    });

    out.scores.assign(L, std::vector<double>(L, 0.0));
    for (std::size_t ti = 0; ti < L; ++ti) {
        for (std::size_t ei = 0; ei < L; ++ei) {
            std::vector<double> vals;
            vals.reserve(S);
            for (std::size_t si = 0; si < S; ++si) vals.push_back(out.per_seed[si][ti][ei]);
            out.scores[ti][ei] = median(std::move(vals));
        }
    }
    return out;
}

std::vector<Utterance> build_stage1_composite(FewShotScenario scenario, const LanguageCode& source,
                                              const LanguageCode& target, const CorpusMap& corpora,
                                              const std::map<LanguageCode, DatasetSplit>& splits,
                                              std::size_t expand_to, std::uint64_t seed,
                                              std::ostream* log) {
    if (source == target) {
        throw std::runtime_error("stage-1 composite: source and target are both '" + source + "'");
    }
    const auto src_it = corpora.find(source);
    if (src_it == corpora.end()) throw std::runtime_error("stage-1 composite: no corpus for " + source);

    CounterRng rng(seed);
    std::vector<Utterance> composite;
    if (expand_to >= src_it->second.size()) {
        if (log && expand_to > src_it->second.size()) {
            *log << "note: expand_to " << expand_to << " exceeds the " << source << " pool ("
                 << src_it->second.size() << "); using the full pool\n";
        }
        composite = src_it->second;
    } else {
        composite = sample_few_shot(src_it->second, expand_to, rng.derive("expand").next_u64());
    }

    if (scenario == FewShotScenario::Augmented) {
        for (const auto& [lang, split] : splits) {
            if (lang == source || lang == target) continue;
            composite.insert(composite.end(), split.train.begin(), split.train.end());
        }
    }

    // Concatenation + global shuffle.
    CounterRng shuffle = rng.derive("shuffle");
    for (std::size_t i = composite.size(); i > 1; --i) {
        std::swap(composite[i - 1], composite[shuffle.uniform_int(i)]);
    }

    for (const auto& u : composite) {
        if (u.lang == target) {
            throw std::runtime_error("stage-1 composite contains target-language utterance " + u.id);
        }
    }
    return composite;
}

FewShotCurve run_few_shot_curve(const ExperimentConfig& cfg, FewShotScenario scenario,
                                const LanguageCode& target, const ModelCheckpoint& pretrained,
                                const WordPieceVocab& vocab, const CorpusMap& corpora,
                                std::ostream* log) {
    cfg.validate();
    if (std::find(cfg.languages.begin(), cfg.languages.end(), target) == cfg.languages.end()) {
        throw std::runtime_error("few-shot: target '" + target + "' not in languages");
    }
    if (target == cfg.source) {
        throw std::runtime_error("few-shot: target equals the source language");
    }
    const auto splits = make_splits(cfg, corpora);
    const auto& target_split = splits.at(target);

    std::vector<std::size_t> ks;
    for (std::size_t k : cfg.k_schedule) {
        if (k <= target_split.train.size()) {
            ks.push_back(k);
        } else if (log) {
            *log << "note: dropping k=" << k << " (target train split has "
                 << target_split.train.size() << " utterances)\n";
        }
    }
    if (ks.empty()) throw std::runtime_error("few-shot: empty k schedule after capping");

    // Stage-1 validation pools the included languages' validation splits.
    std::vector<Utterance> stage1_val = splits.at(cfg.source).validation;
    if (scenario == FewShotScenario::Augmented) {
        for (const auto& lang : cfg.languages) {
            if (lang == cfg.source || lang == target) continue;
            const auto& v = splits.at(lang).validation;
            stage1_val.insert(stage1_val.end(), v.begin(), v.end());
        }
    }

    const std::size_t S = cfg.seeds.size();
    FewShotCurve curve;
    curve.target = target;
    curve.scenario = scenario;
    curve.seeds = cfg.seeds;
    curve.zero_shot_per_seed.assign(S, 0.0);
    curve.stage1_digests.assign(S, 0);
    std::vector<std::vector<double>> k_scores(ks.size(), std::vector<double>(S, 0.0));

    parallel_for(S, cfg.jobs, [&](std::size_t si) {
        const std::string coord_base =
            std::string("fewshot/") + to_string(scenario) + "/" + target + "/seed" +
            std::to_string(cfg.seeds[si]);
        std::ostream* run_log = cfg.jobs > 1 ? nullptr : log;

        const auto composite = build_stage1_composite(
            scenario, cfg.source, target, corpora, splits, cfg.source_expand,
            run_seed(cfg, coord_base + "/composite"), run_log);

        TrainConfig stage1_cfg = cfg.train;
        stage1_cfg.seed = run_seed(cfg, coord_base + "/stage1");
        const auto stage1 =
            fine_tune(pretrained, vocab, composite, stage1_val, stage1_cfg, "stage1", run_log);
        curve.zero_shot_per_seed[si] = test_macro_f1(stage1.checkpoint, vocab, target_split.test);
        curve.stage1_digests[si] = checkpoint_digest(stage1.checkpoint);
        if (run_log) {
            *run_log << "fewshot " << to_string(scenario) << " target=" << target
                     << " seed=" << cfg.seeds[si] << " zero_shot=" << curve.zero_shot_per_seed[si]
                     << "\n";
        }

        // One nested sample stream per seed: the k-sample is a prefix of
        // the 2k-sample.
        const std::uint64_t sample_seed = run_seed(cfg, coord_base + "/ksample");
        for (std::size_t ki = 0; ki < ks.size(); ++ki) {
            std::vector<Utterance> stage2_train =
                sample_few_shot(target_split.train, ks[ki], sample_seed);
            if (cfg.stage2_mix_source) {
                stage2_train.insert(stage2_train.end(), composite.begin(), composite.end());
            }
            TrainConfig stage2_cfg = cfg.train;
            stage2_cfg.seed = run_seed(cfg, coord_base + "/stage2/k" + std::to_string(ks[ki]));
            const auto stage2 = fine_tune(stage1.checkpoint, vocab, stage2_train,
                                          target_split.validation, stage2_cfg, "stage2", nullptr);
            k_scores[ki][si] = test_macro_f1(stage2.checkpoint, vocab, target_split.test);
            if (run_log) {
                *run_log << "fewshot " << to_string(scenario) << " target=" << target
                         << " seed=" << cfg.seeds[si] << " k=" << ks[ki]
                         << " score=" << k_scores[ki][si] << "\n";
            }
        }
    });

    curve.zero_shot = median(curve.zero_shot_per_seed);
    for (std::size_t ki = 0; ki < ks.size(); ++ki) {
        FewShotPoint p;
        p.k = ks[ki];
        p.per_seed = k_scores[ki];
        p.score = median(k_scores[ki]);
        curve.points.push_back(std::move(p));
    }
    return curve;
}

namespace {

std::string pct(double fraction) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * fraction);
    return buf;
}

}  // namespace

std::string zero_shot_csv(const ZeroShotMatrix& m) {
    std::string out = "train\\test";
    for (const auto& lang : m.languages) out += "," + lang;
    out += "\n";
    for (std::size_t ti = 0; ti < m.languages.size(); ++ti) {
        out += m.languages[ti];
        for (std::size_t ei = 0; ei < m.languages.size(); ++ei) out += "," + pct(m.scores[ti][ei]);
        out += "\n";
    }
    return out;
}

std::string few_shot_csv(const FewShotCurve& curve) {
    std::string out = "language,zero_shot";
    for (const auto& p : curve.points) {
        out += ",k=" + std::to_string(p.k) + "_score,k=" + std::to_string(p.k) + "_delta";
    }
    out += "\n" + curve.target + "," + pct(curve.zero_shot);
    for (std::size_t i = 0; i < curve.points.size(); ++i) {
        out += "," + pct(curve.points[i].score) + "," + pct(curve.delta(i));
    }
    out += "\n";
    return out;
}

std::string few_shot_svg(const std::vector<FewShotCurve>& curves) {
    if (curves.empty()) throw std::runtime_error("few_shot_svg: no curves");
    constexpr double W = 720, H = 440, ML = 64, MR = 24, MT = 28, MB = 48;

    double kmin = 1e18, kmax = 0, ymin = 1.0, ymax = 0.0;
    for (const auto& c : curves) {
        ymin = std::min(ymin, c.zero_shot);
        ymax = std::max(ymax, c.zero_shot);
        for (const auto& p : c.points) {
            kmin = std::min(kmin, static_cast<double>(p.k));
            kmax = std::max(kmax, static_cast<double>(p.k));
            ymin = std::min(ymin, p.score);
            ymax = std::max(ymax, p.score);
        }
    }
    ymin = std::floor(ymin * 20.0) / 20.0;
    ymax = std::ceil(ymax * 20.0) / 20.0;
    if (ymax - ymin < 0.05) ymax = ymin + 0.05;

    const double lk0 = std::log2(kmin), lk1 = std::log2(kmax);
    auto xpos = [&](double k) {
        return ML + (std::log2(k) - lk0) / std::max(1e-9, lk1 - lk0) * (W - ML - MR);
    };
    auto ypos = [&](double f1) { return H - MB - (f1 - ymin) / (ymax - ymin) * (H - MT - MB); };
    char buf[256];
    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"720\" height=\"440\" "
           "viewBox=\"0 0 720 440\">\n";
    svg += "<rect width=\"720\" height=\"440\" fill=\"white\"/>\n";

    // Axes and gridlines.
    for (double g = ymin; g <= ymax + 1e-9; g += 0.05) {
        std::snprintf(buf, sizeof(buf),
                      "<line x1=\"%.1f\" y1=\"%.2f\" x2=\"%.1f\" y2=\"%.2f\" stroke=\"#dddddd\"/>\n",
                      ML, ypos(g), W - MR, ypos(g));
        svg += buf;
        std::snprintf(buf, sizeof(buf),
                      "<text x=\"%.1f\" y=\"%.2f\" font-size=\"11\" text-anchor=\"end\" "
                      "fill=\"#333333\">%.0f</text>\n",
                      ML - 6, ypos(g) + 4, 100.0 * g);
        svg += buf;
    }
    for (double k = kmin; k <= kmax + 0.5; k *= 2) {
        std::snprintf(buf, sizeof(buf),
                      "<line x1=\"%.2f\" y1=\"%.1f\" x2=\"%.2f\" y2=\"%.1f\" stroke=\"#eeeeee\"/>\n",
                      xpos(k), MT, xpos(k), H - MB);
        svg += buf;
        std::snprintf(buf, sizeof(buf),
                      "<text x=\"%.2f\" y=\"%.1f\" font-size=\"11\" text-anchor=\"middle\" "
                      "fill=\"#333333\">%zu</text>\n",
                      xpos(k), H - MB + 16, static_cast<std::size_t>(k));
        svg += buf;
    }
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n", ML,
                  H - MB, W - MR, H - MB);
    svg += buf;
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n", ML,
                  MT, ML, H - MB);
    svg += buf;
    svg += "<text x=\"392\" y=\"432\" font-size=\"12\" text-anchor=\"middle\">k (target language "
           "examples)</text>\n";
    svg += "<text x=\"16\" y=\"234\" font-size=\"12\" text-anchor=\"middle\" "
           "transform=\"rotate(-90 16 234)\">macro-F1 (%)</text>\n";

    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
    for (std::size_t ci = 0; ci < curves.size(); ++ci) {
        const auto& c = curves[ci];
        const char* color = colors[ci % 4];
        const char* dash = c.scenario == FewShotScenario::Augmented ? " stroke-dasharray=\"6 4\"" : "";
        std::string pts;
        for (const auto& p : c.points) {
            std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", xpos(static_cast<double>(p.k)),
                          ypos(p.score));
            pts += buf;
        }
        std::snprintf(buf, sizeof(buf),
                      "<polyline fill=\"none\" stroke=\"%s\" stroke-width=\"1.8\"%s points=\"%s\"/>\n",
                      color, dash, pts.c_str());
        svg += buf;
        for (const auto& p : c.points) {
            std::snprintf(buf, sizeof(buf),
                          "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"3\" fill=\"%s\"/>\n",
                          xpos(static_cast<double>(p.k)), ypos(p.score), color);
            svg += buf;
        }
        // Zero-shot reference level.
        std::snprintf(buf, sizeof(buf),
                      "<line x1=\"%.1f\" y1=\"%.2f\" x2=\"%.1f\" y2=\"%.2f\" stroke=\"%s\" "
                      "stroke-dasharray=\"2 3\" stroke-width=\"1\"/>\n",
                      ML, ypos(c.zero_shot), W - MR, ypos(c.zero_shot), color);
        svg += buf;
        std::snprintf(buf, sizeof(buf),
                      "<text x=\"%.1f\" y=\"%.1f\" font-size=\"12\" fill=\"%s\">%s %s</text>\n",
                      ML + 10, MT + 16 + 16 * static_cast<double>(ci), color, c.target.c_str(),
                      to_string(c.scenario));
        svg += buf;
    }
    svg += "</svg>\n";
    return svg;
}

namespace {

ordered_json config_record(const ExperimentConfig& cfg) {
    ordered_json j;
    j["languages"] = cfg.languages;
    j["source"] = cfg.source;
    j["split"] = {cfg.split.train, cfg.split.validation, cfg.split.test};
    j["source_expand"] = cfg.source_expand;
    j["k_schedule"] = cfg.k_schedule;
    j["seeds"] = cfg.seeds;
    j["stage2_mix_source"] = cfg.stage2_mix_source;
    j["train"] = {{"batch_size", cfg.train.batch_size},
                  {"learning_rate", cfg.train.learning_rate},
                  {"dropout", cfg.train.dropout},
                  {"epochs", cfg.train.epochs},
                  {"max_len", cfg.train.max_len},
                  {"seed", cfg.train.seed},
                  {"min_steps", cfg.train.min_steps},
                  {"clip_norm", cfg.train.clip_norm}};
    return j;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << content;
    if (!out) throw std::runtime_error("I/O error while writing " + path);
}

char hexdigit(std::uint64_t v) { return "0123456789abcdef"[v & 0xf]; }

std::string hex64(std::uint64_t v) {
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = hexdigit(v);
        v >>= 4;
    }
    return s;
}

}  // namespace

std::vector<std::string> export_zero_shot(const ZeroShotMatrix& m, const ExperimentConfig& cfg,
                                          const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    const std::string csv_path = out_dir + "/zero_shot_matrix.csv";
    write_file(csv_path, zero_shot_csv(m));

    ordered_json rec;
    rec["kind"] = "zero_shot_matrix";
    rec["config"] = config_record(cfg);
    rec["languages"] = m.languages;
    rec["seeds"] = m.seeds;
    rec["scores_median"] = m.scores;
    rec["scores_per_seed"] = m.per_seed;
    const std::string rec_path = out_dir + "/zero_shot_result.json";
    write_file(rec_path, rec.dump(2) + "\n");
    return {csv_path, rec_path};
}

std::vector<std::string> export_few_shot(const std::vector<FewShotCurve>& curves,
                                         const ExperimentConfig& cfg, const std::string& out_dir) {
    if (curves.empty()) throw std::runtime_error("export_few_shot: no curves");
    std::filesystem::create_directories(out_dir);
    std::vector<std::string> paths;

    for (const auto& c : curves) {
        const std::string base =
            out_dir + "/few_shot_" + std::string(to_string(c.scenario)) + "_" + c.target;
        write_file(base + ".csv", few_shot_csv(c));
        paths.push_back(base + ".csv");

        ordered_json rec;
        rec["kind"] = "few_shot_curve";
        rec["config"] = config_record(cfg);
        rec["target"] = c.target;
        rec["scenario"] = to_string(c.scenario);
        rec["seeds"] = c.seeds;
        rec["zero_shot_median"] = c.zero_shot;
        rec["zero_shot_per_seed"] = c.zero_shot_per_seed;
        auto& pts = rec["points"] = ordered_json::array();
        for (std::size_t i = 0; i < c.points.size(); ++i) {
            const auto& p = c.points[i];
            pts.push_back({{"k", p.k},
                           {"score_median", p.score},
                           {"delta", c.delta(i)},
                           {"per_seed", p.per_seed}});
        }
        auto& digests = rec["stage1_checkpoint_digests"] = ordered_json::array();
        for (std::uint64_t d : c.stage1_digests) digests.push_back(hex64(d));
        write_file(base + ".json", rec.dump(2) + "\n");
        paths.push_back(base + ".json");
    }

    const std::string svg_path = out_dir + "/few_shot_" + curves.front().target + ".svg";
    write_file(svg_path, few_shot_svg(curves));
    paths.push_back(svg_path);
    return paths;
}

}  // namespace pbp
