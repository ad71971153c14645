#include "pbp/harness.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pbp/metrics.hpp"
#include "pbp/rng.hpp"
#include "pbp/tokenizer.hpp"

namespace pbp {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + tmp);
        out << content;
        if (!out) throw std::runtime_error("I/O error while writing " + tmp);
    }
    fs::rename(tmp, path);
}

// Strict schema helper: every present key must be known.
void check_keys(const ordered_json& obj, std::initializer_list<const char*> allowed,
                const std::string& ctx) {
    for (const auto& [key, value] : obj.items()) {
        bool known = false;
        for (const char* a : allowed) {
            if (key == a) {
                known = true;
                break;
            }
        }
        if (!known) throw ValidationError(ctx + ": unknown field '" + key + "'");
    }
}

template <typename T>
T get_or(const ordered_json& obj, const char* key, T fallback, const std::string& ctx) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const std::exception&) {
        throw ValidationError(ctx + ": field '" + key + "' has the wrong type");
    }
}

std::string iso_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

struct Stopwatch {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

}  // namespace

const SynthLanguageEntry* HarnessConfig::find_language(const LanguageCode& name) const {
    for (const auto& entry : languages) {
        if (entry.spec.name == name) return &entry;
    }
    return nullptr;
}

HarnessConfig parse_config(const std::string& json_text, const std::string& origin) {
    ordered_json j;
    try {
        j = ordered_json::parse(json_text);
    } catch (const std::exception& e) {
        throw ValidationError(origin + ": invalid JSON: " + e.what());
    }
    check_keys(j, {"out_dir", "seed", "languages", "vocab", "model", "train", "pretrain",
                   "experiment", "grid"},
               origin);

    HarnessConfig cfg;
    cfg.out_dir = get_or<std::string>(j, "out_dir", cfg.out_dir, origin);
    cfg.seed = get_or<std::uint64_t>(j, "seed", cfg.seed, origin);

    if (const char* root = std::getenv("PBP_OUT_ROOT");
        root != nullptr && !fs::path(cfg.out_dir).is_absolute()) {
        cfg.out_dir = (fs::path(root) / cfg.out_dir).string();
    }

    const CounterRng base(cfg.seed);

    if (j.contains("languages")) {
        for (const auto& lj : j.at("languages")) {
            const std::string ctx = origin + ": languages[" +
                                    std::to_string(cfg.languages.size()) + "]";
            check_keys(lj,
                       {"name", "count", "lexicon_size", "parent", "overlap", "labels",
                        "mean_phrase_len", "label_noise", "length_range", "seed"},
                       ctx);
            SynthLanguageEntry entry;
            if (!lj.contains("name")) throw ValidationError(ctx + ": missing 'name'");
            entry.spec.name = lj.at("name").get<std::string>();
            if (!valid_language_code(entry.spec.name)) {
                throw ValidationError(ctx + ": invalid language name '" + entry.spec.name + "'");
            }
            entry.count = get_or<std::size_t>(lj, "count", 1000, ctx);
            entry.spec.lexicon_size = get_or<std::size_t>(lj, "lexicon_size", 1200, ctx);
            const std::string parent = get_or<std::string>(lj, "parent", "", ctx);
            if (!parent.empty()) entry.spec.parent = parent;
            entry.spec.overlap = get_or<double>(lj, "overlap", 0.0, ctx);
            if (lj.contains("labels")) {
                const auto& lab = lj.at("labels");
                check_keys(lab, {"ap", "ip", "sb"}, ctx + ".labels");
                entry.spec.break_grammar.target_ratio = {
                    get_or<double>(lab, "ap", 0.842, ctx), get_or<double>(lab, "ip", 0.077, ctx),
                    get_or<double>(lab, "sb", 0.081, ctx)};
            }
            entry.spec.break_grammar.mean_phrase_len =
                get_or<double>(lj, "mean_phrase_len", 6.0, ctx);
            entry.spec.break_grammar.label_noise = get_or<double>(lj, "label_noise", 0.05, ctx);
            if (lj.contains("length_range")) {
                const auto lr = lj.at("length_range").get<std::vector<std::size_t>>();
                if (lr.size() != 2) throw ValidationError(ctx + ": length_range needs [min,max]");
                entry.spec.length_range = {lr[0], lr[1]};
            }
            entry.spec.seed = get_or<std::uint64_t>(
                lj, "seed", base.derive("lang/" + entry.spec.name).next_u64(), ctx);
            cfg.languages.push_back(std::move(entry));
        }
    }
    for (const auto& entry : cfg.languages) {
        if (entry.spec.parent && cfg.find_language(*entry.spec.parent) == nullptr) {
            throw ValidationError(origin + ": language '" + entry.spec.name +
                                  "' names unknown parent '" + *entry.spec.parent + "'");
        }
    }

    if (j.contains("vocab")) {
        const auto& v = j.at("vocab");
        check_keys(v, {"size", "min_frequency"}, origin + ": vocab");
        cfg.vocab_size = get_or<std::size_t>(v, "size", cfg.vocab_size, origin);
        cfg.vocab_min_frequency = get_or<std::size_t>(v, "min_frequency", cfg.vocab_min_frequency, origin);
    }

    if (j.contains("model")) {
        const auto& m = j.at("model");
        check_keys(m, {"layers", "heads", "d_model", "ffn_dim", "max_positions", "dropout",
                       "head_classes"},
                   origin + ": model");
        cfg.model.layers = get_or<std::size_t>(m, "layers", cfg.model.layers, origin);
        cfg.model.heads = get_or<std::size_t>(m, "heads", cfg.model.heads, origin);
        cfg.model.d_model = get_or<std::size_t>(m, "d_model", cfg.model.d_model, origin);
        cfg.model.ffn_dim = get_or<std::size_t>(m, "ffn_dim", cfg.model.ffn_dim, origin);
        cfg.model.max_positions = get_or<std::size_t>(m, "max_positions", cfg.model.max_positions, origin);
        cfg.model.dropout = get_or<double>(m, "dropout", cfg.model.dropout, origin);
        cfg.model.head_classes = get_or<std::size_t>(m, "head_classes", cfg.model.head_classes, origin);
    }

    auto parse_train = [&](const ordered_json& t, TrainConfig& out, const std::string& ctx) {
        check_keys(t, {"batch_size", "learning_rate", "dropout", "epochs", "max_len", "seed",
                       "min_steps", "clip_norm"},
                   ctx);
        out.batch_size = get_or<std::size_t>(t, "batch_size", out.batch_size, ctx);
        out.learning_rate = get_or<double>(t, "learning_rate", out.learning_rate, ctx);
        out.dropout = get_or<double>(t, "dropout", out.dropout, ctx);
        out.epochs = get_or<std::size_t>(t, "epochs", out.epochs, ctx);
        out.max_len = get_or<std::size_t>(t, "max_len", out.max_len, ctx);
        out.seed = get_or<std::uint64_t>(t, "seed", out.seed, ctx);
        out.min_steps = get_or<std::size_t>(t, "min_steps", out.min_steps, ctx);
        out.clip_norm = get_or<double>(t, "clip_norm", out.clip_norm, ctx);
    };

    cfg.train.seed = cfg.seed;
    if (j.contains("train")) parse_train(j.at("train"), cfg.train, origin + ": train");

    cfg.pretrain = cfg.train;
    cfg.pretrain.learning_rate = 3e-4;
    cfg.pretrain.batch_size = 16;
    cfg.pretrain.seed = base.derive("pretrain").next_u64();
    if (j.contains("pretrain")) {
        const auto& p = j.at("pretrain");
        check_keys(p, {"steps", "batch_size", "learning_rate", "seed"}, origin + ": pretrain");
        cfg.pretrain_steps = get_or<std::size_t>(p, "steps", cfg.pretrain_steps, origin);
        cfg.pretrain.batch_size = get_or<std::size_t>(p, "batch_size", cfg.pretrain.batch_size, origin);
        cfg.pretrain.learning_rate = get_or<double>(p, "learning_rate", cfg.pretrain.learning_rate, origin);
        cfg.pretrain.seed = get_or<std::uint64_t>(p, "seed", cfg.pretrain.seed, origin);
    }

    for (const auto& entry : cfg.languages) cfg.experiment.languages.push_back(entry.spec.name);
    cfg.experiment.source = cfg.languages.empty() ? "" : cfg.languages.front().spec.name;
    cfg.experiment.split = SplitSizes{6000, 200, 200};
    if (j.contains("experiment")) {
        const auto& e = j.at("experiment");
        check_keys(e, {"source", "split", "source_expand", "k_schedule", "seeds",
                       "stage2_mix_source", "jobs"},
                   origin + ": experiment");
        cfg.experiment.source = get_or<std::string>(e, "source", cfg.experiment.source, origin);
        if (e.contains("split")) {
            const auto s = e.at("split").get<std::vector<std::size_t>>();
            if (s.size() != 3) throw ValidationError(origin + ": experiment.split needs [train,val,test]");
            cfg.experiment.split = SplitSizes{s[0], s[1], s[2]};
        }
        cfg.experiment.source_expand =
            get_or<std::size_t>(e, "source_expand", cfg.experiment.source_expand, origin);
        cfg.experiment.k_schedule = get_or<std::vector<std::size_t>>(
            e, "k_schedule", cfg.experiment.k_schedule, origin);
        cfg.experiment.seeds =
            get_or<std::vector<std::uint64_t>>(e, "seeds", cfg.experiment.seeds, origin);
        cfg.experiment.stage2_mix_source =
            get_or<bool>(e, "stage2_mix_source", cfg.experiment.stage2_mix_source, origin);
        cfg.experiment.jobs = get_or<std::size_t>(e, "jobs", cfg.experiment.jobs, origin);
    }
    cfg.experiment.train = cfg.train;
    if (!cfg.languages.empty() &&
        std::find(cfg.experiment.languages.begin(), cfg.experiment.languages.end(),
                  cfg.experiment.source) == cfg.experiment.languages.end()) {
        throw ValidationError(origin + ": experiment.source: unknown language '" +
                              cfg.experiment.source + "'");
    }

    if (j.contains("grid")) {
        const auto& g = j.at("grid");
        check_keys(g, {"batch_sizes", "learning_rates", "dropouts"}, origin + ": grid");
        cfg.grid.batch_sizes = get_or<std::vector<std::size_t>>(g, "batch_sizes", cfg.grid.batch_sizes, origin);
        cfg.grid.learning_rates = get_or<std::vector<double>>(g, "learning_rates", cfg.grid.learning_rates, origin);
        cfg.grid.dropouts = get_or<std::vector<double>>(g, "dropouts", cfg.grid.dropouts, origin);
    }

    try {
        cfg.model.vocab_size = std::max<std::size_t>(cfg.vocab_size, WordPieceVocab::kNumSpecials);
        cfg.model.validate();
        cfg.train.validate();
        cfg.pretrain.validate();
    } catch (const std::exception& e) {
        throw ValidationError(origin + ": " + e.what());
    }
    return cfg;
}

HarnessConfig load_config(const std::string& path) {
    return parse_config(read_file(path), path);
}

std::string dump_config(const HarnessConfig& cfg) {
    ordered_json j;
    j["out_dir"] = cfg.out_dir;
    j["seed"] = cfg.seed;
    auto& langs = j["languages"] = ordered_json::array();
    for (const auto& entry : cfg.languages) {
        ordered_json lj;
        lj["name"] = entry.spec.name;
        lj["count"] = entry.count;
        lj["lexicon_size"] = entry.spec.lexicon_size;
        lj["parent"] = entry.spec.parent.value_or("");
        lj["overlap"] = entry.spec.overlap;
        lj["labels"] = {{"ap", entry.spec.break_grammar.target_ratio[0]},
                        {"ip", entry.spec.break_grammar.target_ratio[1]},
                        {"sb", entry.spec.break_grammar.target_ratio[2]}};
        lj["mean_phrase_len"] = entry.spec.break_grammar.mean_phrase_len;
        lj["label_noise"] = entry.spec.break_grammar.label_noise;
        lj["length_range"] = {entry.spec.length_range[0], entry.spec.length_range[1]};
        lj["seed"] = entry.spec.seed;
        langs.push_back(std::move(lj));
    }
    j["vocab"] = {{"size", cfg.vocab_size}, {"min_frequency", cfg.vocab_min_frequency}};
    j["model"] = {{"layers", cfg.model.layers},
                  {"heads", cfg.model.heads},
                  {"d_model", cfg.model.d_model},
                  {"ffn_dim", cfg.model.ffn_dim},
                  {"max_positions", cfg.model.max_positions},
                  {"dropout", cfg.model.dropout},
                  {"head_classes", cfg.model.head_classes}};
    j["train"] = {{"batch_size", cfg.train.batch_size},
                  {"learning_rate", cfg.train.learning_rate},
                  {"dropout", cfg.train.dropout},
                  {"epochs", cfg.train.epochs},
                  {"max_len", cfg.train.max_len},
                  {"seed", cfg.train.seed},
                  {"min_steps", cfg.train.min_steps},
                  {"clip_norm", cfg.train.clip_norm}};
    j["pretrain"] = {{"steps", cfg.pretrain_steps},
                     {"batch_size", cfg.pretrain.batch_size},
                     {"learning_rate", cfg.pretrain.learning_rate},
                     {"seed", cfg.pretrain.seed}};
    j["experiment"] = {{"source", cfg.experiment.source},
                       {"split",
                        {cfg.experiment.split.train, cfg.experiment.split.validation,
                         cfg.experiment.split.test}},
                       {"source_expand", cfg.experiment.source_expand},
                       {"k_schedule", cfg.experiment.k_schedule},
                       {"seeds", cfg.experiment.seeds},
                       {"stage2_mix_source", cfg.experiment.stage2_mix_source},
                       {"jobs", cfg.experiment.jobs}};
    j["grid"] = {{"batch_sizes", cfg.grid.batch_sizes},
                 {"learning_rates", cfg.grid.learning_rates},
                 {"dropouts", cfg.grid.dropouts}};
    return j.dump(2) + "\n";
}

std::string file_digest_hex(const std::string& path) {
    const std::string data = read_file(path);
    return hex64(fnv1a64(data.data(), data.size()));
}

void write_manifest(const RunManifest& manifest, const std::string& dir) {
    ordered_json j;
    j["command"] = manifest.command;
    if (!manifest.config_json.empty()) j["config"] = ordered_json::parse(manifest.config_json);
    j["inputs"] = manifest.input_digests;
    j["outputs"] = manifest.outputs;
    j["seeds"] = manifest.seeds;
    j["started_at"] = manifest.started_at;
    j["wall_seconds"] = manifest.wall_seconds;
    fs::create_directories(dir);
    write_file_atomic(dir + "/manifest-" + manifest.command + ".json", j.dump(2) + "\n");
}

CorpusMap generate_all_languages(const HarnessConfig& cfg) {
    if (cfg.languages.empty()) throw ValidationError("config defines no languages");
    CorpusMap corpora;
    for (const auto& entry : cfg.languages) {
        const SynthLanguageSpec* parent = nullptr;
        if (entry.spec.parent) parent = &cfg.find_language(*entry.spec.parent)->spec;
        corpora.emplace(entry.spec.name,
                        generate_synthetic_language(entry.spec, entry.count, parent));
    }
    return corpora;
}

PipelineArtifacts ensure_artifacts(const HarnessConfig& cfg, std::ostream* log) {
    if (cfg.languages.empty()) throw ValidationError("config defines no languages");
    const std::string dir = cfg.out_dir;
    fs::create_directories(dir + "/corpora");

    // The artifact stamp covers everything the prerequisites depend on.
    ordered_json stamp_cfg = ordered_json::parse(dump_config(cfg));
    stamp_cfg.erase("experiment");
    stamp_cfg.erase("grid");
    stamp_cfg.erase("out_dir");
    const std::string config_digest =
        hex64(fnv1a64(stamp_cfg.dump().data(), stamp_cfg.dump().size()));

    std::vector<std::string> corpus_paths;
    for (const auto& entry : cfg.languages) {
        corpus_paths.push_back(dir + "/corpora/" + entry.spec.name + ".jsonl");
    }
    const std::string vocab_path = dir + "/vocab.txt";
    const std::string ckpt_path = dir + "/pretrained.ckpt";
    const std::string stamp_path = dir + "/artifacts.json";

    auto try_reuse = [&]() -> bool {
        if (!fs::exists(stamp_path)) return false;
        ordered_json stamp;
        try {
            stamp = ordered_json::parse(read_file(stamp_path));
        } catch (...) {
            return false;
        }
        if (stamp.value("config_digest", "") != config_digest) return false;
        if (!stamp.contains("files")) return false;
        for (const auto& [path, digest] : stamp.at("files").items()) {
            if (!fs::exists(path) || file_digest_hex(path) != digest.get<std::string>()) {
                return false;
            }
        }
        return true;
    };

    PipelineArtifacts art;
    if (try_reuse()) {
        if (log) *log << "reusing pipeline artifacts under " << dir << "\n";
        for (std::size_t i = 0; i < cfg.languages.size(); ++i) {
            art.corpora.emplace(cfg.languages[i].spec.name, load_corpus(corpus_paths[i]));
        }
        art.vocab = WordPieceVocab::load(vocab_path);
        art.pretrained = load_checkpoint(ckpt_path);
    } else {
        if (log) *log << "building pipeline artifacts under " << dir << "\n";
        art.corpora = generate_all_languages(cfg);
        for (std::size_t i = 0; i < cfg.languages.size(); ++i) {
            save_corpus(art.corpora.at(cfg.languages[i].spec.name), corpus_paths[i]);
        }

        std::vector<Utterance> pooled;
        for (const auto& [lang, corpus] : art.corpora) {
            pooled.insert(pooled.end(), corpus.begin(), corpus.end());
        }
        if (log) *log << "training vocabulary (target size " << cfg.vocab_size << ")\n";
        art.vocab = train_vocab(pooled, cfg.vocab_size, cfg.vocab_min_frequency, cfg.seed);
        art.vocab.save(vocab_path);

        ModelConfig mc = cfg.model;
        mc.vocab_size = art.vocab.size();
        if (log) *log << "pretraining for " << cfg.pretrain_steps << " steps\n";
        art.pretrained = pretrain_mlm(mc, cfg.pretrain, pooled, art.vocab, cfg.pretrain_steps, log);
        save_checkpoint(art.pretrained, ckpt_path);

        ordered_json stamp;
        stamp["config_digest"] = config_digest;
        auto& files = stamp["files"] = ordered_json::object();
        for (const auto& p : corpus_paths) files[p] = file_digest_hex(p);
        files[vocab_path] = file_digest_hex(vocab_path);
        files[ckpt_path] = file_digest_hex(ckpt_path);
        write_file_atomic(stamp_path, stamp.dump(2) + "\n");
    }

    for (const auto& p : corpus_paths) art.digests[p] = file_digest_hex(p);
    art.digests[vocab_path] = file_digest_hex(vocab_path);
    art.digests[ckpt_path] = file_digest_hex(ckpt_path);
    return art;
}

void cmd_gen_synth(const HarnessConfig& cfg, const std::string& lang,
                   std::optional<std::size_t> count, const std::string& out_path) {
    Stopwatch watch;
    RunManifest manifest;
    manifest.command = "gen-synth";
    manifest.config_json = dump_config(cfg);
    manifest.started_at = iso_now();

    if (lang == "all") {
        fs::create_directories(out_path);
        const CorpusMap corpora = generate_all_languages(cfg);
        for (const auto& [name, corpus] : corpora) {
            const std::string path = out_path + "/" + name + ".jsonl";
            save_corpus(corpus, path);
            manifest.outputs.push_back(path);
        }
        manifest.wall_seconds = watch.seconds();
        write_manifest(manifest, out_path);
        return;
    }

    const SynthLanguageEntry* entry = cfg.find_language(lang);
    if (entry == nullptr) throw ValidationError("gen-synth: unknown language '" + lang + "'");
    const SynthLanguageSpec* parent =
        entry->spec.parent ? &cfg.find_language(*entry->spec.parent)->spec : nullptr;
    const auto corpus =
        generate_synthetic_language(entry->spec, count.value_or(entry->count), parent);
    save_corpus(corpus, out_path);
    manifest.outputs.push_back(out_path);
    manifest.seeds.push_back(entry->spec.seed);
    manifest.wall_seconds = watch.seconds();
    write_manifest(manifest, fs::path(out_path).parent_path().string().empty()
                                 ? "."
                                 : fs::path(out_path).parent_path().string());
}

void cmd_build_vocab(const std::vector<std::string>& corpus_files, std::size_t size,
                     std::size_t min_frequency, const std::string& out_path) {
    if (corpus_files.empty()) throw ValidationError("build-vocab: no corpus files given");
    Stopwatch watch;
    RunManifest manifest;
    manifest.command = "build-vocab";
    manifest.started_at = iso_now();

    std::vector<Utterance> pooled;
    for (const auto& path : corpus_files) {
        manifest.input_digests[path] = file_digest_hex(path);
        const auto corpus = load_corpus(path);
        pooled.insert(pooled.end(), corpus.begin(), corpus.end());
    }
    const auto vocab = train_vocab(pooled, size, min_frequency, 0);
    vocab.save(out_path);
    std::cout << "vocabulary size " << vocab.size() << " written to " << out_path << "\n";

    manifest.outputs.push_back(out_path);
    manifest.wall_seconds = watch.seconds();
    const std::string dir = fs::path(out_path).parent_path().string();
    write_manifest(manifest, dir.empty() ? "." : dir);
}

void cmd_pretrain(const HarnessConfig& cfg, const std::string& vocab_path,
                  const std::vector<std::string>& corpus_files, std::optional<std::size_t> steps,
                  const std::string& out_path) {
    if (corpus_files.empty()) throw ValidationError("pretrain: no corpus files given");
    Stopwatch watch;
    RunManifest manifest;
    manifest.command = "pretrain";
    manifest.config_json = dump_config(cfg);
    manifest.started_at = iso_now();

    const auto vocab = WordPieceVocab::load(vocab_path);
    manifest.input_digests[vocab_path] = file_digest_hex(vocab_path);
    std::vector<Utterance> pooled;
    for (const auto& path : corpus_files) {
        manifest.input_digests[path] = file_digest_hex(path);
        const auto corpus = load_corpus(path);
        pooled.insert(pooled.end(), corpus.begin(), corpus.end());
    }

    ModelConfig mc = cfg.model;
    mc.vocab_size = vocab.size();
    const auto ckpt = pretrain_mlm(mc, cfg.pretrain, pooled, vocab,
                                   steps.value_or(cfg.pretrain_steps), &std::cerr);
    save_checkpoint(ckpt, out_path);

    manifest.outputs.push_back(out_path);
    manifest.seeds.push_back(cfg.pretrain.seed);
    manifest.wall_seconds = watch.seconds();
    const std::string dir = fs::path(out_path).parent_path().string();
    write_manifest(manifest, dir.empty() ? "." : dir);
}

void cmd_train(const HarnessConfig& cfg, const std::string& vocab_path,
               const std::string& start_ckpt, const std::string& train_file,
               const std::string& val_file, const std::string& out_path) {
    Stopwatch watch;
    RunManifest manifest;
    manifest.command = "train";
    manifest.config_json = dump_config(cfg);
    manifest.started_at = iso_now();

    const auto vocab = WordPieceVocab::load(vocab_path);
    const auto start = load_checkpoint(start_ckpt);
    const auto train_set = load_corpus(train_file);
    manifest.input_digests[vocab_path] = file_digest_hex(vocab_path);
    manifest.input_digests[start_ckpt] = file_digest_hex(start_ckpt);
    manifest.input_digests[train_file] = file_digest_hex(train_file);
    std::vector<Utterance> val_set;
    if (!val_file.empty()) {
        val_set = load_corpus(val_file);
        manifest.input_digests[val_file] = file_digest_hex(val_file);
    }

    const auto result =
        fine_tune(start, vocab, train_set, val_set, cfg.train, "finetuned", &std::cerr);
    save_checkpoint(result.checkpoint, out_path);
    const std::string history_path = out_path + ".history.csv";
    write_file_atomic(history_path, history_csv(result.history));

    manifest.outputs = {out_path, history_path};
    manifest.seeds.push_back(cfg.train.seed);
    manifest.wall_seconds = watch.seconds();
    const std::string dir = fs::path(out_path).parent_path().string();
    write_manifest(manifest, dir.empty() ? "." : dir);
}

void cmd_eval(const std::string& ckpt_path, const std::string& vocab_path,
              const std::string& test_file, const std::string& out_path) {
    Stopwatch watch;
    RunManifest manifest;
    manifest.command = "eval";
    manifest.started_at = iso_now();

    const auto ckpt = load_checkpoint(ckpt_path);
    const auto vocab = WordPieceVocab::load(vocab_path);
    const auto test_set = load_corpus(test_file);
    manifest.input_digests[ckpt_path] = file_digest_hex(ckpt_path);
    manifest.input_digests[vocab_path] = file_digest_hex(vocab_path);
    manifest.input_digests[test_file] = file_digest_hex(test_file);

    const auto report = evaluate(ckpt, vocab, test_set);
    std::cout << to_kv_text(report);
    write_file_atomic(out_path, to_kv_text(report));

    manifest.outputs.push_back(out_path);
    manifest.wall_seconds = watch.seconds();
    const std::string dir = fs::path(out_path).parent_path().string();
    write_manifest(manifest, dir.empty() ? "." : dir);
}

void cmd_stats(const std::vector<std::string>& corpus_files, const std::string& vocab_path,
               const std::string& out_path) {
    if (corpus_files.empty()) throw ValidationError("stats: no corpus files given");
    Stopwatch watch;
    RunManifest manifest;
    manifest.command = "stats";
    manifest.started_at = iso_now();

    const auto vocab = WordPieceVocab::load(vocab_path);
    manifest.input_digests[vocab_path] = file_digest_hex(vocab_path);

    std::vector<std::pair<LanguageCode, CorpusStats>> rows;
    std::size_t reference = 0;
    for (const auto& path : corpus_files) {
        manifest.input_digests[path] = file_digest_hex(path);
        const auto corpus = load_corpus(path);
        if (reference == 0) reference = corpus.size();  // first corpus is the reference
        rows.emplace_back(corpus.empty() ? LanguageCode("?") : corpus.front().lang,
                          compute_stats(corpus, vocab, reference));
    }
    std::ostringstream table;
    write_stats_csv(table, rows);
    std::cout << table.str();
    write_file_atomic(out_path, table.str());

    manifest.outputs.push_back(out_path);
    manifest.wall_seconds = watch.seconds();
    const std::string dir = fs::path(out_path).parent_path().string();
    write_manifest(manifest, dir.empty() ? "." : dir);
}

void cmd_zeroshot(const HarnessConfig& cfg) {
    Stopwatch watch;
    RunManifest manifest;
    manifest.command = "zeroshot";
    manifest.config_json = dump_config(cfg);
    manifest.started_at = iso_now();
    manifest.seeds = cfg.experiment.seeds;

    const auto art = ensure_artifacts(cfg, &std::cerr);
    manifest.input_digests = art.digests;

    const auto matrix =
        run_zero_shot_matrix(cfg.experiment, art.pretrained, art.vocab, art.corpora, &std::cerr);
    manifest.outputs = export_zero_shot(matrix, cfg.experiment, cfg.out_dir + "/zeroshot");
    std::cout << zero_shot_csv(matrix);

    manifest.wall_seconds = watch.seconds();
    write_manifest(manifest, cfg.out_dir + "/zeroshot");
}

void cmd_fewshot(const HarnessConfig& cfg, const std::string& scenario,
                 const LanguageCode& target) {
    std::vector<FewShotScenario> scenarios;
    if (scenario == "both") {
        scenarios = {FewShotScenario::EnglishOnly, FewShotScenario::Augmented};
    } else {
        const auto s = scenario_from_string(scenario);
        if (!s) {
            throw ValidationError("fewshot: unknown scenario '" + scenario +
                                  "' (expected english-only, augmented or both)");
        }
        scenarios = {*s};
    }
    if (cfg.find_language(target) == nullptr) {
        throw ValidationError("fewshot: unknown target language '" + target + "'");
    }

    Stopwatch watch;
    RunManifest manifest;
    manifest.command = "fewshot";
    manifest.config_json = dump_config(cfg);
    manifest.started_at = iso_now();
    manifest.seeds = cfg.experiment.seeds;

    const auto art = ensure_artifacts(cfg, &std::cerr);
    manifest.input_digests = art.digests;

    std::vector<FewShotCurve> curves;
    for (const auto s : scenarios) {
        curves.push_back(run_few_shot_curve(cfg.experiment, s, target, art.pretrained, art.vocab,
                                            art.corpora, &std::cerr));
    }
    manifest.outputs = export_few_shot(curves, cfg.experiment, cfg.out_dir + "/fewshot");
    for (const auto& c : curves) std::cout << few_shot_csv(c);

    manifest.wall_seconds = watch.seconds();
    write_manifest(manifest, cfg.out_dir + "/fewshot");
}

void cmd_gridsearch(const HarnessConfig& cfg) {
    Stopwatch watch;
    RunManifest manifest;
    manifest.command = "gridsearch";
    manifest.config_json = dump_config(cfg);
    manifest.started_at = iso_now();

    const auto art = ensure_artifacts(cfg, &std::cerr);
    manifest.input_digests = art.digests;

    const auto splits = make_splits(cfg.experiment, art.corpora);
    const auto& source_split = splits.at(cfg.experiment.source);
    const auto result = grid_search(cfg.grid, art.pretrained, art.vocab, source_split.train,
                                    source_split.validation, cfg.train, &std::cerr);

    std::string table = "batch_size,learning_rate,dropout,val_macro_f1,best\n";
    char buf[160];
    for (const auto& r : result.results) {
        const bool is_best = r.config.batch_size == result.best.batch_size &&
                             r.config.learning_rate == result.best.learning_rate &&
                             r.config.dropout == result.best.dropout;
        std::snprintf(buf, sizeof(buf), "%zu,%g,%g,%.2f,%d\n", r.config.batch_size,
                      r.config.learning_rate, r.config.dropout, 100.0 * r.val_macro_f1,
                      is_best ? 1 : 0);
        table += buf;
    }
    std::cout << table;

    fs::create_directories(cfg.out_dir + "/gridsearch");
    const std::string table_path = cfg.out_dir + "/gridsearch/grid_results.csv";
    write_file_atomic(table_path, table);

    ordered_json best;
    best["batch_size"] = result.best.batch_size;
    best["learning_rate"] = result.best.learning_rate;
    best["dropout"] = result.best.dropout;
    const std::string best_path = cfg.out_dir + "/gridsearch/best_config.json";
    write_file_atomic(best_path, best.dump(2) + "\n");

    manifest.outputs = {table_path, best_path};
    manifest.seeds.push_back(cfg.train.seed);
    manifest.wall_seconds = watch.seconds();
    write_manifest(manifest, cfg.out_dir + "/gridsearch");
}

}  // namespace pbp
