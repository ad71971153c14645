// Phrase-break prediction toolkit: corpus generation, WordPiece
// vocabulary training, MLM pretraining, fine-tuning, evaluation and the
// cross-lingual transfer experiment harness behind one binary.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pbp/harness.hpp"

namespace {

struct ConfigArgs {
    std::string path;
    bool dump = false;
    std::size_t jobs = 0;  // 0 = keep the config's value
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
    cmd->add_option("-c,--config", args.path, "Run configuration file (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_flag("--dump-config", args.dump,
                  "Print the fully resolved configuration and exit");
    cmd->add_option("-j,--jobs", args.jobs, "Worker threads for independent runs");
}

// Returns the loaded config, or nullopt when --dump-config already
// handled the invocation.
std::optional<pbp::HarnessConfig> resolve_config(const ConfigArgs& args) {
    pbp::HarnessConfig cfg = pbp::load_config(args.path);
    if (args.jobs > 0) cfg.experiment.jobs = args.jobs;
    if (args.dump) {
        std::cout << pbp::dump_config(cfg);
        return std::nullopt;
    }
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"phrase-break prediction toolkit", "pbp"};
    app.require_subcommand(1);

    // gen-synth
    ConfigArgs gen_cfg;
    std::string gen_lang = "all";
    std::string gen_out;
    std::size_t gen_count = 0;
    auto* gen = app.add_subcommand("gen-synth", "Generate a synthetic corpus");
    add_config_options(gen, gen_cfg);
    gen->add_option("--lang", gen_lang, "Language name from the config, or 'all'")
        ->capture_default_str();
    gen->add_option("--count", gen_count, "Override the configured utterance count");
    gen->add_option("-o,--out", gen_out, "Output corpus file ('all': output directory)")
        ->required();

    // build-vocab
    std::vector<std::string> bv_corpora;
    std::size_t bv_size = 8000, bv_minfreq = 2;
    std::string bv_out;
    auto* bv = app.add_subcommand("build-vocab", "Train the shared WordPiece vocabulary");
    bv->add_option("corpora", bv_corpora, "Corpus files (pooled)")
        ->required()
        ->check(CLI::ExistingFile);
    bv->add_option("--size", bv_size, "Vocabulary budget (specials + characters + merges)")
        ->capture_default_str();
    bv->add_option("--min-frequency", bv_minfreq, "Minimum pair count for a merge")
        ->capture_default_str();
    bv->add_option("-o,--out", bv_out, "Output vocabulary file")->required();

    // pretrain
    ConfigArgs pre_cfg;
    std::vector<std::string> pre_corpora;
    std::string pre_vocab, pre_out;
    std::size_t pre_steps = 0;
    auto* pre = app.add_subcommand("pretrain", "Masked-LM pretraining from scratch");
    add_config_options(pre, pre_cfg);
    pre->add_option("corpora", pre_corpora, "Corpus files (pooled)")
        ->required()
        ->check(CLI::ExistingFile);
    pre->add_option("--vocab", pre_vocab, "Vocabulary file")->required()->check(CLI::ExistingFile);
    pre->add_option("--steps", pre_steps, "Override the configured step count");
    pre->add_option("-o,--out", pre_out, "Output checkpoint")->required();

    // train
    ConfigArgs tr_cfg;
    std::string tr_vocab, tr_start, tr_train, tr_val, tr_out;
    auto* tr = app.add_subcommand("train", "Fine-tune a checkpoint for break prediction");
    add_config_options(tr, tr_cfg);
    tr->add_option("--vocab", tr_vocab, "Vocabulary file")->required()->check(CLI::ExistingFile);
    tr->add_option("--from", tr_start, "Starting checkpoint")->required()->check(CLI::ExistingFile);
    tr->add_option("--train", tr_train, "Training corpus")->required()->check(CLI::ExistingFile);
    tr->add_option("--val", tr_val, "Validation corpus (optional: no epoch selection)")
        ->check(CLI::ExistingFile);
    tr->add_option("-o,--out", tr_out, "Output checkpoint")->required();

    // eval
    std::string ev_ckpt, ev_vocab, ev_test, ev_out = "eval_report.txt";
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint (word-juncture macro-F1)");
    ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
    ev->add_option("--vocab", ev_vocab, "Vocabulary file")->required()->check(CLI::ExistingFile);
    ev->add_option("--test", ev_test, "Test corpus")->required()->check(CLI::ExistingFile);
    ev->add_option("-o,--out", ev_out, "Report output file")->capture_default_str();

    // stats
    std::vector<std::string> st_corpora;
    std::string st_vocab, st_out = "corpus_stats.csv";
    auto* st = app.add_subcommand("stats", "Corpus distribution table (first file is the reference)");
    st->add_option("corpora", st_corpora, "Corpus files, reference first")
        ->required()
        ->check(CLI::ExistingFile);
    st->add_option("--vocab", st_vocab, "Vocabulary file")->required()->check(CLI::ExistingFile);
    st->add_option("-o,--out", st_out, "Table output file")->capture_default_str();

    // zeroshot
    ConfigArgs zs_cfg;
    auto* zs = app.add_subcommand("zeroshot", "Zero-shot cross-lingual transfer matrix");
    add_config_options(zs, zs_cfg);

    // fewshot
    ConfigArgs fs_cfg;
    std::string fs_scenario = "english-only", fs_target;
    auto* fsc = app.add_subcommand("fewshot", "Two-step few-shot transfer curve");
    add_config_options(fsc, fs_cfg);
    fsc->add_option("--scenario", fs_scenario, "english-only | augmented | both")
        ->capture_default_str();
    fsc->add_option("--target", fs_target, "Target language")->required();

    // gridsearch
    ConfigArgs gs_cfg;
    auto* gs = app.add_subcommand("gridsearch", "Hyperparameter grid search on the source language");
    add_config_options(gs, gs_cfg);

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);  // --help and friends
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;  // bad flags and malformed invocations are validation errors
    }

    try {
        if (gen->parsed()) {
            if (auto cfg = resolve_config(gen_cfg)) {
                pbp::cmd_gen_synth(*cfg, gen_lang,
                                   gen_count > 0 ? std::optional<std::size_t>(gen_count)
                                                 : std::nullopt,
                                   gen_out);
            }
        } else if (bv->parsed()) {
            pbp::cmd_build_vocab(bv_corpora, bv_size, bv_minfreq, bv_out);
        } else if (pre->parsed()) {
            if (auto cfg = resolve_config(pre_cfg)) {
                pbp::cmd_pretrain(*cfg, pre_vocab, pre_corpora,
                                  pre_steps > 0 ? std::optional<std::size_t>(pre_steps)
                                                : std::nullopt,
                                  pre_out);
            }
        } else if (tr->parsed()) {
            if (auto cfg = resolve_config(tr_cfg)) {
                pbp::cmd_train(*cfg, tr_vocab, tr_start, tr_train, tr_val, tr_out);
            }
        } else if (ev->parsed()) {
            pbp::cmd_eval(ev_ckpt, ev_vocab, ev_test, ev_out);
        } else if (st->parsed()) {
            pbp::cmd_stats(st_corpora, st_vocab, st_out);
        } else if (zs->parsed()) {
            if (auto cfg = resolve_config(zs_cfg)) pbp::cmd_zeroshot(*cfg);
        } else if (fsc->parsed()) {
            if (auto cfg = resolve_config(fs_cfg)) pbp::cmd_fewshot(*cfg, fs_scenario, fs_target);
        } else if (gs->parsed()) {
            if (auto cfg = resolve_config(gs_cfg)) pbp::cmd_gridsearch(*cfg);
        }
    } catch (const pbp::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
