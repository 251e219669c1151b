#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>

#include <CLI11.hpp>

#include "alarm/checkpoint.hpp"
#include "alarm/corpus.hpp"
#include "alarm/eval.hpp"
#include "alarm/pretrain.hpp"
#include "alarm/trainer.hpp"

namespace {

using namespace alm;

constexpr int kOk = 0;
constexpr int kFatal = 1;
constexpr int kPartial = 2;

std::uint64_t resolve_seed(std::uint64_t configured) {
    if (const char* env = std::getenv("ALARM_SEED"); env && *env) {
        try {
            return std::stoull(env);
        } catch (const std::exception&) {
            throw Error(ErrorKind::InvalidInput, std::string("ALARM_SEED is not an integer: ") + env);
        }
    }
    return configured;
}

nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot read " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::ParseError, path + ": " + e.what());
    }
}

void write_json(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot write " + path);
    out << j.dump(2) << '\n';
}

struct BuildArgs {
    std::string manifest, rules, endpoint, reasoning_endpoint, mock, out;
    std::string instruct_model = "instruct", reasoning_model = "reasoning";
    int candidates = 20, concurrency = 1;
    std::optional<int> budget;
    std::uint64_t seed = 0;
    bool no_resume = false;
};

int run_build(const BuildArgs& a) {
    FilterRules rules = a.rules.empty() ? FilterRules{} : load_rules(a.rules);
    if (a.budget) rules.budget = *a.budget;
    rules.normalize();
    const auto manifest = load_manifest(a.manifest);

    std::unique_ptr<LlmClient> q, qr;
    if (!a.mock.empty()) {
        q = std::make_unique<MockLlmClient>(MockLlmClient::from_file(a.mock, LlmRole::Instruct));
        qr = std::make_unique<MockLlmClient>(MockLlmClient::from_file(a.mock, LlmRole::Reasoning));
    } else if (!a.endpoint.empty()) {
        const char* key = std::getenv("ALARM_API_KEY");
        HttpClientOptions qo{a.endpoint, a.instruct_model, key ? key : ""};
        HttpClientOptions ro{a.reasoning_endpoint.empty() ? a.endpoint : a.reasoning_endpoint, a.reasoning_model,
                             key ? key : ""};
        q = std::make_unique<HttpLlmClient>(LlmRole::Instruct, qo);
        qr = std::make_unique<HttpLlmClient>(LlmRole::Reasoning, ro);
    } else {
        throw Error(ErrorKind::InvalidInput, "build-corpus needs --mock or --llm-endpoint");
    }

    BuildOptions opts;
    opts.candidates = a.candidates;
    opts.concurrency = a.concurrency;
    opts.seed = resolve_seed(a.seed);
    opts.resume = !a.no_resume;
    const BuildReport report = build_corpus(manifest, *q, *qr, rules, opts, a.out);
    write_json(a.out + ".report.json", report.to_json());
    std::cout << "records: " << report.total << "  written: " << report.written << "  resumed: " << report.resumed
              << "  parked: " << report.parked.size() << '\n';
    for (const auto& p : report.parked) std::cout << "  parked " << p.id << " (" << to_string(p.reason) << ")\n";
    return report.parked.empty() ? kOk : kPartial;
}

int run_split(const std::string& corpus_path, double frac, std::uint64_t seed, const std::string& out_dir) {
    const auto corpus = load_corpus(corpus_path);
    const CorpusSplit s = split_corpus(corpus, frac, resolve_seed(seed));
    std::filesystem::create_directories(out_dir);
    write_corpus(std::filesystem::path(out_dir) / "train.jsonl", s.train);
    write_corpus(std::filesystem::path(out_dir) / "val.jsonl", s.validation);
    std::cout << "train: " << s.train.size() << "  validation: " << s.validation.size() << '\n';
    return kOk;
}

struct TrainArgs {
    std::string corpus, variant, config, out, backbone, bank;
    std::vector<std::string> init_from;
    std::uint64_t seed = 0;
    bool seed_given = false;
};

int run_train(const TrainArgs& a) {
    const nlohmann::json cfg = a.config.empty() ? nlohmann::json::object() : read_json(a.config);
    const std::uint64_t seed = resolve_seed(a.seed_given ? a.seed : cfg.value("seed", std::uint64_t{0}));

    TrainConfig train = cfg.value("train", nlohmann::json::object()).get<TrainConfig>();
    train.variant = parse_variant(a.variant);
    train.seed = seed;
    ModelConfig model_cfg = cfg.value("model", nlohmann::json::object()).get<ModelConfig>();
    model_cfg.seed = seed;

    BankConfig bank = !a.bank.empty() ? load_bank_config(a.bank)
                      : cfg.contains("bank") ? bank_from_json(cfg["bank"])
                                             : default_bank();
    const std::string backbone_path = !a.backbone.empty() ? a.backbone : cfg.value("backbone", std::string{});
    std::shared_ptr<Backbone> backbone;
    if (!backbone_path.empty()) {
        backbone = load_backbone(backbone_path);
    } else {
        std::cerr << "warning: no backbone archive given; using a randomly initialized backbone\n";
        backbone = std::make_shared<Backbone>(BackboneConfig{}, seed);
    }

    AlarmModel model(train.variant, bank, model_cfg, backbone);
    if (!a.init_from.empty()) {
        std::vector<Archive> sources;
        for (const auto& p : a.init_from) sources.push_back(read_archive(p));
        if (train.variant == Variant::CrossAttention)
            init_from_single_encoder(model, sources);
        else if (train.variant == Variant::Perceiver)
            init_perceiver_from_content(model, sources.front());
        else if (sources.size() == 1 && sources.front().meta.value("variant", "") == to_string(train.variant))
            restore_parameters(model, sources.front());
        else
            throw Error(ErrorKind::IncompatibleCheckpoint, "--init-from does not fit variant " + a.variant);
    }

    const auto corpus = to_train_examples(load_corpus(a.corpus));
    FeatureProvider features(bank);
    FitOptions opts;
    opts.out_dir = a.out;
    opts.on_step = [](const StepLog& s) {
        if (s.step % 10 == 0) std::cout << "step " << s.step << "  lr " << s.lr << "  loss " << s.loss << '\n';
    };
    const FitResult r = fit(model, corpus, features, train, opts);
    std::cout << "steps: " << r.state.step << "  final loss: " << (r.log.empty() ? 0.0 : r.log.back().loss)
              << "  checkpoint: " << (std::filesystem::path(a.out) / "final.ckpt").string() << '\n';
    return kOk;
}

struct EvalArgs {
    std::string checkpoint, checkpoint2, variant, benchmark, report;
    bool strict = false, no_choices = false;
    int max_new_tokens = 256;
};

int run_eval(const EvalArgs& a) {
    const Variant variant = parse_variant(a.variant);
    const auto items = load_benchmark(a.benchmark);
    LoadedModel first = load_model(a.checkpoint);
    std::optional<LoadedModel> second;
    std::unique_ptr<EnsembleModel> ensemble;
    const SequenceModel* model = first.model.get();
    if (variant == Variant::Ensemble) {
        if (a.checkpoint2.empty()) throw Error(ErrorKind::InvalidInput, "variant e needs --checkpoint2");
        second = load_model(a.checkpoint2);
        ensemble = std::make_unique<EnsembleModel>(*first.model, *second->model);
        model = ensemble.get();
    } else if (first.model->variant() != variant) {
        throw Error(ErrorKind::IncompatibleCheckpoint,
                    "checkpoint holds " + to_string(first.model->variant()) + ", not " + a.variant);
    }
    FeatureProvider features(first.model->bank());
    EvalOptions opts;
    opts.strict = a.strict;
    opts.include_choices = !a.no_choices;
    const EvalReport report = evaluate(items, model_responder(*model, features, a.max_new_tokens), opts);
    nlohmann::json j = report.to_json();
    j["variant"] = a.variant;
    j["max_new_tokens"] = a.max_new_tokens;
    write_json(a.report, j);
    for (const auto& [name, c] : report.categories)
        std::cout << name << ": " << c.correct << "/" << c.total << " = " << c.accuracy() << '\n';
    std::cout << "overall: " << report.correct << "/" << report.total << " = " << report.accuracy()
              << "  errored: " << report.errored << "  truncated: " << report.truncated << '\n';
    return report.errored == 0 ? kOk : kPartial;
}

int run_inspect(const std::string& path) {
    const Archive a = read_archive(path);
    const auto& meta = a.meta;
    std::cout << "kind: " << meta.value("kind", "?") << '\n';
    if (meta.contains("variant")) std::cout << "variant: " << meta["variant"].get<std::string>() << '\n';
    std::cout << "frozen digest: " << meta.value("frozen_digest", "?") << '\n';
    if (meta.contains("step")) {
        const long step = meta["step"].get<long>(), total = meta.value("total_steps", 0L);
        std::cout << "schedule position: step " << step << " of " << total;
        if (meta.contains("train_config") && step <= total)
            std::cout << "  lr " << schedule_lr(step, total, meta["train_config"].get<TrainConfig>());
        std::cout << '\n';
    }
    const auto census = meta.value("census", std::vector<std::string>{});
    std::cout << "census (" << census.size() << " trainable arrays):\n";
    for (const auto& name : census) {
        const NamedArray* arr = a.find(name);
        std::cout << "  " << name;
        if (arr) std::cout << "  [" << arr->value.rows() << " x " << arr->value.cols() << "]";
        std::cout << '\n';
    }
    std::size_t frozen = 0;
    for (const auto& arr : a.arrays) frozen += arr.readonly ? 1 : 0;
    std::cout << "frozen arrays: " << frozen << "  total arrays: " << a.arrays.size() << '\n';
    return kOk;
}

int run_pretrain(const std::string& out, int steps, int batch, double lr, std::uint64_t seed) {
    seed = resolve_seed(seed);
    Backbone backbone(BackboneConfig{}, seed);
    PretrainConfig cfg;
    cfg.steps = steps;
    cfg.batch = batch;
    cfg.peak_lr = lr;
    cfg.seed = seed;
    const auto losses = pretrain_backbone(backbone, synthetic_captions(5000, seed), cfg, [](int s, double l) {
        if (s % 100 == 0) std::cout << "step " << s << "  loss " << l << '\n';
    });
    save_backbone(out, backbone);
    std::cout << "final loss " << losses.back() << "  digest " << freeze_fingerprint(backbone.params()) << '\n';
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Audio-language adapters over a frozen LM: corpus building, training and evaluation"};
    app.require_subcommand(1);

    BuildArgs build;
    auto* bc = app.add_subcommand("build-corpus", "Generate prompts and targets for a metadata manifest");
    bc->add_option("--manifest", build.manifest)->required();
    bc->add_option("--rules", build.rules);
    auto* endpoint = bc->add_option("--llm-endpoint", build.endpoint, "Chat completion URL");
    bc->add_option("--reasoning-endpoint", build.reasoning_endpoint, "Separate URL for the reasoning model");
    bc->add_option("--instruct-model", build.instruct_model);
    bc->add_option("--reasoning-model", build.reasoning_model);
    bc->add_option("--mock", build.mock, "Mock response table")->excludes(endpoint);
    bc->add_option("--candidates", build.candidates)->check(CLI::PositiveNumber);
    bc->add_option("--budget", build.budget, "Thinking budget for the rephrase call (overrides the rules file)")->check(CLI::PositiveNumber);
    bc->add_option("--concurrency", build.concurrency)->check(CLI::PositiveNumber);
    bc->add_option("--seed", build.seed);
    bc->add_option("--out", build.out)->required();
    bc->add_flag("--no-resume", build.no_resume, "Overwrite instead of resuming an existing output");

    std::string split_corpus_path, split_out;
    double val_frac = 0.10;
    std::uint64_t split_seed = 0;
    auto* sc = app.add_subcommand("split", "Stratified train/validation split");
    sc->add_option("--corpus", split_corpus_path)->required();
    sc->add_option("--val-frac", val_frac);
    sc->add_option("--seed", split_seed);
    sc->add_option("--out-dir", split_out)->required();

    TrainArgs train;
    auto* tc = app.add_subcommand("train", "Train adapters and fusion against a frozen backbone");
    tc->add_option("--corpus", train.corpus)->required();
    tc->add_option("--variant", train.variant)->required();
    tc->add_option("--config", train.config);
    tc->add_option("--init-from", train.init_from);
    tc->add_option("--backbone", train.backbone, "Backbone archive (overrides the config)");
    tc->add_option("--bank", train.bank, "Encoder bank JSON (overrides the config)");
    auto* train_seed = tc->add_option("--seed", train.seed);
    tc->add_option("--out", train.out)->required();

    EvalArgs ev;
    auto* ec = app.add_subcommand("eval", "Multiple-choice benchmark evaluation");
    ec->add_option("--checkpoint", ev.checkpoint)->required();
    ec->add_option("--checkpoint2", ev.checkpoint2, "Single-content checkpoint for variant e");
    ec->add_option("--variant", ev.variant)->required();
    ec->add_option("--benchmark", ev.benchmark)->required();
    ec->add_option("--report", ev.report)->required();
    ec->add_option("--max-new-tokens", ev.max_new_tokens)->check(CLI::NonNegativeNumber);
    ec->add_flag("--strict", ev.strict, "Count errored items as wrong");
    ec->add_flag("--no-choices", ev.no_choices, "Prompt with the bare question");

    std::string inspect_path;
    auto* ic = app.add_subcommand("inspect", "Print census, frozen digest and schedule position");
    ic->add_option("--checkpoint", inspect_path)->required();

    std::string pre_out;
    int pre_steps = 1500, pre_batch = 16;
    double pre_lr = 3e-3;
    std::uint64_t pre_seed = 7;
    auto* pc = app.add_subcommand("pretrain-backbone", "Give the LM stand-in a language prior and save it");
    pc->add_option("--out", pre_out)->required();
    pc->add_option("--steps", pre_steps)->check(CLI::PositiveNumber);
    pc->add_option("--batch", pre_batch)->check(CLI::PositiveNumber);
    pc->add_option("--lr", pre_lr);
    pc->add_option("--seed", pre_seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kFatal;
    }

    try {
        if (*bc) return run_build(build);
        if (*sc) return run_split(split_corpus_path, val_frac, split_seed, split_out);
        if (*tc) {
            train.seed_given = train_seed->count() > 0;
            return run_train(train);
        }
        if (*ec) return run_eval(ev);
        if (*ic) return run_inspect(inspect_path);
        if (*pc) return run_pretrain(pre_out, pre_steps, pre_batch, pre_lr, pre_seed);
    } catch (const std::exception& e) {
        std::cerr << "alarm: " << e.what() << '\n';
        return kFatal;
    }
    return kFatal;
}
