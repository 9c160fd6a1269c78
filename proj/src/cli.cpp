#include "oema/cli.hpp"

#include <cstdio>
#include <fstream>
#include <memory>

#include "CLI11.hpp"
#include "oema/discriminator.hpp"
#include "oema/predictor.hpp"
#include "oema/self_annotator.hpp"
#include "oema/text.hpp"

namespace oema::cli {

namespace fs = std::filesystem;

namespace {

PromptForge make_forge(const RunConfig& config) {
    PromptForge forge;
    if (!config.snomed_categories.empty())
        forge.set_snomed_categories(config.snomed_categories);
    for (const auto& [kind, path] : config.template_files) forge.load_template_file(kind, path);
    return forge;
}

// Gateway for a role; roles without their own section share the
// annotator's backend (and its cache).
std::unique_ptr<Gateway> make_gateway(const RunConfig& config, const std::string& role) {
    const std::string resolved = config.backends.count(role) ? role : "annotator";
    BackendConfig backend = config.backends.at(resolved);
    if (!backend.cache_dir)
        backend.cache_dir = config.output_dir / "cache" / resolved;
    return std::make_unique<Gateway>(backend);
}

void ensure_layout(const RunConfig& config) {
    for (const char* sub : {"corpus", "index", "traces", "reports"})
        fs::create_directories(config.output_dir / sub);
}

Corpus build_or_load_self_annotated(const RunConfig& config, const PromptForge& forge) {
    const fs::path path = config.output_dir / "corpus" / "self_annotated.jsonl";
    if (fs::exists(path)) return load_corpus(path, config.dataset.label_set);

    const Corpus pool = load_corpus(config.dataset.train, config.dataset.label_set);
    auto gateway = make_gateway(config, "annotator");
    RunLog log(config.output_dir / "traces" / "annotate_log.jsonl");
    const Corpus annotated = build_self_annotated_corpus(pool, config.dataset.label_set,
                                                         config.annotator, *gateway, forge, &log);
    save_corpus(annotated, path);
    return annotated;
}

VectorIndex build_or_load_index(const RunConfig& config, const Corpus& corpus) {
    const fs::path path = config.output_dir / "index" / "embeddings.jsonl";
    if (fs::exists(path)) {
        VectorIndex index = load_index(path);
        if (index.entries.size() == corpus.examples.size()) {
            bool aligned = true;
            for (std::size_t i = 0; i < index.entries.size(); ++i)
                if (index.entries[i].sentence_id != corpus.examples[i].sentence.id) {
                    aligned = false;
                    break;
                }
            if (aligned) return index;
        }
        std::fprintf(stderr, "warning: stale index at %s, rebuilding\n", path.string().c_str());
    }
    auto gateway = make_gateway(config, "embedder");
    VectorIndex index = build_index(corpus, *gateway, config.discriminator.embed_model);
    save_index(index, path);
    return index;
}

}  // namespace

void cmd_annotate(const RunConfig& config) {
    config.validate();
    ensure_layout(config);
    const PromptForge forge = make_forge(config);

    const fs::path path = config.output_dir / "corpus" / "self_annotated.jsonl";
    const Corpus pool = load_corpus(config.dataset.train, config.dataset.label_set);
    auto gateway = make_gateway(config, "annotator");
    RunLog log(config.output_dir / "traces" / "annotate_log.jsonl");
    const Corpus annotated = build_self_annotated_corpus(pool, config.dataset.label_set,
                                                         config.annotator, *gateway, forge, &log);
    save_corpus(annotated, path);
    std::printf("annotated %zu sentences -> %s\n", annotated.examples.size(),
                path.string().c_str());
}

void cmd_predict(const RunConfig& config) {
    config.validate();
    ensure_layout(config);
    const PromptForge forge = make_forge(config);

    const Corpus test = load_corpus(config.dataset.test, config.dataset.label_set);

    Corpus self_annotated;
    VectorIndex index;
    const bool need_examples = config.predictor.flags.include_examples;
    if (need_examples) {
        self_annotated = build_or_load_self_annotated(config, forge);
        if (self_annotated.examples.empty())
            throw CorpusError("self-annotated corpus is empty; cannot select examples");
        index = build_or_load_index(config, self_annotated);
    }

    auto chat_gateway = make_gateway(config, "discriminator");
    auto embed_gateway = make_gateway(config, "embedder");
    auto predict_gateway = make_gateway(config, "predictor");

    RunLog trace(config.output_dir / "traces" / "predict_trace.jsonl");

    Corpus predictions;
    predictions.name = test.name;
    predictions.label_set = config.dataset.label_set;
    predictions.examples.reserve(test.examples.size());

    for (const auto& gold_ex : test.examples) {
        const Sentence& target = gold_ex.sentence;
        std::vector<AnnotatedExample> examples;
        if (need_examples) {
            const DiscriminationResult result =
                discriminate(target, self_annotated, index, config.discriminator, *chat_gateway,
                             *embed_gateway, forge, &trace);
            examples = result.selected;
        }
        PredictionTrace ptrace;
        const AnnotatedExample pred = predict(target, examples, config.dataset.label_set,
                                              config.predictor, *predict_gateway, forge, &trace,
                                              &ptrace);
        predictions.examples.push_back(pred);
    }

    const fs::path path = config.output_dir / "corpus" / "predictions.jsonl";
    save_corpus(predictions, path);
    std::printf("predicted %zu sentences -> %s\n", predictions.examples.size(),
                path.string().c_str());
}

namespace {

EvalReport evaluate_and_write(const RunConfig& config, const Corpus& gold, const Corpus& pred,
                              MatchRegime regime) {
    const EvalReport report = evaluate(gold, pred, regime);
    const fs::path reports = config.output_dir / "reports";
    fs::create_directories(reports);
    const std::string stem = std::string("eval_") + regime_name(regime);
    {
        std::ofstream out(reports / (stem + ".json"), std::ios::binary | std::ios::trunc);
        out << report.to_json().dump(2) << '\n';
    }
    {
        std::ofstream out(reports / (stem + ".txt"), std::ios::binary | std::ios::trunc);
        out << report.to_text();
    }
    std::printf("%s micro P=%.4f R=%.4f F1=%.4f\n", regime_name(regime), report.micro.precision,
                report.micro.recall, report.micro.f1);
    return report;
}

}  // namespace

void cmd_evaluate(const RunConfig& config, const fs::path& gold_path, const fs::path& pred_path,
                  const std::string& regime) {
    ensure_layout(config);
    const Corpus gold = load_corpus(gold_path, config.dataset.label_set);
    const Corpus pred = load_corpus(pred_path, config.dataset.label_set);
    if (regime == "exact" || regime == "both")
        evaluate_and_write(config, gold, pred, MatchRegime::exact);
    if (regime == "relaxed" || regime == "both")
        evaluate_and_write(config, gold, pred, MatchRegime::relaxed);
    if (regime != "exact" && regime != "relaxed" && regime != "both")
        throw ConfigError("unknown regime '" + regime + "' (use exact, relaxed or both)");
}

std::vector<SweepRow> cmd_sweep(const RunConfig& config, const std::vector<int>& k_grid,
                                const std::vector<int>& K_grid) {
    config.validate();
    ensure_layout(config);

    // The self-annotated corpus and its index do not depend on (K, k);
    // build them once and let every cell start from a copy.
    if (config.predictor.flags.include_examples) {
        const PromptForge forge = make_forge(config);
        const Corpus self_annotated = build_or_load_self_annotated(config, forge);
        build_or_load_index(config, self_annotated);
    }

    std::vector<std::pair<int, int>> cells;
    for (int k : k_grid) cells.emplace_back(config.discriminator.K, k);
    for (int K : K_grid) cells.emplace_back(K, config.discriminator.k);

    std::vector<SweepRow> rows;
    for (const auto& [K, k] : cells) {
        if (k > K || k < 1 || K < 1) {
            std::fprintf(stderr, "warning: skipping invalid sweep cell K=%d k=%d\n", K, k);
            continue;
        }
        RunConfig cell = config;
        cell.discriminator.K = K;
        cell.discriminator.k = k;
        cell.output_dir = config.output_dir / "sweep" /
                          ("K" + std::to_string(K) + "_k" + std::to_string(k));
        ensure_layout(cell);

        // Reuse the root self-annotation and index when they exist: the
        // corpus does not depend on (K, k).
        for (const auto& [sub, file] :
             std::vector<std::pair<std::string, std::string>>{
                 {"corpus", "self_annotated.jsonl"}, {"index", "embeddings.jsonl"}}) {
            const fs::path src = config.output_dir / sub / file;
            const fs::path dst = cell.output_dir / sub / file;
            if (fs::exists(src) && !fs::exists(dst)) fs::copy_file(src, dst);
        }

        cmd_predict(cell);
        const Corpus gold = load_corpus(cell.dataset.gold, cell.dataset.label_set);
        const Corpus pred =
            load_corpus(cell.output_dir / "corpus" / "predictions.jsonl", cell.dataset.label_set);
        SweepRow row;
        row.K = K;
        row.k = k;
        row.exact_f1 = evaluate_and_write(cell, gold, pred, MatchRegime::exact).micro.f1;
        row.relaxed_f1 = evaluate_and_write(cell, gold, pred, MatchRegime::relaxed).micro.f1;
        rows.push_back(row);
    }

    const fs::path csv_path = config.output_dir / "reports" / "sweep.csv";
    std::ofstream csv(csv_path, std::ios::binary | std::ios::trunc);
    csv << "K,k,exact_f1,relaxed_f1\n";
    char buf[96];
    for (const auto& row : rows) {
        std::snprintf(buf, sizeof(buf), "%d,%d,%.4f,%.4f\n", row.K, row.k, row.exact_f1,
                      row.relaxed_f1);
        csv << buf;
    }
    std::printf("sweep wrote %zu rows -> %s\n", rows.size(), csv_path.string().c_str());
    return rows;
}

namespace {

std::vector<int> parse_grid(const std::string& csv) {
    std::vector<int> out;
    for (const auto& part : text::split(csv, ',')) {
        const std::string token = text::trim(part);
        if (token.empty()) continue;
        out.push_back(std::stoi(token));
    }
    return out;
}

}  // namespace

int run_main(int argc, char** argv) {
    CLI::App app{"OEMA: ontology-enhanced multi-agent zero-shot clinical NER"};
    app.require_subcommand(1);

    std::string config_path;
    std::string output_override;
    std::string regime = "both";
    std::string gold_override;
    std::string pred_override;
    std::string k_grid_csv = "1,2,3,4,5";
    std::string K_grid_csv = "6,8,10,12,15";
    std::vector<std::string> backend_overrides;
    int K_override = -1;
    int k_override = -1;
    bool no_type_descriptions = false;
    bool no_examples = false;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "run configuration (TOML)")->required();
        cmd->add_option("--output", output_override, "override output directory");
        cmd->add_option("--backend", backend_overrides,
                        "override a backend kind, role=scripted|http (repeatable)");
    };

    auto* annotate = app.add_subcommand("annotate", "build the self-annotated corpus");
    add_common(annotate);

    auto* predict = app.add_subcommand("predict", "select examples and predict the test set");
    add_common(predict);
    predict->add_option("--K", K_override, "candidate pool size");
    predict->add_option("--k", k_override, "examples kept after scoring");
    predict->add_flag("--no-type-descriptions", no_type_descriptions,
                      "drop the entity type description block");
    predict->add_flag("--no-examples", no_examples, "drop the few-shot example block");

    auto* evaluate_cmd = app.add_subcommand("evaluate", "score predictions against gold");
    add_common(evaluate_cmd);
    evaluate_cmd->add_option("--gold", gold_override, "gold corpus (default: dataset.gold)");
    evaluate_cmd->add_option("--pred", pred_override,
                             "predictions corpus (default: <output>/corpus/predictions.jsonl)");
    evaluate_cmd->add_option("--regime", regime, "exact | relaxed | both");

    auto* sweep = app.add_subcommand("sweep", "run the (K, k) hyperparameter grid");
    add_common(sweep);
    sweep->add_option("--k-grid", k_grid_csv, "comma list of k values (with the fixed K)");
    sweep->add_option("--K-grid", K_grid_csv, "comma list of K values (with the fixed k)");
    sweep->add_option("--K", K_override, "fixed K for the k sweep");
    sweep->add_option("--k", k_override, "fixed k for the K sweep");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        RunConfig config = load_run_config(config_path);
        if (!output_override.empty()) config.output_dir = output_override;
        for (const auto& override_spec : backend_overrides) {
            const std::size_t eq = override_spec.find('=');
            if (eq == std::string::npos)
                throw ConfigError("--backend expects role=kind, got '" + override_spec + "'");
            const std::string role = override_spec.substr(0, eq);
            const std::string kind = override_spec.substr(eq + 1);
            BackendConfig& backend =
                config.backends.count(role) ? config.backends[role]
                                            : (config.backends[role] = config.backend_for(role));
            if (kind == "scripted") backend.kind = BackendKind::scripted;
            else if (kind == "http") backend.kind = BackendKind::http_openai_compatible;
            else throw ConfigError("unknown backend kind '" + kind + "'");
            backend.validate();
        }
        if (K_override > 0) config.discriminator.K = K_override;
        if (k_override > 0) config.discriminator.k = k_override;
        if (no_type_descriptions) config.predictor.flags.include_type_descriptions = false;
        if (no_examples) config.predictor.flags.include_examples = false;

        if (annotate->parsed()) {
            cmd_annotate(config);
        } else if (predict->parsed()) {
            cmd_predict(config);
        } else if (evaluate_cmd->parsed()) {
            const fs::path gold =
                gold_override.empty() ? config.dataset.gold : fs::path(gold_override);
            const fs::path pred = pred_override.empty()
                                      ? config.output_dir / "corpus" / "predictions.jsonl"
                                      : fs::path(pred_override);
            cmd_evaluate(config, gold, pred, regime);
        } else if (sweep->parsed()) {
            cmd_sweep(config, parse_grid(k_grid_csv), parse_grid(K_grid_csv));
        }
        return 0;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const CorpusError& e) {
        std::fprintf(stderr, "corpus error: %s\n", e.what());
        return 3;
    } catch (const GatewayError& e) {
        std::fprintf(stderr, "gateway error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

}  // namespace oema::cli
