// miabench command line: run a configured membership-inference evaluation.
// Exit codes: 0 success, 2 configuration or data errors, 3 backend failures
// surfaced in --strict mode, 1 anything else.

#include <cstdio>
#include <string>

#include <CLI/CLI.hpp>

#include <miabench/miabench.hpp>

namespace {

int run_command(const std::string& config_path, const mia::RunOptions& options) {
    try {
        const mia::RunResult result = mia::run_from_file(config_path, options);
        std::printf("wrote %s (%zu methods, %zu score rows, %zu failures)\n",
                    result.config.output_dir.c_str(), result.method_display.size(),
                    result.rows.size(), result.failures.size());
        for (const mia::EvalReport& r : result.reports) {
            std::printf("  %-12s auroc=%.4f fpr@95tpr=%.4f tpr@5fpr=%.4f (n=%zu/%zu)\n",
                        r.method_id.c_str(), r.auroc, r.fpr_at_95_tpr, r.tpr_at_5_fpr,
                        r.n_members, r.n_nonmembers);
        }
        for (const std::string& w : result.warnings) {
            std::fprintf(stderr, "warning: %s\n", w.c_str());
        }
        return 0;
    } catch (const mia::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const mia::SchemaError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const mia::UnsupportedFormat& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const mia::IngestError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const mia::LabelBalanceError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const mia::TrainError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const mia::IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 2;
    } catch (const mia::BackendUnavailable& e) {
        std::fprintf(stderr, "backend error: %s\n", e.what());
        return 3;
    } catch (const mia::ProtocolError& e) {
        std::fprintf(stderr, "backend error: %s\n", e.what());
        return 3;
    } catch (const mia::MissingTraceEntry& e) {
        std::fprintf(stderr, "backend error: %s\n", e.what());
        return 3;
    } catch (const mia::ContextOverflow& e) {
        std::fprintf(stderr, "backend error: %s\n", e.what());
        return 3;
    } catch (const mia::AlignmentError& e) {
        std::fprintf(stderr, "backend error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"membership-inference evaluation bench"};
    app.require_subcommand(1);

    std::string config_path;
    mia::RunOptions options;
    std::string backend_override;
    std::string record_trace;

    CLI::App* run = app.add_subcommand("run", "score a dataset and evaluate the configured methods");
    run->add_option("--config", config_path, "YAML run configuration")->required();
    run->add_option("--seed", options.seed, "global random seed (default 42)");
    run->add_option("--max-cache-size", options.max_cache_size,
                    "response cache capacity in entries (default 1000)");
    run->add_flag("--strict", options.strict, "abort on the first per-sample failure");
    run->add_option("--backend-override", backend_override,
                    "ignore the configured backend kind (http_openai, trace_replay, reference_bigram)");
    run->add_option("--record-trace", record_trace,
                    "record every backend request/response to this JSONL file");

    CLI11_PARSE(app, argc, argv);

    if (!backend_override.empty()) {
        try {
            options.backend_override = mia::backend_kind_from_string(backend_override);
        } catch (const mia::ConfigError& e) {
            std::fprintf(stderr, "config error: %s\n", e.what());
            return 2;
        }
    }
    if (!record_trace.empty()) {
        options.record_trace = record_trace;
    }
    return run_command(config_path, options);
}
