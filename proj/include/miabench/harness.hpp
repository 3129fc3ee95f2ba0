#pragma once

#include <atomic>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <yaml-cpp/yaml.h>

#include "miabench/backend.hpp"
#include "miabench/bigram.hpp"
#include "miabench/cache.hpp"
#include "miabench/core.hpp"
#include "miabench/errors.hpp"
#include "miabench/http_backend.hpp"
#include "miabench/ingest.hpp"
#include "miabench/methods.hpp"
#include "miabench/metrics.hpp"
#include "miabench/trace.hpp"
#include "miabench/version.hpp"

namespace mia {

struct ModelConfig {
    std::string model_id = "reference-bigram";
    BackendKind backend = BackendKind::ReferenceBigram;
    std::string endpoint;                  // URL for http_openai, file path for trace_replay
    std::size_t max_context_tokens = 1024; // max_seq_len_to_capture
    std::size_t max_num_seqs = 256;        // request fan-out bound
    double smoothing_alpha = 1.0;          // reference bigram only
};

struct RunConfig {
    ModelConfig model;
    DatasetConfig data;
    std::vector<MethodSpec> methods;
    std::string output_dir = "./results";
    std::vector<std::string> warnings;  // collected while parsing
    nlohmann::json raw = nlohmann::json::object();  // provenance copy
};

struct RunOptions {
    std::uint64_t seed = 42;
    std::size_t max_cache_size = 1000;
    bool strict = false;
    std::optional<BackendKind> backend_override;
    std::optional<std::string> record_trace;
};

struct MethodFailure {
    std::string method;  // display name
    std::string sample_id;
    std::string error;
};

// One emitted score line: a sample scored by a method.
struct ScoreRow {
    std::string sample_id;
    std::string method;  // display name
    nlohmann::json params;
    double score = 0.0;
    Label label = Label::NonMember;
};

struct RunResult {
    RunConfig config;
    std::uint64_t seed = 42;
    BackendDescriptor backend;
    std::vector<std::string> method_display;          // config order
    std::map<std::string, nlohmann::json> method_params;
    std::vector<ScoreRow> rows;                       // sample-major
    std::vector<EvalReport> reports;                  // method_id = display name
    std::vector<MethodFailure> failures;
    std::vector<std::string> warnings;
    std::map<std::string, double> method_ms;
    double total_ms = 0.0;
    CacheStats cache;
};

// YAML -> JSON with plain-scalar resolution (bool, integer, float, string),
// so config parsing and the provenance copy share one representation.
inline nlohmann::json yaml_to_json(const YAML::Node& node) {
    switch (node.Type()) {
        case YAML::NodeType::Null:
        case YAML::NodeType::Undefined:
            return nullptr;
        case YAML::NodeType::Scalar: {
            const std::string& s = node.Scalar();
            if (node.Tag() == "!") {
                return s;  // quoted scalars stay strings
            }
            if (s == "true" || s == "True") return true;
            if (s == "false" || s == "False") return false;
            if (s.empty() || s == "~" || s == "null" || s == "Null") return nullptr;
            {
                errno = 0;
                char* end = nullptr;
                const long long v = std::strtoll(s.c_str(), &end, 10);
                if (errno == 0 && end == s.c_str() + s.size()) return v;
            }
            {
                errno = 0;
                char* end = nullptr;
                const double v = std::strtod(s.c_str(), &end);
                if (errno == 0 && end == s.c_str() + s.size()) return v;
            }
            return s;
        }
        case YAML::NodeType::Sequence: {
            nlohmann::json arr = nlohmann::json::array();
            for (const auto& item : node) {
                arr.push_back(yaml_to_json(item));
            }
            return arr;
        }
        case YAML::NodeType::Map: {
            nlohmann::json obj = nlohmann::json::object();
            for (const auto& kv : node) {
                obj[kv.first.as<std::string>()] = yaml_to_json(kv.second);
            }
            return obj;
        }
    }
    return nullptr;
}

namespace detail {

inline void warn_unknown_fields(const nlohmann::json& obj, const std::string& where,
                                std::initializer_list<const char*> known,
                                std::vector<std::string>& warnings) {
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        bool found = false;
        for (const char* k : known) {
            if (key == k) {
                found = true;
                break;
            }
        }
        if (!found) {
            warnings.push_back("config: ignoring unknown field '" + where + key + "'");
        }
    }
}

inline std::string require_string(const nlohmann::json& obj, const std::string& where,
                                  const char* key) {
    if (!obj.contains(key)) {
        throw ConfigError("config: missing required field '" + where + key + "'");
    }
    if (!obj[key].is_string()) {
        throw ConfigError("config: field '" + where + key + "' must be a string");
    }
    return obj[key].get<std::string>();
}

inline std::int64_t positive_integer(const nlohmann::json& value, const std::string& name) {
    if (!value.is_number_integer() || value.get<std::int64_t>() < 1) {
        throw ConfigError("config: field '" + name + "' must be a positive integer");
    }
    return value.get<std::int64_t>();
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& root) {
    if (!root.is_object()) {
        throw ConfigError("config: top level must be a mapping");
    }
    RunConfig cfg;
    cfg.raw = root;
    detail::warn_unknown_fields(
        root, "", {"model", "sampling_parameters", "data", "methods", "output_dir"},
        cfg.warnings);

    if (root.contains("model")) {
        const nlohmann::json& m = root["model"];
        if (!m.is_object()) {
            throw ConfigError("config: model must be a mapping");
        }
        detail::warn_unknown_fields(m, "model.",
                                    {"model_id", "backend", "endpoint", "trust_remote_code",
                                     "max_seq_len_to_capture", "max_num_seqs", "smoothing_alpha"},
                                    cfg.warnings);
        if (m.contains("model_id")) {
            cfg.model.model_id = detail::require_string(m, "model.", "model_id");
        }
        if (m.contains("backend")) {
            cfg.model.backend =
                backend_kind_from_string(detail::require_string(m, "model.", "backend"));
        }
        if (m.contains("endpoint")) {
            cfg.model.endpoint = detail::require_string(m, "model.", "endpoint");
        }
        if (m.contains("trust_remote_code")) {
            cfg.warnings.push_back(
                "config: model.trust_remote_code is accepted and ignored (no remote code here)");
        }
        if (m.contains("max_seq_len_to_capture")) {
            cfg.model.max_context_tokens = static_cast<std::size_t>(
                detail::positive_integer(m["max_seq_len_to_capture"], "model.max_seq_len_to_capture"));
        }
        if (m.contains("max_num_seqs")) {
            cfg.model.max_num_seqs = static_cast<std::size_t>(
                detail::positive_integer(m["max_num_seqs"], "model.max_num_seqs"));
        }
        if (m.contains("smoothing_alpha")) {
            if (!m["smoothing_alpha"].is_number() || m["smoothing_alpha"].get<double>() <= 0.0) {
                throw ConfigError("config: model.smoothing_alpha must be a positive number");
            }
            cfg.model.smoothing_alpha = m["smoothing_alpha"].get<double>();
        }
    }

    if (root.contains("sampling_parameters")) {
        const nlohmann::json& sp = root["sampling_parameters"];
        if (!sp.is_object()) {
            throw ConfigError("config: sampling_parameters must be a mapping");
        }
        // Scoring pins these on the wire (echoed prompt logprobs); the block
        // is accepted for config compatibility.
        detail::warn_unknown_fields(sp, "sampling_parameters.",
                                    {"max_tokens", "prompt_logprobs", "temperature", "top_p"},
                                    cfg.warnings);
    }

    if (!root.contains("data")) {
        throw ConfigError("config: missing required block 'data'");
    }
    {
        const nlohmann::json& d = root["data"];
        if (!d.is_object()) {
            throw ConfigError("config: data must be a mapping");
        }
        detail::warn_unknown_fields(d, "data.",
                                    {"data_path", "format", "text_column", "label_column",
                                     "token_length", "space_delimited_language"},
                                    cfg.warnings);
        cfg.data.data_path = detail::require_string(d, "data.", "data_path");
        cfg.data.format = data_format_from_string(detail::require_string(d, "data.", "format"));
        if (d.contains("text_column")) {
            cfg.data.text_column = detail::require_string(d, "data.", "text_column");
        }
        if (d.contains("label_column")) {
            cfg.data.label_column = detail::require_string(d, "data.", "label_column");
        }
        if (d.contains("token_length")) {
            cfg.data.token_length = static_cast<std::size_t>(
                detail::positive_integer(d["token_length"], "data.token_length"));
        }
        if (d.contains("space_delimited_language")) {
            if (!d["space_delimited_language"].is_boolean()) {
                throw ConfigError("config: data.space_delimited_language must be a boolean");
            }
            cfg.data.space_delimited_language = d["space_delimited_language"].get<bool>();
        }
    }

    if (!root.contains("methods") || !root["methods"].is_array() || root["methods"].empty()) {
        throw ConfigError("config: 'methods' must be a non-empty list");
    }
    for (std::size_t i = 0; i < root["methods"].size(); ++i) {
        const nlohmann::json& entry = root["methods"][i];
        if (!entry.is_object() || !entry.contains("type") || !entry["type"].is_string()) {
            throw ConfigError("config: methods[" + std::to_string(i) +
                              "] must be a mapping with a 'type' string");
        }
        detail::warn_unknown_fields(entry, "methods[" + std::to_string(i) + "].",
                                    {"type", "params"}, cfg.warnings);
        MethodSpec spec;
        spec.type = entry["type"].get<std::string>();
        if (entry.contains("params")) {
            if (!entry["params"].is_object() && !entry["params"].is_null()) {
                throw ConfigError("config: methods[" + std::to_string(i) +
                                  "].params must be a mapping");
            }
            if (entry["params"].is_object()) {
                spec.params = entry["params"];
            }
        }
        cfg.methods.push_back(std::move(spec));
    }

    if (root.contains("output_dir")) {
        cfg.output_dir = detail::require_string(root, "", "output_dir");
    }
    return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
    YAML::Node node;
    try {
        node = YAML::LoadFile(path);
    } catch (const YAML::Exception& e) {
        throw ConfigError("config: cannot parse " + path + ": " + e.what());
    }
    return parse_run_config(yaml_to_json(node));
}

// Duplicate method types get numbered display names (mink_1 .. mink_6) so
// score rows and roc files stay distinguishable.
inline std::vector<std::string> method_display_names(const std::vector<MethodSpec>& specs) {
    std::map<std::string, std::size_t> totals;
    for (const auto& s : specs) ++totals[s.type];
    std::map<std::string, std::size_t> seen;
    std::vector<std::string> names;
    names.reserve(specs.size());
    for (const auto& s : specs) {
        if (totals[s.type] > 1) {
            names.push_back(s.type + "_" + std::to_string(++seen[s.type]));
        } else {
            names.push_back(s.type);
        }
    }
    return names;
}

inline std::shared_ptr<ScoringBackend> build_backend(const RunConfig& config,
                                                     const Dataset& dataset,
                                                     const RunOptions& options) {
    const BackendKind kind = options.backend_override.value_or(config.model.backend);
    switch (kind) {
        case BackendKind::ReferenceBigram: {
            std::vector<std::string> member_texts;
            for (const Sample& s : dataset.samples) {
                if (s.label == Label::Member) {
                    member_texts.push_back(s.text);
                }
            }
            BigramModel model = BigramModel::fit(member_texts, config.model.smoothing_alpha);
            return std::make_shared<BigramBackend>(std::move(model), config.model.model_id,
                                                   config.model.max_context_tokens);
        }
        case BackendKind::HttpOpenAi: {
            if (config.model.endpoint.empty()) {
                throw ConfigError("config: model.endpoint is required for the http_openai backend");
            }
            return std::make_shared<HttpOpenAiBackend>(config.model.endpoint,
                                                       config.model.model_id,
                                                       config.model.max_context_tokens);
        }
        case BackendKind::TraceReplay: {
            if (config.model.endpoint.empty()) {
                throw ConfigError(
                    "config: model.endpoint (trace file path) is required for trace_replay");
            }
            return std::make_shared<TraceReplayBackend>(config.model.endpoint);
        }
    }
    throw ConfigError("config: unhandled backend kind");
}

namespace detail {

inline void probe_output_dir(const std::string& output_dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(output_dir, ec);
    if (ec) {
        throw IoError("output_dir not creatable: " + output_dir + " (" + ec.message() + ")");
    }
    const fs::path probe = fs::path(output_dir) / ".write_probe";
    {
        std::ofstream out(probe, std::ios::binary | std::ios::trunc);
        if (!out || !(out << "ok")) {
            throw IoError("output_dir not writable: " + output_dir);
        }
    }
    fs::remove(probe, ec);
}

inline std::string json_number(double v) {
    // Shortest round-trip formatting, same as the JSON outputs.
    return nlohmann::json(v).dump();
}

}  // namespace detail

inline void emit(const RunResult& result, const std::string& output_dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(output_dir, ec);
    if (ec) {
        throw IoError("output_dir not creatable: " + output_dir + " (" + ec.message() + ")");
    }

    {
        std::ofstream out(fs::path(output_dir) / "scores.jsonl", std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot write scores.jsonl under " + output_dir);
        }
        for (const ScoreRow& row : result.rows) {
            const nlohmann::json rec = {{"sample_id", row.sample_id},
                                        {"method", row.method},
                                        {"params", row.params},
                                        {"score", row.score},
                                        {"label", row.label == Label::Member ? 1 : 0}};
            out << rec.dump() << '\n';
        }
        if (!out) {
            throw IoError("write failed: scores.jsonl");
        }
    }

    {
        nlohmann::json reports = nlohmann::json::array();
        for (const EvalReport& r : result.reports) {
            nlohmann::json params = nlohmann::json::object();
            if (auto it = result.method_params.find(r.method_id);
                it != result.method_params.end()) {
                params = it->second;
            }
            reports.push_back({{"method", r.method_id},
                               {"params", params},
                               {"auroc", r.auroc},
                               {"fpr_at_95_tpr", r.fpr_at_95_tpr},
                               {"tpr_at_5_fpr", r.tpr_at_5_fpr},
                               {"n_members", r.n_members},
                               {"n_nonmembers", r.n_nonmembers}});
        }
        nlohmann::json failures = nlohmann::json::array();
        nlohmann::json failure_counts = nlohmann::json::object();
        for (const MethodFailure& f : result.failures) {
            failures.push_back(
                {{"method", f.method}, {"sample_id", f.sample_id}, {"error", f.error}});
            failure_counts[f.method] = failure_counts.value(f.method, 0) + 1;
        }
        nlohmann::json timing_methods = nlohmann::json::object();
        for (const auto& [name, ms] : result.method_ms) {
            timing_methods[name] = ms;
        }
        const nlohmann::json report = {
            {"version", kVersion},
            {"seed", result.seed},
            {"backend", to_json(result.backend)},
            {"config", result.config.raw},
            {"reports", reports},
            {"timing",
             {{"total_ms", result.total_ms},
              {"methods", timing_methods},
              {"note", "per-method wall clock includes shared cache hits; request dedup makes "
                       "attribution approximate"}}},
            {"cache",
             {{"hits", result.cache.hits},
              {"misses", result.cache.misses},
              {"evictions", result.cache.evictions},
              {"capacity", result.cache.capacity},
              {"size", result.cache.size}}},
            {"warnings", result.warnings},
            {"failures", failures},
            {"failure_counts", failure_counts}};
        std::ofstream out(fs::path(output_dir) / "report.json", std::ios::binary | std::ios::trunc);
        if (!out || !(out << report.dump(2) << '\n')) {
            throw IoError("cannot write report.json under " + output_dir);
        }
    }

    for (const EvalReport& r : result.reports) {
        std::vector<LabeledScore> scores;
        for (const ScoreRow& row : result.rows) {
            if (row.method == r.method_id) {
                scores.emplace_back(row.score, row.label);
            }
        }
        const RocCurve curve = roc_curve(scores);
        std::ofstream out(fs::path(output_dir) / ("roc_" + r.method_id + ".csv"),
                          std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot write roc_" + r.method_id + ".csv under " + output_dir);
        }
        out << "fpr,tpr\n";
        for (const auto& [fpr, tpr] : curve.points) {
            out << detail::json_number(fpr) << ',' << detail::json_number(tpr) << '\n';
        }
        if (!out) {
            throw IoError("write failed: roc_" + r.method_id + ".csv");
        }
    }
}

inline RunResult run(const RunConfig& config, const RunOptions& options) {
    const auto run_start = std::chrono::steady_clock::now();

    RunResult result;
    result.config = config;
    result.seed = options.seed;
    result.warnings = config.warnings;

    detail::probe_output_dir(config.output_dir);

    const Dataset dataset = load_dataset(config.data);

    std::vector<std::string> build_warnings;
    std::vector<std::unique_ptr<Method>> methods =
        MethodRegistry::instance().build_all(config.methods, build_warnings);
    for (auto& w : build_warnings) {
        result.warnings.push_back(std::move(w));
    }
    result.method_display = method_display_names(config.methods);
    for (std::size_t m = 0; m < methods.size(); ++m) {
        result.method_params[result.method_display[m]] = methods[m]->params();
    }

    std::shared_ptr<ScoringBackend> chain = build_backend(config, dataset, options);
    if (options.record_trace) {
        chain = std::make_shared<RecordingBackend>(chain, *options.record_trace);
    }
    auto caching = std::make_shared<CachingBackend>(chain, options.max_cache_size);
    result.backend = caching->descriptor();

    std::mutex warn_mu;
    std::vector<std::string> runtime_warnings;
    MethodContext ctx;
    ctx.backend = caching.get();
    ctx.space_delimited = config.data.space_delimited_language;
    ctx.global_seed = options.seed;
    ctx.member_pool = build_shot_pool(dataset.samples, Label::Member, options.seed);
    ctx.nonmember_pool = build_shot_pool(dataset.samples, Label::NonMember, options.seed);
    ctx.warn = [&warn_mu, &runtime_warnings](const std::string& msg) {
        std::lock_guard lock(warn_mu);
        runtime_warnings.push_back(msg);
    };

    const std::size_t n_samples = dataset.samples.size();
    const std::size_t workers =
        std::max<std::size_t>(1, std::min({config.model.max_num_seqs, n_samples,
                                           static_cast<std::size_t>(64)}));

    struct Slot {
        std::optional<MethodScore> score;
        std::exception_ptr error;
    };

    // method index -> per-sample outcome, for sample-major emission later
    std::vector<std::vector<Slot>> outcomes(methods.size());

    for (std::size_t m = 0; m < methods.size(); ++m) {
        const Method& method = *methods[m];
        const auto method_start = std::chrono::steady_clock::now();
        std::vector<Slot>& slots = outcomes[m];
        slots.resize(n_samples);
        std::atomic<std::size_t> next{0};
        auto worker = [&]() {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n_samples) {
                    return;
                }
                try {
                    MethodScore score = method.run(dataset.samples[i], ctx);
                    if (!std::isfinite(score.score)) {
                        throw DegenerateSample("non-finite score");
                    }
                    slots[i].score = std::move(score);
                } catch (...) {
                    slots[i].error = std::current_exception();
                }
            }
        };
        std::vector<std::thread> threads;
        threads.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            threads.emplace_back(worker);
        }
        for (auto& t : threads) {
            t.join();
        }
        result.method_ms[result.method_display[m]] =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                      method_start)
                .count();

        for (std::size_t i = 0; i < n_samples; ++i) {
            if (!slots[i].error) {
                continue;
            }
            if (options.strict) {
                std::rethrow_exception(slots[i].error);
            }
            std::string message = "unknown error";
            try {
                std::rethrow_exception(slots[i].error);
            } catch (const std::exception& e) {
                message = e.what();
            } catch (...) {
            }
            result.failures.push_back(
                MethodFailure{result.method_display[m], dataset.samples[i].id, message});
        }
    }

    // sample-major score table
    for (std::size_t i = 0; i < n_samples; ++i) {
        for (std::size_t m = 0; m < methods.size(); ++m) {
            const Slot& slot = outcomes[m][i];
            if (!slot.score) {
                continue;
            }
            result.rows.push_back(ScoreRow{dataset.samples[i].id, result.method_display[m],
                                           methods[m]->params(), slot.score->score,
                                           dataset.samples[i].label});
        }
    }

    for (std::size_t m = 0; m < methods.size(); ++m) {
        std::vector<LabeledScore> scores;
        scores.reserve(n_samples);
        for (std::size_t i = 0; i < n_samples; ++i) {
            if (outcomes[m][i].score) {
                scores.emplace_back(outcomes[m][i].score->score, dataset.samples[i].label);
            }
        }
        try {
            result.reports.push_back(evaluate(result.method_display[m],
                                              methods[m]->fingerprint(), scores));
        } catch (const Error& e) {
            result.warnings.push_back("method " + result.method_display[m] +
                                      ": metrics skipped (" + e.what() + ")");
        }
    }

    {
        std::lock_guard lock(warn_mu);
        for (auto& w : runtime_warnings) {
            result.warnings.push_back(std::move(w));
        }
    }
    result.cache = caching->stats();
    result.total_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                                run_start)
                          .count();

    emit(result, config.output_dir);
    return result;
}

inline RunResult run_from_file(const std::string& config_path, const RunOptions& options) {
    return run(load_run_config(config_path), options);
}

}  // namespace mia
