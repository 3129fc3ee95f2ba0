#pragma once

#include <fstream>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "miabench/backend.hpp"
#include "miabench/canonical.hpp"
#include "miabench/core.hpp"
#include "miabench/errors.hpp"

namespace mia {

inline nlohmann::json scored_sequence_to_json(const ScoredSequence& seq) {
    nlohmann::json tokens = nlohmann::json::array();
    for (const auto& t : seq.tokens) {
        tokens.push_back({{"text", t.text}, {"logprob", t.logprob}, {"char_start", t.char_start}});
    }
    return {{"text", seq.text}, {"tokens", std::move(tokens)}};
}

inline ScoredSequence scored_sequence_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("text") || !j.contains("tokens") || !j["tokens"].is_array()) {
        throw SchemaError("scored sequence record must carry text and a tokens array");
    }
    std::vector<TokenScore> tokens;
    tokens.reserve(j["tokens"].size());
    for (const auto& t : j["tokens"]) {
        if (!t.is_object() || !t.contains("text") || !t.contains("logprob") ||
            !t.contains("char_start")) {
            throw SchemaError("token record must carry text, logprob and char_start");
        }
        tokens.push_back(TokenScore{t["text"].get<std::string>(), t["logprob"].get<double>(),
                                    t["char_start"].get<std::size_t>()});
    }
    return ScoredSequence::build(j["text"].get<std::string>(), std::move(tokens));
}

inline constexpr int kTraceVersion = 1;

// Tees every request/response pair through to a JSONL trace file while
// delegating the actual work to the wrapped backend. The first record is a
// header carrying the backend descriptor so replay can present the same
// identity; each following record is {request_hash, kind, request, response}.
class RecordingBackend final : public ScoringBackend {
public:
    RecordingBackend(std::shared_ptr<ScoringBackend> inner, const std::string& path)
        : inner_(std::move(inner)), out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) {
            throw IoError("cannot open trace file for writing: " + path);
        }
        nlohmann::json header = {{"kind", "trace_header"},
                                 {"version", kTraceVersion},
                                 {"backend_id", inner_->request_backend_id()},
                                 {"descriptor", to_json(inner_->descriptor())}};
        write_line(header);
    }

    const BackendDescriptor& descriptor() const override { return inner_->descriptor(); }

    std::string request_backend_id() const override { return inner_->request_backend_id(); }

    std::size_t context_units(std::string_view text) const override {
        return inner_->context_units(text);
    }

    ScoredSequence score(const ScoreRequest& req) override {
        ScoredSequence seq = inner_->score(req);
        nlohmann::json request = canonical_request(req);
        record(request, "score", scored_sequence_to_json(seq));
        return seq;
    }

    std::vector<std::string> generate(const GenerateRequest& req) override {
        std::vector<std::string> outs = inner_->generate(req);
        nlohmann::json request = canonical_request(req, request_backend_id());
        record(request, "generate", nlohmann::json(outs));
        return outs;
    }

private:
    void record(const nlohmann::json& request, const char* kind, nlohmann::json response) {
        nlohmann::json entry = {{"request_hash", request_hash(request)},
                                {"kind", kind},
                                {"request", request},
                                {"response", std::move(response)}};
        write_line(entry);
    }

    void write_line(const nlohmann::json& j) {
        std::lock_guard lock(mu_);
        out_ << j.dump() << '\n';
        out_.flush();
        if (!out_) {
            throw IoError("trace file write failed");
        }
    }

    std::shared_ptr<ScoringBackend> inner_;
    std::mutex mu_;
    std::ofstream out_;
};

// Serves recorded responses keyed by request hash. Requests never recorded
// raise MissingTraceEntry. Presents the recorded backend id so requests made
// through replay hash identically to the ones made at record time.
class TraceReplayBackend final : public ScoringBackend {
public:
    explicit TraceReplayBackend(const std::string& path) {
        descriptor_.kind = BackendKind::TraceReplay;
        descriptor_.endpoint = path;
        std::ifstream in(path, std::ios::binary);
        if (!in) {
            throw IoError("cannot open trace file: " + path);
        }
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) {
                continue;
            }
            nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
            if (rec.is_discarded() || !rec.is_object()) {
                throw SchemaError("trace line " + std::to_string(line_no) + " is not a JSON object");
            }
            if (rec.value("kind", "") == "trace_header") {
                recorded_backend_id_ = rec.value("backend_id", recorded_backend_id_);
                if (rec.contains("descriptor") && rec["descriptor"].is_object()) {
                    const auto& d = rec["descriptor"];
                    descriptor_.model_id = d.value("model_id", descriptor_.model_id);
                    if (d.contains("max_context_tokens")) {
                        descriptor_.max_context_tokens = d["max_context_tokens"].get<std::size_t>();
                    }
                }
                continue;
            }
            if (!rec.contains("request_hash") || !rec.contains("kind") ||
                !rec.contains("response")) {
                throw SchemaError("trace line " + std::to_string(line_no) +
                                  " lacks request_hash/kind/response");
            }
            Entry entry{rec["kind"].get<std::string>(), rec["response"]};
            entries_[rec["request_hash"].get<std::string>()] = std::move(entry);
        }
    }

    const BackendDescriptor& descriptor() const override { return descriptor_; }

    // Recorded id, not "trace_replay:...": replayed requests must hash the
    // same as they did when recorded.
    std::string request_backend_id() const override {
        return recorded_backend_id_.empty() ? ScoringBackend::request_backend_id()
                                            : recorded_backend_id_;
    }

    ScoredSequence score(const ScoreRequest& req) override {
        validate(req);
        const Entry& entry = lookup(canonical_request(req), "score");
        return scored_sequence_from_json(entry.response);
    }

    std::vector<std::string> generate(const GenerateRequest& req) override {
        validate(req);
        const Entry& entry = lookup(canonical_request(req, request_backend_id()), "generate");
        if (!entry.response.is_array()) {
            throw SchemaError("recorded generate response is not an array");
        }
        return entry.response.get<std::vector<std::string>>();
    }

    std::size_t entry_count() const { return entries_.size(); }

private:
    struct Entry {
        std::string kind;
        nlohmann::json response;
    };

    const Entry& lookup(const nlohmann::json& request, const char* kind) const {
        const std::string hash = request_hash(request);
        auto it = entries_.find(hash);
        if (it == entries_.end() || it->second.kind != kind) {
            throw MissingTraceEntry("no recorded " + std::string(kind) +
                                    " response for request " + hash);
        }
        return it->second;
    }

    BackendDescriptor descriptor_;
    std::string recorded_backend_id_;
    std::unordered_map<std::string, Entry> entries_;
};

}  // namespace mia
