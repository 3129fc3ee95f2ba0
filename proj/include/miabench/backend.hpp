#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>
#include "miabench/canonical.hpp"
#include "miabench/core.hpp"
#include "miabench/errors.hpp"
#include "miabench/text.hpp"

namespace mia {

// Request for per-token conditional logprobs. prefix+target is scored as one
// string; only target-span tokens come back.
struct ScoreRequest {
    std::string prefix;
    std::string target;
    std::string backend_id;
};

// Request for sampled continuations.
struct GenerateRequest {
    std::string prompt;
    std::size_t num_samples = 1;
    std::size_t max_new_tokens = 16;
    double temperature = 1.0;
    double top_p = 1.0;
    std::uint64_t seed = 0;
};

enum class BackendKind { HttpOpenAi, TraceReplay, ReferenceBigram };

inline const char* to_string(BackendKind k) {
    switch (k) {
        case BackendKind::HttpOpenAi: return "http_openai";
        case BackendKind::TraceReplay: return "trace_replay";
        case BackendKind::ReferenceBigram: return "reference_bigram";
    }
    return "unknown";
}

inline BackendKind backend_kind_from_string(std::string_view s) {
    if (s == "http_openai") return BackendKind::HttpOpenAi;
    if (s == "trace_replay") return BackendKind::TraceReplay;
    if (s == "reference_bigram") return BackendKind::ReferenceBigram;
    throw ConfigError("unknown backend kind '" + std::string(s) +
                      "' (known: http_openai, trace_replay, reference_bigram)");
}

struct BackendDescriptor {
    BackendKind kind = BackendKind::ReferenceBigram;
    std::string model_id;
    std::string endpoint;  // URL for http, file path for traces, empty for builtin
    std::size_t max_context_tokens = 1024;
};

inline nlohmann::json to_json(const BackendDescriptor& d) {
    return {{"kind", to_string(d.kind)},
            {"model_id", d.model_id},
            {"endpoint", d.endpoint},
            {"max_context_tokens", d.max_context_tokens}};
}

// Canonical request encodings (sorted keys come from nlohmann's object
// ordering). These strings key both the cache and trace files.
inline nlohmann::json canonical_request(const ScoreRequest& req) {
    return {{"backend_id", req.backend_id},
            {"kind", "score"},
            {"prefix", req.prefix},
            {"target", req.target}};
}

inline nlohmann::json canonical_request(const GenerateRequest& req, const std::string& backend_id) {
    return {{"backend_id", backend_id},
            {"kind", "generate"},
            {"max_new_tokens", req.max_new_tokens},
            {"num_samples", req.num_samples},
            {"prompt", req.prompt},
            {"seed", req.seed},
            {"temperature", req.temperature},
            {"top_p", req.top_p}};
}

// Provider of conditional logprobs and sampled continuations. Implementations
// must tolerate concurrent score/generate calls.
class ScoringBackend {
public:
    virtual ~ScoringBackend() = default;

    virtual const BackendDescriptor& descriptor() const = 0;

    // Stable id stamped into requests; part of every cache key and trace hash.
    virtual std::string request_backend_id() const {
        const BackendDescriptor& d = descriptor();
        return std::string(to_string(d.kind)) + ":" + d.model_id;
    }

    // Upper-bound token-count estimate for window checks. Exact codepoints
    // for the reference model (tokens are single characters) and a
    // conservative bound for subword tokenizers.
    virtual std::size_t context_units(std::string_view text) const {
        return codepoint_count(text);
    }

    virtual ScoredSequence score(const ScoreRequest& req) = 0;
    virtual std::vector<std::string> generate(const GenerateRequest& req) = 0;

protected:
    void validate(const ScoreRequest& req) const {
        if (req.target.empty()) {
            throw InvalidSequence("score: empty target");
        }
        const BackendDescriptor& d = descriptor();
        if (context_units(req.prefix + req.target) > d.max_context_tokens) {
            throw ContextOverflow("score: prefix+target exceeds max_context_tokens=" +
                                  std::to_string(d.max_context_tokens));
        }
    }

    void validate(const GenerateRequest& req) const {
        if (req.num_samples < 1) {
            throw InvalidSequence("generate: num_samples must be >= 1");
        }
        const BackendDescriptor& d = descriptor();
        if (context_units(req.prompt) > d.max_context_tokens) {
            throw ContextOverflow("generate: prompt exceeds max_context_tokens=" +
                                  std::to_string(d.max_context_tokens));
        }
    }
};

// One raw token as a wire protocol reports it: surface text, byte offset
// into the full request string, logprob absent only for the first token of
// a context-free request.
struct RawToken {
    std::string text;
    std::optional<double> logprob;
    std::size_t offset = 0;
};

// Selects the target-span tokens out of a full-sequence token list.
//
// A token belongs to the target iff the majority of its characters lie at or
// beyond the prefix/target boundary (ties go to target). The selected tokens
// must reproduce the target string exactly; a tokenizer that straddles the
// boundary raises AlignmentError rather than silently covering part of it.
// A missing logprob on the very first token (empty-prefix requests) drops
// that token from the scored list.
inline std::vector<TokenScore> extract_target_tokens(const std::vector<RawToken>& tokens,
                                                     std::string_view full,
                                                     std::size_t prefix_bytes) {
    if (tokens.empty()) {
        throw ProtocolError("token alignment: empty token list");
    }
    // The list must tile the full string with matching text.
    std::size_t cursor = 0;
    for (const RawToken& t : tokens) {
        if (t.offset != cursor) {
            throw ProtocolError("token alignment: offsets do not tile the scored string");
        }
        if (full.compare(cursor, t.text.size(), t.text) != 0) {
            throw ProtocolError("token alignment: token text disagrees with offset");
        }
        cursor += t.text.size();
    }
    if (cursor != full.size()) {
        throw ProtocolError("token alignment: tokens do not cover the scored string");
    }

    const auto in_target = [&](const RawToken& t) {
        const std::size_t start = t.offset;
        const std::size_t end = t.offset + t.text.size();
        if (start >= prefix_bytes) return true;
        if (end <= prefix_bytes) return false;
        const std::size_t split = prefix_bytes - start;
        const std::size_t cp_prefix = codepoint_count(std::string_view(t.text).substr(0, split));
        const std::size_t cp_target = codepoint_count(std::string_view(t.text).substr(split));
        return cp_target >= cp_prefix;
    };

    std::size_t first_target = tokens.size();
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (in_target(tokens[i])) {
            first_target = i;
            break;
        }
    }
    for (std::size_t i = first_target; i < tokens.size(); ++i) {
        if (!in_target(tokens[i])) {
            throw AlignmentError("token alignment: non-contiguous target assignment");
        }
    }
    if (first_target == tokens.size()) {
        throw AlignmentError("token alignment: no tokens assigned to target");
    }
    if (tokens[first_target].offset != prefix_bytes) {
        throw AlignmentError("token alignment: tokenization straddles the prefix/target boundary");
    }

    std::vector<TokenScore> out;
    out.reserve(tokens.size() - first_target);
    for (std::size_t i = first_target; i < tokens.size(); ++i) {
        const RawToken& t = tokens[i];
        if (!t.logprob.has_value()) {
            // Only the first token of the whole request may lack a logprob.
            if (i != 0) {
                throw ProtocolError("token alignment: missing logprob past the first token");
            }
            continue;
        }
        if (!std::isfinite(*t.logprob) || *t.logprob > 0.0) {
            throw ProtocolError("token alignment: logprob out of range");
        }
        out.push_back(TokenScore{t.text, *t.logprob, t.offset});
    }
    if (out.empty()) {
        throw InvalidSequence("token alignment: target has no conditionally scored tokens");
    }
    return out;
}

}  // namespace mia
