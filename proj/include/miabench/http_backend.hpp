#pragma once

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "miabench/backend.hpp"
#include "miabench/errors.hpp"

namespace mia {

// Client for OpenAI-compatible completion servers. Scoring echoes the prompt
// with logprobs and keeps only tokens that lie inside it; generation asks for
// sampled continuations one request per sample so the request body stays
// within the documented fields. Transient failures (connect errors, timeouts,
// 5xx) get one retry after a backoff, then BackendUnavailable. 4xx responses
// and malformed bodies are ProtocolError: retrying cannot fix those.
class HttpOpenAiBackend final : public ScoringBackend {
public:
    HttpOpenAiBackend(std::string endpoint, std::string model_id,
                      std::size_t max_context_tokens = 4096,
                      std::chrono::milliseconds timeout = std::chrono::seconds(30),
                      std::chrono::milliseconds retry_backoff = std::chrono::milliseconds(250))
        : timeout_(timeout), retry_backoff_(retry_backoff) {
        descriptor_.kind = BackendKind::HttpOpenAi;
        descriptor_.model_id = std::move(model_id);
        descriptor_.endpoint = std::move(endpoint);
        descriptor_.max_context_tokens = max_context_tokens;
    }

    const BackendDescriptor& descriptor() const override { return descriptor_; }

    ScoredSequence score(const ScoreRequest& req) override {
        validate(req);
        const std::string full = req.prefix + req.target;
        nlohmann::json body = {{"model", descriptor_.model_id},
                               {"prompt", full},
                               {"max_tokens", 1},
                               {"temperature", 0.0},
                               {"top_p", 1.0},
                               {"logprobs", 0},
                               {"echo", true},
                               {"seed", 0}};
        const nlohmann::json response = post_completions(body);
        const nlohmann::json& lp = first_choice_field(response, "logprobs");
        if (!lp.is_object() || !lp.contains("tokens") || !lp.contains("token_logprobs") ||
            !lp.contains("text_offset")) {
            throw ProtocolError("completions response lacks logprobs.tokens/token_logprobs/text_offset");
        }
        const auto& texts = lp["tokens"];
        const auto& logprobs = lp["token_logprobs"];
        const auto& offsets = lp["text_offset"];
        if (!texts.is_array() || !logprobs.is_array() || !offsets.is_array() ||
            texts.size() != logprobs.size() || texts.size() != offsets.size()) {
            throw ProtocolError("logprobs arrays are misaligned");
        }
        std::vector<RawToken> tokens;
        tokens.reserve(texts.size());
        for (std::size_t i = 0; i < texts.size(); ++i) {
            const std::size_t offset = offsets[i].get<std::size_t>();
            if (offset >= full.size()) {
                break;  // generated continuation, not part of the echoed prompt
            }
            std::optional<double> logprob;
            if (!logprobs[i].is_null()) {
                logprob = logprobs[i].get<double>();
            }
            tokens.push_back(RawToken{texts[i].get<std::string>(), logprob, offset});
        }
        std::vector<TokenScore> scored = extract_target_tokens(tokens, full, req.prefix.size());
        return ScoredSequence::build(full, std::move(scored));
    }

    std::vector<std::string> generate(const GenerateRequest& req) override {
        validate(req);
        std::vector<std::string> outs;
        outs.reserve(req.num_samples);
        for (std::size_t i = 0; i < req.num_samples; ++i) {
            nlohmann::json body = {{"model", descriptor_.model_id},
                                   {"prompt", req.prompt},
                                   {"max_tokens", req.max_new_tokens},
                                   {"temperature", req.temperature},
                                   {"top_p", req.top_p},
                                   {"logprobs", nullptr},
                                   {"echo", false},
                                   {"seed", req.seed + i}};
            const nlohmann::json response = post_completions(body);
            const nlohmann::json& text = first_choice_field(response, "text");
            if (!text.is_string()) {
                throw ProtocolError("completions response lacks choices[0].text");
            }
            outs.push_back(text.get<std::string>());
        }
        return outs;
    }

private:
    static const nlohmann::json& first_choice_field(const nlohmann::json& response,
                                                    const char* field) {
        if (!response.is_object() || !response.contains("choices") ||
            !response["choices"].is_array() || response["choices"].empty()) {
            throw ProtocolError("completions response lacks choices[0]");
        }
        const nlohmann::json& choice = response["choices"][0];
        if (!choice.is_object() || !choice.contains(field)) {
            throw ProtocolError(std::string("completions choice lacks ") + field);
        }
        return choice[field];
    }

    nlohmann::json post_completions(const nlohmann::json& body) {
        const std::string payload = body.dump();
        std::string last_error;
        for (int attempt = 0; attempt < 2; ++attempt) {
            if (attempt > 0) {
                std::this_thread::sleep_for(retry_backoff_);
            }
            // A fresh client per call keeps this safe under the harness's
            // sample-level thread pool.
            httplib::Client client(descriptor_.endpoint);
            client.set_connection_timeout(timeout_);
            client.set_read_timeout(timeout_);
            client.set_write_timeout(timeout_);
            httplib::Headers headers;
            if (const char* key = std::getenv("MIA_API_KEY"); key != nullptr && *key != '\0') {
                headers.emplace("Authorization", std::string("Bearer ") + key);
            }
            httplib::Result res = client.Post("/v1/completions", headers, payload,
                                              "application/json");
            if (!res) {
                last_error = httplib::to_string(res.error());
                continue;
            }
            if (res->status >= 500) {
                last_error = "server returned status " + std::to_string(res->status);
                continue;
            }
            if (res->status >= 400) {
                throw ProtocolError("completions request rejected with status " +
                                    std::to_string(res->status) + ": " + res->body);
            }
            nlohmann::json parsed = nlohmann::json::parse(res->body, nullptr, false);
            if (parsed.is_discarded()) {
                throw ProtocolError("completions response is not valid JSON");
            }
            return parsed;
        }
        throw BackendUnavailable("completions endpoint " + descriptor_.endpoint +
                                 " unreachable after retry: " + last_error);
    }

    BackendDescriptor descriptor_;
    std::chrono::milliseconds timeout_;
    std::chrono::milliseconds retry_backoff_;
};

}  // namespace mia
