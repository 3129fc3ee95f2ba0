#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "miabench/errors.hpp"

namespace mia {

enum class Label { NonMember = 0, Member = 1 };

inline const char* to_string(Label l) {
    return l == Label::Member ? "member" : "non_member";
}

// One labeled text instance from a dataset.
struct Sample {
    std::string id;
    std::string text;
    Label label = Label::NonMember;
};

// One token with its conditional log-probability. `char_start` is the byte
// offset of the token into the scored request string (prefix + target).
struct TokenScore {
    std::string text;
    double logprob = 0.0;  // natural log, <= 0, finite
    std::size_t char_start = 0;
};

// Average per-token natural-log conditional probability.
inline double mean_log_likelihood(std::span<const TokenScore> tokens) {
    if (tokens.empty()) {
        throw InvalidSequence("mean_log_likelihood: empty token list");
    }
    double sum = 0.0;
    for (const TokenScore& t : tokens) {
        sum += t.logprob;
    }
    return sum / static_cast<double>(tokens.size());
}

inline double perplexity(std::span<const TokenScore> tokens) {
    return std::exp(-mean_log_likelihood(tokens));
}

// A scored request string together with the per-token scores of its target
// span. Conditioning-context tokens (the prefix, and the first token of a
// context-free request, which has no conditional probability) are excluded
// from `tokens`, so T = tokens.size() is the count actually aggregated.
struct ScoredSequence {
    std::string text;  // full request string the offsets point into
    std::vector<TokenScore> tokens;
    double mean_ll = 0.0;
    double ppl = 1.0;

    // Validates token invariants and computes the aggregates.
    static ScoredSequence build(std::string text, std::vector<TokenScore> tokens) {
        if (tokens.empty()) {
            throw InvalidSequence("ScoredSequence: no scored tokens");
        }
        std::size_t prev_start = 0;
        bool first = true;
        for (const TokenScore& t : tokens) {
            if (!std::isfinite(t.logprob)) {
                throw InvalidSequence("ScoredSequence: non-finite logprob");
            }
            if (t.logprob > 0.0) {
                throw InvalidSequence("ScoredSequence: positive logprob");
            }
            if (!first && t.char_start <= prev_start) {
                throw InvalidSequence("ScoredSequence: char offsets not increasing");
            }
            prev_start = t.char_start;
            first = false;
        }
        ScoredSequence seq;
        seq.text = std::move(text);
        seq.tokens = std::move(tokens);
        seq.mean_ll = mean_log_likelihood(seq.tokens);
        seq.ppl = std::exp(-seq.mean_ll);
        return seq;
    }
};

// A single (method, sample) membership score. Orientation contract: for
// every method, larger score means "more likely member".
struct MethodScore {
    std::string method_id;
    std::string params_fingerprint;
    std::string sample_id;
    double score = 0.0;
};

}  // namespace mia
