#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "miabench/backend.hpp"
#include "miabench/errors.hpp"
#include "miabench/rng.hpp"
#include "miabench/text.hpp"

namespace mia {

// Character-level bigram language model with additive (Laplace) smoothing.
// Tokens are single unicode codepoints; the vocabulary is the corpus
// alphabet plus one end symbol. p(c_t | c_{t-1}) = (count + a) /
// (row_total + a * |V|). A begin-of-sequence context row (counting first
// characters) drives generation from an empty prompt; scoring never uses it,
// matching the convention that a context-free first token has no
// conditional probability.
//
// Desk-scale stand-in for an LLM: strings the model was fit on get
// systematically higher likelihoods, so membership is genuinely inducible.
class BigramModel {
public:
    // Uniform model over the given alphabet (all counts zero).
    explicit BigramModel(std::vector<char32_t> alphabet, double alpha = 1.0)
        : alpha_(alpha) {
        if (alpha <= 0.0) {
            throw TrainError("bigram: smoothing alpha must be > 0");
        }
        std::sort(alphabet.begin(), alphabet.end());
        alphabet.erase(std::unique(alphabet.begin(), alphabet.end()), alphabet.end());
        alphabet_ = std::move(alphabet);
        for (std::size_t i = 0; i < alphabet_.size(); ++i) {
            index_[alphabet_[i]] = i;
        }
        counts_.assign(alphabet_.size() + 1,
                       std::vector<double>(alphabet_.size() + 1, 0.0));
        row_totals_.assign(alphabet_.size() + 1, 0.0);
    }

    static BigramModel fit(std::span<const std::string> corpus, double alpha) {
        if (corpus.empty()) {
            throw TrainError("bigram fit: empty corpus");
        }
        std::vector<char32_t> alphabet;
        for (const std::string& s : corpus) {
            for (std::size_t pos = 0; pos < s.size();) {
                alphabet.push_back(utf8_decode(s, pos));
            }
        }
        BigramModel model(std::move(alphabet), alpha);
        for (const std::string& s : corpus) {
            std::optional<char32_t> prev;  // nullopt = begin-of-sequence
            for (std::size_t pos = 0; pos < s.size();) {
                const char32_t cp = utf8_decode(s, pos);
                model.add_count(prev, cp);
                prev = cp;
            }
            model.add_count(prev, std::nullopt);  // -> end symbol
        }
        return model;
    }

    // context: nullopt = begin-of-sequence row. next: nullopt = end symbol.
    // Unknown contexts fall back to a zero-count row (uniform 1/|V|);
    // unknown next characters get the zero-count floor.
    double prob(std::optional<char32_t> context, std::optional<char32_t> next) const {
        const std::size_t v = vocab_size();
        double count = 0.0;
        double row_total = 0.0;
        const std::optional<std::size_t> row = row_index(context);
        if (row.has_value()) {
            row_total = row_totals_[*row];
            const std::optional<std::size_t> col = col_index(next);
            if (col.has_value()) {
                count = counts_[*row][*col];
            }
        }
        return (count + alpha_) / (row_total + alpha_ * static_cast<double>(v));
    }

    double logprob(std::optional<char32_t> context, std::optional<char32_t> next) const {
        return std::log(prob(context, next));
    }

    // Alphabet size + 1 for the end symbol.
    std::size_t vocab_size() const { return alphabet_.size() + 1; }

    const std::vector<char32_t>& alphabet() const { return alphabet_; }

    double alpha() const { return alpha_; }

    // Next-symbol distribution for a context; entry alphabet_.size() is the
    // end symbol. Sums to 1 for every context.
    std::vector<double> next_distribution(std::optional<char32_t> context) const {
        const std::size_t v = vocab_size();
        std::vector<double> dist(v, 0.0);
        for (std::size_t j = 0; j < alphabet_.size(); ++j) {
            dist[j] = prob(context, alphabet_[j]);
        }
        dist[alphabet_.size()] = prob(context, std::nullopt);
        return dist;
    }

private:
    void add_count(std::optional<char32_t> context, std::optional<char32_t> next,
                   double n = 1.0) {
        const std::size_t row = row_index(context).value();
        const std::size_t col = col_index(next).value_or(alphabet_.size());
        counts_[row][col] += n;
        row_totals_[row] += n;
    }

    std::optional<std::size_t> row_index(std::optional<char32_t> context) const {
        if (!context.has_value()) {
            return alphabet_.size();  // begin-of-sequence row
        }
        const auto it = index_.find(*context);
        if (it == index_.end()) {
            return std::nullopt;
        }
        return it->second;
    }

    std::optional<std::size_t> col_index(std::optional<char32_t> next) const {
        if (!next.has_value()) {
            return alphabet_.size();  // end symbol column
        }
        const auto it = index_.find(*next);
        if (it == index_.end()) {
            return std::nullopt;
        }
        return it->second;
    }

    std::vector<char32_t> alphabet_;
    std::map<char32_t, std::size_t> index_;
    std::vector<std::vector<double>> counts_;  // rows: alphabet + BOS; cols: alphabet + end
    std::vector<double> row_totals_;
    double alpha_ = 1.0;
};

// Scoring backend over a fitted BigramModel. Immutable after construction;
// safe for concurrent requests.
class BigramBackend final : public ScoringBackend {
public:
    BigramBackend(BigramModel model, std::string model_id,
                  std::size_t max_context_tokens = 4096)
        : model_(std::move(model)) {
        desc_.kind = BackendKind::ReferenceBigram;
        desc_.model_id = std::move(model_id);
        desc_.endpoint = "";
        desc_.max_context_tokens = max_context_tokens;
    }

    const BackendDescriptor& descriptor() const override { return desc_; }

    const BigramModel& model() const { return model_; }

    ScoredSequence score(const ScoreRequest& req) override {
        validate(req);
        const std::string full = req.prefix + req.target;
        std::vector<RawToken> raw;
        std::optional<char32_t> prev;
        bool first = true;
        for (std::size_t pos = 0; pos < full.size();) {
            const std::size_t offset = pos;
            const char32_t cp = utf8_decode(full, pos);
            RawToken token;
            token.text = full.substr(offset, pos - offset);
            token.offset = offset;
            if (!first) {
                token.logprob = model_.logprob(prev, cp);
            }
            raw.push_back(std::move(token));
            prev = cp;
            first = false;
        }
        auto tokens = extract_target_tokens(raw, full, req.prefix.size());
        return ScoredSequence::build(full, std::move(tokens));
    }

    std::vector<std::string> generate(const GenerateRequest& req) override {
        validate(req);
        std::vector<std::string> out;
        out.reserve(req.num_samples);
        for (std::size_t i = 0; i < req.num_samples; ++i) {
            out.push_back(generate_one(req, i));
        }
        return out;
    }

private:
    std::string generate_one(const GenerateRequest& req, std::size_t sample_index) const {
        std::mt19937_64 rng(derive_seed(req.seed, "bigram-generate", sample_index));
        std::optional<char32_t> context = last_codepoint(req.prompt);
        const std::size_t end_index = model_.alphabet().size();
        std::string out;
        for (std::size_t step = 0; step < req.max_new_tokens; ++step) {
            const std::vector<double> dist = model_.next_distribution(context);
            const std::size_t pick = (req.temperature == 0.0)
                                         ? argmax(dist)
                                         : sample(dist, req.temperature, req.top_p, rng);
            if (pick == end_index) {
                break;
            }
            const char32_t cp = model_.alphabet()[pick];
            utf8_encode(cp, out);
            context = cp;
        }
        return out;
    }

    static std::optional<char32_t> last_codepoint(std::string_view s) {
        std::optional<char32_t> last;
        for (std::size_t pos = 0; pos < s.size();) {
            last = utf8_decode(s, pos);
        }
        return last;
    }

    static std::size_t argmax(const std::vector<double>& dist) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < dist.size(); ++j) {
            if (dist[j] > dist[best]) {
                best = j;
            }
        }
        return best;
    }

    // Temperature reshaping then nucleus (top-p) truncation; the final draw
    // uses a pinned 53-bit uniform so outputs are reproducible everywhere.
    static std::size_t sample(const std::vector<double>& dist, double temperature,
                              double top_p, std::mt19937_64& rng) {
        std::vector<double> weights(dist.size());
        for (std::size_t j = 0; j < dist.size(); ++j) {
            weights[j] = std::pow(dist[j], 1.0 / temperature);
        }
        std::vector<std::size_t> order(dist.size());
        for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return weights[a] > weights[b];
        });
        double total = 0.0;
        for (double w : weights) total += w;

        std::size_t kept = order.size();
        if (top_p < 1.0) {
            double cum = 0.0;
            for (std::size_t j = 0; j < order.size(); ++j) {
                cum += weights[order[j]] / total;
                if (cum >= top_p) {
                    kept = j + 1;
                    break;
                }
            }
        }
        double kept_total = 0.0;
        for (std::size_t j = 0; j < kept; ++j) kept_total += weights[order[j]];

        const double r = static_cast<double>(rng() >> 11) * 0x1.0p-53 * kept_total;
        double cum = 0.0;
        for (std::size_t j = 0; j < kept; ++j) {
            cum += weights[order[j]];
            if (r < cum) {
                return order[j];
            }
        }
        return order[kept - 1];
    }

    BigramModel model_;
    BackendDescriptor desc_;
};

}  // namespace mia
