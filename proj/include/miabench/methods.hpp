#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "miabench/backend.hpp"
#include "miabench/compress.hpp"
#include "miabench/core.hpp"
#include "miabench/errors.hpp"
#include "miabench/rng.hpp"
#include "miabench/text.hpp"

namespace mia {

// Everything a method needs besides the sample: the (cached) backend, the
// language flag, the run seed, and the fixed shot pools for the prefix
// methods. Pools hold (sample id, text) in seeded-shuffle order so shot
// selection is deterministic and can exclude the scored sample by id.
struct MethodContext {
    ScoringBackend* backend = nullptr;
    bool space_delimited = true;
    std::uint64_t global_seed = 42;
    std::vector<std::pair<std::string, std::string>> member_pool;
    std::vector<std::pair<std::string, std::string>> nonmember_pool;
    std::function<void(const std::string&)> warn;

    ScoredSequence score_text(const std::string& prefix, const std::string& target) const {
        return backend->score(ScoreRequest{prefix, target, backend->request_backend_id()});
    }

    std::vector<std::string> generate(const GenerateRequest& req) const {
        return backend->generate(req);
    }

    void emit_warning(const std::string& msg) const {
        if (warn) warn(msg);
    }
};

inline std::vector<std::pair<std::string, std::string>> build_shot_pool(
    const std::vector<Sample>& samples, Label label, std::uint64_t global_seed) {
    std::vector<std::pair<std::string, std::string>> pool;
    for (const Sample& s : samples) {
        if (s.label == label) {
            pool.emplace_back(s.id, s.text);
        }
    }
    const std::string stream = std::string("shot-pool:") + to_string(label);
    auto rng = make_rng(derive_seed(global_seed, stream, 0));
    seeded_shuffle(pool, rng);
    return pool;
}

// The unit every text-alternation method works in: whitespace-split words,
// or single codepoints for languages written without spaces.
inline std::vector<std::string> split_units(const std::string& text, bool space_delimited) {
    if (space_delimited) {
        return split_words(text);
    }
    std::vector<std::string> units;
    const std::vector<std::size_t> offsets = codepoint_offsets(text);
    units.reserve(offsets.size());
    for (std::size_t i = 0; i < offsets.size(); ++i) {
        const std::size_t end = (i + 1 < offsets.size()) ? offsets[i + 1] : text.size();
        units.push_back(text.substr(offsets[i], end - offsets[i]));
    }
    return units;
}

inline std::string join_units(const std::vector<std::string>& units, bool space_delimited) {
    std::string out;
    for (std::size_t i = 0; i < units.size(); ++i) {
        if (space_delimited && i > 0) out += ' ';
        out += units[i];
    }
    return out;
}

// Clipped unigram recall: how much of the reference multiset the candidate
// covers, each reference occurrence creditable once.
inline double rouge1_recall(const std::vector<std::string>& reference,
                            const std::vector<std::string>& candidate) {
    if (reference.empty()) {
        throw DegenerateSample("rouge1_recall: empty reference");
    }
    std::unordered_map<std::string, std::size_t> budget;
    for (const auto& u : reference) ++budget[u];
    std::size_t matched = 0;
    for (const auto& u : candidate) {
        auto it = budget.find(u);
        if (it != budget.end() && it->second > 0) {
            --it->second;
            ++matched;
        }
    }
    return static_cast<double>(matched) / static_cast<double>(reference.size());
}

class Method {
public:
    Method(std::string type, nlohmann::json params)
        : type_(std::move(type)), params_(std::move(params)) {}
    virtual ~Method() = default;

    const std::string& type() const { return type_; }
    const nlohmann::json& params() const { return params_; }
    std::string fingerprint() const { return params_.dump(); }

    MethodScore run(const Sample& sample, const MethodContext& ctx) const {
        return MethodScore{type_, fingerprint(), sample.id, compute(sample, ctx)};
    }

protected:
    virtual double compute(const Sample& sample, const MethodContext& ctx) const = 0;

private:
    std::string type_;
    nlohmann::json params_;  // effective values, defaults filled in
};

namespace detail {

inline double require_number(const nlohmann::json& params, const char* type, const char* key,
                             double fallback) {
    if (!params.contains(key)) return fallback;
    if (!params[key].is_number()) {
        throw ConfigError(std::string("method ") + type + ": parameter '" + key +
                          "' must be a number");
    }
    return params[key].get<double>();
}

inline std::int64_t require_integer(const nlohmann::json& params, const char* type,
                                    const char* key, std::int64_t fallback) {
    if (!params.contains(key)) return fallback;
    if (!params[key].is_number_integer()) {
        throw ConfigError(std::string("method ") + type + ": parameter '" + key +
                          "' must be an integer");
    }
    return params[key].get<std::int64_t>();
}

inline bool require_bool(const nlohmann::json& params, const char* type, const char* key,
                         bool fallback) {
    if (!params.contains(key)) return fallback;
    if (!params[key].is_boolean()) {
        throw ConfigError(std::string("method ") + type + ": parameter '" + key +
                          "' must be a boolean");
    }
    return params[key].get<bool>();
}

inline void warn_unknown_params(const nlohmann::json& params, const char* type,
                                std::initializer_list<const char*> known,
                                std::vector<std::string>& warnings) {
    if (!params.is_object()) return;
    for (const auto& [key, value] : params.items()) {
        (void)value;
        bool found = false;
        for (const char* k : known) {
            if (key == k) {
                found = true;
                break;
            }
        }
        if (!found) {
            warnings.push_back(std::string("method ") + type + ": ignoring unknown parameter '" +
                               key + "'");
        }
    }
}

// Sorted-ascending logprobs of a scored sequence.
inline std::vector<double> sorted_logprobs(const ScoredSequence& seq) {
    std::vector<double> lps;
    lps.reserve(seq.tokens.size());
    for (const auto& t : seq.tokens) lps.push_back(t.logprob);
    std::stable_sort(lps.begin(), lps.end());
    return lps;
}

inline double mean_range(const std::vector<double>& v, std::size_t begin, std::size_t end) {
    double sum = 0.0;
    for (std::size_t i = begin; i < end; ++i) sum += v[i];
    return sum / static_cast<double>(end - begin);
}

}  // namespace detail

// Mean token log-likelihood of the bare text. Higher means better predicted,
// which for a memorizing model means more likely a training member.
class LossMethod final : public Method {
public:
    explicit LossMethod(nlohmann::json params) : Method("loss", std::move(params)) {}

protected:
    double compute(const Sample& sample, const MethodContext& ctx) const override {
        return ctx.score_text("", sample.text).mean_ll;
    }
};

// Mean log-likelihood divided by the zlib-compressed byte size of the text.
// Both legs shrink on memorized-and-redundant text; the quotient (a negative
// number over a small positive one) orients higher toward members once the
// likelihood effect dominates.
class ZlibMethod final : public Method {
public:
    explicit ZlibMethod(nlohmann::json params) : Method("zlib", std::move(params)) {}

protected:
    double compute(const Sample& sample, const MethodContext& ctx) const override {
        const ScoredSequence seq = ctx.score_text("", sample.text);
        const std::size_t z = zlib_compressed_size(sample.text);
        return seq.mean_ll / static_cast<double>(z);
    }
};

// Likelihood drop when the text is case-folded: memorized casing costs more.
// All-lowercase input maps to itself, so the score is exactly zero there.
class LowercaseMethod final : public Method {
public:
    explicit LowercaseMethod(nlohmann::json params) : Method("lower", std::move(params)) {}

protected:
    double compute(const Sample& sample, const MethodContext& ctx) const override {
        const double original = ctx.score_text("", sample.text).mean_ll;
        const double folded = ctx.score_text("", lowercase_ascii(sample.text)).mean_ll;
        return original - folded;
    }
};

// Mean of the lowest K-fraction of token logprobs, n = max(1, floor(K*T)).
// ratio 1.0 averages every token in original order so it matches loss
// bit for bit.
class MinkMethod final : public Method {
public:
    MinkMethod(nlohmann::json params, double ratio)
        : Method("mink", std::move(params)), ratio_(ratio) {}

protected:
    double compute(const Sample& sample, const MethodContext& ctx) const override {
        const ScoredSequence seq = ctx.score_text("", sample.text);
        const std::size_t t = seq.tokens.size();
        std::size_t n = static_cast<std::size_t>(
            std::floor(ratio_ * static_cast<double>(t)));
        n = std::max<std::size_t>(1, std::min(n, t));
        if (n == t) {
            return seq.mean_ll;
        }
        const std::vector<double> lps = detail::sorted_logprobs(seq);
        return detail::mean_range(lps, 0, n);
    }

private:
    double ratio_;
};

// Polarized-aggregate calibration: compare the tail means of the text's
// logprob distribution against the same statistic averaged over N copies
// that each had one random pair of units swapped.
class PacMethod final : public Method {
public:
    PacMethod(nlohmann::json params, double alpha, std::size_t n_swaps)
        : Method("pac", std::move(params)), alpha_(alpha), n_swaps_(n_swaps) {}

protected:
    double compute(const Sample& sample, const MethodContext& ctx) const override {
        std::vector<std::string> units = split_units(sample.text, ctx.space_delimited);
        if (units.size() < 2) {
            ctx.emit_warning("pac: sample " + sample.id +
                             " has fewer than 2 swappable units, score 0");
            return 0.0;
        }
        const double base = polarized(ctx.score_text("", sample.text));
        const std::string stream = "pac:" + sample.id;
        double perturbed_sum = 0.0;
        for (std::size_t i = 0; i < n_swaps_; ++i) {
            auto rng = make_rng(derive_seed(ctx.global_seed, stream, i));
            const std::size_t a = uniform_below(rng, units.size());
            std::size_t b = uniform_below(rng, units.size() - 1);
            if (b >= a) ++b;
            std::vector<std::string> swapped = units;
            std::swap(swapped[a], swapped[b]);
            const std::string text = join_units(swapped, ctx.space_delimited);
            perturbed_sum += polarized(ctx.score_text("", text));
        }
        return base - perturbed_sum / static_cast<double>(n_swaps_);
    }

private:
    double polarized(const ScoredSequence& seq) const {
        const std::vector<double> lps = detail::sorted_logprobs(seq);
        const std::size_t t = lps.size();
        std::size_t k = static_cast<std::size_t>(
            std::floor(alpha_ * static_cast<double>(t)));
        k = std::max<std::size_t>(1, std::min(k, t));
        return detail::mean_range(lps, 0, k) + detail::mean_range(lps, t - k, t);
    }

    double alpha_;
    std::size_t n_swaps_;
};

namespace detail {

// Shot prefix shared by recall and conrecall: first num_shots pool texts
// whose id differs from the scored sample, each followed by a blank line.
inline std::vector<std::string> select_shots(
    const std::vector<std::pair<std::string, std::string>>& pool, std::size_t num_shots,
    const std::string& exclude_id, const char* type, const char* pool_name) {
    std::vector<std::string> shots;
    shots.reserve(num_shots);
    for (const auto& [id, text] : pool) {
        if (shots.size() == num_shots) break;
        if (id == exclude_id) continue;
        shots.push_back(text);
    }
    if (shots.size() < num_shots) {
        throw ConfigError(std::string("method ") + type + ": " + pool_name + " has only " +
                          std::to_string(shots.size()) + " eligible texts, need " +
                          std::to_string(num_shots));
    }
    return shots;
}

inline std::string join_shots(const std::vector<std::string>& shots) {
    std::string prefix;
    for (const auto& s : shots) {
        prefix += s;
        prefix += "\n\n";
    }
    return prefix;
}

// pass_window: drop the oldest shots until prefix+target fits the backend
// window. Without it an oversized prefix surfaces as ContextOverflow.
inline std::string fit_prefix(std::vector<std::string> shots, const std::string& target,
                              const MethodContext& ctx, bool pass_window) {
    std::string prefix = join_shots(shots);
    if (!pass_window) {
        return prefix;
    }
    const std::size_t window = ctx.backend->descriptor().max_context_tokens;
    while (!shots.empty() && ctx.backend->context_units(prefix + target) > window) {
        shots.erase(shots.begin());
        prefix = join_shots(shots);
    }
    return prefix;
}

}  // namespace detail

// Ratio of conditional to unconditional mean log-likelihood, where the
// condition is a fixed prefix of non-member texts. Members gain less from
// the foreign context; the minus sign orients higher toward members.
class RecallMethod final : public Method {
public:
    RecallMethod(nlohmann::json params, std::size_t num_shots, bool pass_window)
        : Method("recall", std::move(params)), num_shots_(num_shots), pass_window_(pass_window) {}

protected:
    double compute(const Sample& sample, const MethodContext& ctx) const override {
        std::vector<std::string> shots = detail::select_shots(
            ctx.nonmember_pool, num_shots_, sample.id, "recall", "non-member shot pool");
        const std::string prefix = detail::fit_prefix(std::move(shots), sample.text, ctx,
                                                      pass_window_);
        const double unconditional = ctx.score_text("", sample.text).mean_ll;
        const double conditional = ctx.score_text(prefix, sample.text).mean_ll;
        return -(conditional / unconditional);
    }

private:
    std::size_t num_shots_;
    bool pass_window_;
};

// Contrastive variant: non-member prefix against gamma-weighted member
// prefix, normalized by the unconditional likelihood. gamma 0 reduces to
// recall exactly (the member-prefix request is skipped).
class ConRecallMethod final : public Method {
public:
    ConRecallMethod(nlohmann::json params, std::size_t num_shots, double gamma, bool pass_window)
        : Method("conrecall", std::move(params)),
          num_shots_(num_shots),
          gamma_(gamma),
          pass_window_(pass_window) {}

protected:
    double compute(const Sample& sample, const MethodContext& ctx) const override {
        std::vector<std::string> non_member_shots = detail::select_shots(
            ctx.nonmember_pool, num_shots_, sample.id, "conrecall", "non-member shot pool");
        const std::string non_member_prefix = detail::fit_prefix(
            std::move(non_member_shots), sample.text, ctx, pass_window_);
        const double unconditional = ctx.score_text("", sample.text).mean_ll;
        const double conditional_non_member =
            ctx.score_text(non_member_prefix, sample.text).mean_ll;
        if (gamma_ == 0.0) {
            return -(conditional_non_member / unconditional);
        }
        std::vector<std::string> member_shots = detail::select_shots(
            ctx.member_pool, num_shots_, sample.id, "conrecall", "member shot pool");
        const std::string member_prefix = detail::fit_prefix(std::move(member_shots), sample.text,
                                                             ctx, pass_window_);
        const double conditional_member = ctx.score_text(member_prefix, sample.text).mean_ll;
        return -(conditional_non_member - gamma_ * conditional_member) / unconditional;
    }

private:
    std::size_t num_shots_;
    double gamma_;
    bool pass_window_;
};

// Sampling-based attack: generate continuations of the sample's first half
// and measure unigram recall against its real suffix, optionally weighted by
// the suffix's zlib redundancy.
class SamiaMethod final : public Method {
public:
    SamiaMethod(nlohmann::json params, std::size_t num_samples, double prefix_ratio,
                bool zlib_flag, double temperature, double top_p)
        : Method("samia", std::move(params)),
          num_samples_(num_samples),
          prefix_ratio_(prefix_ratio),
          zlib_flag_(zlib_flag),
          temperature_(temperature),
          top_p_(top_p) {}

protected:
    double compute(const Sample& sample, const MethodContext& ctx) const override {
        const std::vector<std::string> units = split_units(sample.text, ctx.space_delimited);
        const std::size_t prefix_count = static_cast<std::size_t>(
            std::floor(prefix_ratio_ * static_cast<double>(units.size())));
        std::vector<std::string> prefix_units(units.begin(), units.begin() + prefix_count);
        std::vector<std::string> suffix_units(units.begin() + prefix_count, units.end());
        if (suffix_units.empty()) {
            throw DegenerateSample("samia: sample " + sample.id + " has an empty suffix");
        }
        GenerateRequest req;
        req.prompt = join_units(prefix_units, ctx.space_delimited);
        req.num_samples = num_samples_;
        req.max_new_tokens = 2 * suffix_units.size();
        req.temperature = temperature_;
        req.top_p = top_p_;
        req.seed = derive_seed(ctx.global_seed, "samia:" + sample.id, 0);
        const std::vector<std::string> generations = ctx.generate(req);
        double recall_sum = 0.0;
        for (const std::string& g : generations) {
            std::vector<std::string> g_units = split_units(g, ctx.space_delimited);
            if (g_units.size() > suffix_units.size()) {
                g_units.resize(suffix_units.size());
            }
            recall_sum += rouge1_recall(suffix_units, g_units);
        }
        double score = recall_sum / static_cast<double>(generations.size());
        if (zlib_flag_) {
            const std::string suffix_text = join_units(suffix_units, ctx.space_delimited);
            score *= static_cast<double>(suffix_text.size()) /
                     static_cast<double>(zlib_compressed_size(suffix_text));
        }
        return score;
    }

private:
    std::size_t num_samples_;
    double prefix_ratio_;
    bool zlib_flag_;
    double temperature_;
    double top_p_;
};

struct MethodSpec {
    std::string type;
    nlohmann::json params = nlohmann::json::object();
};

// Factory table keyed by method type. Builtins register on first access;
// custom methods join via add() and build like the rest.
class MethodRegistry {
public:
    using Factory = std::function<std::unique_ptr<Method>(const nlohmann::json& params,
                                                          std::vector<std::string>& warnings)>;

    static MethodRegistry& instance() {
        static MethodRegistry reg = make_builtin();
        return reg;
    }

    void add(const std::string& type, Factory factory) {
        factories_[type] = std::move(factory);
    }

    bool has(const std::string& type) const { return factories_.count(type) > 0; }

    std::vector<std::string> known() const {
        std::vector<std::string> names;
        names.reserve(factories_.size());
        for (const auto& [name, factory] : factories_) names.push_back(name);
        return names;  // std::map keeps them sorted
    }

    std::unique_ptr<Method> build(const MethodSpec& spec,
                                  std::vector<std::string>& warnings) const {
        auto it = factories_.find(spec.type);
        if (it == factories_.end()) {
            std::string msg = "unknown method type '" + spec.type + "' (known:";
            for (const auto& name : known()) msg += " " + name;
            msg += ")";
            throw ConfigError(msg);
        }
        if (!spec.params.is_object() && !spec.params.is_null()) {
            throw ConfigError("method " + spec.type + ": params must be a mapping");
        }
        const nlohmann::json params =
            spec.params.is_object() ? spec.params : nlohmann::json::object();
        return it->second(params, warnings);
    }

    std::vector<std::unique_ptr<Method>> build_all(const std::vector<MethodSpec>& specs,
                                                   std::vector<std::string>& warnings) const {
        std::vector<std::unique_ptr<Method>> methods;
        methods.reserve(specs.size());
        for (const MethodSpec& spec : specs) {
            methods.push_back(build(spec, warnings));
        }
        return methods;
    }

private:
    static MethodRegistry make_builtin() {
        MethodRegistry reg;
        reg.add("loss", [](const nlohmann::json& p, std::vector<std::string>& w) {
            detail::warn_unknown_params(p, "loss", {}, w);
            return std::make_unique<LossMethod>(nlohmann::json::object());
        });
        reg.add("zlib", [](const nlohmann::json& p, std::vector<std::string>& w) {
            detail::warn_unknown_params(p, "zlib", {}, w);
            return std::make_unique<ZlibMethod>(nlohmann::json::object());
        });
        reg.add("lower", [](const nlohmann::json& p, std::vector<std::string>& w) {
            detail::warn_unknown_params(p, "lower", {}, w);
            return std::make_unique<LowercaseMethod>(nlohmann::json::object());
        });
        reg.add("mink", [](const nlohmann::json& p, std::vector<std::string>& w) {
            detail::warn_unknown_params(p, "mink", {"ratio"}, w);
            const double ratio = detail::require_number(p, "mink", "ratio", 0.1);
            if (!(ratio > 0.0 && ratio <= 1.0)) {
                throw ConfigError("method mink: ratio must be in (0, 1]");
            }
            return std::make_unique<MinkMethod>(nlohmann::json{{"ratio", ratio}}, ratio);
        });
        reg.add("pac", [](const nlohmann::json& p, std::vector<std::string>& w) {
            detail::warn_unknown_params(p, "pac", {"alpha", "N"}, w);
            const double alpha = detail::require_number(p, "pac", "alpha", 0.3);
            if (!(alpha > 0.0 && alpha <= 0.5)) {
                throw ConfigError("method pac: alpha must be in (0, 0.5]");
            }
            const std::int64_t n = detail::require_integer(p, "pac", "N", 5);
            if (n < 1) {
                throw ConfigError("method pac: N must be >= 1");
            }
            return std::make_unique<PacMethod>(nlohmann::json{{"N", n}, {"alpha", alpha}}, alpha,
                                               static_cast<std::size_t>(n));
        });
        reg.add("recall", [](const nlohmann::json& p, std::vector<std::string>& w) {
            detail::warn_unknown_params(p, "recall", {"num_shots", "pass_window"}, w);
            const std::int64_t shots = detail::require_integer(p, "recall", "num_shots", 3);
            if (shots < 0) {
                throw ConfigError("method recall: num_shots must be >= 0");
            }
            const bool pass_window = detail::require_bool(p, "recall", "pass_window", false);
            return std::make_unique<RecallMethod>(
                nlohmann::json{{"num_shots", shots}, {"pass_window", pass_window}},
                static_cast<std::size_t>(shots), pass_window);
        });
        reg.add("conrecall", [](const nlohmann::json& p, std::vector<std::string>& w) {
            detail::warn_unknown_params(p, "conrecall", {"num_shots", "pass_window", "gamma"}, w);
            const std::int64_t shots = detail::require_integer(p, "conrecall", "num_shots", 3);
            if (shots < 0) {
                throw ConfigError("method conrecall: num_shots must be >= 0");
            }
            const double gamma = detail::require_number(p, "conrecall", "gamma", 0.5);
            if (gamma < 0.0) {
                throw ConfigError("method conrecall: gamma must be >= 0");
            }
            const bool pass_window = detail::require_bool(p, "conrecall", "pass_window", false);
            return std::make_unique<ConRecallMethod>(
                nlohmann::json{
                    {"gamma", gamma}, {"num_shots", shots}, {"pass_window", pass_window}},
                static_cast<std::size_t>(shots), gamma, pass_window);
        });
        reg.add("samia", [](const nlohmann::json& p, std::vector<std::string>& w) {
            detail::warn_unknown_params(
                p, "samia", {"num_samples", "prefix_ratio", "zlib", "temperature", "top_p"}, w);
            const std::int64_t m = detail::require_integer(p, "samia", "num_samples", 5);
            if (m < 1) {
                throw ConfigError("method samia: num_samples must be >= 1");
            }
            const double prefix_ratio = detail::require_number(p, "samia", "prefix_ratio", 0.5);
            if (!(prefix_ratio > 0.0 && prefix_ratio < 1.0)) {
                throw ConfigError("method samia: prefix_ratio must be in (0, 1)");
            }
            const bool zlib_flag = detail::require_bool(p, "samia", "zlib", true);
            const double temperature = detail::require_number(p, "samia", "temperature", 1.0);
            if (temperature < 0.0) {
                throw ConfigError("method samia: temperature must be >= 0");
            }
            const double top_p = detail::require_number(p, "samia", "top_p", 1.0);
            if (!(top_p > 0.0 && top_p <= 1.0)) {
                throw ConfigError("method samia: top_p must be in (0, 1]");
            }
            return std::make_unique<SamiaMethod>(
                nlohmann::json{{"num_samples", m},
                               {"prefix_ratio", prefix_ratio},
                               {"temperature", temperature},
                               {"top_p", top_p},
                               {"zlib", zlib_flag}},
                static_cast<std::size_t>(m), prefix_ratio, zlib_flag, temperature, top_p);
        });
        return reg;
    }

    std::map<std::string, Factory> factories_;
};

}  // namespace mia
