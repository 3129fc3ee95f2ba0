#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <miabench/backend.hpp>
#include <miabench/bigram.hpp>
#include <miabench/cache.hpp>
#include <miabench/http_backend.hpp>
#include <miabench/trace.hpp>

#include "support/stub_server.hpp"
#include "support/temp_dir.hpp"
#include "support/test_backends.hpp"

namespace {

mia::ScoreRequest score_req(const mia::ScoringBackend& b, std::string prefix, std::string target) {
    return mia::ScoreRequest{std::move(prefix), std::move(target), b.request_backend_id()};
}

}  // namespace

TEST_CASE("bigram model probabilities after fitting") {
    const std::vector<std::string> corpus = {"ab"};
    const mia::BigramModel m = mia::BigramModel::fit(corpus, 1.0);

    // alphabet {a, b} plus the end symbol
    CHECK(m.vocab_size() == 3);
    CHECK_THAT(m.prob('a', 'b'), Catch::Matchers::WithinAbs(0.5, 1e-12));     // (1+1)/(1+3)
    CHECK_THAT(m.prob('b', 'a'), Catch::Matchers::WithinAbs(0.25, 1e-12));    // (0+1)/(1+3)
    CHECK_THAT(m.prob('b', std::nullopt), Catch::Matchers::WithinAbs(0.5, 1e-12));
    // unknown context falls back to the uniform smoothing floor
    CHECK_THAT(m.prob('z', 'a'), Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-12));
    CHECK_THAT(m.logprob('a', 'b'), Catch::Matchers::WithinAbs(std::log(0.5), 1e-12));

    // every next-symbol distribution is a distribution
    for (std::optional<char32_t> ctx :
         {std::optional<char32_t>{'a'}, std::optional<char32_t>{'b'},
          std::optional<char32_t>{'z'}, std::optional<char32_t>{}}) {
        double total = 0.0;
        for (double p : m.next_distribution(ctx)) total += p;
        CHECK_THAT(total, Catch::Matchers::WithinAbs(1.0, 1e-9));
    }
}

TEST_CASE("bigram training rejects bad inputs") {
    const std::vector<std::string> empty;
    CHECK_THROWS_AS(mia::BigramModel::fit(empty, 1.0), mia::TrainError);
    const std::vector<std::string> corpus = {"ab"};
    CHECK_THROWS_AS(mia::BigramModel::fit(corpus, 0.0), mia::TrainError);
    CHECK_THROWS_AS(mia::BigramModel({'a'}, -1.0), mia::TrainError);
}

TEST_CASE("bigram backend scoring excludes the context-free first token") {
    const std::vector<std::string> corpus = {"ab"};
    mia::BigramBackend backend(mia::BigramModel::fit(corpus, 1.0), "demo");

    const mia::ScoredSequence bare = backend.score(score_req(backend, "", "ab"));
    REQUIRE(bare.tokens.size() == 1);
    CHECK(bare.tokens[0].text == "b");
    CHECK(bare.tokens[0].char_start == 1);
    CHECK_THAT(bare.tokens[0].logprob, Catch::Matchers::WithinAbs(std::log(0.5), 1e-12));
    CHECK(bare.mean_ll == bare.tokens[0].logprob);

    // with a prefix the same token is conditionally scored, same value here
    const mia::ScoredSequence cond = backend.score(score_req(backend, "a", "b"));
    REQUIRE(cond.tokens.size() == 1);
    CHECK(cond.tokens[0].logprob == bare.tokens[0].logprob);
    CHECK(cond.text == "ab");
}

TEST_CASE("backend request validation") {
    const std::vector<std::string> corpus = {"abcdef"};
    mia::BigramBackend backend(mia::BigramModel::fit(corpus, 1.0), "demo", 4);

    CHECK_THROWS_AS(backend.score(score_req(backend, "", "")), mia::InvalidSequence);
    CHECK_THROWS_AS(backend.score(score_req(backend, "", "abcde")), mia::ContextOverflow);
    CHECK_THROWS_AS(backend.score(score_req(backend, "abc", "de")), mia::ContextOverflow);
    CHECK_NOTHROW(backend.score(score_req(backend, "", "abcd")));

    mia::GenerateRequest bad;
    bad.prompt = "ab";
    bad.num_samples = 0;
    CHECK_THROWS_AS(backend.generate(bad), mia::InvalidSequence);
}

TEST_CASE("bigram generation is seeded and respects temperature zero") {
    const std::vector<std::string> corpus = {"abab", "abba"};
    mia::BigramBackend backend(mia::BigramModel::fit(corpus, 1.0), "demo");

    mia::GenerateRequest req;
    req.prompt = "a";
    req.num_samples = 3;
    req.max_new_tokens = 6;
    req.temperature = 1.0;
    req.seed = 99;
    const auto first = backend.generate(req);
    const auto second = backend.generate(req);
    CHECK(first == second);
    CHECK(first.size() == 3);

    req.temperature = 0.0;  // greedy: every sample takes the argmax path
    const auto greedy = backend.generate(req);
    CHECK(greedy[0] == greedy[1]);
    CHECK(greedy[1] == greedy[2]);

    req.temperature = 1.0;
    req.seed = 100;
    const auto reseeded = backend.generate(req);
    CHECK(reseeded.size() == 3);  // different seed still yields num_samples outputs
}

TEST_CASE("target token extraction") {
    using mia::RawToken;
    const auto lp = [](double v) { return std::optional<double>(v); };

    SECTION("clean boundary split") {
        const std::vector<RawToken> toks = {{"aa", lp(-1.0), 0}, {"bbb", lp(-2.0), 2}};
        const auto out = mia::extract_target_tokens(toks, "aabbb", 2);
        REQUIRE(out.size() == 1);
        CHECK(out[0].text == "bbb");
        CHECK(out[0].logprob == -2.0);
        CHECK(out[0].char_start == 2);
    }

    SECTION("offsets must tile the string") {
        const std::vector<RawToken> gap = {{"ab", lp(-1.0), 0}, {"d", lp(-1.0), 3}};
        CHECK_THROWS_AS(mia::extract_target_tokens(gap, "abcd", 0), mia::ProtocolError);

        const std::vector<RawToken> mismatch = {{"ax", lp(-1.0), 0}, {"cd", lp(-1.0), 2}};
        CHECK_THROWS_AS(mia::extract_target_tokens(mismatch, "abcd", 0), mia::ProtocolError);

        const std::vector<RawToken> incomplete = {{"ab", lp(-1.0), 0}};
        CHECK_THROWS_AS(mia::extract_target_tokens(incomplete, "abcd", 0), mia::ProtocolError);

        const std::vector<RawToken> none;
        CHECK_THROWS_AS(mia::extract_target_tokens(none, "", 0), mia::ProtocolError);
    }

    SECTION("straddling tokenization is an alignment error") {
        // majority of "aab" sits in the prefix, so the target starts at the
        // next token, which does not begin at the boundary
        const std::vector<RawToken> straddle = {{"aab", lp(-1.0), 0}, {"bb", lp(-1.0), 3}};
        CHECK_THROWS_AS(mia::extract_target_tokens(straddle, "aabbb", 2), mia::AlignmentError);

        // 1/1 tie goes to target, but the token starts before the boundary
        const std::vector<RawToken> tie = {{"ab", lp(-1.0), 0}};
        CHECK_THROWS_AS(mia::extract_target_tokens(tie, "ab", 1), mia::AlignmentError);
    }

    SECTION("first token of a context-free request may lack a logprob") {
        const std::vector<RawToken> toks = {{"a", std::nullopt, 0}, {"b", lp(-1.5), 1}};
        const auto out = mia::extract_target_tokens(toks, "ab", 0);
        REQUIRE(out.size() == 1);
        CHECK(out[0].text == "b");

        // a lone unscored token leaves nothing to aggregate
        const std::vector<RawToken> lone = {{"a", std::nullopt, 0}};
        CHECK_THROWS_AS(mia::extract_target_tokens(lone, "a", 0), mia::InvalidSequence);
    }

    SECTION("missing or out-of-range logprobs elsewhere are protocol errors") {
        const std::vector<RawToken> late_null = {{"a", lp(-1.0), 0}, {"b", std::nullopt, 1}};
        CHECK_THROWS_AS(mia::extract_target_tokens(late_null, "ab", 0), mia::ProtocolError);

        const std::vector<RawToken> positive = {{"a", lp(-1.0), 0}, {"b", lp(0.5), 1}};
        CHECK_THROWS_AS(mia::extract_target_tokens(positive, "ab", 0), mia::ProtocolError);

        const std::vector<RawToken> infinite = {
            {"a", lp(-1.0), 0}, {"b", lp(-std::numeric_limits<double>::infinity()), 1}};
        CHECK_THROWS_AS(mia::extract_target_tokens(infinite, "ab", 0), mia::ProtocolError);
    }
}

TEST_CASE("trace record and replay round trip") {
    miatest::TempDir dir("trace");
    const std::string path = dir.file("run.trace");

    const std::vector<std::string> corpus = {"abab", "baba"};
    auto inner = std::make_shared<mia::BigramBackend>(mia::BigramModel::fit(corpus, 1.0), "demo");

    mia::GenerateRequest gen;
    gen.prompt = "ab";
    gen.num_samples = 2;
    gen.max_new_tokens = 4;
    gen.seed = 5;

    mia::ScoredSequence recorded_score;
    std::vector<std::string> recorded_gen;
    {
        mia::RecordingBackend rec(inner, path);
        CHECK(rec.request_backend_id() == inner->request_backend_id());
        recorded_score = rec.score(score_req(rec, "a", "bab"));
        recorded_gen = rec.generate(gen);
    }

    mia::TraceReplayBackend replay(path);
    CHECK(replay.entry_count() == 2);
    CHECK(replay.request_backend_id() == inner->request_backend_id());
    CHECK(replay.descriptor().kind == mia::BackendKind::TraceReplay);
    CHECK(replay.descriptor().model_id == "demo");

    const mia::ScoredSequence replayed = replay.score(score_req(replay, "a", "bab"));
    CHECK(replayed.text == recorded_score.text);
    REQUIRE(replayed.tokens.size() == recorded_score.tokens.size());
    for (std::size_t i = 0; i < replayed.tokens.size(); ++i) {
        CHECK(replayed.tokens[i].text == recorded_score.tokens[i].text);
        CHECK(replayed.tokens[i].logprob == recorded_score.tokens[i].logprob);
        CHECK(replayed.tokens[i].char_start == recorded_score.tokens[i].char_start);
    }
    CHECK(replayed.mean_ll == recorded_score.mean_ll);
    CHECK(replayed.ppl == recorded_score.ppl);

    CHECK(replay.generate(gen) == recorded_gen);

    // a request that never went through the recorder cannot be served
    CHECK_THROWS_AS(replay.score(score_req(replay, "", "zz")), mia::MissingTraceEntry);
    mia::GenerateRequest other = gen;
    other.seed = 6;
    CHECK_THROWS_AS(replay.generate(other), mia::MissingTraceEntry);
}

TEST_CASE("trace file error handling") {
    miatest::TempDir dir("tracebad");
    CHECK_THROWS_AS(mia::TraceReplayBackend(dir.file("absent.trace")), mia::IoError);

    const std::string garbled = dir.file("garbled.trace");
    {
        std::ofstream out(garbled);
        out << R"({"kind":"trace_header","version":1,"backend_id":"x"})" << "\n";
        out << "this is not json\n";
    }
    CHECK_THROWS_AS(mia::TraceReplayBackend(garbled), mia::SchemaError);

    const std::string truncated = dir.file("fields.trace");
    {
        std::ofstream out(truncated);
        out << R"({"request_hash":"aa"})" << "\n";
    }
    CHECK_THROWS_AS(mia::TraceReplayBackend(truncated), mia::SchemaError);
}

TEST_CASE("lru cache counts hits misses and evictions") {
    mia::SingleFlightLru<int> cache(2);
    int computes = 0;
    const auto make = [&computes](int v) {
        return [&computes, v]() {
            ++computes;
            return v;
        };
    };

    CHECK(cache.get_or_compute("a", make(1)) == 1);
    CHECK(cache.get_or_compute("b", make(2)) == 2);
    CHECK(cache.get_or_compute("a", make(99)) == 1);  // hit keeps the old value
    CHECK(computes == 2);

    auto stats = cache.stats();
    CHECK(stats.hits == 1);
    CHECK(stats.misses == 2);
    CHECK(stats.evictions == 0);
    CHECK(stats.size == 2);
    CHECK(stats.capacity == 2);

    // "a" was just used, so inserting "c" evicts "b"
    CHECK(cache.get_or_compute("c", make(3)) == 3);
    CHECK(cache.get_or_compute("a", make(99)) == 1);
    CHECK(cache.get_or_compute("b", make(4)) == 4);  // recomputed after eviction
    CHECK(computes == 4);
    CHECK(cache.stats().evictions == 2);

    CHECK_THROWS_AS(mia::SingleFlightLru<int>(0), mia::ConfigError);
}

TEST_CASE("lru cache capacity one thrashes alternating keys") {
    mia::SingleFlightLru<int> cache(1);
    int computes = 0;
    const auto make = [&computes](int v) {
        return [&computes, v]() {
            ++computes;
            return v;
        };
    };
    CHECK(cache.get_or_compute("a", make(1)) == 1);
    CHECK(cache.get_or_compute("b", make(2)) == 2);
    CHECK(cache.get_or_compute("a", make(3)) == 3);
    CHECK(computes == 3);
    CHECK(cache.stats().evictions == 2);
}

TEST_CASE("cache never stores failures") {
    mia::SingleFlightLru<int> cache(4);
    int calls = 0;
    const auto flaky = [&calls]() -> int {
        ++calls;
        if (calls == 1) {
            throw mia::BackendUnavailable("first call fails");
        }
        return 7;
    };
    CHECK_THROWS_AS(cache.get_or_compute("k", flaky), mia::BackendUnavailable);
    CHECK(cache.get_or_compute("k", flaky) == 7);
    CHECK(calls == 2);
    CHECK(cache.stats().size == 1);
}

TEST_CASE("concurrent lookups of one key compute once") {
    mia::SingleFlightLru<int> cache(4);
    std::atomic<int> computes{0};
    const auto slow = [&computes]() {
        ++computes;
        std::this_thread::sleep_for(std::chrono::milliseconds(30));
        return 5;
    };
    int r1 = 0;
    int r2 = 0;
    std::thread t1([&] { r1 = cache.get_or_compute("k", slow); });
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
    std::thread t2([&] { r2 = cache.get_or_compute("k", slow); });
    t1.join();
    t2.join();
    CHECK(r1 == 5);
    CHECK(r2 == 5);
    CHECK(computes == 1);
    const auto stats = cache.stats();
    CHECK(stats.misses == 1);
    CHECK(stats.hits == 1);  // the joined flight counts as a hit
}

TEST_CASE("caching backend deduplicates identical requests") {
    const std::vector<std::string> corpus = {"abab"};
    auto inner = std::make_shared<mia::BigramBackend>(mia::BigramModel::fit(corpus, 1.0), "demo");
    auto counting = std::make_shared<miatest::CountingBackend>(inner);
    mia::CachingBackend cached(counting, 100);

    const auto req = score_req(cached, "", "abab");
    const auto s1 = cached.score(req);
    const auto s2 = cached.score(req);
    CHECK(counting->score_calls() == 1);
    CHECK(s1.mean_ll == s2.mean_ll);

    cached.score(score_req(cached, "a", "bab"));
    CHECK(counting->score_calls() == 2);

    mia::GenerateRequest gen;
    gen.prompt = "ab";
    gen.num_samples = 2;
    gen.max_new_tokens = 3;
    gen.seed = 1;
    const auto g1 = cached.generate(gen);
    const auto g2 = cached.generate(gen);
    CHECK(counting->generate_calls() == 1);
    CHECK(g1 == g2);

    gen.seed = 2;  // any request field change is a new key
    cached.generate(gen);
    CHECK(counting->generate_calls() == 2);

    const auto stats = cached.stats();
    CHECK(stats.hits == 2);
    CHECK(stats.misses == 4);
}

TEST_CASE("http scoring against a local completions server") {
    miatest::StubServer server;
    mia::HttpOpenAiBackend backend(server.endpoint(), "stub-model", 4096,
                                   std::chrono::seconds(5), std::chrono::milliseconds(10));

    SECTION("prefix and target token selection") {
        const std::string prefix = "ctx ";
        const std::string target = "one two";
        const mia::ScoredSequence seq = backend.score(score_req(backend, prefix, target));

        // expected straight from the stub's tokenizer and logprob hash
        const auto toks = miatest::stub_tokenize(prefix + target);
        REQUIRE(toks.size() == 3);
        const double lp1 = miatest::stub_logprob(toks[1].first, 1);
        const double lp2 = miatest::stub_logprob(toks[2].first, 2);
        REQUIRE(seq.tokens.size() == 2);
        CHECK(seq.tokens[0].logprob == lp1);
        CHECK(seq.tokens[1].logprob == lp2);
        CHECK(seq.mean_ll == (lp1 + lp2) / 2.0);
        CHECK(seq.tokens[0].char_start == 4);
    }

    SECTION("empty prefix drops the null first logprob") {
        const mia::ScoredSequence seq = backend.score(score_req(backend, "", "one two"));
        REQUIRE(seq.tokens.size() == 1);
        CHECK(seq.tokens[0].text == "two");
        CHECK(seq.tokens[0].logprob == miatest::stub_logprob("two", 1));
    }

    SECTION("one retry recovers from a transient 500") {
        server.fail_next(1, 500);
        CHECK_NOTHROW(backend.score(score_req(backend, "", "one two")));
        CHECK(server.requests_seen() == 2);
    }

    SECTION("persistent 5xx exhausts the retry budget") {
        server.fail_next(2, 503);
        CHECK_THROWS_AS(backend.score(score_req(backend, "", "one two")),
                        mia::BackendUnavailable);
        CHECK(server.requests_seen() == 2);
    }

    SECTION("4xx is not retried") {
        server.fail_next(5, 422);
        CHECK_THROWS_AS(backend.score(score_req(backend, "", "one two")), mia::ProtocolError);
        CHECK(server.requests_seen() == 1);
    }

    SECTION("malformed bodies are protocol errors") {
        server.set_mode(miatest::StubServer::Mode::BadJson);
        CHECK_THROWS_AS(backend.score(score_req(backend, "", "one two")), mia::ProtocolError);

        server.set_mode(miatest::StubServer::Mode::MissingLogprobs);
        CHECK_THROWS_AS(backend.score(score_req(backend, "", "one two")), mia::ProtocolError);
    }

    SECTION("api key from the environment becomes a bearer header") {
        ::setenv("MIA_API_KEY", "test-key-123", 1);
        backend.score(score_req(backend, "", "one two"));
        ::unsetenv("MIA_API_KEY");
        CHECK(server.last_auth() == "Bearer test-key-123");
    }

    SECTION("generation issues one request per sample") {
        mia::GenerateRequest req;
        req.prompt = "tell me";
        req.num_samples = 2;
        req.max_new_tokens = 3;
        req.seed = 40;
        const auto outs = backend.generate(req);
        REQUIRE(outs.size() == 2);
        CHECK(server.requests_seen() == 2);
        CHECK(outs[0] == miatest::stub_generation("tell me", 40, 3));
        CHECK(outs[1] == miatest::stub_generation("tell me", 41, 3));
        CHECK(outs == backend.generate(req));  // deterministic per seed
    }
}

TEST_CASE("unreachable endpoint surfaces as backend unavailable") {
    mia::HttpOpenAiBackend backend("http://127.0.0.1:9", "stub-model", 4096,
                                   std::chrono::milliseconds(300),
                                   std::chrono::milliseconds(10));
    CHECK_THROWS_AS(backend.score(mia::ScoreRequest{"", "one two",
                                                    backend.request_backend_id()}),
                    mia::BackendUnavailable);
}
