#pragma once

#include <cstdint>
#include <functional>
#include <future>
#include <list>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include "miabench/backend.hpp"
#include "miabench/errors.hpp"

namespace mia {

struct CacheStats {
    std::uint64_t hits = 0;
    std::uint64_t misses = 0;
    std::uint64_t evictions = 0;
    std::size_t capacity = 0;
    std::size_t size = 0;
};

// Cache key for one backend request. Equal requests produce equal keys;
// any difference in prefix, target, sampling params or seed produces a
// different key.
struct CacheKey {
    std::string backend_id;
    std::string request_kind;       // "score" | "generate"
    std::string canonical_request;  // canonical JSON encoding, includes the above

    const std::string& storage_key() const { return canonical_request; }
};

inline CacheKey make_cache_key(const ScoreRequest& req) {
    return CacheKey{req.backend_id, "score", canonical_json(canonical_request(req))};
}

inline CacheKey make_cache_key(const GenerateRequest& req, const std::string& backend_id) {
    return CacheKey{backend_id, "generate", canonical_json(canonical_request(req, backend_id))};
}

// LRU cache with per-key in-flight coalescing: concurrent lookups of the
// same key invoke the compute exactly once and all observe its result.
// Failures are never stored; the next lookup retries. Capacity counts
// entries.
template <typename Value>
class SingleFlightLru {
public:
    explicit SingleFlightLru(std::size_t capacity) : capacity_(capacity) {
        if (capacity_ < 1) {
            throw ConfigError("cache capacity must be >= 1");
        }
    }

    Value get_or_compute(const std::string& key, const std::function<Value()>& compute) {
        std::shared_ptr<Flight> flight;
        {
            std::unique_lock lock(mu_);
            if (auto it = index_.find(key); it != index_.end()) {
                lru_.splice(lru_.begin(), lru_, it->second);
                ++hits_;
                return *it->second->second;
            }
            if (auto it = flights_.find(key); it != flights_.end()) {
                ++hits_;
                auto future = it->second->future;
                lock.unlock();
                return *future.get();  // rethrows the computing caller's failure
            }
            ++misses_;
            flight = std::make_shared<Flight>();
            flights_.emplace(key, flight);
        }

        std::shared_ptr<const Value> result;
        try {
            result = std::make_shared<const Value>(compute());
        } catch (...) {
            {
                std::lock_guard lock(mu_);
                flights_.erase(key);
            }
            flight->promise.set_exception(std::current_exception());
            throw;
        }
        {
            std::lock_guard lock(mu_);
            flights_.erase(key);
            lru_.emplace_front(key, result);
            index_[key] = lru_.begin();
            while (lru_.size() > capacity_) {
                index_.erase(lru_.back().first);
                lru_.pop_back();
                ++evictions_;
            }
        }
        flight->promise.set_value(result);
        return *result;
    }

    CacheStats stats() const {
        std::lock_guard lock(mu_);
        CacheStats s;
        s.hits = hits_;
        s.misses = misses_;
        s.evictions = evictions_;
        s.capacity = capacity_;
        s.size = lru_.size();
        return s;
    }

private:
    struct Flight {
        Flight() : future(promise.get_future().share()) {}
        std::promise<std::shared_ptr<const Value>> promise;
        std::shared_future<std::shared_ptr<const Value>> future;
    };

    using LruList = std::list<std::pair<std::string, std::shared_ptr<const Value>>>;

    mutable std::mutex mu_;
    std::size_t capacity_;
    LruList lru_;  // front = most recently used
    std::unordered_map<std::string, typename LruList::iterator> index_;
    std::unordered_map<std::string, std::shared_ptr<Flight>> flights_;
    std::uint64_t hits_ = 0;
    std::uint64_t misses_ = 0;
    std::uint64_t evictions_ = 0;
};

using BackendResponse = std::variant<ScoredSequence, std::vector<std::string>>;

// Decorator that memoizes backend responses so methods sharing a request
// hit the wrapped backend once.
class CachingBackend final : public ScoringBackend {
public:
    CachingBackend(std::shared_ptr<ScoringBackend> inner, std::size_t capacity)
        : inner_(std::move(inner)), cache_(capacity) {}

    const BackendDescriptor& descriptor() const override { return inner_->descriptor(); }

    std::string request_backend_id() const override { return inner_->request_backend_id(); }

    std::size_t context_units(std::string_view text) const override {
        return inner_->context_units(text);
    }

    ScoredSequence score(const ScoreRequest& req) override {
        const CacheKey key = make_cache_key(req);
        BackendResponse res = cache_.get_or_compute(
            key.storage_key(), [&]() -> BackendResponse { return inner_->score(req); });
        return std::get<ScoredSequence>(std::move(res));
    }

    std::vector<std::string> generate(const GenerateRequest& req) override {
        const CacheKey key = make_cache_key(req, request_backend_id());
        BackendResponse res = cache_.get_or_compute(
            key.storage_key(), [&]() -> BackendResponse { return inner_->generate(req); });
        return std::get<std::vector<std::string>>(std::move(res));
    }

    CacheStats stats() const { return cache_.stats(); }

private:
    std::shared_ptr<ScoringBackend> inner_;
    SingleFlightLru<BackendResponse> cache_;
};

}  // namespace mia
