#pragma once

#include <openssl/evp.h>

#include <string>
#include <string_view>

#include <nlohmann/json.hpp>
#include "miabench/errors.hpp"

namespace mia {

inline std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("sha256: EVP_Digest failed");
    }
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0x0F]);
    }
    return out;
}

// Canonical encoding of a request object: compact JSON with sorted keys
// (nlohmann objects are key-sorted by construction), UTF-8. Both the cache
// and the trace format key requests by this string or its SHA-256.
inline std::string canonical_json(const nlohmann::json& j) {
    return j.dump();
}

inline std::string request_hash(const nlohmann::json& canonical_request) {
    return sha256_hex(canonical_json(canonical_request));
}

}  // namespace mia
