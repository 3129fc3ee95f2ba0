#pragma once

#include <zlib.h>

#include <string_view>
#include <vector>

#include "miabench/errors.hpp"

namespace mia {

// Byte length of the RFC 1950 zlib stream of `data` at the default
// compression level. Never zero: even empty input has stream headers.
inline std::size_t zlib_compressed_size(std::string_view data) {
    uLongf bound = compressBound(static_cast<uLong>(data.size()));
    std::vector<Bytef> buf(bound);
    const int rc = compress2(buf.data(), &bound,
                             reinterpret_cast<const Bytef*>(data.data()),
                             static_cast<uLong>(data.size()), Z_DEFAULT_COMPRESSION);
    if (rc != Z_OK) {
        throw IoError("zlib compress2 failed with code " + std::to_string(rc));
    }
    return static_cast<std::size_t>(bound);
}

}  // namespace mia
