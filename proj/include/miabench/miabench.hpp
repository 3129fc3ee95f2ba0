#pragma once

// Umbrella header: the whole library in one include.

#include "miabench/backend.hpp"
#include "miabench/bigram.hpp"
#include "miabench/cache.hpp"
#include "miabench/canonical.hpp"
#include "miabench/compress.hpp"
#include "miabench/core.hpp"
#include "miabench/errors.hpp"
#include "miabench/harness.hpp"
#include "miabench/http_backend.hpp"
#include "miabench/ingest.hpp"
#include "miabench/methods.hpp"
#include "miabench/metrics.hpp"
#include "miabench/rng.hpp"
#include "miabench/text.hpp"
#include "miabench/trace.hpp"
#include "miabench/version.hpp"
