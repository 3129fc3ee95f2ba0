#pragma once

#include <stdexcept>
#include <string>

namespace mia {

// Base of every error this library throws. Catching mia::Error at the
// harness boundary is enough to handle anything below.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// --- core ---

// Empty token list, non-finite or positive logprob, broken offsets.
class InvalidSequence : public Error {
public:
    using Error::Error;
};

// --- ingest ---

// A configured column is missing from a record.
class SchemaError : public Error {
public:
    using Error::Error;
};

// A row could not be parsed; message carries the row index.
class IngestError : public Error {
public:
    using Error::Error;
};

// A dataset (or score set) lacks one of the two label classes.
class LabelBalanceError : public Error {
public:
    using Error::Error;
};

// Format is recognized but deliberately not handled (parquet, huggingface).
class UnsupportedFormat : public Error {
public:
    using Error::Error;
};

// --- backend ---

// prefix+target does not fit the backend context window.
class ContextOverflow : public Error {
public:
    using Error::Error;
};

// Network/IO failure after retries.
class BackendUnavailable : public Error {
public:
    using Error::Error;
};

// Response arrived but is malformed for the expected wire shape.
class ProtocolError : public Error {
public:
    using Error::Error;
};

// Token spans cannot be made to cover the requested target exactly.
class AlignmentError : public Error {
public:
    using Error::Error;
};

// Reference model fit was given no data.
class TrainError : public Error {
public:
    using Error::Error;
};

// Replay was asked for a request that was never recorded.
class MissingTraceEntry : public Error {
public:
    using Error::Error;
};

// --- methods / harness ---

// Bad config: unknown method type, parameter out of range, missing field.
class ConfigError : public Error {
public:
    using Error::Error;
};

// A sample cannot be scored by this method (e.g. empty suffix for samia).
class DegenerateSample : public Error {
public:
    using Error::Error;
};

// Output location not writable, file write failure.
class IoError : public Error {
public:
    using Error::Error;
};

// Metrics input rejected (NaN scores and the like).
class MetricsError : public Error {
public:
    using Error::Error;
};

}  // namespace mia
