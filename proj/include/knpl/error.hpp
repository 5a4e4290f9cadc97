#pragma once

#include <stdexcept>
#include <string>

namespace knpl {

// Every failure in the library is reported as an Error with a Kind, so
// callers (and tests) can dispatch on the category without string matching.
enum class ErrorKind {
    Shape,            // tensor dimensions do not line up
    Graph,            // node not on tape, non-scalar output, cycle
    NumericDomain,    // NaN/Inf produced or consumed
    Config,           // bad configuration value or hook coordinates
    Capacity,         // requested more than the world can supply
    Template,         // relation has no template bank
    Length,           // sequence exceeds max_seq_len or halts early
    Training,         // divergence during optimization
    FilteredInput,    // instance failed the knows-fact pre-filter
    Identification,   // empty knowledge-neuron set
    EmptySet,         // score requested over an empty neuron set
    Conflict,         // contradictory interventions on one neuron
    UndefinedMetric,  // zero denominator in a ratio
    Baseline,         // non-positive classification baseline
    Sampling,         // more pairs requested than exist
    DegenerateSample, // zero-variance differences in a t-test
    StaleCache,       // cache hash does not match current config
    Io,               // file read/write failure
    Parse,            // malformed file or response
    Network,          // transport failure after retries
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void raise(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

} // namespace knpl
