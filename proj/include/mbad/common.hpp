#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mbad {

// Binary ground-truth / prediction label used throughout the pipeline.
enum class Label : uint8_t { normal, anomalous };

inline const char* to_string(Label l) {
    return l == Label::normal ? "normal" : "anomalous";
}

// Numeric class convention for margin-based learners: normal = +1, anomalous = -1.
inline double label_sign(Label l) { return l == Label::normal ? 1.0 : -1.0; }

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad inputs: unreadable files, malformed configs, schema violations.
// The CLI maps these to exit code 2.
struct ConfigError : Error {
    using Error::Error;
};

// Failures of a well-formed run: degenerate training sets, dimension
// mismatches. The CLI maps these to exit code 3.
struct RuntimeFailure : Error {
    using Error::Error;
};

// capture
struct BadMagic : ConfigError { using ConfigError::ConfigError; };
struct Truncated : ConfigError { using ConfigError::ConfigError; };
struct UnsupportedLinkType : ConfigError { using ConfigError::ConfigError; };

// features
struct EmptyInput : RuntimeFailure { using RuntimeFailure::RuntimeFailure; };
struct UnknownFrameNumber : ConfigError { using ConfigError::ConfigError; };
struct DuplicateLabel : ConfigError { using ConfigError::ConfigError; };
struct MissingLabel : ConfigError { using ConfigError::ConfigError; };
struct TooFewRows : RuntimeFailure { using RuntimeFailure::RuntimeFailure; };
struct CsvFormatError : ConfigError { using ConfigError::ConfigError; };

// learn
struct SingleClassTrainingSet : RuntimeFailure { using RuntimeFailure::RuntimeFailure; };
struct DimensionMismatch : RuntimeFailure { using RuntimeFailure::RuntimeFailure; };
struct UnknownFeature : ConfigError { using ConfigError::ConfigError; };

// eval
struct LengthMismatch : RuntimeFailure { using RuntimeFailure::RuntimeFailure; };
struct EmptyMatrix : RuntimeFailure { using RuntimeFailure::RuntimeFailure; };
struct SchemaMismatch : ConfigError { using ConfigError::ConfigError; };

// synth
struct InvalidWindow : ConfigError { using ConfigError::ConfigError; };

// Hardware (48-bit) and IPv4 address formatting, shared by the feature
// CSV and the dissector.
std::string mac_to_string(uint64_t mac);
uint64_t mac_from_string(const std::string& s);
std::string ipv4_to_string(uint32_t ip);
uint32_t ipv4_from_string(const std::string& s);

}  // namespace mbad
