#pragma once
#include <stdexcept>
#include <string>

namespace cracknet {

// Error classes map 1:1 onto the CLI exit codes (see exit_code_for()).
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : Error { using Error::Error; };   // bad option/parameter value
struct IoError : Error { using Error::Error; };        // filesystem and codec failures
struct ShapeError : Error { using Error::Error; };     // tensor/image dimension mismatch
struct NumericError : Error { using Error::Error; };   // NaN/Inf or diverging computation
struct DatasetError : Error { using Error::Error; };   // corpus layout/pairing problems
struct StateError : Error { using Error::Error; };     // API called out of order

// Model-file parse failures, distinguished by kind.
struct ModelFormatError : IoError {
    enum class Kind { BadMagic, BadVersion, Truncated, BadChecksum, BadManifest };
    Kind kind;
    ModelFormatError(Kind k, const std::string& msg) : IoError(msg), kind(k) {}
};

enum ExitCode : int {
    kExitOk = 0,
    kExitInternal = 1,
    kExitConfig = 2,
    kExitIo = 3,
    kExitShape = 4,
    kExitNumeric = 5,
    kExitDataset = 6,
};

inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
    if (dynamic_cast<const IoError*>(&e)) return kExitIo;
    if (dynamic_cast<const ShapeError*>(&e)) return kExitShape;
    if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
    if (dynamic_cast<const DatasetError*>(&e)) return kExitDataset;
    return kExitInternal;
}

}  // namespace cracknet
