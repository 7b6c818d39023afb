#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mixseg {

// Bad user input: unknown config keys, invalid hyperparameters, shape
// mismatches caused by configuration. CLI maps this to exit code 1.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Failures at run time: non-finite losses, corrupt files, missing data.
// CLI maps this to exit code 2.
class RuntimeAbort : public std::runtime_error {
public:
    explicit RuntimeAbort(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mixseg
