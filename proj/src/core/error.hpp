#pragma once

#include <stdexcept>
#include <string>

namespace fasdiff {

// Error categories map 1:1 onto the CLI exit codes and the C API status codes.
enum class ErrorCode {
    invalid_argument = 1,  // bad usage, bad shapes, bad flags
    data = 2,              // missing/corrupt files, checkpoints, datasets
    numeric = 3,           // NaN abort and other numeric failures
    internal = 4,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

inline void check_arg(bool ok, const std::string& msg) {
    if (!ok) throw Error(ErrorCode::invalid_argument, msg);
}

inline void check_data(bool ok, const std::string& msg) {
    if (!ok) throw Error(ErrorCode::data, msg);
}

inline void check_numeric(bool ok, const std::string& msg) {
    if (!ok) throw Error(ErrorCode::numeric, msg);
}

}  // namespace fasdiff
