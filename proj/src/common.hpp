#ifndef DRIVEGEN_COMMON_HPP
#define DRIVEGEN_COMMON_HPP

#include <stdexcept>
#include <string>

namespace dg {

enum class ErrorKind {
    InvalidArgument,  // bad config values, contract violations
    Io,               // missing/corrupt files
    Format,           // version or schema mismatch
    Shape,            // tensor shape inconsistency
    Capacity,         // sequence overflow
    Domain,           // math domain errors (e.g. projection with z <= 0)
    Numeric,          // divergence, non-finite values
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg)
        : std::runtime_error(msg), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
    throw Error(kind, msg);
}

inline void require(bool cond, ErrorKind kind, const std::string& msg) {
    if (!cond) throw Error(kind, msg);
}

}  // namespace dg

#endif
