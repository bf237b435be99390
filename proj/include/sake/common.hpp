#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace sake {

inline constexpr int kFormatVersion = 1;

// Error categories; every throw site names its category so callers and
// tests can distinguish failure modes without parsing messages.
enum class ErrKind {
    config,        // invalid parameters or configuration documents
    shape,         // dimension / divisibility mismatches
    generation,    // synthetic generator could not satisfy its constraints
    split,         // trajectory partitioning impossible
    fit,           // degenerate regression problem
    diagnostics,   // rollout evaluation impossible
    selection,     // selector missing required inputs
    io_bad_magic,
    io_bad_version,
    io_truncated,
    io_non_finite,
    io_other,
};

inline const char* err_kind_name(ErrKind k) {
    switch (k) {
        case ErrKind::config: return "config";
        case ErrKind::shape: return "shape";
        case ErrKind::generation: return "generation";
        case ErrKind::split: return "split";
        case ErrKind::fit: return "fit";
        case ErrKind::diagnostics: return "diagnostics";
        case ErrKind::selection: return "selection";
        case ErrKind::io_bad_magic: return "bad magic";
        case ErrKind::io_bad_version: return "version mismatch";
        case ErrKind::io_truncated: return "truncated payload";
        case ErrKind::io_non_finite: return "non-finite values";
        case ErrKind::io_other: return "io";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrKind kind, const std::string& msg)
        : std::runtime_error(std::string(err_kind_name(kind)) + ": " + msg), kind_(kind) {}

    ErrKind kind() const { return kind_; }

private:
    ErrKind kind_;
};

[[noreturn]] inline void fail(ErrKind kind, const std::string& msg) { throw Error(kind, msg); }

inline void require(bool cond, ErrKind kind, const std::string& msg) {
    if (!cond) fail(kind, msg);
}

inline bool is_finite(double x) { return std::isfinite(x); }

}  // namespace sake
