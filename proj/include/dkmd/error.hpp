#pragma once

#include <stdexcept>
#include <string>

namespace dkmd {

// Error categories cover the failure classes surfaced to CLI users:
// unreadable files, malformed syntax, schema violations, invariant
// violations, dangling references, bad shapes/configs, numeric faults.
enum class ErrorCategory {
    io,
    parse,
    schema,
    invariant,
    reference,
    shape,
    numeric,
    config,
    state,
};

inline const char* category_name(ErrorCategory c) {
    switch (c) {
        case ErrorCategory::io: return "io";
        case ErrorCategory::parse: return "parse";
        case ErrorCategory::schema: return "schema";
        case ErrorCategory::invariant: return "invariant";
        case ErrorCategory::reference: return "reference";
        case ErrorCategory::shape: return "shape";
        case ErrorCategory::numeric: return "numeric";
        case ErrorCategory::config: return "config";
        case ErrorCategory::state: return "state";
    }
    return "unknown";
}

class Error : public std::runtime_error {
  public:
    Error(ErrorCategory category, const std::string& message)
        : std::runtime_error(std::string(category_name(category)) + ": " + message),
          category_(category) {}

    ErrorCategory category() const { return category_; }

  private:
    ErrorCategory category_;
};

}  // namespace dkmd
