#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace nfem {

// Coarse error classes. The CLI prints the category name as the first token
// on stderr so callers can dispatch on it.
enum class ErrorCategory {
    usage,
    io,
    format,
    config,
    mesh,
    shape,
    domain,
    numeric,
    internal,
};

std::string_view category_name(ErrorCategory category) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& message)
        : std::runtime_error(message), category_(category) {}

    ErrorCategory category() const noexcept { return category_; }

private:
    ErrorCategory category_;
};

[[noreturn]] inline void fail(ErrorCategory category, const std::string& message) {
    throw Error(category, message);
}

} // namespace nfem
