#ifndef MSEMBED_ERRORS_HPP
#define MSEMBED_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace msembed {

/// Base class of every error raised by the library. `kind()` is a stable,
/// machine-readable tag used by the command line tool.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

struct DimensionError : Error {
    explicit DimensionError(const std::string& m) : Error("dimension_error", m) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& m) : Error("config_error", m) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& m) : Error("numeric_error", m) {}
};

/// Malformed or truncated file payload. `offset` is the byte position where
/// parsing failed, or -1 when it does not apply.
struct FormatError : Error {
    explicit FormatError(const std::string& m, long long offset = -1)
        : Error("format_error", offset >= 0 ? m + " (at byte " + std::to_string(offset) + ")" : m),
          offset(offset) {}
    long long offset;
};

struct LookupError : Error {
    explicit LookupError(const std::string& m) : Error("lookup_error", m) {}
};

struct DataError : Error {
    explicit DataError(const std::string& m) : Error("data_error", m) {}
};

/// Sampling pools could not supply the requested number of items.
struct PoolError : Error {
    PoolError(const std::string& m, std::size_t shortfall)
        : Error("pool_error", m + " (shortfall " + std::to_string(shortfall) + ")"),
          shortfall(shortfall) {}
    std::size_t shortfall;
};

struct IoError : Error {
    explicit IoError(const std::string& m) : Error("io_error", m) {}
};

}  // namespace msembed

#endif  // MSEMBED_ERRORS_HPP
