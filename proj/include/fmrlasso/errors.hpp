#pragma once
#include <stdexcept>
#include <string>

namespace fmrlasso {

/**
 * Base class of every error raised by the library.
 * kind() is a stable machine-readable tag used in CLI error objects.
 */
class error : public std::runtime_error
{
public:
    error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind))
    {}
    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

class invalid_argument_error : public error
{
public:
    explicit invalid_argument_error(const std::string& what)
        : error("invalid_argument", what)
    {}
};

// Raised by the CSV loader; kind() distinguishes the failure.
class csv_error : public error
{
public:
    csv_error(std::string kind, const std::string& what)
        : error(std::move(kind), what)
    {}
};

// All initial coefficients are zero, so every adaptive weight is infinite.
class degenerate_initialization_error : public error
{
public:
    explicit degenerate_initialization_error(const std::string& what)
        : error("degenerate_initialization", what)
    {}
};

class fold_error : public error
{
public:
    fold_error(int fold, const std::string& what)
        : error("fold_failed", "fold " + std::to_string(fold) + ": " + what), fold_(fold)
    {}
    int fold() const noexcept { return fold_; }

private:
    int fold_;
};

} // namespace fmrlasso
