#pragma once

#include <stdexcept>
#include <string>

namespace frism {

enum class error_kind {
    shape,
    domain,
    range,
    format,
    config,
    incompatible,
    degenerate,
    io,
};

const char * error_kind_name(error_kind kind);

// base of every exception thrown by the library; kind() is what the CLI reports
class error : public std::runtime_error {
public:
    error(error_kind kind, const std::string & msg) : std::runtime_error(msg), kind_(kind) {}
    error_kind kind() const noexcept { return kind_; }

private:
    error_kind kind_;
};

#define FRISM_ERROR_TYPE(name, kind_value)                                              \
    class name : public error {                                                          \
    public:                                                                              \
        explicit name(const std::string & msg) : error(error_kind::kind_value, msg) {}   \
    };

FRISM_ERROR_TYPE(shape_error,         shape)
FRISM_ERROR_TYPE(domain_error,        domain)
FRISM_ERROR_TYPE(range_error,         range)
FRISM_ERROR_TYPE(format_error,        format)
FRISM_ERROR_TYPE(config_error,        config)
FRISM_ERROR_TYPE(incompatible_error,  incompatible)
FRISM_ERROR_TYPE(degenerate_error,    degenerate)
FRISM_ERROR_TYPE(io_error,            io)

#undef FRISM_ERROR_TYPE

} // namespace frism
