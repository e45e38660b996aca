#pragma once

#include <stdexcept>
#include <string>

namespace afpa {

enum class ErrorKind {
    Shape,
    Numeric,
    Config,
    Contract,
    Io,
    Format,
    Data,
    Corruption,
    Version,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

#define AFPA_DEFINE_ERROR(Name, Kind)                                             \
    class Name : public Error {                                                   \
    public:                                                                       \
        explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
    };

AFPA_DEFINE_ERROR(ShapeError, Shape)
AFPA_DEFINE_ERROR(NumericError, Numeric)
AFPA_DEFINE_ERROR(ConfigError, Config)
AFPA_DEFINE_ERROR(ContractError, Contract)
AFPA_DEFINE_ERROR(IoError, Io)
AFPA_DEFINE_ERROR(FormatError, Format)
AFPA_DEFINE_ERROR(DataError, Data)
AFPA_DEFINE_ERROR(CorruptionError, Corruption)
AFPA_DEFINE_ERROR(VersionError, Version)

#undef AFPA_DEFINE_ERROR

// Process exit code for a failure of the given kind: 2 config/contract, 3 I/O, 4 numeric.
int exit_code_for(ErrorKind kind) noexcept;

}  // namespace afpa
