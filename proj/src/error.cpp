#include "afpa/error.hpp"

namespace afpa {

int exit_code_for(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::Config:
        case ErrorKind::Contract:
        case ErrorKind::Shape:
            return 2;
        case ErrorKind::Io:
        case ErrorKind::Format:
        case ErrorKind::Data:
        case ErrorKind::Corruption:
        case ErrorKind::Version:
            return 3;
        case ErrorKind::Numeric:
            return 4;
    }
    return 1;
}

}  // namespace afpa
