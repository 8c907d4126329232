#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace retest {

// Error taxonomy shared by all modules. Categories map onto process exit
// codes at the CLI boundary: data problems -> 2, configuration -> 3,
// broken internal invariants -> 4.
enum class errc {
    invalid_input,
    parse_error,
    integrity,
    config,
    insufficient_data,
    degenerate_variance,
    type_mismatch,
    internal,
};

class error : public std::runtime_error {
public:
    error(errc code, std::string message)
        : std::runtime_error(std::move(message)), code_(code) {}

    errc code() const noexcept { return code_; }

    static int exit_code(errc code) noexcept {
        switch (code) {
            case errc::config: return 3;
            case errc::internal: return 4;
            default: return 2;
        }
    }

private:
    errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& message) {
    throw error(code, message);
}

}  // namespace retest
