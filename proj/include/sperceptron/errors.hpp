#pragma once

#include <stdexcept>
#include <string>

namespace sperceptron {

enum class Errc {
    bad_magic,
    truncated,
    label_out_of_range,
    empty_dataset,
    input_too_short,
    not_square,
    shape_mismatch,
    non_finite,
    too_few_outputs,
    bad_label,
    bad_header,
    version_mismatch,
    size_out_of_range,
    bad_config,
    divergence,
    io,
};

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) {
    throw Error(code, what);
}

} // namespace sperceptron
