#pragma once

#include <stdexcept>
#include <string>

namespace kf {

// Error classes map to CLI exit codes: config=2, numeric=3, cache=4.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct config_error : error {
    using error::error;
};

struct numeric_error : error {
    using error::error;
};

struct cache_error : error {
    using error::error;
};

} // namespace kf
