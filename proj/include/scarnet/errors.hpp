#ifndef SCARNET_ERRORS_HPP
#define SCARNET_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace scarnet {

// Error taxonomy mapped onto CLI exit codes: config 2, data 3, checkpoint 4, pairing 5.
struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct data_error : std::runtime_error {
    explicit data_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct checkpoint_error : std::runtime_error {
    explicit checkpoint_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct pairing_error : std::runtime_error {
    explicit pairing_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/contract violations inside the numeric core.
struct shape_error : std::runtime_error {
    explicit shape_error(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf detected where the contract requires finite values.
struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace scarnet

#endif
