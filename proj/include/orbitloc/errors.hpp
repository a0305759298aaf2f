#pragma once

#include <stdexcept>
#include <string>

namespace orbitloc {

/// Error category, mapped onto process exit codes by the CLI.
enum class error_category { invalid_argument = 2, config = 3, data = 4, network = 5, incompatible = 6 };

class error : public std::runtime_error {
public:
    error(error_category cat, const std::string& what) : std::runtime_error(what), category_(cat) {}
    error_category category() const noexcept { return category_; }

private:
    error_category category_;
};

struct invalid_argument_error : error {
    explicit invalid_argument_error(const std::string& w) : error(error_category::invalid_argument, w) {}
};

struct out_of_range_error : error {
    explicit out_of_range_error(const std::string& w) : error(error_category::invalid_argument, w) {}
};

struct degenerate_input_error : error {
    explicit degenerate_input_error(const std::string& w) : error(error_category::invalid_argument, w) {}
};

struct config_error : error {
    explicit config_error(const std::string& w) : error(error_category::config, w) {}
};

// Malformed catalog lines, undecodable payloads, missing artifacts.
struct format_error : error {
    explicit format_error(const std::string& w) : error(error_category::data, w) {}
};

struct corruption_error : error {
    explicit corruption_error(const std::string& w) : error(error_category::data, w) {}
};

struct missing_artifact_error : error {
    explicit missing_artifact_error(const std::string& w) : error(error_category::data, w) {}
};

struct incompatible_error : error {
    explicit incompatible_error(const std::string& w) : error(error_category::incompatible, w) {}
};

// Network failure that survived all retries.
struct transient_error : error {
    explicit transient_error(const std::string& w) : error(error_category::network, w) {}
};

struct divergence_error : error {
    explicit divergence_error(const std::string& w) : error(error_category::data, w) {}
};

} // namespace orbitloc
