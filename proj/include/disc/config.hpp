#pragma once

// Flat key=value run configuration shared by every CLI subcommand.
//
//   # comment
//   train.steps = 20000
//   policy.hidden = 32,32,32
//
// Unknown keys and malformed values raise ConfigError. Keys that are not
// set keep their documented default.

#include "disc/baselines.hpp"
#include "disc/eval.hpp"
#include "disc/lang.hpp"
#include "disc/sim.hpp"
#include "disc/trainer.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace disc {

enum class KeyType { integer, real, boolean, text, int_list };

struct ConfigKey {
    std::string name;
    KeyType type;
    std::string fallback;
    std::string doc;
};

const std::vector<ConfigKey>& config_keys();

class RunConfig {
public:
    RunConfig();   // all defaults

    static RunConfig parse(const std::string& text);
    static RunConfig load(const std::filesystem::path& path);

    /// Validates and stores one entry; ConfigError for unknown keys or bad values.
    void set(const std::string& key, const std::string& value);
    const std::string& raw(const std::string& key) const;

    long long get_int(const std::string& key) const;
    double get_real(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::vector<long long> get_ints(const std::string& key) const;

    /// Sorted key=value lines of every key, defaults included.
    std::string canonical() const;
    std::uint64_t hash() const;
    /// "# config_hash=<hex> seed=<n>\n"
    std::string provenance(std::uint64_t seed) const;

    EnvConfig env() const;
    LexiconConfig lexicon() const;
    PolicyArch arch() const;
    ModelSpec model_spec(std::uint64_t seed) const;
    TrainConfig train(std::uint64_t seed) const;
    AdaptConfig adapt(std::uint64_t seed) const;
    Task adapt_task() const;

private:
    std::map<std::string, std::string> values_;
};

/// Markdown table of every key; shipped as docs/config.md.
std::string config_reference();

} // namespace disc
