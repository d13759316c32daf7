#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "hfz/error.hpp"
#include "hfz/mlp.hpp"

namespace hfz {

enum class Method { hyperfedzero, fedavg, fedavg_ft, local, opt1 };

inline Method parse_method(const std::string& s) {
    if (s == "hyperfedzero") return Method::hyperfedzero;
    if (s == "fedavg") return Method::fedavg;
    if (s == "fedavg_ft") return Method::fedavg_ft;
    if (s == "local") return Method::local;
    if (s == "opt1") return Method::opt1;
    throw ConfigError("unknown method '" + s +
                      "' (expected hyperfedzero|fedavg|fedavg_ft|local|opt1)");
}

inline const char* method_name(Method m) {
    switch (m) {
        case Method::hyperfedzero: return "hyperfedzero";
        case Method::fedavg: return "fedavg";
        case Method::fedavg_ft: return "fedavg_ft";
        case Method::local: return "local";
        case Method::opt1: return "opt1";
    }
    throw ConfigError("invalid method tag");
}

/// Full experiment configuration. Every field is settable from the config
/// file and from key=value command-line overrides; see config_fields() for
/// the schema.
struct FLConfig {
    std::string method = "hyperfedzero";

    int n_participating = 10;
    int m_nonparticipating = 5;
    int rounds = 50;
    int local_iters = 5;
    double lr = 0.001;
    int batch_size = 64;
    int eval_interval = 10;
    std::uint64_t seed = 1;
    bool parallel_clients = false;

    std::string dataset = "synthetic";
    std::string idx_images;
    std::string idx_labels;
    int synth_classes = 4;
    int synth_per_class = 1500;
    int synth_dim = 2;
    double synth_spread = 4.0;
    double synth_noise_ramp = 0.0;

    double alpha_d = 0.1;
    int min_per_client = 10;
    double test_fraction = 0.2;
    double holdout_fraction = 0.1;

    std::int64_t embed_dim = 16;
    std::vector<std::int64_t> extractor_hidden = {64};
    double alpha = 1.0;
    double beta = 1.0;
    bool scalar_noise = false;

    std::int64_t chunk_size = 576;
    std::int64_t d_chunk = 8;
    std::vector<std::int64_t> trunk_hidden = {40};

    std::vector<std::int64_t> classifier_hidden = {64};

    void validate() const {
        if (n_participating < 1) throw ConfigError("n_participating must be >= 1");
        if (m_nonparticipating < 0) throw ConfigError("m_nonparticipating must be >= 0");
        if (rounds < 1) throw ConfigError("rounds must be >= 1");
        if (local_iters < 1) throw ConfigError("local_iters must be >= 1");
        if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (eval_interval < 1) throw ConfigError("eval_interval must be >= 1");
        if (dataset != "synthetic" && dataset != "idx")
            throw ConfigError("dataset must be synthetic or idx");
        if (dataset == "idx" && (idx_images.empty() || idx_labels.empty()))
            throw ConfigError("dataset=idx needs idx_images and idx_labels paths");
        if (!(alpha_d > 0.0)) throw ConfigError("alpha_d must be > 0");
        if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ConfigError("alpha and beta must be >= 0");
        if (embed_dim < 1) throw ConfigError("embed_dim must be >= 1");
        if (chunk_size < 1 || d_chunk < 1)
            throw ConfigError("chunk_size and d_chunk must be >= 1");
        parse_method(method);
    }

    MlpArch classifier_arch(std::int64_t feature_dim, std::int64_t num_classes) const {
        std::vector<std::int64_t> dims{feature_dim};
        dims.insert(dims.end(), classifier_hidden.begin(), classifier_hidden.end());
        dims.push_back(num_classes);
        return MlpArch(dims);
    }

    MlpArch opt1_arch(std::int64_t feature_dim, std::int64_t num_classes) const {
        return classifier_arch(feature_dim + embed_dim, num_classes);
    }

    MlpArch extractor_arch(std::int64_t feature_dim) const {
        std::vector<std::int64_t> dims{feature_dim};
        dims.insert(dims.end(), extractor_hidden.begin(), extractor_hidden.end());
        dims.push_back(embed_dim);
        return MlpArch(dims);
    }
};

namespace detail {

inline std::int64_t parse_i64(const std::string& v, const std::string& key) {
    try {
        std::size_t pos = 0;
        const long long x = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': '" + v + "' is not an integer");
    }
}

inline double parse_f64(const std::string& v, const std::string& key) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': '" + v + "' is not a number");
    }
}

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("key '" + key + "': '" + v + "' is not a boolean");
}

/// Comma-separated layer widths; "none" means no hidden layers.
inline std::vector<std::int64_t> parse_dims(const std::string& v, const std::string& key) {
    std::vector<std::int64_t> out;
    if (v == "none") return out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_i64(item, key));
    if (out.empty()) throw ConfigError("key '" + key + "': empty width list (use 'none')");
    return out;
}

inline std::string dims_str(const std::vector<std::int64_t>& dims) {
    if (dims.empty()) return "none";
    std::string s;
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) s += ',';
        s += std::to_string(dims[i]);
    }
    return s;
}

inline std::string f64_str(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct ConfigField {
    const char* name;
    std::function<std::string(const FLConfig&)> get;
    std::function<void(FLConfig&, const std::string&)> set;
};

inline const std::vector<ConfigField>& config_fields() {
    auto i32 = [](const char* n, int FLConfig::*p) {
        return ConfigField{
            n, [p](const FLConfig& c) { return std::to_string(c.*p); },
            [p, n](FLConfig& c, const std::string& v) {
                c.*p = static_cast<int>(parse_i64(v, n));
            }};
    };
    auto i64 = [](const char* n, std::int64_t FLConfig::*p) {
        return ConfigField{n, [p](const FLConfig& c) { return std::to_string(c.*p); },
                           [p, n](FLConfig& c, const std::string& v) { c.*p = parse_i64(v, n); }};
    };
    auto f64 = [](const char* n, double FLConfig::*p) {
        return ConfigField{n, [p](const FLConfig& c) { return f64_str(c.*p); },
                           [p, n](FLConfig& c, const std::string& v) { c.*p = parse_f64(v, n); }};
    };
    auto str = [](const char* n, std::string FLConfig::*p) {
        return ConfigField{n, [p](const FLConfig& c) { return c.*p; },
                           [p](FLConfig& c, const std::string& v) { c.*p = v; }};
    };
    auto flag = [](const char* n, bool FLConfig::*p) {
        return ConfigField{n, [p](const FLConfig& c) { return std::string(c.*p ? "true" : "false"); },
                           [p, n](FLConfig& c, const std::string& v) { c.*p = parse_bool(v, n); }};
    };
    auto dims = [](const char* n, std::vector<std::int64_t> FLConfig::*p) {
        return ConfigField{n, [p](const FLConfig& c) { return dims_str(c.*p); },
                           [p, n](FLConfig& c, const std::string& v) { c.*p = parse_dims(v, n); }};
    };
    static const std::vector<ConfigField> fields = {
        str("method", &FLConfig::method),
        i32("n_participating", &FLConfig::n_participating),
        i32("m_nonparticipating", &FLConfig::m_nonparticipating),
        i32("rounds", &FLConfig::rounds),
        i32("local_iters", &FLConfig::local_iters),
        f64("lr", &FLConfig::lr),
        i32("batch_size", &FLConfig::batch_size),
        i32("eval_interval", &FLConfig::eval_interval),
        ConfigField{"seed", [](const FLConfig& c) { return std::to_string(c.seed); },
                    [](FLConfig& c, const std::string& v) {
                        c.seed = static_cast<std::uint64_t>(parse_i64(v, "seed"));
                    }},
        flag("parallel_clients", &FLConfig::parallel_clients),
        str("dataset", &FLConfig::dataset),
        str("idx_images", &FLConfig::idx_images),
        str("idx_labels", &FLConfig::idx_labels),
        i32("synth_classes", &FLConfig::synth_classes),
        i32("synth_per_class", &FLConfig::synth_per_class),
        i32("synth_dim", &FLConfig::synth_dim),
        f64("synth_spread", &FLConfig::synth_spread),
        f64("synth_noise_ramp", &FLConfig::synth_noise_ramp),
        f64("alpha_d", &FLConfig::alpha_d),
        i32("min_per_client", &FLConfig::min_per_client),
        f64("test_fraction", &FLConfig::test_fraction),
        f64("holdout_fraction", &FLConfig::holdout_fraction),
        i64("embed_dim", &FLConfig::embed_dim),
        dims("extractor_hidden", &FLConfig::extractor_hidden),
        f64("alpha", &FLConfig::alpha),
        f64("beta", &FLConfig::beta),
        flag("scalar_noise", &FLConfig::scalar_noise),
        i64("chunk_size", &FLConfig::chunk_size),
        i64("d_chunk", &FLConfig::d_chunk),
        dims("trunk_hidden", &FLConfig::trunk_hidden),
        dims("classifier_hidden", &FLConfig::classifier_hidden),
    };
    return fields;
}

} // namespace detail

/// Applies one "key=value" override.
inline void apply_override(FLConfig& cfg, const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("override '" + kv + "' is not of the form key=value");
    const std::string key = kv.substr(0, eq);
    const std::string value = kv.substr(eq + 1);
    for (const auto& f : detail::config_fields()) {
        if (key == f.name) {
            f.set(cfg, value);
            return;
        }
    }
    throw ConfigError("unknown config key '" + key + "'");
}

/// Canonical "key = value" rendering, one field per line, schema order.
inline std::string serialize_config(const FLConfig& cfg) {
    std::string out;
    for (const auto& f : detail::config_fields()) {
        out += f.name;
        out += " = ";
        out += f.get(cfg);
        out += "\n";
    }
    return out;
}

/// Reads a key = value config file. '#' starts a comment; blank lines are
/// skipped; unknown keys are errors.
inline FLConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    FLConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            if (b == std::string::npos) return std::string();
            const auto e = s.find_last_not_of(" \t\r");
            return s.substr(b, e - b + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        apply_override(cfg, key + "=" + value);
    }
    return cfg;
}

/// FNV-1a hash of the canonical serialization; identifies a run cell.
inline std::string config_fingerprint(const FLConfig& cfg) {
    const std::string s = serialize_config(cfg);
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace hfz
