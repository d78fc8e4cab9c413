#pragma once

// Run configuration: a small TOML subset (tables, key = value with strings, numbers,
// booleans and flat arrays), a strict schema onto ExperimentConfig, and the run manifest.

#include "horn/experiments.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <locale>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace horn {

inline constexpr const char* kToolVersion = "0.3.0";

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// TOML subset

struct TomlValue;
using TomlArray = std::vector<TomlValue>;

struct TomlValue {
    std::variant<bool, std::int64_t, double, std::string, TomlArray> v;
    int line = 0;
};

using TomlTable = std::map<std::string, TomlValue>;
using TomlDocument = std::map<std::string, TomlTable>;

namespace detail {

class TomlParser {
public:
    explicit TomlParser(std::string text) : s_(std::move(text)) {}

    TomlDocument parse() {
        TomlDocument doc;
        std::string table;
        doc[table];
        while (true) {
            skip_ws_and_comments(true);
            if (pos_ >= s_.size()) break;
            if (s_[pos_] == '[') {
                ++pos_;
                skip_ws();
                const std::string name = bare_key();
                skip_ws();
                expect(']');
                if (doc.count(name) && !doc[name].empty()) fail("table [" + name + "] defined twice");
                table = name;
                doc[table];
            } else {
                const int line = line_;
                const std::string key = bare_key();
                skip_ws();
                expect('=');
                skip_ws();
                TomlValue val = value();
                val.line = line;
                if (doc[table].count(key)) fail("duplicate key '" + key + "'");
                doc[table][key] = std::move(val);
            }
            end_of_line();
        }
        return doc;
    }

private:
    [[noreturn]] void fail(const std::string& msg) const {
        throw ConfigError("config line " + std::to_string(line_) + ": " + msg);
    }

    void skip_ws() {
        while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t' || s_[pos_] == '\r')) ++pos_;
    }

    void skip_ws_and_comments(bool newlines) {
        while (pos_ < s_.size()) {
            const char c = s_[pos_];
            if (c == ' ' || c == '\t' || c == '\r') {
                ++pos_;
            } else if (c == '#') {
                while (pos_ < s_.size() && s_[pos_] != '\n') ++pos_;
            } else if (c == '\n' && newlines) {
                ++pos_;
                ++line_;
            } else {
                break;
            }
        }
    }

    void end_of_line() {
        skip_ws_and_comments(false);
        if (pos_ < s_.size() && s_[pos_] != '\n') fail("unexpected trailing characters");
    }

    void expect(char c) {
        if (pos_ >= s_.size() || s_[pos_] != c) fail(std::string("expected '") + c + "'");
        ++pos_;
    }

    std::string bare_key() {
        const std::size_t start = pos_;
        while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_' ||
                                    s_[pos_] == '-')) {
            ++pos_;
        }
        if (pos_ == start) fail("expected a key");
        return s_.substr(start, pos_ - start);
    }

    TomlValue value() {
        if (pos_ >= s_.size()) fail("missing value");
        const char c = s_[pos_];
        if (c == '"') return {string_value()};
        if (c == '[') return {array_value()};
        if (s_.compare(pos_, 4, "true") == 0) {
            pos_ += 4;
            return {true};
        }
        if (s_.compare(pos_, 5, "false") == 0) {
            pos_ += 5;
            return {false};
        }
        return number_value();
    }

    std::string string_value() {
        expect('"');
        std::string out;
        while (true) {
            if (pos_ >= s_.size() || s_[pos_] == '\n') fail("unterminated string");
            const char c = s_[pos_++];
            if (c == '"') break;
            if (c == '\\') {
                if (pos_ >= s_.size()) fail("bad escape");
                const char e = s_[pos_++];
                switch (e) {
                    case '"': out += '"'; break;
                    case '\\': out += '\\'; break;
                    case 'n': out += '\n'; break;
                    case 't': out += '\t'; break;
                    default: fail(std::string("unsupported escape \\") + e);
                }
            } else {
                out += c;
            }
        }
        return out;
    }

    TomlArray array_value() {
        expect('[');
        TomlArray arr;
        while (true) {
            skip_ws_and_comments(true);
            if (pos_ < s_.size() && s_[pos_] == ']') {
                ++pos_;
                return arr;
            }
            TomlValue v = value();
            v.line = line_;
            arr.push_back(std::move(v));
            skip_ws_and_comments(true);
            if (pos_ < s_.size() && s_[pos_] == ',') {
                ++pos_;
            } else if (pos_ < s_.size() && s_[pos_] == ']') {
                ++pos_;
                return arr;
            } else {
                fail("expected ',' or ']' in array");
            }
        }
    }

    TomlValue number_value() {
        const std::size_t start = pos_;
        while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '+' ||
                                    s_[pos_] == '-' || s_[pos_] == '.' || s_[pos_] == '_')) {
            ++pos_;
        }
        std::string tok = s_.substr(start, pos_ - start);
        tok.erase(std::remove(tok.begin(), tok.end(), '_'), tok.end());
        if (tok.empty()) fail("expected a value");
        std::string body = tok;
        double sign = 1.0;
        if (body[0] == '+' || body[0] == '-') {
            sign = body[0] == '-' ? -1.0 : 1.0;
            body = body.substr(1);
        }
        if (body == "inf") return {sign * std::numeric_limits<double>::infinity()};
        if (body == "nan") return {std::numeric_limits<double>::quiet_NaN()};
        const bool is_float = tok.find_first_of(".eE") != std::string::npos;
        if (!is_float) {
            std::int64_t iv = 0;
            const char* b = tok.data() + (tok[0] == '+' ? 1 : 0);
            const auto [p, ec] = std::from_chars(b, tok.data() + tok.size(), iv);
            if (ec != std::errc() || p != tok.data() + tok.size()) fail("invalid number '" + tok + "'");
            return {iv};
        }
        std::istringstream is(tok);
        is.imbue(std::locale::classic());
        double dv = 0.0;
        is >> dv;
        if (is.fail() || !is.eof()) fail("invalid number '" + tok + "'");
        return {dv};
    }

    std::string s_;
    std::size_t pos_ = 0;
    int line_ = 1;
};

}  // namespace detail

inline TomlDocument parse_toml(const std::string& text) { return detail::TomlParser(text).parse(); }

// ---------------------------------------------------------------------------
// Schema

namespace detail {

inline std::string where(const std::string& table, const std::string& key, const TomlValue& v) {
    return "[" + table + "] " + key + " (line " + std::to_string(v.line) + ")";
}

inline double as_double(const std::string& t, const std::string& k, const TomlValue& v) {
    if (const auto* d = std::get_if<double>(&v.v)) return *d;
    if (const auto* i = std::get_if<std::int64_t>(&v.v)) return static_cast<double>(*i);
    throw ConfigError(where(t, k, v) + ": expected a number");
}

inline std::int64_t as_int(const std::string& t, const std::string& k, const TomlValue& v) {
    if (const auto* i = std::get_if<std::int64_t>(&v.v)) return *i;
    if (const auto* d = std::get_if<double>(&v.v); d && *d == std::floor(*d) && std::abs(*d) < 9.0e15) {
        return static_cast<std::int64_t>(*d);
    }
    throw ConfigError(where(t, k, v) + ": expected an integer");
}

inline std::int64_t as_nonneg_int(const std::string& t, const std::string& k, const TomlValue& v) {
    const std::int64_t i = as_int(t, k, v);
    if (i < 0) throw ConfigError(where(t, k, v) + ": must be non-negative");
    return i;
}

inline bool as_bool(const std::string& t, const std::string& k, const TomlValue& v) {
    if (const auto* b = std::get_if<bool>(&v.v)) return *b;
    throw ConfigError(where(t, k, v) + ": expected true or false");
}

inline std::string as_string(const std::string& t, const std::string& k, const TomlValue& v) {
    if (const auto* s = std::get_if<std::string>(&v.v)) return *s;
    throw ConfigError(where(t, k, v) + ": expected a string");
}

inline std::vector<double> as_doubles(const std::string& t, const std::string& k, const TomlValue& v) {
    const auto* a = std::get_if<TomlArray>(&v.v);
    if (!a) throw ConfigError(where(t, k, v) + ": expected an array of numbers");
    std::vector<double> out;
    for (const auto& e : *a) out.push_back(as_double(t, k, e));
    return out;
}

inline RationalEntry as_entry(const std::string& t, const std::string& k, const TomlValue& v) {
    const auto d = as_doubles(t, k, v);
    if (d.size() != 3) throw ConfigError(where(t, k, v) + ": expected [a, c, shift]");
    return {d[0], d[1], d[2]};
}

}  // namespace detail

/// Range checks that do not need a constructed model. Model-level checks (ellipticity,
/// profile shape) are reported by the check command instead.
inline void validate(const ExperimentConfig& c) {
    auto need = [](bool ok, const std::string& msg) {
        if (!ok) throw ConfigError(msg);
    };
    need(c.n_paths >= 1, "[experiment] n_paths must be at least 1");
    need(c.step.dt_max > 0.0 && c.step.eta > 0.0 && c.step.dt_min > 0.0, "[step] dt_max, eta, dt_min must be positive");
    need(c.step.t_max >= 0.0, "[step] t_max must be non-negative");
    need(c.step.r_max > 0.0, "[step] r_max must be positive");
    need(c.step.lambda_tol > 0.0, "[step] lambda_tol must be positive");
    need(c.step.max_reflect_iters > 0, "[step] max_reflect_iters must be positive");
    need(c.step.b_handoff >= 0.0 && c.step.handoff_rel_step > 0.0, "[step] b_handoff >= 0 and handoff_rel_step > 0");
    need(c.x0 >= 0.0, "[experiment] x0 must be non-negative");
    need(c.strip_b > 0.0 && c.strip_dt > 0.0 && c.strip_t > 0.0, "[experiment] strip_b, strip_dt, strip_t must be positive");
    need(c.drift_lag >= 1, "[lyapunov] lag must be at least 1");
    for (std::size_t i = 1; i < c.levels.size(); ++i) {
        need(c.levels[i] > c.levels[i - 1], "[experiment] levels must be ascending");
    }
}

/// Map a parsed document onto an ExperimentConfig. Unknown tables and keys are errors.
inline ExperimentConfig config_from_toml(const TomlDocument& doc) {
    using namespace detail;
    ExperimentConfig c;
    static const std::map<std::string, std::vector<std::string>> schema{
        {"", {}},
        {"domain", {"d", "a0", "alpha_cusp", "a_inf", "beta", "x_lo", "x_hi"}},
        {"covariance", {"kind", "v", "axial", "transverse", "delta"}},
        {"reflection", {"s0", "c0", "field"}},
        {"lyapunov", {"gammas", "theta_margin", "level", "lag", "min_segments"}},
        {"step",
         {"dt_max", "eta", "dt_min", "r_max", "t_max", "max_reflect_iters", "lambda_tol", "record_stride", "b_handoff",
          "handoff_rel_step", "bridge_local_time"}},
        {"experiment",
         {"name", "n_paths", "seed", "threads", "x0", "boundary_offset", "t_horizon", "x_target", "levels", "r_target",
          "exit_x0", "strip_b", "strip_dt", "strip_t", "gate_rel_tol", "gate_ci", "gate_stability", "gate_qv_max",
          "gate_verdicts"}},
    };
    for (const auto& [table, kv] : doc) {
        const auto it = schema.find(table);
        if (it == schema.end()) throw ConfigError("unknown table [" + table + "]");
        for (const auto& [key, val] : kv) {
            if (std::find(it->second.begin(), it->second.end(), key) == it->second.end()) {
                throw ConfigError("unknown key " + where(table.empty() ? "<root>" : table, key, val));
            }
        }
    }
    auto get = [&](const std::string& t, const std::string& k) -> const TomlValue* {
        const auto ti = doc.find(t);
        if (ti == doc.end()) return nullptr;
        const auto ki = ti->second.find(k);
        return ki == ti->second.end() ? nullptr : &ki->second;
    };
    auto num = [&](const std::string& t, const std::string& k, double& dst) {
        if (const auto* v = get(t, k)) dst = as_double(t, k, *v);
    };

    if (const auto* v = get("domain", "d")) c.profile.d = static_cast<int>(as_int("domain", "d", *v));
    num("domain", "a0", c.profile.a0);
    num("domain", "alpha_cusp", c.profile.alpha_cusp);
    num("domain", "a_inf", c.profile.a_inf);
    num("domain", "beta", c.profile.beta);
    num("domain", "x_lo", c.profile.x_lo);
    num("domain", "x_hi", c.profile.x_hi);

    if (const auto* v = get("covariance", "kind")) {
        const std::string k = as_string("covariance", "kind", *v);
        if (k == "isotropic") {
            c.covariance.kind = CovarianceKind::isotropic;
        } else if (k == "diagonal_profile") {
            c.covariance.kind = CovarianceKind::diagonal_profile;
        } else {
            throw ConfigError(where("covariance", "kind", *v) + ": expected \"isotropic\" or \"diagonal_profile\"");
        }
    }
    num("covariance", "v", c.covariance.v);
    if (const auto* v = get("covariance", "axial")) c.covariance.axial = as_entry("covariance", "axial", *v);
    if (const auto* v = get("covariance", "transverse")) {
        c.covariance.transverse = as_entry("covariance", "transverse", *v);
    }
    num("covariance", "delta", c.covariance.delta);

    num("reflection", "s0", c.reflection.s0);
    num("reflection", "c0", c.reflection.c0);
    if (const auto* v = get("reflection", "field")) {
        const std::string f = as_string("reflection", "field", *v);
        if (f == "rotated") {
            c.reflection.field = FieldKind::rotated;
        } else if (f == "additive") {
            c.reflection.field = FieldKind::additive;
        } else {
            throw ConfigError(where("reflection", "field", *v) + ": expected \"rotated\" or \"additive\"");
        }
    }

    if (const auto* v = get("lyapunov", "gammas")) c.gammas = as_doubles("lyapunov", "gammas", *v);
    num("lyapunov", "theta_margin", c.theta_margin);
    num("lyapunov", "level", c.drift_level);
    if (const auto* v = get("lyapunov", "lag")) c.drift_lag = as_nonneg_int("lyapunov", "lag", *v);
    if (const auto* v = get("lyapunov", "min_segments")) {
        c.min_segments = as_nonneg_int("lyapunov", "min_segments", *v);
    }

    num("step", "dt_max", c.step.dt_max);
    num("step", "eta", c.step.eta);
    num("step", "dt_min", c.step.dt_min);
    num("step", "r_max", c.step.r_max);
    num("step", "t_max", c.step.t_max);
    if (const auto* v = get("step", "max_reflect_iters")) {
        c.step.max_reflect_iters = static_cast<int>(as_nonneg_int("step", "max_reflect_iters", *v));
    }
    num("step", "lambda_tol", c.step.lambda_tol);
    if (const auto* v = get("step", "record_stride")) {
        c.step.record_stride = static_cast<std::uint64_t>(as_nonneg_int("step", "record_stride", *v));
    }
    num("step", "b_handoff", c.step.b_handoff);
    num("step", "handoff_rel_step", c.step.handoff_rel_step);
    if (const auto* v = get("step", "bridge_local_time")) {
        c.step.bridge_local_time = as_bool("step", "bridge_local_time", *v);
    }

    if (const auto* v = get("experiment", "name")) c.name = as_string("experiment", "name", *v);
    if (const auto* v = get("experiment", "n_paths")) {
        c.n_paths = static_cast<std::size_t>(as_nonneg_int("experiment", "n_paths", *v));
    }
    if (const auto* v = get("experiment", "seed")) {
        c.seed = static_cast<std::uint64_t>(as_nonneg_int("experiment", "seed", *v));
    }
    if (const auto* v = get("experiment", "threads")) {
        c.threads = static_cast<unsigned>(as_nonneg_int("experiment", "threads", *v));
    }
    num("experiment", "x0", c.x0);
    num("experiment", "boundary_offset", c.boundary_offset);
    num("experiment", "t_horizon", c.t_horizon);
    num("experiment", "x_target", c.x_target);
    if (const auto* v = get("experiment", "levels")) c.levels = as_doubles("experiment", "levels", *v);
    num("experiment", "r_target", c.r_target);
    if (const auto* v = get("experiment", "exit_x0")) c.exit_x0 = as_doubles("experiment", "exit_x0", *v);
    num("experiment", "strip_b", c.strip_b);
    num("experiment", "strip_dt", c.strip_dt);
    num("experiment", "strip_t", c.strip_t);
    if (const auto* v = get("experiment", "gate_rel_tol")) c.gate_rel_tol = as_double("experiment", "gate_rel_tol", *v);
    if (const auto* v = get("experiment", "gate_ci")) c.gate_ci = as_bool("experiment", "gate_ci", *v);
    if (const auto* v = get("experiment", "gate_stability")) {
        c.gate_stability = as_double("experiment", "gate_stability", *v);
    }
    if (const auto* v = get("experiment", "gate_qv_max")) c.gate_qv_max = as_double("experiment", "gate_qv_max", *v);
    if (const auto* v = get("experiment", "gate_verdicts")) {
        c.gate_verdicts = as_bool("experiment", "gate_verdicts", *v);
    }
    validate(c);
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& file) {
    std::ifstream is(file, std::ios::binary);
    if (!is) throw ConfigError("cannot open config file " + file.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return config_from_toml(parse_toml(ss.str()));
}

// ---------------------------------------------------------------------------
// Manifest

struct RunManifest {
    std::string config_path;
    nlohmann::json config;
    std::uint64_t seed = 0;
    unsigned threads = 1;
    std::string out_dir;
    std::string tool_version = kToolVersion;
    std::string command;
    std::string hash;  // of config snapshot, seed, command and tool version

    [[nodiscard]] nlohmann::json to_json() const {
        return {{"config_path", config_path}, {"config", config}, {"seed", seed},       {"threads", threads},
                {"out_dir", out_dir},         {"tool_version", tool_version},        {"command", command},
                {"manifest_hash", hash}};
    }
};

inline RunManifest make_manifest(const ExperimentConfig& cfg, const std::string& config_path,
                                 const std::string& out_dir, const std::string& command) {
    RunManifest m;
    m.config_path = config_path;
    m.config = to_json(cfg);
    m.seed = cfg.seed;
    m.threads = cfg.threads;
    m.out_dir = out_dir;
    m.command = command;
    const nlohmann::json keyed = {{"config", m.config}, {"command", command}, {"tool_version", m.tool_version}};
    m.hash = hex64(fnv1a64(keyed.dump()));
    return m;
}

inline void write_manifest(const std::filesystem::path& dir, const RunManifest& m) {
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "manifest.json", std::ios::binary) << m.to_json().dump(2) << '\n';
}

}  // namespace horn
