#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mambascope/error.hpp"

namespace mambascope {

enum class ScoreDirection { Forward, Backward, Mean };

enum class ScoreMetric { SoftplusMax, L2Norm, TopKMean };

enum class OrderPolicy {
    ClsMiddleOfImportant,  // default
    ClsBeforeImportant,
    ClsAfterImportant,
    UnimportantFirst,
};

/// All hyperparameters of the two-stage model plus run knobs.
struct ModelConfig {
    std::size_t image_size = 64;
    std::size_t channels = 3;
    std::size_t patch_coarse = 16;  // p1, must equal 2*p2
    std::size_t patch_fine = 8;     // p2
    std::size_t dim = 32;           // D
    std::size_t dim_inner = 64;     // D'
    std::size_t state_dim = 8;      // N
    std::size_t depth = 4;          // d
    std::size_t classes = 10;       // C
    double alpha = 0.8;             // refinement ratio
    double beta = 0.99;             // EMA smoothing
    double eta = 0.5;               // confidence threshold
    std::size_t layer_count = 12;   // participating layers for scoring
    ScoreDirection score_direction = ScoreDirection::Mean;
    ScoreMetric score_metric = ScoreMetric::SoftplusMax;
    std::size_t score_topk = 4;     // only for TopKMean
    OrderPolicy order_policy = OrderPolicy::ClsMiddleOfImportant;
    bool reuse_mask_unselected = true;
    std::uint64_t seed = 1;

    std::size_t grid_coarse() const { return image_size / patch_coarse; }  // H1
    std::size_t grid_fine() const { return image_size / patch_fine; }      // H2
    std::size_t n_coarse() const { return grid_coarse() * grid_coarse(); }
    std::size_t n_fine_full() const { return grid_fine() * grid_fine(); }

    void validate() const {
        if (patch_coarse != 2 * patch_fine)
            throw ConfigError("patch_coarse must equal 2*patch_fine");
        if (image_size % patch_coarse != 0)
            throw ConfigError("image_size must be divisible by patch_coarse");
        if (eta < 0.0 || eta > 1.0) throw ConfigError("eta must be in [0, 1]");
        if (alpha < 0.0 || alpha > 1.0) throw ConfigError("alpha must be in [0, 1]");
        if (beta < 0.0 || beta > 1.0) throw ConfigError("beta must be in [0, 1]");
        if (depth == 0) throw ConfigError("depth must be >= 1");
        if (classes == 0) throw ConfigError("classes must be >= 1");
        if (layer_count == 0) throw ConfigError("layer_count must be >= 1");
    }
};

/// Run-level settings parsed from the key=value config file.
struct RunConfig {
    ModelConfig model;
    std::uint64_t data_seed = 7;
    std::size_t sample_count = 16;
    double checker_amplitude = 1.0;
    std::string out_path;  // empty -> stdout
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace detail

inline ScoreDirection parse_score_direction(const std::string& s) {
    if (s == "forward") return ScoreDirection::Forward;
    if (s == "backward") return ScoreDirection::Backward;
    if (s == "mean") return ScoreDirection::Mean;
    throw ConfigError("unknown score_direction: " + s);
}

inline ScoreMetric parse_score_metric(const std::string& s) {
    if (s == "softplus_max") return ScoreMetric::SoftplusMax;
    if (s == "l2_norm") return ScoreMetric::L2Norm;
    if (s == "topk_mean") return ScoreMetric::TopKMean;
    throw ConfigError("unknown score_metric: " + s);
}

inline OrderPolicy parse_order_policy(const std::string& s) {
    if (s == "cls_middle") return OrderPolicy::ClsMiddleOfImportant;
    if (s == "cls_before") return OrderPolicy::ClsBeforeImportant;
    if (s == "cls_after") return OrderPolicy::ClsAfterImportant;
    if (s == "unimportant_first") return OrderPolicy::UnimportantFirst;
    throw ConfigError("unknown order_policy: " + s);
}

/// Parses the key=value config format. Sections ([model], [data]) are
/// accepted but keys are globally unique, so they are informative only.
inline RunConfig parse_run_config(std::istream& in) {
    RunConfig rc;
    ModelConfig& m = rc.model;
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t.front() == '[' && t.back() == ']') continue;
        std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
        kv[detail::trim(t.substr(0, eq))] = detail::trim(t.substr(eq + 1));
    }

    auto take = [&](const char* key, auto& field) {
        auto it = kv.find(key);
        if (it == kv.end()) return;
        std::istringstream is(it->second);
        if constexpr (std::is_same_v<std::decay_t<decltype(field)>, bool>) {
            field = (it->second == "true" || it->second == "1");
        } else {
            is >> field;
            if (is.fail()) throw ConfigError(std::string("bad value for ") + key);
        }
        kv.erase(it);
    };

    take("image_size", m.image_size);
    take("channels", m.channels);
    take("patch_coarse", m.patch_coarse);
    take("patch_fine", m.patch_fine);
    take("dim", m.dim);
    take("dim_inner", m.dim_inner);
    take("state_dim", m.state_dim);
    take("depth", m.depth);
    take("classes", m.classes);
    take("alpha", m.alpha);
    take("beta", m.beta);
    take("eta", m.eta);
    take("layer_count", m.layer_count);
    take("score_topk", m.score_topk);
    take("reuse_mask_unselected", m.reuse_mask_unselected);
    take("seed", m.seed);
    take("data_seed", rc.data_seed);
    take("samples", rc.sample_count);
    take("checker_amplitude", rc.checker_amplitude);
    take("out", rc.out_path);

    if (auto it = kv.find("score_direction"); it != kv.end()) {
        m.score_direction = parse_score_direction(it->second);
        kv.erase(it);
    }
    if (auto it = kv.find("score_metric"); it != kv.end()) {
        m.score_metric = parse_score_metric(it->second);
        kv.erase(it);
    }
    if (auto it = kv.find("order_policy"); it != kv.end()) {
        m.order_policy = parse_order_policy(it->second);
        kv.erase(it);
    }

    if (!kv.empty()) {
        std::string unknown;
        for (auto& [k, v] : kv) unknown += (unknown.empty() ? "" : ", ") + k;
        throw ConfigError("unknown config keys: " + unknown);
    }

    m.validate();
    return rc;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    return parse_run_config(in);
}

}  // namespace mambascope
