#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ndm/errors.hpp"
#include "ndm/layers.hpp"
#include "ndm/synth.hpp"
#include "ndm/training.hpp"

namespace ndm {

// Run configuration. Defaults with an empty config file reproduce the
// reference 4-layer network and its neuron parameters exactly.
struct RunConfig {
    // [network]
    int input_channels = 2;
    int input_height = 720;
    int input_width = 720;
    std::string layers = "pool:8,conv:16:5:2,flatten,dense:512,dense:13";
    double pool_weight = 1.0;

    // [neuron]
    CubaParams<double> neuron;

    // [training]
    int epochs = 200;
    double lr = 3e-3;
    std::uint64_t seed = 1;
    double sample_window = 2.0;
    double bin_width = 0.005;
    double train_fraction = 0.8;
    double init_gain = 2.0;
    bool train_delays = false;
    double grad_clip = 0.0;
    double adam_eps = 1e-8;
    double target_test_acc = 0.0;

    // [data]
    std::string data_dir;  // dataset directory with manifest.csv; empty = synthesize
    int classes = 13;
    int per_class = 20;
    int resolution = 72;
    double duration = 2.0;
    std::string noise_regime = "moderate";
    double signal_event_rate = 5000.0;
    int crop = 0;  // center-crop side applied to loaded streams; 0 = none

    // [output]
    std::string report_path = "report.json";
    std::string checkpoint_path = "model.ndmc";
    std::string confusion_path = "confusion.csv";
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t");
    return s.substr(a, b - a + 1);
}

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(key + ": expected boolean, got '" + v + "'");
}

template <typename T>
T parse_num(const std::string& v, const std::string& key) {
    std::istringstream in(v);
    T out;
    in >> out;
    if (in.fail() || !(in >> std::ws).eof())
        throw ConfigError(key + ": cannot parse '" + v + "'");
    return out;
}

}  // namespace detail

// INI-style sections with `key = value` lines; '#' and ';' start comments.
inline void apply_config_entry(RunConfig& cfg, const std::string& section,
                               const std::string& key, const std::string& value) {
    using detail::parse_bool;
    using detail::parse_num;
    const std::string path = section + "." + key;
    if (section == "network") {
        if (key == "input_channels") cfg.input_channels = parse_num<int>(value, path);
        else if (key == "input_height") cfg.input_height = parse_num<int>(value, path);
        else if (key == "input_width") cfg.input_width = parse_num<int>(value, path);
        else if (key == "layers") cfg.layers = value;
        else if (key == "pool_weight") cfg.pool_weight = parse_num<double>(value, path);
        else throw ConfigError("unknown key " + path);
    } else if (section == "neuron") {
        if (key == "v_thr") cfg.neuron.v_thr = parse_num<double>(value, path);
        else if (key == "current_decay") cfg.neuron.current_decay = parse_num<double>(value, path);
        else if (key == "voltage_decay") cfg.neuron.voltage_decay = parse_num<double>(value, path);
        else if (key == "tau_grad") cfg.neuron.tau_grad = parse_num<double>(value, path);
        else if (key == "scale_grad") cfg.neuron.scale_grad = parse_num<double>(value, path);
        else if (key == "true_rate") cfg.neuron.true_rate = parse_num<double>(value, path);
        else if (key == "false_rate") cfg.neuron.false_rate = parse_num<double>(value, path);
        else throw ConfigError("unknown key " + path);
    } else if (section == "training") {
        if (key == "epochs") cfg.epochs = parse_num<int>(value, path);
        else if (key == "lr") cfg.lr = parse_num<double>(value, path);
        else if (key == "seed") cfg.seed = parse_num<std::uint64_t>(value, path);
        else if (key == "sample_window") cfg.sample_window = parse_num<double>(value, path);
        else if (key == "bin_width") cfg.bin_width = parse_num<double>(value, path);
        else if (key == "train_fraction") cfg.train_fraction = parse_num<double>(value, path);
        else if (key == "init_gain") cfg.init_gain = parse_num<double>(value, path);
        else if (key == "train_delays") cfg.train_delays = parse_bool(value, path);
        else if (key == "grad_clip") cfg.grad_clip = parse_num<double>(value, path);
        else if (key == "adam_eps") cfg.adam_eps = parse_num<double>(value, path);
        else if (key == "target_test_acc") cfg.target_test_acc = parse_num<double>(value, path);
        else throw ConfigError("unknown key " + path);
    } else if (section == "data") {
        if (key == "dir") cfg.data_dir = value;
        else if (key == "classes") cfg.classes = parse_num<int>(value, path);
        else if (key == "per_class") cfg.per_class = parse_num<int>(value, path);
        else if (key == "resolution") cfg.resolution = parse_num<int>(value, path);
        else if (key == "duration") cfg.duration = parse_num<double>(value, path);
        else if (key == "noise_regime") cfg.noise_regime = value;
        else if (key == "signal_event_rate") cfg.signal_event_rate = parse_num<double>(value, path);
        else if (key == "crop") cfg.crop = parse_num<int>(value, path);
        else throw ConfigError("unknown key " + path);
    } else if (section == "output") {
        if (key == "report") cfg.report_path = value;
        else if (key == "checkpoint") cfg.checkpoint_path = value;
        else if (key == "confusion") cfg.confusion_path = value;
        else throw ConfigError("unknown key " + path);
    } else {
        throw ConfigError("unknown section [" + section + "]");
    }
}

inline RunConfig parse_config(std::istream& in) {
    RunConfig cfg;
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::size_t comment = line.find_first_of("#;");
        if (comment != std::string::npos) line.erase(comment);
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[' && line.back() == ']') {
            section = detail::trim(line.substr(1, line.size() - 2));
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (section.empty())
            throw ConfigError("config line " + std::to_string(line_no) + ": key outside section");
        try {
            apply_config_entry(cfg, section, key, value);
        } catch (const ConfigError& e) {
            throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return cfg;
}

inline RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    return parse_config(in);
}

// Compact layer list: `pool:<k>`, `conv:<out>:<k>:<pad>`, `flatten`,
// `dense:<units>`, comma separated.
inline std::vector<LayerSpec> parse_layer_list(const std::string& text, double pool_weight) {
    std::vector<LayerSpec> specs;
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        item = detail::trim(item);
        if (item.empty()) continue;
        std::vector<std::string> parts;
        std::istringstream pin(item);
        std::string p;
        while (std::getline(pin, p, ':')) parts.push_back(detail::trim(p));
        const std::string& kind = parts[0];
        auto num = [&](std::size_t i) {
            if (i >= parts.size()) throw ConfigError("layer '" + item + "': missing argument");
            return detail::parse_num<int>(parts[i], "layer " + item);
        };
        if (kind == "pool") specs.push_back(LayerSpec::pool(num(1), pool_weight));
        else if (kind == "conv") specs.push_back(LayerSpec::conv(num(1), num(2), num(3)));
        else if (kind == "flatten") specs.push_back(LayerSpec::flatten());
        else if (kind == "dense") specs.push_back(LayerSpec::dense(num(1)));
        else throw ConfigError("unknown layer kind '" + kind + "'");
    }
    if (specs.empty()) throw ConfigError("network.layers is empty");
    return specs;
}

inline int config_timesteps(const RunConfig& cfg) {
    const std::uint64_t window_us = std::uint64_t(std::llround(cfg.sample_window * 1e6));
    const std::uint64_t bin_us = std::uint64_t(std::llround(cfg.bin_width * 1e6));
    if (bin_us == 0 || bin_us > window_us)
        throw ConfigError("training: require 0 < bin_width <= sample_window");
    return int(window_us / bin_us);
}

template <typename Real>
Network<Real> build_network(const RunConfig& cfg) {
    cfg.neuron.validate();
    Network<Real> net;
    net.input = Shape{cfg.input_channels, cfg.input_height, cfg.input_width};
    net.timesteps = config_timesteps(cfg);
    net.params = cfg.neuron.cast<Real>();
    net.specs = parse_layer_list(cfg.layers, cfg.pool_weight);
    net.delays_enabled = cfg.train_delays;
    net.stage_shapes();  // validate composition before any allocation
    return net;
}

// Resolved key/value view of the config, echoed into reports for provenance.
inline nlohmann::json config_to_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["network"] = {{"input_channels", cfg.input_channels},
                    {"input_height", cfg.input_height},
                    {"input_width", cfg.input_width},
                    {"layers", cfg.layers},
                    {"pool_weight", cfg.pool_weight}};
    j["neuron"] = {{"v_thr", cfg.neuron.v_thr},
                   {"current_decay", cfg.neuron.current_decay},
                   {"voltage_decay", cfg.neuron.voltage_decay},
                   {"tau_grad", cfg.neuron.tau_grad},
                   {"scale_grad", cfg.neuron.scale_grad},
                   {"true_rate", cfg.neuron.true_rate},
                   {"false_rate", cfg.neuron.false_rate}};
    j["training"] = {{"epochs", cfg.epochs},
                     {"lr", cfg.lr},
                     {"seed", cfg.seed},
                     {"sample_window", cfg.sample_window},
                     {"bin_width", cfg.bin_width},
                     {"train_fraction", cfg.train_fraction},
                     {"init_gain", cfg.init_gain},
                     {"train_delays", cfg.train_delays},
                     {"grad_clip", cfg.grad_clip},
                     {"adam_eps", cfg.adam_eps},
                     {"target_test_acc", cfg.target_test_acc}};
    j["data"] = {{"dir", cfg.data_dir},
                 {"classes", cfg.classes},
                 {"per_class", cfg.per_class},
                 {"resolution", cfg.resolution},
                 {"duration", cfg.duration},
                 {"noise_regime", cfg.noise_regime},
                 {"signal_event_rate", cfg.signal_event_rate},
                 {"crop", cfg.crop}};
    j["output"] = {{"report", cfg.report_path},
                   {"checkpoint", cfg.checkpoint_path},
                   {"confusion", cfg.confusion_path}};
    return j;
}

// Report JSON. `omit_timing` zeroes wall-clock fields so reruns with the
// same seed produce byte-identical files.
inline nlohmann::json report_to_json(const TrainReport& report, const RunConfig& cfg,
                                     bool omit_timing = false) {
    nlohmann::json j;
    j["config"] = config_to_json(cfg);
    j["initial"] = {{"train_acc", report.initial_train_acc},
                    {"test_acc", report.initial_test_acc}};
    j["epochs"] = nlohmann::json::array();
    for (const auto& e : report.epochs)
        j["epochs"].push_back({{"train_loss", e.train_loss},
                               {"train_acc", e.train_acc},
                               {"test_acc", e.test_acc},
                               {"wall_s", omit_timing ? 0.0 : e.wall_s}});
    j["best_epoch"] = report.best_epoch;
    j["best_test_acc"] = report.best_test_acc;
    j["confusion"] = report.confusion;
    j["wall_clock_s"] = omit_timing ? 0.0 : report.wall_clock_s;
    return j;
}

}  // namespace ndm
