// ndm: event-stream spiking network trainer and tools.
//
// Verbs: gen-data, train, eval, predict, inspect. Machine-parseable output
// goes to stdout, human-readable logging to stderr. Exit codes: 0 success,
// 2 config/validation, 3 data/format, 4 numeric failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ndm/checkpoint.hpp"
#include "ndm/config.hpp"
#include "ndm/dataset.hpp"
#include "ndm/errors.hpp"
#include "ndm/event.hpp"
#include "ndm/layers.hpp"
#include "ndm/synth.hpp"
#include "ndm/training.hpp"

namespace fs = std::filesystem;
using Real = float;

namespace {

std::uint64_t sample_seed(std::uint64_t base, int class_id, int sample_id) {
    std::uint64_t s = base;
    s = s * 0x100000001b3ULL + std::uint64_t(class_id) + 1;
    s = s * 0x100000001b3ULL + std::uint64_t(sample_id) + 1;
    return s;
}

ndm::SpikeTensor preprocess(const ndm::EventStream& stream, int crop_side,
                            double sample_window, double bin_width) {
    const ndm::EventStream* src = &stream;
    ndm::EventStream cropped;
    if (crop_side > 0) {
        cropped = ndm::crop_center(stream, crop_side);
        src = &cropped;
    }
    return ndm::bin_to_spike_tensor(*src, sample_window, bin_width);
}

std::vector<ndm::LabeledTensor> load_dataset(const fs::path& dir, int crop_side,
                                             double sample_window, double bin_width) {
    const auto entries = ndm::read_manifest(dir / "manifest.csv");
    std::vector<ndm::LabeledTensor> samples;
    samples.reserve(entries.size());
    for (const auto& entry : entries) {
        const auto stream = ndm::load_event_file(dir / entry.path);
        samples.push_back({preprocess(stream, crop_side, sample_window, bin_width), entry.label});
    }
    return samples;
}

std::vector<ndm::LabeledTensor> synth_dataset(const ndm::RunConfig& cfg,
                                              std::vector<int>& labels_out) {
    ndm::SynthConfig synth;
    synth.resolution = cfg.resolution;
    synth.duration = cfg.duration;
    synth.class_count = cfg.classes;
    synth.noise_regime = ndm::noise_regime_from_string(cfg.noise_regime);
    synth.signal_event_rate = cfg.signal_event_rate;
    std::vector<ndm::LabeledTensor> samples;
    for (int c = 0; c < cfg.classes; ++c)
        for (int i = 0; i < cfg.per_class; ++i) {
            synth.seed = sample_seed(cfg.seed, c, i);
            const auto stream = ndm::synth_generate(c, synth);
            samples.push_back(
                {preprocess(stream, cfg.crop, cfg.sample_window, cfg.bin_width), c});
            labels_out.push_back(c);
        }
    return samples;
}

void write_confusion_csv(const fs::path& path, const std::vector<std::vector<long>>& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ndm::IoError("cannot write confusion matrix " + path.string());
    for (const auto& row : m) {
        for (std::size_t j = 0; j < row.size(); ++j)
            out << row[j] << (j + 1 < row.size() ? "," : "");
        out << "\n";
    }
}

int cmd_gen_data(const std::string& out_dir, int classes, int per_class, int resolution,
                 double duration, const std::string& noise, double signal_rate,
                 std::uint64_t seed) {
    fs::create_directories(out_dir);
    ndm::SynthConfig cfg;
    cfg.resolution = resolution;
    cfg.duration = duration;
    cfg.class_count = classes;
    cfg.noise_regime = ndm::noise_regime_from_string(noise);
    cfg.signal_event_rate = signal_rate;
    std::vector<ndm::ManifestEntry> manifest;
    for (int c = 0; c < classes; ++c)
        for (int i = 0; i < per_class; ++i) {
            cfg.seed = sample_seed(seed, c, i);
            const auto stream = ndm::synth_generate(c, cfg);
            const std::string name = std::to_string(c) + "_" + std::to_string(i) + ".ndme";
            std::ofstream out(fs::path(out_dir) / name, std::ios::binary);
            if (!out) throw ndm::IoError("cannot write " + name + " in " + out_dir);
            const std::string bytes = ndm::write_events_binary(stream);
            out.write(bytes.data(), std::streamsize(bytes.size()));
            manifest.push_back({name, c});
        }
    ndm::write_manifest(fs::path(out_dir) / "manifest.csv", manifest);
    std::cerr << "wrote " << manifest.size() << " samples to " << out_dir << "\n";
    return 0;
}

int cmd_train(const ndm::RunConfig& cfg, bool omit_timing) {
    auto net = ndm::build_network<Real>(cfg);
    const auto shapes = net.stage_shapes();
    std::cerr << "network:";
    for (const auto& s : shapes) std::cerr << " " << s.str();
    std::cerr << " T=" << net.timesteps << "\n";

    std::vector<ndm::LabeledTensor> all;
    std::vector<int> labels;
    if (!cfg.data_dir.empty()) {
        all = load_dataset(cfg.data_dir, cfg.crop, cfg.sample_window, cfg.bin_width);
        for (const auto& s : all) labels.push_back(s.label);
    } else {
        all = synth_dataset(cfg, labels);
    }
    if (all.empty()) throw ndm::DataError("train: dataset is empty");
    for (std::size_t i = 0; i < all.size(); ++i) {
        const auto& x = all[i].x;
        if (x.channels != net.input.c || x.height != net.input.h || x.width != net.input.w)
            throw ndm::ConfigError("sample " + std::to_string(i) + " shape " +
                                   std::to_string(x.channels) + "x" + std::to_string(x.height) +
                                   "x" + std::to_string(x.width) +
                                   " does not match network.input " + net.input.str());
    }

    auto [train_idx, test_idx] = ndm::split_dataset(labels, cfg.train_fraction, cfg.seed);
    std::vector<ndm::LabeledTensor> train, test;
    for (auto i : train_idx) train.push_back(all[i]);
    for (auto i : test_idx) test.push_back(all[i]);
    std::cerr << "split: " << train.size() << " train / " << test.size() << " test\n";

    net.init_weights(cfg.seed, cfg.init_gain);
    ndm::FitConfig fit_cfg;
    fit_cfg.epochs = cfg.epochs;
    fit_cfg.lr = cfg.lr;
    fit_cfg.seed = cfg.seed;
    fit_cfg.train_delays = cfg.train_delays;
    fit_cfg.grad_clip = cfg.grad_clip;
    fit_cfg.adam_eps = cfg.adam_eps;
    fit_cfg.target_test_acc = cfg.target_test_acc;
    fit_cfg.on_epoch = [](int epoch, const ndm::TrainReport::Epoch& e) {
        std::cout << epoch << "," << e.train_loss << "," << e.train_acc << "," << e.test_acc
                  << "\n"
                  << std::flush;
    };
    auto [report, best] = ndm::fit(std::move(net), train, test, fit_cfg);

    const ndm::CheckpointMeta meta{cfg.sample_window, cfg.bin_width, std::uint32_t(cfg.crop)};
    ndm::save_checkpoint_file(cfg.checkpoint_path, best, meta);
    std::ofstream out(cfg.report_path, std::ios::binary);
    if (!out) throw ndm::IoError("cannot write report " + cfg.report_path);
    out << ndm::report_to_json(report, cfg, omit_timing).dump(2) << "\n";
    std::cerr << "best test accuracy " << report.best_test_acc << " (epoch "
              << report.best_epoch << ")\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& dataset,
             const std::string& confusion_csv) {
    auto [net, meta] = ndm::load_checkpoint_file<Real>(checkpoint);
    const auto samples = load_dataset(dataset, int(meta.crop_side), meta.sample_window_s,
                                      meta.bin_width_s);
    if (samples.empty()) throw ndm::DataError("eval: dataset is empty");
    const int n_classes = net.stage_shapes().back().units();
    for (const auto& s : samples) {
        if (s.x.channels != net.input.c || s.x.height != net.input.h ||
            s.x.width != net.input.w)
            throw ndm::ShapeError("eval: sample shape " + std::to_string(s.x.channels) + "x" +
                                  std::to_string(s.x.height) + "x" + std::to_string(s.x.width) +
                                  " vs network input " + net.input.str());
        if (s.label < 0 || s.label >= n_classes)
            throw ndm::DataError("eval: label " + std::to_string(s.label) + " out of range");
    }
    auto [accuracy, confusion] = ndm::evaluate(net, samples, n_classes);
    std::cout << "accuracy=" << accuracy << "\n";
    if (!confusion_csv.empty()) write_confusion_csv(confusion_csv, confusion);
    return 0;
}

int cmd_predict(const std::string& checkpoint, const std::string& event_file) {
    auto [net, meta] = ndm::load_checkpoint_file<Real>(checkpoint);
    const auto stream = ndm::load_event_file(event_file);
    const auto tensor = preprocess(stream, int(meta.crop_side), meta.sample_window_s,
                                   meta.bin_width_s);
    auto [cls, counts] = ndm::predict(net, tensor);
    std::cout << "class=" << cls << "\n";
    for (std::size_t j = 0; j < counts.size(); ++j)
        std::cout << counts[j] << (j + 1 < counts.size() ? "," : "\n");
    return 0;
}

int cmd_inspect(const std::string& event_file) {
    const auto stream = ndm::load_event_file(event_file);
    std::uint64_t duration_us = 0;
    std::size_t on = 0;
    if (!stream.events.empty())
        duration_us = stream.events.back().t - stream.events.front().t;
    for (const auto& e : stream.events) on += e.polarity;
    std::cout << "geometry=" << stream.width << "x" << stream.height << "\n";
    std::cout << "events=" << stream.events.size() << "\n";
    std::cout << "duration_s=" << double(duration_us) / 1e6 << "\n";
    std::cout << "on_events=" << on << "\n";
    std::cout << "off_events=" << (stream.events.size() - on) << "\n";
    const double dur = double(duration_us) / 1e6;
    std::cout << "events_per_second=" << (dur > 0 ? double(stream.events.size()) / dur : 0.0)
              << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"event-stream spiking network trainer"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic event dataset");
    std::string gen_out;
    int gen_classes = 13, gen_per_class = 10, gen_resolution = 72;
    double gen_duration = 2.0, gen_signal_rate = 5000.0;
    std::string gen_noise = "moderate";
    std::uint64_t gen_seed = 0;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--classes", gen_classes, "number of classes");
    gen->add_option("--per-class", gen_per_class, "samples per class");
    gen->add_option("--resolution", gen_resolution, "sensor side in pixels");
    gen->add_option("--duration", gen_duration, "recording duration in seconds");
    gen->add_option("--noise", gen_noise, "noise regime: bright|moderate|dark");
    gen->add_option("--signal-rate", gen_signal_rate, "signal events per second");
    gen->add_option("--seed", gen_seed, "generator seed");

    // train
    auto* train = app.add_subcommand("train", "train a network, write report + checkpoint");
    std::string train_config;
    std::optional<int> ov_epochs;
    std::optional<double> ov_lr;
    std::optional<std::uint64_t> ov_seed;
    std::optional<std::string> ov_data, ov_report, ov_checkpoint;
    bool omit_timing = false;
    train->add_option("--config", train_config, "config file (INI sections)");
    train->add_option("--epochs", ov_epochs, "override training.epochs");
    train->add_option("--lr", ov_lr, "override training.lr");
    train->add_option("--seed", ov_seed, "override training.seed");
    train->add_option("--data", ov_data, "override data.dir");
    train->add_option("--report", ov_report, "override output.report");
    train->add_option("--checkpoint", ov_checkpoint, "override output.checkpoint");
    train->add_flag("--omit-timing", omit_timing,
                    "zero wall-clock fields in the report for byte-stable reruns");

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    std::string eval_checkpoint, eval_dataset, eval_confusion = "confusion.csv";
    eval->add_option("checkpoint", eval_checkpoint, "NDMC checkpoint")->required();
    eval->add_option("dataset", eval_dataset, "dataset directory with manifest.csv")->required();
    eval->add_option("--confusion", eval_confusion, "confusion matrix CSV output path");

    // predict
    auto* predict = app.add_subcommand("predict", "classify a single event file");
    std::string predict_checkpoint, predict_file;
    predict->add_option("checkpoint", predict_checkpoint, "NDMC checkpoint")->required();
    predict->add_option("events", predict_file, "event file (.ndme or .csv)")->required();

    // inspect
    auto* inspect = app.add_subcommand("inspect", "print event stream statistics");
    std::string inspect_file;
    inspect->add_option("events", inspect_file, "event file (.ndme or .csv)")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed())
            return cmd_gen_data(gen_out, gen_classes, gen_per_class, gen_resolution,
                                gen_duration, gen_noise, gen_signal_rate, gen_seed);
        if (train->parsed()) {
            ndm::RunConfig cfg;
            if (!train_config.empty()) cfg = ndm::load_config_file(train_config);
            if (ov_epochs) cfg.epochs = *ov_epochs;
            if (ov_lr) cfg.lr = *ov_lr;
            if (ov_seed) cfg.seed = *ov_seed;
            if (ov_data) cfg.data_dir = *ov_data;
            if (ov_report) cfg.report_path = *ov_report;
            if (ov_checkpoint) cfg.checkpoint_path = *ov_checkpoint;
            return cmd_train(cfg, omit_timing);
        }
        if (eval->parsed()) return cmd_eval(eval_checkpoint, eval_dataset, eval_confusion);
        if (predict->parsed()) return cmd_predict(predict_checkpoint, predict_file);
        if (inspect->parsed()) return cmd_inspect(inspect_file);
    } catch (const ndm::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ndm::DomainError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ndm::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const ndm::Error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
