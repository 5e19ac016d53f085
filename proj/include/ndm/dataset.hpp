#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ndm/errors.hpp"
#include "ndm/event.hpp"

namespace ndm {

struct ManifestEntry {
    std::string path;  // relative to the manifest's directory
    int label = 0;
};

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open manifest " + manifest_path.string());
    std::vector<ManifestEntry> entries;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const std::size_t comma = line.rfind(',');
        if (comma == std::string::npos)
            throw ParseError("manifest line " + std::to_string(line_no) + ": expected path,label");
        ManifestEntry e;
        e.path = line.substr(0, comma);
        try {
            e.label = std::stoi(line.substr(comma + 1));
        } catch (const std::exception&) {
            throw ParseError("manifest line " + std::to_string(line_no) + ": bad label");
        }
        entries.push_back(std::move(e));
    }
    return entries;
}

inline void write_manifest(const std::filesystem::path& manifest_path,
                           const std::vector<ManifestEntry>& entries) {
    std::ofstream out(manifest_path, std::ios::binary);
    if (!out) throw IoError("cannot write manifest " + manifest_path.string());
    out << "# path,label\n";
    for (const auto& e : entries) out << e.path << "," << e.label << "\n";
}

// Reads .ndme binary or .csv by extension.
inline EventStream load_event_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open event file " + path.string());
    if (path.extension() == ".csv") {
        return parse_events_csv(in);
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_events_binary(buf.str());
}

// Deterministic stratified split. Per class: shuffle, take floor(n * fraction)
// for training, clamped to [1, n-1] whenever the class has >= 2 samples so
// both partitions see it. Returns (train indices, test indices).
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_dataset(
    const std::vector<int>& labels, double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw DomainError("split_dataset: train_fraction must be in (0,1)");
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

    std::mt19937_64 rng(seed);
    std::vector<std::size_t> train, test;
    for (auto& [label, group] : by_class) {
        std::shuffle(group.begin(), group.end(), rng);
        const std::size_t n = group.size();
        std::size_t n_train = std::size_t(double(n) * train_fraction);
        if (n >= 2) n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
        for (std::size_t i = 0; i < n; ++i)
            (i < n_train ? train : test).push_back(group[i]);
    }
    return {std::move(train), std::move(test)};
}

}  // namespace ndm
