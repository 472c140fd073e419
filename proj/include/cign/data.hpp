#pragma once

// Feature datasets: synthetic generation with controllable class separation
// and cross-modal correlation, plus a binary on-disk format (json manifest
// next to a checksummed payload of little-endian doubles).

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "cign/errors.hpp"
#include "cign/io.hpp"
#include "cign/seeding.hpp"
#include "cign/tensor.hpp"

namespace cign {

enum class Split { Train, Val, Test };

inline std::string to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    throw ConfigError("invalid split value");
}

inline Split split_from_string(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    throw ConfigError("unknown split '" + s + "', expected train, val, or test");
}

struct FeatureSample {
    Tensor audio;   // 1 x D
    Tensor visual;  // P x D
    int label = 0;
    Split split = Split::Train;
};

// Parameters for the synthetic generator. Audio class means are drawn from a
// scaled standard normal; the visual mean of a class mixes a coordinate roll
// of its audio direction (weight rho) with a fresh direction (weight 1-rho),
// so rho dials how much one modality can be predicted from the other.
struct SyntheticSpec {
    int num_classes = 8;
    std::size_t dim = 32;
    std::size_t patches = 4;
    int train_per_class = 100;
    int val_per_class = 10;
    int test_per_class = 20;
    double sep_scale = 0.6;    // class mean magnitude s
    double noise_sigma = 0.1;  // per-sample noise sigma
    double rho = 0.8;          // cross-modal correlation in [0, 1]
    std::uint64_t seed = 1;

    void validate() const {
        if (num_classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
        if (dim == 0 || patches == 0) throw ConfigError("dim and patches must be positive");
        if (train_per_class < 1) throw ConfigError("need at least one training sample per class");
        if (val_per_class < 0 || test_per_class < 0) {
            throw ConfigError("per-class sample counts cannot be negative");
        }
        if (noise_sigma < 0.0) throw ConfigError("noise sigma cannot be negative");
        if (sep_scale < 0.0) throw ConfigError("separation scale cannot be negative");
        if (rho < 0.0 || rho > 1.0) throw ConfigError("rho must lie in [0, 1]");
    }
};

struct FeatureDataset {
    std::string name = "synthetic";
    int num_classes = 0;
    std::size_t dim = 0;
    std::size_t patches = 0;
    std::vector<FeatureSample> samples;

    std::vector<int> class_list() const {
        std::vector<int> out;
        for (const auto& s : samples) {
            if (std::find(out.begin(), out.end(), s.label) == out.end()) out.push_back(s.label);
        }
        std::sort(out.begin(), out.end());
        return out;
    }

    std::vector<std::size_t> indices(Split split) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < samples.size(); ++i) {
            if (samples[i].split == split) out.push_back(i);
        }
        return out;
    }

    std::vector<std::size_t> indices(Split split, const std::vector<int>& classes) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < samples.size(); ++i) {
            if (samples[i].split != split) continue;
            if (std::find(classes.begin(), classes.end(), samples[i].label) != classes.end()) {
                out.push_back(i);
            }
        }
        return out;
    }
};

namespace detail {

// Draws sigma * N(0, I) noise; sigma zero means exactly no noise, without
// touching the generator so the draw sequence stays comparable.
inline void add_noise(std::vector<double>& v, double sigma, std::mt19937_64& rng) {
    if (sigma == 0.0) return;
    std::normal_distribution<double> dist(0.0, sigma);
    for (auto& x : v) x += dist(rng);
}

}  // namespace detail

inline FeatureDataset generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    FeatureDataset ds;
    ds.num_classes = spec.num_classes;
    ds.dim = spec.dim;
    ds.patches = spec.patches;

    std::mt19937_64 mean_rng(derive_seed(spec.seed, 101));
    std::mt19937_64 noise_rng(derive_seed(spec.seed, 202));
    std::normal_distribution<double> unit(0.0, 1.0);

    // Per-class means. The visual mean rolls the audio direction one
    // coordinate to the right before mixing, so the modalities are related
    // but not identical even at rho = 1.
    std::vector<std::vector<double>> mu_audio(spec.num_classes);
    std::vector<std::vector<double>> mu_visual(spec.num_classes);
    for (int c = 0; c < spec.num_classes; ++c) {
        std::vector<double> direction(spec.dim), fresh(spec.dim);
        for (auto& v : direction) v = unit(mean_rng);
        for (auto& v : fresh) v = unit(mean_rng);
        mu_audio[c].resize(spec.dim);
        mu_visual[c].resize(spec.dim);
        for (std::size_t j = 0; j < spec.dim; ++j) {
            mu_audio[c][j] = spec.sep_scale * direction[j];
            std::size_t rolled = (j + 1) % spec.dim;
            mu_visual[c][rolled] = spec.sep_scale * (spec.rho * direction[j]);
        }
        for (std::size_t j = 0; j < spec.dim; ++j) {
            mu_visual[c][j] += spec.sep_scale * (1.0 - spec.rho) * fresh[j];
        }
    }

    auto emit = [&](int c, Split split, int count) {
        for (int i = 0; i < count; ++i) {
            std::vector<double> audio = mu_audio[c];
            detail::add_noise(audio, spec.noise_sigma, noise_rng);
            std::vector<double> visual(spec.patches * spec.dim);
            for (std::size_t p = 0; p < spec.patches; ++p) {
                std::vector<double> patch = mu_visual[c];
                detail::add_noise(patch, spec.noise_sigma, noise_rng);
                std::copy(patch.begin(), patch.end(), visual.begin() + p * spec.dim);
            }
            FeatureSample s;
            s.audio = Tensor({1, spec.dim}, std::move(audio));
            s.visual = Tensor({spec.patches, spec.dim}, std::move(visual));
            s.label = c;
            s.split = split;
            ds.samples.push_back(std::move(s));
        }
    };
    for (int c = 0; c < spec.num_classes; ++c) {
        emit(c, Split::Train, spec.train_per_class);
        emit(c, Split::Val, spec.val_per_class);
        emit(c, Split::Test, spec.test_per_class);
    }
    return ds;
}

inline void save_features(const FeatureDataset& ds, const std::filesystem::path& dir) {
    const std::size_t sample_doubles = ds.dim + ds.patches * ds.dim;
    std::vector<double> payload;
    payload.reserve(ds.samples.size() * sample_doubles);
    nlohmann::json samples = nlohmann::json::array();
    for (const auto& s : ds.samples) {
        nlohmann::json entry;
        entry["label"] = s.label;
        entry["split"] = to_string(s.split);
        entry["offset"] = payload.size() * 8;
        samples.push_back(entry);
        payload.insert(payload.end(), s.audio.raw().begin(), s.audio.raw().end());
        payload.insert(payload.end(), s.visual.raw().begin(), s.visual.raw().end());
    }
    std::string bytes = io::encode_le_doubles(payload);

    nlohmann::json manifest;
    manifest["format_version"] = 1;
    manifest["name"] = ds.name;
    manifest["num_classes"] = ds.num_classes;
    manifest["dim"] = ds.dim;
    manifest["patches"] = ds.patches;
    manifest["payload_bytes"] = bytes.size();
    manifest["payload_crc32"] = io::crc32_bytes(bytes);
    manifest["samples"] = samples;

    io::write_file_atomic(dir / "payload.bin", bytes);
    io::write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline FeatureDataset load_features(const std::filesystem::path& dir) {
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(io::read_file(dir / "manifest.json"));
    } catch (const nlohmann::json::exception& e) {
        throw CorruptFileError("bad dataset manifest in " + dir.string() + ": " + e.what());
    }
    const int version = manifest.value("format_version", -1);
    if (version != 1) {
        throw VersionError("dataset format_version " + std::to_string(version) +
                           " is not supported (expected 1)");
    }

    FeatureDataset ds;
    ds.name = manifest.value("name", "dataset");
    ds.num_classes = manifest.at("num_classes").get<int>();
    ds.dim = manifest.at("dim").get<std::size_t>();
    ds.patches = manifest.at("patches").get<std::size_t>();

    std::string bytes = io::read_file(dir / "payload.bin");
    const std::size_t expected = manifest.at("payload_bytes").get<std::size_t>();
    if (bytes.size() != expected) {
        throw CorruptFileError("dataset payload is " + std::to_string(bytes.size()) +
                               " bytes, manifest expects " + std::to_string(expected));
    }
    if (io::crc32_bytes(bytes) != manifest.at("payload_crc32").get<std::uint32_t>()) {
        throw CorruptFileError("dataset payload checksum mismatch in " + dir.string());
    }
    std::vector<double> payload = io::decode_le_doubles(bytes);

    const std::size_t sample_doubles = ds.dim + ds.patches * ds.dim;
    for (const auto& entry : manifest.at("samples")) {
        const std::size_t offset = entry.at("offset").get<std::size_t>();
        if (offset % 8 != 0 || offset / 8 + sample_doubles > payload.size()) {
            throw CorruptFileError("dataset sample offset " + std::to_string(offset) +
                                   " runs past the payload");
        }
        const std::size_t base = offset / 8;
        FeatureSample s;
        s.audio = Tensor({1, ds.dim},
                         std::vector<double>(payload.begin() + base,
                                             payload.begin() + base + ds.dim));
        s.visual = Tensor({ds.patches, ds.dim},
                          std::vector<double>(payload.begin() + base + ds.dim,
                                              payload.begin() + base + sample_doubles));
        s.label = entry.at("label").get<int>();
        s.split = split_from_string(entry.at("split").get<std::string>());
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

struct TaskSpec {
    int task_id = 0;
    std::vector<int> class_ids;
};

struct TaskSequence {
    std::vector<TaskSpec> tasks;
};

// Shuffles the class ids with the given seed and cuts the result into T
// contiguous groups. When T does not divide the class count the earliest
// tasks absorb the remainder, one extra class each.
inline TaskSequence split_tasks(std::vector<int> class_ids, int tasks, std::uint64_t seed) {
    if (tasks < 1) throw ConfigError("task count must be at least 1");
    if (static_cast<std::size_t>(tasks) > class_ids.size()) {
        throw ConfigError("cannot split " + std::to_string(class_ids.size()) + " classes into " +
                          std::to_string(tasks) + " tasks");
    }
    std::vector<int> sorted = class_ids;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw ConfigError("duplicate class id in task split");
    }

    std::mt19937_64 rng(derive_seed(seed, 303));
    fisher_yates_shuffle(class_ids, rng);

    TaskSequence seq;
    const std::size_t base = class_ids.size() / static_cast<std::size_t>(tasks);
    const std::size_t extra = class_ids.size() % static_cast<std::size_t>(tasks);
    std::size_t cursor = 0;
    for (int t = 0; t < tasks; ++t) {
        TaskSpec task;
        task.task_id = t;
        std::size_t take = base + (static_cast<std::size_t>(t) < extra ? 1 : 0);
        for (std::size_t i = 0; i < take; ++i) task.class_ids.push_back(class_ids[cursor++]);
        seq.tasks.push_back(std::move(task));
    }
    return seq;
}

// Flattens one sample into a single vector (audio, then the patch mean) for
// the nearest-centroid probe used to sanity-check generated datasets.
inline std::vector<double> centroid_features(const FeatureSample& s) {
    std::vector<double> out(s.audio.raw());
    const std::size_t d = s.audio.extent(1);
    const std::size_t p = s.visual.extent(0);
    out.resize(2 * d, 0.0);
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < d; ++j) out[d + j] += s.visual.at(i, j);
    for (std::size_t j = 0; j < d; ++j) out[d + j] /= static_cast<double>(p);
    return out;
}

// Accuracy of a nearest-centroid classifier fit on one split and evaluated on
// another. A cheap upper-level sanity probe: it should be near-perfect when
// classes are well separated and near chance when they are not.
inline double nearest_centroid_accuracy(const FeatureDataset& ds, Split fit, Split eval) {
    std::vector<std::vector<double>> means(ds.num_classes);
    std::vector<int> counts(ds.num_classes, 0);
    for (const auto& s : ds.samples) {
        if (s.split != fit) continue;
        auto f = centroid_features(s);
        if (means[s.label].empty()) means[s.label].assign(f.size(), 0.0);
        for (std::size_t j = 0; j < f.size(); ++j) means[s.label][j] += f[j];
        ++counts[s.label];
    }
    for (int c = 0; c < ds.num_classes; ++c) {
        if (counts[c] == 0) throw ConfigError("class " + std::to_string(c) + " has no fit samples");
        for (auto& v : means[c]) v /= static_cast<double>(counts[c]);
    }

    std::size_t total = 0, hits = 0;
    for (const auto& s : ds.samples) {
        if (s.split != eval) continue;
        auto f = centroid_features(s);
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int c = 0; c < ds.num_classes; ++c) {
            double dist = 0.0;
            for (std::size_t j = 0; j < f.size(); ++j) {
                double diff = f[j] - means[c][j];
                dist += diff * diff;
            }
            if (dist < best_d) {
                best_d = dist;
                best = c;
            }
        }
        ++total;
        if (best == s.label) ++hits;
    }
    if (total == 0) throw ConfigError("no samples in the evaluation split");
    return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace cign
