#pragma once

// Experiment orchestration behind the command-line tool: flat JSON config
// round-tripping, run-directory artifacts (metrics, accuracy matrix CSV,
// training log, checkpoint), the gradient-check entry point, and report
// assembly from a finished run directory.

#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cign/continual.hpp"
#include "cign/data.hpp"
#include "cign/errors.hpp"
#include "cign/gradcheck.hpp"
#include "cign/io.hpp"
#include "cign/losses.hpp"
#include "cign/model.hpp"
#include "cign/seeding.hpp"

namespace cign {

// Everything a run needs: the training protocol knobs plus either synthetic
// generation parameters or a path to a previously saved dataset.
struct ExperimentConfig {
    TrainConfig train;
    int train_per_class = 100;
    int val_per_class = 0;
    int test_per_class = 20;
    double sep_scale = 0.6;
    double noise_sigma = 0.1;
    double rho = 0.8;
    std::string dataset_dir;           // empty: generate synthetic data
    std::string out_dir = "run_out";

    int num_classes() const { return train.tasks * train.classes_per_task; }

    SyntheticSpec synth_spec() const {
        SyntheticSpec spec;
        spec.num_classes = num_classes();
        spec.dim = train.dim;
        spec.patches = train.patches;
        spec.train_per_class = train_per_class;
        spec.val_per_class = val_per_class;
        spec.test_per_class = test_per_class;
        spec.sep_scale = sep_scale;
        spec.noise_sigma = noise_sigma;
        spec.rho = rho;
        spec.seed = derive_seed(train.seed, 7);
        return spec;
    }
};

inline nlohmann::json to_json(const ExperimentConfig& cfg) {
    nlohmann::json j;
    j["seed"] = cfg.train.seed;
    j["tasks"] = cfg.train.tasks;
    j["classes_per_task"] = cfg.train.classes_per_task;
    j["dim"] = cfg.train.dim;
    j["patches"] = cfg.train.patches;
    j["depth"] = cfg.train.depth;
    j["tau"] = cfg.train.tau;
    j["epochs"] = cfg.train.epochs;
    j["batch_size"] = cfg.train.batch_size;
    j["learning_rate"] = cfg.train.learning_rate;
    j["buffer_capacity"] = cfg.train.buffer_capacity;
    j["assignment"] = to_string(cfg.train.assignment);
    j["attention"] = to_string(cfg.train.attention);
    j["eq9_denominator"] = to_string(cfg.train.denominator);
    j["disable_kl"] = cfg.train.disable_kl;
    j["disable_ce_new"] = cfg.train.disable_ce_new;
    j["disable_ctl"] = cfg.train.disable_ctl;
    j["disable_buffer"] = cfg.train.disable_buffer;
    j["init_sigma"] = cfg.train.init_sigma;
    j["train_per_class"] = cfg.train_per_class;
    j["val_per_class"] = cfg.val_per_class;
    j["test_per_class"] = cfg.test_per_class;
    j["sep_scale"] = cfg.sep_scale;
    j["noise_sigma"] = cfg.noise_sigma;
    j["rho"] = cfg.rho;
    j["dataset"] = cfg.dataset_dir;
    j["out"] = cfg.out_dir;
    return j;
}

// Strict parse: unknown keys are config errors so typos cannot silently fall
// back to defaults.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    ExperimentConfig cfg;
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "seed") cfg.train.seed = value.get<std::uint64_t>();
            else if (key == "tasks") cfg.train.tasks = value.get<int>();
            else if (key == "classes_per_task") cfg.train.classes_per_task = value.get<int>();
            else if (key == "dim") cfg.train.dim = value.get<std::size_t>();
            else if (key == "patches") cfg.train.patches = value.get<std::size_t>();
            else if (key == "depth") cfg.train.depth = value.get<int>();
            else if (key == "tau") cfg.train.tau = value.get<double>();
            else if (key == "epochs") cfg.train.epochs = value.get<int>();
            else if (key == "batch_size") cfg.train.batch_size = value.get<int>();
            else if (key == "learning_rate") cfg.train.learning_rate = value.get<double>();
            else if (key == "buffer_capacity")
                cfg.train.buffer_capacity = value.get<std::size_t>();
            else if (key == "assignment")
                cfg.train.assignment = assignment_mode_from_string(value.get<std::string>());
            else if (key == "attention")
                cfg.train.attention = attention_variant_from_string(value.get<std::string>());
            else if (key == "eq9_denominator")
                cfg.train.denominator =
                    contrastive_denominator_from_string(value.get<std::string>());
            else if (key == "disable_kl") cfg.train.disable_kl = value.get<bool>();
            else if (key == "disable_ce_new") cfg.train.disable_ce_new = value.get<bool>();
            else if (key == "disable_ctl") cfg.train.disable_ctl = value.get<bool>();
            else if (key == "disable_buffer") cfg.train.disable_buffer = value.get<bool>();
            else if (key == "init_sigma") cfg.train.init_sigma = value.get<double>();
            else if (key == "train_per_class") cfg.train_per_class = value.get<int>();
            else if (key == "val_per_class") cfg.val_per_class = value.get<int>();
            else if (key == "test_per_class") cfg.test_per_class = value.get<int>();
            else if (key == "sep_scale") cfg.sep_scale = value.get<double>();
            else if (key == "noise_sigma") cfg.noise_sigma = value.get<double>();
            else if (key == "rho") cfg.rho = value.get<double>();
            else if (key == "dataset") cfg.dataset_dir = value.get<std::string>();
            else if (key == "out") cfg.out_dir = value.get<std::string>();
            else throw ConfigError("unknown config key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed config value: ") + e.what());
    }
    return cfg;
}

inline ExperimentConfig load_config_file(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(io::read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("cannot parse config " + path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

inline std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline FeatureDataset resolve_dataset(const ExperimentConfig& cfg) {
    if (!cfg.dataset_dir.empty()) {
        FeatureDataset ds = load_features(cfg.dataset_dir);
        return ds;
    }
    return generate_synthetic(cfg.synth_spec());
}

inline nlohmann::json metrics_json(const RunResult& result) {
    auto block = [](const AccuracyMatrix& m) {
        nlohmann::json out;
        std::vector<double> avg;
        for (std::size_t t = 0; t < m.rows.size(); ++t) avg.push_back(average_accuracy(m, t));
        out["average_accuracy"] = avg;
        if (m.rows.size() > 1) {
            std::vector<double> forg;
            for (std::size_t t = 1; t < m.rows.size(); ++t) forg.push_back(forgetting(m, t));
            out["forgetting"] = forg;
        }
        return out;
    };
    nlohmann::json j;
    j["audio"] = block(result.audio);
    j["visual"] = block(result.visual);
    j["audio_visual"] = block(result.audio_visual);
    return j;
}

inline std::string accuracy_matrix_csv(const RunResult& result) {
    std::ostringstream out;
    out << "modality,task_trained,task_evaluated,accuracy\n";
    auto emit = [&](const char* name, const AccuracyMatrix& m) {
        for (std::size_t t = 0; t < m.rows.size(); ++t) {
            for (std::size_t i = 0; i < m.rows[t].size(); ++i) {
                out << name << ',' << t << ',' << i << ',' << format_g17(m.rows[t][i]) << '\n';
            }
        }
    };
    emit("audio", result.audio);
    emit("visual", result.visual);
    emit("audio_visual", result.audio_visual);
    return out.str();
}

inline nlohmann::json log_line_json(const StepInfo& info, const LossBreakdown& lb) {
    nlohmann::json j;
    j["step"] = info.step;
    j["task"] = info.task;
    j["epoch"] = info.epoch;
    j["kl"] = lb.kl;
    j["ce_new"] = lb.ce_new;
    j["bce_audio"] = lb.bce_audio;
    j["bce_visual"] = lb.bce_visual;
    j["ctl_audio"] = lb.ctl_audio;
    j["ctl_visual"] = lb.ctl_visual;
    j["total"] = lb.total;
    return j;
}

// Runs the configured experiment and writes every artifact into the output
// directory: config.json (effective config), train_log.jsonl, metrics.json,
// accuracy_matrix.csv, and checkpoint/.
inline RunResult run_experiment(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    const fs::path out(cfg.out_dir);
    fs::create_directories(out);
    io::write_file_atomic(out / "config.json", to_json(cfg).dump(2) + "\n");

    FeatureDataset ds = resolve_dataset(cfg);
    std::ostringstream log;
    RunResult result = run_sequence(ds, cfg.train, [&](const StepInfo& info,
                                                       const LossBreakdown& lb) {
        log << log_line_json(info, lb).dump() << '\n';
    });

    io::write_file_atomic(out / "train_log.jsonl", log.str());
    io::write_file_atomic(out / "metrics.json", metrics_json(result).dump(2) + "\n");
    io::write_file_atomic(out / "accuracy_matrix.csv", accuracy_matrix_csv(result));
    result.final_model->save(out / "checkpoint");
    return result;
}

// Toy-scale gradient check of the complete forward and loss chain (both
// modalities, all four loss families) with respect to the class tokens.
inline double full_chain_grad_error(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const std::size_t d = 8, k = 4, p = 4;
    Tensor audio0 = Tensor::randn({1, d}, rng, 0.5);
    Tensor audio1 = Tensor::randn({1, d}, rng, 0.5);
    Tensor visual = Tensor::randn({p, d}, rng, 0.5);
    Tensor wq = Tensor::randn({d, d}, rng, 0.3), wk = Tensor::randn({d, d}, rng, 0.3);
    Tensor wv = Tensor::randn({d, d}, rng, 0.3), wo = Tensor::randn({d, d}, rng, 0.3);
    Tensor head_w = Tensor::randn({d, 1}, rng, 0.5);
    Tensor tok_w = Tensor::randn({d, 2}, rng, 0.5);
    Tensor tok_b = Tensor::randn({2}, rng, 0.5);
    Tensor frozen = Tensor::randn({2, d}, rng, 0.5);
    Tensor anchor0 = Tensor::randn({d}, rng);
    Tensor anchor1 = Tensor::randn({d}, rng);
    Tensor labels(Shape{k}, 0.0);
    labels.set(0, 1.0);

    ScalarFn chain = [&](Tape& tape, const Tensor& tokens) {
        AttentionAggregator agg;
        agg.depth = 3;
        GroupingBlock block;
        block.wq = wq;
        block.wk = wk;
        block.wv = wv;
        block.wo = wo;

        auto [fa, ca] = aggregate(tape, audio0, tokens, agg);
        auto [fv, cv] = aggregate(tape, visual, tokens, agg);
        GroupedSlice ga = group(tape, fa, ca, block);
        GroupedSlice gv = group(tape, fv, cv, block);
        Tensor pa = classify(tape, ga.g, ClassifierHead{head_w, Tensor::scalar(0.0)});
        Tensor pv = classify(tape, gv.g, ClassifierHead{head_w, Tensor::scalar(0.0)});

        LossParts parts;
        parts.bce_audio = bce_class(tape, pa, labels);
        parts.bce_visual = bce_class(tape, pv, labels);
        Tensor new_rows = rows(tape, tokens, 2, 2);
        parts.ce_new = ce_new_tokens(
            tape, token_class_probs(tape, new_rows, TokenHead{tok_w, tok_b}),
            identity_one_hot(2));
        parts.kl = kl_divergence_rows(tape, softmax(tape, rows(tape, tokens, 0, 2), 1),
                                      softmax(tape, frozen, 1));
        parts.kl_applied = true;

        auto second = aggregate(tape, audio1, tokens, agg);
        GroupedSlice ga2 = group(tape, second.first, second.second, block);
        ContrastiveBatch cb;
        cb.tau = 0.2;
        cb.prev = {anchor0, anchor1};
        cb.prev_class = {0, 1};
        cb.curr_old = {rows(tape, ga.g, 0, 1), rows(tape, ga2.g, 1, 1)};
        cb.curr_old_class = {0, 1};
        cb.curr_new = {rows(tape, ga.g, 2, 1), rows(tape, gv.g, 3, 1)};
        cb.curr_new_class = {2, 3};
        parts.ctl_audio = continual_contrastive(tape, cb, ContrastiveDenominator::AsWritten);

        ContrastiveBatch cv_batch;
        cv_batch.tau = 0.2;
        cv_batch.prev = {anchor0, anchor1};
        cv_batch.prev_class = {0, 1};
        cv_batch.curr_old = {rows(tape, gv.g, 0, 1), rows(tape, gv.g, 1, 1)};
        cv_batch.curr_old_class = {0, 1};
        cv_batch.curr_new = {rows(tape, gv.g, 2, 1), rows(tape, ga.g, 3, 1)};
        cv_batch.curr_new_class = {2, 3};
        parts.ctl_visual = continual_contrastive(tape, cv_batch, ContrastiveDenominator::AsWritten);
        return total_loss(tape, parts).total_tensor;
    };

    Tensor tokens = Tensor::randn({k, d}, rng, 0.5, true);
    return grad_check(chain, tokens);
}

// Per-task summary extracted from a run directory's metrics.json.
struct ReportRow {
    std::string modality;
    std::size_t task = 0;
    double average_accuracy = 0.0;
    std::optional<double> forget;
};

struct Report {
    std::vector<ReportRow> rows;

    // Final-task values per modality, for the printed summary table.
    std::vector<ReportRow> final_rows() const {
        std::vector<ReportRow> out;
        for (const std::string& name : {"audio", "visual", "audio_visual"}) {
            const ReportRow* last = nullptr;
            for (const auto& r : rows) {
                if (r.modality == name && (!last || r.task > last->task)) last = &r;
            }
            if (last) out.push_back(*last);
        }
        return out;
    }
};

inline Report build_report(const std::filesystem::path& run_dir) {
    namespace fs = std::filesystem;
    const fs::path metrics_path = run_dir / "metrics.json";
    const fs::path matrix_path = run_dir / "accuracy_matrix.csv";
    std::string missing;
    for (const fs::path& p : {metrics_path, matrix_path}) {
        if (!fs::exists(p)) missing += (missing.empty() ? "" : ", ") + p.string();
    }
    if (!missing.empty()) {
        throw CorruptFileError("run directory " + run_dir.string() +
                               " is missing expected artifacts: " + missing);
    }

    nlohmann::json metrics;
    try {
        metrics = nlohmann::json::parse(io::read_file(metrics_path));
    } catch (const nlohmann::json::exception& e) {
        throw CorruptFileError("bad metrics.json in " + run_dir.string() + ": " + e.what());
    }

    Report report;
    for (const std::string& name : {"audio", "visual", "audio_visual"}) {
        if (!metrics.contains(name)) {
            throw CorruptFileError("metrics.json lacks the '" + name + "' block");
        }
        const auto& block = metrics.at(name);
        auto avg = block.at("average_accuracy").get<std::vector<double>>();
        std::vector<double> forg;
        if (block.contains("forgetting")) forg = block.at("forgetting").get<std::vector<double>>();
        for (std::size_t t = 0; t < avg.size(); ++t) {
            ReportRow row;
            row.modality = name;
            row.task = t;
            row.average_accuracy = avg[t];
            if (t >= 1 && t - 1 < forg.size()) row.forget = forg[t - 1];
            report.rows.push_back(row);
        }
    }
    return report;
}

inline std::string report_csv(const Report& report) {
    std::ostringstream out;
    out << "modality,task,average_accuracy,forgetting\n";
    for (const auto& row : report.rows) {
        out << row.modality << ',' << row.task << ',' << format_g17(row.average_accuracy) << ',';
        if (row.forget) out << format_g17(*row.forget);
        out << '\n';
    }
    return out.str();
}

inline std::string report_table(const Report& report) {
    std::ostringstream out;
    out << "modality        avg_accuracy    forgetting\n";
    for (const auto& row : report.final_rows()) {
        char acc[32];
        std::snprintf(acc, sizeof(acc), "%-15.6f", row.average_accuracy);
        std::string forg = "n/a";
        if (row.forget) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.6f", *row.forget);
            forg = buf;
        }
        std::string name = row.modality;
        name.resize(16, ' ');
        out << name << acc << ' ' << forg << '\n';
    }
    return out.str();
}

}  // namespace cign
