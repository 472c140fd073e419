// Command-line front end: synthesize feature datasets, run class-incremental
// training, sweep the gradient checks, and summarize finished run directories.

#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "cign/experiment.hpp"

namespace {

// Holds raw CLI values together with their CLI11 options so the precedence
// logic can tell whether each flag was explicitly given.
struct CliOverrides {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    int tasks = 0;
    int classes_per_task = 0;
    int depth = 0;
    double tau = 0.0;
    int epochs = 0;
    double lr = 0.0;
    std::size_t buffer = 0;
    std::string assignment;
    std::string attention;
    std::string denominator;
    bool disable_kl = false;
    bool disable_ce_new = false;
    bool disable_ctl = false;
    bool disable_buffer = false;

    CLI::Option* o_config = nullptr;
    CLI::Option* o_out = nullptr;
    CLI::Option* o_seed = nullptr;
    CLI::Option* o_tasks = nullptr;
    CLI::Option* o_cpt = nullptr;
    CLI::Option* o_depth = nullptr;
    CLI::Option* o_tau = nullptr;
    CLI::Option* o_epochs = nullptr;
    CLI::Option* o_lr = nullptr;
    CLI::Option* o_buffer = nullptr;
    CLI::Option* o_assignment = nullptr;
    CLI::Option* o_attention = nullptr;
    CLI::Option* o_denominator = nullptr;
    CLI::Option* o_dis_kl = nullptr;
    CLI::Option* o_dis_ce = nullptr;
    CLI::Option* o_dis_ctl = nullptr;
    CLI::Option* o_dis_buf = nullptr;
};

void register_options(CLI::App* sub, CliOverrides& ov) {
    ov.o_config = sub->add_option("--config", ov.config_path, "JSON config file");
    ov.o_out = sub->add_option("--out", ov.out_dir, "output directory");
    ov.o_seed = sub->add_option("--seed", ov.seed, "root random seed");
    ov.o_tasks = sub->add_option("--tasks", ov.tasks, "number of sequential tasks");
    ov.o_cpt = sub->add_option("--classes-per-task", ov.classes_per_task,
                               "classes introduced per task");
    ov.o_depth = sub->add_option("--depth", ov.depth, "attention stack depth");
    ov.o_tau = sub->add_option("--tau", ov.tau, "contrastive temperature");
    ov.o_epochs = sub->add_option("--epochs", ov.epochs, "epochs per task");
    ov.o_lr = sub->add_option("--lr", ov.lr, "Adam learning rate");
    ov.o_buffer = sub->add_option("--buffer", ov.buffer, "rehearsal capacity per class");
    ov.o_assignment =
        sub->add_option("--assignment", ov.assignment, "grouping assignment: soft|hard");
    ov.o_attention =
        sub->add_option("--attention", ov.attention, "attention update: literal|projected");
    ov.o_denominator = sub->add_option("--eq9-denominator", ov.denominator,
                                       "contrastive denominator: as-written|with-positive");
    ov.o_dis_kl = sub->add_flag("--disable-kl", ov.disable_kl, "drop the distillation term");
    ov.o_dis_ce = sub->add_flag("--disable-ce-new", ov.disable_ce_new,
                                "drop the new-token identification term");
    ov.o_dis_ctl = sub->add_flag("--disable-ctl", ov.disable_ctl, "drop the contrastive term");
    ov.o_dis_buf = sub->add_flag("--disable-buffer", ov.disable_buffer, "train without replay");
}

// Precedence, strongest first: explicit flag, config file, CIGN_SEED (seed
// only), built-in default.
cign::ExperimentConfig build_config(const CliOverrides& ov) {
    cign::ExperimentConfig cfg;
    bool seed_in_file = false;
    if (ov.o_config->count() > 0) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(cign::io::read_file(ov.config_path));
        } catch (const nlohmann::json::exception& e) {
            throw cign::ConfigError("cannot parse config " + ov.config_path + ": " + e.what());
        }
        cfg = cign::config_from_json(j);
        seed_in_file = j.contains("seed");
    }
    if (ov.o_seed->count() == 0 && !seed_in_file) {
        if (const char* env = std::getenv("CIGN_SEED")) {
            try {
                cfg.train.seed = std::stoull(env);
            } catch (const std::exception&) {
                throw cign::ConfigError(std::string("CIGN_SEED is not an integer: ") + env);
            }
        }
    }
    if (ov.o_seed->count() > 0) cfg.train.seed = ov.seed;
    if (ov.o_out->count() > 0) cfg.out_dir = ov.out_dir;
    if (ov.o_tasks->count() > 0) cfg.train.tasks = ov.tasks;
    if (ov.o_cpt->count() > 0) cfg.train.classes_per_task = ov.classes_per_task;
    if (ov.o_depth->count() > 0) cfg.train.depth = ov.depth;
    if (ov.o_tau->count() > 0) cfg.train.tau = ov.tau;
    if (ov.o_epochs->count() > 0) cfg.train.epochs = ov.epochs;
    if (ov.o_lr->count() > 0) cfg.train.learning_rate = ov.lr;
    if (ov.o_buffer->count() > 0) cfg.train.buffer_capacity = ov.buffer;
    if (ov.o_assignment->count() > 0)
        cfg.train.assignment = cign::assignment_mode_from_string(ov.assignment);
    if (ov.o_attention->count() > 0)
        cfg.train.attention = cign::attention_variant_from_string(ov.attention);
    if (ov.o_denominator->count() > 0)
        cfg.train.denominator = cign::contrastive_denominator_from_string(ov.denominator);
    if (ov.o_dis_kl->count() > 0) cfg.train.disable_kl = true;
    if (ov.o_dis_ce->count() > 0) cfg.train.disable_ce_new = true;
    if (ov.o_dis_ctl->count() > 0) cfg.train.disable_ctl = true;
    if (ov.o_dis_buf->count() > 0) cfg.train.disable_buffer = true;
    return cfg;
}

int cmd_synth(const CliOverrides& ov) {
    cign::ExperimentConfig cfg = build_config(ov);
    cign::SyntheticSpec spec = cfg.synth_spec();
    spec.validate();
    cign::FeatureDataset ds = cign::generate_synthetic(spec);
    cign::save_features(ds, cfg.out_dir);

    const auto manifest = nlohmann::json::parse(
        cign::io::read_file(std::filesystem::path(cfg.out_dir) / "manifest.json"));
    std::size_t train_n = ds.indices(cign::Split::Train).size();
    std::size_t val_n = ds.indices(cign::Split::Val).size();
    std::size_t test_n = ds.indices(cign::Split::Test).size();
    double probe = cign::nearest_centroid_accuracy(ds, cign::Split::Train, cign::Split::Test);

    std::printf("dataset %s written to %s\n", ds.name.c_str(), cfg.out_dir.c_str());
    std::printf("classes=%d dim=%zu patches=%zu\n", ds.num_classes, ds.dim, ds.patches);
    std::printf("samples train=%zu val=%zu test=%zu\n", train_n, val_n, test_n);
    std::printf("payload_crc32=%08x\n", manifest.at("payload_crc32").get<std::uint32_t>());
    std::printf("centroid_probe_accuracy=%.6f\n", probe);
    return 0;
}

int cmd_run(const CliOverrides& ov) {
    cign::ExperimentConfig cfg = build_config(ov);
    cign::RunResult result = cign::run_experiment(cfg);

    const std::size_t last = result.audio.rows.size() - 1;
    auto line = [&](const char* name, const cign::AccuracyMatrix& m) {
        std::printf("%-13s avg_accuracy=%.6f", name, cign::average_accuracy(m, last));
        if (last > 0) std::printf(" forgetting=%.6f", cign::forgetting(m, last));
        std::printf("\n");
    };
    std::printf("finished %zu task(s); artifacts in %s\n", result.audio.rows.size(),
                cfg.out_dir.c_str());
    line("audio", result.audio);
    line("visual", result.visual);
    line("audio_visual", result.audio_visual);
    return 0;
}

int cmd_gradcheck(std::uint64_t seed, bool inject_fault) {
    const double tolerance = 1e-4;
    cign::GradcheckReport report = cign::run_gradcheck(seed, tolerance, 10, inject_fault);
    double chain_err = cign::full_chain_grad_error(seed);
    bool chain_ok = chain_err <= tolerance;

    for (const auto& line : report.lines) {
        std::printf("%-24s max_rel_err=%.3e %s\n", line.name.c_str(), line.max_error,
                    line.ok ? "PASS" : "FAIL");
    }
    std::printf("%-24s max_rel_err=%.3e %s\n", "full_chain", chain_err,
                chain_ok ? "PASS" : "FAIL");
    if (!report.all_ok || !chain_ok) {
        std::fprintf(stderr, "gradient check failed (tolerance %.1e)\n", tolerance);
        return 1;
    }
    std::printf("all gradient checks passed (tolerance %.1e)\n", tolerance);
    return 0;
}

int cmd_report(const std::string& run_dir) {
    cign::Report report = cign::build_report(run_dir);
    cign::io::write_file_atomic(std::filesystem::path(run_dir) / "report.csv",
                                cign::report_csv(report));
    std::fputs(cign::report_table(report).c_str(), stdout);
    std::printf("wrote %s\n", (std::filesystem::path(run_dir) / "report.csv").string().c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"continual audio-visual grouping network"};
    app.require_subcommand(1);

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic feature dataset");
    CliOverrides synth_ov;
    register_options(synth, synth_ov);

    CLI::App* run = app.add_subcommand("run", "train and evaluate a task sequence");
    CliOverrides run_ov;
    register_options(run, run_ov);

    CLI::App* gradcheck =
        app.add_subcommand("gradcheck", "finite-difference check of every backward rule");
    std::uint64_t gc_seed = 1;
    gradcheck->add_option("--seed", gc_seed, "random seed for probe tensors");
    bool inject_fault = false;
    gradcheck->add_flag("--inject-fault", inject_fault, "corrupt one backward rule on purpose")
        ->group("");

    CLI::App* report = app.add_subcommand("report", "summarize a finished run directory");
    std::string report_dir;
    report->add_option("dir", report_dir, "run directory with metrics.json")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(synth_ov);
        if (run->parsed()) return cmd_run(run_ov);
        if (gradcheck->parsed()) return cmd_gradcheck(gc_seed, inject_fault);
        if (report->parsed()) return cmd_report(report_dir);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
