#pragma once

// Class-incremental training protocol: task scheduling, reservoir rehearsal,
// the per-step loss assembly, and the accuracy bookkeeping (lower-triangular
// accuracy matrices per modality with average accuracy and forgetting).

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cign/data.hpp"
#include "cign/errors.hpp"
#include "cign/losses.hpp"
#include "cign/model.hpp"
#include "cign/optim.hpp"
#include "cign/seeding.hpp"
#include "cign/tensor.hpp"

namespace cign {

// Per-class reservoir sampler over the training stream. Every sample of a
// class that has passed through has the same retention probability, so the
// rehearsal set stays an unbiased draw from each class.
class RehearsalBuffer {
public:
    RehearsalBuffer(std::size_t capacity_per_class, std::uint64_t seed)
        : capacity_(capacity_per_class), rng_(seed) {}

    void add(const FeatureSample& sample) {
        Entry& entry = per_class_[sample.label];
        ++entry.seen;
        if (capacity_ == 0) return;
        if (entry.store.size() < capacity_) {
            entry.store.push_back(sample);
        } else {
            std::uint64_t j = bounded_rand(rng_, entry.seen);
            if (j < capacity_) entry.store[static_cast<std::size_t>(j)] = sample;
        }
    }

    void add_all(const FeatureDataset& ds, const std::vector<std::size_t>& indices) {
        for (std::size_t i : indices) add(ds.samples[i]);
    }

    std::size_t capacity_per_class() const { return capacity_; }

    std::size_t total_size() const {
        std::size_t n = 0;
        for (const auto& [label, entry] : per_class_) n += entry.store.size();
        return n;
    }

    std::size_t class_count(int label) const {
        auto it = per_class_.find(label);
        return it == per_class_.end() ? 0 : it->second.store.size();
    }

    const std::vector<FeatureSample>& samples_of(int label) const {
        auto it = per_class_.find(label);
        if (it == per_class_.end()) {
            throw ConfigError("no buffered samples for class " + std::to_string(label));
        }
        return it->second.store;
    }

    std::vector<int> classes() const {
        std::vector<int> out;
        for (const auto& [label, entry] : per_class_) {
            if (!entry.store.empty()) out.push_back(label);
        }
        return out;
    }

    // Every stored sample, ordered by class then insertion slot. Pointers
    // stay valid until the buffer is mutated.
    std::vector<const FeatureSample*> all_samples() const {
        std::vector<const FeatureSample*> out;
        out.reserve(total_size());
        for (const auto& [label, entry] : per_class_)
            for (const FeatureSample& s : entry.store) out.push_back(&s);
        return out;
    }

    // Uniform draw (with replacement) over every stored sample. The caller's
    // generator drives the draw so training order owns the randomness.
    const FeatureSample& draw(std::mt19937_64& rng) const {
        std::size_t total = total_size();
        if (total == 0) throw ConfigError("cannot draw from an empty rehearsal buffer");
        std::uint64_t r = bounded_rand(rng, total);
        for (const auto& [label, entry] : per_class_) {
            if (r < entry.store.size()) return entry.store[static_cast<std::size_t>(r)];
            r -= entry.store.size();
        }
        throw ConfigError("rehearsal buffer draw fell off the end");
    }

private:
    struct Entry {
        std::vector<FeatureSample> store;
        std::uint64_t seen = 0;
    };

    std::size_t capacity_;
    std::mt19937_64 rng_;
    std::map<int, Entry> per_class_;  // ordered so iteration is deterministic
};

// Lower-triangular accuracy record: rows[t][i] is the accuracy on task i's
// test split measured after finishing training on task t.
struct AccuracyMatrix {
    std::vector<std::vector<double>> rows;
};

inline void check_matrix_row(const AccuracyMatrix& m, std::size_t t) {
    if (t >= m.rows.size()) {
        throw ConfigError("accuracy matrix has " + std::to_string(m.rows.size()) +
                          " rows, task index " + std::to_string(t) + " is out of range");
    }
    for (std::size_t k = 0; k <= t; ++k) {
        if (m.rows[k].size() != k + 1) {
            throw ConfigError("accuracy matrix row " + std::to_string(k) + " has " +
                              std::to_string(m.rows[k].size()) + " entries, expected " +
                              std::to_string(k + 1));
        }
    }
}

// Mean accuracy over all tasks seen up to and including task t.
inline double average_accuracy(const AccuracyMatrix& m, std::size_t t) {
    check_matrix_row(m, t);
    double acc = 0.0;
    for (std::size_t i = 0; i <= t; ++i) acc += m.rows[t][i];
    return acc / static_cast<double>(t + 1);
}

// Mean over earlier tasks of (best accuracy ever reached on that task before
// now) minus (accuracy on it now). Positive means performance was lost.
inline double forgetting(const AccuracyMatrix& m, std::size_t t) {
    if (t == 0) throw ConfigError("forgetting is undefined after the first task");
    check_matrix_row(m, t);
    double total = 0.0;
    for (std::size_t i = 0; i < t; ++i) {
        double best = m.rows[i][i];
        for (std::size_t k = i; k < t; ++k) best = std::max(best, m.rows[k][i]);
        total += best - m.rows[t][i];
    }
    return total / static_cast<double>(t);
}

struct TrainConfig {
    int tasks = 4;
    int classes_per_task = 2;
    std::size_t dim = 32;
    std::size_t patches = 4;
    int depth = 3;
    double tau = 0.07;
    int epochs = 30;
    int batch_size = 16;
    double learning_rate = 1e-4;
    std::size_t buffer_capacity = 50;
    std::uint64_t seed = 1;
    AssignmentMode assignment = AssignmentMode::Soft;
    AttentionVariant attention = AttentionVariant::Literal;
    ContrastiveDenominator denominator = ContrastiveDenominator::AsWritten;
    bool disable_kl = false;
    bool disable_ce_new = false;
    bool disable_ctl = false;
    bool disable_buffer = false;
    double init_sigma = 0.02;

    void validate() const {
        if (tasks < 1) throw ConfigError("need at least one task");
        if (classes_per_task < 1) throw ConfigError("need at least one class per task");
        if (dim == 0 || patches == 0) throw ConfigError("dim and patches must be positive");
        if (depth < 1) throw ConfigError("depth must be at least 1");
        if (tau <= 0.0) throw ConfigError("tau must be positive");
        if (epochs < 1) throw ConfigError("need at least one epoch");
        if (batch_size < 1) throw ConfigError("batch size must be at least 1");
        if (learning_rate <= 0.0) throw ConfigError("learning rate must be positive");
    }
};

struct StepInfo {
    long step = 0;
    int task = 0;
    int epoch = 0;
};

using LogSink = std::function<void(const StepInfo&, const LossBreakdown&)>;

struct RunResult {
    TaskSequence schedule;
    AccuracyMatrix audio;
    AccuracyMatrix visual;
    AccuracyMatrix audio_visual;
    std::optional<Model> final_model;
};

namespace detail {

inline bool contains(const std::vector<int>& v, int x) {
    for (int e : v)
        if (e == x) return true;
    return false;
}

inline Tensor mean_of(Tape& tape, const std::vector<Tensor>& terms) {
    Tensor acc = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) acc = add(tape, acc, terms[i]);
    return scale(tape, acc, 1.0 / static_cast<double>(terms.size()));
}

}  // namespace detail

// Builds the full loss for one batch. Old-class samples additionally run
// through the frozen previous-task model to anchor the contrastive term.
inline LossBreakdown step_losses(Tape& tape, Model& model, const std::optional<Model>& frozen,
                                 const std::vector<const FeatureSample*>& batch,
                                 const TaskSpec& task, const TrainConfig& cfg) {
    if (batch.empty()) throw ConfigError("training batch is empty");
    const std::size_t k = model.token_count();
    std::vector<Tensor> bce_a, bce_v;
    ContrastiveBatch cb_audio, cb_visual;
    cb_audio.tau = cfg.tau;
    cb_visual.tau = cfg.tau;
    const bool want_ctl = frozen.has_value() && !cfg.disable_ctl;

    for (const FeatureSample* s : batch) {
        ForwardResult fr = model.forward(tape, s->audio, s->visual);
        const std::size_t idx = model.class_index_of(s->label);
        Tensor y(Shape{k}, 0.0);
        y.set(idx, 1.0);
        bce_a.push_back(bce_class(tape, fr.p_audio, y));
        bce_v.push_back(bce_class(tape, fr.p_visual, y));

        if (!want_ctl) continue;
        if (detail::contains(task.class_ids, s->label)) {
            cb_audio.curr_new.push_back(rows(tape, fr.g_audio, idx, 1));
            cb_audio.curr_new_class.push_back(s->label);
            cb_visual.curr_new.push_back(rows(tape, fr.g_visual, idx, 1));
            cb_visual.curr_new_class.push_back(s->label);
        } else {
            ForwardResult pf = frozen->forward(tape, s->audio, s->visual);
            const std::size_t pidx = frozen->class_index_of(s->label);
            cb_audio.prev.push_back(rows(tape, pf.g_audio, pidx, 1));
            cb_audio.prev_class.push_back(s->label);
            cb_audio.curr_old.push_back(rows(tape, fr.g_audio, idx, 1));
            cb_audio.curr_old_class.push_back(s->label);
            cb_visual.prev.push_back(rows(tape, pf.g_visual, pidx, 1));
            cb_visual.prev_class.push_back(s->label);
            cb_visual.curr_old.push_back(rows(tape, fr.g_visual, idx, 1));
            cb_visual.curr_old_class.push_back(s->label);
        }
    }

    LossParts parts;
    parts.bce_audio = detail::mean_of(tape, bce_a);
    parts.bce_visual = detail::mean_of(tape, bce_v);
    if (!cfg.disable_kl) {
        KlResult kr = kl_token_distill(tape, model.bank());
        if (kr.applied) {
            parts.kl = kr.value;
            parts.kl_applied = true;
        }
    }
    if (!cfg.disable_ce_new) {
        Tensor probs = model.new_token_class_probs(tape);
        parts.ce_new = ce_new_tokens(tape, probs, identity_one_hot(task.class_ids.size()));
    }
    if (want_ctl && !cb_audio.prev.empty() && !cb_audio.curr_new.empty()) {
        parts.ctl_audio = continual_contrastive(tape, cb_audio, cfg.denominator);
        parts.ctl_visual = continual_contrastive(tape, cb_visual, cfg.denominator);
    }
    return total_loss(tape, parts);
}

// Accuracy of the current model on the test split of the given classes, for
// audio alone, visual alone, and the fused product prediction.
inline std::array<double, 3> evaluate_classes(Model& model, const FeatureDataset& ds,
                                              const std::vector<int>& class_ids) {
    auto idx = ds.indices(Split::Test, class_ids);
    if (idx.empty()) throw ConfigError("no test samples for the requested classes");
    std::size_t hits_a = 0, hits_v = 0, hits_av = 0;
    for (std::size_t i : idx) {
        const FeatureSample& s = ds.samples[i];
        Tape tape;
        ForwardResult fr = model.forward(tape, s.audio, s.visual);
        Tensor fused = predict_av(tape, fr.p_audio, fr.p_visual);
        int pred_a = model.class_ids()[argmax(fr.p_audio.raw())];
        int pred_v = model.class_ids()[argmax(fr.p_visual.raw())];
        int pred_av = model.class_ids()[argmax(fused.raw())];
        if (pred_a == s.label) ++hits_a;
        if (pred_v == s.label) ++hits_v;
        if (pred_av == s.label) ++hits_av;
    }
    const double n = static_cast<double>(idx.size());
    return {static_cast<double>(hits_a) / n, static_cast<double>(hits_v) / n,
            static_cast<double>(hits_av) / n};
}

// Runs the whole class-incremental sequence: expand tokens, snapshot the
// previous-task model, train on the current task's samples pooled with the
// rehearsal buffer, then update the buffer and evaluate on every task seen
// so far.
inline RunResult run_sequence(const FeatureDataset& ds, const TrainConfig& cfg,
                              const LogSink& sink = {}) {
    cfg.validate();
    if (ds.dim != cfg.dim || ds.patches != cfg.patches) {
        throw ConfigError("dataset geometry " + std::to_string(ds.dim) + "x" +
                          std::to_string(ds.patches) + " does not match config " +
                          std::to_string(cfg.dim) + "x" + std::to_string(cfg.patches));
    }
    std::vector<int> classes = ds.class_list();
    if (classes.size() != static_cast<std::size_t>(cfg.tasks) *
                              static_cast<std::size_t>(cfg.classes_per_task)) {
        throw ConfigError("dataset has " + std::to_string(classes.size()) + " classes, config " +
                          "wants " + std::to_string(cfg.tasks) + " tasks of " +
                          std::to_string(cfg.classes_per_task));
    }

    RunResult out;
    out.schedule = split_tasks(classes, cfg.tasks, derive_seed(cfg.seed, 11));
    ModelConfig mc;
    mc.dim = cfg.dim;
    mc.depth = cfg.depth;
    mc.attention = cfg.attention;
    mc.assignment = cfg.assignment;
    mc.init_sigma = cfg.init_sigma;
    Model model(mc, derive_seed(cfg.seed, 22));
    RehearsalBuffer buffer(cfg.buffer_capacity, derive_seed(cfg.seed, 33));

    long global_step = 0;
    for (int t = 0; t < cfg.tasks; ++t) {
        const TaskSpec& task = out.schedule.tasks[static_cast<std::size_t>(t)];
        std::optional<Model> frozen;
        if (t > 0) frozen.emplace(model.frozen_clone());
        model.expand_tokens(task.class_ids);
        model.reset_task_head(task.class_ids.size());
        AdamOptimizer opt(model.parameters(), cfg.learning_rate);
        std::mt19937_64 task_rng(derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(t)));

        auto train_idx = ds.indices(Split::Train, task.class_ids);
        if (train_idx.empty()) {
            throw ConfigError("task " + std::to_string(t) + " has no training samples");
        }
        // Later tasks train on the union of the current task's samples and
        // everything in the rehearsal buffer, so replay pressure scales with
        // the buffer's share of the pool instead of a fixed slice of every
        // batch.
        std::vector<const FeatureSample*> pool;
        pool.reserve(train_idx.size() + buffer.total_size());
        for (std::size_t i : train_idx) pool.push_back(&ds.samples[i]);
        if (t > 0 && !cfg.disable_buffer)
            for (const FeatureSample* s : buffer.all_samples()) pool.push_back(s);

        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            std::vector<const FeatureSample*> order = pool;
            fisher_yates_shuffle(order, task_rng);
            const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
            for (std::size_t start = 0; start < order.size(); start += bs) {
                const std::size_t stop = std::min(order.size(), start + bs);
                std::vector<const FeatureSample*> batch(order.begin() + start,
                                                        order.begin() + stop);

                Tape tape;
                LossBreakdown lb = step_losses(tape, model, frozen, batch, task, cfg);
                if (!std::isfinite(lb.total)) {
                    throw DomainError("non-finite loss " + std::to_string(lb.total) +
                                      " at step " + std::to_string(global_step) + " (task " +
                                      std::to_string(t) + ", epoch " + std::to_string(epoch) +
                                      ")");
                }
                opt.zero_grad();
                tape.backward(lb.total_tensor);
                opt.step();
                if (sink) sink(StepInfo{global_step, t, epoch}, lb);
                ++global_step;
            }
        }

        if (!cfg.disable_buffer) buffer.add_all(ds, train_idx);

        std::vector<double> row_a, row_v, row_av;
        for (int i = 0; i <= t; ++i) {
            auto acc = evaluate_classes(model, ds,
                                        out.schedule.tasks[static_cast<std::size_t>(i)].class_ids);
            row_a.push_back(acc[0]);
            row_v.push_back(acc[1]);
            row_av.push_back(acc[2]);
        }
        out.audio.rows.push_back(std::move(row_a));
        out.visual.rows.push_back(std::move(row_v));
        out.audio_visual.rows.push_back(std::move(row_av));
    }
    out.final_model.emplace(std::move(model));
    return out;
}

}  // namespace cign
