#pragma once

// Training losses: token distillation, new-token classification, per-class
// binary cross entropy, and the continual contrastive term that ties frozen
// previous-task embeddings to their current counterparts.

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "cign/errors.hpp"
#include "cign/model.hpp"
#include "cign/tensor.hpp"

namespace cign {

enum class ContrastiveDenominator { AsWritten, WithPositive };

inline std::string to_string(ContrastiveDenominator v) {
    return v == ContrastiveDenominator::AsWritten ? "as-written" : "with-positive";
}

inline ContrastiveDenominator contrastive_denominator_from_string(const std::string& s) {
    if (s == "as-written") return ContrastiveDenominator::AsWritten;
    if (s == "with-positive") return ContrastiveDenominator::WithPositive;
    throw ConfigError("unknown contrastive denominator '" + s +
                      "', expected as-written or with-positive");
}

// Keeps log() defined when a probability underflows to zero; far below any
// value a softmax can produce, so on-path gradients are untouched.
inline constexpr double kLogFloor = 1e-300;

// Row-wise KL divergence sum: sum_ij p_ij * (log p_ij - log q_ij). Zero
// entries of p contribute exactly zero. Identical p and q give exactly zero.
inline Tensor kl_divergence_rows(Tape& tape, const Tensor& p, const Tensor& q) {
    if (p.shape() != q.shape()) {
        throw ShapeError("kl shapes differ: " + shape_str(p.shape()) + " vs " +
                         shape_str(q.shape()));
    }
    Tensor log_p = log(tape, clamp_min(tape, p, kLogFloor));
    Tensor log_q = log(tape, clamp_min(tape, q, kLogFloor));
    return sum(tape, mul(tape, p, sub(tape, log_p, log_q)));
}

struct KlResult {
    Tensor value;
    bool applied = false;
};

// Distills old tokens toward their frozen previous-task values. Each token
// row is normalized to a distribution along the embedding axis before the KL
// is taken. Before any expansion has happened there is nothing to distill and
// the result is an exact zero flagged as not applied.
inline KlResult kl_token_distill(Tape& tape, const ClassTokenBank& bank) {
    if (bank.old_count == 0 || !bank.frozen_old.defined()) {
        return {Tensor::scalar(0.0), false};
    }
    if (bank.frozen_old.extent(0) != bank.old_count) {
        throw ShapeError("frozen token rows " + shape_str(bank.frozen_old.shape()) +
                         " do not match old_count " + std::to_string(bank.old_count));
    }
    Tensor current_old = rows(tape, bank.tokens, 0, bank.old_count);
    Tensor p = softmax(tape, current_old, 1);
    Tensor q = softmax(tape, bank.frozen_old, 1);
    return {kl_divergence_rows(tape, p, q), true};
}

// Cross entropy of new-token class distributions against one-hot targets,
// summed over tokens. Target rows must be exact one-hots.
inline Tensor ce_new_tokens(Tape& tape, const Tensor& probs, const Tensor& targets) {
    if (probs.shape() != targets.shape()) {
        throw ShapeError("ce shapes differ: " + shape_str(probs.shape()) + " vs " +
                         shape_str(targets.shape()));
    }
    if (targets.rank() != 2) {
        throw ShapeError("ce expects rank-2 targets, got " + shape_str(targets.shape()));
    }
    for (std::size_t r = 0; r < targets.extent(0); ++r) {
        double row_sum = 0.0;
        for (std::size_t c = 0; c < targets.extent(1); ++c) {
            double v = targets.at(r, c);
            if (v != 0.0 && v != 1.0) {
                throw DomainError("ce target row " + std::to_string(r) +
                                  " is not one-hot (entry " + std::to_string(v) + ")");
            }
            row_sum += v;
        }
        if (row_sum != 1.0) {
            throw DomainError("ce target row " + std::to_string(r) + " sums to " +
                              std::to_string(row_sum) + ", expected exactly one 1");
        }
    }
    Tensor picked = mul(tape, targets, log(tape, clamp_min(tape, probs, kLogFloor)));
    return scale(tape, sum(tape, picked), -1.0);
}

// Builds the identity one-hot target used for new tokens: token i answers for
// new class slot i.
inline Tensor identity_one_hot(std::size_t n) {
    Tensor out({n, n}, 0.0);
    for (std::size_t i = 0; i < n; ++i) out.set(i * n + i, 1.0);
    return out;
}

// Binary cross entropy summed over class slots. Probabilities are clamped to
// [1e-7, 1 - 1e-7] so a saturated head cannot produce an infinite loss.
inline Tensor bce_class(Tape& tape, const Tensor& probs, const Tensor& labels) {
    if (probs.shape() != labels.shape()) {
        throw ShapeError("bce shapes differ: " + shape_str(probs.shape()) + " vs " +
                         shape_str(labels.shape()));
    }
    for (std::size_t i = 0; i < labels.numel(); ++i) {
        double v = labels.at(i);
        if (v != 0.0 && v != 1.0) {
            throw DomainError("bce label entry " + std::to_string(i) + " is " +
                              std::to_string(v) + ", expected 0 or 1");
        }
    }
    Tensor p = clamp(tape, probs, 1e-7, 1.0 - 1e-7);
    Tensor ones(labels.shape(), 1.0);
    Tensor pos = mul(tape, labels, log(tape, p));
    Tensor neg = mul(tape, sub(tape, ones, labels), log(tape, sub(tape, ones, p)));
    return scale(tape, sum(tape, add(tape, pos, neg)), -1.0);
}

// One modality's inputs for the continual contrastive loss. prev holds the
// frozen previous-task embedding of each old-class sample in the batch;
// curr_old holds the current model's embedding of the same sample; curr_new
// holds current embeddings of new-class samples, which act as negatives.
struct ContrastiveBatch {
    std::vector<Tensor> prev;
    std::vector<int> prev_class;
    std::vector<Tensor> curr_old;
    std::vector<int> curr_old_class;
    std::vector<Tensor> curr_new;
    std::vector<int> curr_new_class;
    double tau = 0.07;
};

// InfoNCE-style loss over class-pooled cosine similarities. For each anchor
// the positive is the best current similarity among rows of its own class and
// each distinct new class contributes its best similarity as a negative. The
// as-written denominator contains only the negatives; with-positive also adds
// the positive term, giving the more common formulation.
inline Tensor continual_contrastive(Tape& tape, const ContrastiveBatch& batch,
                                    ContrastiveDenominator variant) {
    if (batch.tau <= 0.0) throw ConfigError("contrastive temperature must be positive");
    if (batch.prev.size() != batch.prev_class.size() ||
        batch.curr_old.size() != batch.curr_old_class.size() ||
        batch.curr_new.size() != batch.curr_new_class.size()) {
        throw ShapeError("contrastive batch rows and class ids differ in length");
    }
    if (batch.prev.empty()) throw ConfigError("contrastive loss needs at least one anchor");
    if (batch.curr_new.empty()) throw ConfigError("contrastive loss needs at least one negative");

    const double inv_tau = 1.0 / batch.tau;

    // Distinct new classes in first-appearance order, for deterministic sums.
    std::vector<int> new_classes;
    for (int c : batch.curr_new_class) {
        bool seen = false;
        for (int k : new_classes) seen = seen || (k == c);
        if (!seen) new_classes.push_back(c);
    }

    Tensor total;
    for (std::size_t n = 0; n < batch.prev.size(); ++n) {
        // Max-pooled positive similarity. Selecting by forward value and then
        // differentiating through the chosen scalar is the exact subgradient
        // of the max.
        Tensor best_pos;
        double best_val = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < batch.curr_old.size(); ++j) {
            if (batch.curr_old_class[j] != batch.prev_class[n]) continue;
            Tensor s = cosine_sim(tape, batch.prev[n], batch.curr_old[j]);
            if (s.item() > best_val) {
                best_val = s.item();
                best_pos = s;
            }
        }
        if (!best_pos.defined()) {
            throw ConfigError("anchor class " + std::to_string(batch.prev_class[n]) +
                              " has no current embedding to pair with");
        }

        Tensor denom;
        for (int c : new_classes) {
            Tensor best_neg;
            double best_neg_val = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < batch.curr_new.size(); ++j) {
                if (batch.curr_new_class[j] != c) continue;
                Tensor s = cosine_sim(tape, batch.prev[n], batch.curr_new[j]);
                if (s.item() > best_neg_val) {
                    best_neg_val = s.item();
                    best_neg = s;
                }
            }
            Tensor e = exp(tape, scale(tape, best_neg, inv_tau));
            denom = denom.defined() ? add(tape, denom, e) : e;
        }
        if (variant == ContrastiveDenominator::WithPositive) {
            denom = add(tape, denom, exp(tape, scale(tape, best_pos, inv_tau)));
        }
        Tensor term = sub(tape, scale(tape, best_pos, inv_tau), log(tape, denom));
        total = total.defined() ? add(tape, total, term) : term;
    }
    return scale(tape, total, -1.0 / static_cast<double>(batch.prev.size()));
}

// Scalar loss pieces for one training step. Undefined tensors mean the piece
// is inactive this step and contributes exactly zero.
struct LossParts {
    Tensor kl;
    bool kl_applied = false;
    Tensor ce_new;
    Tensor bce_audio;
    Tensor bce_visual;
    Tensor ctl_audio;
    Tensor ctl_visual;
};

struct LossBreakdown {
    double kl = 0.0;
    double ce_new = 0.0;
    double bce_audio = 0.0;
    double bce_visual = 0.0;
    double ctl_audio = 0.0;
    double ctl_visual = 0.0;
    double total = 0.0;
    bool kl_applied = false;
    Tensor total_tensor;
};

inline LossBreakdown total_loss(Tape& tape, const LossParts& parts) {
    LossBreakdown out;
    out.kl_applied = parts.kl_applied;
    std::vector<Tensor> terms;
    auto take = [&](const Tensor& t, double& slot) {
        if (!t.defined()) return;
        slot = t.item();
        terms.push_back(t);
    };
    take(parts.kl, out.kl);
    take(parts.ce_new, out.ce_new);
    take(parts.bce_audio, out.bce_audio);
    take(parts.bce_visual, out.bce_visual);
    take(parts.ctl_audio, out.ctl_audio);
    take(parts.ctl_visual, out.ctl_visual);
    if (terms.empty()) {
        out.total_tensor = Tensor::scalar(0.0);
    } else {
        Tensor acc = terms[0];
        for (std::size_t i = 1; i < terms.size(); ++i) acc = add(tape, acc, terms[i]);
        out.total_tensor = acc;
    }
    out.total = out.total_tensor.item();
    return out;
}

}  // namespace cign
