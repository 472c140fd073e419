#pragma once

// Audio-visual grouping model: a shared bank of learnable class tokens, a
// token-augmented self-attention aggregator per modality, a grouping block
// that pools aggregated features into per-class embeddings, and small linear
// heads on top. All forward math runs through the tape so gradients flow to
// every parameter that requires them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cign/errors.hpp"
#include "cign/io.hpp"
#include "cign/seeding.hpp"
#include "cign/tensor.hpp"

namespace cign {

enum class AttentionVariant { Literal, Projected };
enum class AssignmentMode { Soft, Hard };

inline std::string to_string(AttentionVariant v) {
    return v == AttentionVariant::Literal ? "literal" : "projected";
}

inline std::string to_string(AssignmentMode m) {
    return m == AssignmentMode::Soft ? "soft" : "hard";
}

inline AttentionVariant attention_variant_from_string(const std::string& s) {
    if (s == "literal") return AttentionVariant::Literal;
    if (s == "projected") return AttentionVariant::Projected;
    throw ConfigError("unknown attention variant '" + s + "', expected literal or projected");
}

inline AssignmentMode assignment_mode_from_string(const std::string& s) {
    if (s == "soft") return AssignmentMode::Soft;
    if (s == "hard") return AssignmentMode::Hard;
    throw ConfigError("unknown assignment mode '" + s + "', expected soft or hard");
}

struct ModelConfig {
    std::size_t dim = 32;
    int depth = 3;
    AttentionVariant attention = AttentionVariant::Literal;
    AssignmentMode assignment = AssignmentMode::Soft;
    double init_sigma = 0.02;
};

// Class token bank shared by both modalities. Rows [0, old_count) belong to
// classes from earlier tasks; frozen_old keeps their values from just before
// the latest expansion so the distillation loss has a fixed reference.
struct ClassTokenBank {
    Tensor tokens;           // K x D, trainable
    std::size_t old_count = 0;
    Tensor frozen_old;       // old_count x D, constant; undefined before the second task
    std::vector<int> class_ids;  // row index -> dataset class id
};

// One self-attention layer's projections; unused in the literal variant.
struct AttentionLayer {
    Tensor wq, wk, wv, wo;  // each D x D
};

struct AttentionAggregator {
    int depth = 3;
    AttentionVariant variant = AttentionVariant::Literal;
    std::vector<AttentionLayer> layers;  // depth entries when projected, empty otherwise
};

struct GroupingBlock {
    Tensor wq, wk, wv, wo;  // each D x D
    AssignmentMode mode = AssignmentMode::Soft;
};

// Per-modality linear probe producing one sigmoid probability per class token.
struct ClassifierHead {
    Tensor w;  // D x 1
    Tensor b;  // scalar
};

// Maps new-task tokens to that task's class slots; replaced at every task.
struct TokenHead {
    Tensor w;  // D x S
    Tensor b;  // S
};

// Runs depth rounds of token-augmented self-attention over the concatenation
// of feature rows and class token rows, then splits the result back apart.
// Returns {attended features, attended tokens}.
inline std::pair<Tensor, Tensor> aggregate(Tape& tape, const Tensor& features,
                                           const Tensor& tokens, const AttentionAggregator& agg) {
    if (features.rank() != 2) {
        throw ShapeError("aggregate expects rank-2 features, got " + shape_str(features.shape()));
    }
    const std::size_t L = features.extent(0);
    const std::size_t D = features.extent(1);
    std::size_t K = 0;
    if (tokens.defined() && tokens.numel() > 0) {
        if (tokens.rank() != 2 || tokens.extent(1) != D) {
            throw ShapeError("aggregate feature dim " + std::to_string(D) +
                             " does not match token shape " + shape_str(tokens.shape()));
        }
        K = tokens.extent(0);
    }
    if (agg.variant == AttentionVariant::Projected &&
        agg.layers.size() != static_cast<std::size_t>(agg.depth)) {
        throw ConfigError("projected aggregator has " + std::to_string(agg.layers.size()) +
                          " layers for depth " + std::to_string(agg.depth));
    }

    Tensor x = K > 0 ? concat(tape, {features, tokens}, 0) : features;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(D));
    for (int layer = 0; layer < agg.depth; ++layer) {
        Tensor q = x, k = x, v = x;
        if (agg.variant == AttentionVariant::Projected) {
            const AttentionLayer& p = agg.layers[static_cast<std::size_t>(layer)];
            q = matmul(tape, x, p.wq);
            k = matmul(tape, x, p.wk);
            v = matmul(tape, x, p.wv);
        }
        Tensor scores = scale(tape, matmul(tape, q, transpose(tape, k)), inv_sqrt_d);
        Tensor attn = softmax(tape, scores, 1);
        Tensor mixed = matmul(tape, attn, v);
        if (agg.variant == AttentionVariant::Projected) {
            mixed = matmul(tape, mixed, agg.layers[static_cast<std::size_t>(layer)].wo);
        }
        x = add(tape, x, mixed);
    }

    Tensor feat_out = K > 0 ? rows(tape, x, 0, L) : x;
    Tensor token_out = K > 0 ? rows(tape, x, L, K) : Tensor();
    return {feat_out, token_out};
}

struct GroupedSlice {
    Tensor g;           // K x D per-class embeddings
    Tensor assignment;  // L x K row-stochastic (one-hot rows in hard mode)
};

// Assigns each feature row to class tokens by projected dot-product attention
// and pools assigned value rows into a per-class residual update.
inline GroupedSlice group(Tape& tape, const Tensor& feat, const Tensor& tokens,
                          const GroupingBlock& block) {
    if (!tokens.defined() || tokens.numel() == 0) {
        throw ConfigError("grouping requires at least one class token");
    }
    if (feat.rank() != 2 || tokens.rank() != 2 || feat.extent(1) != tokens.extent(1)) {
        throw ShapeError("group shapes mismatch: features " + shape_str(feat.shape()) +
                         " vs tokens " + shape_str(tokens.shape()));
    }
    Tensor q = matmul(tape, feat, block.wq);     // L x D
    Tensor k = matmul(tape, tokens, block.wk);   // K x D
    Tensor v = matmul(tape, feat, block.wv);     // L x D
    Tensor scores = matmul(tape, q, transpose(tape, k));  // L x K
    Tensor assign = softmax(tape, scores, 1);
    if (block.mode == AssignmentMode::Hard) assign = hard_one_hot(tape, assign);
    // Normalizing the weights before pooling keeps the single-feature ratio
    // A/A exactly 1, so an L=1 input reduces to g = token + W_o W_v feat with
    // no dependence on the similarity scores. Tokens with zero assigned mass
    // (possible in hard mode) receive no update.
    Tensor weights = normalize_columns(tape, assign);                  // L x K
    Tensor pooled = matmul(tape, transpose(tape, weights), v);         // K x D
    Tensor g = add(tape, tokens, matmul(tape, pooled, block.wo));
    return {g, assign};
}

// Per-class sigmoid probabilities from grouped embeddings: sigma(g w + b).
inline Tensor classify(Tape& tape, const Tensor& g, const ClassifierHead& head) {
    if (g.rank() != 2 || g.extent(1) != head.w.extent(0)) {
        throw ShapeError("classify embeddings " + shape_str(g.shape()) +
                         " do not match head weight " + shape_str(head.w.shape()));
    }
    Tensor logits = add(tape, matmul(tape, g, head.w), head.b);  // K x 1
    return reshape(tape, sigmoid(tape, logits), {g.extent(0)});
}

// Softmax class distribution per new-task token under the task head.
inline Tensor token_class_probs(Tape& tape, const Tensor& new_tokens, const TokenHead& head) {
    if (new_tokens.rank() != 2 || new_tokens.extent(1) != head.w.extent(0)) {
        throw ShapeError("token head weight " + shape_str(head.w.shape()) +
                         " does not match tokens " + shape_str(new_tokens.shape()));
    }
    Tensor logits = add(tape, matmul(tape, new_tokens, head.w), head.b);
    return softmax(tape, logits, 1);
}

// Fuses the two modality probability vectors by elementwise product. The
// fused argmax is what the evaluation protocol reports as the prediction.
inline Tensor predict_av(Tape& tape, const Tensor& p_audio, const Tensor& p_visual) {
    if (p_audio.shape() != p_visual.shape()) {
        throw ShapeError("modality probability shapes differ: " + shape_str(p_audio.shape()) +
                         " vs " + shape_str(p_visual.shape()));
    }
    return mul(tape, p_audio, p_visual);
}

struct NamedParam {
    std::string name;
    Tensor tensor;
};

struct ForwardResult {
    Tensor feat_audio;    // 1 x D attended audio feature
    Tensor feat_visual;   // P x D attended visual features
    Tensor g_audio;       // K x D grouped audio embeddings
    Tensor g_visual;      // K x D grouped visual embeddings
    Tensor assign_audio;  // 1 x K
    Tensor assign_visual; // P x K
    Tensor p_audio;       // K sigmoid probabilities
    Tensor p_visual;      // K sigmoid probabilities
};

class Model {
public:
    Model(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg), rng_(seed) {
        if (cfg_.dim == 0) throw ConfigError("model dim must be positive");
        if (cfg_.depth < 1) throw ConfigError("model depth must be at least 1");
        agg_audio_ = make_aggregator();
        agg_visual_ = make_aggregator();
        group_audio_ = make_grouping();
        group_visual_ = make_grouping();
        head_audio_ = make_classifier();
        head_visual_ = make_classifier();
    }

    const ModelConfig& config() const { return cfg_; }
    const ClassTokenBank& bank() const { return bank_; }
    std::size_t token_count() const {
        return bank_.tokens.defined() ? bank_.tokens.extent(0) : 0;
    }
    const std::vector<int>& class_ids() const { return bank_.class_ids; }

    std::size_t class_index_of(int class_id) const {
        for (std::size_t i = 0; i < bank_.class_ids.size(); ++i) {
            if (bank_.class_ids[i] == class_id) return i;
        }
        throw ConfigError("class id " + std::to_string(class_id) + " has no token");
    }

    // Appends one fresh token row per new class. Existing rows are copied
    // bit for bit and also snapshotted into frozen_old for distillation.
    void expand_tokens(const std::vector<int>& new_class_ids) {
        if (new_class_ids.empty()) throw ConfigError("expand_tokens needs at least one class");
        for (int id : new_class_ids) {
            for (int seen : bank_.class_ids) {
                if (seen == id) {
                    throw ConfigError("class id " + std::to_string(id) + " already has a token");
                }
            }
        }
        const std::size_t old_k = token_count();
        const std::size_t new_k = old_k + new_class_ids.size();
        std::vector<double> data(new_k * cfg_.dim, 0.0);
        if (old_k > 0) {
            const auto& old_vals = bank_.tokens.raw();
            std::copy(old_vals.begin(), old_vals.end(), data.begin());
        }
        std::normal_distribution<double> dist(0.0, cfg_.init_sigma);
        for (std::size_t i = old_k * cfg_.dim; i < data.size(); ++i) data[i] = dist(rng_);

        if (old_k > 0) bank_.frozen_old = bank_.tokens.clone(false);
        bank_.tokens = Tensor({new_k, cfg_.dim}, std::move(data), true);
        bank_.old_count = old_k;
        bank_.class_ids.insert(bank_.class_ids.end(), new_class_ids.begin(), new_class_ids.end());
    }

    // Installs a fresh task head with one slot per class of the new task.
    void reset_task_head(std::size_t slots) {
        if (slots == 0) throw ConfigError("task head needs at least one slot");
        token_head_.w = Tensor::randn({cfg_.dim, slots}, rng_, cfg_.init_sigma, true);
        token_head_.b = Tensor(Shape{slots}, 0.0, true);
    }

    bool has_task_head() const { return token_head_.w.defined(); }
    std::size_t task_head_slots() const {
        return has_task_head() ? token_head_.w.extent(1) : 0;
    }

    ForwardResult forward(Tape& tape, const Tensor& audio, const Tensor& visual) const {
        if (token_count() == 0) throw ConfigError("model has no class tokens; expand first");
        check_input(audio, 1, "audio");
        check_input(visual, 0, "visual");
        auto [fa, ca] = aggregate(tape, audio, bank_.tokens, agg_audio_);
        auto [fv, cv] = aggregate(tape, visual, bank_.tokens, agg_visual_);
        GroupedSlice ga = group(tape, fa, ca, group_audio_);
        GroupedSlice gv = group(tape, fv, cv, group_visual_);
        ForwardResult out;
        out.feat_audio = fa;
        out.feat_visual = fv;
        out.g_audio = ga.g;
        out.g_visual = gv.g;
        out.assign_audio = ga.assignment;
        out.assign_visual = gv.assignment;
        out.p_audio = classify(tape, ga.g, head_audio_);
        out.p_visual = classify(tape, gv.g, head_visual_);
        return out;
    }

    // Class distribution of each new-task token under the current task head.
    Tensor new_token_class_probs(Tape& tape) const {
        if (!has_task_head()) throw ConfigError("no task head installed");
        const std::size_t fresh = token_count() - bank_.old_count;
        if (fresh == 0) throw ConfigError("no new tokens for the current task");
        Tensor new_rows = rows(tape, bank_.tokens, bank_.old_count, fresh);
        return token_class_probs(tape, new_rows, token_head_);
    }

    std::vector<NamedParam> parameters() {
        std::vector<NamedParam> out;
        if (bank_.tokens.defined()) out.push_back({"tokens", bank_.tokens});
        collect_aggregator("audio_attn", agg_audio_, out);
        collect_aggregator("visual_attn", agg_visual_, out);
        collect_grouping("audio_group", group_audio_, out);
        collect_grouping("visual_group", group_visual_, out);
        out.push_back({"audio_head_w", head_audio_.w});
        out.push_back({"audio_head_b", head_audio_.b});
        out.push_back({"visual_head_w", head_visual_.w});
        out.push_back({"visual_head_b", head_visual_.b});
        if (has_task_head()) {
            out.push_back({"token_head_w", token_head_.w});
            out.push_back({"token_head_b", token_head_.b});
        }
        return out;
    }

    // Deep copy with every tensor detached from gradient tracking. Forward
    // passes through the clone record nothing on the tape, which is exactly
    // what the frozen previous-task reference needs.
    Model frozen_clone() const {
        Model snap(cfg_, 0);
        snap.rng_ = rng_;
        snap.bank_.old_count = bank_.old_count;
        snap.bank_.class_ids = bank_.class_ids;
        if (bank_.tokens.defined()) snap.bank_.tokens = bank_.tokens.clone(false);
        if (bank_.frozen_old.defined()) snap.bank_.frozen_old = bank_.frozen_old.clone(false);
        snap.agg_audio_ = clone_aggregator(agg_audio_);
        snap.agg_visual_ = clone_aggregator(agg_visual_);
        snap.group_audio_ = clone_grouping(group_audio_);
        snap.group_visual_ = clone_grouping(group_visual_);
        snap.head_audio_ = {head_audio_.w.clone(false), head_audio_.b.clone(false)};
        snap.head_visual_ = {head_visual_.w.clone(false), head_visual_.b.clone(false)};
        if (has_task_head()) {
            snap.token_head_ = {token_head_.w.clone(false), token_head_.b.clone(false)};
        }
        return snap;
    }

    void save(const std::filesystem::path& dir) const {
        namespace fs = std::filesystem;
        fs::create_directories(dir);
        nlohmann::json manifest;
        manifest["format_version"] = 1;
        manifest["dim"] = cfg_.dim;
        manifest["depth"] = cfg_.depth;
        manifest["attention"] = to_string(cfg_.attention);
        manifest["assignment"] = to_string(cfg_.assignment);
        manifest["init_sigma"] = cfg_.init_sigma;
        manifest["old_count"] = bank_.old_count;
        manifest["class_ids"] = bank_.class_ids;
        nlohmann::json params = nlohmann::json::array();
        for (const auto& [name, tensor] : checkpoint_tensors()) {
            std::string file = name + ".bin";
            io::write_file_atomic(dir / file, io::encode_le_doubles(tensor.raw()));
            nlohmann::json entry;
            entry["name"] = name;
            entry["shape"] = tensor.shape();
            entry["file"] = file;
            params.push_back(entry);
        }
        manifest["params"] = params;
        io::write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
    }

    static Model load(const std::filesystem::path& dir, std::uint64_t seed = 0) {
        nlohmann::json manifest;
        try {
            manifest = nlohmann::json::parse(io::read_file(dir / "manifest.json"));
        } catch (const nlohmann::json::exception& e) {
            throw CorruptFileError("bad checkpoint manifest in " + dir.string() + ": " + e.what());
        }
        const int version = manifest.value("format_version", -1);
        if (version != 1) {
            throw VersionError("checkpoint format_version " + std::to_string(version) +
                               " is not supported (expected 1)");
        }
        ModelConfig cfg;
        cfg.dim = manifest.at("dim").get<std::size_t>();
        cfg.depth = manifest.at("depth").get<int>();
        cfg.attention = attention_variant_from_string(manifest.at("attention").get<std::string>());
        cfg.assignment = assignment_mode_from_string(manifest.at("assignment").get<std::string>());
        cfg.init_sigma = manifest.at("init_sigma").get<double>();
        Model model(cfg, seed);
        model.bank_.old_count = manifest.at("old_count").get<std::size_t>();
        model.bank_.class_ids = manifest.at("class_ids").get<std::vector<int>>();

        for (const auto& entry : manifest.at("params")) {
            const std::string name = entry.at("name").get<std::string>();
            const Shape shape = entry.at("shape").get<Shape>();
            auto values = io::decode_le_doubles(io::read_file(dir / entry.at("file").get<std::string>()));
            if (values.size() != shape_numel(shape)) {
                throw CorruptFileError("checkpoint tensor " + name + " has " +
                                       std::to_string(values.size()) + " values for shape " +
                                       shape_str(shape));
            }
            model.install_tensor(name, Tensor(shape, std::move(values), true));
        }
        if (model.bank_.class_ids.size() != model.token_count()) {
            throw CorruptFileError("checkpoint class ids do not match token rows");
        }
        return model;
    }

private:
    AttentionAggregator make_aggregator() {
        AttentionAggregator agg;
        agg.depth = cfg_.depth;
        agg.variant = cfg_.attention;
        if (cfg_.attention == AttentionVariant::Projected) {
            for (int i = 0; i < cfg_.depth; ++i) {
                AttentionLayer layer;
                layer.wq = init_matrix();
                layer.wk = init_matrix();
                layer.wv = init_matrix();
                layer.wo = init_matrix();
                agg.layers.push_back(std::move(layer));
            }
        }
        return agg;
    }

    GroupingBlock make_grouping() {
        GroupingBlock block;
        block.mode = cfg_.assignment;
        block.wq = init_matrix();
        block.wk = init_matrix();
        block.wv = init_matrix();
        block.wo = init_matrix();
        return block;
    }

    ClassifierHead make_classifier() {
        return {Tensor::randn({cfg_.dim, 1}, rng_, cfg_.init_sigma, true),
                Tensor(Shape{1}, 0.0, true)};
    }

    Tensor init_matrix() {
        return Tensor::randn({cfg_.dim, cfg_.dim}, rng_, cfg_.init_sigma, true);
    }

    void check_input(const Tensor& x, std::size_t expect_rows, const char* which) const {
        if (x.rank() != 2 || x.extent(1) != cfg_.dim) {
            throw ShapeError(std::string(which) + " input " + shape_str(x.shape()) +
                             " does not match model dim " + std::to_string(cfg_.dim));
        }
        if (expect_rows > 0 && x.extent(0) != expect_rows) {
            throw ShapeError(std::string(which) + " input expects " +
                             std::to_string(expect_rows) + " row(s), got " +
                             shape_str(x.shape()));
        }
        if (x.extent(0) == 0) {
            throw ShapeError(std::string(which) + " input has no rows");
        }
    }

    AttentionAggregator clone_aggregator(const AttentionAggregator& src) const {
        AttentionAggregator out;
        out.depth = src.depth;
        out.variant = src.variant;
        for (const auto& layer : src.layers) {
            out.layers.push_back({layer.wq.clone(false), layer.wk.clone(false),
                                  layer.wv.clone(false), layer.wo.clone(false)});
        }
        return out;
    }

    GroupingBlock clone_grouping(const GroupingBlock& src) const {
        GroupingBlock out;
        out.mode = src.mode;
        out.wq = src.wq.clone(false);
        out.wk = src.wk.clone(false);
        out.wv = src.wv.clone(false);
        out.wo = src.wo.clone(false);
        return out;
    }

    void collect_aggregator(const std::string& prefix, AttentionAggregator& agg,
                            std::vector<NamedParam>& out) {
        for (std::size_t i = 0; i < agg.layers.size(); ++i) {
            const std::string base = prefix + "_l" + std::to_string(i) + "_";
            out.push_back({base + "wq", agg.layers[i].wq});
            out.push_back({base + "wk", agg.layers[i].wk});
            out.push_back({base + "wv", agg.layers[i].wv});
            out.push_back({base + "wo", agg.layers[i].wo});
        }
    }

    void collect_grouping(const std::string& prefix, GroupingBlock& block,
                          std::vector<NamedParam>& out) {
        out.push_back({prefix + "_wq", block.wq});
        out.push_back({prefix + "_wk", block.wk});
        out.push_back({prefix + "_wv", block.wv});
        out.push_back({prefix + "_wo", block.wo});
    }

    // Everything save/load needs, trainable or not, in a fixed order.
    std::vector<NamedParam> checkpoint_tensors() const {
        std::vector<NamedParam> out;
        auto* self = const_cast<Model*>(this);
        if (bank_.tokens.defined()) out.push_back({"tokens", bank_.tokens});
        if (bank_.frozen_old.defined()) out.push_back({"tokens_frozen_old", bank_.frozen_old});
        self->collect_aggregator("audio_attn", self->agg_audio_, out);
        self->collect_aggregator("visual_attn", self->agg_visual_, out);
        self->collect_grouping("audio_group", self->group_audio_, out);
        self->collect_grouping("visual_group", self->group_visual_, out);
        out.push_back({"audio_head_w", head_audio_.w});
        out.push_back({"audio_head_b", head_audio_.b});
        out.push_back({"visual_head_w", head_visual_.w});
        out.push_back({"visual_head_b", head_visual_.b});
        if (has_task_head()) {
            out.push_back({"token_head_w", token_head_.w});
            out.push_back({"token_head_b", token_head_.b});
        }
        return out;
    }

    void install_tensor(const std::string& name, Tensor t) {
        if (name == "tokens") { bank_.tokens = std::move(t); return; }
        if (name == "tokens_frozen_old") {
            t.set_requires_grad(false);
            bank_.frozen_old = std::move(t);
            return;
        }
        if (install_into_aggregator("audio_attn", agg_audio_, name, t)) return;
        if (install_into_aggregator("visual_attn", agg_visual_, name, t)) return;
        if (install_into_grouping("audio_group", group_audio_, name, t)) return;
        if (install_into_grouping("visual_group", group_visual_, name, t)) return;
        if (name == "audio_head_w") { head_audio_.w = std::move(t); return; }
        if (name == "audio_head_b") { head_audio_.b = std::move(t); return; }
        if (name == "visual_head_w") { head_visual_.w = std::move(t); return; }
        if (name == "visual_head_b") { head_visual_.b = std::move(t); return; }
        if (name == "token_head_w") { token_head_.w = std::move(t); return; }
        if (name == "token_head_b") { token_head_.b = std::move(t); return; }
        throw CorruptFileError("checkpoint contains unknown tensor '" + name + "'");
    }

    bool install_into_aggregator(const std::string& prefix, AttentionAggregator& agg,
                                 const std::string& name, Tensor& t) {
        for (std::size_t i = 0; i < agg.layers.size(); ++i) {
            const std::string base = prefix + "_l" + std::to_string(i) + "_";
            if (name == base + "wq") { agg.layers[i].wq = t; return true; }
            if (name == base + "wk") { agg.layers[i].wk = t; return true; }
            if (name == base + "wv") { agg.layers[i].wv = t; return true; }
            if (name == base + "wo") { agg.layers[i].wo = t; return true; }
        }
        return false;
    }

    bool install_into_grouping(const std::string& prefix, GroupingBlock& block,
                               const std::string& name, Tensor& t) {
        if (name == prefix + "_wq") { block.wq = t; return true; }
        if (name == prefix + "_wk") { block.wk = t; return true; }
        if (name == prefix + "_wv") { block.wv = t; return true; }
        if (name == prefix + "_wo") { block.wo = t; return true; }
        return false;
    }

    ModelConfig cfg_;
    std::mt19937_64 rng_;
    ClassTokenBank bank_;
    AttentionAggregator agg_audio_;
    AttentionAggregator agg_visual_;
    GroupingBlock group_audio_;
    GroupingBlock group_visual_;
    ClassifierHead head_audio_;
    ClassifierHead head_visual_;
    TokenHead token_head_;
};

}  // namespace cign
