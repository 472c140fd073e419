#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <random>
#include <set>
#include <vector>

#include "cign/gradcheck.hpp"
#include "cign/model.hpp"
#include "oracles.hpp"

using namespace cign;

namespace {

Tensor randn2(std::mt19937_64& rng, std::size_t r, std::size_t c, double sigma = 1.0,
              bool rg = false) {
    return Tensor::randn({r, c}, rng, sigma, rg);
}

oracle::Mat to_mat(const Tensor& t) {
    oracle::Mat m(t.extent(0), t.extent(1));
    m.v = t.raw();
    return m;
}

GroupingBlock block_from(const Tensor& wq, const Tensor& wk, const Tensor& wv, const Tensor& wo,
                         AssignmentMode mode) {
    GroupingBlock b;
    b.wq = wq;
    b.wk = wk;
    b.wv = wv;
    b.wo = wo;
    b.mode = mode;
    return b;
}

std::filesystem::path fresh_temp_dir(const char* tag) {
    static int counter = 0;
    auto dir = std::filesystem::temp_directory_path() /
               ("cign_model_test_" + std::string(tag) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("attention over a single row with no tokens doubles the feature", "[model]") {
    Tape t;
    AttentionAggregator agg;
    agg.depth = 1;
    Tensor f = Tensor::from_rows({{0.3, -1.2, 2.5, 0.7}});
    auto [feat_out, token_out] = aggregate(t, f, Tensor(), agg);
    REQUIRE(feat_out.shape() == Shape{1, 4});
    for (std::size_t j = 0; j < 4; ++j) CHECK(feat_out.at(0, j) == 2.0 * f.at(0, j));
    CHECK_FALSE(token_out.defined());
}

TEST_CASE("attention preserves sequence lengths and treats identical rows identically", "[model]") {
    std::mt19937_64 rng(71);
    Tape t;
    AttentionAggregator agg;
    agg.depth = 2;
    Tensor row = randn2(rng, 1, 6);
    Tensor feat = concat(t, {row, row, randn2(rng, 2, 6)}, 0);
    Tensor tokens = randn2(rng, 3, 6);
    auto [feat_out, token_out] = aggregate(t, feat, tokens, agg);
    REQUIRE(feat_out.shape() == Shape{4, 6});
    REQUIRE(token_out.shape() == Shape{3, 6});
    for (std::size_t j = 0; j < 6; ++j) CHECK(feat_out.at(0, j) == feat_out.at(1, j));
}

TEST_CASE("attention rejects mismatched feature and token dims", "[model]") {
    std::mt19937_64 rng(5);
    Tape t;
    AttentionAggregator agg;
    CHECK_THROWS_AS(aggregate(t, randn2(rng, 2, 4), randn2(rng, 2, 5), agg), ShapeError);
}

TEST_CASE("attention gradients agree with finite differences", "[model]") {
    std::mt19937_64 rng(2026);
    Tensor tokens = randn2(rng, 2, 5, 0.5);
    ScalarFn wrt_features = [&](Tape& tape, const Tensor& x) {
        AttentionAggregator agg;
        agg.depth = 2;
        auto [fo, to] = aggregate(tape, x, tokens, agg);
        return sum(tape, add(tape, sum(tape, fo), sum(tape, to)));
    };
    Tensor feat = randn2(rng, 3, 5, 0.5, true);
    CHECK(grad_check(wrt_features, feat) < 1e-4);

    // Projected variant, gradient through a projection matrix.
    Tensor pf = randn2(rng, 3, 4, 0.5);
    Tensor pt = randn2(rng, 2, 4, 0.5);
    std::vector<Tensor> fixed;
    for (int i = 0; i < 8; ++i) fixed.push_back(randn2(rng, 4, 4, 0.4));
    ScalarFn wrt_wq = [&](Tape& tape, const Tensor& x) {
        AttentionAggregator agg;
        agg.depth = 2;
        agg.variant = AttentionVariant::Projected;
        agg.layers.push_back({x, fixed[1], fixed[2], fixed[3]});
        agg.layers.push_back({fixed[4], fixed[5], fixed[6], fixed[7]});
        auto [fo, to] = aggregate(tape, pf, pt, agg);
        return add(tape, sum(tape, mul(tape, fo, fo)), sum(tape, mul(tape, to, to)));
    };
    Tensor wq = randn2(rng, 4, 4, 0.4, true);
    CHECK(grad_check(wrt_wq, wq) < 1e-4);
}

TEST_CASE("grouping matches the independent reference in both modes", "[model]") {
    for (std::uint64_t seed : {11u, 12u, 13u, 14u}) {
        std::mt19937_64 rng(seed);
        Tensor feat = randn2(rng, 5, 6);
        Tensor tokens = randn2(rng, 3, 6);
        Tensor wq = randn2(rng, 6, 6, 0.7), wk = randn2(rng, 6, 6, 0.7);
        Tensor wv = randn2(rng, 6, 6, 0.7), wo = randn2(rng, 6, 6, 0.7);
        for (bool hard : {false, true}) {
            Tape t;
            auto mode = hard ? AssignmentMode::Hard : AssignmentMode::Soft;
            GroupedSlice out = group(t, feat, tokens, block_from(wq, wk, wv, wo, mode));
            oracle::Mat expect =
                oracle::group_reference(to_mat(feat), to_mat(tokens), to_mat(wq), to_mat(wk),
                                        to_mat(wv), to_mat(wo), hard);
            REQUIRE(out.g.shape() == Shape{3, 6});
            for (std::size_t i = 0; i < 3; ++i)
                for (std::size_t j = 0; j < 6; ++j)
                    CHECK(std::abs(out.g.at(i, j) - expect.at(i, j)) < 1e-10);
        }
    }
}

TEST_CASE("grouping a single feature row is independent of the score projections", "[model]") {
    std::mt19937_64 rng(99);
    Tensor feat = randn2(rng, 1, 6);
    Tensor tokens = randn2(rng, 4, 6);
    Tensor wv = randn2(rng, 6, 6), wo = randn2(rng, 6, 6);
    Tape t;
    GroupedSlice a = group(t, feat, tokens,
                           block_from(randn2(rng, 6, 6), randn2(rng, 6, 6), wv, wo,
                                      AssignmentMode::Soft));
    GroupedSlice b = group(t, feat, tokens,
                           block_from(randn2(rng, 6, 6, 3.0), randn2(rng, 6, 6, 3.0), wv, wo,
                                      AssignmentMode::Soft));
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 6; ++j)
            CHECK(std::abs(a.g.at(i, j) - b.g.at(i, j)) < 1e-12);
}

TEST_CASE("grouping with one token mean-pools and hard equals soft", "[model]") {
    std::mt19937_64 rng(123);
    Tensor feat = randn2(rng, 6, 5);
    Tensor tokens = randn2(rng, 1, 5);
    Tensor wq = randn2(rng, 5, 5), wk = randn2(rng, 5, 5);
    Tensor wv = randn2(rng, 5, 5), wo = randn2(rng, 5, 5);
    Tape t;
    GroupedSlice soft = group(t, feat, tokens, block_from(wq, wk, wv, wo, AssignmentMode::Soft));
    GroupedSlice hard = group(t, feat, tokens, block_from(wq, wk, wv, wo, AssignmentMode::Hard));

    // With a single token the softmax row is exactly 1, so pooling reduces to
    // the mean of projected value rows.
    Tensor v = matmul(t, feat, wv);
    Tensor mixed = matmul(t, reshape(t, mean(t, v, 0), {1, 5}), wo);
    for (std::size_t j = 0; j < 5; ++j) {
        double expect = tokens.at(0, j) + mixed.at(0, j);
        CHECK(std::abs(soft.g.at(0, j) - expect) < 1e-12);
        CHECK(hard.g.at(0, j) == soft.g.at(0, j));
    }
}

TEST_CASE("assignments are row-stochastic and hard rows are exact one-hots", "[model]") {
    std::mt19937_64 rng(321);
    Tensor feat = randn2(rng, 7, 5);
    Tensor tokens = randn2(rng, 3, 5);
    Tensor wq = randn2(rng, 5, 5), wk = randn2(rng, 5, 5);
    Tensor wv = randn2(rng, 5, 5), wo = randn2(rng, 5, 5);
    Tape t;
    GroupedSlice soft = group(t, feat, tokens, block_from(wq, wk, wv, wo, AssignmentMode::Soft));
    GroupedSlice hard = group(t, feat, tokens, block_from(wq, wk, wv, wo, AssignmentMode::Hard));
    for (std::size_t l = 0; l < 7; ++l) {
        double s = 0.0;
        for (std::size_t k = 0; k < 3; ++k) s += soft.assignment.at(l, k);
        CHECK(std::abs(s - 1.0) < 1e-12);
        int ones = 0, zeros = 0;
        for (std::size_t k = 0; k < 3; ++k) {
            if (hard.assignment.at(l, k) == 1.0) ++ones;
            if (hard.assignment.at(l, k) == 0.0) ++zeros;
        }
        CHECK(ones == 1);
        CHECK(zeros == 2);
    }
}

TEST_CASE("grouping is equivariant under token permutation", "[model]") {
    std::mt19937_64 rng(55);
    Tensor feat = randn2(rng, 4, 5);
    Tensor tokens = randn2(rng, 3, 5);
    Tensor wq = randn2(rng, 5, 5), wk = randn2(rng, 5, 5);
    Tensor wv = randn2(rng, 5, 5), wo = randn2(rng, 5, 5);
    std::vector<std::size_t> perm = {2, 0, 1};
    Tape t;
    Tensor permuted = concat(t, {rows(t, tokens, 2, 1), rows(t, tokens, 0, 1),
                                 rows(t, tokens, 1, 1)}, 0);
    GroupedSlice base = group(t, feat, tokens, block_from(wq, wk, wv, wo, AssignmentMode::Soft));
    GroupedSlice swapped =
        group(t, feat, permuted, block_from(wq, wk, wv, wo, AssignmentMode::Soft));
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 5; ++j)
            CHECK(std::abs(swapped.g.at(i, j) - base.g.at(perm[i], j)) < 1e-12);
}

TEST_CASE("grouping requires tokens and matching dims", "[model]") {
    std::mt19937_64 rng(7);
    Tape t;
    GroupingBlock block = block_from(randn2(rng, 5, 5), randn2(rng, 5, 5), randn2(rng, 5, 5),
                                     randn2(rng, 5, 5), AssignmentMode::Soft);
    CHECK_THROWS_AS(group(t, randn2(rng, 4, 5), Tensor(), block), ConfigError);
    CHECK_THROWS_AS(group(t, randn2(rng, 4, 5), Tensor({0, 5}, 0.0), block), ConfigError);
    CHECK_THROWS_AS(group(t, randn2(rng, 4, 6), randn2(rng, 2, 5), block), ShapeError);
}

TEST_CASE("grouping gradients agree with finite differences", "[model]") {
    std::mt19937_64 rng(888);
    Tensor feat = randn2(rng, 4, 5, 0.6);
    Tensor wq = randn2(rng, 5, 5, 0.6), wk = randn2(rng, 5, 5, 0.6);
    Tensor wv = randn2(rng, 5, 5, 0.6), wo = randn2(rng, 5, 5, 0.6);
    ScalarFn wrt_tokens = [&](Tape& tape, const Tensor& x) {
        GroupedSlice out = group(tape, feat, x, block_from(wq, wk, wv, wo, AssignmentMode::Soft));
        return sum(tape, mul(tape, out.g, out.g));
    };
    Tensor tokens = randn2(rng, 3, 5, 0.6, true);
    CHECK(grad_check(wrt_tokens, tokens) < 1e-4);

    Tensor tok_fixed = randn2(rng, 3, 5, 0.6);
    ScalarFn wrt_wq = [&](Tape& tape, const Tensor& x) {
        GroupedSlice out = group(tape, feat, tok_fixed,
                                 block_from(x, wk, wv, wo, AssignmentMode::Soft));
        return sum(tape, mul(tape, out.g, out.g));
    };
    Tensor wq_var = randn2(rng, 5, 5, 0.6, true);
    CHECK(grad_check(wrt_wq, wq_var) < 1e-4);
}

TEST_CASE("classifier probabilities follow the direct sigmoid formula", "[model]") {
    std::mt19937_64 rng(17);
    Tensor g = randn2(rng, 4, 6);
    ClassifierHead head{randn2(rng, 6, 1, 0.8, true), Tensor::scalar(0.3, true)};
    Tape t;
    Tensor p = classify(t, g, head);
    REQUIRE(p.shape() == Shape{4});
    for (std::size_t i = 0; i < 4; ++i) {
        double logit = 0.3;
        for (std::size_t j = 0; j < 6; ++j) logit += g.at(i, j) * head.w.at(j, 0);
        CHECK(std::abs(p.at(i) - 1.0 / (1.0 + std::exp(-logit))) < 1e-12);
        CHECK(p.at(i) > 0.0);
        CHECK(p.at(i) < 1.0);
    }

    ClassifierHead zero{Tensor({6, 1}, 0.0), Tensor::scalar(0.0)};
    Tensor half = classify(t, g, zero);
    for (std::size_t i = 0; i < 4; ++i) CHECK(half.at(i) == 0.5);
}

TEST_CASE("token class probabilities are normalized and uniform for a zero head", "[model]") {
    std::mt19937_64 rng(29);
    Tensor tokens = randn2(rng, 3, 6);
    TokenHead zero{Tensor({6, 4}, 0.0), Tensor(Shape{4}, 0.0)};
    Tape t;
    Tensor e = token_class_probs(t, tokens, zero);
    REQUIRE(e.shape() == Shape{3, 4});
    for (std::size_t i = 0; i < 3; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 4; ++j) {
            CHECK(e.at(i, j) == Catch::Approx(0.25).margin(1e-12));
            s += e.at(i, j);
        }
        CHECK(std::abs(s - 1.0) < 1e-12);
    }

    TokenHead head{randn2(rng, 6, 4, 0.5), Tensor::randn({4}, rng, 0.5)};
    Tensor mixer = randn2(rng, 3, 4);
    ScalarFn wrt_tokens = [&](Tape& tape, const Tensor& x) {
        return sum(tape, mul(tape, token_class_probs(tape, x, head), mixer));
    };
    Tensor var = randn2(rng, 3, 6, 0.5, true);
    CHECK(grad_check(wrt_tokens, var) < 1e-4);
}

TEST_CASE("modality fusion multiplies probabilities and keeps the argmax stable", "[model]") {
    Tape t;
    Tensor pa = Tensor(Shape{4}, {0.9, 0.2, 0.6, 0.3});
    Tensor pv = Tensor(Shape{4}, {0.5, 0.8, 0.9, 0.1});
    Tensor fused = predict_av(t, pa, pv);
    for (std::size_t i = 0; i < 4; ++i) CHECK(fused.at(i) == pa.at(i) * pv.at(i));

    Tensor ones(Shape{4}, 1.0);
    Tensor same = predict_av(t, pa, ones);
    for (std::size_t i = 0; i < 4; ++i) CHECK(same.at(i) == pa.at(i));

    // Rescaling one modality cannot move the fused argmax.
    Tensor scaled = predict_av(t, scale(t, pa, 0.037), pv);
    CHECK(argmax(scaled.raw()) == argmax(fused.raw()));

    CHECK_THROWS_AS(predict_av(t, pa, Tensor(Shape{3}, 0.5)), ShapeError);
}

TEST_CASE("token bank expansion keeps old rows bit for bit", "[model]") {
    Model m(ModelConfig{.dim = 6, .depth = 2}, 404);
    CHECK(m.token_count() == 0);
    m.expand_tokens({4, 9});
    REQUIRE(m.token_count() == 2);
    CHECK(m.bank().old_count == 0);
    CHECK_FALSE(m.bank().frozen_old.defined());
    std::vector<double> before = m.bank().tokens.raw();

    m.expand_tokens({1, 7});
    REQUIRE(m.token_count() == 4);
    CHECK(m.bank().old_count == 2);
    REQUIRE(m.bank().frozen_old.defined());
    for (std::size_t i = 0; i < before.size(); ++i) {
        CHECK(m.bank().tokens.raw()[i] == before[i]);
        CHECK(m.bank().frozen_old.raw()[i] == before[i]);
    }
    CHECK(m.class_ids() == std::vector<int>{4, 9, 1, 7});
    CHECK(m.class_index_of(1) == 2);
    CHECK_THROWS_AS(m.expand_tokens({9}), ConfigError);
    CHECK_THROWS_AS(m.class_index_of(3), ConfigError);
}

TEST_CASE("model forward produces coherent shapes and finite values", "[model]") {
    Model m(ModelConfig{.dim = 8, .depth = 3}, 2024);
    std::mt19937_64 rng(31);
    {
        Tape pre;
        CHECK_THROWS_AS(m.forward(pre, randn2(rng, 1, 8), randn2(rng, 4, 8)), ConfigError);
    }
    m.expand_tokens({0, 1, 2});
    m.reset_task_head(3);
    Tape t;
    Tensor audio = randn2(rng, 1, 8);
    Tensor visual = randn2(rng, 4, 8);
    ForwardResult out = m.forward(t, audio, visual);
    REQUIRE(out.p_audio.shape() == Shape{3});
    REQUIRE(out.p_visual.shape() == Shape{3});
    REQUIRE(out.g_audio.shape() == Shape{3, 8});
    REQUIRE(out.g_visual.shape() == Shape{3, 8});
    REQUIRE(out.assign_audio.shape() == Shape{1, 3});
    REQUIRE(out.assign_visual.shape() == Shape{4, 3});
    for (const Tensor* x : {&out.p_audio, &out.p_visual, &out.g_audio, &out.g_visual})
        CHECK(all_finite(*x));
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(out.p_audio.at(i) > 0.0);
        CHECK(out.p_audio.at(i) < 1.0);
    }
    double s = 0.0;
    for (std::size_t k = 0; k < 3; ++k) s += out.assign_audio.at(0, k);
    CHECK(std::abs(s - 1.0) < 1e-12);

    Tensor e = m.new_token_class_probs(t);
    REQUIRE(e.shape() == Shape{3, 3});

    CHECK_THROWS_AS(m.forward(t, randn2(rng, 1, 7), visual), ShapeError);
    CHECK_THROWS_AS(m.forward(t, randn2(rng, 2, 8), visual), ShapeError);
}

TEST_CASE("frozen clones are bit-identical and record nothing on the tape", "[model]") {
    Model m(ModelConfig{.dim = 6, .depth = 2}, 777);
    m.expand_tokens({0, 1});
    m.reset_task_head(2);
    Model frozen = m.frozen_clone();
    std::mt19937_64 rng(5);
    Tensor audio = randn2(rng, 1, 6);
    Tensor visual = randn2(rng, 3, 6);
    Tape t1, t2;
    ForwardResult a = m.forward(t1, audio, visual);
    ForwardResult b = frozen.forward(t2, audio, visual);
    CHECK(t1.size() > 0);
    CHECK(t2.size() == 0);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(a.p_audio.at(i) == b.p_audio.at(i));
        CHECK(a.p_visual.at(i) == b.p_visual.at(i));
    }

    // Training the original must not disturb the clone.
    std::vector<double> frozen_tokens = frozen.bank().tokens.raw();
    for (auto& p : m.parameters()) {
        for (auto& v : p.tensor.raw()) v += 1.0;
    }
    for (std::size_t i = 0; i < frozen_tokens.size(); ++i)
        CHECK(frozen.bank().tokens.raw()[i] == frozen_tokens[i]);
}

TEST_CASE("parameter list covers trainable tensors exactly once", "[model]") {
    Model lit(ModelConfig{.dim = 5, .depth = 2}, 9);
    lit.expand_tokens({0});
    lit.reset_task_head(1);
    auto params = lit.parameters();
    // tokens + 2x4 grouping mats + 2x2 head tensors + 2 task head tensors
    CHECK(params.size() == 1 + 8 + 4 + 2);
    for (const auto& p : params) CHECK(p.tensor.requires_grad());

    Model proj(ModelConfig{.dim = 5, .depth = 2, .attention = AttentionVariant::Projected}, 9);
    proj.expand_tokens({0});
    auto pp = proj.parameters();
    // tokens + 2 modalities x 2 layers x 4 mats + grouping + heads, no task head
    CHECK(pp.size() == 1 + 16 + 8 + 4);
    std::set<std::string> names;
    for (const auto& p : pp) names.insert(p.name);
    CHECK(names.size() == pp.size());
}

TEST_CASE("checkpoints round-trip bit for bit", "[model]") {
    Model m(ModelConfig{.dim = 6, .depth = 2, .assignment = AssignmentMode::Hard}, 31337);
    m.expand_tokens({3, 5});
    m.expand_tokens({8});
    m.reset_task_head(1);
    auto dir = fresh_temp_dir("roundtrip");
    m.save(dir);
    Model back = Model::load(dir);

    CHECK(back.config().dim == 6);
    CHECK(back.config().assignment == AssignmentMode::Hard);
    CHECK(back.bank().old_count == 2);
    CHECK(back.class_ids() == std::vector<int>{3, 5, 8});
    REQUIRE(back.bank().frozen_old.defined());
    CHECK_FALSE(back.bank().frozen_old.requires_grad());

    std::mt19937_64 rng(3);
    Tensor audio = randn2(rng, 1, 6);
    Tensor visual = randn2(rng, 2, 6);
    Tape t1, t2;
    ForwardResult a = m.forward(t1, audio, visual);
    ForwardResult b = back.forward(t2, audio, visual);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(a.p_audio.at(i) == b.p_audio.at(i));
        CHECK(a.p_visual.at(i) == b.p_visual.at(i));
    }

    // Saving the loaded model reproduces the original files byte for byte.
    auto dir2 = fresh_temp_dir("resave");
    back.save(dir2);
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        auto other = dir2 / entry.path().filename();
        REQUIRE(std::filesystem::exists(other));
        CHECK(io::read_file(entry.path()) == io::read_file(other));
    }
}

TEST_CASE("corrupt and mismatched checkpoints are rejected", "[model]") {
    Model m(ModelConfig{.dim = 5, .depth = 1}, 11);
    m.expand_tokens({0, 1});
    auto dir = fresh_temp_dir("corrupt");
    m.save(dir);

    // Truncate one tensor payload.
    auto victim = dir / "tokens.bin";
    auto bytes = io::read_file(victim);
    io::write_file_atomic(victim, std::string_view(bytes).substr(0, bytes.size() - 8));
    CHECK_THROWS_AS(Model::load(dir), CorruptFileError);
    io::write_file_atomic(victim, bytes);
    CHECK_NOTHROW(Model::load(dir));

    // Future format versions are refused outright.
    auto manifest_path = dir / "manifest.json";
    auto manifest = nlohmann::json::parse(io::read_file(manifest_path));
    manifest["format_version"] = 2;
    io::write_file_atomic(manifest_path, manifest.dump(2));
    CHECK_THROWS_AS(Model::load(dir), VersionError);
}

TEST_CASE("task head reset draws a fresh projection of the requested width", "[model]") {
    Model m(ModelConfig{.dim = 6, .depth = 1}, 500);
    CHECK_FALSE(m.has_task_head());
    m.expand_tokens({0, 1});
    m.reset_task_head(2);
    REQUIRE(m.has_task_head());
    CHECK(m.task_head_slots() == 2);
    auto params = m.parameters();
    std::vector<double> first;
    for (const auto& p : params)
        if (p.name == "token_head_w") first = p.tensor.raw();
    m.reset_task_head(3);
    CHECK(m.task_head_slots() == 3);
    CHECK_THROWS_AS(m.reset_task_head(0), ConfigError);
    REQUIRE_FALSE(first.empty());
}
