#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "knpl/checkpoint.hpp"
#include "knpl/error.hpp"
#include "knpl/model.hpp"
#include "knpl/rng.hpp"
#include "knpl/tokenizer.hpp"

using namespace knpl;
using namespace knpl::model;
using ad::Index;
using ad::Mat;
using ad::Tensor;

namespace {

ModelConfig small_config() {
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.d_model = 32;
    cfg.d_ff = 48;
    cfg.n_heads = 4;
    cfg.vocab_size = 50;
    cfg.max_seq_len = 32;
    return cfg;
}

std::vector<int> random_tokens(Rng& rng, int len, int vocab) {
    std::vector<int> toks;
    for (int i = 0; i < len; ++i) {
        toks.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab))));
    }
    return toks;
}

// Plain-matrix transformer written independently of the taped forward:
// per-row normalization, per-position attention loops over visible
// positions only (no additive mask).
Mat rmsnorm_ref(const Mat& x, const Mat& gain) {
    Mat out(x.rows(), x.cols());
    for (Index r = 0; r < x.rows(); ++r) {
        double ss = 0.0;
        for (Index c = 0; c < x.cols(); ++c) ss += x(r, c) * x(r, c);
        const double inv = 1.0 / std::sqrt(ss / static_cast<double>(x.cols()) + kRmsEps);
        for (Index c = 0; c < x.cols(); ++c) out(r, c) = x(r, c) * inv * gain(0, c);
    }
    return out;
}

// clamp_layer >= 0 overrides the post-SiLU hidden at (clamp_layer, clamp_pos)
// before the down projection; -1 leaves the forward untouched.
Mat reference_logits_clamped(const Model& m, const std::vector<int>& toks, int clamp_layer,
                             Index clamp_pos, const Mat& clamp) {
    const ModelConfig& cfg = m.config;
    const auto n = static_cast<Index>(toks.size());
    const auto d = static_cast<Index>(cfg.d_model);
    const auto dh = static_cast<Index>(cfg.head_dim());

    Mat x(n, d);
    for (Index i = 0; i < n; ++i) {
        x.row(i) = m.tok_embed.mat().row(toks[static_cast<std::size_t>(i)]) +
                   m.pos_embed.mat().row(i);
    }

    for (int li = 0; li < cfg.n_layers; ++li) {
        const LayerWeights& lw = m.layers[static_cast<std::size_t>(li)];
        const Mat normed = rmsnorm_ref(x, lw.attn_gain.mat());
        const Mat q = normed * lw.wq.mat();
        const Mat k = normed * lw.wk.mat();
        const Mat v = normed * lw.wv.mat();
        Mat merged = Mat::Zero(n, d);
        for (int h = 0; h < cfg.n_heads; ++h) {
            const Index off = static_cast<Index>(h) * dh;
            for (Index i = 0; i < n; ++i) {
                std::vector<double> scores(static_cast<std::size_t>(i) + 1);
                double mx = -1e300;
                for (Index j = 0; j <= i; ++j) {
                    double dot = 0.0;
                    for (Index c = 0; c < dh; ++c) dot += q(i, off + c) * k(j, off + c);
                    scores[static_cast<std::size_t>(j)] = dot / std::sqrt(static_cast<double>(dh));
                    mx = std::max(mx, scores[static_cast<std::size_t>(j)]);
                }
                double z = 0.0;
                for (double& s : scores) {
                    s = std::exp(s - mx);
                    z += s;
                }
                for (Index j = 0; j <= i; ++j) {
                    const double wgt = scores[static_cast<std::size_t>(j)] / z;
                    for (Index c = 0; c < dh; ++c) merged(i, off + c) += wgt * v(j, off + c);
                }
            }
        }
        x += merged * lw.wo.mat();
        const Mat fin = rmsnorm_ref(x, lw.ffn_gain.mat());
        Mat hidden = fin * lw.w1.mat();
        for (Index r = 0; r < hidden.rows(); ++r) {
            for (Index c = 0; c < hidden.cols(); ++c) {
                const double s = 1.0 / (1.0 + std::exp(-hidden(r, c)));
                hidden(r, c) = hidden(r, c) * s;
            }
        }
        if (li == clamp_layer) hidden.row(clamp_pos) = clamp.row(0);
        x += hidden * lw.w2.mat();
    }
    return rmsnorm_ref(x, m.final_gain.mat()) * m.head.mat();
}

Mat reference_logits(const Model& m, const std::vector<int>& toks) {
    return reference_logits_clamped(m, toks, -1, 0, Mat::Zero(1, m.config.d_ff));
}

} // namespace

TEST_CASE("forward matches an independent reference implementation") {
    Rng rng(41);
    const Model m = Model::init(small_config(), 1234);
    for (int trial = 0; trial < 5; ++trial) {
        const auto toks = random_tokens(rng, 3 + static_cast<int>(rng.below(12)), m.config.vocab_size);
        const ForwardTrace trace = forward_with_hooks(m, toks, {}, false);
        const Mat ref = reference_logits(m, toks);
        double worst = 0.0;
        for (Index r = 0; r < ref.rows(); ++r) {
            for (Index c = 0; c < ref.cols(); ++c) {
                worst = std::max(worst, std::abs(ref(r, c) - trace.logits.at(r, c)));
            }
        }
        CHECK(worst <= 1e-9);
    }
}

TEST_CASE("packed batching is exact") {
    Rng rng(42);
    const Model m = Model::init(small_config(), 99);
    std::vector<std::vector<int>> seqs;
    for (int i = 0; i < 4; ++i) {
        seqs.push_back(random_tokens(rng, 4 + static_cast<int>(rng.below(8)), m.config.vocab_size));
    }

    ad::Tape t;
    const TapedWeights w = weights_as_leaves(t, m, false);
    const TapedForward f = build_forward(t, w, pack_sequences(seqs), {});
    const Tensor packed = t.value(f.logits);

    Index row = 0;
    for (const auto& seq : seqs) {
        const ForwardTrace single = forward_with_hooks(m, seq, {}, false);
        for (std::size_t i = 0; i < seq.size(); ++i, ++row) {
            for (Index c = 0; c < packed.cols(); ++c) {
                CHECK(std::abs(packed.at(row, c) - single.logits.at(static_cast<Index>(i), c)) <=
                      1e-9);
            }
        }
    }
}

TEST_CASE("observe hooks and scale-by-one leave logits bit-identical") {
    Rng rng(7);
    const Model m = Model::init(small_config(), 5);
    const auto toks = random_tokens(rng, 9, m.config.vocab_size);
    const ForwardTrace base = forward_with_hooks(m, toks, {}, true);

    const ForwardTrace observed =
        forward_with_hooks(m, toks, {HookSpec::observe({{0, 3}, {1, 10}})}, true);
    CHECK(observed.logits.bit_equal(base.logits));
    CHECK(observed.layers[0].ffn.bit_equal(base.layers[0].ffn));

    const ForwardTrace unit = forward_with_hooks(m, toks, {HookSpec::scale(1.0, {{0, 3}})}, false);
    CHECK(unit.logits.bit_equal(base.logits));
}

TEST_CASE("zero and scale hooks rewrite the traced activation") {
    Rng rng(8);
    const Model m = Model::init(small_config(), 6);
    const auto toks = random_tokens(rng, 10, m.config.vocab_size);
    const ForwardTrace base = forward_with_hooks(m, toks, {}, true);

    const ForwardTrace zeroed = forward_with_hooks(m, toks, {HookSpec::zero({{1, 5}})}, true);
    for (Index r = 0; r < zeroed.layers[1].ffn.rows(); ++r) {
        CHECK(zeroed.layers[1].ffn.at(r, 5) == 0.0);
        CHECK_FALSE(std::signbit(zeroed.layers[1].ffn.at(r, 5)));
    }

    const ForwardTrace doubled = forward_with_hooks(m, toks, {HookSpec::scale(2.0, {{0, 7}})}, true);
    for (Index r = 0; r < doubled.layers[0].ffn.rows(); ++r) {
        CHECK(doubled.layers[0].ffn.at(r, 7) == 2.0 * base.layers[0].ffn.at(r, 7));
    }
}

TEST_CASE("attention rows are probability distributions") {
    Rng rng(9);
    const Model m = Model::init(small_config(), 77);
    const auto toks = random_tokens(rng, 12, m.config.vocab_size);
    const ForwardTrace trace = forward_with_hooks(m, toks, {}, true);
    for (const LayerTrace& lt : trace.layers) {
        for (Index r = 0; r < lt.attn.rows(); ++r) {
            double sum = 0.0;
            for (Index c = 0; c < lt.attn.cols(); ++c) sum += lt.attn.at(r, c);
            CHECK(std::abs(sum - 1.0) <= 1e-9);
        }
    }
}

TEST_CASE("traced ffn values reproduce the layer output exactly") {
    Rng rng(10);
    const Model m = Model::init(small_config(), 13);
    const auto toks = random_tokens(rng, 8, m.config.vocab_size);
    const ForwardTrace trace = forward_with_hooks(m, toks, {}, true);
    for (int l = 0; l < m.config.n_layers; ++l) {
        const LayerTrace& lt = trace.layers[static_cast<std::size_t>(l)];
        const LayerWeights& lw = m.layers[static_cast<std::size_t>(l)];
        const Tensor recomputed = ffn_forward(lt.ffn_input, lw.w1, lw.w2);
        const Mat expect = lt.post_attn.mat() + recomputed.mat();
        CHECK(Tensor::matrix(expect).bit_equal(lt.out));
    }
}

TEST_CASE("ffn_forward fixed points") {
    const Tensor zero_h = Tensor::matrix(Mat::Zero(3, 2));
    const Tensor w1 = Tensor::from_rows({{1.0, 0.0}, {0.0, 1.0}});
    const Tensor w2 = Tensor::from_rows({{1.0, 0.0}, {0.0, 1.0}});
    CHECK(ffn_forward(zero_h, w1, w2).bit_equal(Tensor::matrix(Mat::Zero(3, 2))));

    const Tensor h = Tensor::from_rows({{1.0, 0.0}});
    const Tensor out = ffn_forward(h, w1, w2);
    CHECK(out.at(0, 0) == doctest::Approx(0.7310585786300049).epsilon(1e-15));
    CHECK(out.at(0, 1) == 0.0);

    const Tensor w1_zero = Tensor::matrix(Mat::Zero(2, 2));
    CHECK(ffn_forward(h, w1_zero, w2).bit_equal(Tensor::matrix(Mat::Zero(1, 2))));

    CHECK_THROWS_AS(ffn_forward(h, Tensor::matrix(Mat::Zero(3, 2)), w2), Error);
}

TEST_CASE("greedy decoding is deterministic and halts") {
    Rng rng(11);
    const Model m = Model::init(small_config(), 21);
    const auto prompt = random_tokens(rng, 5, m.config.vocab_size);

    const GreedyResult one = generate_greedy(m, prompt, 1, {}, false);
    CHECK(one.tokens.size() == 1);
    const ForwardTrace direct = forward_with_hooks(m, prompt, {}, false);
    CHECK(one.tokens[0] == direct.top_token);

    const GreedyResult a = generate_greedy(m, prompt, 6, {}, false);
    const GreedyResult b = generate_greedy(m, prompt, 6, {}, false);
    CHECK(a.tokens == b.tokens);
    CHECK(a.tokens.size() <= 6);

    CHECK_THROWS_AS(generate_greedy(m, prompt, m.config.max_seq_len, {}, false), Error);
}

TEST_CASE("argmax prefers the lowest id on ties") {
    const Tensor logits = Tensor::from_rows({{0.5, 2.0, 2.0, 1.0}});
    CHECK(argmax_lowest(logits, 0) == 1);
}

TEST_CASE("hook validation") {
    Rng rng(12);
    const Model m = Model::init(small_config(), 31);
    const auto toks = random_tokens(rng, 4, m.config.vocab_size);

    try {
        forward_with_hooks(m, toks, {HookSpec::zero({{5, 0}})}, false);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Config);
    }

    try {
        forward_with_hooks(m, toks,
                           {HookSpec::zero({{0, 4}}), HookSpec::scale(2.0, {{0, 4}})}, false);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Conflict);
    }
}

TEST_CASE("resume tail reproduces the full forward from any layer") {
    Rng rng(13);
    const Model m = Model::init(small_config(), 47);
    const auto toks = random_tokens(rng, 9, m.config.vocab_size);
    const ForwardTrace base = forward_with_hooks(m, toks, {}, true);
    const Index p = static_cast<Index>(toks.size()) - 1;

    for (int layer = 0; layer < m.config.n_layers; ++layer) {
        ad::Tape t;
        const Mat h_row = base.layers[static_cast<std::size_t>(layer)].ffn.mat().row(p);
        const ad::NodeId h = t.constant(Tensor::matrix(h_row));
        const ad::NodeId logits_row = build_resume_tail(t, m, base, layer, p, h);
        const Tensor& got = t.value(logits_row);
        for (Index c = 0; c < got.cols(); ++c) {
            CHECK(std::abs(got.at(0, c) - base.logits.at(p, c)) <= 1e-9);
        }
    }
}

TEST_CASE("resume tail sees hook effects identically to a hooked forward") {
    Rng rng(14);
    const Model m = Model::init(small_config(), 53);
    const auto toks = random_tokens(rng, 7, m.config.vocab_size);
    const int layer = m.config.n_layers - 1;
    const Index p = static_cast<Index>(toks.size()) - 1;

    const ForwardTrace base = forward_with_hooks(m, toks, {}, true);
    const ForwardTrace hooked = forward_with_hooks(m, toks, {HookSpec::zero({{layer, 3}})}, false);

    Mat h_row = base.layers[static_cast<std::size_t>(layer)].ffn.mat().row(p);
    h_row(0, 3) = 0.0;
    ad::Tape t;
    const ad::NodeId logits_row =
        build_resume_tail(t, m, base, layer, p, t.constant(Tensor::matrix(h_row)));
    const Tensor& got = t.value(logits_row);
    for (Index c = 0; c < got.cols(); ++c) {
        CHECK(std::abs(got.at(0, c) - hooked.logits.at(p, c)) <= 1e-9);
    }
}

TEST_CASE("resume tail recomputes every downstream row after a mid-sequence clamp") {
    Rng rng(16);
    const Model m = Model::init(small_config(), 71);
    const auto toks = random_tokens(rng, 9, m.config.vocab_size);
    const auto rows = static_cast<Index>(toks.size());
    const ForwardTrace base = forward_with_hooks(m, toks, {}, true);

    for (int layer = 0; layer < m.config.n_layers; ++layer) {
        for (Index p : {Index{0}, Index{4}, rows - 1}) {
            // half the natural activation, a realistic integration point
            const Mat h_row = 0.5 * base.layers[static_cast<std::size_t>(layer)].ffn.mat().row(p);
            ad::Tape t;
            const ad::NodeId tail =
                build_resume_tail(t, m, base, layer, p, t.constant(Tensor::matrix(h_row)));
            const Tensor& got = t.value(tail);
            REQUIRE(got.rows() == rows - p);

            const Mat ref = reference_logits_clamped(m, toks, layer, p, h_row);
            for (Index i = 0; i < got.rows(); ++i) {
                for (Index c = 0; c < got.cols(); ++c) {
                    CHECK(std::abs(got.at(i, c) - ref(p + i, c)) <= 1e-9);
                }
            }
        }
    }
}

TEST_CASE("checkpoint round trip preserves behavior bit for bit") {
    Rng rng(15);
    const Model m = Model::init(small_config(), 61);
    const auto toks = random_tokens(rng, 6, m.config.vocab_size);
    const auto path = std::filesystem::temp_directory_path() / "knpl_test_checkpoint.bin";

    save_checkpoint(m, path);
    const Model loaded = load_checkpoint(path);
    CHECK(loaded.config.d_model == m.config.d_model);
    for (std::size_t i = 0; i < m.named_tensors().size(); ++i) {
        CHECK(loaded.named_tensors()[i].second->bit_equal(*m.named_tensors()[i].second));
    }
    const ForwardTrace a = forward_with_hooks(m, toks, {}, false);
    const ForwardTrace b = forward_with_hooks(loaded, toks, {}, false);
    CHECK(a.logits.bit_equal(b.logits));

    // Same bytes on disk for the same weights.
    const auto path2 = std::filesystem::temp_directory_path() / "knpl_test_checkpoint2.bin";
    save_checkpoint(loaded, path2);
    CHECK(file_hash(path) == file_hash(path2));

    std::filesystem::remove(path);
    std::filesystem::remove(path2);
}

TEST_CASE("checkpoint rejects malformed files") {
    const auto dir = std::filesystem::temp_directory_path();
    const auto bad_magic = dir / "knpl_bad_magic.bin";
    {
        std::ofstream f(bad_magic, std::ios::binary);
        f << "NOPE0000000000000000";
    }
    try {
        load_checkpoint(bad_magic);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Parse);
    }
    std::filesystem::remove(bad_magic);

    const Model m = Model::init(small_config(), 3);
    const auto truncated = dir / "knpl_truncated.bin";
    save_checkpoint(m, truncated);
    const auto size = std::filesystem::file_size(truncated);
    std::filesystem::resize_file(truncated, size / 2);
    try {
        load_checkpoint(truncated);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Parse);
    }
    std::filesystem::remove(truncated);
}

TEST_CASE("tokenizer basics") {
    Tokenizer t = Tokenizer::build({"paris", "france", "capital", "of", "the"});
    CHECK(t.id("[BOS]") == Tokenizer::kBos);
    CHECK(t.id("[EOA]") == Tokenizer::kEoa);
    CHECK(t.id("[SEP]") == Tokenizer::kSep);
    CHECK(Tokenizer::kEoa == kEndToken);

    const auto ids = t.encode("the capital of france");
    CHECK(ids.size() == 4);
    CHECK(t.decode(ids) == "the capital of france");

    // Sorted vocabulary: ids depend on the word set, not insertion order.
    Tokenizer t2 = Tokenizer::build({"the", "of", "capital", "france", "paris"});
    CHECK(t2.id("paris") == t.id("paris"));

    CHECK_THROWS_AS(t.id("unknown"), Error);
    CHECK_THROWS_AS(t.encode("capital of germany"), Error);
    CHECK(t.decode({Tokenizer::kBos, t.id("paris"), Tokenizer::kEoa}, true) == "paris");
}
