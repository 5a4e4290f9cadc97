#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "knpl/error.hpp"
#include "knpl/rng.hpp"
#include "knpl/tape.hpp"

using namespace knpl;
using namespace knpl::ad;

namespace {

Tensor random_matrix(Rng& rng, Index rows, Index cols, double span = 2.0) {
    Mat m(rows, cols);
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) {
            m(r, c) = rng.uniform(-span, span);
        }
    }
    return Tensor::matrix(std::move(m));
}

using BuildFn = std::function<NodeId(Tape&, const std::vector<NodeId>&)>;

double forward_value(const std::vector<Tensor>& leaves, const BuildFn& build) {
    Tape t;
    std::vector<NodeId> ids;
    ids.reserve(leaves.size());
    for (const Tensor& v : leaves) ids.push_back(t.leaf(v, true));
    return t.value(build(t, ids)).item();
}

// Central-difference gradient check. Returns the max absolute difference
// between reverse-mode and finite-difference gradients, normalized by the
// overall gradient scale (so tiny graphs with large gradients are not
// penalized by truncation error).
double grad_vs_fd(const std::vector<Tensor>& leaves, const BuildFn& build, double h = 1e-3) {
    Tape t;
    std::vector<NodeId> ids;
    for (const Tensor& v : leaves) ids.push_back(t.leaf(v, true));
    const NodeId out = build(t, ids);
    const std::vector<Tensor> analytic = t.grad(out, ids);

    double max_diff = 0.0;
    double fd_scale = 0.0;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        const Mat& base = leaves[li].mat();
        for (Index r = 0; r < base.rows(); ++r) {
            for (Index c = 0; c < base.cols(); ++c) {
                std::vector<Tensor> plus = leaves;
                std::vector<Tensor> minus = leaves;
                Mat mp = base;
                Mat mm = base;
                mp(r, c) += h;
                mm(r, c) -= h;
                plus[li] = leaves[li].with_same_shape(std::move(mp));
                minus[li] = leaves[li].with_same_shape(std::move(mm));
                const double fd = (forward_value(plus, build) - forward_value(minus, build)) / (2.0 * h);
                const double a = analytic[li].at(r, c);
                max_diff = std::max(max_diff, std::abs(a - fd));
                fd_scale = std::max(fd_scale, std::abs(fd));
            }
        }
    }
    return max_diff / std::max(1.0, fd_scale);
}

void check_op_fd(const char* label, Rng& rng, int instances,
                 const std::function<std::pair<std::vector<Tensor>, BuildFn>(Rng&)>& make) {
    double worst = 0.0;
    for (int i = 0; i < instances; ++i) {
        auto [leaves, build] = make(rng);
        worst = std::max(worst, grad_vs_fd(leaves, build));
    }
    INFO(label);
    CHECK(worst <= 1e-4);
}

ErrorKind kind_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an error");
    return ErrorKind::Shape;
}

} // namespace

TEST_CASE("silu reference points") {
    CHECK(silu_value(0.0) == 0.0);
    CHECK(silu_value(1.0) == doctest::Approx(0.7310585786300049).epsilon(1e-15));

    Tape t;
    const NodeId x = t.leaf(Tensor::scalar(0.0), true);
    const NodeId y = silu(t, x);
    const std::vector<NodeId> wrt{x};
    const auto g = t.grad(y, wrt);
    CHECK(g[0].item() == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("per-op gradients match central differences") {
    Rng rng(20260818);
    const int n = 120;

    check_op_fd("matmul", rng, n, [](Rng& r) -> std::pair<std::vector<Tensor>, BuildFn> {
        const Index a = 1 + static_cast<Index>(r.below(4));
        const Index b = 1 + static_cast<Index>(r.below(4));
        const Index c = 1 + static_cast<Index>(r.below(4));
        return {{random_matrix(r, a, b), random_matrix(r, b, c)},
                [](Tape& t, const std::vector<NodeId>& id) { return sum(t, matmul(t, id[0], id[1])); }};
    });

    check_op_fd("transpose", rng, n, [](Rng& r) -> std::pair<std::vector<Tensor>, BuildFn> {
        return {{random_matrix(r, 2 + static_cast<Index>(r.below(3)), 1 + static_cast<Index>(r.below(4)))},
                [](Tape& t, const std::vector<NodeId>& id) {
                    return sum(t, mul(t, transpose(t, id[0]), transpose(t, id[0])));
                }};
    });

    check_op_fd("add/mul/scale", rng, n, [](Rng& r) -> std::pair<std::vector<Tensor>, BuildFn> {
        const Index rows = 1 + static_cast<Index>(r.below(3));
        const Index cols = 1 + static_cast<Index>(r.below(4));
        return {{random_matrix(r, rows, cols), random_matrix(r, rows, cols)},
                [](Tape& t, const std::vector<NodeId>& id) {
                    return sum(t, scale(t, mul(t, add(t, id[0], id[1]), id[0]), 0.75));
                }};
    });

    check_op_fd("add_bias", rng, n, [](Rng& r) -> std::pair<std::vector<Tensor>, BuildFn> {
        const Index rows = 1 + static_cast<Index>(r.below(3));
        const Index cols = 1 + static_cast<Index>(r.below(4));
        return {{random_matrix(r, rows, cols), random_matrix(r, 1, cols)},
                [](Tape& t, const std::vector<NodeId>& id) {
                    return sum(t, silu(t, add_bias(t, id[0], id[1])));
                }};
    });

    check_op_fd("silu", rng, n, [](Rng& r) -> std::pair<std::vector<Tensor>, BuildFn> {
        return {{random_matrix(r, 1 + static_cast<Index>(r.below(3)), 1 + static_cast<Index>(r.below(4)), 4.0)},
                [](Tape& t, const std::vector<NodeId>& id) { return sum(t, silu(t, id[0])); }};
    });

    check_op_fd("sigmoid", rng, n, [](Rng& r) -> std::pair<std::vector<Tensor>, BuildFn> {
        return {{random_matrix(r, 1 + static_cast<Index>(r.below(3)), 1 + static_cast<Index>(r.below(4)), 4.0)},
                [](Tape& t, const std::vector<NodeId>& id) { return sum(t, sigmoid(t, id[0])); }};
    });

    check_op_fd("rms_norm", rng, n, [](Rng& r) -> std::pair<std::vector<Tensor>, BuildFn> {
        const Index rows = 1 + static_cast<Index>(r.below(3));
        const Index cols = 2 + static_cast<Index>(r.below(4));
        return {{random_matrix(r, rows, cols), random_matrix(r, 1, cols)},
                [](Tape& t, const std::vector<NodeId>& id) {
                    return sum(t, rms_norm(t, id[0], id[1], 1e-6));
                }};
    });

    check_op_fd("softmax_rows", rng, n, [](Rng& r) -> std::pair<std::vector<Tensor>, BuildFn> {
        const Index rows = 1 + static_cast<Index>(r.below(3));
        const Index cols = 2 + static_cast<Index>(r.below(4));
        Tensor w = random_matrix(r, cols, 1);
        return {{random_matrix(r, rows, cols), w},
                [](Tape& t, const std::vector<NodeId>& id) {
                    return sum(t, matmul(t, softmax_rows(t, id[0]), id[1]));
                }};
    });

    check_op_fd("cross_entropy", rng, n, [](Rng& r) -> std::pair<std::vector<Tensor>, BuildFn> {
        const Index rows = 2 + static_cast<Index>(r.below(3));
        const Index vocab = 3 + static_cast<Index>(r.below(4));
        std::vector<int> targets;
        std::vector<double> mask;
        bool any = false;
        for (Index i = 0; i < rows; ++i) {
            targets.push_back(static_cast<int>(r.below(static_cast<std::uint64_t>(vocab))));
            const bool keep = r.uniform01() < 0.7 || (!any && i == rows - 1);
            mask.push_back(keep ? 1.0 : 0.0);
            any = any || keep;
        }
        return {{random_matrix(r, rows, vocab)},
                [targets, mask](Tape& t, const std::vector<NodeId>& id) {
                    return cross_entropy(t, id[0], targets, mask);
                }};
    });

    check_op_fd("gather_rows", rng, n, [](Rng& r) -> std::pair<std::vector<Tensor>, BuildFn> {
        const Index rows = 3 + static_cast<Index>(r.below(3));
        const Index cols = 1 + static_cast<Index>(r.below(4));
        std::vector<Index> pick_rows;
        for (int i = 0; i < 4; ++i) pick_rows.push_back(static_cast<Index>(r.below(static_cast<std::uint64_t>(rows))));
        return {{random_matrix(r, rows, cols)},
                [pick_rows](Tape& t, const std::vector<NodeId>& id) {
                    return sum(t, silu(t, gather_rows(t, id[0], pick_rows)));
                }};
    });

    check_op_fd("mean/slice/concat/pick", rng, n, [](Rng& r) -> std::pair<std::vector<Tensor>, BuildFn> {
        const Index rows = 2 + static_cast<Index>(r.below(2));
        const Index cols = 3 + static_cast<Index>(r.below(3));
        return {{random_matrix(r, rows, cols), random_matrix(r, rows, 2)},
                [](Tape& t, const std::vector<NodeId>& id) {
                    const NodeId s = slice_cols(t, id[0], 1, 2);
                    const std::vector<NodeId> parts{s, id[1]};
                    const NodeId cc = concat_cols(t, parts);
                    const std::vector<NodeId> stack{cc, cc};
                    const NodeId cr = concat_rows(t, stack);
                    const NodeId m = mean(t, mul(t, cr, cr));
                    const NodeId p = pick(t, cc, 0, 0);
                    const std::vector<NodeId> two{m, p};
                    (void)two;
                    return add(t, m, p);
                }};
    });

    check_op_fd("override_row", rng, n, [](Rng& r) -> std::pair<std::vector<Tensor>, BuildFn> {
        const Index rows = 2 + static_cast<Index>(r.below(3));
        const Index cols = 2 + static_cast<Index>(r.below(3));
        const Index row = static_cast<Index>(r.below(static_cast<std::uint64_t>(rows)));
        return {{random_matrix(r, rows, cols), random_matrix(r, 1, cols)},
                [row](Tape& t, const std::vector<NodeId>& id) {
                    return sum(t, silu(t, override_row(t, id[0], row, id[1])));
                }};
    });

    check_op_fd("hook_apply", rng, n, [](Rng& r) -> std::pair<std::vector<Tensor>, BuildFn> {
        const Index rows = 2 + static_cast<Index>(r.below(3));
        const Index cols = 3 + static_cast<Index>(r.below(3));
        std::vector<ColPatch> patches;
        patches.push_back(ColPatch{0, true, 0.0});
        patches.push_back(ColPatch{1, false, r.uniform(0.5, 3.0)});
        return {{random_matrix(r, rows, cols)},
                [patches](Tape& t, const std::vector<NodeId>& id) {
                    return sum(t, silu(t, hook_apply(t, id[0], patches)));
                }};
    });

    check_op_fd("composite mlp block", rng, 40, [](Rng& r) -> std::pair<std::vector<Tensor>, BuildFn> {
        const Index seq = 2 + static_cast<Index>(r.below(2));
        const Index d = 3;
        const Index ff = 5;
        std::vector<Tensor> leaves{
            random_matrix(r, seq, d),  // activations
            random_matrix(r, 1, d),    // norm gain
            random_matrix(r, d, ff),   // up projection
            random_matrix(r, ff, d),   // down projection
        };
        return {leaves, [](Tape& t, const std::vector<NodeId>& id) {
                    const NodeId normed = rms_norm(t, id[0], id[1], 1e-6);
                    const NodeId hidden = silu(t, matmul(t, normed, id[2]));
                    const NodeId out = add(t, id[0], matmul(t, hidden, id[3]));
                    return mean(t, mul(t, out, out));
                }};
    });
}

TEST_CASE("gradient is linear in the output seed") {
    Rng rng(7);
    const Tensor a = random_matrix(rng, 3, 3);
    const Tensor b = random_matrix(rng, 3, 3);

    auto grad_of = [&](double alpha, double beta) {
        Tape t;
        const NodeId la = t.leaf(a, true);
        const NodeId lb = t.leaf(b, true);
        const NodeId f = sum(t, mul(t, la, lb));
        const NodeId g = sum(t, silu(t, matmul(t, la, lb)));
        const NodeId combined = add(t, scale(t, f, alpha), scale(t, g, beta));
        const std::vector<NodeId> wrt{la};
        return t.grad(combined, wrt)[0];
    };

    const Tensor gf = grad_of(1.0, 0.0);
    const Tensor gg = grad_of(0.0, 1.0);
    const Tensor mix = grad_of(2.0, -3.0);
    for (Index r = 0; r < 3; ++r) {
        for (Index c = 0; c < 3; ++c) {
            const double expect = 2.0 * gf.at(r, c) - 3.0 * gg.at(r, c);
            CHECK(mix.at(r, c) == doctest::Approx(expect).epsilon(1e-12));
        }
    }
}

TEST_CASE("scalar calculus fixed points") {
    Tape t;
    const NodeId x = t.leaf(Tensor::scalar(3.0), true);
    const NodeId identity = sum(t, x);
    const std::vector<NodeId> wrt{x};
    CHECK(t.grad(identity, wrt)[0].item() == 1.0);

    const NodeId square = mul(t, x, x);
    CHECK(t.grad(square, wrt)[0].item() == 6.0);
}

TEST_CASE("interior gradient equals a manual split-and-chain") {
    Rng rng(17);
    const Tensor xv = random_matrix(rng, 2, 3);

    // Full graph: z = sum(y * y) with y = silu(x).
    Tape full;
    const NodeId x = full.leaf(xv, true);
    const NodeId y = silu(full, x);
    const NodeId z = sum(full, mul(full, y, y));
    const std::vector<NodeId> wrt_xy{x, y};
    const auto g = full.grad(z, wrt_xy);

    // Second stage alone, seeded at the recorded value of y.
    Tape stage2;
    const NodeId y_leaf = stage2.leaf(full.value(y), true);
    const NodeId z2 = sum(stage2, mul(stage2, y_leaf, y_leaf));
    const std::vector<NodeId> wrt_y{y_leaf};
    const Tensor dz_dy = stage2.grad(z2, wrt_y)[0];
    for (Index r = 0; r < 2; ++r) {
        for (Index c = 0; c < 3; ++c) {
            CHECK(g[1].at(r, c) == doctest::Approx(dz_dy.at(r, c)).epsilon(1e-14));
            const double xi = xv.at(r, c);
            const double s = sigmoid_value(xi);
            const double dsilu = s * (1.0 + xi * (1.0 - s));
            CHECK(g[0].at(r, c) == doctest::Approx(dz_dy.at(r, c) * dsilu).epsilon(1e-12));
        }
    }
}

TEST_CASE("interior nodes can be differentiation targets") {
    Tape t;
    const NodeId x = t.leaf(Tensor::from_rows({{1.0, 2.0}, {3.0, 4.0}}), true);
    const NodeId y = mul(t, x, x);
    const NodeId z = sum(t, y);

    const std::vector<NodeId> wrt{y, x};
    const auto g = t.grad(z, wrt);
    for (Index r = 0; r < 2; ++r) {
        for (Index c = 0; c < 2; ++c) {
            CHECK(g[0].at(r, c) == 1.0);
            CHECK(g[1].at(r, c) == 2.0 * t.value(x).at(r, c));
        }
    }
}

TEST_CASE("unreachable targets get zero gradients") {
    Tape t;
    const NodeId x = t.leaf(Tensor::scalar(2.0), true);
    const NodeId unused = t.leaf(Tensor::from_rows({{1.0, 1.0}}), true);
    const NodeId y = mul(t, x, x);
    const std::vector<NodeId> wrt{unused};
    const auto g = t.grad(y, wrt);
    CHECK(g[0].same_shape(t.value(unused)));
    CHECK(g[0].at(0, 0) == 0.0);
    CHECK(g[0].at(0, 1) == 0.0);
}

TEST_CASE("replay reproduces recorded values bit for bit") {
    Rng rng(99);
    Tape t;
    const NodeId x = t.leaf(random_matrix(rng, 4, 3), true);
    const NodeId g = t.leaf(random_matrix(rng, 1, 3));
    const NodeId w = t.leaf(random_matrix(rng, 3, 6));
    const NodeId h = silu(t, matmul(t, rms_norm(t, x, g, 1e-6), w));
    const NodeId patched = hook_apply(t, h, {ColPatch{2, true, 0.0}, ColPatch{4, false, 2.0}});
    (void)softmax_rows(t, patched);
    CHECK(t.replay_matches());
}

TEST_CASE("zeroing hook writes exact positive zero") {
    Tape t;
    const NodeId x = t.leaf(Tensor::from_rows({{-1.5, 2.0}, {-0.25, -3.0}}));
    const NodeId z = hook_apply(t, x, {ColPatch{0, true, 0.0}});
    const Tensor& v = t.value(z);
    CHECK(v.at(0, 0) == 0.0);
    CHECK_FALSE(std::signbit(v.at(0, 0)));
    CHECK_FALSE(std::signbit(v.at(1, 0)));
    CHECK(v.at(0, 1) == 2.0);
    CHECK(v.at(1, 1) == -3.0);
}

TEST_CASE("error taxonomy") {
    CHECK(kind_of([] {
              Tape t;
              const NodeId x = t.leaf(Tensor::from_rows({{1.0, 2.0}}));
              const std::vector<NodeId> wrt{x};
              t.grad(x, wrt); // non-scalar output
          }) == ErrorKind::Graph);

    CHECK(kind_of([] {
              Tape t;
              const NodeId y = t.leaf(Tensor::scalar(1.0));
              const std::vector<NodeId> wrt{NodeId{42}};
              t.grad(y, wrt);
          }) == ErrorKind::Graph);

    CHECK(kind_of([] {
              Tape t;
              t.leaf(Tensor::scalar(std::numeric_limits<double>::quiet_NaN()));
          }) == ErrorKind::NumericDomain);

    CHECK(kind_of([] {
              Tape t;
              const NodeId a = t.leaf(Tensor::from_rows({{1.0, 2.0}}));
              const NodeId b = t.leaf(Tensor::from_rows({{1.0, 2.0, 3.0}}));
              add(t, a, b);
          }) == ErrorKind::Shape);

    CHECK(kind_of([] {
              Tape t;
              const NodeId a = t.leaf(Tensor::from_rows({{1.0, 2.0}, {3.0, 4.0}}));
              cross_entropy(t, a, {0, 1}, {0.0, 0.0}); // mask selects nothing
          }) == ErrorKind::Shape);

    CHECK(kind_of([] {
              Tape t;
              const NodeId a = t.leaf(Tensor::from_rows({{1.0, 2.0}}));
              hook_apply(t, a, {ColPatch{5, false, 1.0}});
          }) == ErrorKind::Shape);

    CHECK(kind_of([] {
              Tape t;
              const NodeId big = t.leaf(Tensor::scalar(1e308));
              mul(t, big, big); // overflow to inf
          }) == ErrorKind::NumericDomain);
}
