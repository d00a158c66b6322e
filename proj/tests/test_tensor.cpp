#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "peftlad/grad_check.hpp"
#include "peftlad/rng.hpp"
#include "peftlad/tensor.hpp"

using namespace peftlad;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double scale_v = 1.0) {
    std::vector<double> values(shape_size(shape));
    for (auto& v : values) v = rng.uniform(-scale_v, scale_v);
    return Tensor<double>(std::move(shape), std::move(values));
}

} // namespace

TEST_CASE("matmul matches hand results") {
    Tensor<double> a({2, 2}, {1, 2, 3, 4});
    Tensor<double> b({2, 2}, {5, 6, 7, 8});
    CHECK(matmul(a, b).values() == std::vector<double>{19, 22, 43, 50});

    Tensor<double> eye({2, 2}, {1, 0, 0, 1});
    CHECK(matmul(a, eye).values() == a.values());
    CHECK(matmul(eye, a).values() == a.values());

    // a^T b and a b^T against explicit expansions
    CHECK(matmul(a, b, true, false).values() == std::vector<double>{26, 30, 38, 44});
    CHECK(matmul(a, b, false, true).values() == std::vector<double>{17, 23, 39, 53});
    CHECK(matmul(a, b, true, true).values() == std::vector<double>{23, 31, 34, 46});
}

TEST_CASE("matmul rejects mismatched inner extents with shapes in the message") {
    Tensor<double> a({2, 3}, std::vector<double>(6, 1.0));
    Tensor<double> b({2, 2}, std::vector<double>(4, 1.0));
    try {
        matmul(a, b);
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        const std::string message = e.what();
        CHECK(message.find("[2x3]") != std::string::npos);
        CHECK(message.find("[2x2]") != std::string::npos);
    }
}

TEST_CASE("matvec matches hand results in both orientations") {
    Tensor<double> a({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor<double> x({3}, {1, 0, -1});
    CHECK(matvec(a, x).values() == std::vector<double>{-2, -2});
    Tensor<double> y({2}, {1, 2});
    CHECK(matvec(a, y, true).values() == std::vector<double>{9, 12, 15});
}

TEST_CASE("gradient of x*x at 3 is exactly 6 and survives finite differences") {
    Tensor<double> x = Tensor<double>::scalar(3.0, true);
    Tensor<double> loss = sum(mul(x, x));
    loss.backward();
    CHECK(x.grad()[0] == 6.0);

    auto f = [](const std::vector<Tensor<double>>& in) { return sum(mul(in[0], in[0])); };
    GradCheckResult result = grad_check(f, {Tensor<double>::scalar(3.0)});
    CHECK(result.max_rel_error < 1e-9);
}

TEST_CASE("matmul and matvec gradients agree with finite differences") {
    Rng rng(11);
    auto f = [](const std::vector<Tensor<double>>& in) { return sum(matmul(in[0], in[1])); };
    GradCheckResult r1 = grad_check(f, {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)});
    CHECK(r1.max_rel_error < 1e-6);

    auto ft = [](const std::vector<Tensor<double>>& in) { return sum(matmul(in[0], in[1], true, true)); };
    GradCheckResult r2 = grad_check(ft, {random_tensor({4, 3}, rng), random_tensor({2, 4}, rng)});
    CHECK(r2.max_rel_error < 1e-6);

    auto fv = [](const std::vector<Tensor<double>>& in) { return sum(matvec(in[0], in[1], true)); };
    GradCheckResult r3 = grad_check(fv, {random_tensor({3, 4}, rng), random_tensor({3}, rng)});
    CHECK(r3.max_rel_error < 1e-6);
}

TEST_CASE("the non-differentiable kink |x| at zero is reported, not masked") {
    auto f = [](const std::vector<Tensor<double>>& in) { return sum(sqrt_elem(mul(in[0], in[0]))); };
    GradCheckResult result = grad_check(f, {Tensor<double>::scalar(0.0)});
    CHECK(std::isinf(result.max_rel_error));
}

TEST_CASE("softmax rows sum to one and ties split evenly") {
    Rng rng(5);
    Tensor<double> x = random_tensor({4, 7}, rng, 3.0);
    Tensor<double> y = softmax_rows(x);
    for (std::size_t r = 0; r < 4; ++r) {
        double total = 0.0;
        for (std::size_t c = 0; c < 7; ++c) total += y.values()[r * 7 + c];
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
    Tensor<double> ties({1, 2}, {0.0, 0.0});
    CHECK(softmax_rows(ties).values() == std::vector<double>{0.5, 0.5});
}

TEST_CASE("softmax gradient agrees with finite differences") {
    Rng rng(7);
    Tensor<double> weights = random_tensor({3, 5}, rng);
    auto f = [weights](const std::vector<Tensor<double>>& in) {
        return sum(mul(softmax_rows(in[0]), weights));
    };
    GradCheckResult result = grad_check(f, {random_tensor({3, 5}, rng, 2.0)});
    CHECK(result.max_rel_error < 1e-6);
}

TEST_CASE("layer norm of a constant row is exactly zero under identity affine") {
    Tensor<double> x({2, 4}, {3, 3, 3, 3, -1, -1, -1, -1});
    Tensor<double> gamma = Tensor<double>::full({4}, 1.0);
    Tensor<double> beta = Tensor<double>::zeros({4});
    CHECK(layer_norm_rows(x, gamma, beta).values() == std::vector<double>(8, 0.0));
}

TEST_CASE("layer norm gradients for input and affine terms pass finite differences") {
    Rng rng(13);
    Tensor<double> weights = random_tensor({3, 6}, rng);
    auto f = [weights](const std::vector<Tensor<double>>& in) {
        return sum(mul(layer_norm_rows(in[0], in[1], in[2]), weights));
    };
    GradCheckResult result =
        grad_check(f, {random_tensor({3, 6}, rng, 2.0), random_tensor({6}, rng), random_tensor({6}, rng)});
    CHECK(result.max_rel_error < 1e-6);
}

TEST_CASE("cross entropy matches closed forms") {
    Tensor<double> even({1, 2}, {0.0, 0.0});
    CHECK(cross_entropy_mean(even, {0}).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    Tensor<double> confident({1, 2}, {20.0, -20.0});
    CHECK(cross_entropy_mean(confident, {0}).item() == doctest::Approx(0.0).epsilon(1e-9));

    // mean over rows
    Tensor<double> two({2, 2}, {0.0, 0.0, 0.0, 0.0});
    CHECK(cross_entropy_mean(two, {0, 1}).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy validates labels and logits") {
    Tensor<double> logits({2, 2}, {0, 0, 0, 0});
    CHECK_THROWS_AS(cross_entropy_mean(logits, {0}), InputError);
    CHECK_THROWS_AS(cross_entropy_mean(logits, {0, 2}), InputError);
    Tensor<double> bad({1, 2}, {std::numeric_limits<double>::quiet_NaN(), 0.0});
    CHECK_THROWS_AS(cross_entropy_mean(bad, {0}), InputError);
}

TEST_CASE("cross entropy gradient agrees with finite differences") {
    Rng rng(17);
    auto f = [](const std::vector<Tensor<double>>& in) { return cross_entropy_mean(in[0], {1, 0, 1, 1}); };
    GradCheckResult result = grad_check(f, {random_tensor({4, 2}, rng, 2.0)});
    CHECK(result.max_rel_error < 1e-6);
}

TEST_CASE("activations match known values and finite differences") {
    Tensor<double> x({3}, {-1.0, 0.0, 2.0});
    CHECK(relu(x).values() == std::vector<double>{0.0, 0.0, 2.0});
    Tensor<double> g = gelu(x);
    CHECK(g.values()[1] == 0.0);
    CHECK(g.values()[2] == doctest::Approx(2.0 * 0.5 * (1.0 + std::erf(2.0 / std::sqrt(2.0)))).epsilon(1e-12));

    Rng rng(19);
    Tensor<double> weights = random_tensor({2, 5}, rng);
    auto f = [weights](const std::vector<Tensor<double>>& in) { return sum(mul(gelu(in[0]), weights)); };
    GradCheckResult result = grad_check(f, {random_tensor({2, 5}, rng, 2.0)});
    CHECK(result.max_rel_error < 1e-6);
}

TEST_CASE("embedding gathers rows and scatter-adds gradients") {
    std::vector<double> table_values(15);
    for (std::size_t i = 0; i < 15; ++i) table_values[i] = static_cast<double>(i);
    Tensor<double> table({5, 3}, table_values, true);
    Tensor<double> rows = embedding_rows(table, {4, 0, 4});
    CHECK(rows.values() == std::vector<double>{12, 13, 14, 0, 1, 2, 12, 13, 14});

    sum(rows).backward();
    const std::vector<double>& grad = table.grad();
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(grad[4 * 3 + c] == 2.0); // gathered twice
        CHECK(grad[0 * 3 + c] == 1.0);
        CHECK(grad[1 * 3 + c] == 0.0);
    }
    CHECK_THROWS_AS(embedding_rows(table, {5}), InputError);
    CHECK_THROWS_AS(embedding_rows(table, {-1}), InputError);
}

TEST_CASE("row selection and replacement route values and gradients by row") {
    Tensor<double> x({3, 2}, {1, 2, 3, 4, 5, 6}, true);
    CHECK(select_row(x, 1).values() == std::vector<double>{3, 4});
    CHECK_THROWS_AS(select_row(x, 3), DimensionError);

    Tensor<double> replacement({2}, {9, 9}, true);
    Tensor<double> edited = replace_row(x, 1, replacement);
    CHECK(edited.values() == std::vector<double>{1, 2, 9, 9, 5, 6});

    sum(edited).backward();
    CHECK(x.grad() == std::vector<double>{1, 1, 0, 0, 1, 1});
    CHECK(replacement.grad() == std::vector<double>{1, 1});
}

TEST_CASE("stack, slice and concat are mutually consistent") {
    Tensor<double> r0({3}, {1, 2, 3});
    Tensor<double> r1({3}, {4, 5, 6});
    Tensor<double> stacked = rows_stack<double>({r0, r1});
    CHECK(stacked.shape() == Shape{2, 3});
    CHECK(stacked.values() == std::vector<double>{1, 2, 3, 4, 5, 6});

    Tensor<double> left = slice_cols(stacked, 0, 1);
    Tensor<double> right = slice_cols(stacked, 1, 3);
    Tensor<double> joined = concat_cols<double>({left, right});
    CHECK(joined.values() == stacked.values());

    Rng rng(23);
    auto f = [](const std::vector<Tensor<double>>& in) {
        return sum(concat_cols<double>({slice_cols(in[0], 0, 2), slice_cols(in[0], 2, 3)}));
    };
    GradCheckResult result = grad_check(f, {random_tensor({2, 3}, rng)});
    CHECK(result.max_rel_error < 1e-9);
}

TEST_CASE("elementwise ops broadcast a trailing vector and reject other shapes") {
    Tensor<double> x({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor<double> bias({3}, {10, 20, 30});
    CHECK(add(x, bias).values() == std::vector<double>{11, 22, 33, 14, 25, 36});
    CHECK(sub(x, bias).values() == std::vector<double>{-9, -18, -27, -6, -15, -24});
    CHECK(mul(x, bias).values() == std::vector<double>{10, 40, 90, 40, 100, 180});

    Tensor<double> wrong({2}, {1, 2});
    CHECK_THROWS_AS(add(x, wrong), DimensionError);

    Rng rng(29);
    auto f = [](const std::vector<Tensor<double>>& in) { return sum(mul(add(in[0], in[1]), in[0])); };
    GradCheckResult result = grad_check(f, {random_tensor({2, 3}, rng), random_tensor({3}, rng)});
    CHECK(result.max_rel_error < 1e-6);
}

TEST_CASE("scale, sum and mean match hand arithmetic") {
    Tensor<double> x({4}, {1, 2, 3, 4});
    CHECK(scale(x, 2.5).values() == std::vector<double>{2.5, 5.0, 7.5, 10.0});
    CHECK(sum(x).item() == 10.0);
    CHECK(mean(x).item() == 2.5);
}

TEST_CASE("backward is linear in the loss") {
    Rng rng(31);
    Tensor<double> c1 = random_tensor({2, 3}, rng);
    Tensor<double> c2 = random_tensor({2, 3}, rng);
    Tensor<double> x = random_tensor({2, 3}, rng);
    x.set_requires_grad(true);

    Tensor<double> combined = add(scale(sum(mul(x, c1)), 2.0), scale(sum(mul(x, c2)), 3.0));
    combined.backward();
    std::vector<double> got = x.grad();
    x.zero_grad();

    for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i] == 2.0 * c1.values()[i] + 3.0 * c2.values()[i]);
    }
}

TEST_CASE("backward frees the tape but keeps leaf gradients") {
    Tensor<double> x({2}, {1, 2}, true);
    Tensor<double> loss = sum(mul(x, x));
    loss.backward();
    CHECK(x.has_grad());
    CHECK(!loss.node()->backprop);
    CHECK(loss.node()->parents.empty());
    x.zero_grad();
    CHECK(!x.has_grad());
}

TEST_CASE("backward demands a finite scalar") {
    Tensor<double> matrix_result = matmul(Tensor<double>({1, 2}, {1, 2}, true), Tensor<double>({2, 2}, {1, 0, 0, 1}));
    CHECK_THROWS_AS(matrix_result.backward(), DimensionError);
    CHECK_THROWS_AS(matrix_result.item(), DimensionError);

    Tensor<double> inf_leaf({1}, {std::numeric_limits<double>::infinity()}, true);
    Tensor<double> loss = sum(inf_leaf);
    CHECK_THROWS_AS(loss.backward(), NumericError);
}

TEST_CASE("no-grad mode records nothing") {
    Tensor<double> x({2}, {1, 2}, true);
    {
        NoGradGuard guard;
        Tensor<double> y = sum(mul(x, x));
        CHECK(!y.requires_grad());
        y.backward(); // walks an empty graph
    }
    CHECK(!x.has_grad());
    Tensor<double> tracked = sum(mul(x, x));
    CHECK(tracked.requires_grad());
}

TEST_CASE("dropout is the identity at rate zero and an exact mask otherwise") {
    Rng rng(37);
    Tensor<double> x({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8}, true);
    Tensor<double> same = dropout(x, 0.0, rng);
    CHECK(same.node() == x.node());

    Tensor<double> dropped = dropout(x, 0.5, rng);
    for (std::size_t i = 0; i < 8; ++i) {
        const double v = dropped.values()[i];
        const bool kept = v == 2.0 * x.values()[i];
        CHECK((kept || v == 0.0));
    }
    sum(dropped).backward();
    for (std::size_t i = 0; i < 8; ++i) {
        const double g = x.grad()[i];
        CHECK((g == 0.0 || g == 2.0));
        CHECK((g == 0.0) == (dropped.values()[i] == 0.0));
    }
}

TEST_CASE("random initializers are deterministic per seed") {
    Rng a(41), b(41), c(43);
    Tensor<float> t1 = random_normal<float>({4, 4}, 0.02, a);
    Tensor<float> t2 = random_normal<float>({4, 4}, 0.02, b);
    Tensor<float> t3 = random_normal<float>({4, 4}, 0.02, c);
    CHECK(t1.values() == t2.values());
    CHECK(t1.values() != t3.values());

    Rng u1(47), u2(47);
    CHECK(random_uniform<float>({8}, 0.5, u1).values() == random_uniform<float>({8}, 0.5, u2).values());
}

TEST_CASE("tensor construction validates shape against value count") {
    CHECK_THROWS_AS(Tensor<double>({2, 2}, {1, 2, 3}), DimensionError);
    CHECK(Tensor<double>::zeros({2, 3}).values() == std::vector<double>(6, 0.0));
    CHECK(Tensor<double>::full({2}, 7.0).values() == std::vector<double>{7.0, 7.0});
}
