#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "tracecal/nn/layers.hpp"

using namespace tracecal;
using namespace tracecal::nn;
using tracecal::test::check_gradients;

namespace {

Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

// Scalar probe of an op: sum(op(x) .* R) for a fixed random R.
void expect_op_gradient(const char* name, std::vector<Var> inputs, const std::function<Var()>& op,
                        std::size_t samples = 12) {
  Rng rng(17);
  const Var probe_out = op();
  const Var weights = constant(random_matrix(rng, probe_out.rows(), probe_out.cols()));
  const auto loss = [&] { return sum_all(mul(op(), weights)); };
  const auto r = check_gradients(inputs, loss, samples, rng);
  INFO(name);
  CHECK(r.max_rel_error <= 1e-6);
}

}  // namespace

TEST_CASE("elementwise and matrix ops match finite differences") {
  Rng rng(1);
  Var a = parameter(random_matrix(rng, 4, 3));
  Var b = parameter(random_matrix(rng, 3, 5));
  Var c = parameter(random_matrix(rng, 4, 3));
  Var row = parameter(random_matrix(rng, 1, 3));
  Var col = parameter(random_matrix(rng, 4, 1));
  expect_op_gradient("matmul", {a, b}, [&] { return matmul(a, b); });
  expect_op_gradient("add", {a, c}, [&] { return add(a, c); });
  expect_op_gradient("sub", {a, c}, [&] { return sub(a, c); });
  expect_op_gradient("mul", {a, c}, [&] { return mul(a, c); });
  expect_op_gradient("scale", {a}, [&] { return scale(add_scalar(a, 0.3), -2.5); });
  expect_op_gradient("add_row", {a, row}, [&] { return add_row(a, row); });
  expect_op_gradient("mul_col", {a, col}, [&] { return mul_col(a, col); });
  expect_op_gradient("transpose", {a}, [&] { return transpose(a); });
  expect_op_gradient("tanh", {a}, [&] { return nn::tanh(a); });
  expect_op_gradient("sigmoid", {a}, [&] { return sigmoid(a); });
  expect_op_gradient("relu", {a}, [&] { return relu(a); });
  expect_op_gradient("leaky_relu", {a}, [&] { return leaky_relu(a, 0.2); });
}

TEST_CASE("shape and reduction ops match finite differences") {
  Rng rng(2);
  Var a = parameter(random_matrix(rng, 5, 3));
  Var b = parameter(random_matrix(rng, 5, 2));
  Var c = parameter(random_matrix(rng, 2, 3));
  expect_op_gradient("concat_cols", {a, b}, [&] {
    std::vector<Var> parts = {a, b};
    return concat_cols(parts);
  });
  expect_op_gradient("concat_rows", {a, c}, [&] {
    std::vector<Var> parts = {a, c};
    return concat_rows(parts);
  });
  expect_op_gradient("slice_rows", {a}, [&] { return slice_rows(a, 1, 3); });
  expect_op_gradient("slice_cols", {a}, [&] { return slice_cols(a, 1, 2); });
  expect_op_gradient("shift_rows+", {a}, [&] { return shift_rows(a, 2); });
  expect_op_gradient("shift_rows-", {a}, [&] { return shift_rows(a, -1); });
  expect_op_gradient("sum_all", {a}, [&] { return sum_all(a); });
  expect_op_gradient("mean_all", {a}, [&] { return mean_all(a); });
  expect_op_gradient("sum_rows", {a}, [&] { return sum_rows(a); });
  expect_op_gradient("mean_rows", {a}, [&] { return mean_rows(a); });
  expect_op_gradient("max_rows", {a}, [&] { return max_rows(a); });
  expect_op_gradient("sum_cols", {a}, [&] { return sum_cols(a); });
}

TEST_CASE("message passing ops match finite differences") {
  Rng rng(3);
  Var x = parameter(random_matrix(rng, 4, 3));
  Var e = parameter(random_matrix(rng, 6, 3));
  Var s = parameter(random_matrix(rng, 6, 1));
  Var t = parameter(random_matrix(rng, 6, 3 * 2));
  const std::vector<int> idx = {0, 3, 3, 1, 2, 0};
  const std::vector<int> seg = {0, 0, 1, 1, 1, 3};
  expect_op_gradient("gather_rows", {x}, [&] { return gather_rows(x, idx); });
  expect_op_gradient("scatter_add_rows", {e}, [&] { return scatter_add_rows(e, seg, 4); });
  expect_op_gradient("segment_max", {e}, [&] { return segment_max(e, seg, 4); });
  expect_op_gradient("segment_softmax", {s}, [&] { return segment_softmax(s, seg, 4); });
  expect_op_gradient("rowwise_matvec", {e, t}, [&] { return rowwise_matvec(e, t, 2); });
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> mask(4, 3);
  mask << true, false, true, true, true, true, false, false, true, false, false, false;
  expect_op_gradient("masked_softmax_rows", {x}, [&] { return masked_softmax_rows(x, mask); });
}

TEST_CASE("bce_with_logits value and gradient") {
  Rng rng(4);
  Var z = parameter(random_matrix(rng, 6, 1));
  const std::vector<double> y = {1, 0, 1, 1, 0, 0};
  const std::vector<double> w = {0.5, 2, 1, 1, 1.5, 0.25};
  const auto loss = bce_with_logits(z, y, w);
  double expect = 0;
  for (int i = 0; i < 6; ++i) {
    const double zi = z.value()(i, 0);
    expect += w[i] * (std::log1p(std::exp(zi)) - y[i] * zi);
  }
  CHECK(loss.item() == doctest::Approx(expect / 6).epsilon(1e-12));
  const auto r = check_gradients({z}, [&] { return bce_with_logits(z, y, w); }, 6, rng);
  CHECK(r.max_rel_error <= 1e-6);
  // Large logits stay finite.
  Var big = constant(Matrix::Constant(1, 1, 800.0));
  CHECK(std::isfinite(bce_with_logits(big, std::vector<double>{0}).item()));
}

TEST_CASE("masked softmax rows with no allowed entry are zero") {
  Var x = constant(Matrix::Ones(2, 2));
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> mask(2, 2);
  mask << false, false, true, true;
  const auto p = masked_softmax_rows(x, mask).value();
  CHECK(p(0, 0) == 0.0);
  CHECK(p(0, 1) == 0.0);
  CHECK(p(1, 0) == doctest::Approx(0.5));
}

TEST_CASE("layers match finite differences") {
  Rng rng(5);
  ParameterList params;
  Conv1d conv(3, 4, 3, params, rng);
  LstmLayer lstm(3, 2, params, rng);
  Mlp mlp(3, {5, 4}, 1, 0.0, params, rng);
  const Var x = constant(random_matrix(rng, 6, 3));
  const auto loss = [&] {
    Var last;
    const Var h = lstm(x, false, &last);
    const Var hb = lstm(x, true);
    return add(add(sum_all(conv(x)), sum_all(mul(h, hb))), add(sum_all(last), sum_all(mlp(x, false, rng))));
  };
  Rng pick(6);
  const auto r = check_gradients(params.vars(), loss, 40, pick);
  CHECK(r.max_rel_error <= 1e-5);
  CHECK(params.count() == Conv1d::count(3, 4, 3) + LstmLayer::count(3, 2) + Mlp::count(3, {5, 4}, 1));
}

TEST_CASE("no-grad guard skips the tape") {
  Var a = parameter(Matrix::Ones(2, 2));
  {
    NoGradGuard g;
    CHECK_FALSE(grad_enabled());
    CHECK_FALSE(add(a, a).requires_grad());
  }
  CHECK(grad_enabled());
  CHECK(add(a, a).requires_grad());
}

TEST_CASE("adam decreases a quadratic") {
  Rng rng(7);
  ParameterList params;
  Var w = params.add_uniform(3, 1, 1.0, rng);
  Adam opt(params, 0.05);
  const Var target = constant(Matrix::Constant(3, 1, 0.7));
  double first = 0, last = 0;
  for (int i = 0; i < 300; ++i) {
    opt.zero_grad();
    Var d = sub(w, target);
    Var l = sum_all(mul(d, d));
    if (i == 0) first = l.item();
    last = l.item();
    backward(l);
    opt.step();
  }
  CHECK(last < 1e-4 * first + 1e-6);
}

TEST_CASE("parameter snapshot, restore and checksum") {
  Rng rng(8);
  ParameterList params;
  params.add_uniform(2, 3, 0.5, rng);
  params.add_zeros(1, 3);
  CHECK(params.count() == 9);
  const auto snap = params.snapshot();
  const auto sum = params.checksum();
  params.vars()[0].node()->value.setConstant(3.0);
  CHECK(params.checksum() != sum);
  params.restore(snap);
  CHECK(params.checksum() == sum);
  CHECK(params.flatten().size() == 9);
}

TEST_CASE("dropout is identity in inference and rescales in training") {
  Rng rng(9);
  const Var x = constant(Matrix::Ones(200, 50));
  CHECK(dropout(x, 0.4, false, rng).value() == x.value());
  const auto y = dropout(x, 0.4, true, rng).value();
  int zeros = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y.data()[i] == 0.0) ++zeros;
    else CHECK(y.data()[i] == doctest::Approx(1.0 / 0.6));
  }
  CHECK(std::abs(zeros / 10000.0 - 0.4) < 0.03);
}
