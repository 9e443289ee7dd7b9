#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "jointdiff/autodiff.hpp"
#include "jointdiff/gradcheck.hpp"
#include "jointdiff/ops.hpp"
#include "jointdiff/optim.hpp"
#include "test_util.hpp"

using namespace jointdiff;
using jointdiff::testing::random_tensor;

namespace {

// Weighted sum with fixed random weights so every output coordinate matters.
Tensor probe_sum(const Tensor& y, std::uint64_t seed) {
  const Tensor w = random_tensor(y.shape(), seed, -1.0f, 1.0f);
  return ops::sum(ops::mul(y, w));
}

void expect_gradients_match(const std::function<Tensor()>& f, std::vector<Tensor> params) {
  GradCheckOptions o;
  o.max_coords = 64;
  const auto r = finite_difference_check(f, params, o);
  EXPECT_GE(r.coords_checked, 64);
  EXPECT_LT(r.max_relative_error, 1e-3);
}

}  // namespace

TEST(Tensor, HandleSharesStorageAndDetachCopies) {
  Tensor a(Shape{2, 2}, 1.0f);
  Tensor b = a;
  b.data()[0] = 5.0f;
  EXPECT_EQ(a[0], 5.0f);
  Tensor c = a.detach();
  c.data()[0] = 7.0f;
  EXPECT_EQ(a[0], 5.0f);
  EXPECT_FALSE(c.requires_grad());
}

TEST(Tensor, RejectsValueCountMismatch) {
  EXPECT_THROW(Tensor(Shape{2, 3}, std::vector<float>(5)), ContractViolation);
}

TEST(Tape, NothingRecordedWithoutScopeOrGradInputs) {
  Tensor a(Shape{3}, 1.0f, true);
  Tensor b(Shape{3}, 2.0f);
  Tape tape;
  { ops::add(a, b); }
  EXPECT_TRUE(tape.empty());
  {
    TapeScope s(tape);
    ops::add(b, b);
  }
  EXPECT_TRUE(tape.empty());
  {
    TapeScope s(tape);
    NoGradScope ng;
    ops::add(a, b);
  }
  EXPECT_TRUE(tape.empty());
}

TEST(Tape, ReplaysInReverseOrder) {
  Tensor a(Shape{4}, 0.5f, true);
  Tape tape;
  Tensor loss;
  {
    TapeScope s(tape);
    loss = ops::sum(ops::silu(ops::scale(a, 2.0f)));
  }
  const auto rec = tape.recorded_ops();
  tape.backward(loss);
  std::vector<std::string> reversed(rec.rbegin(), rec.rend());
  EXPECT_EQ(tape.replay_log(), reversed);
}

TEST(Tape, SecondBackwardIsStale) {
  Tensor a(Shape{2}, 1.0f, true);
  Tape tape;
  Tensor loss;
  {
    TapeScope s(tape);
    loss = ops::sum(ops::mul(a, a));
  }
  tape.backward(loss);
  EXPECT_THROW(tape.backward(loss), StaleTapeError);
}

TEST(Tape, NonScalarLossRejected) {
  Tensor a(Shape{2}, 1.0f, true);
  Tape tape;
  Tensor y;
  {
    TapeScope s(tape);
    y = ops::scale(a, 3.0f);
  }
  EXPECT_THROW(tape.backward(y), ContractViolation);
}

TEST(Tape, GradientsAccumulateAcrossPasses) {
  Tensor a(Shape{3}, std::vector<float>{1, 2, 3}, true);
  for (int pass = 0; pass < 2; ++pass) {
    Tape tape;
    Tensor loss;
    {
      TapeScope s(tape);
      loss = ops::sum(ops::mul(a, a));
    }
    tape.backward(loss);
  }
  EXPECT_FLOAT_EQ(a.grad()[0], 4.0f);
  EXPECT_FLOAT_EQ(a.grad()[2], 12.0f);
}

TEST(Tape, SharedInputReceivesBothContributions) {
  Tensor a(Shape{1}, 3.0f, true);
  Tape tape;
  Tensor loss;
  {
    TapeScope s(tape);
    loss = ops::sum(ops::add(ops::mul(a, a), ops::scale(a, 5.0f)));
  }
  tape.backward(loss);
  EXPECT_FLOAT_EQ(a.grad()[0], 11.0f);
}

TEST(Ops, ShapeErrorsNameBothShapes) {
  Tensor a(Shape{2, 3}), b(Shape{3, 2});
  try {
    ops::add(a, b);
    FAIL();
  } catch (const ContractViolation& e) {
    const std::string m = e.what();
    EXPECT_NE(m.find("[2, 3]"), std::string::npos) << m;
    EXPECT_NE(m.find("[3, 2]"), std::string::npos) << m;
  }
}

TEST(Ops, NonFiniteOutputNamesOp) {
  Tensor a(Shape{2}, std::vector<float>{3e38f, 3e38f});
  try {
    ops::add(a, a);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("add"), std::string::npos);
  }
}

TEST(Ops, ConvMatchesDirectLoopOracle) {
  const Tensor x = random_tensor({2, 3, 5, 5}, 1);
  const Tensor w = random_tensor({4, 3, 3, 3}, 2);
  const Tensor b = random_tensor({4}, 3);
  for (int stride : {1, 2}) {
    const Tensor y = ops::conv2d(x, w, b, stride);
    const int ho = y.dim(2), wo = y.dim(3);
    for (int n = 0; n < 2; ++n)
      for (int o = 0; o < 4; ++o)
        for (int i = 0; i < ho; ++i)
          for (int j = 0; j < wo; ++j) {
            double acc = b[o];
            for (int c = 0; c < 3; ++c)
              for (int ki = 0; ki < 3; ++ki)
                for (int kj = 0; kj < 3; ++kj) {
                  const int ih = i * stride - 1 + ki, iw = j * stride - 1 + kj;
                  if (ih < 0 || ih >= 5 || iw < 0 || iw >= 5) continue;
                  acc += static_cast<double>(w[((o * 3 + c) * 3 + ki) * 3 + kj]) *
                         x[((n * 3 + c) * 5 + ih) * 5 + iw];
                }
            EXPECT_NEAR(y[((n * 4 + o) * ho + i) * wo + j], acc, 1e-5);
          }
  }
}

TEST(Ops, ConvPerImageResultIndependentOfBatch) {
  const Tensor x = random_tensor({3, 2, 6, 6}, 4);
  const Tensor w = random_tensor({5, 2, 3, 3}, 5);
  const Tensor y = ops::conv2d(x, w, Tensor{});
  const Tensor x1(Shape{1, 2, 6, 6}, std::vector<float>(x.data().begin() + 72, x.data().begin() + 144));
  const Tensor y1 = ops::conv2d(x1, w, Tensor{});
  for (std::size_t i = 0; i < y1.size(); ++i) EXPECT_EQ(y1[i], y[y1.size() + i]);
}

TEST(Ops, LogSoftmaxRowsNormalize) {
  const Tensor x = random_tensor({4, 5}, 7, -20.0f, 20.0f);
  const Tensor lp = ops::log_softmax(x);
  for (int r = 0; r < 4; ++r) {
    double s = 0;
    for (int c = 0; c < 5; ++c) s += std::exp(static_cast<double>(lp[r * 5 + c]));
    EXPECT_NEAR(s, 1.0, 1e-5);
  }
}

TEST(Ops, GroupNormNormalizesEachGroup) {
  const Tensor x = random_tensor({2, 4, 3, 3}, 8, -3.0f, 5.0f);
  const Tensor y = ops::group_norm(x, Tensor(Shape{4}, 1.0f), Tensor(Shape{4}, 0.0f), 2);
  for (int n = 0; n < 2; ++n)
    for (int g = 0; g < 2; ++g) {
      double m = 0, v = 0;
      for (int i = 0; i < 18; ++i) m += y[(n * 4 + g * 2) * 9 + i];
      m /= 18;
      for (int i = 0; i < 18; ++i) v += std::pow(y[(n * 4 + g * 2) * 9 + i] - m, 2);
      EXPECT_NEAR(m, 0.0, 1e-5);
      EXPECT_NEAR(v / 18, 1.0, 1e-3);
    }
}

// One finite-difference check per primitive, 64 probed coordinates each.

TEST(GradCheck, Conv2dStride1) {
  Tensor x = random_tensor({2, 3, 5, 5}, 11), w = random_tensor({4, 3, 3, 3}, 12), b = random_tensor({4}, 13);
  expect_gradients_match([&] { return probe_sum(ops::conv2d(x, w, b), 99); }, {x, w, b});
}

TEST(GradCheck, Conv2dStride2AndPointwise) {
  Tensor x = random_tensor({2, 3, 6, 6}, 14), w = random_tensor({4, 3, 3, 3}, 15), b = random_tensor({4}, 16);
  expect_gradients_match([&] { return probe_sum(ops::conv2d(x, w, b, 2), 98); }, {x, w, b});
  Tensor w1 = random_tensor({5, 3, 1, 1}, 17);
  expect_gradients_match([&] { return probe_sum(ops::conv2d(x, w1, b.defined() ? Tensor{} : b), 97); }, {x, w1});
}

TEST(GradCheck, Upsample) {
  Tensor x = random_tensor({2, 3, 4, 4}, 18);
  expect_gradients_match([&] { return probe_sum(ops::upsample_nearest2x(x), 96); }, {x});
}

TEST(GradCheck, Dense) {
  Tensor x = random_tensor({4, 8}, 19), w = random_tensor({5, 8}, 20), b = random_tensor({5}, 21);
  expect_gradients_match([&] { return probe_sum(ops::dense(x, w, b), 95); }, {x, w, b});
}

TEST(GradCheck, AddBroadcastSubMulScale) {
  Tensor a = random_tensor({2, 3, 4, 4}, 22), c = random_tensor({2, 3}, 23), d = random_tensor({2, 3, 4, 4}, 24);
  expect_gradients_match(
      [&] { return probe_sum(ops::scale(ops::mul(ops::sub(ops::add(a, c), d), a), 1.5f), 94); }, {a, c, d});
}

TEST(GradCheck, ConcatChannels) {
  Tensor a = random_tensor({2, 2, 3, 3}, 25), b = random_tensor({2, 3, 3, 3}, 26);
  expect_gradients_match([&] { return probe_sum(ops::concat_channels(a, b), 93); }, {a, b});
  Tensor p = random_tensor({4, 5}, 27), q = random_tensor({4, 11}, 28);
  expect_gradients_match([&] { return probe_sum(ops::concat_channels(p, q), 92); }, {p, q});
}

TEST(GradCheck, LeakyReluAwayFromKink) {
  // Keep inputs at least 0.05 from zero so the step of 1e-3 never crosses the kink.
  Tensor x = random_tensor({8, 10}, 29, 0.05f, 1.0f);
  auto v = x.data();
  for (std::size_t i = 0; i < v.size(); i += 2) v[i] = -v[i];
  expect_gradients_match([&] { return probe_sum(ops::leaky_relu(x, 0.01f), 91); }, {x});
}

TEST(GradCheck, Silu) {
  Tensor x = random_tensor({8, 10}, 30, -3.0f, 3.0f);
  expect_gradients_match([&] { return probe_sum(ops::silu(x), 90); }, {x});
}

TEST(GradCheck, GroupNorm) {
  Tensor x = random_tensor({2, 4, 3, 3}, 31), g = random_tensor({4}, 32, 0.5f, 1.5f), b = random_tensor({4}, 33);
  expect_gradients_match([&] { return probe_sum(ops::group_norm(x, g, b, 2), 89); }, {x, g, b});
}

TEST(GradCheck, GlobalAvgPool) {
  Tensor x = random_tensor({2, 4, 3, 3}, 34);
  expect_gradients_match([&] { return probe_sum(ops::global_avg_pool(x), 88); }, {x});
}

TEST(GradCheck, LogSoftmaxAndNll) {
  Tensor x = random_tensor({16, 5}, 35, -2.0f, 2.0f);
  const std::vector<int> y = {0, 1, 2, 3, 4, 0, 1, 2, 3, 4, 0, 1, 2, 3, 4, 0};
  expect_gradients_match([&] { return probe_sum(ops::log_softmax(x), 87); }, {x});
  expect_gradients_match([&] { return ops::nll(ops::log_softmax(x), y); }, {x});
}

TEST(GradCheck, SumAndMean) {
  Tensor x = random_tensor({8, 9}, 36);
  expect_gradients_match([&] { return ops::mean(ops::mul(x, x)); }, {x});
  expect_gradients_match([&] { return ops::sum(ops::mul(x, x)); }, {x});
}

TEST(GradCheck, ForwardOpDispatcherCoversPrimitives) {
  Tensor x = random_tensor({2, 4, 4, 4}, 37);
  const Tensor parts[] = {x, x};
  EXPECT_EQ(ops::forward_op(ops::OpKind::concat_channels, parts).dim(1), 8);
  EXPECT_EQ(ops::op_name(ops::OpKind::conv2d), "conv2d");
  const Tensor one[] = {x};
  EXPECT_EQ(ops::forward_op(ops::OpKind::global_avg_pool, one).shape(), (Shape{2, 4}));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor p(Shape{3}, std::vector<float>{1, -2, 3}, true);
  Adam opt({p}, AdamConfig{0.1f});
  p.ensure_grad();
  p.grad()[0] = 5.0f;
  p.grad()[1] = -0.01f;
  p.grad()[2] = 0.0f;
  opt.step();
  // Bias-corrected first step is lr * g / (|g| + eps') = lr * sign(g).
  EXPECT_NEAR(p[0], 0.9f, 1e-5);
  EXPECT_NEAR(p[1], -1.9f, 1e-4);
  EXPECT_FLOAT_EQ(p[2], 3.0f);
  EXPECT_EQ(p.grad()[0], 0.0f);
}

TEST(Adam, MissingGradientNamesParameter) {
  Tensor p(Shape{2}, 1.0f, true);
  p.set_name("encoder.w");
  Adam opt({p});
  try {
    opt.step();
    FAIL();
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("encoder.w"), std::string::npos);
  }
}
