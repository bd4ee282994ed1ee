// Copyright 2026 The TCM Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <sstream>

#include "test_util.hpp"

namespace tcm {
namespace {

using testing::bit_equal;

TEST(Tensor, ShapeAndStorageAgree) {
  Tensor<float> t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_THROW(Tensor<float>({2, 0}), DimensionError);
  EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>(3)), DimensionError);
  EXPECT_THROW(t.reshaped({5, 5}), DimensionError);
  EXPECT_EQ(t.reshaped({24}).size(), 24u);
}

TEST(Tensor, RowMajorIndexing) {
  Tensor<double> t({2, 3, 4, 5});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = double(i);
  EXPECT_EQ(t.at(1, 2, 3, 4), double(((1 * 3 + 2) * 4 + 3) * 5 + 4));
  EXPECT_EQ(t.at(0, 0, 0, 1), 1.0);
}

TEST(Tensor, DerivedSeedsAreDistinctAndStable) {
  static_assert(derive_seed(42, 0) == derive_seed(42, 0));
  EXPECT_NE(derive_seed(42, 0), derive_seed(42, 1));
  EXPECT_NE(derive_seed(42, 0), derive_seed(43, 0));
}

TEST(TsrIo, RoundTripIsBitExact) {
  Rng rng(5);
  const auto f = random_normal<float>({3, 2, 4, 5}, rng);
  const auto d = random_normal<double>({7}, rng);
  std::stringstream sf, sd;
  write_tsr(sf, f);
  write_tsr(sd, d);
  EXPECT_TRUE(bit_equal(std::get<Tensor<float>>(read_tsr(sf)), f));
  EXPECT_TRUE(bit_equal(std::get<Tensor<double>>(read_tsr(sd)), d));
}

TEST(TsrIo, HeaderLayout) {
  std::stringstream s;
  write_tsr(s, Tensor<float>({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6}));
  const std::string bytes = s.str();
  ASSERT_EQ(bytes.size(), 8u + 2 * 4 + 6 * 4);
  EXPECT_EQ(bytes.substr(0, 4), "TSR1");
  EXPECT_EQ(bytes[4], 0);  // f32
  EXPECT_EQ(bytes[5], 2);  // ndim
  EXPECT_EQ(bytes[6], 0);
  EXPECT_EQ(bytes[7], 0);
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 2);
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 3);
  float first;
  std::memcpy(&first, bytes.data() + 16, 4);
  EXPECT_EQ(first, 1.0f);
}

TEST(TsrIo, RejectsBadMagicAndTruncation) {
  std::stringstream bad("TSR2\0\1\0\0", std::ios::in | std::ios::binary);
  EXPECT_THROW(read_tsr(bad), FormatError);
  std::stringstream s;
  write_tsr(s, Tensor<double>({4}, 1.0));
  std::string cut = s.str().substr(0, s.str().size() - 3);
  std::stringstream t(cut);
  EXPECT_THROW(read_tsr(t), FormatError);
}

TEST(TsrIo, LoadAsConvertsDtype) {
  const auto dir = testing::scratch_dir("tsr");
  save_tsr(dir / "x.tsr", Tensor<double>({2}, std::vector<double>{0.5, -2.0}));
  const auto f = load_tsr_as<float>(dir / "x.tsr");
  EXPECT_EQ(f[0], 0.5f);
  EXPECT_EQ(f[1], -2.0f);
  EXPECT_THROW(load_tsr(dir / "missing.tsr"), FormatError);
}

TEST(Tape, BackwardRunsInReverseOrder) {
  Tape<double> tape;
  std::vector<int> order;
  Var<double> x = tape.parameter(Tensor<double>({1}, 1.0));
  Var<double> a = tape.record(Tensor<double>({1}, 1.0), {x}, [&](auto& tp, const auto& g) {
    order.push_back(1);
    (*tp.grad_sink(x))[0] += g[0];
  });
  Var<double> b = tape.record(Tensor<double>({1}, 1.0), {a}, [&](auto& tp, const auto& g) {
    order.push_back(2);
    (*tp.grad_sink(a))[0] += g[0];
  });
  Var<double> c = tape.record(Tensor<double>({1}, 1.0), {b}, [&](auto& tp, const auto& g) {
    order.push_back(3);
    (*tp.grad_sink(b))[0] += g[0];
  });
  tape.backward(c);
  EXPECT_EQ(order, (std::vector<int>{3, 2, 1}));
}

TEST(Tape, MultipleConsumersAccumulate) {
  Tape<double> tape;
  Var<double> x = tape.parameter(Tensor<double>({3}, 2.0));
  Var<double> y = add(add(x, x), x);
  tape.backward(y);
  const auto g = tape.grad(x);
  for (double v : g.values()) EXPECT_EQ(v, 3.0);
}

TEST(Tape, GradBeforeBackwardIsStateError) {
  Tape<double> tape;
  Var<double> x = tape.parameter(Tensor<double>({1}));
  EXPECT_THROW(tape.grad(x), StateError);
  Tape<double> other;
  EXPECT_THROW(other.value(x), StateError);
}

TEST(Tape, ConstantsReceiveNoGradient) {
  Tape<double> tape;
  Var<double> c = tape.constant(Tensor<double>({2}, 1.0));
  Var<double> y = sigmoid(c);
  EXPECT_FALSE(tape.requires_grad(y));
  tape.backward(y);
  EXPECT_EQ(tape.grad(c), Tensor<double>({2}));
}

TEST(ConvPointwise, SumsChannels) {
  const Tensor<float> x({2, 1, 1, 1}, 1.0f);
  const Tensor<float> w({1, 2}, std::vector<float>{1, 1});
  const Tensor<float> b({1}, 0.0f);
  const auto y = conv_pointwise(x, w, &b);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y[0], 2.0f);
}

TEST(ConvPointwise, IdentityWeightsAreBitExact) {
  Rng rng(1);
  const auto x = random_normal<float>({3, 2, 4, 4}, rng);
  Tensor<float> w({3, 3});
  for (std::size_t i = 0; i < 3; ++i) w.at(i, i) = 1.0f;
  const Tensor<float> b({3});
  EXPECT_TRUE(bit_equal(conv_pointwise(x, w, &b), x));
}

TEST(ConvPointwise, MatchesLoops) {
  Rng rng(2);
  const auto x = random_normal<double>({4, 2, 3, 3}, rng);
  const auto w = random_normal<double>({5, 4}, rng);
  const auto b = random_normal<double>({5}, rng);
  EXPECT_LT(max_abs_diff(conv_pointwise(x, w, &b), testing::pointwise_loops(x, w, b)), 1e-6);
}

TEST(ConvPointwise, ShapeMismatchNamesBothShapes) {
  const Tensor<float> x({3, 1, 2, 2});
  const Tensor<float> w({2, 4});
  try {
    conv_pointwise(x, w, static_cast<const Tensor<float>*>(nullptr));
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2,4]"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("[3,1,2,2]"), std::string::npos) << e.what();
  }
}

TEST(ConvDepthwise, DeltaKernelIsIdentity) {
  Rng rng(3);
  const auto x = random_normal<float>({2, 3, 5, 4}, rng);
  Tensor<float> k({2, 3, 3});
  k.at(0, 1, 1) = k.at(1, 1, 1) = 1.0f;
  EXPECT_TRUE(bit_equal(conv_depthwise_2d(x, k), x));
}

TEST(ConvDepthwise, BoxSumOnInteriorPixel) {
  const Tensor<float> x({1, 1, 5, 5}, 1.0f);
  const Tensor<float> k({1, 3, 3}, 1.0f);
  const auto y = conv_depthwise_2d(x, k);
  EXPECT_EQ(y.at(0, 0, 2, 2), 9.0f);
  EXPECT_EQ(y.at(0, 0, 0, 0), 4.0f);  // zero padding
}

TEST(ConvDepthwise, MatchesLoops) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const auto x = random_normal<double>({3, 2, 6, 5}, rng);
    const auto k = random_normal<double>({3, seed % 2 ? 5u : 3u, 3}, rng);
    EXPECT_LT(max_abs_diff(conv_depthwise_2d(x, k), testing::depthwise_loops(x, k)), 1e-6);
  }
}

TEST(ConvDepthwise, EvenKernelIsConfigError) {
  EXPECT_THROW(conv_depthwise_2d(Tensor<float>({1, 1, 4, 4}), Tensor<float>({1, 2, 3})),
               ConfigError);
}

TEST(Elementwise, Examples) {
  EXPECT_EQ(sigmoid(Tensor<float>({1}))[0], 0.5f);
  EXPECT_EQ(sigmoid(Tensor<double>({1}))[0], 0.5);
  const auto s = softmax_last(Tensor<double>({3}));
  for (double v : s.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  const auto g = gap_spatial(Tensor<float>({2, 3, 4, 5}, 1.75f));
  ASSERT_EQ(g.shape(), (Shape{2, 3}));
  for (float v : g.values()) EXPECT_EQ(v, 1.75f);
  EXPECT_THROW(mul_broadcast_time(Tensor<float>({1, 3, 1, 1}), Tensor<float>({4})), DimensionError);
  EXPECT_THROW(add(Tensor<float>({2}), Tensor<float>({3})), DimensionError);
}

TEST(Elementwise, SoftmaxRowsSumToOne) {
  Rng rng(4);
  const auto s = softmax_last(random_normal<double>({6, 9}, rng, 10.0));
  for (std::size_t r = 0; r < 6; ++r) {
    double sum = 0;
    for (std::size_t c = 0; c < 9; ++c) sum += s.at(r, c);
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(Elementwise, SoftmaxIsStableForLargeInputs) {
  const auto s = softmax_last(Tensor<float>({2}, std::vector<float>{1000.0f, 999.0f}));
  EXPECT_TRUE(s.all_finite());
  EXPECT_NEAR(s[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-6);
}

TEST(Elementwise, MeanTimeIgnoresFrameOrder) {
  Rng rng(8);
  const auto x = random_normal<float>({4, 7}, rng);
  Tensor<float> rev(x.shape());
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t t = 0; t < 7; ++t) rev.at(c, t) = x.at(c, 6 - t);
  EXPECT_TRUE(bit_equal(mean_time_unordered(x), mean_time_unordered(rev)));
}

TEST(Ops, ShapePreservingOpsKeepArbitraryShapes) {
  Rng rng(11);
  std::uniform_int_distribution<std::size_t> ext(1, 5);
  for (int trial = 0; trial < 30; ++trial) {
    const Shape s{ext(rng), ext(rng), ext(rng), ext(rng)};
    const auto x = random_normal<double>(s, rng);
    EXPECT_EQ(sigmoid(x).shape(), s);
    EXPECT_EQ(relu(x).shape(), s);
    EXPECT_EQ(add(x, x).shape(), s);
    EXPECT_EQ(softmax_last(x).shape(), s);
    EXPECT_EQ(mul_broadcast_time(x, random_normal<double>({s[1]}, rng)).shape(), s);
    EXPECT_EQ(conv_depthwise_2d(x, random_normal<double>({s[0], 3, 3}, rng)).shape(), s);
    EXPECT_EQ(conv_temporal_depthwise(x, random_normal<double>({s[0], 3}, rng)).shape(), s);
    const Tensor<double> eye = [&] {
      Tensor<double> e({s[0], s[0]});
      for (std::size_t i = 0; i < s[0]; ++i) e.at(i, i) = 1;
      return e;
    }();
    EXPECT_EQ(conv_pointwise(x, eye, static_cast<const Tensor<double>*>(nullptr)).shape(), s);
  }
}

TEST(Ops, ForwardIsDeterministic) {
  for (int run = 0; run < 2; ++run) {
    Rng a(99), b(99);
    const auto xa = random_normal<float>({3, 4, 6, 6}, a);
    const auto xb = random_normal<float>({3, 4, 6, 6}, b);
    const auto ka = random_normal<float>({3, 3, 3}, a);
    const auto kb = random_normal<float>({3, 3, 3}, b);
    EXPECT_TRUE(bit_equal(conv_depthwise_2d(xa, ka), conv_depthwise_2d(xb, kb)));
  }
}

TEST(FiniteDiff, SquareAndSigmoidExamples) {
  const auto sq = finite_diff_grad<double>(
      [](const Tensor<double>& x) { return x[0] * x[0]; }, Tensor<double>({1}, 3.0), 1e-3);
  EXPECT_NEAR(sq[0], 6.0, 1e-6);
  const auto sg = finite_diff_grad<double>(
      [](const Tensor<double>& x) {
        const auto y = sigmoid(x);
        return std::accumulate(y.values().begin(), y.values().end(), 0.0);
      },
      Tensor<double>({4}), 1e-4);
  for (double v : sg.values()) EXPECT_NEAR(v, 0.25, 1e-6);
}

TEST(FiniteDiff, DepthwiseAgreesWithTape) {
  Rng rng(6);
  const auto x = random_normal<double>({2, 2, 5, 5}, rng);
  const auto k = random_normal<double>({2, 3, 3}, rng);
  auto f = [&](const Tensor<double>& v) {
    const auto y = conv_depthwise_2d(v, k);
    return std::accumulate(y.values().begin(), y.values().end(), 0.0);
  };
  Tape<double> tape;
  Var<double> xv = tape.parameter(x);
  tape.backward(conv_depthwise_2d(xv, tape.constant(k)));
  const auto analytic = tape.grad(xv);
  const auto numeric = finite_diff_grad<double>(f, x, 1e-6);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_NEAR(analytic[i], numeric[i], 1e-6 * std::max(1.0, std::abs(analytic[i])));
  }
}

TEST(FiniteDiff, NonFiniteValueReportsIndex) {
  Tensor<double> x({3}, 1.0);
  x[2] = 0.0;
  try {
    finite_diff_grad<double>([](const Tensor<double>& v) { return 1.0 / (v[2] * 0.0); }, x, 1e-3);
    FAIL();
  } catch (const EvaluationError& e) {
    EXPECT_NE(std::string(e.what()).find("element 0"), std::string::npos) << e.what();
  }
  EXPECT_THROW(finite_diff_grad<double>([](const Tensor<double>&) { return 0.0; }, x, 0.0),
               ConfigError);
}

}  // namespace
}  // namespace tcm
