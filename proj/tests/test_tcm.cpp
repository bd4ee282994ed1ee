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

#include <fstream>

#include "test_util.hpp"

namespace tcm {
namespace {

using testing::bit_equal;

TcmParams<double> random_params(const TcmConfig& cfg, std::uint64_t seed, double scale = 0.2) {
  Rng rng(seed);
  auto p = init_tcm<double>(cfg, rng);
  std::normal_distribution<double> n(0.0, scale);
  for_each_param(p, [&](const std::string&, Tensor<double>& t) {
    for (auto& v : t.values()) v += n(rng);
  });
  return p;
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

TEST(TcmForward, ZeroInitIsIdentity) {
  const TcmConfig cfg = TcmConfig::for_input(8, 4, 6, 8);
  Rng rng(1);
  const auto p = init_tcm<float>(cfg, rng);
  const auto x = random_normal<float>({8, 4, 6, 6}, rng);
  EXPECT_TRUE(bit_equal(tcm_forward(x, p, cfg), x));
}

TEST(TcmForward, ShapeIsPreserved) {
  for (const Shape& s : std::vector<Shape>{{4, 3, 5, 5}, {2, 2, 3, 7}, {9, 6, 4, 4}, {3, 5, 1, 1}}) {
    const TcmConfig cfg = TcmConfig::for_input(s[0], s[1], s[2], 4);
    const auto p = random_params(cfg, 2);
    Rng rng(3);
    EXPECT_EQ(tcm_forward(random_normal<double>(s, rng), p, cfg).shape(), s);
  }
}

TEST(TcmForward, InputMismatchAndShortClips) {
  const TcmConfig cfg = TcmConfig::for_input(4, 3, 5, 4);
  const auto p = random_params(cfg, 4);
  EXPECT_THROW(tcm_forward(Tensor<double>({5, 3, 5, 5}), p, cfg), DimensionError);
  try {
    TcmConfig::for_input(4, 1, 5, 4).validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_STREQ(e.what(), "need at least two frames to form pairs");
  }
}

TEST(TcmBackward, ZeroUpstreamGivesZeroGradients) {
  const TcmConfig cfg = TcmConfig::for_input(4, 3, 5, 4);
  TcmBlock<double> block(cfg, random_params(cfg, 5));
  Rng rng(6);
  const auto x = random_normal<double>({4, 3, 5, 5}, rng);
  block.forward(x);
  const auto g = block.backward(Tensor<double>(x.shape()));
  for (double v : g.input.values()) EXPECT_EQ(v, 0.0);
  for_each_param(g.params, [](const std::string& name, const Tensor<double>& t) {
    for (double v : t.values()) EXPECT_EQ(v, 0.0) << name;
  });
}

TEST(TcmBackward, ZeroInitPassesUpstreamThroughResidual) {
  const TcmConfig cfg = TcmConfig::for_input(4, 3, 5, 4);
  Rng rng(7);
  TcmBlock<double> block(cfg, init_tcm<double>(cfg, rng));
  const auto x = random_normal<double>({4, 3, 5, 5}, rng);
  const auto u = random_normal<double>(x.shape(), rng);
  block.forward(x);
  const auto g = block.backward(u);
  EXPECT_TRUE(bit_equal(g.input, u));
  double norm = 0;
  for (double v : g.params.out_weight.values()) norm += v * v;
  EXPECT_GT(norm, 0.0);
  for (double v : g.params.reduce_weight.values()) EXPECT_EQ(v, 0.0);
}

TEST(TcmBackward, MatchesFiniteDifferences) {
  const TcmConfig cfg = TcmConfig::for_input(3, 3, 4, 4);
  const auto p = random_params(cfg, 8);
  Rng rng(9);
  const auto x = random_normal<double>({3, 3, 4, 4}, rng);
  const auto u = random_normal<double>(x.shape(), rng);
  TcmBlock<double> block(cfg, p);
  block.forward(x);
  const auto g = block.backward(u);
  const auto gx = finite_diff_grad<double>(
      [&](const Tensor<double>& v) { return dot(u, tcm_forward(v, p, cfg)); }, x, 1e-6);
  EXPECT_LT(max_scaled_error(g.input, gx), 1e-4);
  auto q = p;
  const auto gw = finite_diff_grad<double>(
      [&](const Tensor<double>& w) {
        q.reduce_weight = w;
        return dot(u, tcm_forward(x, q, cfg));
      },
      p.reduce_weight, 1e-6);
  EXPECT_LT(max_scaled_error(g.params.reduce_weight, gw), 1e-4);
}

TEST(TcmBackward, RequiresRecordedForward) {
  const TcmConfig cfg = TcmConfig::for_input(4, 3, 5, 4);
  TcmBlock<double> block(cfg, random_params(cfg, 10));
  EXPECT_THROW(block.backward(Tensor<double>({4, 3, 5, 5})), StateError);
  block.forward(Tensor<double>({4, 3, 5, 5}, 0.5));
  block.backward(Tensor<double>({4, 3, 5, 5}));
  EXPECT_THROW(block.backward(Tensor<double>({4, 3, 5, 5})), StateError);
}

TEST(TcmBackward, Deterministic) {
  const TcmConfig cfg = TcmConfig::for_input(4, 3, 5, 4);
  Rng rng(11);
  const auto x = random_normal<double>({4, 3, 5, 5}, rng);
  const auto u = random_normal<double>(x.shape(), rng);
  TcmBlock<double> a(cfg, random_params(cfg, 12)), b(cfg, random_params(cfg, 12));
  a.forward(x);
  b.forward(x);
  EXPECT_TRUE(bit_equal(a.backward(u).input, b.backward(u).input));
}

TEST(ParamCensus, Examples) {
  const std::size_t C = 16, T = 8, mid = 12;
  const TcmConfig cfg = TcmConfig::for_input(C, T, 8, mid);
  Rng rng(13);
  const auto table = param_census(init_tcm<float>(cfg, rng));
  auto count = [&](const std::string& name) {
    for (const auto& [n, c] : table)
      if (n == name) return c;
    ADD_FAILURE() << "missing " << name;
    return std::size_t{0};
  };
  EXPECT_EQ(count("tam.attention.weight"), kernel_size_for(T));
  EXPECT_EQ(count("out.weight") + count("out.bias"), mid * C + C);
  std::size_t sum = 0;
  for (const auto& [n, c] : table) sum += c;
  EXPECT_EQ(census_total(table), sum);
  EXPECT_EQ(count("reduce.weight"), 8 * C);
  EXPECT_EQ(count("tam.stem.weight"), mid * 6);
  EXPECT_EQ(table.size(), 2u + 2u + 6u + 8u + 1u + 2u);
}

TEST(TcmProperty, IdentityOnManyInputs) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const std::size_t C = 2 + seed % 7, T = 2 + seed % 5, H = 3 + seed % 4;
    const TcmConfig cfg = TcmConfig::for_input(C, T, H, 6);
    const auto p = init_tcm<float>(cfg, rng);
    const auto x = random_normal<float>({C, T, H, H + 1}, rng, 2.0f);
    EXPECT_TRUE(bit_equal(tcm_forward(x, p, cfg), x)) << seed;
  }
}

TEST(TcmProperty, IdenticalFramesGiveConstantTempo) {
  const std::size_t C = 4, T = 5, H = 5;
  const TcmConfig cfg = TcmConfig::for_input(C, T, H, 4);
  Rng rng(14);
  const auto frame = random_normal<double>({C, 1, H, H}, rng);
  Tensor<double> x({C, T, H, H});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t t = 0; t < T; ++t)
      std::copy_n(frame.data() + c * H * H, H * H, x.data() + (c * T + t) * H * H);
  auto constant_in_time = [&](const Tensor<double>& y) {
    const std::size_t ch = y.dim(0), plane = y.dim(2) * y.dim(3);
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t t = 1; t < T; ++t)
        for (std::size_t i = 0; i < plane; ++i)
          if (y[(c * T + t) * plane + i] != y[(c * T) * plane + i]) return false;
    return true;
  };
  // Any parameters: the displacement and tempo features are frame-constant.
  const auto p = random_params(cfg, 15);
  Tape<double> tape;
  const auto tr = tcm_trace(tape.constant(x), bind<TcmSlots>(tape, p, false), cfg);
  EXPECT_TRUE(constant_in_time(tr.displacements.value()));
  EXPECT_TRUE(constant_in_time(tr.tempo.value()));
  // With the default (zero) attention weights the output is constant too.
  auto q = p;
  q.tam.attention.fill(0);
  EXPECT_TRUE(constant_in_time(tcm_forward(x, q, cfg)));
}

TEST(TcmProperty, ForwardIndependentOfThreadCount) {
  const TcmConfig cfg = TcmConfig::for_input(6, 4, 6, 8);
  const auto p = random_params(cfg, 16);
  Rng rng(17);
  const auto x = random_normal<double>({6, 4, 6, 6}, rng);
  const std::size_t before = thread_count();
  set_thread_count(1);
  const auto one = tcm_forward(x, p, cfg);
  set_thread_count(3);
  const auto three = tcm_forward(x, p, cfg);
  set_thread_count(before);
  EXPECT_TRUE(bit_equal(one, three));
  EXPECT_TRUE(bit_equal(one, tcm_forward(x, p, cfg)));
}

TEST(Bundle, RoundTripIsBitExact) {
  const auto dir = testing::scratch_dir("bundle");
  const TcmConfig cfg = TcmConfig::for_input(8, 4, 6, 8);
  const auto p = random_params(cfg, 18);
  save_bundle(dir, p);
  Rng rng(0);
  auto q = init_tcm<double>(cfg, rng);
  load_bundle(dir, q);
  std::vector<Tensor<double>> a, b;
  for_each_param(p, [&](const std::string&, const Tensor<double>& t) { a.push_back(t); });
  for_each_param(q, [&](const std::string&, const Tensor<double>& t) { b.push_back(t); });
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(bit_equal(a[i], b[i]));
}

TEST(Bundle, ManifestLines) {
  const auto dir = testing::scratch_dir("bundle");
  const TcmConfig cfg = TcmConfig::for_input(8, 4, 6, 8);
  Rng rng(19);
  save_bundle(dir, init_tcm<float>(cfg, rng));
  const auto entries = read_manifest(dir);
  ASSERT_FALSE(entries.empty());
  EXPECT_EQ(entries[0].name, "reduce.weight");
  EXPECT_EQ(entries[0].filename, "reduce.weight.tsr");
  EXPECT_EQ(entries[0].shape, "8x8");
  std::ifstream in(dir / "manifest.tsv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "reduce.weight\treduce.weight.tsr\t8x8");
}

TEST(Bundle, ShapeMismatchAndMissingEntries) {
  const auto dir = testing::scratch_dir("bundle");
  Rng rng(20);
  save_bundle(dir, init_tcm<float>(TcmConfig::for_input(8, 4, 6, 8), rng));
  auto other = init_tcm<float>(TcmConfig::for_input(8, 4, 6, 4), rng);
  EXPECT_THROW(load_bundle(dir, other), FormatError);
  EXPECT_THROW(load_bundle(dir / "nope", other), FormatError);
}

}  // namespace
}  // namespace tcm
