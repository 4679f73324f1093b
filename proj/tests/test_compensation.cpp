#include <cmath>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "driftcomp/compensation.hpp"
#include "driftcomp/errors.hpp"
#include "driftcomp/random.hpp"

using namespace driftcomp;

namespace {

LayerSpec conv(int cin, int cout, int k, int stride, int pad) {
  LayerSpec l;
  l.kind = LayerKind::kConv2d;
  l.name = "conv";
  l.c_in = cin;
  l.c_out = cout;
  l.kernel = k;
  l.stride = stride;
  l.padding = pad;
  l.compensated = true;
  return l;
}

std::vector<double> random_vec(Rng& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

}  // namespace

TEST(SharedProjections, DeterministicAndShaped) {
  const auto a = init_shared_projections(1, 4, 6, 9);
  const auto b = init_shared_projections(1, 4, 6, 9);
  EXPECT_EQ(a.a_max, b.a_max);
  EXPECT_EQ(a.b_max, b.b_max);
  EXPECT_EQ(a.a_max.size(), 4u);
  EXPECT_EQ(a.b_max.size(), 6u);
  EXPECT_EQ(a.a_view().rows, 1);
  EXPECT_EQ(a.a_view().cols, 4);
  EXPECT_NE(init_shared_projections(1, 4, 6, 10).a_max, a.a_max);
}

TEST(SharedProjections, ZeroMeanWithUnitProjectionNorm) {
  // Each length-d_max_in projection direction (a row of A_max) has squared
  // norm d * (1/d) = 1 in expectation.
  const int d = 10000;
  const auto p = init_shared_projections(4, d, 8, 3);
  for (int i = 0; i < 4; ++i) {
    double sq = 0, sum = 0;
    for (int j = 0; j < d; ++j) {
      sq += p.a_max[i * d + j] * p.a_max[i * d + j];
      sum += p.a_max[i * d + j];
    }
    EXPECT_NEAR(std::sqrt(sq), 1.0, 0.02);
    EXPECT_NEAR(sum / d, 0.0, 4 * std::sqrt(1.0 / d / d));
  }
}

TEST(SliceProjections, PrefixRule) {
  const auto p = init_shared_projections(2, 5, 7, 1);
  const auto full = slice_projections(p, 5, 7);
  EXPECT_EQ(full.a.rows, 2);
  EXPECT_EQ(full.a.cols, 5);
  EXPECT_EQ(full.b.rows, 7);
  const auto one = slice_projections(p, 1, 3);
  EXPECT_EQ(one.a.cols, 1);
  EXPECT_EQ(one.a(0, 0), p.a_max[0]);
  EXPECT_EQ(one.a(1, 0), p.a_max[5]);
  EXPECT_EQ(one.b(2, 1), p.b_max[2 * 2 + 1]);
  const auto s1 = slice_projections(p, 3, 4), s2 = slice_projections(p, 3, 6);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_EQ(s1.a(i, j), s2.a(i, j));
  EXPECT_EQ(s1.a.data, s2.a.data);  // views, not copies
  EXPECT_THROW(slice_projections(p, 6, 7), ConfigError);
  EXPECT_THROW(slice_projections(p, 5, 8), ConfigError);
}

TEST(VeraPlusForward, HandInstance) {
  const std::vector<double> a{1, 2}, b{3, 4}, x{1, 1}, d{2}, bv{1, -1};
  const ProjectionSlice s{{a.data(), 1, 2, 2}, {b.data(), 2, 1, 1}};
  EXPECT_EQ(vera_plus_forward(x, s, d, bv), (std::vector<double>{18, -24}));
}

TEST(VeraPlusForward, ZeroBAnnihilates) {
  Rng rng(1);
  const auto p = init_shared_projections(3, 6, 5, 2);
  const auto s = slice_projections(p, 6, 5);
  const auto y = vera_plus_forward(random_vec(rng, 6), s, random_vec(rng, 3), std::vector<double>(5, 0.0));
  for (double v : y) EXPECT_EQ(v, 0.0);
}

TEST(VeraPlusForward, UnitVectorsGivePlainProduct) {
  Rng rng(2);
  const auto p = init_shared_projections(2, 4, 3, 5);
  const auto s = slice_projections(p, 4, 3);
  const auto x = random_vec(rng, 4);
  const auto y = vera_plus_forward(x, s, std::vector<double>(2, 1.0), std::vector<double>(3, 1.0));
  for (int o = 0; o < 3; ++o) {
    double want = 0;
    for (int i = 0; i < 2; ++i) {
      double ax = 0;
      for (int j = 0; j < 4; ++j) ax += s.a(i, j) * x[j];
      want += s.b(o, i) * ax;
    }
    EXPECT_NEAR(y[o], want, 1e-14);
  }
}

TEST(VeraPlusForward, Linearity) {
  Rng rng(3);
  const auto p = init_shared_projections(3, 6, 6, 4);
  const auto s = slice_projections(p, 6, 6);
  const auto d = random_vec(rng, 3), b = random_vec(rng, 6), x1 = random_vec(rng, 6), x2 = random_vec(rng, 6);
  const double al = 0.7, be = -1.3;
  std::vector<double> mix(6);
  for (int i = 0; i < 6; ++i) mix[i] = al * x1[i] + be * x2[i];
  const auto y1 = vera_plus_forward(x1, s, d, b), y2 = vera_plus_forward(x2, s, d, b), y = vera_plus_forward(mix, s, d, b);
  for (int i = 0; i < 6; ++i) EXPECT_NEAR(y[i], al * y1[i] + be * y2[i], 1e-13);
}

TEST(VeraPlusForward, ShapeMismatch) {
  const auto p = init_shared_projections(1, 4, 4, 1);
  const auto s = slice_projections(p, 4, 4);
  EXPECT_THROW(vera_plus_forward(std::vector<double>(3), s, std::vector<double>(1), std::vector<double>(4)),
               ContractError);
}

TEST(RankBound, DenseReconstructionHasRankAtMostR) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const int r = 1 + trial % 4, cin = 6 + trial % 5, cout = 5 + trial % 7;
    const auto p = init_shared_projections(r, cin, cout, 100 + trial);
    const auto s = slice_projections(p, cin, cout);
    const auto d = random_vec(rng, r), b = random_vec(rng, cout);
    const auto m = dense_compensation_matrix(s, d, b);
    // Brute-force oracle: columns from the branch applied to unit vectors.
    Eigen::MatrixXd dense(cout, cin);
    for (int j = 0; j < cin; ++j) {
      std::vector<double> e(cin, 0.0);
      e[j] = 1.0;
      const auto col = vera_plus_forward(e, s, d, b);
      for (int o = 0; o < cout; ++o) {
        dense(o, j) = col[o];
        EXPECT_NEAR(m[o * cin + j], col[o], 1e-14);
      }
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(dense);
    const auto sv = svd.singularValues();
    for (int k = r; k < sv.size(); ++k) EXPECT_LT(sv(k), 1e-10 * sv(0));
  }
}

TEST(RankBound, DenseMatrixMatchesBranch) {
  Rng rng(5);
  const auto p = init_shared_projections(2, 5, 4, 6);
  const auto s = slice_projections(p, 5, 4);
  const auto d = random_vec(rng, 2), b = random_vec(rng, 4), x = random_vec(rng, 5);
  const auto m = dense_compensation_matrix(s, d, b);
  const auto y = vera_plus_forward(x, s, d, b);
  for (int o = 0; o < 4; ++o) {
    double acc = 0;
    for (int j = 0; j < 5; ++j) acc += m[o * 5 + j] * x[j];
    EXPECT_NEAR(acc, y[o], 1e-14);
  }
}

TEST(PointwiseConv, ConstantInputGivesVectorCase) {
  Rng rng(6);
  const auto p = init_shared_projections(2, 3, 4, 7);
  const auto layer = conv(3, 4, 3, 2, 1);
  LayerScaling sc{0, random_vec(rng, 2), random_vec(rng, 4)};
  FeatureMap<double> x({3, 6, 6});
  const std::vector<double> v{0.2, -0.5, 0.9};
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 36; ++i) x.data[c * 36 + i] = v[c];
  const auto out = pointwise_conv_compensation(x, layer, sc, p);
  EXPECT_EQ(out.shape, (Shape{4, 3, 3}));
  const auto want = vera_plus_forward(v, slice_projections(p, 3, 4, 2), sc.d_vec, sc.b_vec);
  for (int c = 0; c < 4; ++c)
    for (int y = 0; y < 3; ++y)
      for (int xx = 0; xx < 3; ++xx) EXPECT_EQ(out.at(c, y, xx), want[c]);
}

TEST(PointwiseConv, ZeroBAndDegenerateSpatial) {
  Rng rng(7);
  const auto p = init_shared_projections(1, 3, 2, 8);
  LayerScaling zero{0, {0.1}, {0, 0}};
  FeatureMap<double> x({3, 4, 4}, random_vec(rng, 48));
  for (double v : pointwise_conv_compensation(x, conv(3, 2, 3, 1, 1), zero, p).data) EXPECT_EQ(v, 0.0);
  LayerScaling sc{0, {0.7}, {1.5, -0.4}};
  FeatureMap<double> px({3, 1, 1}, {0.3, 0.1, -0.2});
  const auto out = pointwise_conv_compensation(px, conv(3, 2, 1, 1, 0), sc, p);
  EXPECT_EQ(out.data, vera_plus_forward(px.data, slice_projections(p, 3, 2, 1), sc.d_vec, sc.b_vec));
}

TEST(PointwiseConv, RejectsSpatialMismatch) {
  const auto p = init_shared_projections(1, 3, 2, 8);
  LayerScaling sc{0, {0.1}, {0, 0}};
  FeatureMap<double> x({3, 4, 4});
  // 3x3 without padding shrinks the backbone output to 2x2.
  EXPECT_THROW(pointwise_conv_compensation(x, conv(3, 2, 3, 1, 0), sc, p), ContractError);
}

TEST(LoRA, ShapesAndZeroA) {
  const auto layer = conv(4, 6, 3, 1, 1);
  auto pair = make_lora_pair(layer, 2);
  EXPECT_EQ(pair.a.size(), 2u * 3 * 4 * 3);
  EXPECT_EQ(pair.b.size(), 6u * 3 * 2 * 3);
  Rng rng(8);
  pair.b = random_vec(rng, pair.b.size());
  FeatureMap<double> x({4, 5, 5}, random_vec(rng, 100));
  for (double v : lora_forward(x, layer, pair).data) EXPECT_EQ(v, 0.0);
}

TEST(LoRA, FullRankDegenerateCase) {
  LayerSpec lin;
  lin.kind = LayerKind::kLinear;
  lin.c_in = 3;
  lin.c_out = 3;
  auto pair = make_lora_pair(lin, 3);
  pair.a = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  pair.b = {2, -1, 0, 0.5, 3, 1, -2, 0, 4};
  const std::vector<double> x{1, -2, 0.5};
  const auto y = lora_forward(x, pair);
  EXPECT_DOUBLE_EQ(y[0], 2 * 1 - 1 * -2);
  EXPECT_DOUBLE_EQ(y[1], 0.5 * 1 + 3 * -2 + 1 * 0.5);
  EXPECT_DOUBLE_EQ(y[2], -2 * 1 + 4 * 0.5);
}

TEST(LoRA, MatchesDenseOracle) {
  Rng rng(9);
  const auto layer = conv(3, 4, 3, 1, 1);
  auto pair = make_lora_pair(layer, 2);
  pair.a = random_vec(rng, pair.a.size());
  pair.b = random_vec(rng, pair.b.size());
  // Independent dense product B A, reinterpreted as [c_out][c_in][K][K].
  const int rk = 6, rows = 12, cols = 9;
  std::vector<double> ba(rows * cols, 0.0);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      for (int k = 0; k < rk; ++k) ba[i * cols + j] += pair.b[i * rk + k] * pair.a[k * cols + j];
  FeatureMap<double> x({3, 4, 4}, random_vec(rng, 48));
  const auto y = lora_forward(x, layer, pair);
  for (int o = 0; o < 4; ++o)
    for (int oy = 0; oy < 4; ++oy)
      for (int ox = 0; ox < 4; ++ox) {
        double acc = 0;
        for (int c = 0; c < 3; ++c)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = oy + ky - 1, ix = ox + kx - 1;
              if (iy < 0 || iy >= 4 || ix < 0 || ix >= 4) continue;
              acc += ba[((o * 3 + c) * 3 + ky) * 3 + kx] * x.at(c, iy, ix);
            }
        EXPECT_NEAR(y.at(o, oy, ox), acc, 1e-12);
      }
}

TEST(SelectActiveSet, Examples) {
  std::vector<ScalingVectorSet> sets(3);
  const double times[] = {1, 1.5, 2.25};
  for (int i = 0; i < 3; ++i) {
    sets[i].set_id = 10 + i;
    sets[i].drift_time = times[i];
  }
  EXPECT_EQ(select_active_set(1.5, sets), 11);
  EXPECT_EQ(select_active_set(2.0, sets), 11);
  EXPECT_EQ(select_active_set(1e9, sets), 12);
  EXPECT_EQ(select_active_set(1.0, sets), 10);
  EXPECT_THROW(select_active_set(0.5, sets), DomainError);
  int prev = 0;
  for (double t = 1; t < 10; t += 0.1) {
    const int id = select_active_set(t, sets);
    EXPECT_GE(id, prev);
    prev = id;
  }
}

TEST(ParamCount, Examples) {
  const std::vector<LayerDims> layer{{16, 16, 3}};
  EXPECT_EQ(count_compensation_params(CompensationVariant::kLora, layer, 1, 1).total(), 288u);
  EXPECT_EQ(count_compensation_params(CompensationVariant::kVeraPlus, layer, 1, 1).per_set, 17u);
  const auto lora = count_compensation_params(CompensationVariant::kLora, layer, 1, 1);
  const auto vp = count_compensation_params(CompensationVariant::kVeraPlus, layer, 1, 1);
  EXPECT_EQ(lora.per_set, 9 * vp.shared);
}

TEST(ParamCount, StrictOrderingOnZooTopologies) {
  std::vector<ModelSpec> zoo{build_resnet20()};
  for (int w : {4, 8, 16})
    for (int b : {1, 2, 3}) zoo.push_back(build_toy_resnet(w, b, 10));
  for (const auto& spec : zoo) {
    const auto layers = compensated_dims(spec);
    for (int r : {1, 2, 4, 8})
      for (int sets : {2, 5, 11}) {
        const auto vp = count_compensation_params(CompensationVariant::kVeraPlus, layers, r, sets).total();
        const auto v = count_compensation_params(CompensationVariant::kVera, layers, r, sets).total();
        const auto l = count_compensation_params(CompensationVariant::kLora, layers, r, sets).total();
        EXPECT_LT(vp, v) << r << " " << sets;
        EXPECT_LT(v, l) << r << " " << sets;
      }
  }
}

// With one set and few repeated shapes vera pays about lora's matrices plus its vectors.
TEST(ParamCount, OrderingNeedsSharedShapes) {
  const std::vector<LayerDims> layer{{16, 16, 1}};
  const auto v = count_compensation_params(CompensationVariant::kVera, layer, 1, 1).total();
  const auto l = count_compensation_params(CompensationVariant::kLora, layer, 1, 1).total();
  EXPECT_EQ(l, 32u);
  EXPECT_EQ(v, 32u + 1 + 16);
  const auto toy = compensated_dims(build_toy_resnet(4, 1, 10));
  EXPECT_GT(count_compensation_params(CompensationVariant::kVera, toy, 1, 1).total(),
            count_compensation_params(CompensationVariant::kLora, toy, 1, 1).total());
}

TEST(ScalingSet, InitialSetIsZeroFunction) {
  const auto spec = build_toy_resnet(8, 1, 10);
  const auto s = make_initial_set(spec, 2, 0, 1.0);
  EXPECT_EQ(s.layers.size(), spec.compensated_layers().size());
  for (const auto& l : s.layers) {
    EXPECT_EQ(l.d_vec, std::vector<double>(2, 0.1));
    for (double b : l.b_vec) EXPECT_EQ(b, 0.0);
  }
  const auto p = init_shared_projections(spec, 2, 1);
  EXPECT_NO_THROW(check_set_matches(spec, p, s));
  const auto p1 = init_shared_projections(spec, 1, 1);
  EXPECT_THROW(check_set_matches(spec, p1, s), ContractError);
}
