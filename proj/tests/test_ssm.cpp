#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include <unsupported/Eigen/MatrixFunctions>

#include "s2tx/ssm/global_context.hpp"
#include "s2tx/ssm/mamba_block.hpp"
#include "s2tx/ssm/selective_scan.hpp"
#include "test_util.hpp"

namespace s2tx {
namespace {

using testing::random_matrix;
using M = Matrix<double>;

// ---------------------------------------------------------------- discretize

TEST(Discretize, ZeroStep) {
  RowVector<double> a(1), b(1);
  a << -1.0;
  b << 3.7;
  auto d = discretize(a, b, 0.0);
  EXPECT_EQ(d.a_bar(0), 1.0);
  EXPECT_EQ(d.b_bar(0), 0.0);
}

TEST(Discretize, HalfDecay) {
  RowVector<double> a(1), b(1);
  a << -1.0;
  b << 1.0;
  auto d = discretize(a, b, std::numbers::ln2);
  EXPECT_NEAR(d.a_bar(0), 0.5, 1e-15);
  EXPECT_NEAR(d.b_bar(0), 0.5, 1e-15);
}

TEST(Discretize, VanishingRateLimit) {
  RowVector<double> a(1), b(1);
  b << 2.0;
  for (double av : {-1e-9, -1e-14, -0.0}) {
    a << av;
    EXPECT_NEAR(discretize(a, b, 0.1).b_bar(0), 0.2, 1e-9);
  }
}

// The diagonal closed form must agree with the generic ZOH obtained from the
// exponential of the augmented matrix [[A, B], [0, 0]] * delta.
TEST(Discretize, MatchesAugmentedMatrixExponential) {
  Rng rng(11);
  std::uniform_real_distribution<double> rate(0.05, 5.0), step(1e-3, 2.0), gain(-2.0, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 4;
    RowVector<double> a(n), b(n);
    for (int i = 0; i < n; ++i) {
      a(i) = -rate(rng);
      b(i) = gain(rng);
    }
    const double dt = step(rng);
    Eigen::MatrixXd aug = Eigen::MatrixXd::Zero(n + 1, n + 1);
    for (int i = 0; i < n; ++i) {
      aug(i, i) = a(i);
      aug(i, n) = b(i);
    }
    Eigen::MatrixXd phi = (aug * dt).exp();
    auto d = discretize(a, b, dt);
    for (int i = 0; i < n; ++i) {
      EXPECT_NEAR(d.a_bar(i), phi(i, i), 1e-12);
      EXPECT_NEAR(d.b_bar(i), phi(i, n), 1e-12);
      EXPECT_GT(d.a_bar(i), 0.0);
      EXPECT_LT(d.a_bar(i), 1.0);
    }
  }
}

TEST(Discretize, GainDerivativeMatchesFiniteDifference) {
  for (double dt : {1e-3, 0.05, 0.7, 3.0}) {
    for (double a : {-1e-7, -1e-3, -0.4, -2.0, -11.0}) {
      const double h = 1e-6 * std::max(1.0, std::abs(a));
      const double fd = (zoh::gain(dt, a + h) - zoh::gain(dt, a - h)) / (2 * h);
      EXPECT_NEAR(zoh::gain_grad_a(dt, a), fd, 1e-7 * std::max(1.0, std::abs(fd))) << dt << " " << a;
    }
  }
}

// ------------------------------------------------------------ selective scan

struct ScanProblem {
  M x, delta, a, b, c, skip;
};

ScanProblem random_problem(Index len, Index ch, Index ns, Rng& rng) {
  ScanProblem p;
  p.x = random_matrix(len, ch, rng);
  std::uniform_real_distribution<double> dt(0.01, 1.5), rate(0.1, 4.0);
  p.delta.resize(len, ch);
  for (Index i = 0; i < p.delta.size(); ++i) p.delta.data()[i] = dt(rng);
  p.a.resize(ch, ns);
  for (Index i = 0; i < p.a.size(); ++i) p.a.data()[i] = -rate(rng);
  p.b = random_matrix(len, ns, rng);
  p.c = random_matrix(len, ns, rng);
  p.skip = random_matrix(1, ch, rng);
  return p;
}

// Independently written recurrence: channel-outer loop, explicit state vector.
M scan_oracle(const ScanProblem& p) {
  const Index len = p.x.rows(), ch = p.x.cols(), ns = p.a.cols();
  M y(len, ch);
  for (Index k = 0; k < ch; ++k) {
    std::vector<double> h(static_cast<std::size_t>(ns), 0.0);
    for (Index t = 0; t < len; ++t) {
      double out = 0.0;
      for (Index s = 0; s < ns; ++s) {
        const double a = p.a(k, s);
        const double abar = std::exp(p.delta(t, k) * a);
        const double bbar = std::expm1(p.delta(t, k) * a) / a * p.b(t, s);
        h[static_cast<std::size_t>(s)] = abar * h[static_cast<std::size_t>(s)] + bbar * p.x(t, k);
        out += p.c(t, s) * h[static_cast<std::size_t>(s)];
      }
      y(t, k) = out + p.skip(0, k) * p.x(t, k);
    }
  }
  return y;
}

M run_scan(const ScanProblem& p, ScanCache<double>* cache = nullptr) {
  return selective_scan(p.x, p.delta, p.a, p.b, p.c, p.skip, cache);
}

TEST(SelectiveScan, ZeroInputsGiveZeroOutputs) {
  Rng rng(1);
  auto p = random_problem(9, 3, 4, rng);
  p.x.setZero();
  EXPECT_TRUE(run_scan(p).isZero(0.0));
}

TEST(SelectiveScan, SingleStep) {
  Rng rng(2);
  auto p = random_problem(1, 3, 5, rng);
  M y = run_scan(p);
  for (Index k = 0; k < 3; ++k) {
    RowVector<double> a = p.a.row(k);
    RowVector<double> b = p.b.row(0);
    auto d = discretize(a, b, p.delta(0, k));
    const double expected = p.c.row(0).dot(d.b_bar) * p.x(0, k) + p.skip(0, k) * p.x(0, k);
    EXPECT_NEAR(y(0, k), expected, 1e-14);
  }
}

TEST(SelectiveScan, MatchesSequentialOracle) {
  Rng rng(3);
  auto p = random_problem(7, 3, 4, rng);
  M y = run_scan(p);
  M ref = scan_oracle(p);
  for (Index i = 0; i < y.size(); ++i)
    EXPECT_LE(testing::rel_err(y.data()[i], ref.data()[i], 1e-300), 1e-10);
}

TEST(SelectiveScan, ReportsFailingStep) {
  Rng rng(4);
  auto p = random_problem(8, 2, 3, rng);
  p.x(5, 1) = 1e308;
  p.skip(0, 1) = 10.0;
  try {
    run_scan(p);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_EQ(e.step_index, 5);
  }
}

TEST(SelectiveScan, StateBoundedByInputGain) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto p = random_problem(30, 4, 6, rng);
    ScanCache<double> cache;
    run_scan(p, &cache);
    const Index ns = p.a.cols();
    for (Index k = 0; k < p.x.cols(); ++k) {
      for (Index s = 0; s < ns; ++s) {
        double max_in = 0.0, max_decay = 0.0;
        for (Index t = 0; t < p.x.rows(); ++t) {
          max_in = std::max(max_in, std::abs(zoh::gain(p.delta(t, k), p.a(k, s)) * p.b(t, s) * p.x(t, k)));
          max_decay = std::max(max_decay, zoh::decay(p.delta(t, k), p.a(k, s)));
        }
        ASSERT_LT(max_decay, 1.0);
        for (Index t = 0; t < p.x.rows(); ++t)
          EXPECT_LE(std::abs(cache.states(t, k * ns + s)), max_in / (1.0 - max_decay) * (1 + 1e-12));
      }
    }
  }
}

TEST(SelectiveScan, BackwardMatchesFiniteDifferences) {
  Rng rng(6);
  auto p = random_problem(6, 3, 4, rng);
  M w = random_matrix(6, 3, rng);
  auto loss = [&]() { return (run_scan(p).array() * w.array()).sum(); };
  ScanCache<double> cache;
  run_scan(p, &cache);
  auto g = selective_scan_backward(p.x, p.delta, p.a, p.b, p.c, p.skip, cache, w);
  EXPECT_LE(testing::check_input_grad(p.x, g.inputs, loss).worst, 1e-6);
  EXPECT_LE(testing::check_input_grad(p.delta, g.delta, loss).worst, 1e-6);
  EXPECT_LE(testing::check_input_grad(p.a, g.a, loss).worst, 1e-6);
  EXPECT_LE(testing::check_input_grad(p.b, g.b, loss).worst, 1e-6);
  EXPECT_LE(testing::check_input_grad(p.c, g.c, loss).worst, 1e-6);
  EXPECT_LE(testing::check_input_grad(p.skip, g.skip, loss).worst, 1e-6);
}

// Projections computed with explicit loops, then the oracle recurrence.
TEST(SelectiveSSM, ForwardMatchesLoopOracle) {
  Rng rng(7);
  SelectiveSSM<double> ssm(5, 3, 2, rng);
  fill_uniform(ssm.a_log.value, 1.0, rng);
  M u = random_matrix(9, 5, rng);
  M y = ssm.forward(u);

  ScanProblem p;
  p.x = u;
  p.delta.resize(9, 5);
  p.b.resize(9, 3);
  p.c.resize(9, 3);
  for (Index t = 0; t < 9; ++t) {
    std::vector<double> proj(2 + 6, 0.0);
    for (Index j = 0; j < 8; ++j)
      for (Index i = 0; i < 5; ++i) proj[static_cast<std::size_t>(j)] += u(t, i) * ssm.x_proj.weight.value(i, j);
    for (Index k = 0; k < 5; ++k) {
      double pre = ssm.dt_proj.bias.value(0, k);
      for (Index r = 0; r < 2; ++r) pre += proj[static_cast<std::size_t>(r)] * ssm.dt_proj.weight.value(r, k);
      p.delta(t, k) = std::log1p(std::exp(pre));
    }
    for (Index s = 0; s < 3; ++s) {
      p.b(t, s) = proj[static_cast<std::size_t>(2 + s)];
      p.c(t, s) = proj[static_cast<std::size_t>(5 + s)];
    }
  }
  p.a = -ssm.a_log.value.array().exp().matrix();
  p.skip = ssm.skip.value;
  M ref = scan_oracle(p);
  for (Index i = 0; i < y.size(); ++i) EXPECT_LE(testing::rel_err(y.data()[i], ref.data()[i], 1e-300), 1e-10);
}

TEST(SelectiveSSM, DiscretizedDecayInUnitInterval) {
  Rng rng(8);
  SelectiveSSM<double> ssm(6, 16, 1, rng);
  M a = ssm.a_matrix();
  EXPECT_TRUE((a.array() < 0).all());
  // Initial rates span 1..state_dim.
  EXPECT_NEAR(a(0, 0), -1.0, 1e-15);
  EXPECT_NEAR(a(0, 15), -16.0, 1e-12);
  typename SelectiveSSM<double>::Cache c;
  ssm.forward(random_matrix(10, 6, rng), &c);
  EXPECT_TRUE((c.delta.array() > 0).all());
}

// ------------------------------------------------------------- mamba block

MambaSpec tiny_spec() { return MambaSpec{8, 4, 2, 3}; }

TEST(MambaBlock, PreservesShape) {
  Rng rng(9);
  MambaBlock<double> block(tiny_spec(), rng);
  for (Index len : {1, 2, 5, 17}) {
    M x = random_matrix(len, 8, rng);
    M y = block.forward(x);
    EXPECT_EQ(y.rows(), len);
    EXPECT_EQ(y.cols(), 8);
  }
}

TEST(MambaBlock, ZeroOutputProjectionIsResidualPassThrough) {
  Rng rng(10);
  MambaBlock<double> block(tiny_spec(), rng);
  block.out_proj.weight.value.setZero();
  M x = random_matrix(6, 8, rng);
  EXPECT_EQ(block.forward(x), x);
}

TEST(MambaBlock, GradientsMatchFiniteDifferences) {
  Rng rng(11);
  MambaBlock<double> block(tiny_spec(), rng);
  M x = random_matrix(5, 8, rng);
  M w = random_matrix(5, 8, rng);
  auto loss = [&]() { return (block.forward(x).array() * w.array()).sum(); };
  M dx;
  auto backward = [&]() {
    typename MambaBlock<double>::Cache c;
    block.forward(x, &c);
    dx = block.backward(c, w);
  };
  auto rep = testing::check_param_grads(block, loss, backward);
  EXPECT_LE(rep.worst, 1e-4) << rep.worst_name;
  EXPECT_GT(rep.checked, 300);
  EXPECT_LE(testing::check_input_grad(x, dx, loss).worst, 1e-4);
}

// ---------------------------------------------------------- global context

PatchTensor<double> random_global_patches(Index nv, Index np, Index pl, Rng& rng) {
  PatchTensor<double> p;
  p.scale = Scale::global;
  p.values = Tensor3<double>(nv, np, pl);
  std::normal_distribution<double> dist;
  for (auto& v : p.values.data()) v = dist(rng);
  return p;
}

TEST(GlobalContext, SingleVariateShape) {
  Rng rng(12);
  GlobalModel<double> g(6, tiny_spec(), 2, true, rng);
  auto out = g.forward(random_global_patches(1, 5, 6, rng));
  EXPECT_EQ(out.values.dim0(), 1);
  EXPECT_EQ(out.values.dim1(), 5);
  EXPECT_EQ(out.values.dim2(), 8);
}

TEST(GlobalContext, RejectsLocalPatches) {
  Rng rng(13);
  GlobalModel<double> g(6, tiny_spec(), 1, true, rng);
  auto p = random_global_patches(2, 3, 6, rng);
  p.scale = Scale::local;
  EXPECT_THROW(g.forward(p), InvalidSpecError);
}

TEST(GlobalContext, VariatePermutationChangesValuesNotShape) {
  Rng rng(14);
  GlobalModel<double> g(6, tiny_spec(), 2, true, rng);
  auto p = random_global_patches(3, 4, 6, rng);
  auto q = p;
  q.values.slice(0) = p.values.slice(1);
  q.values.slice(1) = p.values.slice(0);
  auto a = g.forward(p);
  auto b = g.forward(q);
  EXPECT_EQ(a.values.dim0(), b.values.dim0());
  EXPECT_EQ(a.values.dim1(), b.values.dim1());
  // The scan sees a different concatenation order, so values move.
  EXPECT_FALSE(Matrix<double>(a.values.slice(0)).isApprox(Matrix<double>(b.values.slice(1)), 1e-12));
}

TEST(GlobalContext, DefaultGeometryScansConcatenatedSequence) {
  Rng rng(15);
  MambaSpec s{16, 4, 2, 4};
  GlobalModel<double> g(48, s, 1, true, rng);
  typename GlobalModel<double>::Cache c;
  auto out = g.forward(random_global_patches(7, 18, 48, rng), &c);
  ASSERT_EQ(c.sequences.size(), 1u);
  EXPECT_EQ(c.sequences[0].fwd[0].normed.rows(), 7 * 18);
  EXPECT_EQ(out.values.dim0(), 7);

  GlobalModel<double> per_variate(48, s, 1, false, rng);
  typename GlobalModel<double>::Cache pc;
  per_variate.forward(random_global_patches(7, 18, 48, rng), &pc);
  ASSERT_EQ(pc.sequences.size(), 7u);
  EXPECT_EQ(pc.sequences[0].fwd[0].normed.rows(), 18);
}

TEST(GlobalContext, ReversalConsistency) {
  Rng rng(16);
  GlobalModel<double> g(5, tiny_spec(), 2, true, rng);
  auto p = random_global_patches(1, 7, 5, rng);
  auto rp = p;
  for (Index i = 0; i < 7; ++i)
    for (Index k = 0; k < 5; ++k) rp.values(0, i, k) = p.values(0, 6 - i, k);
  auto out = g.forward(p);
  g.swap_directions();
  auto rout = g.forward(rp);
  for (Index i = 0; i < 7; ++i)
    for (Index k = 0; k < 8; ++k) EXPECT_NEAR(rout.values(0, i, k), out.values(0, 6 - i, k), 1e-12);
}

class GlobalGradients : public ::testing::TestWithParam<bool> {};

TEST_P(GlobalGradients, MatchFiniteDifferences) {
  Rng rng(17);
  GlobalModel<double> g(4, tiny_spec(), 2, GetParam(), rng);
  auto p = random_global_patches(2, 4, 4, rng);
  Tensor3<double> w(2, 4, 8);
  std::normal_distribution<double> dist;
  for (auto& v : w.data()) v = dist(rng);
  auto loss = [&]() { return (g.forward(p).values.flat().array() * w.flat().array()).sum(); };
  auto backward = [&]() {
    typename GlobalModel<double>::Cache c;
    g.forward(p, &c);
    g.backward(c, w);
  };
  auto rep = testing::check_param_grads(g, loss, backward, 40);
  EXPECT_LE(rep.worst, 1e-4) << rep.worst_name;
}

INSTANTIATE_TEST_SUITE_P(CrossVariate, GlobalGradients, ::testing::Values(true, false));

}  // namespace
}  // namespace s2tx
