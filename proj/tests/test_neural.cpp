#include <gtest/gtest.h>

#include <cstring>
#include <sstream>

#include "advpol/neural.hpp"

using namespace advpol;

namespace {

Mlp random_mlp(Rng& rng, Activation act = Activation::Tanh) {
  std::vector<std::size_t> sizes{2 + rng() % 5};
  const std::size_t hidden = 1 + rng() % 3;
  for (std::size_t i = 0; i < hidden; ++i) sizes.push_back(2 + rng() % 6);
  sizes.push_back(1 + rng() % 4);
  Mlp m = Mlp::orthogonal(sizes, std::sqrt(2.0), 1.0, rng, act);
  for (Eigen::Index i = 0; i < m.params().size(); ++i) m.params()(i) += 0.3 * standard_normal(rng);
  return m;
}

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Eigen::MatrixXd x(r, c);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = standard_normal(rng);
  return x;
}

// Smooth scalar loss of the network output: sum(C .* Y) + 0.25 * sum(Y.^2).
struct OutputLoss {
  Mlp net;
  Eigen::MatrixXd x, c;
  double operator()(const Eigen::VectorXd& theta, Eigen::VectorXd* grad) {
    Mlp m = net;
    m.params() = theta;
    MlpTape tape;
    const Eigen::MatrixXd y = m.forward(x, grad ? &tape : nullptr);
    if (grad) *grad = m.backward(tape, c + 0.5 * y);
    return (c.array() * y.array()).sum() + 0.25 * y.squaredNorm();
  }
};

}  // namespace

TEST(Mlp, ParameterLayout) {
  Mlp m({3, 4, 2});
  EXPECT_EQ(m.num_params(), 3u * 4 + 4 + 4 * 2 + 2);
  m.params().setLinSpaced(static_cast<Eigen::Index>(m.num_params()), 0.0, static_cast<double>(m.num_params() - 1));
  EXPECT_EQ(m.weight(0)(0, 1), 1.0);  // row-major
  EXPECT_EQ(m.weight(0)(1, 0), 3.0);
  EXPECT_EQ(m.bias(0)(0), 12.0);
  EXPECT_EQ(m.weight(1)(0, 0), 16.0);
  EXPECT_EQ(m.bias(1)(1), 25.0);
}

TEST(Mlp, ForwardMatchesHandComputation) {
  Mlp m({2, 2, 1});
  m.weight(0) << 1.0, -1.0, 0.5, 2.0;
  m.bias(0) << 0.1, -0.2;
  m.weight(1) << 3.0, -1.0;
  m.bias(1) << 0.25;
  Eigen::Vector2d x(0.3, -0.7);
  const double h0 = std::tanh(0.3 + 0.7 + 0.1), h1 = std::tanh(0.15 - 1.4 - 0.2);
  ActivationTrace tr;
  EXPECT_NEAR(m.forward(Eigen::VectorXd(x), &tr)(0), 3.0 * h0 - h1 + 0.25, 1e-15);
  ASSERT_EQ(tr.hidden.size(), 1u);
  EXPECT_NEAR(tr.hidden[0](1), h1, 1e-15);
}

TEST(Mlp, BatchedAndSingleForwardAgree) {
  Rng rng(4);
  const Mlp m = random_mlp(rng);
  const Eigen::MatrixXd x = random_matrix(static_cast<Eigen::Index>(m.input_dim()), 7, rng);
  const Eigen::MatrixXd y = m.forward(x);
  for (Eigen::Index j = 0; j < 7; ++j) EXPECT_LT((y.col(j) - m.forward(Eigen::VectorXd(x.col(j)), nullptr)).norm(), 1e-14);
}

TEST(Mlp, GradientMatchesFiniteDifferences) {
  Rng rng(2024);
  double worst = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    OutputLoss f{random_mlp(rng, inst % 4 == 3 ? Activation::Identity : Activation::Tanh), {}, {}};
    f.x = random_matrix(static_cast<Eigen::Index>(f.net.input_dim()), 3, rng);
    f.c = random_matrix(static_cast<Eigen::Index>(f.net.output_dim()), 3, rng);
    const auto rep = grad_check(f.net.params(), std::ref(f), 1e-4);
    worst = std::max(worst, rep.max_rel_error);
    EXPECT_TRUE(rep.passed) << "instance " << inst << " coordinate " << rep.worst_index << " error "
                            << rep.max_rel_error;
  }
  RecordProperty("max_rel_error", std::to_string(worst));
}

TEST(Mlp, InputGradientMatchesFiniteDifferences) {
  Rng rng(8);
  const Mlp m = random_mlp(rng);
  Eigen::MatrixXd x = random_matrix(static_cast<Eigen::Index>(m.input_dim()), 1, rng);
  const Eigen::MatrixXd c = random_matrix(static_cast<Eigen::Index>(m.output_dim()), 1, rng);
  MlpTape tape;
  m.forward(x, &tape);
  Eigen::MatrixXd gx;
  m.backward(tape, c, &gx);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Eigen::MatrixXd up = x, down = x;
    up(i, 0) += 1e-6;
    down(i, 0) -= 1e-6;
    const double fd = ((c.array() * m.forward(up).array()).sum() - (c.array() * m.forward(down).array()).sum()) / 2e-6;
    EXPECT_NEAR(gx(i, 0), fd, 1e-7 * std::max(1.0, std::abs(fd)));
  }
}

TEST(Mlp, BackwardNeedsTape) {
  const Mlp m({2, 3, 1});
  EXPECT_THROW(m.backward(MlpTape{}, Eigen::MatrixXd::Zero(1, 1)), ConfigError);
  EXPECT_THROW(m.forward(Eigen::MatrixXd::Zero(3, 1)), ConfigError);
}

TEST(Mlp, OrthogonalInitialisation) {
  Rng rng(1);
  const Mlp m = Mlp::orthogonal({10, 64, 64, 3}, std::sqrt(2.0), 0.01, rng);
  const Eigen::MatrixXd w0 = m.weight(0);  // 64 x 10: orthonormal columns
  EXPECT_LT((w0.transpose() * w0 - 2.0 * Eigen::MatrixXd::Identity(10, 10)).norm(), 1e-10);
  const Eigen::MatrixXd w2 = m.weight(2);  // 3 x 64: orthonormal rows
  EXPECT_LT((w2 * w2.transpose() - 1e-4 * Eigen::MatrixXd::Identity(3, 3)).norm(), 1e-12);
  EXPECT_TRUE(m.bias(0).isZero());
}

TEST(Mlp, ActivationTraceHas128Units) {
  Rng rng(3);
  const Mlp m = Mlp::orthogonal({56, 64, 64, 26}, std::sqrt(2.0), 0.01, rng);
  ActivationTrace tr;
  m.forward(Eigen::VectorXd::Ones(56), &tr);
  EXPECT_EQ(tr.concatenated().size(), 128);
  EXPECT_EQ(tr.concatenated().head(64), tr.hidden[0]);
}

TEST(Mlp, BinaryRoundTripIsBitExact) {
  Rng rng(5);
  const Mlp m = random_mlp(rng);
  std::stringstream a;
  m.write_binary(a);
  const std::string bytes = a.str();
  std::stringstream in(bytes);
  const Mlp back = Mlp::read_binary(in);
  EXPECT_EQ(back.layer_sizes(), m.layer_sizes());
  EXPECT_EQ(0, std::memcmp(back.params().data(), m.params().data(), m.num_params() * sizeof(double)));
  std::stringstream b;
  back.write_binary(b);
  EXPECT_EQ(b.str(), bytes);
}

TEST(Mlp, BinaryRejectsCorruption) {
  std::stringstream bad("XXXX0000");
  EXPECT_THROW(Mlp::read_binary(bad), ConfigError);
  Rng rng(6);
  std::stringstream a;
  random_mlp(rng).write_binary(a);
  std::string s = a.str();
  std::stringstream truncated(s.substr(0, s.size() - 5));
  EXPECT_THROW(Mlp::read_binary(truncated), ConfigError);
}

TEST(Mlp, JsonRoundTrip) {
  Rng rng(7);
  const Mlp m = random_mlp(rng);
  const Mlp back = Mlp::from_json(nlohmann::json::parse(m.to_json().dump()));
  EXPECT_EQ(back.layer_sizes(), m.layer_sizes());
  EXPECT_EQ(back.params(), m.params());
}

TEST(GradCheck, FlagsAWrongGradient) {
  const DifferentiableLoss f = [](const Eigen::VectorXd& t, Eigen::VectorXd* g) {
    if (g) *g = 3.0 * t;  // true gradient is 2t
    return t.squaredNorm();
  };
  const auto rep = grad_check(Eigen::VectorXd::Ones(3), f, 1e-4);
  EXPECT_FALSE(rep.passed);
  EXPECT_NEAR(rep.max_rel_error, 1.0 / 3.0, 1e-6);
}
