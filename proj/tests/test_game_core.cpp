#include <gtest/gtest.h>

#include <array>
#include <cmath>

#include "advpol/envs.hpp"
#include "advpol/game.hpp"
#include "advpol/policy.hpp"
#include "toy_game.hpp"

using namespace advpol;
using advpol::testing::ToyGame;
using advpol::testing::ToyVictim;

namespace {

// P(s' | s, a_adv) = sum_v pi(v | s) T(s' | s, v, a_adv), computed by hand.
std::array<double, 3> marginal(int s, int a) {
  std::array<double, 3> p{};
  const double pv = ToyVictim::kP[static_cast<std::size_t>(s)];
  for (int k = 0; k < 3; ++k) p[k] = (1.0 - pv) * ToyGame::kT[s][0][a][k] + pv * ToyGame::kT[s][1][a][k];
  return p;
}

}  // namespace

TEST(TerminalReward, WinLossTie) {
  EXPECT_EQ(terminal_reward(Status::Player0Wins, 0), 1.0);
  EXPECT_EQ(terminal_reward(Status::Player0Wins, 1), -1.0);
  EXPECT_EQ(terminal_reward(Status::Player1Wins, 1), 1.0);
  EXPECT_EQ(terminal_reward(Status::Tie, 0), -1.0);
  EXPECT_EQ(terminal_reward(Status::Tie, 1), -1.0);
  EXPECT_EQ(terminal_reward(Status::Ongoing, 0), 0.0);
}

TEST(TerminalReward, ZeroSumOnDecisiveOutcomes) {
  for (auto s : {Status::Player0Wins, Status::Player1Wins})
    EXPECT_EQ(terminal_reward(s, 0) + terminal_reward(s, 1), 0.0);
}

TEST(EmbeddedMdp, TransitionMarginalizesVictimPolicy) {
  ToyGame game;
  const EmbeddedMdp<ToyGame> mdp(game, std::make_shared<ToyVictim>(), 0);
  const int n = 100000;
  for (int s = 0; s < 3; ++s)
    for (int a = 0; a < 2; ++a) {
      std::array<double, 3> counts{};
      Rng vic(derive_seed(5, s, a));
      Eigen::VectorXd act(1);
      act(0) = a ? 1.0 : -1.0;
      for (int i = 0; i < n; ++i) {
        ToyGame::State st{s, 0, static_cast<std::uint64_t>(i) + 1000000ULL * static_cast<std::uint64_t>(2 * s + a)};
        counts[static_cast<std::size_t>(mdp.step(st, act, vic).next.s)] += 1.0;
      }
      const auto p = marginal(s, a);
      double tv = 0.0;
      for (int k = 0; k < 3; ++k) tv += 0.5 * std::abs(counts[k] / n - p[k]);
      EXPECT_LT(tv, 0.01) << "s=" << s << " a=" << a;
    }
}

TEST(EmbeddedMdp, RewardIsSparseAndFromAdversaryView) {
  ToyGame game;
  game.horizon = 1;
  const EmbeddedMdp<ToyGame> mdp(game, std::make_shared<ToyVictim>(), 0);
  Rng vic(1);
  Eigen::VectorXd act(1);
  act(0) = 1.0;
  int seen_win = 0, seen_loss = 0;
  for (std::uint64_t e = 0; e < 200; ++e) {
    const auto t = mdp.step(mdp.reset(e), act, vic);
    ASSERT_TRUE(t.done);
    if (t.next.s == 2) {
      EXPECT_EQ(t.reward, 1.0);
      EXPECT_EQ(mdp.outcome(t.next).winner, Winner::Adversary);
      ++seen_win;
    } else {
      EXPECT_EQ(t.reward, -1.0);
      EXPECT_EQ(mdp.outcome(t.next).winner, Winner::Victim);
      ++seen_loss;
    }
  }
  EXPECT_GT(seen_win, 0);
  EXPECT_GT(seen_loss, 0);
}

TEST(EmbeddedMdp, NonTerminalStepsPayZero) {
  ToyGame game;
  const EmbeddedMdp<ToyGame> mdp(game, std::make_shared<ToyVictim>(), 0);
  Rng vic(2);
  auto t = mdp.step(mdp.reset(3), Eigen::VectorXd::Ones(1), vic);
  EXPECT_FALSE(t.done);
  EXPECT_EQ(t.reward, 0.0);
}

TEST(EmbeddedMdp, RejectsMismatchedVictim) {
  const PointMassGame game(EnvConfig{});
  EXPECT_THROW(EmbeddedMdp<PointMassGame>(game, make_baseline(BaselineKind::Zero, 3), 0), ConfigError);
  EXPECT_THROW(EmbeddedMdp<PointMassGame>(game, SamplerPtr{}, 0), ConfigError);
  EXPECT_THROW(EmbeddedMdp<PointMassGame>(game, make_baseline(BaselineKind::Zero, 26), 2), ConfigError);
  EXPECT_NO_THROW(EmbeddedMdp<PointMassGame>(game, make_baseline(BaselineKind::Zero, 26), 0));
}

TEST(EmbeddedMdp, VictimSideSwapsRoles) {
  ToyGame game;
  game.horizon = 1;
  // Victim on side 1: the adversary controls player 0 and wins when the state
  // is not 2.
  const EmbeddedMdp<ToyGame> mdp(game, std::make_shared<ToyVictim>(), 1);
  EXPECT_EQ(mdp.adversary_index(), 0);
  Rng vic(3);
  const auto t = mdp.step(mdp.reset(0), Eigen::VectorXd::Ones(1), vic);
  EXPECT_EQ(t.reward, t.next.s == 2 ? -1.0 : 1.0);
}

TEST(EmbeddedMdp, PoolPicksVictimPerEpisodeDeterministically) {
  const PointMassGame game(EnvConfig{});
  std::vector<SamplerPtr> pool{make_baseline(BaselineKind::Zero, 26), make_baseline(BaselineKind::Rand, 26)};
  const EmbeddedMdp<PointMassGame> a(game, pool, 0, 42), b(game, pool, 0, 42);
  EXPECT_EQ(a.pool_size(), 2u);
  // The zero victim never moves in its first step; the random one (almost surely) does.
  int moved = 0;
  for (std::uint64_t e = 0; e < 64; ++e) {
    Rng ra(e), rb(e);
    const auto s0 = a.reset(e);
    const auto ta = a.step(s0, Eigen::VectorXd::Zero(26), ra);
    const auto tb = b.step(s0, Eigen::VectorXd::Zero(26), rb);
    EXPECT_EQ(ta.next.players[0].position, tb.next.players[0].position);
    moved += (ta.next.players[0].velocity.norm() > 0.05) ? 1 : 0;
  }
  EXPECT_GT(moved, 10);
  EXPECT_LT(moved, 54);
}
