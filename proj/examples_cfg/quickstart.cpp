// Library quickstart: self-play a small victim, attack it, and print the
// score grid. Takes about a minute and a half on one core.
#include <cstdio>

#include "advpol/experiment.hpp"

int main() {
  using namespace advpol;
  EnvConfig env;
  env.name = EnvName::CorridorPass;
  env.pose_dim = 24;

  TrialConfig cfg;
  cfg.victim.ppo.total_steps = 409'600;
  cfg.victim.ppo.batch_size = 512;
  cfg.victim.pool_interval = 20'480;
  cfg.adversary.ppo.total_steps = 102'400;
  cfg.adversary.ppo.batch_size = 512;
  cfg.eval_episodes = 200;

  const TrialResult t = run_trial(env, cfg, 1, [](const std::string& phase, std::size_t step) {
    if (step % 102'400 == 0) std::printf("%s step %zu\n", phase.c_str(), step);
  });
  std::printf("%-8s %-8s %s\n", "victim", "opponent", "opponent win rate [95% CI]");
  for (const auto& c : t.grid.cells)
    std::printf("%-8s %-8s %.3f [%.3f, %.3f]\n", c.masked ? "masked" : "plain", c.opponent.c_str(),
                c.stats.opponent_win_rate(), c.stats.opponent_ci.low, c.stats.opponent_ci.high);
}
