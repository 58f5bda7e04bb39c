#include <gtest/gtest.h>
#include <sys/wait.h>

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>

#include "advpol/config.hpp"
#include "advpol/io.hpp"

namespace fs = std::filesystem;
using namespace advpol;

namespace {

struct RunResult {
  int code = -1;
  std::string err;
};

fs::path scratch_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "advpol_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

RunResult run(const std::string& args) {
  const fs::path err = scratch_dir() / "stderr.txt";
  const std::string cmd = std::string(ADVPOL_CLI_PATH) + " " + args + " 2> " + err.string() + " > /dev/null";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = io::read_text(err);
  return r;
}

fs::path write_config(const std::string& name, const std::string& text) {
  const fs::path p = scratch_dir() / name;
  std::ofstream(p) << text;
  return p;
}

std::string smoke_config(const fs::path& root) {
  const std::string v = (root / "victim" / "victim.apol").string();
  const std::string o = (root / "victim" / "opponent.apol").string();
  const std::string a = (root / "adversary" / "adversary.apol").string();
  return "version: 1\nseed: 11\nenv:\n  name: CorridorPass\n  pose_dim: 2\n"
         "victim:\n  total_steps: 10240\n  batch_size: 512\n  pool_interval: 2048\n  checkpoint_interval: 4096\n"
         "adversary:\n  total_steps: 2048\n  batch_size: 512\n  checkpoint_interval: 1024\n  victim_checkpoint: " +
         v + "\n  eval_episodes: 50\n"
         "evaluate:\n  n_episodes: 40\n  victims:\n    - {label: Victim, checkpoint: " + v +
         "}\n  opponents:\n    - {label: Adv, checkpoint: " + a + "}\n    - {label: Normal, checkpoint: " + o +
         "}\n"
         "analysis:\n  victim: " + v + "\n  normal: {label: Normal, checkpoint: " + o +
         "}\n  opponents:\n    - {label: Adv, checkpoint: " + a +
         "}\n  n_steps: 400\n  k_list: [2, 3]\n  cov_types: [full, diag]\n  perplexity: 10\n  tsne_iters: 200\n"
         "  tsne_points: 30\n";
}

nlohmann::json manifest(const fs::path& dir) { return nlohmann::json::parse(io::read_text(dir / "manifest.json")); }

std::map<std::string, std::string> digests(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& a : manifest(dir).at("artifacts")) out[a.at("path")] = a.at("sha256");
  return out;
}

std::size_t count_files(const fs::path& dir, const std::string& prefix) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().filename().string().rfind(prefix, 0) == 0) ++n;
  return n;
}

/// Runs the smoke pipeline once and shares the output tree across tests.
class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = scratch_dir() / "pipeline";
    config_ = write_config("smoke.yaml", smoke_config(root_));
    const std::string c = " --config " + config_.string() + " -q --deterministic";
    victim_ = run("train-victim" + c + " --out " + (root_ / "victim").string());
    adversary_ = run("train-adversary" + c + " --out " + (root_ / "adversary").string());
  }
  static inline fs::path root_, config_;
  static inline RunResult victim_, adversary_;
};

}  // namespace

TEST(ConfigParsing, ErrorsCarryLineNumbers) {
  try {
    parse_config("version: 1\nenv:\n  name: CorridorPass\n  pose_dim: -3\n", "c.yaml");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("c.yaml:4"), std::string::npos) << e.what();
  }
  try {
    parse_config("version: 1\nenv:\n  name: CorridorPass\n  pose_dims: 3\n", "c.yaml");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("unknown key 'env.pose_dims'"), std::string::npos) << e.what();
  }
  try {
    parse_config("version: 1\nenv:\n  pose_dim: 3\n", "c.yaml");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("missing required key 'env.name'"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_config("version: 1\nenv: {name: CorridorPass}\nppo: {gamma: 2}\n"), ConfigError);
  EXPECT_THROW(parse_config("version: 2\nenv: {name: CorridorPass}\n"), ConfigError);
  EXPECT_THROW(parse_config("version: 1\nenv: {name: Soccer}\n"), ConfigError);
  EXPECT_THROW(parse_config("version: 1\nenv: {name: CorridorPass}\nsweep: {pose_dims: [8, 2]}\n"), ConfigError);
  EXPECT_THROW(parse_config("version: 1\nenv: {name: CorridorPass}\nevaluate:\n  victims:\n    - {label: V}\n"),
               ConfigError);
}

TEST(ConfigParsing, DefaultsAndOverrides) {
  const auto c = parse_config("version: 1\nenv: {name: DiskSumo, pose_dim: 8}\nppo: {learning_rate: 1.0e-3}\n"
                              "victim: {total_steps: 1024}\n");
  EXPECT_EQ(c.env.name, EnvName::DiskSumo);
  EXPECT_EQ(c.env.pose_dim, 8u);
  EXPECT_EQ(c.victim.ppo.total_steps, 1024u);
  EXPECT_EQ(c.adversary.ppo.total_steps, 500000u);
  EXPECT_EQ(c.victim.ppo.learning_rate, 1e-3);
  EXPECT_EQ(c.adversary.ppo.learning_rate, 1e-3);
  EXPECT_EQ(c.victim_side, 0);
  EXPECT_EQ(c.analysis.k_list, (std::vector<std::size_t>{5, 10, 20, 40, 80}));
  EXPECT_EQ(to_json(c).dump(), to_json(parse_config(to_json(c).dump())).dump());
}

TEST(ConfigParsing, ShippedExamplesParse) {
  for (const auto& e : fs::directory_iterator(fs::path(ADVPOL_SOURCE_DIR) / "examples_cfg"))
    if (e.path().extension() == ".yaml") {
      EXPECT_NO_THROW(load_config(e.path())) << e.path();
    }
}

TEST(Cli, ConfigErrorsExitWithCode2) {
  const auto bad = write_config("bad.yaml", "version: 1\nenv:\n  pose_dim: 3\n");
  const auto r = run("train-victim -q --config " + bad.string() + " --out " + (scratch_dir() / "bad").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("missing required key 'env.name'"), std::string::npos) << r.err;
  EXPECT_EQ(run("train-victim --config " + (scratch_dir() / "nope.yaml").string()).code, 2);
  EXPECT_EQ(run("bogus-command").code, 2);
  EXPECT_EQ(run("train-victim").code, 2);
}

TEST(Cli, MissingCheckpointExitsWithCode2) {
  const auto cfg = write_config("missing.yaml",
                                "version: 1\nenv: {name: CorridorPass, pose_dim: 2}\n"
                                "adversary: {total_steps: 512, victim_checkpoint: /nonexistent/victim.apol}\n");
  const auto r = run("train-adversary -q --config " + cfg.string() + " --out " + (scratch_dir() / "m").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("checkpoint not found"), std::string::npos) << r.err;
}

TEST_F(Pipeline, TrainVictimWritesCheckpointsAndManifest) {
  ASSERT_EQ(victim_.code, 0) << victim_.err;
  const fs::path dir = root_ / "victim";
  EXPECT_GE(count_files(dir / "checkpoints", "side0_"), 2u);
  EXPECT_GE(count_files(dir / "checkpoints", "side1_"), 2u);
  EXPECT_TRUE(fs::exists(dir / "victim.apol"));
  EXPECT_TRUE(fs::exists(dir / "opponent.apol"));
  EXPECT_TRUE(fs::exists(dir / "metrics_side0.csv"));
  const auto m = manifest(dir);
  EXPECT_EQ(m.at("command"), "train-victim");
  EXPECT_EQ(m.at("config_digest").get<std::string>().size(), 64u);
  EXPECT_TRUE(m.at("deterministic").get<bool>());
  for (const auto& [path, sha] : digests(dir)) EXPECT_EQ(sha256_file(dir / path), sha) << path;
}

TEST_F(Pipeline, RerunReproducesDigests) {
  ASSERT_EQ(victim_.code, 0) << victim_.err;
  const fs::path again = root_ / "victim_again";
  const auto r = run("train-victim -q --deterministic --no-plots --config " + config_.string() + " --out " +
                     again.string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(digests(again), digests(root_ / "victim"));
}

TEST_F(Pipeline, TrainAdversaryWritesCurve) {
  ASSERT_EQ(adversary_.code, 0) << adversary_.err;
  const fs::path dir = root_ / "adversary";
  EXPECT_EQ(count_files(dir / "checkpoints", "adversary_"), 3u);
  const auto curve = io::parse_csv(io::read_text(dir / "curve.csv"));
  EXPECT_EQ(curve.rows.size(), 3u);
  EXPECT_TRUE(fs::exists(dir / "curve.svg"));
  EXPECT_EQ(manifest(dir).at("config").at("adversary").at("victim_digest"),
            sha256_file(root_ / "victim" / "victim.apol"));
}

TEST_F(Pipeline, NoPlotsSkipsFigures) {
  ASSERT_EQ(adversary_.code, 0) << adversary_.err;
  const fs::path dir = root_ / "adversary_noplots";
  const auto r = run("train-adversary -q --no-plots --config " + config_.string() + " --out " + dir.string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_FALSE(fs::exists(dir / "curve.svg"));
  EXPECT_TRUE(fs::exists(dir / "curve.csv"));
}

TEST_F(Pipeline, WrongSideVictimIsRejected) {
  ASSERT_EQ(victim_.code, 0) << victim_.err;
  const auto r = run("train-adversary -q --config " + config_.string() + " --victim " +
                     (root_ / "victim" / "opponent.apol").string() + " --out " + (root_ / "wrong").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("side"), std::string::npos) << r.err;
}

TEST_F(Pipeline, EvaluateIsReproducible) {
  ASSERT_EQ(adversary_.code, 0) << adversary_.err;
  const std::string c = "evaluate -q --config " + config_.string();
  ASSERT_EQ(run(c + " --out " + (root_ / "eval1").string()).code, 0);
  ASSERT_EQ(run(c + " --out " + (root_ / "eval2").string()).code, 0);
  EXPECT_EQ(sha256_file(root_ / "eval1" / "grid.csv"), sha256_file(root_ / "eval2" / "grid.csv"));
  const auto rows = io::parse_csv(io::read_text(root_ / "eval1" / "grid.csv"));
  EXPECT_EQ(rows.rows.size(), 2u * 4);  // two mask variants, four opponents
  const auto grid = nlohmann::json::parse(io::read_text(root_ / "eval1" / "grid.json"));
  EXPECT_EQ(grid.at("n_episodes"), 40);
}

TEST_F(Pipeline, AnalyzeWritesReportBundle) {
  ASSERT_EQ(adversary_.code, 0) << adversary_.err;
  const fs::path dir = root_ / "analysis";
  const auto r = run("analyze -q --config " + config_.string() + " --opponent Zero=zero --out " + dir.string());
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"likelihood.csv", "selection.csv", "tsne.csv", "dispersion.csv", "report.json",
                        "likelihood.svg", "tsne.svg"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  const auto lik = io::parse_csv(io::read_text(dir / "likelihood.csv"));
  EXPECT_EQ(lik.rows.size(), 3u);  // validation plus Adv and Zero probes
  const auto sel = io::parse_csv(io::read_text(dir / "selection.csv"));
  EXPECT_EQ(sel.rows.size(), 4u);
  EXPECT_EQ(run("analyze -q --config " + config_.string() + " --opponent Zero --out " + dir.string()).code, 2);
}
