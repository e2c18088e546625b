#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

#include "doctest.h"
#include "json.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};

RunResult run_cli(const std::string& args) {
  std::string cmd = std::string(CIRTF_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  RunResult res;
  char buf[512];
  while (fgets(buf, sizeof(buf), pipe) != nullptr) res.output += buf;
  int status = pclose(pipe);
  res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return res;
}

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("cirtf_cli_" + std::to_string(getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// Tiny end-to-end config: everything flows through in a couple of seconds.
std::string write_config(const fs::path& dir) {
  json j{{"seed", 3},
         {"env",
          {{"width", 10.0},
           {"height", 8.0},
           {"anchors", json::array({json::array({1.0, 1.0}), json::array({9.0, 7.0})})},
           {"l_s", 8},
           {"snr_db", 25.0},
           {"pulse_halfwidth", 3}}},
         {"sim", {{"trajectories", 4}, {"duration", 5.0}, {"speed", 1.2}, {"sample_rate", 4.0}}},
         {"model",
          {{"d_model", 16}, {"n_blocks", 1}, {"n_heads", 2}, {"d_ff", 32}, {"p_drop", 0.1},
           {"conv_kernel", 5}}},
         {"train", {{"batch_size", 8}, {"max_epochs", 2}, {"ft_max_epochs", 2}, {"patience", 2}}},
         {"masking", {{"l_m", 3}}},
         {"eval", {{"arms", json::array({"tf-sc"})}, {"n_values", json::array({4})},
                   {"seeds", json::array({1})}}},
         {"paths",
          {{"dataset", (dir / "data").string()},
           {"checkpoints", (dir / "ck").string()},
           {"reports", (dir / "rep").string()}}}};
  fs::path cfg = dir / "c.json";
  std::ofstream(cfg) << j.dump(2);
  return cfg.string();
}

std::string first_line(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  return line;
}

size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  size_t n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

}  // namespace

TEST_CASE("the subcommands chain into a full pipeline") {
  TempDir tmp;
  std::string cfg = write_config(tmp.path);
  std::string q = "--config " + cfg;

  auto sim = run_cli("sim " + q);
  CHECK(sim.exit_code == 0);
  CHECK(fs::exists(tmp.path / "data" / "manifest.json"));
  CHECK(fs::exists(tmp.path / "data" / "run_meta.json"));

  auto pre = run_cli("pretrain " + q);
  CHECK(pre.exit_code == 0);
  fs::path best = tmp.path / "ck" / "best.ckpt";
  REQUIRE(fs::exists(best));
  std::ifstream ck(best, std::ios::binary);
  char magic[8] = {};
  ck.read(magic, 7);
  CHECK(std::string(magic) == "CIRTF01");
  // one val record per epoch boundary (0..max) plus one train record per epoch
  CHECK(count_lines(tmp.path / "ck" / "train_log.jsonl") == 5);
  json meta = json::parse(std::ifstream(tmp.path / "ck" / "run_meta.json"));
  CHECK(meta["command"] == "pretrain");
  CHECK(meta["config"]["masking"]["p_min"] == 0.3);
  CHECK(meta["formats"]["checkpoint_magic"] == "CIRTF01");

  // tf-sc ignores --checkpoint and trains from a fresh initialization
  auto ft = run_cli("finetune " + q + " --arm tf-sc --checkpoint " + best.string() +
                    " --n-labeled 4 --out " + (tmp.path / "ft").string());
  CHECK(ft.exit_code == 0);
  CHECK(ft.output.find("ignoring --checkpoint") != std::string::npos);
  CHECK(fs::exists(tmp.path / "ft" / "best.ckpt"));

  auto rec = run_cli("reconstruct " + q + " --checkpoint " + best.string() + " --index 3 --out " +
                     (tmp.path / "rep" / "recon.csv").string());
  CHECK(rec.exit_code == 0);
  fs::path csv = tmp.path / "rep" / "recon.csv";
  CHECK(first_line(csv) == "anchor,tap,orig_re,orig_im,masked_flag,recon_re,recon_im");
  CHECK(count_lines(csv) == 1 + 2 * 8);  // header + n_an * l_s rows

  auto ev = run_cli("eval " + q);
  CHECK(ev.exit_code == 0);
  CHECK(first_line(tmp.path / "rep" / "report.csv") == "arm,n_labeled,seed,mean_m,ce90_m");
  CHECK(count_lines(tmp.path / "rep" / "report.csv") == 2);
  CHECK(fs::exists(tmp.path / "rep" / "report.json"));
}

TEST_CASE("exit codes separate usage, config and runtime failures") {
  TempDir tmp;
  std::string cfg = write_config(tmp.path);

  CHECK(run_cli("--help").exit_code == 0);
  CHECK(run_cli("bogus --config " + cfg).exit_code == 1);
  CHECK(run_cli("sim").exit_code == 1);  // missing required --config

  fs::path broken = tmp.path / "broken.json";
  std::ofstream(broken) << "{ \"env\": ";
  CHECK(run_cli("sim --config " + broken.string()).exit_code == 2);
  CHECK(run_cli("sim --config " + (tmp.path / "nope.json").string()).exit_code == 2);

  // dataset directory does not exist -> runtime error
  auto missing = run_cli("pretrain --config " + cfg + " --data " +
                         (tmp.path / "no_data").string());
  CHECK(missing.exit_code == 3);

  // arm that needs a checkpoint but none given -> usage error
  auto nockpt = run_cli("finetune --config " + cfg + " --arm tf-pt");
  CHECK(nockpt.exit_code == 1);
  CHECK(nockpt.output.find("--checkpoint") != std::string::npos);
}
