#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace fs = std::filesystem;

namespace {

const fs::path kCli = NRR_CLI_PATH;
const fs::path kFixture = NRR_FIXTURE_DIR;

int run(const std::string& args, const fs::path& log = fs::temp_directory_path() / "nrr_cli_log.txt") {
  const std::string cmd = kCli.string() + " " + args + " >" + log.string() + " 2>&1";
  const int st = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(st));
  return WEXITSTATUS(st);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> m;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) m[fs::relative(e.path(), root).string()] = slurp(e.path());
  return m;
}

std::set<std::string> names(const fs::path& dir) {
  std::set<std::string> s;
  for (const auto& e : fs::directory_iterator(dir)) s.insert(e.path().filename().string());
  return s;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("nrr_cli_" + name);
  fs::remove_all(p);
  return p;
}

// Small dataset and a freshly initialised checkpoint shared by the tests below.
struct Setup {
  fs::path data, run_dir;
  Setup() {
    data = scratch("data");
    run_dir = scratch("run");
    REQUIRE(run("gen-data --source " + kFixture.string() + " --out " + data.string()) == 0);
    REQUIRE(run("--set arch.n_init=4 train --data " + data.string() + " --out " + run_dir.string() + " --steps 0") == 0);
  }
};

const Setup& setup() {
  static const Setup s;
  return s;
}

}  // namespace

TEST_CASE("help lists every subcommand") {
  const fs::path log = fs::temp_directory_path() / "nrr_cli_help.txt";
  REQUIRE(run("--help", log) == 0);
  const std::string text = slurp(log);
  for (const char* sub : {"gen-data", "train", "eval", "infer", "ablate", "bench"}) CHECK(text.find(sub) != std::string::npos);
}

TEST_CASE("usage and configuration errors exit with 2") {
  CHECK(run("frobnicate") == 2);
  CHECK(run("") == 2);
  CHECK(run("train --data x") == 2);
  CHECK(run("--set arch.n_inti=8 bench --out " + scratch("bad1").string()) == 2);
  CHECK(run("--set arch.n_init=eight bench --out " + scratch("bad2").string()) == 2);
  const fs::path cfg = fs::temp_directory_path() / "nrr_cli_bad.cfg";
  std::ofstream(cfg) << "arch.n_init = 16\nnot a pair\n";
  CHECK(run("--config " + cfg.string() + " bench --out " + scratch("bad3").string()) == 2);
  CHECK(run("--set train.crop_min_h=40 bench --out " + scratch("bad4").string()) == 2);
  CHECK(run("ablate --data x --out y --variants proposed,-nothing") == 2);
}

TEST_CASE("runtime failures exit with 1") {
  CHECK(run("eval --data /nonexistent --checkpoint /nonexistent --out " + scratch("rt1").string()) == 1);
  const fs::path frame = fs::temp_directory_path() / "nrr_cli_frame.png";
  fs::copy_file(kFixture / "subject00" / "seq00" / "0000.png", frame, fs::copy_options::overwrite_existing);
  CHECK(run("infer --checkpoint /nonexistent --left " + frame.string() + " --out " + scratch("rt2").string()) == 1);
}

TEST_CASE("dataset builds are byte-identical") {
  const auto a = scratch("gen_a"), b = scratch("gen_b");
  REQUIRE(run("gen-data --source " + kFixture.string() + " --out " + a.string()) == 0);
  REQUIRE(run("gen-data --source " + kFixture.string() + " --out " + b.string()) == 0);
  const auto ta = tree(a), tb = tree(b);
  CHECK(ta.size() > 40);
  CHECK(ta == tb);
  CHECK(ta.count("manifest.json"));
  CHECK(ta.count("resolved_config.txt"));
}

TEST_CASE("infer writes the file contract and reruns byte-identically") {
  const auto& s = setup();
  const fs::path left = s.data / "test_seen" / "subject00" / "seq01" / "0001.input_l.png";
  const fs::path right = s.data / "test_seen" / "subject00" / "seq01" / "0001.input_r.png";

  const auto mono = scratch("infer_mono");
  REQUIRE(run("infer --checkpoint " + s.run_dir.string() + " --left " + left.string() + " --out " + mono.string()) == 0);
  CHECK(names(mono) == std::set<std::string>{"left_pred.png", "left_mask.png", "left_mask_binary.png",
                                             "left_composite.png", "grid.png", "resolved_config.txt"});

  const auto st = scratch("infer_stereo"), again = scratch("infer_again");
  const std::string args = "infer --checkpoint " + s.run_dir.string() + " --left " + left.string() + " --right " + right.string();
  REQUIRE(run(args + " --out " + st.string()) == 0);
  REQUIRE(run(args + " --out " + again.string()) == 0);
  auto files = names(st);
  files.erase("resolved_config.txt");
  CHECK(files.size() == 9);
  CHECK(files.count("right_composite.png"));
  CHECK(tree(st) == tree(again));
}

TEST_CASE("eval leaves its inputs untouched and writes reports") {
  const auto& s = setup();
  const auto before = tree(s.data), ckpt_before = tree(s.run_dir);
  const auto out = scratch("eval");
  REQUIRE(run("eval --data " + s.data.string() + " --checkpoint " + s.run_dir.string() + " --out " + out.string()) == 0);
  CHECK(tree(s.data) == before);
  CHECK(tree(s.run_dir) == ckpt_before);
  const std::string csv = slurp(out / "metrics.csv");
  CHECK(csv.find("rendered_input") != std::string::npos);
  CHECK(csv.find("proposed") != std::string::npos);
  CHECK(fs::exists(out / "metrics.json"));
}

TEST_CASE("a resolved config snapshot replays the run") {
  const auto& s = setup();
  const auto a = scratch("replay_a"), b = scratch("replay_b");
  const std::string common = " train --data " + s.data.string() + " --steps 3 --out ";
  REQUIRE(run("--set arch.n_init=4 --set train.seed=5 --set train.crop_max_h=32 --set train.crop_max_w=32" + common + a.string()) == 0);
  REQUIRE(run("--config " + (a / "resolved_config.txt").string() + common + b.string()) == 0);
  CHECK(slurp(a / "train_log.csv") == slurp(b / "train_log.csv"));
  CHECK(slurp(a / "resolved_config.txt") == slurp(b / "resolved_config.txt"));
  CHECK(slurp(a / "train_log.csv").size() > 40);
}

TEST_CASE("bench writes a timing report") {
  const auto out = scratch("bench");
  REQUIRE(run("--set arch.n_init=4 bench --height 64 --width 64 --reps 2 --out " + out.string()) == 0);
  CHECK(slurp(out / "bench.json").find("encoder_percent") != std::string::npos);
  CHECK(run("bench --height 65 --width 64 --out " + scratch("bench_bad").string()) == 2);
}

TEST_CASE("ablate writes the table for the requested variants") {
  const auto& s = setup();
  const auto out = scratch("ablate");
  REQUIRE(run("--set arch.n_init=4 --set train.max_steps=1 ablate --data " + s.data.string() +
              " --variants proposed,-stereo --out " + out.string()) == 0);
  const std::string table = slurp(out / "table.csv");
  CHECK(table.find("-stereo") != std::string::npos);
  CHECK(table.find("rendered_input") != std::string::npos);
  CHECK(fs::exists(out / "variant_proposed" / "train_log.csv"));
}
