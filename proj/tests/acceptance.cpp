// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance            run all nine
//   acceptance 5 7        run a subset
//
// Exit status is 0 only when every selected criterion passes.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "nrr/config.hpp"
#include "nrr/dataset.hpp"
#include "nrr/evalkit.hpp"
#include "nrr/synth.hpp"
#include "nrr/trainkit.hpp"
#include "support/loss_cases.hpp"
#include "support/saliency_oracle.hpp"

using namespace nrr;
namespace fs = std::filesystem;

namespace {

const fs::path kCli = NRR_CLI_PATH;
const fs::path kFixture = NRR_FIXTURE_DIR;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("nrr_accept_" + name);
  fs::remove_all(p);
  return p;
}

void note(const std::string& s) { std::cerr << "  .. " << s << std::endl; }

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

/// Renders a synthetic source tree and builds a dataset from it.
fs::path make_dataset(const std::string& name, const synth::SceneConfig& sc, const DatasetConfig& dc) {
  const fs::path root = scratch(name);
  synth::write_source_tree(root / "source", sc);
  build_dataset(root / "source", root / "data", dc);
  return root / "data";
}

/// Desk-scale run configuration shared by the training criteria.
RunConfig desk(std::uint64_t seed, long steps) {
  RunConfig c;
  c.arch.n_init = 16;
  c.arch.seed = seed;
  c.train.seed = seed;
  c.train.max_steps = steps;
  c.train.crop_min_h = c.train.crop_min_w = c.train.crop_max_h = c.train.crop_max_w = 32;
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

Outcome saliency_oracle() {
  using namespace test_support;
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937 g(2024);
  int mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    auto r = uniform_image(16, 16, 3, 5000 + trial, -1, 1);
    const int p_min = static_cast<int>(g() % 60), p_max = p_min + 1 + static_cast<int>(g() % (100 - p_min));
    const SaliencyConfig cfg{static_cast<double>(p_min), static_cast<double>(p_max)};
    std::vector<std::vector<double>> ch(3, std::vector<double>(256));
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x)
        for (int c = 0; c < 3; ++c) ch[c][y * 16 + x] = r(y, x, c);
    const auto y = oracle_pixel_l1(ch);
    const double lo = oracle_percentile(y, p_min), hi = oracle_percentile(y, p_max);
    const auto w = saliency_weights(r, cfg);
    bool same = reweighted_norm(r, cfg) == oracle_band_sum(y, p_min, p_max);
    for (std::size_t i = 0; i < y.size(); ++i) same &= w.data()[i] == ((y[i] >= lo && y[i] <= hi) ? 1.0 : 0.0);
    mismatches += !same;
  }
  const auto grid = grid_1_to_100();
  const float band = reweighted_norm(grid, SaliencyConfig{50, 98});
  const float full = reweighted_norm(grid, SaliencyConfig{0, 100});
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {mismatches == 0 && band == 3626.f && full == 5050.f && secs < 10.0,
          fmt("%d/100 random mismatches, grid (50,98)=%.0f (0,100)=%.0f, %.2fs", mismatches, band, full, secs)};
}

Outcome gradient_checks() {
  using namespace test_support;
  const auto t0 = std::chrono::steady_clock::now();
  FeatureExtractor<double> fx;
  LossConfig cfg;
  const double e_warp = grad_error_warp(), e_mask = grad_error_mask(cfg), e_temp = grad_error_temporal(cfg),
               e_st = grad_error_stereo(cfg), e_rec = grad_error_rec(fx, cfg), e_head = grad_error_head(fx, cfg);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool ok = e_warp < 1e-4 && e_mask < 1e-4 && e_temp < 1e-4 && e_st < 1e-4 && e_rec < 1e-3 && e_head < 1e-3 &&
                  secs < 120.0;
  return {ok, fmt("max rel err warp %.1e mask %.1e temporal %.1e stereo %.1e rec %.1e head %.1e, %.1fs", e_warp, e_mask,
                  e_temp, e_st, e_rec, e_head, secs)};
}

Outcome architecture() {
  std::vector<std::string> problems;
  for (int n0 : {16, 32})
    for (int extra : {0, 1}) {
      ArchConfig a;
      a.n_init = n0;
      a.extra_upsample_blocks = extra;
      const auto m = build<float>(a);
      for (int level = 1; level <= 4; ++level)
        if (m.layer("down" + std::to_string(level) + ".a").shape.out != a.filters(level))
          problems.push_back(fmt("n_init %d level %d width", n0, level));
      for (auto [h, w] : {std::pair{32, 32}, std::pair{48, 64}}) {
        Image<float> in(h, w, 3, 0.5f);
        const auto [l, r] = forward_stereo(m, in, in);
        const int oh = h << extra, ow = w << extra;
        if (l.rgb.height() != oh || l.rgb.width() != ow || l.rgb.channels() != 3 || l.mask.height() != oh ||
            l.mask.width() != ow || !(r.rgb == l.rgb))
          problems.push_back(fmt("n_init %d extra %d output %dx%d", n0, extra, l.rgb.height(), l.rgb.width()));
      }
    }
  ArchConfig a32;
  a32.n_init = 32;
  a32.growth = 2;
  const auto m32 = build<float>(a32);
  std::string ramp;
  for (int level = 1; level <= 4; ++level) ramp += (level > 1 ? "/" : "") + std::to_string(m32.layer("down" + std::to_string(level) + ".a").shape.out);
  if (ramp != "64/128/256/512") problems.push_back("ramp " + ramp);
  std::string d = "n_init {16,32} x extra {0,1} shapes ok, ramp " + ramp;
  if (!problems.empty()) d = problems.front() + (problems.size() > 1 ? fmt(" (+%zu more)", problems.size() - 1) : "");
  return {problems.empty(), d};
}

Outcome trivial_zeros() {
  using test_support::uniform_image;
  using test_support::uniform_mask;
  FeatureExtractor<double> fx;
  LossConfig cfg;
  cfg.head_crop_size = 32;
  const auto im = uniform_image(32, 32, 3, 1), other = uniform_image(32, 32, 3, 2);
  const auto m = uniform_mask(32, 32, 3);
  const double rec = loss_rec(im, m, im, m, fx, cfg);
  const double mask = loss_mask(m, m, cfg);
  const auto seg = test_support::head_segmentation(32, 32, Rect{8, 2, 12, 10});
  const double head = *loss_head(im, m, im, m, seg, fx, cfg);
  // matched temporal gradients: both sequences move by the same dyadic step
  auto dy = [](Image<double> x, double d) {
    for (auto& v : x.data()) v = std::round(v * 256) / 256 + d;
    return x;
  };
  const double temporal = loss_temporal(dy(im, 0.25), dy(im, 0), dy(other, 0.25), dy(other, 0), cfg);
  const auto field = WarpField::shift(32, 32, 3, 0);
  const auto right = uniform_image(32, 32, 3, 4);
  const auto st = loss_stereo(warp(right, field).image, right, field, cfg);
  const bool ok = rec == 0.0 && mask == 0.0 && head == 0.0 && temporal == 0.0 && st.value == 0.0 && !st.empty;
  return {ok, fmt("rec %g mask %g head %g temporal %g stereo %g", rec, mask, head, temporal, st.value)};
}

Outcome training_gain() {
  const auto t0 = std::chrono::steady_clock::now();
  synth::SceneConfig sc;
  sc.subjects = 4;
  sc.sequences = 5;
  sc.frames = 10;
  DatasetConfig dc;  // holes 10%, noise 0.05, downsample x2, colour jitter
  const fs::path data = make_dataset("gain", sc, dc);
  const auto tr = load_split<float>(data, Split::train), seen = load_split<float>(data, Split::test_seen);
  const std::size_t total = tr.size() + seen.size() + load_split<float>(data, Split::test_unseen).size();
  note(fmt("dataset %zu frames, train %zu, test_seen %zu", total, tr.size(), seen.size()));
  FeatureExtractor<float> fx;
  const double input_psnr = evaluate_inputs(seen, fx, "test_seen").aggregate().psnr_db;
  int wins = 0;
  std::string per_seed;
  for (std::uint64_t seed : {1, 2, 3}) {
    const RunConfig c = desk(seed, 400);
    const auto r = train(tr, c.arch, c.loss, c.train, fx);
    const double p = evaluate(r.model, seen, fx, "test_seen").aggregate().psnr_db;
    note(fmt("seed %llu: %.3f dB vs rendered_input %.3f dB", static_cast<unsigned long long>(seed), p, input_psnr));
    wins += p - input_psnr >= 1.0;
    per_seed += fmt(" %+.2f", p - input_psnr);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {total >= 200 && wins >= 2 && secs <= 6 * 3600.0,
          fmt("%zu frames, 400 steps, gain over rendered_input (%.2f dB) per seed:%s dB, %d/3 >= 1 dB, %.0fs", total,
              input_psnr, per_seed.c_str(), wins, secs)};
}

Outcome ablation() {
  const fs::path root = scratch("ablation");
  build_dataset(kFixture, root / "data", DatasetConfig{});
  const auto tr = load_split<float>(root / "data", Split::train);
  const auto seen = load_split<float>(root / "data", Split::test_seen);
  const auto unseen = load_split<float>(root / "data", Split::test_unseen);
  FeatureExtractor<float> fx;
  const RunConfig c = desk(1, 300);
  const AblationSetup setup{c.arch, c.loss, c.train, c.eval};
  const auto report = ablation_run(tr, {{"test_seen", &seen}, {"test_unseen", &unseen}}, setup, all_variants(), fx,
                                   root / "runs", [](const std::string& m) { note(m); });
  fs::create_directories(root / "report");
  std::ofstream(root / "report" / "table.csv") << to_table_csv(report);
  const std::vector<std::string> expect = {"proposed", "-head", "-mask", "-saliency", "-stereo", "-temporal",
                                           kRenderedInput};
  const bool structure = report.variants() == expect && report.columns.size() == 14;
  auto pooled = [&](const std::string& v) {
    double s = 0;
    std::size_t n = 0;
    for (const char* split : {"test_seen", "test_unseen"})
      for (const auto& m : report.find(v, split)->samples) {
        s += m.boundary_l1;
        ++n;
      }
    return s / static_cast<double>(n);
  };
  const double prop = pooled("proposed"), nosal = pooled("-saliency");
  note(fmt("boundary l1 per split: proposed %.4f/%.4f, -saliency %.4f/%.4f",
           report.find("proposed", "test_seen")->aggregate().boundary_l1,
           report.find("proposed", "test_unseen")->aggregate().boundary_l1,
           report.find("-saliency", "test_seen")->aggregate().boundary_l1,
           report.find("-saliency", "test_unseen")->aggregate().boundary_l1));
  return {structure && nosal > prop,
          fmt("%s 7 columns; boundary-band l1 -saliency %.4f vs proposed %.4f (table %s)", structure ? "" : "NOT", nosal,
              prop, (root / "report" / "table.csv").c_str())};
}

Outcome consistency() {
  synth::SceneConfig sc;
  sc.subjects = 3;
  sc.sequences = 3;
  sc.frames = 8;
  DatasetConfig dc;
  dc.degradation.flicker_amplitude = 0.2;
  const fs::path data = make_dataset("flicker", sc, dc);
  const auto tr = load_split<float>(data, Split::train), seen = load_split<float>(data, Split::test_seen);
  FeatureExtractor<float> fx;
  RunConfig with = desk(1, 400), without = desk(1, 400);
  without.loss.w_temporal = 0.0;
  without.loss.w_stereo = 0.0;
  const auto a = evaluate(train(tr, with.arch, with.loss, with.train, fx).model, seen, fx, "test_seen").aggregate();
  const auto b =
      evaluate(train(tr, without.arch, without.loss, without.train, fx).model, seen, fx, "test_seen").aggregate();
  return {a.temporal_residual < b.temporal_residual && a.stereo_residual < b.stereo_residual,
          fmt("held-out temporal residual %.5f vs %.5f, stereo residual %.5f vs %.5f (w4,w5 > 0 vs 0; %zu train, %zu "
              "test frames)",
              a.temporal_residual, b.temporal_residual, a.stereo_residual, b.stereo_residual, tr.size(), seen.size())};
}

Outcome determinism() {
  std::vector<std::string> problems;
  const fs::path root = scratch("determinism");
  build_dataset(kFixture, root / "data_a", DatasetConfig{});
  build_dataset(kFixture, root / "data_b", DatasetConfig{});
  const auto ta = tree(root / "data_a");
  if (ta != tree(root / "data_b")) problems.push_back("dataset builds differ");

  const auto ds = load_split<float>(root / "data_a", Split::train);
  FeatureExtractor<float> fx;
  RunConfig c = desk(9, 6);
  c.arch.n_init = 8;
  const auto ra = train(ds, c.arch, c.loss, c.train, fx, root / "run_a");
  const auto rb = train(ds, c.arch, c.loss, c.train, fx, root / "run_b");
  if (slurp(root / "run_a" / "train_log.csv") != slurp(root / "run_b" / "train_log.csv"))
    problems.push_back("training logs differ");

  const fs::path ck = resolve_checkpoint(root / "run_a");
  const auto loaded = load_checkpoint<float>(ck);
  if (!(loaded == ra.model)) problems.push_back("checkpoint load differs from trained model");
  save_checkpoint(root / "resaved.nrrt", loaded, nlohmann::json{{"step", 6}, {"seed", 9}, {"loss_weights", nullptr}});
  save_checkpoint(root / "resaved_b.nrrt", rb.model, nlohmann::json{{"step", 6}, {"seed", 9}, {"loss_weights", nullptr}});
  if (slurp(root / "resaved.nrrt") != slurp(root / "resaved_b.nrrt")) problems.push_back("re-saved checkpoints differ");

  return {problems.empty(), problems.empty() ? fmt("%zu dataset files identical, 6-step logs identical, checkpoint "
                                                   "round trip bit-exact",
                                                   ta.size())
                                             : problems.front()};
}

int sh(const std::string& args, const fs::path& log) {
  const std::string cmd = kCli.string() + " " + args + " >>" + log.string() + " 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

Outcome end_to_end() {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path root = scratch("e2e"), log = root / "log.txt";
  fs::create_directories(root);
  const fs::path data = root / "data", run = root / "run";
  const fs::path frame = data / "test_seen" / "subject00" / "seq01" / "0002";
  const std::vector<std::pair<std::string, std::string>> steps = {
      {"gen-data", "gen-data --source " + kFixture.string() + " --out " + data.string()},
      {"train", "train --data " + data.string() + " --out " + run.string() + " --steps 200"},
      {"eval", "eval --data " + data.string() + " --checkpoint " + run.string() + " --out " + (root / "eval").string()},
      {"infer", "infer --checkpoint " + run.string() + " --left " + frame.string() + ".input_l.png --right " +
                    frame.string() + ".input_r.png --out " + (root / "infer").string()}};
  for (const auto& [name, args] : steps) {
    const int code = sh(args, log);
    if (code != 0) return {false, fmt("%s exited with %d (log %s)", name.c_str(), code, log.c_str())};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool files = fs::exists(run / "checkpoints" / checkpoint_name(200)) && fs::exists(root / "eval" / "metrics.csv") &&
                     fs::exists(root / "infer" / "grid.png");
  return {files && secs < 600.0, fmt("gen-data, train 200 steps, eval, infer exit 0 in %.0fs%s", secs,
                                     files ? "" : " but outputs are missing")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"saliency oracle equivalence", saliency_oracle},
      {"gradient checks", gradient_checks},
      {"architecture contract", architecture},
      {"trivial-zero identities", trivial_zeros},
      {"desk-scale training gain", training_gain},
      {"ablation harness", ablation},
      {"temporal/stereo consistency direction", consistency},
      {"determinism and round trips", determinism},
      {"end-to-end smoke", end_to_end},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[i].first << "): " << o.detail
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
