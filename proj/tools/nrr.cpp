// nrr: dataset generation, training, evaluation, inference, ablation and
// benchmarking from one binary.
//
// Exit status: 0 success, 1 runtime error, 2 usage or configuration error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "nrr/config.hpp"
#include "nrr/dataset.hpp"
#include "nrr/evalkit.hpp"
#include "nrr/png_io.hpp"
#include "nrr/synth.hpp"
#include "nrr/trainkit.hpp"
#include "nrr/unet.hpp"

namespace fs = std::filesystem;
using namespace nrr;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

// Thrown for bad flags that CLI11 cannot catch on its own.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::string config_path;
  std::vector<std::string> overrides;
};

RunConfig resolve_config(const Globals& g) {
  RunConfig c = g.config_path.empty() ? RunConfig{} : load_config(g.config_path);
  for (const auto& kv : g.overrides) apply_override(c, kv);
  c.percept.weights_path = resolve_weights_path(c.percept.weights_path);
  try {
    c.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
  return c;
}

void write_snapshot(const fs::path& out, const RunConfig& c) {
  fs::create_directories(out);
  std::ofstream f(out / "resolved_config.txt");
  f << to_text(c);
  if (!f) throw IoError("cannot write " + (out / "resolved_config.txt").string());
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  f << text;
  if (!f) throw IoError("cannot write " + p.string());
}

void log(const std::string& msg) { std::cerr << "nrr: " << msg << "\n"; }

Model<float> load_model(const std::string& path, RunConfig& c) {
  CheckpointInfo info;
  const fs::path file = resolve_checkpoint(path);
  auto m = load_checkpoint<float>(file, nullptr, &info);
  c.arch = info.arch;
  log("loaded " + file.string());
  return m;
}

Image<float> load_rgb(const fs::path& p) {
  Image<float> im = io::read_png<float>(p);
  if (im.channels() == 3) return im;
  Image<float> rgb(im.height(), im.width(), 3);
  for (int y = 0; y < im.height(); ++y)
    for (int x = 0; x < im.width(); ++x)
      for (int k = 0; k < 3; ++k) rgb(y, x, k) = im(y, x, im.channels() < 3 ? 0 : k);
  return rgb;
}

// Nearest-neighbour resize to an integer multiple of the source size.
Image<float> upscale_to(const Image<float>& im, int h, int w) {
  if (im.height() == h && im.width() == w) return im;
  Image<float> out(h, w, im.channels());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < im.channels(); ++k)
        out(y, x, k) = im(y * im.height() / h, x * im.width() / w, k);
  return out;
}

Image<float> gray_to_rgb(const Mask<float>& m) {
  Image<float> out(m.height(), m.width(), 3);
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x)
      for (int k = 0; k < 3; ++k) out(y, x, k) = std::clamp(m(y, x), 0.0f, 1.0f);
  return out;
}

// Rows of equally sized tiles, laid out left to right.
Image<float> tile(const std::vector<std::vector<Image<float>>>& rows) {
  const int th = rows[0][0].height(), tw = rows[0][0].width();
  int cols = 0;
  for (const auto& r : rows) cols = std::max<int>(cols, static_cast<int>(r.size()));
  Image<float> g(th * static_cast<int>(rows.size()), tw * cols, 3);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      for (int y = 0; y < th; ++y)
        for (int x = 0; x < tw; ++x)
          for (int k = 0; k < 3; ++k) g(static_cast<int>(r) * th + y, static_cast<int>(c) * tw + x, k) = rows[r][c](y, x, k);
  return g;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

// ---------------------------------------------------------------------------
// Subcommands

struct GenDataArgs {
  std::string out, source;
  int subjects = 4, sequences = 5, frames = 10, size = 64;
  double label_noise = 0.0;
  std::uint64_t scene_seed = 7;
};

int run_gen_data(const Globals& g, const GenDataArgs& a) {
  RunConfig c = resolve_config(g);
  const fs::path out(a.out);
  if (fs::exists(out / "manifest.json")) throw IoError("dataset already exists at " + out.string());
  write_snapshot(out, c);
  fs::path src(a.source);
  if (src.empty()) {
    synth::SceneConfig sc;
    sc.subjects = a.subjects;
    sc.sequences = a.sequences;
    sc.frames = a.frames;
    sc.height = sc.width = a.size;
    sc.seed = a.scene_seed;
    sc.label_noise = a.label_noise;
    src = out / "source";
    log("rendering " + std::to_string(a.subjects * a.sequences * a.frames) + " synthetic frames");
    synth::write_source_tree(src, sc);
  }
  const auto manifest = build_dataset(src, out, c.data);
  for (const char* s : {"train", "test_seen", "test_unseen"})
    log(std::string(s) + ": " + std::to_string(manifest.at("splits").at(s).size()) + " frames");
  return 0;
}

struct TrainArgs {
  std::string data, out;
  long steps = -1;
};

int run_train(const Globals& g, const TrainArgs& a) {
  RunConfig c = resolve_config(g);
  if (a.steps >= 0) c.train.max_steps = a.steps;
  write_snapshot(a.out, c);
  const auto ds = load_split<float>(a.data, Split::train);
  if (ds.size() == 0) throw ValidationError("train split of " + a.data + " is empty");
  const FeatureExtractor<float> fx(c.percept);
  log("training on " + std::to_string(ds.size()) + " frames for " + std::to_string(c.train.max_steps) + " steps");
  TrainHooks hooks;
  const long every = std::max<long>(1, c.train.max_steps / 10);
  hooks.on_step = [&](long step, const LossBreakdown& b) {
    if (step % every == 0 || step == c.train.max_steps)
      log("step " + std::to_string(step) + " loss " + std::to_string(b.total));
  };
  const auto r = train(ds, c.arch, c.loss, c.train, fx, a.out, hooks);
  log("wrote " + r.last_checkpoint.string());
  return 0;
}

struct EvalArgs {
  std::string data, checkpoint, out, split = "test_seen", label = "proposed";
};

int run_eval(const Globals& g, const EvalArgs& a) {
  RunConfig c = resolve_config(g);
  const Split split = parse_split(a.split);
  const auto model = load_model(a.checkpoint, c);
  write_snapshot(a.out, c);
  const auto ds = load_split<float>(a.data, split);
  if (ds.size() == 0) throw ValidationError(a.split + " split of " + a.data + " is empty");
  const FeatureExtractor<float> fx(c.percept);
  MetricsReport r;
  r.percept_profile = c.percept.profile;
  r.columns.push_back(evaluate(model, ds, fx, a.split, a.label, c.eval));
  r.columns.push_back(evaluate_inputs(ds, fx, a.split, c.eval));
  write_file(fs::path(a.out) / "metrics.csv", to_csv(r));
  write_file(fs::path(a.out) / "metrics.json", to_json(r).dump(2) + "\n");
  const auto pm = r.columns[0].aggregate(), im = r.columns[1].aggregate();
  log("psnr " + std::to_string(pm.psnr_db) + " dB (rendered input " + std::to_string(im.psnr_db) + " dB) over " +
      std::to_string(ds.size()) + " frames");
  return 0;
}

struct InferArgs {
  std::string checkpoint, left, right, out;
};

int run_infer(const Globals& g, const InferArgs& a) {
  RunConfig c = resolve_config(g);
  const auto model = load_model(a.checkpoint, c);
  const fs::path out(a.out);
  write_snapshot(out, c);
  std::vector<std::pair<std::string, fs::path>> eyes = {{"left", a.left}};
  if (!a.right.empty()) eyes.emplace_back("right", a.right);
  std::vector<std::vector<Image<float>>> rows;
  for (const auto& [eye, path] : eyes) {
    const Image<float> in = load_rgb(path);
    if (in.height() % 16 || in.width() % 16)
      throw DimensionError(path.string() + ": size " + std::to_string(in.height()) + "x" + std::to_string(in.width()) +
                           " is not a multiple of 16");
    const auto p = forward(model, in);
    const Image<float> rgb = clamp01(p.rgb);
    const Mask<float> soft(clamp01(p.mask.image()));
    const Mask<float> hard = soft.binarized();
    const Image<float> composite = compose(rgb, soft);
    io::write_png(out / (eye + "_pred.png"), rgb);
    io::write_png(out / (eye + "_mask.png"), soft);
    io::write_png(out / (eye + "_mask_binary.png"), hard);
    io::write_png(out / (eye + "_composite.png"), composite);
    rows.push_back({upscale_to(in, rgb.height(), rgb.width()), rgb, gray_to_rgb(soft), composite});
  }
  io::write_png(out / "grid.png", tile(rows));
  log("wrote " + std::to_string(4 * eyes.size()) + " images and grid.png to " + out.string());
  return 0;
}

struct AblateArgs {
  std::string data, out, variants, splits = "test_seen,test_unseen";
};

int run_ablate(const Globals& g, const AblateArgs& a) {
  RunConfig c = resolve_config(g);
  std::vector<Variant> variants;
  try {
    for (const auto& v : split_list(a.variants)) variants.push_back(parse_variant(v));
  } catch (const ValidationError& e) {
    throw UsageError(e.what());
  }
  if (a.variants.empty()) variants = all_variants();
  write_snapshot(a.out, c);
  const auto train_ds = load_split<float>(a.data, Split::train);
  std::vector<Dataset<float>> held;
  std::vector<std::string> names;
  for (const auto& s : split_list(a.splits)) {
    auto ds = load_split<float>(a.data, parse_split(s));
    if (ds.size() == 0) {
      log("skipping empty split " + s);
      continue;
    }
    held.push_back(std::move(ds));
    names.push_back(s);
  }
  if (held.empty()) throw ValidationError("no non-empty evaluation split in " + a.data);
  std::vector<NamedSplit> eval;
  for (std::size_t i = 0; i < held.size(); ++i) eval.push_back({names[i], &held[i]});
  const FeatureExtractor<float> fx(c.percept);
  const AblationSetup setup{c.arch, c.loss, c.train, c.eval};
  const auto r = ablation_run(train_ds, eval, setup, variants, fx, a.out, [](const std::string& m) { log(m); });
  write_file(fs::path(a.out) / "ablation.csv", to_csv(r));
  write_file(fs::path(a.out) / "ablation.json", to_json(r).dump(2) + "\n");
  write_file(fs::path(a.out) / "table.csv", to_table_csv(r));
  return 0;
}

struct BenchArgs {
  std::string checkpoint, out;
  int height = 256, width = 256, reps = 5;
};

int run_bench(const Globals& g, const BenchArgs& a) {
  RunConfig c = resolve_config(g);
  const Model<float> model = a.checkpoint.empty() ? build<float>(c.arch) : load_model(a.checkpoint, c);
  if (a.height % 16 || a.width % 16) throw UsageError("--height and --width must be multiples of 16");
  write_snapshot(a.out, c);
  const auto r = bench_forward(model, a.height, a.width, a.reps);
  write_file(fs::path(a.out) / "bench.json", to_json(r).dump(2) + "\n");
  std::ostringstream s;
  s.precision(4);
  s << "forward " << r.total_ms << " ms, stereo pair " << r.stereo_pair_ms << " ms; encoder " << r.encoder_percent
    << "%, bottleneck " << r.bottleneck_percent << "%, decoder " << r.decoder_percent << "%";
  log(s.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Enhances degraded renderings of people into clean images plus a foreground mask.\n"
               "Environment: NRR_WEIGHTS_DIR resolves relative percept.weights paths."};
  app.require_subcommand(1);
  Globals g;
  app.add_option("-c,--config", g.config_path, "key = value config file")->check(CLI::ExistingFile);
  app.add_option("-s,--set", g.overrides, "override one config key (key=value, repeatable)");

  std::function<int()> run;

  GenDataArgs gd;
  auto* gen = app.add_subcommand("gen-data", "build a dataset from a source tree or from synthetic scenes");
  gen->add_option("-o,--out", gd.out, "dataset directory")->required();
  gen->add_option("--source", gd.source, "source tree <subject>/<sequence>/<frame>.png (synthetic if omitted)");
  gen->add_option("--subjects", gd.subjects, "synthetic subjects")->check(CLI::PositiveNumber);
  gen->add_option("--sequences", gd.sequences, "synthetic sequences per subject")->check(CLI::PositiveNumber);
  gen->add_option("--frames", gd.frames, "synthetic frames per sequence")->check(CLI::PositiveNumber);
  gen->add_option("--size", gd.size, "synthetic frame height and width")->check(CLI::PositiveNumber);
  gen->add_option("--label-noise", gd.label_noise, "synthetic segmentation label noise")->check(CLI::Range(0.0, 1.0));
  gen->add_option("--scene-seed", gd.scene_seed, "synthetic scene seed");
  gen->callback([&] { run = [&] { return run_gen_data(g, gd); }; });

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "train a model on the train split");
  tr->add_option("-d,--data", ta.data, "dataset directory")->required();
  tr->add_option("-o,--out", ta.out, "run directory (log, checkpoints)")->required();
  tr->add_option("--steps", ta.steps, "override train.max_steps")->check(CLI::NonNegativeNumber);
  tr->callback([&] { run = [&] { return run_train(g, ta); }; });

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "score a checkpoint and the rendered input on one split");
  ev->add_option("-d,--data", ea.data, "dataset directory")->required();
  ev->add_option("-k,--checkpoint", ea.checkpoint, "checkpoint file or run directory")->required();
  ev->add_option("-o,--out", ea.out, "report directory")->required();
  ev->add_option("--split", ea.split, "train, test_seen or test_unseen")
      ->check(CLI::IsMember({"train", "test_seen", "test_unseen"}));
  ev->add_option("--label", ea.label, "column name of the model in the report");
  ev->callback([&] { run = [&] { return run_eval(g, ea); }; });

  InferArgs ia;
  auto* inf = app.add_subcommand("infer", "enhance one frame or a stereo pair");
  inf->add_option("-k,--checkpoint", ia.checkpoint, "checkpoint file or run directory")->required();
  inf->add_option("--left", ia.left, "left (or only) input png")->required()->check(CLI::ExistingFile);
  inf->add_option("--right", ia.right, "right input png")->check(CLI::ExistingFile);
  inf->add_option("-o,--out", ia.out, "output directory")->required();
  inf->callback([&] { run = [&] { return run_infer(g, ia); }; });

  AblateArgs aa;
  auto* ab = app.add_subcommand("ablate", "train and score every loss variant");
  ab->add_option("-d,--data", aa.data, "dataset directory")->required();
  ab->add_option("-o,--out", aa.out, "output directory")->required();
  ab->add_option("--variants", aa.variants,
                 "comma list of proposed,-head,-mask,-saliency,-stereo,-temporal (default all)");
  ab->add_option("--splits", aa.splits, "comma list of evaluation splits");
  ab->callback([&] { run = [&] { return run_ablate(g, aa); }; });

  BenchArgs ba;
  auto* be = app.add_subcommand("bench", "time forward passes per network block");
  be->add_option("-k,--checkpoint", ba.checkpoint, "checkpoint (default: untrained model from the config)");
  be->add_option("-o,--out", ba.out, "output directory")->required();
  be->add_option("--height", ba.height, "input height")->check(CLI::PositiveNumber);
  be->add_option("--width", ba.width, "input width")->check(CLI::PositiveNumber);
  be->add_option("--reps", ba.reps, "timed repetitions")->check(CLI::PositiveNumber);
  be->callback([&] { run = [&] { return run_bench(g, ba); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }
  try {
    return run();
  } catch (const ConfigError& e) {
    std::cerr << "nrr: config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "nrr: usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "nrr: error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
