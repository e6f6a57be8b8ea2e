#include "cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <fstream>
#include <iomanip>
#include <random>

#include "cysgan/config.hpp"
#include "cysgan/histogram.hpp"
#include "svg.hpp"

namespace cysgan::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string output_dir;
};

struct Paths {
  std::string input, labels, bcd, pred, gt, checkpoint, source, reference, resume;
  int count = 1;
  bool plot = false;
};

/// Everything a subcommand needs once the configuration has been resolved.
class Context {
 public:
  Context(ExperimentConfig config, std::string subcommand, std::ostream& out)
      : config_(std::move(config)), sub_(std::move(subcommand)), out_(out), hash_(config_hash(config_)) {}

  const ExperimentConfig& config() const { return config_; }
  std::ostream& out() const { return out_; }
  fs::path root() const { return config_.output_dir; }
  fs::path dir() const { return root() / sub_; }

  /// Creates the subcommand directory and the resolved-config snapshot.
  void begin() const {
    fs::create_directories(dir());
    write_json(dir() / "resolved_config.json",
               {{"version", kVersion}, {"config_hash", hash_}, {"subcommand", sub_}, {"config", to_json(config_)}});
  }

  void write_json(const fs::path& path, const json& j) const {
    std::ofstream f(path);
    f << j.dump(2) << '\n';
    if (!f) throw IoError("cannot write " + path.string());
  }

  void write_text(const fs::path& path, const std::string& text) const {
    std::ofstream f(path);
    f << text;
    if (!f) throw IoError("cannot write " + path.string());
  }

  /// Explicit path, else the configured data entry, else the synth artifact.
  VolumeSpec input(const std::string& explicit_path, const std::optional<VolumeSpec>& configured,
                   const std::string& synth_name, DtypeRole role) const {
    if (!explicit_path.empty()) return VolumeSpec{explicit_path, container_for(explicit_path), "main", role};
    if (configured) return *configured;
    const fs::path p = root() / "synth" / (synth_name + ".h5");
    if (!fs::exists(p))
      throw IoError("no input for " + synth_name + ": set data." + synth_name + ", pass a path, or run synth first");
    return VolumeSpec{p, Container::hdf5, "main", role};
  }

  std::optional<VolumeSpec> optional_input(const std::optional<VolumeSpec>& configured,
                                           const std::string& synth_name, DtypeRole role) const {
    if (configured) return configured;
    const fs::path p = root() / "synth" / (synth_name + ".h5");
    if (fs::exists(p)) return VolumeSpec{p, Container::hdf5, "main", role};
    return std::nullopt;
  }

  static Container container_for(const fs::path& p) {
    const std::string ext = p.extension().string();
    if (ext == ".h5" || ext == ".hdf5" || ext == ".hdf") return Container::hdf5;
    return Container::tiff_stack;
  }

  VolumeSpec artifact(const std::string& name, DtypeRole role) const {
    return VolumeSpec{dir() / name, Container::hdf5, "main", role};
  }

 private:
  ExperimentConfig config_;
  std::string sub_;
  std::ostream& out_;
  std::string hash_;
};

json report_json(const APReport& r) {
  json curve = json::array();
  for (const PrPoint& p : r.precision_recall_curve) curve.push_back({p.recall, p.precision});
  json matched = json::array();
  for (const MatchedPair& m : r.matched) matched.push_back({{"pred", m.pred}, {"gt", m.gt}, {"iou", m.iou}});
  return {{"ap50", r.ap50}, {"tp", r.tp}, {"fp", r.fp}, {"fn", r.fn}, {"precision_recall_curve", curve},
          {"matched", matched}};
}

void print_ap(std::ostream& out, const APReport& r) {
  out << "AP-50 " << std::fixed << std::setprecision(4) << r.ap50 << std::defaultfloat << " (tp " << r.tp << ", fp "
      << r.fp << ", fn " << r.fn << ")\n";
}

ChannelStack to_stack(const BcdTriple& t, VoxelSize vs) { return {{t.b, t.c, t.d}, vs}; }

BcdTriple from_stack(const ChannelStack& s) {
  if (s.channels.size() != 3) throw IoError("expected a three-channel BCD stack");
  return {s.channels[0], s.channels[1], s.channels[2]};
}

SourceDomain load_source(const Context& ctx) {
  const auto& d = ctx.config().data;
  IntensityVolume image = load_intensity(ctx.input("", d.x_image, "x_image", DtypeRole::intensity));
  LabelVolume labels = load_labels(ctx.input("", d.x_labels, "x_labels", DtypeRole::label));
  return make_source_domain(std::move(image), std::move(labels), ctx.config().codec);
}

TargetDomain load_target(const Context& ctx) {
  return {load_intensity(ctx.input("", ctx.config().data.y_image, "y_image", DtypeRole::intensity))};
}

int cmd_synth(const Context& ctx) {
  const PhantomPair p = make_phantom_pair(ctx.config().phantom);
  ctx.begin();
  save_volume(ctx.artifact("x_image.h5", DtypeRole::intensity), p.x_image);
  save_volume(ctx.artifact("x_labels.h5", DtypeRole::label), p.x_labels);
  save_volume(ctx.artifact("y_image.h5", DtypeRole::intensity), p.y_image);
  save_volume(ctx.artifact("y_labels.h5", DtypeRole::label), p.y_labels);
  ctx.out() << "wrote phantom pair " << p.x_image.shape() << " to " << ctx.dir().string() << '\n';
  return 0;
}

int cmd_encode(const Context& ctx, const Paths& a) {
  const LabelVolume labels =
      load_labels(ctx.input(a.labels, ctx.config().data.x_labels, "x_labels", DtypeRole::label));
  const BcdTriple t = encode_bcd(labels, ctx.config().codec);
  ctx.begin();
  save_channels(ctx.dir() / "bcd.h5", "bcd", to_stack(t, labels.voxel_size));
  ctx.out() << "encoded " << label_ids(labels).size() - label_ids(labels).count(0) << " instances\n";
  return 0;
}

int cmd_decode(const Context& ctx, const Paths& a) {
  const fs::path bcd = a.bcd.empty() ? ctx.root() / "encode" / "bcd.h5" : fs::path(a.bcd);
  const ChannelStack stack = load_channels(bcd, "bcd");
  const LabelVolume labels = decode_bcd(from_stack(stack), ctx.config().codec);
  ctx.begin();
  save_volume(ctx.artifact("labels.h5", DtypeRole::label), LabelVolume{labels.data, stack.voxel_size});
  ctx.out() << "decoded " << label_ids(labels).size() - label_ids(labels).count(0) << " instances\n";
  return 0;
}

int cmd_eval(const Context& ctx, const Paths& a) {
  const fs::path pred_path = a.pred.empty() ? ctx.root() / "decode" / "labels.h5" : fs::path(a.pred);
  const LabelVolume pred = load_labels({pred_path, Context::container_for(pred_path), "main", DtypeRole::label});
  const LabelVolume gt = load_labels(ctx.input(a.gt, ctx.config().data.x_labels, "x_labels", DtypeRole::label));
  ScoreMap scores;
  if (!a.bcd.empty()) {
    const BcdTriple t = from_stack(load_channels(a.bcd, "bcd"));
    scores = mean_foreground_scores(pred, t.b);
  } else {
    scores = size_scores(pred);
  }
  const APReport report = evaluate_ap50(pred, gt, scores);
  ctx.begin();
  ctx.write_json(ctx.dir() / "report.json", report_json(report));
  if (a.plot) ctx.write_text(ctx.dir() / "pr_curve.svg", pr_curve_svg({{"prediction", report}}));
  print_ap(ctx.out(), report);
  return 0;
}

int cmd_augment_preview(const Context& ctx, const Paths& a) {
  const auto& c = ctx.config();
  const IntensityVolume image = load_intensity(ctx.input(a.input, c.data.x_image, "x_image", DtypeRole::intensity));
  const Shape3 patch = c.train.patch_size;
  for (int axis = 0; axis < 3; ++axis)
    if (image.shape()[axis] < patch[axis]) throw ValidationError("TrainConfig.patch_size", "larger than the input volume");
  if (a.count < 1) throw ValidationError("--count", "must be at least 1");
  ctx.begin();
  std::mt19937_64 rng(derive_seed(c.train.seed, 99));
  json masks = json::array();
  for (int i = 0; i < a.count; ++i) {
    std::array<Index, 3> origin{};
    for (int axis = 0; axis < 3; ++axis)
      origin[axis] = std::uniform_int_distribution<Index>(0, image.shape()[axis] - patch[axis])(rng);
    const Grid3<float> clean = crop(image.data, origin, patch);
    const SpatialResult spatial = c.augment.enable_flips_rotations ? spatial_augment(clean, std::nullopt, rng())
                                                                   : SpatialResult{clean, std::nullopt};
    const PatchPair pair = corrupt(spatial.image, c.augment, rng());
    const std::string stem = "preview_" + std::to_string(i);
    save_volume(ctx.artifact(stem + "_clean.h5", DtypeRole::intensity), IntensityVolume{pair.clean, image.voxel_size});
    save_volume(ctx.artifact(stem + "_augmented.h5", DtypeRole::intensity),
                IntensityVolume{pair.augmented, image.voxel_size});
    save_volume(ctx.artifact(stem + "_mask.h5", DtypeRole::label),
                LabelVolume{pair.corruption_mask.cast<LabelId>(), image.voxel_size});
    Index corrupted = 0;
    for (auto v : pair.corruption_mask.values()) corrupted += v != 0;
    masks.push_back({{"origin", origin}, {"corrupted_voxels", corrupted}});
  }
  ctx.write_json(ctx.dir() / "previews.json", masks);
  ctx.out() << "wrote " << a.count << " preview patch(es) to " << ctx.dir().string() << '\n';
  return 0;
}

int cmd_train(const Context& ctx, const Paths& a) {
  const auto& c = ctx.config();
  const SourceDomain x = load_source(ctx);
  const TargetDomain y = load_target(ctx);
  const auto y_gt_spec = ctx.optional_input(c.data.y_labels, "y_labels", DtypeRole::label);
  std::optional<LabelVolume> y_gt;
  if (c.train.eval_every > 0 && y_gt_spec) y_gt = load_labels(*y_gt_spec);

  Trainer trainer(c.model, c.train, c.augment);
  if (!a.resume.empty()) trainer.load_checkpoint(a.resume);
  ctx.begin();
  std::ofstream log(ctx.dir() / "log.jsonl", a.resume.empty() ? std::ios::trunc : std::ios::app);
  std::ofstream eval_log;
  Trainer::EvalHook hook;
  if (y_gt) {
    eval_log.open(ctx.dir() / "eval.jsonl", a.resume.empty() ? std::ios::trunc : std::ios::app);
    hook = [&](const Trainer& t, long long it) {
      const SegmentResult r = segment_volume(pick_generator(t.networks(), Direction::Y_to_X), y.image, c.infer,
                                             c.codec, &*y_gt);
      eval_log << json{{"iteration", it}, {"ap50", r.report->ap50}}.dump() << std::endl;
      ctx.out() << "iteration " << it << ": Y AP-50 " << r.report->ap50 << '\n';
    };
  }
  trainer.train(x, y, &log, ctx.dir() / "checkpoints", hook);
  trainer.save_checkpoint(ctx.dir() / "final.bin");
  ctx.out() << "trained to iteration " << trainer.iteration() << "; checkpoint " << (ctx.dir() / "final.bin").string()
            << '\n';
  return 0;
}

int cmd_infer(const Context& ctx, const Paths& a) {
  const auto& c = ctx.config();
  const bool y_to_x = c.infer.direction == Direction::Y_to_X;
  const VolumeSpec in_spec = y_to_x ? ctx.input(a.input, c.data.y_image, "y_image", DtypeRole::intensity)
                                    : ctx.input(a.input, c.data.x_image, "x_image", DtypeRole::intensity);
  const IntensityVolume volume = load_intensity(in_spec);
  std::optional<LabelVolume> gt;
  if (!a.gt.empty()) {
    gt = load_labels({a.gt, Context::container_for(a.gt), "main", DtypeRole::label});
  } else if (a.input.empty()) {
    const auto spec = y_to_x ? ctx.optional_input(c.data.y_labels, "y_labels", DtypeRole::label)
                             : ctx.optional_input(c.data.x_labels, "x_labels", DtypeRole::label);
    if (spec) gt = load_labels(*spec);
  }
  const fs::path ckpt = a.checkpoint.empty() ? ctx.root() / "train" / "final.bin" : fs::path(a.checkpoint);
  Trainer trainer(c.model, c.train, c.augment);
  trainer.load_checkpoint(ckpt);
  const SegmentResult r = segment_volume(pick_generator(trainer.networks(), c.infer.direction), volume, c.infer,
                                         c.codec, gt ? &*gt : nullptr);
  ctx.begin();
  save_volume(ctx.artifact("translated.h5", DtypeRole::intensity), IntensityVolume{r.prediction.image, volume.voxel_size});
  save_channels(ctx.dir() / "bcd.h5", "bcd", to_stack(r.prediction.seg, volume.voxel_size));
  save_volume(ctx.artifact("labels.h5", DtypeRole::label), LabelVolume{r.labels.data, volume.voxel_size});
  if (r.report) {
    ctx.write_json(ctx.dir() / "report.json", report_json(*r.report));
    if (a.plot) ctx.write_text(ctx.dir() / "pr_curve.svg", pr_curve_svg({{"prediction", *r.report}}));
    print_ap(ctx.out(), *r.report);
  } else {
    ctx.out() << "segmented " << label_ids(r.labels).size() - label_ids(r.labels).count(0) << " instances\n";
  }
  return 0;
}

int cmd_histmatch(const Context& ctx, const Paths& a) {
  const auto& d = ctx.config().data;
  const IntensityVolume source = load_intensity(ctx.input(a.source, d.y_image, "y_image", DtypeRole::intensity));
  const IntensityVolume reference = load_intensity(ctx.input(a.reference, d.x_image, "x_image", DtypeRole::intensity));
  const IntensityVolume matched = histogram_match(source, reference);
  ctx.begin();
  save_volume(ctx.artifact("matched.h5", DtypeRole::intensity), matched);
  const double before = ks_statistic(source.data, reference.data);
  const double after = ks_statistic(matched.data, reference.data);
  ctx.write_json(ctx.dir() / "report.json", {{"ks_before", before}, {"ks_after", after}});
  ctx.out() << "KS statistic " << before << " -> " << after << '\n';
  return 0;
}

int cmd_bench(const Context& ctx, const Paths& a) {
  const auto& c = ctx.config();
  const SourceDomain x = load_source(ctx);
  const TargetDomain y = load_target(ctx);
  const auto gt_spec = ctx.optional_input(c.data.y_labels, "y_labels", DtypeRole::label);
  if (!gt_spec) throw IoError("bench needs Y labels for scoring: set data.y_labels or run synth first");
  const LabelVolume gt = load_labels(*gt_spec);
  ctx.begin();
  const fs::path work = ctx.dir() / "runs";
  const auto rows = run_bench(x, y, gt, c.bench(), &work, &ctx.out());
  json results = json::array();
  std::vector<std::pair<std::string, APReport>> curves;
  for (const BenchRow& r : rows) {
    json j = report_json(r.report);
    j.erase("matched");
    j["method"] = to_string(r.method);
    j["name"] = display_name(r.method);
    j["seconds"] = r.seconds;
    results.push_back(j);
    curves.emplace_back(display_name(r.method), r.report);
  }
  ctx.write_json(ctx.dir() / "results.json", results);
  const std::string table = bench_markdown(rows);
  ctx.write_text(ctx.dir() / "results.md", table);
  if (a.plot) ctx.write_text(ctx.dir() / "pr_curves.svg", pr_curve_svg(curves));
  ctx.out() << table;
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cyclic segmentation GAN on 3D volumes", "cysgan"};
  app.require_subcommand(1);
  Common common;
  Paths paths;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", common.config_path, "YAML or JSON experiment configuration")
        ->check(CLI::ExistingFile);
    sub->add_option("--set", common.overrides, "Override a configuration key: key.path=value")
        ->allow_extra_args(false);
    sub->add_option("-o,--output", common.output_dir, "Output directory (same as --set output_dir=...)");
  };

  struct Entry {
    CLI::App* app;
    std::function<int(const Context&)> fn;
  };
  std::vector<Entry> entries;
  auto add = [&](const std::string& name, const std::string& help, std::function<int(const Context&)> fn) {
    CLI::App* sub = app.add_subcommand(name, help);
    add_common(sub);
    entries.push_back({sub, std::move(fn)});
    return sub;
  };

  add("synth", "Write a two-domain phantom pair", [&](const Context& c) { return cmd_synth(c); });
  add("encode", "Encode an instance label volume into BCD channels", [&](const Context& c) {
    return cmd_encode(c, paths);
  })->add_option("--labels", paths.labels, "Label volume (default: X labels)");
  add("decode", "Decode BCD channels into instances", [&](const Context& c) {
    return cmd_decode(c, paths);
  })->add_option("--bcd", paths.bcd, "BCD stack (default: encode/bcd.h5)");
  {
    CLI::App* sub = add("eval", "Score a predicted label volume with AP-50", [&](const Context& c) {
      return cmd_eval(c, paths);
    });
    sub->add_option("--pred", paths.pred, "Predicted labels (default: decode/labels.h5)");
    sub->add_option("--gt", paths.gt, "Ground-truth labels (default: X labels)");
    sub->add_option("--bcd", paths.bcd, "BCD stack whose B channel ranks predictions (default: instance size)");
    sub->add_flag("--plot", paths.plot, "Also write a precision-recall SVG");
  }
  {
    CLI::App* sub = add("augment-preview", "Write corrupted and clean training patches", [&](const Context& c) {
      return cmd_augment_preview(c, paths);
    });
    sub->add_option("--input", paths.input, "Image volume (default: X image)");
    sub->add_option("--count", paths.count, "Number of patches");
  }
  add("train", "Train the joint translation and segmentation model", [&](const Context& c) {
    return cmd_train(c, paths);
  })->add_option("--resume", paths.resume, "Checkpoint to continue from");
  {
    CLI::App* sub = add("infer", "Translate and segment a whole volume", [&](const Context& c) {
      return cmd_infer(c, paths);
    });
    sub->add_option("--checkpoint", paths.checkpoint, "Checkpoint (default: train/final.bin)");
    sub->add_option("--input", paths.input, "Image volume (default by direction)");
    sub->add_option("--gt", paths.gt, "Ground-truth labels for scoring");
    sub->add_flag("--plot", paths.plot, "Also write a precision-recall SVG");
  }
  {
    CLI::App* sub = add("histmatch", "Match one volume's histogram to another", [&](const Context& c) {
      return cmd_histmatch(c, paths);
    });
    sub->add_option("--source", paths.source, "Volume to transform (default: Y image)");
    sub->add_option("--reference", paths.reference, "Reference volume (default: X image)");
  }
  add("bench", "Train and score every configured method on Y", [&](const Context& c) {
    return cmd_bench(c, paths);
  })->add_flag("--plot", paths.plot, "Also write precision-recall curves as SVG");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  }

  try {
    for (const Entry& e : entries) {
      if (!e.app->parsed()) continue;
      std::vector<std::string> overrides = common.overrides;
      if (!common.output_dir.empty()) overrides.push_back("output_dir=\"" + common.output_dir + "\"");
      std::optional<fs::path> file;
      if (!common.config_path.empty()) file = common.config_path;
      Context ctx(resolve_config(file, overrides), e.app->get_name(), out);
      return e.fn(ctx);
    }
  } catch (const ValidationError& e) {
    err << "validation error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace cysgan::cli
