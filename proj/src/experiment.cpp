#include "cysgan/experiment.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "cysgan/histogram.hpp"
#include "cysgan/volume.hpp"

namespace cysgan {

PhantomPair make_phantom_pair(const PhantomConfig& config) {
  Phantom a = make_phantom(config);
  PhantomConfig other = config;
  other.seed = derive_seed(config.seed, 1);
  Phantom b = make_phantom(other);
  return {std::move(a.domain_a), std::move(a.labels), std::move(b.domain_b), std::move(b.labels)};
}

std::shared_ptr<nn::UNetGenerator<float>> train_segmenter(const SourceDomain& data, const nn::GeneratorConfig& generator,
                                                          const TrainConfig& train, const AugmentConfig& augment,
                                                          std::ostream* log) {
  auto net = std::make_shared<nn::UNetGenerator<float>>(generator, derive_seed(train.seed, 11));
  nn::Adam<float> opt(net->parameters(), train.optimizer);
  std::mt19937_64 rng(derive_seed(train.seed, 12));
  for (long long it = 0; it < train.iterations; ++it) {
    const Batch b = sample_batch(data, train.patch_size, train.batch_size, augment, train.ablation, rng);
    opt.zero_grad();
    const auto out = nn::GeneratorOutput<float>::split(net->forward(nn::Var<float>(b.augmented)));
    const nn::Var<float> loss = supervised_seg_loss(out.seg, nn::Var<float>(*b.bcd));
    const double v = loss.item();
    if (!std::isfinite(v)) throw Error("non-finite segmenter loss at iteration " + std::to_string(it));
    nn::backward(loss);
    opt.step();
    if (log) *log << "{\"iteration\":" << it + 1 << ",\"seg_sup\":" << v << "}\n";
  }
  return net;
}

IntensityVolume translate_volume(const nn::Generator<float>& generator, const IntensityVolume& volume,
                                 const InferConfig& infer) {
  return {sliding_window_predict(generator, volume, infer).image, volume.voxel_size};
}

BenchMethod bench_method_from_string(const std::string& s) {
  for (BenchMethod m : {BenchMethod::histogram_x_to_y, BenchMethod::histogram_y_to_x, BenchMethod::cyclegan_segm,
                        BenchMethod::cysgan_no_augment, BenchMethod::cysgan_no_semi_sup, BenchMethod::cysgan})
    if (to_string(m) == s) return m;
  throw ValidationError("bench.methods", "unknown method '" + s + "'");
}

std::string to_string(BenchMethod m) {
  switch (m) {
    case BenchMethod::histogram_x_to_y: return "histogram_x_to_y";
    case BenchMethod::histogram_y_to_x: return "histogram_y_to_x";
    case BenchMethod::cyclegan_segm: return "cyclegan_segm";
    case BenchMethod::cysgan_no_augment: return "cysgan_no_augment";
    case BenchMethod::cysgan_no_semi_sup: return "cysgan_no_semi_sup";
    case BenchMethod::cysgan: return "cysgan";
  }
  return "?";
}

std::string display_name(BenchMethod m) {
  switch (m) {
    case BenchMethod::histogram_x_to_y: return "Histogram + Segm (X->Y)";
    case BenchMethod::histogram_y_to_x: return "Histogram + Segm (Y->X)";
    case BenchMethod::cyclegan_segm: return "CycleGAN + Segm";
    case BenchMethod::cysgan_no_augment: return "CySGAN w/o Augment";
    case BenchMethod::cysgan_no_semi_sup: return "CySGAN w/o Semi-sup";
    case BenchMethod::cysgan: return "CySGAN";
  }
  return "?";
}

namespace {

struct Logs {
  const std::filesystem::path* dir;
  std::unique_ptr<std::ofstream> open(const std::string& name) const {
    if (!dir) return nullptr;
    std::filesystem::create_directories(*dir);
    return std::make_unique<std::ofstream>(*dir / name);
  }
};

void save_prediction(const std::filesystem::path* dir, const std::string& name, const LabelVolume& labels) {
  if (!dir) return;
  save_volume(VolumeSpec{*dir / (name + "_labels.h5"), Container::hdf5, "main", DtypeRole::label}, labels);
}

}  // namespace

std::vector<BenchRow> run_bench(const SourceDomain& x, const TargetDomain& y, const LabelVolume& y_labels,
                                const BenchConfig& config, const std::filesystem::path* workdir, std::ostream* progress) {
  validate(config.model, config.train);
  config.infer.validate();
  config.codec.validate();
  config.augment.validate();
  if (y_labels.shape() != y.image.shape()) throw ValidationError("bench.y_labels", "label volume shape differs from Y");
  const Logs logs{workdir};
  std::vector<BenchRow> rows;
  for (BenchMethod m : config.methods) {
    const auto t0 = std::chrono::steady_clock::now();
    if (progress) *progress << "[bench] " << display_name(m) << " ..." << std::endl;
    TrainConfig train = config.train;
    SegmentResult seg;
    const auto log = logs.open(to_string(m) + "_train.jsonl");
    switch (m) {
      case BenchMethod::histogram_x_to_y: {
        train.ablation = Ablation::full;
        const SourceDomain matched{histogram_match(x.image, y.image), x.labels, x.bcd};
        const auto net = train_segmenter(matched, config.model.generator, train, config.augment, log.get());
        seg = segment_volume(*net, y.image, config.infer, config.codec, &y_labels);
        break;
      }
      case BenchMethod::histogram_y_to_x: {
        train.ablation = Ablation::full;
        const auto net = train_segmenter(x, config.model.generator, train, config.augment, log.get());
        seg = segment_volume(*net, histogram_match(y.image, x.image), config.infer, config.codec, &y_labels);
        break;
      }
      case BenchMethod::cyclegan_segm: {
        train.ablation = Ablation::translation_only;
        Trainer tr(config.model, train, config.augment);
        tr.train(x, y, log.get());
        InferConfig fwd = config.infer;
        fwd.direction = Direction::X_to_Y;
        const SourceDomain translated{translate_volume(*tr.networks().F, x.image, fwd), x.labels, x.bcd};
        train.ablation = Ablation::full;
        const auto seg_log = logs.open(to_string(m) + "_segmenter.jsonl");
        const auto net = train_segmenter(translated, config.model.generator, train, config.augment, seg_log.get());
        seg = segment_volume(*net, y.image, config.infer, config.codec, &y_labels);
        break;
      }
      case BenchMethod::cysgan:
      case BenchMethod::cysgan_no_augment:
      case BenchMethod::cysgan_no_semi_sup: {
        train.ablation = m == BenchMethod::cysgan ? Ablation::full
                         : m == BenchMethod::cysgan_no_augment ? Ablation::no_augment
                                                               : Ablation::no_semi_sup;
        Trainer tr(config.model, train, config.augment);
        tr.train(x, y, log.get());
        InferConfig back = config.infer;
        back.direction = Direction::Y_to_X;
        seg = segment_volume(pick_generator(tr.networks(), back.direction), y.image, back, config.codec, &y_labels);
        break;
      }
    }
    save_prediction(workdir, to_string(m), seg.labels);
    BenchRow row{m, *seg.report, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
    if (progress)
      *progress << "[bench] " << display_name(m) << ": AP-50 " << std::fixed << std::setprecision(3) << row.report.ap50
                << " (" << std::setprecision(0) << row.seconds << " s)" << std::defaultfloat << std::endl;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string bench_markdown(const std::vector<BenchRow>& rows) {
  std::ostringstream s;
  s << "| Method | AP-50 (Y) | TP | FP | FN | Time (s) |\n";
  s << "|---|---|---|---|---|---|\n";
  for (const BenchRow& r : rows)
    s << "| " << display_name(r.method) << " | " << std::fixed << std::setprecision(3) << r.report.ap50 << " | "
      << r.report.tp << " | " << r.report.fp << " | " << r.report.fn << " | " << std::setprecision(0) << r.seconds
      << " |\n";
  return s.str();
}

}  // namespace cysgan
