// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero when any fails. `--only 1,5,9` runs a subset.

#include <Eigen/Core>

#include <chrono>
#include <cstring>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "cysgan/bcd.hpp"
#include "cysgan/experiment.hpp"
#include "cysgan/histogram.hpp"
#include "cysgan/losses.hpp"
#include "cysgan/metrics.hpp"
#include "cysgan/phantom.hpp"
#include "cysgan/resample.hpp"
#include "cysgan/trainer.hpp"
#include "support/ap_oracle.hpp"
#include "support/finite_diff.hpp"
#include "support/oracles.hpp"
#include "support/stubs.hpp"
#include "support/temp_dir.hpp"

using namespace cysgan;
using namespace cysgan::test;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s << std::setprecision(digits) << v;
  return s.str();
}

Outcome codec_round_trip() {
  double worst_plain = 1, worst_touch = 1;
  for (int i = 0; i < 10; ++i) {
    PhantomConfig cfg;
    cfg.shape = {64, 64, 64};
    cfg.n_instances = 30;
    cfg.seed = 100 + i;
    const Phantom plain = make_phantom(cfg);
    LabelVolume dec = decode_bcd(encode_bcd(plain.labels));
    worst_plain = std::min(worst_plain, evaluate_ap50(dec, plain.labels, size_scores(dec)).ap50);

    cfg.allow_touching = true;
    cfg.touch_fraction = 0.3;
    const Phantom touching = make_phantom(cfg);
    dec = decode_bcd(encode_bcd(touching.labels));
    worst_touch = std::min(worst_touch, evaluate_ap50(dec, touching.labels, size_scores(dec)).ap50);
  }
  return {worst_plain == 1.0 && worst_touch >= 0.90,
          "min AP-50 non-touching " + fmt(worst_plain) + ", touching " + fmt(worst_touch)};
}

Outcome d_channel_oracle() {
  std::mt19937 rng(2024);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<int> dim(4, 24);
    const Shape3 s{dim(rng), dim(rng), dim(rng)};
    const LabelVolume lab = random_labels(s, rng, 1 + static_cast<int>(rng() % 8));
    const BcdTriple t = encode_bcd(lab);
    const Grid3<double> oracle = brute_signed_distance(lab.data, CodecParams{}.d_clip_bg);
    for (Index i = 0; i < t.d.size(); ++i) worst = std::max(worst, std::abs(t.d[i] - oracle[i]));
  }
  return {worst <= 1e-6, "max |D - oracle| " + fmt(worst)};
}

Outcome gradient_suite() {
  std::mt19937 rng(77);
  using Inputs = std::vector<nn::Tensor<double>>;
  struct Term {
    const char* name;
    std::function<double(const nn::Shape5&, const nn::Shape5&)> error;
  };
  const auto gen = [](auto& v) { return gan_generator_loss(v[0]); };
  const auto cyc = [](auto& v) { return cycle_loss(v[0], v[1]); };
  const auto seg = [](auto& v) { return supervised_seg_loss(v[0], v[1]); };
  const auto sc = [](auto& v) { return structural_consistency_loss(v[0], v[1]); };
  const auto target = [&](const nn::Shape5& s) {
    nn::Tensor<double> t = random_tensor<double>(s, rng);
    for (Index c = 0; c < 2; ++c) {
      double* p = t.channel_ptr(0, c);
      for (Index i = 0; i < t.spatial(); ++i) p[i] = p[i] > 0 ? 1.0 : 0.0;
    }
    return t;
  };
  const auto score_term = [&](const nn::Shape5& s, const nn::Shape5&) {
    return gradient_error<float>(gen, Inputs{random_tensor<double>(s, rng)}, {true});
  };
  const auto cycle_term = [&](const nn::Shape5& s, const nn::Shape5&) {
    return gradient_error<float>(cyc, Inputs{random_tensor<double>(s, rng), random_tensor<double>(s, rng)},
                                 {true, false});
  };
  const auto seg_term = [&](const nn::Shape5&, const nn::Shape5& s3) {
    return gradient_error<float>(seg, Inputs{random_tensor<double>(s3, rng, 0.02, 0.98), target(s3)}, {true, false});
  };
  const std::vector<Term> terms{
      {"gan_F_img", score_term},
      {"gan_B_img", score_term},
      {"cycle", cycle_term},
      {"seg_F_sup", seg_term},
      {"seg_B_sup", seg_term},
      {"struct_consistency",
       [&](const nn::Shape5&, const nn::Shape5& s3) {
         return gradient_error<float>(sc, Inputs{random_tensor<double>(s3, rng), random_tensor<double>(s3, rng)},
                                      {true, true});
       }},
      {"gan_B_seg", score_term},
      {"gan_F_seg", score_term},
  };
  std::uniform_int_distribution<Index> dim(1, 4);
  double worst = 0;
  std::string worst_name;
  for (const Term& t : terms)
    for (int draw = 0; draw < 50; ++draw) {
      const Index z = dim(rng), y = dim(rng), x = dim(rng);
      const double e = t.error({1, 1, z, y, x}, {1, 3, z, y, x});
      if (!(e <= worst)) {
        worst = e;
        worst_name = t.name;
      }
    }
  return {worst <= 1e-3, "worst relative error " + fmt(worst) + " (" + worst_name + "), 8 terms x 50 draws"};
}

ModelConfig tiny_model() {
  ModelConfig m;
  m.generator.depth = 3;
  m.generator.channels = {4, 6, 8};
  m.image_discriminator.n_layers = 1;
  m.image_discriminator.base_channels = 4;
  m.seg_discriminator.n_layers = 1;
  m.seg_discriminator.base_channels = 4;
  return m;
}

struct SmallData {
  SourceDomain x;
  TargetDomain y;
};

SmallData small_data() {
  PhantomConfig cfg;
  cfg.shape = {16, 48, 48};
  cfg.n_instances = 8;
  cfg.radius_range = {2.5, 4.5};
  cfg.seed = 5;
  PhantomPair p = make_phantom_pair(cfg);
  return {make_source_domain(p.x_image, p.x_labels), TargetDomain{p.y_image}};
}

Outcome detach_rule() {
  const SmallData d = small_data();
  TrainConfig cfg;
  cfg.patch_size = {8, 16, 16};
  cfg.seed = 9;
  Trainer tr(tiny_model(), cfg, AugmentConfig{});
  Index f_params = 0, nonzero_f = 0, nonzero_b = 0;
  for (int step = 0; step < 5; ++step) {
    const Batch bx = sample_batch(d.x, cfg.patch_size, 1, AugmentConfig{}, Ablation::full, tr.rng());
    const Batch by = sample_batch(d.y, cfg.patch_size, 1, AugmentConfig{}, Ablation::full, tr.rng());
    tr.networks().F->zero_grad();
    tr.networks().B->zero_grad();
    const GeneratorGraph g = tr.generator_graph(bx, by);
    nn::backward(g[LossTerm::seg_B_sup]);
    for (const auto& p : tr.networks().F->parameters()) {
      f_params += p.value().numel();
      if (p.has_grad()) nonzero_f += (p.grad().data.array() != 0.f).count();
    }
    for (const auto& p : tr.networks().B->parameters())
      if (p.has_grad()) nonzero_b += (p.grad().data.array() != 0.f).count();
    tr.train_step(bx, by);
  }
  return {nonzero_f == 0 && nonzero_b > 0, std::to_string(nonzero_f) + " non-zero F gradient entries of " +
                                              std::to_string(f_params) + " checked; B receives " +
                                              std::to_string(nonzero_b)};
}

Outcome clean_target_cycle() {
  const SmallData d = small_data();
  AugmentConfig aug;
  aug.p_missing_section = 1.0;
  aug.p_blur_region = 0.0;
  aug.p_noise_region = 0.0;
  TrainConfig cfg;
  cfg.patch_size = {8, 16, 16};
  cfg.seed = 10;
  Networks nets = Networks::build(tiny_model(), 3);
  nets.F = std::make_shared<IdentityGenerator>();
  nets.B = std::make_shared<IdentityGenerator>();
  Trainer tr(nets, tiny_model(), cfg, aug);
  double worst = 0;
  bool confined = true;
  for (int trial = 0; trial < 5; ++trial) {
    const Batch bx = sample_batch(d.x, cfg.patch_size, 1, aug, Ablation::full, tr.rng());
    const Batch by = sample_batch(d.y, cfg.patch_size, 1, aug, Ablation::full, tr.rng());
    const double cycle = tr.generator_graph(bx, by)[LossTerm::cycle].item();
    double expected = 0;
    for (const Batch* b : {&bx, &by}) {
      const auto& mask = b->corruption_masks.at(0);
      double sum = 0;
      for (Index i = 0; i < mask.size(); ++i) {
        const double diff = std::abs(double(b->augmented.data[i]) - double(b->clean.data[i]));
        if (mask[i]) sum += diff;
        else confined &= diff == 0.0;
      }
      expected += sum / double(mask.size());
    }
    worst = std::max(worst, std::abs(cycle - expected));
  }
  return {worst <= 1e-6 && confined, "max |cycle - masked L1| " + fmt(worst)};
}

Outcome ap_oracle() {
  std::mt19937 rng(31);
  int compared = 0, mismatches = 0;
  double worst = 0;
  while (compared < 100) {
    std::uniform_int_distribution<int> dim(5, 9);
    const Shape3 s{dim(rng), dim(rng), dim(rng)};
    const LabelVolume gt = random_labels(s, rng, 1 + int(rng() % 5));
    LabelVolume pred = gt;
    const LabelVolume noise = random_labels(s, rng, 1 + int(rng() % 3));
    for (Index i = 0; i < pred.data.size(); ++i)
      if (noise.data[i]) pred.data[i] = noise.data[i] + 100;
    ScoreMap scores;
    std::uniform_real_distribution<double> u(0, 1);
    for (LabelId id : label_ids(pred))
      if (id) scores[id] = u(rng);
    if (scores.size() > 6 || label_ids(gt).size() > 7) continue;
    const OracleResult want = brute_force_ap50(pred.data, gt.data, scores);
    if (want.has_exact_half) continue;
    const APReport got = evaluate_ap50(pred, gt, scores);
    ++compared;
    if (got.tp != want.tp || got.fp != want.fp || got.fn != want.fn) ++mismatches;
    worst = std::max(worst, std::abs(got.ap50 - want.ap));
  }
  return {mismatches == 0 && worst <= 1e-9,
          std::to_string(compared) + " cases, " + std::to_string(mismatches) + " count mismatches, max |dAP| " +
              fmt(worst)};
}

ModelConfig bench_model() {
  ModelConfig m;
  m.generator.channels = {8, 16, 24, 32};
  m.image_discriminator.n_layers = 2;
  m.seg_discriminator.n_layers = 2;
  return m;
}

TrainConfig bench_train() {
  TrainConfig t;
  t.patch_size = {16, 32, 32};
  t.iterations = 2000;
  t.seed = 7;
  t.optimizer.lr = 1e-3;
  return t;
}

Outcome directional_ablation() {
  PhantomConfig pc;
  pc.shape = {64, 128, 128};
  pc.n_instances = 120;
  pc.seed = 1;
  const PhantomPair data = make_phantom_pair(pc);
  BenchConfig bc;
  bc.model = bench_model();
  bc.train = bench_train();
  bc.infer.patch_size = bc.train.patch_size;
  bc.infer.stride = {8, 16, 16};
  bc.methods = {BenchMethod::cysgan, BenchMethod::cysgan_no_semi_sup, BenchMethod::cyclegan_segm};
  const std::filesystem::path work = "acceptance_directional";
  const auto rows = run_bench(make_source_domain(data.x_image, data.x_labels, bc.codec), TargetDomain{data.y_image},
                              data.y_labels, bc, &work, &std::cout);
  std::ofstream(work / "results.md") << bench_markdown(rows);
  const double full = rows[0].report.ap50, no_semi = rows[1].report.ap50, translation = rows[2].report.ap50;
  const bool a = full >= 0.5;
  const bool gap = full > translation;
  const bool middle = full + 0.03 >= no_semi && no_semi + 0.03 >= translation;
  return {a && gap && middle, "AP-50 full " + fmt(full, 3) + ", no_semi_sup " + fmt(no_semi, 3) +
                                  ", translation_only+segm " + fmt(translation, 3) +
                                  (middle ? "" : " (middle ordering violated beyond 0.03)")};
}

Outcome histogram_matching() {
  double worst_ks = 0, worst_identity = 0;
  for (int seed = 0; seed < 4; ++seed) {
    PhantomConfig pc;
    pc.shape = {32, 64, 64};
    pc.seed = 50 + seed;
    const PhantomPair p = make_phantom_pair(pc);
    for (const auto& [src, ref] : {std::pair{&p.y_image, &p.x_image}, std::pair{&p.x_image, &p.y_image}}) {
      worst_ks = std::max(worst_ks, ks_statistic(histogram_match(*src, *ref).data, ref->data, 256));
      const IntensityVolume same = histogram_match(*src, *src);
      for (Index i = 0; i < same.data.size(); ++i)
        worst_identity = std::max(worst_identity, double(std::abs(same.data[i] - src->data[i])));
    }
  }
  return {worst_ks <= 0.02 && worst_identity <= 1.0 / 256,
          "max KS " + fmt(worst_ks) + ", identity max deviation " + fmt(worst_identity)};
}

Outcome determinism() {
  PhantomConfig pc;
  pc.shape = {32, 64, 64};
  pc.seed = 11;
  const PhantomPair p = make_phantom_pair(pc);
  const SourceDomain x = make_source_domain(p.x_image, p.x_labels);
  const TargetDomain y{p.y_image};
  TrainConfig cfg = bench_train();
  cfg.iterations = 50;
  cfg.checkpoint_every = 25;
  cfg.image_pool_size = 4;
  TempDir dir;

  Trainer straight(bench_model(), cfg, AugmentConfig{});
  straight.train(x, y, nullptr, dir.path());
  Trainer resumed(bench_model(), cfg, AugmentConfig{});
  resumed.load_checkpoint(dir.path() / "checkpoint_00000025.bin");
  resumed.train(x, y);

  Index compared = 0, differing = 0;
  const Networks& a = straight.networks();
  const Networks& b = resumed.networks();
  const std::vector<std::pair<const nn::Module<float>*, const nn::Module<float>*>> pairs{
      {a.F.get(), b.F.get()}, {a.B.get(), b.B.get()}, {a.DXI.get(), b.DXI.get()},
      {a.DYI.get(), b.DYI.get()}, {a.DXS.get(), b.DXS.get()}};
  for (const auto& [ma, mb] : pairs) {
    const auto pa = ma->parameters(), pb = mb->parameters();
    for (std::size_t k = 0; k < pa.size(); ++k) {
      const auto& va = pa[k].value().data;
      const auto& vb = pb[k].value().data;
      compared += va.size();
      for (Index i = 0; i < va.size(); ++i)
        differing += std::memcmp(&va[i], &vb[i], sizeof(float)) != 0;
    }
  }
  return {differing == 0 && resumed.iteration() == 50,
          std::to_string(compared) + " parameters compared, " + std::to_string(differing) + " differ"};
}

Outcome resolution_matching() {
  const Shape3 big{255, 2048, 2048};
  const ScaleFactors f{Rational{1, 1}, {1, 4}, {1, 4}};
  bool ok = true;
  std::string detail;
  {
    BasicLabelVolume<std::uint8_t> labels{Grid3<std::uint8_t>(big), {}};
    std::uint8_t* d = labels.data.data();
    for (Index z = 0; z < big.z; ++z)
      for (Index y = 0; y < big.y; ++y)
        for (Index x = 0; x < big.x; ++x) {
          const Index cell = (z / 32) * 1024 + (y / 64) * 32 + (x / 64);
          d[(z * big.y + y) * big.x + x] = static_cast<std::uint8_t>(cell % 251);
        }
    const auto before = label_ids(labels);
    const auto small = resample(labels, f, Interpolation::nearest);
    const bool same_ids = label_ids(small) == before;
    ok &= small.shape() == Shape3{255, 512, 512} && same_ids;
    std::ostringstream s;
    s << "labels " << small.shape() << " with " << before.size() << " ids " << (same_ids ? "preserved" : "CHANGED");
    detail = s.str();
  }
  {
    BasicIntensityVolume<Eigen::half> image{Grid3<Eigen::half>(big, Eigen::half(0.25f)), {}};
    const auto small = resample(image, f, Interpolation::trilinear);
    ok &= small.shape() == Shape3{255, 512, 512};
    std::ostringstream s;
    s << "; image " << small.shape();
    detail += s.str();
  }
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i + 1 < argc; ++i)
    if (std::string(argv[i]) == "--only") {
      std::stringstream s(argv[i + 1]);
      for (std::string tok; std::getline(s, tok, ',');) only.insert(std::stoi(tok));
    }
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"codec round trip", codec_round_trip},
      {"D-channel oracle", d_channel_oracle},
      {"gradient suite", gradient_suite},
      {"detach rule", detach_rule},
      {"clean-target cycle", clean_target_cycle},
      {"AP metric oracle", ap_oracle},
      {"directional ablation", directional_ablation},
      {"histogram matching", histogram_matching},
      {"determinism", determinism},
      {"resolution matching", resolution_matching},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.contains(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << id << " (" << criteria[i].first << "): " << o.detail
              << " [" << std::fixed << std::setprecision(1) << sec << " s]" << std::defaultfloat << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
