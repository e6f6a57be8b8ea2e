#include <doctest.h>

#include <cmath>
#include <sstream>

#include "cysgan/phantom.hpp"
#include "cysgan/trainer.hpp"
#include "support/stubs.hpp"
#include "support/temp_dir.hpp"

using namespace cysgan;
using namespace cysgan::test;
using nn::Var;

namespace {

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

TrainConfig tiny_train(Ablation ab = Ablation::full) {
  TrainConfig t;
  t.patch_size = {8, 16, 16};
  t.iterations = 4;
  t.ablation = ab;
  t.seed = 17;
  return t;
}

struct Data {
  SourceDomain x;
  TargetDomain y;
};

const Data& data() {
  static const Data d = [] {
    PhantomConfig cfg;
    cfg.shape = {16, 32, 32};
    cfg.n_instances = 6;
    cfg.radius_range = {2.5, 4.0};
    cfg.seed = 3;
    Phantom a = make_phantom(cfg);
    cfg.seed = 4;
    Phantom b = make_phantom(cfg);
    return Data{make_source_domain(a.domain_a, a.labels), TargetDomain{b.domain_b}};
  }();
  return d;
}

std::vector<Eigen::VectorXf> snapshot(const nn::Module<float>& m) {
  std::vector<Eigen::VectorXf> out;
  for (const auto& p : m.parameters()) out.push_back(p.value().data);
  return out;
}

bool all_zero_or_absent(const nn::Module<float>& m) {
  for (const auto& p : m.parameters())
    if (p.has_grad() && !p.grad().data.isZero(0)) return false;
  return true;
}

}  // namespace

TEST_CASE("sample_batch contracts") {
  std::mt19937_64 rng(1);
  const AugmentConfig aug;
  const Batch bx = sample_batch(data().x, {8, 16, 16}, 2, aug, Ablation::full, rng);
  const Batch by = sample_batch(data().y, {8, 16, 16}, 2, aug, Ablation::full, rng);
  CHECK(bx.bcd.has_value());
  CHECK(bx.labels.size() == 2);
  CHECK(!by.bcd.has_value());
  CHECK(by.labels.empty());
  CHECK(bx.augmented.shape == nn::Shape5{2, 1, 8, 16, 16});
  CHECK(bx.bcd->shape == nn::Shape5{2, 3, 8, 16, 16});
  CHECK(bx.clean.data.maxCoeff() <= 1.f);
  CHECK(bx.clean.data.minCoeff() >= -1.f);

  // Labels and BCD move with the image: the B channel is exactly the foreground.
  for (Index n = 0; n < 2; ++n)
    for (Index i = 0; i < bx.labels[n].size(); ++i) CHECK((bx.bcd->channel_ptr(n, 0)[i] == 1.f) == (bx.labels[n][i] != 0));

  for (int k = 0; k < 20; ++k) {
    const Batch b = sample_batch(data().x, {8, 16, 16}, 1, aug, Ablation::no_augment, rng);
    CHECK(b.augmented.data == b.clean.data);
  }
  CHECK_THROWS_AS(sample_batch(data().y, {32, 16, 16}, 1, aug, Ablation::full, rng), ValidationError);
}

TEST_CASE("sampled patch positions are uniform") {
  const IntensityVolume vol{Grid3<float>({64, 64, 64}, 0.5f), {}};
  const TargetDomain y{vol};
  AugmentConfig aug;
  aug.enable_flips_rotations = false;
  std::mt19937_64 rng(5);
  const int samples = 10000;
  const Index positions = 33;
  std::vector<std::array<double, 33>> axis(3, std::array<double, 33>{});
  std::array<double, 27> coarse{};
  for (int k = 0; k < samples; ++k) {
    const Batch b = sample_batch(y, {32, 32, 32}, 1, aug, Ablation::no_augment, rng);
    const auto o = b.origins[0];
    for (int a = 0; a < 3; ++a) {
      REQUIRE(o[a] >= 0);
      REQUIRE(o[a] < positions);
      axis[a][o[a]] += 1;
    }
    coarse[(o[0] / 11) * 9 + (o[1] / 11) * 3 + o[2] / 11] += 1;
  }
  const auto chi2 = [&](const auto& counts, double bins) {
    const double e = samples / bins;
    double s = 0;
    for (double c : counts) s += (c - e) * (c - e) / e;
    return s;
  };
  // Within three standard deviations of the chi-square mean (k dof: mean k, sd sqrt(2k)).
  for (int a = 0; a < 3; ++a) CHECK(chi2(axis[a], 33) < 32 + 3 * std::sqrt(64.0));
  CHECK(chi2(coarse, 27) < 26 + 3 * std::sqrt(52.0));
}

TEST_CASE("detach rule: L_seg(B) never reaches F") {
  Trainer tr(tiny_model(), tiny_train(), AugmentConfig{});
  for (int step = 0; step < 2; ++step) {
    const Batch bx = sample_batch(data().x, {8, 16, 16}, 1, AugmentConfig{}, Ablation::full, tr.rng());
    const Batch by = sample_batch(data().y, {8, 16, 16}, 1, AugmentConfig{}, Ablation::full, tr.rng());
    tr.networks().F->zero_grad();
    tr.networks().B->zero_grad();
    const GeneratorGraph g = tr.generator_graph(bx, by);
    nn::backward(g[LossTerm::seg_B_sup]);
    CHECK(all_zero_or_absent(*tr.networks().F));
    CHECK(!all_zero_or_absent(*tr.networks().B));

    // The image path into B does carry gradient back to F.
    tr.networks().F->zero_grad();
    nn::backward(tr.generator_graph(bx, by)[LossTerm::cycle]);
    CHECK(!all_zero_or_absent(*tr.networks().F));
    tr.train_step(bx, by);
  }
}

TEST_CASE("ablation switches") {
  std::mt19937_64 rng(2);
  const Batch bx = sample_batch(data().x, {8, 16, 16}, 1, AugmentConfig{}, Ablation::full, rng);
  const Batch by = sample_batch(data().y, {8, 16, 16}, 1, AugmentConfig{}, Ablation::full, rng);

  SUBCASE("no_semi_sup") {
    Trainer tr(tiny_model(), tiny_train(Ablation::no_semi_sup), AugmentConfig{});
    const auto dxs = snapshot(*tr.networks().DXS);
    const auto dxi = snapshot(*tr.networks().DXI);
    for (int k = 0; k < 2; ++k) {
      const StepResult r = tr.train_step(bx, by);
      CHECK(!r.losses[LossTerm::struct_consistency]);
      CHECK(!r.losses[LossTerm::gan_B_seg]);
      CHECK(!r.losses[LossTerm::gan_F_seg]);
      CHECK(r.losses[LossTerm::seg_B_sup]);
      CHECK(!r.d_X_seg);
      double sum = 0;
      for (const auto& v : r.losses.terms) sum += v.value_or(0.0);
      CHECK(r.losses.total == sum);
    }
    CHECK(snapshot(*tr.networks().DXS) == dxs);
    CHECK(!(snapshot(*tr.networks().DXI) == dxi));
  }
  SUBCASE("translation_only") {
    Trainer tr(tiny_model(), tiny_train(Ablation::translation_only), AugmentConfig{});
    const StepResult r = tr.train_step(bx, by);
    for (LossTerm t : {LossTerm::seg_F_sup, LossTerm::seg_B_sup, LossTerm::struct_consistency, LossTerm::gan_B_seg,
                       LossTerm::gan_F_seg})
      CHECK(!r.losses[t]);
    CHECK(r.losses[LossTerm::cycle]);
    CHECK(r.losses.total == doctest::Approx(*r.losses[LossTerm::gan_F_img] + *r.losses[LossTerm::gan_B_img] +
                                            *r.losses[LossTerm::cycle]));
  }
  SUBCASE("full") {
    Trainer tr(tiny_model(), tiny_train(), AugmentConfig{});
    const StepResult r = tr.train_step(bx, by);
    for (const auto& v : r.losses.terms) CHECK(v.has_value());
    CHECK(r.d_X_seg.has_value());
  }
}

TEST_CASE("discriminator updates leave the generators alone") {
  std::mt19937_64 rng(3);
  const Batch bx = sample_batch(data().x, {8, 16, 16}, 1, AugmentConfig{}, Ablation::full, rng);
  const Batch by = sample_batch(data().y, {8, 16, 16}, 1, AugmentConfig{}, Ablation::full, rng);
  Trainer a(tiny_model(), tiny_train(), AugmentConfig{});
  Trainer b(tiny_model(), tiny_train(), AugmentConfig{});
  a.train_step(bx, by);

  // Replay only the generator half by hand on the twin.
  b.networks().DXI->set_requires_grad(false);
  b.networks().DYI->set_requires_grad(false);
  b.networks().DXS->set_requires_grad(false);
  std::vector<Var<float>> gen = b.networks().F->parameters();
  for (const auto& p : b.networks().B->parameters()) gen.push_back(p);
  nn::Adam<float> opt(gen, b.train_config().optimizer);
  nn::backward(b.generator_graph(bx, by).total);
  opt.step();
  CHECK(snapshot(*a.networks().F) == snapshot(*b.networks().F));
  CHECK(snapshot(*a.networks().B) == snapshot(*b.networks().B));
}

TEST_CASE("determinism and checkpoint resume") {
  TempDir dir;
  TrainConfig cfg = tiny_train();
  cfg.iterations = 6;
  cfg.checkpoint_every = 3;
  cfg.image_pool_size = 2;

  Trainer full(tiny_model(), cfg, AugmentConfig{});
  std::ostringstream log_a;
  full.train(data().x, data().y, &log_a, dir.path() / "a");

  Trainer again(tiny_model(), cfg, AugmentConfig{});
  std::ostringstream log_b;
  again.train(data().x, data().y, &log_b, dir.path() / "b");
  CHECK(snapshot(*full.networks().F) == snapshot(*again.networks().F));
  CHECK(snapshot(*full.networks().DXS) == snapshot(*again.networks().DXS));

  // Identical loss columns (wall time aside).
  std::istringstream la(log_a.str()), lb(log_b.str());
  std::string a_line, b_line;
  int lines = 0;
  while (std::getline(la, a_line) && std::getline(lb, b_line)) {
    CHECK(a_line.substr(0, a_line.find("\"wall_time\"")) == b_line.substr(0, b_line.find("\"wall_time\"")));
    ++lines;
  }
  CHECK(lines == 6);

  Trainer resumed(tiny_model(), cfg, AugmentConfig{});
  resumed.load_checkpoint(dir.path() / "a" / "checkpoint_00000003.bin");
  CHECK(resumed.iteration() == 3);
  resumed.train(data().x, data().y);
  CHECK(resumed.iteration() == 6);
  for (const auto& pick : {&Networks::F, &Networks::B}) {
    CHECK(snapshot(*(resumed.networks().*pick)) == snapshot(*(full.networks().*pick)));
  }
  CHECK(snapshot(*resumed.networks().DXI) == snapshot(*full.networks().DXI));
  CHECK(snapshot(*resumed.networks().DYI) == snapshot(*full.networks().DYI));
  CHECK(snapshot(*resumed.networks().DXS) == snapshot(*full.networks().DXS));

  TrainConfig other = cfg;
  other.seed = 99;
  Trainer mismatched(tiny_model(), other, AugmentConfig{});
  CHECK_THROWS_AS(mismatched.load_checkpoint(dir.path() / "a" / "checkpoint_00000003.bin"), Error);
}

TEST_CASE("zero iterations leave the state untouched") {
  TrainConfig cfg = tiny_train();
  cfg.iterations = 0;
  Trainer tr(tiny_model(), cfg, AugmentConfig{});
  const auto before = snapshot(*tr.networks().F);
  std::ostringstream log;
  tr.train(data().x, data().y, &log);
  CHECK(log.str().empty());
  CHECK(snapshot(*tr.networks().F) == before);
  CHECK(tr.iteration() == 0);
}

TEST_CASE("a non-finite term aborts with its name") {
  Networks nets = Networks::build(tiny_model(), 1);
  nets.F = std::make_shared<IdentityGenerator>(nan_generator());
  Trainer tr(nets, tiny_model(), tiny_train(), AugmentConfig{});
  std::mt19937_64 rng(4);
  const Batch bx = sample_batch(data().x, {8, 16, 16}, 1, AugmentConfig{}, Ablation::full, rng);
  const Batch by = sample_batch(data().y, {8, 16, 16}, 1, AugmentConfig{}, Ablation::full, rng);
  try {
    tr.train_step(bx, by);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("seg_F_sup") != std::string::npos);
  }
}

TEST_CASE("validation names the offending field") {
  TrainConfig cfg = tiny_train();
  cfg.patch_size = {8, 10, 16};
  try {
    validate(tiny_model(), cfg);
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(e.field() == "TrainConfig.patch_size");
  }
  ModelConfig big = tiny_model();
  big.image_discriminator.n_layers = 3;
  CHECK_THROWS_AS(validate(big, tiny_train()), ValidationError);
  CHECK_NOTHROW(validate(tiny_model(), tiny_train()));
}

TEST_CASE("log lines are JSON with nulls for absent terms") {
  StepResult r;
  r.losses = total_objective({1, 1, 1, 1, 1, 1, 1, 1}, Ablation::no_semi_sup);
  const std::string line = log_line(7, r);
  CHECK(line.find("\"iteration\":7") != std::string::npos);
  CHECK(line.find("\"struct_consistency\":null") != std::string::npos);
  CHECK(line.find("\"total\":5.0") != std::string::npos);
  CHECK(line.find('\n') == std::string::npos);
}
