#include <doctest.h>

#include <random>

#include "cysgan/infer.hpp"
#include "cysgan/phantom.hpp"
#include "support/stubs.hpp"

using namespace cysgan;
using namespace cysgan::test;

namespace {

IntensityVolume random_volume(Shape3 s, std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> u(0, 1);
  IntensityVolume v{Grid3<float>(s), {}};
  for (Index i = 0; i < v.data.size(); ++i) v.data[i] = u(rng);
  return v;
}

// Output depends only on the window origin, so overlapping windows disagree.
nn::Tensor<float> origin_output(Shape3 ps, const std::array<Index, 3>& o) {
  std::mt19937 rng(static_cast<std::uint32_t>(o[0] * 1000003 + o[1] * 1009 + o[2]));
  std::uniform_real_distribution<float> u(0.05f, 0.95f);
  nn::Tensor<float> t({1, 4, ps.z, ps.y, ps.x});
  for (Index i = 0; i < t.numel(); ++i) t.data[i] = u(rng);
  return t;
}

}  // namespace

TEST_CASE("window placement covers the volume") {
  CHECK(window_starts(10, 4, 4) == std::vector<Index>{0, 4, 6});
  CHECK(window_starts(8, 8, 3) == std::vector<Index>{0});
  CHECK(window_starts(9, 4, 2) == std::vector<Index>{0, 2, 4, 5});
  CHECK_THROWS_AS(window_starts(3, 4, 2), ValidationError);
  InferConfig bad;
  bad.stride = {8, 80, 32};
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("non-overlapping uniform windows tile the per-window outputs") {
  const Shape3 ps{4, 6, 5};
  InferConfig cfg{ps, ps, Blend::uniform, Direction::Y_to_X};
  const IntensityVolume vol = random_volume({8, 12, 15}, 1);
  const VolumePrediction p = sliding_window_predict(
      [&](const nn::Tensor<float>&, const std::array<Index, 3>& o) { return origin_output(ps, o); }, vol, cfg);
  for (Index z = 0; z < 8; ++z)
    for (Index y = 0; y < 12; ++y)
      for (Index x = 0; x < 15; ++x) {
        const std::array<Index, 3> o{z / 4 * 4, y / 6 * 6, x / 5 * 5};
        const nn::Tensor<float> t = origin_output(ps, o);
        CHECK(p.seg.b(z, y, x) == t.at(0, 1, z - o[0], y - o[1], x - o[2]));
        CHECK(p.seg.d(z, y, x) == t.at(0, 3, z - o[0], y - o[1], x - o[2]));
      }
}

TEST_CASE("a constant predictor blends to the same constant") {
  const IntensityVolume vol = random_volume({9, 20, 17}, 2);
  for (Blend blend : {Blend::gaussian, Blend::uniform})
    for (Shape3 stride : {Shape3{1, 3, 5}, Shape3{2, 4, 4}, Shape3{4, 8, 8}}) {
      const InferConfig cfg{{4, 8, 8}, stride, blend, Direction::Y_to_X};
      const VolumePrediction p = sliding_window_predict(IdentityGenerator(0.25f, 0.75f, -0.5f), vol, cfg);
      for (Index i = 0; i < vol.data.size(); ++i) {
        CHECK(p.seg.b[i] == doctest::Approx(0.25f).epsilon(1e-6));
        CHECK(p.seg.c[i] == doctest::Approx(0.75f).epsilon(1e-6));
        CHECK(p.seg.d[i] == doctest::Approx(-0.5f).epsilon(1e-6));
        // The identity image channel survives the [-1, 1] round trip.
        CHECK(p.image[i] == doctest::Approx(vol.data[i]).epsilon(1e-5));
      }
    }
}

TEST_CASE("gaussian blending is a normalized weighted average") {
  const Shape3 vs{10, 16, 16}, ps{4, 8, 8}, stride{2, 4, 4};
  const InferConfig cfg{ps, stride, Blend::gaussian, Direction::Y_to_X};
  const IntensityVolume vol = random_volume(vs, 3);
  const VolumePrediction p = sliding_window_predict(
      [&](const nn::Tensor<float>&, const std::array<Index, 3>& o) { return origin_output(ps, o); }, vol, cfg);

  // Independent accumulation: weights first, then normalized contributions.
  const Grid3<float> w = blend_weights(ps, Blend::gaussian);
  Grid3<double> wsum(vs, 0.0), norm_total(vs, 0.0), expect(vs, 0.0);
  const auto zs = window_starts(vs.z, ps.z, stride.z), ys = window_starts(vs.y, ps.y, stride.y),
             xs = window_starts(vs.x, ps.x, stride.x);
  for (int pass = 0; pass < 2; ++pass)
    for (Index z0 : zs)
      for (Index y0 : ys)
        for (Index x0 : xs) {
          const nn::Tensor<float> t = origin_output(ps, {z0, y0, x0});
          for (Index z = 0; z < ps.z; ++z)
            for (Index y = 0; y < ps.y; ++y)
              for (Index x = 0; x < ps.x; ++x) {
                const double wv = w(z, y, x);
                if (pass == 0) {
                  wsum(z0 + z, y0 + y, x0 + x) += wv;
                } else {
                  const double nw = wv / wsum(z0 + z, y0 + y, x0 + x);
                  norm_total(z0 + z, y0 + y, x0 + x) += nw;
                  expect(z0 + z, y0 + y, x0 + x) += nw * t.at(0, 1, z, y, x);
                }
              }
        }
  for (Index i = 0; i < wsum.size(); ++i) {
    CHECK(norm_total[i] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(p.seg.b[i] == doctest::Approx(expect[i]).epsilon(1e-5));
  }
}

TEST_CASE("segment_volume on an exact BCD predictor recovers the phantom") {
  PhantomConfig pc;
  pc.shape = {32, 48, 48};
  pc.n_instances = 10;
  pc.seed = 12;
  const Phantom ph = make_phantom(pc);
  const BcdTriple bcd = encode_bcd(ph.labels);
  const InferConfig cfg{{16, 32, 32}, {8, 16, 16}, Blend::gaussian, Direction::Y_to_X};
  const PatchPredictor exact = [&](const nn::Tensor<float>& patch, const std::array<Index, 3>& o) {
    const Shape3 ps = cfg.patch_size;
    nn::Tensor<float> t({1, 4, ps.z, ps.y, ps.x});
    const Grid3<float>* ch[3] = {&bcd.b, &bcd.c, &bcd.d};
    for (Index c = 0; c < 3; ++c) {
      const Grid3<float> g = crop(*ch[c], o, ps);
      std::copy(g.data(), g.data() + g.size(), t.channel_ptr(0, c + 1));
    }
    std::copy(patch.data.data(), patch.data.data() + patch.numel(), t.channel_ptr(0, 0));
    return t;
  };
  const SegmentResult r = segment_volume(exact, ph.domain_b, cfg, CodecParams{}, &ph.labels);
  REQUIRE(r.report.has_value());
  CHECK(r.report->ap50 == 1.0);
  CHECK(!segment_volume(exact, ph.domain_b, cfg, CodecParams{}).report.has_value());
}

TEST_CASE("direction selects the generator") {
  ModelConfig m;
  m.generator.depth = 2;
  m.generator.channels = {2, 2};
  const Networks nets = Networks::build(m, 1);
  CHECK(&pick_generator(nets, Direction::Y_to_X) == nets.B.get());
  CHECK(&pick_generator(nets, Direction::X_to_Y) == nets.F.get());
  CHECK(direction_from_string("X_to_Y") == Direction::X_to_Y);
  CHECK_THROWS_AS(blend_from_string("cosine"), ValidationError);
}
