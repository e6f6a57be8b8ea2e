#include <doctest.h>

#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "cysgan/config.hpp"
#include "support/temp_dir.hpp"

using namespace cysgan;
using nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

json read_json(const std::filesystem::path& p) {
  std::ifstream f(p);
  return json::parse(f);
}

/// Small phantom and a model small enough to train a few steps in a test.
std::vector<std::string> tiny(const std::filesystem::path& out) {
  return {"-o", out.string(),
          "--set", "phantom.shape=[16,48,48]",
          "--set", "phantom.n_instances=5",
          "--set", "model.generator.depth=3",
          "--set", "model.generator.channels=[4,6,8]",
          "--set", "model.image_discriminator.n_layers=1",
          "--set", "model.image_discriminator.base_channels=4",
          "--set", "model.seg_discriminator.n_layers=1",
          "--set", "model.seg_discriminator.base_channels=4",
          "--set", "train.patch_size=[8,16,16]",
          "--set", "train.iterations=2",
          "--set", "infer.patch_size=[8,16,16]",
          "--set", "infer.stride=[8,16,16]"};
}

std::vector<std::string> cat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_CASE("default configuration survives a JSON round trip") {
  const ExperimentConfig c;
  const json j = to_json(c);
  CHECK(to_json(experiment_from_json(j)) == j);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("YAML documents, overrides and strict keys") {
  const json doc = parse_yaml(R"(
output_dir: "runs/x"
train:
  patch_size: [16, 32, 32]
  ablation: no_semi_sup
  optimizer: {lr: 0.001, betas: [0.9, 0.99]}
model:
  image_discriminator: {n_layers: 2}
  seg_discriminator: {n_layers: 2}
data:
  x_image: some/where.h5
  y_image: {path: stack_dir, container: tiff-stack}
bench:
  methods: [cysgan, cyclegan_segm]
)");
  ExperimentConfig c = experiment_from_json(doc);
  CHECK(c.output_dir == "runs/x");
  CHECK(c.train.patch_size == Shape3{16, 32, 32});
  CHECK(c.train.ablation == Ablation::no_semi_sup);
  CHECK(c.train.optimizer.lr == doctest::Approx(1e-3));
  CHECK(c.train.optimizer.beta1 == doctest::Approx(0.9));
  CHECK(c.train.batch_size == TrainConfig{}.batch_size);
  REQUIRE(c.data.x_image);
  CHECK(c.data.x_image->path == "some/where.h5");
  CHECK(c.data.x_image->container == Container::hdf5);
  REQUIRE(c.data.y_image);
  CHECK(c.data.y_image->container == Container::tiff_stack);
  CHECK_FALSE(c.data.x_labels);
  CHECK(c.bench_methods == std::vector<BenchMethod>{BenchMethod::cysgan, BenchMethod::cyclegan_segm});

  json d2 = doc;
  apply_override(d2, "train.batch_size=3");
  apply_override(d2, "infer.direction=X_to_Y");
  apply_override(d2, "phantom.seed=42");
  c = experiment_from_json(d2);
  CHECK(c.train.batch_size == 3);
  CHECK(c.infer.direction == Direction::X_to_Y);
  CHECK(c.phantom.seed == 42);

  auto field_of = [](const json& j) {
    try {
      (void)experiment_from_json(j);
    } catch (const ValidationError& e) {
      return e.field();
    }
    return std::string("<none>");
  };
  CHECK(field_of(parse_yaml("train: {batchsize: 2}")) == "train.batchsize");
  CHECK(field_of(parse_yaml("train: {batch_size: two}")) == "train.batch_size");
  CHECK(field_of(parse_yaml("train: {batch_size: 1.5}")) == "train.batch_size");
  CHECK(field_of(parse_yaml("train: {patch_size: [8, 8]}")) == "train.patch_size");
  CHECK(field_of(parse_yaml("model: {generator: {norm: layer}}")) == "model.generator.norm");
  CHECK(field_of(parse_yaml("bench: {methods: [magic]}")) == "bench.methods");
  CHECK_THROWS_AS(apply_override(d2, "novalue"), ValidationError);
}

TEST_CASE("cross-field validation names the offending field") {
  json doc = json::object();
  apply_override(doc, "train.patch_size=[8,10,16]");
  try {
    (void)resolve_config(std::nullopt, {"train.patch_size=[8,10,16]"});
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(e.field() == "TrainConfig.patch_size");
  }
  CHECK_THROWS_AS(resolve_config(std::nullopt, {"infer.stride=[8,80,32]"}), ValidationError);
}

TEST_CASE("config hash tracks the resolved configuration") {
  ExperimentConfig a, b;
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a).size() == 16);
  b.train.seed = 1;
  CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("synth, encode, decode and eval compose to a perfect score") {
  test::TempDir tmp;
  const auto out = tmp / "run";
  const std::vector<std::string> base{"-o", out.string(), "--set", "phantom.shape=[24,48,48]", "--set",
                                      "phantom.n_instances=8"};
  for (const char* sub : {"synth", "encode", "decode"}) {
    const Run r = invoke(cat({sub}, base));
    INFO(sub << ": " << r.err);
    REQUIRE(r.code == 0);
    CHECK(std::filesystem::exists(out / sub / "resolved_config.json"));
  }
  const Run r = invoke(cat({"eval", "--plot", "--bcd", (out / "encode" / "bcd.h5").string()}, base));
  INFO(r.err);
  REQUIRE(r.code == 0);
  const json report = read_json(out / "eval" / "report.json");
  CHECK(report["ap50"].get<double>() == 1.0);
  CHECK(report["fp"] == 0);
  CHECK(report["fn"] == 0);
  CHECK(std::filesystem::exists(out / "eval" / "pr_curve.svg"));
  CHECK(r.out.find("AP-50 1.0000") != std::string::npos);

  const json snap = read_json(out / "eval" / "resolved_config.json");
  CHECK(snap["config"]["phantom"]["n_instances"] == 8);
  CHECK(snap["config_hash"].get<std::string>().size() == 16);
}

TEST_CASE("an invalid patch size fails validation before anything is written") {
  test::TempDir tmp;
  const auto out = tmp / "never";
  const Run r = invoke({"train", "-o", out.string(), "--set", "train.patch_size=[8,10,16]"});
  CHECK(r.code == 2);
  CHECK(r.err.find("TrainConfig.patch_size") != std::string::npos);
  CHECK_FALSE(std::filesystem::exists(out));
}

TEST_CASE("usage and runtime errors map to exit codes") {
  test::TempDir tmp;
  CHECK(invoke({}).code == 2);
  CHECK(invoke({"transmogrify"}).code == 2);
  CHECK(invoke({"synth", "--set", "no_such_key=1", "-o", (tmp / "a").string()}).code == 2);
  const Run missing = invoke({"decode", "-o", (tmp / "b").string()});
  CHECK(missing.code == 1);
  CHECK_FALSE(std::filesystem::exists(tmp / "b" / "decode"));
  CHECK(invoke({"--help"}).code == 0);
}

TEST_CASE("synth is reproducible") {
  test::TempDir tmp;
  const std::vector<std::string> opts{"--set", "phantom.shape=[16,32,32]", "--set", "phantom.n_instances=4"};
  REQUIRE(invoke(cat({"synth", "-o", (tmp / "a").string()}, opts)).code == 0);
  REQUIRE(invoke(cat({"synth", "-o", (tmp / "b").string()}, opts)).code == 0);
  for (const char* name : {"x_image.h5", "y_image.h5"}) {
    const auto a = load_intensity({tmp / "a" / "synth" / name});
    const auto b = load_intensity({tmp / "b" / "synth" / name});
    CHECK(a.data == b.data);
  }
  const auto bytes = [](const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), {});
  };
  for (const char* name : {"x_image.h5", "x_labels.h5", "y_image.h5", "y_labels.h5"})
    CHECK(bytes(tmp / "a" / "synth" / name) == bytes(tmp / "b" / "synth" / name));
  CHECK(load_labels({tmp / "a" / "synth" / "x_labels.h5", Container::hdf5, "main", DtypeRole::label}).data ==
        load_labels({tmp / "b" / "synth" / "x_labels.h5", Container::hdf5, "main", DtypeRole::label}).data);
}

TEST_CASE("train, infer, histmatch and augment-preview on a tiny model") {
  test::TempDir tmp;
  const auto out = tmp / "run";
  const auto opts = tiny(out);
  REQUIRE(invoke(cat({"synth"}, opts)).code == 0);
  Run r = invoke(cat({"train", "--set", "train.checkpoint_every=1"}, opts));
  INFO(r.err);
  REQUIRE(r.code == 0);
  CHECK(std::filesystem::exists(out / "train" / "final.bin"));
  CHECK(std::filesystem::exists(out / "train" / "checkpoints" / "checkpoint_00000001.bin"));
  std::ifstream log(out / "train" / "log.jsonl");
  int lines = 0;
  for (std::string line; std::getline(log, line);) {
    CHECK(json::parse(line).contains("total"));
    ++lines;
  }
  CHECK(lines == 2);

  r = invoke(cat({"infer", "--plot"}, opts));
  INFO(r.err);
  REQUIRE(r.code == 0);
  for (const char* f : {"translated.h5", "bcd.h5", "labels.h5", "report.json", "pr_curve.svg"})
    CHECK(std::filesystem::exists(out / "infer" / f));
  const auto translated = load_intensity({out / "infer" / "translated.h5"});
  CHECK(translated.shape() == Shape3{16, 48, 48});

  r = invoke(cat({"infer", "--set", "train.seed=5"}, opts));
  CHECK(r.code == 1);  // checkpoint written under a different configuration

  r = invoke(cat({"histmatch"}, opts));
  REQUIRE(r.code == 0);
  CHECK(read_json(out / "histmatch" / "report.json")["ks_after"].get<double>() <= 0.02);

  r = invoke(cat({"augment-preview", "--count", "2", "--set", "augment.p_missing_section=1"}, opts));
  REQUIRE(r.code == 0);
  const json previews = read_json(out / "augment-preview" / "previews.json");
  REQUIRE(previews.size() == 2);
  CHECK(previews[0]["corrupted_voxels"].get<long long>() >= 16 * 16);
}

TEST_CASE("bench writes one row per method") {
  test::TempDir tmp;
  const auto out = tmp / "run";
  const auto opts = cat(tiny(out), {"--set", "bench.methods=[histogram_y_to_x,cysgan_no_semi_sup]"});
  REQUIRE(invoke(cat({"synth"}, opts)).code == 0);
  const Run r = invoke(cat({"bench", "--plot"}, opts));
  INFO(r.err);
  REQUIRE(r.code == 0);
  const json results = read_json(out / "bench" / "results.json");
  REQUIRE(results.size() == 2);
  CHECK(results[0]["name"] == "Histogram + Segm (Y->X)");
  CHECK(results[1]["name"] == "CySGAN w/o Semi-sup");
  for (const auto& row : results) CHECK(row["ap50"].get<double>() >= 0.0);
  std::ifstream md(out / "bench" / "results.md");
  std::string text((std::istreambuf_iterator<char>(md)), {});
  CHECK(text.find("| Method | AP-50 (Y) |") == 0);
  CHECK(text.find("| CySGAN w/o Semi-sup |") != std::string::npos);
  CHECK(std::filesystem::exists(out / "bench" / "pr_curves.svg"));
}

TEST_CASE("shipped example configurations resolve") {
  for (const char* name : {"phantom_bench.yaml", "quick.yaml"}) {
    INFO(name);
    const ExperimentConfig c = resolve_config(std::filesystem::path(CYSGAN_CONFIG_DIR) / name, {});
    CHECK_NOTHROW(c.validate());
  }
}
