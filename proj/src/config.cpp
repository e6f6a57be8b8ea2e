#include "cysgan/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <yaml-cpp/yaml.h>

namespace cysgan {

const char* const kVersion = "0.1.0";

using nlohmann::json;

namespace {

json shape_json(Shape3 s) { return json::array({s.z, s.y, s.x}); }

template <std::size_t N>
json array_json(const std::array<double, N>& a) {
  json j = json::array();
  for (double v : a) j.push_back(v);
  return j;
}

json style_json(const RenderStyle& s) {
  return {{"tone", {{"background", s.tone.background}, {"foreground", s.tone.foreground}, {"gamma", s.tone.gamma}}},
          {"texture_amplitude", s.texture_amplitude},
          {"background_texture", s.background_texture},
          {"rim_width", s.rim_width},
          {"rim_depth", s.rim_depth},
          {"halo_width", s.halo_width},
          {"halo_strength", s.halo_strength},
          {"blur_sigma", array_json(s.blur_sigma)},
          {"noise_sigma", s.noise_sigma}};
}

json generator_json(const nn::GeneratorConfig& g) {
  return {{"depth", g.depth},
          {"channels", g.channels},
          {"norm", to_string(g.norm)},
          {"in_channels", g.in_channels},
          {"out_channels", g.out_channels}};
}

json discriminator_json(const nn::DiscriminatorConfig& d) {
  return {{"in_channels", d.in_channels},
          {"n_layers", d.n_layers},
          {"base_channels", d.base_channels},
          {"norm", to_string(d.norm)},
          {"leaky_slope", d.leaky_slope}};
}

json spec_json(const std::optional<VolumeSpec>& s) {
  if (!s) return nullptr;
  return {{"path", s->path.string()}, {"container", to_string(s->container)}, {"key", s->dataset_key}};
}

std::string gan_mode_name(GanMode m) { return m == GanMode::lsgan ? "lsgan" : "log"; }

GanMode gan_mode_from(const std::string& s, const std::string& path) {
  if (s == "lsgan") return GanMode::lsgan;
  if (s == "log") return GanMode::log;
  throw ValidationError(path, "expected 'lsgan' or 'log', got '" + s + "'");
}

/// Overlays `patch` onto `base`, rejecting keys the base does not have.
void merge_strict(json& base, const json& patch, const std::string& path) {
  if (!patch.is_object() || !base.is_object()) {
    base = patch;
    return;
  }
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string p = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ValidationError(p, "unknown configuration key");
    merge_strict(base[it.key()], it.value(), p);
  }
}

/// Typed access into the merged document with path-qualified errors.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {}

  Reader operator[](const std::string& key) const {
    if (!j_.is_object() || !j_.contains(key)) throw ValidationError(sub(key), "missing key");
    return Reader(j_.at(key), sub(key));
  }

  template <typename T>
  T as() const {
    try {
      if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
        if (j_.is_number_float()) {
          const double v = j_.get<double>();
          if (v != static_cast<double>(static_cast<long long>(v))) throw ValidationError(path_, "expected an integer");
        }
      }
      return j_.get<T>();
    } catch (const json::exception& e) {
      throw ValidationError(path_, std::string("wrong type (") + e.what() + ")");
    }
  }

  Shape3 shape() const {
    const auto v = as<std::vector<Index>>();
    if (v.size() != 3) throw ValidationError(path_, "expected three extents (z, y, x)");
    return {v[0], v[1], v[2]};
  }

  template <std::size_t N>
  std::array<double, N> fixed() const {
    const auto v = as<std::vector<double>>();
    if (v.size() != N) throw ValidationError(path_, "expected " + std::to_string(N) + " numbers");
    std::array<double, N> a{};
    std::copy(v.begin(), v.end(), a.begin());
    return a;
  }

  template <typename F>
  auto parse(F&& from_string) const {
    const auto s = as<std::string>();
    try {
      return from_string(s);
    } catch (const ValidationError& e) {
      std::string msg = e.what();
      if (!e.field().empty()) msg.erase(0, e.field().size() + 2);
      throw ValidationError(path_, msg);
    }
  }

  bool is_null() const { return j_.is_null(); }
  const json& raw() const { return j_; }
  const std::string& path() const { return path_; }

 private:
  std::string sub(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  const json& j_;
  std::string path_;
};

RenderStyle read_style(const Reader& r) {
  RenderStyle s;
  s.tone.background = r["tone"]["background"].as<float>();
  s.tone.foreground = r["tone"]["foreground"].as<float>();
  s.tone.gamma = r["tone"]["gamma"].as<float>();
  s.texture_amplitude = r["texture_amplitude"].as<float>();
  s.background_texture = r["background_texture"].as<float>();
  s.rim_width = r["rim_width"].as<float>();
  s.rim_depth = r["rim_depth"].as<float>();
  s.halo_width = r["halo_width"].as<float>();
  s.halo_strength = r["halo_strength"].as<float>();
  s.blur_sigma = r["blur_sigma"].fixed<3>();
  s.noise_sigma = r["noise_sigma"].as<float>();
  return s;
}

nn::GeneratorConfig read_generator(const Reader& r) {
  nn::GeneratorConfig g;
  g.depth = r["depth"].as<int>();
  g.channels = r["channels"].as<std::vector<int>>();
  g.norm = r["norm"].parse(nn::norm_from_string);
  g.in_channels = r["in_channels"].as<int>();
  g.out_channels = r["out_channels"].as<int>();
  return g;
}

nn::DiscriminatorConfig read_discriminator(const Reader& r) {
  nn::DiscriminatorConfig d;
  d.in_channels = r["in_channels"].as<int>();
  d.n_layers = r["n_layers"].as<int>();
  d.base_channels = r["base_channels"].as<int>();
  d.norm = r["norm"].parse(nn::norm_from_string);
  d.leaky_slope = r["leaky_slope"].as<double>();
  return d;
}

std::optional<VolumeSpec> read_spec(const Reader& r, DtypeRole role) {
  if (r.is_null()) return std::nullopt;
  VolumeSpec s;
  s.role = role;
  if (r.raw().is_string()) {
    s.path = r.as<std::string>();
    return s;
  }
  if (!r.raw().is_object()) throw ValidationError(r.path(), "expected a path or {path, container, key}");
  for (auto it = r.raw().begin(); it != r.raw().end(); ++it)
    if (it.key() != "path" && it.key() != "container" && it.key() != "key")
      throw ValidationError(r.path() + "." + it.key(), "unknown configuration key");
  s.path = r["path"].as<std::string>();
  if (r.raw().contains("container")) s.container = r["container"].parse(container_from_string);
  if (r.raw().contains("key")) s.dataset_key = r["key"].as<std::string>();
  return s;
}

json yaml_to_json(const YAML::Node& n) {
  switch (n.Type()) {
    case YAML::NodeType::Null:
    case YAML::NodeType::Undefined:
      return nullptr;
    case YAML::NodeType::Sequence: {
      json a = json::array();
      for (const auto& e : n) a.push_back(yaml_to_json(e));
      return a;
    }
    case YAML::NodeType::Map: {
      json o = json::object();
      for (const auto& kv : n) o[kv.first.as<std::string>()] = yaml_to_json(kv.second);
      return o;
    }
    case YAML::NodeType::Scalar: {
      const std::string s = n.Scalar();
      if (n.Tag() == "!") return s;  // quoted
      if (s == "null" || s == "~") return nullptr;
      if (s == "true" || s == "false") return s == "true";
      long long i;
      if (YAML::convert<long long>::decode(n, i)) return i;
      double d;
      if (YAML::convert<double>::decode(n, d)) return d;
      return s;
    }
  }
  return nullptr;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (output_dir.empty()) throw ValidationError("output_dir", "must not be empty");
  phantom.validate();
  codec.validate();
  augment.validate();
  cysgan::validate(model, train);
  infer.validate();
  model.generator.check_patch(infer.patch_size, "InferConfig.patch_size");
  if (bench_methods.empty()) throw ValidationError("bench.methods", "at least one method is required");
}

BenchConfig ExperimentConfig::bench() const {
  BenchConfig b;
  b.model = model;
  b.train = train;
  b.augment = augment;
  b.codec = codec;
  b.infer = infer;
  b.methods = bench_methods;
  return b;
}

json to_json(const ExperimentConfig& c) {
  json methods = json::array();
  for (BenchMethod m : c.bench_methods) methods.push_back(to_string(m));
  const auto& t = c.train;
  return {
      {"output_dir", c.output_dir.string()},
      {"data",
       {{"x_image", spec_json(c.data.x_image)},
        {"x_labels", spec_json(c.data.x_labels)},
        {"y_image", spec_json(c.data.y_image)},
        {"y_labels", spec_json(c.data.y_labels)}}},
      {"phantom",
       {{"shape", shape_json(c.phantom.shape)},
        {"n_instances", c.phantom.n_instances},
        {"radius_range", array_json(c.phantom.radius_range)},
        {"z_radius_scale", c.phantom.z_radius_scale},
        {"allow_touching", c.phantom.allow_touching},
        {"touch_fraction", c.phantom.touch_fraction},
        {"style_a", style_json(c.phantom.style_a)},
        {"style_b", style_json(c.phantom.style_b)},
        {"seed", c.phantom.seed},
        {"voxel_size", {c.phantom.voxel_size.z, c.phantom.voxel_size.y, c.phantom.voxel_size.x}}}},
      {"codec",
       {{"contour_radius", array_json(c.codec.contour_radius)},
        {"d_clip_bg", c.codec.d_clip_bg},
        {"seeds", {{"b_min", c.codec.seeds.b_min}, {"c_max", c.codec.seeds.c_max}, {"d_min", c.codec.seeds.d_min}}},
        {"mask_threshold", c.codec.mask_threshold},
        {"min_instance_size", c.codec.min_instance_size},
        {"connectivity", static_cast<int>(c.codec.connectivity)}}},
      {"augment",
       {{"p_missing_section", c.augment.p_missing_section},
        {"p_blur_region", c.augment.p_blur_region},
        {"p_noise_region", c.augment.p_noise_region},
        {"max_region_fraction", c.augment.max_region_fraction},
        {"blur_sigma_range", array_json(c.augment.blur_sigma_range)},
        {"noise_sigma_range", array_json(c.augment.noise_sigma_range)},
        {"enable_flips_rotations", c.augment.enable_flips_rotations}}},
      {"model",
       {{"generator", generator_json(c.model.generator)},
        {"image_discriminator", discriminator_json(c.model.image_discriminator)},
        {"seg_discriminator", discriminator_json(c.model.seg_discriminator)}}},
      {"train",
       {{"patch_size", shape_json(t.patch_size)},
        {"batch_size", t.batch_size},
        {"iterations", t.iterations},
        {"optimizer",
         {{"lr", t.optimizer.lr}, {"betas", {t.optimizer.beta1, t.optimizer.beta2}}, {"eps", t.optimizer.eps}}},
        {"ablation", to_string(t.ablation)},
        {"image_pool_size", t.image_pool_size},
        {"seed", t.seed},
        {"checkpoint_every", t.checkpoint_every},
        {"eval_every", t.eval_every},
        {"gan_mode", gan_mode_name(t.gan_mode)}}},
      {"infer",
       {{"patch_size", shape_json(c.infer.patch_size)},
        {"stride", shape_json(c.infer.stride)},
        {"blend", to_string(c.infer.blend)},
        {"direction", to_string(c.infer.direction)}}},
      {"bench", {{"methods", methods}}},
  };
}

ExperimentConfig experiment_from_json(const json& doc) {
  if (!doc.is_null() && !doc.is_object()) throw ValidationError("", "configuration root must be a mapping");
  json merged = to_json(ExperimentConfig{});
  if (!doc.is_null()) merge_strict(merged, doc, "");
  const Reader r(merged, "");

  ExperimentConfig c;
  c.output_dir = r["output_dir"].as<std::string>();

  const Reader d = r["data"];
  c.data.x_image = read_spec(d["x_image"], DtypeRole::intensity);
  c.data.x_labels = read_spec(d["x_labels"], DtypeRole::label);
  c.data.y_image = read_spec(d["y_image"], DtypeRole::intensity);
  c.data.y_labels = read_spec(d["y_labels"], DtypeRole::label);

  const Reader p = r["phantom"];
  c.phantom.shape = p["shape"].shape();
  c.phantom.n_instances = p["n_instances"].as<int>();
  c.phantom.radius_range = p["radius_range"].fixed<2>();
  c.phantom.z_radius_scale = p["z_radius_scale"].as<double>();
  c.phantom.allow_touching = p["allow_touching"].as<bool>();
  c.phantom.touch_fraction = p["touch_fraction"].as<double>();
  c.phantom.style_a = read_style(p["style_a"]);
  c.phantom.style_b = read_style(p["style_b"]);
  c.phantom.seed = p["seed"].as<std::uint64_t>();
  const auto vs = p["voxel_size"].fixed<3>();
  c.phantom.voxel_size = {vs[0], vs[1], vs[2]};

  const Reader k = r["codec"];
  c.codec.contour_radius = k["contour_radius"].fixed<3>();
  c.codec.d_clip_bg = k["d_clip_bg"].as<double>();
  c.codec.seeds.b_min = k["seeds"]["b_min"].as<float>();
  c.codec.seeds.c_max = k["seeds"]["c_max"].as<float>();
  c.codec.seeds.d_min = k["seeds"]["d_min"].as<float>();
  c.codec.mask_threshold = k["mask_threshold"].as<float>();
  c.codec.min_instance_size = k["min_instance_size"].as<Index>();
  const int conn = k["connectivity"].as<int>();
  if (conn != 6 && conn != 26) throw ValidationError("codec.connectivity", "expected 6 or 26");
  c.codec.connectivity = static_cast<Connectivity>(conn);

  const Reader a = r["augment"];
  c.augment.p_missing_section = a["p_missing_section"].as<double>();
  c.augment.p_blur_region = a["p_blur_region"].as<double>();
  c.augment.p_noise_region = a["p_noise_region"].as<double>();
  c.augment.max_region_fraction = a["max_region_fraction"].as<double>();
  c.augment.blur_sigma_range = a["blur_sigma_range"].fixed<2>();
  c.augment.noise_sigma_range = a["noise_sigma_range"].fixed<2>();
  c.augment.enable_flips_rotations = a["enable_flips_rotations"].as<bool>();

  const Reader m = r["model"];
  c.model.generator = read_generator(m["generator"]);
  c.model.image_discriminator = read_discriminator(m["image_discriminator"]);
  c.model.seg_discriminator = read_discriminator(m["seg_discriminator"]);

  const Reader t = r["train"];
  c.train.patch_size = t["patch_size"].shape();
  c.train.batch_size = t["batch_size"].as<int>();
  c.train.iterations = t["iterations"].as<long long>();
  c.train.optimizer.lr = t["optimizer"]["lr"].as<double>();
  const auto betas = t["optimizer"]["betas"].fixed<2>();
  c.train.optimizer.beta1 = betas[0];
  c.train.optimizer.beta2 = betas[1];
  c.train.optimizer.eps = t["optimizer"]["eps"].as<double>();
  c.train.ablation = t["ablation"].parse(ablation_from_string);
  c.train.image_pool_size = t["image_pool_size"].as<int>();
  c.train.seed = t["seed"].as<std::uint64_t>();
  c.train.checkpoint_every = t["checkpoint_every"].as<long long>();
  c.train.eval_every = t["eval_every"].as<long long>();
  const std::string gm = t["gan_mode"].as<std::string>();
  c.train.gan_mode = gan_mode_from(gm, "train.gan_mode");

  const Reader i = r["infer"];
  c.infer.patch_size = i["patch_size"].shape();
  c.infer.stride = i["stride"].shape();
  c.infer.blend = i["blend"].parse(blend_from_string);
  c.infer.direction = i["direction"].parse(direction_from_string);

  c.bench_methods.clear();
  for (const auto& s : r["bench"]["methods"].as<std::vector<std::string>>()) {
    const BenchMethod bm = bench_method_from_string(s);
    c.bench_methods.push_back(bm);
  }
  return c;
}

json parse_yaml(const std::string& text) {
  try {
    return yaml_to_json(YAML::Load(text));
  } catch (const YAML::Exception& e) {
    throw ValidationError("", std::string("cannot parse configuration: ") + e.what());
  }
}

json load_config_document(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read configuration file " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return parse_yaml(s.str());
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ValidationError("--set", "expected key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  if (doc.is_null()) doc = json::object();
  json* node = &doc;
  std::size_t pos = 0;
  while (true) {
    const auto dot = key.find('.', pos);
    const std::string part = key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    if (part.empty()) throw ValidationError(key, "malformed override key");
    if (!node->is_object()) *node = json::object();
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    pos = dot + 1;
  }
  *node = parse_yaml(assignment.substr(eq + 1));
}

ExperimentConfig resolve_config(const std::optional<std::filesystem::path>& file,
                                const std::vector<std::string>& overrides) {
  json doc = file ? load_config_document(*file) : json::object();
  for (const auto& o : overrides) apply_override(doc, o);
  ExperimentConfig c = experiment_from_json(doc);
  c.validate();
  return c;
}

std::string config_hash(const ExperimentConfig& config) {
  const std::string text = std::string(kVersion) + "\n" + to_json(config).dump();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(text)));
  return buf;
}

}  // namespace cysgan
