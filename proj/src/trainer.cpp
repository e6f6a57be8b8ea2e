#include "cysgan/trainer.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace cysgan {

using nn::Tensor;
using nn::Var;

void validate(const ModelConfig& model, const TrainConfig& train) {
  model.generator.validate();
  model.image_discriminator.validate();
  model.seg_discriminator.validate();
  if (model.image_discriminator.in_channels != 1)
    throw ValidationError("ModelConfig.image_discriminator.in_channels", "image discriminators take 1 channel");
  if (model.seg_discriminator.in_channels != 3)
    throw ValidationError("ModelConfig.seg_discriminator.in_channels", "the segmentation discriminator takes 3 channels");
  model.generator.check_patch(train.patch_size, "TrainConfig.patch_size");
  const Index inplane = std::max(train.patch_size.y, train.patch_size.x);
  for (const auto* d : {&model.image_discriminator, &model.seg_discriminator})
    if (d->receptive_field() >= inplane)
      throw ValidationError("TrainConfig.patch_size", "discriminator receptive field (" + std::to_string(d->receptive_field()) +
                                                          ") must be smaller than the in-plane patch extent");
  if (train.batch_size < 1) throw ValidationError("TrainConfig.batch_size", "must be positive");
  if (train.iterations < 0) throw ValidationError("TrainConfig.iterations", "must be non-negative");
  if (!(train.optimizer.lr > 0)) throw ValidationError("TrainConfig.optimizer.lr", "must be positive");
  for (double b : {train.optimizer.beta1, train.optimizer.beta2})
    if (!(b >= 0 && b < 1)) throw ValidationError("TrainConfig.optimizer.betas", "must lie in [0, 1)");
  if (train.image_pool_size < 0) throw ValidationError("TrainConfig.image_pool_size", "must be non-negative");
  if (train.checkpoint_every < 0) throw ValidationError("TrainConfig.checkpoint_every", "must be non-negative");
  if (train.eval_every < 0) throw ValidationError("TrainConfig.eval_every", "must be non-negative");
}

SourceDomain make_source_domain(IntensityVolume image, LabelVolume labels, const CodecParams& codec) {
  if (image.shape() != labels.shape()) throw ValidationError("domain_x", "image and label volumes differ in shape");
  BcdTriple bcd = encode_bcd(labels, codec);
  return {std::move(image), std::move(labels), std::move(bcd)};
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  // splitmix64 over the combined state
  std::uint64_t z = base + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

namespace {

void write_channel(Tensor<float>& t, Index n, Index c, const Grid3<float>& g, float scale, float offset) {
  float* dst = t.channel_ptr(n, c);
  for (Index i = 0; i < g.size(); ++i) dst[i] = g[i] * scale + offset;
}

Batch sample_impl(const IntensityVolume& image, const SourceDomain* src, Shape3 patch, int batch_size,
                  const AugmentConfig& augment, Ablation ablation, std::mt19937_64& rng) {
  const Shape3 vs = image.shape();
  for (int a = 0; a < 3; ++a)
    if (patch[a] < 1 || patch[a] > vs[a])
      throw ValidationError("TrainConfig.patch_size", "patch does not fit inside the volume");
  const Index N = batch_size;
  Batch b;
  b.augmented = Tensor<float>({N, 1, patch.z, patch.y, patch.x});
  b.clean = b.augmented;
  if (src) b.bcd = Tensor<float>({N, 3, patch.z, patch.y, patch.x});
  for (Index n = 0; n < N; ++n) {
    std::array<Index, 3> origin{};
    for (int a = 0; a < 3; ++a)
      origin[a] = std::uniform_int_distribution<Index>(0, vs[a] - patch[a])(rng);
    const std::uint64_t spatial_seed = rng(), corrupt_seed = rng();
    const SpatialTransform t =
        augment.enable_flips_rotations ? SpatialTransform::random(spatial_seed, patch) : SpatialTransform{};
    const Grid3<float> clean = apply_transform(crop(image.data, origin, patch), t);
    PatchPair pair;
    if (ablation == Ablation::no_augment) {
      pair = {clean, clean, Grid3<std::uint8_t>(patch, 0), std::nullopt};
    } else {
      pair = corrupt(clean, augment, corrupt_seed);
    }
    write_channel(b.augmented, n, 0, pair.augmented, 2.f, -1.f);
    write_channel(b.clean, n, 0, pair.clean, 2.f, -1.f);
    if (src) {
      b.labels.push_back(apply_transform(crop(src->labels.data, origin, patch), t));
      write_channel(*b.bcd, n, 0, apply_transform(crop(src->bcd.b, origin, patch), t), 1.f, 0.f);
      write_channel(*b.bcd, n, 1, apply_transform(crop(src->bcd.c, origin, patch), t), 1.f, 0.f);
      write_channel(*b.bcd, n, 2, apply_transform(crop(src->bcd.d, origin, patch), t), 1.f, 0.f);
    }
    b.corruption_masks.push_back(std::move(pair.corruption_mask));
    b.origins.push_back(origin);
  }
  return b;
}

}  // namespace

Batch sample_batch(const SourceDomain& x, Shape3 patch, int batch_size, const AugmentConfig& augment, Ablation ablation,
                   std::mt19937_64& rng) {
  return sample_impl(x.image, &x, patch, batch_size, augment, ablation, rng);
}

Batch sample_batch(const TargetDomain& y, Shape3 patch, int batch_size, const AugmentConfig& augment, Ablation ablation,
                   std::mt19937_64& rng) {
  return sample_impl(y.image, nullptr, patch, batch_size, augment, ablation, rng);
}

Tensor<float> ImagePool::query(const Tensor<float>& fake, std::mt19937_64& rng) {
  if (capacity_ <= 0) return fake;
  if (static_cast<int>(images_.size()) < capacity_) {
    images_.push_back(fake);
    return fake;
  }
  if (std::uniform_real_distribution<double>(0, 1)(rng) < 0.5) return fake;
  const auto k = static_cast<std::size_t>(std::uniform_int_distribution<int>(0, capacity_ - 1)(rng));
  Tensor<float> old = std::move(images_[k]);
  images_[k] = fake;
  return old;
}

Networks Networks::build(const ModelConfig& model, std::uint64_t seed) {
  Networks n;
  n.F = std::make_shared<nn::UNetGenerator<float>>(model.generator, derive_seed(seed, 1));
  n.B = std::make_shared<nn::UNetGenerator<float>>(model.generator, derive_seed(seed, 2));
  n.DXI = std::make_shared<nn::PatchDiscriminator<float>>(model.image_discriminator, derive_seed(seed, 3));
  n.DYI = std::make_shared<nn::PatchDiscriminator<float>>(model.image_discriminator, derive_seed(seed, 4));
  n.DXS = std::make_shared<nn::PatchDiscriminator<float>>(model.seg_discriminator, derive_seed(seed, 5));
  return n;
}

Trainer::Trainer(const ModelConfig& model, const TrainConfig& train, const AugmentConfig& augment)
    : Trainer(Networks::build(model, train.seed), model, train, augment) {}

Trainer::Trainer(Networks nets, const ModelConfig& model, const TrainConfig& train, const AugmentConfig& augment)
    : model_(model),
      train_(train),
      augment_(augment),
      nets_(std::move(nets)),
      pool_x_(train.image_pool_size),
      pool_y_(train.image_pool_size),
      pool_seg_(train.image_pool_size),
      rng_(derive_seed(train.seed, 0)) {
  augment_.validate();
  init_optimizers();
}

void Trainer::init_optimizers() {
  std::vector<Var<float>> gen = nets_.F->parameters();
  for (const auto& p : nets_.B->parameters()) gen.push_back(p);
  opt_gen_ = nn::Adam<float>(gen, train_.optimizer);
  opt_dxi_ = nn::Adam<float>(nets_.DXI->parameters(), train_.optimizer);
  opt_dyi_ = nn::Adam<float>(nets_.DYI->parameters(), train_.optimizer);
  opt_dxs_ = nn::Adam<float>(nets_.DXS->parameters(), train_.optimizer);
}

GeneratorGraph Trainer::generator_graph(const Batch& x, const Batch& y) const {
  if (!x.bcd) throw ValidationError("batch_x", "source batches must carry labels");
  if (y.bcd) throw ValidationError("batch_y", "target batches must not carry labels");
  const Ablation ab = train_.ablation;
  const GanMode mode = train_.gan_mode;
  const Var<float> x_aug(x.augmented), x_clean(x.clean), target(*x.bcd);
  const Var<float> y_aug(y.augmented), y_clean(y.clean);

  GeneratorGraph g;
  // X branch
  const auto fx = nn::GeneratorOutput<float>::split(nets_.F->forward(x_aug));
  g.y_hat = fx.image;
  const Var<float> x_rec = nn::GeneratorOutput<float>::split(nets_.B->forward(g.y_hat)).image;
  // Y branch
  const auto by = nn::GeneratorOutput<float>::split(nets_.B->forward(y_aug));
  g.x_hat = by.image;
  g.ys_direct = by.seg;
  const auto fr = nn::GeneratorOutput<float>::split(nets_.F->forward(g.x_hat));
  g.ys_round = fr.seg;

  g[LossTerm::gan_F_img] = gan_generator_loss(nets_.DYI->forward(g.y_hat), mode);
  g[LossTerm::gan_B_img] = gan_generator_loss(nets_.DXI->forward(g.x_hat), mode);
  g[LossTerm::cycle] = nn::add(cycle_loss(x_rec, x_clean), cycle_loss(fr.image, y_clean));
  if (term_active(LossTerm::seg_F_sup, ab)) {
    g[LossTerm::seg_F_sup] = supervised_seg_loss(fx.seg, target);
    // The synthesized image is detached so this term cannot reach F.
    const auto b_det = nn::GeneratorOutput<float>::split(nets_.B->forward(nn::detach(g.y_hat)));
    g[LossTerm::seg_B_sup] = supervised_seg_loss(b_det.seg, target);
  }
  if (term_active(LossTerm::struct_consistency, ab)) {
    g[LossTerm::struct_consistency] = structural_consistency_loss(g.ys_direct, g.ys_round);
    g[LossTerm::gan_B_seg] = gan_generator_loss(nets_.DXS->forward(g.ys_direct), mode);
    g[LossTerm::gan_F_seg] = gan_generator_loss(nets_.DXS->forward(g.ys_round), mode);
  }
  for (LossTerm t : kAllTerms) {
    const Var<float>& v = g[t];
    if (!v.defined()) continue;
    g.total = g.total.defined() ? nn::add(g.total, v) : v;
  }
  return g;
}

StepResult Trainer::train_step(const Batch& x, const Batch& y) {
  const auto t0 = std::chrono::steady_clock::now();
  const Ablation ab = train_.ablation;
  const GanMode mode = train_.gan_mode;
  StepResult r;

  // Generators, with the discriminators frozen.
  nets_.DXI->set_requires_grad(false);
  nets_.DYI->set_requires_grad(false);
  nets_.DXS->set_requires_grad(false);
  opt_gen_.zero_grad();
  GeneratorGraph g = generator_graph(x, y);
  std::array<double, 8> parts{};
  for (LossTerm t : kAllTerms) {
    const Var<float>& v = g[t];
    if (!v.defined()) continue;
    const double value = v.item();
    if (!std::isfinite(value))
      throw Error(std::string("non-finite loss term ") + term_name(t) + " at iteration " + std::to_string(iteration_));
    parts[static_cast<std::size_t>(t)] = value;
  }
  r.losses = total_objective(parts, ab);
  nn::backward(g.total);
  opt_gen_.step();

  nets_.DXI->set_requires_grad(true);
  nets_.DYI->set_requires_grad(true);
  nets_.DXS->set_requires_grad(true);
  const auto disc_step = [&](nn::Adam<float>& opt, const Var<float>& loss) {
    const double v = loss.item();
    if (!std::isfinite(v)) throw Error("non-finite discriminator loss at iteration " + std::to_string(iteration_));
    opt.zero_grad();
    nn::backward(loss);
    opt.step();
    return v;
  };
  {
    const Var<float> fake(pool_y_.query(g.y_hat.value(), rng_));
    r.d_Y_img = disc_step(opt_dyi_, gan_discriminator_loss(nets_.DYI->forward(Var<float>(y.clean)),
                                                           nets_.DYI->forward(fake), mode));
  }
  {
    const Var<float> fake(pool_x_.query(g.x_hat.value(), rng_));
    r.d_X_img = disc_step(opt_dxi_, gan_discriminator_loss(nets_.DXI->forward(Var<float>(x.clean)), nets_.DXI->forward(fake), mode));
  }
  if (term_active(LossTerm::gan_B_seg, ab)) {
    const Var<float> f1(pool_seg_.query(g.ys_direct.value(), rng_));
    const Var<float> f2(pool_seg_.query(g.ys_round.value(), rng_));
    const Var<float> real_scores = nets_.DXS->forward(Var<float>(*x.bcd));
    const Var<float> loss = nn::scale(nn::add(gan_discriminator_loss(real_scores, nets_.DXS->forward(f1), mode),
                                              gan_discriminator_loss(real_scores, nets_.DXS->forward(f2), mode)),
                                      0.5f);
    r.d_X_seg = disc_step(opt_dxs_, loss);
  }
  ++iteration_;
  r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

std::string log_line(long long iteration, const StepResult& r) {
  nlohmann::ordered_json j;
  j["iteration"] = iteration;
  for (LossTerm t : kAllTerms) {
    const auto& v = r.losses[t];
    j[term_name(t)] = v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
  }
  j["total"] = r.losses.total;
  const auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr); };
  j["d_X_img"] = opt(r.d_X_img);
  j["d_Y_img"] = opt(r.d_Y_img);
  j["d_X_seg"] = opt(r.d_X_seg);
  j["wall_time"] = r.wall_time;
  return j.dump();
}

void Trainer::train(const SourceDomain& x, const TargetDomain& y, std::ostream* log,
                    const std::optional<std::filesystem::path>& checkpoint_dir, const EvalHook& on_eval) {
  validate(model_, train_);
  if (checkpoint_dir) std::filesystem::create_directories(*checkpoint_dir);
  while (iteration_ < train_.iterations) {
    const Batch bx = sample_batch(x, train_.patch_size, train_.batch_size, augment_, train_.ablation, rng_);
    const Batch by = sample_batch(y, train_.patch_size, train_.batch_size, augment_, train_.ablation, rng_);
    const StepResult r = train_step(bx, by);
    if (log) *log << log_line(iteration_, r) << '\n' << std::flush;
    if (checkpoint_dir && train_.checkpoint_every > 0 && iteration_ % train_.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "checkpoint_%08lld.bin", iteration_);
      save_checkpoint(*checkpoint_dir / name);
    }
    if (on_eval && train_.eval_every > 0 && iteration_ % train_.eval_every == 0) on_eval(*this, iteration_);
  }
  if (checkpoint_dir) save_checkpoint(*checkpoint_dir / "final.bin");
}

std::uint64_t Trainer::config_hash() const {
  std::ostringstream s;
  s.precision(17);
  const auto gen = [&](const nn::GeneratorConfig& g) {
    s << "gen:" << g.depth << ':' << nn::to_string(g.norm) << ':' << g.in_channels << ':' << g.out_channels;
    for (int c : g.channels) s << ',' << c;
    s << ';';
  };
  const auto disc = [&](const nn::DiscriminatorConfig& d) {
    s << "disc:" << d.in_channels << ':' << d.n_layers << ':' << d.base_channels << ':' << nn::to_string(d.norm) << ':'
      << d.leaky_slope << ';';
  };
  gen(model_.generator);
  disc(model_.image_discriminator);
  disc(model_.seg_discriminator);
  s << "train:" << train_.patch_size.z << ',' << train_.patch_size.y << ',' << train_.patch_size.x << ':'
    << train_.batch_size << ':' << train_.optimizer.lr << ',' << train_.optimizer.beta1 << ',' << train_.optimizer.beta2
    << ',' << train_.optimizer.eps << ':' << to_string(train_.ablation) << ':' << train_.image_pool_size << ':'
    << train_.seed << ':' << static_cast<int>(train_.gan_mode) << ';';
  return fnv1a(s.str());
}

namespace {

constexpr char kMagic[8] = {'C', 'Y', 'S', 'G', 'A', 'N', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(const std::filesystem::path& p) : out_(p, std::ios::binary) {
    if (!out_) throw IoError("cannot write checkpoint " + p.string());
  }
  template <typename T>
  void pod(const T& v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void vec(const Eigen::VectorXf& v) {
    pod<std::int64_t>(v.size());
    out_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
  }
  void tensor(const Tensor<float>& t) {
    for (Index d : t.shape) pod<std::int64_t>(d);
    vec(t.data);
  }
  void finish() {
    out_.flush();
    if (!out_) throw IoError("checkpoint write failed");
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& p) : in_(p, std::ios::binary) {
    if (!in_) throw IoError("cannot read checkpoint " + p.string());
  }
  template <typename T>
  T pod() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in_) throw IoError("truncated checkpoint");
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    if (n > (1u << 26)) throw IoError("corrupt checkpoint string");
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    if (!in_) throw IoError("truncated checkpoint");
    return s;
  }
  Eigen::VectorXf vec() {
    const auto n = pod<std::int64_t>();
    if (n < 0 || n > (Index{1} << 34)) throw IoError("corrupt checkpoint vector");
    Eigen::VectorXf v(n);
    in_.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (!in_) throw IoError("truncated checkpoint");
    return v;
  }
  Tensor<float> tensor() {
    Tensor<float> t;
    for (Index& d : t.shape) d = pod<std::int64_t>();
    t.data = vec();
    if (t.data.size() != nn::numel(t.shape)) throw IoError("corrupt checkpoint tensor");
    return t;
  }

 private:
  std::ifstream in_;
};

std::vector<std::pair<std::string, const nn::Module<float>*>> modules(const Networks& n) {
  return {{"F", n.F.get()}, {"B", n.B.get()}, {"DXI", n.DXI.get()}, {"DYI", n.DYI.get()}, {"DXS", n.DXS.get()}};
}

}  // namespace

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    Writer w(tmp);
    w.pod(kMagic);
    w.pod(kVersion);
    w.pod(config_hash());
    w.pod<std::int64_t>(iteration_);
    std::ostringstream rs;
    rs << rng_;
    w.str(rs.str());
    for (const auto& [name, m] : modules(nets_)) {
      const auto params = m->named_parameters();
      w.str(name);
      w.pod<std::uint64_t>(params.size());
      for (const auto& p : params) {
        w.str(p.name);
        w.tensor(p.var.value());
      }
    }
    for (const nn::Adam<float>* o : {&opt_gen_, &opt_dxi_, &opt_dyi_, &opt_dxs_}) {
      w.pod<std::int64_t>(o->step_count());
      w.pod<std::uint64_t>(o->first_moments().size());
      for (std::size_t k = 0; k < o->first_moments().size(); ++k) {
        w.vec(o->first_moments()[k]);
        w.vec(o->second_moments()[k]);
      }
    }
    for (const ImagePool* pool : {&pool_x_, &pool_y_, &pool_seg_}) {
      w.pod<std::uint64_t>(pool->images().size());
      for (const auto& t : pool->images()) w.tensor(t);
    }
    w.finish();
  }
  std::filesystem::rename(tmp, path);
}

void Trainer::load_checkpoint(const std::filesystem::path& path) {
  Reader r(path);
  const auto magic = r.pod<std::array<char, 8>>();
  if (std::memcmp(magic.data(), kMagic, 8) != 0) throw IoError(path.string() + " is not a checkpoint");
  if (r.pod<std::uint32_t>() != kVersion) throw IoError("unsupported checkpoint version");
  if (r.pod<std::uint64_t>() != config_hash())
    throw Error("checkpoint " + path.string() + " was written under a different configuration");
  const auto iteration = r.pod<std::int64_t>();
  std::istringstream rs(r.str());
  std::mt19937_64 rng;
  rs >> rng;
  if (!rs) throw IoError("corrupt RNG state in checkpoint");

  // Read everything first so a failure leaves the trainer untouched.
  std::vector<std::vector<Tensor<float>>> values;
  for (const auto& [name, m] : modules(nets_)) {
    if (r.str() != name) throw IoError("checkpoint network order mismatch");
    const auto params = m->named_parameters();
    if (r.pod<std::uint64_t>() != params.size()) throw IoError("checkpoint parameter count mismatch for " + name);
    std::vector<Tensor<float>> vals;
    for (const auto& p : params) {
      if (r.str() != p.name) throw IoError("checkpoint parameter name mismatch in " + name);
      Tensor<float> t = r.tensor();
      if (t.shape != p.var.value().shape) throw IoError("checkpoint shape mismatch for " + name + "." + p.name);
      vals.push_back(std::move(t));
    }
    values.push_back(std::move(vals));
  }
  struct OptState {
    long long t;
    std::vector<Eigen::VectorXf> m, v;
  };
  std::vector<OptState> opts;
  for (nn::Adam<float>* o : {&opt_gen_, &opt_dxi_, &opt_dyi_, &opt_dxs_}) {
    OptState s{r.pod<std::int64_t>(), {}, {}};
    const auto n = r.pod<std::uint64_t>();
    if (n != o->first_moments().size()) throw IoError("checkpoint optimizer size mismatch");
    for (std::uint64_t k = 0; k < n; ++k) {
      s.m.push_back(r.vec());
      s.v.push_back(r.vec());
      if (s.m.back().size() != o->first_moments()[k].size()) throw IoError("checkpoint optimizer moment mismatch");
    }
    opts.push_back(std::move(s));
  }
  std::vector<std::vector<Tensor<float>>> pools;
  for (int k = 0; k < 3; ++k) {
    const auto n = r.pod<std::uint64_t>();
    std::vector<Tensor<float>> imgs;
    for (std::uint64_t i = 0; i < n; ++i) imgs.push_back(r.tensor());
    pools.push_back(std::move(imgs));
  }

  std::size_t mi = 0;
  for (const auto& [name, m] : modules(nets_)) {
    const auto params = m->named_parameters();
    for (std::size_t k = 0; k < params.size(); ++k) {
      Var<float> v = params[k].var;
      v.mutable_value() = std::move(values[mi][k]);
    }
    ++mi;
  }
  std::size_t oi = 0;
  for (nn::Adam<float>* o : {&opt_gen_, &opt_dxi_, &opt_dyi_, &opt_dxs_}) {
    o->set_step_count(opts[oi].t);
    o->first_moments() = std::move(opts[oi].m);
    o->second_moments() = std::move(opts[oi].v);
    ++oi;
  }
  pool_x_.images() = std::move(pools[0]);
  pool_y_.images() = std::move(pools[1]);
  pool_seg_.images() = std::move(pools[2]);
  iteration_ = iteration;
  rng_ = rng;
}

}  // namespace cysgan
