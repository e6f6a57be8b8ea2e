#include <hdf5.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "cysgan/volume.hpp"
#include "detail/tiff.hpp"

namespace cysgan {
namespace fs = std::filesystem;
namespace {

constexpr const char* kFixedScaleTag = "normalization=fixed";

/// Owns an HDF5 identifier.
class H5Handle {
 public:
  using Closer = herr_t (*)(hid_t);
  H5Handle(hid_t id, Closer closer) : id_(id), closer_(closer) {}
  H5Handle(const H5Handle&) = delete;
  H5Handle& operator=(const H5Handle&) = delete;
  H5Handle(H5Handle&& o) noexcept : id_(o.id_), closer_(o.closer_) { o.id_ = -1; }
  ~H5Handle() {
    if (id_ >= 0) closer_(id_);
  }
  hid_t get() const { return id_; }
  bool valid() const { return id_ >= 0; }

 private:
  hid_t id_;
  Closer closer_;
};

void silence_hdf5() {
  static const bool done = [] {
    H5Eset_auto2(H5E_DEFAULT, nullptr, nullptr);
    return true;
  }();
  (void)done;
}

/// Dataset creation without modification times, so identical data gives identical files.
H5Handle untimed_dcpl() {
  H5Handle p(H5Pcreate(H5P_DATASET_CREATE), H5Pclose);
  H5Pset_obj_track_times(p.get(), false);
  return p;
}

/// Voxel data as read from disk before role-specific conversion.
struct RawVolume {
  Shape3 shape;
  std::vector<double> values;
  bool integer = false;
  int bits = 0;
  bool fixed_scale = false;
  VoxelSize voxel_size;
};

Shape3 squeeze_dims(const std::vector<hsize_t>& dims, const std::string& where) {
  std::vector<hsize_t> d = dims;
  if (d.size() == 4) {
    if (d[0] == 1) d.erase(d.begin());
    else if (d[3] == 1) d.pop_back();
  }
  if (d.size() != 3) throw IoError(where + ": expected 3D data, got rank " + std::to_string(dims.size()));
  return {static_cast<Index>(d[0]), static_cast<Index>(d[1]), static_cast<Index>(d[2])};
}

std::vector<hsize_t> h5_dims(hid_t ds) {
  H5Handle space(H5Dget_space(ds), H5Sclose);
  const int rank = H5Sget_simple_extent_ndims(space.get());
  std::vector<hsize_t> dims(static_cast<std::size_t>(std::max(rank, 0)));
  H5Sget_simple_extent_dims(space.get(), dims.data(), nullptr);
  return dims;
}

H5Handle open_h5_dataset(const H5Handle& file, const VolumeSpec& spec) {
  H5Handle ds(H5Dopen2(file.get(), spec.dataset_key.c_str(), H5P_DEFAULT), H5Dclose);
  if (!ds.valid()) throw IoError(spec.path.string() + ": no dataset '" + spec.dataset_key + "'");
  return ds;
}

H5Handle open_h5_file(const fs::path& path) {
  silence_hdf5();
  if (!fs::exists(path)) throw IoError("missing file: " + path.string());
  H5Handle file(H5Fopen(path.c_str(), H5F_ACC_RDONLY, H5P_DEFAULT), H5Fclose);
  if (!file.valid()) throw IoError("cannot open HDF5 file " + path.string());
  return file;
}

std::optional<std::string> read_string_attr(hid_t obj, const char* name) {
  if (H5Aexists(obj, name) <= 0) return std::nullopt;
  H5Handle attr(H5Aopen(obj, name, H5P_DEFAULT), H5Aclose);
  H5Handle type(H5Aget_type(attr.get()), H5Tclose);
  if (H5Tget_class(type.get()) != H5T_STRING) return std::nullopt;
  const std::size_t size = H5Tget_size(type.get());
  std::string s(size, '\0');
  H5Handle mem(H5Tcopy(H5T_C_S1), H5Tclose);
  H5Tset_size(mem.get(), size);
  H5Aread(attr.get(), mem.get(), s.data());
  while (!s.empty() && s.back() == '\0') s.pop_back();
  return s;
}

void write_string_attr(hid_t obj, const char* name, const std::string& value) {
  H5Handle type(H5Tcopy(H5T_C_S1), H5Tclose);
  H5Tset_size(type.get(), value.size() + 1);
  H5Handle space(H5Screate(H5S_SCALAR), H5Sclose);
  H5Handle attr(H5Acreate2(obj, name, type.get(), space.get(), H5P_DEFAULT, H5P_DEFAULT), H5Aclose);
  H5Awrite(attr.get(), type.get(), value.c_str());
}

std::optional<VoxelSize> read_voxel_size(hid_t obj) {
  if (H5Aexists(obj, "voxel_size") <= 0) return std::nullopt;
  H5Handle attr(H5Aopen(obj, "voxel_size", H5P_DEFAULT), H5Aclose);
  double v[3] = {1, 1, 1};
  if (H5Aread(attr.get(), H5T_NATIVE_DOUBLE, v) < 0) return std::nullopt;
  return VoxelSize{v[0], v[1], v[2]};
}

void write_voxel_size(hid_t obj, const VoxelSize& vs) {
  const hsize_t n = 3;
  H5Handle space(H5Screate_simple(1, &n, nullptr), H5Sclose);
  H5Handle attr(H5Acreate2(obj, "voxel_size", H5T_IEEE_F64LE, space.get(), H5P_DEFAULT, H5P_DEFAULT), H5Aclose);
  const double v[3] = {vs.z, vs.y, vs.x};
  H5Awrite(attr.get(), H5T_NATIVE_DOUBLE, v);
}

RawVolume read_hdf5(const VolumeSpec& spec) {
  H5Handle file = open_h5_file(spec.path);
  H5Handle ds = open_h5_dataset(file, spec);
  RawVolume raw;
  raw.shape = squeeze_dims(h5_dims(ds.get()), spec.path.string());
  H5Handle type(H5Dget_type(ds.get()), H5Tclose);
  const H5T_class_t cls = H5Tget_class(type.get());
  if (cls != H5T_INTEGER && cls != H5T_FLOAT) throw IoError(spec.path.string() + ": dataset is not numeric");
  raw.integer = cls == H5T_INTEGER;
  raw.bits = static_cast<int>(H5Tget_size(type.get()) * 8);
  raw.values.resize(static_cast<std::size_t>(raw.shape.size()));
  if (H5Dread(ds.get(), H5T_NATIVE_DOUBLE, H5S_ALL, H5S_ALL, H5P_DEFAULT, raw.values.data()) < 0)
    throw IoError(spec.path.string() + ": failed to read dataset");
  raw.fixed_scale = read_string_attr(ds.get(), "normalization") == std::optional<std::string>("fixed");
  if (auto vs = read_voxel_size(ds.get())) raw.voxel_size = *vs;
  return raw;
}

std::vector<fs::path> tiff_files(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("missing file: " + path.string());
  if (!fs::is_directory(path)) return {path};
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(path)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".tif" || ext == ".tiff" || ext == ".TIF" || ext == ".TIFF"))
      files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no TIFF files in " + path.string());
  return files;
}

struct TiffStack {
  std::vector<std::pair<fs::path, tiff::PageInfo>> pages;
  Shape3 shape;
};

TiffStack tiff_stack(const fs::path& path) {
  TiffStack stack;
  for (const auto& f : tiff_files(path))
    for (auto& p : tiff::read_headers(f)) stack.pages.emplace_back(f, std::move(p));
  if (stack.pages.empty()) throw IoError("empty TIFF stack " + path.string());
  const auto& first = stack.pages.front().second;
  for (const auto& [f, p] : stack.pages) {
    if (p.width != first.width || p.height != first.height || p.bits != first.bits || p.kind != first.kind)
      throw IoError("inconsistent TIFF pages in " + path.string());
  }
  stack.shape = {static_cast<Index>(stack.pages.size()), first.height, first.width};
  return stack;
}

RawVolume read_tiff(const VolumeSpec& spec) {
  const TiffStack stack = tiff_stack(spec.path);
  RawVolume raw;
  raw.shape = stack.shape;
  const auto& first = stack.pages.front().second;
  raw.integer = first.kind != tiff::SampleKind::floating;
  raw.bits = first.bits;
  raw.fixed_scale = first.description.find(kFixedScaleTag) != std::string::npos;
  raw.values.resize(static_cast<std::size_t>(raw.shape.size()));
  const std::size_t page = static_cast<std::size_t>(raw.shape.y * raw.shape.x);
  for (std::size_t z = 0; z < stack.pages.size(); ++z)
    tiff::read_page(stack.pages[z].first, stack.pages[z].second, raw.values.data() + z * page);
  return raw;
}

RawVolume read_raw(const VolumeSpec& spec) {
  return spec.container == Container::hdf5 ? read_hdf5(spec) : read_tiff(spec);
}

IntensityVolume to_intensity(const RawVolume& raw, const fs::path& path) {
  IntensityVolume vol{Grid3<float>(raw.shape), raw.voxel_size};
  if (raw.values.empty()) return vol;
  for (const double v : raw.values)
    if (!std::isfinite(v)) throw IoError(path.string() + ": non-finite intensity");
  const auto [lo_it, hi_it] = std::minmax_element(raw.values.begin(), raw.values.end());
  double lo = *lo_it, hi = *hi_it;
  double scale = 0;
  if (raw.integer && raw.fixed_scale) {
    lo = 0;
    scale = 1.0 / (std::ldexp(1.0, raw.bits) - 1.0);
  } else if (!raw.integer && lo >= 0 && hi <= 1) {
    lo = 0;
    scale = 1.0;
  } else if (hi > lo) {
    scale = 1.0 / (hi - lo);
  }
  for (std::size_t i = 0; i < raw.values.size(); ++i) {
    // A constant volume has no contrast; it maps to 1 by convention.
    const double v = scale == 0 ? 1.0 : (raw.values[i] - lo) * scale;
    vol.data[static_cast<Index>(i)] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return vol;
}

LabelVolume to_labels(const RawVolume& raw, const fs::path& path) {
  LabelVolume vol{Grid3<LabelId>(raw.shape), raw.voxel_size};
  for (std::size_t i = 0; i < raw.values.size(); ++i) {
    const double v = raw.values[i];
    if (!(v >= 0)) throw IoError(path.string() + ": label volume contains negative values");
    if (v != std::floor(v) || v > std::numeric_limits<LabelId>::max())
      throw IoError(path.string() + ": label volume contains non-integer or out-of-range ids");
    vol.data[static_cast<Index>(i)] = static_cast<LabelId>(v);
  }
  return vol;
}

template <typename T>
std::vector<T> quantize(const IntensityVolume& vol) {
  const double top = static_cast<double>(std::numeric_limits<T>::max());
  std::vector<T> out(static_cast<std::size_t>(vol.data.size()));
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<T>(std::lround(std::clamp<double>(vol.data[static_cast<Index>(i)], 0, 1) * top));
  return out;
}

void write_hdf5(const VolumeSpec& spec, Shape3 shape, hid_t file_type, hid_t mem_type, const void* data,
                const VoxelSize& vs, bool fixed_scale) {
  silence_hdf5();
  if (spec.path.has_parent_path()) fs::create_directories(spec.path.parent_path());
  const bool exists = fs::exists(spec.path);
  H5Handle file(exists ? H5Fopen(spec.path.c_str(), H5F_ACC_RDWR, H5P_DEFAULT)
                       : H5Fcreate(spec.path.c_str(), H5F_ACC_TRUNC, H5P_DEFAULT, H5P_DEFAULT),
                H5Fclose);
  if (!file.valid()) throw IoError("cannot write HDF5 file " + spec.path.string());
  if (H5Lexists(file.get(), spec.dataset_key.c_str(), H5P_DEFAULT) > 0)
    H5Ldelete(file.get(), spec.dataset_key.c_str(), H5P_DEFAULT);
  const hsize_t dims[3] = {static_cast<hsize_t>(shape.z), static_cast<hsize_t>(shape.y),
                           static_cast<hsize_t>(shape.x)};
  H5Handle space(H5Screate_simple(3, dims, nullptr), H5Sclose);
  const H5Handle dcpl = untimed_dcpl();
  H5Handle ds(H5Dcreate2(file.get(), spec.dataset_key.c_str(), file_type, space.get(), H5P_DEFAULT, dcpl.get(),
                         H5P_DEFAULT),
              H5Dclose);
  if (!ds.valid()) throw IoError("cannot create dataset " + spec.dataset_key + " in " + spec.path.string());
  if (H5Dwrite(ds.get(), mem_type, H5S_ALL, H5S_ALL, H5P_DEFAULT, data) < 0)
    throw IoError("failed writing " + spec.path.string());
  write_voxel_size(ds.get(), vs);
  if (fixed_scale) write_string_attr(ds.get(), "normalization", "fixed");
}

void write_tiff(const VolumeSpec& spec, Shape3 shape, std::uint16_t bits, tiff::SampleKind kind,
                const void* data, bool fixed_scale) {
  const std::string desc = fixed_scale ? kFixedScaleTag : "";
  const auto& path = spec.path;
  const bool as_directory = fs::is_directory(path) || !path.has_extension();
  if (!as_directory) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    tiff::write_pages(path, static_cast<std::uint32_t>(shape.z), static_cast<std::uint32_t>(shape.y),
                      static_cast<std::uint32_t>(shape.x), bits, kind, data, desc);
    return;
  }
  fs::create_directories(path);
  for (const auto& e : fs::directory_iterator(path))
    if (e.path().extension() == ".tif") fs::remove(e.path());
  const std::size_t page_bytes = static_cast<std::size_t>(shape.y * shape.x) * (bits / 8);
  for (Index z = 0; z < shape.z; ++z) {
    char name[32];
    std::snprintf(name, sizeof name, "slice_%05lld.tif", static_cast<long long>(z));
    tiff::write_pages(path / name, 1, static_cast<std::uint32_t>(shape.y), static_cast<std::uint32_t>(shape.x),
                      bits, kind, static_cast<const unsigned char*>(data) + z * page_bytes, desc);
  }
}

}  // namespace

void check_intensity_range(const IntensityVolume& vol) {
  for (const float v : vol.data.values())
    if (!std::isfinite(v) || v < 0.f || v > 1.f) throw ValidationError("intensity", "values must lie in [0, 1]");
}

AnyVolume load_volume(const VolumeSpec& spec) {
  const RawVolume raw = read_raw(spec);
  if (spec.role == DtypeRole::label) return to_labels(raw, spec.path);
  return to_intensity(raw, spec.path);
}

IntensityVolume load_intensity(const VolumeSpec& spec) {
  VolumeSpec s = spec;
  s.role = DtypeRole::intensity;
  return std::get<IntensityVolume>(load_volume(s));
}

LabelVolume load_labels(const VolumeSpec& spec) {
  VolumeSpec s = spec;
  s.role = DtypeRole::label;
  return std::get<LabelVolume>(load_volume(s));
}

Shape3 probe_volume(const VolumeSpec& spec) {
  if (spec.container == Container::tiff_stack) return tiff_stack(spec.path).shape;
  H5Handle file = open_h5_file(spec.path);
  H5Handle ds = open_h5_dataset(file, spec);
  return squeeze_dims(h5_dims(ds.get()), spec.path.string());
}

void save_volume(const VolumeSpec& spec, const IntensityVolume& vol, IntensityEncoding encoding) {
  check_intensity_range(vol);
  const Shape3 shape = vol.shape();
  switch (encoding) {
    case IntensityEncoding::float32:
      if (spec.container == Container::hdf5)
        write_hdf5(spec, shape, H5T_IEEE_F32LE, H5T_NATIVE_FLOAT, vol.data.data(), vol.voxel_size, false);
      else
        write_tiff(spec, shape, 32, tiff::SampleKind::floating, vol.data.data(), false);
      break;
    case IntensityEncoding::uint8: {
      const auto q = quantize<std::uint8_t>(vol);
      if (spec.container == Container::hdf5)
        write_hdf5(spec, shape, H5T_STD_U8LE, H5T_NATIVE_UINT8, q.data(), vol.voxel_size, true);
      else
        write_tiff(spec, shape, 8, tiff::SampleKind::unsigned_int, q.data(), true);
      break;
    }
    case IntensityEncoding::uint16: {
      const auto q = quantize<std::uint16_t>(vol);
      if (spec.container == Container::hdf5)
        write_hdf5(spec, shape, H5T_STD_U16LE, H5T_NATIVE_UINT16, q.data(), vol.voxel_size, true);
      else
        write_tiff(spec, shape, 16, tiff::SampleKind::unsigned_int, q.data(), true);
      break;
    }
  }
}

void save_volume(const VolumeSpec& spec, const LabelVolume& vol) {
  static_assert(sizeof(LabelId) == 4);
  if (spec.container == Container::hdf5)
    write_hdf5(spec, vol.shape(), H5T_STD_U32LE, H5T_NATIVE_UINT32, vol.data.data(), vol.voxel_size, false);
  else
    write_tiff(spec, vol.shape(), 32, tiff::SampleKind::unsigned_int, vol.data.data(), false);
}

void save_channels(const fs::path& path, const std::string& key, const ChannelStack& stack) {
  silence_hdf5();
  if (stack.channels.empty()) throw IoError("save_channels: no channels");
  const Shape3 shape = stack.channels.front().shape();
  std::vector<float> buf;
  buf.reserve(static_cast<std::size_t>(shape.size()) * stack.channels.size());
  for (const auto& c : stack.channels) {
    if (c.shape() != shape) throw IoError("save_channels: channel shapes differ");
    buf.insert(buf.end(), c.data(), c.data() + c.size());
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const bool exists = fs::exists(path);
  H5Handle file(exists ? H5Fopen(path.c_str(), H5F_ACC_RDWR, H5P_DEFAULT)
                       : H5Fcreate(path.c_str(), H5F_ACC_TRUNC, H5P_DEFAULT, H5P_DEFAULT),
                H5Fclose);
  if (!file.valid()) throw IoError("cannot write HDF5 file " + path.string());
  if (H5Lexists(file.get(), key.c_str(), H5P_DEFAULT) > 0) H5Ldelete(file.get(), key.c_str(), H5P_DEFAULT);
  const hsize_t dims[4] = {stack.channels.size(), static_cast<hsize_t>(shape.z), static_cast<hsize_t>(shape.y),
                           static_cast<hsize_t>(shape.x)};
  H5Handle space(H5Screate_simple(4, dims, nullptr), H5Sclose);
  const H5Handle dcpl = untimed_dcpl();
  H5Handle ds(H5Dcreate2(file.get(), key.c_str(), H5T_IEEE_F32LE, space.get(), H5P_DEFAULT, dcpl.get(),
                         H5P_DEFAULT),
              H5Dclose);
  if (!ds.valid() || H5Dwrite(ds.get(), H5T_NATIVE_FLOAT, H5S_ALL, H5S_ALL, H5P_DEFAULT, buf.data()) < 0)
    throw IoError("failed writing " + path.string());
  write_voxel_size(ds.get(), stack.voxel_size);
}

ChannelStack load_channels(const fs::path& path, const std::string& key) {
  H5Handle file = open_h5_file(path);
  H5Handle ds(H5Dopen2(file.get(), key.c_str(), H5P_DEFAULT), H5Dclose);
  if (!ds.valid()) throw IoError(path.string() + ": no dataset '" + key + "'");
  const auto dims = h5_dims(ds.get());
  if (dims.size() != 4) throw IoError(path.string() + ": expected a channel-first 4D dataset");
  const Shape3 shape{static_cast<Index>(dims[1]), static_cast<Index>(dims[2]), static_cast<Index>(dims[3])};
  std::vector<float> buf(static_cast<std::size_t>(dims[0] * shape.size()));
  if (H5Dread(ds.get(), H5T_NATIVE_FLOAT, H5S_ALL, H5S_ALL, H5P_DEFAULT, buf.data()) < 0)
    throw IoError(path.string() + ": failed to read dataset");
  ChannelStack stack;
  if (auto vs = read_voxel_size(ds.get())) stack.voxel_size = *vs;
  for (hsize_t c = 0; c < dims[0]; ++c) {
    Grid3<float> g(shape);
    std::copy_n(buf.data() + c * shape.size(), shape.size(), g.data());
    stack.channels.push_back(std::move(g));
  }
  return stack;
}

Container container_from_string(const std::string& name) {
  if (name == "hdf5" || name == "h5") return Container::hdf5;
  if (name == "tiff-stack" || name == "tiff" || name == "tif") return Container::tiff_stack;
  throw ValidationError("container", "unknown container '" + name + "' (expected hdf5 or tiff-stack)");
}

std::string to_string(Container c) { return c == Container::hdf5 ? "hdf5" : "tiff-stack"; }

}  // namespace cysgan
