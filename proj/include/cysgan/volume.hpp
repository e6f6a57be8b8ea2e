#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "cysgan/grid.hpp"

namespace cysgan {

/// Physical voxel extent in micrometers, (z, y, x).
struct VoxelSize {
  double z = 1.0;
  double y = 1.0;
  double x = 1.0;
  bool operator==(const VoxelSize&) const = default;
};

/// Grayscale volume with values in [0, 1]. Scalar is float for everything the
/// pipeline touches; narrower types (Eigen::half) exist for very large dummies.
template <typename S>
struct BasicIntensityVolume {
  Grid3<S> data;
  VoxelSize voxel_size{};

  const Shape3& shape() const noexcept { return data.shape(); }
};

/// Instance map: 0 is background, every other id is one instance.
template <typename Id>
struct BasicLabelVolume {
  Grid3<Id> data;
  VoxelSize voxel_size{};

  const Shape3& shape() const noexcept { return data.shape(); }
};

using LabelId = std::uint32_t;
using IntensityVolume = BasicIntensityVolume<float>;
using LabelVolume = BasicLabelVolume<LabelId>;

template <typename Id>
std::set<Id> label_ids(const Grid3<Id>& labels) {
  std::set<Id> ids;
  for (const Id v : labels.values()) ids.insert(v);
  return ids;
}

template <typename Id>
std::set<Id> label_ids(const BasicLabelVolume<Id>& labels) {
  return label_ids(labels.data);
}

/// Throws ValidationError unless every value is finite and inside [0, 1].
void check_intensity_range(const IntensityVolume& vol);

enum class Container { hdf5, tiff_stack };
enum class DtypeRole { intensity, label };

/// On-disk location of one volume. A tiff-stack is either a single multi-page
/// file or a directory of numbered single-page files (sorted by name).
struct VolumeSpec {
  std::filesystem::path path;
  Container container = Container::hdf5;
  std::string dataset_key = "main";
  DtypeRole role = DtypeRole::intensity;
};

/// How save_volume stores intensities. Quantized encodings are tagged so that
/// loading maps them back with the fixed scale instead of min-max.
enum class IntensityEncoding { float32, uint8, uint16 };

using AnyVolume = std::variant<IntensityVolume, LabelVolume>;

AnyVolume load_volume(const VolumeSpec& spec);
IntensityVolume load_intensity(const VolumeSpec& spec);
LabelVolume load_labels(const VolumeSpec& spec);

/// Shape of the stored volume without reading voxel data.
Shape3 probe_volume(const VolumeSpec& spec);

void save_volume(const VolumeSpec& spec, const IntensityVolume& vol,
                 IntensityEncoding encoding = IntensityEncoding::float32);
void save_volume(const VolumeSpec& spec, const LabelVolume& vol);

/// Multi-channel float volume (channel axis first), used for BCD triples.
struct ChannelStack {
  std::vector<Grid3<float>> channels;
  VoxelSize voxel_size{};
};
void save_channels(const std::filesystem::path& path, const std::string& key, const ChannelStack& stack);
ChannelStack load_channels(const std::filesystem::path& path, const std::string& key);

Container container_from_string(const std::string& name);
std::string to_string(Container c);

}  // namespace cysgan
