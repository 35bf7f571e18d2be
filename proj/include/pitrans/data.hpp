#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pitrans/tensor.hpp"

namespace pitrans {

using Rgb = std::array<std::uint8_t, 3>;

/// 8-bit interleaved RGB image.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(int w, int h, Rgb fill = {0, 0, 0});
  Rgb pixel(int row, int col) const;
  void set(int row, int col, Rgb c);
  bool operator==(const Image&) const = default;
};

enum class SceneClass { road, building, tree, car, grass, sky };

/// Semantic palette colour of a class.
Rgb palette_color(SceneClass c);
/// Natural (photographic) background colours.
Rgb grass_color();
Rgb sky_color(int row, int horizon_row);

struct SceneObject {
  SceneClass cls = SceneClass::building;
  /// Footprint in the unit ground plane; y = 0 is far from the ground camera, y = 1 near.
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double height = 0;
  Rgb color{};
};

struct SceneSpec {
  std::uint64_t seed = 0;
  std::vector<SceneObject> objects;
};

/// 3 to 8 objects of classes road/building/tree/car drawn from Rng(seed, "scene").
SceneSpec random_scene(std::uint64_t seed);

struct ImageTriplet {
  Image aerial;
  Image semantic;
  Image ground;
};

/// Row index of the horizon (40% of the height).
int horizon_row(int size);

/// Renders the aerial view (orthographic top-down), the ground view (objects as
/// vertical quads at their plane x, height proportional to object height over depth,
/// drawn far to near over a sky gradient and a grass band) and the ground-view
/// semantic map (same geometry in palette colours). Size must be 32, 64, 128 or 256.
ImageTriplet synth_triplet(const SceneSpec& spec, int size);

// PPM (binary P6, maxval 255)
std::vector<std::uint8_t> ppm_encode(const Image& img);
Image ppm_decode(std::span<const std::uint8_t> bytes);
void ppm_write(const std::filesystem::path& path, const Image& img);
Image ppm_read(const std::filesystem::path& path);

/// Pixel byte -> [-1, 1] via x / 127.5 - 1.
float normalize_pixel(std::uint8_t v);
std::uint8_t denormalize_pixel(float v);

/// Stacks images into a b x 3 x H x W tensor in [-1, 1].
Tensor images_to_tensor(const std::vector<const Image*>& images);
/// Extracts batch element `index` of a b x 3 x H x W tensor back to bytes.
Image tensor_to_image(const Tensor& t, std::int64_t index);

/// One loaded example, each image 3 x H x W in [-1, 1].
struct Sample {
  std::string id;
  Tensor aerial, semantic, ground;
};

Sample to_sample(std::string id, const ImageTriplet& t);

enum class Split { train, test };
Split parse_split(std::string_view s);

struct DatasetSpec {
  std::uint64_t seed = 7;
  int count = 200;
  int size = 64;
  /// Leading fraction of ids assigned to the training split.
  double train_fraction = 0.8;
};

/// Scene seed of item `id` in a dataset generated from `seed`.
std::uint64_t scene_seed(std::uint64_t seed, int id);
std::string sample_id(int id, int count);

/// Writes <id>_a.ppm, <id>_s.ppm, <id>_g.ppm per item plus split.txt
/// (lines "<split> <id>", train ids first).
void write_dataset(const std::filesystem::path& dir, const DatasetSpec& spec);

/// Reads the ids of `split` from split.txt in file order and loads their triplets.
std::vector<Sample> load_dataset(const std::filesystem::path& dir, Split split);

/// Batch tensors for a list of samples.
struct Batch {
  Tensor aerial, semantic, ground;
};
Batch make_batch(const std::vector<Sample>& samples, std::span<const std::size_t> indices);

}  // namespace pitrans
