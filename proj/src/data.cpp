#include "pitrans/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "pitrans/errors.hpp"
#include "pitrans/rng.hpp"

namespace pitrans {

Image::Image(int w, int h, Rgb fill) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3) {
  for (std::size_t i = 0; i < rgb.size(); i += 3) {
    rgb[i] = fill[0];
    rgb[i + 1] = fill[1];
    rgb[i + 2] = fill[2];
  }
}

Rgb Image::pixel(int row, int col) const {
  const auto i = (static_cast<std::size_t>(row) * width + col) * 3;
  return {rgb[i], rgb[i + 1], rgb[i + 2]};
}

void Image::set(int row, int col, Rgb c) {
  const auto i = (static_cast<std::size_t>(row) * width + col) * 3;
  rgb[i] = c[0];
  rgb[i + 1] = c[1];
  rgb[i + 2] = c[2];
}

Rgb palette_color(SceneClass c) {
  switch (c) {
    case SceneClass::road: return {128, 64, 128};
    case SceneClass::building: return {70, 70, 70};
    case SceneClass::tree: return {107, 142, 35};
    case SceneClass::car: return {0, 0, 142};
    case SceneClass::grass: return {152, 251, 152};
    case SceneClass::sky: return {70, 130, 180};
  }
  return {0, 0, 0};
}

Rgb grass_color() { return {86, 150, 70}; }

Rgb sky_color(int row, int horizon) {
  // Deep blue at the top fading to pale blue at the horizon.
  const double t = horizon > 1 ? static_cast<double>(row) / (horizon - 1) : 1.0;
  auto lerp = [t](int a, int b) { return static_cast<std::uint8_t>(std::lround(a + (b - a) * t)); };
  return {lerp(60, 190), lerp(110, 215), lerp(200, 245)};
}

int horizon_row(int size) { return static_cast<int>(std::lround(0.4 * size)); }

// ---------------------------------------------------------------------------

namespace {

std::uint8_t jitter(Rng& rng, int base, int amount) {
  const int v = base + static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * amount + 1))) - amount;
  return static_cast<std::uint8_t>(std::clamp(v, 0, 255));
}

Rgb jittered(Rng& rng, Rgb base, int amount) {
  return {jitter(rng, base[0], amount), jitter(rng, base[1], amount), jitter(rng, base[2], amount)};
}

struct ClassShape {
  double w_lo, w_hi, d_lo, d_hi, h_lo, h_hi;
};

ClassShape class_shape(SceneClass c) {
  switch (c) {
    case SceneClass::road: return {0.35, 0.8, 0.05, 0.1, 0.03, 0.05};
    case SceneClass::building: return {0.15, 0.35, 0.15, 0.3, 0.5, 1.0};
    case SceneClass::tree: return {0.08, 0.15, 0.08, 0.15, 0.4, 0.8};
    case SceneClass::car: return {0.1, 0.18, 0.06, 0.1, 0.15, 0.25};
    default: return {0.1, 0.2, 0.1, 0.2, 0.1, 0.2};
  }
}

Rgb class_base_color(SceneClass c, Rng& rng) {
  switch (c) {
    case SceneClass::road: return jittered(rng, {95, 95, 100}, 10);
    case SceneClass::building: return jittered(rng, {185, 120, 90}, 30);
    case SceneClass::tree: return jittered(rng, {30, 95, 35}, 15);
    case SceneClass::car: {
      static const Rgb kCarColors[3] = {{200, 30, 30}, {230, 200, 40}, {40, 40, 40}};
      return jittered(rng, kCarColors[rng.below(3)], 15);
    }
    default: return {0, 0, 0};
  }
}

struct QuadExtent {
  int col0, col1, row0, row1;  // inclusive rows, half-open columns
};

QuadExtent project(const SceneObject& o, int size) {
  const int horizon = horizon_row(size);
  QuadExtent q;
  q.col0 = std::clamp(static_cast<int>(std::floor(o.x0 * size)), 0, size - 1);
  q.col1 = std::clamp(static_cast<int>(std::ceil(o.x1 * size)), q.col0 + 1, size);
  q.row1 = horizon + static_cast<int>(std::lround((size - 1 - horizon) * o.y1));
  const double depth = 1.25 - o.y1;
  const int pixel_height = std::max(1, static_cast<int>(std::lround(o.height * 0.25 * size / depth)));
  q.row0 = std::max(0, q.row1 - pixel_height + 1);
  return q;
}

}  // namespace

SceneSpec random_scene(std::uint64_t seed) {
  SceneSpec spec;
  spec.seed = seed;
  Rng rng(seed, "scene");
  const int count = 3 + static_cast<int>(rng.below(6));
  constexpr SceneClass kClasses[4] = {SceneClass::road, SceneClass::building, SceneClass::tree, SceneClass::car};
  for (int i = 0; i < count; ++i) {
    SceneObject o;
    o.cls = kClasses[rng.below(4)];
    const ClassShape s = class_shape(o.cls);
    const double w = rng.uniform(s.w_lo, s.w_hi);
    const double d = rng.uniform(s.d_lo, s.d_hi);
    o.x0 = rng.uniform(0.0, 1.0 - w);
    o.y0 = rng.uniform(0.0, 1.0 - d);
    o.x1 = o.x0 + w;
    o.y1 = o.y0 + d;
    o.height = rng.uniform(s.h_lo, s.h_hi);
    o.color = class_base_color(o.cls, rng);
    spec.objects.push_back(o);
  }
  return spec;
}

ImageTriplet synth_triplet(const SceneSpec& spec, int size) {
  if (size != 32 && size != 64 && size != 128 && size != 256)
    throw ConfigError("synth_triplet: size must be 32, 64, 128 or 256, got " + std::to_string(size));
  for (const auto& o : spec.objects)
    if (o.x0 < 0 || o.y0 < 0 || o.x1 > 1 || o.y1 > 1 || o.x0 >= o.x1 || o.y0 >= o.y1)
      throw ConfigError("synth_triplet: object footprint outside the unit ground plane");

  ImageTriplet t;
  t.aerial = Image(size, size, grass_color());
  t.semantic = Image(size, size);
  t.ground = Image(size, size);
  const int horizon = horizon_row(size);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) {
      if (r < horizon) {
        t.ground.set(r, c, sky_color(r, horizon));
        t.semantic.set(r, c, palette_color(SceneClass::sky));
      } else {
        t.ground.set(r, c, grass_color());
        t.semantic.set(r, c, palette_color(SceneClass::grass));
      }
    }

  // Aerial: lower objects first so taller ones stay visible from above.
  std::vector<const SceneObject*> order;
  for (const auto& o : spec.objects) order.push_back(&o);
  std::stable_sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->height < b->height; });
  for (const auto* o : order) {
    const int r0 = static_cast<int>(std::floor(o->y0 * size)), r1 = static_cast<int>(std::ceil(o->y1 * size));
    const int c0 = static_cast<int>(std::floor(o->x0 * size)), c1 = static_cast<int>(std::ceil(o->x1 * size));
    for (int r = std::max(0, r0); r < std::min(size, std::max(r1, r0 + 1)); ++r)
      for (int c = std::max(0, c0); c < std::min(size, std::max(c1, c0 + 1)); ++c) t.aerial.set(r, c, o->color);
  }

  // Ground and semantic: painter's order, far (small y1) to near.
  std::stable_sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->y1 < b->y1; });
  for (const auto* o : order) {
    const QuadExtent q = project(*o, size);
    for (int r = q.row0; r <= q.row1; ++r)
      for (int c = q.col0; c < q.col1; ++c) {
        t.ground.set(r, c, o->color);
        t.semantic.set(r, c, palette_color(o->cls));
      }
  }
  return t;
}

// ---------------------------------------------------------------------------
// PPM

std::vector<std::uint8_t> ppm_encode(const Image& img) {
  const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.rgb.begin(), img.rgb.end());
  return out;
}

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> b) : bytes_(b) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = static_cast<char>(bytes_[pos_]);
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  long number(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    long v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > 1'000'000) throw ParseError(std::string("ppm: ") + what + " too large", start);
      ++pos_;
    }
    if (pos_ == start) throw ParseError(std::string("ppm: expected ") + what, start);
    return v;
  }

  std::size_t pos_ = 0;
  std::span<const std::uint8_t> bytes_;
};

}  // namespace

Image ppm_decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw ParseError("ppm: missing P6 magic", 0);
  HeaderReader r(bytes);
  r.pos_ = 2;
  const long w = r.number("width");
  const long h = r.number("height");
  const std::size_t maxval_at = r.pos_;
  const long maxval = r.number("maxval");
  if (w <= 0 || h <= 0) throw ParseError("ppm: zero image dimension", maxval_at);
  if (maxval != 255) throw ParseError("ppm: maxval must be 255, got " + std::to_string(maxval), maxval_at);
  if (r.pos_ >= bytes.size() || !std::isspace(bytes[r.pos_]))
    throw ParseError("ppm: expected a single whitespace byte after maxval", r.pos_);
  ++r.pos_;
  const std::size_t expected = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3;
  const std::size_t actual = bytes.size() - r.pos_;
  if (actual < expected)
    throw ParseError("ppm: payload truncated, expected " + std::to_string(expected) + " bytes but found " +
                         std::to_string(actual),
                     bytes.size());
  if (actual > expected)
    throw ParseError("ppm: " + std::to_string(actual - expected) + " trailing bytes after payload",
                     r.pos_ + expected);
  Image img;
  img.width = static_cast<int>(w);
  img.height = static_cast<int>(h);
  img.rgb.assign(bytes.begin() + static_cast<std::ptrdiff_t>(r.pos_), bytes.end());
  return img;
}

void ppm_write(const std::filesystem::path& path, const Image& img) {
  const auto bytes = ppm_encode(img);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

Image ppm_read(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return ppm_decode(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.offset());
  }
}

// ---------------------------------------------------------------------------

float normalize_pixel(std::uint8_t v) { return static_cast<float>(v) / 127.5f - 1.0f; }

std::uint8_t denormalize_pixel(float v) {
  const float x = std::round((v + 1.0f) * 127.5f);
  return static_cast<std::uint8_t>(std::clamp(x, 0.0f, 255.0f));
}

Tensor images_to_tensor(const std::vector<const Image*>& images) {
  if (images.empty()) throw DimensionError("images_to_tensor: empty batch");
  const int h = images[0]->height, w = images[0]->width;
  const auto b = static_cast<std::int64_t>(images.size());
  Tensor t(Shape{b, 3, h, w});
  auto d = t.mutable_data();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = *images[n];
    if (img.height != h || img.width != w) throw DimensionError("images_to_tensor: images differ in size");
    for (std::size_t p = 0; p < plane; ++p)
      for (std::size_t c = 0; c < 3; ++c) d[(n * 3 + c) * plane + p] = normalize_pixel(img.rgb[p * 3 + c]);
  }
  return t;
}

Image tensor_to_image(const Tensor& t, std::int64_t index) {
  if (t.rank() != 4 || t.dim(1) != 3) throw DimensionError("tensor_to_image: expected b x 3 x H x W");
  const auto h = static_cast<int>(t.dim(2)), w = static_cast<int>(t.dim(3));
  Image img(w, h);
  const auto d = t.data();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t c = 0; c < 3; ++c)
      img.rgb[p * 3 + c] = denormalize_pixel(d[(static_cast<std::size_t>(index) * 3 + c) * plane + p]);
  return img;
}

Sample to_sample(std::string id, const ImageTriplet& t) {
  auto one = [](const Image& img) {
    Tensor b = images_to_tensor({&img});
    return Tensor(Shape{3, img.height, img.width}, std::vector<float>(b.data().begin(), b.data().end()));
  };
  return Sample{std::move(id), one(t.aerial), one(t.semantic), one(t.ground)};
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + std::string(s) + "' (expected train or test)");
}

std::uint64_t scene_seed(std::uint64_t seed, int id) {
  return splitmix64(splitmix64(seed) + static_cast<std::uint64_t>(id));
}

std::string sample_id(int id, int count) {
  const int width = std::max<int>(4, static_cast<int>(std::to_string(std::max(count - 1, 0)).size()));
  std::string s = std::to_string(id);
  return std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(s.size()))), '0') + s;
}

void write_dataset(const std::filesystem::path& dir, const DatasetSpec& spec) {
  if (spec.count < 1) throw ConfigError("dataset count must be positive");
  if (!(spec.train_fraction > 0.0 && spec.train_fraction <= 1.0))
    throw ConfigError("train_fraction must lie in (0, 1]");
  std::filesystem::create_directories(dir);
  const int n_train = static_cast<int>(std::lround(spec.count * spec.train_fraction));
  std::ostringstream split;
  for (int i = 0; i < spec.count; ++i) {
    const std::string id = sample_id(i, spec.count);
    const ImageTriplet t = synth_triplet(random_scene(scene_seed(spec.seed, i)), spec.size);
    ppm_write(dir / (id + "_a.ppm"), t.aerial);
    ppm_write(dir / (id + "_s.ppm"), t.semantic);
    ppm_write(dir / (id + "_g.ppm"), t.ground);
    split << (i < n_train ? "train " : "test ") << id << '\n';
  }
  std::ofstream f(dir / "split.txt", std::ios::binary);
  f << split.str();
  if (!f) throw std::runtime_error("failed writing split.txt in " + dir.string());
}

std::vector<Sample> load_dataset(const std::filesystem::path& dir, Split split) {
  std::ifstream f(dir / "split.txt");
  if (!f) throw std::runtime_error("missing split.txt in " + dir.string());
  std::vector<Sample> out;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string which, id;
    if (!(ls >> which >> id)) throw ConfigError("split.txt line " + std::to_string(line_no) + " is malformed");
    if (parse_split(which) != split) continue;
    ImageTriplet t;
    for (auto [suffix, img] : {std::pair{"_a.ppm", &t.aerial}, {"_s.ppm", &t.semantic}, {"_g.ppm", &t.ground}}) {
      const auto p = dir / (id + suffix);
      if (!std::filesystem::exists(p))
        throw std::runtime_error("dataset item '" + id + "' is missing " + p.filename().string());
      *img = ppm_read(p);
    }
    if (t.semantic.width != t.aerial.width || t.ground.width != t.aerial.width ||
        t.semantic.height != t.aerial.height || t.ground.height != t.aerial.height)
      throw DimensionError("dataset item '" + id + "' has images of different sizes");
    out.push_back(to_sample(id, t));
  }
  return out;
}

Batch make_batch(const std::vector<Sample>& samples, std::span<const std::size_t> indices) {
  if (indices.empty()) throw DimensionError("make_batch: empty batch");
  const Shape& s = samples.at(indices[0]).aerial.shape();
  const auto b = static_cast<std::int64_t>(indices.size());
  Batch batch{Tensor(Shape{b, s[0], s[1], s[2]}), Tensor(Shape{b, s[0], s[1], s[2]}),
              Tensor(Shape{b, s[0], s[1], s[2]})};
  const auto per = static_cast<std::size_t>(shape_numel(s));
  auto fill = [&](Tensor& dst, auto member) {
    auto d = dst.mutable_data();
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const Tensor& src = samples.at(indices[i]).*member;
      if (src.shape() != s) throw DimensionError("make_batch: samples differ in shape");
      std::copy(src.data().begin(), src.data().end(), d.begin() + static_cast<std::ptrdiff_t>(i * per));
    }
  };
  fill(batch.aerial, &Sample::aerial);
  fill(batch.semantic, &Sample::semantic);
  fill(batch.ground, &Sample::ground);
  return batch;
}

}  // namespace pitrans
