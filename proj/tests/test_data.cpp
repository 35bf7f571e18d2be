#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "pitrans/data.hpp"
#include "pitrans/errors.hpp"

using namespace pitrans;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::path(testing::TempDir()) / ("pitrans_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::set<std::array<std::uint8_t, 3>> colours(const Image& img) {
  std::set<std::array<std::uint8_t, 3>> s;
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) s.insert(img.pixel(r, c));
  return s;
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Scene, EmptySceneIsBackgroundOnly) {
  auto t = synth_triplet(SceneSpec{}, 64);
  const int horizon = horizon_row(64);
  EXPECT_EQ(horizon, 26);
  for (int r = 0; r < 64; ++r)
    for (int c = 0; c < 64; ++c) {
      EXPECT_EQ(t.aerial.pixel(r, c), grass_color());
      if (r < horizon) {
        EXPECT_EQ(t.ground.pixel(r, c), sky_color(r, horizon));
        EXPECT_EQ(t.semantic.pixel(r, c), palette_color(SceneClass::sky));
      } else {
        EXPECT_EQ(t.ground.pixel(r, c), grass_color());
        EXPECT_EQ(t.semantic.pixel(r, c), palette_color(SceneClass::grass));
      }
    }
  // gradient runs from deep to pale blue
  EXPECT_LT(sky_color(0, horizon)[0], sky_color(horizon - 1, horizon)[0]);
}

TEST(Scene, CentredBuildingAddsOnePaletteColour) {
  SceneSpec spec;
  SceneObject b;
  b.cls = SceneClass::building;
  b.x0 = 0.4;
  b.x1 = 0.6;
  b.y0 = 0.4;
  b.y1 = 0.6;
  b.height = 0.5;
  b.color = {180, 120, 90};
  spec.objects.push_back(b);
  auto t = synth_triplet(spec, 64);
  EXPECT_EQ(colours(t.semantic),
            (std::set<Rgb>{palette_color(SceneClass::sky), palette_color(SceneClass::grass),
                           palette_color(SceneClass::building)}));
  EXPECT_EQ(t.aerial.pixel(32, 32), b.color);
  EXPECT_EQ(t.aerial.pixel(5, 5), grass_color());
}

TEST(Scene, RandomScenesAreDeterministic) {
  auto a = synth_triplet(random_scene(scene_seed(7, 0)), 64);
  auto b = synth_triplet(random_scene(scene_seed(7, 0)), 64);
  EXPECT_EQ(a.aerial, b.aerial);
  EXPECT_EQ(a.semantic, b.semantic);
  EXPECT_EQ(a.ground, b.ground);
  auto c = synth_triplet(random_scene(scene_seed(7, 1)), 64);
  EXPECT_NE(a.aerial, c.aerial);
}

TEST(Scene, ObjectCountAndClasses) {
  for (std::uint64_t s = 0; s < 200; ++s) {
    auto spec = random_scene(s);
    EXPECT_GE(spec.objects.size(), 3u);
    EXPECT_LE(spec.objects.size(), 8u);
    for (const auto& o : spec.objects) {
      EXPECT_NE(o.cls, SceneClass::grass);
      EXPECT_NE(o.cls, SceneClass::sky);
      EXPECT_TRUE(o.x0 >= 0 && o.x1 <= 1 && o.x0 < o.x1 && o.y0 >= 0 && o.y1 <= 1 && o.y0 < o.y1);
    }
  }
}

TEST(Scene, SemanticLabelsGroundColumns) {
  for (int size : {32, 64, 128})
    for (std::uint64_t s = 0; s < 60; ++s) {
      auto t = synth_triplet(random_scene(scene_seed(3, static_cast<int>(s))), size);
      const int horizon = horizon_row(size);
      std::set<int> semantic_cols, ground_cols;
      for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c) {
          const auto sem = t.semantic.pixel(r, c);
          if (sem != palette_color(SceneClass::sky) && sem != palette_color(SceneClass::grass))
            semantic_cols.insert(c);
          const Rgb bg = r < horizon ? sky_color(r, horizon) : grass_color();
          if (t.ground.pixel(r, c) != bg) ground_cols.insert(c);
        }
      EXPECT_FALSE(semantic_cols.empty());
      EXPECT_EQ(semantic_cols, ground_cols) << "seed " << s << " size " << size;
    }
}

TEST(Scene, BadInputsRejected) {
  EXPECT_THROW(synth_triplet(SceneSpec{}, 48), ConfigError);
  SceneSpec spec;
  spec.objects.push_back(SceneObject{SceneClass::car, 0.5, 0.5, 1.2, 0.7, 0.1, {}});
  EXPECT_THROW(synth_triplet(spec, 64), ConfigError);
}

TEST(Ppm, SingleWhitePixelBytes) {
  Image img(1, 1, {255, 255, 255});
  const std::string expect = "P6\n1 1\n255\n\xff\xff\xff";
  auto bytes = ppm_encode(img);
  EXPECT_EQ(std::string(bytes.begin(), bytes.end()), expect);
  EXPECT_EQ(ppm_decode(bytes), img);
}

TEST(Ppm, TripletRoundTripIsByteIdentical) {
  auto dir = fresh_dir("ppm");
  auto t = synth_triplet(random_scene(11), 64);
  for (const Image* img : {&t.aerial, &t.semantic, &t.ground}) {
    ppm_write(dir / "x.ppm", *img);
    auto bytes = read_bytes(dir / "x.ppm");
    EXPECT_EQ(bytes, ppm_encode(*img));
    auto back = ppm_read(dir / "x.ppm");
    EXPECT_EQ(back, *img);
    EXPECT_EQ(ppm_encode(back), bytes);
  }
}

TEST(Ppm, TruncatedPayloadNamesByteCounts) {
  auto bytes = ppm_encode(Image(2, 2, {1, 2, 3}));
  bytes.resize(bytes.size() - 5);
  try {
    ppm_decode(bytes);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("12"), std::string::npos) << msg;
    EXPECT_NE(msg.find("7"), std::string::npos) << msg;
    EXPECT_EQ(e.offset(), 18u);  // where the input ran out
  }
}

TEST(Ppm, MalformedHeadersCarryOffsets) {
  auto decode = [](const std::string& s) {
    std::vector<std::uint8_t> b(s.begin(), s.end());
    return ppm_decode(b);
  };
  try {
    decode("P3\n1 1\n255\n\x01\x02\x03");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  try {
    decode("P6\n1 1\n65535\n\x01\x02\x03");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_GT(e.offset(), 0u);
  }
  EXPECT_THROW(decode("P6\nx 1\n255\n\x01\x02\x03"), ParseError);
  EXPECT_THROW(decode("P6\n1 1\n255\n\x01\x02\x03\x04"), ParseError);
  EXPECT_THROW(decode(""), ParseError);
}

TEST(Normalize, EndpointsAndBijection) {
  EXPECT_EQ(normalize_pixel(0), -1.0f);
  EXPECT_EQ(normalize_pixel(255), 1.0f);
  std::set<float> seen;
  for (int v = 0; v < 256; ++v) {
    const auto b = static_cast<std::uint8_t>(v);
    const float x = normalize_pixel(b);
    EXPECT_NEAR(x, v / 127.5 - 1.0, 1e-7);
    EXPECT_EQ(denormalize_pixel(x), b);
    seen.insert(x);
  }
  EXPECT_EQ(seen.size(), 256u);
}

TEST(Normalize, TensorRoundTrip) {
  auto t = synth_triplet(random_scene(5), 32);
  auto tensor = images_to_tensor({&t.aerial, &t.ground});
  EXPECT_EQ(tensor.shape(), (Shape{2, 3, 32, 32}));
  EXPECT_EQ(tensor_to_image(tensor, 0), t.aerial);
  EXPECT_EQ(tensor_to_image(tensor, 1), t.ground);
}

TEST(Dataset, WriteAndLoad) {
  auto dir = fresh_dir("dataset");
  DatasetSpec spec;
  write_dataset(dir, spec);
  int ppms = 0;
  for (const auto& e : fs::directory_iterator(dir)) ppms += e.path().extension() == ".ppm";
  EXPECT_EQ(ppms, 600);

  auto train = load_dataset(dir, Split::train);
  auto test = load_dataset(dir, Split::test);
  ASSERT_EQ(train.size(), 160u);
  ASSERT_EQ(test.size(), 40u);
  EXPECT_EQ(train.front().id, "0000");
  EXPECT_EQ(train.back().id, "0159");
  EXPECT_EQ(test.front().id, "0160");
  for (std::size_t i = 1; i < train.size(); ++i) EXPECT_LT(train[i - 1].id, train[i].id);
  EXPECT_EQ(train[0].aerial.shape(), (Shape{3, 64, 64}));

  auto t = synth_triplet(random_scene(scene_seed(7, 3)), 64);
  auto s = to_sample("0003", t);
  EXPECT_TRUE(std::equal(train[3].ground.data().begin(), train[3].ground.data().end(), s.ground.data().begin()));

  // re-running is byte-identical
  auto dir2 = fresh_dir("dataset2");
  write_dataset(dir2, spec);
  for (const char* f : {"0000_a.ppm", "0123_s.ppm", "0199_g.ppm", "split.txt"})
    EXPECT_EQ(read_bytes(dir / f), read_bytes(dir2 / f)) << f;
}

TEST(Dataset, MissingMemberNamesId) {
  auto dir = fresh_dir("missing");
  DatasetSpec spec;
  spec.count = 10;
  spec.size = 32;
  write_dataset(dir, spec);
  fs::remove(dir / "0009_s.ppm");
  EXPECT_EQ(load_dataset(dir, Split::train).size(), 8u);
  try {
    load_dataset(dir, Split::test);
    FAIL() << "expected an error";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("0009"), std::string::npos) << e.what();
  }
}

TEST(Dataset, BatchStacksSamples) {
  auto a = to_sample("a", synth_triplet(random_scene(1), 32));
  auto b = to_sample("b", synth_triplet(random_scene(2), 32));
  std::vector<Sample> samples{a, b};
  std::vector<std::size_t> idx{1, 0, 1};
  auto batch = make_batch(samples, idx);
  EXPECT_EQ(batch.aerial.shape(), (Shape{3, 3, 32, 32}));
  const auto n = a.aerial.numel();
  EXPECT_TRUE(std::equal(b.semantic.data().begin(), b.semantic.data().end(), batch.semantic.data().begin()));
  EXPECT_TRUE(std::equal(a.ground.data().begin(), a.ground.data().end(), batch.ground.data().begin() + n));
}
