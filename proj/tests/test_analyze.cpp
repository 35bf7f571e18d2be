#include <gtest/gtest.h>

#include <set>

#include "pitrans/analyze.hpp"
#include "pitrans/blocks.hpp"
#include "pitrans/implicit_transform.hpp"

using namespace pitrans;

namespace {

RunConfig full() {
  RunConfig cfg;
  cfg.generator = GeneratorConfig::full();
  cfg.train.disc_channels = 64;
  return cfg;
}

std::int64_t sum_params(const CostReport& r) {
  std::int64_t n = 0;
  for (const auto& row : r.rows) n += row.params;
  return n;
}

void expect_consistent(const CostReport& report, const std::vector<TraceEntry>& trace) {
  auto problems = cross_check(report, trace);
  EXPECT_TRUE(problems.empty()) << (problems.empty() ? "" : problems.front());
  std::set<std::string> traced;
  for (const auto& e : trace) traced.insert(e.name);
  for (const auto& row : report.rows) {
    const bool is_dense = row.name.find("_fc") != std::string::npos;
    if (!is_dense && row.macs > 0) {
      EXPECT_TRUE(traced.count(row.name)) << row.name << " never traced";
    }
  }
}

}  // namespace

TEST(UnitCounts, HandDerivedLayers) {
  Rng rng(1, "a");
  CostReport r;
  Conv2d conv("conv", 3, 16, 3, 2, 1, rng);
  EXPECT_EQ(conv.describe({3, 64, 64}, r), (Shape{16, 32, 32}));
  EXPECT_EQ(r.rows.back().params, 3 * 16 * 9 + 16);
  EXPECT_EQ(r.rows.back().params, 448);
  EXPECT_EQ(r.rows.back().macs, 442368);

  BatchNorm2d bn("bn", 32);
  bn.describe({32, 8, 8}, r);
  EXPECT_EQ(r.rows.back().params, 64);
  EXPECT_EQ(r.rows.back().macs, 0);

  Linear dense("dense", 4096, 256, rng);
  dense.describe({4096}, 1, r);
  EXPECT_EQ(r.rows.back().params, 1048832);
  EXPECT_EQ(r.rows.back().macs, 4096 * 256);
  Linear per_site("site", 8, 8, rng);
  per_site.describe({16, 8}, 16, r);
  EXPECT_EQ(r.rows.back().macs, 16 * 64);

  ImplicitTransform itm("itm", 64, false, rng);
  CostReport ri;
  itm.describe({64, 4, 4}, ri);
  EXPECT_EQ(ri.rows.back().macs, 16 * 16 * 16 + 16 * 16 * 64);
  EXPECT_EQ(ri.rows.back().macs, 20480);

  EXPECT_EQ(CostReport{}.total_params(), 0);
  EXPECT_EQ(CostReport{}.total_macs(), 0);
}

TEST(UnitCounts, StaticParamsMatchAllocatedTensors) {
  auto cfg = RunConfig{};
  for (const char* v : {"A", "E", "F"}) {
    auto g = build_variant(cfg.generator, v);
    CostReport r;
    g.describe({3, 64, 64}, r);
    EXPECT_EQ(r.total_params(), count_params(g.parameters())) << v;
    EXPECT_EQ(r.total_params(), sum_params(r));
  }
  Rng rng(1, "d");
  PatchDiscriminator d("D1", 16, rng);
  CostReport r;
  d.describe({3, 64, 64}, r);
  EXPECT_EQ(r.total_params(), count_params(d.parameters()));
}

TEST(Trace, FullConfigLevels) {
  auto a = analyze_model(full());
  auto rows = level_rows(a.generator, "G.enc_a");
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].out_shape, (Shape{32, 128, 128}));
  EXPECT_EQ(rows[1].out_shape, (Shape{64, 64, 64}));
  EXPECT_EQ(rows[2].out_shape, (Shape{128, 32, 32}));
  EXPECT_EQ(rows[3].out_shape, (Shape{256, 16, 16}));
  EXPECT_EQ(level_rows(a.generator, "G.enc_s").size(), 4u);
  EXPECT_EQ(a.discriminators.rows.back().out_shape, (Shape{1, 30, 30}));
}

TEST(Trace, DeskLevels) {
  auto a = analyze_model(RunConfig{});
  auto rows = level_rows(a.generator, "G.enc_s");
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].out_shape, (Shape{8, 32, 32}));
  EXPECT_EQ(rows[3].out_shape, (Shape{64, 4, 4}));
  EXPECT_EQ(a.discriminators.rows.back().out_shape, (Shape{1, 6, 6}));
}

TEST(Trace, StaticEqualsDynamicForEveryModel) {
  for (const char* v : {"A", "E", "F"})
    for (std::int64_t size : {32, 64}) {
      auto cfg = GeneratorConfig::desk();
      cfg.image_size = size;
      auto g = build_variant(cfg, v);
      CostReport r;
      g.describe({3, size, size}, r);
      expect_consistent(r, dynamic_trace(g));
    }
  for (std::int64_t size : {64, 256}) {
    Rng rng(1, "d");
    PatchDiscriminator d("D1", 8, rng);
    CostReport r;
    d.describe({3, size, size}, r);
    expect_consistent(r, dynamic_trace(d, size));
  }
}

TEST(Trace, FullGeneratorStaticEqualsDynamic) {
  Generator g(GeneratorConfig::full());
  CostReport r;
  g.describe({3, 256, 256}, r);
  expect_consistent(r, dynamic_trace(g));
}

TEST(Trace, CrossCheckReportsMismatch) {
  CostReport r;
  r.add("x", {3, 4, 4}, 0, 0);
  EXPECT_EQ(cross_check(r, {{"x", {1, 3, 4, 4}}}).size(), 0u);
  EXPECT_EQ(cross_check(r, {{"x", {1, 3, 4, 5}}}).size(), 1u);
  EXPECT_EQ(cross_check(r, {{"y", {1, 3, 4, 4}}}).size(), 1u);
}

TEST(Scaling, ParamsFixedAndMacsScaleWithArea) {
  // Variant A has neither resolution-bound MLPs nor attention: a pure conv model.
  auto cfg = GeneratorConfig::desk();
  auto small = build_variant(cfg, "A");
  cfg.image_size = 128;
  auto large = build_variant(cfg, "A");
  CostReport r64, r128;
  small.describe({3, 64, 64}, r64);
  large.describe({3, 128, 128}, r128);
  EXPECT_EQ(r64.total_params(), r128.total_params());
  EXPECT_EQ(r128.total_macs(), 4 * r64.total_macs());

  PerceptualExtractor ext;
  CostReport p64, p128;
  ext.describe({3, 64, 64}, p64);
  ext.describe({3, 128, 128}, p128);
  EXPECT_EQ(p128.total_macs(), 4 * p64.total_macs());
  EXPECT_EQ(p64.total_params(), p128.total_params());
}

TEST(FullConfig, TotalsAreReproducible) {
  auto a = analyze_model(full()), b = analyze_model(full());
  EXPECT_EQ(a.generator_params(), b.generator_params());
  EXPECT_EQ(a.total_macs(), b.total_macs());
  EXPECT_EQ(a.generator_params(), 24924166);
  EXPECT_EQ(a.total_params(), 30463368);
  EXPECT_EQ(a.generator_macs(), 8555855872);
  EXPECT_EQ(a.total_macs(), 14950137856);
}

TEST(Modules, Grouping) {
  EXPECT_EQ(module_of("G.enc_a.stage0.down.conv"), "G.enc_a");
  EXPECT_EQ(module_of("G.fused.chain.itm_l4.attn"), "G.fused");
  EXPECT_EQ(module_of("D1.conv3"), "D1");
  auto a = analyze_model(RunConfig{});
  auto totals = module_totals(a.generator);
  std::vector<std::string> names;
  std::int64_t params = 0, macs = 0;
  for (const auto& t : totals) {
    names.push_back(t.module);
    params += t.params;
    macs += t.macs;
  }
  EXPECT_EQ(names, (std::vector<std::string>{"G.enc_a", "G.enc_s", "G.direct", "G.fused"}));
  EXPECT_EQ(params, a.generator_params());
  EXPECT_EQ(macs, a.generator_macs());
}

TEST(Format, CsvAndSummary) {
  CostReport r;
  r.add("G.enc_a.L1", {8, 32, 32}, 0, 0);
  r.add("G.enc_a.conv", {16, 16, 16}, 448, 442368);
  const auto csv = format_csv(r);
  EXPECT_EQ(csv, "layer,out_shape,params,macs\nG.enc_a.L1,8x32x32,0,0\nG.enc_a.conv,16x16x16,448,442368\n");
  auto summary = format_summary(analyze_model(RunConfig{}));
  EXPECT_NE(summary.find("G.enc_a"), std::string::npos);
  EXPECT_NE(summary.find("D1"), std::string::npos);
}
