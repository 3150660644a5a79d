#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "cellsteer/sim_oracle.hpp"
#include "test_util.hpp"

using namespace cellsteer;

namespace {

ConcentrationProfile filled(double v) {
  ConcentrationProfile p{};
  p.fill(v);
  return p;
}

ConcentrationProfile rotated(const ConcentrationProfile &p, std::size_t shift) {
  ConcentrationProfile r{};
  for (std::size_t i = 0; i < kNumCells; ++i)
    r[(i + shift) % kNumCells] = p[i];
  return r;
}

double window_mass(const ConcentrationProfile &p, const HalfMassWindow &w) {
  double m = 0.0;
  for (std::size_t k = 0; k < w.length; ++k)
    m += p[(w.first + k) % kNumCells];
  return m;
}

} // namespace

TEST(Simulate, ZeroConfigPeaksAtHalfTurn) {
  const auto c = simulate(ParameterConfig{});
  const auto peak = std::max_element(c.begin(), c.end()) - c.begin();
  EXPECT_EQ(peak, 200);
  EXPECT_NEAR(c[200], 200.0, 1e-12);
  // B + (A - B) exp(-10) at theta = 0, B = 20 + 2 sum_{j=11..35} sin(j) / 25,
  // evaluated independently.
  EXPECT_NEAR(c[0], 20.01753659400176, 1e-12);
}

TEST(Simulate, ActivationRaisesPeak) {
  ParameterConfig up{}, down{};
  up[param::k_42a] = 0.5;
  down[param::k_42a] = -0.5;
  const auto a = simulate(up), b = simulate(down);
  EXPECT_GT(*std::max_element(a.begin(), a.end()), *std::max_element(b.begin(), b.end()));
}

TEST(Simulate, DeterministicPerNoiseSeed) {
  Rng rng(3);
  ParameterConfig x{};
  for (auto &v : x)
    v = rng.uniform(-1, 1);
  EXPECT_EQ(simulate(x), simulate(x));
  EXPECT_EQ(simulate(x, 11), simulate(x, 11));
  EXPECT_NE(simulate(x, 11), simulate(x, 12));
  for (double v : simulate(x, 11))
    EXPECT_GE(v, 0.0);
}

TEST(Simulate, MonotoneInActivationAndDeactivation) {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    ParameterConfig x{};
    for (auto &v : x)
      v = rng.uniform(-1, 1);
    auto peak = [](const ParameterConfig &c) {
      const auto p = simulate(c);
      return *std::max_element(p.begin(), p.end());
    };
    const double base = peak(x);
    ParameterConfig more_a = x, more_d = x;
    more_a[param::k_42a] = std::min(1.0, x[param::k_42a] + rng.uniform(0.0, 0.5));
    more_d[param::k_42d] = std::min(1.0, x[param::k_42d] + rng.uniform(0.0, 0.5));
    EXPECT_GE(peak(more_a), base - 1e-12);
    EXPECT_LE(peak(more_d), base + 1e-12);
  }
}

TEST(HalfMass, UniformTakesHalfTheMembrane) {
  EXPECT_DOUBLE_EQ(sp_half_mass(filled(100.0), {0.01, 1.0}), 0.5);
  EXPECT_DOUBLE_EQ(sp_half_mass(filled(100.0), {0.01, 8.0}), 4.0);
}

TEST(HalfMass, SingleCellHoldsEverything) {
  auto p = filled(0.0);
  p[17] = 400.0;
  EXPECT_DOUBLE_EQ(sp_half_mass(p, {0.01, 1.0}), 1.0 / 400.0);
}

TEST(HalfMass, DominantCellOfAdjacentPair) {
  auto p = filled(0.0);
  p[10] = 300.0;
  p[11] = 100.0;
  EXPECT_DOUBLE_EQ(sp_half_mass(p, {0.01, 1.0}), 1.0 / 400.0);
}

TEST(HalfMass, AllZeroProfileIsAnError) {
  EXPECT_THROW(sp_half_mass(filled(0.0)), Error);
}

TEST(HalfMass, WindowInvariants) {
  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    ConcentrationProfile p{};
    for (auto &v : p)
      v = rng.uniform(0.0, 1.0) < 0.3 ? 0.0 : rng.uniform(0.0, 50.0);
    if (trial % 3 == 0) {
      ParameterConfig x{};
      for (auto &v : x)
        v = rng.uniform(-1, 1);
      p = simulate(x, trial);
    }
    const double total = std::accumulate(p.begin(), p.end(), 0.0);
    const auto w = half_mass_window(p);
    const std::size_t offset = (w.argmax + kNumCells - w.first) % kNumCells;
    EXPECT_LT(offset, w.length) << "window misses the argmax";
    EXPECT_GE(2.0 * window_mass(p, w), total * (1 - 1e-12));
    if (w.length > 1) {
      EXPECT_LT(2.0 * (window_mass(p, w) - p[w.last_added]), total * (1 + 1e-12));
    }
  }
}

TEST(PolarizationFactor, UniformIsExactlyZero) {
  EXPECT_EQ(polarization_factor(filled(100.0)), 0.0);
  EXPECT_EQ(polarization_factor(filled(3.7)), 0.0);
}

TEST(PolarizationFactor, SingleCellDelta) {
  auto p = filled(0.0);
  p[123] = 400.0;
  // (1 - 2/400) * 4^5 / (1 + 4^5)
  EXPECT_NEAR(polarization_factor(p, {0.01, 1.0}), 0.9940292682926829, 1e-12);
  EXPECT_NEAR(polarization_factor(p, {0.01, 1.0}), 0.99403, 1e-5);
}

TEST(PolarizationFactor, AllZeroProfileIsZero) { EXPECT_EQ(polarization_factor(filled(0.0)), 0.0); }

TEST(PolarizationFactor, ApproachesOneForSharpTallPeaks) {
  auto p = filled(0.0);
  p[0] = 1e6;
  EXPECT_GT(polarization_factor(p), 0.99499);
  EXPECT_LT(polarization_factor(p), 1.0);
}

TEST(PolarizationFactor, RangeAndRotationInvariance) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    ParameterConfig x{};
    for (auto &v : x)
      v = rng.uniform(-1, 1);
    const auto p = simulate(x, trial);
    const double pf = polarization_factor(p);
    EXPECT_GE(pf, 0.0);
    EXPECT_LT(pf, 1.0);
    for (int s = 0; s < 20; ++s)
      EXPECT_NEAR(polarization_factor(rotated(p, rng.below(kNumCells))), pf, 1e-12);
  }
}

TEST(PolarizationFactor, RejectsNegativeValues) {
  auto p = filled(1.0);
  p[3] = -1.0;
  EXPECT_THROW(polarization_factor(p), Error);
  EXPECT_THROW(polarization_factor(filled(1.0), {0.0, 1.0}), Error);
}

TEST(Normalize, MidpointAndEndpoints) {
  const auto space = ParameterSpace::default_space();
  std::array<double, kNumParams> mid{}, hi{};
  for (std::size_t i = 0; i < kNumParams; ++i) {
    mid[i] = 0.5 * (space[i].raw_lo + space[i].raw_hi);
    hi[i] = space[i].raw_hi;
  }
  for (double v : normalize(mid, space))
    EXPECT_NEAR(v, 0.0, 1e-15);
  for (double v : normalize(hi, space))
    EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(Normalize, RoundTrip) {
  const auto space = ParameterSpace::default_space();
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    ParameterConfig x{};
    for (auto &v : x)
      v = rng.uniform(-1.5, 1.5);
    const auto back = normalize(denormalize(x, space), space);
    for (std::size_t i = 0; i < kNumParams; ++i)
      EXPECT_NEAR(back[i], x[i], 1e-12 * std::max(1.0, std::abs(x[i])));
  }
  EXPECT_THROW(normalize(std::vector<double>(34, 0.0), space), Error);
}

TEST(ParameterSpaceTest, Validation) {
  const auto space = ParameterSpace::default_space();
  EXPECT_EQ(space.size(), kNumParams);
  EXPECT_EQ(space[0].name, "k_42a");
  EXPECT_EQ(space[34].name, "p35");
  auto entries = space.entries();
  entries[12].name = "k_42a";
  EXPECT_THROW(ParameterSpace{entries}, Error);
  entries = space.entries();
  entries.pop_back();
  EXPECT_THROW(ParameterSpace{entries}, Error);
  entries = space.entries();
  entries[3].raw_hi = entries[3].raw_lo;
  EXPECT_THROW(ParameterSpace{entries}, Error);
}

TEST(GenerateDataset, SizeSeedAndPf) {
  const auto d = generate_dataset(3000, 7);
  EXPECT_EQ(d.size(), 3000u);
  EXPECT_EQ(d.profiles.size(), 3000u);
  EXPECT_EQ(d.pf.size(), 3000u);
  for (std::size_t i = 0; i < d.size(); i += 97) {
    EXPECT_EQ(d.pf[i], polarization_factor(d.profiles[i]));
    EXPECT_TRUE(in_unit_box(d.configs[i]));
  }
  const auto again = generate_dataset(3000, 7);
  EXPECT_EQ(d.configs, again.configs);
  EXPECT_EQ(d.profiles, again.profiles);
  EXPECT_NE(generate_dataset(5, 8).configs, generate_dataset(5, 7).configs);
  // Per-sample streams: a prefix is independent of n.
  EXPECT_EQ(generate_dataset(5, 7).configs[4], d.configs[4]);
}

TEST(GenerateDataset, SingletonAndInvalidSize) {
  const auto d = generate_dataset(1, 1);
  EXPECT_EQ(d.size(), 1u);
  EXPECT_EQ(d.pf.size(), 1u);
  EXPECT_THROW(generate_dataset(0, 1), Error);
  EXPECT_THROW(generate_dataset(-3, 1), Error);
}

TEST(ExportConfigs, RoundTripAndLineCount) {
  const auto dir = cellsteer::testing::scratch_dir("export");
  const auto space = ParameterSpace::default_space();
  const auto d = generate_dataset(15, 4);
  export_configs(d.configs, space, dir / "found.csv");

  std::ifstream in(dir / "found.csv", std::ios::binary);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 16);
  EXPECT_EQ(text.find('\r'), std::string::npos);
  EXPECT_EQ(text.substr(0, 12), "k_42a,k_42d,");

  const auto back = import_configs(dir / "found.csv", space);
  ASSERT_EQ(back.size(), 15u);
  for (std::size_t r = 0; r < 15; ++r)
    for (std::size_t i = 0; i < kNumParams; ++i)
      EXPECT_NEAR(back[r][i], d.configs[r][i], 1e-9);
}

TEST(ExportConfigs, ZeroConfigIsRawMidpoints) {
  const auto space = ParameterSpace::default_space();
  const std::vector<ParameterConfig> one{ParameterConfig{}};
  const auto text = format_configs(one, space);
  const auto row = text.substr(text.find('\n') + 1);
  const auto values = csv::parse_numbers(row.substr(0, row.size() - 1), "row");
  ASSERT_EQ(values.size(), kNumParams);
  for (std::size_t i = 0; i < kNumParams; ++i)
    EXPECT_DOUBLE_EQ(values[i], 0.5 * (space[i].raw_lo + space[i].raw_hi));
}

TEST(ExportConfigs, Errors) {
  const auto space = ParameterSpace::default_space();
  EXPECT_THROW(format_configs({}, space), Error);
  try {
    export_configs(std::vector<ParameterConfig>{ParameterConfig{}}, space,
                   "/nonexistent-dir/out.csv");
    FAIL() << "expected an I/O error";
  } catch (const Error &e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
  }
}

TEST(DatasetFiles, SaveLoadRoundTrip) {
  const auto dir = cellsteer::testing::scratch_dir("dataset");
  const auto space = ParameterSpace::default_space();
  const auto d = generate_dataset(20, 9);
  save_dataset(d, space, dir / "train.csv");
  EXPECT_TRUE(std::filesystem::exists(dir / "train.profiles.csv"));
  const auto back = load_dataset(dir / "train.csv", space);
  ASSERT_EQ(back.size(), 20u);
  EXPECT_EQ(back.profiles, d.profiles);
  for (std::size_t r = 0; r < 20; ++r) {
    EXPECT_EQ(back.pf[r], d.pf[r]);
    for (std::size_t i = 0; i < kNumParams; ++i)
      EXPECT_NEAR(back.configs[r][i], d.configs[r][i], 1e-12);
  }
}

TEST(DatasetFiles, ParameterSpaceFile) {
  const auto dir = cellsteer::testing::scratch_dir("space");
  const auto space = ParameterSpace::default_space();
  std::string text = "# name,raw_lo,raw_hi\n";
  for (const auto &e : space.entries())
    text += e.name + "," + csv::format_number(e.raw_lo) + "," + csv::format_number(e.raw_hi) + "\n";
  csv::write_text(dir / "space.csv", text);
  EXPECT_EQ(load_parameter_space(dir / "space.csv"), space);
}
