#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "cellsteer/cli.hpp"
#include "test_util.hpp"

using namespace cellsteer;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(std::move(args), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string joined(const std::vector<double> &v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i)
    s += (i ? "," : "") + csv::format_number(v[i]);
  return s;
}

class CliTest : public ::testing::Test {
protected:
  void SetUp() override {
    dir = cellsteer::testing::scratch_dir(std::string("cli_") +
                                          ::testing::UnitTest::GetInstance()->current_test_info()->name());
  }
  std::string path(const std::string &name) const { return (dir / name).string(); }
  fs::path dir;
};

} // namespace

TEST_F(CliTest, GenDataIsDeterministic) {
  const auto a = run_cli({"gen-data", "--n", "50", "--seed", "3", "--out", path("a.csv")});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_NE(a.out.find("generated 50 samples (seed 3)"), std::string::npos);
  const auto b = run_cli({"gen-data", "--n", "50", "--seed", "3", "--out", path("b.csv")});
  ASSERT_EQ(b.code, 0);
  EXPECT_EQ(slurp(path("a.csv")), slurp(path("b.csv")));
  EXPECT_EQ(slurp(path("a.profiles.csv")), slurp(path("b.profiles.csv")));
  EXPECT_TRUE(fs::exists(path("a.csv.manifest.json")));

  const auto loaded = load_dataset(path("a.csv"), ParameterSpace::default_space());
  const auto direct = generate_dataset(50, 3);
  EXPECT_EQ(loaded.profiles, direct.profiles);
}

TEST_F(CliTest, EvalOfExactModelIsHundredPercent) {
  // A single linear layer reproduces targets it generated; the bias keeps
  // them positive.
  auto model = cellsteer::testing::random_net({kNumParams, kNumCells}, 4);
  for (auto &b : model.mutable_layers()[0].bias)
    b += 20.0;
  Rng rng(5);
  std::vector<ParameterConfig> configs(30);
  std::vector<ConcentrationProfile> profiles(30);
  for (std::size_t s = 0; s < 30; ++s) {
    for (auto &v : configs[s])
      v = rng.uniform(-1, 1);
    profiles[s] = predict(model, configs[s]);
  }
  // Exported CSVs round-trip at 17 digits; keep raw ranges at [-1, 1].
  std::vector<ParameterRange> ranges;
  const auto defaults = ParameterSpace::default_space();
  for (const auto &e : defaults.entries())
    ranges.push_back({e.name, -1.0, 1.0});
  std::string space_text;
  for (const auto &r : ranges)
    space_text += r.name + ",-1,1\n";
  csv::write_text(path("space.csv"), space_text);
  Dataset d;
  d.configs = configs;
  d.profiles = profiles;
  d.pf.assign(30, 0.0);
  save_dataset(d, ParameterSpace(ranges), path("exact.csv"));
  save_model(model, path("exact.model"));

  const auto r = run_cli({"eval", "--model", path("exact.model"), "--data", path("exact.csv"), "--space",
                      path("space.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "accuracy 100.0% on 30 samples\n");
}

TEST_F(CliTest, TrainWritesModelHistoryAndManifest) {
  ASSERT_EQ(run_cli({"gen-data", "--n", "60", "--seed", "6", "--out", path("d.csv")}).code, 0);
  const auto r = run_cli({"train", "--data", path("d.csv"), "--epochs", "2", "--val-fraction", "0.25",
                      "--seed", "7", "--out", path("m.bin")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("validation accuracy"), std::string::npos);
  const auto file = load_model_file(path("m.bin"));
  EXPECT_EQ(file.model.widths(), Architecture::desk().widths);
  EXPECT_EQ(file.metadata.at("epochs"), "2");
  EXPECT_EQ(file.metadata.at("samples"), "60");
  const auto history = csv::read_lines(path("m.bin.history.csv"));
  ASSERT_EQ(history.size(), 3u);
  EXPECT_EQ(history[0], "epoch,train_loss,validation_accuracy");
}

TEST_F(CliTest, OptimizeMatchesServiceEndpoint) {
  const auto model = cellsteer::testing::random_net({kNumParams, 32, kNumCells}, 8, 0.3);
  save_model(model, path("m.bin"));
  const auto r = run_cli({"optimize", "--model", path("m.bin"), "--max-range", "150:210", "--min-range",
                      "250:100", "--steps", "60", "--out", path("opt.json"), "--export", path("opt.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("oracle PF"), std::string::npos);
  const auto doc = json::parse(slurp(path("opt.json")));

  Service service(ModelFile{model, {}}, ParameterSpace::default_space());
  const auto max_mask = RegionMask::degree_range(150, 210), min_mask = RegionMask::degree_range(250, 100);
  const auto http = service.optimize(
      {{"max_mask", max_mask.indices()}, {"min_mask", min_mask.indices()}, {"steps", 60}});
  EXPECT_EQ(doc["optimum"], http["optimum"]);
  EXPECT_EQ(doc["trajectory"], http["trajectory"]);
  EXPECT_EQ(doc["objective"], http["objective"]);
  EXPECT_EQ(doc["origin"], "maxmin");
  const auto x = to_config(doc["optimum"].get<std::vector<double>>());
  EXPECT_EQ(doc["oracle_pf"].get<double>(), polarization_factor(simulate(x)));

  const auto exported = import_configs(path("opt.csv"), ParameterSpace::default_space());
  ASSERT_EQ(exported.size(), 1u);
  for (std::size_t i = 0; i < kNumParams; ++i)
    EXPECT_NEAR(exported[0][i], x[i], 1e-9);
}

TEST_F(CliTest, PredictWritesProfile) {
  const auto model = cellsteer::testing::random_net({kNumParams, 16, kNumCells}, 9);
  save_model(model, path("m.bin"));
  const std::vector<double> x(kNumParams, 0.25);
  const auto r = run_cli({"predict", "--model", path("m.bin"), "--config-row", joined(x), "--out", path("p.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto values = csv::parse_numbers(csv::read_lines(path("p.csv")).front(), "p.csv");
  EXPECT_EQ(values, as_vector(predict(model, to_config(x))));
  auto far = x;
  far[0] = 3.0;
  EXPECT_NE(run_cli({"predict", "--model", path("m.bin"), "--config-row", joined(far)}).out.find("outside"),
            std::string::npos);
}

TEST_F(CliTest, ExportSavedList) {
  std::vector<SavedEntry> entries;
  for (int i = 0; i < 15; ++i) {
    Rng rng(static_cast<std::uint64_t>(i));
    SavedEntry e{"e" + std::to_string(i), {}, Origin::max};
    for (auto &v : e.config)
      v = rng.uniform(-1, 1);
    entries.push_back(e);
  }
  store_saved_list(entries, path("saved.json"));
  const auto r = run_cli({"export", "--list", path("saved.json"), "--out", path("sim.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto text = slurp(path("sim.csv"));
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 16);
  const auto back = import_configs(path("sim.csv"), ParameterSpace::default_space());
  for (std::size_t k = 0; k < 15; ++k)
    for (std::size_t i = 0; i < kNumParams; ++i)
      EXPECT_NEAR(back[k][i], entries[k].config[i], 1e-9);
}

TEST_F(CliTest, ReplayReproducesOutputs) {
  ASSERT_EQ(run_cli({"gen-data", "--n", "40", "--seed", "11", "--out", path("g.csv"), "--manifest",
                 path("g.json")})
                .code,
            0);
  const auto manifest = json::parse(slurp(path("g.json")));
  EXPECT_EQ(manifest["parameters"]["n"], "40");
  EXPECT_EQ(manifest["parameters"]["seed"], "11");
  EXPECT_EQ(manifest["outputs"].size(), 2u);
  const auto r = run_cli({"replay", path("g.json")});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("replay ok"), std::string::npos);

  // Defaults are captured too: a manifest without --n still replays n = 3000.
  ASSERT_EQ(run_cli({"gen-data", "--seed", "1", "--out", path("d.csv"), "--manifest", path("d.json")}).code, 0);
  EXPECT_EQ(json::parse(slurp(path("d.json")))["parameters"]["n"], "3000");

  auto tampered = manifest;
  tampered["output_hashes"][path("g.csv")] = "0000000000000000";
  csv::write_text(path("bad.json"), tampered.dump());
  EXPECT_EQ(run_cli({"replay", path("bad.json")}).code, cli::replay_mismatch);
}

TEST_F(CliTest, ReplayTrainingRun) {
  ASSERT_EQ(run_cli({"gen-data", "--n", "40", "--seed", "12", "--out", path("d.csv")}).code, 0);
  ASSERT_EQ(run_cli({"train", "--data", path("d.csv"), "--epochs", "1", "--seed", "2", "--out", path("m.bin"),
                 "--manifest", path("t.json")})
                .code,
            0);
  const auto before = slurp(path("m.bin"));
  const auto r = run_cli({"replay", path("t.json")});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(path("m.bin")), before);
}

TEST_F(CliTest, ConfigFileWithCommandLineOverride) {
  csv::write_text(path("run.ini"), "# generation settings\nn = 12\nseed = 5\n");
  const auto r = run_cli({"gen-data", "--config", path("run.ini"), "--n", "7", "--out", path("c.csv"),
                      "--manifest", path("c.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("generated 7 samples (seed 5)"), std::string::npos);
  const auto m = json::parse(slurp(path("c.json")));
  EXPECT_EQ(m["config_file"], path("run.ini"));
  EXPECT_EQ(m["parameters"]["seed"], "5");
  EXPECT_EQ(run_cli({"gen-data", "--config", path("missing.ini"), "--out", path("x.csv")}).code, cli::io_error);
}

TEST_F(CliTest, DistinctExitCodes) {
  EXPECT_EQ(run_cli({}).code, cli::usage_error);
  EXPECT_EQ(run_cli({"gen-data"}).code, cli::usage_error);
  EXPECT_EQ(run_cli({"frobnicate"}).code, cli::usage_error);
  EXPECT_EQ(run_cli({"eval", "--model", path("none.bin"), "--data", path("none.csv")}).code, cli::io_error);

  csv::write_text(path("junk.bin"), "cellsteer-model\nversion 1\nlayers 1\n");
  EXPECT_EQ(run_cli({"predict", "--model", path("junk.bin"), "--config-row", "0"}).code, cli::corrupt_error);

  save_model(cellsteer::testing::random_net({kNumParams, 8, kNumCells}, 13), path("m.bin"));
  EXPECT_EQ(run_cli({"predict", "--model", path("m.bin"), "--config-row", "1,2,3"}).code, cli::shape_error);
  EXPECT_EQ(run_cli({"predict", "--model", path("m.bin"), "--config-row", joined(std::vector<double>(34, 0.0)) + ",nan"})
                .code,
            cli::non_finite_error);
  EXPECT_EQ(run_cli({"predict", "--model", path("m.bin"), "--config-row", "abc"}).code, cli::argument_error);
  EXPECT_EQ(run_cli({"optimize", "--model", path("m.bin"), "--max-range", "150:210", "--min-range", "200:220"}).code,
            cli::argument_error);
  EXPECT_EQ(run_cli({"gen-data", "--n", "0", "--out", path("z.csv")}).code, cli::argument_error);
  EXPECT_EQ(run_cli({"replay", path("nothing.json")}).code, cli::io_error);
}

TEST_F(CliTest, SpaceFileFromEnvironment) {
  const auto defaults = ParameterSpace::default_space();
  std::string text;
  for (const auto &e : defaults.entries())
    text += e.name + ",0,10\n";
  csv::write_text(path("space.csv"), text);
  ::setenv("CELLSTEER_SPACE", path("space.csv").c_str(), 1);
  const auto r = run_cli({"gen-data", "--n", "3", "--out", path("e.csv"), "--manifest", path("e.json")});
  ::unsetenv("CELLSTEER_SPACE");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(json::parse(slurp(path("e.json")))["parameters"]["space"], path("space.csv"));
  const auto header_and_row = csv::read_lines(path("e.csv"));
  for (double v : csv::parse_numbers(header_and_row[1], "row")) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 10.0);
  }
}
