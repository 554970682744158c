#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "vdst/checkpoint.hpp"
#include "vdst/training.hpp"

using namespace vdst;
namespace fs = std::filesystem;

namespace {

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("vdst_ckpt_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                       "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  fs::path dir;
  World world{EnvConfig{}};
};

VdstParams model(const World& w, std::uint64_t seed, const AblationConfig& ablation = {}) {
  ModelConfig c = model_config_for(w, 8, 2);
  c.ablation = ablation;
  VdstParams p(c);
  p.initialize(seed);
  return p;
}

std::vector<double> flat(const VdstParams& p) {
  std::vector<double> out;
  for (const auto& [n, t] : p.named()) out.insert(out.end(), t->data().begin(), t->data().end());
  return out;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

void write_json(const fs::path& p, const nlohmann::json& j) { std::ofstream(p) << j.dump(2); }

}  // namespace

TEST_F(CheckpointTest, ModelRoundTripIsBitExact) {
  const VdstParams p = model(world, 4, {false, true});
  save_model(dir / "m", p, {{"phase", "sl"}});
  nlohmann::json extra;
  const VdstParams q = load_model(dir / "m.json", &extra);
  EXPECT_EQ(flat(q), flat(p));
  EXPECT_EQ(nlohmann::json(q.config), nlohmann::json(p.config));
  EXPECT_TRUE(q.config.ablation.disable_osda);
  EXPECT_EQ(extra["phase"], "sl");
  save_model(dir / "again", q, {{"phase", "sl"}});
  EXPECT_TRUE(checkpoint_files_equal(dir / "m", dir / "again"));
  EXPECT_EQ(fs::file_size(dir / "m.bin"), 8 * flat(p).size());
}

TEST_F(CheckpointTest, SpecialValuesSurvive) {
  VdstParams p = model(world, 1);
  p.output_bias[0] = -0.0;
  p.output_bias[1] = 5e-324;
  p.output_bias[2] = 1.0 / 3.0;
  save_model(dir / "m", p);
  const VdstParams q = load_model(dir / "m");
  EXPECT_TRUE(std::signbit(q.output_bias[0]));
  EXPECT_EQ(q.output_bias[1], 5e-324);
  EXPECT_EQ(q.output_bias[2], 1.0 / 3.0);
}

TEST_F(CheckpointTest, LoadedModelPlaysIdentically) {
  const VdstParams p = model(world, 6);
  save_model(dir / "m", p);
  const VdstParams q = load_model(dir / "m");
  const GuessFn first = [](const Scene&, std::span<const QaPair>) { return std::size_t{0}; };
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Scene s = world.generate(seed);
    EXPECT_EQ(rollout(p, first, world, s, {}).questions(), rollout(q, first, world, s, {}).questions());
  }
}

TEST_F(CheckpointTest, GuesserRoundTrip) {
  GuesserParams g(guesser_config_for(world, 8));
  g.initialize(2);
  save_guesser(dir / "g", g);
  const GuesserParams h = load_guesser(dir / "g");
  const auto a = g.named();
  const auto b = h.named();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].second->values(), b[i].second->values());
}

TEST_F(CheckpointTest, MissingFilesAreReported) {
  EXPECT_THROW(load_model(dir / "nothing"), CheckpointError);
  save_model(dir / "m", model(world, 1));
  fs::remove(dir / "m.bin");
  EXPECT_THROW(load_model(dir / "m"), CheckpointError);
}

TEST_F(CheckpointTest, WrongKindIsRejected) {
  GuesserParams g(guesser_config_for(world, 8));
  g.initialize(2);
  save_guesser(dir / "g", g);
  save_model(dir / "m", model(world, 1));
  EXPECT_THROW(load_model(dir / "g"), CheckpointError);
  EXPECT_THROW(load_guesser(dir / "m"), CheckpointError);
  write_json(dir / "x.json", {{"format", "other"}});
  EXPECT_THROW(load_model(dir / "x"), CheckpointError);
  std::ofstream(dir / "y.json") << "{ not json";
  EXPECT_THROW(load_model(dir / "y"), CheckpointError);
}

TEST_F(CheckpointTest, ShapeMismatchIsRejected) {
  save_model(dir / "m", model(world, 1));
  auto j = read_json(dir / "m.json");
  j["tensors"][0]["shape"] = {1, 1};
  write_json(dir / "m.json", j);
  EXPECT_THROW(load_model(dir / "m"), CheckpointError);

  save_model(dir / "n", model(world, 1));
  auto k = read_json(dir / "n.json");
  k["tensors"][1]["name"] = "renamed";
  write_json(dir / "n.json", k);
  EXPECT_THROW(load_model(dir / "n"), CheckpointError);

  save_model(dir / "c", model(world, 1));
  auto c = read_json(dir / "c.json");
  c["config"].erase("d");
  write_json(dir / "c.json", c);
  EXPECT_THROW(load_model(dir / "c"), CheckpointError);
  save_model(dir / "c", model(world, 1));
  c = read_json(dir / "c.json");
  c["config"]["hidden"] = 9;
  write_json(dir / "c.json", c);
  EXPECT_THROW(load_model(dir / "c"), CheckpointError);
}

TEST_F(CheckpointTest, TruncatedOrPaddedBlobIsRejected) {
  save_model(dir / "m", model(world, 1));
  const auto size = fs::file_size(dir / "m.bin");
  fs::resize_file(dir / "m.bin", size - 3);
  EXPECT_THROW(load_model(dir / "m"), CheckpointError);
  fs::resize_file(dir / "m.bin", size + 8);
  EXPECT_THROW(load_model(dir / "m"), CheckpointError);
}
