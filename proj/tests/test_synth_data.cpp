#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <random>
#include <set>
#include <sstream>

#include <unistd.h>

#include "cli.hpp"
#include "nightformer/dataset.hpp"
#include "nightformer/image_io.hpp"
#include "nightformer/scene.hpp"
#include "test_util.hpp"

namespace nf {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("nf_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  return dir;
}

TEST(Scene, FlatBackgroundWhenAmbientFixedAndNoNoise) {
  SceneConfig cfg;
  cfg.deceivers = 0;
  cfg.noise_std = 0;
  cfg.ambient_lo = cfg.ambient_hi = 0.1;
  const SceneSample s = generate_scene(cfg, 5);
  std::size_t background = 0;
  for (std::size_t px = 0; px < s.mask.size(); ++px) {
    if (s.mask.labels[px] != 0) continue;
    ++background;
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(s.image[px * 3 + c], 0.1);
  }
  EXPECT_GT(background, 0u);
}

TEST(Scene, DeterministicAndInRange) {
  SceneConfig cfg;
  const SceneSample a = generate_scene(cfg, 77), b = generate_scene(cfg, 77), c = generate_scene(cfg, 78);
  EXPECT_EQ(a.mask, b.mask);
  EXPECT_TRUE(std::equal(a.image.data().begin(), a.image.data().end(), b.image.data().begin()));
  EXPECT_FALSE(std::equal(a.image.data().begin(), a.image.data().end(), c.image.data().begin()));
  EXPECT_EQ(a.image.shape(), (Shape{32, 64, 3}));
  for (double v : a.image.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  for (auto v : a.mask.labels) EXPECT_LT(v, 4);
}

TEST(Scene, EveryClassPresentAcrossSeeds) {
  SceneConfig cfg;
  std::size_t missing = 0;
  for (std::uint64_t seed = 1000; seed < 1100; ++seed) {
    const SceneSample s = generate_scene(cfg, seed);
    std::set<int> seen(s.mask.labels.begin(), s.mask.labels.end());
    missing += seen.size() != cfg.num_classes;
  }
  EXPECT_LE(missing, 2u);  // rare placement failures are skipped with a warning
}

TEST(Scene, MirrorFlipsColumnsAndIsAnInvolution) {
  const SceneSample s = generate_scene(SceneConfig{}, 11);
  const SceneSample m = mirror_sample(s);
  const std::size_t w = s.mask.width;
  EXPECT_EQ(m.mask.at(3, 0), s.mask.at(3, w - 1));
  EXPECT_EQ(m.image[(5 * w + 2) * 3 + 1], s.image[(5 * w + w - 3) * 3 + 1]);
  const SceneSample back = mirror_sample(m);
  EXPECT_EQ(back.mask, s.mask);
  EXPECT_EQ(testing::values(back.image), testing::values(s.image));
}

TEST(Scene, ConfigValidationAndKeys) {
  SceneConfig cfg;
  cfg.contrast_gap = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = SceneConfig{};
  cfg.ambient_hi = 1.5;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = SceneConfig{};
  cfg.objects_min = 5;
  cfg.objects_max = 2;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);

  SceneConfig k;
  set_scene_key(k, "scene.height", "64");
  set_scene_key(k, "scene.noise_std", "0.02");
  EXPECT_EQ(k.height, 64u);
  EXPECT_EQ(k.noise_std, 0.02);
  EXPECT_THROW(set_scene_key(k, "scene.colour", "1"), std::invalid_argument);
  EXPECT_THROW(set_scene_key(k, "scene.width", "-3"), std::invalid_argument);
  EXPECT_THROW(set_scene_key(k, "scene.width", "12px"), std::invalid_argument);
}

TEST(Codec, WhitePixelHeader) {
  EXPECT_EQ(encode_ppm(Tensor({1, 1, 3}, 1.0)), std::string("P6\n1 1\n255\n\xFF\xFF\xFF", 14));
  LabelMask m(1, 2);
  m.labels = {0, 3};
  EXPECT_EQ(encode_pgm(m), std::string("P5\n2 1\n255\n\x00\x03", 13));
}

TEST(Codec, RoundTripEqualsQuantization) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor x = testing::random_tensor({1 + rng() % 9, 1 + rng() % 9, 3}, rng, 0, 1);
    const Tensor back = decode_ppm(encode_ppm(x));
    EXPECT_EQ(testing::max_abs_diff(back, quantize(x)), 0.0);
    LabelMask m(1 + rng() % 5, 1 + rng() % 5);
    for (auto& v : m.labels) v = rng() % 256;
    EXPECT_EQ(decode_pgm(encode_pgm(m)), m);
  }
}

TEST(Codec, HeaderCommentsAccepted) {
  const Tensor t = decode_ppm(std::string("P6 # made by hand\n1 1\n# another\n255\n\x01\x02\x03", 39));
  EXPECT_EQ(t.shape(), (Shape{1, 1, 3}));
  EXPECT_EQ(t[2], 3.0 / 255.0);
}

TEST(Codec, MalformedInputsReportOffsets) {
  struct Case {
    std::string bytes;
    std::size_t offset;
  };
  const Case cases[] = {
      {"P3\n1 1\n255\n", 0},                             // wrong magic
      {"P6\n1 1\n65535\n", 7},                           // maxval
      {std::string("P6\n2 1\n255\n\x01\x02\x03", 14), 14},  // truncated payload
  };
  for (const auto& c : cases) {
    try {
      decode_ppm(c.bytes);
      ADD_FAILURE() << "accepted " << c.bytes;
    } catch (const FormatError& e) {
      EXPECT_EQ(e.offset(), c.offset) << e.what();
    }
  }
  EXPECT_THROW(decode_ppm(std::string("P6\n1 1\n255\n\x01\x02\x03\x04", 15)), FormatError);
  EXPECT_THROW(decode_pgm(std::string("P5\n0 1\n255\n", 11)), FormatError);
  EXPECT_THROW(decode_pgm(""), FormatError);
}

TEST(Dataset, SplitIsDisjointExhaustiveAndSeeded) {
  const auto a = split_assignment(250, 42), b = split_assignment(250, 42), c = split_assignment(250, 43);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  EXPECT_EQ(std::count(a.begin(), a.end(), Split::Train), 200);
  EXPECT_EQ(std::count(a.begin(), a.end(), Split::Val), 50);
}

TEST(Dataset, GenerateTenSamples) {
  SceneConfig cfg;
  const fs::path d1 = scratch_dir("gen1"), d2 = scratch_dir("gen2");
  const Manifest m = gen_dataset(cfg, 10, 9, d1.string());
  gen_dataset(cfg, 10, 9, d2.string());

  std::size_t ppm = 0, pgm = 0, txt = 0;
  for (const auto& e : fs::directory_iterator(d1)) {
    const auto ext = e.path().extension();
    ppm += ext == ".ppm";
    pgm += ext == ".pgm";
    txt += e.path().filename() == "manifest.txt";
  }
  EXPECT_EQ(ppm, 10u);
  EXPECT_EQ(pgm, 10u);
  EXPECT_EQ(txt, 1u);
  const std::string text = read_file((d1 / "manifest.txt").string());
  EXPECT_EQ(text, read_file((d2 / "manifest.txt").string()));
  EXPECT_EQ(read_file((d1 / "img_00003.ppm").string()), read_file((d2 / "img_00003.ppm").string()));

  const Manifest parsed = parse_manifest(text);
  EXPECT_EQ(serialize_manifest(parsed), text);
  std::set<std::string> train, val;
  for (const auto& e : parsed.entries) (e.split == Split::Train ? train : val).insert(e.image);
  EXPECT_EQ(train.size() + val.size(), 10u);
  for (const auto& v : val) EXPECT_EQ(train.count(v), 0u);

  const Dataset ds = load_dataset(d1.string(), Split::Train);
  EXPECT_EQ(ds.samples.size(), train.size());
  EXPECT_EQ(ds.samples.front().image.shape(), (Shape{32, 64, 3}));
  EXPECT_EQ(m.count, 10u);
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST(Dataset, LoadRejectsCorruptMask) {
  const fs::path d = scratch_dir("corrupt");
  SceneConfig cfg;
  gen_dataset(cfg, 5, 1, d.string());
  LabelMask bad(32, 64, 9);
  for (const auto& e : parse_manifest(read_file((d / "manifest.txt").string())).entries)
    write_file((d / e.mask).string(), encode_pgm(bad));
  EXPECT_THROW(load_dataset(d.string(), Split::Train), std::runtime_error);
  EXPECT_THROW(load_dataset((d / "nope").string(), Split::Train), std::runtime_error);
  fs::remove_all(d);
}

int run_cli(const std::vector<std::string>& args, std::string* out = nullptr, std::string* err = nullptr) {
  std::ostringstream o, e;
  const int code = cli_dispatch(args, o, e);
  if (out) *out = o.str();
  if (err) *err = e.str();
  return code;
}

TEST(Cli, UsageErrorsExitTwo) {
  std::string err;
  EXPECT_EQ(run_cli({"eval", "--ckpt", "x", "--data", "y", "--bogus"}, nullptr, &err), 2);
  EXPECT_NE(err.find("--bogus"), std::string::npos);
  EXPECT_NE(err.find("Usage"), std::string::npos);
  EXPECT_EQ(run_cli({"fly"}), 2);
  EXPECT_EQ(run_cli({}), 2);
  EXPECT_EQ(run_cli({"gen-data"}), 2);  // --out is required
  EXPECT_EQ(run_cli({"ablate", "--axis", "colour", "--data", "x"}), 2);
}

TEST(Cli, HelpDocumentsEveryFlag) {
  std::string out;
  EXPECT_EQ(run_cli({"--help"}, &out), 0);
  for (const char* sub : {"gen-data", "phase-extract", "train", "eval", "ablate", "grad-check", "selftest"})
    EXPECT_NE(out.find(sub), std::string::npos) << sub;
  EXPECT_EQ(run_cli({"ablate", "--help"}, &out), 0);
  for (const char* flag : {"--axis", "--config", "--data", "--iterations", "--set", "--report"})
    EXPECT_NE(out.find(flag), std::string::npos) << flag;
}

TEST(Cli, GenDataAndPhaseExtract) {
  const fs::path d = scratch_dir("cli");
  std::string out;
  ASSERT_EQ(run_cli({"gen-data", "--out", d.string(), "--count", "5", "--seed", "3"}, &out), 0);
  EXPECT_NE(out.find("wrote 5 samples"), std::string::npos) << out;
  const std::string tex = (d / "tex.ppm").string();
  for (const char* mode : {"phase", "sobel"}) {
    ASSERT_EQ(run_cli({"phase-extract", "--in", (d / "img_00000.ppm").string(), "--out", tex, "--mode", mode}), 0);
    EXPECT_EQ(decode_ppm(read_file(tex)).shape(), (Shape{32, 64, 3}));
  }
  EXPECT_EQ(run_cli({"phase-extract", "--in", (d / "img_00000.ppm").string(), "--out", tex, "--c-a", "-1"}), 2);
  EXPECT_EQ(run_cli({"phase-extract", "--in", (d / "missing.ppm").string(), "--out", tex}), 1);
  EXPECT_EQ(run_cli({"train", "--data", d.string(), "--out", (d / "ck").string(), "--set", "nonsense"}), 2);
  EXPECT_EQ(run_cli({"train", "--data", d.string(), "--out", (d / "ck").string(), "--set", "train.nope=1"}), 1);
  fs::remove_all(d);
}

TEST(Cli, SelftestPasses) {
  std::string out;
  EXPECT_EQ(run_cli({"selftest"}, &out), 0) << out;
  EXPECT_NE(out.find("21/21 properties passed"), std::string::npos) << out;
  EXPECT_EQ(out.find("FAIL"), std::string::npos);
}

}  // namespace
}  // namespace nf
