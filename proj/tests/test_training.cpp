#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>

#include <unistd.h>

#include "nightformer/config.hpp"
#include "nightformer/image_io.hpp"
#include "nightformer/losses.hpp"
#include "nightformer/scene.hpp"
#include "nightformer/train.hpp"
#include "test_util.hpp"

namespace nf {
namespace {

namespace fs = std::filesystem;

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.model.num_classes = 3;
  cfg.model.backbone_widths = {4, 6, 8, 8};
  cfg.model.phase_widths = {2, 4, 4, 4};
  cfg.model.decoder.channels = 8;
  cfg.model.matcher.prototypes = 4;
  cfg.model.matcher.reliable_k = 4;
  cfg.model.matcher.layers = 1;
  cfg.model.matcher.ffn_hidden = 16;
  cfg.iterations = 3;
  cfg.phase2_start = 2;
  cfg.batch = 2;
  return cfg;
}

std::vector<SceneSample> tiny_samples(std::size_t count) {
  SceneConfig sc;
  sc.height = 32;
  sc.width = 32;
  sc.num_classes = 3;
  sc.objects_min = 2;
  sc.objects_max = 2;
  sc.deceivers = 1;
  std::vector<SceneSample> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_scene(sc, 100 + i));
  return out;
}

double batch_loss(const NightFormer<float>& model, const TrainConfig& cfg, const std::vector<SceneSample>& samples) {
  NoTapeGuard<float> guard;
  double total = 0;
  for (const auto& s : samples) {
    const PreparedSample p = prepare_sample(s, cfg);
    SegOutput<float> o = model.forward(p.image, p.texture);
    o.mask_logits = upsample_logits_to(o.mask_logits, p.mask.height, p.mask.width);
    total += total_loss(o, p.mask, cfg.model.num_classes, cfg.loss).item();
  }
  return total / static_cast<double>(samples.size());
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("nf_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  return dir;
}

TEST(AdamW, FirstStepMatchesClosedForm) {
  ParameterSet<float> ps;
  ps.constant("layer.weight", {2}, 1.0);
  ps.constant("layer.bias", {2}, 1.0);
  AdamW opt(0.9, 0.999, 1e-8, 0.1);
  opt.step(ps, {{0.5f, -2.0f}, {0.5f, -2.0f}}, 0.01);
  // bias-corrected first step moves each weight by lr * sign(g); decay only on weights
  EXPECT_NEAR(ps.entries()[0].value[0], 1.0 - 0.01 * 0.1 - 0.01, 1e-6);
  EXPECT_NEAR(ps.entries()[0].value[1], 1.0 - 0.01 * 0.1 + 0.01, 1e-6);
  EXPECT_NEAR(ps.entries()[1].value[0], 1.0 - 0.01, 1e-6);
  EXPECT_NEAR(ps.entries()[1].value[1], 1.0 + 0.01, 1e-6);
  EXPECT_EQ(opt.steps(), 1u);
  EXPECT_THROW(opt.step(ps, {{0.0f}}, 0.01), std::invalid_argument);
}

TEST(StandardizeChannels, ZeroMeanUnitVariance) {
  std::mt19937_64 rng(1);
  Tensor img({4, 5, 3});
  std::uniform_real_distribution<double> d(0, 0.3);
  for (double& v : img.mutable_data()) v = d(rng);
  const Tensor s = standardize_channels(img);
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0, var = 0;
    for (std::size_t i = 0; i < 20; ++i) mean += s[i * 3 + c];
    mean /= 20;
    for (std::size_t i = 0; i < 20; ++i) var += (s[i * 3 + c] - mean) * (s[i * 3 + c] - mean);
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(std::sqrt(var / 20), 1.0, 0.02);
  }
  for (double v : testing::values(standardize_channels(Tensor({2, 2, 3}, 0.4)))) EXPECT_EQ(v, 0.0);
}

TEST(Config, RoundTripAndOverrides) {
  TrainConfig cfg = tiny_config();
  cfg.model.texture = TextureMode::Sobel;
  cfg.model.matcher.mode = MatcherMode::Vanilla;
  cfg.model.decoder.depth = 2;
  cfg.c_a = 3.25;
  cfg.lr = 7.5e-4;
  const std::string text = serialize_config(cfg);
  EXPECT_EQ(serialize_config(parse_config(text)), text);
  const TrainConfig back = parse_config(text);
  EXPECT_EQ(back.model.texture, TextureMode::Sobel);
  EXPECT_EQ(back.model.decoder.depth, 2u);
  EXPECT_EQ(*back.c_a, 3.25);
  EXPECT_EQ(back.lr, 7.5e-4);

  const TrainConfig c2 = parse_config("# comment\n\n  train.iterations = 12  # trailing\ntrain.phase2_start = 10\nphase.c_a = mean\n");
  EXPECT_EQ(c2.iterations, 12u);
  EXPECT_FALSE(c2.c_a.has_value());
}

TEST(Config, ErrorsNameTheLineAndKey) {
  try {
    parse_config("train.lr = 1e-3\ntrain.lrr = 5\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_NE(std::string(e.what()).find("train.lrr"), std::string::npos);
  }
  EXPECT_THROW(parse_config("train.batch = -1\n"), ConfigError);
  EXPECT_THROW(parse_config("no equals sign\n"), ConfigError);
  EXPECT_THROW(parse_config("backbone.strides = 4,2,2\n"), ConfigError);
  TrainConfig bad;
  bad.lr_final = bad.lr;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = TrainConfig{};
  bad.phase2_start = bad.iterations + 1;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Train, OneStepReducesLossOnFrozenBatch) {
  TrainConfig cfg = tiny_config();
  cfg.iterations = 1;
  cfg.phase2_start = 1;
  cfg.grad_clip = 0;
  cfg.lr = 1e-3;
  const auto samples = tiny_samples(2);
  NightFormer<float> model(cfg.model);
  const double before = batch_loss(model, cfg, samples);
  const TrainResult r = train(model, cfg, samples);
  ASSERT_EQ(r.log.size(), 1u);
  EXPECT_NEAR(r.log[0].loss, before, 1e-4 * before);
  EXPECT_LT(batch_loss(model, cfg, samples), before);
}

TEST(Train, DeterministicAcrossRunsAndThreadCounts) {
  const TrainConfig cfg = tiny_config();
  const auto samples = tiny_samples(3);
  auto run = [&](std::size_t threads) {
    NightFormer<float> model(cfg.model);
    TrainOptions opts;
    opts.threads = threads;
    const TrainResult r = train(model, cfg, samples, opts);
    std::string log;
    for (const auto& l : r.log) log += format_log_line(l) + "\n";
    std::vector<float> weights;
    for (const auto& e : model.parameters().entries()) weights.insert(weights.end(), e.value.data().begin(), e.value.data().end());
    return std::make_pair(log, weights);
  };
  const auto a = run(1), b = run(1), c = run(2);
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  EXPECT_EQ(a.first, c.first);
  EXPECT_EQ(a.second, c.second);
  EXPECT_EQ(a.first.substr(0, a.first.find(' ', 5)), "iter 0");
}

TEST(Train, CheckpointRoundTripPreservesPredictions) {
  const TrainConfig cfg = tiny_config();
  const auto samples = tiny_samples(2);
  const fs::path dir = scratch_dir("ckpt");
  NightFormer<float> model(cfg.model);
  TrainOptions opts;
  opts.out_dir = dir.string();
  train(model, cfg, samples, opts);
  for (const char* f : {"model.nft", "params.txt", "config.txt", "metrics.log"}) EXPECT_TRUE(fs::exists(dir / f)) << f;
  const std::string log = read_file((dir / "metrics.log").string());
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 3);

  const LoadedModel lm = load_checkpoint(dir.string());
  const LoadedModel lm2 = load_checkpoint((dir / "model.nft").string());
  EXPECT_EQ(serialize_config(lm.config), serialize_config(cfg));
  for (const auto& s : samples) {
    const PreparedSample p = prepare_sample(s, cfg);
    EXPECT_EQ(infer(*lm.model, p), infer(model, p));
    EXPECT_EQ(infer(*lm2.model, p), infer(model, p));
  }

  // a trailing byte or a model of a different shape is rejected
  {
    std::ofstream f(dir / "model.nft", std::ios::app | std::ios::binary);
    f << 'x';
  }
  EXPECT_THROW(load_checkpoint(dir.string()), std::runtime_error);
  EXPECT_THROW(load_checkpoint((dir / "missing").string()), std::runtime_error);
  fs::remove_all(dir);
}

TEST(Train, NonFiniteLossAbortsWithCheckpoint) {
  TrainConfig cfg = tiny_config();
  cfg.iterations = 50;
  cfg.phase2_start = 50;
  cfg.lr = 1e30;
  cfg.lr_final = 1e29;
  cfg.grad_clip = 0;
  const fs::path dir = scratch_dir("abort");
  NightFormer<float> model(cfg.model);
  TrainOptions opts;
  opts.out_dir = dir.string();
  try {
    train(model, cfg, tiny_samples(2), opts);
    FAIL() << "expected TrainingAborted";
  } catch (const TrainingAborted& e) {
    EXPECT_GT(e.iteration(), 0u);
    EXPECT_NE(std::string(e.what()).find("iteration " + std::to_string(e.iteration())), std::string::npos);
  }
  EXPECT_TRUE(fs::exists(dir / "model.nft"));
  fs::remove_all(dir);
}

TEST(Report, FormatAndAbsentClasses) {
  MiouResult r;
  r.per_class = {0.5, std::nullopt, 2.0 / 3.0, 1.0, 0.25};
  r.mean = 0.6;
  EXPECT_EQ(format_report(r),
            "background 0.500000\nvehicle nan\nperson 0.666667\npole 1.000000\nclass_4 0.250000\nmiou 0.600000\n");
}

TEST(Threads, EnvironmentParsing) {
  ::unsetenv("NF_THREADS");
  EXPECT_EQ(threads_from_env(), 1u);
  ::setenv("NF_THREADS", "3", 1);
  EXPECT_EQ(threads_from_env(), 3u);
  for (const char* bad : {"0", "-2", "x", "4x", "1000"}) {
    ::setenv("NF_THREADS", bad, 1);
    EXPECT_THROW(threads_from_env(), std::invalid_argument) << bad;
  }
  ::unsetenv("NF_THREADS");
}

}  // namespace
}  // namespace nf
