#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>

#include "nightformer/ablation.hpp"
#include "nightformer/config.hpp"
#include "nightformer/dataset.hpp"
#include "nightformer/image_io.hpp"
#include "nightformer/phase_texture.hpp"
#include "nightformer/train.hpp"
#include "properties.hpp"

namespace nf {

namespace {

namespace fs = std::filesystem;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

TrainConfig config_with_overrides(const std::string& path, const std::vector<std::string>& overrides) {
  TrainConfig cfg = path.empty() ? TrainConfig{} : load_config(path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(' '));
      s.erase(s.find_last_not_of(' ') + 1);
      return s;
    };
    set_config_key(cfg, trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

int print_results(const std::vector<check::PropertyResult>& results, std::ostream& out) {
  std::size_t failed = 0;
  for (const auto& r : results) {
    out << (r.pass ? "PASS " : "FAIL ") << r.name << ": " << r.detail << "\n";
    failed += !r.pass;
  }
  out << (results.size() - failed) << "/" << results.size() << " properties passed\n";
  return failed == 0 ? 0 : 1;
}

double train_and_score(const TrainConfig& cfg, const Dataset& train_set, const Dataset& val_set,
                       const std::string& out_dir, std::ostream& err) {
  NightFormer<float> model(cfg.model);
  TrainOptions opts;
  opts.out_dir = out_dir;
  opts.threads = threads_from_env();
  opts.progress = &err;
  train(model, cfg, train_set.samples, opts);
  return miou(evaluate(model, cfg, val_set.samples)).mean;
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Night-time segmentation toolkit: data generation, phase textures, training and evaluation."};
  app.name("nightformer");
  app.require_subcommand(1, 1);

  // gen-data
  SceneConfig scene;
  std::string gen_out;
  std::size_t gen_count = 250;
  std::uint64_t gen_seed = 42;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic night-scene dataset");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--count", gen_count, "Number of samples")->capture_default_str();
  gen->add_option("--seed", gen_seed, "Dataset seed (sample i uses seed ^ i)")->capture_default_str();
  gen->add_option("--height", scene.height, "Image height")->capture_default_str();
  gen->add_option("--width", scene.width, "Image width")->capture_default_str();
  gen->add_option("--classes", scene.num_classes, "Number of classes including background")->capture_default_str();
  gen->add_option("--objects-min", scene.objects_min, "Minimum foreground objects per image")->capture_default_str();
  gen->add_option("--objects-max", scene.objects_max, "Maximum foreground objects per image")->capture_default_str();
  gen->add_option("--ambient-lo", scene.ambient_lo, "Lowest ambient brightness")->capture_default_str();
  gen->add_option("--ambient-hi", scene.ambient_hi, "Highest ambient brightness")->capture_default_str();
  gen->add_option("--contrast-gap", scene.contrast_gap, "Foreground minus background intensity")->capture_default_str();
  gen->add_option("--deceivers", scene.deceivers, "Background look-alike patches per image")->capture_default_str();
  gen->add_option("--noise", scene.noise_std, "Gaussian noise standard deviation")->capture_default_str();

  // phase-extract
  std::string pe_in, pe_out, pe_mode = "phase";
  std::optional<double> pe_c_a;
  auto* pe = app.add_subcommand("phase-extract", "Write the texture map of a PPM image");
  pe->add_option("--in", pe_in, "Input PPM (P6) image")->required();
  pe->add_option("--out", pe_out, "Output PPM (P6) texture image")->required();
  pe->add_option("--c-a", pe_c_a, "Constant amplitude (default: mean amplitude per channel)");
  pe->add_option("--mode", pe_mode, "Texture operator: phase, sobel or none")->capture_default_str();

  // train
  std::string tr_config, tr_data, tr_out;
  std::vector<std::string> tr_set;
  auto* tr = app.add_subcommand("train", "Train a model on the train split of a dataset");
  tr->add_option("--config", tr_config, "Config file (key = value lines); defaults apply when omitted");
  tr->add_option("--data", tr_data, "Dataset directory from gen-data")->required();
  tr->add_option("--out", tr_out, "Checkpoint directory (model.nft, params.txt, config.txt, metrics.log)")->required();
  tr->add_option("--set", tr_set, "Override a config key, key=value (repeatable)");

  // eval
  std::string ev_ckpt, ev_data, ev_report, ev_split = "val";
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint and write the per-class IoU report");
  ev->add_option("--ckpt", ev_ckpt, "model.nft file or its directory (config.txt must sit alongside)")->required();
  ev->add_option("--data", ev_data, "Dataset directory")->required();
  ev->add_option("--report", ev_report, "Report path; the report is also printed");
  ev->add_option("--split", ev_split, "Split to evaluate: val or train")->capture_default_str();

  // ablate
  std::string ab_axis, ab_config, ab_data, ab_out, ab_report;
  std::vector<std::string> ab_set;
  std::optional<std::size_t> ab_iterations;
  auto* ab = app.add_subcommand("ablate", "Train one model per setting along an axis and tabulate val mIoU");
  ab->add_option("--axis", ab_axis, "phase, matcher, depth or enhance-op")->required();
  ab->add_option("--config", ab_config, "Base config file");
  ab->add_option("--data", ab_data, "Dataset directory")->required();
  ab->add_option("--out", ab_out, "Directory for per-setting checkpoints and logs");
  ab->add_option("--iterations", ab_iterations,
                 "Training iterations per setting; the phase-2 start scales with it");
  ab->add_option("--set", ab_set, "Override a config key, key=value (repeatable)");
  ab->add_option("--report", ab_report, "Also write the table to this path");

  // grad-check / selftest
  std::uint64_t gc_seed = 1, st_seed = 1;
  auto* gc = app.add_subcommand("grad-check", "Finite-difference gradient checks in 64-bit");
  gc->add_option("--seed", gc_seed, "Seed for the random instances")->capture_default_str();
  auto* st = app.add_subcommand("selftest", "Run every oracle-equivalence and invariant suite");
  st->add_option("--seed", st_seed, "Seed for the random instances")->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*gen) {
      const Manifest m = gen_dataset(scene, gen_count, gen_seed, gen_out);
      const auto n_train = std::count_if(m.entries.begin(), m.entries.end(),
                                         [](const ManifestEntry& e) { return e.split == Split::Train; });
      out << "wrote " << m.count << " samples (" << n_train << " train / " << m.count - static_cast<std::size_t>(n_train)
          << " val) to " << gen_out << "\n";
    } else if (*pe) {
      TextureMode mode;
      try {
        mode = parse_texture_mode(pe_mode);
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      if (pe_c_a && !(*pe_c_a > 0)) throw UsageError("--c-a must be positive");
      const Tensor image = decode_ppm(read_file(pe_in));
      write_file(pe_out, encode_ppm(texture_image(image, mode, pe_c_a)));
      out << "wrote " << to_string(mode) << " texture " << image.dim(0) << "x" << image.dim(1) << " to " << pe_out << "\n";
    } else if (*tr) {
      const TrainConfig cfg = config_with_overrides(tr_config, tr_set);
      const Dataset data = load_dataset(tr_data, Split::Train);
      NightFormer<float> model(cfg.model);
      TrainOptions opts;
      opts.out_dir = tr_out;
      opts.threads = threads_from_env();
      opts.progress = &err;
      const TrainResult r = train(model, cfg, data.samples, opts);
      out << "trained " << r.log.size() << " iterations on " << data.samples.size() << " samples in "
          << static_cast<long>(r.seconds) << " s; final loss " << r.log.back().loss << "; checkpoint "
          << (fs::path(tr_out) / "model.nft").string() << "\n";
    } else if (*ev) {
      if (ev_split != "val" && ev_split != "train") throw UsageError("--split must be val or train");
      const LoadedModel lm = load_checkpoint(ev_ckpt);
      const Dataset data = load_dataset(ev_data, ev_split == "val" ? Split::Val : Split::Train);
      if (data.manifest.scene.num_classes != lm.config.model.num_classes) {
        throw std::runtime_error("dataset has " + std::to_string(data.manifest.scene.num_classes) +
                                 " classes but the checkpoint predicts " + std::to_string(lm.config.model.num_classes));
      }
      const std::string report = format_report(miou(evaluate(*lm.model, lm.config, data.samples)));
      if (!ev_report.empty()) write_file(ev_report, report);
      out << report;
    } else if (*ab) {
      AblationAxis axis;
      try {
        axis = parse_ablation_axis(ab_axis);
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      TrainConfig base = config_with_overrides(ab_config, ab_set);
      if (ab_iterations) {
        if (*ab_iterations == 0) throw UsageError("--iterations must be positive");
        base.phase2_start = base.phase2_start * *ab_iterations / base.iterations;
        base.iterations = *ab_iterations;
      }
      const Dataset train_set = load_dataset(ab_data, Split::Train);
      const Dataset val_set = load_dataset(ab_data, Split::Val);
      std::vector<AblationRow> rows;
      for (const auto& v : ablation_variants(axis, base)) {
        err << "ablate " << to_string(axis) << ": training " << v.label << "\n";
        const std::string dir = ab_out.empty() ? std::string() : (fs::path(ab_out) / v.label).string();
        rows.push_back({v.label, train_and_score(v.config, train_set, val_set, dir, err)});
      }
      const std::string table = format_ablation_table(axis, rows);
      if (!ab_report.empty()) write_file(ab_report, table);
      out << table;
    } else if (*gc) {
      return print_results(check::gradient_suite(gc_seed), out);
    } else if (*st) {
      return print_results(check::selftest_suites(st_seed), out);
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  } catch (const TrainingAborted& e) {
    err << "training aborted: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace nf
