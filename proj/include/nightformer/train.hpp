#pragma once

#include <cstddef>
#include <iosfwd>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nightformer/config.hpp"
#include "nightformer/dataset.hpp"
#include "nightformer/metrics.hpp"
#include "nightformer/model.hpp"

namespace nf {

/// Adam with decoupled weight decay. Moments are kept in double per scalar.
class AdamW {
 public:
  AdamW(double beta1, double beta2, double eps, double weight_decay);

  /// grads holds one flat buffer per parameter entry, in entry order.
  void step(ParameterSet<float>& params, const std::vector<std::vector<float>>& grads, double lr);
  std::size_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_, wd_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Per-channel zero mean, unit variance (the std is floored at 1e-3).
Tensor standardize_channels(const Tensor& image);

/// Model inputs for one sample: the image and its texture map, as float.
struct PreparedSample {
  TensorF image;  // standardized
  TensorF texture;
  LabelMask mask;
};

PreparedSample prepare_sample(const SceneSample& s, const TrainConfig& cfg);

struct TrainOptions {
  std::string out_dir;            // checkpoint + metrics.log; empty skips writing
  std::size_t threads = 1;        // bit-identical results for any value
  std::ostream* progress = nullptr;
  std::size_t progress_every = 250;
};

struct IterationLog {
  std::size_t iteration = 0;
  double lr = 0;
  double loss = 0, bce = 0, dice = 0, ce = 0;
};

struct TrainResult {
  std::vector<IterationLog> log;
  double seconds = 0;
};

class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(const std::string& what, std::size_t iteration)
      : std::runtime_error(what), iteration_(iteration) {}
  std::size_t iteration() const { return iteration_; }

 private:
  std::size_t iteration_;
};

std::string format_log_line(const IterationLog& l);

/// Trains `model` in place. A non-finite loss stops training with
/// TrainingAborted after writing the pre-iteration weights as the checkpoint.
TrainResult train(NightFormer<float>& model, const TrainConfig& cfg, const std::vector<SceneSample>& samples,
                  const TrainOptions& opts = {});

/// Writes model.nft, params.txt and config.txt into dir.
void save_checkpoint(const std::string& dir, const NightFormer<float>& model, const TrainConfig& cfg);

struct LoadedModel {
  TrainConfig config;
  std::unique_ptr<NightFormer<float>> model;
};

/// `path` is a model.nft file (config.txt alongside) or its directory.
LoadedModel load_checkpoint(const std::string& path);

/// Forward pass at full mask resolution without recording gradients.
LabelMask infer(const NightFormer<float>& model, const PreparedSample& s);

ConfusionMatrix evaluate(const NightFormer<float>& model, const TrainConfig& cfg,
                         const std::vector<SceneSample>& samples);

std::string class_name(std::size_t cls);

/// One `class_name iou` line per class (`nan` when absent from both masks), then `miou <value>`.
std::string format_report(const MiouResult& r);

/// NF_THREADS, defaulting to 1; rejects non-positive or malformed values.
std::size_t threads_from_env();

}  // namespace nf
