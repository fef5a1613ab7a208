#include "nightformer/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "nightformer/image_io.hpp"
#include "nightformer/losses.hpp"
#include "nightformer/ops.hpp"
#include "nightformer/phase_texture.hpp"
#include "nightformer/tensor_io.hpp"

namespace nf {

namespace fs = std::filesystem;

AdamW::AdamW(double beta1, double beta2, double eps, double weight_decay)
    : beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {}

void AdamW::step(ParameterSet<float>& params, const std::vector<std::vector<float>>& grads, double lr) {
  auto& entries = params.entries();
  if (grads.size() != entries.size()) throw std::invalid_argument("AdamW: gradient list does not match parameters");
  if (m_.empty()) {
    for (const auto& e : entries) {
      m_.emplace_back(e.value.size(), 0.0);
      v_.emplace_back(e.value.size(), 0.0);
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t p = 0; p < entries.size(); ++p) {
    std::span<float> w = entries[p].value.mutable_data();
    const std::vector<float>& g = grads[p];
    if (g.size() != w.size()) throw std::invalid_argument("AdamW: gradient size mismatch for " + entries[p].name);
    // Gains, shifts and biases are not decayed.
    const bool decay = w.size() > 0 && entries[p].name.find(".weight") != std::string::npos;
    std::vector<double>& m = m_[p];
    std::vector<double>& v = v_[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      m[i] = beta1_ * m[i] + (1 - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1 - beta2_) * gi * gi;
      double wi = w[i];
      if (decay) wi -= lr * wd_ * wi;
      wi -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
      w[i] = static_cast<float>(wi);
    }
  }
}

Tensor standardize_channels(const Tensor& image) {
  const std::size_t c = image.dim(2), n = image.size() / c;
  Tensor out(image.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean = 0, var = 0;
    for (std::size_t i = 0; i < n; ++i) mean += image[i * c + ch];
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) var += (image[i * c + ch] - mean) * (image[i * c + ch] - mean);
    const double inv = 1.0 / (std::sqrt(var / static_cast<double>(n)) + 1e-3);
    for (std::size_t i = 0; i < n; ++i) out.mutable_data()[i * c + ch] = (image[i * c + ch] - mean) * inv;
  }
  return out;
}

PreparedSample prepare_sample(const SceneSample& s, const TrainConfig& cfg) {
  if (s.image.rank() != 3 || s.image.dim(2) != 3) throw ShapeError("sample image must be [H, W, 3], got " + shape_str(s.image.shape()));
  PreparedSample p;
  p.image = standardize_channels(s.image).cast<float>();
  p.texture = cfg.model.texture == TextureMode::None ? TensorF(s.image.shape(), 0.0f)
                                                     : texture_image(s.image, cfg.model.texture, cfg.c_a).cast<float>();
  p.mask = s.mask;
  return p;
}

std::string format_log_line(const IterationLog& l) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "iter %zu lr %.6g loss %.9g bce %.9g dice %.9g ce %.9g", l.iteration, l.lr, l.loss,
                l.bce, l.dice, l.ce);
  return buf;
}

namespace {

struct SampleGrad {
  std::vector<std::vector<float>> grads;
  LossBreakdown parts;
};

// Forward and backward for one sample on `model`; gradients are moved out and
// the model's gradient buffers cleared.
SampleGrad sample_gradient(NightFormer<float>& model, const PreparedSample& s, const TrainConfig& cfg, float weight) {
  SampleGrad out;
  {
    Tape<float> tape;
    SegOutput<float> o = model.forward(s.image, s.texture);
    o.mask_logits = upsample_logits_to(o.mask_logits, s.mask.height, s.mask.width);
    auto finite = [](const TensorF& t) {
      return std::all_of(t.data().begin(), t.data().end(), [](float v) { return std::isfinite(v); });
    };
    if (finite(o.mask_logits) && finite(o.class_logits)) {
      const TensorF loss = total_loss(o, s.mask, cfg.model.num_classes, cfg.loss, &out.parts);
      tape.backward(scale(loss, weight));
    } else {
      // Matching is undefined on non-finite costs; let the caller abort.
      out.parts.total = std::numeric_limits<double>::quiet_NaN();
    }
  }
  for (auto& e : model.parameters().entries()) {
    std::vector<float> g(e.value.size(), 0.0f);
    if (e.value.has_grad()) g.assign(e.value.grad().begin(), e.value.grad().end());
    out.grads.push_back(std::move(g));
    e.value.zero_grad();
  }
  return out;
}

void write_all_checkpoint(const TrainOptions& opts, const NightFormer<float>& model, const TrainConfig& cfg) {
  if (!opts.out_dir.empty()) save_checkpoint(opts.out_dir, model, cfg);
}

}  // namespace

TrainResult train(NightFormer<float>& model, const TrainConfig& cfg, const std::vector<SceneSample>& samples,
                  const TrainOptions& opts) {
  cfg.validate();
  if (samples.empty()) throw std::invalid_argument("train: no training samples");
  const auto start = std::chrono::steady_clock::now();

  std::vector<PreparedSample> prepared;
  prepared.reserve(samples.size());
  for (const auto& s : samples) prepared.push_back(prepare_sample(s, cfg));
  // Mirrored copies live at index i + n.
  if (cfg.hflip)
    for (const auto& s : samples) prepared.push_back(prepare_sample(mirror_sample(s), cfg));

  const std::size_t workers = std::max<std::size_t>(1, std::min(opts.threads, cfg.batch));
  std::vector<std::unique_ptr<NightFormer<float>>> replicas;
  for (std::size_t r = 1; r < workers; ++r) replicas.push_back(std::make_unique<NightFormer<float>>(cfg.model));
  auto worker_model = [&](std::size_t r) -> NightFormer<float>& { return r == 0 ? model : *replicas[r - 1]; };

  std::ofstream log_file;
  if (!opts.out_dir.empty()) {
    fs::create_directories(opts.out_dir);
    log_file.open((fs::path(opts.out_dir) / "metrics.log").string(), std::ios::trunc);
    if (!log_file) throw std::runtime_error("cannot write " + (fs::path(opts.out_dir) / "metrics.log").string());
  }

  AdamW opt(cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();

  TrainResult result;
  const float weight = 1.0f / static_cast<float>(cfg.batch);
  std::vector<SampleGrad> slots(cfg.batch);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    std::vector<std::size_t> batch(cfg.batch);
    for (std::size_t& b : batch) {
      if (cursor == order.size()) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
        cursor = 0;
      }
      b = order[cursor++];
      if (cfg.hflip && (rng() & 1)) b += samples.size();
    }

    for (std::size_t r = 1; r < workers; ++r) worker_model(r).parameters().copy_values_from(model.parameters());
    if (workers == 1) {
      for (std::size_t b = 0; b < cfg.batch; ++b) slots[b] = sample_gradient(model, prepared[batch[b]], cfg, weight);
    } else {
      std::vector<std::thread> pool;
      std::vector<std::exception_ptr> errors(workers);
      for (std::size_t r = 0; r < workers; ++r) {
        pool.emplace_back([&, r] {
          try {
            for (std::size_t b = r; b < cfg.batch; b += workers)
              slots[b] = sample_gradient(worker_model(r), prepared[batch[b]], cfg, weight);
          } catch (...) {
            errors[r] = std::current_exception();
          }
        });
      }
      for (auto& t : pool) t.join();
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    }

    // Deterministic aggregation in sample order.
    IterationLog entry;
    entry.iteration = it;
    entry.lr = it < cfg.phase2_start ? cfg.lr : cfg.lr_final;
    std::vector<std::vector<float>> grads = std::move(slots[0].grads);
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      if (b > 0) {
        for (std::size_t p = 0; p < grads.size(); ++p)
          for (std::size_t i = 0; i < grads[p].size(); ++i) grads[p][i] += slots[b].grads[p][i];
      }
      const double bw = 1.0 / static_cast<double>(cfg.batch);
      entry.loss += bw * slots[b].parts.total;
      entry.bce += bw * slots[b].parts.bce;
      entry.dice += bw * slots[b].parts.dice;
      entry.ce += bw * slots[b].parts.ce;
    }

    bool finite = std::isfinite(entry.loss);
    double norm2 = 0;
    for (const auto& g : grads)
      for (float v : g) norm2 += static_cast<double>(v) * v;
    finite = finite && std::isfinite(norm2);
    if (!finite) {
      write_all_checkpoint(opts, model, cfg);
      if (log_file) log_file << format_log_line(entry) << "\n";
      throw TrainingAborted("non-finite loss at iteration " + std::to_string(it) +
                                (opts.out_dir.empty() ? std::string() : "; last good checkpoint in " + opts.out_dir),
                            it);
    }
    if (cfg.grad_clip > 0) {
      const double norm = std::sqrt(norm2);
      if (norm > cfg.grad_clip) {
        const float f = static_cast<float>(cfg.grad_clip / norm);
        for (auto& g : grads)
          for (float& v : g) v *= f;
      }
    }
    opt.step(model.parameters(), grads, entry.lr);

    if (log_file) log_file << format_log_line(entry) << "\n";
    result.log.push_back(entry);
    if (opts.progress && opts.progress_every && (it % opts.progress_every == 0 || it + 1 == cfg.iterations)) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      *opts.progress << format_log_line(entry) << " elapsed " << static_cast<long>(secs) << "s" << std::endl;
    }
  }
  write_all_checkpoint(opts, model, cfg);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

void save_checkpoint(const std::string& dir, const NightFormer<float>& model, const TrainConfig& cfg) {
  fs::create_directories(dir);
  const std::string model_path = (fs::path(dir) / "model.nft").string();
  {
    std::ofstream f(model_path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + model_path);
    for (const auto& e : model.parameters().entries()) write_tensor(f, e.value);
    if (!f) throw std::runtime_error("write failed for " + model_path);
  }
  std::ostringstream names;
  for (const auto& e : model.parameters().entries()) names << e.name << ' ' << shape_str(e.value.shape()) << "\n";
  write_file((fs::path(dir) / "params.txt").string(), names.str());
  write_file((fs::path(dir) / "config.txt").string(), serialize_config(cfg));
}

LoadedModel load_checkpoint(const std::string& path) {
  fs::path model_path(path);
  if (fs::is_directory(model_path)) model_path /= "model.nft";
  const fs::path config_path = model_path.parent_path() / "config.txt";
  if (!fs::exists(model_path)) throw std::runtime_error("checkpoint " + model_path.string() + " not found");
  if (!fs::exists(config_path)) throw std::runtime_error("config " + config_path.string() + " not found next to checkpoint");

  LoadedModel lm;
  lm.config = load_config(config_path.string());
  lm.model = std::make_unique<NightFormer<float>>(lm.config.model);
  std::ifstream f(model_path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + model_path.string());
  for (auto& e : lm.model->parameters().entries()) {
    const TensorF t = read_tensor<float>(f);
    if (t.shape() != e.value.shape()) {
      throw std::runtime_error(model_path.string() + ": parameter " + e.name + " has shape " + shape_str(t.shape()) +
                               ", model expects " + shape_str(e.value.shape()));
    }
    std::copy(t.data().begin(), t.data().end(), e.value.mutable_data().begin());
  }
  if (f.peek() != std::char_traits<char>::eof()) throw std::runtime_error(model_path.string() + ": trailing data");
  return lm;
}

LabelMask infer(const NightFormer<float>& model, const PreparedSample& s) {
  NoTapeGuard<float> no_tape;
  SegOutput<float> o = model.forward(s.image, s.texture);
  o.mask_logits = upsample_logits_to(o.mask_logits, s.image.dim(0), s.image.dim(1));
  return predict(o);
}

ConfusionMatrix evaluate(const NightFormer<float>& model, const TrainConfig& cfg, const std::vector<SceneSample>& samples) {
  ConfusionMatrix cm(cfg.model.num_classes);
  for (const auto& s : samples) {
    const PreparedSample p = prepare_sample(s, cfg);
    cm.add(infer(model, p), s.mask);
  }
  return cm;
}

std::string class_name(std::size_t cls) {
  static const char* names[] = {"background", "vehicle", "person", "pole"};
  return cls < 4 ? names[cls] : "class_" + std::to_string(cls);
}

std::string format_report(const MiouResult& r) {
  std::ostringstream os;
  char buf[64];
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    if (r.per_class[c]) {
      std::snprintf(buf, sizeof buf, "%.6f", *r.per_class[c]);
      os << class_name(c) << ' ' << buf << "\n";
    } else {
      os << class_name(c) << " nan\n";
    }
  }
  std::snprintf(buf, sizeof buf, "%.6f", r.mean);
  os << "miou " << buf << "\n";
  return os.str();
}

std::size_t threads_from_env() {
  const char* v = std::getenv("NF_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1 || n > 256) throw std::invalid_argument(std::string("NF_THREADS must be in [1, 256], got '") + v + "'");
  return static_cast<std::size_t>(n);
}

}  // namespace nf
