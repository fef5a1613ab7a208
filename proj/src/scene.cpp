#include "nightformer/scene.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

namespace nf {

namespace {

enum class Shape2D { Rect, Ellipse, Band };

struct ClassStyle {
  Shape2D shape;
  double offset;                // multiples of the contrast gap
  std::array<double, 3> tint;   // per-channel gain on the offset
  double fx, fy;                // texture spatial frequency (cycles per pixel)
};

ClassStyle style_of(std::size_t cls) {
  static const std::array<ClassStyle, 3> base{{
      {Shape2D::Rect, 1.0, {1.25, 0.95, 0.80}, 0.0, 0.25},     // wide boxes, horizontal stripes
      {Shape2D::Ellipse, 1.5, {0.85, 1.20, 0.95}, 1.0 / 6, 1.0 / 6},  // blobs, diagonal ripple
      {Shape2D::Band, 2.0, {0.80, 0.95, 1.25}, 1.0 / 3, 0.0},  // tall bands, vertical stripes
  }};
  ClassStyle s = base[(cls - 1) % 3];
  // Classes past the third reuse a shape with a brighter offset.
  s.offset += 0.75 * static_cast<double>((cls - 1) / 3);
  return s;
}

struct Box {
  std::size_t y0, x0, h, w;
};

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

std::size_t uniform_int(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Box draw_extent(Shape2D shape, const SceneConfig& cfg, std::mt19937_64& rng) {
  const double sh = static_cast<double>(cfg.height) / 32.0, sw = static_cast<double>(cfg.width) / 64.0;
  auto scaled = [&](double lo, double hi, double s) {
    return std::max<std::size_t>(2, static_cast<std::size_t>(std::lround(uniform(rng, lo, hi) * s)));
  };
  Box b{0, 0, 0, 0};
  switch (shape) {
    case Shape2D::Rect: b.h = scaled(8, 12, sh); b.w = scaled(14, 22, sw); break;
    case Shape2D::Ellipse: b.h = scaled(12, 18, sh); b.w = scaled(8, 12, sw); break;
    case Shape2D::Band: b.h = scaled(18, 28, sh); b.w = scaled(5, 7, sw); break;
  }
  b.h = std::min(b.h, cfg.height);
  b.w = std::min(b.w, cfg.width);
  return b;
}

bool inside(Shape2D shape, const Box& b, std::size_t y, std::size_t x) {
  if (shape != Shape2D::Ellipse) return true;
  const double cy = (static_cast<double>(b.h) - 1) / 2, cx = (static_cast<double>(b.w) - 1) / 2;
  const double dy = (static_cast<double>(y) - cy) / (static_cast<double>(b.h) / 2);
  const double dx = (static_cast<double>(x) - cx) / (static_cast<double>(b.w) / 2);
  return dx * dx + dy * dy <= 1.0;
}

// Tries up to 100 random positions for a box that avoids every occupied pixel.
bool place(Box& b, const std::vector<char>& occupied, const SceneConfig& cfg, std::mt19937_64& rng) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    b.y0 = uniform_int(rng, 0, cfg.height - b.h);
    b.x0 = uniform_int(rng, 0, cfg.width - b.w);
    bool clear = true;
    for (std::size_t y = b.y0; y < b.y0 + b.h && clear; ++y)
      for (std::size_t x = b.x0; x < b.x0 + b.w && clear; ++x) clear = !occupied[y * cfg.width + x];
    if (clear) return true;
  }
  return false;
}

}  // namespace

void SceneConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument(m); };
  if (height < 8 || width < 8) fail("scene.height and scene.width must be at least 8");
  if (num_classes < 2 || num_classes > 255) fail("scene.num_classes must be in [2, 255]");
  if (objects_min > objects_max) fail("scene.objects_min must not exceed scene.objects_max");
  if (!(ambient_lo >= 0 && ambient_lo <= ambient_hi && ambient_hi <= 1)) fail("scene ambient range must lie within [0, 1]");
  if (!(contrast_gap > 0)) fail("scene.contrast_gap must be positive");
  if (!(noise_std >= 0)) fail("scene.noise_std must be non-negative");
}

SceneSample generate_scene(const SceneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const std::size_t h = cfg.height, w = cfg.width;

  // Illumination ramp along a random direction between two ambient levels.
  const double a0 = uniform(rng, cfg.ambient_lo, cfg.ambient_hi);
  const double a1 = uniform(rng, cfg.ambient_lo, cfg.ambient_hi);
  const double theta = uniform(rng, 0.0, 2 * std::numbers::pi);
  const double half_diag = 0.5 * std::hypot(static_cast<double>(h), static_cast<double>(w));
  std::vector<double> ambient(h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double proj = (static_cast<double>(x) - 0.5 * static_cast<double>(w)) * std::cos(theta) +
                          (static_cast<double>(y) - 0.5 * static_cast<double>(h)) * std::sin(theta);
      const double t = std::clamp(0.5 + proj / (2 * half_diag), 0.0, 1.0);
      ambient[y * w + x] = a0 == a1 ? a0 : a0 + (a1 - a0) * t;
    }
  }

  SceneSample s{Tensor({h, w, 3}), LabelMask(h, w), seed};
  double* img = s.image.mutable_ptr();
  for (std::size_t i = 0; i < h * w; ++i)
    for (std::size_t c = 0; c < 3; ++c) img[i * 3 + c] = ambient[i];

  std::vector<char> occupied(h * w, 0);
  const std::size_t fg_classes = cfg.num_classes - 1;
  const std::size_t count = std::max(fg_classes, uniform_int(rng, cfg.objects_min, cfg.objects_max));
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t cls = k < fg_classes ? k + 1 : uniform_int(rng, 1, fg_classes);
    const ClassStyle st = style_of(cls);
    Box b = draw_extent(st.shape, cfg, rng);
    const double phase = uniform(rng, 0.0, 2 * std::numbers::pi);
    if (!place(b, occupied, cfg, rng)) {
      std::cerr << "warning: scene seed " << seed << ": no room for an object of class " << cls << ", skipped\n";
      continue;
    }
    for (std::size_t y = 0; y < b.h; ++y) {
      for (std::size_t x = 0; x < b.w; ++x) {
        if (!inside(st.shape, b, y, x)) continue;
        const std::size_t gy = b.y0 + y, gx = b.x0 + x, i = gy * w + gx;
        const double tex = std::sin(2 * std::numbers::pi * (st.fx * static_cast<double>(gx) + st.fy * static_cast<double>(gy)) + phase);
        const double lift = cfg.contrast_gap * (st.offset + 0.6 * tex);
        for (std::size_t c = 0; c < 3; ++c) img[i * 3 + c] = ambient[i] + lift * st.tint[c];
        s.mask.labels[i] = static_cast<std::uint8_t>(cls);
        occupied[i] = 1;
      }
    }
  }

  // Flat look-alikes of a foreground class, left in the background label.
  for (std::size_t d = 0; d < cfg.deceivers; ++d) {
    const std::size_t mimic = uniform_int(rng, 1, fg_classes);
    const ClassStyle st = style_of(mimic);
    // Smaller than real objects so they fit between them.
    Box b{0, 0, std::min(cfg.height, uniform_int(rng, cfg.height / 6, cfg.height / 3)),
          std::min(cfg.width, uniform_int(rng, cfg.width / 10, cfg.width / 5))};
    if (!place(b, occupied, cfg, rng)) {
      std::cerr << "warning: scene seed " << seed << ": no room for deceiver " << d << ", skipped\n";
      continue;
    }
    for (std::size_t y = 0; y < b.h; ++y) {
      for (std::size_t x = 0; x < b.w; ++x) {
        const std::size_t i = (b.y0 + y) * w + b.x0 + x;
        for (std::size_t c = 0; c < 3; ++c) img[i * 3 + c] = ambient[i] + cfg.contrast_gap * st.offset * st.tint[c];
        occupied[i] = 1;
      }
    }
  }

  if (cfg.noise_std > 0) {
    std::normal_distribution<double> noise(0.0, cfg.noise_std);
    for (double& v : s.image.mutable_data()) v += noise(rng);
  }
  for (double& v : s.image.mutable_data()) v = std::clamp(v, 0.0, 1.0);
  return s;
}

SceneSample mirror_sample(const SceneSample& s) {
  const std::size_t h = s.mask.height, w = s.mask.width;
  if (s.image.shape() != Shape{h, w, 3}) throw ShapeError("mirror_sample: image " + shape_str(s.image.shape()));
  SceneSample m{Tensor({h, w, 3}), LabelMask(h, w), s.seed};
  auto out = m.image.mutable_data();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t src = y * w + (w - 1 - x), dst = y * w + x;
      for (std::size_t c = 0; c < 3; ++c) out[dst * 3 + c] = s.image[src * 3 + c];
      m.mask.labels[dst] = s.mask.labels[src];
    }
  return m;
}

std::string serialize_scene_config(const SceneConfig& c) {
  auto num = [](double v) {
    char buf[32];
    return std::string(buf, std::to_chars(buf, buf + sizeof buf, v).ptr);
  };
  std::ostringstream os;
  os << "scene.height = " << c.height << "\n"
     << "scene.width = " << c.width << "\n"
     << "scene.num_classes = " << c.num_classes << "\n"
     << "scene.objects_min = " << c.objects_min << "\n"
     << "scene.objects_max = " << c.objects_max << "\n"
     << "scene.ambient_lo = " << num(c.ambient_lo) << "\n"
     << "scene.ambient_hi = " << num(c.ambient_hi) << "\n"
     << "scene.contrast_gap = " << num(c.contrast_gap) << "\n"
     << "scene.deceivers = " << c.deceivers << "\n"
     << "scene.noise_std = " << num(c.noise_std) << "\n";
  return os.str();
}

void set_scene_key(SceneConfig& c, const std::string& key, const std::string& value) {
  auto bad = [&] { return std::invalid_argument(key + ": bad value '" + value + "'"); };
  auto as_size = [&] {
    if (value.empty() || value.front() == '-') throw bad();
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(value, &used);
    } catch (const std::exception&) {
      throw bad();
    }
    if (used != value.size()) throw bad();
    return static_cast<std::size_t>(v);
  };
  auto as_double = [&] {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(value, &used);
    } catch (const std::exception&) {
      throw bad();
    }
    if (used != value.size()) throw bad();
    return v;
  };
  if (key == "scene.height") c.height = as_size();
  else if (key == "scene.width") c.width = as_size();
  else if (key == "scene.num_classes") c.num_classes = as_size();
  else if (key == "scene.objects_min") c.objects_min = as_size();
  else if (key == "scene.objects_max") c.objects_max = as_size();
  else if (key == "scene.ambient_lo") c.ambient_lo = as_double();
  else if (key == "scene.ambient_hi") c.ambient_hi = as_double();
  else if (key == "scene.contrast_gap") c.contrast_gap = as_double();
  else if (key == "scene.deceivers") c.deceivers = as_size();
  else if (key == "scene.noise_std") c.noise_std = as_double();
  else throw std::invalid_argument("unknown scene key '" + key + "'");
}

}  // namespace nf
