#include "nightformer/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <vector>

namespace nf {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw std::invalid_argument(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    throw std::invalid_argument(key + ": expected a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument(key + ": expected true or false, got '" + v + "'");
}

std::array<std::size_t, 4> to_quad(const std::string& key, const std::string& v) {
  std::array<std::size_t, 4> out{};
  std::stringstream ss(v);
  std::string part;
  std::size_t i = 0;
  while (std::getline(ss, part, ',')) {
    if (i == 4) throw std::invalid_argument(key + ": expected 4 comma-separated values");
    out[i++] = to_size(key, trim(part));
  }
  if (i != 4) throw std::invalid_argument(key + ": expected 4 comma-separated values");
  return out;
}

std::string quad_str(const std::array<std::size_t, 4>& q) {
  return std::to_string(q[0]) + "," + std::to_string(q[1]) + "," + std::to_string(q[2]) + "," + std::to_string(q[3]);
}

// Shortest text that parses back to the same double.
std::string num(double v) {
  char buf[32];
  return std::string(buf, std::to_chars(buf, buf + sizeof buf, v).ptr);
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument(m); };
  if (model.num_classes < 2 || model.num_classes > 255) fail("model.num_classes must be in [2, 255]");
  if (model.matcher.prototypes < model.num_classes) fail("matcher.prototypes must be >= model.num_classes");
  if (model.matcher.reliable_k == 0) fail("matcher.reliable_k must be positive");
  if (model.matcher.layers == 0) fail("matcher.layers must be positive");
  if (model.decoder.depth < 1 || model.decoder.depth > 4) fail("decoder.depth must be in [1, 4]");
  if (model.decoder.channels == 0) fail("decoder.channels must be positive");
  for (std::size_t s : model.strides)
    if (s == 0) fail("backbone.strides must be positive");
  if (!(lr > 0)) fail("train.lr must be positive");
  if (!(lr_final > 0) || !(lr_final < lr)) fail("train.lr_final must be positive and below train.lr");
  if (iterations == 0) fail("train.iterations must be positive");
  if (phase2_start > iterations) fail("train.phase2_start must not exceed train.iterations");
  if (batch == 0) fail("train.batch must be positive");
  if (weight_decay < 0) fail("train.weight_decay must be non-negative");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) fail("train.beta1/beta2 must be in [0, 1)");
  if (!(adam_eps > 0)) fail("train.adam_eps must be positive");
  if (grad_clip < 0) fail("train.grad_clip must be non-negative");
  if (loss.cls < 0 || loss.bce < 0 || loss.dice < 0 || !(loss.dice_eps > 0)) fail("loss weights must be non-negative");
  if (c_a && !(*c_a > 0)) fail("phase.c_a must be positive");
}

void set_config_key(TrainConfig& c, const std::string& key, const std::string& v) {
  ModelConfig& m = c.model;
  if (key == "model.num_classes") m.num_classes = to_size(key, v);
  else if (key == "model.init_seed") m.init_seed = to_size(key, v);
  else if (key == "backbone.widths") m.backbone_widths = to_quad(key, v);
  else if (key == "backbone.strides") m.strides = to_quad(key, v);
  else if (key == "phase.widths") m.phase_widths = to_quad(key, v);
  else if (key == "phase.mode") m.texture = parse_texture_mode(v);
  else if (key == "phase.c_a") c.c_a = v == "mean" ? std::nullopt : std::optional<double>(to_double(key, v));
  else if (key == "decoder.depth") m.decoder.depth = to_size(key, v);
  else if (key == "decoder.channels") m.decoder.channels = to_size(key, v);
  else if (key == "decoder.normalize_amp_map") m.decoder.normalize_amp_map = to_bool(key, v);
  else if (key == "matcher.prototypes") m.matcher.prototypes = to_size(key, v);
  else if (key == "matcher.reliable_k") m.matcher.reliable_k = to_size(key, v);
  else if (key == "matcher.layers") m.matcher.layers = to_size(key, v);
  else if (key == "matcher.ffn_hidden") m.matcher.ffn_hidden = to_size(key, v);
  else if (key == "matcher.mode") m.matcher.mode = parse_matcher_mode(v);
  else if (key == "reliable.renormalize") m.matcher.renormalize = to_bool(key, v);
  else if (key == "loss.cls") c.loss.cls = to_double(key, v);
  else if (key == "loss.bce") c.loss.bce = to_double(key, v);
  else if (key == "loss.dice") c.loss.dice = to_double(key, v);
  else if (key == "loss.dice_eps") c.loss.dice_eps = to_double(key, v);
  else if (key == "train.lr") c.lr = to_double(key, v);
  else if (key == "train.lr_final") c.lr_final = to_double(key, v);
  else if (key == "train.iterations") c.iterations = to_size(key, v);
  else if (key == "train.phase2_start") c.phase2_start = to_size(key, v);
  else if (key == "train.batch") c.batch = to_size(key, v);
  else if (key == "train.weight_decay") c.weight_decay = to_double(key, v);
  else if (key == "train.beta1") c.beta1 = to_double(key, v);
  else if (key == "train.beta2") c.beta2 = to_double(key, v);
  else if (key == "train.adam_eps") c.adam_eps = to_double(key, v);
  else if (key == "train.grad_clip") c.grad_clip = to_double(key, v);
  else if (key == "train.hflip") c.hflip = to_bool(key, v);
  else if (key == "train.seed") c.seed = to_size(key, v);
  else throw std::invalid_argument("unknown key '" + key + "'");
}

TrainConfig parse_config(const std::string& text, TrainConfig base) {
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("expected 'key = value', got '" + line + "'", line_no);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) throw ConfigError("empty key or value in '" + line + "'", line_no);
    try {
      set_config_key(base, key, value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what(), line_no);
    }
  }
  try {
    base.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what(), line_no);
  }
  return base;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open config " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const TrainConfig& c) {
  const ModelConfig& m = c.model;
  std::ostringstream os;
  os << "model.num_classes = " << m.num_classes << "\n"
     << "model.init_seed = " << m.init_seed << "\n"
     << "backbone.widths = " << quad_str(m.backbone_widths) << "\n"
     << "backbone.strides = " << quad_str(m.strides) << "\n"
     << "phase.widths = " << quad_str(m.phase_widths) << "\n"
     << "phase.mode = " << to_string(m.texture) << "\n"
     << "phase.c_a = " << (c.c_a ? num(*c.c_a) : std::string("mean")) << "\n"
     << "decoder.depth = " << m.decoder.depth << "\n"
     << "decoder.channels = " << m.decoder.channels << "\n"
     << "decoder.normalize_amp_map = " << (m.decoder.normalize_amp_map ? "true" : "false") << "\n"
     << "matcher.prototypes = " << m.matcher.prototypes << "\n"
     << "matcher.reliable_k = " << m.matcher.reliable_k << "\n"
     << "matcher.layers = " << m.matcher.layers << "\n"
     << "matcher.ffn_hidden = " << m.matcher.ffn_hidden << "\n"
     << "matcher.mode = " << to_string(m.matcher.mode) << "\n"
     << "reliable.renormalize = " << (m.matcher.renormalize ? "true" : "false") << "\n"
     << "loss.cls = " << num(c.loss.cls) << "\n"
     << "loss.bce = " << num(c.loss.bce) << "\n"
     << "loss.dice = " << num(c.loss.dice) << "\n"
     << "loss.dice_eps = " << num(c.loss.dice_eps) << "\n"
     << "train.lr = " << num(c.lr) << "\n"
     << "train.lr_final = " << num(c.lr_final) << "\n"
     << "train.iterations = " << c.iterations << "\n"
     << "train.phase2_start = " << c.phase2_start << "\n"
     << "train.batch = " << c.batch << "\n"
     << "train.weight_decay = " << num(c.weight_decay) << "\n"
     << "train.beta1 = " << num(c.beta1) << "\n"
     << "train.beta2 = " << num(c.beta2) << "\n"
     << "train.adam_eps = " << num(c.adam_eps) << "\n"
     << "train.grad_clip = " << num(c.grad_clip) << "\n"
     << "train.hflip = " << (c.hflip ? "true" : "false") << "\n"
     << "train.seed = " << c.seed << "\n";
  return os.str();
}

}  // namespace nf
