#include "nightformer/reliable_matching.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "nightformer/ops.hpp"

namespace nf {

MatcherMode parse_matcher_mode(const std::string& name) {
  if (name == "reliable") return MatcherMode::Reliable;
  if (name == "vanilla") return MatcherMode::Vanilla;
  throw std::invalid_argument("unknown matcher mode '" + name + "' (expected reliable or vanilla)");
}

std::string to_string(MatcherMode mode) { return mode == MatcherMode::Reliable ? "reliable" : "vanilla"; }

template <typename T>
void ProjectionWeights<T>::validate(std::size_t width) const {
  if (query.rank() != 2 || key.rank() != 2 || value.rank() != 2) throw ShapeError("projections must be matrices");
  if (query.dim(0) != width || key.dim(0) != width || value.dim(0) != width) {
    throw ShapeError("projection input widths " + shape_str(query.shape()) + "/" + shape_str(key.shape()) + "/" +
                     shape_str(value.shape()) + " do not match feature width " + std::to_string(width));
  }
  if (query.dim(1) != key.dim(1)) throw ShapeError("query and key projections differ in width");
}

namespace {

template <typename T>
void check_tokens(const BasicTensor<T>& prototypes, const BasicTensor<T>& pixels, const ProjectionWeights<T>& w) {
  if (prototypes.rank() != 2 || pixels.rank() != 2 || prototypes.dim(1) != pixels.dim(1)) {
    throw ShapeError("prototypes " + shape_str(prototypes.shape()) + " and pixels " + shape_str(pixels.shape()) +
                     " must be [N, C] and [hw, C]");
  }
  w.validate(prototypes.dim(1));
}

// softmax over the last axis of (a Wq)(b Wk)^T / sqrt(Ck)
template <typename T>
BasicTensor<T> attention_distribution(const BasicTensor<T>& queries, const BasicTensor<T>& keys,
                                      const ProjectionWeights<T>& w) {
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(w.key.dim(1)));
  return softmax(scale(matmul_nt(matmul(queries, w.query), matmul(keys, w.key)), inv_sqrt), 1);
}

}  // namespace

template <typename T>
BasicTensor<T> cross_similarity(const BasicTensor<T>& prototypes, const BasicTensor<T>& pixels,
                                const ProjectionWeights<T>& w) {
  check_tokens(prototypes, pixels, w);
  return attention_distribution(prototypes, pixels, w);
}

template <typename T>
BasicTensor<T> reliable_scores(const BasicTensor<T>& sim) {
  if (sim.rank() != 2) throw ShapeError("reliable_scores expects [N, hw], got " + shape_str(sim.shape()));
  const std::size_t n = sim.dim(0), hw = sim.dim(1);
  BasicTensor<T> scores({hw});
  T* s = scores.mutable_ptr();
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t m = 0; m < hw; ++m) s[m] += sim[p * hw + m];
  return scores;
}

template <typename T>
ReliableSet<T> select_reliable(const BasicTensor<T>& scores, const BasicTensor<T>& pixels, std::size_t k) {
  const std::size_t hw = scores.size();
  if (pixels.rank() != 2 || pixels.dim(0) != hw) {
    throw ShapeError("select_reliable: " + std::to_string(hw) + " scores for pixels " + shape_str(pixels.shape()));
  }
  if (k < 1 || k > hw) {
    throw std::invalid_argument("select_reliable: K=" + std::to_string(k) + " outside [1, " + std::to_string(hw) + "]");
  }
  std::vector<std::size_t> order(hw);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); });
  order.resize(k);
  ReliableSet<T> rs;
  rs.features = gather_rows(pixels, std::span<const std::size_t>(order));
  rs.indices = std::move(order);
  rs.scores = scores;
  return rs;
}

template <typename T>
SimilarityBundle<T> bridged_similarity(const BasicTensor<T>& prototypes, const BasicTensor<T>& pixels,
                                       const ReliableSet<T>& reliable, const ProjectionWeights<T>& w,
                                       const BasicTensor<T>& sim) {
  check_tokens(prototypes, pixels, w);
  if (reliable.indices.empty()) throw std::invalid_argument("bridged_similarity: empty reliable set");
  SimilarityBundle<T> b;
  b.sim = sim;
  b.sim_q = attention_distribution(prototypes, reliable.features, w);
  b.sim_k = attention_distribution(pixels, reliable.features, w);
  b.sim_qk = matmul_nt(b.sim_q, b.sim_k);
  return b;
}

template <typename T>
BasicTensor<T> update_prototypes(const BasicTensor<T>& sim_qk, const BasicTensor<T>& values) {
  return matmul(sim_qk, values);
}

template <typename T>
MatchingLayer<T>::MatchingLayer(ParameterSet<T>& ps, const std::string& name, std::size_t width,
                                std::size_t ffn_hidden, Rng& rng)
    : pre_attention_(ps, name + ".self_attn_in", width, rng) {
  const double stddev = 1.0 / std::sqrt(static_cast<double>(width));
  proj_.query = ps.normal(name + ".w_q", {width, width}, stddev, rng);
  proj_.key = ps.normal(name + ".w_k", {width, width}, stddev, rng);
  proj_.value = ps.normal(name + ".w_v", {width, width}, stddev, rng);
  out_proj_ = Linear<T>(ps, name + ".out_proj", width, width, rng);
  cross_norm_ = LayerNorm<T>(ps, name + ".cross_norm", width);
  post_attention_ = SelfAttention<T>(ps, name + ".self_attn_out", width, rng);
  ffn_ = FeedForward<T>(ps, name + ".ffn", width, ffn_hidden, rng);
}

template <typename T>
BasicTensor<T> MatchingLayer<T>::finish(const BasicTensor<T>& prototypes, const BasicTensor<T>& blended) const {
  BasicTensor<T> p = cross_norm_(add(prototypes, out_proj_(blended)));
  p = post_attention_(p);
  return ffn_(p);
}

template <typename T>
BasicTensor<T> MatchingLayer<T>::reliable(const BasicTensor<T>& prototypes, const BasicTensor<T>& pixels,
                                          std::size_t k, bool renormalize, LayerTrace<T>* trace) const {
  const BasicTensor<T> p = pre_attention_(prototypes);
  BasicTensor<T> sim;
  {
    // The direct similarity only ranks pixels; it never reaches the loss.
    NoTapeGuard<T> no_tape;
    sim = cross_similarity(p, pixels, proj_);
  }
  const ReliableSet<T> rs = select_reliable(reliable_scores(sim), pixels, k);
  SimilarityBundle<T> bundle = bridged_similarity(p, pixels, rs, proj_, sim);
  const BasicTensor<T> weights = renormalize ? row_normalize(bundle.sim_qk) : bundle.sim_qk;
  const BasicTensor<T> blended = update_prototypes(weights, matmul(pixels, proj_.value));
  if (trace) {
    trace->similarity = bundle;
    trace->reliable_indices = rs.indices;
  }
  return finish(p, blended);
}

template <typename T>
BasicTensor<T> MatchingLayer<T>::vanilla(const BasicTensor<T>& prototypes, const BasicTensor<T>& pixels,
                                         LayerTrace<T>* trace) const {
  const BasicTensor<T> p = pre_attention_(prototypes);
  const BasicTensor<T> sim = cross_similarity(p, pixels, proj_);
  const BasicTensor<T> blended = update_prototypes(sim, matmul(pixels, proj_.value));
  if (trace) {
    trace->similarity.sim = sim;
    trace->reliable_indices.clear();
  }
  return finish(p, blended);
}

template <typename T>
ReliableMatcher<T>::ReliableMatcher(ParameterSet<T>& ps, const std::string& name, const MatcherConfig& cfg,
                                    std::size_t width, Rng& rng)
    : cfg_(cfg) {
  if (cfg.prototypes == 0) throw std::invalid_argument("matcher.prototypes must be positive");
  if (cfg.layers == 0) throw std::invalid_argument("matcher.layers must be positive");
  prototypes_ = ps.normal(name + ".prototypes", {cfg.prototypes, width}, 0.02, rng);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    layers_.emplace_back(ps, name + ".layer" + std::to_string(l), width, cfg.ffn_hidden, rng);
  }
}

template <typename T>
BasicTensor<T> ReliableMatcher<T>::operator()(const BasicTensor<T>& pixels) const {
  const std::size_t k = cfg_.reliable_k;
  BasicTensor<T> p = prototypes_;
  for (const auto& layer : layers_) {
    p = cfg_.mode == MatcherMode::Reliable ? layer.reliable(p, pixels, k, cfg_.renormalize) : layer.vanilla(p, pixels);
  }
  return p;
}

#define NF_INSTANTIATE_MATCHING(T)                                                                                   \
  template struct ProjectionWeights<T>;                                                                              \
  template class MatchingLayer<T>;                                                                                   \
  template class ReliableMatcher<T>;                                                                                 \
  template BasicTensor<T> cross_similarity(const BasicTensor<T>&, const BasicTensor<T>&, const ProjectionWeights<T>&); \
  template BasicTensor<T> reliable_scores(const BasicTensor<T>&);                                                    \
  template ReliableSet<T> select_reliable(const BasicTensor<T>&, const BasicTensor<T>&, std::size_t);               \
  template SimilarityBundle<T> bridged_similarity(const BasicTensor<T>&, const BasicTensor<T>&,                     \
                                                  const ReliableSet<T>&, const ProjectionWeights<T>&,               \
                                                  const BasicTensor<T>&);                                            \
  template BasicTensor<T> update_prototypes(const BasicTensor<T>&, const BasicTensor<T>&);

NF_INSTANTIATE_MATCHING(float)
NF_INSTANTIATE_MATCHING(double)

}  // namespace nf
