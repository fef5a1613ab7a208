#include "properties.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>

#include "nightformer/amplified_decoder.hpp"
#include "nightformer/fft.hpp"
#include "nightformer/grad_check.hpp"
#include "nightformer/hungarian.hpp"
#include "nightformer/image_io.hpp"
#include "nightformer/losses.hpp"
#include "nightformer/metrics.hpp"
#include "nightformer/nn.hpp"
#include "nightformer/ops.hpp"
#include "nightformer/phase_texture.hpp"
#include "nightformer/reliable_matching.hpp"
#include "nightformer/scene.hpp"
#include "oracles.hpp"

namespace nf::check {

namespace {

using Gen = std::mt19937_64;

Tensor random_tensor(Gen& g, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (double& v : t.mutable_data()) v = d(g);
  return t;
}

std::size_t pick(Gen& g, std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(g); }

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double max_abs(const Tensor& t) {
  double m = 0;
  for (double v : t.data()) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Weighted sum with fixed random coefficients: keeps every output coordinate
// in play so no gradient is structurally zero.
Tensor probe(const Tensor& y, const Tensor& r) { return sum(mul(y, r)); }

}  // namespace

PropertyResult fft_matches_bruteforce(std::uint64_t seed, int instances) {
  Gen g(seed);
  double worst = 0;
  for (int n = 0; n < instances; ++n) {
    const Tensor x = random_tensor(g, {16, 16});
    const ComplexPlane fast = fft2d(x), slow = dft2d_bruteforce(x);
    double scale = 0;
    for (std::size_t i = 0; i < x.size(); ++i) scale = std::max(scale, std::hypot(slow.real[i], slow.imag[i]));
    const double err = std::max(max_abs_diff(fast.real, slow.real), max_abs_diff(fast.imag, slow.imag)) / std::max(scale, 1e-300);
    worst = std::max(worst, err);
  }
  return {"fft2d matches dft2d_bruteforce (" + std::to_string(instances) + " x 16x16)", worst < 1e-6,
          fmt("max relative error %.3g", worst)};
}

PropertyResult fft_round_trip(std::uint64_t seed) {
  Gen g(seed);
  double worst = 0;
  int cases = 0;
  for (std::size_t h = 1; h <= 64; h *= 2) {
    for (std::size_t w = 1; w <= 64; w *= 2) {
      ComplexPlane x(random_tensor(g, {h, w}), random_tensor(g, {h, w}));
      const ComplexPlane back = ifft2d(fft2d(x));
      const double scale = std::max({max_abs(x.real), max_abs(x.imag), 1e-300});
      worst = std::max(worst, std::max(max_abs_diff(back.real, x.real), max_abs_diff(back.imag, x.imag)) / scale);
      const Tensor r = random_tensor(g, {h, w}, -5.0, 5.0);
      const ComplexPlane rb = ifft2d(fft2d(r));
      worst = std::max(worst, std::max(max_abs_diff(rb.real, r), max_abs(rb.imag)) / std::max(max_abs(r), 1e-300));
      cases += 2;
    }
  }
  return {"ifft2d(fft2d(x)) == x up to 64x64", worst < 1e-9,
          std::to_string(cases) + " inputs, " + fmt("max relative error %.3g", worst)};
}

PropertyResult phase_amplitude_invariant(std::uint64_t seed, int images) {
  Gen g(seed);
  double worst = 0;
  for (int n = 0; n < images; ++n) {
    const std::size_t h = std::size_t{1} << pick(g, 2, 5), w = std::size_t{1} << pick(g, 2, 6);
    const Tensor img = random_tensor(g, {h, w}, 0.0, 1.0);
    const Spectrum s = fourier_decompose(img);
    const double c_a = n % 2 ? choose_c_a(s) : std::uniform_real_distribution<double>(0.1, 10.0)(g);
    const ComplexPlane z = constant_amplitude_spectrum(s, c_a);
    // Re-transform the full complex reconstruction as well: its spectrum must
    // again have flat modulus c_a.
    const ComplexPlane again = fft2d(ifft2d(z));
    for (std::size_t i = 0; i < h * w; ++i) {
      worst = std::max(worst, std::abs(std::hypot(z.real[i], z.imag[i]) - c_a) / c_a);
      worst = std::max(worst, std::abs(std::hypot(again.real[i], again.imag[i]) - c_a) / c_a);
    }
  }
  return {"phase reconstruction has modulus c_a in every bin (" + std::to_string(images) + " images)", worst < 1e-6,
          fmt("max relative deviation %.3g", worst)};
}

std::vector<PropertyResult> gradient_suite(std::uint64_t seed) {
  Gen g(seed);
  std::vector<PropertyResult> out;
  auto report = [&](const std::string& name, std::vector<GradCheckReport> reps) {
    double worst = 0;
    for (const auto& r : reps) worst = std::max(worst, r.max_rel_error);
    out.push_back({"grad_check " + name, worst < 1e-4, fmt("max relative error %.3g", worst)});
  };
  auto guarded = [&](const std::string& name, const std::function<std::vector<GradCheckReport>()>& body) {
    try {
      report(name, body());
    } catch (const std::exception& e) {
      out.push_back({"grad_check " + name, false, std::string("threw: ") + e.what()});
    }
  };

  guarded("matmul", [&] {
    Tensor a = random_tensor(g, {4, 5}), b = random_tensor(g, {5, 3});
    const Tensor r = random_tensor(g, {4, 3});
    auto f = [&] { return probe(matmul(a, b), r); };
    return std::vector{grad_check_param(f, a), grad_check_param(f, b)};
  });
  guarded("conv2d", [&] {
    Tensor x = random_tensor(g, {6, 7, 2}), w = random_tensor(g, {3, 3, 2, 3});
    const Tensor r = random_tensor(g, {3, 4, 3});
    auto f = [&] { return probe(conv2d(x, w, 2, 1), r); };
    return std::vector{grad_check_param(f, x), grad_check_param(f, w)};
  });
  guarded("softmax", [&] {
    Tensor x = random_tensor(g, {4, 6}, -2.0, 2.0);
    const Tensor r0 = random_tensor(g, {4, 6});
    return std::vector{grad_check_param([&] { return probe(softmax(x, 1), r0); }, x),
                       grad_check_param([&] { return probe(softmax(x, 0), r0); }, x)};
  });
  guarded("self-attention block", [&] {
    ParameterSet<double> ps;
    Rng rng(seed + 1);
    SelfAttention<double> attn(ps, "attn", 4, rng);
    Tensor x = random_tensor(g, {3, 2, 4});
    const Tensor r = random_tensor(g, {3, 2, 4});
    auto f = [&] { return probe(self_attention_block(x, attn), r); };
    std::vector<GradCheckReport> reps{grad_check_param(f, x)};
    for (auto& e : ps.entries()) reps.push_back(grad_check_param(f, e.value));
    return reps;
  });
  guarded("amplified_map + amplify", [&] {
    Tensor f = random_tensor(g, {3, 4, 5}), phi = random_tensor(g, {3, 4, 5});
    const Tensor r = random_tensor(g, {3, 4, 5});
    auto loss = [&] { return probe(amplify(f, normalize_unit_mean(amplified_map(f, phi), 1e-6)), r); };
    auto raw = [&] { return probe(amplify(f, amplified_map(f, phi)), r); };
    return std::vector{grad_check_param(loss, f), grad_check_param(loss, phi), grad_check_param(raw, f),
                       grad_check_param(raw, phi)};
  });
  guarded("bridged_similarity + update_prototypes", [&] {
    const std::size_t n = 3, hw = 12, c = 5, k = 4;
    Tensor p = random_tensor(g, {n, c}), fa = random_tensor(g, {hw, c});
    ProjectionWeights<double> w{random_tensor(g, {c, c}), random_tensor(g, {c, c}), random_tensor(g, {c, c})};
    const Tensor r = random_tensor(g, {n, c});
    auto f = [&] {
      Tensor sim;
      {
        NoTapeGuard<double> off;
        sim = cross_similarity(p, fa, w);
      }
      const ReliableSet<double> rs = select_reliable(reliable_scores(sim), fa, k);
      const SimilarityBundle<double> b = bridged_similarity(p, fa, rs, w, sim);
      return probe(update_prototypes(b.sim_qk, matmul(fa, w.value)), r);
    };
    return std::vector{grad_check_param(f, p), grad_check_param(f, fa), grad_check_param(f, w.query),
                       grad_check_param(f, w.key), grad_check_param(f, w.value)};
  });
  guarded("dice / bce / ce", [&] {
    Tensor logits = random_tensor(g, {2, 8}, -3.0, 3.0);
    Tensor target({2, 8});
    for (double& v : target.mutable_data()) v = std::bernoulli_distribution(0.4)(g) ? 1.0 : 0.0;
    Tensor cls = random_tensor(g, {5, 4}, -2.0, 2.0);
    const std::vector<int> labels{0, 3, 1, 3, 2};
    return std::vector{grad_check_param([&] { return bce_with_logits(logits, target); }, logits),
                       grad_check_param([&] { return dice_loss(sigmoid(logits), target); }, logits),
                       grad_check_param([&] { return cross_entropy(cls, std::span<const int>(labels)); }, cls)};
  });
  guarded("total_loss", [&] {
    SegOutput<double> o{random_tensor(g, {4, 4, 5}, -2.0, 2.0), random_tensor(g, {5, 4}, -2.0, 2.0)};
    LabelMask gt(4, 4);
    for (std::size_t i = 0; i < gt.size(); ++i) gt.labels[i] = static_cast<std::uint8_t>(i % 5 == 0 ? 2 : (i / 8));
    auto f = [&] { return total_loss(o, gt, 3); };
    return std::vector{grad_check_param(f, o.mask_logits), grad_check_param(f, o.class_logits)};
  });
  return out;
}

PropertyResult attention_invariants(std::uint64_t seed, int instances) {
  Gen g(seed);
  NoTapeGuard<double> off;
  double row_err = 0, score_err = 0, qk_min = 0, qk_max = 0;
  int topk_mismatch = 0, ties = 0;
  for (int t = 0; t < instances; ++t) {
    const std::size_t n = pick(g, 1, 8), c = pick(g, 2, 8), hw = pick(g, 2, 48), k = pick(g, 1, std::min<std::size_t>(16, hw));
    const Tensor p = random_tensor(g, {n, c}, -2.0, 2.0);
    Tensor fa = random_tensor(g, {hw, c}, -2.0, 2.0);
    if (t % 3 == 0) {
      // Duplicate pixels give exactly equal scores and exercise the tie rule.
      const std::size_t src = pick(g, 0, hw - 1);
      for (std::size_t i = 0; i < hw; i += 2)
        std::copy_n(fa.ptr() + src * c, c, fa.mutable_ptr() + i * c);
    }
    const ProjectionWeights<double> w{random_tensor(g, {c, c}), random_tensor(g, {c, c}), random_tensor(g, {c, c})};
    const Tensor sim = cross_similarity(p, fa, w);
    const Tensor scores = reliable_scores(sim);
    const ReliableSet<double> rs = select_reliable(scores, fa, k);
    const SimilarityBundle<double> b = bridged_similarity(p, fa, rs, w, sim);

    auto rows = [&](const Tensor& m) {
      const std::size_t r = m.dim(0), cols = m.dim(1);
      for (std::size_t i = 0; i < r; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < cols; ++j) s += m[i * cols + j];
        row_err = std::max(row_err, std::abs(s - 1.0));
      }
    };
    rows(sim);
    rows(b.sim_q);
    rows(b.sim_k);
    double total = 0;
    for (double v : scores.data()) total += v;
    score_err = std::max(score_err, std::abs(total - static_cast<double>(n)));
    for (double v : b.sim_qk.data()) {
      qk_min = std::min(qk_min, v);
      qk_max = std::max(qk_max, v);
    }
    const auto expect = oracle::top_k(scores.data(), k);
    if (expect != rs.indices) ++topk_mismatch;
    for (std::size_t i = 0; i + 1 < hw; ++i)
      if (std::count(scores.data().begin(), scores.data().end(), scores[i]) > 1) {
        ++ties;
        break;
      }
  }
  const bool pass = row_err <= 1e-6 && score_err <= 1e-5 && qk_min >= 0 && qk_max <= 1 + 1e-9 && topk_mismatch == 0;
  std::ostringstream d;
  d << instances << " instances (" << ties << " with tied scores): row-sum err " << fmt("%.2g", row_err)
    << ", score-sum err " << fmt("%.2g", score_err) << ", Sim_qk in [" << fmt("%.3g", qk_min) << ", "
    << fmt("%.6g", qk_max) << "], top-K mismatches " << topk_mismatch;
  return {"attention invariants and top-K tie rule", pass, d.str()};
}

PropertyResult hungarian_matches_exhaustive(std::uint64_t seed, int instances) {
  Gen g(seed);
  int cost_mismatch = 0, assignment_mismatch = 0, unique_cases = 0;
  for (int t = 0; t < instances; ++t) {
    const std::size_t n = pick(g, 1, 7), gs = pick(g, 1, n);
    Tensor cost({n, gs});
    for (double& v : cost.mutable_data())
      v = t % 4 == 0 ? static_cast<double>(pick(g, 0, 3)) : std::uniform_real_distribution<double>(-5, 5)(g);
    const MatchResult m = hungarian_match(cost);
    const oracle::Assignment best = oracle::exhaustive_assignment(cost);
    std::vector<std::size_t> seen = m.prototype_of_segment;
    std::sort(seen.begin(), seen.end());
    const bool valid = m.prototype_of_segment.size() == gs && std::adjacent_find(seen.begin(), seen.end()) == seen.end();
    double recomputed = 0;
    for (std::size_t s = 0; s < gs && valid; ++s) recomputed += cost.at({m.prototype_of_segment[s], s});
    if (!valid || std::abs(recomputed - best.total) > 1e-9 || std::abs(m.total_cost - best.total) > 1e-9) ++cost_mismatch;
    if (best.optima == 1) {
      ++unique_cases;
      if (m.prototype_of_segment != best.prototype_of_segment) ++assignment_mismatch;
    }
  }
  std::ostringstream d;
  d << instances << " matrices: optimum mismatches " << cost_mismatch << ", assignment mismatches "
    << assignment_mismatch << " of " << unique_cases << " with a unique optimum";
  return {"hungarian_match equals exhaustive oracle (N <= 7)", cost_mismatch == 0 && assignment_mismatch == 0, d.str()};
}

PropertyResult miou_examples(std::uint64_t seed) {
  LabelMask pred(2, 2), gt(2, 2);
  pred.labels = {0, 1, 1, 1};
  gt.labels = {0, 1, 0, 1};
  const MiouResult r = miou(pred, gt, 2);
  const bool hand = r.per_class[0] && r.per_class[1] && std::abs(*r.per_class[0] - 0.5) <= 1e-12 &&
                    std::abs(*r.per_class[1] - 2.0 / 3.0) <= 1e-12 && std::abs(r.mean - 7.0 / 12.0) <= 1e-12;
  Gen g(seed);
  int self_fail = 0, oracle_fail = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t k = pick(g, 1, 6);
    LabelMask m(pick(g, 1, 12), pick(g, 1, 12));
    for (auto& v : m.labels) v = static_cast<std::uint8_t>(pick(g, 0, k - 1));
    ConfusionMatrix cm(k);
    cm.add(m, m);
    if (std::abs(miou(cm).mean - 1.0) > 1e-12 || cm.total() != m.size()) ++self_fail;
    LabelMask other = m;
    for (auto& v : other.labels) v = static_cast<std::uint8_t>(pick(g, 0, k - 1));
    const MiouResult mr = miou(other, m, k);
    const auto sets = oracle::iou_by_sets(other, m, k);
    for (std::size_t c = 0; c < k; ++c) {
      const bool absent = std::isnan(sets[c]);
      if (absent != !mr.per_class[c].has_value() || (!absent && std::abs(*mr.per_class[c] - sets[c]) > 1e-12)) {
        ++oracle_fail;
        break;
      }
    }
  }
  std::ostringstream d;
  d << "hand example " << (hand ? "exact" : "WRONG") << " (" << fmt("%.17g", r.mean) << "), miou(m,m) failures "
    << self_fail << "/100, set-oracle failures " << oracle_fail << "/100";
  return {"mIoU hand example and miou(m, m) = 1", hand && self_fail == 0 && oracle_fail == 0, d.str()};
}

PropertyResult matmul_conv_oracles(std::uint64_t seed) {
  Gen g(seed);
  double worst = 0;
  for (int t = 0; t < 50; ++t) {
    const Tensor a = random_tensor(g, {pick(g, 1, 9), pick(g, 1, 9)});
    const Tensor b = random_tensor(g, {a.dim(1), pick(g, 1, 9)});
    worst = std::max(worst, max_abs_diff(matmul(a, b), oracle::matmul(a, b)));
    worst = std::max(worst, max_abs_diff(matmul_nt(a, transpose(b)), oracle::matmul(a, b)));
    const std::size_t stride = pick(g, 1, 3), pad = pick(g, 0, 2), kk = pick(g, 1, 3);
    const Tensor x = random_tensor(g, {pick(g, kk, 9), pick(g, kk, 9), pick(g, 1, 3)});
    const Tensor w = random_tensor(g, {kk, kk, x.dim(2), pick(g, 1, 4)});
    worst = std::max(worst, max_abs_diff(conv2d(x, w, stride, pad), oracle::conv2d(x, w, stride, pad)));
  }
  return {"matmul / conv2d match loop oracles", worst < 1e-10, fmt("max abs error %.3g", worst)};
}

PropertyResult loss_oracles(std::uint64_t seed) {
  Gen g(seed);
  NoTapeGuard<double> off;
  double worst = 0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = pick(g, 1, 30);
    const Tensor logits = random_tensor(g, {n}, -6.0, 6.0);
    Tensor target({n});
    for (double& v : target.mutable_data()) v = std::bernoulli_distribution(0.5)(g) ? 1.0 : 0.0;
    worst = std::max(worst, std::abs(bce_with_logits(logits, target).item() - oracle::bce_with_logits(logits.data(), target.data())));
    const Tensor prob = sigmoid(logits);
    worst = std::max(worst, std::abs(dice_loss(prob, target).item() - oracle::dice(prob.data(), target.data(), 1.0)));
    const Tensor cls = random_tensor(g, {pick(g, 1, 6), pick(g, 2, 6)}, -4.0, 4.0);
    std::vector<int> labels(cls.dim(0));
    for (int& l : labels) l = static_cast<int>(pick(g, 0, cls.dim(1) - 1));
    worst = std::max(worst, std::abs(cross_entropy(cls, std::span<const int>(labels)).item() -
                                     oracle::cross_entropy(cls, labels)));
  }
  // bce at zero logits is ln 2 for any target; dice of a disjoint prediction.
  const Tensor zero({16}, 0.0);
  Tensor half({16}, 0.0);
  for (std::size_t i = 0; i < 8; ++i) half.mutable_data()[i] = 1.0;
  const double ln2_err = std::abs(bce_with_logits(zero, half).item() - std::log(2.0));
  Tensor inv({16});
  for (std::size_t i = 0; i < 16; ++i) inv.mutable_data()[i] = 1.0 - half[i];
  const double disjoint_err = std::abs(dice_loss(inv, half).item() - (1.0 - 1.0 / (16.0 + 1.0)));
  const bool pass = worst < 1e-10 && ln2_err < 1e-12 && disjoint_err < 1e-12;
  return {"bce / dice / ce match direct formulas", pass,
          fmt("max abs error %.3g", std::max({worst, ln2_err, disjoint_err}))};
}

PropertyResult predict_oracle(std::uint64_t seed) {
  Gen g(seed);
  int mismatches = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = pick(g, 1, 6), k = pick(g, 1, 5);
    SegOutput<double> o{random_tensor(g, {pick(g, 1, 6), pick(g, 1, 6), n}, -3.0, 3.0),
                        random_tensor(g, {n, k + 1}, -3.0, 3.0)};
    if (predict(o) != oracle::predict(o.mask_logits, o.class_logits)) ++mismatches;
  }
  // Exact symmetric tie between two classes resolves to class 0.
  SegOutput<double> tie{Tensor({2, 2, 2}, 0.5), Tensor({2, 3}, 0.0)};
  const LabelMask tied = predict(tie);
  const bool tie_ok = std::all_of(tied.labels.begin(), tied.labels.end(), [](auto v) { return v == 0; });
  return {"predict matches per-pixel enumeration", mismatches == 0 && tie_ok,
          std::to_string(mismatches) + " mismatches of 100, tie rule " + (tie_ok ? "ok" : "WRONG")};
}

PropertyResult total_loss_permutation_invariance(std::uint64_t seed) {
  Gen g(seed);
  double worst = 0;
  NoTapeGuard<double> off;
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = pick(g, 3, 7), h = pick(g, 2, 6), w = pick(g, 2, 6), k = pick(g, 2, 3);
    SegOutput<double> o{random_tensor(g, {h, w, n}, -3.0, 3.0), random_tensor(g, {n, k + 1}, -3.0, 3.0)};
    LabelMask gt(h, w);
    for (auto& v : gt.labels) v = static_cast<std::uint8_t>(pick(g, 0, k - 1));
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), g);
    SegOutput<double> q{Tensor(o.mask_logits.shape()), Tensor(o.class_logits.shape())};
    for (std::size_t i = 0; i < h * w; ++i)
      for (std::size_t p = 0; p < n; ++p) q.mask_logits.mutable_data()[i * n + p] = o.mask_logits[i * n + perm[p]];
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t c = 0; c <= k; ++c) q.class_logits.mutable_data()[p * (k + 1) + c] = o.class_logits[perm[p] * (k + 1) + c];
    worst = std::max(worst, std::abs(total_loss(o, gt, k).item() - total_loss(q, gt, k).item()));
  }
  return {"total_loss invariant under prototype permutation", worst < 1e-8, fmt("max difference %.3g", worst)};
}

PropertyResult codec_round_trip(std::uint64_t seed) {
  Gen g(seed);
  int failures = 0;
  for (int t = 0; t < 50; ++t) {
    const Tensor img = random_tensor(g, {pick(g, 1, 20), pick(g, 1, 20), 3}, -0.2, 1.2);
    const Tensor back = decode_ppm(encode_ppm(img));
    if (back.shape() != img.shape() || max_abs_diff(back, quantize(img)) != 0.0) ++failures;
    LabelMask m(pick(g, 1, 20), pick(g, 1, 20));
    for (auto& v : m.labels) v = static_cast<std::uint8_t>(pick(g, 0, 255));
    if (decode_pgm(encode_pgm(m)) != m) ++failures;
  }
  Tensor white({1, 1, 3}, 1.0);
  const std::string expect = std::string("P6\n1 1\n255\n") + "\xFF\xFF\xFF";
  const bool header_ok = encode_ppm(white) == expect;
  return {"PPM/PGM round trip equals 8-bit quantization", failures == 0 && header_ok,
          std::to_string(failures) + " failures of 100, 1x1 white header " + (header_ok ? "ok" : "WRONG")};
}

PropertyResult codec_rejects_malformed() {
  struct Case {
    bool ppm;
    std::string bytes;
  };
  const std::string px12(12, '\x10');
  // Twenty malformed inputs; every one must raise FormatError.
  const std::vector<Case> bad = {
      {true, ""},
      {true, "P5\n2 2\n255\n" + px12},
      {true, "P6"},
      {true, "P6\n"},
      {true, "P6\n2"},
      {true, "P6\n2 2"},
      {true, "P6\n2 2\n"},
      {true, "P6\n2 2\n255"},
      {true, "P6\n2 2\n65535\n" + px12 + px12},
      {true, "P6\n2 2\n254\n" + px12},
      {true, "P6\n0 2\n255\n"},
      {true, "P6\n2 0\n255\n"},
      {true, "P6\n-2 2\n255\n" + px12},
      {true, "P6\nx 2\n255\n" + px12},
      {true, "P6\n2 2\n255\n" + px12.substr(1)},
      {true, "P6\n2 2\n255\n" + px12 + "!"},
      {true, "P62 2\n255\n" + px12},
      {true, "P6\n99999999999 2\n255\n"},
      {false, "P5\n2 2 # comment with no end"},
      {false, "P2\n1 1\n255\n1"},
  };
  // Controls that must decode.
  const std::vector<Case> good = {
      {true, "P6\n2 2\n255\n" + px12},
      {false, "P5\n2\n2 # size\n255\n" + px12.substr(0, 4)},
  };
  auto decode = [](const Case& c) {
    if (c.ppm) {
      (void)decode_ppm(c.bytes);
    } else {
      (void)decode_pgm(c.bytes);
    }
  };
  int accepted = 0, wrong_kind = 0, rejected_good = 0;
  for (const Case& c : bad) {
    try {
      decode(c);
      ++accepted;
    } catch (const FormatError&) {
    } catch (...) {
      ++wrong_kind;
    }
  }
  for (const Case& c : good) {
    try {
      decode(c);
    } catch (...) {
      ++rejected_good;
    }
  }
  return {"malformed netpbm corpus rejected with FormatError", accepted == 0 && wrong_kind == 0 && rejected_good == 0,
          std::to_string(bad.size()) + " malformed inputs: " + std::to_string(accepted) + " accepted, " +
              std::to_string(wrong_kind) + " wrong exception type; " + std::to_string(rejected_good) +
              " valid controls rejected"};
}

PropertyResult scene_determinism_and_coverage(std::uint64_t seed) {
  SceneConfig cfg;
  int missing = 0, nondeterministic = 0, out_of_range = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const SceneSample a = generate_scene(cfg, seed + s);
    std::vector<bool> present(cfg.num_classes, false);
    for (auto v : a.mask.labels) {
      if (v >= cfg.num_classes) ++out_of_range;
      else present[v] = true;
    }
    for (double v : a.image.data())
      if (!(v >= 0 && v <= 1)) ++out_of_range;
    if (std::count(present.begin(), present.end(), false)) ++missing;
    if (s < 10) {
      const SceneSample b = generate_scene(cfg, seed + s);
      if (a.mask != b.mask || a.image.data().size() != b.image.data().size() ||
          !std::equal(a.image.data().begin(), a.image.data().end(), b.image.data().begin()))
        ++nondeterministic;
    }
  }
  SceneConfig flat = cfg;
  flat.deceivers = 0;
  flat.noise_std = 0;
  flat.ambient_lo = flat.ambient_hi = 0.1;
  const SceneSample f = generate_scene(flat, seed);
  bool flat_ok = true;
  for (std::size_t i = 0; i < f.mask.size(); ++i)
    if (f.mask.labels[i] == 0)
      for (std::size_t c = 0; c < 3; ++c) flat_ok = flat_ok && f.image[i * 3 + c] == 0.1;
  std::ostringstream d;
  d << "100 seeds: " << missing << " missing a class, " << out_of_range << " out-of-range values, "
    << nondeterministic << " nondeterministic; fixed-ambient background " << (flat_ok ? "exact" : "WRONG");
  return {"scene generator coverage and determinism", missing == 0 && out_of_range == 0 && nondeterministic == 0 && flat_ok,
          d.str()};
}

std::vector<PropertyResult> selftest_suites(std::uint64_t seed) {
  std::vector<PropertyResult> out;
  auto safe = [&](const char* name, const std::function<PropertyResult()>& f) {
    try {
      out.push_back(f());
    } catch (const std::exception& e) {
      out.push_back({name, false, std::string("threw: ") + e.what()});
    }
  };
  safe("fft oracle", [&] { return fft_matches_bruteforce(seed); });
  safe("fft round trip", [&] { return fft_round_trip(seed + 1); });
  safe("phase amplitude", [&] { return phase_amplitude_invariant(seed + 2); });
  for (auto& r : gradient_suite(seed + 3)) out.push_back(r);
  safe("attention invariants", [&] { return attention_invariants(seed + 4); });
  safe("hungarian", [&] { return hungarian_matches_exhaustive(seed + 5); });
  safe("miou", [&] { return miou_examples(seed + 6); });
  safe("matmul/conv oracles", [&] { return matmul_conv_oracles(seed + 7); });
  safe("loss oracles", [&] { return loss_oracles(seed + 8); });
  safe("predict oracle", [&] { return predict_oracle(seed + 9); });
  safe("permutation invariance", [&] { return total_loss_permutation_invariance(seed + 10); });
  safe("codec round trip", [&] { return codec_round_trip(seed + 11); });
  safe("codec malformed", [&] { return codec_rejects_malformed(); });
  safe("scene", [&] { return scene_determinism_and_coverage(seed + 12); });
  return out;
}

}  // namespace nf::check
