// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
//   acceptance [--only 1,2,...] [--steps N] [--work DIR]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "gradcheck.hpp"
#include "pccs/log.hpp"
#include "pccs/trainer.hpp"

using namespace pccs;
using pccs::testing::numeric_gradient;
using pccs::testing::numeric_partial;
using pccs::testing::relative_error;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<double> randn(std::mt19937& rng, std::size_t n, double mean = 0.0) {
  std::normal_distribution<double> g(mean, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = g(rng);
  return v;
}

ProbabilityMap random_probs(std::mt19937& rng, int h, int w, int c) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  ProbabilityMap p(h, w, c);
  for (std::size_t i = 0; i < p.pixels(); ++i) {
    double z = 0.0;
    for (int k = 0; k < c; ++k) z += (p.at(i, k) = u(rng));
    for (int k = 0; k < c; ++k) p.at(i, k) /= z;
  }
  return p;
}

SegMask random_labels(std::mt19937& rng, int h, int w, int c) {
  std::uniform_int_distribution<int> d(0, c - 1);
  std::vector<int32_t> l(static_cast<std::size_t>(h) * w);
  for (auto& v : l) v = d(rng);
  return SegMask(h, w, c, l);
}

// Overlapping discs plus optional speckle, so interiors and thin parts both occur.
SegMask random_blobs(std::mt19937& rng, int h, int w, int classes) {
  std::uniform_int_distribution<int> cls(0, classes - 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<int32_t> l(static_cast<std::size_t>(h) * w, 0);
  const int blobs = 1 + static_cast<int>(u(rng) * 4);
  for (int b = 0; b < blobs; ++b) {
    const double cy = u(rng) * h, cx = u(rng) * w, r = 1.0 + u(rng) * std::max(h, w) / 2.0;
    const int c = cls(rng);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) l[y * w + x] = c;
  }
  if (u(rng) < 0.3)
    for (auto& v : l)
      if (u(rng) < 0.1) v = cls(rng);
  return SegMask(h, w, classes, l);
}

// Independent oracle: minimum Euclidean distance to any 4-neighbour boundary
// pixel by exhaustive search, rounded half away from zero.
std::vector<int32_t> sdm_oracle(const SegMask& m, int cls) {
  const int h = m.height(), w = m.width();
  auto in = [&](int y, int x) { return m.at(y, x) == cls; };
  std::vector<std::pair<int, int>> boundary;
  bool present = false;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!in(y, x)) continue;
      present = true;
      const bool edge = y == 0 || x == 0 || y == h - 1 || x == w - 1 || !in(y - 1, x) ||
                        !in(y + 1, x) || !in(y, x - 1) || !in(y, x + 1);
      if (edge) boundary.emplace_back(y, x);
    }
  std::vector<int32_t> out(static_cast<std::size_t>(h) * w, kAbsentDistance);
  if (!present) return out;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      long best = -1;
      for (const auto& [by, bx] : boundary) {
        const long d = static_cast<long>(by - y) * (by - y) + static_cast<long>(bx - x) * (bx - x);
        if (best < 0 || d < best) best = d;
      }
      const auto d = static_cast<int32_t>(std::lround(std::sqrt(static_cast<double>(best))));
      out[static_cast<std::size_t>(y) * w + x] = in(y, x) ? -d : d;
    }
  return out;
}

// ---- criteria ----

Outcome sdm_equivalence() {
  std::mt19937 rng(2024);
  std::uniform_int_distribution<int> side(1, 32);
  int masks = 0, mismatches = 0, planes = 0;
  for (int t = 0; t < 200; ++t) {
    const int classes = t % 2 == 0 ? 2 : 3;
    const SegMask m = random_blobs(rng, side(rng), side(rng), classes);
    ++masks;
    for (int c = 0; c < classes; ++c) {
      ++planes;
      const DistancePlane fast = signed_distance_map(m, c);
      const bool same_oracle = fast.values == sdm_oracle(m, c);
      const bool same_brute = fast == signed_distance_map_bruteforce(m, c);
      if (!same_oracle || !same_brute) ++mismatches;
    }
  }
  return {mismatches == 0, fmt("%d masks (%d class planes), %d mismatches", masks, planes, mismatches)};
}

Outcome gradient_checks() {
  std::mt19937 rng(7);
  std::vector<std::pair<std::string, double>> errs;
  auto record = [&](const std::string& name, double e) {
    for (auto& [n, v] : errs)
      if (n == name) {
        v = std::max(v, e);
        return;
      }
    errs.emplace_back(name, e);
  };

  for (int t = 0; t < 4; ++t) {
    const int c = 2 + t % 2;
    ProbabilityMap s = random_probs(rng, 4, 5, c);
    const ProbabilityMap tp = random_probs(rng, 4, 5, c);
    const SegMask gt = random_labels(rng, 4, 5, c);
    std::vector<double> g;
    supervised_loss(s, gt, &g);
    record("l_sup", relative_error(g, numeric_gradient(s.probs, [&] { return supervised_loss(s, gt); })));

    std::vector<uint8_t> valid(20, 1);
    valid[static_cast<std::size_t>(t)] = 0;
    consistency_loss(s, tp, &g, valid);
    record("l_con", relative_error(g, numeric_gradient(s.probs, [&] {
                                     return consistency_loss(s, tp, nullptr, valid);
                                   })));

    uncertainty_loss_from_probs(s, tp, &g);
    record("l_u", relative_error(g, numeric_gradient(s.probs, [&] {
                                   return uncertainty_loss_from_probs(s, tp);
                                 })));

    // contrastive term for a single anchor
    std::vector<double> a = randn(rng, 6, 0.3);
    std::vector<std::vector<double>> pos, neg;
    for (int k = 0; k < 3; ++k) pos.push_back(randn(rng, 6, 0.3));
    for (int k = 0; k < 4; ++k) neg.push_back(randn(rng, 6));
    auto contrast = [&] {
      std::vector<std::span<const double>> ps(pos.begin(), pos.end()), ns(neg.begin(), neg.end());
      return contrastive_consistency_loss(a, ps, ns, 0.5);
    };
    ContrastGrad cg;
    {
      std::vector<std::span<const double>> ps(pos.begin(), pos.end()), ns(neg.begin(), neg.end());
      contrastive_consistency_loss(a, ps, ns, 0.5, &cg);
    }
    record("contrastive anchor", relative_error(cg.anchor, numeric_gradient(a, contrast)));
    for (std::size_t k = 0; k < pos.size(); ++k)
      record("contrastive positives", relative_error(cg.positives[k], numeric_gradient(pos[k], contrast)));
    for (std::size_t k = 0; k < neg.size(); ++k)
      record("contrastive negatives", relative_error(cg.negatives[k], numeric_gradient(neg[k], contrast)));

    // uncertainty-weighted prototype contrast, through prototypes and through features
    PrototypeBank bank;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (const PrototypeKey k : {PrototypeKey{0, -1}, {0, -2}, {1, -1}, {1, -2}, {1, -3}})
      bank.entries[k] = {randn(rng, 5, 0.5), 3, u(rng)};
    std::map<PrototypeKey, std::vector<double>> pg;
    uncertainty_weighted_pc_loss(bank, 0.5, &pg);
    for (auto& [k, e] : bank.entries) {
      record("l_pc (prototypes)", relative_error(pg.at(k), numeric_gradient(e.vector, [&] {
                                                  return uncertainty_weighted_pc_loss(bank, 0.5);
                                                })));
    }

    std::vector<int32_t> l(100, 0);
    for (int y = 2 + t % 2; y < 8; ++y)
      for (int x = 2; x < 8; ++x) l[y * 10 + x] = 1;
    const std::vector<SignedDistanceMap> sdms{signed_distance_maps(SegMask(10, 10, 2, l))};
    std::vector<FeatureMap> fs(1, FeatureMap(10, 10, 4));
    fs[0].values = randn(rng, 400, 0.2);
    auto pc_of_features = [&] {
      PrototypeBank b = extract_prototypes(fs, sdms, 24);
      double h = 0.1;
      for (auto& [k, e] : b.entries) e.uncertainty = (h += 0.2);
      return uncertainty_weighted_pc_loss(b, 0.5);
    };
    PrototypeBank fb = extract_prototypes(fs, sdms, 24);
    double h = 0.1;
    for (auto& [k, e] : fb.entries) e.uncertainty = (h += 0.2);
    uncertainty_weighted_pc_loss(fb, 0.5, &pg);
    const auto fg = prototype_feature_grad(pg, fb, fs, sdms, 24);
    record("l_pc (features)", relative_error(fg[0].values, numeric_gradient(fs[0].values, pc_of_features)));

    TeacherPrototypeSet teacher(c, 5);
    for (int k = 0; k < c; ++k) teacher.update(k, randn(rng, 5), std::nullopt, 0.99, 0.999);
    FeatureMap f(4, 4, 5);
    f.values = randn(rng, 80);
    const SegMask labels = random_labels(rng, 4, 4, c);
    FeatureMap ag;
    pixel_prototype_aux_loss(f, labels, teacher, 0.5, &ag);
    record("l_aux", relative_error(ag.values, numeric_gradient(f.values, [&] {
                                     return pixel_prototype_aux_loss(f, labels, teacher, 0.5);
                                   })));
  }
  double worst = 0.0;
  std::string names;
  for (const auto& [n, e] : errs) {
    worst = std::max(worst, e);
    names += fmt(" %s=%.1e", n.c_str(), e);
  }

  // End-to-end: every loss active through a tiny double-precision network.
  TrainConfig c;
  c.widths = {2, 3, 4, 4, 4};
  c.fused_channels = 4;
  c.t_ramp = 10;
  c.lambda_u = 1.0;
  SyntheticOptions opt;
  opt.size = 64;
  opt.seed = 21;
  std::vector<Sample> samples;
  for (int i = 0; i < 4; ++i) samples.push_back(synthesize_sample(i, opt));
  Batch batch;
  batch.labeled = {&samples[0], &samples[1]};
  batch.unlabeled = {&samples[2], &samples[3]};
  batch.joint = true;
  batch.step = 10;
  BasicTrainState<double> s = init_state<double>(c, 2);
  // a zero projection bias puts dead pixels at the origin, where cosine has no derivative
  for (auto& p : s.student.params().tensors())
    if (p.name == "projection.bias")
      for (std::size_t k = 0; k < p.value.size(); ++k) p.value[k] = 0.2 * std::sin(1.0 + k);
  {
    BasicTrainState<double> warm = s;
    const auto out = warm.student.forward(student_inputs<double>(batch), NormMode::Train);
    build_targets(batch, warm, c, out);
    s.prototypes = warm.prototypes;
  }
  const Tensor<double> x = student_inputs<double>(batch);
  const auto out = s.student.forward(x, NormMode::Train);
  s.student.params().zero_grad();
  const StepTargets targets = build_targets(batch, s, c, out);
  StudentGrads<double> g;
  const LossBundle b = student_losses(batch, out, targets, c, s, &g);
  s.student.backward(g.probs, g.projected);
  auto total = [&] {
    const auto o = s.student.forward(x, NormMode::Train);
    return student_losses<double>(batch, o, targets, c, s, nullptr).l_total;
  };
  std::vector<double> analytic, numeric;
  for (auto& p : s.student.params().tensors()) {
    if (!p.trainable) continue;
    const std::size_t stride = std::max<std::size_t>(1, p.value.size() / 6);
    for (std::size_t k = 0; k < p.value.size(); k += stride) {
      analytic.push_back(p.grad[k]);
      numeric.push_back(numeric_partial(p.value[k], total, 1e-6));
    }
  }
  const double e2e = relative_error(analytic, numeric);
  const bool all_terms = b.l_con > 0 && b.l_u > 0 && b.l_aux > 0 && b.l_pc > 0;
  return {worst < 1e-4 && e2e < 1e-3 && all_terms,
          fmt("losses max %.1e (<1e-4):%s; end-to-end %.1e (<1e-3) over %zu params%s", worst,
              names.c_str(), e2e, analytic.size(), all_terms ? "" : " [a loss term was inactive]")};
}

Outcome closed_forms() {
  const double at_ramp = lambda_c_schedule(30000.0, 30000.0);
  const double at_zero = lambda_c_schedule(0.0, 30000.0);
  const double zero_err = std::abs(at_zero - 0.1 * std::exp(-5.0));

  // Uniform two-class prediction for student and teacher. The entropy's
  // epsilon lowers each pixel by about 2e-6, i.e. the loss by 2e-6/sqrt(HW),
  // so maps start at 4x4.
  double u_err = 0.0;
  for (int side : {4, 8, 16, 32, 64}) {
    ProbabilityMap m(side, side, 2);
    for (double& v : m.probs) v = 0.5;
    const double expect = std::log(2.0) / std::sqrt(static_cast<double>(side * side));
    u_err = std::max(u_err, std::abs(uncertainty_loss_from_probs(m, m) - expect));
  }

  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  double w_err = 0.0;
  for (int t = 0; t < 100; ++t) {
    PrototypeBank bank;
    const int n = 1 + t % 17;
    for (int k = 0; k < n; ++k) bank.entries[PrototypeKey{k % 3, -1 - k}] = {{1.0}, 1, u(rng)};
    double sum = 0.0;
    for (double w : uncertainty_weights(bank)) sum += w;
    w_err = std::max(w_err, std::abs(sum - 1.0));
  }
  const bool pass = at_ramp == 0.1 && zero_err <= 1e-12 && u_err <= 1e-6 && w_err <= 1e-9;
  return {pass, fmt("lambda_c(T_ramp)=%.17g, |lambda_c(0)-0.1e^-5|=%.1e, |L_u-ln2/sqrt(HW)|=%.1e, "
                    "|sum w-1|=%.1e",
                    at_ramp, zero_err, u_err, w_err)};
}

Outcome prototype_algebra() {
  std::mt19937 rng(31);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double recon = 0.0;
  for (int t = 0; t < 20; ++t) {
    const int classes = 2 + t % 2;
    const SegMask m = random_blobs(rng, 24, 24, classes);
    FeatureMap f(24, 24, 6);
    f.values = randn(rng, f.values.size());
    const auto sdm = signed_distance_maps(m);
    const auto bank = extract_prototypes(f, sdm, 3 + t % 5);
    for (int c = 0; c < classes; ++c) {
      std::vector<double> direct(6, 0.0), rebuilt(6, 0.0);
      for (std::size_t i = 0; i < f.pixels(); ++i) {
        const double d = sdm.planes[c].values[i];
        if (d < 0 && d != kAbsentDistance)
          for (int k = 0; k < 6; ++k) direct[k] += f.pixel(i)[k];
      }
      for (const auto& [key, e] : bank.entries)
        if (key.cls == c)
          for (int k = 0; k < 6; ++k) rebuilt[k] += static_cast<double>(e.count) * e.vector[k];
      for (int k = 0; k < 6; ++k)
        recon = std::max(recon, std::abs(rebuilt[k] - direct[k]) / std::max(1.0, std::abs(direct[k])));
    }
  }

  bool convex = true;
  for (int t = 0; t < 1000; ++t) {
    const double mu = u(rng), gamma = 1.0 - u(rng) * mu;
    const std::vector<double> p2{u(rng), -u(rng)}, p1{u(rng), u(rng)}, v{-u(rng), u(rng)};
    const auto out = update_teacher_prototype(p2, p1, std::span<const double>(v), mu, gamma);
    for (int d = 0; d < 2; ++d) {
      const double lo = std::min({p2[d], p1[d], v[d]}), hi = std::max({p2[d], p1[d], v[d]});
      convex = convex && out[d] >= lo - 1e-12 && out[d] <= hi + 1e-12;
    }
  }
  double fixed = 0.0;
  bool identity = true;
  for (int t = 0; t < 100; ++t) {
    const auto f = randn(rng, 8);
    const auto out = update_teacher_prototype(f, f, std::span<const double>(f), 0.99, 0.999);
    for (int d = 0; d < 8; ++d) fixed = std::max(fixed, std::abs(out[d] - f[d]));
    const auto p2 = randn(rng, 8), p1 = randn(rng, 8), v = randn(rng, 8);
    identity = identity && update_teacher_prototype(p2, p1, std::span<const double>(v), 0.0, 1.0) == p1;
  }
  const bool pass = recon <= 1e-6 && convex && fixed <= 1e-12 && identity;
  return {pass, fmt("reconstruction rel err %.1e (<1e-6), convex %s, fixed point err %.1e, "
                    "mu=0,gamma=1 returns p1 %s",
                    recon, convex ? "yes" : "NO", fixed, identity ? "yes" : "NO")};
}

Outcome metric_identities() {
  std::mt19937 rng(77);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto blob = [&](int h, int w) {
    std::vector<int32_t> l(static_cast<std::size_t>(h) * w, 0);
    const double cy = 3 + u(rng) * (h - 6), cx = 3 + u(rng) * (w - 6), ry = 1 + u(rng) * 5, rx = 1 + u(rng) * 5;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double a = (y - cy) / ry, b = (x - cx) / rx;
        if (a * a + b * b <= 1.0 || u(rng) < 0.02) l[y * w + x] = 1;
      }
    return SegMask(h, w, 2, l);
  };
  double dj = 0.0;
  for (int t = 0; t < 500; ++t) {
    const auto o = dice_jaccard(blob(20, 20), blob(20, 20), 1);
    dj = std::max(dj, std::abs(o.jaccard - o.dice / (2.0 - o.dice)));
  }
  bool zero = true;
  for (int t = 0; t < 20; ++t) {
    const SegMask a = blob(24, 24);
    const auto s = surface_distances(a, a, 1);
    zero = zero && s && s->hd95 == 0.0 && s->assd == 0.0;
  }
  std::vector<int32_t> la(15, 0), lb(15, 0);
  la[1 * 5 + 1] = 1;
  lb[1 * 5 + 4] = 1;
  const auto three = surface_distances(SegMask(3, 5, 2, la), SegMask(3, 5, 2, lb), 1);
  const bool is_three = three && three->hd95 == 3.0 && three->assd == 3.0;
  return {dj <= 1e-9 && zero && is_three,
          fmt("Dice-Jaccard max err %.1e over 500 pairs, identical masks zero %s, 3-pixel case "
              "hd95=%g assd=%g",
              dj, zero ? "yes" : "NO", three ? three->hd95 : NAN, three ? three->assd : NAN)};
}

// ---- training criteria ----

struct Desk {
  fs::path work;
  int steps = 800;
  Dataset data;
};

TrainConfig desk_config(const Desk& d) {
  TrainConfig c;
  c.widths = {8, 16, 32, 32, 32};
  c.fused_channels = 64;
  c.t_max = d.steps;
  c.t_ramp = d.steps;
  c.labeled_fraction = 0.1;
  c.checkpoint_every = 0;
  return c;
}

Outcome determinism(const Desk& d) {
  TrainConfig c = desk_config(d);
  c.steps = std::min(d.steps, 120);
  const fs::path a = d.work / "det_a", b = d.work / "det_b", r = d.work / "det_resume";
  for (const auto& p : {a, b, r}) fs::remove_all(p);
  run_training(c, d.data, a, false);
  run_training(c, d.data, b, false);
  const bool same = slurp(a / "losses.csv") == slurp(b / "losses.csv");

  TrainConfig first = c;
  first.steps = c.steps / 2 + 1;  // straddles the end of warm-up when steps are short
  first.checkpoint_every = first.steps;
  run_training(first, d.data, r, false);
  run_training(c, d.data, r, true);
  const bool resumed = slurp(a / "losses.csv") == slurp(r / "losses.csv");
  return {same && resumed && !slurp(a / "losses.csv").empty(),
          fmt("%lld steps: repeat run identical %s, resume at step %lld identical %s",
              static_cast<long long>(c.steps), same ? "yes" : "NO",
              static_cast<long long>(first.steps), resumed ? "yes" : "NO")};
}

std::string seeds_text(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += fmt("%s%.2f", s.empty() ? "" : "/", 100.0 * x);
  return s;
}

struct ArmScores {
  std::vector<double> full, sup, con;
};

Outcome direction_of_effect(const Desk& d, ArmScores& scores, double& minutes) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<uint64_t> seeds{1, 2, 3};
  const auto res = run_ablation(desk_config(d), d.data,
                                {parse_ablation_arm("all"), parse_ablation_arm("none"),
                                 parse_ablation_arm("con")},
                                seeds, d.work / "effect");
  write_ablation_csv(d.work / "effect" / "ablation.csv", res);
  minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  scores = {res[0].dice, res[1].dice, res[2].dice};
  const double full = 100.0 * mean_of(scores.full), sup = 100.0 * mean_of(scores.sup),
               con = 100.0 * mean_of(scores.con);
  const bool pass = full - sup >= 2.0 && full >= con && d.steps <= 2000 && minutes < 45.0;
  return {pass, fmt("test Dice full %.2f [%s], supervised %.2f [%s], l_con only %.2f [%s]; "
                    "gain %+.2f (>= +2.0), full-con %+.2f (>= 0); %d steps/arm, %.1f min (< 45)",
                    full, seeds_text(scores.full).c_str(), sup, seeds_text(scores.sup).c_str(), con,
                    seeds_text(scores.con).c_str(), full - sup, full - con, d.steps, minutes)};
}

Outcome fraction_sweep(const Desk& d, const ArmScores& at_ten) {
  const std::vector<uint64_t> seeds{1, 2, 3};
  std::vector<double> fractions{0.1, 0.25, 0.5, 1.0};
  std::vector<std::vector<double>> dice{at_ten.full};
  for (std::size_t k = 1; k < fractions.size(); ++k) {
    TrainConfig c = desk_config(d);
    c.labeled_fraction = fractions[k];
    const auto res = run_ablation(c, d.data, {parse_ablation_arm("all")}, seeds,
                                  d.work / fmt("sweep_%g", fractions[k]));
    dice.push_back(res[0].dice);
  }
  bool pass = true;
  std::string text;
  for (std::size_t k = 0; k < fractions.size(); ++k) {
    const double m = 100.0 * mean_of(dice[k]), s = 100.0 * stddev_of(dice[k]);
    text += fmt("%s%g%%: %.2f+-%.2f", k ? ", " : "", 100.0 * fractions[k], m, s);
    if (k > 0) {
      const double prev = 100.0 * mean_of(dice[k - 1]);
      const double slack = 100.0 * std::max(stddev_of(dice[k - 1]), stddev_of(dice[k]));
      pass = pass && m >= prev - slack;
    }
  }
  return {pass, "mean test Dice " + text};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string only;
  Desk desk;
  desk.work = fs::temp_directory_path() / "pccs_acceptance";
  app.add_option("--only", only, "comma list of criteria to run");
  app.add_option("--steps", desk.steps, "training steps per arm");
  app.add_option("--work", desk.work, "scratch directory");
  CLI11_PARSE(app, argc, argv);

  std::set<int> selected;
  {
    std::stringstream ss(only);
    for (std::string tok; std::getline(ss, tok, ',');) selected.insert(std::stoi(tok));
  }
  auto wanted = [&](int k) { return selected.empty() || selected.count(k) > 0; };
  pccs::log::set_level(pccs::log::Level::Error);

  int failures = 0;
  auto report = [&](int k, const char* name, const std::function<Outcome()>& fn) {
    if (!wanted(k)) return;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.pass) ++failures;
    std::printf("%s  %d %-22s %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", k, name, o.detail.c_str(), sec);
    std::fflush(stdout);
  };

  report(1, "sdm-oracle", [] {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o = sdm_equivalence();
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    o.pass = o.pass && sec < 30.0;
    return o;
  });
  report(2, "gradient-checks", [] {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o = gradient_checks();
    o.pass = o.pass && std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() < 300.0;
    return o;
  });
  report(3, "closed-forms", closed_forms);
  report(4, "prototype-algebra", prototype_algebra);
  report(5, "metric-identities", metric_identities);

  if (wanted(6) || wanted(7) || wanted(8)) {
    fs::remove_all(desk.work);
    SyntheticOptions opt;
    opt.n = 300;
    opt.size = 64;
    opt.seed = 17;
    generate_synthetic(desk.work / "data", opt);
    desk.data = read_dataset(desk.work / "data");
  }
  report(6, "determinism", [&] { return determinism(desk); });

  ArmScores scores;
  double minutes = 0.0;
  bool have_scores = false;
  report(7, "direction-of-effect", [&] {
    Outcome o = direction_of_effect(desk, scores, minutes);
    have_scores = true;
    return o;
  });
  report(8, "labeled-fraction-sweep", [&] {
    if (!have_scores) {
      double unused = 0.0;
      direction_of_effect(desk, scores, unused);
    }
    return fraction_sweep(desk, scores);
  });

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
