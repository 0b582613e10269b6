#include "pccs/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pccs/log.hpp"

namespace pccs {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double log_sum_exp(std::span<const double> z) {
  const double mx = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - mx);
  return mx + std::log(s);
}

void check_shape(const ProbabilityMap& p, const SegMask& m) {
  if (p.height != m.height() || p.width != m.width() || p.num_classes != m.num_classes()) {
    throw std::domain_error("probability map and mask shapes differ");
  }
}

}  // namespace

void ProbabilityMap::validate(double tol) const {
  if (probs.size() != pixels() * static_cast<std::size_t>(num_classes)) {
    throw std::domain_error("probability map storage does not match its shape");
  }
  for (std::size_t i = 0; i < pixels(); ++i) {
    double s = 0.0;
    for (int c = 0; c < num_classes; ++c) {
      const double p = at(i, c);
      if (!(p >= -tol && p <= 1.0 + tol)) throw std::domain_error("probability outside [0,1]");
      s += p;
    }
    if (std::abs(s - 1.0) > tol) throw std::domain_error("pixel probabilities do not sum to 1");
  }
}

SegMask ProbabilityMap::argmax(Provenance provenance) const {
  std::vector<int32_t> labels(pixels());
  for (std::size_t i = 0; i < pixels(); ++i) {
    int best = 0;
    for (int c = 1; c < num_classes; ++c) {
      if (at(i, c) > at(i, best)) best = c;
    }
    labels[i] = best;
  }
  return SegMask(height, width, num_classes, std::move(labels), provenance);
}

double supervised_loss(const ProbabilityMap& pred, const SegMask& gt, std::vector<double>* grad) {
  check_shape(pred, gt);
  if (gt.provenance() != Provenance::GroundTruth) {
    throw std::domain_error("supervised loss needs a ground-truth mask");
  }
  const std::size_t n = pred.pixels();
  const int classes = pred.num_classes;
  const auto labels = gt.labels();
  if (grad) grad->assign(pred.probs.size(), 0.0);

  double ce = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = pred.at(i, labels[i]);
    ce -= std::log(p + kCeEpsilon);
    if (grad) (*grad)[i * classes + labels[i]] += -0.5 / (static_cast<double>(n) * (p + kCeEpsilon));
  }
  ce /= static_cast<double>(n);

  std::vector<double> inter(classes, 0.0), psum(classes, 0.0), gsum(classes, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < classes; ++c) {
      const double p = pred.at(i, c);
      const double g = labels[i] == c ? 1.0 : 0.0;
      inter[c] += p * g;
      psum[c] += p;
      gsum[c] += g;
    }
  }
  double dice_mean = 0.0;
  for (int c = 0; c < classes; ++c) {
    dice_mean += (2.0 * inter[c] + kDiceSmooth) / (psum[c] + gsum[c] + kDiceSmooth);
  }
  dice_mean /= classes;
  if (grad) {
    for (int c = 0; c < classes; ++c) {
      const double den = psum[c] + gsum[c] + kDiceSmooth;
      const double num = 2.0 * inter[c] + kDiceSmooth;
      for (std::size_t i = 0; i < n; ++i) {
        const double g = labels[i] == c ? 1.0 : 0.0;
        const double d_dice = (2.0 * g * den - num) / (den * den);
        (*grad)[i * classes + c] += -0.5 * d_dice / classes;
      }
    }
  }
  return 0.5 * (ce + (1.0 - dice_mean));
}

std::vector<double> similarity_weights(std::span<const double> anchor,
                                       const std::vector<std::span<const double>>& positives) {
  std::vector<double> w(positives.size());
  double total = 0.0;
  for (std::size_t k = 0; k < positives.size(); ++k) {
    w[k] = dot(anchor, positives[k]);
    total += w[k];
  }
  if (total <= kDegenerateSimilarity) {
    std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(std::max<std::size_t>(1, w.size())));
  } else {
    for (double& v : w) v /= total;
  }
  return w;
}

double contrastive_consistency_loss(std::span<const double> anchor,
                                    const std::vector<std::span<const double>>& positives,
                                    const std::vector<std::span<const double>>& negatives,
                                    double tau, ContrastGrad* grad) {
  if (!(tau > 0.0)) throw std::domain_error("temperature must be positive");
  const std::size_t dim = anchor.size();
  if (grad) {
    grad->anchor.assign(dim, 0.0);
    grad->positives.assign(positives.size(), std::vector<double>(dim, 0.0));
    grad->negatives.assign(negatives.size(), std::vector<double>(dim, 0.0));
  }
  if (positives.empty()) return 0.0;

  std::vector<double> pos_sim(positives.size());
  std::vector<double> neg_sim(negatives.size());
  double sim_total = 0.0;
  for (std::size_t k = 0; k < positives.size(); ++k) {
    pos_sim[k] = dot(anchor, positives[k]);
    sim_total += pos_sim[k];
  }
  for (std::size_t m = 0; m < negatives.size(); ++m) neg_sim[m] = dot(anchor, negatives[m]);
  const bool degenerate = sim_total <= kDegenerateSimilarity;
  const std::vector<double> weights = similarity_weights(anchor, positives);

  // log-probability of each positive against the shared negatives
  std::vector<double> logits(negatives.size() + 1);
  for (std::size_t m = 0; m < negatives.size(); ++m) logits[m + 1] = neg_sim[m] / tau;
  std::vector<double> log_prob(positives.size());
  std::vector<double> log_denom(positives.size());
  double loss = 0.0;
  for (std::size_t k = 0; k < positives.size(); ++k) {
    logits[0] = pos_sim[k] / tau;
    log_denom[k] = log_sum_exp(logits);
    log_prob[k] = logits[0] - log_denom[k];
    loss -= weights[k] * log_prob[k];
  }
  if (!grad) return loss;

  const double weighted_log_prob = -loss;
  std::vector<double> d_pos(positives.size(), 0.0);
  std::vector<double> d_neg(negatives.size(), 0.0);
  for (std::size_t k = 0; k < positives.size(); ++k) {
    const double sigma = std::exp(log_prob[k]);
    d_pos[k] = -weights[k] * (1.0 - sigma) / tau;
    if (!degenerate) d_pos[k] -= (log_prob[k] - weighted_log_prob) / sim_total;
    for (std::size_t m = 0; m < negatives.size(); ++m) {
      d_neg[m] += weights[k] * std::exp(neg_sim[m] / tau - log_denom[k]) / tau;
    }
  }
  for (std::size_t k = 0; k < positives.size(); ++k) {
    for (std::size_t d = 0; d < dim; ++d) {
      grad->anchor[d] += d_pos[k] * positives[k][d];
      grad->positives[k][d] += d_pos[k] * anchor[d];
    }
  }
  for (std::size_t m = 0; m < negatives.size(); ++m) {
    for (std::size_t d = 0; d < dim; ++d) {
      grad->anchor[d] += d_neg[m] * negatives[m][d];
      grad->negatives[m][d] += d_neg[m] * anchor[d];
    }
  }
  return loss;
}

std::vector<double> uncertainty_weights(const PrototypeBank& bank) {
  std::vector<double> neg_h;
  neg_h.reserve(bank.size());
  for (const auto& [key, e] : bank.entries) neg_h.push_back(-e.uncertainty);
  if (neg_h.empty()) return neg_h;
  const double lse = log_sum_exp(neg_h);
  for (double& v : neg_h) v = std::exp(v - lse);
  return neg_h;
}

double uncertainty_weighted_pc_loss(const PrototypeBank& bank, double tau,
                                    std::map<PrototypeKey, std::vector<double>>* grad) {
  if (!(tau > 0.0)) throw std::domain_error("temperature must be positive");
  if (grad) grad->clear();
  if (bank.empty()) {
    log::warning("prototype bank is empty; prototype contrastive loss is 0");
    return 0.0;
  }
  std::vector<PrototypeKey> keys;
  std::vector<std::vector<double>> unit;
  std::vector<double> norms;
  std::map<PrototypeKey, std::size_t> index;
  for (const auto& [key, e] : bank.entries) {
    index[key] = keys.size();
    keys.push_back(key);
    const double nrm = norm(e.vector);
    norms.push_back(nrm);
    std::vector<double> u(e.vector.size(), 0.0);
    if (nrm > 1e-12) {
      for (std::size_t d = 0; d < u.size(); ++d) u[d] = e.vector[d] / nrm;
    }
    unit.push_back(std::move(u));
  }
  const std::vector<double> w = uncertainty_weights(bank);
  const std::size_t dim = unit.front().size();
  std::vector<std::vector<double>> unit_grad(keys.size(), std::vector<double>(dim, 0.0));

  double total = 0.0;
  for (std::size_t a = 0; a < keys.size(); ++a) {
    const ContrastSets sets = build_contrast_sets(bank, keys[a]);
    std::vector<std::span<const double>> pos, neg;
    for (const auto& k : sets.positives) pos.emplace_back(unit[index.at(k)]);
    for (const auto& k : sets.negatives) neg.emplace_back(unit[index.at(k)]);
    ContrastGrad g;
    total += w[a] * contrastive_consistency_loss(unit[a], pos, neg, tau, grad ? &g : nullptr);
    if (!grad) continue;
    for (std::size_t d = 0; d < dim; ++d) unit_grad[a][d] += w[a] * g.anchor[d];
    for (std::size_t k = 0; k < sets.positives.size(); ++k) {
      auto& dst = unit_grad[index.at(sets.positives[k])];
      for (std::size_t d = 0; d < dim; ++d) dst[d] += w[a] * g.positives[k][d];
    }
    for (std::size_t m = 0; m < sets.negatives.size(); ++m) {
      auto& dst = unit_grad[index.at(sets.negatives[m])];
      for (std::size_t d = 0; d < dim; ++d) dst[d] += w[a] * g.negatives[m][d];
    }
  }
  if (grad) {
    // d(v/|v|) = (I - u u^T) / |v|
    for (std::size_t k = 0; k < keys.size(); ++k) {
      std::vector<double> raw(dim, 0.0);
      if (norms[k] > 1e-12) {
        const double proj = dot(unit_grad[k], unit[k]);
        for (std::size_t d = 0; d < dim; ++d) {
          raw[d] = (unit_grad[k][d] - proj * unit[k][d]) / norms[k];
        }
      }
      (*grad)[keys[k]] = std::move(raw);
    }
  }
  return total;
}

double pixel_prototype_aux_loss(const FeatureMap& features, const SegMask& labels,
                                const TeacherPrototypeSet& teacher, double tau, FeatureMap* grad) {
  if (!(tau > 0.0)) throw std::domain_error("temperature must be positive");
  if (labels.height() != features.height || labels.width() != features.width) {
    throw std::domain_error("features and labels are not spatially aligned");
  }
  if (grad) *grad = FeatureMap(features.height, features.width, features.dim);
  if (!teacher.any()) {
    log::warning("no teacher prototypes yet; pixel-prototype loss is 0");
    return 0.0;
  }
  std::vector<int> classes;
  std::vector<std::vector<double>> unit;
  for (int c = 0; c < teacher.num_classes(); ++c) {
    if (!teacher.has(c)) continue;
    const auto& p = teacher.prototype(c);
    if (static_cast<int>(p.size()) != features.dim) {
      throw std::domain_error("teacher prototype dimension differs from features");
    }
    const double nrm = norm(p);
    std::vector<double> u(p.size(), 0.0);
    if (nrm > 1e-12) {
      for (std::size_t d = 0; d < u.size(); ++d) u[d] = p[d] / nrm;
    }
    classes.push_back(c);
    unit.push_back(std::move(u));
  }

  const auto lab = labels.labels();
  const std::size_t q = classes.size();
  std::vector<double> cosine(q), logits(q);
  double total = 0.0;
  std::size_t contributing = 0;
  std::vector<std::pair<std::size_t, std::size_t>> used;  // (pixel, positive slot)
  for (std::size_t i = 0; i < features.pixels(); ++i) {
    const auto it = std::find(classes.begin(), classes.end(), lab[i]);
    if (it == classes.end()) continue;
    const std::size_t pos = static_cast<std::size_t>(it - classes.begin());
    const auto v = features.pixel(i);
    const double nv = norm(v);
    for (std::size_t k = 0; k < q; ++k) {
      cosine[k] = nv > 1e-12 ? dot(v, unit[k]) / nv : 0.0;
      logits[k] = cosine[k] / tau;
    }
    total += log_sum_exp(logits) - logits[pos];
    ++contributing;
    used.emplace_back(i, pos);
  }
  if (contributing == 0) return 0.0;
  const double inv = 1.0 / static_cast<double>(contributing);
  if (grad) {
    for (const auto& [i, pos] : used) {
      const auto v = features.pixel(i);
      const double nv = norm(v);
      if (nv <= 1e-12) continue;
      for (std::size_t k = 0; k < q; ++k) {
        cosine[k] = dot(v, unit[k]) / nv;
        logits[k] = cosine[k] / tau;
      }
      const double lse = log_sum_exp(logits);
      auto g = grad->pixel(i);
      for (std::size_t k = 0; k < q; ++k) {
        const double dz = (std::exp(logits[k] - lse) - (k == pos ? 1.0 : 0.0)) * inv / tau;
        for (int d = 0; d < features.dim; ++d) {
          g[d] += dz * (unit[k][d] / nv - cosine[k] * v[d] / (nv * nv));
        }
      }
    }
  }
  return total * inv;
}

double consistency_loss(const ProbabilityMap& student, const ProbabilityMap& teacher,
                        std::vector<double>* grad_student, std::span<const uint8_t> valid) {
  if (!student.same_shape(teacher)) throw std::domain_error("consistency maps differ in shape");
  if (!valid.empty() && valid.size() != student.pixels()) {
    throw std::domain_error("validity mask size mismatch");
  }
  const int classes = student.num_classes;
  if (grad_student) grad_student->assign(student.probs.size(), 0.0);
  std::size_t used = 0;
  for (std::size_t i = 0; i < student.pixels(); ++i) used += valid.empty() || valid[i];
  if (used == 0) return 0.0;
  const double denom = static_cast<double>(used) * classes;
  double sum = 0.0;
  for (std::size_t i = 0; i < student.pixels(); ++i) {
    if (!valid.empty() && !valid[i]) continue;
    for (int c = 0; c < classes; ++c) {
      const double d = student.at(i, c) - teacher.at(i, c);
      sum += d * d;
      if (grad_student) (*grad_student)[i * classes + c] = 2.0 * d / denom;
    }
  }
  return sum / denom;
}

std::vector<double> pixel_uncertainty(const ProbabilityMap& p, double eps) {
  std::vector<double> u(p.pixels(), 0.0);
  for (std::size_t i = 0; i < p.pixels(); ++i) {
    double h = 0.0;
    for (int c = 0; c < p.num_classes; ++c) {
      const double v = p.at(i, c);
      h -= v * std::log(v + eps);
    }
    u[i] = std::max(h, 0.0);
  }
  return u;
}

double uncertainty_loss(std::span<const double> u_student, std::span<const double> u_teacher,
                        std::vector<double>* grad_u_student) {
  if (u_student.size() != u_teacher.size()) throw std::domain_error("uncertainty map sizes differ");
  const double hw = static_cast<double>(u_student.size());
  if (grad_u_student) grad_u_student->assign(u_student.size(), 0.0);
  if (u_student.empty()) return 0.0;
  const double ns = norm(u_student);
  const double nt = norm(u_teacher);
  if (grad_u_student && ns > 0.0) {
    for (std::size_t i = 0; i < u_student.size(); ++i) {
      (*grad_u_student)[i] = u_student[i] / (2.0 * hw * ns);
    }
  }
  return (ns + nt) / (2.0 * hw);
}

double uncertainty_loss_from_probs(const ProbabilityMap& student, const ProbabilityMap& teacher,
                                   std::vector<double>* grad_student, double eps) {
  if (!student.same_shape(teacher)) throw std::domain_error("uncertainty maps differ in shape");
  const auto us = pixel_uncertainty(student, eps);
  const auto ut = pixel_uncertainty(teacher, eps);
  std::vector<double> gu;
  const double loss = uncertainty_loss(us, ut, grad_student ? &gu : nullptr);
  if (grad_student) {
    const int classes = student.num_classes;
    grad_student->assign(student.probs.size(), 0.0);
    for (std::size_t i = 0; i < student.pixels(); ++i) {
      if (us[i] <= 0.0 || gu[i] == 0.0) continue;
      for (int c = 0; c < classes; ++c) {
        const double v = student.at(i, c);
        const double du = -std::log(v + eps) - v / (v + eps);
        (*grad_student)[i * classes + c] = gu[i] * du;
      }
    }
  }
  return loss;
}

double lambda_c_schedule(double step, double ramp) {
  if (step < 0.0) throw std::domain_error("step must be non-negative");
  if (ramp <= 0.0 || step >= ramp) return 0.1;
  const double r = 1.0 - step / ramp;
  return 0.1 * std::exp(-5.0 * r * r);
}

LossBundle total_loss(const LossParts& parts, const LossWeights& weights,
                      const LossToggles& toggles, double step) {
  const std::pair<const char*, double> named[] = {
      {"l_sup", parts.sup}, {"l_con", parts.con}, {"l_u", parts.u},
      {"l_aux", parts.aux}, {"l_pc", parts.pc}};
  for (const auto& [name, value] : named) {
    if (!std::isfinite(value)) {
      throw TrainingAbort(name, std::string("non-finite loss component ") + name);
    }
  }
  LossBundle b;
  b.lambda_c = lambda_c_schedule(step, weights.ramp);
  b.lambda_aux = weights.lambda_aux;
  b.lambda_pc = weights.lambda_pc;
  b.lambda_u = weights.lambda_u;
  b.l_sup = parts.sup;
  b.l_con = toggles.con ? parts.con : 0.0;
  b.l_u = toggles.u ? parts.u : 0.0;
  b.l_aux = toggles.aux ? parts.aux : 0.0;
  b.l_pc = toggles.pc ? parts.pc : 0.0;
  b.l_c = b.l_con + b.lambda_u * b.l_u;
  b.l_total = b.l_sup + b.lambda_c * b.l_c + b.lambda_aux * b.l_aux + b.lambda_pc * b.l_pc;
  if (!std::isfinite(b.l_total)) throw TrainingAbort("l_total", "non-finite total loss");
  return b;
}

}  // namespace pccs
