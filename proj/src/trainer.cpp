#include "pccs/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "pccs/log.hpp"
#include "pccs/random.hpp"

namespace pccs {

namespace {

constexpr uint64_t kInitStream = 0x1A17;
constexpr uint64_t kLabeledStream = 0x1AB;
constexpr uint64_t kUnlabeledStream = 0x0B1A;
constexpr uint64_t kAugStream = 0xA06;

template <typename T>
ProbabilityMap prob_map(const Tensor<T>& probs, int img, Branch branch) {
  ProbabilityMap m(probs.h, probs.w, probs.c, branch);
  for (int c = 0; c < probs.c; ++c)
    for (int y = 0; y < probs.h; ++y)
      for (int x = 0; x < probs.w; ++x) {
        m.at(static_cast<std::size_t>(y) * probs.w + x, c) = static_cast<double>(probs.at(c, img, y, x));
      }
  return m;
}

template <typename T>
FeatureMap feature_map(const Tensor<T>& f, int img) {
  FeatureMap m(f.h, f.w, f.c);
  for (int d = 0; d < f.c; ++d)
    for (int y = 0; y < f.h; ++y)
      for (int x = 0; x < f.w; ++x) {
        m.values[(static_cast<std::size_t>(y) * f.w + x) * f.c + d] =
            static_cast<double>(f.at(d, img, y, x));
      }
  return m;
}

// Adds scale * pixel-major values of one image into a [C][N][H][W] buffer.
void scatter_add(std::vector<double>& dst, int channels, int n, int h, int w, int img,
                 std::span<const double> src, double scale) {
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t t = ((static_cast<std::size_t>(c) * n + img) * h + y) * w + x;
        dst[t] += scale * src[(static_cast<std::size_t>(y) * w + x) * channels + c];
      }
}

// Nearest sample at the block centre.
SegMask downsample_mask(const SegMask& m, int factor) {
  if (factor == 1) return m;
  const int h = m.height() / factor, w = m.width() / factor;
  std::vector<int32_t> labels(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      labels[static_cast<std::size_t>(y) * w + x] = m.at(y * factor + factor / 2, x * factor + factor / 2);
    }
  return SegMask(h, w, m.num_classes(), std::move(labels), m.provenance());
}

SegMask argmax_mask(const ProbabilityMap& p, Provenance prov) { return p.argmax(prov); }

std::vector<std::string> epoch_order(const std::vector<std::string>& pool, uint64_t seed,
                                     uint64_t stream, int64_t epoch) {
  std::vector<std::string> order = pool;
  Rng rng(derive_seed(seed, stream, static_cast<uint64_t>(epoch)));
  rng.shuffle(order.begin(), order.end());
  return order;
}

void take_cyclic(const std::vector<std::string>& pool, uint64_t seed, uint64_t stream,
                 int64_t first, int count, std::vector<std::string>& out) {
  const auto n = static_cast<int64_t>(pool.size());
  int64_t cached_epoch = -1;
  std::vector<std::string> order;
  for (int j = 0; j < count; ++j) {
    const int64_t p = first + j;
    const int64_t epoch = p / n;
    if (epoch != cached_epoch) {
      order = epoch_order(pool, seed, stream, epoch);
      cached_epoch = epoch;
    }
    out.push_back(order[static_cast<std::size_t>(p % n)]);
  }
}

int labeled_slots(const TrainConfig& config, const SplitManifest& splits) {
  return splits.unlabeled.empty() ? config.batch_size : config.labeled_per_batch;
}

template <typename T>
Tensor<T> images_tensor(const std::vector<GrayImage>& images) {
  const int h = images.front().height, w = images.front().width;
  Tensor<T> x(1, static_cast<int>(images.size()), h, w);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].height != h || images[i].width != w) {
      throw std::domain_error("batch images differ in size");
    }
    std::copy(images[i].pixels.begin(), images[i].pixels.end(),
              x.v.begin() + static_cast<std::ptrdiff_t>(i * x.plane()));
  }
  return x;
}

}  // namespace

double poly_lr(double base, int64_t step, int64_t t_max, double power) {
  if (t_max <= 0) throw std::domain_error("t_max must be positive");
  const double r = 1.0 - static_cast<double>(step) / static_cast<double>(t_max);
  return r <= 0.0 ? 0.0 : base * std::pow(r, power);
}

template <typename T>
BasicTrainState<T> init_state(const TrainConfig& config, int num_classes) {
  BasicTrainState<T> s;
  s.student = UNet<T>(config.model_config(num_classes), derive_seed(config.seed, kInitStream));
  s.teacher = s.student;
  s.optimizer = SgdMomentum<T>(config.momentum, config.weight_decay);
  s.classifier = PrototypeClassifier(num_classes, kProjectionDim);
  s.prototypes = TeacherPrototypeSet(num_classes, kProjectionDim);
  return s;
}

BatchPlan plan_batch(const TrainConfig& config, const SplitManifest& splits, int64_t step) {
  if (splits.labeled.empty()) throw std::domain_error("labeled pool is empty");
  BatchPlan plan;
  plan.joint = step >= config.resolved_warmup() && config.toggles.any();
  const int nl = labeled_slots(config, splits);
  take_cyclic(splits.labeled, config.seed, kLabeledStream, step * nl, nl, plan.labeled);
  const int nu = config.batch_size - nl;
  if (plan.joint && nu > 0) {
    take_cyclic(splits.unlabeled, config.seed, kUnlabeledStream, step * nu, nu, plan.unlabeled);
  }
  return plan;
}

Batch assemble_batch(const BatchPlan& plan, const Dataset& data, int64_t step) {
  Batch b;
  b.joint = plan.joint;
  b.step = step;
  for (const auto& id : plan.labeled) {
    const Sample& s = data.get(id);
    if (!s.mask) throw std::domain_error("labeled sample " + id + " has no mask");
    b.labeled.push_back(&s);
  }
  for (const auto& id : plan.unlabeled) b.unlabeled.push_back(&data.get(id));
  return b;
}

template <typename T>
Tensor<T> student_inputs(const Batch& batch) {
  std::vector<GrayImage> images;
  for (std::size_t i = 0; i < batch.size(); ++i) images.push_back(normalize(batch.sample(i).image));
  return images_tensor<T>(images);
}

template <typename T>
StepTargets build_targets(const Batch& batch, BasicTrainState<T>& state, const TrainConfig& config,
                          const NetworkOutputs<T>& student) {
  const int n = static_cast<int>(batch.size());
  const int nl = static_cast<int>(batch.labeled.size());
  const int h = student.probs.h, w = student.probs.w, classes = student.probs.c;
  const int factor = h / student.projected.h;

  // Teacher view: augmented image; labeled masks follow the same warp.
  std::vector<AugmentParams> params(static_cast<std::size_t>(n));
  std::vector<std::optional<SegMask>> aug_masks(static_cast<std::size_t>(n));
  std::vector<GrayImage> views;
  for (int i = 0; i < n; ++i) {
    const Sample& s = batch.sample(static_cast<std::size_t>(i));
    params[i] = sample_augment_params(h, w, derive_seed(config.seed, kAugStream,
                                                        static_cast<uint64_t>(batch.step),
                                                        static_cast<uint64_t>(i)));
    const SegMask* m = i < nl ? &*s.mask : nullptr;
    Augmented a = apply_augment(s.image, m, params[i]);
    views.push_back(normalize(a.image));
    aug_masks[i] = std::move(a.mask);
  }
  const NetworkOutputs<T> teacher = state.teacher.forward(images_tensor<T>(views), NormMode::BatchStats);

  StepTargets t;
  std::vector<FeatureMap> student_features, teacher_features;
  std::vector<SegMask> teacher_masks;
  for (int i = 0; i < n; ++i) {
    const ProbabilityMap sp = prob_map(student.probs, i, Branch::Student);
    const ProbabilityMap tp_aug = prob_map(teacher.probs, i, Branch::Teacher);
    std::vector<uint8_t> valid;
    const auto inv = invert_augment(tp_aug.probs, classes, params[i], &valid);
    ProbabilityMap tp(h, w, classes, Branch::Teacher);
    for (std::size_t p = 0; p < tp.pixels(); ++p)
      for (int c = 0; c < classes; ++c) {
        tp.at(p, c) = valid[p] ? inv[p * classes + c] : sp.at(p, c);
      }

    SegMask mask;
    if (i < nl && config.labeled_proto_masks == "gt") {
      mask = *batch.sample(static_cast<std::size_t>(i)).mask;
    } else {
      mask = argmax_mask(config.pseudo_source == "student" ? sp : tp, Provenance::Pseudo);
    }
    t.feature_masks.push_back(downsample_mask(mask, factor));
    t.sdms.push_back(signed_distance_maps(t.feature_masks.back()));
    t.masks.push_back(std::move(mask));
    t.teacher_probs.push_back(std::move(tp));
    t.valid.push_back(std::move(valid));

    // v_c lives in the teacher's (augmented) frame, so its mask does too.
    student_features.push_back(feature_map(student.projected, i));
    teacher_features.push_back(feature_map(teacher.projected, i));
    teacher_masks.push_back(i < nl ? downsample_mask(*aug_masks[i], factor)
                                   : downsample_mask(argmax_mask(tp_aug, Provenance::Pseudo), factor));
  }

  for (int c = 0; c < classes; ++c) {
    const auto p1 = class_mean_feature(student_features, t.feature_masks, c);
    if (!p1) continue;
    const auto v = class_mean_feature(teacher_features, teacher_masks, c);
    std::optional<std::span<const double>> vs;
    if (config.teacher_history && v) vs = std::span<const double>(*v);
    state.prototypes.update(c, *p1, vs, config.mu, config.gamma);
  }
  state.prototypes.advance();
  return t;
}

template <typename T>
LossBundle student_losses(const Batch& batch, const NetworkOutputs<T>& student,
                          const StepTargets& targets, const TrainConfig& config,
                          const BasicTrainState<T>& state, StudentGrads<T>* grads) {
  const int n = static_cast<int>(batch.size());
  const int nl = static_cast<int>(batch.labeled.size());
  const int classes = student.probs.c, h = student.probs.h, w = student.probs.w;
  const int dim = student.projected.c, fh = student.projected.h, fw = student.projected.w;
  const bool want = grads != nullptr;

  std::vector<ProbabilityMap> sp;
  for (int i = 0; i < n; ++i) sp.push_back(prob_map(student.probs, i, Branch::Student));

  const std::size_t prob_size = student.probs.size(), feat_size = student.projected.size();
  std::vector<double> g_sup, g_con, g_u, g_aux, g_pc;
  if (want) {
    g_sup.assign(prob_size, 0.0);
    g_con.assign(prob_size, 0.0);
    g_u.assign(prob_size, 0.0);
    g_aux.assign(feat_size, 0.0);
    g_pc.assign(feat_size, 0.0);
  }

  LossParts parts;
  std::vector<double> g;
  for (int i = 0; i < nl; ++i) {
    parts.sup += supervised_loss(sp[i], *batch.labeled[i]->mask, want ? &g : nullptr) / nl;
    if (want) scatter_add(g_sup, classes, n, h, w, i, g, 1.0 / nl);
  }

  LossToggles active{false, false, false, false};
  if (batch.joint) {
    active = config.toggles;
    std::vector<int> con_images;
    for (int i = config.consistency_on_labeled ? 0 : nl; i < n; ++i) con_images.push_back(i);
    const double ncon = static_cast<double>(con_images.size());
    for (int i : con_images) {
      if (active.con) {
        parts.con += consistency_loss(sp[i], targets.teacher_probs[i], want ? &g : nullptr,
                                      targets.valid[i]) / ncon;
        if (want) scatter_add(g_con, classes, n, h, w, i, g, 1.0 / ncon);
      }
      if (active.u) {
        parts.u += uncertainty_loss_from_probs(sp[i], targets.teacher_probs[i], want ? &g : nullptr,
                                               config.epsilon) / ncon;
        if (want) scatter_add(g_u, classes, n, h, w, i, g, 1.0 / ncon);
      }
    }

    std::vector<FeatureMap> features;
    if (active.aux || active.pc)
      for (int i = 0; i < n; ++i) features.push_back(feature_map(student.projected, i));

    if (active.aux && state.prototypes.any()) {
      FeatureMap fg;
      for (int i = 0; i < n; ++i) {
        parts.aux += pixel_prototype_aux_loss(features[i], targets.feature_masks[i], state.prototypes,
                                              config.tau, want ? &fg : nullptr) / n;
        if (want) scatter_add(g_aux, dim, n, fh, fw, i, fg.values, 1.0 / n);
      }
    }

    if (active.pc) {
      PrototypeBank bank = extract_prototypes(features, targets.sdms, config.max_bin, "student");
      const PrototypeClassifier& clf = state.classifier;
      assign_uncertainties(bank, [&clf](std::span<const double> v) { return clf.probabilities(v); });
      std::map<PrototypeKey, std::vector<double>> pg;
      parts.pc = uncertainty_weighted_pc_loss(bank, config.tau, want ? &pg : nullptr);
      if (want && !pg.empty()) {
        const auto fgs = prototype_feature_grad(pg, bank, features, targets.sdms, config.max_bin);
        for (int i = 0; i < n; ++i) scatter_add(g_pc, dim, n, fh, fw, i, fgs[i].values, 1.0);
      }
    }
  }

  LossWeights weights{config.lambda_aux, config.lambda_pc, config.lambda_u, config.t_ramp};
  const LossBundle bundle = total_loss(parts, weights, active, static_cast<double>(batch.step));

  if (want) {
    grads->probs = Tensor<T>(classes, n, h, w);
    for (std::size_t k = 0; k < prob_size; ++k) {
      grads->probs.v[k] = static_cast<T>(g_sup[k] + bundle.coef_con() * g_con[k] +
                                         bundle.coef_u() * g_u[k]);
    }
    if (active.aux || active.pc) {
      grads->projected = Tensor<T>(dim, n, fh, fw);
      for (std::size_t k = 0; k < feat_size; ++k) {
        grads->projected.v[k] = static_cast<T>(bundle.coef_aux() * g_aux[k] + bundle.coef_pc() * g_pc[k]);
      }
    } else {
      grads->projected = Tensor<T>();
    }
  }
  return bundle;
}

template <typename T>
LossBundle compute_gradients(const Batch& batch, BasicTrainState<T>& state, const TrainConfig& config) {
  if (batch.labeled.empty()) throw std::domain_error("batch has no labeled samples");
  const NetworkOutputs<T> out = state.student.forward(student_inputs<T>(batch), NormMode::Train);
  state.student.params().zero_grad();

  StepTargets targets;
  if (batch.joint) targets = build_targets(batch, state, config, out);

  StudentGrads<T> grads;
  const LossBundle bundle = student_losses(batch, out, targets, config, state, &grads);
  state.student.backward(grads.probs, grads.projected);

  // g(.) learns from detached features of labeled pixels.
  const int factor = out.probs.h / out.projected.h;
  std::vector<double> rows;
  std::vector<int32_t> labels;
  for (std::size_t i = 0; i < batch.labeled.size(); ++i) {
    const FeatureMap f = feature_map(out.projected, static_cast<int>(i));
    const SegMask m = downsample_mask(*batch.labeled[i]->mask, factor);
    rows.insert(rows.end(), f.values.begin(), f.values.end());
    labels.insert(labels.end(), m.labels().begin(), m.labels().end());
  }
  state.classifier.accumulate_ce(rows, labels);
  return bundle;
}

template <typename T>
LossBundle train_step(const Batch& batch, BasicTrainState<T>& state, const TrainConfig& config) {
  if (batch.step != state.step) throw std::logic_error("batch planned for a different step");
  const double lr = poly_lr(config.lr, state.step, config.t_max, config.lr_power);
  const LossBundle bundle = compute_gradients(batch, state, config);
  state.optimizer.step(state.student.params(), lr);
  state.classifier.sgd_step(lr * config.classifier_weight, config.momentum, config.weight_decay);
  ema_update_weights(state.student.params(), state.teacher.params(), config.mu_w);
  ++state.step;
  return bundle;
}

std::vector<SegMask> predict(UNet<float>& model, const Dataset& data,
                             const std::vector<std::string>& ids, int batch_size) {
  if (batch_size < 1) throw std::domain_error("batch size must be positive");
  std::vector<SegMask> out;
  const int classes = model.config().num_classes;
  for (std::size_t first = 0; first < ids.size(); first += static_cast<std::size_t>(batch_size)) {
    const std::size_t last = std::min(ids.size(), first + static_cast<std::size_t>(batch_size));
    std::vector<GrayImage> images;
    for (std::size_t k = first; k < last; ++k) images.push_back(normalize(data.get(ids[k]).image));
    const auto res = model.forward(images_tensor<float>(images), NormMode::Eval);
    for (std::size_t k = first; k < last; ++k) {
      const int img = static_cast<int>(k - first);
      std::vector<int32_t> labels(res.probs.plane());
      for (int y = 0; y < res.probs.h; ++y)
        for (int x = 0; x < res.probs.w; ++x) {
          int best = 0;
          for (int c = 1; c < classes; ++c)
            if (res.probs.at(c, img, y, x) > res.probs.at(best, img, y, x)) best = c;
          labels[static_cast<std::size_t>(y) * res.probs.w + x] = best;
        }
      out.emplace_back(res.probs.h, res.probs.w, classes, std::move(labels), Provenance::Pseudo);
    }
  }
  return out;
}

MetricReport evaluate(UNet<float>& model, const Dataset& data, const std::vector<std::string>& ids,
                      int batch_size) {
  if (ids.empty()) throw std::domain_error("evaluation split is empty");
  const auto preds = predict(model, data, ids, batch_size);
  std::vector<std::vector<ClassMetrics>> per_image;
  for (std::size_t k = 0; k < ids.size(); ++k) {
    const Sample& s = data.get(ids[k]);
    if (!s.mask) throw std::domain_error("evaluation sample " + ids[k] + " has no mask");
    per_image.push_back(image_metrics(preds[k], *s.mask));
  }
  return aggregate_metrics(per_image);
}

std::map<std::string, uint64_t> derived_seeds(const TrainConfig& config) {
  return {{"root", config.seed},
          {"init", derive_seed(config.seed, kInitStream)},
          {"split", config.resolved_split_seed()},
          {"labeled_order", derive_seed(config.seed, kLabeledStream)},
          {"unlabeled_order", derive_seed(config.seed, kUnlabeledStream)},
          {"augment", derive_seed(config.seed, kAugStream)}};
}

SplitManifest resolve_splits(const TrainConfig& config, const Dataset& data) {
  if (!config.split_file.empty()) return read_splits_csv(config.split_file);
  return make_splits(data.ids_with_kinds(), config.labeled_fraction, config.resolved_split_seed());
}

std::string losses_csv_header() {
  return "step,l_sup,l_con,l_u,l_aux,l_pc,l_c,l_total,lambda_c,lr";
}

std::string losses_csv_row(int64_t step, const LossBundle& b, double lr) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g",
                static_cast<long long>(step), b.l_sup, b.l_con, b.l_u, b.l_aux, b.l_pc, b.l_c,
                b.l_total, b.lambda_c, lr);
  return buf;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stddev_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

template BasicTrainState<float> init_state<float>(const TrainConfig&, int);
template BasicTrainState<double> init_state<double>(const TrainConfig&, int);
template Tensor<float> student_inputs<float>(const Batch&);
template Tensor<double> student_inputs<double>(const Batch&);
template StepTargets build_targets<float>(const Batch&, BasicTrainState<float>&, const TrainConfig&,
                                          const NetworkOutputs<float>&);
template StepTargets build_targets<double>(const Batch&, BasicTrainState<double>&,
                                           const TrainConfig&, const NetworkOutputs<double>&);
template LossBundle student_losses<float>(const Batch&, const NetworkOutputs<float>&,
                                          const StepTargets&, const TrainConfig&,
                                          const BasicTrainState<float>&, StudentGrads<float>*);
template LossBundle student_losses<double>(const Batch&, const NetworkOutputs<double>&,
                                           const StepTargets&, const TrainConfig&,
                                           const BasicTrainState<double>&, StudentGrads<double>*);
template LossBundle compute_gradients<float>(const Batch&, BasicTrainState<float>&, const TrainConfig&);
template LossBundle compute_gradients<double>(const Batch&, BasicTrainState<double>&,
                                              const TrainConfig&);
template LossBundle train_step<float>(const Batch&, BasicTrainState<float>&, const TrainConfig&);
template LossBundle train_step<double>(const Batch&, BasicTrainState<double>&, const TrainConfig&);

}  // namespace pccs
