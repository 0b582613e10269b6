#include "pccs/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace pccs {

namespace {

void check_pair(const SegMask& pred, const SegMask& gt, int cls) {
  if (pred.height() != gt.height() || pred.width() != gt.width()) {
    throw std::domain_error("prediction and ground truth differ in shape");
  }
  if (cls < 0 || cls >= std::max(pred.num_classes(), gt.num_classes())) {
    throw std::domain_error("class outside mask range");
  }
}

std::vector<uint8_t> class_boundary(const SegMask& m, int cls) {
  std::vector<uint8_t> inside(m.size());
  const auto l = m.labels();
  for (std::size_t i = 0; i < inside.size(); ++i) inside[i] = l[i] == cls;
  return boundary_pixels(inside, m.height(), m.width());
}

// Distances from every boundary pixel of `from` to the nearest one of `to`.
void directed(const std::vector<uint8_t>& from, const std::vector<uint8_t>& to, int h, int w,
              std::vector<double>& out) {
  const auto d2 = squared_distance_to_seeds(to, h, w);
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (from[i]) out.push_back(std::sqrt(static_cast<double>(d2[i])));
  }
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "NA";
  std::ostringstream s;
  s << std::setprecision(10) << *v;
  return s.str();
}

void accumulate(std::optional<double>& sum, int& n, const std::optional<double>& v) {
  if (!v) return;
  sum = sum.value_or(0.0) + *v;
  ++n;
}

}  // namespace

OverlapScores dice_jaccard(const SegMask& pred, const SegMask& gt, int cls) {
  check_pair(pred, gt, cls);
  const auto p = pred.labels();
  const auto g = gt.labels();
  int64_t a = 0, b = 0, both = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool in_a = p[i] == cls, in_b = g[i] == cls;
    a += in_a;
    b += in_b;
    both += in_a && in_b;
  }
  if (a == 0 && b == 0) return {1.0, 1.0};
  const double inter = static_cast<double>(both);
  return {2.0 * inter / static_cast<double>(a + b), inter / static_cast<double>(a + b - both)};
}

std::vector<double> pooled_surface_distances(const SegMask& pred, const SegMask& gt, int cls) {
  check_pair(pred, gt, cls);
  const auto bp = class_boundary(pred, cls);
  const auto bg = class_boundary(gt, cls);
  std::vector<double> d;
  const bool any_p = std::find(bp.begin(), bp.end(), 1) != bp.end();
  const bool any_g = std::find(bg.begin(), bg.end(), 1) != bg.end();
  if (!any_p || !any_g) return d;
  directed(bp, bg, pred.height(), pred.width(), d);
  directed(bg, bp, pred.height(), pred.width(), d);
  return d;
}

double percentile_inclusive(std::vector<double> values, double q) {
  if (values.empty()) throw std::domain_error("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

std::optional<SurfaceScores> surface_distances(const SegMask& pred, const SegMask& gt, int cls) {
  const auto d = pooled_surface_distances(pred, gt, cls);
  if (d.empty()) return std::nullopt;
  double sum = 0.0;
  for (double v : d) sum += v;
  return SurfaceScores{percentile_inclusive(d, 0.95), sum / static_cast<double>(d.size())};
}

std::vector<ClassMetrics> image_metrics(const SegMask& pred, const SegMask& gt) {
  std::vector<ClassMetrics> out;
  for (int c = 1; c < gt.num_classes(); ++c) {
    const auto o = dice_jaccard(pred, gt, c);
    ClassMetrics m;
    m.dice = o.dice;
    m.jaccard = o.jaccard;
    if (const auto s = surface_distances(pred, gt, c)) {
      m.hd95 = s->hd95;
      m.assd = s->assd;
    }
    out.push_back(m);
  }
  return out;
}

MetricReport aggregate_metrics(const std::vector<std::vector<ClassMetrics>>& per_image) {
  MetricReport report;
  if (per_image.empty()) return report;
  const std::size_t classes = per_image.front().size();
  for (std::size_t c = 0; c < classes; ++c) {
    MetricRow row;
    row.label = std::to_string(c + 1);
    int nd = 0, nj = 0, nh = 0, na = 0;
    for (const auto& img : per_image) {
      if (img.size() != classes) throw std::domain_error("images disagree on class count");
      accumulate(row.values.dice, nd, img[c].dice);
      accumulate(row.values.jaccard, nj, img[c].jaccard);
      accumulate(row.values.hd95, nh, img[c].hd95);
      accumulate(row.values.assd, na, img[c].assd);
    }
    if (nd) *row.values.dice /= nd;
    if (nj) *row.values.jaccard /= nj;
    if (nh) *row.values.hd95 /= nh;
    if (na) *row.values.assd /= na;
    row.images = nd;
    report.classes.push_back(row);
  }
  report.mean.label = "mean";
  int nd = 0, nj = 0, nh = 0, na = 0;
  for (const auto& row : report.classes) {
    accumulate(report.mean.values.dice, nd, row.values.dice);
    accumulate(report.mean.values.jaccard, nj, row.values.jaccard);
    accumulate(report.mean.values.hd95, nh, row.values.hd95);
    accumulate(report.mean.values.assd, na, row.values.assd);
  }
  if (nd) *report.mean.values.dice /= nd;
  if (nj) *report.mean.values.jaccard /= nj;
  if (nh) *report.mean.values.hd95 /= nh;
  if (na) *report.mean.values.assd /= na;
  report.mean.images = static_cast<int>(per_image.size());
  return report;
}

void write_metrics_csv(std::ostream& out, const MetricReport& report) {
  out << "class,dice,jaccard,hd95,assd,images\n";
  auto row = [&](const MetricRow& r) {
    out << r.label << ',' << fmt(r.values.dice) << ',' << fmt(r.values.jaccard) << ','
        << fmt(r.values.hd95) << ',' << fmt(r.values.assd) << ',' << r.images << '\n';
  };
  for (const auto& r : report.classes) row(r);
  row(report.mean);
}

std::string format_metrics_table(const MetricReport& report) {
  std::ostringstream s;
  auto cell = [](const std::optional<double>& v, int prec) {
    std::ostringstream c;
    if (v) c << std::fixed << std::setprecision(prec) << *v;
    else c << "NA";
    return c.str();
  };
  s << std::left << std::setw(8) << "class" << std::right << std::setw(10) << "Dice"
    << std::setw(10) << "Jaccard" << std::setw(10) << "95HD" << std::setw(10) << "ASSD" << '\n';
  auto row = [&](const MetricRow& r) {
    s << std::left << std::setw(8) << r.label << std::right << std::setw(10)
      << cell(r.values.dice, 4) << std::setw(10) << cell(r.values.jaccard, 4) << std::setw(10)
      << cell(r.values.hd95, 2) << std::setw(10) << cell(r.values.assd, 2) << '\n';
  };
  for (const auto& r : report.classes) row(r);
  row(report.mean);
  s << "surface metrics are per 2D image; NA = no boundary in prediction or reference\n";
  return s.str();
}

}  // namespace pccs
