#include "pccs/data.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <memory>
#include <numeric>
#include <sstream>

#include "pccs/random.hpp"

namespace pccs {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    out.push_back(cell);
  }
  return out;
}

uint8_t to_byte(float v) {
  return static_cast<uint8_t>(std::clamp(std::lround(v * 255.0f), 0L, 255L));
}

// --- synthetic shapes ------------------------------------------------------

struct Shape {
  bool star = false;
  double cy = 0, cx = 0;
  double rx = 0, ry = 0, angle = 0;                  // ellipse
  double r0 = 0, amp = 0, phase = 0, sharp = 3; int spikes = 0;  // star

  bool contains(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    if (!star) {
      const double u = (dx * std::cos(angle) + dy * std::sin(angle)) / rx;
      const double v = (-dx * std::sin(angle) + dy * std::cos(angle)) / ry;
      return u * u + v * v <= 1.0;
    }
    const double r = std::sqrt(dx * dx + dy * dy);
    const double t = std::atan2(dy, dx);
    const double bump = std::pow(0.5 + 0.5 * std::cos(spikes * t + phase), sharp);
    return r <= r0 * (1.0 - amp + 2.0 * amp * bump);
  }

  Shape scaled(double s, double oy, double ox) const {
    Shape out = *this;
    out.cy += oy;
    out.cx += ox;
    out.rx *= s;
    out.ry *= s;
    out.r0 *= s;
    return out;
  }
};

Shape random_shape(Rng& rng, bool star, int size) {
  Shape s;
  s.star = star;
  const double margin = 0.18 * size;
  s.cy = rng.uniform(margin, size - margin);
  s.cx = rng.uniform(margin, size - margin);
  if (star) {
    s.r0 = rng.uniform(0.16, 0.32) * size;
    s.spikes = 5 + static_cast<int>(rng.below(5));
    s.amp = rng.uniform(0.25, 0.45);
    s.phase = rng.uniform(0.0, 2.0 * kPi);
    s.sharp = rng.uniform(2.0, 5.0);
  } else {
    s.rx = rng.uniform(0.10, 0.30) * size;
    s.ry = rng.uniform(0.10, 0.30) * size;
    s.angle = rng.uniform(0.0, kPi);
  }
  return s;
}

struct Grating {
  double amp, fy, fx, phase;
};

std::vector<Grating> random_texture(Rng& rng, int count, double amp_lo, double amp_hi, double f_lo,
                                    double f_hi) {
  std::vector<Grating> g;
  for (int k = 0; k < count; ++k) {
    const double f = rng.uniform(f_lo, f_hi), th = rng.uniform(0.0, kPi);
    g.push_back({rng.uniform(amp_lo, amp_hi), f * std::sin(th), f * std::cos(th),
                 rng.uniform(0.0, 2.0 * kPi)});
  }
  return g;
}

double texture_at(const std::vector<Grating>& g, double y, double x) {
  double v = 0.0;
  for (const auto& t : g) v += t.amp * std::sin(t.fy * y + t.fx * x + t.phase);
  return v;
}

// Fraction of a pixel covered by the shape, 4x4 supersampled.
double coverage(const Shape& s, int y, int x) {
  int hit = 0;
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) hit += s.contains(y + (a + 0.5) / 4.0 - 0.5, x + (b + 0.5) / 4.0 - 0.5);
  return hit / 16.0;
}

// --- augmentation geometry ------------------------------------------------

// Source coordinate in the original frame for augmented-frame index u.
double crop_source(int u, int out_len, int start, int len) {
  return start + (u + 0.5) * static_cast<double>(len) / out_len - 0.5;
}

double bilinear(const std::vector<double>& src, int h, int w, int channels, int ch, double y,
                double x, double y_lo, double y_hi, double x_lo, double x_hi) {
  y = std::clamp(y, y_lo, y_hi);
  x = std::clamp(x, x_lo, x_hi);
  const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double fy = y - y0, fx = x - x0;
  auto at = [&](int yy, int xx) {
    return src[(static_cast<std::size_t>(yy) * w + xx) * channels + ch];
  };
  return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) +
         fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
}

}  // namespace

ClassMode parse_class_mode(const std::string& s) {
  if (s == "binary") return ClassMode::Binary;
  if (s == "three-class" || s == "three_class" || s == "three") return ClassMode::ThreeClass;
  throw std::invalid_argument("unknown class mode '" + s + "' (binary | three-class)");
}

std::string to_string(ClassMode m) { return m == ClassMode::Binary ? "binary" : "three-class"; }
int class_count(ClassMode m) { return m == ClassMode::Binary ? 2 : 3; }

std::vector<uint8_t> read_png8(const fs::path& path, int& height, int& width) {
  std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialisation failed");
  }
  std::vector<uint8_t> pixels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("malformed PNG " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
  }
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
      color == PNG_COLOR_TYPE_PALETTE) {
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  }
  png_read_update_info(png, info);
  height = static_cast<int>(png_get_image_height(png, info));
  width = static_cast<int>(png_get_image_width(png, info));
  if (png_get_rowbytes(png, info) != static_cast<png_size_t>(width)) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("unsupported PNG layout in " + path.string());
  }
  pixels.resize(static_cast<std::size_t>(height) * width);
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) rows[y] = pixels.data() + static_cast<std::size_t>(y) * width;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return pixels;
}

namespace {

void write_png(const fs::path& path, std::span<const uint8_t> pixels, int height, int width,
               int channels) {
  if (pixels.size() != static_cast<std::size_t>(height) * width * channels) {
    throw std::domain_error("PNG pixel count does not match its size");
  }
  std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(pixels.data() +
                                             static_cast<std::size_t>(y) * width * channels));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png8(const fs::path& path, std::span<const uint8_t> pixels, int height, int width) {
  write_png(path, pixels, height, width, 1);
}

void write_png_rgb8(const fs::path& path, std::span<const uint8_t> pixels, int height, int width) {
  write_png(path, pixels, height, width, 3);
}

Sample synthesize_sample(int index, const SyntheticOptions& options) {
  const int size = options.size;
  Rng rng(derive_seed(options.seed, 0x5A17, static_cast<uint64_t>(index)));
  Sample s;
  std::ostringstream id;
  id << "s" << std::setw(5) << std::setfill('0') << index;
  s.id = id.str();
  const bool star = rng.bernoulli(0.5);
  s.kind = star ? "star" : "ellipse";

  // shapes first, re-drawn until the foreground fraction is in range
  Shape outer, inner;
  bool nested = options.classes == ClassMode::ThreeClass;
  std::vector<int32_t> labels(static_cast<std::size_t>(size) * size);
  for (int attempt = 0;; ++attempt) {
    outer = random_shape(rng, star, size);
    if (nested) {
      const bool inner_star = rng.bernoulli(0.5);
      inner = random_shape(rng, inner_star, size);
      const double k = rng.uniform(0.40, 0.55);
      const double base = star ? outer.r0 : std::min(outer.rx, outer.ry);
      const double inner_base = inner_star ? inner.r0 : std::max(inner.rx, inner.ry);
      inner = inner.scaled(k * base / inner_base, outer.cy - inner.cy, outer.cx - inner.cx);
      inner = inner.scaled(1.0, rng.uniform(-0.2, 0.2) * base, rng.uniform(-0.2, 0.2) * base);
    }
    int64_t fg = 0;
    bool has_inner = !nested;
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        int32_t v = outer.contains(y, x) ? 1 : 0;
        if (nested && v == 1 && inner.contains(y, x)) v = 2;
        labels[static_cast<std::size_t>(y) * size + x] = v;
        fg += v > 0;
        has_inner = has_inner || v == 2;
      }
    }
    const double frac = static_cast<double>(fg) / (static_cast<double>(size) * size);
    if (frac >= 0.02 && frac <= 0.60 && has_inner) break;
    if (attempt > 1000) throw std::runtime_error("synthetic generator could not place a shape");
  }

  const double base = rng.uniform(0.30, 0.55);
  const auto bg_tex = random_texture(rng, 3, 0.02, 0.06, 0.08, 0.45);
  const auto fg_tex = random_texture(rng, 2, 0.02, 0.05, 0.3, 0.9);
  const double contrast = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.10, 0.22);
  const double inner_contrast = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.08, 0.16);
  const double shade_y = rng.uniform(-0.1, 0.1), shade_x = rng.uniform(-0.1, 0.1);
  const double noise = rng.uniform(0.03, 0.08);
  // unlabeled distractor blobs of weaker contrast
  std::vector<std::pair<Shape, double>> distractors;
  const int nd = static_cast<int>(rng.below(3));
  for (int k = 0; k < nd; ++k) {
    Shape d = random_shape(rng, false, size).scaled(rng.uniform(0.3, 0.6), 0.0, 0.0);
    distractors.emplace_back(d, (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.04, 0.10));
  }

  s.image = GrayImage(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double v = base + texture_at(bg_tex, y, x) + shade_y * (y - size / 2.0) / size +
                 shade_x * (x - size / 2.0) / size;
      for (const auto& [d, c] : distractors) v += c * coverage(d, y, x);
      const double cov = coverage(outer, y, x);
      v += cov * (contrast + texture_at(fg_tex, y, x));
      if (nested) v += coverage(inner, y, x) * inner_contrast;
      v += noise * rng.normal();
      s.image.at(y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  for (float& p : s.image.pixels) p = static_cast<float>(to_byte(p)) / 255.0f;
  s.mask = SegMask(size, size, class_count(options.classes), labels);
  return s;
}

void write_dataset_sample(const fs::path& root, const Sample& sample) {
  std::vector<uint8_t> img(sample.image.pixels.size());
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = to_byte(sample.image.pixels[i]);
  write_png8(root / "images" / (sample.id + ".png"), img, sample.image.height, sample.image.width);
  if (sample.mask) {
    const auto l = sample.mask->labels();
    std::vector<uint8_t> m(l.begin(), l.end());
    write_png8(root / "masks" / (sample.id + ".png"), m, sample.mask->height(), sample.mask->width());
  }
}

DatasetSummary generate_synthetic(const fs::path& out, const SyntheticOptions& options) {
  if (options.n < 1) throw std::domain_error("need at least one sample");
  if (options.size < 16 || options.size % 16 != 0) {
    throw std::domain_error("image size must be a positive multiple of 16");
  }
  std::error_code ec;
  fs::create_directories(out / "images", ec);
  fs::create_directories(out / "masks", ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());

  DatasetSummary summary;
  summary.num_classes = class_count(options.classes);
  std::ofstream meta(out / "meta.csv");
  if (!meta) throw IoError("cannot write " + (out / "meta.csv").string());
  meta << "id,shape,classes\n";
  std::vector<std::pair<std::string, std::string>> ids;
  for (int i = 0; i < options.n; ++i) {
    const Sample s = synthesize_sample(i, options);
    write_dataset_sample(out, s);
    meta << s.id << ',' << s.kind << ',' << summary.num_classes << '\n';
    ids.emplace_back(s.id, s.kind);
    ++summary.samples;
    ++summary.kinds[s.kind];
    for (int32_t v : s.mask->labels()) ++summary.class_pixels[v];
  }
  meta.close();
  if (!meta) throw IoError("failed writing meta.csv");
  try {
    write_splits_csv(out / "splits.csv", make_splits(ids, options.labeled_fraction, options.seed));
  } catch (const std::domain_error&) {
    // too few samples for a labeled set at this fraction; splits are made at train time
  }
  return summary;
}

const Sample& Dataset::get(const std::string& id) const {
  const auto it = index.find(id);
  if (it == index.end()) throw std::out_of_range("no sample with id " + id);
  return samples[it->second];
}

std::vector<std::pair<std::string, std::string>> Dataset::ids_with_kinds() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& s : samples) out.emplace_back(s.id, s.kind);
  return out;
}

Dataset read_dataset(const fs::path& root) {
  Dataset ds;
  ds.root = root;
  std::ifstream meta(root / "meta.csv");
  if (!meta) throw IoError("missing " + (root / "meta.csv").string());
  std::string line;
  std::getline(meta, line);
  const auto header = split_csv_line(line);
  if (header.size() < 2 || header[0] != "id") throw IoError("meta.csv has no id column");
  while (std::getline(meta, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    Sample s;
    s.id = cells.at(0);
    s.kind = cells.size() > 1 ? cells[1] : "";
    const int classes = cells.size() > 2 ? std::stoi(cells[2]) : 2;
    if (ds.num_classes == 0) ds.num_classes = classes;
    if (classes != ds.num_classes) throw IoError("meta.csv mixes class counts");
    int h = 0, w = 0;
    const auto img = read_png8(root / "images" / (s.id + ".png"), h, w);
    s.image = GrayImage(h, w);
    for (std::size_t i = 0; i < img.size(); ++i) s.image.pixels[i] = img[i] / 255.0f;
    const fs::path mask_path = root / "masks" / (s.id + ".png");
    if (fs::exists(mask_path)) {
      int mh = 0, mw = 0;
      const auto m = read_png8(mask_path, mh, mw);
      if (mh != h || mw != w) throw IoError("mask and image sizes differ for " + s.id);
      s.mask = SegMask(h, w, ds.num_classes, std::vector<int32_t>(m.begin(), m.end()));
    }
    ds.index[s.id] = ds.samples.size();
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.empty()) throw IoError("dataset at " + root.string() + " is empty");
  return ds;
}

SplitManifest make_splits(const std::vector<std::pair<std::string, std::string>>& ids_with_kinds,
                          double labeled_fraction, uint64_t seed) {
  if (ids_with_kinds.empty()) throw std::domain_error("cannot split an empty dataset");
  if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0)) {
    throw std::domain_error("labeled fraction must be in (0, 1]");
  }
  // group by kind, shuffle each group, then interleave proportionally so
  // every contiguous cut sees the kinds in their overall ratio
  std::map<std::string, std::vector<std::string>> groups;
  for (const auto& [id, kind] : ids_with_kinds) groups[kind].push_back(id);
  Rng rng(derive_seed(seed, 0x5B11));
  struct Slot {
    double key;
    int group;
    std::string id;
  };
  std::vector<Slot> order;
  int g = 0;
  for (auto& [kind, ids] : groups) {
    std::sort(ids.begin(), ids.end());
    rng.shuffle(ids.begin(), ids.end());
    for (std::size_t r = 0; r < ids.size(); ++r) {
      order.push_back({(r + 0.5) / static_cast<double>(ids.size()), g, ids[r]});
    }
    ++g;
  }
  std::sort(order.begin(), order.end(), [](const Slot& a, const Slot& b) {
    return a.key != b.key ? a.key < b.key : a.group < b.group;
  });

  const auto n = static_cast<long>(order.size());
  const long n_train = std::lround(0.7 * static_cast<double>(n));
  const long n_val = std::min(n - n_train, std::lround(0.1 * static_cast<double>(n)));
  const long n_labeled = std::lround(labeled_fraction * static_cast<double>(n_train));
  if (n_labeled < 1) {
    throw std::domain_error("labeled set would be empty (" + std::to_string(n_train) +
                            " training samples at fraction " + std::to_string(labeled_fraction) + ")");
  }
  SplitManifest m;
  m.labeled_fraction = labeled_fraction;
  m.seed = seed;
  for (long i = 0; i < n; ++i) {
    const std::string& id = order[static_cast<std::size_t>(i)].id;
    if (i < n_labeled) m.labeled.push_back(id);
    else if (i < n_train) m.unlabeled.push_back(id);
    else if (i < n_train + n_val) m.val.push_back(id);
    else m.test.push_back(id);
  }
  return m;
}

void write_splits_csv(const fs::path& path, const SplitManifest& splits) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "id,role\n";
  for (const auto& id : splits.labeled) out << id << ",labeled\n";
  for (const auto& id : splits.unlabeled) out << id << ",unlabeled\n";
  for (const auto& id : splits.val) out << id << ",val\n";
  for (const auto& id : splits.test) out << id << ",test\n";
  if (!out) throw IoError("failed writing " + path.string());
}

SplitManifest read_splits_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  SplitManifest m;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() < 2) throw IoError("bad splits.csv line: " + line);
    const std::string& role = cells[1];
    if (role == "labeled") m.labeled.push_back(cells[0]);
    else if (role == "unlabeled") m.unlabeled.push_back(cells[0]);
    else if (role == "val") m.val.push_back(cells[0]);
    else if (role == "test") m.test.push_back(cells[0]);
    else throw IoError("unknown split role '" + role + "'");
  }
  const double train = static_cast<double>(m.labeled.size() + m.unlabeled.size());
  m.labeled_fraction = train > 0 ? static_cast<double>(m.labeled.size()) / train : 0.0;
  return m;
}

AugmentParams sample_augment_params(int height, int width, uint64_t seed) {
  Rng rng(seed);
  AugmentParams p;
  p.height = height;
  p.width = width;
  p.hflip = rng.bernoulli(0.5);
  p.vflip = rng.bernoulli(0.5);
  p.crop = rng.bernoulli(0.5);
  const double area = rng.uniform(0.75, 1.0);
  p.crop_h = std::clamp(static_cast<int>(std::lround(height * std::sqrt(area))), 1, height);
  p.crop_w = std::clamp(static_cast<int>(std::lround(width * std::sqrt(area))), 1, width);
  p.crop_y = static_cast<int>(rng.below(static_cast<uint64_t>(height - p.crop_h + 1)));
  p.crop_x = static_cast<int>(rng.below(static_cast<uint64_t>(width - p.crop_w + 1)));
  if (!p.crop) {
    p.crop_y = p.crop_x = 0;
    p.crop_h = height;
    p.crop_w = width;
  }
  p.noise = rng.bernoulli(0.5);
  p.sigma = rng.uniform(0.01, 0.1);
  p.noise_seed = rng.next();
  return p;
}

Augmented apply_augment(const GrayImage& image, const SegMask* mask, const AugmentParams& params) {
  const int h = image.height, w = image.width;
  if (params.height != h || params.width != w) throw std::domain_error("augment size mismatch");
  if (mask && (mask->height() != h || mask->width() != w)) {
    throw std::domain_error("mask and image sizes differ");
  }
  Augmented out;
  out.params = params;
  out.image = GrayImage(h, w);
  std::vector<int32_t> labels;
  if (mask) labels.resize(mask->size());
  const std::vector<double> src(image.pixels.begin(), image.pixels.end());
  for (int u = 0; u < h; ++u) {
    for (int v = 0; v < w; ++v) {
      // flips act on the cropped-and-resized frame
      const int cu = params.vflip ? h - 1 - u : u;
      const int cv = params.hflip ? w - 1 - v : v;
      double value;
      int32_t label = 0;
      if (params.crop) {
        const double sy = crop_source(cu, h, params.crop_y, params.crop_h);
        const double sx = crop_source(cv, w, params.crop_x, params.crop_w);
        value = bilinear(src, h, w, 1, 0, sy, sx, params.crop_y, params.crop_y + params.crop_h - 1,
                         params.crop_x, params.crop_x + params.crop_w - 1);
        if (mask) {
          const int ny = params.crop_y + ((2 * cu + 1) * params.crop_h) / (2 * h);
          const int nx = params.crop_x + ((2 * cv + 1) * params.crop_w) / (2 * w);
          label = mask->at(std::min(ny, params.crop_y + params.crop_h - 1),
                           std::min(nx, params.crop_x + params.crop_w - 1));
        }
      } else {
        value = src[static_cast<std::size_t>(cu) * w + cv];
        if (mask) label = mask->at(cu, cv);
      }
      out.image.at(u, v) = static_cast<float>(value);
      if (mask) labels[static_cast<std::size_t>(u) * w + v] = label;
    }
  }
  if (params.noise) {
    Rng rng(params.noise_seed);
    for (float& p : out.image.pixels) p += static_cast<float>(params.sigma * rng.normal());
  }
  if (mask) out.mask = SegMask(h, w, mask->num_classes(), labels, mask->provenance());
  return out;
}

Augmented augment(const Sample& sample, uint64_t seed) {
  const auto params = sample_augment_params(sample.image.height, sample.image.width, seed);
  return apply_augment(sample.image, sample.mask ? &*sample.mask : nullptr, params);
}

std::vector<double> invert_augment(std::span<const double> values, int channels,
                                   const AugmentParams& params, std::vector<uint8_t>* valid) {
  const int h = params.height, w = params.width;
  const std::size_t n = static_cast<std::size_t>(h) * w;
  if (values.size() != n * static_cast<std::size_t>(channels)) {
    throw std::domain_error("inverse warp input size mismatch");
  }
  // undo the flips first
  std::vector<double> unflipped(values.size());
  for (int u = 0; u < h; ++u) {
    for (int v = 0; v < w; ++v) {
      const int su = params.vflip ? h - 1 - u : u;
      const int sv = params.hflip ? w - 1 - v : v;
      for (int c = 0; c < channels; ++c) {
        unflipped[(static_cast<std::size_t>(u) * w + v) * channels + c] =
            values[(static_cast<std::size_t>(su) * w + sv) * channels + c];
      }
    }
  }
  if (valid) valid->assign(n, 1);
  if (!params.crop) return unflipped;

  std::vector<double> out(values.size(), 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const bool inside = y >= params.crop_y && y < params.crop_y + params.crop_h &&
                          x >= params.crop_x && x < params.crop_x + params.crop_w;
      if (!inside) {
        if (valid) (*valid)[i] = 0;
        continue;
      }
      const double u = (y - params.crop_y + 0.5) * h / static_cast<double>(params.crop_h) - 0.5;
      const double v = (x - params.crop_x + 0.5) * w / static_cast<double>(params.crop_w) - 0.5;
      for (int c = 0; c < channels; ++c) {
        out[i * channels + c] = bilinear(unflipped, h, w, channels, c, u, v, 0, h - 1, 0, w - 1);
      }
    }
  }
  return out;
}

GrayImage normalize(const GrayImage& image) {
  GrayImage out = image;
  const std::size_t n = image.pixels.size();
  if (n == 0) return out;
  double mean = 0.0;
  for (float p : image.pixels) mean += p;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (float p : image.pixels) var += (p - mean) * (p - mean);
  var /= static_cast<double>(n);
  const double sd = std::sqrt(var);
  const double scale = sd > 1e-8 ? 1.0 / sd : 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    out.pixels[i] = static_cast<float>((image.pixels[i] - mean) * scale);
  }
  return out;
}

}  // namespace pccs
