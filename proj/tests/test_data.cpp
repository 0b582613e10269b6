#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "pccs/data.hpp"
#include "pccs/random.hpp"

using namespace pccs;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pccs_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::pair<std::string, std::string>> fake_ids(int n) {
  std::vector<std::pair<std::string, std::string>> ids;
  for (int i = 0; i < n; ++i) ids.emplace_back("id" + std::to_string(i), i % 3 ? "ellipse" : "star");
  return ids;
}

AugmentParams forced(int h, int w) {
  AugmentParams p;
  p.height = h;
  p.width = w;
  p.crop_h = h;
  p.crop_w = w;
  return p;
}

}  // namespace

TEST(Synthetic, DeterministicDirectories) {
  SyntheticOptions opt;
  opt.n = 10;
  opt.seed = 7;
  const auto a = scratch("gen_a"), b = scratch("gen_b");
  generate_synthetic(a, opt);
  generate_synthetic(b, opt);
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), a));
  EXPECT_EQ(files.size(), 2u * 10 + 2);
  for (const auto& f : files) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Synthetic, MaskConstraints) {
  for (ClassMode mode : {ClassMode::Binary, ClassMode::ThreeClass}) {
    SyntheticOptions opt;
    opt.classes = mode;
    opt.seed = 3;
    std::set<int32_t> seen;
    std::set<std::string> kinds;
    for (int i = 0; i < 60; ++i) {
      const Sample s = synthesize_sample(i, opt);
      ASSERT_TRUE(s.mask);
      int64_t fg = 0;
      for (int32_t v : s.mask->labels()) {
        seen.insert(v);
        fg += v > 0;
      }
      const double frac = static_cast<double>(fg) / static_cast<double>(s.mask->size());
      EXPECT_GE(frac, 0.02);
      EXPECT_LE(frac, 0.60);
      kinds.insert(s.kind);
    }
    const int c = class_count(mode);
    for (int32_t v : seen) EXPECT_LT(v, c);
    EXPECT_EQ(static_cast<int>(seen.size()), c);
    EXPECT_EQ(kinds, (std::set<std::string>{"ellipse", "star"}));
  }
}

TEST(Synthetic, RejectsZeroSamples) {
  SyntheticOptions opt;
  opt.n = 0;
  EXPECT_THROW(generate_synthetic(scratch("zero"), opt), std::domain_error);
}

TEST(DatasetIo, RoundTrip) {
  SyntheticOptions opt;
  opt.n = 6;
  opt.classes = ClassMode::ThreeClass;
  const auto dir = scratch("roundtrip");
  generate_synthetic(dir, opt);
  const Dataset ds = read_dataset(dir);
  ASSERT_EQ(ds.samples.size(), 6u);
  EXPECT_EQ(ds.num_classes, 3);
  for (int i = 0; i < 6; ++i) {
    const Sample s = synthesize_sample(i, opt);
    const Sample& r = ds.get(s.id);
    EXPECT_EQ(r.image, s.image);
    EXPECT_EQ(*r.mask, *s.mask);
    EXPECT_EQ(r.kind, s.kind);
  }
  fs::remove_all(dir);
}

TEST(DatasetIo, MissingDirectoryIsIoError) {
  EXPECT_THROW(read_dataset(scratch("missing")), IoError);
}

TEST(Splits, SevenOneTwo) {
  const auto m = make_splits(fake_ids(100), 0.1, 5);
  EXPECT_EQ(m.labeled.size(), 7u);
  EXPECT_EQ(m.unlabeled.size(), 63u);
  EXPECT_EQ(m.val.size(), 10u);
  EXPECT_EQ(m.test.size(), 20u);
  std::set<std::string> all;
  for (const auto* part : {&m.labeled, &m.unlabeled, &m.val, &m.test})
    for (const auto& id : *part) EXPECT_TRUE(all.insert(id).second);
  EXPECT_EQ(all.size(), 100u);
}

TEST(Splits, FullFractionAndDeterminism) {
  const auto m = make_splits(fake_ids(50), 1.0, 9);
  EXPECT_TRUE(m.unlabeled.empty());
  EXPECT_EQ(m, make_splits(fake_ids(50), 1.0, 9));
  EXPECT_NE(make_splits(fake_ids(50), 0.5, 9).labeled, make_splits(fake_ids(50), 0.5, 10).labeled);
}

TEST(Splits, Stratified) {
  const auto ids = fake_ids(300);
  const auto m = make_splits(ids, 0.1, 1);
  auto stars = [&](const std::vector<std::string>& part) {
    int n = 0;
    for (const auto& id : part) n += std::stoi(id.substr(2)) % 3 == 0;
    return static_cast<double>(n) / static_cast<double>(part.size());
  };
  for (const auto* part : {&m.labeled, &m.unlabeled, &m.val, &m.test}) {
    EXPECT_NEAR(stars(*part), 1.0 / 3.0, 0.06);
  }
}

TEST(Splits, EmptyLabeledSetIsError) {
  EXPECT_THROW(make_splits(fake_ids(3), 0.1, 1), std::domain_error);
  EXPECT_THROW(make_splits({}, 0.5, 1), std::domain_error);
}

TEST(Splits, CsvRoundTrip) {
  const auto m = make_splits(fake_ids(40), 0.25, 2);
  const auto dir = scratch("splits");
  fs::create_directories(dir);
  write_splits_csv(dir / "splits.csv", m);
  const auto r = read_splits_csv(dir / "splits.csv");
  EXPECT_EQ(r.labeled, m.labeled);
  EXPECT_EQ(r.unlabeled, m.unlabeled);
  EXPECT_EQ(r.val, m.val);
  EXPECT_EQ(r.test, m.test);
  fs::remove_all(dir);
}

TEST(Augment, SameSeedSameOutput) {
  const Sample s = synthesize_sample(0, SyntheticOptions{});
  for (uint64_t seed = 0; seed < 20; ++seed) {
    const auto a = augment(s, seed), b = augment(s, seed);
    EXPECT_EQ(a.image, b.image);
    EXPECT_EQ(*a.mask, *b.mask);
  }
}

TEST(Augment, DoubleFlipIsIdentity) {
  const Sample s = synthesize_sample(1, SyntheticOptions{});
  auto p = forced(64, 64);
  p.hflip = p.vflip = true;
  const auto once = apply_augment(s.image, &*s.mask, p);
  const auto twice = apply_augment(once.image, &*once.mask, p);
  EXPECT_EQ(twice.image, s.image);
  EXPECT_EQ(*twice.mask, *s.mask);
}

TEST(Augment, NoiseLeavesMaskUntouched) {
  const Sample s = synthesize_sample(2, SyntheticOptions{});
  auto p = forced(64, 64);
  p.noise = true;
  p.sigma = 0.1;
  p.noise_seed = 42;
  const auto a = apply_augment(s.image, &*s.mask, p);
  EXPECT_EQ(*a.mask, *s.mask);
  EXPECT_NE(a.image, s.image);
}

TEST(Augment, LabelsStayInRangeAndFlipsKeepLabelSet) {
  SyntheticOptions opt;
  opt.classes = ClassMode::ThreeClass;
  for (int i = 0; i < 20; ++i) {
    const Sample s = synthesize_sample(i, opt);
    std::set<int32_t> before(s.mask->labels().begin(), s.mask->labels().end());
    for (uint64_t seed = 0; seed < 10; ++seed) {
      const auto a = augment(s, derive_seed(i, seed));
      std::set<int32_t> after(a.mask->labels().begin(), a.mask->labels().end());
      for (int32_t v : after) {
        EXPECT_GE(v, 0);
        EXPECT_LT(v, 3);
      }
      if (!a.params.crop) {
        EXPECT_EQ(after, before);
      } else {
        EXPECT_TRUE(std::includes(before.begin(), before.end(), after.begin(), after.end()));
      }
    }
  }
}

TEST(Augment, ParameterRanges) {
  int flips = 0, crops = 0;
  for (uint64_t seed = 0; seed < 400; ++seed) {
    const auto p = sample_augment_params(64, 64, seed);
    flips += p.hflip;
    crops += p.crop;
    EXPECT_GE(p.sigma, 0.01);
    EXPECT_LE(p.sigma, 0.1);
    const double area = static_cast<double>(p.crop_h) * p.crop_w / (64.0 * 64.0);
    EXPECT_GE(area, 0.70);  // rounding of the side lengths
    EXPECT_LE(area, 1.0);
    EXPECT_LE(p.crop_y + p.crop_h, 64);
  }
  EXPECT_NEAR(flips / 400.0, 0.5, 0.1);
  EXPECT_NEAR(crops / 400.0, 0.5, 0.1);
}

TEST(Augment, InverseRestoresGeometry) {
  // a smooth two-channel field survives crop, flips and the inverse warp
  const int h = 32, w = 32;
  std::vector<double> field(static_cast<std::size_t>(h) * w * 2);
  GrayImage img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double a = 0.5 + 0.4 * std::sin(0.15 * y + 0.1 * x);
      img.at(y, x) = static_cast<float>(a);
      field[(y * w + x) * 2] = a;
      field[(y * w + x) * 2 + 1] = 1.0 - a;
    }
  for (uint64_t seed = 0; seed < 30; ++seed) {
    auto p = sample_augment_params(h, w, seed);
    p.noise = false;
    const auto aug = apply_augment(img, nullptr, p);
    std::vector<double> warped(field.size());
    for (std::size_t i = 0; i < aug.image.pixels.size(); ++i) {
      warped[i * 2] = aug.image.pixels[i];
      warped[i * 2 + 1] = 1.0 - aug.image.pixels[i];
    }
    std::vector<uint8_t> valid;
    const auto back = invert_augment(warped, 2, p, &valid);
    for (int y = 1; y < h - 1; ++y) {
      for (int x = 1; x < w - 1; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        if (!valid[i]) continue;
        EXPECT_NEAR(back[i * 2], field[i * 2], 0.03);
        EXPECT_NEAR(back[i * 2] + back[i * 2 + 1], 1.0, 1e-6);
      }
    }
    if (!p.crop) {
      EXPECT_EQ(std::count(valid.begin(), valid.end(), 0), 0);
    }
  }
}

TEST(Normalize, MomentsAndIdempotence) {
  const Sample s = synthesize_sample(4, SyntheticOptions{});
  const GrayImage n = normalize(s.image);
  double mean = 0.0, var = 0.0;
  for (float p : n.pixels) mean += p;
  mean /= n.pixels.size();
  for (float p : n.pixels) var += (p - mean) * (p - mean);
  var /= n.pixels.size();
  EXPECT_LT(std::abs(mean), 1e-3);
  EXPECT_LT(std::abs(std::sqrt(var) - 1.0), 1e-2);
  const GrayImage nn = normalize(n);
  for (std::size_t i = 0; i < n.pixels.size(); ++i) EXPECT_NEAR(nn.pixels[i], n.pixels[i], 1e-6);
  const GrayImage flat(4, 4, 0.3f);
  for (float p : normalize(flat).pixels) EXPECT_NEAR(p, 0.0f, 1e-7);
}

TEST(Png, RoundTrip) {
  const auto dir = scratch("png");
  fs::create_directories(dir);
  std::vector<uint8_t> px(7 * 5);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<uint8_t>(i * 7);
  write_png8(dir / "a.png", px, 7, 5);
  int h = 0, w = 0;
  EXPECT_EQ(read_png8(dir / "a.png", h, w), px);
  EXPECT_EQ(h, 7);
  EXPECT_EQ(w, 5);
  EXPECT_THROW(read_png8(dir / "nope.png", h, w), IoError);
  fs::remove_all(dir);
}
