// pccs: gen-data | train | eval | report | ablate
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "pccs/config.hpp"
#include "pccs/data.hpp"
#include "pccs/log.hpp"
#include "pccs/trainer.hpp"
#include "plot.hpp"

#ifndef PCCS_REVISION
#define PCCS_REVISION "unknown"
#endif

using namespace pccs;
using json = nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kRuntime = 1;
constexpr int kUsage = 2;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

void write_manifest(const fs::path& dir, const std::string& command, const std::string& config_path,
                    const TrainConfig& config, const std::string& started) {
  json m;
  m["command"] = command;
  m["config_path"] = config_path;
  m["config_hash"] = hash_hex(config_hash(config));
  m["revision"] = PCCS_REVISION;
  m["started"] = started;
  m["finished"] = utc_now();
  m["output_dir"] = fs::absolute(dir).string();
  json seeds;
  for (const auto& [k, v] : derived_seeds(config)) seeds[k] = v;
  m["seeds"] = seeds;
  m["config"] = json::parse(config_to_json(config));
  std::ofstream out(dir / "manifest.json");
  out << m.dump(2) << "\n";
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
}

struct ConfigFlags {
  std::string config_path;
  std::vector<std::string> sets;
  std::vector<std::string> toggles;

  void add(CLI::App* app) {
    app->add_option("--config", config_path, "config file (key = value lines or JSON)")
        ->check(CLI::ExistingFile);
    app->add_option("--set", sets, "override a config key, key=value (repeatable)");
    app->add_option("--toggle", toggles, "loss toggle, e.g. l_pc=off or all_unsup=off (repeatable)");
  }

  TrainConfig resolve() const {
    TrainConfig c = config_path.empty() ? TrainConfig{} : load_config(config_path);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      set_config_value(c, s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& t : toggles) apply_toggle(c, t);
    c.validate();
    return c;
  }
};

void print_summary(const DatasetSummary& s) {
  std::cout << "samples: " << s.samples << "\nclasses: " << s.num_classes << "\nshapes:";
  for (const auto& [k, n] : s.kinds) std::cout << " " << k << "=" << n;
  int64_t total = 0;
  for (const auto& [c, n] : s.class_pixels) total += n;
  std::cout << "\nclass pixels:\n";
  for (const auto& [c, n] : s.class_pixels) {
    std::cout << "  " << c << ": " << n << " (" << std::fixed << std::setprecision(2)
              << 100.0 * static_cast<double>(n) / static_cast<double>(std::max<int64_t>(total, 1))
              << "%)\n";
  }
}

// ---- report helpers ----

struct LossLog {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  std::vector<double> column(const std::string& name) const {
    const auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) return {};
    const auto k = static_cast<std::size_t>(it - columns.begin());
    std::vector<double> v;
    for (const auto& r : rows) v.push_back(r[k]);
    return v;
  }
};

LossLog read_loss_log(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  LossLog log;
  std::string line, cell;
  std::getline(in, line);
  std::stringstream header(line);
  while (std::getline(header, cell, ',')) log.columns.push_back(cell);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    log.rows.push_back(std::move(row));
  }
  return log;
}

// Averages consecutive rows so long runs stay readable.
std::pair<std::vector<double>, std::vector<double>> smooth(const std::vector<double>& x,
                                                           const std::vector<double>& y,
                                                           std::size_t points) {
  if (x.size() <= points) return {x, y};
  const std::size_t win = (x.size() + points - 1) / points;
  std::vector<double> sx, sy;
  for (std::size_t i = 0; i < x.size(); i += win) {
    const std::size_t end = std::min(x.size(), i + win);
    double mx = 0.0, my = 0.0;
    for (std::size_t k = i; k < end; ++k) {
      mx += x[k];
      my += y[k];
    }
    sx.push_back(mx / static_cast<double>(end - i));
    sy.push_back(my / static_cast<double>(end - i));
  }
  return {sx, sy};
}

struct RunInfo {
  fs::path dir;
  std::string name;
  TrainConfig config;
  std::map<std::string, std::string> test_mean;  // metric -> value text
};

std::map<std::string, std::string> read_test_mean(const fs::path& path) {
  std::map<std::string, std::string> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  std::getline(in, line);
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) header.push_back(c);
  }
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::vector<std::string> cells;
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    if (cells.size() == header.size() && cells[0] == "test" && cells[1] == "mean") {
      for (std::size_t k = 2; k < cells.size(); ++k) out[header[k]] = cells[k];
    }
  }
  return out;
}

double to_number(const std::string& s) {
  if (s.empty() || s == "NA") return NAN;
  return std::stod(s);
}

int cmd_report(const std::vector<std::string>& inputs, const fs::path& out) {
  std::vector<RunInfo> runs;
  std::vector<fs::path> ablations;
  for (const auto& in : inputs) {
    const fs::path p(in);
    if (fs::exists(p / "ablation.csv")) ablations.push_back(p);
    if (fs::exists(p / "losses.csv")) {
      RunInfo r;
      r.dir = p;
      r.name = p.filename().empty() ? p.parent_path().filename().string() : p.filename().string();
      r.config = fs::exists(p / "config.json")
                     ? config_from_json([&] {
                         std::ifstream f(p / "config.json");
                         std::stringstream ss;
                         ss << f.rdbuf();
                         return ss.str();
                       }())
                     : TrainConfig{};
      r.test_mean = read_test_mean(p / "final_metrics.csv");
      runs.push_back(std::move(r));
    }
  }
  if (runs.empty() && ablations.empty()) {
    std::cerr << "report: no run directories found\n";
    return kRuntime;
  }
  fs::create_directories(out / "plots");

  for (std::size_t k = 0; k < runs.size(); ++k) {
    const auto& r = runs[k];
    const LossLog log = read_loss_log(r.dir / "losses.csv");
    const auto step = log.column("step");
    plot::Chart chart;
    chart.title = "losses: " + r.name;
    chart.x_label = "step";
    chart.y_label = "loss";
    chart.log_y = true;
    std::size_t color = 0;
    for (const std::string name : {"l_total", "l_sup", "l_con", "l_u", "l_aux", "l_pc"}) {
      const auto y = log.column(name);
      if (y.empty() || std::all_of(y.begin(), y.end(), [](double v) { return v == 0.0; })) continue;
      auto [sx, sy] = smooth(step, y, 300);
      chart.series.push_back({name, sx, sy, {}, plot::palette(color++), false});
    }
    plot::render_png(chart, out / "plots" / (r.name + "_losses.png"));
    std::cout << "wrote " << (out / "plots" / (r.name + "_losses.png")).string() << "\n";

    if (k == 0) {
      plot::Chart lc;
      lc.title = "lambda_c schedule";
      lc.x_label = "step";
      lc.y_label = "lambda_c";
      std::vector<double> xs, ys;
      const double ramp = r.config.t_ramp;
      const int64_t end = std::max<int64_t>(static_cast<int64_t>(ramp * 1.2), r.config.t_max);
      for (int i = 0; i <= 200; ++i) {
        const double t = static_cast<double>(end) * i / 200.0;
        xs.push_back(t);
        ys.push_back(lambda_c_schedule(t, ramp));
      }
      lc.series.push_back({"schedule", xs, ys, {}, plot::palette(0), false});
      const auto logged = log.column("lambda_c");
      if (!logged.empty()) {
        auto [sx, sy] = smooth(step, logged, 300);
        lc.series.push_back({"logged", sx, sy, {}, plot::palette(1), false});
      }
      plot::render_png(lc, out / "plots" / "lambda_c.png");
    }
  }

  if (runs.size() >= 2) {
    std::ofstream csv(out / "comparison.csv");
    csv << "metric";
    for (const auto& r : runs) csv << "," << r.name;
    csv << "\nlabeled_fraction";
    for (const auto& r : runs) csv << "," << r.config.labeled_fraction;
    for (const std::string m : {"dice", "jaccard", "hd95", "assd"}) {
      csv << "\n" << m;
      for (const auto& r : runs) csv << "," << (r.test_mean.count(m) ? r.test_mean.at(m) : "NA");
    }
    csv << "\n";
    std::cout << "wrote " << (out / "comparison.csv").string() << "\n";

    std::map<double, std::vector<double>> by_fraction;
    for (const auto& r : runs) {
      const double d = r.test_mean.count("dice") ? to_number(r.test_mean.at("dice")) : NAN;
      if (std::isfinite(d)) by_fraction[r.config.labeled_fraction].push_back(100.0 * d);
    }
    std::ofstream ft(out / "fraction_dice.csv");
    ft << "labeled_fraction,runs,dice_mean,dice_std\n";
    plot::Series s{"test dice", {}, {}, {}, plot::palette(0), true};
    for (const auto& [f, v] : by_fraction) {
      ft << f << "," << v.size() << "," << mean_of(v) << "," << stddev_of(v) << "\n";
      s.x.push_back(100.0 * f);
      s.y.push_back(mean_of(v));
      s.err.push_back(stddev_of(v));
    }
    if (by_fraction.size() >= 2) {
      plot::Chart fc;
      fc.title = "labeled fraction vs dice";
      fc.x_label = "labeled %";
      fc.y_label = "dice (%)";
      fc.series.push_back(s);
      plot::render_png(fc, out / "plots" / "fraction_dice.png");
    }
  }

  for (const auto& a : ablations) {
    std::ifstream in(a / "ablation.csv");
    std::string line;
    std::getline(in, line);
    std::ostringstream table;
    table << "| l_con | l_u | l_aux | l_pc | labeled | Dice (%) | Jaccard (%) |\n"
          << "|---|---|---|---|---|---|---|\n";
    int rows = 0;
    while (std::getline(in, line)) {
      std::stringstream ss(line);
      std::vector<std::string> c;
      std::string cell;
      while (std::getline(ss, cell, ',')) c.push_back(cell);
      if (c.size() < 11) continue;
      auto mark = [](const std::string& v) { return v == "1" ? "x" : " "; };
      char buf[256];
      std::snprintf(buf, sizeof buf, "| %s | %s | %s | %s | %s%% | %.2f +- %.2f | %.2f +- %.2f |\n",
                    mark(c[1]), mark(c[2]), mark(c[3]), mark(c[4]),
                    (std::ostringstream() << 100.0 * std::stod(c[5])).str().c_str(),
                    100.0 * std::stod(c[7]), 100.0 * std::stod(c[8]), 100.0 * std::stod(c[9]),
                    100.0 * std::stod(c[10]));
      table << buf;
      ++rows;
    }
    const fs::path dst = out / (a.filename().string() + "_summary.md");
    std::ofstream(dst) << table.str();
    std::cout << table.str() << "(" << rows << " rows) wrote " << dst.string() << "\n";
  }
  return kOk;
}

std::vector<uint64_t> parse_seed_list(const std::string& s) {
  std::vector<uint64_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(std::stoull(tok));
    } catch (const std::exception&) {
      throw UsageError("bad seed '" + tok + "'");
    }
  }
  if (out.empty()) throw UsageError("empty seed list");
  return out;
}

std::vector<double> parse_fraction_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw UsageError("bad fraction '" + tok + "'");
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PCCS semi-supervised segmentation: data, training, evaluation, reports"};
  app.require_subcommand(1);
  app.fallthrough();
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "log progress to stderr");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic segmentation dataset");
  std::string gen_out, gen_classes = "binary";
  int gen_n = 200, gen_size = 64;
  uint64_t gen_seed = 7;
  double gen_fraction = 0.1;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--n", gen_n, "number of samples");
  gen->add_option("--classes", gen_classes, "binary or three");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--size", gen_size, "image side length (multiple of 16)");
  gen->add_option("--labeled-fraction", gen_fraction, "labeled fraction for splits.csv");

  // train
  auto* train = app.add_subcommand("train", "warm-up then joint semi-supervised training");
  ConfigFlags train_cfg;
  train_cfg.add(train);
  std::string train_data, train_out;
  bool train_resume = false;
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--out", train_out, "run directory")->required();
  train->add_flag("--resume", train_resume, "continue from <out>/checkpoint");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  std::string eval_ckpt, eval_data, eval_split = "test", eval_out, eval_splits;
  int eval_batch = 16;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint directory")->required();
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_option("--split", eval_split, "val or test");
  eval->add_option("--splits", eval_splits, "splits.csv (default: next to the checkpoint)");
  eval->add_option("--out", eval_out, "metrics CSV path");
  eval->add_option("--batch", eval_batch, "inference batch size");

  // report
  auto* report = app.add_subcommand("report", "plots and tables from run directories");
  std::vector<std::string> report_runs;
  std::string report_out;
  report->add_option("runs", report_runs, "run or ablation directories")->required();
  report->add_option("--out", report_out, "output directory")->required();

  // ablate
  auto* ablate = app.add_subcommand("ablate", "train a grid of loss-toggle arms");
  ConfigFlags ablate_cfg;
  ablate_cfg.add(ablate);
  std::string ablate_data, ablate_out, ablate_arms, ablate_seeds = "1,2,3", ablate_fractions;
  ablate->add_option("--data", ablate_data, "dataset directory")->required();
  ablate->add_option("--out", ablate_out, "output directory")->required();
  ablate->add_option("--arms", ablate_arms, "comma list like con,u,con+u (default: the six table rows)");
  ablate->add_option("--seeds", ablate_seeds, "comma-separated seeds");
  ablate->add_option("--fractions", ablate_fractions, "comma-separated labeled fractions");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  log::set_level(verbose ? log::Level::Info : log::Level::Warning);
  const std::string started = utc_now();

  try {
    if (gen->parsed()) {
      SyntheticOptions opt;
      if (gen_n < 1) throw UsageError("--n must be at least 1");
      if (gen_size < 16 || gen_size % 16 != 0) throw UsageError("--size must be a positive multiple of 16");
      if (!(gen_fraction > 0.0 && gen_fraction <= 1.0)) throw UsageError("--labeled-fraction must lie in (0, 1]");
      try {
        opt.classes = parse_class_mode(gen_classes);
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      opt.n = gen_n;
      opt.seed = gen_seed;
      opt.size = gen_size;
      opt.labeled_fraction = gen_fraction;
      print_summary(generate_synthetic(gen_out, opt));
      return kOk;
    }

    if (train->parsed()) {
      const TrainConfig config = train_cfg.resolve();
      const Dataset data = read_dataset(train_data);
      const int64_t total = config.resolved_steps();
      const auto result = run_training(config, data, train_out, train_resume,
                                       [&](int64_t t, const LossBundle& b, double lr) {
                                         if (verbose && (t % 50 == 0 || t + 1 == total)) {
                                           std::ostringstream s;
                                           s << "step " << t << "/" << total << " l_total "
                                             << b.l_total << " l_sup " << b.l_sup << " lr " << lr;
                                           log::info(s.str());
                                         }
                                       });
      write_manifest(train_out, "train", train_cfg.config_path, config, started);
      if (!result.splits.test.empty()) {
        std::cout << "test split\n" << format_metrics_table(result.test);
      }
      return kOk;
    }

    if (eval->parsed()) {
      if (eval_split != "val" && eval_split != "test") throw UsageError("--split must be val or test");
      if (eval_batch < 1) throw UsageError("--batch must be positive");
      const fs::path ckpt(eval_ckpt);
      const TrainConfig config = checkpoint_config(ckpt);
      const Dataset data = read_dataset(eval_data);
      TrainState state = load_checkpoint(ckpt, config, data.num_classes);
      fs::path splits_path = eval_splits.empty() ? fs::absolute(ckpt).parent_path() / "splits.csv"
                                                 : fs::path(eval_splits);
      const SplitManifest splits =
          fs::exists(splits_path) ? read_splits_csv(splits_path) : resolve_splits(config, data);
      const auto& ids = eval_split == "val" ? splits.val : splits.test;
      const MetricReport r = evaluate(state.student, data, ids, eval_batch);
      std::ostringstream csv;
      write_metrics_csv(csv, r);
      const fs::path out = eval_out.empty() ? fs::absolute(ckpt).parent_path() / ("eval_" + eval_split + ".csv")
                                            : fs::path(eval_out);
      std::ofstream(out) << csv.str();
      std::cout << format_metrics_table(r) << "wrote " << out.string() << "\n";
      return kOk;
    }

    if (report->parsed()) return cmd_report(report_runs, report_out);

    if (ablate->parsed()) {
      const TrainConfig base = ablate_cfg.resolve();
      const Dataset data = read_dataset(ablate_data);
      std::vector<AblationArm> grid;
      if (ablate_arms.empty()) {
        grid = default_ablation_grid();
      } else {
        std::stringstream ss(ablate_arms);
        std::string tok;
        while (std::getline(ss, tok, ',')) grid.push_back(parse_ablation_arm(tok));
      }
      const auto seeds = parse_seed_list(ablate_seeds);
      std::vector<double> fractions = ablate_fractions.empty() ? std::vector<double>{base.labeled_fraction}
                                                               : parse_fraction_list(ablate_fractions);
      std::vector<AblationResult> all;
      for (double f : fractions) {
        TrainConfig c = base;
        c.labeled_fraction = f;
        c.validate();
        const fs::path dir = fractions.size() == 1 ? fs::path(ablate_out)
                                                   : fs::path(ablate_out) / (std::ostringstream() << "fraction_" << f).str();
        auto res = run_ablation(c, data, grid, seeds, dir);
        all.insert(all.end(), res.begin(), res.end());
      }
      fs::create_directories(ablate_out);
      write_ablation_csv(fs::path(ablate_out) / "ablation.csv", all);
      write_manifest(ablate_out, "ablate", ablate_cfg.config_path, base, started);
      std::ifstream in(fs::path(ablate_out) / "ablation.csv");
      std::cout << in.rdbuf();
      return kOk;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help();
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const TrainingAbort& e) {
    std::cerr << "training aborted: non-finite " << e.component() << " (" << e.what() << ")\n";
    return kRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
