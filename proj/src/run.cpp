// Checkpoint container, the run loop and the ablation driver.

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "pccs/log.hpp"
#include "pccs/trainer.hpp"

namespace pccs {

using json = nlohmann::json;

namespace {

constexpr char kBlobMagic[8] = {'P', 'C', 'C', 'S', 'B', 'L', 'O', 'B'};
constexpr uint32_t kBlobVersion = 1;

struct Record {
  std::string name;
  uint8_t width = 0;  // bytes per element: 4 float, 8 double
  std::vector<char> bytes;
};

template <typename T>
Record make_record(std::string name, const std::vector<T>& values) {
  Record r;
  r.name = std::move(name);
  r.width = sizeof(T);
  r.bytes.resize(values.size() * sizeof(T));
  if (!values.empty()) std::memcpy(r.bytes.data(), values.data(), r.bytes.size());
  return r;
}

template <typename T>
std::vector<T> record_values(const Record& r) {
  if (r.width != sizeof(T)) throw IoError("checkpoint record " + r.name + " has the wrong element type");
  std::vector<T> v(r.bytes.size() / sizeof(T));
  if (!v.empty()) std::memcpy(v.data(), r.bytes.data(), r.bytes.size());
  return v;
}

template <typename U>
void put(std::ostream& out, U value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof value);
}

template <typename U>
U get(std::istream& in) {
  U value{};
  in.read(reinterpret_cast<char*>(&value), sizeof value);
  if (!in) throw IoError("truncated checkpoint blob");
  return value;
}

void write_blob(const fs::path& path, const std::vector<Record>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kBlobMagic, sizeof kBlobMagic);
  put<uint32_t>(out, kBlobVersion);
  put<uint64_t>(out, records.size());
  for (const auto& r : records) {
    put<uint32_t>(out, static_cast<uint32_t>(r.name.size()));
    out.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    put<uint8_t>(out, r.width);
    put<uint64_t>(out, r.bytes.size());
    out.write(r.bytes.data(), static_cast<std::streamsize>(r.bytes.size()));
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::map<std::string, Record> read_blob(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kBlobMagic, sizeof magic) != 0) {
    throw IoError(path.string() + " is not a checkpoint blob");
  }
  if (get<uint32_t>(in) != kBlobVersion) throw IoError("unsupported blob version in " + path.string());
  const auto count = get<uint64_t>(in);
  std::map<std::string, Record> records;
  for (uint64_t k = 0; k < count; ++k) {
    Record r;
    r.name.resize(get<uint32_t>(in));
    in.read(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    r.width = get<uint8_t>(in);
    r.bytes.resize(get<uint64_t>(in));
    in.read(r.bytes.data(), static_cast<std::streamsize>(r.bytes.size()));
    if (!in) throw IoError("truncated checkpoint blob " + path.string());
    records.emplace(r.name, std::move(r));
  }
  return records;
}

const Record& need(const std::map<std::string, Record>& recs, const std::string& name) {
  auto it = recs.find(name);
  if (it == recs.end()) throw IoError("checkpoint is missing " + name);
  return it->second;
}

std::vector<Record> param_records(const ParamStore<float>& store) {
  std::vector<Record> out;
  for (const auto& p : store.tensors()) out.push_back(make_record(p.name, p.value));
  return out;
}

void load_params(ParamStore<float>& store, const std::map<std::string, Record>& recs) {
  for (auto& p : store.tensors()) {
    auto v = record_values<float>(need(recs, p.name));
    if (v.size() != p.value.size()) throw IoError("checkpoint tensor " + p.name + " has the wrong size");
    p.value = std::move(v);
  }
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

// Keeps the header and every row for a step below `step`.
std::string truncate_losses(const fs::path& path, int64_t step) {
  std::ifstream in(path);
  std::string out = losses_csv_header() + "\n";
  if (!in) return out;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (std::stoll(line.substr(0, line.find(','))) < step) out += line + "\n";
  }
  return out;
}

}  // namespace

void save_checkpoint(const fs::path& dir, const TrainState& state, const TrainConfig& config) {
  const fs::path tmp = dir.string() + ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);

  write_blob(tmp / "student.bin", param_records(state.student.params()));
  write_blob(tmp / "teacher.bin", param_records(state.teacher.params()));

  std::vector<Record> opt;
  const auto& bufs = state.optimizer.buffers();
  for (std::size_t i = 0; i < bufs.size(); ++i) opt.push_back(make_record("buffer." + std::to_string(i), bufs[i]));
  write_blob(tmp / "optimizer.bin", opt);

  write_blob(tmp / "classifier.bin", {make_record("weights", state.classifier.weights()),
                                      make_record("bias", state.classifier.bias()),
                                      make_record("momentum", state.classifier.momentum_buffer())});

  std::vector<Record> protos;
  const auto& ps = state.prototypes;
  for (int c = 0; c < ps.num_classes(); ++c) {
    if (const auto& p = ps.prototypes()[c]) protos.push_back(make_record("prototype." + std::to_string(c), *p));
    if (const auto& v = ps.histories()[c]) protos.push_back(make_record("history." + std::to_string(c), *v));
  }
  write_blob(tmp / "prototypes.bin", protos);

  json manifest;
  manifest["format"] = "pccs-checkpoint-1";
  manifest["step"] = state.step;
  manifest["prototype_step"] = state.prototypes.step();
  manifest["num_classes"] = state.student.config().num_classes;
  manifest["optimizer_buffers"] = bufs.size();
  manifest["config"] = json::parse(config_to_json(config));
  manifest["config_hash"] = hash_hex(config_hash(config));
  json hist = json::array();
  for (const auto& e : state.history) {
    hist.push_back({{"step", e.step}, {"split", e.split}, {"dice", e.dice}, {"jaccard", e.jaccard}});
  }
  manifest["history"] = hist;
  write_text(tmp / "manifest.json", manifest.dump(2) + "\n");

  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

TrainConfig checkpoint_config(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) throw IoError("no checkpoint at " + dir.string());
  return config_from_json(read_json(dir / "manifest.json").at("config").dump());
}

int checkpoint_num_classes(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) throw IoError("no checkpoint at " + dir.string());
  return read_json(dir / "manifest.json").at("num_classes").get<int>();
}

TrainState load_checkpoint(const fs::path& dir, const TrainConfig& config, int num_classes) {
  if (!fs::exists(dir / "manifest.json")) throw IoError("no checkpoint at " + dir.string());
  const json manifest = read_json(dir / "manifest.json");
  const std::string stored = manifest.at("config_hash").get<std::string>();
  if (stored != hash_hex(config_hash(config))) {
    throw ConfigError("config hash " + hash_hex(config_hash(config)) +
                      " does not match checkpoint hash " + stored);
  }
  if (manifest.at("num_classes").get<int>() != num_classes) {
    throw ConfigError("checkpoint class count differs from the dataset's");
  }

  TrainState s = init_state<float>(config, num_classes);
  load_params(s.student.params(), read_blob(dir / "student.bin"));
  load_params(s.teacher.params(), read_blob(dir / "teacher.bin"));

  const auto opt = read_blob(dir / "optimizer.bin");
  const auto nbuf = manifest.at("optimizer_buffers").get<std::size_t>();
  auto& bufs = s.optimizer.buffers();
  bufs.clear();
  for (std::size_t i = 0; i < nbuf; ++i) bufs.push_back(record_values<float>(need(opt, "buffer." + std::to_string(i))));

  const auto clf = read_blob(dir / "classifier.bin");
  auto assign = [](std::vector<double>& dst, std::vector<double> src, const char* what) {
    if (src.size() != dst.size()) throw IoError(std::string("checkpoint classifier ") + what + " has the wrong size");
    dst = std::move(src);
  };
  assign(s.classifier.weights(), record_values<double>(need(clf, "weights")), "weights");
  assign(s.classifier.bias(), record_values<double>(need(clf, "bias")), "bias");
  assign(s.classifier.momentum_buffer(), record_values<double>(need(clf, "momentum")), "momentum");

  const auto protos = read_blob(dir / "prototypes.bin");
  for (int c = 0; c < num_classes; ++c) {
    auto p = protos.find("prototype." + std::to_string(c));
    if (p != protos.end()) s.prototypes.prototypes()[c] = record_values<double>(p->second);
    auto v = protos.find("history." + std::to_string(c));
    if (v != protos.end()) s.prototypes.histories()[c] = record_values<double>(v->second);
  }
  s.prototypes.set_step(manifest.at("prototype_step").get<int64_t>());
  s.step = manifest.at("step").get<int64_t>();
  for (const auto& e : manifest.at("history")) {
    auto num = [&e](const char* k) { return e.at(k).is_null() ? NAN : e.at(k).get<double>(); };
    s.history.push_back({e.at("step").get<int64_t>(), e.at("split").get<std::string>(), num("dice"),
                         num("jaccard")});
  }
  return s;
}

void write_final_metrics(const fs::path& path, const MetricReport& val, const MetricReport& test) {
  std::ostringstream out;
  out << "split,";
  std::ostringstream v, t;
  write_metrics_csv(v, val);
  write_metrics_csv(t, test);
  auto emit = [&out](const std::string& split, const std::string& csv, bool header) {
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    if (header) out << line << "\n";
    while (std::getline(in, line)) out << split << "," << line << "\n";
  };
  emit("val", v.str(), true);
  emit("test", t.str(), false);
  write_text(path, out.str());
}

RunResult run_training(const TrainConfig& config, const Dataset& data, const fs::path& out_dir,
                       bool resume, const StepCallback& on_step) {
  config.validate();
  fs::create_directories(out_dir);
  RunResult result;
  result.splits = resolve_splits(config, data);
  write_splits_csv(out_dir / "splits.csv", result.splits);
  write_text(out_dir / "config.json", config_to_json(config) + "\n");

  const fs::path ckpt = out_dir / "checkpoint";
  const fs::path losses_path = out_dir / "losses.csv";
  if (resume) {
    result.state = load_checkpoint(ckpt, config, data.num_classes);
    log::info("resuming at step " + std::to_string(result.state.step));
    write_text(losses_path, truncate_losses(losses_path, result.state.step));
  } else {
    result.state = init_state<float>(config, data.num_classes);
    write_text(losses_path, losses_csv_header() + "\n");
  }
  TrainState& state = result.state;

  std::ofstream log_out(losses_path, std::ios::app);
  if (!log_out) throw IoError("cannot append to " + losses_path.string());

  const int64_t end = config.resolved_steps();
  while (state.step < end) {
    const int64_t t = state.step;
    const Batch batch = assemble_batch(plan_batch(config, result.splits, t), data, t);
    const double lr = poly_lr(config.lr, t, config.t_max, config.lr_power);
    const LossBundle bundle = train_step(batch, state, config);
    log_out << losses_csv_row(t, bundle, lr) << "\n";
    if (on_step) on_step(t, bundle, lr);

    if (config.eval_every > 0 && state.step % config.eval_every == 0 && !result.splits.val.empty()) {
      const auto r = evaluate(state.student, data, result.splits.val, config.eval_batch);
      state.history.push_back({state.step, "val", r.mean.values.dice.value_or(NAN),
                               r.mean.values.jaccard.value_or(NAN)});
    }
    if (config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0 && state.step < end) {
      log_out.flush();
      save_checkpoint(ckpt, state, config);
    }
  }
  log_out.close();
  save_checkpoint(ckpt, state, config);

  if (!result.splits.val.empty()) result.val = evaluate(state.student, data, result.splits.val, config.eval_batch);
  if (!result.splits.test.empty()) result.test = evaluate(state.student, data, result.splits.test, config.eval_batch);
  write_final_metrics(out_dir / "final_metrics.csv", result.val, result.test);
  return result;
}

std::vector<AblationArm> default_ablation_grid() {
  return {
      {"con", {true, false, false, false}},
      {"u", {false, true, false, false}},
      {"con+u", {true, true, false, false}},
      {"aux+pc", {false, false, true, true}},
      {"con+u+aux", {true, true, true, false}},
      {"all", {true, true, true, true}},
  };
}

AblationArm parse_ablation_arm(const std::string& spec) {
  AblationArm arm{spec, {false, false, false, false}};
  if (spec == "all") {
    arm.toggles = {true, true, true, true};
    return arm;
  }
  if (spec == "none") return arm;
  std::stringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, '+')) {
    if (tok == "con") arm.toggles.con = true;
    else if (tok == "u") arm.toggles.u = true;
    else if (tok == "aux") arm.toggles.aux = true;
    else if (tok == "pc") arm.toggles.pc = true;
    else throw ConfigError("unknown ablation component '" + tok + "'");
  }
  return arm;
}

std::vector<AblationResult> run_ablation(const TrainConfig& base, const Dataset& data,
                                         const std::vector<AblationArm>& grid,
                                         const std::vector<uint64_t>& seeds, const fs::path& out_dir) {
  std::vector<AblationResult> results;
  for (const auto& arm : grid) {
    AblationResult r;
    r.arm = arm;
    r.labeled_fraction = base.labeled_fraction;
    for (uint64_t seed : seeds) {
      TrainConfig c = base;
      c.toggles = arm.toggles;
      c.seed = seed;
      // identical data for every arm and seed unless a split seed is pinned
      if (c.split_seed < 0) c.split_seed = static_cast<int64_t>(base.resolved_split_seed() & 0x7FFFFFFFFFFFFFFFULL);
      log::info("ablation arm " + arm.name + " seed " + std::to_string(seed));
      const auto run = run_training(c, data, out_dir / arm.name / ("seed" + std::to_string(seed)), false);
      r.dice.push_back(run.test.mean.values.dice.value_or(NAN));
      r.jaccard.push_back(run.test.mean.values.jaccard.value_or(NAN));
    }
    results.push_back(std::move(r));
  }
  return results;
}

void write_ablation_csv(const fs::path& path, const std::vector<AblationResult>& results) {
  std::ostringstream out;
  out << "arm,l_con,l_u,l_aux,l_pc,labeled_fraction,seeds,dice_mean,dice_std,jaccard_mean,jaccard_std\n";
  char buf[256];
  for (const auto& r : results) {
    std::snprintf(buf, sizeof buf, "%s,%d,%d,%d,%d,%.6g,%zu,%.6f,%.6f,%.6f,%.6f\n", r.arm.name.c_str(),
                  r.arm.toggles.con, r.arm.toggles.u, r.arm.toggles.aux, r.arm.toggles.pc,
                  r.labeled_fraction, r.dice.size(), mean_of(r.dice), stddev_of(r.dice),
                  mean_of(r.jaccard), stddev_of(r.jaccard));
    out << buf;
  }
  write_text(path, out.str());
}

}  // namespace pccs
