#include "pccs/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>

#include "json.hpp"
#include "pccs/random.hpp"

namespace pccs {

using json = nlohmann::json;

namespace {

constexpr uint64_t kSplitStream = 0x5B117;

struct Field {
  std::string key;
  bool hashed;  // false for paths and run control
  std::function<json(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const json&)> set;
};

bool parse_bool(const json& v) {
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_number_integer()) return v.get<int64_t>() != 0;
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "on" || s == "true" || s == "yes") return true;
    if (s == "off" || s == "false" || s == "no") return false;
  }
  throw ConfigError("expected a boolean (on/off/true/false), got " + v.dump());
}

double parse_number(const json& v) {
  if (v.is_number()) return v.get<double>();
  throw ConfigError("expected a number, got " + v.dump());
}

int64_t parse_integer(const json& v) {
  if (v.is_number_integer()) return v.get<int64_t>();
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (d == static_cast<double>(static_cast<int64_t>(d))) return static_cast<int64_t>(d);
  }
  throw ConfigError("expected an integer, got " + v.dump());
}

std::string parse_string(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  throw ConfigError("expected a string, got " + v.dump());
}

std::vector<int> parse_int_list(const json& v) {
  std::vector<int> out;
  if (v.is_array()) {
    for (const auto& e : v) out.push_back(static_cast<int>(parse_integer(e)));
  } else if (v.is_string()) {
    std::stringstream ss(v.get<std::string>());
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      try {
        std::size_t used = 0;
        out.push_back(std::stoi(tok, &used));
        if (tok.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ConfigError("bad integer list element '" + tok + "'");
      }
    }
  } else {
    throw ConfigError("expected an integer list, got " + v.dump());
  }
  return out;
}

#define PCCS_NUM(name, hashed)                                                       \
  Field{#name, hashed, [](const TrainConfig& c) { return json(c.name); },            \
        [](TrainConfig& c, const json& v) { c.name = parse_number(v); }}
#define PCCS_INT(name, hashed)                                                       \
  Field{#name, hashed, [](const TrainConfig& c) { return json(c.name); },            \
        [](TrainConfig& c, const json& v) {                                          \
          c.name = static_cast<decltype(c.name)>(parse_integer(v));                  \
        }}
#define PCCS_STR(name, hashed)                                                       \
  Field{#name, hashed, [](const TrainConfig& c) { return json(c.name); },            \
        [](TrainConfig& c, const json& v) { c.name = parse_string(v); }}
#define PCCS_BOOL(name, hashed)                                                      \
  Field{#name, hashed, [](const TrainConfig& c) { return json(c.name); },            \
        [](TrainConfig& c, const json& v) { c.name = parse_bool(v); }}
#define PCCS_TOGGLE(key, member)                                                     \
  Field{key, true, [](const TrainConfig& c) { return json(c.toggles.member); },      \
        [](TrainConfig& c, const json& v) { c.toggles.member = parse_bool(v); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      PCCS_STR(preset, true),
      Field{"widths", true, [](const TrainConfig& c) { return json(c.widths); },
            [](TrainConfig& c, const json& v) { c.widths = parse_int_list(v); }},
      PCCS_INT(fused_channels, true),
      PCCS_NUM(lambda_aux, true),
      PCCS_NUM(lambda_pc, true),
      PCCS_NUM(lambda_u, true),
      PCCS_NUM(tau, true),
      PCCS_NUM(epsilon, true),
      PCCS_NUM(t_ramp, true),
      PCCS_INT(max_bin, true),
      PCCS_NUM(classifier_weight, true),
      PCCS_TOGGLE("l_con", con),
      PCCS_TOGGLE("l_u", u),
      PCCS_TOGGLE("l_aux", aux),
      PCCS_TOGGLE("l_pc", pc),
      PCCS_NUM(mu, true),
      PCCS_NUM(gamma, true),
      PCCS_NUM(mu_w, true),
      PCCS_BOOL(teacher_history, true),
      PCCS_STR(pseudo_source, true),
      PCCS_BOOL(consistency_on_labeled, true),
      PCCS_STR(labeled_proto_masks, true),
      PCCS_INT(t_max, true),
      PCCS_INT(warmup_steps, true),
      PCCS_NUM(lr, true),
      PCCS_NUM(lr_power, true),
      PCCS_NUM(momentum, true),
      PCCS_NUM(weight_decay, true),
      PCCS_INT(batch_size, true),
      PCCS_INT(labeled_per_batch, true),
      PCCS_INT(seed, true),
      PCCS_INT(split_seed, true),
      PCCS_NUM(labeled_fraction, true),
      PCCS_STR(split_file, false),
      PCCS_INT(steps, false),
      PCCS_INT(checkpoint_every, false),
      PCCS_INT(eval_every, false),
      PCCS_INT(eval_batch, false),
  };
  return table;
}

const Field& find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

void set_json(TrainConfig& config, const std::string& key, const json& value) {
  try {
    find_field(key).set(config, value);
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    if (msg.rfind("unknown config key", 0) == 0) throw;
    throw ConfigError("config key '" + key + "': " + msg);
  }
}

// Unquoted scalars that are not valid JSON (e.g. on, teacher, 8,16) stay strings.
json scalar_from_text(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return json(text);
  }
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

TrainConfig from_object(const json& obj) {
  if (!obj.is_object()) throw ConfigError("config must be a JSON object or key = value lines");
  TrainConfig config;
  if (obj.contains("preset")) config = preset_config(parse_string(obj.at("preset")));
  for (const auto& [key, value] : obj.items()) {
    if (key == "preset") continue;
    set_json(config, key, value);
  }
  config.validate();
  return config;
}

}  // namespace

uint64_t TrainConfig::resolved_split_seed() const {
  return split_seed < 0 ? derive_seed(seed, kSplitStream) : static_cast<uint64_t>(split_seed);
}

ModelConfig TrainConfig::model_config(int num_classes) const {
  ModelConfig m;
  m.num_classes = num_classes;
  m.widths = widths;
  m.fused_channels = fused_channels;
  return m;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (widths.size() < 4) fail("widths needs at least 4 stages");
  for (int w : widths)
    if (w < 1) fail("widths must be positive");
  if (fused_channels < 1) fail("fused_channels must be positive");
  if (tau <= 0.0) fail("tau must be positive");
  if (epsilon <= 0.0) fail("epsilon must be positive");
  if (t_max < 1) fail("t_max must be at least 1");
  if (warmup_steps > t_max) fail("warmup_steps exceeds t_max");
  if (lr <= 0.0) fail("lr must be positive");
  if (batch_size < 1) fail("batch_size must be at least 1");
  if (labeled_per_batch < 1 || labeled_per_batch > batch_size) {
    fail("labeled_per_batch must lie in [1, batch_size]");
  }
  if (mu < 0.0 || mu > 1.0 || gamma < 0.0 || gamma > 1.0 || mu_w < 0.0 || mu_w > 1.0) {
    fail("mu, gamma and mu_w must lie in [0, 1]");
  }
  if (max_bin < 1) fail("max_bin must be at least 1");
  if (labeled_fraction <= 0.0 || labeled_fraction > 1.0) fail("labeled_fraction must lie in (0, 1]");
  if (pseudo_source != "teacher" && pseudo_source != "student") {
    fail("pseudo_source must be teacher or student");
  }
  if (labeled_proto_masks != "gt" && labeled_proto_masks != "pseudo") {
    fail("labeled_proto_masks must be gt or pseudo");
  }
  if (steps > t_max) fail("steps exceeds t_max");
  if (checkpoint_every < 0 || eval_every < 0) fail("intervals must be non-negative");
  if (eval_batch < 1) fail("eval_batch must be at least 1");
}

TrainConfig preset_config(const std::string& name) {
  TrainConfig c;
  if (name == "desk") return c;
  if (name == "paper") {
    c.preset = "paper";
    c.widths = {64, 128, 256, 512, 512};
    c.fused_channels = 256;
    c.batch_size = 16;
    c.labeled_per_batch = 8;
    return c;
  }
  throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
}

TrainConfig parse_config_text(const std::string& text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    json obj;
    try {
      obj = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ConfigError(std::string("invalid JSON config: ") + e.what());
    }
    return from_object(obj);
  }
  json obj = json::object();
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (obj.contains(key)) {
      throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    obj[key] = scalar_from_text(trim(line.substr(eq + 1)));
  }
  return from_object(obj);
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

void set_config_value(TrainConfig& config, const std::string& key, const std::string& value) {
  if (key == "preset") {
    // Re-basing on a preset would silently discard earlier overrides.
    throw ConfigError("preset can only be set in the config file");
  }
  set_json(config, key, scalar_from_text(value));
}

void apply_toggle(TrainConfig& config, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos) throw ConfigError("toggle must look like name=on|off");
  const std::string name = trim(spec.substr(0, eq));
  const bool on = parse_bool(json(trim(spec.substr(eq + 1))));
  if (name == "all_unsup") {
    config.toggles = {on, on, on, on};
  } else if (name == "l_con" || name == "l_u" || name == "l_aux" || name == "l_pc") {
    find_field(name).set(config, json(on));
  } else {
    throw ConfigError("unknown toggle '" + name + "'");
  }
}

std::string config_to_json(const TrainConfig& config, bool include_run_control) {
  json obj = json::object();
  for (const auto& f : fields())
    if (include_run_control || f.hashed) obj[f.key] = f.get(config);
  return obj.dump(2);
}

TrainConfig config_from_json(const std::string& json_text) {
  try {
    return from_object(json::parse(json_text));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid JSON config: ") + e.what());
  }
}

uint64_t config_hash(const TrainConfig& config) {
  const std::string canonical = config_to_json(config, false);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hash_hex(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

}  // namespace pccs
