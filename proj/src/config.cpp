#include "jointdiff/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace jointdiff {

namespace {

// Raised by a setter; the caller attaches the location.
struct BadValue : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

long long to_integer(const std::string& v) {
  long long out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty())
    throw BadValue("expected an integer, got '" + v + "'");
  return out;
}

int to_int(const std::string& v) {
  const long long x = to_integer(v);
  if (x < INT32_MIN || x > INT32_MAX) throw BadValue("integer out of range: " + v);
  return static_cast<int>(x);
}

std::uint64_t to_u64(const std::string& v) {
  const long long x = to_integer(v);
  if (x < 0) throw BadValue("expected a non-negative integer, got '" + v + "'");
  return static_cast<std::uint64_t>(x);
}

double to_double(const std::string& v) {
  std::size_t used = 0;
  double x = 0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    throw BadValue("expected a number, got '" + v + "'");
  }
  if (used != v.size() || !std::isfinite(x)) throw BadValue("expected a finite number, got '" + v + "'");
  return x;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw BadValue("expected true or false, got '" + v + "'");
}

std::vector<int> to_int_list(const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_int(trim(item)));
  if (out.empty()) throw BadValue("expected a comma-separated integer list");
  return out;
}

int at_least(int x, int lo, const char* what) {
  if (x < lo) throw BadValue(std::string(what) + " must be >= " + std::to_string(lo));
  return x;
}

double positive(double x, const char* what) {
  if (!(x > 0.0)) throw BadValue(std::string(what) + " must be > 0");
  return x;
}

double non_negative(double x, const char* what) {
  if (!(x >= 0.0)) throw BadValue(std::string(what) + " must be >= 0");
  return x;
}

std::string one_of(const std::string& v, std::initializer_list<const char*> options) {
  std::string list;
  for (const char* o : options) {
    if (v == o) return v;
    list += list.empty() ? o : std::string(", ") + o;
  }
  throw BadValue("'" + v + "' is not one of: " + list);
}

using Setter = std::function<void(ConfigBundle&, const std::string&)>;

const std::vector<std::pair<std::string, Setter>>& setters() {
  static const std::vector<std::pair<std::string, Setter>> table = {
      {"unet.depth", [](ConfigBundle& b, const std::string& v) { b.model.unet.depth = at_least(to_int(v), 1, "unet.depth"); }},
      {"unet.base_channels", [](ConfigBundle& b, const std::string& v) { b.model.unet.base_channels = at_least(to_int(v), 1, "unet.base_channels"); }},
      {"unet.channel_multipliers", [](ConfigBundle& b, const std::string& v) {
         auto m = to_int_list(v);
         for (int x : m) at_least(x, 1, "unet.channel_multipliers entries");
         b.model.unet.channel_multipliers = m;
       }},
      {"unet.input_channels", [](ConfigBundle& b, const std::string& v) { b.model.unet.input_channels = at_least(to_int(v), 1, "unet.input_channels"); }},
      {"unet.image_side", [](ConfigBundle& b, const std::string& v) { b.model.unet.image_side = at_least(to_int(v), 1, "unet.image_side"); }},
      {"unet.time_embed_dim", [](ConfigBundle& b, const std::string& v) {
         const int d = at_least(to_int(v), 2, "unet.time_embed_dim");
         if (d % 2) throw BadValue("unet.time_embed_dim must be even");
         b.model.unet.time_embed_dim = d;
       }},
      {"head.num_classes", [](ConfigBundle& b, const std::string& v) { b.model.head.num_classes = at_least(to_int(v), 2, "head.num_classes"); }},
      {"head.hidden", [](ConfigBundle& b, const std::string& v) { b.model.head.hidden = at_least(to_int(v), 1, "head.hidden"); }},
      {"schedule.T", [](ConfigBundle& b, const std::string& v) { b.model.schedule.steps = at_least(to_int(v), 1, "schedule.T"); }},
      {"schedule.beta_start", [](ConfigBundle& b, const std::string& v) { b.model.schedule.beta_start = positive(to_double(v), "schedule.beta_start"); }},
      {"schedule.beta_end", [](ConfigBundle& b, const std::string& v) {
         const double x = positive(to_double(v), "schedule.beta_end");
         if (x >= 1.0) throw BadValue("schedule.beta_end must be < 1");
         b.model.schedule.beta_end = x;
       }},
      {"train.steps", [](ConfigBundle& b, const std::string& v) { b.train.total_steps = at_least(to_int(v), 0, "train.steps"); }},
      {"train.batch_size", [](ConfigBundle& b, const std::string& v) { b.train.batch_size = at_least(to_int(v), 1, "train.batch_size"); }},
      {"train.lr", [](ConfigBundle& b, const std::string& v) { b.train.learning_rate = static_cast<float>(positive(to_double(v), "train.lr")); }},
      {"train.noisy_classifier", [](ConfigBundle& b, const std::string& v) { b.train.noisy_classifier = to_bool(v); }},
      {"train.class_weight", [](ConfigBundle& b, const std::string& v) { b.train.class_weight = static_cast<float>(non_negative(to_double(v), "train.class_weight")); }},
      {"train.labeled_fraction", [](ConfigBundle& b, const std::string& v) {
         const double f = to_double(v);
         if (!(f > 0.0 && f <= 1.0)) throw BadValue("train.labeled_fraction must lie in (0, 1]");
         b.train.labeled_fraction = f;
       }},
      {"train.buffer_capacity", [](ConfigBundle& b, const std::string& v) { b.train.buffer_capacity = at_least(to_int(v), 0, "train.buffer_capacity"); }},
      {"train.seed", [](ConfigBundle& b, const std::string& v) { b.train.seed = to_u64(v); }},
      {"train.checkpoint_interval", [](ConfigBundle& b, const std::string& v) { b.train.checkpoint_interval = at_least(to_int(v), 1, "train.checkpoint_interval"); }},
      {"train.log_interval", [](ConfigBundle& b, const std::string& v) { b.train.log_interval = at_least(to_int(v), 1, "train.log_interval"); }},
      {"train.check_routing", [](ConfigBundle& b, const std::string& v) { b.train.check_routing = to_bool(v); }},
      {"sampler.mode", [](ConfigBundle& b, const std::string& v) {
         try {
           b.sampler.mode = parse_mode(v);
         } catch (const ContractViolation& e) {
           throw BadValue(e.what());
         }
       }},
      {"sampler.class", [](ConfigBundle& b, const std::string& v) { b.sampler.target_class = at_least(to_int(v), 0, "sampler.class"); }},
      {"sampler.alpha", [](ConfigBundle& b, const std::string& v) { b.sampler.alpha = static_cast<float>(non_negative(to_double(v), "sampler.alpha")); }},
      {"sampler.scale", [](ConfigBundle& b, const std::string& v) { b.sampler.scale = static_cast<float>(non_negative(to_double(v), "sampler.scale")); }},
      {"sampler.n", [](ConfigBundle& b, const std::string& v) { b.sampler.n = at_least(to_int(v), 1, "sampler.n"); }},
      {"sampler.seed", [](ConfigBundle& b, const std::string& v) { b.sampler.seed = to_u64(v); }},
      {"sampler.opt_steps", [](ConfigBundle& b, const std::string& v) { b.sampler.opt_steps = at_least(to_int(v), 1, "sampler.opt_steps"); }},
      {"data.source", [](ConfigBundle& b, const std::string& v) { b.data.source = one_of(v, {"shapes", "idx"}); }},
      {"data.train_size", [](ConfigBundle& b, const std::string& v) { b.data.train_size = at_least(to_int(v), 1, "data.train_size"); }},
      {"data.test_size", [](ConfigBundle& b, const std::string& v) { b.data.test_size = at_least(to_int(v), 1, "data.test_size"); }},
      {"data.seed", [](ConfigBundle& b, const std::string& v) { b.data.seed = to_u64(v); }},
      {"data.background", [](ConfigBundle& b, const std::string& v) { b.data.background = one_of(v, {"flat", "striped"}); }},
      {"data.train_images", [](ConfigBundle& b, const std::string& v) { b.data.train_images = v; }},
      {"data.train_labels", [](ConfigBundle& b, const std::string& v) { b.data.train_labels = v; }},
      {"data.test_images", [](ConfigBundle& b, const std::string& v) { b.data.test_images = v; }},
      {"data.test_labels", [](ConfigBundle& b, const std::string& v) { b.data.test_labels = v; }},
      {"eval.noise_seed", [](ConfigBundle& b, const std::string& v) { b.eval.noise_seed = to_u64(v); }},
      {"eval.samples", [](ConfigBundle& b, const std::string& v) { b.eval.samples = at_least(to_int(v), 2, "eval.samples"); }},
      {"eval.knn", [](ConfigBundle& b, const std::string& v) { b.eval.knn = at_least(to_int(v), 1, "eval.knn"); }},
      {"eval.probe_max_iterations", [](ConfigBundle& b, const std::string& v) { b.eval.probe_max_iterations = at_least(to_int(v), 1, "eval.probe_max_iterations"); }},
  };
  return table;
}

void assign(ConfigBundle& b, const std::string& key, const std::string& value, const std::string& where,
            int line) {
  for (const auto& [k, set] : setters()) {
    if (k != key) continue;
    try {
      set(b, value);
    } catch (const BadValue& e) {
      throw ConfigError(where + ": " + key + ": " + e.what(), line);
    }
    return;
  }
  throw ConfigError(where + ": unknown key '" + key + "'", line);
}

}  // namespace

ConfigBundle::ConfigBundle() {
  model.unet = desk_unet_config();
  model.head = HeadConfig{};
  model.schedule = ScheduleParams{};
}

void ConfigBundle::validate() const {
  try {
    model.unet.validate();
    train.validate();
    if (model.schedule.beta_start > model.schedule.beta_end)
      throw ContractViolation("schedule.beta_start must not exceed schedule.beta_end");
    if (sampler.target_class && *sampler.target_class >= model.head.num_classes)
      throw ContractViolation("sampler.class must be below head.num_classes");
    if (data.source == "idx" && data.train_images.empty())
      throw ContractViolation("data.source = idx needs data.train_images");
    if (eval.knn >= eval.samples) throw ContractViolation("eval.knn must be below eval.samples");
  } catch (const ContractViolation& e) {
    throw ConfigError(std::string("config: ") + e.what(), 0);
  }
}

ConfigBundle parse_config(std::string_view text) {
  ConfigBundle b;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": malformed section header", line_no);
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError(where + ": empty section name", line_no);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'", line_no);
    std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": missing key", line_no);
    if (!section.empty() && key.find('.') == std::string::npos) key = section + "." + key;
    assign(b, key, value, where, line_no);
  }
  b.validate();
  return b;
}

ConfigBundle load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string(), 0);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void apply_override(ConfigBundle& bundle, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos)
    throw ConfigError("--set " + std::string(assignment) + ": expected key=value", 0);
  const std::string key = trim(assignment.substr(0, eq));
  assign(bundle, key, trim(assignment.substr(eq + 1)), "--set", 0);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, s] : setters()) keys.push_back(k);
  return keys;
}

}  // namespace jointdiff
