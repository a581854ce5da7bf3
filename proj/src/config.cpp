#include "feel/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include <nlohmann/json.hpp>

namespace feel {

namespace {

enum class ValueType { kNumber, kInteger, kBool, kString, kList, kOptionalNumber };

struct Field {
  std::string section;
  std::string key;
  ValueType type;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;

  std::string path() const { return section + "." + key; }
};

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) {
    return "";
  }
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& text) {
  const auto s = trim(text);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError("expected a number, got '" + s + "'");
  }
  return v;
}

std::int64_t parse_int(const std::string& text) {
  const auto s = trim(text);
  std::int64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError("expected an integer, got '" + s + "'");
  }
  return v;
}

bool parse_bool(const std::string& text) {
  const auto s = trim(text);
  if (s == "true" || s == "1" || s == "yes") {
    return true;
  }
  if (s == "false" || s == "0" || s == "no") {
    return false;
  }
  throw ConfigError("expected true/false, got '" + s + "'");
}

template <typename T>
std::vector<T> parse_list(const std::string& text, T (*parse)(const std::string&)) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!trim(item).empty()) {
      out.push_back(parse(item));
    }
  }
  return out;
}

template <typename T>
std::string join(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    out += (i ? "," : "") + std::to_string(values[i]);
  }
  return out;
}

std::uint64_t parse_uint(const std::string& text) {
  const auto v = parse_int(text);
  if (v < 0) {
    throw ConfigError("expected a nonnegative integer");
  }
  return static_cast<std::uint64_t>(v);
}

template <typename Member>
Field number(std::string section, std::string key, Member member) {
  return {std::move(section), std::move(key), ValueType::kNumber,
          [member](const ExperimentConfig& c) { return format_double(member(c)); },
          [member](ExperimentConfig& c, const std::string& v) { member(c) = parse_double(v); }};
}

template <typename Member>
Field integer(std::string section, std::string key, Member member) {
  return {std::move(section), std::move(key), ValueType::kInteger,
          [member](const ExperimentConfig& c) {
            return std::to_string(member(c));
          },
          [member](ExperimentConfig& c, const std::string& v) {
            using T = std::remove_reference_t<decltype(member(c))>;
            member(c) = static_cast<T>(parse_int(v));
          }};
}

template <typename Member>
Field boolean(std::string section, std::string key, Member member) {
  return {std::move(section), std::move(key), ValueType::kBool,
          [member](const ExperimentConfig& c) {
            return std::string(member(c) ? "true" : "false");
          },
          [member](ExperimentConfig& c, const std::string& v) { member(c) = parse_bool(v); }};
}

template <typename Member>
Field string(std::string section, std::string key, Member member) {
  return {std::move(section), std::move(key), ValueType::kString,
          [member](const ExperimentConfig& c) { return member(c); },
          [member](ExperimentConfig& c, const std::string& v) { member(c) = trim(v); }};
}

template <typename Enum, typename Member>
Field choice(std::string section, std::string key, Member member,
             std::vector<std::pair<std::string, Enum>> names) {
  return {std::move(section), std::move(key), ValueType::kString,
          [member, names](const ExperimentConfig& c) {
            const Enum value = member(c);
            for (const auto& [name, e] : names) {
              if (e == value) {
                return name;
              }
            }
            return std::string("?");
          },
          [member, names](ExperimentConfig& c, const std::string& v) {
            const auto s = trim(v);
            for (const auto& [name, e] : names) {
              if (name == s) {
                member(c) = e;
                return;
              }
            }
            std::string options;
            for (const auto& [name, e] : names) {
              options += (options.empty() ? "" : "|") + name;
            }
            throw ConfigError("expected one of " + options + ", got '" + s + "'");
          }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    using C = ExperimentConfig;
    std::vector<Field> t;
    t.push_back(integer("fleet", "devices", [](auto& c) -> auto& { return c.fleet.devices; }));
    t.push_back(integer("fleet", "samples_per_device",
                        [](auto& c) -> auto& { return c.fleet.samples_per_device; }));
    t.push_back({"fleet", "sizes", ValueType::kList,
                 [](const C& c) { return join(c.fleet.sizes); },
                 [](C& c, const std::string& v) { c.fleet.sizes = parse_list(v, parse_int); }});
    t.push_back(number("fleet", "flops_min", [](auto& c) -> auto& { return c.fleet.flops_min; }));
    t.push_back(number("fleet", "flops_max", [](auto& c) -> auto& { return c.fleet.flops_max; }));
    t.push_back(integer("fleet", "placement_seed",
                        [](auto& c) -> auto& { return c.fleet.placement_seed; }));

    t.push_back(number("channel", "bandwidth_hz", [](auto& c) -> auto& { return c.channel.bandwidth_hz; }));
    t.push_back(number("channel", "noise_dbm_per_hz",
                       [](auto& c) -> auto& { return c.channel.noise_dbm_per_hz; }));
    t.push_back(number("channel", "server_tx_power_dbm",
                       [](auto& c) -> auto& { return c.channel.server_tx_power_dbm; }));
    t.push_back(number("channel", "device_tx_power_dbm",
                       [](auto& c) -> auto& { return c.channel.device_tx_power_dbm; }));
    t.push_back(number("channel", "pathloss_intercept_db",
                       [](auto& c) -> auto& { return c.channel.pathloss_intercept_db; }));
    t.push_back(number("channel", "pathloss_slope_db",
                       [](auto& c) -> auto& { return c.channel.pathloss_slope_db; }));
    t.push_back(number("channel", "cell_radius_km",
                       [](auto& c) -> auto& { return c.channel.cell_radius_km; }));
    t.push_back(number("channel", "min_distance_km",
                       [](auto& c) -> auto& { return c.channel.min_distance_km; }));
    t.push_back(choice<Fading>("channel", "fading", [](auto& c) -> auto& { return c.channel.fading; },
                               {{"rayleigh_block", Fading::kRayleighBlock}, {"none", Fading::kNone}}));
    t.push_back(choice<SnrMode>("channel", "snr_mode",
                                [](auto& c) -> auto& { return c.channel.snr_mode; },
                                {{"fixed", SnrMode::kFixed}, {"scaled_noise", SnrMode::kScaledNoise}}));

    t.push_back(integer("payload", "params", [](auto& c) -> auto& { return c.payload.params; }));
    t.push_back(integer("payload", "bits", [](auto& c) -> auto& { return c.payload.bits; }));
    t.push_back(number("payload", "flops_per_sample",
                       [](auto& c) -> auto& { return c.payload.flops_per_sample; }));

    t.push_back(choice<Policy>("scheduler", "policy",
                               [](auto& c) -> auto& { return c.scheduler.policy; },
                               {{"importance_channel", Policy::kImportanceChannel},
                                {"channel_aware", Policy::kChannelAware},
                                {"importance_aware", Policy::kImportanceAware},
                                {"uniform_random", Policy::kUniformRandom}}));
    t.push_back(integer("scheduler", "devices_per_round",
                        [](auto& c) -> auto& { return c.scheduler.devices_per_round; }));
    t.push_back(number("scheduler", "rho", [](auto& c) -> auto& { return c.scheduler.rho; }));
    t.push_back(boolean("scheduler", "auto_rho", [](auto& c) -> auto& { return c.scheduler.auto_rho; }));
    t.push_back(number("scheduler", "rho_scale", [](auto& c) -> auto& { return c.scheduler.rho_scale; }));
    t.push_back(number("scheduler", "lambda_tolerance",
                       [](auto& c) -> auto& { return c.scheduler.lambda_tolerance; }));
    t.push_back(choice<AggregationRule>(
        "scheduler", "aggregation", [](auto& c) -> auto& { return c.scheduler.aggregation; },
        {{"sequential_unbiased", AggregationRule::kSequentialUnbiased},
         {"literal", AggregationRule::kLiteral}}));
    t.push_back(boolean("scheduler", "record_distribution",
                        [](auto& c) -> auto& { return c.scheduler.record_distribution; }));

    t.push_back(integer("trainer", "rounds", [](auto& c) -> auto& { return c.trainer.rounds; }));
    t.push_back(choice<LearningRate::Kind>(
        "trainer", "lr_schedule", [](auto& c) -> auto& { return c.trainer.learning_rate.kind; },
        {{"constant", LearningRate::Kind::kConstant}, {"diminishing", LearningRate::Kind::kDiminishing}}));
    t.push_back(number("trainer", "lr", [](auto& c) -> auto& { return c.trainer.learning_rate.eta; }));
    t.push_back(number("trainer", "lr_chi", [](auto& c) -> auto& { return c.trainer.learning_rate.chi; }));
    t.push_back(number("trainer", "lr_nu", [](auto& c) -> auto& { return c.trainer.learning_rate.nu; }));
    t.push_back({"trainer", "target_accuracy", ValueType::kOptionalNumber,
                 [](const C& c) {
                   return c.trainer.target_accuracy ? format_double(*c.trainer.target_accuracy)
                                                    : std::string("none");
                 },
                 [](C& c, const std::string& v) {
                   if (trim(v) == "none" || trim(v).empty()) {
                     c.trainer.target_accuracy.reset();
                   } else {
                     c.trainer.target_accuracy = parse_double(v);
                   }
                 }});
    t.push_back(integer("trainer", "eval_every", [](auto& c) -> auto& { return c.trainer.eval_every; }));
    t.push_back(choice<ComputeScope>(
        "trainer", "compute_max", [](auto& c) -> auto& { return c.trainer.compute_scope; },
        {{"fleet", ComputeScope::kFleet}, {"scheduled", ComputeScope::kScheduled}}));
    t.push_back(number("trainer", "init_scale", [](auto& c) -> auto& { return c.model_init_scale; }));

    t.push_back(string("data", "task", [](auto& c) -> auto& { return c.data.task; }));
    t.push_back(integer("data", "seed", [](auto& c) -> auto& { return c.data.seed; }));
    t.push_back(string("data", "learner", [](auto& c) -> auto& { return c.data.learner; }));
    t.push_back(integer("data", "dim", [](auto& c) -> auto& { return c.data.dim; }));
    t.push_back(number("data", "noise_sd", [](auto& c) -> auto& { return c.data.noise_sd; }));
    t.push_back(number("data", "separation", [](auto& c) -> auto& { return c.data.separation; }));
    t.push_back(number("data", "offset", [](auto& c) -> auto& { return c.data.offset; }));
    t.push_back(boolean("data", "bias", [](auto& c) -> auto& { return c.data.bias; }));
    t.push_back(integer("data", "classes", [](auto& c) -> auto& { return c.data.classes; }));
    t.push_back(number("data", "svm_reg", [](auto& c) -> auto& { return c.data.svm_reg; }));
    t.push_back(string("data", "partition", [](auto& c) -> auto& { return c.data.partition; }));
    t.push_back(integer("data", "shards_per_device", [](auto& c) -> auto& { return c.data.shards_per_device; }));
    t.push_back(number("data", "test_fraction", [](auto& c) -> auto& { return c.data.test_fraction; }));
    t.push_back(string("data", "idx_images", [](auto& c) -> auto& { return c.data.idx_images; }));
    t.push_back(string("data", "idx_labels", [](auto& c) -> auto& { return c.data.idx_labels; }));
    t.push_back(integer("data", "idx_subsample", [](auto& c) -> auto& { return c.data.idx_subsample; }));

    t.push_back(string("output", "dir", [](auto& c) -> auto& { return c.output.dir; }));
    t.push_back(boolean("output", "detail", [](auto& c) -> auto& { return c.output.detail; }));

    t.push_back({"run", "seeds", ValueType::kList, [](const C& c) { return join(c.seeds); },
                 [](C& c, const std::string& v) {
                   c.seeds = parse_list(v, parse_uint);
                   if (c.seeds.empty()) {
                     throw ConfigError("seed list is empty");
                   }
                 }});
    return t;
  }();
  return table;
}

const Field& find_field(const std::string& section, const std::string& key) {
  for (const auto& f : fields()) {
    if (f.section == section && f.key == key) {
      return f;
    }
  }
  throw ConfigError("unknown field '" + section + "." + key + "'");
}

void set_field(ExperimentConfig& config, const std::string& section, const std::string& key,
               const std::string& value) {
  const auto& field = find_field(section, key);
  try {
    field.set(config, value);
  } catch (const ConfigError& e) {
    throw ConfigError("field " + field.path() + ": " + e.what());
  }
}

}  // namespace

bool ExperimentConfig::operator==(const ExperimentConfig& other) const {
  return to_config_text(*this) == to_config_text(other);
}

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig config;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    const auto body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) {
      continue;
    }
    if (body.front() == '[') {
      if (body.back() != ']') {
        throw ConfigError("line " + std::to_string(line_no) + ": unterminated section header");
      }
      section = trim(body.substr(1, body.size() - 2));
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    auto key = trim(body.substr(0, eq));
    auto sec = section;
    if (const auto dot = key.find('.'); dot != std::string::npos) {
      sec = key.substr(0, dot);
      key = key.substr(dot + 1);
    }
    try {
      set_field(config, sec, key, body.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return config;
}

ExperimentConfig parse_config_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("JSON: ") + e.what());
  }
  if (!doc.is_object()) {
    throw ConfigError("JSON config must be an object of sections");
  }
  ExperimentConfig config;
  for (const auto& [section, entries] : doc.items()) {
    if (!entries.is_object()) {
      throw ConfigError("JSON section '" + section + "' must be an object");
    }
    for (const auto& [key, value] : entries.items()) {
      std::string text_value;
      if (value.is_string()) {
        text_value = value.get<std::string>();
      } else if (value.is_boolean()) {
        text_value = value.get<bool>() ? "true" : "false";
      } else if (value.is_number_integer()) {
        text_value = std::to_string(value.get<std::int64_t>());
      } else if (value.is_number()) {
        text_value = format_double(value.get<double>());
      } else if (value.is_null()) {
        text_value = "none";
      } else if (value.is_array()) {
        for (const auto& item : value) {
          text_value += (text_value.empty() ? "" : ",") + item.dump();
        }
      } else {
        throw ConfigError("field " + section + "." + key + ": unsupported JSON value");
      }
      set_field(config, section, key, text_value);
    }
  }
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open config " + path.string());
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  const auto text = buffer.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  if (path.extension() == ".json" || (first != std::string::npos && text[first] == '{')) {
    return parse_config_json(text);
  }
  return parse_config_text(text);
}

std::string to_config_text(const ExperimentConfig& config) {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      out += (out.empty() ? "" : "\n") + std::string("[") + f.section + "]\n";
      section = f.section;
    }
    out += f.key + " = " + f.get(config) + "\n";
  }
  return out;
}

std::string to_config_json(const ExperimentConfig& config) {
  nlohmann::ordered_json doc = nlohmann::ordered_json::object();
  for (const auto& f : fields()) {
    const auto value = f.get(config);
    auto& slot = doc[f.section][f.key];
    switch (f.type) {
      case ValueType::kNumber:
        slot = parse_double(value);
        break;
      case ValueType::kInteger:
        slot = parse_int(value);
        break;
      case ValueType::kBool:
        slot = parse_bool(value);
        break;
      case ValueType::kOptionalNumber:
        slot = value == "none" ? nlohmann::ordered_json(nullptr)
                               : nlohmann::ordered_json(parse_double(value));
        break;
      case ValueType::kList: {
        slot = nlohmann::ordered_json::array();
        for (auto v : parse_list(value, parse_int)) {
          slot.push_back(v);
        }
        break;
      }
      case ValueType::kString:
        slot = value;
        break;
    }
  }
  return doc.dump(2);
}

void apply_override(ExperimentConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw ConfigError("override '" + assignment + "' must look like section.key=value");
  }
  set_field(config, trim(assignment.substr(0, dot)), trim(assignment.substr(dot + 1, eq - dot - 1)),
            assignment.substr(eq + 1));
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) {
    out.push_back(f.path());
  }
  return out;
}

std::uint64_t config_hash(const ExperimentConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : to_config_text(config)) {
    h = (h ^ c) * 0x100000001b3ULL;
  }
  return h;
}

}  // namespace feel
