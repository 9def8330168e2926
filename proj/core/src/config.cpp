#include "panofocus/config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <map>

#include "panofocus/errors.hpp"

namespace panofocus {

void RunConfig::validate() const {
  validate_config(focuser);
  dims.validate();
  if (!(frame.width > 0) || !(frame.height > 0))
    throw ValidationError("frame dimensions must be positive");
  if (!std::isfinite(lambda) || lambda < 0) throw ValidationError("'lambda' must be >= 0");
  if (!std::isfinite(lambda_reg) || lambda_reg < 0)
    throw ValidationError("'lambda_reg' must be >= 0");
  if (!(grouping_threshold > 0)) throw ValidationError("'grouping_threshold' must be > 0");
  if (patch_size < 1) throw ValidationError("'patch_size' must be >= 1");
  if (!(pred_threshold > 0) || !(pred_threshold < 1))
    throw ValidationError("'pred_threshold' must lie in (0,1)");
  if (!(eval_iou >= 0) || !(eval_iou < 1)) throw ValidationError("'eval_iou' must lie in [0,1)");
  if (jobs < 0) throw ValidationError("'jobs' must be >= 0");
}

namespace {

double parse_double(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  double d;
  try {
    d = std::stod(value, &pos);
  } catch (const std::exception&) {
    throw ValidationError("config key '" + key + "': cannot parse '" + value + "' as a number");
  }
  if (pos != value.size())
    throw ValidationError("config key '" + key + "': trailing characters in '" + value + "'");
  if (!std::isfinite(d))
    throw ValidationError("config key '" + key + "': value must be finite");
  return d;
}

long long parse_int(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  long long i;
  try {
    i = std::stoll(value, &pos);
  } catch (const std::exception&) {
    throw ValidationError("config key '" + key + "': cannot parse '" + value + "' as an integer");
  }
  if (pos != value.size())
    throw ValidationError("config key '" + key + "': trailing characters in '" + value + "'");
  return i;
}

std::uint64_t parse_seed(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  std::uint64_t s;
  try {
    s = std::stoull(value, &pos);
  } catch (const std::exception&) {
    throw ValidationError("config key '" + key + "': cannot parse '" + value + "' as a seed");
  }
  if (pos != value.size())
    throw ValidationError("config key '" + key + "': trailing characters in '" + value + "'");
  return s;
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"theta", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.focuser.theta = parse_double(k, v);
       }},
      {"beta1", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.focuser.beta1 = parse_double(k, v);
       }},
      {"beta2", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.focuser.beta2 = parse_double(k, v);
       }},
      {"nms_iou", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.focuser.nms_iou = parse_double(k, v);
       }},
      {"min_merge_count", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.focuser.min_merge_count = static_cast<int>(parse_int(k, v));
       }},
      {"min_region_size", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.focuser.min_region_size = parse_double(k, v);
       }},
      {"frame_width", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.frame.width = parse_double(k, v);
       }},
      {"frame_height", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.frame.height = parse_double(k, v);
       }},
      {"d", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.dims.d = static_cast<int>(parse_int(k, v));
       }},
      {"heads", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.dims.heads = static_cast<int>(parse_int(k, v));
       }},
      {"prototypes", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.dims.prototypes = static_cast<int>(parse_int(k, v));
       }},
      {"m_max", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.dims.m_max = static_cast<int>(parse_int(k, v));
       }},
      {"individual_classes", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.dims.individual_classes = static_cast<int>(parse_int(k, v));
       }},
      {"group_classes", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.dims.group_classes = static_cast<int>(parse_int(k, v));
       }},
      {"global_classes", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.dims.global_classes = static_cast<int>(parse_int(k, v));
       }},
      {"lambda", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.lambda = parse_double(k, v);
       }},
      {"lambda_reg", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.lambda_reg = parse_double(k, v);
       }},
      {"weights_seed", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.weights_seed = parse_seed(k, v);
       }},
      {"gumbel_seed", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.gumbel_seed = parse_seed(k, v);
       }},
      {"grouping_threshold", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.grouping_threshold = parse_double(k, v);
       }},
      {"patch_size", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.patch_size = static_cast<int>(parse_int(k, v));
       }},
      {"pred_threshold", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.pred_threshold = parse_double(k, v);
       }},
      {"eval_iou", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.eval_iou = parse_double(k, v);
       }},
      {"jobs", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.jobs = static_cast<int>(parse_int(k, v));
       }},
  };
  return table;
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto it = setters().find(key);
  if (it == setters().end()) throw ValidationError("unknown config key '" + key + "'");
  it->second(cfg, key, value);
}

RunConfig load_config(const std::optional<std::filesystem::path>& path) {
  RunConfig cfg;
  if (!path) {
    cfg.validate();
    return cfg;
  }
  std::ifstream in(*path);
  if (!in) throw ValidationError("cannot open config file '" + path->string() + "'");
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError(path->string() + ":" + std::to_string(line_no) +
                            ": expected 'key = value'");
    try {
      apply_override(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ValidationError& e) {
      throw ValidationError(path->string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config_with_overrides(const std::optional<std::filesystem::path>& path,
                                     const std::vector<std::string>& overrides) {
  RunConfig cfg = load_config(path);
  for (const std::string& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw ValidationError("override '" + kv + "' must look like key=value");
    apply_override(cfg, trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : setters()) keys.push_back(k);
  return keys;
}

}  // namespace panofocus
