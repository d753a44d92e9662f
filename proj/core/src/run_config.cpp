#include "vilsum/run_config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "vilsum/errors.hpp"
#include "vilsum/model.hpp"

namespace vilsum {

namespace {

std::string format_float(float v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
  return buf;
}

int parse_int(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    int v = std::stoi(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" + value + "'");
  }
}

long parse_long(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    long v = std::stol(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" + value + "'");
  }
}

float parse_float(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    float v = std::stof(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + value + "'");
  }
}

}  // namespace

void RunConfig::validate() const {
  if (d_model <= 0) throw ConfigError("d_model must be positive");
  if (n_heads <= 0 || d_model % n_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " must be divisible by n_heads " +
                      std::to_string(n_heads));
  }
  if (enc_layers < 1 || dec_layers < 1) throw ConfigError("need at least one en/decoder layer");
  if (patch_size <= 0 || image_size <= 0 || image_size % patch_size != 0) {
    throw ConfigError("image_size " + std::to_string(image_size) +
                      " must be a positive multiple of patch_size " + std::to_string(patch_size));
  }
  if (lr <= 0.0f) throw ConfigError("lr must be positive");
  if (warmup_steps < 1) throw ConfigError("warmup_steps must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (beam_size < 1) throw ConfigError("beam_size must be >= 1");
  if (min_len < 1 || max_len < min_len) {
    throw ConfigError("need 1 <= min_len <= max_len");
  }
  if (max_len > 158) throw ConfigError("max_len above the 158-token decoder budget");
  if (k_select < 1) throw ConfigError("k_select must be >= 1");
  parse_mode(mode);
  TaskFlags t = TaskFlags::parse(tasks);
  if (!t.gen) throw ConfigError("tasks must include 'gen'");
}

std::map<std::string, std::string> RunConfig::to_map() const {
  return {
      {"d_model", std::to_string(d_model)},
      {"n_heads", std::to_string(n_heads)},
      {"enc_layers", std::to_string(enc_layers)},
      {"dec_layers", std::to_string(dec_layers)},
      {"patch_size", std::to_string(patch_size)},
      {"image_size", std::to_string(image_size)},
      {"lr", format_float(lr)},
      {"warmup_steps", std::to_string(warmup_steps)},
      {"batch_size", std::to_string(batch_size)},
      {"epochs", std::to_string(epochs)},
      {"seed", std::to_string(seed)},
      {"beam_size", std::to_string(beam_size)},
      {"min_len", std::to_string(min_len)},
      {"max_len", std::to_string(max_len)},
      {"k_select", std::to_string(k_select)},
      {"mode", mode},
      {"tasks", TaskFlags::parse(tasks).to_string()},
  };
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : to_map()) {
    out += k;
    out.push_back('=');
    out += v;
    out.push_back('\n');
  }
  return out;
}

RunConfig RunConfig::from_map(const std::map<std::string, std::string>& entries) {
  RunConfig c;
  for (const auto& [key, value] : entries) {
    if (key == "d_model") {
      c.d_model = parse_int(key, value);
    } else if (key == "n_heads") {
      c.n_heads = parse_int(key, value);
    } else if (key == "enc_layers") {
      c.enc_layers = parse_int(key, value);
    } else if (key == "dec_layers") {
      c.dec_layers = parse_int(key, value);
    } else if (key == "patch_size") {
      c.patch_size = parse_int(key, value);
    } else if (key == "image_size") {
      c.image_size = parse_int(key, value);
    } else if (key == "lr") {
      c.lr = parse_float(key, value);
    } else if (key == "warmup_steps") {
      c.warmup_steps = parse_long(key, value);
    } else if (key == "batch_size") {
      c.batch_size = parse_int(key, value);
    } else if (key == "epochs") {
      c.epochs = parse_int(key, value);
    } else if (key == "seed") {
      c.seed = parse_long(key, value);
    } else if (key == "beam_size") {
      c.beam_size = parse_int(key, value);
    } else if (key == "min_len") {
      c.min_len = parse_int(key, value);
    } else if (key == "max_len") {
      c.max_len = parse_int(key, value);
    } else if (key == "k_select") {
      c.k_select = parse_int(key, value);
    } else if (key == "mode") {
      c.mode = value;
    } else if (key == "tasks") {
      c.tasks = value;
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

RunConfig RunConfig::from_text(const std::string& text) {
  std::map<std::string, std::string> entries;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string trimmed = line;
    auto hash = trimmed.find('#');
    if (hash != std::string::npos) trimmed.resize(hash);
    while (!trimmed.empty() && std::isspace(static_cast<unsigned char>(trimmed.back()))) {
      trimmed.pop_back();
    }
    size_t start = 0;
    while (start < trimmed.size() && std::isspace(static_cast<unsigned char>(trimmed[start]))) {
      ++start;
    }
    trimmed = trimmed.substr(start);
    if (trimmed.empty()) continue;
    auto eq = trimmed.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    std::string key = trimmed.substr(0, eq);
    std::string value = trimmed.substr(eq + 1);
    if (entries.count(key)) {
      throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key +
                        "'");
    }
    entries[key] = value;
  }
  return from_map(entries);
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_text(buf.str());
}

std::vector<std::string> RunConfig::diff_keys(const RunConfig& a, const RunConfig& b) {
  std::vector<std::string> out;
  auto ma = a.to_map();
  auto mb = b.to_map();
  for (const auto& [k, v] : ma) {
    if (mb.at(k) != v) out.push_back(k);
  }
  return out;
}

}  // namespace vilsum
