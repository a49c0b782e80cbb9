#include <fstream>
#include <sstream>

#include "agcn/optim.hpp"

namespace agcn {

NormMode norm_mode_from_name(const std::string& name) {
  if (name == "agc") return NormMode::agc;
  if (name == "bn") return NormMode::bn;
  if (name == "none") return NormMode::none;
  throw std::invalid_argument("unknown norm mode '" + name + "' (agc|bn|none)");
}

std::string norm_mode_name(NormMode m) {
  switch (m) {
    case NormMode::agc: return "agc";
    case NormMode::bn: return "bn";
    default: return "none";
  }
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_on_off(const std::string& key, const std::string& v) {
  if (v == "on") return true;
  if (v == "off") return false;
  throw std::invalid_argument("config: " + key + " must be on or off, got '" + v + "'");
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const int out = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad integer for " + key + ": '" + v + "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const unsigned long long out = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return static_cast<std::uint64_t>(out);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad unsigned integer for " + key + ": '" + v + "'");
  }
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad real for " + key + ": '" + v + "'");
  }
}

void apply(TrainConfig& c, const std::string& key, const std::string& value) {
  if (key == "norm") c.norm_mode = norm_mode_from_name(value);
  else if (key == "base_lr") c.base_lr = parse_real(key, value);
  else if (key == "minibatch") c.minibatch_size = parse_int(key, value);
  else if (key == "momentum") c.momentum = parse_real(key, value);
  else if (key == "lr_scale") c.lr_scale = parse_on_off(key, value);
  else if (key == "gems") c.gems_enabled = parse_on_off(key, value);
  else if (key == "identity_init") c.identity_init = parse_on_off(key, value);
  else if (key == "seed") c.seed = parse_u64(key, value);
  else if (key == "epochs") c.epochs = parse_int(key, value);
  else if (key == "train_data") c.train_data = value;
  else if (key == "val_data") c.val_data = value;
  else if (key == "data_h") c.data_h = parse_int(key, value);
  else if (key == "data_w") c.data_w = parse_int(key, value);
  else if (key == "data_classes") c.data_classes = parse_int(key, value);
  else if (key == "data_train") c.data_train = parse_int(key, value);
  else if (key == "data_val") c.data_val = parse_int(key, value);
  else if (key == "data_seed") c.data_seed = parse_u64(key, value);
  else throw std::invalid_argument("config: unknown key '" + key + "'");
}

}  // namespace

void validate_config(const TrainConfig& c) {
  if (c.minibatch_size < 1) throw std::invalid_argument("config: minibatch must be >= 1");
  if (c.epochs < 0) throw std::invalid_argument("config: epochs must be >= 0");
  if (!(c.base_lr > 0)) throw std::invalid_argument("config: base_lr must be positive");
  if (c.momentum < 0 || c.momentum >= 1) {
    throw std::invalid_argument("config: momentum must be in [0,1)");
  }
  if (c.data_h < 1 || c.data_w < 1 || c.data_classes < 2 || c.data_train < 0 || c.data_val < 1) {
    throw std::invalid_argument("config: bad dataset extents");
  }
}

TrainConfig parse_config_text(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key=value, got '" + line + "'");
    }
    apply(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  validate_config(c);
  return c;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string config_to_text(const TrainConfig& c) {
  std::ostringstream os;
  os << "norm = " << norm_mode_name(c.norm_mode) << "\n";
  os << "base_lr = " << c.base_lr << "\n";
  os << "minibatch = " << c.minibatch_size << "\n";
  os << "momentum = " << c.momentum << "\n";
  os << "lr_scale = " << (c.lr_scale ? "on" : "off") << "\n";
  os << "gems = " << (c.gems_enabled ? "on" : "off") << "\n";
  os << "identity_init = " << (c.identity_init ? "on" : "off") << "\n";
  os << "seed = " << c.seed << "\n";
  os << "epochs = " << c.epochs << "\n";
  if (!c.train_data.empty()) os << "train_data = " << c.train_data << "\n";
  if (!c.val_data.empty()) os << "val_data = " << c.val_data << "\n";
  os << "data_h = " << c.data_h << "\n";
  os << "data_w = " << c.data_w << "\n";
  os << "data_classes = " << c.data_classes << "\n";
  os << "data_train = " << c.data_train << "\n";
  os << "data_val = " << c.data_val << "\n";
  os << "data_seed = " << c.data_seed << "\n";
  return os.str();
}

void save_config(const TrainConfig& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("config: cannot write '" + path + "'");
  out << config_to_text(c);
}

}  // namespace agcn
