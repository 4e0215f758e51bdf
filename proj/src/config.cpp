#include "fspnet/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "fspnet/errors.hpp"

namespace fspnet {

void ModelConfig::validate() const {
  try {
    encoder.validate();
  } catch (const ShapeError& e) {
    throw ConfigError(e.what());
  }
  if (encoder.num_layers != 12) {
    throw ConfigError("config: num_layers must be 12 to feed the decoder, got " +
                      std::to_string(encoder.num_layers));
  }
  if (n_vertices == 0 || n_vertices > encoder.num_tokens()) {
    throw ConfigError("config: n_vertices " + std::to_string(n_vertices) +
                      " must be in [1, " +
                      std::to_string(encoder.num_tokens()) + "]");
  }
  if (encoder.embed_dim % 2 != 0) {
    throw ConfigError("config: embed_dim must be even for the token "
                      "enhancement projections");
  }
  if (decoder_width == 0) throw ConfigError("config: decoder_width must be positive");
  if (learning_rate <= 0) throw ConfigError("config: learning_rate must be positive");
  if (lr_decay_epochs == 0) throw ConfigError("config: lr_decay_epochs must be positive");
  if (lr_decay_factor <= 0) throw ConfigError("config: lr_decay_factor must be positive");
  if (batch_size == 0) throw ConfigError("config: batch_size must be positive");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return static_cast<std::size_t>(x);
  } catch (...) {
    throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (...) {
    throw ConfigError("config: bad number for " + key + ": '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw ConfigError("config: bad flag for " + key + ": '" + v + "'");
}

}  // namespace

ModelConfig parse_config_text(const std::string& text) {
  ModelConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: line " + std::to_string(line_no) +
                        " is not key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key == "image_c") cfg.encoder.image_c = parse_size(key, val);
    else if (key == "image_h") cfg.encoder.image_h = parse_size(key, val);
    else if (key == "image_w") cfg.encoder.image_w = parse_size(key, val);
    else if (key == "patch_size") cfg.encoder.patch_size = parse_size(key, val);
    else if (key == "embed_dim") cfg.encoder.embed_dim = parse_size(key, val);
    else if (key == "num_layers") cfg.encoder.num_layers = parse_size(key, val);
    else if (key == "num_heads") cfg.encoder.num_heads = parse_size(key, val);
    else if (key == "mlp_ratio") cfg.encoder.mlp_ratio = parse_double(key, val);
    else if (key == "final_norm") cfg.encoder.final_norm = parse_bool(key, val);
    else if (key == "n_vertices") cfg.n_vertices = parse_size(key, val);
    else if (key == "decoder_width") cfg.decoder_width = parse_size(key, val);
    else if (key == "seed") cfg.seed = parse_size(key, val);
    else if (key == "learning_rate") cfg.learning_rate = parse_double(key, val);
    else if (key == "lr_decay_epochs") cfg.lr_decay_epochs = parse_size(key, val);
    else if (key == "lr_decay_factor") cfg.lr_decay_factor = parse_double(key, val);
    else if (key == "epochs") cfg.epochs = parse_size(key, val);
    else if (key == "batch_size") cfg.batch_size = parse_size(key, val);
    else throw ConfigError("config: unknown key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

ModelConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

std::string serialize_config(const ModelConfig& cfg) {
  char num[64];
  std::ostringstream os;
  os << "image_c = " << cfg.encoder.image_c << '\n';
  os << "image_h = " << cfg.encoder.image_h << '\n';
  os << "image_w = " << cfg.encoder.image_w << '\n';
  os << "patch_size = " << cfg.encoder.patch_size << '\n';
  os << "embed_dim = " << cfg.encoder.embed_dim << '\n';
  os << "num_layers = " << cfg.encoder.num_layers << '\n';
  os << "num_heads = " << cfg.encoder.num_heads << '\n';
  std::snprintf(num, sizeof(num), "%.17g", cfg.encoder.mlp_ratio);
  os << "mlp_ratio = " << num << '\n';
  os << "final_norm = " << (cfg.encoder.final_norm ? 1 : 0) << '\n';
  os << "n_vertices = " << cfg.n_vertices << '\n';
  os << "decoder_width = " << cfg.decoder_width << '\n';
  os << "seed = " << cfg.seed << '\n';
  std::snprintf(num, sizeof(num), "%.17g", cfg.learning_rate);
  os << "learning_rate = " << num << '\n';
  os << "lr_decay_epochs = " << cfg.lr_decay_epochs << '\n';
  std::snprintf(num, sizeof(num), "%.17g", cfg.lr_decay_factor);
  os << "lr_decay_factor = " << num << '\n';
  os << "epochs = " << cfg.epochs << '\n';
  os << "batch_size = " << cfg.batch_size << '\n';
  return os.str();
}

}  // namespace fspnet
