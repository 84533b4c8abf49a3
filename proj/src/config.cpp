#include "buddynet/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "buddynet/errors.hpp"

namespace buddynet {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

bool parse_bool(const std::string& text, const std::string& what) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ValidationError(what + ": expected true or false, got '" + text + "'");
}

std::uint64_t parse_u64(const std::string& text, const std::string& what) {
  std::uint64_t v = 0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size()) {
    throw ValidationError(what + ": expected a non-negative integer, got '" + text + "'");
  }
  return v;
}

struct Key {
  std::string name;
  std::function<std::string(const Settings&)> get;
  std::function<void(Settings&, const std::string&)> set;
};

template <class Getter>
Key real(std::string name, Getter ref) {
  return Key{name, [ref](const Settings& s) { return format_real(ref(s)); },
             [ref, name](Settings& s, const std::string& v) { ref(s) = parse_real(v, name); }};
}

template <class Getter>
Key count(std::string name, Getter ref) {
  return Key{name, [ref](const Settings& s) { return std::to_string(ref(s)); },
             [ref, name](Settings& s, const std::string& v) { ref(s) = parse_count(v, name); }};
}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = [] {
    std::vector<Key> k;
    k.push_back(real("lambda", [](auto& s) -> auto& { return s.training.lambda; }));
    k.push_back(count("batch_size", [](auto& s) -> auto& { return s.training.batch_size; }));
    k.push_back(count("epochs", [](auto& s) -> auto& { return s.training.epochs; }));
    k.push_back(real("learning_rate", [](auto& s) -> auto& { return s.training.learning_rate; }));
    k.push_back(real("min_learning_rate", [](auto& s) -> auto& { return s.training.min_learning_rate; }));
    k.push_back(count("warmup_epochs", [](auto& s) -> auto& { return s.training.warmup_epochs; }));
    k.push_back(real("weight_decay", [](auto& s) -> auto& { return s.training.optimizer.weight_decay; }));
    k.push_back(real("beta1", [](auto& s) -> auto& { return s.training.optimizer.beta1; }));
    k.push_back(real("beta2", [](auto& s) -> auto& { return s.training.optimizer.beta2; }));
    k.push_back(real("epsilon", [](auto& s) -> auto& { return s.training.optimizer.epsilon; }));
    k.push_back(Key{"seed", [](const Settings& s) { return std::to_string(s.training.seed); },
                    [](Settings& s, const std::string& v) { s.training.seed = parse_u64(v, "seed"); }});
    k.push_back(real("kl_temperature", [](auto& s) -> auto& { return s.training.kl_temperature; }));
    k.push_back(Key{"kl_direction", [](const Settings& s) { return to_string(s.training.kl_direction); },
                    [](Settings& s, const std::string& v) { s.training.kl_direction = parse_kl_direction(v); }});
    k.push_back(Key{"wt_direction", [](const Settings& s) { return to_string(s.training.wt_direction); },
                    [](Settings& s, const std::string& v) { s.training.wt_direction = parse_transfer_direction(v); }});
    k.push_back(Key{"wt_cadence", [](const Settings& s) { return to_string(s.training.wt_cadence); },
                    [](Settings& s, const std::string& v) { s.training.wt_cadence = parse_transfer_cadence(v); }});
    k.push_back(Key{"master_crops", [](const Settings& s) { return to_string(s.training.master_crops); },
                    [](Settings& s, const std::string& v) { s.training.master_crops = parse_crop_selection(v); }});
    k.push_back(Key{"assistant_crops", [](const Settings& s) { return to_string(s.training.assistant_crops); },
                    [](Settings& s, const std::string& v) { s.training.assistant_crops = parse_crop_selection(v); }});
    k.push_back(Key{"checkpoint_dir",
                    [](const Settings& s) {
                      return s.training.checkpoint_dir ? s.training.checkpoint_dir->string() : std::string();
                    },
                    [](Settings& s, const std::string& v) {
                      if (v.empty()) {
                        s.training.checkpoint_dir.reset();
                      } else {
                        s.training.checkpoint_dir = v;
                      }
                    }});
    k.push_back(count("n_global", [](auto& s) -> auto& { return s.training.crops.n_global; }));
    k.push_back(count("n_local", [](auto& s) -> auto& { return s.training.crops.n_local; }));
    k.push_back(count("global_side", [](auto& s) -> auto& { return s.training.crops.global_side; }));
    k.push_back(count("local_side", [](auto& s) -> auto& { return s.training.crops.local_side; }));
    k.push_back(real("global_scale_min", [](auto& s) -> auto& { return s.training.crops.global_scale.min; }));
    k.push_back(real("global_scale_max", [](auto& s) -> auto& { return s.training.crops.global_scale.max; }));
    k.push_back(real("local_scale_min", [](auto& s) -> auto& { return s.training.crops.local_scale.min; }));
    k.push_back(real("local_scale_max", [](auto& s) -> auto& { return s.training.crops.local_scale.max; }));
    k.push_back(real("aspect_min", [](auto& s) -> auto& { return s.training.crops.aspect.min; }));
    k.push_back(real("aspect_max", [](auto& s) -> auto& { return s.training.crops.aspect.max; }));
    k.push_back(count("patch_side", [](auto& s) -> auto& { return s.training.backbone.patch_side; }));
    k.push_back(count("channels", [](auto& s) -> auto& { return s.training.backbone.channels; }));
    k.push_back(count("embed_dim", [](auto& s) -> auto& { return s.training.backbone.embed_dim; }));
    k.push_back(count("num_layers", [](auto& s) -> auto& { return s.training.backbone.num_layers; }));
    k.push_back(count("num_heads", [](auto& s) -> auto& { return s.training.backbone.num_heads; }));
    k.push_back(real("mlp_ratio", [](auto& s) -> auto& { return s.training.backbone.mlp_ratio; }));
    k.push_back(count("out_dim", [](auto& s) -> auto& { return s.training.backbone.out_dim; }));
    k.push_back(real("arcface_scale", [](auto& s) -> auto& { return s.training.head.scale; }));
    k.push_back(real("arcface_margin", [](auto& s) -> auto& { return s.training.head.margin; }));
    k.push_back(real("arcface_margin_max", [](auto& s) -> auto& { return s.training.head.margin_max; }));
    k.push_back(real("gem_p", [](auto& s) -> auto& { return s.training.head.gem_p; }));
    k.push_back(real("alpha", [](auto& s) -> auto& { return s.diffusion.alpha; }));
    k.push_back(count("graph_k", [](auto& s) -> auto& { return s.diffusion.graph_k; }));
    k.push_back(count("truncation_n", [](auto& s) -> auto& { return s.diffusion.truncation_n; }));
    k.push_back(real("heat_t", [](auto& s) -> auto& { return s.diffusion.heat_t; }));
    k.push_back(count("aqe_top_k", [](auto& s) -> auto& { return s.diffusion.aqe_top_k; }));
    k.push_back(count("rerank_depth", [](auto& s) -> auto& { return s.diffusion.rerank_depth; }));
    k.push_back(Key{"heat_laplacian",
                    [](const Settings& s) {
                      return std::string(s.diffusion.laplacian == HeatLaplacian::kNormalized ? "normalized"
                                                                                              : "unnormalized");
                    },
                    [](Settings& s, const std::string& v) {
                      if (v == "normalized") {
                        s.diffusion.laplacian = HeatLaplacian::kNormalized;
                      } else if (v == "unnormalized") {
                        s.diffusion.laplacian = HeatLaplacian::kUnnormalized;
                      } else {
                        throw ValidationError("heat_laplacian: expected normalized or unnormalized, got '" + v + "'");
                      }
                    }});
    k.push_back(Key{"per_segment_normalize",
                    [](const Settings& s) { return std::string(s.retrieval.per_segment_normalize ? "true" : "false"); },
                    [](Settings& s, const std::string& v) {
                      s.retrieval.per_segment_normalize = parse_bool(v, "per_segment_normalize");
                    }});
    k.push_back(Key{"inference_seed", [](const Settings& s) { return std::to_string(s.retrieval.crop_seed); },
                    [](Settings& s, const std::string& v) { s.retrieval.crop_seed = parse_u64(v, "inference_seed"); }});
    k.push_back(Key{"concat_assistant",
                    [](const Settings& s) { return std::string(s.concat_assistant ? "true" : "false"); },
                    [](Settings& s, const std::string& v) { s.concat_assistant = parse_bool(v, "concat_assistant"); }});
    return k;
  }();
  return table;
}

}  // namespace

std::string format_real(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
  if (ec != std::errc()) throw std::runtime_error("cannot format number");
  return std::string(buf, end);
}

double parse_real(const std::string& text, const std::string& what) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size()) {
    throw ValidationError(what + ": expected a number, got '" + text + "'");
  }
  return v;
}

std::size_t parse_count(const std::string& text, const std::string& what) {
  return static_cast<std::size_t>(parse_u64(text, what));
}

ConfigMap parse_config(const std::string& text, const std::string& context) {
  ConfigMap out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string body = trim(line);
    if (body.empty() || body[0] == '#') continue;
    const std::string where = context + ":" + std::to_string(line_no);
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ValidationError(where + ": expected 'key = value'");
    const std::string key = trim(body.substr(0, eq));
    if (key.empty()) throw ValidationError(where + ": empty key");
    if (!out.emplace(key, trim(body.substr(eq + 1))).second) {
      throw ValidationError(where + ": duplicate key '" + key + "'");
    }
  }
  return out;
}

std::string print_config(const ConfigMap& config) {
  std::string out;
  for (const std::string& key : config_keys()) {
    auto it = config.find(key);
    if (it != config.end()) out += key + " = " + it->second + "\n";
  }
  for (const auto& [key, value] : config) {
    bool known = false;
    for (const Key& k : keys()) known = known || k.name == key;
    if (!known) out += key + " = " + value + "\n";
  }
  return out;
}

ConfigMap read_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str(), path.string());
}

bool Settings::operator==(const Settings& other) const {
  return training == other.training && diffusion == other.diffusion &&
         retrieval.per_segment_normalize == other.retrieval.per_segment_normalize &&
         retrieval.crop_seed == other.retrieval.crop_seed && concat_assistant == other.concat_assistant;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const Key& k : keys()) out.push_back(k.name);
  return out;
}

void apply_config(const ConfigMap& config, Settings& settings) {
  for (const auto& [name, value] : config) {
    const Key* key = nullptr;
    for (const Key& k : keys()) {
      if (k.name == name) key = &k;
    }
    if (!key) throw ValidationError("unknown config key '" + name + "'");
    key->set(settings, value);
  }
}

ConfigMap to_config(const Settings& settings) {
  ConfigMap out;
  for (const Key& k : keys()) out[k.name] = k.get(settings);
  return out;
}

}  // namespace buddynet
