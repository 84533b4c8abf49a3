#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "buddynet/postproc.hpp"
#include "buddynet/retrieval.hpp"
#include "buddynet/trainer.hpp"

namespace buddynet {

// Shortest decimal text that parses back to the same double.
std::string format_real(double value);
double parse_real(const std::string& text, const std::string& what);
std::size_t parse_count(const std::string& text, const std::string& what);

// Flat `key = value` text. Blank lines and lines starting with '#' are
// skipped; a key may appear once.
using ConfigMap = std::map<std::string, std::string>;
ConfigMap parse_config(const std::string& text, const std::string& context = "config");
std::string print_config(const ConfigMap& config);
ConfigMap read_config(const std::filesystem::path& path);

struct Settings {
  TrainingConfig training;
  DiffusionConfig diffusion;
  RetrievalOptions retrieval;
  // Append assistant embeddings to the master's at inference.
  bool concat_assistant = false;
  bool operator==(const Settings&) const;
};

// Every documented key, in print order.
std::vector<std::string> config_keys();
// Unknown keys and malformed values raise ValidationError.
void apply_config(const ConfigMap& config, Settings& settings);
ConfigMap to_config(const Settings& settings);

}  // namespace buddynet
