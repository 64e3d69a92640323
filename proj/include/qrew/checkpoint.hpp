#ifndef QREW_CHECKPOINT_HPP
#define QREW_CHECKPOINT_HPP

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qrew/model.hpp"

namespace qrew {

// Checkpoint container: a plain-text header (format version, kind, one-line
// JSON metadata) followed by named raw little-endian double arrays in
// row-major order. Adapters and classifiers checkpoint separately from the
// base and record the base fingerprint they were trained against.

struct Container {
  std::string kind;
  nlohmann::json meta;
  std::vector<std::pair<std::string, ad::Matrix>> tensors;
};

void write_container(const std::string& path, const Container& container);
Container read_container(const std::string& path);

nlohmann::json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);

void save_base(const std::string& path, const BaseWeights& base,
               const Vocab& vocab);

struct LoadedBase {
  BaseWeights base;
  Vocab vocab;
  std::string fingerprint;
};
LoadedBase load_base(const std::string& path);

void save_adapters(const std::string& path, const AdapterSet& adapters,
                   const ModelConfig& config,
                   const std::string& base_fingerprint);

struct LoadedAdapters {
  AdapterSet adapters;
  std::string base_fingerprint;
};
LoadedAdapters load_adapters(const std::string& path);

}  // namespace qrew

#endif  // QREW_CHECKPOINT_HPP
