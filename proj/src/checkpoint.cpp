#include "qrew/checkpoint.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "qrew/errors.hpp"

namespace qrew {

using json = nlohmann::json;

namespace {

constexpr const char* kMagic = "QREW-CKPT v1";

void fill_params(std::vector<std::pair<std::string, ad::Tensor>> params,
                 const Container& container, const std::string& what) {
  std::map<std::string, const ad::Matrix*> by_name;
  for (const auto& [name, m] : container.tensors) by_name[name] = &m;
  for (auto& [name, p] : params) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw IoError(what + ": checkpoint is missing tensor '" + name + "'");
    }
    const ad::Matrix& stored = *it->second;
    if (stored.rows() != p.rows() || stored.cols() != p.cols()) {
      throw IoError(what + ": tensor '" + name + "' has shape [" +
                    std::to_string(stored.rows()) + " x " +
                    std::to_string(stored.cols()) + "], expected " +
                    p.shape_str());
    }
    p.mutable_value() = stored;
  }
  if (by_name.size() != params.size()) {
    throw IoError(what + ": checkpoint holds " + std::to_string(by_name.size()) +
                  " tensors, expected " + std::to_string(params.size()));
  }
}

}  // namespace

void write_container(const std::string& path, const Container& container) {
  std::ofstream out(path, std::ios::binary);
  if (!out.good()) {
    throw IoError("cannot write checkpoint: " + path);
  }
  out << kMagic << "\n";
  out << "kind " << container.kind << "\n";
  out << "meta " << container.meta.dump() << "\n";
  out << "tensors " << container.tensors.size() << "\n";
  for (const auto& [name, m] : container.tensors) {
    out << "tensor " << name << " " << m.rows() << " " << m.cols() << "\n";
    for (ad::Index r = 0; r < m.rows(); ++r) {
      for (ad::Index c = 0; c < m.cols(); ++c) {
        const double v = m(r, c);
        out.write(reinterpret_cast<const char*>(&v), sizeof(double));
      }
    }
    out << "\n";
  }
  out << "end\n";
  if (!out.good()) {
    throw IoError("write failed: " + path);
  }
}

Container read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) {
    throw IoError("cannot open checkpoint: " + path);
  }
  std::string line;
  std::getline(in, line);
  if (line != kMagic) {
    throw IoError("not a checkpoint file (bad magic): " + path);
  }
  Container container;
  std::getline(in, line);
  if (line.rfind("kind ", 0) != 0) throw IoError("missing kind line: " + path);
  container.kind = line.substr(5);
  std::getline(in, line);
  if (line.rfind("meta ", 0) != 0) throw IoError("missing meta line: " + path);
  container.meta = json::parse(line.substr(5));
  std::getline(in, line);
  if (line.rfind("tensors ", 0) != 0) {
    throw IoError("missing tensors line: " + path);
  }
  const std::size_t count = std::stoul(line.substr(8));
  for (std::size_t i = 0; i < count; ++i) {
    std::getline(in, line);
    if (line.rfind("tensor ", 0) != 0) {
      throw IoError("missing tensor header in " + path);
    }
    std::istringstream header(line.substr(7));
    std::string name;
    ad::Index rows = 0, cols = 0;
    header >> name >> rows >> cols;
    if (name.empty() || rows < 1 || cols < 1) {
      throw IoError("malformed tensor header in " + path + ": " + line);
    }
    ad::Matrix m(rows, cols);
    for (ad::Index r = 0; r < rows; ++r) {
      for (ad::Index c = 0; c < cols; ++c) {
        double v;
        in.read(reinterpret_cast<char*>(&v), sizeof(double));
        m(r, c) = v;
      }
    }
    if (!in.good()) throw IoError("truncated tensor payload in " + path);
    in.get();  // the separator newline
    container.tensors.emplace_back(std::move(name), std::move(m));
  }
  std::getline(in, line);
  if (line != "end") throw IoError("missing end marker in " + path);
  return container;
}

json config_to_json(const ModelConfig& config) {
  return json{{"vocab_size", config.vocab_size},
              {"d_model", config.d_model},
              {"n_heads", config.n_heads},
              {"n_enc_layers", config.n_enc_layers},
              {"n_dec_layers", config.n_dec_layers},
              {"ffn_dim", config.ffn_dim},
              {"adapter_bottleneck", config.adapter_bottleneck},
              {"max_seq_len", config.max_seq_len},
              {"dropout", config.dropout}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig config;
  config.vocab_size = j.at("vocab_size").get<int>();
  config.d_model = j.at("d_model").get<int>();
  config.n_heads = j.at("n_heads").get<int>();
  config.n_enc_layers = j.at("n_enc_layers").get<int>();
  config.n_dec_layers = j.at("n_dec_layers").get<int>();
  config.ffn_dim = j.at("ffn_dim").get<int>();
  config.adapter_bottleneck = j.at("adapter_bottleneck").get<int>();
  config.max_seq_len = j.at("max_seq_len").get<int>();
  config.dropout = j.at("dropout").get<double>();
  config.validate();
  return config;
}

void save_base(const std::string& path, const BaseWeights& base,
               const Vocab& vocab) {
  Container container;
  container.kind = "base";
  container.meta["config"] = config_to_json(base.config());
  container.meta["vocab"] = vocab.regular_tokens();
  container.meta["fingerprint"] = base.fingerprint();
  for (const auto& [name, p] : base.named_params()) {
    container.tensors.emplace_back(name, p.value());
  }
  write_container(path, container);
}

LoadedBase load_base(const std::string& path) {
  Container container = read_container(path);
  if (container.kind != "base") {
    throw IoError("expected a base checkpoint, got kind '" + container.kind +
                  "' in " + path);
  }
  LoadedBase loaded;
  const ModelConfig config = config_from_json(container.meta.at("config"));
  loaded.base = BaseWeights(config, 0);
  fill_params(loaded.base.named_params(), container, "base");
  loaded.vocab = Vocab::from_tokens(
      container.meta.at("vocab").get<std::vector<std::string>>());
  loaded.fingerprint = container.meta.at("fingerprint").get<std::string>();
  if (loaded.base.fingerprint() != loaded.fingerprint) {
    throw IoError("base checkpoint fingerprint mismatch in " + path);
  }
  if (loaded.vocab.size() != config.vocab_size) {
    throw IoError("vocabulary size " + std::to_string(loaded.vocab.size()) +
                  " does not match config vocab_size " +
                  std::to_string(config.vocab_size));
  }
  return loaded;
}

void save_adapters(const std::string& path, const AdapterSet& adapters,
                   const ModelConfig& config,
                   const std::string& base_fingerprint) {
  Container container;
  container.kind = "adapters";
  container.meta["config"] = config_to_json(config);
  container.meta["class_label"] = adapters.class_label();
  container.meta["base_fingerprint"] = base_fingerprint;
  for (const auto& [name, p] : adapters.named_params()) {
    container.tensors.emplace_back(name, p.value());
  }
  write_container(path, container);
}

LoadedAdapters load_adapters(const std::string& path) {
  Container container = read_container(path);
  if (container.kind != "adapters") {
    throw IoError("expected an adapter checkpoint, got kind '" +
                  container.kind + "' in " + path);
  }
  const ModelConfig config = config_from_json(container.meta.at("config"));
  LoadedAdapters loaded;
  loaded.adapters = AdapterSet(
      config, container.meta.at("class_label").get<std::string>(), 0);
  fill_params(loaded.adapters.named_params(), container, "adapters");
  loaded.base_fingerprint =
      container.meta.at("base_fingerprint").get<std::string>();
  return loaded;
}

}  // namespace qrew
