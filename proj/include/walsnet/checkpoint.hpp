// Self-describing checkpoint container: fixed magic, a JSON manifest of
// named arrays (name, shape, dtype, offset), then raw little-endian array
// data. Holds everything needed to resume training or run inference:
// step, model config, catalog and class-count text, parameters including
// batchnorm running statistics, and optimizer accumulators.
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "walsnet/common.hpp"
#include "walsnet/model.hpp"
#include "walsnet/optim.hpp"

namespace walsnet {

inline constexpr char kCheckpointMagic[8] = {'W', 'N', 'C', 'K', 'P', 'T', '0', '1'};

template <class Real>
struct Checkpoint {
  std::uint64_t step = 0;
  ModelConfig config;
  std::string catalog_text;
  std::string class_counts_text;
  ModelParams<Real> params;
  OptimizerState<Real> opt;
};

template <class Real>
const char* dtype_name() {
  if constexpr (sizeof(Real) == 4) return "f32";
  return "f64";
}

inline nlohmann::json config_to_json(const ModelConfig& cfg) {
  nlohmann::json conv = nlohmann::json::array();
  for (const auto& c : cfg.conv) conv.push_back({{"filters", c.filters}, {"width", c.width}});
  return {{"embedding", to_string(cfg.embedding)},
          {"ngram_order", cfg.ngram_order},
          {"char_order", cfg.char_order},
          {"conv", conv},
          {"lstm_layers", cfg.lstm_layers},
          {"lstm_hidden", cfg.lstm_hidden},
          {"residual", cfg.residual},
          {"dropout", cfg.dropout},
          {"output", to_string(cfg.output)},
          {"n_classes", cfg.n_classes}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  auto emb = embedding_mode_from_string(j.at("embedding").get<std::string>());
  if (!emb) throw ConfigError("unknown embedding mode in checkpoint");
  cfg.embedding = *emb;
  cfg.ngram_order = j.at("ngram_order").get<std::size_t>();
  cfg.char_order = j.at("char_order").get<std::size_t>();
  cfg.conv.clear();
  for (const auto& c : j.at("conv"))
    cfg.conv.push_back({c.at("filters").get<std::size_t>(), c.at("width").get<std::size_t>()});
  cfg.lstm_layers = j.at("lstm_layers").get<std::size_t>();
  cfg.lstm_hidden = j.at("lstm_hidden").get<std::size_t>();
  cfg.residual = j.at("residual").get<bool>();
  cfg.dropout = j.at("dropout").get<double>();
  auto out = output_mode_from_string(j.at("output").get<std::string>());
  if (!out) throw ConfigError("unknown output mode in checkpoint");
  cfg.output = *out;
  cfg.n_classes = j.at("n_classes").get<std::size_t>();
  return cfg;
}

inline void require_same_model(const ModelConfig& stored, const ModelConfig& wanted) {
  if (stored.output != wanted.output)
    throw ConfigError(std::string("checkpoint output mode is ") + to_string(stored.output) +
                      ", requested " + to_string(wanted.output));
  if (config_to_json(stored) != config_to_json(wanted))
    throw ConfigError("checkpoint model config does not match the requested config");
}

namespace detail {

template <class Real>
std::vector<std::pair<std::string, Tensor<Real>*>> checkpoint_arrays(Checkpoint<Real>& ckpt) {
  std::vector<std::pair<std::string, Tensor<Real>*>> out;
  visit_params(ckpt.params, [&](const std::string& name, Tensor<Real>& t, bool) {
    out.emplace_back(name, &t);
  });
  visit_params(ckpt.opt.eg2, [&](const std::string& name, Tensor<Real>& t, bool trainable) {
    if (trainable) out.emplace_back("opt.eg2." + name, &t);
  });
  visit_params(ckpt.opt.edx2, [&](const std::string& name, Tensor<Real>& t, bool trainable) {
    if (trainable) out.emplace_back("opt.edx2." + name, &t);
  });
  return out;
}

}  // namespace detail

template <class Real>
std::string save_checkpoint(Checkpoint<Real>& ckpt) {
  auto arrays = detail::checkpoint_arrays(ckpt);
  nlohmann::json manifest;
  manifest["format"] = "walsnet-checkpoint";
  manifest["version"] = 1;
  manifest["step"] = ckpt.step;
  manifest["dtype"] = dtype_name<Real>();
  manifest["config"] = config_to_json(ckpt.config);
  manifest["catalog"] = ckpt.catalog_text;
  manifest["class_counts"] = ckpt.class_counts_text;
  std::uint64_t offset = 0;
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [name, tensor] : arrays) {
    entries.push_back({{"name", name},
                       {"shape", tensor->shape},
                       {"dtype", dtype_name<Real>()},
                       {"offset", offset},
                       {"count", tensor->data.size()}});
    offset += tensor->data.size() * sizeof(Real);
  }
  manifest["arrays"] = std::move(entries);
  manifest["data_bytes"] = offset;
  const std::string mtext = manifest.dump();

  std::string buf;
  buf.reserve(16 + mtext.size() + offset);
  buf.append(kCheckpointMagic, sizeof(kCheckpointMagic));
  std::uint64_t mlen = mtext.size();
  char lenb[8];
  std::memcpy(lenb, &mlen, 8);
  buf.append(lenb, 8);
  buf += mtext;
  for (const auto& [name, tensor] : arrays)
    buf.append(reinterpret_cast<const char*>(tensor->data.data()),
               tensor->data.size() * sizeof(Real));
  return buf;
}

template <class Real>
void save_checkpoint_file(Checkpoint<Real>& ckpt, const std::string& path) {
  const std::string buf = save_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write checkpoint: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  out.close();
  if (!out) throw ConfigError("cannot write checkpoint: " + path);
}

template <class Real>
Checkpoint<Real> load_checkpoint(const std::string& buf) {
  auto corrupt = [](const std::string& why) -> std::runtime_error {
    return std::runtime_error("corrupt checkpoint: " + why);
  };
  if (buf.size() < 16) throw corrupt("truncated header");
  if (std::memcmp(buf.data(), kCheckpointMagic, 8) != 0) throw corrupt("bad magic");
  std::uint64_t mlen = 0;
  std::memcpy(&mlen, buf.data() + 8, 8);
  if (16 + mlen > buf.size()) throw corrupt("truncated manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(buf.substr(16, mlen));
  } catch (const nlohmann::json::exception&) {
    throw corrupt("unreadable manifest");
  }
  Checkpoint<Real> ckpt;
  try {
    if (manifest.at("format") != "walsnet-checkpoint" || manifest.at("version") != 1)
      throw corrupt("unknown format");
    if (manifest.at("dtype") != dtype_name<Real>())
      throw ConfigError("checkpoint holds " + manifest.at("dtype").get<std::string>() +
                        " arrays, expected " + dtype_name<Real>());
    ckpt.step = manifest.at("step").get<std::uint64_t>();
    ckpt.config = config_from_json(manifest.at("config"));
    ckpt.catalog_text = manifest.at("catalog").get<std::string>();
    ckpt.class_counts_text = manifest.at("class_counts").get<std::string>();
  } catch (const nlohmann::json::exception&) {
    throw corrupt("incomplete manifest");
  }
  ckpt.params = make_params<Real>(ckpt.config);
  ckpt.opt = init_optimizer(ckpt.params);

  const std::uint64_t data_begin = 16 + mlen;
  const std::uint64_t data_bytes = manifest.at("data_bytes").get<std::uint64_t>();
  if (data_begin + data_bytes != buf.size()) throw corrupt("truncated data section");

  std::map<std::string, const nlohmann::json*> by_name;
  for (const auto& e : manifest.at("arrays")) by_name[e.at("name").get<std::string>()] = &e;
  auto arrays = detail::checkpoint_arrays(ckpt);
  if (by_name.size() != arrays.size()) throw corrupt("array set does not match the config");
  for (auto& [name, tensor] : arrays) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw corrupt("missing array: " + name);
    const auto& e = *it->second;
    const auto shape = e.at("shape").template get<std::vector<std::size_t>>();
    if (shape != tensor->shape) throw ConfigError("checkpoint shape mismatch for " + name);
    if (e.at("dtype") != dtype_name<Real>()) throw corrupt("mixed dtypes");
    const std::uint64_t off = e.at("offset").template get<std::uint64_t>();
    const std::uint64_t count = e.at("count").template get<std::uint64_t>();
    if (count != tensor->data.size()) throw corrupt("count mismatch for " + name);
    if (off + count * sizeof(Real) > data_bytes) throw corrupt("array out of bounds: " + name);
    std::memcpy(tensor->data.data(), buf.data() + data_begin + off, count * sizeof(Real));
  }
  return ckpt;
}

template <class Real>
Checkpoint<Real> load_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return load_checkpoint<Real>(buf);
}

// Scalar type stored in a checkpoint file ("f32" or "f64"), read from the
// manifest alone.
inline std::string checkpoint_dtype_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read checkpoint: " + path);
  char header[16];
  in.read(header, 16);
  if (in.gcount() != 16 || std::memcmp(header, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("corrupt checkpoint: bad magic");
  std::uint64_t mlen = 0;
  std::memcpy(&mlen, header + 8, 8);
  std::string mtext(mlen, '\0');
  in.read(mtext.data(), static_cast<std::streamsize>(mlen));
  if (static_cast<std::uint64_t>(in.gcount()) != mlen)
    throw std::runtime_error("corrupt checkpoint: truncated manifest");
  try {
    return nlohmann::json::parse(mtext).at("dtype").get<std::string>();
  } catch (const nlohmann::json::exception&) {
    throw std::runtime_error("corrupt checkpoint: unreadable manifest");
  }
}

}  // namespace walsnet
