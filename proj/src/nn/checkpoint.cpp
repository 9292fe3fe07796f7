#include "ultr/nn/checkpoint.hpp"

#include <map>

namespace ultr::nn {
namespace {

nlohmann::json tensor_json(const std::string& name, const char* kind, const Matrix& m) {
  return nlohmann::json{{"name", name},
                        {"kind", kind},
                        {"shape", {m.rows(), m.cols()}},
                        {"values", std::vector<double>(m.values().begin(), m.values().end())}};
}

void copy_tensor(const nlohmann::json& t, Matrix& target, const std::string& name) {
  const auto shape = t.at("shape").get<std::vector<std::size_t>>();
  if (shape.size() != 2 || shape[0] != target.rows() || shape[1] != target.cols()) {
    throw ValidationError("checkpoint tensor " + name + " has the wrong shape");
  }
  const auto values = t.at("values").get<std::vector<double>>();
  if (values.size() != target.size()) throw ValidationError("checkpoint tensor " + name + " is truncated");
  std::copy(values.begin(), values.end(), target.values().begin());
}

}  // namespace

nlohmann::json checkpoint_to_json(std::span<const Param> params, std::span<const Buffer> buffers,
                                  const nlohmann::json& meta) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& p : params) tensors.push_back(tensor_json(p.name, "param", *p.value));
  for (const auto& b : buffers) tensors.push_back(tensor_json(b.name, "buffer", *b.value));
  return nlohmann::json{{"format", "ultr-checkpoint"},
                        {"version", kCheckpointVersion},
                        {"meta", meta},
                        {"tensors", tensors}};
}

void load_checkpoint(const nlohmann::json& doc, std::span<const Param> params,
                     std::span<const Buffer> buffers) {
  try {
    if (doc.at("format").get<std::string>() != "ultr-checkpoint") {
      throw ValidationError("not an ultr checkpoint");
    }
    if (doc.at("version").get<int>() != kCheckpointVersion) {
      throw ValidationError("unsupported checkpoint version");
    }
    std::map<std::string, const nlohmann::json*> by_name;
    for (const auto& t : doc.at("tensors")) by_name[t.at("name").get<std::string>()] = &t;
    const auto find = [&](const std::string& name) -> const nlohmann::json& {
      const auto it = by_name.find(name);
      if (it == by_name.end()) throw ValidationError("checkpoint is missing tensor " + name);
      return *it->second;
    };
    for (const auto& p : params) copy_tensor(find(p.name), *p.value, p.name);
    for (const auto& b : buffers) copy_tensor(find(b.name), *b.value, b.name);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed checkpoint: ") + e.what());
  }
}

}  // namespace ultr::nn
