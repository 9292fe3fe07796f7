#pragma once

#include <span>
#include <string>

#include "json.hpp"
#include "ultr/nn/layers.hpp"

namespace ultr::nn {

inline constexpr int kCheckpointVersion = 1;

/// {"format": "ultr-checkpoint", "version": 1, "meta": {...},
///  "tensors": [{"name", "kind": "param"|"buffer", "shape": [r, c], "values": [...]}]}
nlohmann::json checkpoint_to_json(std::span<const Param> params, std::span<const Buffer> buffers,
                                  const nlohmann::json& meta = nlohmann::json::object());

/// Copies tensors into matching params/buffers by name. Every target must be
/// present with the same shape; throws ValidationError otherwise.
void load_checkpoint(const nlohmann::json& doc, std::span<const Param> params,
                     std::span<const Buffer> buffers);

}  // namespace ultr::nn
