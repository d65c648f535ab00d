#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fact/graph.hpp"
#include "fact/optim.hpp"

namespace fact::nn {

// Versioned binary model checkpoint: magic, format version, architecture
// config blob (JSON), named tensors as little-endian f32 with shape headers,
// optional ADAM state.
struct Checkpoint {
  std::string arch_json;
  std::vector<std::pair<std::string, Tensor>> tensors;
  bool has_adam = false;
  long long adam_t = 0;
  std::vector<AdamParamState> adam_slots;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Snapshot of all graph parameters and batch-norm buffers.
Checkpoint checkpoint_from_graph(Graph& graph, const std::string& arch_json,
                                 const AdamState* adam = nullptr);
// Restores parameters/buffers by name; throws on any missing tensor.
void load_into_graph(const Checkpoint& ckpt, Graph& graph);

}  // namespace fact::nn
