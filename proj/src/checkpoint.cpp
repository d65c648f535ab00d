#include "fact/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace fact::nn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'F', 'A', 'C', 'T', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

void write_string(std::ostream& os, const std::string& s) {
  write_pod<uint32_t>(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
  const uint32_t n = read_pod<uint32_t>(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw std::runtime_error("checkpoint: truncated string");
  return s;
}

void write_f32_array(std::ostream& os, const std::vector<double>& v) {
  write_pod<uint64_t>(os, v.size());
  for (double x : v) write_pod<float>(os, static_cast<float>(x));
}

std::vector<double> read_f32_array(std::istream& is) {
  const uint64_t n = read_pod<uint64_t>(is);
  std::vector<double> v(n);
  for (uint64_t i = 0; i < n; ++i) v[i] = read_pod<float>(is);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open for write: " + path);
  os.write(kMagic, sizeof(kMagic));
  write_pod<uint32_t>(os, kVersion);
  write_string(os, ckpt.arch_json);
  write_pod<uint32_t>(os, static_cast<uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    write_string(os, name);
    write_pod<uint32_t>(os, static_cast<uint32_t>(t.shape.size()));
    for (int64_t d : t.shape) write_pod<int64_t>(os, d);
    for (double x : t.data) write_pod<float>(os, static_cast<float>(x));
  }
  write_pod<uint8_t>(os, ckpt.has_adam ? 1 : 0);
  if (ckpt.has_adam) {
    write_pod<int64_t>(os, ckpt.adam_t);
    write_pod<uint32_t>(os, static_cast<uint32_t>(ckpt.adam_slots.size()));
    for (const auto& slot : ckpt.adam_slots) {
      write_f32_array(os, slot.m);
      write_f32_array(os, slot.v);
    }
  }
  if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic: " + path);
  const uint32_t version = read_pod<uint32_t>(is);
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported format version");

  Checkpoint ckpt;
  ckpt.arch_json = read_string(is);
  const uint32_t n = read_pod<uint32_t>(is);
  for (uint32_t i = 0; i < n; ++i) {
    const std::string name = read_string(is);
    const uint32_t rank = read_pod<uint32_t>(is);
    std::vector<int64_t> shape(rank);
    for (uint32_t a = 0; a < rank; ++a) shape[a] = read_pod<int64_t>(is);
    Tensor t(shape);
    for (double& x : t.data) x = read_pod<float>(is);
    ckpt.tensors.emplace_back(name, std::move(t));
  }
  ckpt.has_adam = read_pod<uint8_t>(is) != 0;
  if (ckpt.has_adam) {
    ckpt.adam_t = read_pod<int64_t>(is);
    const uint32_t ns = read_pod<uint32_t>(is);
    ckpt.adam_slots.resize(ns);
    for (uint32_t i = 0; i < ns; ++i) {
      ckpt.adam_slots[i].m = read_f32_array(is);
      ckpt.adam_slots[i].v = read_f32_array(is);
    }
  }
  return ckpt;
}

Checkpoint checkpoint_from_graph(Graph& graph, const std::string& arch_json,
                                 const AdamState* adam) {
  Checkpoint ckpt;
  ckpt.arch_json = arch_json;
  for (NodeId p : graph.parameters())
    ckpt.tensors.emplace_back(graph.node(p).name, graph.value(p));
  for (auto& [name, buf] : graph.buffers()) {
    if (buf->empty()) continue;  // batch norm not run yet
    Tensor t({static_cast<int64_t>(buf->size())});
    t.data = *buf;
    ckpt.tensors.emplace_back(name, std::move(t));
  }
  if (adam) {
    ckpt.has_adam = true;
    ckpt.adam_t = adam->t;
    ckpt.adam_slots = adam->slots;
  }
  return ckpt;
}

void load_into_graph(const Checkpoint& ckpt, Graph& graph) {
  auto find = [&](const std::string& name) -> const Tensor* {
    for (const auto& [n, t] : ckpt.tensors)
      if (n == name) return &t;
    return nullptr;
  };
  for (NodeId p : graph.parameters()) {
    const Tensor* t = find(graph.node(p).name);
    if (!t) throw std::runtime_error("checkpoint: missing parameter " + graph.node(p).name);
    if (t->shape != graph.value(p).shape)
      throw std::runtime_error("checkpoint: shape mismatch for " + graph.node(p).name);
    graph.param_value(p).data = t->data;
  }
  for (auto& [name, buf] : graph.buffers()) {
    const Tensor* t = find(name);
    if (t) *buf = t->data;
  }
}

}  // namespace fact::nn
