#include "vmae/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "vmae/error.hpp"

namespace vmae {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads are little-endian float32");

void Checkpoint::set(const std::string& key, std::string value) {
  if (key.find_first_of("=\n") != std::string::npos || value.find('\n') != std::string::npos) {
    throw CheckpointError("checkpoint: invalid metadata entry '" + key + "'");
  }
  for (auto& [k, v] : meta) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  meta.emplace_back(key, std::move(value));
}

std::optional<std::string> Checkpoint::get(const std::string& key) const {
  for (const auto& [k, v] : meta) {
    if (k == key) return v;
  }
  return std::nullopt;
}

const std::string& Checkpoint::require(const std::string& key) const {
  for (const auto& [k, v] : meta) {
    if (k == key) return v;
  }
  throw CheckpointError("checkpoint: missing metadata '" + key + "'");
}

void Checkpoint::add(std::string name, Tensor<float> tensor) {
  if (name.empty() || name.find_first_of(" =\n") != std::string::npos) {
    throw CheckpointError("checkpoint: invalid tensor name '" + name + "'");
  }
  if (find(name) != nullptr) throw CheckpointError("checkpoint: duplicate tensor '" + name + "'");
  tensors.emplace_back(std::move(name), std::move(tensor));
}

const Tensor<float>* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

const Tensor<float>& Checkpoint::tensor(const std::string& name) const {
  const auto* t = find(name);
  if (t == nullptr) throw CheckpointError("checkpoint: missing tensor '" + name + "'");
  return *t;
}

std::uint64_t fnv1a64(const void* data, std::size_t size) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

namespace {

constexpr const char* kMagic = "vmae-checkpoint 1";

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t parse_u64(const std::string& text, int base, const std::string& field) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v, base);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw CheckpointError("checkpoint: malformed " + field + " '" + text + "'");
  }
  return v;
}

Shape parse_shape(const std::string& text, const std::string& tensor) {
  Shape shape;
  std::size_t begin = 0;
  while (begin <= text.size()) {
    const auto x = text.find('x', begin);
    const std::string part = text.substr(begin, x == std::string::npos ? std::string::npos : x - begin);
    const auto v = parse_u64(part, 10, "shape of " + tensor);
    if (v == 0) throw CheckpointError("checkpoint: zero extent in shape of " + tensor);
    shape.push_back(static_cast<Index>(v));
    if (x == std::string::npos) break;
    begin = x + 1;
  }
  return shape;
}

std::string shape_field(const Shape& shape) {
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "x" : "") + std::to_string(shape[i]);
  return s;
}

struct TensorEntry {
  std::string name;
  Shape shape;
  std::uint64_t offset = 0;
  std::uint64_t hash = 0;
};

TensorEntry parse_tensor_line(const std::string& line) {
  TensorEntry e;
  std::istringstream fields(line.substr(std::strlen("tensor ")));
  std::string field;
  bool have[5] = {};
  std::string shape_text;
  while (fields >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw CheckpointError("checkpoint: malformed tensor field '" + field + "'");
    const std::string key = field.substr(0, eq);
    const std::string value = field.substr(eq + 1);
    if (key == "name") {
      e.name = value;
      have[0] = true;
    } else if (key == "shape") {
      shape_text = value;
      have[1] = true;
    } else if (key == "offset") {
      e.offset = parse_u64(value, 10, "offset of " + e.name);
      have[2] = true;
    } else if (key == "dtype") {
      if (value != "f32le") throw CheckpointError("checkpoint: unsupported dtype '" + value + "' for " + e.name);
      have[3] = true;
    } else if (key == "hash") {
      if (value.rfind("fnv1a64:", 0) != 0) throw CheckpointError("checkpoint: unsupported hash for " + e.name);
      e.hash = parse_u64(value.substr(8), 16, "hash of " + e.name);
      have[4] = true;
    } else {
      throw CheckpointError("checkpoint: unknown tensor field '" + key + "'");
    }
  }
  static constexpr const char* names[] = {"name", "shape", "offset", "dtype", "hash"};
  for (int i = 0; i < 5; ++i) {
    if (!have[i]) throw CheckpointError("checkpoint: tensor entry missing field '" + std::string(names[i]) + "'");
  }
  e.shape = parse_shape(shape_text, e.name);
  return e;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string header = std::string(kMagic) + "\n";
  for (const auto& [k, v] : ckpt.meta) header += "meta " + k + "=" + v + "\n";
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    const std::size_t bytes = static_cast<std::size_t>(t.size()) * sizeof(float);
    header += "tensor name=" + name + " shape=" + shape_field(t.shape()) + " offset=" + std::to_string(offset) +
              " dtype=f32le hash=fnv1a64:" + hex64(fnv1a64(t.data().data(), bytes)) + "\n";
    offset += bytes;
  }
  header += "payload_bytes=" + std::to_string(offset) + "\nend\n";
  std::string out = std::move(header);
  out.reserve(out.size() + offset);
  for (const auto& [name, t] : ckpt.tensors) {
    out.append(reinterpret_cast<const char*>(t.data().data()), static_cast<std::size_t>(t.size()) * sizeof(float));
  }
  return out;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  std::size_t pos = 0;
  const auto next_line = [&]() -> std::string {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string::npos) throw CheckpointError("checkpoint: truncated manifest");
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  if (next_line() != kMagic) throw CheckpointError("checkpoint: bad magic line");

  Checkpoint ckpt;
  std::vector<TensorEntry> entries;
  std::optional<std::uint64_t> payload_bytes;
  for (;;) {
    const std::string line = next_line();
    if (line == "end") break;
    if (line.rfind("meta ", 0) == 0) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw CheckpointError("checkpoint: malformed meta line '" + line + "'");
      ckpt.meta.emplace_back(line.substr(5, eq - 5), line.substr(eq + 1));
    } else if (line.rfind("tensor ", 0) == 0) {
      entries.push_back(parse_tensor_line(line));
    } else if (line.rfind("payload_bytes=", 0) == 0) {
      payload_bytes = parse_u64(line.substr(14), 10, "payload_bytes");
    } else {
      throw CheckpointError("checkpoint: unrecognized manifest line '" + line + "'");
    }
  }
  if (!payload_bytes) throw CheckpointError("checkpoint: manifest missing field 'payload_bytes'");
  const std::size_t available = bytes.size() - pos;
  if (available != *payload_bytes) {
    throw CheckpointError("checkpoint: payload_bytes declares " + std::to_string(*payload_bytes) + " bytes, file holds " +
                          std::to_string(available));
  }

  std::uint64_t expected_offset = 0;
  for (const auto& e : entries) {
    Tensor<float> t(e.shape);
    const std::size_t size = static_cast<std::size_t>(t.size()) * sizeof(float);
    if (e.offset != expected_offset || e.offset + size > *payload_bytes) {
      throw CheckpointError("checkpoint: offset of " + e.name + " inconsistent with payload");
    }
    std::memcpy(t.data().data(), bytes.data() + pos + e.offset, size);
    if (fnv1a64(t.data().data(), size) != e.hash) throw CheckpointError("checkpoint: hash mismatch for " + e.name);
    expected_offset += size;
    ckpt.add(e.name, std::move(t));
  }
  if (expected_offset != *payload_bytes) throw CheckpointError("checkpoint: payload_bytes disagrees with tensor entries");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("checkpoint: cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace vmae
