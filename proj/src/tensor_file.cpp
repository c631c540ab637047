#include "mgeo/tensor_file.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include "json.hpp"

#include "mgeo/tensor.hpp"

static_assert(std::endian::native == std::endian::little, "payloads are stored little-endian");

namespace mgeo {

using json = nlohmann::json;

std::size_t NamedTensor::element_count() const {
  std::size_t n = 1;
  for (auto d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

const NamedTensor& TensorFile::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw Error("missing tensor '" + name + "'");
  return it->second;
}

void write_tensor_file(const std::filesystem::path& path, const TensorFile& file) {
  json header = json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : file.tensors) {
    if (t.element_count() != t.values.size())
      throw Error("tensor '" + name + "' shape does not match its value count");
    const std::uint64_t bytes = t.values.size() * sizeof(float);
    header[name] = {{"dtype", "F32"}, {"shape", t.shape}, {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  if (!file.metadata.empty()) header["__metadata__"] = file.metadata;

  std::string text = header.dump();
  while (text.size() % 8 != 0) text.push_back(' ');

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  std::uint64_t n = text.size();
  unsigned char len[8];
  for (int i = 0; i < 8; ++i) len[i] = static_cast<unsigned char>((n >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(len), 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : file.tensors)
    out.write(reinterpret_cast<const char*>(t.values.data()),
              static_cast<std::streamsize>(t.values.size() * sizeof(float)));
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

TensorFile read_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open tensor file '" + path.string() + "'");
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 8) throw Error("tensor file '" + path.string() + "' is truncated");

  std::uint64_t header_len = 0;
  for (int i = 0; i < 8; ++i)
    header_len |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
  if (header_len > buf.size() - 8) throw Error("tensor file header overruns the file");

  json header;
  try {
    header = json::parse(buf.begin() + 8, buf.begin() + 8 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const json::exception& e) {
    throw Error(std::string("tensor file header is not valid JSON: ") + e.what());
  }

  const std::size_t base = 8 + header_len;
  TensorFile file;
  for (auto it = header.begin(); it != header.end(); ++it) {
    if (it.key() == "__metadata__") {
      for (auto m = it->begin(); m != it->end(); ++m) file.metadata[m.key()] = m->get<std::string>();
      continue;
    }
    const auto& entry = *it;
    const auto dtype = entry.at("dtype").get<std::string>();
    if (dtype != "F32") throw Error("tensor '" + it.key() + "' has unsupported dtype " + dtype);
    NamedTensor t;
    t.shape = entry.at("shape").get<std::vector<std::int64_t>>();
    const auto offsets = entry.at("data_offsets").get<std::vector<std::uint64_t>>();
    if (offsets.size() != 2 || offsets[1] < offsets[0]) throw Error("tensor '" + it.key() + "' has bad offsets");
    const std::uint64_t bytes = offsets[1] - offsets[0];
    if (bytes != t.element_count() * sizeof(float))
      throw Error("tensor '" + it.key() + "' byte range does not match its shape");
    if (base + offsets[1] > buf.size()) throw Error("tensor '" + it.key() + "' payload is truncated");
    t.values.resize(t.element_count());
    std::memcpy(t.values.data(), buf.data() + base + offsets[0], bytes);
    file.tensors.emplace(it.key(), std::move(t));
  }
  return file;
}

}  // namespace mgeo
