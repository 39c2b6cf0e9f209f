#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "cmcl/error.hpp"
#include "cmcl/model.hpp"

namespace cmcl {

// Layout: "CMCL1\n", a text manifest ("@key value" metadata lines, then one
// "name d0 d1 ..." line per tensor), a blank line, then little-endian blobs
// in manifest order. Blobs are 32-bit floats for float models; double models
// write 64-bit blobs (flagged "@dtype f64") so they round-trip exactly.
inline constexpr std::string_view kCheckpointMagic = "CMCL1";

template <typename T>
struct Checkpoint {
  HierModel<T> model;
  std::map<std::string, std::string> meta;
};

namespace detail {

template <typename T>
constexpr std::string_view dtype_name() {
  return std::is_same_v<T, double> ? "f64" : "f32";
}

template <typename U, typename T>
void put_le(std::string& out, T v) {
  using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t, std::uint32_t>;
  const Bits bits = std::bit_cast<Bits>(static_cast<U>(v));
  for (std::size_t b = 0; b < sizeof(Bits); ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
}

template <typename U>
U get_le(const unsigned char* p) {
  using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t, std::uint32_t>;
  Bits bits = 0;
  for (std::size_t b = 0; b < sizeof(Bits); ++b) bits |= static_cast<Bits>(p[b]) << (8 * b);
  return std::bit_cast<U>(bits);
}

}  // namespace detail

template <typename T>
std::string serialize_checkpoint(const HierModel<T>& m, const std::map<std::string, std::string>& meta = {}) {
  std::string out(kCheckpointMagic);
  out += '\n';
  out += "@dtype ";
  out += detail::dtype_name<T>();
  out += '\n';
  {
    std::ostringstream d;
    d.precision(17);
    d << m.dropout;
    out += "@dropout " + d.str() + '\n';
  }
  for (const auto& [k, v] : meta) {
    if (k == "dtype" || k == "dropout") continue;
    if (k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw Error("checkpoint metadata must be single-line and key must not contain spaces");
    }
    out += '@' + k + ' ' + v + '\n';
  }
  for (const auto* t : m.tensors()) {
    out += t->name;
    for (auto d : t->shape) out += ' ' + std::to_string(d);
    out += '\n';
  }
  out += '\n';
  for (const auto* t : m.tensors()) {
    for (T v : t->value) detail::put_le<T>(out, v);
  }
  return out;
}

template <typename T>
void save_checkpoint(const HierModel<T>& m, const std::string& path, const std::map<std::string, std::string>& meta = {}) {
  const auto bytes = serialize_checkpoint(m, meta);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path);
}

template <typename T>
Checkpoint<T> parse_checkpoint(const std::string& bytes, const std::string& origin = "checkpoint") {
  auto fail = [&](const std::string& why) { return IoError(origin + ": " + why); };
  std::size_t pos = 0;
  auto next_line = [&](std::string& line) {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string::npos) throw fail("truncated manifest");
    line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
  };
  std::string line;
  if (bytes.compare(0, kCheckpointMagic.size() + 1, std::string(kCheckpointMagic) + "\n") != 0) {
    throw fail("bad magic (not a CMCL1 checkpoint)");
  }
  pos = kCheckpointMagic.size() + 1;

  Checkpoint<T> ck;
  std::vector<std::pair<std::string, std::vector<std::size_t>>> manifest;
  while (true) {
    next_line(line);
    if (line.empty()) break;
    if (line[0] == '@') {
      const auto sp = line.find(' ');
      if (sp == std::string::npos) throw fail("malformed metadata line '" + line + "'");
      ck.meta[line.substr(1, sp - 1)] = line.substr(sp + 1);
      continue;
    }
    std::istringstream in(line);
    std::string name;
    in >> name;
    std::vector<std::size_t> shape;
    std::size_t d = 0;
    while (in >> d) shape.push_back(d);
    if (name.empty() || shape.empty() || !in.eof()) throw fail("malformed manifest line '" + line + "'");
    manifest.emplace_back(std::move(name), std::move(shape));
  }

  const std::string dtype = ck.meta.contains("dtype") ? ck.meta["dtype"] : "f32";
  if (dtype != "f32" && dtype != "f64") throw fail("unknown dtype '" + dtype + "'");
  const std::size_t width = dtype == "f64" ? 8 : 4;

  auto shape_of = [&](const std::string& name) -> const std::vector<std::size_t>& {
    for (const auto& [n, s] : manifest) {
      if (n == name) return s;
    }
    throw fail("manifest lacks tensor '" + name + "'");
  };
  ModelDims dims;
  try {
    dims.vocab = shape_of("emb").at(0);
    dims.emb = shape_of("emb").at(1);
    dims.hidden = shape_of("lstm1.fwd.Wh").at(1);
    dims.pos_tags = shape_of("head.pos.W").at(0);
    dims.lang_tags = shape_of("head.lang.W").at(0);
    dims.sentiment_classes = shape_of("head.sentiment.W").at(0);
    ck.model = HierModel<T>::create(dims);
  } catch (const std::out_of_range&) {
    throw fail("shape mismatch vs manifest");
  } catch (const IoError&) {
    throw;
  } catch (const Error& e) {
    throw fail(std::string("shape mismatch vs manifest: ") + e.what());
  }
  if (ck.meta.contains("dropout")) ck.model.dropout = std::stod(ck.meta["dropout"]);

  auto tensors = ck.model.tensors();
  if (tensors.size() != manifest.size()) throw fail("shape mismatch vs manifest: unexpected tensor count");
  std::size_t expected_bytes = 0;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (manifest[i].first != tensors[i]->name || manifest[i].second != tensors[i]->shape) {
      throw fail("shape mismatch vs manifest at tensor '" + manifest[i].first + "'");
    }
    expected_bytes += tensors[i]->size() * width;
  }
  const std::size_t blob_bytes = bytes.size() - pos;
  if (blob_bytes < expected_bytes) throw fail("truncated tensor data");
  if (blob_bytes > expected_bytes) throw fail("manifest/blob length mismatch (trailing bytes)");

  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + pos;
  for (auto* t : tensors) {
    for (auto& v : t->value) {
      v = width == 8 ? static_cast<T>(detail::get_le<double>(p)) : static_cast<T>(detail::get_le<float>(p));
      p += width;
    }
  }
  return ck;
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint<T>(bytes, path);
}

}  // namespace cmcl
