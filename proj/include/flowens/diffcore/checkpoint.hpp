#pragma once

#include "flowens/core.hpp"
#include "flowens/diffcore/param_store.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace flowens::diff {

// Binary layout (all integers and floats little-endian):
//   "FLNS" | u32 version | u64 param_count | param_count x f64
//   then zero or more sections: 4-byte tag | u64 byte_length | bytes
// A sidecar "<path>.manifest" text file lists one "slice <name> <offset> <size>"
// line per parameter slice, followed by free-form "key=value" lines.

inline constexpr std::array<char, 4> kCheckpointMagic{'F', 'L', 'N', 'S'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class T>
void put_le(std::string& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.append(bytes.data(), bytes.size());
}

template <class T>
T get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw IoError("checkpoint truncated");
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  pos += sizeof(T);
  T v;
  std::memcpy(&v, bytes.data(), sizeof(T));
  return v;
}

}  // namespace detail

/// Byte buffer helper for section payloads.
class SectionWriter {
public:
  template <class T>
  SectionWriter& put(T v) {
    detail::put_le(bytes_, v);
    return *this;
  }
  SectionWriter& put_doubles(std::span<const double> v) {
    put<std::uint64_t>(v.size());
    for (double d : v) put(d);
    return *this;
  }
  const std::string& bytes() const { return bytes_; }

private:
  std::string bytes_;
};

class SectionReader {
public:
  explicit SectionReader(std::string bytes) : bytes_(std::move(bytes)) {}
  template <class T>
  T get() {
    return detail::get_le<T>(bytes_, pos_);
  }
  std::vector<double> get_doubles() {
    const auto n = get<std::uint64_t>();
    std::vector<double> v(n);
    for (auto& d : v) d = get<double>();
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

private:
  std::string bytes_;
  std::size_t pos_ = 0;
};

struct Checkpoint {
  std::vector<double> params;
  std::map<std::string, std::string> sections;        // tag -> payload
  std::vector<Slice> slices;                           // from manifest
  std::map<std::string, std::string> manifest_fields;  // key=value lines
};

inline std::string encode_checkpoint(const ParamStore& store, const std::map<std::string, std::string>& sections) {
  std::string out;
  out.append(kCheckpointMagic.data(), 4);
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint64_t>(out, store.size());
  for (double v : store.values()) detail::put_le(out, v);
  for (const auto& [tag, payload] : sections) {
    if (tag.size() != 4) throw UsageError("checkpoint section tag must be 4 bytes: '" + tag + "'");
    out.append(tag);
    detail::put_le<std::uint64_t>(out, payload.size());
    out.append(payload);
  }
  return out;
}

inline std::string encode_manifest(const ParamStore& store, const std::map<std::string, std::string>& fields) {
  std::ostringstream m;
  for (const auto& s : store.slices()) m << "slice " << s.name << ' ' << s.offset << ' ' << s.size << '\n';
  for (const auto& [k, v] : fields) m << k << '=' << v << '\n';
  return m.str();
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write '" + path + "'");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for '" + path + "'");
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void save_checkpoint(const std::string& path, const ParamStore& store,
                            const std::map<std::string, std::string>& sections = {},
                            const std::map<std::string, std::string>& manifest_fields = {}) {
  write_file(path, encode_checkpoint(store, sections));
  write_file(path + ".manifest", encode_manifest(store, manifest_fields));
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  Checkpoint ck;
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic.data(), 4) != 0)
    throw IoError("not a FLNS checkpoint");
  std::size_t pos = 4;
  const auto version = detail::get_le<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  const auto n = detail::get_le<std::uint64_t>(bytes, pos);
  ck.params.resize(n);
  for (auto& v : ck.params) v = detail::get_le<double>(bytes, pos);
  while (pos < bytes.size()) {
    if (pos + 4 > bytes.size()) throw IoError("checkpoint section header truncated");
    std::string tag = bytes.substr(pos, 4);
    pos += 4;
    const auto len = detail::get_le<std::uint64_t>(bytes, pos);
    if (pos + len > bytes.size()) throw IoError("checkpoint section '" + tag + "' truncated");
    ck.sections[tag] = bytes.substr(pos, len);
    pos += len;
  }
  return ck;
}

inline void parse_manifest(const std::string& text, Checkpoint& ck) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.rfind("slice ", 0) == 0) {
      std::istringstream ls(line.substr(6));
      Slice s;
      ls >> s.name >> s.offset >> s.size;
      if (!ls) throw IoError("bad manifest line: " + line);
      ck.slices.push_back(s);
    } else if (auto eq = line.find('='); eq != std::string::npos) {
      ck.manifest_fields[line.substr(0, eq)] = line.substr(eq + 1);
    } else {
      throw IoError("bad manifest line: " + line);
    }
  }
}

inline Checkpoint load_checkpoint(const std::string& path) {
  Checkpoint ck = decode_checkpoint(read_file(path));
  parse_manifest(read_file(path + ".manifest"), ck);
  return ck;
}

/// Copies checkpoint parameters into a store whose slice layout must match.
inline void restore_params(ParamStore& store, const Checkpoint& ck) {
  if (ck.params.size() != store.size())
    throw IoError("checkpoint has " + std::to_string(ck.params.size()) + " parameters, model expects " +
                  std::to_string(store.size()));
  if (!ck.slices.empty()) {
    if (ck.slices.size() != store.slices().size()) throw IoError("checkpoint slice layout differs from model");
    for (std::size_t i = 0; i < ck.slices.size(); ++i) {
      const auto& a = ck.slices[i];
      const auto& b = store.slices()[i];
      if (a.name != b.name || a.offset != b.offset || a.size != b.size)
        throw IoError("checkpoint slice '" + a.name + "' does not match model slice '" + b.name + "'");
    }
  }
  store.assign(ck.params);
}

}  // namespace flowens::diff
