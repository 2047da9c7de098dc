#pragma once

#include "flowens/diffcore/adam.hpp"
#include "flowens/diffcore/checkpoint.hpp"
#include "flowens/ensembles/density_model.hpp"

#include <map>
#include <sstream>
#include <string>

namespace flowens::ensembles::detail {

// Section tags used by model checkpoints.
inline constexpr const char* kConfigTag = "CONF";
inline constexpr const char* kNormTag = "NORM";
inline constexpr const char* kMaskTag = "MASK";
inline constexpr const char* kAdamTag = "ADAM";
inline constexpr const char* kStateTag = "STAT";
inline constexpr const char* kGpDataTag = "GPDT";

inline std::string encode_fields(const std::map<std::string, std::string>& f) {
  std::ostringstream o;
  for (const auto& [k, v] : f) o << k << '=' << v << '\n';
  return o.str();
}

inline std::map<std::string, std::string> decode_fields(const std::string& s) {
  std::map<std::string, std::string> f;
  std::istringstream in(s);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError("bad config line in checkpoint: " + line);
    f[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return f;
}

inline std::string encode_adam(const diff::AdamState& a) {
  diff::SectionWriter w;
  w.put<std::uint64_t>(a.t).put_doubles(a.m).put_doubles(a.v);
  return w.bytes();
}

inline diff::AdamState decode_adam(const std::string& s) {
  diff::SectionReader r(s);
  diff::AdamState a;
  a.t = r.get<std::uint64_t>();
  a.m = r.get_doubles();
  a.v = r.get_doubles();
  return a;
}

inline const std::string& section(const diff::Checkpoint& ck, const char* tag) {
  auto it = ck.sections.find(tag);
  if (it == ck.sections.end()) throw IoError(std::string("checkpoint lacks section ") + tag);
  return it->second;
}

inline std::map<std::string, std::string> manifest_fields(const ModelConfig& cfg) {
  auto f = cfg.to_fields();
  std::map<std::string, std::string> out;
  for (auto& [k, v] : f) out["model." + k] = v;
  return out;
}

}  // namespace flowens::ensembles::detail
