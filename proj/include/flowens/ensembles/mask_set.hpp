#pragma once

#include "flowens/core.hpp"
#include "flowens/diffcore/checkpoint.hpp"
#include "flowens/diffcore/mlp.hpp"

#include <span>
#include <string>
#include <vector>

namespace flowens::ensembles {

/// M fixed dropout masks, drawn once and never changed. Each mask defines one
/// ensemble component over a shared weight store.
class MaskSet {
public:
  MaskSet() = default;

  MaskSet(std::size_t M, double keep_prob, std::span<const std::size_t> layer_sizes, Rng& rng) {
    if (M == 0) throw ConfigError("ensemble needs at least one component");
    for (std::size_t w = 0; w < M; ++w) {
      for (int attempt = 0;; ++attempt) {
        auto m = keep_prob >= 1.0 ? diff::DropoutMask::ones(layer_sizes)
                                  : diff::DropoutMask::generate(layer_sizes, keep_prob, rng);
        m.keep_prob = keep_prob;
        bool dup = false;
        for (const auto& o : masks_) dup = dup || o == m;
        if (!dup || keep_prob >= 1.0) {
          masks_.push_back(std::move(m));
          break;
        }
        if (attempt > 1000) throw ConfigError("could not draw distinct dropout masks");
      }
    }
    record_hashes();
  }

  /// Wraps existing masks without drawing or checking distinctness.
  static MaskSet wrap(std::vector<diff::DropoutMask> masks) {
    MaskSet s;
    s.masks_ = std::move(masks);
    s.record_hashes();
    return s;
  }

  std::size_t size() const { return masks_.size(); }
  const diff::DropoutMask& operator[](std::size_t w) const { return masks_.at(w); }
  const std::vector<std::uint64_t>& hashes() const { return hashes_; }

  /// Throws StateError if any mask differs from its construction-time hash.
  void verify() const {
    for (std::size_t w = 0; w < masks_.size(); ++w)
      if (masks_[w].hash() != hashes_[w]) throw StateError("dropout mask " + std::to_string(w) + " changed");
  }

  std::string encode() const {
    diff::SectionWriter out;
    out.put<std::uint64_t>(masks_.size());
    for (const auto& m : masks_) {
      out.put<double>(m.keep_prob);
      out.put<std::uint64_t>(m.layers.size());
      for (const auto& l : m.layers) {
        out.put<std::uint64_t>(l.size());
        // Packed bitset, 8 units per byte.
        for (std::size_t i = 0; i < l.size(); i += 8) {
          std::uint8_t byte = 0;
          for (std::size_t b = 0; b < 8 && i + b < l.size(); ++b) byte |= static_cast<std::uint8_t>(l[i + b] << b);
          out.put(byte);
        }
      }
    }
    return out.bytes();
  }

  static MaskSet decode(const std::string& bytes) {
    diff::SectionReader in(bytes);
    MaskSet s;
    const auto M = in.get<std::uint64_t>();
    for (std::uint64_t w = 0; w < M; ++w) {
      diff::DropoutMask m;
      m.keep_prob = in.get<double>();
      const auto L = in.get<std::uint64_t>();
      for (std::uint64_t l = 0; l < L; ++l) {
        const auto n = in.get<std::uint64_t>();
        std::vector<std::uint8_t> bits(n);
        for (std::size_t i = 0; i < n; i += 8) {
          const auto byte = in.get<std::uint8_t>();
          for (std::size_t b = 0; b < 8 && i + b < n; ++b) bits[i + b] = (byte >> b) & 1u;
        }
        m.layers.push_back(std::move(bits));
      }
      s.masks_.push_back(std::move(m));
    }
    if (!in.done()) throw IoError("trailing bytes in mask section");
    s.record_hashes();
    return s;
  }

private:
  void record_hashes() {
    hashes_.clear();
    for (const auto& m : masks_) hashes_.push_back(m.hash());
  }

  std::vector<diff::DropoutMask> masks_;
  std::vector<std::uint64_t> hashes_;
};

}  // namespace flowens::ensembles
