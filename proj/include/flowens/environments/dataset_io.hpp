#pragma once

#include "flowens/core.hpp"
#include "flowens/dataset.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace flowens::envs {

inline std::string dataset_header(std::size_t K, std::size_t D) {
  std::string h;
  for (std::size_t k = 0; k < K; ++k) h += (k ? ",x" : "x") + std::to_string(k);
  for (std::size_t d = 0; d < D; ++d) h += ",y" + std::to_string(d);
  return h;
}

/// CSV with header x0..x{K-1},y0..y{D-1} plus a JSON sidecar `<path>.json`
/// holding env_tag, policy, seed and n.
inline void write_dataset(const std::string& path, const Dataset& d, std::uint64_t seed) {
  d.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << dataset_header(d.x_dim(), d.y_dim()) << '\n';
  for (Eigen::Index r = 0; r < d.X.rows(); ++r) {
    for (Eigen::Index k = 0; k < d.X.cols(); ++k) out << (k ? "," : "") << fmt_double(d.X(r, k));
    for (Eigen::Index j = 0; j < d.Y.cols(); ++j) out << ',' << fmt_double(d.Y(r, j));
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path);
  nlohmann::ordered_json meta;
  meta["env_tag"] = d.env_tag;
  meta["policy"] = d.policy;
  meta["seed"] = seed;
  meta["n"] = d.size();
  std::ofstream side(path + ".json", std::ios::binary);
  if (!side) throw IoError("cannot write " + path + ".json");
  side << meta.dump(2) << '\n';
}

/// Reads a dataset CSV; tags come from the sidecar when present.
inline Dataset read_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError(path + " is empty");
  std::size_t K = 0, D = 0;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      if (!cell.empty() && cell[0] == 'x' && D == 0)
        ++K;
      else if (!cell.empty() && cell[0] == 'y')
        ++D;
      else
        throw IoError("unexpected column '" + cell + "' in " + path);
    }
  }
  if (line != dataset_header(K, D)) throw IoError("bad dataset header in " + path);
  std::vector<double> vals;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t c = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        vals.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw IoError("bad number '" + cell + "' in " + path);
      }
      ++c;
    }
    if (c != K + D) throw IoError("row " + std::to_string(rows + 1) + " of " + path + " has wrong width");
    ++rows;
  }
  Dataset d{SampleMatrix(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(K)),
            SampleMatrix(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(D)), "", ""};
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < K; ++k) d.X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = vals[r * (K + D) + k];
    for (std::size_t j = 0; j < D; ++j)
      d.Y(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = vals[r * (K + D) + K + j];
  }
  std::ifstream side(path + ".json");
  if (side) {
    try {
      const auto meta = nlohmann::json::parse(side);
      d.env_tag = meta.value("env_tag", "");
      d.policy = meta.value("policy", "");
    } catch (const nlohmann::json::exception& e) {
      throw IoError("bad sidecar for " + path + ": " + e.what());
    }
  }
  return d;
}

}  // namespace flowens::envs
