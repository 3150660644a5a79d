#pragma once

// JSON encodings shared by the HTTP service and the CLI.
//
// Dendrogram document:
//   {
//     "leaves": n,
//     "merges": [[left, right, height], ...],          // n - 1 entries
//     "tree": {"id": 2n-2, "height": h, "size": n,
//              "children": [<node>, <node>]}            // leaves: {"id", "height": 0, "size": 1}
//   }

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "cellsteer/analysis.hpp"
#include "cellsteer/clustering.hpp"
#include "cellsteer/error.hpp"
#include "cellsteer/sim_oracle.hpp"

namespace cellsteer {

using json = nlohmann::json;

inline json dendrogram_tree(const Dendrogram &d, std::size_t node) {
  if (node < d.leaves)
    return {{"id", node}, {"height", 0.0}, {"size", 1}};
  const Merge &m = d.merges[node - d.leaves];
  json left = dendrogram_tree(d, m.left);
  json right = dendrogram_tree(d, m.right);
  const std::size_t size = left["size"].get<std::size_t>() + right["size"].get<std::size_t>();
  return {{"id", node}, {"height", m.height}, {"size", size}, {"children", {left, right}}};
}

inline json to_json(const Dendrogram &d) {
  json merges = json::array();
  for (const auto &m : d.merges)
    merges.push_back({m.left, m.right, m.height});
  return {{"leaves", d.leaves}, {"merges", merges}, {"tree", dendrogram_tree(d, d.root())}};
}

inline Dendrogram dendrogram_from_json(const json &j) {
  Dendrogram d;
  d.leaves = j.at("leaves").get<std::size_t>();
  for (const auto &m : j.at("merges"))
    d.merges.push_back({m.at(0).get<std::size_t>(), m.at(1).get<std::size_t>(), m.at(2).get<double>()});
  if (d.leaves < 2 || d.merges.size() + 1 != d.leaves)
    fail(ErrorKind::corrupt_file, "dendrogram merge count does not match its leaves");
  return d;
}

inline json to_json(const MatrixR &m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows(); ++r)
    rows.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", rows}};
}

/// Reads an array of finite numbers of the given length.
inline std::vector<double> numbers_from_json(const json &j, const std::string &field,
                                             std::size_t expected) {
  if (!j.is_array())
    fail(ErrorKind::invalid_argument, field + " must be an array of numbers", field);
  if (j.size() != expected)
    fail(ErrorKind::invalid_argument,
         field + " needs " + std::to_string(expected) + " values, got " + std::to_string(j.size()),
         field);
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto &v : j) {
    if (!v.is_number())
      fail(ErrorKind::invalid_argument, field + " contains a non-number", field);
    const double x = v.get<double>();
    if (!std::isfinite(x))
      fail(ErrorKind::non_finite, field + " contains a non-finite value", field);
    out.push_back(x);
  }
  return out;
}

inline ParameterConfig config_from_json(const json &j, const std::string &field = "config") {
  return to_config(numbers_from_json(j, field, kNumParams), field.c_str());
}

/// Masks travel as lists of cell indices.
inline RegionMask mask_from_json(const json &j, const std::string &field,
                                 std::size_t n = kNumCells) {
  if (j.is_null())
    return RegionMask::none(n);
  if (!j.is_array())
    fail(ErrorKind::invalid_argument, field + " must be a list of cell indices", field);
  std::vector<std::size_t> idx;
  for (const auto &v : j) {
    if (!v.is_number_integer() || v.get<long long>() < 0 || v.get<long long>() >= static_cast<long long>(n))
      fail(ErrorKind::invalid_argument, field + " has an index outside 0.." + std::to_string(n - 1),
           field);
    idx.push_back(v.get<std::size_t>());
  }
  return RegionMask::from_indices(idx, n);
}

template <class Array> std::vector<double> as_vector(const Array &a) {
  return std::vector<double>(a.begin(), a.end());
}

} // namespace cellsteer
