#pragma once

#include <boost/multiprecision/cpp_int.hpp>
#include <sstream>

#include "canas/conditional_ops.hpp"
#include "canas/serialize.hpp"

namespace canas {

using OpIndex = std::uint32_t;
using ArchRow = std::vector<OpIndex>;
using BigInt = boost::multiprecision::cpp_int;

/// Dimensions of the cell-based generator search space.
struct SearchSpaceSpec {
  std::size_t cells = 3;  // L
  std::size_t nodes = 2;  // N intermediate nodes per cell
  std::vector<OperatorKind> operators{OperatorKind::RConv3x3, OperatorKind::CMConv3x3};
  std::size_t classes = 10;  // M
  std::size_t base_channels = 64;
  std::size_t base_resolution = 4;
  std::size_t latent_dim = 128;
  std::size_t embed_dim = 128;

  std::size_t edges_per_cell() const { return nodes * (nodes + 1) / 2; }
  std::size_t edge_count() const { return cells * edges_per_cell(); }
  std::size_t op_count() const { return operators.size(); }
  std::size_t node_channels() const { return base_channels / nodes; }
  std::size_t output_resolution() const { return base_resolution << cells; }

  void validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
      throw std::invalid_argument("space." + field + ": " + why);
    };
    if (cells == 0) fail("cells", "must be >= 1");
    if (nodes == 0) fail("nodes", "must be >= 1");
    if (operators.empty()) fail("operators", "must be non-empty");
    for (std::size_t i = 0; i < operators.size(); ++i)
      for (std::size_t j = i + 1; j < operators.size(); ++j)
        if (operators[i] == operators[j]) fail("operators", "duplicate operator");
    if (classes == 0) fail("classes", "must be >= 1");
    if (base_channels == 0 || base_channels % nodes != 0) fail("base_channels", "must be a positive multiple of nodes");
    if (base_resolution == 0) fail("base_resolution", "must be >= 1");
    if (latent_dim == 0) fail("latent_dim", "must be >= 1");
    if (embed_dim == 0) fail("embed_dim", "must be >= 1");
  }

  bool operator==(const SearchSpaceSpec&) const = default;
};

/// Searched edge (from -> to) inside one cell. Node 0 is the cell input.
struct Edge {
  std::size_t cell;
  std::size_t from;
  std::size_t to;
};

/// Edges in serialization order: cell-major, then (from, to) lexicographic.
inline std::vector<Edge> enumerate_edges(const SearchSpaceSpec& space) {
  std::vector<Edge> edges;
  edges.reserve(space.edge_count());
  for (std::size_t c = 0; c < space.cells; ++c)
    for (std::size_t i = 0; i < space.nodes; ++i)
      for (std::size_t j = i + 1; j <= space.nodes; ++j) edges.push_back({c, i, j});
  return edges;
}

/// Operator choice for every searched edge of one class's generator.
struct ArchCode {
  std::size_t class_id = 0;
  ArchRow ops;

  bool operator==(const ArchCode&) const = default;
};

inline void validate_row(const ArchRow& row, std::size_t edges, std::size_t op_count) {
  if (row.size() != edges) {
    throw std::invalid_argument("arch: length " + std::to_string(row.size()) + " != edge count " +
                                std::to_string(edges));
  }
  for (OpIndex o : row) {
    if (o >= op_count) throw std::out_of_range("arch: operator index " + std::to_string(o) + " out of range");
  }
}

inline void validate_arch(const ArchCode& a, const SearchSpaceSpec& space) {
  if (a.class_id >= space.classes) throw std::out_of_range("arch: class id out of range");
  validate_row(a.ops, space.edge_count(), space.op_count());
}

/// b x |O| matrix whose rows are one-hot operator selections.
class IndicatorMatrix {
 public:
  IndicatorMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) throw DimensionError("indicator: size mismatch");
    for (std::size_t i = 0; i < rows_; ++i) {
      int ones = 0;
      for (std::size_t j = 0; j < cols_; ++j) {
        const double v = data_[i * cols_ + j];
        if (v == 1.0) {
          ++ones;
        } else if (v != 0.0) {
          ones = -1;
          break;
        }
      }
      if (ones != 1) throw std::invalid_argument("indicator: row " + std::to_string(i) + " is not one-hot");
    }
  }

  static IndicatorMatrix from_choices(std::span<const OpIndex> choices, std::size_t op_count) {
    std::vector<double> d(choices.size() * op_count, 0.0);
    for (std::size_t i = 0; i < choices.size(); ++i) {
      if (choices[i] >= op_count) throw std::out_of_range("indicator: operator index out of range");
      d[i * op_count + choices[i]] = 1.0;
    }
    return IndicatorMatrix(choices.size(), op_count, std::move(d));
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::span<const double> data() const { return data_; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

 private:
  std::size_t rows_, cols_;
  std::vector<double> data_;
};

/// Number of distinct class-aware generator assignments: |O|^(L * C(N+1,2) * M).
inline BigInt count_space(std::size_t op_count, std::size_t cells, std::size_t nodes, std::size_t classes) {
  const std::size_t exponent = cells * (nodes * (nodes + 1) / 2) * classes;
  BigInt result = 1;
  const BigInt base = op_count;
  for (std::size_t i = 0; i < exponent; ++i) result *= base;
  return result;
}

/// Per class and edge, the operator with the largest policy score; ties go
/// to the lowest index. theta is [M, E, |O|].
inline std::vector<ArchCode> derive_architectures(const Tensor& theta) {
  detail::require_rank("derive_architectures", theta, 3);
  const std::size_t m = theta.dim(0), e = theta.dim(1), k = theta.dim(2);
  std::vector<ArchCode> out(m);
  for (std::size_t c = 0; c < m; ++c) {
    out[c].class_id = c;
    out[c].ops.resize(e);
    for (std::size_t j = 0; j < e; ++j) {
      const double* row = theta.values().data() + (c * e + j) * k;
      OpIndex best = 0;
      for (std::size_t o = 1; o < k; ++o)
        if (row[o] > row[best]) best = static_cast<OpIndex>(o);
      out[c].ops[j] = best;
    }
  }
  return out;
}

/// Fraction of classes choosing each operator at each edge position: [E][|O|].
inline std::vector<std::vector<double>> arch_stats(std::span<const ArchCode> archs, std::size_t op_count) {
  if (archs.empty()) throw std::invalid_argument("arch_stats: no architectures");
  const std::size_t e = archs.front().ops.size();
  std::vector<std::vector<double>> frac(e, std::vector<double>(op_count, 0.0));
  for (const ArchCode& a : archs) {
    validate_row(a.ops, e, op_count);
    for (std::size_t j = 0; j < e; ++j) frac[j][a.ops[j]] += 1.0;
  }
  for (auto& row : frac)
    for (double& v : row) v /= static_cast<double>(archs.size());
  return frac;
}

inline std::string arch_stats_csv(std::span<const ArchCode> archs, const std::vector<OperatorKind>& ops) {
  const auto frac = arch_stats(archs, ops.size());
  std::ostringstream os;
  os << "position,op_name,fraction\n";
  for (std::size_t j = 0; j < frac.size(); ++j)
    for (std::size_t o = 0; o < ops.size(); ++o) {
      os << j << ',' << operator_name(ops[o]) << ',' << format_double(frac[j][o]) << '\n';
    }
  return os.str();
}

/// Architecture file: {space:{L,N,operators,M}, archs:[{class, ops}]} plus an
/// optional config_hash of the run that wrote it.
struct ArchitectureFile {
  std::size_t cells = 0;
  std::size_t nodes = 0;
  std::vector<OperatorKind> operators;
  std::size_t classes = 0;
  std::vector<ArchCode> archs;
  std::string config_hash;

  std::size_t edge_count() const { return cells * nodes * (nodes + 1) / 2; }

  void validate() const {
    if (archs.size() != classes) throw std::invalid_argument("architecture file: archs count != M");
    for (std::size_t k = 0; k < archs.size(); ++k) {
      if (archs[k].class_id != k) throw std::invalid_argument("architecture file: archs must be ordered by class");
      validate_row(archs[k].ops, edge_count(), operators.size());
    }
  }

  bool operator==(const ArchitectureFile&) const = default;
};

inline nlohmann::json to_json(const ArchitectureFile& f) {
  nlohmann::json ops = nlohmann::json::array();
  for (OperatorKind k : f.operators) ops.push_back(std::string(operator_name(k)));
  nlohmann::json archs = nlohmann::json::array();
  for (const ArchCode& a : f.archs) archs.push_back({{"class", a.class_id}, {"ops", a.ops}});
  nlohmann::json j = {{"space", {{"L", f.cells}, {"N", f.nodes}, {"operators", ops}, {"M", f.classes}}},
                      {"archs", archs}};
  if (!f.config_hash.empty()) j["config_hash"] = f.config_hash;
  return j;
}

inline ArchitectureFile architecture_from_json(const nlohmann::json& j) {
  ArchitectureFile f;
  const auto& s = j.at("space");
  f.cells = s.at("L").get<std::size_t>();
  f.nodes = s.at("N").get<std::size_t>();
  f.classes = s.at("M").get<std::size_t>();
  for (const auto& name : s.at("operators")) f.operators.push_back(parse_operator(name.get<std::string>()));
  for (const auto& a : j.at("archs")) {
    f.archs.push_back({a.at("class").get<std::size_t>(), a.at("ops").get<ArchRow>()});
  }
  if (j.contains("config_hash")) f.config_hash = j.at("config_hash").get<std::string>();
  f.validate();
  return f;
}

inline void save_architectures(const std::string& path, const ArchitectureFile& f) {
  write_text(path, dump_json(to_json(f)));
}

inline ArchitectureFile load_architectures(const std::string& path) {
  return architecture_from_json(nlohmann::json::parse(read_text(path)));
}

}  // namespace canas
