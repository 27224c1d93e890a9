#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mibench/batch.hpp"
#include "mibench/errors.hpp"
#include "mibench/mlp.hpp"
#include "mibench/quantizer.hpp"

namespace mibench {

using Json = nlohmann::json;

// Binary matrix file: 8-byte magic, uint64 rows, uint64 cols, then
// rows * cols little-endian float64 values in row-major order.
inline constexpr char kMatrixMagic[8] = {'M', 'I', 'B', 'M', 'A', 'T', '0', '1'};

inline void write_matrix(const std::string& path, const Matrix& m) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  const std::uint64_t rows = static_cast<std::uint64_t>(m.rows());
  const std::uint64_t cols = static_cast<std::uint64_t>(m.cols());
  out.write(kMatrixMagic, sizeof kMatrixMagic);
  out.write(reinterpret_cast<const char*>(&rows), sizeof rows);
  out.write(reinterpret_cast<const char*>(&cols), sizeof cols);
  out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * rows * cols));
  if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

inline Matrix read_matrix(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  char magic[8];
  std::uint64_t rows = 0;
  std::uint64_t cols = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&rows), sizeof rows);
  in.read(reinterpret_cast<char*>(&cols), sizeof cols);
  if (!in || std::memcmp(magic, kMatrixMagic, sizeof magic) != 0)
    throw std::runtime_error("'" + path + "' is not a matrix file");
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * rows * cols));
  if (!in) throw std::runtime_error("'" + path + "' is truncated");
  return m;
}

inline void write_json(const std::string& path, const Json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
}

inline Json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return Json::parse(in);
}

inline Matrix vector_row(const std::vector<double>& v) {
  return Eigen::Map<const Matrix>(v.data(), 1, static_cast<Eigen::Index>(v.size()));
}

// Dataset as one [x | y] matrix plus a sidecar `<path>.json` holding the
// split and any caller metadata (task parameters, seed, oracle MI).
inline void save_dataset(const std::string& path, const Dataset& d, Json meta = Json::object()) {
  d.validate();
  Matrix xy(d.size(), d.x_dim() + d.y_dim());
  xy << d.x, d.y;
  write_matrix(path, xy);
  meta["x_dim"] = d.x_dim();
  meta["y_dim"] = d.y_dim();
  meta["rows"] = d.size();
  write_json(path + ".json", meta);
}

inline Dataset load_dataset(const std::string& path, Json* meta_out = nullptr) {
  const Json meta = read_json(path + ".json");
  const Matrix xy = read_matrix(path);
  const auto dx = meta.at("x_dim").get<Eigen::Index>();
  const auto dy = meta.at("y_dim").get<Eigen::Index>();
  if (dx + dy != xy.cols()) throw std::runtime_error("'" + path + "' does not match its sidecar");
  Dataset d;
  d.x = xy.leftCols(dx);
  d.y = xy.rightCols(dy);
  if (meta_out) *meta_out = meta;
  return d;
}

inline Json spec_to_json(const MlpSpec& s) {
  return {{"widths", s.widths}, {"hidden", to_string(s.hidden)}, {"output", to_string(s.output)}, {"seed", s.seed}};
}

inline MlpSpec spec_from_json(const Json& j) {
  MlpSpec s;
  s.widths = j.at("widths").get<std::vector<int>>();
  s.hidden = activation_from_string(j.at("hidden").get<std::string>());
  s.output = activation_from_string(j.at("output").get<std::string>());
  s.seed = j.at("seed").get<std::uint64_t>();
  s.validate();
  return s;
}

// Network parameters as a 1 x n matrix with a descriptor sidecar.
inline void save_params(const std::string& path, const std::string& kind, const MlpSpec& spec,
                        const std::vector<double>& params) {
  write_matrix(path, vector_row(params));
  write_json(path + ".json", {{"kind", kind}, {"spec", spec_to_json(spec)}});
}

inline std::vector<double> load_params(const std::string& path, MlpSpec* spec_out = nullptr) {
  const Json meta = read_json(path + ".json");
  const MlpSpec spec = spec_from_json(meta.at("spec"));
  const Matrix m = read_matrix(path);
  if (static_cast<std::size_t>(m.size()) != spec.param_count())
    throw std::runtime_error("'" + path + "' has the wrong parameter count");
  if (spec_out) *spec_out = spec;
  return {m.data(), m.data() + m.size()};
}

// Quantizer: descriptor `<stem>.json`; k-means/TICA quantizers add
// `<stem>.centroids`, `<stem>.components`, `<stem>.whitener` and `<stem>.mean`
// matrix files.
inline void save_quantizer(const std::string& stem, const Quantizer& q) {
  Json j{{"kind", to_string(q.kind)}, {"n_codes", q.n_codes}, {"input_dim", q.input_dim},
         {"code_counts", q.code_counts}};
  if (q.kind == QuantizerKind::kmeans_tica) {
    const TicaModel& t = *q.tica;
    j["tica"] = {{"lag", t.lag},
                 {"kept_dims", t.kept_dims},
                 {"dropped_dims", t.dropped_dims},
                 {"eigenvalues", std::vector<double>(t.eigenvalues.data(), t.eigenvalues.data() + t.eigenvalues.size())}};
    write_matrix(stem + ".centroids", q.centroids);
    write_matrix(stem + ".components", t.components);
    write_matrix(stem + ".whitener", t.whitener);
    write_matrix(stem + ".mean", Matrix(t.mean.transpose()));
  }
  write_json(stem + ".json", j);
}

inline Quantizer load_quantizer(const std::string& stem) {
  const Json j = read_json(stem + ".json");
  Quantizer q;
  const auto kind = j.at("kind").get<std::string>();
  q.kind = kind == "sign" ? QuantizerKind::sign : QuantizerKind::kmeans_tica;
  q.n_codes = j.at("n_codes").get<int>();
  q.input_dim = j.at("input_dim").get<int>();
  const auto counts = j.at("code_counts").get<std::vector<long long>>();
  if (q.kind == QuantizerKind::kmeans_tica) {
    TicaModel t;
    const Json& tj = j.at("tica");
    t.lag = tj.at("lag").get<int>();
    t.kept_dims = tj.at("kept_dims").get<std::vector<int>>();
    t.dropped_dims = tj.at("dropped_dims").get<std::vector<int>>();
    const auto ev = tj.at("eigenvalues").get<std::vector<double>>();
    t.eigenvalues = Eigen::Map<const Vector>(ev.data(), static_cast<Eigen::Index>(ev.size()));
    t.components = read_matrix(stem + ".components");
    t.whitener = read_matrix(stem + ".whitener");
    t.mean = read_matrix(stem + ".mean").row(0).transpose();
    q.tica = std::move(t);
    q.centroids = read_matrix(stem + ".centroids");
  }
  q.code_counts = counts;
  long long n = 0;
  for (auto c : counts) n += c;
  q.code_probabilities.assign(counts.size(), 0.0);
  for (std::size_t c = 0; c < counts.size(); ++c)
    q.code_probabilities[c] = n > 0 ? static_cast<double>(counts[c]) / static_cast<double>(n) : 0.0;
  return q;
}

}  // namespace mibench
