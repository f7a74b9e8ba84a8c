#include "gradalign/data.hpp"
#include "gradalign/io.hpp"

#include "gradalign/rng.hpp"

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <vector>

namespace gradalign {

void Dataset::validate() const {
  if (X.rows() < 1) throw ContractError("dataset must have at least one sample");
  if (Y.rows() != X.rows()) throw ContractError("dataset X and Y row counts differ");
  require_finite(X, "dataset X");
  require_finite(Y, "dataset Y");
  validate_targets(kind, Y);
}

Dataset make_dataset(MatrixXd x, MatrixXd y, LossKind kind, std::string name) {
  Dataset d;
  d.X = std::move(x);
  d.Y = std::move(y);
  d.kind = kind;
  d.name = std::move(name);
  d.validate();
  d.Y_ell = modified_target(kind, d.Y);
  return d;
}

namespace {

MatrixXd encode_labels(const std::vector<int>& labels, LossKind kind) {
  const Index n = static_cast<Index>(labels.size());
  if (kind == LossKind::multiclass_ce) {
    MatrixXd y = MatrixXd::Zero(n, 2);
    for (Index i = 0; i < n; ++i) y(i, labels[static_cast<std::size_t>(i)]) = 1.0;
    return y;
  }
  MatrixXd y(n, 1);
  for (Index i = 0; i < n; ++i) y(i, 0) = labels[static_cast<std::size_t>(i)];
  return y;
}

}  // namespace

Dataset gen_two_moons(Index n, double noise_std, std::uint64_t seed, LossKind kind) {
  if (n < 2 || n % 2 != 0) throw ContractError("two-moons needs an even n >= 2");
  if (!(noise_std >= 0.0)) throw ContractError("noise_std must be >= 0");
  const Index half = n / 2;
  MatrixXd x(n, 2);
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (Index i = 0; i < half; ++i) {
    const double t = half == 1 ? 0.0 : std::numbers::pi * static_cast<double>(i) / static_cast<double>(half - 1);
    x(i, 0) = std::cos(t);
    x(i, 1) = std::sin(t);
    labels[static_cast<std::size_t>(i)] = 0;
    x(half + i, 0) = 1.0 - std::cos(t);
    x(half + i, 1) = 0.5 - std::sin(t);
    labels[static_cast<std::size_t>(half + i)] = 1;
  }
  if (noise_std > 0.0) {
    Rng rng(seed, Stream::data);
    for (Index i = 0; i < n; ++i) {
      for (Index c = 0; c < 2; ++c) x(i, c) += noise_std * rng.normal();
    }
  }
  Dataset d = make_dataset(std::move(x), encode_labels(labels, kind), kind, "two-moons");
  d.seed = seed;
  d.generator = "two-moons";
  d.args = {{"n", static_cast<double>(n)}, {"noise", noise_std}};
  return d;
}

Dataset gen_sine(Index n, double freq, std::uint64_t seed, LossKind kind) {
  if (n < 1) throw ContractError("sine needs n >= 1");
  if (!(freq > 0.0)) throw ContractError("freq must be > 0");
  Rng rng(seed, Stream::data);
  MatrixXd x(n, 1);
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    x(i, 0) = rng.uniform(-1.0, 1.0);
    labels[static_cast<std::size_t>(i)] = std::sin(freq * x(i, 0)) < 0.0 ? 1 : 0;
  }
  Dataset d = make_dataset(std::move(x), encode_labels(labels, kind), kind, "sine");
  d.seed = seed;
  d.generator = "sine";
  d.args = {{"n", static_cast<double>(n)}, {"freq", freq}};
  return d;
}

Dataset gen_random(Index n, Index dim, std::uint64_t seed, LossKind kind) {
  if (n < 1 || dim < 1) throw ContractError("random dataset needs n, dim >= 1");
  Rng rng(seed, Stream::data);
  MatrixXd x(n, dim);
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    for (Index c = 0; c < dim; ++c) x(i, c) = rng.normal();
    labels[static_cast<std::size_t>(i)] = static_cast<int>(rng.below(2));
  }
  Dataset d = make_dataset(std::move(x), encode_labels(labels, kind), kind, "random");
  d.seed = seed;
  d.generator = "random";
  d.args = {{"n", static_cast<double>(n)}, {"dim", static_cast<double>(dim)}};
  return d;
}

namespace {

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

void save_csv(const Dataset& data, const std::string& path) {
  data.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path, "cannot open for writing");
  for (Index c = 0; c < data.X.cols(); ++c) out << (c ? "," : "") << 'x' << c;
  for (Index c = 0; c < data.Y.cols(); ++c) out << ",y" << c;
  out << '\n';
  for (Index i = 0; i < data.size(); ++i) {
    for (Index c = 0; c < data.X.cols(); ++c) out << (c ? "," : "") << format_double(data.X(i, c));
    for (Index c = 0; c < data.Y.cols(); ++c) out << ',' << format_double(data.Y(i, c));
    out << '\n';
  }
  if (!out) throw IoError(path, "write failed");

  nlohmann::json meta;
  meta["name"] = data.name;
  meta["seed"] = data.seed;
  meta["generator"] = data.generator;
  meta["loss"] = std::string(to_string(data.kind));
  meta["args"] = data.args;
  std::ofstream side(path + ".meta.json", std::ios::binary);
  if (!side) throw IoError(path + ".meta.json", "cannot open for writing");
  side << meta.dump(2) << '\n';
}

Dataset load_csv(const std::string& path, LossKind kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path, "cannot open dataset");
  std::string line;
  if (!std::getline(in, line)) throw SchemaError(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_commas(line);
  Index mx = 0;
  Index my = 0;
  for (const auto& name : header) {
    const std::string expect_x = "x" + std::to_string(mx);
    const std::string expect_y = "y" + std::to_string(my);
    if (my == 0 && name == expect_x) {
      ++mx;
    } else if (name == expect_y) {
      ++my;
    } else {
      throw SchemaError(path + ": unexpected header column '" + name + "'");
    }
  }
  if (mx == 0 || my == 0) throw SchemaError(path + ": header needs x0.. and y0.. columns");

  std::vector<double> values;
  Index rows = 0;
  std::int64_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_commas(line);
    if (static_cast<Index>(cells.size()) != mx + my) {
      throw SchemaError(path + ": line " + std::to_string(line_no) + " has " +
                        std::to_string(cells.size()) + " fields, expected " +
                        std::to_string(mx + my));
    }
    for (const auto& cell : cells) {
      double v = 0.0;
      const char* end = cell.data() + cell.size();
      const auto res = std::from_chars(cell.data(), end, v);
      if (res.ec != std::errc() || res.ptr != end) {
        throw ParseError(line_no, "invalid number '" + cell + "'");
      }
      values.push_back(v);
    }
    ++rows;
  }
  if (rows == 0) throw SchemaError(path + ": no samples");
  MatrixXd all = Eigen::Map<MatrixXd>(values.data(), rows, mx + my);
  Dataset d = make_dataset(all.leftCols(mx), all.rightCols(my), kind,
                           std::filesystem::path(path).stem().string());
  d.generator = "csv";
  return d;
}

Dataset load_dataset(const std::string& path, LossKind kind) {
  Dataset d = load_csv(path, kind);
  std::ifstream side(path + ".meta.json");
  if (!side) return d;
  try {
    const auto meta = nlohmann::json::parse(side);
    d.name = meta.value("name", d.name);
    d.seed = meta.value("seed", std::uint64_t{0});
    d.generator = meta.value("generator", d.generator);
    if (meta.contains("args")) d.args = meta["args"].get<std::map<std::string, double>>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path + ".meta.json: " + e.what());
  }
  return d;
}

}  // namespace gradalign
