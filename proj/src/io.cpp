#include "gradalign/io.hpp"

#include "gradalign/errors.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace gradalign {

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& cell, std::int64_t line) {
  double v = 0.0;
  const char* end = cell.data() + cell.size();
  const auto res = std::from_chars(cell.data(), end, v);
  if (cell.empty() || res.ec != std::errc() || res.ptr != end) {
    throw ParseError(line, "invalid number '" + cell + "'");
  }
  return v;
}

namespace {

std::int64_t parse_int(const std::string& cell, std::int64_t line) {
  std::int64_t v = 0;
  const char* end = cell.data() + cell.size();
  const auto res = std::from_chars(cell.data(), end, v);
  if (cell.empty() || res.ec != std::errc() || res.ptr != end) {
    throw ParseError(line, "invalid integer '" + cell + "'");
  }
  return v;
}

Phase parse_phase(const std::string& cell, std::int64_t line) {
  if (cell == "explore") return Phase::explore;
  if (cell == "exploit") return Phase::exploit;
  throw ParseError(line, "unknown phase '" + cell + "'");
}

bool parse_flag(const std::string& cell, std::int64_t line) {
  if (cell == "1") return true;
  if (cell == "0") return false;
  throw ParseError(line, "expected 0 or 1, got '" + cell + "'");
}

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

// Calls `row(cells, line_no)` for every non-empty data line after checking the header.
template <typename RowFn>
void for_each_row(const std::string& text, const std::string& header, RowFn row) {
  std::istringstream in(text);
  std::string line;
  std::int64_t line_no = 0;
  if (!std::getline(in, line)) throw SchemaError("empty CSV, expected header '" + header + "'");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != header) throw SchemaError("unexpected CSV header '" + line + "'");
  const std::size_t width = split_row(header).size();
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_row(line);
    if (cells.size() != width) {
      throw SchemaError("line " + std::to_string(line_no) + " has " +
                        std::to_string(cells.size()) + " fields, expected " +
                        std::to_string(width));
    }
    row(cells, line_no);
  }
}

template <typename T>
std::string optional_cell(const std::optional<T>& v) {
  if (!v) return {};
  if constexpr (std::is_same_v<T, bool>) {
    return *v ? "1" : "0";
  } else {
    return format_double(*v);
  }
}

const char* const kTraceHeader =
    "step,phase,loss,grad_norm,train_error,aligned,rel_residual,q_t,drift";
const char* const kBoundHeader = "step,phase,loss,aligned,nu_sq,beta_unit_sq";

Json matrix_json(const MatrixXd& m) {
  Json rows = Json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

MatrixXd matrix_from_json(const Json& j, const std::string& what) {
  if (!j.is_array() || j.empty() || !j.front().is_array()) {
    throw SchemaError(what + ": expected a non-empty array of rows");
  }
  const Index rows = static_cast<Index>(j.size());
  const Index cols = static_cast<Index>(j.front().size());
  MatrixXd m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const Json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Index>(row.size()) != cols) {
      throw SchemaError(what + ": ragged matrix");
    }
    for (Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

}  // namespace

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path, "cannot open for writing");
  out << text;
  if (!out) throw IoError(path, "write failed");
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path, "cannot open for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// ---------------------------------------------------------------------------
// Trace
// ---------------------------------------------------------------------------
std::string trace_to_csv(const TrainTrace& trace) {
  std::string out = kTraceHeader;
  out += '\n';
  for (const auto& r : trace) {
    out += std::to_string(r.step) + ',' + std::string(to_string(r.phase)) + ',' +
           format_double(r.loss) + ',' + format_double(r.grad_norm) + ',' +
           format_double(r.train_error) + ',' + optional_cell(r.aligned) + ',' +
           optional_cell(r.rel_residual) + ',' + std::to_string(r.q_t) + ',' +
           optional_cell(r.drift) + '\n';
  }
  return out;
}

TrainTrace trace_from_csv(const std::string& text) {
  TrainTrace trace;
  for_each_row(text, kTraceHeader, [&](const std::vector<std::string>& c, std::int64_t line) {
    TraceRecord r;
    r.step = parse_int(c[0], line);
    r.phase = parse_phase(c[1], line);
    r.loss = parse_double(c[2], line);
    r.grad_norm = parse_double(c[3], line);
    r.train_error = parse_double(c[4], line);
    if (!c[5].empty()) r.aligned = parse_flag(c[5], line);
    if (!c[6].empty()) r.rel_residual = parse_double(c[6], line);
    r.q_t = parse_int(c[7], line);
    if (!c[8].empty()) r.drift = parse_double(c[8], line);
    trace.push_back(r);
  });
  return trace;
}

void save_trace(const TrainTrace& trace, const std::string& path) {
  write_text(path, trace_to_csv(trace));
}

TrainTrace load_trace(const std::string& path) {
  const std::string text = read_text(path);
  try {
    return trace_from_csv(text);
  } catch (const ParseError& e) {
    throw ParseError(e.line(), path + ": " + e.what());
  } catch (const SchemaError& e) {
    throw SchemaError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Bound terms
// ---------------------------------------------------------------------------
std::string bound_terms_to_csv(const std::vector<PhasedBoundTerms>& rows) {
  std::string out = kBoundHeader;
  out += '\n';
  for (const auto& row : rows) {
    const BoundTerms& b = row.terms;
    out += std::to_string(b.step) + ',' + std::string(to_string(row.phase)) + ',' +
           format_double(b.loss) + ',' + (b.aligned ? "1" : "0") + ',' +
           format_double(b.nu_sq) + ',' + format_double(b.beta_unit_sq) + '\n';
  }
  return out;
}

std::vector<PhasedBoundTerms> bound_terms_from_csv(const std::string& text) {
  std::vector<PhasedBoundTerms> rows;
  for_each_row(text, kBoundHeader, [&](const std::vector<std::string>& c, std::int64_t line) {
    PhasedBoundTerms row;
    row.terms.step = parse_int(c[0], line);
    row.phase = parse_phase(c[1], line);
    row.terms.loss = parse_double(c[2], line);
    row.terms.aligned = parse_flag(c[3], line);
    row.terms.nu_sq = parse_double(c[4], line);
    row.terms.beta_unit_sq = parse_double(c[5], line);
    rows.push_back(row);
  });
  return rows;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------
Json to_json(const NetworkSpec& spec) {
  Json j;
  j["layer_widths"] = spec.layer_widths;
  j["head_mode"] = std::string(to_string(spec.head_mode));
  j["softplus_sharpness"] = spec.softplus_sharpness;
  j["gate_sharpness"] = spec.gate_sharpness;
  j["init_width"] = spec.init_width;
  return j;
}

NetworkSpec network_spec_from_json(const Json& j) {
  require_known_keys(j, {"layer_widths", "head_mode", "softplus_sharpness", "gate_sharpness",
                         "init_width"},
                     "network spec");
  NetworkSpec spec;
  try {
    spec.layer_widths = j.at("layer_widths").get<std::vector<Index>>();
    spec.head_mode = parse_head_mode(j.value("head_mode", std::string("plain")));
    spec.softplus_sharpness = j.value("softplus_sharpness", spec.softplus_sharpness);
    spec.gate_sharpness = j.value("gate_sharpness", spec.gate_sharpness);
    spec.init_width = j.value("init_width", spec.init_width);
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("network spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

Json to_json(const Checkpoint& ck) {
  Json j;
  j["spec"] = to_json(ck.spec);
  j["theta"] = std::vector<double>(ck.theta.data(), ck.theta.data() + ck.theta.size());
  Json gates;
  gates["frozen"] = ck.gates.frozen;
  gates["R"] = Json::array();
  for (const auto& r : ck.gates.R) gates["R"].push_back(matrix_json(r));
  j["gates"] = std::move(gates);
  j["rng_state"] = ck.rng_state;
  j["step"] = ck.step;
  return j;
}

Checkpoint checkpoint_from_json(const Json& j) {
  require_known_keys(j, {"spec", "theta", "gates", "rng_state", "step"}, "checkpoint");
  Checkpoint ck;
  try {
    ck.spec = network_spec_from_json(j.at("spec"));
    const auto theta = j.at("theta").get<std::vector<double>>();
    ck.theta = Eigen::Map<const VectorXd>(theta.data(), static_cast<Index>(theta.size()));
    const Json& gates = j.at("gates");
    require_known_keys(gates, {"frozen", "R"}, "checkpoint gates");
    ck.gates.frozen = gates.at("frozen").get<bool>();
    for (const auto& r : gates.at("R")) ck.gates.R.push_back(matrix_from_json(r, "gates.R"));
    ck.rng_state = j.value("rng_state", std::string());
    ck.step = j.at("step").get<std::int64_t>();
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("checkpoint: ") + e.what());
  }
  const Network net(ck.spec);
  net.check_theta(ck.theta);
  net.check_gates(ck.gates);
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  write_text(path, dump_json(to_json(ck)));
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string text = read_text(path);
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw SchemaError(path + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------
Json to_json(const AlignmentRecord& r) {
  Json j;
  j["step"] = r.step;
  j["aligned"] = r.aligned;
  j["rel_residual"] = r.rel_residual;
  j["method"] = std::string(to_string(r.method));
  j["rank"] = r.rank;
  return j;
}

Json to_json(const BoundReport& r) {
  Json j;
  j["eta"] = r.eta;
  j["reference"] = r.reference;
  j["zeta_eta"] = r.zeta_eta;
  j["L_used"] = r.L_used;
  j["alpha"] = r.alpha;
  j["alignment_steps"] = r.alignment_steps;
  j["lhs"] = r.lhs;
  j["rhs"] = r.rhs;
  j["applicable"] = r.applicable;
  j["holds"] = r.holds;
  return j;
}

Json to_json(const SafeExplorationCertificate& c) {
  Json j;
  j["n"] = c.n;
  j["head_width"] = c.head_width;
  j["gate_input_dim"] = c.gate_input_dim;
  j["phi_rank"] = c.phi_rank;
  j["phi_rank_check"] = c.phi_rank_check;
  j["satisfied"] = c.satisfied;
  j["seed"] = c.seed;
  return j;
}

Json to_json(const NecessityResult& r) {
  Json j;
  j["applicable"] = r.applicable;
  j["aligned"] = r.aligned;
  j["eta_star"] = r.eta_star;
  j["rel_residual"] = r.rel_residual;
  j["violation"] = r.violation;
  return j;
}

std::string dump_json(const Json& j) { return j.dump(2) + '\n'; }

void require_known_keys(const Json& obj, const std::vector<std::string>& allowed,
                        const std::string& where) {
  if (!obj.is_object()) throw SchemaError(where + ": expected an object");
  for (const auto& item : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
      throw SchemaError(where + ": unknown key '" + item.key() + "'");
    }
  }
}

}  // namespace gradalign
