#pragma once

// On-disk formats: trace CSV, bound-terms CSV, checkpoint JSON and the JSON
// shapes of diagnostic reports. Floats are written with 17 significant digits
// so every value round-trips exactly.

#include "gradalign/diagnostics.hpp"
#include "gradalign/model.hpp"
#include "gradalign/training.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace gradalign {

using Json = nlohmann::ordered_json;

/// Shortest-safe decimal: 17 significant digits, general format.
std::string format_double(double v);
double parse_double(const std::string& cell, std::int64_t line);

void write_text(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);

// ---------------------------------------------------------------------------
// Trace CSV: step,phase,loss,grad_norm,train_error,aligned,rel_residual,q_t,drift
// ---------------------------------------------------------------------------
std::string trace_to_csv(const TrainTrace& trace);
TrainTrace trace_from_csv(const std::string& text);
void save_trace(const TrainTrace& trace, const std::string& path);
TrainTrace load_trace(const std::string& path);

// ---------------------------------------------------------------------------
// Bound terms CSV: step,phase,loss,aligned,nu_sq,beta_unit_sq
// ---------------------------------------------------------------------------
struct PhasedBoundTerms {
  Phase phase = Phase::explore;
  BoundTerms terms;
};

std::string bound_terms_to_csv(const std::vector<PhasedBoundTerms>& rows);
std::vector<PhasedBoundTerms> bound_terms_from_csv(const std::string& text);

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------
struct Checkpoint {
  NetworkSpec spec;
  VectorXd theta;
  GateState gates;
  std::string rng_state;
  std::int64_t step = 0;
};

Json to_json(const NetworkSpec& spec);
NetworkSpec network_spec_from_json(const Json& j);

/// {spec, theta, gates {frozen, R}, rng_state, step}; R is a list of
/// row-major m_H x m_{H-1} matrices given as nested arrays.
Json to_json(const Checkpoint& ck);
Checkpoint checkpoint_from_json(const Json& j);
void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------
Json to_json(const AlignmentRecord& r);
Json to_json(const BoundReport& r);
Json to_json(const SafeExplorationCertificate& c);
Json to_json(const NecessityResult& r);

/// Two-space indented JSON plus a trailing newline. Doubles come out as the
/// shortest decimal that round-trips.
std::string dump_json(const Json& j);

/// Rejects keys of `obj` outside `allowed` (SchemaError naming the key and `where`).
void require_known_keys(const Json& obj, const std::vector<std::string>& allowed,
                        const std::string& where);

}  // namespace gradalign
