#include "gradalign/experiment.hpp"

#include "gradalign/errors.hpp"
#include "gradalign/rng.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>

namespace gradalign {

namespace {

template <typename T>
T get_or(const Json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw SchemaError(where + "." + key + ": " + e.what());
  }
}

template <typename Parse>
auto parse_enum(const Json& j, const char* key, decltype(std::declval<Parse>()("")) fallback,
                Parse parse, const std::string& where) {
  if (!j.contains(key)) return fallback;
  const auto name = get_or<std::string>(j, key, "", where);
  try {
    return parse(name);
  } catch (const ContractError& e) {
    throw SchemaError(where + "." + key + ": " + e.what());
  }
}

OptimizerSpec parse_optimizer(const Json& j, const std::string& where) {
  require_known_keys(j,
                     {"kind", "lr", "schedule", "lr_values", "momentum", "weight_decay",
                      "batch_size", "layer_mask"},
                     where);
  OptimizerSpec o;
  o.kind = parse_enum(j, "kind", o.kind, parse_optimizer_kind, where);
  o.lr.base = get_or(j, "lr", o.lr.base, where);
  o.lr.kind = parse_enum(j, "schedule", o.lr.kind, parse_schedule_kind, where);
  o.lr.values = get_or(j, "lr_values", o.lr.values, where);
  o.momentum = get_or(j, "momentum", o.momentum, where);
  o.weight_decay = get_or(j, "weight_decay", o.weight_decay, where);
  o.batch_size = get_or(j, "batch_size", o.batch_size, where);
  o.layer_mask = get_or(j, "layer_mask", o.layer_mask, where);
  return o;
}

Json optimizer_json(const OptimizerSpec& o) {
  Json j;
  j["kind"] = std::string(to_string(o.kind));
  j["lr"] = o.lr.base;
  j["schedule"] = std::string(to_string(o.lr.kind));
  if (!o.lr.values.empty()) j["lr_values"] = o.lr.values;
  j["momentum"] = o.momentum;
  j["weight_decay"] = o.weight_decay;
  j["batch_size"] = o.batch_size;
  j["layer_mask"] = o.layer_mask;
  return j;
}

}  // namespace

ExperimentConfig parse_experiment_config(const Json& j) {
  require_known_keys(j,
                     {"name", "dataset", "loss", "network", "optimizer", "ee", "epochs",
                      "diagnostics", "checkpoint_stride", "seeds", "output_dir"},
                     "config");
  ExperimentConfig c;
  c.name = get_or<std::string>(j, "name", "", "config");
  c.loss = parse_enum(j, "loss", c.loss, parse_loss_kind, "config");

  if (j.contains("dataset")) {
    const Json& d = j.at("dataset");
    require_known_keys(d, {"generator", "n", "noise", "freq", "dim", "path", "seed"}, "dataset");
    c.dataset.generator = get_or(d, "generator", c.dataset.generator, "dataset");
    c.dataset.n = get_or(d, "n", c.dataset.n, "dataset");
    c.dataset.noise = get_or(d, "noise", c.dataset.noise, "dataset");
    c.dataset.freq = get_or(d, "freq", c.dataset.freq, "dataset");
    c.dataset.dim = get_or(d, "dim", c.dataset.dim, "dataset");
    c.dataset.path = get_or(d, "path", c.dataset.path, "dataset");
    if (d.contains("seed")) c.dataset.seed = get_or<std::uint64_t>(d, "seed", 0, "dataset");
    const auto& g = c.dataset.generator;
    if (g != "two-moons" && g != "sine" && g != "random" && g != "csv") {
      throw SchemaError("dataset.generator: unknown generator '" + g + "'");
    }
    if (g == "csv" && c.dataset.path.empty()) throw SchemaError("dataset.path: required for csv");
  }

  if (j.contains("network")) {
    const Json& n = j.at("network");
    require_known_keys(n,
                       {"hidden", "head_mode", "softplus_sharpness", "gate_sharpness",
                        "init_width"},
                       "network");
    c.hidden = get_or(n, "hidden", c.hidden, "network");
    c.network.head_mode = parse_enum(n, "head_mode", c.network.head_mode, parse_head_mode,
                                     "network");
    c.network.softplus_sharpness =
        get_or(n, "softplus_sharpness", c.network.softplus_sharpness, "network");
    c.network.gate_sharpness = get_or(n, "gate_sharpness", c.network.gate_sharpness, "network");
    c.network.init_width = get_or(n, "init_width", c.network.init_width, "network");
  }

  if (j.contains("optimizer")) c.optimizer = parse_optimizer(j.at("optimizer"), "optimizer");

  if (j.contains("ee")) {
    const Json& e = j.at("ee");
    require_known_keys(e, {"tau", "epsilon", "exploit", "exploit_lr"}, "ee");
    EEBlock ee;
    ee.tau = get_or(e, "tau", ee.tau, "ee");
    ee.epsilon = get_or(e, "epsilon", ee.epsilon, "ee");
    if (e.contains("exploit")) ee.exploit = parse_optimizer(e.at("exploit"), "ee.exploit");
    ee.exploit_lr = parse_enum(e, "exploit_lr", ee.exploit_lr, parse_exploit_lr_mode, "ee");
    c.ee = ee;
    c.network.head_mode = HeadMode::gated;
  }

  c.epochs = get_or(j, "epochs", c.epochs, "config");

  if (j.contains("diagnostics")) {
    const Json& d = j.at("diagnostics");
    require_known_keys(d, {"stride", "rel_tol", "method", "jacobian_cap", "drift", "bound_etas"},
                       "diagnostics");
    c.diagnostics.stride = get_or(d, "stride", c.diagnostics.stride, "diagnostics");
    c.diagnostics.alignment.rel_tol =
        get_or(d, "rel_tol", c.diagnostics.alignment.rel_tol, "diagnostics");
    c.diagnostics.alignment.method = parse_enum(
        d, "method", c.diagnostics.alignment.method, parse_membership_method, "diagnostics");
    c.diagnostics.alignment.jacobian_cap =
        get_or(d, "jacobian_cap", c.diagnostics.alignment.jacobian_cap, "diagnostics");
    c.diagnostics.drift = get_or(d, "drift", c.diagnostics.drift, "diagnostics");
    c.diagnostics.bound_etas = get_or(d, "bound_etas", c.diagnostics.bound_etas, "diagnostics");
  }

  c.checkpoint_stride = get_or(j, "checkpoint_stride", c.checkpoint_stride, "config");
  c.seeds = get_or(j, "seeds", c.seeds, "config");
  c.output_dir = get_or(j, "output_dir", c.output_dir, "config");

  if (c.epochs < 0) throw SchemaError("epochs: must be >= 0");
  if (c.seeds.empty()) throw SchemaError("seeds: at least one seed required");
  if (c.hidden.empty()) throw SchemaError("network.hidden: at least one hidden layer required");
  if (c.diagnostics.stride < 0) throw SchemaError("diagnostics.stride: must be >= 0");
  if (c.ee && c.epochs <= c.ee->tau) throw SchemaError("epochs: must exceed ee.tau");
  return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  const std::string text = read_text(path);
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw SchemaError(path + ": " + e.what());
  }
  return parse_experiment_config(j);
}

Dataset build_dataset(const DatasetConfig& config, LossKind kind, std::uint64_t seed) {
  if (config.generator == "two-moons") return gen_two_moons(config.n, config.noise, seed, kind);
  if (config.generator == "sine") return gen_sine(config.n, config.freq, seed, kind);
  if (config.generator == "random") return gen_random(config.n, config.dim, seed, kind);
  if (config.generator == "csv") return load_dataset(config.path, kind);
  throw SchemaError("unknown dataset generator '" + config.generator + "'");
}

NetworkSpec build_network_spec(const ExperimentConfig& config, const Dataset& data) {
  NetworkSpec spec = config.network;
  spec.layer_widths.clear();
  spec.layer_widths.push_back(data.X.cols());
  for (Index w : config.hidden) spec.layer_widths.push_back(w);
  spec.layer_widths.push_back(data.Y.cols());
  spec.validate();
  return spec;
}

std::vector<BoundSummary> run_bounds(const TrainResult& result, const Dataset& data,
                                     const OptimizerSpec& rate_source,
                                     const std::vector<double>& etas) {
  std::vector<BoundTerms> records;
  double rate = 0.0;
  double L_used = 0.0;
  if (result.tau) {
    for (const auto& b : result.bound_terms) {
      if (b.step >= *result.tau) records.push_back(b);
    }
    rate = result.exploit_lr;
    L_used = result.lipschitz_exploit;
  } else {
    records = result.bound_terms;
    // The step-size condition needs one fixed rate.
    rate = rate_source.lr.kind == ScheduleKind::constant ? rate_source.lr.base : 0.0;
    L_used = result.lipschitz_emp;
  }
  const double alpha = rate * L_used / 2.0;
  std::vector<BoundSummary> out;
  for (double eta : etas) {
    BoundSummary s;
    const auto prefixes = bound_check_prefixes(records, data, eta, alpha, L_used);
    s.prefixes = prefixes.size();
    s.full = prefixes.empty() ? bound_check(records, data, eta, alpha, L_used) : prefixes.back();
    s.holds_every_prefix = !prefixes.empty();
    for (const auto& p : prefixes) s.holds_every_prefix = s.holds_every_prefix && p.holds;
    out.push_back(s);
  }
  return out;
}

SeedOutcome run_seed(const ExperimentConfig& config, std::uint64_t seed,
                     const std::string& out_dir) {
  const auto start = std::chrono::steady_clock::now();
  SeedOutcome out;
  out.seed = seed;
  out.data = build_dataset(config.dataset, config.loss, config.dataset.seed.value_or(seed));
  out.spec = build_network_spec(config, out.data);
  const Network net(out.spec);
  Rng init(seed, Stream::init);
  out.theta0 = net.init_params(init);

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    if (config.checkpoint_stride > 0) std::filesystem::create_directories(out_dir + "/checkpoints");
  }

  TrainOptions options;
  options.diag_stride = config.diagnostics.stride;
  options.alignment = config.diagnostics.alignment;
  options.record_drift = config.diagnostics.drift;
  options.seed = seed;
  options.checkpoint_stride = out_dir.empty() ? 0 : config.checkpoint_stride;
  const NetworkSpec spec = out.spec;
  options.on_checkpoint = [&out_dir, &spec](std::int64_t step, const VectorXd& theta,
                                            const GateState& gates, const std::string& rng) {
    const Checkpoint ck{spec, theta, gates, rng, step};
    save_checkpoint(ck, out_dir + "/checkpoints/step_" + std::to_string(step) + ".json");
  };

  OptimizerSpec rate_source = config.optimizer;
  if (config.ee) {
    EEConfig ee;
    ee.tau = config.ee->tau;
    ee.epsilon = config.ee->epsilon;
    ee.explore = config.optimizer;
    ee.exploit = config.ee->exploit.value_or(config.optimizer);
    ee.exploit_lr_mode = config.ee->exploit_lr;
    rate_source = ee.exploit;
    out.result = ee_train(net, out.theta0, out.data, ee, config.epochs, options);
  } else {
    out.result = train_plain(net, out.theta0, out.data, config.optimizer, config.epochs, options);
  }
  if (!config.diagnostics.bound_etas.empty()) {
    out.bounds = run_bounds(out.result, out.data, rate_source, config.diagnostics.bound_etas);
  }
  out.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  if (!out_dir.empty()) {
    save_trace(out.result.trace, out_dir + "/trace.csv");
    std::vector<PhasedBoundTerms> rows;
    for (const auto& b : out.result.bound_terms) {
      const bool exploit = out.result.tau && b.step >= *out.result.tau;
      rows.push_back({exploit ? Phase::exploit : Phase::explore, b});
    }
    write_text(out_dir + "/bound_terms.csv", bound_terms_to_csv(rows));
    Json al = Json::array();
    for (const auto& r : out.result.alignment) al.push_back(to_json(r));
    write_text(out_dir + "/alignment.json", dump_json(al));
    save_checkpoint({spec, out.result.theta, out.result.gates, out.result.rng_state,
                     out.result.trace.empty() ? 0 : out.result.trace.back().step},
                    out_dir + "/final.json");
    write_text(out_dir + "/summary.json", dump_json(summary_json(config, out)));
  }
  return out;
}

Json summary_json(const ExperimentConfig& config, const SeedOutcome& outcome) {
  const TrainResult& r = outcome.result;
  Json j;
  j["name"] = config.name;
  j["seed"] = outcome.seed;
  j["dataset"] = outcome.data.name;
  j["data_seed"] = outcome.data.seed;
  j["loss_kind"] = std::string(to_string(config.loss));
  j["network"] = to_json(outcome.spec);
  j["optimizer"] = optimizer_json(config.optimizer);
  j["epochs"] = config.epochs;
  if (r.tau) j["tau"] = *r.tau;
  j["diverged"] = r.diverged;
  if (r.diverged) j["divergence"] = r.divergence;
  if (!r.trace.empty()) {
    j["final_step"] = r.trace.back().step;
    j["final_loss"] = r.trace.back().loss;
    j["train_error"] = r.trace.back().train_error;
    j["q_t"] = r.trace.back().q_t;
  }
  Json q_tail = Json::array();
  std::vector<std::pair<std::int64_t, std::int64_t>> sampled;
  for (const auto& rec : r.trace) {
    if (rec.aligned) sampled.emplace_back(rec.step, rec.q_t);
  }
  const std::size_t from = sampled.size() > 10 ? sampled.size() - 10 : 0;
  for (std::size_t i = from; i < sampled.size(); ++i) {
    q_tail.push_back({sampled[i].first, sampled[i].second});
  }
  j["q_t_tail"] = q_tail;
  j["aligned_samples"] = static_cast<std::int64_t>(
      std::count_if(r.alignment.begin(), r.alignment.end(), [](const auto& a) { return a.aligned; }));
  j["alignment_samples"] = r.alignment.size();

  const TraceRecord* last_drift = nullptr;
  const TraceRecord* tau_drift = nullptr;
  for (const auto& rec : r.trace) {
    if (!rec.drift) continue;
    last_drift = &rec;
    if (r.tau && rec.step <= *r.tau) tau_drift = &rec;
  }
  if (last_drift) {
    j["drift_final"] = *last_drift->drift;
    j["drift_final_step"] = last_drift->step;
  }
  if (tau_drift) {
    j["drift_at_tau"] = *tau_drift->drift;
    j["drift_at_tau_step"] = tau_drift->step;
  }
  j["lipschitz_emp"] = r.lipschitz_emp;
  j["lipschitz_explore"] = r.lipschitz_explore;
  if (r.tau) {
    j["lipschitz_exploit"] = r.lipschitz_exploit;
    j["exploit_lr"] = r.exploit_lr;
    if (r.lhat > 0.0) j["lhat"] = r.lhat;
  }
  Json bounds = Json::array();
  for (const auto& b : outcome.bounds) {
    Json e = to_json(b.full);
    e["prefixes"] = b.prefixes;
    e["holds_every_prefix"] = b.holds_every_prefix;
    bounds.push_back(std::move(e));
  }
  j["bounds"] = bounds;
  j["wall_time_s"] = outcome.wall_time_s;
  return j;
}

}  // namespace gradalign
