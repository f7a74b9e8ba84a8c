// gradalign: dataset generation, training runs, diagnostics and plots.
// Every failure exits nonzero with one "error[E_CODE]: message" line on stderr.

#include "gradalign/data.hpp"
#include "gradalign/diagnostics.hpp"
#include "gradalign/errors.hpp"
#include "gradalign/experiment.hpp"
#include "gradalign/io.hpp"
#include "gradalign/plot.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

namespace ga = gradalign;

namespace {

constexpr int kExitDiverged = 2;

void emit(const ga::Json& j, const std::string& out) {
  if (out.empty()) {
    std::cout << ga::dump_json(j);
  } else {
    ga::write_text(out, ga::dump_json(j));
  }
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

unsigned thread_cap() {
  const char* env = std::getenv("GRADALIGN_THREADS");
  if (!env) return 1;
  const long v = std::strtol(env, nullptr, 10);
  return v > 0 ? static_cast<unsigned>(v) : 1u;
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------
struct GenArgs {
  ga::Index n = 100;
  std::uint64_t seed = 1;
  double noise = 0.0;
  double freq = 20.0;
  ga::Index dim = 2;
  std::string loss = "binary_ce";
  std::string out;
};

int run_gen(const std::string& generator, const GenArgs& a) {
  ga::DatasetConfig cfg;
  cfg.generator = generator;
  cfg.n = a.n;
  cfg.noise = a.noise;
  cfg.freq = a.freq;
  cfg.dim = a.dim;
  const ga::Dataset d = ga::build_dataset(cfg, ga::parse_loss_kind(a.loss), a.seed);
  const std::string out = a.out.empty() ? generator + ".csv" : a.out;
  ga::save_csv(d, out);
  std::cout << "wrote " << out << " (" << d.size() << " rows)\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------
struct TrainArgs {
  std::string config;
  std::string seeds;
  std::string out;
};

int run_train(const TrainArgs& a) {
  ga::ExperimentConfig cfg = ga::load_experiment_config(a.config);
  if (!a.seeds.empty()) {
    cfg.seeds.clear();
    for (const auto& s : split_list(a.seeds)) cfg.seeds.push_back(std::stoull(s));
  }
  if (!a.out.empty()) cfg.output_dir = a.out;

  const std::size_t count = cfg.seeds.size();
  std::vector<std::string> lines(count);
  std::vector<int> status(count, 0);
  std::vector<std::string> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < count; i = next++) {
      const std::uint64_t seed = cfg.seeds[i];
      const std::string dir = cfg.output_dir + "/seed_" + std::to_string(seed);
      try {
        const ga::SeedOutcome o = ga::run_seed(cfg, seed, dir);
        const auto& trace = o.result.trace;
        std::ostringstream line;
        line << "seed " << seed << ": ";
        if (!trace.empty()) {
          line << "loss " << ga::format_double(trace.back().loss) << " train_error "
               << trace.back().train_error << " q_t " << trace.back().q_t;
        }
        if (o.result.diverged) {
          line << " DIVERGED (" << o.result.divergence << ")";
          status[i] = kExitDiverged;
        }
        line << " -> " << dir;
        lines[i] = line.str();
      } catch (const ga::Error& e) {
        errors[i] = "error[" + e.code() + "]: seed " + std::to_string(seed) + ": " + e.what();
        status[i] = 1;
      }
    }
  };
  const unsigned threads =
      static_cast<unsigned>(std::min<std::size_t>(thread_cap(), count));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  int code = 0;
  for (std::size_t i = 0; i < count; ++i) {
    if (!lines[i].empty()) std::cout << lines[i] << '\n';
    if (!errors[i].empty()) std::cerr << errors[i] << '\n';
    if (status[i] == 1) code = 1;
    if (status[i] == kExitDiverged && code == 0) code = kExitDiverged;
  }
  return code;
}

// ---------------------------------------------------------------------------
// diagnose
// ---------------------------------------------------------------------------
struct AlignArgs {
  std::string checkpoint;
  std::string data;
  std::string loss = "binary_ce";
  std::string method = "auto";
  double tol = ga::kDefaultMembershipTol;
  std::string out;
};

int run_alignment(const AlignArgs& a) {
  const ga::Checkpoint ck = ga::load_checkpoint(a.checkpoint);
  const ga::Dataset d = ga::load_dataset(a.data, ga::parse_loss_kind(a.loss));
  const ga::Network net(ck.spec);
  ga::AlignmentOptions opts;
  opts.rel_tol = a.tol;
  opts.method = ga::parse_membership_method(a.method);
  ga::AlignmentRecord rec = ga::alignment(net, ck.theta, ck.gates, d, opts);
  rec.step = ck.step;
  const ga::MatrixXd out = ga::forward(net, ck.theta, ck.gates, d.X);
  ga::Json j = ga::to_json(rec);
  j["necessity"] = ga::to_json(ga::necessity_check(out, d.Y_ell, rec.aligned));
  emit(j, a.out);
  return 0;
}

struct SafeArgs {
  ga::Index n = 200;
  ga::Index mh1 = 17;
  ga::Index mh = 0;
  std::string mh_rule;
  std::uint64_t seed = 1;
  ga::Index dim = 2;
  std::string data;
  std::string out;
};

int run_safe(const SafeArgs& a) {
  ga::MatrixXd x;
  if (!a.data.empty()) {
    x = ga::load_csv(a.data, ga::LossKind::binary_ce).X;
  } else {
    x = ga::gen_random(a.n, a.dim, a.seed).X;
  }
  const ga::Index n = x.rows();
  ga::Index mh = a.mh;
  if (a.mh_rule == "2n-over-mh1") {
    mh = ga::head_width_rule(n, a.mh1);
  } else if (!a.mh_rule.empty()) {
    throw ga::ContractError("unknown --mh-rule '" + a.mh_rule + "'");
  }
  if (mh < 1) throw ga::ContractError("--mh or --mh-rule is required");
  if (a.mh1 < 2) throw ga::ContractError("--mh1 must be >= 2 (bias included)");
  ga::NetworkSpec spec;
  spec.layer_widths = {x.cols(), a.mh1 - 1, mh, 1};
  spec.head_mode = ga::HeadMode::gated;
  const auto cert = ga::safe_exploration_check(spec, x, a.seed);
  ga::Json j = ga::to_json(cert);
  if (!a.mh_rule.empty()) j["mh_rule"] = a.mh_rule;
  emit(j, a.out);
  return 0;
}

struct BoundArgs {
  std::string terms;
  std::string data;
  std::string loss = "binary_ce";
  std::string phase = "all";
  double lr = 0.0;
  double lipschitz = 0.0;
  std::vector<double> etas;
  std::string out;
};

int run_bounds_cmd(const BoundArgs& a) {
  const auto rows = ga::bound_terms_from_csv(ga::read_text(a.terms));
  const ga::Dataset d = ga::load_dataset(a.data, ga::parse_loss_kind(a.loss));
  std::vector<ga::BoundTerms> records;
  for (const auto& r : rows) {
    if (a.phase == "all" || a.phase == ga::to_string(r.phase)) records.push_back(r.terms);
  }
  if (a.phase != "all" && a.phase != "explore" && a.phase != "exploit") {
    throw ga::ContractError("--phase must be all, explore or exploit");
  }
  const double alpha = a.lr * a.lipschitz / 2.0;
  ga::Json arr = ga::Json::array();
  const std::vector<double> etas = a.etas.empty() ? std::vector<double>{1.0} : a.etas;
  for (double eta : etas) {
    const auto prefixes = ga::bound_check_prefixes(records, d, eta, alpha, a.lipschitz);
    ga::Json j = prefixes.empty() ? ga::to_json(ga::bound_check(records, d, eta, alpha, a.lipschitz))
                                  : ga::to_json(prefixes.back());
    bool every = !prefixes.empty();
    for (const auto& p : prefixes) every = every && p.holds;
    j["prefixes"] = prefixes.size();
    j["holds_every_prefix"] = every;
    arr.push_back(std::move(j));
  }
  emit(arr, a.out);
  return 0;
}

struct DriftArgs {
  std::string before;
  std::string after;
  std::string data;
  std::string loss = "binary_ce";
  std::string out;
};

int run_drift(const DriftArgs& a) {
  const ga::Checkpoint c0 = ga::load_checkpoint(a.before);
  const ga::Checkpoint c1 = ga::load_checkpoint(a.after);
  const ga::Dataset d = ga::load_dataset(a.data, ga::parse_loss_kind(a.loss));
  const ga::Network net0(c0.spec);
  const ga::Network net1(c1.spec);
  const ga::MatrixXd m0 = ga::gram(net0, c0.theta, c0.gates, d.X);
  const ga::MatrixXd m1 = ga::gram(net1, c1.theta, c1.gates, d.X);
  if (m0.rows() != m1.rows() || m0.cols() != m1.cols()) {
    throw ga::SizeError("checkpoints give Gram matrices of different shapes");
  }
  ga::Json j;
  j["step_before"] = c0.step;
  j["step_after"] = c1.step;
  j["drift"] = ga::drift(m0, m1);
  emit(j, a.out);
  return 0;
}

// ---------------------------------------------------------------------------
// plot
// ---------------------------------------------------------------------------
struct PlotArgs {
  std::string trace;
  std::string out = "trace.svg";
  std::string series = "train_error,q_t";
  std::string title;
};

int run_plot(const PlotArgs& a) {
  const ga::TrainTrace trace = ga::load_trace(a.trace);
  ga::PlotOptions opts;
  opts.series = split_list(a.series);
  opts.title = a.title;
  ga::write_text(a.out, ga::plot_trace(trace, opts));
  std::cout << "wrote " << a.out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradient/data alignment diagnostics for small MLPs"};
  app.require_subcommand(1);
  int code = 0;

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic dataset CSV");
  gen_cmd->require_subcommand(1);
  for (const char* name : {"two-moons", "sine", "random"}) {
    auto* sub = gen_cmd->add_subcommand(name, std::string("Generate the ") + name + " dataset");
    sub->add_option("--n", gen.n, "Samples")->check(CLI::PositiveNumber);
    sub->add_option("--seed", gen.seed, "Seed");
    sub->add_option("--loss", gen.loss, "Label encoding: squared, binary_ce, multiclass_ce");
    sub->add_option("--out", gen.out, "Output CSV (sidecar written next to it)");
    if (std::string(name) == "two-moons") sub->add_option("--noise", gen.noise, "Noise std");
    if (std::string(name) == "sine") sub->add_option("--freq", gen.freq, "Frequency");
    if (std::string(name) == "random") sub->add_option("--dim", gen.dim, "Input dimension");
    const std::string g = name;
    sub->callback([&code, &gen, g]() { code = run_gen(g, gen); });
  }

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Run an experiment config");
  train_cmd->add_option("config", train.config, "Experiment JSON")->required();
  train_cmd->add_option("--seeds", train.seeds, "Comma-separated seeds overriding the config");
  train_cmd->add_option("--out", train.out, "Output directory overriding the config");
  train_cmd->callback([&]() { code = run_train(train); });

  auto* diag_cmd = app.add_subcommand("diagnose", "Certificates and bounds");
  diag_cmd->require_subcommand(1);

  AlignArgs align;
  auto* align_cmd = diag_cmd->add_subcommand("alignment", "Alignment of a checkpoint");
  align_cmd->add_option("--checkpoint", align.checkpoint, "Checkpoint JSON")->required();
  align_cmd->add_option("--data", align.data, "Dataset CSV")->required();
  align_cmd->add_option("--loss", align.loss, "Loss kind");
  align_cmd->add_option("--method", align.method, "auto, direct_lsq or gram");
  align_cmd->add_option("--tol", align.tol, "Relative residual tolerance");
  align_cmd->add_option("--out", align.out, "Report path (stdout if omitted)");
  align_cmd->callback([&]() { code = run_alignment(align); });

  SafeArgs safe;
  auto* safe_cmd = diag_cmd->add_subcommand("safe-exploration", "Rank of the phi matrix");
  safe_cmd->add_option("--n", safe.n, "Samples (random inputs)")->check(CLI::PositiveNumber);
  safe_cmd->add_option("--mh1", safe.mh1, "m_{H-1}, gate input width including bias");
  safe_cmd->add_option("--mh", safe.mh, "m_H, head width");
  safe_cmd->add_option("--mh-rule", safe.mh_rule, "Sizing rule for m_H: 2n-over-mh1");
  safe_cmd->add_option("--seed", safe.seed, "Seed");
  safe_cmd->add_option("--dim", safe.dim, "Input dimension of random inputs");
  safe_cmd->add_option("--data", safe.data, "Use the inputs of this CSV instead");
  safe_cmd->add_option("--out", safe.out, "Report path (stdout if omitted)");
  safe_cmd->callback([&]() { code = run_safe(safe); });

  BoundArgs bound;
  auto* bound_cmd = diag_cmd->add_subcommand("bounds", "Optimality-gap bound over a run");
  bound_cmd->add_option("--trace,--terms", bound.terms, "bound_terms.csv of a run")->required();
  bound_cmd->add_option("--data", bound.data, "Dataset CSV")->required();
  bound_cmd->add_option("--loss", bound.loss, "Loss kind");
  bound_cmd->add_option("--phase", bound.phase, "all, explore or exploit");
  bound_cmd->add_option("--lr", bound.lr, "Constant learning rate of the run")->required();
  bound_cmd->add_option("--lipschitz", bound.lipschitz, "Gradient Lipschitz estimate")
      ->required();
  bound_cmd->add_option("--eta", bound.etas, "Target scale (repeatable)");
  bound_cmd->add_option("--out", bound.out, "Report path (stdout if omitted)");
  bound_cmd->callback([&]() { code = run_bounds_cmd(bound); });

  DriftArgs drift;
  auto* drift_cmd = diag_cmd->add_subcommand("drift", "Gram drift between two checkpoints");
  drift_cmd->add_option("--before", drift.before, "Earlier checkpoint")->required();
  drift_cmd->add_option("--after", drift.after, "Later checkpoint")->required();
  drift_cmd->add_option("--data", drift.data, "Dataset CSV")->required();
  drift_cmd->add_option("--loss", drift.loss, "Loss kind");
  drift_cmd->add_option("--out", drift.out, "Report path (stdout if omitted)");
  drift_cmd->callback([&]() { code = run_drift(drift); });

  PlotArgs plot;
  auto* plot_cmd = app.add_subcommand("plot", "SVG plot of trace columns");
  plot_cmd->add_option("--trace", plot.trace, "Trace CSV")->required();
  plot_cmd->add_option("--out", plot.out, "SVG path");
  plot_cmd->add_option("--series", plot.series, "Comma-separated columns");
  plot_cmd->add_option("--title", plot.title, "Title");
  plot_cmd->callback([&]() { code = run_plot(plot); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help() << "error[E_USAGE]: " << e.what() << '\n';
    return 1;
  } catch (const ga::Error& e) {
    std::cerr << "error[" << e.code() << "]: " << e.what() << '\n';
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error[E_IO]: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error[E_INTERNAL]: " << e.what() << '\n';
    return 1;
  }
  return code;
}
