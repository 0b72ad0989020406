//
// Copyright 2026 The dpcate Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

// dpcate command-line tool: gen, fit, release, serve, sweep, audit.
//
// Exit codes: 0 success, 1 audit or runtime failure, 2 usage error,
// 3 budget refusal.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dpcate/dpcate.hpp"

namespace {

using namespace dpcate;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitRefused = 3;

double parse_epsilon(const std::string& s) {
  if (s == "inf" || s == "Inf" || s == "INF") return kInf;
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw ArgumentError("invalid epsilon '" + s + "'");
  }
  if (pos != s.size() || !(v > 0.0)) throw ArgumentError("invalid epsilon '" + s + "'");
  return v;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// "1-10" or "1,2,5".
std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (const auto& part : split_list(s)) {
    const auto dash = part.find('-');
    try {
      if (dash == std::string::npos) {
        out.push_back(std::stoull(part));
      } else {
        const auto lo = std::stoull(part.substr(0, dash));
        const auto hi = std::stoull(part.substr(dash + 1));
        if (hi < lo) throw ArgumentError("empty seed range '" + part + "'");
        for (auto v = lo; v <= hi; ++v) out.push_back(v);
      }
    } catch (const std::logic_error&) {
      throw ArgumentError("invalid seed list '" + s + "'");
    }
  }
  return out;
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ArgumentError(path + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << text;
  if (!out) throw Error("failed writing " + path);
}

Matrix stack_points(const std::vector<Vector>& pts) {
  if (pts.empty()) throw EmptyDatasetError("no query points");
  Matrix m(static_cast<Eigen::Index>(pts.size()), pts.front().size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (pts[i].size() != m.cols()) throw ArgumentError("ragged query file");
    m.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
  }
  return m;
}

std::optional<BudgetLedger> open_ledger(const std::string& flag) {
  if (!flag.empty()) return BudgetLedger(flag);
  if (auto p = BudgetLedger::path_from_env()) return BudgetLedger(*p);
  return std::nullopt;
}

void audit_banner() {
  std::cerr << "********************************************************************\n"
               "* AUDIT MODE: raw (non-private) estimates are included in the     *\n"
               "* output. This output carries NO differential-privacy guarantee.  *\n"
               "********************************************************************\n";
}

// ---------------------------------------------------------------------------
// gen

struct GenArgs {
  std::string kind = "dataset1";
  std::size_t n = 0;
  int p = 0;
  std::uint64_t seed = 0;
  int support = 0;
  double constant = 1.0;
  std::string config;
  std::string out = "data.csv";
  std::size_t queries = 0;
  std::string queries_out;
  std::string truth_out;
  std::string bounds_out;
};

int cmd_gen(const GenArgs& a) {
  SyntheticConfig cfg;
  if (!a.config.empty()) {
    cfg = read_json(a.config).get<SyntheticConfig>();
  } else {
    cfg = SyntheticConfig::paper_default(effect_kind_from_string(a.kind), a.n, a.seed);
  }
  if (a.n > 0) cfg.n = a.n;
  if (a.p > 0) cfg.p = a.p;
  if (a.support > 0) cfg.support_size = a.support;
  if (a.kind == "constant") cfg.constant_effect = a.constant;
  cfg.seed = a.seed;
  const std::size_t n = cfg.n;
  cfg.n = n + a.queries;  // query rows share the draw of beta and gamma
  SyntheticData s = generate_synthetic(cfg);
  std::vector<std::size_t> head(n), tail(a.queries);
  for (std::size_t i = 0; i < n; ++i) head[i] = i;
  for (std::size_t i = 0; i < a.queries; ++i) tail[i] = n + i;
  write_csv(s.data.subset(head), a.out);
  if (!a.bounds_out.empty()) {
    json b = {{"covariates", nuisance_detail::bounds_json(s.data.covariate_bounds())},
              {"outcome", {s.data.outcome_bounds().lo, s.data.outcome_bounds().hi}}};
    write_text(a.bounds_out, b.dump(2) + "\n");
  }
  if (a.queries > 0) {
    std::ostringstream q, t;
    for (int j = 0; j < cfg.p; ++j) {
      q << (j ? "," : "") << "x" << (j + 1);
      t << "x" << (j + 1) << ",";
    }
    q << "\n";
    t << "cate\n";
    for (std::size_t i : tail) {
      const Vector& x = s.data[i].x;
      for (Eigen::Index j = 0; j < x.size(); ++j) {
        q << (j ? "," : "") << detail::format_double(x[j]);
        t << detail::format_double(x[j]) << ",";
      }
      q << "\n";
      t << detail::format_double(s.true_cate(x)) << "\n";
    }
    if (!a.queries_out.empty()) write_text(a.queries_out, q.str());
    if (!a.truth_out.empty()) write_text(a.truth_out, t.str());
  }
  std::cout << "wrote " << n << " samples to " << a.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// fit

struct FitArgs {
  std::string data;
  std::string bounds;
  std::string epsilon = "1";
  double delta = 0.05;
  std::string kind = "R";
  std::string method = "param_output_perturbation";
  double kappa = 0.05;
  double lambda = 0.1;
  double bandwidth = 0.0;
  double ridge_mu = NuisanceHyper{}.ridge_mu;
  double ridge_pi = NuisanceHyper{}.ridge_pi;
  double nuisance_fraction = 0.5;
  std::uint64_t seed = 0;
  std::string out_nuisance = "nuisance.json";
  std::string out_model = "model.json";
  std::string budget_id = "default";
  std::string ledger;
};

int cmd_fit(const FitArgs& a) {
  const double eps = parse_epsilon(a.epsilon);
  const PrivacyBudget total{eps, a.delta};
  total.validate();
  const LearnerKind kind = learner_kind_from_string(a.kind);
  std::optional<Bounds> bounds;
  if (!a.bounds.empty()) {
    json b = read_json(a.bounds);
    bounds = Bounds{nuisance_detail::bounds_from_json(b.at("covariates")),
                    {b.at("outcome").at(0).get<double>(), b.at("outcome").at(1).get<double>()}};
  }
  Dataset all = load_csv(a.data, bounds);
  auto [d_tilde, d] = split_disjoint(all, a.nuisance_fraction, a.seed);
  auto ledger = open_ledger(a.ledger);
  if (ledger && !total.is_infinite()) ledger->consume(a.budget_id, "fit", "fit", total);

  NuisanceHyper hyper;
  hyper.ridge_mu = a.ridge_mu;
  hyper.ridge_pi = a.ridge_pi;
  hyper.seed = a.seed;
  NuisancePair eta = total.is_infinite()
                         ? fit_nuisances_nonprivate(d_tilde, a.kappa, hyper)
                         : fit_nuisances_private(d_tilde, total, a.kappa,
                                                 nuisance_method_from_string(a.method), hyper,
                                                 mix_seed(a.seed, 2));
  auto targets = build_targets(d, eta, kind);
  const KernelSpec kernel{a.bandwidth > 0.0 ? a.bandwidth : domain_bandwidth(d.covariate_bounds()),
                          d.q()};
  KrrModel model = fit_krr(targets, kernel, a.lambda);

  json doc = {{"format", "dpcate.fit.v1"},
              {"learner", to_string(kind)},
              {"budget", total},
              {"budget_id", a.budget_id},
              {"kappa", a.kappa},
              {"covariate_bounds", nuisance_detail::bounds_json(d.covariate_bounds())},
              {"outcome_bounds", {d.outcome_bounds().lo, d.outcome_bounds().hi}},
              {"krr", krr_to_json(model)}};
  write_text(a.out_nuisance, nuisance_to_json(eta).dump(2) + "\n");
  write_text(a.out_model, doc.dump(2) + "\n");
  std::cout << "fit " << to_string(kind) << "-learner on n=" << d.size()
            << " (nuisances on " << d_tilde.size() << "), wrote " << a.out_nuisance << " and "
            << a.out_model << "\n";
  return kExitOk;
}

struct LoadedFit {
  LearnerKind kind;
  PrivacyBudget budget;
  std::string budget_id;
  double kappa;
  std::vector<Interval> covariate_bounds;
  Interval outcome_bounds;
  std::shared_ptr<const KrrModel> model;
  NuisancePair eta;
};

LoadedFit load_fit(const std::string& model_path, const std::string& nuisance_path) {
  json doc = read_json(model_path);
  if (doc.value("format", "") != "dpcate.fit.v1")
    throw ArgumentError(model_path + " is not a fit document");
  LoadedFit f{learner_kind_from_string(doc.at("learner").get<std::string>()),
              doc.at("budget").get<PrivacyBudget>(),
              doc.value("budget_id", "default"),
              doc.at("kappa").get<double>(),
              nuisance_detail::bounds_from_json(doc.at("covariate_bounds")),
              {doc.at("outcome_bounds").at(0).get<double>(),
               doc.at("outcome_bounds").at(1).get<double>()},
              std::make_shared<const KrrModel>(krr_from_json(doc.at("krr"))),
              nuisance_from_json(read_json(nuisance_path))};
  return f;
}

FunctionalCalibration functional_calibration(const LoadedFit& f) {
  const auto& m = *f.model;
  double lipschitz = 1.0;
  if (!f.budget.is_infinite())
    lipschitz = squared_loss_lipschitz(f.eta, f.kind, m.kernel(), m.lambda_reg(),
                                       f.covariate_bounds, f.outcome_bounds)
                    .lipschitz;
  return calibration_r(f.kind, f.kappa, lipschitz, m.lambda_reg(),
                       static_cast<std::size_t>(m.n()), m.kernel(), f.budget);
}

// ---------------------------------------------------------------------------
// release

struct ReleaseArgs {
  std::string model = "model.json";
  std::string nuisance = "nuisance.json";
  std::string queries;
  std::string mechanism = "finite";
  std::uint64_t seed = 0;
  bool audit = false;
  std::string out;
  std::string budget_id;
  std::string ledger;
};

int cmd_release(const ReleaseArgs& a) {
  LoadedFit f = load_fit(a.model, a.nuisance);
  const Mechanism mech = mechanism_from_string(a.mechanism);
  if (mech == Mechanism::kNone) throw ArgumentError("release needs finite or functional");
  Matrix q = stack_points(load_points_csv(a.queries));
  f.model->check_dim(q.cols());
  auto ledger = open_ledger(a.ledger);
  const std::string id = a.budget_id.empty() ? f.budget_id : a.budget_id;
  if (ledger) ledger->consume(id, "release", "release --mechanism " + a.mechanism, f.budget);
  if (a.audit) audit_banner();

  if (mech == Mechanism::kFinite) {
    auto r = release_finite(*f.model, q, f.eta, f.budget, f.covariate_bounds, f.outcome_bounds,
                            f.kind, a.seed);
    const std::string text = finite_report_to_json(r, a.audit).dump(2) + "\n";
    if (a.out.empty()) std::cout << text; else write_text(a.out, text);
    return kExitOk;
  }
  auto cal = functional_calibration(f);
  auto r = release_function_batch(*f.model, q, cal, a.seed);
  std::ostringstream csv;
  for (Eigen::Index j = 0; j < q.cols(); ++j) csv << "x" << (j + 1) << ",";
  csv << "estimate" << (a.audit ? ",raw_estimate" : "") << "\n";
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    for (Eigen::Index j = 0; j < q.cols(); ++j) csv << detail::format_double(q(i, j)) << ",";
    csv << detail::format_double(r.private_estimates[i]);
    if (a.audit) csv << "," << detail::format_double(r.raw_estimates[i]);
    csv << "\n";
  }
  if (a.out.empty()) std::cout << csv.str(); else write_text(a.out, csv.str());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// serve

struct ServeArgs {
  std::string model = "model.json";
  std::string nuisance = "nuisance.json";
  std::uint64_t seed = 0;
  std::string checkpoint;
  std::string mode = "noise_path";
  std::string budget_id;
  std::string ledger;
};

int cmd_serve(const ServeArgs& a) {
  LoadedFit f = load_fit(a.model, a.nuisance);
  std::unique_ptr<GpNoiseState> state;
  if (!a.checkpoint.empty() && std::filesystem::exists(a.checkpoint)) {
    state = std::make_unique<GpNoiseState>(GpNoiseState::from_json(read_json(a.checkpoint), f.model));
  } else {
    auto ledger = open_ledger(a.ledger);
    const std::string id = a.budget_id.empty() ? f.budget_id : a.budget_id;
    if (ledger) ledger->consume(id, "release", "serve", f.budget);
    state = std::make_unique<GpNoiseState>(f.model, functional_calibration(f),
                                           iterative_mode_from_string(a.mode));
  }
  std::string line;
  while (std::getline(std::cin, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json resp;
    try {
      json req = json::parse(line);
      auto xs = req.at("x").get<std::vector<double>>();
      Vector x = Eigen::Map<Vector>(xs.data(), static_cast<Eigen::Index>(xs.size()));
      f.model->check_dim(x.size());
      const std::size_t index = state->size();
      const double est = state->query(x, a.seed);
      resp = {{"estimate", est}, {"query_index", index}};
      if (!a.checkpoint.empty()) write_text(a.checkpoint, state->to_json().dump() + "\n");
    } catch (const json::exception& e) {
      resp = {{"error", std::string("malformed request: ") + e.what()}};
    } catch (const Error& e) {
      resp = {{"error", e.what()}};
    }
    std::cout << resp.dump() << std::endl;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepArgs {
  std::string kind = "R";
  std::string mechanism = "finite";
  std::string data_kind = "dataset1";
  std::size_t n = 3000;
  std::string epsilons = "0.1,1,10,inf";
  double delta = 0.05;
  std::string seeds = "1-10";
  double lambda = 0.1;
  double bandwidth = 0.0;
  std::size_t queries = 300;
  std::string out_csv = "sweep.csv";
  std::string out_json = "sweep.json";
};

int cmd_sweep(const SweepArgs& a) {
  SweepConfig cfg;
  cfg.data = SyntheticConfig::paper_default(effect_kind_from_string(a.data_kind), a.n, 0);
  cfg.kind = learner_kind_from_string(a.kind);
  cfg.mechanism = mechanism_from_string(a.mechanism);
  cfg.epsilons.clear();
  for (const auto& e : split_list(a.epsilons)) cfg.epsilons.push_back(parse_epsilon(e));
  cfg.delta = a.delta;
  cfg.seeds = parse_seeds(a.seeds);
  cfg.stage2.lambda_reg = a.lambda;
  cfg.stage2.bandwidth = a.bandwidth;
  cfg.queries = a.queries;
  SweepResult r = run_sweep(cfg);
  write_sweep_csv(r, a.out_csv);
  write_text(a.out_json, sweep_summary_json(cfg, r).dump(2) + "\n");
  std::printf("%-10s %-12s %-12s\n", "epsilon", "mean_pehe", "sd_pehe");
  for (const auto& s : r.summary)
    std::printf("%-10s %-12.6g %-12.6g\n", format_epsilon(s.epsilon).c_str(), s.mean, s.sd);
  std::printf("%-10s %-12.6g %-12.6g\n", "baseline", r.baseline_mean, r.baseline_sd);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// audit

struct AuditArgs {
  std::string what = "all";
  std::string kind = "R";
  std::uint64_t seed = 1;
  std::size_t n = 50;
  std::size_t trials = 200;
  double lambda = 0.1;
};

int cmd_audit(const AuditArgs& a) {
  if (a.what != "all" && a.what != "sensitivity" && a.what != "orthogonality")
    throw ArgumentError("--what must be all, sensitivity or orthogonality");
  bool ok = true;
  const LearnerKind kind = learner_kind_from_string(a.kind);
  if (a.what != "orthogonality") {
    AuditConfig c;
    c.n = a.n;
    c.trials = a.trials;
    c.lambda_reg = a.lambda;
    c.kind = kind;
    c.seed = a.seed;
    AuditReport r = sensitivity_audit(c);
    std::printf("sensitivity: max_distance=%.6g bound=%.6g max_ratio=%.6g L=%.6g %s\n",
                r.max_distance, r.bound, r.max_ratio, r.lipschitz, r.passed ? "PASS" : "FAIL");
    ok = ok && r.passed;
  }
  if (a.what != "sensitivity") {
    OrthogonalityConfig c;
    c.seed = a.seed;
    c.kind = kind;
    OrthogonalityResult orth = orthogonality_probe(c);
    c.plugin = true;
    OrthogonalityResult plug = orthogonality_probe(c);
    const bool pass = orth.slope >= 1.6 && orth.slope <= 2.4 && plug.slope >= 0.8 &&
                      plug.slope <= 1.2;
    std::printf("orthogonality: slope=%.4f plugin_slope=%.4f %s\n", orth.slope, plug.slope,
                pass ? "PASS" : "FAIL");
    ok = ok && pass;
  }
  return ok ? kExitOk : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentially private CATE estimation"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic dataset");
  g->add_option("--kind", gen.kind, "dataset1, dataset2 or constant")->capture_default_str();
  g->add_option("--n", gen.n, "Number of samples")->required();
  g->add_option("--p", gen.p, "Covariate dimension (default 2, 30 for dataset2)");
  g->add_option("--seed", gen.seed, "RNG seed")->capture_default_str();
  g->add_option("--support", gen.support, "Nonzero coefficients in beta and gamma (0: all)");
  g->add_option("--constant", gen.constant, "Effect for --kind constant")->capture_default_str();
  g->add_option("--config", gen.config, "SyntheticConfig JSON (flags override)");
  g->add_option("--out", gen.out, "Dataset CSV")->capture_default_str();
  g->add_option("--queries", gen.queries, "Held-out query points to draw")->capture_default_str();
  g->add_option("--queries-out", gen.queries_out, "Query CSV (x1..xq)");
  g->add_option("--truth-out", gen.truth_out, "True CATE at the queries (x1..xq,cate)");
  g->add_option("--bounds-out", gen.bounds_out, "Declared domain bounds (JSON)");

  FitArgs fit;
  auto* f = app.add_subcommand("fit", "Fit private nuisances and the second stage");
  f->add_option("--data", fit.data, "Dataset CSV")->required();
  f->add_option("--bounds", fit.bounds, "Domain bounds JSON (default: data range + 1%)");
  f->add_option("--epsilon", fit.epsilon, "Total epsilon, or inf")->capture_default_str();
  f->add_option("--delta", fit.delta, "Total delta")->capture_default_str();
  f->add_option("--learner", fit.kind, "R or DR")->capture_default_str();
  f->add_option("--method", fit.method, "param_output_perturbation or dp_gradient_descent")
      ->capture_default_str();
  f->add_option("--kappa", fit.kappa, "Propensity clip")->capture_default_str();
  f->add_option("--lambda", fit.lambda, "Second-stage ridge penalty")->capture_default_str();
  f->add_option("--bandwidth", fit.bandwidth, "Kernel bandwidth (0: from the domain)");
  f->add_option("--ridge-mu", fit.ridge_mu, "Outcome ridge penalty")->capture_default_str();
  f->add_option("--ridge-pi", fit.ridge_pi, "Propensity ridge penalty")->capture_default_str();
  f->add_option("--nuisance-fraction", fit.nuisance_fraction, "Share of rows for stage 1")
      ->capture_default_str();
  f->add_option("--seed", fit.seed, "RNG seed")->capture_default_str();
  f->add_option("--out-nuisance", fit.out_nuisance)->capture_default_str();
  f->add_option("--out-model", fit.out_model)->capture_default_str();
  f->add_option("--budget-id", fit.budget_id, "Ledger budget id")->capture_default_str();
  f->add_option("--ledger", fit.ledger, "Ledger path (default: $DPCATE_LEDGER)");

  ReleaseArgs rel;
  auto* r = app.add_subcommand("release", "Release private CATE estimates");
  r->add_option("--model", rel.model)->capture_default_str();
  r->add_option("--nuisance", rel.nuisance)->capture_default_str();
  r->add_option("--queries", rel.queries, "Query CSV (x1..xq)")->required();
  r->add_option("--mechanism", rel.mechanism, "finite or functional")->capture_default_str();
  r->add_option("--seed", rel.seed, "Noise seed")->capture_default_str();
  r->add_flag("--audit", rel.audit, "Include raw estimates (voids the privacy guarantee)");
  r->add_option("--out", rel.out, "Output path (default: stdout)");
  r->add_option("--budget-id", rel.budget_id, "Ledger budget id (default: from the model)");
  r->add_option("--ledger", rel.ledger, "Ledger path (default: $DPCATE_LEDGER)");

  ServeArgs srv;
  auto* s = app.add_subcommand("serve", "Answer NDJSON queries on stdin iteratively");
  s->add_option("--model", srv.model)->capture_default_str();
  s->add_option("--nuisance", srv.nuisance)->capture_default_str();
  s->add_option("--seed", srv.seed, "Noise seed")->capture_default_str();
  s->add_option("--checkpoint", srv.checkpoint, "State file, written after each query");
  s->add_option("--mode", srv.mode, "noise_path or literal")->capture_default_str();
  s->add_option("--budget-id", srv.budget_id, "Ledger budget id (default: from the model)");
  s->add_option("--ledger", srv.ledger, "Ledger path (default: $DPCATE_LEDGER)");

  SweepArgs sw;
  auto* w = app.add_subcommand("sweep", "PEHE over a privacy-budget grid");
  w->add_option("--learner", sw.kind, "R or DR")->capture_default_str();
  w->add_option("--mechanism", sw.mechanism, "finite, functional or none")->capture_default_str();
  w->add_option("--data-kind", sw.data_kind, "dataset1 or dataset2")->capture_default_str();
  w->add_option("--n", sw.n)->capture_default_str();
  w->add_option("--epsilons", sw.epsilons)->capture_default_str();
  w->add_option("--delta", sw.delta)->capture_default_str();
  w->add_option("--seeds", sw.seeds, "e.g. 1-10 or 1,4,9")->capture_default_str();
  w->add_option("--lambda", sw.lambda)->capture_default_str();
  w->add_option("--bandwidth", sw.bandwidth, "0: from the domain");
  w->add_option("--queries", sw.queries)->capture_default_str();
  w->add_option("--out-csv", sw.out_csv)->capture_default_str();
  w->add_option("--out-json", sw.out_json)->capture_default_str();

  AuditArgs au;
  auto* u = app.add_subcommand("audit", "Sensitivity audit and orthogonality probe");
  u->add_option("--what", au.what, "all, sensitivity or orthogonality")->capture_default_str();
  u->add_option("--learner", au.kind, "R or DR")->capture_default_str();
  u->add_option("--seed", au.seed)->capture_default_str();
  u->add_option("--n", au.n)->capture_default_str();
  u->add_option("--trials", au.trials)->capture_default_str();
  u->add_option("--lambda", au.lambda)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*g) return cmd_gen(gen);
    if (*f) return cmd_fit(fit);
    if (*r) return cmd_release(rel);
    if (*s) return cmd_serve(srv);
    if (*w) return cmd_sweep(sw);
    if (*u) return cmd_audit(au);
  } catch (const BudgetRefusal& e) {
    std::cerr << "refused: " << e.what() << "\n";
    return kExitRefused;
  } catch (const ArgumentError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
