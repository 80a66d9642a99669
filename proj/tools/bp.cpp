#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "bellport/io.hpp"

namespace fs = std::filesystem;
using namespace bellport;

namespace {

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(tok);
  return out;
}

double parse_double(const std::string& s, const char* what) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw config_error(std::string(what) + ": \"" + s + "\" is not a number");
  }
}

void emit(const fs::path& dir, const std::string& name, const std::string& text) {
  fs::create_directories(dir);
  write_text_file((dir / name).string(), text);
}

std::string csv_of(const std::function<void(std::ostream&)>& writer) {
  std::ostringstream out;
  writer(out);
  return out.str();
}

MarketLattice lattice_of(const ModelFile& m) {
  return build_lattice(m.chars, m.spec.T, m.steps, m.scheme, m.expand);
}

// Default strategy menu for grid-restricted runs: equispaced points over the
// bounding box of the constraint, or the set itself when it is finite.
StrategyGrid default_grid(const ConstraintSet& C, int per_axis, bool intermediate) {
  StrategyGrid grid;
  if (C.kind() == ConstraintKind::FiniteSet || C.kind() == ConstraintKind::ScaledStar) {
    grid.pis = C.points();
  } else {
    Vec lo, hi;
    C.bounding_box(2.0, lo, hi);
    int d = C.dim();
    std::vector<double> axis(per_axis);
    long total = 1;
    for (int i = 0; i < d; ++i) total *= per_axis;
    for (long idx = 0; idx < total; ++idx) {
      Vec y(d);
      long rem = idx;
      for (int i = 0; i < d; ++i) {
        int j = int(rem % per_axis);
        rem /= per_axis;
        y[i] = per_axis == 1 ? lo[i] : lo[i] + (hi[i] - lo[i]) * j / double(per_axis - 1);
      }
      if (C.contains(y, kMemberTol)) grid.pis.push_back(y);
    }
  }
  if (intermediate)
    grid.kappas = {0.0, 0.25, 0.5, 1.0, 2.0};
  else
    grid.kappas = {0.0};
  return grid;
}

struct Options {
  std::string model;
  std::string candidate;
  std::string out;
  std::string sweep;
  std::string at;
  std::vector<std::string> tols;
  unsigned seed = 0;
  int budget = 256;
  int grid = 5;
  double ell = 1.0;
  bool parallel = false;
};

int run_solve(const Options& opt) {
  ModelFile m = load_model(opt.model);
  MarketLattice lat = lattice_of(m);
  OpportunityLattice opp = solve_tree_dp(lat, m.spec, m.constraint);
  auto residuals = drift_identity_residual(opp, lat, m.spec, m.constraint);

  const auto& root = opp.strategy[0][0];
  nlohmann::json summary = summary_to_json(opp.value0, opp.L0(), root.pi, root.kappa);
  emit(opt.out, "summary.json", summary.dump(2) + "\n");
  emit(opt.out, "opportunity.csv",
       csv_of([&](std::ostream& o) { write_opportunity_csv(o, lat, opp.L, opp.strategy); }));
  emit(opt.out, "residuals.csv",
       csv_of([&](std::ostream& o) { write_residual_csv(o, residuals); }));
  std::cout << summary.dump(2) << '\n';
  return 0;
}

int run_oracle(const Options& opt) {
  ModelFile m = load_model(opt.model);
  MarketLattice lat = lattice_of(m);
  StrategyGrid grid = default_grid(m.constraint, opt.grid, m.spec.intermediate);
  auto [best, table] = brute_force_oracle(lat, m.spec, m.constraint, grid);
  OpportunityLattice dp = solve_tree_dp(lat, m.spec, m.constraint, &grid);

  nlohmann::json j;
  j["value0"] = best;
  j["value0_dp"] = dp.value0;
  j["diff"] = std::abs(best - dp.value0);
  nlohmann::json root;
  root["pi"] = std::vector<double>(table[0][0].pi.data(),
                                   table[0][0].pi.data() + table[0][0].pi.size());
  root["kappa"] = table[0][0].kappa;
  j["strategy_at_root"] = root;
  emit(opt.out, "oracle.json", j.dump(2) + "\n");
  std::cout << j.dump(2) << '\n';
  return 0;
}

int run_verify(const Options& opt) {
  if (opt.candidate.empty()) throw config_error("verify needs --candidate");
  ModelFile m = load_model(opt.model);
  MarketLattice lat = lattice_of(m);

  std::ifstream in(opt.candidate);
  if (!in) throw config_error("candidate file \"" + opt.candidate + "\" cannot be opened");
  SolutionTriple cand = read_candidate_csv(in, lat);

  double tol_mart = kMartTol;
  for (const auto& t : opt.tols) {
    auto eq = t.find('=');
    std::string name = eq == std::string::npos ? t : t.substr(0, eq);
    if (eq == std::string::npos) throw config_error("--tol wants NAME=VALUE, got \"" + t + "\"");
    double v = parse_double(t.substr(eq + 1), "--tol");
    if (name == "mart")
      tol_mart = v;
    else
      throw config_error("--tol: unknown tolerance \"" + name + "\"");
  }

  OpportunityLattice opp = solve_tree_dp(lat, m.spec, m.constraint);
  VerificationReport rep =
      verify_all(cand, lat, m.spec, m.constraint, opt.budget, &opp, tol_mart);
  nlohmann::json j = report_to_json(rep);
  emit(opt.out, "report.json", j.dump(2) + "\n");
  std::cout << j.dump(2) << '\n';
  return rep.pass ? 0 : 1;
}

int run_transform(const Options& opt) {
  ModelFile m = load_model(opt.model);
  TransformResult tr = transform_model(m.chars, m.constraint);

  ModelFile tm = m;
  tm.chars = tr.chars;
  tm.constraint = tr.constraint;
  emit(opt.out, "transformed.json", model_to_json(tm).dump(2) + "\n");

  std::ostringstream phi;
  phi << "column,active";
  for (int i = 0; i < m.chars.d; ++i) phi << ",phi_" << i;
  phi << '\n';
  for (int j = 0; j < m.chars.d; ++j) {
    phi << j << ',' << (tr.active[j] ? 1 : 0);
    for (int i = 0; i < m.chars.d; ++i) phi << ',' << fmt17(tr.Phi(i, j));
    phi << '\n';
  }
  emit(opt.out, "phi.csv", phi.str());

  nlohmann::json j;
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < m.chars.d; ++i)
    rows.push_back(std::vector<double>(tr.Phi.row(i).data(), tr.Phi.row(i).data() + m.chars.d));
  j["phi"] = rows;
  j["active"] = std::vector<bool>(tr.active.begin(), tr.active.end());
  std::cout << j.dump(2) << '\n';
  return 0;
}

int run_geval(const Options& opt) {
  ModelFile m = load_model(opt.model);
  auto ctx = GContext::make(m.spec.p, opt.ell, m.chars, m.constraint);
  GMax mx = maximize_g(ctx, std::nullopt, opt.seed);

  nlohmann::json j;
  j["maximizer"] = std::vector<double>(mx.argmax.data(), mx.argmax.data() + mx.argmax.size());
  j["value"] = mx.value;
  j["attained"] = mx.attained;
  if (!opt.at.empty()) {
    auto toks = split_commas(opt.at);
    if (int(toks.size()) != m.chars.d)
      throw config_error("--at wants " + std::to_string(m.chars.d) + " components");
    Vec y(m.chars.d);
    for (int i = 0; i < m.chars.d; ++i) y[i] = parse_double(toks[i], "--at");
    GValue gv = eval_g(ctx, y);
    j["at"] = std::vector<double>(y.data(), y.data() + y.size());
    j["in_domain"] = gv.in_domain;
    j["g"] = gv.in_domain ? nlohmann::json(gv.value) : nlohmann::json(nullptr);
    j["G"] = directional_G(ctx, y, mx.argmax);
  } else {
    j["g"] = mx.value;
    j["G"] = 0.0;
  }
  std::cout << j.dump(2) << '\n';
  return 0;
}

int run_sweep(const Options& opt) {
  ModelFile m = load_model(opt.model);
  auto eq = opt.sweep.find('=');
  if (eq == std::string::npos) throw config_error("--sweep wants NAME=v1,v2,...");
  std::string axis = opt.sweep.substr(0, eq);
  std::vector<std::string> values = split_commas(opt.sweep.substr(eq + 1));
  if (axis != "p" && axis != "steps" && axis != "theta" && axis != "radius")
    throw config_error("--sweep: unknown axis \"" + axis +
                       "\"; recognized: p, steps, theta, radius");
  if (axis == "theta" && m.chars.d != 1)
    throw config_error("--sweep theta wants a single-asset model");

  std::vector<SweepRow> rows(values.size());
  auto cell = [&](std::size_t i) {
    SweepRow& row = rows[i];
    row.axis_value = values[i];
    row.pi = Vec::Zero(m.chars.d);
    try {
      ModelFile v = m;
      double x = parse_double(values[i], "--sweep value");
      if (axis == "p") {
        v.spec.p = x;
        v.spec.validate();
      } else if (axis == "steps") {
        v.steps = int(x);
        if (v.steps < 1 || double(v.steps) != x)
          throw config_error("steps values must be positive integers");
      } else if (axis == "theta") {
        double sig = std::sqrt(v.chars.cR(0, 0));
        if (!(sig > 0.0)) throw config_error("theta sweep wants positive diffusion");
        v.chars.bR[0] = x * sig;
      } else {
        v.constraint = ConstraintSet::ball(m.chars.d, x);
      }
      MarketLattice lat = lattice_of(v);
      OpportunityLattice opp = solve_tree_dp(lat, v.spec, v.constraint);
      row.L0 = opp.L0();
      row.value0 = opp.value0;
      row.pi = opp.strategy[0][0].pi;
      row.kappa = opp.strategy[0][0].kappa;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
  };

  if (opt.parallel && rows.size() > 1) {
    unsigned nt = std::min<unsigned>(std::thread::hardware_concurrency(),
                                     unsigned(rows.size()));
    if (nt < 1) nt = 1;
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < nt; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < rows.size(); i += nt) cell(i);
      });
    for (auto& th : pool) th.join();
  } else {
    for (std::size_t i = 0; i < rows.size(); ++i) cell(i);
  }

  emit(opt.out, "sweep.csv",
       csv_of([&](std::ostream& o) { write_sweep_csv(o, m.chars.d, rows); }));
  std::cout << "wrote " << rows.size() << " rows\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Constrained power-utility lattice solver and verifier"};
  app.require_subcommand(1);
  Options opt;

  auto add_common = [&](CLI::App* sub, bool needs_out) {
    sub->add_option("--model", opt.model, "model JSON, schema bp-model/1")->required();
    auto* o = sub->add_option("--out", opt.out, "output directory");
    if (needs_out) o->required();
    sub->add_option("--seed", opt.seed, "seed for randomized search starts");
    return sub;
  };

  auto* solve = add_common(app.add_subcommand("solve", "solve the lattice problem"), true);
  (void)solve;
  auto* oracle = add_common(app.add_subcommand("oracle", "grid brute-force cross-check"), true);
  oracle->add_option("--grid", opt.grid, "grid points per axis");
  auto* verify = add_common(app.add_subcommand("verify", "verify a candidate solution"), true);
  verify->add_option("--candidate", opt.candidate, "candidate CSV")->required();
  verify->add_option("--budget", opt.budget, "competitor budget");
  verify->add_option("--tol", opt.tols, "tolerance override NAME=VALUE");
  auto* transform = add_common(app.add_subcommand("transform", "rewrite to unit-vector form"),
                               true);
  (void)transform;
  auto* geval = add_common(app.add_subcommand("g-eval", "evaluate the drift objective"), false);
  geval->add_option("--ell", opt.ell, "opportunity level");
  geval->add_option("--at", opt.at, "evaluation point v1,v2,...");
  auto* sweep = add_common(app.add_subcommand("sweep", "solve across a parameter axis"), true);
  sweep->add_option("--sweep", opt.sweep, "axis NAME=v1,v2,...")->required();
  sweep->add_flag("--parallel", opt.parallel, "run sweep cells on a thread pool");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (app.got_subcommand("solve")) return run_solve(opt);
    if (app.got_subcommand("oracle")) return run_oracle(opt);
    if (app.got_subcommand("verify")) return run_verify(opt);
    if (app.got_subcommand("transform")) return run_transform(opt);
    if (app.got_subcommand("g-eval")) return run_geval(opt);
    if (app.got_subcommand("sweep")) return run_sweep(opt);
  } catch (const config_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const not_representable_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
