#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bellport/verify.hpp"

namespace bellport {

inline constexpr const char* kModelSchema = "bp-model/1";
inline constexpr const char* kVerifySchema = "bp-verify/1";

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Everything a batch run needs to rebuild a market lattice.
struct ModelFile {
  PowerUtilitySpec spec;
  JointCharacteristics chars = JointCharacteristics::make(1);
  ConstraintSet constraint = ConstraintSet::full_space(1);
  int steps = 1;
  LatticeScheme scheme = LatticeScheme::binomial;
  bool expand = false;
};

namespace detail {

inline const nlohmann::json& require_field(const nlohmann::json& j, const char* key,
                                           const char* where) {
  auto it = j.find(key);
  if (it == j.end())
    throw config_error(std::string(where) + ": missing field \"" + key + "\"");
  return *it;
}

inline double num_field(const nlohmann::json& j, const char* key, const char* where) {
  const auto& v = require_field(j, key, where);
  if (!v.is_number()) throw config_error(std::string(where) + ": \"" + key + "\" must be a number");
  return v.get<double>();
}

inline Vec vec_field(const nlohmann::json& v, int d, const char* what) {
  if (!v.is_array() || int(v.size()) != d)
    throw config_error(std::string(what) + " must be an array of length " + std::to_string(d));
  Vec out(d);
  for (int i = 0; i < d; ++i) {
    if (!v[i].is_number()) throw config_error(std::string(what) + " must hold numbers");
    out[i] = v[i].get<double>();
  }
  return out;
}

inline Mat mat_field(const nlohmann::json& v, int rows, int cols, const char* what) {
  if (!v.is_array() || (rows >= 0 && int(v.size()) != rows))
    throw config_error(std::string(what) + " must be an array of " +
                       (rows >= 0 ? std::to_string(rows) : std::string("row")) + " rows");
  Mat out(int(v.size()), cols);
  for (int i = 0; i < int(v.size()); ++i) out.row(i) = vec_field(v[i], cols, what).transpose();
  return out;
}

}  // namespace detail

inline nlohmann::json constraint_to_json(const ConstraintSet& C) {
  nlohmann::json j;
  switch (C.kind()) {
    case ConstraintKind::FullSpace:
      j["type"] = "full";
      break;
    case ConstraintKind::Box:
      j["type"] = "box";
      j["lo"] = std::vector<double>(C.lo().data(), C.lo().data() + C.dim());
      j["hi"] = std::vector<double>(C.hi().data(), C.hi().data() + C.dim());
      break;
    case ConstraintKind::Ball:
      j["type"] = "ball";
      j["radius"] = C.radius();
      break;
    case ConstraintKind::Polyhedron:
    case ConstraintKind::Cone: {
      j["type"] = C.kind() == ConstraintKind::Cone ? "cone" : "polyhedron";
      std::vector<std::vector<double>> rows;
      for (int i = 0; i < C.rows().rows(); ++i)
        rows.push_back(std::vector<double>(C.rows().row(i).data(),
                                           C.rows().row(i).data() + C.dim()));
      j["rows"] = rows;
      if (C.kind() == ConstraintKind::Polyhedron)
        j["bounds"] = std::vector<double>(C.bounds().data(), C.bounds().data() + C.bounds().size());
      break;
    }
    case ConstraintKind::FiniteSet: {
      j["type"] = "finite";
      std::vector<std::vector<double>> pts;
      for (const auto& p : C.points())
        pts.push_back(std::vector<double>(p.data(), p.data() + p.size()));
      j["points"] = pts;
      break;
    }
    case ConstraintKind::ScaledStar:
      throw config_error("star-shaped point unions have no file representation");
  }
  return j;
}

inline ConstraintSet constraint_from_json(const nlohmann::json& j, int d) {
  const char* where = "constraint";
  const auto& tv = detail::require_field(j, "type", where);
  if (!tv.is_string()) throw config_error("constraint: \"type\" must be a string");
  std::string type = tv.get<std::string>();
  if (type == "full") return ConstraintSet::full_space(d);
  if (type == "box")
    return ConstraintSet::box(detail::vec_field(detail::require_field(j, "lo", where), d, "lo"),
                              detail::vec_field(detail::require_field(j, "hi", where), d, "hi"));
  if (type == "ball") return ConstraintSet::ball(d, detail::num_field(j, "radius", where));
  if (type == "polyhedron") {
    Mat rows = detail::mat_field(detail::require_field(j, "rows", where), -1, d, "rows");
    Vec bounds = detail::vec_field(detail::require_field(j, "bounds", where), int(rows.rows()),
                                   "bounds");
    return ConstraintSet::polyhedron(rows, bounds);
  }
  if (type == "cone")
    return ConstraintSet::cone(detail::mat_field(detail::require_field(j, "rows", where), -1, d,
                                                 "rows"));
  if (type == "finite") {
    const auto& pv = detail::require_field(j, "points", where);
    if (!pv.is_array()) throw config_error("constraint: \"points\" must be an array");
    std::vector<Vec> pts;
    for (const auto& p : pv) pts.push_back(detail::vec_field(p, d, "points entry"));
    return ConstraintSet::finite_set(pts);
  }
  throw config_error("constraint: unknown type \"" + type + "\"");
}

inline nlohmann::json model_to_json(const ModelFile& m) {
  nlohmann::json j;
  j["schema"] = kModelSchema;
  j["p"] = m.spec.p;
  j["D"] = m.spec.D_vals.size() == 1 ? nlohmann::json(m.spec.D_vals[0])
                                     : nlohmann::json(m.spec.D_vals);
  j["mode"] = m.spec.intermediate ? "intermediate" : "terminal";
  j["x0"] = m.spec.x0;
  j["T"] = m.spec.T;
  j["d"] = m.chars.d;
  j["b"] = std::vector<double>(m.chars.bR.data(), m.chars.bR.data() + m.chars.d);
  std::vector<std::vector<double>> c;
  for (int i = 0; i < m.chars.d; ++i)
    c.push_back(std::vector<double>(m.chars.cR.row(i).data(),
                                    m.chars.cR.row(i).data() + m.chars.d));
  j["c"] = c;
  nlohmann::json atoms = nlohmann::json::array();
  for (const auto& a : m.chars.atoms) {
    nlohmann::json aj;
    aj["x"] = std::vector<double>(a.x.data(), a.x.data() + a.x.size());
    aj["xp"] = a.xp;
    aj["w"] = a.w;
    atoms.push_back(aj);
  }
  j["atoms"] = atoms;
  j["steps"] = m.steps;
  j["constraint"] = constraint_to_json(m.constraint);
  j["scheme"] = m.scheme == LatticeScheme::binomial ? "binomial" : "multinomial";
  j["expand"] = m.expand;
  return j;
}

inline ModelFile model_from_json(const nlohmann::json& j) {
  const char* where = "model file";
  const auto& sv = detail::require_field(j, "schema", where);
  if (!sv.is_string() || sv.get<std::string>() != kModelSchema)
    throw config_error(std::string(where) + ": schema must be \"" + kModelSchema + "\"");

  ModelFile m;
  m.spec.p = detail::num_field(j, "p", where);
  const auto& dv = detail::require_field(j, "D", where);
  if (dv.is_number()) {
    m.spec.D_vals = {dv.get<double>()};
  } else if (dv.is_array() && !dv.empty()) {
    m.spec.D_vals.clear();
    for (const auto& x : dv) {
      if (!x.is_number()) throw config_error("model file: \"D\" must hold numbers");
      m.spec.D_vals.push_back(x.get<double>());
    }
  } else {
    throw config_error("model file: \"D\" must be a number or a nonempty array");
  }
  const auto& mv = detail::require_field(j, "mode", where);
  std::string mode = mv.is_string() ? mv.get<std::string>() : "";
  if (mode != "terminal" && mode != "intermediate")
    throw config_error("model file: \"mode\" must be \"terminal\" or \"intermediate\"");
  m.spec.intermediate = mode == "intermediate";
  m.spec.x0 = j.contains("x0") ? detail::num_field(j, "x0", where) : 1.0;
  m.spec.T = detail::num_field(j, "T", where);

  const auto& dd = detail::require_field(j, "d", where);
  if (!dd.is_number_integer() || dd.get<int>() < 1)
    throw config_error("model file: \"d\" must be a positive integer");
  int d = dd.get<int>();
  m.chars = JointCharacteristics::make(d);
  m.chars.bR = detail::vec_field(detail::require_field(j, "b", where), d, "b");
  m.chars.cR = detail::mat_field(detail::require_field(j, "c", where), d, d, "c");
  if (j.contains("atoms")) {
    const auto& av = j["atoms"];
    if (!av.is_array()) throw config_error("model file: \"atoms\" must be an array");
    for (const auto& aj : av) {
      JumpAtom a;
      a.x = detail::vec_field(detail::require_field(aj, "x", "atom"), d, "atom x");
      a.xp = aj.contains("xp") ? detail::num_field(aj, "xp", "atom") : 0.0;
      a.w = detail::num_field(aj, "w", "atom");
      m.chars.atoms.push_back(a);
    }
  }

  const auto& st = detail::require_field(j, "steps", where);
  if (!st.is_number_integer() || st.get<int>() < 1)
    throw config_error("model file: \"steps\" must be a positive integer");
  m.steps = st.get<int>();

  m.constraint = j.contains("constraint") ? constraint_from_json(j["constraint"], d)
                                          : ConstraintSet::full_space(d);

  if (j.contains("scheme")) {
    std::string s = j["scheme"].is_string() ? j["scheme"].get<std::string>() : "";
    if (s == "binomial") m.scheme = LatticeScheme::binomial;
    else if (s == "multinomial") m.scheme = LatticeScheme::multinomial;
    else throw config_error("model file: \"scheme\" must be \"binomial\" or \"multinomial\"");
  } else {
    m.scheme = (d == 1 && m.chars.atoms.empty()) ? LatticeScheme::binomial
                                                 : LatticeScheme::multinomial;
  }
  if (j.contains("expand")) {
    if (!j["expand"].is_boolean()) throw config_error("model file: \"expand\" must be a boolean");
    m.expand = j["expand"].get<bool>();
  }

  m.spec.validate();
  m.chars.validate();
  return m;
}

inline nlohmann::json parse_json_file(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw config_error(std::string(what) + " \"" + path + "\" cannot be opened");
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded())
    throw config_error(std::string(what) + " \"" + path + "\" is not valid JSON");
  return j;
}

inline ModelFile load_model(const std::string& path) {
  return model_from_json(parse_json_file(path, "model file"));
}

// ---------------------------------------------------------------------------
// Opportunity tables as CSV, one row per node.

inline void write_opportunity_csv(std::ostream& out, const MarketLattice& lat,
                                  const std::vector<std::vector<double>>& L,
                                  const StrategyTable& strategy) {
  out << "node,time,state,L";
  for (int i = 0; i < lat.d; ++i) out << ",pi_" << i;
  out << ",kappa\n";
  long id = 0;
  for (std::size_t k = 0; k < lat.levels.size(); ++k)
    for (std::size_t n = 0; n < lat.levels[k].size(); ++n, ++id) {
      out << id << ',' << fmt17(lat.times[k]) << ',' << n << ',' << fmt17(L[k][n]);
      for (int i = 0; i < lat.d; ++i) out << ',' << fmt17(strategy[k][n].pi[i]);
      out << ',' << fmt17(strategy[k][n].kappa) << '\n';
    }
}

inline SolutionTriple read_candidate_csv(std::istream& in, const MarketLattice& lat) {
  std::string line;
  if (!std::getline(in, line)) throw config_error("candidate file: empty");
  {
    std::stringstream hs(line);
    std::string col;
    std::vector<std::string> cols;
    while (std::getline(hs, col, ',')) cols.push_back(col);
    std::size_t want = 5 + std::size_t(lat.d);
    if (cols.size() != want || cols[0] != "node" || cols[1] != "time" || cols.back() != "kappa")
      throw config_error("candidate file: header row lists " + std::to_string(cols.size()) +
                         " columns, lattice with " + std::to_string(lat.d) +
                         " assets wants node,time,state,L,pi_*,kappa");
  }

  SolutionTriple cand;
  cand.ell.resize(lat.levels.size());
  cand.strategy.resize(lat.levels.size());
  std::vector<std::vector<bool>> seen(lat.levels.size());
  for (std::size_t k = 0; k < lat.levels.size(); ++k) {
    cand.ell[k].assign(lat.levels[k].size(), 0.0);
    cand.strategy[k].assign(lat.levels[k].size(), {Vec::Zero(lat.d), 0.0});
    seen[k].assign(lat.levels[k].size(), false);
  }

  long row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string cell;
    std::vector<double> vals;
    std::getline(ls, cell, ',');
    while (std::getline(ls, cell, ',')) vals.push_back(std::stod(cell));
    if (vals.size() != 4 + std::size_t(lat.d))
      throw config_error("candidate file: row " + std::to_string(row) + " has " +
                         std::to_string(vals.size() + 1) + " cells");
    double time = vals[0];
    std::size_t k = 0;
    while (k < lat.times.size() && lat.times[k] != time) ++k;
    if (k == lat.times.size())
      throw config_error("candidate file: row " + std::to_string(row) + " time " + fmt17(time) +
                         " matches no lattice level");
    auto n = std::size_t(vals[1]);
    if (n >= lat.levels[k].size())
      throw config_error("candidate file: row " + std::to_string(row) + " state " +
                         std::to_string(n) + " exceeds level width " +
                         std::to_string(lat.levels[k].size()));
    cand.ell[k][n] = vals[2];
    for (int i = 0; i < lat.d; ++i) cand.strategy[k][n].pi[i] = vals[3 + i];
    cand.strategy[k][n].kappa = vals[3 + lat.d];
    seen[k][n] = true;
  }
  for (std::size_t k = 0; k < seen.size(); ++k) {
    std::size_t have = 0;
    for (bool s : seen[k]) have += s;
    if (have != lat.levels[k].size())
      throw config_error("candidate file: level " + std::to_string(k) + " covers " +
                         std::to_string(have) + " of " + std::to_string(lat.levels[k].size()) +
                         " lattice nodes");
  }
  return cand;
}

inline void write_residual_csv(std::ostream& out,
                               const std::vector<std::vector<double>>& residuals) {
  out << "level,node,residual\n";
  for (std::size_t k = 0; k < residuals.size(); ++k)
    for (std::size_t n = 0; n < residuals[k].size(); ++n)
      out << k << ',' << n << ',' << fmt17(residuals[k][n]) << '\n';
}

inline nlohmann::json summary_to_json(double value0, double L0, const Vec& pi, double kappa) {
  nlohmann::json root;
  root["pi"] = std::vector<double>(pi.data(), pi.data() + pi.size());
  root["kappa"] = kappa;
  nlohmann::json j;
  j["value0"] = value0;
  j["L0"] = L0;
  j["strategy_at_root"] = root;
  return j;
}

inline nlohmann::json report_to_json(const VerificationReport& rep) {
  nlohmann::json j;
  j["schema"] = kVerifySchema;
  j["pass"] = rep.pass;
  j["z_candidate_residual"] = rep.z_candidate_residual;
  j["z_competitor_max_drift"] = rep.z_competitor_max_drift;
  j["gamma_residual"] = rep.gamma_residual;
  j["gamma_competitor_max_drift"] = rep.gamma_competitor_max_drift;
  j["gamma_pz_gap"] = rep.gamma_pz_gap;
  j["G_max"] = rep.G_max;
  j["qopt_max"] = rep.qopt_max;
  j["psi_residual"] = rep.psi_residual;
  j["xi_residual"] = rep.xi_residual;
  j["oracle_sup_ratio"] = rep.oracle_sup_ratio;
  j["competitors_checked"] = rep.competitors_checked;
  j["competitors_excluded"] = rep.competitors_excluded;
  j["value_certificate"] = rep.value_certificate;
  j["deflator_certificate"] = rep.deflator_certificate;
  j["convex_deflator_certificate"] = rep.convex_deflator_certificate;
  j["minimality"] = rep.minimality;
  j["has_oracle"] = rep.has_oracle;
  j["q_optimal_candidate"] = rep.q_optimal_candidate;
  j["deflator_applicable"] = rep.deflator_applicable;
  j["exponential_applicable"] = rep.exponential_applicable;
  j["class_d_note"] = rep.class_d_note;
  if (rep.counterexample) {
    nlohmann::json c;
    c["check"] = rep.counterexample->check;
    c["level"] = rep.counterexample->level;
    c["node"] = rep.counterexample->node;
    c["pi"] = std::vector<double>(rep.counterexample->pi.data(),
                                  rep.counterexample->pi.data() + rep.counterexample->pi.size());
    c["kappa"] = rep.counterexample->kappa;
    c["drift"] = rep.counterexample->drift;
    j["counterexample"] = c;
  } else {
    j["counterexample"] = nullptr;
  }
  return j;
}

struct SweepRow {
  std::string axis_value;
  double L0 = 0.0;
  double value0 = 0.0;
  Vec pi;
  double kappa = 0.0;
  std::string error;
};

inline void write_sweep_csv(std::ostream& out, int d, const std::vector<SweepRow>& rows) {
  out << "axis,L0,value0";
  for (int i = 0; i < d; ++i) out << ",pi_" << i;
  out << ",kappa,error\n";
  for (const auto& r : rows) {
    out << r.axis_value << ',';
    if (r.error.empty()) {
      out << fmt17(r.L0) << ',' << fmt17(r.value0);
      for (int i = 0; i < d; ++i) out << ',' << fmt17(r.pi[i]);
      out << ',' << fmt17(r.kappa) << ',';
    } else {
      out << ",";
      for (int i = 0; i < d; ++i) out << ',';
      out << ",," << '"' << r.error << '"';
    }
    out << '\n';
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw config_error("cannot open \"" + path + "\" for writing");
  out << text;
  if (!out) throw config_error("short write to \"" + path + "\"");
}

}  // namespace bellport
