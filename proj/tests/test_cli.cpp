#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "bellport/io.hpp"

using namespace bellport;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("bp_cli_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int run(const std::string& args, const fs::path& stdout_file = {}) {
  std::string cmd = std::string(BP_CLI_PATH) + " " + args;
  cmd += stdout_file.empty() ? " > /dev/null" : " > " + stdout_file.string();
  cmd += " 2> /dev/null";
  int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json slurp_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

fs::path write_merton(const fs::path& dir, double p = 0.5, int steps = 200) {
  ModelFile m;
  m.spec.p = p;
  m.spec.T = 1.0;
  m.chars = JointCharacteristics::make(1);
  m.chars.bR[0] = 0.2;
  m.chars.cR(0, 0) = 1.0;
  m.steps = steps;
  fs::path path = dir / "model.json";
  write_text_file(path.string(), model_to_json(m).dump(2) + "\n");
  return path;
}

}  // namespace

TEST_CASE("solve writes the summary, table, and residuals") {
  fs::path dir = fresh_dir("solve");
  fs::path model = write_merton(dir);

  REQUIRE(run("solve --model " + model.string() + " --out " + (dir / "out").string()) == 0);

  auto summary = slurp_json(dir / "out" / "summary.json");
  double closed = std::exp(0.5 / (2.0 * 0.5) * 0.04);
  CHECK(summary["L0"].get<double>() == Catch::Approx(closed).epsilon(0.01));
  CHECK(summary["value0"].get<double>() ==
        Catch::Approx(2.0 * summary["L0"].get<double>()).margin(1e-12));
  CHECK(summary["strategy_at_root"]["pi"][0].get<double>() == Catch::Approx(0.4).margin(0.01));
  CHECK(summary["strategy_at_root"]["kappa"].get<double>() == 0.0);

  std::string table = slurp(dir / "out" / "opportunity.csv");
  CHECK(table.rfind("node,time,state,L,pi_0,kappa\n", 0) == 0);
  CHECK(std::count(table.begin(), table.end(), '\n') == 202);
  CHECK(table.find("\r") == std::string::npos);

  std::string residuals = slurp(dir / "out" / "residuals.csv");
  CHECK(residuals.rfind("level,node,residual\n", 0) == 0);
  CHECK(std::count(residuals.begin(), residuals.end(), '\n') == 201);
}

TEST_CASE("solve on a singleton constraint returns the terminal payoff") {
  fs::path dir = fresh_dir("singleton");
  ModelFile m;
  m.spec.p = 0.5;
  m.spec.T = 1.0;
  m.chars = JointCharacteristics::make(1);
  m.chars.bR[0] = 0.2;
  m.chars.cR(0, 0) = 1.0;
  m.steps = 4;
  m.constraint = ConstraintSet::finite_set({Vec::Zero(1)});
  fs::path model = dir / "model.json";
  write_text_file(model.string(), model_to_json(m).dump(2) + "\n");

  REQUIRE(run("solve --model " + model.string() + " --out " + (dir / "out").string()) == 0);
  auto summary = slurp_json(dir / "out" / "summary.json");
  CHECK(summary["L0"].get<double>() == Catch::Approx(1.0).margin(1e-12));
  CHECK(summary["strategy_at_root"]["pi"][0].get<double>() == 0.0);
}

TEST_CASE("verify accepts the solver output and rejects a scaled table") {
  fs::path dir = fresh_dir("verify");
  fs::path model = write_merton(dir, 0.5, 16);
  REQUIRE(run("solve --model " + model.string() + " --out " + (dir / "out").string()) == 0);
  fs::path table = dir / "out" / "opportunity.csv";

  SECTION("round trip passes") {
    int code = run("verify --model " + model.string() + " --candidate " + table.string() +
                   " --out " + (dir / "rep").string());
    CHECK(code == 0);
    auto rep = slurp_json(dir / "rep" / "report.json");
    CHECK(rep["schema"] == "bp-verify/1");
    CHECK(rep["pass"] == true);
    CHECK(rep["value_certificate"] == true);
    CHECK(rep["minimality"] == true);
    CHECK(rep["counterexample"].is_null());
  }

  SECTION("interior scalings fail with the expected report") {
    for (double f : {1.1, 0.9}) {
      std::istringstream in(slurp(table));
      std::string line, out;
      std::getline(in, line);
      out = line + "\n";
      while (std::getline(in, line)) {
        std::stringstream ls(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (std::stod(cells[1]) < 1.0) cells[3] = fmt17(std::stod(cells[3]) * f);
        out += cells[0];
        for (std::size_t i = 1; i < cells.size(); ++i) out += "," + cells[i];
        out += "\n";
      }
      fs::path bad = dir / ("scaled_" + std::to_string(f) + ".csv");
      write_text_file(bad.string(), out);

      int code = run("verify --model " + model.string() + " --candidate " + bad.string() +
                     " --out " + (dir / "repbad").string());
      CHECK(code == 1);
      auto rep = slurp_json(dir / "repbad" / "report.json");
      CHECK(rep["pass"] == false);
      CHECK(rep["value_certificate"] == false);
      CHECK(rep["minimality"] == (f > 1.0));
      if (f > 1.0) {
        CHECK(rep["oracle_sup_ratio"].get<double>() == Catch::Approx(f).margin(1e-9));
        CHECK(rep["counterexample"].is_null());
      } else {
        CHECK(rep["counterexample"]["check"] == "value-process");
        CHECK(rep["counterexample"]["drift"].get<double>() > 1e-9);
      }
    }
  }
}

TEST_CASE("usage and config failures exit with code two") {
  fs::path dir = fresh_dir("errors");
  fs::path model = write_merton(dir, 0.5, 4);

  write_text_file((dir / "broken.json").string(), "{not json\n");
  CHECK(run("solve --model " + (dir / "broken.json").string() + " --out " +
            (dir / "x").string()) == 2);

  nlohmann::json j = nlohmann::json::parse(slurp(model));
  j.erase("T");
  write_text_file((dir / "no_T.json").string(), j.dump(2) + "\n");
  CHECK(run("solve --model " + (dir / "no_T.json").string() + " --out " +
            (dir / "x").string()) == 2);

  CHECK(run("verify --model " + model.string() + " --candidate " +
            (dir / "absent.csv").string() + " --out " + (dir / "x").string()) == 2);

  REQUIRE(run("solve --model " + model.string() + " --out " + (dir / "out").string()) == 0);
  std::istringstream in(slurp(dir / "out" / "opportunity.csv"));
  std::string line, truncated;
  for (int i = 0; i < 3 && std::getline(in, line); ++i) truncated += line + "\n";
  write_text_file((dir / "short.csv").string(), truncated);
  CHECK(run("verify --model " + model.string() + " --candidate " +
            (dir / "short.csv").string() + " --out " + (dir / "x").string()) == 2);

  CHECK(run("solve --definitely-not-a-flag") == 2);
  CHECK(run("sweep --model " + model.string() + " --out " + (dir / "x").string() +
            " --sweep volatility=1,2") == 2);
}

TEST_CASE("identical runs produce byte-identical outputs") {
  fs::path dir = fresh_dir("determinism");
  fs::path model = write_merton(dir, 0.5, 32);

  REQUIRE(run("solve --model " + model.string() + " --out " + (dir / "a").string()) == 0);
  REQUIRE(run("solve --model " + model.string() + " --out " + (dir / "b").string()) == 0);
  for (const char* name : {"opportunity.csv", "summary.json", "residuals.csv"})
    CHECK(slurp(dir / "a" / name) == slurp(dir / "b" / name));

  std::string axis = " --sweep p=0.2,0.4,0.6";
  REQUIRE(run("sweep --model " + model.string() + " --out " + (dir / "sa").string() + axis) == 0);
  REQUIRE(run("sweep --model " + model.string() + " --out " + (dir / "sb").string() + axis +
              " --parallel") == 0);
  CHECK(slurp(dir / "sa" / "sweep.csv") == slurp(dir / "sb" / "sweep.csv"));
}

TEST_CASE("sweep rows follow the closed form and bad cells carry errors") {
  fs::path dir = fresh_dir("sweep");
  fs::path model = write_merton(dir, 0.5, 100);

  REQUIRE(run("sweep --model " + model.string() + " --out " + (dir / "out").string() +
              " --sweep p=0.1,0.3,0.5,0.7,0.9") == 0);
  std::istringstream in(slurp(dir / "out" / "sweep.csv"));
  std::string line;
  std::getline(in, line);
  CHECK(line == "axis,L0,value0,pi_0,kappa,error");
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    std::stringstream ls(line);
    std::string axis, L0;
    std::getline(ls, axis, ',');
    std::getline(ls, L0, ',');
    double p = std::stod(axis);
    double closed = std::exp(p / (2.0 * (1.0 - p)) * 0.04);
    CHECK(std::stod(L0) == Catch::Approx(closed).epsilon(0.01));
  }
  CHECK(rows == 5);

  REQUIRE(run("sweep --model " + model.string() + " --out " + (dir / "empty").string() +
              " --sweep p=") == 0);
  CHECK(slurp(dir / "empty" / "sweep.csv") == "axis,L0,value0,pi_0,kappa,error\n");

  REQUIRE(run("sweep --model " + model.string() + " --out " + (dir / "mixed").string() +
              " --sweep p=0.5,2.5") == 0);
  std::istringstream mixed(slurp(dir / "mixed" / "sweep.csv"));
  std::getline(mixed, line);
  std::getline(mixed, line);
  CHECK(line.find("\"") == std::string::npos);
  std::getline(mixed, line);
  CHECK(line.rfind("2.5,", 0) == 0);
  CHECK(line.find("\"") != std::string::npos);
}

TEST_CASE("steps sweep converges toward the closed form") {
  fs::path dir = fresh_dir("steps");
  fs::path model = write_merton(dir);
  REQUIRE(run("sweep --model " + model.string() + " --out " + (dir / "out").string() +
              " --sweep steps=25,50,100,200") == 0);
  std::istringstream in(slurp(dir / "out" / "sweep.csv"));
  std::string line;
  std::getline(in, line);
  double closed = std::exp(0.02);
  double prev = 1e9;
  while (std::getline(in, line)) {
    std::stringstream ls(line);
    std::string axis, L0;
    std::getline(ls, axis, ',');
    std::getline(ls, L0, ',');
    double err = std::abs(std::stod(L0) - closed);
    CHECK(err < prev);
    prev = err;
  }
}

TEST_CASE("transform emits the representative matrix and an equivalent model") {
  fs::path dir = fresh_dir("transform");
  ModelFile m;
  m.spec.p = 0.5;
  m.spec.T = 1.0;
  m.chars = JointCharacteristics::make(1);
  m.chars.bR[0] = 0.1;
  m.chars.atoms.push_back({-Vec::Ones(1), 0.0, 0.3});
  m.steps = 2;
  m.constraint = ConstraintSet::box(Vec::Zero(1), Vec::Ones(1));
  fs::path model = dir / "model.json";
  write_text_file(model.string(), model_to_json(m).dump(2) + "\n");

  REQUIRE(run("transform --model " + model.string() + " --out " + (dir / "out").string()) == 0);

  std::istringstream phi(slurp(dir / "out" / "phi.csv"));
  std::string line;
  std::getline(phi, line);
  CHECK(line == "column,active,phi_0");
  std::getline(phi, line);
  CHECK(line == "0,1,0.5");

  ModelFile tm = load_model((dir / "out" / "transformed.json").string());
  MarketLattice lat = build_lattice(m.chars, m.spec.T, m.steps, LatticeScheme::multinomial);
  MarketLattice tlat = build_lattice(tm.chars, tm.spec.T, tm.steps, LatticeScheme::multinomial);
  double v0 = solve_tree_dp(lat, m.spec, m.constraint).value0;
  double tv0 = solve_tree_dp(tlat, tm.spec, tm.constraint).value0;
  CHECK(tv0 == Catch::Approx(v0).margin(1e-9));

  ModelFile ball;
  ball.spec.p = 0.5;
  ball.spec.T = 1.0;
  ball.chars = JointCharacteristics::make(2);
  ball.chars.bR << 0.1, 0.05;
  ball.chars.cR << 0.04, 0.0, 0.0, 0.09;
  ball.steps = 2;
  ball.constraint = ConstraintSet::ball(2, 0.7);
  write_text_file((dir / "ball.json").string(), model_to_json(ball).dump(2) + "\n");
  CHECK(run("transform --model " + (dir / "ball.json").string() + " --out " +
            (dir / "bout").string()) == 2);
}

TEST_CASE("g-eval reports the maximizer and a directional derivative") {
  fs::path dir = fresh_dir("geval");
  fs::path model = write_merton(dir);

  fs::path outfile = dir / "geval.json";
  REQUIRE(run("g-eval --model " + model.string() + " --at 0.1", outfile) == 0);
  auto j = slurp_json(outfile);
  CHECK(j["maximizer"][0].get<double>() == Catch::Approx(0.4).margin(1e-9));
  CHECK(j["value"].get<double>() == Catch::Approx(0.04).margin(1e-12));
  CHECK(j["attained"] == true);
  CHECK(j["in_domain"] == true);
  CHECK(j["g"].get<double>() == Catch::Approx(0.0175).margin(1e-12));
  CHECK(j["G"].get<double>() == Catch::Approx(0.0).margin(1e-9));

  fs::path again = dir / "geval2.json";
  REQUIRE(run("g-eval --model " + model.string() + " --at 0.1", again) == 0);
  CHECK(slurp(outfile) == slurp(again));
}

TEST_CASE("oracle cross-check agrees with the restricted solver") {
  fs::path dir = fresh_dir("oracle");
  ModelFile m;
  m.spec.p = 0.5;
  m.spec.T = 1.0;
  m.chars = JointCharacteristics::make(1);
  m.chars.bR[0] = 0.1;
  m.chars.cR(0, 0) = 0.04;
  m.steps = 3;
  m.constraint = ConstraintSet::box(-Vec::Ones(1), Vec::Ones(1));
  fs::path model = dir / "model.json";
  write_text_file(model.string(), model_to_json(m).dump(2) + "\n");

  REQUIRE(run("oracle --model " + model.string() + " --out " + (dir / "out").string() +
              " --grid 9") == 0);
  auto j = slurp_json(dir / "out" / "oracle.json");
  CHECK(j["diff"].get<double>() <= 1e-9);
  CHECK(j["value0"].get<double>() == Catch::Approx(j["value0_dp"].get<double>()).margin(1e-9));
}
