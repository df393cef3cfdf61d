#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};

fs::path scratch_root() {
  static fs::path root = [] {
    fs::path p = fs::temp_directory_path() / "podex_cli_tests";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

fs::path fresh_dir(const std::string& name) {
  fs::path d = scratch_root() / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

RunResult run_podex(const std::string& args, const std::string& env_prefix = "") {
  fs::path log = scratch_root() / "last_output.txt";
  std::string cmd = env_prefix + std::string(PODEX_BIN) + " " + args + " > " +
                    log.string() + " 2>&1";
  int rc = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  std::ifstream in(log);
  std::ostringstream os;
  os << in.rdbuf();
  r.output = os.str();
  return r;
}

fs::path write_scenario(const std::string& name, const std::string& body) {
  fs::path f = scratch_root() / name;
  std::ofstream out(f);
  out << body;
  return f;
}

std::string slurp(const fs::path& f) {
  std::ifstream in(f, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

const std::string kFlowScenario =
    "task = flow\n"
    "name = demo\n"
    "n = 2\n"
    "hamiltonian = (p1^2 + p2^2)/2 - 1/2\n"
    "seed = 7\n"
    "[flow]\n"
    "x0 = 0, 0, 0, 1\n"
    "t_final = 1.5\n"
    "[tolerances]\n"
    "level_tol = 1e-11\n";

}  // namespace

TEST_CASE("validate accepts a well-formed scenario") {
  fs::path f = write_scenario("ok.ini", kFlowScenario);
  RunResult r = run_podex("validate " + f.string());
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("ok:") != std::string::npos);
}

TEST_CASE("configuration problems exit with code 2") {
  SECTION("missing file") {
    RunResult r = run_podex("validate /nonexistent/path.ini");
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("config error") != std::string::npos);
  }
  SECTION("missing required task key") {
    fs::path f = write_scenario("notask.ini", "name = x\n");
    CHECK(run_podex("validate " + f.string()).exit_code == 2);
  }
  SECTION("unknown task") {
    fs::path f = write_scenario("badtask.ini", "task = frobnicate\n");
    RunResult r = run_podex("validate " + f.string());
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("unknown task") != std::string::npos);
  }
  SECTION("malformed expression reports its position") {
    fs::path f = write_scenario("badexpr.ini",
                                "task = flow\nn = 2\nhamiltonian = p1 + + q1\n");
    RunResult r = run_podex("validate " + f.string());
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("position") != std::string::npos);
  }
  SECTION("wrong vector arity at run time") {
    fs::path f = write_scenario("badvec.ini",
                                "task = flow\nn = 2\n"
                                "hamiltonian = (p1^2 + p2^2)/2 - 1/2\n"
                                "[flow]\nx0 = 0, 0, 1\n");
    RunResult r = run_podex("run " + f.string() + " --out " +
                            fresh_dir("badvec").string());
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("4 comma-separated entries") != std::string::npos);
  }
  SECTION("missing subcommand") {
    CHECK(run_podex("").exit_code == 2);
  }
}

TEST_CASE("flow run writes a report and an orbit table") {
  fs::path f = write_scenario("flow.ini", kFlowScenario);
  fs::path out = fresh_dir("flow_out");
  RunResult r = run_podex("run " + f.string() + " --out " + out.string());
  REQUIRE(r.exit_code == 0);
  REQUIRE(fs::exists(out / "demo_report.json"));
  REQUIRE(fs::exists(out / "demo_orbit.csv"));

  // orbit CSV column contract
  std::string csv = slurp(out / "demo_orbit.csv");
  CHECK(csv.rfind("t,q1,q2,p1,p2,energy_residual\n", 0) == 0);

  // the report echoes the full effective configuration, including overrides
  json rep = json::parse(slurp(out / "demo_report.json"));
  CHECK(rep["config"]["scenario"]["task"] == "flow");
  CHECK(rep["config"]["scenario"]["name"] == "demo");
  CHECK(rep["config"]["scenario"]["seed"] == 7);
  CHECK(rep["config"]["scenario"]["hamiltonian"] == "(p1^2 + p2^2)/2 - 1/2");
  CHECK(rep["config"]["tolerances"]["level_tol"] == 1e-11);
  CHECK(rep["config"]["flow"]["t_final"] == 1.5);
  CHECK(rep["config"]["flow"]["taylor_order"].is_number());
  // straight-line motion: q2 advances by t_final, drift stays tiny
  CHECK(std::abs(double(rep["result"]["final"]["q"][1]) - 1.5) < 1e-9);
  CHECK(double(rep["result"]["max_drift"]) <= 1e-9);
}

TEST_CASE("reruns are byte-identical") {
  fs::path f = write_scenario("det.ini", kFlowScenario);
  fs::path a = fresh_dir("det_a"), b = fresh_dir("det_b");
  REQUIRE(run_podex("run " + f.string() + " --out " + a.string()).exit_code == 0);
  REQUIRE(run_podex("run " + f.string() + " --out " + b.string()).exit_code == 0);
  CHECK(slurp(a / "demo_report.json") == slurp(b / "demo_report.json"));
  CHECK(slurp(a / "demo_orbit.csv") == slurp(b / "demo_orbit.csv"));
}

TEST_CASE("numerical failures exit with code 3 and leave no reports") {
  // the seed point is far off the level set: certification must fail
  fs::path f = write_scenario("off.ini",
                              "task = flow\nn = 2\n"
                              "hamiltonian = (p1^2 + p2^2)/2 - 1/2\n"
                              "[flow]\nx0 = 0, 0, 3, 0\n");
  fs::path out = fresh_dir("off_out");
  RunResult r = run_podex("run " + f.string() + " --out " + out.string());
  CHECK(r.exit_code == 3);
  CHECK(r.output.find("numerical failure") != std::string::npos);
  CHECK(fs::is_empty(out));
}

TEST_CASE("output directory: --out beats PODEX_OUT beats the scenario key") {
  fs::path f = write_scenario("outdirs.ini", kFlowScenario);
  fs::path env_dir = fresh_dir("via_env"), opt_dir = fresh_dir("via_opt");
  REQUIRE(run_podex("run " + f.string(),
                    "PODEX_OUT=" + env_dir.string() + " ").exit_code == 0);
  CHECK(fs::exists(env_dir / "demo_report.json"));
  REQUIRE(run_podex("run " + f.string() + " --out " + opt_dir.string(),
                    "PODEX_OUT=" + env_dir.string() + " ").exit_code == 0);
  CHECK(fs::exists(opt_dir / "demo_report.json"));
}

TEST_CASE("seed override is applied and echoed") {
  fs::path f = write_scenario("seed.ini", kFlowScenario);
  fs::path out = fresh_dir("seed_out");
  REQUIRE(run_podex("run " + f.string() + " --seed 99 --out " + out.string())
              .exit_code == 0);
  json rep = json::parse(slurp(out / "demo_report.json"));
  CHECK(rep["config"]["scenario"]["seed"] == 99);
}

TEST_CASE("csv schema document ships next to the binary") {
  fs::path schema = fs::path(PODEX_BIN).parent_path() / "podex_csv_schema.md";
  REQUIRE(fs::exists(schema));
  std::string text = slurp(schema);
  CHECK(text.find("energy_residual") != std::string::npos);
}

TEST_CASE("jets task reports the graph jet of the orbit") {
  fs::path f = write_scenario("jets.ini",
                              "task = jets\nname = j\nn = 2\n"
                              "hamiltonian = (p1^2 + p2^2)/2 + q1 - 1/2\n"
                              "[jets]\nx0 = 0, 0, 0.6, 0.8\nk = 3\n");
  fs::path out = fresh_dir("jets_out");
  REQUIRE(run_podex("run " + f.string() + " --out " + out.string()).exit_code == 0);
  json rep = json::parse(slurp(out / "j_report.json"));
  const json& jet = rep["result"]["jet"];
  CHECK(jet["axis"] == 1);
  CHECK(std::abs(double(jet["coeffs"][1][0]) - 0.75) < 1e-9);
}

TEST_CASE("intersections task finds the transverse crossing of two chords") {
  fs::path f = write_scenario(
      "isect.ini",
      "task = intersections\nname = x\nn = 2\n"
      "hamiltonian = (p1^2 + p2^2)/2 - 1/2\n"
      "[intersections]\n"
      "x0_a = -1, 0, 1, 0\nx0_b = -0.48, -0.64, 0.6, 0.8\n"
      "t_a = 2\nt_b = 2\nk = 3\n");
  fs::path out = fresh_dir("isect_out");
  REQUIRE(run_podex("run " + f.string() + " --out " + out.string()).exit_code == 0);
  json rep = json::parse(slurp(out / "x_report.json"));
  REQUIRE(rep["result"]["count"] == 1);
  CHECK(rep["result"]["intersections"][0]["order"] == 1);
  std::string csv = slurp(out / "x_intersections.csv");
  CHECK(csv.rfind("t_a,t_b,gap,order,isolation_eps\n", 0) == 0);
}
