// podex: scenario-driven workbench for Hamiltonian flows on regular energy
// levels.  One scenario per invocation; all reports are written at the end of
// a successful run (a failing run leaves no partial outputs).

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "podex/contact.hpp"
#include "podex/heart.hpp"
#include "podex/homopode.hpp"
#include "podex/intersect.hpp"
#include "podex/perturb.hpp"
#include "scenario.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace podex;
using podex::cli::ConfigError;
using podex::cli::ResolvedCommon;
using podex::cli::Scenario;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

/// Scenario reader that records every value it hands out, so the echoed
/// config in the report is complete by construction.
struct Params {
  const Scenario& sc;
  json echo;

  double num(const std::string& s, const std::string& k, double fb) {
    double v = sc.num(s, k, fb);
    section(s)[k] = v;
    return v;
  }
  long integer(const std::string& s, const std::string& k, long fb) {
    long v = sc.integer(s, k, fb);
    section(s)[k] = v;
    return v;
  }
  bool flag(const std::string& s, const std::string& k, bool fb) {
    bool v = sc.flag(s, k, fb);
    section(s)[k] = v;
    return v;
  }
  std::string str(const std::string& s, const std::string& k, const std::string& fb) {
    std::string v = sc.str(s, k, fb);
    section(s)[k] = v;
    return v;
  }
  std::vector<double> require_vec(const std::string& s, const std::string& k, std::size_t size) {
    std::vector<double> v = sc.require_vec(s, k, size);
    section(s)[k] = v;
    return v;
  }
  std::vector<double> vec(const std::string& s, const std::string& k, std::vector<double> fb) {
    std::vector<double> v = sc.vec(s, k, std::move(fb));
    section(s)[k] = v;
    return v;
  }

 private:
  json& section(const std::string& s) { return s.empty() ? echo["scenario"] : echo[s]; }
};

json echo_common(Params& p, const ResolvedCommon& c) {
  json e;
  e["scenario"]["task"] = c.task;
  e["scenario"]["name"] = c.name;
  e["scenario"]["n"] = c.n;
  e["scenario"]["hamiltonian"] = c.hamiltonian;
  e["scenario"]["seed"] = c.seed;
  e["tolerances"]["level_tol"] = c.tol.level_tol;
  e["tolerances"]["submersion_tol"] = c.tol.submersion_tol;
  e["tolerances"]["capture_radius"] = c.tol.capture_radius;
  e["tolerances"]["k_max_derivative"] = c.tol.k_max_derivative;
  e["flow"]["taylor_order"] = c.flow.taylor_order;
  e["flow"]["local_tol"] = c.flow.local_tol;
  e["flow"]["drift_tol"] = c.flow.drift_tol;
  e["flow"]["chord_tol"] = c.flow.chord_tol;
  e["flow"]["max_step"] = c.flow.max_step;
  e["homopode"]["solve_tol"] = c.hom.solve_tol;
  e["homopode"]["diag_margin"] = c.hom.diag_margin;
  e["homopode"]["rank_tol"] = c.hom.rank_tol;
  e["homopode"]["dedup_eps"] = c.hom.dedup_eps;
  e["homopode"]["gn_max_iter"] = c.hom.gn_max_iter;
  e["homopode"]["max_jacobian_refresh"] = c.hom.max_jacobian_refresh;
  e["homopode"]["stagnation_limit"] = c.hom.stagnation_limit;
  e["jets"]["axis_margin_frac"] = c.hom.jet.axis_margin_frac;
  e["jets"]["jet_tol"] = c.hom.jet.jet_tol;
  e["jets"]["k_max"] = c.hom.jet.k_max;
  p.echo.update(e);
  return e;
}

json point_json(const PhasePoint& x) {
  json j;
  j["q"] = x.q;
  j["p"] = x.p;
  return j;
}

json pair_json(const HomopodalPair& pr) {
  json j;
  j["x1"] = point_json(pr.x1.point);
  j["x2"] = point_json(pr.x2.point);
  j["k"] = pr.k;
  j["flavor"] = flavor_name(pr.flavor);
  j["residual"] = pr.residual_norm;
  if (pr.est_dim) j["dim"] = *pr.est_dim;
  else j["dim"] = nullptr;
  j["rank_ambiguous"] = pr.rank_ambiguous;
  return j;
}

std::string pairs_csv(const ScanReport& rep, std::size_t n) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < n; ++i) os << "q1_" << i + 1 << ",";
  for (std::size_t i = 0; i < n; ++i) os << "p1_" << i + 1 << ",";
  for (std::size_t i = 0; i < n; ++i) os << "q2_" << i + 1 << ",";
  for (std::size_t i = 0; i < n; ++i) os << "p2_" << i + 1 << ",";
  os << "k,flavor,residual,dim,rank_ambiguous\n";
  for (const HomopodalPair& p : rep.pairs) {
    for (double v : p.x1.point.flat()) os << v << ",";
    for (double v : p.x2.point.flat()) os << v << ",";
    os << p.k << "," << flavor_name(p.flavor) << "," << p.residual_norm << ","
       << (p.est_dim ? std::to_string(*p.est_dim) : "") << "," << int(p.rank_ambiguous) << "\n";
  }
  return os.str();
}

std::shared_ptr<ExprHamiltonian> make_ham(Params& p, const ResolvedCommon& c) {
  if (c.hamiltonian.empty())
    throw ConfigError(p.sc.path + ": missing top-level key `hamiltonian`");
  Expr e = parse_expr(c.hamiltonian, phase_vocab(c.n));
  // optional localized perturbation shared by scan-type tasks
  double amp = p.num("bump", "amplitude", 0.0);
  if (amp != 0.0) {
    double radius = p.num("bump", "radius", 1.0);
    std::uint64_t bseed = std::uint64_t(p.integer("bump", "seed", long(c.seed)));
    Vec center = p.vec("bump", "center", Vec(2 * c.n, 0.0));
    if (center.size() != 2 * c.n)
      throw ConfigError(p.sc.path + ": [bump] center must have 2n entries");
    e = bump_perturb(e, c.n, center, amp, radius, bseed);
  }
  return std::make_shared<ExprHamiltonian>(std::move(e), c.n, c.name);
}

LevelPoint certified(const HamiltonianField& H, const Vec& flat, const Tolerances& tol,
                     const std::string& what) {
  CertifyResult cr = certify_level_point(H, PhasePoint::from_flat(flat), tol);
  if (!cr.ok())
    throw FlowError(what + ": point failed level certification (residual " +
                    std::to_string(cr.residual) + ")");
  return *cr;
}

// ---------------------------------------------------------------------------

json task_flow(Params& p, const ResolvedCommon& c, std::map<std::string, std::string>& files) {
  auto H = make_ham(p, c);
  Vec x0 = p.require_vec("flow", "x0", 2 * c.n);
  double T = p.num("flow", "t_final", 1.0);
  LevelPoint lp = certified(*H, x0, c.tol, "flow");
  Orbit orbit = integrate(*H, lp, T, c.flow, c.tol);
  files[c.name + "_orbit.csv"] = orbit_to_csv(orbit);
  json r;
  r["t0"] = orbit.t0;
  r["t1"] = orbit.t1;
  r["steps"] = orbit.steps.size();
  r["samples"] = orbit.samples.size();
  r["max_drift"] = orbit.max_drift;
  r["initial"] = point_json(lp.point);
  r["final"] = point_json(orbit.eval(T));
  return r;
}

json task_chord(Params& p, const ResolvedCommon& c, std::map<std::string, std::string>& files) {
  auto H = make_ham(p, c);
  Vec qa = p.require_vec("chord", "q_a", c.n);
  Vec qb = p.require_vec("chord", "q_b", c.n);
  Vec pg = p.require_vec("chord", "p_guess", c.n);
  double tg = p.num("chord", "t_guess", 1.0);
  Chord ch = shoot_chord(*H, qa, qb, pg, tg, c.flow, c.tol);
  json r;
  r["converged"] = ch.converged;
  r["duration"] = ch.duration;
  r["residual"] = ch.residual;
  r["iterations"] = ch.iterations;
  r["singular_jacobian"] = ch.singular_jacobian;
  if (ch.converged) {
    r["initial"] = point_json(ch.orbit.eval(0.0));
    files[c.name + "_orbit.csv"] = orbit_to_csv(ch.orbit);
  }
  return r;
}

json jet_json(const CurveJet& j) {
  json r;
  r["axis"] = j.axis;
  r["base"] = j.base;
  r["k"] = j.k;
  r["coeffs"] = json::array();
  for (const Vec& cs : j.coeffs) r["coeffs"].push_back(cs);
  r["orientation"] = j.orientation;
  r["axis_margin"] = j.axis_margin;
  return r;
}

json task_jets(Params& p, const ResolvedCommon& c, std::map<std::string, std::string>&) {
  auto H = make_ham(p, c);
  Vec x0 = p.require_vec("jets", "x0", 2 * c.n);
  int k = int(p.integer("jets", "k", 2));
  int axis = int(p.integer("jets", "axis", -1));
  LevelPoint lp = certified(*H, x0, c.tol, "jets");
  CurveJet j = project_jet(*H, lp, k, c.hom.jet, axis);
  json r;
  r["jet"] = jet_json(j);
  return r;
}

json task_intersections(Params& p, const ResolvedCommon& c,
                        std::map<std::string, std::string>& files) {
  auto H = make_ham(p, c);
  Vec xa = p.require_vec("intersections", "x0_a", 2 * c.n);
  Vec xb = p.require_vec("intersections", "x0_b", 2 * c.n);
  double ta = p.num("intersections", "t_a", 1.0);
  double tb = p.num("intersections", "t_b", 1.0);
  int k = int(p.integer("intersections", "k", 3));
  Orbit oa = integrate(*H, certified(*H, xa, c.tol, "intersections"), ta, c.flow, c.tol);
  Orbit ob = integrate(*H, certified(*H, xb, c.tol, "intersections"), tb, c.flow, c.tol);
  auto hits = find_base_intersections(*H, oa, ob, k, c.hom.jet, c.tol);
  json r;
  r["count"] = hits.size();
  r["intersections"] = json::array();
  std::ostringstream csv;
  csv.precision(17);
  csv << "t_a,t_b,gap,order,isolation_eps\n";
  for (const BaseIntersection& bi : hits) {
    json h;
    h["t_a"] = bi.t_a;
    h["t_b"] = bi.t_b;
    h["q"] = bi.q;
    h["gap"] = bi.gap;
    h["order"] = bi.order;
    h["isolation_eps"] = bi.isolation.eps;
    h["isolation_warning"] = bi.isolation.small_eps_warning;
    r["intersections"].push_back(h);
    csv << bi.t_a << "," << bi.t_b << "," << bi.gap << "," << bi.order << "," << bi.isolation.eps
        << "\n";
  }
  files[c.name + "_intersections.csv"] = csv.str();
  return r;
}

ScanConfig read_scan_box(Params& p, const ResolvedCommon& c, const std::string& sec) {
  ScanConfig scfg;
  scfg.box.q_lo = p.require_vec(sec, "q_lo", c.n);
  scfg.box.q_hi = p.require_vec(sec, "q_hi", c.n);
  scfg.box.p_lo = p.require_vec(sec, "p_lo", c.n);
  scfg.box.p_hi = p.require_vec(sec, "p_hi", c.n);
  scfg.budget = int(p.integer(sec, "budget", 1000));
  scfg.seed = c.seed;
  scfg.estimate_dims = p.flag(sec, "estimate_dims", true);
  return scfg;
}

json scan_json(const ScanReport& rep) {
  json r;
  r["k"] = rep.k;
  r["pairs"] = json::array();
  for (const HomopodalPair& pr : rep.pairs) r["pairs"].push_back(pair_json(pr));
  r["seeds_tried"] = rep.seeds_tried;
  r["not_converged"] = rep.not_converged;
  r["collapsed_to_diagonal"] = rep.collapsed_to_diagonal;
  r["rejected_seeds"] = rep.rejected_seeds;
  return r;
}

json task_scan(Params& p, const ResolvedCommon& c, std::map<std::string, std::string>& files) {
  auto H = make_ham(p, c);
  ScanConfig scfg = read_scan_box(p, c, "homopode-scan");
  int k = int(p.integer("homopode-scan", "k", 1));
  ScanReport rep = scan_homopodal(*H, k, scfg, c.hom, c.tol);
  files[c.name + "_pairs.csv"] = pairs_csv(rep, c.n);
  return scan_json(rep);
}

json task_dimension(Params& p, const ResolvedCommon& c, std::map<std::string, std::string>&) {
  auto H = make_ham(p, c);  // [bump] section applies here
  ScanConfig scfg = read_scan_box(p, c, "dimension");
  std::vector<double> ks = p.vec("dimension", "k_list", {1, 2, 3});
  json rows = json::array();
  for (double kd : ks) {
    int k = int(kd);
    ScanReport rep = scan_homopodal(*H, k, scfg, c.hom, c.tol);
    int formula = (3 - k) * (int(c.n) - 1) + 1;
    double mean = 0.0;
    int counted = 0, ambiguous = 0;
    for (const HomopodalPair& pr : rep.pairs) {
      if (pr.est_dim) {
        mean += *pr.est_dim;
        ++counted;
      }
      if (pr.rank_ambiguous) ++ambiguous;
    }
    json row;
    row["k"] = k;
    row["n"] = c.n;
    row["formula"] = formula;
    row["pairs"] = rep.pairs.size();
    row["mean_est_dim"] = counted ? mean / counted : 0.0;
    row["ambiguous"] = ambiguous;
    row["not_converged"] = rep.not_converged;
    rows.push_back(row);
  }
  json r;
  r["table"] = rows;
  return r;
}

json task_heart(Params& p, const ResolvedCommon& c, std::map<std::string, std::string>& files) {
  double dimple = p.num("heart", "dimple", 0.7);
  int grid = int(p.integer("heart", "grid", 360));
  HeartModel model(dimple);
  FiberScanReport rep = heart_fiber_scan(model, grid, c.hom, c.tol);
  json r;
  r["hamiltonian"] = model.H->expr().to_string();
  r["grid"] = rep.grid;
  r["iso_components"] = rep.iso_components;
  r["anti_components"] = rep.anti_components;
  r["components"] = json::array();
  std::ostringstream csv;
  csv.precision(17);
  csv << "phi1,phi2,flavor,component\n";
  for (std::size_t ci = 0; ci < rep.components.size(); ++ci) {
    const FiberComponent& fc = rep.components[ci];
    json cj;
    cj["flavor"] = flavor_name(fc.flavor);
    cj["winding"] = {fc.winding1, fc.winding2};
    cj["cells"] = fc.cell_count;
    cj["touches_diagonal"] = fc.touches_diagonal;
    r["components"].push_back(cj);
    for (const auto& pt : fc.points)
      csv << pt[0] << "," << pt[1] << "," << flavor_name(fc.flavor) << "," << ci << "\n";
  }
  r["inflection_angles"] = rep.inflection_angles;
  r["inflection_orders"] = rep.inflection_orders;
  r["solver_checked"] = rep.solver_checked;
  r["solver_agreed"] = rep.solver_agreed;
  files[c.name + "_heart.csv"] = csv.str();
  return r;
}

json task_realize_jet(Params& p, const ResolvedCommon& c, std::map<std::string, std::string>&) {
  auto H = make_ham(p, c);
  const std::size_t n = c.n, m = 2 * n - 1;
  Vec center = p.require_vec("realize-jet", "center", 2 * n);
  Vec pole = p.require_vec("realize-jet", "pole", n);
  Vec q_half = p.require_vec("realize-jet", "q_half", n);
  Vec u_half = p.require_vec("realize-jet", "u_half", n - 1);
  int k = int(p.integer("realize-jet", "k", 2));
  Vec flat = p.require_vec("realize-jet", "coeffs", (m - 1) * std::size_t(k));
  RadialChart chart(*H, PhasePoint::from_flat(center), pole, q_half, u_half, ContactConfig{},
                    c.tol);
  if (!chart.valid())
    throw ContactError("radial chart rejected: " + chart_rejection_name(chart.rejection()));
  CurveJet target;
  target.axis = 0;
  target.k = k;
  Vec z0 = chart.center_zeta();
  target.base = z0[0];
  target.coeffs.assign(std::size_t(k) + 1, Vec(m - 1, 0.0));
  for (std::size_t i = 1; i < m; ++i) target.coeffs[0][i - 1] = z0[i];
  for (int r = 1; r <= k; ++r)
    for (std::size_t i = 0; i + 1 < m; ++i)
      target.coeffs[std::size_t(r)][i] = flat[std::size_t(r - 1) * (m - 1) + i];
  RealizedJetHam real = realize_jet_hamiltonian(chart, target, k, ContactConfig{});
  CurveJet achieved = rh_orbit_jet(chart, real.h, z0, k, 0, c.hom.jet);
  double err = 0.0;
  for (int r = 0; r <= k; ++r)
    for (std::size_t i = 0; i + 1 < m; ++i)
      err = std::max(err, std::abs(achieved.coeffs[std::size_t(r)][i] -
                                   target.coeffs[std::size_t(r)][i]));
  json rj;
  rj["h"] = real.h.to_string();
  rj["h_base"] = real.h_base;
  rj["box_shrunk"] = real.box_shrunk;
  rj["target"] = jet_json(target);
  rj["achieved"] = jet_json(achieved);
  rj["roundtrip_max_err"] = err;
  return rj;
}

json task_resolve(Params& p, const ResolvedCommon& c, std::map<std::string, std::string>& files) {
  auto H = make_ham(p, c);
  Vec xa = p.require_vec("resolve", "x0_a", 2 * c.n);
  Vec xb = p.require_vec("resolve", "x0_b", 2 * c.n);
  double ta = p.num("resolve", "t_a", 1.0);
  double tb = p.num("resolve", "t_b", 1.0);
  std::vector<Orbit> orbits;
  orbits.push_back(integrate(*H, certified(*H, xa, c.tol, "resolve"), ta, c.flow, c.tol));
  orbits.push_back(integrate(*H, certified(*H, xb, c.tol, "resolve"), tb, c.flow, c.tol));
  Vec q_star = p.vec("resolve", "q_star", {});
  double iso = p.num("resolve", "iso_radius", 0.0);
  if (q_star.empty() || iso <= 0.0) {
    auto hits = find_base_intersections(*H, orbits[0], orbits[1], 2, c.hom.jet, c.tol);
    if (hits.empty()) throw FlowError("resolve: no base intersection found between the two orbits");
    q_star = hits.front().q;
    iso = hits.front().isolation.eps;
    if (iso <= 0.0) throw FlowError("resolve: intersection has no positive isolation radius");
  }
  PerturbConfig pcfg;
  pcfg.angle_samples = int(p.integer("resolve", "angle_samples", pcfg.angle_samples));
  ResolutionReport rep = resolve_intersection(*H, orbits, 0, q_star, iso, pcfg, c.flow, c.tol);
  json r;
  r["resolved"] = rep.resolved;
  r["already_disjoint"] = rep.already_disjoint;
  r["q_star"] = rep.q_star;
  r["theta_star"] = rep.theta_star;
  r["r_selected"] = rep.r_selected;
  r["clearance"] = rep.clearance;
  r["clearance_min"] = rep.clearance_min;
  r["bystander_drift"] = rep.bystander_drift;
  r["c0_dist"] = rep.c0_dist;
  r["c1_dist"] = rep.c1_dist;
  r["c2_dist_estimate"] = rep.c2_dist_estimate;
  r["sweep_stats"]["radii_tried"] = rep.radii_tried;
  r["sweep_stats"]["sweep_points"] = rep.sweep_points;
  for (std::size_t i = 0; i < rep.new_orbits.size(); ++i)
    files[c.name + "_orbit_" + std::to_string(i) + ".csv"] = orbit_to_csv(rep.new_orbits[i]);
  return r;
}

// ---------------------------------------------------------------------------

int run_scenario(const std::string& file, const std::string& out_override,
                 std::optional<std::uint64_t> seed_override, int threads, bool validate_only) {
  Scenario sc;
  ResolvedCommon c;
  Params p{sc, json::object()};
  json report;
  std::map<std::string, std::string> files;
  try {
    sc = Scenario::load(file);
    c = cli::resolve_common(sc);
    if (seed_override) c.seed = *seed_override;
    echo_common(p, c);
    if (!c.hamiltonian.empty())
      parse_expr(c.hamiltonian, phase_vocab(c.n));  // surface syntax errors as config errors

    static const std::vector<std::string> tasks{"flow",          "chord",     "jets",
                                                "intersections", "homopode-scan",
                                                "dimension",     "heart",     "realize-jet",
                                                "resolve"};
    if (std::find(tasks.begin(), tasks.end(), c.task) == tasks.end())
      throw ConfigError(file + ": unknown task `" + c.task + "`");
    if (validate_only) {
      std::cout << "ok: " << file << " (task " << c.task << ")\n";
      return kExitOk;
    }
  } catch (const ParseError& e) {
    std::cerr << "config error: expression at position " << e.position() << ": " << e.what() << "\n";
    return kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    json result;
    if (c.task == "flow") result = task_flow(p, c, files);
    else if (c.task == "chord") result = task_chord(p, c, files);
    else if (c.task == "jets") result = task_jets(p, c, files);
    else if (c.task == "intersections") result = task_intersections(p, c, files);
    else if (c.task == "homopode-scan") result = task_scan(p, c, files);
    else if (c.task == "dimension") result = task_dimension(p, c, files);
    else if (c.task == "heart") result = task_heart(p, c, files);
    else if (c.task == "realize-jet") result = task_realize_jet(p, c, files);
    else if (c.task == "resolve") result = task_resolve(p, c, files);
    report["config"] = p.echo;
    report["config"]["cli"]["threads"] = threads;
    report["result"] = result;
  } catch (const ParseError& e) {
    std::cerr << "config error: expression at position " << e.position() << ": " << e.what() << "\n";
    return kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  }

  // output directory: --out beats PODEX_OUT beats scenario key beats cwd
  std::string out_dir = sc.str("", "out_dir", ".");
  if (const char* env = std::getenv("PODEX_OUT"); env && *env) out_dir = env;
  if (!out_override.empty()) out_dir = out_override;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  files[c.name + "_report.json"] = report.dump(2) + "\n";
  for (const auto& [fname, content] : files) {
    std::ofstream out(fs::path(out_dir) / fname, std::ios::binary);
    if (!out) {
      std::cerr << "config error: cannot write " << (fs::path(out_dir) / fname).string() << "\n";
      return kExitConfig;
    }
    out << content;
  }
  std::cout << "wrote " << files.size() << " report file(s) to " << out_dir << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"podex: Hamiltonian flows, curve jets and homopodal scans on energy levels"};
  app.require_subcommand(1);

  std::string scenario_file, out_dir;
  int threads = 1;
  std::optional<std::uint64_t> seed;

  CLI::App* run = app.add_subcommand("run", "run a scenario file and write reports");
  run->add_option("scenario", scenario_file, "scenario file")->required();
  run->add_option("--out", out_dir, "output directory (overrides PODEX_OUT)");
  run->add_option("--threads", threads, "worker threads (current tasks are single-threaded)");
  run->add_option("--seed", seed, "override the scenario rng seed");

  CLI::App* validate = app.add_subcommand("validate", "parse and check a scenario file");
  validate->add_option("scenario", scenario_file, "scenario file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }
  return run_scenario(scenario_file, out_dir, seed, threads, app.got_subcommand(validate));
}
