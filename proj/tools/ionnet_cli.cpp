// Command-line front end: model curves, tomography, click simulation and analysis.

#include <CLI11.hpp>

#include <cctype>
#include <fstream>
#include <iostream>
#include <locale>
#include <memory>
#include <optional>
#include <sstream>

#include <ionnet/config.hpp>

namespace {

using namespace ionnet;

enum exit_code : int {
  ok = 0,
  unexpected = 1,
  usage = 2,
  bad_config = 3,
  missing_preset = 4,
  io_failure = 5,
  bad_input = 6,
  numerical_failure = 7,
  handshake_timeout = 8,
};

struct Globals {
  std::string config_path, out_path, preset;
  std::optional<std::uint64_t> seed;
};

RunConfig load(const Globals &g) {
  RunConfig c = g.config_path.empty() ? RunConfig{} : load_config(g.config_path);
  if (g.seed) c.seed = *g.seed;
  return c;
}

// Output stream: the --out file or stdout, always in the classic locale.
class Sink {
public:
  explicit Sink(const std::string &path) {
    if (!path.empty()) {
      file_ = std::make_unique<std::ofstream>(path, std::ios::binary);
      if (!*file_) throw io_error("cannot open output file '" + path + "'");
    }
    os().imbue(std::locale::classic());
  }
  std::ostream &os() { return file_ ? static_cast<std::ostream &>(*file_) : std::cout; }
  void close(const std::string &path) {
    os().flush();
    if (!os()) throw io_error("failed writing '" + (path.empty() ? std::string("stdout") : path) + "'");
  }

private:
  std::unique_ptr<std::ofstream> file_;
};

std::ifstream open_input(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open input file '" + path + "'");
  in.imbue(std::locale::classic());
  return in;
}

nlohmann::json parse_json_file(const std::string &path) {
  auto in = open_input(path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error &e) {
    throw config_error("'" + path + "' is not valid JSON: " + e.what());
  }
}

void cmd_envelope(const Globals &g) {
  const RunConfig c = load(g);
  const std::string which = g.preset.empty() ? "nodeA" : g.preset;
  NodeTableRow row;
  if (which == "nodeA") row = c.node_a;
  else if (which == "nodeB") row = c.node_b;
  else row = preset_row(which); // throws missing_preset_error
  const NodeParams p = to_params(row);
  const auto grid = beat_grid(p, c.envelope_end_us * 1e-6, c.dt_ns * 1e-9);
  const auto curves = averaged_envelopes(p, grid, jitter_ensemble(p.gamma_clj, c.jitter_k_max, c.jitter_span));
  Sink out(g.out_path);
  out.os() << artifact_header(c) << " node=" << which << " scattering_events=" << scattering_events(curves, p) << '\n';
  write_envelope_csv(out.os(), curves, c.envelope_stride);
  out.close(g.out_path);
}

void cmd_visibility(const Globals &g) {
  const RunConfig c = load(g);
  const auto T = c.T_list();
  const auto opt = c.visibility_options();
  const NodeParams a = to_params(c.node_a), b = to_params(c.node_b);
  std::vector<std::vector<double>> v;
  for (auto m : {visibility_mode::full, visibility_mode::no_technical, visibility_mode::pure})
    v.push_back(model_visibility(a, b, T, m, opt));
  Sink out(g.out_path);
  auto &os = out.os();
  os << artifact_header(c) << '\n' << "T_us,V_full,V_no_technical,V_pure\n";
  os.precision(10);
  for (std::size_t k = 0; k < T.size(); ++k) os << T[k] * 1e6 << ',' << v[0][k] << ',' << v[1][k] << ',' << v[2][k] << '\n';
  out.close(g.out_path);
}

// Two-column CSV T_us,V (comment lines and a header allowed).
std::pair<std::vector<double>, std::vector<double>> read_visibility_csv(const std::string &path) {
  auto in = open_input(path);
  std::vector<double> T, V;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || std::isalpha(static_cast<unsigned char>(line[0]))) continue;
    std::istringstream ss(line);
    ss.imbue(std::locale::classic());
    double t, v;
    char comma;
    if (!(ss >> t >> comma >> v) || comma != ',') throw config_error("visibility file '" + path + "': malformed line");
    T.push_back(t * 1e-6);
    V.push_back(v);
  }
  if (T.empty()) throw config_error("visibility file '" + path + "' has no rows");
  return {T, V};
}

void cmd_fidelity(const Globals &g, const std::string &vis_path) {
  const RunConfig c = load(g);
  std::vector<double> T, V;
  if (vis_path.empty()) {
    T = c.T_list();
    V = model_visibility(to_params(c.node_a), to_params(c.node_b), T, visibility_mode::full, c.visibility_options());
  } else {
    std::tie(T, V) = read_visibility_csv(vis_path);
  }
  const auto f = model_fidelity_curve(V, detector_table(c), c.fidelity, T);
  Sink out(g.out_path);
  auto &os = out.os();
  os << artifact_header(c) << '\n' << "T_us,F_plus_full,F_minus_full,F_plus_nodephase,F_minus_nodephase\n";
  os.precision(10);
  for (std::size_t k = 0; k < T.size(); ++k)
    os << T[k] * 1e6 << ',' << f.F_plus_full[k] << ',' << f.F_minus_full[k] << ',' << f.F_plus_nodephase[k] << ','
       << f.F_minus_nodephase[k] << '\n';
  out.close(g.out_path);
}

Eigen::Matrix2cd matrix2_from_json(const nlohmann::json &j) {
  const auto re = j.at("real").get<std::vector<std::vector<double>>>();
  const auto im = j.at("imag").get<std::vector<std::vector<double>>>();
  if (re.size() != 2 || im.size() != 2 || re[0].size() != 2 || re[1].size() != 2 || im[0].size() != 2 || im[1].size() != 2)
    throw config_error("channel file: states must be 2x2");
  Eigen::Matrix2cd m;
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c) m(r, c) = cd(re[r][c], im[r][c]);
  return m;
}

void cmd_tomography(const Globals &g, const std::string &counts_path, const std::string &channel_path, int sign_opt,
                    unsigned threads) {
  const RunConfig c = load(g);
  nlohmann::ordered_json out_j;
  out_j["header"] = artifact_header(c);
  if (!counts_path.empty()) {
    const CountsRecord counts = counts_from_json(parse_json_file(counts_path));
    const int sign = sign_opt ? sign_opt : c.bell_sign;
    const auto est = resample_uncertainty(counts, {sign, true, 0}, c.resamples, c.seed, threads);
    const Matrix4c rho = mle_reconstruct(counts);
    out_j["basis"] = {"D'D'", "D'D", "DD'", "DD"};
    out_j["rho"] = nlohmann::ordered_json::parse(matrix_json(rho).dump());
    out_j["sign"] = sign;
    out_j["fidelity"] = {{"value", est.value},
                         {"phi", est.phi},
                         {"resample_mean", est.mean},
                         {"resample_std", est.std},
                         {"upper_width", est.upper},
                         {"lower_width", est.lower},
                         {"negative_width", est.negative_width},
                         {"resamples", c.resamples}};
    out_j["resample_distribution"] = est.samples;
  }
  if (!channel_path.empty()) {
    const auto j = parse_json_file(channel_path);
    std::array<Eigen::Matrix2cd, 6> outs;
    const char *names[6] = {"H", "V", "D", "A", "R", "L"};
    try {
      for (int k = 0; k < 6; ++k) outs[k] = matrix2_from_json(j.at("states").at(names[k]));
    } catch (const nlohmann::json::exception &e) {
      throw config_error(std::string("channel file: ") + e.what());
    }
    const auto fit = nearest_unitary_fit(outs);
    nlohmann::json re = nlohmann::json::array(), im = nlohmann::json::array();
    for (int r = 0; r < 2; ++r) {
      re.push_back({fit.U(r, 0).real(), fit.U(r, 1).real()});
      im.push_back({fit.U(r, 0).imag(), fit.U(r, 1).imag()});
    }
    out_j["channel"] = {{"U", {{"real", re}, {"imag", im}}},
                        {"mean_fidelity", fit.mean_fidelity},
                        {"ill_conditioned", fit.ill_conditioned}};
    if (fit.ill_conditioned) std::cerr << "ionnet: warning: channel outputs are identical; the fitted unitary is arbitrary\n";
  }
  if (counts_path.empty() && channel_path.empty()) throw config_error("tomography: give --counts and/or --channel");
  Sink out(g.out_path);
  out.os() << out_j.dump(2) << '\n';
  out.close(g.out_path);
}

void cmd_simulate(const Globals &g, std::optional<std::uint64_t> attempts, const std::string &summary_path,
                  unsigned threads) {
  RunConfig c = load(g);
  if (attempts) c.attempts = *attempts;
  // Each block opens with the TTL handshake over the configured link.
  SequenceConfig seq = c.sequence;
  const auto hs = run_handshake(c.handshake_config());
  seq.handshake = hs.duration;
  const ModelPair mp = build_model(c);
  SimulationOptions so;
  so.mode = c.mode;
  so.chunk = c.chunk;
  so.threads = threads;
  const auto res = simulate_attempts(seq, make_source(mp.a, mp.table.path_A), make_source(mp.b, mp.table.path_B),
                                     mp.table, c.attempts, c.seed, so);
  Sink out(g.out_path);
  out.os() << artifact_header(c) << '\n';
  write_clicks_csv(out.os(), res.clicks, mp.table);
  out.close(g.out_path);
  const auto m = success_metrics(res.log, seq);
  std::cerr << "ionnet: attempts=" << m.attempts << " coincidences=" << m.coincidences << " success_probability=" << m.probability
            << " rate_per_s=" << m.rate << '\n';
  if (!summary_path.empty()) {
    nlohmann::ordered_json s;
    s["header"] = artifact_header(c);
    s["attempts"] = m.attempts;
    s["coincidences"] = m.coincidences;
    s["blocks"] = res.log.blocks.size();
    s["handshake_us"] = hs.duration * 1e6;
    s["success_probability"] = m.probability;
    s["wall_clock_s"] = m.wall_clock;
    s["rate_per_s"] = m.rate;
    nlohmann::json eff = nlohmann::json::object();
    for (const auto &d : mp.table.det) eff[d.name] = d.efficiency;
    s["efficiencies"] = eff;
    s["path_A"] = mp.table.path_A[0];
    s["path_B"] = mp.table.path_B[0];
    Sink sum(summary_path);
    sum.os() << s.dump(2) << '\n';
    sum.close(summary_path);
  }
}

void cmd_analyze(const Globals &g, const std::string &clicks_path, const std::string &hist_path,
                 std::optional<std::uint64_t> attempts) {
  const RunConfig c = load(g);
  // Efficiencies come from the config when given; otherwise from the model fit.
  const DetectorTable table = c.efficiencies.empty() ? build_model(c).table : detector_table(c);
  auto in = open_input(clicks_path);
  const auto clicks = read_clicks_csv(in, table);
  HomOptions ho;
  ho.bin = c.bin_us * 1e-6;
  ho.window_start = c.sequence.window_start;
  ho.window_end = c.sequence.window_end;
  if (attempts) ho.n_attempts = *attempts;
  const auto T = c.T_list();
  const auto r = hom_analysis(clicks, table, T, ho);
  Sink out(g.out_path);
  auto &os = out.os();
  os << artifact_header(c) << '\n' << "T_us,T_eff_us,V,sigma\n";
  os.precision(10);
  for (std::size_t k = 0; k < T.size(); ++k) {
    os << T[k] * 1e6 << ',' << effective_window(T[k], ho.bin) * 1e6 << ',';
    if (r.defined[k]) os << r.V[k] << ',' << r.sigma[k] << '\n';
    else os << "nan,nan\n";
  }
  out.close(g.out_path);
  if (!hist_path.empty()) {
    Sink h(hist_path);
    auto &hs = h.os();
    hs << artifact_header(c) << '\n' << "tau_us,N_parallel,N_perp,raw_parallel,raw_perp\n";
    hs.precision(10);
    for (std::size_t b = 0; b < r.hist.tau.size(); ++b)
      hs << r.hist.tau[b] * 1e6 << ',' << r.hist.parallel[b] << ',' << r.hist.perp[b] << ',' << r.hist.raw_parallel[b] << ','
         << r.hist.raw_perp[b] << '\n';
    h.close(hist_path);
  }
}

int fail(int code, const std::string &msg) {
  std::string line = msg;
  for (auto &ch : line)
    if (ch == '\n') ch = ' ';
  std::cerr << "ionnet: error: " << line << '\n';
  return code;
}

} // namespace

int main(int argc, char **argv) {
  std::locale::global(std::locale::classic());
  CLI::App app{"Two-node trapped-ion network model and analysis"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  auto *seed_opt = app.add_option("--seed", seed, "master seed (overrides the config)");
  app.add_option("--config", g.config_path, "run configuration JSON");
  app.add_option("--out", g.out_path, "output file (default stdout)");
  app.add_option("--preset", g.preset, "nodeA or nodeB: node for single-node commands");
  app.fallthrough();

  auto *env = app.add_subcommand("envelope", "photon envelopes and scattering rate of one node");
  auto *vis = app.add_subcommand("visibility", "model V(T) for the full, no-technical and pure modes");
  std::string vis_path;
  auto *fid = app.add_subcommand("fidelity-model", "empirical F+-(T)");
  fid->add_option("--visibility", vis_path, "CSV with columns T_us,V to use instead of the model V(T)");
  std::string counts_path, channel_path;
  int sign = 0;
  unsigned threads = 0;
  auto *tom = app.add_subcommand("tomography", "maximum-likelihood state and resampled fidelity");
  tom->add_option("--counts", counts_path, "counts JSON (nine settings, four counts each)");
  tom->add_option("--channel", channel_path, "six output polarization states for the unitary fit");
  tom->add_option("--sign", sign, "target Bell state sign")->check(CLI::IsMember({-1, 1}));
  tom->add_option("--threads", threads, "worker threads (0: all cores)");
  std::uint64_t n_attempts = 0;
  std::string summary_path;
  auto *sim = app.add_subcommand("simulate", "synthetic click records");
  auto *att_opt = sim->add_option("--attempts", n_attempts, "number of attempts");
  sim->add_option("--summary", summary_path, "write run metrics as JSON");
  sim->add_option("--threads", threads, "worker threads (0: all cores)");
  std::string clicks_path, hist_path;
  std::uint64_t an_attempts = 0;
  auto *ana = app.add_subcommand("analyze", "HOM histograms and V(T) from click records");
  ana->add_option("--clicks", clicks_path, "click CSV")->required();
  ana->add_option("--hist", hist_path, "write the corrected histograms here");
  auto *ana_att = ana->add_option("--attempts", an_attempts, "attempts the clicks were drawn from");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    return fail(usage, e.what());
  }
  if (*seed_opt) g.seed = seed;

  try {
    if (*env) cmd_envelope(g);
    else if (*vis) cmd_visibility(g);
    else if (*fid) cmd_fidelity(g, vis_path);
    else if (*tom) cmd_tomography(g, counts_path, channel_path, sign, threads);
    else if (*sim) cmd_simulate(g, *att_opt ? std::optional<std::uint64_t>(n_attempts) : std::nullopt, summary_path, threads);
    else if (*ana) cmd_analyze(g, clicks_path, hist_path, *ana_att ? std::optional<std::uint64_t>(an_attempts) : std::nullopt);
  } catch (const missing_preset_error &e) {
    return fail(missing_preset, e.what());
  } catch (const config_error &e) {
    return fail(bad_config, e.what());
  } catch (const io_error &e) {
    return fail(io_failure, e.what());
  } catch (const handshake_timeout_error &e) {
    return fail(handshake_timeout, e.what());
  } catch (const domain_error &e) {
    return fail(bad_input, e.what());
  } catch (const degenerate_input_error &e) {
    return fail(bad_input, e.what());
  } catch (const ionnet::error &e) {
    return fail(numerical_failure, e.what());
  } catch (const std::exception &e) {
    return fail(unexpected, e.what());
  }
  return ok;
}
