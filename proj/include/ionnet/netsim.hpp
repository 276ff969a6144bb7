#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <locale>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "pbsm.hpp"
#include "tomography.hpp"

namespace ionnet {

// ---------------------------------------------------------------- handshake

struct HandshakeConfig {
  double latency_ab = 0, latency_ba = 0; // one-way signal delays, s
  double processing_a = 0, processing_b = 0;
  double clock_skew = 5e-9; // fractional frequency mismatch, 50 mHz on 10 MHz
  double timeout = 1e-3;

  void validate() const {
    for (double x : {latency_ab, latency_ba, processing_a, processing_b, clock_skew})
      if (!(x >= 0)) throw domain_error("handshake: latencies, delays and skew must be nonnegative");
    if (!(timeout > 2 * (latency_ab + latency_ba)))
      throw domain_error("handshake: timeout must exceed two round trips");
  }

  // Fibre link of the given length with group index n.
  static HandshakeConfig fiber_link(double length_m, double group_index = 1.468) {
    HandshakeConfig c;
    c.latency_ab = c.latency_ba = length_m * group_index / 299792458.0;
    return c;
  }
};

inline constexpr double installed_fiber_length = 520.0;

struct HandshakeEvent {
  int step = 0;        // 1..4
  char sender = 'A';
  double t_set = 0;    // sender changes its TTL level
  double t_received = 0;
};

struct HandshakeResult {
  double duration = 0; // step 1 set to step 4 received
  std::vector<HandshakeEvent> log;
  double loop_start_a = 0, loop_start_b = 0;
};

// Four TTL edges: A high, B high, A low, B low. Each edge is sent after the previous
// one is received plus the local processing delay. Timing beyond `timeout` aborts.
inline HandshakeResult run_handshake(const HandshakeConfig &cfg) {
  cfg.validate();
  HandshakeResult r;
  double t = 0;
  for (int step = 1; step <= 4; ++step) {
    const bool from_a = step % 2 == 1;
    const double proc = step == 1 ? 0 : (from_a ? cfg.processing_a : cfg.processing_b);
    HandshakeEvent e;
    e.step = step;
    e.sender = from_a ? 'A' : 'B';
    e.t_set = t + proc;
    e.t_received = e.t_set + (from_a ? cfg.latency_ab : cfg.latency_ba);
    if (e.t_received > cfg.timeout || !std::isfinite(e.t_received))
      throw handshake_timeout_error("handshake timed out waiting for step " + std::to_string(step), step - 1);
    r.log.push_back(e);
    t = e.t_received;
  }
  r.duration = r.log.back().t_received;
  r.loop_start_b = r.log.back().t_set;
  r.loop_start_a = r.log.back().t_received;
  return r;
}

// Largest timing offset accumulated by two free-running clocks over one sequence.
inline double clock_skew_offset(double fractional_skew, double sequence_length) {
  return std::abs(fractional_skew) * sequence_length;
}

// ---------------------------------------------------------------- sequence

struct NodeTiming {
  double cooling = 0, pumping = 0, raman = 50e-6, wait = 0;
  double total() const { return cooling + pumping + raman + wait; }
};

struct SequenceConfig {
  NodeTiming node_a{63e-6, 280e-6, 50e-6, 0};
  NodeTiming node_b{60e-6, 60e-6, 50e-6, 0};
  double iteration = 420e-6;
  int max_iterations = 20;
  double window_start = 5.5e-6, window_end = 23e-6;
  double background_start = 70e-6, background_end = 100e-6;
  double record_length = 100e-6; // clicks are time-stamped within [0, record_length]

  // Wall-clock model
  double initial_cooling = 1.52e-3;
  double handshake = 10e-6;
  double measurement = 1.5e-3 + 11.1e-6 + 7.81e-6;
  double max_sequence = 11.9e-3; // every block is padded to this length

  double window() const { return window_end - window_start; }

  void validate() const {
    if (!(iteration > 0) || max_iterations < 1) throw domain_error("sequence: need positive iteration length and count");
    if (node_a.total() > iteration + 1e-12 || node_b.total() > iteration + 1e-12)
      throw domain_error("sequence: phase durations exceed the iteration length");
    if (!(window_start >= 0 && window_end > window_start)) throw domain_error("sequence: bad detection window");
    if (!(background_end > background_start)) throw domain_error("sequence: bad background window");
    if (window_end > background_start && background_end > window_start)
      throw domain_error("sequence: detection and background windows overlap");
    if (record_length < std::max(window_end, background_end)) throw domain_error("sequence: record shorter than windows");
  }

  // Node B waits to fill its iteration to the common length.
  SequenceConfig padded() const {
    SequenceConfig s = *this;
    s.node_b.wait = std::max(0.0, iteration - (node_b.cooling + node_b.pumping + node_b.raman));
    s.node_a.wait = std::max(0.0, iteration - (node_a.cooling + node_a.pumping + node_a.raman));
    return s;
  }
};

// ---------------------------------------------------------------- clicks

enum class click_origin { photon, background, unknown };

inline const char *origin_name(click_origin o) {
  switch (o) {
  case click_origin::photon: return "photon";
  case click_origin::background: return "background";
  case click_origin::unknown: return "";
  }
  return "";
}

struct ClickEvent {
  std::uint64_t attempt = 0;
  int detector = 0;
  double t = 0; // s since the start of the Raman pulse
  click_origin origin = click_origin::unknown;
};

struct AttemptBlock {
  std::uint64_t first_attempt = 0;
  std::uint32_t attempts = 0;
  bool heralded = false;
};

struct AttemptLog {
  std::uint64_t n_attempts = 0;
  std::vector<AttemptBlock> blocks;
  std::vector<std::uint64_t> heralds; // attempt indices
};

// One node's photon, as seen at the beamsplitter input.
struct PhotonSource {
  KernelGrid kgrid;
  std::array<Eigen::MatrixXcd, 2> G;          // jitter-averaged kernels, index polarization (h, v)
  double kappa = 0;
  std::array<double, 2> path{0, 0};           // reaches the beamsplitter
  TimeGrid fine;                              // envelopes outside the kernel window
  std::array<std::vector<double>, 2> outside; // cumulative emission probability outside the window
};

inline constexpr int pol_index(polarization p) { return p == polarization::h ? 0 : 1; }

inline PhotonSource make_source(const PhotonRecord &rec, std::array<double, 2> path) {
  PhotonSource s;
  s.kgrid = rec.kgrid;
  const auto avg = average_kernels(rec.kernels, rec.ensemble.weights);
  s.G[0] = avg.h.G;
  s.G[1] = avg.v.G;
  s.kappa = rec.params.kappa;
  s.path = path;
  s.fine = rec.envelopes.grid;
  const auto &g = s.fine;
  const double a = s.kgrid.t_start, b = s.kgrid.t_end();
  for (int p = 0; p < 2; ++p) {
    const auto &env = p == 0 ? rec.envelopes.p_h : rec.envelopes.p_v;
    auto &c = s.outside[p];
    c.assign(env.size(), 0.0);
    double acc = 0;
    for (std::size_t i = 0; i + 1 < env.size(); ++i) {
      const double mid = 0.5 * (g.t(i) + g.t(i + 1));
      if (mid < a || mid > b) acc += 0.5 * (env[i] + env[i + 1]) * g.dt;
      c[i + 1] = acc;
    }
  }
  return s;
}

inline PhotonSource dark_source(const KernelGrid &kg = {}) {
  PhotonSource s;
  s.kgrid = kg;
  for (auto &g : s.G) g = Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(kg.n), static_cast<Eigen::Index>(kg.n));
  s.fine = TimeGrid::uniform(0, 1e-6, 1e-6);
  for (auto &c : s.outside) c = {0.0, 0.0};
  return s;
}

namespace detail {

struct Categorical {
  std::vector<double> cdf;
  double total = 0;
  void build(const std::vector<double> &w) {
    cdf.resize(w.size());
    double s = 0;
    for (std::size_t k = 0; k < w.size(); ++k) cdf[k] = (s += std::max(0.0, w[k]));
    total = s;
  }
  template <class Rng> std::size_t operator()(Rng &rng) const {
    const double u = std::uniform_real_distribution<double>(0, total)(rng);
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
  }
};

// Precomputed per-attempt sampling tables for a pair of sources and a detector table.
struct AttemptSampler {
  KernelGrid kg;
  std::array<std::array<double, 4>, 2> cat{}; // per node: P(window h), P(window v), P(outside h), P(outside v)
  std::array<std::array<Categorical, 2>, 2> single; // node, pol: cell distribution inside the window
  std::array<Categorical, 2> opposite, same;         // pol: joint cell distribution for equal polarizations
  std::array<std::array<double, 2>, 2> outside_total{};
  const PhotonSource *src[2];
  std::array<double, 4> eff{};
  std::array<std::array<int, 2>, 2> det{}; // [pol][output u=0, r=1]
  double bg_total = 0, record_length = 0;
  Categorical bg_pick;

  AttemptSampler(const PhotonSource &a, const PhotonSource &b, const DetectorTable &t, const SequenceConfig &seq,
                 bool photons, bool background) {
    src[0] = &a;
    src[1] = &b;
    kg = a.kgrid;
    const auto n = static_cast<Eigen::Index>(kg.n);
    for (int node = 0; node < 2; ++node) {
      const PhotonSource &s = *src[node];
      for (int p = 0; p < 2; ++p) {
        std::vector<double> d(kg.n);
        for (Eigen::Index i = 0; i < n; ++i) d[static_cast<std::size_t>(i)] = std::max(0.0, s.G[p](i, i).real());
        single[node][p].build(d);
        const double win = photons ? 2 * s.kappa * single[node][p].total * kg.h : 0.0;
        const double out = photons ? s.outside[p].back() : 0.0;
        cat[node][p] = s.path[p] * win;
        cat[node][2 + p] = s.path[p] * out;
      }
      double tot = 0;
      for (double x : cat[node]) tot += x;
      if (tot > 1) throw domain_error("simulate_attempts: per-attempt photon probability exceeds one");
    }
    for (int p = 0; p < 2; ++p) {
      const Eigen::MatrixXcd &ga = a.G[p], &gb = b.G[p];
      std::vector<double> o(kg.n * kg.n), s(kg.n * kg.n);
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
          const double direct = ga(i, i).real() * gb(j, j).real() + ga(j, j).real() * gb(i, i).real();
          const double cross = 2 * (ga(i, j) * gb(j, i)).real();
          o[static_cast<std::size_t>(i * n + j)] = direct - cross;
          s[static_cast<std::size_t>(i * n + j)] = direct + cross;
        }
      opposite[p].build(o);
      same[p].build(s);
    }
    for (int r = 0; r < 4; ++r) eff[r] = t.det[r].efficiency;
    for (polarization p : {polarization::h, polarization::v}) {
      det[pol_index(p)][0] = static_cast<int>(t.index(p, output::u));
      det[pol_index(p)][1] = static_cast<int>(t.index(p, output::r));
    }
    std::vector<double> rates;
    for (const auto &d : t.det) rates.push_back(background ? d.bg_rate : 0.0);
    bg_pick.build(rates);
    record_length = seq.record_length;
    bg_total = bg_pick.total * record_length;
  }

  template <class Rng> double in_cell(std::size_t i, Rng &rng) const {
    return kg.t_start + (static_cast<double>(i) + std::uniform_real_distribution<double>(0, 1)(rng)) * kg.h;
  }

  template <class Rng> double outside_time(int node, int p, Rng &rng) const {
    const auto &c = src[node]->outside[p];
    const double u = std::uniform_real_distribution<double>(0, c.back())(rng);
    const auto it = std::upper_bound(c.begin(), c.end(), u);
    const std::size_t k = std::clamp<std::size_t>(static_cast<std::size_t>(it - c.begin()), 1, c.size() - 1);
    const double f = (u - c[k - 1]) / std::max(1e-300, c[k] - c[k - 1]);
    const auto &g = src[node]->fine;
    return g.t(k - 1) + std::clamp(f, 0.0, 1.0) * g.dt;
  }
};

} // namespace detail

enum class loop_mode { herald, calibration };

struct SimulationOptions {
  loop_mode mode = loop_mode::herald;
  bool photons = true;
  bool background = true;
  std::uint64_t chunk = 1u << 16; // attempts per independently seeded range
  unsigned threads = 0;
  // Detector pairs whose coincidence within the detection window heralds entanglement.
  std::vector<std::pair<int, int>> herald_pairs;
};

// Orthogonal-polarization pairs: same output u, and the two opposite-output combinations.
inline std::vector<std::pair<int, int>> default_herald_pairs(const DetectorTable &t) {
  using P = polarization;
  using O = output;
  auto i = [&](P p, O o) { return static_cast<int>(t.index(p, o)); };
  return {{i(P::h, O::u), i(P::v, O::u)}, {i(P::h, O::r), i(P::v, O::u)}, {i(P::v, O::r), i(P::h, O::u)}};
}

struct SimulationResult {
  std::vector<ClickEvent> clicks;
  AttemptLog log;
};

namespace detail {

struct Photon {
  int pol = -1;
  double t = 0;
  int out = -1; // 0 = u, 1 = r; -1 not yet routed
};

template <class Rng>
inline void attempt_clicks(const AttemptSampler &s, std::uint64_t attempt, Rng &rng, std::vector<ClickEvent> &out) {
  std::uniform_real_distribution<double> uni(0, 1);
  std::array<int, 2> c{-1, -1};
  for (int node = 0; node < 2; ++node) {
    double u = uni(rng);
    for (int k = 0; k < 4; ++k) {
      if (u < s.cat[node][k]) {
        c[node] = k;
        break;
      }
      u -= s.cat[node][k];
    }
  }
  std::array<Photon, 2> ph;
  const bool both_inside = c[0] >= 0 && c[0] < 2 && c[1] >= 0 && c[1] < 2;
  if (both_inside && c[0] == c[1]) {
    const int p = c[0];
    const double po = s.opposite[p].total, ps = s.same[p].total;
    const bool opp = uni(rng) * (po + ps) < po;
    const std::size_t cell = opp ? s.opposite[p](rng) : s.same[p](rng);
    const std::size_t i = cell / s.kg.n, j = cell % s.kg.n;
    ph[0] = {p, s.in_cell(i, rng), 0};
    ph[1] = {p, s.in_cell(j, rng), 1};
    if (!opp) ph[0].out = ph[1].out = uni(rng) < 0.5 ? 0 : 1;
  } else {
    for (int node = 0; node < 2; ++node) {
      if (c[node] < 0) continue;
      const int p = c[node] % 2;
      const double t = c[node] < 2 ? s.in_cell(s.single[node][p](rng), rng) : s.outside_time(node, p, rng);
      ph[node] = {p, t, -1};
    }
  }
  // Route and detect. Two photons in one detector give a single click at the earlier detected time.
  std::array<double, 4> first;
  first.fill(std::numeric_limits<double>::infinity());
  for (auto &x : ph) {
    if (x.pol < 0) continue;
    if (x.out < 0) x.out = uni(rng) < 0.5 ? 0 : 1;
    const int d = s.det[x.pol][x.out];
    if (uni(rng) < s.eff[d]) first[d] = std::min(first[d], x.t);
  }
  for (int d = 0; d < 4; ++d)
    if (std::isfinite(first[d])) out.push_back({attempt, d, first[d], click_origin::photon});
  if (s.bg_total > 0) {
    const auto nb = std::poisson_distribution<int>(s.bg_total)(rng);
    for (int k = 0; k < nb; ++k) {
      const int d = static_cast<int>(s.bg_pick(rng));
      const double t = uni(rng) * s.record_length;
      out.push_back({attempt, d, t, click_origin::background});
    }
  }
}

inline bool heralds(const std::vector<ClickEvent> &clicks, std::size_t begin, const SequenceConfig &seq,
                    const std::vector<std::pair<int, int>> &pairs) {
  std::array<bool, 4> hit{};
  for (std::size_t k = begin; k < clicks.size(); ++k)
    if (clicks[k].t >= seq.window_start && clicks[k].t <= seq.window_end) hit[static_cast<std::size_t>(clicks[k].detector)] = true;
  for (const auto &[a, b] : pairs)
    if (hit[static_cast<std::size_t>(a)] && hit[static_cast<std::size_t>(b)]) return true;
  return false;
}

} // namespace detail

// Attempts are split into fixed ranges, each with its own generator; a range always
// begins a new block, so results do not depend on the number of threads.
inline SimulationResult simulate_attempts(const SequenceConfig &seq, const PhotonSource &a, const PhotonSource &b,
                                          const DetectorTable &table, std::uint64_t n_attempts, std::uint64_t seed,
                                          SimulationOptions opt = {}) {
  seq.validate();
  table.validate();
  if (a.kgrid.n != b.kgrid.n || a.kgrid.h != b.kgrid.h || a.kgrid.t_start != b.kgrid.t_start)
    throw domain_error("simulate_attempts: sources use different kernel grids");
  if (opt.herald_pairs.empty()) opt.herald_pairs = default_herald_pairs(table);
  if (opt.chunk == 0) throw domain_error("simulate_attempts: chunk size must be positive");
  const detail::AttemptSampler sampler(a, b, table, seq, opt.photons, opt.background);
  const std::uint64_t n_chunks = (n_attempts + opt.chunk - 1) / opt.chunk;
  std::vector<SimulationResult> parts(n_chunks);
  auto run_chunk = [&](std::uint64_t c) {
    std::mt19937_64 rng(trial_seed(seed, c));
    auto &res = parts[c];
    const std::uint64_t begin = c * opt.chunk, end = std::min(n_attempts, begin + opt.chunk);
    AttemptBlock block{begin, 0, false};
    for (std::uint64_t k = begin; k < end; ++k) {
      const std::size_t mark = res.clicks.size();
      detail::attempt_clicks(sampler, k, rng, res.clicks);
      ++block.attempts;
      const bool herald = detail::heralds(res.clicks, mark, seq, opt.herald_pairs);
      if (herald) res.log.heralds.push_back(k);
      const bool stop = (herald && opt.mode == loop_mode::herald) ||
                        block.attempts == static_cast<std::uint32_t>(seq.max_iterations);
      if (stop || k + 1 == end) {
        block.heralded = herald;
        res.log.blocks.push_back(block);
        block = {k + 1, 0, false};
      }
    }
  };
  unsigned threads = opt.threads ? opt.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::uint64_t>(threads, std::max<std::uint64_t>(n_chunks, 1)));
  std::vector<std::thread> pool;
  for (unsigned w = 1; w < threads; ++w)
    pool.emplace_back([&, w] {
      for (std::uint64_t c = w; c < n_chunks; c += threads) run_chunk(c);
    });
  for (std::uint64_t c = 0; c < n_chunks; c += threads) run_chunk(c);
  for (auto &t : pool) t.join();

  SimulationResult out;
  out.log.n_attempts = n_attempts;
  std::size_t total = 0;
  for (const auto &p : parts) total += p.clicks.size();
  out.clicks.reserve(total);
  for (auto &p : parts) {
    out.clicks.insert(out.clicks.end(), p.clicks.begin(), p.clicks.end());
    out.log.blocks.insert(out.log.blocks.end(), p.log.blocks.begin(), p.log.blocks.end());
    out.log.heralds.insert(out.log.heralds.end(), p.log.heralds.begin(), p.log.heralds.end());
  }
  return out;
}

// ---------------------------------------------------------------- analysis

struct HomOptions {
  double bin = 0.5e-6;
  double window_start = 5.5e-6, window_end = 23e-6;
  bool subtract_background = true;
  bool correct_efficiency = true;
  std::uint64_t n_attempts = 0; // 0: largest attempt index + 1
};

struct HomHistogram {
  double bin = 0;
  std::vector<double> tau;                   // bin centres, tau = t_u - t_r
  std::vector<double> parallel, perp;        // corrected
  std::vector<double> raw_parallel, raw_perp;
  std::vector<double> var_parallel, var_perp; // Poisson variance after correction
};

struct HomResult {
  HomHistogram hist;
  std::vector<double> T, V, sigma;
  std::vector<bool> defined;
};

// Integral of max(0, W - |x|) over [lo, hi]: area of the window square with t_u - t_r in [lo, hi].
inline double band_area(double lo, double hi, double W) {
  auto F = [W](double x) {
    x = std::clamp(x, -W, W);
    return x >= 0 ? W * W / 2 + W * x - x * x / 2 : W * W / 2 + W * x + x * x / 2;
  };
  return hi > lo ? F(hi) - F(lo) : 0.0;
}

// Coincidence window the binned sum actually covers.
inline double effective_window(double T, double bin) {
  return (std::floor((T - bin / 2) / bin + 1e-9) + 0.5) * bin;
}

inline HomResult hom_analysis(const std::vector<ClickEvent> &clicks, const DetectorTable &table,
                              const std::vector<double> &T_list, const HomOptions &opt = {}) {
  if (!(opt.bin > 0)) throw domain_error("hom_analysis: bin width must be positive");
  const double W = opt.window_end - opt.window_start;
  const int kmax = static_cast<int>(std::ceil(W / opt.bin));
  const std::size_t nb = static_cast<std::size_t>(2 * kmax + 1);
  HomResult res;
  auto &h = res.hist;
  h.bin = opt.bin;
  for (auto *v : {&h.parallel, &h.perp, &h.raw_parallel, &h.raw_perp, &h.var_parallel, &h.var_perp}) v->assign(nb, 0.0);
  for (int k = -kmax; k <= kmax; ++k) h.tau.push_back(k * opt.bin);

  using O = output;
  std::vector<int> u_det, r_det;
  for (int d = 0; d < 4; ++d) (table.det[d].out == O::u ? u_det : r_det).push_back(d);
  auto parallel = [&](int du, int dr) { return table.det[du].pol == table.det[dr].pol; };
  auto bin_of = [&](double tau) { return static_cast<long>(std::floor(tau / opt.bin + 0.5)) + kmax; };

  // Raw coincidences and, per detector, the clicks used for the accidental estimate.
  std::uint64_t max_attempt = 0;
  std::array<std::vector<double>, 4> times;
  std::array<std::array<std::vector<double>, 4>, 4> raw{};
  for (auto &row : raw)
    for (auto &v : row) v.assign(nb, 0.0);
  std::size_t k = 0;
  while (k < clicks.size()) {
    std::size_t e = k;
    while (e < clicks.size() && clicks[e].attempt == clicks[k].attempt) ++e;
    max_attempt = std::max(max_attempt, clicks[k].attempt);
    for (std::size_t i = k; i < e; ++i) {
      const auto &ci = clicks[i];
      if (ci.t < opt.window_start || ci.t > opt.window_end) continue;
      times[static_cast<std::size_t>(ci.detector)].push_back(ci.t);
      if (table.det[ci.detector].out != O::u) continue;
      for (std::size_t j = k; j < e; ++j) {
        const auto &cj = clicks[j];
        if (cj.t < opt.window_start || cj.t > opt.window_end || table.det[cj.detector].out != O::r) continue;
        const long b = bin_of(ci.t - cj.t);
        if (b >= 0 && b < static_cast<long>(nb)) raw[ci.detector][cj.detector][static_cast<std::size_t>(b)] += 1;
      }
    }
    k = e;
  }
  const std::uint64_t n_att = opt.n_attempts ? opt.n_attempts : max_attempt + 1;

  // Overlap of [t - tau - bin/2, t - tau + bin/2] with the window, summed over clicks.
  auto overlap_sum = [&](const std::vector<double> &ts, double sign, std::vector<double> &acc) {
    for (double t : ts)
      for (std::size_t b = 0; b < nb; ++b) {
        const double c = t - sign * h.tau[b];
        const double lo = std::max(opt.window_start, c - opt.bin / 2), hi = std::min(opt.window_end, c + opt.bin / 2);
        if (hi > lo) acc[b] += hi - lo;
      }
  };
  for (int du : u_det)
    for (int dr : r_det) {
      const double bu = table.det[du].bg_rate, br = table.det[dr].bg_rate;
      std::vector<double> acc(nb, 0.0);
      if (opt.subtract_background) {
        // Partner of a u click at time t lies near t - tau; partner of an r click near t + tau.
        std::vector<double> au(nb, 0.0), ar(nb, 0.0);
        overlap_sum(times[du], 1.0, au);
        overlap_sum(times[dr], -1.0, ar);
        for (std::size_t b = 0; b < nb; ++b) {
          const double area = band_area(h.tau[b] - opt.bin / 2, h.tau[b] + opt.bin / 2, W);
          acc[b] = au[b] * br + ar[b] * bu - double(n_att) * bu * br * area;
        }
      }
      const double eff = opt.correct_efficiency ? table.det[du].efficiency * table.det[dr].efficiency : 1.0;
      const bool par = parallel(du, dr);
      for (std::size_t b = 0; b < nb; ++b) {
        const double n = raw[du][dr][b];
        (par ? h.raw_parallel : h.raw_perp)[b] += n;
        (par ? h.parallel : h.perp)[b] += (n - acc[b]) / eff;
        (par ? h.var_parallel : h.var_perp)[b] += n / (eff * eff);
      }
    }

  for (double T : T_list) {
    double a = 0, b = 0, va = 0, vb = 0;
    for (std::size_t i = 0; i < nb; ++i)
      if (std::abs(h.tau[i]) <= T - opt.bin / 2 + 1e-12) {
        a += h.parallel[i];
        b += h.perp[i];
        va += h.var_parallel[i];
        vb += h.var_perp[i];
      }
    res.T.push_back(T);
    if (!(b > 0)) {
      res.V.push_back(std::numeric_limits<double>::quiet_NaN());
      res.sigma.push_back(std::numeric_limits<double>::quiet_NaN());
      res.defined.push_back(false);
      continue;
    }
    res.V.push_back(1 - a / b);
    res.sigma.push_back(std::sqrt(va / (b * b) + a * a * vb / (b * b * b * b)));
    res.defined.push_back(true);
  }
  return res;
}

// ---------------------------------------------------------------- metrics

struct SuccessMetrics {
  double probability = 0, rate = 0, wall_clock = 0;
  std::uint64_t coincidences = 0, attempts = 0;
};

inline double block_duration(const AttemptBlock &b, const SequenceConfig &seq) {
  const double t = seq.initial_cooling + seq.handshake + b.attempts * seq.iteration + (b.heralded ? seq.measurement : 0.0);
  return std::max(t, seq.max_sequence);
}

inline SuccessMetrics success_metrics(const AttemptLog &log, const SequenceConfig &seq) {
  SuccessMetrics m;
  m.attempts = log.n_attempts;
  m.coincidences = log.heralds.size();
  for (const auto &b : log.blocks) m.wall_clock += block_duration(b, seq);
  if (m.coincidences == 0 || m.attempts == 0) return m;
  m.probability = double(m.coincidences) / double(m.attempts);
  m.rate = m.wall_clock > 0 ? double(m.coincidences) / m.wall_clock : 0.0;
  return m;
}

// Expected heralds per attempt from the detector table alone: photon pairs plus
// photon-background and background-background accidentals.
inline double expected_herald_probability(const DetectorTable &t, const std::vector<std::pair<int, int>> &pairs) {
  double p = 0;
  for (const auto &[a, b] : pairs) {
    const auto &x = t.det[a], &y = t.det[b];
    p += x.p_A * y.p_B + x.p_B * y.p_A + (x.p_A + x.p_B) * y.p_bg + (y.p_A + y.p_B) * x.p_bg + x.p_bg * y.p_bg;
  }
  return p;
}

// ---------------------------------------------------------------- click files

inline void write_clicks_csv(std::ostream &os, const std::vector<ClickEvent> &clicks, const DetectorTable &t,
                             bool with_origin = true) {
  os << (with_origin ? "attempt,detector,t_us,origin\n" : "attempt,detector,t_us\n");
  char buf[64];
  for (const auto &c : clicks) {
    std::snprintf(buf, sizeof buf, "%.6f", c.t * 1e6);
    os << c.attempt << ',' << t.det[c.detector].name << ',' << buf;
    if (with_origin) os << ',' << origin_name(c.origin);
    os << '\n';
  }
}

inline std::vector<ClickEvent> read_clicks_csv(std::istream &is, const DetectorTable &t) {
  std::vector<ClickEvent> out;
  std::string line;
  bool header = false;
  int col_origin = -1;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!header) {
      if (f.size() < 3 || f[0] != "attempt" || f[1] != "detector" || f[2] != "t_us")
        throw config_error("click file: expected header attempt,detector,t_us[,origin]");
      if (f.size() > 3 && f[3] == "origin") col_origin = 3;
      header = true;
      continue;
    }
    if (f.size() < 3) throw config_error("click file: line " + std::to_string(lineno) + " has too few fields");
    ClickEvent c;
    try {
      c.attempt = std::stoull(f[0]);
      std::istringstream ts(f[2]);
      ts.imbue(std::locale::classic());
      double us;
      if (!(ts >> us)) throw std::invalid_argument("t_us");
      c.t = us * 1e-6;
    } catch (const std::exception &) {
      throw config_error("click file: line " + std::to_string(lineno) + " is malformed");
    }
    try {
      c.detector = static_cast<int>(t.index(f[1]));
    } catch (const domain_error &) {
      throw config_error("click file: line " + std::to_string(lineno) + " names unknown detector '" + f[1] + "'");
    }
    if (col_origin >= 0 && static_cast<int>(f.size()) > col_origin)
      c.origin = f[3] == "photon" ? click_origin::photon : f[3] == "background" ? click_origin::background : click_origin::unknown;
    out.push_back(c);
  }
  if (!header) throw config_error("click file: missing header");
  std::stable_sort(out.begin(), out.end(), [](const ClickEvent &a, const ClickEvent &b) { return a.attempt < b.attempt; });
  return out;
}

} // namespace ionnet
