// eids: learn/detect on captures or simulated traffic, run the central
// logger, the scenario bench and interarrival statistics.
//
// Exit codes: 0 ok / no intrusion, 1 intrusion (detect) or bench mismatch,
// 2 bad input, configuration or parse failure.

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "eids/eids.hpp"

namespace {

using namespace eids;

constexpr int kExitIntrusion = 1;
constexpr int kExitBadInput = 2;

struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shared knobs. A --config file is applied first, then explicit flags.
struct Settings {
  EngineConfig engine;
  std::optional<std::uint64_t> seed;  // simulator default when unset
  std::uint16_t port = kDefaultAnnouncePort;
  double timeout_s = 20.0;
  double tick_ms = 10.0;
};

struct Flags {
  std::string config;
  double delta = 0, delta_arp = 0, alpha = 0, learning_s = 0, timeout_s = 0, tick_ms = 0;
  std::size_t window = 0;
  bool ips = false;
  std::uint64_t seed = 0;
  std::uint16_t port = 0;
  std::string psk_file;
  std::string local_ip;
};

struct FlagOpts {
  CLI::Option *delta = nullptr, *delta_arp = nullptr, *window = nullptr, *alpha = nullptr, *learning = nullptr,
              *ips = nullptr, *seed = nullptr, *port = nullptr, *timeout = nullptr, *tick = nullptr,
              *local_ip = nullptr;
};

Duration seconds_d(double s) {
  if (!(s > 0.0 && s < 1e9)) throw InputError("duration out of range");
  return Duration{static_cast<std::int64_t>(std::llround(s * 1e6))};
}

// key = value, '#' comments. Keys mirror the long flag names.
void apply_config_file(const std::string& path, Settings& s) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path);
  std::string raw;
  for (std::size_t n = 1; std::getline(in, raw); ++n) {
    if (auto h = raw.find('#'); h != std::string::npos) raw.erase(h);
    const auto eq = raw.find('=');
    auto trim = [](std::string v) {
      const auto b = v.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      return v.substr(b, v.find_last_not_of(" \t\r") - b + 1);
    };
    if (trim(raw).empty()) continue;
    if (eq == std::string::npos) throw InputError(path + ":" + std::to_string(n) + ": expected key = value");
    const std::string k = trim(raw.substr(0, eq)), v = trim(raw.substr(eq + 1));
    try {
      if (k == "delta")
        s.engine.delta_default = std::stod(v);
      else if (k == "delta-arp")
        s.engine.delta_arp = std::stod(v);
      else if (k == "window")
        s.engine.window_w = std::stoul(v);
      else if (k == "alpha")
        s.engine.alpha = std::stod(v);
      else if (k == "learning-duration")
        s.engine.learning_duration = seconds_d(std::stod(v));
      else if (k == "ips")
        s.engine.ips_mode = v == "1" || v == "true" || v == "yes";
      else if (k == "seed")
        s.seed = std::stoull(v);
      else if (k == "port")
        s.port = static_cast<std::uint16_t>(std::stoul(v));
      else if (k == "timeout")
        s.timeout_s = std::stod(v);
      else if (k == "tick-ms")
        s.tick_ms = std::stod(v);
      else if (k == "local-ip") {
        const auto ip = Ipv4Addr::parse(v);
        if (!ip) throw InputError("bad address");
        s.engine.local_ip = *ip;
      } else if (k == "psk")
        throw InputError("the PSK is read from --psk-file or EIDS_PSK only");
      else
        throw InputError("unknown key " + k);
    } catch (const InputError& e) {
      throw InputError(path + ":" + std::to_string(n) + ": " + e.what());
    } catch (const std::exception&) {
      throw InputError(path + ":" + std::to_string(n) + ": bad value for " + k);
    }
  }
}

void add_engine_flags(CLI::App* app, Flags& f, FlagOpts& o) {
  app->add_option("--config", f.config, "key = value settings file; flags override it");
  o.delta = app->add_option("--delta", f.delta, "timing tolerance (default 0.3)");
  o.delta_arp = app->add_option("--delta-arp", f.delta_arp, "timing tolerance for ARP flows (default 1.0)");
  o.window = app->add_option("--window", f.window, "mean window length in packets (default 16)");
  o.alpha = app->add_option("--alpha", f.alpha, "runtime mean adaptation rate (default 1/256)");
  o.learning = app->add_option("--learning-duration", f.learning_s, "learning phase in seconds (default 600)");
  o.ips = app->add_flag("--ips", f.ips, "drop offending frames instead of alerting");
  o.seed = app->add_option("--seed", f.seed, "simulation seed");
  o.tick = app->add_option("--tick-ms", f.tick_ms, "silence check granularity (default 10 ms)");
  o.local_ip = app->add_option("--local-ip", f.local_ip, "address of the protected node; unset = network sensor");
}

Settings resolve(const Flags& f, const FlagOpts& o) {
  Settings s;
  if (!f.config.empty()) apply_config_file(f.config, s);
  if (o.delta && o.delta->count()) s.engine.delta_default = f.delta;
  if (o.delta_arp && o.delta_arp->count()) s.engine.delta_arp = f.delta_arp;
  if (o.window && o.window->count()) s.engine.window_w = f.window;
  if (o.alpha && o.alpha->count()) s.engine.alpha = f.alpha;
  if (o.learning && o.learning->count()) s.engine.learning_duration = seconds_d(f.learning_s);
  if (o.ips && o.ips->count()) s.engine.ips_mode = f.ips;
  if (o.seed && o.seed->count()) s.seed = f.seed;
  if (o.port && o.port->count()) s.port = f.port;
  if (o.timeout && o.timeout->count()) s.timeout_s = f.timeout_s;
  if (o.tick && o.tick->count()) s.tick_ms = f.tick_ms;
  if (o.local_ip && o.local_ip->count()) {
    const auto ip = Ipv4Addr::parse(f.local_ip);
    if (!ip) throw InputError("bad --local-ip " + f.local_ip);
    s.engine.local_ip = *ip;
  }
  try {
    s.engine.validate();
  } catch (const std::invalid_argument& e) {
    throw InputError(e.what());
  }
  if (!(s.tick_ms > 0.0)) throw InputError("tick must be positive");
  if (!(s.timeout_s > 0.0)) throw InputError("timeout must be positive");
  return s;
}

std::optional<Bytes> load_psk(const std::string& psk_file) {
  std::string key;
  if (!psk_file.empty()) {
    std::ifstream in(psk_file, std::ios::binary);
    if (!in) throw InputError("cannot open PSK file " + psk_file);
    key.assign(std::istreambuf_iterator<char>(in), {});
    while (!key.empty() && (key.back() == '\n' || key.back() == '\r')) key.pop_back();
  } else if (const char* env = std::getenv("EIDS_PSK")) {
    key = env;
  } else {
    return std::nullopt;
  }
  if (key.empty()) throw InputError("empty PSK");
  return Bytes(key.begin(), key.end());
}

// ----- traffic input --------------------------------------------------------

struct Frame {
  TimePoint at{};
  Bytes bytes;
  Direction dir = Direction::Rx;
};

struct InputSpec {
  std::string pcap;
  std::string sim;  // config path, or "default"
  std::string node;
  double duration_s = 0;
  std::vector<std::string> scenarios;
};

void add_input_flags(CLI::App* app, InputSpec& in) {
  auto* p = app->add_option("--pcap", in.pcap, "classic pcap capture");
  auto* s = app->add_option("--sim", in.sim, "simulator config file, or 'default'");
  p->excludes(s);
  app->add_option("--node", in.node, "view of one simulated device (sets --local-ip)");
  app->add_option("--duration", in.duration_s, "simulated seconds (overrides the config)");
  app->add_option("--scenario", in.scenarios, "extra scenario line, e.g. 'dos_flood start_s=660 target=S1'");
}

sim::SimSpec load_spec(const InputSpec& in, const Settings& s) {
  sim::SimSpec spec;
  if (in.sim != "default") spec = sim::load_sim_config(in.sim);
  if (s.seed) spec.seed = *s.seed;
  if (in.duration_s != 0) spec.duration = seconds_d(in.duration_s);
  for (const auto& line : in.scenarios) spec.scenarios.push_back(sim::parse_sim_config("scenario = " + line).scenarios.at(0));
  return spec;
}

Direction infer_direction(const Bytes& b, Ipv4Addr local) {
  if (local.is_unspecified()) return Direction::Rx;
  try {
    const PacketMeta m = parse_frame(b, {}, Direction::Rx);
    if (m.arp && m.arp->sender_ip == local) return Direction::Tx;
    if (m.l3 && m.l3->src_ip == local) return Direction::Tx;
  } catch (const ParseError&) {
  }
  return Direction::Rx;
}

std::vector<Frame> load_frames(const InputSpec& in, Settings& s) {
  std::vector<Frame> out;
  if (!in.pcap.empty()) {
    std::ifstream f(in.pcap, std::ios::binary);
    if (!f) throw InputError("cannot open " + in.pcap);
    for (auto& r : read_pcap(f)) {
      const Direction d = infer_direction(r.data, s.engine.local_ip);
      out.push_back({r.timestamp, std::move(r.data), d});
    }
    return out;
  }
  if (in.sim.empty()) throw InputError("need --pcap or --sim");
  const sim::SimSpec spec = load_spec(in, s);
  std::optional<std::size_t> node;
  if (!in.node.empty()) {
    node = spec.topology.index_of(in.node);
    if (!node) throw InputError("unknown node " + in.node);
    s.engine.local_ip = spec.topology.devices[*node].ip;
    s.engine.node_id = spec.topology.devices[*node].node_id;
  }
  sim::Simulator simulator(spec.topology, spec.profile, spec.scenarios, spec.duration, spec.seed);
  simulator.run([&](const sim::SimFrame& f) {
    if (node && !f.involves(*node)) return;
    const Direction d = node ? (f.sender == *node ? Direction::Tx : Direction::Rx) : Direction::Rx;
    out.push_back({f.at, f.bytes, d});
  });
  return out;
}

std::vector<TimedFrame> views(const std::vector<Frame>& frames) {
  std::vector<TimedFrame> v;
  v.reserve(frames.size());
  for (const auto& f : frames) v.push_back({f.at, f.bytes});
  return v;
}

void write_file(const std::string& path, const std::string& data) {
  if (path.empty() || path == "-") {
    std::cout << data;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  out << data;
  if (!out) throw InputError("cannot write " + path);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), {}};
}

// ----- subcommands ------------------------------------------------------------

int cmd_learn(const Flags& f, const FlagOpts& o, const InputSpec& in, const std::string& out_path) {
  Settings s = resolve(f, o);
  const auto frames = load_frames(in, s);
  if (frames.empty()) throw InputError("no frames to learn from");
  EngineConfig cfg = s.engine;
  cfg.start = frames.front().at;
  Engine engine(cfg);
  for (const auto& fr : frames) engine.ingest(fr.dir, fr.bytes, fr.at);
  write_file(out_path, engine.export_model());
  std::cerr << "learned " << engine.flows().flow_count() << " flows, " << engine.timing().size() << " timing legs ("
            << engine.timing().ready_count() << " with baselines)\n";
  if (auto d = suggest_learning_duration(views(frames)))
    std::cerr << "suggested learning duration: " << d->count() / 1'000'000 << " s (2x longest ARP request gap)\n";
  else
    std::cerr << "suggested learning duration: unknown (no repeated ARP request)\n";
  return 0;
}

int cmd_detect(const Flags& f, const FlagOpts& o, const InputSpec& in, const std::string& model_path,
               CLI::Option* learn_first_opt, double learn_first_s) {
  Settings s = resolve(f, o);
  const auto frames = load_frames(in, s);
  if (frames.empty()) throw InputError("no frames");
  EngineConfig cfg = s.engine;
  cfg.start = frames.front().at;
  if (learn_first_opt->count()) cfg.learning_duration = seconds_d(learn_first_s);
  Engine engine(cfg);
  if (!model_path.empty()) engine.import_model(read_file(model_path));

  const Duration tick{static_cast<std::int64_t>(s.tick_ms * 1000.0)};
  TimePoint next_tick = frames.front().at;
  std::uint64_t events = 0, drops = 0;
  auto emit = [&](const std::vector<IntrusionEvent>& ev) {
    for (const auto& e : ev) std::cout << format_event_line(e, cfg.node_id) << '\n';
    events += ev.size();
  };
  for (const auto& fr : frames) {
    while (next_tick <= fr.at) {
      emit(engine.tick(next_tick));
      next_tick += tick;
    }
    const IngestResult r = engine.ingest(fr.dir, fr.bytes, fr.at);
    drops += r.verdict == Verdict::Drop;
    emit(r.events);
  }
  std::cout.flush();
  std::cerr << frames.size() << " frames, " << events << " events";
  if (cfg.ips_mode) std::cerr << ", " << drops << " dropped";
  std::cerr << '\n';
  return events == 0 ? 0 : kExitIntrusion;
}

int cmd_simulate(const Flags& f, const FlagOpts& o, const InputSpec& in, const std::string& out_path) {
  Settings s = resolve(f, o);
  if (in.sim.empty()) throw InputError("simulate needs --sim FILE or --sim default");
  sim::SimSpec spec = load_spec(in, s);
  if (auto psk = load_psk(f.psk_file)) spec.profile.psk = *psk;
  sim::Simulator simulator(spec.topology, spec.profile, spec.scenarios, spec.duration, spec.seed);
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw InputError("cannot write " + out_path);
  PcapWriter w(out);
  std::uint64_t n = 0;
  simulator.run([&](const sim::SimFrame& fr) {
    w.write(fr.at, fr.bytes);
    ++n;
  });
  out.close();
  if (!out) throw InputError("cannot write " + out_path);
  std::cerr << n << " frames over " << spec.duration.count() / 1'000'000 << " s written to " << out_path << '\n';
  return 0;
}

int cmd_stats(const Flags& f, const FlagOpts& o, const InputSpec& in, const std::string& filter_expr, bool per_leg,
              const std::string& out_path) {
  Settings s = resolve(f, o);
  FlowFilter filter;
  try {
    filter = FlowFilter::parse(filter_expr);
  } catch (const std::invalid_argument& e) {
    throw InputError(e.what());
  }
  const auto frames = load_frames(in, s);
  const auto rows = interarrivals(views(frames), filter, per_leg);
  std::ostringstream csv;
  write_stats_csv(csv, rows);
  write_file(out_path, csv.str());
  for (const auto& sum : summarize(rows))
    std::cerr << sum.flow << ": n=" << sum.count << " mean=" << sum.mean_us / 1000.0 << "ms min=" << sum.min_us / 1000.0
              << "ms max=" << sum.max_us / 1000.0 << "ms\n";
  return 0;
}

int cmd_bench(const Flags& f, const FlagOpts& o, double active_s) {
  Settings s = resolve(f, o);
  BenchSettings b;
  b.engine = s.engine;
  b.seed = s.seed.value_or(1);
  b.active = seconds_d(active_s);
  if (auto psk = load_psk(f.psk_file)) b.profile.psk = *psk;
  const auto t0 = std::chrono::steady_clock::now();
  const auto rows = run_bench(b, default_bench_cases(b));
  std::cout << render_bench(rows);
  const bool ok = std::all_of(rows.begin(), rows.end(), [](const BenchRow& r) { return r.matches(); });
  std::cerr << "matrix " << (ok ? "matches" : "DOES NOT match") << " the expected table ("
            << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s)\n";
  return ok ? 0 : kExitIntrusion;
}

volatile std::sig_atomic_t g_stop = 0;
volatile std::sig_atomic_t g_dump = 0;

int cmd_logger(const Flags& f, const FlagOpts& o, const std::vector<std::uint16_t>& expect,
               const std::string& log_path, double refresh_s, double run_for_s, const std::string& bind_addr) {
  Settings s = resolve(f, o);
  const auto psk = load_psk(f.psk_file);
  if (!psk) throw InputError("logger needs --psk-file or EIDS_PSK");
  CentralLogger logger(LoggerConfig{*psk, seconds_d(s.timeout_s)});
  for (auto id : expect) logger.expect(id);

  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path, std::ios::app);
    if (!log) throw InputError("cannot open " + log_path);
  }

  const int fd = ::socket(AF_INET, SOCK_DGRAM, 0);
  if (fd < 0) throw InputError("socket failed");
  const int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  ::setsockopt(fd, SOL_SOCKET, SO_BROADCAST, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(s.port);
  if (::inet_pton(AF_INET, bind_addr.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    throw InputError("bad --bind address " + bind_addr);
  }
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    ::close(fd);
    throw InputError("cannot bind UDP port " + std::to_string(s.port));
  }

  std::signal(SIGINT, [](int) { g_stop = 1; });
  std::signal(SIGTERM, [](int) { g_stop = 1; });
  std::signal(SIGUSR1, [](int) { g_dump = 1; });

  auto now = [] { return std::chrono::time_point_cast<Duration>(std::chrono::system_clock::now()); };
  const TimePoint started = now();
  TimePoint next_refresh = started + seconds_d(refresh_s);
  auto render = [&] {
    std::cout << logger.render_status() << std::flush;
  };
  auto record = [&](const NodeTransition& t) {
    if (log) log << format_transition(t) << '\n' << std::flush;
  };
  std::cerr << "listening on " << bind_addr << ':' << s.port << '\n';
  render();

  std::uint8_t buf[2048];
  while (!g_stop) {
    pollfd p{fd, POLLIN, 0};
    const int ready = ::poll(&p, 1, 100);
    bool changed = false;
    if (ready > 0 && (p.revents & POLLIN)) {
      const ssize_t n = ::recv(fd, buf, sizeof buf, 0);
      if (n >= 0) {
        if (auto t = logger.on_datagram(ByteView(buf, static_cast<std::size_t>(n)), now())) {
          record(*t);
          changed = true;
        }
      }
    }
    for (const auto& t : logger.sweep(now())) {
      record(t);
      changed = true;
    }
    const TimePoint t = now();
    if (changed || g_dump || t >= next_refresh) {
      render();
      g_dump = 0;
      next_refresh = t + seconds_d(refresh_s);
    }
    if (run_for_s > 0 && t - started >= seconds_d(run_for_s)) break;
  }
  ::close(fd);
  const auto& c = logger.counters();
  std::cerr << "accepted " << c.accepted << ", rejected " << c.rejected_total() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"edge-node intrusion detection for polling ICS networks"};
  app.require_subcommand(1);

  Flags flags;
  InputSpec input;
  std::string out_path, model_path, filter_expr, log_path, bind_addr = "0.0.0.0";
  double learn_first_s = 0, refresh_s = 10, run_for_s = 0, active_s = 300;
  bool per_leg = false;
  std::vector<std::uint16_t> expect;

  auto common = [&](CLI::App* sub, FlagOpts& o) {
    add_engine_flags(sub, flags, o);
    sub->add_option("--psk-file", flags.psk_file, "file holding the keep-alive PSK (else EIDS_PSK)");
  };

  FlagOpts o_learn, o_detect, o_sim, o_stats, o_bench, o_logger;
  auto* learn = app.add_subcommand("learn", "build a model from traffic");
  common(learn, o_learn);
  add_input_flags(learn, input);
  learn->add_option("-o,--out", out_path, "model file (default stdout)");

  auto* detect = app.add_subcommand("detect", "check traffic against a model");
  common(detect, o_detect);
  add_input_flags(detect, input);
  auto* model_opt = detect->add_option("--model", model_path, "model from 'learn'");
  auto* lf_opt = detect->add_option("--learn-first", learn_first_s, "learn on the first N seconds of the input");
  model_opt->excludes(lf_opt);

  auto* simulate = app.add_subcommand("simulate", "write a simulated testbed capture");
  common(simulate, o_sim);
  add_input_flags(simulate, input);
  simulate->add_option("-o,--out", out_path, "pcap output")->required();

  auto* stats = app.add_subcommand("stats", "interarrival CSV");
  common(stats, o_stats);
  add_input_flags(stats, input);
  stats->add_option("--filter", filter_expr, "e.g. 'tcp port 502', 'arp request host 192.168.1.101'");
  stats->add_flag("--per-leg", per_leg, "split each flow by direction");
  stats->add_option("-o,--out", out_path, "CSV output (default stdout)");

  auto* bench = app.add_subcommand("bench", "run the attack scenario matrix");
  common(bench, o_bench);
  bench->add_option("--active", active_s, "seconds simulated after learning (default 300)");

  auto* logger = app.add_subcommand("logger", "central collector for status broadcasts");
  common(logger, o_logger);
  o_logger.port = logger->add_option("--port", flags.port, "UDP port (default 47808)");
  o_logger.timeout = logger->add_option("--timeout", flags.timeout_s, "seconds of silence before Down (default 20)");
  logger->add_option("--expect", expect, "node ids shown as down until first heard");
  logger->add_option("--log", log_path, "append transitions to this file");
  logger->add_option("--refresh", refresh_s, "status refresh period in seconds");
  logger->add_option("--run-for", run_for_s, "exit after N seconds (0 = until signalled)");
  logger->add_option("--bind", bind_addr, "listen address");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitBadInput;
  }

  try {
    if (*learn) return cmd_learn(flags, o_learn, input, out_path);
    if (*detect) {
      if (model_path.empty() && !lf_opt->count()) throw InputError("detect needs --model or --learn-first");
      return cmd_detect(flags, o_detect, input, model_path, lf_opt, learn_first_s);
    }
    if (*simulate) return cmd_simulate(flags, o_sim, input, out_path);
    if (*stats) return cmd_stats(flags, o_stats, input, filter_expr, per_leg, out_path);
    if (*bench) return cmd_bench(flags, o_bench, active_s);
    if (*logger) return cmd_logger(flags, o_logger, expect, log_path, refresh_s, run_for_s, bind_addr);
  } catch (const InputError& e) {
    std::cerr << "eids: " << e.what() << '\n';
  } catch (const PcapError& e) {
    std::cerr << "eids: pcap: " << e.what() << '\n';
  } catch (const ModelError& e) {
    std::cerr << "eids: model: " << e.what() << '\n';
  } catch (const sim::SimError& e) {
    std::cerr << "eids: sim: " << e.what() << '\n';
  }
  return kExitBadInput;
}
