#pragma once

// Interarrival-time envelopes per flow leg.
//
// Learning records min, max and mean of the interarrival times. Active mode
// applies two bands, each widened by the tolerance delta:
//
//   min * (1 - delta) < t_current < max * (1 + delta)        (per packet)
//   mean * (1 - delta) < window mean < mean * (1 + delta)    (last W packets)
//
// Boundary-equal values are intrusive. The lower factor clamps at zero so
// delta >= 1 disables the too-fast test.

#include <cmath>
#include <deque>
#include <map>
#include <optional>

#include "eids/flow_table.hpp"

namespace eids {

enum class TimingVerdict : std::uint8_t { Ok, TooFast, TooSlow, MeanDrift };

inline std::string_view to_string(TimingVerdict v) {
  switch (v) {
    case TimingVerdict::Ok: return "Ok";
    case TimingVerdict::TooFast: return "TooFast";
    case TimingVerdict::TooSlow: return "TooSlow";
    case TimingVerdict::MeanDrift: return "MeanDrift";
  }
  return "?";
}

enum class TimingErrorKind { NonPositiveInterarrival, BaselineNotReady };

class TimingError : public std::runtime_error {
 public:
  TimingError(TimingErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  TimingErrorKind kind() const noexcept { return kind_; }

 private:
  TimingErrorKind kind_;
};

inline constexpr Duration kMinInterarrival{1};

struct FlowBaseline {
  double learned_mean_us = 0.0;
  Duration learned_min{Duration::max()};
  Duration learned_max{Duration::zero()};
  std::int64_t learned_sum_us = 0;
  std::uint64_t n_l = 0;
  double delta = 0.3;
  std::optional<TimePoint> last_arrival;

  bool ready() const { return n_l >= 2; }

  double lower_factor() const { return std::max(0.0, 1.0 - delta); }
  double upper_factor() const { return 1.0 + delta; }
  double too_fast_bound_us() const { return static_cast<double>(learned_min.count()) * lower_factor(); }
  double too_slow_bound_us() const { return static_cast<double>(learned_max.count()) * upper_factor(); }
  Duration silence_bound() const { return Duration{static_cast<std::int64_t>(std::ceil(too_slow_bound_us()))}; }

  friend bool operator==(const FlowBaseline&, const FlowBaseline&) = default;
};

/// Bounded FIFO of recent interarrivals with an exact integer running sum.
class ActiveWindow {
 public:
  explicit ActiveWindow(std::size_t capacity = 16) : capacity_(capacity == 0 ? 1 : capacity) {}

  void push(Duration t) {
    if (samples_.size() == capacity_) {
      running_sum_ -= samples_.front();
      samples_.pop_front();
    }
    samples_.push_back(t.count());
    running_sum_ += t.count();
  }

  double mean_us() const {
    return samples_.empty() ? 0.0 : static_cast<double>(running_sum_) / static_cast<double>(samples_.size());
  }
  std::size_t size() const { return samples_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::int64_t running_sum_us() const { return running_sum_; }
  const std::deque<std::int64_t>& samples() const { return samples_; }
  void clear() {
    samples_.clear();
    running_sum_ = 0;
  }

 private:
  std::size_t capacity_;
  std::deque<std::int64_t> samples_;
  std::int64_t running_sum_ = 0;
};

inline void record_learning_sample(FlowBaseline& b, Duration t_l) {
  if (t_l <= Duration::zero())
    throw TimingError(TimingErrorKind::NonPositiveInterarrival,
                      "interarrival " + std::to_string(t_l.count()) + "us is not positive");
  b.learned_min = std::min(b.learned_min, t_l);
  b.learned_max = std::max(b.learned_max, t_l);
  b.learned_sum_us += t_l.count();
  ++b.n_l;
  b.learned_mean_us = static_cast<double>(b.learned_sum_us) / static_cast<double>(b.n_l);
}

/// Per-packet band first; only samples inside it enter the window.
inline TimingVerdict check_packet(const FlowBaseline& b, ActiveWindow& window, Duration t_current) {
  if (!b.ready())
    throw TimingError(TimingErrorKind::BaselineNotReady, "baseline has " + std::to_string(b.n_l) + " samples");
  const double t = static_cast<double>(t_current.count());
  if (t <= b.too_fast_bound_us()) return TimingVerdict::TooFast;
  if (t >= b.too_slow_bound_us()) return TimingVerdict::TooSlow;
  window.push(t_current);
  const double m = window.mean_us();
  if (m <= b.learned_mean_us * b.lower_factor() || m >= b.learned_mean_us * b.upper_factor())
    return TimingVerdict::MeanDrift;
  return TimingVerdict::Ok;
}

/// Exponential drift of the reference mean; min and max stay frozen.
inline void update_runtime_baseline(FlowBaseline& b, Duration t, double alpha) {
  b.learned_mean_us = (1.0 - alpha) * b.learned_mean_us + alpha * static_cast<double>(t.count());
}

inline std::optional<TimingVerdict> absence_check(const FlowBaseline& b, TimePoint now) {
  if (!b.ready() || !b.last_arrival) return std::nullopt;
  const double silence = static_cast<double>((now - *b.last_arrival).count());
  if (silence >= b.too_slow_bound_us()) return TimingVerdict::TooSlow;
  return std::nullopt;
}

struct TimingConfig {
  double delta_default = 0.3;
  double delta_arp = 1.0;
  std::size_t window_w = 16;
  double alpha = 1.0 / 256.0;

  double delta_for(FlowKind k) const { return k == FlowKind::Arp ? delta_arp : delta_default; }
};

struct LegKey {
  FlowKey flow;
  Leg leg = Leg::Forward;
  friend constexpr auto operator<=>(const LegKey&, const LegKey&) = default;
};

struct LegState {
  FlowBaseline baseline;
  ActiveWindow window;
  bool silence_reported = false;
  bool primed = true;  // false while last_arrival is only an arm time
};

struct SilentLeg {
  LegKey key;
  Duration silence{};
  Duration bound{};
};

/// Owns the baselines of one detection context.
class TimingDetector {
 public:
  explicit TimingDetector(TimingConfig cfg = {}) : cfg_(cfg) {}

  const TimingConfig& config() const { return cfg_; }

  void learn(const LegKey& k, TimePoint at) {
    LegState& s = legs_.try_emplace(k, LegState{{}, ActiveWindow(cfg_.window_w), false, true}).first->second;
    s.baseline.delta = cfg_.delta_for(k.flow.kind);
    if (s.baseline.last_arrival) {
      if (at < *s.baseline.last_arrival) return;  // out-of-order capture
      record_learning_sample(s.baseline, std::max(at - *s.baseline.last_arrival, kMinInterarrival));
    }
    s.baseline.last_arrival = at;
  }

  /// Classifies the packet against its leg baseline; nullopt when the leg
  /// has no usable baseline.
  std::optional<TimingVerdict> check(const LegKey& k, TimePoint at) {
    auto it = legs_.find(k);
    if (it == legs_.end() || !it->second.baseline.ready()) return std::nullopt;
    LegState& s = it->second;
    FlowBaseline& b = s.baseline;
    // A silent or unarmed leg gets an earlier deadline than the cached one.
    if (s.silence_reported || !b.last_arrival) next_deadline_.reset();
    s.silence_reported = false;
    if (!b.last_arrival) {
      b.last_arrival = at;
      return std::nullopt;
    }
    if (at < *b.last_arrival) return std::nullopt;
    if (!s.primed) {
      // The arm time only bounds silence; it is not an arrival.
      s.primed = true;
      b.last_arrival = at;
      return std::nullopt;
    }
    const Duration t = std::max(at - *b.last_arrival, kMinInterarrival);
    b.last_arrival = at;
    const TimingVerdict v = check_packet(b, s.window, t);
    if (v == TimingVerdict::Ok) update_runtime_baseline(b, t, cfg_.alpha);
    return v;
  }

  /// Legs silent past their upper band. Each silence is reported once.
  std::vector<SilentLeg> absence(TimePoint now) {
    std::vector<SilentLeg> out;
    if (next_deadline_ && now < *next_deadline_) return out;
    std::optional<TimePoint> earliest;
    for (auto& [k, s] : legs_) {
      const FlowBaseline& b = s.baseline;
      if (!b.ready() || !b.last_arrival) continue;
      if (s.silence_reported) continue;
      if (absence_check(b, now)) {
        s.silence_reported = true;
        out.push_back({k, now - *b.last_arrival, b.silence_bound()});
        continue;
      }
      const TimePoint deadline = *b.last_arrival + b.silence_bound();
      if (!earliest || deadline < *earliest) earliest = deadline;
    }
    // Arrivals only push deadlines later, so the cached minimum stays a lower bound.
    next_deadline_ = earliest ? *earliest : TimePoint::max();
    return out;
  }

  /// Arms legs whose last arrival is unknown (fresh import) at `at`.
  void arm(TimePoint at) {
    for (auto& [k, s] : legs_)
      if (s.baseline.ready() && !s.baseline.last_arrival) {
        s.baseline.last_arrival = at;
        s.primed = false;
      }
    next_deadline_.reset();
  }

  const LegState* find(const LegKey& k) const {
    auto it = legs_.find(k);
    return it == legs_.end() ? nullptr : &it->second;
  }
  std::size_t size() const { return legs_.size(); }
  std::size_t ready_count() const {
    std::size_t n = 0;
    for (const auto& [k, s] : legs_) n += s.baseline.ready();
    return n;
  }
  const std::map<LegKey, LegState>& legs() const { return legs_; }

  void append_model_lines(std::string& out) const {
    for (const auto& [k, s] : legs_) {
      const FlowBaseline& b = s.baseline;
      if (b.n_l == 0) continue;
      out += "TIMING\t" + model_key_fields(k.flow) + '\t' + std::string(to_string(k.leg)) + '\t' +
             std::to_string(std::llround(b.learned_mean_us)) + '\t' + std::to_string(b.learned_min.count()) + '\t' +
             std::to_string(b.learned_max.count()) + '\t' + std::to_string(b.n_l) + '\t' +
             std::to_string(std::llround(b.delta * 1000.0)) + '\n';
    }
  }

  bool import_model_line(std::string_view line, const std::vector<std::string_view>& f) {
    if (f[0] != "TIMING") return false;
    if (f.size() != 12) malformed(line, "TIMING expects 11 fields");
    LegKey k{parse_model_key(line, f, 1), Leg::Forward};
    if (f[6] == "rev")
      k.leg = Leg::Reverse;
    else if (f[6] != "fwd")
      malformed(line, "bad leg");
    FlowBaseline b;
    const auto mean = parse_model_int<std::int64_t>(f[7], line);
    b.learned_min = Duration{parse_model_int<std::int64_t>(f[8], line)};
    b.learned_max = Duration{parse_model_int<std::int64_t>(f[9], line)};
    b.n_l = parse_model_int<std::uint64_t>(f[10], line);
    b.delta = static_cast<double>(parse_model_int<std::int64_t>(f[11], line)) / 1000.0;
    if (b.n_l == 0 || b.learned_min <= Duration::zero() || b.learned_min > b.learned_max || mean < b.learned_min.count() ||
        mean > b.learned_max.count() || b.delta < 0.0)
      malformed(line, "inconsistent baseline");
    b.learned_mean_us = static_cast<double>(mean);
    b.learned_sum_us = mean * static_cast<std::int64_t>(b.n_l);
    legs_.insert_or_assign(k, LegState{b, ActiveWindow(cfg_.window_w), false, true});
    next_deadline_.reset();
    return true;
  }

  void clear() {
    legs_.clear();
    next_deadline_.reset();
  }

 private:
  TimingConfig cfg_;
  std::map<LegKey, LegState> legs_;
  std::optional<TimePoint> next_deadline_;
};

}  // namespace eids
