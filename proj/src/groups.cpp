#include "grcf/groups.hpp"

#include <algorithm>
#include <cmath>

namespace grcf {

const char* to_string(GroupStrategy s) {
  switch (s) {
    case GroupStrategy::Overlap3: return "overlap-3";
    case GroupStrategy::Overlap5: return "overlap-5";
    case GroupStrategy::Overlap7: return "overlap-7";
    case GroupStrategy::Strict5: return "strict-5";
  }
  return "overlap-5";
}

GroupStrategy group_strategy_from_string(const std::string& name) {
  if (name == "overlap-3") return GroupStrategy::Overlap3;
  if (name == "overlap-5") return GroupStrategy::Overlap5;
  if (name == "overlap-7") return GroupStrategy::Overlap7;
  if (name == "strict-5") return GroupStrategy::Strict5;
  throw GroupError("unknown group strategy: " + name);
}

namespace {

// equal strict bins over [-S, S]; interior bins widened by a quarter of the
// bin width on each side
std::vector<Interval> overlapping_bins(int k, double s) {
  const double w = 2.0 * s / k;
  const double pad = 0.25 * w;
  std::vector<Interval> out;
  out.reserve(k);
  for (int i = 0; i < k; ++i) {
    double lo = -s + i * w;
    double hi = lo + w;
    if (i > 0) lo -= pad;
    if (i + 1 < k) hi += pad;
    out.push_back({lo, hi});
  }
  out.front().lo = -s;
  out.back().hi = s;
  return out;
}

}  // namespace

GroupSpec GroupSpec::make(GroupStrategy strategy, double half_range) {
  if (half_range <= 0.0) throw GroupError("GroupSpec: half_range must be positive");
  GroupSpec spec;
  spec.strategy = strategy;
  spec.half_range = half_range;
  const double u = half_range / 3.0;  // the built-in interval tables assume S = 3
  switch (strategy) {
    case GroupStrategy::Overlap3:
      spec.intervals = overlapping_bins(3, half_range);
      break;
    case GroupStrategy::Overlap5:
      spec.intervals = {{-3.0 * u, -1.5 * u},
                        {-2.0 * u, 0.0},
                        {-0.5 * u, 0.5 * u},
                        {0.0, 2.0 * u},
                        {1.5 * u, 3.0 * u}};
      break;
    case GroupStrategy::Overlap7:
      spec.intervals = overlapping_bins(7, half_range);
      break;
    case GroupStrategy::Strict5:
      spec.intervals = {{-3.0 * u, -1.8 * u},
                        {-1.8 * u, -0.6 * u},
                        {-0.6 * u, 0.6 * u},
                        {0.6 * u, 1.8 * u},
                        {1.8 * u, 3.0 * u}};
      break;
  }
  return spec;
}

void MarginParams::validate() const {
  if (intra < 0.0 || base < 0.0 || step < 0.0) {
    throw GroupError("MarginParams: margins must be non-negative");
  }
  if (base < intra) {
    throw GroupError("MarginParams: base margin must be at least the intra-group margin");
  }
}

std::vector<int> assign_groups(double s, const GroupSpec& spec) {
  if (!std::isfinite(s) || s < -spec.half_range || s > spec.half_range) {
    throw GroupError("assign_groups: score " + std::to_string(s) + " outside [-" +
                     std::to_string(spec.half_range) + ", " + std::to_string(spec.half_range) +
                     "]");
  }
  std::vector<int> out;
  for (std::size_t i = 0; i < spec.intervals.size(); ++i) {
    if (spec.intervals[i].contains(s)) out.push_back(static_cast<int>(i));
  }
  if (out.empty()) throw GroupError("assign_groups: intervals do not cover the score");
  return out;
}

int group_distance(double s_i, double s_j, const GroupSpec& spec) {
  const std::vector<int> gi = assign_groups(s_i, spec);
  const std::vector<int> gj = assign_groups(s_j, spec);
  int max_gap = 0;
  bool shared = false;
  for (int a : gi) {
    for (int b : gj) {
      if (a == b) shared = true;
      max_gap = std::max(max_gap, std::abs(a - b));
    }
  }
  return shared ? 0 : max_gap;
}

double dynamic_margin(int delta_g, const MarginParams& mp) {
  if (delta_g < 0) throw GroupError("dynamic_margin: negative group distance");
  if (delta_g == 0) return mp.intra;
  return mp.base + static_cast<double>(delta_g) * mp.step;
}

}  // namespace grcf
