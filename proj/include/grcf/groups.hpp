#pragma once

// Overlapping ordinal groups over the annotation range, the group distance
// between two scores, and the dynamic hinge margin derived from it.

#include <stdexcept>
#include <string>
#include <vector>

namespace grcf {

class GroupError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class GroupStrategy { Overlap3, Overlap5, Overlap7, Strict5 };

const char* to_string(GroupStrategy s);
GroupStrategy group_strategy_from_string(const std::string& name);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double s) const { return lo <= s && s <= hi; }
};

// Closed intervals over [-S, S]; index position is the group id.
struct GroupSpec {
  GroupStrategy strategy = GroupStrategy::Overlap5;
  double half_range = 3.0;  // S
  std::vector<Interval> intervals;

  static GroupSpec make(GroupStrategy strategy, double half_range);
};

struct MarginParams {
  double intra = 0.1;  // m_intra
  double base = 0.5;   // m_base, must be >= intra
  double step = 0.1;   // m_step per unit of group distance

  void validate() const;
};

// Every group whose closed interval contains s, ascending. s outside
// [-S, S] is an error; labels are pre-clamped by the loader.
std::vector<int> assign_groups(double s, const GroupSpec& spec);

// 0 when the two scores share any group, otherwise the largest index
// distance across their group sets.
int group_distance(double s_i, double s_j, const GroupSpec& spec);

double dynamic_margin(int delta_g, const MarginParams& mp);

}  // namespace grcf
