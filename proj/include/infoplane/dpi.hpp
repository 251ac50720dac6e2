#pragma once

// Data-processing-inequality checks along the hidden-layer sequence.

#include "infoplane/mi.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace infoplane {

inline constexpr double kDefaultDpiTolerance = 0.02;

enum class PlaneAxis { kXZ, kZY };

inline PlaneAxis parse_axis(std::string_view s) {
  if (s == "xz") return PlaneAxis::kXZ;
  if (s == "zy") return PlaneAxis::kZY;
  throw std::invalid_argument("unknown axis: " + std::string(s));
}

inline Bound parse_bound(std::string_view s) {
  if (s == "upper") return Bound::kUpper;
  if (s == "lower") return Bound::kLower;
  throw std::invalid_argument("unknown bound: " + std::string(s));
}

inline std::string to_string(PlaneAxis a) { return a == PlaneAxis::kXZ ? "xz" : "zy"; }
inline std::string to_string(Bound b) { return b == Bound::kUpper ? "upper" : "lower"; }

// Violation between layer numbers `from` -> `to` (1-based, to = from + 1).
struct DpiViolation {
  std::int64_t from = 0;
  std::int64_t to = 0;
  double gap = 0.0;
};

struct DpiVerdict {
  bool holds = true;
  std::vector<DpiViolation> violations;
};

// holds iff values[k+1] <= values[k] + tolerance for every adjacent pair.
inline DpiVerdict dpi_check(const std::vector<double>& values, double tolerance) {
  if (values.size() < 2) throw std::invalid_argument("dpi_check: need at least 2 layers");
  if (!(tolerance >= 0.0)) throw std::invalid_argument("dpi_check: tolerance must be >= 0");
  DpiVerdict v;
  for (std::size_t k = 0; k + 1 < values.size(); ++k) {
    const double gap = values[k + 1] - values[k];
    if (gap > tolerance) v.violations.push_back({std::int64_t(k) + 1, std::int64_t(k) + 2, gap});
  }
  v.holds = v.violations.empty();
  return v;
}

struct DpiEpoch {
  std::uint32_t epoch = 0;
  std::vector<double> values;
  DpiVerdict verdict;
};

struct DpiReport {
  PlaneAxis axis = PlaneAxis::kXZ;
  Bound bound = Bound::kUpper;
  double tolerance = kDefaultDpiTolerance;
  std::vector<DpiEpoch> epochs;
  double fraction_holding = 1.0;
  double max_gap = 0.0;  // largest adjacent increase over all epochs (may be <= 0)

  bool all_hold() const {
    return std::all_of(epochs.begin(), epochs.end(), [](const DpiEpoch& e) { return e.verdict.holds; });
  }
};

inline double plane_value(const MiEstimate& e, PlaneAxis axis, Bound bound) {
  if (axis == PlaneAxis::kXZ) return bound == Bound::kUpper ? e.i_xz_upper : e.i_xz_lower;
  return bound == Bound::kUpper ? e.i_zy_upper : e.i_zy_lower;
}

inline DpiReport dpi_report(const std::vector<MiEstimate>& plane, PlaneAxis axis, Bound bound,
                            double tolerance = kDefaultDpiTolerance) {
  std::map<std::uint32_t, std::map<std::uint16_t, double>> grid;
  for (const auto& e : plane) {
    if (!grid[e.epoch].emplace(e.layer_index, plane_value(e, axis, bound)).second)
      throw std::invalid_argument("ragged plane: duplicate layer " + std::to_string(e.layer_index + 1) +
                                  " in epoch " + std::to_string(e.epoch));
  }
  if (grid.empty()) throw std::invalid_argument("empty plane");
  const auto layers = grid.begin()->second.size();
  DpiReport r;
  r.axis = axis;
  r.bound = bound;
  r.tolerance = tolerance;
  r.max_gap = -std::numeric_limits<double>::infinity();
  std::size_t holding = 0;
  for (const auto& [epoch, by_layer] : grid) {
    if (by_layer.size() != layers || by_layer.rbegin()->first + 1u != layers)
      throw std::invalid_argument("ragged plane at epoch " + std::to_string(epoch));
    DpiEpoch de;
    de.epoch = epoch;
    for (const auto& [layer, v] : by_layer) de.values.push_back(v);
    de.verdict = dpi_check(de.values, tolerance);
    for (std::size_t k = 0; k + 1 < de.values.size(); ++k) r.max_gap = std::max(r.max_gap, de.values[k + 1] - de.values[k]);
    holding += de.verdict.holds;
    r.epochs.push_back(std::move(de));
  }
  r.fraction_holding = double(holding) / double(r.epochs.size());
  return r;
}

inline nlohmann::ordered_json dpi_report_json(const DpiReport& r) {
  nlohmann::ordered_json j;
  j["axis"] = to_string(r.axis);
  j["bound"] = to_string(r.bound);
  j["tolerance"] = r.tolerance;
  j["epochs"] = r.epochs.size();
  j["fraction_holding"] = r.fraction_holding;
  j["max_gap"] = r.max_gap;
  auto& list = j["violations"] = nlohmann::ordered_json::array();
  for (const auto& e : r.epochs)
    for (const auto& v : e.verdict.violations)
      list.push_back({{"epoch", e.epoch}, {"from_layer", v.from}, {"to_layer", v.to}, {"gap", v.gap}});
  return j;
}

inline void print_dpi_table(std::ostream& out, const DpiReport& r) {
  std::ostringstream s;
  s << "DPI check: axis=" << to_string(r.axis) << " bound=" << to_string(r.bound) << " tolerance=" << r.tolerance
    << "\n";
  s << std::setw(7) << "epoch";
  for (std::size_t l = 0; l < r.epochs.front().values.size(); ++l) s << std::setw(12) << ("layer" + std::to_string(l + 1));
  s << "  verdict\n";
  s << std::fixed << std::setprecision(5);
  for (const auto& e : r.epochs) {
    s << std::setw(7) << e.epoch;
    for (double v : e.values) s << std::setw(12) << v;
    if (e.verdict.holds) {
      s << "  holds";
    } else {
      s << "  violated";
      for (const auto& v : e.verdict.violations) s << " (" << v.from << "->" << v.to << " +" << v.gap << ")";
    }
    s << '\n';
  }
  s << "epochs holding: " << std::setprecision(3) << r.fraction_holding * 100.0 << "%, max gap "
    << std::setprecision(5) << r.max_gap << '\n';
  out << s.str();
}

}  // namespace infoplane
