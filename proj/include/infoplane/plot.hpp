#pragma once

// Deterministic SVG figures: the information plane (marker per layer, color
// per epoch, optional zoom inset) and accuracy-vs-epoch curves.

#include "infoplane/dpi.hpp"
#include "infoplane/mi.hpp"
#include "infoplane/trainer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace infoplane {

struct PlaneFigureSpec {
  Bound bound = Bound::kUpper;
  std::string units = "nats";
  bool inset = false;
  double inset_fraction = 0.2;  // trailing share of epochs shown in the inset
  std::string title;
};

namespace svg {

inline std::string num(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << (std::abs(v) < 0.005 ? 0.0 : v);
  return s.str();
}

inline std::string tick_label(double v, double step) {
  std::ostringstream s;
  const int digits = step >= 1.0 ? 0 : std::min(6, int(std::ceil(-std::log10(step) - 1e-9)));
  s << std::fixed << std::setprecision(digits) << (std::abs(v) < step * 1e-6 ? 0.0 : v);
  return s.str();
}

inline std::string escape(const std::string& in) {
  std::string out;
  for (char ch : in) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

// Viridis, sampled at nine points and linearly interpolated.
inline std::string viridis(double t) {
  static constexpr std::array<std::array<int, 3>, 9> stops = {{{68, 1, 84},
                                                               {71, 44, 122},
                                                               {59, 81, 139},
                                                               {44, 113, 142},
                                                               {33, 144, 141},
                                                               {39, 173, 129},
                                                               {92, 200, 99},
                                                               {170, 220, 50},
                                                               {253, 231, 37}}};
  t = std::clamp(t, 0.0, 1.0) * double(stops.size() - 1);
  const auto lo = std::min<std::size_t>(std::size_t(t), stops.size() - 2);
  const double f = t - double(lo);
  std::ostringstream s;
  s << '#' << std::hex << std::setfill('0');
  for (int c = 0; c < 3; ++c)
    s << std::setw(2) << int(std::lround(stops[lo][c] + f * (stops[lo + 1][c] - stops[lo][c])));
  return s.str();
}

struct Range {
  double lo = 0.0, hi = 1.0;
};

// Rounded axis range and tick step covering [lo, hi].
inline std::pair<Range, double> nice_axis(double lo, double hi) {
  if (!(hi > lo)) {
    const double pad = std::max(1e-3, std::abs(lo) * 0.05);
    lo -= pad;
    hi += pad;
  }
  const double raw = (hi - lo) / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0})
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  return {{std::floor(lo / step) * step, std::ceil(hi / step) * step}, step};
}

struct Viewport {
  double x0, y0, w, h;  // pixel box
  Range xr, yr;
  double px(double x) const { return x0 + (x - xr.lo) / (xr.hi - xr.lo) * w; }
  double py(double y) const { return y0 + h - (y - yr.lo) / (yr.hi - yr.lo) * h; }
};

inline std::string marker(std::int64_t layer, double cx, double cy, double r, const std::string& fill,
                          const std::string& css_class, std::uint32_t epoch) {
  std::ostringstream s;
  const std::string attrs = " class=\"" + css_class + "\" data-layer=\"" + std::to_string(layer) +
                            "\" data-epoch=\"" + std::to_string(epoch) + "\" fill=\"" + fill +
                            "\" stroke=\"#222222\" stroke-width=\"0.6\"";
  switch (std::min<std::int64_t>(layer, 4)) {
    case 1:
      s << "<circle cx=\"" << num(cx) << "\" cy=\"" << num(cy) << "\" r=\"" << num(r) << "\"" << attrs << "/>";
      break;
    case 2:
      s << "<polygon points=\"" << num(cx) << ',' << num(cy - r * 1.2) << ' ' << num(cx - r * 1.1) << ','
        << num(cy + r * 0.8) << ' ' << num(cx + r * 1.1) << ',' << num(cy + r * 0.8) << "\"" << attrs << "/>";
      break;
    case 3:
      s << "<rect x=\"" << num(cx - r) << "\" y=\"" << num(cy - r) << "\" width=\"" << num(2 * r) << "\" height=\""
        << num(2 * r) << "\"" << attrs << "/>";
      break;
    default:
      s << "<polygon points=\"" << num(cx) << ',' << num(cy - r * 1.3) << ' ' << num(cx + r * 1.3) << ',' << num(cy)
        << ' ' << num(cx) << ',' << num(cy + r * 1.3) << ' ' << num(cx - r * 1.3) << ',' << num(cy) << "\"" << attrs
        << "/>";
  }
  return s.str();
}

inline void axes(std::ostringstream& s, const Viewport& v, double xstep, double ystep, bool labels, double font) {
  s << "<rect x=\"" << num(v.x0) << "\" y=\"" << num(v.y0) << "\" width=\"" << num(v.w) << "\" height=\"" << num(v.h)
    << "\" fill=\"white\" stroke=\"#000000\" stroke-width=\"1\"/>\n";
  if (!labels) return;
  for (double x = v.xr.lo; x <= v.xr.hi + xstep * 1e-9; x += xstep) {
    const double px = v.px(x);
    s << "<line x1=\"" << num(px) << "\" y1=\"" << num(v.y0 + v.h) << "\" x2=\"" << num(px) << "\" y2=\""
      << num(v.y0 + v.h + 4) << "\" stroke=\"#000000\"/>";
    s << "<text x=\"" << num(px) << "\" y=\"" << num(v.y0 + v.h + 4 + font) << "\" font-size=\"" << num(font)
      << "\" text-anchor=\"middle\">" << tick_label(x, xstep) << "</text>\n";
  }
  for (double y = v.yr.lo; y <= v.yr.hi + ystep * 1e-9; y += ystep) {
    const double py = v.py(y);
    s << "<line x1=\"" << num(v.x0 - 4) << "\" y1=\"" << num(py) << "\" x2=\"" << num(v.x0) << "\" y2=\"" << num(py)
      << "\" stroke=\"#000000\"/>";
    s << "<text x=\"" << num(v.x0 - 6) << "\" y=\"" << num(py + font * 0.35) << "\" font-size=\"" << num(font)
      << "\" text-anchor=\"end\">" << tick_label(y, ystep) << "</text>\n";
  }
}

}  // namespace svg

// Epochs whose points appear in the inset: the trailing ceil(fraction * E)
// distinct epochs.
inline std::vector<std::uint32_t> inset_epochs(const std::vector<MiEstimate>& plane, double fraction) {
  std::set<std::uint32_t> all;
  for (const auto& e : plane) all.insert(e.epoch);
  const auto keep = std::max<std::size_t>(1, std::size_t(std::ceil(fraction * double(all.size()) - 1e-9)));
  std::vector<std::uint32_t> epochs(all.begin(), all.end());
  return {epochs.end() - std::ptrdiff_t(std::min(keep, epochs.size())), epochs.end()};
}

inline std::string render_plane_svg(const std::vector<MiEstimate>& plane, const PlaneFigureSpec& spec) {
  if (plane.empty()) throw std::invalid_argument("cannot plot an empty plane");
  const double width = 720, height = 540;
  auto xval = [&](const MiEstimate& e) { return plane_value(e, PlaneAxis::kXZ, spec.bound); };
  auto yval = [&](const MiEstimate& e) { return plane_value(e, PlaneAxis::kZY, spec.bound); };

  double xlo = INFINITY, xhi = -INFINITY, ylo = INFINITY, yhi = -INFINITY;
  std::uint32_t emin = UINT32_MAX, emax = 0;
  std::int64_t max_layer = 0;
  for (const auto& e : plane) {
    xlo = std::min(xlo, xval(e)), xhi = std::max(xhi, xval(e));
    ylo = std::min(ylo, yval(e)), yhi = std::max(yhi, yval(e));
    emin = std::min(emin, e.epoch), emax = std::max(emax, e.epoch);
    max_layer = std::max<std::int64_t>(max_layer, e.layer_index + 1);
  }
  auto [xr, xstep] = svg::nice_axis(xlo, xhi);
  auto [yr, ystep] = svg::nice_axis(ylo, yhi);
  const svg::Viewport main{80, 40, 520, 420, xr, yr};
  auto color = [&](std::uint32_t epoch) {
    return svg::viridis(emax == emin ? 1.0 : double(epoch - emin) / double(emax - emin));
  };

  std::ostringstream s;
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" viewBox=\"0 0 " << width << ' ' << height << "\" font-family=\"sans-serif\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!spec.title.empty())
    s << "<text x=\"" << svg::num(main.x0 + main.w / 2) << "\" y=\"24\" font-size=\"15\" text-anchor=\"middle\">"
      << svg::escape(spec.title) << "</text>\n";
  svg::axes(s, main, xstep, ystep, true, 11);
  s << "<text x=\"" << svg::num(main.x0 + main.w / 2) << "\" y=\"" << svg::num(main.y0 + main.h + 36)
    << "\" font-size=\"13\" text-anchor=\"middle\">I(X;Z) [" << svg::escape(spec.units) << "]</text>\n";
  s << "<text x=\"22\" y=\"" << svg::num(main.y0 + main.h / 2) << "\" font-size=\"13\" text-anchor=\"middle\" "
    << "transform=\"rotate(-90 22 " << svg::num(main.y0 + main.h / 2) << ")\">I(Z;Y) ["
    << svg::escape(spec.units) << "]</text>\n";

  std::vector<MiEstimate> ordered = plane;
  std::stable_sort(ordered.begin(), ordered.end(), [](const MiEstimate& a, const MiEstimate& b) {
    return std::tie(a.epoch, a.layer_index) < std::tie(b.epoch, b.layer_index);
  });
  s << "<g class=\"points\">\n";
  for (const auto& e : ordered)
    s << svg::marker(e.layer_index + 1, main.px(xval(e)), main.py(yval(e)), 4.0, color(e.epoch), "marker", e.epoch)
      << '\n';
  s << "</g>\n";

  if (spec.inset) {
    const auto epochs = inset_epochs(plane, spec.inset_fraction);
    const std::set<std::uint32_t> keep(epochs.begin(), epochs.end());
    double ixlo = INFINITY, ixhi = -INFINITY, iylo = INFINITY, iyhi = -INFINITY;
    for (const auto& e : ordered)
      if (keep.count(e.epoch)) {
        ixlo = std::min(ixlo, xval(e)), ixhi = std::max(ixhi, xval(e));
        iylo = std::min(iylo, yval(e)), iyhi = std::max(iyhi, yval(e));
      }
    auto [ixr, ixstep] = svg::nice_axis(ixlo, ixhi);
    auto [iyr, iystep] = svg::nice_axis(iylo, iyhi);
    // Place the inset in the lower-right quadrant of the main viewport.
    const svg::Viewport in{main.x0 + main.w * 0.52, main.y0 + main.h * 0.50, main.w * 0.44, main.h * 0.42, ixr, iyr};
    s << "<g class=\"inset\" data-epoch-min=\"" << epochs.front() << "\" data-epoch-max=\"" << epochs.back()
      << "\">\n";
    svg::axes(s, in, ixstep, iystep, true, 8);
    s << "<text x=\"" << svg::num(in.x0 + 4) << "\" y=\"" << svg::num(in.y0 + 11) << "\" font-size=\"9\">epochs "
      << epochs.front() << "-" << epochs.back() << "</text>\n";
    for (const auto& e : ordered)
      if (keep.count(e.epoch))
        s << svg::marker(e.layer_index + 1, in.px(xval(e)), in.py(yval(e)), 3.0, color(e.epoch), "inset-marker",
                         e.epoch)
          << '\n';
    s << "</g>\n";
  }

  // Legend: layer symbols, then the epoch color bar.
  const double lx = main.x0 + main.w + 24;
  s << "<g class=\"legend\">\n<text x=\"" << svg::num(lx) << "\" y=\"" << svg::num(main.y0 + 8)
    << "\" font-size=\"12\">layer</text>\n";
  for (std::int64_t l = 1; l <= max_layer; ++l) {
    const double y = main.y0 + 8 + 20.0 * double(l);
    s << svg::marker(l, lx + 6, y - 4, 5.0, "#bbbbbb", "legend-marker", 0) << "<text x=\"" << svg::num(lx + 18)
      << "\" y=\"" << svg::num(y) << "\" font-size=\"12\">" << l << "</text>\n";
  }
  const double by = main.y0 + 40 + 20.0 * double(max_layer), bh = 160;
  s << "<text x=\"" << svg::num(lx) << "\" y=\"" << svg::num(by - 8) << "\" font-size=\"12\">epoch</text>\n";
  constexpr int kBands = 32;
  for (int k = 0; k < kBands; ++k)
    s << "<rect x=\"" << svg::num(lx) << "\" y=\"" << svg::num(by + bh * k / kBands) << "\" width=\"14\" height=\""
      << svg::num(bh / kBands + 0.5) << "\" fill=\"" << svg::viridis(double(k) / (kBands - 1)) << "\"/>\n";
  s << "<text x=\"" << svg::num(lx + 20) << "\" y=\"" << svg::num(by + 9) << "\" font-size=\"11\">" << emin
    << "</text>\n<text x=\"" << svg::num(lx + 20) << "\" y=\"" << svg::num(by + bh) << "\" font-size=\"11\">" << emax
    << "</text>\n</g>\n";
  s << "</svg>\n";
  return s.str();
}

struct AccuracySeries {
  std::string name;
  TrainRecord record;
};

// Training (solid) and validation (dashed) accuracy per series.
inline std::string render_accuracy_svg(const std::vector<AccuracySeries>& series) {
  if (series.empty()) throw std::invalid_argument("no accuracy series");
  static constexpr std::array<const char*, 6> palette = {"#1f77b4", "#222222", "#2ca02c",
                                                         "#ff7f0e", "#9467bd", "#8c564b"};
  std::int64_t last = 1;
  for (const auto& sr : series)
    if (!sr.record.epochs.empty()) last = std::max(last, sr.record.epochs.back().epoch);
  auto [xr, xstep] = svg::nice_axis(0.0, double(last));
  const svg::Viewport v{70, 30, 520, 360, xr, {0.0, 1.0}};
  std::ostringstream s;
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"720\" height=\"450\" viewBox=\"0 0 720 450\" "
       "font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg::axes(s, v, xstep, 0.2, true, 11);
  s << "<text x=\"" << svg::num(v.x0 + v.w / 2) << "\" y=\"" << svg::num(v.y0 + v.h + 36)
    << "\" font-size=\"13\" text-anchor=\"middle\">epoch</text>\n";
  s << "<text x=\"22\" y=\"" << svg::num(v.y0 + v.h / 2) << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 22 "
    << svg::num(v.y0 + v.h / 2) << ")\">accuracy</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* col = palette[k % palette.size()];
    for (int which = 0; which < 2; ++which) {
      s << "<polyline class=\"" << (which == 0 ? "train" : "val") << "\" fill=\"none\" stroke=\"" << col
        << "\" stroke-width=\"1.6\"" << (which == 1 ? " stroke-dasharray=\"6 4\"" : "") << " points=\"";
      for (const auto& m : series[k].record.epochs)
        s << svg::num(v.px(double(m.epoch))) << ',' << svg::num(v.py(which == 0 ? m.train_acc : m.val_acc)) << ' ';
      s << "\"/>\n";
    }
    const double ly = v.y0 + 14 + 18.0 * double(k);
    s << "<line x1=\"" << svg::num(v.x0 + v.w + 16) << "\" y1=\"" << svg::num(ly - 4) << "\" x2=\""
      << svg::num(v.x0 + v.w + 40) << "\" y2=\"" << svg::num(ly - 4) << "\" stroke=\"" << col
      << "\" stroke-width=\"2\"/><text x=\"" << svg::num(v.x0 + v.w + 46) << "\" y=\"" << svg::num(ly)
      << "\" font-size=\"12\">" << svg::escape(series[k].name) << "</text>\n";
  }
  const double ly = v.y0 + 24 + 18.0 * double(series.size());
  s << "<text x=\"" << svg::num(v.x0 + v.w + 16) << "\" y=\"" << svg::num(ly) << "\" font-size=\"11\">solid: train</text>\n";
  s << "<text x=\"" << svg::num(v.x0 + v.w + 16) << "\" y=\"" << svg::num(ly + 15) << "\" font-size=\"11\">dashed: val</text>\n";
  s << "</svg>\n";
  return s.str();
}

}  // namespace infoplane
