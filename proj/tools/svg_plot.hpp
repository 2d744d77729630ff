#pragma once

// Minimal SVG line charts: stacked panels sharing the step axis, raw series
// drawn faint with its EMA on top, optional vertical markers.

#include <algorithm>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "lorarl/dynamics.hpp"

namespace lorarl::plot {

struct Marker {
  long step;
  std::string label;
  std::string color;
};

struct Panel {
  MetricSeries raw;
  MetricSeries smooth;
};

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string render_svg(const std::vector<Panel>& panels, const std::vector<Marker>& markers) {
  const double width = 720, panel_h = 180, left = 70, right = 20, top = 30, gap = 40;
  const double height = top + panels.size() * (panel_h + gap);
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(width) + "\" height=\"" +
                    fmt(height) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  for (size_t p = 0; p < panels.size(); ++p) {
    const auto& raw = panels[p].raw;
    if (raw.values.empty()) continue;
    const double y0 = top + p * (panel_h + gap);
    const double x_lo = static_cast<double>(raw.steps.front());
    const double x_hi = std::max(x_lo + 1.0, static_cast<double>(raw.steps.back()));
    double v_lo = *std::min_element(raw.values.begin(), raw.values.end());
    double v_hi = *std::max_element(raw.values.begin(), raw.values.end());
    if (v_hi - v_lo < 1e-12) {
      v_lo -= 0.5;
      v_hi += 0.5;
    }
    auto sx = [&](double s) { return left + (s - x_lo) / (x_hi - x_lo) * (width - left - right); };
    auto sy = [&](double v) { return y0 + panel_h - (v - v_lo) / (v_hi - v_lo) * panel_h; };

    svg += "<rect x=\"" + fmt(left) + "\" y=\"" + fmt(y0) + "\" width=\"" + fmt(width - left - right) +
           "\" height=\"" + fmt(panel_h) + "\" fill=\"none\" stroke=\"#999\"/>\n";
    svg += "<text x=\"" + fmt(left) + "\" y=\"" + fmt(y0 - 8) + "\">" + raw.name + "</text>\n";
    svg += "<text x=\"4\" y=\"" + fmt(y0 + 10) + "\">" + fmt(v_hi) + "</text>\n";
    svg += "<text x=\"4\" y=\"" + fmt(y0 + panel_h) + "\">" + fmt(v_lo) + "</text>\n";

    auto polyline = [&](const MetricSeries& s, const char* color, const char* w) {
      std::string pts;
      for (size_t i = 0; i < s.values.size(); ++i) {
        pts += fmt(sx(static_cast<double>(s.steps[i]))) + "," + fmt(sy(s.values[i])) + " ";
      }
      svg += std::string("<polyline fill=\"none\" stroke=\"") + color + "\" stroke-width=\"" + w +
             "\" points=\"" + pts + "\"/>\n";
    };
    polyline(raw, "#c6dbef", "1");
    polyline(panels[p].smooth, "#08519c", "1.5");

    for (const auto& m : markers) {
      const double x = sx(static_cast<double>(m.step));
      svg += "<line x1=\"" + fmt(x) + "\" y1=\"" + fmt(y0) + "\" x2=\"" + fmt(x) + "\" y2=\"" +
             fmt(y0 + panel_h) + "\" stroke=\"" + m.color + "\" stroke-dasharray=\"5,4\"/>\n";
    }
    svg += "<text x=\"" + fmt(width - right) + "\" y=\"" + fmt(y0 + panel_h + 14) +
           "\" text-anchor=\"end\">step " + std::to_string(raw.steps.back()) + "</text>\n";
  }
  double lx = left;
  for (const auto& m : markers) {
    svg += "<text x=\"" + fmt(lx) + "\" y=\"" + fmt(height - 8) + "\" fill=\"" + m.color + "\">" + m.label +
           " (" + std::to_string(m.step) + ")</text>\n";
    lx += 200;
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace lorarl::plot
