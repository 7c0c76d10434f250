#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>

#include <fmt/format.h>

#include "invdse/csv.hpp"
#include "invdse/harness.hpp"

namespace invdse {

namespace {

struct Axis {
  const char* name;
  const char* label;
  double (*get)(const QoRVector&);
};

const std::array<Axis, 3> kAxes{{
    {"perf", "performance (MAC/ps)", [](const QoRVector& q) { return q.performance; }},
    {"power", "power (W)", [](const QoRVector& q) { return q.power; }},
    {"area", "area (um^2)", [](const QoRVector& q) { return q.area; }},
}};

const char* color_of(const std::string& method) {
  if (method == "offline") return "#9e9e9e";
  if (method == "inverse") return "#1f77b4";
  if (method == "mobo") return "#ff7f0e";
  return "#2ca02c";
}

void scatter_svg(const std::filesystem::path& path, const Axis& ax, const Axis& ay,
                 const std::vector<PlotSeries>& series) {
  constexpr double W = 640, H = 480, L = 80, R = 20, T = 30, B = 60;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (const auto& p : s.points) {
      x0 = std::min(x0, ax.get(p.qor));
      x1 = std::max(x1, ax.get(p.qor));
      y0 = std::min(y0, ay.get(p.qor));
      y1 = std::max(y1, ay.get(p.qor));
    }
  }
  if (!(x1 > x0)) x1 = x0 + 1.0;
  if (!(y1 > y0)) y1 = y0 + 1.0;
  auto px = [&](double v) { return L + (v - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double v) { return H - B - (v - y0) / (y1 - y0) * (H - T - B); };

  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << fmt::format(R"(<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="12">)",
                     W, H)
      << '\n';
  out << fmt::format(R"(<rect x="0" y="0" width="{}" height="{}" fill="white"/>)", W, H) << '\n';
  out << fmt::format(R"(<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>)", L, T, W - L - R,
                     H - T - B)
      << '\n';
  for (int i = 0; i <= 4; ++i) {
    double fx = x0 + (x1 - x0) * i / 4.0, fy = y0 + (y1 - y0) * i / 4.0;
    out << fmt::format(R"(<text x="{:.1f}" y="{}" text-anchor="middle">{:.4g}</text>)", px(fx), H - B + 16, fx) << '\n';
    out << fmt::format(R"(<text x="{}" y="{:.1f}" text-anchor="end">{:.4g}</text>)", L - 6, py(fy) + 4, fy) << '\n';
  }
  out << fmt::format(R"(<text x="{}" y="{}" text-anchor="middle">{}</text>)", (L + W - R) / 2, H - 20, ax.label) << '\n';
  out << fmt::format(R"svg(<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>)svg",
                     (T + H - B) / 2, (T + H - B) / 2, ay.label)
      << '\n';
  double legend_y = T + 14;
  for (const auto& s : series) {
    const char* c = color_of(s.method);
    for (std::size_t i = 0; i < s.points.size(); ++i) {
      bool f = s.on_front[i];
      out << fmt::format(R"(<circle cx="{:.2f}" cy="{:.2f}" r="{}" fill="{}" fill-opacity="{}"{}/>)",
                         px(ax.get(s.points[i].qor)), py(ay.get(s.points[i].qor)), f ? 4 : 2, c, f ? 1.0 : 0.5,
                         f ? R"( stroke="black" stroke-width="0.5")" : "")
          << '\n';
    }
    out << fmt::format(R"(<circle cx="{}" cy="{}" r="4" fill="{}"/><text x="{}" y="{}">{}</text>)", W - R - 90,
                       legend_y - 4, c, W - R - 80, legend_y, s.method)
        << '\n';
    legend_y += 16;
  }
  out << "</svg>\n";
}

}  // namespace

void write_pareto_plots(const std::filesystem::path& dir, const std::vector<PlotSeries>& series) {
  for (const auto& s : series) {
    if (s.points.size() != s.on_front.size()) throw Error("plot series: front flags do not match points");
  }
  const std::array<std::pair<int, int>, 3> pairs{{{0, 1}, {0, 2}, {1, 2}}};
  for (auto [a, b] : pairs) {
    const auto& ax = kAxes[static_cast<std::size_t>(a)];
    const auto& ay = kAxes[static_cast<std::size_t>(b)];
    const std::string stem = fmt::format("pareto_{}_{}", ax.name, ay.name);
    std::ofstream out(dir / (stem + ".csv"));
    if (!out) throw Error("cannot write plot data in '" + dir.string() + "'");
    out << "method,iteration," << ax.name << ',' << ay.name << ",on_front\n";
    for (const auto& s : series) {
      for (std::size_t i = 0; i < s.points.size(); ++i) {
        out << s.method << ',' << s.points[i].iteration << ',' << csv::format_double(ax.get(s.points[i].qor)) << ','
            << csv::format_double(ay.get(s.points[i].qor)) << ',' << int(s.on_front[i]) << '\n';
      }
    }
    scatter_svg(dir / (stem + ".svg"), ax, ay, series);
  }
}

}  // namespace invdse
