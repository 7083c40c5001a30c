#include "fairmix/simplex_svg.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace fairmix {

PlotMetric parse_plot_metric(std::string_view text) {
  std::string t(text);
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "mean" || t == "acc_mean") return PlotMetric::Mean;
  if (t == "var" || t == "variance" || t == "acc_var") return PlotMetric::Variance;
  if (t.rfind("acc_", 0) == 0) t = t.substr(4);
  switch (parse_race(t)) {
    case Race::African: return PlotMetric::African;
    case Race::Asian: return PlotMetric::Asian;
    case Race::Caucasian: return PlotMetric::Caucasian;
    case Race::Indian: return PlotMetric::Indian;
  }
  throw std::invalid_argument("unknown plot metric: " + std::string(text));
}

std::string plot_metric_title(PlotMetric m) {
  switch (m) {
    case PlotMetric::African: return "African accuracy";
    case PlotMetric::Asian: return "Asian accuracy";
    case PlotMetric::Caucasian: return "Caucasian accuracy";
    case PlotMetric::Indian: return "Indian accuracy";
    case PlotMetric::Mean: return "Mean accuracy";
    case PlotMetric::Variance: return "Accuracy variance";
  }
  return "";
}

double plot_metric_value(const ResultRow& row, PlotMetric m) {
  switch (m) {
    case PlotMetric::Mean: return row.mean;
    case PlotMetric::Variance: return row.variance;
    default: return row.accuracy[static_cast<std::size_t>(m)];
  }
}

namespace {

// Perceptually ordered ramp (viridis control points).
constexpr std::array<std::array<double, 3>, 5> kRamp{{{68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98},
                                                      {253, 231, 37}}};

std::string colour(double t) {
  t = std::clamp(t, 0.0, 1.0);
  const double pos = t * (kRamp.size() - 1);
  const auto i = std::min(static_cast<std::size_t>(pos), kRamp.size() - 2);
  const double f = pos - static_cast<double>(i);
  std::array<int, 3> c{};
  for (std::size_t k = 0; k < 3; ++k) {
    c[k] = static_cast<int>(std::lround(kRamp[i][k] + f * (kRamp[i + 1][k] - kRamp[i][k])));
  }
  return fmt::format("#{:02x}{:02x}{:02x}", c[0], c[1], c[2]);
}

std::string escape_xml(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

constexpr double kScale = 130.0;   // px per net unit
constexpr double kPanelW = 2 * kScale + 40;
constexpr double kPanelH = 1.7320508075688772 * kScale + 110;
constexpr double kMarker = 4.0;

}  // namespace

std::string emit_simplex_svg(const ResultsTable& table, const std::string& head, const SvgOptions& opts) {
  const auto points = enumerate_simplex_points();
  std::vector<const ResultRow*> rows;
  const auto agg = std::any_of(table.rows.begin(), table.rows.end(),
                               [&](const ResultRow& r) { return r.head == head && r.is_aggregate(); });
  std::vector<const ResultRow*> by_point(points.size(), nullptr);
  for (const auto& r : table.rows) {
    if (r.head != head || r.is_aggregate() != agg || !r.mix) continue;
    const auto it = std::find(points.begin(), points.end(), *r.mix);
    if (it == points.end()) continue;
    auto& slot = by_point[static_cast<std::size_t>(it - points.begin())];
    if (slot) throw std::invalid_argument("sweep table has several rows for mix " + r.mix->to_string());
    slot = &r;
  }
  const auto missing = std::count(by_point.begin(), by_point.end(), nullptr);
  if (missing) {
    throw std::invalid_argument(fmt::format("incomplete sweep for head {}: {} of {} mixes missing", head, missing,
                                            points.size()));
  }

  std::vector<PlotMetric> panels;
  if (opts.panel) {
    panels.push_back(*opts.panel);
  } else {
    panels = {PlotMetric::African, PlotMetric::Asian, PlotMetric::Caucasian,
              PlotMetric::Indian,  PlotMetric::Mean,  PlotMetric::Variance};
  }
  const auto layout = net_layout(points);
  const int cols = panels.size() == 1 ? 1 : 3;
  const int nrows = static_cast<int>((panels.size() + cols - 1) / cols);
  const double top = 36.0;
  const double width = cols * kPanelW;
  const double height = top + nrows * kPanelH;

  std::string svg;
  svg += fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0f}\" height=\"{:.0f}\" viewBox=\"0 0 {:.0f} {:.0f}\" "
      "font-family=\"sans-serif\">\n",
      width, height, width, height);
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  const std::string title = opts.title.empty() ? "Race distribution sweep: " + head : opts.title;
  svg += fmt::format("<text x=\"{:.1f}\" y=\"22\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n", width / 2,
                     escape_xml(title));

  for (std::size_t p = 0; p < panels.size(); ++p) {
    const PlotMetric metric = panels[p];
    const double ox = static_cast<double>(p % cols) * kPanelW + 20;
    const double oy = top + static_cast<double>(p / cols) * kPanelH + 24;
    const double base_y = oy + 1.7320508075688772 * kScale;  // net y=0 maps here
    auto sx = [&](double x) { return ox + x * kScale; };
    auto sy = [&](double y) { return base_y - y * kScale; };

    double lo = plot_metric_value(*by_point[0], metric), hi = lo;
    for (const auto* r : by_point) {
      const double v = plot_metric_value(*r, metric);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    const double span = hi > lo ? hi - lo : 1.0;

    svg += fmt::format("<g class=\"panel\" data-metric=\"{}\">\n", plot_metric_title(metric));
    svg += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" font-size=\"13\" text-anchor=\"middle\">{}</text>\n",
                       ox + kScale, oy - 8, plot_metric_title(metric));
    // Net outline: big triangle and the central face.
    svg += fmt::format(
        "<polygon points=\"{:.2f},{:.2f} {:.2f},{:.2f} {:.2f},{:.2f}\" fill=\"none\" stroke=\"#999\" "
        "stroke-width=\"1\"/>\n",
        sx(0), sy(0), sx(2), sy(0), sx(1), sy(1.7320508075688772));
    svg += fmt::format(
        "<polygon points=\"{:.2f},{:.2f} {:.2f},{:.2f} {:.2f},{:.2f}\" fill=\"none\" stroke=\"#999\" "
        "stroke-width=\"1\"/>\n",
        sx(0.5), sy(0.8660254037844386), sx(1.5), sy(0.8660254037844386), sx(1), sy(0));
    for (const auto& inst : layout) {
      const auto* r = by_point[inst.point_index];
      const double v = plot_metric_value(*r, metric);
      svg += fmt::format(
          "<circle class=\"marker\" cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"{:.1f}\" fill=\"{}\" data-mix=\"{}\" "
          "data-value=\"{:.6f}\"/>\n",
          sx(inst.position.x), sy(inst.position.y), kMarker, colour((v - lo) / span), r->mix->to_string(), v);
    }
    // Legend: 10-step ramp with end labels.
    const double ly = base_y + 22;
    const double lw = 2 * kScale;
    for (int s = 0; s < 10; ++s) {
      svg += fmt::format("<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"10\" fill=\"{}\"/>\n",
                         ox + s * lw / 10, ly, lw / 10, colour((s + 0.5) / 10.0));
    }
    svg += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" font-size=\"11\">{:.2f}</text>\n", ox, ly + 24, lo);
    svg += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" font-size=\"11\" text-anchor=\"end\">{:.2f}</text>\n",
                       ox + lw, ly + 24, hi);
    svg += "</g>\n";
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace fairmix
