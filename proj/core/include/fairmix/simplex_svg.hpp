#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "fairmix/experiment.hpp"

namespace fairmix {

enum class PlotMetric { African, Asian, Caucasian, Indian, Mean, Variance };

/// "afr", "asi", "cau", "ind", "mean", "var" (full race names also accepted).
PlotMetric parse_plot_metric(std::string_view text);
std::string plot_metric_title(PlotMetric m);
double plot_metric_value(const ResultRow& row, PlotMetric m);

struct SvgOptions {
  /// One panel, or all six (four races, mean, variance) when unset.
  std::optional<PlotMetric> panel;
  std::string title;
};

/// Renders the flattened-simplex net for one head's sweep: every net
/// position is a <circle class="marker"> coloured by the metric, with a
/// colour legend per panel. Uses the mean-over-trials rows when present,
/// otherwise trial rows (which must then be one per mix). Throws
/// std::invalid_argument when any enumerated mix is missing.
std::string emit_simplex_svg(const ResultsTable& table, const std::string& head, const SvgOptions& opts = {});

}  // namespace fairmix
