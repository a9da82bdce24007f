#include "xctlab/charts.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "xctlab/error.hpp"
#include "xctlab/vec.hpp"

namespace xct {

namespace {

std::vector<double> make_edges(double lo, double hi, int n) {
  std::vector<double> edges(static_cast<std::size_t>(n) + 1);
  for (int i = 0; i <= n; ++i) edges[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / n;
  edges.back() = hi;
  return edges;
}

/// Bin index consistent with the stored edges, or -1 / n for out of range.
int bin_of(double v, const std::vector<double>& edges) {
  const int n = static_cast<int>(edges.size()) - 1;
  const double lo = edges.front();
  const double hi = edges.back();
  if (v < lo) return -1;
  if (v >= hi) return n;
  int b = std::clamp(static_cast<int>(std::floor((v - lo) / (hi - lo) * n)), 0, n - 1);
  while (b > 0 && v < edges[static_cast<std::size_t>(b)]) --b;
  while (b < n - 1 && v >= edges[static_cast<std::size_t>(b) + 1]) ++b;
  return b;
}

/// [min, nextafter(max)) over the finite values, or nullopt when there are none.
template <typename T>
std::optional<std::pair<double, double>> finite_span(std::span<const T> values) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const T raw : values) {
    const auto v = static_cast<double>(raw);
    if (!std::isfinite(v)) continue;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (lo > hi) return std::nullopt;
  return std::pair{lo, std::nextafter(hi, std::numeric_limits<double>::infinity())};
}

double quantile_sorted(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto i = static_cast<std::size_t>(std::floor(pos));
  const std::size_t j = std::min(i + 1, sorted.size() - 1);
  return sorted[i] + (pos - static_cast<double>(i)) * (sorted[j] - sorted[i]);
}

std::vector<double> finite_only(std::span<const double> values) {
  std::vector<double> out;
  out.reserve(values.size());
  for (const double v : values)
    if (std::isfinite(v)) out.push_back(v);
  return out;
}

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

std::int64_t Histogram::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::int64_t{0}) + underflow + overflow + non_finite;
}

template <typename T>
Histogram histogram_of(std::span<const T> values, const HistogramSpec& spec) {
  if (spec.bin_count < 1) throw Error(ErrorCode::BadRange, "bin_count must be >= 1");
  if (spec.lo.has_value() != spec.hi.has_value()) {
    throw Error(ErrorCode::BadRange, "range needs both lo and hi");
  }
  double lo = 0.0;
  double hi = 0.0;
  if (spec.lo) {
    lo = *spec.lo;
    hi = *spec.hi;
    if (!(std::isfinite(lo) && std::isfinite(hi) && lo < hi)) {
      throw Error(ErrorCode::BadRange, "range requires finite lo < hi");
    }
  } else {
    const auto span = finite_span(values);
    if (!span) throw Error(ErrorCode::EmptyInput, "automatic range needs at least one finite value");
    std::tie(lo, hi) = *span;
  }
  Histogram h;
  h.edges = make_edges(lo, hi, spec.bin_count);
  h.counts.assign(static_cast<std::size_t>(spec.bin_count), 0);
  for (const T raw : values) {
    const auto v = static_cast<double>(raw);
    if (!std::isfinite(v)) {
      ++h.non_finite;
      continue;
    }
    const int b = bin_of(v, h.edges);
    if (b < 0) {
      ++h.underflow;
    } else if (b >= spec.bin_count) {
      ++h.overflow;
    } else {
      ++h.counts[static_cast<std::size_t>(b)];
    }
  }
  return h;
}

Histogram histogram(std::span<const double> values, const HistogramSpec& spec) { return histogram_of(values, spec); }

Series3D scatter3(const FiberTable& table, std::string_view ax, std::string_view ay, std::string_view az) {
  const std::array<std::size_t, 3> cols{require_fiber_column(ax), require_fiber_column(ay), require_fiber_column(az)};
  Series3D s;
  for (std::size_t a = 0; a < 3; ++a) {
    const auto& info = fiber_columns()[cols[a]];
    s.labels[a] = std::string(info.name);
    s.units[a] = std::string(info.unit);
  }
  for (const auto& r : table.records()) {
    const std::array<double, 3> p{field_value(r, cols[0]), field_value(r, cols[1]), field_value(r, cols[2])};
    if (std::all_of(p.begin(), p.end(), [](double v) { return std::isfinite(v); })) {
      s.points.push_back(p);
      s.ids.push_back(r.id);
    } else {
      ++s.dropped;
    }
  }
  return s;
}

double silverman_bandwidth(std::span<const double> values) {
  std::vector<double> v = finite_only(values);
  if (v.size() < 2) throw Error(ErrorCode::TooFewValues, "bandwidth needs at least 2 finite values");
  std::sort(v.begin(), v.end());
  const auto n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (const double x : v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  const double iqr = (quantile_sorted(v, 0.75) - quantile_sorted(v, 0.25)) / 1.34;
  double spread = std::min(sd, iqr);
  if (!(spread > 0.0)) spread = std::max(sd, iqr);
  if (!(spread > 0.0)) return mean != 0.0 ? 0.1 * std::abs(mean) : 1.0;
  return 0.9 * spread * std::pow(n, -0.2);
}

DensityCurve density(std::span<const double> values, std::optional<double> bandwidth) {
  const std::vector<double> v = finite_only(values);
  if (v.size() < 2) throw Error(ErrorCode::TooFewValues, "density needs at least 2 finite values");
  if (bandwidth && !(*bandwidth > 0.0 && std::isfinite(*bandwidth))) {
    throw Error(ErrorCode::InvalidArgument, "bandwidth must be > 0");
  }
  DensityCurve d;
  d.dropped = static_cast<std::int64_t>(values.size() - v.size());
  d.bandwidth = bandwidth ? *bandwidth : silverman_bandwidth(v);
  const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
  const double lo = *mn - 3.0 * d.bandwidth;
  const double hi = *mx + 3.0 * d.bandwidth;
  const double norm = 1.0 / (static_cast<double>(v.size()) * d.bandwidth * std::sqrt(2.0 * kPi));
  d.x.resize(kDensitySamples);
  d.density.resize(kDensitySamples);
  for (int i = 0; i < kDensitySamples; ++i) {
    const double x = lo + (hi - lo) * i / (kDensitySamples - 1);
    double sum = 0.0;
    for (const double s : v) {
      const double u = (x - s) / d.bandwidth;
      sum += std::exp(-0.5 * u * u);
    }
    d.x[static_cast<std::size_t>(i)] = x;
    d.density[static_cast<std::size_t>(i)] = sum * norm;
  }
  return d;
}

Aggregate parse_aggregate(std::string_view name) {
  if (name == "count") return Aggregate::Count;
  if (name == "mean") return Aggregate::Mean;
  if (name == "sum") return Aggregate::Sum;
  throw Error(ErrorCode::InvalidArgument, "aggregate must be count, mean or sum, got '" + std::string(name) + "'");
}

std::string_view to_string(Aggregate agg) {
  switch (agg) {
    case Aggregate::Count: return "count";
    case Aggregate::Mean: return "mean";
    case Aggregate::Sum: return "sum";
  }
  return "count";
}

BarChart bar_aggregate(const FiberTable& table, std::string_view group_attr, std::string_view value_attr,
                       Aggregate agg, int classes) {
  const std::size_t gcol = require_fiber_column(group_attr);
  const std::size_t vcol = require_fiber_column(value_attr);
  if (agg != Aggregate::Count && fiber_columns()[vcol].name == "id") {
    throw Error(ErrorCode::NonNumeric, "'id' is an identifier and cannot be averaged or summed");
  }
  if (classes < 1) throw Error(ErrorCode::BadRange, "classes must be >= 1");
  BarChart chart{std::string(fiber_columns()[gcol].name), std::string(fiber_columns()[vcol].name), agg, {}, 0};

  std::vector<double> groups;
  std::vector<double> vals;
  for (const auto& r : table.records()) {
    const double g = field_value(r, gcol);
    const double v = field_value(r, vcol);
    if (!std::isfinite(g) || (agg != Aggregate::Count && !std::isfinite(v))) {
      ++chart.dropped;
      continue;
    }
    groups.push_back(g);
    vals.push_back(v);
  }
  const auto span = finite_span(std::span<const double>(groups));
  if (!span) return chart;
  const auto edges = make_edges(span->first, span->second, classes);
  std::vector<double> sums(static_cast<std::size_t>(classes), 0.0);
  chart.bars.resize(static_cast<std::size_t>(classes));
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto b = static_cast<std::size_t>(bin_of(groups[i], edges));
    ++chart.bars[b].count;
    sums[b] += vals[i];
  }
  for (std::size_t b = 0; b < chart.bars.size(); ++b) {
    Bar& bar = chart.bars[b];
    bar.lo = edges[b];
    bar.hi = edges[b + 1];
    nlohmann::json lo = bar.lo;
    nlohmann::json hi = bar.hi;
    bar.label = "[" + lo.dump() + ", " + hi.dump() + ")";
    switch (agg) {
      case Aggregate::Count: bar.value = static_cast<double>(bar.count); break;
      case Aggregate::Sum: bar.value = sums[b]; break;
      case Aggregate::Mean:
        bar.value = bar.count > 0 ? sums[b] / static_cast<double>(bar.count) : std::numeric_limits<double>::quiet_NaN();
        break;
    }
  }
  return chart;
}

Histogram intensity_histogram(const Volume& volume, int bins, std::optional<double> lo, std::optional<double> hi) {
  return histogram_of(volume.values(), HistogramSpec{bins, lo, hi});
}

nlohmann::json to_json(const Histogram& h) {
  return {{"edges", h.edges},         {"counts", h.counts},         {"underflow", h.underflow},
          {"overflow", h.overflow},   {"non_finite", h.non_finite}, {"total", h.total()}};
}

nlohmann::json to_json(const Series3D& s) {
  nlohmann::json axes = nlohmann::json::array();
  for (std::size_t a = 0; a < 3; ++a) axes.push_back({{"name", s.labels[a]}, {"unit", s.units[a]}});
  return {{"axes", axes}, {"points", s.points}, {"ids", s.ids}, {"dropped", s.dropped}};
}

nlohmann::json to_json(const DensityCurve& d) {
  return {{"bandwidth", d.bandwidth}, {"x", d.x}, {"density", d.density}, {"dropped", d.dropped}};
}

nlohmann::json to_json(const BarChart& b) {
  nlohmann::json bars = nlohmann::json::array();
  for (const auto& bar : b.bars) {
    bars.push_back({{"label", bar.label},
                    {"lo", bar.lo},
                    {"hi", bar.hi},
                    {"count", bar.count},
                    {"value", number_or_null(bar.value)}});
  }
  return {{"group_attr", b.group_attr},
          {"value_attr", b.value_attr},
          {"aggregate", std::string(to_string(b.aggregate))},
          {"bars", bars},
          {"dropped", b.dropped}};
}

}  // namespace xct
