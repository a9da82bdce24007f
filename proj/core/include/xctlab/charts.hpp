#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "xctlab/fiber_table.hpp"
#include "xctlab/volume_io.hpp"

namespace xct {

/// Half-open bins over [lo, hi). Without a range the data span
/// [min, nextafter(max)) is used, so every finite value lands in a bin.
struct HistogramSpec {
  int bin_count = 16;
  std::optional<double> lo;
  std::optional<double> hi;
};

struct Histogram {
  std::vector<double> edges;  ///< bin_count + 1, edges.back() == hi
  std::vector<std::int64_t> counts;
  std::int64_t underflow = 0;   ///< v < lo
  std::int64_t overflow = 0;    ///< v >= hi
  std::int64_t non_finite = 0;  ///< NaN and infinities
  /// Sum of counts plus all tallies; always equals the input length.
  [[nodiscard]] std::int64_t total() const;
};

/// Bin b holds edges[b] <= v < edges[b + 1]. Throws BadRange for
/// bin_count < 1, a half-specified range or lo >= hi, and EmptyInput when an
/// automatic range meets no finite values.
Histogram histogram(std::span<const double> values, const HistogramSpec& spec);

struct Series3D {
  std::array<std::string, 3> labels;
  std::array<std::string, 3> units;
  std::vector<std::array<double, 3>> points;
  std::vector<std::int64_t> ids;  ///< fiber id per point
  std::int64_t dropped = 0;       ///< records with any non-finite coordinate
};

/// One point per record whose three values are finite. Throws UnknownColumn.
Series3D scatter3(const FiberTable& table, std::string_view ax, std::string_view ay, std::string_view az);

inline constexpr int kDensitySamples = 256;

struct DensityCurve {
  double bandwidth = 0.0;
  std::vector<double> x;
  std::vector<double> density;
  std::int64_t dropped = 0;  ///< non-finite inputs
};

/// Silverman's rule: 0.9 * min(sd, IQR / 1.34) * n^(-1/5). When one of the two
/// spreads is zero the other is used; when both are, h = 0.1 * |mean|, or 1
/// for an all-zero sample.
double silverman_bandwidth(std::span<const double> values);

/// Gaussian KDE sampled at kDensitySamples points over [min - 3h, max + 3h].
/// A missing bandwidth selects Silverman's rule. Throws TooFewValues for
/// fewer than 2 finite values and InvalidArgument for a bandwidth <= 0.
DensityCurve density(std::span<const double> values, std::optional<double> bandwidth = std::nullopt);

enum class Aggregate { Count, Mean, Sum };
Aggregate parse_aggregate(std::string_view name);
std::string_view to_string(Aggregate agg);

struct Bar {
  double lo = 0.0;
  double hi = 0.0;
  std::string label;
  std::int64_t count = 0;
  double value = 0.0;  ///< NaN for the mean of an empty class
};

struct BarChart {
  std::string group_attr;
  std::string value_attr;
  Aggregate aggregate = Aggregate::Count;
  std::vector<Bar> bars;
  std::int64_t dropped = 0;  ///< records with a non-finite group or value
};

inline constexpr int kDefaultBarClasses = 5;

/// Groups records into equal-width classes of group_attr over
/// [min, nextafter(max)), ordered by lower bound. Throws UnknownColumn,
/// NonNumeric when mean/sum is asked of the id column, and BadRange for
/// classes < 1.
BarChart bar_aggregate(const FiberTable& table, std::string_view group_attr, std::string_view value_attr,
                       Aggregate agg, int classes = kDefaultBarClasses);

/// Histogram of raw voxel values. Throws BadRange for bins < 1.
Histogram intensity_histogram(const Volume& volume, int bins, std::optional<double> lo = std::nullopt,
                              std::optional<double> hi = std::nullopt);

nlohmann::json to_json(const Histogram& h);
nlohmann::json to_json(const Series3D& s);
nlohmann::json to_json(const DensityCurve& d);
nlohmann::json to_json(const BarChart& b);

}  // namespace xct
