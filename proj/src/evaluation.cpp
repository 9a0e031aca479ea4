#include "labeldiff/evaluation.hpp"

#include <algorithm>
#include <cstdio>

#include "labeldiff/errors.hpp"

namespace labeldiff {

std::string to_string(ThingStuff v) { return v == ThingStuff::kThing ? "thing" : "stuff"; }
std::string to_string(Number v) { return v == Number::kSingular ? "singular" : "plural"; }

ThingStuff parse_thing_stuff(const std::string& text) {
  if (text == "thing") return ThingStuff::kThing;
  if (text == "stuff") return ThingStuff::kStuff;
  throw DataError("unknown thing/stuff tag '" + text + "'");
}

Number parse_number(const std::string& text) {
  if (text == "singular") return Number::kSingular;
  if (text == "plural") return Number::kPlural;
  throw DataError("unknown number tag '" + text + "'");
}

namespace evaluation {

double iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.height != b.height || a.width != b.width) {
    throw ShapeError("iou: " + std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                     std::to_string(b.height) + "x" + std::to_string(b.width));
  }
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    inter += a.bits[i] & b.bits[i];
    uni += a.bits[i] | b.bits[i];
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

ThresholdGrid ThresholdGrid::uniform(int divisions) {
  if (divisions < 2) throw ParameterError("threshold grid needs at least 2 divisions");
  ThresholdGrid grid;
  grid.values.reserve(divisions - 1);
  for (int k = 1; k < divisions; ++k) grid.values.push_back(static_cast<double>(k) / divisions);
  return grid;
}

void ThresholdGrid::validate() const {
  if (values.empty()) throw ParameterError("threshold grid is empty");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(values[i] > 0.0 && values[i] < 1.0)) throw ParameterError("threshold outside (0, 1)");
    if (i > 0 && !(values[i] > values[i - 1])) throw ParameterError("thresholds not strictly increasing");
  }
}

namespace {

void require_records(std::span<const EvalRecord> records) {
  if (records.empty()) throw DataError("average recall over an empty record set");
}

}  // namespace

double average_recall(std::span<const EvalRecord> records, const ThresholdGrid& grid) {
  require_records(records);
  grid.validate();
  double total = 0.0;
  for (double tau : grid.values) {
    std::size_t recalled = 0;
    for (const auto& r : records) recalled += r.iou >= tau ? 1 : 0;
    total += static_cast<double>(recalled) / static_cast<double>(records.size());
  }
  return total / static_cast<double>(grid.values.size());
}

double average_recall_exact(std::span<const EvalRecord> records, const ThresholdGrid& grid) {
  require_records(records);
  grid.validate();
  std::vector<double> ious;
  ious.reserve(records.size());
  for (const auto& r : records) ious.push_back(r.iou);
  std::sort(ious.begin(), ious.end());
  // Sorted IoUs let the threshold cursor advance monotonically.
  std::size_t covered = 0;
  std::size_t total = 0;
  for (double v : ious) {
    while (covered < grid.values.size() && grid.values[covered] <= v) ++covered;
    total += covered;
  }
  return static_cast<double>(total) /
         (static_cast<double>(grid.values.size()) * static_cast<double>(records.size()));
}

ArReport subcategory_report(std::span<const EvalRecord> records, const ThresholdGrid& grid) {
  require_records(records);
  std::vector<EvalRecord> things, stuff, singulars, plurals;
  for (const auto& r : records) {
    if (!r.thing_stuff || !r.number) throw DataError("record '" + r.phrase_id + "' is untagged");
    (*r.thing_stuff == ThingStuff::kThing ? things : stuff).push_back(r);
    (*r.number == Number::kSingular ? singulars : plurals).push_back(r);
  }
  auto subset = [&](const std::vector<EvalRecord>& s) -> std::optional<double> {
    if (s.empty()) return std::nullopt;
    return average_recall_exact(s, grid);
  };
  ArReport report;
  report.overall = average_recall_exact(records, grid);
  report.things = subset(things);
  report.stuff = subset(stuff);
  report.singulars = subset(singulars);
  report.plurals = subset(plurals);
  return report;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

}  // namespace

std::string per_phrase_csv(std::span<const EvalRecord> records) {
  std::string out = "phrase_id,iou,thing_stuff,number\n";
  for (const auto& r : records) {
    out += r.phrase_id + "," + fmt(r.iou) + "," + (r.thing_stuff ? to_string(*r.thing_stuff) : "") + "," +
           (r.number ? to_string(*r.number) : "") + "\n";
  }
  return out;
}

std::string summary_csv_header() { return "overall,things,stuff,singulars,plurals\n"; }

std::string summary_csv_row(const ArReport& report) {
  return fmt(report.overall) + "," + fmt(report.things) + "," + fmt(report.stuff) + "," +
         fmt(report.singulars) + "," + fmt(report.plurals) + "\n";
}

}  // namespace evaluation
}  // namespace labeldiff
